//! Experiment configuration: a TOML file merged with command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fairshare::benchmark::EnsembleCriterion;

use crate::error::CliError;

/// A scalar or a list in the config file.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Config file contents; every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    users: Option<usize>,
    antennas: Option<usize>,
    power_db: Option<OneOrMany>,
    criteria: Option<Vec<String>>,
    n_blocks: Option<usize>,
    c_grid: Option<usize>,
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
    output_formats: Option<Vec<OutputFormat>>,
    bound_points: Option<usize>,
    normalize_rate: Option<bool>,
    draws: Option<usize>,
}

/// Values given on the command line. `None` keeps the file or default value.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub users: Option<usize>,
    pub antennas: Option<usize>,
    pub power_db: Option<Vec<f64>>,
    pub criteria: Option<Vec<String>>,
    pub n_blocks: Option<usize>,
    pub c_grid: Option<usize>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub draws: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub users: usize,
    pub antennas: usize,
    pub power_db: Vec<f64>,
    pub criteria: Vec<EnsembleCriterion>,
    pub n_blocks: usize,
    pub c_grid: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub output_formats: Vec<OutputFormat>,
    /// Samples of the rate-split bound polyline.
    pub bound_points: usize,
    pub normalize_rate: bool,
    pub draws: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            users: 2,
            antennas: 2,
            power_db: vec![0.0],
            criteria: EnsembleCriterion::ALL.to_vec(),
            n_blocks: 1000,
            c_grid: 201,
            seed: 0,
            output_dir: PathBuf::from("runs"),
            output_formats: vec![OutputFormat::Csv, OutputFormat::Json],
            bound_points: 101,
            normalize_rate: false,
            draws: 10_000,
        }
    }
}

fn parse_criteria(names: &[String]) -> Result<Vec<EnsembleCriterion>, CliError> {
    let mut out = Vec::new();
    for name in names {
        let c = EnsembleCriterion::parse(name.trim()).ok_or_else(|| {
            CliError::Config(format!(
                "unknown criterion `{name}` (expected one of max_sum, pf, hm, max_min, tristage)"
            ))
        })?;
        if out.contains(&c) {
            return Err(CliError::Config(format!("criterion `{name}` listed twice")));
        }
        out.push(c);
    }
    Ok(out)
}

impl ExperimentConfig {
    /// Reads `path` (if any), applies `overrides` and validates the result.
    pub fn load(path: Option<&Path>, overrides: Overrides) -> Result<Self, CliError> {
        let file = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::Config(format!("cannot read {}: {e}", path.display()))
                })?;
                toml::from_str::<FileConfig>(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };
        let d = Self::default();
        let criteria = match overrides.criteria.or(file.criteria) {
            Some(names) => parse_criteria(&names)?,
            None => d.criteria,
        };
        let power_db = match (overrides.power_db, file.power_db) {
            (Some(v), _) | (None, Some(OneOrMany::Many(v))) => v,
            (None, Some(OneOrMany::One(p))) => vec![p],
            (None, None) => d.power_db,
        };
        let config = Self {
            users: overrides.users.or(file.users).unwrap_or(d.users),
            antennas: overrides.antennas.or(file.antennas).unwrap_or(d.antennas),
            power_db,
            criteria,
            n_blocks: overrides.n_blocks.or(file.n_blocks).unwrap_or(d.n_blocks),
            c_grid: overrides.c_grid.or(file.c_grid).unwrap_or(d.c_grid),
            seed: overrides.seed.or(file.seed).unwrap_or(d.seed),
            output_dir: overrides
                .output_dir
                .or(file.output_dir)
                .unwrap_or(d.output_dir),
            output_formats: file.output_formats.unwrap_or(d.output_formats),
            bound_points: file.bound_points.unwrap_or(d.bound_points),
            normalize_rate: file.normalize_rate.unwrap_or(d.normalize_rate),
            draws: overrides.draws.or(file.draws).unwrap_or(d.draws),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |msg: String| Err(CliError::Config(msg));
        if self.users == 0 {
            return fail("users must be >= 1".into());
        }
        if self.users > self.antennas {
            return fail(format!(
                "users ({}) must not exceed antennas ({})",
                self.users, self.antennas
            ));
        }
        if self.power_db.is_empty() {
            return fail("power_db must list at least one value".into());
        }
        if let Some(p) = self.power_db.iter().find(|p| !p.is_finite()) {
            return fail(format!("power_db value {p} is not finite"));
        }
        if self.criteria.is_empty() {
            return fail("criteria must list at least one criterion".into());
        }
        if self.n_blocks == 0 {
            return fail("n_blocks must be >= 1".into());
        }
        if self.c_grid < 2 {
            return fail(format!("c_grid must be >= 2, got {}", self.c_grid));
        }
        if self.bound_points < 2 {
            return fail(format!(
                "bound_points must be >= 2, got {}",
                self.bound_points
            ));
        }
        if self.output_formats.is_empty() {
            return fail("output_formats must list csv and/or json".into());
        }
        if self.draws == 0 {
            return fail("draws must be >= 1".into());
        }
        Ok(())
    }

    pub fn wants(&self, format: OutputFormat) -> bool {
        self.output_formats.contains(&format)
    }

    /// The single power level of a one-channel command.
    pub fn single_power(&self, command: &str) -> Result<f64, CliError> {
        match self.power_db.as_slice() {
            [p] => Ok(*p),
            _ => Err(CliError::Config(format!(
                "{command} takes exactly one power_db value, got {}",
                self.power_db.len()
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load_str(text: &str, overrides: Overrides) -> Result<ExperimentConfig, CliError> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, text).unwrap();
        ExperimentConfig::load(Some(&path), overrides)
    }

    #[test]
    fn defaults_are_valid() {
        let c = ExperimentConfig::load(None, Overrides::default()).unwrap();
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn flags_override_file() {
        let c = load_str(
            "users = 3\nantennas = 4\npower_db = 5.0\nseed = 9\n",
            Overrides {
                seed: Some(11),
                power_db: Some(vec![0.0, 15.0]),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!((c.users, c.antennas, c.seed), (3, 4, 11));
        assert_eq!(c.power_db, vec![0.0, 15.0]);
    }

    #[test]
    fn scalar_and_list_power() {
        assert_eq!(
            load_str("power_db = 3.0", Overrides::default())
                .unwrap()
                .power_db,
            vec![3.0]
        );
        assert_eq!(
            load_str("power_db = [0.0, 15.0]", Overrides::default())
                .unwrap()
                .power_db,
            vec![0.0, 15.0]
        );
    }

    #[test]
    fn errors_name_the_line() {
        let err = load_str("users = 2\nantenas = 2\n", Overrides::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("antenas"), "{msg}");
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in [
            "users = 3\nantennas = 2",
            "n_blocks = 0",
            "c_grid = 1",
            "criteria = [\"fastest\"]",
            "criteria = [\"pf\", \"pf\"]",
            "power_db = []",
        ] {
            assert!(
                matches!(
                    load_str(text, Overrides::default()),
                    Err(CliError::Config(_))
                ),
                "{text}"
            );
        }
    }
}
