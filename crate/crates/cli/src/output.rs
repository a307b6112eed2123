//! Run directories and file writers.
//!
//! Files are written into a hidden staging directory that is renamed into
//! place once every file has been written and read back.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

pub struct RunDir {
    staging: PathBuf,
    target: PathBuf,
}

impl RunDir {
    pub fn create(output_dir: &Path, name: &str) -> Result<Self, CliError> {
        fs::create_dir_all(output_dir)?;
        let staging = output_dir.join(format!(".{name}.partial-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir(&staging)?;
        Ok(Self {
            staging,
            target: output_dir.join(name),
        })
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.staging.join(file)
    }

    pub fn write_csv(
        &self,
        file: &str,
        header: &[String],
        rows: &[Vec<String>],
    ) -> Result<PathBuf, CliError> {
        let path = self.path(file);
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(&path)?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, file: &str, value: &T) -> Result<PathBuf, CliError> {
        let path = self.path(file);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }

    /// Moves the finished run into place, replacing an earlier run of the same name.
    pub fn commit(self) -> Result<PathBuf, CliError> {
        if self.target.exists() {
            fs::remove_dir_all(&self.target)?;
        }
        fs::rename(&self.staging, &self.target)?;
        Ok(self.target.clone())
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        if self.staging.exists() {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

/// Shortest round-trip decimal form.
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// Power label for file names: `0`, `15`, `-3`, `2.5`.
pub fn power_label(p: f64) -> String {
    format!("P{}dB", num(p))
}

pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(str::to_owned).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_owned).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()?;
    Ok((header, rows))
}

pub fn parse_num(field: &str, what: &str) -> Result<f64, CliError> {
    field
        .parse()
        .map_err(|_| CliError::Validation(format!("{what}: `{field}` is not a number")))
}

/// Checks that `(x, y)` points in increasing `x` form a concave polyline.
pub fn check_concave(points: &[(f64, f64)], what: &str) -> Result<(), CliError> {
    if points.windows(2).any(|w| w[1].0 < w[0].0) {
        return Err(CliError::Validation(format!(
            "{what}: rates are not increasing"
        )));
    }
    let slopes: Vec<f64> = points
        .windows(2)
        .filter(|w| w[1].0 > w[0].0)
        .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
        .collect();
    if let Some(i) = slopes
        .windows(2)
        .position(|s| s[1] > s[0] + 1e-9 * (1.0 + s[0].abs()))
    {
        return Err(CliError::Validation(format!(
            "{what}: not concave at point {}",
            i + 1
        )));
    }
    Ok(())
}

/// Checks that every power vector is nonnegative and within `budget`.
pub fn check_budget(powers: &[f64], budget: f64, what: &str) -> Result<(), CliError> {
    let total: f64 = powers.iter().sum();
    if powers.iter().any(|&p| p < 0.0) || total > budget * (1.0 + 1e-9) {
        return Err(CliError::Validation(format!(
            "{what}: powers sum to {total}, budget {budget}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels() {
        assert_eq!(power_label(0.0), "P0dB");
        assert_eq!(power_label(15.0), "P15dB");
        assert_eq!(power_label(-3.0), "P-3dB");
        assert_eq!(power_label(2.5), "P2.5dB");
    }

    #[test]
    fn concavity_check() {
        assert!(check_concave(&[(0.0, 1.0), (1.0, 0.9), (2.0, 0.5)], "x").is_ok());
        assert!(check_concave(&[(0.0, 0.2), (1.0, 0.9), (2.0, 0.9), (3.0, 0.1)], "x").is_ok());
        assert!(check_concave(&[(0.0, 1.0), (1.0, 0.5), (2.0, 0.45)], "x").is_err());
        assert!(check_concave(&[(0.0, 0.5), (1.0, 0.4), (2.0, 0.6)], "x").is_err());
        assert!(check_concave(&[(1.0, 0.5), (0.0, 0.4)], "x").is_err());
    }

    #[test]
    fn csv_uses_lf_and_headers() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(dir.path(), "r").unwrap();
        let p = run
            .write_csv(
                "a.csv",
                &["x".into(), "y".into()],
                &[vec!["1".into(), "a,b".into()]],
            )
            .unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text, "x,y\n1,\"a,b\"\n");
        let final_dir = run.commit().unwrap();
        assert!(final_dir.join("a.csv").exists());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
