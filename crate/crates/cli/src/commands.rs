use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::rand_core::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use fairshare::benchmark::{
    self, bound_dominance_report, db_to_linear, DominanceReport, EnsembleConfig, EnsembleCriterion,
    EnsembleResult, KahanSum, UpperBoundCurve,
};
use fairshare::channel::{self, ChannelMatrix, UserOrder};
use fairshare::tristage::{
    self, CakeCutPoint, DesignOptions, OperatingPoint, SelectOptions, Strategy, TriStageDesign,
};

use crate::config::{ExperimentConfig, OutputFormat};
use crate::error::CliError;
use crate::output::{self, num, power_label, RunDir, SCHEMA_VERSION};

/// Stream of the sampler's random source, kept apart from the channel stream.
const SAMPLER_STREAM: u64 = 1 << 63;

fn design_options(config: &ExperimentConfig) -> DesignOptions {
    DesignOptions {
        grid_size: config.c_grid,
        refine_at_reference: true,
        select: SelectOptions {
            normalize_rate: config.normalize_rate,
        },
    }
}

fn require_multiuser(config: &ExperimentConfig, command: &str) -> Result<(), CliError> {
    if config.users < 2 {
        return Err(CliError::Config(format!(
            "{command} needs at least 2 users; a single user has no rate/fairness tradeoff"
        )));
    }
    Ok(())
}

fn power_header(users: usize) -> Vec<String> {
    (1..=users).map(|k| format!("p_{k}")).collect()
}

fn power_fields(powers: &[f64]) -> Vec<String> {
    powers.iter().map(|&p| num(p)).collect()
}

/// Seeded channel draw shared by `tradeoff` and `sample` (block 0 of the seed).
fn draw_channel(
    config: &ExperimentConfig,
    power_db: f64,
) -> Result<(ChannelMatrix, Vec<f64>), CliError> {
    let ensemble = EnsembleConfig::new(config.users, config.antennas, power_db, 1, config.seed);
    let mut rng = ensemble.block_rng(0);
    let order = UserOrder::identity(config.users);
    for _ in 0..1000 {
        let h =
            channel::sample_channel_with(config.users, config.antennas, ensemble.fading, &mut rng)?;
        let dec = channel::zfdpc_decompose(&h, &order)?;
        if !dec.rank_deficient() {
            let gains = dec.gains().to_vec();
            return Ok((h, gains));
        }
    }
    Err(CliError::Runtime(fairshare::Error::InvalidArgument(
        "no full-rank channel in 1000 draws".into(),
    )))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TradeoffReport {
    pub schema_version: u32,
    pub users: usize,
    pub antennas: usize,
    pub power_db: f64,
    pub budget: f64,
    pub seed: u64,
    pub c_grid: usize,
    pub channel: ChannelMatrix,
    pub gains: Vec<f64>,
    pub sweep: Vec<CakeCutPoint>,
    pub design: TriStageDesign,
}

pub const TRADEOFF_COLUMNS: [&str; 7] = [
    "kind",
    "grid_index",
    "c",
    "weight",
    "sum_rate",
    "fairness_l1",
    "fairness_jain",
];

/// One channel draw: raw sweep, envelope, proportional-fair and selected points.
pub fn tradeoff(config: &ExperimentConfig) -> Result<PathBuf, CliError> {
    require_multiuser(config, "tradeoff")?;
    let power_db = config.single_power("tradeoff")?;
    let budget = db_to_linear(power_db);
    let (h, gains) = draw_channel(config, power_db)?;
    let sweep = tristage::sweep(&gains, budget, config.c_grid)?;
    let design = tristage::design(&gains, budget, design_options(config))?;
    let (k, n) = (config.users, config.antennas);
    let stem = format!(
        "tradeoff_K{k}_N{n}_{}_seed{}",
        power_label(power_db),
        config.seed
    );
    let run = RunDir::create(&config.output_dir, &stem)?;

    let mut rows = Vec::new();
    let blank = String::new;
    for (i, p) in sweep.iter().enumerate() {
        let mut row = vec![
            "sweep".into(),
            i.to_string(),
            num(p.c),
            blank(),
            num(p.sum_rate),
            num(p.fairness),
            num(p.jain),
        ];
        row.extend(power_fields(p.alloc.powers()));
        rows.push(row);
    }
    let curve = &design.curve;
    for v in &curve.hull {
        let p = &curve.grid[v.grid_index];
        let mut row = vec![
            "hull".into(),
            v.grid_index.to_string(),
            num(p.c),
            blank(),
            num(v.sum_rate),
            num(v.fairness),
            num(p.jain),
        ];
        row.extend(power_fields(p.alloc.powers()));
        rows.push(row);
    }
    let pf = &design.reference;
    let pf_jain =
        fairshare::fairness::measure(&channel::rates_from_gains(&gains, pf.alloc.powers()).0)?.jain;
    let mut row = vec![
        "pf".into(),
        blank(),
        blank(),
        blank(),
        num(pf.sum_rate),
        num(pf.fairness),
        num(pf_jain),
    ];
    row.extend(power_fields(pf.alloc.powers()));
    rows.push(row);
    let op = &design.operating_point;
    match &op.strategy {
        Strategy::Fixed(alloc) => {
            let mut row = vec![
                "tri".into(),
                blank(),
                blank(),
                num(1.0),
                num(op.sum_rate),
                num(op.fairness),
                num(pf_jain),
            ];
            row.extend(power_fields(alloc.powers()));
            rows.push(row);
        }
        Strategy::Mixed(mixer) => {
            for atom in &mixer.atoms {
                let p = &curve.grid[atom.grid_index];
                let mut row = vec![
                    "tri_atom".into(),
                    atom.grid_index.to_string(),
                    num(atom.c),
                    num(atom.weight),
                    num(p.sum_rate),
                    num(p.fairness),
                    num(p.jain),
                ];
                row.extend(power_fields(p.alloc.powers()));
                rows.push(row);
            }
            let jain: f64 = mixer
                .atoms
                .iter()
                .map(|a| a.weight * curve.grid[a.grid_index].jain)
                .sum();
            let mut expected = vec![0.0; k];
            for a in &mixer.atoms {
                for (e, p) in expected
                    .iter_mut()
                    .zip(curve.grid[a.grid_index].alloc.powers())
                {
                    *e += a.weight * p;
                }
            }
            let mut row = vec![
                "tri".into(),
                blank(),
                blank(),
                num(1.0),
                num(op.sum_rate),
                num(op.fairness),
                num(jain),
            ];
            row.extend(power_fields(&expected));
            rows.push(row);
        }
    }

    let mut header: Vec<String> = TRADEOFF_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(power_header(k));
    if config.wants(OutputFormat::Csv) {
        let path = run.write_csv(&format!("{stem}.csv"), &header, &rows)?;
        validate_tradeoff_csv(&path, config.c_grid, budget)?;
    }
    if config.wants(OutputFormat::Json) {
        let report = TradeoffReport {
            schema_version: SCHEMA_VERSION,
            users: k,
            antennas: n,
            power_db,
            budget,
            seed: config.seed,
            c_grid: config.c_grid,
            channel: h,
            gains,
            sweep,
            design,
        };
        let path = run.write_json(&format!("{stem}.json"), &report)?;
        validate_tradeoff_json(&path)?;
    }
    run.commit()
}

/// Read-back check of a tradeoff CSV: row counts, envelope concavity, budgets.
pub fn validate_tradeoff_csv(
    path: &std::path::Path,
    c_grid: usize,
    budget: f64,
) -> Result<(), CliError> {
    let (header, rows) = output::read_csv(path)?;
    if header[..TRADEOFF_COLUMNS.len()] != TRADEOFF_COLUMNS {
        return Err(CliError::Validation(format!(
            "{}: unexpected header",
            path.display()
        )));
    }
    let sweep = rows.iter().filter(|r| r[0] == "sweep").count();
    if sweep != c_grid {
        return Err(CliError::Validation(format!(
            "{sweep} sweep rows, expected {c_grid}"
        )));
    }
    for kind in ["pf", "tri"] {
        if rows.iter().filter(|r| r[0] == kind).count() != 1 {
            return Err(CliError::Validation(format!(
                "expected exactly one `{kind}` row"
            )));
        }
    }
    let mut hull = Vec::new();
    for r in &rows {
        let powers = r[TRADEOFF_COLUMNS.len()..]
            .iter()
            .map(|f| output::parse_num(f, "power"))
            .collect::<Result<Vec<_>, _>>()?;
        output::check_budget(&powers, budget, &format!("{} row", r[0]))?;
        if r[0] == "hull" {
            hull.push((
                output::parse_num(&r[4], "sum_rate")?,
                output::parse_num(&r[5], "fairness_l1")?,
            ));
        }
    }
    output::check_concave(&hull, "envelope")
}

fn validate_tradeoff_json(path: &std::path::Path) -> Result<(), CliError> {
    let report: TradeoffReport = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    report.design.curve.validate(1e-9)?;
    for p in &report.sweep {
        output::check_budget(p.alloc.powers(), report.budget, "sweep allocation")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoundPoint {
    pub sum_rate: f64,
    pub fairness: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CompareReport {
    pub schema_version: u32,
    pub users: usize,
    pub antennas: usize,
    pub power_db: f64,
    pub n_blocks: usize,
    pub master_seed: u64,
    pub block_seed: u64,
    pub c_grid: usize,
    pub results: Vec<EnsembleResult>,
    pub bound: Vec<BoundPoint>,
    pub dominance: Option<DominanceReport>,
}

pub const COMPARE_COLUMNS: [&str; 11] = [
    "criterion",
    "avg_sum_rate",
    "avg_fairness_l1",
    "avg_fairness_jain",
    "n_blocks",
    "resampled_blocks",
    "fallback_blocks",
    "power_db",
    "users",
    "antennas",
    "block_seed",
];

/// Seed of the ensemble at `power_db`, derived from the master seed.
pub fn block_seed(master: u64, power_db: f64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(power_db.to_bits());
    rng.next_u64()
}

/// Ensemble averages per criterion and the rate-split bound, one file set per power.
pub fn compare(config: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let (k, n) = (config.users, config.antennas);
    let run_name = format!("compare_K{k}_N{n}_n{}_seed{}", config.n_blocks, config.seed);
    let run = RunDir::create(&config.output_dir, &run_name)?;
    let mut simulated = config.criteria.clone();
    if !simulated.contains(&EnsembleCriterion::TriStage) {
        // The bound is built from the tri-stage envelopes of every block.
        simulated.push(EnsembleCriterion::TriStage);
    }
    for &power_db in &config.power_db {
        let seed = block_seed(config.seed, power_db);
        let mut ensemble = EnsembleConfig::new(k, n, power_db, config.n_blocks, seed);
        ensemble.design = design_options(config);
        log::info!(
            "compare: K={k} N={n} P={power_db} dB, {} blocks",
            config.n_blocks
        );
        let blocks = benchmark::simulate_blocks(&ensemble, &simulated)?;
        let results = config
            .criteria
            .iter()
            .map(|&c| benchmark::summarize(&ensemble, &blocks, c))
            .collect::<Result<Vec<_>, _>>()?;
        let all_tri = benchmark::summarize(&ensemble, &blocks, EnsembleCriterion::TriStage)?;
        let bound = UpperBoundCurve::from_blocks(&blocks, config.bound_points)?;
        let dominance = bound_dominance_report(&all_tri, &bound)?;
        if !dominance.holds(1e-6) {
            log::warn!("bound below tri-stage average by {}", -dominance.gap);
        }
        let bound_points: Vec<BoundPoint> = bound
            .points
            .iter()
            .map(|&(sum_rate, fairness)| BoundPoint { sum_rate, fairness })
            .collect();

        let stem = format!(
            "K{k}_N{n}_{}_n{}_seed{}",
            power_label(power_db),
            config.n_blocks,
            config.seed
        );
        if config.wants(OutputFormat::Csv) {
            let header: Vec<String> = COMPARE_COLUMNS.iter().map(|s| s.to_string()).collect();
            let rows: Vec<Vec<String>> = results
                .iter()
                .map(|r| {
                    vec![
                        r.criterion.name().to_string(),
                        num(r.avg_sum_rate),
                        num(r.avg_fairness_l1),
                        num(r.avg_fairness_jain),
                        r.n_blocks.to_string(),
                        r.resampled_blocks.to_string(),
                        r.fallback_blocks.to_string(),
                        num(r.power_db),
                        r.users.to_string(),
                        r.antennas.to_string(),
                        r.seed.to_string(),
                    ]
                })
                .collect();
            run.write_csv(&format!("compare_{stem}.csv"), &header, &rows)?;
            let bound_rows: Vec<Vec<String>> = bound_points
                .iter()
                .map(|p| vec![num(p.sum_rate), num(p.fairness)])
                .collect();
            let path = run.write_csv(
                &format!("bound_{stem}.csv"),
                &["sum_rate".into(), "fairness_l1".into()],
                &bound_rows,
            )?;
            let (_, read) = output::read_csv(&path)?;
            let pts = read
                .iter()
                .map(|r| {
                    Ok((
                        output::parse_num(&r[0], "sum_rate")?,
                        output::parse_num(&r[1], "fairness")?,
                    ))
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            output::check_concave(&pts, "bound")?;
        }
        if config.wants(OutputFormat::Json) {
            let report = CompareReport {
                schema_version: SCHEMA_VERSION,
                users: k,
                antennas: n,
                power_db,
                n_blocks: config.n_blocks,
                master_seed: config.seed,
                block_seed: seed,
                c_grid: config.c_grid,
                results,
                bound: bound_points,
                dominance: config
                    .criteria
                    .contains(&EnsembleCriterion::TriStage)
                    .then_some(dominance),
            };
            let path = run.write_json(&format!("compare_{stem}.json"), &report)?;
            let back: CompareReport = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
            let pts: Vec<(f64, f64)> = back
                .bound
                .iter()
                .map(|p| (p.sum_rate, p.fairness))
                .collect();
            output::check_concave(&pts, "bound")?;
        }
    }
    run.commit()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SampleReport {
    pub schema_version: u32,
    pub users: usize,
    pub antennas: usize,
    pub power_db: f64,
    pub budget: f64,
    pub seed: u64,
    pub draws: usize,
    pub gains: Vec<f64>,
    pub operating_point: OperatingPoint,
    pub mean_sum_rate: f64,
    pub mean_fairness: f64,
    pub std_sum_rate: f64,
    pub std_fairness: f64,
    /// `|mean - target| / (std / sqrt(n))`; zero when the draws do not vary.
    pub z_sum_rate: f64,
    pub z_fairness: f64,
}

pub const SAMPLE_COLUMNS: [&str; 6] = [
    "draw",
    "c",
    "sum_rate",
    "fairness_l1",
    "running_sum_rate",
    "running_fairness_l1",
];

fn z_score(mean: f64, std: f64, target: f64, n: usize) -> f64 {
    let dev = (mean - target).abs();
    if std == 0.0 {
        if dev <= 1e-12 * target.abs().max(1.0) {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        dev / (std / (n as f64).sqrt())
    }
}

/// Per-draw allocations of the randomized strategy with running averages.
pub fn sample(config: &ExperimentConfig) -> Result<PathBuf, CliError> {
    require_multiuser(config, "sample")?;
    let power_db = config.single_power("sample")?;
    let budget = db_to_linear(power_db);
    let (_, gains) = draw_channel(config, power_db)?;
    let design = tristage::design(&gains, budget, design_options(config))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SAMPLER_STREAM);
    let draws = tristage::sample_draws(
        &design.operating_point,
        &design.curve,
        config.draws,
        &mut rng,
    );

    let (k, n) = (config.users, config.antennas);
    let stem = format!(
        "sample_K{k}_N{n}_{}_seed{}_draws{}",
        power_label(power_db),
        config.seed,
        config.draws
    );
    let run = RunDir::create(&config.output_dir, &stem)?;
    let (mut sr, mut sf) = (KahanSum::default(), KahanSum::default());
    let mut rows = Vec::with_capacity(draws.len());
    for (i, d) in draws.iter().enumerate() {
        output::check_budget(d.alloc.powers(), budget, "draw")?;
        sr.add(d.sum_rate);
        sf.add(d.fairness);
        let m = (i + 1) as f64;
        let mut row = vec![
            (i + 1).to_string(),
            d.c.map(num).unwrap_or_default(),
            num(d.sum_rate),
            num(d.fairness),
            num(sr.total() / m),
            num(sf.total() / m),
        ];
        row.extend(power_fields(d.alloc.powers()));
        rows.push(row);
    }
    let count = draws.len();
    let mean_r = sr.total() / count as f64;
    let mean_f = sf.total() / count as f64;
    let std = |xs: &mut dyn Iterator<Item = f64>, mean: f64| {
        if count < 2 {
            return 0.0;
        }
        (xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
    };
    let std_r = std(&mut draws.iter().map(|d| d.sum_rate), mean_r);
    let std_f = std(&mut draws.iter().map(|d| d.fairness), mean_f);
    let op = design.operating_point;
    let report = SampleReport {
        schema_version: SCHEMA_VERSION,
        users: k,
        antennas: n,
        power_db,
        budget,
        seed: config.seed,
        draws: count,
        gains,
        mean_sum_rate: mean_r,
        mean_fairness: mean_f,
        std_sum_rate: std_r,
        std_fairness: std_f,
        z_sum_rate: z_score(mean_r, std_r, op.sum_rate, count),
        z_fairness: z_score(mean_f, std_f, op.fairness, count),
        operating_point: op,
    };
    if config.wants(OutputFormat::Csv) {
        let mut header: Vec<String> = SAMPLE_COLUMNS.iter().map(|s| s.to_string()).collect();
        header.extend(power_header(k));
        let path = run.write_csv(&format!("{stem}.csv"), &header, &rows)?;
        let (_, back) = output::read_csv(&path)?;
        if back.len() != count {
            return Err(CliError::Validation(format!(
                "{} rows read back, expected {count}",
                back.len()
            )));
        }
        for r in &back {
            let powers = r[SAMPLE_COLUMNS.len()..]
                .iter()
                .map(|f| output::parse_num(f, "power"))
                .collect::<Result<Vec<_>, _>>()?;
            output::check_budget(&powers, budget, "draw")?;
        }
    }
    if config.wants(OutputFormat::Json) {
        let path = run.write_json(&format!("{stem}.json"), &report)?;
        let _: SampleReport = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    }
    run.commit()
}
