//! Multi-block (ergodic) evaluation and the non-causal rate-split upper bound.
//!
//! Every block draws an independent channel from a stream derived from the
//! master seed and the block index, so results do not depend on scheduling.
//! Blocks run in parallel; averages are reduced in block order with
//! compensated summation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocators::Criterion;
use crate::channel::{self, Fading, UserOrder};
use crate::error::{Error, Result};
use crate::fairness;
use crate::tristage::{self, DesignOptions};

/// Give up on a block after this many rank-deficient redraws.
const MAX_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleCriterion {
    MaxSum,
    ProportionalFair,
    HarmonicMean,
    MaxMin,
    TriStage,
}

impl EnsembleCriterion {
    pub const ALL: [EnsembleCriterion; 5] = [
        EnsembleCriterion::MaxSum,
        EnsembleCriterion::ProportionalFair,
        EnsembleCriterion::HarmonicMean,
        EnsembleCriterion::MaxMin,
        EnsembleCriterion::TriStage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnsembleCriterion::MaxSum => "max_sum",
            EnsembleCriterion::ProportionalFair => "pf",
            EnsembleCriterion::HarmonicMean => "hm",
            EnsembleCriterion::MaxMin => "max_min",
            EnsembleCriterion::TriStage => "tristage",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    fn allocator(self) -> Option<Criterion> {
        match self {
            EnsembleCriterion::MaxSum => Some(Criterion::MaxSum),
            EnsembleCriterion::ProportionalFair => Some(Criterion::ProportionalFair),
            EnsembleCriterion::HarmonicMean => Some(Criterion::HarmonicMean),
            EnsembleCriterion::MaxMin => Some(Criterion::MaxMin),
            EnsembleCriterion::TriStage => None,
        }
    }
}

impl std::fmt::Display for EnsembleCriterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Converts a power in dB to linear units (unit noise variance).
pub fn db_to_linear(power_db: f64) -> f64 {
    10f64.powf(power_db / 10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub users: usize,
    pub antennas: usize,
    pub power_db: f64,
    pub n_blocks: usize,
    pub seed: u64,
    pub fading: Fading,
    pub design: DesignOptions,
}

impl EnsembleConfig {
    pub fn new(users: usize, antennas: usize, power_db: f64, n_blocks: usize, seed: u64) -> Self {
        Self {
            users,
            antennas,
            power_db,
            n_blocks,
            seed,
            fading: Fading::Rayleigh,
            design: DesignOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.users > self.antennas {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= K <= N, got K = {}, N = {}",
                self.users, self.antennas
            )));
        }
        if self.n_blocks == 0 {
            return Err(Error::InvalidArgument("n_blocks must be >= 1".into()));
        }
        if !self.power_db.is_finite() {
            return Err(Error::InvalidArgument("power must be finite".into()));
        }
        if self.design.grid_size < 2 {
            return Err(Error::InvalidArgument(
                "c-grid must have at least 2 points".into(),
            ));
        }
        Ok(())
    }

    /// Random source of block `index`.
    pub fn block_rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        rng
    }
}

/// Sum rate and both fairness measures of one allocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockPoint {
    pub sum_rate: f64,
    pub fairness_l1: f64,
    pub fairness_jain: f64,
}

impl BlockPoint {
    fn from_rates(rates: &[f64]) -> Result<Self> {
        let measures = if rates.len() == 1 {
            fairness::FairnessPair { l1: 1.0, jain: 1.0 }
        } else {
            fairness::measure(rates)?
        };
        Ok(Self {
            sum_rate: rates.iter().sum(),
            fairness_l1: measures.l1,
            fairness_jain: measures.jain,
        })
    }
}

/// A concave piecewise-linear `F_max(R)` given by its vertices in increasing `R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub vertices: Vec<(f64, f64)>,
}

impl Envelope {
    /// Upper concave envelope of arbitrary `(R, F)` points.
    pub fn from_points(points: &[(f64, f64)]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument(
                "envelope needs at least one point".into(),
            ));
        }
        let vertices = tristage::upper_concave_envelope(points)
            .into_iter()
            .map(|i| points[i])
            .collect();
        Ok(Self { vertices })
    }

    pub fn rate_range(&self) -> (f64, f64) {
        (self.vertices[0].0, self.vertices[self.vertices.len() - 1].0)
    }

    /// Linear interpolation on the vertices; `None` outside the rate range.
    pub fn value_at(&self, rate: f64) -> Option<f64> {
        let (lo, hi) = self.rate_range();
        let tol = 1e-12 * hi.abs().max(1.0);
        if rate < lo - tol || rate > hi + tol {
            return None;
        }
        if self.vertices.len() == 1 {
            return Some(self.vertices[0].1);
        }
        let rate = rate.clamp(lo, hi);
        let seg = self
            .vertices
            .partition_point(|v| v.0 <= rate)
            .saturating_sub(1)
            .min(self.vertices.len() - 2);
        let (a, b) = (self.vertices[seg], self.vertices[seg + 1]);
        let t = (rate - a.0) / (b.0 - a.0);
        Some(a.1 + t * (b.1 - a.1))
    }

    /// Rate of the vertex maximizing `F - multiplier * R`; ties go to the larger rate.
    fn best_response(&self, multiplier: f64) -> f64 {
        let mut best = (f64::NEG_INFINITY, 0.0);
        for &(r, f) in &self.vertices {
            let v = f - multiplier * r;
            if v > best.0 || (v == best.0 && r > best.1) {
                best = (v, r);
            }
        }
        best.1
    }

    fn slopes(&self) -> impl Iterator<Item = f64> + '_ {
        self.vertices
            .windows(2)
            .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
    }
}

/// Everything recorded for one channel block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockOutcome {
    pub index: usize,
    /// Rank-deficient draws discarded before this block's channel.
    pub resamples: usize,
    pub gains: Vec<f64>,
    pub points: Vec<(EnsembleCriterion, BlockPoint)>,
    /// Tri-stage envelope of this block (present when tri-stage was requested).
    pub envelope: Option<Envelope>,
    pub fallback_used: bool,
    /// `F_max(R_pf) - F_pf` on the cake-cut envelope; negative values contradict
    /// the two-user claim that proportional fairness lies under the envelope.
    pub reference_margin: Option<f64>,
}

impl BlockOutcome {
    pub fn point(&self, criterion: EnsembleCriterion) -> Option<&BlockPoint> {
        self.points
            .iter()
            .find(|(c, _)| *c == criterion)
            .map(|(_, p)| p)
    }
}

fn simulate_block(
    config: &EnsembleConfig,
    criteria: &[EnsembleCriterion],
    index: usize,
) -> Result<BlockOutcome> {
    let mut rng = config.block_rng(index);
    let order = UserOrder::identity(config.users);
    let mut resamples = 0;
    let dec = loop {
        let h =
            channel::sample_channel_with(config.users, config.antennas, config.fading, &mut rng)?;
        let dec = channel::zfdpc_decompose(&h, &order)?;
        if !dec.rank_deficient() {
            break dec;
        }
        resamples += 1;
        if resamples >= MAX_RESAMPLES {
            return Err(Error::InvalidArgument(format!(
                "block {index}: {resamples} consecutive rank-deficient channels"
            )));
        }
    };
    let gains = dec.gains().to_vec();
    let budget = db_to_linear(config.power_db);

    let mut points = Vec::with_capacity(criteria.len());
    let mut envelope = None;
    let mut fallback_used = false;
    let mut reference_margin = None;
    for &criterion in criteria {
        let point = if config.users == 1 {
            // A single user takes the whole budget under every criterion.
            BlockPoint::from_rates(&channel::rates_from_gains(&gains, &[budget]).0)?
        } else if let Some(allocator) = criterion.allocator() {
            BlockPoint::from_rates(&allocator.solve(&gains, budget)?.rates.0)?
        } else {
            let design = tristage::design(&gains, budget, config.design)?;
            let op = &design.operating_point;
            fallback_used = op.fallback_used();
            reference_margin = design
                .curve
                .fairness_at(design.reference.sum_rate)
                .map(|top| top - design.reference.fairness);
            let mut pts: Vec<(f64, f64)> = design
                .curve
                .grid
                .iter()
                .map(|p| (p.sum_rate, p.fairness))
                .collect();
            pts.push((op.sum_rate, op.fairness));
            envelope = Some(Envelope::from_points(&pts)?);
            let jain = match &op.strategy {
                tristage::Strategy::Fixed(_) => {
                    fairness::measure(
                        &channel::rates_from_gains(&gains, design.reference.alloc.powers()).0,
                    )?
                    .jain
                }
                tristage::Strategy::Mixed(m) => m
                    .atoms
                    .iter()
                    .map(|a| a.weight * design.curve.grid[a.grid_index].jain)
                    .sum(),
            };
            BlockPoint {
                sum_rate: op.sum_rate,
                fairness_l1: op.fairness,
                fairness_jain: jain,
            }
        };
        if config.users == 1 && criterion == EnsembleCriterion::TriStage {
            envelope = Some(Envelope::from_points(&[(
                point.sum_rate,
                point.fairness_l1,
            )])?);
        }
        points.push((criterion, point));
    }
    Ok(BlockOutcome {
        index,
        resamples,
        gains,
        points,
        envelope,
        fallback_used,
        reference_margin,
    })
}

/// Runs every block of the ensemble for the requested criteria.
pub fn simulate_blocks(
    config: &EnsembleConfig,
    criteria: &[EnsembleCriterion],
) -> Result<Vec<BlockOutcome>> {
    config.validate()?;
    (0..config.n_blocks)
        .into_par_iter()
        .map(|i| simulate_block(config, criteria, i))
        .collect()
}

/// Compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub criterion: EnsembleCriterion,
    pub avg_sum_rate: f64,
    pub avg_fairness_l1: f64,
    pub avg_fairness_jain: f64,
    pub n_blocks: usize,
    pub power_db: f64,
    pub users: usize,
    pub antennas: usize,
    pub seed: u64,
    /// Rank-deficient channel draws that were redrawn.
    pub resampled_blocks: usize,
    /// Tri-stage blocks that kept the proportional-fair allocation.
    pub fallback_blocks: usize,
}

/// Averages one criterion over simulated blocks.
pub fn summarize(
    config: &EnsembleConfig,
    blocks: &[BlockOutcome],
    criterion: EnsembleCriterion,
) -> Result<EnsembleResult> {
    let (mut r, mut f, mut j) = (
        KahanSum::default(),
        KahanSum::default(),
        KahanSum::default(),
    );
    for block in blocks {
        let p = block.point(criterion).ok_or_else(|| {
            Error::InvalidArgument(format!("criterion {criterion} was not simulated"))
        })?;
        r.add(p.sum_rate);
        f.add(p.fairness_l1);
        j.add(p.fairness_jain);
    }
    let n = blocks.len() as f64;
    Ok(EnsembleResult {
        criterion,
        avg_sum_rate: r.total() / n,
        avg_fairness_l1: f.total() / n,
        avg_fairness_jain: j.total() / n,
        n_blocks: blocks.len(),
        power_db: config.power_db,
        users: config.users,
        antennas: config.antennas,
        seed: config.seed,
        resampled_blocks: blocks.iter().map(|b| b.resamples).sum(),
        fallback_blocks: if criterion == EnsembleCriterion::TriStage {
            blocks.iter().filter(|b| b.fallback_used).count()
        } else {
            0
        },
    })
}

/// Average sum rate and fairness of one criterion over `config.n_blocks` channel draws.
pub fn run_ensemble(
    criterion: EnsembleCriterion,
    config: &EnsembleConfig,
) -> Result<EnsembleResult> {
    let blocks = simulate_blocks(config, &[criterion])?;
    summarize(config, &blocks, criterion)
}

/// Best average fairness over all ways of splitting the average sum rate
/// `target` across the blocks' envelopes.
///
/// Lagrangian decomposition: for a multiplier `lambda` each block maximizes
/// `F_l(R) - lambda R` on its own envelope, and `lambda` is bisected until the
/// average of the block rates meets `target`.
pub fn rate_split_bound(envelopes: &[Envelope], target: f64) -> Result<f64> {
    Ok(rate_split(envelopes, target)?.0)
}

/// Bound value and the per-block rates achieving it.
pub fn rate_split(envelopes: &[Envelope], target: f64) -> Result<(f64, Vec<f64>)> {
    if envelopes.is_empty() {
        return Err(Error::InvalidArgument("no blocks".into()));
    }
    let n = envelopes.len() as f64;
    let min: f64 = envelopes.iter().map(|e| e.rate_range().0).sum::<f64>() / n;
    let max: f64 = envelopes.iter().map(|e| e.rate_range().1).sum::<f64>() / n;
    let tol = 1e-12 * max.abs().max(1.0);
    if !(target >= min - tol && target <= max + tol) {
        return Err(Error::InfeasibleTarget { target, min, max });
    }
    let goal = target.clamp(min, max) * n;

    let total_at = |multiplier: f64| -> (f64, Vec<f64>) {
        let rates: Vec<f64> = envelopes
            .iter()
            .map(|e| e.best_response(multiplier))
            .collect();
        (rates.iter().sum(), rates)
    };
    let (slope_min, slope_max) = envelopes
        .iter()
        .flat_map(Envelope::slopes)
        .fold((0.0f64, 0.0f64), |(lo, hi), s| (lo.min(s), hi.max(s)));
    // total_at is nonincreasing: low multipliers buy rate, high ones fairness.
    let (mut low, mut high) = (slope_min - 1.0, slope_max + 1.0);
    let (mut low_total, mut low_rates) = total_at(low);
    let (mut high_total, mut high_rates) = total_at(high);
    for _ in 0..200 {
        let mid = 0.5 * (low + high);
        if mid <= low || mid >= high {
            break;
        }
        let (total, rates) = total_at(mid);
        if total >= goal {
            (low, low_total, low_rates) = (mid, total, rates);
        } else {
            (high, high_total, high_rates) = (mid, total, rates);
        }
    }
    let theta = if low_total > high_total {
        ((goal - high_total) / (low_total - high_total)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let rates: Vec<f64> = high_rates
        .iter()
        .zip(&low_rates)
        .map(|(h, l)| h + theta * (l - h))
        .collect();
    let mut value = KahanSum::default();
    for (e, &r) in envelopes.iter().zip(&rates) {
        value.add(e.value_at(r).expect("split rate lies within each envelope"));
    }
    Ok((value.total() / n, rates))
}

/// `F*_max` sampled across the achievable average-rate range.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpperBoundCurve {
    pub points: Vec<(f64, f64)>,
    pub n_blocks: usize,
    pub envelopes: Vec<Envelope>,
}

impl UpperBoundCurve {
    pub fn from_envelopes(envelopes: Vec<Envelope>, samples: usize) -> Result<Self> {
        if envelopes.is_empty() {
            return Err(Error::InvalidArgument("no blocks".into()));
        }
        let n = envelopes.len() as f64;
        let min: f64 = envelopes.iter().map(|e| e.rate_range().0).sum::<f64>() / n;
        let max: f64 = envelopes.iter().map(|e| e.rate_range().1).sum::<f64>() / n;
        let samples = samples.max(2);
        let points = (0..samples)
            .map(|i| {
                let r = if i + 1 == samples {
                    max
                } else {
                    min + (max - min) * i as f64 / (samples - 1) as f64
                };
                rate_split_bound(&envelopes, r).map(|f| (r, f))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            points,
            n_blocks: envelopes.len(),
            envelopes,
        })
    }

    /// Collects the tri-stage envelopes of simulated blocks.
    pub fn from_blocks(blocks: &[BlockOutcome], samples: usize) -> Result<Self> {
        let envelopes = blocks
            .iter()
            .map(|b| {
                b.envelope.clone().ok_or_else(|| {
                    Error::InvalidArgument(format!("block {} has no tri-stage envelope", b.index))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_envelopes(envelopes, samples)
    }

    pub fn value_at(&self, rate: f64) -> Result<f64> {
        rate_split_bound(&self.envelopes, rate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub tri_sum_rate: f64,
    pub tri_fairness: f64,
    pub bound_fairness: f64,
    /// `F*_max(R_tri) - F_tri`: the room left for a better selection rule.
    pub gap: f64,
}

impl DominanceReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.gap >= -tol
    }
}

/// Compares the tri-stage ensemble average against the bound at the same average rate.
pub fn bound_dominance_report(
    tri: &EnsembleResult,
    bound: &UpperBoundCurve,
) -> Result<DominanceReport> {
    if tri.criterion != EnsembleCriterion::TriStage {
        return Err(Error::InvalidArgument(format!(
            "dominance needs a tri-stage ensemble, got {}",
            tri.criterion
        )));
    }
    if tri.n_blocks != bound.n_blocks {
        return Err(Error::InvalidArgument(
            "ensemble and bound use different blocks".into(),
        ));
    }
    let bound_fairness = bound.value_at(tri.avg_sum_rate)?;
    Ok(DominanceReport {
        tri_sum_rate: tri.avg_sum_rate,
        tri_fairness: tri.avg_fairness_l1,
        bound_fairness,
        gap: bound_fairness - tri.avg_fairness_l1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(v: &[(f64, f64)]) -> Envelope {
        Envelope::from_points(v).unwrap()
    }

    #[test]
    fn db_conversion() {
        assert_eq!(db_to_linear(0.0), 1.0);
        assert!((db_to_linear(10.0) - 10.0).abs() < 1e-12);
        assert!((db_to_linear(15.0) - 31.622776601683793).abs() < 1e-12);
    }

    #[test]
    fn max_min_ensemble_is_perfectly_fair() {
        let config = EnsembleConfig::new(3, 4, 5.0, 50, 2);
        let r = run_ensemble(EnsembleCriterion::MaxMin, &config).unwrap();
        assert!((r.avg_fairness_l1 - 1.0).abs() <= 1e-12);
        assert!((r.avg_fairness_jain - 1.0).abs() <= 1e-12);
        assert_eq!(r.n_blocks, 50);
    }

    #[test]
    fn ensembles_are_deterministic() {
        let config = EnsembleConfig::new(2, 2, 0.0, 64, 17);
        let a = run_ensemble(EnsembleCriterion::TriStage, &config).unwrap();
        let b = run_ensemble(EnsembleCriterion::TriStage, &config).unwrap();
        assert_eq!(a, b);
        let serial = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let c = serial.install(|| run_ensemble(EnsembleCriterion::TriStage, &config).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn single_user_ensembles_report_full_fairness() {
        let config = EnsembleConfig::new(1, 2, 0.0, 20, 3);
        let blocks = simulate_blocks(&config, &EnsembleCriterion::ALL).unwrap();
        for c in EnsembleCriterion::ALL {
            let r = summarize(&config, &blocks, c).unwrap();
            assert_eq!(r.avg_fairness_l1, 1.0);
        }
        let bound = UpperBoundCurve::from_blocks(&blocks, 5).unwrap();
        let tri = summarize(&config, &blocks, EnsembleCriterion::TriStage).unwrap();
        assert!(bound_dominance_report(&tri, &bound).unwrap().gap.abs() < 1e-12);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(EnsembleConfig::new(3, 2, 0.0, 10, 0).validate().is_err());
        assert!(EnsembleConfig::new(2, 2, 0.0, 0, 0).validate().is_err());
        assert!(EnsembleConfig::new(2, 2, f64::NAN, 10, 0)
            .validate()
            .is_err());
    }

    #[test]
    fn sum_rates_grow_with_power() {
        let criteria = [
            EnsembleCriterion::MaxSum,
            EnsembleCriterion::ProportionalFair,
            EnsembleCriterion::HarmonicMean,
            EnsembleCriterion::MaxMin,
            EnsembleCriterion::TriStage,
        ];
        let mut previous: Option<Vec<f64>> = None;
        for p in [0.0, 5.0, 10.0, 15.0] {
            let config = EnsembleConfig::new(2, 3, p, 300, 9);
            let blocks = simulate_blocks(&config, &criteria).unwrap();
            let rates: Vec<f64> = criteria
                .iter()
                .map(|&c| summarize(&config, &blocks, c).unwrap().avg_sum_rate)
                .collect();
            if let Some(prev) = &previous {
                assert!(rates.iter().zip(prev).all(|(a, b)| a >= b));
            }
            previous = Some(rates);
        }
    }

    #[test]
    fn jain_compresses_faster_than_l1_at_high_power() {
        let mut last_ratio = 0.0;
        for p in [0.0, 10.0, 20.0, 30.0] {
            let config = EnsembleConfig::new(2, 2, p, 400, 31);
            let criteria = [EnsembleCriterion::MaxSum, EnsembleCriterion::MaxMin];
            let blocks = simulate_blocks(&config, &criteria).unwrap();
            let ms = summarize(&config, &blocks, EnsembleCriterion::MaxSum).unwrap();
            let mm = summarize(&config, &blocks, EnsembleCriterion::MaxMin).unwrap();
            let jain_gap = mm.avg_fairness_jain - ms.avg_fairness_jain;
            let l1_gap = mm.avg_fairness_l1 - ms.avg_fairness_l1;
            let ratio = l1_gap / jain_gap;
            assert!(
                ratio > last_ratio,
                "P = {p} dB: ratio {ratio} after {last_ratio}"
            );
            last_ratio = ratio;
        }
    }

    #[test]
    fn single_block_bound_is_the_envelope() {
        let e = env(&[(1.0, 1.0), (2.0, 0.8), (3.0, 0.1)]);
        for r in [1.0, 1.3, 2.0, 2.7, 3.0] {
            let b = rate_split_bound(std::slice::from_ref(&e), r).unwrap();
            assert!((b - e.value_at(r).unwrap()).abs() < 1e-12);
        }
        assert!(matches!(
            rate_split_bound(&[e], 3.5),
            Err(Error::InfeasibleTarget { .. })
        ));
    }

    #[test]
    fn identical_blocks_gain_nothing_from_splitting() {
        let e = env(&[(0.5, 1.0), (1.5, 0.9), (2.0, 0.6), (2.4, 0.0)]);
        let blocks = vec![e.clone(); 5];
        for r in [0.7, 1.5, 1.9, 2.3] {
            let b = rate_split_bound(&blocks, r).unwrap();
            assert!((b - e.value_at(r).unwrap()).abs() < 1e-12);
        }
    }

    /// Exhaustive split `R_1 + R_2 = 2 target` on a grid of step `step`.
    fn two_block_oracle(a: &Envelope, b: &Envelope, target: f64, step: f64) -> f64 {
        let (lo, hi) = a.rate_range();
        let steps = ((hi - lo) / step).ceil() as usize;
        (0..=steps)
            .filter_map(|i| {
                let r1 = (lo + i as f64 * step).min(hi);
                let r2 = 2.0 * target - r1;
                Some(0.5 * (a.value_at(r1)? + b.value_at(r2)?))
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn heterogeneous_blocks_match_exhaustive_split() {
        let a = env(&[(0.2, 1.0), (0.8, 0.7), (1.2, 0.1)]);
        let b = env(&[(1.0, 1.0), (2.5, 0.9), (3.5, 0.2)]);
        for target in [0.8, 1.4, 1.8, 2.2] {
            let bound = rate_split_bound(&[a.clone(), b.clone()], target).unwrap();
            let oracle = two_block_oracle(&a, &b, target, 1e-3);
            assert!(
                (bound - oracle).abs() <= 1e-3,
                "target {target}: {bound} vs {oracle}"
            );
            let naive = 0.5
                * (a.value_at(target).unwrap_or(f64::NEG_INFINITY)
                    + b.value_at(target).unwrap_or(f64::NEG_INFINITY));
            assert!(bound >= naive - 1e-12);
        }
    }

    #[test]
    fn bound_curve_is_concave() {
        let config = EnsembleConfig::new(2, 2, 0.0, 200, 4);
        let blocks = simulate_blocks(&config, &[EnsembleCriterion::TriStage]).unwrap();
        let curve = UpperBoundCurve::from_blocks(&blocks, 41).unwrap();
        let slopes: Vec<f64> = curve
            .points
            .windows(2)
            .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
            .collect();
        assert!(slopes.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        let tri = summarize(&config, &blocks, EnsembleCriterion::TriStage).unwrap();
        let report = bound_dominance_report(&tri, &curve).unwrap();
        assert!(report.holds(1e-6), "gap {}", report.gap);
    }

    #[test]
    fn kahan_sum_is_compensated() {
        let mut k = KahanSum::default();
        k.add(1.0);
        for _ in 0..10 {
            k.add(1e-16);
        }
        assert!((k.total() - (1.0 + 1e-15)).abs() < 1e-18);
    }
}
