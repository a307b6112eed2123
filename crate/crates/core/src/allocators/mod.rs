//! Power allocation under the four classical criteria for ZFDPC rates
//! `R_k = log2(1 + p_k g_k)`.
//!
//! * max sum rate: exact water-filling, optionally on top of a baseline
//!   allocation (the second step of a cake cut);
//! * proportional fairness: maximize `sum ln R_k`;
//! * harmonic mean: maximize `(sum 1/R_k)^-1`;
//! * max-min: closed form equalizing all rates.
//!
//! The proportional-fair and harmonic-mean problems are solved by projected
//! gradient ascent started from the max-min point, which is interior.

pub mod simplex;

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::channel::{rates_from_gains, PowerAllocation, RateVector};
use crate::error::{Error, Result};
use simplex::{AscentOptions, SimplexObjective};

/// The qualitative allocation criteria.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    MaxSum,
    ProportionalFair,
    HarmonicMean,
    MaxMin,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [
        Criterion::MaxSum,
        Criterion::ProportionalFair,
        Criterion::HarmonicMean,
        Criterion::MaxMin,
    ];

    /// Value of the criterion's objective at the given rates.
    pub fn objective(self, rates: &[f64]) -> f64 {
        match self {
            Criterion::MaxSum => rates.iter().sum(),
            Criterion::ProportionalFair => rates.iter().map(|r| r.ln()).sum(),
            Criterion::HarmonicMean => 1.0 / rates.iter().map(|r| 1.0 / r).sum::<f64>(),
            Criterion::MaxMin => rates.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn solve(self, gains: &[f64], budget: f64) -> Result<AllocationResult> {
        match self {
            Criterion::MaxSum => max_sum_rate(gains, budget, None),
            Criterion::ProportionalFair => proportional_fair(gains, budget),
            Criterion::HarmonicMean => harmonic_mean(gains, budget),
            Criterion::MaxMin => max_min(gains, budget),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllocationResult {
    pub alloc: PowerAllocation,
    pub rates: RateVector,
    pub sum_rate: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

fn check_inputs(gains: &[f64], budget: f64) -> Result<()> {
    if gains.is_empty() {
        return Err(Error::InvalidArgument("no users".into()));
    }
    if let Some(g) = gains.iter().find(|g| **g < 0.0 || !g.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "gain {g} is not a finite nonnegative value"
        )));
    }
    if budget < 0.0 || !budget.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "budget {budget} must be finite and >= 0"
        )));
    }
    Ok(())
}

fn require_positive_gains(gains: &[f64]) -> Result<()> {
    match gains.iter().position(|&g| g <= 0.0) {
        Some(user) => Err(Error::InfeasibleFairness { user }),
        None => Ok(()),
    }
}

/// Water-filling: maximize `sum log2(1 + (p_k + b_k) g_k)` over `sum p <= budget`.
///
/// Returns `p` (excluding the baseline `b`); the reported rates are those of
/// `p + b`. Users with `g_k = 0` get no power.
pub fn max_sum_rate(
    gains: &[f64],
    budget: f64,
    baseline: Option<&[f64]>,
) -> Result<AllocationResult> {
    check_inputs(gains, budget)?;
    let zeros;
    let baseline = match baseline {
        Some(b) => {
            if b.len() != gains.len() {
                return Err(Error::Dimension(format!(
                    "baseline has {} entries for {} users",
                    b.len(),
                    gains.len()
                )));
            }
            if b.iter().any(|x| x.is_nan() || *x < 0.0) {
                return Err(Error::InvalidArgument(
                    "baseline powers must be >= 0".into(),
                ));
            }
            b
        }
        None => {
            zeros = vec![0.0; gains.len()];
            &zeros
        }
    };

    // Water floor of each user: 1/g_k + b_k.
    let mut floors: Vec<(usize, f64)> = gains
        .iter()
        .zip(baseline)
        .enumerate()
        .filter(|(_, (g, _))| **g > 0.0)
        .map(|(k, (g, b))| (k, 1.0 / g + b))
        .collect();
    floors.sort_by(|a, b| a.1.total_cmp(&b.1));

    let mut powers = vec![0.0; gains.len()];
    if !floors.is_empty() {
        let mut level = floors[0].1;
        let mut prefix = 0.0;
        for m in 1..=floors.len() {
            prefix += floors[m - 1].1;
            level = (budget + prefix) / m as f64;
            if m == floors.len() || level <= floors[m].1 {
                break;
            }
        }
        for &(k, floor) in &floors {
            powers[k] = (level - floor).max(0.0);
        }
    }

    let effective: Vec<f64> = powers.iter().zip(baseline).map(|(p, b)| p + b).collect();
    let grad: Vec<f64> = gains
        .iter()
        .zip(&effective)
        .map(|(g, x)| g / ((1.0 + x * g) * LN_2))
        .collect();
    let kkt_residual = if budget > 0.0 {
        simplex::simplex_kkt_residual(&grad, &powers, budget)
    } else {
        0.0
    };
    let rates = rates_from_gains(gains, &effective);
    Ok(AllocationResult {
        sum_rate: rates.sum(),
        rates,
        alloc: PowerAllocation::new(powers, budget)?,
        kkt_residual,
        iterations: 0,
    })
}

/// Max-min powers `p_k = (budget / g_k) / sum_i (1 / g_i)`; all gains must be positive.
pub fn max_min_powers(gains: &[f64], budget: f64) -> Result<Vec<f64>> {
    check_inputs(gains, budget)?;
    require_positive_gains(gains)?;
    let snr = common_snr(gains, budget);
    Ok(gains.iter().map(|g| snr / g).collect())
}

fn common_snr(gains: &[f64], budget: f64) -> f64 {
    budget / gains.iter().map(|g| 1.0 / g).sum::<f64>()
}

/// Max-min fairness: every user reaches the same rate `log2(1 + budget / sum 1/g_i)`.
pub fn max_min(gains: &[f64], budget: f64) -> Result<AllocationResult> {
    let powers = max_min_powers(gains, budget)?;
    let rate = common_snr(gains, budget).ln_1p() / LN_2;
    let rates = RateVector(vec![rate; gains.len()]);
    Ok(AllocationResult {
        sum_rate: rates.sum(),
        rates,
        alloc: PowerAllocation::new(powers, budget)?,
        kkt_residual: 0.0,
        iterations: 0,
    })
}

/// `sum_k ln log2(1 + p_k g_k)`.
#[derive(Debug, Clone)]
pub struct ProportionalFairObjective<'a> {
    pub gains: &'a [f64],
}

impl SimplexObjective for ProportionalFairObjective<'_> {
    fn value(&self, p: &[f64]) -> f64 {
        let mut total = 0.0;
        for (g, x) in self.gains.iter().zip(p) {
            let rate = (x * g).ln_1p() / LN_2;
            if rate.is_nan() || rate <= 0.0 {
                return f64::NEG_INFINITY;
            }
            total += rate.ln();
        }
        total
    }

    fn gradient(&self, p: &[f64], out: &mut [f64]) {
        for ((o, g), x) in out.iter_mut().zip(self.gains).zip(p) {
            let rate = (x * g).ln_1p() / LN_2;
            *o = g / ((1.0 + x * g) * LN_2 * rate);
        }
    }
}

/// `-sum_k 1 / log2(1 + p_k g_k)`; maximizing it maximizes the harmonic mean.
#[derive(Debug, Clone)]
pub struct HarmonicMeanObjective<'a> {
    pub gains: &'a [f64],
}

impl SimplexObjective for HarmonicMeanObjective<'_> {
    fn value(&self, p: &[f64]) -> f64 {
        let mut total = 0.0;
        for (g, x) in self.gains.iter().zip(p) {
            let rate = (x * g).ln_1p() / LN_2;
            if rate.is_nan() || rate <= 0.0 {
                return f64::NEG_INFINITY;
            }
            total -= 1.0 / rate;
        }
        total
    }

    fn gradient(&self, p: &[f64], out: &mut [f64]) {
        for ((o, g), x) in out.iter_mut().zip(self.gains).zip(p) {
            let rate = (x * g).ln_1p() / LN_2;
            *o = g / ((1.0 + x * g) * LN_2 * rate * rate);
        }
    }
}

fn solve_interior<O: SimplexObjective>(
    objective: &O,
    gains: &[f64],
    budget: f64,
) -> Result<AllocationResult> {
    check_inputs(gains, budget)?;
    require_positive_gains(gains)?;
    if budget <= 0.0 {
        return Err(Error::InvalidArgument(
            "fairness objectives need a positive budget".into(),
        ));
    }
    let start = max_min_powers(gains, budget)?;
    let outcome = simplex::maximize(objective, budget, start, AscentOptions::default());
    let mut grad = vec![0.0; gains.len()];
    objective.gradient(&outcome.point, &mut grad);
    let kkt_residual = simplex::simplex_kkt_residual(&grad, &outcome.point, budget);
    let rates = rates_from_gains(gains, &outcome.point);
    Ok(AllocationResult {
        sum_rate: rates.sum(),
        rates,
        alloc: PowerAllocation::new(outcome.point, budget)?,
        kkt_residual,
        iterations: outcome.iterations,
    })
}

/// Proportional fairness: maximize `sum_k ln R_k`.
pub fn proportional_fair(gains: &[f64], budget: f64) -> Result<AllocationResult> {
    solve_interior(&ProportionalFairObjective { gains }, gains, budget)
}

/// Harmonic-mean fairness: minimize `sum_k 1 / R_k`.
pub fn harmonic_mean(gains: &[f64], budget: f64) -> Result<AllocationResult> {
    solve_interior(&HarmonicMeanObjective { gains }, gains, budget)
}
