//! Tri-stage power allocation: cake cutting, mixing and selection.
//!
//! A cake cut with factor `c` first spends `cP` on max-min fairness and then
//! water-fills the remaining `(1 - c)P` on top of it. Sweeping `c` traces raw
//! `(sum rate, l1 fairness)` pairs. Time-sharing between cuts reaches the upper
//! concave envelope of those pairs; every envelope point is a mixture of at
//! most two cuts, since a single mean constraint binds. The operating point is
//! the envelope point closest to the proportional-fair pair, unless that pair
//! lies above the envelope, in which case proportional fairness is kept.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::allocators::{self, AllocationResult};
use crate::channel::{rates_from_gains, PowerAllocation, RateVector};
use crate::error::{Error, Result};
use crate::fairness;

/// Grid points closer than this in sum rate are merged when building the envelope.
const RATE_MERGE_TOL: f64 = 1e-12;

/// One cake cut: `p(c) = p_maxmin(cP) + p_waterfill((1-c)P | p_maxmin)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CakeCutPoint {
    pub c: f64,
    pub alloc: PowerAllocation,
    pub rates: RateVector,
    pub sum_rate: f64,
    pub fairness: f64,
    pub jain: f64,
}

pub fn cake_cut(gains: &[f64], budget: f64, c: f64) -> Result<CakeCutPoint> {
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::InvalidArgument(format!(
            "cake-cut factor {c} outside [0, 1]"
        )));
    }
    let first = if c > 0.0 {
        allocators::max_min_powers(gains, c * budget)?
    } else {
        vec![0.0; gains.len()]
    };
    let second = allocators::max_sum_rate(gains, (1.0 - c) * budget, Some(&first))?;
    let powers: Vec<f64> = first
        .iter()
        .zip(second.alloc.powers())
        .map(|(a, b)| a + b)
        .collect();
    point_from_powers(gains, budget, c, powers)
}

fn point_from_powers(gains: &[f64], budget: f64, c: f64, powers: Vec<f64>) -> Result<CakeCutPoint> {
    let rates = rates_from_gains(gains, &powers);
    let measures = fairness::measure(&rates.0)?;
    Ok(CakeCutPoint {
        c,
        sum_rate: rates.sum(),
        fairness: measures.l1,
        jain: measures.jain,
        rates,
        alloc: PowerAllocation::new(powers, budget)?,
    })
}

/// Cake cuts on the uniform grid `c = i / (grid_size - 1)`, in increasing `c`.
pub fn sweep(gains: &[f64], budget: f64, grid_size: usize) -> Result<Vec<CakeCutPoint>> {
    if grid_size < 2 {
        return Err(Error::InvalidArgument(format!("grid size {grid_size} < 2")));
    }
    (0..grid_size)
        .map(|i| {
            let c = if i + 1 == grid_size {
                1.0
            } else {
                i as f64 / (grid_size - 1) as f64
            };
            cake_cut(gains, budget, c)
        })
        .collect()
}

/// Indices of the upper concave envelope of `points`, ordered by increasing x.
///
/// Points whose x values agree within `RATE_MERGE_TOL` are merged, keeping the
/// highest. Collinear interior points are dropped.
pub fn upper_concave_envelope(points: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .0
            .total_cmp(&points[b].0)
            .then(points[b].1.total_cmp(&points[a].1))
    });
    let mut merged: Vec<usize> = Vec::with_capacity(order.len());
    for idx in order {
        match merged.last_mut() {
            Some(last) if (points[idx].0 - points[*last].0).abs() <= RATE_MERGE_TOL => {
                if points[idx].1 > points[*last].1 {
                    *last = idx;
                }
            }
            _ => merged.push(idx),
        }
    }
    let mut hull: Vec<usize> = Vec::with_capacity(merged.len());
    for idx in merged {
        while hull.len() >= 2 {
            let a = points[hull[hull.len() - 2]];
            let b = points[hull[hull.len() - 1]];
            let c = points[idx];
            let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(idx);
    }
    hull
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HullVertex {
    pub sum_rate: f64,
    pub fairness: f64,
    pub grid_index: usize,
}

/// One cake cut used with probability `weight`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub grid_index: usize,
    pub c: f64,
    pub weight: f64,
}

/// A distribution over at most two cake cuts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixer {
    pub atoms: Vec<Atom>,
}

impl Mixer {
    pub fn is_degenerate(&self) -> bool {
        self.atoms.len() == 1
    }

    /// Expected `(sum rate, fairness)` over the atoms.
    pub fn expectation(&self, curve: &TradeoffCurve) -> (f64, f64) {
        self.atoms.iter().fold((0.0, 0.0), |(r, f), a| {
            let p = &curve.grid[a.grid_index];
            (r + a.weight * p.sum_rate, f + a.weight * p.fairness)
        })
    }
}

/// The raw cake-cut curve together with its upper concave envelope.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TradeoffCurve {
    pub grid: Vec<CakeCutPoint>,
    pub hull: Vec<HullVertex>,
}

/// Builds the concave envelope of a raw cake-cut grid.
pub fn mix(grid: Vec<CakeCutPoint>) -> Result<TradeoffCurve> {
    if grid.len() < 2 {
        return Err(Error::InvalidArgument(
            "mixing needs at least two grid points".into(),
        ));
    }
    let points: Vec<(f64, f64)> = grid.iter().map(|p| (p.sum_rate, p.fairness)).collect();
    let hull: Vec<HullVertex> = upper_concave_envelope(&points)
        .into_iter()
        .map(|i| HullVertex {
            sum_rate: points[i].0,
            fairness: points[i].1,
            grid_index: i,
        })
        .collect();
    if hull.len() < 2 {
        return Err(Error::DegenerateCurve);
    }
    Ok(TradeoffCurve { grid, hull })
}

impl TradeoffCurve {
    /// `(min, max)` sum rate covered by the envelope.
    pub fn rate_range(&self) -> (f64, f64) {
        (
            self.hull[0].sum_rate,
            self.hull[self.hull.len() - 1].sum_rate,
        )
    }

    /// Segment index and position in `[0, 1]` of a sum rate on the envelope.
    fn locate(&self, rate: f64) -> Option<(usize, f64)> {
        if self.hull.len() < 2 {
            return None;
        }
        let (lo, hi) = self.rate_range();
        if !(rate >= lo - RATE_MERGE_TOL && rate <= hi + RATE_MERGE_TOL) {
            return None;
        }
        let rate = rate.clamp(lo, hi);
        let seg = self
            .hull
            .partition_point(|v| v.sum_rate <= rate)
            .saturating_sub(1)
            .min(self.hull.len() - 2);
        let (a, b) = (self.hull[seg], self.hull[seg + 1]);
        let t = ((rate - a.sum_rate) / (b.sum_rate - a.sum_rate)).clamp(0.0, 1.0);
        Some((seg, t))
    }

    /// The best fairness reachable by time sharing at average sum rate `rate`.
    pub fn fairness_at(&self, rate: f64) -> Option<f64> {
        self.locate(rate)
            .map(|(seg, t)| self.segment_point(seg, t).1)
    }

    /// Two-atom mixture achieving the envelope at `rate`.
    pub fn mixer_at(&self, rate: f64) -> Option<Mixer> {
        self.locate(rate).map(|(seg, t)| self.segment_mixer(seg, t))
    }

    fn segment_point(&self, seg: usize, t: f64) -> (f64, f64) {
        let (a, b) = (self.hull[seg], self.hull[seg + 1]);
        if t == 0.0 {
            (a.sum_rate, a.fairness)
        } else if t == 1.0 {
            (b.sum_rate, b.fairness)
        } else {
            (
                (1.0 - t) * a.sum_rate + t * b.sum_rate,
                (1.0 - t) * a.fairness + t * b.fairness,
            )
        }
    }

    fn segment_mixer(&self, seg: usize, t: f64) -> Mixer {
        let atom = |v: &HullVertex, weight| Atom {
            grid_index: v.grid_index,
            c: self.grid[v.grid_index].c,
            weight,
        };
        let (a, b) = (&self.hull[seg], &self.hull[seg + 1]);
        let atoms = if t == 0.0 {
            vec![atom(a, 1.0)]
        } else if t == 1.0 {
            vec![atom(b, 1.0)]
        } else {
            vec![atom(a, 1.0 - t), atom(b, t)]
        };
        Mixer { atoms }
    }

    /// Slopes of consecutive envelope segments.
    pub fn slopes(&self) -> Vec<f64> {
        self.hull
            .windows(2)
            .map(|w| (w[1].fairness - w[0].fairness) / (w[1].sum_rate - w[0].sum_rate))
            .collect()
    }

    /// Checks envelope concavity and dominance over the raw grid.
    pub fn validate(&self, tol: f64) -> Result<()> {
        if self.hull.len() < 2 {
            let v = self.hull.first().ok_or(Error::DegenerateCurve)?;
            let coincide = self.grid.iter().all(|p| {
                (p.sum_rate - v.sum_rate).abs() <= tol && (p.fairness - v.fairness).abs() <= tol
            });
            return if coincide {
                Ok(())
            } else {
                Err(Error::DegenerateCurve)
            };
        }
        let slopes = self.slopes();
        if let Some(w) = slopes
            .windows(2)
            .position(|w| w[1] > w[0] + tol * (1.0 + w[0].abs()))
        {
            return Err(Error::InvalidArgument(format!(
                "envelope is not concave at vertex {}",
                w + 1
            )));
        }
        for (i, p) in self.grid.iter().enumerate() {
            let top = self.fairness_at(p.sum_rate).ok_or_else(|| {
                Error::InvalidArgument(format!("grid point {i} outside the envelope range"))
            })?;
            if top < p.fairness - tol {
                return Err(Error::InvalidArgument(format!(
                    "grid point {i} lies above the envelope by {}",
                    p.fairness - top
                )));
            }
        }
        Ok(())
    }
}

/// How the operating point is realized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Random cake cuts drawn from the mixer.
    Mixed(Mixer),
    /// Fallback: the fixed proportional-fair allocation.
    Fixed(PowerAllocation),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub sum_rate: f64,
    pub fairness: f64,
    pub strategy: Strategy,
}

impl OperatingPoint {
    pub fn fallback_used(&self) -> bool {
        matches!(self.strategy, Strategy::Fixed(_))
    }

    pub fn mixer(&self) -> Option<&Mixer> {
        match &self.strategy {
            Strategy::Mixed(m) => Some(m),
            Strategy::Fixed(_) => None,
        }
    }
}

/// The proportional-fair reference for selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub sum_rate: f64,
    pub fairness: f64,
    pub alloc: PowerAllocation,
}

impl ReferencePoint {
    pub fn from_allocation(result: &AllocationResult) -> Result<Self> {
        Ok(Self {
            sum_rate: result.sum_rate,
            fairness: fairness::measure(&result.rates.0)?.l1,
            alloc: result.alloc.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectOptions {
    /// Measure sum-rate distances in units of the largest envelope sum rate.
    pub normalize_rate: bool,
}

/// Projections this close to a vertex select the vertex itself.
const MIXER_SNAP: f64 = 1e-9;

/// Solver-level slack when deciding whether the reference beats the envelope.
pub const ABOVE_HULL_TOL: f64 = 1e-9;

/// Picks the envelope point nearest to the reference, or keeps the reference
/// when it lies above the envelope by more than `ABOVE_HULL_TOL` (or outside
/// its rate range).
pub fn select(
    curve: &TradeoffCurve,
    reference: &ReferencePoint,
    options: SelectOptions,
) -> OperatingPoint {
    let fixed = || OperatingPoint {
        sum_rate: reference.sum_rate,
        fairness: reference.fairness,
        strategy: Strategy::Fixed(reference.alloc.clone()),
    };
    match curve.fairness_at(reference.sum_rate) {
        Some(top) if top >= reference.fairness - ABOVE_HULL_TOL => {}
        _ => return fixed(),
    }

    let scale = if options.normalize_rate {
        1.0 / curve.rate_range().1
    } else {
        1.0
    };
    let target = (reference.sum_rate * scale, reference.fairness);
    let mut best: Option<(f64, f64, usize, f64)> = None; // (dist^2, fairness, segment, t)
    for seg in 0..curve.hull.len() - 1 {
        let (a, b) = (curve.hull[seg], curve.hull[seg + 1]);
        let (ax, ay) = (a.sum_rate * scale, a.fairness);
        let (dx, dy) = ((b.sum_rate - a.sum_rate) * scale, b.fairness - a.fairness);
        let len_sq = dx * dx + dy * dy;
        let t = if len_sq > 0.0 {
            (((target.0 - ax) * dx + (target.1 - ay) * dy) / len_sq).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (px, py) = (ax + t * dx, ay + t * dy);
        let dist = (px - target.0).powi(2) + (py - target.1).powi(2);
        let fair = curve.segment_point(seg, t).1;
        let better = match best {
            None => true,
            Some((d, f, _, _)) => dist < d - 1e-15 || (dist <= d + 1e-15 && fair > f),
        };
        if better {
            best = Some((dist, fair, seg, t));
        }
    }
    let (_, _, seg, t) = best.expect("envelope has at least one segment");
    // Rounding in the projection should not leave a vanishing second atom.
    let t = if t < MIXER_SNAP {
        0.0
    } else if t > 1.0 - MIXER_SNAP {
        1.0
    } else {
        t
    };
    let mixer = curve.segment_mixer(seg, t);
    let (sum_rate, fairness) = curve.segment_point(seg, t);
    OperatingPoint {
        sum_rate,
        fairness,
        strategy: Strategy::Mixed(mixer),
    }
}

/// One realization of the randomized allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    /// Cake-cut factor, absent for the fixed fallback allocation.
    pub c: Option<f64>,
    pub alloc: PowerAllocation,
    pub sum_rate: f64,
    pub fairness: f64,
}

/// Draws `n` i.i.d. cake cuts from the operating point's mixer.
pub fn sample_draws<R: Rng + ?Sized>(
    op: &OperatingPoint,
    curve: &TradeoffCurve,
    n: usize,
    rng: &mut R,
) -> Vec<Draw> {
    match &op.strategy {
        Strategy::Fixed(alloc) => vec![
            Draw {
                c: None,
                alloc: alloc.clone(),
                sum_rate: op.sum_rate,
                fairness: op.fairness,
            };
            n
        ],
        Strategy::Mixed(mixer) => (0..n)
            .map(|_| {
                let atom = if mixer.atoms.len() == 1 {
                    &mixer.atoms[0]
                } else if rng.random::<f64>() < mixer.atoms[1].weight {
                    &mixer.atoms[1]
                } else {
                    &mixer.atoms[0]
                };
                let p = &curve.grid[atom.grid_index];
                Draw {
                    c: Some(p.c),
                    alloc: p.alloc.clone(),
                    sum_rate: p.sum_rate,
                    fairness: p.fairness,
                }
            })
            .collect(),
    }
}

/// Seeded form of [`sample_draws`] returning only the power vectors.
pub fn sample_allocation(
    op: &OperatingPoint,
    curve: &TradeoffCurve,
    n: usize,
    seed: u64,
) -> Vec<PowerAllocation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_draws(op, curve, n, &mut rng)
        .into_iter()
        .map(|d| d.alloc)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignOptions {
    pub grid_size: usize,
    /// Add the cake cut whose sum rate equals the proportional-fair sum rate.
    pub refine_at_reference: bool,
    pub select: SelectOptions,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            grid_size: 201,
            refine_at_reference: true,
            select: SelectOptions::default(),
        }
    }
}

/// Everything the three stages produce for one channel block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TriStageDesign {
    pub curve: TradeoffCurve,
    pub reference: ReferencePoint,
    pub operating_point: OperatingPoint,
}

/// Runs cake cutting, mixing and selection for one set of ZFDPC gains.
///
/// A curve whose cuts all coincide (for instance identical gains) falls back to
/// the proportional-fair point.
pub fn design(gains: &[f64], budget: f64, options: DesignOptions) -> Result<TriStageDesign> {
    let pf = allocators::proportional_fair(gains, budget)?;
    let reference = ReferencePoint::from_allocation(&pf)?;
    let mut grid = sweep(gains, budget, options.grid_size)?;
    if options.refine_at_reference {
        if let Some(point) = cut_at_rate(gains, budget, &grid, reference.sum_rate)? {
            let at = grid.partition_point(|p| p.c < point.c);
            if grid.get(at).is_none_or(|p| p.c != point.c) {
                grid.insert(at, point);
            }
        }
    }
    match mix(grid) {
        Ok(curve) => {
            let operating_point = select(&curve, &reference, options.select);
            Ok(TriStageDesign {
                curve,
                reference,
                operating_point,
            })
        }
        Err(Error::DegenerateCurve) => {
            let grid = sweep(gains, budget, 2)?;
            let curve = TradeoffCurve {
                hull: vec![HullVertex {
                    sum_rate: grid[0].sum_rate,
                    fairness: grid[0].fairness,
                    grid_index: 0,
                }],
                grid,
            };
            let operating_point = OperatingPoint {
                sum_rate: reference.sum_rate,
                fairness: reference.fairness,
                strategy: Strategy::Fixed(reference.alloc.clone()),
            };
            Ok(TriStageDesign {
                curve,
                reference,
                operating_point,
            })
        }
        Err(e) => Err(e),
    }
}

/// Bisects on `c` between adjacent grid cuts bracketing `rate` in sum rate.
fn cut_at_rate(
    gains: &[f64],
    budget: f64,
    grid: &[CakeCutPoint],
    rate: f64,
) -> Result<Option<CakeCutPoint>> {
    let Some(i) = grid.windows(2).position(|w| {
        let (a, b) = (w[0].sum_rate - rate, w[1].sum_rate - rate);
        a * b <= 0.0 && a != b
    }) else {
        return Ok(None);
    };
    let (mut lo, mut hi) = (grid[i].c, grid[i + 1].c);
    let lo_above = grid[i].sum_rate >= rate;
    let mut best = None;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let point = cake_cut(gains, budget, mid)?;
        let above = point.sum_rate >= rate;
        let done = (point.sum_rate - rate).abs() <= 1e-14 * rate.max(1.0);
        if above == lo_above {
            lo = mid;
        } else {
            hi = mid;
        }
        best = Some(point);
        if done {
            break;
        }
    }
    Ok(best)
}
