//! Projected-gradient ascent over the scaled simplex `{p >= 0, sum(p) = budget}`.

/// A smooth concave objective of the power vector.
pub trait SimplexObjective {
    /// Objective value; `-inf` outside its domain.
    fn value(&self, p: &[f64]) -> f64;
    fn gradient(&self, p: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone, Copy)]
pub struct AscentOptions {
    pub gradient_tol: f64,
    pub max_iterations: usize,
}

impl Default for AscentOptions {
    fn default() -> Self {
        Self {
            gradient_tol: 1e-9,
            max_iterations: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AscentOutcome {
    pub point: Vec<f64>,
    pub iterations: usize,
    pub projected_gradient_norm: f64,
}

/// Euclidean projection onto `{x >= 0, sum(x) = budget}`.
pub fn project_to_simplex(v: &[f64], budget: f64) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut shift = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - budget) / (i + 1) as f64;
        if u - candidate > 0.0 {
            shift = candidate;
        }
    }
    v.iter().map(|x| (x - shift).max(0.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn projected_gradient_norm(x: &[f64], grad: &[f64], budget: f64) -> f64 {
    let trial: Vec<f64> = x.iter().zip(grad).map(|(a, g)| a + g).collect();
    project_to_simplex(&trial, budget)
        .iter()
        .zip(x)
        .map(|(p, a)| (p - a) * (p - a))
        .sum::<f64>()
        .sqrt()
}

/// Spectral (Barzilai-Borwein) projected gradient with Armijo backtracking
/// along the projection arc. `start` must have a finite objective value.
pub fn maximize<O: SimplexObjective>(
    objective: &O,
    budget: f64,
    start: Vec<f64>,
    options: AscentOptions,
) -> AscentOutcome {
    const ARMIJO: f64 = 1e-4;
    const MAX_BACKTRACKS: usize = 60;

    let n = start.len();
    let mut x = start;
    let mut f = objective.value(&x);
    let mut grad = vec![0.0; n];
    objective.gradient(&x, &mut grad);
    let grad_scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut step = if grad_scale > 0.0 {
        0.1 * budget.max(1e-12) / grad_scale
    } else {
        1.0
    };
    let mut new_grad = vec![0.0; n];
    let mut pg_norm = projected_gradient_norm(&x, &grad, budget);
    let mut iterations = 0;

    while iterations < options.max_iterations && pg_norm > options.gradient_tol {
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = x.iter().zip(&grad).map(|(a, g)| a + step * g).collect();
            let candidate = project_to_simplex(&trial, budget);
            let d: Vec<f64> = candidate.iter().zip(&x).map(|(c, a)| c - a).collect();
            let f_new = objective.value(&candidate);
            // Slack of a few ulps of |f| lets the final steps through once the
            // predicted gain drops below what f can resolve.
            let slack = 4.0 * f64::EPSILON * f.abs();
            if f_new.is_finite() && f_new >= f + ARMIJO * dot(&grad, &d) - slack {
                accepted = Some((candidate, d, f_new));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, d, f_new)) = accepted else {
            break;
        };
        if d.iter().all(|v| *v == 0.0) {
            break;
        }
        objective.gradient(&candidate, &mut new_grad);
        let y: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&d, &y);
        step = if sy < 0.0 {
            (dot(&d, &d) / -sy).clamp(1e-14, 1e14)
        } else {
            1e14f64.min(step * 4.0)
        };
        x = candidate;
        f = f_new;
        std::mem::swap(&mut grad, &mut new_grad);
        pg_norm = projected_gradient_norm(&x, &grad, budget);
        iterations += 1;
    }

    AscentOutcome {
        point: x,
        iterations,
        projected_gradient_norm: pg_norm,
    }
}

/// Dimensionless KKT residual of `max f(p) s.t. sum(p) <= budget, p >= 0` for an
/// objective increasing in every coordinate.
///
/// The multiplier is estimated as the power-weighted mean gradient; active users
/// contribute their relative deviation from it, inactive users any excess over it.
pub fn simplex_kkt_residual(grad: &[f64], p: &[f64], budget: f64) -> f64 {
    let total: f64 = p.iter().sum();
    let budget_gap = (total - budget).abs() / budget.max(1.0);
    if total <= 0.0 {
        return budget_gap;
    }
    let multiplier = dot(grad, p) / total;
    if multiplier <= 0.0 {
        return f64::INFINITY;
    }
    let stationarity = grad
        .iter()
        .zip(p)
        .map(|(&g, &x)| {
            if x > 0.0 {
                (g - multiplier).abs() / multiplier
            } else {
                (g - multiplier).max(0.0) / multiplier
            }
        })
        .fold(0.0, f64::max);
    budget_gap.max(stationarity)
}
