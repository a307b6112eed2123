//! Channel realizations, the zero-forcing DPC decomposition and per-user rates.
//!
//! User `k` receives `y_k = h_k^T x + w_k` with `w_k ~ CN(0, 1)`. Rows of the
//! channel matrix are the `h_k^T`. The ZFDPC beamformers come from a
//! Householder QR of `H^†`: `H^† = Q L^†`, so that `l_{k,i} = h_k^T q_i` and
//! `L` is lower triangular (user `k` sees no interference from users `i > k`).

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use nalgebra::Complex;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// `|l_kk|^2` below `RANK_TOL * ||H||_F^2 / K` flags the user as rank deficient.
pub const RANK_TOL: f64 = 1e-8;

/// Tolerance used when validating covariances and allocations.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Fading law used to draw channel realizations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Fading {
    /// i.i.d. circularly-symmetric complex Gaussian entries, `CN(0, 1)`.
    #[default]
    Rayleigh,
}

/// A `K x N` complex channel realization; row `k` is `h_k^T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChannelJson", into = "ChannelJson")]
pub struct ChannelMatrix {
    entries: DMatrix<C64>,
}

#[derive(Serialize, Deserialize)]
struct ChannelJson {
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "N")]
    n: usize,
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

impl TryFrom<ChannelJson> for ChannelMatrix {
    type Error = Error;

    fn try_from(json: ChannelJson) -> Result<Self> {
        if json.re.len() != json.k || json.im.len() != json.k {
            return Err(Error::Dimension(format!(
                "expected {} rows in re/im, found {}/{}",
                json.k,
                json.re.len(),
                json.im.len()
            )));
        }
        let mut entries = DMatrix::zeros(json.k, json.n);
        for (row, (re, im)) in json.re.iter().zip(&json.im).enumerate() {
            if re.len() != json.n || im.len() != json.n {
                return Err(Error::Dimension(format!(
                    "row {row}: expected {} columns",
                    json.n
                )));
            }
            for col in 0..json.n {
                entries[(row, col)] = C64::new(re[col], im[col]);
            }
        }
        ChannelMatrix::new(entries)
    }
}

impl From<ChannelMatrix> for ChannelJson {
    fn from(h: ChannelMatrix) -> Self {
        let (k, n) = h.entries.shape();
        let re = (0..k)
            .map(|r| (0..n).map(|c| h.entries[(r, c)].re).collect())
            .collect();
        let im = (0..k)
            .map(|r| (0..n).map(|c| h.entries[(r, c)].im).collect())
            .collect();
        ChannelJson { k, n, re, im }
    }
}

impl ChannelMatrix {
    pub fn new(entries: DMatrix<C64>) -> Result<Self> {
        let (k, n) = entries.shape();
        if k == 0 || n == 0 {
            return Err(Error::Dimension(format!(
                "channel must have K >= 1 and N >= 1, got {k}x{n}"
            )));
        }
        if entries
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::InvalidArgument(
                "channel entries must be finite".into(),
            ));
        }
        Ok(Self { entries })
    }

    /// Builds a real-valued channel from row-major rows.
    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("ragged channel rows".into()));
        }
        Self::new(DMatrix::from_fn(k, n, |r, c| C64::new(rows[r][c], 0.0)))
    }

    pub fn users(&self) -> usize {
        self.entries.nrows()
    }

    pub fn antennas(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entries(&self) -> &DMatrix<C64> {
        &self.entries
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Rows reordered so that row `k` of the result is row `order[k]` of `self`.
    pub fn permuted(&self, order: &UserOrder) -> Result<Self> {
        order.check_len(self.users())?;
        let n = self.antennas();
        let entries = DMatrix::from_fn(self.users(), n, |r, c| self.entries[(order.0[r], c)]);
        Ok(Self { entries })
    }

    /// Received-signal power quadratic form `h_k^T A h_k^*` for user `k`.
    fn quadratic_form(&self, user: usize, a: &DMatrix<C64>) -> f64 {
        let n = self.antennas();
        let h = self.entries.row(user);
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                acc += h[i] * a[(i, j)] * h[j].conj();
            }
        }
        acc.re
    }
}

/// Draws a channel with i.i.d. `CN(0, 1)` entries from a seed.
pub fn sample_channel(users: usize, antennas: usize, seed: u64) -> Result<ChannelMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_channel_with(users, antennas, Fading::Rayleigh, &mut rng)
}

pub fn sample_channel_with<R: Rng + ?Sized>(
    users: usize,
    antennas: usize,
    fading: Fading,
    rng: &mut R,
) -> Result<ChannelMatrix> {
    if users == 0 || antennas == 0 {
        return Err(Error::Dimension(format!(
            "channel must have K >= 1 and N >= 1, got {users}x{antennas}"
        )));
    }
    let entries = match fading {
        Fading::Rayleigh => {
            let scale = std::f64::consts::FRAC_1_SQRT_2;
            DMatrix::from_fn(users, antennas, |_, _| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                C64::new(re * scale, im * scale)
            })
        }
    };
    Ok(ChannelMatrix { entries })
}

/// Encoding order of the users, as a permutation of `0..K`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserOrder(Vec<usize>);

impl UserOrder {
    pub fn identity(users: usize) -> Self {
        Self((0..users).collect())
    }

    pub fn new(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &u in &order {
            if u >= order.len() || seen[u] {
                return Err(Error::InvalidOrdering(format!(
                    "{order:?} is not a permutation of 0..{}",
                    order.len()
                )));
            }
            seen[u] = true;
        }
        Ok(Self(order))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    fn check_len(&self, users: usize) -> Result<()> {
        if self.0.len() != users {
            return Err(Error::InvalidOrdering(format!(
                "ordering has {} entries for {users} users",
                self.0.len()
            )));
        }
        Ok(())
    }
}

/// Result of the ZFDPC QR decomposition `H^† = Q L^†` of the row-permuted channel.
#[derive(Debug, Clone)]
pub struct ZfdpcDecomposition {
    beamformers: DMatrix<C64>,
    gains_matrix: DMatrix<C64>,
    order: UserOrder,
    gains: Vec<f64>,
    rank_deficient: bool,
}

impl ZfdpcDecomposition {
    /// `N x K` matrix whose columns are the unit-norm beamformers `q_k`.
    pub fn q(&self) -> &DMatrix<C64> {
        &self.beamformers
    }

    /// `K x K` lower-triangular matrix of `l_{k,i} = h_k^T q_i`.
    pub fn l(&self) -> &DMatrix<C64> {
        &self.gains_matrix
    }

    pub fn order(&self) -> &UserOrder {
        &self.order
    }

    /// Effective gains `g_k = |l_kk|^2`, in encoding order.
    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn users(&self) -> usize {
        self.gains.len()
    }

    /// Some user has a numerically vanishing effective gain.
    pub fn rank_deficient(&self) -> bool {
        self.rank_deficient
    }

    /// Rank-one covariances `p_k q_k q_k^†` realizing a ZFDPC allocation.
    pub fn covariances(&self, alloc: &PowerAllocation) -> Result<CovarianceSet> {
        check_dimension(alloc.len(), self.users())?;
        let n = self.beamformers.nrows();
        let matrices = (0..self.users())
            .map(|k| {
                let q = self.beamformers.column(k);
                DMatrix::from_fn(n, n, |i, j| q[i] * q[j].conj() * alloc.powers()[k])
            })
            .collect();
        CovarianceSet::new(matrices, alloc.powers().to_vec())
    }
}

/// Householder QR of `H^†` for the users taken in `order`.
///
/// Diagonal entries of `L` are made real and nonnegative by rotating the
/// phase of each beamformer.
pub fn zfdpc_decompose(h: &ChannelMatrix, order: &UserOrder) -> Result<ZfdpcDecomposition> {
    let (k, n) = (h.users(), h.antennas());
    if k > n {
        return Err(Error::Dimension(format!(
            "ZFDPC requires K <= N, got K = {k}, N = {n}"
        )));
    }
    let permuted = h.permuted(order)?;
    let (q, r) = householder_qr(permuted.entries.adjoint());
    let l = r.adjoint();
    let gains: Vec<f64> = (0..k).map(|i| l[(i, i)].norm_sqr()).collect();
    let threshold = RANK_TOL * h.frobenius_norm_sq() / k as f64;
    let rank_deficient = gains.iter().any(|&g| g < threshold);
    Ok(ZfdpcDecomposition {
        beamformers: q,
        gains_matrix: l,
        order: order.clone(),
        gains,
        rank_deficient,
    })
}

/// Thin QR of an `m x n` matrix (`m >= n`): returns `Q` (`m x n`) and `R` (`n x n`)
/// with a real nonnegative diagonal.
fn householder_qr(mut a: DMatrix<C64>) -> (DMatrix<C64>, DMatrix<C64>) {
    let (m, n) = a.shape();
    let mut reflectors: Vec<Option<Vec<C64>>> = Vec::with_capacity(n);
    for j in 0..n {
        let norm = (j..m).map(|i| a[(i, j)].norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            reflectors.push(None);
            continue;
        }
        let x0 = a[(j, j)];
        let phase = if x0.norm() > 0.0 {
            x0 / x0.norm()
        } else {
            C64::new(1.0, 0.0)
        };
        let alpha = -phase * norm;
        let mut v: Vec<C64> = (j..m).map(|i| a[(i, j)]).collect();
        v[0] -= alpha;
        let vnorm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            reflectors.push(None);
            continue;
        }
        v.iter_mut().for_each(|z| *z /= vnorm);
        apply_reflector(&mut a, &v, j, j..n);
        reflectors.push(Some(v));
    }

    let mut q = DMatrix::<C64>::identity(m, n);
    for (j, v) in reflectors.iter().enumerate().rev() {
        if let Some(v) = v {
            apply_reflector(&mut q, v, j, 0..n);
        }
    }
    let mut r = DMatrix::<C64>::zeros(n, n);
    for i in 0..n {
        for c in i..n {
            r[(i, c)] = a[(i, c)];
        }
    }
    for i in 0..n {
        let d = r[(i, i)];
        let mag = d.norm();
        if mag > 0.0 {
            let phase = d / mag;
            for c in i..n {
                r[(i, c)] *= phase.conj();
            }
            for row in 0..m {
                q[(row, i)] *= phase;
            }
            r[(i, i)] = C64::new(mag, 0.0);
        }
    }
    (q, r)
}

/// `A[offset.., cols] -= 2 v (v^† A[offset.., cols])`.
fn apply_reflector(a: &mut DMatrix<C64>, v: &[C64], offset: usize, cols: std::ops::Range<usize>) {
    for c in cols {
        let dot: C64 = v
            .iter()
            .enumerate()
            .map(|(i, vi)| vi.conj() * a[(offset + i, c)])
            .sum();
        for (i, vi) in v.iter().enumerate() {
            a[(offset + i, c)] -= *vi * dot * 2.0;
        }
    }
}

/// Nonnegative per-user powers under a total budget (linear units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    powers: Vec<f64>,
    budget: f64,
}

impl PowerAllocation {
    pub fn new(powers: Vec<f64>, budget: f64) -> Result<Self> {
        if budget < 0.0 || !budget.is_finite() {
            return Err(Error::InvalidAllocation(format!(
                "budget must be finite and nonnegative, got {budget}"
            )));
        }
        if let Some((k, p)) = powers
            .iter()
            .enumerate()
            .find(|(_, p)| **p < 0.0 || !p.is_finite())
        {
            return Err(Error::InvalidAllocation(format!(
                "p[{k}] = {p} is not >= 0"
            )));
        }
        let total: f64 = powers.iter().sum();
        if total > budget + FEASIBILITY_TOL * budget.max(1.0) {
            return Err(Error::InvalidAllocation(format!(
                "total power {total} exceeds budget {budget}"
            )));
        }
        Ok(Self { powers, budget })
    }

    pub fn zeros(users: usize, budget: f64) -> Self {
        Self {
            powers: vec![0.0; users],
            budget,
        }
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn total(&self) -> f64 {
        self.powers.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.powers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.powers.is_empty()
    }

    pub fn into_powers(self) -> Vec<f64> {
        self.powers
    }
}

/// Per-user rates in bits per channel use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateVector(pub Vec<f64>);

impl RateVector {
    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Transmit covariances `K_k`, one per user, with their power caps.
#[derive(Debug, Clone)]
pub struct CovarianceSet {
    matrices: Vec<DMatrix<C64>>,
    caps: Vec<f64>,
}

impl CovarianceSet {
    /// Validates Hermitian symmetry, positive semidefiniteness and `tr(K_k) <= p_k`.
    pub fn new(matrices: Vec<DMatrix<C64>>, caps: Vec<f64>) -> Result<Self> {
        if matrices.len() != caps.len() {
            return Err(Error::Dimension(format!(
                "{} covariances for {} power caps",
                matrices.len(),
                caps.len()
            )));
        }
        for (user, (m, &cap)) in matrices.iter().zip(&caps).enumerate() {
            let invalid = |reason: String| Error::InvalidCovariance { user, reason };
            if !m.is_square() {
                return Err(invalid(format!("shape {:?} is not square", m.shape())));
            }
            let scale = m.iter().map(|z| z.norm()).fold(1.0, f64::max);
            let tol = FEASIBILITY_TOL * scale;
            if (m - m.adjoint()).iter().any(|z| z.norm() > tol) {
                return Err(invalid("not Hermitian".into()));
            }
            let min_eig = m
                .clone()
                .symmetric_eigenvalues()
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            if min_eig < -tol {
                return Err(invalid(format!("minimum eigenvalue {min_eig} < 0")));
            }
            let trace = m.trace().re;
            if trace > cap + FEASIBILITY_TOL * cap.max(1.0) {
                return Err(invalid(format!("trace {trace} exceeds power {cap}")));
            }
        }
        Ok(Self { matrices, caps })
    }

    pub fn zeros(users: usize, antennas: usize) -> Self {
        Self {
            matrices: vec![DMatrix::zeros(antennas, antennas); users],
            caps: vec![0.0; users],
        }
    }

    pub fn matrices(&self) -> &[DMatrix<C64>] {
        &self.matrices
    }

    pub fn caps(&self) -> &[f64] {
        &self.caps
    }
}

/// ZFDPC rates `R_k = log2(1 + p_k |l_kk|^2)`.
pub fn zfdpc_rates(dec: &ZfdpcDecomposition, alloc: &PowerAllocation) -> Result<RateVector> {
    check_dimension(alloc.len(), dec.users())?;
    Ok(rates_from_gains(dec.gains(), alloc.powers()))
}

/// `log2(1 + p_k g_k)` elementwise.
pub fn rates_from_gains(gains: &[f64], powers: &[f64]) -> RateVector {
    RateVector(
        gains
            .iter()
            .zip(powers)
            .map(|(g, p)| (p * g).ln_1p() / std::f64::consts::LN_2)
            .collect(),
    )
}

/// DPC rates for the given encoding order (rows of `h` already in that order):
/// `R_k = log2(1 + h_k^T K_k h_k^* / (1 + h_k^T (sum_{i>k} K_i) h_k^*))`.
pub fn dpc_rates(h: &ChannelMatrix, covs: &CovarianceSet) -> Result<RateVector> {
    let k = h.users();
    check_dimension(covs.matrices.len(), k)?;
    if let Some(m) = covs.matrices.iter().find(|m| m.nrows() != h.antennas()) {
        return Err(Error::Dimension(format!(
            "covariance is {}x{} but N = {}",
            m.nrows(),
            m.ncols(),
            h.antennas()
        )));
    }
    let mut rates = vec![0.0; k];
    let mut succeeding = DMatrix::<C64>::zeros(h.antennas(), h.antennas());
    for user in (0..k).rev() {
        let signal = h.quadratic_form(user, &covs.matrices[user]).max(0.0);
        let interference = h.quadratic_form(user, &succeeding).max(0.0);
        rates[user] = (signal / (1.0 + interference)).ln_1p() / std::f64::consts::LN_2;
        succeeding += &covs.matrices[user];
    }
    Ok(RateVector(rates))
}

fn check_dimension(got: usize, users: usize) -> Result<()> {
    if got != users {
        return Err(Error::Dimension(format!(
            "allocation has {got} entries for {users} users"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reconstruction_error(h: &ChannelMatrix, dec: &ZfdpcDecomposition) -> f64 {
        let hp = h.permuted(dec.order()).unwrap();
        let diff = hp.entries().adjoint() - dec.q() * dec.l().adjoint();
        diff.norm() / hp.entries().norm()
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_channel(2, 2, 7).unwrap();
        let b = sample_channel(2, 2, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_channel(2, 2, 8).unwrap());
    }

    #[test]
    fn sampled_entries_have_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        let mean = (0..draws)
            .map(|_| {
                sample_channel_with(1, 1, Fading::Rayleigh, &mut rng)
                    .unwrap()
                    .frobenius_norm_sq()
            })
            .sum::<f64>()
            / draws as f64;
        assert!((mean - 1.0).abs() <= 0.02, "mean |h|^2 = {mean}");
    }

    #[test]
    fn sampling_allows_more_users_than_antennas() {
        let h = sample_channel(3, 2, 1).unwrap();
        assert_eq!((h.users(), h.antennas()), (3, 2));
        let err = zfdpc_decompose(&h, &UserOrder::identity(3)).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn identity_channel_decomposes_to_identity() {
        let h = ChannelMatrix::from_real_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let dec = zfdpc_decompose(&h, &UserOrder::identity(2)).unwrap();
        let eye = DMatrix::<C64>::identity(2, 2);
        assert!((dec.q() - &eye).norm() < 1e-15);
        assert!((dec.l() - &eye).norm() < 1e-15);
        assert_eq!(dec.gains(), &[1.0, 1.0]);
        assert!(!dec.rank_deficient());
    }

    #[test]
    fn duplicate_rows_are_rank_deficient() {
        let h = ChannelMatrix::from_real_rows(&[vec![0.3, -1.2], vec![0.3, -1.2]]).unwrap();
        let dec = zfdpc_decompose(&h, &UserOrder::identity(2)).unwrap();
        assert!(dec.gains()[1] < 1e-20);
        assert!(dec.rank_deficient());
        assert!(reconstruction_error(&h, &dec) < 1e-12);
    }

    #[test]
    fn decomposition_invariants_on_random_channels() {
        for seed in 0..200 {
            let users = 1 + (seed as usize % 4);
            let antennas = users + (seed as usize / 4) % 3;
            let h = sample_channel(users, antennas, seed).unwrap();
            let dec = zfdpc_decompose(&h, &UserOrder::identity(users)).unwrap();
            let gram = dec.q().adjoint() * dec.q();
            assert!((gram - DMatrix::<C64>::identity(users, users))
                .iter()
                .all(|z| z.norm() <= 1e-10));
            assert!(reconstruction_error(&h, &dec) <= 1e-10);
            let lh = h.entries() * dec.q();
            for i in 0..users {
                for k in i + 1..users {
                    assert!(lh[(i, k)].norm() <= 1e-10);
                }
                assert_eq!(dec.l()[(i, i)].im, 0.0);
                assert!(dec.l()[(i, i)].re >= 0.0);
            }
        }
    }

    #[test]
    fn ordering_matches_permuted_decomposition() {
        let h = sample_channel(3, 4, 5).unwrap();
        let order = UserOrder::new(vec![2, 0, 1]).unwrap();
        let a = zfdpc_decompose(&h, &order).unwrap();
        let b = zfdpc_decompose(&h.permuted(&order).unwrap(), &UserOrder::identity(3)).unwrap();
        assert_eq!(a.gains(), b.gains());
        assert!((a.q() - b.q()).norm() == 0.0);
    }

    #[test]
    fn bad_orderings_are_rejected() {
        assert!(UserOrder::new(vec![0, 0]).is_err());
        assert!(UserOrder::new(vec![1, 2]).is_err());
        let h = sample_channel(2, 2, 0).unwrap();
        assert!(zfdpc_decompose(&h, &UserOrder::identity(3)).is_err());
    }

    #[test]
    fn zfdpc_rate_examples() {
        let h = ChannelMatrix::from_real_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let dec = zfdpc_decompose(&h, &UserOrder::identity(2)).unwrap();
        let rates = zfdpc_rates(&dec, &PowerAllocation::new(vec![1.0, 3.0], 4.0).unwrap()).unwrap();
        assert_eq!(rates.0, vec![1.0, 2.0]);
        let zero = zfdpc_rates(&dec, &PowerAllocation::zeros(2, 4.0)).unwrap();
        assert_eq!(zero.0, vec![0.0, 0.0]);

        let mut last = 0.0;
        for p in [0.5, 1.0, 2.0, 8.0] {
            let r = rates_from_gains(&[4.0], &[p]).0[0];
            assert!((r - (1.0 + 4.0 * p).log2()).abs() < 1e-14);
            assert!(r > last);
            last = r;
        }
    }

    #[test]
    fn zfdpc_rates_are_concave_and_nondecreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let step = 1e-3;
        for _ in 0..500 {
            let g: f64 = rng.random_range(0.01..10.0);
            let p: f64 = rng.random_range(step..20.0);
            let f = |x: f64| rates_from_gains(&[g], &[x]).0[0];
            assert!(f(p + step) - f(p) >= 0.0);
            assert!(f(p + step) - 2.0 * f(p) + f(p - step) <= 1e-15);
        }
    }

    #[test]
    fn single_user_mrt_rate() {
        let h = sample_channel(1, 3, 9).unwrap();
        let p = 2.5;
        let row = h.entries().row(0);
        let norm_sq = h.frobenius_norm_sq();
        let cov = DMatrix::from_fn(3, 3, |i, j| row[i].conj() * row[j] * (p / norm_sq));
        let covs = CovarianceSet::new(vec![cov], vec![p]).unwrap();
        let r = dpc_rates(&h, &covs).unwrap();
        assert!((r.0[0] - (1.0 + p * norm_sq).log2()).abs() < 1e-12);
    }

    #[test]
    fn dpc_with_zero_covariances_is_zero() {
        let h = sample_channel(3, 3, 2).unwrap();
        let r = dpc_rates(&h, &CovarianceSet::zeros(3, 3)).unwrap();
        assert_eq!(r.0, vec![0.0; 3]);
    }

    #[test]
    fn dpc_reduces_to_zfdpc_for_zero_forced_covariances() {
        for seed in 0..50 {
            let h = sample_channel(3, 4, seed).unwrap();
            let order = UserOrder::new(vec![1, 2, 0]).unwrap();
            let dec = zfdpc_decompose(&h, &order).unwrap();
            let alloc = PowerAllocation::new(vec![0.7, 1.9, 0.4], 3.0).unwrap();
            let covs = dec.covariances(&alloc).unwrap();
            let dpc = dpc_rates(&h.permuted(&order).unwrap(), &covs).unwrap();
            let zf = zfdpc_rates(&dec, &alloc).unwrap();
            for (a, b) in dpc.0.iter().zip(&zf.0) {
                assert!(*a >= 0.0);
                assert!((a - b).abs() < 1e-10, "dpc {a} vs zfdpc {b}");
            }
        }
    }

    #[test]
    fn invalid_covariances_are_rejected() {
        let neg = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            C64::new(1.0, 0.0),
            C64::new(-0.5, 0.0),
        ]));
        assert!(matches!(
            CovarianceSet::new(vec![neg], vec![2.0]),
            Err(Error::InvalidCovariance { user: 0, .. })
        ));
        let big = DMatrix::<C64>::identity(2, 2);
        assert!(CovarianceSet::new(vec![big.clone()], vec![1.0]).is_err());
        let mut skew = big;
        skew[(0, 1)] = C64::new(0.0, 0.5);
        assert!(CovarianceSet::new(vec![skew], vec![3.0]).is_err());
    }

    #[test]
    fn channel_json_schema_round_trips() {
        let h = sample_channel(2, 3, 4).unwrap();
        let json = serde_json::to_value(&h).unwrap();
        assert_eq!(json["K"], 2);
        assert_eq!(json["N"], 3);
        assert_eq!(json["re"].as_array().unwrap().len(), 2);
        let back: ChannelMatrix = serde_json::from_value(json).unwrap();
        assert_eq!(back, h);
        let bad = serde_json::json!({"K": 2, "N": 1, "re": [[1.0]], "im": [[0.0]]});
        assert!(serde_json::from_value::<ChannelMatrix>(bad).is_err());
    }

    #[test]
    fn allocation_validation() {
        assert!(PowerAllocation::new(vec![1.0, 2.0], 3.0).is_ok());
        assert!(PowerAllocation::new(vec![1.0, 2.1], 3.0).is_err());
        assert!(PowerAllocation::new(vec![-0.1, 1.0], 3.0).is_err());
        assert!(PowerAllocation::new(vec![f64::NAN], 3.0).is_err());
    }
}
