//! Fairness measures over rate vectors.
//!
//! Both measures act on the normalized rate vector `gamma = R / sum(R)`.
//! Jain's index is quadratic in the angle between `gamma` and the equal-share
//! vector `e = 1/K`, which makes it nearly flat close to equal rates. The l1
//! measure `F = 1 - K/(2(K-1)) ||gamma - e||_1` is linear there instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rate shares summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedRateVector(Vec<f64>);

impl NormalizedRateVector {
    /// Wraps shares that are already normalized (nonnegative, summing to 1 within `1e-12`).
    pub fn from_shares(shares: Vec<f64>) -> Result<Self> {
        if shares.is_empty() {
            return Err(Error::InvalidArgument("empty share vector".into()));
        }
        if shares.iter().any(|&s| s < 0.0 || !s.is_finite()) {
            return Err(Error::InvalidArgument(
                "shares must be finite and >= 0".into(),
            ));
        }
        let total: f64 = shares.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "shares sum to {total}, not 1"
            )));
        }
        Ok(Self(shares))
    }

    pub fn shares(&self) -> &[f64] {
        &self.0
    }

    pub fn users(&self) -> usize {
        self.0.len()
    }
}

/// `gamma_k = R_k / sum_i R_i`.
pub fn normalize(rates: &[f64]) -> Result<NormalizedRateVector> {
    if rates.is_empty() {
        return Err(Error::InvalidArgument("empty rate vector".into()));
    }
    if rates.iter().any(|&r| r < 0.0 || !r.is_finite()) {
        return Err(Error::InvalidArgument(
            "rates must be finite and >= 0".into(),
        ));
    }
    let total: f64 = rates.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroSumRate);
    }
    Ok(NormalizedRateVector(
        rates.iter().map(|r| r / total).collect(),
    ))
}

/// Jain's index `1 / (K ||gamma||_2^2)`, in `[1/K, 1]`.
pub fn jain_index(gamma: &NormalizedRateVector) -> f64 {
    let k = gamma.users() as f64;
    let norm_sq: f64 = gamma.0.iter().map(|g| g * g).sum();
    1.0 / (k * norm_sq)
}

/// `cos^2` of the angle between `gamma` and the equal-share vector.
///
/// Evaluated from the inner-product definition; it agrees with [`jain_index`].
pub fn jain_cos_identity(gamma: &NormalizedRateVector) -> f64 {
    let k = gamma.users() as f64;
    let e = 1.0 / k;
    let inner: f64 = gamma.0.iter().map(|g| g * e).sum();
    let e_norm_sq = k * e * e;
    let g_norm_sq: f64 = gamma.0.iter().map(|g| g * g).sum();
    inner * inner / (e_norm_sq * g_norm_sq)
}

/// The l1 fairness measure, in `[0, 1]`. Undefined for a single user.
pub fn l1_fairness(gamma: &NormalizedRateVector) -> Result<f64> {
    let k = gamma.users();
    if k < 2 {
        return Err(Error::UndefinedForSingleUser);
    }
    let kf = k as f64;
    let e = 1.0 / kf;
    let distance: f64 = gamma.0.iter().map(|g| (g - e).abs()).sum();
    Ok(1.0 - kf / (2.0 * (kf - 1.0)) * distance)
}

/// Both measures of a rate vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessPair {
    pub l1: f64,
    pub jain: f64,
}

pub fn measure(rates: &[f64]) -> Result<FairnessPair> {
    let gamma = normalize(rates)?;
    Ok(FairnessPair {
        l1: l1_fairness(&gamma)?,
        jain: jain_index(&gamma),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gamma(v: &[f64]) -> NormalizedRateVector {
        NormalizedRateVector::from_shares(v.to_vec()).unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[3.0, 1.0]).unwrap().shares(), &[0.75, 0.25]);
        let eq = normalize(&[2.5; 4]).unwrap();
        assert!(eq.shares().iter().all(|&s| s == 0.25));
        assert_eq!(normalize(&[0.0, 0.0]), Err(Error::ZeroSumRate));
        assert!(normalize(&[-1.0, 2.0]).is_err());
    }

    #[test]
    fn jain_examples() {
        for k in 1..10 {
            let e = normalize(&vec![1.0; k]).unwrap();
            assert!((jain_index(&e) - 1.0).abs() < 1e-15);
            assert!((jain_cos_identity(&e) - 1.0).abs() < 1e-15);
        }
        assert_eq!(jain_index(&gamma(&[1.0, 0.0])), 0.5);
        assert!((jain_cos_identity(&gamma(&[1.0, 0.0])) - 0.5).abs() < 1e-15);
        assert!((jain_index(&gamma(&[0.75, 0.25])) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn l1_examples() {
        assert_eq!(l1_fairness(&gamma(&[0.5, 0.5])).unwrap(), 1.0);
        let e = normalize(&[1.0; 5]).unwrap();
        assert!((l1_fairness(&e).unwrap() - 1.0).abs() < 1e-15);
        assert!(l1_fairness(&gamma(&[1.0, 0.0, 0.0, 0.0])).unwrap().abs() < 1e-15);
        assert_eq!(l1_fairness(&gamma(&[0.75, 0.25])).unwrap(), 0.5);
        assert_eq!(
            l1_fairness(&gamma(&[1.0])),
            Err(Error::UndefinedForSingleUser)
        );
    }

    #[test]
    fn equal_shares_saturate_as_users_grow() {
        for k in [2, 10, 100, 1000] {
            let e = normalize(&vec![3.0; k]).unwrap();
            assert!((l1_fairness(&e).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn moving_mass_toward_the_mean_does_not_decrease_l1() {
        let before = gamma(&[0.5, 0.3, 0.15, 0.05]);
        let after = gamma(&[0.45, 0.3, 0.15, 0.10]);
        assert!(l1_fairness(&after).unwrap() >= l1_fairness(&before).unwrap());
    }

    fn shares(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, k)
            .prop_filter("nonzero", |v| v.iter().sum::<f64>() > 1e-6)
    }

    proptest! {
        #[test]
        fn measures_are_scale_invariant(rates in (2usize..8).prop_flat_map(shares), lambda in 1e-3f64..1e3) {
            let scaled: Vec<f64> = rates.iter().map(|r| r * lambda).collect();
            let a = measure(&rates).unwrap();
            let b = measure(&scaled).unwrap();
            prop_assert!((a.l1 - b.l1).abs() <= 1e-12);
            prop_assert!((a.jain - b.jain).abs() <= 1e-12);
        }

        #[test]
        fn bounds_and_identity(rates in (2usize..8).prop_flat_map(shares)) {
            let g = normalize(&rates).unwrap();
            let k = g.users() as f64;
            let j = jain_index(&g);
            let f = l1_fairness(&g).unwrap();
            prop_assert!(j >= 1.0 / k - 1e-12 && j <= 1.0 + 1e-12);
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&f));
            prop_assert!((jain_cos_identity(&g) - j).abs() <= 1e-12);
        }

        #[test]
        fn transfer_toward_mean_does_not_decrease_l1(
            rates in (3usize..8).prop_flat_map(shares),
            frac in 0.0f64..1.0,
        ) {
            let g = normalize(&rates).unwrap();
            let e = 1.0 / g.users() as f64;
            let s = g.shares();
            let hi = (0..s.len()).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
            let lo = (0..s.len()).min_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
            prop_assume!(s[hi] > e && s[lo] < e);
            let delta = frac * (s[hi] - e).min(e - s[lo]);
            let mut moved = s.to_vec();
            moved[hi] -= delta;
            moved[lo] += delta;
            let total: f64 = moved.iter().sum();
            moved.iter_mut().for_each(|m| *m /= total);
            let after = NormalizedRateVector::from_shares(moved).unwrap();
            prop_assert!(l1_fairness(&after).unwrap() >= l1_fairness(&g).unwrap() - 1e-12);
        }
    }
}
