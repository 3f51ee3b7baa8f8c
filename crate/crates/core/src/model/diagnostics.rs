//! Chain diagnostics.

use super::{Chain, ModelState};

/// Selects one scalar parameter from a [`ModelState`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSelector {
    Beta(usize),
    Alpha0,
    Alpha1,
    Tau2,
    Sigma2,
    Phi,
}

impl ParamSelector {
    pub fn get(self, s: &ModelState) -> f64 {
        match self {
            ParamSelector::Beta(i) => s.beta[i],
            ParamSelector::Alpha0 => s.alpha0,
            ParamSelector::Alpha1 => s.alpha1,
            ParamSelector::Tau2 => s.theta.tau2,
            ParamSelector::Sigma2 => s.theta.sigma2,
            ParamSelector::Phi => s.theta.phi,
        }
    }
}

/// Effective sample size by Geyer's initial positive sequence.
///
/// Autocorrelations are summed in adjacent pairs `Γ_k = ρ_2k + ρ_2k+1` until
/// the first non-positive pair; `ESS = N / (−1 + 2 Σ Γ_k)`, clamped to
/// `[1, N]`. A constant series has ESS 1.
pub fn effective_sample_size(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return n as f64;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let centred: alloc::vec::Vec<f64> = values.iter().map(|v| v - mean).collect();
    let c0 = centred.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if !(c0 > 0.0) || !c0.is_finite() {
        return 1.0;
    }
    let autocorr = |lag: usize| -> f64 {
        let s: f64 = centred[..n - lag]
            .iter()
            .zip(&centred[lag..])
            .map(|(a, b)| a * b)
            .sum();
        s / n as f64 / c0
    };
    let mut sum_pairs = 0.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = autocorr(2 * k) + autocorr(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        sum_pairs += pair;
        k += 1;
    }
    let tau = -1.0 + 2.0 * sum_pairs;
    (n as f64 / tau.max(1e-12)).clamp(1.0, n as f64)
}

impl Chain {
    /// ESS of one parameter over the retained states.
    pub fn ess(&self, sel: ParamSelector) -> f64 {
        effective_sample_size(&self.trace(sel))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    #[test]
    fn iid_sequence_is_nearly_full() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = (0..10_000).map(|_| r.sample(StandardNormal)).collect();
        let ess = effective_sample_size(&v);
        assert!((8_000.0..=10_000.0).contains(&ess), "{ess}");
    }

    #[test]
    fn ar1_matches_analytic_factor() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let rho = 0.9;
        let n = 20_000;
        let mut x = 0.0;
        let v: Vec<f64> = (0..n)
            .map(|_| {
                x = rho * x + r.sample::<f64, _>(StandardNormal);
                x
            })
            .collect();
        let expected = n as f64 * (1.0 - rho) / (1.0 + rho);
        let ess = effective_sample_size(&v);
        assert!((ess / expected - 1.0).abs() < 0.3, "{ess} vs {expected}");
    }

    #[test]
    fn constant_sequence_floors_at_one() {
        assert_eq!(effective_sample_size(&[3.0; 500]), 1.0);
    }
}
