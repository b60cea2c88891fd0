//! Landmark-type probability updates for the mixed (position, type) state.

use serde::{Deserialize, Serialize};

/// How type probabilities react to a misdetection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissedTypeRule {
    /// `psi ∝ 1 - p_D * psi`
    #[default]
    Complement,
    /// `psi ∝ (1 - p_D) * psi`, the Bayes-consistent factorization.
    Factored,
}

/// Normalizes in place; falls back to uniform (with a warning) if the mass vanished.
pub fn normalize(weights: &mut [f64]) {
    let total: f64 = weights.iter().sum();
    if total > 0.0 && total.is_finite() {
        for w in weights.iter_mut() {
            *w /= total;
        }
    } else if !weights.is_empty() {
        log::warn!("type posterior has no mass, falling back to uniform");
        let u = 1.0 / weights.len() as f64;
        weights.fill(u);
    }
}

/// Type posterior after a detection, from log-likelihoods `ln N(z; h^ξ, S^ξ)`.
pub fn update_detected(prior: &[f64], detection: &[f64], log_likelihood: &[f64]) -> Vec<f64> {
    assert!(prior.len() == detection.len() && prior.len() == log_likelihood.len());
    let logs: Vec<f64> = prior
        .iter()
        .zip(detection)
        .zip(log_likelihood)
        .map(|((psi, pd), ll)| (psi * pd).ln() + ll)
        .collect();
    let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = if peak.is_finite() {
        logs.iter().map(|l| (l - peak).exp()).collect()
    } else {
        vec![0.0; logs.len()]
    };
    normalize(&mut out);
    out
}

/// Type posterior after a misdetection.
pub fn update_missed(prior: &[f64], detection: &[f64], rule: MissedTypeRule) -> Vec<f64> {
    assert_eq!(prior.len(), detection.len());
    let mut out: Vec<f64> = prior
        .iter()
        .zip(detection)
        .map(|(psi, pd)| match rule {
            MissedTypeRule::Complement => 1.0 - pd * psi,
            MissedTypeRule::Factored => (1.0 - pd) * psi,
        })
        .collect();
    normalize(&mut out);
    out
}

/// Birth type probabilities from the per-type birth weights; `None` if all vanish.
pub fn birth_type_probs(rho: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = rho.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    Some(rho.iter().map(|r| r / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn single_type_is_certain() {
        assert_eq!(update_detected(&[1.0], &[0.9], &[-3.0]), [1.0]);
        assert_eq!(update_missed(&[1.0], &[0.9], MissedTypeRule::Complement), [1.0]);
        assert_eq!(update_missed(&[1.0], &[0.9], MissedTypeRule::Factored), [1.0]);
    }

    #[test]
    fn detection_symmetry_and_ratio() {
        let sym = update_detected(&[0.5, 0.5], &[0.9, 0.9], &[-2.0, -2.0]);
        assert!(close(&sym, &[0.5, 0.5]));
        let ratio = update_detected(&[0.5, 0.5], &[0.9, 0.9], &[4f64.ln(), 0.0]);
        assert!(close(&ratio, &[0.8, 0.2]));
    }

    #[test]
    fn detection_with_zero_probability_type() {
        let out = update_detected(&[0.3, 0.7], &[0.9, 0.0], &[-1.0, 5.0]);
        assert!(close(&out, &[1.0, 0.0]));
    }

    #[test]
    fn missed_shifts_toward_low_detection() {
        let prior = [0.6, 0.4];
        let pd = [0.9, 0.1];
        for rule in [MissedTypeRule::Complement, MissedTypeRule::Factored] {
            let out = update_missed(&prior, &pd, rule);
            assert!(out[0] <= prior[0]);
            assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        // complement: [1 - 0.54, 1 - 0.04] = [0.46, 0.96]
        let complement = update_missed(&prior, &pd, MissedTypeRule::Complement);
        assert!(close(&complement, &[0.46 / 1.42, 0.96 / 1.42]));
        // factored: [0.06, 0.36]
        let factored = update_missed(&prior, &pd, MissedTypeRule::Factored);
        assert!(close(&factored, &[0.06 / 0.42, 0.36 / 0.42]));
    }

    #[test]
    fn birth_probabilities() {
        assert_eq!(birth_type_probs(&[0.0, 2.5e-3]).unwrap(), [0.0, 1.0]);
        assert!(close(&birth_type_probs(&[3e-4, 1e-4]).unwrap(), &[0.75, 0.25]));
        assert!(birth_type_probs(&[0.0, 0.0]).is_none());
    }

    #[test]
    fn collapsed_mass_falls_back_to_uniform() {
        let out = update_missed(&[0.5, 0.5], &[1.0, 1.0], MissedTypeRule::Factored);
        assert!(close(&out, &[0.5, 0.5]));
    }
}
