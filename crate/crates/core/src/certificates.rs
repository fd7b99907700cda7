//! Generalization certificates and their inversions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    /// `4R_{n,π} + 2ℓ_H ℓ_F^n W̄ + 4ε`.
    Population,
    /// `4R̂_n + 6ε`.
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ingredients {
    /// `4R` or `4R̂`.
    pub rademacher_term: f64,
    /// `2ℓ_H ℓ_F^n W̄`; zero for the empirical form.
    pub wasserstein_term: f64,
    /// `4ε` or `6ε`.
    pub epsilon_term: f64,
    pub rademacher: f64,
    pub w_bar: Option<f64>,
    pub epsilon: f64,
    pub n: u64,
    pub ell_h: f64,
    pub ell_f: f64,
}

/// `|er_π(A^ε) − opt_π(H)| < radius` with probability at least `confidence`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub form: Form,
    pub radius: f64,
    pub confidence: f64,
    pub ingredients: Ingredients,
}

impl Certificate {
    /// Radius and confidence recomputed from the stored ingredients.
    pub fn recompute(&self) -> (f64, f64) {
        let i = &self.ingredients;
        (
            i.rademacher_term + i.wasserstein_term + i.epsilon_term,
            confidence(i.epsilon, i.n, i.ell_h, i.ell_f),
        )
    }
}

fn check_constants(ell_h: f64, ell_f: f64) -> Result<()> {
    if !(ell_f.is_finite() && ell_f >= 0.0) {
        return Err(Error::invalid(format!(
            "ell_F must be finite and non-negative, got {ell_f}"
        )));
    }
    if ell_f >= 1.0 {
        return Err(Error::Assumption(format!(
            "(A1) requires ell_F < 1, got ell_F = {ell_f}"
        )));
    }
    if !(ell_h.is_finite() && ell_h > 0.0) {
        return Err(Error::invalid(format!(
            "ell_H must be positive, got {ell_h}"
        )));
    }
    Ok(())
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    Ok(())
}

/// `ℓ_H / (1 − ℓ_F)`.
pub fn concentration_constant(ell_h: f64, ell_f: f64) -> f64 {
    ell_h / (1.0 - ell_f)
}

/// `exp(−2ε²n / (ℓ_H/(1−ℓ_F))²)`.
pub fn tail_bound(epsilon: f64, n: u64, ell_h: f64, ell_f: f64) -> f64 {
    let c = concentration_constant(ell_h, ell_f);
    (-2.0 * epsilon * epsilon * n as f64 / (c * c)).exp()
}

/// `max(0, 1 − 2 exp(−2ε²n / (ℓ_H/(1−ℓ_F))²))`.
pub fn confidence(epsilon: f64, n: u64, ell_h: f64, ell_f: f64) -> f64 {
    (1.0 - 2.0 * tail_bound(epsilon, n, ell_h, ell_f)).max(0.0)
}

pub fn certify_population(
    r: f64,
    ell_h: f64,
    ell_f: f64,
    w_bar: f64,
    n: u64,
    epsilon: f64,
) -> Result<Certificate> {
    check_constants(ell_h, ell_f)?;
    check_epsilon(epsilon)?;
    if !(r.is_finite() && r >= 0.0) {
        return Err(Error::invalid(format!(
            "Rademacher term must be non-negative, got {r}"
        )));
    }
    if !(0.0..=1.0).contains(&w_bar) {
        return Err(Error::invalid(format!(
            "W_bar must lie in [0, 1], got {w_bar}"
        )));
    }
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let ingredients = Ingredients {
        rademacher_term: 4.0 * r,
        wasserstein_term: 2.0 * ell_h * ell_f.powf(n as f64) * w_bar,
        epsilon_term: 4.0 * epsilon,
        rademacher: r,
        w_bar: Some(w_bar),
        epsilon,
        n,
        ell_h,
        ell_f,
    };
    Ok(finish(Form::Population, ingredients))
}

pub fn certify_empirical(
    r_hat: f64,
    ell_h: f64,
    ell_f: f64,
    n: u64,
    epsilon: f64,
) -> Result<Certificate> {
    check_constants(ell_h, ell_f)?;
    check_epsilon(epsilon)?;
    if !(r_hat.is_finite() && r_hat >= 0.0) {
        return Err(Error::invalid(format!(
            "empirical Rademacher term must be non-negative, got {r_hat}"
        )));
    }
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let ingredients = Ingredients {
        rademacher_term: 4.0 * r_hat,
        wasserstein_term: 0.0,
        epsilon_term: 6.0 * epsilon,
        rademacher: r_hat,
        w_bar: None,
        epsilon,
        n,
        ell_h,
        ell_f,
    };
    Ok(finish(Form::Empirical, ingredients))
}

fn finish(form: Form, ingredients: Ingredients) -> Certificate {
    let mut cert = Certificate {
        form,
        radius: 0.0,
        confidence: 0.0,
        ingredients,
    };
    (cert.radius, cert.confidence) = cert.recompute();
    cert
}

/// The `ε` at which the certificate holds with probability `1 − δ`.
pub fn invert_epsilon(delta: f64, n: u64, ell_h: f64, ell_f: f64) -> Result<f64> {
    check_constants(ell_h, ell_f)?;
    if !(delta > 0.0 && delta < 1.0) || n == 0 {
        return Err(Error::invalid(
            "invert_epsilon needs delta in (0, 1) and n >= 1",
        ));
    }
    Ok(concentration_constant(ell_h, ell_f) * ((2.0 / delta).ln() / (2.0 * n as f64)).sqrt())
}

/// Smallest `n` with `confidence(ε, n) ≥ 1 − δ`.
pub fn sample_complexity(delta: f64, epsilon: f64, ell_h: f64, ell_f: f64) -> Result<u64> {
    check_constants(ell_h, ell_f)?;
    check_epsilon(epsilon)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let c = concentration_constant(ell_h, ell_f);
    let raw = c * c * (2.0 / delta).ln() / (2.0 * epsilon * epsilon);
    let mut n = (raw.ceil() as u64).max(1);
    // The closed form can be off by one ulp-driven step either way.
    while n > 1 && 2.0 * tail_bound(epsilon, n - 1, ell_h, ell_f) <= delta {
        n -= 1;
    }
    while 2.0 * tail_bound(epsilon, n, ell_h, ell_f) > delta {
        n += 1;
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_epsilon_term() {
        let c = certify_population(0.0, 1.0, 0.5, 0.0, 10, 0.1).unwrap();
        assert!((c.radius - 0.4).abs() < 1e-15);
        let e = certify_empirical(0.0, 1.0, 0.5, 10, 0.1).unwrap();
        assert!((e.radius - 0.6).abs() < 1e-15);
    }

    #[test]
    fn worked_population_values() {
        let c = certify_population(0.05, 1.0, 0.5, 1.0, 2000, 0.1).unwrap();
        let expected = 0.2 + 2.0 * 0.5f64.powi(2000) + 0.4;
        assert!((c.radius - expected).abs() < 1e-15);
        assert!((c.confidence - (1.0 - 2.0 * (-10f64).exp())).abs() < 1e-15);
        assert!((c.confidence - 0.999909).abs() < 5e-7);
    }

    #[test]
    fn empirical_worked_value() {
        let c = certify_empirical(0.25, 1.0, 0.5, 100, 0.05).unwrap();
        assert!((c.radius - 1.3).abs() < 1e-15);
        let p = certify_population(0.25, 1.0, 0.5, 1.0, 100, 0.05).unwrap();
        assert_eq!(c.confidence, p.confidence);
    }

    #[test]
    fn iid_shape() {
        let c = certify_population(0.1, 2.0, 0.0, 1.0, 1, 0.1).unwrap();
        assert_eq!(c.ingredients.wasserstein_term, 0.0);
        assert!((tail_bound(0.1, 500, 2.0, 0.0) - (-2.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn recompute_is_bit_exact() {
        let c = certify_population(0.0731, 1.7, 0.35, 0.8, 333, 0.07).unwrap();
        assert_eq!(c.recompute(), (c.radius, c.confidence));
    }

    #[test]
    fn rejects_non_contractive() {
        assert!(matches!(
            certify_population(0.0, 1.0, 1.0, 1.0, 10, 0.1),
            Err(Error::Assumption(_))
        ));
        assert!(matches!(
            certify_empirical(0.0, 1.0, 1.3, 10, 0.1),
            Err(Error::Assumption(_))
        ));
    }

    #[test]
    fn inversions() {
        let eps = invert_epsilon(0.05, 1000, 0.5, 0.5).unwrap();
        assert!((eps - (40f64.ln() / 2000.0).sqrt()).abs() < 1e-15);
        assert!((eps - 0.04295).abs() < 5e-6);
        let n = sample_complexity(0.05, 0.04295, 0.5, 0.5).unwrap();
        assert!((999..=1001).contains(&n), "{n}");
        let n = 37;
        let delta = 2.0 * (-2.0 * n as f64).exp();
        assert!((invert_epsilon(delta, n, 0.5, 0.5).unwrap() - 1.0).abs() < 1e-12);
        let e1 = invert_epsilon(0.1, 400, 1.0, 0.2).unwrap();
        let e4 = invert_epsilon(0.1, 1600, 1.0, 0.2).unwrap();
        assert!((e1 / e4 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn confidence_monotone() {
        let a = confidence(0.1, 100, 1.0, 0.3);
        assert!(confidence(0.1, 101, 1.0, 0.3) > a);
        assert!(confidence(0.11, 100, 1.0, 0.3) > a);
    }
}
