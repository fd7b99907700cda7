//! Monte-Carlo checks of the concentration lemmas, the certificate coverage and
//! the Rademacher lower bound.
//!
//! Every validator runs independent trials on derived seed streams and reduces
//! them in trial order, so verdicts do not depend on the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificates::{
    certify_empirical, certify_population, confidence, tail_bound, Certificate,
};
use crate::complexity::{rademacher_auto, rademacher_expected, LossMatrix, RademacherEstimate};
use crate::erm::{select, true_risks, RiskMode, TieBreak, WindowMode};
use crate::error::{Error, Result};
use crate::hypothesis::{HypothesisClass, LossEnv};
use crate::irf::{burn_in_steps, sample_from, GeneratorSpec, StartLaw};
use crate::metric::SeedSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSettings {
    /// Set from the experiment, not from the `validation` block.
    #[serde(skip)]
    pub risk_mode: RiskMode,
    /// Start law of the trajectories in the lemma 1 and lemma 2 checks.
    pub start: StartLaw,
    /// `ℓ_F^B ≤ tol` for every burn-in standing in for a stationary start.
    pub stationary_tol: f64,
    /// Sign-vector draws when `n` is too large to enumerate.
    pub rademacher_draws: u64,
    /// Trajectories averaged into `R_{n,π}`.
    pub outer_draws: usize,
    pub w_bar: f64,
    pub tie_break: TieBreak,
    #[serde(skip)]
    pub window: WindowMode,
}

impl Default for ValidationSettings {
    fn default() -> Self {
        ValidationSettings {
            risk_mode: RiskMode::Exact,
            start: StartLaw::Point,
            stationary_tol: 1e-9,
            rademacher_draws: 2000,
            outer_draws: 50,
            w_bar: 1.0,
            tie_break: TieBreak::LowestIndex,
            window: WindowMode::Delayed,
        }
    }
}

/// Everything a validator needs besides `n`, `ε`, trials and the seed.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub gen: &'a GeneratorSpec,
    pub class: &'a HypothesisClass,
    pub env: &'a LossEnv,
    pub settings: ValidationSettings,
}

impl Problem<'_> {
    fn stationary(&self) -> StartLaw {
        StartLaw::Stationary {
            tol: self.settings.stationary_tol,
        }
    }

    /// `ℓ_H ℓ_F^B`, the bias of a `B`-step burn-in from any start.
    fn burn_in_bias(&self) -> Result<f64> {
        let lip = self.gen.lip_factor();
        let b = burn_in_steps(lip, self.settings.stationary_tol)?;
        Ok(self.env.ell_h() * lip.powf(b as f64))
    }

    fn risks(&self, seed: SeedSpec) -> Result<(Vec<f64>, f64)> {
        let r = true_risks(
            self.class,
            self.gen,
            self.env,
            self.settings.risk_mode,
            seed,
        )?;
        let se = r.iter().map(|x| x.1).fold(0.0, f64::max);
        Ok((r.into_iter().map(|x| x.0).collect(), se))
    }

    /// Loss matrix of a fresh length-`len` trajectory.
    fn losses(&self, start: StartLaw, len: usize, seed: SeedSpec) -> Result<LossMatrix> {
        let traj = sample_from(self.gen, start, len, seed)?;
        LossMatrix::from_class(self.class, &traj.points, self.env)
    }

    fn expected_rademacher(&self, n: usize, seed: SeedSpec) -> Result<RademacherEstimate> {
        rademacher_expected(
            self.gen,
            self.class,
            self.env,
            n,
            self.settings.outer_draws,
            self.stationary(),
            self.settings.rademacher_draws,
            seed,
        )
    }
}

/// `sup_h |mean of L_h over start..end − er_π(h)|`.
fn phi(m: &LossMatrix, start: usize, end: usize, er: &[f64]) -> f64 {
    m.window_means(start, end)
        .iter()
        .zip(er)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

fn binomial_se(p: f64, trials: usize) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

fn check_run(n: usize, trials: usize) -> Result<()> {
    if n == 0 || trials == 0 {
        return Err(Error::invalid("validators need n >= 1 and trials >= 1"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub phi: f64,
    pub rademacher: Option<f64>,
    pub threshold: Option<f64>,
    pub event: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatorReport {
    pub validator: String,
    pub n: usize,
    pub epsilon: Option<f64>,
    pub trials: usize,
    /// Frequency or mean that is compared with `bound`.
    pub statistic: f64,
    pub statistic_se: f64,
    pub bound: f64,
    /// Whether the raw statistic satisfies the bound with no allowance.
    pub raw_pass: bool,
    /// The SE-adjusted verdict.
    pub passed: bool,
    pub details: Vec<(String, f64)>,
    #[serde(skip)]
    pub rows: Vec<TrialRow>,
}

/// `P(φ ≥ E φ + ε) ≤ exp(−2ε²n/C²)` with `φ = sup_h |êr_{n,2n}(h) − er_π(h)|`.
///
/// One batch of `trials` trajectories estimates `E φ`; an independent batch
/// measures the exceedance frequency.
pub fn validate_lemma1(
    p: &Problem,
    n: usize,
    epsilon: f64,
    trials: usize,
    seed: SeedSpec,
) -> Result<ValidatorReport> {
    check_run(n, trials)?;
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::invalid(format!(
            "epsilon must lie in [0, 1), got {epsilon}"
        )));
    }
    let (er, _) = p.risks(seed.derive(2))?;
    let batch = |s: SeedSpec| -> Result<Vec<f64>> {
        (0..trials)
            .into_par_iter()
            .map(|t| {
                Ok(phi(
                    &p.losses(p.settings.start, 2 * n, s.derive(t as u64))?,
                    n,
                    2 * n,
                    &er,
                ))
            })
            .collect()
    };
    let centering = batch(seed.derive(0))?;
    let tail = batch(seed.derive(1))?;
    let (mean, _) = mean_and_se(&centering);
    let threshold = mean + epsilon;
    let rows: Vec<TrialRow> = tail
        .iter()
        .enumerate()
        .map(|(t, &f)| TrialRow {
            trial: t,
            phi: f,
            rademacher: None,
            threshold: Some(threshold),
            event: Some(f >= threshold),
        })
        .collect();
    let freq = rows.iter().filter(|r| r.event == Some(true)).count() as f64 / trials as f64;
    let bound = tail_bound(epsilon, n as u64, p.env.ell_h(), p.gen.lip_factor());
    let se = binomial_se(bound, trials);
    Ok(ValidatorReport {
        validator: "lemma1".into(),
        n,
        epsilon: Some(epsilon),
        trials,
        statistic: freq,
        statistic_se: se,
        bound,
        raw_pass: freq <= bound,
        passed: freq <= bound + 3.0 * se,
        details: vec![("mean_phi".into(), mean)],
        rows,
    })
}

/// `E φ(Z_n..Z_{2n−1}) ≤ 2R_{n,π} + ℓ_H ℓ_F^n W̄`.
///
/// `R_{n,π}` comes from burned-in trajectories; the burn-in bias `ℓ_H ℓ_F^B`
/// is added to it.
pub fn validate_lemma2(
    p: &Problem,
    n: usize,
    trials: usize,
    seed: SeedSpec,
) -> Result<ValidatorReport> {
    check_run(n, trials)?;
    let (er, er_se) = p.risks(seed.derive(2))?;
    let phis: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            Ok(phi(
                &p.losses(p.settings.start, 2 * n, seed.derive(0).derive(t as u64))?,
                n,
                2 * n,
                &er,
            ))
        })
        .collect::<Result<_>>()?;
    let (mean, se_phi) = mean_and_se(&phis);
    let r = p.expected_rademacher(n, seed.derive(3))?;
    let bias = p.burn_in_bias()?;
    let w_term = p.env.ell_h() * p.gen.lip_factor().powf(n as f64) * p.settings.w_bar;
    let bound = 2.0 * (r.value + bias) + w_term;
    let se = (se_phi.powi(2) + (2.0 * r.std_error).powi(2) + er_se.powi(2)).sqrt();
    let rows = phis
        .iter()
        .enumerate()
        .map(|(t, &f)| TrialRow {
            trial: t,
            phi: f,
            rademacher: None,
            threshold: None,
            event: None,
        })
        .collect();
    Ok(ValidatorReport {
        validator: "lemma2".into(),
        n,
        epsilon: None,
        trials,
        statistic: mean,
        statistic_se: se,
        bound,
        raw_pass: mean <= bound,
        passed: mean <= bound + 3.0 * se,
        details: vec![
            ("rademacher".into(), r.value),
            ("rademacher_se".into(), r.std_error),
            ("burn_in_bias".into(), bias),
            ("wasserstein_term".into(), w_term),
        ],
        rows,
    })
}

/// `P^π(φ ≤ 2R̂_{n,(Z_0..Z_{n−1})} + 3ε) ≥ 1 − exp(−2ε²n/C²)` from burned-in starts.
pub fn validate_lemma3(
    p: &Problem,
    n: usize,
    epsilon: f64,
    trials: usize,
    seed: SeedSpec,
) -> Result<ValidatorReport> {
    check_run(n, trials)?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    let (er, _) = p.risks(seed.derive(2))?;
    let rows: Vec<TrialRow> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let s = seed.derive(0).derive(t as u64);
            let m = p.losses(p.stationary(), 2 * n, s.derive(0))?;
            let r_hat = rademacher_auto(
                &m.columns(0, n)?,
                p.settings.rademacher_draws,
                s.derive(1),
                false,
            )?
            .value;
            let f = phi(&m, n, 2 * n, &er);
            let threshold = 2.0 * r_hat + 3.0 * epsilon;
            Ok(TrialRow {
                trial: t,
                phi: f,
                rademacher: Some(r_hat),
                threshold: Some(threshold),
                event: Some(f <= threshold),
            })
        })
        .collect::<Result<_>>()?;
    let freq = rows.iter().filter(|r| r.event == Some(true)).count() as f64 / trials as f64;
    let bound = (1.0 - tail_bound(epsilon, n as u64, p.env.ell_h(), p.gen.lip_factor())).max(0.0);
    let se = binomial_se(bound, trials);
    Ok(ValidatorReport {
        validator: "lemma3".into(),
        n,
        epsilon: Some(epsilon),
        trials,
        statistic: freq,
        statistic_se: se,
        bound,
        raw_pass: freq >= bound,
        passed: freq >= bound - 3.0 * se,
        details: vec![],
        rows,
    })
}

/// `E^π φ(Z_0..Z_{n−1}) ≥ ½R_{n,π} − L_H √(ln 2 / (2n))`.
pub fn validate_remark(
    p: &Problem,
    n: usize,
    trials: usize,
    seed: SeedSpec,
) -> Result<ValidatorReport> {
    check_run(n, trials)?;
    let (er, er_se) = p.risks(seed.derive(2))?;
    let phis: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            Ok(phi(
                &p.losses(p.stationary(), n, seed.derive(0).derive(t as u64))?,
                0,
                n,
                &er,
            ))
        })
        .collect::<Result<_>>()?;
    let (mean, se_phi) = mean_and_se(&phis);
    let r = p.expected_rademacher(n, seed.derive(3))?;
    let bias = p.burn_in_bias()?;
    let slack = p.env.sup_loss() * (2f64.ln() / (2.0 * n as f64)).sqrt();
    let bound = 0.5 * r.value - slack;
    let se = (se_phi.powi(2) + (0.5 * r.std_error).powi(2) + er_se.powi(2)).sqrt();
    let rows = phis
        .iter()
        .enumerate()
        .map(|(t, &f)| TrialRow {
            trial: t,
            phi: f,
            rademacher: None,
            threshold: None,
            event: None,
        })
        .collect();
    Ok(ValidatorReport {
        validator: "remark".into(),
        n,
        epsilon: None,
        trials,
        statistic: mean,
        statistic_se: se,
        bound,
        raw_pass: mean >= bound,
        // φ and R are both measured after a burn-in, each off by at most the bias.
        passed: mean + 3.0 * se >= bound - 1.5 * bias,
        details: vec![
            ("rademacher".into(), r.value),
            ("rademacher_se".into(), r.std_error),
            ("sup_loss".into(), p.env.sup_loss()),
            ("burn_in_bias".into(), bias),
        ],
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub trial: usize,
    pub deviation: f64,
    pub radius_pop: f64,
    pub radius_emp: f64,
    pub covered_pop: bool,
    pub covered_emp: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub n: usize,
    pub epsilon: f64,
    pub trials: usize,
    pub window: WindowMode,
    pub confidence: f64,
    pub delta: f64,
    pub coverage_pop: f64,
    pub coverage_emp: f64,
    pub binomial_se: f64,
    pub passed_pop: bool,
    pub passed_emp: bool,
    pub passed: bool,
    pub opt_risk: f64,
    /// `R_{n,π}` as used in the population radius, margins included.
    pub rademacher_pop: f64,
    pub population: Certificate,
    pub mean_radius_emp: f64,
    #[serde(skip)]
    pub rows: Vec<CoverageRow>,
}

/// End-to-end check of both certificates around ε-ERM.
///
/// Trajectories of length `2n` start from a burn-in. The population radius uses
/// the burned-in estimate of `R_{n,π}` plus three standard errors and the
/// burn-in bias; the empirical radius uses `R̂` on `Z_0..Z_{n−1}` of each trial.
pub fn coverage_experiment(
    p: &Problem,
    n: usize,
    epsilon: f64,
    trials: usize,
    seed: SeedSpec,
) -> Result<CoverageReport> {
    check_run(n, trials)?;
    let ell_h = p.env.ell_h();
    let ell_f = p.gen.lip_factor();
    let (er, _) = p.risks(seed.derive(2))?;
    let opt = er.iter().copied().fold(f64::INFINITY, f64::min);
    let r = p.expected_rademacher(n, seed.derive(3))?;
    let r_pop = r.value.max(0.0) + 3.0 * r.std_error + p.burn_in_bias()?;
    let population = certify_population(r_pop, ell_h, ell_f, p.settings.w_bar, n as u64, epsilon)?;
    let (w0, w1) = p.settings.window.window(n);

    let rows: Vec<CoverageRow> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let s = seed.derive(0).derive(t as u64);
            let m = p.losses(p.stationary(), 2 * n, s.derive(0))?;
            let (idx, _) = select(&m.window_means(w0, w1), epsilon, p.settings.tie_break)?;
            let deviation = (er[idx] - opt).abs();
            let r_hat = rademacher_auto(
                &m.columns(0, n)?,
                p.settings.rademacher_draws,
                s.derive(1),
                false,
            )?
            .value;
            let emp = certify_empirical(r_hat.max(0.0), ell_h, ell_f, n as u64, epsilon)?;
            Ok(CoverageRow {
                trial: t,
                deviation,
                radius_pop: population.radius,
                radius_emp: emp.radius,
                covered_pop: deviation < population.radius,
                covered_emp: deviation < emp.radius,
            })
        })
        .collect::<Result<_>>()?;

    let k = trials as f64;
    let coverage_pop = rows.iter().filter(|r| r.covered_pop).count() as f64 / k;
    let coverage_emp = rows.iter().filter(|r| r.covered_emp).count() as f64 / k;
    let conf = confidence(epsilon, n as u64, ell_h, ell_f);
    let se = binomial_se(conf, trials);
    let passed_pop = coverage_pop >= conf - 3.0 * se;
    let passed_emp = coverage_emp >= conf - 3.0 * se;
    Ok(CoverageReport {
        n,
        epsilon,
        trials,
        window: p.settings.window,
        confidence: conf,
        delta: 1.0 - conf,
        coverage_pop,
        coverage_emp,
        binomial_se: se,
        passed_pop,
        passed_emp,
        passed: passed_pop && passed_emp,
        opt_risk: opt,
        rademacher_pop: r_pop,
        population,
        mean_radius_emp: rows.iter().map(|r| r.radius_emp).sum::<f64>() / k,
        rows,
    })
}
