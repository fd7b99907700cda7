//! Empirical risks over trajectory windows, ε-ERM and risks under `π`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypothesis::{loss_at, Hypothesis, HypothesisClass, LossEnv};
use crate::irf::{burn_in_steps, sample_chain_after_burn_in, GeneratorSpec, Trajectory};
use crate::metric::SeedSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Lowest member index among all ε-minimizers.
    #[default]
    LowestIndex,
    /// Lowest member index among the exact minimizers.
    FirstFound,
}

/// Which half of a length-`2n` trajectory the learner is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// `Z_n, …, Z_{2n−1}`.
    #[default]
    Delayed,
    /// `Z_0, …, Z_{n−1}`.
    #[serde(alias = "paper-literal")]
    PaperLiteral,
}

impl WindowMode {
    pub fn window(self, n: usize) -> (usize, usize) {
        match self {
            WindowMode::Delayed => (n, 2 * n),
            WindowMode::PaperLiteral => (0, n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub hypothesis_id: String,
    pub index: usize,
    pub empirical_risk: f64,
    pub window: (usize, usize),
    pub epsilon: f64,
    /// `êr(chosen) − min êr`.
    pub achieved_gap: f64,
}

fn check_window(traj: &Trajectory, start: usize, end: usize) -> Result<()> {
    if start >= end || end > traj.len() {
        return Err(Error::invalid(format!(
            "window [{start}, {end}) is empty or exceeds the trajectory length {}",
            traj.len()
        )));
    }
    Ok(())
}

/// `(1/(end − start)) Σ_{i=start}^{end−1} L_h(Z_i)`.
pub fn empirical_risk(
    h: &Hypothesis,
    traj: &Trajectory,
    start: usize,
    end: usize,
    env: &LossEnv,
) -> Result<f64> {
    check_window(traj, start, end)?;
    let mut acc = 0.0;
    for z in &traj.points[start..end] {
        acc += loss_at(h, z, env)?;
    }
    Ok(acc / (end - start) as f64)
}

/// Empirical risk of every member, in member order.
pub fn risk_table(
    class: &HypothesisClass,
    traj: &Trajectory,
    start: usize,
    end: usize,
    env: &LossEnv,
) -> Result<Vec<f64>> {
    check_window(traj, start, end)?;
    class
        .members()
        .par_iter()
        .map(|h| empirical_risk(h, traj, start, end, env))
        .collect()
}

/// Index chosen by the ε-ERM rule from a full risk table, with its gap.
pub fn select(risks: &[f64], epsilon: f64, tie_break: TieBreak) -> Result<(usize, f64)> {
    if risks.is_empty() {
        return Err(Error::invalid("risk table is empty"));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!(
            "epsilon must be finite and non-negative, got {epsilon}"
        )));
    }
    let min = risks.iter().copied().fold(f64::INFINITY, f64::min);
    let idx = match tie_break {
        TieBreak::LowestIndex => risks.iter().position(|r| r - min <= epsilon),
        TieBreak::FirstFound => risks.iter().position(|r| *r == min),
    }
    .expect("the minimum is always feasible");
    Ok((idx, risks[idx] - min))
}

/// ε-ERM on `traj[window.0..window.1]` by exhaustive evaluation.
pub fn erm(
    class: &HypothesisClass,
    traj: &Trajectory,
    window: (usize, usize),
    epsilon: f64,
    env: &LossEnv,
    tie_break: TieBreak,
) -> Result<RiskReport> {
    let risks = risk_table(class, traj, window.0, window.1, env)?;
    let (index, achieved_gap) = select(&risks, epsilon, tie_break)?;
    Ok(RiskReport {
        hypothesis_id: class.members()[index].id.clone(),
        index,
        empirical_risk: risks[index],
        window,
        epsilon,
        achieved_gap,
    })
}

/// How `er_π` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RiskMode {
    /// Integrates against the closed-form invariant law.
    #[default]
    Exact,
    /// Averages over `replicas` chains of `length` steps after a burn-in of
    /// `burn_in_steps(ℓ_F, tol)`.
    Ergodic {
        tol: f64,
        replicas: usize,
        length: usize,
    },
}

/// `(er_π(h), standard error)` for every member, in member order.
///
/// Ergodic mode reuses the same chains for all members.
pub fn true_risks(
    class: &HypothesisClass,
    gen: &GeneratorSpec,
    env: &LossEnv,
    mode: RiskMode,
    seed: SeedSpec,
) -> Result<Vec<(f64, f64)>> {
    match mode {
        RiskMode::Exact => {
            let pi = gen.exact_invariant().ok_or_else(|| {
                Error::invalid(format!(
                    "generator {} has no closed-form invariant law; use ergodic mode",
                    gen.id()
                ))
            })?;
            class
                .members()
                .iter()
                .map(|h| {
                    let mut acc = 0.0;
                    for (z, w) in pi.atoms().iter().zip(pi.weights()) {
                        acc += w * loss_at(h, z, env)?;
                    }
                    Ok((acc, 0.0))
                })
                .collect()
        }
        RiskMode::Ergodic {
            tol,
            replicas,
            length,
        } => {
            if replicas == 0 || length == 0 {
                return Err(Error::invalid(
                    "ergodic mode needs replicas >= 1 and length >= 1",
                ));
            }
            let b = burn_in_steps(gen.lip_factor(), tol)?;
            let per_replica: Vec<Vec<f64>> = (0..replicas)
                .into_par_iter()
                .map(|r| {
                    let traj = sample_chain_after_burn_in(
                        gen,
                        gen.start(),
                        b,
                        length,
                        seed.derive(r as u64),
                    )?;
                    class
                        .members()
                        .iter()
                        .map(|h| empirical_risk(h, &traj, 0, length, env))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;
            let k = replicas as f64;
            Ok((0..class.len())
                .map(|h| {
                    let mean = per_replica.iter().map(|r| r[h]).sum::<f64>() / k;
                    let se = if replicas > 1 {
                        (per_replica
                            .iter()
                            .map(|r| (r[h] - mean).powi(2))
                            .sum::<f64>()
                            / (k - 1.0)
                            / k)
                            .sqrt()
                    } else {
                        0.0
                    };
                    (mean, se)
                })
                .collect())
        }
    }
}

/// `er_π(h) = π(L_h)` with its standard error (0 in exact mode).
pub fn true_risk(
    h: &Hypothesis,
    gen: &GeneratorSpec,
    env: &LossEnv,
    mode: RiskMode,
    seed: SeedSpec,
) -> Result<(f64, f64)> {
    let class = HypothesisClass::new(vec![h.clone()], gen.metric().dim_x(), gen.metric().dim_y())?;
    Ok(true_risks(&class, gen, env, mode, seed)?[0])
}

/// `opt_π(H) = min_h er_π(h)`, with the standard error of the minimizing member.
pub fn opt_risk(
    class: &HypothesisClass,
    gen: &GeneratorSpec,
    env: &LossEnv,
    mode: RiskMode,
    seed: SeedSpec,
) -> Result<(f64, f64)> {
    let risks = true_risks(class, gen, env, mode, seed)?;
    Ok(risks
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("classes are non-empty"))
}
