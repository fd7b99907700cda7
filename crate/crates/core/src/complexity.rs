//! Empirical Rademacher complexity of `{L_h : h ∈ H}` and its structural bounds.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypothesis::{HypothesisClass, LossEnv};
use crate::irf::{sample_from, GeneratorSpec, StartLaw};
use crate::metric::{SeedSpec, ZPoint};

pub const EXACT_MAX_N: usize = 20;
const MC_CHUNK: usize = 1024;
const PREFIX_BITS: usize = 6;

/// `values[h][i] = L_h(z_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossMatrix {
    ids: Vec<String>,
    values: Vec<Vec<f64>>,
    bound: f64,
}

impl LossMatrix {
    /// Rows are hypotheses; every entry must lie in `[0, bound]`.
    pub fn new(ids: Vec<String>, values: Vec<Vec<f64>>, bound: f64) -> Result<Self> {
        if values.is_empty() || ids.len() != values.len() {
            return Err(Error::invalid(
                "loss matrix needs one id per non-empty row set",
            ));
        }
        let n = values[0].len();
        if n == 0 || values.iter().any(|r| r.len() != n) {
            return Err(Error::invalid(
                "loss matrix rows must share a positive length",
            ));
        }
        for (h, row) in values.iter().enumerate() {
            if let Some(v) = row
                .iter()
                .find(|v| !(v.is_finite() && **v >= 0.0 && **v <= bound))
            {
                return Err(Error::invalid(format!(
                    "loss matrix entry {v} of row {h} is outside [0, {bound}]"
                )));
            }
        }
        Ok(LossMatrix { ids, values, bound })
    }

    /// Rows without ids; ids become `h0, h1, …` and the bound is the largest entry.
    pub fn from_rows(values: Vec<Vec<f64>>) -> Result<Self> {
        let ids = (0..values.len()).map(|i| format!("h{i}")).collect();
        let bound = values.iter().flatten().copied().fold(0.0, f64::max);
        LossMatrix::new(ids, values, bound)
    }

    pub fn from_class(class: &HypothesisClass, points: &[ZPoint], env: &LossEnv) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("loss matrix needs at least one sample"));
        }
        let values = class
            .members()
            .par_iter()
            .map(|h| {
                points
                    .iter()
                    .map(|z| crate::hypothesis::loss_at(h, z, env))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        LossMatrix::new(class.ids(), values, env.ell_h())
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values[0].len()
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Number of distinct rows, an upper bound on the growth function at these points.
    pub fn distinct_rows(&self) -> usize {
        let mut rows: Vec<Vec<u64>> = self
            .values
            .iter()
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        rows.sort();
        rows.dedup();
        rows.len()
    }

    /// Row means over `start..end`.
    pub fn window_means(&self, start: usize, end: usize) -> Vec<f64> {
        let m = (end - start) as f64;
        self.values
            .iter()
            .map(|r| r[start..end].iter().sum::<f64>() / m)
            .collect()
    }

    /// Restriction to columns `start..end`.
    pub fn columns(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n() {
            return Err(Error::invalid(format!(
                "column range {start}..{end} is invalid"
            )));
        }
        let values = self.values.iter().map(|r| r[start..end].to_vec()).collect();
        LossMatrix::new(self.ids.clone(), values, self.bound)
    }

    fn sup(&self, sums: &[f64], symmetric: bool) -> f64 {
        if symmetric {
            sums.iter()
                .map(|s| s.abs())
                .fold(f64::NEG_INFINITY, f64::max)
        } else {
            sums.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RademacherEstimate {
    pub value: f64,
    pub std_error: f64,
    pub method: Method,
    pub draws: u64,
}

/// `E_σ sup_h (1/n) Σ σ_i L_h(z_i)` over all `2^n` sign vectors.
pub fn rademacher_exact(m: &LossMatrix) -> Result<RademacherEstimate> {
    enumerate_signs(m, false)
}

/// As [`rademacher_exact`] with `|Σ σ_i L_h(z_i)|`, i.e. the class `H ∪ −H`.
pub fn rademacher_exact_symmetric(m: &LossMatrix) -> Result<RademacherEstimate> {
    enumerate_signs(m, true)
}

fn enumerate_signs(m: &LossMatrix, symmetric: bool) -> Result<RademacherEstimate> {
    let n = m.n();
    if n > EXACT_MAX_N {
        return Err(Error::Size(format!(
            "exact enumeration supports n <= {EXACT_MAX_N}, got {n}; use rademacher_mc"
        )));
    }
    let prefix = PREFIX_BITS.min(n);
    let low = n - prefix;
    // Bits 0..low are walked in Gray-code order; the top `prefix` bits pick the chunk.
    let totals: Vec<f64> = (0..1usize << prefix)
        .into_par_iter()
        .map(|chunk| {
            let mut signs: Vec<f64> = (0..n)
                .map(|i| {
                    if i >= low && (chunk >> (i - low)) & 1 == 1 {
                        -1.0
                    } else {
                        1.0
                    }
                })
                .collect();
            let mut sums: Vec<f64> = m
                .values
                .iter()
                .map(|r| r.iter().zip(&signs).map(|(v, s)| v * s).sum())
                .collect();
            let mut acc = m.sup(&sums, symmetric);
            for k in 1..1usize << low {
                let bit = k.trailing_zeros() as usize;
                let flip = -2.0 * signs[bit];
                signs[bit] = -signs[bit];
                for (s, r) in sums.iter_mut().zip(&m.values) {
                    *s += flip * r[bit];
                }
                acc += m.sup(&sums, symmetric);
            }
            acc
        })
        .collect();
    let total: f64 = totals.iter().sum();
    let value = total / (1u64 << n) as f64 / n as f64;
    Ok(RademacherEstimate {
        value,
        std_error: 0.0,
        method: Method::Exact,
        draws: 1u64 << n,
    })
}

/// Monte-Carlo estimate with `draws` sign vectors; chunk `c` of 1024 draws uses
/// stream `seed.derive(c)`.
pub fn rademacher_mc(m: &LossMatrix, draws: u64, seed: SeedSpec) -> Result<RademacherEstimate> {
    rademacher_mc_with(m, draws, seed, false)
}

pub fn rademacher_mc_with(
    m: &LossMatrix,
    draws: u64,
    seed: SeedSpec,
    symmetric: bool,
) -> Result<RademacherEstimate> {
    if draws == 0 {
        return Err(Error::invalid("Monte-Carlo estimate needs draws >= 1"));
    }
    let n = m.n();
    let chunks = draws.div_ceil(MC_CHUNK as u64);
    let parts: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = (draws - c * MC_CHUNK as u64).min(MC_CHUNK as u64);
            let mut rng = seed.derive(c).rng();
            let mut sums = vec![0.0; m.values.len()];
            let mut bits = vec![0u64; n.div_ceil(64)];
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                for b in bits.iter_mut() {
                    *b = rng.next_u64();
                }
                for (s, r) in sums.iter_mut().zip(&m.values) {
                    *s = r
                        .iter()
                        .enumerate()
                        .map(|(i, v)| {
                            if (bits[i / 64] >> (i % 64)) & 1 == 1 {
                                *v
                            } else {
                                -*v
                            }
                        })
                        .sum();
                }
                let x = m.sup(&sums, symmetric) / n as f64;
                s1 += x;
                s2 += x * x;
            }
            (s1, s2)
        })
        .collect();
    let (s1, s2) = parts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let d = draws as f64;
    let mean = s1 / d;
    let var = if draws > 1 {
        ((s2 - d * mean * mean) / (d - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(RademacherEstimate {
        value: mean,
        std_error: (var / d).sqrt(),
        method: Method::MonteCarlo,
        draws,
    })
}

/// Exact enumeration when `n ≤ 20`, otherwise Monte Carlo with `mc_draws`.
pub fn rademacher_auto(
    m: &LossMatrix,
    mc_draws: u64,
    seed: SeedSpec,
    symmetric: bool,
) -> Result<RademacherEstimate> {
    if m.n() <= EXACT_MAX_N {
        enumerate_signs(m, symmetric)
    } else {
        rademacher_mc_with(m, mc_draws, seed, symmetric)
    }
}

/// `R_{n,μ}(H)`: average of the empirical complexity over `outer_draws`
/// independent length-`n` trajectories drawn under `start`.
#[allow(clippy::too_many_arguments)]
pub fn rademacher_expected(
    gen: &GeneratorSpec,
    class: &HypothesisClass,
    env: &LossEnv,
    n: usize,
    outer_draws: usize,
    start: StartLaw,
    mc_draws: u64,
    seed: SeedSpec,
) -> Result<RademacherEstimate> {
    if outer_draws == 0 {
        return Err(Error::invalid("rademacher_expected needs outer_draws >= 1"));
    }
    let values: Vec<(f64, f64)> = (0..outer_draws)
        .into_par_iter()
        .map(|j| {
            let s = seed.derive(j as u64);
            let traj = sample_from(gen, start, n, s.derive(0))?;
            let m = LossMatrix::from_class(class, &traj.points, env)?;
            let est = rademacher_auto(&m, mc_draws, s.derive(1), false)?;
            Ok((est.value, est.std_error))
        })
        .collect::<Result<_>>()?;
    let k = outer_draws as f64;
    let mean = values.iter().map(|v| v.0).sum::<f64>() / k;
    let std_error = if outer_draws > 1 {
        let var = values.iter().map(|v| (v.0 - mean).powi(2)).sum::<f64>() / (k - 1.0);
        (var / k).sqrt()
    } else {
        values[0].1
    };
    let method = if n <= EXACT_MAX_N {
        Method::Exact
    } else {
        Method::MonteCarlo
    };
    Ok(RademacherEstimate {
        value: mean,
        std_error,
        method,
        draws: outer_draws as u64,
    })
}

/// `L_H √(2 ln r / n)`.
pub fn growth_bound(growth: u64, sup_loss: f64, n: usize) -> Result<f64> {
    if growth == 0 || n == 0 {
        return Err(Error::invalid("growth_bound needs r(n) >= 1 and n >= 1"));
    }
    Ok(sup_loss * (2.0 * (growth as f64).ln() / n as f64).sqrt())
}

/// `L_H √(2 vc ln(e n / vc) / n)`.
pub fn vc_bound(vc: usize, sup_loss: f64, n: usize) -> Result<f64> {
    if vc == 0 || vc > n {
        return Err(Error::invalid(format!(
            "vc_bound needs 1 <= vc <= n, got vc = {vc}, n = {n}"
        )));
    }
    let (vc, n) = (vc as f64, n as f64);
    Ok(sup_loss * (2.0 * vc * (std::f64::consts::E * n / vc).ln() / n).sqrt())
}
