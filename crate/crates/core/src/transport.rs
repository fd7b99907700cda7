//! Exact L1-Wasserstein distance between empirical measures on `Z`.
//!
//! Equal-size uniform measures are solved as an assignment problem with a
//! dense Hungarian method; anything else goes through a dense successive
//! shortest path solver on the transportation network. Both work directly on
//! `f64` costs.

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irf::GeneratorSpec;
use crate::metric::{MetricSpec, SeedSpec, ZPoint};

pub const DEFAULT_ATOM_CAP: usize = 2000;
const BRUTE_FORCE_MAX: usize = 8;
const WEIGHT_TOL: f64 = 1e-12;
const MASS_EPS: f64 = 1e-15;

/// Weighted atoms on `Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    atoms: Vec<ZPoint>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(atoms: Vec<ZPoint>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::invalid("empirical measure needs at least one atom"));
        }
        if atoms.len() != weights.len() {
            return Err(Error::invalid(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid("weights must be positive and finite"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::invalid(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(EmpiricalMeasure { atoms, weights })
    }

    pub fn uniform(atoms: Vec<ZPoint>) -> Result<Self> {
        let n = atoms.len();
        if n == 0 {
            return Err(Error::invalid("empirical measure needs at least one atom"));
        }
        EmpiricalMeasure::new(atoms, vec![1.0 / n as f64; n])
    }

    pub fn atoms(&self) -> &[ZPoint] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    fn is_uniform(&self) -> bool {
        let w = 1.0 / self.len() as f64;
        self.weights.iter().all(|x| (x - w).abs() <= 1e-15)
    }

    /// `μ(f)`.
    pub fn integrate(&self, f: impl Fn(&ZPoint) -> f64) -> f64 {
        self.atoms
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| w * f(a))
            .sum()
    }
}

/// A coupling of two empirical measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    /// `(source index, target index, mass)`.
    pub entries: Vec<(usize, usize, f64)>,
    pub cost: f64,
}

impl TransportPlan {
    /// Largest deviation of the plan's marginals from the given weights.
    pub fn marginal_error(&self, source: &[f64], target: &[f64]) -> f64 {
        let mut rows = vec![0.0; source.len()];
        let mut cols = vec![0.0; target.len()];
        for &(i, j, m) in &self.entries {
            rows[i] += m;
            cols[j] += m;
        }
        rows.iter()
            .zip(source)
            .chain(cols.iter().zip(target))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn cost_matrix(
    mu1: &EmpiricalMeasure,
    mu2: &EmpiricalMeasure,
    spec: &MetricSpec,
) -> Result<Vec<Vec<f64>>> {
    mu1.atoms
        .par_iter()
        .map(|a| {
            mu2.atoms
                .iter()
                .map(|b| spec.dist(a, b))
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

pub fn w1_exact(
    mu1: &EmpiricalMeasure,
    mu2: &EmpiricalMeasure,
    spec: &MetricSpec,
) -> Result<(f64, TransportPlan)> {
    w1_exact_with_cap(mu1, mu2, spec, DEFAULT_ATOM_CAP)
}

pub fn w1_exact_with_cap(
    mu1: &EmpiricalMeasure,
    mu2: &EmpiricalMeasure,
    spec: &MetricSpec,
    cap: usize,
) -> Result<(f64, TransportPlan)> {
    let total = mu1.len() + mu2.len();
    if total > cap {
        return Err(Error::Size(format!(
            "{total} atoms exceed the cap of {cap}"
        )));
    }
    let costs = cost_matrix(mu1, mu2, spec)?;
    let entries = if mu1.len() == mu2.len() && mu1.is_uniform() && mu2.is_uniform() {
        let w = 1.0 / mu1.len() as f64;
        hungarian(&costs)
            .into_iter()
            .enumerate()
            .map(|(i, j)| (i, j, w))
            .collect()
    } else {
        transportation(&costs, &mu1.weights, &mu2.weights)?
    };
    let cost = entries
        .iter()
        .map(|&(i, j, m)| m * costs[i][j])
        .sum::<f64>()
        .max(0.0);
    Ok((cost, TransportPlan { entries, cost }))
}

/// Dense O(n³) Hungarian method with potentials; returns the column
/// assigned to each row.
pub(crate) fn hungarian(costs: &[Vec<f64>]) -> Vec<usize> {
    let n = costs.len();
    if n == 0 {
        return Vec::new();
    }
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = costs[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Min-cost transportation by successive shortest paths with node potentials.
///
/// Nodes `0..m` are sources, `m..m+k` sinks. Forward arcs `i → j` are
/// uncapacitated; backward arcs `j → i` carry the current flow.
fn transportation(
    costs: &[Vec<f64>],
    supply: &[f64],
    demand: &[f64],
) -> Result<Vec<(usize, usize, f64)>> {
    let m = supply.len();
    let k = demand.len();
    let nodes = m + k;
    let mut flow = vec![vec![0.0; k]; m];
    let mut rem_s = supply.to_vec();
    let mut rem_d = demand.to_vec();
    let mut pot = vec![0.0; nodes];
    let max_rounds = 4 * nodes * nodes + 16;

    for _ in 0..max_rounds {
        if rem_s.iter().all(|s| *s <= MASS_EPS) || rem_d.iter().all(|d| *d <= MASS_EPS) {
            break;
        }
        let mut dist = vec![f64::INFINITY; nodes];
        let mut parent = vec![usize::MAX; nodes];
        let mut done = vec![false; nodes];
        for i in 0..m {
            if rem_s[i] > MASS_EPS {
                dist[i] = 0.0;
            }
        }
        loop {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for v in 0..nodes {
                if !done[v] && dist[v] < best_d {
                    best_d = dist[v];
                    best = v;
                }
            }
            if best == usize::MAX {
                break;
            }
            done[best] = true;
            if best < m {
                let i = best;
                for (j, c) in costs[i].iter().enumerate() {
                    let t = m + j;
                    if done[t] {
                        continue;
                    }
                    let rc = (c + pot[i] - pot[t]).max(0.0);
                    if best_d + rc < dist[t] {
                        dist[t] = best_d + rc;
                        parent[t] = i;
                    }
                }
            } else {
                let j = best - m;
                for i in 0..m {
                    if done[i] || flow[i][j] <= MASS_EPS {
                        continue;
                    }
                    let rc = (-costs[i][j] + pot[best] - pot[i]).max(0.0);
                    if best_d + rc < dist[i] {
                        dist[i] = best_d + rc;
                        parent[i] = best;
                    }
                }
            }
        }

        let target = (0..k)
            .filter(|j| rem_d[*j] > MASS_EPS && dist[m + j].is_finite())
            .min_by(|a, b| dist[m + a].total_cmp(&dist[m + b]));
        let Some(jt) = target else {
            return Err(Error::invalid("transport problem has unmatched mass"));
        };
        let t = m + jt;
        let dt = dist[t];
        for v in 0..nodes {
            pot[v] += dist[v].min(dt);
        }

        // Walk back to the source to find the bottleneck.
        let mut bottleneck = rem_d[jt];
        let mut v = t;
        loop {
            let u = parent[v];
            if u == usize::MAX {
                bottleneck = bottleneck.min(rem_s[v]);
                break;
            }
            if u >= m {
                // u is a sink, v a source: backward arc carrying flow[v][u - m].
                bottleneck = bottleneck.min(flow[v][u - m]);
            }
            v = u;
        }
        let mut v = t;
        loop {
            let u = parent[v];
            if u == usize::MAX {
                rem_s[v] -= bottleneck;
                break;
            }
            if u < m {
                flow[u][v - m] += bottleneck;
            } else {
                flow[v][u - m] -= bottleneck;
            }
            v = u;
        }
        rem_d[jt] -= bottleneck;
    }

    if rem_s.iter().any(|s| *s > 1e-9) || rem_d.iter().any(|d| *d > 1e-9) {
        return Err(Error::invalid("transport solver did not converge"));
    }
    let mut entries = Vec::new();
    for (i, row) in flow.iter().enumerate() {
        for (j, &f) in row.iter().enumerate() {
            if f > MASS_EPS {
                entries.push((i, j, f));
            }
        }
    }
    Ok(entries)
}

/// Minimum over all permutations of the mean matched distance.
pub fn w1_bruteforce(
    mu1: &EmpiricalMeasure,
    mu2: &EmpiricalMeasure,
    spec: &MetricSpec,
) -> Result<f64> {
    let n = mu1.len();
    if n != mu2.len() || n > BRUTE_FORCE_MAX || !mu1.is_uniform() || !mu2.is_uniform() {
        return Err(Error::Size(format!(
            "brute force needs equal uniform measures with at most {BRUTE_FORCE_MAX} atoms"
        )));
    }
    let costs = cost_matrix(mu1, mu2, spec)?;
    let best = (0..n)
        .permutations(n)
        .map(|perm| {
            perm.iter()
                .enumerate()
                .map(|(i, &j)| costs[i][j])
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min);
    Ok(best / n as f64)
}

/// A test function for the Kantorovich–Rubinstein dual, declared 1-Lipschitz
/// with respect to `d_Z`.
pub trait LipschitzProbe: Sync {
    fn eval(&self, z: &ZPoint) -> f64;
}

impl<F: Fn(&ZPoint) -> f64 + Sync> LipschitzProbe for F {
    fn eval(&self, z: &ZPoint) -> f64 {
        self(z)
    }
}

/// `z ↦ d_Z(z, anchor)`.
pub struct DistanceTo<'a> {
    pub anchor: ZPoint,
    pub spec: &'a MetricSpec,
}

impl LipschitzProbe for DistanceTo<'_> {
    fn eval(&self, z: &ZPoint) -> f64 {
        self.spec.dist(z, &self.anchor).unwrap_or(f64::NAN)
    }
}

/// `z ↦ x_k / κ` (or `y_k / κ`).
pub struct ScaledCoordinate {
    pub label_block: bool,
    pub index: usize,
    pub kappa: f64,
}

impl LipschitzProbe for ScaledCoordinate {
    fn eval(&self, z: &ZPoint) -> f64 {
        let block = if self.label_block { z.y() } else { z.x() };
        block[self.index] / self.kappa
    }
}

const PROBE_CHECK_ATOMS: usize = 256;

/// `max_f |μ1(f) − μ2(f)|` over the probes, after spot-checking each probe's
/// Lipschitz constant on pairs of atoms.
pub fn kr_dual_lower_bound(
    mu1: &EmpiricalMeasure,
    mu2: &EmpiricalMeasure,
    probes: &[&dyn LipschitzProbe],
    spec: &MetricSpec,
) -> Result<f64> {
    let pool: Vec<&ZPoint> = mu1.atoms.iter().chain(&mu2.atoms).collect();
    let stride = pool.len().div_ceil(PROBE_CHECK_ATOMS).max(1);
    let checked: Vec<&ZPoint> = pool.iter().step_by(stride).copied().collect();
    let mut best: f64 = 0.0;
    for (pi, probe) in probes.iter().enumerate() {
        let vals: Vec<f64> = checked.iter().map(|z| probe.eval(z)).collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidProbe(format!(
                "probe {pi} returned a non-finite value"
            )));
        }
        for a in 0..checked.len() {
            for b in a + 1..checked.len() {
                let d = spec.dist(checked[a], checked[b])?;
                if (vals[a] - vals[b]).abs() > d + 1e-9 {
                    return Err(Error::InvalidProbe(format!(
                        "probe {pi} is not 1-Lipschitz on {:?}, {:?}",
                        checked[a], checked[b]
                    )));
                }
            }
        }
        let gap = (mu1.integrate(|z| probe.eval(z)) - mu2.integrate(|z| probe.eval(z))).abs();
        best = best.max(gap);
    }
    Ok(best)
}

/// One point of a contraction curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub w1: f64,
}

/// `Ŵ(μ̂0 P^n, π̂)` for `n = 0..=n_max`.
///
/// `atoms_per_step` independent chains start from the atoms of `mu0`
/// (cycling through them) and every curve point uses the same chains and the
/// same frozen reference law: the exact invariant law when the generator has
/// one, otherwise `π̂` from [`crate::irf::invariant_sampler`].
pub fn contraction_curve(
    gen: &GeneratorSpec,
    mu0_atoms: &[ZPoint],
    n_max: usize,
    atoms_per_step: usize,
    pi_tol: f64,
    seed: SeedSpec,
) -> Result<Vec<CurvePoint>> {
    if mu0_atoms.is_empty() || atoms_per_step == 0 {
        return Err(Error::invalid(
            "contraction curve needs initial atoms and atoms_per_step >= 1",
        ));
    }
    for a in mu0_atoms {
        gen.check_state(a)?;
    }
    let pi_hat = match gen.exact_invariant() {
        Some(pi) => pi,
        None => crate::irf::invariant_sampler(gen, pi_tol, atoms_per_step, seed.derive(0))?,
    };
    let chains_seed = seed.derive(1);
    // states[j][n] = state of chain j after n steps
    let states: Vec<Vec<ZPoint>> = (0..atoms_per_step)
        .into_par_iter()
        .map(|j| {
            let z0 = &mu0_atoms[j % mu0_atoms.len()];
            let traj = crate::irf::sample_chain(gen, z0, n_max + 1, chains_seed.derive(j as u64))?;
            Ok(traj.points)
        })
        .collect::<Result<_>>()?;
    (0..=n_max)
        .into_par_iter()
        .map(|n| {
            let pushed = EmpiricalMeasure::uniform(states.iter().map(|s| s[n].clone()).collect())?;
            let (w1, _) = w1_exact(&pushed, &pi_hat, gen.metric())?;
            Ok(CurvePoint { n, w1 })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p1(x: f64) -> ZPoint {
        ZPoint::new(vec![x], vec![0.0]).unwrap()
    }

    fn spec1() -> MetricSpec {
        MetricSpec::new(1, 1, 1.0).unwrap()
    }

    #[test]
    fn self_distance_is_zero() {
        let mu = EmpiricalMeasure::uniform(vec![p1(0.1), p1(0.4), p1(0.9)]).unwrap();
        let (w, plan) = w1_exact(&mu, &mu, &spec1()).unwrap();
        assert_eq!(w, 0.0);
        let mut pairs: Vec<_> = plan.entries.iter().map(|e| (e.0, e.1)).collect();
        pairs.sort();
        assert_eq!(pairs, vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn two_atom_hand_case() {
        let a = EmpiricalMeasure::uniform(vec![p1(0.0), p1(0.2)]).unwrap();
        let b = EmpiricalMeasure::uniform(vec![p1(0.1), p1(0.3)]).unwrap();
        let (w, _) = w1_exact(&a, &b, &spec1()).unwrap();
        assert!((w - 0.1).abs() < 1e-15);
        assert!((w1_bruteforce(&a, &b, &spec1()).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn singletons_give_metric() {
        let spec = MetricSpec::new(1, 1, 4.0).unwrap();
        let z = ZPoint::new(vec![0.0], vec![0.0]).unwrap();
        let zb = ZPoint::new(vec![1.0], vec![0.5]).unwrap();
        let (w, _) = w1_exact(
            &EmpiricalMeasure::uniform(vec![z.clone()]).unwrap(),
            &EmpiricalMeasure::uniform(vec![zb.clone()]).unwrap(),
            &spec,
        )
        .unwrap();
        assert_eq!(w, spec.dist(&z, &zb).unwrap());
    }

    #[test]
    fn bruteforce_permutation_symmetry() {
        let a = EmpiricalMeasure::uniform(vec![p1(0.1), p1(0.5), p1(0.7)]).unwrap();
        let b = EmpiricalMeasure::uniform(vec![p1(0.7), p1(0.1), p1(0.5)]).unwrap();
        assert_eq!(w1_bruteforce(&a, &b, &spec1()).unwrap(), 0.0);
        let one = EmpiricalMeasure::uniform(vec![p1(0.25)]).unwrap();
        let other = EmpiricalMeasure::uniform(vec![p1(0.5)]).unwrap();
        assert_eq!(w1_bruteforce(&one, &other, &spec1()).unwrap(), 0.25);
    }

    #[test]
    fn bruteforce_guards() {
        let a = EmpiricalMeasure::uniform((0..9).map(|i| p1(i as f64 / 10.0)).collect()).unwrap();
        assert!(matches!(
            w1_bruteforce(&a, &a, &spec1()),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn atom_cap_enforced() {
        let a = EmpiricalMeasure::uniform((0..6).map(|i| p1(i as f64 / 10.0)).collect()).unwrap();
        assert!(matches!(
            w1_exact_with_cap(&a, &a, &spec1(), 10),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn weighted_transport_matches_hand_value() {
        // 0.75 mass at 0, 0.25 at 1 vs all mass at 0.5: cost 0.5.
        let a = EmpiricalMeasure::new(vec![p1(0.0), p1(1.0)], vec![0.75, 0.25]).unwrap();
        let b = EmpiricalMeasure::uniform(vec![p1(0.5)]).unwrap();
        let (w, plan) = w1_exact(&a, &b, &spec1()).unwrap();
        assert!((w - 0.5).abs() < 1e-15);
        assert!(plan.marginal_error(a.weights(), b.weights()) < 1e-12);
        // Moving 0.25 mass from 0.0 to 0.6 is optimal: 0.25 * 0.6 = 0.15.
        let c = EmpiricalMeasure::new(vec![p1(0.0), p1(0.6)], vec![0.75, 0.25]).unwrap();
        let d = EmpiricalMeasure::new(vec![p1(0.0), p1(0.6)], vec![0.5, 0.5]).unwrap();
        let (w, _) = w1_exact(&c, &d, &spec1()).unwrap();
        assert!((w - 0.15).abs() < 1e-15, "{w}");
    }

    #[test]
    fn weights_must_sum_to_one() {
        assert!(EmpiricalMeasure::new(vec![p1(0.0), p1(1.0)], vec![0.5, 0.4]).is_err());
    }

    #[test]
    fn kr_dual_examples() {
        let spec = MetricSpec::new(1, 1, 2.0).unwrap();
        let z = ZPoint::new(vec![0.0], vec![0.0]).unwrap();
        let zb = ZPoint::new(vec![0.6], vec![0.2]).unwrap();
        let mu1 = EmpiricalMeasure::uniform(vec![z.clone()]).unwrap();
        let mu2 = EmpiricalMeasure::uniform(vec![zb.clone()]).unwrap();
        let zero = |_: &ZPoint| 0.0;
        assert_eq!(
            kr_dual_lower_bound(&mu1, &mu2, &[&zero], &spec).unwrap(),
            0.0
        );
        let probe = DistanceTo {
            anchor: zb,
            spec: &spec,
        };
        let lb = kr_dual_lower_bound(&mu1, &mu2, &[&probe], &spec).unwrap();
        let (w, _) = w1_exact(&mu1, &mu2, &spec).unwrap();
        assert!((lb - w).abs() < 1e-15);
        let steep = |z: &ZPoint| 10.0 * z.x()[0];
        assert!(matches!(
            kr_dual_lower_bound(&mu1, &mu2, &[&steep], &spec),
            Err(Error::InvalidProbe(_))
        ));
    }
}
