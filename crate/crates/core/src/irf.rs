//! Iterated random functions `Z_n = F(Z_{n−1}, ϑ_n)`.
//!
//! Four built-in families are supported, plus a trait object escape hatch:
//!
//! * `Iid`: `F(z, θ) = θ`, the classical i.i.d. sample as a chain with `ℓ_F = 0`.
//! * `AffineIfs`: `x ↦ a_i x + b_i` chosen with probability `ν_i`, labeled by `h0`.
//! * `LabeledLipschitz`: `x ↦ s_i ⊙ tanh(x) + t_i`, labeled by `h0`.
//! * `DeterministicMap`: a single affine map, labeled by `h0`; `π` is a point mass.
//!
//! For the labeled families the state space is the graph `{(x, h0(x))}`. On the
//! graph the per-θ Lipschitz factor of `F` is at most
//! `ℓ_f(θ) (1 + Lip(h0)) / (1 + coLip(h0))`, where `coLip` is the lower
//! Lipschitz constant of `h0` (zero when unknown). This is what
//! [`GeneratorSpec::lip_factor`] reports.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{euclid, norm, MetricSpec, SeedSpec, ZPoint};
use crate::transport::EmpiricalMeasure;

/// Random words reserved per chain step; step `i` reads from word `i * STEP_STRIDE`.
const STEP_STRIDE: u128 = 64;
const BOUNDS_SLACK: f64 = 1e-12;
const GRAPH_TOL: f64 = 1e-9;

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!(
            "{what} contains a non-finite value"
        )));
    }
    Ok(())
}

fn singular_values(rows: usize, cols: usize, row_major: &[f64]) -> Vec<f64> {
    let m = DMatrix::from_row_slice(rows, cols, row_major);
    m.svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect()
}

/// `x ↦ a x + b` with `a` stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineMap {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl AffineMap {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let map = AffineMap { a, b };
        map.validate()?;
        Ok(map)
    }

    fn validate(&self) -> Result<()> {
        let d = self.b.len();
        if d == 0 || self.a.len() != d * d {
            return Err(Error::invalid(format!(
                "affine map needs a {d}x{d} matrix, got {} entries",
                self.a.len()
            )));
        }
        check_finite(&self.a, "affine matrix")?;
        check_finite(&self.b, "affine offset")
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|i| {
                let row = &self.a[i * d..(i + 1) * d];
                row.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() + self.b[i]
            })
            .collect()
    }

    pub fn spectral_norm(&self) -> f64 {
        let d = self.dim();
        singular_values(d, d, &self.a)
            .into_iter()
            .fold(0.0, f64::max)
    }

    /// Solution of `(I − a) x = b`, if unique.
    pub fn fixed_point(&self) -> Option<Vec<f64>> {
        let d = self.dim();
        let a = DMatrix::from_row_slice(d, d, &self.a);
        let lhs = DMatrix::<f64>::identity(d, d) - a;
        let rhs = nalgebra::DVector::from_column_slice(&self.b);
        lhs.lu().solve(&rhs).map(|v| v.iter().copied().collect())
    }
}

/// `x ↦ scale ⊙ tanh(x) + shift`, Lipschitz with constant `max |scale_k|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SquashMap {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl SquashMap {
    pub fn new(scale: Vec<f64>, shift: Vec<f64>) -> Result<Self> {
        let map = SquashMap { scale, shift };
        map.validate()?;
        Ok(map)
    }

    fn validate(&self) -> Result<()> {
        if self.scale.is_empty() || self.scale.len() != self.shift.len() {
            return Err(Error::invalid(
                "squash map scale/shift lengths differ or are empty",
            ));
        }
        check_finite(&self.scale, "squash scale")?;
        check_finite(&self.shift, "squash shift")
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.scale.iter().zip(&self.shift))
            .map(|(x, (s, t))| s * x.tanh() + t)
            .collect()
    }

    pub fn lip(&self) -> f64 {
        self.scale.iter().fold(0.0, |m, s| m.max(s.abs()))
    }
}

/// The labeling rule `h0 : X → Y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LabelMap {
    Identity,
    /// `y = w x + c`, `w` row-major with `c.len()` rows.
    Linear {
        w: Vec<f64>,
        c: Vec<f64>,
    },
    /// Piecewise-linear interpolation on a 1-D grid, clamped outside it.
    Tabulated {
        knots: Vec<f64>,
        values: Vec<f64>,
    },
}

impl LabelMap {
    pub fn validate(&self, dim_x: usize) -> Result<()> {
        match self {
            LabelMap::Identity => Ok(()),
            LabelMap::Linear { w, c } => {
                if c.is_empty() || w.len() != c.len() * dim_x {
                    return Err(Error::invalid(format!(
                        "linear label map needs {} x {dim_x} weights, got {}",
                        c.len(),
                        w.len()
                    )));
                }
                check_finite(w, "label weights")?;
                check_finite(c, "label offset")
            }
            LabelMap::Tabulated { knots, values } => {
                if dim_x != 1 {
                    return Err(Error::invalid("tabulated label map requires dim_x = 1"));
                }
                validate_table(knots, values)
            }
        }
    }

    pub fn dim_y(&self, dim_x: usize) -> usize {
        match self {
            LabelMap::Identity => dim_x,
            LabelMap::Linear { c, .. } => c.len(),
            LabelMap::Tabulated { .. } => 1,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            LabelMap::Identity => x.to_vec(),
            LabelMap::Linear { w, c } => linear_apply(w, c, x),
            LabelMap::Tabulated { knots, values } => vec![interpolate(knots, values, x[0])],
        }
    }

    pub fn lip(&self, dim_x: usize) -> f64 {
        match self {
            LabelMap::Identity => 1.0,
            LabelMap::Linear { w, c } => singular_values(c.len(), dim_x, w)
                .into_iter()
                .fold(0.0, f64::max),
            LabelMap::Tabulated { knots, values } => table_lip(knots, values),
        }
    }

    /// Largest `c` with `‖h0(x) − h0(x̄)‖ ≥ c ‖x − x̄‖`.
    pub fn co_lip(&self, dim_x: usize) -> f64 {
        match self {
            LabelMap::Identity => 1.0,
            LabelMap::Linear { w, c } if c.len() >= dim_x => singular_values(c.len(), dim_x, w)
                .into_iter()
                .fold(f64::INFINITY, f64::min),
            _ => 0.0,
        }
    }

    /// `sup ‖h0(x)‖` over `‖x‖ ≤ radius`.
    fn sup_norm_on_ball(&self, dim_x: usize, radius: f64) -> f64 {
        match self {
            LabelMap::Identity => radius,
            LabelMap::Linear { c, .. } => self.lip(dim_x) * radius + norm(c),
            LabelMap::Tabulated { values, .. } => values.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }
}

pub(crate) fn linear_apply(w: &[f64], c: &[f64], x: &[f64]) -> Vec<f64> {
    let dx = x.len();
    c.iter()
        .enumerate()
        .map(|(i, ci)| {
            w[i * dx..(i + 1) * dx]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                + ci
        })
        .collect()
}

pub(crate) fn validate_table(knots: &[f64], values: &[f64]) -> Result<()> {
    if knots.len() < 2 || knots.len() != values.len() {
        return Err(Error::invalid(
            "table needs at least two knots and one value per knot",
        ));
    }
    check_finite(knots, "table knots")?;
    check_finite(values, "table values")?;
    if knots.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("table knots must be strictly increasing"));
    }
    Ok(())
}

pub(crate) fn interpolate(knots: &[f64], values: &[f64], x: f64) -> f64 {
    let last = knots.len() - 1;
    if x <= knots[0] {
        return values[0];
    }
    if x >= knots[last] {
        return values[last];
    }
    let j = knots.partition_point(|k| *k <= x).min(last);
    let (k0, k1) = (knots[j - 1], knots[j]);
    let t = (x - k0) / (k1 - k0);
    values[j - 1] + t * (values[j] - values[j - 1])
}

pub(crate) fn table_lip(knots: &[f64], values: &[f64]) -> f64 {
    knots
        .windows(2)
        .zip(values.windows(2))
        .map(|(k, v)| ((v[1] - v[0]) / (k[1] - k[0])).abs())
        .fold(0.0, f64::max)
}

/// Declared coordinate bounds of `Z`; images of `F` must stay inside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Bounds {
    Box {
        x_lo: Vec<f64>,
        x_hi: Vec<f64>,
        y_lo: Vec<f64>,
        y_hi: Vec<f64>,
    },
    Ball {
        x_radius: f64,
        y_radius: f64,
    },
}

impl Bounds {
    fn validate(&self, dim_x: usize, dim_y: usize) -> Result<()> {
        match self {
            Bounds::Box {
                x_lo,
                x_hi,
                y_lo,
                y_hi,
            } => {
                if x_lo.len() != dim_x
                    || x_hi.len() != dim_x
                    || y_lo.len() != dim_y
                    || y_hi.len() != dim_y
                {
                    return Err(Error::invalid(
                        "box bounds do not match the point dimensions",
                    ));
                }
                let ordered = x_lo
                    .iter()
                    .zip(x_hi)
                    .chain(y_lo.iter().zip(y_hi))
                    .all(|(l, h)| l <= h);
                if !ordered {
                    return Err(Error::invalid("box bounds need lo <= hi"));
                }
                Ok(())
            }
            Bounds::Ball { x_radius, y_radius } => {
                if !(*x_radius >= 0.0 && *y_radius >= 0.0) {
                    return Err(Error::invalid("ball radii must be non-negative"));
                }
                Ok(())
            }
        }
    }

    pub fn contains(&self, z: &ZPoint) -> bool {
        let within = |v: f64, lo: f64, hi: f64| {
            let slack = BOUNDS_SLACK * (1.0 + lo.abs().max(hi.abs()));
            v >= lo - slack && v <= hi + slack
        };
        match self {
            Bounds::Box {
                x_lo,
                x_hi,
                y_lo,
                y_hi,
            } => {
                z.x()
                    .iter()
                    .zip(x_lo.iter().zip(x_hi))
                    .all(|(v, (l, h))| within(*v, *l, *h))
                    && z.y()
                        .iter()
                        .zip(y_lo.iter().zip(y_hi))
                        .all(|(v, (l, h))| within(*v, *l, *h))
            }
            Bounds::Ball { x_radius, y_radius } => {
                norm(z.x()) <= x_radius * (1.0 + BOUNDS_SLACK) + BOUNDS_SLACK
                    && norm(z.y()) <= y_radius * (1.0 + BOUNDS_SLACK) + BOUNDS_SLACK
            }
        }
    }

    /// Upper bound on `‖x − x̄‖ + ‖y − ȳ‖` inside the bounds.
    pub fn raw_diameter(&self) -> f64 {
        match self {
            Bounds::Box {
                x_lo,
                x_hi,
                y_lo,
                y_hi,
            } => euclid(x_lo, x_hi) + euclid(y_lo, y_hi),
            Bounds::Ball { x_radius, y_radius } => 2.0 * x_radius + 2.0 * y_radius,
        }
    }

    fn sample_x(&self, dim_x: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Bounds::Box { x_lo, x_hi, .. } => x_lo
                .iter()
                .zip(x_hi)
                .map(|(l, h)| l + (h - l) * rng.gen::<f64>())
                .collect(),
            Bounds::Ball { x_radius, .. } => loop {
                let v: Vec<f64> = (0..dim_x).map(|_| rng.gen_range(-1.0..=1.0)).collect();
                if norm(&v) <= 1.0 {
                    break v.into_iter().map(|c| c * x_radius).collect();
                }
            },
        }
    }
}

/// Extension point for continuous parameter laws. The caller certifies `ℓ_F`.
pub trait CustomKernel: Send + Sync {
    fn draw_theta(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    fn apply(&self, z: &ZPoint, theta: &[f64]) -> Result<ZPoint>;
    fn certified_lip_factor(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Iid,
    AffineIfs,
    LabeledLipschitz,
    DeterministicMap,
    Custom,
}

/// One draw of `ϑ`: an atom index for categorical laws, a vector otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum ThetaDraw {
    Atom(usize),
    Param(Vec<f64>),
}

#[derive(Clone)]
enum Kernel {
    Iid {
        atoms: Vec<ZPoint>,
    },
    Affine {
        maps: Vec<AffineMap>,
        label: LabelMap,
    },
    Squash {
        maps: Vec<SquashMap>,
        label: LabelMap,
    },
    Deterministic {
        map: AffineMap,
        label: LabelMap,
    },
    Custom(Arc<dyn CustomKernel>),
}

/// An immutable, validated chain generator.
#[derive(Clone)]
pub struct GeneratorSpec {
    id: String,
    metric: MetricSpec,
    kernel: Kernel,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
    lip_factor: f64,
    bounds: Option<Bounds>,
    start: ZPoint,
}

impl fmt::Debug for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneratorSpec")
            .field("id", &self.id)
            .field("variant", &self.variant())
            .field("lip_factor", &self.lip_factor)
            .field("metric", &self.metric)
            .finish_non_exhaustive()
    }
}

fn normalize_weights(weights: &[f64], k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if weights.len() != k || k == 0 {
        return Err(Error::invalid(format!(
            "expected {k} weights, got {}",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::invalid("weights must be finite and non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "weights sum to {total}, expected 1"
        )));
    }
    let mut acc = 0.0;
    let cumulative = weights
        .iter()
        .map(|w| {
            acc += w / total;
            acc
        })
        .collect();
    Ok((weights.to_vec(), cumulative))
}

fn check_lip_factor(lip: f64) -> Result<f64> {
    if !(lip.is_finite() && lip >= 0.0) {
        return Err(Error::Assumption(format!(
            "contraction factor {lip} is not a finite non-negative number"
        )));
    }
    if lip >= 1.0 {
        return Err(Error::Assumption(format!(
            "(A1) requires ell_F < 1, got ell_F = {lip}"
        )));
    }
    Ok(lip)
}

fn graph_factor(label: &LabelMap, dim_x: usize) -> f64 {
    (1.0 + label.lip(dim_x)) / (1.0 + label.co_lip(dim_x))
}

fn labeled_point(label: &LabelMap, x: Vec<f64>) -> Result<ZPoint> {
    let y = label.apply(&x);
    ZPoint::new(x, y)
}

impl GeneratorSpec {
    /// `F(z, θ) = θ` with `θ` drawn from the weighted atoms.
    pub fn iid(
        id: impl Into<String>,
        atoms: Vec<ZPoint>,
        weights: &[f64],
        metric: MetricSpec,
    ) -> Result<Self> {
        let (weights, cumulative) = normalize_weights(weights, atoms.len())?;
        for a in &atoms {
            metric.check_point(a)?;
        }
        metric.check_kappa(&atoms)?;
        let start = atoms[0].clone();
        Ok(GeneratorSpec {
            id: id.into(),
            metric,
            kernel: Kernel::Iid { atoms },
            weights,
            cumulative,
            lip_factor: 0.0,
            bounds: None,
            start,
        })
    }

    /// Affine IFS on the ball of radius `R + r`, `r = max ‖b_i‖`. When `kappa`
    /// is `None` the metric uses the diameter of the bounding balls, which is
    /// `4(R + r)` for an identity label map.
    pub fn affine_ifs(
        id: impl Into<String>,
        maps: Vec<AffineMap>,
        weights: &[f64],
        label: LabelMap,
        radius: f64,
        kappa: Option<f64>,
    ) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::invalid("affine IFS needs at least one map"));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::invalid("affine IFS radius R must be positive"));
        }
        let dim_x = maps[0].dim();
        for m in &maps {
            m.validate()?;
            if m.dim() != dim_x {
                return Err(Error::invalid("affine maps have differing dimensions"));
            }
        }
        label.validate(dim_x)?;
        let (weights, cumulative) = normalize_weights(weights, maps.len())?;
        let norms: Vec<f64> = maps.iter().map(AffineMap::spectral_norm).collect();
        if let Some((i, n)) = norms.iter().enumerate().find(|(_, n)| **n >= 1.0) {
            return Err(Error::Assumption(format!(
                "affine map {i} has spectral norm {n} >= 1"
            )));
        }
        let r = maps.iter().map(|m| norm(&m.b)).fold(0.0, f64::max);
        let rho = radius + r;
        for (i, m) in maps.iter().enumerate() {
            let reach = norms[i] * rho + norm(&m.b);
            if reach > rho * (1.0 + BOUNDS_SLACK) {
                return Err(Error::GeneratorContract(format!(
                    "affine map {i} can leave the ball of radius {rho} (reach {reach})"
                )));
            }
        }
        let bounds = Bounds::Ball {
            x_radius: rho,
            y_radius: label.sup_norm_on_ball(dim_x, rho),
        };
        let dim_y = label.dim_y(dim_x);
        let diameter = bounds.raw_diameter();
        let kappa = kappa.unwrap_or(diameter);
        if kappa < diameter * (1.0 - BOUNDS_SLACK) {
            return Err(Error::GeneratorContract(format!(
                "kappa {kappa} is below the raw diameter {diameter} of the state space"
            )));
        }
        let metric = MetricSpec::new(dim_x, dim_y, kappa)?;
        let factor = graph_factor(&label, dim_x);
        let lip =
            check_lip_factor(weights.iter().zip(&norms).map(|(w, n)| w * n).sum::<f64>() * factor)?;
        let start = labeled_point(&label, vec![0.0; dim_x])?;
        Ok(GeneratorSpec {
            id: id.into(),
            metric,
            kernel: Kernel::Affine { maps, label },
            weights,
            cumulative,
            lip_factor: lip,
            bounds: Some(bounds),
            start,
        })
    }

    /// General contractive labeled chain with maps `s_i ⊙ tanh(x) + t_i`.
    pub fn labeled_lipschitz(
        id: impl Into<String>,
        maps: Vec<SquashMap>,
        weights: &[f64],
        label: LabelMap,
        kappa: f64,
        bounds: Option<Bounds>,
        start_x: Vec<f64>,
    ) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::invalid("labeled chain needs at least one map"));
        }
        let dim_x = maps[0].dim();
        for m in &maps {
            m.validate()?;
            if m.dim() != dim_x {
                return Err(Error::invalid("squash maps have differing dimensions"));
            }
        }
        label.validate(dim_x)?;
        let (weights, cumulative) = normalize_weights(weights, maps.len())?;
        let dim_y = label.dim_y(dim_x);
        let metric = MetricSpec::new(dim_x, dim_y, kappa)?;
        let factor = graph_factor(&label, dim_x);
        let lip = check_lip_factor(
            weights
                .iter()
                .zip(&maps)
                .map(|(w, m)| w * m.lip())
                .sum::<f64>()
                * factor,
        )?;
        let start = labeled_point(&label, start_x)?;
        GeneratorSpec {
            id: id.into(),
            metric,
            kernel: Kernel::Squash { maps, label },
            weights,
            cumulative,
            lip_factor: lip,
            bounds,
            start,
        }
        .checked()
    }

    /// `F(z, θ) = (f(x), h0(f(x)))` with `f` independent of `θ`.
    pub fn deterministic(
        id: impl Into<String>,
        map: AffineMap,
        label: LabelMap,
        kappa: f64,
        bounds: Option<Bounds>,
        start_x: Vec<f64>,
    ) -> Result<Self> {
        map.validate()?;
        let dim_x = map.dim();
        label.validate(dim_x)?;
        let metric = MetricSpec::new(dim_x, label.dim_y(dim_x), kappa)?;
        let lip = check_lip_factor(map.spectral_norm() * graph_factor(&label, dim_x))?;
        let start = labeled_point(&label, start_x)?;
        GeneratorSpec {
            id: id.into(),
            metric,
            kernel: Kernel::Deterministic { map, label },
            weights: vec![1.0],
            cumulative: vec![1.0],
            lip_factor: lip,
            bounds,
            start,
        }
        .checked()
    }

    pub fn custom(
        id: impl Into<String>,
        kernel: Arc<dyn CustomKernel>,
        metric: MetricSpec,
        start: ZPoint,
    ) -> Result<Self> {
        metric.check_point(&start)?;
        let lip = check_lip_factor(kernel.certified_lip_factor())?;
        Ok(GeneratorSpec {
            id: id.into(),
            metric,
            kernel: Kernel::Custom(kernel),
            weights: Vec::new(),
            cumulative: Vec::new(),
            lip_factor: lip,
            bounds: None,
            start,
        })
    }

    fn checked(self) -> Result<Self> {
        if let Some(b) = &self.bounds {
            b.validate(self.metric.dim_x(), self.metric.dim_y())?;
            let diameter = b.raw_diameter();
            if self.metric.kappa() < diameter * (1.0 - BOUNDS_SLACK) {
                return Err(Error::GeneratorContract(format!(
                    "kappa {} is below the raw diameter {diameter} of the declared bounds",
                    self.metric.kappa()
                )));
            }
        }
        self.check_state(&self.start)?;
        Ok(self)
    }

    /// Replaces the default starting point used by samplers.
    pub fn with_start(mut self, start: ZPoint) -> Result<Self> {
        self.check_state(&start)?;
        self.start = start;
        Ok(self)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn variant(&self) -> Variant {
        match self.kernel {
            Kernel::Iid { .. } => Variant::Iid,
            Kernel::Affine { .. } => Variant::AffineIfs,
            Kernel::Squash { .. } => Variant::LabeledLipschitz,
            Kernel::Deterministic { .. } => Variant::DeterministicMap,
            Kernel::Custom(_) => Variant::Custom,
        }
    }

    pub fn metric(&self) -> &MetricSpec {
        &self.metric
    }

    /// The analytic contraction factor `ℓ_F`; always `< 1` for a constructed generator.
    pub fn lip_factor(&self) -> f64 {
        self.lip_factor
    }

    pub fn start(&self) -> &ZPoint {
        &self.start
    }

    pub fn bounds(&self) -> Option<&Bounds> {
        self.bounds.as_ref()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn label_map(&self) -> Option<&LabelMap> {
        match &self.kernel {
            Kernel::Affine { label, .. }
            | Kernel::Squash { label, .. }
            | Kernel::Deterministic { label, .. } => Some(label),
            _ => None,
        }
    }

    /// Verifies that `z` belongs to the state space: dimensions, declared
    /// bounds and, for labeled chains, the graph of `h0`.
    pub fn check_state(&self, z: &ZPoint) -> Result<()> {
        self.metric.check_point(z)?;
        if let Some(b) = &self.bounds {
            if !b.contains(z) {
                return Err(Error::GeneratorContract(format!(
                    "point {z:?} lies outside the declared bounds"
                )));
            }
        }
        if let Some(label) = self.label_map() {
            let expect = label.apply(z.x());
            let gap = euclid(&expect, z.y());
            if gap > GRAPH_TOL * (1.0 + norm(z.y())) {
                return Err(Error::GeneratorContract(format!(
                    "point {z:?} is not on the graph of the label map (expected y = {expect:?})"
                )));
            }
        }
        Ok(())
    }

    pub fn draw_theta(&self, rng: &mut ChaCha8Rng) -> ThetaDraw {
        match &self.kernel {
            Kernel::Custom(k) => ThetaDraw::Param(k.draw_theta(rng)),
            Kernel::Deterministic { .. } => ThetaDraw::Atom(0),
            _ => {
                let u: f64 = rng.gen();
                let idx = self.cumulative.partition_point(|c| *c <= u);
                ThetaDraw::Atom(idx.min(self.cumulative.len() - 1))
            }
        }
    }

    fn atom_index(&self, theta: &ThetaDraw, k: usize) -> Result<usize> {
        match theta {
            ThetaDraw::Atom(i) if *i < k => Ok(*i),
            other => Err(Error::invalid(format!(
                "theta draw {other:?} is not valid for {}",
                self.id
            ))),
        }
    }

    /// `F(z, θ)`, checked against the declared bounds.
    pub fn step(&self, z: &ZPoint, theta: &ThetaDraw) -> Result<ZPoint> {
        let next = match &self.kernel {
            Kernel::Iid { atoms } => atoms[self.atom_index(theta, atoms.len())?].clone(),
            Kernel::Affine { maps, label } => {
                let x = maps[self.atom_index(theta, maps.len())?].apply(z.x());
                labeled_point(label, x)?
            }
            Kernel::Squash { maps, label } => {
                let x = maps[self.atom_index(theta, maps.len())?].apply(z.x());
                labeled_point(label, x)?
            }
            Kernel::Deterministic { map, label } => labeled_point(label, map.apply(z.x()))?,
            Kernel::Custom(k) => match theta {
                ThetaDraw::Param(p) => k.apply(z, p)?,
                ThetaDraw::Atom(_) => {
                    return Err(Error::invalid("custom kernels take parameter draws"))
                }
            },
        };
        if let Some(b) = &self.bounds {
            if !b.contains(&next) {
                return Err(Error::GeneratorContract(format!(
                    "image {next:?} of {z:?} under {theta:?} leaves the declared bounds"
                )));
            }
        }
        Ok(next)
    }

    /// The exact invariant law when it is available in closed form: the atom
    /// law for `Iid`, and a point mass for maps sharing a fixed point.
    pub fn exact_invariant(&self) -> Option<EmpiricalMeasure> {
        match &self.kernel {
            Kernel::Iid { atoms } => {
                let (atoms, weights): (Vec<_>, Vec<_>) = atoms
                    .iter()
                    .zip(&self.weights)
                    .filter(|(_, w)| **w > 0.0)
                    .map(|(a, w)| (a.clone(), *w))
                    .unzip();
                EmpiricalMeasure::new(atoms, weights).ok()
            }
            Kernel::Deterministic { map, label } => {
                let x = map.fixed_point()?;
                EmpiricalMeasure::uniform(vec![labeled_point(label, x).ok()?]).ok()
            }
            Kernel::Affine { maps, label } => {
                let first = maps[0].fixed_point()?;
                for m in &maps[1..] {
                    let p = m.fixed_point()?;
                    if euclid(&p, &first) > 1e-12 * (1.0 + norm(&first)) {
                        return None;
                    }
                }
                EmpiricalMeasure::uniform(vec![labeled_point(label, first).ok()?]).ok()
            }
            _ => None,
        }
    }

    /// A point of the state space drawn from the declared bounds (or the atoms).
    fn random_state(&self, rng: &mut ChaCha8Rng) -> Option<ZPoint> {
        match (&self.kernel, &self.bounds) {
            (Kernel::Iid { atoms }, _) => Some(atoms[rng.gen_range(0..atoms.len())].clone()),
            (Kernel::Custom(_), _) | (_, None) => None,
            (_, Some(b)) => {
                let label = self.label_map()?;
                let x = b.sample_x(self.metric.dim_x(), rng);
                let z = labeled_point(label, x).ok()?;
                b.contains(&z).then_some(z)
            }
        }
    }

    /// `E_θ[d(F(z,θ), F(z̄,θ))] / d(z, z̄)`, exact over categorical atoms.
    ///
    /// Pairs closer than [`PROBE_MIN_DIST`] are skipped: rounding dominates their ratio.
    fn mean_ratio(&self, z: &ZPoint, zbar: &ZPoint, rng: &mut ChaCha8Rng) -> Result<Option<f64>> {
        let d = self.metric.dist(z, zbar)?;
        if d < PROBE_MIN_DIST {
            return Ok(None);
        }
        let mean = match &self.kernel {
            Kernel::Custom(_) => {
                let draws = 32;
                let mut acc = 0.0;
                for _ in 0..draws {
                    let th = self.draw_theta(rng);
                    acc += self
                        .metric
                        .dist(&self.step(z, &th)?, &self.step(zbar, &th)?)?;
                }
                acc / draws as f64
            }
            _ => {
                let mut acc = 0.0;
                for (i, w) in self.weights.iter().enumerate() {
                    let th = ThetaDraw::Atom(i);
                    acc += w * self
                        .metric
                        .dist(&self.step(z, &th)?, &self.step(zbar, &th)?)?;
                }
                acc
            }
        };
        Ok(Some(mean / d))
    }
}

/// How a trajectory's first point was obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw {
    Point(ZPoint),
    BurnIn { from: ZPoint, steps: usize },
}

/// `Z_0, …, Z_{n−1}` with the θ-draw that links each consecutive pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<ZPoint>,
    pub draws: Vec<ThetaDraw>,
    pub generator_id: String,
    pub seed: SeedSpec,
    pub initial: InitialLaw,
}

impl Trajectory {
    /// An observed trajectory, e.g. read back from CSV; it carries no draws.
    pub fn from_points(points: Vec<ZPoint>) -> Result<Self> {
        let first = points
            .first()
            .cloned()
            .ok_or_else(|| Error::invalid("trajectory needs at least one point"))?;
        Ok(Trajectory {
            points,
            draws: Vec::new(),
            generator_id: "observed".into(),
            seed: SeedSpec::new(0),
            initial: InitialLaw::Point(first),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Where a chain starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StartLaw {
    /// The generator's declared starting point.
    Point,
    /// The starting point pushed through `burn_in_steps(ℓ_F, tol)` steps.
    Stationary { tol: f64 },
}

pub fn step(state: &ZPoint, theta: &ThetaDraw, gen: &GeneratorSpec) -> Result<ZPoint> {
    gen.step(state, theta)
}

fn draw_at(gen: &GeneratorSpec, rng: &mut ChaCha8Rng, step_index: usize) -> ThetaDraw {
    rng.set_word_pos(step_index as u128 * STEP_STRIDE);
    gen.draw_theta(rng)
}

/// Simulates `n` points starting at `z0`. Step `i` (producing `Z_i`) draws its
/// parameter from a fixed position of the seed's stream, so any suffix can be
/// regenerated with [`resume_chain`].
pub fn sample_chain(
    gen: &GeneratorSpec,
    z0: &ZPoint,
    n: usize,
    seed: SeedSpec,
) -> Result<Trajectory> {
    if n == 0 {
        return Err(Error::invalid("trajectory length must be at least 1"));
    }
    gen.check_state(z0)?;
    let mut traj = resume_chain(gen, z0, 0, n, seed)?;
    traj.initial = InitialLaw::Point(z0.clone());
    Ok(traj)
}

/// Regenerates `Z_k, …, Z_{n−1}` from `Z_k`.
pub fn resume_chain(
    gen: &GeneratorSpec,
    z_k: &ZPoint,
    k: usize,
    n: usize,
    seed: SeedSpec,
) -> Result<Trajectory> {
    if k >= n {
        return Err(Error::invalid(format!(
            "resume index {k} must be below length {n}"
        )));
    }
    let mut rng = seed.rng();
    let mut points = Vec::with_capacity(n - k);
    let mut draws = Vec::with_capacity(n - k - 1);
    points.push(z_k.clone());
    for i in k + 1..n {
        let th = draw_at(gen, &mut rng, i);
        let next = gen.step(points.last().expect("non-empty"), &th)?;
        points.push(next);
        draws.push(th);
    }
    Ok(Trajectory {
        points,
        draws,
        generator_id: gen.id.clone(),
        seed,
        initial: InitialLaw::Point(z_k.clone()),
    })
}

/// Runs `burn_in` steps from `z0` and records the following `n` points.
pub fn sample_chain_after_burn_in(
    gen: &GeneratorSpec,
    z0: &ZPoint,
    burn_in: usize,
    n: usize,
    seed: SeedSpec,
) -> Result<Trajectory> {
    if n == 0 {
        return Err(Error::invalid("trajectory length must be at least 1"));
    }
    gen.check_state(z0)?;
    let mut rng = seed.rng();
    let mut z = z0.clone();
    for i in 1..=burn_in {
        let th = draw_at(gen, &mut rng, i);
        z = gen.step(&z, &th)?;
    }
    let mut traj = resume_chain(gen, &z, burn_in, burn_in + n, seed)?;
    traj.initial = InitialLaw::BurnIn {
        from: z0.clone(),
        steps: burn_in,
    };
    Ok(traj)
}

/// Samples `n` points from the generator's start under `law`.
pub fn sample_from(
    gen: &GeneratorSpec,
    law: StartLaw,
    n: usize,
    seed: SeedSpec,
) -> Result<Trajectory> {
    match law {
        StartLaw::Point => sample_chain(gen, gen.start(), n, seed),
        StartLaw::Stationary { tol } => {
            let b = burn_in_steps(gen.lip_factor(), tol)?;
            sample_chain_after_burn_in(gen, gen.start(), b, n, seed)
        }
    }
}

/// Final state after `steps` steps; no trajectory is stored.
pub fn run_chain(gen: &GeneratorSpec, z0: &ZPoint, steps: usize, seed: SeedSpec) -> Result<ZPoint> {
    let mut rng = seed.rng();
    let mut z = z0.clone();
    for i in 1..=steps {
        let th = draw_at(gen, &mut rng, i);
        z = gen.step(&z, &th)?;
    }
    Ok(z)
}

pub fn analytic_lip_factor(gen: &GeneratorSpec) -> Result<f64> {
    check_lip_factor(gen.lip_factor())
}

/// Smallest `B ≥ 1` with `ℓ_F^B ≤ tol`, using `W ≤ 1`.
pub fn burn_in_steps(lip_factor: f64, tol: f64) -> Result<usize> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::invalid(format!(
            "burn-in tolerance must lie in (0, 1), got {tol}"
        )));
    }
    let lip = check_lip_factor(lip_factor)?;
    if lip == 0.0 {
        return Ok(1);
    }
    Ok(((tol.ln() / lip.ln()).ceil() as usize).max(1))
}

/// Sampled lower bound on `ℓ_F`: the largest θ-averaged Lipschitz ratio over
/// pairs drawn from chain states and from the declared bounds.
pub fn empirical_contraction_probe(
    gen: &GeneratorSpec,
    num_pairs: usize,
    chain_len: usize,
    seed: SeedSpec,
) -> Result<f64> {
    if num_pairs == 0 {
        return Err(Error::invalid("probe needs at least one pair"));
    }
    let ratios: Vec<Option<f64>> = (0..num_pairs)
        .into_par_iter()
        .map(|p| -> Result<Option<f64>> {
            let s = seed.derive(p as u64);
            let mut rng = s.derive(u64::MAX).rng();
            let (z, zbar) = if p % 2 == 1 {
                match (gen.random_state(&mut rng), gen.random_state(&mut rng)) {
                    (Some(a), Some(b)) => (a, b),
                    _ => chain_pair(gen, chain_len, s, &mut rng)?,
                }
            } else {
                chain_pair(gen, chain_len, s, &mut rng)?
            };
            gen.mean_ratio(&z, &zbar, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(ratios.into_iter().flatten().fold(0.0, f64::max))
}

const PROBE_MIN_DIST: f64 = 1e-6;

fn chain_pair(
    gen: &GeneratorSpec,
    chain_len: usize,
    s: SeedSpec,
    rng: &mut ChaCha8Rng,
) -> Result<(ZPoint, ZPoint)> {
    let la = rng.gen_range(0..=chain_len);
    let lb = rng.gen_range(0..=chain_len);
    let a = run_chain(gen, gen.start(), la, s.derive(0))?;
    let b = run_chain(gen, gen.start(), lb, s.derive(1))?;
    Ok((a, b))
}

/// `count` atoms, one per independent chain, each after `burn_in_steps(ℓ_F, tol)` steps.
pub fn invariant_sampler(
    gen: &GeneratorSpec,
    tol: f64,
    count: usize,
    seed: SeedSpec,
) -> Result<EmpiricalMeasure> {
    if count == 0 {
        return Err(Error::invalid("invariant sampler needs count >= 1"));
    }
    let b = burn_in_steps(gen.lip_factor(), tol)?;
    let atoms: Vec<ZPoint> = (0..count)
        .into_par_iter()
        .map(|j| run_chain(gen, gen.start(), b, seed.derive(j as u64)))
        .collect::<Result<_>>()?;
    EmpiricalMeasure::uniform(atoms)
}
