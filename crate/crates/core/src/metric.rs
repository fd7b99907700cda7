//! The bounded sample space `Z ⊆ X × Y`, its normalized metric and the
//! seeded random streams every simulation draws from.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Slack allowed above the unit diameter before a distance is rejected.
const DIAMETER_SLACK: f64 = 1e-12;

/// A labeled sample `z = (x, y)`. Coordinates are finite by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint", into = "RawPoint")]
pub struct ZPoint {
    x: Vec<f64>,
    y: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPoint {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl TryFrom<RawPoint> for ZPoint {
    type Error = Error;

    fn try_from(raw: RawPoint) -> Result<Self> {
        ZPoint::new(raw.x, raw.y)
    }
}

impl From<ZPoint> for RawPoint {
    fn from(z: ZPoint) -> Self {
        RawPoint { x: z.x, y: z.y }
    }
}

impl ZPoint {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.is_empty() || y.is_empty() {
            return Err(Error::invalid(
                "ZPoint needs at least one x and one y coordinate",
            ));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite coordinate in ZPoint (x = {x:?}, y = {y:?})"
            )));
        }
        Ok(ZPoint { x, y })
    }

    /// Builds a point from a flat row `[x_0, .., x_{dx-1}, y_0, ..]`.
    pub fn from_row(row: &[f64], dim_x: usize) -> Result<Self> {
        if dim_x == 0 || dim_x >= row.len() {
            return Err(Error::invalid(format!(
                "row of length {} cannot be split with dim_x = {dim_x}",
                row.len()
            )));
        }
        ZPoint::new(row[..dim_x].to_vec(), row[dim_x..].to_vec())
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn dim_x(&self) -> usize {
        self.x.len()
    }

    pub fn dim_y(&self) -> usize {
        self.y.len()
    }

    pub fn to_row(&self) -> Vec<f64> {
        self.x.iter().chain(&self.y).copied().collect()
    }
}

/// `pr_X`.
pub fn project_x(z: &ZPoint) -> &[f64] {
    z.x()
}

/// `pr_Y`.
pub fn project_y(z: &ZPoint) -> &[f64] {
    z.y()
}

pub(crate) fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

type DistFnInner = dyn Fn(&ZPoint, &ZPoint) -> f64 + Send + Sync;

/// User-supplied metric on `Z`. Must return values in `[0, 1]`.
#[derive(Clone)]
pub struct DistanceFn(Arc<DistFnInner>);

impl DistanceFn {
    pub fn new(f: impl Fn(&ZPoint, &ZPoint) -> f64 + Send + Sync + 'static) -> Self {
        DistanceFn(Arc::new(f))
    }
}

impl fmt::Debug for DistanceFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("DistanceFn(..)")
    }
}

/// `d_Z(z, z̄) = (‖x − x̄‖ + ‖y − ȳ‖) / κ`, with κ declared by the caller as
/// an upper bound on the raw sum so that the diameter is at most one.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSpec {
    dim_x: usize,
    dim_y: usize,
    kappa: f64,
    #[serde(skip)]
    custom: Option<DistanceFn>,
}

impl PartialEq for MetricSpec {
    fn eq(&self, other: &Self) -> bool {
        self.dim_x == other.dim_x
            && self.dim_y == other.dim_y
            && self.kappa == other.kappa
            && self.custom.is_none()
            && other.custom.is_none()
    }
}

impl MetricSpec {
    pub fn new(dim_x: usize, dim_y: usize, kappa: f64) -> Result<Self> {
        if dim_x == 0 || dim_y == 0 {
            return Err(Error::invalid("metric dimensions must be positive"));
        }
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::invalid(format!(
                "kappa must be positive and finite, got {kappa}"
            )));
        }
        Ok(MetricSpec {
            dim_x,
            dim_y,
            kappa,
            custom: None,
        })
    }

    /// Replaces the normalized-sum metric by a caller-provided one.
    pub fn with_distance(mut self, dist: DistanceFn) -> Self {
        self.custom = Some(dist);
        self
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    pub fn dim_y(&self) -> usize {
        self.dim_y
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn diameter_bound(&self) -> f64 {
        1.0
    }

    pub fn check_point(&self, z: &ZPoint) -> Result<()> {
        if z.dim_x() != self.dim_x || z.dim_y() != self.dim_y {
            return Err(Error::invalid(format!(
                "point has dims ({}, {}), metric expects ({}, {})",
                z.dim_x(),
                z.dim_y(),
                self.dim_x,
                self.dim_y
            )));
        }
        Ok(())
    }

    /// Unnormalized `‖x − x̄‖ + ‖y − ȳ‖`.
    pub fn raw_sum(&self, z: &ZPoint, zbar: &ZPoint) -> f64 {
        euclid(z.x(), zbar.x()) + euclid(z.y(), zbar.y())
    }

    pub fn dist(&self, z: &ZPoint, zbar: &ZPoint) -> Result<f64> {
        self.check_point(z)?;
        self.check_point(zbar)?;
        let d = match &self.custom {
            Some(f) => (f.0)(z, zbar),
            None => self.raw_sum(z, zbar) / self.kappa,
        };
        if !(0.0..=1.0 + DIAMETER_SLACK).contains(&d) {
            return Err(Error::invalid(format!(
                "distance {d} outside [0, 1]; kappa = {} is too small for {z:?}, {zbar:?}",
                self.kappa
            )));
        }
        Ok(d)
    }

    /// Errors if any pair's raw distance sum exceeds κ.
    pub fn check_kappa(&self, points: &[ZPoint]) -> Result<()> {
        for (i, a) in points.iter().enumerate() {
            self.check_point(a)?;
            for b in &points[i + 1..] {
                let raw = self.raw_sum(a, b);
                if raw > self.kappa * (1.0 + DIAMETER_SLACK) {
                    return Err(Error::GeneratorContract(format!(
                        "raw distance {raw} exceeds declared kappa {} between {a:?} and {b:?}",
                        self.kappa
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Identity of a deterministic random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_index: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64) -> Self {
        SeedSpec {
            master_seed,
            stream_index: 0,
        }
    }

    /// Child stream `child_index` of this stream.
    pub fn derive(&self, child_index: u64) -> SeedSpec {
        let mut hasher = Sha256::new();
        hasher.update(b"irf-bounds/stream");
        hasher.update(self.master_seed.to_le_bytes());
        hasher.update(self.stream_index.to_le_bytes());
        let digest = hasher.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        SeedSpec {
            master_seed: u64::from_le_bytes(bytes),
            stream_index: child_index,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_index);
        rng
    }
}

pub fn derive_stream(seed: SeedSpec, child_index: u64) -> SeedSpec {
    seed.derive(child_index)
}
