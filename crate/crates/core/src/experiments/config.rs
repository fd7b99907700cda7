use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::erm::{RiskMode, WindowMode};
use crate::error::{Error, Result};
use crate::hypothesis::{Hypothesis, LossKind};
use crate::irf::{AffineMap, Bounds, LabelMap, SquashMap};
use crate::validate::ValidationSettings;

/// Explicit generator description; matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorBlock {
    Iid {
        dim_x: usize,
        /// One row per atom: x-coordinates then y-coordinates.
        atoms: Vec<Vec<f64>>,
        weights: Vec<f64>,
        kappa: f64,
    },
    AffineIfs {
        maps: Vec<AffineMap>,
        weights: Vec<f64>,
        label: LabelMap,
        radius: f64,
        #[serde(default)]
        kappa: Option<f64>,
    },
    LabeledLipschitz {
        maps: Vec<SquashMap>,
        weights: Vec<f64>,
        label: LabelMap,
        kappa: f64,
        bounds: Bounds,
        start_x: Vec<f64>,
    },
    DeterministicMap {
        map: AffineMap,
        label: LabelMap,
        kappa: f64,
        bounds: Bounds,
        start_x: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassBlock {
    FiniteList {
        members: Vec<Hypothesis>,
    },
    /// `x ↦ a x + b` for 1-D inputs and labels.
    LinearGrid {
        slope: (f64, f64),
        intercept: (f64, f64),
        steps: (usize, usize),
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossBlock {
    pub kind: LossKind,
    pub clip: f64,
    /// Overrides the composed `ℓ_H`.
    #[serde(default)]
    pub ell_h: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionBlock {
    pub n_max: usize,
    pub atoms_per_step: usize,
    pub pi_tol: f64,
}

impl Default for ContractionBlock {
    fn default() -> Self {
        ContractionBlock {
            n_max: 10,
            atoms_per_step: 200,
            pi_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

/// One experiment. Either `preset` or `generator` must be given; `class` and
/// `loss` fall back to the preset's choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub generator: Option<GeneratorBlock>,
    #[serde(default)]
    pub class: Option<ClassBlock>,
    #[serde(default)]
    pub loss: Option<LossBlock>,
    pub n: usize,
    pub epsilon: f64,
    #[serde(default)]
    pub delta: Option<f64>,
    pub trials: usize,
    #[serde(default)]
    pub window_mode: WindowMode,
    pub seed: u64,
    #[serde(default)]
    pub risk_mode: Option<RiskMode>,
    #[serde(default)]
    pub validation: Option<ValidationSettings>,
    #[serde(default)]
    pub contraction: Option<ContractionBlock>,
    #[serde(default)]
    pub sweep: Option<Vec<usize>>,
    #[serde(default)]
    pub output: OutputBlock,
}

impl ExperimentConfig {
    /// A preset with the given sizes and every other field defaulted.
    pub fn preset(name: &str, n: usize, epsilon: f64, trials: usize, seed: u64) -> Self {
        ExperimentConfig {
            preset: Some(name.to_string()),
            generator: None,
            class: None,
            loss: None,
            n,
            epsilon,
            delta: None,
            trials,
            window_mode: WindowMode::Delayed,
            seed,
            risk_mode: None,
            validation: None,
            contraction: None,
            sweep: None,
            output: OutputBlock::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg = ExperimentConfig::from_json(&text)?;
        Ok((cfg, config_hash_of_text(&text)?))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match (&self.preset, &self.generator) {
            (Some(_), Some(_)) => return bad("give either preset or generator, not both".into()),
            (None, None) => return bad("one of preset or generator is required".into()),
            _ => {}
        }
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d < 1.0) {
                return bad(format!("delta must lie in (0, 1), got {d}"));
            }
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if let Some(v) = &self.validation {
            if !(v.stationary_tol > 0.0 && v.stationary_tol < 1.0) {
                return bad("validation.stationary_tol must lie in (0, 1)".into());
            }
            if v.rademacher_draws == 0 || v.outer_draws == 0 {
                return bad("validation draws must be at least 1".into());
            }
            if !(0.0..=1.0).contains(&v.w_bar) {
                return bad("validation.w_bar must lie in [0, 1]".into());
            }
        }
        if let Some(c) = &self.contraction {
            if c.atoms_per_step == 0 || !(c.pi_tol > 0.0 && c.pi_tol < 1.0) {
                return bad("contraction needs atoms_per_step >= 1 and pi_tol in (0, 1)".into());
            }
        }
        if let Some(s) = &self.sweep {
            if s.is_empty() || s.contains(&0) {
                return bad("sweep needs a non-empty list of positive n".into());
            }
        }
        if let Some(l) = &self.loss {
            if !(l.clip > 0.0 && l.clip.is_finite()) {
                return bad("loss.clip must be positive".into());
            }
        }
        Ok(())
    }

    /// Sorted-key JSON without whitespace.
    pub fn canonical_json(&self) -> Result<String> {
        canonical(&serde_json::to_value(self)?)
    }

    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(&self.canonical_json()?))
    }
}

fn canonical(v: &serde_json::Value) -> Result<String> {
    // serde_json's default map is ordered by key.
    Ok(serde_json::to_string(v)?)
}

fn sha256_hex(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

/// Hash of the canonical form of a config file's JSON text.
pub fn config_hash_of_text(text: &str) -> Result<String> {
    let v: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    Ok(sha256_hex(&canonical(&v)?))
}
