//! Hypotheses `h: X → Y`, clipped losses and the composite `L_h(z) = L(h(x), y)`.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{A2Witness, Error, Result};
use crate::irf::{interpolate, linear_apply, run_chain, table_lip, validate_table, GeneratorSpec};
use crate::metric::{euclid, MetricSpec, SeedSpec, ZPoint};

const LIP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HypothesisKind {
    Constant {
        value: Vec<f64>,
    },
    /// `W·x + c`, `W` row-major with `c.len()` rows.
    Linear {
        w: Vec<f64>,
        c: Vec<f64>,
    },
    /// Piecewise-linear interpolation on sorted knots, clamped outside; 1-D only.
    Tabulated {
        knots: Vec<f64>,
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub id: String,
    #[serde(flatten)]
    pub kind: HypothesisKind,
    /// Lipschitz constant of `h` with respect to the Euclidean metric on `X`.
    #[serde(default)]
    pub declared_lip: Option<f64>,
}

impl Hypothesis {
    pub fn constant(id: impl Into<String>, value: Vec<f64>) -> Self {
        Hypothesis {
            id: id.into(),
            kind: HypothesisKind::Constant { value },
            declared_lip: None,
        }
    }

    pub fn linear(id: impl Into<String>, w: Vec<f64>, c: Vec<f64>) -> Self {
        Hypothesis {
            id: id.into(),
            kind: HypothesisKind::Linear { w, c },
            declared_lip: None,
        }
    }

    pub fn tabulated(id: impl Into<String>, knots: Vec<f64>, values: Vec<f64>) -> Self {
        Hypothesis {
            id: id.into(),
            kind: HypothesisKind::Tabulated { knots, values },
            declared_lip: None,
        }
    }

    pub fn with_declared_lip(mut self, lip: f64) -> Self {
        self.declared_lip = Some(lip);
        self
    }

    pub fn validate(&self, dim_x: usize, dim_y: usize) -> Result<()> {
        let ok = match &self.kind {
            HypothesisKind::Constant { value } => {
                value.len() == dim_y && value.iter().all(|v| v.is_finite())
            }
            HypothesisKind::Linear { w, c } => {
                c.len() == dim_y
                    && w.len() == dim_x * dim_y
                    && w.iter().chain(c).all(|v| v.is_finite())
            }
            HypothesisKind::Tabulated { knots, values } => {
                validate_table(knots, values)?;
                dim_x == 1 && dim_y == 1
            }
        };
        if !ok {
            return Err(Error::invalid(format!(
                "hypothesis {} does not map R^{dim_x} to R^{dim_y}",
                self.id
            )));
        }
        if let Some(l) = self.declared_lip {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::invalid(format!(
                    "hypothesis {} has invalid declared_lip {l}",
                    self.id
                )));
            }
            if l < self.analytic_lip() - LIP_TOL {
                return Err(Error::invalid(format!(
                    "hypothesis {} declares Lipschitz constant {l} below its true constant {}",
                    self.id,
                    self.analytic_lip()
                )));
            }
        }
        Ok(())
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            HypothesisKind::Constant { value } => value.clone(),
            HypothesisKind::Linear { w, c } => linear_apply(w, c, x),
            HypothesisKind::Tabulated { knots, values } => vec![interpolate(knots, values, x[0])],
        }
    }

    fn analytic_lip(&self) -> f64 {
        match &self.kind {
            HypothesisKind::Constant { .. } => 0.0,
            HypothesisKind::Linear { w, c } => {
                let rows = c.len();
                let cols = w.len() / rows;
                let m = nalgebra::DMatrix::from_row_slice(rows, cols, w);
                m.singular_values().iter().copied().fold(0.0, f64::max)
            }
            HypothesisKind::Tabulated { knots, values } => table_lip(knots, values),
        }
    }

    /// The declared constant, or the exact one when none was declared.
    pub fn lip(&self) -> f64 {
        self.declared_lip.unwrap_or_else(|| self.analytic_lip())
    }

    /// Spot-checks `lip` on all pairs of the given inputs.
    pub fn check_lip(&self, xs: &[&[f64]]) -> Result<()> {
        let lip = self.lip();
        let preds: Vec<Vec<f64>> = xs.iter().map(|x| self.predict(x)).collect();
        for a in 0..xs.len() {
            for b in a + 1..xs.len() {
                let dx = euclid(xs[a], xs[b]);
                let dy = euclid(&preds[a], &preds[b]);
                if dy > lip * dx + LIP_TOL * (1.0 + dx) {
                    return Err(Error::invalid(format!(
                        "hypothesis {} exceeds its Lipschitz constant {lip} between {:?} and {:?}",
                        self.id, xs[a], xs[b]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A finite, non-empty list of hypotheses with distinct ids.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisClass {
    members: Vec<Hypothesis>,
    sup_lip: f64,
}

impl HypothesisClass {
    pub fn new(members: Vec<Hypothesis>, dim_x: usize, dim_y: usize) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::invalid("hypothesis class is empty"));
        }
        let mut seen = HashSet::new();
        for h in &members {
            if !seen.insert(h.id.as_str()) {
                return Err(Error::invalid(format!("duplicate hypothesis id {}", h.id)));
            }
            h.validate(dim_x, dim_y)?;
        }
        let sup_lip = members.iter().map(Hypothesis::lip).fold(0.0, f64::max);
        Ok(HypothesisClass { members, sup_lip })
    }

    /// `x ↦ a·x + b` on a rectangular grid of `(a, b)`, 1-D to 1-D.
    pub fn linear_grid(
        slope: (f64, f64),
        intercept: (f64, f64),
        steps: (usize, usize),
    ) -> Result<Self> {
        if steps.0 == 0 || steps.1 == 0 {
            return Err(Error::invalid("grid needs at least one step per axis"));
        }
        let axis = |(lo, hi): (f64, f64), k: usize| -> Vec<f64> {
            if k == 1 {
                vec![lo]
            } else {
                (0..k)
                    .map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64)
                    .collect()
            }
        };
        let mut members = Vec::with_capacity(steps.0 * steps.1);
        for a in axis(slope, steps.0) {
            for b in axis(intercept, steps.1) {
                members.push(Hypothesis::linear(
                    format!("lin(a={a},b={b})"),
                    vec![a],
                    vec![b],
                ));
            }
        }
        HypothesisClass::new(members, 1, 1)
    }

    pub fn members(&self) -> &[Hypothesis] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn sup_lip(&self) -> f64 {
        self.sup_lip
    }

    pub fn ids(&self) -> Vec<String> {
        self.members.iter().map(|h| h.id.clone()).collect()
    }

    pub fn union(&self, other: &HypothesisClass, dim_x: usize, dim_y: usize) -> Result<Self> {
        let mut members = self.members.clone();
        for h in &other.members {
            if !members.iter().any(|m| m.id == h.id) {
                members.push(h.clone());
            }
        }
        HypothesisClass::new(members, dim_x, dim_y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `min(‖ŷ − y‖, clip)`.
    AbsClipped,
    /// `min(‖ŷ − y‖², clip)`.
    SquaredClipped,
    /// `min(value, clip)` regardless of the inputs.
    Constant(f64),
}

impl LossKind {
    /// Lipschitz constant in `‖ŷ − y‖` after clipping at `clip`.
    pub fn lip(&self, clip: f64) -> f64 {
        match self {
            LossKind::AbsClipped => 1.0,
            LossKind::SquaredClipped => 2.0 * clip.sqrt(),
            LossKind::Constant(_) => 0.0,
        }
    }

    pub fn eval(&self, pred: &[f64], truth: &[f64], clip: f64) -> f64 {
        let raw = match self {
            LossKind::AbsClipped => euclid(pred, truth),
            LossKind::SquaredClipped => euclid(pred, truth).powi(2),
            LossKind::Constant(v) => *v,
        };
        raw.min(clip)
    }
}

/// A loss together with its (A2) constant `ℓ_H` and the sup `L_H`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossEnv {
    loss: LossKind,
    clip: f64,
    ell_h: f64,
    sup_loss: f64,
}

impl LossEnv {
    /// `sup_loss` starts at the clip level; see [`LossEnv::with_sup_loss`].
    pub fn new(loss: LossKind, clip: f64, ell_h: f64) -> Result<Self> {
        if !(clip.is_finite() && clip > 0.0) {
            return Err(Error::invalid(format!(
                "loss clip must be positive, got {clip}"
            )));
        }
        if !(ell_h.is_finite() && ell_h > 0.0) {
            return Err(Error::invalid(format!(
                "ell_H must be positive, got {ell_h}"
            )));
        }
        if let LossKind::Constant(v) = loss {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(
                    "constant loss must be finite and non-negative",
                ));
            }
        }
        let sup_loss = match loss {
            LossKind::Constant(v) => v.min(clip),
            _ => clip,
        };
        Ok(LossEnv {
            loss,
            clip,
            ell_h,
            sup_loss,
        })
    }

    /// Builds the environment with `ℓ_H` from [`compose_ell_h`].
    pub fn composed(
        loss: LossKind,
        clip: f64,
        class: &HypothesisClass,
        spec: &MetricSpec,
    ) -> Result<Self> {
        LossEnv::new(loss, clip, compose_ell_h(loss, clip, class, spec))
    }

    /// Tightens `L_H` to a known smaller value.
    pub fn with_sup_loss(mut self, sup_loss: f64) -> Result<Self> {
        if !(sup_loss >= 0.0 && sup_loss <= self.sup_loss) {
            return Err(Error::invalid(format!(
                "L_H = {sup_loss} must lie in [0, {}]",
                self.sup_loss
            )));
        }
        self.sup_loss = sup_loss;
        Ok(self)
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    pub fn clip(&self) -> f64 {
        self.clip
    }

    pub fn ell_h(&self) -> f64 {
        self.ell_h
    }

    /// `L_H = sup_{z, h} L_h(z)`.
    pub fn sup_loss(&self) -> f64 {
        self.sup_loss
    }

    /// Loss value without the `ℓ_H` check; used on hot paths after [`verify_a2`].
    pub(crate) fn raw(&self, h: &Hypothesis, z: &ZPoint) -> f64 {
        self.loss.eval(&h.predict(z.x()), z.y(), self.clip)
    }
}

/// `L_h(z) = L(h(pr_X z), pr_Y z)`.
pub fn loss_at(h: &Hypothesis, z: &ZPoint, env: &LossEnv) -> Result<f64> {
    let v = env.raw(h, z);
    if v > env.ell_h * (1.0 + LIP_TOL) {
        return Err(Error::A2Violation(Box::new(A2Witness {
            hypothesis: h.id.clone(),
            z: z.clone(),
            zbar: None,
            observed: v,
            ell_h: env.ell_h,
        })));
    }
    Ok(v)
}

/// `max(clip, loss_lip · max(sup_lip, 1) · κ)`.
///
/// `|L_h(z) − L_h(z̄)| ≤ loss_lip (Lip(h)‖Δx‖ + ‖Δy‖) ≤ loss_lip max(Lip(h), 1) κ d_Z(z, z̄)`
/// for the default metric, and the clip bounds the loss itself.
pub fn compose_ell_h(loss: LossKind, clip: f64, class: &HypothesisClass, spec: &MetricSpec) -> f64 {
    let bound = match loss {
        LossKind::Constant(v) => v.min(clip),
        _ => clip,
    };
    let lip_part = loss.lip(clip) * class.sup_lip().max(1.0) * spec.kappa();
    bound.max(lip_part)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct A2Report {
    pub pairs: usize,
    pub max_ratio: f64,
    pub max_loss: f64,
    pub ell_h: f64,
    pub passed: bool,
}

const A2_MAX_STEPS: usize = 32;

/// Samples `num_pairs` pairs of chain states and checks both halves of (A2)
/// plus each hypothesis' declared Lipschitz constant.
pub fn verify_a2(
    env: &LossEnv,
    class: &HypothesisClass,
    gen: &GeneratorSpec,
    num_pairs: usize,
    seed: SeedSpec,
) -> Result<A2Report> {
    if num_pairs == 0 {
        return Err(Error::invalid("verify_a2 needs at least one pair"));
    }
    let spec = gen.metric();
    let pairs: Vec<(ZPoint, ZPoint)> = (0..num_pairs)
        .into_par_iter()
        .map(|p| {
            let s = seed.derive(p as u64);
            let k = (p % (A2_MAX_STEPS + 1), (7 * p + 3) % (A2_MAX_STEPS + 1));
            let a = run_chain(gen, gen.start(), k.0, s.derive(0))?;
            let b = run_chain(gen, gen.start(), k.1, s.derive(1))?;
            Ok((a, b))
        })
        .collect::<Result<_>>()?;

    let xs: Vec<&[f64]> = pairs
        .iter()
        .flat_map(|(a, b)| [a.x(), b.x()])
        .take(64)
        .collect();
    for h in class.members() {
        h.check_lip(&xs)?;
    }

    let limit = env.ell_h * (1.0 + LIP_TOL);
    let mut max_ratio: f64 = 0.0;
    let mut max_loss: f64 = 0.0;
    for h in class.members() {
        for (z, zbar) in &pairs {
            let lz = env.raw(h, z);
            let lb = env.raw(h, zbar);
            let d = spec.dist(z, zbar)?;
            if d > 0.0 {
                let ratio = (lz - lb).abs() / d;
                if ratio > limit {
                    return Err(Error::A2Violation(Box::new(A2Witness {
                        hypothesis: h.id.clone(),
                        z: z.clone(),
                        zbar: Some(zbar.clone()),
                        observed: ratio,
                        ell_h: env.ell_h,
                    })));
                }
                max_ratio = max_ratio.max(ratio);
            }
            max_loss = max_loss
                .max(loss_at(h, z, env)?)
                .max(loss_at(h, zbar, env)?);
        }
    }
    Ok(A2Report {
        pairs: num_pairs,
        max_ratio,
        max_loss,
        ell_h: env.ell_h,
        passed: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::irf::AffineMap;
    use crate::irf::{Bounds, LabelMap};

    fn z(x: f64, y: f64) -> ZPoint {
        ZPoint::new(vec![x], vec![y]).unwrap()
    }

    fn example3() -> GeneratorSpec {
        GeneratorSpec::deterministic(
            "ex3",
            AffineMap::new(vec![0.5], vec![0.25]).unwrap(),
            LabelMap::Identity,
            2.0,
            Some(Bounds::Box {
                x_lo: vec![0.0],
                x_hi: vec![1.0],
                y_lo: vec![0.0],
                y_hi: vec![1.0],
            }),
            vec![1.0],
        )
        .unwrap()
    }

    #[test]
    fn loss_values() {
        let env = LossEnv::new(LossKind::AbsClipped, 1.0, 1.0).unwrap();
        let id = Hypothesis::linear("id", vec![1.0], vec![0.0]);
        let zero = Hypothesis::constant("zero", vec![0.0]);
        assert_eq!(loss_at(&id, &z(0.5, 0.5), &env).unwrap(), 0.0);
        assert_eq!(loss_at(&zero, &z(0.2, 0.4), &env).unwrap(), 0.4);
        let far = Hypothesis::constant("far", vec![10.0]);
        assert_eq!(loss_at(&far, &z(0.0, 0.0), &env).unwrap(), 1.0);
    }

    #[test]
    fn loss_above_ell_h_is_an_a2_error() {
        let env = LossEnv::new(LossKind::AbsClipped, 1.0, 0.5).unwrap();
        let far = Hypothesis::constant("far", vec![10.0]);
        assert!(matches!(
            loss_at(&far, &z(0.0, 0.0), &env),
            Err(Error::A2Violation(_))
        ));
    }

    #[test]
    fn composition_rule() {
        let spec = MetricSpec::new(1, 1, 2.0).unwrap();
        let class =
            HypothesisClass::new(vec![Hypothesis::linear("id", vec![1.0], vec![0.0])], 1, 1)
                .unwrap();
        assert_eq!(
            compose_ell_h(LossKind::Constant(0.3), 1.0, &class, &spec),
            0.3
        );
        assert_eq!(compose_ell_h(LossKind::AbsClipped, 1.0, &class, &spec), 2.0);
        // squared_clipped at clip 1 has loss_lip 2.
        assert_eq!(
            compose_ell_h(LossKind::SquaredClipped, 1.0, &class, &spec),
            4.0
        );
    }

    #[test]
    fn a2_passes_on_halving_chain() {
        let gen = example3();
        let class = HypothesisClass::new(
            vec![
                Hypothesis::linear("id", vec![1.0], vec![0.0]),
                Hypothesis::constant("zero", vec![0.0]),
                Hypothesis::constant("one", vec![1.0]),
            ],
            1,
            1,
        )
        .unwrap();
        let env = LossEnv::composed(LossKind::AbsClipped, 1.0, &class, gen.metric()).unwrap();
        let report = verify_a2(&env, &class, &gen, 200, SeedSpec::new(3)).unwrap();
        assert!(report.passed);
        assert!(report.max_ratio <= env.ell_h());
        assert!(report.max_loss <= 1.0);
    }

    #[test]
    fn a2_constant_loss_ratio_zero() {
        let gen = example3();
        let class = HypothesisClass::new(vec![Hypothesis::constant("c", vec![0.0])], 1, 1).unwrap();
        let env = LossEnv::new(LossKind::Constant(0.2), 1.0, 0.2).unwrap();
        let report = verify_a2(&env, &class, &gen, 50, SeedSpec::new(1)).unwrap();
        assert_eq!(report.max_ratio, 0.0);
    }

    #[test]
    fn a2_misdeclared_constant_has_witness() {
        let gen = example3();
        let class =
            HypothesisClass::new(vec![Hypothesis::constant("zero", vec![0.0])], 1, 1).unwrap();
        let env = LossEnv::new(LossKind::AbsClipped, 1.0, 0.01).unwrap();
        match verify_a2(&env, &class, &gen, 100, SeedSpec::new(9)) {
            Err(Error::A2Violation(w)) => {
                assert_eq!(w.hypothesis, "zero");
                assert!(w.zbar.is_some());
                assert!(w.observed > 0.01);
            }
            other => panic!("expected violation, got {other:?}"),
        }
    }

    #[test]
    fn class_invariants() {
        let dup = vec![
            Hypothesis::constant("a", vec![0.0]),
            Hypothesis::constant("a", vec![1.0]),
        ];
        assert!(HypothesisClass::new(dup, 1, 1).is_err());
        assert!(HypothesisClass::new(vec![], 1, 1).is_err());
        let grid = HypothesisClass::linear_grid((0.0, 1.0), (-0.5, 0.5), (3, 5)).unwrap();
        assert_eq!(grid.len(), 15);
        let ids: HashSet<_> = grid.ids().into_iter().collect();
        assert_eq!(ids.len(), 15);
        assert_eq!(grid.sup_lip(), 1.0);
    }

    #[test]
    fn declared_lip_is_checked() {
        let h = Hypothesis::linear("steep", vec![3.0], vec![0.0]).with_declared_lip(1.0);
        assert!(h.validate(1, 1).is_err());
        let ok = Hypothesis::linear("ok", vec![3.0], vec![0.0]).with_declared_lip(3.5);
        ok.validate(1, 1).unwrap();
        assert_eq!(ok.lip(), 3.5);
        let t = Hypothesis::tabulated("t", vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 2.5]);
        assert_eq!(t.lip(), 2.0);
        t.check_lip(&[&[0.0], &[0.3], &[1.7], &[5.0]]).unwrap();
    }

    #[test]
    fn hypothesis_json_shape() {
        let h: Hypothesis =
            serde_json::from_str(r#"{"id":"h","kind":"linear","w":[2.0],"c":[0.5]}"#).unwrap();
        assert_eq!(h.predict(&[1.0]), vec![2.5]);
        let bad = serde_json::from_str::<Hypothesis>(
            r#"{"id":"h","kind":"constant","value":[0.0],"typo":1}"#,
        );
        assert!(bad.is_err());
    }
}
