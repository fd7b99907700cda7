//! Built-in experiment setups with analytic constants.

use crate::error::{Error, Result};
use crate::hypothesis::{Hypothesis, HypothesisClass, LossKind};
use crate::irf::{AffineMap, Bounds, GeneratorSpec, LabelMap, SquashMap};
use crate::metric::{MetricSpec, ZPoint};

pub const PRESET_NAMES: [&str; 6] = [
    "iid",
    "iid_pair",
    "example1",
    "example3",
    "affine",
    "affine_image",
];

/// A generator with its default class and loss.
#[derive(Debug, Clone)]
pub struct Preset {
    pub name: &'static str,
    pub generator: GeneratorSpec,
    pub class: HypothesisClass,
    pub loss: LossKind,
    pub clip: f64,
}

pub fn preset(name: &str) -> Result<Preset> {
    match name {
        "iid" => iid(),
        "iid_pair" => {
            let mut p = iid()?;
            p.name = "iid_pair";
            p.class = HypothesisClass::new(p.class.members()[..2].to_vec(), 1, 1)?;
            Ok(p)
        }
        "example1" => example1(),
        "example3" => example3(),
        "affine" => affine(),
        "affine_image" => affine_image(),
        other => Err(Error::Config(format!(
            "unknown preset {other:?}; expected one of {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}

/// Sixteen equally weighted atoms on `[0, 1]²` with noisy linear labels.
pub fn iid_atoms() -> Vec<ZPoint> {
    const NOISE: [f64; 16] = [
        0.08, -0.05, 0.12, -0.10, 0.02, 0.15, -0.12, 0.05, -0.02, 0.10, -0.15, 0.07, 0.00, -0.08,
        0.11, -0.04,
    ];
    (0..16)
        .map(|i| {
            let x = i as f64 / 15.0;
            let y = (0.2 + 0.6 * x + NOISE[i]).clamp(0.0, 1.0);
            ZPoint::new(vec![x], vec![y]).expect("finite")
        })
        .collect()
}

fn iid() -> Result<Preset> {
    let generator = GeneratorSpec::iid(
        "iid",
        iid_atoms(),
        &[1.0 / 16.0; 16],
        MetricSpec::new(1, 1, 2.0)?,
    )?;
    let class = HypothesisClass::new(
        vec![
            Hypothesis::constant("const_0.3", vec![0.3]),
            Hypothesis::constant("const_0.6", vec![0.6]),
            Hypothesis::linear("identity", vec![1.0], vec![0.0]),
            Hypothesis::linear("affine_0.6x+0.2", vec![0.6], vec![0.2]),
        ],
        1,
        1,
    )?;
    Ok(Preset {
        name: "iid",
        generator,
        class,
        loss: LossKind::AbsClipped,
        clip: 1.0,
    })
}

/// `x ↦ s_i tanh(x) + t_i` on `[−1, 1]` labeled by a tabulated rule.
fn example1() -> Result<Preset> {
    let label = LabelMap::Tabulated {
        knots: vec![-1.0, 0.0, 1.0],
        values: vec![0.0, 0.3, 0.5],
    };
    let generator = GeneratorSpec::labeled_lipschitz(
        "example1",
        vec![
            SquashMap::new(vec![0.6], vec![0.2])?,
            SquashMap::new(vec![-0.4], vec![-0.3])?,
        ],
        &[0.5, 0.5],
        label,
        2.5,
        Some(Bounds::Box {
            x_lo: vec![-1.0],
            x_hi: vec![1.0],
            y_lo: vec![0.0],
            y_hi: vec![0.5],
        }),
        vec![0.0],
    )?;
    let class = HypothesisClass::linear_grid((0.0, 0.5), (0.0, 0.4), (3, 3))?;
    Ok(Preset {
        name: "example1",
        generator,
        class,
        loss: LossKind::AbsClipped,
        clip: 1.0,
    })
}

/// `x ↦ x/2 + 1/4` on `[0, 1]` with identity labels; `π = δ_{(1/2, 1/2)}`.
fn example3() -> Result<Preset> {
    let generator = GeneratorSpec::deterministic(
        "example3",
        AffineMap::new(vec![0.5], vec![0.25])?,
        LabelMap::Identity,
        2.0,
        Some(Bounds::Box {
            x_lo: vec![0.0],
            x_hi: vec![1.0],
            y_lo: vec![0.0],
            y_hi: vec![1.0],
        }),
        vec![1.0],
    )?;
    let class = HypothesisClass::new(
        vec![
            Hypothesis::linear("identity", vec![1.0], vec![0.0]),
            Hypothesis::constant("const_0", vec![0.0]),
            Hypothesis::constant("const_1", vec![1.0]),
            Hypothesis::linear("affine_0.5x+0.2", vec![0.5], vec![0.2]),
        ],
        1,
        1,
    )?;
    Ok(Preset {
        name: "example3",
        generator,
        class,
        loss: LossKind::AbsClipped,
        clip: 1.0,
    })
}

/// Common fixed point of the affine presets.
pub const AFFINE_FIXED_POINT: [f64; 2] = [0.2, -0.1];

/// Two planar maps with norms 0.25 (scaled rotation) and 0.15, weights ½, a
/// shared fixed point and identity labels: `ℓ_F = 0.2` and `π` a point mass.
fn affine() -> Result<Preset> {
    let (c, s) = (0.25 * 0.6, 0.25 * 0.8);
    let a1 = vec![c, -s, s, c];
    let a2 = vec![0.15, 0.0, 0.0, 0.15];
    let p = AFFINE_FIXED_POINT;
    let b_for = |a: &[f64]| {
        vec![
            p[0] - (a[0] * p[0] + a[1] * p[1]),
            p[1] - (a[2] * p[0] + a[3] * p[1]),
        ]
    };
    let maps = vec![
        AffineMap::new(a1.clone(), b_for(&a1))?,
        AffineMap::new(a2.clone(), b_for(&a2))?,
    ];
    let generator =
        GeneratorSpec::affine_ifs("affine", maps, &[0.5, 0.5], LabelMap::Identity, 1.0, None)?;
    Ok(Preset {
        name: "affine",
        generator,
        class: planar_class()?,
        loss: LossKind::AbsClipped,
        clip: 1.0,
    })
}

/// Three half-scale maps towards the corners of a triangle: a non-degenerate `π`.
fn affine_image() -> Result<Preset> {
    let a = vec![0.5, 0.0, 0.0, 0.5];
    let maps = vec![
        AffineMap::new(a.clone(), vec![0.0, 0.25])?,
        AffineMap::new(a.clone(), vec![-0.25, -0.2])?,
        AffineMap::new(a, vec![0.25, -0.2])?,
    ];
    let generator = GeneratorSpec::affine_ifs(
        "affine_image",
        maps,
        &[1.0 / 3.0; 3],
        LabelMap::Identity,
        1.0,
        None,
    )?;
    Ok(Preset {
        name: "affine_image",
        generator,
        class: planar_class()?,
        loss: LossKind::AbsClipped,
        clip: 1.0,
    })
}

fn planar_class() -> Result<HypothesisClass> {
    HypothesisClass::new(
        vec![
            Hypothesis::linear("identity", vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]),
            Hypothesis::linear("half", vec![0.5, 0.0, 0.0, 0.5], vec![0.0, 0.0]),
            Hypothesis::constant("origin", vec![0.0, 0.0]),
            Hypothesis::constant("fixed_point", AFFINE_FIXED_POINT.to_vec()),
        ],
        2,
        2,
    )
}
