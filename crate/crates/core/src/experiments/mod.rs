//! Config-driven experiments: presets, result bundles and the runners behind
//! the command line.

pub mod bundle;
pub mod config;
pub mod presets;

use serde::Serialize;

use crate::certificates::confidence;
use crate::erm::RiskMode;
use crate::error::{Error, Result};
use crate::hypothesis::{loss_at, verify_a2, A2Report, HypothesisClass, LossEnv};
use crate::irf::{sample_from, GeneratorSpec, StartLaw, Trajectory, Variant};
use crate::metric::{MetricSpec, SeedSpec, ZPoint};
use crate::transport::contraction_curve;
use crate::validate::{
    coverage_experiment, validate_lemma1, validate_lemma2, validate_lemma3, validate_remark,
    CoverageRow, Problem, ValidationSettings, ValidatorReport,
};

pub use bundle::{
    emit_plot_data, CoverageSummary, PlotData, PlotKind, ResultBundle, Summary, SweepPoint,
};
pub use config::{ClassBlock, ContractionBlock, ExperimentConfig, GeneratorBlock, LossBlock};

const A2_PAIRS: usize = 256;
const DEFAULT_ERGODIC: RiskMode = RiskMode::Ergodic {
    tol: 1e-9,
    replicas: 64,
    length: 4000,
};

/// A validated config turned into library objects; (A2) has been checked.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub generator: GeneratorSpec,
    pub class: HypothesisClass,
    pub env: LossEnv,
    pub settings: ValidationSettings,
    pub a2: A2Report,
}

fn build_generator(block: &GeneratorBlock) -> Result<GeneratorSpec> {
    match block {
        GeneratorBlock::Iid {
            dim_x,
            atoms,
            weights,
            kappa,
        } => {
            let points = atoms
                .iter()
                .map(|r| ZPoint::from_row(r, *dim_x))
                .collect::<Result<Vec<_>>>()?;
            let dim_y = points.first().map(ZPoint::dim_y).unwrap_or(0);
            GeneratorSpec::iid(
                "custom_iid",
                points,
                weights,
                MetricSpec::new(*dim_x, dim_y, *kappa)?,
            )
        }
        GeneratorBlock::AffineIfs {
            maps,
            weights,
            label,
            radius,
            kappa,
        } => GeneratorSpec::affine_ifs(
            "custom_affine",
            maps.clone(),
            weights,
            label.clone(),
            *radius,
            *kappa,
        ),
        GeneratorBlock::LabeledLipschitz {
            maps,
            weights,
            label,
            kappa,
            bounds,
            start_x,
        } => GeneratorSpec::labeled_lipschitz(
            "custom_labeled",
            maps.clone(),
            weights,
            label.clone(),
            *kappa,
            Some(bounds.clone()),
            start_x.clone(),
        ),
        GeneratorBlock::DeterministicMap {
            map,
            label,
            kappa,
            bounds,
            start_x,
        } => GeneratorSpec::deterministic(
            "custom_deterministic",
            map.clone(),
            label.clone(),
            *kappa,
            Some(bounds.clone()),
            start_x.clone(),
        ),
    }
}

fn build_class(block: &ClassBlock, metric: &MetricSpec) -> Result<HypothesisClass> {
    match block {
        ClassBlock::FiniteList { members } => {
            HypothesisClass::new(members.clone(), metric.dim_x(), metric.dim_y())
        }
        ClassBlock::LinearGrid {
            slope,
            intercept,
            steps,
        } => {
            if metric.dim_x() != 1 || metric.dim_y() != 1 {
                return Err(Error::Config(
                    "linear_grid classes need 1-D inputs and labels".into(),
                ));
            }
            HypothesisClass::linear_grid(*slope, *intercept, *steps)
        }
    }
}

/// Maps library errors raised while reading a config onto the config category,
/// leaving assumption violations untouched.
fn as_config_error(e: Error) -> Error {
    match e {
        Error::InvalidInput(m) | Error::Size(m) => Error::Config(m),
        other => other,
    }
}

impl Experiment {
    pub fn from_config(config: ExperimentConfig, config_hash: Option<String>) -> Result<Self> {
        config.validate()?;
        let config_hash = match config_hash {
            Some(h) => h,
            None => config.hash()?,
        };
        let preset = match &config.preset {
            Some(name) => Some(presets::preset(name)?),
            None => None,
        };
        let generator = match (&config.generator, &preset) {
            (Some(block), _) => build_generator(block).map_err(as_config_error)?,
            (None, Some(p)) => p.generator.clone(),
            (None, None) => unreachable!("validated"),
        };
        let class = match (&config.class, &preset) {
            (Some(block), _) => build_class(block, generator.metric()).map_err(as_config_error)?,
            (None, Some(p)) => p.class.clone(),
            (None, None) => {
                return Err(Error::Config(
                    "a class block is required without a preset".into(),
                ))
            }
        };
        let (kind, clip, declared) = match (&config.loss, &preset) {
            (Some(l), _) => (l.kind, l.clip, l.ell_h),
            (None, Some(p)) => (p.loss, p.clip, None),
            (None, None) => (crate::hypothesis::LossKind::AbsClipped, 1.0, None),
        };
        let mut env = match declared {
            Some(ell_h) => LossEnv::new(kind, clip, ell_h),
            None => LossEnv::composed(kind, clip, &class, generator.metric()),
        }
        .map_err(as_config_error)?;
        if generator.variant() == Variant::Iid {
            // The chain lives on the atoms, so L_H is a finite maximum.
            let pi = generator
                .exact_invariant()
                .expect("iid generators have an exact law");
            let mut sup: f64 = 0.0;
            for h in class.members() {
                for z in pi.atoms() {
                    sup = sup.max(loss_at(h, z, &env)?);
                }
            }
            if sup < env.sup_loss() {
                env = env.with_sup_loss(sup)?;
            }
        }
        let a2 = verify_a2(
            &env,
            &class,
            &generator,
            A2_PAIRS,
            SeedSpec::new(config.seed).derive(u64::MAX),
        )?;

        let mut settings = config.validation.unwrap_or_default();
        settings.window = config.window_mode;
        settings.risk_mode = match config.risk_mode {
            Some(m) => m,
            None if generator.exact_invariant().is_some() => RiskMode::Exact,
            None => DEFAULT_ERGODIC,
        };
        Ok(Experiment {
            config,
            config_hash,
            generator,
            class,
            env,
            settings,
            a2,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let (cfg, hash) = ExperimentConfig::load(path)?;
        Experiment::from_config(cfg, Some(hash))
    }

    pub fn problem(&self) -> Problem<'_> {
        Problem {
            gen: &self.generator,
            class: &self.class,
            env: &self.env,
            settings: self.settings,
        }
    }

    pub fn seed(&self) -> SeedSpec {
        SeedSpec::new(self.config.seed)
    }

    fn summary(&self, command: &str) -> Summary {
        let mut s = Summary::new(command, &self.config_hash, self.config.seed);
        s.ingredients = serde_json::json!({
            "ell_h": self.env.ell_h(),
            "ell_f": self.generator.lip_factor(),
            "sup_loss": self.env.sup_loss(),
            "n": self.config.n,
            "epsilon": self.config.epsilon,
            "class_size": self.class.len(),
            "a2_max_ratio": self.a2.max_ratio,
            "a2_max_loss": self.a2.max_loss,
        });
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validator {
    Lemma1,
    Lemma2,
    Lemma3,
    Coverage,
    Remark,
}

impl Validator {
    pub fn name(self) -> &'static str {
        match self {
            Validator::Lemma1 => "lemma1",
            Validator::Lemma2 => "lemma2",
            Validator::Lemma3 => "lemma3",
            Validator::Coverage => "coverage",
            Validator::Remark => "remark",
        }
    }
}

fn report_bundle(exp: &Experiment, report: &ValidatorReport) -> Result<ResultBundle> {
    let mut s = exp.summary(&format!("validate {}", report.validator));
    s.verdicts.insert(report.validator.clone(), report.passed);
    s.report = serde_json::to_value(report)?;
    ResultBundle::new(s, &report.rows)
}

pub fn run_validator(exp: &Experiment, which: Validator) -> Result<ResultBundle> {
    let p = exp.problem();
    let c = &exp.config;
    let seed = exp.seed();
    match which {
        Validator::Lemma1 => {
            report_bundle(exp, &validate_lemma1(&p, c.n, c.epsilon, c.trials, seed)?)
        }
        Validator::Lemma2 => report_bundle(exp, &validate_lemma2(&p, c.n, c.trials, seed)?),
        Validator::Lemma3 => {
            report_bundle(exp, &validate_lemma3(&p, c.n, c.epsilon, c.trials, seed)?)
        }
        Validator::Remark => report_bundle(exp, &validate_remark(&p, c.n, c.trials, seed)?),
        Validator::Coverage => run_coverage(exp),
    }
}

/// Coverage of both certificate forms at the configured `n`.
pub fn run_coverage(exp: &Experiment) -> Result<ResultBundle> {
    let c = &exp.config;
    let report = coverage_experiment(&exp.problem(), c.n, c.epsilon, c.trials, exp.seed())?;
    let mut s = exp.summary("coverage");
    s.radius = Some(report.population.radius);
    s.confidence = Some(report.confidence);
    s.coverage = Some(CoverageSummary {
        population: report.coverage_pop,
        empirical: report.coverage_emp,
    });
    s.verdicts
        .insert("coverage_population".into(), report.passed_pop);
    s.verdicts
        .insert("coverage_empirical".into(), report.passed_emp);
    if let Some(delta) = c.delta {
        s.verdicts.insert(
            "confidence_meets_delta".into(),
            report.confidence >= 1.0 - delta,
        );
    }
    s.ingredients["population_certificate"] = serde_json::to_value(report.population)?;
    s.report = serde_json::to_value(&report)?;
    ResultBundle::new(s, &report.rows)
}

#[derive(Serialize)]
struct SweepRow {
    n: usize,
    trial: usize,
    deviation: f64,
    radius_pop: f64,
    radius_emp: f64,
    covered_pop: bool,
    covered_emp: bool,
}

impl SweepRow {
    fn new(n: usize, r: CoverageRow) -> Self {
        SweepRow {
            n,
            trial: r.trial,
            deviation: r.deviation,
            radius_pop: r.radius_pop,
            radius_emp: r.radius_emp,
            covered_pop: r.covered_pop,
            covered_emp: r.covered_emp,
        }
    }
}

/// Coverage at each `n` in `ns`; trials for size `n_k` use stream `k`.
pub fn run_sweep(exp: &Experiment, ns: &[usize]) -> Result<ResultBundle> {
    if ns.is_empty() {
        return Err(Error::Config("sweep needs at least one n".into()));
    }
    let c = &exp.config;
    let mut points = Vec::with_capacity(ns.len());
    let mut rows = Vec::new();
    for (k, &n) in ns.iter().enumerate() {
        let r = coverage_experiment(
            &exp.problem(),
            n,
            c.epsilon,
            c.trials,
            exp.seed().derive(k as u64),
        )?;
        points.push(SweepPoint {
            n,
            confidence: r.confidence,
            coverage_pop: r.coverage_pop,
            coverage_emp: r.coverage_emp,
            radius_pop: r.population.radius,
            mean_radius_emp: r.mean_radius_emp,
        });
        rows.extend(r.rows.into_iter().map(|row| SweepRow::new(n, row)));
    }
    let mut s = exp.summary("coverage sweep");
    for p in &points {
        let se = (p.confidence * (1.0 - p.confidence) / c.trials as f64).sqrt();
        s.verdicts.insert(
            format!("n={}_population", p.n),
            p.coverage_pop >= p.confidence - 3.0 * se,
        );
        s.verdicts.insert(
            format!("n={}_empirical", p.n),
            p.coverage_emp >= p.confidence - 3.0 * se,
        );
    }
    s.report = serde_json::to_value(&points)?;
    let mut bundle = ResultBundle::new(s, &rows)?;
    bundle.plot = Some(PlotData::CoverageSweep(points));
    Ok(bundle)
}

/// `step, x_0.., y_0..` rows.
pub fn trajectory_csv(traj: &Trajectory) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let first = &traj.points[0];
    let mut header = vec!["step".to_string()];
    header.extend((0..first.dim_x()).map(|i| format!("x_{i}")));
    header.extend((0..first.dim_y()).map(|i| format!("y_{i}")));
    w.write_record(&header)?;
    for (i, z) in traj.points.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(z.to_row().iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Reads a trajectory written by [`trajectory_csv`].
pub fn read_trajectory_csv(text: &str, dim_x: usize) -> Result<Vec<ZPoint>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut points = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let vals = rec
            .iter()
            .skip(1)
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::invalid(format!("bad number {v:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        points.push(ZPoint::from_row(&vals, dim_x)?);
    }
    if points.is_empty() {
        return Err(Error::invalid("trajectory CSV has no rows"));
    }
    Ok(points)
}

/// A length-`2n` trajectory from the generator's start plus its contraction curve.
pub fn run_simulate(exp: &Experiment, length: Option<usize>) -> Result<ResultBundle> {
    let len = length.unwrap_or(2 * exp.config.n);
    let seed = exp.seed();
    let traj = sample_from(&exp.generator, StartLaw::Point, len, seed.derive(0))?;
    let cb = exp.config.contraction.clone().unwrap_or_default();
    let curve = contraction_curve(
        &exp.generator,
        std::slice::from_ref(exp.generator.start()),
        cb.n_max,
        cb.atoms_per_step,
        cb.pi_tol,
        seed.derive(1),
    )?;
    let mut s = exp.summary("simulate");
    s.report = serde_json::json!({ "length": len, "contraction": curve });
    let mut bundle = ResultBundle::new(s, &curve)?;
    bundle.plot = Some(PlotData::Contraction(curve));
    bundle
        .extra
        .push(("trajectory.csv".into(), trajectory_csv(&traj)?));
    Ok(bundle)
}

/// The confidence attached to the configured `(n, ε)`.
pub fn configured_confidence(exp: &Experiment) -> f64 {
    confidence(
        exp.config.epsilon,
        exp.config.n as u64,
        exp.env.ell_h(),
        exp.generator.lip_factor(),
    )
}
