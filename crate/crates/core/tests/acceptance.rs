//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Each criterion is run in a 4-worker pool, timed against its budget, then
//! rerun in a 1-worker pool; criterion 10 compares the per-trial CSVs.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use irf_bounds::certificates::{confidence, invert_epsilon, sample_complexity};
use irf_bounds::complexity::{rademacher_exact, rademacher_mc, LossMatrix};
use irf_bounds::erm::{erm, select, TieBreak};
use irf_bounds::experiments::config::ClassBlock;
use irf_bounds::experiments::{
    presets, run_validator, Experiment, ExperimentConfig, ResultBundle, Validator,
};
use irf_bounds::hypothesis::Hypothesis;
use irf_bounds::irf::sample_chain;
use irf_bounds::metric::{MetricSpec, SeedSpec, ZPoint};
use irf_bounds::transport::{
    contraction_curve, kr_dual_lower_bound, w1_bruteforce, w1_exact, DistanceTo, EmpiricalMeasure,
    LipschitzProbe, ScaledCoordinate,
};

struct Outcome {
    passed: bool,
    detail: String,
    /// Per-trial record compared by the determinism criterion.
    csv: String,
}

fn csv_of(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

fn c1_rademacher() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut rows = Vec::new();
    let mut within = 0;
    for case in 0..50u64 {
        let k = rng.gen_range(1..=8);
        let n = rng.gen_range(1..=12);
        let values: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..n).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let m = LossMatrix::from_rows(values).unwrap();
        let exact = rademacher_exact(&m).unwrap();
        let mc = rademacher_mc(&m, 100_000, SeedSpec::new(7).derive(case)).unwrap();
        let ok = (mc.value - exact.value).abs() <= 3.0 * mc.std_error;
        within += ok as usize;
        rows.push(format!(
            "{case},{k},{n},{},{},{},{ok}",
            exact.value, mc.value, mc.std_error
        ));
    }
    let hand = LossMatrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    let hand_value = rademacher_exact(&hand).unwrap().value;
    Outcome {
        passed: within >= 48 && hand_value == 0.25,
        detail: format!("{within}/50 within 3 SE, hand case = {hand_value}"),
        csv: csv_of("case,k,n,exact,mc,se,within", rows),
    }
}

fn random_measure(rng: &mut ChaCha8Rng, size: usize) -> EmpiricalMeasure {
    let atoms = (0..size)
        .map(|_| {
            ZPoint::new(
                vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                vec![rng.gen_range(0.0..1.0)],
            )
            .unwrap()
        })
        .collect();
    EmpiricalMeasure::uniform(atoms).unwrap()
}

fn c2_wasserstein() -> Outcome {
    let spec = MetricSpec::new(2, 1, 4.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut rows = Vec::new();
    let (mut max_gap, mut kr_ok) = (0.0f64, true);
    for case in 0..100 {
        let size = rng.gen_range(1..=7);
        let a = random_measure(&mut rng, size);
        let b = random_measure(&mut rng, size);
        let (exact, _) = w1_exact(&a, &b, &spec).unwrap();
        let brute = w1_bruteforce(&a, &b, &spec).unwrap();
        let anchor = DistanceTo {
            anchor: a.atoms()[0].clone(),
            spec: &spec,
        };
        let coords: Vec<ScaledCoordinate> = [(false, 0), (false, 1), (true, 0)]
            .into_iter()
            .map(|(label_block, index)| ScaledCoordinate {
                label_block,
                index,
                kappa: spec.kappa(),
            })
            .collect();
        let mut probes: Vec<&dyn LipschitzProbe> = vec![&anchor];
        probes.extend(coords.iter().map(|c| c as &dyn LipschitzProbe));
        let kr = kr_dual_lower_bound(&a, &b, &probes, &spec).unwrap();
        max_gap = max_gap.max((exact - brute).abs());
        kr_ok &= kr <= exact + 1e-12;
        rows.push(format!("{case},{size},{exact},{brute},{kr}"));
    }
    Outcome {
        passed: max_gap <= 1e-9 && kr_ok,
        detail: format!("max |exact - brute| = {max_gap:.2e}, dual bound below exact: {kr_ok}"),
        csv: csv_of("case,atoms,exact,brute,kr", rows),
    }
}

fn c3_contraction() -> Outcome {
    let ex3 = presets::preset("example3").unwrap().generator;
    let z0 = ZPoint::new(vec![1.0], vec![1.0]).unwrap();
    let curve = contraction_curve(&ex3, &[z0], 10, 1, 1e-12, SeedSpec::new(3)).unwrap();
    let ex3_err = curve
        .iter()
        .map(|p| (p.w1 - 0.5f64.powi(p.n as i32) * 0.5).abs())
        .fold(0.0, f64::max);

    let affine = presets::preset("affine").unwrap().generator;
    let start = affine.start().clone();
    let curve_a = contraction_curve(&affine, &[start], 8, 200, 1e-12, SeedSpec::new(4)).unwrap();
    let pts: Vec<(f64, f64)> = curve_a[1..=8]
        .iter()
        .map(|p| (p.n as f64, p.w1.ln()))
        .collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let limit = 0.2f64.ln() + 0.1;
    let rows = curve
        .iter()
        .map(|p| format!("example3,{},{}", p.n, p.w1))
        .chain(curve_a.iter().map(|p| format!("affine,{},{}", p.n, p.w1)));
    Outcome {
        passed: ex3_err <= 1e-12 && slope <= limit,
        detail: format!(
            "example3 max error {ex3_err:.1e}; affine slope {slope:.4} (limit {limit:.4})"
        ),
        csv: csv_of("preset,n,w1", rows),
    }
}

fn c4_erm() -> Outcome {
    let mut rows = Vec::new();
    let mut ok = true;
    for (p, name) in presets::PRESET_NAMES.iter().enumerate() {
        let pre = presets::preset(name).unwrap();
        let exp =
            Experiment::from_config(ExperimentConfig::preset(name, 50, 0.1, 1, 1), None).unwrap();
        let traj = sample_chain(
            &pre.generator,
            pre.generator.start(),
            100,
            SeedSpec::new(40 + p as u64),
        )
        .unwrap();
        for eps in [0.0, 0.01, 0.1, 0.5] {
            for tie in [TieBreak::LowestIndex, TieBreak::FirstFound] {
                let r = erm(&exp.class, &traj, (50, 100), eps, &exp.env, tie).unwrap();
                ok &= r.achieved_gap <= eps && (eps > 0.0 || r.achieved_gap == 0.0);
                rows.push(format!(
                    "{name},{eps},{tie:?},{},{}",
                    r.index, r.achieved_gap
                ));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for case in 0..100 {
        let k = rng.gen_range(1..=20);
        // Coarse values so exact ties occur.
        let risks: Vec<f64> = (0..k)
            .map(|_| (rng.gen_range(0..10) as f64) / 10.0)
            .collect();
        let min = risks.iter().copied().fold(f64::INFINITY, f64::min);
        for eps in [0.0, rng.gen_range(0.0..0.5)] {
            for tie in [TieBreak::LowestIndex, TieBreak::FirstFound] {
                let (idx, gap) = select(&risks, eps, tie).unwrap();
                ok &= gap <= eps && gap == risks[idx] - min && (eps > 0.0 || risks[idx] == min);
                rows.push(format!("random{case},{eps},{tie:?},{idx},{gap}"));
            }
        }
    }
    Outcome {
        passed: ok,
        detail: format!("{} selections checked", rows.len()),
        csv: csv_of("case,eps,tie,index,gap", rows),
    }
}

fn validator_outcome(b: &ResultBundle, key: &str) -> (bool, String) {
    let r = |k: &str| b.summary.report[k].as_f64().unwrap();
    (
        b.summary.verdicts[key],
        format!(
            "{:.4} vs bound {:.4} (SE {:.4})",
            r("statistic"),
            r("bound"),
            r("statistic_se")
        ),
    )
}

fn c5_lemma1() -> Outcome {
    let mut cfg = ExperimentConfig::preset("iid", 500, 0.1, 400, 5);
    cfg.class = Some(ClassBlock::FiniteList {
        members: vec![Hypothesis::linear("affine_0.6x+0.2", vec![0.6], vec![0.2])],
    });
    let exp = Experiment::from_config(cfg, None).unwrap();
    let b = run_validator(&exp, Validator::Lemma1).unwrap();
    let (passed, detail) = validator_outcome(&b, "lemma1");
    Outcome {
        passed,
        detail: format!("exceedance frequency {detail}"),
        csv: b.per_trial,
    }
}

fn c6_lemma2() -> Outcome {
    let mut passed = true;
    let mut details = Vec::new();
    let mut csv = String::new();
    for name in ["iid", "example3"] {
        let exp = Experiment::from_config(ExperimentConfig::preset(name, 200, 0.1, 200, 6), None)
            .unwrap();
        assert_eq!(exp.class.len(), 4);
        let b = run_validator(&exp, Validator::Lemma2).unwrap();
        let (ok, d) = validator_outcome(&b, "lemma2");
        passed &= ok;
        details.push(format!("{name}: mean deviation {d}"));
        csv.push_str(&b.per_trial);
    }
    Outcome {
        passed,
        detail: details.join("; "),
        csv,
    }
}

fn c7_coverage() -> Outcome {
    let iid =
        Experiment::from_config(ExperimentConfig::preset("iid", 500, 0.1, 200, 7), None).unwrap();
    assert_eq!(iid.class.len(), 4);
    let b = run_validator(&iid, Validator::Coverage).unwrap();
    let r = |k: &str| b.summary.report[k].as_f64().unwrap();
    let iid_ok =
        b.summary.verdicts["coverage_population"] && b.summary.verdicts["coverage_empirical"];
    let ex3 = Experiment::from_config(ExperimentConfig::preset("example3", 500, 0.1, 200, 7), None)
        .unwrap();
    let b3 = run_validator(&ex3, Validator::Coverage).unwrap();
    let cov3 = b3.summary.coverage.unwrap();
    let ex3_ok = cov3.population == 1.0 && cov3.empirical == 1.0;
    Outcome {
        passed: iid_ok && ex3_ok,
        detail: format!(
            "iid coverage {:.3}/{:.3} vs confidence {:.4} (SE {:.4}); example3 coverage {}/{}",
            r("coverage_pop"),
            r("coverage_emp"),
            r("confidence"),
            r("binomial_se"),
            cov3.population,
            cov3.empirical
        ),
        csv: b.per_trial + &b3.per_trial,
    }
}

fn c8_inversion() -> Outcome {
    let mut rows = Vec::new();
    let mut ok = true;
    let deltas = [0.01, 0.05, 0.1, 0.2, 0.5];
    let ns = [10u64, 100, 1000, 10_000, 100_000];
    let consts = [(1.0, 0.0), (1.0, 0.5), (2.0, 0.3), (0.5, 0.9)];
    for &delta in &deltas {
        for &n in &ns {
            for &(ell_h, ell_f) in &consts {
                let eps = invert_epsilon(delta, n, ell_h, ell_f).unwrap();
                let conf = confidence(eps, n, ell_h, ell_f);
                let back = if eps < 1.0 {
                    Some(sample_complexity(delta, eps, ell_h, ell_f).unwrap())
                } else {
                    None
                };
                let n_ok = back.is_none_or(|m| m.abs_diff(n) <= 1);
                ok &= n_ok && (conf - (1.0 - delta)).abs() <= 1e-9;
                rows.push(format!(
                    "{delta},{n},{ell_h},{ell_f},{eps},{conf},{}",
                    back.map_or(-1, |m| m as i64)
                ));
            }
        }
    }
    let eps = invert_epsilon(0.05, 1000, 1.0, 0.0).unwrap();
    let conf = confidence(0.1, 2000, 1.0, 0.5);
    let sig4 = |x: f64, target: f64| format!("{x:.3e}") == format!("{target:.3e}");
    ok &= sig4(eps, 0.04295) && sig4(conf, 0.999909);
    Outcome {
        passed: ok,
        detail: format!(
            "{} grid points; eps = {eps:.6}, confidence = {conf:.6}",
            rows.len()
        ),
        csv: csv_of("delta,n,ell_h,ell_f,eps,confidence,n_back", rows),
    }
}

fn c9_remark() -> Outcome {
    let exp =
        Experiment::from_config(ExperimentConfig::preset("iid", 200, 0.1, 200, 9), None).unwrap();
    assert_eq!(exp.class.len(), 4);
    let b = run_validator(&exp, Validator::Remark).unwrap();
    let (passed, detail) = validator_outcome(&b, "remark");
    Outcome {
        passed,
        detail: format!("mean deviation {detail}"),
        csv: b.per_trial,
    }
}

type Criterion = (u32, &'static str, Duration, fn() -> Outcome);

fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .unwrap()
        .install(f)
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (
            1,
            "Rademacher oracle equivalence",
            Duration::from_secs(30),
            c1_rademacher,
        ),
        (
            2,
            "Wasserstein oracle equivalence",
            Duration::from_secs(10),
            c2_wasserstein,
        ),
        (
            3,
            "contraction curve",
            Duration::from_secs(60),
            c3_contraction,
        ),
        (4, "epsilon-ERM contract", Duration::from_secs(5), c4_erm),
        (5, "concentration tail", Duration::from_secs(60), c5_lemma1),
        (
            6,
            "expected deviation bound",
            Duration::from_secs(120),
            c6_lemma2,
        ),
        (
            7,
            "certificate coverage",
            Duration::from_secs(180),
            c7_coverage,
        ),
        (
            8,
            "inversion consistency",
            Duration::from_secs(1),
            c8_inversion,
        ),
        (
            9,
            "Rademacher lower bound",
            Duration::from_secs(60),
            c9_remark,
        ),
    ];
    let mut all = true;
    let mut mismatched = Vec::new();
    for (id, name, budget, run) in criteria {
        let t0 = Instant::now();
        let out = in_pool(4, run);
        let elapsed = t0.elapsed();
        let passed = out.passed && elapsed < budget;
        all &= passed;
        println!(
            "criterion {id:>2} {} {name}: {} [{:.2}s, budget {}s]",
            if passed { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
        let again = in_pool(1, run);
        if again.csv != out.csv || out.csv.is_empty() {
            mismatched.push(id);
        }
    }
    let det = mismatched.is_empty();
    all &= det;
    println!(
        "criterion 10 {} determinism: per-trial CSVs of criteria 1-9 {} across 4 and 1 workers",
        if det { "PASS" } else { "FAIL" },
        if det {
            "byte-identical".to_string()
        } else {
            format!("differ for {mismatched:?}")
        }
    );
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
