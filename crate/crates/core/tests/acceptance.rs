//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --release -p coin-core --test acceptance -- --nocapture`.
//! `COIN_CRITERIA=1,2,3` restricts the run to the listed criteria.

mod common;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use coin_core::detector::{calibrate, threshold, DetectionResult, DetectionScores};
use coin_core::eval::{ExperimentId, ExperimentRunner, ReportBundle};
use coin_core::indication::{kernel, FuzzyParams, KernelFamily};
use coin_core::{sentence_metrics, CoinConfig, MetricLevel};
use common::{component_checks, metrics_oracle, random_corpus, tiny_experiment_config};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KERNEL_TOL: f64 = 1e-9;
const GRAD_TOL: f64 = 1e-4;
const MIN_END_TO_END_F1: f64 = 0.75;
const END_TO_END_BUDGET: Duration = Duration::from_secs(15 * 60);

type Verdict = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn criterion_1() -> Verdict {
    let g = FuzzyParams::default();
    let expected = [(0, 1.0), (1, 0.6065306597), (2, 0.1353352832)];
    for (o, v) in expected {
        for off in [o, -o] {
            let k = kernel(off, &g);
            ensure((k - v).abs() <= KERNEL_TOL, || format!("gaussian({off}) = {k}, expected {v}"))?;
        }
    }
    for w in 0..4usize {
        for o in -6i64..=6 {
            let d = o.unsigned_abs() as usize;
            let p = |family| FuzzyParams {
                family,
                window: w,
                ..FuzzyParams::default()
            };
            let dirac = if o == 0 { 1.0 } else { 0.0 };
            let uniform = if d <= w { 1.0 } else { 0.0 };
            let tri = if w == 0 {
                dirac
            } else {
                (1.0 - d as f64 / w as f64).max(0.0)
            };
            ensure(kernel(o, &p(KernelFamily::Dirac)) == dirac, || format!("dirac({o})"))?;
            ensure(kernel(o, &p(KernelFamily::Uniform)) == uniform, || format!("uniform({o}, w={w})"))?;
            ensure(kernel(o, &p(KernelFamily::Triangular)) == tri, || format!("triangular({o}, w={w})"))?;
        }
    }
    Ok("gaussian at 0, ±1, ±2 within 1e-9; dirac/uniform/triangular exact".into())
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut calibrated = 0;
    for set in 0..1000 {
        let n = rng.random_range(1..60);
        // Coarse grids produce ties; fine ones do not.
        let levels = if set % 2 == 0 { 20.0 } else { 1e6 };
        let scores: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * levels).round() / levels).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        let mut lambdas: Vec<f64> = (0..12).map(|_| rng.random::<f64>()).chain(scores.iter().copied()).collect();
        lambdas.extend([0.0, 1.0]);
        lambdas.sort_by(f64::total_cmp);
        let positives = labels.iter().filter(|&&l| l).count();
        let mut prev: Option<(Vec<bool>, usize)> = None;
        for &lambda in &lambdas {
            let flags = threshold(&scores, lambda);
            let tp = flags.iter().zip(&labels).filter(|(&f, &l)| f && l).count();
            if let Some((pf, ptp)) = &prev {
                ensure(flags.iter().zip(pf).all(|(&f, &p)| !f || p), || format!("set {set}: flags at {lambda} not a subset"))?;
                ensure(tp <= *ptp, || format!("set {set}: recall rose at {lambda}"))?;
            }
            prev = Some((flags, tp));
        }
        if positives > 0 {
            let target = [0.0, 0.5, 0.8, 0.95, 1.0][set % 5];
            let report = calibrate(&[DetectionScores::new(scores.clone()).unwrap()], &[labels.clone()], target)
                .map_err(|e| format!("set {set}: {e}"))?;
            let det = DetectionResult::from_scores(&DetectionScores::new(scores).unwrap(), report.thresholds());
            ensure(report.p >= report.r, || format!("set {set}: p < r"))?;
            ensure(det.high_p.iter().zip(&det.high_r).all(|(&p, &r)| !p || r), || format!("set {set}: high_p not within high_r"))?;
            calibrated += 1;
        }
    }
    Ok(format!("1000 sets, nesting and recall monotonicity exact; {calibrated} calibrated pairs nested"))
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for c in 0..200 {
        let corpus = random_corpus(&mut rng);
        let x: Vec<&[char]> = corpus.iter().map(|s| s.0.as_slice()).collect();
        let yhat: Vec<&[char]> = corpus.iter().map(|s| s.1.as_slice()).collect();
        let y: Vec<&[char]> = corpus.iter().map(|s| s.2.as_slice()).collect();
        for (level, det) in [(MetricLevel::Correction, false), (MetricLevel::Detection, true)] {
            let r = sentence_metrics(&x, &yhat, &y, level).map_err(|e| e.to_string())?;
            let (p, rc, f) = metrics_oracle(&corpus, det);
            ensure(r.precision == p && r.recall == rc && r.f1 == f, || {
                format!("corpus {c} {level:?}: got ({}, {}, {}), oracle ({p}, {rc}, {f})", r.precision, r.recall, r.f1)
            })?;
        }
    }
    Ok("200 corpora, both levels, exact".into())
}

fn criterion_4() -> Verdict {
    let mut worst = (0.0f64, String::new());
    for seed in 0..2 {
        for (name, report) in component_checks(seed) {
            ensure(report.checked > 0, || format!("{name}: nothing checked"))?;
            ensure(report.max_relative_error <= GRAD_TOL, || {
                format!("{name}: {:.3e} at {}", report.max_relative_error, report.worst_parameter)
            })?;
            if report.max_relative_error >= worst.0 {
                worst = (report.max_relative_error, format!("{name} {}", report.worst_parameter));
            }
        }
    }
    Ok(format!("worst relative error {:.2e} ({})", worst.0, worst.1))
}

fn criterion_5(runner: &mut ExperimentRunner) -> Verdict {
    let bundle = runner.run(ExperimentId::EndToEnd).map_err(|e| e.to_string())?;
    let time = runner.attributed_time(ExperimentId::EndToEnd).unwrap_or_default();
    let cell = &bundle.cells[0];
    let per_seed: Vec<String> = cell.f1_per_seed().iter().map(|f| format!("{f:.3}")).collect();
    let detail = format!(
        "median correction F1 {:.3} (seeds {}), {:.0}s",
        cell.median.f1,
        per_seed.join("/"),
        time.as_secs_f64()
    );
    eprint!("{}", bundle.table);
    ensure(cell.median.f1 >= MIN_END_TO_END_F1, || format!("{detail}; needs >= {MIN_END_TO_END_F1}"))?;
    ensure(time <= END_TO_END_BUDGET, || format!("{detail}; over the 15 min budget"))?;
    Ok(detail)
}

fn prelim_trend(bundle: &ReportBundle) -> Result<Vec<f64>, String> {
    let f1: Vec<f64> = bundle.cells[..4].iter().map(|c| c.median.f1).collect();
    ensure(f1.windows(2).all(|w| w[1] <= w[0]), || format!("{}: F1 over Cor 100..70 = {f1:?}", bundle.experiment))?;
    Ok(f1)
}

fn criterion_6(runner: &mut ExperimentRunner) -> Verdict {
    let ep = runner.run(ExperimentId::PrelimEp).map_err(|e| e.to_string())?;
    let sm = runner.run(ExperimentId::PrelimSm).map_err(|e| e.to_string())?;
    eprint!("{}{}", ep.table, sm.table);
    let ep_f1 = prelim_trend(&ep)?;
    let sm_f1 = prelim_trend(&sm)?;
    let (ep_drop, sm_drop) = (ep.summary["median_fp_drop"], sm.summary["median_fp_drop"]);
    let detail = format!(
        "EP {:.3}->{:.3}, SM {:.3}->{:.3}; FP drop SM {sm_drop:.4} vs EP {ep_drop:.4}",
        ep_f1[0], ep_f1[3], sm_f1[0], sm_f1[3]
    );
    ensure(sm_drop <= ep_drop, || format!("{detail}; SM dropped more"))?;
    Ok(detail)
}

fn criterion_7(runner: &mut ExperimentRunner) -> Verdict {
    let bundle = runner.run(ExperimentId::Ablation).map_err(|e| e.to_string())?;
    eprint!("{}", bundle.table);
    let full = bundle.cells[0].median;
    let mut detail = format!("full F1 {:.3}", full.f1);
    let mut drops = Vec::new();
    for c in &bundle.cells[1..] {
        detail.push_str(&format!(", {} {:.3}", c.label, c.median.f1));
        ensure(full.f1 >= c.median.f1, || format!("{detail}: {} beats full", c.label))?;
        drops.push((c.label.clone(), full.precision - c.median.precision));
    }
    let (label, drop) = drops.iter().max_by(|a, b| a.1.total_cmp(&b.1)).cloned().unwrap_or_default();
    let both = drops.iter().find(|d| d.0 == "w/o EP&SM").map(|d| d.1).unwrap_or(f64::NAN);
    ensure(both >= drop, || format!("{detail}; largest precision drop is {label} ({drop:.3}), w/o EP&SM {both:.3}"))?;
    Ok(format!("{detail}; w/o EP&SM precision drop {both:.3}"))
}

fn criterion_8() -> Verdict {
    let cfg = tiny_experiment_config();
    let mut out = Vec::new();
    for (id, labels) in [
        (ExperimentId::FiFamilySweep, vec!["gaussian", "triangular", "uniform", "dirac"]),
        (ExperimentId::MaskLengthSweep, vec!["L=1", "L=3", "L=5", "L=7", "L=9"]),
    ] {
        let a = ExperimentRunner::new(cfg.clone()).and_then(|mut r| r.run(id)).map_err(|e| e.to_string())?;
        let b = ExperimentRunner::new(cfg.clone()).and_then(|mut r| r.run(id)).map_err(|e| e.to_string())?;
        let got: Vec<&str> = a.cells.iter().map(|c| c.label.as_str()).collect();
        ensure(got == labels, || format!("{id}: cells {got:?}"))?;
        for c in &a.cells {
            ensure(c.correction.len() == cfg.experiment.seeds.len(), || format!("{id}: {} lacks seeds", c.label))?;
            let shown = c.label.trim_start_matches("L=");
            ensure(a.table.contains(shown), || format!("{id}: table lacks {shown}"))?;
        }
        ensure(a.table.lines().count() >= labels.len() + 2, || format!("{id}: table too short"))?;
        ensure(a.to_json().ok() == b.to_json().ok(), || format!("{id}: regeneration differs"))?;
        out.push(format!("{id} {} cells", a.cells.len()));
    }
    Ok(format!("{}, identical on regeneration", out.join(", ")))
}

fn selected() -> Vec<usize> {
    match std::env::var("COIN_CRITERIA") {
        Ok(list) => list.split(',').filter_map(|s| s.trim().parse().ok()).collect(),
        Err(_) => (1..=8).collect(),
    }
}

fn report(line: &str) {
    // Written straight to stderr so the lines show without --nocapture.
    let _ = writeln!(std::io::stderr(), "{line}");
}

#[test]
fn acceptance_criteria() {
    let wanted = selected();
    let mut runner: Option<ExperimentRunner> = None;
    let mut failed = Vec::new();
    let names = [
        "kernel exactness",
        "threshold laws",
        "metrics oracle equivalence",
        "gradient checks",
        "synthetic end-to-end",
        "preliminary trends",
        "ablation direction",
        "sweep harnesses",
    ];
    // Criterion 7 reuses the corrector trained for 5, so the heavy ones run in this order.
    for n in [1, 2, 3, 4, 5, 7, 6, 8] {
        if !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(|| match n {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            8 => criterion_8(),
            _ => {
                let r = match runner.as_mut() {
                    Some(r) => r,
                    None => runner.insert(ExperimentRunner::new(CoinConfig::default()).map_err(|e| e.to_string())?),
                };
                match n {
                    5 => criterion_5(r),
                    6 => criterion_6(r),
                    _ => criterion_7(r),
                }
            }
        }))
        .unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => report(&format!("criterion {n} ({}): PASS [{secs:.1}s] {detail}", names[n - 1])),
            Err(detail) => {
                report(&format!("criterion {n} ({}): FAIL [{secs:.1}s] {detail}", names[n - 1]));
                failed.push(n);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
