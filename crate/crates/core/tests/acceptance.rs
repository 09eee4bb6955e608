//! One PASS/FAIL line per primary criterion. Runs as a plain binary so the
//! lines are printed on every run; exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use probekit::analysis::{
    classify_regime, difficulty_control, eval_report, layer_sweep_report, step_trajectories,
    Regime, RegimeThresholds, TrajectoryMode,
};
use probekit::interventions::{blend, evaluate_best_of_n, steer, Selector};
use probekit::numerics::{auroc_value, dot, gradient, norm, objective, train_logreg};
use probekit::probe::{eval_probe, train_probe, EvalSetting, Position, TrainConfig};
use probekit::report::{render, ReportFormat};
use probekit::synth::{
    bon_groups, generate, matched_text_leak, BonSynthConfig, SignalLevel, SynthConfig, SynthRegime,
};
use probekit::text::{concealment_gap, parse_lexicon, TextConfig, HEDGING_LEXICON};
use probekit::trace_store::{load_dataset, write_dataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Pinned tolerances.
const ORACLE_AUROC_TOL: f64 = 0.04;
const ORACLE_RUNTIME_LIMIT_S: f64 = 60.0;
const AUROC_EXACT_TOL: f64 = 1e-12;
const LOGREG_PARAM_TOL: f64 = 1e-4;
const LOGREG_GRAD_REL_TOL: f64 = 1e-5;
const CONCEALMENT_MIN_GAP: f64 = 0.25;
const CONCEALMENT_MATCHED_TOL: f64 = 0.05;
const DIFFICULTY_MIN_D: f64 = 0.3;
const DIFFICULTY_MAX_P: f64 = 0.05;
const DIFFICULTY_NULL_D: f64 = 0.1;
const INTERVENTION_TOL: f64 = 1e-10;
const BON_HEADROOM: f64 = 0.05;
const REGIME_MIN_HITS: usize = 19;

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn oracle_recovery() -> Outcome {
    let t = Instant::now();
    let cfg = SynthConfig {
        n_records: 500,
        n_layers: 28,
        planted_layer: 12,
        offset_delta: 2.0,
        noise_sigma: 1.0,
        seed: 0,
        ..SynthConfig::default()
    };
    let train = generate(&cfg).unwrap();
    let held = generate(&SynthConfig {
        seed: 1000,
        ..cfg.clone()
    })
    .unwrap();
    let (probe, _) =
        train_probe(&train, Position::TraceLastToken, &TrainConfig::default()).unwrap();
    let m = eval_probe(&probe, &held, 1000, 0).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let target = cfg.analytic_auroc();
    let pass = probe.layer == 12
        && (m.auroc - target).abs() <= ORACLE_AUROC_TOL
        && secs < ORACLE_RUNTIME_LIMIT_S;
    outcome(
        pass,
        format!(
            "layer {} (want 12), held-out AUROC {:.4} vs {:.4} +/- {ORACLE_AUROC_TOL}, {secs:.1} s (limit {ORACLE_RUNTIME_LIMIT_S} s)",
            probe.layer, m.auroc, target
        ),
    )
}

fn auroc_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst, mut done) = (0.0f64, 0);
    while done < 1000 {
        let n = rng.random_range(2..=50);
        let coarse = rng.random_bool(0.5);
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if coarse {
                    rng.random_range(0..4) as f64
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            continue;
        }
        worst = worst
            .max((auroc_value(&scores, &labels).unwrap() - brute_auroc(&scores, &labels)).abs());
        done += 1;
    }
    outcome(
        worst <= AUROC_EXACT_TOL,
        format!(
            "{done} instances, max |rank - pair count| = {worst:.1e} (tol {AUROC_EXACT_TOL:.0e})"
        ),
    )
}

fn logreg_fidelity() -> Outcome {
    let (mut param_err, mut grad_err) = (0.0f64, 0.0f64);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for seed in 0..25 {
        let (rows, y) = random_problem(500 + seed);
        let x = matrix(&rows);
        let m = train_logreg(&x, &y, 0.1).unwrap();
        let (rw, rb) = reference_logreg(&rows, &y, 0.1);
        for (a, b) in m.weights.iter().zip(&rw) {
            param_err = param_err.max((a - b).abs());
        }
        param_err = param_err.max((m.bias - rb).abs());

        let w: Vec<f64> = (0..x.cols()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = rng.random_range(-1.0..1.0);
        let g = gradient(&x, &y, 0.1, &w, b);
        let h = 1e-6;
        let fd: Vec<f64> = (0..=x.cols())
            .map(|j| {
                let (mut wp, mut wm, mut bp, mut bm) = (w.clone(), w.clone(), b, b);
                if j < x.cols() {
                    wp[j] += h;
                    wm[j] -= h;
                } else {
                    bp += h;
                    bm -= h;
                }
                (objective(&x, &y, 0.1, &wp, bp) - objective(&x, &y, 0.1, &wm, bm)) / (2.0 * h)
            })
            .collect();
        let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
        grad_err = grad_err.max(norm(&diff) / norm(&g));
    }
    outcome(
        param_err <= LOGREG_PARAM_TOL && grad_err <= LOGREG_GRAD_REL_TOL,
        format!(
            "25 sets: max param diff {param_err:.1e} (tol {LOGREG_PARAM_TOL:.0e}), max gradient rel err {grad_err:.1e} (tol {LOGREG_GRAD_REL_TOL:.0e})"
        ),
    )
}

fn concealment() -> Outcome {
    let base = SynthConfig {
        n_records: 400,
        n_layers: 4,
        hidden_dim: 16,
        planted_layer: 2,
        seed: 3,
        ..SynthConfig::default()
    };
    let lexicon = parse_lexicon(HEDGING_LEXICON);
    let run = |leak: f64| {
        let ds = generate(&SynthConfig {
            text_leak: leak,
            ..base.clone()
        })
        .unwrap();
        let (probe, _) =
            train_probe(&ds, Position::TraceLastToken, &TrainConfig::default()).unwrap();
        concealment_gap(&ds, &probe, &TextConfig::default(), &lexicon).unwrap()
    };
    let open = run(0.0);
    let leak = matched_text_leak(base.analytic_auroc());
    let matched = run(leak);
    let exact =
        open.gap == open.s_hidden - open.s_text && matched.gap == matched.s_hidden - matched.s_text;
    outcome(
        open.gap >= CONCEALMENT_MIN_GAP && exact && matched.gap.abs() <= CONCEALMENT_MATCHED_TOL,
        format!(
            "leak 0: gap {:.3} (min {CONCEALMENT_MIN_GAP}); leak {leak:.3}: gap {:+.3} (tol {CONCEALMENT_MATCHED_TOL}); gap == s_hidden - s_text: {exact}",
            open.gap, matched.gap
        ),
    )
}

fn difficulty() -> Outcome {
    let run = |level: SignalLevel| {
        let ds = generate(&SynthConfig {
            n_records: 400,
            n_layers: 4,
            hidden_dim: 16,
            planted_layer: 2,
            samples_per_problem: 5,
            signal_level: level,
            seed: 11,
            ..SynthConfig::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            layers: Some(vec![2]),
            ..TrainConfig::default()
        };
        let (probe, _) = train_probe(&ds, Position::TraceLastToken, &cfg).unwrap();
        difficulty_control(&ds, &probe.score_dataset(&ds).unwrap()).unwrap()
    };
    let trace = run(SignalLevel::Trace);
    let problem = run(SignalLevel::Problem);
    let td = trace.within_problem.cohens_d.unwrap_or(f64::NAN);
    let tp = trace.within_problem.welch_p.unwrap_or(f64::NAN);
    let pd = problem.within_problem.cohens_d.unwrap_or(0.0);
    outcome(
        td > DIFFICULTY_MIN_D && tp < DIFFICULTY_MAX_P && pd.abs() <= DIFFICULTY_NULL_D,
        format!(
            "trace-level: d {td:.3} (min {DIFFICULTY_MIN_D}), p {tp:.1e} (max {DIFFICULTY_MAX_P}); problem-level: d {pd:.3} (|d| max {DIFFICULTY_NULL_D}); mixed problems {}/{}",
            trace.mixed_problems, problem.mixed_problems
        ),
    )
}

fn intervention_math() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let d = rng.random_range(1..64);
        let h: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let c: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut w: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        if norm(&w) < 1e-3 {
            w[0] = 1.0;
        }
        let a = rng.random_range(-3.0..3.0);
        let scale = 1.0 + norm(&h) + norm(&c);
        let max_diff = |x: &[f64], y: &[f64]| {
            x.iter()
                .zip(y)
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f64::max)
        };

        worst = worst.max(max_diff(&steer(&h, &w, 0.0).unwrap(), &h) / scale);
        let full = steer(&h, &w, 1.0).unwrap();
        worst = worst.max((dot(&full, &w) / norm(&w)).abs() / scale);
        let mixed: Vec<f64> = h
            .iter()
            .zip(&full)
            .map(|(x, f)| (1.0 - a) * x + a * f)
            .collect();
        worst = worst.max(max_diff(&steer(&h, &w, a).unwrap(), &mixed) / scale);

        worst = worst.max(max_diff(&blend(&h, &c, 0.0).unwrap(), &h) / scale);
        worst = worst.max(max_diff(&blend(&h, &c, 1.0).unwrap(), &c) / scale);
        let t = rng.random::<f64>();
        let affine: Vec<f64> = h.iter().zip(&c).map(|(x, y)| x + t * (y - x)).collect();
        worst = worst.max(max_diff(&blend(&h, &c, t).unwrap(), &affine) / scale);
    }

    let ns = [1, 2, 4, 8, 12];
    let groups = bon_groups(&BonSynthConfig {
        n_problems: 200,
        candidates: 12,
        score_auroc: 0.95,
        seed: 0,
        ..BonSynthConfig::default()
    })
    .unwrap();
    let res = evaluate_best_of_n(&groups, &Selector::ALL, &ns, 0).unwrap();
    let dominant = ns.iter().all(|&n| {
        Selector::ALL
            .iter()
            .all(|&s| res.get(s, n).unwrap() <= res.get(Selector::Oracle, n).unwrap())
    });
    let monotone = ns.windows(2).all(|p| {
        res.get(Selector::Oracle, p[0]).unwrap() <= res.get(Selector::Oracle, p[1]).unwrap()
    });
    let pm = res.get(Selector::ProbeMin, 8).unwrap();
    let rnd = res.get(Selector::Random, 8).unwrap();
    outcome(
        worst <= INTERVENTION_TOL && dominant && monotone && pm - rnd >= BON_HEADROOM,
        format!(
            "identities max err {worst:.1e} (tol {INTERVENTION_TOL:.0e}); oracle dominant {dominant}, monotone {monotone}; N=8 probe_min {pm:.3} vs random {rnd:.3} (min margin {BON_HEADROOM})"
        ),
    )
}

fn regimes() -> Outcome {
    let mut hits = BTreeMap::new();
    for (regime, want) in [
        (SynthRegime::FrontLoaded, Regime::FrontLoaded),
        (SynthRegime::Accumulating, Regime::Accumulating),
    ] {
        let mut ok = 0;
        for seed in 0..20 {
            let ds = generate(&SynthConfig {
                n_records: 300,
                n_layers: 4,
                hidden_dim: 16,
                planted_layer: 2,
                regime,
                seed,
                ..SynthConfig::default()
            })
            .unwrap();
            let cfg = TrainConfig {
                layers: Some(vec![2]),
                ..TrainConfig::default()
            };
            let (probe, _) = train_probe(&ds, Position::TraceLastToken, &cfg).unwrap();
            let t = step_trajectories(
                &ds,
                &probe,
                TrajectoryMode::ReuseFullTraceProbe,
                &cfg,
                &RegimeThresholds::default(),
            )
            .unwrap();
            debug_assert_eq!(
                t.regime,
                classify_regime(&t.gaps(), &RegimeThresholds::default())
            );
            ok += usize::from(t.regime == want);
        }
        hits.insert(want.as_str(), ok);
    }
    let pass = hits.values().all(|&h| h >= REGIME_MIN_HITS);
    outcome(
        pass,
        format!(
            "front_loaded {}/20, accumulating {}/20 (min {REGIME_MIN_HITS}/20)",
            hits["front_loaded"], hits["accumulating"]
        ),
    )
}

fn pipeline_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let cfg = SynthConfig {
        n_records: 200,
        n_layers: 6,
        hidden_dim: 12,
        planted_layer: 3,
        seed: 42,
        ..SynthConfig::default()
    };
    let ds_dir = dir.join("dataset");
    write_dataset(&generate(&cfg).unwrap(), &ds_dir).unwrap();
    let ds = load_dataset(&ds_dir).unwrap();
    let tc = TrainConfig {
        seed: 7,
        ..TrainConfig::default()
    };
    let (probe, sweep) = train_probe(&ds, Position::TraceLastToken, &tc).unwrap();
    fs::write(dir.join("probe.json"), probe.to_json().unwrap()).unwrap();
    let sweep_report = layer_sweep_report(&sweep, None, "synthetic").unwrap();
    let m = eval_probe(&probe, &ds, 500, 7).unwrap();
    let eval = eval_report(EvalSetting::HeldOut, &m, &ds, &probe, 500, 7).unwrap();
    for f in [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Svg] {
        fs::write(
            dir.join(format!("layer_sweep.{}", f.extension())),
            render(&sweep_report, f).unwrap(),
        )
        .unwrap();
    }
    fs::write(
        dir.join("eval.json"),
        render(&eval, ReportFormat::Json).unwrap(),
    )
    .unwrap();

    let mut out = BTreeMap::new();
    for sub in [dir.to_path_buf(), ds_dir] {
        for e in fs::read_dir(&sub).unwrap() {
            let p = e.unwrap().path();
            if p.is_file() {
                out.insert(
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn format_determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = pipeline_files(a.path());
    let fb = pipeline_files(b.path());
    let differing: Vec<&String> = fa.keys().filter(|k| fa.get(*k) != fb.get(*k)).collect();
    let same_names = fa.keys().eq(fb.keys());
    outcome(
        same_names && differing.is_empty(),
        format!(
            "{} files compared across two runs, {} differ {:?}",
            fa.len(),
            differing.len(),
            differing
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("oracle AUROC recovery", oracle_recovery),
        ("AUROC correctness", auroc_correctness),
        ("logistic regression fidelity", logreg_fidelity),
        ("concealment-gap construction", concealment),
        ("difficulty-control validity", difficulty),
        ("intervention math", intervention_math),
        ("regime classification", regimes),
        ("format determinism", format_determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let o = f();
        failed += usize::from(!o.pass);
        println!(
            "{} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
