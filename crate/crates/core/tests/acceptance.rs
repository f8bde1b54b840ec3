//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use hardness_core::active_loop::{
    run_experiment, select_training_indices, Experiment, ExperimentPlan, Metric, TrainingReservoir,
};
use hardness_core::classifier::{Example, MlpClassifier, PredictionSet, TrainConfig};
use hardness_core::cli::load_bank;
use hardness_core::config::ExperimentConfig;
use hardness_core::eval::dropout_sweep;
use hardness_core::frame_select::{loading_window, select_frames};
use hardness_core::image::Frame;
use hardness_core::optical_flow::{lucas_kanade, LkConfig};
use hardness_core::pipeline::FeatureBank;
use hardness_core::seed::{self, stream};
use hardness_core::sensor_sim::ClassId;
use hardness_core::uncertainty::{class_entropy, class_variance, Strategy};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Test-side generator, deliberately a different algorithm from the library's.
fn oracle_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn random_simplex(rng: &mut ChaCha20Rng, m: usize) -> Vec<f64> {
    // Mix in exact zeros and ones so the 0 ln 0 convention is exercised.
    match rng.random_range(0..10) {
        0 => {
            let hot = rng.random_range(0..m);
            (0..m).map(|i| if i == hot { 1.0 } else { 0.0 }).collect()
        }
        _ => {
            let raw: Vec<f64> = (0..m).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
            let sum: f64 = raw.iter().sum();
            raw.iter().map(|v| v / sum).collect()
        }
    }
}

fn criterion_1() -> Outcome {
    let mut rng = oracle_rng(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let m = rng.random_range(1..=9);
        let n = rng.random_range(1..=20);
        let l = rng.random_range(1..=20 / n);
        // p[i][j][k] as an explicit nested array.
        let mut p = vec![vec![vec![0.0; l]; n]; m];
        let mut flat = Vec::with_capacity(m * n * l);
        for k in 0..l {
            for j in 0..n {
                let col = random_simplex(&mut rng, m);
                for i in 0..m {
                    p[i][j][k] = col[i];
                }
                flat.extend(col);
            }
        }
        let set = PredictionSet::new(m, n, l, flat).map_err(|e| e.to_string())?;
        let (h, var) = (class_entropy(&set), class_variance(&set));
        let count = (n * l) as f64;
        for i in 0..m {
            let mut h_ref = 0.0;
            let mut mu = 0.0;
            for k in 0..l {
                for j in 0..n {
                    let x = p[i][j][k];
                    if x != 0.0 {
                        h_ref -= x * x.ln();
                    }
                    mu += x;
                }
            }
            h_ref /= count;
            mu /= count;
            let mut v_ref = 0.0;
            for k in 0..l {
                for j in 0..n {
                    v_ref += (p[i][j][k] - mu).powi(2);
                }
            }
            v_ref /= count;
            worst = worst.max((h[i] - h_ref).abs()).max((var[i] - v_ref).abs());
        }
    }
    ensure(worst <= 1e-12, format!("1000 sets, max abs deviation {worst:.2e} (limit 1e-12)"))
}

fn criterion_2() -> Outcome {
    let mut rng = oracle_rng(2);
    let input = 384;
    let model = MlpClassifier::new(input, 5, 0.2, 11).map_err(|e| e.to_string())?;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let x: Vec<f64> = (0..input).map(|_| rng.random_range(-2.0..2.0)).collect();
        let label = ClassId(rng.random_range(1..=5));
        let mask = model.draw_mask(&mut rng);
        let (_, grad) = model.loss_and_gradient(&x, label, Some(&mask)).map_err(|e| e.to_string())?;
        let mut probe = model.clone();
        for _ in 0..10 {
            let w = rng.random_range(0..probe.params().len());
            let orig = probe.params()[w];
            probe.params_mut()[w] = orig + h;
            let up = probe.loss(&x, label, Some(&mask)).map_err(|e| e.to_string())?;
            probe.params_mut()[w] = orig - h;
            let down = probe.loss(&x, label, Some(&mask)).map_err(|e| e.to_string())?;
            probe.params_mut()[w] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (grad[w] - numeric).abs() / grad[w].abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    ensure(worst < 1e-4, format!("200 weight checks, max relative error {worst:.2e} (limit 1e-4)"))
}

fn small_bank() -> FeatureBank {
    let mut config = ExperimentConfig::default();
    config.per_class = 12;
    config.parallel = true;
    load_bank(&config).expect("simulated bank")
}

fn criterion_3() -> Outcome {
    let bank = small_bank();
    let m = bank.classes().len();
    let mut train = Vec::new();
    for c in 0..m {
        for f in &bank.class_samples(ClassId::from_index(c))[..5] {
            train.push(Example { features: f.clone(), label: ClassId::from_index(c) });
        }
    }
    let test: Vec<Vec<f64>> = (0..m).flat_map(|c| bank.class_samples(ClassId::from_index(c))[5..7].to_vec()).collect();
    let scale = hardness_core::classifier::Standardizer::fit(train.iter().map(|e| e.features.as_slice())).unwrap();
    let train: Vec<Example> =
        train.into_iter().map(|e| Example { features: scale.transform(&e.features), label: e.label }).collect();
    let test: Vec<Vec<f64>> = test.iter().map(|x| scale.transform(x)).collect();
    let mut max_var = BTreeMap::new();
    for rate in [0.0, 0.2] {
        let mut model = MlpClassifier::new(bank.dim(), m, rate, 5).map_err(|e| e.to_string())?;
        model.train(&train, &TrainConfig { epochs: 100, seed: 3, ..TrainConfig::default() }).map_err(|e| e.to_string())?;
        let preds = model.predict_mc(&test, 20, 9).map_err(|e| e.to_string())?;
        // Across-query variance per (class, sample).
        let mut worst: f64 = 0.0;
        for i in 0..m {
            for k in 0..preds.samples() {
                // Deviations from the first query, so identical queries give exactly 0.
                let dev: Vec<f64> = (0..preds.queries()).map(|j| preds.p(i, j, k) - preds.p(i, 0, k)).collect();
                let mean = dev.iter().sum::<f64>() / dev.len() as f64;
                worst = worst.max(dev.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / dev.len() as f64);
            }
        }
        max_var.insert(if rate == 0.0 { "rate0" } else { "rate02" }, worst);
    }
    let (zero, pos) = (max_var["rate0"], max_var["rate02"]);
    ensure(zero == 0.0 && pos > 0.0, format!("max across-query variance: rate 0 -> {zero:e}, rate 0.2 -> {pos:.3e}"))
}

fn criterion_4() -> Outcome {
    let mut reservoir = TrainingReservoir::new(1, 5);
    for i in 0..10 {
        reservoir.push(Example { features: vec![i as f64], label: ClassId(1) });
    }
    let draws = 10_000u64;
    let mut counts = [0u64; 10];
    for d in 0..draws {
        let idx = select_training_indices(&reservoir, seed::derive(99, stream::SUBSAMPLE, d)).map_err(|e| e.to_string())?;
        if idx.len() != 5 {
            return Err(format!("draw {d} returned {} samples", idx.len()));
        }
        for i in idx {
            counts[i] += 1;
        }
    }
    let freqs: Vec<f64> = counts.iter().map(|&c| c as f64 / draws as f64).collect();
    let max_dev = freqs.iter().map(|f| (f - 0.5).abs()).fold(0.0, f64::max);
    let expected = draws as f64 * 0.5;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(9.0).unwrap().cdf(chi2);
    ensure(
        max_dev <= 0.03 && p > 0.01,
        format!("max |freq - 0.5| = {max_dev:.4} (limit 0.03), chi-square {chi2:.2} on 9 df, p = {p:.3}"),
    )
}

fn texture(h: usize, w: usize, seed: u64) -> Frame {
    // Smooth random texture: a sum of random plane waves.
    let mut rng = oracle_rng(seed);
    let waves: Vec<(f64, f64, f64, f64)> = (0..12)
        .map(|_| {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let freq = rng.random_range(0.15..0.45);
            (freq * angle.cos(), freq * angle.sin(), rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(10.0..30.0))
        })
        .collect();
    Frame::from_fn(h, w, |y, x| {
        waves.iter().map(|&(fx, fy, ph, a)| a * (fx * x as f64 + fy * y as f64 + ph).sin()).sum::<f64>() as f32
    })
}

/// Integer-shift block matching: the displacement minimising the windowed SSD.
fn block_match(prev: &Frame, next: &Frame, p: (usize, usize), half: i64, search: i64) -> (f64, f64) {
    let (px, py) = (p.0 as i64, p.1 as i64);
    let mut best = (f64::INFINITY, 0, 0);
    for dy in -search..=search {
        for dx in -search..=search {
            let mut ssd = 0.0;
            for wy in -half..=half {
                for wx in -half..=half {
                    let a = prev.get((py + wy) as usize, (px + wx) as usize) as f64;
                    let b = next.get((py + wy + dy) as usize, (px + wx + dx) as usize) as f64;
                    ssd += (a - b) * (a - b);
                }
            }
            if ssd < best.0 {
                best = (ssd, dx, dy);
            }
        }
    }
    (best.1 as f64, best.2 as f64)
}

fn criterion_5() -> Outcome {
    let (h, w) = (64, 64);
    let cfg = LkConfig::default();
    let half = (cfg.window / 2) as i64;
    let search = 2;
    let margin = (half + search) as usize + 1;
    let mut total = 0usize;
    let mut good = 0usize;
    let shifts = [(1i64, 0i64), (0, 1), (-1, 0), (0, -1), (1, 1), (-1, 1)];
    for (t, &(sx, sy)) in shifts.iter().enumerate() {
        let prev = texture(h, w, 50 + t as u64);
        let next = Frame::from_fn(h, w, |y, x| {
            let (yy, xx) = (y as i64 - sy, x as i64 - sx);
            if (0..h as i64).contains(&yy) && (0..w as i64).contains(&xx) {
                prev.get(yy as usize, xx as usize)
            } else {
                0.0
            }
        });
        let points: Vec<(usize, usize)> =
            (margin..w - margin).step_by(3).flat_map(|x| (margin..h - margin).step_by(3).map(move |y| (x, y))).collect();
        let coords: Vec<[f64; 2]> = points.iter().map(|&(x, y)| [x as f64, y as f64]).collect();
        let tracks = lucas_kanade(&prev, &next, &coords, &cfg).map_err(|e| e.to_string())?;
        for (p, t) in points.iter().zip(&tracks) {
            total += 1;
            let oracle = block_match(&prev, &next, *p, half, search);
            if oracle != (sx as f64, sy as f64) {
                return Err(format!("block-matching oracle disagrees with the applied shift at {p:?}"));
            }
            if t.tracked && (t.flow[0] - oracle.0).abs() <= 0.1 && (t.flow[1] - oracle.1).abs() <= 0.1 {
                good += 1;
            }
        }
    }
    let frac = good as f64 / total as f64;
    ensure(frac >= 0.95, format!("{good}/{total} interior points within 0.1 px ({:.1}%, need 95%)", 100.0 * frac))
}

fn criterion_6() -> Outcome {
    let window = loading_window(&[0.0, 500.0, 1600.0, 3000.0, 5000.0, 4000.0], 1400.0).map_err(|e| e.to_string())?;
    let selected = select_frames((2, 8), 2, 1400.0).selected;
    let again = select_frames((2, 8), 2, 1400.0).selected;
    ensure(
        window == (2, 4) && selected == vec![2, 4, 6, 8] && again == selected,
        format!("threshold-1400 window {window:?}, (2,8) with 2 intermediates -> {selected:?}"),
    )
}

struct Shared {
    config: ExperimentConfig,
    bank: FeatureBank,
    experiment: Experiment,
}

fn shared() -> &'static Shared {
    static CELL: OnceLock<Shared> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut config = ExperimentConfig::default();
        config.parallel = true;
        let bank = load_bank(&config).expect("simulated bank");
        let plan = ExperimentPlan {
            strategies: Strategy::ALL.to_vec(),
            runs: config.runs,
            seed: seed::derive(config.seed, stream::RUN, 0),
            test_pool: config.test_pool,
            parallel: true,
        };
        let experiment = run_experiment(&bank, &config.schedule, &config.learner, &plan).expect("experiment");
        Shared { config, bank, experiment }
    })
}

fn accuracy_at(exp: &Experiment, strategy: Strategy, iteration: usize) -> f64 {
    exp.aggregate
        .iter()
        .find(|r| r.strategy == strategy && r.iteration == iteration && r.metric == Metric::Accuracy)
        .map(|r| r.summary.mean)
        .expect("aggregate row")
}

fn criterion_7() -> Outcome {
    let s = shared();
    let last = s.config.schedule.iterations;
    let fin = |st| accuracy_at(&s.experiment, st, last);
    let init = |st| accuracy_at(&s.experiment, st, 0);
    let (v, e, r) = (fin(Strategy::Variance), fin(Strategy::Entropy), fin(Strategy::Random));
    let (gv, ge) = (v - init(Strategy::Variance), e - init(Strategy::Entropy));
    let a = v >= r;
    let b = gv >= 0.10 && ge >= 0.10;
    let detail = format!(
        "{} paired runs; final acc variance {v:.3} / entropy {e:.3} / random {r:.3}; initial {:.3}; gain variance {:+.1} pp, entropy {:+.1} pp; (a) {} (b) {}",
        s.config.runs,
        init(Strategy::Variance),
        100.0 * gv,
        100.0 * ge,
        if a { "ok" } else { "fail" },
        if b { "ok" } else { "fail" },
    );
    ensure(a && b, detail)
}

fn criterion_8() -> Outcome {
    let s = shared();
    let rows = dropout_sweep(
        &s.bank,
        &[0.2, 0.5],
        &s.config.schedule,
        &s.config.learner,
        s.config.sweep_runs,
        seed::derive(s.config.seed, stream::RUN, 1),
        true,
    )
    .map_err(|e| e.to_string())?;
    let (a02, a05) = (rows[0].accuracy.mean, rows[1].accuracy.mean);
    ensure(a05 <= a02, format!("{} paired runs; mean accuracy at 0.2 = {a02:.3}, at 0.5 = {a05:.3}", s.config.sweep_runs))
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = tmp.path().join("small.cfg");
    std::fs::write(
        &config,
        "seed = 5\nsensor.per_class = 30\nruns.count = 2\nstrategy.iterations = 2\ntrain.epochs_initial = 20\ntrain.epochs_iter = 10\n",
    )
    .map_err(|e| e.to_string())?;
    let mut trees = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_hardness"))
            .args(["run", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!("hardness run failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        trees.push(read_tree(&out));
    }
    let csvs = trees[0].keys().filter(|k| k.ends_with(".csv")).count();
    ensure(csvs == 7 && trees[0] == trees[1], format!("{csvs} CSV files, byte-identical across two runs: {}", trees[0] == trees[1]))
}

fn criterion_10() -> Outcome {
    let s = shared();
    let m = s.bank.classes().len();
    let sched = &s.config.schedule;
    let mut checked = 0usize;
    for rec in &s.experiment.records {
        for (t, e) in rec.entries.iter().enumerate() {
            if e.reservoir_size != m * sched.s0 + t * sched.s || e.class_counts.iter().sum::<usize>() != e.reservoir_size {
                return Err(format!("run {} {} iteration {t}: reservoir {}", rec.run_id, rec.strategy, e.reservoir_size));
            }
            if t == 0 {
                continue;
            }
            if let Some(scores) = rec.entries[t - 1].report.scores(rec.strategy) {
                let mut best = 0;
                for (i, &v) in scores.iter().enumerate() {
                    if v > scores[best] {
                        best = i;
                    }
                }
                if e.selected != Some(ClassId::from_index(best)) {
                    return Err(format!("run {} {} iteration {t}: selected {:?}, argmax class {}", rec.run_id, rec.strategy, e.selected, best + 1));
                }
                checked += 1;
            }
        }
    }
    Ok(format!("{} runs audited, {checked} acquisitions match the logged argmax", s.experiment.records.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("entropy/variance oracle", criterion_1),
        ("gradient check", criterion_2),
        ("MC-dropout sanity", criterion_3),
        ("subset uniformity", criterion_4),
        ("Lucas-Kanade vs block matching", criterion_5),
        ("frame-selection examples", criterion_6),
        ("active sampling trend", criterion_7),
        ("dropout sweep trend", criterion_8),
        ("end-to-end determinism", criterion_9),
        ("budget accounting", criterion_10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|x| x == &n.to_string()) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS  {n:>2} {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL  {n:>2} {name}: {d} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
