//! Acceptance checks, one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines always reach stdout.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use comprehend_core::balance::{label_spread, smote, tomek_clean, LabelSpreadConfig};
use comprehend_core::dataset::{
    format_dataset, known_unknown_matrix, parse_dataset, ConfusionLabel, CorrectLabel, Dataset, FeatureRow, FeatureSet,
    RowKey,
};
use comprehend_core::ensemble::{evaluate_task, oof_meta_features, parse_fold_csv, EvalConfig, Method, StackingConfig, Task};
use comprehend_core::learners::{logistic_objective, train_gbt_traced, GbtConfig};
use comprehend_core::nlp::{dependency_metrics, parse_bracketed_tree, subtree_count, ConstituencyTree, DependencySentence};
use comprehend_core::signal::SosFilter;
use comprehend_core::spectral::{band_power, default_bands, welch_psd};
use comprehend_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn spectral() -> Outcome {
    let fs = 256.0;
    let n = 16384;
    let sine: Vec<f64> = (0..n).map(|i| (2.0 * PI * 10.0 * i as f64 / fs).sin()).collect();
    let psd = welch_psd(&sine, fs, 512, 0.5).unwrap();
    let total = psd.total_power();
    let bands = default_bands();
    let mut alpha = 0.0;
    let mut worst_other: f64 = 0.0;
    for b in &bands {
        let p = band_power(&psd, b).unwrap();
        if b.name == "alpha" {
            alpha = p;
        } else {
            worst_other = worst_other.max(p / total);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let noise_total = welch_psd(&noise, fs, 512, 0.5).unwrap().total_power();
    let pass = rel_err(alpha, 0.5) <= 0.05 && worst_other < 0.01 && rel_err(noise_total, 1.0) <= 0.05;
    outcome(
        pass,
        format!("alpha {alpha:.4} (0.5 +- 5%), max other band share {worst_other:.2e} (< 1%), white-noise total {noise_total:.4} (1 +- 5%)"),
    )
}

/// Analog Butterworth bandpass prototype through the bilinear map.
fn butterworth_oracle_gain(f: f64, lo: f64, hi: f64, order: i32, fs: f64) -> f64 {
    let warp = |x: f64| 2.0 * fs * (PI * x / fs).tan();
    let (w, wl, wh) = (warp(f), warp(lo), warp(hi));
    let r = (w * w - wl * wh) / (w * (wh - wl));
    1.0 / (1.0 + r.powi(2 * order)).sqrt()
}

/// Gain of `filtfilt` on a steady sine, measured away from the edges.
fn measured_gain(filter: &SosFilter, f: f64, fs: f64) -> f64 {
    let n = (fs * 40.0) as usize;
    let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * f * i as f64 / fs).sin()).collect();
    let y = filter.filtfilt(&x);
    let (a, b) = (n / 4, 3 * n / 4);
    let rms = |v: &[f64]| (v.iter().map(|s| s * s).sum::<f64>() / v.len() as f64).sqrt();
    rms(&y[a..b]) / rms(&x[a..b])
}

fn filter() -> Outcome {
    let (fs, lo, hi, order) = (256.0, 4.0, 80.0, 4);
    let f = SosFilter::butterworth_bandpass(lo, hi, order, fs).unwrap();
    let db = |g: f64| 20.0 * g.log10();
    let oracle20 = db(butterworth_oracle_gain(20.0, lo, hi, order as i32, fs).powi(2));
    let dev20 = db(measured_gain(&f, 20.0, fs)) - oracle20;
    let att1 = -db(measured_gain(&f, 1.0, fs));
    let att100 = -db(measured_gain(&f, 100.0, fs));
    let pass = dev20.abs() <= 1.0 && att1 >= 40.0 && att100 >= 15.0;
    outcome(
        pass,
        format!("20 Hz deviation {dev20:+.3} dB (<= 1), 1 Hz attenuation {att1:.1} dB (>= 40), 100 Hz attenuation {att100:.1} dB (>= 15)"),
    )
}

fn random_tree(rng: &mut ChaCha8Rng, depth: usize, count: &mut usize) -> ConstituencyTree {
    *count += 1;
    if depth == 0 || rng.random_bool(0.3) {
        return ConstituencyTree::leaf("NN", format!("w{count}"));
    }
    let k = rng.random_range(1..=3);
    let kids = (0..k).map(|_| random_tree(rng, depth - 1, count)).collect();
    ConstituencyTree::node(if depth.is_multiple_of(2) { "NP" } else { "VP" }, kids)
}

/// Random rooted tree: a random order, each node attached to an earlier one.
fn random_heads(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (1..=n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut heads = vec![0; n];
    for k in 1..n {
        heads[order[k] - 1] = order[rng.random_range(0..k)];
    }
    heads
}

/// Whether every node reaches 0 without revisiting a node.
fn brute_is_forest(heads: &[usize]) -> bool {
    (1..=heads.len()).all(|start| {
        let mut seen = vec![false; heads.len() + 1];
        let mut cur = start;
        while cur != 0 {
            if seen[cur] {
                return false;
            }
            seen[cur] = true;
            cur = heads[cur - 1];
        }
        true
    })
}

/// (total, max, avg, normalized) by scanning every ordered pair.
fn brute_dep(heads: &[usize]) -> (usize, usize, f64, f64) {
    let n = heads.len();
    let (mut total, mut max, mut arcs) = (0, 0, 0);
    for i in 1..=n {
        for j in 1..=n {
            if heads[i - 1] == j {
                let d = i.abs_diff(j);
                total += d;
                max = max.max(d);
                arcs += 1;
            }
        }
    }
    let avg = if arcs == 0 { 0.0 } else { total as f64 / arcs as f64 };
    (total, max, avg, total as f64 / n as f64)
}

fn dep_matches(heads: &[usize]) -> bool {
    let Ok(s) = DependencySentence::from_heads(heads) else { return false };
    let m = dependency_metrics(&s);
    let (total, max, avg, norm) = brute_dep(heads);
    m.total == total && m.max == max && (m.avg - avg).abs() < 1e-12 && (m.normalized - norm).abs() < 1e-12
}

fn nlp() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    let mut checked = 0;
    for _ in 0..1000 {
        let mut c = 0;
        let t = random_tree(&mut rng, 6, &mut c);
        let text = t.to_string();
        let parens = text.matches('(').count();
        let reparsed = parse_bracketed_tree(&text).map(|r| subtree_count(&r)).unwrap_or(0);
        if subtree_count(&t) != parens || reparsed != parens {
            mismatches += 1;
        }
        let n = rng.random_range(5..=30);
        if !dep_matches(&random_heads(&mut rng, n)) {
            mismatches += 1;
        }
        checked += 2;
    }
    // Every head vector over {0..n} for n <= 4: validity and metrics.
    for n in 1..=4usize {
        let base = n + 1;
        for code in 0..base.pow(n as u32) {
            let heads: Vec<usize> = (0..n).map(|i| code / base.pow(i as u32) % base).collect();
            let valid = brute_is_forest(&heads) && heads.iter().enumerate().all(|(i, &h)| h != i + 1);
            let ok = match DependencySentence::from_heads(&heads) {
                Ok(_) => valid && dep_matches(&heads),
                Err(_) => !valid,
            };
            mismatches += usize::from(!ok);
            checked += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches} mismatches over {checked} trees and head vectors"))
}

fn brute_tomek(x: &Matrix, y: &[bool]) -> Vec<usize> {
    let n = x.nrows();
    let d2 = |a: usize, b: usize| x.row(a).iter().zip(x.row(b)).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
    let nn: Vec<usize> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i).min_by(|&a, &b| d2(i, a).total_cmp(&d2(i, b)).then(a.cmp(&b))).unwrap())
        .collect();
    let pos = y.iter().filter(|&&b| b).count();
    let majority = pos > n - pos;
    let mut out: Vec<usize> = (0..n)
        .filter(|&i| y[i] == majority && y[nn[i]] != y[i] && nn[nn[i]] == i)
        .collect();
    out.sort_unstable();
    out
}

fn resampling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut equal, mut convex, mut tomek) = (true, true, true);
    let mut worst: f64 = 0.0;
    for trial in 0..200 {
        let n = rng.random_range(12..60);
        let d = rng.random_range(1..5);
        let y: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
        let data: Vec<f64> =
            (0..n * d).map(|k| rng.sample::<f64, _>(StandardNormal) + if y[k / d] { 0.7 } else { 0.0 }).collect();
        let x = Matrix::from_vec(n, d, data);

        let r = smote(&x, &y, 5, 1.0, trial).unwrap();
        let pos = r.y.iter().filter(|&&b| b).count();
        equal &= pos == r.y.len() - pos;
        let minority: Vec<usize> = (0..n).filter(|&i| y[i]).collect();
        for s in n..r.y.len() {
            let p = r.x.row(s);
            // Best fit of p on the segment between any two minority points.
            let mut best = f64::INFINITY;
            for &a in &minority {
                for &b in &minority {
                    let (xa, xb) = (x.row(a), x.row(b));
                    let dir: Vec<f64> = xb.iter().zip(xa).map(|(q, w)| q - w).collect();
                    let len2: f64 = dir.iter().map(|v| v * v).sum();
                    let t = if len2 == 0.0 {
                        0.0
                    } else {
                        (p.iter().zip(xa).zip(&dir).map(|((pv, av), dv)| (pv - av) * dv).sum::<f64>() / len2).clamp(0.0, 1.0)
                    };
                    let e = p.iter().zip(xa).zip(&dir).map(|((pv, av), dv)| (pv - av - t * dv).abs()).fold(0.0, f64::max);
                    best = best.min(e);
                }
            }
            worst = worst.max(best);
            convex &= best <= 1e-9;
        }

        let t = tomek_clean(&x, &y).unwrap();
        let majority = y.iter().filter(|&&b| b).count() > n / 2;
        tomek &= t.removed.iter().all(|&i| y[i] == majority) && t.removed == brute_tomek(&x, &y);
    }
    outcome(
        equal && convex && tomek,
        format!("balanced {equal}, convex {convex} (worst residual {worst:.1e}), Tomek oracle agreement {tomek}, 200 datasets"),
    )
}

fn spreading() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut data = Vec::new();
    for i in 0..100 {
        let c = if i < 50 { -3.0 } else { 3.0 };
        data.push(c + 0.5 * rng.sample::<f64, _>(StandardNormal));
        data.push(0.5 * rng.sample::<f64, _>(StandardNormal));
    }
    let x = Matrix::from_vec(100, 2, data);
    let mut y = vec![None; 100];
    y[0] = Some(0);
    y[99] = Some(1);
    let r = label_spread(&x, &y, 2, &LabelSpreadConfig::default()).unwrap();
    let correct = (0..100).filter(|&i| r.labels[i] == usize::from(i >= 50)).count();
    let kept = r.labels[0] == 0 && r.labels[99] == 1;
    outcome(correct >= 95 && kept, format!("{correct}/100 assigned correctly (>= 95), seed labels kept {kept}"))
}

fn learner_numerics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (n, d) = (80, 5);
    let x = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.sample(StandardNormal)).collect());
    let t: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let w: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let b = 0.3;
    let l2 = 0.1;
    let (_, gw, gb) = logistic_objective(&w, b, &x, &t, l2);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut check = |analytic: f64, plus: f64, minus: f64| {
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8));
    };
    for j in 0..d {
        let (mut wp, mut wm) = (w.clone(), w.clone());
        wp[j] += h;
        wm[j] -= h;
        check(gw[j], logistic_objective(&wp, b, &x, &t, l2).0, logistic_objective(&wm, b, &x, &t, l2).0);
    }
    check(gb, logistic_objective(&w, b + h, &x, &t, l2).0, logistic_objective(&w, b - h, &x, &t, l2).0);

    let y: Vec<bool> = (0..n).map(|i| x.get(i, 0) + 0.5 * x.get(i, 1) > 0.0).collect();
    let (_, losses) = train_gbt_traced(&x, &y, &GbtConfig { rounds: 60, ..Default::default() }, 2).unwrap();
    let worst_rise = losses.windows(2).map(|p| p[1] - p[0]).fold(f64::NEG_INFINITY, f64::max);
    outcome(
        worst < 1e-5 && worst_rise <= 1e-9,
        format!("LR gradient worst rel. err {worst:.2e} (< 1e-5), GBT largest per-round loss change {worst_rise:+.2e} (<= 1e-9)"),
    )
}

fn stacking_hygiene() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (n, d) = (60, 4);
    let x = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.sample(StandardNormal)).collect());
    let y: Vec<bool> = (0..n).map(|i| x.get(i, 0) + 0.3 * rng.sample::<f64, _>(StandardNormal) > 0.0).collect();
    let cfg = StackingConfig::default();
    let base = oof_meta_features(&x, &y, &cfg.bases, cfg.oof_folds, 9).unwrap();
    let mut changed = 0;
    for i in 0..n {
        let mut flipped = y.clone();
        flipped[i] = !flipped[i];
        let m = oof_meta_features(&x, &flipped, &cfg.bases, cfg.oof_folds, 9).unwrap();
        changed += usize::from(m.row(i) != base.row(i));
    }
    outcome(changed == 0, format!("{changed}/{n} rows changed their own meta-features after a label flip"))
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_comprehend"));
    c.env("RUST_LOG", "warn");
    c
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = bin().args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("`comprehend {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn mean_f1(out: &Path, slug: &str) -> Result<f64, String> {
    let text = std::fs::read_to_string(out.join("reports").join(format!("{slug}_folds.csv"))).map_err(|e| e.to_string())?;
    let reports = parse_fold_csv(&text).map_err(|e| e.to_string())?;
    reports.first().map(|r| r.mean_f1).ok_or_else(|| "empty fold report".into())
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let o = out.to_str().unwrap();
    let run = || -> Result<String, String> {
        run_cli(&["synth", "preprocess", "features", "assemble", "--seed", "0", "--out", o])?;
        let ds = parse_dataset(&std::fs::read_to_string(out.join("dataset.csv")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let mut lines = Vec::new();
        let mut pass = true;
        for task in ["confusion", "correctness"] {
            for fs in ["eeg+nlp", "eeg"] {
                run_cli(&["evaluate", "--seed", "0", "--out", o, "--task", task, "--features", fs, "--method", "stack"])?;
            }
            let full = mean_f1(out, &format!("{task}_eeg_nlp_stack"))?;
            let eeg = mean_f1(out, &format!("{task}_eeg_stack"))?;
            let t = Task::parse(task).unwrap();
            let cfg = EvalConfig::default();
            let null = evaluate_task(&ds.with_permuted_labels(7), t, FeatureSet::EegNlp, Method::Stack, &cfg)
                .map_err(|e| e.to_string())?
                .mean_f1;
            pass &= full >= 0.85 && (null - 0.5).abs() <= 0.08 && full >= eeg;
            lines.push(format!("{task}: EEG+NLP {full:.3}, EEG {eeg:.3}, null {null:.3}"));
        }
        Ok(format!("{}{}", if pass { "" } else { "!" }, lines.join("; ")))
    };
    match run() {
        Ok(s) => match s.strip_prefix('!') {
            Some(rest) => outcome(false, format!("{rest} (need >= 0.85, 0.50 +- 0.08, EEG+NLP >= EEG)")),
            None => outcome(true, format!("{s} (need >= 0.85, 0.50 +- 0.08, EEG+NLP >= EEG)")),
        },
        Err(e) => outcome(false, e),
    }
}

fn known_unknown() -> Outcome {
    let cells = [
        (ConfusionLabel::Confused, CorrectLabel::Correct, 248),
        (ConfusionLabel::Confused, CorrectLabel::Incorrect, 187),
        (ConfusionLabel::NotConfused, CorrectLabel::Correct, 206),
        (ConfusionLabel::NotConfused, CorrectLabel::Incorrect, 47),
    ];
    let mut rows = Vec::new();
    let mut sid = 0;
    for (c, k, count) in cells {
        for _ in 0..count {
            sid += 1;
            rows.push(FeatureRow {
                key: RowKey::new(format!("S{:02}", sid % 21 + 1), "passage1", sid),
                eeg: vec![0.0; 16],
                nlp: vec![0.0; 5],
                confusion_rating: None,
                confusion_label: Some(c),
                correct_label: Some(k),
            });
        }
    }
    let eeg_names = (0..16).map(|i| format!("e{i}")).collect();
    let nlp_names = (0..5).map(|i| format!("n{i}")).collect();
    let ds = Dataset::new(rows, eeg_names, nlp_names).unwrap();
    let reread = parse_dataset(&format_dataset(&ds)).unwrap();
    let m = known_unknown_matrix(&reread).unwrap();
    let got = [m.confused_total(), m.notconfused_total(), m.correct_total(), m.incorrect_total(), m.total()];
    outcome(got == [435, 253, 454, 234, 688], format!("totals {got:?} (want [435, 253, 454, 234, 688])"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap().to_string();
    let small = [
        "--set",
        "synth.n_participants=6",
        "--set",
        "synth.passages_per_participant=2",
        "--set",
        "eval.k_folds=3",
    ];
    let mut prep = vec!["synth", "preprocess", "features", "assemble", "--seed", "4", "--out", &o];
    prep.extend(small);
    let mut eval = vec!["evaluate", "report", "--seed", "4", "--out", &o, "--method", "stack"];
    eval.extend(small);
    let reports = dir.path().join("reports");
    let snapshot = || -> Vec<(String, Vec<u8>)> {
        let mut files: Vec<_> = std::fs::read_dir(&reports)
            .map(|rd| rd.filter_map(|e| e.ok().map(|e| e.path())).collect())
            .unwrap_or_default();
        files.sort();
        files.iter().map(|p| (p.display().to_string(), std::fs::read(p).unwrap_or_default())).collect()
    };
    let res = (|| {
        run_cli(&prep)?;
        run_cli(&eval)?;
        let first = snapshot();
        std::fs::remove_dir_all(&reports).map_err(|e| e.to_string())?;
        run_cli(&eval)?;
        Ok::<_, String>((first, snapshot()))
    })();
    match res {
        Ok((a, b)) => {
            let same = !a.is_empty() && a == b;
            outcome(same, format!("{} report files, byte-identical across runs: {same}", a.len()))
        }
        Err(e) => outcome(false, e),
    }
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 10] = [
        ("spectral correctness", Duration::from_secs(1), spectral),
        ("filter vs analytic Butterworth", Duration::from_secs(1), filter),
        ("NLP metric oracle", Duration::from_secs(5), nlp),
        ("resampling properties", Duration::from_secs(10), resampling),
        ("label spreading", Duration::from_secs(2), spreading),
        ("learner numerics", Duration::from_secs(10), learner_numerics),
        ("stacking hygiene", Duration::from_secs(30), stacking_hygiene),
        ("end-to-end synthetic", Duration::from_secs(300), end_to_end),
        ("known-unknown fixture", Duration::from_secs(1), known_unknown),
        ("determinism", Duration::from_secs(300), determinism),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let r = check();
        let took = t.elapsed();
        let in_time = took <= *budget;
        let pass = r.pass && in_time;
        failed += usize::from(!pass);
        println!(
            "criterion {:>2} {}: {name}: {} [{:.2} s of {} s]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            r.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
