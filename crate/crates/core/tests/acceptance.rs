//! Acceptance criteria for the loss library and its command-line front end.
//!
//! Runs as a plain binary (`harness = false`): every criterion prints one
//! `PASS` or `FAIL` line with its measurements, and the process exits
//! non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use segloss::gradcheck::{check, check_params, default_tolerance};
use segloss::losses::{caml_with_fixed_alpha, confidence_exponent, eval_on_probs};
use segloss::problems::random_problem;
use segloss::synthdata::{generate, SynthTaskConfig};
use segloss::trainer::{train, Architecture, ModelParams, TrainConfig};
use segloss::{eval_loss, one_hot, softmax, BatchShape, LogitBatch, LossKind, LossSpec};

type Outcome = Result<String, String>;

/// Name, time budget in seconds, and check.
type Criterion = (&'static str, Option<u64>, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn segloss(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_segloss"))
        .args(args)
        .output()
        .map_err(|e| format!("could not spawn segloss: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "segloss {} exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    String::from_utf8(out.stdout).map_err(|e| e.to_string())
}

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn gradient_certification() -> Outcome {
    let (mut total, mut failed) = (0, 0);
    let mut worst = [0.0f64; 2];
    for spec in LossSpec::family() {
        let tolerance = default_tolerance(spec.kind());
        for pixels in [8, 32, 64] {
            for classes in [2, 3, 5] {
                for seed in 0..5 {
                    let (logits, labels) = random_problem(seed, pixels, classes);
                    let report =
                        check(&spec, &logits, &labels, tolerance).map_err(|e| e.to_string())?;
                    let slot = usize::from(spec.kind().is_adaptive());
                    worst[slot] = worst[slot].max(report.max_rel_error);
                    total += 1;
                    failed += usize::from(!report.passed());
                }
            }
        }
    }
    let detail = format!(
        "{}/{total} checks, worst rel {:.1e} (tol 1e-5) / {:.1e} adaptive (tol 1e-4)",
        total - failed,
        worst[0],
        worst[1]
    );
    ensure(failed == 0, || detail.clone())?;
    Ok(detail)
}

fn product_rule_identity() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let (logits, labels) =
            random_problem(1000 + seed, 16 + 4 * seed as usize, 2 + (seed as usize % 4));
        let ml = eval_loss(&LossSpec::Ml, &logits, &labels).map_err(|e| e.to_string())?;
        let ce = eval_loss(&LossSpec::Ce, &logits, &labels).map_err(|e| e.to_string())?;
        let dice = eval_loss(&LossSpec::Dice, &logits, &labels).map_err(|e| e.to_string())?;
        for k in 0..ml.grad.len() {
            let expected = dice.value * ce.grad[k] + ce.value * dice.grad[k];
            worst = worst.max((ml.grad[k] - expected).abs());
        }
    }
    let detail = format!("20 batches, max |grad_ml - (Ld grad_ce + Lce grad_dice)| = {worst:.1e}");
    ensure(worst <= 1e-10, || detail.clone())?;
    Ok(detail)
}

fn caml_limits() -> Outcome {
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
    let mut worst_rel = 0.0f64;
    let mut cases = 0;

    // Real batches at the limits: every pixel confidently wrong drives both
    // the mean true-class probability and the mean Dice coefficient to ~0.
    for (seed, margin) in [(1u64, 30.0), (2, 40.0), (3, 60.0)] {
        let (logits, labels) = random_problem(seed, 32, 3);
        let shape = logits.shape();
        let mut z = vec![0.0; shape.len()];
        for i in 0..shape.pixels() {
            let wrong = (labels.true_class(i) + 1) % shape.classes;
            z[i * shape.classes + wrong] = margin;
        }
        let logits = LogitBatch::new(shape, z).map_err(|e| e.to_string())?;
        let caml = eval_loss(&LossSpec::Caml, &logits, &labels).map_err(|e| e.to_string())?;
        let ml = eval_loss(&LossSpec::Ml, &logits, &labels).map_err(|e| e.to_string())?;
        let d = &caml.diagnostics;
        ensure(d.p_bar <= 1e-9 && d.dice_mean <= 1e-6, || {
            format!(
                "constructed batch not at the limit: p_bar {:e}, D {:e}",
                d.p_bar, d.dice_mean
            )
        })?;
        worst_rel = worst_rel.max(rel(caml.value, ml.value));
        cases += 1;
    }

    // The closed form at limit contexts on ordinary batches.
    let limits = [
        (1e-9, 0.5),
        (1e-12, 0.9),
        (0.0, 1.0),
        (0.5, 1e-6),
        (0.99, 1e-7),
        (0.7, 0.0),
    ];
    for seed in 0..10 {
        let (logits, labels) = random_problem(2000 + seed, 24, 2 + seed as usize % 3);
        let probs = softmax(&logits).map_err(|e| e.to_string())?;
        let ml = eval_on_probs(&LossSpec::Ml, &probs, &labels).map_err(|e| e.to_string())?;
        for &(p_bar, dice) in &limits {
            let alpha = confidence_exponent(p_bar, dice);
            let caml = caml_with_fixed_alpha(&probs, &labels, alpha).map_err(|e| e.to_string())?;
            worst_rel = worst_rel.max(rel(caml.value, ml.value));
            cases += 1;
        }
    }

    let mut alpha_range = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..10 {
        for j in 0..10 {
            let alpha = confidence_exponent(i as f64 / 9.0, j as f64 / 9.0);
            alpha_range = (alpha_range.0.min(alpha), alpha_range.1.max(alpha));
        }
    }
    let detail = format!(
        "{cases} limit cases, worst |CAML-ML|/ML {worst_rel:.1e}; alpha over 10x10 grid in [{}, {}]",
        alpha_range.0, alpha_range.1
    );
    ensure(
        worst_rel < 1e-4 && alpha_range.0 >= 0.0 && alpha_range.1 <= 1.0,
        || detail.clone(),
    )?;
    Ok(detail)
}

fn confident_prediction_suppression() -> Outcome {
    let csv = segloss(&["curves", "--mode", "fig1"])?;
    let mut ce = Vec::new();
    let mut ml = Vec::new();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| format!("bad field `{s}`: {e}"))
        };
        let entry = (num(f[0])?, num(f[2])?, num(f[3])?);
        match f[1] {
            "ce" => ce.push(entry),
            "ml" => ml.push(entry),
            _ => {}
        }
    }
    ensure(!ce.is_empty() && ce.len() == ml.len(), || {
        "missing ce or ml rows".into()
    })?;
    let at =
        |rows: &[(f64, f64, f64)], p: f64| rows.iter().find(|r| (r.0 - p).abs() < 1e-9).copied();
    let (Some(ce99), Some(ml99)) = (at(&ce, 0.99), at(&ml, 0.99)) else {
        return Err("no rows at p = 0.99".into());
    };
    let ratios: Vec<f64> = ce
        .iter()
        .zip(&ml)
        .filter(|(c, _)| c.0 >= 0.9 - 1e-12)
        .map(|(c, m)| m.1 / c.1)
        .collect();
    let monotone = ratios.windows(2).all(|w| w[1] < w[0]);
    let last = *ratios.last().unwrap_or(&f64::NAN);
    let detail = format!(
        "|grad_ml(0.99)| {:.3e} vs |grad_ce(0.99)| {:.3e}; L_ml/L_ce over {} points from {:.3} down to {:.4}",
        ml99.2,
        ce99.2,
        ratios.len(),
        ratios[0],
        last
    );
    ensure(
        ml99.2 < ce99.2 && monotone && ratios.len() >= 2 && last < 0.02,
        || detail.clone(),
    )?;
    Ok(detail)
}

fn separable_sanity() -> Outcome {
    let dataset = generate(&SynthTaskConfig {
        num_images: 320,
        noise_sigma: 0.0,
        ..SynthTaskConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    let mut ok = true;
    for loss in LossSpec::family() {
        let cfg = TrainConfig {
            loss,
            epochs: 30,
            repeats: 1,
            seed: 0,
            ..TrainConfig::default()
        };
        let (_, report) = train(&dataset, Architecture::Linear, &cfg).map_err(|e| e.to_string())?;
        ok &= report.miou >= 0.95;
        parts.push(format!("{} {:.4}", loss.kind(), report.miou));
    }
    let detail = format!("test mIoU: {}", parts.join(", "));
    ensure(ok, || detail.clone())?;
    Ok(detail)
}

fn protocol_reproduction() -> Outcome {
    let dirs = [
        tempfile::tempdir().map_err(|e| e.to_string())?,
        tempfile::tempdir().map_err(|e| e.to_string())?,
    ];
    let mut stdouts = Vec::new();
    for dir in &dirs {
        let out = dir.path().to_str().ok_or("non-UTF-8 temp path")?;
        stdouts.push(segloss(&[
            "sweep",
            "--fractions",
            "1,1/4,1/8",
            "--repeats",
            "3",
            "--seed",
            "0",
            "--out",
            out,
        ])?);
    }
    let summary = read(&dirs[0].path().join("summary.csv"))?;
    for file in ["summary.csv", "results.csv"] {
        let (a, b) = (
            read(&dirs[0].path().join(file))?,
            read(&dirs[1].path().join(file))?,
        );
        ensure(a == b, || format!("{file} differs between identical runs"))?;
    }
    ensure(stdouts[0] == stdouts[1] && stdouts[0] == summary, || {
        "stdout differs from summary.csv".into()
    })?;

    let mut lines = summary.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or(format!("no `{name}` column"))
    };
    let (fraction, loss, repeats, mean, std, status) = (
        col("fraction")?,
        col("loss")?,
        col("repeats")?,
        col("miou_mean")?,
        col("miou_std")?,
        col("status")?,
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    ensure(rows.len() == 18, || {
        format!("{} summary rows, expected 18", rows.len())
    })?;
    for (i, want_fraction) in ["1", "1/4", "1/8"].iter().enumerate() {
        for (j, kind) in LossKind::ALL.iter().enumerate() {
            let r = &rows[i * 6 + j];
            ensure(
                r[fraction] == *want_fraction && r[loss] == kind.name(),
                || {
                    format!(
                        "row {} is {}/{}, expected {want_fraction}/{}",
                        i * 6 + j,
                        r[fraction],
                        r[loss],
                        kind.name()
                    )
                },
            )?;
            let m: f64 = r[mean]
                .parse()
                .map_err(|_| format!("bad mean in row {}", i * 6 + j))?;
            let s: f64 = r[std]
                .parse()
                .map_err(|_| format!("bad std in row {}", i * 6 + j))?;
            ensure(
                r[status] == "ok" && r[repeats] == "3" && (0.0..=1.0).contains(&m) && s >= 0.0,
                || format!("row {} malformed: {}", i * 6 + j, r.join(",")),
            )?;
        }
    }
    Ok("18 cells x 3 repeats with mean and std; summary and results byte-identical across two runs".into())
}

fn ablation_structure() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().to_str().ok_or("non-UTF-8 temp path")?;
    let stdout = segloss(&["ablate", "--seed", "0", "--out", out])?;
    let summary = read(&dir.path().join("summary.csv"))?;
    ensure(stdout == summary, || {
        "stdout differs from summary.csv".into()
    })?;
    let mut lines = summary.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    ensure(rows.len() == 6, || {
        format!("{} rows, expected 6", rows.len())
    })?;
    let labels: Vec<String> = rows.iter().map(|r| format!("{}:{}", r[1], r[3])).collect();
    let expected = [
        "caml-r:1", "caml-r:2", "caml-r:3", "caml-r:4", "caml-r:5", "caml:",
    ];
    ensure(labels == expected, || {
        format!("rows {labels:?}, expected {expected:?}")
    })?;
    let (mean, std) = (
        header
            .iter()
            .position(|h| *h == "miou_mean")
            .ok_or("no miou_mean")?,
        header
            .iter()
            .position(|h| *h == "miou_std")
            .ok_or("no miou_std")?,
    );
    for r in &rows {
        ensure(r[0] == "1/8", || {
            format!("fraction {} instead of 1/8", r[0])
        })?;
        ensure(
            r[mean].parse::<f64>().is_ok() && r[std].parse::<f64>().is_ok(),
            || format!("missing mean or std in {}", r.join(",")),
        )?;
    }
    let means: Vec<&str> = rows.iter().map(|r| r[mean]).collect();
    Ok(format!(
        "6 rows at 1/8 (r = 1..5, caml); mIoU means {}",
        means.join(" ")
    ))
}

fn parameter_gradient_check() -> Outcome {
    let dataset = generate(&SynthTaskConfig {
        image_size: 8,
        num_images: 8,
        seed: 3,
        ..SynthTaskConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let (mut features, mut labels) = (Vec::new(), Vec::new());
    dataset.gather_image(0, false, &mut features, &mut labels);
    let shape = BatchShape::new(1, 8, 8, 2).map_err(|e| e.to_string())?;
    let labels = one_hot(shape, &labels).map_err(|e| e.to_string())?;
    let mut model = ModelParams::init(Architecture::Mlp1 { hidden: 16 }, features.len() / 64, 2, 0);
    model.standardize_from(&features);
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for spec in LossSpec::family() {
        let report =
            check_params(&spec, &model, &features, &labels, 1e-4).map_err(|e| e.to_string())?;
        worst = worst.max(report.max_rel_error);
        if !report.passed() {
            failures.push(format!("{spec} rel {:.1e}", report.max_rel_error));
        }
    }
    let detail = format!(
        "6 losses x {} parameters, worst rel {worst:.1e}",
        model.num_params()
    );
    ensure(failures.is_empty(), || {
        format!("{detail}; failing: {}", failures.join(", "))
    })?;
    Ok(detail)
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("gradient certification", Some(60), gradient_certification),
        ("product-rule identity", None, product_rule_identity),
        ("CAML limit identities", None, caml_limits),
        (
            "confident-prediction suppression curves",
            Some(5),
            confident_prediction_suppression,
        ),
        ("separable-task sanity", Some(120), separable_sanity),
        (
            "protocol reproduction sweep",
            Some(30 * 60),
            protocol_reproduction,
        ),
        ("constant-r ablation structure", None, ablation_structure),
        (
            "end-to-end parameter gradient check",
            None,
            parameter_gradient_check,
        ),
    ];
    let mut failed = 0;
    for (k, (name, budget, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome =
            catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match (outcome, budget.map(Duration::from_secs)) {
            (Ok(detail), Some(limit)) if elapsed > limit => Err(format!(
                "{detail}; exceeded the {} s budget",
                limit.as_secs()
            )),
            (o, _) => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        failed += usize::from(outcome.is_err());
        println!(
            "{tag} [{}] {name}: {detail} ({:.1} s)",
            k + 1,
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
