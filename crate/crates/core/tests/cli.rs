use std::path::Path;
use std::process::{Command, Output};

fn segloss(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segloss"))
        .args(args)
        .output()
        .expect("spawn segloss")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn data_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

const FAST: [&str; 6] = ["--epochs", "3", "--repeats", "1", "--images", "16"];

#[test]
fn curves_emit_one_row_per_grid_point_and_loss() {
    let out = segloss(&["curves"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.starts_with("p,loss_kind,value,grad_norm,alpha\n"));
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 99 * 6);
    let ce_half = rows.iter().find(|r| r[0] == "0.5" && r[1] == "ce").unwrap();
    assert!((ce_half[2].parse::<f64>().unwrap() - std::f64::consts::LN_2).abs() < 1e-4);

    let out = segloss(&["curves", "--loss", "ce,ml"]);
    assert_eq!(data_rows(&stdout(&out)).len(), 99 * 2);
}

#[test]
fn caml_vs_ml_curves_use_fixed_contexts() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("caml_vs_ml.csv");
    let out = segloss(&[
        "curves",
        "--mode",
        "fig3",
        "--p-bar",
        "0.3",
        "--dice",
        "0.4,0.9",
        "--out",
        path(&file),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let rows = data_rows(&std::fs::read_to_string(&file).unwrap());
    assert_eq!(rows.len(), 99 * 3);
    assert!(rows.iter().any(|r| r[1] == "caml@pbar=0.3;d=0.9"));
}

#[test]
fn gradcheck_exit_codes() {
    let out = segloss(&["gradcheck"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout(&out).contains("270 of 270 checks passed"));

    let out = segloss(&[
        "gradcheck",
        "--loss",
        "ce",
        "--tolerance",
        "0",
        "--num-seeds",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(1));

    let out = segloss(&["gradcheck", "--loss", "focal"]);
    assert_eq!(out.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&out.stderr).contains("focal"));
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(segloss(&[]).status.code(), Some(64));
    assert_eq!(segloss(&["train", "--bogus"]).status.code(), Some(64));
    assert_eq!(
        segloss(&["train", "--loss", "ce,dice"]).status.code(),
        Some(64)
    );
    assert_eq!(
        segloss(&["train", "--loss", "ml", "--lambda", "0.3"])
            .status
            .code(),
        Some(64)
    );
    assert_eq!(
        segloss(&["ablate", "--fractions", "1/4,1/8"]).status.code(),
        Some(64)
    );
}

#[test]
fn help_documents_the_csv_schemas() {
    let out = segloss(&["sweep", "--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("fraction,loss,lambda,r,repeat,class,iou,miou,seed"));
    let text = stdout(&segloss(&["train", "--help"]));
    assert!(text.contains("epoch,train_loss,val_loss,p_bar,dice_mean,alpha"));
}

#[test]
fn train_is_byte_reproducible() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        let mut args = vec![
            "train",
            "--loss",
            "caml",
            "--seed",
            "5",
            "--out",
            path(dir.path()),
        ];
        args.extend(FAST);
        let out = segloss(&args);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for file in ["results.csv", "summary.csv", "curve_0.csv"] {
        let a = std::fs::read(dirs[0].path().join(file)).unwrap();
        let b = std::fs::read(dirs[1].path().join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
    let curve = std::fs::read_to_string(dirs[0].path().join("curve_0.csv")).unwrap();
    assert_eq!(data_rows(&curve).len(), 3);
}

#[test]
fn sweep_of_three_fractions_and_five_losses_has_fifteen_rows() {
    let mut args = vec![
        "sweep",
        "--fractions",
        "1,1/4,1/8",
        "--loss",
        "ce,dice,additive=0.5,ml,caml",
    ];
    args.extend(FAST);
    let out = segloss(&args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows = data_rows(&stdout(&out));
    assert_eq!(rows.len(), 15);
    let kinds: Vec<&str> = rows[..5].iter().map(|r| r[1].as_str()).collect();
    assert_eq!(kinds, ["ce", "dice", "additive", "ml", "caml"]);
    assert_eq!(rows[2][2], "0.5");
    assert!(rows.iter().all(|r| r.last().unwrap() == "ok"));
}

#[test]
fn ablate_default_has_six_rows() {
    let mut args = vec!["ablate"];
    args.extend(FAST);
    let out = segloss(&args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows = data_rows(&stdout(&out));
    let labels: Vec<(String, String, String)> = rows
        .iter()
        .map(|r| (r[0].clone(), r[1].clone(), r[3].clone()))
        .collect();
    let expected: Vec<(String, String, String)> = ["1", "2", "3", "4", "5", ""]
        .iter()
        .map(|r| {
            let kind = if r.is_empty() { "caml" } else { "caml-r" };
            ("1/8".to_string(), kind.to_string(), r.to_string())
        })
        .collect();
    assert_eq!(labels, expected);
}

#[test]
fn saved_dataset_trains_like_the_generated_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = segloss(&[
        "gen-data",
        "--seed",
        "4",
        "--images",
        "16",
        "--out",
        path(&data),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for file in ["meta.json", "features.bin", "labels.bin"] {
        assert!(data.join(file).is_file(), "{file}");
    }
    let fit = ["--seed", "4", "--epochs", "3", "--repeats", "1"];
    let mut from_disk = vec!["train", "--data", path(&data)];
    from_disk.extend(fit);
    let mut generated = vec!["train", "--images", "16"];
    generated.extend(fit);
    let a = segloss(&from_disk);
    let b = segloss(&generated);
    assert_eq!(
        a.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&a.stderr)
    );
    assert_eq!(stdout(&a), stdout(&b));

    let mut conflicting = vec!["train", "--data", path(&data), "--noise", "0"];
    conflicting.extend(fit);
    assert_eq!(segloss(&conflicting).status.code(), Some(64));
}

#[test]
fn config_file_supplies_defaults_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    std::fs::write(
        &config,
        r#"{"loss": "ml", "epochs": 3, "repeats": 1, "images": 16, "seed": 9}"#,
    )
    .unwrap();
    let from_file = segloss(&["train", "--config", path(&config)]);
    assert_eq!(
        from_file.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&from_file.stderr)
    );
    let explicit = segloss(&[
        "train",
        "--loss",
        "ml",
        "--epochs",
        "3",
        "--repeats",
        "1",
        "--images",
        "16",
        "--seed",
        "9",
    ]);
    assert_eq!(stdout(&from_file), stdout(&explicit));
    assert!(data_rows(&stdout(&from_file))[0][1] == "ml");

    let overridden = segloss(&["train", "--config", path(&config), "--loss", "dice"]);
    assert_eq!(data_rows(&stdout(&overridden))[0][1], "dice");

    std::fs::write(&config, r#"{"loss": "ml", "lambda": 0.4}"#).unwrap();
    let conflict = segloss(&["train", "--config", path(&config)]);
    assert_eq!(conflict.status.code(), Some(64));
    let msg = String::from_utf8_lossy(&conflict.stderr);
    assert!(msg.contains("run.json"), "{msg}");
}
