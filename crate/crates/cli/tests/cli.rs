use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mlcl::dataset::{sample_from_generative, GenerativeSpec};

fn mlcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlcl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = mlcl(args);
    assert!(
        out.status.success(),
        "mlcl {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_owned()
}

fn write_dataset(dir: &Path) -> PathBuf {
    let spec = GenerativeSpec::random(4, 3).unwrap();
    let (ds, _) = sample_from_generative(&spec, 150, 5, 3).unwrap();
    let p = dir.join("data.txt");
    ds.write_file(&p).unwrap();
    p
}

const QUICK: [&str; 6] = ["--epochs", "5", "--lr", "0.05", "--batch", "32"];

#[test]
fn single_run_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = write_dataset(d);
    let data = data.to_str().unwrap();
    let cl = path(d, "cl.txt");
    let t = path(d, "t.csv");
    let model = path(d, "model.txt");
    let curve = path(d, "curve.csv");
    let report = path(d, "report.csv");

    ok(&[
        "corrupt", "--data", data, "--mode", "biased", "--seed", "4", "--out", &cl,
    ]);
    let text = fs::read_to_string(&cl).unwrap();
    assert!(text.starts_with("150 5 4\n"));

    let train_args = [
        &["estimate-t", "--data", &cl, "--transition-out", &t][..],
        &QUICK,
    ]
    .concat();
    ok(&train_args);
    let t_text = fs::read_to_string(&t).unwrap();
    assert_eq!(t_text.lines().count(), 4);

    let train_args = [
        &[
            "train",
            "--data",
            &cl,
            "--transition-in",
            &t,
            "--out",
            &model,
            "--curve-out",
            &curve,
        ][..],
        &QUICK,
    ]
    .concat();
    ok(&train_args);
    let curve_text = fs::read_to_string(&curve).unwrap();
    assert!(curve_text.starts_with("epoch,loss\n"));
    assert_eq!(curve_text.lines().count(), 6);

    ok(&["eval", "--data", data, "--model", &model, "--out", &report]);
    let report_text = fs::read_to_string(&report).unwrap();
    assert!(report_text.starts_with("metric,mean,std\nhamming_loss,"));

    let printed = ok(&["eval", "--data", data, "--model", &model]);
    assert_eq!(printed, report_text);
}

#[test]
fn relevant_labels_and_supervised_training() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = write_dataset(d);
    let data = data.to_str().unwrap();
    let cl = path(d, "clrl.txt");
    ok(&["corrupt", "--data", data, "--relevant", "1", "--out", &cl]);
    let line = fs::read_to_string(&cl)
        .unwrap()
        .lines()
        .nth(1)
        .unwrap()
        .to_owned();
    assert!(line.split_whitespace().next().unwrap().contains(';'));
    let model = path(d, "m.txt");
    ok(&[
        &["train", "--regime", "clrl", "--data", &cl, "--out", &model][..],
        &QUICK,
    ]
    .concat());
    ok(&[
        &[
            "train",
            "--regime",
            "supervised",
            "--data",
            data,
            "--out",
            &model,
        ][..],
        &QUICK,
    ]
    .concat());
    assert!(fs::read_to_string(&model).unwrap().contains("sigmoid"));
}

#[test]
fn cv_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = write_dataset(d);
    let data = data.to_str().unwrap();
    let a = path(d, "a.csv");
    let b = path(d, "b.csv");
    for out in [&a, &b] {
        ok(&[
            &[
                "cv", "--data", data, "--folds", "3", "--seed", "2", "--out", out,
            ][..],
            &QUICK,
        ]
        .concat());
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert_eq!(text.lines().count(), 1 + 5 + 1 + 3);
}

#[test]
fn experiment_tables() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let data = data.to_str().unwrap();
    let base = [&["--data", data, "--folds", "2"][..], &QUICK].concat();
    let ablate = ok(&[&["ablate"][..], &base].concat());
    assert!(ablate.starts_with("variant,hamming_loss"));
    assert!(ablate.contains("\nwithout_correlation,") && ablate.contains("\nwithout_mse,"));
    let sweep = ok(&[&["sweep-beta", "--betas", "0.1,1"][..], &base].concat());
    assert_eq!(sweep.lines().count(), 3);
    let clrl = ok(&[&["clrl"][..], &base].concat());
    assert!(clrl.contains("\nclrl,") && clrl.contains("\nsupervised,"));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = write_dataset(d);
    let config = d.join("run.conf");
    fs::write(
        &config,
        format!(
            "data = {}\nfolds = 2\nepochs = 3\nlr = 0.05\n",
            data.display()
        ),
    )
    .unwrap();
    let from_file = ok(&["cv", "--config", config.to_str().unwrap()]);
    let with_flag = ok(&["cv", "--config", config.to_str().unwrap(), "--epochs", "4"]);
    assert_ne!(from_file, with_flag);

    fs::write(&config, "colour = blue\n").unwrap();
    let out = mlcl(&["cv", "--config", config.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));
}

#[test]
fn bad_arguments_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let data = data.to_str().unwrap();
    let out = mlcl(&["cv", "--data", data, "--mode", "sideways"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("sideways"));
    let out = mlcl(&["cv", "--data", data, "--normalize-features", "maybe"]);
    assert!(!out.status.success());
    let out = mlcl(&["train", "--data", data, "--regime", "supervised"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--out"));
    let out = mlcl(&["corrupt", "--data", "/nonexistent/data.txt", "--out", "x"]);
    assert!(!out.status.success());
}

#[test]
fn theory_check_writes_csv_then_fails_on_violation() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = path(dir.path(), "theory.csv");
    let out = mlcl(&[
        "theory-check",
        "--trials",
        "10",
        "--skip-consistency",
        "--out",
        &out_path,
    ]);
    let csv = fs::read_to_string(&out_path).unwrap();
    assert!(csv.starts_with("scenario,lhs,rhs,pass\n"));
    assert!(csv.contains(",premise_violated\n"));
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("theorem1_"));
}

#[test]
fn convert_reads_libsvm() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.svm");
    fs::write(&input, "0,1 1:0.5 2:1\n2 3:1\n1 1:2\n").unwrap();
    let out = path(dir.path(), "out.txt");
    ok(&["convert", "--data", input.to_str().unwrap(), "--out", &out]);
    assert_eq!(
        fs::read_to_string(&out).unwrap(),
        "3 3 3\n0,1 0:0.5 1:1\n2 2:1\n1 0:2\n"
    );
}
