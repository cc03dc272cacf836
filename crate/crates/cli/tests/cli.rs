use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pmdice::io::{tnsr, Tensor};
use pmdice::{LabelField, ScalarField};
use tempfile::TempDir;

fn pmdice(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmdice")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_probs(dir: &Path, name: &str, dims: &[usize], data: &[f64]) -> PathBuf {
    let path = dir.join(name);
    let f = ScalarField::new(dims.to_vec(), data.to_vec()).unwrap();
    tnsr::write(&path, &Tensor::from_field(&f)).unwrap();
    path
}

fn write_labels(dir: &Path, name: &str, dims: &[usize], data: &[u32]) -> PathBuf {
    let path = dir.join(name);
    let l = LabelField::new(dims.to_vec(), data.to_vec()).unwrap();
    tnsr::write(&path, &Tensor::from_labels(&l).unwrap()).unwrap();
    path
}

/// The four-pixel binary instance: fg y = [1,1,0,0], fg p = [0.9,0.6,0.1,0.4].
fn worked(dir: &Path) -> (String, String) {
    let p = write_probs(dir, "p.tnsr", &[2, 1, 4], &[0.1, 0.4, 0.9, 0.6, 0.9, 0.6, 0.1, 0.4]);
    let l = write_labels(dir, "y.tnsr", &[1, 4], &[1, 1, 0, 0]);
    (p.to_str().unwrap().into(), l.to_str().unwrap().into())
}

fn loss_value(o: &Output) -> f64 {
    let v: serde_json::Value = serde_json::from_str(stdout(o).trim()).unwrap();
    v["value"].as_f64().unwrap()
}

#[test]
fn loss_on_worked_instance() {
    let dir = TempDir::new().unwrap();
    let (p, l) = worked(dir.path());
    let dice = pmdice(&["loss", "--loss", "dice", "--pred", &p, "--label", &l]);
    assert_eq!(code(&dice), 0, "{}", stderr(&dice));
    assert_eq!(stdout(&dice).lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(stdout(&dice).trim()).unwrap();
    assert_eq!(v["loss_kind"], "dice");
    assert!((loss_value(&dice) - 0.101796).abs() < 1e-6);

    let pm0 = pmdice(&["loss", "--loss", "pm_dice", "--gamma", "0", "--pred", &p, "--label", &l]);
    assert_eq!(stdout(&pm0).replace("pm_dice", "dice"), stdout(&dice));

    let pm1 = pmdice(&["loss", "--loss", "pm_dice", "--pred", &p, "--label", &l]);
    assert!((loss_value(&pm1) - 0.164557).abs() < 1e-6);

    let comp = pmdice(&[
        "loss", "--loss", "ce", "--compound", "dice", "--w1", "0", "--w2", "2", "--pred", &p, "--label", &l,
    ]);
    assert_eq!(code(&comp), 0, "{}", stderr(&comp));
    assert!((loss_value(&comp) - 2.0 * loss_value(&dice)).abs() < 1e-12);

    let per_class = pmdice(&["loss", "--loss", "pm_dice", "--gamma-class", "0=0,1=0", "--pred", &p, "--label", &l]);
    assert_eq!(loss_value(&per_class), loss_value(&dice));
}

#[test]
fn loss_usage_and_shape_errors() {
    let dir = TempDir::new().unwrap();
    let (p, l) = worked(dir.path());
    assert_eq!(code(&pmdice(&["loss", "--loss", "dice", "--pred", &p])), 64);
    assert_eq!(code(&pmdice(&["loss", "--loss", "hinge", "--pred", &p, "--label", &l])), 64);
    assert_eq!(code(&pmdice(&["loss", "--loss", "topk_ce", "--k", "0", "--pred", &p, "--label", &l])), 64);
    assert_eq!(code(&pmdice(&["frobnicate"])), 64);

    let wrong = write_labels(dir.path(), "wrong.tnsr", &[2, 2], &[0, 1, 0, 1]);
    let o = pmdice(&["loss", "--loss", "dice", "--pred", &p, "--label", wrong.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(!stderr(&o).is_empty());

    let missing = dir.path().join("nope.tnsr");
    assert_eq!(code(&pmdice(&["loss", "--loss", "dice", "--pred", missing.to_str().unwrap(), "--label", &l])), 66);
    let junk = dir.path().join("junk.tnsr");
    fs::write(&junk, b"XNSR\x01\x01\x02\x00").unwrap();
    let o = pmdice(&["loss", "--loss", "dice", "--pred", junk.to_str().unwrap(), "--label", &l]);
    assert_eq!(code(&o), 65);
    assert!(stderr(&o).contains("bad magic"));
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn eval_reports() {
    let dir = TempDir::new().unwrap();
    let truth = write_labels(dir.path(), "truth.tnsr", &[1, 4], &[0, 1, 0, 0]);
    let pred = write_labels(dir.path(), "pred.tnsr", &[1, 4], &[0, 1, 1, 0]);
    let (t, p) = (truth.to_str().unwrap(), pred.to_str().unwrap());

    let same = pmdice(&["eval", "--pred", t, "--label", t, "--tau", "1"]);
    assert_eq!(code(&same), 0, "{}", stderr(&same));
    let rows = csv_rows(&stdout(&same));
    assert_eq!(rows[0], ["class", "dice", "iou", "precision", "recall", "nsd"]);
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[3][0], "foreground");
    assert!(rows[1..].iter().all(|r| r[1..].iter().all(|v| v == "1.0")));

    let csv = pmdice(&["eval", "--pred", p, "--label", t, "--tau", "1"]);
    let rows = csv_rows(&stdout(&csv));
    let dice1: f64 = rows[2][1].parse().unwrap();
    assert!((dice1 - 2.0 / 3.0).abs() < 1e-15);

    let json = pmdice(&["eval", "--pred", p, "--label", t, "--tau", "1", "--format", "json"]);
    let parsed: Vec<serde_json::Value> = serde_json::from_str(&stdout(&json)).unwrap();
    assert_eq!(parsed.len(), rows.len() - 1);
    for (obj, row) in parsed.iter().zip(&rows[1..]) {
        assert_eq!(obj["class"], row[0].as_str());
        for (k, name) in ["dice", "iou", "precision", "recall", "nsd"].iter().enumerate() {
            assert_eq!(obj[name].as_f64().unwrap(), row[k + 1].parse::<f64>().unwrap());
        }
    }

    let probs = write_probs(dir.path(), "probs.tnsr", &[2, 1, 4], &[0.9, 0.2, 0.4, 0.8, 0.1, 0.8, 0.6, 0.2]);
    let soft = pmdice(&["eval", "--pred", probs.to_str().unwrap(), "--label", t, "--tau", "1"]);
    assert_eq!(stdout(&soft), stdout(&csv));

    let wrong = write_labels(dir.path(), "wrong.tnsr", &[2, 2], &[0; 4]);
    assert_eq!(code(&pmdice(&["eval", "--pred", wrong.to_str().unwrap(), "--label", t])), 2);
}

#[test]
fn eval_reads_pgm_labels() {
    let dir = TempDir::new().unwrap();
    let truth = dir.path().join("truth.pgm");
    fs::write(&truth, b"P5\n4 1\n1\n\x00\x01\x00\x00").unwrap();
    let t = truth.to_str().unwrap();
    let o = pmdice(&["eval", "--pred", t, "--label", t]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let wide = dir.path().join("wide.pgm");
    fs::write(&wide, b"P5\n4 1\n65535\n\x00\x00\x00\x01\x00\x00\x00\x00").unwrap();
    assert_eq!(code(&pmdice(&["eval", "--pred", t, "--label", wide.to_str().unwrap()])), 65);
}

#[test]
fn gradcheck_exit_codes() {
    let ok = pmdice(&["gradcheck", "--loss", "dice", "--trials", "100"]);
    assert_eq!(code(&ok), 0, "{}", stdout(&ok));
    let v: serde_json::Value = serde_json::from_str(stdout(&ok).trim()).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["trials"], 100);

    let frozen = pmdice(&["gradcheck", "--loss", "pm_dice", "--witness"]);
    assert_eq!(code(&frozen), 0, "{}", stdout(&frozen));

    let unfrozen = pmdice(&["gradcheck", "--loss", "pm_dice", "--witness", "--unfrozen"]);
    assert_eq!(code(&unfrozen), 1);
    let v: serde_json::Value = serde_json::from_str(stdout(&unfrozen).trim()).unwrap();
    assert_eq!(v["passed"], false);
    assert!(v["max_rel_error"].as_f64().unwrap() > 1e-3);
    assert!(stderr(&unfrozen).contains("gradient check failed"));

    assert_eq!(code(&pmdice(&["gradcheck", "--loss", "bogus"])), 64);
}

const SMALL: &str = "
height = 24
width = 24
n_scenes = 3
big_radius_min = 5
big_radius_max = 6
small_radius_min = 2
small_radius_max = 2.5
epochs = 2
eval_scenes = 2
seed = 4
";

fn config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().into()
}

fn listing(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn synth_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = pmdice(&["synth", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let files = listing(&a);
    assert_eq!(files, listing(&b));
    assert_eq!(files.len(), 3 * 4 + 1);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["scenes"].as_array().unwrap().len(), 3);
    let labels = tnsr::read(&a.join("scene_0000_labels.tnsr")).unwrap();
    assert_eq!(labels.dims(), &[24, 24]);
}

#[test]
fn train_and_sweep_agree_at_zero_gamma() {
    let dir = TempDir::new().unwrap();
    let train_cfg = config(dir.path(), &format!("{SMALL}loss = \"dice\"\n"));
    let out = dir.path().join("train");
    let o = pmdice(&["train", "--config", &train_cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().next().unwrap(), "iter,epoch,scene,lr,loss");
    assert_eq!(history.lines().count(), 1 + 2 * 3);
    assert_eq!(fs::read_to_string(out.join("epochs.csv")).unwrap().lines().count(), 1 + 2);
    let metrics = csv_rows(&fs::read_to_string(out.join("final_metrics.csv")).unwrap());
    let train_mdice: f64 = metrics.last().unwrap()[1].parse().unwrap();

    let sweep_cfg = config(dir.path(), &format!("{SMALL}gammas = [0]\nseeds = [4]\n"));
    let out = dir.path().join("sweep");
    let o = pmdice(&["sweep", "--config", &sweep_cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&fs::read_to_string(out.join("sweep.csv")).unwrap());
    assert_eq!(rows[0], ["gamma_fg", "gamma_bg", "seed", "mdice", "miou", "mprec", "mrec", "mnsd"]);
    assert_eq!(rows[1][3].parse::<f64>().unwrap(), train_mdice);
}

#[test]
fn sweep_row_count() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), &format!("{SMALL}gamma_fg = 2\nsweep_gamma_bg = [0, 1]\nseeds = [1, 2, 3]\n"));
    let out = dir.path().join("sweep");
    let o = pmdice(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&fs::read_to_string(out.join("sweep.csv")).unwrap());
    assert_eq!(rows.len() - 1, 2 * 3);
    assert!(rows[1..].iter().all(|r| r[0] == "2.0"));
}

#[test]
fn config_and_output_errors() {
    let dir = TempDir::new().unwrap();
    let bad = config(dir.path(), "epochs = 1\nlearning_rate = 0.5\n");
    let o = pmdice(&["train", "--config", &bad, "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(code(&o), 78);
    assert!(stderr(&o).contains("learning_rate"));

    let good = config(dir.path(), SMALL);
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"").unwrap();
    let o = pmdice(&["synth", "--config", &good, "--out", blocker.join("out").to_str().unwrap()]);
    assert_eq!(code(&o), 73);

    let missing = dir.path().join("missing.toml");
    assert_eq!(code(&pmdice(&["sweep", "--config", missing.to_str().unwrap(), "--out", "x"])), 66);
    assert_eq!(code(&pmdice(&["train", "--out", "x"])), 64);
}
