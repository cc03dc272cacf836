use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use pmdice::io::{config, pgm, tnsr, ExperimentConfig, Pgm, ReportFormat, Tensor};
use pmdice::metrics::{panel, panel_from_labels, MetricPanel};
use pmdice::synth::gen_scene;
use pmdice::trainer::{gamma_sweep, train as train_model};
use pmdice::verification::{check_instance, detach_witness, grad_check_with, REL_TOLERANCE};
use pmdice::{LabelField, LossParams, LossSpec, ScalarField};
use serde::Serialize;

use crate::exit::{self, Failure};
use crate::{EvalArgs, Format, GradcheckArgs, LossArgs, LossOptions, RunArgs};

type Outcome = Result<ExitCode, Failure>;

/// `x` to 6 significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return x.to_string();
    }
    let decimals = (5 - x.abs().log10().floor() as i32).max(0) as usize;
    format!("{x:.decimals$}")
}

fn is_pgm(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

fn read_tensor(path: &Path) -> Result<Tensor, Failure> {
    tnsr::read(path).map_err(|e| Failure::reading(path, e))
}

fn read_labels(path: &Path) -> Result<LabelField, Failure> {
    if is_pgm(path) {
        return pgm::read(path).map(|p| p.to_labels()).map_err(|e| Failure::reading(path, e));
    }
    read_tensor(path)?.to_labels().map_err(|e| Failure::reading(path, e))
}

fn read_probs(path: &Path) -> Result<ScalarField, Failure> {
    read_tensor(path)?.to_field().map_err(|e| Failure::reading(path, e))
}

fn loss_spec(opts: &LossOptions) -> Result<LossSpec, Failure> {
    let params = LossParams {
        gamma: opts.gamma,
        gamma_class: opts.gamma_class.as_ref().map(|g| g.0.clone()).unwrap_or_default(),
        k_percent: opts.k_percent,
        epsilon: opts.epsilon,
    };
    LossSpec::build(opts.loss, &params).map_err(|e| Failure::new(exit::USAGE, e.to_string()))
}

#[derive(Serialize)]
struct LossRecord {
    loss_kind: &'static str,
    value: f64,
}

pub fn loss(args: LossArgs) -> Outcome {
    let mut spec = loss_spec(&args.loss)?;
    if let Some(second) = args.compound {
        let second = loss_spec(&LossOptions { loss: second, ..args.loss.clone() })?;
        spec = LossSpec::compound(spec, second, args.w1, args.w2);
        spec.validate().map_err(|e| Failure::new(exit::USAGE, e.to_string()))?;
    }
    let probs = read_probs(&args.pred)?;
    let labels = read_labels(&args.label)?;
    let value = spec.evaluate(&probs, &labels)?.value;
    let record = LossRecord { loss_kind: spec.kind().name(), value };
    println!("{}", serde_json::to_string(&record).expect("plain record"));
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct MetricRow {
    class: String,
    dice: f64,
    iou: f64,
    precision: f64,
    recall: f64,
    nsd: f64,
}

fn metric_rows(p: &MetricPanel) -> Vec<MetricRow> {
    let row = |class: String, m: &pmdice::metrics::ClassMetrics| MetricRow {
        class,
        dice: m.dice,
        iou: m.iou,
        precision: m.precision,
        recall: m.recall,
        nsd: m.nsd,
    };
    let mut rows: Vec<_> = p.classes.iter().enumerate().map(|(c, m)| row(c.to_string(), m)).collect();
    rows.push(row("foreground".into(), &p.foreground));
    rows
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable report");
    out.push(b'\n');
    out
}

fn report_bytes(rows: &[MetricRow], format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Csv => csv_bytes(rows),
        ReportFormat::Json => json_bytes(rows),
    }
}

pub fn eval(args: EvalArgs) -> Outcome {
    if !(args.tau >= 0.0) {
        return Err(Failure::new(exit::USAGE, format!("--tau must be non-negative, got {}", args.tau)));
    }
    let truth = read_labels(&args.label)?;
    let hard = |pred: LabelField| -> Result<MetricPanel, Failure> {
        let classes = pred.min_classes().max(truth.min_classes()).max(2);
        Ok(panel_from_labels(&pred, &truth, classes, args.tau)?)
    };
    let result = if is_pgm(&args.pred) {
        hard(read_labels(&args.pred)?)?
    } else {
        match read_tensor(&args.pred)? {
            t @ Tensor::U8 { .. } => hard(t.to_labels().map_err(|e| Failure::reading(&args.pred, e))?)?,
            t if t.dims().len() == truth.dims().len() => {
                hard(t.to_labels().map_err(|e| Failure::reading(&args.pred, e))?)?
            }
            t => panel(&t.to_field().map_err(|e| Failure::reading(&args.pred, e))?, &truth, args.tau)?,
        }
    };
    let format = match args.format {
        Format::Csv => ReportFormat::Csv,
        Format::Json => ReportFormat::Json,
    };
    std::io::stdout()
        .write_all(&report_bytes(&metric_rows(&result), format))
        .map_err(|e| Failure::new(exit::FAILURE, e.to_string()))?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct GradRecord {
    loss_kind: &'static str,
    frozen: bool,
    passed: bool,
    tolerance: f64,
    #[serde(flatten)]
    report: pmdice::verification::GradReport,
}

pub fn gradcheck(args: GradcheckArgs) -> Outcome {
    let spec = loss_spec(&args.loss)?;
    if args.trials == 0 {
        return Err(Failure::new(exit::USAGE, "--trials must be at least 1"));
    }
    if !(args.step > 0.0) {
        return Err(Failure::new(exit::USAGE, "--step must be positive"));
    }
    let frozen = !args.unfrozen;
    let report = if args.witness {
        let (_, probs, labels) = detach_witness();
        check_instance(&spec, &probs, &labels, args.step, frozen)?
    } else {
        grad_check_with(&spec, args.trials, args.seed, args.step, frozen)?
    };
    let record = GradRecord {
        loss_kind: spec.kind().name(),
        frozen,
        passed: report.passed(),
        tolerance: REL_TOLERANCE,
        report,
    };
    println!("{}", serde_json::to_string(&record).expect("plain record"));
    if record.passed {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "pmdice: gradient check failed for {}: max relative error {} at class {} pixel {} (tolerance {})",
            record.loss_kind,
            sig6(report.max_rel_error),
            report.worst_class,
            report.worst_pixel,
            REL_TOLERANCE
        );
        Ok(ExitCode::from(exit::FAILURE))
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::reading(path, e.into()))?;
    Ok(config::parse(&text)?)
}

fn create_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::creating(dir, e))?;
    Ok(())
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, Failure> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Failure::creating(&path, e))?;
    Ok(path)
}

#[derive(Serialize)]
struct ManifestScene {
    index: usize,
    image: String,
    image_pgm: String,
    labels: String,
    labels_pgm: String,
    big: pmdice::synth::Disk,
    small: pmdice::synth::Disk,
    foreground_fraction: f64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a pmdice::synth::SceneConfig,
    scenes: Vec<ManifestScene>,
}

pub fn synth(args: RunArgs) -> Outcome {
    let cfg = load_config(&args.config)?;
    let scenes = &cfg.train.scenes;
    create_out(&args.out)?;
    let mut entries = Vec::with_capacity(scenes.n_scenes);
    for k in 0..scenes.n_scenes {
        let s = gen_scene(scenes, k)?;
        let stem = format!("scene_{k:04}");
        let names = [
            format!("{stem}_image.tnsr"),
            format!("{stem}_image.pgm"),
            format!("{stem}_labels.tnsr"),
            format!("{stem}_labels.pgm"),
        ];
        write_file(&args.out, &names[0], &tnsr::encode(&Tensor::from_field(&s.image))?)?;
        write_file(&args.out, &names[1], &pgm::encode(&Pgm::from_intensity(&s.image)?))?;
        write_file(&args.out, &names[2], &tnsr::encode(&Tensor::from_labels(&s.labels)?)?)?;
        write_file(&args.out, &names[3], &pgm::encode(&Pgm::from_labels(&s.labels)?))?;
        let [image, image_pgm, labels, labels_pgm] = names;
        entries.push(ManifestScene {
            index: k,
            image,
            image_pgm,
            labels,
            labels_pgm,
            big: s.big,
            small: s.small,
            foreground_fraction: s.foreground_fraction(),
        });
    }
    let manifest = Manifest { config: scenes, scenes: entries };
    write_file(&args.out, "manifest.json", &json_bytes(&manifest))?;
    println!("wrote {} scenes to {}", scenes.n_scenes, args.out.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct EpochRow {
    epoch: usize,
    mdice: f64,
    miou: f64,
    mprec: f64,
    mrec: f64,
    mnsd: f64,
}

#[derive(Serialize)]
struct ModelRecord<'a> {
    features: usize,
    classes: usize,
    /// Row-major `features x classes`.
    weights: &'a [f64],
}

pub fn train(args: RunArgs) -> Outcome {
    let cfg = load_config(&args.config)?;
    create_out(&args.out)?;
    let (model, history) = train_model(&cfg.train)?;
    write_file(&args.out, "history.csv", &csv_bytes(&history.iters))?;
    let epochs: Vec<_> = history
        .epochs
        .iter()
        .enumerate()
        .map(|(i, p)| EpochRow {
            epoch: if cfg.train.final_eval_only { cfg.train.epochs - 1 } else { i },
            mdice: p.foreground.dice,
            miou: p.foreground.iou,
            mprec: p.foreground.precision,
            mrec: p.foreground.recall,
            mnsd: p.foreground.nsd,
        })
        .collect();
    write_file(&args.out, "epochs.csv", &csv_bytes(&epochs))?;
    let record = ModelRecord { features: model.features(), classes: model.classes(), weights: model.weights() };
    write_file(&args.out, "model.json", &json_bytes(&record))?;
    match history.epochs.last() {
        Some(last) => {
            let name = match cfg.format {
                ReportFormat::Csv => "final_metrics.csv",
                ReportFormat::Json => "final_metrics.json",
            };
            write_file(&args.out, name, &report_bytes(&metric_rows(last), cfg.format))?;
            println!("{}: held-out mDice {} after {} epochs", cfg.train.loss, sig6(last.mdice()), cfg.train.epochs);
        }
        None => println!("{}: no epochs run", cfg.train.loss),
    }
    Ok(ExitCode::SUCCESS)
}

pub fn sweep(args: RunArgs) -> Outcome {
    let cfg = load_config(&args.config)?;
    create_out(&args.out)?;
    let rows = gamma_sweep(&cfg.train, &cfg.pairs, &cfg.seeds)?;
    write_file(&args.out, "sweep.csv", &csv_bytes(&rows))?;
    println!("wrote {} sweep rows to {}", rows.len(), args.out.join("sweep.csv").display());
    Ok(ExitCode::SUCCESS)
}
