//! Acceptance criteria A1-A12. Each test prints one `PASS`/`FAIL` line and
//! then asserts the same condition. Run with `--nocapture` to see the lines.

use std::time::{Duration, Instant};

use pmdice::io::{tnsr, Tensor};
use pmdice::losses::dice_class_scores;
use pmdice::metrics::{confusion, nsd, overlap_metrics, Mask};
use pmdice::synth::{big_easy_small_missed, extract_features, gen_scene, SceneConfig};
use pmdice::trainer::{gamma_sweep, loss_and_grad, samples, small_object_dice, train_on, Model, TrainConfig};
use pmdice::verification::{brute_nsd, check_instance, detach_witness, grad_check, random_instance};
use pmdice::{one_hot, softmax, Error, LabelField, LossSpec, Rng, ScalarField};

fn report(id: &str, what: &str, passed: bool, detail: impl AsRef<str>) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    println!("{id} {verdict} {what}: {}", detail.as_ref());
    assert!(passed, "{id} {what}: {}", detail.as_ref());
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn a01_gradients_match_frozen_finite_differences() {
    let start = Instant::now();
    let mut specs = vec![LossSpec::Ce];
    specs.extend([0.5, 2.0, 5.0].map(|gamma| LossSpec::FocalCe { gamma }));
    specs.extend([10.0, 50.0, 100.0].map(|k_percent| LossSpec::TopkCe { k_percent }));
    specs.push(LossSpec::dice());
    specs.extend([0.5, 1.0, 2.0, 5.0].map(LossSpec::pm_dice));
    specs.push(LossSpec::GeneralizedDice { epsilon: 1e-6 });
    specs.push(LossSpec::LogDice { epsilon: 1e-6 });
    specs.push(LossSpec::FocalDiceTn { k_percent: 50.0, epsilon: 1e-6 });
    specs.push(LossSpec::TopkDicePos { k_percent: 50.0, epsilon: 1e-6 });
    specs.push(LossSpec::compound(LossSpec::Ce, LossSpec::dice(), 1.0, 1.0));

    let mut worst = (0.0, String::new());
    let mut failures = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let r = grad_check(spec, 100, 1000 + i as u64).unwrap();
        let label = format!("{spec:?}");
        if !r.passed() {
            failures.push(format!("{label}: {:.3e}", r.max_rel_error));
        }
        if r.max_rel_error > worst.0 {
            worst = (r.max_rel_error, label);
        }
    }
    let elapsed = start.elapsed();
    report(
        "A1",
        "gradient correctness",
        failures.is_empty() && elapsed < Duration::from_secs(60),
        format!(
            "{} configs x 100 instances, worst rel err {:.3e} ({}), {:.1?}{}",
            specs.len(),
            worst.0,
            worst.1,
            elapsed,
            if failures.is_empty() { String::new() } else { format!("; failed: {failures:?}") }
        ),
    );
}

#[test]
fn a02_modulating_term_is_detached() {
    let (spec, probs, labels) = detach_witness();
    let frozen = check_instance(&spec, &probs, &labels, 1e-6, true).unwrap();
    let unfrozen = check_instance(&spec, &probs, &labels, 1e-6, false).unwrap();
    report(
        "A2",
        "stop-gradient contract",
        frozen.max_rel_error < 1e-6 && unfrozen.max_rel_error > 1e-3,
        format!("frozen rel err {:.3e}, unfrozen rel err {:.3e}", frozen.max_rel_error, unfrozen.max_rel_error),
    );
}

#[test]
fn a03_reduction_identities() {
    let pairs = [
        ("pm_dice(0) = dice", LossSpec::pm_dice(0.0), LossSpec::dice()),
        ("focal_ce(0) = ce", LossSpec::FocalCe { gamma: 0.0 }, LossSpec::Ce),
        ("topk_ce(100) = ce", LossSpec::TopkCe { k_percent: 100.0 }, LossSpec::Ce),
        ("focal_dice_tn(100) = dice", LossSpec::FocalDiceTn { k_percent: 100.0, epsilon: 1e-6 }, LossSpec::dice()),
        ("topk_dice_pos(100) = dice", LossSpec::TopkDicePos { k_percent: 100.0, epsilon: 1e-6 }, LossSpec::dice()),
    ];
    let mut rng = Rng::new(303);
    let mut worst = vec![0.0f64; pairs.len()];
    for _ in 0..50 {
        let (p, l) = random_instance(&mut rng);
        for (k, (_, a, b)) in pairs.iter().enumerate() {
            let (ra, rb) = (a.evaluate(&p, &l).unwrap(), b.evaluate(&p, &l).unwrap());
            let d = (ra.value - rb.value).abs().max(max_abs_diff(ra.grad.data(), rb.grad.data()));
            worst[k] = worst[k].max(d);
        }
    }
    let detail: Vec<_> = pairs.iter().zip(&worst).map(|((name, ..), w)| format!("{name}: {w:.1e}")).collect();
    report("A3", "reduction identities", worst.iter().all(|&w| w < 1e-12), detail.join(", "));
}

/// Binary instance whose predictions miss every pixel by exactly `err`.
fn uniform_error_instance(rng: &mut Rng) -> (ScalarField, LabelField) {
    let h = rng.int_in(8, 16);
    let w = rng.int_in(8, 16);
    let err = rng.real_in(0.2, 0.5);
    let labels: Vec<u32> = (0..h * w).map(|_| rng.int_in(0, 1) as u32).collect();
    let fg: Vec<f64> = labels.iter().map(|&y| if y == 1 { 1.0 - err } else { err }).collect();
    let probs = fg.iter().map(|p| 1.0 - p).chain(fg.iter().copied()).collect();
    (ScalarField::new(vec![2, h, w], probs).unwrap(), LabelField::new(vec![h, w], labels).unwrap())
}

#[test]
fn a04_constant_modulation_is_invisible() {
    let mut rng = Rng::new(404);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (p, l) = uniform_error_instance(&mut rng);
        let dice = LossSpec::dice().evaluate(&p, &l).unwrap().value;
        for gamma in [0.5, 1.0, 2.0, 5.0] {
            let pm = LossSpec::pm_dice(gamma).evaluate(&p, &l).unwrap().value;
            worst = worst.max((pm - dice).abs());
        }
    }
    report(
        "A4",
        "constant-modulation invariance",
        worst <= 1e-5,
        format!("50 binary instances, 64..256 pixels, error in [0.2, 0.5]: max |pm - dice| {worst:.2e}"),
    );
}

/// Direct evaluation of the class-averaged modulated Dice loss on a binary
/// field, written out from the definition.
fn direct_pm_dice(fg_y: &[f64], fg_p: &[f64], gamma: f64) -> f64 {
    let eps = 1e-6;
    let mut total = 0.0;
    for class in 0..2 {
        let (y, p): (Vec<f64>, Vec<f64>) = if class == 1 {
            (fg_y.to_vec(), fg_p.to_vec())
        } else {
            (fg_y.iter().map(|v| 1.0 - v).collect(), fg_p.iter().map(|v| 1.0 - v).collect())
        };
        let m: Vec<f64> = y.iter().zip(&p).map(|(a, b)| if gamma == 0.0 { 1.0 } else { (a - b).abs().powf(gamma) }).collect();
        let num: f64 = (0..y.len()).map(|i| 2.0 * m[i] * y[i] * p[i]).sum();
        let den: f64 = (0..y.len()).map(|i| m[i] * (y[i] * y[i] + p[i] * p[i])).sum();
        total += (num + eps) / (den + eps);
    }
    1.0 - total / 2.0
}

#[test]
fn a05_worked_example_values() {
    let (_, probs, labels) = detach_witness();
    let (y, p) = ([1.0, 1.0, 0.0, 0.0], [0.9, 0.6, 0.1, 0.4]);
    let oracle_dice = direct_pm_dice(&y, &p, 0.0);
    let oracle_pm = direct_pm_dice(&y, &p, 1.0);
    let dice = LossSpec::dice().evaluate(&probs, &labels).unwrap().value;
    let pm = LossSpec::pm_dice(1.0).evaluate(&probs, &labels).unwrap().value;
    let ok = (oracle_dice - 0.101796).abs() <= 1e-6
        && (oracle_pm - 0.164557).abs() <= 1e-6
        && (dice - oracle_dice).abs() < 1e-12
        && (pm - oracle_pm).abs() < 1e-12;
    report(
        "A5",
        "worked-example values",
        ok,
        format!("dice {dice:.6} (oracle {oracle_dice:.9}), pm_dice(1) {pm:.6} (oracle {oracle_pm:.9})"),
    );
}

fn random_mask(rng: &mut Rng, dims: &[usize], density: f64) -> Mask {
    let n = dims.iter().product();
    Mask::new(dims.to_vec(), (0..n).map(|_| rng.next_f64() < density).collect()).unwrap()
}

#[test]
fn a06_nsd_matches_brute_force() {
    let mut rng = Rng::new(606);
    let mut mismatches = 0;
    let mut comparisons = 0;
    for _ in 0..200 {
        let dims = [rng.int_in(1, 16), rng.int_in(1, 16)];
        let (da, db) = (rng.next_f64(), rng.next_f64());
        let (a, b) = (random_mask(&mut rng, &dims, da), random_mask(&mut rng, &dims, db));
        for tau in [0.0, 1.0, 2.0, 3.0] {
            comparisons += 1;
            if nsd(&a, &b, tau).unwrap() != brute_nsd(&a, &b, tau).unwrap() {
                mismatches += 1;
            }
        }
    }
    let mut rng = Rng::new(607);
    let a = random_mask(&mut rng, &[12, 9], 0.4);
    let empty = Mask::empty(vec![12, 9]);
    let identical = nsd(&a, &a, 0.0).unwrap() == 1.0;
    let one_empty = nsd(&a, &empty, 3.0).unwrap() == 0.0 && nsd(&empty, &a, 3.0).unwrap() == 0.0;
    report(
        "A6",
        "NSD oracle equivalence",
        mismatches == 0 && identical && one_empty,
        format!("{mismatches} mismatches in {comparisons} comparisons; identical = 1: {identical}; one empty = 0: {one_empty}"),
    );
}

#[test]
fn a07_hard_predictions_agree_with_confusion_dice() {
    let mut rng = Rng::new(707);
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for _ in 0..50 {
        let c = rng.int_in(2, 4);
        let dims = vec![rng.int_in(2, 12), rng.int_in(2, 12)];
        let n = dims[0] * dims[1];
        let truth = LabelField::new(dims.clone(), (0..n).map(|_| rng.int_in(0, c - 1) as u32).collect()).unwrap();
        let pred = LabelField::new(dims, (0..n).map(|_| rng.int_in(0, c - 1) as u32).collect()).unwrap();
        let scores = dice_class_scores(&one_hot(&pred, c).unwrap(), &truth, 1e-6).unwrap();
        let metrics = overlap_metrics(&confusion(&pred, &truth, c).unwrap());
        for (s, m) in scores.iter().zip(&metrics) {
            if let Some(s) = s {
                worst = worst.max((s - m.dice).abs());
                compared += 1;
            }
        }
    }
    report(
        "A7",
        "hard-prediction consistency",
        worst <= 1e-6 && compared > 0,
        format!("{compared} class scores, max |soft - confusion| {worst:.2e}"),
    );
}

#[test]
fn a08_loss_grows_with_focusing() {
    let (probs, labels) = big_easy_small_missed();
    let values: Vec<f64> = [0.0, 0.5, 1.0, 2.0, 5.0]
        .iter()
        .map(|&g| LossSpec::pm_dice(g).evaluate(&probs, &labels).unwrap().value)
        .collect();
    let increasing = values.windows(2).all(|w| w[1] > w[0]);
    let shown: Vec<_> = values.iter().map(|v| format!("{v:.6}")).collect();
    report("A8", "monotone focusing", increasing, format!("gamma 0, 0.5, 1, 2, 5 -> {}", shown.join(", ")));
}

/// Spearman correlation with average ranks for ties.
fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

#[test]
fn spearman_oracle() {
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), 1.0);
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), 0.0);
}

#[test]
fn a09_precision_rises_and_recall_falls_with_gamma() {
    let start = Instant::now();
    let gammas = [0.5, 1.0, 2.0, 5.0];
    let seeds = [1, 2, 3, 4, 5];
    let base = TrainConfig::new(LossSpec::dice(), SceneConfig::severe());
    let pairs: Vec<_> = gammas.iter().map(|&g| (g, g)).collect();
    let rows = gamma_sweep(&base, &pairs, &seeds).unwrap();
    let mean = |g: f64, f: fn(&pmdice::trainer::SweepRow) -> f64| {
        let sel: Vec<_> = rows.iter().filter(|r| r.gamma_fg == g).collect();
        sel.iter().map(|r| f(r)).sum::<f64>() / sel.len() as f64
    };
    let prec: Vec<f64> = gammas.iter().map(|&g| mean(g, |r| r.mprec)).collect();
    let rec: Vec<f64> = gammas.iter().map(|&g| mean(g, |r| r.mrec)).collect();
    let (rho_p, rho_r) = (spearman(&gammas, &prec), spearman(&gammas, &rec));
    let elapsed = start.elapsed();
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ");
    report(
        "A9",
        "precision up / recall down with gamma",
        rho_p > 0.0 && rho_r < 0.0 && elapsed < Duration::from_secs(600),
        format!(
            "severe preset, {} epochs, seeds 1-5; mPrec [{}] rho {rho_p:+.2}; mRec [{}] rho {rho_r:+.2}; {elapsed:.1?}",
            base.epochs,
            fmt(&prec),
            fmt(&rec)
        ),
    );
}

#[test]
fn a10_pm_dice_helps_the_small_object() {
    let start = Instant::now();
    let mut wins = 0;
    let (mut sum_dice, mut sum_pm) = (0.0, 0.0);
    let mut per_seed = Vec::new();
    for seed in 1..=5u64 {
        let scenes = SceneConfig { small_contrast: 0.3, seed, ..SceneConfig::moderate() };
        let n = scenes.n_scenes;
        let train_set = samples(&scenes, 0..n).unwrap();
        let eval_set = samples(&scenes, n..n + 8).unwrap();
        let score = |loss: LossSpec| {
            let cfg = TrainConfig { final_eval_only: true, ..TrainConfig::new(loss, scenes.clone()) };
            let (model, _) = train_on(&cfg, &train_set, &eval_set).unwrap();
            small_object_dice(&model, &eval_set).unwrap()
        };
        let (d, p) = (score(LossSpec::dice()), score(LossSpec::pm_dice(1.0)));
        wins += usize::from(p > d);
        sum_dice += d;
        sum_pm += p;
        per_seed.push(format!("{d:.3}->{p:.3}"));
    }
    let elapsed = start.elapsed();
    report(
        "A10",
        "small-object benefit",
        sum_pm >= sum_dice && wins >= 4 && elapsed < Duration::from_secs(300),
        format!(
            "moderate preset, small contrast 0.3; mean small-object Dice {:.4} (dice) vs {:.4} (pm_dice 1), pm better in {wins}/5 [{}]; {elapsed:.1?}",
            sum_dice / 5.0,
            sum_pm / 5.0,
            per_seed.join(" ")
        ),
    );
}

#[test]
fn a11_weight_gradients_match_finite_differences() {
    let mut worst: f64 = 0.0;
    let mut rng = Rng::new(1111);
    for (multiclass, classes) in [(false, 2), (true, 3)] {
        let cfg = SceneConfig { height: 20, width: 20, big_radius: (4.0, 5.0), small_radius: (2.0, 2.0), multiclass, ..SceneConfig::moderate() };
        let scene = gen_scene(&cfg, 0).unwrap();
        let features = extract_features(&scene.image).unwrap();
        for loss in [LossSpec::dice(), LossSpec::pm_dice(1.0), LossSpec::pm_dice(2.0)] {
            for _ in 0..3 {
                let w: Vec<f64> = (0..6 * classes).map(|_| 0.7 * rng.normal()).collect();
                let model = Model::from_weights(6, classes, w).unwrap();
                let (_, grad) = loss_and_grad(&model, &loss, &features, &scene.labels).unwrap();
                let probs = model.predict(&features).unwrap();
                let frozen = loss.freeze(&probs, &scene.labels).unwrap();
                let value = |m: &Model| {
                    let p = softmax(&m.logits(&features).unwrap()).unwrap();
                    loss.evaluate_frozen(&p, &scene.labels, &frozen).unwrap().value
                };
                let scale = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
                for j in 0..grad.len() {
                    let h = 1e-6;
                    let (mut hi, mut lo) = (model.clone(), model.clone());
                    hi.weights_mut()[j] += h;
                    lo.weights_mut()[j] -= h;
                    let fd = (value(&hi) - value(&lo)) / (2.0 * h);
                    let rel = (grad[j] - fd).abs() / grad[j].abs().max(fd.abs()).max(1e-3 * scale).max(1e-8);
                    worst = worst.max(rel);
                }
            }
        }
    }
    report(
        "A11",
        "end-to-end weight gradient",
        worst < 1e-4,
        format!("dice, pm_dice(1), pm_dice(2) on 2- and 3-class scenes: worst rel err {worst:.3e}"),
    );
}

fn random_tensor(rng: &mut Rng) -> Tensor {
    let rank = rng.int_in(2, 4);
    let dims: Vec<usize> = (0..rank).map(|_| rng.int_in(1, 6)).collect();
    let n = dims.iter().product();
    if rng.next_f64() < 0.8 {
        // arbitrary bit patterns, NaNs and infinities included
        let data = (0..n).map(|_| f32::from_bits((rng.next_f64() * 4294967296.0) as u32)).collect();
        Tensor::F32 { dims, data }
    } else {
        Tensor::U8 { dims, data: (0..n).map(|_| rng.int_in(0, 255) as u8).collect() }
    }
}

fn same_bits(a: &Tensor, b: &Tensor) -> bool {
    match (a, b) {
        (Tensor::F32 { dims: da, data: xa }, Tensor::F32 { dims: db, data: xb }) => {
            da == db && xa.len() == xb.len() && xa.iter().zip(xb).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        _ => a == b,
    }
}

fn format_field(bytes: &[u8]) -> Option<(&'static str, String)> {
    match tnsr::decode(bytes) {
        Err(Error::Format { field, reason }) => Some((field, reason)),
        _ => None,
    }
}

#[test]
fn a12_tnsr_round_trips_and_rejects_malformed_headers() {
    let mut rng = Rng::new(1212);
    let mut round_trips = 0;
    for _ in 0..100 {
        let t = random_tensor(&mut rng);
        let bytes = tnsr::encode(&t).unwrap();
        let back = tnsr::decode(&bytes).unwrap();
        if same_bits(&t, &back) && tnsr::encode(&back).unwrap() == bytes {
            round_trips += 1;
        }
    }
    let good = tnsr::encode(&Tensor::F32 { dims: vec![2, 2], data: vec![0.5; 4] }).unwrap();
    let mutate = |i: usize, v: u8| {
        let mut b = good.clone();
        b[i] = v;
        b
    };
    let cases: [(&str, Vec<u8>, &str); 5] = [
        ("magic", mutate(0, b'X'), "bad magic"),
        ("version", mutate(4, 9), "bad version"),
        ("dtype", mutate(5, 7), "bad dtype"),
        ("rank", mutate(6, 9), "bad rank"),
        ("payload", good[..good.len() - 3].to_vec(), "truncated payload"),
    ];
    let named: Vec<_> = cases
        .iter()
        .map(|(field, bytes, phrase)| {
            format_field(bytes).is_some_and(|(f, reason)| f == *field && reason.contains(phrase))
        })
        .collect();
    let length_ok = good.len() == 8 + 2 * 4 + 16;
    report(
        "A12",
        "TNSR format round-trips",
        round_trips == 100 && named.iter().all(|&b| b) && length_ok,
        format!("{round_trips}/100 bit-identical round trips; named header errors {named:?}; 2x2 f32 payload 16 bytes: {length_ok}"),
    );
}
