//! End-to-end acceptance criteria. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
//!
//! `KID_ACCEPTANCE_ONLY=1,3,7` restricts the run to the listed criteria.

use std::time::Instant;

use kid_core::eval::{auc, layerwise_activation_report};
use kid_core::graph::Graph;
use kid_core::localization::{coarse_patch_labels, update_node, UpdateVars};
use kid_core::params::ParamId;
use kid_core::pretrain::pretrained_model;
use kid_core::regularization::{activation_node, contrast_node, suppression_node};
use kid_core::synthesis::{self_blend_retrying, toy_face_dataset, ImageSample};
use kid_core::training::{convergence_report, pair_loss, score_samples, Convergence, TrainOutcome, TrainingData};
use kid_core::workflow::test_samples;
use kid_core::{
    AttentionMode, BackboneConfig, ConfigFile, Image, Mask, Mat, Model, RegularizerConfig, TrainMode, Trainer,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<(bool, String), Box<dyn std::error::Error>>;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn random_image(rng: &mut ChaCha8Rng, size: usize) -> Image {
    Image::from_fn(size, size, |_, _| [rng.gen(), rng.gen(), rng.gen()])
}

fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

fn set_random_injection(model: &mut Model, rng: &mut ChaCha8Rng, scale: f64) {
    let d = model.config().embed_dim;
    for l in 0..model.config().num_layers {
        let (_, id) = model.query_param_ids(l);
        *model.params_mut().get_mut(id) = random_mat(rng, d, d, scale);
    }
}

fn c1_zero_injection_identity() -> Check {
    let mut worst = 0.0f64;
    for draw in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + draw);
        let model = Model::new(BackboneConfig::toy(), draw)?;
        let img = random_image(&mut rng, 32);
        let base = model.forward(&img, AttentionMode::Baseline)?;
        let inj = model.forward(&img, AttentionMode::Injected)?;
        for k in 0..2 {
            worst = worst.max((base.logits[k] - inj.logits[k]).abs());
        }
    }
    Ok((worst <= 1e-6, format!("max |Δlogit| = {worst:.3e} over 50 draws (tol 1e-6)")))
}

fn symmetry_batch(seed: u64) -> Vec<ImageSample> {
    let reals = toy_face_dataset(2, 32, 500 + seed);
    reals
        .iter()
        .enumerate()
        .flat_map(|(i, r)| {
            let (fake, _) = self_blend_retrying(r, seed * 31 + i as u64, 10_000 + i).expect("toy faces blend");
            [r.clone(), fake]
        })
        .collect()
}

fn c2_gradient_symmetry() -> Check {
    let mut worst_sym = 0.0f64;
    let mut least_broken = f64::INFINITY;
    for b in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + b);
        let mut model = Model::new(BackboneConfig::toy(), 100 + b)?;
        if b % 2 == 1 {
            set_random_injection(&mut model, &mut rng, 0.1);
        }
        let samples = symmetry_batch(b);
        let plain: Vec<(&Image, usize)> = samples.iter().map(|s| (&s.pixels, s.label.class_index())).collect();
        let sym = kid_core::attention::gradient_symmetry_probe(&model, &plain, false)?;
        if sym.grad_scale.iter().any(|&g| g == 0.0) {
            return Ok((false, format!("batch {b}: vanishing W_Q gradient makes the comparison vacuous")));
        }
        worst_sym = worst_sym.max(sym.max_deviation());

        let labels: Vec<_> = samples.iter().map(|s| coarse_patch_labels(&s.outer_face_mask, 8, 0.2, 0.8)).collect::<Result<_, _>>()?;
        let with_loc: Vec<_> = samples.iter().zip(&labels).map(|(s, l)| (&s.pixels, s.label.class_index(), l)).collect();
        let broken = kid_core::attention::gradient_deviation(&model, &with_loc, true, 1.0)?;
        least_broken = broken.per_layer.iter().copied().fold(least_broken, f64::min);
    }
    let pass = worst_sym <= 1e-9 && least_broken > 1e-6;
    Ok((
        pass,
        format!("CE-only max deviation {worst_sym:.3e} (tol 1e-9); with localization min per-layer deviation {least_broken:.3e} (> 1e-6)"),
    ))
}

/// Relative error `‖a − n‖ / max(‖a‖, ‖n‖)` between analytic and central-difference gradients.
fn gradcheck(inputs: &[Mat], f: &dyn Fn(&mut Graph, &[kid_core::graph::Var]) -> kid_core::graph::Var) -> f64 {
    let eval = |vals: &[Mat]| {
        let mut g = Graph::new();
        let vars: Vec<_> = vals.iter().enumerate().map(|(k, m)| g.param(ParamId(k), m.clone())).collect();
        let out = f(&mut g, &vars);
        (g.value(out).item(), g, out)
    };
    let (_, g, out) = eval(inputs);
    let grads = g.backward(out);
    let h = 1e-6;
    let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..inputs.len() {
        let analytic = grads.param(ParamId(k)).cloned().unwrap_or_else(|| Mat::zeros(inputs[k].rows(), inputs[k].cols()));
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].as_mut_slice()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].as_mut_slice()[i] -= h;
            let numeric = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
            let a = analytic.as_slice()[i];
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
        }
    }
    diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-300)
}

/// Distance from the nearest hinge kink must exceed this for a point to count.
const KINK_MARGIN: f64 = 1e-3;

fn c3_finite_differences() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3000);
    let n = 16;
    let layers = 4;
    let reg = RegularizerConfig::for_layers(layers, 1.2, 0.1);
    let mut worst = [0.0f64; 4];
    let mut tries = [0usize; 4];

    // Dice on sigmoid scores with soft labels.
    for _ in 0..100 {
        let logits = random_mat(&mut rng, n, 1, 3.0);
        let labels = Mat::from_fn(n, 1, |_, _| if rng.gen_bool(0.3) { rng.gen() } else { f64::from(rng.gen_bool(0.5)) });
        let err = gradcheck(&[logits], &|g, v| {
            let p = g.sigmoid(v[0]);
            g.dice(p, labels.clone(), 1.0)
        });
        worst[0] = worst[0].max(err);
    }

    // Suppression and contrast through the activation chain: per-head correlation
    // blocks → A_l → hinge.
    let heads = 2;
    let activations = |g: &mut Graph, v: &[kid_core::graph::Var], offset: usize| -> Vec<kid_core::graph::Var> {
        (0..layers).map(|l| activation_node(g, &v[offset + l * heads..offset + (l + 1) * heads])).collect()
    };
    let mean_abs_layers = |m: &[Mat]| -> Vec<f64> {
        (0..layers)
            .map(|l| {
                let hs = &m[l * heads..(l + 1) * heads];
                hs.iter().map(|h| h.as_slice().iter().map(|x| x.abs()).sum::<f64>() / h.len() as f64).sum::<f64>() / heads as f64
            })
            .collect()
    };
    let mut accepted = 0;
    while accepted < 100 {
        tries[1] += 1;
        let scale = rng.gen_range(0.5..4.0);
        let corr: Vec<Mat> = (0..layers * heads).map(|_| random_mat(&mut rng, n + 1, n + 1, scale)).collect();
        let a = mean_abs_layers(&corr);
        let shallow = &a[..=reg.shallow_cutoff];
        let near_kink = shallow.iter().any(|x| (x - reg.beta).abs() < KINK_MARGIN);
        let inactive = shallow.iter().all(|&x| x < reg.beta);
        let near_zero = corr.iter().any(|m| m.as_slice().iter().any(|x| x.abs() < 1e-5));
        if near_kink || inactive || near_zero {
            continue;
        }
        let err = gradcheck(&corr, &|g, v| {
            let acts = activations(g, v, 0);
            suppression_node(g, &[&acts[..]], &reg)
        });
        worst[1] = worst[1].max(err);
        accepted += 1;
    }
    accepted = 0;
    while accepted < 100 {
        tries[2] += 1;
        let real: Vec<Mat> = (0..layers * heads)
            .map(|_| {
                let scale = rng.gen_range(0.05..0.5);
                random_mat(&mut rng, n + 1, n + 1, scale)
            })
            .collect();
        let fake: Vec<Mat> = (0..layers * heads)
            .map(|_| {
                let scale = rng.gen_range(0.05..0.5);
                random_mat(&mut rng, n + 1, n + 1, scale)
            })
            .collect();
        let (ar, af) = (mean_abs_layers(&real), mean_abs_layers(&fake));
        let hinge: Vec<f64> = reg.deep_layers.iter().map(|&l| af[l] - ar[l] + reg.mu).collect();
        let near_kink = hinge.iter().any(|h| h.abs() < KINK_MARGIN);
        let inactive = hinge.iter().all(|&h| h < 0.0);
        let near_zero = real.iter().chain(&fake).any(|m| m.as_slice().iter().any(|x| x.abs() < 1e-5));
        if near_kink || inactive || near_zero {
            continue;
        }
        let all: Vec<Mat> = real.into_iter().chain(fake).collect();
        let err = gradcheck(&all, &|g, v| {
            let r = activations(g, v, 0);
            let f = activations(g, v, layers * heads);
            contrast_node(g, &[(&r[..], &f[..])], &reg)
        });
        worst[2] = worst[2].max(err);
        accepted += 1;
    }

    // Localization update, reduced to a scalar by random projections r1ᵀ·L'·r2.
    let d = 8;
    for _ in 0..100 {
        let features = random_mat(&mut rng, n, d, 1.0);
        let corr: Vec<Mat> = (0..heads).map(|_| random_mat(&mut rng, n + 1, n + 1, 2.0)).collect();
        let pe = random_mat(&mut rng, n, d, 0.5);
        let gain = Mat::from_fn(1, d, |_, _| rng.gen_range(0.5..1.5));
        let bias = random_mat(&mut rng, 1, d, 0.2);
        let w = random_mat(&mut rng, d, d, 0.5);
        let r1 = random_mat(&mut rng, 1, n, 1.0);
        let r2 = random_mat(&mut rng, d, 1, 1.0);
        let mut inputs = vec![features, pe, gain, bias, w];
        inputs.extend(corr);
        let err = gradcheck(&inputs, &|g, v| {
            let p = UpdateVars { norm_gain: v[2], norm_bias: v[3], w_kbar: v[4] };
            let out = update_node(g, v[0], &v[5..], v[1], &p);
            let left = g.constant(r1.clone());
            let right = g.constant(r2.clone());
            let proj = g.matmul(left, out);
            g.matmul(proj, right)
        });
        worst[3] = worst[3].max(err);
    }
    let pass = worst.iter().all(|&e| e <= 1e-4);
    Ok((
        pass,
        format!(
            "max relative error: dice {:.2e}, suppression {:.2e} ({} draws for 100 points), contrast {:.2e} ({} draws), update {:.2e} (tol 1e-4)",
            worst[0], worst[1], tries[1], worst[2], tries[2], worst[3]
        ),
    ))
}

/// Per-pixel brute-force count of the outer-face fraction, thresholded.
fn label_oracle(mask: &Mask, p: usize, g0: f64, g1: f64) -> Vec<f64> {
    let side = mask.width() / p;
    let mut out = Vec::new();
    for py in 0..mask.height() / p {
        for px in 0..side {
            let mut count = 0usize;
            for y in py * p..(py + 1) * p {
                for x in px * p..(px + 1) * p {
                    if mask.get(x, y) {
                        count += 1;
                    }
                }
            }
            let frac = count as f64 / (p * p) as f64;
            out.push(if frac < g0 {
                0.0
            } else if frac > g1 {
                1.0
            } else {
                frac
            });
        }
    }
    out
}

fn random_mask(rng: &mut ChaCha8Rng, size: usize) -> Mask {
    match rng.gen_range(0..3) {
        0 => {
            let density: f64 = rng.gen();
            Mask::from_fn(size, size, |_, _| rng.gen_bool(density))
        }
        1 => {
            let (cx, cy, r) = (rng.gen_range(0.0..size as f64), rng.gen_range(0.0..size as f64), rng.gen_range(1.0..size as f64));
            Mask::from_fn(size, size, |x, y| (x as f64 - cx).hypot(y as f64 - cy) > r)
        }
        _ => {
            let (x0, y0) = (rng.gen_range(0..size), rng.gen_range(0..size));
            let (x1, y1) = (rng.gen_range(x0..=size), rng.gen_range(y0..=size));
            Mask::from_fn(size, size, |x, y| !(x0..x1).contains(&x) || !(y0..y1).contains(&y))
        }
    }
}

fn c4_label_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4000);
    let mut mismatches = 0;
    for i in 0..1100 {
        let p = [4usize, 8, 16][rng.gen_range(0..3)];
        let size = p * rng.gen_range(1..=8);
        let mask = random_mask(&mut rng, size);
        let (g0, g1) = if i < 1000 {
            (0.2, 0.8)
        } else {
            let a: f64 = rng.gen();
            let b: f64 = rng.gen();
            (a.min(b), a.max(b).max(a.min(b) + 1e-9).min(1.0))
        };
        let labels = coarse_patch_labels(&mask, p, g0, g1)?;
        if labels.labels != label_oracle(&mask, p, g0, g1) {
            mismatches += 1;
        }
    }
    Ok((mismatches == 0, format!("{mismatches} mismatches over 1000 fixed-threshold masks and 100 random (γ0, γ1) pairs")))
}

fn c5_closed_form_regularizers() -> Check {
    let mut details = Vec::new();
    let mut pass = true;
    for layers in [4usize, 6] {
        let file = ConfigFile { num_layers: layers, ..ConfigFile::toy() };
        let cfg = file.into_training()?;
        let model = Model::new(cfg.backbone.clone(), 5)?;
        let real = toy_face_dataset(1, 32, 50).remove(0);
        let (fake, _) = self_blend_retrying(&real, 1, 99)?;
        let loss = pair_loss(&model, &cfg, &real, &fake)?;
        let expected = cfg.regularizer.mu * cfg.regularizer.deep_layers.len() as f64;
        pass &= loss.suppression == 0.0 && loss.contrast == expected;
        details.push(format!(
            "{layers} layers: L_S = {}, L_D = {} (expected {expected}, {} deep layers)",
            loss.suppression,
            loss.contrast,
            cfg.regularizer.deep_layers.len()
        ));
    }
    Ok((pass, details.join("; ")))
}

fn mann_whitney(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn c7_auc_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7000);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let n = rng.gen_range(2..60);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let levels = rng.gen_range(1..12);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
        worst = worst.max((auc(&scores, &labels)? - mann_whitney(&scores, &labels)).abs());
    }
    Ok((worst <= 1e-9, format!("max |rank AUC − all-pairs| = {worst:.3e} over 10k tied score sets (tol 1e-9)")))
}

/// One finished toy training run plus what the criteria need from it.
struct Run {
    initial: Model,
    outcome: TrainOutcome,
    test_auc: f64,
    seconds: f64,
}

fn toy_run(file: &ConfigFile, backbone: &Model, pretrain_s: f64) -> Result<Run, Box<dyn std::error::Error>> {
    let start = Instant::now();
    let cfg = file.into_training()?;
    let reals = toy_face_dataset(file.dataset_size, file.image_size, file.seed);
    let data = TrainingData::split(reals, &cfg)?;
    let trainer = Trainer::with_model(cfg.clone(), backbone.clone())?;
    let initial = trainer.model.clone();
    let outcome = trainer.run(&data, |_| {})?;
    let seconds = pretrain_s + start.elapsed().as_secs_f64();
    let test = test_samples(file)?;
    let refs: Vec<&ImageSample> = test.iter().collect();
    let scores = score_samples(&outcome.model, cfg.mode, &refs)?;
    let labels: Vec<u8> = test.iter().map(|s| s.label as u8).collect();
    let test_auc = auc(&scores, &labels)?;
    Ok(Run { initial, outcome, test_auc, seconds })
}

fn seeded(file: &ConfigFile, seed: u64) -> ConfigFile {
    ConfigFile { seed, ..file.clone() }
}

struct ToyRuns {
    injected: Vec<Run>,
    ablation: Vec<Run>,
    full: Vec<Run>,
}

fn toy_runs(need_ablation: bool, need_full: bool) -> Result<ToyRuns, Box<dyn std::error::Error>> {
    let base = ConfigFile::toy();
    let mut runs = ToyRuns { injected: Vec::new(), ablation: Vec::new(), full: Vec::new() };
    for seed in SEEDS {
        let file = seeded(&base, seed);
        let start = Instant::now();
        let pre = file.pretraining().ok_or("toy configuration must pretrain its backbone")?;
        let (backbone, history) = pretrained_model(&file.backbone(), &pre)?;
        let pretrain_s = start.elapsed().as_secs_f64();
        eprintln!("  pretrained seed {seed}: attribute loss {:.3} → {:.3}, {pretrain_s:.0}s", history[0], history[history.len() - 1]);
        let r = toy_run(&file, &backbone, pretrain_s)?;
        eprintln!("  injected seed {seed}: AUC {:.4}, {} epochs, {:.0}s", r.test_auc, r.outcome.epochs, r.seconds);
        runs.injected.push(r);
        if need_ablation {
            let file = ConfigFile { localization: false, regularizers: false, ..seeded(&base, seed) };
            let r = toy_run(&file, &backbone, pretrain_s)?;
            eprintln!("  ablation seed {seed}: AUC {:.4}, {:.0}s", r.test_auc, r.seconds);
            runs.ablation.push(r);
        }
        if need_full {
            let file = ConfigFile { mode: TrainMode::FullFinetune, ..seeded(&base, seed) };
            let r = toy_run(&file, &backbone, pretrain_s)?;
            eprintln!("  full fine-tune seed {seed}: AUC {:.4}, {:.0}s", r.test_auc, r.seconds);
            runs.full.push(r);
        }
    }
    Ok(runs)
}

fn c6_freezing(runs: &ToyRuns) -> Check {
    let mut changed = Vec::new();
    let mut frozen = 0;
    for (seed, run) in SEEDS.iter().zip(&runs.injected) {
        let partition = run.initial.parameter_partition(TrainMode::Injected)?;
        for (id, name, before) in run.initial.params().iter() {
            if partition.is_trainable(name) {
                continue;
            }
            frozen += 1;
            let after = run.outcome.model.params().get(id);
            if !before.as_slice().iter().zip(after.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()) {
                changed.push(format!("seed {seed}: {name}"));
            }
        }
    }
    Ok((changed.is_empty(), format!("{frozen} frozen tensors checked bit-for-bit across {} runs; changed: {changed:?}", SEEDS.len())))
}

/// Required held-out AUC per seed.
const AUC_TARGET: f64 = 0.90;
/// Wall-clock budget of one toy training run.
const RUN_BUDGET_S: f64 = 15.0 * 60.0;

fn c8_toy_end_to_end(runs: &ToyRuns) -> Check {
    let aucs: Vec<f64> = runs.injected.iter().map(|r| r.test_auc).collect();
    let ablated: Vec<f64> = runs.ablation.iter().map(|r| r.test_auc).collect();
    let hits = aucs.iter().filter(|&&a| a >= AUC_TARGET).count();
    let not_better = ablated.iter().zip(&aucs).filter(|(b, a)| b <= a).count();
    let slowest = runs.injected.iter().map(|r| r.seconds).fold(0.0, f64::max);
    let pass = hits >= 4 && not_better * 2 > SEEDS.len() && slowest <= RUN_BUDGET_S;
    Ok((
        pass,
        format!(
            "AUC per seed {:?} ({hits}/5 ≥ {AUC_TARGET}); ablation {:?} (≤ full on {not_better}/5); slowest run {slowest:.0}s",
            aucs.iter().map(|a| format!("{a:.4}")).collect::<Vec<_>>(),
            ablated.iter().map(|a| format!("{a:.4}")).collect::<Vec<_>>()
        ),
    ))
}

/// Training-loss level both regimes are timed to.
const CONVERGENCE_THRESHOLD: f64 = kid_core::training::CONVERGENCE_LOSS;

fn c9_convergence(runs: &ToyRuns) -> Check {
    let mut wins = 0;
    let mut parts = Vec::new();
    for (seed, (inj, full)) in SEEDS.iter().zip(runs.injected.iter().zip(&runs.full)) {
        match convergence_report(&inj.outcome.log, &full.outcome.log, CONVERGENCE_THRESHOLD) {
            Convergence::Reached { steps_injected, steps_full, ratio } => {
                wins += usize::from(steps_injected <= steps_full);
                parts.push(format!("s{seed}: {steps_injected} vs {steps_full} (×{ratio:.2})"));
            }
            Convergence::Unreachable { injected_reached, full_reached } => {
                wins += usize::from(injected_reached && !full_reached);
                parts.push(format!("s{seed}: reached injected={injected_reached} full={full_reached}"));
            }
        }
    }
    Ok((wins >= 3, format!("loss ≤ {CONVERGENCE_THRESHOLD}: injected no slower on {wins}/5; steps injected vs full: {}", parts.join(", "))))
}

fn c10_activation_trend(runs: &ToyRuns) -> Check {
    let reg = ConfigFile::toy().into_training()?.regularizer;
    let mut majority = 0;
    let mut parts = Vec::new();
    for (seed, run) in SEEDS.iter().zip(&runs.injected) {
        let file = seeded(&ConfigFile::toy(), *seed);
        let samples = test_samples(&file)?;
        let report = layerwise_activation_report(&run.outcome.model, &samples)?;
        let overall = report.overall_mean();
        let shallow: f64 = reg.shallow_layers().map(|l| overall[l]).sum::<f64>() / reg.shallow_layers().count() as f64;
        let deep: f64 = reg.deep_layers.iter().map(|&l| overall[l]).sum::<f64>() / reg.deep_layers.len() as f64;
        let gap: f64 = reg.deep_layers.iter().map(|&l| report.real_mean[l] - report.fake_mean[l]).sum::<f64>()
            / reg.deep_layers.len() as f64;
        majority += usize::from(shallow < deep && gap != 0.0);
        parts.push(format!("s{seed}: shallow {shallow:.3} deep {deep:.3} real−fake {gap:+.3}"));
    }
    Ok((majority * 2 > SEEDS.len(), format!("shallow < deep on {majority}/5; {}", parts.join(", "))))
}

fn main() {
    let only: Option<Vec<usize>> =
        std::env::var("KID_ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |k: usize| only.as_ref().is_none_or(|o| o.contains(&k));
    let mut results: Vec<(usize, &str, Check)> = Vec::new();
    let quick: [(usize, &str, fn() -> Check); 6] = [
        (1, "zero-injection identity", c1_zero_injection_identity),
        (2, "gradient symmetry", c2_gradient_symmetry),
        (3, "finite-difference gradients", c3_finite_differences),
        (4, "coarse label oracle", c4_label_oracle),
        (5, "closed-form regularizers", c5_closed_form_regularizers),
        (7, "AUC oracle", c7_auc_oracle),
    ];
    for (k, name, f) in quick {
        if wanted(k) {
            let start = Instant::now();
            let r = f();
            eprintln!("  criterion {k} took {:.1}s", start.elapsed().as_secs_f64());
            results.push((k, name, r));
        }
    }
    if [6, 8, 9, 10].iter().any(|&k| wanted(k)) {
        match toy_runs(wanted(8), wanted(9)) {
            Ok(runs) => {
                let slow: [(usize, &str, fn(&ToyRuns) -> Check); 4] = [
                    (6, "freezing contract", c6_freezing),
                    (8, "toy end-to-end AUC", c8_toy_end_to_end),
                    (9, "convergence comparison", c9_convergence),
                    (10, "layer-wise activation trend", c10_activation_trend),
                ];
                for (k, name, f) in slow {
                    if wanted(k) {
                        results.push((k, name, f(&runs)));
                    }
                }
            }
            Err(e) => {
                for (k, name) in [(6, "freezing contract"), (8, "toy end-to-end AUC"), (9, "convergence comparison"), (10, "layer-wise activation trend")] {
                    if wanted(k) {
                        results.push((k, name, Err(e.to_string().into())));
                    }
                }
            }
        }
    }
    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (k, name, r) in results {
        let (ok, detail) = match r {
            Ok((ok, detail)) => (ok, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!ok);
        println!("{} criterion {k:>2} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
