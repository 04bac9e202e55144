//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any fails. `ACCEPTANCE_ONLY=1,4` limits the run to
//! the listed criteria.

use std::collections::BTreeSet;
use std::time::Instant;

use bscan_core::cpsynth::{apply_gain, extract_defect_patches, generate_cp_sample, PasteAttemptPolicy};
use bscan_core::dataset::{extract_canvases, generate_phantom_dataset, AnnotatedSample, PhantomConfig};
use bscan_core::detector::{
    evaluate_ap, fit_anchors, train_detector, DetAugment, Detection, Detector, DetectorArch, DetectorTrainConfig,
    EvalConfig, PlateauTracker, PretrainConfig,
};
use bscan_core::experiment::{run_matrix, CellSpec, ExperimentConfig};
use bscan_core::gan::{
    discriminator_loss, generator_loss, image_tensor, lr_schedule, mask_tensor, pairs_from_samples, train_gan,
    DiscriminatorArch, DiscriminatorPair, GanAugment, GanLossWeights, GanPair, GanTrainConfig, Generator,
    GeneratorArch,
};
use bscan_core::nn::loss::scalar;
use bscan_core::{seed, BoundingBox, GrayscalePatch};
use candle_core::{DType, Tensor, Var};
use rand::Rng;

// Tolerances and thresholds.
const GRAD_REL_TOL: f64 = 1e-3;
const FD_STEP: f64 = 1e-6;
const AP_ORACLE_TOL: f64 = 1e-12;
const AP_ORACLE_CASES: usize = 500;
const CP_SAMPLES: usize = 1000;
const GAN_L1_DROP: f64 = 0.80;
const OVERFIT_AP: f64 = 0.9;
const GAN_MIX_SLACK: f64 = 0.005;

type Outcome = Result<String, String>;

fn check(cond: bool, ok: impl Into<String>, bad: impl Into<String>) -> Outcome {
    if cond {
        Ok(ok.into())
    } else {
        Err(bad.into())
    }
}

fn phantoms(count: usize, defects: (usize, usize), seed_value: u64) -> Vec<AnnotatedSample> {
    generate_phantom_dataset(
        &PhantomConfig {
            count,
            defects_min: defects.0,
            defects_max: defects.1,
            ..Default::default()
        },
        seed_value,
    )
    .expect("phantoms")
}

// ------------------------------------------------------------ 1: gradients

fn values(v: &Var) -> Vec<f64> {
    v.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap()
}

fn set_entry(v: &Var, base: &[f64], k: usize, x: f64) {
    let mut data = base.to_vec();
    data[k] = x;
    v.set(&Tensor::from_vec(data, v.shape(), v.device()).unwrap()).unwrap();
}

/// Worst relative error between backprop and central differences over a
/// spread of entries of every variable.
fn grad_check(vars: &[Var], loss: &dyn Fn() -> Tensor) -> (f64, usize) {
    let grads = loss().backward().unwrap();
    let (mut num, mut ana) = (Vec::new(), Vec::new());
    for v in vars {
        let base = values(v);
        let g = grads
            .get(v.as_tensor())
            .map(|t| t.flatten_all().unwrap().to_vec1::<f64>().unwrap())
            .unwrap_or_else(|| vec![0.0; base.len()]);
        let picks: BTreeSet<usize> = [0, base.len() / 3, base.len() / 2, base.len() - 1]
            .into_iter()
            .collect();
        for k in picks {
            set_entry(v, &base, k, base[k] + FD_STEP);
            let up = scalar(&loss()).unwrap();
            set_entry(v, &base, k, base[k] - FD_STEP);
            let down = scalar(&loss()).unwrap();
            set_entry(v, &base, k, base[k]);
            num.push((up - down) / (2.0 * FD_STEP));
            ana.push(g[k]);
        }
    }
    let diff: f64 = num.iter().zip(&ana).map(|(n, a)| (n - a).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = num.iter().map(|n| n * n).sum::<f64>().sqrt().max(1e-12);
    (diff / scale, num.len())
}

fn criterion_1() -> Outcome {
    let size = 16;
    let dev = candle_core::Device::Cpu;
    let gen = Generator::new(
        GeneratorArch {
            image_size: size,
            base_width: 2,
            depth: 2,
            max_width: 4,
        },
        DType::F64,
        11,
    )
    .map_err(|e| e.to_string())?;
    let disc = DiscriminatorPair::new(
        DiscriminatorArch {
            base_width: 2,
            n_layers: 2,
            max_width: 4,
            concat_mask: true,
        },
        DType::F64,
        12,
    )
    .map_err(|e| e.to_string())?;
    let det = Detector::new(
        DetectorArch {
            input_channels: 3,
            stem: 4,
            stages: vec![(4, 0), (4, 0)],
            num_scales: 1,
            anchors_per_scale: 1,
            num_classes: 1,
        },
        vec![(4.0, 3.0)],
        size,
        DType::F64,
        13,
    )
    .map_err(|e| e.to_string())?;
    det.freeze_all();

    let data = phantoms(2, (1, 2), 5);
    let shrink = |s: &AnnotatedSample| GanPair {
        mask: bscan_core::maskgen::PositionMask::from_boxes(
            size,
            size,
            vec![BoundingBox::new(2, 3, 6, 4), BoundingBox::new(9, 10, 4, 3)],
        ),
        image: s.image.resize_bilinear(size, size),
    };
    let pairs: Vec<GanPair> = data.iter().map(shrink).collect();
    let masks: Vec<_> = pairs.iter().map(|p| p.mask.clone()).collect();
    let images: Vec<GrayscalePatch> = pairs.iter().map(|p| p.image.clone()).collect();
    let mask = mask_tensor(&masks, DType::F64, &dev).unwrap();
    let real = image_tensor(&images, DType::F64, &dev).unwrap();
    let det_maps = |x: &Tensor| {
        let x01 = ((x + 1.0).unwrap() * 0.5).unwrap();
        det.forward(&det.replicate_gray(&x01).unwrap(), false).unwrap()
    };
    let det_real = det_maps(&real);

    let only = |adv, l1, fm, d| GanLossWeights {
        lambda_adv: adv,
        lambda_l1: l1,
        lambda_fm: fm,
        lambda_det: d,
    };
    let gen_vars = gen.store().trainable_vars();
    let mut lines = Vec::new();
    let mut worst: f64 = 0.0;
    for (name, w) in [
        ("adv", only(1.0, 0.0, 0.0, 0.0)),
        ("l1", only(0.0, 1.0, 0.0, 0.0)),
        ("fm", only(0.0, 0.0, 1.0, 0.0)),
        ("det", only(0.0, 0.0, 0.0, 1.0)),
    ] {
        let loss = || {
            let fake = gen.forward(&mask).unwrap();
            let f = disc.forward(&fake, &mask).unwrap();
            let r = disc.forward(&real, &mask).unwrap().detach();
            let df = det_maps(&fake);
            generator_loss(&f, &r, &fake, &real, Some(&df), Some(&det_real), &w)
                .unwrap()
                .total
        };
        let (err, n) = grad_check(&gen_vars, &loss);
        worst = worst.max(err);
        lines.push(format!("G/{name} {err:.1e} ({n} entries)"));
    }
    let disc_vars = disc.store().trainable_vars();
    let fake = gen.forward(&mask).unwrap().detach();
    let d_loss = || {
        let r = disc.forward(&real, &mask).unwrap();
        let f = disc.forward(&fake, &mask).unwrap();
        discriminator_loss(&r.scores, &f.scores).unwrap()
    };
    let (err, n) = grad_check(&disc_vars, &d_loss);
    worst = worst.max(err);
    lines.push(format!("D {err:.1e} ({n} entries)"));
    let summary = lines.join(", ");
    check(
        worst <= GRAD_REL_TOL,
        format!("max rel err {worst:.1e} <= {GRAD_REL_TOL:.0e}: {summary}"),
        format!("max rel err {worst:.1e} > {GRAD_REL_TOL:.0e}: {summary}"),
    )
}

// ------------------------------------------------------------ 2: AP oracle

fn int_iou(a: &BoundingBox, b: &BoundingBox) -> (u64, u64) {
    let ix = (a.x + a.w).min(b.x + b.w).saturating_sub(a.x.max(b.x)) as u64;
    let iy = (a.y + a.h).min(b.y + b.h).saturating_sub(a.y.max(b.y)) as u64;
    let inter = ix * iy;
    (inter, (a.w * a.h) as u64 + (b.w * b.h) as u64 - inter)
}

/// Re-match from scratch at every confidence cut-off, then integrate the
/// best precision reachable at each recall level `k / N`.
fn brute_force_ap(dets: &[Vec<(BoundingBox, f64)>], gts: &[Vec<BoundingBox>]) -> f64 {
    let n_gt: usize = gts.iter().map(Vec::len).sum();
    let mut all: Vec<(usize, BoundingBox, f64)> = dets
        .iter()
        .enumerate()
        .flat_map(|(i, d)| d.iter().map(move |(b, c)| (i, *b, *c)))
        .collect();
    all.sort_by(|a, b| b.2.total_cmp(&a.2));
    let mut points = Vec::new();
    for cut in 1..=all.len() {
        let mut used: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
        let mut tp = 0;
        for (i, b, _) in &all[..cut] {
            let mut best: Option<(usize, (u64, u64))> = None;
            for (g, gt) in gts[*i].iter().enumerate() {
                let v = int_iou(b, gt);
                let better = match best {
                    None => true,
                    Some((_, (bi, bu))) => v.0 * bu > bi * v.1,
                };
                if better {
                    best = Some((g, v));
                }
            }
            if let Some((g, (inter, union))) = best {
                if 2 * inter >= union && !used[*i][g] {
                    used[*i][g] = true;
                    tp += 1;
                }
            }
        }
        points.push((tp as f64 / n_gt as f64, tp as f64 / cut as f64));
    }
    (1..=n_gt)
        .map(|k| {
            let r = k as f64 / n_gt as f64;
            points
                .iter()
                .filter(|(rec, _)| *rec >= r - 1e-15)
                .map(|(_, p)| *p)
                .fold(0.0, f64::max)
                / n_gt as f64
        })
        .sum()
}

fn criterion_2() -> Outcome {
    let g = |x, y, w, h| BoundingBox::new(x, y, w, h);
    let hand_gt = vec![vec![g(0, 0, 10, 10), g(20, 20, 10, 10)]];
    let hand = vec![vec![
        Detection::from_box(&g(0, 0, 10, 10), 0.9),
        Detection::from_box(&g(40, 40, 5, 5), 0.8),
        Detection::from_box(&g(20, 20, 10, 10), 0.7),
    ]];
    let hand_ap = evaluate_ap(&hand, &hand_gt, 0.5).map_err(|e| e.to_string())?.ap;
    if (hand_ap - 5.0 / 6.0).abs() > AP_ORACLE_TOL {
        return Err(format!("hand case AP {hand_ap}, expected 0.8333…"));
    }
    let mut rng = seed::rng(2);
    let rand_box = |rng: &mut seed::Rng| {
        let w = rng.random_range(2..8);
        let h = rng.random_range(2..8);
        g(rng.random_range(0..12), rng.random_range(0..12), w, h)
    };
    let mut worst: f64 = 0.0;
    let mut nontrivial = 0;
    for _ in 0..AP_ORACLE_CASES {
        let images = rng.random_range(1..=2);
        let n_gt = rng.random_range(1..=3);
        let n_det = rng.random_range(0..=5);
        let mut gts: Vec<Vec<BoundingBox>> = vec![Vec::new(); images];
        for _ in 0..n_gt {
            let i = rng.random_range(0..images);
            gts[i].push(rand_box(&mut rng));
        }
        let mut dets: Vec<Vec<(BoundingBox, f64)>> = vec![Vec::new(); images];
        for _ in 0..n_det {
            let i = rng.random_range(0..images);
            // Half the detections jitter a ground truth so matches occur.
            let b = match gts[i].first() {
                Some(t) if rng.random_bool(0.5) => g(t.x + rng.random_range(0..2), t.y, t.w, t.h),
                _ => rand_box(&mut rng),
            };
            dets[i].push((b, rng.random::<f64>()));
        }
        let as_det: Vec<Vec<Detection>> = dets
            .iter()
            .map(|d| d.iter().map(|(b, c)| Detection::from_box(b, *c)).collect())
            .collect();
        let got = evaluate_ap(&as_det, &gts, 0.5).map_err(|e| e.to_string())?.ap;
        let want = brute_force_ap(&dets, &gts);
        if want > 0.0 && want < 1.0 {
            nontrivial += 1;
        }
        worst = worst.max((got - want).abs());
    }
    check(
        worst <= AP_ORACLE_TOL,
        format!("hand case {hand_ap:.4}; {AP_ORACLE_CASES} random instances ({nontrivial} with 0<AP<1), max |diff| {worst:.1e}"),
        format!("max |diff| {worst:.1e} over {AP_ORACLE_CASES} instances"),
    )
}

// ------------------------------------------------------------ 3: copy/paste

fn criterion_3() -> Outcome {
    let data = phantoms(200, (0, 3), 3);
    let policy = PasteAttemptPolicy::default();
    let canvases = extract_canvases(&data);
    let patches = extract_defect_patches(&data, &policy);
    let (mut min_violations, mut compat_violations, mut bound_violations, mut nondeterministic) = (0, 0, 0, 0);
    let mut pastes = 0;
    for i in 0..CP_SAMPLES {
        let s = seed::derive(3, i as u64);
        let a = generate_cp_sample(&canvases, &patches, (1, 4), &policy, s).map_err(|e| e.to_string())?;
        let b = generate_cp_sample(&canvases, &patches, (1, 4), &policy, s).map_err(|e| e.to_string())?;
        if a != b {
            nondeterministic += 1;
        }
        let canvas = &canvases[a.canvas_index];
        let out = &a.sample.image;
        let mut covered = vec![false; out.width() * out.height()];
        for r in &a.pastes {
            pastes += 1;
            let p = &patches[r.patch_index];
            let loc = r.location;
            if loc.x + loc.w > out.width() as u32 || loc.y + loc.h > out.height() as u32 {
                bound_violations += 1;
                continue;
            }
            // Region mean and crop background mean, recomputed by hand.
            let (mut cs, mut cn, mut bs, mut bn) = (0.0, 0.0, 0.0, 0.0);
            for y in 0..loc.h as usize {
                for x in 0..loc.w as usize {
                    cs += canvas.get(loc.x as usize + x, loc.y as usize + y) as f64;
                    cn += 1.0;
                    if !p.pseudo_mask.get(x, y) {
                        bs += p.crop.get(x, y) as f64;
                        bn += 1.0;
                    }
                }
            }
            if bn == 0.0 {
                let (w, h) = (loc.w as usize, loc.h as usize);
                for y in 0..h {
                    for x in 0..w {
                        if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
                            bs += p.crop.get(x, y) as f64;
                            bn += 1.0;
                        }
                    }
                }
            }
            let (cm, bm) = (cs / cn, bs / bn);
            if (cm - bm).abs() / cm.max(bm).max(1.0) > policy.compatibility_tolerance + 1e-12 {
                compat_violations += 1;
            }
            let gain = if bm <= 0.0 {
                policy.max_gain
            } else {
                (cm / bm).min(policy.max_gain)
            };
            if (gain - r.gain).abs() > 1e-12 {
                compat_violations += 1;
            }
            let adapted = apply_gain(&p.crop, gain);
            for y in 0..loc.h as usize {
                for x in 0..loc.w as usize {
                    if !p.pseudo_mask.get(x, y) {
                        continue;
                    }
                    let (cx, cy) = (loc.x as usize + x, loc.y as usize + y);
                    covered[cy * out.width() + cx] = true;
                    if out.get(cx, cy) != canvas.get(cx, cy).min(adapted.get(x, y)) {
                        min_violations += 1;
                    }
                }
            }
        }
        for y in 0..out.height() {
            for x in 0..out.width() {
                if !covered[y * out.width() + x] && out.get(x, y) != canvas.get(x, y) {
                    min_violations += 1;
                }
            }
        }
        for bx in &a.sample.boxes {
            if !out.contains(bx) {
                bound_violations += 1;
            }
        }
        if a.sample.validate("cp").is_err() {
            bound_violations += 1;
        }
    }
    let c = generate_cp_sample(&canvases, &patches, (1, 4), &policy, 999_999).map_err(|e| e.to_string())?;
    let d = generate_cp_sample(&canvases, &patches, (1, 4), &policy, 1_000_000).map_err(|e| e.to_string())?;
    let summary = format!(
        "{CP_SAMPLES} samples, {pastes} pastes: {nondeterministic} nondeterministic, {min_violations} min-merge, \
         {compat_violations} compatibility, {bound_violations} bound violations"
    );
    check(
        nondeterministic == 0 && min_violations == 0 && compat_violations == 0 && bound_violations == 0 && c != d,
        summary.clone(),
        summary,
    )
}

// ------------------------------------------------------------ 4: schedules

fn criterion_4() -> Outcome {
    let cfg = GanTrainConfig::default();
    let anchors = [(0, 0.0002), (699, 0.0002), (750, 0.0001), (800, 0.0)];
    for (e, want) in anchors {
        let got = lr_schedule(e, &cfg);
        if (got - want).abs() > 1e-15 {
            return Err(format!("lr_schedule({e}) = {got}, expected {want}"));
        }
    }
    let d = DetectorTrainConfig::default();
    // Improve for three epochs, then stay flat.
    let mut t = PlateauTracker::new(d.lr_reduce_patience, d.early_stop_patience);
    let history = [5.0, 4.0, 3.0, 3.0, 3.5, 3.0, 4.0, 3.2, 3.1, 3.0, 3.0, 3.0];
    let mut reduce_at = Vec::new();
    let mut stop_at = None;
    for (e, v) in history.iter().enumerate() {
        let a = t.observe(*v);
        if a.reduce_lr {
            reduce_at.push(e);
        }
        if a.stop {
            stop_at = Some(e);
            break;
        }
    }
    // Stagnant epochs 3..=10: reductions after every 2nd, stop at the 8th.
    let mut t2 = PlateauTracker::new(d.lr_reduce_patience, d.early_stop_patience);
    let recovery = [1.0, 2.0, 0.5, 0.6, 0.7];
    let actions: Vec<_> = recovery.iter().map(|v| t2.observe(*v)).collect();
    let reset_ok = actions[2].improved && !actions[3].reduce_lr && actions[4].reduce_lr;
    check(
        reduce_at == vec![4, 6, 8, 10] && stop_at == Some(10) && reset_ok,
        format!(
            "lr anchors {anchors:?} ok; reduce at epochs {reduce_at:?}, stop at {stop_at:?} (patience {}/{})",
            d.lr_reduce_patience, d.early_stop_patience
        ),
        format!("reduce at {reduce_at:?}, stop at {stop_at:?}, reset ok {reset_ok}"),
    )
}

// ------------------------------------------------------------ 5: frozen parameters

fn tiny_detector_cfg(epochs: usize, freeze: bool) -> DetectorTrainConfig {
    DetectorTrainConfig {
        max_epochs: epochs,
        freeze_backbone: freeze,
        pretrain: PretrainConfig {
            epochs: 1,
            ..Default::default()
        },
        ..DetectorTrainConfig::desk()
    }
}

fn tiny_gan_cfg(epochs: usize) -> GanTrainConfig {
    GanTrainConfig {
        epochs,
        decay_epochs: 0,
        checkpoint_every: 0,
        augment: GanAugment::none(),
        ..GanTrainConfig::desk()
    }
}

fn criterion_5() -> Outcome {
    let data = phantoms(16, (1, 2), 5);
    let mut cfg = tiny_detector_cfg(3, true);
    cfg.pretrain.epochs = 0;
    // Without pretraining the starting weights are reproducible from the seed.
    let anchors = fit_anchors(&data[..12], &cfg, seed::derive_named(cfg.seed, "anchors")).map_err(|e| e.to_string())?;
    let init = Detector::new(
        cfg.arch.clone(),
        anchors,
        cfg.input_size,
        DType::F32,
        seed::derive_named(cfg.seed, "init"),
    )
    .map_err(|e| e.to_string())?;
    let run = train_detector(&data[..12], &data[12..], &cfg, None).map_err(|e| e.to_string())?;
    let init_backbone = init.backbone_checksum().map_err(|e| e.to_string())?;
    let full_moved =
        init.checksum().map_err(|e| e.to_string())? != run.detector.checksum().map_err(|e| e.to_string())?;
    let backbone_ok = run.backbone_checksum_before == run.backbone_checksum_after
        && run.backbone_checksum_after == init_backbone
        && full_moved;
    let det = run.detector;
    let outside_before = det.checksum().map_err(|e| e.to_string())?;
    let pairs = pairs_from_samples(&data);
    let gan = train_gan(&pairs[..8], &[], Some(&det), &tiny_gan_cfg(2), None).map_err(|e| e.to_string())?;
    let outside_after = det.checksum().map_err(|e| e.to_string())?;
    let gan_ok = gan.detector_checksum_before == gan.detector_checksum_after
        && gan.detector_checksum_before.as_deref() == Some(outside_before.as_str())
        && outside_before == outside_after
        && gan.detector_calls > 0;
    check(
        backbone_ok && gan_ok,
        format!(
            "backbone {}… unchanged and head moved over {} frozen detector epochs; detector {}… unchanged over {} GAN detector calls",
            &run.backbone_checksum_after[..12],
            run.history.len(),
            &outside_after[..12],
            gan.detector_calls
        ),
        format!("backbone invariant {backbone_ok}, detector invariant {gan_ok}"),
    )
}

// ------------------------------------------------------------ 6: tiny overfit

fn mean_l1(gen: &Generator, pairs: &[GanPair]) -> f64 {
    let masks: Vec<_> = pairs.iter().map(|p| p.mask.clone()).collect();
    let out = gen.generate(&masks).unwrap();
    let (mut s, mut n) = (0.0, 0.0);
    for (o, p) in out.iter().zip(pairs) {
        for (a, b) in o.pixels().iter().zip(p.image.pixels()) {
            s += (*a as f64 - *b as f64).abs() / 127.5;
            n += 1.0;
        }
    }
    s / n
}

fn criterion_6() -> Outcome {
    let pairs = pairs_from_samples(&phantoms(12, (1, 3), 6));
    let pairs = &pairs[..8];
    let cfg = GanTrainConfig {
        loss: GanLossWeights {
            lambda_det: 0.0,
            ..Default::default()
        },
        ..tiny_gan_cfg(150)
    };
    let init = Generator::new(
        cfg.generator.clone(),
        DType::F32,
        seed::derive_named(cfg.seed, "gan/gen-init"),
    )
    .map_err(|e| e.to_string())?;
    let before = mean_l1(&init, pairs);
    let run = train_gan(pairs, &[], None, &cfg, None).map_err(|e| e.to_string())?;
    let after = mean_l1(&run.generator, pairs);
    let drop = 1.0 - after / before;

    let data = phantoms(16, (1, 3), 7);
    let dcfg = DetectorTrainConfig {
        augment: DetAugment::none(),
        early_stop_patience: 20,
        lr_reduce_patience: 8,
        learning_rate: 0.003,
        ..tiny_detector_cfg(150, false)
    };
    let det = train_detector(&data, &data, &dcfg, None).map_err(|e| e.to_string())?;
    let images: Vec<GrayscalePatch> = data.iter().map(|s| s.image.clone()).collect();
    let gts: Vec<_> = data.iter().map(|s| s.boxes.clone()).collect();
    let dets = det
        .detector
        .detect_batch(&images, &EvalConfig::default())
        .map_err(|e| e.to_string())?;
    let ap = evaluate_ap(&dets, &gts, 0.5).map_err(|e| e.to_string())?.ap;
    let summary = format!(
        "GAN L1 {before:.4} -> {after:.4} (drop {:.1}%, need {:.0}%); detector AP {ap:.3} on 16 images after {} epochs (need {OVERFIT_AP})",
        100.0 * drop,
        100.0 * GAN_L1_DROP,
        det.history.len()
    );
    check(drop >= GAN_L1_DROP && ap >= OVERFIT_AP, summary.clone(), summary)
}

// ------------------------------------------------------------ 7: desk experiment

fn criterion_7() -> Outcome {
    let n = 600;
    let base = ExperimentConfig::default();
    let cfg = ExperimentConfig {
        cells: vec![
            CellSpec::new("real", true, 0, 0),
            CellSpec::new("cp", false, n, 0),
            CellSpec::new("real+gan", true, 0, n),
        ],
        seeds: vec![0, 1, 2],
        synthetic_count: n,
        output_dir: std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-matrix"),
        ..base
    };
    let report = run_matrix(&cfg).map_err(|e| e.to_string())?;
    let med = |c: &str| report.median_ap(c).unwrap_or(f64::NAN);
    let (real, cp, mix) = (med("real"), med("cp"), med("real+gan"));
    let per_seed = |c: &str| {
        report
            .cell_aps(c)
            .iter()
            .map(|a| a.map_or("-".into(), |v| format!("{:.1}", 100.0 * v)))
            .collect::<Vec<_>>()
            .join("/")
    };
    let mix_ok = mix >= real - GAN_MIX_SLACK;
    let cp_ok = cp < real;
    let same_test = report
        .runs
        .iter()
        .flat_map(|r| &r.cells)
        .all(|c| c.test_hash == report.test_hash);
    let summary = format!(
        "median AP % real {:.2} [{}], cp {:.2} [{}], real+gan {:.2} [{}]; real+gan >= real - 0.5: {mix_ok}; cp < real: {cp_ok}; shared test set: {same_test}",
        100.0 * real,
        per_seed("real"),
        100.0 * cp,
        per_seed("cp"),
        100.0 * mix,
        per_seed("real+gan"),
    );
    check(mix_ok && cp_ok && same_test, summary.clone(), summary)
}

// ------------------------------------------------------------ 8: ablations

fn criterion_8() -> Outcome {
    let data = phantoms(16, (1, 2), 8);
    let det = train_detector(&data[..12], &data[12..], &tiny_detector_cfg(1, true), None)
        .map_err(|e| e.to_string())?
        .detector;
    let pairs = pairs_from_samples(&data);
    let pairs = &pairs[..8];
    let full = train_gan(pairs, &[], Some(&det), &tiny_gan_cfg(2), None).map_err(|e| e.to_string())?;
    let mut no_det_cfg = tiny_gan_cfg(2);
    no_det_cfg.loss.lambda_det = 0.0;
    let no_det = train_gan(pairs, &[], Some(&det), &no_det_cfg, None).map_err(|e| e.to_string())?;
    let mut no_cat_cfg = tiny_gan_cfg(2);
    no_cat_cfg.discriminator.concat_mask = false;
    let no_cat = train_gan(pairs, &[], Some(&det), &no_cat_cfg, None).map_err(|e| e.to_string())?;

    let full_ok =
        full.detector_calls > 0 && full.history.iter().all(|h| h.g_det > 0.0) && full.discriminator_input_channels == 2;
    let no_det_ok = no_det.detector_calls == 0 && no_det.history.iter().all(|h| h.g_det == 0.0);
    let no_cat_ok = no_cat.discriminator_input_channels == 1 && no_cat.history.len() == 2;
    check(
        full_ok && no_det_ok && no_cat_ok,
        format!(
            "full: {} detector calls, 2 D channels; lambda_det=0: {} calls, det term 0; no concat: {} D channel",
            full.detector_calls, no_det.detector_calls, no_cat.discriminator_input_channels
        ),
        format!("full {full_ok}, no-detector {no_det_ok}, no-concat {no_cat_ok}"),
    )
}

fn main() {
    let only: Option<BTreeSet<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Outcome); 8] = [
        (1, "loss gradients vs finite differences", criterion_1),
        (2, "AP oracle equivalence", criterion_2),
        (3, "copy/paste bit-exactness", criterion_3),
        (4, "schedule conformance", criterion_4),
        (5, "frozen-parameter contracts", criterion_5),
        (6, "tiny-overfit sanity", criterion_6),
        (7, "directional desk experiment", criterion_7),
        (8, "ablation wiring", criterion_8),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let r = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(msg) => println!("PASS criterion {id} ({name}) [{secs:.1}s]: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}) [{secs:.1}s]: {msg}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
