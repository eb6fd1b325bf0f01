use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgo_core::config::{BenchConfig, SegLoss, TrainConfig};
use sgo_core::scene::SKY;
use sgo_core::train::{
    bench_attention, doubling_ratios, evaluate_depth, evaluate_occupancy, frame_loss, learning_rate, window, AttentionVariant, LossWeights,
    ViewLabels, PROB_EPS,
};
use sgo_core::voxel::FREE;
use sgo_core::CoreError;
use sgo_diff::{Array, Tape};

const W: LossWeights = LossWeights { depth: 1.0, seg: 1.0, seg_loss: SegLoss::Bce };

fn loss_of(img: Vec<f64>, h: usize, w: usize, c: usize, sem: &[u8], depth: &[f32], lw: &LossWeights) -> Option<(f64, f64, f64)> {
    let t = Tape::<f64>::new();
    let v = t.constant(Array::new(vec![h, w, c + 2], img));
    let l = frame_loss(&t, &[v], &[ViewLabels { semantics: sem, depth }], c, lw).unwrap()?;
    let out = (t.value(l.depth).item(), t.value(l.seg).item(), t.value(l.total).item());
    Some(out)
}

#[test]
fn two_pixel_two_class_matches_scalar_arithmetic() {
    // pixel 0: probs (0.7, 0.2), depth 3.0, label 0, gt depth 2.5
    // pixel 1: probs (0.1, 0.6), depth 4.0, label 1, gt depth 5.0
    let img = vec![0.7, 0.2, 3.0, 1.0, 0.1, 0.6, 4.0, 1.0];
    let (d, s, total) = loss_of(img, 1, 2, 2, &[0, 1], &[2.5, 5.0], &W).unwrap();
    let bce = |p: f64, y: f64| -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
    let want_d = (0.25 + 1.0) / 2.0;
    let want_s = (bce(0.7, 1.0) + bce(0.2, 0.0) + bce(0.1, 0.0) + bce(0.6, 1.0)) / 2.0;
    assert!((d - want_d).abs() < 1e-12);
    assert!((s - want_s).abs() < 1e-12);
    assert!((total - want_d - want_s).abs() < 1e-12);

    let ce = LossWeights { seg_loss: SegLoss::SoftmaxCe, ..W };
    let img = vec![0.7, 0.2, 3.0, 1.0, 0.1, 0.6, 4.0, 1.0];
    let (_, s, _) = loss_of(img, 1, 2, 2, &[0, 1], &[2.5, 5.0], &ce).unwrap();
    assert!((s - (-(0.7f64.ln()) - 0.6f64.ln()) / 2.0).abs() < 1e-12);
}

#[test]
fn sky_pixels_are_ignored_and_weights_apply() {
    let img = vec![0.7, 0.2, 3.0, 1.0, 0.1, 0.6, 40.0, 1.0];
    let lw = LossWeights { depth: 0.5, seg: 2.0, seg_loss: SegLoss::Bce };
    let (d, s, total) = loss_of(img, 1, 2, 2, &[0, SKY], &[2.5, 0.0], &lw).unwrap();
    assert!((d - 0.25).abs() < 1e-12);
    assert!((total - 0.5 * d - 2.0 * s).abs() < 1e-12);
    assert!(loss_of(vec![0.0; 4], 1, 1, 2, &[SKY], &[0.0], &W).is_none());
}

#[test]
fn doubled_depth_error_quadruples_depth_loss() {
    let a = loss_of(vec![0.5, 0.5, 3.0, 1.0], 1, 1, 2, &[0], &[2.0], &W).unwrap().0;
    let b = loss_of(vec![0.5, 0.5, 4.0, 1.0], 1, 1, 2, &[0], &[2.0], &W).unwrap().0;
    assert!((b - 4.0 * a).abs() < 1e-12);
}

#[test]
fn perfect_rendering_leaves_only_clamp_residual() {
    let (d, s, _) = loss_of(vec![1.0, 0.0, 0.0, 2.0, 1.0], 1, 1, 3, &[0], &[2.0], &W).unwrap();
    assert_eq!(d, 0.0);
    let want = -3.0 * (1.0 - PROB_EPS).ln();
    assert!((s - want).abs() < 1e-12);
    assert!(s < 1e-5);
}

#[test]
fn mismatched_views_are_rejected() {
    let t = Tape::<f64>::new();
    let v = t.constant(Array::zeros(&[1, 2, 4]));
    let lab = ViewLabels { semantics: &[0], depth: &[1.0] };
    assert!(matches!(frame_loss(&t, &[v], &[lab], 2, &W), Err(CoreError::Shape { .. })));
    assert!(matches!(frame_loss(&t, &[v, v], &[lab], 2, &W), Err(CoreError::Shape { .. })));
}

fn brute_iou(pred: &[u8], gt: &[u8], classes: usize) -> (Vec<Option<f64>>, f64, f64) {
    let mut per = Vec::new();
    for c in 0..classes as u8 {
        if !gt.contains(&c) {
            per.push(None);
            continue;
        }
        let tp = pred.iter().zip(gt).filter(|(p, g)| **p == c && **g == c).count() as f64;
        let fp = pred.iter().zip(gt).filter(|(p, g)| **p == c && **g != c).count() as f64;
        let fn_ = pred.iter().zip(gt).filter(|(p, g)| **p != c && **g == c).count() as f64;
        per.push(Some(tp / (tp + fp + fn_)));
    }
    let present: Vec<f64> = per.iter().flatten().copied().collect();
    let miou = present.iter().sum::<f64>() / present.len() as f64;
    let occ = |l: u8| l != FREE;
    let tp = pred.iter().zip(gt).filter(|(p, g)| occ(**p) && occ(**g)).count() as f64;
    let un = pred.iter().zip(gt).filter(|(p, g)| occ(**p) || occ(**g)).count() as f64;
    (per, miou, tp / un)
}

#[test]
fn occupancy_matches_brute_force_confusion() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let draw = |rng: &mut ChaCha8Rng| -> Vec<u8> {
            (0..216).map(|_| if rng.random_bool(0.4) { FREE } else { rng.random_range(0..5u8) }).collect()
        };
        let (pred, gt) = (draw(&mut rng), draw(&mut rng));
        let r = evaluate_occupancy(&pred, &gt, 5).unwrap();
        let (per, miou, iou) = brute_iou(&pred, &gt, 5);
        for (a, b) in r.per_class.iter().zip(&per) {
            match (a, b) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
                (None, None) => {}
                _ => panic!("presence differs"),
            }
        }
        assert!((r.miou - miou).abs() < 1e-12);
        assert!((r.iou - iou).abs() < 1e-12);
    }
}

#[test]
fn occupancy_trivial_cases() {
    let gt = vec![0, 1, FREE, 2, FREE, 1];
    let r = evaluate_occupancy(&gt, &gt, 4).unwrap();
    assert_eq!(r.miou, 1.0);
    assert_eq!(r.iou, 1.0);
    assert_eq!(r.per_class[3], None);
    let r = evaluate_occupancy(&[FREE; 6], &gt, 4).unwrap();
    assert_eq!(r.iou, 0.0);
    assert_eq!(r.miou, 0.0);
    assert!(matches!(evaluate_occupancy(&[FREE; 5], &gt, 4), Err(CoreError::Shape { .. })));
}

#[test]
fn depth_metric_examples() {
    let r = evaluate_depth(&[5.0], &[4.0]).unwrap();
    assert!((r.abs_rel - 0.25).abs() < 1e-12);
    assert!((r.rmse - 1.0).abs() < 1e-12);
    assert!((r.sq_rel - 0.25).abs() < 1e-12);

    let gt = [1.0, 2.0, 3.5, 7.0];
    let r = evaluate_depth(&gt, &gt).unwrap();
    assert_eq!(r.abs_rel, 0.0);
    assert_eq!((r.delta1, r.delta2, r.delta3), (1.0, 1.0, 1.0));

    let pred: Vec<f64> = gt.iter().map(|v| 1.5 * v).collect();
    let r = evaluate_depth(&pred, &gt).unwrap();
    assert!((r.abs_rel - 0.5).abs() < 1e-12);
    assert_eq!((r.delta1, r.delta2, r.delta3), (0.0, 1.0, 1.0));
    assert!((r.rmse_log - 1.5f64.ln()).abs() < 1e-12);

    assert!(matches!(evaluate_depth(&[1.0], &[0.0]), Err(CoreError::NoValidPixels(_))));
}

#[test]
fn window_clips_at_sequence_ends() {
    assert_eq!(window(0, 10, 2, true), vec![0, 1, 2]);
    assert_eq!(window(5, 10, 2, true), vec![-2, -1, 0, 1, 2]);
    assert_eq!(window(9, 10, 2, false), vec![-2, -1]);
    assert_eq!(window(3, 10, 0, true), vec![0]);
}

#[test]
fn learning_rate_warms_up_then_decays() {
    let cfg = TrainConfig { lr: 1e-2, warmup: 10, steps: 110, lr_final: 0.1, ..TrainConfig::default() };
    assert!((learning_rate(&cfg, 0) - 1e-3).abs() < 1e-15);
    assert!((learning_rate(&cfg, 9) - 1e-2).abs() < 1e-15);
    assert!((learning_rate(&cfg, 10) - 1e-2).abs() < 1e-15);
    assert!((learning_rate(&cfg, 110) - 1e-3).abs() < 1e-15);
    assert!(learning_rate(&cfg, 60) < learning_rate(&cfg, 30));
}

#[test]
fn bench_scaling_and_cap_rows() {
    let cfg = BenchConfig { n: vec![200, 400, 800], inducing: 50, latent: 16, heads: 2, full_cap: 500, ..BenchConfig::default() };
    let rows = bench_attention(&cfg).unwrap();
    assert_eq!(rows.len(), 6);
    let capped: Vec<_> = rows.iter().filter(|r| r.status == "exceeds cap").collect();
    assert_eq!(capped.len(), 1);
    assert_eq!(capped[0].n, 800);
    for r in doubling_ratios(&rows, AttentionVariant::Isa) {
        assert!((1.6..2.2).contains(&r), "isa ratio {r}");
    }
    let full = doubling_ratios(&rows, AttentionVariant::Full);
    assert_eq!(full.len(), 1);
    assert!(full[0] > 3.0, "full ratio {}", full[0]);

    let bad = BenchConfig { n: vec![400, 200], ..cfg };
    assert!(matches!(bench_attention(&bad), Err(CoreError::Config { .. })));
}

#[test]
fn degenerate_inducing_count_stays_near_full_cost() {
    let cfg = BenchConfig { n: vec![256], inducing: 256, latent: 16, heads: 2, ..BenchConfig::default() };
    let rows = bench_attention(&cfg).unwrap();
    let isa = rows[0].peak_bytes.unwrap() as f64;
    let full = rows[1].peak_bytes.unwrap() as f64;
    assert!(isa <= 2.5 * full, "isa {isa} full {full}");
}
