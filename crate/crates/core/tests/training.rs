mod common;

use common::*;
use fedtn_core::data::{synth_blobs, Dataset};
use fedtn_core::model::{Architecture, Classifier, HeadKind};
use fedtn_core::qtn::{BlockKind, TopologyKind};
use fedtn_core::train::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn setup(head: HeadKind) -> (Classifier, Dataset) {
    let c = Classifier::new(Architecture {
        topology: TopologyKind::Ttn,
        block: BlockKind::Simple,
        patch_side: 2,
        n_patches: 4,
        head,
    })
    .unwrap();
    (c, synth_blobs(21, 4, 4, 0.1, 2).unwrap())
}

#[test]
fn adam_matches_reference_trace() {
    let want = reference_adam_square(1.0, 0.001, 5);
    let mut opt = AdamState::new(1, 0.001, 0.0);
    let mut x = vec![1.0];
    for w in want {
        let g = vec![2.0 * x[0]];
        opt.step(&mut x, &g).unwrap();
        assert!((x[0] - w).abs() <= 1e-12);
    }
    assert_eq!(opt.t, 5);
    assert!(opt.v.iter().all(|v| *v >= 0.0));
}

#[test]
fn zero_epochs_only_evaluates() {
    let (c, d) = setup(HeadKind::Gap);
    let p = c.init_params(1);
    let mut opt = AdamState::new(c.n_params(), DEFAULT_LR, DEFAULT_WEIGHT_DECAY);
    let (q, loss) = train_local(&c, &p, &d, 0, 8, &mut opt, None, 3).unwrap();
    assert_eq!(p, q);
    assert_eq!(opt.t, 0);
    let all: Vec<_> = d.samples.iter().collect();
    assert_eq!(loss, c.loss(&p, &all, DEFAULT_WEIGHT_DECAY).unwrap());
}

#[test]
fn training_is_deterministic_and_steps_per_batch() {
    let (c, d) = setup(HeadKind::Dense);
    let p = c.init_params(4);
    let run = || {
        let mut opt = AdamState::new(c.n_params(), 0.01, DEFAULT_WEIGHT_DECAY);
        let out = train_local(&c, &p, &d, 2, 8, &mut opt, None, 11).unwrap();
        (out, opt)
    };
    let (a, opt_a) = run();
    let (b, _) = run();
    assert_eq!(a, b);
    // 21 samples in batches of 8: the short last batch is kept
    assert_eq!(opt_a.t, 2 * 3);
    assert_ne!(a.0, p);
}

#[test]
fn inactive_privacy_matches_plain_training() {
    let (c, d) = setup(HeadKind::Dense);
    let p = c.init_params(6);
    let dp = DpConfig {
        clip: 1e9,
        epsilon: 0.0,
        rng_seed: 1,
    };
    let mut o1 = AdamState::new(c.n_params(), 0.01, DEFAULT_WEIGHT_DECAY);
    let mut o2 = o1.clone();
    let (plain, _) = train_local(&c, &p, &d, 2, 8, &mut o1, None, 5).unwrap();
    let (private, _) = train_local(&c, &p, &d, 2, 8, &mut o2, Some(&dp), 5).unwrap();
    for (a, b) in plain.to_flat().iter().zip(private.to_flat()) {
        assert!((a - b).abs() <= 1e-9);
    }
}

#[test]
fn noise_changes_trajectory_reproducibly() {
    let (c, d) = setup(HeadKind::Gap);
    let p = c.init_params(6);
    let dp = DpConfig {
        clip: 1.0,
        epsilon: 0.8,
        rng_seed: 1,
    };
    let go = || {
        let mut o = AdamState::new(c.n_params(), 0.01, 0.0);
        train_local(&c, &p, &d, 1, 8, &mut o, Some(&dp), 5)
            .unwrap()
            .0
    };
    let mut o = AdamState::new(c.n_params(), 0.01, 0.0);
    let plain = train_local(&c, &p, &d, 1, 8, &mut o, None, 5).unwrap().0;
    assert_eq!(go(), go());
    assert_ne!(go(), plain);
}

#[test]
fn evaluate_boundaries() {
    let (c, d) = setup(HeadKind::Dense);
    let p = c.init_params(2);
    let m = evaluate(&c, &p, &d, 0.0).unwrap();
    assert_eq!((m.fn_, m.tn), (0, 0));
    assert_eq!(m.tp + m.fp + m.tn + m.fn_, d.len());
    assert!(m.auc.is_some());
    let m = evaluate(&c, &p, &d, 0.5).unwrap();
    assert_eq!(m.tp + m.fp + m.tn + m.fn_, d.len());
    assert!((m.accuracy - (m.tp + m.tn) as f64 / d.len() as f64).abs() <= 1e-12);
    assert_eq!(m.recall, m.sensitivity);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clipping_bounds_norm_and_keeps_direction(g in prop::collection::vec(-50.0f64..50.0, 1..16), clip in 0.01f64..10.0) {
        let out = clip_gradient(&g, clip);
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(norm(&out) <= clip + 1e-12);
        let (ng, no) = (norm(&g), norm(&out));
        if ng > 0.0 {
            let cos = g.iter().zip(&out).map(|(a, b)| a * b).sum::<f64>() / (ng * no);
            prop_assert!((cos - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn auc_agrees_with_oracles(seed in any::<u64>(), n in 2usize..200, levels in 0usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..=1)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                let s: f64 = rng.gen();
                if levels == 0 { s } else { (s * levels as f64).floor() / levels as f64 }
            })
            .collect();
        let (auc, pts) = roc_auc(&scores, &labels).unwrap();
        prop_assert_eq!(auc, brute_force_auc(&scores, &labels));
        prop_assert!((auc - trapezoid_area(&pts)).abs() <= 1e-12);
        prop_assert!(pts.windows(2).all(|w| w[0].0 <= w[1].0));
    }
}
