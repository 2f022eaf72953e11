mod common;

use std::f64::consts::PI;

use common::*;
use fedtn_core::data::{Image, ImageSample};
use fedtn_core::model::{Architecture, Classifier, Head, HeadKind, ModelParams, PROB_FLOOR};
use fedtn_core::qtn::{BlockKind, TopologyKind};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arch(topology: TopologyKind, block: BlockKind, head: HeadKind) -> Architecture {
    Architecture {
        topology,
        block,
        patch_side: 2,
        n_patches: 4,
        head,
    }
}

fn random_sample(rng: &mut ChaCha8Rng) -> ImageSample {
    ImageSample {
        image: Image::new(4, 4, (0..16).map(|_| rng.gen_range(0.0..=1.0)).collect()).unwrap(),
        label: rng.gen_range(0..=1),
        id: "r".into(),
    }
}

/// Encode each patch by Kronecker products of single-qubit states, apply the
/// dense circuit unitary, read Z and apply the head by hand.
fn straight_line_probability(c: &Classifier, p: &ModelParams, img: &Image) -> f64 {
    let u = circuit_unitary(&c.template().seq, &p.quantum);
    let mut z = Vec::new();
    for pr in 0..2 {
        for pc in 0..2 {
            let mut state = vec![Complex64::new(1.0, 0.0)];
            // pixel (r, c) of the patch is qubit 2r + c; build from the top qubit down
            for q in (0..4).rev() {
                let px = img.at(2 * pr + q / 2, 2 * pc + q % 2);
                let (s, co) = (PI * px / 2.0).sin_cos();
                let single = vec![vec![Complex64::new(co, 0.0)], vec![Complex64::new(s, 0.0)]];
                let col: Matrix = state.iter().map(|a| vec![*a]).collect();
                state = kron(&col, &single).into_iter().map(|r| r[0]).collect();
            }
            z.push(z_expectation(
                &apply_matrix(&u, &state),
                c.template().readout_qubit,
            ));
        }
    }
    let raw = match &p.head {
        Head::Gap => (1.0 + z.iter().sum::<f64>() / 4.0) / 2.0,
        Head::Dense { weights, bias } => {
            let s: f64 = weights.iter().zip(&z).map(|(w, z)| w * z).sum::<f64>() + bias;
            1.0 / (1.0 + (-s).exp())
        }
    };
    raw.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

#[test]
fn forward_matches_straight_line_pipeline() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for topology in [TopologyKind::Mps, TopologyKind::Ttn, TopologyKind::Mera] {
        for head in [HeadKind::Gap, HeadKind::Dense] {
            let c = Classifier::new(arch(topology, BlockKind::Simple, head)).unwrap();
            let p = c.init_params(rng.gen());
            let s = random_sample(&mut rng);
            let got = c.forward(&p, &s.image).unwrap().probability;
            let want = straight_line_probability(&c, &p, &s.image);
            assert!(
                (got - want).abs() <= 1e-10,
                "{topology} {head:?}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut cases = 0;
    for topology in [TopologyKind::Mps, TopologyKind::Ttn, TopologyKind::Mera] {
        for block in [
            BlockKind::Simple,
            BlockKind::StronglyEntangling { layers: 1 },
        ] {
            for head in [HeadKind::Gap, HeadKind::Dense] {
                for _ in 0..2 {
                    let c = Classifier::new(arch(topology, block, head)).unwrap();
                    let params = c.init_params(rng.gen());
                    let batch: Vec<ImageSample> = (0..3).map(|_| random_sample(&mut rng)).collect();
                    let refs: Vec<&ImageSample> = batch.iter().collect();
                    let lambda = if cases % 2 == 0 { 0.0 } else { 1e-4 };
                    let (_, grad) = c.loss_and_grad(&params, &refs, lambda).unwrap();
                    let mut probe = params.clone();
                    let fd = central_difference(&params.to_flat(), 1e-5, |x| {
                        probe.set_flat(x).unwrap();
                        c.loss(&probe, &refs, lambda).unwrap()
                    });
                    for (g, f) in grad.iter().zip(&fd) {
                        assert!(
                            (g - f).abs() <= (1e-5 * f.abs()).max(1e-7),
                            "{topology} {block:?} {head:?}: {g} vs {f}"
                        );
                    }
                    cases += 1;
                }
            }
        }
    }
    assert!(cases >= 20);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gap_ignores_patch_order(seed in any::<u64>(), perm in Just([0usize, 1, 2, 3]).prop_shuffle()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = Classifier::new(arch(TopologyKind::Ttn, BlockKind::Simple, HeadKind::Gap)).unwrap();
        let p = c.init_params(seed);
        let s = random_sample(&mut rng);
        // move patch k to position perm[k]
        let mut moved = vec![0.0; 16];
        for (k, &dest) in perm.iter().enumerate() {
            for r in 0..2 {
                for col in 0..2 {
                    let v = s.image.at(2 * (k / 2) + r, 2 * (k % 2) + col);
                    moved[(2 * (dest / 2) + r) * 4 + 2 * (dest % 2) + col] = v;
                }
            }
        }
        let a = c.forward(&p, &s.image).unwrap();
        let b = c.forward(&p, &Image::new(4, 4, moved).unwrap()).unwrap();
        prop_assert!((a.probability - b.probability).abs() <= 1e-12);
    }

    #[test]
    fn outputs_stay_in_range(seed in any::<u64>(), dense in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = if dense { HeadKind::Dense } else { HeadKind::Gap };
        let c = Classifier::new(arch(TopologyKind::Mera, BlockKind::Simple, head)).unwrap();
        let p = c.init_params(seed);
        let s = random_sample(&mut rng);
        let pred = c.forward(&p, &s.image).unwrap();
        prop_assert!((PROB_FLOOR..=1.0 - PROB_FLOOR).contains(&pred.probability));
        prop_assert!(pred.patch_expectations.iter().all(|z| (-1.0..=1.0).contains(z)));
        prop_assert!(c.loss(&p, &[&s], 1e-4).unwrap() >= 0.0);
    }
}
