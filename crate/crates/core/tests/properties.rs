//! Invariants checked on random instances through the public API only.

use std::f64::consts::{PI, TAU};

use fqc_core::classical::softmax_cross_entropy;
use fqc_core::costmodel::{count_forward, runtime_ratio, ComplexityParams};
use fqc_core::detection::{c2q_loss, BBox};
use fqc_core::encoding::{col2im_adjoint, encode_row, im2col, UploadPlan};
use fqc_core::io::{decode_tensor, encode_tensor, Checkpoint};
use fqc_core::pqc::{param_shift_grad, pqc_forward, ParamVector, PqcSpec};
use fqc_core::qconv::{ConvMode, QConvConfig, QConvLayer};
use fqc_core::Tensor3;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tensor(shape: (usize, usize, usize)) -> impl Strategy<Value = Tensor3> {
    let (h, w, c) = shape;
    prop::collection::vec(-1.0f64..1.0, h * w * c).prop_map(move |v| Tensor3::new(h, w, c, v).unwrap())
}

fn shape() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..6, 1usize..6, 1usize..4)
}

fn boxes() -> impl Strategy<Value = BBox> {
    (0.0f64..20.0, 0.0f64..20.0, 0.5f64..10.0, 0.5f64..10.0).prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn patch_lowering_and_scatter_are_adjoint(
        (x, k, stride, pad, seed) in shape().prop_flat_map(|s| {
            (tensor(s), (1..=s.0.min(s.1) + 1), 1usize..3, 0usize..2, any::<u64>())
        })
    ) {
        prop_assume!(k <= x.height() + 2 * pad && k <= x.width() + 2 * pad);
        let p = im2col(&x, (k, k), stride, pad).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = (0..p.values().len()).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        let py = fqc_core::PatchMatrix::from_values(*p.geometry(), y).unwrap();
        let lhs = p.dot(&py);
        let rhs = x.dot(&col2im_adjoint(&py).unwrap());
        prop_assert!((lhs - rhs).abs() < 1e-10, "{} vs {}", lhs, rhs);
    }

    #[test]
    fn shift_rule_matches_finite_differences(q in 1usize..5, blocks in 1usize..3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = PqcSpec::new(q, blocks).unwrap();
        let params = ParamVector::random(spec.num_params(), &mut rng);
        let row: Vec<f64> = (0..q + 2).map(|i| ((i as f64 + 1.0) * seed as f64 * 1e-3).sin()).collect();
        let input = encode_row(&row, &UploadPlan::ry(q)).unwrap();
        let obs = seed as usize % q;
        let g = param_shift_grad(&spec, &params, &input, obs).unwrap();
        let h = 1e-6;
        for k in 0..g.len() {
            let at = |d: f64| {
                let mut v = params.values().to_vec();
                v[k] += d;
                pqc_forward(&input, &spec, &ParamVector::new(v).unwrap()).unwrap().expectation_z(obs).unwrap()
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            prop_assert!((g[k] - fd).abs() < 1e-6, "component {}: {} vs {}", k, g[k], fd);
        }
    }

    #[test]
    fn shift_rule_is_periodic_in_each_angle(seed in any::<u64>(), k in 0usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = PqcSpec::new(2, 1).unwrap();
        let params = ParamVector::random(spec.num_params(), &mut rng);
        let input = encode_row(&[0.3, -0.2], &UploadPlan::ry(2)).unwrap();
        let mut shifted = params.values().to_vec();
        shifted[k] += TAU;
        let a = param_shift_grad(&spec, &params, &input, 0).unwrap();
        let b = param_shift_grad(&spec, &ParamVector::new(shifted).unwrap(), &input, 0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn param_vectors_stay_wrapped(values in prop::collection::vec(-50.0f64..50.0, 1..20)) {
        let p = ParamVector::new(values).unwrap();
        prop_assert!(p.values().iter().all(|v| (0.0..TAU).contains(v)));
    }

    #[test]
    fn c2q_is_a_pseudometric(
        (a, b, c) in shape().prop_flat_map(|s| (tensor(s), tensor(s), tensor(s)))
    ) {
        let d = |x: &Tensor3, y: &Tensor3| c2q_loss(x, y).unwrap();
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert!(d(&a, &b) >= 0.0);
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-15);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
    }

    #[test]
    fn block_ratio_equals_channel_count(h in 2usize..6, w in 2usize..6, c in 1usize..6, k in 1usize..3, q in 1usize..4) {
        let x = Tensor3::filled(h, w, c, 0.25);
        let count = |mode| {
            let cfg = QConvConfig { kernel: (k, k), qubits: q, pqc_blocks: 1, mode, ..QConvConfig::new((h, w, c), 2) };
            count_forward(&QConvLayer::with_zero_params(cfg).unwrap(), &x).unwrap()
        };
        let (f, b) = (count(ConvMode::Fast), count(ConvMode::PerChannel));
        prop_assert_eq!(b.trainable_blocks, c as u64 * f.trainable_blocks);
        prop_assert_eq!(f.encoding_rotations, b.encoding_rotations);
        prop_assert_eq!(f.patches_processed, b.patches_processed);
    }

    #[test]
    fn runtime_ratio_never_exceeds_one(c in 1usize..512, q in 1usize..16, kappa in 0.01f64..10.0, rho in 0.01f64..10.0, delta in 1e-6f64..0.99) {
        let p = ComplexityParams { kappa_e: kappa, rho, delta, ..ComplexityParams::new(16, 16, c, q) };
        let r = runtime_ratio(&p).unwrap();
        prop_assert!(r <= 1.0 && r > 0.0);
        let next = runtime_ratio(&ComplexityParams { channels: c + 1, ..p }).unwrap();
        prop_assert!(next < r);
    }

    #[test]
    fn tensor_files_round_trip(shape in shape(), seed in any::<u64>()) {
        let (h, w, c) = shape;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // values already on the f32 grid survive exactly
        let v: Vec<f64> = (0..h * w * c).map(|_| rand::Rng::gen::<f32>(&mut rng) as f64 * 4.0 - 2.0).collect();
        let t = Tensor3::new(h, w, c, v).unwrap();
        let bytes = encode_tensor(&t);
        prop_assert_eq!(bytes.len(), 16 + 4 * h * w * c);
        prop_assert_eq!(decode_tensor(&bytes).unwrap(), t);
    }

    #[test]
    fn checkpoints_round_trip(v in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 0..50)) {
        let ck = Checkpoint::new("prop", 1, 2, v);
        let bytes = ck.to_bytes().unwrap();
        let back: Checkpoint<Vec<f64>> = Checkpoint::from_bytes(&bytes, "prop").unwrap();
        prop_assert_eq!(&back, &ck);
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in boxes(), b in boxes()) {
        let (x, y) = (a.iou(&b), b.iou(&a));
        prop_assert!((x - y).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert!((a.iou(&a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn box_deltas_invert(a in boxes(), b in boxes()) {
        let d = b.deltas_from(&a).unwrap();
        prop_assume!(d[2].abs() < 4.0 && d[3].abs() < 4.0);
        let back = BBox::apply_deltas(&a, &d);
        for (u, v) in [(back.x0, b.x0), (back.y0, b.y0), (back.x1, b.x1), (back.y1, b.y1)] {
            prop_assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn cross_entropy_gradient_sums_to_zero(logits in prop::collection::vec(-20.0f64..20.0, 2..8), pick in any::<prop::sample::Index>()) {
        let label = pick.index(logits.len());
        let (loss, g) = softmax_cross_entropy(&logits, label);
        prop_assert!(loss >= 0.0);
        prop_assert!(g.iter().sum::<f64>().abs() < 1e-12);
        prop_assert!(g[label] <= 0.0);
    }
}

#[test]
fn angle_scale_of_pi_maps_the_value_range_onto_a_half_turn() {
    // RY(pi * v) from |0>: <Z> = cos(pi v), so -1, 0, 1 give -1, 1, -1
    for (v, z) in [(-1.0, -1.0), (0.0, 1.0), (1.0, -1.0), (0.5, 0.0)] {
        let s = encode_row(&[v], &UploadPlan::ry(1)).unwrap();
        assert!((s.expectation_z(0).unwrap() - z).abs() < 1e-12);
    }
    assert_eq!(UploadPlan::ry(1).angle_scale, PI);
}
