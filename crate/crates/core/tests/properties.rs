mod common;

use proptest::prelude::*;

use biasal::attention::attention_from_logits;
use biasal::autograd::Graph;
use biasal::dataio::{quantize, read_checkpoint, synth_generate, write_checkpoint, load_all, SynthOptions};
use biasal::metrics::{evaluate_pair, mae, pr_curve, SaliencyPair};
use biasal::params::ParamStore;
use biasal::tensor::kernels::conv2d;
use biasal::training::{total_loss, Adam, AdamConfig, LossWeights};
use biasal::{ConvSpec, Model, NetConfig, Tensor};

fn pair_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>)> {
    (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
        (
            Just(h),
            Just(w),
            prop::collection::vec(0.0f64..=1.0, h * w),
            prop::collection::vec(prop::bool::ANY.prop_map(|b| b as u8 as f64), h * w),
        )
    })
}

fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, s: &ConvSpec) -> Tensor<f64> {
    let (n, ci, h, wd) = x.dims4().unwrap();
    let (ho, wo) = s.output_size(h, wd).unwrap();
    let co = s.out_channels;
    let mut out = vec![0.0; n * co * ho * wo];
    for bi in 0..n {
        for o in 0..co {
            for r in 0..ho {
                for c in 0..wo {
                    let mut acc = b.data()[o];
                    for i in 0..ci {
                        for kr in 0..s.kernel.0 {
                            for kc in 0..s.kernel.1 {
                                let y = (r * s.stride.0 + kr * s.dilation.0) as isize - s.padding.0 as isize;
                                let xx = (c * s.stride.1 + kc * s.dilation.1) as isize - s.padding.1 as isize;
                                if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((bi * ci + i) * h + y as usize) * wd + xx as usize];
                                let wv = w.data()[((o * ci + i) * s.kernel.0 + kr) * s.kernel.1 + kc];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((bi * co + o) * ho + r) * wo + c] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, co, ho, wo], out).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mae_symmetric_under_inversion((h, w, pred, gt) in pair_strategy()) {
        let a = SaliencyPair::new(h, w, pred.clone(), gt.clone()).unwrap();
        let inv = |v: &[f64]| v.iter().map(|x| 1.0 - x).collect::<Vec<_>>();
        let b = SaliencyPair::new(h, w, inv(&pred), inv(&gt)).unwrap();
        prop_assert!((mae(&a) - mae(&b)).abs() < 1e-12);
    }

    #[test]
    fn recall_non_increasing_and_precision_bounded((h, w, pred, gt) in pair_strategy()) {
        let pair = SaliencyPair::new(h, w, pred, gt).unwrap();
        let curve = pr_curve(&pair);
        prop_assert_eq!(curve.recall.len(), 256);
        for k in 1..256 {
            prop_assert!(curve.recall[k] <= curve.recall[k - 1]);
        }
        prop_assert!(curve.precision.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn every_metric_in_unit_interval((h, w, pred, gt) in pair_strategy()) {
        let pair = SaliencyPair::new(h, w, pred, gt).unwrap();
        let ev = evaluate_pair(&pair);
        for v in ev.report.values() {
            prop_assert!((0.0..=1.0).contains(&v), "{:?}", ev.report);
        }
        prop_assert!(ev.e_curve.iter().chain(&ev.f_curve).all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn binary_predictions_are_threshold_invariant((h, w, _p, gt) in pair_strategy(), bits in prop::collection::vec(prop::bool::ANY, 144)) {
        let pred: Vec<f64> = bits[..h * w].iter().map(|&b| b as u8 as f64).collect();
        let pair = SaliencyPair::new(h, w, pred, gt).unwrap();
        let ev = evaluate_pair(&pair);
        // every threshold in (0, 1] splits a 0/1 map identically
        for k in 2..256 {
            prop_assert_eq!(ev.pr.precision[k], ev.pr.precision[1]);
            prop_assert_eq!(ev.pr.recall[k], ev.pr.recall[1]);
            prop_assert_eq!(ev.e_curve[k], ev.e_curve[1]);
        }
    }

    #[test]
    fn bce_is_non_negative(vals in prop::collection::vec((0.0f64..=1.0, prop::bool::ANY), 1..50)) {
        let n = vals.len();
        let mut g = Graph::<f64>::new();
        let p = g.constant(Tensor::new(vec![n], vals.iter().map(|v| v.0).collect()).unwrap());
        let t = g.constant(Tensor::new(vec![n], vals.iter().map(|v| v.1 as u8 as f64).collect()).unwrap());
        let l = g.bce(p, t).unwrap();
        prop_assert!(g.value(l).item().unwrap() >= 0.0);
    }

    #[test]
    fn attention_pair_sums_to_one(logits in prop::collection::vec(-60.0f32..60.0, 1..64)) {
        let n = logits.len();
        let mut g = Graph::<f32>::new();
        let s = g.constant(Tensor::new(vec![1, 1, 1, n], logits).unwrap());
        let pair = attention_from_logits(&mut g, s).unwrap();
        for (f, b) in g.value(pair.fg).data().iter().zip(g.value(pair.bg).data()) {
            prop_assert!((f + b - 1.0).abs() < 1e-6);
            prop_assert!((0.0..=1.0).contains(f));
        }
    }

    #[test]
    fn concat_then_slice_recovers_parts(c1 in 1usize..5, c2 in 1usize..5, n in 1usize..3, h in 1usize..5, w in 1usize..5) {
        let a = Tensor::<f32>::from_fn(&[n, c1, h, w], |i| i as f32);
        let b = Tensor::<f32>::from_fn(&[n, c2, h, w], |i| -(i as f32) - 0.5);
        let cat = Tensor::concat_channels(&[&a, &b]).unwrap();
        prop_assert_eq!(cat.slice_channels(0, c1).unwrap(), a);
        prop_assert_eq!(cat.slice_channels(c1, c2).unwrap(), b);
    }

    #[test]
    fn conv_matches_direct_sum(
        ci in 1usize..4, co in 1usize..4, k in 1usize..4, stride in 1usize..3,
        pad in 0usize..3, dil in 1usize..4, h in 4usize..10, w in 4usize..10, seed in 0u64..1000,
    ) {
        let mut spec = ConvSpec::same(ci, co, k);
        spec.stride = (stride, stride);
        spec.padding = (pad, pad);
        spec.dilation = (dil, dil);
        prop_assume!(spec.output_size(h, w).is_ok());
        let hash = |i: usize, salt: u64| (((i as u64 + 1) * 2654435761 + seed * 97 + salt) % 1997) as f64 / 1997.0 - 0.5;
        let x = Tensor::from_fn(&[2, ci, h, w], |i| hash(i, 1));
        let wt = Tensor::from_fn(&spec.weight_shape(), |i| hash(i, 2));
        let b = Tensor::from_fn(&[co], |i| hash(i, 3));
        let fast = conv2d(&x, &wt, Some(&b), &spec).unwrap();
        let slow = naive_conv(&x, &wt, &b, &spec);
        prop_assert_eq!(fast.shape(), slow.shape());
        prop_assert!(fast.max_abs_diff(&slow) < 1e-12);
    }

    #[test]
    fn adam_first_step_is_bounded_and_zero_gradient_is_fixed(
        grads in prop::collection::vec(-1e3f64..1e3, 1..20), lr in 1e-6f64..1e-1,
    ) {
        let n = grads.len();
        let mut store = ParamStore::<f64>::new();
        store.add("p", Tensor::from_fn(&[n], |i| i as f64)).unwrap();
        let before = store.clone();
        let config = AdamConfig { lr, ..AdamConfig::default() };

        let mut still = store.clone();
        let mut opt = Adam::new(config, &still);
        opt.step(&mut still, &[Tensor::zeros(&[n])]).unwrap();
        prop_assert_eq!(&still, &before);

        let mut opt = Adam::new(config, &store);
        opt.step(&mut store, &[Tensor::new(vec![n], grads.clone()).unwrap()]).unwrap();
        for ((a, b), g) in store.by_name("p").unwrap().data().iter().zip(before.by_name("p").unwrap().data()).zip(&grads) {
            let delta = a - b;
            prop_assert!(delta.abs() <= lr * (1.0 + 1e-9));
            prop_assert!(delta * g <= 0.0);
        }
    }

    #[test]
    fn quantize_inverts_level_scaling(level in 0u8..=255) {
        prop_assert_eq!(quantize(level as f32 / 255.0), level);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn total_loss_is_weighted_sum_of_terms(seed in 0u64..1000, weights in prop::collection::vec(0.0f64..3.0, 8)) {
        let model = Model::<f64>::new(&NetConfig { input_size: (32, 32), ..NetConfig::toy() }, seed).unwrap();
        let mut g = Graph::<f64>::new();
        let p = model.params.bind_frozen(&mut g);
        let hash = |i: usize| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 1000.0;
        let rgb = g.constant(Tensor::from_fn(&[1, 3, 32, 32], hash));
        let depth = g.constant(Tensor::from_fn(&[1, 3, 32, 32], |i| hash(i + 7)));
        let gt = g.constant(Tensor::from_fn(&[1, 1, 32, 32], |i| (hash(i + 3) > 0.5) as u8 as f64));
        let out = model.net.forward(&mut g, &p, rgb, depth).unwrap();
        let w = LossWeights {
            side: weights[..6].try_into().unwrap(),
            depth: weights[6],
            rgb: weights[7],
        };
        let loss = total_loss(&mut g, &out, gt, &w).unwrap();
        prop_assert_eq!(loss.terms.len(), 8);
        let ws: Vec<f64> = w.side.iter().copied().chain([w.depth, w.rgb]).collect();
        let want: f64 = loss.terms.iter().zip(&ws).map(|(&t, w)| w * g.value(t).item().unwrap()).sum();
        let got = g.value(loss.total).item().unwrap();
        prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
        prop_assert!(loss.terms.iter().all(|&t| g.value(t).item().unwrap() >= 0.0));
    }

    #[test]
    fn checkpoint_round_trip_is_exact(seed in 0u64..1000, mbam in 0usize..=5, depth in prop::bool::ANY) {
        let mut cfg = NetConfig::toy().with_mbam(mbam);
        cfg.ablation.depth_stream = depth;
        let model = Model::<f32>::new(&cfg, seed).unwrap();
        let back = read_checkpoint(&write_checkpoint(&model).unwrap()).unwrap();
        prop_assert_eq!(back.config(), model.config());
        prop_assert_eq!(&back.params, &model.params);
    }

    #[test]
    fn synthetic_foreground_is_closer(seed in 0u64..10_000) {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_generate(&SynthOptions { seed, count: 2, size: (32, 48) }, dir.path()).unwrap();
        for s in load_all(&manifest, (32, 48)).unwrap() {
            let plane = &s.depth.data()[..32 * 48];
            let (mut fg, mut nf, mut bg, mut nb) = (0.0, 0, 0.0, 0);
            for (&d, &g) in plane.iter().zip(s.gt.data()) {
                if g > 0.5 { fg += d; nf += 1 } else { bg += d; nb += 1 }
            }
            prop_assert!(nf > 0 && nb > 0);
            prop_assert!(fg / (nf as f32) < bg / (nb as f32));
        }
    }
}
