//! Finite-difference verification of the reverse-mode gradients.
//!
//! A function of several input tensors is reduced to a scalar by a fixed
//! random projection `L = Σ w ⊙ y`. Analytic gradients of `L` are compared
//! with central differences `(L(x+ε) − L(x−ε)) / 2ε`, per input, using the
//! max-norm relative error `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞)`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::attention::{AttentionMode, ResidualKind, ResidualModule};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, Initializer, ParamStore};
use crate::tensor::{ConvSpec, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tolerance: f64,
    /// Checks at most this many randomly chosen entries per input...
    pub max_entries: Option<usize>,
    /// ...except for the first `always_full` inputs, which are checked in full.
    pub always_full: usize,
    /// Seeds the projection weights and entry sampling.
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            tolerance: 1e-4,
            max_entries: None,
            always_full: 0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Relative error per input, in input order.
    pub per_input: Vec<f64>,
    pub max_rel_error: f64,
    pub entries_checked: usize,
    pub passed: bool,
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    let scale = analytic.iter().chain(numeric).map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn projected<F>(f: &F, inputs: &[Tensor<f64>], weights: &mut Option<Tensor<f64>>, rng: &mut ChaCha8Rng, track: bool) -> Result<(f64, Vec<Tensor<f64>>)>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf_ref(t, track)).collect();
    let y = f(&mut g, &vars)?;
    let w = weights.get_or_insert_with(|| {
        let shape = g.value(y).shape().to_vec();
        Tensor::from_fn(&shape, |_| rng.sample::<f64, _>(StandardNormal))
    });
    let dot: f64 = g.value(y).data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
    if !track {
        return Ok((dot, Vec::new()));
    }
    let wv = g.constant(w.clone());
    let prod = g.mul(y, wv)?;
    let loss = g.sum(prod)?;
    let grads = g.backward(loss)?;
    Ok((dot, vars.iter().map(|&v| grads.wrt(&g, v)).collect()))
}

/// Compares analytic and numeric gradients of `f` at `inputs`.
pub fn grad_check<F>(inputs: &[Tensor<f64>], f: F, config: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights = None;
    let (_, analytic) = projected(&f, inputs, &mut weights, &mut rng, true)?;
    let mut work = inputs.to_vec();
    let mut per_input = Vec::with_capacity(inputs.len());
    let mut checked = 0;
    for i in 0..inputs.len() {
        let n = inputs[i].numel();
        let entries: Vec<usize> = match config.max_entries {
            Some(k) if k < n && i >= config.always_full => {
                let mut idx = sample(&mut rng, n, k).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..n).collect(),
        };
        let mut a = Vec::with_capacity(entries.len());
        let mut num = Vec::with_capacity(entries.len());
        for &e in &entries {
            let x0 = inputs[i].data()[e];
            work[i].data_mut()[e] = x0 + config.eps;
            let (plus, _) = projected(&f, &work, &mut weights, &mut rng, false)?;
            work[i].data_mut()[e] = x0 - config.eps;
            let (minus, _) = projected(&f, &work, &mut weights, &mut rng, false)?;
            work[i].data_mut()[e] = x0;
            num.push((plus - minus) / (2.0 * config.eps));
            a.push(analytic[i].data()[e]);
        }
        checked += entries.len();
        per_input.push(relative_error(&a, &num));
    }
    let max_rel_error = per_input.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        passed: max_rel_error <= config.tolerance,
        per_input,
        max_rel_error,
        entries_checked: checked,
    })
}

/// Shifts the bias feeding every ReLU so no pre-activation lies within
/// `margin` of zero, keeping finite differences off the kink. Each channel
/// is moved by the smallest amount that centres zero in the widest gap of
/// its central 20–80% pre-activation quantiles, so units stay mixed
/// active/inactive. ReLUs are processed in graph order because upstream
/// shifts change downstream inputs. Returns the smallest half-gap achieved.
pub fn separate_relu_kinks<F>(store: &mut ParamStore<f64>, forward: F) -> Result<f64>
where
    F: Fn(&mut Graph<'_, f64>, &Bound) -> Result<Var>,
{
    let count = {
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        forward(&mut g, &p)?;
        g.relu_inputs().len()
    };
    let mut worst = f64::INFINITY;
    for r in 0..count {
        let (pre, shift_target) = {
            let mut g = Graph::new();
            let p = store.bind_frozen(&mut g);
            forward(&mut g, &p)?;
            let (x, bias) = g.relu_inputs()[r];
            let target = bias.and_then(|b| p.param_of(b));
            (g.value(x).clone(), target)
        };
        let Some(id) = shift_target else { continue };
        let (n, c, h, w) = pre.dims4()?;
        let plane = h * w;
        for ch in 0..c {
            let mut v: Vec<f64> = (0..n)
                .flat_map(|b| pre.data()[(b * c + ch) * plane..(b * c + ch + 1) * plane].iter().copied())
                .collect();
            v.sort_by(f64::total_cmp);
            let lo = (v.len() as f64 * 0.2) as usize;
            let hi = ((v.len() as f64 * 0.8) as usize).max(lo + 1).min(v.len() - 1);
            let (mut best_gap, mut centre) = (0.0, v[v.len() / 2]);
            for k in lo..hi {
                let gap = v[k + 1] - v[k];
                if gap > best_gap {
                    best_gap = gap;
                    centre = 0.5 * (v[k] + v[k + 1]);
                }
            }
            if v.len() == 1 {
                centre = v[0] - 0.1_f64.copysign(v[0]);
                best_gap = 0.2;
            }
            store.get_mut(id).data_mut()[ch] -= centre;
            worst = worst.min(best_gap / 2.0);
        }
    }
    Ok(worst)
}

/// Outcome of one suite case over all seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub seeds: usize,
    pub worst_rel_error: f64,
    pub entries_checked: usize,
    pub passed: bool,
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| std * rng.sample::<f64, _>(StandardNormal))
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values that differ pairwise by at least `gap`, in random order.
fn separated(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
    Tensor::new(shape.to_vec(), order.iter().map(|&k| k as f64 * gap - 0.5).collect()).unwrap()
}

/// Values bounded away from zero by `margin`.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize], margin: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(margin..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

type Build = fn(&mut ChaCha8Rng, &GradCheckConfig) -> Result<GradCheckReport>;

fn conv_case(rng: &mut ChaCha8Rng, cfg: &GradCheckConfig, spec: ConvSpec, size: (usize, usize)) -> Result<GradCheckReport> {
    let x = normal(rng, &[2, spec.in_channels, size.0, size.1], 1.0);
    let w = normal(rng, &spec.weight_shape(), 0.5);
    let b = normal(rng, &[spec.out_channels], 0.5);
    grad_check(&[x, w, b], move |g, v| g.conv2d(v[0], v[1], Some(v[2]), &spec), cfg)
}

fn residual_case(rng: &mut ChaCha8Rng, cfg: &GradCheckConfig, kind: ResidualKind, channels: usize) -> Result<GradCheckReport> {
    let mut store = ParamStore::<f64>::new();
    let module = {
        let mut init = Initializer::new(&mut store, rng.random());
        ResidualModule::new(&mut init, "m", kind, AttentionMode::Bilateral, channels)?
    };
    // Non-zero head weights so every parameter influences the output.
    for id in module.head.out.param_ids() {
        let t = store.get_mut(id);
        let fresh = normal(rng, t.shape(), 0.3);
        *t = fresh;
    }
    let feature = uniform(rng, &[1, channels, 8, 8], 0.0, 1.0);
    let s_next = normal(rng, &[1, 1, 4, 4], 1.5);
    {
        let (f, s) = (feature.clone(), s_next.clone());
        let m = &module;
        separate_relu_kinks(&mut store, |g, p| {
            let fv = g.constant(f.clone());
            let sv = g.constant(s.clone());
            m.forward(g, p, fv, sv)
        })?;
    }
    let mut inputs = vec![feature, s_next];
    inputs.extend(store.iter().map(|(_, t)| t.clone()));
    // Full coverage of the module inputs, sampled coverage of the weights.
    let cfg = GradCheckConfig {
        max_entries: Some(24),
        always_full: 2,
        ..*cfg
    };
    grad_check(
        &inputs,
        |g, v| module.forward(g, &Bound::from_vars(v[2..].to_vec()), v[0], v[1]),
        &cfg,
    )
}

fn suite_cases() -> Vec<(&'static str, Build)> {
    vec![
        ("conv2d", |r, c| conv_case(r, c, ConvSpec::same(3, 4, 3), (6, 7))),
        ("conv2d_1x1", |r, c| conv_case(r, c, ConvSpec::same(5, 3, 1), (5, 5))),
        ("conv2d_strided", |r, c| {
            conv_case(r, c, ConvSpec::same(2, 3, 5).with_padding(1, 2).with_stride(2, 2), (9, 8))
        }),
        ("conv2d_dilation3", |r, c| conv_case(r, c, ConvSpec::dilated3x3(2, 3, 3), (8, 8))),
        ("conv2d_dilation5", |r, c| conv_case(r, c, ConvSpec::dilated3x3(2, 3, 5), (8, 8))),
        ("conv2d_dilation7", |r, c| conv_case(r, c, ConvSpec::dilated3x3(2, 3, 7), (8, 8))),
        ("max_pool", |r, c| {
            let x = separated(r, &[2, 3, 6, 8], 0.01);
            grad_check(&[x], |g, v| g.max_pool2d(v[0]), c)
        }),
        ("upsample_bilinear", |r, c| {
            let x = normal(r, &[1, 2, 3, 5], 1.0);
            grad_check(&[x], |g, v| g.upsample_bilinear(v[0], 7, 9), c)
        }),
        ("upsample_bilinear_2x", |r, c| {
            let x = normal(r, &[2, 2, 4, 4], 1.0);
            grad_check(&[x], |g, v| g.upsample_bilinear(v[0], 8, 8), c)
        }),
        ("sigmoid", |r, c| {
            let x = normal(r, &[2, 3, 4, 4], 2.0);
            grad_check(&[x], |g, v| g.sigmoid(v[0]), c)
        }),
        ("relu", |r, c| {
            let x = off_zero(r, &[2, 3, 4, 4], 0.01);
            grad_check(&[x], |g, v| g.relu(v[0]), c)
        }),
        ("concat", |r, c| {
            let a = normal(r, &[2, 2, 3, 3], 1.0);
            let b = normal(r, &[2, 3, 3, 3], 1.0);
            grad_check(&[a, b], |g, v| g.concat_channels(&[v[0], v[1]]), c)
        }),
        ("eltwise_broadcast", |r, c| {
            let a = normal(r, &[1, 3, 4, 4], 1.0);
            let b = normal(r, &[1, 1, 4, 4], 1.0);
            grad_check(&[a, b], |g, v| g.mul(v[0], v[1]), c)
        }),
        ("bce", |r, c| {
            let x = uniform(r, &[1, 1, 5, 5], 0.05, 0.95);
            let y = Tensor::from_fn(&[1, 1, 5, 5], |_| r.random_bool(0.5) as u8 as f64);
            grad_check(
                &[x],
                move |g, v| {
                    let t = g.constant(y.clone());
                    g.bce(v[0], t)
                },
                c,
            )
        }),
        ("bam_block", |r, c| residual_case(r, c, ResidualKind::Bam, 8)),
        ("mbam_block", |r, c| residual_case(r, c, ResidualKind::Mbam, 4)),
    ]
}

pub fn suite_case_names() -> Vec<&'static str> {
    suite_cases().into_iter().map(|(n, _)| n).collect()
}

/// Runs every case over `seeds` random seeds (derived from `base_seed`).
/// `only` restricts the run to cases whose name contains the string.
pub fn run_suite(seeds: usize, base_seed: u64, only: Option<&str>) -> Result<Vec<CaseResult>> {
    if seeds == 0 {
        return Err(Error::Invalid("gradient check needs at least one seed".into()));
    }
    let mut results = Vec::new();
    for (name, build) in suite_cases() {
        if only.is_some_and(|o| !name.contains(o)) {
            continue;
        }
        let outcomes = crate::par::map_indices(seeds, |s| {
            let seed = base_seed.wrapping_mul(1_000_003).wrapping_add(s as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = GradCheckConfig {
                seed,
                ..GradCheckConfig::default()
            };
            build(&mut rng, &cfg)
        });
        let mut worst: f64 = 0.0;
        let mut entries = 0;
        for o in outcomes {
            let o = o?;
            worst = worst.max(o.max_rel_error);
            entries += o.entries_checked;
        }
        results.push(CaseResult {
            name: name.to_string(),
            seeds,
            worst_rel_error: worst,
            entries_checked: entries,
            passed: worst <= GradCheckConfig::default().tolerance,
        });
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_passes_and_error_is_max_norm() {
        let x = Tensor::new(vec![3], vec![0.3, -1.2, 2.0]).unwrap();
        let ok = grad_check(std::slice::from_ref(&x), |g, v| g.mul(v[0], v[0]), &GradCheckConfig::default()).unwrap();
        assert!(ok.passed, "{ok:?}");
        assert!((relative_error(&[1.0, 2.0], &[1.0, 2.2]) - 0.2 / 2.2).abs() < 1e-15);
    }

    #[test]
    fn sampling_limits_entries() {
        let x = Tensor::from_fn(&[1, 1, 6, 6], |i| i as f64 * 0.1);
        let cfg = GradCheckConfig {
            max_entries: Some(5),
            ..GradCheckConfig::default()
        };
        let r = grad_check(&[x], |g, v| g.sigmoid(v[0]), &cfg).unwrap();
        assert_eq!(r.entries_checked, 5);
        assert!(r.passed);
    }

    #[test]
    fn kink_separation_moves_preactivations() {
        let mut store = ParamStore::<f64>::new();
        let conv = {
            let mut init = Initializer::new(&mut store, 3);
            init.conv("c", ConvSpec::same(2, 3, 3), crate::params::Gain::Relu).unwrap()
        };
        let x = Tensor::from_fn(&[1, 2, 6, 6], |i| ((i * 37) % 11) as f64 / 11.0 - 0.5);
        let fwd = |g: &mut Graph<'_, f64>, p: &Bound| {
            let xv = g.constant(x.clone());
            conv.forward_relu(g, p, xv)
        };
        let half_gap = separate_relu_kinks(&mut store, fwd).unwrap();
        assert!(half_gap > 0.0);
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        fwd(&mut g, &p).unwrap();
        let (pre, _) = g.relu_inputs()[0];
        let min_abs = g.value(pre).data().iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        assert!(min_abs >= half_gap * 0.999);
    }

    #[test]
    fn quick_suite_passes() {
        for case in run_suite(2, 11, None).unwrap() {
            assert!(case.passed, "{case:?}");
        }
    }
}
