//! Parameter and multiply-accumulate accounting, and forward-pass
//! throughput measurement.
//!
//! [`count_cost`] walks the architecture described by a [`NetConfig`]
//! without building it. Tests compare it with the parameter count of a
//! constructed model and the MACs a forward pass actually executes.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::{ResidualKind, ATTENTION_WIDTH, MBAM_DILATIONS};
use crate::backbone::LEVELS;
use crate::error::{Error, Result};
use crate::network::{Model, NetConfig};
use crate::tensor::{ConvSpec, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub param_count: u64,
    /// Multiply-accumulates of one forward pass at `input_size`.
    pub mac_count: u64,
    /// `2 · mac_count`.
    pub flop_estimate: u64,
    pub input_size: (usize, usize),
}

#[derive(Default)]
struct Tally {
    params: u64,
    macs: u64,
}

impl Tally {
    fn conv(&mut self, spec: ConvSpec, size: (usize, usize)) -> Result<()> {
        self.params += spec.param_count();
        self.macs += spec.macs(size.0, size.1)?;
        Ok(())
    }
}

/// Closed-form cost: Σ(k²·Ci·Co + Co) parameters and Σ k²·Ci·Co·H'·W' MACs.
pub fn count_cost(config: &NetConfig) -> Result<CostReport> {
    config.validate()?;
    let (h, w) = config.input_size;
    let at = |level: usize| (h >> (level - 1), w >> (level - 1));
    let bb = &config.backbone;
    let streams = if config.ablation.depth_stream { 2 } else { 1 };
    let fused = |level: usize| streams * bb.level_width(level);
    let mut t = Tally::default();

    for _ in 0..streams {
        let mut ci = 3;
        for (b, (&width, &depth)) in bb.block_widths.iter().zip(&bb.block_depths).enumerate() {
            for _ in 0..depth {
                t.conv(ConvSpec::same(ci, width, 3), at(b + 1))?;
                ci = width;
            }
        }
        let e = bb.extra_group_width;
        t.conv(ConvSpec::same(ci, e, 3), at(LEVELS))?;
        t.conv(ConvSpec::same(e, e, 3), at(LEVELS))?;
        t.conv(ConvSpec::same(e, 1, 3), at(LEVELS))?;
    }

    t.conv(ConvSpec::same(fused(LEVELS), ATTENTION_WIDTH, 3), at(LEVELS))?;
    t.conv(ConvSpec::same(ATTENTION_WIDTH, 1, 3), at(LEVELS))?;

    let sides = config.ablation.mode().sides().len();
    for level in 1..=5 {
        let ci = fused(level);
        let size = at(level);
        let branch_width = match config.level_kind(level) {
            ResidualKind::Bam => {
                t.conv(ConvSpec::same(ci, ATTENTION_WIDTH, 1), size)?;
                for _ in 0..sides {
                    t.conv(ConvSpec::same(ATTENTION_WIDTH, ATTENTION_WIDTH, 3), size)?;
                }
                ATTENTION_WIDTH
            }
            ResidualKind::Mbam => {
                for _ in 0..sides {
                    t.conv(ConvSpec::same(ci, ATTENTION_WIDTH, 1), size)?;
                    for &rate in &MBAM_DILATIONS {
                        t.conv(ConvSpec::dilated3x3(ci, ATTENTION_WIDTH, rate), size)?;
                    }
                }
                ATTENTION_WIDTH * (1 + MBAM_DILATIONS.len())
            }
        };
        t.conv(ConvSpec::same(sides * branch_width, ATTENTION_WIDTH, 3), size)?;
        t.conv(ConvSpec::same(ATTENTION_WIDTH, 1, 3), size)?;
    }

    Ok(CostReport {
        param_count: t.params,
        mac_count: t.macs,
        flop_estimate: 2 * t.macs,
        input_size: config.input_size,
    })
}

/// Wall-clock statistics of repeated single-image forward passes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Throughput {
    pub iters: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub images_per_sec: f64,
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

pub fn summarize(latencies_ms: &[f64]) -> Result<Throughput> {
    if latencies_ms.is_empty() {
        return Err(Error::Invalid("no timing samples".into()));
    }
    let n = latencies_ms.len() as f64;
    let mean = latencies_ms.iter().sum::<f64>() / n;
    let std = if latencies_ms.len() > 1 {
        (latencies_ms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = latencies_ms.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Throughput {
        iters: latencies_ms.len(),
        mean_ms: mean,
        std_ms: std,
        p50_ms: percentile(&sorted, 50.0),
        p95_ms: percentile(&sorted, 95.0),
        images_per_sec: 1000.0 / mean,
    })
}

/// Times `iters` inference passes of a freshly initialized model on a random
/// RGB-D pair after `warmup` untimed passes.
pub fn bench_throughput(config: &NetConfig, warmup: usize, iters: usize, seed: u64) -> Result<Throughput> {
    if iters == 0 {
        return Err(Error::Invalid("bench needs at least one timed iteration".into()));
    }
    let model = Model::<f32>::new(config, seed)?;
    bench_model(&model, warmup, iters, seed)
}

pub fn bench_model(model: &Model<f32>, warmup: usize, iters: usize, seed: u64) -> Result<Throughput> {
    if iters == 0 {
        return Err(Error::Invalid("bench needs at least one timed iteration".into()));
    }
    let (h, w) = model.config().input_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rgb = Tensor::from_fn(&[1, 3, h, w], |_| rng.random::<f32>());
    let depth = Tensor::from_fn(&[1, 3, h, w], |_| rng.random::<f32>());
    for _ in 0..warmup {
        model.predict(&rgb, &depth)?;
    }
    let mut times = Vec::with_capacity(iters);
    for _ in 0..iters {
        let start = Instant::now();
        model.predict(&rgb, &depth)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    summarize(&times)
}
