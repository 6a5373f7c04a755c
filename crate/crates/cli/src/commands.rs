use std::fmt::Write as _;
use std::path::Path;

use biasal::backbone::BackboneConfig;
use biasal::config::RunConfig;
use biasal::cost::{bench_throughput, count_cost, CostReport};
use biasal::dataio::{load_all, load_checkpoint, load_sample, save_saliency, synth_generate, Manifest, SynthOptions};
use biasal::gradcheck::run_suite;
use biasal::metrics::{evaluate_dataset, write_pr_csv, write_pr_svg, write_report_csv, MaxMode};
use biasal::training::{dataset_mae, train_loop, TrainOutputs};
use biasal::{par, Error, Model, NetConfig, Result};
use log::info;

use crate::args::{BenchArgs, Command, EvalArgs, GradcheckArgs, InferArgs, MaxModeArg, NetArgs, ReportArgs, SynthArgs, TrainArgs};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Report(a) => report(a),
    }
}

fn load_run_config(args: &NetArgs) -> Result<RunConfig> {
    match &args.config {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    }
}

/// Network from the config file (or the full preset), then flag overrides.
pub fn resolve_net(args: &NetArgs, file: &RunConfig) -> Result<NetConfig> {
    let mut cfg = file.net.clone().unwrap_or_else(NetConfig::full);
    if args.toy {
        cfg.backbone = BackboneConfig::toy();
        cfg.input_size = NetConfig::toy().input_size;
    }
    if let Some(k) = args.mbam {
        cfg.mbam_count = k as usize;
    }
    if args.no_depth {
        cfg.ablation.depth_stream = false;
    }
    let branches = if args.ff_only {
        Some((true, false))
    } else if args.bf_only {
        Some((false, true))
    } else if args.plain_conv {
        Some((false, false))
    } else {
        None
    };
    if let Some((ff, bf)) = branches {
        cfg.ablation.ff = ff;
        cfg.ablation.bf = bf;
    }
    if let Some(s) = &args.input_size {
        cfg.input_size = (s[0], s[1]);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn synth(a: SynthArgs) -> Result<()> {
    let options = SynthOptions {
        seed: a.seed,
        count: a.n as usize,
        size: (a.size[0], a.size[1]),
    };
    let manifest = synth_generate(&options, &a.out)?;
    println!("wrote {} samples to {}", manifest.len(), a.out.join("manifest.csv").display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let file = load_run_config(&a.net)?;
    let net = resolve_net(&a.net, &file)?;
    let mut cfg = file.train.clone().unwrap_or_default();
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b as usize;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if a.steps.is_some() {
        cfg.max_steps = a.steps;
    }
    if let Some(lr) = a.lr {
        cfg.adam.lr = lr;
    }
    if let Some(c) = a.checkpoint_every {
        cfg.checkpoint_every = Some(c as usize);
    }
    cfg.validate()?;
    let manifest = Manifest::load(&a.manifest)?;
    let samples = load_all(&manifest, net.input_size)?;
    let mut model = Model::<f32>::new(&net, cfg.seed)?;
    info!("training {} parameters on {} samples", model.param_count(), samples.len());
    let outputs = TrainOutputs { dir: a.out.clone() };
    let log = train_loop(&cfg, &samples, &mut model, Some(&outputs))?;
    let used = RunConfig {
        net: Some(net),
        train: Some(cfg),
    };
    let path = a.out.join("config.toml");
    std::fs::write(&path, used.to_text()?).map_err(|e| Error::Io { path: path.clone(), source: e })?;
    let last = log.records.last().map(|r| r.total_loss).unwrap_or(f64::NAN);
    println!(
        "steps {} final loss {last:.6} train MAE {:.4}",
        log.records.len(),
        dataset_mae(&model, &samples)?
    );
    println!("checkpoint {}", outputs.final_checkpoint().display());
    println!("loss log {}", outputs.loss_csv().display());
    Ok(())
}

fn infer(a: InferArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let manifest = Manifest::load(&a.manifest)?;
    let size = model.config().input_size;
    for row in &manifest.rows {
        let s = load_sample(row, size)?;
        let map = model.predict(&s.rgb, &s.depth)?;
        save_saliency(&map, s.original_size, &a.out.join(format!("{}.png", row.name)))?;
    }
    println!("wrote {} maps to {}", manifest.len(), a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let mode = match a.max_mode {
        MaxModeArg::MeanCurve => MaxMode::MeanCurve,
        MaxModeArg::PerImageMax => MaxMode::PerImageMax,
    };
    let outcome = evaluate_dataset(&manifest, &a.pred, mode)?;
    for (name, err) in &outcome.failures {
        eprintln!("{name}: {err}");
    }
    if let Some(d) = &outcome.dataset {
        write_report_csv(&a.out.join("report.csv"), &outcome.images, d)?;
        write_pr_csv(&a.out.join("pr.csv"), &d.precision, &d.recall)?;
        write_pr_svg(&a.out.join("pr.svg"), &d.precision, &d.recall)?;
        let r = &d.report;
        println!("images {} (empty ground truth: {})", d.images, d.empty_gt);
        println!(
            "S_alpha {:.4} maxF {:.4} meanF {:.4} adpF {:.4} maxE {:.4} meanE {:.4} adpE {:.4} MAE {:.4}",
            r.s_alpha, r.max_f, r.mean_f, r.adp_f, r.max_e, r.mean_e, r.adp_e, r.mae
        );
        println!("report {}", a.out.join("report.csv").display());
    }
    if !outcome.failures.is_empty() {
        return Err(Error::Invalid(format!("{} of {} images could not be evaluated", outcome.failures.len(), manifest.len())));
    }
    Ok(())
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
}

fn bench(a: BenchArgs) -> Result<()> {
    let net = resolve_net(&a.net, &load_run_config(&a.net)?)?;
    let t = par::with_threads(a.threads, || bench_throughput(&net, a.warmup, a.iters as usize, a.seed))?;
    println!(
        "{}x{} mbam {}: {:.2} img/s, mean {:.2} ms, std {:.2} ms, p50 {:.2} ms, p95 {:.2} ms over {} runs",
        net.input_size.0, net.input_size.1, net.mbam_count, t.images_per_sec, t.mean_ms, t.std_ms, t.p50_ms, t.p95_ms, t.iters
    );
    if let Some(dir) = &a.out {
        let text = format!(
            "iters,mean_ms,std_ms,p50_ms,p95_ms,images_per_sec\n{},{:.4},{:.4},{:.4},{:.4},{:.4}\n",
            t.iters, t.mean_ms, t.std_ms, t.p50_ms, t.p95_ms, t.images_per_sec
        );
        write_text(dir, "bench.csv", &text)?;
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let results = run_suite(a.seeds as usize, a.seed, a.case.as_deref())?;
    if results.is_empty() {
        return Err(Error::Invalid(format!("no gradient-check case matches {:?}", a.case.unwrap_or_default())));
    }
    let mut failed = 0;
    for r in &results {
        println!(
            "{:<22} seeds {:>3} entries {:>7} max rel err {:.3e} {}",
            r.name,
            r.seeds,
            r.entries_checked,
            r.worst_rel_error,
            if r.passed { "ok" } else { "FAIL" }
        );
        failed += !r.passed as usize;
    }
    if failed > 0 {
        return Err(Error::Invalid(format!("{failed} gradient-check case(s) failed")));
    }
    Ok(())
}

fn cost_line(out: &mut String, label: &str, c: &CostReport) {
    writeln!(
        out,
        "{label},{},{},{},{:.2},{:.2}",
        c.param_count,
        c.mac_count,
        c.flop_estimate,
        c.param_count as f64 / 1e6,
        c.mac_count as f64 / 1e9
    )
    .unwrap();
}

fn report(a: ReportArgs) -> Result<()> {
    let net = resolve_net(&a.net, &load_run_config(&a.net)?)?;
    let mut csv = String::from("config,params,macs,flops,params_M,macs_G\n");
    let configs: Vec<NetConfig> = if a.sweep {
        (0..=5).map(|k| net.clone().with_mbam(k)).collect()
    } else {
        vec![net]
    };
    for cfg in &configs {
        let c = count_cost(cfg)?;
        println!(
            "mbam x{} at {}x{}: params {} ({:.2}M), MACs {} ({:.2}G), FLOPs {} ({:.2}G)",
            cfg.mbam_count,
            c.input_size.0,
            c.input_size.1,
            c.param_count,
            c.param_count as f64 / 1e6,
            c.mac_count,
            c.mac_count as f64 / 1e9,
            c.flop_estimate,
            c.flop_estimate as f64 / 1e9
        );
        cost_line(&mut csv, &format!("x{}", cfg.mbam_count), &c);
    }
    if let Some(dir) = &a.out {
        write_text(dir, "cost.csv", &csv)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file = RunConfig {
            net: Some(NetConfig::full().with_mbam(1)),
            train: None,
        };
        let args = NetArgs {
            toy: true,
            mbam: Some(4),
            bf_only: true,
            ..NetArgs::default()
        };
        let cfg = resolve_net(&args, &file).unwrap();
        assert_eq!(cfg.mbam_count, 4);
        assert_eq!(cfg.input_size, (64, 64));
        assert!(!cfg.ablation.ff && cfg.ablation.bf);
        assert_eq!(resolve_net(&NetArgs::default(), &file).unwrap().mbam_count, 1);
        let bad = NetArgs {
            input_size: Some(vec![60, 64]),
            ..NetArgs::default()
        };
        assert!(resolve_net(&bad, &file).is_err());
    }
}
