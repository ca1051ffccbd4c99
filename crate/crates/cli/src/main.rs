use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cbe_core::harness::{
    emit_summary, run_experiment, run_replica, write_grid_dump, ExperimentConfig, OutputFormat, ReplicaParams,
    RunOptions, SummaryOutput, WORKERS_ENV,
};
use cbe_core::opuc::dyadic_checkpoints;
use cbe_core::walks::{
    ballot_prob, envelope, envelope_event_prob, envelope_event_prob_direct, girsanov_pair, Clock, Estimate,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser)]
#[command(name = "cbe", version, about = "Circular beta ensemble experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the ensemble ladder and summarise the extreme statistics.
    Extremes(RunArgs),
    /// Run with the auxiliary field and report coupling residuals and S/T diagnostics.
    Diagnostics {
        #[command(flatten)]
        run: RunArgs,
        /// Also write binary grid dumps of replica 0 of every cell.
        #[arg(long)]
        dump: bool,
    },
    /// Random-walk experiments; prints one JSON object.
    Walks(WalkArgs),
    /// Summarise an existing record stream.
    Summarize {
        /// Record stream (records.jsonl).
        input: PathBuf,
        /// Output directory; defaults to a `summary` directory beside the input.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Flat JSON config; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    beta: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    n_ladder: Option<Vec<usize>>,
    #[arg(long)]
    grid_mult: Option<usize>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<OutputFormat>,
    /// Skip snapshot records at dyadic k.
    #[arg(long)]
    no_checkpoints: bool,
    /// Keep completed units of an interrupted run.
    #[arg(long)]
    resume: bool,
    /// Worker threads (else the environment variable, else all cores).
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::from_json_file(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.beta {
            c.beta_list = v.clone();
        }
        if let Some(v) = &self.n_ladder {
            c.n_ladder = v.clone();
        }
        if let Some(v) = self.grid_mult {
            c.grid_mult = v;
        }
        if let Some(v) = self.replicas {
            c.replicas = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.epsilon {
            c.epsilon = v;
        }
        if let Some(v) = &self.out {
            c.output = v.clone();
        }
        if let Some(v) = self.format {
            c.format = v;
        }
        if self.no_checkpoints {
            c.checkpoints = false;
        }
        c.validate()?;
        Ok(c)
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            resume: self.resume,
            workers: self.workers,
            ..RunOptions::default()
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum WalkKind {
    /// P(W_j >= 0, j = 1..=N).
    Ballot,
    /// Direct and tilted estimates of the drifted envelope event.
    Girsanov,
    /// Envelope probability with the tilted estimator.
    Envelope,
    /// Envelope probability by plain Monte Carlo.
    EnvelopeDirect,
}

#[derive(Args)]
struct WalkArgs {
    #[arg(long, value_enum)]
    kind: WalkKind,
    #[arg(long = "walk-n", default_value_t = 64)]
    big_n: usize,
    #[arg(long, default_value_t = 4)]
    r: usize,
    #[arg(long, default_value_t = 1.0)]
    upsilon: f64,
    /// Scale of the walk inside the envelope.
    #[arg(long, default_value_t = std::f64::consts::FRAC_1_SQRT_2)]
    d: f64,
    /// Start index of the Girsanov event.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    z: f64,
    /// Use the plain index clock instead of the dyadic one.
    #[arg(long)]
    index_clock: bool,
    #[arg(long, default_value_t = 100_000)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn est_json(e: &Estimate) -> serde_json::Value {
    json!({ "estimate": e.estimate, "stderr": e.stderr })
}

fn walks(a: &WalkArgs) -> Result<serde_json::Value> {
    let spec = || -> Result<_> {
        let s = envelope(a.big_n, a.r, a.upsilon)?;
        Ok(if a.index_clock {
            s.with_clock(Clock::Index { errors: None })
        } else {
            s
        })
    };
    let mut params = json!({
        "N": a.big_n, "r": a.r, "upsilon": a.upsilon, "d": a.d, "index_clock": a.index_clock
    });
    let (kind, estimate, extra) = match a.kind {
        WalkKind::Ballot => {
            params = json!({ "N": a.big_n });
            ("ballot", ballot_prob(a.big_n, a.reps, a.seed)?, json!({}))
        }
        WalkKind::Girsanov => {
            let k = a.k.unwrap_or(a.r);
            params["k"] = json!(k);
            params["z"] = json!(a.z);
            let p = girsanov_pair(k, &spec()?, a.z, a.d, a.reps, a.seed)?;
            let extra = json!({
                "direct": est_json(&p.direct),
                "tilted": est_json(&p.tilted),
                "drift_check": est_json(&p.drift_check),
                "horizon": p.horizon,
                "discrepancy_se": p.discrepancy(),
            });
            ("girsanov", p.tilted, extra)
        }
        WalkKind::Envelope | WalkKind::EnvelopeDirect => {
            let e = if matches!(a.kind, WalkKind::Envelope) {
                envelope_event_prob(&spec()?, a.d, a.reps, a.seed)?
            } else {
                envelope_event_prob_direct(&spec()?, a.d, a.reps, a.seed)?
            };
            let extra = json!({ "tilt": e.tilt, "zero_warning": e.zero_warning });
            let kind = if matches!(a.kind, WalkKind::Envelope) { "envelope" } else { "envelope_direct" };
            (kind, e.estimate, extra)
        }
    };
    let mut out = json!({
        "kind": kind,
        "params": params,
        "estimate": estimate.estimate,
        "stderr": estimate.stderr,
        "reps": estimate.reps,
        "seed": a.seed,
    });
    if let (Some(o), Some(x)) = (out.as_object_mut(), extra.as_object()) {
        o.extend(x.clone());
    }
    Ok(out)
}

fn print_summary(s: &SummaryOutput) {
    println!("{:>6} {:>7} {:>7} {:>9} {:>9} {:>8} {:>5}", "beta", "n", "stat", "median", "mean", "iqr", "reps");
    for c in &s.summary.cells {
        println!(
            "{:>6} {:>7} {:>7} {:>9.4} {:>9.4} {:>8.4} {:>5}",
            c.beta, c.n, c.stat, c.median, c.mean, c.iqr, c.replicas
        );
    }
    for r in &s.residuals {
        println!("residual k = {}: median {:.4}, p95 {:.4}, max {:.4}", r.k, r.median, r.p95, r.max);
    }
}

fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<SummaryOutput> {
    let report = run_experiment(cfg, opts).with_context(|| format!("running into {}", cfg.output.display()))?;
    log::info!(
        "{} units, {} run, {} resumed",
        report.units_total,
        report.units_run,
        report.units_resumed
    );
    Ok(emit_summary(&report.records_path, &cfg.output.join("summary"))?)
}

fn dump_cells(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for &beta in &cfg.beta_list {
        for &n in &cfg.n_ladder {
            let out = run_replica(&ReplicaParams {
                beta,
                n,
                grid_size: cfg.grid_mult * n,
                seed: cfg.seed,
                replica: 0,
                epsilon: cfg.epsilon,
                checkpoints: dyadic_checkpoints(n),
                aux: false,
            })?;
            write_grid_dump(&dir.join(format!("charpoly_beta{beta}_n{n}.bin")), &out.charpoly)?;
            if let Some(last) = out.phi_star.last() {
                write_grid_dump(&dir.join(format!("phistar_beta{beta}_n{n}_k{}.bin", last.k)), last)?;
            }
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Extremes(a) => {
            let mut cfg = a.config()?;
            cfg.aux = false;
            print_summary(&run(&cfg, &a.options())?);
        }
        Command::Diagnostics { run: a, dump } => {
            let mut cfg = a.config()?;
            cfg.aux = true;
            cfg.checkpoints = true;
            print_summary(&run(&cfg, &a.options())?);
            if dump {
                dump_cells(&cfg, &cfg.output.join("dumps"))?;
            }
        }
        Command::Walks(a) => println!("{}", serde_json::to_string(&walks(&a)?)?),
        Command::Summarize { input, out } => {
            if !input.is_file() {
                bail!("{} is not a file", input.display());
            }
            let out = out.unwrap_or_else(|| input.parent().unwrap_or(Path::new(".")).join("summary"));
            print_summary(&emit_summary(&input, &out)?);
        }
    }
    Ok(())
}
