//! The `signadam` command line.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Serialize;
use signadam_core::optimizer::{run, RunOptions};
use signadam_core::rng::stream_id;
use signadam_core::RngStream;

use crate::config::{ExperimentConfig, LemmaConfig};
use crate::error::{LabError, Result, EXIT_CHECK_FAILED, EXIT_CONFIG};
use crate::output::{read_trajectory, read_u_dump, write_csv, write_trajectory, write_u_dump, Manifest, OutDir};
use crate::rate::ScheduleEcho;
use crate::report::{all_pass, tag, Check};
use crate::runner::Pool;
use crate::{ablation, audit, conditions, lemmas, rate, sweep};

#[derive(Debug, Parser)]
#[command(name = "signadam", version, about = "Adam as sign descent: experiments and checks")]
pub struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config's.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One trajectory to CSV.
    Run,
    /// Log-log convergence slope over the T grid.
    Rate,
    /// Plain sign descent against scheduled momentum.
    AblateMomentum,
    /// Best learning rate against dimension, and epsilon independence.
    SweepDim,
    /// Convergence-bound audit over the configured cases.
    AuditBound,
    /// Conditions 1-3 and fits on a trajectory (simulated unless given).
    CheckConditions {
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long, requires = "trajectory")]
        u_dump: Option<PathBuf>,
    },
    /// Lemma, proposition and calibration suites.
    VerifyLemmas,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Run => "run",
            Command::Rate => "rate",
            Command::AblateMomentum => "ablate-momentum",
            Command::SweepDim => "sweep-dim",
            Command::AuditBound => "audit-bound",
            Command::CheckConditions { .. } => "check-conditions",
            Command::VerifyLemmas => "verify-lemmas",
        }
    }
}

/// Parses `argv` and runs; returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(true) => 0,
        Ok(false) => EXIT_CHECK_FAILED,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load(cli: &Cli) -> Result<Option<ExperimentConfig>> {
    cli.config.as_deref().map(ExperimentConfig::load).transpose()
}

fn need(cfg: Option<ExperimentConfig>, cmd: &str) -> Result<ExperimentConfig> {
    cfg.ok_or_else(|| LabError::config(format!("`{cmd}` needs --config <path>")))
}

fn print_checks(cmd: &str, checks: &[Check], warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
    for c in checks {
        println!("{cmd}: {} {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
}

#[derive(Serialize)]
struct RunReport {
    steps: usize,
    final_loss: f64,
    mean_grad_l2: f64,
    params: ScheduleEcho,
}

/// Runs one subcommand; `Ok(passed)`.
pub fn execute(cli: &Cli) -> Result<bool> {
    let cfg = load(cli)?;
    let cmd = cli.command.name();
    let seed = cli.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
    let cfg = cfg.map(|mut c| {
        c.seed = seed;
        c
    });
    let pool = Pool::new(cli.threads)?;
    let mut out = OutDir::create(&cli.out_dir)?;
    let mut manifest = Manifest::new(cmd, cfg.as_ref(), seed);

    let passed = match &cli.command {
        Command::Run => {
            let cfg = need(cfg, cmd)?;
            let problem = cfg.build_problem()?;
            let (params, spec) = cfg.params_at(&problem, cfg.horizon)?;
            let opts = RunOptions { form: cfg.form, divergence_cap: cfg.divergence_cap, dump_every: cfg.dump_every };
            let mut rng = RngStream::new(seed, stream_id(&[tag::RUN, cfg.horizon]));
            let tr = run(&problem, &params, cfg.horizon, &mut rng, &opts)?;
            write_trajectory(&out.path(&cfg.output.trajectory), &tr.rows)?;
            if cfg.dump_every.is_some() {
                write_u_dump(&out.path(&cfg.output.u_dump), &tr.u_dumps)?;
            }
            let report = RunReport {
                steps: tr.len(),
                final_loss: problem.value(tr.final_x.as_slice()),
                mean_grad_l2: tr.mean_grad_l2(),
                params: ScheduleEcho::new(cfg.horizon, &params, spec),
            };
            out.json(&cfg.output.report, &report)?;
            println!("run: {} steps, mean gradient norm {:.6e}", report.steps, report.mean_grad_l2);
            true
        }
        Command::Rate => {
            let cfg = need(cfg, cmd)?;
            let r = rate::estimate_rate(&cfg, &pool)?;
            write_csv(&out.path("rate_runs.csv"), &r.runs)?;
            write_csv(&out.path("rate_points.csv"), &r.points)?;
            out.json(&cfg.output.report, &r)?;
            println!("rate: slope {:.4}, r^2 {:.4}, monotone {}", r.fit.slope, r.fit.r_squared, r.monotone);
            print_checks(cmd, &r.checks, &r.warnings);
            all_pass(&r.checks)
        }
        Command::AblateMomentum => {
            let cfg = need(cfg, cmd)?;
            let r = ablation::momentum_ablation(&cfg, &pool)?;
            let rows = r.arms.iter().flat_map(|a| {
                a.points.iter().map(move |p| ArmPoint {
                    arm: &a.name,
                    horizon: p.horizon,
                    mean: p.mean,
                    std_err: p.std_err,
                    runs: p.runs,
                    diverged: p.diverged,
                })
            });
            write_csv(&out.path("ablation_points.csv"), rows)?;
            out.json(&cfg.output.report, &r)?;
            println!("ablate-momentum: plateau {:.4e}, momentum {:.4e}", r.plateau, r.momentum_terminal);
            print_checks(cmd, &r.checks, &r.warnings);
            all_pass(&r.checks)
        }
        Command::SweepDim => {
            let cfg = need(cfg, cmd)?;
            let r = sweep::dimension_sweep(&cfg, &pool)?;
            let rows =
                r.curves.iter().flat_map(|c| c.grid.iter().map(move |&(lr, metric)| LrRow { d: c.d, lr, metric }));
            write_csv(&out.path("sweep_lr.csv"), rows)?;
            write_csv(&out.path("sweep_scheduled.csv"), &r.scheduled)?;
            out.json(&cfg.output.report, &r)?;
            println!(
                "sweep-dim: best-lr slope {:.4}, d ratio {:.4}, eps spread {:.3e}",
                r.lr_slope, r.d_ratio, r.eps_spread
            );
            print_checks(cmd, &r.checks, &r.warnings);
            all_pass(&r.checks)
        }
        Command::AuditBound => {
            let cfg = need(cfg, cmd)?;
            let r = audit::audit_theorem_bound(&cfg, &pool)?;
            out.json(&cfg.output.report, &r)?;
            print_checks(cmd, &r.checks, &r.warnings);
            all_pass(&r.checks)
        }
        Command::CheckConditions { trajectory, u_dump } => {
            let cfg = need(cfg, cmd)?;
            let data = match trajectory {
                Some(p) => conditions::TrajectoryData {
                    rows: read_trajectory(p)?,
                    dumps: u_dump.as_deref().map(read_u_dump).transpose()?.unwrap_or_default(),
                },
                None => conditions::simulate(&cfg, seed)?,
            };
            let r = conditions::check_conditions(&cfg, &data, seed)?;
            out.json(&cfg.output.report, &r)?;
            let v = r.verdicts;
            println!(
                "check-conditions: C0 {:.4} (sqrt T {:.1}) {}; KS mean p {} {}; C1 max {:.4} {}",
                r.condition1.c0,
                r.condition1.sqrt_t,
                verdict(v.condition1),
                r.condition2.mean_p.map_or("n/a".into(), |p| format!("{p:.4}")),
                v.condition2.map_or("SKIP", verdict),
                r.condition3.max,
                verdict(v.condition3),
            );
            print_checks(cmd, &r.lemma_checks, &[]);
            r.passed()
        }
        Command::VerifyLemmas => {
            let lc = cfg.as_ref().map_or_else(LemmaConfig::default, |c| c.lemmas);
            let r = lemmas::verify_lemmas(&lc, seed, &pool)?;
            out.json(cfg.as_ref().map_or("report.json", |c| c.output.report.as_str()), &r)?;
            for s in &r.suites {
                println!("verify-lemmas: {} {} ({})", verdict(s.passed), s.name, s.summary);
            }
            r.passed
        }
    };
    manifest.passed = passed;
    out.finish(manifest)?;
    Ok(passed)
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

#[derive(Serialize)]
struct ArmPoint<'a> {
    arm: &'a str,
    horizon: u64,
    mean: f64,
    std_err: f64,
    runs: usize,
    diverged: usize,
}

#[derive(Serialize)]
struct LrRow {
    d: usize,
    lr: f64,
    metric: f64,
}
