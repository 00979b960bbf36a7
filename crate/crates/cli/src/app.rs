//! Command-line surface and dispatch.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dualgrad_core::props::{all_passed, run_suites, Fault, PropsOptions};

use crate::config::{parse_schedule, resolve, ExperimentConfig, Kind, ModeKind, Overrides};
use crate::error::{CliError, CliResult};
use crate::output::{emit, float, with_suffix};
use crate::plot::{plot_file, PlotSpec};
use crate::{equiv, execution, fig7, generate, optimize};

#[derive(Debug, Parser)]
#[command(name = "dualgrad", version, about = "Attention / gradient-descent duality experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Squared error between dual and attention output along a descent pass.
    Equiv(RunArgs),
    /// Engineered good and bad demonstrations on the single-head model.
    Fig7(RunArgs),
    /// Randomized invariant suites.
    Props(PropsArgs),
    /// Multi-path demonstration search.
    Optimize(RunArgs),
    /// Greedy generation from a random toy model.
    Generate(RunArgs),
    /// SVG line chart from a CSV written by another command.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Flat TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// exact | kernel
    #[arg(long)]
    pub mode: Option<String>,
    /// per-token | fractional:<S>
    #[arg(long)]
    pub schedule: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct PropsArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Deliberately break a component (`flip-gradient-sign`).
    #[arg(long, hide = true)]
    pub fault: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct PlotArgs {
    pub input: PathBuf,
    /// SVG destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub x: Option<String>,
    #[arg(long)]
    pub y: Option<String>,
    #[arg(long)]
    pub group: Option<String>,
    #[arg(long)]
    pub title: Option<String>,
    #[arg(long)]
    pub log_y: bool,
}

/// Whether the command's own checks passed. Errors are reported separately.
pub type Verdict = bool;

fn config_for(kind: Kind, args: &RunArgs) -> CliResult<ExperimentConfig> {
    let flags = Overrides {
        seed: args.seed,
        reps: args.reps,
        mode: args.mode.as_deref().map(str::parse::<ModeKind>).transpose()?,
        schedule: args.schedule.as_deref().map(parse_schedule).transpose()?,
    };
    let env_seed = std::env::var("DUALGRAD_SEED").ok();
    resolve(kind, args.config.as_deref(), &flags, env_seed.as_deref())
}

/// Summary lines go to stdout when the data goes to a file, else to stderr.
fn say(out: Option<&Path>, line: &str) {
    if out.is_some() {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
}

pub fn run(cli: Cli) -> CliResult<Verdict> {
    match cli.command {
        Command::Equiv(args) => cmd_equiv(&args),
        Command::Fig7(args) => cmd_fig7(&args),
        Command::Props(args) => cmd_props(&args),
        Command::Optimize(args) => cmd_optimize(&args),
        Command::Generate(args) => cmd_generate(&args),
        Command::Plot(args) => cmd_plot(&args),
    }
}

fn cmd_equiv(args: &RunArgs) -> CliResult<Verdict> {
    let cfg = config_for(Kind::Equiv, args)?;
    let run = equiv::run_equiv(&cfg)?;
    emit(args.out.as_deref(), &equiv::HEADER, &run.csv_rows(&cfg))?;
    let ok = cfg.mode == ModeKind::Exact || run.max_terminal_se <= 1e-9;
    say(
        args.out.as_deref(),
        &format!(
            "equiv: {} seeds, max terminal SE {:.3e} ({})",
            cfg.reps,
            run.max_terminal_se,
            if ok { "ok" } else { "FAILED" }
        ),
    );
    Ok(ok)
}

fn cmd_fig7(args: &RunArgs) -> CliResult<Verdict> {
    let cfg = config_for(Kind::Fig7, args)?;
    let report = fig7::run_fig7(&fig7::Fig7Settings::from(&cfg))?;
    let mut rows = Vec::new();
    for demo in [&report.good, &report.bad] {
        for curve in &demo.curves {
            for r in &curve.records {
                rows.push(vec![
                    demo.label.to_string(),
                    demo.demo.current.len().to_string(),
                    curve.output_index.to_string(),
                    r.step.to_string(),
                    float(r.se),
                ]);
            }
        }
    }
    emit(args.out.as_deref(), &["demo", "n_d", "output_index", "step", "se"], &rows)?;
    let out = args.out.as_deref();
    say(out, &format!("fig7: target {} decoy {}", report.target_id, report.decoy_id));
    let mut converged = true;
    for demo in [&report.good, &report.bad] {
        let terminal = demo.curves.iter().map(fig7::SeCurve::terminal_se).fold(0.0, f64::max);
        converged &= terminal <= 1e-9;
        let hit = demo.score.hit_position.map_or("none".to_string(), |p| p.to_string());
        say(
            out,
            &format!(
                "{} demo (N_D={}): outputs {:?}, hit at {hit}, Effect_D {}, max terminal SE {:.3e}",
                demo.label,
                demo.demo.current.len(),
                demo.ids,
                float(demo.score.value),
                terminal
            ),
        );
    }
    Ok(converged)
}

fn cmd_props(args: &PropsArgs) -> CliResult<Verdict> {
    let cfg = config_for(Kind::Props, &args.run)?;
    let fault = match args.fault.as_deref() {
        None => None,
        Some("flip-gradient-sign") => Some(Fault::FlipGradientSign),
        Some(other) => return Err(CliError::Config(format!("unknown fault `{other}`"))),
    };
    let reports = run_suites(&PropsOptions { seed: cfg.seed, cases: cfg.cases, fault, execution: execution(&cfg) });
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| vec![r.name.to_string(), r.cases.to_string(), r.passed.to_string(), r.failures.len().to_string()])
        .collect();
    emit(args.run.out.as_deref(), &["suite", "cases", "passed", "failed"], &rows)?;
    for r in &reports {
        let status = if r.ok() { "ok" } else { "FAILED" };
        say(args.run.out.as_deref(), &format!("{:<18} {}/{} {status}", r.name, r.passed, r.cases));
        for f in r.failures.iter().take(3) {
            say(args.run.out.as_deref(), &format!("    {f}"));
        }
    }
    Ok(all_passed(&reports))
}

fn cmd_optimize(args: &RunArgs) -> CliResult<Verdict> {
    let cfg = config_for(Kind::Optimize, args)?;
    let out = args.out.as_deref();
    for r in 0..cfg.reps {
        let seed = cfg.seed + r as u64;
        let run = optimize::run_seed(&cfg, seed)?;
        let path = out.map(|p| if cfg.reps > 1 { with_suffix(p, &format!("-s{seed}")) } else { p.to_path_buf() });
        emit(path.as_deref(), &optimize::HEADER, &optimize::csv_rows(&run.trace))?;
        let arm = |name: &str, t: &dualgrad_core::optimizer::OptimizationTrace| {
            let s = optimize::ArmSummary::of(t);
            format!(
                "seed {seed} {name}: paths {}, first collapse {}, mean similarity after collapse {}, mean best Effect_D {}",
                t.paths,
                s.first_collapse.map_or("none".into(), |c| c.to_string()),
                s.mean_similarity_after_collapse.map_or("n/a".into(), |v| format!("{v:.4}")),
                format!("{:.4}", s.mean_best_effect_d)
            )
        };
        say(out, &arm(if cfg.perturbation { "perturbed" } else { "plain" }, &run.trace));
        if let Some(base) = &run.baseline {
            let base_path = path.as_deref().map(|p| with_suffix(p, "-baseline"));
            if base_path.is_some() || out.is_none() {
                emit(base_path.as_deref(), &optimize::HEADER, &optimize::csv_rows(base))?;
            }
            say(out, &arm("baseline", base));
        }
    }
    Ok(true)
}

fn cmd_generate(args: &RunArgs) -> CliResult<Verdict> {
    let cfg = config_for(Kind::Generate, args)?;
    let run = generate::run_generate(&cfg)?;
    emit(args.out.as_deref(), &generate::HEADER, &generate::csv_rows(&run))?;
    say(args.out.as_deref(), &format!("generate: ids {:?}", run.trace.ids()));
    if let (Some(t), Some(score)) = (cfg.target, run.effect) {
        let hit = score.hit_position.map_or("none".to_string(), |p| p.to_string());
        say(args.out.as_deref(), &format!("target {t}: hit at {hit}, Effect_D {}", float(score.value)));
    }
    Ok(true)
}

fn cmd_plot(args: &PlotArgs) -> CliResult<Verdict> {
    let spec = PlotSpec {
        x: args.x.clone(),
        y: args.y.clone(),
        group: args.group.clone(),
        title: args.title.clone(),
        log_y: args.log_y,
    };
    let svg = plot_file(&args.input, &spec)?;
    match &args.out {
        Some(p) => std::fs::write(p, svg).map_err(|e| CliError::io(p, e))?,
        None => print!("{svg}"),
    }
    Ok(true)
}
