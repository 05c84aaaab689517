//! Experiment CLI for the safety-filter library: single simulations, sweeps,
//! filter comparisons, validity-condition certification, and empirical
//! uncertainty thresholds.
//!
//! Exit codes: 0 success, 2 configuration error, 3 a run aborted on filter
//! infeasibility, 4 i/o failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rcbf_core::config::{build_filter, filter_controller, ExperimentConfig, FilterConfig};
use rcbf_core::sweep::{any_infeasible, run_experiment, METRICS_TOL};
use rcbf_core::output::{emit_svg_plot, write_csv, Series};
use rcbf_core::{
    certify_mrcbf, certify_rcbf, compute_metrics, grid_box, simulate, thresholds, Error,
    FilterKind, Outcome, RobustnessFunction, State,
};

const BUNDLED: [(&str, &str); 4] = [
    ("scalar_fig3", include_str!("../configs/scalar_fig3.cfg")),
    ("segway_fig1", include_str!("../configs/segway_fig1.cfg")),
    ("segway_issf_fig2", include_str!("../configs/segway_issf_fig2.cfg")),
    ("actuation_thm1", include_str!("../configs/actuation_thm1.cfg")),
];

#[derive(Parser)]
#[command(
    name = "rcbf",
    about = "Safety-filter experiments: simulate, sweep, certify, thresholds, compare",
    after_help = "CONFIG is a path to a config file or one of the bundled names:\n  \
                  scalar_fig3, segway_fig1, segway_issf_fig2, actuation_thm1"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Config file path or bundled config name.
    config: String,
    /// Override the output directory.
    #[arg(long)]
    out_dir: Option<String>,
    /// Override the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the integration step.
    #[arg(long)]
    dt: Option<f64>,
    /// Override the simulation horizon.
    #[arg(long)]
    horizon: Option<f64>,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the base scenario once with the primary filter.
    Simulate(CommonArgs),
    /// Run the configured sweep (primary filter plus comparison, if any).
    Sweep(CommonArgs),
    /// Check the validity conditions of the configured filters on a grid.
    Certify(CommonArgs),
    /// Estimate the uncertainty thresholds of the configured filter.
    Thresholds(CommonArgs),
    /// Run the primary and comparison filters on the same scenario.
    Compare(CommonArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, run): (&CommonArgs, fn(&CommonArgs, &ExperimentConfig) -> rcbf_core::Result<i32>) =
        match &cli.command {
            Command::Simulate(a) => (a, cmd_simulate),
            Command::Sweep(a) => (a, cmd_sweep),
            Command::Certify(a) => (a, cmd_certify),
            Command::Thresholds(a) => (a, cmd_thresholds),
            Command::Compare(a) => (a, cmd_compare),
        };
    let cfg = match load_config(args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code_for(&e));
        }
    };
    match run(args, &cfg) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 4,
        Error::InfeasibleAtState(_) => 3,
        _ => 2,
    }
}

fn load_config(args: &CommonArgs) -> rcbf_core::Result<ExperimentConfig> {
    let path = Path::new(&args.config);
    let mut cfg = if path.exists() {
        ExperimentConfig::parse_file(path)?
    } else {
        let key = args.config.trim_end_matches(".cfg");
        let text = BUNDLED
            .iter()
            .find(|(name, _)| *name == key)
            .map(|(_, text)| *text)
            .ok_or_else(|| {
                Error::Config(format!(
                    "'{}' is neither a file nor a bundled config (bundled: {})",
                    args.config,
                    BUNDLED.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
                ))
            })?;
        ExperimentConfig::parse(text)?
    };
    if let Some(dir) = &args.out_dir {
        cfg.out_dir = dir.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(dt) = args.dt {
        cfg.dt = dt;
    }
    if let Some(horizon) = args.horizon {
        cfg.horizon = horizon;
    }
    Ok(cfg)
}

fn cmd_simulate(args: &CommonArgs, cfg: &ExperimentConfig) -> rcbf_core::Result<i32> {
    let scenario = cfg.instantiate()?;
    let traj = simulate(
        &scenario.system,
        &scenario.barrier,
        &scenario.alpha,
        scenario.filter.as_ref(),
        &scenario.nominal,
        &scenario.estimate,
        &scenario.disturbance,
        &scenario.x0,
        &scenario.sim,
    )?;
    let metrics = compute_metrics(&traj, METRICS_TOL)?;

    let out_dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::Io {
        path: out_dir.display().to_string(),
        source: e,
    })?;
    let csv_path = out_dir.join(format!("{}_{}.csv", cfg.prefix, cfg.filter.label()));
    write_csv(&traj, &csv_path)?;
    let svg_path = out_dir.join(format!("{}_{}_h.svg", cfg.prefix, cfg.filter.label()));
    emit_svg_plot(
        &[Series {
            name: format!("{} h", cfg.filter.label()),
            points: traj.times.iter().copied().zip(traj.h_values.iter().copied()).collect(),
        }],
        &format!("{}: barrier value", cfg.name),
        "t [s]",
        "h",
        &svg_path,
    )?;

    if !args.quiet {
        println!("run      : {} [{}]", cfg.name, cfg.filter.label());
        println!("outcome  : {}", metrics.outcome.label());
        println!("min h    : {:.6e}", metrics.min_h);
        println!("final h  : {:.6e}", metrics.final_h);
        match metrics.time_to_safe {
            Some(t) => println!("t_safe   : {t:.3} s"),
            None => println!("t_safe   : never reached -{METRICS_TOL:.0e}"),
        }
        println!("csv      : {}", csv_path.display());
        println!("plot     : {}", svg_path.display());
    }
    Ok(if matches!(metrics.outcome, Outcome::Infeasible { .. }) {
        3
    } else {
        0
    })
}

fn run_and_report(args: &CommonArgs, cfg: &ExperimentConfig) -> rcbf_core::Result<i32> {
    let report = run_experiment(cfg)?;
    if !args.quiet {
        println!(
            "{:<24} {:<10} {:>12} {:>12} {:>12} {:>10}",
            "run", "outcome", "min_h", "final_h", "xi_pred", "t_safe"
        );
        for r in &report.runs {
            println!(
                "{:<24} {:<10} {:>12.4e} {:>12.4e} {:>12} {:>10}",
                r.label,
                match r.metrics.outcome {
                    Outcome::Completed => "completed",
                    Outcome::Escaped { .. } => "escaped",
                    Outcome::Infeasible { .. } => "infeasible",
                },
                r.metrics.min_h,
                r.metrics.final_h,
                r.metrics
                    .predicted_inflation
                    .map_or("-".to_string(), |v| format!("{v:.4e}")),
                r.metrics
                    .time_to_safe
                    .map_or("-".to_string(), |v| format!("{v:.3}")),
            );
        }
        println!("summary  : {}", report.summary_path.display());
        for p in &report.plot_paths {
            println!("plot     : {}", p.display());
        }
    }
    Ok(if any_infeasible(&report) { 3 } else { 0 })
}

fn cmd_sweep(args: &CommonArgs, cfg: &ExperimentConfig) -> rcbf_core::Result<i32> {
    if cfg.sweep.is_none() {
        return Err(Error::Config(
            "sweep command needs a [sweep] section; use 'simulate' for single runs".into(),
        ));
    }
    run_and_report(args, cfg)
}

fn cmd_compare(args: &CommonArgs, cfg: &ExperimentConfig) -> rcbf_core::Result<i32> {
    if cfg.compare.is_none() {
        return Err(Error::Config(
            "compare command needs a [compare] section with a second filter".into(),
        ));
    }
    run_and_report(args, cfg)
}

fn cmd_certify(args: &CommonArgs, cfg: &ExperimentConfig) -> rcbf_core::Result<i32> {
    let certify_cfg = cfg
        .certify
        .as_ref()
        .ok_or_else(|| Error::Config("certify command needs a [certify] section".into()))?;
    let scenario = cfg.instantiate()?;
    let grid = grid_box(
        &certify_cfg.grid_min,
        &certify_cfg.grid_max,
        &certify_cfg.grid_points,
    )?;
    if certify_cfg.grid_min.len() != scenario.system.n() {
        return Err(Error::Config(format!(
            "[certify] grid dimension {} does not match the system dimension {}",
            certify_cfg.grid_min.len(),
            scenario.system.n()
        )));
    }

    let rf = match &cfg.filter {
        FilterConfig::Rcbf { gamma1, gamma2 }
        | FilterConfig::Tunable { gamma1, gamma2, .. } => {
            RobustnessFunction::polynomial(*gamma1, *gamma2)?
        }
        _ => RobustnessFunction::polynomial(1.0, 1.0)?,
    };
    let report = certify_rcbf(
        &scenario.system,
        &scenario.barrier,
        &scenario.alpha,
        &rf,
        &grid,
        certify_cfg.zero_tol,
    )?;
    if !args.quiet {
        println!("grid points        : {}", report.points_checked);
        println!("zero tolerance     : {:.3e}", report.zero_tol_used);
        println!("epsilon (inf rho/y): {}", report.epsilon);
        println!("near-degenerate    : {}", report.near_degenerate.len());
        match report.min_margin {
            Some(m) => println!("min margin         : {m:.6}"),
            None => println!("min margin         : n/a (no near-degenerate points)"),
        }
        println!("violations         : {}", report.violations.len());
        for idx in report.violations.iter().take(10) {
            println!("  violated at {:?}", grid[*idx].as_slice());
        }
    }

    for fc in [Some(&cfg.filter), cfg.compare.as_ref()].into_iter().flatten() {
        if matches!(fc, FilterConfig::Mrcbf { .. }) {
            let built = build_filter(fc, &scenario.system, &scenario.barrier, &scenario.alpha, cfg.seed)?;
            if let Some(FilterKind::Mrcbf(params)) = built {
                let mr = certify_mrcbf(
                    &scenario.system,
                    &scenario.barrier,
                    &scenario.alpha,
                    &params,
                    &grid,
                )?;
                if !args.quiet {
                    println!("measurement-robust filter:");
                    println!(
                        "  lipschitz constants      : Llfh={:.4} Llgh={:.4} Lah={:.4}",
                        params.lip_lfh, params.lip_lgh, params.lip_alpha_h
                    );
                    println!("  implication violations   : {}", mr.violations.len());
                    println!("  delta-bound violations   : {}", mr.delta_bound_violations.len());
                    println!("  admissible uniform delta : {:.6}", mr.admissible_delta);
                }
            }
        }
    }
    Ok(0)
}

fn cmd_thresholds(args: &CommonArgs, cfg: &ExperimentConfig) -> rcbf_core::Result<i32> {
    let th_cfg = cfg
        .thresholds
        .as_ref()
        .ok_or_else(|| Error::Config("thresholds command needs a [thresholds] section".into()))?;
    let scenario = cfg.instantiate()?;
    let rf = match &cfg.filter {
        FilterConfig::Rcbf { gamma1, gamma2 } => RobustnessFunction::polynomial(*gamma1, *gamma2)?,
        other => {
            return Err(Error::Config(format!(
                "thresholds are defined for the rcbf filter, config has '{}'",
                other.label()
            )))
        }
    };
    let kind = scenario
        .filter
        .clone()
        .ok_or_else(|| Error::Config("thresholds need a configured filter".into()))?;
    let controller = filter_controller(
        &scenario.system,
        &scenario.barrier,
        &scenario.alpha,
        &kind,
        &scenario.nominal,
    );

    // rejection-sample the beta super-level set from the configured box
    if th_cfg.box_min.len() != scenario.system.n() {
        return Err(Error::Config(format!(
            "[thresholds] box dimension {} does not match the system dimension {}",
            th_cfg.box_min.len(),
            scenario.system.n()
        )));
    }
    let region_box = rcbf_core::BoxRegion::new(th_cfg.box_min.clone(), th_cfg.box_max.clone())?;
    let mut region: Vec<State> = Vec::new();
    let mut tries = 0usize;
    let mut idx = 0u64;
    use rand::Rng;
    while region.len() < th_cfg.samples && tries < th_cfg.samples * 100 {
        let mut rng = rcbf_core::filter::stream_rng(cfg.seed.wrapping_add(201), idx);
        idx += 1;
        tries += 1;
        let x = State::from_iterator(
            region_box.dim(),
            region_box
                .lo
                .iter()
                .zip(&region_box.hi)
                .map(|(&l, &h)| rng.random_range(l..=h)),
        );
        if scenario.barrier.h(&x) >= -th_cfg.beta {
            region.push(x);
        }
    }
    if region.is_empty() {
        return Err(Error::Config(
            "[thresholds] sampling box contains no points of the beta super-level set".into(),
        ));
    }

    let th = thresholds(
        &scenario.alpha,
        &rf,
        &controller,
        th_cfg.beta,
        &region,
        th_cfg.samples,
        cfg.seed.wrapping_add(202),
    )?;
    if !args.quiet {
        println!(
            "empirical thresholds from {} region points, {} offset samples (beta = {}):",
            region.len(),
            th.samples,
            th_cfg.beta
        );
        println!(
            "eps1 = {:.6}{}",
            th.eps1,
            if th.eps1_capped { "  [bracket cap reached: out of range]" } else { "" }
        );
        println!(
            "eps2 = {:.6}{}",
            th.eps2,
            if th.eps2_capped { "  [bracket cap reached: out of range]" } else { "" }
        );
    }
    Ok(0)
}
