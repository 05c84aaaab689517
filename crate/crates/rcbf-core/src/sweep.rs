//! Experiment execution: run a configuration across its sweep values (and
//! optional comparison filter), collect metrics, and write per-run CSVs, a
//! summary CSV, and overlay SVG plots. Sweep points execute through the
//! data-parallel map; output files are written serially in sweep order.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{ExperimentConfig, FilterConfig, Scenario, SweepVariable};
use crate::error::{Error, Result};
use crate::exec;
use crate::metrics::{compute_metrics, predicted_inflation_actuation, Metrics};
use crate::output::{emit_svg_plot, write_csv, Series};
use crate::robustness::RobustnessFunction;
use crate::sim::{simulate, Outcome, Trajectory};
use crate::uncertainty::{DisturbanceModel, EstimateModel};

/// Tolerance used when deriving `time_to_safe` from a trajectory.
pub const METRICS_TOL: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub label: String,
    pub filter: String,
    pub sweep_value: Option<f64>,
    pub metrics: Metrics,
    pub csv_path: PathBuf,
}

#[derive(Debug)]
pub struct SweepReport {
    pub runs: Vec<RunRecord>,
    pub summary_path: PathBuf,
    pub plot_paths: Vec<PathBuf>,
}

struct PlannedRun {
    label: String,
    filter_cfg: FilterConfig,
    filter_tag: String,
    sweep_value: Option<f64>,
    estimate: EstimateModel,
    disturbance: DisturbanceModel,
}

fn plan_runs(cfg: &ExperimentConfig, scenario: &Scenario) -> Result<Vec<PlannedRun>> {
    let mut filters: Vec<(FilterConfig, String)> =
        vec![(cfg.filter.clone(), cfg.filter.label().to_string())];
    if let Some(c) = &cfg.compare {
        filters.push((c.clone(), c.label().to_string()));
    }
    let sweep_points: Vec<Option<f64>> = match &cfg.sweep {
        Some(s) => s.values.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    let mut runs = Vec::new();
    for (fcfg, tag) in &filters {
        for point in &sweep_points {
            let (estimate, disturbance) = match (point, cfg.sweep.as_ref().map(|s| s.variable)) {
                (Some(v), Some(SweepVariable::EstimateDelta)) => {
                    (cfg.estimate_for(*v)?, scenario.disturbance.clone())
                }
                (Some(v), Some(SweepVariable::DisturbanceDbar)) => {
                    (scenario.estimate.clone(), cfg.disturbance_for(*v)?)
                }
                _ => (scenario.estimate.clone(), scenario.disturbance.clone()),
            };
            let label = match point {
                Some(v) => format!("{tag}_{}", fmt_value(*v)),
                None => tag.clone(),
            };
            runs.push(PlannedRun {
                label,
                filter_cfg: fcfg.clone(),
                filter_tag: tag.clone(),
                sweep_value: *point,
                estimate,
                disturbance,
            });
        }
    }
    Ok(runs)
}

fn fmt_value(v: f64) -> String {
    format!("{v}").replace('.', "p").replace('-', "m")
}

/// Theorem-side inflation bound for runs whose uncertainty enters as a
/// bounded actuation disturbance on a robustified filter.
fn predicted_for(
    cfg: &ExperimentConfig,
    scenario: &Scenario,
    run: &PlannedRun,
) -> Result<Option<f64>> {
    let rf = match &run.filter_cfg {
        FilterConfig::Rcbf { gamma1, gamma2 } => RobustnessFunction::polynomial(*gamma1, *gamma2)?,
        _ => return Ok(None),
    };
    let dbar = match &run.disturbance {
        DisturbanceModel::None => return Ok(None),
        m => m.bound(),
    };
    if !matches!(
        cfg.sweep.as_ref().map(|s| s.variable),
        Some(SweepVariable::DisturbanceDbar)
    ) && matches!(run.disturbance, DisturbanceModel::RandomBounded { .. })
    {
        // random disturbances still honor the bound; the prediction applies
    }
    Ok(Some(predicted_inflation_actuation(
        &scenario.alpha,
        &rf,
        dbar,
    )?))
}

/// Execute the full experiment. Returns per-run records in sweep order;
/// partial CSVs already written stay on disk if a later write fails.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let scenario = cfg.instantiate()?;
    let runs = plan_runs(cfg, &scenario)?;
    if runs.is_empty() {
        return Err(Error::Config("experiment has no runs".into()));
    }

    // rebuild concrete filters once per distinct config (mrcbf sampling is
    // seeded, so this is deterministic)
    let mut built = Vec::new();
    for run in &runs {
        let filter = if run.filter_cfg == cfg.filter {
            scenario.filter.clone()
        } else {
            crate::config::build_filter(
                &run.filter_cfg,
                &scenario.system,
                &scenario.barrier,
                &scenario.alpha,
                cfg.seed,
            )?
        };
        built.push(filter);
    }

    let results: Vec<Result<(Trajectory, Metrics)>> = exec::map_indexed(runs.len(), |i| {
        let run = &runs[i];
        let traj = simulate(
            &scenario.system,
            &scenario.barrier,
            &scenario.alpha,
            built[i].as_ref(),
            &scenario.nominal,
            &run.estimate,
            &run.disturbance,
            &scenario.x0,
            &scenario.sim,
        )?;
        let mut metrics = compute_metrics(&traj, METRICS_TOL)?;
        metrics.predicted_inflation = predicted_for(cfg, &scenario, run)?;
        Ok((traj, metrics))
    });

    let out_dir = Path::new(&cfg.out_dir);
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let mut records = Vec::new();
    let mut h_series = Vec::new();
    let mut x_series = Vec::new();
    let mut summary = String::from(
        "index,filter,sweep_variable,sweep_value,outcome,min_h,final_h,time_to_safe,\
         predicted_inflation,observed_inflation,bounded,seed,dt,horizon,alpha,rho,estimate,\
         disturbance,nominal\n",
    );
    let sweep_var = cfg
        .sweep
        .as_ref()
        .map(|s| s.variable.label())
        .unwrap_or("none");

    for (i, result) in results.into_iter().enumerate() {
        let run = &runs[i];
        let (traj, metrics) = result?;
        let csv_path = out_dir.join(format!("{}_{}.csv", cfg.prefix, run.label));
        write_csv(&traj, &csv_path)?;

        h_series.push(Series {
            name: format!("{} h", run.label),
            points: traj.times.iter().copied().zip(traj.h_values.iter().copied()).collect(),
        });
        x_series.push(Series {
            name: format!("{} x1", run.label),
            points: traj
                .times
                .iter()
                .copied()
                .zip(traj.states.iter().map(|s| s[0]))
                .collect(),
        });

        let rho_desc = match &run.filter_cfg {
            FilterConfig::Rcbf { gamma1, gamma2 } => format!("poly({gamma1},{gamma2})"),
            FilterConfig::Tunable { gamma1, gamma2, c1, c2 } => {
                format!("tunable({gamma1},{gamma2};{c1},{c2})")
            }
            FilterConfig::Issf { eps } => format!("issf_quadratic(eps={eps})"),
            _ => "none".into(),
        };
        let alpha_desc = scenario.alpha.describe();
        summary.push_str(&format!(
            "{i},{},{sweep_var},{},{},{},{},{},{},{},{},{},{},{},{alpha_desc},{rho_desc},{},{},{}\n",
            run.filter_tag,
            run.sweep_value.map_or("".into(), |v| v.to_string()),
            metrics.outcome.label(),
            metrics.min_h,
            metrics.final_h,
            metrics.time_to_safe.map_or("".into(), |v| v.to_string()),
            metrics.predicted_inflation.map_or("".into(), |v| v.to_string()),
            metrics.observed_inflation,
            metrics.bounded,
            cfg.seed,
            cfg.dt,
            cfg.horizon,
            run.estimate.describe(),
            run.disturbance.describe(),
            match &cfg.nominal {
                crate::config::NominalConfig::Zero => "zero".to_string(),
                crate::config::NominalConfig::Linear { gain } => format!("linear{gain:?}"),
                crate::config::NominalConfig::SegwayDefaultGain => "segway_lqr".to_string(),
            },
        ));
        records.push(RunRecord {
            label: run.label.clone(),
            filter: run.filter_tag.clone(),
            sweep_value: run.sweep_value,
            metrics,
            csv_path,
        });
    }

    let summary_path = out_dir.join(format!("{}_summary.csv", cfg.prefix));
    fs::write(&summary_path, summary)
        .map_err(|e| Error::io(summary_path.display().to_string(), e))?;

    let h_plot = out_dir.join(format!("{}_h.svg", cfg.prefix));
    emit_svg_plot(&h_series, &format!("{}: barrier value", cfg.name), "t [s]", "h", &h_plot)?;
    let x_plot = out_dir.join(format!("{}_x.svg", cfg.prefix));
    emit_svg_plot(
        &x_series,
        &format!("{}: first state component", cfg.name),
        "t [s]",
        "x_1",
        &x_plot,
    )?;

    Ok(SweepReport {
        runs: records,
        summary_path,
        plot_paths: vec![h_plot, x_plot],
    })
}

/// True when any run aborted on filter infeasibility.
pub fn any_infeasible(report: &SweepReport) -> bool {
    report
        .runs
        .iter()
        .any(|r| matches!(r.metrics.outcome, Outcome::Infeasible { .. }))
}
