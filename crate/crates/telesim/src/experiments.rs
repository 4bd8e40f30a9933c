//! Study runners: open-loop stiffness estimation, closed-loop transparency
//! and stability, network refitting, and the scripted demonstration replay.
//!
//! Each study expands into cells (estimator x movement/axis x material x
//! repetition x passivity condition), executes them in a seeded random order
//! (optionally in parallel; outputs are independent of execution order), and
//! writes one log per cell plus aggregate tables and plots.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::analysis::{
    average_spectra, detect_holds_for_log, detrend_spectrum, hold_oscillation_power, rms_effort,
    rmse, stiffness_curve, HoldWindows, Spectrum,
};
use crate::config::{derive_seed, ExperimentConfig};
use crate::environment::TissueParams;
use crate::error::{Result, SimError};
use crate::estimation::{EstimatorKind, EstimatorSpec};
use crate::neural::{generate_dataset, refit, train, Condition, Dataset, Mlp};
use crate::plot::{write_line_chart, ChartSpec, Series};
use crate::runlog::RunLog;
use crate::sim::{run, ControlMode, RunParams};
use crate::trajectory::{
    build_brief_manipulation, build_closed_loop, build_demo_replay, build_open_loop, Axis,
    ProtocolKind,
};

/// Which cells a study expands into.
#[derive(Debug, Clone)]
pub struct StudyPlan {
    pub estimators: Vec<String>,
    pub axes: Vec<Axis>,
    /// Passivity conditions to run (closed-loop studies).
    pub popc_conditions: Vec<bool>,
    pub repetitions: u32,
    pub randomize: bool,
}

impl StudyPlan {
    /// Default plan from a config: every preset except the deliberately
    /// destabilizing one, all axes, both passivity conditions.
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            estimators: cfg
                .estimators
                .keys()
                .filter(|k| k.as_str() != "unstable")
                .cloned()
                .collect(),
            axes: Axis::ALL.to_vec(),
            popc_conditions: vec![false, true],
            repetitions: cfg.plan.repetitions,
            randomize: cfg.plan.randomize_order,
        }
    }
}

/// Outcome of one executed cell.
#[derive(Debug, Clone)]
pub struct CellMetrics {
    pub name: String,
    pub estimator: String,
    pub protocol: String,
    pub material_id: u32,
    pub repetition: u32,
    pub popc: bool,
    pub rmse: f64,
    pub rms_effort: f64,
    pub oscillation_power: f64,
    pub hold_rms_velocity: f64,
    pub diverged: bool,
}

fn execution_order(n: usize, seed: u64, randomize: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if randomize {
        idx.shuffle(&mut ChaCha12Rng::seed_from_u64(seed));
    }
    idx
}

/// Run `work` over all cells, honoring the execution order and thread count.
/// Results come back in canonical (not execution) order.
fn run_cells<C: Sync, R: Send>(
    cells: &[C],
    order: &[usize],
    parallel: usize,
    work: impl Fn(&C) -> R + Sync,
) -> Vec<R> {
    let mut slots: Vec<Option<R>> = (0..cells.len()).map(|_| None).collect();
    if parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallel)
            .build()
            .expect("thread pool");
        let results: Vec<(usize, R)> = pool.install(|| {
            order
                .par_iter()
                .map(|&i| (i, work(&cells[i])))
                .collect()
        });
        for (i, r) in results {
            slots[i] = Some(r);
        }
    } else {
        for &i in order {
            slots[i] = Some(work(&cells[i]));
        }
    }
    slots.into_iter().map(|s| s.expect("cell ran")).collect()
}

fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| SimError::io(parent, e))?;
    }
    let f = std::fs::File::create(path).map_err(|e| SimError::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(f));
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush().map_err(|e| SimError::io(path, e))?;
    Ok(())
}

fn write_order_file(path: &Path, cells: &[String], order: &[usize]) -> Result<()> {
    let rows: Vec<Vec<String>> = order
        .iter()
        .enumerate()
        .map(|(pos, &i)| vec![pos.to_string(), cells[i].clone()])
        .collect();
    write_table(path, &["position", "cell"], &rows)
}

fn fs_reference_spec() -> EstimatorSpec {
    EstimatorSpec {
        id: "fs-reference".into(),
        rate_hz: 1000,
        kind: EstimatorKind::GroundTruth { noise_sd: 0.0 },
    }
}

// ---------------------------------------------------------------------------
// Open-loop stiffness study
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct OpenLoopCell {
    name: String,
    estimator: String,
    movement: ProtocolKind,
    material_id: u32,
    repetition: u32,
}

/// Report of one open-loop study.
pub struct OpenLoopReport {
    pub cell_names: Vec<String>,
    pub diverged: Vec<String>,
}

/// Run the open-loop palpation/retraction study: every estimator x movement
/// x material x repetition cell, then aggregate stiffness curves per
/// estimator and movement.
pub fn run_open_loop_study(
    cfg: &ExperimentConfig,
    plan: &StudyPlan,
    out_dir: &Path,
    parallel: usize,
) -> Result<OpenLoopReport> {
    cfg.validate()?;
    let materials = cfg.tissue.sample_materials(cfg.sim.seed);
    let specs: BTreeMap<String, EstimatorSpec> = plan
        .estimators
        .iter()
        .map(|n| Ok((n.clone(), cfg.preset(n)?.to_spec(n)?)))
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    for est in &plan.estimators {
        for movement in [ProtocolKind::Palpation, ProtocolKind::Retraction] {
            for material in &materials {
                for rep in 1..=plan.repetitions {
                    cells.push(OpenLoopCell {
                        name: format!(
                            "ol_{est}_{}_m{}_r{rep}",
                            movement.label(),
                            material.material_id
                        ),
                        estimator: est.clone(),
                        movement,
                        material_id: material.material_id,
                        repetition: rep,
                    });
                }
            }
        }
    }
    let order = execution_order(
        cells.len(),
        derive_seed(cfg.sim.seed, "open-loop-order"),
        plan.randomize,
    );
    let runs_dir = out_dir.join("runs");

    let outcomes = run_cells(&cells, &order, parallel, |cell| -> Result<RunLog> {
        let protocol = build_open_loop(cell.movement);
        let tissue = &materials[(cell.material_id - 1) as usize];
        let log = run(&RunParams {
            config: cfg,
            protocol: &protocol,
            tissue,
            estimator: Some(&specs[&cell.estimator]),
            mode: ControlMode::OpenLoop,
            popc_enabled: false,
            estimator_seed: derive_seed(cfg.sim.seed, &cell.name),
            material_id: cell.material_id,
            repetition: cell.repetition,
        })?;
        log.save(&runs_dir, &cell.name)?;
        Ok(log)
    });

    let mut logs = Vec::new();
    let mut diverged = Vec::new();
    for (cell, outcome) in cells.iter().zip(outcomes) {
        match outcome {
            Ok(log) => logs.push((cell.clone(), log)),
            Err(SimError::Diverged { partial, .. }) => {
                partial.save(&runs_dir, &cell.name)?;
                diverged.push(cell.name.clone());
            }
            Err(other) => return Err(other),
        }
    }

    // stiffness curves aggregated across materials and repetitions
    let mut curve_rows = Vec::new();
    for movement in [ProtocolKind::Palpation, ProtocolKind::Retraction] {
        let mut series = Vec::new();
        let mut chart_data: Vec<(String, Vec<(f64, f64)>, Vec<(f64, f64)>)> = Vec::new();
        for est in &plan.estimators {
            let group: Vec<&RunLog> = logs
                .iter()
                .filter(|(c, _)| c.estimator == *est && c.movement == movement)
                .map(|(_, l)| l)
                .collect();
            if group.is_empty() {
                continue;
            }
            let curve = stiffness_curve(&group, cfg.analysis.stiffness_bin_m)?;
            for (i, &d) in curve.displacement_m.iter().enumerate() {
                curve_rows.push(vec![
                    movement.label(),
                    est.clone(),
                    d.to_string(),
                    curve.loading_mean[i].to_string(),
                    curve.loading_sd[i].to_string(),
                    curve.unloading_mean[i].to_string(),
                    curve.unloading_sd[i].to_string(),
                ]);
            }
            let loading: Vec<(f64, f64)> = curve
                .displacement_m
                .iter()
                .zip(&curve.loading_mean)
                .filter(|(_, m)| m.is_finite())
                .map(|(&d, &m)| (d * 1000.0, m))
                .collect();
            let unloading: Vec<(f64, f64)> = curve
                .displacement_m
                .iter()
                .zip(&curve.unloading_mean)
                .filter(|(_, m)| m.is_finite())
                .map(|(&d, &m)| (d * 1000.0, m))
                .collect();
            chart_data.push((est.clone(), loading, unloading));
        }
        let labels: Vec<(String, String)> = chart_data
            .iter()
            .map(|(est, _, _)| (format!("{est} loading"), format!("{est} unloading")))
            .collect();
        for ((est_loading, est_unloading), (_, loading, unloading)) in
            labels.iter().zip(&chart_data)
        {
            series.push(Series {
                label: est_loading,
                points: loading.clone(),
            });
            series.push(Series {
                label: est_unloading,
                points: unloading.clone(),
            });
        }
        if !series.is_empty() {
            write_line_chart(
                &out_dir.join(format!("stiffness_{}.svg", movement.label())),
                &ChartSpec {
                    title: &format!("Estimated stiffness, {}", movement.label()),
                    x_label: "displacement (mm)",
                    y_label: "estimated force (N)",
                },
                &series,
            )?;
        }
    }
    write_table(
        &out_dir.join("stiffness_curves.csv"),
        &[
            "movement",
            "estimator",
            "displacement_m",
            "loading_mean_n",
            "loading_sd_n",
            "unloading_mean_n",
            "unloading_sd_n",
        ],
        &curve_rows,
    )?;
    write_order_file(
        &out_dir.join("order.csv"),
        &cells.iter().map(|c| c.name.clone()).collect::<Vec<_>>(),
        &order,
    )?;

    Ok(OpenLoopReport {
        cell_names: cells.iter().map(|c| c.name.clone()).collect(),
        diverged,
    })
}

// ---------------------------------------------------------------------------
// Closed-loop transparency and stability study
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct ClosedLoopCell {
    name: String,
    estimator: String,
    axis: Axis,
    material_id: u32,
    repetition: u32,
    popc: bool,
}

/// Report of one closed-loop study.
pub struct ClosedLoopReport {
    pub metrics: Vec<CellMetrics>,
    pub spectra: BTreeMap<(String, String, bool), Spectrum>,
}

impl ClosedLoopReport {
    pub fn any_diverged(&self) -> bool {
        self.metrics.iter().any(|m| m.diverged)
    }
}

/// Hold windows per (axis, material) from a ground-truth, passivity-off
/// reference run of the same protocol.
pub fn reference_holds(
    cfg: &ExperimentConfig,
    axes: &[Axis],
    materials: &[TissueParams],
) -> Result<BTreeMap<(String, u32), HoldWindows>> {
    let spec = fs_reference_spec();
    let mut map = BTreeMap::new();
    for &axis in axes {
        let protocol = build_closed_loop(axis);
        for material in materials {
            let log = run(&RunParams {
                config: cfg,
                protocol: &protocol,
                tissue: material,
                estimator: Some(&spec),
                mode: ControlMode::ClosedLoop {
                    render_feedback: true,
                },
                popc_enabled: false,
                estimator_seed: derive_seed(cfg.sim.seed, "fs-reference"),
                material_id: material.material_id,
                repetition: 0,
            })?;
            let holds = detect_holds_for_log(&log, protocol.peak_speed(), &cfg.analysis);
            map.insert((axis.label().to_string(), material.material_id), holds);
        }
    }
    Ok(map)
}

fn cell_metrics(
    cell_name: &str,
    estimator: &str,
    protocol_label: &str,
    material_id: u32,
    repetition: u32,
    popc: bool,
    log: &RunLog,
    holds: &HoldWindows,
    cfg: &ExperimentConfig,
) -> Result<(CellMetrics, Spectrum)> {
    let rate = log.meta.log_rate_hz as f64;
    let feedback = log.column("f_feedback").expect("column");
    let truth = log.column("f_ground_truth").expect("column");
    let passive = log.column("f_passive").expect("column");
    let velocity = log.column("xdot").expect("column");
    let rmse_v = rmse(&feedback, &truth)?;
    let effort = rms_effort(&passive, rate, holds, cfg.analysis.effort_cutoff_hz)?;
    let osc = hold_oscillation_power(&feedback, rate, holds)?;
    let hold_idx: Vec<usize> = (0..velocity.len())
        .filter(|&i| holds.contains(i as f64 / rate))
        .collect();
    let hold_rms_velocity = if hold_idx.is_empty() {
        f64::NAN
    } else {
        (hold_idx.iter().map(|&i| velocity[i] * velocity[i]).sum::<f64>()
            / hold_idx.len() as f64)
            .sqrt()
    };
    let spectrum = detrend_spectrum(&feedback, rate, holds, &cfg.analysis)?;
    Ok((
        CellMetrics {
            name: cell_name.to_string(),
            estimator: estimator.to_string(),
            protocol: protocol_label.to_string(),
            material_id,
            repetition,
            popc,
            rmse: rmse_v,
            rms_effort: effort,
            oscillation_power: osc,
            hold_rms_velocity,
            diverged: false,
        },
        spectrum,
    ))
}

fn diverged_metrics(cell: &ClosedLoopCell) -> CellMetrics {
    CellMetrics {
        name: cell.name.clone(),
        estimator: cell.estimator.clone(),
        protocol: format!("closed_loop_{}", cell.axis.label()),
        material_id: cell.material_id,
        repetition: cell.repetition,
        popc: cell.popc,
        rmse: f64::NAN,
        rms_effort: f64::NAN,
        oscillation_power: f64::NAN,
        hold_rms_velocity: f64::NAN,
        diverged: true,
    }
}

/// Run the closed-loop study over estimator x axis x material x repetition x
/// passivity cells. Divergent cells are recorded and the rest continue.
pub fn run_closed_loop_study(
    cfg: &ExperimentConfig,
    plan: &StudyPlan,
    out_dir: &Path,
    parallel: usize,
) -> Result<ClosedLoopReport> {
    cfg.validate()?;
    let materials = cfg.tissue.sample_materials(cfg.sim.seed);
    let specs: BTreeMap<String, EstimatorSpec> = plan
        .estimators
        .iter()
        .map(|n| Ok((n.clone(), cfg.preset(n)?.to_spec(n)?)))
        .collect::<Result<_>>()?;
    let holds_map = reference_holds(cfg, &plan.axes, &materials)?;

    let mut cells = Vec::new();
    for est in &plan.estimators {
        for &axis in &plan.axes {
            for material in &materials {
                for rep in 1..=plan.repetitions {
                    for &popc in &plan.popc_conditions {
                        cells.push(ClosedLoopCell {
                            name: format!(
                                "cl_{est}_{}_m{}_r{rep}_popc{}",
                                axis.label(),
                                material.material_id,
                                if popc { "on" } else { "off" }
                            ),
                            estimator: est.clone(),
                            axis,
                            material_id: material.material_id,
                            repetition: rep,
                            popc,
                        });
                    }
                }
            }
        }
    }
    let order = execution_order(
        cells.len(),
        derive_seed(cfg.sim.seed, "closed-loop-order"),
        plan.randomize,
    );
    let runs_dir = out_dir.join("runs");

    let outcomes = run_cells(&cells, &order, parallel, |cell| {
        let protocol = build_closed_loop(cell.axis);
        let tissue = &materials[(cell.material_id - 1) as usize];
        let holds = &holds_map[&(cell.axis.label().to_string(), cell.material_id)];
        let result = run(&RunParams {
            config: cfg,
            protocol: &protocol,
            tissue,
            estimator: Some(&specs[&cell.estimator]),
            mode: ControlMode::ClosedLoop {
                render_feedback: true,
            },
            popc_enabled: cell.popc,
            estimator_seed: derive_seed(cfg.sim.seed, &cell.name),
            material_id: cell.material_id,
            repetition: cell.repetition,
        });
        match result {
            Ok(log) => {
                log.save(&runs_dir, &cell.name)?;
                let (metrics, spectrum) = cell_metrics(
                    &cell.name,
                    &cell.estimator,
                    &protocol.kind.label(),
                    cell.material_id,
                    cell.repetition,
                    cell.popc,
                    &log,
                    holds,
                    cfg,
                )?;
                Ok((metrics, Some(spectrum)))
            }
            Err(SimError::Diverged { partial, .. }) => {
                partial.save(&runs_dir, &cell.name)?;
                Ok((diverged_metrics(cell), None))
            }
            Err(other) => Err(other),
        }
    });

    let mut metrics = Vec::new();
    let mut spectra_acc: BTreeMap<(String, String, bool), Vec<Spectrum>> = BTreeMap::new();
    for (cell, outcome) in cells.iter().zip(outcomes) {
        let (m, spectrum) = outcome?;
        if let Some(s) = spectrum {
            spectra_acc
                .entry((cell.estimator.clone(), cell.axis.label().to_string(), cell.popc))
                .or_default()
                .push(s);
        }
        metrics.push(m);
    }
    let spectra: BTreeMap<(String, String, bool), Spectrum> = spectra_acc
        .into_iter()
        .map(|(k, v)| Ok((k, average_spectra(&v)?)))
        .collect::<Result<_>>()?;

    write_metrics_tables(out_dir, &metrics)?;
    write_spectra_outputs(out_dir, &spectra)?;
    write_order_file(
        &out_dir.join("order.csv"),
        &cells.iter().map(|c| c.name.clone()).collect::<Vec<_>>(),
        &order,
    )?;

    Ok(ClosedLoopReport { metrics, spectra })
}

fn write_metrics_tables(out_dir: &Path, metrics: &[CellMetrics]) -> Result<()> {
    let rows: Vec<Vec<String>> = metrics
        .iter()
        .map(|m| {
            vec![
                m.name.clone(),
                m.estimator.clone(),
                m.protocol.clone(),
                m.material_id.to_string(),
                m.repetition.to_string(),
                if m.popc { "on" } else { "off" }.to_string(),
                m.rmse.to_string(),
                m.rms_effort.to_string(),
                m.oscillation_power.to_string(),
                m.hold_rms_velocity.to_string(),
                (m.diverged as u8).to_string(),
            ]
        })
        .collect();
    write_table(
        &out_dir.join("metrics.csv"),
        &[
            "cell",
            "estimator",
            "protocol",
            "material",
            "repetition",
            "popc",
            "rmse_n",
            "rms_effort_n",
            "oscillation_power_n2",
            "hold_rms_velocity_m_s",
            "diverged",
        ],
        &rows,
    )?;

    // aggregate per estimator x protocol x popc over materials and reps
    let mut groups: BTreeMap<(String, String, bool), Vec<&CellMetrics>> = BTreeMap::new();
    for m in metrics.iter().filter(|m| !m.diverged) {
        groups
            .entry((m.estimator.clone(), m.protocol.clone(), m.popc))
            .or_default()
            .push(m);
    }
    let stat = |values: &[f64]| -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd =
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        (mean, sd)
    };
    let agg_rows: Vec<Vec<String>> = groups
        .iter()
        .map(|((est, protocol, popc), ms)| {
            let (rmse_m, rmse_sd) = stat(&ms.iter().map(|m| m.rmse).collect::<Vec<_>>());
            let (eff_m, eff_sd) = stat(&ms.iter().map(|m| m.rms_effort).collect::<Vec<_>>());
            let (osc_m, _) = stat(&ms.iter().map(|m| m.oscillation_power).collect::<Vec<_>>());
            vec![
                est.clone(),
                protocol.clone(),
                if *popc { "on" } else { "off" }.to_string(),
                ms.len().to_string(),
                rmse_m.to_string(),
                rmse_sd.to_string(),
                eff_m.to_string(),
                eff_sd.to_string(),
                osc_m.to_string(),
            ]
        })
        .collect();
    write_table(
        &out_dir.join("metrics_summary.csv"),
        &[
            "estimator",
            "protocol",
            "popc",
            "cells",
            "rmse_mean_n",
            "rmse_sd_n",
            "rms_effort_mean_n",
            "rms_effort_sd_n",
            "oscillation_power_mean_n2",
        ],
        &agg_rows,
    )
}

fn write_spectra_outputs(
    out_dir: &Path,
    spectra: &BTreeMap<(String, String, bool), Spectrum>,
) -> Result<()> {
    let mut rows = Vec::new();
    for ((est, axis, popc), s) in spectra {
        for (f, m) in s.frequencies_hz.iter().zip(&s.magnitudes) {
            rows.push(vec![
                est.clone(),
                axis.clone(),
                if *popc { "on" } else { "off" }.to_string(),
                f.to_string(),
                m.to_string(),
            ]);
        }
    }
    write_table(
        &out_dir.join("spectra.csv"),
        &["estimator", "axis", "popc", "frequency_hz", "magnitude_n"],
        &rows,
    )?;

    // one chart per axis, passivity off
    let axes: Vec<String> = spectra
        .keys()
        .map(|(_, axis, _)| axis.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    for axis in axes {
        let entries: Vec<(&String, &Spectrum)> = spectra
            .iter()
            .filter(|((_, a, popc), _)| *a == axis && !popc)
            .map(|((est, _, _), s)| (est, s))
            .collect();
        if entries.is_empty() {
            continue;
        }
        let series: Vec<Series> = entries
            .iter()
            .map(|(est, s)| Series {
                label: est,
                points: s
                    .frequencies_hz
                    .iter()
                    .zip(&s.magnitudes)
                    .map(|(&f, &m)| (f, m))
                    .collect(),
            })
            .collect();
        write_line_chart(
            &out_dir.join(format!("spectra_{axis}.svg")),
            &ChartSpec {
                title: &format!("Detrended hold spectra, axis {axis}, passivity off"),
                x_label: "frequency (Hz)",
                y_label: "magnitude (N)",
            },
            &series,
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Refitting study
// ---------------------------------------------------------------------------

/// Artifacts of one refit study.
pub struct RefitReport {
    pub base_validation_rmse: f64,
    /// Validation RMSE of base and refit models on the feedback-condition
    /// validation split, keyed by model name.
    pub rmse_on_ef_validation: BTreeMap<String, f64>,
    pub comparison: Vec<CellMetrics>,
    pub checkpoints: BTreeMap<String, PathBuf>,
}

/// Collect logs of brief no-feedback manipulations: the baseline training
/// distribution, distinct from the slow held movements of the evaluation
/// protocol.
fn original_runs(
    cfg: &ExperimentConfig,
    axis: Axis,
    materials: &[TissueParams],
) -> Result<Vec<RunLog>> {
    let protocol = build_brief_manipulation(axis);
    let mut logs = Vec::new();
    for material in materials {
        let label = format!("refit-original-m{}", material.material_id);
        let log = run(&RunParams {
            config: cfg,
            protocol: &protocol,
            tissue: material,
            estimator: None,
            mode: ControlMode::ClosedLoop {
                render_feedback: false,
            },
            popc_enabled: false,
            estimator_seed: derive_seed(cfg.sim.seed, &label),
            material_id: material.material_id,
            repetition: 1,
        })?;
        logs.push(log);
    }
    Ok(logs)
}

/// Collect logs for a feedback condition over all materials.
fn condition_runs(
    cfg: &ExperimentConfig,
    axis: Axis,
    condition: Condition,
    materials: &[TissueParams],
    base_model: Option<&Arc<Mlp>>,
) -> Result<Vec<RunLog>> {
    let protocol = build_closed_loop(axis);
    let mut logs = Vec::new();
    for material in materials {
        let label = format!("refit-{}-m{}", condition.label(), material.material_id);
        let spec = match condition {
            Condition::Nf => None,
            Condition::Fs => Some(fs_reference_spec()),
            Condition::Ef => {
                let model = base_model
                    .ok_or_else(|| {
                        SimError::InvalidConfig(
                            "feedback-condition data needs a trained base model".into(),
                        )
                    })?
                    .clone();
                Some(EstimatorSpec {
                    id: "neural-base".into(),
                    rate_hz: cfg.neural.rate_hz,
                    kind: EstimatorKind::Neural {
                        model,
                        latency: cfg.neural.latency_s,
                    },
                })
            }
        };
        let log = run(&RunParams {
            config: cfg,
            protocol: &protocol,
            tissue: material,
            estimator: spec.as_ref(),
            mode: ControlMode::ClosedLoop {
                render_feedback: spec.is_some(),
            },
            popc_enabled: false,
            estimator_seed: derive_seed(cfg.sim.seed, &label),
            material_id: material.material_id,
            repetition: 1,
        })?;
        logs.push(log);
    }
    Ok(logs)
}

/// Train the base network on no-feedback data, refit three variants with
/// additional data from each feedback condition, and compare all four in
/// closed loop.
pub fn run_refit_study(
    cfg: &ExperimentConfig,
    axis: Axis,
    out_dir: &Path,
    parallel: usize,
) -> Result<RefitReport> {
    cfg.validate()?;
    let materials = cfg.tissue.sample_materials(cfg.sim.seed);
    let ckpt_dir = out_dir.join("checkpoints");
    let data_dir = out_dir.join("datasets");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| SimError::io(&ckpt_dir, e))?;
    std::fs::create_dir_all(&data_dir).map_err(|e| SimError::io(&data_dir, e))?;

    // original training data: brief no-feedback teleoperation
    let original_logs = original_runs(cfg, axis, &materials)?;
    let original = generate_dataset(
        &original_logs,
        Condition::Nf,
        cfg.neural.rate_hz,
        derive_seed(cfg.sim.seed, "dataset-original"),
    )?;
    original.export_csv(&data_dir.join("original.csv"))?;

    let init_seed = derive_seed(cfg.sim.seed, "scratch-init");
    let base_model = Mlp::new(crate::neural::FEATURE_COUNT, &cfg.neural.hidden, init_seed);
    let train_cfg = cfg
        .neural
        .train_config(derive_seed(cfg.sim.seed, "train-base"));
    let (base_model, base_report) = train(base_model, &original, &train_cfg)?;
    let base_validation_rmse = base_model.rmse(&original.validation)?;
    let base_path = ckpt_dir.join("base.model.toml");
    base_model.save(&base_path)?;
    let base_arc = Arc::new(base_model);

    // new data under each feedback condition
    let mut datasets: BTreeMap<&'static str, Dataset> = BTreeMap::new();
    for condition in [Condition::Nf, Condition::Fs, Condition::Ef] {
        let logs = condition_runs(cfg, axis, condition, &materials, Some(&base_arc))?;
        let dataset = generate_dataset(
            &logs,
            condition,
            cfg.neural.rate_hz,
            derive_seed(cfg.sim.seed, &format!("dataset-{}", condition.label())),
        )?;
        dataset.export_csv(&data_dir.join(format!("{}.csv", condition.label())))?;
        datasets.insert(condition.label(), dataset);
    }

    // refit one network per condition from the same scratch initialization
    let mut checkpoints = BTreeMap::new();
    checkpoints.insert("base".to_string(), base_path);
    let mut models: BTreeMap<String, Arc<Mlp>> = BTreeMap::new();
    models.insert("base".to_string(), base_arc.clone());
    let mut training_rows: Vec<Vec<String>> = base_report
        .epochs
        .iter()
        .enumerate()
        .map(|(e, (tr, va))| {
            vec![
                "base".to_string(),
                e.to_string(),
                tr.to_string(),
                va.to_string(),
            ]
        })
        .collect();
    for (name, dataset) in &datasets {
        let refit_cfg = cfg
            .neural
            .train_config(derive_seed(cfg.sim.seed, &format!("train-{name}")));
        let (model, report) = refit(
            crate::neural::FEATURE_COUNT,
            &cfg.neural.hidden,
            init_seed,
            &original,
            dataset,
            &refit_cfg,
        )?;
        let path = ckpt_dir.join(format!("{name}.model.toml"));
        model.save(&path)?;
        for (e, (tr, va)) in report.epochs.iter().enumerate() {
            training_rows.push(vec![
                name.to_string(),
                e.to_string(),
                tr.to_string(),
                va.to_string(),
            ]);
        }
        checkpoints.insert(name.to_string(), path);
        models.insert(name.to_string(), Arc::new(model));
    }
    write_table(
        &out_dir.join("training.csv"),
        &["model", "epoch", "train_loss", "validation_mse"],
        &training_rows,
    )?;

    // validation transfer: every model scored on the feedback-condition
    // validation split
    let ef_validation = &datasets["ef"].validation;
    let mut rmse_on_ef_validation = BTreeMap::new();
    for (name, model) in &models {
        rmse_on_ef_validation.insert(name.clone(), model.rmse(ef_validation)?);
    }

    // closed-loop comparison of all four models
    let holds_map = reference_holds(cfg, &[axis], &materials)?;
    let mut cells = Vec::new();
    for name in models.keys() {
        for material in &materials {
            for popc in [false, true] {
                cells.push((name.clone(), material.material_id, popc));
            }
        }
    }
    let order = execution_order(
        cells.len(),
        derive_seed(cfg.sim.seed, "refit-order"),
        cfg.plan.randomize_order,
    );
    let runs_dir = out_dir.join("runs");
    let protocol = build_closed_loop(axis);
    let outcomes = run_cells(&cells, &order, parallel, |(name, material_id, popc)| {
        let cell_name = format!(
            "refit_{name}_{}_m{material_id}_popc{}",
            axis.label(),
            if *popc { "on" } else { "off" }
        );
        let spec = EstimatorSpec {
            id: format!("neural-{name}"),
            rate_hz: cfg.neural.rate_hz,
            kind: EstimatorKind::Neural {
                model: models[name].clone(),
                latency: cfg.neural.latency_s,
            },
        };
        let tissue = &materials[(material_id - 1) as usize];
        let holds = &holds_map[&(axis.label().to_string(), *material_id)];
        match run(&RunParams {
            config: cfg,
            protocol: &protocol,
            tissue,
            estimator: Some(&spec),
            mode: ControlMode::ClosedLoop {
                render_feedback: true,
            },
            popc_enabled: *popc,
            estimator_seed: derive_seed(cfg.sim.seed, &cell_name),
            material_id: *material_id,
            repetition: 1,
        }) {
            Ok(log) => {
                log.save(&runs_dir, &cell_name)?;
                let (metrics, _) = cell_metrics(
                    &cell_name,
                    name,
                    &protocol.kind.label(),
                    *material_id,
                    1,
                    *popc,
                    &log,
                    holds,
                    cfg,
                )?;
                Ok(metrics)
            }
            Err(SimError::Diverged { partial, .. }) => {
                partial.save(&runs_dir, &cell_name)?;
                Ok(CellMetrics {
                    name: cell_name,
                    estimator: name.clone(),
                    protocol: protocol.kind.label(),
                    material_id: *material_id,
                    repetition: 1,
                    popc: *popc,
                    rmse: f64::NAN,
                    rms_effort: f64::NAN,
                    oscillation_power: f64::NAN,
                    hold_rms_velocity: f64::NAN,
                    diverged: true,
                })
            }
            Err(other) => Err(other),
        }
    });
    let comparison: Vec<CellMetrics> = outcomes.into_iter().collect::<Result<_>>()?;

    let comparison_rows: Vec<Vec<String>> = comparison
        .iter()
        .map(|m| {
            vec![
                m.name.clone(),
                m.estimator.clone(),
                m.material_id.to_string(),
                if m.popc { "on" } else { "off" }.to_string(),
                m.rmse.to_string(),
                m.rms_effort.to_string(),
                m.oscillation_power.to_string(),
                (m.diverged as u8).to_string(),
            ]
        })
        .collect();
    write_table(
        &out_dir.join("comparison.csv"),
        &[
            "cell",
            "model",
            "material",
            "popc",
            "rmse_n",
            "rms_effort_n",
            "oscillation_power_n2",
            "diverged",
        ],
        &comparison_rows,
    )?;
    let validation_rows: Vec<Vec<String>> = rmse_on_ef_validation
        .iter()
        .map(|(name, v)| vec![name.clone(), v.to_string()])
        .collect();
    write_table(
        &out_dir.join("validation_rmse.csv"),
        &["model", "rmse_on_feedback_condition_validation_n"],
        &validation_rows,
    )?;

    Ok(RefitReport {
        base_validation_rmse,
        rmse_on_ef_validation,
        comparison,
        checkpoints,
    })
}

// ---------------------------------------------------------------------------
// Demonstration replay
// ---------------------------------------------------------------------------

/// Run the scripted 35 s mixed-manipulation protocol through the operator
/// model with a trained network rendering feedback, and emit the force trace.
pub fn run_demo_replay(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    out_dir: &Path,
) -> Result<RunLog> {
    cfg.validate()?;
    let model = Arc::new(Mlp::load(checkpoint)?);
    let spec = EstimatorSpec {
        id: "neural-demo".into(),
        rate_hz: cfg.neural.rate_hz,
        kind: EstimatorKind::Neural {
            model,
            latency: cfg.neural.latency_s,
        },
    };
    let protocol = build_demo_replay();
    let materials = cfg.tissue.sample_materials(cfg.sim.seed);
    let log = run(&RunParams {
        config: cfg,
        protocol: &protocol,
        tissue: &materials[0],
        estimator: Some(&spec),
        mode: ControlMode::ClosedLoop {
            render_feedback: true,
        },
        popc_enabled: cfg.sim.popc_enabled,
        estimator_seed: derive_seed(cfg.sim.seed, "demo-replay"),
        material_id: materials[0].material_id,
        repetition: 1,
    })?;
    log.save(out_dir, "demo_replay")?;

    let rows: Vec<Vec<String>> = log
        .records
        .iter()
        .map(|r| {
            vec![
                r.t.to_string(),
                r.f_feedback.to_string(),
                r.f_ground_truth.to_string(),
            ]
        })
        .collect();
    write_table(
        &out_dir.join("trace.csv"),
        &["t", "f_feedback", "f_ground_truth"],
        &rows,
    )?;
    let feedback: Vec<(f64, f64)> = log.records.iter().map(|r| (r.t, r.f_feedback)).collect();
    let truth: Vec<(f64, f64)> = log
        .records
        .iter()
        .map(|r| (r.t, r.f_ground_truth))
        .collect();
    write_line_chart(
        &out_dir.join("trace.svg"),
        &ChartSpec {
            title: "Demonstration replay: displayed vs true force",
            x_label: "time (s)",
            y_label: "force (N)",
        },
        &[
            Series {
                label: "displayed feedback",
                points: feedback,
            },
            Series {
                label: "ground truth",
                points: truth,
            },
        ],
    )?;
    Ok(log)
}
