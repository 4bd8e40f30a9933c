//! Deterministic fixed-step engine scheduling plant integration, follower
//! tracking, estimation, passivity control, and logging on one master clock.
//!
//! Within a tick, tasks run in a fixed order: trajectory sample, plant step,
//! follower/environment update, estimator update, passivity observer and
//! controller, log. The plant is a sampled-data system at its own rate: each
//! step consumes the tracking force and displayed feedback latched at the end
//! of its previous tick, which makes every consumed value appear in the log
//! row written on that tick and lets [`replay_plant_states`] reproduce the
//! trajectory bit-exactly from the log alone.

use crate::config::ExperimentConfig;
use crate::environment::{initialize_grasp, psm_follow, tissue_force, TissueParams};
use crate::error::{Result, SimError};
use crate::estimation::{Estimator, EstimatorInputs, EstimatorSpec};
use crate::passivity::{control, PassivityWindow};
use crate::plant::{step as plant_step, tracking_force, PlantState};
use crate::runlog::{LogRecord, RunLog, RunMeta};
use crate::trajectory::TrajectoryProtocol;

/// Tasks that can fire on a master tick, in intra-tick execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Trajectory,
    Plant,
    Environment,
    Estimator,
    Popc,
    Log,
}

/// Per-task firing intervals in master ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TickPlan {
    pub master_rate_hz: u32,
    pub plant_interval: u64,
    pub estimator_interval: u64,
    pub popc_interval: u64,
    pub log_interval: u64,
}

impl TickPlan {
    /// Tasks due on `tick`, in execution order. The trajectory is sampled on
    /// every tick; a task with rate r fires when `tick % (master/r) == 0`,
    /// starting at tick 0.
    pub fn tasks_due(&self, tick: u64) -> Vec<Task> {
        let mut tasks = vec![Task::Trajectory];
        if tick % self.plant_interval == 0 {
            tasks.push(Task::Plant);
            tasks.push(Task::Environment);
        }
        if tick % self.estimator_interval == 0 {
            tasks.push(Task::Estimator);
        }
        if tick % self.popc_interval == 0 {
            tasks.push(Task::Popc);
        }
        if tick % self.log_interval == 0 {
            tasks.push(Task::Log);
        }
        tasks
    }

    /// Firings of a task with the given interval over `ticks` master ticks.
    pub fn firing_count(interval: u64, ticks: u64) -> u64 {
        ticks.div_ceil(interval)
    }
}

/// Validate rate divisibility and lay out the per-tick plan.
pub fn make_schedule(
    sim: &crate::config::SimConfig,
    estimator_rate_hz: u32,
) -> Result<TickPlan> {
    sim.validate()?;
    sim.check_divisible("estimator", estimator_rate_hz)?;
    let master = sim.master_rate_hz as u64;
    Ok(TickPlan {
        master_rate_hz: sim.master_rate_hz,
        plant_interval: master / sim.plant_rate_hz as u64,
        estimator_interval: master / estimator_rate_hz as u64,
        popc_interval: master / sim.popc_rate_hz as u64,
        log_interval: master / sim.log_rate_hz as u64,
    })
}

/// How the protocol drives the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlMode {
    /// The protocol commands the follower directly; no operator model is in
    /// the loop and nothing is rendered.
    OpenLoop,
    /// The protocol drives the operator model, the follower tracks the
    /// scaled operator position, and the estimate is displayed as force
    /// feedback when `render_feedback` is set.
    ClosedLoop { render_feedback: bool },
}

/// Everything one run needs. The estimator is optional so no-feedback data
/// collection can run the bare loop.
pub struct RunParams<'a> {
    pub config: &'a ExperimentConfig,
    pub protocol: &'a TrajectoryProtocol,
    pub tissue: &'a TissueParams,
    pub estimator: Option<&'a EstimatorSpec>,
    pub mode: ControlMode,
    pub popc_enabled: bool,
    /// Seed for the estimator noise stream.
    pub estimator_seed: u64,
    pub material_id: u32,
    pub repetition: u32,
}

/// Execute one experiment deterministically. Identical parameters and seeds
/// produce bit-identical logs. On divergence the partial log is retained
/// inside the error.
pub fn run(params: &RunParams) -> Result<RunLog> {
    let cfg = params.config;
    let sim = &cfg.sim;
    let estimator_rate = params
        .estimator
        .map_or(cfg.neural.rate_hz, |e| e.rate_hz);
    let plan = make_schedule(sim, estimator_rate)?;
    params.tissue.validate()?;

    let duration = if sim.duration_s > 0.0 {
        sim.duration_s
    } else {
        params.protocol.duration()
    };
    if params.protocol.duration() > duration + 1e-9 {
        return Err(SimError::InvalidConfig(format!(
            "protocol duration {} s exceeds configured run duration {} s",
            params.protocol.duration(),
            duration
        )));
    }
    let n_ticks = (duration * sim.master_rate_hz as f64).round() as u64;
    let dt_plant = 1.0 / sim.plant_rate_hz as f64;
    let dt_popc = 1.0 / sim.popc_rate_hz as f64;

    let follow_scale = match params.mode {
        ControlMode::OpenLoop => 1.0,
        ControlMode::ClosedLoop { .. } => sim.scale,
    };

    let (mut psm, tissue) = initialize_grasp(
        params.protocol,
        params.tissue,
        follow_scale,
        sim.psm_lag_tau_s,
        sim.pretension_factor,
    );
    let mut estimator = params
        .estimator
        .map(|spec| Estimator::new(spec, sim.master_rate_hz, params.estimator_seed))
        .transpose()?;

    let mut state = PlantState::at_rest(params.protocol.start_position());
    let mut window = PassivityWindow::new(cfg.popc.window);

    // Values latched for the plant's next step (sampled-data semantics).
    let mut latched_f_c = 0.0;
    let mut latched_fb_total = 0.0;

    // What the feedback column reports, zero-order held between estimator
    // ticks: the estimate under open loop, the rendered feedback in closed
    // loop, zero when nothing is rendered.
    let mut feedback_column = 0.0;
    let mut f_passive = 0.0;
    let mut e_win = 0.0;

    let meta = RunMeta {
        config_hash: cfg.hash(),
        estimator_id: params
            .estimator
            .map_or_else(|| "none".to_string(), |e| e.id.clone()),
        protocol: params.protocol.kind.label(),
        material_id: params.material_id,
        repetition: params.repetition,
        popc_enabled: params.popc_enabled,
        seed: params.estimator_seed,
        scale: sim.scale,
        master_rate_hz: sim.master_rate_hz,
        plant_rate_hz: sim.plant_rate_hz,
        estimator_rate_hz: estimator_rate,
        popc_rate_hz: sim.popc_rate_hz,
        log_rate_hz: sim.log_rate_hz,
        diverged_at: None,
    };
    let mut records: Vec<LogRecord> =
        Vec::with_capacity((duration * sim.log_rate_hz as f64) as usize + 1);

    for tick in 0..n_ticks {
        let t = tick as f64 / sim.master_rate_hz as f64;
        let des = params.protocol.sample(t);
        let plant_due = tick % plan.plant_interval == 0;

        if params.mode == ControlMode::OpenLoop {
            // the commanded trajectory is the reference itself
            state = PlantState {
                x: des.x_des,
                v: des.v_des,
            };
        }
        if plant_due {
            if let ControlMode::ClosedLoop { .. } = params.mode {
                if tick > 0 {
                    state = plant_step(state, latched_f_c, latched_fb_total, dt_plant, &cfg.plant);
                    if !state.is_finite()
                        || state.x.abs() > sim.x_bound_m
                        || state.v.abs() > sim.v_bound_m_s
                    {
                        let (quantity, value, bound) = if state.x.abs() > sim.x_bound_m {
                            ("position", state.x, sim.x_bound_m)
                        } else {
                            ("velocity", state.v, sim.v_bound_m_s)
                        };
                        let mut meta = meta.clone();
                        meta.diverged_at = Some(t);
                        return Err(SimError::Diverged {
                            t,
                            quantity,
                            value,
                            bound,
                            partial: Box::new(RunLog { meta, records }),
                        });
                    }
                }
                latched_f_c = tracking_force(state, des, &cfg.plant);
            }
            // follower tracks the (scaled) reference
            psm = psm_follow(psm, state.x, follow_scale, dt_plant);
        }

        let f_true = tissue_force(&tissue, psm.position, psm.velocity);
        if let Some(est) = estimator.as_mut() {
            est.record_truth(f_true);
            if tick % plan.estimator_interval == 0 {
                let inputs = EstimatorInputs {
                    psm_position: psm.position,
                    psm_velocity: psm.velocity,
                    f_ground_truth: f_true,
                    f_c: latched_f_c,
                    master_x: state.x,
                    master_v: state.v,
                    prev_feedback: feedback_column,
                };
                let estimate = est.update(&inputs)?;
                feedback_column = match params.mode {
                    ControlMode::OpenLoop => estimate,
                    ControlMode::ClosedLoop { render_feedback } => {
                        if render_feedback {
                            estimate
                        } else {
                            0.0
                        }
                    }
                };
            }
        }

        if tick % plan.popc_interval == 0 {
            if let ControlMode::ClosedLoop { .. } = params.mode {
                e_win = window.observe(feedback_column, state.v, dt_popc);
                f_passive = if params.popc_enabled {
                    control(e_win, state.v, dt_popc, &cfg.popc)
                } else {
                    0.0
                };
            }
        }

        if tick % plan.log_interval == 0 {
            records.push(LogRecord {
                t,
                x_des: des.x_des,
                xdot_des: des.v_des,
                x: state.x,
                xdot: state.v,
                f_c: latched_f_c,
                f_feedback: feedback_column,
                f_passive,
                e_win,
                psm_position: psm.position,
                f_ground_truth: f_true,
            });
        }

        if plant_due {
            // latch what the next plant step will consume; zero whenever
            // nothing is rendered, because the column is zero then too
            latched_fb_total = feedback_column + f_passive;
        }
    }

    Ok(RunLog { meta, records })
}

/// Reconstruct the operator states from a log's commands and feedback
/// columns by running the same plant stepper over consecutive plant-tick
/// rows. Returns (x, v) per plant tick, starting from the logged initial row.
///
/// Exactness relies on the engine's latching: the step producing the state
/// in one plant-tick row consumed exactly the values logged in the previous
/// plant-tick row.
pub fn replay_plant_states(log: &RunLog, plant: &crate::plant::HumanSsmParams) -> Vec<(f64, f64)> {
    let rows_per_plant_tick =
        (log.meta.log_rate_hz / log.meta.plant_rate_hz).max(1) as usize;
    let dt = 1.0 / log.meta.plant_rate_hz as f64;
    let mut out = Vec::new();
    let mut state = match log.records.first() {
        Some(r) => PlantState { x: r.x, v: r.xdot },
        None => return out,
    };
    out.push((state.x, state.v));
    let mut idx = 0;
    while idx + rows_per_plant_tick < log.records.len() {
        let prev = &log.records[idx];
        state = plant_step(
            state,
            prev.f_c,
            prev.f_feedback + prev.f_passive,
            dt,
            plant,
        );
        out.push((state.x, state.v));
        idx += rows_per_plant_tick;
    }
    out
}
