//! Two-stage training: offline episodes against the nominal plant model,
//! then online batch runs that keep learning while the plant drifts.

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::plant::{self, KineticParams, PlantConfig, PlantState, StepStats};
use crate::replay::{ReplayBuffer, Transition};
use crate::reward::{self, RewardConfig, RewardState};

use super::{observe, AnyAgent, ObsSpec};

/// Shared, read-only inputs of a training stage.
#[derive(Clone, Copy)]
pub struct TrainSetup<'a> {
    pub plant: &'a PlantConfig,
    pub reward: &'a RewardConfig,
    pub obs: &'a ObsSpec,
}

/// One control step of a trajectory: the post-step plant state, the action
/// that produced it and the reward collected.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub state: PlantState,
    pub action: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct EpisodeOptions {
    /// Add exploration noise to actions.
    pub explore: bool,
    /// Run learning updates once the buffer is warm.
    pub learn: bool,
    /// Continuous agents only: act uniformly at random until the buffer
    /// reaches the warm-up size, giving the critics action diversity.
    pub random_warmup: bool,
}

impl EpisodeOptions {
    pub fn training() -> Self {
        EpisodeOptions {
            explore: true,
            learn: true,
            random_warmup: true,
        }
    }

    pub fn evaluation() -> Self {
        EpisodeOptions {
            explore: false,
            learn: false,
            random_warmup: false,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EpisodeOutcome {
    pub rows: Vec<TraceRow>,
    pub sum_sq_err: f64,
    pub clamp_events: u64,
}

impl EpisodeOutcome {
    pub fn rmse(&self, _t_ref: f64) -> f64 {
        if self.rows.is_empty() {
            return f64::NAN;
        }
        (self.sum_sq_err / self.rows.len() as f64).sqrt()
    }

    pub fn mean_reward(&self) -> f64 {
        if self.rows.is_empty() {
            return f64::NAN;
        }
        self.rows.iter().map(|r| r.reward).sum::<f64>() / self.rows.len() as f64
    }
}

/// Run one full batch episode: observe, act, step the plant, collect the
/// reward, store the transition and (optionally) learn each control step.
pub fn run_episode(
    agent: &mut AnyAgent,
    setup: TrainSetup<'_>,
    mut buf: Option<&mut ReplayBuffer>,
    rng: &mut ChaCha8Rng,
    opts: EpisodeOptions,
) -> Result<EpisodeOutcome> {
    let steps = setup.plant.steps_per_episode();
    let min_buffer = agent.warmup();
    let (a_min, a_max) = agent.action_bounds();
    let mut stats = StepStats::default();
    let mut outcome = EpisodeOutcome {
        rows: Vec::with_capacity(steps),
        ..EpisodeOutcome::default()
    };

    let mut state = plant::reset(setup.plant);
    let mut rstate = RewardState::new();
    for k in 0..steps {
        let obs = observe(&state, rstate.cum_abs_err, setup.obs);
        let warm = buf.as_deref().map_or(false, |b| b.len() < min_buffer);
        let action = if opts.random_warmup && warm && agent.is_continuous() {
            rng.random_range(a_min..=a_max)
        } else {
            agent.select_action(&obs, opts.explore, rng)?
        };
        let next = plant::step_counted(&state, action, setup.plant, &mut stats)?;
        let e = reward::error(next.t_r, setup.reward);
        let (r, rstate_next) = reward::step_reward(e, &rstate, setup.reward)?;
        let done = k + 1 == steps;
        if let Some(b) = buf.as_deref_mut() {
            let obs_next = observe(&next, rstate_next.cum_abs_err, setup.obs);
            b.push(Transition {
                s: obs.to_vec(),
                a: vec![action],
                r,
                s_next: obs_next.to_vec(),
                done,
            })?;
        }
        if opts.learn {
            if let Some(b) = buf.as_deref() {
                if b.len() >= min_buffer {
                    agent.update(b, rng)?;
                }
            }
        }
        outcome.rows.push(TraceRow {
            state: next,
            action,
            reward: r,
        });
        outcome.sum_sq_err += e * e;
        state = next;
        rstate = rstate_next;
    }
    outcome.clamp_events = stats.neg_clamps;
    Ok(outcome)
}

/// Plateau-based early stop for the offline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EarlyStopConfig {
    pub enabled: bool,
    /// Run a greedy evaluation episode every this many training episodes.
    pub eval_every: usize,
    /// Stop after this many evaluations without sufficient improvement.
    pub patience: usize,
    /// Never stop before this many episodes.
    pub min_episodes: usize,
    /// Relative RMSE improvement that counts as progress.
    pub min_rel_improvement: f64,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        EarlyStopConfig {
            enabled: true,
            eval_every: 10,
            patience: 4,
            min_episodes: 60,
            min_rel_improvement: 0.02,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct OfflineReport {
    pub episodes_run: usize,
    /// (episode, greedy-evaluation RMSE) pairs.
    pub eval_history: Vec<(usize, f64)>,
    pub total_env_steps: u64,
    pub clamp_events: u64,
    pub stopped_early: bool,
}

/// Offline stage: `episodes` training episodes against the nominal plant,
/// filling `e1` and updating the agent each step, with an optional
/// plateau early stop driven by greedy evaluation episodes.
pub fn train_offline(
    agent: &mut AnyAgent,
    setup: TrainSetup<'_>,
    episodes: usize,
    early: &EarlyStopConfig,
    e1: &mut ReplayBuffer,
    rng: &mut ChaCha8Rng,
) -> Result<OfflineReport> {
    if let AnyAgent::Dqn(dqn) = agent {
        let steps = setup.plant.steps_per_episode() as u64;
        dqn.set_anneal_steps(steps * episodes as u64);
    }
    let mut report = OfflineReport::default();
    let mut best = f64::INFINITY;
    let mut evals_since_improve = 0usize;
    for ep in 0..episodes {
        let outcome = run_episode(agent, setup, Some(e1), rng, EpisodeOptions::training())
            .map_err(|e| Error::fault(format!("offline episode {ep}: {e}")))?;
        report.episodes_run = ep + 1;
        report.total_env_steps += outcome.rows.len() as u64;
        report.clamp_events += outcome.clamp_events;

        if early.eval_every > 0 && (ep + 1) % early.eval_every == 0 {
            let eval = run_episode(agent, setup, None, rng, EpisodeOptions::evaluation())
                .map_err(|e| Error::fault(format!("offline eval after episode {ep}: {e}")))?;
            let rmse = eval.rmse(setup.reward.t_ref);
            report.eval_history.push((ep + 1, rmse));
            if rmse < best * (1.0 - early.min_rel_improvement) {
                best = rmse;
                evals_since_improve = 0;
            } else {
                evals_since_improve += 1;
            }
            if early.enabled
                && ep + 1 >= early.min_episodes
                && evals_since_improve >= early.patience
            {
                report.stopped_early = true;
                break;
            }
        }
    }
    Ok(report)
}

/// One online batch run and everything recorded about it.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    /// 1-based batch index.
    pub index: usize,
    pub rows: Vec<TraceRow>,
    pub rmse: f64,
    pub mean_reward: f64,
    pub wall_time_s: f64,
    pub clamp_events: u64,
    /// Populated when the batch aborted (plant fault or divergence).
    pub fault: Option<String>,
    /// Kinetic parameters the batch actually ran with.
    pub params_used: KineticParams,
}

/// Online stage: consecutive batch runs against the (possibly drifting)
/// true plant, keeping the networks and replay memory E2 across batches.
/// `b2b_rel_sd > 0` perturbs the pre-exponential factors each batch.
/// `on_batch` runs after every completed batch (checkpointing hook).
pub fn train_online(
    agent: &mut AnyAgent,
    setup: TrainSetup<'_>,
    e2: &mut ReplayBuffer,
    batches: usize,
    b2b_rel_sd: f64,
    rng: &mut ChaCha8Rng,
    rng_perturb: &mut ChaCha8Rng,
    mut on_batch: impl FnMut(&AnyAgent, &BatchOutcome) -> Result<()>,
) -> Result<Vec<BatchOutcome>> {
    let mut outcomes = Vec::with_capacity(batches);
    for b in 1..=batches {
        let params = if b2b_rel_sd > 0.0 {
            plant::perturb(&setup.plant.params, b2b_rel_sd, rng_perturb)
        } else {
            setup.plant.params.clone()
        };
        let plant_b = PlantConfig {
            params: params.clone(),
            ..setup.plant.clone()
        };
        let setup_b = TrainSetup {
            plant: &plant_b,
            reward: setup.reward,
            obs: setup.obs,
        };
        let t0 = Instant::now();
        let opts = EpisodeOptions {
            random_warmup: false,
            ..EpisodeOptions::training()
        };
        let outcome = match run_episode(agent, setup_b, Some(e2), rng, opts) {
            Ok(ep) => BatchOutcome {
                index: b,
                rmse: ep.rmse(setup.reward.t_ref),
                mean_reward: ep.mean_reward(),
                wall_time_s: t0.elapsed().as_secs_f64(),
                clamp_events: ep.clamp_events,
                rows: ep.rows,
                fault: None,
                params_used: params,
            },
            Err(e) => BatchOutcome {
                index: b,
                rows: Vec::new(),
                rmse: f64::NAN,
                mean_reward: f64::NAN,
                wall_time_s: t0.elapsed().as_secs_f64(),
                clamp_events: 0,
                fault: Some(e.to_string()),
                params_used: params,
            },
        };
        on_batch(agent, &outcome)?;
        outcomes.push(outcome);
    }
    Ok(outcomes)
}
