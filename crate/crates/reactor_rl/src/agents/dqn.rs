//! Deep Q-network over a discrete jacket-temperature table with an
//! epsilon-greedy schedule and a periodically hard-copied target network.

use ndarray::{Array1, Array2};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use crate::approx::{adam_step, AdamState, Mlp, OutputActivation};
use crate::binio;
use crate::error::{Error, Result};
use crate::replay::ReplayBuffer;

use super::td3::batch_arrays;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnHyper {
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub warmup: usize,
    pub hidden: Vec<usize>,
    /// Epsilon-greedy schedule: linear from `eps_start` to `eps_end` over
    /// the offline stage, then held at `eps_end`.
    pub eps_start: f64,
    pub eps_end: f64,
    /// Hard-copy period of the target network, in updates.
    pub target_copy_period: u64,
    /// Discrete action range; wider than the continuous agents' because
    /// coarse tables cannot honour a tight constraint.
    pub action_min: f64,
    pub action_max: f64,
    pub action_step: f64,
}

impl Default for DqnHyper {
    fn default() -> Self {
        DqnHyper {
            gamma: 0.99,
            lr: 1e-3,
            batch_size: 100,
            warmup: 1000,
            hidden: vec![400, 300],
            eps_start: 1.0,
            eps_end: 0.05,
            target_copy_period: 500,
            action_min: 330.0,
            action_max: 360.0,
            action_step: 0.75,
        }
    }
}

impl DqnHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config("dqn: gamma must be in (0, 1)"));
        }
        if self.action_min >= self.action_max || self.action_step <= 0.0 {
            return Err(Error::config("dqn: bad action range"));
        }
        if !(0.0..=1.0).contains(&self.eps_start) || !(0.0..=1.0).contains(&self.eps_end) {
            return Err(Error::config("dqn: epsilon values must be in [0, 1]"));
        }
        if self.target_copy_period == 0 {
            return Err(Error::config("dqn: target_copy_period must be >= 1"));
        }
        let span = self.action_max - self.action_min;
        let n = span / self.action_step;
        if (n - n.round()).abs() > 1e-9 {
            return Err(Error::config("dqn: action_step must divide the range evenly"));
        }
        Ok(())
    }

    fn n_actions(&self) -> usize {
        ((self.action_max - self.action_min) / self.action_step).round() as usize + 1
    }
}

pub struct DqnAgent {
    policy: Mlp,
    target: Mlp,
    actions: Vec<f64>,
    opt: AdamState,
    hyper: DqnHyper,
    update_count: u64,
    /// Exploration steps taken so far; drives the epsilon schedule.
    env_steps: u64,
    /// Steps over which epsilon anneals; set by the trainer at the start of
    /// the offline stage.
    anneal_steps: u64,
}

impl DqnAgent {
    pub fn new(obs_dim: usize, hyper: DqnHyper, rng: &mut ChaCha8Rng) -> Result<Self> {
        hyper.validate()?;
        let n_actions = hyper.n_actions();
        let actions: Vec<f64> = (0..n_actions)
            .map(|i| hyper.action_min + i as f64 * hyper.action_step)
            .collect();
        let mut sizes = vec![obs_dim];
        sizes.extend(&hyper.hidden);
        sizes.push(n_actions);
        let policy = Mlp::init(&sizes, OutputActivation::Linear, rng);
        let target = policy.clone();
        let opt = AdamState::new(&policy, hyper.lr);
        Ok(DqnAgent {
            policy,
            target,
            actions,
            opt,
            hyper,
            update_count: 0,
            env_steps: 0,
            anneal_steps: 0,
        })
    }

    pub fn hyper(&self) -> &DqnHyper {
        &self.hyper
    }

    pub fn actions(&self) -> &[f64] {
        &self.actions
    }

    pub fn policy(&self) -> &Mlp {
        &self.policy
    }

    pub fn target(&self) -> &Mlp {
        &self.target
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    pub fn set_anneal_steps(&mut self, steps: u64) {
        self.anneal_steps = steps;
    }

    /// Current exploration rate under the linear schedule.
    pub fn epsilon(&self) -> f64 {
        if self.anneal_steps == 0 || self.env_steps >= self.anneal_steps {
            return self.hyper.eps_end;
        }
        let frac = self.env_steps as f64 / self.anneal_steps as f64;
        self.hyper.eps_start + (self.hyper.eps_end - self.hyper.eps_start) * frac
    }

    /// Greedy action index for an observation (ties break to the lowest).
    pub fn greedy_index(&self, obs: &[f64]) -> Result<usize> {
        let q = self.policy.forward(obs)?;
        let mut best = 0;
        for (i, v) in q.iter().enumerate() {
            if *v > q[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// Epsilon-greedy when exploring, greedy otherwise. Exploration steps
    /// advance the epsilon schedule.
    pub fn select_action(&mut self, obs: &[f64], explore: bool, rng: &mut ChaCha8Rng) -> Result<f64> {
        let idx = if explore {
            let eps = self.epsilon();
            self.env_steps += 1;
            if rng.random_range(0.0..1.0) < eps {
                rng.random_range(0..self.actions.len())
            } else {
                self.greedy_index(obs)?
            }
        } else {
            self.greedy_index(obs)?
        };
        Ok(self.actions[idx])
    }

    fn action_index(&self, a: f64) -> Result<usize> {
        let idx = ((a - self.hyper.action_min) / self.hyper.action_step).round();
        if idx < 0.0 || idx as usize >= self.actions.len() {
            return Err(Error::fault(format!("dqn: action {a} outside the table")));
        }
        Ok(idx as usize)
    }

    /// One Adam step on MSE(Q(s, a), r + gamma (1 - done) max_a' Q_T(s', a')).
    /// The target network is hard-copied every `target_copy_period` updates.
    pub fn update(&mut self, buf: &ReplayBuffer, rng: &mut ChaCha8Rng) -> Result<f64> {
        let batch = buf.sample(self.hyper.batch_size, rng)?;
        let obs_dim = self.policy.input_dim();
        let (states, actions, rewards, next_states, dones) = batch_arrays(&batch, obs_dim)?;
        let n = states.nrows();

        let q_next = self.target.forward_batch(&next_states)?;
        let mut tv = Array1::zeros(n);
        for i in 0..n {
            let row = q_next.row(i);
            let max_q = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            tv[i] = rewards[i] + self.hyper.gamma * (1.0 - dones[i]) * max_q;
        }

        let (q, cache) = self.policy.forward_cached(&states)?;
        let mut upstream = Array2::zeros(q.raw_dim());
        let mut loss = 0.0;
        for i in 0..n {
            let ai = self.action_index(actions[i])?;
            let resid = q[[i, ai]] - tv[i];
            loss += resid * resid / n as f64;
            upstream[[i, ai]] = 2.0 * resid / n as f64;
        }
        if !loss.is_finite() {
            return Err(Error::fault(format!(
                "dqn update diverged: loss={loss} at update {}",
                self.update_count
            )));
        }
        let (grads, _) = self.policy.backward(&cache, &upstream)?;
        adam_step(&mut self.policy, &grads, &mut self.opt);
        self.update_count += 1;
        if self.update_count % self.hyper.target_copy_period == 0 {
            self.target.copy_from(&self.policy);
        }
        Ok(loss)
    }

    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        let h = &self.hyper;
        for v in [
            h.gamma,
            h.lr,
            h.eps_start,
            h.eps_end,
            h.action_min,
            h.action_max,
            h.action_step,
        ] {
            binio::write_f64(w, v)?;
        }
        binio::write_u64(w, h.batch_size as u64)?;
        binio::write_u64(w, h.warmup as u64)?;
        binio::write_u64(w, h.target_copy_period)?;
        binio::write_u32(w, h.hidden.len() as u32)?;
        for s in &h.hidden {
            binio::write_u32(w, *s as u32)?;
        }
        binio::write_u64(w, self.update_count)?;
        binio::write_u64(w, self.env_steps)?;
        binio::write_u64(w, self.anneal_steps)?;
        self.policy.save(w)?;
        self.target.save(w)?;
        self.opt.save(w)
    }

    pub fn load<R: Read>(r: &mut R) -> Result<DqnAgent> {
        let mut f = [0.0f64; 7];
        for v in f.iter_mut() {
            *v = binio::read_f64(r)?;
        }
        let batch_size = binio::read_u64(r)? as usize;
        let warmup = binio::read_u64(r)? as usize;
        let target_copy_period = binio::read_u64(r)?;
        let n_hidden = binio::read_u32(r)? as usize;
        let mut hidden = Vec::with_capacity(n_hidden);
        for _ in 0..n_hidden {
            hidden.push(binio::read_u32(r)? as usize);
        }
        let hyper = DqnHyper {
            gamma: f[0],
            lr: f[1],
            eps_start: f[2],
            eps_end: f[3],
            action_min: f[4],
            action_max: f[5],
            action_step: f[6],
            batch_size,
            warmup,
            target_copy_period,
            hidden,
        };
        hyper.validate()?;
        let update_count = binio::read_u64(r)?;
        let env_steps = binio::read_u64(r)?;
        let anneal_steps = binio::read_u64(r)?;
        let policy = Mlp::load(r)?;
        let target = Mlp::load(r)?;
        let opt = AdamState::load(r, &policy)?;
        let actions: Vec<f64> = (0..hyper.n_actions())
            .map(|i| hyper.action_min + i as f64 * hyper.action_step)
            .collect();
        Ok(DqnAgent {
            policy,
            target,
            actions,
            opt,
            hyper,
            update_count,
            env_steps,
            anneal_steps,
        })
    }
}
