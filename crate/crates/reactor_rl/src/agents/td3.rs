//! Twin-critic actor-critic agent with delayed policy updates and target
//! policy smoothing. The same update path serves DDPG when configured
//! with a single critic, policy frequency 1 and zero target-policy noise.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use crate::approx::{adam_step, AdamState, Mlp, OutputActivation};
use crate::binio;
use crate::error::{Error, Result};
use crate::replay::{ReplayBuffer, Transition};

/// How the actor produces actions in Kelvin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActorOutput {
    /// Linear output clipped to the action range.
    LinearClip,
    /// tanh output rescaled onto the action range.
    ScaledTanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Td3Hyper {
    /// Discount factor.
    pub gamma: f64,
    /// Exploration noise standard deviation, K.
    pub sigma_explore: f64,
    /// Target policy smoothing noise standard deviation, K.
    pub sigma_policy: f64,
    /// Clip bound for the smoothing noise, K.
    pub noise_clip: f64,
    /// Polyak target update rate.
    pub tau: f64,
    /// Critic updates per actor/target update.
    pub policy_freq: u64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub batch_size: usize,
    /// Transitions stored before updates begin.
    pub warmup: usize,
    pub hidden: Vec<usize>,
    pub action_min: f64,
    pub action_max: f64,
    pub actor_output: ActorOutput,
}

impl Default for Td3Hyper {
    fn default() -> Self {
        Td3Hyper {
            gamma: 0.99,
            sigma_explore: 0.1,
            sigma_policy: 0.2,
            noise_clip: 0.5,
            tau: 0.005,
            policy_freq: 2,
            lr_actor: 1e-3,
            lr_critic: 1e-3,
            batch_size: 100,
            warmup: 1000,
            hidden: vec![400, 300],
            action_min: 330.0,
            action_max: 350.0,
            actor_output: ActorOutput::LinearClip,
        }
    }
}

impl Td3Hyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config("td3: gamma must be in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::config("td3: tau must be in [0, 1]"));
        }
        if self.policy_freq < 1 {
            return Err(Error::config("td3: policy_freq must be >= 1"));
        }
        if !(self.noise_clip > 0.0) {
            return Err(Error::config("td3: noise_clip must be positive"));
        }
        if self.sigma_explore < 0.0 || self.sigma_policy < 0.0 {
            return Err(Error::config("td3: noise deviations must be non-negative"));
        }
        if self.action_min >= self.action_max {
            return Err(Error::config("td3: action_min must be below action_max"));
        }
        if self.batch_size == 0 || self.hidden.is_empty() {
            return Err(Error::config("td3: batch_size and hidden layers required"));
        }
        Ok(())
    }

    fn action_mid(&self) -> f64 {
        0.5 * (self.action_min + self.action_max)
    }

    fn action_half(&self) -> f64 {
        0.5 * (self.action_max - self.action_min)
    }
}

/// Actor/critic networks, their target copies and optimizer state.
pub struct Td3Agent {
    actor: Mlp,
    actor_target: Mlp,
    critics: Vec<Mlp>,
    critic_targets: Vec<Mlp>,
    opt_actor: AdamState,
    opt_critics: Vec<AdamState>,
    hyper: Td3Hyper,
    obs_dim: usize,
    update_count: u64,
}

impl Td3Agent {
    /// Standard twin-critic construction. Target networks start as exact
    /// copies of their sources.
    pub fn new(obs_dim: usize, hyper: Td3Hyper, rng: &mut ChaCha8Rng) -> Result<Self> {
        Self::with_critics(obs_dim, hyper, 2, rng)
    }

    pub(crate) fn with_critics(
        obs_dim: usize,
        hyper: Td3Hyper,
        n_critics: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        hyper.validate()?;
        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend(&hyper.hidden);
        actor_sizes.push(1);
        let actor_act = match hyper.actor_output {
            ActorOutput::LinearClip => OutputActivation::Linear,
            ActorOutput::ScaledTanh => OutputActivation::ScaledTanh {
                lo: hyper.action_min,
                hi: hyper.action_max,
            },
        };
        let mut actor = Mlp::init(&actor_sizes, actor_act, rng);
        if hyper.actor_output == ActorOutput::LinearClip {
            // Centre the initial policy on the action range; a fresh linear
            // head outputs near 0 K, which would pin every action at the
            // lower clip bound and stall learning.
            actor.output_bias_mut()[0] += hyper.action_mid();
        }
        let actor_target = actor.clone();

        let mut critic_sizes = vec![obs_dim + 1];
        critic_sizes.extend(&hyper.hidden);
        critic_sizes.push(1);
        let mut critics = Vec::with_capacity(n_critics);
        for _ in 0..n_critics {
            critics.push(Mlp::init(&critic_sizes, OutputActivation::Linear, rng));
        }
        let critic_targets = critics.clone();

        let opt_actor = AdamState::new(&actor, hyper.lr_actor);
        let opt_critics = critics
            .iter()
            .map(|c| AdamState::new(c, hyper.lr_critic))
            .collect();
        Ok(Td3Agent {
            actor,
            actor_target,
            critics,
            critic_targets,
            opt_actor,
            opt_critics,
            hyper,
            obs_dim,
            update_count: 0,
        })
    }

    pub fn hyper(&self) -> &Td3Hyper {
        &self.hyper
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    pub fn n_critics(&self) -> usize {
        self.critics.len()
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn actor_target(&self) -> &Mlp {
        &self.actor_target
    }

    pub fn critics(&self) -> &[Mlp] {
        &self.critics
    }

    pub fn critic_targets(&self) -> &[Mlp] {
        &self.critic_targets
    }

    fn clip_action(&self, a: f64) -> f64 {
        a.clamp(self.hyper.action_min, self.hyper.action_max)
    }

    /// Deterministic policy output for one observation, before clipping.
    pub fn policy_raw(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.actor.forward(obs)?[0])
    }

    /// a = clip(mu(s) + eps, a_min, a_max); eps ~ N(0, sigma_explore^2)
    /// when exploring, 0 when evaluating.
    pub fn select_action(&self, obs: &[f64], explore: bool, rng: &mut ChaCha8Rng) -> Result<f64> {
        let mut a = self.policy_raw(obs)?;
        if explore && self.hyper.sigma_explore > 0.0 {
            let normal = Normal::new(0.0, self.hyper.sigma_explore)
                .map_err(|e| Error::fault(e.to_string()))?;
            a += normal.sample(rng);
        }
        Ok(self.clip_action(a))
    }

    /// Smoothed target actions for a batch of next states:
    /// clip(mu_T(s') + clip(eps, -c, c), a_min, a_max).
    pub fn target_actions(&self, next_states: &Array2<f64>, rng: &mut ChaCha8Rng) -> Result<Array1<f64>> {
        let mu = self.actor_target.forward_batch(next_states)?;
        let mut out = mu.index_axis(Axis(1), 0).to_owned();
        if self.hyper.sigma_policy > 0.0 {
            let normal = Normal::new(0.0, self.hyper.sigma_policy)
                .map_err(|e| Error::fault(e.to_string()))?;
            let c = self.hyper.noise_clip;
            for v in out.iter_mut() {
                let eps: f64 = normal.sample(rng);
                *v += eps.clamp(-c, c);
            }
        }
        out.mapv_inplace(|v| self.clip_action(v));
        Ok(out)
    }

    /// Critic input: observation columns plus the action normalized to
    /// [-1, 1] over the action range.
    fn critic_input(&self, states: &Array2<f64>, actions_k: &Array1<f64>) -> Array2<f64> {
        let n = states.nrows();
        let mut x = Array2::zeros((n, self.obs_dim + 1));
        x.slice_mut(ndarray::s![.., ..self.obs_dim]).assign(states);
        let mid = self.hyper.action_mid();
        let half = self.hyper.action_half();
        for (i, a) in actions_k.iter().enumerate() {
            x[[i, self.obs_dim]] = (a - mid) / half;
        }
        x
    }

    /// TV = r + gamma * (1 - done) * min_i Q_Ti(s', a~) per sample.
    pub fn target_values(&self, batch: &[&Transition], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let (_, _, rewards, next_states, dones) = batch_arrays(batch, self.obs_dim)?;
        let a_tilde = self.target_actions(&next_states, rng)?;
        self.target_values_given_actions(&rewards, &next_states, &dones, &a_tilde)
    }

    fn target_values_given_actions(
        &self,
        rewards: &Array1<f64>,
        next_states: &Array2<f64>,
        dones: &Array1<f64>,
        a_tilde: &Array1<f64>,
    ) -> Result<Vec<f64>> {
        let x_next = self.critic_input(next_states, a_tilde);
        let mut q_min: Option<Array1<f64>> = None;
        for ct in &self.critic_targets {
            let q = ct.forward_batch(&x_next)?.index_axis(Axis(1), 0).to_owned();
            q_min = Some(match q_min {
                None => q,
                Some(m) => ndarray::Zip::from(&m).and(&q).map_collect(|&a, &b| a.min(b)),
            });
        }
        let q_min = q_min.expect("at least one critic");
        Ok((0..rewards.len())
            .map(|i| rewards[i] + self.hyper.gamma * (1.0 - dones[i]) * q_min[i])
            .collect())
    }

    /// One Adam step on each critic against a fixed target value (no
    /// gradient flows through the target networks). Returns the summed MSE.
    fn critic_update(
        &mut self,
        states: &Array2<f64>,
        actions: &Array1<f64>,
        tv: &[f64],
    ) -> Result<f64> {
        let n = states.nrows();
        let x = self.critic_input(states, actions);
        let tv_col = Array2::from_shape_vec((n, 1), tv.to_vec())
            .map_err(|e| Error::fault(e.to_string()))?;
        let mut loss_sum = 0.0;
        for (critic, opt) in self.critics.iter_mut().zip(&mut self.opt_critics) {
            let (q, cache) = critic.forward_cached(&x)?;
            let resid = &q - &tv_col;
            let loss = resid.mapv(|v| v * v).sum() / n as f64;
            loss_sum += loss;
            let upstream = resid.mapv(|v| 2.0 * v / n as f64);
            let (grads, _) = critic.backward(&cache, &upstream)?;
            adam_step(critic, &grads, opt);
        }
        if !loss_sum.is_finite() {
            return Err(Error::fault(format!(
                "critic update diverged: loss={loss_sum} at update {}",
                self.update_count
            )));
        }
        Ok(loss_sum)
    }

    /// Gradient ascent on the first critic's Q along the actor parameters,
    /// chained through the critic's action-input gradient. Critic
    /// parameters are untouched.
    fn actor_update(&mut self, states: &Array2<f64>) -> Result<()> {
        let n = states.nrows();
        let (a_raw, actor_cache) = self.actor.forward_cached(states)?;
        let a_col = a_raw.index_axis(Axis(1), 0).to_owned();
        let x = self.critic_input(states, &a_col);
        let critic = &self.critics[0];
        let (_, c_cache) = critic.forward_cached(&x)?;
        // Maximizing mean Q == descending -mean(Q): upstream is -1/n.
        let upstream = Array2::from_elem((n, 1), -1.0 / n as f64);
        let (_, dx) = critic.backward(&c_cache, &upstream)?;
        // d(normalized action)/d(action in K) = 1/half.
        let half = self.hyper.action_half();
        let mut da = Array2::zeros((n, 1));
        for i in 0..n {
            da[[i, 0]] = dx[[i, self.obs_dim]] / half;
        }
        let (grads, _) = self.actor.backward(&actor_cache, &da)?;
        if !grads.is_finite() {
            return Err(Error::fault(format!(
                "actor update diverged at update {}",
                self.update_count
            )));
        }
        adam_step(&mut self.actor, &grads, &mut self.opt_actor);
        Ok(())
    }

    /// Polyak-average every target network towards its source.
    pub fn soft_update(&mut self) {
        let tau = self.hyper.tau;
        self.actor_target.polyak_from(&self.actor, tau);
        for (t, s) in self.critic_targets.iter_mut().zip(&self.critics) {
            t.polyak_from(s, tau);
        }
    }

    /// Full learning step: sample a minibatch, update the critics, and on
    /// every `policy_freq`-th call also update the actor and all targets.
    ///
    /// RNG consumption order is fixed: `batch_size` index draws, then (when
    /// sigma_policy > 0) one smoothing-noise draw per sample.
    pub fn update(&mut self, buf: &ReplayBuffer, rng: &mut ChaCha8Rng) -> Result<f64> {
        let batch = buf.sample(self.hyper.batch_size, rng)?;
        let (states, actions, rewards, next_states, dones) = batch_arrays(&batch, self.obs_dim)?;
        let a_tilde = self.target_actions(&next_states, rng)?;
        let tv = self.target_values_given_actions(&rewards, &next_states, &dones, &a_tilde)?;
        let loss = self.critic_update(&states, &actions, &tv)?;
        self.update_count += 1;
        if self.update_count % self.hyper.policy_freq == 0 {
            self.actor_update(&states)?;
            self.soft_update();
        }
        Ok(loss)
    }

    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        let h = &self.hyper;
        for v in [
            h.gamma,
            h.sigma_explore,
            h.sigma_policy,
            h.noise_clip,
            h.tau,
            h.lr_actor,
            h.lr_critic,
            h.action_min,
            h.action_max,
        ] {
            binio::write_f64(w, v)?;
        }
        binio::write_u64(w, h.policy_freq)?;
        binio::write_u64(w, h.batch_size as u64)?;
        binio::write_u64(w, h.warmup as u64)?;
        binio::write_u8(w, matches!(h.actor_output, ActorOutput::ScaledTanh) as u8)?;
        binio::write_u32(w, h.hidden.len() as u32)?;
        for s in &h.hidden {
            binio::write_u32(w, *s as u32)?;
        }
        binio::write_u32(w, self.obs_dim as u32)?;
        binio::write_u32(w, self.critics.len() as u32)?;
        binio::write_u64(w, self.update_count)?;
        self.actor.save(w)?;
        self.actor_target.save(w)?;
        for (c, ct) in self.critics.iter().zip(&self.critic_targets) {
            c.save(w)?;
            ct.save(w)?;
        }
        self.opt_actor.save(w)?;
        for oc in &self.opt_critics {
            oc.save(w)?;
        }
        Ok(())
    }

    pub fn load<R: Read>(r: &mut R) -> Result<Td3Agent> {
        let mut f = [0.0f64; 9];
        for v in f.iter_mut() {
            *v = binio::read_f64(r)?;
        }
        let policy_freq = binio::read_u64(r)?;
        let batch_size = binio::read_u64(r)? as usize;
        let warmup = binio::read_u64(r)? as usize;
        let actor_output = if binio::read_u8(r)? == 1 {
            ActorOutput::ScaledTanh
        } else {
            ActorOutput::LinearClip
        };
        let n_hidden = binio::read_u32(r)? as usize;
        let mut hidden = Vec::with_capacity(n_hidden);
        for _ in 0..n_hidden {
            hidden.push(binio::read_u32(r)? as usize);
        }
        let hyper = Td3Hyper {
            gamma: f[0],
            sigma_explore: f[1],
            sigma_policy: f[2],
            noise_clip: f[3],
            tau: f[4],
            lr_actor: f[5],
            lr_critic: f[6],
            action_min: f[7],
            action_max: f[8],
            policy_freq,
            batch_size,
            warmup,
            hidden,
            actor_output,
        };
        let obs_dim = binio::read_u32(r)? as usize;
        let n_critics = binio::read_u32(r)? as usize;
        if n_critics == 0 || n_critics > 2 {
            return Err(Error::Checkpoint(format!(
                "agent checkpoint: implausible critic count {n_critics}"
            )));
        }
        let update_count = binio::read_u64(r)?;
        let actor = Mlp::load(r)?;
        let actor_target = Mlp::load(r)?;
        let mut critics = Vec::with_capacity(n_critics);
        let mut critic_targets = Vec::with_capacity(n_critics);
        for _ in 0..n_critics {
            critics.push(Mlp::load(r)?);
            critic_targets.push(Mlp::load(r)?);
        }
        let opt_actor = AdamState::load(r, &actor)?;
        let mut opt_critics = Vec::with_capacity(n_critics);
        for c in &critics {
            opt_critics.push(AdamState::load(r, c)?);
        }
        Ok(Td3Agent {
            actor,
            actor_target,
            critics,
            critic_targets,
            opt_actor,
            opt_critics,
            hyper,
            obs_dim,
            update_count,
        })
    }
}

/// DDPG: the TD3 machinery with one critic, policy updates every step and
/// no target policy smoothing.
pub struct DdpgAgent {
    core: Td3Agent,
}

impl DdpgAgent {
    pub fn new(obs_dim: usize, mut hyper: Td3Hyper, rng: &mut ChaCha8Rng) -> Result<Self> {
        hyper.policy_freq = 1;
        hyper.sigma_policy = 0.0;
        let core = Td3Agent::with_critics(obs_dim, hyper, 1, rng)?;
        Ok(DdpgAgent { core })
    }

    /// Rebuild from a deserialized core, enforcing the degenerate config.
    pub(crate) fn from_core(core: Td3Agent) -> Result<Self> {
        if core.n_critics() != 1 || core.hyper.policy_freq != 1 || core.hyper.sigma_policy != 0.0 {
            return Err(Error::Checkpoint(
                "ddpg checkpoint does not describe a single-critic agent".into(),
            ));
        }
        Ok(DdpgAgent { core })
    }

    pub fn core(&self) -> &Td3Agent {
        &self.core
    }

    pub fn core_mut(&mut self) -> &mut Td3Agent {
        &mut self.core
    }

    pub fn select_action(&self, obs: &[f64], explore: bool, rng: &mut ChaCha8Rng) -> Result<f64> {
        self.core.select_action(obs, explore, rng)
    }

    pub fn update(&mut self, buf: &ReplayBuffer, rng: &mut ChaCha8Rng) -> Result<f64> {
        self.core.update(buf, rng)
    }
}

/// Split a sampled batch into column-major arrays.
pub(crate) fn batch_arrays(
    batch: &[&Transition],
    obs_dim: usize,
) -> Result<(Array2<f64>, Array1<f64>, Array1<f64>, Array2<f64>, Array1<f64>)> {
    let n = batch.len();
    let mut states = Array2::zeros((n, obs_dim));
    let mut actions = Array1::zeros(n);
    let mut rewards = Array1::zeros(n);
    let mut next_states = Array2::zeros((n, obs_dim));
    let mut dones = Array1::zeros(n);
    for (i, tr) in batch.iter().enumerate() {
        if tr.s.len() != obs_dim || tr.s_next.len() != obs_dim {
            return Err(Error::Shape {
                what: "transition state",
                expected: obs_dim,
                got: tr.s.len(),
            });
        }
        for (j, v) in tr.s.iter().enumerate() {
            states[[i, j]] = *v;
        }
        for (j, v) in tr.s_next.iter().enumerate() {
            next_states[[i, j]] = *v;
        }
        actions[i] = tr.a[0];
        rewards[i] = tr.r;
        dones[i] = tr.done as u8 as f64;
    }
    Ok((states, actions, rewards, next_states, dones))
}

/// Deterministic RNG stream derived from an experiment seed. Streams keep
/// independent concerns (init, training, perturbation) decoupled so e.g.
/// batch perturbations match across agents run with the same seed.
pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngExt;

    fn small_hyper() -> Td3Hyper {
        Td3Hyper {
            hidden: vec![16, 8],
            batch_size: 8,
            warmup: 8,
            ..Td3Hyper::default()
        }
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn filled_buffer(n: usize, obs_dim: usize, seed: u64) -> ReplayBuffer {
        let mut buf = ReplayBuffer::new(n * 2);
        let mut r = rng(seed);
        for i in 0..n {
            let s: Vec<f64> = (0..obs_dim).map(|_| r.random_range(-1.0..1.0)).collect();
            let s_next: Vec<f64> = (0..obs_dim).map(|_| r.random_range(-1.0..1.0)).collect();
            buf.push(Transition {
                s,
                a: vec![r.random_range(330.0..350.0)],
                r: r.random_range(0.0..30.0),
                s_next,
                done: i % 50 == 49,
            })
            .unwrap();
        }
        buf
    }

    #[test]
    fn targets_equal_sources_at_construction() {
        let agent = Td3Agent::new(5, small_hyper(), &mut rng(1)).unwrap();
        assert_eq!(agent.actor().flatten(), agent.actor_target().flatten());
        for (c, ct) in agent.critics().iter().zip(agent.critic_targets()) {
            let a = c.flatten();
            let b = ct.flatten();
            assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn select_action_without_noise_is_policy_output() {
        let agent = Td3Agent::new(5, small_hyper(), &mut rng(2)).unwrap();
        let obs = [0.1, -0.2, 0.5, 0.3, 0.0];
        let raw = agent.policy_raw(&obs).unwrap();
        let a = agent.select_action(&obs, false, &mut rng(0)).unwrap();
        assert_eq!(a, raw.clamp(330.0, 350.0));
    }

    #[test]
    fn select_action_clips_to_bounds() {
        let mut hyper = small_hyper();
        hyper.sigma_explore = 50.0; // huge noise forces frequent clipping
        let agent = Td3Agent::new(5, hyper, &mut rng(3)).unwrap();
        let obs = [0.0; 5];
        let mut r = rng(7);
        let mut lo_hit = false;
        let mut hi_hit = false;
        for _ in 0..200 {
            let a = agent.select_action(&obs, true, &mut r).unwrap();
            assert!((330.0..=350.0).contains(&a));
            lo_hit |= a == 330.0;
            hi_hit |= a == 350.0;
        }
        assert!(lo_hit && hi_hit);
    }

    #[test]
    fn exploration_noise_sd_matches_configured() {
        let agent = Td3Agent::new(5, small_hyper(), &mut rng(4)).unwrap();
        let obs = [0.0; 5];
        let base = agent.policy_raw(&obs).unwrap();
        let mut r = rng(11);
        let n = 10_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let a = agent.select_action(&obs, true, &mut r).unwrap();
            let eps = a - base; // far from bounds, so clipping never bites
            sum += eps;
            sum_sq += eps * eps;
        }
        let mean = sum / n as f64;
        let sd = (sum_sq / n as f64 - mean * mean).sqrt();
        assert!((sd - 0.1).abs() < 0.01, "sd = {sd}");
    }

    #[test]
    fn target_action_noise_contribution_is_clipped() {
        let mut hyper = small_hyper();
        hyper.sigma_policy = 100.0; // every draw will exceed the clip bound
        hyper.noise_clip = 0.5;
        let agent = Td3Agent::new(5, hyper, &mut rng(5)).unwrap();
        let states = Array2::zeros((64, 5));
        let mu = agent.actor_target().forward_batch(&states).unwrap();
        let acts = agent.target_actions(&states, &mut rng(13)).unwrap();
        for (a, m) in acts.iter().zip(mu.index_axis(Axis(1), 0)) {
            let noise = a - m.clamp(330.0, 350.0);
            // Either the clipped noise (+-0.5) or re-clipped at bounds.
            assert!(
                noise.abs() <= 0.5 + 1e-12,
                "noise contribution {noise} exceeds clip"
            );
        }
    }

    #[test]
    fn target_action_zero_noise_is_clipped_policy() {
        let mut hyper = small_hyper();
        hyper.sigma_policy = 0.0;
        let agent = Td3Agent::new(5, hyper, &mut rng(6)).unwrap();
        let states = Array2::from_elem((4, 5), 0.2);
        let mu = agent.actor_target().forward_batch(&states).unwrap();
        let acts = agent.target_actions(&states, &mut rng(0)).unwrap();
        for (a, m) in acts.iter().zip(mu.index_axis(Axis(1), 0)) {
            assert_eq!(*a, m.clamp(330.0, 350.0));
        }
    }

    #[test]
    fn target_value_uses_min_of_twin_critics_and_done_cut() {
        let agent = Td3Agent::new(5, small_hyper(), &mut rng(8)).unwrap();
        let buf = filled_buffer(64, 5, 21);
        let mut r = rng(3);
        let batch = buf.sample(16, &mut r).unwrap();
        let mut r2 = rng(4);
        let tv = agent.target_values(&batch, &mut r2).unwrap();
        // Recompute with the same noise draws by replaying the RNG.
        let (_, _, rewards, next_states, dones) = batch_arrays(&batch, 5).unwrap();
        let mut r3 = rng(4);
        let a_tilde = agent.target_actions(&next_states, &mut r3).unwrap();
        let x = agent.critic_input(&next_states, &a_tilde);
        let q1 = agent.critic_targets()[0].forward_batch(&x).unwrap();
        let q2 = agent.critic_targets()[1].forward_batch(&x).unwrap();
        for i in 0..16 {
            let q_min = q1[[i, 0]].min(q2[[i, 0]]);
            let expected = rewards[i] + 0.99 * (1.0 - dones[i]) * q_min;
            assert!((tv[i] - expected).abs() < 1e-12);
            if dones[i] == 1.0 {
                assert_eq!(tv[i], rewards[i]);
            }
        }
    }

    #[test]
    fn actor_updates_exactly_every_policy_freq() {
        let mut agent = Td3Agent::new(5, small_hyper(), &mut rng(9)).unwrap();
        let buf = filled_buffer(64, 5, 22);
        let mut r = rng(5);
        let mut last = agent.actor().flatten();
        for step in 1..=8u64 {
            agent.update(&buf, &mut r).unwrap();
            let now = agent.actor().flatten();
            if step % 2 == 0 {
                assert_ne!(now, last, "actor should change at update {step}");
            } else {
                assert_eq!(now, last, "actor must not change at update {step}");
            }
            last = now;
        }
    }

    #[test]
    fn soft_update_polyak_extremes_and_nominal() {
        let mut agent = Td3Agent::new(5, small_hyper(), &mut rng(10)).unwrap();
        let buf = filled_buffer(64, 5, 23);
        let mut r = rng(6);
        for _ in 0..4 {
            agent.update(&buf, &mut r).unwrap();
        }
        // tau = 0: targets unchanged.
        let before = agent.critic_targets()[0].flatten();
        agent.hyper.tau = 0.0;
        agent.soft_update();
        assert_eq!(agent.critic_targets()[0].flatten(), before);
        // tau = 1: exact copy.
        agent.hyper.tau = 1.0;
        agent.soft_update();
        assert_eq!(
            agent.critic_targets()[0].flatten(),
            agent.critics()[0].flatten()
        );
        // tau = 0.005 on a known scalar: 0.005*1 + 0.995*0.
        let mut target = agent.critic_targets()[0].clone();
        let mut source = agent.critics()[0].clone();
        source.output_bias_mut()[0] = 1.0;
        target.output_bias_mut()[0] = 0.0;
        target.polyak_from(&source, 0.005);
        let idx = target.flatten().len() - 1;
        assert!((target.flatten()[idx] - 0.005).abs() < 1e-15);
    }

    #[test]
    fn critic_update_loss_is_nonnegative_and_finite() {
        let mut agent = Td3Agent::new(5, small_hyper(), &mut rng(12)).unwrap();
        let buf = filled_buffer(128, 5, 24);
        let mut r = rng(7);
        for _ in 0..10 {
            let loss = agent.update(&buf, &mut r).unwrap();
            assert!(loss.is_finite() && loss >= 0.0);
        }
    }

    #[test]
    fn actor_moves_towards_handcrafted_critic_optimum() {
        // Replace critic 1 by a handcrafted net Q(s, a_n) = -|a_n - 0.25|
        // (optimum a* = 0.25 normalized = 342.5 K), built from two ReLU
        // half-lines. Repeated actor updates must drive the policy to a*.
        let mut hyper = small_hyper();
        hyper.policy_freq = 1;
        hyper.lr_actor = 5e-3;
        let mut agent = Td3Agent::new(2, hyper, &mut rng(14)).unwrap();

        // Critic input layout: [obs(2), a_n]. h0 = relu(a_n - 0.25),
        // h1 = relu(0.25 - a_n); second layer sums them into |a_n - 0.25|.
        let mut w0 = Array2::<f64>::zeros((3, 16));
        w0[[2, 0]] = 1.0;
        w0[[2, 1]] = -1.0;
        let mut b0 = Array1::<f64>::zeros(16);
        b0[0] = -0.25;
        b0[1] = 0.25;
        let mut w1 = Array2::<f64>::zeros((16, 8));
        w1[[0, 0]] = 1.0;
        w1[[1, 0]] = 1.0;
        let mut w2 = Array2::<f64>::zeros((8, 1));
        w2[[0, 0]] = -1.0;
        agent.critics[0] = Mlp::from_raw_parts(
            vec![3, 16, 8, 1],
            vec![w0, w1, w2],
            vec![b0, Array1::zeros(8), Array1::zeros(1)],
            OutputActivation::Linear,
        );

        let states = Array2::from_elem((16, 2), 0.1);
        let target = 0.25 * 10.0 + 340.0; // a_n = 0.25 in Kelvin
        let a0 = agent.actor.forward_batch(&states).unwrap()[[0, 0]];
        let dist_start = (a0 - target).abs();
        for _ in 0..4000 {
            agent.actor_update(&states).unwrap();
        }
        let a_end = agent.actor.forward_batch(&states).unwrap()[[0, 0]];
        let dist_end = (a_end - target).abs();
        assert!(
            dist_end < 0.2 && dist_end < dist_start,
            "actor did not approach optimum: start {dist_start}, end {dist_end}"
        );
    }

    #[test]
    fn constant_critic_leaves_actor_unchanged_after_adam_zero_grad() {
        let mut hyper = small_hyper();
        hyper.policy_freq = 1;
        let mut agent = Td3Agent::new(2, hyper, &mut rng(17)).unwrap();
        // Critic ignoring the action: zero weights, constant bias output.
        let w = vec![
            Array2::<f64>::zeros((3, 16)),
            Array2::<f64>::zeros((16, 8)),
            Array2::<f64>::zeros((8, 1)),
        ];
        let mut b2 = Array1::<f64>::zeros(1);
        b2[0] = 3.5;
        let b = vec![Array1::zeros(16), Array1::zeros(8), b2];
        agent.critics[0] = Mlp::from_raw_parts(vec![3, 16, 8, 1], w, b, OutputActivation::Linear);
        let before = agent.actor.flatten();
        let states = Array2::from_elem((8, 2), 0.3);
        agent.actor_update(&states).unwrap();
        assert_eq!(agent.actor.flatten(), before);
    }

    #[test]
    fn ddpg_is_single_critic_every_step_no_smoothing() {
        let agent = DdpgAgent::new(5, small_hyper(), &mut rng(18)).unwrap();
        assert_eq!(agent.core().n_critics(), 1);
        assert_eq!(agent.core().hyper().policy_freq, 1);
        assert_eq!(agent.core().hyper().sigma_policy, 0.0);
    }

    #[test]
    fn agent_save_load_roundtrip_preserves_everything() {
        let mut agent = Td3Agent::new(5, small_hyper(), &mut rng(19)).unwrap();
        let buf = filled_buffer(64, 5, 25);
        let mut r = rng(8);
        for _ in 0..5 {
            agent.update(&buf, &mut r).unwrap();
        }
        let mut bytes = Vec::new();
        agent.save(&mut bytes).unwrap();
        let loaded = Td3Agent::load(&mut bytes.as_slice()).unwrap();
        assert_eq!(loaded.update_count(), agent.update_count());
        assert_eq!(loaded.actor().flatten(), agent.actor().flatten());
        assert_eq!(
            loaded.critic_targets()[1].flatten(),
            agent.critic_targets()[1].flatten()
        );
        assert_eq!(loaded.hyper(), agent.hyper());
        // Training must continue identically after a round trip.
        let mut a2 = loaded;
        let mut r1 = rng(9);
        let mut r2 = rng(9);
        let l1 = agent.update(&buf, &mut r1).unwrap();
        let l2 = a2.update(&buf, &mut r2).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(agent.actor().flatten(), a2.actor().flatten());
    }
}
