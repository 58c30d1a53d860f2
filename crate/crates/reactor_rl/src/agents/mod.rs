//! TD3, DDPG and DQN agents plus the two-stage offline/online trainer.
//!
//! DDPG is run through the TD3 update path configured with one critic,
//! policy frequency 1 and zero target-policy noise; DQN uses a discrete
//! action table over the relaxed 330-360 K range.

mod dqn;
mod td3;
mod train;

pub use dqn::{DqnAgent, DqnHyper};
pub use td3::{seeded_stream, ActorOutput, DdpgAgent, Td3Agent, Td3Hyper};
pub use train::{
    run_episode, train_offline, train_online, BatchOutcome, EarlyStopConfig, EpisodeOptions,
    EpisodeOutcome, OfflineReport, TraceRow, TrainSetup,
};

use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::plant::PlantState;
use crate::replay::ReplayBuffer;

/// Observation fed to every network: reactor and jacket temperatures,
/// normalized batch time, tracking error and accumulated absolute error,
/// all scaled to roughly unit range.
pub const OBS_DIM: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsSpec {
    pub t_ref: f64,
    pub t_end: f64,
    pub temp_scale: f64,
    pub err_scale: f64,
    pub cum_scale: f64,
}

impl Default for ObsSpec {
    fn default() -> Self {
        ObsSpec {
            t_ref: 345.0,
            t_end: 6000.0,
            temp_scale: 20.0,
            err_scale: 5.0,
            cum_scale: 300.0,
        }
    }
}

/// Build the network observation for a plant state and the error
/// accumulated so far in the episode.
pub fn observe(state: &PlantState, cum_abs_err: f64, spec: &ObsSpec) -> [f64; OBS_DIM] {
    let e = state.t_r - spec.t_ref;
    [
        (state.t_r - spec.t_ref) / spec.temp_scale,
        (state.t_j - spec.t_ref) / spec.temp_scale,
        state.t / spec.t_end,
        e / spec.err_scale,
        cum_abs_err / spec.cum_scale,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Td3,
    Ddpg,
    Dqn,
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AgentKind::Td3 => write!(f, "td3"),
            AgentKind::Ddpg => write!(f, "ddpg"),
            AgentKind::Dqn => write!(f, "dqn"),
        }
    }
}

impl std::str::FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "td3" => Ok(AgentKind::Td3),
            "ddpg" => Ok(AgentKind::Ddpg),
            "dqn" => Ok(AgentKind::Dqn),
            other => Err(Error::config(format!("unknown agent kind '{other}'"))),
        }
    }
}

/// Any of the three agents behind one dispatching surface.
pub enum AnyAgent {
    Td3(Td3Agent),
    Ddpg(DdpgAgent),
    Dqn(DqnAgent),
}

impl AnyAgent {
    pub fn kind(&self) -> AgentKind {
        match self {
            AnyAgent::Td3(_) => AgentKind::Td3,
            AnyAgent::Ddpg(_) => AgentKind::Ddpg,
            AnyAgent::Dqn(_) => AgentKind::Dqn,
        }
    }

    /// Pick an action for `obs`, adding exploration noise when requested.
    pub fn select_action(&mut self, obs: &[f64], explore: bool, rng: &mut ChaCha8Rng) -> Result<f64> {
        match self {
            AnyAgent::Td3(a) => a.select_action(obs, explore, rng),
            AnyAgent::Ddpg(a) => a.select_action(obs, explore, rng),
            AnyAgent::Dqn(a) => a.select_action(obs, explore, rng),
        }
    }

    /// One learning update from a sampled minibatch. Returns the loss.
    pub fn update(&mut self, buf: &ReplayBuffer, rng: &mut ChaCha8Rng) -> Result<f64> {
        match self {
            AnyAgent::Td3(a) => a.update(buf, rng),
            AnyAgent::Ddpg(a) => a.update(buf, rng),
            AnyAgent::Dqn(a) => a.update(buf, rng),
        }
    }

    /// Minimum number of stored transitions before updates start.
    pub fn warmup(&self) -> usize {
        match self {
            AnyAgent::Td3(a) => a.hyper().warmup,
            AnyAgent::Ddpg(a) => a.core().hyper().warmup,
            AnyAgent::Dqn(a) => a.hyper().warmup,
        }
    }

    /// Action bounds honoured by this agent's policy.
    pub fn action_bounds(&self) -> (f64, f64) {
        match self {
            AnyAgent::Td3(a) => (a.hyper().action_min, a.hyper().action_max),
            AnyAgent::Ddpg(a) => (a.core().hyper().action_min, a.core().hyper().action_max),
            AnyAgent::Dqn(a) => (a.hyper().action_min, a.hyper().action_max),
        }
    }

    pub fn is_continuous(&self) -> bool {
        !matches!(self, AnyAgent::Dqn(_))
    }

    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CKPT_MAGIC)?;
        binio::write_u32(w, CKPT_VERSION)?;
        match self {
            AnyAgent::Td3(a) => {
                binio::write_u8(w, 0)?;
                a.save(w)
            }
            AnyAgent::Ddpg(a) => {
                binio::write_u8(w, 1)?;
                a.core().save(w)
            }
            AnyAgent::Dqn(a) => {
                binio::write_u8(w, 2)?;
                a.save(w)
            }
        }
    }

    pub fn load<R: Read>(r: &mut R) -> Result<AnyAgent> {
        binio::expect_magic(r, CKPT_MAGIC, "agent checkpoint")?;
        let version = binio::read_u32(r)?;
        if version != CKPT_VERSION {
            return Err(Error::Checkpoint(format!(
                "agent checkpoint: unsupported version {version}"
            )));
        }
        match binio::read_u8(r)? {
            0 => Ok(AnyAgent::Td3(Td3Agent::load(r)?)),
            1 => Ok(AnyAgent::Ddpg(DdpgAgent::from_core(Td3Agent::load(r)?)?)),
            2 => Ok(AnyAgent::Dqn(DqnAgent::load(r)?)),
            tag => Err(Error::Checkpoint(format!(
                "agent checkpoint: unknown agent tag {tag}"
            ))),
        }
    }

    pub fn save_to_path(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.save(&mut f)
    }

    pub fn load_from_path(path: &Path) -> Result<AnyAgent> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::load(&mut f)
    }
}

const CKPT_MAGIC: &[u8; 4] = b"RLCK";
const CKPT_VERSION: u32 = 1;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observation_is_scaled_and_centred() {
        let spec = ObsSpec::default();
        let state = PlantState {
            c_tg: 0.8,
            c_dg: 0.0,
            c_mg: 0.0,
            c_e: 0.0,
            c_a: 4.8,
            c_gl: 0.0,
            t_r: 345.0,
            t_j: 345.0,
            t: 3000.0,
        };
        let obs = observe(&state, 150.0, &spec);
        assert_eq!(obs, [0.0, 0.0, 0.5, 0.0, 0.5]);
        let hot = PlantState {
            t_r: 355.0,
            t_j: 335.0,
            ..state
        };
        let obs = observe(&hot, 0.0, &spec);
        assert_eq!(obs, [0.5, -0.5, 0.5, 2.0, 0.0]);
    }

    #[test]
    fn agent_kind_parses_case_insensitively() {
        assert_eq!("TD3".parse::<AgentKind>().unwrap(), AgentKind::Td3);
        assert_eq!("ddpg".parse::<AgentKind>().unwrap(), AgentKind::Ddpg);
        assert_eq!("Dqn".parse::<AgentKind>().unwrap(), AgentKind::Dqn);
        assert!("sac".parse::<AgentKind>().is_err());
    }
}
