//! PI- and PID-style piecewise reward functions for setpoint tracking.
//!
//! Both rewards combine the reciprocal of the current absolute error with
//! the reciprocal of the error accumulated since the episode started; the
//! PID variant adds a term in the error rate. Reciprocals are guarded by
//! a small `eps` so the reward stays finite when the error (or the
//! accumulated error, on the first step) is zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    Pi,
    Pid,
}

impl std::fmt::Display for RewardKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RewardKind::Pi => write!(f, "pi"),
            RewardKind::Pid => write!(f, "pid"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub kind: RewardKind,
    /// Branch threshold on |e|, K.
    pub thr: f64,
    /// PI constants (c1..c5).
    pub c_pi: [f64; 5],
    /// PID constants (c1..c9).
    pub c_pid: [f64; 9],
    /// Division guard for the reciprocal terms, K.
    pub eps: f64,
    /// Setpoint, K.
    pub t_ref: f64,
    /// Apply the reciprocal to the accumulated-error term in the PID
    /// else-branch (the reading consistent with the PI else-branch).
    /// When false the accumulated error enters that branch raw.
    pub else_g_applied: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            kind: RewardKind::Pid,
            thr: 5.0,
            c_pi: [0.0, 10.0, 100.0, 0.05, 100.0],
            c_pid: [0.0, 10.0, 100.0, 1.0, 1.0, 0.05, 100.0, 1.0, 1.0],
            eps: 1e-3,
            t_ref: 345.0,
            else_g_applied: true,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.thr > 0.0) {
            return Err(Error::config("reward: thr must be positive"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("reward: eps must be positive"));
        }
        Ok(())
    }
}

/// Per-episode accumulator: Σ|e| over past steps plus the previous error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardState {
    pub cum_abs_err: f64,
    pub prev_err: f64,
    initialized: bool,
}

impl RewardState {
    /// Fresh state for the start of an episode.
    pub fn new() -> Self {
        RewardState {
            cum_abs_err: 0.0,
            prev_err: 0.0,
            initialized: false,
        }
    }
}

impl Default for RewardState {
    fn default() -> Self {
        Self::new()
    }
}

/// Tracking error e = T_r - t_ref (sign kept; rewards take |e|).
pub fn error(t_r: f64, cfg: &RewardConfig) -> f64 {
    t_r - cfg.t_ref
}

#[inline]
fn g(x: f64, eps: f64) -> f64 {
    1.0 / x.max(eps)
}

/// PI reward: reciprocal current error plus reciprocal accumulated error,
/// switching to a flat low-reward branch once |e| reaches the threshold.
///
/// The accumulated sum covers errors through the previous step; the
/// current |e| is added to the returned state afterwards.
pub fn pi_reward(e: f64, rs: &RewardState, cfg: &RewardConfig) -> Result<(f64, RewardState)> {
    if !e.is_finite() {
        return Err(Error::fault(format!("pi_reward: non-finite error {e}")));
    }
    let [c1, c2, c3, c4, c5] = cfg.c_pi;
    let abs_e = e.abs();
    let s = rs.cum_abs_err;
    let r = if abs_e < cfg.thr {
        c1 + c2 * g(abs_e, cfg.eps) + c3 * g(s, cfg.eps)
    } else {
        c4 + c5 * g(s, cfg.eps)
    };
    let next = RewardState {
        cum_abs_err: s + abs_e,
        prev_err: e,
        initialized: true,
    };
    Ok((r, next))
}

/// PID reward: the PI terms plus a reciprocal error-rate term. On the
/// first step of an episode the error rate is defined as zero.
pub fn pid_reward(e: f64, rs: &RewardState, cfg: &RewardConfig) -> Result<(f64, RewardState)> {
    if !e.is_finite() {
        return Err(Error::fault(format!("pid_reward: non-finite error {e}")));
    }
    let [c1, c2, c3, c4, c5, c6, c7, c8, c9] = cfg.c_pid;
    let abs_e = e.abs();
    let s = rs.cum_abs_err;
    let de = if rs.initialized { e - rs.prev_err } else { 0.0 };
    let r = if abs_e < cfg.thr {
        c1 + c2 * g(abs_e, cfg.eps) + c3 * g(s, cfg.eps) + c4 / (c5 + de.abs())
    } else {
        let s_term = if cfg.else_g_applied { g(s, cfg.eps) } else { s };
        c6 + c7 * s_term + c8 / (c9 + de.abs())
    };
    let next = RewardState {
        cum_abs_err: s + abs_e,
        prev_err: e,
        initialized: true,
    };
    Ok((r, next))
}

/// Dispatch on the configured reward kind.
pub fn step_reward(e: f64, rs: &RewardState, cfg: &RewardConfig) -> Result<(f64, RewardState)> {
    match cfg.kind {
        RewardKind::Pi => pi_reward(e, rs, cfg),
        RewardKind::Pid => pid_reward(e, rs, cfg),
    }
}
