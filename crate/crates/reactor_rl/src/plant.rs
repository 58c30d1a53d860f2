//! Batch transesterification reactor simulation.
//!
//! The reactor is the RL environment: a 3-step reversible methanolysis
//! network (TG + A <=> DG + E, DG + A <=> MG + E, MG + A <=> GL + E) with
//! Arrhenius rate constants, coupled to reactor/jacket energy balances.
//! The control input is the jacket inlet temperature; the controlled
//! variable is the reactor temperature `t_r`.
//!
//! Everything here is a pure function over value-type state, so plant
//! steps for independent episodes can run in parallel.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reactor contents and temperatures at one time instant.
///
/// Concentrations are mol/L, temperatures K, elapsed batch time seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    /// Triglyceride.
    pub c_tg: f64,
    /// Diglyceride.
    pub c_dg: f64,
    /// Monoglyceride.
    pub c_mg: f64,
    /// Methyl ester (biodiesel).
    pub c_e: f64,
    /// Alcohol (methanol).
    pub c_a: f64,
    /// Glycerol.
    pub c_gl: f64,
    /// Reactor temperature.
    pub t_r: f64,
    /// Jacket temperature.
    pub t_j: f64,
    /// Elapsed batch time.
    #[serde(default)]
    pub t: f64,
}

impl PlantState {
    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite()) && self.t.is_finite()
    }

    /// Glyceride backbone total, conserved over an episode.
    pub fn glyceride_sum(&self) -> f64 {
        self.c_tg + self.c_dg + self.c_mg + self.c_gl
    }

    /// Methyl-group total (alcohol + ester), conserved over an episode.
    pub fn methyl_sum(&self) -> f64 {
        self.c_a + self.c_e
    }

    fn to_array(&self) -> [f64; 8] {
        [
            self.c_tg, self.c_dg, self.c_mg, self.c_e, self.c_a, self.c_gl, self.t_r, self.t_j,
        ]
    }

    fn from_array(x: [f64; 8], t: f64) -> Self {
        PlantState {
            c_tg: x[0],
            c_dg: x[1],
            c_mg: x[2],
            c_e: x[3],
            c_a: x[4],
            c_gl: x[5],
            t_r: x[6],
            t_j: x[7],
            t,
        }
    }
}

/// Kinetic and thermal constants of the reactor model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KineticParams {
    /// Arrhenius pre-exponential factors, one per reaction direction
    /// (fwd1, rev1, fwd2, rev2, fwd3, rev3), L/(mol s).
    pub k0: [f64; 6],
    /// Activation energies, J/mol.
    pub ea: [f64; 6],
    /// Reaction enthalpies per forward step, J/mol (negative = exothermic).
    pub dh: [f64; 3],
    /// Reaction volume, L. Converts volumetric rates to total heat release.
    pub volume: f64,
    /// Jacket heat-transfer coefficient times area, W/K.
    pub ua: f64,
    /// Reactor thermal mass, J/K.
    pub m_cp: f64,
    /// Jacket thermal mass, J/K.
    pub mj_cpj: f64,
    /// Jacket coolant flow heat-capacity rate, W/K.
    pub fj_rhoj_cpj: f64,
    /// Universal gas constant, J/(mol K).
    pub r_gas: f64,
}

impl Default for KineticParams {
    fn default() -> Self {
        KineticParams {
            k0: [7.5e3, 1.5e3, 9.0e3, 1.8e3, 6.0e3, 1.2e3],
            ea: [5.0e4, 5.5e4, 5.2e4, 5.6e4, 5.3e4, 5.7e4],
            dh: [-5.5e4, -5.0e4, -4.5e4],
            volume: 100.0,
            ua: 1000.0,
            m_cp: 2.0e5,
            mj_cpj: 3.0e4,
            fj_rhoj_cpj: 1500.0,
            r_gas: 8.314,
        }
    }
}

impl KineticParams {
    pub fn validate(&self) -> Result<()> {
        if self.k0.iter().any(|&v| v <= 0.0) || self.ea.iter().any(|&v| v <= 0.0) {
            return Err(Error::config("kinetics: k0 and ea must be positive"));
        }
        for (name, v) in [
            ("volume", self.volume),
            ("ua", self.ua),
            ("m_cp", self.m_cp),
            ("mj_cpj", self.mj_cpj),
            ("fj_rhoj_cpj", self.fj_rhoj_cpj),
            ("r_gas", self.r_gas),
        ] {
            if v <= 0.0 {
                return Err(Error::config(format!("kinetics: {name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Episode geometry, setpoint and actuation bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub params: KineticParams,
    /// Initial reactor state at t = 0.
    pub init: PlantState,
    /// Batch end time, s.
    pub t_end: f64,
    /// Control (sampling) interval, s.
    pub dt_ctrl: f64,
    /// Internal integrator step, s.
    pub dt_int: f64,
    /// Temperature setpoint, K.
    pub t_ref: f64,
    /// Lower bound on the jacket inlet temperature, K.
    pub action_min: f64,
    /// Upper bound on the jacket inlet temperature, K.
    pub action_max: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            params: KineticParams::default(),
            init: PlantState {
                c_tg: 0.8,
                c_dg: 0.0,
                c_mg: 0.0,
                c_e: 0.0,
                c_a: 4.8,
                c_gl: 0.0,
                t_r: 340.0,
                t_j: 340.0,
                t: 0.0,
            },
            t_end: 6000.0,
            dt_ctrl: 20.0,
            dt_int: 1.0,
            t_ref: 345.0,
            action_min: 330.0,
            action_max: 350.0,
        }
    }
}

impl PlantConfig {
    /// Number of control steps in one episode.
    pub fn steps_per_episode(&self) -> usize {
        (self.t_end / self.dt_ctrl).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !self.init.is_finite() {
            return Err(Error::config("plant: init state must be finite"));
        }
        if self.dt_int <= 0.0 || self.dt_ctrl <= 0.0 || self.t_end <= 0.0 {
            return Err(Error::config("plant: t_end, dt_ctrl, dt_int must be positive"));
        }
        if self.dt_int > self.dt_ctrl {
            return Err(Error::config("plant: dt_int must not exceed dt_ctrl"));
        }
        let n_ctrl = self.t_end / self.dt_ctrl;
        if (n_ctrl - n_ctrl.round()).abs() > 1e-9 {
            return Err(Error::config("plant: dt_ctrl must divide t_end evenly"));
        }
        let n_sub = self.dt_ctrl / self.dt_int;
        if (n_sub - n_sub.round()).abs() > 1e-9 {
            return Err(Error::config("plant: dt_int must divide dt_ctrl evenly"));
        }
        if self.action_min >= self.action_max {
            return Err(Error::config("plant: action_min must be below action_max"));
        }
        Ok(())
    }
}

/// Counters accumulated while stepping the plant.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    /// Internal steps where a concentration was clamped back to zero.
    pub neg_clamps: u64,
}

/// Arrhenius rate constants at reactor temperature `t_r`.
///
/// k_i = k0_i * exp(-Ea_i / (R * T)), strictly increasing in T.
pub fn rate_constants(t_r: f64, params: &KineticParams) -> Result<[f64; 6]> {
    if !(t_r > 0.0) {
        return Err(Error::domain(format!(
            "rate_constants: temperature must be positive, got {t_r}"
        )));
    }
    let mut k = [0.0; 6];
    for i in 0..6 {
        k[i] = params.k0[i] * (-params.ea[i] / (params.r_gas * t_r)).exp();
    }
    Ok(k)
}

/// Time derivatives of the 8 dynamic state fields under jacket inlet
/// temperature `action_tj_in`.
///
/// Returned order matches [`PlantState`] field order:
/// (c_tg, c_dg, c_mg, c_e, c_a, c_gl, t_r, t_j).
pub fn derivatives(
    state: &PlantState,
    action_tj_in: f64,
    params: &KineticParams,
) -> Result<[f64; 8]> {
    if !state.is_finite() || !action_tj_in.is_finite() {
        return Err(Error::fault(format!(
            "derivatives: non-finite input (t={}, T_r={}, action={})",
            state.t, state.t_r, action_tj_in
        )));
    }
    let k = rate_constants(state.t_r, params)?;
    let r1 = k[0] * state.c_tg * state.c_a - k[1] * state.c_dg * state.c_e;
    let r2 = k[2] * state.c_dg * state.c_a - k[3] * state.c_mg * state.c_e;
    let r3 = k[4] * state.c_mg * state.c_a - k[5] * state.c_gl * state.c_e;
    let r_sum = r1 + r2 + r3;

    let q_rxn = (-params.dh[0] * r1 - params.dh[1] * r2 - params.dh[2] * r3) * params.volume;
    let d_tr = (q_rxn + params.ua * (state.t_j - state.t_r)) / params.m_cp;
    let d_tj = (params.fj_rhoj_cpj * (action_tj_in - state.t_j)
        + params.ua * (state.t_r - state.t_j))
        / params.mj_cpj;

    Ok([-r1, r1 - r2, r2 - r3, r_sum, -r_sum, r3, d_tr, d_tj])
}

fn rk4_substep(x: [f64; 8], action: f64, params: &KineticParams, h: f64) -> Result<[f64; 8]> {
    let eval = |y: &[f64; 8]| -> Result<[f64; 8]> {
        let s = PlantState::from_array(*y, 0.0);
        derivatives(&s, action, params)
    };
    let k1 = eval(&x)?;
    let mut y = x;
    for i in 0..8 {
        y[i] = x[i] + 0.5 * h * k1[i];
    }
    let k2 = eval(&y)?;
    for i in 0..8 {
        y[i] = x[i] + 0.5 * h * k2[i];
    }
    let k3 = eval(&y)?;
    for i in 0..8 {
        y[i] = x[i] + h * k3[i];
    }
    let k4 = eval(&y)?;
    let mut out = x;
    for i in 0..8 {
        out[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(out)
}

/// Advance the plant by one control interval using classical RK4 with
/// internal step `cfg.dt_int`, while holding `action_tj_in` constant.
///
/// Concentrations are clamped at zero after each internal step; clamp
/// events are counted in `stats`.
pub fn step_counted(
    state: &PlantState,
    action_tj_in: f64,
    cfg: &PlantConfig,
    stats: &mut StepStats,
) -> Result<PlantState> {
    if state.t + cfg.dt_ctrl > cfg.t_end + 1e-9 {
        return Err(Error::domain(format!(
            "step: t + dt_ctrl = {} exceeds t_end = {}",
            state.t + cfg.dt_ctrl,
            cfg.t_end
        )));
    }
    let n_sub = (cfg.dt_ctrl / cfg.dt_int).round() as usize;
    let mut x = state.to_array();
    for sub in 0..n_sub {
        x = rk4_substep(x, action_tj_in, &cfg.params, cfg.dt_int)?;
        for c in x.iter_mut().take(6) {
            if *c < 0.0 {
                *c = 0.0;
                stats.neg_clamps += 1;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::fault(format!(
                "step: non-finite state at t={} substep {sub} (action={action_tj_in})",
                state.t
            )));
        }
    }
    for (name, temp) in [("T_r", x[6]), ("T_j", x[7])] {
        if !(250.0..=500.0).contains(&temp) {
            return Err(Error::fault(format!(
                "step: {name}={temp} outside physical bounds [250, 500] K at t={}",
                state.t + cfg.dt_ctrl
            )));
        }
    }
    Ok(PlantState::from_array(x, state.t + cfg.dt_ctrl))
}

/// [`step_counted`] without clamp bookkeeping.
pub fn step(state: &PlantState, action_tj_in: f64, cfg: &PlantConfig) -> Result<PlantState> {
    let mut stats = StepStats::default();
    step_counted(state, action_tj_in, cfg, &mut stats)
}

/// Episode initial state: the configured initial condition with t = 0.
pub fn reset(cfg: &PlantConfig) -> PlantState {
    PlantState {
        t: 0.0,
        ..cfg.init
    }
}

/// Batch-to-batch variation: multiply every pre-exponential factor by
/// (1 + z) with z ~ N(0, rel_sd), resampling until 1 + z > 0. All other
/// fields are unchanged.
pub fn perturb<R: Rng + ?Sized>(params: &KineticParams, rel_sd: f64, rng: &mut R) -> KineticParams {
    let mut out = params.clone();
    if rel_sd == 0.0 {
        return out;
    }
    let normal = Normal::new(0.0, rel_sd).expect("rel_sd must be finite and non-negative");
    for k in out.k0.iter_mut() {
        let factor = loop {
            let z: f64 = normal.sample(rng);
            if 1.0 + z > 0.0 {
                break 1.0 + z;
            }
        };
        *k *= factor;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reference_params() -> KineticParams {
        KineticParams::default()
    }

    #[test]
    fn rate_constants_zero_activation_energy() {
        let params = KineticParams {
            k0: [1.0; 6],
            ea: [1e-300; 6], // effectively zero; exactly 0 is rejected by validate
            ..reference_params()
        };
        let k = rate_constants(345.0, &params).unwrap();
        for v in k {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rate_constants_linear_in_prefactor() {
        let mut params = reference_params();
        let k_before = rate_constants(345.0, &params).unwrap();
        params.k0[0] *= 2.0;
        let k_after = rate_constants(345.0, &params).unwrap();
        assert_eq!(k_after[0], 2.0 * k_before[0]);
        assert_eq!(k_after[1], k_before[1]);
    }

    #[test]
    fn rate_constants_match_independent_evaluation() {
        // Frozen from a scalar evaluation of k0*exp(-Ea/(R*T)) in an
        // independent interpreter session, T = 345 K, default params.
        let expected = [
            2.01627686167076133e-04,
            7.05552040553682899e-06,
            1.20478893004320116e-04,
            5.97447951450836646e-06,
            5.66773436348345019e-05,
            2.81059710990977504e-06,
        ];
        let k = rate_constants(345.0, &reference_params()).unwrap();
        for i in 0..6 {
            assert!(
                ((k[i] - expected[i]) / expected[i]).abs() < 1e-12,
                "k[{i}] = {} vs {}",
                k[i],
                expected[i]
            );
        }
    }

    #[test]
    fn rate_constants_monotone_in_temperature() {
        let params = reference_params();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let t1 = rng.random_range(260.0..480.0);
            let t2 = t1 + rng.random_range(0.01..20.0);
            let k1 = rate_constants(t1, &params).unwrap();
            let k2 = rate_constants(t2, &params).unwrap();
            for i in 0..6 {
                assert!(k2[i] > k1[i], "k[{i}] not increasing: {t1} -> {t2}");
            }
        }
    }

    #[test]
    fn rate_constants_reject_nonpositive_temperature() {
        let params = reference_params();
        assert!(matches!(rate_constants(0.0, &params), Err(Error::Domain(_))));
        assert!(matches!(rate_constants(-5.0, &params), Err(Error::Domain(_))));
    }

    #[test]
    fn derivatives_zero_concentrations_leave_only_heat_terms() {
        let params = reference_params();
        let state = PlantState {
            c_tg: 0.0,
            c_dg: 0.0,
            c_mg: 0.0,
            c_e: 0.0,
            c_a: 0.0,
            c_gl: 0.0,
            t_r: 345.0,
            t_j: 335.0,
            t: 0.0,
        };
        let d = derivatives(&state, 330.0, &params).unwrap();
        for v in &d[..6] {
            assert_eq!(*v, 0.0);
        }
        let d_tr = params.ua * (335.0 - 345.0) / params.m_cp;
        let d_tj = (params.fj_rhoj_cpj * (330.0 - 335.0) + params.ua * (345.0 - 335.0))
            / params.mj_cpj;
        assert!((d[6] - d_tr).abs() < 1e-15);
        assert!((d[7] - d_tj).abs() < 1e-15);
    }

    #[test]
    fn derivatives_thermal_equilibrium_is_fixed_point() {
        let params = reference_params();
        let state = PlantState {
            c_tg: 0.0,
            c_dg: 0.0,
            c_mg: 0.0,
            c_e: 0.0,
            c_a: 0.0,
            c_gl: 0.0,
            t_r: 341.0,
            t_j: 341.0,
            t: 0.0,
        };
        let d = derivatives(&state, 341.0, &params).unwrap();
        for v in d {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn derivatives_match_stoichiometric_expansion() {
        // Independent route: evaluate the three mass-action rates and apply
        // the stoichiometric matrix explicitly, term by term.
        let params = reference_params();
        let s = PlantState {
            c_tg: 0.5,
            c_dg: 0.3,
            c_mg: 0.2,
            c_e: 0.4,
            c_a: 2.0,
            c_gl: 0.1,
            t_r: 350.0,
            t_j: 348.0,
            t: 0.0,
        };
        let k = rate_constants(s.t_r, &params).unwrap();
        let r = [
            k[0] * s.c_tg * s.c_a - k[1] * s.c_dg * s.c_e,
            k[2] * s.c_dg * s.c_a - k[3] * s.c_mg * s.c_e,
            k[4] * s.c_mg * s.c_a - k[5] * s.c_gl * s.c_e,
        ];
        // Rows: species; columns: reactions. TG, DG, MG, E, A, GL.
        let stoich: [[f64; 3]; 6] = [
            [-1.0, 0.0, 0.0],
            [1.0, -1.0, 0.0],
            [0.0, 1.0, -1.0],
            [1.0, 1.0, 1.0],
            [-1.0, -1.0, -1.0],
            [0.0, 0.0, 1.0],
        ];
        let d = derivatives(&s, 340.0, &params).unwrap();
        for (i, row) in stoich.iter().enumerate() {
            let expected: f64 = row.iter().zip(&r).map(|(n, ri)| n * ri).sum();
            assert!(
                (d[i] - expected).abs() <= 1e-18 + 1e-12 * expected.abs(),
                "species {i}: {} vs {}",
                d[i],
                expected
            );
        }
    }

    #[test]
    fn derivatives_conserve_group_sums() {
        let params = reference_params();
        let s = PlantState {
            c_tg: 0.5,
            c_dg: 0.3,
            c_mg: 0.2,
            c_e: 0.4,
            c_a: 2.0,
            c_gl: 0.1,
            t_r: 350.0,
            t_j: 348.0,
            t: 0.0,
        };
        let d = derivatives(&s, 340.0, &params).unwrap();
        let glyceride = d[0] + d[1] + d[2] + d[5];
        let methyl = d[3] + d[4];
        assert!(glyceride.abs() < 1e-18);
        assert_eq!(methyl, 0.0); // computed as r_sum and -r_sum
    }

    #[test]
    fn derivatives_reject_non_finite_input() {
        let params = reference_params();
        let mut s = PlantState::from_array([0.1; 8], 0.0);
        s.t_r = f64::NAN;
        assert!(matches!(derivatives(&s, 340.0, &params), Err(Error::Fault(_))));
        let s2 = PlantState::from_array([0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 345.0, 340.0], 0.0);
        assert!(matches!(
            derivatives(&s2, f64::INFINITY, &params),
            Err(Error::Fault(_))
        ));
    }

    #[test]
    fn step_fixed_point_at_thermal_equilibrium() {
        let mut cfg = PlantConfig::default();
        cfg.init = PlantState {
            c_tg: 0.0,
            c_dg: 0.0,
            c_mg: 0.0,
            c_e: 0.0,
            c_a: 0.0,
            c_gl: 0.0,
            t_r: 342.0,
            t_j: 342.0,
            t: 0.0,
        };
        let s0 = reset(&cfg);
        let s1 = step(&s0, 342.0, &cfg).unwrap();
        assert_eq!(s1.t, cfg.dt_ctrl);
        assert_eq!(s1.t_r, 342.0);
        assert_eq!(s1.t_j, 342.0);
        assert_eq!(s1.c_tg, 0.0);
    }

    /// Explicit Euler at a much finer step; the integrator oracle.
    fn euler_oracle(state: &PlantState, action: f64, params: &KineticParams, t_span: f64, dt: f64) -> PlantState {
        let mut x = state.to_array();
        let n = (t_span / dt).round() as usize;
        for _ in 0..n {
            let s = PlantState::from_array(x, 0.0);
            let d = derivatives(&s, action, params).unwrap();
            for i in 0..8 {
                x[i] += dt * d[i];
            }
            for c in x.iter_mut().take(6) {
                if *c < 0.0 {
                    *c = 0.0;
                }
            }
        }
        PlantState::from_array(x, state.t + t_span)
    }

    #[test]
    fn step_matches_fine_euler_oracle_over_one_control_step() {
        let cfg = PlantConfig::default();
        // Start near thermal equilibrium with a gentle action so the
        // oracle's own first-order error stays far below the tolerance.
        let s0 = PlantState {
            t_r: 345.0,
            t_j: 345.0,
            ..cfg.init
        };
        let action = 346.0;
        let got = step(&s0, action, &cfg).unwrap();
        let want = euler_oracle(&s0, action, &cfg.params, cfg.dt_ctrl, cfg.dt_int / 1000.0);
        // Relative to the field's natural unit (mol/L, K) so species that
        // start at zero are held to an absolute 1e-6 mol/L.
        for (g, w) in got.to_array().iter().zip(want.to_array().iter()) {
            let scale = w.abs().max(1.0);
            assert!(
                ((g - w) / scale).abs() < 1e-6,
                "field mismatch: {g} vs {w}"
            );
        }
    }

    #[test]
    fn step_monotone_heat_flow_with_hot_jacket_inlet() {
        let mut cfg = PlantConfig::default();
        cfg.init = PlantState {
            c_tg: 0.0,
            c_dg: 0.0,
            c_mg: 0.0,
            c_e: 0.0,
            c_a: 0.0,
            c_gl: 0.0,
            t_r: 340.0,
            t_j: 340.0,
            t: 0.0,
        };
        let mut s = reset(&cfg);
        for _ in 0..5 {
            let next = step(&s, 350.0, &cfg).unwrap();
            assert!(next.t_j > s.t_j);
            assert!(next.t_r >= s.t_r);
            s = next;
        }
        assert!(s.t_r > 340.0);
    }

    #[test]
    fn step_is_deterministic_bitwise() {
        let cfg = PlantConfig::default();
        let s0 = reset(&cfg);
        let a = step(&s0, 347.3, &cfg).unwrap();
        let b = step(&s0, 347.3, &cfg).unwrap();
        for (x, y) in a.to_array().iter().zip(b.to_array().iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn step_rejects_time_overrun() {
        let cfg = PlantConfig::default();
        let s = PlantState {
            t: cfg.t_end,
            ..reset(&cfg)
        };
        assert!(step(&s, 340.0, &cfg).is_err());
    }

    #[test]
    fn rk4_order_halving_dt_improves_error_by_8x() {
        let mut cfg = PlantConfig::default();
        // A strong action transient makes truncation error visible.
        let s0 = PlantState {
            t_r: 340.0,
            t_j: 335.0,
            ..cfg.init
        };
        let action = 350.0;
        // Reference: RK4 at a much finer step.
        cfg.dt_int = 1.0 / 64.0;
        let reference = step(&s0, action, &cfg).unwrap();
        cfg.dt_int = 4.0;
        let coarse = step(&s0, action, &cfg).unwrap();
        cfg.dt_int = 2.0;
        let fine = step(&s0, action, &cfg).unwrap();
        let err = |s: &PlantState| -> f64 {
            s.to_array()
                .iter()
                .zip(reference.to_array().iter())
                .map(|(a, b)| (a - b).abs() / b.abs().max(1e-12))
                .fold(0.0, f64::max)
        };
        let e_coarse = err(&coarse);
        let e_fine = err(&fine);
        assert!(
            e_coarse >= 8.0 * e_fine,
            "order check failed: err(4s)={e_coarse:.3e} err(2s)={e_fine:.3e}"
        );
    }

    #[test]
    fn conservation_drift_stays_tiny_over_random_episode_segment() {
        let cfg = PlantConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = reset(&cfg);
        let g0 = s.glyceride_sum();
        let m0 = s.methyl_sum();
        for _ in 0..50 {
            let a = rng.random_range(cfg.action_min..cfg.action_max);
            s = step(&s, a, &cfg).unwrap();
        }
        assert!(((s.glyceride_sum() - g0) / g0).abs() < 1e-10);
        assert!(((s.methyl_sum() - m0) / m0).abs() < 1e-10);
    }

    #[test]
    fn step_counts_negative_clamps_under_stiff_kinetics() {
        let mut cfg = PlantConfig::default();
        // Kinetics fast enough that RK4 stages overshoot depletion of both
        // bilinear factors within one internal step; the overshoot must be
        // clamped and counted rather than faulted. Zero enthalpies keep the
        // thermal state untouched.
        cfg.params.k0 = [1e4, 1e-300, 1e-300, 1e-300, 1e-300, 1e-300];
        cfg.params.ea = [1e-300; 6];
        cfg.params.dh = [0.0, 0.0, 0.0];
        cfg.init.c_tg = 0.1;
        cfg.init.c_a = 0.1;
        cfg.init.c_dg = 0.0;
        cfg.init.c_mg = 0.0;
        cfg.init.c_e = 0.0;
        cfg.init.c_gl = 0.0;
        let mut stats = StepStats::default();
        let s0 = reset(&cfg);
        let s1 = step_counted(&s0, 340.0, &cfg, &mut stats).unwrap();
        assert!(stats.neg_clamps > 0);
        assert!(s1.c_tg >= 0.0 && s1.c_a >= 0.0);
        assert_eq!(s1.t_r, 340.0);
    }

    #[test]
    fn reset_returns_exact_initial_state() {
        let mut cfg = PlantConfig::default();
        cfg.init.t = 123.0; // stale time in the template must be zeroed
        let a = reset(&cfg);
        let b = reset(&cfg);
        assert_eq!(a.t, 0.0);
        assert_eq!(a, b);
        assert_eq!(a.c_tg, cfg.init.c_tg);
        assert_eq!(a.t_r, cfg.init.t_r);
    }

    #[test]
    fn perturb_zero_sd_is_identity() {
        let params = reference_params();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = perturb(&params, 0.0, &mut rng);
        assert_eq!(p, params);
    }

    #[test]
    fn perturb_same_seed_same_output() {
        let params = reference_params();
        let mut rng1 = ChaCha8Rng::seed_from_u64(42);
        let mut rng2 = ChaCha8Rng::seed_from_u64(42);
        let p1 = perturb(&params, 0.1, &mut rng1);
        let p2 = perturb(&params, 0.1, &mut rng2);
        assert_eq!(p1, p2);
        assert_ne!(p1.k0, params.k0);
        assert_eq!(p1.ea, params.ea);
        assert_eq!(p1.dh, params.dh);
    }

    #[test]
    fn perturb_empirical_sd_matches_requested() {
        let params = reference_params();
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let n = 10_000;
        let mut ratios = Vec::with_capacity(n);
        for _ in 0..n {
            let p = perturb(&params, 0.10, &mut rng);
            ratios.push(p.k0[0] / params.k0[0] - 1.0);
        }
        let mean = ratios.iter().sum::<f64>() / n as f64;
        let var = ratios.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        assert!(
            (sd - 0.10).abs() < 0.01,
            "empirical sd {sd} not within 10% of 0.10"
        );
    }

    #[test]
    fn config_validation_catches_geometry_errors() {
        let mut cfg = PlantConfig::default();
        cfg.dt_ctrl = 21.0; // does not divide 6000 evenly? 6000/21 is not integral
        assert!(cfg.validate().is_err());
        let mut cfg = PlantConfig::default();
        cfg.dt_int = 30.0;
        assert!(cfg.validate().is_err());
        let mut cfg = PlantConfig::default();
        cfg.action_min = 355.0;
        assert!(cfg.validate().is_err());
        assert!(PlantConfig::default().validate().is_ok());
    }
}
