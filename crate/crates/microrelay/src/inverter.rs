//! Discrete-time controller dynamics for grid-following (GFL) and
//! grid-forming (GFM) inverters.
//!
//! Controllers regulate positive-sequence quantities: unbalanced terminal
//! voltages are decomposed and only the positive-sequence component feeds
//! the loops, while the network solution stays full three-phase. All
//! integrators use forward Euler at the simulation step with anti-windup
//! clamps; integral gains are continuous-time (1/s).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::phasor::{Phasor, ThreePhase};

/// Nominal angular frequency, rad/s.
pub const OMEGA_S: f64 = 2.0 * std::f64::consts::PI * 60.0;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

fn wrap_angle(theta: f64) -> f64 {
    theta.rem_euclid(TWO_PI)
}

/// Clamp each phase magnitude to `i_max`, preserving the phase angle.
/// Idempotent: applying twice equals applying once. The comparison carries
/// one ulp of slack so that a freshly clamped phasor is never re-scaled.
pub fn limit_current(requested: &ThreePhase, i_max: f64) -> ThreePhase {
    let clamp = |p: Phasor| {
        let m = p.norm();
        if m > i_max * (1.0 + 1e-15) {
            p * (i_max / m)
        } else {
            p
        }
    };
    ThreePhase::new(clamp(requested.a), clamp(requested.b), clamp(requested.c))
}

// ---------------------------------------------------------------------------
// Synchronous-reference-frame PLL
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PllParams {
    /// Proportional gain of the phase loop (rad/s per pu q-voltage).
    pub kp: f64,
    /// Integral gain (rad/s² per pu q-voltage).
    pub ki: f64,
    /// Below this positive-sequence magnitude the PLL freezes its frequency
    /// instead of integrating noise (ride-through hold).
    pub hold_threshold: f64,
}

impl Default for PllParams {
    fn default() -> Self {
        Self {
            kp: 50.0,
            ki: 900.0,
            hold_threshold: 0.1,
        }
    }
}

/// Frequency-deviation bound on the PLL output and integrator, rad/s.
const PLL_FREQ_LIMIT: f64 = 0.08 * OMEGA_S;

/// Gear-shift acquisition aid: above this |v_q| the loop runs with boosted
/// gains (×4 proportional, ×16 integral, same damping ratio) so large
/// post-fault errors pull in quickly; near lock the configured gains apply.
const PLL_ACQUISITION_VQ: f64 = 0.02;
const PLL_ACQUISITION_BOOST: f64 = 4.0;

/// PLL state. `theta` is the absolute instantaneous angle estimate of
/// phase a; `theta_rel` is the same estimate in the synchronous envelope
/// frame (the angle of the terminal-voltage phasor).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PllState {
    pub theta: f64,
    pub theta_rel: f64,
    pub omega: f64,
    pub integrator: f64,
    pub holding: bool,
    /// q-axis voltage seen at the last step (pu), for lock diagnostics.
    pub last_vq: f64,
}

impl PllState {
    /// A PLL locked onto a phasor at `angle` with nominal frequency.
    pub fn locked_at(angle: f64) -> Self {
        Self {
            theta: wrap_angle(angle),
            theta_rel: angle,
            omega: OMEGA_S,
            integrator: 0.0,
            holding: false,
            last_vq: 0.0,
        }
    }
}

/// One PLL update driven by the terminal voltage. The q-axis component in
/// the PLL frame is driven toward zero; at zero voltage the loop holds its
/// last frequency and re-acquires phase on voltage recovery.
pub fn pll_step(state: &PllState, params: &PllParams, v_terminal: &ThreePhase, dt: f64) -> PllState {
    let v_pos = v_terminal.positive_sequence();
    let mut s = *state;
    if v_pos.norm() < params.hold_threshold {
        // Frequency hold: advance at the last frequency, integrator frozen.
        s.holding = true;
        s.last_vq = 0.0;
        s.theta_rel += (s.omega - OMEGA_S) * dt;
        s.theta = wrap_angle(s.theta + s.omega * dt);
        return s;
    }
    if s.holding {
        // Recovered from a dead bus: re-acquire phase directly.
        let snap = v_pos.arg();
        s.theta = wrap_angle(s.theta + (snap - s.theta_rel));
        s.theta_rel = snap;
        s.holding = false;
    }
    let vq = (v_pos * Phasor::from_polar(1.0, -s.theta_rel)).im;
    let (kp, ki) = if vq.abs() > PLL_ACQUISITION_VQ {
        (
            params.kp * PLL_ACQUISITION_BOOST,
            params.ki * PLL_ACQUISITION_BOOST * PLL_ACQUISITION_BOOST,
        )
    } else {
        (params.kp, params.ki)
    };
    let omega = OMEGA_S + (kp * vq + s.integrator).clamp(-PLL_FREQ_LIMIT, PLL_FREQ_LIMIT);
    s.integrator = (s.integrator + ki * vq * dt).clamp(-PLL_FREQ_LIMIT, PLL_FREQ_LIMIT);
    s.theta_rel += (omega - OMEGA_S) * dt;
    s.theta = wrap_angle(s.theta + omega * dt);
    s.omega = omega;
    s.last_vq = vq;
    s
}

// ---------------------------------------------------------------------------
// Grid-following inverter
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GflParams {
    /// Current-loop proportional gain (pu voltage per pu current).
    pub kp: f64,
    /// Current-loop integral gain (1/s).
    pub ki: f64,
    /// Real power setpoint, pu.
    pub pref: f64,
    /// Reactive power setpoint, pu.
    pub qref: f64,
    /// Per-phase current limit, pu.
    pub i_max: f64,
    pub pll: PllParams,
}

impl Default for GflParams {
    fn default() -> Self {
        Self {
            kp: 2.0,
            ki: 0.0025,
            pref: 0.3,
            qref: 0.05,
            i_max: 1.2,
            pll: PllParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GflState {
    pub pll: PllState,
    /// Filter current in the PLL dq frame (d + jq).
    pub current_dq: Complex64,
    /// Current-loop PI integrators (d + jq).
    pub integrator_dq: Complex64,
    pub last_injection: ThreePhase,
    /// True when the reference or injection was magnitude-clamped.
    pub limited: bool,
}

impl GflState {
    pub fn new() -> Self {
        Self {
            pll: PllState::locked_at(0.0),
            current_dq: Complex64::new(0.0, 0.0),
            integrator_dq: Complex64::new(0.0, 0.0),
            last_injection: ThreePhase::ZERO,
            limited: false,
        }
    }
}

impl Default for GflState {
    fn default() -> Self {
        Self::new()
    }
}

const GFL_INTEG_LIMIT: f64 = 0.5;

/// Current reference from the power setpoints and terminal voltage:
/// `i = conj((P + jQ) / v)`, magnitude-clamped to the current limit.
pub fn gfl_current_reference(params: &GflParams, v_pos: Phasor) -> (Phasor, bool) {
    let v = if v_pos.norm() < 1e-6 {
        Phasor::new(1e-6, 0.0)
    } else {
        v_pos
    };
    let s_ref = Complex64::new(params.pref, params.qref);
    let i_ref = (s_ref / v).conj();
    let m = i_ref.norm();
    if m > params.i_max {
        (i_ref * (params.i_max / m), true)
    } else {
        (i_ref, false)
    }
}

/// One GFL update: PLL tracking, dq current reference, decoupled PI current
/// loop through the coupling impedance, and the magnitude-limited
/// three-phase injection for the next network solve.
///
/// `z_src` is the total coupling impedance (RL filter plus transformer
/// leakage) in per-unit; the ±ωL decoupling and R, v_t feed-forward terms
/// cancel against the filter cross-coupling, leaving the envelope dynamics
/// `(X/ω_s)·di/dt = kp·(i_ref − i) + integ`.
pub fn gfl_step(
    state: &GflState,
    params: &GflParams,
    z_src: Complex64,
    v_bus: &ThreePhase,
    dt: f64,
) -> (GflState, ThreePhase) {
    let mut s = *state;
    s.pll = pll_step(&s.pll, &params.pll, v_bus, dt);

    let rot = Phasor::from_polar(1.0, -s.pll.theta_rel);
    // During ride-through hold the reference chase is frozen: the unit
    // coasts its current vector at the held frequency instead of tracking
    // the angle of a collapsed bus voltage.
    let (i_ref_dq, ref_clamped) = if s.pll.holding {
        (s.current_dq, false)
    } else {
        let v_pos = v_bus.positive_sequence();
        let (i_ref_pos, clamped) = gfl_current_reference(params, v_pos);
        (i_ref_pos * rot, clamped)
    };

    let err = i_ref_dq - s.current_dq;
    let x = z_src.im.max(1e-6);
    let didt = (OMEGA_S / x) * (params.kp * err + s.integrator_dq);
    s.current_dq += didt * dt;
    s.integrator_dq += err * (params.ki * dt);
    s.integrator_dq = Complex64::new(
        s.integrator_dq.re.clamp(-GFL_INTEG_LIMIT, GFL_INTEG_LIMIT),
        s.integrator_dq.im.clamp(-GFL_INTEG_LIMIT, GFL_INTEG_LIMIT),
    );

    let i_pos = s.current_dq * rot.conj();
    let requested = ThreePhase::from_positive_sequence(i_pos);
    let injection = limit_current(&requested, params.i_max);
    s.limited = ref_clamped || requested.max_magnitude() > params.i_max;
    s.last_injection = injection;
    (s, injection)
}

// ---------------------------------------------------------------------------
// Grid-forming inverter
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GfmParams {
    /// P–f droop path PI gains (proportional, integral 1/s).
    pub pf_kp: f64,
    pub pf_ki: f64,
    /// Q–V droop path PI gains.
    pub qv_kp: f64,
    pub qv_ki: f64,
    /// Droop slopes, pu frequency per pu power and pu voltage per pu power.
    pub m_p: f64,
    pub m_q: f64,
    /// Droop reference power setpoints, pu.
    pub pref: f64,
    pub qref: f64,
    pub v_nom: f64,
    pub f_nom: f64,
    pub i_max: f64,
    /// Anti-windup bounds on the two integrators.
    pub pf_integ_limit: f64,
    pub qv_integ_limit: f64,
}

impl Default for GfmParams {
    fn default() -> Self {
        Self {
            pf_kp: 0.6,
            pf_ki: 0.003,
            qv_kp: 0.6,
            qv_ki: 0.002,
            m_p: 0.02,
            m_q: 0.02,
            pref: 0.0,
            qref: 0.0,
            v_nom: 1.0,
            f_nom: 60.0,
            i_max: 1.2,
            pf_integ_limit: 0.02,
            qv_integ_limit: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GfmState {
    /// Absolute instantaneous angle of the internal source, wrapped.
    pub theta: f64,
    /// Envelope-frame angle of the internal source phasor.
    pub theta_rel: f64,
    /// Commanded source voltage magnitude, pu.
    pub v_cmd: f64,
    pub pf_integrator: f64,
    pub qv_integrator: f64,
    /// True when the current-limit override was active this step.
    pub limited: bool,
}

impl GfmState {
    pub fn new() -> Self {
        Self {
            theta: 0.0,
            theta_rel: 0.0,
            v_cmd: 1.0,
            pf_integrator: 0.0,
            qv_integrator: 0.0,
            limited: false,
        }
    }

    /// Internal source voltage as a balanced three-phase set.
    pub fn source_voltage(&self) -> ThreePhase {
        ThreePhase::balanced(self.v_cmd, self.theta_rel)
    }
}

impl Default for GfmState {
    fn default() -> Self {
        Self::new()
    }
}

/// Frequency-deviation clamp on the P–f path, pu.
const GFM_FREQ_LIMIT: f64 = 0.05;

/// One GFM droop update from the measured output power. The P–f path moves
/// the source angle, the Q–V path moves the commanded magnitude; the source
/// itself is stamped into the network as `v_cmd∠theta` behind the coupling
/// impedance, with a current-limit override applied by the network solve.
pub fn gfm_step(state: &GfmState, params: &GfmParams, p_t: f64, q_t: f64, dt: f64) -> GfmState {
    let mut s = *state;

    let u_f = params.m_p * (params.pref - p_t);
    s.pf_integrator = (s.pf_integrator + params.pf_ki * u_f * dt)
        .clamp(-params.pf_integ_limit, params.pf_integ_limit);
    let domega_pu = (params.pf_kp * u_f + s.pf_integrator).clamp(-GFM_FREQ_LIMIT, GFM_FREQ_LIMIT);
    s.theta_rel += domega_pu * OMEGA_S * dt;
    s.theta = wrap_angle(s.theta + (1.0 + domega_pu) * OMEGA_S * dt);

    let u_v = params.m_q * (params.qref - q_t);
    s.qv_integrator = (s.qv_integrator + params.qv_ki * u_v * dt)
        .clamp(-params.qv_integ_limit, params.qv_integ_limit);
    s.v_cmd = (params.v_nom + params.qv_kp * u_v + s.qv_integrator).clamp(0.0, 1.5);

    s
}
