//! Complex phasor primitives.
//!
//! All electrical quantities are fundamental-frequency phasors in per-unit
//! with the RMS magnitude convention: a balanced 1.0 pu three-phase set has
//! per-phase RMS 1.0 pu. Three-phase power uses the mean-over-phases
//! convention so that balanced 1.0 pu voltage and current carry 1.0 pu
//! apparent power on the system base.

use num_complex::Complex64;

/// A single per-phase phasor (per-unit, RMS convention).
pub type Phasor = Complex64;

/// 120 degrees in radians.
pub const DEG_120: f64 = 2.0 * std::f64::consts::PI / 3.0;

/// Fortescue rotation operator `a = 1∠120°`.
pub fn op_a() -> Phasor {
    Phasor::from_polar(1.0, DEG_120)
}

/// Phase identifiers in a fixed a, b, c order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        match self {
            Phase::A => 0,
            Phase::B => 1,
            Phase::C => 2,
        }
    }
}

/// Per-phase complex phasors carrying a bus voltage or branch current.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreePhase {
    pub a: Phasor,
    pub b: Phasor,
    pub c: Phasor,
}

impl ThreePhase {
    pub const ZERO: ThreePhase = ThreePhase {
        a: Phasor::new(0.0, 0.0),
        b: Phasor::new(0.0, 0.0),
        c: Phasor::new(0.0, 0.0),
    };

    pub fn new(a: Phasor, b: Phasor, c: Phasor) -> Self {
        Self { a, b, c }
    }

    /// Balanced positive-sequence set: phase b lags a by 120°, c leads by 120°.
    pub fn balanced(magnitude: f64, angle_a: f64) -> Self {
        Self {
            a: Phasor::from_polar(magnitude, angle_a),
            b: Phasor::from_polar(magnitude, angle_a - DEG_120),
            c: Phasor::from_polar(magnitude, angle_a + DEG_120),
        }
    }

    /// Expand a positive-sequence phasor into its balanced abc set.
    pub fn from_positive_sequence(pos: Phasor) -> Self {
        let a2 = op_a() * op_a();
        Self {
            a: pos,
            b: a2 * pos,
            c: op_a() * pos,
        }
    }

    pub fn phase(&self, p: Phase) -> Phasor {
        match p {
            Phase::A => self.a,
            Phase::B => self.b,
            Phase::C => self.c,
        }
    }

    pub fn phase_mut(&mut self, p: Phase) -> &mut Phasor {
        match p {
            Phase::A => &mut self.a,
            Phase::B => &mut self.b,
            Phase::C => &mut self.c,
        }
    }

    /// Per-phase RMS magnitudes `[|a|, |b|, |c|]`.
    pub fn magnitudes(&self) -> [f64; 3] {
        [self.a.norm(), self.b.norm(), self.c.norm()]
    }

    pub fn max_magnitude(&self) -> f64 {
        self.magnitudes().into_iter().fold(0.0, f64::max)
    }

    /// Positive-sequence component `(a + α·b + α²·c) / 3`.
    pub fn positive_sequence(&self) -> Phasor {
        let al = op_a();
        (self.a + al * self.b + al * al * self.c) / 3.0
    }

    /// Negative-sequence component `(a + α²·b + α·c) / 3`.
    pub fn negative_sequence(&self) -> Phasor {
        let al = op_a();
        (self.a + al * al * self.b + al * self.c) / 3.0
    }

    /// True if phase magnitudes agree within `tol` and angles are mutually
    /// displaced by 120° within `tol` radians (positive-sequence order).
    pub fn is_balanced(&self, tol: f64) -> bool {
        let [ma, mb, mc] = self.magnitudes();
        if (ma - mb).abs() > tol || (mb - mc).abs() > tol {
            return false;
        }
        let ang = |p: Phasor, q: Phasor| {
            // angle displacement q -> p, wrapped to (-pi, pi]
            let d = (p * q.conj()).arg();
            d
        };
        (ang(self.a, self.b) - DEG_120).abs() < tol && (ang(self.b, self.c) - DEG_120).abs() < tol
    }

    pub fn scale(&self, k: f64) -> Self {
        Self {
            a: self.a * k,
            b: self.b * k,
            c: self.c * k,
        }
    }

    pub fn mul(&self, k: Phasor) -> Self {
        Self {
            a: self.a * k,
            b: self.b * k,
            c: self.c * k,
        }
    }

    pub fn add(&self, o: &ThreePhase) -> Self {
        Self {
            a: self.a + o.a,
            b: self.b + o.b,
            c: self.c + o.c,
        }
    }

    pub fn sub(&self, o: &ThreePhase) -> Self {
        Self {
            a: self.a - o.a,
            b: self.b - o.b,
            c: self.c - o.c,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.a, self.b, self.c]
            .iter()
            .all(|p| p.re.is_finite() && p.im.is_finite())
    }
}

/// Three-phase complex power `S = mean_phase(v · conj(i))` in pu on the
/// system base. Returns `(P, Q)`.
pub fn power(v: &ThreePhase, i: &ThreePhase) -> (f64, f64) {
    let s = (v.a * i.a.conj() + v.b * i.b.conj() + v.c * i.c.conj()) / 3.0;
    (s.re, s.im)
}
