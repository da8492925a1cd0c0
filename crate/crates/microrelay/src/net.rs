//! Three-phase phasor network model: admittance assembly, fault shunt
//! stamping, and the per-timestep algebraic network solution.
//!
//! The network is quasi-static: at every simulation step the bus voltages
//! satisfy `Y · V = I` for the current injections produced by the inverter
//! controllers. Lines are modeled per phase without mutual coupling, loads
//! as constant impedance, and ground faults as conductances to a solid
//! ground on the faulted phases only.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phasor::{power, Phase, ThreePhase};

/// System per-unit bases (three-phase power, line-to-line voltages).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemBases {
    /// Three-phase apparent power base, VA.
    pub s_va: f64,
    /// Low-voltage side base, V line-to-line.
    pub v_lv: f64,
    /// Medium-voltage side base, V line-to-line.
    pub v_mv: f64,
}

impl SystemBases {
    pub fn z_base_mv(&self) -> f64 {
        self.v_mv * self.v_mv / self.s_va
    }

    pub fn z_base_lv(&self) -> f64 {
        self.v_lv * self.v_lv / self.s_va
    }
}

/// Convert an impedance in ohms to per-unit on the given base.
pub fn ohms_to_pu(z_ohm: Complex64, z_base: f64) -> Complex64 {
    z_ohm / z_base
}

/// Convert a per-unit impedance back to ohms.
pub fn pu_to_ohms(z_pu: Complex64, z_base: f64) -> Complex64 {
    z_pu * z_base
}

/// A series line between two buses, given in ohms at system frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSpec {
    pub from: usize,
    pub to: usize,
    pub r_ohm: f64,
    pub x_ohm: f64,
}

/// Step-up transformer coupling an inverter to its bus. The winding ratio
/// matches the LV/MV bases, so in per-unit only the leakage remains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformerSpec {
    pub bus: usize,
    /// Winding ratio, V:V (low side, high side).
    pub ratio: (f64, f64),
    pub r_pu: f64,
    pub x_pu: f64,
}

/// Constant-impedance load, specified as P, Q drawn at nominal voltage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub bus: usize,
    pub p_pu: f64,
    pub q_pu: f64,
}

/// Ground fault applied at a bus: conductance `1/Rf` on each faulted phase.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultShunt {
    pub bus: usize,
    pub phases: Vec<Phase>,
    pub rf_ohm: f64,
}

/// Static description of the bus/line/load network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDescription {
    pub buses: Vec<usize>,
    pub lines: Vec<LineSpec>,
    pub transformers: Vec<TransformerSpec>,
    pub loads: Vec<LoadSpec>,
    pub bases: SystemBases,
}

impl NetworkDescription {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Matrix index of a bus id.
    pub fn bus_index(&self, bus: usize) -> Result<usize> {
        self.buses
            .iter()
            .position(|&b| b == bus)
            .ok_or_else(|| Error::Config(format!("unknown bus id {bus}")))
    }

    /// Series impedance of a line in per-unit on the MV base.
    pub fn line_impedance_pu(&self, line: &LineSpec) -> Complex64 {
        ohms_to_pu(
            Complex64::new(line.r_ohm, line.x_ohm),
            self.bases.z_base_mv(),
        )
    }

    /// Validate impedance signs, bus references, and connectivity.
    pub fn validate(&self) -> Result<()> {
        if self.buses.is_empty() {
            return Err(Error::Config("network has no buses".into()));
        }
        let mut sorted = self.buses.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.buses.len() {
            return Err(Error::Config("duplicate bus ids".into()));
        }
        for line in &self.lines {
            if line.from == line.to {
                return Err(Error::Config(format!("line {}-{} is a self loop", line.from, line.to)));
            }
            self.bus_index(line.from)?;
            self.bus_index(line.to)?;
            if line.r_ohm < 0.0 || line.x_ohm < 0.0 || (line.r_ohm == 0.0 && line.x_ohm == 0.0) {
                return Err(Error::Config(format!(
                    "line {}-{} has non-positive impedance ({} + j{} ohm)",
                    line.from, line.to, line.r_ohm, line.x_ohm
                )));
            }
        }
        for tx in &self.transformers {
            self.bus_index(tx.bus)?;
            if tx.r_pu < 0.0 || tx.x_pu <= 0.0 {
                return Err(Error::Config(format!(
                    "transformer at bus {} has non-positive leakage",
                    tx.bus
                )));
            }
        }
        for load in &self.loads {
            self.bus_index(load.bus)?;
            if load.p_pu < 0.0 {
                return Err(Error::Config(format!("load at bus {} has negative P", load.bus)));
            }
        }
        // Every bus must be reachable from the first one through lines.
        if self.buses.len() > 1 {
            let mut seen = vec![false; self.buses.len()];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(i) = stack.pop() {
                let id = self.buses[i];
                for line in &self.lines {
                    let other = if line.from == id {
                        Some(line.to)
                    } else if line.to == id {
                        Some(line.from)
                    } else {
                        None
                    };
                    if let Some(o) = other {
                        let j = self.bus_index(o)?;
                        if !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
            if let Some(i) = seen.iter().position(|s| !s) {
                return Err(Error::Topology(format!(
                    "bus {} is not connected to the rest of the network",
                    self.buses[i]
                )));
            }
        }
        Ok(())
    }
}

fn validate_faults(desc: &NetworkDescription, faults: &[FaultShunt]) -> Result<()> {
    for f in faults {
        desc.bus_index(f.bus)?;
        if f.rf_ohm <= 0.0 {
            return Err(Error::Config(format!(
                "fault at bus {} has non-positive resistance {}",
                f.bus, f.rf_ohm
            )));
        }
        if f.phases.is_empty() {
            return Err(Error::Config(format!("fault at bus {} has no phases", f.bus)));
        }
    }
    Ok(())
}

/// Three-phase nodal admittance matrix, `3·n_buses` square, bus-major node
/// ordering (bus index × 3 + phase index).
#[derive(Debug, Clone)]
pub struct YMatrix {
    m: DMatrix<Complex64>,
    n_buses: usize,
}

impl YMatrix {
    pub fn n_buses(&self) -> usize {
        self.n_buses
    }

    pub fn node(&self, bus_idx: usize, phase: Phase) -> usize {
        bus_idx * 3 + phase.index()
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.m[(row, col)]
    }

    /// Add a shunt admittance to ground on one phase of a bus. Used by the
    /// simulator to stamp voltage-source-coupled inverters (Norton form).
    pub fn add_phase_shunt(&mut self, bus_idx: usize, phase: Phase, y: Complex64) {
        let n = self.node(bus_idx, phase);
        self.m[(n, n)] += y;
    }

    /// Add the same shunt admittance on all three phases of a bus.
    pub fn add_balanced_shunt(&mut self, bus_idx: usize, y: Complex64) {
        for p in Phase::ALL {
            self.add_phase_shunt(bus_idx, p, y);
        }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let n = self.m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                if (self.m[(i, j)] - self.m[(j, i)]).norm() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// LU-factorize for repeated solves. Fails on singular or
    /// near-singular matrices, naming the offending bus and phase.
    pub fn factorize(&self) -> Result<FactorizedY> {
        let lu = self.m.clone().lu();
        let u = lu.u();
        let mut min_d = f64::INFINITY;
        let mut max_d: f64 = 0.0;
        let mut min_at = 0usize;
        for j in 0..u.nrows() {
            let d = u[(j, j)].norm();
            if d < min_d {
                min_d = d;
                min_at = j;
            }
            max_d = max_d.max(d);
        }
        if !(min_d > max_d * 1e-12) || max_d == 0.0 {
            let bus_idx = min_at / 3;
            let phase = Phase::ALL[min_at % 3];
            return Err(Error::Numerical(format!(
                "admittance matrix is singular or ill-conditioned near bus index {bus_idx} phase {phase:?} \
                 (pivot ratio {:.3e})",
                if max_d > 0.0 { min_d / max_d } else { 0.0 }
            )));
        }
        Ok(FactorizedY {
            y: self.m.clone(),
            lu,
            n_buses: self.n_buses,
        })
    }
}

/// Prefactored admittance matrix plus the original for residual checks.
pub struct FactorizedY {
    y: DMatrix<Complex64>,
    lu: nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    n_buses: usize,
}

impl FactorizedY {
    /// Solve `Y · V = I` with one step of iterative refinement. Returns the
    /// bus voltages and the final KCL residual `‖Y·V − I‖∞`.
    pub fn solve(&self, injections: &[ThreePhase]) -> Result<(Vec<ThreePhase>, f64)> {
        if injections.len() != self.n_buses {
            return Err(Error::Argument(format!(
                "expected {} bus injections, got {}",
                self.n_buses,
                injections.len()
            )));
        }
        let n = self.n_buses * 3;
        let mut rhs = DMatrix::<Complex64>::zeros(n, 1);
        for (b, inj) in injections.iter().enumerate() {
            for p in Phase::ALL {
                rhs[(b * 3 + p.index(), 0)] = inj.phase(p);
            }
        }
        let mut v = self
            .lu
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("LU solve failed".into()))?;
        // One refinement pass keeps the residual at machine precision even
        // with the huge conductances of near-bolted faults in the matrix.
        let r = &rhs - &self.y * &v;
        if let Some(dv) = self.lu.solve(&r) {
            v += dv;
        }
        let resid = (&rhs - &self.y * &v)
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max);
        let mut out = Vec::with_capacity(self.n_buses);
        for b in 0..self.n_buses {
            out.push(ThreePhase::new(
                v[(b * 3, 0)],
                v[(b * 3 + 1, 0)],
                v[(b * 3 + 2, 0)],
            ));
        }
        Ok((out, resid))
    }

    /// Net injected current at every bus for a given voltage solution
    /// (the `Y · V` product, bus by bus).
    pub fn injected_currents(&self, voltages: &[ThreePhase]) -> Vec<ThreePhase> {
        let n = self.n_buses * 3;
        let mut v = DMatrix::<Complex64>::zeros(n, 1);
        for (b, tp) in voltages.iter().enumerate() {
            for p in Phase::ALL {
                v[(b * 3 + p.index(), 0)] = tp.phase(p);
            }
        }
        let i = &self.y * &v;
        (0..self.n_buses)
            .map(|b| ThreePhase::new(i[(b * 3, 0)], i[(b * 3 + 1, 0)], i[(b * 3 + 2, 0)]))
            .collect()
    }
}

/// Assemble the three-phase nodal admittance matrix from the passive network
/// (lines, constant-impedance loads) plus any active fault shunts. Inverter
/// coupling admittances are stamped separately by the simulator.
pub fn build_admittance(desc: &NetworkDescription, faults: &[FaultShunt]) -> Result<YMatrix> {
    desc.validate()?;
    validate_faults(desc, faults)?;
    let n = desc.n_buses();
    let mut m = DMatrix::<Complex64>::zeros(n * 3, n * 3);

    for line in &desc.lines {
        let y = 1.0 / desc.line_impedance_pu(line);
        let fi = desc.bus_index(line.from)?;
        let ti = desc.bus_index(line.to)?;
        for p in Phase::ALL {
            let a = fi * 3 + p.index();
            let b = ti * 3 + p.index();
            m[(a, a)] += y;
            m[(b, b)] += y;
            m[(a, b)] -= y;
            m[(b, a)] -= y;
        }
    }

    for load in &desc.loads {
        // Constant-impedance conversion at nominal voltage: Y = P − jQ.
        let y = Complex64::new(load.p_pu, -load.q_pu);
        let bi = desc.bus_index(load.bus)?;
        for p in Phase::ALL {
            let a = bi * 3 + p.index();
            m[(a, a)] += y;
        }
    }

    let z_base = desc.bases.z_base_mv();
    for fault in faults {
        let g = Complex64::new(z_base / fault.rf_ohm, 0.0);
        let bi = desc.bus_index(fault.bus)?;
        for &p in &fault.phases {
            let a = bi * 3 + p.index();
            m[(a, a)] += g;
        }
    }

    Ok(YMatrix { m, n_buses: n })
}

/// Convenience one-shot solve (factorize + solve).
pub fn solve_network(y: &YMatrix, injections: &[ThreePhase]) -> Result<Vec<ThreePhase>> {
    let f = y.factorize()?;
    let (v, _resid) = f.solve(injections)?;
    Ok(v)
}

/// Per-line currents and per-bus injected power for a solved voltage profile.
#[derive(Debug, Clone)]
pub struct Flows {
    /// Current in each line, in `desc.lines` order, from-bus → to-bus direction.
    pub line_currents: Vec<ThreePhase>,
    /// Net injected (P, Q) at each bus, in bus order.
    pub bus_power: Vec<(f64, f64)>,
}

/// Compute branch currents and bus injection powers: line current is
/// `(V_from − V_to) · y_line` per phase, and bus power is
/// `mean_phase(V · conj(I_injected))` with `I = Y·V`.
pub fn branch_flows(
    y: &FactorizedY,
    desc: &NetworkDescription,
    voltages: &[ThreePhase],
) -> Result<Flows> {
    if voltages.len() != desc.n_buses() {
        return Err(Error::Argument(format!(
            "expected {} bus voltages, got {}",
            desc.n_buses(),
            voltages.len()
        )));
    }
    let mut line_currents = Vec::with_capacity(desc.lines.len());
    for line in &desc.lines {
        let yl = 1.0 / desc.line_impedance_pu(line);
        let fi = desc.bus_index(line.from)?;
        let ti = desc.bus_index(line.to)?;
        let dv = voltages[fi].sub(&voltages[ti]);
        line_currents.push(dv.mul(yl));
    }
    let inj = y.injected_currents(voltages);
    let bus_power = voltages
        .iter()
        .zip(inj.iter())
        .map(|(v, i)| power(v, i))
        .collect();
    Ok(Flows {
        line_currents,
        bus_power,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn two_bus_desc() -> NetworkDescription {
        NetworkDescription {
            buses: vec![1, 2],
            lines: vec![LineSpec {
                from: 1,
                to: 2,
                r_ohm: 1.4,
                x_ohm: 2.0,
            }],
            transformers: vec![],
            loads: vec![LoadSpec {
                bus: 2,
                p_pu: 1.0,
                q_pu: 0.0,
            }],
            bases: SystemBases {
                s_va: 1.5e6,
                v_lv: 480.0,
                v_mv: 12_470.0,
            },
        }
    }

    #[test]
    fn line_12_off_diagonal_entry() {
        let desc = crate::config::MicrogridConfig::default().network;
        let y = build_admittance(&desc, &[]).unwrap();
        // -1/((1.4 + j2.0)/Z_base) in every phase position of the 1-2 block.
        let expect = Complex64::new(-24.351371364653243, 34.787673378076065);
        let (b1, b2) = (desc.bus_index(1).unwrap(), desc.bus_index(2).unwrap());
        for p in Phase::ALL {
            let v = y.get(y.node(b1, p), y.node(b2, p));
            assert_relative_eq!(v.re, expect.re, epsilon = 1e-9);
            assert_relative_eq!(v.im, expect.im, epsilon = 1e-9);
        }
        assert!(y.is_symmetric(1e-12));
    }

    #[test]
    fn fault_stamp_is_local_to_faulted_phase() {
        let desc = two_bus_desc();
        let base = build_admittance(&desc, &[]).unwrap();
        let fault = FaultShunt {
            bus: 1,
            phases: vec![Phase::A],
            rf_ohm: 10.0,
        };
        let faulted = build_admittance(&desc, &[fault]).unwrap();
        let g = desc.bases.z_base_mv() / 10.0;
        let n = desc.n_buses() * 3;
        for i in 0..n {
            for j in 0..n {
                let d = faulted.get(i, j) - base.get(i, j);
                if i == 0 && j == 0 {
                    assert_relative_eq!(d.re, g, epsilon = 1e-12);
                    assert_relative_eq!(d.im, 0.0, epsilon = 1e-12);
                } else {
                    assert_eq!(d, Complex64::new(0.0, 0.0), "unexpected change at ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn duplicate_fault_stamps_add() {
        let desc = two_bus_desc();
        let f = FaultShunt {
            bus: 2,
            phases: vec![Phase::B],
            rf_ohm: 5.0,
        };
        let once = build_admittance(&desc, &[f.clone()]).unwrap();
        let twice = build_admittance(&desc, &[f.clone(), f]).unwrap();
        let g = desc.bases.z_base_mv() / 5.0;
        let node = twice.node(1, Phase::B);
        let d = twice.get(node, node) - once.get(node, node);
        assert_relative_eq!(d.re, g, epsilon = 1e-9);
    }

    #[test]
    fn single_bus_unit_shunt_ohms_law() {
        let desc = NetworkDescription {
            buses: vec![1],
            lines: vec![],
            transformers: vec![],
            loads: vec![LoadSpec {
                bus: 1,
                p_pu: 1.0,
                q_pu: 0.0,
            }],
            bases: SystemBases {
                s_va: 1.5e6,
                v_lv: 480.0,
                v_mv: 12_470.0,
            },
        };
        let y = build_admittance(&desc, &[]).unwrap();
        let inj = vec![ThreePhase::balanced(1.0, 0.0)];
        let v = solve_network(&y, &inj).unwrap();
        assert_relative_eq!(v[0].a.re, 1.0, epsilon = 1e-12);
        assert_relative_eq!(v[0].a.im, 0.0, epsilon = 1e-12);
        assert!(v[0].is_balanced(1e-9));
    }

    #[test]
    fn two_bus_solution_matches_independent_solve() {
        // Frozen from an independent 2x2 complex solve (numpy).
        let desc = two_bus_desc();
        let y = build_admittance(&desc, &[]).unwrap();
        let f = y.factorize().unwrap();
        let inj = vec![ThreePhase::balanced(1.0, 0.0), ThreePhase::ZERO];
        let (v, resid) = f.solve(&inj).unwrap();
        assert!(resid <= 1e-9, "KCL residual {resid}");
        assert_relative_eq!(v[0].a.re, 1.0135047449886068, epsilon = 1e-9);
        assert_relative_eq!(v[0].a.im, 0.019292492840884534, epsilon = 1e-9);
        assert_relative_eq!(v[1].a.re, 1.0, epsilon = 1e-9);
        assert_relative_eq!(v[1].a.im, 0.0, epsilon = 1e-9);

        // P, Q at bus 1 equal Re/Im of V1 · conj(I1).
        let flows = branch_flows(&f, &desc, &v).unwrap();
        assert_relative_eq!(flows.bus_power[0].0, 1.0135047449886068, epsilon = 1e-9);
        assert_relative_eq!(flows.bus_power[0].1, 0.019292492840884534, epsilon = 1e-9);
        // Line current from bus 1 to 2 is the full injected ampere.
        assert_relative_eq!(flows.line_currents[0].a.norm(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn power_balance_on_two_bus_case() {
        let desc = two_bus_desc();
        let y = build_admittance(&desc, &[]).unwrap();
        let f = y.factorize().unwrap();
        let inj = vec![ThreePhase::balanced(1.0, 0.0), ThreePhase::ZERO];
        let (v, _) = f.solve(&inj).unwrap();
        let flows = branch_flows(&f, &desc, &v).unwrap();
        let p_injected: f64 = flows.bus_power.iter().map(|p| p.0).sum();
        let z = desc.line_impedance_pu(&desc.lines[0]);
        let i = &flows.line_currents[0];
        let loss: f64 = i.magnitudes().iter().map(|m| m * m * z.re).sum::<f64>() / 3.0;
        let load: f64 = v[1].magnitudes().iter().map(|m| m * m * 1.0).sum::<f64>() / 3.0;
        assert_relative_eq!(p_injected, loss + load, epsilon = 1e-6);
    }

    #[test]
    fn balanced_injection_gives_balanced_voltages() {
        let desc = two_bus_desc();
        let y = build_admittance(&desc, &[]).unwrap();
        let inj = vec![
            ThreePhase::balanced(0.7, 0.3),
            ThreePhase::balanced(0.2, -1.0),
        ];
        let v = solve_network(&y, &inj).unwrap();
        for tp in &v {
            assert!(tp.is_balanced(1e-9));
        }
    }

    #[test]
    fn zero_injection_zero_flows() {
        let desc = two_bus_desc();
        let y = build_admittance(&desc, &[]).unwrap();
        let f = y.factorize().unwrap();
        let (v, _) = f.solve(&[ThreePhase::ZERO, ThreePhase::ZERO]).unwrap();
        let flows = branch_flows(&f, &desc, &v).unwrap();
        assert!(flows.line_currents[0].max_magnitude() < 1e-12);
        assert!(flows.bus_power.iter().all(|p| p.0.abs() < 1e-12));
    }

    #[test]
    fn equal_voltages_zero_line_current() {
        let desc = two_bus_desc();
        let y = build_admittance(&desc, &[]).unwrap();
        let f = y.factorize().unwrap();
        let v = vec![ThreePhase::balanced(1.0, 0.1), ThreePhase::balanced(1.0, 0.1)];
        let flows = branch_flows(&f, &desc, &v).unwrap();
        assert!(flows.line_currents[0].max_magnitude() < 1e-12);
    }

    #[test]
    fn bad_impedance_rejected() {
        let mut desc = two_bus_desc();
        desc.lines[0].r_ohm = 0.0;
        desc.lines[0].x_ohm = 0.0;
        assert!(matches!(
            build_admittance(&desc, &[]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn disconnected_bus_rejected() {
        let mut desc = two_bus_desc();
        desc.buses.push(3);
        assert!(matches!(
            build_admittance(&desc, &[]),
            Err(Error::Topology(_))
        ));
    }

    #[test]
    fn singular_matrix_reported_with_bus() {
        // A single bus with nothing attached has an all-zero admittance.
        let desc = NetworkDescription {
            buses: vec![7],
            lines: vec![],
            transformers: vec![],
            loads: vec![],
            bases: SystemBases {
                s_va: 1.5e6,
                v_lv: 480.0,
                v_mv: 12_470.0,
            },
        };
        let y = build_admittance(&desc, &[]).unwrap();
        match y.factorize() {
            Err(Error::Numerical(msg)) => assert!(msg.contains("bus")),
            Err(other) => panic!("expected numerical error, got {other:?}"),
            Ok(_) => panic!("expected numerical error, got a factorization"),
        }
    }

    proptest! {
        #[test]
        fn pu_round_trip(r in 1e-6..1e4f64, x in 1e-6..1e4f64, base in 1e-3..1e6f64) {
            let z = Complex64::new(r, x);
            let back = pu_to_ohms(ohms_to_pu(z, base), base);
            prop_assert!((back.re - r).abs() <= 1e-12 * r.abs());
            prop_assert!((back.im - x).abs() <= 1e-12 * x.abs());
        }
    }
}
