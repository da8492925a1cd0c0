//! Configuration: the microgrid description, inverter roster, and
//! simulation parameters, loadable from a human-editable TOML file.
//!
//! `MicrogridConfig::default()` is the 4-bus system this crate ships:
//! 1.5 MVA / 480 V / 12.47 kV bases, lines 1-2 = (1.4 + j2.0) Ω,
//! 2-3 = (2.2 + j3.16) Ω, 3-4 = (0.6 + j3.16) Ω, a load at bus 3, four
//! inverters (1 and 3 grid-forming, 2 and 4 grid-following) each coupled
//! through an RL filter and a step-up transformer, and the protection
//! relay at bus 1.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::inverter::{GflParams, GfmParams, OMEGA_S};
use crate::net::{LineSpec, LoadSpec, NetworkDescription, SystemBases, TransformerSpec};

/// Fixed-step simulation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    /// Integration step, seconds.
    pub dt: f64,
    /// Record one sample every this many steps (10 × 100 µs = 1 ms).
    pub record_every: usize,
    /// Un-recorded settling interval before t = 0, seconds.
    pub preroll: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            dt: 1e-4,
            record_every: 10,
            preroll: 0.15,
        }
    }
}

/// Controller flavor and parameters for one inverter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode")]
pub enum ControlSpec {
    #[serde(rename = "grid_forming")]
    GridForming(GfmParams),
    #[serde(rename = "grid_following")]
    GridFollowing(GflParams),
}

/// One inverter: bus, RL output filter (low-voltage side), controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverterSpec {
    pub bus: usize,
    /// Filter resistance, ohms (LV side).
    pub r_filter_ohm: f64,
    /// Filter inductance, henries (LV side).
    pub l_filter_h: f64,
    pub control: ControlSpec,
}

impl InverterSpec {
    pub fn is_grid_forming(&self) -> bool {
        matches!(self.control, ControlSpec::GridForming(_))
    }

    pub fn i_max(&self) -> f64 {
        match &self.control {
            ControlSpec::GridForming(p) => p.i_max,
            ControlSpec::GridFollowing(p) => p.i_max,
        }
    }
}

/// Full system configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicrogridConfig {
    pub network: NetworkDescription,
    pub inverters: Vec<InverterSpec>,
    /// Bus carrying the protection relay.
    pub relay_bus: usize,
    #[serde(default)]
    pub sim: SimParams,
}

impl Default for MicrogridConfig {
    fn default() -> Self {
        let bases = SystemBases {
            s_va: 1.5e6,
            v_lv: 480.0,
            v_mv: 12_470.0,
        };
        let network = NetworkDescription {
            buses: vec![1, 2, 3, 4],
            lines: vec![
                LineSpec {
                    from: 1,
                    to: 2,
                    r_ohm: 1.4,
                    x_ohm: 2.0,
                },
                LineSpec {
                    from: 2,
                    to: 3,
                    r_ohm: 2.2,
                    x_ohm: 3.16,
                },
                LineSpec {
                    from: 3,
                    to: 4,
                    r_ohm: 0.6,
                    x_ohm: 3.16,
                },
            ],
            transformers: (1..=4)
                .map(|bus| TransformerSpec {
                    bus,
                    ratio: (480.0, 12_470.0),
                    r_pu: 0.002,
                    x_pu: 0.05,
                })
                .collect(),
            loads: vec![LoadSpec {
                bus: 3,
                p_pu: 0.35,
                q_pu: 0.035,
            }],
            bases,
        };
        let inverter = |bus: usize, forming: bool| InverterSpec {
            bus,
            r_filter_ohm: 1.5e-3,
            l_filter_h: 20e-6,
            control: if forming {
                ControlSpec::GridForming(GfmParams::default())
            } else {
                ControlSpec::GridFollowing(GflParams::default())
            },
        };
        Self {
            network,
            inverters: vec![
                inverter(1, true),
                inverter(2, false),
                inverter(3, true),
                inverter(4, false),
            ],
            relay_bus: 1,
            sim: SimParams::default(),
        }
    }
}

impl MicrogridConfig {
    /// Total per-unit coupling impedance of an inverter: RL filter on the
    /// LV base plus the transformer leakage at its bus.
    pub fn coupling_impedance(&self, spec: &InverterSpec) -> Complex64 {
        let z_lv = self.network.bases.z_base_lv();
        let filter = Complex64::new(spec.r_filter_ohm / z_lv, OMEGA_S * spec.l_filter_h / z_lv);
        let tx = self
            .network
            .transformers
            .iter()
            .find(|t| t.bus == spec.bus)
            .map(|t| Complex64::new(t.r_pu, t.x_pu))
            .unwrap_or_default();
        filter + tx
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.inverters.is_empty() {
            return Err(Error::Config("no inverters configured".into()));
        }
        for inv in &self.inverters {
            self.network.bus_index(inv.bus)?;
            if inv.r_filter_ohm < 0.0 || inv.l_filter_h <= 0.0 {
                return Err(Error::Config(format!(
                    "inverter at bus {} has non-positive filter",
                    inv.bus
                )));
            }
            if inv.i_max() <= 0.0 {
                return Err(Error::Config(format!(
                    "inverter at bus {} has non-positive current limit",
                    inv.bus
                )));
            }
        }
        for tx in &self.network.transformers {
            let (lv, mv) = tx.ratio;
            let (blv, bmv) = (self.network.bases.v_lv, self.network.bases.v_mv);
            if (lv / mv - blv / bmv).abs() > 1e-9 * (blv / bmv) {
                return Err(Error::Config(format!(
                    "transformer at bus {} ratio {}:{} does not match the system bases",
                    tx.bus, lv, mv
                )));
            }
        }
        self.network.bus_index(self.relay_bus)?;
        if self.sim.dt <= 0.0 || self.sim.record_every == 0 {
            return Err(Error::Config("invalid simulation step parameters".into()));
        }
        Ok(())
    }

    /// Replace the P, Q of every load with the given values (scenario
    /// operating-point variation).
    pub fn with_load(&self, p_pu: f64, q_pu: f64) -> Self {
        let mut cfg = self.clone();
        for load in &mut cfg.network.loads {
            load.p_pu = p_pu;
            load.q_pu = q_pu;
        }
        cfg
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let cfg: MicrogridConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_toml(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
