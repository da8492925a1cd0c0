//! Scenario grid enumeration and batch simulation.
//!
//! The default grid is the full cartesian product of 7 ground-fault types ×
//! 5 fault resistances × 4 buses × 3 durations = 420 cases, every fault
//! starting at t = 0.05 s in a 1 s run. Per-scenario load operating points
//! are drawn reproducibly from a master seed; batches may run in parallel
//! and always produce results ordered by scenario index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::MicrogridConfig;
use crate::error::{Error, Result};
use crate::net::FaultShunt;
use crate::phasor::Phase;
use crate::sim::{simulate, FaultWindow, RelayRecord, RunDiagnostics};

/// Ground-fault type, numbered 0–7: 0 none, 1 AG, 2 BG, 3 CG, 4 ABG,
/// 5 ACG, 6 BCG, 7 ABCG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum FaultType {
    None,
    Ag,
    Bg,
    Cg,
    Abg,
    Acg,
    Bcg,
    Abcg,
}

impl FaultType {
    pub const FAULTED: [FaultType; 7] = [
        FaultType::Ag,
        FaultType::Bg,
        FaultType::Cg,
        FaultType::Abg,
        FaultType::Acg,
        FaultType::Bcg,
        FaultType::Abcg,
    ];

    pub fn code(self) -> u8 {
        match self {
            FaultType::None => 0,
            FaultType::Ag => 1,
            FaultType::Bg => 2,
            FaultType::Cg => 3,
            FaultType::Abg => 4,
            FaultType::Acg => 5,
            FaultType::Bcg => 6,
            FaultType::Abcg => 7,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => FaultType::None,
            1 => FaultType::Ag,
            2 => FaultType::Bg,
            3 => FaultType::Cg,
            4 => FaultType::Abg,
            5 => FaultType::Acg,
            6 => FaultType::Bcg,
            7 => FaultType::Abcg,
            _ => return Err(Error::Argument(format!("invalid fault type code {code}"))),
        })
    }

    pub fn phases(self) -> &'static [Phase] {
        match self {
            FaultType::None => &[],
            FaultType::Ag => &[Phase::A],
            FaultType::Bg => &[Phase::B],
            FaultType::Cg => &[Phase::C],
            FaultType::Abg => &[Phase::A, Phase::B],
            FaultType::Acg => &[Phase::A, Phase::C],
            FaultType::Bcg => &[Phase::B, Phase::C],
            FaultType::Abcg => &[Phase::A, Phase::B, Phase::C],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FaultType::None => "NONE",
            FaultType::Ag => "AG",
            FaultType::Bg => "BG",
            FaultType::Cg => "CG",
            FaultType::Abg => "ABG",
            FaultType::Acg => "ACG",
            FaultType::Bcg => "BCG",
            FaultType::Abcg => "ABCG",
        }
    }
}

impl std::str::FromStr for FaultType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up = s.to_ascii_uppercase();
        for t in [FaultType::None]
            .into_iter()
            .chain(FaultType::FAULTED.into_iter())
        {
            if t.name() == up {
                return Ok(t);
            }
        }
        if let Ok(code) = up.parse::<u8>() {
            return FaultType::from_code(code);
        }
        Err(Error::Argument(format!("unknown fault type '{s}'")))
    }
}

impl TryFrom<u8> for FaultType {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        FaultType::from_code(v)
    }
}

impl From<FaultType> for u8 {
    fn from(t: FaultType) -> u8 {
        t.code()
    }
}

/// One simulation case: fault placement plus the load operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultScenario {
    /// Position in the grid enumeration (also the dataset scenario id).
    pub index: u32,
    pub fault_type: FaultType,
    pub bus: usize,
    pub rf_ohm: f64,
    pub t_start: f64,
    pub duration: f64,
    pub sim_length: f64,
    pub load_p: f64,
    pub load_q: f64,
    pub seed: u64,
}

impl FaultScenario {
    pub fn fault_window(&self) -> Option<FaultWindow> {
        if self.fault_type == FaultType::None {
            return None;
        }
        Some(FaultWindow {
            shunt: FaultShunt {
                bus: self.bus,
                phases: self.fault_type.phases().to_vec(),
                rf_ohm: self.rf_ohm,
            },
            t_start: self.t_start,
            duration: self.duration,
        })
    }

    /// Fault window in whole milliseconds, `[start, end)`.
    pub fn window_ms(&self) -> (u32, u32) {
        let start = (self.t_start * 1e3).round() as u32;
        let end = ((self.t_start + self.duration) * 1e3).round() as u32;
        (start, end)
    }
}

/// The cartesian scenario grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGrid {
    pub types: Vec<FaultType>,
    pub resistances_ohm: Vec<f64>,
    pub buses: Vec<usize>,
    pub durations_s: Vec<f64>,
    pub t_start: f64,
    pub sim_length: f64,
}

impl Default for ScenarioGrid {
    fn default() -> Self {
        Self {
            types: FaultType::FAULTED.to_vec(),
            resistances_ohm: vec![100.0, 10.0, 1.0, 0.1, 0.001],
            buses: vec![1, 2, 3, 4],
            durations_s: vec![0.05, 0.1, 0.2],
            t_start: 0.05,
            sim_length: 1.0,
        }
    }
}

impl ScenarioGrid {
    pub fn len(&self) -> usize {
        self.types.len() * self.resistances_ohm.len() * self.buses.len() * self.durations_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: 0,
            msg: e.to_string(),
        })
    }
}

/// How per-scenario load operating points are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LoadPolicy {
    /// Seeded uniform draw per scenario from the given ranges.
    Uniform {
        p_min: f64,
        p_max: f64,
        q_min: f64,
        q_max: f64,
    },
    /// The same fixed operating point for every scenario.
    Fixed { p: f64, q: f64 },
}

impl Default for LoadPolicy {
    fn default() -> Self {
        LoadPolicy::Uniform {
            p_min: 0.1,
            p_max: 0.6,
            q_min: 0.01,
            q_max: 0.06,
        }
    }
}

impl LoadPolicy {
    pub fn fixed_midpoint() -> Self {
        LoadPolicy::Fixed { p: 0.35, q: 0.035 }
    }
}

/// Per-scenario seed derived from the master seed and the scenario index
/// (splitmix-style mixing, independent of enumeration internals).
pub fn scenario_seed(master_seed: u64, index: u32) -> u64 {
    let mut z = master_seed
        .wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Enumerate the grid in (type, resistance, bus, duration) order, drawing
/// each scenario's load from the policy with its derived seed.
pub fn enumerate_scenarios(
    grid: &ScenarioGrid,
    policy: &LoadPolicy,
    master_seed: u64,
) -> Result<Vec<FaultScenario>> {
    if grid.types.is_empty()
        || grid.resistances_ohm.is_empty()
        || grid.buses.is_empty()
        || grid.durations_s.is_empty()
    {
        return Err(Error::Config("scenario grid has an empty dimension".into()));
    }
    for &rf in &grid.resistances_ohm {
        if rf <= 0.0 {
            return Err(Error::Config(format!("fault resistance {rf} must be positive")));
        }
    }
    let mut out = Vec::with_capacity(grid.len());
    let mut index: u32 = 0;
    for &fault_type in &grid.types {
        for &rf_ohm in &grid.resistances_ohm {
            for &bus in &grid.buses {
                for &duration in &grid.durations_s {
                    let seed = scenario_seed(master_seed, index);
                    let (load_p, load_q) = match *policy {
                        LoadPolicy::Fixed { p, q } => (p, q),
                        LoadPolicy::Uniform {
                            p_min,
                            p_max,
                            q_min,
                            q_max,
                        } => {
                            let mut rng = ChaCha8Rng::seed_from_u64(seed);
                            (
                                rng.random_range(p_min..=p_max),
                                rng.random_range(q_min..=q_max),
                            )
                        }
                    };
                    out.push(FaultScenario {
                        index,
                        fault_type,
                        bus,
                        rf_ohm,
                        t_start: grid.t_start,
                        duration,
                        sim_length: grid.sim_length,
                        load_p,
                        load_q,
                        seed,
                    });
                    index += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Raw output of one simulated scenario.
#[derive(Debug, Clone)]
pub struct RawRun {
    pub scenario: FaultScenario,
    pub records: Vec<RelayRecord>,
    pub diag: RunDiagnostics,
    /// Batch config hash; empty for standalone runs.
    pub provenance: String,
}

/// Simulate one scenario against the given system configuration.
pub fn run_scenario(cfg: &MicrogridConfig, scenario: &FaultScenario) -> Result<RawRun> {
    let run_cfg = cfg.with_load(scenario.load_p, scenario.load_q);
    let window = scenario.fault_window();
    let out = simulate(&run_cfg, window.as_ref(), scenario.sim_length)?;
    Ok(RawRun {
        scenario: scenario.clone(),
        records: out.records,
        diag: out.diag,
        provenance: String::new(),
    })
}

/// A run that did not complete cleanly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailedRun {
    pub index: u32,
    pub t_ms: Option<u32>,
    pub reason: String,
}

/// Reproducibility record for a batch: what was run and what failed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchManifest {
    pub config_hash: String,
    pub master_seed: u64,
    pub scenario_count: usize,
    pub succeeded: usize,
    pub load_policy: LoadPolicy,
    pub grid: ScenarioGrid,
    pub failed: Vec<FailedRun>,
}

impl BatchManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: 0,
            msg: e.to_string(),
        })
    }

    /// Hash of the serialized manifest.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex::encode(h.finalize())
}

/// Hash of every input that determines a batch: system config, grid,
/// load policy, and master seed.
pub fn batch_config_hash(
    cfg: &MicrogridConfig,
    grid: &ScenarioGrid,
    policy: &LoadPolicy,
    master_seed: u64,
) -> String {
    #[derive(Serialize)]
    struct Inputs<'a> {
        cfg: &'a MicrogridConfig,
        grid: &'a ScenarioGrid,
        policy: &'a LoadPolicy,
        master_seed: u64,
    }
    let json = serde_json::to_string(&Inputs {
        cfg,
        grid,
        policy,
        master_seed,
    })
    .expect("inputs serialize");
    sha256_hex(json.as_bytes())
}

/// Fraction of failed runs above which a batch is rejected outright.
pub const BATCH_FAILURE_LIMIT: f64 = 0.05;

/// Simulate a list of scenarios, optionally in parallel. Results are
/// ordered by scenario index regardless of the execution interleaving;
/// failed runs are excluded from the returned list and recorded in the
/// manifest. `parallelism` 0 uses all available cores.
pub fn run_batch(
    cfg: &MicrogridConfig,
    scenarios: &[FaultScenario],
    parallelism: usize,
    config_hash: &str,
    master_seed: u64,
    grid: &ScenarioGrid,
    policy: &LoadPolicy,
) -> Result<(Vec<RawRun>, BatchManifest)> {
    use rayon::prelude::*;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<RawRun>> = pool.install(|| {
        scenarios
            .par_iter()
            .map(|s| run_scenario(cfg, s))
            .collect()
    });

    let mut runs = Vec::with_capacity(results.len());
    let mut failed = Vec::new();
    for (s, res) in scenarios.iter().zip(results) {
        match res {
            Ok(mut run) => {
                if let Some(t_ms) = run.diag.failed_at_ms {
                    failed.push(FailedRun {
                        index: s.index,
                        t_ms: Some(t_ms),
                        reason: run
                            .diag
                            .failure_reason
                            .clone()
                            .unwrap_or_else(|| "diverged".into()),
                    });
                } else {
                    run.provenance = config_hash.to_string();
                    runs.push(run);
                }
            }
            Err(e) => failed.push(FailedRun {
                index: s.index,
                t_ms: None,
                reason: e.to_string(),
            }),
        }
    }

    let manifest = BatchManifest {
        config_hash: config_hash.to_string(),
        master_seed,
        scenario_count: scenarios.len(),
        succeeded: runs.len(),
        load_policy: *policy,
        grid: grid.clone(),
        failed,
    };
    if !scenarios.is_empty() {
        let failure_rate = manifest.failed.len() as f64 / scenarios.len() as f64;
        if failure_rate > BATCH_FAILURE_LIMIT {
            return Err(Error::Simulation {
                t_ms: 0,
                reason: format!(
                    "{} of {} runs failed (limit {:.0}%)",
                    manifest.failed.len(),
                    scenarios.len(),
                    BATCH_FAILURE_LIMIT * 100.0
                ),
            });
        }
    }
    Ok((runs, manifest))
}

/// Enumerate and run a whole grid in one call.
pub fn run_grid(
    cfg: &MicrogridConfig,
    grid: &ScenarioGrid,
    policy: &LoadPolicy,
    master_seed: u64,
    parallelism: usize,
) -> Result<(Vec<RawRun>, BatchManifest)> {
    let scenarios = enumerate_scenarios(grid, policy, master_seed)?;
    let hash = batch_config_hash(cfg, grid, policy, master_seed);
    run_batch(cfg, &scenarios, parallelism, &hash, master_seed, grid, policy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_enumerates_420() {
        let grid = ScenarioGrid::default();
        assert_eq!(grid.len(), 420);
        let scenarios = enumerate_scenarios(&grid, &LoadPolicy::default(), 7).unwrap();
        assert_eq!(scenarios.len(), 420);
        // Deterministic ordering: type, resistance, bus, duration.
        assert_eq!(scenarios[0].fault_type, FaultType::Ag);
        assert_eq!(scenarios[0].rf_ohm, 100.0);
        assert_eq!(scenarios[0].bus, 1);
        assert_eq!(scenarios[0].duration, 0.05);
        assert_eq!(scenarios[1].duration, 0.1);
        assert_eq!(scenarios[419].fault_type, FaultType::Abcg);
        assert_eq!(scenarios[419].rf_ohm, 0.001);
        assert_eq!(scenarios[419].bus, 4);
        assert_eq!(scenarios[419].duration, 0.2);
        for s in &scenarios {
            assert!(s.load_p >= 0.1 && s.load_p <= 0.6);
            assert!(s.load_q >= 0.01 && s.load_q <= 0.06);
        }
    }

    #[test]
    fn single_entry_grid_enumerates_one() {
        let grid = ScenarioGrid {
            types: vec![FaultType::Ag],
            resistances_ohm: vec![1.0],
            buses: vec![1],
            durations_s: vec![0.1],
            ..ScenarioGrid::default()
        };
        let s = enumerate_scenarios(&grid, &LoadPolicy::default(), 0).unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn enumeration_is_reproducible() {
        let grid = ScenarioGrid::default();
        let a = enumerate_scenarios(&grid, &LoadPolicy::default(), 42).unwrap();
        let b = enumerate_scenarios(&grid, &LoadPolicy::default(), 42).unwrap();
        assert_eq!(a, b);
        let c = enumerate_scenarios(&grid, &LoadPolicy::default(), 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_dimension_rejected() {
        let grid = ScenarioGrid {
            buses: vec![],
            ..ScenarioGrid::default()
        };
        assert!(matches!(
            enumerate_scenarios(&grid, &LoadPolicy::default(), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn fault_type_round_trips() {
        for code in 0..=7u8 {
            let t = FaultType::from_code(code).unwrap();
            assert_eq!(t.code(), code);
            assert_eq!(t.name().parse::<FaultType>().unwrap(), t);
        }
        assert!(FaultType::from_code(8).is_err());
        assert_eq!(FaultType::Acg.phases(), &[Phase::A, Phase::C]);
    }

    #[test]
    fn window_ms_matches_start_and_duration() {
        let grid = ScenarioGrid::default();
        let s = &enumerate_scenarios(&grid, &LoadPolicy::fixed_midpoint(), 0).unwrap()[0];
        assert_eq!(s.window_ms(), (50, 100));
    }

    #[test]
    fn batch_of_zero_scenarios_succeeds_empty() {
        let cfg = MicrogridConfig::default();
        let grid = ScenarioGrid::default();
        let policy = LoadPolicy::default();
        let (runs, manifest) =
            run_batch(&cfg, &[], 1, "none", 0, &grid, &policy).unwrap();
        assert!(runs.is_empty());
        assert_eq!(manifest.scenario_count, 0);
        assert!(manifest.failed.is_empty());
    }

    #[test]
    fn untrained_resistance_scenario_runs() {
        let cfg = MicrogridConfig::default();
        let scenario = FaultScenario {
            index: 0,
            fault_type: FaultType::Abcg,
            bus: 3,
            rf_ohm: 40.0,
            t_start: 0.05,
            duration: 0.15,
            sim_length: 0.3,
            load_p: 0.35,
            load_q: 0.035,
            seed: 0,
        };
        let run = run_scenario(&cfg, &scenario).unwrap();
        assert!(run.diag.ok());
        assert_eq!(run.records.len(), 300);
    }

    #[test]
    fn bolted_ag_collapses_only_phase_a_at_relay() {
        let cfg = MicrogridConfig::default();
        let scenario = FaultScenario {
            index: 0,
            fault_type: FaultType::Ag,
            bus: 1,
            rf_ohm: 0.001,
            t_start: 0.05,
            duration: 0.1,
            sim_length: 0.2,
            load_p: 0.35,
            load_q: 0.035,
            seed: 0,
        };
        let run = run_scenario(&cfg, &scenario).unwrap();
        let during = &run.records[100];
        let [va, vb, vc] = during.v.magnitudes();
        assert!(va < 0.1, "phase-a RMS should collapse, got {va}");
        assert!(vb > 0.8 && vc > 0.8, "healthy phases near nominal: {vb}, {vc}");
        let before = &run.records[49];
        assert!(before.v.magnitudes().iter().all(|m| *m > 0.95));
    }

    #[test]
    fn parallel_and_serial_batches_are_identical() {
        let cfg = MicrogridConfig::default();
        let grid = ScenarioGrid {
            types: vec![FaultType::Ag, FaultType::Abcg],
            resistances_ohm: vec![1.0, 0.001],
            buses: vec![1, 3],
            durations_s: vec![0.05],
            t_start: 0.05,
            sim_length: 0.2,
        };
        let policy = LoadPolicy::default();
        let (serial, m1) = run_grid(&cfg, &grid, &policy, 11, 1).unwrap();
        let (parallel, m2) = run_grid(&cfg, &grid, &policy, 11, 4).unwrap();
        assert_eq!(m1.hash(), m2.hash());
        assert_eq!(serial.len(), parallel.len());
        for (a, b) in serial.iter().zip(parallel.iter()) {
            assert_eq!(a.scenario, b.scenario);
            assert_eq!(a.records.len(), b.records.len());
            for (ra, rb) in a.records.iter().zip(b.records.iter()) {
                assert_eq!(ra.t_ms, rb.t_ms);
                assert_eq!(ra.v, rb.v);
                assert_eq!(ra.i, rb.i);
                assert!(ra.p == rb.p && ra.q == rb.q);
            }
        }
    }
}
