use microrelay::cart::{fit, Target, TrainConfig};
use microrelay::config::MicrogridConfig;
use microrelay::features::{assemble_dataset, extract_features, split_dataset, FeatureSet};
use microrelay::relay::{replay_case, ModelPair};
use microrelay::scenario::{run_grid, run_scenario, FaultScenario, FaultType, LoadPolicy, ScenarioGrid};

fn main() {
    let cfg = MicrogridConfig::default();
    let grid = ScenarioGrid::default();
    let policy = LoadPolicy::default();
    let (runs, _) = run_grid(&cfg, &grid, &policy, 7, 0).unwrap();
    let full = assemble_dataset(&runs, FeatureSet::IVPQ).unwrap();
    let (train, _) = split_dataset(&full, 0.8, 20, true).unwrap();
    let models = ModelPair {
        feature_set: FeatureSet::IVPQ,
        detect: fit(&train, Target::Detect, &TrainConfig::default()).unwrap(),
        fault_type: fit(&train, Target::Type, &TrainConfig::default()).unwrap(),
    };

    let case3 = FaultScenario {
        index: 1000,
        fault_type: FaultType::Abcg,
        bus: 3,
        rf_ohm: 40.0,
        t_start: 0.05,
        duration: 0.15,
        sim_length: 1.0,
        load_p: 0.35,
        load_q: 0.035,
        seed: 0,
    };
    let r = replay_case(&cfg, &case3, &models).unwrap();
    // What is predicted during the bad stretch?
    let mut counts = [0u32; 8];
    for (k, &t) in r.t_ms.iter().enumerate() {
        if (50..200).contains(&t) && r.pred_type[k] != 7 {
            counts[r.pred_type[k] as usize] += 1;
        }
    }
    println!("wrong-class histogram inside window: {counts:?}");

    // Feature trajectory of case 3 vs the two neighbouring trained runs.
    let show = |label: &str, s: &FaultScenario| {
        let run = run_scenario(&cfg, s).unwrap();
        let samples = extract_features(&run).unwrap();
        println!("--- {label}");
        for t in [55usize, 70, 81, 85, 100, 140, 190] {
            let s = &samples[t];
            println!(
                "t={t:3} I=({:.4},{:.4},{:.4}) V=({:.4},{:.4},{:.4}) P={:+.4} Q={:+.4}",
                s.ia, s.ib, s.ic, s.va, s.vb, s.vc, s.p, s.q
            );
        }
    };
    show("case3 40 ohm", &case3);
    let mut s10 = case3.clone();
    s10.rf_ohm = 10.0;
    show("trained 10 ohm (same bus/type, fixed load)", &s10);
    let mut s100 = case3.clone();
    s100.rf_ohm = 100.0;
    show("trained 100 ohm", &s100);
}
