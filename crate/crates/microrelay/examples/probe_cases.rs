use microrelay::cart::{fit, Target, TrainConfig};
use microrelay::config::MicrogridConfig;
use microrelay::features::{assemble_dataset, split_dataset, FeatureSet};
use microrelay::relay::{replay_case, ModelPair};
use microrelay::scenario::{run_grid, FaultScenario, FaultType, LoadPolicy, ScenarioGrid};

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

    let case = |ft: FaultType, bus: usize, rf: f64, dur: f64| FaultScenario {
        index: 1000,
        fault_type: ft,
        bus,
        rf_ohm: rf,
        t_start: 0.05,
        duration: dur,
        sim_length: 1.0,
        load_p: 0.35,
        load_q: 0.035,
        seed: 0,
    };

    for (name, scenario, expect_type) in [
        ("case1 AG@1 0.01ohm 100ms", case(FaultType::Ag, 1, 0.01, 0.1), 1u8),
        ("case2 ACG@2 1ohm 50ms", case(FaultType::Acg, 2, 1.0, 0.05), 5),
        ("case3 ABCG@3 40ohm 150ms", case(FaultType::Abcg, 3, 40.0, 0.15), 7),
    ] {
        let r = replay_case(&cfg, &scenario, &models).unwrap();
        let (start, end) = r.window_ms;
        println!(
            "{name}: inception {:?} clearance {:?} chatter {} misclassified {} of {}",
            r.inception_delay_ms,
            r.clearance_delay_ms,
            r.chatter,
            r.misclassified_type_ms.len(),
            end - start,
        );
        if !r.misclassified_type_ms.is_empty() {
            println!("  bad type at: {:?}", r.misclassified_type_ms);
        }
        // When does the type settle to the expected value for good?
        let mut settle = None;
        for k in (0..r.t_ms.len()).rev() {
            let t = r.t_ms[k];
            if t >= start && t < end {
                if r.pred_type[k] != expect_type {
                    settle = Some(t + 1);
                    break;
                }
            }
        }
        match settle {
            None => println!("  type = {expect_type} for the whole window"),
            Some(t) => println!("  type settles to {expect_type} at {} ms after inception", t.saturating_sub(start)),
        }
        // False detections outside the window?
        let false_pos = r
            .t_ms
            .iter()
            .zip(&r.pred_detect)
            .filter(|(t, &d)| (**t < start || **t >= end + 15) && d == 1)
            .count();
        println!("  false positives outside window(+15ms): {false_pos}");
    }
}
