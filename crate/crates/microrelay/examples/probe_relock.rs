use microrelay::config::MicrogridConfig;
use microrelay::scenario::{enumerate_scenarios, run_scenario, LoadPolicy, ScenarioGrid};

fn main() {
    let cfg = MicrogridConfig::default();
    let grid = ScenarioGrid::default();
    let scenarios = enumerate_scenarios(&grid, &LoadPolicy::default(), 7).unwrap();
    for s in &scenarios {
        let run = run_scenario(&cfg, s).unwrap();
        if !run.diag.pll_relock_ok {
            println!(
                "#{:3} {:5} bus {} rf {:7} dur {:.2} load {:.2}: vq {:.2e} at {} ms (clear at {} ms)",
                s.index,
                s.fault_type.name(),
                s.bus,
                s.rf_ohm,
                s.duration,
                s.load_p,
                run.diag.max_vq_after_relock,
                run.diag.max_vq_at_ms,
                (1000.0 * (s.t_start + s.duration)) as u32,
            );
        }
    }
}
