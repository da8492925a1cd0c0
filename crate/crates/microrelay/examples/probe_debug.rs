use microrelay::config::MicrogridConfig;
use microrelay::net::FaultShunt;
use microrelay::phasor::Phase;
use microrelay::sim::{simulate, FaultWindow};

fn main() {
    let cfg = MicrogridConfig::default();
    let w = FaultWindow {
        shunt: FaultShunt {
            bus: 1,
            phases: vec![Phase::A, Phase::B, Phase::C],
            rf_ohm: 0.001,
        },
        t_start: 0.05,
        duration: 0.1,
    };
    let out = simulate(&cfg, Some(&w), 0.5).unwrap();
    println!("converged {} integ {:.3e}", out.diag.converged, out.diag.integ_delta_at_start);
    println!("max resid {:.3e} excess {:.3e}", out.diag.max_kcl_residual, out.diag.max_current_excess);
    println!("relock ok {} max vq {:.5} at t={} ms", out.diag.pll_relock_ok, out.diag.max_vq_after_relock, out.diag.max_vq_at_ms);
    for r in out.records.iter() {
        if r.t_ms % 20 == 0 || (r.t_ms >= 140 && r.t_ms <= 180) {
            let [va, vb, vc] = r.v.magnitudes();
            let [ia, ib, ic] = r.i.magnitudes();
            println!(
                "t={:4} |V|=({:.3},{:.3},{:.3}) |I|=({:.3},{:.3},{:.3}) P={:+.3} Q={:+.3}",
                r.t_ms, va, vb, vc, ia, ib, ic, r.p, r.q
            );
        }
    }
}
