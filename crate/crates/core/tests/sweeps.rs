use pehsim::optimize::{bandwidth_3db, default_grid, frequency_sweep, linear_grid, successful_points};
use pehsim::reference;
use pehsim::transient::{BiasFlipConfig, RectifierModel};

fn smart_bf() -> BiasFlipConfig {
    BiasFlipConfig::new(0.82, 0.0).unwrap()
}

#[test]
fn grid_order_does_not_matter() {
    let cm = reference::compact_model();
    let exc = reference::excitation(reference::F_SC);
    let grid = linear_grid(660.0, 710.0, 5.0).unwrap();
    let mut reversed = grid.clone();
    reversed.reverse();
    let a = frequency_sweep(&cm, &exc, &RectifierModel::smart(), &smart_bf(), &grid).unwrap();
    let b = frequency_sweep(&cm, &exc, &RectifierModel::smart(), &smart_bf(), &reversed).unwrap();
    assert_eq!(a, b);
}

#[test]
fn refining_the_grid_barely_moves_bandwidth() {
    let cm = reference::compact_model();
    let exc = reference::excitation(reference::F_SC);
    let coarse = default_grid(&cm);
    let fine = linear_grid(coarse[0], *coarse.last().unwrap(), 0.5).unwrap();
    let bw = |g: &[f64]| {
        let recs = frequency_sweep(&cm, &exc, &RectifierModel::smart(), &smart_bf(), g).unwrap();
        bandwidth_3db(&successful_points(&recs), cm.short_circuit_frequency()).unwrap()
    };
    let (a, b) = (bw(&coarse), bw(&fine));
    assert!((a.bw_3db / b.bw_3db - 1.0).abs() < 0.01, "{} vs {}", a.bw_3db, b.bw_3db);
}

#[test]
fn without_bias_flip_weak_coupling_gives_one_peak_at_short_circuit_resonance() {
    // Too weakly coupled for distinct zero-reactance points; f_zr1 collapses onto f_sc.
    let cm = reference::compact_model().with_coupling_scaled(0.3).unwrap();
    let f_sc = cm.short_circuit_frequency();
    let exc = reference::excitation(reference::F_SC);
    let grid = linear_grid(650.0, 700.0, 0.5).unwrap();
    let recs = frequency_sweep(&cm, &exc, &RectifierModel::ideal(), &BiasFlipConfig::disabled(), &grid).unwrap();
    let pts = successful_points(&recs);
    assert_eq!(pts.len(), grid.len());
    let peak = pts.iter().max_by(|a, b| a.best_power.total_cmp(&b.best_power)).unwrap();
    assert!((peak.frequency - f_sc).abs() < 3.0, "peak {} vs f_sc {f_sc}", peak.frequency);
    let local_maxima = pts
        .windows(3)
        .filter(|w| w[1].best_power > w[0].best_power && w[1].best_power > w[2].best_power)
        .count();
    assert_eq!(local_maxima, 1);
    for p in &pts {
        assert!(p.best_v_rect.is_finite() && p.best_v_rect > 0.0);
    }
}

#[test]
fn bias_flip_widens_the_band() {
    let cm = reference::compact_model();
    let exc = reference::excitation(reference::F_SC);
    let grid = default_grid(&cm);
    let bw = |bf: &BiasFlipConfig| {
        let recs = frequency_sweep(&cm, &exc, &RectifierModel::smart(), bf, &grid).unwrap();
        bandwidth_3db(&successful_points(&recs), cm.short_circuit_frequency()).unwrap()
    };
    assert!(bw(&smart_bf()).bw_3db > bw(&BiasFlipConfig::disabled()).bw_3db);
}
