use num_complex::Complex64;
use pehsim::design::{design_report, Layer, LayerRole, LayerStack, Wiring, FR4, POLYIMIDE, PZT_5H};
use pehsim::fit::{fit_compact_model, predict_voltage, Measurement};
use pehsim::optimize::sweep_point;
use pehsim::reference;
use pehsim::transient::{simulate_dcrs, BiasFlipConfig, RectifierModel};
use pehsim::{CompactModel, Excitation};
use proptest::prelude::*;

fn model_strategy() -> impl Strategy<Value = CompactModel> {
    (300.0..3000.0f64, 1e-3..0.3f64, 5.0..200.0f64, 1e-9..1e-6f64, 0.1..10.0f64).prop_map(
        |(f_sc, kappa2, q, c_p, a)| {
            let c_m = kappa2 * c_p / (a * a);
            CompactModel::from_resonances(f_sc, f_sc * (1.0 + kappa2).sqrt(), q, c_m, c_p).unwrap()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coupling_identity_holds(cm in model_strategy()) {
        let k = cm.coupling_coefficient();
        let (fs, fo) = (cm.short_circuit_frequency(), cm.open_circuit_frequency());
        prop_assert!((k / ((fo * fo - fs * fs) / (fs * fs)) - 1.0).abs() < 1e-12);
        prop_assert!((k / (cm.a() * cm.a() * cm.c_m() / cm.c_p()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_reactance_lies_between_resonances(cm in model_strategy()) {
        if let Ok((f1, f2)) = cm.zero_reactance_frequencies() {
            let (fs, fo) = (cm.short_circuit_frequency(), cm.open_circuit_frequency());
            prop_assert!(fs <= f1 && f1 <= f2 && f2 <= fo, "{fs} {f1} {f2} {fo}");
            for f in [f1, f2] {
                let z = cm.thevenin_impedance(f).unwrap();
                prop_assert!(z.im.abs() < 1e-6 * z.norm(), "residual reactance {} at {f}", z.im);
            }
        }
    }

    #[test]
    fn conjugate_load_delivers_available_power(cm in model_strategy(), x in 0.8..1.25f64) {
        let f = cm.short_circuit_frequency() * x;
        let exc = Excitation::new(reference::ACCEL_1G, f, 1.0).unwrap();
        let z = cm.thevenin_impedance(f).unwrap();
        let v = cm.load_voltage(f, 1.0, z.conj()).unwrap();
        let i = v / z.conj();
        let p = 0.5 * (v * i.conj()).re;
        prop_assert!((p / cm.optimum_power(&exc) - 1.0).abs() < 1e-9);
        // Any other load gets less.
        let off = cm.load_voltage(f, 1.0, z.conj() * Complex64::new(1.3, 0.2)).unwrap();
        let i_off = off / (z.conj() * Complex64::new(1.3, 0.2));
        prop_assert!(0.5 * (off * i_off.conj()).re <= p * (1.0 + 1e-12));
    }
}

fn dcrs_power(f: f64, v: f64, rect: &RectifierModel, gamma: f64) -> f64 {
    let cm = reference::compact_model();
    let bf = BiasFlipConfig::new(gamma, cm.bf_phase(f)).unwrap();
    simulate_dcrs(&cm, &reference::excitation(f), rect, &bf, v).unwrap().avg_power
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn power_falls_with_diode_drop(f in 640.0..730.0f64, v in 0.5..4.0f64, d1 in 0.0..0.8f64, d2 in 0.0..0.8f64) {
        let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
        let p_lo = dcrs_power(f, v, &RectifierModel::diode_bridge(lo).unwrap(), 0.82);
        let p_hi = dcrs_power(f, v, &RectifierModel::diode_bridge(hi).unwrap(), 0.82);
        prop_assert!(p_hi <= p_lo * (1.0 + 1e-6) + 1e-15, "{lo}: {p_lo}, {hi}: {p_hi}");
    }

    #[test]
    fn power_rises_with_flip_ratio(f in 640.0..730.0f64, v in 0.5..4.0f64, g1 in 0.0..1.0f64, g2 in 0.0..1.0f64) {
        let (lo, hi) = if g1 < g2 { (g1, g2) } else { (g2, g1) };
        let p_lo = dcrs_power(f, v, &RectifierModel::ideal(), lo);
        let p_hi = dcrs_power(f, v, &RectifierModel::ideal(), hi);
        prop_assert!(p_hi >= p_lo * (1.0 - 1e-6) - 1e-15, "{lo}: {p_lo}, {hi}: {p_hi}");
    }

    #[test]
    fn cycle_energy_balances(f in 500.0..900.0f64, v in 0.05..8.0f64, gamma in 0.0..1.0f64, drop in 0.0..0.7f64) {
        let cm = reference::compact_model();
        let bf = BiasFlipConfig::new(gamma, cm.bf_phase(f)).unwrap();
        let rect = RectifierModel::diode_bridge(drop).unwrap();
        let r = simulate_dcrs(&cm, &reference::excitation(f), &rect, &bf, v).unwrap();
        prop_assert!(r.energy.relative_imbalance() < 1e-3);
        prop_assert!(r.avg_power >= 0.0);
    }

    #[test]
    fn optimized_power_never_beats_conjugate_match(f in 0.9 * reference::F_SC..1.1 * reference::F_OC) {
        let cm = reference::compact_model();
        let bf = BiasFlipConfig::new(1.0, 0.0).unwrap();
        let p = sweep_point(&cm, &reference::excitation(f), &RectifierModel::ideal(), &bf, f).unwrap();
        prop_assert!(p.normalized_power <= 1.0 + 1e-3, "{} at {f}", p.normalized_power);
        prop_assert!(p.best_v_rect.is_finite() && p.best_v_rect > 0.0);
    }
}

/// Symmetric five-layer stack: skin / piezo / core / piezo / skin.
fn stack(skin: f64, skin_modulus: f64, piezo: f64, core: f64, core_modulus: f64) -> LayerStack {
    let mut skin_m = POLYIMIDE;
    skin_m.youngs_modulus = skin_modulus;
    let mut core_m = FR4;
    core_m.youngs_modulus = core_modulus;
    let s = Layer::passive("skin", skin, skin_m, LayerRole::Structural).unwrap();
    let p = Layer::piezo("pzt", piezo, PZT_5H).unwrap();
    let c = Layer::passive("core", core, core_m, LayerRole::Structural).unwrap();
    LayerStack::new(
        vec![s.clone(), p.clone(), c, p, s],
        20e-3,
        50e-3,
        Wiring::Parallel,
    )
    .unwrap()
}

fn geometry() -> impl Strategy<Value = (f64, f64, f64, f64, f64)> {
    (1e-6..300e-6f64, 1e9..150e9f64, 50e-6..500e-6f64, 1e-6..1e-3f64, 1e9..150e9f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn design_chain_identity((s, es, p, c, ec) in geometry()) {
        let r = design_report(&stack(s, es, p, c, ec));
        let k = r.a_coupling * r.a_coupling / (r.k_total * r.c_p);
        prop_assert!((r.kappa_e2 / k - 1.0).abs() < 1e-12);
        prop_assert!((r.k_total / (r.k_pe + r.k_non_pe) - 1.0).abs() < 1e-12);
        prop_assert!(r.non_pe_fraction > 0.0 && r.non_pe_fraction < 1.0);
    }

    #[test]
    fn stiffer_skin_lowers_coupling((s, es, p, c, ec) in geometry(), factor in 1.01..10.0f64) {
        let soft = design_report(&stack(s, es, p, c, ec));
        let stiff = design_report(&stack(s, es * factor, p, c, ec));
        prop_assert!(stiff.k_non_pe > soft.k_non_pe);
        prop_assert!((stiff.a_coupling / soft.a_coupling - 1.0).abs() < 1e-12);
        prop_assert!(stiff.kappa_e2 < soft.kappa_e2);
    }

    #[test]
    fn softer_core_never_lowers_coupling((s, es, p, c, ec) in geometry(), factor in 0.05..1.0f64) {
        let hard = design_report(&stack(s, es, p, c, ec));
        let soft = design_report(&stack(s, es, p, c, ec * factor));
        prop_assert!(soft.kappa_e2 >= hard.kappa_e2);
    }

    #[test]
    fn coupling_term_tracks_piezo_offset((s, es, p, c, ec) in geometry(), grow in 1.01..3.0f64) {
        // A grows with the piezo offset; at fixed k and C_P that alone raises kappa.
        let thin = design_report(&stack(s, es, p, c, ec));
        let thick = design_report(&stack(s, es, p, c * grow, ec));
        prop_assert!(thick.b_pe > thin.b_pe);
        prop_assert!((thick.a_coupling / thick.b_pe - thin.a_coupling / thin.b_pe).abs()
            < 1e-9 * thin.a_coupling / thin.b_pe);
        let at_fixed_k = thick.a_coupling.powi(2) / (thin.k_total * thin.c_p);
        prop_assert!(at_fixed_k > thin.kappa_e2);
    }

    #[test]
    fn uniform_thickness_scaling_keeps_coupling((s, es, p, c, ec) in geometry(), scale in 0.2..5.0f64) {
        let a = design_report(&stack(s, es, p, c, ec));
        let b = design_report(&stack(s * scale, es, p * scale, c * scale, ec));
        prop_assert!((a.kappa_e2 / b.kappa_e2 - 1.0).abs() < 1e-9);
        prop_assert!((a.non_pe_fraction - b.non_pe_fraction).abs() < 1e-12);
    }
}

fn synthetic(truth: &CompactModel, exc: &Excitation, noise: &[f64]) -> Vec<Measurement> {
    let (fs, fo) = (truth.short_circuit_frequency(), truth.open_circuit_frequency());
    let (lo, hi) = (fs - 4.0 * (fo - fs) - 0.05 * fs, fo + 4.0 * (fo - fs) + 0.05 * fs);
    let mut out = Vec::new();
    let mut k = 0;
    for r in [100.0, 3e3, 100e3] {
        for j in 0..40 {
            let f = lo + (hi - lo) * j as f64 / 39.0;
            let v = predict_voltage(truth, exc, r, f).unwrap();
            let e = noise.get(k % noise.len().max(1)).copied().unwrap_or(0.0);
            out.push(Measurement::new(f, r, v * (1.0 + e)).unwrap());
            k += 1;
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn fit_recovers_noiseless_models(
        kappa2 in 0.01..0.3f64,
        q in 10.0..200.0f64,
        nudge in prop::array::uniform5(0.93..1.07f64),
    ) {
        let c_p = 100e-9;
        let truth = CompactModel::from_resonances(700.0, 700.0 * (1.0 + kappa2).sqrt(), q, kappa2 * c_p, c_p).unwrap();
        let exc = reference::excitation(700.0);
        let guess = CompactModel::new(
            truth.l_m() * nudge[0],
            truth.c_m() * nudge[1],
            truth.r_m() * nudge[2],
            truth.a() * nudge[3],
            truth.c_p() * nudge[4],
        )
        .unwrap();
        let fit = fit_compact_model(&synthetic(&truth, &exc, &[]), &exc, &guess).unwrap();
        for (a, b) in [
            (fit.model.l_m(), truth.l_m()),
            (fit.model.c_m(), truth.c_m()),
            (fit.model.r_m(), truth.r_m()),
            (fit.model.a(), truth.a()),
            (fit.model.c_p(), truth.c_p()),
        ] {
            prop_assert!((a / b - 1.0).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn fit_residual_never_increases(noise in prop::collection::vec(-0.03..0.03f64, 17)) {
        let truth = reference::compact_model();
        let exc = reference::excitation(680.0);
        let guess = truth.with_coupling_scaled(1.1).unwrap();
        let fit = fit_compact_model(&synthetic(&truth, &exc, &noise), &exc, &guess).unwrap();
        prop_assert!(fit.history.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(*fit.history.last().unwrap(), fit.residual);
    }
}
