use std::path::Path;

use anyhow::{bail, Context, Result};
use pehsim::design::{design_report, DesignReport};
use pehsim::fit::{fit_compact_model, Measurement};
use pehsim::model::RawCompactModel;
use pehsim::optimize::{
    bandwidth_3db, default_grid, frequency_sweep, linear_grid, optimal_v_rect, successful_points, BandwidthReport,
};
use pehsim::transient::simulate_dcrs;
use serde::{Deserialize, Serialize};

use crate::config::{GridSpec, RunConfig};
use crate::output::{Format, Provenance, Sink, TOOL};
use crate::{NumericalError, UsageError};

fn provenance<'a>(command: &'a str, cfg: &'a RunConfig) -> Provenance<'a> {
    Provenance {
        tool: TOOL,
        command,
        config: cfg,
    }
}

#[derive(Serialize)]
struct QuantityRow {
    quantity: &'static str,
    value: Option<f64>,
    unit: &'static str,
}

#[derive(Serialize)]
struct PhaseSample {
    frequency_hz: f64,
    bf_phase_radians: f64,
    thevenin_resistance_ohms: f64,
    thevenin_reactance_ohms: f64,
}

#[derive(Serialize)]
struct AnalyzeReport {
    f_sc_hz: f64,
    f_zr1_hz: Option<f64>,
    f_zr2_hz: Option<f64>,
    f_oc_hz: f64,
    kappa_e2: f64,
    r_ml_ohms: Option<f64>,
    q_ml: f64,
    optimum_power_watts: f64,
    phase_samples: Vec<PhaseSample>,
}

pub fn analyze(cfg: &RunConfig, format: Format, sink: &Sink) -> Result<()> {
    let cm = cfg.compact_model();
    let f_sc = cm.short_circuit_frequency();
    let f_oc = cm.open_circuit_frequency();
    // Weakly coupled or heavily damped devices have no zero-reactance points; that is reported, not fatal.
    let zr = cm.zero_reactance_frequencies().ok();
    let r_ml = match zr {
        Some((f1, _)) => Some(cm.thevenin_impedance(f1)?.re),
        None => None,
    };
    let span = (f_oc - f_sc).max(f_sc / cm.q_ml());
    let (lo, hi) = ((f_sc - 2.0 * span).max(f_sc * 0.5), f_oc + 2.0 * span);
    let mut phase_samples = Vec::new();
    for k in 0..=40 {
        let f = lo + (hi - lo) * k as f64 / 40.0;
        let z = cm.thevenin_impedance(f)?;
        phase_samples.push(PhaseSample {
            frequency_hz: f,
            bf_phase_radians: cm.bf_phase(f),
            thevenin_resistance_ohms: z.re,
            thevenin_reactance_ohms: z.im,
        });
    }
    let report = AnalyzeReport {
        f_sc_hz: f_sc,
        f_zr1_hz: zr.map(|z| z.0),
        f_zr2_hz: zr.map(|z| z.1),
        f_oc_hz: f_oc,
        kappa_e2: cm.coupling_coefficient(),
        r_ml_ohms: r_ml,
        q_ml: cm.q_ml(),
        optimum_power_watts: cm.optimum_power(&cfg.excitation(f_sc)?),
        phase_samples,
    };
    let prov = provenance("analyze", cfg);
    match format {
        Format::Json => sink.write_json(&prov, &report),
        Format::Csv => {
            let rows = [
                QuantityRow { quantity: "f_sc", value: Some(report.f_sc_hz), unit: "hz" },
                QuantityRow { quantity: "f_zr1", value: report.f_zr1_hz, unit: "hz" },
                QuantityRow { quantity: "f_zr2", value: report.f_zr2_hz, unit: "hz" },
                QuantityRow { quantity: "f_oc", value: Some(report.f_oc_hz), unit: "hz" },
                QuantityRow { quantity: "kappa_e2", value: Some(report.kappa_e2), unit: "1" },
                QuantityRow { quantity: "r_ml", value: report.r_ml_ohms, unit: "ohms" },
                QuantityRow { quantity: "q_ml", value: Some(report.q_ml), unit: "1" },
                QuantityRow { quantity: "optimum_power", value: Some(report.optimum_power_watts), unit: "watts" },
            ];
            sink.write_csv(&prov, &rows)
        }
    }
}

#[derive(Serialize)]
struct SweepRow {
    frequency_hz: f64,
    v_rect_volts: Option<f64>,
    power_watts: Option<f64>,
    normalized_power: Option<f64>,
    v_bf_volts: Option<f64>,
    status: String,
}

#[derive(Serialize)]
struct BandwidthDoc<'a> {
    bandwidth: Option<&'a BandwidthReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bandwidth_error: Option<String>,
}

#[derive(Serialize)]
struct SweepDoc<'a> {
    points: &'a [SweepRow],
    #[serde(flatten)]
    bandwidth: BandwidthDoc<'a>,
}

fn grid_points(cfg: &RunConfig) -> Result<Vec<f64>> {
    Ok(match cfg.grid {
        Some(GridSpec { f_lo, f_hi, step }) => linear_grid(f_lo, f_hi, step)?,
        None => default_grid(&cfg.compact_model()),
    })
}

/// Sibling path for the bandwidth report of a CSV sweep: `x.csv` → `x.bandwidth.json`.
pub fn bandwidth_path(out: &Path) -> std::path::PathBuf {
    out.with_extension("bandwidth.json")
}

pub fn sweep(cfg: &RunConfig, format: Format, sink: &Sink) -> Result<()> {
    let cm = cfg.compact_model();
    let grid = grid_points(cfg)?;
    if grid.is_empty() {
        bail!(UsageError("sweep grid is empty".into()));
    }
    let exc = cfg.excitation(cm.short_circuit_frequency())?;
    let records = frequency_sweep(&cm, &exc, &cfg.rectifier(), &cfg.bias_flip(), &grid)?;
    let rows: Vec<SweepRow> = records
        .iter()
        .map(|r| match &r.outcome {
            Ok(p) => SweepRow {
                frequency_hz: r.frequency,
                v_rect_volts: Some(p.best_v_rect),
                power_watts: Some(p.best_power),
                normalized_power: Some(p.normalized_power),
                v_bf_volts: Some(p.v_bf),
                status: "ok".into(),
            },
            Err(e) => SweepRow {
                frequency_hz: r.frequency,
                v_rect_volts: None,
                power_watts: None,
                normalized_power: None,
                v_bf_volts: None,
                status: e.to_string(),
            },
        })
        .collect();
    let points = successful_points(&records);
    if points.is_empty() {
        bail!(NumericalError("every sweep point failed".into()));
    }
    let bw = bandwidth_3db(&points, cm.short_circuit_frequency());
    let doc = BandwidthDoc {
        bandwidth: bw.as_ref().ok(),
        bandwidth_error: bw.as_ref().err().map(|e| e.to_string()),
    };
    match &bw {
        Ok(b) => eprintln!(
            "peak {:.2} Hz, 3-dB band {:.2}..{:.2} Hz, bandwidth {:.2} Hz ({:.4} of f_sc){}",
            b.f_peak,
            b.f_lo,
            b.f_hi,
            b.bw_3db,
            b.bw_fraction,
            if b.is_one_sided() { ", one-sided" } else { "" }
        ),
        Err(e) => eprintln!("warning: no bandwidth: {e}"),
    }
    let failed = rows.len() - points.len();
    if failed > 0 {
        eprintln!("warning: {failed} of {} sweep points failed (see status column)", rows.len());
    }
    let prov = provenance("sweep", cfg);
    match format {
        Format::Json => sink.write_json(&prov, &SweepDoc { points: &rows, bandwidth: doc }),
        Format::Csv => {
            sink.write_csv(&prov, &rows)?;
            if let Some(out) = sink.path() {
                Sink::new(Some(&bandwidth_path(out))).write_json(&prov, &doc)?;
            }
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct WaveRow {
    t_seconds: f64,
    v_out_volts: f64,
    i_s_amperes: f64,
    flip_event_flag: u8,
}

#[derive(Serialize)]
struct WaveDoc<'a> {
    frequency_hz: f64,
    v_rect_volts: f64,
    power_watts: f64,
    normalized_power: f64,
    v_bf_volts: f64,
    v_peak_volts: f64,
    flip_fraction: f64,
    samples: &'a [WaveRow],
}

pub fn waveform(cfg: &RunConfig, format: Format, sink: &Sink) -> Result<()> {
    let cm = cfg.compact_model();
    let f = cfg.waveform_frequency.expect("resolved for waveform");
    let exc = cfg.excitation(f)?;
    let bf = cfg.bias_flip();
    let bf = if bf.enabled { bf.with_phase(cm.bf_phase(f)) } else { bf };
    let rect = cfg.rectifier();
    let opt = optimal_v_rect(&cm, &exc, &rect, &bf)?;
    let r = simulate_dcrs(&cm, &exc, &rect, &bf, opt.v_rect)?;
    let rows: Vec<WaveRow> = r
        .waveform
        .iter()
        .map(|s| WaveRow {
            t_seconds: s.t,
            v_out_volts: s.v_out,
            i_s_amperes: s.i_s,
            flip_event_flag: s.flip as u8,
        })
        .collect();
    eprintln!(
        "v_rect {:.4} V, power {:.4e} W ({:.4} of optimum), pre-flip |v_out| {:.3} of peak",
        opt.v_rect,
        r.avg_power,
        r.avg_power / cm.optimum_power(&exc),
        r.flip_fraction()
    );
    let prov = provenance("waveform", cfg);
    match format {
        Format::Csv => sink.write_csv(&prov, &rows),
        Format::Json => sink.write_json(
            &prov,
            &WaveDoc {
                frequency_hz: f,
                v_rect_volts: opt.v_rect,
                power_watts: r.avg_power,
                normalized_power: r.avg_power / cm.optimum_power(&exc),
                v_bf_volts: r.v_bf,
                v_peak_volts: r.v_peak,
                flip_fraction: r.flip_fraction(),
                samples: &rows,
            },
        ),
    }
}

#[derive(Serialize)]
struct DesignRow<'a> {
    stack: &'a str,
    k_pe_newtons_per_meter: f64,
    k_non_pe_newtons_per_meter: f64,
    k_total_newtons_per_meter: f64,
    non_pe_fraction: f64,
    b_pe_meters: f64,
    a_coupling_newtons_per_volt: f64,
    c_p_farads: f64,
    kappa_e2: f64,
}

impl<'a> DesignRow<'a> {
    fn new(stack: &'a str, r: &DesignReport) -> Self {
        Self {
            stack,
            k_pe_newtons_per_meter: r.k_pe,
            k_non_pe_newtons_per_meter: r.k_non_pe,
            k_total_newtons_per_meter: r.k_total,
            non_pe_fraction: r.non_pe_fraction,
            b_pe_meters: r.b_pe,
            a_coupling_newtons_per_volt: r.a_coupling,
            c_p_farads: r.c_p,
            kappa_e2: r.kappa_e2,
        }
    }
}

#[derive(Serialize)]
struct Comparison {
    kappa_e2_ratio: f64,
    non_pe_fraction_ratio: f64,
}

#[derive(Serialize)]
struct DesignDoc<'a> {
    report: &'a DesignReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    compare: Option<&'a DesignReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    comparison: Option<Comparison>,
}

pub fn design(cfg: &RunConfig, format: Format, sink: &Sink) -> Result<()> {
    let base = cfg.design_stack.as_ref().expect("resolved for design");
    let report = design_report(&base.stack);
    let compare = cfg.design_compare.as_ref().map(|s| design_report(&s.stack));
    let comparison = compare.as_ref().map(|c| Comparison {
        kappa_e2_ratio: c.kappa_e2 / report.kappa_e2,
        non_pe_fraction_ratio: c.non_pe_fraction / report.non_pe_fraction,
    });
    for w in report.warnings.iter().chain(compare.iter().flat_map(|c| c.warnings.iter())) {
        eprintln!("warning: {w:?}");
    }
    if let Some(c) = &comparison {
        eprintln!(
            "kappa_e2 ratio {:.3}, non-PE fraction ratio {:.3}",
            c.kappa_e2_ratio, c.non_pe_fraction_ratio
        );
    }
    let prov = provenance("design", cfg);
    match format {
        Format::Json => sink.write_json(
            &prov,
            &DesignDoc {
                report: &report,
                compare: compare.as_ref(),
                comparison,
            },
        ),
        Format::Csv => {
            let mut rows = vec![DesignRow::new(&base.origin, &report)];
            if let (Some(s), Some(c)) = (&cfg.design_compare, &compare) {
                rows.push(DesignRow::new(&s.origin, c));
            }
            sink.write_csv(&prov, &rows)
        }
    }
}

#[derive(Debug, Deserialize)]
struct MeasurementRow {
    frequency_hz: f64,
    load_ohms: f64,
    voltage_volts: f64,
}

pub fn read_measurements(path: &Path) -> Result<Vec<Measurement>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| UsageError(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<MeasurementRow>().enumerate() {
        let row = row.map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        let m = Measurement::new(row.frequency_hz, row.load_ohms, row.voltage_volts)
            .with_context(|| format!("{}: data row {}", path.display(), i + 1))
            .map_err(|e| UsageError(format!("{e:#}")))?;
        out.push(m);
    }
    Ok(out)
}

#[derive(Serialize)]
struct Derived {
    f_sc_hz: f64,
    f_oc_hz: f64,
    kappa_e2: f64,
    q_ml: f64,
}

#[derive(Serialize)]
struct FitDoc<'a> {
    model: RawCompactModel,
    derived: Derived,
    residual: f64,
    iterations: usize,
    measurements: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    history: Option<&'a [f64]>,
}

pub fn fit(cfg: &RunConfig, format: Format, sink: &Sink, with_history: bool) -> Result<()> {
    if format == Format::Csv {
        bail!(UsageError("fit writes a JSON model file; use --format json".into()));
    }
    let guess = cfg.compact_model();
    let data = read_measurements(cfg.fit_data.as_deref().expect("resolved for fit"))?;
    let exc = cfg.excitation(guess.short_circuit_frequency())?;
    let fit = fit_compact_model(&data, &exc, &guess)?;
    let m = fit.model;
    eprintln!(
        "fit: rms log residual {:.3e} after {} iterations",
        fit.residual, fit.iterations
    );
    sink.write_json(
        &provenance("fit", cfg),
        &FitDoc {
            model: RawCompactModel::from(m),
            derived: Derived {
                f_sc_hz: m.short_circuit_frequency(),
                f_oc_hz: m.open_circuit_frequency(),
                kappa_e2: m.coupling_coefficient(),
                q_ml: m.q_ml(),
            },
            residual: fit.residual,
            iterations: fit.iterations,
            measurements: data.len(),
            history: with_history.then_some(&fit.history[..]),
        },
    )
}
