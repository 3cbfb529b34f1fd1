//! Run configuration: TOML file, command-line overrides and defaults, in that order of precedence.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pehsim::design::{design_report, ppa2014_baseline, ppa2014_redesign, LayerStack};
use pehsim::model::RawCompactModel;
use pehsim::optimize::linear_grid;
use pehsim::reference;
use pehsim::transient::{BiasFlipConfig, RectifierModel, DEFAULT_DIODE_DROP};
use pehsim::{CompactModel, Excitation};
use serde::{Deserialize, Serialize};

use crate::UsageError;

pub const DEFAULT_FLIP_RATIO: f64 = 0.82;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum RectifierKind {
    Ideal,
    Diode,
    Smart,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<ModelSection>,
    pub excitation: Option<ExcitationSection>,
    pub circuit: Option<CircuitSection>,
    pub sweep: Option<SweepSection>,
    pub waveform: Option<WaveformSection>,
    pub design: Option<DesignSection>,
    pub fit: Option<FitSection>,
}

/// Exactly one of the four sources may be given; none means the reference model.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub reference: Option<bool>,
    pub inline: Option<InlineModel>,
    pub fit_file: Option<PathBuf>,
    pub design: Option<DesignModel>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineModel {
    pub l_m: f64,
    pub c_m: f64,
    pub r_m: f64,
    pub a: f64,
    pub c_p: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignModel {
    pub stack: StackRef,
    pub f_sc: f64,
    pub q_ml: f64,
}

/// A layer stack given by file, by preset name, or inline.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackRef {
    pub path: Option<PathBuf>,
    pub preset: Option<String>,
    pub inline: Option<LayerStack>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationSection {
    pub accel_amplitude: Option<f64>,
    pub source_amplitude: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitSection {
    pub rectifier: Option<RectifierKind>,
    pub diode_drop: Option<f64>,
    pub bias_flip: Option<bool>,
    pub flip_ratio: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub grid: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveformSection {
    pub frequency: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    pub stack: Option<StackRef>,
    pub compare: Option<StackRef>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub data: Option<PathBuf>,
}

/// Command-line values that override the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub rectifier: Option<RectifierKind>,
    pub diode_drop: Option<f64>,
    pub bias_flip: Option<bool>,
    pub flip_ratio: Option<f64>,
    pub grid: Option<String>,
    pub frequency: Option<f64>,
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSource {
    Reference,
    Inline,
    FitFile { path: PathBuf },
    Design { stack: StackSummary, f_sc: f64, q_ml: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct StackSummary {
    pub origin: String,
    pub stack: LayerStack,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ExcitationSpec {
    pub accel_amplitude: f64,
    pub source_amplitude: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CircuitSpec {
    pub rectifier: RectifierKind,
    pub diode_drop: f64,
    pub bias_flip: bool,
    pub flip_ratio: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GridSpec {
    pub f_lo: f64,
    pub f_hi: f64,
    pub step: f64,
}

/// Fully resolved configuration; serialized into every output as provenance.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub config_file: Option<PathBuf>,
    pub model_source: ModelSource,
    pub model: InlineModel,
    pub excitation: ExcitationSpec,
    pub circuit: CircuitSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub waveform_frequency: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design_stack: Option<StackSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design_compare: Option<StackSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_data: Option<PathBuf>,
}

impl RunConfig {
    pub fn compact_model(&self) -> CompactModel {
        let m = self.model;
        CompactModel::new(m.l_m, m.c_m, m.r_m, m.a, m.c_p).expect("validated during resolution")
    }

    /// Excitation template; individual commands retarget the frequency.
    pub fn excitation(&self, frequency: f64) -> Result<Excitation> {
        Ok(Excitation::new(
            self.excitation.accel_amplitude,
            frequency,
            self.excitation.source_amplitude,
        )?)
    }

    pub fn rectifier(&self) -> RectifierModel {
        match self.circuit.rectifier {
            RectifierKind::Ideal => RectifierModel::ideal(),
            RectifierKind::Smart => RectifierModel::smart(),
            RectifierKind::Diode => {
                RectifierModel::diode_bridge(self.circuit.diode_drop).expect("validated during resolution")
            }
        }
    }

    pub fn bias_flip(&self) -> BiasFlipConfig {
        if self.circuit.bias_flip {
            BiasFlipConfig::new(self.circuit.flip_ratio, 0.0).expect("validated during resolution")
        } else {
            BiasFlipConfig::disabled()
        }
    }
}

/// What a command needs beyond the common model and circuit settings.
#[derive(Debug, Clone, Copy, Default)]
pub struct Needs {
    pub grid: bool,
    pub waveform: bool,
    pub design: bool,
    pub fit_data: bool,
}

pub fn load_file(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
}

pub fn resolve(config_path: Option<&Path>, overrides: &Overrides, needs: Needs) -> Result<RunConfig> {
    let file = match config_path {
        Some(p) => load_file(p)?,
        None => FileConfig::default(),
    };
    let base_dir = config_path
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let rel = |p: &Path| -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    };

    let (model_source, model) = resolve_model(file.model.unwrap_or_default(), &rel)?;

    let exc = file.excitation.unwrap_or_default();
    let excitation = ExcitationSpec {
        accel_amplitude: exc.accel_amplitude.unwrap_or(reference::ACCEL_1G),
        source_amplitude: exc.source_amplitude.unwrap_or(reference::SOURCE_AMPLITUDE),
    };
    Excitation::new(excitation.accel_amplitude, 1.0, excitation.source_amplitude)
        .context("in [excitation]")
        .map_err(usage)?;

    let c = file.circuit.unwrap_or_default();
    let circuit = CircuitSpec {
        rectifier: overrides.rectifier.or(c.rectifier).unwrap_or(RectifierKind::Smart),
        diode_drop: overrides.diode_drop.or(c.diode_drop).unwrap_or(DEFAULT_DIODE_DROP),
        bias_flip: overrides.bias_flip.or(c.bias_flip).unwrap_or(true),
        flip_ratio: overrides.flip_ratio.or(c.flip_ratio).unwrap_or(DEFAULT_FLIP_RATIO),
    };
    RectifierModel::diode_bridge(circuit.diode_drop)
        .context("in [circuit] diode_drop")
        .map_err(usage)?;
    BiasFlipConfig::new(circuit.flip_ratio, 0.0)
        .context("in [circuit] flip_ratio")
        .map_err(usage)?;

    let grid = if needs.grid {
        let text = overrides.grid.clone().or(file.sweep.and_then(|s| s.grid));
        match text {
            Some(t) => Some(parse_grid(&t)?),
            None => None,
        }
    } else {
        None
    };

    let waveform_frequency = if needs.waveform {
        let f = overrides
            .frequency
            .or(file.waveform.and_then(|w| w.frequency))
            .ok_or_else(|| UsageError("waveform needs a frequency (--frequency or [waveform] frequency)".into()))?;
        if !(f.is_finite() && f > 0.0) {
            bail!(UsageError(format!("waveform frequency must be > 0, got {f}")));
        }
        Some(f)
    } else {
        None
    };

    let (design_stack, design_compare) = if needs.design {
        let d = file.design.unwrap_or_default();
        let stack = d.stack.unwrap_or(StackRef {
            preset: Some("ppa2014-baseline".into()),
            ..Default::default()
        });
        let stack = load_stack(&stack, &rel).context("in [design] stack")?;
        let compare = match d.compare {
            Some(s) => Some(load_stack(&s, &rel).context("in [design] compare")?),
            None => None,
        };
        (Some(stack), compare)
    } else {
        (None, None)
    };

    let fit_data = if needs.fit_data {
        let p = match (&overrides.data, file.fit.and_then(|f| f.data)) {
            (Some(p), _) => p.clone(),
            (None, Some(p)) => rel(&p),
            (None, None) => bail!(UsageError("fit needs measurement data (--data or [fit] data)".into())),
        };
        if !p.is_file() {
            bail!(UsageError(format!("measurement file {} not found", p.display())));
        }
        Some(p)
    } else {
        None
    };

    Ok(RunConfig {
        config_file: config_path.map(Path::to_path_buf),
        model_source,
        model,
        excitation,
        circuit,
        grid,
        waveform_frequency,
        design_stack,
        design_compare,
        fit_data,
    })
}

fn usage(e: anyhow::Error) -> anyhow::Error {
    UsageError(format!("{e:#}")).into()
}

fn resolve_model(section: ModelSection, rel: &dyn Fn(&Path) -> PathBuf) -> Result<(ModelSource, InlineModel)> {
    let given = [
        section.reference == Some(true),
        section.inline.is_some(),
        section.fit_file.is_some(),
        section.design.is_some(),
    ]
    .iter()
    .filter(|b| **b)
    .count();
    if given > 1 {
        bail!(UsageError(
            "[model] must name exactly one source: reference, inline, fit_file or design".into()
        ));
    }
    let (source, cm) = if let Some(m) = section.inline {
        let cm = CompactModel::new(m.l_m, m.c_m, m.r_m, m.a, m.c_p)
            .context("in [model.inline]")
            .map_err(usage)?;
        (ModelSource::Inline, cm)
    } else if let Some(p) = section.fit_file {
        let path = rel(&p);
        let cm = read_fit_file(&path)?;
        (ModelSource::FitFile { path }, cm)
    } else if let Some(d) = section.design {
        let stack = load_stack(&d.stack, rel).context("in [model.design] stack")?;
        let cm = design_report(&stack.stack)
            .compact_model(d.f_sc, d.q_ml)
            .context("in [model.design]")
            .map_err(usage)?;
        (
            ModelSource::Design {
                stack,
                f_sc: d.f_sc,
                q_ml: d.q_ml,
            },
            cm,
        )
    } else {
        (ModelSource::Reference, reference::compact_model())
    };
    let raw = RawCompactModel::from(cm);
    Ok((
        source,
        InlineModel {
            l_m: raw.l_m,
            c_m: raw.c_m,
            r_m: raw.r_m,
            a: raw.a,
            c_p: raw.c_p,
        },
    ))
}

/// Reads the `model` entry of a file written by `fit`.
pub fn read_fit_file(path: &Path) -> Result<CompactModel> {
    #[derive(Deserialize)]
    struct FitFile {
        model: InlineModel,
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read fit file {}: {e}", path.display())))?;
    let f: FitFile = serde_json::from_str(&text)
        .map_err(|e| UsageError(format!("fit file {}: {e}", path.display())))?;
    let m = f.model;
    CompactModel::new(m.l_m, m.c_m, m.r_m, m.a, m.c_p)
        .with_context(|| format!("fit file {}", path.display()))
        .map_err(usage)
}

pub fn load_stack(r: &StackRef, rel: &dyn Fn(&Path) -> PathBuf) -> Result<StackSummary> {
    let given = [r.path.is_some(), r.preset.is_some(), r.inline.is_some()]
        .iter()
        .filter(|b| **b)
        .count();
    if given != 1 {
        bail!(UsageError("a stack needs exactly one of path, preset or inline".into()));
    }
    if let Some(p) = &r.path {
        let path = rel(p);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| UsageError(format!("cannot read stack {}: {e}", path.display())))?;
        let stack: LayerStack =
            toml::from_str(&text).map_err(|e| UsageError(format!("stack {}: {e}", path.display())))?;
        return Ok(StackSummary {
            origin: path.display().to_string(),
            stack,
        });
    }
    if let Some(name) = &r.preset {
        let stack = match name.to_ascii_lowercase().replace('_', "-").as_str() {
            "ppa2014-baseline" => ppa2014_baseline(),
            "ppa2014-redesign" => ppa2014_redesign(),
            other => bail!(UsageError(format!(
                "unknown stack preset `{other}` (known: ppa2014-baseline, ppa2014-redesign)"
            ))),
        };
        return Ok(StackSummary {
            origin: format!("preset:{name}"),
            stack,
        });
    }
    Ok(StackSummary {
        origin: "inline".into(),
        stack: r.inline.clone().expect("checked above"),
    })
}

/// Parses `F_LO:F_HI:STEP`.
pub fn parse_grid(text: &str) -> Result<GridSpec> {
    let parts: Vec<&str> = text.split(':').collect();
    let [lo, hi, step] = parts[..] else {
        bail!(UsageError(format!("grid `{text}` is not F_LO:F_HI:STEP")));
    };
    let num = |s: &str, what: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| UsageError(format!("grid {what} `{s}` is not a number")).into())
    };
    let g = GridSpec {
        f_lo: num(lo, "start")?,
        f_hi: num(hi, "end")?,
        step: num(step, "step")?,
    };
    if g.f_hi < g.f_lo {
        bail!(UsageError(format!("grid `{text}` is empty (end below start)")));
    }
    linear_grid(g.f_lo, g.f_hi, g.step).map_err(|e| UsageError(format!("grid `{text}`: {e}")))?;
    Ok(g)
}
