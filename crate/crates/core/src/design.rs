//! Coupling coefficient of composite bimorph cantilevers.
//!
//! Bending uses the transformed-section method about the computed neutral
//! axis, and tip stiffness is `3·ΣY·I / L³`. The coupling term and plate
//! capacitance come from the two piezo layers, and
//! `κe² = A² / ((k_pe + k_non_pe)·C_P)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CompactModel;

pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;

/// Structural layers stiffer than this fraction of the piezo modulus are
/// considered well bonded; softer ones raise a shear-risk flag.
pub const SHEAR_RISK_RATIO: f64 = 0.01;
/// Neutral-axis offset, as a fraction of total thickness, that flags an asymmetric stack.
pub const ASYMMETRY_TOLERANCE: f64 = 0.01;

/// Material data used when building stacks.
///
/// These are handbook values, not device measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub name: &'static str,
    pub youngs_modulus: f64,
    pub d31: Option<f64>,
    /// Permittivity for the lumped plate capacitance (F/m).
    pub permittivity: Option<f64>,
}

const PZT5H_Y: f64 = 60.6e9;
const PZT5H_D31: f64 = -274e-12;

/// PZT-5H. The permittivity is the beam-clamped value `ε33^T − d31²·Y11^E`
/// (free `ε33^T = 3400 ε0`), which is what the blocked capacitance `C_P` sees.
pub const PZT_5H: Material = Material {
    name: "pzt5h",
    youngs_modulus: PZT5H_Y,
    d31: Some(PZT5H_D31),
    permittivity: Some(3400.0 * VACUUM_PERMITTIVITY - PZT5H_D31 * PZT5H_D31 * PZT5H_Y),
};
pub const FR4: Material = Material {
    name: "fr4",
    youngs_modulus: 22e9,
    d31: None,
    permittivity: None,
};
pub const POLYIMIDE: Material = Material {
    name: "polyimide",
    youngs_modulus: 2.5e9,
    d31: None,
    permittivity: None,
};
pub const COPPER: Material = Material {
    name: "copper",
    youngs_modulus: 117e9,
    d31: None,
    permittivity: None,
};

pub const MATERIALS: [Material; 4] = [PZT_5H, FR4, POLYIMIDE, COPPER];

pub fn material(name: &str) -> Option<Material> {
    let key = name.to_ascii_lowercase().replace(['-', '_', ' '], "");
    MATERIALS.iter().copied().find(|m| m.name == key)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerRole {
    Piezo,
    Structural,
    Electrode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wiring {
    Series,
    #[default]
    Parallel,
}

/// One beam layer. Zero thickness is allowed for non-piezo layers and contributes nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLayer")]
pub struct Layer {
    pub name: String,
    pub thickness: f64,
    pub youngs_modulus: f64,
    pub role: LayerRole,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d31: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub permittivity: Option<f64>,
}

/// Config form of [`Layer`]: properties may come from a named material.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayer {
    name: String,
    thickness: f64,
    role: LayerRole,
    material: Option<String>,
    youngs_modulus: Option<f64>,
    d31: Option<f64>,
    permittivity: Option<f64>,
}

impl TryFrom<RawLayer> for Layer {
    type Error = Error;

    fn try_from(raw: RawLayer) -> Result<Self> {
        let base = match &raw.material {
            Some(name) => Some(
                material(name).ok_or_else(|| Error::InvalidConfig(format!("unknown material `{name}`")))?,
            ),
            None => None,
        };
        let youngs_modulus = raw
            .youngs_modulus
            .or(base.map(|m| m.youngs_modulus))
            .ok_or_else(|| {
                Error::InvalidConfig(format!("layer `{}` needs youngs_modulus or material", raw.name))
            })?;
        let piezo = raw.role == LayerRole::Piezo;
        let layer = Layer {
            d31: raw.d31.or(base.and_then(|m| m.d31)).filter(|_| piezo),
            permittivity: raw.permittivity.or(base.and_then(|m| m.permittivity)).filter(|_| piezo),
            name: raw.name,
            thickness: raw.thickness,
            youngs_modulus,
            role: raw.role,
        };
        layer.validate()?;
        Ok(layer)
    }
}

impl Layer {
    pub fn piezo(name: &str, thickness: f64, m: Material) -> Result<Self> {
        let layer = Self {
            name: name.into(),
            thickness,
            youngs_modulus: m.youngs_modulus,
            role: LayerRole::Piezo,
            d31: m.d31,
            permittivity: m.permittivity,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn passive(name: &str, thickness: f64, m: Material, role: LayerRole) -> Result<Self> {
        let layer = Self {
            name: name.into(),
            thickness,
            youngs_modulus: m.youngs_modulus,
            role,
            d31: None,
            permittivity: None,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn is_piezo(&self) -> bool {
        self.role == LayerRole::Piezo
    }

    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(format!("layer `{}`: {what}", self.name)));
        if !(self.thickness.is_finite() && self.thickness >= 0.0) {
            return bad("thickness must be >= 0");
        }
        if !(self.youngs_modulus.is_finite() && self.youngs_modulus > 0.0) {
            return bad("youngs_modulus must be > 0");
        }
        if self.is_piezo() {
            if self.thickness <= 0.0 {
                return bad("piezo thickness must be > 0");
            }
            match (self.d31, self.permittivity) {
                (Some(d), Some(e)) if d.is_finite() && e.is_finite() && e > 0.0 => {}
                _ => return bad("piezo layers need finite d31 and permittivity > 0"),
            }
        } else if self.d31.is_some() || self.permittivity.is_some() {
            return bad("only piezo layers carry d31 and permittivity");
        }
        Ok(())
    }
}

/// Bottom-to-top layer list of a cantilever: a bimorph, or a single piezo layer on a substrate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawStack")]
pub struct LayerStack {
    pub layers: Vec<Layer>,
    /// Width `W` (m).
    pub width: f64,
    /// Free length `L` (m), clamping overlap already removed.
    pub free_length: f64,
    pub wiring: Wiring,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStack {
    layers: Vec<Layer>,
    width: f64,
    free_length: f64,
    #[serde(default)]
    wiring: Wiring,
}

impl TryFrom<RawStack> for LayerStack {
    type Error = Error;

    fn try_from(raw: RawStack) -> Result<Self> {
        LayerStack::new(raw.layers, raw.width, raw.free_length, raw.wiring)
    }
}

impl LayerStack {
    pub fn new(layers: Vec<Layer>, width: f64, free_length: f64, wiring: Wiring) -> Result<Self> {
        for l in &layers {
            l.validate()?;
        }
        for (name, v) in [("width", width), ("free_length", free_length)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        let piezo: Vec<&Layer> = layers.iter().filter(|l| l.is_piezo()).collect();
        match piezo[..] {
            [_] => {}
            [p, q] => {
                if p.thickness != q.thickness
                    || p.youngs_modulus != q.youngs_modulus
                    || p.d31 != q.d31
                    || p.permittivity != q.permittivity
                {
                    return Err(Error::InvalidConfig("the two piezo layers must be identical".into()));
                }
            }
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "expected one or two piezo layers, found {}",
                    piezo.len()
                )))
            }
        }
        Ok(Self {
            layers,
            width,
            free_length,
            wiring,
        })
    }

    pub fn total_thickness(&self) -> f64 {
        self.layers.iter().map(|l| l.thickness).sum()
    }

    fn piezo_layer(&self) -> &Layer {
        self.layers.iter().find(|l| l.is_piezo()).expect("validated stack")
    }

    fn piezo_count(&self) -> usize {
        self.layers.iter().filter(|l| l.is_piezo()).count()
    }

    /// Layer centroid heights measured from the bottom face.
    fn centroids(&self) -> Vec<f64> {
        let mut z = 0.0;
        self.layers
            .iter()
            .map(|l| {
                let c = z + 0.5 * l.thickness;
                z += l.thickness;
                c
            })
            .collect()
    }

    /// Modulus-weighted neutral axis height from the bottom face.
    pub fn neutral_axis(&self) -> f64 {
        let (num, den) = self
            .layers
            .iter()
            .zip(self.centroids())
            .fold((0.0, 0.0), |(n, d), (l, z)| {
                let ea = l.youngs_modulus * l.thickness;
                (n + ea * z, d + ea)
            });
        num / den
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stiffness {
    pub k_pe: f64,
    pub k_non_pe: f64,
    /// Neutral axis offset from the geometric mid-plane (m).
    pub neutral_axis_offset: f64,
}

impl Stiffness {
    pub fn total(&self) -> f64 {
        self.k_pe + self.k_non_pe
    }

    pub fn is_asymmetric(&self, total_thickness: f64) -> bool {
        self.neutral_axis_offset.abs() > ASYMMETRY_TOLERANCE * total_thickness
    }
}

/// Tip stiffness of the piezo and non-piezo layer groups.
pub fn stack_stiffness(stack: &LayerStack) -> Stiffness {
    let na = stack.neutral_axis();
    let scale = 3.0 / stack.free_length.powi(3);
    let (mut k_pe, mut k_non_pe) = (0.0, 0.0);
    for (l, z) in stack.layers.iter().zip(stack.centroids()) {
        let b = z - na;
        let i = stack.width * (l.thickness.powi(3) / 12.0 + l.thickness * b * b);
        let k = scale * l.youngs_modulus * i;
        if l.is_piezo() {
            k_pe += k;
        } else {
            k_non_pe += k;
        }
    }
    Stiffness {
        k_pe,
        k_non_pe,
        neutral_axis_offset: na - 0.5 * stack.total_thickness(),
    }
}

/// Mean distance from the neutral axis to the piezo-layer centerlines.
pub fn piezo_offset(stack: &LayerStack) -> f64 {
    let na = stack.neutral_axis();
    let (sum, n) = stack
        .layers
        .iter()
        .zip(stack.centroids())
        .filter(|(l, _)| l.is_piezo())
        .fold((0.0, 0.0), |(s, n), (_, z)| (s + (z - na).abs(), n + 1.0));
    sum / n
}

/// Coupling term `A = 3·W·Y·b·|d31| / L` for a parallel bimorph.
///
/// Series wiring halves it, as does a single piezo layer (wiring is then moot).
pub fn coupling_term(stack: &LayerStack) -> f64 {
    let p = stack.piezo_layer();
    let d31 = p.d31.expect("validated piezo layer").abs();
    let a = 3.0 * stack.width * p.youngs_modulus * piezo_offset(stack) * d31 / stack.free_length;
    match (stack.piezo_count(), stack.wiring) {
        (2, Wiring::Parallel) => a,
        _ => 0.5 * a,
    }
}

pub fn plate_capacitance(stack: &LayerStack) -> f64 {
    let p = stack.piezo_layer();
    let eps = p.permittivity.expect("validated piezo layer");
    let one = eps * stack.width * stack.free_length / p.thickness;
    match (stack.piezo_count(), stack.wiring) {
        (1, _) => one,
        (_, Wiring::Parallel) => 2.0 * one,
        (_, Wiring::Series) => 0.5 * one,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignWarning {
    /// Neutral axis deviates from the mid-plane; offsets use the computed axis.
    AsymmetricStack { offset: f64 },
    /// A structural layer is soft enough that the piezo layers may shear apart.
    ShearRisk { layer: String, modulus_ratio: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub k_pe: f64,
    pub k_non_pe: f64,
    pub k_total: f64,
    pub non_pe_fraction: f64,
    pub b_pe: f64,
    pub a_coupling: f64,
    pub c_p: f64,
    pub kappa_e2: f64,
    pub warnings: Vec<DesignWarning>,
}

pub fn design_report(stack: &LayerStack) -> DesignReport {
    let s = stack_stiffness(stack);
    let k_total = s.total();
    let a = coupling_term(stack);
    let c_p = plate_capacitance(stack);
    let mut warnings = Vec::new();
    if s.is_asymmetric(stack.total_thickness()) {
        warnings.push(DesignWarning::AsymmetricStack {
            offset: s.neutral_axis_offset,
        });
    }
    let y_pe = stack.piezo_layer().youngs_modulus;
    for l in stack.layers.iter().filter(|l| l.role == LayerRole::Structural && l.thickness > 0.0) {
        let ratio = l.youngs_modulus / y_pe;
        if ratio < SHEAR_RISK_RATIO {
            warnings.push(DesignWarning::ShearRisk {
                layer: l.name.clone(),
                modulus_ratio: ratio,
            });
        }
    }
    DesignReport {
        k_pe: s.k_pe,
        k_non_pe: s.k_non_pe,
        k_total,
        non_pe_fraction: s.k_non_pe / k_total,
        b_pe: piezo_offset(stack),
        a_coupling: a,
        c_p,
        kappa_e2: a * a / (k_total * c_p),
        warnings,
    }
}

impl DesignReport {
    /// Compact model with this stack's stiffness, coupling and capacitance.
    ///
    /// Mass and damping are not predicted by the stack, so they are fixed
    /// through the short-circuit resonance and the matched-load quality factor.
    pub fn compact_model(&self, f_sc: f64, q_ml: f64) -> Result<CompactModel> {
        crate::error::require_positive("f_sc", f_sc)?;
        crate::error::require_positive("q_ml", q_ml)?;
        let w = 2.0 * std::f64::consts::PI * f_sc;
        let c_m = 1.0 / self.k_total;
        let l_m = self.k_total / (w * w);
        CompactModel::new(l_m, c_m, w * l_m / (2.0 * q_ml), self.a_coupling, self.c_p)
    }
}

/// Width of the PPA2014-like reference stacks (m).
pub const PPA2014_WIDTH: f64 = 20.8e-3;
/// Free length of the PPA2014-like stacks after a 5 mm clamping overlap (m).
pub const PPA2014_FREE_LENGTH: f64 = 56e-3;

fn symmetric(outer: &[Layer], piezo: Layer, center: Layer) -> Vec<Layer> {
    let mut layers: Vec<Layer> = outer.to_vec();
    layers.push(piezo.clone());
    layers.push(center);
    layers.push(piezo);
    layers.extend(outer.iter().rev().cloned());
    layers
}

/// Commercial-style bimorph: FR4 skins, copper electrodes, 0.254 mm PZT, thin FR4 core.
///
/// Thicknesses are representative of the datasheet class, not measured.
pub fn ppa2014_baseline() -> LayerStack {
    let outer = [
        Layer::passive("fr4 skin", 110e-6, FR4, LayerRole::Structural).unwrap(),
        Layer::passive("cu electrode", 10e-6, COPPER, LayerRole::Electrode).unwrap(),
    ];
    let layers = symmetric(
        &outer,
        Layer::piezo("pzt", 254e-6, PZT_5H).unwrap(),
        Layer::passive("fr4 core", 65e-6, FR4, LayerRole::Structural).unwrap(),
    );
    LayerStack::new(layers, PPA2014_WIDTH, PPA2014_FREE_LENGTH, Wiring::Parallel).unwrap()
}

/// Redesign: no copper, polyimide skins, thicker PZT and a thick FR4 core.
pub fn ppa2014_redesign() -> LayerStack {
    let outer = [Layer::passive("polyimide skin", 75e-6, POLYIMIDE, LayerRole::Structural).unwrap()];
    let layers = symmetric(
        &outer,
        Layer::piezo("pzt", 404e-6, PZT_5H).unwrap(),
        Layer::passive("fr4 core", 740e-6, FR4, LayerRole::Structural).unwrap(),
    );
    LayerStack::new(layers, PPA2014_WIDTH, PPA2014_FREE_LENGTH, Wiring::Parallel).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn beam(y: f64) -> Material {
        Material {
            name: "x",
            youngs_modulus: y,
            d31: None,
            permittivity: None,
        }
    }

    fn pzt(t: f64) -> Layer {
        Layer::piezo("p", t, PZT_5H).unwrap()
    }

    fn stack(core: f64, core_y: f64) -> LayerStack {
        let c = Layer::passive("c", core, beam(core_y), LayerRole::Structural).unwrap();
        LayerStack::new(vec![pzt(2e-4), c, pzt(2e-4)], 0.01, 0.05, Wiring::Parallel).unwrap()
    }

    #[test]
    fn homogeneous_beam_matches_textbook() {
        let t = 1e-3;
        let (w, l) = (0.02, 0.05);
        let p = Layer {
            name: "p".into(),
            thickness: t / 2.0,
            youngs_modulus: 60e9,
            role: LayerRole::Piezo,
            d31: Some(-1e-10),
            permittivity: Some(1e-8),
        };
        let s = LayerStack::new(vec![p.clone(), p], w, l, Wiring::Parallel).unwrap();
        let k = stack_stiffness(&s).total();
        let expect = 3.0 * 60e9 * (w * t.powi(3) / 12.0) / l.powi(3);
        assert!((k / expect - 1.0).abs() < 1e-12);
    }

    #[test]
    fn splitting_a_layer_is_invisible() {
        let a = stack(3e-4, 22e9);
        let half = Layer::passive("c", 1.5e-4, FR4, LayerRole::Structural).unwrap();
        let b = LayerStack::new(
            vec![pzt(2e-4), half.clone(), half, pzt(2e-4)],
            0.01,
            0.05,
            Wiring::Parallel,
        )
        .unwrap();
        let (sa, sb) = (stack_stiffness(&a), stack_stiffness(&b));
        assert!((sa.k_pe / sb.k_pe - 1.0).abs() < 1e-12);
        assert!((sa.k_non_pe / sb.k_non_pe - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_offset_gives_zero_coupling() {
        // b_PE shrinks with the layer thickness and A follows linearly.
        let pair = |t: f64| LayerStack::new(vec![pzt(t), pzt(t)], 0.01, 0.05, Wiring::Parallel).unwrap();
        let (thick, thin) = (pair(1e-4), pair(1e-10));
        assert!((coupling_term(&thin) / coupling_term(&thick) - 1e-6).abs() < 1e-15);
    }

    #[test]
    fn thicker_core_raises_coupling() {
        let a = design_report(&stack(1e-4, 22e9));
        let b = design_report(&stack(2e-4, 22e9));
        assert!(b.a_coupling > a.a_coupling);
        assert!(b.kappa_e2 > a.kappa_e2);
    }

    #[test]
    fn coupling_ignores_planform_scale() {
        let s = stack(1e-4, 22e9);
        let big = LayerStack {
            width: 2.0 * s.width,
            free_length: 2.0 * s.free_length,
            ..s.clone()
        };
        assert!((coupling_term(&s) / coupling_term(&big) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn capacitance_wiring() {
        let mut s = stack(1e-4, 22e9);
        let one = PZT_5H.permittivity.unwrap() * 0.01 * 0.05 / 2e-4;
        assert!((plate_capacitance(&s) / (2.0 * one) - 1.0).abs() < 1e-12);
        s.wiring = Wiring::Series;
        assert!((plate_capacitance(&s) / (0.5 * one) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn series_and_parallel_share_kappa() {
        let mut s = stack(1e-4, 22e9);
        let p = design_report(&s).kappa_e2;
        s.wiring = Wiring::Series;
        assert!((design_report(&s).kappa_e2 / p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chain_identity() {
        let r = design_report(&ppa2014_baseline());
        let cm_form = r.a_coupling * r.a_coupling * (1.0 / r.k_total) / r.c_p;
        assert!((cm_form / r.kappa_e2 - 1.0).abs() < 1e-12);
        let cm = r.compact_model(673.0, 39.6).unwrap();
        assert!((cm.coupling_coefficient() / r.kappa_e2 - 1.0).abs() < 1e-12);
        assert!((cm.short_circuit_frequency() / 673.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn soft_skins_flag_shear_risk() {
        let s = stack(1e-4, 0.1e9);
        assert!(design_report(&s)
            .warnings
            .iter()
            .any(|w| matches!(w, DesignWarning::ShearRisk { .. })));
        assert!(design_report(&ppa2014_redesign()).warnings.is_empty());
    }

    #[test]
    fn lopsided_stack_is_flagged() {
        let c = Layer::passive("c", 5e-4, COPPER, LayerRole::Structural).unwrap();
        let s = LayerStack::new(vec![pzt(2e-4), pzt(2e-4), c], 0.01, 0.05, Wiring::Parallel).unwrap();
        let r = design_report(&s);
        assert!(matches!(r.warnings[0], DesignWarning::AsymmetricStack { .. }));
    }

    #[test]
    fn rejects_bad_stacks() {
        let c = Layer::passive("c", 1e-4, FR4, LayerRole::Structural).unwrap();
        assert!(LayerStack::new(vec![c.clone()], 0.01, 0.05, Wiring::Parallel).is_err());
        assert!(LayerStack::new(vec![pzt(2e-4), c.clone(), pzt(2e-4), pzt(2e-4)], 0.01, 0.05, Wiring::Parallel).is_err());
        assert!(LayerStack::new(vec![pzt(2e-4), c, pzt(3e-4)], 0.01, 0.05, Wiring::Parallel).is_err());
        assert!(Layer::passive("n", -1e-4, FR4, LayerRole::Structural).is_err());
    }

    #[test]
    fn centered_single_piezo_has_no_coupling() {
        let s = LayerStack::new(vec![pzt(5e-4)], 0.01, 0.05, Wiring::Parallel).unwrap();
        let r = design_report(&s);
        assert_eq!(r.b_pe, 0.0);
        assert_eq!(r.kappa_e2, 0.0);
        assert_eq!(r.k_non_pe, 0.0);
    }

    #[test]
    fn unimorph_is_half_a_parallel_bimorph() {
        // A unimorph on a substrate of twice the piezo thickness, read as one half of a
        // bimorph: half the coupling term and half the capacitance.
        let c = Layer::passive("c", 4e-4, PZT_5H, LayerRole::Structural).unwrap();
        let uni = LayerStack::new(vec![c, pzt(2e-4)], 0.01, 0.05, Wiring::Parallel).unwrap();
        let bi = LayerStack::new(
            vec![pzt(2e-4), Layer::passive("c", 0.0, FR4, LayerRole::Structural).unwrap(), pzt(2e-4)],
            0.01,
            0.05,
            Wiring::Parallel,
        )
        .unwrap();
        let b = piezo_offset(&uni) / piezo_offset(&bi);
        assert!((coupling_term(&uni) / coupling_term(&bi) - 0.5 * b).abs() < 1e-12);
        assert!((plate_capacitance(&uni) / plate_capacitance(&bi) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn material_lookup_is_forgiving() {
        assert_eq!(material("PZT-5H"), Some(PZT_5H));
        assert_eq!(material("Polyimide"), Some(POLYIMIDE));
        assert!(material("unobtainium").is_none());
    }
}
