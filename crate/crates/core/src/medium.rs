//! Layer stack description, random sublayers and the affine compression law.
//!
//! Depth runs along `x3`, decreasing into the sample: the detector sits above
//! `z_1` and layer `j` occupies `z_{j+1} < x3 < z_j`. The last layer is a
//! half-space. Every geometric and optical quantity `q` responds to the
//! compression state `delta` as `q + delta * q'`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectra::{ComplexIndex, ComplexTable, DispersionModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerBoundary {
    pub z: f64,
    pub z_rate: f64,
}

impl LayerBoundary {
    pub fn at(&self, delta: f64) -> f64 {
        self.z + delta * self.z_rate
    }
}

/// Slab of randomly placed identical balls inside a layer, between
/// `bottom` (Z) and `top` (zeta).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSublayer {
    /// Particles per unit horizontal area.
    pub rho: f64,
    /// Particle material.
    pub nu: DispersionModel,
    /// Compression rate of the particle index.
    pub nu_rate: ComplexTable,
    #[serde(rename = "zeta")]
    pub top: f64,
    #[serde(rename = "zeta_rate")]
    pub top_rate: f64,
    #[serde(rename = "Z")]
    pub bottom: f64,
    #[serde(rename = "Z_rate")]
    pub bottom_rate: f64,
    #[serde(rename = "R", default)]
    pub radius: f64,
}

impl RandomSublayer {
    pub fn particle_index(&self, omega: f64) -> Result<ComplexIndex> {
        Ok(ComplexIndex::new(self.nu.index(omega)?, self.nu_rate.eval(omega)?))
    }

    pub fn compress(&self, delta: f64) -> CompressedSublayer {
        CompressedSublayer {
            rho: self.rho,
            top: self.top + delta * self.top_rate,
            bottom: self.bottom + delta * self.bottom_rate,
            radius: self.radius,
        }
    }
}

/// Geometry of a sublayer at a fixed compression state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressedSublayer {
    pub rho: f64,
    pub top: f64,
    pub bottom: f64,
    pub radius: f64,
}

impl CompressedSublayer {
    pub fn thickness(&self) -> f64 {
        self.top - self.bottom
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.top + self.bottom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub optics: DispersionModel,
    pub optics_rate: ComplexTable,
    #[serde(flatten)]
    pub boundary: LayerBoundary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sublayer: Option<RandomSublayer>,
}

impl Layer {
    pub fn index(&self, omega: f64) -> Result<ComplexIndex> {
        Ok(ComplexIndex::new(
            self.optics.index(omega)?,
            self.optics_rate.eval(omega)?,
        ))
    }
}

fn default_delta_range() -> (f64, f64) {
    (-2.0, 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediumStack {
    #[serde(default)]
    pub background: DispersionModel,
    pub layers: Vec<Layer>,
    #[serde(default = "default_delta_range")]
    pub delta_range: (f64, f64),
}

/// A layer at a fixed compression state.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedLayer<'a> {
    pub layer: &'a Layer,
    pub delta: f64,
    pub z: f64,
    pub sublayer: Option<CompressedSublayer>,
}

impl CompressedLayer<'_> {
    /// Compressed background index `n + delta n'`.
    pub fn index(&self, omega: f64) -> Result<Complex64> {
        Ok(self.layer.index(omega)?.at(self.delta))
    }

    /// Compressed particle index `nu + delta nu'`.
    pub fn particle_index(&self, omega: f64) -> Result<Option<Complex64>> {
        match &self.layer.sublayer {
            Some(s) => Ok(Some(s.particle_index(omega)?.at(self.delta))),
            None => Ok(None),
        }
    }
}

/// The stack evaluated at one compression state.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedStack<'a> {
    pub stack: &'a MediumStack,
    pub delta: f64,
    pub layers: Vec<CompressedLayer<'a>>,
}

impl CompressedStack<'_> {
    pub fn background_index(&self, omega: f64) -> Result<Complex64> {
        self.stack.background.index(omega)
    }
}

impl MediumStack {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self {
            background: DispersionModel::vacuum(),
            layers,
            delta_range: default_delta_range(),
        }
    }

    /// Applies the affine compression law at `delta` and re-checks ordering.
    pub fn compress(&self, delta: f64) -> Result<CompressedStack<'_>> {
        let layers: Vec<_> = self
            .layers
            .iter()
            .map(|layer| CompressedLayer {
                layer,
                delta,
                z: layer.boundary.at(delta),
                sublayer: layer.sublayer.as_ref().map(|s| s.compress(delta)),
            })
            .collect();
        check_ordering(&layers, delta)?;
        Ok(CompressedStack {
            stack: self,
            delta,
            layers,
        })
    }

    /// Compresses at the ends of `delta_range` and at every grid delta.
    pub fn check_delta_range(&self, deltas: &[f64]) -> Result<()> {
        let (lo, hi) = self.delta_range;
        for &d in [lo, hi].iter().chain(deltas) {
            self.compress(d)?;
        }
        Ok(())
    }

    /// Checks the hypotheses of the recovery procedures without failing.
    pub fn validate(&self, grid: &ScanGrid) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        if let Err(e) = self.check_delta_range(&grid.deltas) {
            out.push(Diagnostic::new(None, DiagnosticKind::OrderingViolated, e.to_string()));
        }
        for w in self.background.passivity_violations(&grid.omegas) {
            out.push(Diagnostic::new(
                None,
                DiagnosticKind::PassivityViolated,
                format!("background active at omega = {w}"),
            ));
        }
        for (j, layer) in self.layers.iter().enumerate() {
            let idx: Vec<ComplexIndex> = match grid.omegas.iter().map(|&w| layer.index(w)).collect::<Result<_>>() {
                Ok(v) => v,
                Err(e) => {
                    out.push(Diagnostic::new(Some(j), DiagnosticKind::OutOfBand, e.to_string()));
                    continue;
                }
            };
            for w in layer.optics.passivity_violations(&grid.omegas) {
                out.push(Diagnostic::new(
                    Some(j),
                    DiagnosticKind::PassivityViolated,
                    format!("layer optics active at omega = {w}"),
                ));
            }
            if j == 0 && idx.iter().all(|i| i.n_rate.norm() == 0.0) {
                out.push(Diagnostic::new(
                    Some(j),
                    DiagnosticKind::FirstInterfaceDegenerate,
                    "first-interface recovery degenerate: n' vanishes on the grid".into(),
                ));
            }
            let has_deeper = j + 1 < self.layers.len() || layer.sublayer.is_some();
            if has_deeper && !idx.iter().any(|i| i.n_rate.im > 0.0) {
                out.push(Diagnostic::new(
                    Some(j),
                    DiagnosticKind::NoDecayFrequency,
                    "no grid frequency with Im n' > 0; deeper structure not identifiable".into(),
                ));
            }
            if let Some(s) = &layer.sublayer {
                if !(s.bottom_rate > s.top_rate && s.top_rate > 0.0) {
                    out.push(Diagnostic::new(
                        Some(j),
                        DiagnosticKind::ShrinkConditionViolated,
                        format!(
                            "shrink condition violated: need Z' > zeta' > 0, got Z' = {}, zeta' = {}",
                            s.bottom_rate, s.top_rate
                        ),
                    ));
                }
                if s.rho <= 0.0 || s.radius < 0.0 {
                    out.push(Diagnostic::new(
                        Some(j),
                        DiagnosticKind::InvalidSublayer,
                        "sublayer needs rho > 0 and R >= 0".into(),
                    ));
                }
                let contrast_ok = grid.omegas.iter().zip(&idx).any(|(&w, i)| {
                    s.particle_index(w)
                        .map(|p| (i.n_rate * p.n - p.n_rate * i.n).norm() > 1e-12 * p.n.norm())
                        .unwrap_or(false)
                });
                if !contrast_ok {
                    out.push(Diagnostic::new(
                        Some(j),
                        DiagnosticKind::ContrastDegenerate,
                        "n'/n equals nu'/nu at every grid frequency".into(),
                    ));
                }
                for w in s.nu.passivity_violations(&grid.omegas) {
                    out.push(Diagnostic::new(
                        Some(j),
                        DiagnosticKind::PassivityViolated,
                        format!("particle material active at omega = {w}"),
                    ));
                }
            }
        }
        out
    }
}

fn check_ordering(layers: &[CompressedLayer<'_>], delta: f64) -> Result<()> {
    let violated = |detail: String| Error::OrderingViolated { delta, detail };
    for (j, layer) in layers.iter().enumerate() {
        let below = layers.get(j + 1).map(|l| l.z);
        if let Some(zb) = below {
            if zb >= layer.z {
                return Err(violated(format!(
                    "z_{} = {zb} not below z_{} = {}",
                    j + 2,
                    j + 1,
                    layer.z
                )));
            }
        }
        if let Some(s) = &layer.sublayer {
            if s.bottom >= s.top {
                return Err(violated(format!(
                    "sublayer in layer {}: Z = {} not below zeta = {}",
                    j + 1,
                    s.bottom,
                    s.top
                )));
            }
            if s.top >= layer.z || below.is_some_and(|zb| s.bottom <= zb) {
                return Err(violated(format!("sublayer in layer {} leaves its layer", j + 1)));
            }
        }
    }
    Ok(())
}

/// The `(omega, delta)` sampling lattice shared by simulation and inversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub omegas: Vec<f64>,
    pub deltas: Vec<f64>,
}

impl ScanGrid {
    pub fn new(omegas: Vec<f64>, deltas: Vec<f64>) -> Result<Self> {
        let g = Self { omegas, deltas };
        g.check()?;
        Ok(g)
    }

    /// `n` equally spaced frequencies from `lo` to `hi` inclusive.
    pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![lo];
        }
        (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
    }

    pub fn check(&self) -> Result<()> {
        let increasing = |v: &[f64]| !v.is_empty() && v.windows(2).all(|w| w[1] > w[0]);
        if !increasing(&self.omegas) {
            return Err(Error::InvalidInput("omegas must be strictly increasing".into()));
        }
        if !increasing(&self.deltas) {
            return Err(Error::InvalidInput("deltas must be strictly increasing".into()));
        }
        if !self.deltas.contains(&0.0) {
            return Err(Error::InvalidInput("deltas must contain 0".into()));
        }
        Ok(())
    }

    /// Grid spacing if the frequencies are uniform to relative `1e-9`.
    pub fn uniform_step(&self) -> Option<f64> {
        uniform_step(&self.omegas)
    }

    pub fn len(&self) -> usize {
        self.omegas.len() * self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn uniform_step(omegas: &[f64]) -> Option<f64> {
    if omegas.len() < 2 {
        return None;
    }
    let step = (omegas[omegas.len() - 1] - omegas[0]) / (omegas.len() - 1) as f64;
    omegas
        .windows(2)
        .all(|w| ((w[1] - w[0]) - step).abs() <= 1e-9 * step.abs())
        .then_some(step)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiagnosticKind {
    OrderingViolated,
    PassivityViolated,
    OutOfBand,
    FirstInterfaceDegenerate,
    NoDecayFrequency,
    ShrinkConditionViolated,
    ContrastDegenerate,
    InvalidSublayer,
    WeakCurvature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    /// Zero-based layer index, `None` for stack-level findings.
    pub layer: Option<usize>,
    pub kind: DiagnosticKind,
    pub message: String,
}

impl Diagnostic {
    pub fn new(layer: Option<usize>, kind: DiagnosticKind, message: String) -> Self {
        Self { layer, kind, message }
    }
}
