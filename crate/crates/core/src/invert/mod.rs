//! Layer-stripping inversion: one solver per datum type and the driver.

mod compare;
mod interface;
mod lift;
mod random_layer;
mod strip;

pub use compare::{parameter_errors, worst, ParameterError};
pub use interface::recover_interface;
pub use lift::{mobius_lift_solve, phase_to_depth, recover_first_interface, Lift};
pub use random_layer::{recover_random_layer, solve_rho_nu};
pub use strip::{layer_strip, layer_strip_fields, LayerPlan, StripSettings, SublayerPlan};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::detect::FieldGrid;
use crate::error::{Error, Result};
use crate::medium::{Layer, LayerBoundary, MediumStack, RandomSublayer};
use crate::spectra::{ComplexIndex, ComplexTable, DispersionModel};

/// Measured data functional on an `(omega, delta)` grid.
pub type DataGrid = FieldGrid;

pub const MIN_DELTAS: usize = 5;

/// Closed depth interval used to resolve phase-wrapping ambiguity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthPrior {
    pub lo: f64,
    pub hi: f64,
}

impl DepthPrior {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, z: f64) -> bool {
        let slack = 1e-9 * (self.hi - self.lo).abs().max(1.0);
        z >= self.lo - slack && z <= self.hi + slack
    }

    pub fn max_abs(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Flag {
    /// Recovered depth lies outside the prior interval.
    PhaseUnwrapAmbiguous,
    /// Returns could not be separated in time.
    GatingOverlap,
    /// Iteration stopped before the update tolerance was met.
    NoConvergence,
    /// Some frequencies were dropped from the density estimate.
    ContrastDegenerate,
    /// Stripping stopped at this layer; deeper layers are missing.
    Partial,
}

/// Recovered sublayer of one layer, with per-frequency particle indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SublayerReport {
    pub rho: f64,
    pub nu: ComplexTable,
    pub nu_rate: ComplexTable,
    pub zeta: f64,
    pub zeta_rate: f64,
    #[serde(rename = "Z")]
    pub bottom: f64,
    #[serde(rename = "Z_rate")]
    pub bottom_rate: f64,
    pub residual: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<Flag>,
}

impl SublayerReport {
    pub fn index_at(&self, w: usize) -> ComplexIndex {
        ComplexIndex::new(self.nu.values()[w], self.nu_rate.values()[w])
    }
}

/// Recovered top interface of a layer and, when present, its sublayer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub n: ComplexTable,
    pub n_rate: ComplexTable,
    pub z: f64,
    pub z_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sublayer: Option<SublayerReport>,
    pub residual: f64,
    pub flags: Vec<Flag>,
}

impl LayerReport {
    pub fn index_at(&self, w: usize) -> ComplexIndex {
        ComplexIndex::new(self.n.values()[w], self.n_rate.values()[w])
    }

    pub fn indices(&self) -> Vec<ComplexIndex> {
        (0..self.n.values().len()).map(|w| self.index_at(w)).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StackReport {
    pub layers: Vec<LayerReport>,
    pub global_misfit: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<Flag>,
    /// Why stripping stopped early, if it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopped: Option<String>,
}

impl StackReport {
    pub fn is_partial(&self) -> bool {
        self.flags.contains(&Flag::Partial)
    }

    /// Stack with the recovered parameters, tabulated on the data grid.
    /// `radii` gives the particle radius of each sublayer.
    pub fn to_medium(&self, radii: &[f64], delta_range: (f64, f64)) -> Result<MediumStack> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (j, l) in self.layers.iter().enumerate() {
            let sublayer = l.sublayer.as_ref().map(|s| -> Result<RandomSublayer> {
                Ok(RandomSublayer {
                    rho: s.rho,
                    nu: index_model(&s.nu)?,
                    nu_rate: s.nu_rate.clone(),
                    top: s.zeta,
                    top_rate: s.zeta_rate,
                    bottom: s.bottom,
                    bottom_rate: s.bottom_rate,
                    radius: radii.get(j).copied().unwrap_or(0.0),
                })
            });
            layers.push(Layer {
                optics: index_model(&l.n)?,
                optics_rate: l.n_rate.clone(),
                boundary: LayerBoundary {
                    z: l.z,
                    z_rate: l.z_rate,
                },
                sublayer: sublayer.transpose()?,
            });
        }
        let mut stack = MediumStack::new(layers);
        stack.delta_range = delta_range;
        Ok(stack)
    }
}

/// Tabulated dispersion whose index reproduces `n` at the table nodes.
pub fn index_model(n: &ComplexTable) -> Result<DispersionModel> {
    Ok(DispersionModel::Tabulated {
        samples: ComplexTable::new(n.omegas().to_vec(), n.values().iter().map(|n| n * n - 1.0).collect())?,
    })
}

/// Relative misfit `|model - data| / |data|` over the grid.
pub fn relative_misfit(data: &DataGrid, model: impl Fn(usize, usize) -> Result<Complex64>) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for d in 0..data.deltas.len() {
        for w in 0..data.omegas.len() {
            let v = data.get(d, w);
            num += (model(d, w)? - v).norm_sqr();
            den += v.norm_sqr();
        }
    }
    Ok(if den == 0.0 { num.sqrt() } else { (num / den).sqrt() })
}

pub(crate) fn check_grid(data: &DataGrid, min_deltas: usize) -> Result<()> {
    if data.deltas.len() < min_deltas {
        return Err(Error::InvalidInput(format!(
            "need at least {min_deltas} compression states, got {}",
            data.deltas.len()
        )));
    }
    if data.values.len() != data.deltas.len() * data.omegas.len() {
        return Err(Error::InvalidInput("data grid is incomplete".into()));
    }
    Ok(())
}

pub(crate) fn column(data: &DataGrid, w: usize) -> Vec<Complex64> {
    (0..data.deltas.len()).map(|d| data.get(d, w)).collect()
}

/// Unwraps a phase sequence so that successive samples differ by less than pi.
pub(crate) fn unwrap(phases: &mut [f64]) {
    for k in 1..phases.len() {
        let jump = phases[k] - phases[k - 1];
        phases[k] -= (jump / std::f64::consts::TAU).round() * std::f64::consts::TAU;
    }
}
