//! Scene files: the medium, the acquisition and what the inversion may assume.

use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::{DetectorSetup, FieldGrid, GatingWindow, IntensityGrid};
use crate::error::{Error, Result};
use crate::forward::{detector_field, IncidentBeam, Mode, Variant};
use crate::invert::{DepthPrior, LayerPlan, StripSettings, SublayerPlan};
use crate::medium::{Diagnostic, DiagnosticKind, MediumStack, ScanGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OmegaSpec {
    List(Vec<f64>),
    Range { lo: f64, hi: f64, count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub omegas: OmegaSpec,
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
}

pub fn default_deltas() -> Vec<f64> {
    vec![-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0]
}

impl GridSpec {
    pub fn to_grid(&self) -> Result<ScanGrid> {
        let omegas = match &self.omegas {
            OmegaSpec::List(v) => v.clone(),
            OmegaSpec::Range { lo, hi, count } => ScanGrid::linspace(*lo, *hi, *count),
        };
        ScanGrid::new(omegas, self.deltas.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    /// Circular complex Gaussian on the field, scaled by `|f(omega)|`.
    FieldGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    pub kind: NoiseKind,
    pub sigma: f64,
}

/// Depth intervals for one layer's top interface and its sublayer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorPlan {
    pub interface: DepthPrior,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sublayer: Option<DepthPrior>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InversionPlan {
    /// One entry per layer; missing entries are widened around the scene depths.
    #[serde(default)]
    pub priors: Vec<PriorPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taper: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gates: Option<Vec<GatingWindow>>,
}

/// Margin added around the scene depths when no prior is given.
pub const PRIOR_MARGIN: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub medium: MediumStack,
    pub grid: GridSpec,
    pub beam: IncidentBeam,
    pub detector: DetectorSetup,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<Noise>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "unit_speed")]
    pub c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inversion: Option<InversionPlan>,
}

fn unit_speed() -> f64 {
    1.0
}

impl Scenario {
    /// Reads and validates a scene file; warnings are returned alongside.
    pub fn load(path: &Path) -> Result<(Self, Vec<Diagnostic>)> {
        let text = std::fs::read_to_string(path)?;
        let s: Scenario = serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("scenario: {e}")))?;
        let warnings = s.validate()?;
        Ok((s, warnings))
    }

    pub fn scan_grid(&self) -> Result<ScanGrid> {
        self.grid.to_grid()
    }

    /// Fails on malformed scenes; returns diagnostics that only limit what
    /// the inversion can recover.
    pub fn validate(&self) -> Result<Vec<Diagnostic>> {
        let grid = self.scan_grid()?;
        if !(self.c > 0.0) {
            return Err(Error::InvalidInput("c must be positive".into()));
        }
        if let Some(n) = self.noise {
            if !(n.sigma >= 0.0) {
                return Err(Error::InvalidInput("noise sigma must be non-negative".into()));
            }
        }
        self.beam.check()?;
        self.detector.check(&grid.omegas)?;
        let (fatal, warnings): (Vec<_>, Vec<_>) = self.medium.validate(&grid).into_iter().partition(|d| {
            matches!(
                d.kind,
                DiagnosticKind::OrderingViolated
                    | DiagnosticKind::PassivityViolated
                    | DiagnosticKind::OutOfBand
                    | DiagnosticKind::InvalidSublayer
            )
        });
        if let Some(first) = fatal.first() {
            return Err(Error::InvalidInput(first.message.clone()));
        }
        if self.detector.height() <= self.medium.layers.first().map_or(f64::MIN, |l| l.boundary.z) {
            return Err(Error::InvalidInput(
                "detector must lie above the first interface".into(),
            ));
        }
        Ok(warnings)
    }

    /// Detector fields on the whole grid, with the scene's noise applied.
    pub fn fields(&self) -> Result<FieldGrid> {
        let grid = self.scan_grid()?;
        let x0 = self.detector.height();
        let rows: Vec<Vec<Complex64>> = grid
            .deltas
            .par_iter()
            .map(|&d| {
                let cs = self.medium.compress(d)?;
                grid.omegas
                    .iter()
                    .map(|&w| detector_field(&cs, w, self.c, &self.beam, x0, self.mode, self.variant))
                    .collect()
            })
            .collect::<Result<_>>()?;
        let mut out = FieldGrid {
            omegas: grid.omegas,
            deltas: grid.deltas,
            values: rows.concat(),
        };
        if let Some(n) = self.noise {
            out.add_noise(n.sigma, self.seed, |w| self.beam.spectrum.eval(w))?;
        }
        Ok(out)
    }

    pub fn measurements(&self) -> Result<IntensityGrid> {
        IntensityGrid::measure(&self.fields()?, &self.detector)
    }

    /// Inversion settings implied by the scene structure and priors.
    pub fn strip_settings(&self) -> Result<StripSettings> {
        let grid = self.scan_grid()?;
        if grid.uniform_step().is_none() {
            return Err(Error::NonuniformGrid);
        }
        let plan = self.inversion.clone().unwrap_or_default();
        let (lo, hi) = self.medium.delta_range;
        let span = |a: f64, ra: f64, b: f64, rb: f64| {
            let ends = [a + lo * ra, a + hi * ra, b + lo * rb, b + hi * rb];
            let min = ends.iter().cloned().fold(f64::MAX, f64::min);
            let max = ends.iter().cloned().fold(f64::MIN, f64::max);
            DepthPrior::new(min - PRIOR_MARGIN, max + PRIOR_MARGIN)
        };
        let layers = self
            .medium
            .layers
            .iter()
            .enumerate()
            .map(|(j, l)| {
                let given = plan.priors.get(j);
                let b = l.boundary;
                LayerPlan {
                    prior: given.map_or_else(|| span(b.z, b.z_rate, b.z, b.z_rate), |p| p.interface),
                    sublayer: l.sublayer.as_ref().map(|s| SublayerPlan {
                        prior: given
                            .and_then(|p| p.sublayer)
                            .unwrap_or_else(|| span(s.top, s.top_rate, s.bottom, s.bottom_rate)),
                        radius: s.radius,
                    }),
                }
            })
            .collect();
        let mut settings = StripSettings {
            c: self.c,
            detector_height: self.detector.height(),
            spectrum: self.beam.spectrum.clone(),
            variant: self.variant,
            layers,
            delta_range: self.medium.delta_range,
            band: 0.05,
            threshold: 1e-4,
            taper: 0.25,
            gates: plan.gates,
        };
        if let Some(v) = plan.band {
            settings.band = v;
        }
        if let Some(v) = plan.threshold {
            settings.threshold = v;
        }
        if let Some(v) = plan.taper {
            settings.taper = v;
        }
        Ok(settings)
    }
}
