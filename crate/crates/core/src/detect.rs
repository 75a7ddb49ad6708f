//! Spectrometer intensities, three-measurement phase retrieval and FFT time
//! gating.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::medium::uniform_step;
use crate::spectra::ComplexTable;

/// Collinearity threshold on `|Im(conj(r1) r2)| / (|r1| |r2|)`.
pub const EPS_COLLINEAR: f64 = 1e-9;
pub const MIN_GATE_SAMPLES: usize = 256;

/// Detector position and the two reference fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSetup {
    /// Position `x0`; only the vertical component enters on-axis.
    pub position: [f64; 3],
    /// Amplitude `A` of the default references `A` and `iA`.
    #[serde(default = "unit")]
    pub reference_amplitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref1: Option<ComplexTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref2: Option<ComplexTable>,
}

fn unit() -> f64 {
    1.0
}

impl DetectorSetup {
    pub fn at_height(x3: f64) -> Self {
        Self {
            position: [0.0, 0.0, x3],
            reference_amplitude: 1.0,
            ref1: None,
            ref2: None,
        }
    }

    pub fn height(&self) -> f64 {
        self.position[2]
    }

    pub fn references(&self, omega: f64) -> Result<(Complex64, Complex64)> {
        let a = self.reference_amplitude;
        let r1 = match &self.ref1 {
            Some(t) => t.eval(omega)?,
            None => Complex64::new(a, 0.0),
        };
        let r2 = match &self.ref2 {
            Some(t) => t.eval(omega)?,
            None => Complex64::new(0.0, a),
        };
        Ok((r1, r2))
    }

    /// Checks the reference triangle at every frequency.
    pub fn check(&self, omegas: &[f64]) -> Result<()> {
        for &w in omegas {
            let (r1, r2) = self.references(w)?;
            if collinear(r1, r2) {
                return Err(Error::CollinearReferences);
            }
        }
        Ok(())
    }
}

fn collinear(r1: Complex64, r2: Complex64) -> bool {
    (r1.conj() * r2).im.abs() <= EPS_COLLINEAR * r1.norm() * r2.norm()
}

/// `(|E|, |E + r1|, |E + r2|)`.
pub fn intensities(e: Complex64, r1: Complex64, r2: Complex64) -> [f64; 3] {
    [e.norm(), (e + r1).norm(), (e + r2).norm()]
}

/// Default consistency tolerance for [`phase_retrieve`].
pub fn default_tolerance(m0: f64) -> f64 {
    1e-6 * m0.max(1.0)
}

/// Field whose circles about `0`, `-r1`, `-r2` have radii `m`.
pub fn phase_retrieve(m: [f64; 3], r1: Complex64, r2: Complex64) -> Result<Complex64> {
    phase_retrieve_with_tol(m, r1, r2, default_tolerance(m[0]))
}

pub fn phase_retrieve_with_tol(m: [f64; 3], r1: Complex64, r2: Complex64, tol: f64) -> Result<Complex64> {
    if collinear(r1, r2) {
        return Err(Error::CollinearReferences);
    }
    let [m0, m1, m2] = m;
    // difference of squares keeps the cancellation benign when |E| >> |r|
    let b1 = 0.5 * ((m1 - m0) * (m1 + m0) - r1.norm_sqr());
    let b2 = 0.5 * ((m2 - m0) * (m2 + m0) - r2.norm_sqr());
    let det = r1.re * r2.im - r1.im * r2.re;
    let e = Complex64::new((b1 * r2.im - b2 * r1.im) / det, (r1.re * b2 - r2.re * b1) / det);
    let residual = (e.norm() - m0).abs();
    if residual > tol {
        return Err(Error::InconsistentIntensities { residual, tol });
    }
    Ok(e)
}

/// Linear map from a detector field to a data functional:
/// `datum = E / (f(omega) * scale)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatumMap {
    pub scale: Complex64,
}

impl DatumMap {
    /// First interface in a vacuum background seen from height `x0`. The
    /// minus sign converts the reflection coefficient into the data sign.
    pub fn first_interface(k0: f64, x0: f64) -> Self {
        Self {
            scale: -(Complex64::new(0.0, k0 * x0)).exp(),
        }
    }
}

pub fn normalize_to_datum(e: Complex64, f: Complex64, omega: f64, map: &DatumMap) -> Result<Complex64> {
    if f.norm() == 0.0 {
        return Err(Error::ZeroSpectrum { omega });
    }
    Ok(e / (f * map.scale))
}

/// Raised-cosine time window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatingWindow {
    pub t_center: f64,
    pub t_halfwidth: f64,
    #[serde(default = "default_taper")]
    pub taper: f64,
}

fn default_taper() -> f64 {
    0.25
}

impl GatingWindow {
    pub fn new(t_center: f64, t_halfwidth: f64, taper: f64) -> Result<Self> {
        let w = Self {
            t_center,
            t_halfwidth,
            taper,
        };
        w.check()?;
        Ok(w)
    }

    /// Window between two times, the taper fitted inside `[lo, hi]`.
    pub fn between(lo: f64, hi: f64, taper: f64) -> Result<Self> {
        Self::new(0.5 * (lo + hi), 0.5 * (hi - lo), taper)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.t_halfwidth > 0.0) || !(0.0..=1.0).contains(&self.taper) {
            return Err(Error::InvalidInput(
                "gating window needs a positive half-width and a taper in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Weight at signed distance `dt` from the centre.
    pub fn weight(&self, dt: f64) -> f64 {
        let d = dt.abs();
        let flat = self.t_halfwidth * (1.0 - self.taper);
        if d <= flat {
            1.0
        } else if d >= self.t_halfwidth {
            0.0
        } else {
            let x = (d - flat) / (self.t_halfwidth - flat);
            0.5 * (1.0 + (PI * x).cos())
        }
    }
}

/// Time axis period `2 pi / d_omega` of a uniform grid.
pub fn time_period(omegas: &[f64]) -> Result<f64> {
    let step = uniform_step(omegas).ok_or(Error::NonuniformGrid)?;
    Ok(2.0 * PI / step)
}

/// Time-domain samples `e(t_m) = sum_k E(omega_k) exp(-i (omega_k - omega_0) t_m)`
/// with `t_m = 2 pi m / (N d_omega)`.
pub fn to_time(spectrum: &[Complex64]) -> Vec<Complex64> {
    let mut buf = spectrum.to_vec();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

pub fn time_gate(omegas: &[f64], spectrum: &[Complex64], window: &GatingWindow) -> Result<Vec<Complex64>> {
    window.check()?;
    if spectrum.len() != omegas.len() {
        return Err(Error::InvalidInput("spectrum and grid lengths differ".into()));
    }
    if omegas.len() < MIN_GATE_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_GATE_SAMPLES,
            got: omegas.len(),
        });
    }
    let period = time_period(omegas)?;
    let n = omegas.len();
    let mut buf = to_time(spectrum);
    for (m, v) in buf.iter_mut().enumerate() {
        let t = period * m as f64 / n as f64;
        let dt = (t - window.t_center).rem_euclid(period);
        let dt = if dt > 0.5 * period { dt - period } else { dt };
        *v *= window.weight(dt);
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    Ok(buf.into_iter().map(|v| v * scale).collect())
}

/// Complex samples on an `(omega, delta)` grid, stored delta-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    pub omegas: Vec<f64>,
    pub deltas: Vec<f64>,
    pub values: Vec<Complex64>,
}

impl FieldGrid {
    pub fn from_fn(omegas: &[f64], deltas: &[f64], mut f: impl FnMut(f64, f64) -> Result<Complex64>) -> Result<Self> {
        let mut values = Vec::with_capacity(omegas.len() * deltas.len());
        for &d in deltas {
            for &w in omegas {
                values.push(f(w, d)?);
            }
        }
        Ok(Self {
            omegas: omegas.to_vec(),
            deltas: deltas.to_vec(),
            values,
        })
    }

    pub fn get(&self, d: usize, w: usize) -> Complex64 {
        self.values[d * self.omegas.len() + w]
    }

    pub fn row(&self, d: usize) -> &[Complex64] {
        let n = self.omegas.len();
        &self.values[d * n..(d + 1) * n]
    }

    pub fn row_mut(&mut self, d: usize) -> &mut [Complex64] {
        let n = self.omegas.len();
        &mut self.values[d * n..(d + 1) * n]
    }

    /// Largest absolute entry-wise difference.
    pub fn sup_distance(&self, other: &FieldGrid) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Adds circular complex Gaussian noise of standard deviation
    /// `sigma * |scale(omega)|` per sample.
    pub fn add_noise(&mut self, sigma: f64, seed: u64, scale: impl Fn(f64) -> Result<Complex64>) -> Result<()> {
        if sigma == 0.0 {
            return Ok(());
        }
        let n = self.omegas.len();
        for d in 0..self.deltas.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(d as u64);
            for w in 0..n {
                let s = sigma * scale(self.omegas[w])?.norm() / 2f64.sqrt();
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                self.values[d * n + w] += Complex64::new(re, im) * s;
            }
        }
        Ok(())
    }
}

/// Spectrometer readings with the references that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityGrid {
    pub omegas: Vec<f64>,
    pub deltas: Vec<f64>,
    pub readings: Vec<[f64; 3]>,
    pub references: Vec<(Complex64, Complex64)>,
}

impl IntensityGrid {
    pub fn measure(field: &FieldGrid, setup: &DetectorSetup) -> Result<Self> {
        let n = field.omegas.len();
        let mut readings = Vec::with_capacity(field.values.len());
        let mut references = Vec::with_capacity(field.values.len());
        for (i, &e) in field.values.iter().enumerate() {
            let (r1, r2) = setup.references(field.omegas[i % n])?;
            readings.push(intensities(e, r1, r2));
            references.push((r1, r2));
        }
        Ok(Self {
            omegas: field.omegas.clone(),
            deltas: field.deltas.clone(),
            readings,
            references,
        })
    }

    pub fn retrieve(&self) -> Result<FieldGrid> {
        let values = self
            .readings
            .iter()
            .zip(&self.references)
            .map(|(m, (r1, r2))| phase_retrieve(*m, *r1, *r2))
            .collect::<Result<_>>()?;
        Ok(FieldGrid {
            omegas: self.omegas.clone(),
            deltas: self.deltas.clone(),
            values,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let n = self.omegas.len();
        for (i, (m, (r1, r2))) in self.readings.iter().zip(&self.references).enumerate() {
            w.serialize(IntensityRow {
                omega: self.omegas[i % n],
                delta: self.deltas[i / n],
                m0: m[0],
                m1: m[1],
                m2: m[2],
                ref1_re: r1.re,
                ref1_im: r1.im,
                ref2_re: r2.re,
                ref2_im: r2.im,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let rows: Vec<IntensityRow> = csv::Reader::from_path(path)?
            .deserialize()
            .collect::<std::result::Result<_, _>>()?;
        let keys: Vec<(f64, f64)> = rows.iter().map(|r| (r.omega, r.delta)).collect();
        let (omegas, deltas, order) = grid_layout(&keys)?;
        let mut readings = vec![[0.0; 3]; order.len()];
        let mut references = vec![(Complex64::default(), Complex64::default()); order.len()];
        for (row, slot) in rows.iter().zip(order) {
            readings[slot] = [row.m0, row.m1, row.m2];
            references[slot] = (
                Complex64::new(row.ref1_re, row.ref1_im),
                Complex64::new(row.ref2_re, row.ref2_im),
            );
        }
        Ok(Self {
            omegas,
            deltas,
            readings,
            references,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct IntensityRow {
    omega: f64,
    delta: f64,
    m0: f64,
    m1: f64,
    m2: f64,
    ref1_re: f64,
    ref1_im: f64,
    ref2_re: f64,
    ref2_im: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct FieldRow {
    omega: f64,
    delta: f64,
    re: f64,
    im: f64,
}

impl FieldGrid {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let n = self.omegas.len();
        for (i, v) in self.values.iter().enumerate() {
            w.serialize(FieldRow {
                omega: self.omegas[i % n],
                delta: self.deltas[i / n],
                re: v.re,
                im: v.im,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let rows: Vec<FieldRow> = csv::Reader::from_path(path)?
            .deserialize()
            .collect::<std::result::Result<_, _>>()?;
        let keys: Vec<(f64, f64)> = rows.iter().map(|r| (r.omega, r.delta)).collect();
        let (omegas, deltas, order) = grid_layout(&keys)?;
        let mut values = vec![Complex64::default(); order.len()];
        for (row, slot) in rows.iter().zip(order) {
            values[slot] = Complex64::new(row.re, row.im);
        }
        Ok(Self { omegas, deltas, values })
    }
}

/// Recovers the sorted axes of a complete rectangular grid and the storage
/// slot of every row.
fn grid_layout(keys: &[(f64, f64)]) -> Result<(Vec<f64>, Vec<f64>, Vec<usize>)> {
    let axis = |pick: fn(&(f64, f64)) -> f64| {
        let mut v: Vec<f64> = keys.iter().map(pick).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let omegas = axis(|k| k.0);
    let deltas = axis(|k| k.1);
    if keys.is_empty() || omegas.len() * deltas.len() != keys.len() {
        return Err(Error::InvalidInput(format!(
            "measurement table is not a complete grid: {} rows for {} x {} points",
            keys.len(),
            omegas.len(),
            deltas.len()
        )));
    }
    let mut seen = vec![false; keys.len()];
    let mut order = Vec::with_capacity(keys.len());
    for &(w, d) in keys {
        let wi = omegas.binary_search_by(|x| x.total_cmp(&w)).expect("on axis");
        let di = deltas.binary_search_by(|x| x.total_cmp(&d)).expect("on axis");
        let slot = di * omegas.len() + wi;
        if std::mem::replace(&mut seen[slot], true) {
            return Err(Error::InvalidInput(format!(
                "duplicate measurement at omega = {w}, delta = {d}"
            )));
        }
        order.push(slot);
    }
    Ok((omegas, deltas, order))
}
