//! Dispersion models, complex refractive indices, particle contrast and the
//! spherical form factor.
//!
//! Frequencies are angular (rad/s). Susceptibilities are the frequency-domain
//! values `chi(omega)`; the refractive index is the upper-half-plane root of
//! `1 + chi`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Crossover between the truncated Taylor series and the closed form of `h`.
pub const FORM_FACTOR_SERIES_RADIUS: f64 = 1e-2;

/// A complex-valued function of frequency, sampled and linearly interpolated.
///
/// A single sample denotes a constant function. Serialized as
/// `[[omega, re, im], ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 3]>", into = "Vec<[f64; 3]>")]
pub struct ComplexTable {
    omegas: Vec<f64>,
    values: Vec<Complex64>,
}

impl ComplexTable {
    pub fn constant(value: Complex64) -> Self {
        Self {
            omegas: vec![0.0],
            values: vec![value],
        }
    }

    pub fn new(omegas: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        if omegas.is_empty() || omegas.len() != values.len() {
            return Err(Error::InvalidInput(
                "complex table needs matching, non-empty omega and value lists".into(),
            ));
        }
        if omegas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(
                "complex table samples must be strictly increasing in omega".into(),
            ));
        }
        Ok(Self { omegas, values })
    }

    /// Tabulates `f` on the given frequencies.
    pub fn from_fn(omegas: &[f64], f: impl Fn(f64) -> Complex64) -> Result<Self> {
        Self::new(omegas.to_vec(), omegas.iter().map(|&w| f(w)).collect())
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn is_constant(&self) -> bool {
        self.values.len() == 1
    }

    pub fn eval(&self, omega: f64) -> Result<Complex64> {
        if self.values.len() == 1 {
            return Ok(self.values[0]);
        }
        let lo = self.omegas[0];
        let hi = *self.omegas.last().unwrap();
        let slack = 1e-12 * (hi - lo).abs().max(hi.abs());
        if !(omega >= lo - slack && omega <= hi + slack) {
            return Err(Error::OutOfBand { omega, lo, hi });
        }
        let omega = omega.clamp(lo, hi);
        let idx = self.omegas.partition_point(|&w| w <= omega);
        if idx == 0 {
            return Ok(self.values[0]);
        }
        if idx >= self.omegas.len() {
            return Ok(*self.values.last().unwrap());
        }
        let (w0, w1) = (self.omegas[idx - 1], self.omegas[idx]);
        let t = (omega - w0) / (w1 - w0);
        Ok(self.values[idx - 1] * (1.0 - t) + self.values[idx] * t)
    }
}

impl TryFrom<Vec<[f64; 3]>> for ComplexTable {
    type Error = Error;

    fn try_from(rows: Vec<[f64; 3]>) -> Result<Self> {
        let omegas = rows.iter().map(|r| r[0]).collect();
        let values = rows.iter().map(|r| Complex64::new(r[1], r[2])).collect();
        ComplexTable::new(omegas, values)
    }
}

impl From<ComplexTable> for Vec<[f64; 3]> {
    fn from(t: ComplexTable) -> Self {
        t.omegas.iter().zip(&t.values).map(|(&w, v)| [w, v.re, v.im]).collect()
    }
}

/// Parametric frequency-domain susceptibility of one material.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DispersionModel {
    Constant {
        chi: Complex64,
    },
    /// Single Lorentz oscillator `s w_r^2 / (w_r^2 - w^2 - i gamma w)`.
    Lorentz {
        s: f64,
        omega_r: f64,
        gamma: f64,
    },
    Tabulated {
        samples: ComplexTable,
    },
}

impl Default for DispersionModel {
    fn default() -> Self {
        DispersionModel::vacuum()
    }
}

impl DispersionModel {
    pub fn vacuum() -> Self {
        DispersionModel::Constant {
            chi: Complex64::new(0.0, 0.0),
        }
    }

    /// Constant model whose refractive index is `n`.
    pub fn from_index(n: Complex64) -> Self {
        DispersionModel::Constant { chi: n * n - 1.0 }
    }

    pub fn susceptibility(&self, omega: f64) -> Result<Complex64> {
        match self {
            DispersionModel::Constant { chi } => Ok(*chi),
            DispersionModel::Lorentz { s, omega_r, gamma } => {
                let wr2 = omega_r * omega_r;
                Ok(Complex64::new(s * wr2, 0.0) / Complex64::new(wr2 - omega * omega, -gamma * omega))
            }
            DispersionModel::Tabulated { samples } => samples.eval(omega),
        }
    }

    pub fn index(&self, omega: f64) -> Result<Complex64> {
        refractive_index(self.susceptibility(omega)?)
    }

    /// Frequencies in `omegas` where the model is active (`Im chi < 0`).
    pub fn passivity_violations(&self, omegas: &[f64]) -> Vec<f64> {
        omegas
            .iter()
            .copied()
            .filter(|&w| w >= 0.0)
            .filter(|&w| matches!(self.susceptibility(w), Ok(chi) if chi.im < 0.0))
            .collect()
    }
}

/// Refractive index and its compression rate at one frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexIndex {
    pub n: Complex64,
    pub n_rate: Complex64,
}

impl ComplexIndex {
    pub fn new(n: Complex64, n_rate: Complex64) -> Self {
        Self { n, n_rate }
    }

    /// Index at compression state `delta`.
    pub fn at(&self, delta: f64) -> Complex64 {
        self.n + self.n_rate * delta
    }
}

/// Principal square root of `1 + chi`.
pub fn refractive_index(chi: Complex64) -> Result<Complex64> {
    let arg = chi + 1.0;
    if arg.im == 0.0 && arg.re < 0.0 {
        return Err(Error::BranchAmbiguity(arg));
    }
    Ok(arg.sqrt())
}

/// Normalised particle contrast `(chi_p - chi_bg) / (1 + chi_bg)`.
pub fn contrast(chi_particle: Complex64, chi_background: Complex64) -> Result<Complex64> {
    let denom = chi_background + 1.0;
    if denom.norm() == 0.0 {
        return Err(Error::DegenerateBackground);
    }
    Ok((chi_particle - chi_background) / denom)
}

/// Same contrast expressed through refractive indices, `(nu^2 - n^2) / n^2`.
pub fn contrast_from_indices(nu: Complex64, n: Complex64) -> Complex64 {
    (nu * nu - n * n) / (n * n)
}

/// Fourier shape function of the unit ball, `(sin x - x cos x) / x^3`.
///
/// Below `|x| = 1e-2` the three-term Taylor polynomial is used. Between
/// `1e-2` and `1` the same closed form is summed as its power series,
/// because the direct trigonometric expression loses about four digits to
/// cancellation there.
pub fn form_factor(xi: Complex64) -> Complex64 {
    let r = xi.norm();
    if r < FORM_FACTOR_SERIES_RADIUS {
        let x2 = xi * xi;
        return Complex64::new(1.0 / 3.0, 0.0) - x2 / 30.0 + x2 * x2 / 840.0;
    }
    if r < 1.0 {
        // sum_{m>=1} (-1)^(m+1) 2m / (2m+1)! xi^(2m-2)
        let x2 = xi * xi;
        let mut coeff = 1.0 / 3.0;
        let mut power = Complex64::new(1.0, 0.0);
        let mut sum = Complex64::new(0.0, 0.0);
        for m in 1..40u32 {
            let term = power * coeff;
            sum += term;
            if term.norm() < 1e-18 * sum.norm() {
                break;
            }
            let m = m as f64;
            // ratio of consecutive |coefficients|: (2m+2)/(2m+3)! * (2m+1)!/(2m)
            coeff *= -(2.0 * m + 2.0) / ((2.0 * m) * (2.0 * m + 2.0) * (2.0 * m + 3.0));
            power *= x2;
        }
        return sum;
    }
    (xi.sin() - xi * xi.cos()) / (xi * xi * xi)
}
