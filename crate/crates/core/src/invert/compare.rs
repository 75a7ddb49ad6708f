//! Parameter-by-parameter comparison of a report with a known medium.

use num_complex::Complex64;
use serde::Serialize;

use super::StackReport;
use crate::error::Result;
use crate::medium::MediumStack;

/// One recovered quantity against its true value. Complex quantities keep
/// the imaginary parts; `omega` is set for per-frequency tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterError {
    pub layer: usize,
    pub name: &'static str,
    pub omega: Option<f64>,
    pub truth_re: f64,
    pub truth_im: f64,
    pub recovered_re: f64,
    pub recovered_im: f64,
    /// `|recovered - truth| / |truth|`, or the absolute error when the truth is zero.
    pub rel_error: f64,
}

fn entry(layer: usize, name: &'static str, omega: Option<f64>, truth: Complex64, got: Complex64) -> ParameterError {
    let scale = if truth.norm() > 0.0 { truth.norm() } else { 1.0 };
    ParameterError {
        layer,
        name,
        omega,
        truth_re: truth.re,
        truth_im: truth.im,
        recovered_re: got.re,
        recovered_im: got.im,
        rel_error: (got - truth).norm() / scale,
    }
}

fn real(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Errors of every recovered parameter of `report` against `truth`. Layers
/// or sublayers missing from the report are skipped.
pub fn parameter_errors(report: &StackReport, truth: &MediumStack) -> Result<Vec<ParameterError>> {
    let mut out = Vec::new();
    for (j, (l, t)) in report.layers.iter().zip(&truth.layers).enumerate() {
        for (w, &omega) in l.n.omegas().iter().enumerate() {
            let idx = t.index(omega)?;
            out.push(entry(j, "n", Some(omega), idx.n, l.n.values()[w]));
            out.push(entry(j, "n_rate", Some(omega), idx.n_rate, l.n_rate.values()[w]));
        }
        out.push(entry(j, "z", None, real(t.boundary.z), real(l.z)));
        out.push(entry(j, "z_rate", None, real(t.boundary.z_rate), real(l.z_rate)));
        if let (Some(s), Some(ts)) = (&l.sublayer, &t.sublayer) {
            out.push(entry(j, "rho", None, real(ts.rho), real(s.rho)));
            out.push(entry(j, "zeta", None, real(ts.top), real(s.zeta)));
            out.push(entry(j, "zeta_rate", None, real(ts.top_rate), real(s.zeta_rate)));
            out.push(entry(j, "Z", None, real(ts.bottom), real(s.bottom)));
            out.push(entry(j, "Z_rate", None, real(ts.bottom_rate), real(s.bottom_rate)));
            for (w, &omega) in s.nu.omegas().iter().enumerate() {
                let p = ts.particle_index(omega)?;
                out.push(entry(j, "nu", Some(omega), p.n, s.nu.values()[w]));
                out.push(entry(j, "nu_rate", Some(omega), p.n_rate, s.nu_rate.values()[w]));
            }
        }
    }
    Ok(out)
}

/// The largest error of a table, if any.
pub fn worst(errors: &[ParameterError]) -> Option<&ParameterError> {
    errors.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
}
