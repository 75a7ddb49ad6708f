//! Closed-form frequency-domain responses of layered media.
//!
//! Conventions: fields are scalar multiples of the horizontal polarisation,
//! `k0 = omega / c`, and a wave travelling down in a medium of index `n` is
//! `A exp(-i k0 n x3)`. "Absolute" amplitudes are referenced to `x3 = 0`;
//! two-port coefficients are referenced to the element's own top and bottom
//! planes.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::medium::{CompressedLayer, CompressedStack, CompressedSublayer, LayerBoundary};
use crate::spectra::{form_factor, ComplexIndex, ComplexTable};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Default truncation tolerance of the two-port series.
pub const SERIES_TOL: f64 = 1e-16;
pub const SERIES_MAX_TERMS: usize = 10_000;

/// Which form of the averaged random-layer formulas to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Original constants and phases, kept verbatim.
    Paper,
    /// Slab integral recomputed from the scalar Born sum.
    #[default]
    Derived,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Variant::Paper),
            "derived" => Ok(Variant::Derived),
            other => Err(Error::InvalidInput(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Series,
    Oracle,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "series" => Ok(Mode::Series),
            "oracle" => Ok(Mode::Oracle),
            other => Err(Error::InvalidInput(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Reflect,
    Transmit,
}

/// Spectrum `f(omega)` of the incident pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Spectrum {
    Flat {
        #[serde(default = "one")]
        amplitude: f64,
    },
    Gaussian {
        center: f64,
        width: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    Tabulated {
        samples: ComplexTable,
    },
}

fn one() -> f64 {
    1.0
}

impl Spectrum {
    pub fn eval(&self, omega: f64) -> Result<Complex64> {
        match self {
            Spectrum::Flat { amplitude } => Ok(Complex64::new(*amplitude, 0.0)),
            Spectrum::Gaussian {
                center,
                width,
                amplitude,
            } => {
                let x = (omega - center) / width;
                Ok(Complex64::new(amplitude * (-0.5 * x * x).exp(), 0.0))
            }
            Spectrum::Tabulated { samples } => samples.eval(omega),
        }
    }

    pub fn scaled(&self, factor: f64) -> Spectrum {
        match self {
            Spectrum::Flat { amplitude } => Spectrum::Flat {
                amplitude: amplitude * factor,
            },
            Spectrum::Gaussian {
                center,
                width,
                amplitude,
            } => Spectrum::Gaussian {
                center: *center,
                width: *width,
                amplitude: amplitude * factor,
            },
            Spectrum::Tabulated { samples } => Spectrum::Tabulated {
                samples: ComplexTable::new(
                    samples.omegas().to_vec(),
                    samples.values().iter().map(|v| v * factor).collect(),
                )
                .expect("scaling keeps the table valid"),
            },
        }
    }
}

/// Downward plane wave `f(omega) exp(-i k0 n x3) eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentBeam {
    pub spectrum: Spectrum,
    #[serde(default = "default_polarization")]
    pub polarization: [f64; 2],
}

fn default_polarization() -> [f64; 2] {
    [1.0, 0.0]
}

impl IncidentBeam {
    pub fn new(spectrum: Spectrum) -> Self {
        Self {
            spectrum,
            polarization: default_polarization(),
        }
    }

    pub fn check(&self) -> Result<()> {
        let [a, b] = self.polarization;
        if ((a * a + b * b).sqrt() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput("polarization must be a unit vector".into()));
        }
        Ok(())
    }
}

/// Normal-incidence Fresnel coefficients from medium `a` (above) into `b`.
pub fn fresnel(n_a: Complex64, n_b: Complex64) -> Result<(Complex64, Complex64)> {
    let sum = n_a + n_b;
    if sum.norm() == 0.0 {
        return Err(Error::DegenerateInterface);
    }
    Ok(((n_a - n_b) / sum, 2.0 * n_a / sum))
}

/// Reflected amplitude (absolute, i.e. the up-going field is
/// `refl * exp(i k0 n_a x3)`) and transmitted amplitude at the interface plane.
pub fn single_interface_response(
    k0: f64,
    f: Complex64,
    n_a: Complex64,
    n_b: Complex64,
    z_interface: f64,
) -> Result<(Complex64, Complex64)> {
    let (r, t) = fresnel(n_a, n_b)?;
    let reflected = f * r * (-2.0 * I * k0 * n_a * z_interface).exp();
    let transmitted = f * t * (-I * k0 * n_a * z_interface).exp();
    Ok((reflected, transmitted))
}

/// Scalar scattering description of a sub-stack, with amplitudes referenced to
/// its top plane (incoming from above, reflected up) and bottom plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPort {
    pub r_top: Complex64,
    pub t_down: Complex64,
    pub r_bottom: Complex64,
    pub t_up: Complex64,
    pub z_top: f64,
    pub z_bottom: f64,
}

impl TwoPort {
    pub fn interface(n_a: Complex64, n_b: Complex64, z: f64) -> Result<Self> {
        let (r_top, t_down) = fresnel(n_a, n_b)?;
        let (r_bottom, t_up) = fresnel(n_b, n_a)?;
        Ok(Self {
            r_top,
            t_down,
            r_bottom,
            t_up,
            z_top: z,
            z_bottom: z,
        })
    }

    /// A half-space or opaque load known only through its top reflectance.
    pub fn load(r_top: Complex64, z: f64) -> Self {
        Self {
            r_top,
            t_down: Complex64::new(0.0, 0.0),
            r_bottom: Complex64::new(0.0, 0.0),
            t_up: Complex64::new(0.0, 0.0),
            z_top: z,
            z_bottom: z,
        }
    }

    /// Averaged first-order response of a random sublayer embedded in a
    /// medium of index `n`; `phi` is the particle contrast.
    pub fn sublayer(sub: &CompressedSublayer, n: Complex64, phi: Complex64, k0: f64, variant: Variant) -> Self {
        let kappa = k0 * n;
        let h = form_factor(2.0 * sub.radius * kappa);
        let thick = sub.thickness();
        let (r, one_way) = match variant {
            Variant::Derived => {
                let r = phi * sub.rho * PI * sub.radius.powi(3) * h / thick * ((2.0 * I * kappa * thick).exp() - 1.0);
                (r, derived_transmission_gain(sub, kappa, phi))
            }
            Variant::Paper => {
                let d = 0.5 * thick;
                let c = (2.0 * PI).powi(4) * sub.rho * phi;
                let r = c * h * ((3.0 * I * kappa * d).exp() - (I * kappa * d).exp());
                (r, paper_transmission_gain(sub, kappa, phi))
            }
        };
        let t = one_way * (I * kappa * thick).exp();
        Self {
            r_top: r,
            t_down: t,
            r_bottom: r,
            t_up: t,
            z_top: sub.top,
            z_bottom: sub.bottom,
        }
    }

    /// Transfer matrix mapping (down, up) amplitudes at the bottom plane to
    /// those at the top plane.
    fn transfer(&self) -> Result<[[Complex64; 2]; 2]> {
        if self.t_down.norm() == 0.0 {
            return Err(Error::InvalidInput("two-port without transmission".into()));
        }
        let inv = 1.0 / self.t_down;
        Ok([
            [inv, -self.r_bottom * inv],
            [self.r_top * inv, self.t_up - self.r_top * self.r_bottom * inv],
        ])
    }
}

/// Multiplicative change of the down-going absolute amplitude across a
/// sublayer (derived variant).
fn derived_transmission_gain(sub: &CompressedSublayer, kappa: Complex64, phi: Complex64) -> Complex64 {
    1.0 + phi * sub.rho * 4.0 * PI * sub.radius.powi(3) * form_factor(Complex64::new(0.0, 0.0)) * (I * kappa / 2.0)
}

fn paper_transmission_gain(sub: &CompressedSublayer, kappa: Complex64, phi: Complex64) -> Complex64 {
    let d = 0.5 * sub.thickness();
    1.0 + (2.0 * PI).powi(4) / 3.0 * sub.rho * phi * ((I * kappa * d).exp() - (-I * kappa * d).exp())
}

/// Neumann series for the reflectance of `upper` stacked on `lower`, with the
/// one-way gap propagation factor `p`.
pub fn series_reflectance(
    upper: &TwoPort,
    lower: &TwoPort,
    p: Complex64,
    tol: f64,
    max_terms: usize,
) -> Result<(Complex64, usize)> {
    let p2 = p * p;
    let first = upper.t_down * upper.t_up * lower.r_top * p2;
    if first.norm() == 0.0 {
        return Ok((upper.r_top, 1));
    }
    let ratio = upper.r_bottom * lower.r_top * p2;
    let q = ratio.norm();
    if q >= 1.0 {
        return Err(Error::SeriesDiverges { ratio: q });
    }
    let scale = first.norm() / (1.0 - q);
    let mut sum = Complex64::new(0.0, 0.0);
    let mut term = first;
    let mut bound = scale;
    let mut k = 0;
    loop {
        sum += term;
        k += 1;
        bound *= q;
        if bound < tol {
            break;
        }
        if k >= max_terms {
            return Err(Error::MaxTermsExceeded { terms: k });
        }
        term *= ratio;
    }
    Ok((upper.r_top + sum, k + 1))
}

/// Closed geometric form of [`series_reflectance`].
pub fn closed_form_reflectance(upper: &TwoPort, lower: &TwoPort, p: Complex64) -> Complex64 {
    let p2 = p * p;
    upper.r_top + upper.t_down * upper.t_up * lower.r_top * p2 / (1.0 - upper.r_bottom * lower.r_top * p2)
}

/// Scattering element of a compressed stack, top to bottom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Element {
    pub kind: ElementKind,
    pub port: TwoPort,
    /// Index of the medium directly below the element.
    pub n_below: Complex64,
    /// Index of the medium directly above the element.
    pub n_above: Complex64,
    /// Factor applied to the absolute down-going amplitude when crossing the
    /// element (`t exp(i (kappa_b - kappa_a) z)` for an interface).
    pub abs_gain_down: Complex64,
    pub abs_gain_up: Complex64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    /// Top boundary of layer `j` (zero-based).
    Interface(usize),
    /// Random sublayer inside layer `j`.
    Sublayer(usize),
}

/// Index of the particles relative to the host for a compressed layer.
pub fn layer_contrast(layer: &CompressedLayer<'_>, omega: f64) -> Result<Option<Complex64>> {
    let n = layer.index(omega)?;
    Ok(layer
        .particle_index(omega)?
        .map(|nu| crate::spectra::contrast_from_indices(nu, n)))
}

/// Flattens a compressed stack into its scattering elements at `omega`.
pub fn stack_elements(cs: &CompressedStack<'_>, omega: f64, c: f64, variant: Variant) -> Result<Vec<Element>> {
    let k0 = omega / c;
    let mut n_above = cs.background_index(omega)?;
    let mut out = Vec::with_capacity(2 * cs.layers.len());
    for (j, layer) in cs.layers.iter().enumerate() {
        let n = layer.index(omega)?;
        let port = TwoPort::interface(n_above, n, layer.z)?;
        let shift = (I * k0 * (n - n_above) * layer.z).exp();
        out.push(Element {
            kind: ElementKind::Interface(j),
            port,
            n_below: n,
            n_above,
            abs_gain_down: port.t_down * shift,
            abs_gain_up: port.t_up * shift,
        });
        if let Some(sub) = &layer.sublayer {
            let phi = layer_contrast(layer, omega)?.expect("sublayer has particles");
            let port = TwoPort::sublayer(sub, n, phi, k0, variant);
            let gain = port.t_down * (-I * k0 * n * sub.thickness()).exp();
            out.push(Element {
                kind: ElementKind::Sublayer(j),
                port,
                n_below: n,
                n_above: n,
                abs_gain_down: gain,
                abs_gain_up: gain,
            });
        }
        n_above = n;
    }
    Ok(out)
}

/// Absolute reflectance of the whole stack: the up-going background field is
/// `f * R * exp(i k0 n0 x3)`.
pub fn stack_response(cs: &CompressedStack<'_>, omega: f64, c: f64, mode: Mode, variant: Variant) -> Result<Complex64> {
    let elements = stack_elements(cs, omega, c, variant)?;
    let Some(first) = elements.first() else {
        return Ok(Complex64::new(0.0, 0.0));
    };
    let k0 = omega / c;
    let local = match mode {
        Mode::Series => series_local(&elements, k0)?,
        Mode::Oracle => oracle_local(&elements, k0)?,
    };
    let n0 = first.n_above;
    Ok(local * (-2.0 * I * k0 * n0 * first.port.z_top).exp())
}

fn gap_phase(upper: &Element, lower: &Element, k0: f64) -> Complex64 {
    let h = upper.port.z_bottom - lower.port.z_top;
    (I * k0 * upper.n_below * h).exp()
}

fn series_local(elements: &[Element], k0: f64) -> Result<Complex64> {
    let last = elements.len() - 1;
    let mut r = elements[last].port.r_top;
    for e in (0..last).rev() {
        let p = gap_phase(&elements[e], &elements[e + 1], k0);
        let lower = TwoPort::load(r, elements[e + 1].port.z_top);
        r = series_reflectance(&elements[e].port, &lower, p, SERIES_TOL, SERIES_MAX_TERMS)?.0;
    }
    Ok(r)
}

type Mat2 = [[Complex64; 2]; 2];

fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

/// Field-continuity matrix of an interface, built from the matching
/// conditions rather than from Fresnel coefficients.
fn interface_matrix(n_a: Complex64, n_b: Complex64) -> Mat2 {
    let ratio = n_b / n_a;
    let plus = 0.5 * (1.0 + ratio);
    let minus = 0.5 * (1.0 - ratio);
    [[plus, minus], [minus, plus]]
}

fn oracle_local(elements: &[Element], k0: f64) -> Result<Complex64> {
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let mut total: Mat2 = [[one, zero], [zero, one]];
    for (e, el) in elements.iter().enumerate() {
        let m = match el.kind {
            ElementKind::Interface(_) => interface_matrix(el.n_above, el.n_below),
            ElementKind::Sublayer(_) => el.port.transfer()?,
        };
        total = mat_mul(&total, &m);
        if let Some(next) = elements.get(e + 1) {
            let p = gap_phase(el, next, k0);
            total = mat_mul(&total, &[[1.0 / p, zero], [zero, p]]);
        }
    }
    Ok(total[1][0] / total[0][0])
}

/// Field at the detector plane `x3 = detector_z` for the compressed stack.
pub fn detector_field(
    cs: &CompressedStack<'_>,
    omega: f64,
    c: f64,
    beam: &IncidentBeam,
    detector_z: f64,
    mode: Mode,
    variant: Variant,
) -> Result<Complex64> {
    let f = beam.spectrum.eval(omega)?;
    let r = stack_response(cs, omega, c, mode, variant)?;
    let n0 = cs.background_index(omega)?;
    Ok(f * r * (I * omega / c * n0 * detector_z).exp())
}

/// Primary (single-reflection) return of element `target`, as an absolute
/// reflectance: the product of two-way absolute transmission through all
/// elements above and the element's own absolute reflection coefficient.
pub fn primary_return(elements: &[Element], target: usize, k0: f64) -> Complex64 {
    let path: Complex64 = elements[..target]
        .iter()
        .map(|e| e.abs_gain_down * e.abs_gain_up)
        .product();
    let e = &elements[target];
    let kappa = k0 * e.n_above;
    path * e.port.r_top * (-2.0 * I * kappa * e.port.z_top).exp()
}

/// Two-way absolute transmission through the first `count` elements.
pub fn two_way_path(elements: &[Element], count: usize) -> Complex64 {
    elements[..count]
        .iter()
        .map(|e| e.abs_gain_down * e.abs_gain_up)
        .product()
}

/// Multiplier mapping the sublayer datum `M_j` onto the absolute reflection
/// coefficient of the sublayer, `calibration * M_j / n^2`.
pub fn sublayer_calibration(variant: Variant, radius: f64, kappa: Complex64) -> Complex64 {
    let h = form_factor(2.0 * radius * kappa);
    match variant {
        Variant::Paper => (2.0 * PI).powi(4) * h,
        Variant::Derived => PI * radius.powi(3) * h,
    }
}

/// Ensemble-averaged Born perturbation of a random sublayer at `x3`, for the
/// incident field `f exp(-i k0 n x3)` in a host of index `n`.
#[allow(clippy::too_many_arguments)]
pub fn expected_scatter(
    sub: &CompressedSublayer,
    n: Complex64,
    phi: Complex64,
    f: Complex64,
    k0: f64,
    x3: f64,
    side: Side,
    variant: Variant,
) -> Result<Complex64> {
    let r = sub.radius;
    match side {
        Side::Reflect if x3 <= sub.top + r => {
            return Err(Error::GeometryViolated(format!(
                "reflected side needs x3 > zeta + R, got {x3}"
            )))
        }
        Side::Transmit if x3 >= sub.bottom - r => {
            return Err(Error::GeometryViolated(format!(
                "transmitted side needs x3 < Z - R, got {x3}"
            )))
        }
        _ => {}
    }
    let kappa = k0 * n;
    let (zb, zt) = (sub.bottom, sub.top);
    Ok(match (variant, side) {
        (Variant::Paper, Side::Reflect) => {
            let mu = sub.center();
            (2.0 * PI).powi(4)
                * sub.rho
                * phi
                * f
                * form_factor(2.0 * r * kappa)
                * ((-I * kappa * zb).exp() - (-I * kappa * zt).exp())
                * (I * kappa * (x3 - mu)).exp()
        }
        (Variant::Paper, Side::Transmit) => {
            let mu = sub.center();
            (2.0 * PI).powi(4) / 3.0
                * sub.rho
                * phi
                * f
                * ((-I * kappa * zb).exp() - (-I * kappa * zt).exp())
                * (-I * kappa * (x3 - mu)).exp()
        }
        (Variant::Derived, Side::Reflect) => {
            if sub.thickness() == 0.0 {
                return Ok(Complex64::new(0.0, 0.0));
            }
            phi * f
                * (sub.rho / sub.thickness())
                * PI
                * r.powi(3)
                * form_factor(2.0 * r * kappa)
                * ((-2.0 * I * kappa * zb).exp() - (-2.0 * I * kappa * zt).exp())
                * (I * kappa * x3).exp()
        }
        (Variant::Derived, Side::Transmit) => {
            if sub.thickness() == 0.0 {
                return Ok(Complex64::new(0.0, 0.0));
            }
            phi * f
                * sub.rho
                * 4.0
                * PI
                * r.powi(3)
                * form_factor(Complex64::new(0.0, 0.0))
                * (I * kappa / 2.0)
                * (-I * kappa * x3).exp()
        }
    })
}

/// First-interface datum `((n1 - 1)/(n1 + 1)) exp(-2 i k0 z1)`.
pub fn datum_m0(n1: ComplexIndex, z1: f64, k0: f64, delta: f64) -> Result<Complex64> {
    let n = n1.at(delta);
    let denom = n + 1.0;
    if denom.norm() == 0.0 {
        return Err(Error::PoleHit);
    }
    Ok((n - 1.0) / denom * (-2.0 * I * k0 * z1).exp())
}

/// Interior-interface datum between layer `j` (above) and `j+1`.
pub fn datum_mj(
    upper: ComplexIndex,
    lower: ComplexIndex,
    boundary: LayerBoundary,
    k0: f64,
    delta: f64,
) -> Result<Complex64> {
    let na = upper.at(delta);
    let nb = lower.at(delta);
    let denom = nb + na;
    if denom.norm() == 0.0 {
        return Err(Error::PoleHit);
    }
    Ok((nb - na) / denom * (-2.0 * I * k0 * na * boundary.at(delta)).exp())
}

/// Per-frequency parameters of a random sublayer, `S_j` at one `omega`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SublayerParams {
    pub rho: f64,
    pub nu: ComplexIndex,
    /// `(zeta, zeta')`.
    pub top: LayerBoundary,
    /// `(Z, Z')`.
    pub bottom: LayerBoundary,
}

/// Random-sublayer datum `M_j` for a host of index `host`.
#[allow(non_snake_case)]
pub fn datum_Mj(s: &SublayerParams, host: ComplexIndex, k0: f64, delta: f64, variant: Variant) -> Result<Complex64> {
    let zt = s.top.at(delta);
    let zb = s.bottom.at(delta);
    if zb > zt {
        return Err(Error::GeometryViolated(format!(
            "Z = {zb} above zeta = {zt} at delta = {delta}"
        )));
    }
    let n = host.at(delta);
    let nu = s.nu.at(delta);
    let amp = s.rho * (nu * nu - n * n);
    Ok(amp * sublayer_shape(n, zt, zb, k0, variant))
}

/// Geometry factor of `M_j`: everything except `rho (nu^2 - n^2)`.
pub fn sublayer_shape(n: Complex64, top: f64, bottom: f64, k0: f64, variant: Variant) -> Complex64 {
    let kappa = k0 * n;
    match variant {
        Variant::Paper => {
            (-I * 0.5 * kappa * (top + 3.0 * bottom)).exp() - (-I * 0.5 * kappa * (3.0 * top + bottom)).exp()
        }
        Variant::Derived => {
            let thick = top - bottom;
            if thick == 0.0 {
                return 2.0 * I * kappa * (-2.0 * I * kappa * bottom).exp();
            }
            ((-2.0 * I * kappa * bottom).exp() - (-2.0 * I * kappa * top).exp()) / thick
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::{Layer, MediumStack, RandomSublayer};
    use crate::spectra::DispersionModel;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn plain_layer(n: Complex64, z: f64) -> Layer {
        Layer {
            optics: DispersionModel::from_index(n),
            optics_rate: ComplexTable::constant(c(0.0, 0.0)),
            boundary: LayerBoundary { z, z_rate: 0.0 },
            sublayer: None,
        }
    }

    #[test]
    fn fresnel_examples() {
        assert_eq!(fresnel(c(1.0, 0.0), c(1.0, 0.0)).unwrap(), (c(0.0, 0.0), c(1.0, 0.0)));
        let (r, t) = fresnel(c(1.0, 0.0), c(3.0, 0.0)).unwrap();
        assert_eq!((r, t), (c(-0.5, 0.0), c(0.5, 0.0)));
        let (r, t_ab) = fresnel(c(1.5, 0.0), c(1.0, 0.0)).unwrap();
        let (_, t_ba) = fresnel(c(1.0, 0.0), c(1.5, 0.0)).unwrap();
        assert!((r - c(0.2, 0.0)).norm() < 1e-15 && (t_ab - c(1.2, 0.0)).norm() < 1e-15);
        assert!((r * r + t_ab * t_ba - 1.0).norm() < 1e-15);
        assert!(matches!(
            fresnel(c(1.0, 0.0), c(-1.0, 0.0)),
            Err(Error::DegenerateInterface)
        ));
    }

    #[test]
    fn single_interface_examples() {
        let one = c(1.0, 0.0);
        let (r, _) = single_interface_response(1.0, one, c(1.3, 0.1), c(1.3, 0.1), 0.4).unwrap();
        assert_eq!(r, c(0.0, 0.0));
        let (r, _) = single_interface_response(1.0, one, one, c(3.0, 0.0), 0.0).unwrap();
        assert_eq!(r, c(-0.5, 0.0));
        // 2 k0 z = pi
        let (r, _) = single_interface_response(1.0, one, one, c(3.0, 0.0), PI / 2.0).unwrap();
        assert!((r - c(0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn series_without_lower_reflection_is_one_term() {
        let upper = TwoPort::interface(c(1.0, 0.0), c(2.0, 0.0), 0.0).unwrap();
        let lower = TwoPort::load(c(0.0, 0.0), -1.0);
        let (r, n) = series_reflectance(&upper, &lower, c(0.3, 0.2), 1e-15, 100).unwrap();
        assert_eq!(r, upper.r_top);
        assert_eq!(n, 1);
    }

    #[test]
    fn quarter_and_half_wave_slabs() {
        let upper = TwoPort::interface(c(1.0, 0.0), c(2.0, 0.0), 0.0).unwrap();
        let lower = TwoPort::interface(c(2.0, 0.0), c(1.0, 0.0), -1.0).unwrap();
        // p^2 = -1
        let p = Complex64::from_polar(1.0, PI / 2.0);
        let (r, _) = series_reflectance(&upper, &lower, p, 1e-16, 10_000).unwrap();
        assert!((r - c(-0.6, 0.0)).norm() < 1e-12);
        assert!((closed_form_reflectance(&upper, &lower, p) - c(-0.6, 0.0)).norm() < 1e-12);
        // p^2 = 1
        let (r, _) = series_reflectance(&upper, &lower, c(1.0, 0.0), 1e-16, 10_000).unwrap();
        assert!(r.norm() < 1e-12);
    }

    #[test]
    fn series_guards() {
        let upper = TwoPort {
            r_top: c(0.1, 0.0),
            t_down: c(1.0, 0.0),
            r_bottom: c(1.0, 0.0),
            t_up: c(1.0, 0.0),
            z_top: 0.0,
            z_bottom: 0.0,
        };
        let lower = TwoPort::load(c(1.0, 0.0), -1.0);
        assert!(matches!(
            series_reflectance(&upper, &lower, c(1.0, 0.0), 1e-12, 100),
            Err(Error::SeriesDiverges { .. })
        ));
        let lower = TwoPort::load(c(0.999, 0.0), -1.0);
        assert!(matches!(
            series_reflectance(&upper, &lower, c(1.0, 0.0), 1e-12, 100),
            Err(Error::MaxTermsExceeded { .. })
        ));
    }

    #[test]
    fn single_interface_stack_matches_closed_form() {
        let stack = MediumStack::new(vec![plain_layer(c(1.5, 0.02), 0.3)]);
        let cs = stack.compress(0.0).unwrap();
        for mode in [Mode::Series, Mode::Oracle] {
            let r = stack_response(&cs, 1.7, 1.0, mode, Variant::Derived).unwrap();
            let (expect, _) = single_interface_response(1.7, c(1.0, 0.0), c(1.0, 0.0), c(1.5, 0.02), 0.3).unwrap();
            assert!((r - expect).norm() < 1e-14, "{mode:?}");
        }
    }

    #[test]
    fn vacuum_stack_is_silent() {
        let stack = MediumStack::new(vec![plain_layer(c(1.0, 0.0), 0.3), plain_layer(c(1.0, 0.0), -0.3)]);
        let cs = stack.compress(0.0).unwrap();
        for mode in [Mode::Series, Mode::Oracle] {
            assert_eq!(
                stack_response(&cs, 1.0, 1.0, mode, Variant::Derived).unwrap().norm(),
                0.0
            );
        }
        let empty = MediumStack::new(vec![]);
        assert_eq!(
            stack_response(&empty.compress(0.0).unwrap(), 1.0, 1.0, Mode::Series, Variant::Derived).unwrap(),
            c(0.0, 0.0)
        );
    }

    fn sub_stack(variant_rho: f64) -> MediumStack {
        let mut l = plain_layer(c(1.4, 0.01), 1.0);
        l.sublayer = Some(RandomSublayer {
            rho: variant_rho,
            nu: DispersionModel::from_index(c(1.6, 0.0)),
            nu_rate: ComplexTable::constant(c(0.0, 0.0)),
            top: 0.6,
            top_rate: 0.1,
            bottom: 0.4,
            bottom_rate: 0.3,
            radius: 0.05,
        });
        MediumStack::new(vec![l, plain_layer(c(1.7, 0.0), 0.0)])
    }

    #[test]
    fn sublayer_stack_series_matches_oracle() {
        let stack = sub_stack(20.0);
        let cs = stack.compress(0.0).unwrap();
        for variant in [Variant::Derived] {
            for &w in &[0.5, 1.0, 3.0] {
                let a = stack_response(&cs, w, 1.0, Mode::Series, variant).unwrap();
                let b = stack_response(&cs, w, 1.0, Mode::Oracle, variant).unwrap();
                assert!((a - b).norm() < 1e-12);
            }
        }
        let stack = sub_stack(1e-4);
        let cs = stack.compress(0.0).unwrap();
        let a = stack_response(&cs, 1.0, 1.0, Mode::Series, Variant::Paper).unwrap();
        let b = stack_response(&cs, 1.0, 1.0, Mode::Oracle, Variant::Paper).unwrap();
        assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn sublayer_two_port_matches_expected_scatter() {
        let sub = CompressedSublayer {
            rho: 10.0,
            top: 0.6,
            bottom: 0.4,
            radius: 0.03,
        };
        let (n, phi, k0) = (c(1.3, 0.01), c(0.1, 0.02), 1.7);
        for variant in [Variant::Paper, Variant::Derived] {
            let port = TwoPort::sublayer(&sub, n, phi, k0, variant);
            let kappa = k0 * n;
            // unit down amplitude at zeta: f = exp(i kappa zeta)
            let f = (I * kappa * sub.top).exp();
            let x3 = 0.9;
            let refl = expected_scatter(&sub, n, phi, f, k0, x3, Side::Reflect, variant).unwrap();
            let expect = port.r_top * (I * kappa * (x3 - sub.top)).exp();
            assert!((refl - expect).norm() < 1e-12 * expect.norm());
            let x3 = 0.1;
            let trans = expected_scatter(&sub, n, phi, f, k0, x3, Side::Transmit, variant).unwrap()
                + f * (-I * kappa * x3).exp();
            let expect = port.t_down * (-I * kappa * (x3 - sub.bottom)).exp();
            assert!((trans - expect).norm() < 1e-12 * expect.norm());
        }
    }

    #[test]
    fn expected_scatter_vanishes_without_contrast_or_thickness() {
        let sub = CompressedSublayer {
            rho: 10.0,
            top: 0.6,
            bottom: 0.4,
            radius: 0.01,
        };
        let thin = CompressedSublayer {
            top: 0.5,
            bottom: 0.5,
            ..sub
        };
        for variant in [Variant::Paper, Variant::Derived] {
            for side in [Side::Reflect, Side::Transmit] {
                let x3 = if side == Side::Reflect { 1.0 } else { 0.0 };
                let v = expected_scatter(&sub, c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), 1.0, x3, side, variant).unwrap();
                assert_eq!(v.norm(), 0.0);
                let v = expected_scatter(&thin, c(1.0, 0.0), c(0.1, 0.0), c(1.0, 0.0), 1.0, x3, side, variant).unwrap();
                assert!(v.norm() < 1e-15);
            }
        }
        assert!(matches!(
            expected_scatter(
                &sub,
                c(1.0, 0.0),
                c(0.1, 0.0),
                c(1.0, 0.0),
                1.0,
                0.6,
                Side::Reflect,
                Variant::Paper
            ),
            Err(Error::GeometryViolated(_))
        ));
        assert!(matches!(
            expected_scatter(
                &sub,
                c(1.0, 0.0),
                c(0.1, 0.0),
                c(1.0, 0.0),
                1.0,
                0.395,
                Side::Transmit,
                Variant::Derived
            ),
            Err(Error::GeometryViolated(_))
        ));
    }

    #[test]
    fn datum_m0_examples() {
        let idx = |n: f64, r: f64| ComplexIndex::new(c(n, 0.0), c(r, 0.0));
        for d in [-3.0, 0.0, 2.5] {
            assert_eq!(datum_m0(idx(1.0, 0.0), 0.7, 1.3, d).unwrap().norm(), 0.0);
        }
        assert_eq!(datum_m0(idx(3.0, 0.0), 0.0, 1.0, 0.0).unwrap(), c(0.5, 0.0));
        let v = datum_m0(idx(1.5, 0.1), 0.0, 1.0, 1.0).unwrap();
        assert!((v - c(0.6 / 2.6, 0.0)).norm() < 1e-15);
        assert!((v.re - 0.230_769_2).abs() < 1e-7);
        assert!(matches!(datum_m0(idx(-1.0, 0.0), 0.0, 1.0, 0.0), Err(Error::PoleHit)));
        // Moebius limit |m0| -> 1
        let v = datum_m0(idx(1.5, 1.0), 0.3, 1.0, 1e6).unwrap();
        assert!((v.norm() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn datum_mj_examples() {
        let a = ComplexIndex::new(c(1.4, 0.01), c(0.0, 0.01));
        let b = ComplexIndex::new(c(1.7, 0.0), c(0.05, 0.0));
        let bd = LayerBoundary { z: -0.2, z_rate: 0.02 };
        assert_eq!(datum_mj(a, a, bd, 1.0, 0.7).unwrap().norm(), 0.0);
        // delta = 0 with upper index 1 reproduces the m0 pattern
        let vac = ComplexIndex::new(c(1.0, 0.0), c(0.0, 0.0));
        let v = datum_mj(vac, b, LayerBoundary { z: 0.3, z_rate: 0.0 }, 1.2, 0.0).unwrap();
        let w = datum_m0(b, 0.3, 1.2, 0.0).unwrap();
        assert!((v - w).norm() < 1e-15);
        // log-magnitude slope from the decay exponent, with equal Fresnel factors
        let upper = ComplexIndex::new(c(1.4, 0.0), c(0.0, 0.01));
        let lower = ComplexIndex::new(c(1.7, 0.0), c(0.0, 0.01));
        let bd = LayerBoundary { z: -0.2, z_rate: 0.0 };
        let k0 = 1.5;
        let (d1, d2) = (0.3, 0.6);
        let l1 = datum_mj(upper, lower, bd, k0, d1).unwrap().norm().ln();
        let l2 = datum_mj(upper, lower, bd, k0, d2).unwrap().norm().ln();
        let r = |d: f64| {
            let (na, nb) = (upper.at(d), lower.at(d));
            ((nb - na) / (nb + na)).norm().ln()
        };
        let slope = ((l2 - r(d2)) - (l1 - r(d1))) / (d2 - d1);
        assert!((slope - 2.0 * k0 * 0.01 * bd.z).abs() < 1e-12);
    }

    #[test]
    #[allow(non_snake_case)]
    fn datum_Mj_examples() {
        let host = ComplexIndex::new(c(1.4, 0.0), c(0.0, 0.01));
        let s = SublayerParams {
            rho: 3.0,
            nu: ComplexIndex::new(c(1.6, 0.0), c(0.0, 0.02)),
            top: LayerBoundary { z: 0.6, z_rate: 0.1 },
            bottom: LayerBoundary { z: 0.4, z_rate: 0.3 },
        };
        let v = datum_Mj(&s, host, 1.0, 0.0, Variant::Paper).unwrap();
        // the exponents carry the host index: 1.4 * 0.9 and 1.4 * 1.1
        let expect = 1.8 * ((-1.26 * I).exp() - (-1.54 * I).exp());
        assert!((v - expect).norm() < 1e-14);

        let invisible = SublayerParams { nu: host, ..s };
        for variant in [Variant::Paper, Variant::Derived] {
            for d in [-1.0, 0.0, 0.5] {
                assert_eq!(datum_Mj(&invisible, host, 1.3, d, variant).unwrap().norm(), 0.0);
            }
        }
        let flat = SublayerParams {
            top: LayerBoundary { z: 0.5, z_rate: 0.2 },
            bottom: LayerBoundary { z: 0.5, z_rate: 0.2 },
            ..s
        };
        assert!(datum_Mj(&flat, host, 1.0, 0.3, Variant::Paper).unwrap().norm() < 1e-15);
        // derived limit against a tiny positive thickness
        let lim = datum_Mj(&flat, host, 1.0, 0.3, Variant::Derived).unwrap();
        let near = SublayerParams {
            top: LayerBoundary {
                z: 0.5 + 1e-7,
                z_rate: 0.2,
            },
            ..flat
        };
        let approx = datum_Mj(&near, host, 1.0, 0.3, Variant::Derived).unwrap();
        assert!((lim - approx).norm() < 1e-5 * lim.norm());
        let bad = SublayerParams {
            top: s.bottom,
            bottom: s.top,
            ..s
        };
        assert!(matches!(
            datum_Mj(&bad, host, 1.0, 0.0, Variant::Paper),
            Err(Error::GeometryViolated(_))
        ));
    }

    /// Two-exponential fit by Prony's method on a uniform k0 sweep; returns
    /// the exponent coefficients `a` in `exp(-i k0 a)`.
    fn prony_exponents(f: impl Fn(f64) -> Complex64) -> [f64; 2] {
        let dk = 0.05;
        let s: Vec<Complex64> = (0..12).map(|k| f(0.5 + dk * k as f64)).collect();
        // s[k+2] = p1 s[k+1] + p0 s[k], least squares over all k
        let mut a = nalgebra::DMatrix::<Complex64>::zeros(s.len() - 2, 2);
        let mut b = nalgebra::DVector::<Complex64>::zeros(s.len() - 2);
        for k in 0..s.len() - 2 {
            a[(k, 0)] = s[k + 1];
            a[(k, 1)] = s[k];
            b[k] = s[k + 2];
        }
        let sol = a.svd(true, true).solve(&b, 1e-14).unwrap();
        let (p1, p0) = (sol[0], sol[1]);
        let disc = (p1 * p1 + 4.0 * p0).sqrt();
        let roots = [(p1 + disc) / 2.0, (p1 - disc) / 2.0];
        let mut out = roots.map(|l| -l.arg() / dk);
        out.sort_by(|x, y| x.partial_cmp(y).unwrap());
        out
    }

    #[test]
    fn paper_and_derived_share_two_exponential_structure() {
        let sub = CompressedSublayer {
            rho: 1.0,
            top: 0.6,
            bottom: 0.4,
            radius: 0.0,
        };
        let phi = c(0.1, 0.0);
        let n = c(1.0, 0.0);
        let paper = prony_exponents(|k0| {
            let v = expected_scatter(&sub, n, phi, c(1.0, 0.0), k0, 0.0 + 1.0, Side::Reflect, Variant::Paper).unwrap();
            v * (-I * k0 * 1.0).exp()
        });
        let (zt, zb) = (sub.top, sub.bottom);
        assert!((paper[0] - 0.5 * (zt + 3.0 * zb)).abs() < 1e-8);
        assert!((paper[1] - 0.5 * (3.0 * zt + zb)).abs() < 1e-8);
        let derived_sub = CompressedSublayer { radius: 0.01, ..sub };
        let derived = prony_exponents(|k0| {
            let v = expected_scatter(
                &derived_sub,
                n,
                phi,
                c(1.0, 0.0),
                k0,
                1.0,
                Side::Reflect,
                Variant::Derived,
            )
            .unwrap();
            v * (-I * k0 * 1.0).exp() / form_factor(c(2.0 * 0.01 * k0, 0.0))
        });
        assert!((derived[0] - 2.0 * zb).abs() < 1e-8);
        assert!((derived[1] - 2.0 * zt).abs() < 1e-8);
    }

    proptest! {
        #[test]
        fn stokes_relation(ar in 0.2f64..4.0, ai in 0.0f64..1.0, br in 0.2f64..4.0, bi in 0.0f64..1.0) {
            let (na, nb) = (c(ar, ai), c(br, bi));
            let (r, t_ab) = fresnel(na, nb).unwrap();
            let (r2, t_ba) = fresnel(nb, na).unwrap();
            prop_assert!((r * r + t_ab * t_ba - 1.0).norm() < 1e-12);
            prop_assert!((r + r2).norm() < 1e-15);
            prop_assert!((t_ab - 1.0 - r).norm() < 1e-15);
        }

        #[test]
        fn series_matches_closed_form(
            rt in 0.0f64..1.0, rt_arg in 0.0f64..6.3,
            rb in 0.0f64..1.0, rb_arg in 0.0f64..6.3,
            rl in 0.0f64..1.0, rl_arg in 0.0f64..6.3,
            pm in 0.1f64..1.0, p_arg in 0.0f64..6.3,
            t1 in 0.1f64..2.0, t2 in 0.1f64..2.0,
        ) {
            let p = Complex64::from_polar(pm, p_arg);
            let upper = TwoPort {
                r_top: Complex64::from_polar(rt, rt_arg),
                t_down: c(t1, 0.1),
                r_bottom: Complex64::from_polar(rb, rb_arg),
                t_up: c(t2, -0.2),
                z_top: 0.0,
                z_bottom: 0.0,
            };
            let lower = TwoPort::load(Complex64::from_polar(rl, rl_arg), -1.0);
            prop_assume!((upper.r_bottom * lower.r_top * p * p).norm() <= 0.95);
            let tol = 1e-13;
            let (s, _) = series_reflectance(&upper, &lower, p, tol, SERIES_MAX_TERMS).unwrap();
            prop_assert!((s - closed_form_reflectance(&upper, &lower, p)).norm() < tol);
        }
    }
}
