//! Monte Carlo check of the ensemble-averaged Born field of a random slab.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{gauss_legendre, mapped};
use crate::spectra::form_factor;

const I: Complex64 = Complex64::new(0.0, 0.0 + 1.0);

/// Free-space Helmholtz kernel `exp(i kappa r) / (4 pi r)`.
pub fn green(kappa: Complex64, r: f64) -> Result<Complex64> {
    if r == 0.0 {
        return Err(Error::OriginSingularity);
    }
    Ok((I * kappa * r).exp() / (4.0 * PI * r))
}

/// Slab of particles shared by every box size of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlabTemplate {
    /// Particles per unit horizontal area.
    pub rho: f64,
    #[serde(rename = "Z")]
    pub bottom: f64,
    #[serde(rename = "zeta")]
    pub top: f64,
    #[serde(rename = "R")]
    pub radius: f64,
}

impl SlabTemplate {
    pub fn geometry(&self, side: f64) -> Result<McGeometry> {
        McGeometry::new(self.rho, side, self.bottom, self.top, self.radius)
    }
}

/// Sampling box `[-L/2, L/2]^2 x [Z, zeta]` holding `N` balls of radius `R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McGeometry {
    pub side: f64,
    pub count: usize,
    pub bottom: f64,
    pub top: f64,
    pub radius: f64,
}

impl McGeometry {
    pub fn new(rho: f64, side: f64, bottom: f64, top: f64, radius: f64) -> Result<Self> {
        if !(bottom < top) {
            return Err(Error::GeometryViolated(format!("need Z < zeta, got {bottom} >= {top}")));
        }
        if !(radius >= 0.0 && radius < 0.5 * (top - bottom)) {
            return Err(Error::GeometryViolated(format!(
                "radius {radius} must be below half the slab thickness"
            )));
        }
        if !(side > 0.0 && rho >= 0.0) {
            return Err(Error::InvalidInput("box side and density must be positive".into()));
        }
        Ok(Self {
            side,
            count: (rho * side * side).round() as usize,
            bottom,
            top,
            radius,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleConfiguration {
    pub positions: Vec<[f64; 3]>,
}

/// Independent uniform draws from the box. Particle `l` of stream `stream`
/// always reads the same generator block, so any subset can be replayed.
pub fn sample_configuration(geom: &McGeometry, seed: u64, stream: u64) -> ParticleConfiguration {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let h = 0.5 * geom.side;
    let horiz = Uniform::new(-h, h).expect("positive side");
    let vert = Uniform::new(geom.bottom, geom.top).expect("ordered slab");
    let positions = (0..geom.count)
        .map(|l| {
            rng.set_word_pos(16 * l as u128);
            [horiz.sample(&mut rng), horiz.sample(&mut rng), vert.sample(&mut rng)]
        })
        .collect();
    ParticleConfiguration { positions }
}

/// Pairs of balls that intersect.
pub fn count_overlaps(config: &ParticleConfiguration, radius: f64) -> usize {
    let mut pts = config.positions.clone();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let d = 2.0 * radius;
    let mut count = 0;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            if pts[j][0] - pts[i][0] >= d {
                break;
            }
            let dist2: f64 = (0..3).map(|k| (pts[j][k] - pts[i][k]).powi(2)).sum();
            if dist2 < d * d {
                count += 1;
            }
        }
    }
    count
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BallMethod {
    Quadrature,
    #[default]
    Formfactor,
}

impl std::str::FromStr for BallMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadrature" => Ok(BallMethod::Quadrature),
            "formfactor" => Ok(BallMethod::Formfactor),
            other => Err(Error::InvalidInput(format!("unknown ball method {other:?}"))),
        }
    }
}

/// Tensor Gauss–Legendre rule over the unit ball in `(r, cos theta, phi)`.
#[derive(Debug, Clone)]
pub struct BallRule {
    /// Points `u / R` and weights for a unit ball.
    points: Vec<([f64; 3], f64)>,
}

impl BallRule {
    pub fn new(order: usize) -> Self {
        let (x, w) = gauss_legendre(order);
        let mut points = Vec::with_capacity(order.pow(3));
        for (r, wr) in mapped(&x, &w, 0.0, 1.0) {
            for (mu, wm) in mapped(&x, &w, -1.0, 1.0) {
                let s = (1.0 - mu * mu).sqrt();
                for (phi, wp) in mapped(&x, &w, 0.0, 2.0 * PI) {
                    points.push(([r * s * phi.cos(), r * s * phi.sin(), r * mu], wr * wm * wp * r * r));
                }
            }
        }
        Self { points }
    }
}

impl Default for BallRule {
    fn default() -> Self {
        Self::new(24)
    }
}

/// `int_{B_R(0)} G(kappa, X - u) exp(-i kappa u3) du`.
pub fn ball_source_integral(kappa: Complex64, x: [f64; 3], radius: f64, method: BallMethod) -> Result<Complex64> {
    match method {
        BallMethod::Quadrature => ball_quadrature(kappa, x, radius, &BallRule::default()),
        BallMethod::Formfactor => ball_formfactor(kappa, x, radius),
    }
}

pub fn ball_quadrature(kappa: Complex64, x: [f64; 3], radius: f64, rule: &BallRule) -> Result<Complex64> {
    let dist = norm(x);
    if dist <= radius {
        return Err(Error::InsideBall);
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for (p, w) in &rule.points {
        let u = [p[0] * radius, p[1] * radius, p[2] * radius];
        let r = norm([x[0] - u[0], x[1] - u[1], x[2] - u[2]]);
        acc += w * green(kappa, r)? * (-I * kappa * u[2]).exp();
    }
    Ok(acc * radius.powi(3))
}

/// Far-field form: the momentum transfer between the incident direction
/// `-e3` and the outgoing direction `X / |X|` is `kappa sqrt(2 (1 + X3/|X|))`.
pub fn ball_formfactor(kappa: Complex64, x: [f64; 3], radius: f64) -> Result<Complex64> {
    let dist = norm(x);
    if dist <= radius {
        return Err(Error::InsideBall);
    }
    let cos = x[2] / dist;
    let q = (2.0 * (1.0 + cos)).max(0.0).sqrt();
    Ok(green(kappa, dist)? * 4.0 * PI * radius.powi(3) * form_factor(radius * kappa * q))
}

fn norm(x: [f64; 3]) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

/// Host medium, contrast and incident amplitude of a Born computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BornSetup {
    pub k0: f64,
    pub n: Complex64,
    pub phi: Complex64,
    /// Spectrum value `f(omega)` of the incident plane wave.
    pub f: Complex64,
    pub radius: f64,
    pub method: BallMethod,
}

impl BornSetup {
    pub fn kappa(&self) -> Complex64 {
        self.k0 * self.n
    }

    pub fn incident(&self, x3: f64) -> Complex64 {
        self.f * (-I * self.kappa() * x3).exp()
    }
}

/// Incident plus single-scattered field on the axis point `(0, 0, x3)`.
pub fn born_field(config: &ParticleConfiguration, setup: &BornSetup, x3: f64) -> Result<Complex64> {
    let kappa = setup.kappa();
    let rule = match setup.method {
        BallMethod::Quadrature => Some(BallRule::default()),
        BallMethod::Formfactor => None,
    };
    let mut acc = Neumaier::default();
    for s in &config.positions {
        let x = [-s[0], -s[1], x3 - s[2]];
        let ball = match &rule {
            Some(rule) => ball_quadrature(kappa, x, setup.radius, rule)?,
            None => ball_formfactor(kappa, x, setup.radius)?,
        };
        acc.add((-I * kappa * s[2]).exp() * ball);
    }
    let scale = setup.k0 * setup.k0 * setup.n * setup.n * setup.phi * setup.f;
    Ok(setup.incident(x3) + scale * acc.sum())
}

/// Compensated complex summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Neumaier {
    re: (f64, f64),
    im: (f64, f64),
}

fn neumaier_step((sum, comp): (f64, f64), x: f64) -> (f64, f64) {
    let t = sum + x;
    let c = if sum.abs() >= x.abs() {
        (sum - t) + x
    } else {
        (x - t) + sum
    };
    (t, comp + c)
}

impl Neumaier {
    pub fn add(&mut self, z: Complex64) {
        self.re = neumaier_step(self.re, z.re);
        self.im = neumaier_step(self.im, z.im);
    }

    pub fn sum(&self) -> Complex64 {
        Complex64::new(self.re.0 + self.re.1, self.im.0 + self.im.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnsembleStat {
    #[serde(rename = "L")]
    pub side: f64,
    #[serde(rename = "N")]
    pub count: usize,
    #[serde(rename = "M")]
    pub configs: usize,
    pub mean: Complex64,
    pub stderr: f64,
}

/// Mean and standard error of the Born field over `configs` independent
/// configurations for each box side. The result does not depend on the
/// size of the rayon pool.
pub fn ensemble_average(
    template: &SlabTemplate,
    sides: &[f64],
    configs: usize,
    setup: &BornSetup,
    x3: f64,
    seed: u64,
) -> Result<Vec<EnsembleStat>> {
    if configs < 2 {
        return Err(Error::InvalidInput("at least two configurations are required".into()));
    }
    let incident = setup.incident(x3);
    let mut out = Vec::with_capacity(sides.len());
    for (li, &side) in sides.iter().enumerate() {
        let geom = template.geometry(side)?;
        let samples: Vec<Complex64> = (0..configs)
            .into_par_iter()
            .map(|m| {
                let stream = ((li as u64) << 32) | m as u64;
                born_field(&sample_configuration(&geom, seed, stream), setup, x3).map(|u| u - incident)
            })
            .collect::<Result<_>>()?;
        // spread taken on the scattered part so the incident term adds no rounding
        let (scattered, stderr) = mean_and_stderr(&samples);
        let mean = incident + scattered;
        out.push(EnsembleStat {
            side,
            count: geom.count,
            configs,
            mean,
            stderr,
        });
    }
    Ok(out)
}

pub fn mean_and_stderr(samples: &[Complex64]) -> (Complex64, f64) {
    let m = samples.len() as f64;
    let mut acc = Neumaier::default();
    samples.iter().for_each(|&s| acc.add(s));
    let mean = acc.sum() / m;
    let mut var = Neumaier::default();
    samples
        .iter()
        .for_each(|&s| var.add(Complex64::new((s - mean).norm_sqr(), 0.0)));
    let stderr = if samples.len() > 1 {
        (var.sum().re / (m - 1.0) / m).sqrt()
    } else {
        0.0
    };
    (mean, stderr)
}

/// Exact expectation of the form-factor Born field for uniform positions in
/// the finite box, by deterministic quadrature. The horizontal integral
/// reduces to one over the distance `s` from the axis, weighted by the arc
/// length of the circle of radius `s` inside the square.
pub fn finite_box_expectation(template: &SlabTemplate, side: f64, setup: &BornSetup, x3: f64) -> Result<Complex64> {
    let geom = template.geometry(side)?;
    if x3 > geom.bottom - geom.radius && x3 < geom.top + geom.radius {
        return Err(Error::InsideBall);
    }
    let kappa = setup.kappa();
    let (x, w) = gauss_legendre(20);
    let half = 0.5 * side;
    let corner = half * 2f64.sqrt();
    let panels = |a: f64, b: f64| {
        let k = ((b - a) * (kappa.re.abs() + 1.0) * 2.0).ceil().max(1.0) as usize;
        (0..k).map(move |i| {
            (
                a + (b - a) * i as f64 / k as f64,
                a + (b - a) * (i + 1) as f64 / k as f64,
            )
        })
    };
    let arc = |s: f64| {
        if s <= half {
            2.0 * PI * s
        } else {
            2.0 * PI * s - 8.0 * s * (half / s).acos()
        }
    };
    let mut acc = Neumaier::default();
    for (a3, b3) in panels(geom.bottom, geom.top) {
        for (s3, w3) in mapped(&x, &w, a3, b3) {
            let src = (-I * kappa * s3).exp();
            for (a, b) in panels(0.0, half).chain(panels(half, corner)) {
                for (s, ws) in mapped(&x, &w, a, b) {
                    let ball = ball_formfactor(kappa, [s, 0.0, x3 - s3], setup.radius)?;
                    acc.add(w3 * ws * arc(s) * src * ball);
                }
            }
        }
    }
    let density = geom.count as f64 / (side * side * (geom.top - geom.bottom));
    let scale = setup.k0 * setup.k0 * setup.n * setup.n * setup.phi * setup.f * density;
    Ok(setup.incident(x3) + scale * acc.sum())
}
