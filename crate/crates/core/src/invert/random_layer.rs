use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{check_grid, relative_misfit, unwrap, DataGrid, DepthPrior, Flag, SublayerReport, MIN_DELTAS};
use crate::error::{Error, Result};
use crate::forward::{datum_Mj, sublayer_shape, SublayerParams, Variant};
use crate::lsq::{
    block_gauss_newton, complex_lstsq, gauss_newton, line_fit, split_complex, BlockLayout, GaussNewtonOptions,
};
use crate::medium::LayerBoundary;
use crate::spectra::{ComplexIndex, ComplexTable};

/// Density and particle index from the coefficients of
/// `rho (nu(delta)^2 - n(delta)^2) = c0 + c1 delta + c2 delta^2`.
pub fn solve_rho_nu(
    c0: Complex64,
    c1: Complex64,
    c2: Complex64,
    n: Complex64,
    n_rate: Complex64,
) -> Result<(f64, Complex64, Complex64)> {
    solve_rho_nu_tol(c0, c1, c2, n, n_rate, 1e-6)
}

pub(crate) fn solve_rho_nu_tol(
    c0: Complex64,
    c1: Complex64,
    c2: Complex64,
    n: Complex64,
    n_rate: Complex64,
    tol: f64,
) -> Result<(f64, Complex64, Complex64)> {
    let den = c1 * n * n_rate - c0 * n_rate * n_rate - c2 * n * n;
    let size = (c0.norm() + c1.norm() + c2.norm()) * (n.norm() + n_rate.norm()).powi(2);
    if den.norm() <= 1e-12 * size || size == 0.0 {
        return Err(Error::ContrastDegenerate);
    }
    let rho = (c0 * c2 - 0.25 * c1 * c1) / den;
    if rho.im.abs() > tol * rho.norm() || rho.re <= 0.0 {
        return Err(Error::NonPhysicalDensity(rho));
    }
    let (nu, nu_rate) = particle_index(rho.re, c0, c1, n, n_rate);
    Ok((rho.re, nu, nu_rate))
}

/// `nu` and `nu'` for a known density, principal branch `Re nu > 0`.
fn particle_index(rho: f64, c0: Complex64, c1: Complex64, n: Complex64, n_rate: Complex64) -> (Complex64, Complex64) {
    let mut nu = (c0 / rho + n * n).sqrt();
    if nu.re < 0.0 {
        nu = -nu;
    }
    (nu, (c1 / (2.0 * rho) + n * n_rate) / nu)
}

/// Sublayer geometry in centre/half-thickness form.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    mid: f64,
    mid_rate: f64,
    half: f64,
    half_rate: f64,
}

impl Geometry {
    fn from_slice(p: &[f64]) -> Self {
        Self {
            mid: p[0],
            mid_rate: p[1],
            half: p[2],
            half_rate: p[3],
        }
    }

    fn top(&self) -> LayerBoundary {
        LayerBoundary {
            z: self.mid + self.half,
            z_rate: self.mid_rate + self.half_rate,
        }
    }

    fn bottom(&self) -> LayerBoundary {
        LayerBoundary {
            z: self.mid - self.half,
            z_rate: self.mid_rate - self.half_rate,
        }
    }
}

struct Problem<'a> {
    data: &'a DataGrid,
    host: &'a [ComplexIndex],
    variant: Variant,
    c: f64,
}

impl Problem<'_> {
    fn shape(&self, g: &Geometry, d: usize, w: usize) -> Complex64 {
        let delta = self.data.deltas[d];
        sublayer_shape(
            self.host[w].at(delta),
            g.top().at(delta),
            g.bottom().at(delta),
            self.data.omegas[w] / self.c,
            self.variant,
        )
    }

    /// Quadratic amplitude per frequency fitted for fixed geometry, and the
    /// stacked residuals of that fit.
    fn project(&self, g: &Geometry) -> Result<(Vec<[Complex64; 3]>, Vec<f64>)> {
        let (nw, nd) = (self.data.omegas.len(), self.data.deltas.len());
        let mut coeffs = Vec::with_capacity(nw);
        let mut res = Vec::with_capacity(2 * nw * nd);
        for w in 0..nw {
            let mut a = DMatrix::zeros(nd, 3);
            let mut b = DVector::zeros(nd);
            for d in 0..nd {
                let s = self.shape(g, d, w);
                let delta = self.data.deltas[d];
                a[(d, 0)] = s;
                a[(d, 1)] = s * delta;
                a[(d, 2)] = s * delta * delta;
                b[d] = self.data.get(d, w);
            }
            let c = complex_lstsq(a.clone(), &b)?;
            let r = &a * &c - &b;
            res.extend(split_complex(r.iter().copied()));
            coeffs.push([c[0], c[1], c[2]]);
        }
        Ok((coeffs, res))
    }

    fn admissible(&self, g: &Geometry) -> bool {
        self.data.deltas.iter().all(|&d| g.half + d * g.half_rate > 0.0)
    }
}

/// Full parameter set of a sublayer at every grid frequency.
fn unpack(p: &[f64], nw: usize) -> (f64, LayerBoundary, LayerBoundary, Vec<ComplexIndex>) {
    let nu = (0..nw)
        .map(|w| {
            let o = 5 + 4 * w;
            ComplexIndex::new(Complex64::new(p[o], p[o + 1]), Complex64::new(p[o + 2], p[o + 3]))
        })
        .collect();
    (
        p[0],
        LayerBoundary { z: p[1], z_rate: p[2] },
        LayerBoundary { z: p[3], z_rate: p[4] },
        nu,
    )
}

/// Density, particle index and compressed geometry of a random sublayer
/// from `M_j` data; `host[w]` is the known host index at `omegas[w]` and
/// `prior` bounds the sublayer depth.
pub fn recover_random_layer(
    data: &DataGrid,
    host: &[ComplexIndex],
    variant: Variant,
    prior: DepthPrior,
    c: f64,
) -> Result<SublayerReport> {
    check_grid(data, MIN_DELTAS)?;
    let (nw, nd) = (data.omegas.len(), data.deltas.len());
    if host.len() != nw {
        return Err(Error::InvalidInput(
            "known indices do not match the frequency grid".into(),
        ));
    }
    if data.values.iter().all(|v| v.norm() == 0.0) {
        return Err(Error::ContrastDegenerate);
    }
    let problem = Problem { data, host, variant, c };

    // stage 1: the phase slope in omega gives the compressed centre
    let mut centres = Vec::with_capacity(nd);
    for (d, &delta) in data.deltas.iter().enumerate() {
        let feature: Vec<f64> = (0..nw)
            .map(|w| -2.0 * data.omegas[w] / c * host[w].at(delta).re)
            .collect();
        let mut phase: Vec<f64> = data.row(d).iter().map(|v| v.arg()).collect();
        unwrap(&mut phase);
        centres.push(line_fit(&feature, &phase).1);
    }
    let (mid, mid_rate) = line_fit(&data.deltas, &centres);

    // half-thickness at the two extreme compressions by a coarse log-log
    // search with amplitudes projected out, then Gauss-Newton from the best
    // local minima of the search
    let d_hi = data.deltas.iter().cloned().fold(f64::MIN, f64::max);
    let d_lo = data.deltas.iter().cloned().fold(f64::MAX, f64::min);
    let half_max = 0.5 * (prior.hi - prior.lo).abs().max(1e-6);
    const STEPS: usize = 40;
    let level = |i: usize| half_max * 1e-3f64.powf(1.0 - i as f64 / (STEPS - 1) as f64);
    let geometry = |i: usize, k: usize| {
        let (a, b) = (level(i), level(k));
        let rate = (b - a) / (d_hi - d_lo);
        Geometry {
            mid,
            mid_rate,
            half: a - rate * d_lo,
            half_rate: rate,
        }
    };
    let mut costs = vec![f64::INFINITY; STEPS * STEPS];
    for i in 0..STEPS {
        for k in 0..STEPS {
            let cost: f64 = problem.project(&geometry(i, k))?.1.iter().map(|v| v * v).sum();
            if cost.is_finite() {
                costs[i * STEPS + k] = cost;
            }
        }
    }
    let mut minima: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..STEPS {
        for k in 0..STEPS {
            let v = costs[i * STEPS + k];
            let lower_neighbour = (i.saturating_sub(1)..=(i + 1).min(STEPS - 1))
                .flat_map(|a| (k.saturating_sub(1)..=(k + 1).min(STEPS - 1)).map(move |b| (a, b)))
                .any(|(a, b)| costs[a * STEPS + b] < v);
            if v.is_finite() && !lower_neighbour {
                minima.push((v, i, k));
            }
        }
    }
    minima.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut geo: Option<crate::lsq::GaussNewtonResult> = None;
    for &(_, i, k) in minima.iter().take(6) {
        let g0 = geometry(i, k);
        let start = [g0.mid, g0.mid_rate, g0.half, g0.half_rate];
        let run = gauss_newton(
            &start,
            &[1.0, 1.0, g0.half, g0.half],
            GaussNewtonOptions::default(),
            |p| {
                let g = Geometry::from_slice(p);
                if !problem.admissible(&g) {
                    return Err(Error::GeometryViolated("sublayer inverted on the grid".into()));
                }
                Ok(problem.project(&g)?.1)
            },
        );
        if let Ok(run) = run {
            if geo.as_ref().is_none_or(|g| run.cost < g.cost) {
                geo = Some(run);
            }
        }
    }
    let geo = geo.ok_or_else(|| Error::NoConvergence("sublayer geometry search".into()))?;
    let g = Geometry::from_slice(&geo.params);
    let (coeffs, _) = problem.project(&g)?;

    // stage 2: density per frequency, median, then indices at that density
    let mut rhos: Vec<f64> = Vec::with_capacity(nw);
    for (w, cw) in coeffs.iter().enumerate() {
        if let Ok((rho, _, _)) = solve_rho_nu_tol(cw[0], cw[1], cw[2], host[w].n, host[w].n_rate, 0.1) {
            rhos.push(rho);
        }
    }
    if rhos.is_empty() {
        return Err(Error::ContrastDegenerate);
    }
    let mut flags = Vec::new();
    if rhos.len() < nw {
        flags.push(Flag::ContrastDegenerate);
    }
    rhos.sort_by(f64::total_cmp);
    let rho = rhos[rhos.len() / 2];
    let (top, bottom) = (g.top(), g.bottom());
    let mut start = vec![rho, top.z, top.z_rate, bottom.z, bottom.z_rate];
    for (w, cw) in coeffs.iter().enumerate() {
        let (nu, nu_rate) = particle_index(rho, cw[0], cw[1], host[w].n, host[w].n_rate);
        start.extend([nu.re, nu.im, nu_rate.re, nu_rate.im]);
    }

    // stage 3: joint refinement of every parameter
    let model = |p: &[f64], d: usize, w: usize, nu: &[ComplexIndex]| -> Result<Complex64> {
        let s = SublayerParams {
            rho: p[0],
            nu: nu[w],
            top: LayerBoundary { z: p[1], z_rate: p[2] },
            bottom: LayerBoundary { z: p[3], z_rate: p[4] },
        };
        datum_Mj(&s, host[w], data.omegas[w] / c, data.deltas[d], variant)
    };
    let mut scale = vec![rho.abs().max(1e-12), 1.0, 1.0, 1.0, 1.0];
    scale.extend(std::iter::repeat_n(1.0, 4 * nw));
    let layout = BlockLayout { global: 5, block: 4 };
    let fit = block_gauss_newton(&start, &scale, layout, GaussNewtonOptions::default(), |p| {
        let (_, _, _, nu) = unpack(p, nw);
        (0..nw)
            .map(|w| {
                let r = (0..nd)
                    .map(|d| Ok(model(p, d, w, &nu)? - data.get(d, w)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(split_complex(r))
            })
            .collect()
    })?;
    let p = fit.params;
    let (rho, top, bottom, nu) = unpack(&p, nw);
    if !fit.converged {
        flags.push(Flag::NoConvergence);
    }
    if !(bottom.z_rate > top.z_rate && top.z_rate > 0.0) {
        return Err(Error::ShrinkConditionViolated {
            top_rate: top.z_rate,
            bottom_rate: bottom.z_rate,
        });
    }
    if !(prior.contains(top.z) && prior.contains(bottom.z)) {
        flags.push(Flag::PhaseUnwrapAmbiguous);
    }
    let residual = relative_misfit(data, |d, w| model(&p, d, w, &nu))?;
    Ok(SublayerReport {
        rho,
        nu: ComplexTable::new(data.omegas.clone(), nu.iter().map(|v| v.n).collect())?,
        nu_rate: ComplexTable::new(data.omegas.clone(), nu.iter().map(|v| v.n_rate).collect())?,
        zeta: top.z,
        zeta_rate: top.z_rate,
        bottom: bottom.z,
        bottom_rate: bottom.z_rate,
        residual,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::ScanGrid;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn coefficients(rho: f64, nu: ComplexIndex, n: ComplexIndex) -> [Complex64; 3] {
        [
            rho * (nu.n * nu.n - n.n * n.n),
            2.0 * rho * (nu.n * nu.n_rate - n.n * n.n_rate),
            rho * (nu.n_rate * nu.n_rate - n.n_rate * n.n_rate),
        ]
    }

    #[test]
    fn rho_nu_example() {
        let (rho, nu, nu_rate) =
            solve_rho_nu(c(1.8, 0.0), c(0.0, 0.108), c(-0.0009, 0.0), c(1.4, 0.0), c(0.0, 0.01)).unwrap();
        assert!((rho - 3.0).abs() < 1e-10);
        assert!((nu - c(1.6, 0.0)).norm() < 1e-10);
        assert!((nu_rate - c(0.0, 0.02)).norm() < 1e-10);
        let n = ComplexIndex::new(c(1.4, 0.0), c(0.0, 0.01));
        let back = coefficients(rho, ComplexIndex::new(nu, nu_rate), n);
        let given = [c(1.8, 0.0), c(0.0, 0.108), c(-0.0009, 0.0)];
        for (a, b) in back.iter().zip(given) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn rho_nu_degenerate_and_homogeneous() {
        let z = c(0.0, 0.0);
        assert!(matches!(
            solve_rho_nu(z, z, z, c(1.4, 0.0), c(0.0, 0.01)),
            Err(Error::ContrastDegenerate)
        ));
        let (r1, nu1, nr1) =
            solve_rho_nu(c(1.8, 0.0), c(0.0, 0.108), c(-0.0009, 0.0), c(1.4, 0.0), c(0.0, 0.01)).unwrap();
        let l = 2.5;
        let (r2, nu2, nr2) = solve_rho_nu(
            c(1.8 * l, 0.0),
            c(0.0, 0.108 * l),
            c(-0.0009 * l, 0.0),
            c(1.4, 0.0),
            c(0.0, 0.01),
        )
        .unwrap();
        assert!((r2 - l * r1).abs() < 1e-9 && (nu1 - nu2).norm() < 1e-12 && (nr1 - nr2).norm() < 1e-12);
    }

    #[test]
    fn density_square_terms_cancel() {
        let (c0, c1, c2) = (c(1.8, 0.1), c(0.02, 0.108), c(-0.0009, 0.0003));
        let (n, np) = (c(1.4, 0.005), c(0.0, 0.01));
        let f = |rho: f64| (0.5 * c1 + rho * n * np).powi(2) - (c0 + rho * n * n) * (c2 + rho * np * np);
        let (a, b, cc) = (f(0.3), f(1.7), f(4.1));
        let s1 = (b - a) / 1.4;
        let s2 = (cc - b) / 2.4;
        assert!((s1 - s2).norm() < 1e-9 * s1.norm().max(1.0));
    }

    fn truth() -> (SublayerParams, ComplexIndex) {
        (
            SublayerParams {
                rho: 3.0,
                nu: ComplexIndex::new(c(1.6, 0.0), c(0.0, 0.02)),
                top: LayerBoundary { z: 0.6, z_rate: 0.1 },
                bottom: LayerBoundary { z: 0.4, z_rate: 0.3 },
            },
            ComplexIndex::new(c(1.4, 0.005), c(0.0, 0.01)),
        )
    }

    /// The sublayer closes at delta = 1, so the grid stays below it.
    pub(crate) fn deltas() -> Vec<f64> {
        vec![-2.0, -1.5, -1.0, -0.5, 0.0, 0.2, 0.4, 0.6, 0.8]
    }

    fn round_trip(variant: Variant) {
        let (s, host) = truth();
        let omegas = ScanGrid::linspace(1.0, 2.0, 21);
        let data = DataGrid::from_fn(&omegas, &deltas(), |w, d| datum_Mj(&s, host, w, d, variant)).unwrap();
        let hosts = vec![host; omegas.len()];
        let rep = recover_random_layer(&data, &hosts, variant, DepthPrior::new(0.0, 1.0), 1.0).unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
        assert!(rel(rep.rho, 3.0) < 1e-4, "rho {}", rep.rho);
        assert!(rel(rep.zeta, 0.6) < 1e-4 && rel(rep.zeta_rate, 0.1) < 1e-4, "{rep:?}");
        assert!(
            rel(rep.bottom, 0.4) < 1e-4 && rel(rep.bottom_rate, 0.3) < 1e-4,
            "{rep:?}"
        );
        for w in 0..omegas.len() {
            assert!((rep.nu.values()[w] - s.nu.n).norm() < 1e-4 * 1.6);
            assert!((rep.nu_rate.values()[w] - s.nu.n_rate).norm() < 1e-4 * 0.02);
        }
        assert!(rep.residual < 1e-8);
    }

    #[test]
    fn random_layer_round_trip_paper() {
        round_trip(Variant::Paper);
    }

    #[test]
    fn random_layer_round_trip_derived() {
        round_trip(Variant::Derived);
    }

    #[test]
    fn zero_data_is_degenerate() {
        let omegas = ScanGrid::linspace(1.0, 2.0, 21);
        let data = DataGrid::from_fn(&omegas, &deltas(), |_, _| Ok(c(0.0, 0.0))).unwrap();
        let hosts = vec![truth().1; omegas.len()];
        assert!(matches!(
            recover_random_layer(&data, &hosts, Variant::Paper, DepthPrior::new(0.0, 1.0), 1.0),
            Err(Error::ContrastDegenerate)
        ));
    }
}
