use std::f64::consts::PI;

use num_complex::Complex64;

use super::{check_grid, relative_misfit, unwrap, DataGrid, DepthPrior, Flag, LayerReport, MIN_DELTAS};
use crate::error::{Error, Result};
use crate::forward::datum_mj;
use crate::lsq::{block_gauss_newton, line_fit, split_complex, BlockLayout, GaussNewtonOptions};
use crate::medium::LayerBoundary;
use crate::spectra::{ComplexIndex, ComplexTable};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Index, rate and boundary of the layer below a known layer from `m_j`
/// data. `upper[w]` is the known index of the layer above at `omegas[w]`.
pub fn recover_interface(data: &DataGrid, upper: &[ComplexIndex], prior: DepthPrior, c: f64) -> Result<LayerReport> {
    check_grid(data, MIN_DELTAS)?;
    let (nw, nd) = (data.omegas.len(), data.deltas.len());
    if upper.len() != nw {
        return Err(Error::InvalidInput(
            "known indices do not match the frequency grid".into(),
        ));
    }
    if !upper.iter().any(|n| n.n_rate.im > 0.0) {
        return Err(Error::DecayHypothesisViolated);
    }
    if data.values.iter().all(|v| v.norm() == 0.0) {
        return Err(Error::DegenerateLift);
    }

    // stage 1: the phase slope in omega at each delta gives the compressed depth
    let step = data.omegas.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let mut depths = Vec::with_capacity(nd);
    for (d, &delta) in data.deltas.iter().enumerate() {
        let feature: Vec<f64> = (0..nw)
            .map(|w| -2.0 * data.omegas[w] / c * upper[w].at(delta).re)
            .collect();
        let max_n = (0..nw).map(|w| upper[w].at(delta).re.abs()).fold(0.0, f64::max);
        let nyquist = 2.0 * step * max_n * prior.max_abs() / c;
        if nyquist >= PI {
            return Err(Error::UnwrapAliased(nyquist));
        }
        let mut phase: Vec<f64> = data.row(d).iter().map(|v| v.arg()).collect();
        unwrap(&mut phase);
        depths.push(line_fit(&feature, &phase).1);
    }
    let (z0, z_rate0) = line_fit(&data.deltas, &depths);

    // stage 2: strip the exponential and fit the lower index affinely in delta
    let mut start = vec![z0, z_rate0];
    for w in 0..nw {
        let k0 = data.omegas[w] / c;
        let (q, deltas): (Vec<Complex64>, Vec<f64>) = (0..nd)
            .map(|d| {
                let delta = data.deltas[d];
                let na = upper[w].at(delta);
                let f = data.get(d, w) * (2.0 * I * k0 * na * (z0 + delta * z_rate0)).exp();
                (na * (1.0 + f) / (1.0 - f), delta)
            })
            .unzip();
        let (nb, nb_rate) = complex_line_fit(&deltas, &q);
        start.extend([nb.re, nb.im, nb_rate.re, nb_rate.im]);
    }

    // stage 3: joint refinement
    let model = |p: &[f64], d: usize, w: usize| -> Result<Complex64> {
        let lower = ComplexIndex::new(
            Complex64::new(p[2 + 4 * w], p[3 + 4 * w]),
            Complex64::new(p[4 + 4 * w], p[5 + 4 * w]),
        );
        let boundary = LayerBoundary { z: p[0], z_rate: p[1] };
        datum_mj(upper[w], lower, boundary, data.omegas[w] / c, data.deltas[d])
    };
    let scale = vec![1.0; start.len()];
    let opts = GaussNewtonOptions {
        max_iter: 30,
        ..Default::default()
    };
    let layout = BlockLayout { global: 2, block: 4 };
    let fit = block_gauss_newton(&start, &scale, layout, opts, |p| {
        (0..nw)
            .map(|w| {
                let r = (0..nd)
                    .map(|d| Ok(model(p, d, w)? - data.get(d, w)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(split_complex(r))
            })
            .collect()
    })?;
    let p = &fit.params;
    let residual = relative_misfit(data, |d, w| model(p, d, w))?;
    let mut flags = Vec::new();
    if !fit.converged {
        flags.push(Flag::NoConvergence);
    }
    if !prior.contains(p[0]) {
        flags.push(Flag::PhaseUnwrapAmbiguous);
    }
    let n: Vec<Complex64> = (0..nw).map(|w| Complex64::new(p[2 + 4 * w], p[3 + 4 * w])).collect();
    let n_rate: Vec<Complex64> = (0..nw).map(|w| Complex64::new(p[4 + 4 * w], p[5 + 4 * w])).collect();
    Ok(LayerReport {
        n: ComplexTable::new(data.omegas.clone(), n)?,
        n_rate: ComplexTable::new(data.omegas.clone(), n_rate)?,
        z: p[0],
        z_rate: p[1],
        sublayer: None,
        residual,
        flags,
    })
}

/// Least-squares `y = a + b x` with complex `y`.
pub(crate) fn complex_line_fit(x: &[f64], y: &[Complex64]) -> (Complex64, Complex64) {
    let re: Vec<f64> = y.iter().map(|v| v.re).collect();
    let im: Vec<f64> = y.iter().map(|v| v.im).collect();
    let (ar, br) = line_fit(x, &re);
    let (ai, bi) = line_fit(x, &im);
    (Complex64::new(ar, ai), Complex64::new(br, bi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::ScanGrid;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn scene(upper: ComplexIndex, lower: ComplexIndex) -> (DataGrid, Vec<ComplexIndex>) {
        let omegas = ScanGrid::linspace(1.0, 2.0, 21);
        let bd = LayerBoundary { z: -0.2, z_rate: 0.02 };
        let data = DataGrid::from_fn(&omegas, &[-1.0, -0.5, 0.0, 0.5, 1.0], |w, d| {
            datum_mj(upper, lower, bd, w, d)
        })
        .unwrap();
        (data, vec![upper; omegas.len()])
    }

    #[test]
    fn interior_interface_round_trip() {
        let upper = ComplexIndex::new(c(1.4, 0.01), c(0.0, 0.01));
        let lower = ComplexIndex::new(c(1.7, 0.0), c(0.05, 0.0));
        let (data, known) = scene(upper, lower);
        let rep = recover_interface(&data, &known, DepthPrior::new(-1.0, 0.0), 1.0).unwrap();
        assert!((rep.z + 0.2).abs() < 1e-6 * 0.2, "{}", rep.z);
        assert!((rep.z_rate - 0.02).abs() < 1e-6 * 0.02, "{}", rep.z_rate);
        for w in 0..21 {
            assert!((rep.n.values()[w] - lower.n).norm() < 1e-6 * 1.7);
            assert!((rep.n_rate.values()[w] - lower.n_rate).norm() < 1e-6 * 0.05);
        }
        assert!(rep.residual < 1e-10 && rep.flags.is_empty(), "{:?}", rep.flags);
    }

    #[test]
    fn invisible_interface_is_rejected() {
        let upper = ComplexIndex::new(c(1.4, 0.01), c(0.0, 0.01));
        let (data, known) = scene(upper, upper);
        assert!(recover_interface(&data, &known, DepthPrior::new(-1.0, 0.0), 1.0).is_err());
    }

    #[test]
    fn needs_decay() {
        let upper = ComplexIndex::new(c(1.4, 0.01), c(0.01, 0.0));
        let lower = ComplexIndex::new(c(1.7, 0.0), c(0.05, 0.0));
        let (data, known) = scene(upper, lower);
        assert!(matches!(
            recover_interface(&data, &known, DepthPrior::new(-1.0, 0.0), 1.0),
            Err(Error::DecayHypothesisViolated)
        ));
    }
}
