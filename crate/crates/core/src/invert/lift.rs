use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{check_grid, column, relative_misfit, unwrap, DataGrid, DepthPrior, Flag, LayerReport, MIN_DELTAS};
use crate::error::{Error, Result};
use crate::forward::datum_m0;
use crate::lsq::{complex_lstsq, line_fit};
use crate::spectra::{ComplexIndex, ComplexTable};

/// Parameters of `u(delta) = P (a + delta b) / (a + delta b + 2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lift {
    pub a: Complex64,
    pub b: Complex64,
    pub p: Complex64,
    /// Root-mean-square residual of the linearised fit, zero on exact data.
    pub residual: f64,
}

/// Solves the Moebius model through the normalised linearisation
/// `u (g + delta) = s + t delta`, where `t = P`, `s = P a / b` and
/// `g = (a + 2) / b`.
pub fn mobius_lift_solve(deltas: &[f64], u: &[Complex64]) -> Result<Lift> {
    let mut distinct = deltas.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 4 || u.len() != deltas.len() {
        return Err(Error::InvalidInput(
            "the lift needs at least four distinct deltas".into(),
        ));
    }
    let one = Complex64::new(1.0, 0.0);
    let mut a = DMatrix::zeros(u.len(), 3);
    let mut rhs = DVector::zeros(u.len());
    for (k, (&d, &v)) in deltas.iter().zip(u).enumerate() {
        a[(k, 0)] = v;
        a[(k, 1)] = -one;
        a[(k, 2)] = -one * d;
        rhs[k] = -v * d;
    }
    // a constant u (no compression rate, or no signal) makes the first two columns dependent
    let sv = a.clone().singular_values();
    if sv.min() <= 1e-10 * sv.max() {
        return Err(Error::DegenerateLift);
    }
    let sol = complex_lstsq(a.clone(), &rhs)?;
    let (g, s, t) = (sol[0], sol[1], sol[2]);
    let fit = &a * &sol - &rhs;
    let residual = fit.norm() / (u.len() as f64).sqrt();
    if t.norm() == 0.0 {
        return Err(Error::DegenerateLift);
    }
    let ratio = s / t;
    let gap = g - ratio;
    if gap.norm() == 0.0 {
        return Err(Error::DegenerateLift);
    }
    let b = 2.0 / gap;
    Ok(Lift {
        a: b * ratio,
        b,
        p: t,
        residual,
    })
}

/// Depth `z` from `P(omega) = exp(-2 i omega z / c)`; the flag is set when
/// the estimate falls outside the prior.
pub fn phase_to_depth(omegas: &[f64], p: &[Complex64], prior: DepthPrior, c: f64) -> Result<(f64, bool)> {
    if omegas.len() != p.len() || omegas.is_empty() {
        return Err(Error::InvalidInput("phase samples and grid differ".into()));
    }
    let step = omegas.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let nyquist = 2.0 * step * prior.max_abs() / c;
    if nyquist >= PI {
        return Err(Error::UnwrapAliased(nyquist));
    }
    let mut phase: Vec<f64> = p.iter().map(|v| v.arg()).collect();
    unwrap(&mut phase);
    let z = if omegas.len() == 1 {
        -0.5 * c * phase[0] / omegas[0]
    } else {
        // the slope fixes the 2 pi offset at the first sample, then fit through the origin
        let (_, slope) = line_fit(omegas, &phase);
        let expected = slope * omegas[0];
        let shift = ((expected - phase[0]) / TAU).round() * TAU;
        let sxy: f64 = omegas.iter().zip(&phase).map(|(w, f)| w * (f + shift)).sum();
        let sxx: f64 = omegas.iter().map(|w| w * w).sum();
        -0.5 * c * sxy / sxx
    };
    Ok((z, !prior.contains(z)))
}

/// First-layer index, compression rate and depth from `m0` data.
pub fn recover_first_interface(data: &DataGrid, prior: DepthPrior, c: f64) -> Result<LayerReport> {
    check_grid(data, MIN_DELTAS)?;
    let mut n = Vec::with_capacity(data.omegas.len());
    let mut n_rate = Vec::with_capacity(data.omegas.len());
    let mut phases = Vec::with_capacity(data.omegas.len());
    for w in 0..data.omegas.len() {
        let lift = mobius_lift_solve(&data.deltas, &column(data, w))?;
        n.push(1.0 + lift.a);
        n_rate.push(lift.b);
        phases.push(lift.p);
    }
    let (z, ambiguous) = phase_to_depth(&data.omegas, &phases, prior, c)?;
    let idx: Vec<ComplexIndex> = n.iter().zip(&n_rate).map(|(&n, &r)| ComplexIndex::new(n, r)).collect();
    let residual = relative_misfit(data, |d, w| datum_m0(idx[w], z, data.omegas[w] / c, data.deltas[d]))?;
    let mut flags = Vec::new();
    if ambiguous {
        flags.push(Flag::PhaseUnwrapAmbiguous);
    }
    Ok(LayerReport {
        n: ComplexTable::new(data.omegas.clone(), n)?,
        n_rate: ComplexTable::new(data.omegas.clone(), n_rate)?,
        z,
        z_rate: 0.0,
        sublayer: None,
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

    fn mobius(a: Complex64, b: Complex64, p: Complex64, d: f64) -> Complex64 {
        p * (a + d * b) / (a + d * b + 2.0)
    }

    #[test]
    fn lift_examples() {
        let deltas = [-1.0, 0.0, 1.0, 2.0];
        let u: Vec<Complex64> = deltas
            .iter()
            .map(|&d| mobius(c(0.5, 0.0), c(0.1, 0.0), c(1.0, 0.0), d))
            .collect();
        let expect = [0.1666667, 0.2, 0.2307692, 0.2592593];
        for (v, e) in u.iter().zip(expect) {
            assert!((v.re - e).abs() < 1e-7);
        }
        let lift = mobius_lift_solve(&deltas, &u).unwrap();
        assert!((lift.a - c(0.5, 0.0)).norm() < 1e-10);
        assert!((lift.b - c(0.1, 0.0)).norm() < 1e-10);
        assert!((lift.p - c(1.0, 0.0)).norm() < 1e-10);

        let deltas = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let (a, b, p) = (c(0.5, 0.2), c(0.0, 0.05), Complex64::from_polar(1.0, 0.7));
        let u: Vec<Complex64> = deltas.iter().map(|&d| mobius(a, b, p, d)).collect();
        let lift = mobius_lift_solve(&deltas, &u).unwrap();
        assert!((lift.a - a).norm() < 1e-10 && (lift.b - b).norm() < 1e-10 && (lift.p - p).norm() < 1e-10);
        assert!(lift.residual < 1e-10);

        let zeros = vec![c(0.0, 0.0); 5];
        assert!(matches!(mobius_lift_solve(&deltas, &zeros), Err(Error::DegenerateLift)));
    }

    #[test]
    fn lift_without_index_contrast_uses_rate() {
        let deltas = [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0];
        let (a, b, p) = (c(0.0, 0.0), c(0.2, 0.01), Complex64::from_polar(1.0, -1.1));
        let u: Vec<Complex64> = deltas.iter().map(|&d| mobius(a, b, p, d)).collect();
        let lift = mobius_lift_solve(&deltas, &u).unwrap();
        assert!((lift.p - p).norm() < 1e-10 && (lift.b - b).norm() < 1e-10);
    }

    #[test]
    fn depth_examples() {
        let omegas = ScanGrid::linspace(1.0, 2.0, 21);
        let ones = vec![c(1.0, 0.0); omegas.len()];
        let (z, amb) = phase_to_depth(&omegas, &ones, DepthPrior::new(0.0, 0.1 * PI / 2.0), 1.0).unwrap();
        assert!(z.abs() < 1e-15 && !amb);

        let p: Vec<Complex64> = omegas.iter().map(|w| Complex64::from_polar(1.0, -1.4 * w)).collect();
        let (z, amb) = phase_to_depth(&omegas, &p, DepthPrior::new(0.0, 2.0), 1.0).unwrap();
        assert!((z - 0.7).abs() < 1e-10 && !amb);

        let (_, amb) = phase_to_depth(&omegas, &p, DepthPrior::new(0.0, 0.5), 1.0).unwrap();
        assert!(amb);

        let step = 0.05;
        assert!(matches!(
            phase_to_depth(&omegas, &p, DepthPrior::new(0.0, 10.0 * PI / step), 1.0),
            Err(Error::UnwrapAliased(_))
        ));
    }

    fn m0_grid(n: impl Fn(f64) -> Complex64, rate: Complex64, z: f64) -> DataGrid {
        let omegas = ScanGrid::linspace(1.0, 2.0, 21);
        DataGrid::from_fn(&omegas, &[-0.5, -0.25, 0.0, 0.25, 0.5], |w, d| {
            datum_m0(ComplexIndex::new(n(w), rate), z, w, d)
        })
        .unwrap()
    }

    #[test]
    fn first_interface_round_trip() {
        let data = m0_grid(|_| c(1.5, 0.0), c(0.1, 0.0), 0.3);
        let rep = recover_first_interface(&data, DepthPrior::new(-1.0, 1.0), 1.0).unwrap();
        assert!((rep.z - 0.3).abs() < 1e-8 * 0.3);
        for w in 0..21 {
            assert!((rep.n.values()[w] - c(1.5, 0.0)).norm() < 1.5e-8);
            assert!((rep.n_rate.values()[w] - c(0.1, 0.0)).norm() < 1e-9);
        }
        assert!(rep.residual < 1e-12 && rep.flags.is_empty());
    }

    #[test]
    fn first_interface_dispersive() {
        let data = m0_grid(|w| c(1.4 + 0.02 * w, 0.0), c(0.05, 0.0), 0.3);
        let rep = recover_first_interface(&data, DepthPrior::new(-1.0, 1.0), 1.0).unwrap();
        for (w, &om) in data.omegas.iter().enumerate() {
            let n = 1.4 + 0.02 * om;
            assert!((rep.n.values()[w] - c(n, 0.0)).norm() < 1e-8 * n);
        }
    }

    #[test]
    fn first_interface_needs_rate() {
        let data = m0_grid(|_| c(1.5, 0.0), c(0.0, 0.0), 0.3);
        assert!(matches!(
            recover_first_interface(&data, DepthPrior::new(-1.0, 1.0), 1.0),
            Err(Error::DegenerateLift)
        ));
    }
}
