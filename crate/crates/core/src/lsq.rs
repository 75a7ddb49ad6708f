//! Linear least squares and damped Gauss–Newton.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Minimum-norm least-squares solution of `a x = b`.
pub fn complex_lstsq(a: DMatrix<Complex64>, b: &DVector<Complex64>) -> Result<DVector<Complex64>> {
    if !a.iter().chain(b.iter()).all(|v| v.re.is_finite() && v.im.is_finite()) {
        return Err(Error::NoConvergence("non-finite least-squares system".into()));
    }
    let svd = a.svd(true, true);
    let eps = svd.singular_values.max() * 1e-14;
    svd.solve(b, eps)
        .map_err(|e| Error::NoConvergence(format!("least squares: {e}")))
}

pub fn real_lstsq(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
        return Err(Error::NoConvergence("non-finite least-squares system".into()));
    }
    let svd = a.svd(true, true);
    let eps = svd.singular_values.max() * 1e-14;
    svd.solve(b, eps)
        .map_err(|e| Error::NoConvergence(format!("least squares: {e}")))
}

/// Straight-line fit `y = a + b x`.
pub fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = x.iter().map(|x| (x - mx).powi(2)).sum();
    let b = sxy / sxx;
    (my - b * mx, b)
}

#[derive(Debug, Clone, Copy)]
pub struct GaussNewtonOptions {
    pub max_iter: usize,
    /// Stop when the accepted update is below `rel_tol * (|p| + abs_floor)`.
    pub rel_tol: f64,
    pub damping_floor: f64,
}

impl Default for GaussNewtonOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            rel_tol: 1e-10,
            damping_floor: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GaussNewtonResult {
    pub params: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn cost(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Damped Gauss–Newton with a central-difference Jacobian. `scale[i]` sets
/// the finite-difference step floor of parameter `i`.
pub fn gauss_newton(
    start: &[f64],
    scale: &[f64],
    opts: GaussNewtonOptions,
    residual: impl Fn(&[f64]) -> Result<Vec<f64>>,
) -> Result<GaussNewtonResult> {
    damped(start, opts, &residual, |p, r| {
        let jac = jacobian(p, scale, r, &residual)?;
        let rhs = DVector::from_iterator(r.len(), r.iter().map(|v| -v));
        Ok(real_lstsq(jac, &rhs)?.iter().copied().collect())
    })
}

/// Parameter layout `[global..., block 0..., block 1..., ...]` where block
/// `w` only influences residual group `w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub global: usize,
    pub block: usize,
}

/// Gauss–Newton for problems with a few shared parameters and many small
/// independent blocks. Each block is eliminated by projecting its residual
/// group onto the complement of its Jacobian columns, so the cost grows
/// linearly with the number of blocks.
pub fn block_gauss_newton(
    start: &[f64],
    scale: &[f64],
    layout: BlockLayout,
    opts: GaussNewtonOptions,
    residual: impl Fn(&[f64]) -> Result<Vec<Vec<f64>>>,
) -> Result<GaussNewtonResult> {
    let nb = (start.len() - layout.global) / layout.block;
    if layout.global + nb * layout.block != start.len() {
        return Err(Error::InvalidInput(
            "parameter count does not match the block layout".into(),
        ));
    }
    let flat = |p: &[f64]| residual(p).map(|g| g.concat());
    damped(start, opts, &flat, |p, _| block_step(p, scale, layout, nb, &residual))
}

fn block_step(
    p: &[f64],
    scale: &[f64],
    layout: BlockLayout,
    nb: usize,
    residual: &impl Fn(&[f64]) -> Result<Vec<Vec<f64>>>,
) -> Result<Vec<f64>> {
    let (ng, bs) = (layout.global, layout.block);
    let r = residual(p)?;
    if r.len() != nb {
        return Err(Error::InvalidInput("residual groups do not match the blocks".into()));
    }
    let step_of = |i: usize| 1e-6 * p[i].abs().max(scale[i]);
    let mut work = p.to_vec();
    let mut jg: Vec<DMatrix<f64>> = r.iter().map(|g| DMatrix::zeros(g.len(), ng)).collect();
    for i in 0..ng {
        let h = step_of(i);
        work[i] = p[i] + h;
        let plus = residual(&work)?;
        work[i] = p[i] - h;
        let minus = residual(&work)?;
        work[i] = p[i];
        for w in 0..nb {
            for k in 0..r[w].len() {
                jg[w][(k, i)] = (plus[w][k] - minus[w][k]) / (2.0 * h);
            }
        }
    }
    let mut jb: Vec<DMatrix<f64>> = r.iter().map(|g| DMatrix::zeros(g.len(), bs)).collect();
    for j in 0..bs {
        for w in 0..nb {
            let i = ng + w * bs + j;
            work[i] = p[i] + step_of(i);
        }
        let plus = residual(&work)?;
        for w in 0..nb {
            let i = ng + w * bs + j;
            work[i] = p[i] - step_of(i);
        }
        let minus = residual(&work)?;
        for w in 0..nb {
            let i = ng + w * bs + j;
            work[i] = p[i];
            let h = step_of(i);
            for k in 0..r[w].len() {
                jb[w][(k, j)] = (plus[w][k] - minus[w][k]) / (2.0 * h);
            }
        }
    }

    // project every group onto the complement of its block columns
    let mut bases = Vec::with_capacity(nb);
    let rows: usize = r.iter().map(|g| g.len()).sum();
    let mut a = DMatrix::zeros(rows, ng);
    let mut rhs = DVector::zeros(rows);
    let mut at = 0;
    for w in 0..nb {
        if !jb[w].iter().all(|v| v.is_finite()) {
            return Err(Error::NoConvergence("non-finite Jacobian".into()));
        }
        let svd = jb[w].clone().svd(true, false);
        let u = svd.u.expect("left vectors requested");
        let tol = svd.singular_values.max() * 1e-12;
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&k| svd.singular_values[k] > tol)
            .collect();
        let q = u.select_columns(&keep);
        let rw = DVector::from_iterator(r[w].len(), r[w].iter().map(|v| -v));
        let pj = &jg[w] - &q * (q.transpose() * &jg[w]);
        let pr = &rw - &q * (q.transpose() * &rw);
        a.rows_mut(at, r[w].len()).copy_from(&pj);
        rhs.rows_mut(at, r[w].len()).copy_from(&pr);
        at += r[w].len();
        bases.push(rw);
    }
    let dg = if ng > 0 {
        real_lstsq(a, &rhs)?
    } else {
        DVector::zeros(0)
    };
    let mut out: Vec<f64> = dg.iter().copied().collect();
    for w in 0..nb {
        let target = &bases[w] - &jg[w] * &dg;
        out.extend(real_lstsq(jb[w].clone(), &target)?.iter());
    }
    Ok(out)
}

/// Step-length control shared by the dense and block solvers: the step is
/// scaled by a trust factor that halves on failure and doubles on success.
fn damped(
    start: &[f64],
    opts: GaussNewtonOptions,
    residual: &impl Fn(&[f64]) -> Result<Vec<f64>>,
    mut direction: impl FnMut(&[f64], &[f64]) -> Result<Vec<f64>>,
) -> Result<GaussNewtonResult> {
    let mut p = start.to_vec();
    let mut r = residual(&p)?;
    let mut c = cost(&r);
    if !c.is_finite() {
        return Err(Error::NoConvergence("non-finite initial residual".into()));
    }
    let mut lambda = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter && !converged {
        iterations += 1;
        if c == 0.0 {
            converged = true;
            break;
        }
        let step = direction(&p, &r)?;
        loop {
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(p, s)| p + lambda * s).collect();
            let accepted = match residual(&trial) {
                Ok(rt) => {
                    let ct = cost(&rt);
                    if ct.is_finite() && ct <= c {
                        let size: f64 = step.iter().map(|s| (lambda * s).powi(2)).sum::<f64>().sqrt();
                        let norm: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
                        converged = size <= opts.rel_tol * norm.max(1e-300) || ct == 0.0 || c - ct <= 1e-30 * c;
                        p = trial;
                        r = rt;
                        c = ct;
                        true
                    } else {
                        false
                    }
                }
                Err(_) => false,
            };
            if accepted {
                lambda = (2.0 * lambda).min(1.0);
                break;
            }
            lambda *= 0.5;
            if lambda < opts.damping_floor {
                // no descent along the Gauss–Newton direction: a stationary point
                return Ok(GaussNewtonResult {
                    params: p,
                    cost: c,
                    iterations,
                    converged: true,
                });
            }
        }
    }
    Ok(GaussNewtonResult {
        params: p,
        cost: c,
        iterations,
        converged,
    })
}

fn jacobian(
    p: &[f64],
    scale: &[f64],
    r0: &[f64],
    residual: &impl Fn(&[f64]) -> Result<Vec<f64>>,
) -> Result<DMatrix<f64>> {
    let mut jac = DMatrix::zeros(r0.len(), p.len());
    let mut work = p.to_vec();
    for i in 0..p.len() {
        let h = 1e-6 * p[i].abs().max(scale[i]);
        work[i] = p[i] + h;
        let plus = residual(&work)?;
        work[i] = p[i] - h;
        let minus = residual(&work)?;
        work[i] = p[i];
        for (k, (a, b)) in plus.iter().zip(&minus).enumerate() {
            jac[(k, i)] = (a - b) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Stacks complex residuals as `[re, im]` pairs.
pub fn split_complex(v: impl IntoIterator<Item = Complex64>) -> Vec<f64> {
    v.into_iter().flat_map(|z| [z.re, z.im]).collect()
}
