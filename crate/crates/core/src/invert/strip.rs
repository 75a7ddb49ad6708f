use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{
    recover_first_interface, recover_interface, recover_random_layer, relative_misfit, DataGrid, DepthPrior, Flag,
    LayerReport, StackReport,
};
use crate::detect::{time_gate, time_period, to_time, DatumMap, FieldGrid, GatingWindow, IntensityGrid};
use crate::error::{Error, Result};
use crate::forward::{
    detector_field, stack_elements, sublayer_calibration, two_way_path, IncidentBeam, Mode, Spectrum, Variant,
};
use crate::medium::MediumStack;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// What the inversion is told about the scene: the layer structure, depth
/// priors, particle radii and the acquisition geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripSettings {
    #[serde(default = "one")]
    pub c: f64,
    pub detector_height: f64,
    pub spectrum: Spectrum,
    #[serde(default)]
    pub variant: Variant,
    pub layers: Vec<LayerPlan>,
    #[serde(default = "default_delta_range")]
    pub delta_range: (f64, f64),
    /// Frequencies with `|f| >= band * max |f|` are inverted.
    #[serde(default = "default_band")]
    pub band: f64,
    /// Envelope level, relative to the A-scan maximum, that separates returns.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_taper")]
    pub taper: f64,
    /// Fixed windows, one per element in depth order; detected when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gates: Option<Vec<GatingWindow>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    /// Depth interval of the layer's top interface.
    pub prior: DepthPrior,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sublayer: Option<SublayerPlan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SublayerPlan {
    pub prior: DepthPrior,
    pub radius: f64,
}

fn one() -> f64 {
    1.0
}
fn default_delta_range() -> (f64, f64) {
    (-2.0, 2.0)
}
fn default_band() -> f64 {
    0.05
}
fn default_threshold() -> f64 {
    1e-4
}
fn default_taper() -> f64 {
    0.25
}

impl StripSettings {
    fn radii(&self) -> Vec<f64> {
        self.layers
            .iter()
            .map(|l| l.sublayer.as_ref().map_or(0.0, |s| s.radius))
            .collect()
    }

    /// Elements in depth order: `(layer, is_sublayer)`.
    fn elements(&self) -> Vec<(usize, bool)> {
        let mut out = Vec::new();
        for (j, l) in self.layers.iter().enumerate() {
            out.push((j, false));
            if l.sublayer.is_some() {
                out.push((j, true));
            }
        }
        out
    }
}

/// Time interval `[start, end]` where a return exceeds the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cluster {
    start: f64,
    end: f64,
}

/// Returns found in one A-scan, in time order.
fn clusters(spectrum: &[Complex64], period: f64, threshold: f64) -> Vec<Cluster> {
    let scan = to_time(spectrum);
    let n = scan.len();
    let env: Vec<f64> = scan.iter().map(|v| v.norm()).collect();
    let peak = env.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return Vec::new();
    }
    let above: Vec<bool> = env.iter().map(|&v| v >= threshold * peak).collect();
    let dt = period / n as f64;
    // start the sweep at a quiet sample so no run straddles the wrap
    let Some(quiet) = above.iter().position(|&a| !a) else {
        return vec![Cluster {
            start: 0.0,
            end: period,
        }];
    };
    let mut out = Vec::new();
    let mut open: Option<usize> = None;
    for s in quiet..quiet + n + 1 {
        let on = above[s % n];
        match (on, open) {
            (true, None) => open = Some(s),
            (false, Some(first)) => {
                out.push(Cluster {
                    start: first as f64 * dt,
                    end: (s - 1) as f64 * dt,
                });
                open = None;
            }
            _ => {}
        }
    }
    for c in &mut out {
        if c.start >= period {
            c.start -= period;
            c.end -= period;
        }
    }
    out.sort_by(|a, b| a.start.total_cmp(&b.start));
    out
}

/// Windows around the first `count` clusters. Each window is centred on its
/// cluster and extends past it by `pad`, or half-way into the narrower
/// neighbouring gap on the periodic time axis if that is shorter; the taper
/// lies inside the extension.
fn windows_for(found: &[Cluster], count: usize, period: f64, taper: f64, pad: f64) -> Result<Vec<GatingWindow>> {
    let m = found.len();
    (0..count.min(m))
        .map(|i| {
            let prev_end = if i == 0 {
                found[m - 1].end - period
            } else {
                found[i - 1].end
            };
            let next_start = if i + 1 == m {
                found[0].start + period
            } else {
                found[i + 1].start
            };
            let c = found[i];
            let margin = (0.5 * (c.start - prev_end).min(next_start - c.end)).min(pad);
            let halfwidth = 0.5 * (c.end - c.start) + margin;
            GatingWindow::new(0.5 * (c.start + c.end), halfwidth, taper * margin / halfwidth)
        })
        .collect()
}

/// Layer-stripping inversion of intensity measurements.
pub fn layer_strip(measurements: &IntensityGrid, settings: &StripSettings) -> Result<StackReport> {
    layer_strip_fields(&measurements.retrieve()?, settings)
}

/// Layer-stripping inversion of retrieved detector fields.
pub fn layer_strip_fields(fields: &FieldGrid, settings: &StripSettings) -> Result<StackReport> {
    if settings.layers.is_empty() {
        return Err(Error::InvalidInput("the scene has no layers".into()));
    }
    let period = time_period(&fields.omegas)?;
    let plan = settings.elements();
    let (nd, nw) = (fields.deltas.len(), fields.omegas.len());

    // analysis band
    let f: Vec<Complex64> = fields
        .omegas
        .iter()
        .map(|&w| settings.spectrum.eval(w))
        .collect::<Result<_>>()?;
    let f_max = f.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let band: Vec<usize> = (0..nw).filter(|&w| f[w].norm() >= settings.band * f_max).collect();
    if band.is_empty() {
        return Err(Error::ZeroSpectrum {
            omega: fields.omegas[0],
        });
    }
    let omegas: Vec<f64> = band.iter().map(|&w| fields.omegas[w]).collect();

    // a return's tail is as long as the source pulse's, down to threshold^2
    let pad = clusters(&f, period, settings.threshold.powi(2))
        .iter()
        .map(|c| 0.5 * (c.end - c.start))
        .fold(0.0, f64::max);

    // windows per compression state
    let mut flags = Vec::new();
    let mut windows: Vec<Vec<GatingWindow>> = Vec::with_capacity(nd);
    let mut usable = plan.len();
    for d in 0..nd {
        let w = match &settings.gates {
            Some(g) => {
                if g.len() != plan.len() {
                    return Err(Error::InvalidInput(format!(
                        "{} gates given for {} scattering elements",
                        g.len(),
                        plan.len()
                    )));
                }
                g.clone()
            }
            None => {
                let found = clusters(fields.row(d), period, settings.threshold);
                if found.len() < plan.len() {
                    // the last separated return may hide several elements
                    usable = usable.min(found.len().saturating_sub(1));
                }
                windows_for(&found, plan.len(), period, settings.taper, pad)?
            }
        };
        windows.push(w);
    }
    if usable < plan.len() {
        flags.extend([Flag::GatingOverlap, Flag::Partial]);
    }

    let gated = |k: usize| -> Result<Vec<Vec<Complex64>>> {
        (0..nd)
            .map(|d| {
                let g = time_gate(&fields.omegas, fields.row(d), &windows[d][k])?;
                Ok(band.iter().map(|&w| g[w]).collect())
            })
            .collect()
    };

    let radii = settings.radii();
    let x0 = settings.detector_height;
    let c = settings.c;
    let mut layers: Vec<LayerReport> = Vec::new();
    let mut stopped = None;
    for (k, &(j, is_sub)) in plan.iter().enumerate().take(usable) {
        let rows = gated(k)?;
        let step = (|| -> Result<()> {
            if k == 0 {
                let data = DataGrid::from_fn(&omegas, &fields.deltas, |_, _| Ok(Complex64::new(0.0, 0.0)))?;
                let data = fill(data, &rows, |_, w| {
                    Ok(f[band[w]] * DatumMap::first_interface(omegas[w] / c, x0).scale)
                })?;
                layers.push(recover_first_interface(&data, settings.layers[0].prior, c)?);
                return Ok(());
            }
            let partial = StackReport {
                layers: layers.clone(),
                ..Default::default()
            }
            .to_medium(&radii, settings.delta_range)?;
            let blank = DataGrid::from_fn(&omegas, &fields.deltas, |_, _| Ok(Complex64::new(0.0, 0.0)))?;
            if is_sub {
                let host = layers[j].indices();
                let plan_sub = settings.layers[j].sublayer.as_ref().expect("planned sublayer");
                let data = fill(blank, &rows, |d, w| {
                    let omega = omegas[w];
                    let k0 = omega / c;
                    let path = path_to_bottom(&partial, fields.deltas[d], omega, c, settings.variant)?;
                    let n = host[w].at(fields.deltas[d]);
                    let calib = sublayer_calibration(settings.variant, plan_sub.radius, k0 * n);
                    Ok(f[band[w]] * (I * k0 * x0).exp() * path * calib / (n * n))
                })?;
                let sub = recover_random_layer(&data, &host, settings.variant, plan_sub.prior, c)?;
                layers[j].sublayer = Some(sub);
            } else {
                let data = fill(blank, &rows, |d, w| {
                    let omega = omegas[w];
                    let path = path_to_bottom(&partial, fields.deltas[d], omega, c, settings.variant)?;
                    Ok(-f[band[w]] * (I * omega / c * x0).exp() * path)
                })?;
                let upper = layers[j - 1].indices();
                layers.push(recover_interface(&data, &upper, settings.layers[j].prior, c)?);
            }
            Ok(())
        })();
        if let Err(e) = step {
            flags.push(Flag::Partial);
            stopped = Some(format!("element {k}: {e}"));
            break;
        }
    }
    if layers.len() < settings.layers.len() && !flags.contains(&Flag::Partial) {
        flags.push(Flag::Partial);
    }

    let mut report = StackReport {
        layers,
        global_misfit: None,
        flags,
        stopped,
    };
    if !report.is_partial() {
        let medium = report.to_medium(&radii, settings.delta_range)?;
        let mut measured = FieldGrid::from_fn(&omegas, &fields.deltas, |_, _| Ok(Complex64::new(0.0, 0.0)))?;
        for d in 0..nd {
            for (w, &b) in band.iter().enumerate() {
                measured.row_mut(d)[w] = fields.get(d, b);
            }
        }
        let beam = IncidentBeam::new(settings.spectrum.clone());
        let misfit = relative_misfit(&measured, |d, w| {
            let cs = medium.compress(measured.deltas[d])?;
            detector_field(&cs, omegas[w], c, &beam, x0, Mode::Series, settings.variant)
        })?;
        report.global_misfit = Some(misfit);
    }
    Ok(report)
}

/// Two-way absolute transmission through every element of `medium`.
fn path_to_bottom(medium: &MediumStack, delta: f64, omega: f64, c: f64, variant: Variant) -> Result<Complex64> {
    let cs = medium.compress(delta)?;
    let elements = stack_elements(&cs, omega, c, variant)?;
    Ok(two_way_path(&elements, elements.len()))
}

/// Divides gated band samples by the datum scale `f * scale`.
fn fill(
    mut grid: DataGrid,
    rows: &[Vec<Complex64>],
    scale: impl Fn(usize, usize) -> Result<Complex64>,
) -> Result<DataGrid> {
    for (d, row) in rows.iter().enumerate() {
        for (w, &v) in row.iter().enumerate() {
            let s = scale(d, w)?;
            if s.norm() == 0.0 {
                return Err(Error::ZeroSpectrum { omega: grid.omegas[w] });
            }
            grid.row_mut(d)[w] = v / s;
        }
    }
    Ok(grid)
}
