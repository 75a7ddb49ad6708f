//! Acceptance suite. Prints one PASS/FAIL line per criterion; run with
//! `cargo test -p oct-elast --test acceptance -- --nocapture`.

use std::f64::consts::PI;
use std::path::Path;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use oct_elast::detect::{intensities, phase_retrieve, FieldGrid};
use oct_elast::forward::{
    datum_Mj, datum_m0, datum_mj, expected_scatter, stack_response, Mode, Side, SublayerParams, Variant,
};
use oct_elast::invert::{
    layer_strip, parameter_errors, recover_first_interface, recover_interface, recover_random_layer, solve_rho_nu,
    worst, DepthPrior,
};
use oct_elast::medium::{Layer, LayerBoundary, MediumStack, RandomSublayer, ScanGrid};
use oct_elast::scatterlab::{ensemble_average, finite_box_expectation, BallMethod, BornSetup, SlabTemplate};
use oct_elast::scenario::Scenario;
use oct_elast::spectra::{ComplexIndex, ComplexTable, DispersionModel};
use oct_elast::Error;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, Uniform};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Uniform draws from `[lo, hi)`.
struct Draw(ChaCha8Rng);

impl Draw {
    fn new(seed: u64) -> Self {
        Draw(ChaCha8Rng::seed_from_u64(seed))
    }

    fn u(&mut self, lo: f64, hi: f64) -> f64 {
        Uniform::new(lo, hi).expect("ordered bounds").sample(&mut self.0)
    }

    fn index(&mut self, n: usize) -> usize {
        Uniform::new(0, n).expect("non-empty").sample(&mut self.0)
    }
}

fn plain_layer(n: Complex64, z: f64) -> Layer {
    Layer {
        optics: DispersionModel::from_index(n),
        optics_rate: ComplexTable::constant(c(0.0, 0.0)),
        boundary: LayerBoundary { z, z_rate: 0.0 },
        sublayer: None,
    }
}

fn random_stack(d: &mut Draw) -> MediumStack {
    let count = 1 + d.index(5);
    let mut z = d.u(0.0, 1.0);
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let mut l = plain_layer(c(d.u(1.0, 2.5), d.u(0.0, 0.05)), z);
        let thick = d.u(0.1, 1.0);
        if d.u(0.0, 1.0) < 0.3 {
            let top = z - d.u(0.03, 0.3) * thick;
            let bottom = top - d.u(0.02, 0.3) * thick;
            l.sublayer = Some(RandomSublayer {
                rho: d.u(1.0, 50.0),
                nu: DispersionModel::from_index(c(d.u(1.0, 2.0), d.u(0.0, 0.02))),
                nu_rate: ComplexTable::constant(c(0.0, 0.0)),
                top,
                top_rate: 0.0,
                bottom,
                bottom_rate: 0.0,
                radius: 0.005,
            });
        }
        layers.push(l);
        z -= thick;
    }
    MediumStack::new(layers)
}

fn series_oracle() -> Outcome {
    let mut d = Draw::new(1);
    let (mut worst_gap, mut checked, mut skipped) = (0.0f64, 0, 0);
    while checked < 10_000 {
        let stack = random_stack(&mut d);
        let omega = d.u(0.5, 5.0);
        let cs = stack.compress(0.0).expect("valid stack");
        let series = match stack_response(&cs, omega, 1.0, Mode::Series, Variant::Derived) {
            Ok(r) => r,
            Err(Error::SeriesDiverges { .. }) => {
                skipped += 1;
                continue;
            }
            Err(e) => panic!("series: {e}"),
        };
        let oracle = stack_response(&cs, omega, 1.0, Mode::Oracle, Variant::Derived).expect("oracle");
        worst_gap = worst_gap.max((series - oracle).norm());
        checked += 1;
    }
    outcome(
        worst_gap < 1e-10,
        format!("{checked} stacks, {skipped} inadmissible redrawn, max |series - oracle| = {worst_gap:.2e}"),
    )
}

fn quarter_wave() -> Outcome {
    // n1 d k0 = pi/2 at omega = 1
    let d = PI / 4.0;
    let stack = MediumStack::new(vec![plain_layer(c(2.0, 0.0), 0.0), plain_layer(c(1.0, 0.0), -d)]);
    let cs = stack.compress(0.0).expect("valid stack");
    let analytic = (1.0 * 1.0 - 2.0 * 2.0) / (1.0 * 1.0 + 2.0 * 2.0);
    let mut gap = 0.0f64;
    for mode in [Mode::Series, Mode::Oracle] {
        let r = stack_response(&cs, 1.0, 1.0, mode, Variant::Derived).expect("response");
        gap = gap.max((r - c(-0.6, 0.0)).norm());
    }
    gap = gap.max((analytic - -0.6f64).abs());
    outcome(gap < 1e-12, format!("max |R + 0.6| = {gap:.2e} over series and oracle"))
}

fn monte_carlo() -> Outcome {
    let template = SlabTemplate {
        rho: 10.0,
        bottom: 0.4,
        top: 0.6,
        radius: 0.01,
    };
    let sub = oct_elast::medium::CompressedSublayer {
        rho: template.rho,
        top: template.top,
        bottom: template.bottom,
        radius: template.radius,
    };
    let (n, phi, f, x3) = (c(1.0, 0.0), c(0.1, 0.0), c(1.0, 0.0), 1.0);
    let mut worst_z = 0.0f64;
    let mut lines = Vec::new();
    for k0 in [1.0, 2.0, 4.0] {
        let setup = BornSetup {
            k0,
            n,
            phi,
            f,
            radius: template.radius,
            method: BallMethod::Formfactor,
        };
        let reference = setup.incident(x3)
            + expected_scatter(&sub, n, phi, f, k0, x3, Side::Reflect, Variant::Derived).expect("closed form");
        for stat in ensemble_average(&template, &[4.0, 8.0], 1000, &setup, x3, 3).expect("ensemble") {
            let z = (stat.mean - reference).norm() / stat.stderr;
            let boxed = finite_box_expectation(&template, stat.side, &setup, x3).expect("box oracle");
            let z_box = (stat.mean - boxed).norm() / stat.stderr;
            worst_z = worst_z.max(z);
            lines.push(format!("w={k0} L={} z={z:.1} (vs finite box {z_box:.1})", stat.side));
        }
    }
    outcome(worst_z <= 3.0, format!("max |z| = {worst_z:.1}; {}", lines.join(", ")))
}

fn retrieval() -> Outcome {
    let mut d = Draw::new(4);
    let mut worst_gap = 0.0f64;
    for _ in 0..100_000 {
        let e = Complex64::from_polar(d.u(0.0, 3.0), d.u(-PI, PI));
        let r1 = Complex64::from_polar(d.u(0.5, 2.0), d.u(-PI, PI));
        let r2 = Complex64::from_polar(d.u(0.5, 2.0), r1.arg() + d.u(PI / 6.0, 5.0 * PI / 6.0));
        let got = phase_retrieve(intensities(e, r1, r2), r1, r2).expect("retrieval");
        worst_gap = worst_gap.max((got - e).norm() / e.norm().max(1.0));
    }
    outcome(worst_gap < 1e-12, format!("1e5 fields, max error {worst_gap:.2e}"))
}

fn rel(got: Complex64, truth: Complex64) -> f64 {
    (got - truth).norm() / truth.norm()
}

fn first_interface() -> Outcome {
    let idx = ComplexIndex::new(c(1.5, 0.0), c(0.1, 0.0));
    let omegas = ScanGrid::linspace(1.0, 2.0, 21);
    let data = FieldGrid::from_fn(&omegas, &[-0.5, -0.25, 0.0, 0.25, 0.5], |w, dl| {
        datum_m0(idx, 0.3, w, dl)
    })
    .expect("data");
    let rep = recover_first_interface(&data, DepthPrior::new(-1.0, 1.0), 1.0).expect("recovery");
    let mut err = ((rep.z - 0.3) / 0.3).abs();
    for w in 0..omegas.len() {
        err = err
            .max(rel(rep.n.values()[w], idx.n))
            .max(rel(rep.n_rate.values()[w], idx.n_rate));
    }
    outcome(err < 1e-8, format!("max relative error {err:.2e}"))
}

fn interior_interface() -> Outcome {
    let upper = ComplexIndex::new(c(1.4, 0.01), c(0.0, 0.01));
    let lower = ComplexIndex::new(c(1.7, 0.0), c(0.05, 0.0));
    let bd = LayerBoundary { z: -0.2, z_rate: 0.02 };
    let omegas = ScanGrid::linspace(1.0, 2.0, 21);
    let data = FieldGrid::from_fn(&omegas, &[-1.0, -0.5, 0.0, 0.5, 1.0], |w, dl| {
        datum_mj(upper, lower, bd, w, dl)
    })
    .expect("data");
    let rep = recover_interface(&data, &vec![upper; omegas.len()], DepthPrior::new(-1.0, 0.0), 1.0).expect("recovery");
    let mut err = ((rep.z - bd.z) / bd.z)
        .abs()
        .max(((rep.z_rate - bd.z_rate) / bd.z_rate).abs());
    for w in 0..omegas.len() {
        err = err
            .max(rel(rep.n.values()[w], lower.n))
            .max(rel(rep.n_rate.values()[w], lower.n_rate));
    }
    outcome(err < 1e-6, format!("max relative error {err:.2e}"))
}

fn sublayer_truth() -> (SublayerParams, ComplexIndex) {
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

/// The sublayer closes at delta = 1.
const SUBLAYER_DELTAS: [f64; 9] = [-2.0, -1.5, -1.0, -0.5, 0.0, 0.2, 0.4, 0.6, 0.8];

fn random_layer() -> Outcome {
    let (s, host) = sublayer_truth();
    let omegas = ScanGrid::linspace(1.0, 2.0, 21);
    let data = FieldGrid::from_fn(&omegas, &SUBLAYER_DELTAS, |w, dl| {
        datum_Mj(&s, host, w, dl, Variant::Derived)
    })
    .expect("data");
    let rep = recover_random_layer(
        &data,
        &vec![host; omegas.len()],
        Variant::Derived,
        DepthPrior::new(0.0, 1.0),
        1.0,
    )
    .expect("recovery");
    let r = |a: f64, b: f64| ((a - b) / b).abs();
    let mut err = r(rep.rho, s.rho)
        .max(r(rep.zeta, s.top.z))
        .max(r(rep.zeta_rate, s.top.z_rate))
        .max(r(rep.bottom, s.bottom.z))
        .max(r(rep.bottom_rate, s.bottom.z_rate));
    for w in 0..omegas.len() {
        err = err
            .max(rel(rep.nu.values()[w], s.nu.n))
            .max(rel(rep.nu_rate.values()[w], s.nu.n_rate));
    }
    let (rho, nu, nu_rate) =
        solve_rho_nu(c(1.8, 0.0), c(0.0, 0.108), c(-0.0009, 0.0), c(1.4, 0.0), c(0.0, 0.01)).expect("algebraic core");
    let core = (rho - 3.0)
        .abs()
        .max((nu - c(1.6, 0.0)).norm())
        .max((nu_rate - c(0.0, 0.02)).norm());
    outcome(
        err < 1e-4 && core < 1e-10,
        format!("max relative error {err:.2e}; algebraic core error {core:.2e}"),
    )
}

fn end_to_end() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/three_layer.json");
    let (scene, _) = Scenario::load(&path).expect("scene");
    let data = scene.measurements().expect("forward");
    let report = layer_strip(&data, &scene.strip_settings().expect("settings")).expect("inversion");
    let table = parameter_errors(&report, &scene.medium).expect("comparison");
    let w = worst(&table).expect("parameters");
    let misfit = report.global_misfit.unwrap_or(f64::INFINITY);
    outcome(
        !report.is_partial() && w.rel_error < 1e-4 && misfit < 1e-6,
        format!(
            "{} layers, worst {}[{}] {:.2e}, misfit {misfit:.2e}",
            report.layers.len(),
            w.name,
            w.layer,
            w.rel_error
        ),
    )
}

/// Moves every coordinate by up to `scale`, with the largest move exactly `scale`.
fn nudge(d: &mut Draw, p: &[f64], scale: f64) -> Vec<f64> {
    let mut step: Vec<f64> = p.iter().map(|_| d.u(-1.0, 1.0)).collect();
    let big = step.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    step.iter_mut().for_each(|s| *s *= scale / big);
    p.iter().zip(step).map(|(a, s)| a + s).collect()
}

fn grid_of(p: &[f64], kind: usize, omegas: &[f64]) -> FieldGrid {
    let host = ComplexIndex::new(c(1.4, 0.005), c(0.0, 0.01));
    match kind {
        0 => {
            let idx = ComplexIndex::new(c(p[0], p[1]), c(p[2], p[3]));
            FieldGrid::from_fn(omegas, &[-0.5, -0.25, 0.0, 0.25, 0.5], |w, dl| {
                datum_m0(idx, p[4], w, dl)
            })
        }
        1 => {
            let lower = ComplexIndex::new(c(p[0], p[1]), c(p[2], p[3]));
            let bd = LayerBoundary { z: p[4], z_rate: p[5] };
            FieldGrid::from_fn(omegas, &[-1.0, -0.5, 0.0, 0.5, 1.0], |w, dl| {
                datum_mj(host, lower, bd, w, dl)
            })
        }
        _ => {
            let s = SublayerParams {
                rho: p[0],
                nu: ComplexIndex::new(c(p[1], p[2]), c(p[3], p[4])),
                top: LayerBoundary { z: p[5], z_rate: p[6] },
                bottom: LayerBoundary { z: p[7], z_rate: p[8] },
            };
            FieldGrid::from_fn(omegas, &SUBLAYER_DELTAS, |w, dl| {
                datum_Mj(&s, host, w, dl, Variant::Derived)
            })
        }
    }
    .expect("admissible parameters")
}

fn random_parameters(d: &mut Draw, kind: usize) -> Vec<f64> {
    match kind {
        0 => vec![
            d.u(1.2, 2.0),
            d.u(0.0, 0.05),
            d.u(0.05, 0.2),
            d.u(0.0, 0.02),
            d.u(-0.5, 0.5),
        ],
        1 => vec![
            d.u(1.6, 2.2),
            d.u(0.0, 0.05),
            d.u(0.02, 0.1),
            d.u(0.0, 0.02),
            d.u(-0.5, -0.1),
            d.u(0.0, 0.05),
        ],
        _ => {
            let (top, bottom) = (d.u(0.55, 0.65), d.u(0.35, 0.45));
            let top_rate = d.u(0.02, 0.15);
            // keeps the slab open up to delta = 0.8 even after a nudge
            let bottom_rate = top_rate + d.u(0.0, 0.5 * (top - bottom) / 0.8);
            vec![
                d.u(1.0, 5.0),
                d.u(1.5, 2.0),
                d.u(0.0, 0.05),
                d.u(-0.1, 0.1),
                d.u(0.0, 0.03),
                top,
                top_rate,
                bottom,
                bottom_rate,
            ]
        }
    }
}

fn injectivity() -> Outcome {
    let mut d = Draw::new(9);
    let omegas = ScanGrid::linspace(1.0, 2.0, 21);
    let mut closest = f64::INFINITY;
    for i in 0..1000 {
        let kind = i % 3;
        let a = random_parameters(&mut d, kind);
        let scale = d.u(1e-3, 1e-2);
        let b = nudge(&mut d, &a, scale);
        closest = closest.min(grid_of(&a, kind, &omegas).sup_distance(&grid_of(&b, kind, &omegas)));
    }
    outcome(
        closest >= 1e-8,
        format!("1e3 pairs, min sup-norm separation {closest:.2e}"),
    )
}

#[test]
fn acceptance() {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check, Duration); 9] = [
        (
            "series equals oracle on random stacks",
            series_oracle,
            Duration::from_secs(10),
        ),
        ("quarter-wave slab reflectance", quarter_wave, Duration::from_secs(1)),
        (
            "Monte Carlo mean matches averaged Born field",
            monte_carlo,
            Duration::from_secs(30),
        ),
        ("phase retrieval is the identity", retrieval, Duration::from_secs(1)),
        ("first-interface recovery", first_interface, Duration::from_secs(1)),
        (
            "interior-interface recovery",
            interior_interface,
            Duration::from_secs(5),
        ),
        ("random-layer recovery", random_layer, Duration::from_secs(10)),
        ("end-to-end layer stripping", end_to_end, Duration::from_secs(60)),
        ("injectivity spot-check", injectivity, Duration::from_secs(30)),
    ];
    let mut failed = Vec::new();
    for (i, (name, check, budget)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let out = check();
        let took = start.elapsed();
        let pass = out.pass && took <= budget;
        println!(
            "criterion {}: {} {name}: {} [{:.2} s, budget {} s]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
        if !pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
