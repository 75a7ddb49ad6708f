//! Command-line front end: forward synthesis, inversion, Monte Carlo
//! verification and round trips, all driven by a scene file.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use oct_elast::detect::{FieldGrid, GatingWindow, IntensityGrid};
use oct_elast::forward::{expected_scatter, Mode, Side, Variant};
use oct_elast::invert::{layer_strip, layer_strip_fields, parameter_errors, worst, StackReport};
use oct_elast::scatterlab::{ensemble_average, BallMethod, BornSetup, SlabTemplate};
use oct_elast::scenario::Scenario;
use oct_elast::spectra::contrast_from_indices;
use oct_elast::Error;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "oct-elast",
    version,
    about = "Layered-medium OCT simulator and layer-stripping inversion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scene and write intensity and field CSVs into a directory.
    Forward {
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Invert a measurement CSV (intensities or fields) into a JSON report.
    Invert {
        #[arg(long)]
        measurements: PathBuf,
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        gates: GateArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare Monte Carlo Born means with the averaged closed form.
    McVerify {
        #[command(flatten)]
        scene: SceneArgs,
        /// Configurations per box size.
        #[arg(long = "configs")]
        configs: usize,
        /// Box sides, comma separated.
        #[arg(long = "L-schedule", value_delimiter = ',', required = true)]
        sides: Vec<f64>,
        #[arg(long, default_value = "formfactor")]
        ball: BallMethod,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forward, measure, retrieve and invert; writes the report and an error table.
    Roundtrip {
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        gates: GateArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SceneArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GateArgs {
    /// Gate centres in time, one per scattering element, comma separated.
    #[arg(long = "gate-center", value_delimiter = ',')]
    centers: Vec<f64>,
    #[arg(long = "gate-halfwidth", value_delimiter = ',')]
    halfwidths: Vec<f64>,
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    kind: String,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) => 3,
            Error::Csv(c) if c.is_io_error() => 3,
            _ => 2,
        };
        Failure {
            code,
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Error::InvalidInput(message.into()).into()
}

fn io_failure(e: std::io::Error) -> Failure {
    Error::Io(e).into()
}

type Outcome = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(f) = configure_threads() {
        return report_failure(f);
    }
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => report_failure(f),
    }
}

fn report_failure(f: Failure) -> ExitCode {
    let body = serde_json::json!({ "error": f.kind, "message": f.message, "exit_code": f.code });
    eprintln!("{body}");
    ExitCode::from(f.code)
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("OCT_ELAST_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| invalid(format!("OCT_ELAST_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| invalid(e.to_string()))
}

fn run(command: Command) -> Outcome {
    match command {
        Command::Forward { scene, out } => forward(&scene, &out),
        Command::Invert {
            measurements,
            scene,
            gates,
            out,
        } => invert(&measurements, &scene, &gates, &out),
        Command::McVerify {
            scene,
            configs,
            sides,
            ball,
            out,
        } => mc_verify(&scene, configs, &sides, ball, &out),
        Command::Roundtrip { scene, gates, out } => roundtrip(&scene, &gates, &out),
    }
}

fn load(args: &SceneArgs) -> Result<Scenario, Failure> {
    let (mut s, warnings) = Scenario::load(&args.scenario)?;
    for w in warnings {
        let body = serde_json::json!({ "warning": format!("{:?}", w.kind), "layer": w.layer, "message": w.message });
        eprintln!("{body}");
    }
    if let Some(m) = args.mode {
        s.mode = m;
    }
    if let Some(v) = args.variant {
        s.variant = v;
    }
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    Ok(s)
}

fn gates(args: &GateArgs, taper: f64) -> Result<Option<Vec<GatingWindow>>, Failure> {
    if args.centers.is_empty() && args.halfwidths.is_empty() {
        return Ok(None);
    }
    if args.centers.len() != args.halfwidths.len() {
        return Err(invalid(
            "--gate-center and --gate-halfwidth need the same number of values",
        ));
    }
    let windows = args
        .centers
        .iter()
        .zip(&args.halfwidths)
        .map(|(&c, &h)| GatingWindow::new(c, h, taper))
        .collect::<oct_elast::Result<_>>()?;
    Ok(Some(windows))
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(io_failure)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text + "\n").map_err(io_failure)
}

fn forward(args: &SceneArgs, out: &Path) -> Outcome {
    let s = load(args)?;
    let fields = s.fields()?;
    let readings = IntensityGrid::measure(&fields, &s.detector)?;
    create_dir(out)?;
    readings.write_csv(&out.join("intensities.csv"))?;
    fields.write_csv(&out.join("fields.csv"))?;
    Ok(0)
}

enum Measured {
    Intensities(IntensityGrid),
    Fields(FieldGrid),
}

impl Measured {
    fn read(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path).map_err(io_failure)?;
        let header = text.lines().next().unwrap_or("");
        if header.split(',').any(|h| h.trim() == "m0") {
            Ok(Measured::Intensities(IntensityGrid::read_csv(path)?))
        } else {
            Ok(Measured::Fields(FieldGrid::read_csv(path)?))
        }
    }

    fn axes(&self) -> (&[f64], &[f64]) {
        match self {
            Measured::Intensities(g) => (&g.omegas, &g.deltas),
            Measured::Fields(g) => (&g.omegas, &g.deltas),
        }
    }
}

fn same_axis(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0))
}

fn strip(s: &Scenario, data: &Measured, gate_args: &GateArgs) -> Result<StackReport, Failure> {
    let grid = s.scan_grid()?;
    let (omegas, deltas) = data.axes();
    if !same_axis(omegas, &grid.omegas) || !same_axis(deltas, &grid.deltas) {
        return Err(invalid("measurement grid does not match the scenario grid"));
    }
    let mut settings = s.strip_settings()?;
    if let Some(g) = gates(gate_args, settings.taper)? {
        settings.gates = Some(g);
    }
    Ok(match data {
        Measured::Intensities(g) => layer_strip(g, &settings)?,
        Measured::Fields(g) => layer_strip_fields(g, &settings)?,
    })
}

fn finish(report: &StackReport) -> u8 {
    if report.is_partial() {
        let body = serde_json::json!({ "status": "partial", "flags": report.flags, "stopped": report.stopped });
        eprintln!("{body}");
        4
    } else {
        0
    }
}

fn invert(measurements: &Path, args: &SceneArgs, gate_args: &GateArgs, out: &Path) -> Outcome {
    let s = load(args)?;
    let data = Measured::read(measurements)?;
    let report = strip(&s, &data, gate_args)?;
    write_json(out, &report)?;
    Ok(finish(&report))
}

#[derive(Serialize)]
struct McRow {
    omega: f64,
    #[serde(rename = "L")]
    side: f64,
    #[serde(rename = "N")]
    count: usize,
    #[serde(rename = "M")]
    configs: usize,
    mean_re: f64,
    mean_im: f64,
    stderr: f64,
    reference_re: f64,
    reference_im: f64,
    zscore: f64,
}

fn mc_verify(args: &SceneArgs, configs: usize, sides: &[f64], ball: BallMethod, out: &Path) -> Outcome {
    let s = load(args)?;
    let hosts: Vec<_> = s.medium.layers.iter().filter(|l| l.sublayer.is_some()).collect();
    let [layer] = hosts[..] else {
        return Err(invalid(format!(
            "mc-verify needs exactly one random sublayer, the scene has {}",
            hosts.len()
        )));
    };
    let sub = layer.sublayer.as_ref().expect("filtered on sublayers");
    // the ensemble is drawn in the uncompressed state
    let slab = sub.compress(0.0);
    let template = SlabTemplate {
        rho: slab.rho,
        bottom: slab.bottom,
        top: slab.top,
        radius: slab.radius,
    };
    let x3 = s.detector.height();
    let grid = s.scan_grid()?;
    let mut w = csv::Writer::from_path(out).map_err(Error::from)?;
    let mut worst_z: f64 = 0.0;
    for &omega in &grid.omegas {
        let n = layer.index(omega)?.at(0.0);
        let phi = contrast_from_indices(sub.particle_index(omega)?.at(0.0), n);
        let f = s.beam.spectrum.eval(omega)?;
        let k0 = omega / s.c;
        let setup = BornSetup {
            k0,
            n,
            phi,
            f,
            radius: slab.radius,
            method: ball,
        };
        let reference =
            setup.incident(x3) + expected_scatter(&slab, n, phi, f, k0, x3, Side::Reflect, Variant::Derived)?;
        for stat in ensemble_average(&template, sides, configs, &setup, x3, s.seed)? {
            let gap = (stat.mean - reference).norm();
            let zscore = match (stat.stderr > 0.0, gap > 0.0) {
                (true, _) => gap / stat.stderr,
                (false, false) => 0.0,
                (false, true) => f64::INFINITY,
            };
            worst_z = worst_z.max(zscore);
            w.serialize(McRow {
                omega,
                side: stat.side,
                count: stat.count,
                configs: stat.configs,
                mean_re: stat.mean.re,
                mean_im: stat.mean.im,
                stderr: stat.stderr,
                reference_re: reference.re,
                reference_im: reference.im,
                zscore,
            })
            .map_err(Error::from)?;
        }
    }
    w.flush().map_err(io_failure)?;
    println!("{}", serde_json::json!({ "max_abs_zscore": worst_z }));
    Ok(0)
}

fn roundtrip(args: &SceneArgs, gate_args: &GateArgs, out: &Path) -> Outcome {
    let s = load(args)?;
    let readings = IntensityGrid::measure(&s.fields()?, &s.detector)?;
    let report = strip(&s, &Measured::Intensities(readings), gate_args)?;
    let table = parameter_errors(&report, &s.medium)?;
    create_dir(out)?;
    write_json(&out.join("report.json"), &report)?;
    let mut w = csv::Writer::from_path(out.join("errors.csv")).map_err(Error::from)?;
    for row in &table {
        w.serialize(row).map_err(Error::from)?;
    }
    w.flush().map_err(io_failure)?;
    let summary = match worst(&table) {
        Some(e) => serde_json::json!({
            "max_rel_error": e.rel_error,
            "parameter": e.name,
            "layer": e.layer,
            "omega": e.omega,
            "global_misfit": report.global_misfit,
        }),
        None => serde_json::json!({ "max_rel_error": null, "global_misfit": report.global_misfit }),
    };
    println!("{summary}");
    Ok(finish(&report))
}
