//! `metamer`: centroid estimates, volume asymptotics and sampling oracles
//! from the command line. JSON goes to stdout, tables to CSV files, and
//! failures to stderr as one `error: kind=… code=… msg=…` line.

mod error;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use metamer_core::colorimetry::{
    self, Basis, BasisMatrix, Estimator, EstimatorConfig, Method, SpectraKind, SpectraTable,
};
use metamer_core::oracle::{self, HitAndRunOptions};
use metamer_core::{reparam, volume, Regime, ResponseVector, SolveOptions, StepFunction};

use error::CliError;

const CMF_FILE: &str = "cie1931_2deg.csv";
const ILLUMINANTS_FILE: &str = "illuminants.csv";
const LMS_FILE: &str = "hpe.json";
const DATASET_FILE: &str = "synthetic_reflectances.csv";

#[derive(Debug, Parser)]
#[command(name = "metamer", version, about = "Centroids of metameric suites")]
struct Cli {
    /// Diagnostics filter for stderr, e.g. `warn`, `info`, `debug`.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
    /// Worker threads for parallel commands; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory holding the default observer, illuminant and dataset files.
    #[arg(long, global = true, env = "METAMER_DATA_DIR")]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Reflectance with a given XYZ.
    Estimate {
        #[arg(long, allow_hyphen_values = true)]
        xyz: String,
        /// CSV with columns `wavelength,reflectance`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        color: ColorArgs,
    },
    /// XYZ of a tabulated reflectance or emission spectrum.
    Tristimulus {
        #[arg(long)]
        reflectance: PathBuf,
        /// Column to use; the first data column if absent.
        #[arg(long)]
        column: Option<String>,
        /// Treat the column as an emission spectrum under the bare observer.
        #[arg(long)]
        emission: bool,
        #[command(flatten)]
        color: ColorArgs,
    },
    /// Estimates every spectrum of a dataset from its own XYZ and reports residuals.
    Batch {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Per-wavelength residual curves as CSV.
        #[arg(long)]
        out_curves: Option<PathBuf>,
        #[command(flatten)]
        color: ColorArgs,
    },
    /// Whether an XYZ lies inside the object-color solid; exit code 3 if not.
    Inside {
        #[arg(long, allow_hyphen_values = true)]
        xyz: String,
        #[command(flatten)]
        color: ColorArgs,
    },
    /// Equalizing reparameterization of a responsivity.
    Equalize {
        /// Step-function CSV (`lo,hi,<channels>`); the configured observer if absent.
        #[arg(long)]
        w: Option<PathBuf>,
        /// CSV with columns `omega,lambda`.
        #[arg(long)]
        out_knots: Option<PathBuf>,
        /// Equalized responsivities as a step-function CSV.
        #[arg(long)]
        out_equalized: Option<PathBuf>,
        #[command(flatten)]
        color: ColorArgs,
    },
    /// Saddlepoint root and centroid for a step-function responsivity.
    Solve {
        #[arg(long)]
        w: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        y: String,
        #[arg(long, value_enum, default_value_t = RegimeArg::Bounded)]
        regime: RegimeArg,
        /// Centroid estimate as a step-function CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Asymptotic volume of the `n`-grid section.
    Volume {
        #[arg(long)]
        w: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        y: String,
        #[arg(long)]
        n: usize,
        /// Also evaluate the exact section volume (one channel only).
        #[arg(long)]
        exact_ih: bool,
    },
    /// Hit-and-run centroid of the `n`-grid section against the predicted centroid.
    VerifyCentroid {
        #[arg(long)]
        w: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        y: String,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        chains: usize,
        /// Steps discarded per chain; `10 n` if absent.
        #[arg(long)]
        burn_in: Option<usize>,
        /// Steps between retained samples; `n` if absent.
        #[arg(long)]
        thinning: Option<usize>,
        /// Per-cell comparison CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emission spectrum with a given XYZ; exit code 3 if none exists.
    Lightsource {
        #[arg(long, allow_hyphen_values = true, required_unless_present = "spectrum", conflicts_with = "spectrum")]
        xyz: Option<String>,
        /// Emission table whose XYZ is the target.
        #[arg(long)]
        spectrum: Option<PathBuf>,
        #[arg(long, requires = "spectrum")]
        column: Option<String>,
        /// CSV with columns `wavelength,power`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        color: ColorArgs,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RegimeArg {
    Bounded,
    Unbounded,
}

impl From<RegimeArg> for Regime {
    fn from(r: RegimeArg) -> Self {
        match r {
            RegimeArg::Bounded => Regime::Bounded,
            RegimeArg::Unbounded => Regime::Unbounded,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Centroid,
    Hawkyard,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BasisArg {
    Xyz,
    Lms,
}

/// Observer, illuminant and estimator settings. Flags override `--config`.
#[derive(Debug, Args)]
struct ColorArgs {
    /// Estimator configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Color-matching functions CSV (`wavelength,x_bar,y_bar,z_bar`).
    #[arg(long)]
    cmf: Option<PathBuf>,
    /// Illuminant table CSV.
    #[arg(long)]
    illuminants: Option<PathBuf>,
    #[arg(long)]
    illuminant: Option<String>,
    /// Wavelength window `lo,hi`.
    #[arg(long)]
    window: Option<String>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long, value_enum)]
    basis: Option<BasisArg>,
    /// XYZ-to-LMS matrix JSON; the shipped matrix if absent.
    #[arg(long)]
    lms_matrix: Option<PathBuf>,
    /// Solve on equalized responsivities (the default).
    #[arg(long, conflicts_with = "raw")]
    equalize: bool,
    /// Solve on the responsivities as given.
    #[arg(long)]
    raw: bool,
    /// Positive-combination coefficients for equalization.
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<String>,
}

struct Ctx {
    data_dir: PathBuf,
}

impl Ctx {
    fn data(&self, file: &str) -> PathBuf {
        self.data_dir.join(file)
    }
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::input(format!("{what}: cannot parse {t:?} as a number")))
        })
        .collect()
}

fn parse_xyz(s: &str) -> Result<ResponseVector, CliError> {
    let v = parse_list(s, "--xyz")?;
    if v.len() != 3 {
        return Err(CliError::input(format!("--xyz needs 3 components, got {}", v.len())));
    }
    Ok(ResponseVector::with_labels(v, vec!["X".into(), "Y".into(), "Z".into()]))
}

fn read_to_string(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn load_step(path: &Path) -> Result<StepFunction, CliError> {
    Ok(colorimetry::load_step_function(path)?)
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn build_estimator(ctx: &Ctx, args: &ColorArgs) -> Result<Estimator, CliError> {
    let mut config = match &args.config {
        Some(p) => EstimatorConfig::from_json(&read_to_string(p)?)?,
        None => EstimatorConfig::default(),
    };
    if let Some(m) = args.method {
        config.method = match m {
            MethodArg::Centroid => Method::Centroid,
            MethodArg::Hawkyard => Method::Hawkyard,
        };
    }
    if let Some(b) = args.basis {
        config.basis = match b {
            BasisArg::Xyz => Basis::Xyz,
            BasisArg::Lms => Basis::Lms,
        };
    }
    if args.equalize {
        config.equalize = true;
    }
    if args.raw {
        config.equalize = false;
    }
    if let Some(a) = &args.alpha {
        config.alpha = Some(parse_list(a, "--alpha")?);
    }
    if let Some(name) = &args.illuminant {
        config.illuminant = name.clone();
    }
    if let Some(w) = &args.window {
        let v = parse_list(w, "--window")?;
        if v.len() != 2 || v[0] >= v[1] {
            return Err(CliError::input("--window needs lo,hi with lo < hi"));
        }
        config.window = [v[0], v[1]];
    }
    if config.basis == Basis::Lms && (args.lms_matrix.is_some() || config.lms_matrix.is_none()) {
        let path = args.lms_matrix.clone().unwrap_or_else(|| ctx.data(LMS_FILE));
        config.lms_matrix = Some(BasisMatrix::from_json(&read_to_string(&path)?)?.matrix);
    }
    let cmf_path = args.cmf.clone().unwrap_or_else(|| ctx.data(CMF_FILE));
    let cmf = SpectraTable::from_path(&cmf_path, SpectraKind::Cmf)?;
    let illuminants = match &args.illuminants {
        Some(p) => Some(SpectraTable::from_path(p, SpectraKind::Illuminant)?),
        None => {
            let p = ctx.data(ILLUMINANTS_FILE);
            if p.exists() {
                Some(SpectraTable::from_path(&p, SpectraKind::Illuminant)?)
            } else {
                None
            }
        }
    };
    log::info!("observer {} with illuminant {}", cmf_path.display(), config.illuminant);
    Ok(Estimator::new(&cmf, illuminants.as_ref(), config)?)
}

/// Left edges of the estimator's cells.
fn cell_wavelengths(est: &Estimator) -> Vec<f64> {
    let b = est.xyz.breaks();
    b[..b.len() - 1].to_vec()
}

fn spectrum_csv(est: &Estimator, name: &str, f: &StepFunction) -> Result<String, CliError> {
    let table = SpectraTable::new(
        SpectraKind::Emission,
        cell_wavelengths(est),
        vec![name.to_string()],
        vec![f.values().to_vec()],
    )?;
    Ok(table.to_csv())
}

/// One column of a table as a step function on the estimator's cells.
fn column_on_cells(est: &Estimator, path: &Path, column: Option<&str>, kind: SpectraKind) -> Result<(String, StepFunction), CliError> {
    let table = SpectraTable::from_path(path, kind)?;
    let window = est.config.window;
    let t = table.restrict(window[0], window[1])?;
    let grid = cell_wavelengths(est);
    let aligned = t.wavelengths.len() == grid.len()
        && t.wavelengths.iter().zip(&grid).all(|(a, b)| (a - b).abs() <= 1e-9 * b.abs().max(1.0));
    if !aligned {
        return Err(colorimetry::ColorError::GridMismatch.into());
    }
    let name = column.map(str::to_string).unwrap_or_else(|| t.names[0].clone());
    let f = est.reflectance_from(t.column(&name)?)?;
    Ok((name, f))
}

fn cmd_estimate(ctx: &Ctx, xyz: &str, out: Option<&Path>, color: &ColorArgs) -> Result<(), CliError> {
    let est = build_estimator(ctx, color)?;
    let y = parse_xyz(xyz)?;
    let config = json!({
        "method": est.config.method,
        "basis": est.config.basis,
        "equalize": est.config.equalize,
        "alpha": est.alpha(),
        "illuminant": est.config.illuminant,
        "window": est.config.window,
    });
    let (reflectance, report) = match est.config.method {
        Method::Centroid => {
            let r = est.estimate_reflectance(&y)?;
            let report = json!({
                "config": config,
                "target_xyz": y.components,
                "xyz": r.xyz,
                "relative_residual": r.relative_residual,
                "tau0": r.tau0,
                "iterations": r.iterations,
                "jacobian_condition": r.jacobian_condition,
            });
            (r.reflectance, report)
        }
        Method::Hawkyard => {
            let h = est.hawkyard_estimate(&y)?;
            let residual = h
                .clamped_xyz
                .iter()
                .zip(&y.components)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
                / y.norm_inf().max(f64::MIN_POSITIVE);
            let report = json!({
                "config": config,
                "target_xyz": y.components,
                "xyz": h.clamped_xyz,
                "relative_residual": residual,
                "raw_xyz": h.raw_xyz,
                "coefficients": h.alpha,
                "clamp_fraction": h.clamp_fraction,
            });
            (h.clamped, report)
        }
    };
    if let Some(path) = out {
        write_file(path, &spectrum_csv(&est, "reflectance", &reflectance)?)?;
    }
    let values = reflectance.values();
    let mut report = report;
    report["min"] = json!(values.iter().copied().fold(f64::INFINITY, f64::min));
    report["max"] = json!(values.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    print_json(&report)
}

fn cmd_tristimulus(ctx: &Ctx, path: &Path, column: Option<&str>, emission: bool, color: &ColorArgs) -> Result<(), CliError> {
    let est = build_estimator(ctx, color)?;
    let kind = if emission { SpectraKind::Emission } else { SpectraKind::Reflectance };
    let (name, f) = column_on_cells(&est, path, column, kind)?;
    let xyz = if emission { est.emission_tristimulus(&f)? } else { est.tristimulus(&f)? };
    print_json(&json!({ "column": name, "emission": emission, "xyz": xyz.components }))
}

fn cmd_batch(ctx: &Ctx, dataset: Option<&Path>, out_curves: Option<&Path>, color: &ColorArgs) -> Result<(), CliError> {
    let est = build_estimator(ctx, color)?;
    let path = dataset.map(Path::to_path_buf).unwrap_or_else(|| ctx.data(DATASET_FILE));
    let data = SpectraTable::from_path(&path, SpectraKind::Reflectance)?;
    let stats = colorimetry::residual_stats(&data, &est)?;
    if let Some(p) = out_curves {
        write_file(p, &stats.curves_csv())?;
    }
    let overall_mean_abs = stats.mean_abs.iter().sum::<f64>() / stats.mean_abs.len() as f64;
    print_json(&json!({
        "dataset": path.display().to_string(),
        "method": est.config.method,
        "succeeded": stats.succeeded,
        "failed": stats.failed,
        "overall_mean_abs_residual": overall_mean_abs,
        "samples": stats.samples,
    }))
}

fn cmd_inside(ctx: &Ctx, xyz: &str, color: &ColorArgs) -> Result<(), CliError> {
    let est = build_estimator(ctx, color)?;
    let y = parse_xyz(xyz)?;
    let inside = est.contains(&y)?;
    print_json(&json!({ "xyz": y.components, "inside": inside, "white_point": est.white_point().components }))?;
    if inside {
        Ok(())
    } else {
        Err(CliError::infeasible("outside", "response is not in the interior of the object-color solid"))
    }
}

fn cmd_equalize(
    ctx: &Ctx,
    w: Option<&Path>,
    out_knots: Option<&Path>,
    out_equalized: Option<&Path>,
    color: &ColorArgs,
) -> Result<(), CliError> {
    let w = match w {
        Some(p) => load_step(p)?,
        None => build_estimator(ctx, color)?.basis,
    };
    let alpha = match color.alpha.as_deref() {
        Some(a) => parse_list(a, "--alpha")?,
        None => vec![1.0; w.channels()],
    };
    let rep = reparam::build_equalization(&w, &alpha)?;
    if let Some(p) = out_knots {
        let mut s = String::from("omega,lambda\n");
        for (o, l) in &rep.knots {
            s.push_str(&format!("{o:.16e},{l:.16e}\n"));
        }
        write_file(p, &s)?;
    }
    let equalized = rep.equalized_responsivities(&w)?;
    if let Some(p) = out_equalized {
        write_file(p, &colorimetry::step_function_csv(&equalized))?;
    }
    print_json(&json!({
        "alpha": rep.alpha,
        "c": rep.c,
        "knots": rep.knots.len(),
        "equalized_domain": equalized.domain(),
        "equalized_integral": equalized.integral(),
    }))
}

fn cmd_solve(w: &Path, y: &str, regime: Regime, out: Option<&Path>) -> Result<(), CliError> {
    let w = load_step(w)?;
    let y = ResponseVector::new(parse_list(y, "--y")?);
    let r = metamer_core::solve_saddlepoint(&w, &y, regime, &SolveOptions::default())?;
    if let Some(p) = out {
        write_file(p, &colorimetry::step_function_csv(&r.estimate))?;
    }
    print_json(&json!({
        "regime": regime,
        "tau0": r.tau0,
        "iterations": r.iterations,
        "response_residual": r.response_residual,
        "jacobian_condition": r.jacobian_condition,
    }))
}

fn cmd_volume(w: &Path, y: &str, n: usize, exact_ih: bool) -> Result<(), CliError> {
    let w = load_step(w)?;
    let y = ResponseVector::new(parse_list(y, "--y")?);
    let v = volume::asymptotic_volume(&w, &y, n, &SolveOptions::default())?;
    let mut report = serde_json::to_value(&v)?;
    report["log_volume_without_phi"] = json!(v.log_volume_without_phi());
    if exact_ih {
        if y.dim() != 1 {
            return Err(CliError::input("--exact-ih needs a single-channel responsivity"));
        }
        let red = volume::reduce(&w, n)?;
        let exact = oracle::exact_section_volume_1d(&red, y.components[0])?;
        report["exact_volume"] = json!(exact);
        if let Some(approx) = v.volume {
            report["relative_error"] = json!((approx - exact) / exact);
        }
    }
    print_json(&report)
}

#[allow(clippy::too_many_arguments)]
fn cmd_verify_centroid(
    w: &Path,
    y: &str,
    n: usize,
    samples: usize,
    seed: u64,
    chains: usize,
    burn_in: Option<usize>,
    thinning: Option<usize>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let w = load_step(w)?;
    let y = ResponseVector::new(parse_list(y, "--y")?);
    let opts = HitAndRunOptions { samples, seed, burn_in, thinning, chains, ..HitAndRunOptions::default() };
    let report = oracle::empirical_centroid_vs_formula(&w, &y, n, &opts)?;
    if let Some(p) = out {
        let mut s = String::from("cell,sampled_mean,standard_error,predicted,z\n");
        for c in &report.cells {
            s.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                c.cell, c.sampled_mean, c.standard_error, c.predicted, c.z
            ));
        }
        write_file(p, &s)?;
    }
    eprintln!("max|z| = {:.4}", report.max_abs_z);
    let stats = &report.stats;
    print_json(&json!({
        "n": report.n,
        "tau0": report.tau0,
        "max_abs_z": report.max_abs_z,
        "l1_distance": report.l1_distance,
        "samples": stats.sample_count,
        "seed": stats.seed,
        "chains": stats.chains,
        "burn_in": stats.burn_in,
        "thinning": stats.thinning,
        "constraint_violation_max": stats.constraint_violation_max,
        "degenerate_chords": stats.degenerate_chords,
    }))
}

fn cmd_lightsource(
    ctx: &Ctx,
    xyz: Option<&str>,
    spectrum: Option<&Path>,
    column: Option<&str>,
    out: Option<&Path>,
    color: &ColorArgs,
) -> Result<(), CliError> {
    let est = build_estimator(ctx, color)?;
    let y = match (xyz, spectrum) {
        (Some(s), _) => parse_xyz(s)?,
        (None, Some(p)) => {
            let (_, f) = column_on_cells(&est, p, column, SpectraKind::Emission)?;
            est.emission_tristimulus(&f)?
        }
        (None, None) => return Err(CliError::input("need --xyz or --spectrum")),
    };
    let r = est.estimate_lightsource(&y)?;
    let mut report = json!({
        "target_xyz": y.components,
        "estimable": r.estimable,
        "tau0": r.tau0,
        "reason": r.reason,
    });
    if let Some(s) = &r.spectrum {
        report["xyz"] = json!(est.emission_tristimulus(s)?.components);
        if let Some(p) = out {
            write_file(p, &spectrum_csv(&est, "power", s)?)?;
        }
    }
    print_json(&report)?;
    if r.estimable {
        Ok(())
    } else {
        Err(CliError::infeasible("not_estimable", r.reason.unwrap_or_default()))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::input(e.to_string()))?;
    }
    let ctx = Ctx {
        data_dir: cli.data_dir.unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data"))),
    };
    match &cli.command {
        Command::Estimate { xyz, out, color } => cmd_estimate(&ctx, xyz, out.as_deref(), color),
        Command::Tristimulus { reflectance, column, emission, color } => {
            cmd_tristimulus(&ctx, reflectance, column.as_deref(), *emission, color)
        }
        Command::Batch { dataset, out_curves, color } => cmd_batch(&ctx, dataset.as_deref(), out_curves.as_deref(), color),
        Command::Inside { xyz, color } => cmd_inside(&ctx, xyz, color),
        Command::Equalize { w, out_knots, out_equalized, color } => cmd_equalize(
            &ctx,
            w.as_deref(),
            out_knots.as_deref(),
            out_equalized.as_deref(),
            color,
        ),
        Command::Solve { w, y, regime, out } => cmd_solve(w, y, (*regime).into(), out.as_deref()),
        Command::Volume { w, y, n, exact_ih } => cmd_volume(w, y, *n, *exact_ih),
        Command::VerifyCentroid { w, y, n, samples, seed, chains, burn_in, thinning, out } => {
            cmd_verify_centroid(w, y, *n, *samples, *seed, *chains, *burn_in, *thinning, out.as_deref())
        }
        Command::Lightsource { xyz, spectrum, column, out, color } => {
            cmd_lightsource(&ctx, xyz.as_deref(), spectrum.as_deref(), column.as_deref(), out.as_deref(), color)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log_level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.report());
            ExitCode::from(e.code as u8)
        }
    }
}
