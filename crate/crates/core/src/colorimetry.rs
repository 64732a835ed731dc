//! Spectral estimation from tristimulus values.
//!
//! Tabulated spectra are read as step functions: the row at wavelength
//! `λ_i` covers the cell `[λ_i, λ_i + Δ)`. The responsivity is
//! `w(λ) = k I(λ) (x̄, ȳ, z̄)(λ)` with `k` chosen so that the perfect white
//! reflector has `Y = 1`; tristimulus values are `∫ r w`.
//!
//! The centroid estimator solves the saddlepoint equation, on the raw
//! responsivities or (with equalization) through the normalized shortcut
//! system, which makes constant reflectances round-trip exactly. The
//! Hawkyard estimator is the linear `3 × 3` solve on normalized
//! responsivities followed by clamping to `[0,1]`. Light sources use the
//! unbounded regime `σ(t) = -1/t` on the observer responsivities alone.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reparam::{self, ReparamError};
use crate::saddle::{solve_saddlepoint, SaddleResult, SolveError, SolveOptions};
use crate::specfun::Regime;
use crate::stepfn::{self, apply_operator, ResponseVector, StepError, StepFunction};
use crate::zonotope::{ZonotopeError, ZonotopeModel};

/// Relative tolerance on the spacing of a wavelength grid.
const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ColorError {
    #[error("I/O error: {0}")]
    Io(String),
    #[error("CSV error: {0}")]
    Csv(String),
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("wavelength grid is not uniform at row {row}")]
    NonUniformGrid { row: usize },
    #[error("table needs at least two rows")]
    TooFewRows,
    #[error("wavelength grids differ")]
    GridMismatch,
    #[error("no column named {0:?}")]
    MissingColumn(String),
    #[error("reflectance {column:?} at row {row} is {value}, outside [0, 1]")]
    ReflectanceOutOfRange { column: String, row: usize, value: f64 },
    #[error("window [{0}, {1}] contains no tabulated wavelengths")]
    EmptyWindow(f64, f64),
    #[error("normalization failed: white-point luminance is {0}")]
    BadNormalization(f64),
    #[error("the 3x3 system is singular")]
    SingularMatrix,
    #[error("normalized responsivities need a positive channel sum (cell {cell})")]
    NonPositiveSum { cell: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Solve(SolveError),
    #[error(transparent)]
    Reparam(ReparamError),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Zonotope(#[from] ZonotopeError),
}

impl From<SolveError> for ColorError {
    fn from(e: SolveError) -> Self {
        ColorError::Solve(e)
    }
}

impl From<ReparamError> for ColorError {
    fn from(e: ReparamError) -> Self {
        match e {
            ReparamError::Solve(s) => ColorError::Solve(s),
            ReparamError::Step(s) => ColorError::Step(s),
            other => ColorError::Reparam(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectraKind {
    Cmf,
    Illuminant,
    Reflectance,
    Emission,
}

/// Columns of spectral data on a shared uniform wavelength grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectraTable {
    pub kind: SpectraKind,
    pub wavelengths: Vec<f64>,
    pub names: Vec<String>,
    /// `columns[c][row]`.
    pub columns: Vec<Vec<f64>>,
}

impl SpectraTable {
    pub fn new(
        kind: SpectraKind,
        wavelengths: Vec<f64>,
        names: Vec<String>,
        columns: Vec<Vec<f64>>,
    ) -> Result<Self, ColorError> {
        if wavelengths.len() < 2 {
            return Err(ColorError::TooFewRows);
        }
        let step = wavelengths[1] - wavelengths[0];
        if !(step > 0.0) {
            return Err(ColorError::NonUniformGrid { row: 1 });
        }
        for (i, pair) in wavelengths.windows(2).enumerate() {
            if ((pair[1] - pair[0]) - step).abs() > GRID_TOL * step.max(1.0) {
                return Err(ColorError::NonUniformGrid { row: i + 1 });
            }
        }
        if names.len() != columns.len() || columns.iter().any(|c| c.len() != wavelengths.len()) {
            return Err(ColorError::Csv("column lengths differ from the wavelength column".into()));
        }
        let table = Self { kind, wavelengths, names, columns };
        if kind == SpectraKind::Reflectance {
            table.validate_reflectances()?;
        }
        Ok(table)
    }

    /// Reads `wavelength,<name1>,<name2>,…` with numeric rows.
    pub fn from_reader<R: Read>(reader: R, kind: SpectraKind) -> Result<Self, ColorError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
        let headers = rdr.headers().map_err(|e| ColorError::Csv(e.to_string()))?.clone();
        if headers.len() < 2 {
            return Err(ColorError::Csv("expected a wavelength column and at least one data column".into()));
        }
        let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut wavelengths = Vec::new();
        let mut columns = vec![Vec::new(); names.len()];
        for (row, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| ColorError::Csv(e.to_string()))?;
            let parse = |s: &str| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| ColorError::Csv(format!("row {}: cannot parse {s:?}", row + 1)))
            };
            wavelengths.push(parse(&record[0])?);
            for (c, col) in columns.iter_mut().enumerate() {
                col.push(parse(record.get(c + 1).unwrap_or(""))?);
            }
        }
        Self::new(kind, wavelengths, names, columns)
    }

    pub fn from_path(path: &Path, kind: SpectraKind) -> Result<Self, ColorError> {
        let file = std::fs::File::open(path).map_err(|e| ColorError::Io(format!("{}: {e}", path.display())))?;
        Self::from_reader(file, kind)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("wavelength");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (row, wl) in self.wavelengths.iter().enumerate() {
            out.push_str(&wl.to_string());
            for col in &self.columns {
                out.push(',');
                out.push_str(&format!("{:.16e}", col[row]));
            }
            out.push('\n');
        }
        out
    }

    pub fn step(&self) -> f64 {
        self.wavelengths[1] - self.wavelengths[0]
    }

    pub fn column(&self, name: &str) -> Result<&[f64], ColorError> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| ColorError::MissingColumn(name.to_string()))
    }

    fn validate_reflectances(&self) -> Result<(), ColorError> {
        for (name, col) in self.names.iter().zip(&self.columns) {
            if let Some((row, &value)) = col.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
                return Err(ColorError::ReflectanceOutOfRange { column: name.clone(), row: row + 1, value });
            }
        }
        Ok(())
    }

    /// Rows with `lo <= λ <= hi`.
    pub fn restrict(&self, lo: f64, hi: f64) -> Result<Self, ColorError> {
        let eps = GRID_TOL * self.step().max(1.0);
        let rows: Vec<usize> =
            (0..self.wavelengths.len()).filter(|&i| self.wavelengths[i] >= lo - eps && self.wavelengths[i] <= hi + eps).collect();
        if rows.len() < 2 {
            return Err(ColorError::EmptyWindow(lo, hi));
        }
        Ok(Self {
            kind: self.kind,
            wavelengths: rows.iter().map(|&i| self.wavelengths[i]).collect(),
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| rows.iter().map(|&i| c[i]).collect()).collect(),
        })
    }

    pub fn same_grid(&self, other: &SpectraTable) -> bool {
        self.wavelengths.len() == other.wavelengths.len()
            && self
                .wavelengths
                .iter()
                .zip(&other.wavelengths)
                .all(|(a, b)| (a - b).abs() <= GRID_TOL * self.step().max(1.0))
    }

    /// Cell breakpoints `λ_0, λ_0 + Δ, …, λ_last + Δ`.
    pub fn breaks(&self) -> Vec<f64> {
        let step = self.step();
        let a = self.wavelengths[0];
        let n = self.wavelengths.len();
        (0..=n).map(|j| a + step * j as f64).collect()
    }

    /// One column as a step function over the cells.
    pub fn column_step(&self, name: &str) -> Result<StepFunction, ColorError> {
        let col = self.column(name)?.to_vec();
        Ok(StepFunction::scalar(self.breaks(), col)?.with_labels(vec![name.to_string()])?)
    }
}

/// Reads a step function from `lo,hi,<channel>,…` rows, one per piece.
pub fn read_step_function<R: Read>(reader: R) -> Result<StepFunction, ColorError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
    let headers = rdr.headers().map_err(|e| ColorError::Csv(e.to_string()))?.clone();
    if headers.len() < 3 || &headers[0] != "lo" || &headers[1] != "hi" {
        return Err(ColorError::Csv("expected header lo,hi,<channel>,...".into()));
    }
    let labels: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
    let m = labels.len();
    let mut breaks = Vec::new();
    let mut values = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| ColorError::Csv(e.to_string()))?;
        let nums = record
            .iter()
            .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .filter(|v| v.len() == m + 2)
            .ok_or_else(|| ColorError::Csv(format!("row {}: expected {} numbers", row + 1, m + 2)))?;
        match breaks.last() {
            None => breaks.push(nums[0]),
            Some(&prev) if prev == nums[0] => {}
            Some(_) => return Err(ColorError::Csv(format!("row {}: lo does not match the previous hi", row + 1))),
        }
        breaks.push(nums[1]);
        values.extend_from_slice(&nums[2..]);
    }
    Ok(StepFunction::from_flat(breaks, values, m)?.with_labels(labels)?)
}

pub fn load_step_function(path: &Path) -> Result<StepFunction, ColorError> {
    let file = std::fs::File::open(path).map_err(|e| ColorError::Io(format!("{}: {e}", path.display())))?;
    read_step_function(file)
}

/// Writes `lo,hi,<labels>` rows.
pub fn step_function_csv(f: &StepFunction) -> String {
    let mut out = String::from("lo,hi");
    for l in f.labels() {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for k in 0..f.pieces() {
        out.push_str(&format!("{:.16e},{:.16e}", f.breaks()[k], f.breaks()[k + 1]));
        for v in f.piece(k) {
            out.push_str(&format!(",{v:.16e}"));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Centroid,
    Hawkyard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    Xyz,
    Lms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub max_iterations: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        let d = SolveOptions::default();
        Self { tol_abs: d.tol_abs, tol_rel: d.tol_rel, max_iterations: d.max_iterations }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub method: Method,
    pub basis: Basis,
    pub equalize: bool,
    /// Coefficients of the positive combination; all ones if absent.
    pub alpha: Option<Vec<f64>>,
    /// XYZ-to-LMS matrix, required when `basis` is `lms`.
    pub lms_matrix: Option<[[f64; 3]; 3]>,
    /// Illuminant column name; `E` is the constant 1 if not tabulated.
    pub illuminant: String,
    /// Wavelength window `[lo, hi]` of tabulated rows used.
    pub window: [f64; 2],
    pub tolerances: Tolerances,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            method: Method::Centroid,
            basis: Basis::Xyz,
            equalize: true,
            alpha: None,
            lms_matrix: None,
            illuminant: "E".into(),
            window: [400.0, 700.0],
            tolerances: Tolerances::default(),
        }
    }
}

impl EstimatorConfig {
    pub fn from_json(s: &str) -> Result<Self, ColorError> {
        serde_json::from_str(s).map_err(|e| ColorError::Json(e.to_string()))
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            tol_abs: self.tolerances.tol_abs,
            tol_rel: self.tolerances.tol_rel,
            max_iterations: self.tolerances.max_iterations,
            ..SolveOptions::default()
        }
    }
}

/// An XYZ-to-LMS matrix shipped as data, with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisMatrix {
    pub name: String,
    #[serde(default)]
    pub source: String,
    pub matrix: [[f64; 3]; 3],
}

impl BasisMatrix {
    pub fn from_json(s: &str) -> Result<Self, ColorError> {
        serde_json::from_str(s).map_err(|e| ColorError::Json(e.to_string()))
    }
}

/// The illuminant column of `illuminants`, or the constant 1 for `E` when
/// it is not tabulated.
pub fn illuminant_values(
    illuminants: Option<&SpectraTable>,
    name: &str,
    grid: &SpectraTable,
) -> Result<Vec<f64>, ColorError> {
    match illuminants {
        Some(t) if t.names.iter().any(|n| n == name) => {
            let lo = grid.wavelengths[0];
            let hi = grid.wavelengths[grid.wavelengths.len() - 1];
            let r = t.restrict(lo, hi)?;
            if !r.same_grid(grid) {
                return Err(ColorError::GridMismatch);
            }
            Ok(r.column(name)?.to_vec())
        }
        _ if name == "E" => Ok(vec![1.0; grid.wavelengths.len()]),
        _ => Err(ColorError::MissingColumn(name.to_string())),
    }
}

/// `k I(λ) (x̄, ȳ, z̄)(λ)` on the window, with `k` making the white `Y` equal 1.
pub fn responsivity(
    cmf: &SpectraTable,
    illuminant: &[f64],
    window: [f64; 2],
) -> Result<StepFunction, ColorError> {
    let t = cmf.restrict(window[0], window[1])?;
    let names = ["x_bar", "y_bar", "z_bar"];
    let cols: Vec<&[f64]> = names.iter().map(|n| t.column(n)).collect::<Result<_, _>>()?;
    if illuminant.len() != t.wavelengths.len() {
        return Err(ColorError::GridMismatch);
    }
    let step = t.step();
    let luminance: f64 = stepfn::compensated_sum((0..illuminant.len()).map(|r| step * illuminant[r] * cols[1][r]));
    if !(luminance > 0.0) {
        return Err(ColorError::BadNormalization(luminance));
    }
    let k = 1.0 / luminance;
    let values = (0..illuminant.len()).flat_map(|r| cols.iter().map(move |c| k * illuminant[r] * c[r])).collect::<Vec<_>>();
    Ok(StepFunction::from_flat(t.breaks(), values, 3)?
        .with_labels(vec!["X".into(), "Y".into(), "Z".into()])?)
}

/// `∫ r w`.
pub fn tristimulus(w: &StepFunction, reflectance: &StepFunction) -> Result<ResponseVector, ColorError> {
    Ok(apply_operator(w, reflectance)?)
}

/// `M w` for a `3 × 3` basis change.
fn change_basis(w: &StepFunction, m: &Matrix3<f64>, labels: [&str; 3]) -> Result<StepFunction, ColorError> {
    let out = w.map_pieces(3, |v, out| {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..3).map(|j| m[(i, j)] * v[j]).sum();
        }
    });
    Ok(out.with_labels(labels.iter().map(|s| s.to_string()).collect())?)
}

#[derive(Debug, Clone, Serialize)]
pub struct ReflectanceEstimate {
    pub reflectance: StepFunction,
    pub tau0: Vec<f64>,
    pub iterations: usize,
    pub jacobian_condition: f64,
    /// `∫ r w` of the estimate, in XYZ.
    pub xyz: Vec<f64>,
    /// `max |xyz - y| / max |y|`.
    pub relative_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HawkyardEstimate {
    pub alpha: Vec<f64>,
    pub raw: StepFunction,
    pub clamped: StepFunction,
    /// Fraction of cells changed by clamping.
    pub clamp_fraction: f64,
    /// XYZ of the unclamped and clamped estimates.
    pub raw_xyz: Vec<f64>,
    pub clamped_xyz: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LightSourceEstimate {
    pub estimable: bool,
    pub spectrum: Option<StepFunction>,
    pub tau0: Option<Vec<f64>>,
    pub reason: Option<String>,
}

/// The configured responsivities and the estimators built on them.
#[derive(Debug, Clone)]
pub struct Estimator {
    pub config: EstimatorConfig,
    /// Responsivity in XYZ.
    pub xyz: StepFunction,
    /// Responsivity in the configured basis.
    pub basis: StepFunction,
    /// Observer-only responsivity (illuminant E) in the configured basis,
    /// used for light sources.
    pub observer: StepFunction,
    to_basis: Matrix3<f64>,
}

impl Estimator {
    pub fn new(
        cmf: &SpectraTable,
        illuminants: Option<&SpectraTable>,
        config: EstimatorConfig,
    ) -> Result<Self, ColorError> {
        let grid = cmf.restrict(config.window[0], config.window[1])?;
        let illum = illuminant_values(illuminants, &config.illuminant, &grid)?;
        let xyz = responsivity(cmf, &illum, config.window)?;
        let observer_xyz = responsivity(cmf, &vec![1.0; illum.len()], config.window)?;
        let to_basis = match config.basis {
            Basis::Xyz => Matrix3::identity(),
            Basis::Lms => {
                let m = config
                    .lms_matrix
                    .ok_or_else(|| ColorError::InvalidConfig("basis lms needs lms_matrix".into()))?;
                let m = Matrix3::from_fn(|i, j| m[i][j]);
                if m.determinant().abs() < 1e-12 {
                    return Err(ColorError::SingularMatrix);
                }
                m
            }
        };
        let labels = match config.basis {
            Basis::Xyz => ["X", "Y", "Z"],
            Basis::Lms => ["L", "M", "S"],
        };
        let basis = change_basis(&xyz, &to_basis, labels)?;
        let observer = change_basis(&observer_xyz, &to_basis, labels)?;
        if let Some(a) = &config.alpha {
            if a.len() != 3 {
                return Err(ColorError::InvalidConfig(format!("alpha needs 3 entries, got {}", a.len())));
            }
        }
        Ok(Self { config, xyz, basis, observer, to_basis })
    }

    pub fn alpha(&self) -> Vec<f64> {
        self.config.alpha.clone().unwrap_or_else(|| vec![1.0; 3])
    }

    /// XYZ of the perfect reflector.
    pub fn white_point(&self) -> ResponseVector {
        ResponseVector::with_labels(self.xyz.integral(), self.xyz.labels().to_vec())
    }

    pub fn to_basis(&self, y_xyz: &ResponseVector) -> ResponseVector {
        let v = self.to_basis * DVector::from_column_slice(&y_xyz.components).fixed_rows::<3>(0);
        ResponseVector::with_labels(v.iter().copied().collect(), self.basis.labels().to_vec())
    }

    /// XYZ of a reflectance given on the estimator's cells.
    pub fn tristimulus(&self, reflectance: &StepFunction) -> Result<ResponseVector, ColorError> {
        tristimulus(&self.xyz, reflectance)
    }

    /// A reflectance column as a step function on the estimator's cells.
    pub fn reflectance_from(&self, values: &[f64]) -> Result<StepFunction, ColorError> {
        if values.len() != self.xyz.pieces() {
            return Err(ColorError::GridMismatch);
        }
        Ok(StepFunction::scalar(self.xyz.breaks().to_vec(), values.to_vec())?)
    }

    /// Whether `y` lies in the interior of the object-color solid.
    pub fn contains(&self, y_xyz: &ResponseVector) -> Result<bool, ColorError> {
        if y_xyz.dim() != 3 {
            return Err(SolveError::DimensionMismatch { expected: 3, got: y_xyz.dim() }.into());
        }
        Ok(ZonotopeModel::from_responsivity(&self.xyz).contains_interior(y_xyz)?)
    }

    fn check_dim(y: &ResponseVector) -> Result<(), ColorError> {
        if y.dim() != 3 {
            return Err(SolveError::DimensionMismatch { expected: 3, got: y.dim() }.into());
        }
        Ok(())
    }

    fn solve(&self, w: &StepFunction, y: &ResponseVector, regime: Regime) -> Result<SaddleResult, ColorError> {
        let opts = self.config.solve_options();
        let y_basis = self.to_basis(y);
        if self.config.equalize {
            Ok(reparam::solve_shortcut(w, &self.alpha(), &y_basis, regime, &opts)?)
        } else {
            Ok(solve_saddlepoint(w, &y_basis, regime, &opts)?)
        }
    }

    /// Centroid reflectance with the given XYZ.
    pub fn estimate_reflectance(&self, y_xyz: &ResponseVector) -> Result<ReflectanceEstimate, ColorError> {
        Self::check_dim(y_xyz)?;
        let r = self.solve(&self.basis, y_xyz, Regime::Bounded)?;
        let xyz = self.tristimulus(&r.estimate)?;
        let relative_residual = xyz.sub(y_xyz).norm_inf() / y_xyz.norm_inf().max(f64::MIN_POSITIVE);
        Ok(ReflectanceEstimate {
            reflectance: r.estimate.with_labels(vec!["reflectance".into()])?,
            tau0: r.tau0,
            iterations: r.iterations,
            jacobian_condition: r.jacobian_condition,
            xyz: xyz.components,
            relative_residual,
        })
    }

    /// Linear estimate `r = W̃ α` with `W̃ = w / Σ_i w_i`, `(∫ w W̃ᵀ) α = y`,
    /// then clamped to `[0,1]`.
    pub fn hawkyard_estimate(&self, y_xyz: &ResponseVector) -> Result<HawkyardEstimate, ColorError> {
        Self::check_dim(y_xyz)?;
        let w = &self.basis;
        let sums: Vec<f64> = (0..w.pieces()).map(|k| w.piece(k).iter().sum()).collect();
        if let Some(cell) = sums.iter().position(|s| !(*s > 0.0)) {
            return Err(ColorError::NonPositiveSum { cell });
        }
        let mut a = DMatrix::zeros(3, 3);
        for (k, sum) in sums.iter().enumerate() {
            let mu = w.width(k);
            let v = w.piece(k);
            for i in 0..3 {
                for j in 0..3 {
                    a[(i, j)] += mu * v[i] * v[j] / sum;
                }
            }
        }
        let rhs = DVector::from_vec(self.to_basis(y_xyz).components);
        let alpha = a.lu().solve(&rhs).ok_or(ColorError::SingularMatrix)?;
        let raw_values: Vec<f64> = (0..w.pieces())
            .map(|k| w.piece(k).iter().zip(alpha.iter()).map(|(x, a)| a * x).sum::<f64>() / sums[k])
            .collect();
        let clamped_values: Vec<f64> = raw_values.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let changed = raw_values.iter().zip(&clamped_values).filter(|(a, b)| a != b).count();
        let raw = self.reflectance_from(&raw_values)?;
        let clamped = self.reflectance_from(&clamped_values)?;
        Ok(HawkyardEstimate {
            alpha: alpha.iter().copied().collect(),
            raw_xyz: self.tristimulus(&raw)?.components,
            clamped_xyz: self.tristimulus(&clamped)?.components,
            clamp_fraction: changed as f64 / raw_values.len() as f64,
            raw,
            clamped,
        })
    }

    /// Emission spectrum `-1/⟨τ0, w⟩` with the given XYZ, or `estimable =
    /// false` when the saddlepoint equation has no solution.
    pub fn estimate_lightsource(&self, y_xyz: &ResponseVector) -> Result<LightSourceEstimate, ColorError> {
        Self::check_dim(y_xyz)?;
        match self.solve(&self.observer, y_xyz, Regime::Unbounded) {
            Ok(r) => Ok(LightSourceEstimate {
                estimable: true,
                spectrum: Some(r.estimate.with_labels(vec!["power".into()])?),
                tau0: Some(r.tau0),
                reason: None,
            }),
            Err(ColorError::Solve(SolveError::NotEstimable { reason })) => {
                Ok(LightSourceEstimate { estimable: false, spectrum: None, tau0: None, reason: Some(reason) })
            }
            Err(e) => Err(e),
        }
    }

    /// XYZ of an emission spectrum on the estimator's cells.
    pub fn emission_tristimulus(&self, spectrum: &StepFunction) -> Result<ResponseVector, ColorError> {
        let xyz_observer = change_basis(
            &self.observer,
            &self.to_basis.try_inverse().ok_or(ColorError::SingularMatrix)?,
            ["X", "Y", "Z"],
        )?;
        tristimulus(&xyz_observer, spectrum)
    }

    /// Runs the configured reflectance method.
    pub fn estimate(&self, y_xyz: &ResponseVector) -> Result<StepFunction, ColorError> {
        match self.config.method {
            Method::Centroid => Ok(self.estimate_reflectance(y_xyz)?.reflectance),
            Method::Hawkyard => Ok(self.hawkyard_estimate(y_xyz)?.clamped),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSummary {
    pub name: String,
    pub ok: bool,
    pub error: Option<String>,
    pub mean_abs_residual: f64,
    pub max_abs_residual: f64,
    pub rms_residual: f64,
    /// `max |XYZ(estimate) - XYZ(true)|`.
    pub xyz_error: f64,
}

/// Per-wavelength means of `residual = estimate - true` and its parts
/// `residual⁺ = max(residual, 0)`, `residual⁻ = min(residual, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualStats {
    pub wavelengths: Vec<f64>,
    pub mean_residual: Vec<f64>,
    pub mean_positive: Vec<f64>,
    pub mean_negative: Vec<f64>,
    pub mean_abs: Vec<f64>,
    pub succeeded: usize,
    pub failed: usize,
    pub samples: Vec<SampleSummary>,
}

impl ResidualStats {
    /// Per-wavelength curves as CSV.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("wavelength,mean_residual,mean_positive,mean_negative,mean_abs\n");
        for (i, wl) in self.wavelengths.iter().enumerate() {
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                wl, self.mean_residual[i], self.mean_positive[i], self.mean_negative[i], self.mean_abs[i]
            ));
        }
        out
    }
}

/// Estimates every spectrum of a reflectance table from its own XYZ and
/// aggregates the residuals. Failures are recorded per sample.
pub fn residual_stats(dataset: &SpectraTable, estimator: &Estimator) -> Result<ResidualStats, ColorError> {
    let window = estimator.config.window;
    let data = dataset.restrict(window[0], window[1])?;
    if data.wavelengths.len() != estimator.xyz.pieces()
        || (data.wavelengths[0] - estimator.xyz.breaks()[0]).abs() > GRID_TOL * data.step().max(1.0)
    {
        return Err(ColorError::GridMismatch);
    }
    let results: Vec<Result<Vec<f64>, ColorError>> = data
        .columns
        .par_iter()
        .map(|col| -> Result<Vec<f64>, ColorError> {
            let truth = estimator.reflectance_from(col)?;
            let y = estimator.tristimulus(&truth)?;
            let est = estimator.estimate(&y)?;
            Ok(est.values().iter().zip(col).map(|(e, t)| e - t).collect())
        })
        .collect();

    let rows = data.wavelengths.len();
    let mut ok: Vec<&Vec<f64>> = Vec::new();
    let mut samples = Vec::with_capacity(results.len());
    for ((name, col), res) in data.names.iter().zip(&data.columns).zip(&results) {
        match res {
            Ok(resid) => {
                let truth = estimator.reflectance_from(col)?;
                let est_values: Vec<f64> = resid.iter().zip(col).map(|(r, t)| r + t).collect();
                let est = estimator.reflectance_from(&est_values)?;
                let xyz_error = estimator.tristimulus(&est)?.sub(&estimator.tristimulus(&truth)?).norm_inf();
                samples.push(SampleSummary {
                    name: name.clone(),
                    ok: true,
                    error: None,
                    mean_abs_residual: stepfn::compensated_sum(resid.iter().map(|r| r.abs())) / rows as f64,
                    max_abs_residual: resid.iter().fold(0.0, |m, r| m.max(r.abs())),
                    rms_residual: (stepfn::compensated_sum(resid.iter().map(|r| r * r)) / rows as f64).sqrt(),
                    xyz_error,
                });
                ok.push(resid);
            }
            Err(e) => samples.push(SampleSummary {
                name: name.clone(),
                ok: false,
                error: Some(e.to_string()),
                mean_abs_residual: f64::NAN,
                max_abs_residual: f64::NAN,
                rms_residual: f64::NAN,
                xyz_error: f64::NAN,
            }),
        }
    }
    let count = ok.len().max(1) as f64;
    let mean_of = |f: &dyn Fn(f64) -> f64| -> Vec<f64> {
        (0..rows).map(|i| stepfn::compensated_sum(ok.iter().map(|r| f(r[i]))) / count).collect()
    };
    // Positive and negative parts are accumulated separately; the signed and
    // absolute means follow from them.
    let mean_positive = mean_of(&|r| r.max(0.0));
    let mean_negative = mean_of(&|r| r.min(0.0));
    Ok(ResidualStats {
        wavelengths: data.wavelengths.clone(),
        mean_residual: mean_positive.iter().zip(&mean_negative).map(|(p, n)| p + n).collect(),
        mean_abs: mean_positive.iter().zip(&mean_negative).map(|(p, n)| p - n).collect(),
        mean_positive,
        mean_negative,
        succeeded: ok.len(),
        failed: samples.len() - ok.len(),
        samples,
    })
}
