//! Exit codes and the one-line error report written to stderr.

use metamer_core::colorimetry::ColorError;
use metamer_core::oracle::OracleError;
use metamer_core::reparam::ReparamError;
use metamer_core::stepfn::StepError;
use metamer_core::volume::VolumeError;
use metamer_core::zonotope::ZonotopeError;
use metamer_core::SolveError;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub msg: String,
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        Self { code: EXIT_INPUT, kind: "input", msg: msg.into() }
    }

    pub fn infeasible(kind: &'static str, msg: impl Into<String>) -> Self {
        Self { code: EXIT_INFEASIBLE, kind, msg: msg.into() }
    }

    /// `error: kind=<kind> code=<code> msg=<message on one line>`.
    pub fn report(&self) -> String {
        format!("error: kind={} code={} msg={}", self.kind, self.code, self.msg.replace('\n', " "))
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        let (code, kind) = match &e {
            SolveError::DependentChannels { .. } => (EXIT_INPUT, "dependent_channels"),
            SolveError::UnboundedConditions { .. } => (EXIT_INPUT, "unbounded_conditions"),
            SolveError::DimensionMismatch { .. } => (EXIT_INPUT, "dimension_mismatch"),
            SolveError::Step(_) | SolveError::Zonotope(_) => (EXIT_INPUT, "input"),
            SolveError::BoundaryOrExteriorResponse => (EXIT_INFEASIBLE, "boundary_or_exterior"),
            SolveError::NotEstimable { .. } => (EXIT_INFEASIBLE, "not_estimable"),
            SolveError::NegativeResponse { .. } => (EXIT_INFEASIBLE, "negative_response"),
            SolveError::MaxIterations { .. } => (EXIT_SOLVER, "max_iterations"),
            SolveError::InfeasiblePoint { .. } => (EXIT_SOLVER, "infeasible_iterate"),
        };
        Self { code, kind, msg: e.to_string() }
    }
}

impl From<StepError> for CliError {
    fn from(e: StepError) -> Self {
        Self::input(e.to_string())
    }
}

impl From<ZonotopeError> for CliError {
    fn from(e: ZonotopeError) -> Self {
        Self::input(e.to_string())
    }
}

impl From<ReparamError> for CliError {
    fn from(e: ReparamError) -> Self {
        match e {
            ReparamError::Solve(s) => s.into(),
            ReparamError::NonPositiveCombination { .. } => {
                Self { code: EXIT_INPUT, kind: "non_positive_combination", msg: e.to_string() }
            }
            other => Self::input(other.to_string()),
        }
    }
}

impl From<VolumeError> for CliError {
    fn from(e: VolumeError) -> Self {
        match e {
            VolumeError::Solve(s) => s.into(),
            VolumeError::RankDeficient => Self { code: EXIT_INPUT, kind: "dependent_channels", msg: e.to_string() },
            other => Self::input(other.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Solve(s) => s.into(),
            OracleError::Volume(v) => v.into(),
            OracleError::TooManyTerms(_) => Self { code: EXIT_SOLVER, kind: "too_many_terms", msg: e.to_string() },
            other => Self::input(other.to_string()),
        }
    }
}

impl From<ColorError> for CliError {
    fn from(e: ColorError) -> Self {
        match e {
            ColorError::Solve(s) => s.into(),
            ColorError::Reparam(r) => r.into(),
            ColorError::SingularMatrix => Self { code: EXIT_SOLVER, kind: "singular_matrix", msg: e.to_string() },
            other => Self::input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::input(e.to_string())
    }
}
