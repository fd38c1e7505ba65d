use std::fmt;
use std::path::PathBuf;

use carbomarket_core::allocation::AllocationError;
use carbomarket_core::cef::CefError;
use carbomarket_core::clearing::ClearingError;
use carbomarket_core::network::NetworkError;
use carbomarket_core::simulator::SimulationError;

/// One schema violation, addressed by its path in the case file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CaseError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("schema error: {}", join(.0))]
    Schema(Vec<FieldError>),
    #[error("{}, line {line}: {message}", path.display())]
    Series { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Network(NetworkError),
    #[error("cannot serialize: {0}")]
    Serialize(String),
}

fn join(v: &[FieldError]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Exit status classes of the command-line tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    Usage = 2,
    Data = 3,
    Infeasible = 4,
    Numeric = 5,
}

impl ExitClass {
    pub fn code(self) -> i32 {
        self as i32
    }

    pub fn tag(self) -> &'static str {
        match self {
            ExitClass::Usage => "usage",
            ExitClass::Data => "data",
            ExitClass::Infeasible => "infeasible",
            ExitClass::Numeric => "numeric",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error("{0}")]
    Clearing(#[from] ClearingError),
    #[error("{0}")]
    Allocation(#[from] AllocationError),
    #[error("{0}")]
    Cef(#[from] CefError),
    #[error("{0}")]
    Simulation(#[from] SimulationError),
    #[error("{}: {source}", path.display())]
    Output { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Report(String),
    #[error("writing output: {0}")]
    Stdout(#[from] std::io::Error),
}

fn clearing_class(e: &ClearingError) -> ExitClass {
    match e {
        ClearingError::Infeasible { .. } | ClearingError::Unbounded => ExitClass::Infeasible,
        ClearingError::Dimension(_) => ExitClass::Data,
        ClearingError::Lp(_) => ExitClass::Numeric,
    }
}

fn allocation_class(e: &AllocationError) -> ExitClass {
    match e {
        AllocationError::InfeasibleAtOrigin | AllocationError::InfeasibleAt { .. } | AllocationError::Unbounded { .. } => {
            ExitClass::Infeasible
        }
        AllocationError::Mapping(_) => ExitClass::Data,
        AllocationError::NonProgress { .. } | AllocationError::Lp(_) => ExitClass::Numeric,
    }
}

impl CliError {
    pub fn class(&self) -> ExitClass {
        match self {
            CliError::Usage(_) => ExitClass::Usage,
            CliError::Case(_) | CliError::Output { .. } | CliError::Report(_) | CliError::Stdout(_) => ExitClass::Data,
            CliError::Clearing(e) => clearing_class(e),
            CliError::Allocation(e) => allocation_class(e),
            CliError::Cef(CefError::NotConserved { .. } | CefError::BadEdge { .. }) => ExitClass::Data,
            CliError::Cef(_) => ExitClass::Numeric,
            CliError::Simulation(e) => match e {
                SimulationError::Clearing { source, .. } => clearing_class(source),
                SimulationError::Allocation { source, .. } => allocation_class(source),
                SimulationError::Config(_) => ExitClass::Data,
                SimulationError::Storage { .. } | SimulationError::Settlement { .. } => ExitClass::Numeric,
            },
        }
    }
}
