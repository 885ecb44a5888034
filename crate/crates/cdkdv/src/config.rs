//! Run configuration: JSON schema, validation and assembly into solver
//! inputs. Parsing is total (errors, never panics) since configs arrive
//! from untrusted files.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{Algebra, AlgebraError, CdNumber};
use crate::solitons::{make_initial_field, SolitonError, SolitonSpec, TwoSolitonSpec};
use crate::solver::{Equation, EvolutionSpec, Field, Grid, SolverError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("field `{field}`: expected {expected} coefficients, got {got}")]
    WrongLength {
        field: String,
        expected: usize,
        got: usize,
    },
    #[error("field `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Soliton(#[from] SolitonError),
    #[error("initial data file: {0}")]
    InitialFile(String),
}

/// Initial-condition descriptor.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialSpec {
    Zero,
    Soliton {
        lambda: f64,
        alpha: Vec<f64>,
        /// Peak position at t = 0; defaults to mid-domain.
        #[serde(default)]
        peak: Option<f64>,
        /// Second constituent: present means a superposed pair.
        #[serde(default)]
        lambda2: Option<f64>,
        #[serde(default)]
        beta: Option<Vec<f64>>,
        #[serde(default)]
        peak2: Option<f64>,
    },
    File {
        path: String,
        /// Snapshot index inside the file; defaults to the last one.
        #[serde(default)]
        time_index: Option<usize>,
    },
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::Zero
    }
}

fn default_record_every() -> usize {
    10
}

fn default_out() -> String {
    "run.csv".to_string()
}

fn default_conserved_out() -> String {
    "conserved.csv".to_string()
}

/// The JSON schema of a simulation run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub level: u32,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub l: f64,
    pub dt: f64,
    pub t_end: f64,
    pub equation: Equation,
    #[serde(default)]
    pub epsilon: f64,
    /// Coefficients of the constant external field; defaults to zero.
    #[serde(default)]
    pub v: Option<Vec<f64>>,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub dealias: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: String,
    #[serde(default = "default_conserved_out")]
    pub conserved_out: String,
}

/// Parses and validates a config; every error names the offending field.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let config: RunConfig = serde_json::from_str(text)?;
    validate(&config)?;
    Ok(config)
}

fn validate(config: &RunConfig) -> Result<(), ConfigError> {
    if config.level > crate::algebra::MAX_LEVEL {
        return Err(AlgebraError::LevelTooLarge(config.level).into());
    }
    let dim = 1usize << config.level;
    if let Some(v) = &config.v {
        if v.len() != dim {
            return Err(ConfigError::WrongLength {
                field: "v".to_string(),
                expected: dim,
                got: v.len(),
            });
        }
        if v.iter().any(|c| !c.is_finite()) {
            return Err(ConfigError::Invalid {
                field: "v".to_string(),
                message: "coefficients must be finite".to_string(),
            });
        }
    }
    if let InitialSpec::Soliton {
        lambda,
        alpha,
        lambda2,
        beta,
        ..
    } = &config.initial
    {
        if alpha.len() != dim {
            return Err(ConfigError::WrongLength {
                field: "initial.alpha".to_string(),
                expected: dim,
                got: alpha.len(),
            });
        }
        if !(lambda.is_finite() && *lambda > 0.0) {
            return Err(ConfigError::Invalid {
                field: "initial.lambda".to_string(),
                message: format!("must be positive, got {lambda}"),
            });
        }
        match (lambda2, beta) {
            (None, None) => {}
            (Some(l2), Some(b)) => {
                if b.len() != dim {
                    return Err(ConfigError::WrongLength {
                        field: "initial.beta".to_string(),
                        expected: dim,
                        got: b.len(),
                    });
                }
                if !(l2.is_finite() && *l2 > 0.0) {
                    return Err(ConfigError::Invalid {
                        field: "initial.lambda2".to_string(),
                        message: format!("must be positive, got {l2}"),
                    });
                }
            }
            _ => {
                return Err(ConfigError::Invalid {
                    field: "initial".to_string(),
                    message: "lambda2 and beta must be given together".to_string(),
                });
            }
        }
    }
    if config.record_every == 0 {
        return Err(ConfigError::Invalid {
            field: "record_every".to_string(),
            message: "must be at least 1".to_string(),
        });
    }
    Ok(())
}

/// Everything a run needs, assembled from a validated config.
pub struct PreparedRun {
    pub algebra: Arc<Algebra>,
    pub grid: Grid,
    pub spec: EvolutionSpec,
    pub initial: Field,
    /// Boundary magnitude of a sampled soliton, when applicable.
    pub boundary_decay: Option<f64>,
}

/// Builds the algebra, grid, evolution spec and initial field.
/// `load_file` supplies the contents of `initial.kind = "file"` inputs.
pub fn prepare_run(
    config: &RunConfig,
    load_file: impl Fn(&str) -> Result<String, String>,
) -> Result<PreparedRun, ConfigError> {
    let algebra = Algebra::shared(config.level)?;
    let dim = algebra.dim();
    let grid = Grid::new(config.n, config.l)?;
    let v = match &config.v {
        Some(coeffs) => CdNumber::from_coeffs(coeffs.clone()),
        None => CdNumber::zero(dim),
    };
    let spec = EvolutionSpec::new(
        config.equation,
        v,
        config.epsilon,
        config.dt,
        config.t_end,
        config.record_every,
        config.dealias,
        &grid,
    )?;
    let mut boundary_decay = None;
    let initial = match &config.initial {
        InitialSpec::Zero => Field::zero(grid, algebra.clone()),
        InitialSpec::Soliton {
            lambda,
            alpha,
            peak,
            lambda2,
            beta,
            peak2,
        } => {
            let mid = config.l / 2.0;
            let (field, boundary) = if let (Some(l2), Some(b)) = (lambda2, beta) {
                let spec2 = TwoSolitonSpec::new(
                    algebra.clone(),
                    *lambda,
                    CdNumber::from_coeffs(alpha.clone()),
                    *l2,
                    CdNumber::from_coeffs(b.clone()),
                )?
                .with_peaks_at(peak.unwrap_or(mid * 0.75), peak2.unwrap_or(mid * 1.25));
                make_initial_field(|x| spec2.u(x, 0.0), grid, algebra.clone())?
            } else {
                let spec1 = SolitonSpec::new(
                    algebra.clone(),
                    *lambda,
                    CdNumber::from_coeffs(alpha.clone()),
                )?
                .with_peak_at(peak.unwrap_or(mid));
                make_initial_field(|x| spec1.u(x, 0.0), grid, algebra.clone())?
            };
            boundary_decay = Some(boundary);
            field
        }
        InitialSpec::File { path, time_index } => {
            let text = load_file(path).map_err(ConfigError::InitialFile)?;
            let table = crate::io::read_run_csv(&text)
                .map_err(|e| ConfigError::InitialFile(e.to_string()))?;
            if table.grid != grid {
                return Err(ConfigError::InitialFile(format!(
                    "file grid (N = {}, L = {}) does not match config (N = {}, L = {})",
                    table.grid.points(),
                    table.grid.length(),
                    config.n,
                    config.l
                )));
            }
            if table.algebra.level() != config.level {
                return Err(ConfigError::InitialFile(format!(
                    "file level {} does not match config level {}",
                    table.algebra.level(),
                    config.level
                )));
            }
            let idx = time_index.unwrap_or(table.snapshots.len() - 1);
            table
                .snapshots
                .get(idx)
                .cloned()
                .ok_or_else(|| {
                    ConfigError::InitialFile(format!(
                        "time_index {idx} out of range ({} snapshots)",
                        table.snapshots.len()
                    ))
                })?
        }
    };
    Ok(PreparedRun {
        algebra,
        grid,
        spec,
        initial,
        boundary_decay,
    })
}
