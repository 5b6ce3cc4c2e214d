//! Scenario files.
//!
//! A scenario is a TOML document. Unknown keys are rejected so that typos
//! surface as errors with a line and column instead of silently falling back
//! to defaults.

use std::path::Path;
use std::sync::Arc;

use cylint_core::spde::{DriftFixture, InitialIterate, NoiseFixture, PicardOptions};
use cylint_core::{
    CylindricalCharacteristics, HSOperator, HVector, JumpComponent, SPDEConfig, Scheme,
    SemigroupSpec, SimpleProcess, SimpleRandomOperator, Space, TimeGrid,
};
use serde::Deserialize;

use crate::CliError;

pub const DEFAULT_REPLICAS: u64 = 10_000;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: Option<u64>,
    pub replicas: Option<u64>,
    pub noise: NoiseSpec,
    #[serde(default)]
    pub process: Vec<ProcessSpec>,
    pub radonify: Option<RadonifySpec>,
    pub charfn: Option<CharfnSpec>,
    pub simulate: Option<SimulateSpec>,
    pub spde: Option<SpdeSpec>,
}

/// A matrix literal: `"identity"`, `"zero"`, `{ diag = [..] }`,
/// `{ scaled_identity = c }` or nested row arrays.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Named(String),
    Diag { diag: Vec<f64> },
    ScaledIdentity { scaled_identity: f64 },
    Rows(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub dim: usize,
    pub drift: Option<Vec<f64>>,
    pub cov: Option<MatrixSpec>,
    pub jumps: Option<JumpsSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum JumpsSpec {
    Uniform(JumpSpec),
    PerCoordinate(Vec<JumpSpec>),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpKind {
    TwoPoint,
    Gaussian,
}

/// `two_point`: jumps `+-param`; `gaussian`: jumps `N(0, param^2)`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpSpec {
    pub rate: f64,
    pub dist: JumpKind,
    pub param: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchSpec {
    pub weight: f64,
    pub op: MatrixSpec,
}

/// An integrand on a uniform grid. Exactly one of `op` (constant),
/// `ops` (one per interval) or `branches` (the same random simple operator
/// on every interval) must be given.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessSpec {
    pub name: String,
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default = "one_usize")]
    pub intervals: usize,
    pub rows: Option<usize>,
    pub op: Option<MatrixSpec>,
    pub ops: Option<Vec<MatrixSpec>>,
    pub branches: Option<Vec<BranchSpec>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadonifySpec {
    #[serde(default = "one")]
    pub dt: f64,
    /// Direction `v` for the conditioning identity; defaults to `e_1`.
    pub probe: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharfnSpec {
    #[serde(default = "one")]
    pub t: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    #[serde(default = "one")]
    pub horizon: f64,
    /// Grid size when no process is given; otherwise the process grid is used.
    pub steps: Option<usize>,
    /// Number of replicas whose paths are written.
    #[serde(default = "one_usize")]
    pub paths: usize,
    /// Name of a `[[process]]` whose integral path is written as well.
    pub process: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum DriftSpec {
    Zero,
    Linear { c: f64 },
    Sine { c: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum NoiseMapSpec {
    Zero,
    Constant { op: MatrixSpec },
    Damped { op: MatrixSpec },
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    #[default]
    ExpEuler,
    Picard,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    #[default]
    Zero,
    Orbit,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpdeSpec {
    /// Generator eigenvalues; defaults to the heat spectrum `-k^2`.
    pub a: Option<Vec<f64>>,
    #[serde(rename = "F")]
    pub drift: DriftSpec,
    #[serde(rename = "G")]
    pub noise: NoiseMapSpec,
    #[serde(rename = "X0")]
    pub x0: Option<Vec<f64>>,
    #[serde(rename = "T", default = "one")]
    pub horizon: f64,
    pub dt: f64,
    #[serde(default)]
    pub scheme: SchemeKind,
    pub beta: Option<f64>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    #[serde(default)]
    pub initial: InitialKind,
    #[serde(default = "one_usize")]
    pub keep_paths: usize,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

fn invalid(field: impl Into<String>, err: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: {err}", field.into()))
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn law(&self) -> Result<CylindricalCharacteristics, CliError> {
        self.noise.build()
    }

    pub fn process(&self, name: &str) -> Result<&ProcessSpec, CliError> {
        self.process
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| invalid("simulate.process", format!("no [[process]] named {name:?}")))
    }
}

impl MatrixSpec {
    /// Builds an `rows x cols` matrix; `field` names the key in errors.
    pub fn build(&self, rows: usize, cols: usize, field: &str) -> Result<HSOperator, CliError> {
        let op = match self {
            MatrixSpec::Named(name) => match name.as_str() {
                "identity" if rows == cols => HSOperator::identity(rows),
                "identity" => return Err(invalid(field, format!("identity needs a square shape, got {rows}x{cols}"))),
                "zero" => HSOperator::zeros(rows, cols),
                other => return Err(invalid(field, format!("unknown matrix name {other:?}"))),
            },
            MatrixSpec::Diag { diag } => HSOperator::diag(diag).map_err(|e| invalid(field, e))?,
            MatrixSpec::ScaledIdentity { scaled_identity } => HSOperator::scaled_identity(rows, *scaled_identity),
            MatrixSpec::Rows(r) => HSOperator::from_rows(r).map_err(|e| invalid(field, e))?,
        };
        if (op.rows(), op.cols()) != (rows, cols) {
            return Err(invalid(
                field,
                format!("expected a {rows}x{cols} matrix, got {}x{}", op.rows(), op.cols()),
            ));
        }
        Ok(op)
    }
}

impl JumpSpec {
    fn build(&self, field: &str) -> Result<JumpComponent, CliError> {
        match self.dist {
            JumpKind::TwoPoint => JumpComponent::two_point(self.rate, self.param),
            JumpKind::Gaussian => JumpComponent::gaussian(self.rate, self.param),
        }
        .map_err(|e| invalid(field, e))
    }
}

impl NoiseSpec {
    pub fn build(&self) -> Result<CylindricalCharacteristics, CliError> {
        let n = self.dim;
        if n == 0 {
            return Err(invalid("noise.dim", "must be at least 1"));
        }
        let drift = match &self.drift {
            Some(d) => HVector::new(Space::U, d.clone()).map_err(|e| invalid("noise.drift", e))?,
            None => HVector::zeros(Space::U, n),
        };
        if drift.dim() != n {
            return Err(invalid("noise.drift", format!("expected {n} entries, got {}", drift.dim())));
        }
        let cov = match &self.cov {
            Some(m) => m.build(n, n, "noise.cov")?,
            None => HSOperator::zeros(n, n),
        };
        let jumps = match &self.jumps {
            None => vec![JumpComponent::none(); n],
            Some(JumpsSpec::Uniform(j)) => vec![j.build("noise.jumps")?; n],
            Some(JumpsSpec::PerCoordinate(js)) => {
                if js.len() != n {
                    return Err(invalid("noise.jumps", format!("expected {n} entries, got {}", js.len())));
                }
                js.iter()
                    .enumerate()
                    .map(|(k, j)| j.build(&format!("noise.jumps[{k}]")))
                    .collect::<Result<_, _>>()?
            }
        };
        CylindricalCharacteristics::new(drift, cov, jumps).map_err(|e| invalid("noise", e))
    }
}

impl ProcessSpec {
    fn field(&self, key: &str) -> String {
        format!("process[{}].{key}", self.name)
    }

    pub fn rows(&self, law: &CylindricalCharacteristics) -> usize {
        self.rows.unwrap_or(law.dim())
    }

    /// The integrand's value on one interval (or a single operator for
    /// radonification checks).
    pub fn operator(&self, law: &CylindricalCharacteristics) -> Result<SimpleRandomOperator, CliError> {
        let (rows, cols) = (self.rows(law), law.dim());
        match (&self.op, &self.ops, &self.branches) {
            (Some(m), None, None) => Ok(SimpleRandomOperator::deterministic(m.build(rows, cols, &self.field("op"))?)),
            (None, None, Some(b)) => self.branch_operator(b, rows, cols),
            (None, Some(_), None) => Err(invalid(self.field("ops"), "a single operator is needed here; use op or branches")),
            _ => Err(invalid(self.field("op"), "give exactly one of op, ops or branches")),
        }
    }

    fn branch_operator(&self, b: &[BranchSpec], rows: usize, cols: usize) -> Result<SimpleRandomOperator, CliError> {
        let branches = b
            .iter()
            .enumerate()
            .map(|(i, br)| Ok((br.weight, br.op.build(rows, cols, &self.field(&format!("branches[{i}].op")))?)))
            .collect::<Result<Vec<_>, CliError>>()?;
        SimpleRandomOperator::weighted(branches).map_err(|e| invalid(self.field("branches"), e))
    }

    pub fn build(&self, law: &CylindricalCharacteristics) -> Result<SimpleProcess, CliError> {
        let grid = TimeGrid::uniform(self.horizon, self.intervals).map_err(|e| invalid(self.field("intervals"), e))?;
        let (rows, cols) = (self.rows(law), law.dim());
        let ops = match &self.ops {
            Some(list) if self.op.is_none() && self.branches.is_none() => {
                if list.len() != self.intervals {
                    return Err(invalid(
                        self.field("ops"),
                        format!("expected {} operators, one per interval, got {}", self.intervals, list.len()),
                    ));
                }
                list.iter()
                    .enumerate()
                    .map(|(k, m)| Ok(SimpleRandomOperator::deterministic(m.build(rows, cols, &self.field(&format!("ops[{k}]")))?)))
                    .collect::<Result<Vec<_>, CliError>>()?
            }
            _ => vec![self.operator(law)?; self.intervals],
        };
        SimpleProcess::new(grid, ops).map_err(|e| invalid(self.field("ops"), e))
    }
}

impl SpdeSpec {
    pub fn build(&self, law: &CylindricalCharacteristics) -> Result<SPDEConfig, CliError> {
        let semigroup = match &self.a {
            Some(a) => SemigroupSpec::new(a.clone()).map_err(|e| invalid("spde.a", e))?,
            None => SemigroupSpec::heat(law.dim()),
        };
        let n = semigroup.dim();
        let drift = match self.drift {
            DriftSpec::Zero => DriftFixture::Zero,
            DriftSpec::Linear { c } => DriftFixture::Linear { c },
            DriftSpec::Sine { c } => DriftFixture::Sine { c },
        };
        let noise = match &self.noise {
            NoiseMapSpec::Zero => NoiseFixture::Zero { rows: n, cols: law.dim() },
            NoiseMapSpec::Constant { op } => NoiseFixture::Constant(op.build(n, law.dim(), "spde.G.op")?),
            NoiseMapSpec::Damped { op } => NoiseFixture::Damped(op.build(n, law.dim(), "spde.G.op")?),
        };
        let x0 = match &self.x0 {
            Some(x) if x.len() == n => HVector::new(Space::V, x.clone()).map_err(|e| invalid("spde.X0", e))?,
            Some(x) => return Err(invalid("spde.X0", format!("expected {n} entries, got {}", x.len()))),
            None => HVector::zeros(Space::V, n),
        };
        let cfg = SPDEConfig::new(semigroup, Arc::new(drift), Arc::new(noise), x0, self.horizon, self.dt, law.clone())
            .map_err(|e| invalid("spde", e))?;
        let scheme = match self.scheme {
            SchemeKind::ExpEuler => Scheme::ExpEuler,
            SchemeKind::Picard => {
                let d = PicardOptions::default();
                Scheme::Picard(PicardOptions {
                    beta: self.beta,
                    max_iter: self.max_iter.unwrap_or(d.max_iter),
                    tol: self.tol.unwrap_or(d.tol),
                    initial: match self.initial {
                        InitialKind::Zero => InitialIterate::Zero,
                        InitialKind::Orbit => InitialIterate::Orbit,
                    },
                })
            }
        };
        Ok(cfg.with_scheme(scheme))
    }
}
