use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use icl_core::fl::FlConfig;
use icl_core::mab::MabConfig;
use icl_core::pal::PalConfig;
use icl_core::ParamError;
use serde::{Deserialize, Serialize};

use crate::oracle::OracleConfig;

/// Backend plus its parameter block.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "backend", content = "params", rename_all = "snake_case")]
pub enum Backend {
    Fl(FlConfig),
    Pal(PalConfig),
    Mab(MabConfig),
    Oracle(OracleConfig),
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::Fl(_) => "fl",
            Backend::Pal(_) => "pal",
            Backend::Mab(_) => "mab",
            Backend::Oracle(_) => "oracle",
        }
    }

    fn validation_errors(&self) -> Vec<ParamError> {
        let errors = match self {
            Backend::Fl(c) => c.validation_errors(),
            Backend::Pal(c) => c.validation_errors(),
            Backend::Mab(c) => c.validation_errors(),
            Backend::Oracle(c) => c.validation_errors(),
        };
        let prefix = self.name();
        errors
            .into_iter()
            .map(|e| ParamError::new(format!("{prefix}.{}", e.field), e.reason))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emit {
    Csv,
    Json,
    #[default]
    Both,
}

impl Emit {
    pub fn csv(self) -> bool {
        matches!(self, Emit::Csv | Emit::Both)
    }

    pub fn json(self) -> bool {
        matches!(self, Emit::Json | Emit::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub backend: Backend,
    pub seeds: Vec<u64>,
    /// Not part of the digest.
    #[serde(skip)]
    pub output: PathBuf,
    pub emit: Emit,
}

pub const DEFAULT_OUTPUT: &str = "out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum BackendKind {
    Fl,
    Pal,
    Mab,
    Oracle,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    backend: BackendKind,
    seeds: Option<Vec<u64>>,
    output: Option<PathBuf>,
    emit: Option<Emit>,
    fl: Option<FlConfig>,
    pal: Option<PalConfig>,
    mab: Option<MabConfig>,
    oracle: Option<OracleConfig>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid config: {}", ValidationList(.0))]
    Invalid(Vec<ParamError>),
}

struct ValidationList<'a>(&'a [ParamError]);

impl fmt::Display for ValidationList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl ConfigError {
    /// Field paths of every validation error.
    pub fn fields(&self) -> Vec<&str> {
        match self {
            ConfigError::Invalid(errors) => errors.iter().map(|e| e.field.as_str()).collect(),
            _ => Vec::new(),
        }
    }
}

/// 1-based line and column of a byte offset.
fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
        ConfigError::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;

    let mut errors = Vec::new();
    let seeds = match raw.seeds {
        None => {
            errors.push(ParamError::new("seeds", "required"));
            Vec::new()
        }
        Some(s) => {
            if s.is_empty() {
                errors.push(ParamError::new("seeds", "must not be empty"));
            }
            if s.iter().collect::<BTreeSet<_>>().len() != s.len() {
                errors.push(ParamError::new("seeds", "must be distinct"));
            }
            s
        }
    };
    let kind = raw.backend;
    let sections = [
        ("fl", raw.fl.is_some(), BackendKind::Fl),
        ("pal", raw.pal.is_some(), BackendKind::Pal),
        ("mab", raw.mab.is_some(), BackendKind::Mab),
        ("oracle", raw.oracle.is_some(), BackendKind::Oracle),
    ];
    for (name, present, owner) in sections {
        if present && owner != kind {
            errors.push(ParamError::new(name, "section does not match the selected backend"));
        }
    }
    let backend = match kind {
        BackendKind::Fl => Backend::Fl(raw.fl.unwrap_or_default()),
        BackendKind::Pal => Backend::Pal(raw.pal.unwrap_or_default()),
        BackendKind::Mab => Backend::Mab(raw.mab.unwrap_or_default()),
        BackendKind::Oracle => Backend::Oracle(raw.oracle.unwrap_or_default()),
    };
    errors.extend(backend.validation_errors());
    if !errors.is_empty() {
        return Err(ConfigError::Invalid(errors));
    }
    Ok(ExperimentConfig {
        backend,
        seeds,
        output: raw.output.unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT)),
        emit: raw.emit.unwrap_or_default(),
    })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

impl ExperimentConfig {
    /// Replaces the seed list, re-checking that it is nonempty and distinct.
    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Result<Self, ConfigError> {
        let mut errors = Vec::new();
        if seeds.is_empty() {
            errors.push(ParamError::new("seeds", "must not be empty"));
        }
        if seeds.iter().collect::<BTreeSet<_>>().len() != seeds.len() {
            errors.push(ParamError::new("seeds", "must be distinct"));
        }
        if !errors.is_empty() {
            return Err(ConfigError::Invalid(errors));
        }
        self.seeds = seeds;
        Ok(self)
    }

    /// SHA-256 of the canonical JSON of everything but the output directory.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let canonical = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
    }
}
