use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use icl_core::fl::run_fl;
use icl_core::mab::run_mab;
use icl_core::mechanism::GameLedger;
use icl_core::pal::run_pal;
use icl_core::rng::RunSeed;
use icl_core::stats::{mean, std_dev};
use icl_core::IclError;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Backend, ConfigError, ExperimentConfig};
use crate::oracle::run_oracle;

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("seed {seed}: {source}")]
    Backend {
        seed: u64,
        #[source]
        source: IclError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("summaries cover different seeds: {only_a:?} only in the first, {only_b:?} only in the second")]
    SeedMismatch { only_a: Vec<u64>, only_b: Vec<u64> },
    #[error("metric {metric:?} missing for seed {seed}")]
    UnknownMetric { metric: String, seed: u64 },
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    pub checks: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub backend: String,
    pub config_digest: String,
    pub per_seed: Vec<SeedSummary>,
    pub aggregate: BTreeMap<String, Aggregate>,
    /// A check passes when it passes for every seed.
    pub checks: BTreeMap<String, bool>,
}

impl RunSummary {
    pub fn passed(&self) -> bool {
        self.checks.values().all(|&ok| ok)
    }

    pub fn metric(&self, seed: u64, name: &str) -> Option<f64> {
        self.per_seed
            .iter()
            .find(|s| s.seed == seed)
            .and_then(|s| s.metrics.get(name).copied())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| HarnessError::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BatchOptions {
    /// Worker threads; 0 picks one per core.
    pub jobs: usize,
}

/// Shortest text that parses back to the same `f64`.
pub fn format_f64(x: f64) -> String {
    format!("{x:?}")
}

/// Column names of the per-round CSV, fixed per backend.
pub fn csv_header(backend: &Backend) -> &'static [&'static str] {
    match backend {
        Backend::Fl(_) => &[
            "round",
            "n_participants",
            "n_active",
            "collab_gain",
            "system_profit",
            "sum_costs",
            "theta1",
            "theta2",
        ],
        Backend::Pal(_) => &["round", "pair_a", "pair_b", "entity_id", "test_error", "cost"],
        Backend::Mab(_) => &[
            "round",
            "n_participants",
            "active_arm",
            "reward",
            "cum_reward",
            "cum_balance",
        ],
        Backend::Oracle(_) => &["check", "trials", "agreements", "value", "passed"],
    }
}

pub fn csv_path(dir: &Path, backend: &Backend, seed: u64) -> PathBuf {
    dir.join(format!("{}_seed{seed}.csv", backend.name()))
}

struct SeedOutput {
    summary: SeedSummary,
    rows: Vec<Vec<String>>,
}

fn ledger_checks(ledger: &GameLedger, checks: &mut BTreeMap<String, bool>) {
    let ok = ledger
        .rounds
        .iter()
        .all(|r| ledger.profit_identity_residual(r).is_some_and(|x| x.abs() < 1e-9));
    checks.insert("profit_identity".into(), ok);
}

fn run_seed(backend: &Backend, seed: u64) -> std::result::Result<SeedOutput, IclError> {
    let rs = RunSeed(seed);
    let mut metrics = BTreeMap::new();
    let mut checks = BTreeMap::new();
    let f = format_f64;
    let rows = match backend {
        Backend::Fl(cfg) => {
            let run = run_fl(cfg, rs)?;
            ledger_checks(&run.ledger, &mut checks);
            metrics.insert("final_collab_gain".into(), run.final_gain());
            metrics.insert("cum_system_profit".into(), run.rounds.iter().map(|r| r.system_profit).sum());
            metrics.insert("cum_balance".into(), run.rounds.iter().map(|r| r.sum_costs).sum());
            run.rounds
                .iter()
                .map(|r| {
                    vec![
                        r.round.to_string(),
                        r.n_participants.to_string(),
                        r.n_active.to_string(),
                        f(r.collab_gain),
                        f(r.system_profit),
                        f(r.sum_costs),
                        f(r.theta1),
                        f(r.theta2),
                    ]
                })
                .collect()
        }
        Backend::Mab(cfg) => {
            let run = run_mab(cfg, rs)?;
            ledger_checks(&run.ledger, &mut checks);
            metrics.insert("cum_reward".into(), run.cum_reward());
            metrics.insert("cum_balance".into(), run.cum_balance());
            run.rounds
                .iter()
                .map(|r| {
                    vec![
                        r.round.to_string(),
                        r.n_participants.to_string(),
                        r.active_arm.map_or_else(String::new, |a| a.to_string()),
                        f(r.reward),
                        f(r.cum_reward),
                        f(r.cum_balance),
                    ]
                })
                .collect()
        }
        Backend::Pal(cfg) => {
            let run = run_pal(cfg, rs)?;
            ledger_checks(&run.ledger, &mut checks);
            checks.insert(
                "zero_balance".into(),
                run.ledger.rounds.iter().all(|r| r.sum_costs() == 0.0),
            );
            for (i, e) in run.final_test_error().iter().enumerate() {
                metrics.insert(format!("final_test_error_{i}"), *e);
            }
            let mut balance = 0.0;
            let mut rows = Vec::new();
            for r in &run.rounds {
                for (i, (err, cost)) in r.test_error.iter().zip(&r.costs).enumerate() {
                    let id = icl_core::EntityId::from(i);
                    let pair = r.pairs.iter().find(|&&(a, b)| a == id || b == id);
                    let (pa, pb) = pair.map_or((String::new(), String::new()), |(a, b)| (a.to_string(), b.to_string()));
                    balance += cost;
                    rows.push(vec![r.round.to_string(), pa, pb, i.to_string(), f(*err), f(*cost)]);
                }
            }
            metrics.insert("cum_balance".into(), balance);
            rows
        }
        Backend::Oracle(cfg) => {
            let outcomes = run_oracle(cfg, rs)?;
            outcomes
                .iter()
                .map(|o| {
                    metrics.insert(o.check.name().to_string(), o.value);
                    checks.insert(o.check.name().to_string(), o.passed);
                    vec![
                        o.check.name().to_string(),
                        o.trials.to_string(),
                        o.agreements.to_string(),
                        f(o.value),
                        o.passed.to_string(),
                    ]
                })
                .collect()
        }
    };
    Ok(SeedOutput {
        summary: SeedSummary { seed, metrics, checks },
        rows,
    })
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let wrap = |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        w.write_record(row).map_err(wrap)?;
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Mean and sample standard deviation of every metric across seeds.
pub fn aggregate(per_seed: &[SeedSummary]) -> BTreeMap<String, Aggregate> {
    let names: BTreeSet<&String> = per_seed.iter().flat_map(|s| s.metrics.keys()).collect();
    names
        .into_iter()
        .map(|name| {
            let xs: Vec<f64> = per_seed.iter().filter_map(|s| s.metrics.get(name).copied()).collect();
            (
                name.clone(),
                Aggregate {
                    mean: mean(&xs),
                    std_dev: std_dev(&xs),
                },
            )
        })
        .collect()
}

/// Runs every seed, writing one CSV per seed and the summary JSON as configured.
pub fn run_batch(config: &ExperimentConfig, options: BatchOptions) -> Result<RunSummary> {
    let out = &config.output;
    fs::create_dir_all(out).map_err(|source| HarnessError::Io {
        path: out.clone(),
        source,
    })?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs)
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    let header = csv_header(&config.backend);
    let results: Vec<Result<SeedSummary>> = pool.install(|| {
        config
            .seeds
            .par_iter()
            .map(|&seed| {
                let output = run_seed(&config.backend, seed).map_err(|source| HarnessError::Backend { seed, source })?;
                if config.emit.csv() {
                    write_csv(&csv_path(out, &config.backend, seed), header, &output.rows)?;
                }
                Ok(output.summary)
            })
            .collect()
    });
    let per_seed = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut checks: BTreeMap<String, bool> = BTreeMap::new();
    for s in &per_seed {
        for (name, &ok) in &s.checks {
            *checks.entry(name.clone()).or_insert(true) &= ok;
        }
    }
    let summary = RunSummary {
        backend: config.backend.name().to_string(),
        config_digest: config.digest(),
        aggregate: aggregate(&per_seed),
        per_seed,
        checks,
    };
    if config.emit.json() {
        let path = out.join(SUMMARY_FILE);
        let mut text = serde_json::to_string_pretty(&summary).map_err(|source| HarnessError::Json {
            path: path.clone(),
            source,
        })?;
        text.push('\n');
        fs::write(&path, text).map_err(|source| HarnessError::Io { path, source })?;
    }
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedDelta {
    pub seed: u64,
    pub a: f64,
    pub b: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub deltas: Vec<SeedDelta>,
    /// Share of seeds where `a` beats `b`, ties counting one half.
    pub win_fraction: f64,
}

/// Paired per-seed comparison of `metric`, higher is better.
pub fn compare_runs(a: &RunSummary, b: &RunSummary, metric: &str) -> Result<Comparison> {
    let seeds_a: BTreeSet<u64> = a.per_seed.iter().map(|s| s.seed).collect();
    let seeds_b: BTreeSet<u64> = b.per_seed.iter().map(|s| s.seed).collect();
    if seeds_a != seeds_b {
        return Err(HarnessError::SeedMismatch {
            only_a: seeds_a.difference(&seeds_b).copied().collect(),
            only_b: seeds_b.difference(&seeds_a).copied().collect(),
        });
    }
    let missing = |seed| HarnessError::UnknownMetric {
        metric: metric.to_string(),
        seed,
    };
    let mut deltas = Vec::with_capacity(a.per_seed.len());
    let mut score = 0.0;
    for s in &a.per_seed {
        let x = s.metrics.get(metric).copied().ok_or_else(|| missing(s.seed))?;
        let y = b.metric(s.seed, metric).ok_or_else(|| missing(s.seed))?;
        score += if x > y {
            1.0
        } else if x == y {
            0.5
        } else {
            0.0
        };
        deltas.push(SeedDelta {
            seed: s.seed,
            a: x,
            b: y,
            delta: x - y,
        });
    }
    let win_fraction = if deltas.is_empty() { 0.5 } else { score / deltas.len() as f64 };
    Ok(Comparison {
        metric: metric.to_string(),
        deltas,
        win_fraction,
    })
}
