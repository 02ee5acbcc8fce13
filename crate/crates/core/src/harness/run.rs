use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{normalize_for, RecordStatus, ResultRecord};
use crate::adr::{
    collect_offline_dataset, run_bayrn, run_droid, run_dropo, run_simopt, run_simopt1, run_udr, AdrContext,
    AdrOutcome, IterationResult, TargetCounters,
};
use crate::config::{BenchmarkConfig, Method, Setting};
use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::trajectory::{CollectionStrategy, Dataset};

/// One environment × setting × seed combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub env: EnvKind,
    pub setting: Setting,
    pub seed: u64,
}

impl CellKey {
    /// File-name stem, e.g. `pendulum-vanilla-s0`.
    pub fn tag(&self) -> String {
        format!("{}-{}-s{}", self.env, self.setting, self.seed)
    }
}

/// The part of the protocol grid to execute.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub envs: Vec<EnvKind>,
    pub settings: Vec<Setting>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub strategy: CollectionStrategy,
}

impl Grid {
    pub fn from_config(config: &BenchmarkConfig) -> Self {
        let p = &config.protocol;
        Grid {
            envs: p.environments.clone(),
            settings: p.settings.clone(),
            seeds: p.seeds.clone(),
            methods: p.methods.clone(),
            strategy: p.collection_strategy,
        }
    }

    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for &env in &self.envs {
            for &setting in &self.settings {
                for &seed in &self.seeds {
                    out.push(CellKey { env, setting, seed });
                }
            }
        }
        out
    }

    /// Requested methods in canonical order, without duplicates.
    pub fn methods(&self) -> Vec<Method> {
        Method::ALL.into_iter().filter(|m| self.methods.contains(m)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTiming {
    pub cell: CellKey,
    pub method: Method,
    /// Inference, training and evaluation time of the method in the cell.
    pub seconds: f64,
}

/// Everything produced by one cell.
#[derive(Debug, Clone)]
pub struct CellOutput {
    pub key: CellKey,
    pub records: Vec<ResultRecord>,
    /// Named target datasets: SimOpt's log and the offline dataset.
    pub datasets: Vec<(String, Dataset)>,
    pub policies: Vec<(String, Policy)>,
    pub outcomes: BTreeMap<Method, Vec<AdrOutcome>>,
    pub timings: Vec<MethodTiming>,
    /// Target interactions of the whole cell.
    pub target: TargetCounters,
    /// Target rollouts registered while offline methods were inferring.
    pub offline_target_rollouts: usize,
}

impl CellOutput {
    pub fn is_complete(&self) -> bool {
        self.records.iter().all(ResultRecord::is_ok)
    }
}

fn failure(key: CellKey, method: Method, message: String) -> ResultRecord {
    ResultRecord {
        method,
        env: key.env,
        setting: key.setting,
        seed: key.seed,
        iteration: 0,
        member: None,
        strategy: None,
        raw_return: None,
        normalized_return: None,
        transitions_used: 0,
        train_return: None,
        train_success: None,
        status: RecordStatus::Failed,
        message,
        distribution: None,
    }
}

struct Cell {
    key: CellKey,
    ctx: AdrContext,
    out: CellOutput,
}

impl Cell {
    fn record(
        &self,
        method: Method,
        it: &IterationResult,
        raw: f64,
        strategy: Option<CollectionStrategy>,
    ) -> Result<ResultRecord> {
        Ok(ResultRecord {
            method,
            env: self.key.env,
            setting: self.key.setting,
            seed: self.key.seed,
            iteration: it.iteration,
            member: None,
            strategy,
            raw_return: Some(raw),
            normalized_return: Some(normalize_for(&self.ctx.spec, raw)?),
            transitions_used: it.transitions_used,
            train_return: Some(it.train_return),
            train_success: Some(it.train_success),
            status: RecordStatus::Ok,
            message: String::new(),
            distribution: Some(it.distribution.clone()),
        })
    }

    /// Evaluates every iteration of `outcome` on the target.
    fn curve(&mut self, outcome: &AdrOutcome, strategy: Option<CollectionStrategy>) -> Result<Vec<ResultRecord>> {
        let mut recs = Vec::new();
        for it in &outcome.iterations {
            if it.transitions_used > self.ctx.protocol.budget {
                return Err(Error::Budget {
                    method: outcome.method.to_string(),
                    used: it.transitions_used,
                    budget: self.ctx.protocol.budget,
                });
            }
            let raw = match it.target_return {
                Some(r) => r,
                None => self.ctx.evaluate(&it.policy, it.iteration)?,
            };
            recs.push(self.record(outcome.method, it, raw, strategy)?);
            self.out
                .policies
                .push((format!("{}-{}-it{}", self.key.tag(), outcome.method, it.iteration), it.policy.clone()));
        }
        Ok(recs)
    }
}

/// Runs every requested method in one cell.
///
/// The prior-trained policy provides the shared iteration-0 record. SimOpt
/// runs whenever its trajectories are needed; offline methods are rerun on
/// the cumulative dataset after every iteration. A method that fails or
/// exceeds the budget is replaced by a single failed record.
pub fn run_cell(
    config: &BenchmarkConfig,
    key: CellKey,
    methods: &[Method],
    strategy: CollectionStrategy,
) -> Result<CellOutput> {
    let ctx = AdrContext::new(config, key.env, key.setting, key.seed)?;
    let methods: Vec<Method> = Method::ALL.into_iter().filter(|m| methods.contains(m)).collect();
    let mut cell = Cell {
        key,
        ctx,
        out: CellOutput {
            key,
            records: Vec::new(),
            datasets: Vec::new(),
            policies: Vec::new(),
            outcomes: BTreeMap::new(),
            timings: Vec::new(),
            target: TargetCounters::default(),
            offline_target_rollouts: 0,
        },
    };
    let iterations = cell.ctx.protocol.iterations;

    let started = Instant::now();
    let prior = cell.ctx.train(&cell.ctx.prior(), "train-prior", 0)?;
    let prior_raw = cell.ctx.evaluate(&prior.policy, 0)?;
    let prior_seconds = started.elapsed().as_secs_f64();
    let prior_it = IterationResult {
        iteration: 0,
        distribution: cell.ctx.prior(),
        policy: prior.policy.clone(),
        train_return: prior.train_return,
        train_success: prior.success,
        transitions_used: 0,
        target_return: Some(prior_raw),
        diagnostics: BTreeMap::new(),
    };
    cell.out
        .policies
        .push((format!("{}-prior", key.tag()), prior.policy.clone()));

    let mut per_method: BTreeMap<Method, std::result::Result<Vec<ResultRecord>, String>> = BTreeMap::new();
    let mut timings: BTreeMap<Method, f64> = BTreeMap::new();
    let offline_strategy = |m: Method| m.is_offline().then_some(strategy);

    // SimOpt, also the source of the default offline dataset.
    let needs_simopt = methods.contains(&Method::Simopt)
        || (strategy == CollectionStrategy::SimoptPolicy && methods.iter().any(|m| m.is_offline()));
    let mut simopt_log = None;
    if needs_simopt {
        let t = Instant::now();
        let res = run_simopt(&cell.ctx, &prior).and_then(|(outcome, log)| {
            let recs = cell.curve(&outcome, None)?;
            cell.out.outcomes.entry(Method::Simopt).or_default().push(outcome);
            Ok((recs, log))
        });
        match res {
            Ok((recs, log)) => {
                cell.out.datasets.push((format!("{}-simopt", key.tag()), log.clone()));
                simopt_log = Some(log);
                per_method.insert(Method::Simopt, Ok(recs));
            }
            Err(e) => {
                per_method.insert(Method::Simopt, Err(e.to_string()));
            }
        }
        timings.insert(Method::Simopt, t.elapsed().as_secs_f64());
    }

    // Trajectories of the prior-trained policy feed SimOpt-1 and the
    // prior-policy offline strategy.
    let needs_prior_data = methods.contains(&Method::Simopt1)
        || (strategy == CollectionStrategy::PriorPolicy && methods.iter().any(|m| m.is_offline()));
    let prior_data = if needs_prior_data {
        match collect_offline_dataset(&cell.ctx, CollectionStrategy::PriorPolicy, iterations, None, Some(&prior.policy)) {
            Ok(d) => {
                cell.out.datasets.push((format!("{}-prior-policy", key.tag()), d.clone()));
                Some(d)
            }
            Err(e) => {
                for m in methods.iter().filter(|m| **m == Method::Simopt1 || m.is_offline()) {
                    per_method.insert(*m, Err(e.to_string()));
                }
                None
            }
        }
    } else {
        None
    };

    if methods.contains(&Method::Simopt1) && !per_method.contains_key(&Method::Simopt1) {
        let t = Instant::now();
        let data = prior_data.as_ref().expect("collected above");
        let res = run_simopt1(&cell.ctx, &prior.policy, data).and_then(|o| {
            let recs = cell.curve(&o, None)?;
            cell.out.outcomes.entry(Method::Simopt1).or_default().push(o);
            Ok(recs)
        });
        per_method.insert(Method::Simopt1, res.map_err(|e| e.to_string()));
        timings.insert(Method::Simopt1, t.elapsed().as_secs_f64());
    }

    let offline: Vec<Method> = methods
        .iter()
        .copied()
        .filter(|m| m.is_offline() && !per_method.contains_key(m))
        .collect();
    if !offline.is_empty() {
        let dataset = match strategy {
            CollectionStrategy::SimoptPolicy => match &simopt_log {
                Some(log) => Ok(log.clone()),
                None => Err(per_method
                    .get(&Method::Simopt)
                    .and_then(|r| r.as_ref().err().cloned())
                    .unwrap_or_else(|| "SimOpt did not run".into())),
            },
            CollectionStrategy::PriorPolicy => Ok(prior_data.clone().expect("collected above")),
            CollectionStrategy::Random => {
                collect_offline_dataset(&cell.ctx, strategy, iterations, None, None).map_err(|e| e.to_string())
            }
        };
        match dataset {
            Ok(dataset) => {
                if strategy == CollectionStrategy::Random {
                    cell.out.datasets.push((format!("{}-random", key.tag()), dataset.clone()));
                }
                for m in offline {
                    let t = Instant::now();
                    let res = (|| -> Result<Vec<ResultRecord>> {
                        let mut recs = Vec::new();
                        for k in 1..=iterations.min(dataset.len()) {
                            let data = dataset.prefix(k);
                            let before = cell.ctx.target.counters();
                            let outcome = match m {
                                Method::Droid => run_droid(&cell.ctx, &data)?,
                                _ => run_dropo(&cell.ctx, &data)?,
                            };
                            let touched = cell.ctx.target.counters().rollouts() - before.rollouts();
                            cell.out.offline_target_rollouts += touched;
                            if touched > 0 {
                                return Err(Error::Method {
                                    method: m.to_string(),
                                    reason: format!("{touched} target rollouts during offline inference"),
                                });
                            }
                            recs.extend(cell.curve(&outcome, offline_strategy(m))?);
                            cell.out.outcomes.entry(m).or_default().push(outcome);
                        }
                        Ok(recs)
                    })();
                    per_method.insert(m, res.map_err(|e| e.to_string()));
                    timings.insert(m, t.elapsed().as_secs_f64());
                }
            }
            Err(msg) => {
                for m in offline {
                    per_method.insert(m, Err(msg.clone()));
                }
            }
        }
    }

    if methods.contains(&Method::Udr) || methods.contains(&Method::Bayrn) {
        let t = Instant::now();
        let udr = run_udr(&cell.ctx, cell.ctx.methods.udr.n_configs);
        let udr_seconds = t.elapsed().as_secs_f64();
        match udr {
            Ok(udr) => {
                if methods.contains(&Method::Udr) {
                    let res = udr_records(&cell, &udr, iterations);
                    for m in &udr.members {
                        cell.out
                            .policies
                            .push((format!("{}-udr-member{}", key.tag(), m.index), m.policy.clone()));
                    }
                    per_method.insert(Method::Udr, res.map_err(|e| e.to_string()));
                    timings.insert(Method::Udr, udr_seconds);
                }
                if methods.contains(&Method::Bayrn) {
                    let t = Instant::now();
                    let res = run_bayrn(&cell.ctx, &udr, iterations).and_then(|o| {
                        let recs = cell.curve(&o, None)?;
                        cell.out.outcomes.entry(Method::Bayrn).or_default().push(o);
                        Ok(recs)
                    });
                    per_method.insert(Method::Bayrn, res.map_err(|e| e.to_string()));
                    timings.insert(Method::Bayrn, udr_seconds + t.elapsed().as_secs_f64());
                }
                cell.out.outcomes.entry(Method::Udr).or_default().push(udr);
            }
            Err(e) => {
                for m in [Method::Udr, Method::Bayrn] {
                    if methods.contains(&m) {
                        per_method.insert(m, Err(e.to_string()));
                    }
                }
            }
        }
    }

    for m in methods {
        match per_method.remove(&m).unwrap_or_else(|| Err("not run".into())) {
            Ok(recs) => {
                cell.out.records.push(cell.record(m, &prior_it, prior_raw, offline_strategy(m))?);
                cell.out.records.extend(recs);
            }
            Err(msg) => {
                log::warn!("{} {m}: {msg}", key.tag());
                cell.out.records.push(failure(key, m, msg));
            }
        }
        cell.out.timings.push(MethodTiming {
            cell: key,
            method: m,
            seconds: prior_seconds + timings.get(&m).copied().unwrap_or(0.0),
        });
    }
    cell.out.target = cell.ctx.target.counters();
    Ok(cell.out)
}

/// UDR curve: the per-policy mean at every iteration (UDR does not use
/// target data, so the curve is flat), plus one record per policy.
fn udr_records(cell: &Cell, udr: &AdrOutcome, iterations: usize) -> Result<Vec<ResultRecord>> {
    let n = udr.members.len() as f64;
    let raw = udr.members.iter().map(|m| m.target_return).sum::<f64>() / n;
    let norms = udr
        .members
        .iter()
        .map(|m| normalize_for(&cell.ctx.spec, m.target_return))
        .collect::<Result<Vec<_>>>()?;
    let train = udr.members.iter().map(|m| m.train_return).sum::<f64>() / n;
    let mean_norm = norms.iter().sum::<f64>() / n;
    let base = |iteration: usize| ResultRecord {
        method: Method::Udr,
        env: cell.key.env,
        setting: cell.key.setting,
        seed: cell.key.seed,
        iteration,
        member: None,
        strategy: None,
        raw_return: Some(raw),
        normalized_return: Some(mean_norm),
        transitions_used: 0,
        train_return: Some(train),
        train_success: Some(udr.members.iter().all(|m| m.train_success)),
        status: RecordStatus::Ok,
        message: String::new(),
        distribution: None,
    };
    let mut recs: Vec<ResultRecord> = (1..=iterations).map(base).collect();
    for (m, norm) in udr.members.iter().zip(norms) {
        recs.push(ResultRecord {
            member: Some(m.index),
            raw_return: Some(m.target_return),
            normalized_return: Some(norm),
            train_return: Some(m.train_return),
            train_success: Some(m.train_success),
            distribution: Some(m.distribution.clone()),
            ..base(1)
        });
    }
    Ok(recs)
}

/// Runs every cell of `grid`, at most `jobs` at a time; see [`run_cells`].
pub fn run_benchmark(config: &BenchmarkConfig, grid: &Grid, jobs: usize) -> Result<Vec<CellOutput>> {
    let methods = grid.methods();
    let cells: Vec<(CellKey, Vec<Method>)> = grid.cells().into_iter().map(|k| (k, methods.clone())).collect();
    run_cells(config, &cells, grid.strategy, jobs)
}

/// Runs the given cells, each with its own method list, at most `jobs` at
/// a time. Cells that cannot start (for example, an environment without
/// unmodeled parameters) yield one failed record per method. Output order
/// follows the input.
pub fn run_cells(
    config: &BenchmarkConfig,
    cells: &[(CellKey, Vec<Method>)],
    strategy: CollectionStrategy,
    jobs: usize,
) -> Result<Vec<CellOutput>> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    let outputs = pool.install(|| {
        cells
            .par_iter()
            .map(|(key, methods)| {
                let key = *key;
                run_cell(config, key, methods, strategy).unwrap_or_else(|e| {
                    log::warn!("{}: {e}", key.tag());
                    CellOutput {
                        key,
                        records: Method::ALL
                            .into_iter()
                            .filter(|m| methods.contains(m))
                            .map(|m| failure(key, m, e.to_string()))
                            .collect(),
                        datasets: Vec::new(),
                        policies: Vec::new(),
                        outcomes: BTreeMap::new(),
                        timings: Vec::new(),
                        target: TargetCounters::default(),
                        offline_target_rollouts: 0,
                    }
                })
            })
            .collect()
    });
    Ok(outputs)
}
