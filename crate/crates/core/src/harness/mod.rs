//! Protocol harness: runs the method × environment × setting × seed grid,
//! enforces the transition budget, normalizes returns and aggregates them.

mod calibrate;
mod export;
mod run;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use calibrate::{calibrate_threshold, Calibration};
pub use export::{
    read_records, write_records, write_summary, ExportFormat, RunDir, CSV_COLUMNS, SUMMARY_COLUMNS,
};
pub use run::{run_benchmark, run_cell, run_cells, CellKey, CellOutput, Grid, MethodTiming};

use crate::config::{Method, Setting};
use crate::dist::DomainDistribution;
use crate::envs::{EnvKind, EnvironmentSpec};
use crate::error::{Error, Result};
use crate::trajectory::CollectionStrategy;

/// Maps a raw target return onto the scale where 1.0 is the training
/// threshold. Positive-scale rewards are divided by the threshold; cost-style
/// rewards with a worst-case anchor map `worst` to 0 and `threshold` to 1.
pub fn normalized_return(raw: f64, threshold: f64, worst: Option<f64>) -> Result<f64> {
    match worst {
        Some(w) => {
            if threshold == w {
                return Err(Error::Config(format!("threshold equals the worst-case return {w}")));
            }
            Ok((raw - w) / (threshold - w))
        }
        None => {
            if !(threshold > 0.0) {
                return Err(Error::Config(format!(
                    "positive-scale normalization needs a positive threshold, got {threshold}"
                )));
            }
            Ok(raw / threshold)
        }
    }
}

/// [`normalized_return`] with the environment's threshold and anchor.
pub fn normalize_for(spec: &EnvironmentSpec, raw: f64) -> Result<f64> {
    normalized_return(raw, spec.reward_threshold, spec.worst_return)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordStatus {
    Ok,
    Failed,
}

/// One point of one curve, or a failure diagnostic for a method in a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub method: Method,
    pub env: EnvKind,
    pub setting: Setting,
    pub seed: u64,
    /// 0 is the prior-trained policy.
    pub iteration: usize,
    /// Index of the UDR policy for per-configuration records.
    pub member: Option<usize>,
    /// Dataset collection strategy of offline methods.
    pub strategy: Option<CollectionStrategy>,
    pub raw_return: Option<f64>,
    pub normalized_return: Option<f64>,
    pub transitions_used: usize,
    pub train_return: Option<f64>,
    pub train_success: Option<bool>,
    pub status: RecordStatus,
    pub message: String,
    pub distribution: Option<DomainDistribution>,
}

impl ResultRecord {
    pub fn is_ok(&self) -> bool {
        self.status == RecordStatus::Ok
    }
}

/// Mean and spread of one curve point across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub env: EnvKind,
    pub setting: Setting,
    pub iteration: usize,
    pub n_seeds: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub sd: f64,
    /// Fewer seeds than expected.
    pub partial: bool,
}

/// Per `(method, env, setting, iteration)` mean and sample standard
/// deviation of the normalized return over seeds. UDR per-policy records
/// and failures are left out. The result does not depend on record order.
pub fn aggregate(records: &[ResultRecord], expected_seeds: usize) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Method, EnvKind, Setting, usize), Vec<(u64, f64)>> = BTreeMap::new();
    for r in records {
        if r.member.is_some() || !r.is_ok() {
            continue;
        }
        if let Some(v) = r.normalized_return {
            groups
                .entry((r.method, r.env, r.setting, r.iteration))
                .or_default()
                .push((r.seed, v));
        }
    }
    groups
        .into_iter()
        .map(|((method, env, setting, iteration), mut vals)| {
            vals.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let n = vals.len();
            let mean = vals.iter().map(|v| v.1).sum::<f64>() / n as f64;
            let sd = if n > 1 {
                (vals.iter().map(|v| (v.1 - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            SummaryRow {
                method,
                env,
                setting,
                iteration,
                n_seeds: n,
                mean,
                sd,
                partial: n < expected_seeds,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn record(method: Method, seed: u64, iteration: usize, v: f64) -> ResultRecord {
        ResultRecord {
            method,
            env: EnvKind::Cartpole,
            setting: Setting::Vanilla,
            seed,
            iteration,
            member: None,
            strategy: None,
            raw_return: Some(v * 300.0),
            normalized_return: Some(v),
            transitions_used: 200 * iteration,
            train_return: Some(1.0),
            train_success: Some(true),
            status: RecordStatus::Ok,
            message: String::new(),
            distribution: None,
        }
    }

    #[test]
    fn normalization_anchors() {
        assert_eq!(normalized_return(300.0, 300.0, None).unwrap(), 1.0);
        assert_eq!(normalized_return(150.0, 300.0, None).unwrap(), 0.5);
        assert_eq!(normalized_return(-700.0, -700.0, Some(-4900.0)).unwrap(), 1.0);
        assert_eq!(normalized_return(-4900.0, -700.0, Some(-4900.0)).unwrap(), 0.0);
        assert!(normalized_return(1.0, -5.0, Some(-5.0)).is_err());
        assert!(normalized_return(1.0, 0.0, None).is_err());
    }

    #[test]
    fn mean_and_sample_sd() {
        let recs: Vec<_> = [0.8, 1.0, 1.2]
            .iter()
            .enumerate()
            .map(|(s, v)| record(Method::Droid, s as u64, 2, *v))
            .collect();
        let rows = aggregate(&recs, 3);
        assert_eq!(rows.len(), 1);
        assert!((rows[0].mean - 1.0).abs() < 1e-12);
        assert!((rows[0].sd - 0.2).abs() < 1e-12);
        assert!(!rows[0].partial);
    }

    #[test]
    fn single_seed_is_partial() {
        let rows = aggregate(&[record(Method::Udr, 0, 1, 0.5)], 3);
        assert_eq!(rows[0].sd, 0.0);
        assert!(rows[0].partial);
    }

    #[test]
    fn members_and_failures_are_excluded() {
        let mut m = record(Method::Udr, 0, 1, 0.1);
        m.member = Some(3);
        let mut f = record(Method::Udr, 1, 1, 0.9);
        f.status = RecordStatus::Failed;
        let rows = aggregate(&[m, f, record(Method::Udr, 2, 1, 0.5)], 3);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].n_seeds, 1);
    }

    proptest! {
        #[test]
        fn order_does_not_matter(vals in prop::collection::vec(-2.0f64..2.0, 1..12), rot in 0usize..12) {
            let recs: Vec<_> = vals
                .iter()
                .enumerate()
                .map(|(i, v)| record(Method::ALL[i % 6], (i / 6) as u64, i % 3, *v))
                .collect();
            let mut shuffled = recs.clone();
            let k = rot % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
            prop_assert_eq!(aggregate(&recs, 2), aggregate(&shuffled, 2));
        }
    }
}
