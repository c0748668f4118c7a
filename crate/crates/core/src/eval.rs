//! Comparison metrics and experiment harnesses.
//!
//! Mean task rank uses competition ranking: a system's rank in a subset is one
//! plus the number of systems with a strictly greater score, so tied systems
//! share the better rank. Uplift counts subsets where a system's score equals
//! the subset maximum, ties included.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dataset::RewardDataset;
use crate::featurizer::FeaturizerConfig;
use crate::hash::fnv1a64;
use crate::ranking::{
    make_synthetic_benchmark, rmr_select, stub_outputs, OracleMap, RankingError, RewardSource,
    SyntheticSpec,
};
use crate::rewards::{aggregate_tag_rewards, normalize_rewards, reward_entropy, RewardError};
use crate::router::{init_router, train, RouterError, RouterModel, TrainConfig};

/// Subset name used for rows that carry none.
pub const DEFAULT_SUBSET: &str = "all";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("system \"{system}\" has no score in subset \"{subset}\"")]
    MissingSystem { system: String, subset: String },
    #[error("no subsets to evaluate")]
    NoSubsets,
    #[error("subset \"{0}\" has no systems")]
    EmptySubset(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("beta {0} outside [0, 1]")]
    Beta(f64),
    #[error("selection list for \"{system}\" has {got} entries, dataset has {expected} rows")]
    SelectionLength {
        system: String,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Ranking(#[from] RankingError),
    #[error(transparent)]
    Router(#[from] RouterError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetScores {
    pub subset_name: String,
    pub scores: BTreeMap<String, f64>,
}

impl SubsetScores {
    pub fn new<I, S>(subset_name: impl Into<String>, scores: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        Self {
            subset_name: subset_name.into(),
            scores: scores.into_iter().map(|(s, v)| (s.into(), v)).collect(),
        }
    }

    fn score(&self, system: &str) -> Result<f64, EvalError> {
        self.scores
            .get(system)
            .copied()
            .ok_or_else(|| EvalError::MissingSystem {
                system: system.to_owned(),
                subset: self.subset_name.clone(),
            })
    }

    /// Competition rank of `system` in this subset.
    pub fn rank(&self, system: &str) -> Result<usize, EvalError> {
        let mine = self.score(system)?;
        Ok(1 + self.scores.values().filter(|&&s| s > mine).count())
    }

    pub fn is_best(&self, system: &str) -> Result<bool, EvalError> {
        Ok(self.rank(system)? == 1)
    }
}

fn check_subsets(subsets: &[SubsetScores]) -> Result<(), EvalError> {
    if subsets.is_empty() {
        return Err(EvalError::NoSubsets);
    }
    Ok(())
}

/// Mean over subsets of the system's competition rank.
pub fn mean_task_rank(subsets: &[SubsetScores], system: &str) -> Result<f64, EvalError> {
    check_subsets(subsets)?;
    let total = subsets
        .iter()
        .map(|s| s.rank(system))
        .sum::<Result<usize, _>>()?;
    Ok(total as f64 / subsets.len() as f64)
}

/// Fraction of subsets where the system attains the top score.
pub fn uplift_rate(subsets: &[SubsetScores], system: &str) -> Result<f64, EvalError> {
    check_subsets(subsets)?;
    let mut best = 0usize;
    for s in subsets {
        if s.is_best(system)? {
            best += 1;
        }
    }
    Ok(best as f64 / subsets.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemSummary {
    pub system: String,
    pub mtr: f64,
    pub uplift_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedScore {
    pub system: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetRanks {
    pub subset: String,
    pub entries: Vec<RankedScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub systems: Vec<SystemSummary>,
    pub subsets: Vec<SubsetRanks>,
}

impl EvalReport {
    /// Every system must appear in every subset.
    pub fn build(subsets: &[SubsetScores]) -> Result<Self, EvalError> {
        check_subsets(subsets)?;
        let mut names: Vec<&str> = Vec::new();
        for s in subsets {
            if s.scores.is_empty() {
                return Err(EvalError::EmptySubset(s.subset_name.clone()));
            }
            for k in s.scores.keys() {
                if !names.contains(&k.as_str()) {
                    names.push(k);
                }
            }
        }
        let systems = names
            .iter()
            .map(|&n| {
                Ok(SystemSummary {
                    system: n.to_owned(),
                    mtr: mean_task_rank(subsets, n)?,
                    uplift_rate: uplift_rate(subsets, n)?,
                })
            })
            .collect::<Result<Vec<_>, EvalError>>()?;
        let subsets = subsets
            .iter()
            .map(|s| {
                let entries = names
                    .iter()
                    .map(|&n| {
                        Ok(RankedScore {
                            system: n.to_owned(),
                            score: s.score(n)?,
                            rank: s.rank(n)?,
                        })
                    })
                    .collect::<Result<Vec<_>, EvalError>>()?;
                Ok(SubsetRanks {
                    subset: s.subset_name.clone(),
                    entries,
                })
            })
            .collect::<Result<Vec<_>, EvalError>>()?;
        Ok(Self { systems, subsets })
    }

    pub fn system(&self, name: &str) -> Option<&SystemSummary> {
        self.systems.iter().find(|s| s.system == name)
    }

    /// Aligned text table: one row per system, MTR and uplift last.
    pub fn to_table(&self) -> String {
        let mut header = vec!["system".to_owned()];
        header.extend(self.subsets.iter().map(|s| s.subset.clone()));
        header.push("MTR".into());
        header.push("%Uplift".into());
        let rows: Vec<Vec<String>> = self
            .systems
            .iter()
            .enumerate()
            .map(|(i, sys)| {
                let mut row = vec![sys.system.clone()];
                row.extend(self.subsets.iter().map(|s| format!("{:.4}", s.entries[i].score)));
                row.push(format!("{:.2}", sys.mtr));
                row.push(format!("{:.2}", sys.uplift_rate));
                row
            })
            .collect();
        render_table(&header, &rows)
    }

    /// Tab-separated long format: `subset system score rank`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("subset\tsystem\tscore\trank\n");
        for s in &self.subsets {
            for e in &s.entries {
                let _ = writeln!(out, "{}\t{}\t{}\t{}", s.subset, e.system, e.score, e.rank);
            }
        }
        out
    }

    /// One JSON object per system.
    pub fn to_records(&self) -> String {
        self.systems
            .iter()
            .map(|s| serde_json::to_string(s).expect("summary serializes") + "\n")
            .collect()
    }
}

pub(crate) fn render_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| {
                if i == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        padded.join("  ").trim_end().to_owned() + "\n"
    };
    let mut out = line(header);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    out.push_str(&line(&rule));
    for row in rows {
        out.push_str(&line(row));
    }
    out
}

/// Per-subset scores of systems that each pick one model per row. A system's
/// score on a subset is the mean ground-truth reward of its picks there.
/// Rows are grouped by their `subset` field ([`DEFAULT_SUBSET`] if absent),
/// in order of first appearance.
pub fn selection_scores(
    dataset: &RewardDataset,
    oracle: &OracleMap,
    systems: &[(String, Vec<usize>)],
) -> Result<Vec<SubsetScores>, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    for (name, picks) in systems {
        if picks.len() != dataset.len() {
            return Err(EvalError::SelectionLength {
                system: name.clone(),
                expected: dataset.len(),
                got: picks.len(),
            });
        }
    }
    let mut order: Vec<String> = Vec::new();
    let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for (i, row) in dataset.rows().iter().enumerate() {
        let subset = row.query.subset.as_deref().unwrap_or(DEFAULT_SUBSET);
        let truth = oracle.scores(&row.query.id)?.as_slice();
        let entry = sums.entry(subset.to_owned()).or_insert_with(|| {
            order.push(subset.to_owned());
            (vec![0.0; systems.len()], 0)
        });
        for (acc, (_, picks)) in entry.0.iter_mut().zip(systems) {
            *acc += truth[picks[i]];
        }
        entry.1 += 1;
    }
    Ok(order
        .into_iter()
        .map(|subset| {
            let (acc, n) = &sums[&subset];
            SubsetScores::new(
                subset.clone(),
                systems
                    .iter()
                    .zip(acc)
                    .map(|((name, _), a)| (name.clone(), a / *n as f64)),
            )
        })
        .collect())
}

/// Oracle picks for every row.
pub fn oracle_selections(dataset: &RewardDataset, oracle: &OracleMap) -> Result<Vec<usize>, EvalError> {
    dataset
        .rows()
        .iter()
        .map(|r| Ok(oracle.select(&r.query.id)?))
        .collect()
}

/// Reward-model-ranking picks for every row.
pub fn rmr_selections(dataset: &RewardDataset, source: &RewardSource) -> Result<Vec<usize>, EvalError> {
    let reg = dataset.registry();
    dataset
        .rows()
        .iter()
        .map(|r| Ok(rmr_select(reg, &r.query, &stub_outputs(reg, &r.query), source)?.0))
        .collect()
}

/// Router picks for every row.
pub fn router_selections(model: &RouterModel, dataset: &RewardDataset) -> Vec<usize> {
    dataset
        .rows()
        .par_iter()
        .map(|r| model.route(&r.query.text).model_index)
        .collect()
}

/// Fraction of rows the router sends to the oracle's choice.
pub fn routing_accuracy(
    model: &RouterModel,
    dataset: &RewardDataset,
    oracle: &OracleMap,
) -> Result<f64, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let truth = oracle_selections(dataset, oracle)?;
    let picks = router_selections(model, dataset);
    let hits = picks.iter().zip(&truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / dataset.len() as f64)
}

/// Accuracy of always answering with the single model that is the oracle's
/// choice most often (lowest index on ties).
pub fn best_single_model_accuracy(dataset: &RewardDataset, oracle: &OracleMap) -> Result<f64, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut counts = vec![0usize; dataset.registry().len()];
    for pick in oracle_selections(dataset, oracle)? {
        counts[pick] += 1;
    }
    let best = counts.iter().copied().max().unwrap_or(0);
    Ok(best as f64 / dataset.len() as f64)
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// side is constant or the inputs are shorter than two.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "spearman inputs differ in length");
    if x.len() < 2 {
        return None;
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyPoint {
    pub id: String,
    pub entropy: f64,
    pub rmr_correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Correlation {
    Value(f64),
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyAnalysis {
    pub points: Vec<EntropyPoint>,
    /// Spearman correlation between entropy and RMR correctness (1/0).
    pub correlation: Correlation,
}

/// Entropy of each row's normalized observed rewards next to whether RMR
/// with `source` picks the oracle's model.
pub fn entropy_quality_analysis(
    dataset: &RewardDataset,
    source: &RewardSource,
    oracle: &OracleMap,
) -> Result<EntropyAnalysis, EvalError> {
    let reg = dataset.registry();
    let points = dataset
        .rows()
        .iter()
        .map(|row| {
            let (pick, rewards) = rmr_select(reg, &row.query, &stub_outputs(reg, &row.query), source)?;
            let entropy = reward_entropy(&normalize_rewards(&rewards, 1.0)?);
            Ok(EntropyPoint {
                id: row.query.id.clone(),
                entropy,
                rmr_correct: pick == oracle.select(&row.query.id)?,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let entropies: Vec<f64> = points.iter().map(|p| p.entropy).collect();
    let correct: Vec<f64> = points.iter().map(|p| f64::from(u8::from(p.rmr_correct))).collect();
    let correlation = spearman(&entropies, &correct).map_or(Correlation::Degenerate, Correlation::Value);
    Ok(EntropyAnalysis { points, correlation })
}

/// Stable 80/20 split: a row is held out when the FNV-1a hash of its id is
/// divisible by 5.
pub fn is_held_out(query_id: &str) -> bool {
    fnv1a64(query_id.as_bytes()).is_multiple_of(5)
}

pub fn split_train_test(dataset: &RewardDataset) -> (RewardDataset, RewardDataset) {
    (
        dataset.filtered(|r| !is_held_out(&r.query.id)),
        dataset.filtered(|r| is_held_out(&r.query.id)),
    )
}

/// Benchmark plus router settings for the β sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationSpec {
    pub benchmark: SyntheticSpec,
    pub train: TrainConfig,
    pub featurizer: FeaturizerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub beta: f64,
    pub accuracy: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub train_rows: usize,
    pub held_out_rows: usize,
    pub best_single_model_accuracy: f64,
}

impl AblationTable {
    pub fn accuracy(&self, beta: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.beta == beta).map(|r| r.accuracy)
    }

    pub fn to_table(&self) -> String {
        let header = ["beta", "accuracy", "final_loss"].map(String::from);
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    format!("{}", r.beta),
                    format!("{:.4}", r.accuracy),
                    format!("{:.6}", r.final_loss),
                ]
            })
            .collect();
        render_table(&header, &rows)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("beta\taccuracy\tfinal_loss\n");
        for r in &self.rows {
            let _ = writeln!(out, "{}\t{}\t{}", r.beta, r.accuracy, r.final_loss);
        }
        out
    }

    pub fn to_records(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("row serializes") + "\n")
            .collect()
    }
}

/// Trains one router per β on the training split of the same synthetic
/// benchmark and scores routing accuracy on the held-out split. Runs are
/// independent and seeded identically, so they execute in parallel and the
/// table is deterministic.
pub fn beta_ablation(spec: &AblationSpec, betas: &[f64]) -> Result<AblationTable, EvalError> {
    if let Some(&b) = betas.iter().find(|b| !(0.0..=1.0).contains(*b)) {
        return Err(EvalError::Beta(b));
    }
    let bench = make_synthetic_benchmark(&spec.benchmark)?;
    let (train_set, test_set) = split_train_test(&bench.dataset);
    if train_set.is_empty() || test_set.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let table = aggregate_tag_rewards(&train_set)?;
    let rows = betas
        .par_iter()
        .map(|&beta| {
            let config = TrainConfig {
                beta,
                ..spec.train.clone()
            };
            let model = init_router(train_set.registry(), &spec.featurizer, config.seed)?;
            let (model, report) = train(model, &train_set, &table, &config)?;
            Ok(AblationRow {
                beta,
                accuracy: routing_accuracy(&model, &test_set, &bench.oracle)?,
                final_loss: report.final_loss,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(AblationTable {
        rows,
        train_rows: train_set.len(),
        held_out_rows: test_set.len(),
        best_single_model_accuracy: best_single_model_accuracy(&test_set, &bench.oracle)?,
    })
}

/// Systems compared by `eval`: every single model, RMR over the observed
/// rewards, the router when given, and the oracle.
pub fn standard_systems(
    dataset: &RewardDataset,
    oracle: &OracleMap,
    router: Option<&RouterModel>,
) -> Result<Vec<(String, Vec<usize>)>, EvalError> {
    let mut systems: Vec<(String, Vec<usize>)> = dataset
        .registry()
        .ids()
        .enumerate()
        .map(|(i, id)| (id.to_owned(), vec![i; dataset.len()]))
        .collect();
    systems.push((
        "rmr".into(),
        rmr_selections(dataset, &RewardSource::from_dataset(dataset))?,
    ));
    if let Some(model) = router {
        systems.push(("router".into(), router_selections(model, dataset)));
    }
    systems.push(("oracle".into(), oracle_selections(dataset, oracle)?));
    let names: BTreeSet<&str> = systems.iter().map(|(n, _)| n.as_str()).collect();
    debug_assert_eq!(names.len(), systems.len());
    Ok(systems)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ModelRegistry, Query, RewardRow, RewardVector};

    fn table(rows: &[(&str, &[(&str, f64)])]) -> Vec<SubsetScores> {
        rows.iter()
            .map(|(name, s)| SubsetScores::new(*name, s.iter().map(|(k, v)| (*k, *v))))
            .collect()
    }

    #[test]
    fn mtr_examples() {
        let t = table(&[("a", &[("only", 3.0)]), ("b", &[("only", -1.0)])]);
        assert_eq!(mean_task_rank(&t, "only").unwrap(), 1.0);

        let t = table(&[
            ("a", &[("s1", 2.0), ("s2", 1.0)]),
            ("b", &[("s1", 1.0), ("s2", 2.0)]),
        ]);
        assert_eq!(mean_task_rank(&t, "s1").unwrap(), 1.5);
        assert_eq!(mean_task_rank(&t, "s2").unwrap(), 1.5);

        let t = table(&[("a", &[("x", 5.0), ("y", 5.0), ("z", 1.0)])]);
        assert_eq!(t[0].rank("x").unwrap(), 1);
        assert_eq!(t[0].rank("y").unwrap(), 1);
        assert_eq!(t[0].rank("z").unwrap(), 3);
    }

    #[test]
    fn uplift_examples() {
        let t = table(&[
            ("a", &[("s", 2.0), ("o", 1.0)]),
            ("b", &[("s", 0.0), ("o", 1.0)]),
            ("c", &[("s", 1.0), ("o", 1.0)]),
            ("d", &[("s", 0.5), ("o", 0.9)]),
        ]);
        assert_eq!(uplift_rate(&t, "s").unwrap(), 0.5);
        let t = table(&[("a", &[("s", 0.0), ("o", 1.0)])]);
        assert_eq!(uplift_rate(&t, "s").unwrap(), 0.0);
    }

    #[test]
    fn missing_system_is_an_error() {
        let t = table(&[("a", &[("s", 1.0)]), ("b", &[("o", 1.0)])]);
        assert!(matches!(
            mean_task_rank(&t, "s"),
            Err(EvalError::MissingSystem { subset, .. }) if subset == "b"
        ));
        assert!(uplift_rate(&t, "o").is_err());
        assert!(matches!(mean_task_rank(&[], "s"), Err(EvalError::NoSubsets)));
        assert!(EvalReport::build(&t).is_err());
    }

    #[test]
    fn report_renders() {
        let t = table(&[
            ("a", &[("s1", 2.0), ("s2", 1.0)]),
            ("b", &[("s1", 1.0), ("s2", 2.0)]),
        ]);
        let r = EvalReport::build(&t).unwrap();
        assert_eq!(r.system("s1").unwrap().mtr, 1.5);
        let text = r.to_table();
        assert!(text.lines().next().unwrap().contains("MTR"));
        assert_eq!(text.lines().count(), 4);
        assert_eq!(r.to_tsv().lines().count(), 5);
        assert_eq!(r.to_records().lines().count(), 2);
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 2.0], &[1.0, 1.0]), None);
        assert_eq!(average_ranks(&[5.0, 1.0, 5.0, 3.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    fn three_expert_dataset() -> (RewardDataset, OracleMap) {
        let reg = ModelRegistry::from_ids(["m0", "m1", "m2"]).unwrap();
        let rows = (0..30)
            .map(|i| {
                let mut r = vec![0.0; 3];
                r[i % 3] = 1.0;
                RewardRow {
                    query: Query::new(format!("q{i}"), format!("query number {i}")),
                    rewards: RewardVector::new(r).unwrap(),
                }
            })
            .collect();
        let ds = RewardDataset::new(reg, rows).unwrap();
        let oracle = OracleMap::from_dataset(&ds);
        (ds, oracle)
    }

    #[test]
    fn zero_router_accuracy_is_model_zero_share() {
        let (ds, oracle) = three_expert_dataset();
        let model = RouterModel::zeros(ds.registry(), &FeaturizerConfig::with_dimension(256)).unwrap();
        let acc = routing_accuracy(&model, &ds, &oracle).unwrap();
        let share = oracle_selections(&ds, &oracle)
            .unwrap()
            .iter()
            .filter(|&&p| p == 0)
            .count() as f64
            / ds.len() as f64;
        assert_eq!(acc, share);
        assert!((acc - 1.0 / 3.0).abs() < 1e-12);
        assert!((best_single_model_accuracy(&ds, &oracle).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_against_itself_is_perfect() {
        let (ds, oracle) = three_expert_dataset();
        let systems = standard_systems(&ds, &oracle, None).unwrap();
        let scores = selection_scores(&ds, &oracle, &systems).unwrap();
        assert_eq!(scores.len(), 1);
        assert_eq!(scores[0].subset_name, DEFAULT_SUBSET);
        assert_eq!(mean_task_rank(&scores, "oracle").unwrap(), 1.0);
        assert_eq!(uplift_rate(&scores, "oracle").unwrap(), 1.0);
        let picks = oracle_selections(&ds, &oracle).unwrap();
        let truth = oracle_selections(&ds, &oracle).unwrap();
        assert_eq!(picks, truth);
    }

    #[test]
    fn split_is_stable_and_roughly_balanced() {
        let held = (0..10_000).filter(|i| is_held_out(&format!("q{i}"))).count();
        assert!((1800..2200).contains(&held), "{held}");
        assert_eq!(is_held_out("abc"), is_held_out("abc"));
    }

    #[test]
    fn ablation_rejects_bad_beta() {
        let spec = AblationSpec {
            benchmark: SyntheticSpec {
                num_models: 2,
                queries_per_cluster: 5,
                expertise_margin: 1.0,
                noise_sigma: 0.0,
                seed: 0,
                words_per_query: 4,
                expertise: None,
                clusters: vec![],
            },
            train: TrainConfig::default(),
            featurizer: FeaturizerConfig::with_dimension(64),
        };
        assert!(matches!(beta_ablation(&spec, &[0.5, 1.2]), Err(EvalError::Beta(_))));
    }
}
