//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use qroute::eval::SubsetScores;
use qroute::featurizer::FeatureVector;
use qroute::ranking::{Cluster, SyntheticSpec};
use qroute::router::KlDirection;
use qroute::{ModelRegistry, Query, RewardDataset, RewardRow, RewardVector, RouterModel, RoutingDistribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn registry(k: usize) -> ModelRegistry {
    ModelRegistry::from_ids((0..k).map(|i| format!("m{i}"))).unwrap()
}

pub fn dataset(k: usize, rows: &[(&str, &str, &[&str], &[f64])]) -> RewardDataset {
    let rows = rows
        .iter()
        .map(|(id, text, tags, r)| {
            assert_eq!(r.len(), k);
            RewardRow {
                query: Query::new(*id, *text).with_tags(tags.iter().copied()),
                rewards: RewardVector::new(r.to_vec()).unwrap(),
            }
        })
        .collect();
    RewardDataset::new(registry(k), rows).unwrap()
}

/// Six-cluster planted benchmark from the fixture, with overrides.
pub fn synth_spec(per_cluster: usize, sigma: f64, seed: u64) -> SyntheticSpec {
    let mut spec = SyntheticSpec::load(&fixture("synth6.toml")).unwrap();
    spec.queries_per_cluster = per_cluster;
    spec.noise_sigma = sigma;
    spec.seed = seed;
    spec
}

pub fn small_spec(num_models: usize, clusters: usize, per_cluster: usize, sigma: f64, seed: u64) -> SyntheticSpec {
    let full = SyntheticSpec::load(&fixture("synth6.toml")).unwrap();
    SyntheticSpec {
        num_models,
        queries_per_cluster: per_cluster,
        expertise_margin: 1.0,
        noise_sigma: sigma,
        seed,
        words_per_query: 5,
        expertise: None,
        clusters: full.clusters.into_iter().take(clusters).collect::<Vec<Cluster>>(),
    }
}

// ---------------------------------------------------------------- rewards

/// Softmax computed without the max shift, for moderate inputs only.
pub fn naive_softmax(x: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = x.iter().map(|v| v.exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// Group-by over rows: tag → (sum vector, count). Untagged rows are keyed by
/// `untagged`.
pub fn group_means(ds: &RewardDataset, untagged: &str) -> BTreeMap<String, (Vec<f64>, usize)> {
    let k = ds.registry().len();
    let mut out: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for row in ds.rows() {
        let keys: Vec<String> = if row.query.tags.is_empty() {
            vec![untagged.to_owned()]
        } else {
            row.query.tags.iter().cloned().collect()
        };
        for key in keys {
            let e = out.entry(key).or_insert_with(|| (vec![0.0; k], 0));
            for i in 0..k {
                e.0[i] += row.rewards.as_slice()[i];
            }
            e.1 += 1;
        }
    }
    for (sum, n) in out.values_mut() {
        for v in sum.iter_mut() {
            *v /= *n as f64;
        }
    }
    out
}

// ------------------------------------------------------ decontamination

/// Character-by-character tokenizer, written without the library's helpers.
pub fn reference_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let flush = |cur: &mut String, out: &mut Vec<String>| {
        let chars: Vec<char> = cur.chars().collect();
        let start = chars.iter().position(|c| c.is_alphanumeric());
        let end = chars.iter().rposition(|c| c.is_alphanumeric());
        if let (Some(s), Some(e)) = (start, end) {
            let tok: String = chars[s..=e].iter().collect::<String>().to_lowercase();
            out.push(tok);
        }
        cur.clear();
    };
    for c in text.chars() {
        if c.is_whitespace() {
            flush(&mut current, &mut tokens);
        } else {
            current.push(c);
        }
    }
    flush(&mut current, &mut tokens);
    tokens
}

/// Ids of rows sharing any `n`-token window with any benchmark, by pairwise
/// comparison of every window.
pub fn brute_force_contaminated(ds: &RewardDataset, benchmarks: &[String], n: usize) -> BTreeSet<String> {
    let bench_tokens: Vec<Vec<String>> = benchmarks.iter().map(|b| reference_tokens(b)).collect();
    let mut hit = BTreeSet::new();
    for row in ds.rows() {
        let q = reference_tokens(&row.query.text);
        'row: for b in &bench_tokens {
            if q.len() < n || b.len() < n {
                continue;
            }
            for i in 0..=q.len() - n {
                for j in 0..=b.len() - n {
                    if q[i..i + n] == b[j..j + n] {
                        hit.insert(row.query.id.clone());
                        break 'row;
                    }
                }
            }
        }
    }
    hit
}

const WORDS: &[&str] = &[
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet",
    "kilo", "lima", "mike", "november", "oscar", "papa", "quebec", "romeo", "sierra", "tango",
];

fn decorate(word: &str, rng: &mut ChaCha8Rng) -> String {
    let mut w = word.to_owned();
    if rng.random_bool(0.2) {
        w = w.to_uppercase();
    }
    match rng.random_range(0..8) {
        0 => format!("{w},"),
        1 => format!("\"{w}\""),
        2 => format!("({w})."),
        3 => format!("{w}?!"),
        _ => w,
    }
}

/// Random token streams over a small vocabulary with case and punctuation
/// noise. About a third of the rows get a benchmark window planted verbatim
/// (modulo decoration). Returns the dataset and the benchmark list.
pub fn planted_streams(rows: usize, seed: u64, n: usize) -> (RewardDataset, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stream = |rng: &mut ChaCha8Rng, len: usize| -> Vec<&'static str> {
        (0..len).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect()
    };
    let benchmarks: Vec<Vec<&str>> = (0..20)
        .map(|_| {
            let len = rng.random_range(n..n + 10);
            stream(&mut rng, len)
        })
        .collect();
    let mut data = Vec::new();
    for i in 0..rows {
        let len = rng.random_range(1..20);
        let mut words = stream(&mut rng, len);
        if rng.random_bool(0.33) {
            let b = &benchmarks[rng.random_range(0..benchmarks.len())];
            let start = rng.random_range(0..=b.len() - n);
            let at = rng.random_range(0..=words.len());
            for (off, w) in b[start..start + n].iter().enumerate() {
                words.insert(at + off, w);
            }
        }
        let text: Vec<String> = words.iter().map(|w| decorate(w, &mut rng)).collect();
        let sep = if rng.random_bool(0.1) { "\t " } else { " " };
        data.push(RewardRow {
            query: Query::new(format!("q{i:04}"), text.join(sep)),
            rewards: RewardVector::new(vec![0.0, 1.0]).unwrap(),
        });
    }
    let bench_text = benchmarks
        .iter()
        .map(|b| b.iter().map(|w| decorate(w, &mut rng)).collect::<Vec<_>>().join(" "))
        .collect();
    (RewardDataset::new(registry(2), data).unwrap(), bench_text)
}

// ---------------------------------------------------------------- metrics

/// Competition rank by sorting: position of the first system with an equal
/// score in descending order, plus one.
pub fn sorted_rank(subset: &SubsetScores, system: &str) -> usize {
    let mut scores: Vec<f64> = subset.scores.values().copied().collect();
    scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mine = subset.scores[system];
    scores.iter().position(|&s| s == mine).unwrap() + 1
}

pub fn sorted_mtr(subsets: &[SubsetScores], system: &str) -> f64 {
    subsets.iter().map(|s| sorted_rank(s, system) as f64).sum::<f64>() / subsets.len() as f64
}

pub fn sorted_uplift(subsets: &[SubsetScores], system: &str) -> f64 {
    let best = subsets
        .iter()
        .filter(|s| {
            let mut v: Vec<f64> = s.scores.values().copied().collect();
            v.sort_by(|a, b| b.partial_cmp(a).unwrap());
            s.scores[system] == v[0]
        })
        .count();
    best as f64 / subsets.len() as f64
}

/// Random score tables drawn from a coarse grid so ties are frequent.
pub fn random_tables(seed: u64, count: usize) -> Vec<Vec<SubsetScores>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let systems = rng.random_range(1..7);
            let subsets = rng.random_range(1..12);
            let grid = rng.random_range(2..6);
            (0..subsets)
                .map(|s| {
                    SubsetScores::new(
                        format!("s{s}"),
                        (0..systems).map(|k| (format!("sys{k}"), f64::from(rng.random_range(0..grid)) / 4.0)),
                    )
                })
                .collect()
        })
        .collect()
}

// --------------------------------------------------------------- gradient

pub type Batch = Vec<(FeatureVector, RoutingDistribution)>;

/// A K-model router of dimension `d` with random weights and bias, plus a
/// batch of dense random features and random target distributions.
pub fn random_instance(k: usize, d: u32, rows: usize, seed: u64) -> (RouterModel, Batch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let featurizer = qroute::FeaturizerConfig::with_dimension(d);
    let mut model = RouterModel::zeros(&registry(k), &featurizer).unwrap();
    for w in model.weights_mut() {
        *w = rng.random_range(-1.0..1.0);
    }
    for b in model.bias_mut() {
        *b = rng.random_range(-1.0..1.0);
    }
    let batch = (0..rows)
        .map(|_| {
            let f = FeatureVector::from_pairs(d, (0..d).map(|i| (i, rng.random_range(-1.0..1.0)))).unwrap();
            let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
            (f, RoutingDistribution::new(naive_softmax(&logits)).unwrap())
        })
        .collect();
    (model, batch)
}

/// Largest relative error between the analytic gradient and central
/// differences with step `h`, over every weight and bias entry.
pub fn gradient_check(model: &RouterModel, batch: &Batch, l2: f64, dir: KlDirection, h: f64) -> f64 {
    let analytic = model.objective_gradient(batch, l2, dir).unwrap();
    let f = |m: &RouterModel| m.objective(batch, l2, dir).unwrap();
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
    let mut worst: f64 = 0.0;
    for i in 0..model.weights().len() {
        let mut plus = model.clone();
        plus.weights_mut()[i] += h;
        let mut minus = model.clone();
        minus.weights_mut()[i] -= h;
        let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
        worst = worst.max(rel(analytic.weights[i], numeric));
    }
    for i in 0..model.bias().len() {
        let mut plus = model.clone();
        plus.bias_mut()[i] += h;
        let mut minus = model.clone();
        minus.bias_mut()[i] -= h;
        let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
        worst = worst.max(rel(analytic.bias[i], numeric));
    }
    worst
}
