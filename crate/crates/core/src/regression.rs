//! Random-forest regression per feature channel, k-fold hyperparameter
//! tuning, late fusion and the repeated train/test RMSE protocol.
//!
//! Trees are CART regressors: at each node a random feature subset is
//! searched exhaustively over midpoints between consecutive distinct values,
//! keeping the split with the largest variance reduction. Ties go to the
//! lowest feature index, then the lowest threshold. Each tree draws from its
//! own seed derived from the forest seed and the tree index, so a forest of
//! `n` trees is a prefix of any larger forest with the same seed.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureChannel;
use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum RegressionError {
    #[error("no training data")]
    EmptyData,
    #[error("{rows} feature rows but {targets} targets")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("vector of dimension {got}, expected {want}")]
    DimensionMismatch { want: usize, got: usize },
    #[error("invalid forest config: {0}")]
    InvalidConfig(String),
    #[error("nothing to fuse")]
    EmptyFusion,
    #[error("video {item} has no vector in channel {channel}")]
    MissingVector { item: String, channel: String },
    #[error("unknown channel {0}")]
    UnknownChannel(String),
    #[error("{have} scored videos, need more than {train_n}")]
    TooFewItems { have: usize, train_n: usize },
}

pub type Result<T> = std::result::Result<T, RegressionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubset {
    Third,
    Sqrt,
    All,
}

impl FeatureSubset {
    pub fn count(self, dim: usize) -> usize {
        let m = match self {
            FeatureSubset::Third => dim / 3,
            FeatureSubset::Sqrt => (dim as f64).sqrt().floor() as usize,
            FeatureSubset::All => dim,
        };
        m.clamp(1, dim.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub features_per_split: FeatureSubset,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: None,
            min_leaf: 1,
            features_per_split: FeatureSubset::Third,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestConfig {
    fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(RegressionError::InvalidConfig("n_trees must be at least 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(RegressionError::InvalidConfig("min_leaf must be at least 1".into()));
        }
        Ok(())
    }
}

/// One regression tree stored as parallel node arrays; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    /// `None` marks a leaf.
    pub split_feature: Vec<Option<usize>>,
    pub threshold: Vec<f64>,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub value: Vec<f64>,
    pub n_samples: Vec<usize>,
}

impl RegressionTree {
    fn empty() -> Self {
        RegressionTree {
            split_feature: Vec::new(),
            threshold: Vec::new(),
            left: Vec::new(),
            right: Vec::new(),
            value: Vec::new(),
            n_samples: Vec::new(),
        }
    }

    fn push(&mut self, value: f64, n: usize) -> usize {
        self.split_feature.push(None);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.value.push(value);
        self.n_samples.push(n);
        self.value.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.value.len()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = 0;
        while let Some(f) = self.split_feature[node] {
            node = if x[f] <= self.threshold[node] { self.left[node] } else { self.right[node] };
        }
        self.value[node]
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_nodes()).filter(|&i| self.split_feature[i].is_none())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub config: ForestConfig,
    pub channel_name: String,
    pub dim: usize,
    pub trees: Vec<RegressionTree>,
}

impl ForestModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        predict(self, x)
    }
}

/// Variance reduction of splitting a node into `left` and `right`:
/// `n_l * n_r / n * (mean_l - mean_r)^2`, equal to the drop in summed squared error.
pub fn variance_reduction(left: &[f64], right: &[f64]) -> f64 {
    if left.is_empty() || right.is_empty() {
        return 0.0;
    }
    let (nl, nr) = (left.len() as f64, right.len() as f64);
    let ml = left.iter().sum::<f64>() / nl;
    let mr = right.iter().sum::<f64>() / nr;
    split_gain(nl, ml * nl, nr, mr * nr)
}

fn split_gain(nl: f64, sum_l: f64, nr: f64, sum_r: f64) -> f64 {
    let d = sum_l / nl - sum_r / nr;
    nl * nr / (nl + nr) * d * d
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Training rows in feature-major layout with per-feature dense ranks.
struct Columns {
    values: Vec<Vec<f64>>,
    /// Equal values share a rank, so rank order is value order.
    ranks: Vec<Vec<u32>>,
}

impl Columns {
    fn new(x: &[Vec<f64>], dim: usize) -> Self {
        let n = x.len();
        let mut values = Vec::with_capacity(dim);
        let mut ranks = Vec::with_capacity(dim);
        let mut order: Vec<usize> = (0..n).collect();
        for f in 0..dim {
            let col: Vec<f64> = x.iter().map(|r| r[f]).collect();
            order.sort_unstable_by(|&a, &b| col[a].total_cmp(&col[b]));
            let mut rank = vec![0u32; n];
            let mut r = 0u32;
            for k in 1..n {
                if col[order[k]] != col[order[k - 1]] {
                    r += 1;
                }
                rank[order[k]] = r;
            }
            values.push(col);
            ranks.push(rank);
        }
        Columns { values, ranks }
    }
}

/// A node's rows: training row index and multiplicity in the resample.
type NodeRows = Vec<(u32, f64)>;

struct TreeBuilder<'a> {
    cols: &'a Columns,
    y: &'a [f64],
    dim: usize,
    config: &'a ForestConfig,
    rng: rng::Rng,
    tree: RegressionTree,
    keys: Vec<u64>,
    /// Bucket heads by rank, all `u32::MAX` between uses.
    heads: Vec<u32>,
    links: Vec<u32>,
}

impl TreeBuilder<'_> {
    /// Fills `keys` with `rank << 32 | local index`, ascending.
    fn order_by_rank(&mut self, ranks: &[u32], rows: &NodeRows) {
        self.keys.clear();
        let n_all = self.heads.len();
        if rows.len() * 4 < n_all {
            self.keys.extend(rows.iter().enumerate().map(|(i, &(r, _))| (ranks[r as usize] as u64) << 32 | i as u64));
            self.keys.sort_unstable();
            return;
        }
        self.links.resize(rows.len(), u32::MAX);
        for (i, &(r, _)) in rows.iter().enumerate().rev() {
            let rank = ranks[r as usize] as usize;
            self.links[i] = self.heads[rank];
            self.heads[rank] = i as u32;
        }
        for rank in 0..n_all {
            let mut i = self.heads[rank];
            while i != u32::MAX {
                self.keys.push((rank as u64) << 32 | i as u64);
                i = self.links[i as usize];
            }
            self.heads[rank] = u32::MAX;
        }
    }

    fn best_split_on(&mut self, rows: &NodeRows, wy: &[f64], n: f64, total: f64, feature: usize, best: &mut Option<Split>) {
        let min_leaf = self.config.min_leaf as f64;
        self.order_by_rank(&self.cols.ranks[feature], rows);
        let values = &self.cols.values[feature];
        let mut left_n = 0.0;
        let mut left_sum = 0.0;
        let mut prev = self.keys[0];
        for &key in &self.keys[1..] {
            let i = (prev & 0xffff_ffff) as usize;
            left_n += rows[i].1;
            left_sum += wy[i];
            let same = key >> 32 == prev >> 32;
            let lo_row = rows[i].0;
            prev = key;
            if same || left_n < min_leaf || n - left_n < min_leaf {
                continue;
            }
            let gain = split_gain(left_n, left_sum, n - left_n, total - left_sum);
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                let lo = values[lo_row as usize];
                let hi = values[rows[(key & 0xffff_ffff) as usize].0 as usize];
                let mid = lo + (hi - lo) / 2.0;
                let threshold = if mid < hi { mid } else { lo };
                *best = Some(Split { feature, threshold, gain });
            }
        }
    }

    fn find_split(&mut self, rows: &NodeRows, wy: &[f64], n: f64, total: f64) -> Option<Split> {
        let m = self.config.features_per_split.count(self.dim);
        let mut chosen = vec![false; self.dim];
        for f in sample(&mut self.rng, self.dim, m) {
            chosen[f] = true;
        }
        let mut best = None;
        for f in (0..self.dim).filter(|&f| chosen[f]) {
            self.best_split_on(rows, wy, n, total, f, &mut best);
        }
        if best.is_none() && m < self.dim {
            // every sampled feature is constant here: keep drawing until one splits
            let mut rest: Vec<usize> = (0..self.dim).filter(|&f| !chosen[f]).collect();
            rest.shuffle(&mut self.rng);
            for f in rest {
                self.best_split_on(rows, wy, n, total, f, &mut best);
                if best.is_some() {
                    break;
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: NodeRows, depth: usize) -> usize {
        let n: f64 = rows.iter().map(|r| r.1).sum();
        let wy: Vec<f64> = rows.iter().map(|&(r, w)| w * self.y[r as usize]).collect();
        let total: f64 = wy.iter().sum();
        let node = self.tree.push(total / n, n as usize);
        let y0 = self.y[rows[0].0 as usize];
        let pure = rows.iter().all(|&(r, _)| self.y[r as usize] == y0);
        let depth_capped = self.config.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || n < 2.0 * self.config.min_leaf as f64 {
            return node;
        }
        let Some(split) = self.find_split(&rows, &wy, n, total) else {
            return node;
        };
        let col = &self.cols.values[split.feature];
        let (l, r): (NodeRows, NodeRows) = rows.into_iter().partition(|&(s, _)| col[s as usize] <= split.threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.tree.split_feature[node] = Some(split.feature);
        self.tree.threshold[node] = split.threshold;
        self.tree.left[node] = left;
        self.tree.right[node] = right;
        node
    }
}

fn check_data(x: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if x.is_empty() {
        return Err(RegressionError::EmptyData);
    }
    if x.len() != y.len() {
        return Err(RegressionError::LengthMismatch { rows: x.len(), targets: y.len() });
    }
    let dim = x[0].len();
    if dim == 0 {
        return Err(RegressionError::DimensionMismatch { want: 1, got: 0 });
    }
    if let Some(bad) = x.iter().find(|r| r.len() != dim) {
        return Err(RegressionError::DimensionMismatch { want: dim, got: bad.len() });
    }
    Ok(dim)
}

fn train_tree(cols: &Columns, y: &[f64], dim: usize, config: &ForestConfig, index: usize) -> RegressionTree {
    let mut rng = rng::derived(config.seed, index as u64);
    let n = y.len();
    let rows: NodeRows = if config.bootstrap {
        let mut counts = vec![0u32; n];
        for _ in 0..n {
            counts[rng.random_range(0..n)] += 1;
        }
        (0..n).filter(|&i| counts[i] > 0).map(|i| (i as u32, counts[i] as f64)).collect()
    } else {
        (0..n).map(|i| (i as u32, 1.0)).collect()
    };
    let mut builder = TreeBuilder {
        cols,
        y,
        dim,
        config,
        rng,
        tree: RegressionTree::empty(),
        keys: Vec::with_capacity(n),
        heads: vec![u32::MAX; n],
        links: Vec::with_capacity(n),
    };
    builder.grow(rows, 0);
    builder.tree
}

/// Trains a forest; deterministic for a given `config.seed`.
pub fn train_forest(x: &[Vec<f64>], y: &[f64], config: &ForestConfig, channel_name: &str) -> Result<ForestModel> {
    config.validate()?;
    let dim = check_data(x, y)?;
    let cols = Columns::new(x, dim);
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|i| train_tree(&cols, y, dim, config, i))
        .collect();
    Ok(ForestModel { config: config.clone(), channel_name: channel_name.to_owned(), dim, trees })
}

/// Mean of the per-tree predictions.
pub fn predict(model: &ForestModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.dim {
        return Err(RegressionError::DimensionMismatch { want: model.dim, got: x.len() });
    }
    Ok(model.trees.iter().map(|t| t.predict(x)).sum::<f64>() / model.trees.len() as f64)
}

/// Late fusion: arithmetic mean of per-channel predictions.
pub fn fuse(predictions: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(RegressionError::EmptyFusion);
    }
    Ok(predictions.iter().sum::<f64>() / predictions.len() as f64)
}

pub fn rmse(predicted: &[f64], actual: &[f64]) -> f64 {
    let se: f64 = predicted.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum();
    (se / actual.len() as f64).sqrt()
}

/// Hyperparameter grid searched by k-fold cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningGrid {
    pub n_trees: Vec<usize>,
    pub min_leaf: Vec<usize>,
    pub features_per_split: Vec<FeatureSubset>,
    pub max_depth: Vec<Option<usize>>,
}

impl Default for TuningGrid {
    fn default() -> Self {
        TuningGrid {
            n_trees: vec![50, 100, 200],
            min_leaf: vec![1, 3, 5],
            features_per_split: vec![FeatureSubset::Third, FeatureSubset::Sqrt, FeatureSubset::All],
            max_depth: vec![None],
        }
    }
}

impl TuningGrid {
    /// A grid holding only `config`'s values.
    pub fn fixed(config: &ForestConfig) -> Self {
        TuningGrid {
            n_trees: vec![config.n_trees],
            min_leaf: vec![config.min_leaf],
            features_per_split: vec![config.features_per_split],
            max_depth: vec![config.max_depth],
        }
    }

    pub fn len(&self) -> usize {
        self.n_trees.len() * self.min_leaf.len() * self.features_per_split.len() * self.max_depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fold of each row: rows are shuffled, then dealt round-robin.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed));
    let mut fold = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold[row] = pos % folds;
    }
    fold
}

/// Picks the grid point with the lowest k-fold CV mean squared error.
///
/// Forests for the different `n_trees` values share trees: the largest
/// forest is trained once per fold and scored on each prefix.
pub fn tune(x: &[Vec<f64>], y: &[f64], base: &ForestConfig, grid: &TuningGrid, folds: usize, seed: u64) -> Result<(ForestConfig, f64)> {
    check_data(x, y)?;
    if grid.is_empty() {
        return Err(RegressionError::InvalidConfig("empty tuning grid".into()));
    }
    let folds = folds.clamp(2, x.len());
    let fold = fold_assignment(x.len(), folds, rng::derive_seed(seed, 0));
    let mut tree_counts = grid.n_trees.clone();
    tree_counts.sort_unstable();
    tree_counts.dedup();
    let max_trees = *tree_counts.last().expect("non-empty grid");

    let mut best: Option<(ForestConfig, f64)> = None;
    for &fps in &grid.features_per_split {
        for &min_leaf in &grid.min_leaf {
            for &max_depth in &grid.max_depth {
                let mut sq_err = vec![0.0; tree_counts.len()];
                for k in 0..folds {
                    let (tr, te): (Vec<usize>, Vec<usize>) = (0..x.len()).partition(|&i| fold[i] != k);
                    let cfg = ForestConfig {
                        n_trees: max_trees,
                        max_depth,
                        min_leaf,
                        features_per_split: fps,
                        bootstrap: base.bootstrap,
                        seed: rng::derive_seed(seed, 1 + k as u64),
                    };
                    let xtr: Vec<Vec<f64>> = tr.iter().map(|&i| x[i].clone()).collect();
                    let ytr: Vec<f64> = tr.iter().map(|&i| y[i]).collect();
                    let model = train_forest(&xtr, &ytr, &cfg, "cv")?;
                    for &i in &te {
                        let mut acc = 0.0;
                        let mut next = 0;
                        for (t, tree) in model.trees.iter().enumerate() {
                            acc += tree.predict(&x[i]);
                            while next < tree_counts.len() && tree_counts[next] == t + 1 {
                                let d = acc / (t + 1) as f64 - y[i];
                                sq_err[next] += d * d;
                                next += 1;
                            }
                        }
                    }
                }
                for &n_trees in &grid.n_trees {
                    let pos = tree_counts.binary_search(&n_trees).expect("present");
                    let mse = sq_err[pos] / x.len() as f64;
                    if best.as_ref().is_none_or(|(_, b)| mse < *b) {
                        let cfg = ForestConfig { n_trees, max_depth, min_leaf, features_per_split: fps, ..base.clone() };
                        best = Some((cfg, mse));
                    }
                }
            }
        }
    }
    Ok(best.expect("non-empty grid"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolOptions {
    pub train_n: usize,
    pub repeats: usize,
    pub seed: u64,
    pub folds: usize,
    pub grid: TuningGrid,
    pub base: ForestConfig,
    /// Channel combinations to report; each is fused by averaging.
    pub channel_sets: Vec<Vec<String>>,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        ProtocolOptions {
            train_n: 80,
            repeats: 25,
            seed: 0,
            folds: 5,
            grid: TuningGrid::default(),
            base: ForestConfig::default(),
            channel_sets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRow {
    pub channels: Vec<String>,
    pub mean_rmse: f64,
    /// Sample standard deviation across repeats.
    pub std_rmse: f64,
    pub per_repeat: Vec<f64>,
}

impl ProtocolRow {
    pub fn label(&self) -> String {
        self.channels.join("+")
    }
}

/// Train/test split for one repeat: the first `train_n` of a seeded shuffle train.
pub fn split_indices(n: usize, train_n: usize, seed: u64, repeat: usize) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::derived(seed, repeat as u64));
    let test = order.split_off(train_n.min(n));
    (order, test)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Repeated random train/test evaluation with per-channel tuning and late fusion.
///
/// Items are the keys of `scores`; every channel used by a requested set
/// must hold a vector for each of them.
pub fn rmse_protocol(channels: &[FeatureChannel], scores: &BTreeMap<String, f64>, opts: &ProtocolOptions) -> Result<Vec<ProtocolRow>> {
    let items: Vec<&String> = scores.keys().collect();
    if items.len() <= opts.train_n {
        return Err(RegressionError::TooFewItems { have: items.len(), train_n: opts.train_n });
    }
    let mut used: Vec<&str> = opts.channel_sets.iter().flatten().map(String::as_str).collect();
    used.sort_unstable();
    used.dedup();
    let mut matrices: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
    for name in &used {
        let ch = channels
            .iter()
            .find(|c| c.name == *name)
            .ok_or_else(|| RegressionError::UnknownChannel((*name).to_owned()))?;
        let rows = items
            .iter()
            .map(|id| {
                ch.get(id).map(<[f64]>::to_vec).ok_or_else(|| RegressionError::MissingVector {
                    item: (*id).clone(),
                    channel: ch.name.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        matrices.insert(name, rows);
    }
    let y: Vec<f64> = scores.values().copied().collect();

    // per repeat: channel -> test predictions
    let per_repeat: Vec<(Vec<f64>, BTreeMap<&str, Vec<f64>>)> = (0..opts.repeats)
        .into_par_iter()
        .map(|r| {
            let (train, test) = split_indices(y.len(), opts.train_n, opts.seed, r);
            let repeat_seed = rng::derive_seed(rng::derive_seed(opts.seed, 0x5eed), r as u64);
            let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let yte: Vec<f64> = test.iter().map(|&i| y[i]).collect();
            let mut preds = BTreeMap::new();
            for (name, x) in &matrices {
                let channel_seed = rng::derive_seed(repeat_seed, rng::fnv1a(name.as_bytes()));
                let xtr: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
                let (mut cfg, _) = tune(&xtr, &ytr, &opts.base, &opts.grid, opts.folds, channel_seed)?;
                cfg.seed = rng::derive_seed(channel_seed, u64::MAX);
                let model = train_forest(&xtr, &ytr, &cfg, name)?;
                let p = test.iter().map(|&i| predict(&model, &x[i])).collect::<Result<Vec<_>>>()?;
                preds.insert(*name, p);
            }
            Ok((yte, preds))
        })
        .collect::<Result<Vec<_>>>()?;

    opts.channel_sets
        .iter()
        .map(|set| {
            let rmses = per_repeat
                .iter()
                .map(|(yte, preds)| {
                    let fused = (0..yte.len())
                        .map(|i| fuse(&set.iter().map(|c| preds[c.as_str()][i]).collect::<Vec<_>>()))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(rmse(&fused, yte))
                })
                .collect::<Result<Vec<_>>>()?;
            let (mean_rmse, std_rmse) = mean_std(&rmses);
            Ok(ProtocolRow { channels: set.clone(), mean_rmse, std_rmse, per_repeat: rmses })
        })
        .collect()
}

/// Writes the RMSE grid as `channels,mean_rmse,std_rmse`.
pub fn write_protocol_csv<W: std::io::Write>(out: W, rows: &[ProtocolRow]) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["channels", "mean_rmse", "std_rmse"])?;
    for r in rows {
        w.write_record([r.label(), r.mean_rmse.to_string(), r.std_rmse.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
