//! Random forest regression with out-of-bag error tracking.
//!
//! Every target gets its own ensemble. Tree `k` of target `t` draws its
//! bootstrap and its split features from streams keyed by
//! `(rng_seed, name of t, k)`, so trees can be grown on any number of threads
//! without changing the result, and the first `m` trees of a larger forest
//! are exactly the forest grown with `n_trees = m`.

mod tree;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

pub use tree::{fit_tree, Node, RegressionTree};
use tree::{grow, Presorted};

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_rows * n_cols {
            return Err(Error::Argument(format!(
                "{} values for a {n_rows} x {n_cols} matrix",
                data.len()
            )));
        }
        if n_cols == 0 {
            return Err(Error::Argument("feature matrix has no columns".into()));
        }
        Ok(FeatureMatrix { n_rows, n_cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for (i, r) in rows.iter().enumerate() {
            if r.as_ref().len() != n_cols {
                return Err(Error::Argument(format!("row {i} has {} features, expected {n_cols}", r.as_ref().len())));
            }
            data.extend_from_slice(r.as_ref());
        }
        Self::new(rows.len(), n_cols, data)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_cols)
    }

    /// Rows picked (in order) by `indices`.
    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.n_cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            n_rows: indices.len(),
            n_cols: self.n_cols,
            data,
        }
    }
}

/// Named target columns, one value per feature row.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Targets {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.is_empty() || names.len() != columns.len() {
            return Err(Error::Argument(format!(
                "{} target names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        Ok(Targets { names, columns })
    }

    pub fn single(name: &str, values: Vec<f64>) -> Self {
        Targets {
            names: vec![name.to_string()],
            columns: vec![values],
        }
    }

    pub fn select(&self, indices: &[usize]) -> Targets {
        Targets {
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| indices.iter().map(|&i| c[i]).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Bootstrap {
    /// `n` draws with replacement per tree.
    #[default]
    Resample,
    /// Every tree sees every row once. Leaves no out-of-bag rows; meant for
    /// memorisation checks.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Features tried per split.
    pub max_features: usize,
    pub min_leaf_size: usize,
    /// `None` grows until the other stopping rules apply.
    #[serde(default)]
    pub max_depth: Option<usize>,
    pub rng_seed: u64,
    #[serde(default)]
    pub bootstrap: Bootstrap,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_features: 64,
            min_leaf_size: 5,
            max_depth: None,
            rng_seed: 0,
            bootstrap: Bootstrap::Resample,
        }
    }
}

impl ForestConfig {
    /// One fully grown tree on the unresampled data.
    pub fn memorizing(n_features: usize) -> Self {
        ForestConfig {
            n_trees: 1,
            max_features: n_features,
            min_leaf_size: 1,
            max_depth: None,
            rng_seed: 0,
            bootstrap: Bootstrap::Identity,
        }
    }

    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::param("n_trees", "must be positive"));
        }
        if self.max_features == 0 || self.max_features > n_features {
            return Err(Error::param(
                "max_features",
                format!("must lie in 1..={n_features}, got {}", self.max_features),
            ));
        }
        if self.min_leaf_size == 0 {
            return Err(Error::param("min_leaf_size", "must be positive"));
        }
        if self.max_depth == Some(0) {
            return Err(Error::param("max_depth", "must be positive when set"));
        }
        Ok(())
    }
}

/// The trees of one target plus its out-of-bag error curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEnsemble {
    pub name: String,
    pub trees: Vec<RegressionTree>,
    /// `oob_curve[m - 1]` is the OOB error of the first `m` trees; `None`
    /// while no row has been out of bag.
    pub oob_curve: Vec<Option<f64>>,
}

impl TargetEnsemble {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let total: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        total / self.trees.len() as f64
    }

    pub fn oob_error(&self) -> Option<f64> {
        self.oob_curve.last().copied().flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub config: ForestConfig,
    pub n_features: usize,
    pub targets: Vec<TargetEnsemble>,
}

impl RandomForestModel {
    pub fn target_names(&self) -> Vec<&str> {
        self.targets.iter().map(|t| t.name.as_str()).collect()
    }

    pub fn target(&self, name: &str) -> Option<&TargetEnsemble> {
        self.targets.iter().find(|t| t.name == name)
    }

    /// Mean tree prediction for every target, in target order.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_features {
            return Err(Error::Argument(format!(
                "feature vector has {} values, model expects {}",
                x.len(),
                self.n_features
            )));
        }
        Ok(self.targets.iter().map(|t| t.predict(x)).collect())
    }

    pub fn predict_named(&self, x: &[f64]) -> Result<Vec<(String, f64)>> {
        let values = self.predict(x)?;
        Ok(self.targets.iter().map(|t| t.name.clone()).zip(values).collect())
    }

    /// The model restricted to its first `n_trees` trees per target.
    pub fn truncated(&self, n_trees: usize) -> Result<Self> {
        if n_trees == 0 || n_trees > self.config.n_trees {
            return Err(Error::Argument(format!(
                "cannot truncate a {}-tree forest to {n_trees} trees",
                self.config.n_trees
            )));
        }
        let mut out = self.clone();
        out.config.n_trees = n_trees;
        for t in &mut out.targets {
            t.trees.truncate(n_trees);
            t.oob_curve.truncate(n_trees);
        }
        Ok(out)
    }

    pub fn remove_target(&mut self, name: &str) -> Option<TargetEnsemble> {
        let i = self.targets.iter().position(|t| t.name == name)?;
        Some(self.targets.remove(i))
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate(self.n_features)?;
        if self.targets.is_empty() {
            return Err(Error::Argument("model has no targets".into()));
        }
        for t in &self.targets {
            if t.trees.len() != self.config.n_trees {
                return Err(Error::Argument(format!(
                    "target {} has {} trees, config says {}",
                    t.name,
                    t.trees.len(),
                    self.config.n_trees
                )));
            }
        }
        Ok(())
    }
}

/// Out-of-bag predictions of one tree: `(row, prediction)`.
type OobPredictions = Vec<(u32, f64)>;

/// Mean absolute relative error of the running OOB ensemble after each tree.
///
/// For every prefix of `m` trees, row `i` is predicted by averaging the
/// trees among the first `m` whose bootstrap excluded it; rows with no such
/// tree, and rows whose truth is zero, are skipped.
pub fn oob_curve(per_tree: &[OobPredictions], truth: &[f64]) -> Vec<Option<f64>> {
    let mut sums = vec![0.0; truth.len()];
    let mut counts = vec![0u32; truth.len()];
    per_tree
        .iter()
        .map(|preds| {
            for &(i, p) in preds {
                sums[i as usize] += p;
                counts[i as usize] += 1;
            }
            let (mut total, mut covered) = (0.0, 0usize);
            for i in 0..truth.len() {
                if counts[i] > 0 && truth[i] != 0.0 {
                    let estimate = sums[i] / f64::from(counts[i]);
                    total += (estimate - truth[i]).abs() / truth[i].abs();
                    covered += 1;
                }
            }
            (covered > 0).then(|| total / covered as f64)
        })
        .collect()
}

fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Fits one ensemble per target column.
///
/// Rows are first put into a canonical order (lexicographic in features, then
/// targets), so shuffling the training rows does not change the model.
pub fn fit_forest(x: &FeatureMatrix, y: &Targets, config: &ForestConfig) -> Result<RandomForestModel> {
    let n = x.n_rows();
    if n < 2 {
        return Err(Error::Argument(format!("need at least 2 training rows, got {n}")));
    }
    config.validate(x.n_cols())?;
    if y.names.is_empty() || y.names.len() != y.columns.len() {
        return Err(Error::Argument("targets must be non-empty with one column per name".into()));
    }
    for (name, col) in y.names.iter().zip(&y.columns) {
        if col.len() != n {
            return Err(Error::Argument(format!(
                "target {name} has {} values for {n} feature rows",
                col.len()
            )));
        }
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("target {name} has non-finite values")));
        }
    }
    if x.data.iter().any(|v| v.is_nan()) {
        return Err(Error::Argument("features contain NaN".into()));
    }

    let mut canonical: Vec<usize> = (0..n).collect();
    canonical.sort_by(|&a, &b| {
        lexicographic(x.row(a), x.row(b)).then_with(|| {
            y.columns
                .iter()
                .map(|c| c[a].total_cmp(&c[b]))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let xs = x.select(&canonical);
    let data = Presorted::new(&xs);

    let mut targets = Vec::with_capacity(y.names.len());
    for (name, column) in y.names.iter().zip(&y.columns) {
        let ys: Vec<f64> = canonical.iter().map(|&i| column[i]).collect();
        let target_id = rng::name_id(name);
        let grown: Vec<(RegressionTree, OobPredictions)> = (0..config.n_trees)
            .into_par_iter()
            .map(|k| {
                let counts = bootstrap_counts(n, config, target_id, k);
                let mut split_rng = rng::stream(config.rng_seed, &[tag::SPLITS, target_id, k as u64]);
                let tree = grow(&data, &ys, &counts, config, &mut split_rng);
                let oob = (0..n)
                    .filter(|&i| counts[i] == 0)
                    .map(|i| (i as u32, tree.predict(xs.row(i))))
                    .collect();
                (tree, oob)
            })
            .collect();
        let (trees, oob): (Vec<_>, Vec<_>) = grown.into_iter().unzip();
        targets.push(TargetEnsemble {
            name: name.clone(),
            trees,
            oob_curve: oob_curve(&oob, &ys),
        });
    }
    Ok(RandomForestModel {
        config: config.clone(),
        n_features: x.n_cols(),
        targets,
    })
}

fn bootstrap_counts(n: usize, config: &ForestConfig, target_id: u64, tree: usize) -> Vec<u32> {
    match config.bootstrap {
        Bootstrap::Identity => vec![1; n],
        Bootstrap::Resample => {
            let mut rng = rng::stream(config.rng_seed, &[tag::BOOTSTRAP, target_id, tree as u64]);
            let mut counts = vec![0u32; n];
            for _ in 0..n {
                counts[rng.random_range(0..n)] += 1;
            }
            counts
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// y = 3 x0 - x1 + small deterministic wiggle, on a jittered grid.
    fn toy(n: usize, seed: u64) -> (FeatureMatrix, Targets) {
        let mut r = rng::stream(seed, &[]);
        let mut rows = Vec::new();
        let mut a = Vec::new();
        let mut b = Vec::new();
        for _ in 0..n {
            let x0: f64 = r.random_range(0.0..1.0);
            let x1: f64 = r.random_range(0.0..1.0);
            let x2: f64 = r.random_range(0.0..1.0);
            rows.push(vec![x0, x1, x2]);
            a.push(1.0 + 3.0 * x0 - x1 + 0.1 * (10.0 * x2).sin());
            b.push(2.0 + x1 * x1);
        }
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        (x, Targets::new(vec!["a".into(), "b".into()], vec![a, b]).unwrap())
    }

    fn small_config(seed: u64) -> ForestConfig {
        ForestConfig {
            n_trees: 20,
            max_features: 2,
            min_leaf_size: 2,
            max_depth: None,
            rng_seed: seed,
            bootstrap: Bootstrap::Resample,
        }
    }

    #[test]
    fn identity_bootstrap_full_tree_memorizes() {
        let (x, y) = toy(80, 1);
        let model = fit_forest(&x, &y, &ForestConfig::memorizing(3)).unwrap();
        for (i, row) in x.rows().enumerate() {
            let p = model.predict(row).unwrap();
            assert_eq!(p[0], y.columns[0][i]);
            assert_eq!(p[1], y.columns[1][i]);
        }
        assert_eq!(model.targets[0].oob_curve, vec![None]);
    }

    #[test]
    fn constant_target_predicts_constant_with_zero_oob() {
        let (x, _) = toy(50, 2);
        let y = Targets::single("c", vec![1.5; 50]);
        let model = fit_forest(&x, &y, &small_config(3)).unwrap();
        assert!(model.targets[0].trees.iter().all(|t| t.nodes() == [Node::Leaf(1.5)]));
        assert_eq!(model.predict(x.row(7)).unwrap(), vec![1.5]);
        assert!(model.targets[0].oob_curve.iter().flatten().all(|&e| e == 0.0));
    }

    #[test]
    fn fitting_is_deterministic_across_thread_counts() {
        let (x, y) = toy(120, 4);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| fit_forest(&x, &y, &small_config(9))).unwrap();
        let b = four.install(|| fit_forest(&x, &y, &small_config(9))).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn prefix_of_a_forest_is_the_smaller_forest() {
        let (x, y) = toy(60, 5);
        let big = fit_forest(&x, &y, &small_config(1)).unwrap();
        let small = fit_forest(&x, &y, &ForestConfig { n_trees: 7, ..small_config(1) }).unwrap();
        assert_eq!(big.truncated(7).unwrap(), small);
    }

    #[test]
    fn targets_are_independent() {
        let (x, y) = toy(60, 6);
        let full = fit_forest(&x, &y, &small_config(2)).unwrap();
        let only_b = fit_forest(&x, &Targets::single("b", y.columns[1].clone()), &small_config(2)).unwrap();
        let mut without_a = full.clone();
        without_a.remove_target("a").unwrap();
        assert_eq!(without_a.targets, only_b.targets);
        for row in x.rows().take(10) {
            assert_eq!(without_a.predict(row).unwrap()[0], full.predict(row).unwrap()[1]);
        }
    }

    #[test]
    fn predictions_stay_within_training_range() {
        let (x, y) = toy(100, 7);
        let model = fit_forest(&x, &y, &small_config(4)).unwrap();
        let lo = y.columns[0].iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.columns[0].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (probe, _) = toy(200, 8);
        for row in probe.rows() {
            let p = model.predict(row).unwrap()[0];
            assert!(p >= lo - 1e-12 && p <= hi + 1e-12);
        }
        assert!(model.predict(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn argument_errors() {
        let (x, y) = toy(10, 1);
        let mut bad = small_config(0);
        bad.max_features = 4;
        assert!(fit_forest(&x, &y, &bad).is_err());
        let short = Targets::single("a", vec![1.0; 9]);
        assert!(fit_forest(&x, &short, &small_config(0)).is_err());
        let one = x.select(&[0]);
        assert!(fit_forest(&one, &y.select(&[0]), &small_config(0)).is_err());
    }

    #[test]
    fn oob_curve_skips_uncovered_and_zero_rows() {
        let preds = vec![vec![(0, 2.0)], vec![(0, 4.0), (1, 1.0), (2, 5.0)]];
        let curve = oob_curve(&preds, &[2.0, 2.0, 0.0]);
        assert_eq!(curve, vec![Some(0.0), Some((0.5 + 0.5) / 2.0)]);
        assert_eq!(oob_curve(&[vec![]], &[1.0]), vec![None]);
    }

    #[test]
    fn oob_error_decreases_with_trees_on_smooth_data() {
        let (x, y) = toy(400, 10);
        let cfg = ForestConfig {
            n_trees: 60,
            max_features: 3,
            ..small_config(11)
        };
        let model = fit_forest(&x, &y, &cfg).unwrap();
        let curve = &model.targets[0].oob_curve;
        assert!(curve[59].unwrap() < curve[0].unwrap());
    }

    #[test]
    fn ensemble_variance_shrinks_with_more_trees() {
        let (x, y) = toy(150, 12);
        let y = Targets::single("a", y.columns[0].clone());
        let (probe, _) = toy(30, 13);
        let spread = |n_trees: usize| -> f64 {
            let preds: Vec<Vec<f64>> = (0..20u64)
                .map(|seed| {
                    let cfg = ForestConfig {
                        n_trees,
                        max_features: 1,
                        ..small_config(seed)
                    };
                    let m = fit_forest(&x, &y, &cfg).unwrap();
                    probe.rows().map(|r| m.predict(r).unwrap()[0]).collect()
                })
                .collect();
            (0..probe.n_rows())
                .map(|j| {
                    let mean = preds.iter().map(|p| p[j]).sum::<f64>() / 20.0;
                    preds.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / 19.0
                })
                .sum::<f64>()
                / probe.n_rows() as f64
        };
        let v: Vec<f64> = [1, 4, 16, 64].iter().map(|&n| spread(n)).collect();
        assert!(v.windows(2).all(|w| w[1] < w[0]), "{v:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn row_order_does_not_matter(seed in any::<u64>(), shuffle_seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let (x, y) = toy(40, seed);
            let mut perm: Vec<usize> = (0..40).collect();
            perm.shuffle(&mut rng::stream(shuffle_seed, &[]));
            let a = fit_forest(&x, &y, &small_config(seed)).unwrap();
            let b = fit_forest(&x.select(&perm), &y.select(&perm), &small_config(seed)).unwrap();
            for row in x.rows() {
                prop_assert_eq!(a.predict(row).unwrap(), b.predict(row).unwrap());
            }
        }

        #[test]
        fn monotone_feature_transform_keeps_training_predictions(seed in any::<u64>(), feature in 0usize..3) {
            let (x, y) = toy(40, seed);
            let mut data = x.data.clone();
            for r in 0..x.n_rows() {
                let v = &mut data[r * 3 + feature];
                *v = (*v * 3.0).exp() - 5.0;
            }
            let xt = FeatureMatrix::new(x.n_rows(), 3, data).unwrap();
            // Out-of-bag rows can land on either side of a midpoint threshold,
            // so only rows every tree has seen are comparable.
            let cfg = ForestConfig { bootstrap: Bootstrap::Identity, ..small_config(seed) };
            let a = fit_forest(&x, &y, &cfg).unwrap();
            let b = fit_forest(&xt, &y, &cfg).unwrap();
            for r in 0..x.n_rows() {
                prop_assert_eq!(a.predict(x.row(r)).unwrap(), b.predict(xt.row(r)).unwrap());
            }
        }
    }
}
