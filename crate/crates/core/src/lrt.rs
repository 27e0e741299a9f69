//! Likelihood-ratio tests of equal mean compositions across groups.
//!
//! Each layer is tested on its own: the unrestricted model gives every group
//! its own `(mean, precision)`, the restricted model shares the mean and
//! keeps per-group precisions. `Λ_l = 2 (ℓ_unrestricted − ℓ_restricted)` has
//! `G K_l − (K_l − 1 + G)` degrees of freedom, and layers add up because
//! they are independent.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dirichlet::{
    common_mean_stats, dd_mle_stats, fixed_mean_stats, DdFit, FitOptions, SuffStats,
};
use crate::error::{Error, Result};
use crate::ndd::{check_tree_schema, layers_from_rows, LayerData, NodeId, Tree};
use crate::simplex::{sort_group_labels, GroupKey, Panel};
use crate::special::gamma_q;

/// Negative statistics above this are optimizer noise and clipped silently
/// apart from a debug log line.
pub const NEGATIVE_LAMBDA_TOLERANCE: f64 = 1e-8;

const NO_GROUP: usize = usize::MAX;

/// Assignment of observations to named groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grouping {
    names: Vec<String>,
    of_row: Vec<usize>,
}

impl Grouping {
    /// Groups rows by label; group order follows [`sort_group_labels`].
    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Self {
        let mut names: Vec<String> = labels.iter().map(|s| s.as_ref().to_string()).collect();
        sort_group_labels(&mut names);
        names.dedup();
        let of_row = labels
            .iter()
            .map(|l| names.iter().position(|n| n == l.as_ref()).expect("label present"))
            .collect();
        Self { names, of_row }
    }

    pub fn from_panel(panel: &Panel, key: GroupKey) -> Self {
        let labels: Vec<String> = panel.rows.iter().map(|r| key.label_of(r)).collect();
        Self::from_labels(&labels)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn group_of(&self, row: usize) -> Option<usize> {
        self.of_row.get(row).copied().filter(|&g| g != NO_GROUP)
    }

    /// The two-group grouping for groups `a` and `b`; other rows are unassigned.
    pub fn pair(&self, a: usize, b: usize) -> Grouping {
        Grouping {
            names: vec![self.names[a].clone(), self.names[b].clone()],
            of_row: self
                .of_row
                .iter()
                .map(|&g| match g {
                    g if g == a => 0,
                    g if g == b => 1,
                    _ => NO_GROUP,
                })
                .collect(),
        }
    }

    /// Group labels permuted by `perm` (new name of group `i` is
    /// `names[perm[i]]`); the partition itself is unchanged.
    pub fn relabeled(&self, perm: &[usize]) -> Grouping {
        Grouping {
            names: perm.iter().map(|&i| self.names[i].clone()).collect(),
            of_row: self.of_row.clone(),
        }
    }
}

pub fn degrees_of_freedom(groups: usize, parts: usize) -> usize {
    groups * parts - (parts - 1 + groups)
}

/// Upper tail of the chi-square distribution, `Q(v/2, x/2)`.
pub fn chi_square_upper_tail(x: f64, v: usize) -> f64 {
    assert!(v > 0, "degrees of freedom must be positive");
    if x <= 0.0 {
        return 1.0;
    }
    gamma_q(v as f64 / 2.0, x / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTestResult {
    pub node: NodeId,
    pub label: String,
    pub lambda: f64,
    pub df: usize,
    pub groups: Vec<String>,
    pub n_per_group: Vec<usize>,
    pub loglik_unrestricted: f64,
    pub loglik_restricted: f64,
    pub restricted_iterations: usize,
    /// The raw statistic was negative and has been set to zero.
    pub clipped: bool,
    /// Some per-group fit ran into the precision cap.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallTestResult {
    pub groups: Vec<String>,
    pub layers: Vec<LayerTestResult>,
    pub lambda: f64,
    pub v: usize,
    pub p_value: f64,
}

impl OverallTestResult {
    fn from_layers(groups: Vec<String>, layers: Vec<LayerTestResult>) -> Self {
        let lambda = layers.iter().map(|l| l.lambda).sum();
        let v = layers.iter().map(|l| l.df).sum();
        Self {
            groups,
            p_value: chi_square_upper_tail(lambda, v),
            layers,
            lambda,
            v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseReport {
    pub groups: [String; 2],
    pub layers: Vec<LayerTestResult>,
    pub lambda: f64,
    pub v: usize,
    pub p_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_bonferroni: Option<f64>,
}

impl PairwiseReport {
    pub fn title(&self) -> String {
        format!("{} vs. {}", capitalize(&self.groups[0]), capitalize(&self.groups[1]))
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Restricted fit: shared mean, per-group precisions, alternating the
/// precision and mean updates.
struct RestrictedFit {
    loglik: f64,
    iterations: usize,
}

fn fit_restricted(stats: &[SuffStats], unrestricted: &[DdFit], opts: &FitOptions) -> Result<RestrictedFit> {
    let mut precisions: Vec<f64> = unrestricted.iter().map(|f| f.params.precision).collect();
    // start from the precision-weighted average of the group means
    let k = stats[0].k();
    let weights: Vec<f64> = stats
        .iter()
        .zip(&precisions)
        .map(|(s, a)| s.n as f64 * a)
        .collect();
    let wsum: f64 = weights.iter().sum();
    let mut mean: Vec<f64> = (0..k)
        .map(|j| {
            unrestricted
                .iter()
                .zip(&weights)
                .map(|(f, w)| f.params.mean[j] * w)
                .sum::<f64>()
                / wsum
        })
        .collect();
    let loglik = |mean: &[f64], prec: &[f64]| -> f64 {
        stats.iter().zip(prec).map(|(s, &a)| s.loglik_mp(mean, a)).sum()
    };
    let mut prev = loglik(&mean, &precisions);
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        for (s, a) in stats.iter().zip(precisions.iter_mut()) {
            *a = fixed_mean_stats(s, &mean, *a, opts.precision_cap)?.0;
        }
        let groups: Vec<(&SuffStats, f64)> = stats.iter().zip(precisions.iter().copied()).collect();
        mean = common_mean_stats(&groups, &mean)?;
        let cur = loglik(&mean, &precisions);
        if (cur - prev).abs() <= opts.rel_tol * cur.abs().max(1.0) {
            prev = cur;
            break;
        }
        prev = cur;
    }
    Ok(RestrictedFit {
        loglik: prev,
        iterations,
    })
}

/// Tests equality of one layer's mean subcomposition across groups.
pub fn layer_lrt(layer: &LayerData, grouping: &Grouping) -> Result<LayerTestResult> {
    layer_lrt_with(layer, grouping, &FitOptions::default())
}

pub fn layer_lrt_with(layer: &LayerData, grouping: &Grouping, opts: &FitOptions) -> Result<LayerTestResult> {
    let g = grouping.len();
    if g < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 groups, got {g}")).in_layer(&layer.label));
    }
    let mut group_rows: Vec<Vec<&[f64]>> = vec![Vec::new(); g];
    for (row, &id) in layer.rows.iter().zip(&layer.row_ids) {
        if let Some(gi) = grouping.group_of(id) {
            group_rows[gi].push(row);
        }
    }
    for (name, rows) in grouping.names().iter().zip(&group_rows) {
        if rows.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "group {name:?} has {} usable rows",
                rows.len()
            ))
            .in_layer(&layer.label));
        }
    }
    let stats: Vec<SuffStats> = group_rows
        .iter()
        .map(|r| SuffStats::from_rows(r))
        .collect::<Result<_>>()
        .map_err(|e| e.in_layer(&layer.label))?;
    let fits: Vec<DdFit> = stats
        .iter()
        .map(|s| dd_mle_stats(s, opts))
        .collect::<Result<_>>()
        .map_err(|e| e.in_layer(&layer.label))?;
    let loglik_unrestricted: f64 = fits.iter().map(|f| f.loglik).sum();
    let restricted = fit_restricted(&stats, &fits, opts).map_err(|e| e.in_layer(&layer.label))?;

    let raw = 2.0 * (loglik_unrestricted - restricted.loglik);
    let clipped = raw < 0.0;
    if clipped {
        if raw < -NEGATIVE_LAMBDA_TOLERANCE {
            log::warn!("layer {:?}: negative statistic {raw:e} clipped to 0", layer.label);
        } else {
            log::debug!("layer {:?}: statistic {raw:e} clipped to 0", layer.label);
        }
    }
    Ok(LayerTestResult {
        node: layer.node,
        label: layer.label.clone(),
        lambda: raw.max(0.0),
        df: degrees_of_freedom(g, layer.child_count),
        groups: grouping.names().to_vec(),
        n_per_group: group_rows.iter().map(Vec::len).collect(),
        loglik_unrestricted,
        loglik_restricted: restricted.loglik,
        restricted_iterations: restricted.iterations,
        clipped,
        degenerate: fits.iter().any(|f| f.degenerate),
    })
}

/// Overall test from precomputed layers; layers run in parallel.
pub fn overall_lrt_layers(layers: &[LayerData], grouping: &Grouping) -> Result<OverallTestResult> {
    let results: Vec<LayerTestResult> = layers
        .par_iter()
        .map(|l| layer_lrt(l, grouping))
        .collect::<Result<_>>()?;
    Ok(OverallTestResult::from_layers(grouping.names().to_vec(), results))
}

/// Overall test on a panel: one common tree for all groups.
pub fn overall_lrt(panel: &Panel, tree: &Tree, key: GroupKey, smoothing: f64) -> Result<OverallTestResult> {
    let (layers, grouping) = prepare(panel, tree, key, smoothing)?;
    overall_lrt_layers(&layers, &grouping)
}

fn prepare(panel: &Panel, tree: &Tree, key: GroupKey, smoothing: f64) -> Result<(Vec<LayerData>, Grouping)> {
    check_tree_schema(tree, &panel.schema)?;
    let rows = panel.compositions(smoothing)?;
    Ok((layers_from_rows(&rows, tree), Grouping::from_panel(panel, key)))
}

/// One two-group test per unordered pair of groups, in group order.
pub fn pairwise_from_layers(layers: &[LayerData], grouping: &Grouping, bonferroni: bool) -> Result<Vec<PairwiseReport>> {
    let g = grouping.len();
    if g < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 groups, got {g}")));
    }
    let pairs: Vec<(usize, usize)> = (0..g).flat_map(|a| (a + 1..g).map(move |b| (a, b))).collect();
    let m = pairs.len() as f64;
    pairs
        .par_iter()
        .map(|&(a, b)| {
            let sub = grouping.pair(a, b);
            let overall = overall_lrt_layers(layers, &sub)?;
            Ok(PairwiseReport {
                groups: [grouping.names()[a].clone(), grouping.names()[b].clone()],
                p_bonferroni: bonferroni.then(|| (overall.p_value * m).min(1.0)),
                layers: overall.layers,
                lambda: overall.lambda,
                v: overall.v,
                p_value: overall.p_value,
            })
        })
        .collect()
}

pub fn pairwise_tests(
    panel: &Panel,
    tree: &Tree,
    key: GroupKey,
    smoothing: f64,
    bonferroni: bool,
) -> Result<Vec<PairwiseReport>> {
    let (layers, grouping) = prepare(panel, tree, key, smoothing)?;
    pairwise_from_layers(&layers, &grouping, bonferroni)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn df_formula() {
        assert_eq!(degrees_of_freedom(3, 2), 2);
        assert_eq!(degrees_of_freedom(3, 3), 4);
        assert_eq!(degrees_of_freedom(2, 2), 1);
        assert_eq!(degrees_of_freedom(2, 6), 5);
    }

    #[test]
    fn chi_square_tail_basics() {
        assert_eq!(chi_square_upper_tail(0.0, 10), 1.0);
        // chi2_2 tail is exp(-x/2)
        assert!((chi_square_upper_tail(3.0, 2) - (-1.5f64).exp()).abs() < 1e-15);
        let mut prev = 1.0;
        for i in 0..200 {
            let p = chi_square_upper_tail(i as f64 * 0.25, 7);
            assert!(p <= prev);
            prev = p;
        }
    }

    #[test]
    fn grouping_order_and_pairs() {
        let g = Grouping::from_labels(&["experienced", "young", "middle", "young"]);
        assert_eq!(g.names(), ["young", "middle", "experienced"]);
        assert_eq!(g.group_of(1), Some(0));
        let p = g.pair(0, 2);
        assert_eq!(p.names(), ["young", "experienced"]);
        assert_eq!(p.group_of(0), Some(1));
        assert_eq!(p.group_of(2), None);
    }

    fn layer(rows: Vec<Vec<f64>>) -> LayerData {
        LayerData {
            node: 0,
            label: "Root".into(),
            child_count: rows[0].len(),
            row_ids: (0..rows.len()).collect(),
            rows,
            excluded: vec![],
        }
    }

    #[test]
    fn identical_groups_give_zero() {
        let base = vec![
            vec![0.2, 0.3, 0.5],
            vec![0.1, 0.6, 0.3],
            vec![0.4, 0.4, 0.2],
            vec![0.3, 0.3, 0.4],
        ];
        let mut rows = base.clone();
        rows.extend(base.clone());
        let labels: Vec<&str> = (0..8).map(|i| if i < 4 { "a" } else { "b" }).collect();
        let r = layer_lrt(&layer(rows), &Grouping::from_labels(&labels)).unwrap();
        assert!(r.lambda.abs() < 1e-7, "lambda = {}", r.lambda);
        assert_eq!(r.df, 2);
        assert_eq!(r.n_per_group, vec![4, 4]);
    }

    #[test]
    fn single_group_is_rejected() {
        let rows = vec![vec![0.2, 0.8], vec![0.3, 0.7], vec![0.5, 0.5]];
        let g = Grouping::from_labels(&["a", "a", "a"]);
        assert!(layer_lrt(&layer(rows), &g).is_err());
    }

    #[test]
    fn group_with_one_row_aborts() {
        let rows = vec![vec![0.2, 0.8], vec![0.3, 0.7], vec![0.5, 0.5]];
        let g = Grouping::from_labels(&["a", "a", "b"]);
        let err = layer_lrt(&layer(rows), &g).unwrap_err();
        assert!(matches!(err, Error::Layer { .. }));
    }
}
