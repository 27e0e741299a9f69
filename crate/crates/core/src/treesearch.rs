//! Data-driven tree construction by recursive binary splitting.
//!
//! Starting from the plain Dirichlet on all components, every binary
//! partition of the components is fitted as a two-branch nested Dirichlet.
//! If the best split scores lower than the flat fit it is kept, and each
//! side with more than two components is searched again on its branch
//! proportions. Scores are `-2 loglik`, AIC or BIC.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dirichlet::{dd_mle_stats, FitOptions, SuffStats};
use crate::error::{Error, Result};
use crate::ndd::{ndd_fit_rows, Tree, TreeNodeSpec};
use crate::simplex::{correlation_of_rows, ComponentSchema, Panel, DEFAULT_SMOOTHING};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Neg2loglik,
    Aic,
    #[default]
    Bic,
}

impl std::str::FromStr for Criterion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "neg2loglik" | "-2loglik" | "loglik" => Ok(Criterion::Neg2loglik),
            "aic" => Ok(Criterion::Aic),
            "bic" => Ok(Criterion::Bic),
            other => Err(Error::Config(format!("unknown criterion {other:?}"))),
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Criterion::Neg2loglik => "neg2loglik",
            Criterion::Aic => "aic",
            Criterion::Bic => "bic",
        })
    }
}

pub fn score(loglik: f64, p_count: usize, n: usize, criterion: Criterion) -> f64 {
    let base = -2.0 * loglik;
    match criterion {
        Criterion::Neg2loglik => base,
        Criterion::Aic => base + 2.0 * p_count as f64,
        Criterion::Bic => base + p_count as f64 * (n as f64).ln(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub criterion: Criterion,
    /// Above this many components a greedy candidate set replaces
    /// exhaustive partition enumeration.
    pub max_exhaustive_k: usize,
    pub smoothing: f64,
    pub fit: FitOptions,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            criterion: Criterion::Bic,
            max_exhaustive_k: 12,
            smoothing: DEFAULT_SMOOTHING,
            fit: FitOptions::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_exhaustive_k < 3 {
            return Err(Error::Config("max_exhaustive_k must be at least 3".into()));
        }
        Ok(())
    }
}

/// All unordered splits of `items` into two non-empty groups. The first
/// group always holds `items[0]`.
pub fn enumerate_binary_partitions<T: Clone>(items: &[T]) -> Vec<(Vec<T>, Vec<T>)> {
    let m = items.len();
    if m < 2 {
        return Vec::new();
    }
    assert!(m <= 63, "too many items to enumerate");
    let rest = m - 1;
    let full: u64 = (1 << rest) - 1;
    (0..full)
        .map(|mask| {
            let mut left = vec![items[0].clone()];
            let mut right = Vec::new();
            for i in 0..rest {
                if mask >> i & 1 == 1 {
                    left.push(items[i + 1].clone());
                } else {
                    right.push(items[i + 1].clone());
                }
            }
            (left, right)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    /// Flat fit of the node being split.
    Baseline,
    /// Best split, and it beat the baseline.
    Accepted,
    /// Best split, but the baseline scored at least as well.
    NotFavored,
    Rejected,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub depth: usize,
    pub node: Vec<String>,
    pub candidate: String,
    pub loglik: Option<f64>,
    pub p_count: usize,
    pub score: Option<f64>,
    pub decision: Decision,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub records: Vec<TraceRecord>,
}

impl SearchTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("depth,node,candidate,loglik,p_count,score,decision\n");
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.depth,
                r.node.join("+"),
                r.candidate,
                fmt(r.loglik),
                r.p_count,
                fmt(r.score),
                serde_json::to_value(r.decision).unwrap().as_str().unwrap()
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub tree: Tree,
    pub trace: SearchTrace,
    pub n: usize,
    pub loglik: f64,
    pub score: f64,
    pub baseline_loglik: f64,
    pub baseline_score: f64,
}

pub fn find_tree(panel: &Panel, config: &SearchConfig) -> Result<SearchOutcome> {
    let rows = panel.compositions(config.smoothing)?;
    find_tree_rows(&rows, &panel.schema, config)
}

/// Searches a tree for already-closed, interior compositions.
pub fn find_tree_rows<R: AsRef<[f64]> + Sync>(
    rows: &[R],
    schema: &ComponentSchema,
    config: &SearchConfig,
) -> Result<SearchOutcome> {
    config.validate()?;
    let rows: Vec<&[f64]> = rows.iter().map(|r| r.as_ref()).collect();
    if rows.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "tree search needs at least 2 rows, got {}",
            rows.len()
        )));
    }
    let mut search = Search {
        rows: &rows,
        schema,
        config,
        trace: SearchTrace::default(),
    };
    let all: Vec<usize> = (0..schema.len()).collect();
    let mut spec = search.split(&all, 0)?;
    spec.name = "root".into();
    let tree = Tree::from_spec(&spec, schema)?;

    let fit = ndd_fit_rows(&rows, &tree, &config.fit)?;
    let flat = ndd_fit_rows(&rows, &Tree::flat(schema), &config.fit)?;
    let loglik = fit.loglik.unwrap_or(fit.layer_loglik);
    let baseline_loglik = flat.loglik.unwrap_or(flat.layer_loglik);
    let n = rows.len();
    Ok(SearchOutcome {
        score: score(loglik, tree.edge_count(), n, config.criterion),
        baseline_score: score(baseline_loglik, schema.len(), n, config.criterion),
        loglik,
        baseline_loglik,
        n,
        tree,
        trace: search.trace,
    })
}

struct Search<'a> {
    rows: &'a [&'a [f64]],
    schema: &'a ComponentSchema,
    config: &'a SearchConfig,
    trace: SearchTrace,
}

struct Candidate {
    left: Vec<usize>,
    right: Vec<usize>,
    result: Result<f64>,
}

impl Search<'_> {
    fn names(&self, set: &[usize]) -> Vec<String> {
        set.iter().map(|&j| self.schema.names()[j].clone()).collect()
    }

    fn subtree(&mut self, set: &[usize], depth: usize) -> Result<TreeNodeSpec> {
        if set.len() == 1 {
            Ok(TreeNodeSpec::leaf(&self.schema.names()[set[0]]))
        } else {
            self.split(set, depth)
        }
    }

    fn flat_node(&self, set: &[usize]) -> TreeNodeSpec {
        TreeNodeSpec::node(
            self.names(set).join("+"),
            set.iter().map(|&j| TreeNodeSpec::leaf(&self.schema.names()[j])).collect(),
        )
    }

    fn split(&mut self, set: &[usize], depth: usize) -> Result<TreeNodeSpec> {
        if set.len() <= 2 {
            return Ok(self.flat_node(set));
        }
        let n = self.rows.len();
        let m = set.len();
        let criterion = self.config.criterion;
        let sub: Vec<Vec<f64>> = self
            .rows
            .iter()
            .map(|x| {
                let parts: Vec<f64> = set.iter().map(|&j| x[j]).collect();
                let s: f64 = parts.iter().sum();
                parts.into_iter().map(|p| p / s).collect()
            })
            .collect();

        let flat_ll = fit_loglik(&sub, &self.config.fit)?;
        let flat_score = score(flat_ll, m, n, criterion);
        let set_names = self.names(set);
        self.trace.records.push(TraceRecord {
            depth,
            node: set_names.clone(),
            candidate: "flat".into(),
            loglik: Some(flat_ll),
            p_count: m,
            score: Some(flat_score),
            decision: Decision::Baseline,
        });

        let positions: Vec<usize> = (0..m).collect();
        let partitions = if m > self.config.max_exhaustive_k {
            greedy_partitions(&sub, m)
        } else {
            enumerate_binary_partitions(&positions)
        };
        let fit = self.config.fit;
        let candidates: Vec<Candidate> = partitions
            .into_par_iter()
            .map(|(left, right)| {
                let result = split_loglik(&sub, &left, &right, &fit);
                Candidate { left, right, result }
            })
            .collect();

        let p_of = |c: &Candidate| m + usize::from(c.left.len() > 1) + usize::from(c.right.len() > 1);
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in candidates.iter().enumerate() {
            if let Ok(ll) = c.result {
                let s = score(ll, p_of(c), n, criterion);
                let better = match best {
                    None => true,
                    Some((bi, bs)) => match s.partial_cmp(&bs) {
                        Some(Ordering::Less) => true,
                        Some(Ordering::Equal) => {
                            (&c.left, &c.right) < (&candidates[bi].left, &candidates[bi].right)
                        }
                        _ => false,
                    },
                };
                if better {
                    best = Some((i, s));
                }
            }
        }
        let accepted = best.filter(|&(_, s)| s < flat_score).map(|(i, _)| i);
        for (i, c) in candidates.iter().enumerate() {
            let label = format!(
                "{} | {}",
                c.left.iter().map(|&p| set_names[p].as_str()).collect::<Vec<_>>().join("+"),
                c.right.iter().map(|&p| set_names[p].as_str()).collect::<Vec<_>>().join("+")
            );
            let (loglik, sc, decision) = match &c.result {
                Ok(ll) => {
                    let d = if accepted == Some(i) {
                        Decision::Accepted
                    } else if best.map(|b| b.0) == Some(i) {
                        Decision::NotFavored
                    } else {
                        Decision::Rejected
                    };
                    (Some(*ll), Some(score(*ll, p_of(c), n, criterion)), d)
                }
                Err(e) => {
                    log::debug!("candidate {label} infeasible: {e}");
                    (None, None, Decision::Infeasible)
                }
            };
            self.trace.records.push(TraceRecord {
                depth,
                node: set_names.clone(),
                candidate: label,
                loglik,
                p_count: p_of(c),
                score: sc,
                decision,
            });
        }

        match accepted {
            None => Ok(self.flat_node(set)),
            Some(i) => {
                let left: Vec<usize> = candidates[i].left.iter().map(|&p| set[p]).collect();
                let right: Vec<usize> = candidates[i].right.iter().map(|&p| set[p]).collect();
                let children = vec![self.subtree(&left, depth + 1)?, self.subtree(&right, depth + 1)?];
                Ok(TreeNodeSpec::node(set_names.join("+"), children))
            }
        }
    }
}

fn fit_loglik(rows: &[Vec<f64>], opts: &FitOptions) -> Result<f64> {
    let stats = SuffStats::from_rows(rows)?;
    Ok(dd_mle_stats(&stats, opts)?.loglik)
}

/// Log-likelihood of subcomposition rows under a root split into `left`
/// and `right`, each side flat.
fn split_loglik(rows: &[Vec<f64>], left: &[usize], right: &[usize], opts: &FitOptions) -> Result<f64> {
    let mut root_rows = Vec::with_capacity(rows.len());
    let mut left_rows = Vec::new();
    let mut right_rows = Vec::new();
    let mut jacobian = 0.0;
    for x in rows {
        let nl: f64 = left.iter().map(|&j| x[j]).sum();
        let nr: f64 = right.iter().map(|&j| x[j]).sum();
        root_rows.push(vec![nl, nr]);
        if left.len() > 1 {
            left_rows.push(left.iter().map(|&j| x[j] / nl).collect::<Vec<_>>());
            jacobian += (left.len() as f64 - 1.0) * nl.ln();
        }
        if right.len() > 1 {
            right_rows.push(right.iter().map(|&j| x[j] / nr).collect::<Vec<_>>());
            jacobian += (right.len() as f64 - 1.0) * nr.ln();
        }
    }
    let mut ll = fit_loglik(&root_rows, opts)?;
    if left.len() > 1 {
        ll += fit_loglik(&left_rows, opts)?;
    }
    if right.len() > 1 {
        ll += fit_loglik(&right_rows, opts)?;
    }
    Ok(ll - jacobian)
}

// Candidates for wide nodes: average-linkage agglomeration on the
// correlation of the parts down to two clusters, plus every one-vs-rest split.
fn greedy_partitions(rows: &[Vec<f64>], m: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let names: Vec<String> = (0..m).map(|i| i.to_string()).collect();
    let corr = correlation_of_rows(&names, rows).ok();
    let r = |i: usize, j: usize| corr.as_ref().and_then(|c| c.get(i, j)).unwrap_or(0.0);
    let mut clusters: Vec<Vec<usize>> = (0..m).map(|i| vec![i]).collect();
    while clusters.len() > 2 {
        let mut best = (0, 1, f64::NEG_INFINITY);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let total: f64 = clusters[a]
                    .iter()
                    .flat_map(|&i| clusters[b].iter().map(move |&j| (i, j)))
                    .map(|(i, j)| r(i, j))
                    .sum();
                let avg = total / (clusters[a].len() * clusters[b].len()) as f64;
                if avg > best.2 {
                    best = (a, b, avg);
                }
            }
        }
        let merged = clusters.remove(best.1);
        clusters[best.0].extend(merged);
        clusters[best.0].sort_unstable();
    }
    let mut out = Vec::new();
    let mut push = |mut a: Vec<usize>, mut b: Vec<usize>| {
        a.sort_unstable();
        b.sort_unstable();
        if b[0] < a[0] {
            std::mem::swap(&mut a, &mut b);
        }
        if !out.contains(&(a.clone(), b.clone())) {
            out.push((a, b));
        }
    };
    push(clusters[0].clone(), clusters[1].clone());
    for i in 0..m {
        push(vec![i], (0..m).filter(|&j| j != i).collect());
    }
    out
}
