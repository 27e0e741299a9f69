//! Nested Dirichlet distributions.
//!
//! A [`Tree`] groups the components under interior nodes. Every interior
//! node's children subtotals, divided by the node's own subtotal, form a
//! subcomposition (a *layer*). Under a nested Dirichlet the layers are
//! independent Dirichlet vectors, so densities, moments and fits all
//! factor over interior nodes.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dirichlet::{
    dd_log_density, dd_mle_stats, DdFit, DirichletParams, FitOptions, MeanPrecision, SuffStats,
};
use crate::error::{Error, Result};
use crate::simplex::{ComponentSchema, Panel};
use crate::special::ln_multivariate_beta;

pub type NodeId = usize;

/// JSON form of a tree: nested `{name, children, alpha?}` objects. Leaves
/// have no children and are named after schema components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNodeSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<TreeNodeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl TreeNodeSpec {
    pub fn leaf(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            children: Vec::new(),
            alpha: None,
        }
    }

    pub fn node(name: impl Into<String>, children: Vec<TreeNodeSpec>) -> Self {
        Self {
            name: name.into(),
            children,
            alpha: None,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeViolation {
    #[error("component {0:?} appears more than once")]
    DuplicateLeaf(String),
    #[error("component {0:?} is missing from the tree")]
    MissingComponent(String),
    #[error("leaf {0:?} is not a schema component")]
    UnknownComponent(String),
    #[error("interior node {0:?} has a single child")]
    UnaryNode(String),
    #[error("root must be an interior node")]
    RootIsLeaf,
    #[error("interior node name {0:?} is used more than once")]
    DuplicateNodeName(String),
    #[error("{count} interior nodes exceed the maximum {max}")]
    TooManyInteriorNodes { count: usize, max: usize },
}

/// Checks a tree description against a component schema.
pub fn validate_tree(spec: &TreeNodeSpec, schema: &ComponentSchema) -> Result<(), Vec<TreeViolation>> {
    let mut violations = Vec::new();
    if spec.is_leaf() {
        violations.push(TreeViolation::RootIsLeaf);
    }
    let mut leaves: BTreeMap<&str, usize> = BTreeMap::new();
    let mut interior_names: BTreeMap<&str, usize> = BTreeMap::new();
    let mut interior = 0usize;
    let mut stack = vec![spec];
    while let Some(n) = stack.pop() {
        if n.is_leaf() {
            *leaves.entry(n.name.as_str()).or_default() += 1;
        } else {
            interior += 1;
            *interior_names.entry(n.name.as_str()).or_default() += 1;
            if n.children.len() == 1 {
                violations.push(TreeViolation::UnaryNode(n.name.clone()));
            }
            stack.extend(n.children.iter().rev());
        }
    }
    for (name, count) in &leaves {
        if schema.index_of(name).is_none() {
            violations.push(TreeViolation::UnknownComponent(name.to_string()));
        } else if *count > 1 {
            violations.push(TreeViolation::DuplicateLeaf(name.to_string()));
        }
    }
    for c in schema.names() {
        if !leaves.contains_key(c.as_str()) {
            violations.push(TreeViolation::MissingComponent(c.clone()));
        }
    }
    for (name, count) in &interior_names {
        if *count > 1 || schema.index_of(name).is_some() {
            violations.push(TreeViolation::DuplicateNodeName(name.to_string()));
        }
    }
    let max = schema.len().saturating_sub(1);
    if interior > max {
        violations.push(TreeViolation::TooManyInteriorNodes {
            count: interior,
            max,
        });
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    /// Schema index for leaves.
    pub component: Option<usize>,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Validated nesting structure. Nodes are stored in pre-order with the root
/// at index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
    components: Vec<String>,
    leaf_of: Vec<NodeId>,
    interior: Vec<NodeId>,
}

impl Tree {
    pub fn from_spec(spec: &TreeNodeSpec, schema: &ComponentSchema) -> Result<Self> {
        validate_tree(spec, schema).map_err(Error::InvalidTree)?;
        let mut nodes = Vec::new();
        fn push(spec: &TreeNodeSpec, parent: Option<NodeId>, schema: &ComponentSchema, nodes: &mut Vec<Node>) -> NodeId {
            let id = nodes.len();
            nodes.push(Node {
                name: spec.name.clone(),
                parent,
                children: Vec::new(),
                component: if spec.is_leaf() { schema.index_of(&spec.name) } else { None },
            });
            for c in &spec.children {
                let cid = push(c, Some(id), schema, nodes);
                nodes[id].children.push(cid);
            }
            id
        }
        push(spec, None, schema, &mut nodes);
        let mut leaf_of = vec![0; schema.len()];
        let mut interior = Vec::new();
        for (id, n) in nodes.iter().enumerate() {
            match n.component {
                Some(j) => leaf_of[j] = id,
                None => interior.push(id),
            }
        }
        Ok(Self {
            nodes,
            components: schema.names().to_vec(),
            leaf_of,
            interior,
        })
    }

    /// Root with every component as a direct child: the plain Dirichlet.
    pub fn flat(schema: &ComponentSchema) -> Self {
        let spec = TreeNodeSpec::node(
            "root",
            schema.names().iter().map(TreeNodeSpec::leaf).collect(),
        );
        Self::from_spec(&spec, schema).expect("flat tree is always valid")
    }

    pub fn schema(&self) -> ComponentSchema {
        ComponentSchema::new(self.components.clone()).expect("tree built from a valid schema")
    }

    pub fn components(&self) -> &[String] {
        &self.components
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Interior nodes (root included) in pre-order.
    pub fn interior_nodes(&self) -> &[NodeId] {
        &self.interior
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn leaf_node(&self, component: usize) -> NodeId {
        self.leaf_of[component]
    }

    pub fn is_flat(&self) -> bool {
        self.interior.len() == 1
    }

    /// Node ids from the root down to the leaf of `component`.
    pub fn path_to(&self, component: usize) -> Vec<NodeId> {
        let mut path = vec![self.leaf_of[component]];
        while let Some(p) = self.nodes[*path.last().unwrap()].parent {
            path.push(p);
        }
        path.reverse();
        path
    }

    /// Schema indices of the leaves under `id`, in tree order.
    pub fn leaves_under(&self, id: NodeId) -> Vec<usize> {
        let n = &self.nodes[id];
        match n.component {
            Some(j) => vec![j],
            None => n.children.iter().flat_map(|&c| self.leaves_under(c)).collect(),
        }
    }

    fn subtree_label(&self, id: NodeId) -> String {
        self.leaves_under(id)
            .iter()
            .map(|&j| self.components[j].as_str())
            .collect::<Vec<_>>()
            .join("+")
    }

    /// Human label of the split at an interior node: `Root` for the root,
    /// `a & b` when all children are leaves, otherwise the children's leaf
    /// sets joined by `, ` (e.g. `hr+triple, double`).
    pub fn layer_label(&self, id: NodeId) -> String {
        if id == self.root() {
            return "Root".to_string();
        }
        let n = &self.nodes[id];
        let sep = if n.children.iter().all(|&c| self.nodes[c].is_leaf()) {
            " & "
        } else {
            ", "
        };
        n.children
            .iter()
            .map(|&c| self.subtree_label(c))
            .collect::<Vec<_>>()
            .join(sep)
    }

    /// Leaf sets of the non-root interior nodes; two trees have the same
    /// topology iff these sets are equal.
    pub fn clusters(&self) -> BTreeSet<Vec<usize>> {
        self.interior
            .iter()
            .filter(|&&id| id != self.root())
            .map(|&id| {
                let mut v = self.leaves_under(id);
                v.sort_unstable();
                v
            })
            .collect()
    }

    pub fn same_topology(&self, other: &Tree) -> bool {
        self.components == other.components && self.clusters() == other.clusters()
    }

    pub fn to_spec(&self) -> TreeNodeSpec {
        self.spec_of(self.root(), None)
    }

    fn spec_of(&self, id: NodeId, alpha: Option<&[f64]>) -> TreeNodeSpec {
        let n = &self.nodes[id];
        TreeNodeSpec {
            name: n.name.clone(),
            children: n.children.iter().map(|&c| self.spec_of(c, alpha)).collect(),
            alpha: match (alpha, n.parent) {
                (Some(a), Some(_)) => Some(a[id]),
                _ => None,
            },
        }
    }

    /// Subtotal of every node for one composition, indexed by node id.
    pub fn subtotals(&self, x: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.nodes.len()];
        for id in (0..self.nodes.len()).rev() {
            let n = &self.nodes[id];
            s[id] = match n.component {
                Some(j) => x[j],
                None => n.children.iter().map(|&c| s[c]).sum(),
            };
        }
        s
    }

    /// Branch proportions of `x` at interior node `id`.
    pub fn branch_proportions(&self, x: &[f64], id: NodeId) -> Vec<f64> {
        let s = self.subtotals(x);
        self.nodes[id].children.iter().map(|&c| s[c] / s[id]).collect()
    }

    /// `sum over interior nodes of (children - 1) * ln(subtotal)`, the
    /// change-of-variables term between leaf and layer coordinates.
    pub fn log_jacobian(&self, x: &[f64]) -> f64 {
        let s = self.subtotals(x);
        self.interior
            .iter()
            .map(|&id| (self.nodes[id].children.len() as f64 - 1.0) * s[id].ln())
            .sum()
    }
}

/// One positive parameter per edge, indexed by child node id.
#[derive(Debug, Clone, PartialEq)]
pub struct NddParams {
    tree: Tree,
    alpha: Vec<f64>,
}

impl NddParams {
    /// `alpha[id]` is the parameter on the edge into node `id`; the root
    /// entry is ignored.
    pub fn new(tree: Tree, mut alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() != tree.len() {
            return Err(Error::InvalidParams(format!(
                "expected {} node parameters, got {}",
                tree.len(),
                alpha.len()
            )));
        }
        alpha[tree.root()] = 0.0;
        for (id, a) in alpha.iter().enumerate().skip(1) {
            if !(a.is_finite() && *a > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "edge into {:?} has alpha {a}",
                    tree.node(id).name
                )));
            }
        }
        Ok(Self { tree, alpha })
    }

    /// Reads `alpha` from every non-root node of a tree description.
    pub fn from_spec(spec: &TreeNodeSpec, schema: &ComponentSchema) -> Result<Self> {
        let tree = Tree::from_spec(spec, schema)?;
        let mut alpha = Vec::with_capacity(tree.len());
        let mut stack = vec![spec];
        while let Some(n) = stack.pop() {
            alpha.push(n.alpha.unwrap_or(f64::NAN));
            stack.extend(n.children.iter().rev());
        }
        Self::new(tree, alpha)
    }

    /// Builds edge parameters from per-layer `(mean, precision)`.
    pub fn from_layers(tree: Tree, layers: &[(NodeId, MeanPrecision)]) -> Result<Self> {
        let mut alpha = vec![f64::NAN; tree.len()];
        for (id, mp) in layers {
            let children = &tree.node(*id).children;
            if children.len() != mp.mean.len() {
                return Err(Error::InvalidParams(format!(
                    "layer {:?} has {} children, mean has {} parts",
                    tree.node(*id).name,
                    children.len(),
                    mp.mean.len()
                )));
            }
            for (&c, a) in children.iter().zip(mp.alpha()) {
                alpha[c] = a;
            }
        }
        Self::new(tree, alpha)
    }

    /// Plain Dirichlet as a flat tree.
    pub fn flat(schema: &ComponentSchema, p: &DirichletParams) -> Result<Self> {
        let tree = Tree::flat(schema);
        let mut alpha = vec![f64::NAN];
        alpha.extend_from_slice(p.alpha());
        Self::new(tree, alpha)
    }

    pub fn tree(&self) -> &Tree {
        &self.tree
    }

    pub fn edge_alpha(&self, id: NodeId) -> f64 {
        self.alpha[id]
    }

    pub fn alpha_by_node(&self) -> &[f64] {
        &self.alpha
    }

    pub fn parameter_count(&self) -> usize {
        self.tree.edge_count()
    }

    /// Dirichlet parameters of the layer at interior node `id`.
    pub fn layer_params(&self, id: NodeId) -> DirichletParams {
        DirichletParams::new(
            self.tree
                .node(id)
                .children
                .iter()
                .map(|&c| self.alpha[c])
                .collect(),
        )
        .expect("edge parameters validated at construction")
    }

    pub fn layer_means(&self) -> NddMeanParams {
        NddMeanParams {
            layers: self
                .tree
                .interior_nodes()
                .iter()
                .map(|&id| LayerMean {
                    node: id,
                    label: self.tree.layer_label(id),
                    params: self.layer_params(id).to_mean_precision(),
                })
                .collect(),
        }
    }

    pub fn to_spec(&self) -> TreeNodeSpec {
        self.tree.spec_of(self.tree.root(), Some(&self.alpha))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMean {
    pub node: NodeId,
    pub label: String,
    pub params: MeanPrecision,
}

/// Per-layer mean vectors and precisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NddMeanParams {
    pub layers: Vec<LayerMean>,
}

/// Log density under a nested Dirichlet:
/// `sum_leaves (a_j - 1) ln x_j + sum_nonroot_interior (a_v - sum_children a_c) ln N_v
///  - sum_interior ln B(children a)`.
pub fn ndd_log_density(x: &[f64], p: &NddParams) -> Result<f64> {
    let tree = p.tree();
    if x.len() != tree.k() {
        return Err(Error::InvalidParams(format!(
            "point has {} parts, tree has {} components",
            x.len(),
            tree.k()
        )));
    }
    if let Some(j) = x.iter().position(|&v| !(v.is_finite() && v > 0.0)) {
        return Err(Error::InvalidComposition(format!(
            "part {j} = {} is not interior",
            x[j]
        )));
    }
    let s = tree.subtotals(x);
    let mut acc = 0.0;
    for (id, n) in tree.nodes().iter().enumerate() {
        match n.component {
            Some(j) => acc += (p.alpha[id] - 1.0) * x[j].ln(),
            None => {
                let child_alpha: Vec<f64> = n.children.iter().map(|&c| p.alpha[c]).collect();
                acc -= ln_multivariate_beta(&child_alpha);
                if n.parent.is_some() {
                    acc += (p.alpha[id] - child_alpha.iter().sum::<f64>()) * s[id].ln();
                }
            }
        }
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NddMoments {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

impl NddMoments {
    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        self.covariance[i][j] / (self.covariance[i][i] * self.covariance[j][j]).sqrt()
    }
}

/// Mean and covariance of the leaves, from per-layer Dirichlet moments and
/// independence across layers.
pub fn ndd_moments(p: &NddParams) -> NddMoments {
    let tree = p.tree();
    let k = tree.k();
    let n = tree.len();
    // first and second moments of the branch proportion on each edge
    let mut e1 = vec![1.0; n];
    let mut e2 = vec![1.0; n];
    for &v in tree.interior_nodes() {
        let a: f64 = tree.node(v).children.iter().map(|&c| p.alpha[c]).sum();
        for &c in &tree.node(v).children {
            let ac = p.alpha[c];
            e1[c] = ac / a;
            e2[c] = ac * (ac + 1.0) / (a * (a + 1.0));
        }
    }
    let pair = |c: NodeId, d: NodeId| {
        let parent = tree.node(c).parent.expect("non-root");
        let a: f64 = tree.node(parent).children.iter().map(|&x| p.alpha[x]).sum();
        p.alpha[c] * p.alpha[d] / (a * (a + 1.0))
    };
    let paths: Vec<Vec<NodeId>> = (0..k).map(|j| tree.path_to(j)).collect();
    let mean: Vec<f64> = paths
        .iter()
        .map(|path| path[1..].iter().map(|&e| e1[e]).product())
        .collect();
    let mut covariance = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i..k {
            let (pi, pj) = (&paths[i], &paths[j]);
            let shared = pi.iter().zip(pj).take_while(|(a, b)| a == b).count();
            let second = if i == j {
                pi[1..].iter().map(|&e| e2[e]).product::<f64>()
            } else {
                let above: f64 = pi[1..shared].iter().map(|&e| e2[e]).product();
                let split = pair(pi[shared], pj[shared]);
                let below_i: f64 = pi[shared + 1..].iter().map(|&e| e1[e]).product();
                let below_j: f64 = pj[shared + 1..].iter().map(|&e| e1[e]).product();
                above * split * below_i * below_j
            };
            let c = second - mean[i] * mean[j];
            covariance[i][j] = c;
            covariance[j][i] = c;
        }
    }
    NddMoments { mean, covariance }
}

/// Subcomposition rows at one interior node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerData {
    pub node: NodeId,
    pub label: String,
    pub child_count: usize,
    pub rows: Vec<Vec<f64>>,
    /// Index of the source observation for each entry of `rows`.
    pub row_ids: Vec<usize>,
    /// Source observations dropped from this layer because the node
    /// subtotal was zero or a branch proportion was zero.
    pub excluded: Vec<usize>,
}

impl LayerData {
    pub fn n_used(&self) -> usize {
        self.rows.len()
    }

    /// Restricts to the rows whose source ids satisfy `keep`.
    pub fn select(&self, keep: impl Fn(usize) -> bool) -> LayerData {
        let mut rows = Vec::new();
        let mut row_ids = Vec::new();
        for (r, &id) in self.rows.iter().zip(&self.row_ids) {
            if keep(id) {
                rows.push(r.clone());
                row_ids.push(id);
            }
        }
        LayerData {
            node: self.node,
            label: self.label.clone(),
            child_count: self.child_count,
            rows,
            row_ids,
            excluded: self.excluded.iter().copied().filter(|&i| keep(i)).collect(),
        }
    }
}

/// Splits compositions into per-layer branch proportions without checking
/// how many rows each layer keeps.
pub fn layers_from_rows<R: AsRef<[f64]>>(rows: &[R], tree: &Tree) -> Vec<LayerData> {
    let mut layers: Vec<LayerData> = tree
        .interior_nodes()
        .iter()
        .map(|&id| LayerData {
            node: id,
            label: tree.layer_label(id),
            child_count: tree.node(id).children.len(),
            rows: Vec::new(),
            row_ids: Vec::new(),
            excluded: Vec::new(),
        })
        .collect();
    for (row_id, x) in rows.iter().enumerate() {
        let s = tree.subtotals(x.as_ref());
        for layer in layers.iter_mut() {
            let total = s[layer.node];
            let b: Vec<f64> = tree
                .node(layer.node)
                .children
                .iter()
                .map(|&c| s[c] / total)
                .collect();
            if total > 0.0 && b.iter().all(|&v| v > 0.0) {
                layer.rows.push(b);
                layer.row_ids.push(row_id);
            } else {
                layer.excluded.push(row_id);
            }
        }
    }
    layers
}

/// Layer datasets of a panel, from smoothed counts.
pub fn to_layers(panel: &Panel, tree: &Tree, smoothing: f64) -> Result<Vec<LayerData>> {
    check_tree_schema(tree, &panel.schema)?;
    let rows = panel.compositions(smoothing)?;
    let layers = layers_from_rows(&rows, tree);
    for l in &layers {
        if l.n_used() < 2 {
            return Err(Error::InsufficientData(format!(
                "layer {:?} has {} usable rows",
                l.label,
                l.n_used()
            ))
            .in_layer(&l.label));
        }
    }
    Ok(layers)
}

pub(crate) fn check_tree_schema(tree: &Tree, schema: &ComponentSchema) -> Result<()> {
    if tree.components() != schema.names() {
        return Err(Error::SchemaMismatch(format!(
            "tree components {:?} differ from panel schema {:?}",
            tree.components(),
            schema.names()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFit {
    pub node: NodeId,
    pub label: String,
    pub n_used: usize,
    pub n_excluded: usize,
    pub fit: DdFit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NddFit {
    pub tree: Tree,
    pub layers: Vec<LayerFit>,
    /// Sum of the per-layer Dirichlet log-likelihoods.
    pub layer_loglik: f64,
    /// Log-likelihood of the leaf compositions (layer sum minus the
    /// change-of-variables term); `None` when some layer excluded rows.
    pub loglik: Option<f64>,
}

impl NddFit {
    pub fn mean_params(&self) -> NddMeanParams {
        NddMeanParams {
            layers: self
                .layers
                .iter()
                .map(|l| LayerMean {
                    node: l.node,
                    label: l.label.clone(),
                    params: l.fit.params.clone(),
                })
                .collect(),
        }
    }

    pub fn params(&self) -> Result<NddParams> {
        let layers: Vec<(NodeId, MeanPrecision)> = self
            .layers
            .iter()
            .map(|l| (l.node, l.fit.params.clone()))
            .collect();
        NddParams::from_layers(self.tree.clone(), &layers)
    }

    pub fn parameter_count(&self) -> usize {
        self.tree.edge_count()
    }

    pub fn to_model(&self) -> Result<FittedModel> {
        Ok(FittedModel {
            format_version: crate::FORMAT_VERSION,
            tree: self.params()?.to_spec(),
            layers: self
                .layers
                .iter()
                .map(|l| FittedLayer {
                    node: self.tree.node(l.node).name.clone(),
                    label: l.label.clone(),
                    pi: l.fit.params.mean.clone(),
                    precision: l.fit.params.precision,
                    loglik: l.fit.loglik,
                    n_used: l.n_used,
                })
                .collect(),
            layer_loglik: self.layer_loglik,
            loglik: self.loglik,
        })
    }
}

/// Fitted-model JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub format_version: u32,
    pub tree: TreeNodeSpec,
    pub layers: Vec<FittedLayer>,
    pub layer_loglik: f64,
    pub loglik: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedLayer {
    pub node: String,
    pub label: String,
    pub pi: Vec<f64>,
    pub precision: f64,
    pub loglik: f64,
    pub n_used: usize,
}

/// Independent Dirichlet fits of each layer.
pub fn ndd_fit_layers(layers: &[LayerData], tree: &Tree, opts: &FitOptions) -> Result<Vec<LayerFit>> {
    layers
        .par_iter()
        .map(|l| {
            let stats = SuffStats::from_rows(&l.rows).map_err(|e| e.in_layer(&l.label))?;
            let fit = dd_mle_stats(&stats, opts).map_err(|e| e.in_layer(&l.label))?;
            Ok(LayerFit {
                node: l.node,
                label: tree.layer_label(l.node),
                n_used: l.n_used(),
                n_excluded: l.excluded.len(),
                fit,
            })
        })
        .collect()
}

/// Fits a nested Dirichlet to already-closed compositions.
pub fn ndd_fit_rows<R: AsRef<[f64]> + Sync>(rows: &[R], tree: &Tree, opts: &FitOptions) -> Result<NddFit> {
    let layers = layers_from_rows(rows, tree);
    for l in &layers {
        if l.n_used() < 2 {
            return Err(Error::InsufficientData(format!("{} usable rows", l.n_used())).in_layer(&l.label));
        }
    }
    let fits = ndd_fit_layers(&layers, tree, opts)?;
    let layer_loglik: f64 = fits.iter().map(|f| f.fit.loglik).sum();
    let loglik = if layers.iter().all(|l| l.excluded.is_empty()) {
        let jac: f64 = rows.iter().map(|x| tree.log_jacobian(x.as_ref())).sum();
        Some(layer_loglik - jac)
    } else {
        None
    };
    Ok(NddFit {
        tree: tree.clone(),
        layers: fits,
        layer_loglik,
        loglik,
    })
}

pub fn ndd_fit(panel: &Panel, tree: &Tree, smoothing: f64) -> Result<NddFit> {
    check_tree_schema(tree, &panel.schema)?;
    let rows = panel.compositions(smoothing)?;
    ndd_fit_rows(&rows, tree, &FitOptions::default())
}

/// Layer log-density of the subcomposition at `id`, used when checking the
/// factorization against [`ndd_log_density`].
pub fn layer_log_density(x: &[f64], p: &NddParams, id: NodeId) -> Result<f64> {
    dd_log_density(&p.tree().branch_proportions(x, id), &p.layer_params(id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dirichlet::dd_mle;
    use crate::simplex::{OutcomeCounts, PanelRow, RowMeta};

    fn schema5() -> ComponentSchema {
        ComponentSchema::new(["x1", "x2", "x3", "x4", "x5"]).unwrap()
    }

    fn two_cluster() -> TreeNodeSpec {
        TreeNodeSpec::node(
            "root",
            vec![
                TreeNodeSpec::node(
                    "N1",
                    vec![TreeNodeSpec::leaf("x1"), TreeNodeSpec::leaf("x2"), TreeNodeSpec::leaf("x3")],
                ),
                TreeNodeSpec::node("N2", vec![TreeNodeSpec::leaf("x4"), TreeNodeSpec::leaf("x5")]),
            ],
        )
    }

    #[test]
    fn flat_tree_validates() {
        let s = schema5();
        let t = Tree::flat(&s);
        assert!(t.is_flat());
        assert_eq!(t.edge_count(), 5);
        assert!(validate_tree(&t.to_spec(), &s).is_ok());
    }

    #[test]
    fn two_cluster_validates_and_counts_parameters() {
        let s = schema5();
        assert!(validate_tree(&two_cluster(), &s).is_ok());
        let t = Tree::from_spec(&two_cluster(), &s).unwrap();
        // k + interior nodes excluding root
        assert_eq!(t.edge_count(), 5 + 2);
        assert_eq!(t.interior_nodes().len(), 3);
    }

    #[test]
    fn violations_are_reported() {
        let s = schema5();
        let mut missing = two_cluster();
        missing.children[1].children.pop();
        let v = validate_tree(&missing, &s).unwrap_err();
        assert!(v.contains(&TreeViolation::MissingComponent("x5".into())));
        assert!(v.contains(&TreeViolation::UnaryNode("N2".into())));

        let mut dup = two_cluster();
        dup.children[1].children[1].name = "x1".into();
        let v = validate_tree(&dup, &s).unwrap_err();
        assert!(v.contains(&TreeViolation::DuplicateLeaf("x1".into())));
        assert!(v.contains(&TreeViolation::MissingComponent("x5".into())));

        let mut unknown = two_cluster();
        unknown.children[0].children[0].name = "zz".into();
        let v = validate_tree(&unknown, &s).unwrap_err();
        assert!(v.contains(&TreeViolation::UnknownComponent("zz".into())));

        assert_eq!(
            validate_tree(&TreeNodeSpec::leaf("x1"), &s).unwrap_err()[0],
            TreeViolation::RootIsLeaf
        );
    }

    #[test]
    fn layer_labels_follow_split_names() {
        let names = ["HR", "T", "D", "S", "Out", "Other"];
        let s = ComponentSchema::new(names).unwrap();
        let t = Tree::from_spec(&crate::baseball_tree_spec(names), &s).unwrap();
        let labels: Vec<String> = t.interior_nodes().iter().map(|&id| t.layer_label(id)).collect();
        assert_eq!(labels, vec!["Root", "HR+T, D", "HR & T", "Out, S+Other", "S & Other"]);
    }

    #[test]
    fn layers_of_counts_1_to_5() {
        let s = schema5();
        let t = Tree::from_spec(&two_cluster(), &s).unwrap();
        let panel = Panel::new(
            s,
            vec![
                PanelRow {
                    meta: RowMeta::default(),
                    group: "a".into(),
                    counts: OutcomeCounts(vec![1, 2, 3, 4, 5]),
                };
                2
            ],
        )
        .unwrap();
        let layers = to_layers(&panel, &t, 0.0).unwrap();
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-15);
        assert!(close(&layers[0].rows[0], &[6.0 / 15.0, 9.0 / 15.0]));
        assert!(close(&layers[1].rows[0], &[1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]));
        assert!(close(&layers[2].rows[0], &[4.0 / 9.0, 5.0 / 9.0]));
    }

    #[test]
    fn boundary_rows_are_excluded_per_layer() {
        let s = schema5();
        let t = Tree::from_spec(&two_cluster(), &s).unwrap();
        let rows = vec![
            vec![0.5, 0.0, 0.0, 0.25, 0.25],
            vec![0.1, 0.2, 0.2, 0.25, 0.25],
            vec![0.0, 0.0, 0.0, 0.5, 0.5],
        ];
        let layers = layers_from_rows(&rows, &t);
        // root: row 2 has N1 = 0
        assert_eq!(layers[0].excluded, vec![2]);
        // N1: row 0 has all N1 mass in x1, row 2 has zero subtotal
        assert_eq!(layers[1].excluded, vec![0, 2]);
        assert!(layers[2].excluded.is_empty());
    }

    #[test]
    fn uniform_counts_give_uniform_layers() {
        let s = schema5();
        let t = Tree::from_spec(&two_cluster(), &s).unwrap();
        let layers = layers_from_rows(&[vec![0.2; 5]], &t);
        for l in &layers[1..] {
            for b in &l.rows[0] {
                assert!((b - 1.0 / l.child_count as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn too_few_rows_is_an_error() {
        let s = schema5();
        let t = Tree::from_spec(&two_cluster(), &s).unwrap();
        let panel = Panel::new(
            s,
            vec![PanelRow {
                meta: RowMeta::default(),
                group: "a".into(),
                counts: OutcomeCounts(vec![1, 2, 3, 4, 5]),
            }],
        )
        .unwrap();
        assert!(matches!(to_layers(&panel, &t, 0.5), Err(Error::Layer { .. })));
    }

    #[test]
    fn flat_density_is_dirichlet() {
        let s = schema5();
        let dd = DirichletParams::new(vec![1.5, 2.0, 0.7, 3.0, 1.1]).unwrap();
        let p = NddParams::flat(&s, &dd).unwrap();
        let x = [0.1, 0.2, 0.3, 0.15, 0.25];
        let a = ndd_log_density(&x, &p).unwrap();
        let b = dd_log_density(&x, &dd).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn path_product_mean() {
        // p_1 = pi_1 * pi_11 with both 1/2
        let s = ComponentSchema::new(["x1", "x2", "x3", "x4"]).unwrap();
        let spec = TreeNodeSpec::node(
            "root",
            vec![
                TreeNodeSpec::node("N1", vec![TreeNodeSpec::leaf("x1").with_alpha(3.0), TreeNodeSpec::leaf("x2").with_alpha(3.0)])
                    .with_alpha(2.0),
                TreeNodeSpec::node("N2", vec![TreeNodeSpec::leaf("x3").with_alpha(1.0), TreeNodeSpec::leaf("x4").with_alpha(4.0)])
                    .with_alpha(2.0),
            ],
        );
        let p = NddParams::from_spec(&spec, &s).unwrap();
        let m = ndd_moments(&p);
        assert!((m.mean[0] - 0.25).abs() < 1e-15);
        assert!((m.mean.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(m.covariance[0][1] > 0.0, "siblings under a loose root co-vary");
    }

    #[test]
    fn flat_fit_matches_dd_mle() {
        let s = ComponentSchema::new(["a", "b", "c"]).unwrap();
        let rows = vec![
            vec![0.2, 0.3, 0.5],
            vec![0.1, 0.6, 0.3],
            vec![0.4, 0.4, 0.2],
            vec![0.3, 0.3, 0.4],
        ];
        let fit = ndd_fit_rows(&rows, &Tree::flat(&s), &FitOptions::default()).unwrap();
        let dd = dd_mle(&rows).unwrap();
        assert_eq!(fit.layers[0].fit, dd);
        assert!((fit.loglik.unwrap() - dd.loglik).abs() < 1e-12);
    }

    #[test]
    fn spec_round_trip_keeps_alpha() {
        let s = schema5();
        let mut spec = two_cluster();
        let mut v = 1.0;
        fn set(n: &mut TreeNodeSpec, v: &mut f64, root: bool) {
            if !root {
                n.alpha = Some(*v);
                *v += 0.5;
            }
            for c in &mut n.children {
                set(c, v, false);
            }
        }
        set(&mut spec, &mut v, true);
        let p = NddParams::from_spec(&spec, &s).unwrap();
        assert_eq!(p.to_spec(), spec);
        let json = serde_json::to_string(&spec).unwrap();
        let back: TreeNodeSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
