//! Random generation and Monte-Carlo studies.
//!
//! Every replication draws from its own ChaCha stream derived from one
//! master seed, so study results do not depend on the number of worker
//! threads or the order in which replications finish.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dirichlet::{DirichletParams, MeanPrecision};
use crate::error::{Error, Result};
use crate::lrt::{overall_lrt_layers, Grouping};
use crate::ndd::{layers_from_rows, NddParams, NodeId, Tree, TreeNodeSpec};
use crate::simplex::{ComponentSchema, Composition, RAW14_COMPONENTS};
use crate::special::gamma_p;

/// Generator for stream `stream` of master seed `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// ln of a Gamma(shape, 1) variate. Small shapes go through
// G(a) = G(a + 1) U^(1/a) in log space so the draw cannot underflow.
fn ln_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        Gamma::new(shape, 1.0).expect("positive shape").sample(rng).ln()
    } else {
        let g = Gamma::new(shape + 1.0, 1.0).expect("positive shape").sample(rng);
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        g.ln() + u.ln() / shape
    }
}

/// One Dirichlet draw by gamma normalization.
pub fn draw_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let logs: Vec<f64> = alpha.iter().map(|&a| ln_gamma_variate(a, rng)).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// One nested Dirichlet draw: independent layer draws multiplied down
/// each root-to-leaf path.
pub fn draw_ndd<R: Rng + ?Sized>(p: &NddParams, rng: &mut R) -> Vec<f64> {
    let tree = p.tree();
    let mut mass = vec![0.0; tree.len()];
    mass[tree.root()] = 1.0;
    for &v in tree.interior_nodes() {
        let b = draw_dirichlet(p.layer_params(v).alpha(), rng);
        for (&c, bc) in tree.node(v).children.iter().zip(b) {
            mass[c] = mass[v] * bc;
        }
    }
    let mut x: Vec<f64> = (0..tree.k()).map(|j| mass[tree.leaf_node(j)]).collect();
    let s: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= s);
    x
}

fn to_composition(x: Vec<f64>) -> Composition {
    Composition::new(x).expect("normalized draw is a composition")
}

pub fn sample_dirichlet(p: &DirichletParams, n: usize, seed: u64) -> Vec<Composition> {
    let mut rng = rng_for(seed, 0);
    (0..n)
        .map(|_| to_composition(draw_dirichlet(p.alpha(), &mut rng)))
        .collect()
}

pub fn sample_ndd(p: &NddParams, n: usize, seed: u64) -> Vec<Composition> {
    let mut rng = rng_for(seed, 0);
    (0..n).map(|_| to_composition(draw_ndd(p, &mut rng))).collect()
}

/// Moves the mean of one layer by `delta` (which must sum to zero),
/// keeping that layer's precision.
pub fn shift_layer_mean(p: &NddParams, node: NodeId, delta: &[f64]) -> Result<NddParams> {
    let tree = p.tree().clone();
    if tree.node(node).is_leaf() {
        return Err(Error::InvalidParams(format!("node {node} is a leaf")));
    }
    let layer = p.layer_params(node).to_mean_precision();
    if delta.len() != layer.mean.len() {
        return Err(Error::InvalidParams(format!(
            "shift has {} entries, layer has {} children",
            delta.len(),
            layer.mean.len()
        )));
    }
    if delta.iter().sum::<f64>().abs() > 1e-12 {
        return Err(Error::InvalidParams("mean shift must sum to zero".into()));
    }
    let mean: Vec<f64> = layer.mean.iter().zip(delta).map(|(m, d)| m + d).collect();
    let shifted = MeanPrecision::new(mean, layer.precision)?;
    let layers: Vec<(NodeId, MeanPrecision)> = tree
        .interior_nodes()
        .iter()
        .map(|&v| {
            let mp = if v == node {
                shifted.clone()
            } else {
                p.layer_params(v).to_mean_precision()
            };
            (v, mp)
        })
        .collect();
    NddParams::from_layers(tree, &layers)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    pub n: usize,
    /// Parameter of the edge above each non-root node, keyed by node name.
    pub alpha: BTreeMap<String, f64>,
}

impl GroupSpec {
    pub fn from_params(name: impl Into<String>, n: usize, p: &NddParams) -> Self {
        let tree = p.tree();
        let alpha = (0..tree.len())
            .filter(|&v| v != tree.root())
            .map(|v| (tree.node(v).name.clone(), p.edge_alpha(v)))
            .collect();
        Self {
            name: name.into(),
            n,
            alpha,
        }
    }

    fn params(&self, tree: &Tree) -> Result<NddParams> {
        let mut alpha = vec![0.0; tree.len()];
        for (v, a) in alpha.iter_mut().enumerate() {
            if v == tree.root() {
                continue;
            }
            let name = &tree.node(v).name;
            *a = *self.alpha.get(name).ok_or_else(|| {
                Error::Config(format!("group {:?} has no alpha for node {name:?}", self.name))
            })?;
        }
        if let Some(extra) = self
            .alpha
            .keys()
            .find(|k| !tree.nodes().iter().any(|n| &n.name == *k))
        {
            return Err(Error::Config(format!(
                "group {:?} names unknown node {extra:?}",
                self.name
            )));
        }
        NddParams::new(tree.clone(), alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub components: Vec<String>,
    pub tree: TreeNodeSpec,
    pub groups: Vec<GroupSpec>,
    pub replications: usize,
    pub level: f64,
    pub seed: u64,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!(
                "level must lie in (0, 1), got {}",
                self.level
            )));
        }
        if self.groups.len() < 2 {
            return Err(Error::Config("a study needs at least 2 groups".into()));
        }
        let mut names: Vec<&str> = self.groups.iter().map(|g| g.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("group names must be unique".into()));
        }
        if let Some(g) = self.groups.iter().find(|g| g.n < 2) {
            return Err(Error::Config(format!("group {:?} needs n >= 2", g.name)));
        }
        self.resolve().map(|_| ())
    }

    fn resolve(&self) -> Result<(Tree, Vec<NddParams>)> {
        let schema = ComponentSchema::new(self.components.iter().cloned())?;
        let tree = Tree::from_spec(&self.tree, &schema)?;
        let params = self
            .groups
            .iter()
            .map(|g| g.params(&tree))
            .collect::<Result<Vec<_>>>()?;
        Ok((tree, params))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub replications: usize,
    pub level: f64,
    pub seed: u64,
    /// Total degrees of freedom of the overall test.
    pub v: usize,
    pub rejections: usize,
    /// Replications whose test could not be computed.
    pub failures: usize,
    /// Rejections over successful replications.
    pub rejection_rate: f64,
    pub mc_se: f64,
    pub lambdas: Vec<Option<f64>>,
    pub p_values: Vec<Option<f64>>,
    pub failure_messages: Vec<String>,
}

impl StudyResult {
    /// Per-replication statistics as CSV.
    pub fn lambdas_csv(&self) -> String {
        let mut out = String::from("replication,lambda,p_value\n");
        for (i, (l, p)) in self.lambdas.iter().zip(&self.p_values).enumerate() {
            let f = |v: &Option<f64>| v.map_or(String::new(), |x| format!("{x:.10}"));
            out.push_str(&format!("{i},{},{}\n", f(l), f(p)));
        }
        out
    }
}

pub fn run_study(config: &StudyConfig) -> Result<StudyResult> {
    config.validate()?;
    let (tree, params) = config.resolve()?;
    let labels: Vec<&str> = config
        .groups
        .iter()
        .flat_map(|g| std::iter::repeat_n(g.name.as_str(), g.n))
        .collect();
    let grouping = Grouping::from_labels(&labels);

    let outcomes: Vec<Result<(f64, f64, usize)>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            let mut rng = rng_for(config.seed, rep as u64);
            let mut rows = Vec::with_capacity(labels.len());
            for (g, p) in config.groups.iter().zip(&params) {
                for _ in 0..g.n {
                    rows.push(draw_ndd(p, &mut rng));
                }
            }
            let layers = layers_from_rows(&rows, &tree);
            let res = overall_lrt_layers(&layers, &grouping)?;
            Ok((res.lambda, res.p_value, res.v))
        })
        .collect();

    let v = tree
        .interior_nodes()
        .iter()
        .map(|&id| crate::lrt::degrees_of_freedom(config.groups.len(), tree.node(id).children.len()))
        .sum();
    let mut lambdas = Vec::with_capacity(outcomes.len());
    let mut p_values = Vec::with_capacity(outcomes.len());
    let mut failure_messages = Vec::new();
    let mut rejections = 0;
    for o in outcomes {
        match o {
            Ok((l, p, _)) => {
                if p < config.level {
                    rejections += 1;
                }
                lambdas.push(Some(l));
                p_values.push(Some(p));
            }
            Err(e) => {
                failure_messages.push(e.to_string());
                lambdas.push(None);
                p_values.push(None);
            }
        }
    }
    let failures = failure_messages.len();
    let ok = config.replications - failures;
    let (rate, se) = if ok == 0 {
        (0.0, 0.0)
    } else {
        let r = rejections as f64 / ok as f64;
        (r, (r * (1.0 - r) / ok as f64).sqrt())
    };
    if failures > 0 {
        log::warn!("{failures} of {} replications failed", config.replications);
    }
    Ok(StudyResult {
        replications: config.replications,
        level: config.level,
        seed: config.seed,
        v,
        rejections,
        failures,
        rejection_rate: rate,
        mc_se: se,
        lambdas,
        p_values,
        failure_messages,
    })
}

/// Chi-square distribution function.
pub fn chi_square_cdf(x: f64, v: usize) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_p(v as f64 / 2.0, x / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

// Asymptotic Kolmogorov tail with the usual small-sample correction.
fn kolmogorov_q(d: f64, en: f64) -> f64 {
    let lambda = (en + 0.12 + 0.11 / en) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let term = sign * (-2.0 * (j as f64 * lambda).powi(2)).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov test against a continuous `cdf`.
pub fn ks_one_sample(sample: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    assert!(!sample.is_empty(), "empty sample");
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    KsResult {
        statistic: d,
        p_value: kolmogorov_q(d, n.sqrt()),
    }
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    assert!(!a.is_empty() && !b.is_empty(), "empty sample");
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    KsResult {
        statistic: d,
        p_value: kolmogorov_q(d, (na * nb / (na + nb)).sqrt()),
    }
}

/// Settings for a synthetic plate-appearance file in the 14-outcome layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPanelConfig {
    pub players: usize,
    pub seasons: Vec<i32>,
    pub min_pa: u64,
    pub max_pa: u64,
    pub seed: u64,
}

impl Default for SyntheticPanelConfig {
    fn default() -> Self {
        Self {
            players: 300,
            seasons: vec![2000, 2010],
            min_pa: 40,
            max_pa: 650,
            seed: 20_000,
        }
    }
}

/// Per-batter outcome model over (hr, triple, double, single, out, other)
/// on [`crate::baseball_tree_spec`], for age group 0 (young), 1 (middle)
/// or 2 (experienced). Hit power declines and walks rise with age.
pub fn baseball_params(age_group: usize) -> Result<NddParams> {
    if age_group > 2 {
        return Err(Error::InvalidParams(format!("age group {age_group} out of range")));
    }
    let schema = ComponentSchema::six();
    let tree = Tree::from_spec(&crate::baseball_tree_spec(crate::simplex::SIX_COMPONENTS), &schema)?;
    let shift = [-0.006, 0.0, 0.006][age_group];
    let means: BTreeMap<&str, (Vec<f64>, f64)> = BTreeMap::from([
        ("root", (vec![0.069 + shift, 0.931 - shift], 400.0)),
        ("hr+triple+double", (vec![0.575, 0.425], 60.0)),
        ("hr+triple", (vec![0.728 + 2.0 * shift, 0.272 - 2.0 * shift], 40.0)),
        ("out+single+other", (vec![0.704, 0.296], 300.0)),
        ("single+other", (vec![0.616 - 4.0 * shift, 0.384 + 4.0 * shift], 80.0)),
    ]);
    let layers = tree
        .interior_nodes()
        .iter()
        .map(|&v| {
            let (m, a) = &means[tree.node(v).name.as_str()];
            Ok((v, MeanPrecision::new(m.clone(), *a)?))
        })
        .collect::<Result<Vec<_>>>()?;
    NddParams::from_layers(tree, &layers)
}

fn multinomial<R: Rng + ?Sized>(n: u64, probs: &[f64], rng: &mut R) -> Vec<u64> {
    let mut left = n;
    let mut mass = 1.0;
    let mut out = Vec::with_capacity(probs.len());
    for (i, &p) in probs.iter().enumerate() {
        if i + 1 == probs.len() {
            out.push(left);
            break;
        }
        let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
        let c = if left == 0 {
            0
        } else {
            Binomial::new(left, q).expect("valid binomial").sample(rng)
        };
        out.push(c);
        left -= c;
        mass -= p;
    }
    out
}

/// A CSV of batter-seasons in the 14-outcome layout.
pub fn synthetic_plate_appearances(config: &SyntheticPanelConfig) -> Result<String> {
    if config.min_pa == 0 || config.max_pa < config.min_pa {
        return Err(Error::Config("need 0 < min_pa <= max_pa".into()));
    }
    let params = (0..3).map(baseball_params).collect::<Result<Vec<_>>>()?;
    // fly/ground split of each hit type, then out and other sub-outcomes
    let hit_fly = [0.9, 0.7, 0.75, 0.45];
    let outs = [0.36, 0.42, 0.22];
    let others = [0.01, 0.09, 0.90];
    let mut out = String::from("player_id,season,age,bat_hand,pitch_hand,");
    out.push_str(&RAW14_COMPONENTS.join(","));
    out.push('\n');
    for (si, &season) in config.seasons.iter().enumerate() {
        let mut rng = rng_for(config.seed, si as u64);
        for p in 0..config.players {
            let age: u32 = rng.random_range(21..=40);
            let group = if age <= 26 {
                0
            } else if age >= 35 {
                2
            } else {
                1
            };
            let bat = ["L", "R", "S"][rng.random_range(0..3)];
            let pitch = ["L", "R"][rng.random_range(0..2)];
            let pa = rng.random_range(config.min_pa..=config.max_pa);
            let x = draw_ndd(&params[group], &mut rng);
            let six = multinomial(pa, &x, &mut rng);
            let mut raw = [0u64; 14];
            for h in 0..4 {
                let fly = multinomial(six[h], &[hit_fly[h], 1.0 - hit_fly[h]], &mut rng);
                raw[h] = fly[0];
                raw[h + 4] = fly[1];
            }
            raw[8..11].copy_from_slice(&multinomial(six[4], &outs, &mut rng));
            raw[11..14].copy_from_slice(&multinomial(six[5], &others, &mut rng));
            let counts: Vec<String> = raw.iter().map(u64::to_string).collect();
            out.push_str(&format!(
                "p{p:04},{season},{age},{bat},{pitch},{}\n",
                counts.join(",")
            ));
        }
    }
    Ok(out)
}
