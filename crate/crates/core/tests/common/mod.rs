#![allow(dead_code)]

use ldm::{ComponentSchema, NddParams, TreeNodeSpec};
use rand::seq::SliceRandom;
use rand::Rng;

/// Adaptive Simpson quadrature on [a, b].
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn step(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
            + step(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    step(f, a, fa, b, fb, m, fm, whole, tol, 50)
}

pub fn component_names(k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("c{i}")).collect()
}

fn random_subtree<R: Rng>(rng: &mut R, leaves: &[String], counter: &mut usize, root: bool) -> TreeNodeSpec {
    let alpha = rng.random_range(0.3..8.0);
    if leaves.len() == 1 {
        return TreeNodeSpec::leaf(&leaves[0]).with_alpha(alpha);
    }
    let mut shuffled = leaves.to_vec();
    shuffled.shuffle(rng);
    let parts = rng.random_range(2..=leaves.len().min(4));
    // cut points give `parts` non-empty groups
    let mut cuts: Vec<usize> = (1..leaves.len()).collect();
    cuts.shuffle(rng);
    let mut cuts: Vec<usize> = cuts[..parts - 1].to_vec();
    cuts.sort_unstable();
    let mut children = Vec::new();
    let mut start = 0;
    for end in cuts.into_iter().chain(std::iter::once(leaves.len())) {
        children.push(random_subtree(rng, &shuffled[start..end], counter, false));
        start = end;
    }
    *counter += 1;
    let name = if root { "root".to_string() } else { format!("n{counter}") };
    let node = TreeNodeSpec::node(name, children);
    if root {
        node
    } else {
        node.with_alpha(alpha)
    }
}

/// Random tree over `k` components with random positive parameters.
pub fn random_ndd<R: Rng>(rng: &mut R, k: usize) -> (ComponentSchema, NddParams) {
    let names = component_names(k);
    let schema = ComponentSchema::new(names.clone()).unwrap();
    let mut counter = 0;
    let spec = random_subtree(rng, &names, &mut counter, true);
    let p = NddParams::from_spec(&spec, &schema).unwrap();
    (schema, p)
}

/// Random interior composition with parts bounded away from zero.
pub fn random_point<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.02..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300).max(1.0)
}

/// Root -> {N1: x1, x2, x3}, {N2: x4, x5}, with edge parameters
/// `[x1, x2, x3, x4, x5, N1, N2]`.
pub fn two_cluster(alpha: [f64; 7]) -> (ComponentSchema, NddParams) {
    let schema = ComponentSchema::new(["x1", "x2", "x3", "x4", "x5"]).unwrap();
    let leaf = |i: usize| TreeNodeSpec::leaf(format!("x{}", i + 1)).with_alpha(alpha[i]);
    let spec = TreeNodeSpec::node(
        "root",
        vec![
            TreeNodeSpec::node("N1", vec![leaf(0), leaf(1), leaf(2)]).with_alpha(alpha[5]),
            TreeNodeSpec::node("N2", vec![leaf(3), leaf(4)]).with_alpha(alpha[6]),
        ],
    );
    let p = NddParams::from_spec(&spec, &schema).unwrap();
    (schema, p)
}

/// Mean, and Monte-Carlo standard error of the mean, of a sample.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Checks sample means, variances and covariances of `rows` against
/// `mean` and `cov` within `z` Monte-Carlo standard errors. Returns the
/// worst z-score seen.
pub fn worst_moment_z(rows: &[Vec<f64>], mean: &[f64], cov: &[Vec<f64>]) -> f64 {
    let k = mean.len();
    let mut worst: f64 = 0.0;
    for i in 0..k {
        let xi: Vec<f64> = rows.iter().map(|r| r[i]).collect();
        let (m, se) = mean_se(&xi);
        worst = worst.max((m - mean[i]).abs() / se);
        for j in i..k {
            // centered at the true mean, so E[product] = cov exactly
            let prod: Vec<f64> = rows
                .iter()
                .map(|r| (r[i] - mean[i]) * (r[j] - mean[j]))
                .collect();
            let (c, se) = mean_se(&prod);
            worst = worst.max((c - cov[i][j]).abs() / se);
        }
    }
    worst
}

/// Runs the command line as the binary would.
pub fn ldm_cli(args: &[&str]) -> ldm::Result<String> {
    use clap::Parser;
    let cli = ldm::cli::Cli::parse_from(std::iter::once("ldm").chain(args.iter().copied()));
    ldm::cli::run(&cli)
}

pub const BUNDLED_CSV: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic_pa.csv");

/// ingest -> treefit -> test -> pairwise -> heatmap on the bundled file,
/// writing into `dir`. Returns every artifact's name and bytes in order.
pub fn run_pipeline(dir: &std::path::Path, threads: usize) -> Vec<(String, Vec<u8>)> {
    let p = |f: &str| dir.join(f).to_string_lossy().into_owned();
    let t = threads.to_string();
    let steps: Vec<Vec<String>> = vec![
        vec!["ingest".into(), "--input".into(), BUNDLED_CSV.into(), "--season".into(), "2000".into(), "--out".into(), p("panel.json")],
        vec!["treefit".into(), "--panel".into(), p("panel.json"), "--out".into(), p("tree.json"), "--trace-csv".into(), p("trace.csv")],
        vec!["test".into(), "--panel".into(), p("panel.json"), "--tree".into(), p("tree.json"), "--out".into(), p("test.json"), "--csv".into(), p("test.csv")],
        vec!["pairwise".into(), "--panel".into(), p("panel.json"), "--tree".into(), "baseball".into(), "--bonferroni".into(), "--out".into(), p("pairwise.json")],
        vec!["heatmap".into(), "--panel".into(), p("panel.json"), "--format".into(), "csv".into(), "--out".into(), p("heatmap.csv")],
        vec!["heatmap".into(), "--panel".into(), p("panel.json"), "--out".into(), p("heatmap.svg")],
    ];
    for step in steps {
        let mut args: Vec<&str> = vec!["--threads", &t];
        args.extend(step.iter().map(String::as_str));
        ldm_cli(&args).unwrap_or_else(|e| panic!("{step:?}: {e}"));
    }
    ["panel.json", "tree.json", "trace.csv", "test.json", "test.csv", "pairwise.json", "heatmap.csv", "heatmap.svg"]
        .iter()
        .map(|f| (f.to_string(), std::fs::read(dir.join(f)).unwrap()))
        .collect()
}
