//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Runs as a plain binary (no libtest harness).

mod common;

use common::{two_cluster, integrate, random_ndd, random_point, relative_error, run_pipeline, worst_moment_z};
use ldm::ndd::layer_log_density;
use ldm::simlab::{baseball_params, chi_square_cdf, ks_one_sample, rng_for, shift_layer_mean};
use ldm::special::ln_gamma;
use ldm::{
    baseball_tree_spec, chi_square_upper_tail, dd_log_density, dd_mle, dd_moments, degrees_of_freedom, find_tree_rows,
    layers_from_rows, ndd_log_density, ndd_moments, overall_lrt_layers, run_study, sample_dirichlet, sample_ndd,
    ComponentSchema, DirichletParams, GroupSpec, Grouping, NddParams, SearchConfig, StudyConfig, Tree,
};
use std::time::{Duration, Instant};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn ac1() -> Verdict {
    let mut worst: f64 = 0.0;
    for case in 0..100u64 {
        let mut rng = rng_for(1000 + case, 0);
        let k = 2 + (case as usize % 7);
        let (_, p) = random_ndd(&mut rng, k);
        let x = random_point(&mut rng, k);
        let t = p.tree();
        let sub = t.subtotals(&x);
        let layered: f64 = t
            .interior_nodes()
            .iter()
            .map(|&v| {
                layer_log_density(&x, &p, v).unwrap() - (t.node(v).children.len() as f64 - 1.0) * sub[v].ln()
            })
            .sum();
        worst = worst.max(relative_error(ndd_log_density(&x, &p).unwrap(), layered));
    }
    verdict(worst < 1e-10, format!("worst rel err {worst:.2e} over 100 cases, k in 2..=8"))
}

fn ac2() -> Verdict {
    let leaves = [1.7, 0.45, 3.2, 2.6, 0.8];
    let (_, p) = two_cluster([
        leaves[0],
        leaves[1],
        leaves[2],
        leaves[3],
        leaves[4],
        leaves[0] + leaves[1] + leaves[2],
        leaves[3] + leaves[4],
    ]);
    let dd = DirichletParams::new(leaves.to_vec()).unwrap();
    let mut rng = rng_for(2, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let x = random_point(&mut rng, 5);
        worst = worst.max(relative_error(ndd_log_density(&x, &p).unwrap(), dd_log_density(&x, &dd).unwrap()));
    }
    verdict(worst < 1e-10, format!("worst rel err {worst:.2e} at 1000 points"))
}

fn ac3() -> Verdict {
    let truth = [5.0, 3.0, 2.0];
    let draws = sample_dirichlet(&DirichletParams::new(truth.to_vec()).unwrap(), 10_000, 3);
    let fit = dd_mle(&draws).unwrap();
    let alpha = fit.params.alpha();
    let worst = alpha
        .iter()
        .zip(truth)
        .map(|(a, t)| (a - t).abs() / t)
        .fold(0.0, f64::max);
    verdict(
        worst < 0.05 && fit.grad_norm < 1e-6,
        format!(
            "alpha = ({:.4}, {:.4}, {:.4}), worst rel err {:.2}%, grad norm {:.1e}",
            alpha[0],
            alpha[1],
            alpha[2],
            100.0 * worst,
            fit.grad_norm
        ),
    )
}

fn ac4() -> Verdict {
    const N: usize = 1_000_000;
    let dd = DirichletParams::new(vec![2.5, 1.0, 4.0, 0.7]).unwrap();
    let rows: Vec<Vec<f64>> = sample_dirichlet(&dd, N, 41).into_iter().map(|c| c.into_inner()).collect();
    let m = dd_moments(&dd);
    let z_dd = worst_moment_z(&rows, &m.mean, &m.covariance);

    let (_, p) = two_cluster([10.0, 10.0, 10.0, 5.0, 5.0, 2.0, 2.0]);
    let rows: Vec<Vec<f64>> = sample_ndd(&p, N, 42).into_iter().map(|c| c.into_inner()).collect();
    let m = ndd_moments(&p);
    let z_ndd = worst_moment_z(&rows, &m.mean, &m.covariance);
    let r = m.correlation(0, 1);
    verdict(
        z_dd < 4.0 && z_ndd < 4.0 && r > 0.0,
        format!("worst |z| DD {z_dd:.2}, NDD {z_ndd:.2}; NDD corr(x1, x2) = {r:.4}"),
    )
}

fn ac5() -> Verdict {
    let schema = ComponentSchema::six();
    let tree = Tree::from_spec(&baseball_tree_spec(ldm::simplex::SIX_COMPONENTS), &schema).unwrap();
    let p = baseball_params(1).unwrap();
    let rows = sample_ndd(&p, 60, 5);
    let labels: Vec<String> = (0..60).map(|i| ["a", "b", "c"][i % 3].to_string()).collect();
    let r = overall_lrt_layers(&layers_from_rows(&rows, &tree), &Grouping::from_labels(&labels)).unwrap();
    let dfs: Vec<usize> = r.layers.iter().map(|l| l.df).collect();
    let formula: Vec<usize> = tree
        .interior_nodes()
        .iter()
        .map(|&v| degrees_of_freedom(3, tree.node(v).children.len()))
        .collect();
    verdict(
        r.layers.len() == 5 && dfs.iter().all(|&d| d == 2) && dfs == formula && r.v == 10,
        format!("{} layers, df {:?}, v = {}", r.layers.len(), dfs, r.v),
    )
}

fn study(n: usize, delta: f64, replications: usize, seed: u64) -> ldm::StudyResult {
    let base = baseball_params(1).unwrap();
    let shifted = shift_layer_mean(&base, base.tree().root(), &[delta, -delta]).unwrap();
    let config = StudyConfig {
        components: ComponentSchema::six().names().to_vec(),
        tree: base.to_spec(),
        groups: vec![
            GroupSpec::from_params("a", n, &base),
            GroupSpec::from_params("b", n, &base),
            GroupSpec::from_params("c", n, &shifted),
        ],
        replications,
        level: 0.05,
        seed,
    };
    run_study(&config).unwrap()
}

fn ac6() -> Verdict {
    let r = study(200, 0.0, 1000, 6);
    let lambdas: Vec<f64> = r.lambdas.iter().flatten().copied().collect();
    let ks = ks_one_sample(&lambdas, |x| chi_square_cdf(x, 10));
    verdict(
        r.failures == 0 && (0.03..=0.07).contains(&r.rejection_rate) && ks.p_value > 0.01 && r.v == 10,
        format!(
            "rejection rate {:.3} (MC s.e. {:.3}), KS vs chi2_10 D = {:.4}, p = {:.3}, {} failures",
            r.rejection_rate, r.mc_se, ks.statistic, ks.p_value, r.failures
        ),
    )
}

// Effect size from the pilot grid in data/power_pilot.txt.
const PILOT_DELTA: f64 = 0.004;

fn ac7() -> Verdict {
    let sizes = [50, 100, 200, 400];
    let power: Vec<f64> = sizes.iter().map(|&n| study(n, PILOT_DELTA, 200, 7).rejection_rate).collect();
    let monotone = power.windows(2).all(|w| w[0] <= w[1]);
    verdict(
        monotone && power[3] >= 0.9,
        format!(
            "root shift {PILOT_DELTA}, power at n = 50/100/200/400: {}",
            power.iter().map(|p| format!("{p:.3}")).collect::<Vec<_>>().join(" / ")
        ),
    )
}

fn ac8() -> Verdict {
    let (schema, p) = two_cluster([12.0, 8.0, 10.0, 10.0, 15.0, 2.0, 3.0]);
    let config = SearchConfig::default();
    let recovered = (0..50u64)
        .filter(|&rep| {
            let rows = sample_ndd(&p, 2000, 8000 + rep);
            find_tree_rows(&rows, &schema, &config).unwrap().tree.same_topology(p.tree())
        })
        .count();
    let dd = DirichletParams::new(vec![4.0, 3.0, 2.0, 5.0, 6.0]).unwrap();
    let flat = NddParams::flat(&schema, &dd).unwrap();
    let flat_kept = (0..50u64)
        .filter(|&rep| {
            let rows = sample_ndd(&flat, 2000, 9000 + rep);
            find_tree_rows(&rows, &schema, &config).unwrap().tree.is_flat()
        })
        .count();
    verdict(
        recovered >= 40 && flat_kept >= 45,
        format!("nested topology recovered {recovered}/50, flat returned on flat data {flat_kept}/50"),
    )
}

fn ac9() -> Verdict {
    let (x, v) = (18.307f64, 10usize);
    let h = v as f64 / 2.0;
    let density = |t: f64| {
        if t <= 0.0 {
            0.0
        } else {
            ((h - 1.0) * t.ln() - t / 2.0 - h * 2f64.ln() - ln_gamma(h)).exp()
        }
    };
    let oracle = 1.0 - integrate(&density, 0.0, x, 1e-14);
    let q = chi_square_upper_tail(x, v);
    let grid: Vec<f64> = (0..=400).map(|i| chi_square_upper_tail(i as f64 * 0.25, v)).collect();
    let monotone = grid.windows(2).all(|w| w[1] <= w[0]);
    verdict(
        (q - 0.05).abs() <= 1e-4 && (q - oracle).abs() <= 1e-4 && monotone,
        format!("Q(18.307; 10) = {q:.6}, quadrature {oracle:.6}, monotone on 401-point grid: {monotone}"),
    )
}

fn ac10() -> Verdict {
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let a = run_pipeline(dirs[0].path(), 1);
    let b = run_pipeline(dirs[1].path(), 1);
    let c = run_pipeline(dirs[2].path(), 4);
    let differing: Vec<&str> = a
        .iter()
        .zip(b.iter().zip(&c))
        .filter(|((_, x), ((_, y), (_, z)))| x != y || x != z)
        .map(|((name, _), _)| name.as_str())
        .collect();
    verdict(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} artifacts identical across 2 runs and 1 vs 4 threads", a.len())
        } else {
            format!("differing artifacts: {}", differing.join(", "))
        },
    )
}

fn main() {
    type Check = fn() -> Verdict;
    let checks: [(&str, &str, Check, Option<Duration>); 10] = [
        ("AC1", "factorization identity", ac1, Some(Duration::from_secs(5))),
        ("AC2", "reduction to Dirichlet", ac2, None),
        ("AC3", "Dirichlet MLE recovery", ac3, Some(Duration::from_secs(10))),
        ("AC4", "moments vs 1e6 draws", ac4, None),
        ("AC5", "df bookkeeping", ac5, None),
        ("AC6", "null calibration", ac6, Some(Duration::from_secs(300))),
        ("AC7", "power sanity", ac7, None),
        ("AC8", "tree recovery", ac8, Some(Duration::from_secs(600))),
        ("AC9", "chi-square tail", ac9, None),
        ("AC10", "pipeline determinism", ac10, None),
    ];
    let mut failed = 0;
    for (id, name, check, budget) in checks {
        let start = Instant::now();
        let v = check();
        let took = start.elapsed();
        let in_time = budget.is_none_or(|b| took <= b);
        let pass = v.pass && in_time;
        if !pass {
            failed += 1;
        }
        let budget_note = budget.map_or(String::new(), |b| format!(", budget {} s", b.as_secs()));
        println!(
            "{id} {} {name}: {} [{:.2} s{budget_note}]",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            took.as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
