mod common;

use common::{two_cluster, random_ndd, random_point, relative_error, worst_moment_z};
use ldm::ndd::layer_log_density;
use ldm::simlab::{ks_two_sample, rng_for};
use ldm::{
    dd_log_density, layers_from_rows, ndd_fit_rows, ndd_log_density, ndd_moments, sample_dirichlet, sample_ndd,
    validate_tree, ComponentSchema, DirichletParams, FitOptions, NddParams,
};
use proptest::prelude::*;

fn factorized(x: &[f64], p: &NddParams) -> f64 {
    let t = p.tree();
    let layers: f64 = t
        .interior_nodes()
        .iter()
        .map(|&v| layer_log_density(x, p, v).unwrap())
        .sum();
    // sum over interior nodes of (K_v - 1) ln N_v
    let subtotals = t.subtotals(x);
    let jac: f64 = t
        .interior_nodes()
        .iter()
        .map(|&v| (t.node(v).children.len() as f64 - 1.0) * subtotals[v].ln())
        .sum();
    layers - jac
}

#[test]
fn layer_transform_of_counts() {
    let (_, p) = two_cluster([1.0; 7]);
    let t = p.tree();
    let x: Vec<f64> = [1.0, 2.0, 3.0, 4.0, 5.0].iter().map(|c| c / 15.0).collect();
    let layers = layers_from_rows(&[x], t);
    let got: Vec<&Vec<f64>> = layers.iter().map(|l| &l.rows[0]).collect();
    let want = [
        vec![6.0 / 15.0, 9.0 / 15.0],
        vec![1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0],
        vec![4.0 / 9.0, 5.0 / 9.0],
    ];
    for (g, w) in got.iter().zip(&want) {
        for (a, b) in g.iter().zip(w) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}

#[test]
fn reduces_to_dirichlet_when_nodes_sum_children() {
    let mut rng = rng_for(1, 0);
    let leaves = [1.3, 0.6, 2.2, 4.0, 0.9];
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
    for _ in 0..1000 {
        let x = random_point(&mut rng, 5);
        let a = ndd_log_density(&x, &p).unwrap();
        let b = dd_log_density(&x, &dd).unwrap();
        assert!(relative_error(a, b) < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn flat_tree_samples_like_dirichlet() {
    let schema = ComponentSchema::new(["a", "b", "c"]).unwrap();
    let dd = DirichletParams::new(vec![0.8, 2.0, 3.5]).unwrap();
    let flat = NddParams::flat(&schema, &dd).unwrap();
    let a = sample_dirichlet(&dd, 10_000, 1);
    let b = sample_ndd(&flat, 10_000, 2);
    for j in 0..3 {
        let xa: Vec<f64> = a.iter().map(|c| c.parts()[j]).collect();
        let xb: Vec<f64> = b.iter().map(|c| c.parts()[j]).collect();
        assert!(ks_two_sample(&xa, &xb).p_value > 0.01);
    }
}

#[test]
fn moments_match_monte_carlo() {
    let (_, p) = two_cluster([3.0, 1.5, 2.0, 4.0, 2.5, 2.0, 5.0]);
    let rows: Vec<Vec<f64>> = sample_ndd(&p, 200_000, 8).into_iter().map(|c| c.into_inner()).collect();
    let m = ndd_moments(&p);
    assert!(worst_moment_z(&rows, &m.mean, &m.covariance) < 4.0);
}

#[test]
fn nesting_allows_positive_correlation() {
    let (_, p) = two_cluster([10.0, 10.0, 10.0, 5.0, 5.0, 2.0, 2.0]);
    let m = ndd_moments(&p);
    assert!(m.correlation(0, 1) > 0.0);
    let rows = sample_ndd(&p, 50_000, 4);
    let x0: Vec<f64> = rows.iter().map(|r| r.parts()[0]).collect();
    let x1: Vec<f64> = rows.iter().map(|r| r.parts()[1]).collect();
    let (m0, m1) = (x0.iter().sum::<f64>() / 5e4, x1.iter().sum::<f64>() / 5e4);
    let cov: f64 = x0.iter().zip(&x1).map(|(a, b)| (a - m0) * (b - m1)).sum::<f64>();
    assert!(cov > 0.0);
}

#[test]
fn layer_fits_recover_parameters() {
    let (_, p) = two_cluster([3.0, 1.5, 2.0, 4.0, 2.5, 2.0, 5.0]);
    let rows = sample_ndd(&p, 5000, 21);
    let fit = ndd_fit_rows(&rows, p.tree(), &FitOptions::default()).unwrap();
    for (l, truth) in fit.layers.iter().zip(p.layer_means().layers) {
        let rel = (l.fit.params.precision - truth.params.precision).abs() / truth.params.precision;
        assert!(rel < 0.05, "{}: precision off by {rel}", l.label);
        for (a, b) in l.fit.params.mean.iter().zip(&truth.params.mean) {
            assert!((a - b).abs() / b < 0.05);
        }
    }
    assert!(fit.loglik.is_some());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn density_factorizes_over_layers(seed in any::<u64>(), k in 2usize..=8) {
        let mut rng = rng_for(seed, 0);
        let (schema, p) = random_ndd(&mut rng, k);
        prop_assert!(validate_tree(&p.to_spec(), &schema).is_ok());
        let x = random_point(&mut rng, k);
        let direct = ndd_log_density(&x, &p).unwrap();
        let layered = factorized(&x, &p);
        prop_assert!(relative_error(direct, layered) < 1e-10, "{} vs {}", direct, layered);
    }

    #[test]
    fn parameter_count_is_edges(seed in any::<u64>(), k in 2usize..=8) {
        let mut rng = rng_for(seed, 0);
        let (_, p) = random_ndd(&mut rng, k);
        let t = p.tree();
        prop_assert_eq!(p.parameter_count(), k + t.interior_nodes().len() - 1);
        prop_assert!(t.interior_nodes().len() < k);
    }

    #[test]
    fn random_draws_sum_to_one(seed in any::<u64>(), k in 2usize..=8) {
        let mut rng = rng_for(seed, 0);
        let (_, p) = random_ndd(&mut rng, k);
        for c in sample_ndd(&p, 20, seed) {
            prop_assert!((c.parts().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
