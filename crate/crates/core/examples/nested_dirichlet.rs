//! Nested Dirichlet on a five-part tree: root -> {N1: x1, x2, x3}, {N2: x4, x5}.
//!
//! Shows the density factorizing over layers, the reduction to a plain
//! Dirichlet when every interior parameter is the sum of its children,
//! positive correlation inside a node, and a per-layer fit.
//!
//!     cargo run --example nested_dirichlet

use ldm::ndd::layer_log_density;
use ldm::{
    dd_log_density, ndd_fit_rows, ndd_log_density, ndd_moments, sample_ndd, ComponentSchema, DirichletParams,
    FitOptions, NddParams, TreeNodeSpec,
};

fn tree(n1: f64, n2: f64, leaves: [f64; 5]) -> TreeNodeSpec {
    let leaf = |name: &str, a: f64| TreeNodeSpec::leaf(name).with_alpha(a);
    TreeNodeSpec::node(
        "root",
        vec![
            TreeNodeSpec::node(
                "N1",
                vec![leaf("x1", leaves[0]), leaf("x2", leaves[1]), leaf("x3", leaves[2])],
            )
            .with_alpha(n1),
            TreeNodeSpec::node("N2", vec![leaf("x4", leaves[3]), leaf("x5", leaves[4])]).with_alpha(n2),
        ],
    )
}

fn main() -> ldm::Result<()> {
    let schema = ComponentSchema::new(["x1", "x2", "x3", "x4", "x5"])?;
    let x = [0.1, 0.25, 0.05, 0.35, 0.25];

    // Factorization: leaf density = layer densities minus the Jacobian.
    let p = NddParams::from_spec(&tree(2.0, 3.0, [4.0, 6.0, 2.0, 3.0, 3.0]), &schema)?;
    let t = p.tree();
    let layers: f64 = t
        .interior_nodes()
        .iter()
        .map(|&v| layer_log_density(&x, &p, v))
        .sum::<ldm::Result<f64>>()?;
    println!("ndd log density     {:.12}", ndd_log_density(&x, &p)?);
    println!("layers - jacobian   {:.12}", layers - t.log_jacobian(&x));

    // Reduction: interior alpha equal to the child sums gives a plain Dirichlet.
    let leaves = [1.5, 2.0, 0.7, 3.0, 1.2];
    let reduced = NddParams::from_spec(&tree(4.2, 4.2, leaves), &schema)?;
    let dd = DirichletParams::new(leaves.to_vec())?;
    println!("reduced ndd         {:.12}", ndd_log_density(&x, &reduced)?);
    println!("dirichlet           {:.12}", dd_log_density(&x, &dd)?);

    // A loose root with tight nodes couples the parts inside each node.
    let coupled = NddParams::from_spec(&tree(2.0, 2.0, [10.0, 10.0, 10.0, 5.0, 5.0]), &schema)?;
    let m = ndd_moments(&coupled);
    println!("corr(x1, x2) = {:.3}   corr(x1, x4) = {:.3}", m.correlation(0, 1), m.correlation(0, 3));

    // Per-layer maximum likelihood recovers the layer means and precisions.
    let draws = sample_ndd(&p, 5000, 3);
    let fit = ndd_fit_rows(&draws, p.tree(), &FitOptions::default())?;
    for (l, truth) in fit.layers.iter().zip(p.layer_means().layers) {
        println!(
            "{:<10} fitted mean {:?} precision {:.2}   (true precision {:.2})",
            l.label,
            l.fit.params.mean.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            l.fit.params.precision,
            truth.params.precision
        );
    }
    Ok(())
}
