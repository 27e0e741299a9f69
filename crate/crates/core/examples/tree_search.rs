//! Recovering a tree from data: draws from a nested Dirichlet with two
//! tightly coupled clusters, then a BIC-scored search.
//!
//!     cargo run --release --example tree_search

use ldm::{find_tree_rows, sample_ndd, ComponentSchema, Criterion, NddParams, SearchConfig, TreeNodeSpec};

fn main() -> ldm::Result<()> {
    let schema = ComponentSchema::new(["x1", "x2", "x3", "x4", "x5"])?;
    let leaf = |name: &str, a: f64| TreeNodeSpec::leaf(name).with_alpha(a);
    let truth = TreeNodeSpec::node(
        "root",
        vec![
            TreeNodeSpec::node("N1", vec![leaf("x1", 12.0), leaf("x2", 8.0), leaf("x3", 10.0)]).with_alpha(2.0),
            TreeNodeSpec::node("N2", vec![leaf("x4", 10.0), leaf("x5", 15.0)]).with_alpha(3.0),
        ],
    );
    let p = NddParams::from_spec(&truth, &schema)?;
    let rows = sample_ndd(&p, 2000, 17);

    for criterion in [Criterion::Neg2loglik, Criterion::Aic, Criterion::Bic] {
        let config = SearchConfig {
            criterion,
            ..Default::default()
        };
        let out = find_tree_rows(&rows, &schema, &config)?;
        println!(
            "{criterion:<10} score {:>10.2} (flat {:>10.2})  recovered: {}",
            out.score,
            out.baseline_score,
            out.tree.same_topology(p.tree())
        );
        if criterion == Criterion::Bic {
            println!("{}", serde_json::to_string_pretty(&out.tree.to_spec())?);
            print!("{}", out.trace.to_csv());
        }
    }
    Ok(())
}
