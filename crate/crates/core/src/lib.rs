//! Nested Dirichlet models for compositional data.
//!
//! Compositions are modeled with nested Dirichlet distributions: a tree
//! whose interior nodes each carry an independent Dirichlet on the
//! proportions of their children. On top of that the crate provides a
//! likelihood-ratio test for equal mean compositions across groups that
//! decomposes by layer, a search for the tree itself, and a simulation
//! harness.
//!
//! ```
//! use ldm::{dd_mle, sample_dirichlet, DirichletParams};
//!
//! let truth = DirichletParams::new(vec![5.0, 3.0, 2.0]).unwrap();
//! let draws = sample_dirichlet(&truth, 2000, 7);
//! let fit = dd_mle(&draws).unwrap();
//! assert!((fit.params.precision - 10.0).abs() < 1.5);
//! ```

pub mod cli;
pub mod dirichlet;
pub mod error;
pub mod lrt;
pub mod ndd;
pub mod report;
pub mod simlab;
pub mod simplex;
pub mod special;
pub mod treesearch;

pub use dirichlet::{
    dd_log_density, dd_loglik, dd_mle, dd_mle_stats, dd_moments, mle_fixed_mean, mle_fixed_precision,
    DdFit, DirichletParams, FitOptions, MeanPrecision, Moments, SuffStats,
};
pub use error::{Error, Result};
pub use lrt::{
    chi_square_upper_tail, degrees_of_freedom, layer_lrt, overall_lrt, overall_lrt_layers, pairwise_from_layers,
    pairwise_tests, Grouping, LayerTestResult, OverallTestResult, PairwiseReport,
};
pub use ndd::{
    layers_from_rows, ndd_fit, ndd_fit_rows, ndd_log_density, ndd_moments, to_layers, validate_tree, LayerData,
    NddFit, NddParams, NodeId, Tree, TreeNodeSpec, TreeViolation,
};
pub use simlab::{run_study, sample_dirichlet, sample_ndd, GroupSpec, StudyConfig, StudyResult};
pub use simplex::{
    aggregate_14_to_6, assign_age_group, close, descriptive_proportions, pearson_correlation, AgeGroup,
    AgeGrouping, ComponentSchema, Composition, GroupKey, OutcomeCounts, Panel, PanelRow, RowMeta,
};
pub use treesearch::{enumerate_binary_partitions, find_tree, find_tree_rows, score, Criterion, SearchConfig};

/// Version stamped into every JSON artifact.
pub const FORMAT_VERSION: u32 = 1;

/// The six-outcome baseball tree: home runs, triples and doubles split
/// from outs, singles and other outcomes; HR pairs with triples and
/// singles with other. `names` follows the order hr, triple, double,
/// single, out, other.
pub fn baseball_tree_spec(names: [&str; 6]) -> TreeNodeSpec {
    let [hr, triple, double, single, out, other] = names;
    let leaf = TreeNodeSpec::leaf;
    let join = |parts: &[&str]| parts.join("+");
    TreeNodeSpec::node(
        "root",
        vec![
            TreeNodeSpec::node(
                join(&[hr, triple, double]),
                vec![
                    TreeNodeSpec::node(join(&[hr, triple]), vec![leaf(hr), leaf(triple)]),
                    leaf(double),
                ],
            ),
            TreeNodeSpec::node(
                join(&[out, single, other]),
                vec![
                    leaf(out),
                    TreeNodeSpec::node(join(&[single, other]), vec![leaf(single), leaf(other)]),
                ],
            ),
        ],
    )
}
