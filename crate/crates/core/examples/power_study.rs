//! Type I error and power of the overall test on the six-outcome baseball
//! tree with three groups.
//!
//! Under the alternative one group's root split moves from 0.069 to
//! 0.069 + delta (more home runs, triples and doubles), everything else
//! unchanged. The pilot grid below is what fixed the effect size used by
//! the acceptance suite.
//!
//!     cargo run --release --example power_study -- [replications]

use ldm::simlab::{baseball_params, run_study, shift_layer_mean, GroupSpec, StudyConfig};
use ldm::ComponentSchema;

fn study(delta: f64, n: usize, replications: usize, seed: u64) -> ldm::Result<ldm::StudyResult> {
    let base = baseball_params(1)?;
    let root = base.tree().root();
    let shifted = shift_layer_mean(&base, root, &[delta, -delta])?;
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
    run_study(&config)
}

fn main() -> ldm::Result<()> {
    let reps: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("replications must be an integer"))
        .unwrap_or(200);
    let sizes = [50, 100, 200, 400];
    println!("rejection rate at level 0.05, {reps} replications per cell");
    print!("{:>8}", "delta");
    for n in sizes {
        print!("{:>10}", format!("n={n}"));
    }
    println!();
    for delta in [0.0, 0.002, 0.004, 0.006, 0.008] {
        print!("{delta:>8.3}");
        for n in sizes {
            let r = study(delta, n, reps, 11)?;
            print!("{:>10.3}", r.rejection_rate);
        }
        println!();
    }
    Ok(())
}
