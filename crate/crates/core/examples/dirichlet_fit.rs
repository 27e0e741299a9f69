//! Plain Dirichlet: sample, fit by maximum likelihood, compare moments,
//! and run the two partial maximizations on their own.
//!
//!     cargo run --example dirichlet_fit

use ldm::{dd_mle, dd_moments, mle_fixed_mean, mle_fixed_precision, sample_dirichlet, DirichletParams};

fn main() -> ldm::Result<()> {
    let truth = DirichletParams::new(vec![5.0, 3.0, 2.0])?;
    let draws = sample_dirichlet(&truth, 10_000, 42);

    let fit = dd_mle(&draws)?;
    let alpha = fit.params.alpha();
    println!("true alpha    {:?}", truth.alpha());
    println!(
        "fitted alpha  [{:.3}, {:.3}, {:.3}]  ({} iterations, |grad| = {:.1e})",
        alpha[0], alpha[1], alpha[2], fit.iterations, fit.grad_norm
    );
    println!("log-likelihood {:.3}", fit.loglik);

    let m = dd_moments(&truth);
    println!("mean {:?}", m.mean);
    println!("var  {:?}", m.variance);
    println!("cov(1,2) = {:.5}  (never positive under a Dirichlet)", m.covariance[0][1]);

    // Partial maximizations used inside the two-step fit.
    let precision = mle_fixed_mean(&draws, &truth.mean())?;
    let mean = mle_fixed_precision(&draws, 10.0)?;
    println!("precision given the true mean: {precision:.3}");
    println!("mean given precision 10: [{:.4}, {:.4}, {:.4}]", mean[0], mean[1], mean[2]);
    Ok(())
}
