//! The standard Dirichlet distribution: density, moments and maximum
//! likelihood in the mean–precision parameterization.
//!
//! All estimators work from [`SuffStats`]: the log-likelihood of `n`
//! Dirichlet rows depends on the data only through `n` and the per-component
//! mean of `ln x_j`.
//!
//! Fitting alternates two partial maximizations: precision with the mean
//! held fixed ([`mle_fixed_mean`]) and mean with the precision held fixed
//! ([`mle_fixed_precision`]). Once the alternation settles a few Newton
//! steps in `alpha` remove the remaining linear-convergence error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{digamma, inv_digamma, ln_gamma, ln_multivariate_beta, trigamma};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DirichletParams {
    alpha: Vec<f64>,
}

impl DirichletParams {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(Error::InvalidParams("need at least 2 components".into()));
        }
        if let Some(a) = alpha.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::InvalidParams(format!(
                "alpha entries must be positive and finite, got {a}"
            )));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn precision(&self) -> f64 {
        self.alpha.iter().sum()
    }

    pub fn mean(&self) -> Vec<f64> {
        let a = self.precision();
        self.alpha.iter().map(|x| x / a).collect()
    }

    pub fn to_mean_precision(&self) -> MeanPrecision {
        MeanPrecision {
            mean: self.mean(),
            precision: self.precision(),
        }
    }
}

/// `alpha = precision * mean`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanPrecision {
    pub mean: Vec<f64>,
    pub precision: f64,
}

impl MeanPrecision {
    pub fn new(mean: Vec<f64>, precision: f64) -> Result<Self> {
        if mean.len() < 2 {
            return Err(Error::InvalidParams("need at least 2 components".into()));
        }
        if mean.iter().any(|m| m.is_nan() || *m <= 0.0) {
            return Err(Error::InvalidParams("mean must be interior".into()));
        }
        let s: f64 = mean.iter().sum();
        if (s - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidParams(format!("mean sums to {s}")));
        }
        if !(precision.is_finite() && precision > 0.0) {
            return Err(Error::InvalidParams(format!(
                "precision must be positive, got {precision}"
            )));
        }
        Ok(Self { mean, precision })
    }

    pub fn alpha(&self) -> Vec<f64> {
        self.mean.iter().map(|m| m * self.precision).collect()
    }

    pub fn to_params(&self) -> Result<DirichletParams> {
        DirichletParams::new(self.alpha())
    }
}

/// Log density of `x` under `Dir(alpha)`.
///
/// A zero part is allowed only when its `alpha_j >= 1`; with `alpha_j > 1`
/// the density there is zero and `-inf` is returned.
pub fn dd_log_density(x: &[f64], p: &DirichletParams) -> Result<f64> {
    if x.len() != p.len() {
        return Err(Error::InvalidParams(format!(
            "point has {} parts, parameters have {}",
            x.len(),
            p.len()
        )));
    }
    let mut acc = -ln_multivariate_beta(&p.alpha);
    for (j, (&xj, &aj)) in x.iter().zip(&p.alpha).enumerate() {
        if xj < 0.0 || !xj.is_finite() {
            return Err(Error::InvalidComposition(format!("part {j} is {xj}")));
        }
        if xj == 0.0 {
            if aj < 1.0 {
                return Err(Error::BoundaryPoint(j));
            }
            if aj > 1.0 {
                return Ok(f64::NEG_INFINITY);
            }
            continue;
        }
        acc += (aj - 1.0) * xj.ln();
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

pub fn dd_moments(p: &DirichletParams) -> Moments {
    let a = p.precision();
    let mean = p.mean();
    let k = mean.len();
    let mut covariance = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            covariance[i][j] = if i == j {
                mean[i] * (1.0 - mean[i]) / (a + 1.0)
            } else {
                -mean[i] * mean[j] / (a + 1.0)
            };
        }
    }
    let variance = (0..k).map(|i| covariance[i][i]).collect();
    Moments {
        mean,
        variance,
        covariance,
    }
}

pub fn dd_loglik<R: AsRef<[f64]>>(data: &[R], p: &DirichletParams) -> Result<f64> {
    data.iter().map(|x| dd_log_density(x.as_ref(), p)).sum()
}

/// Sufficient statistics of interior Dirichlet rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SuffStats {
    pub n: usize,
    /// Per-component mean of `ln x_j`.
    pub mean_log: Vec<f64>,
    /// Per-component arithmetic mean.
    pub mean: Vec<f64>,
    /// Sample variance (divisor `n`) of the first component.
    pub var_first: f64,
}

impl SuffStats {
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InsufficientData("no rows".into()));
        }
        let k = rows[0].as_ref().len();
        if k < 2 {
            return Err(Error::InsufficientData("rows need at least 2 parts".into()));
        }
        let mut mean_log = vec![0.0; k];
        let mut mean = vec![0.0; k];
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != k {
                return Err(Error::InvalidComposition(format!(
                    "row {i} has {} parts, expected {k}",
                    r.len()
                )));
            }
            for (j, &x) in r.iter().enumerate() {
                if !(x.is_finite() && x > 0.0) {
                    return Err(Error::InvalidComposition(format!(
                        "row {i} part {j} = {x} is not interior"
                    )));
                }
                mean_log[j] += x.ln();
                mean[j] += x;
            }
        }
        let nf = n as f64;
        mean_log.iter_mut().for_each(|v| *v /= nf);
        mean.iter_mut().for_each(|v| *v /= nf);
        let var_first = rows
            .iter()
            .map(|r| (r.as_ref()[0] - mean[0]).powi(2))
            .sum::<f64>()
            / nf;
        Ok(Self {
            n,
            mean_log,
            mean,
            var_first,
        })
    }

    pub fn k(&self) -> usize {
        self.mean_log.len()
    }

    /// Total log-likelihood of the rows under `alpha`.
    pub fn loglik(&self, alpha: &[f64]) -> f64 {
        let a: f64 = alpha.iter().sum();
        let per_row = ln_gamma(a)
            + alpha
                .iter()
                .zip(&self.mean_log)
                .map(|(&aj, &t)| (aj - 1.0) * t - ln_gamma(aj))
                .sum::<f64>();
        self.n as f64 * per_row
    }

    pub fn loglik_mp(&self, mean: &[f64], precision: f64) -> f64 {
        let alpha: Vec<f64> = mean.iter().map(|m| m * precision).collect();
        self.loglik(&alpha)
    }

    /// Gradient of the total log-likelihood in `alpha`.
    pub fn gradient_alpha(&self, alpha: &[f64]) -> Vec<f64> {
        let psi_a = digamma(alpha.iter().sum());
        let nf = self.n as f64;
        alpha
            .iter()
            .zip(&self.mean_log)
            .map(|(&aj, &t)| nf * (psi_a - digamma(aj) + t))
            .collect()
    }

    /// Gradient in `(mean, ln precision)`, with the mean coordinates treated
    /// as free (off-simplex) variables and the precision held separately.
    pub fn gradient_mean_log_precision(&self, mean: &[f64], precision: f64) -> (Vec<f64>, f64) {
        let nf = self.n as f64;
        let a = precision;
        let g_mean = mean
            .iter()
            .zip(&self.mean_log)
            .map(|(&m, &t)| nf * a * (t - digamma(a * m)))
            .collect();
        let dlda = digamma(a)
            + mean
                .iter()
                .zip(&self.mean_log)
                .map(|(&m, &t)| m * (t - digamma(a * m)))
                .sum::<f64>();
        (g_mean, nf * a * dlda)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Stop when the relative log-likelihood change drops below this.
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Precision is not allowed to exceed this; hitting it flags the fit
    /// as degenerate.
    pub precision_cap: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_iter: 500,
            precision_cap: 1e8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdFit {
    pub params: MeanPrecision,
    pub loglik: f64,
    pub n: usize,
    pub iterations: usize,
    /// Euclidean norm of the log-likelihood gradient in `alpha`.
    pub grad_norm: f64,
    /// Set when the precision ran into the cap (e.g. identical rows).
    pub degenerate: bool,
}

pub fn dd_mle<R: AsRef<[f64]>>(data: &[R]) -> Result<DdFit> {
    dd_mle_stats(&SuffStats::from_rows(data)?, &FitOptions::default())
}

pub fn dd_mle_stats(stats: &SuffStats, opts: &FitOptions) -> Result<DdFit> {
    if stats.n < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 rows to fit, got {}",
            stats.n
        )));
    }
    let mut mean = interior_mean(&stats.mean);
    let mut precision = moment_precision(stats, &mean, opts.precision_cap);
    let mut prev = stats.loglik_mp(&mean, precision);
    let mut iterations = 0;
    let mut converged = false;
    let mut degenerate = false;

    while iterations < opts.max_iter {
        iterations += 1;
        let (a, capped) = fixed_mean_stats(stats, &mean, precision, opts.precision_cap)?;
        precision = a;
        mean = fixed_precision_stats(stats, precision)?;
        if capped {
            degenerate = true;
            break;
        }
        let cur = stats.loglik_mp(&mean, precision);
        if (cur - prev).abs() <= opts.rel_tol * cur.abs().max(1.0) {
            converged = true;
            break;
        }
        prev = cur;
    }

    let mut alpha: Vec<f64> = mean.iter().map(|m| m * precision).collect();
    if !degenerate {
        alpha = newton_polish(stats, alpha, opts.precision_cap);
        let total: f64 = alpha.iter().sum();
        if total >= opts.precision_cap {
            degenerate = true;
        }
    }
    let grad_norm = norm(&stats.gradient_alpha(&alpha));
    let scale = stats.n as f64;
    if !converged && !degenerate && grad_norm > 1e-6 * scale {
        return Err(Error::NonConvergence {
            iterations,
            grad_norm,
        });
    }
    let precision: f64 = alpha.iter().sum();
    let params = MeanPrecision {
        mean: alpha.iter().map(|a| a / precision).collect(),
        precision,
    };
    Ok(DdFit {
        loglik: stats.loglik(&alpha),
        params,
        n: stats.n,
        iterations,
        grad_norm,
        degenerate,
    })
}

/// Maximizes the log-likelihood over the precision with the mean fixed.
pub fn mle_fixed_mean<R: AsRef<[f64]>>(data: &[R], mean: &[f64]) -> Result<f64> {
    let stats = SuffStats::from_rows(data)?;
    check_mean(mean, stats.k())?;
    Ok(fixed_mean_stats(&stats, mean, stats.k() as f64, FitOptions::default().precision_cap)?.0)
}

/// Maximizes the log-likelihood over the mean with the precision fixed.
pub fn mle_fixed_precision<R: AsRef<[f64]>>(data: &[R], precision: f64) -> Result<Vec<f64>> {
    if !(precision.is_finite() && precision > 0.0) {
        return Err(Error::InvalidParams(format!(
            "precision must be positive, got {precision}"
        )));
    }
    fixed_precision_stats(&SuffStats::from_rows(data)?, precision)
}

fn check_mean(mean: &[f64], k: usize) -> Result<()> {
    if mean.len() != k {
        return Err(Error::InvalidParams(format!(
            "mean has {} parts, data has {k}",
            mean.len()
        )));
    }
    if mean.iter().any(|m| m.is_nan() || *m <= 0.0) {
        return Err(Error::InvalidParams("mean must be interior".into()));
    }
    Ok(())
}

/// Safeguarded Newton in `ln A` on the precision score. Returns the
/// maximizer and whether it was clipped at `cap`.
pub(crate) fn fixed_mean_stats(
    stats: &SuffStats,
    mean: &[f64],
    start: f64,
    cap: f64,
) -> Result<(f64, bool)> {
    let weighted_t: f64 = mean.iter().zip(&stats.mean_log).map(|(m, t)| m * t).sum();
    // score(A) / n, decreasing in A
    let score = |a: f64| {
        digamma(a) - mean.iter().map(|&m| m * digamma(a * m)).sum::<f64>() + weighted_t
    };
    let slope = |a: f64| trigamma(a) - mean.iter().map(|&m| m * m * trigamma(a * m)).sum::<f64>();

    if score(cap) >= 0.0 {
        return Ok((cap, true));
    }
    let root = solve_decreasing_log(score, slope, start, cap.ln()).ok_or(
        Error::NonConvergence {
            iterations: ROOT_MAX_ITER,
            grad_norm: f64::NAN,
        },
    )?;
    Ok((root, false))
}

const ROOT_MAX_ITER: usize = 200;

/// Finds the root of a decreasing function `f` over `x = e^u`, starting at
/// `x0` with the upper end of the search limited to `ln_cap`.
fn solve_decreasing_log(
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    x0: f64,
    ln_cap: f64,
) -> Option<f64> {
    let mut lo = f64::NEG_INFINITY; // f > 0
    let mut hi = ln_cap; // f < 0
    let mut u: f64 = x0.ln().min(ln_cap);
    for _ in 0..ROOT_MAX_ITER {
        let x = u.exp();
        let fx = f(x);
        if fx == 0.0 {
            return Some(x);
        }
        if fx > 0.0 {
            lo = lo.max(u);
        } else {
            hi = hi.min(u);
        }
        let d = x * df(x);
        let mut next = if d < 0.0 { u - fx / d } else { f64::NAN };
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if lo.is_finite() {
                0.5 * (lo + hi)
            } else {
                u.min(hi) - 2.0
            };
        }
        if (next - u).abs() < 1e-15 * u.abs().max(1.0) {
            return Some(next.exp());
        }
        u = next;
    }
    None
}

/// Exact maximization over the mean on the simplex for a fixed precision:
/// `digamma(A m_j) = T_j + mu` with `mu` chosen so the mean sums to one.
pub(crate) fn fixed_precision_stats(stats: &SuffStats, precision: f64) -> Result<Vec<f64>> {
    let t = &stats.mean_log;
    let total = |mu: f64| t.iter().map(|&tj| inv_digamma(tj + mu)).sum::<f64>();
    let deriv = |mu: f64| {
        t.iter()
            .map(|&tj| 1.0 / trigamma(inv_digamma(tj + mu)))
            .sum::<f64>()
    };
    // Start from the digamma of the precision; the Newton map on this
    // increasing, concave-ish function is well behaved from either side.
    let mut mu = digamma(precision);
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    let mut converged = false;
    for _ in 0..ROOT_MAX_ITER {
        let h = total(mu) - precision;
        if h > 0.0 {
            hi = hi.min(mu);
        } else {
            lo = lo.max(mu);
        }
        let mut next = mu - h / deriv(mu);
        if !(next > lo && next < hi) || !next.is_finite() {
            next = match (lo.is_finite(), hi.is_finite()) {
                (true, true) => 0.5 * (lo + hi),
                (true, false) => lo + 1.0,
                _ => hi - 1.0,
            };
        }
        let done = (next - mu).abs() <= 1e-15 * next.abs().max(1.0) || h.abs() <= 1e-14 * precision;
        mu = next;
        if done {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations: ROOT_MAX_ITER,
            grad_norm: f64::NAN,
        });
    }
    let raw: Vec<f64> = t.iter().map(|&tj| inv_digamma(tj + mu)).collect();
    let s: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|a| a / s).collect())
}

/// Common mean for several groups, each with its own fixed precision:
/// maximizes `sum_g loglik_g(mean, A_g)` over the simplex.
pub(crate) fn common_mean_stats(groups: &[(&SuffStats, f64)], start: &[f64]) -> Result<Vec<f64>> {
    if let [(stats, a)] = groups {
        return fixed_precision_stats(stats, *a);
    }
    let k = start.len();
    // stationarity: sum_g n_g A_g digamma(A_g m_j) = R_j + mu
    let r: Vec<f64> = (0..k)
        .map(|j| {
            groups
                .iter()
                .map(|(s, a)| s.n as f64 * a * s.mean_log[j])
                .sum()
        })
        .collect();
    let weight: f64 = groups.iter().map(|(s, a)| s.n as f64 * a).sum();
    let lhs = |m: f64| -> f64 {
        groups
            .iter()
            .map(|(s, a)| s.n as f64 * a * digamma(a * m))
            .sum()
    };
    let lhs_d = |m: f64| -> f64 {
        groups
            .iter()
            .map(|(s, a)| s.n as f64 * a * a * trigamma(a * m))
            .sum()
    };
    let mut m = start.to_vec();
    let solve_part = |target: f64, guess: f64| -> f64 {
        // lhs increasing in m; Newton in ln m with bisection fallback
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        let mut u = guess.ln();
        for _ in 0..ROOT_MAX_ITER {
            let x = u.exp();
            let h = lhs(x) - target;
            if h > 0.0 {
                hi = hi.min(u);
            } else {
                lo = lo.max(u);
            }
            let mut next = u - h / (x * lhs_d(x));
            if !(next > lo && next < hi) || !next.is_finite() {
                next = match (lo.is_finite(), hi.is_finite()) {
                    (true, true) => 0.5 * (lo + hi),
                    (true, false) => lo + 1.0,
                    _ => hi - 1.0,
                };
            }
            if (next - u).abs() <= 1e-15 * u.abs().max(1.0) {
                return next.exp();
            }
            u = next;
        }
        u.exp()
    };
    let mut mu = (0..k).map(|j| lhs(m[j]) - r[j]).sum::<f64>() / k as f64;
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for _ in 0..ROOT_MAX_ITER {
        for j in 0..k {
            m[j] = solve_part(r[j] + mu, m[j]);
        }
        let h: f64 = m.iter().sum::<f64>() - 1.0;
        if h > 0.0 {
            hi = hi.min(mu);
        } else {
            lo = lo.max(mu);
        }
        if h.abs() <= 1e-15 {
            break;
        }
        let dh: f64 = m.iter().map(|&x| 1.0 / lhs_d(x)).sum();
        let mut next = mu - h / dh;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = match (lo.is_finite(), hi.is_finite()) {
                (true, true) => 0.5 * (lo + hi),
                (true, false) => lo + weight,
                _ => hi - weight,
            };
        }
        if (next - mu).abs() <= 1e-15 * mu.abs().max(weight) {
            break;
        }
        mu = next;
    }
    let s: f64 = m.iter().sum();
    Ok(m.into_iter().map(|x| x / s).collect())
}

fn interior_mean(mean: &[f64]) -> Vec<f64> {
    let m: Vec<f64> = mean.iter().map(|&x| x.max(1e-12)).collect();
    let s: f64 = m.iter().sum();
    m.into_iter().map(|x| x / s).collect()
}

/// Method-of-moments precision from the variance of the first component.
fn moment_precision(stats: &SuffStats, mean: &[f64], cap: f64) -> f64 {
    let m = mean[0];
    let a = if stats.var_first > 0.0 {
        m * (1.0 - m) / stats.var_first - 1.0
    } else {
        f64::NAN
    };
    if a.is_finite() && a > 0.0 {
        a.min(cap * 0.5)
    } else {
        stats.k() as f64
    }
}

// Newton steps in alpha using the diagonal-plus-rank-one Hessian.
fn newton_polish(stats: &SuffStats, mut alpha: Vec<f64>, cap: f64) -> Vec<f64> {
    let nf = stats.n as f64;
    let mut ll = stats.loglik(&alpha);
    for _ in 0..50 {
        let g = stats.gradient_alpha(&alpha);
        if norm(&g) <= 1e-12 * nf {
            break;
        }
        let q: Vec<f64> = alpha.iter().map(|&a| -nf * trigamma(a)).collect();
        let z = nf * trigamma(alpha.iter().sum());
        let b = g.iter().zip(&q).map(|(g, q)| g / q).sum::<f64>()
            / (1.0 / z + q.iter().map(|q| 1.0 / q).sum::<f64>());
        let step: Vec<f64> = g.iter().zip(&q).map(|(g, q)| (g - b) / q).collect();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = alpha.iter().zip(&step).map(|(a, s)| a - t * s).collect();
            if cand.iter().all(|&a| a > 0.0) && cand.iter().sum::<f64>() <= cap {
                let cl = stats.loglik(&cand);
                if cl >= ll {
                    alpha = cand;
                    ll = cl;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    alpha
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
