//! Deterministic numerical kernels: weighted least squares via QR, weighted
//! probit maximum likelihood, and standard-normal utilities.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const SEPARATION_BOUND: f64 = 15.0;
const PROBIT_MAX_ITER: usize = 100;

/// Standard normal density.
pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal CDF via erfc, accurate deep into the lower tail.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Inverse Mills ratio phi(z)/Phi(z) with a stable lower-tail branch.
///
/// For z below -30 the direct ratio is replaced by the asymptotic series
/// of the Mills ratio, which avoids 0/0 underflow entirely.
pub fn inverse_mills(z: f64) -> f64 {
    if z < -30.0 {
        // Phi(z)/phi(z) = (1/a)(1 - 1/a^2 + 3/a^4 - 15/a^6 + 105/a^8) for a = -z.
        let a = -z;
        let a2 = a * a;
        let series = 1.0 - 1.0 / a2 + 3.0 / (a2 * a2) - 15.0 / (a2 * a2 * a2)
            + 105.0 / (a2 * a2 * a2 * a2);
        a / series
    } else {
        norm_pdf(z) / norm_cdf(z)
    }
}

/// Result of a weighted least-squares fit.
#[derive(Debug, Clone)]
pub struct WlsFit {
    pub coefficients: Vec<f64>,
    pub rss: f64,
}

impl WlsFit {
    /// Fitted value at a covariate row (same layout as the design rows).
    pub fn predict(&self, row: &[f64]) -> f64 {
        row.iter()
            .zip(&self.coefficients)
            .map(|(x, b)| x * b)
            .sum()
    }
}

/// Weighted least squares solved by column-pivoted QR of the weighted design.
///
/// Rank deficiency is reported as a singular-design error naming the
/// offending (original) column index.
pub fn wls_fit(x: &[Vec<f64>], y: &[f64], w: &[f64]) -> Result<WlsFit> {
    let n = x.len();
    if n != y.len() || n != w.len() {
        return Err(Error::Dimension(format!(
            "wls_fit: {} rows, {} responses, {} weights",
            n,
            y.len(),
            w.len()
        )));
    }
    if n == 0 {
        return Err(Error::InsufficientData("wls_fit: no rows".into()));
    }
    let k = x[0].len();
    if k > n {
        return Err(Error::InsufficientData(format!(
            "wls_fit: {k} columns but only {n} rows"
        )));
    }
    let mut xm = DMatrix::<f64>::zeros(n, k);
    let mut yv = DVector::<f64>::zeros(n);
    for i in 0..n {
        if x[i].len() != k {
            return Err(Error::Dimension("wls_fit: ragged design".into()));
        }
        let sw = w[i].sqrt();
        for j in 0..k {
            xm[(i, j)] = sw * x[i][j];
        }
        yv[i] = sw * y[i];
    }

    // Unpivoted Householder QR: a rank-deficient design surfaces as a tiny
    // R diagonal at the first column that is dependent on earlier ones.
    let qr = xm.clone().qr();
    let r = qr.r();
    let scale = (0..k).map(|j| r[(j, j)].abs()).fold(1.0f64, f64::max);
    for j in 0..k {
        if r[(j, j)].abs() <= 1e-10 * scale {
            return Err(Error::SingularDesign { column: j });
        }
    }
    // Least-squares solve: beta = R^{-1} Q' y with the thin Q.
    let qty = qr.q().transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::SingularDesign { column: 0 })?;

    let resid = &xm * &beta - &yv;
    let rss = resid.norm_squared();
    Ok(WlsFit {
        coefficients: beta.iter().copied().collect(),
        rss,
    })
}

/// Result of a weighted probit maximum-likelihood fit.
#[derive(Debug, Clone)]
pub struct ProbitFit {
    pub coefficients: Vec<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl ProbitFit {
    /// Linear index x'beta for a covariate row.
    pub fn index(&self, row: &[f64]) -> f64 {
        row.iter()
            .zip(&self.coefficients)
            .map(|(x, b)| x * b)
            .sum()
    }
}

fn probit_loglik(x: &[Vec<f64>], y: &[f64], w: &[f64], beta: &DVector<f64>) -> f64 {
    let mut ll = 0.0;
    for i in 0..x.len() {
        let z: f64 = x[i].iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
        let p = norm_cdf(z).clamp(1e-300, 1.0 - 1e-16);
        ll += w[i] * if y[i] > 0.5 { p.ln() } else { (1.0 - p).ln() };
    }
    ll
}

/// Newton-Raphson maximization of the weighted probit log-likelihood with
/// step-halving, so the log-likelihood is nondecreasing across iterations.
pub fn probit_fit(x: &[Vec<f64>], y: &[f64], w: &[f64]) -> Result<ProbitFit> {
    let n = x.len();
    if n != y.len() || n != w.len() {
        return Err(Error::Dimension("probit_fit: row count mismatch".into()));
    }
    if n == 0 {
        return Err(Error::InsufficientData("probit_fit: no rows".into()));
    }
    for &yi in y {
        if yi != 0.0 && yi != 1.0 {
            return Err(Error::Data(format!("probit response {yi} not in {{0,1}}")));
        }
    }
    let k = x[0].len();
    let mut beta = DVector::<f64>::zeros(k);
    let mut ll = probit_loglik(x, y, w, &beta);
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..PROBIT_MAX_ITER {
        iterations = iter + 1;
        let mut grad = DVector::<f64>::zeros(k);
        let mut info = DMatrix::<f64>::zeros(k, k);
        for i in 0..n {
            let z: f64 = x[i].iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
            let phi = norm_pdf(z);
            let cap = norm_cdf(z).clamp(1e-12, 1.0 - 1e-12);
            let lambda = if y[i] > 0.5 {
                phi / cap
            } else {
                -phi / (1.0 - cap)
            };
            // Fisher scoring: expected information phi^2 / (Phi (1-Phi)).
            let fisher = phi * phi / (cap * (1.0 - cap));
            for a in 0..k {
                grad[a] += w[i] * lambda * x[i][a];
                for b in 0..k {
                    info[(a, b)] += w[i] * fisher * x[i][a] * x[i][b];
                }
            }
        }

        let grad_norm = grad.norm();
        if grad_norm <= 1e-8 * (1.0 + ll.abs()) {
            converged = true;
            break;
        }

        let chol = info.clone().cholesky().ok_or_else(|| {
            // Fisher information loses rank exactly when the design does.
            first_dependent_column(x, w)
        })?;
        let step = chol.solve(&grad);

        // Step-halving: accept the first scaled step that does not decrease
        // the log-likelihood.
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = &beta + scale * &step;
            let trial_ll = probit_loglik(x, y, w, &trial);
            if trial_ll >= ll - 1e-14 * (1.0 + ll.abs()) {
                let rel_change = (trial_ll - ll).abs() / (1.0 + ll.abs());
                beta = trial;
                let prev = ll;
                ll = trial_ll;
                accepted = true;
                if rel_change < 1e-10 && (ll - prev).abs() < 1e-10 * (1.0 + ll.abs()) {
                    converged = true;
                }
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            converged = true; // no ascent direction improves: at optimum
            break;
        }
        if beta.iter().any(|b| b.abs() > SEPARATION_BOUND) {
            return Err(Error::Separation(SEPARATION_BOUND));
        }
        if converged {
            break;
        }
    }

    // A log-likelihood at (numerical) zero means the model fits every
    // observation perfectly, which only happens under separation; the
    // coefficients are then drifting toward infinity regardless of where
    // the iteration happened to stop.
    if ll > -1e-6 {
        return Err(Error::Separation(SEPARATION_BOUND));
    }

    Ok(ProbitFit {
        coefficients: beta.iter().copied().collect(),
        log_likelihood: ll,
        converged,
        iterations,
    })
}

fn first_dependent_column(x: &[Vec<f64>], w: &[f64]) -> Error {
    // Re-run a pivoted QR on the raw design to name the dependent column.
    let y = vec![0.0; x.len()];
    match wls_fit(x, &y, w) {
        Err(e) => e,
        Ok(_) => Error::SingularDesign { column: 0 },
    }
}
