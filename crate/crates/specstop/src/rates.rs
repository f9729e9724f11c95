//! Closed-form theory: source elements, minimax rates, the adaptive-rule
//! error bound, deterministic limit weights and the exact bias-variance
//! risk.

use crate::error::{Error, Result};
use crate::operator::SpectralProblem;
use crate::stopping::{weight_recursion, WeightSequence};

/// How the source coefficients ξ are spread across components. The
/// solution is x̂_j = σ_j^ν ξ_j with ‖ξ‖ = ρ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceProfile {
    /// All mass on one 1-based index.
    SingleIndex(usize),
    /// Equal mass on the first J components.
    Flat(usize),
    /// ξ_j ∝ r^j, normalised.
    Geometric(f64),
    /// ξ_j ∝ j^{−alpha}, normalised. alpha = 1/2 spreads mass like the
    /// worst-case element over a finite window.
    PowerLaw(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct SourceSpec {
    pub nu: f64,
    pub rho: f64,
    pub profile: SourceProfile,
}

/// Rate parameters shared by the bound evaluators.
#[derive(Debug, Clone, Copy)]
pub struct RateParams {
    pub q: f64,
    pub p: f64,
    pub nu: f64,
    pub rho: f64,
    pub eps1: f64,
    pub eps2: f64,
    /// Multiplicative constant of the adaptive-rule bound; the theory
    /// proves existence, the caller picks the value (default 1).
    pub big_l: f64,
}

impl RateParams {
    pub fn new(q: f64, p: f64, nu: f64, rho: f64) -> Self {
        RateParams {
            q,
            p,
            nu,
            rho,
            eps1: 0.5,
            eps2: 0.1,
            big_l: 1.0,
        }
    }
}

/// Builds x̂ with smoothness (ν, ρ) relative to the operator:
/// Σ_j (x̂_j / σ_j^ν)² = ρ² holds by construction.
pub fn make_source_element(sigma: &[f64], spec: &SourceSpec) -> Result<Vec<f64>> {
    let m = sigma.len();
    if !(spec.nu > 0.0 && spec.rho > 0.0) {
        return Err(Error::invalid("source needs nu > 0 and rho > 0"));
    }
    let xi: Vec<f64> = match spec.profile {
        SourceProfile::SingleIndex(j0) => {
            if j0 == 0 || j0 > m {
                return Err(Error::invalid(format!("source index {j0} out of range")));
            }
            let mut xi = vec![0.0; m];
            xi[j0 - 1] = spec.rho;
            xi
        }
        SourceProfile::Flat(cap) => {
            if cap == 0 || cap > m {
                return Err(Error::invalid(format!(
                    "flat source width {cap} out of range"
                )));
            }
            let v = spec.rho / (cap as f64).sqrt();
            (0..m).map(|j| if j < cap { v } else { 0.0 }).collect()
        }
        SourceProfile::Geometric(r) => {
            if !(r > 0.0) || !r.is_finite() {
                return Err(Error::invalid("geometric ratio must be positive"));
            }
            let raw: Vec<f64> = (1..=m).map(|j| r.powi(j as i32)).collect();
            normalise(raw, spec.rho)?
        }
        SourceProfile::PowerLaw(alpha) => {
            if !alpha.is_finite() {
                return Err(Error::invalid("power-law exponent must be finite"));
            }
            let raw: Vec<f64> = (1..=m).map(|j| (j as f64).powf(-alpha)).collect();
            normalise(raw, spec.rho)?
        }
    };
    Ok(sigma
        .iter()
        .zip(xi)
        .map(|(s, x)| s.powf(spec.nu) * x)
        .collect())
}

fn normalise(raw: Vec<f64>, rho: f64) -> Result<Vec<f64>> {
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::invalid("source profile has zero or non-finite mass"));
    }
    Ok(raw.into_iter().map(|x| x * rho / norm).collect())
}

/// Which branch of the minimax rate applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateBranch {
    /// q − p < −1: the averaged problem is effectively well posed.
    OneOverN,
    /// q − p = −1 exactly.
    LogOverN,
    /// q − p > −1: power-law rate limited by the smoothness.
    PowerLaw,
}

impl RateBranch {
    pub fn label(&self) -> &'static str {
        match self {
            RateBranch::OneOverN => "one_over_n",
            RateBranch::LogOverN => "log_over_n",
            RateBranch::PowerLaw => "power_law",
        }
    }
}

fn check_rate_params(params: &RateParams) -> Result<()> {
    if !(params.q > 0.0 && params.p > 1.0 && params.nu > 0.0 && params.rho > 0.0) {
        return Err(Error::invalid("rate needs q > 0, p > 1, nu > 0, rho > 0"));
    }
    Ok(())
}

/// Optimal risk over truncation levels on the smoothness class, as a
/// function of the number of measurements (risk scale; the error scale is
/// its square root). The boundary branch fires only on exact equality
/// q − p = −1 at working precision.
pub fn minimax_rate(n: f64, params: &RateParams) -> Result<(RateBranch, f64)> {
    check_rate_params(params)?;
    if !(n >= 2.0) {
        return Err(Error::invalid("minimax rate needs n >= 2"));
    }
    let (q, p, nu, rho) = (params.q, params.p, params.nu, params.rho);
    let gap = q - p;
    if gap < -1.0 {
        Ok((RateBranch::OneOverN, 1.0 / n))
    } else if gap == -1.0 {
        Ok((RateBranch::LogOverN, (n * rho).ln() / n))
    } else {
        let rate = rho.powf((q + 1.0 - p) / ((nu + 1.0) * q + 1.0 - p))
            * (1.0 / n).powf(nu / (nu + 1.0 - (p - 1.0) / q));
        Ok((RateBranch::PowerLaw, rate))
    }
}

/// High-probability error bound of the adaptive weighted rule:
/// L · max(smoothness term, discretisation term). The discretisation
/// exponent is +(1−ε₁)qν. A zero source radius gives a zero bound.
pub fn adaptive_rule_bound(n: f64, params: &RateParams) -> Result<f64> {
    if !(params.q > 0.0 && params.p > 1.0 && params.nu > 0.0 && params.rho >= 0.0) {
        return Err(Error::invalid("bound needs q > 0, p > 1, nu > 0, rho >= 0"));
    }
    if params.rho == 0.0 {
        return Ok(0.0);
    }
    let (q, p, nu, rho) = (params.q, params.p, params.nu, params.rho);
    let (e1, e2) = (params.eps1, params.eps2);
    if !(q > p - 1.0) || !(e2 > 0.0 && e2 < p - 1.0) || !(e1 > 0.0 && e1 < 1.0) {
        return Err(Error::invalid(
            "bound needs q > p - 1 > eps2 > 0 and eps1 in (0, 1)",
        ));
    }
    if !(n >= 2.0) {
        return Err(Error::invalid("bound needs n >= 2"));
    }
    let inv_sqrt = 1.0 / n.sqrt();
    let smooth = rho.powf((q + 1.0 + e2 - p) / ((nu + 1.0) * q + 1.0 + e2 - p))
        * inv_sqrt.powf(nu / (nu + 1.0 - (p - 1.0 - e2) / q));
    let discr = rho * inv_sqrt.powf((1.0 - e1) * q * nu);
    Ok(params.big_l * smooth.max(discr))
}

/// Deterministic limit of the adaptive weights: the recursion with the
/// true component variances in place of s², and Σ var over the finite m
/// standing in for the total noise variance.
pub fn limit_weights(var: &[f64], sigma: &[f64], eps2: f64) -> Result<WeightSequence> {
    let m = var.len().min(sigma.len());
    weight_recursion(var, sigma, eps2, m)
}

/// Bias-variance decomposition of the truncated estimator's risk:
/// (1/n) Σ_{j≤k} var_j/σ_j² + Σ_{j>k} x̂_j².
pub fn exact_risk(problem: &SpectralProblem, var: &[f64], n: usize, k: usize) -> Result<f64> {
    let m = problem.m();
    if k > m {
        return Err(Error::invalid(format!("k = {k} exceeds m = {m}")));
    }
    if n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    if var.len() < k {
        return Err(Error::invalid("variance array shorter than k"));
    }
    let variance: f64 = (0..k)
        .map(|j| var[j] / (problem.sigma[j] * problem.sigma[j]))
        .sum::<f64>()
        / n as f64;
    let bias: f64 = problem.xhat[k..].iter().map(|x| x * x).sum();
    Ok(variance + bias)
}
