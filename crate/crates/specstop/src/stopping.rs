//! Truncation-level selection rules.
//!
//! Plain discrepancy on the raw projections, the known-decay weighted
//! discrepancy, the adaptive weighted discrepancy with variance-estimated
//! weights, the a-priori choice, and the exact-risk oracle.

use crate::error::{Error, Result};
use crate::estimator::summarize;
use crate::noise::MeasurementBatch;
use crate::operator::SpectralProblem;

/// Identifies which rule produced a stopping outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    Plain,
    KnownP,
    Adaptive,
    APriori,
    Oracle,
}

/// Which argument of the min() was active when a weight was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// First argument: normalised inverse variance.
    Variance,
    /// Second argument: the bound keeping d_j σ_j nonincreasing.
    Cap,
}

/// Rescaling weights d_j together with their provenance.
#[derive(Debug, Clone)]
pub struct WeightSequence {
    pub d: Vec<f64>,
    pub eps2: f64,
    pub cap_flags: Vec<Branch>,
}

/// Result of a stopping rule: the truncation level, the rule, the noise
/// level the rule compared against and the component range it saw.
#[derive(Debug, Clone, Copy)]
pub struct StoppingOutcome {
    pub k: usize,
    pub rule: Rule,
    pub delta_used: f64,
    pub m_eff: usize,
}

/// Effective component count ⌊n^{1−ε₁}⌋, capped by the problem size.
/// Near-integer powers are snapped so that e.g. 100^{1/2} floors to 10.
pub fn effective_components(n: usize, eps1: f64, m: usize) -> usize {
    let v = (n as f64).powf(1.0 - eps1);
    let r = v.round();
    let snapped = if (v - r).abs() < 1e-9 * r.max(1.0) {
        r
    } else {
        v.floor()
    };
    (snapped as usize).min(m).max(1)
}

/// Smallest k in [0, m_eff] whose tail residual √(Σ_{j>k} mean_j²) is at
/// most delta.
pub fn plain_discrepancy(mean: &[f64], delta: f64, m_eff: usize) -> Result<StoppingOutcome> {
    if !(delta >= 0.0) {
        return Err(Error::invalid("delta must be nonnegative"));
    }
    if m_eff > mean.len() {
        return Err(Error::invalid("m_eff exceeds the component count"));
    }
    let k = first_crossing(&mean[..m_eff], None, delta);
    Ok(StoppingOutcome {
        k,
        rule: Rule::Plain,
        delta_used: delta,
        m_eff,
    })
}

/// Tail scan shared by the plain and weighted discrepancy rules. Returns
/// the smallest k whose (weighted) tail norm is ≤ delta; suffix sums are
/// accumulated right-to-left once.
fn first_crossing(mean: &[f64], weights: Option<&[f64]>, delta: f64) -> usize {
    let m = mean.len();
    let mut suffix = vec![0.0; m + 1];
    for j in (0..m).rev() {
        let w = weights.map_or(1.0, |d| d[j]);
        let term = w * mean[j];
        suffix[j] = suffix[j + 1] + term * term;
    }
    for k in 0..=m {
        if suffix[k].sqrt() <= delta {
            return k;
        }
    }
    m
}

/// Deterministic weights d_j = j^{(p−1−ε)/2} for known variance decay.
pub fn known_p_weights(p: f64, eps: f64, m_eff: usize) -> Result<WeightSequence> {
    if !(p > 1.0 + eps) || !(eps > 0.0) {
        return Err(Error::invalid("known-p weights need 0 < eps < p - 1"));
    }
    if m_eff == 0 {
        return Err(Error::invalid("m_eff must be positive"));
    }
    let expo = (p - 1.0 - eps) / 2.0;
    Ok(WeightSequence {
        d: (1..=m_eff).map(|j| (j as f64).powf(expo)).collect(),
        eps2: eps,
        cap_flags: Vec::new(),
    })
}

/// Weight recursion shared by the sample weights (driven by s²) and their
/// deterministic limit (driven by true variances):
///   d₁² = min(T / v₁, 1/σ₁²),
///   d_j² = min(j^{−(1+ε₂)} T / v_j, (σ_{j−1}²/σ_j²) d_{j−1}²),
/// with T = Σ v_j over the first m_eff components. A zero v_j with T > 0
/// sends the first branch to +∞, forcing the cap.
pub(crate) fn weight_recursion(
    v: &[f64],
    sigma: &[f64],
    eps2: f64,
    m_eff: usize,
) -> Result<WeightSequence> {
    if m_eff == 0 || m_eff > v.len() || m_eff > sigma.len() {
        return Err(Error::invalid("weight recursion needs 1 <= m_eff <= m"));
    }
    if !(eps2 > 0.0 && eps2 < 1.0) {
        return Err(Error::invalid("eps2 must lie in (0, 1)"));
    }
    let total: f64 = v[..m_eff].iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateNoise);
    }
    let mut d2 = vec![0.0; m_eff];
    let mut flags = Vec::with_capacity(m_eff);
    let variance_arg = |j: usize| -> f64 {
        if v[j] == 0.0 {
            f64::INFINITY
        } else if j == 0 {
            total / v[0]
        } else {
            ((j + 1) as f64).powf(-(1.0 + eps2)) * total / v[j]
        }
    };
    for j in 0..m_eff {
        let first = variance_arg(j);
        let second = if j == 0 {
            1.0 / (sigma[0] * sigma[0])
        } else {
            (sigma[j - 1] * sigma[j - 1]) / (sigma[j] * sigma[j]) * d2[j - 1]
        };
        if first <= second {
            d2[j] = first;
            flags.push(Branch::Variance);
        } else {
            d2[j] = second;
            flags.push(Branch::Cap);
        }
    }
    Ok(WeightSequence {
        d: d2.iter().map(|x| x.sqrt()).collect(),
        eps2,
        cap_flags: flags,
    })
}

/// Adaptive weights from estimated variances s²_{j,n}.
pub fn adaptive_weights(
    s2: &[f64],
    sigma: &[f64],
    eps2: f64,
    m_eff: usize,
) -> Result<WeightSequence> {
    weight_recursion(s2, sigma, eps2, m_eff)
}

/// Rescaled data-error estimate √(Σ_j d_j² s²_j / n) over the weighted range.
pub fn modified_noise_level(weights: &WeightSequence, s2: &[f64], n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::InsufficientSamples {
            required: 2,
            got: n,
        });
    }
    if s2.len() < weights.d.len() {
        return Err(Error::invalid("s2 shorter than the weight sequence"));
    }
    let sum: f64 = weights.d.iter().zip(s2).map(|(d, v)| d * d * v).sum();
    Ok((sum / n as f64).sqrt())
}

/// Discrepancy principle on the rescaled measurements: smallest k with
/// √(Σ_{j>k} d_j² mean_j²) ≤ delta_prime.
pub fn weighted_discrepancy(
    weights: &WeightSequence,
    mean: &[f64],
    delta_prime: f64,
    m_eff: usize,
) -> Result<StoppingOutcome> {
    if !(delta_prime >= 0.0) {
        return Err(Error::invalid("delta_prime must be nonnegative"));
    }
    if m_eff > mean.len() || m_eff > weights.d.len() {
        return Err(Error::invalid("m_eff exceeds the available components"));
    }
    let k = first_crossing(&mean[..m_eff], Some(&weights.d[..m_eff]), delta_prime);
    Ok(StoppingOutcome {
        k,
        rule: Rule::Adaptive,
        delta_used: delta_prime,
        m_eff,
    })
}

/// The full adaptive rule: estimate variances over ⌊n^{1−ε₁}⌋ components,
/// build weights, compute the rescaled noise level, stop.
pub fn run_adaptive_rule(
    batch: &MeasurementBatch,
    sigma: &[f64],
    eps1: f64,
    eps2: f64,
) -> Result<StoppingOutcome> {
    run_adaptive_rule_scaled(batch, sigma, eps1, eps2, 1.0)
}

/// Same as [`run_adaptive_rule`] with an optional multiplier on the noise
/// level (default 1 reproduces the bare rule).
pub fn run_adaptive_rule_scaled(
    batch: &MeasurementBatch,
    sigma: &[f64],
    eps1: f64,
    eps2: f64,
    tau: f64,
) -> Result<StoppingOutcome> {
    let summary = summarize(batch)?;
    adaptive_rule_from_summary(&summary, sigma, eps1, eps2, tau)
}

/// Algorithm composition on a precomputed summary; the single source of
/// truth for the adaptive rule.
pub fn adaptive_rule_from_summary(
    summary: &crate::estimator::BatchSummary,
    sigma: &[f64],
    eps1: f64,
    eps2: f64,
    tau: f64,
) -> Result<StoppingOutcome> {
    if !(eps1 > 0.0 && eps1 < 1.0) {
        return Err(Error::invalid("eps1 must lie in (0, 1)"));
    }
    let m = sigma.len().min(summary.mean.len());
    let m_n = effective_components(summary.n, eps1, m);
    if summary.s2[..m_n].iter().sum::<f64>() == 0.0 {
        // Exact-data limit: the rescaled noise level is zero and the rule
        // stops at the first component with a vanishing tail.
        let mut out = plain_discrepancy(&summary.mean[..m_n], 0.0, m_n)?;
        out.rule = Rule::Adaptive;
        return Ok(out);
    }
    let weights = adaptive_weights(&summary.s2[..m_n], &sigma[..m_n], eps2, m_n)?;
    let delta_prime = modified_noise_level(&weights, &summary.s2[..m_n], summary.n)? * tau;
    weighted_discrepancy(&weights, &summary.mean[..m_n], delta_prime, m_n)
}

/// A-priori truncation from known smoothness and decay exponents:
/// k ≍ (ρn)^{1/(νq)} when q − p ≤ −1, else k ≍ (ρn)^{1/((1+ν)q+1−p)},
/// proportionality constant 1, rounded half away from zero, at least 1.
pub fn a_priori_k(n: usize, rho: f64, nu: f64, q: f64, p: f64) -> Result<usize> {
    if n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    if !(rho > 0.0 && nu > 0.0 && q > 0.0 && p > 0.0) {
        return Err(Error::invalid("a_priori_k needs positive parameters"));
    }
    let rn = rho * n as f64;
    let expo = if q - p <= -1.0 {
        1.0 / (nu * q)
    } else {
        1.0 / ((1.0 + nu) * q + 1.0 - p)
    };
    Ok((rn.powf(expo).round() as usize).max(1))
}

/// Risk-minimising truncation with knowledge of the truth: returns the
/// smallest k in [0, m_eff] minimising the exact risk together with the
/// minimum. Components beyond m_eff contribute a constant bias term.
pub fn oracle_k(
    problem: &SpectralProblem,
    var: &[f64],
    n: usize,
    m_eff: usize,
) -> Result<(usize, f64)> {
    if n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    if m_eff > problem.m() || var.len() < m_eff {
        return Err(Error::invalid("oracle_k needs m_eff <= m and variances"));
    }
    let m = problem.m();
    // Prefix variance sums and suffix bias sums, accumulated once so that
    // ties resolve deterministically on exactly computed values.
    let mut suffix = vec![0.0; m + 1];
    for j in (0..m).rev() {
        suffix[j] = suffix[j + 1] + problem.xhat[j] * problem.xhat[j];
    }
    let mut best_k = 0usize;
    let mut best = suffix[0];
    let mut prefix = 0.0;
    for k in 1..=m_eff {
        prefix += var[k - 1] / (problem.sigma[k - 1] * problem.sigma[k - 1]);
        let risk = prefix / n as f64 + suffix[k];
        if risk < best {
            best = risk;
            best_k = k;
        }
    }
    Ok((best_k, best))
}
