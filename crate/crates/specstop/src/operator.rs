//! Forward problems in diagonalised form.
//!
//! A [`SpectralProblem`] carries the singular values of the operator
//! together with the coefficients of the exact solution and exact data in
//! the singular bases. Problems come from three constructors: synthetic
//! diagonal operators with power-law decay, the second-derivative
//! Galerkin test problem on [0,1], and the symmetrisation K = AᵀA of a
//! dense operator.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative rank tolerance below which `symmetrize` refuses the factor.
const RANK_TOL: f64 = 1e-14;

/// Per-column residual tolerance (relative to the largest singular value)
/// for an accepted decomposition.
const SVD_RESIDUAL_TOL: f64 = 1e-9;

/// Dense operator on the Galerkin grid, row-major storage.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    pub rows: usize,
    pub cols: usize,
    entries: Vec<f64>,
    /// Grid width of the box-function basis, h = 1/m.
    pub h: f64,
}

impl DenseOperator {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>, h: f64) -> Result<Self> {
        if rows == 0 || cols == 0 || entries.len() != rows * cols {
            return Err(Error::invalid("dense operator shape mismatch"));
        }
        if entries.iter().any(|e| !e.is_finite()) {
            return Err(Error::invalid("dense operator has non-finite entries"));
        }
        Ok(DenseOperator {
            rows,
            cols,
            entries,
            h,
        })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(self.rows, self.cols, self.entries.iter().copied())
    }
}

/// Singular system of a dense factor A, kept by symmetrised problems so
/// that right-hand-side measurements can be projected onto the singular
/// basis of K = AᵀA.
#[derive(Debug, Clone)]
pub struct DenseFactor {
    /// Singular values of A, nonincreasing.
    pub sigma_a: Vec<f64>,
    /// Left singular vectors of A, one column per component.
    pub u: DMatrix<f64>,
    /// Right singular vectors of A (equal to the singular basis of K).
    pub v: DMatrix<f64>,
    /// Exact right-hand side b of the Galerkin system A x = b.
    pub b: Vec<f64>,
}

impl DenseFactor {
    /// Projects a raw measurement z onto the u-basis of K = AᵀA:
    /// (Aᵀz, v_j(A)) = σ_j(A) (z, u_j(A)).
    pub fn project_measurement(&self, z: &[f64]) -> Vec<f64> {
        let m = self.sigma_a.len();
        let mut out = vec![0.0; m];
        for j in 0..m {
            let mut dot = 0.0;
            for i in 0..z.len() {
                dot += z[i] * self.u[(i, j)];
            }
            out[j] = self.sigma_a[j] * dot;
        }
        out
    }

    pub fn b_norm(&self) -> f64 {
        self.b.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Operator in diagonalised form together with ground truth.
#[derive(Debug, Clone)]
pub struct SpectralProblem {
    /// Singular values σ_j, strictly positive and nonincreasing.
    pub sigma: Vec<f64>,
    /// Coefficients (x̂, v_j) of the exact solution.
    pub xhat: Vec<f64>,
    /// Coefficients (ŷ, u_j) = σ_j (x̂, v_j) of the exact data.
    pub yhat: Vec<f64>,
    /// Nominal decay exponent with σ_j² ≍ j^{−q}, when known.
    pub decay_q: Option<f64>,
    /// Dense factor for symmetrised problems.
    pub factor: Option<DenseFactor>,
}

impl SpectralProblem {
    pub(crate) fn from_parts(
        sigma: Vec<f64>,
        xhat: Vec<f64>,
        decay_q: Option<f64>,
    ) -> Result<Self> {
        if sigma.is_empty() || sigma.len() != xhat.len() {
            return Err(Error::invalid(
                "sigma and xhat must have equal positive length",
            ));
        }
        for w in sigma.windows(2) {
            if w[1] > w[0] {
                return Err(Error::invalid("singular values must be nonincreasing"));
            }
        }
        if sigma.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid("singular values must be strictly positive"));
        }
        let yhat = sigma.iter().zip(&xhat).map(|(s, x)| s * x).collect();
        Ok(SpectralProblem {
            sigma,
            xhat,
            yhat,
            decay_q,
            factor: None,
        })
    }

    /// Component count m.
    pub fn m(&self) -> usize {
        self.sigma.len()
    }

    pub fn xhat_norm(&self) -> f64 {
        self.xhat.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Maps coefficient arrays in the v-basis back to the ambient Galerkin
    /// grid. Needs the dense factor; diagonal problems are their own
    /// ambient representation.
    pub fn reconstruct_ambient(&self, coeffs: &[f64]) -> Option<Vec<f64>> {
        let factor = self.factor.as_ref()?;
        let rows = factor.v.nrows();
        let mut out = vec![0.0; rows];
        for (j, &c) in coeffs.iter().enumerate().take(self.m()) {
            for i in 0..rows {
                out[i] += c * factor.v[(i, j)];
            }
        }
        Some(out)
    }

    /// Writes the problem as CSV (`j,sigma,xhat,yhat`, 17 significant digits).
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("j,sigma,xhat,yhat\n");
        for j in 0..self.m() {
            writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e}",
                j + 1,
                self.sigma[j],
                self.xhat[j],
                self.yhat[j]
            )
            .expect("string write");
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Reads a problem back from the CSV written by [`export_csv`].
    ///
    /// The dense factor is not part of the serialised form.
    pub fn import_csv(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut lines = text.lines();
        match lines.next() {
            Some("j,sigma,xhat,yhat") => {}
            _ => return Err(Error::invalid("problem CSV header mismatch")),
        }
        let mut sigma = Vec::new();
        let mut xhat = Vec::new();
        let mut yhat = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::invalid(format!(
                    "problem CSV row {} has {} fields",
                    lineno + 2,
                    fields.len()
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::invalid(format!("bad float {s:?} in problem CSV")))
            };
            sigma.push(parse(fields[1])?);
            xhat.push(parse(fields[2])?);
            yhat.push(parse(fields[3])?);
        }
        let problem = SpectralProblem::from_parts(sigma, xhat, None)?;
        for (a, b) in problem.yhat.iter().zip(&yhat) {
            if (a - b).abs() > 1e-12 * b.abs().max(1.0) {
                return Err(Error::invalid("problem CSV violates yhat = sigma * xhat"));
            }
        }
        Ok(problem)
    }
}

/// Builds a diagonal problem with σ_j = scale · j^{−q/2}.
pub fn make_diagonal_problem(
    m: usize,
    q: f64,
    scale: f64,
    xhat: &[f64],
) -> Result<SpectralProblem> {
    if m == 0 {
        return Err(Error::invalid("m must be positive"));
    }
    if !(q > 0.0) || !(scale > 0.0) {
        return Err(Error::invalid("q and scale must be positive"));
    }
    if xhat.len() != m {
        return Err(Error::invalid("xhat length must equal m"));
    }
    let sigma: Vec<f64> = (1..=m).map(|j| scale * (j as f64).powf(-q / 2.0)).collect();
    let mut problem = SpectralProblem::from_parts(sigma, xhat.to_vec(), Some(q))?;
    problem.decay_q = Some(q);
    Ok(problem)
}

/// Exact solution cases of the second-derivative test problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Deriv2Case {
    /// x(t) = t, y(s) = (s³ − s)/6.
    One,
    /// x(t) = eᵗ, y(s) = eˢ + (1 − e)s − 1.
    Two,
    /// x(t) = min(t, 1−t), y(s) piecewise cubic.
    Three,
}

impl Deriv2Case {
    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            1 => Ok(Deriv2Case::One),
            2 => Ok(Deriv2Case::Two),
            3 => Ok(Deriv2Case::Three),
            _ => Err(Error::invalid(format!(
                "deriv2 case must be 1, 2 or 3, got {i}"
            ))),
        }
    }
}

/// Galerkin discretisation of the integral operator with kernel
/// k(s,t) = s(t−1) for s ≤ t and t(s−1) for s > t on [0,1], using m
/// orthonormal box functions of width h = 1/m. Entries are exact
/// integrals of the kernel over cell pairs.
pub fn make_deriv2(m: usize, case: Deriv2Case) -> Result<(DenseOperator, Vec<f64>, Vec<f64>)> {
    if m < 2 {
        return Err(Error::invalid("deriv2 needs m >= 2"));
    }
    let h = 1.0 / m as f64;
    let mut entries = vec![0.0; m * m];
    for i in 1..=m {
        let fi = i as f64;
        // Closed form of (1/h) ∫∫ k(s,t) over the diagonal cell pair.
        entries[(i - 1) * m + (i - 1)] = h * h * ((fi * fi - fi + 0.25) * h - (fi - 2.0 / 3.0));
        for j in 1..i {
            let fj = j as f64;
            // For i > j the kernel is t(s−1) on the whole cell pair, so the
            // double integral factorises.
            let val = h * h * (fj - 0.5) * ((fi - 0.5) * h - 1.0);
            entries[(i - 1) * m + (j - 1)] = val;
            entries[(j - 1) * m + (i - 1)] = val;
        }
    }
    let a = DenseOperator::new(m, m, entries, h)?;

    let mut x_true = vec![0.0; m];
    let mut b = vec![0.0; m];
    let sqh = h.sqrt();
    for i in 1..=m {
        let lo = (i - 1) as f64 * h;
        let hi = i as f64 * h;
        let (xi, bi) = match case {
            Deriv2Case::One => {
                let x = (hi * hi - lo * lo) / 2.0;
                // ∫ (s³ − s)/6 ds over the cell.
                let y = ((hi.powi(4) - lo.powi(4)) / 4.0 - (hi * hi - lo * lo) / 2.0) / 6.0;
                (x, y)
            }
            Deriv2Case::Two => {
                let e = std::f64::consts::E;
                let x = hi.exp() - lo.exp();
                let y = (hi.exp() - lo.exp()) + (1.0 - e) * (hi * hi - lo * lo) / 2.0 - h;
                (x, y)
            }
            Deriv2Case::Three => {
                // x(t) = t below 1/2 and 1 − t above; the cell may straddle.
                let xm = |t: f64| t * t / 2.0;
                let xp = |t: f64| t - t * t / 2.0;
                let x = if hi <= 0.5 {
                    xm(hi) - xm(lo)
                } else if lo >= 0.5 {
                    xp(hi) - xp(lo)
                } else {
                    (xm(0.5) - xm(lo)) + (xp(hi) - xp(0.5))
                };
                let g1 = |s: f64| (s.powi(4) - 1.5 * s * s) / 24.0;
                let g2 = |s: f64| (-s.powi(4) + 4.0 * s.powi(3) - 4.5 * s * s + s) / 24.0;
                let y = if hi <= 0.5 {
                    g1(hi) - g1(lo)
                } else if lo >= 0.5 {
                    g2(hi) - g2(lo)
                } else {
                    (g1(0.5) - g1(lo)) + (g2(hi) - g2(0.5))
                };
                (x, y)
            }
        };
        x_true[i - 1] = xi / sqh;
        b[i - 1] = bi / sqh;
    }
    Ok((a, x_true, b))
}

/// Singular value decomposition with sorted values and a fixed sign
/// convention (first entry of each V column with magnitude above
/// 1e−12 · ‖column‖∞ is positive).
pub struct SvdResult {
    pub sigma: Vec<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

pub fn svd(a: &DenseOperator) -> Result<SvdResult> {
    let mat = a.to_dmatrix();
    let decomp = nalgebra::linalg::SVD::try_new(mat.clone(), true, true, f64::EPSILON, 0).ok_or(
        Error::NumericalFailure {
            residual: f64::INFINITY,
        },
    )?;
    let u_raw = decomp.u.expect("u requested");
    let vt_raw = decomp.v_t.expect("v_t requested");
    let sv = decomp.singular_values;

    let k = sv.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sv[b].partial_cmp(&sv[a]).expect("finite singular values"));

    let mut sigma = Vec::with_capacity(k);
    let mut u = DMatrix::zeros(a.rows, k);
    let mut v = DMatrix::zeros(a.cols, k);
    for (dst, &src) in order.iter().enumerate() {
        sigma.push(sv[src]);
        let mut flip = 1.0;
        let col_max = (0..a.cols)
            .map(|i| vt_raw[(src, i)].abs())
            .fold(0.0, f64::max);
        for i in 0..a.cols {
            let val = vt_raw[(src, i)];
            if val.abs() > 1e-12 * col_max {
                if val < 0.0 {
                    flip = -1.0;
                }
                break;
            }
        }
        for i in 0..a.cols {
            v[(i, dst)] = flip * vt_raw[(src, i)];
        }
        for i in 0..a.rows {
            u[(i, dst)] = flip * u_raw[(i, src)];
        }
    }

    // Accept only a decomposition that actually reproduces A column-wise.
    let tol = SVD_RESIDUAL_TOL * sigma.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    let mut worst = 0.0_f64;
    for j in 0..k {
        let mut res = 0.0_f64;
        for i in 0..a.rows {
            let mut av = 0.0;
            for l in 0..a.cols {
                av += a.get(i, l) * v[(l, j)];
            }
            res += (av - sigma[j] * u[(i, j)]).powi(2);
        }
        worst = worst.max(res.sqrt());
    }
    if worst > tol {
        return Err(Error::NumericalFailure { residual: worst });
    }
    Ok(SvdResult { sigma, u, v })
}

/// Symmetrises A x = b into K x = ŷ with K = AᵀA, expressing the exact
/// solution in the right singular basis of A. The returned problem keeps
/// the singular system so that raw measurements of b can be projected.
pub fn symmetrize(a: &DenseOperator, x_true: &[f64], b: &[f64]) -> Result<SpectralProblem> {
    if x_true.len() != a.cols || b.len() != a.rows {
        return Err(Error::invalid("x_true/b lengths do not match the operator"));
    }
    let dec = svd(a)?;
    let smax = dec.sigma[0];
    let smin = *dec.sigma.last().expect("nonempty");
    if smin < RANK_TOL * smax {
        return Err(Error::DegenerateOperator { ratio: smin / smax });
    }
    let m = dec.sigma.len();
    let sigma_k: Vec<f64> = dec.sigma.iter().map(|s| s * s).collect();
    let mut xhat = vec![0.0; m];
    for j in 0..m {
        let mut dot = 0.0;
        for i in 0..a.cols {
            dot += x_true[i] * dec.v[(i, j)];
        }
        xhat[j] = dot;
    }
    let mut problem = SpectralProblem::from_parts(sigma_k, xhat, None)?;
    problem.factor = Some(DenseFactor {
        sigma_a: dec.sigma,
        u: dec.u,
        v: dec.v,
        b: b.to_vec(),
    });
    Ok(problem)
}

/// The symmetrised second-derivative problem, decay tagged as
/// σ_j(K)² ≍ j^{−8} (the factor decays like j^{−2}).
pub fn deriv2_problem(m: usize, case: Deriv2Case) -> Result<SpectralProblem> {
    let (a, x_true, b) = make_deriv2(m, case)?;
    let mut problem = symmetrize(&a, &x_true, &b)?;
    problem.decay_q = Some(8.0);
    Ok(problem)
}

/// Least-squares slope of log(values[j]) against log(j) over the
/// 1-based index window [lo, hi].
pub fn loglog_slope(values: &[f64], lo: usize, hi: usize) -> f64 {
    let pts: Vec<(f64, f64)> = (lo..=hi.min(values.len()))
        .map(|j| ((j as f64).ln(), values[j - 1].ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    num / den
}
