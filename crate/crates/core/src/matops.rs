//! Small dense symmetric linear algebra and the box-constrained least
//! squares problem behind the monotonicity regularization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerated relative asymmetry of "symmetric" input.
pub const SYMMETRY_TOL: f64 = 1e-8;

pub fn frobenius(a: &DMatrix<f64>) -> f64 {
    a.norm()
}

/// `‖A − Aᵀ‖_F / ‖A‖_F`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let nrm = a.norm();
    if nrm == 0.0 {
        return 0.0;
    }
    (a - a.transpose()).norm() / nrm
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(Error::invalid(format!(
            "{}x{} matrix is not square",
            a.nrows(),
            a.ncols()
        )));
    }
    let asym = asymmetry(a);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(())
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column `i` belongs to `values[i]`.
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// `V f(Λ) Vᵀ`.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let m = self.values.len();
        let mut scaled = self.vectors.clone();
        for (j, &l) in self.values.iter().enumerate() {
            let s = f(l);
            for i in 0..m {
                scaled[(i, j)] *= s;
            }
        }
        &scaled * self.vectors.transpose()
    }
}

/// Cyclic Jacobi eigensolver, run until the off-diagonal Frobenius norm is
/// below `1e-12 · ‖A‖_F`.
pub fn sym_eigen(a: &DMatrix<f64>) -> Result<SymEigen> {
    check_symmetric(a)?;
    let m = a.nrows();
    let mut w = symmetrize(a);
    let mut v = DMatrix::<f64>::identity(m, m);
    let scale = w.norm();
    let target = 1e-12 * scale;
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..m {
            for q in p + 1..m {
                off += 2.0 * w[(p, q)] * w[(p, q)];
            }
        }
        if off.sqrt() <= target || scale == 0.0 {
            break;
        }
        for p in 0..m {
            for q in p + 1..m {
                let apq = w[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (w[(q, q)] - w[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..m {
                    let (wkp, wkq) = (w[(k, p)], w[(k, q)]);
                    w[(k, p)] = c * wkp - s * wkq;
                    w[(k, q)] = s * wkp + c * wkq;
                }
                for k in 0..m {
                    let (wpk, wqk) = (w[(p, k)], w[(q, k)]);
                    w[(p, k)] = c * wpk - s * wqk;
                    w[(q, k)] = s * wpk + c * wqk;
                }
                for k in 0..m {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| w[(i, i)].total_cmp(&w[(j, j)]));
    let values = order.iter().map(|&i| w[(i, i)]).collect();
    let vectors = DMatrix::from_fn(m, m, |r, c| v[(r, order[c])]);
    Ok(SymEigen { values, vectors })
}

pub fn lambda_min(a: &DMatrix<f64>) -> Result<f64> {
    Ok(sym_eigen(a)?.min())
}

/// Lower-triangular `L` with `L Lᵀ = A`.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    l: DMatrix<f64>,
}

impl SpdFactor {
    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.l * self.l.transpose()
    }

    /// `L⁻¹ B L⁻ᵀ` by two triangular solves.
    pub fn congruence_inverse(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let x = self.solve_lower(b);
        let y = self.solve_lower(&x.transpose());
        symmetrize(&y)
    }

    fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let m = self.l.nrows();
        let mut x = b.clone();
        for col in 0..x.ncols() {
            for i in 0..m {
                let mut s = x[(i, col)];
                for k in 0..i {
                    s -= self.l[(i, k)] * x[(k, col)];
                }
                x[(i, col)] = s / self.l[(i, i)];
            }
        }
        x
    }
}

pub fn cholesky_spd(a: &DMatrix<f64>) -> Result<SpdFactor> {
    check_symmetric(a)?;
    let m = a.nrows();
    let mut l = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d.is_nan() || d <= 0.0 {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..m {
            let mut s = 0.5 * (a[(i, j)] + a[(j, i)]);
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(SpdFactor { l })
}

/// `|A| = V |Λ| Vᵀ`.
pub fn matrix_abs(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&sym_eigen(a)?.apply(f64::abs)))
}

/// Upper bound mode for the box constraints of the regularization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundMode {
    /// `0 ≤ a_k ≤ min{c̄, c_k}`
    Full,
    /// `0 ≤ a_k ≤ c̄`
    Simplified,
}

/// `min ‖M − Σ a_k S_k‖_F²  s.t.  0 ≤ a_k ≤ u_k`.
#[derive(Debug, Clone)]
pub struct BoxQpProblem {
    pub matrices: Vec<DMatrix<f64>>,
    pub target: DMatrix<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BoxQpSolution {
    pub coefficients: Vec<f64>,
    pub objective: f64,
    pub sweeps: usize,
    /// Largest projected-gradient component relative to `‖∇f(0)‖`.
    pub optimality: f64,
}

impl BoxQpProblem {
    pub fn new(matrices: Vec<DMatrix<f64>>, target: DMatrix<f64>, upper: Vec<f64>) -> Result<Self> {
        if matrices.len() != upper.len() {
            return Err(Error::invalid("one bound per matrix required"));
        }
        if let Some(k) = upper.iter().position(|&u| !(u >= 0.0 && u.is_finite())) {
            return Err(Error::invalid(format!(
                "bound {k} = {} is not finite and ≥ 0",
                upper[k]
            )));
        }
        let shape = target.shape();
        if matrices.iter().any(|s| s.shape() != shape) {
            return Err(Error::invalid("matrix stack and target differ in shape"));
        }
        Ok(Self {
            matrices,
            target,
            upper,
        })
    }

    pub fn objective(&self, a: &[f64]) -> f64 {
        let mut r = self.target.clone();
        for (s, &ak) in self.matrices.iter().zip(a) {
            r -= s * ak;
        }
        r.norm_squared()
    }
}

fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Cyclic coordinate descent with the exact clipped minimizer per
/// coordinate. Converged when every projected-gradient component is at most
/// `tol · ‖∇f(0)‖`.
pub fn solve_box_qp(p: &BoxQpProblem, tol: f64, max_iter: usize) -> Result<BoxQpSolution> {
    let n = p.matrices.len();
    // f(a) = ‖M‖² − 2 bᵀa + aᵀ G a
    let gram = DMatrix::from_fn(n, n, |i, j| frob_dot(&p.matrices[i], &p.matrices[j]));
    let b = DVector::from_fn(n, |i, _| frob_dot(&p.matrices[i], &p.target));
    let m2 = p.target.norm_squared();
    let g0 = 2.0 * b.norm();
    let mut a = DVector::<f64>::zeros(n);
    // gradient/2 = G a − b, kept up to date incrementally
    let mut half_grad = -b.clone();
    let objective = |a: &DVector<f64>, hg: &DVector<f64>| (a.dot(hg) - a.dot(&b) + m2).max(0.0);
    let optimality = |a: &DVector<f64>, hg: &DVector<f64>| -> f64 {
        let mut worst = 0.0f64;
        for k in 0..n {
            let g = 2.0 * hg[k];
            let pg = if a[k] <= 0.0 {
                g.min(0.0)
            } else if a[k] >= p.upper[k] {
                g.max(0.0)
            } else {
                g
            };
            worst = worst.max(pg.abs());
        }
        if g0 > 0.0 {
            worst / g0
        } else {
            worst
        }
    };

    if n == 0 || g0 == 0.0 {
        return Ok(BoxQpSolution {
            coefficients: a.iter().copied().collect(),
            objective: m2,
            sweeps: 0,
            optimality: 0.0,
        });
    }
    let mut f = objective(&a, &half_grad);
    for sweep in 1..=max_iter {
        for k in 0..n {
            let gkk = gram[(k, k)];
            if gkk <= 0.0 {
                continue;
            }
            let new = (a[k] - half_grad[k] / gkk).clamp(0.0, p.upper[k]);
            let step = new - a[k];
            if step != 0.0 {
                a[k] = new;
                half_grad.axpy(step, &gram.column(k), 1.0);
            }
        }
        let f_new = objective(&a, &half_grad);
        debug_assert!(
            f_new <= f * (1.0 + 1e-12) + 1e-300,
            "coordinate descent increased the objective: {f} -> {f_new}"
        );
        f = f_new;
        let opt = optimality(&a, &half_grad);
        if opt <= tol {
            return Ok(BoxQpSolution {
                coefficients: a.iter().copied().collect(),
                objective: p.objective(a.as_slice()),
                sweeps: sweep,
                optimality: opt,
            });
        }
    }
    Err(Error::QpNotConverged {
        iterations: max_iter,
        residual: optimality(&a, &half_grad),
        last: a.iter().copied().collect(),
    })
}
