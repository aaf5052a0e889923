//! Monotonicity tests and monotonicity-constrained regularization.
//!
//! All semidefiniteness decisions use the relative tolerance
//! `tol_eig = 1e-8 · ‖test matrix‖_F`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::grid_fem::{ConductivityField, CrossedMesh, Point};
use crate::matops::{cholesky_spd, lambda_min, matrix_abs, solve_box_qp, BoxQpProblem, SpdFactor};
use crate::ntd::{ntd_matrix, Background, CurrentBasis, NtdMatrix, Region, SensitivityStack};

pub const TOL_EIG_REL: f64 = 1e-8;
pub const TOL_SHIFT_REL: f64 = 1e-10;
/// Support threshold relative to `c̄`.
pub const SUPPORT_REL: f64 = 1e-3;

fn tol_eig(m: &DMatrix<f64>) -> f64 {
    TOL_EIG_REL * m.norm()
}

/// Largest admissible α of the linearized test, `σ₀ − σ₀²/σ₁`.
pub fn linearized_alpha_bound(sigma0: f64, sigma1: f64) -> f64 {
    sigma0 - sigma0 * sigma0 / sigma1
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    pub fn region(&self, mesh: &CrossedMesh) -> Result<Region> {
        Region::ball(mesh, self.center, self.radius)
    }

    pub fn contains(&self, p: Point) -> bool {
        (p[0] - self.center[0]).powi(2) + (p[1] - self.center[1]).powi(2) < self.radius.powi(2)
    }
}

/// Test balls and their marking.
#[derive(Debug, Clone)]
pub struct TestBallGrid {
    pub balls: Vec<Ball>,
    pub marked: Vec<bool>,
    /// Smallest eigenvalue of each test matrix.
    pub lambda_min: Vec<f64>,
}

impl TestBallGrid {
    /// Balls centered at the midpoints of a `k × k` grid of cells.
    pub fn uniform_balls(k: usize, radius: f64) -> Vec<Ball> {
        let mut balls = Vec::with_capacity(k * k);
        for j in 0..k {
            for i in 0..k {
                balls.push(Ball {
                    center: [(i as f64 + 0.5) / k as f64, (j as f64 + 0.5) / k as f64],
                    radius,
                });
            }
        }
        balls
    }

    pub fn marked_count(&self) -> usize {
        self.marked.iter().filter(|&&m| m).count()
    }

    /// Marked balls covering the center of each pixel of an `np × np` grid.
    pub fn heat_map(&self, np: usize) -> Vec<usize> {
        let mut heat = vec![0; np * np];
        for j in 0..np {
            for i in 0..np {
                let p = [(i as f64 + 0.5) / np as f64, (j as f64 + 0.5) / np as f64];
                heat[j * np + i] = self
                    .balls
                    .iter()
                    .zip(&self.marked)
                    .filter(|(b, &m)| m && b.contains(p))
                    .count();
            }
        }
        heat
    }
}

/// Standard (non-linearized) test: `Λ̄(σ₀ + αχ_B) ⪰ Λ̄(σ)` with a fresh
/// forward solve for the test conductivity.
#[allow(clippy::too_many_arguments)]
pub fn standard_test(
    mesh: &CrossedMesh,
    basis: &CurrentBasis,
    sigma0: f64,
    sigma1: f64,
    measured: &NtdMatrix,
    ball: &Ball,
    alpha: f64,
    exec: Exec,
) -> Result<bool> {
    if !(alpha > 0.0 && alpha <= sigma1 - sigma0) {
        return Err(Error::invalid(format!(
            "alpha = {alpha} outside (0, σ₁ − σ₀ = {}]",
            sigma1 - sigma0
        )));
    }
    let region = ball.region(mesh)?;
    let test_sigma =
        ConductivityField::from_inclusion(sigma0, sigma0 + alpha, region.indicator(mesh));
    let test = ntd_matrix(mesh, &test_sigma, basis, exec)?;
    let m = &test.matrix - &measured.matrix;
    Ok(lambda_min(&m)? >= -tol_eig(&m))
}

/// Linearized scan over test balls.
///
/// `difference` is `Λ̄(σ) − Λ̄(σ₀)` (noise-free, `shift = 0`) or its noisy
/// version `Λ̄^δ` with `shift = δ`. A ball is marked iff
/// `α S_B − difference + shift · I ⪰ 0` up to `tol_eig`.
pub fn linearized_scan(
    difference: &NtdMatrix,
    stack: &SensitivityStack,
    balls: &[Ball],
    alpha: f64,
    alpha_max: f64,
    shift: f64,
    exec: Exec,
) -> Result<TestBallGrid> {
    if !(alpha > 0.0 && alpha <= alpha_max * (1.0 + 1e-12)) {
        return Err(Error::invalid(format!(
            "alpha = {alpha} outside (0, {alpha_max}]"
        )));
    }
    if !(shift >= 0.0) {
        return Err(Error::invalid("noise shift must be non-negative"));
    }
    if stack.len() != balls.len() {
        return Err(Error::invalid("one sensitivity matrix per ball required"));
    }
    let m = difference.dim();
    let base = DMatrix::<f64>::identity(m, m) * shift - &difference.matrix;
    let lambdas = exec.map(&stack.matrices, |s| -> Result<(f64, f64)> {
        let t = &base + s * alpha;
        Ok((lambda_min(&t)?, tol_eig(&t)))
    });
    let mut marked = Vec::with_capacity(balls.len());
    let mut lambda_min_out = Vec::with_capacity(balls.len());
    for r in lambdas {
        let (l, tol) = r?;
        marked.push(l >= -tol);
        lambda_min_out.push(l);
    }
    Ok(TestBallGrid {
        balls: balls.to_vec(),
        marked,
        lambda_min: lambda_min_out,
    })
}

fn bounds_from_factor(
    factor: &SpdFactor,
    stack: &SensitivityStack,
    cbar: f64,
    exec: Exec,
) -> Result<Vec<f64>> {
    exec.map(&stack.matrices, |s| -> Result<f64> {
        let l = lambda_min(&factor.congruence_inverse(s))?;
        Ok(if l < 0.0 { cbar.min(-1.0 / l) } else { cbar })
    })
    .into_iter()
    .collect()
}

/// `min{c̄, c_k}` with `c_k = −1/λ_min(L⁻¹ S_k L⁻ᵀ)`,
/// `L Lᵀ = Λ̄(σ₀) − Λ̄(σ)`.
pub fn pixel_bounds(
    background: &NtdMatrix,
    measured: &NtdMatrix,
    stack: &SensitivityStack,
    cbar: f64,
    exec: Exec,
) -> Result<Vec<f64>> {
    pixel_bounds_from_difference(&measured.difference(background), stack, cbar, exec)
}

/// [`pixel_bounds`] given `Λ̄(σ) − Λ̄(σ₀)` directly.
pub fn pixel_bounds_from_difference(
    difference: &NtdMatrix,
    stack: &SensitivityStack,
    cbar: f64,
    exec: Exec,
) -> Result<Vec<f64>> {
    if !(cbar > 0.0) {
        return Err(Error::invalid("c̄ must be positive"));
    }
    let mut a = -difference.matrix.clone();
    let lmin = lambda_min(&a)?;
    let tol_shift = TOL_SHIFT_REL * a.norm();
    if lmin <= tol_shift {
        if lmin <= -tol_shift {
            return Err(Error::DataNotMonotone { lambda_min: lmin });
        }
        let m = a.nrows();
        a += DMatrix::<f64>::identity(m, m) * tol_shift;
    }
    let factor = cholesky_spd(&a).map_err(|_| Error::DataNotMonotone { lambda_min: lmin })?;
    bounds_from_factor(&factor, stack, cbar, exec)
}

/// `min{c̄, c_k^δ}` with `L_δ L_δᵀ = |Λ̄^δ| + δI`.
pub fn pixel_bounds_noisy(
    noisy: &NtdMatrix,
    delta: f64,
    stack: &SensitivityStack,
    cbar: f64,
    exec: Exec,
) -> Result<Vec<f64>> {
    if !(delta > 0.0) {
        return Err(Error::invalid("noisy bounds need δ > 0"));
    }
    if !(cbar > 0.0) {
        return Err(Error::invalid("c̄ must be positive"));
    }
    if let Some(s) = stack.matrices.first() {
        if s.shape() != noisy.matrix.shape() {
            return Err(Error::invalid(
                "dimension mismatch between data and sensitivities",
            ));
        }
    }
    let m = noisy.dim();
    let a = matrix_abs(&noisy.matrix)? + DMatrix::<f64>::identity(m, m) * delta;
    let factor = cholesky_spd(&a)?;
    bounds_from_factor(&factor, stack, cbar, exec)
}

/// Pixel partition of the square with regularized coefficients.
#[derive(Debug, Clone)]
pub struct PixelPartition {
    /// Pixels per side; pixel `(i, j)` has index `j · np + i`.
    pub np: usize,
    pub bounds: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub support: Vec<bool>,
}

impl PixelPartition {
    pub fn pixel_center(&self, k: usize) -> Point {
        let (i, j) = (k % self.np, k / self.np);
        [
            (i as f64 + 0.5) / self.np as f64,
            (j as f64 + 0.5) / self.np as f64,
        ]
    }

    pub fn support_count(&self) -> usize {
        self.support.iter().filter(|&&s| s).count()
    }
}

/// Sensitivities of the `np × np` pixels, index `j · np + i`.
pub fn pixel_stack(
    mesh: &CrossedMesh,
    background: &Background,
    np: usize,
    exec: Exec,
) -> Result<SensitivityStack> {
    let regions = (0..np * np)
        .map(|k| Region::pixel(mesh, np, k % np, k / np))
        .collect::<Result<Vec<_>>>()?;
    Ok(background.stack(regions, exec))
}

pub fn ball_stack(
    mesh: &CrossedMesh,
    background: &Background,
    balls: &[Ball],
    exec: Exec,
) -> Result<SensitivityStack> {
    let regions = balls
        .iter()
        .map(|b| b.region(mesh))
        .collect::<Result<Vec<_>>>()?;
    Ok(background.stack(regions, exec))
}

/// Minimizes `‖target − Σ a_k S_k‖_F²` over `0 ≤ a_k ≤ bounds_k`.
pub fn regularized_reconstruction(
    target: &NtdMatrix,
    stack: &SensitivityStack,
    bounds: &[f64],
    cbar: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<PixelPartition> {
    let n = stack.len();
    let np = (n as f64).sqrt().round() as usize;
    if np * np != n {
        return Err(Error::invalid("pixel stack must be square"));
    }
    let problem = BoxQpProblem::new(
        stack.matrices.clone(),
        target.matrix.clone(),
        bounds.to_vec(),
    )?;
    let sol = solve_box_qp(&problem, tol, max_sweeps)?;
    let threshold = SUPPORT_REL * cbar;
    let support = sol.coefficients.iter().map(|&a| a > threshold).collect();
    Ok(PixelPartition {
        np,
        bounds: bounds.to_vec(),
        coefficients: sol.coefficients,
        support,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ntd::Provenance;
    use nalgebra::DVector;

    fn stack_of(ms: Vec<DMatrix<f64>>) -> SensitivityStack {
        SensitivityStack {
            regions: Vec::new(),
            matrices: ms,
        }
    }

    #[test]
    fn alpha_bound() {
        assert_eq!(linearized_alpha_bound(1.0, 2.0), 0.5);
    }

    #[test]
    fn bound_closed_forms() {
        let diff = NtdMatrix::new(-DMatrix::identity(2, 2), Provenance::Difference);
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -0.25]));
        let c = pixel_bounds_from_difference(
            &diff,
            &stack_of(vec![s.clone(), &s * 2.0]),
            10.0,
            Exec::Sequential,
        )
        .unwrap();
        assert!((c[0] - 1.0).abs() < 1e-14);
        assert!((c[1] - 0.5).abs() < 1e-14);
        let c =
            pixel_bounds_from_difference(&diff, &stack_of(vec![s]), 0.5, Exec::Sequential).unwrap();
        assert_eq!(c, vec![0.5]);

        let zero = NtdMatrix::new(DMatrix::zeros(3, 3), Provenance::Noisy);
        let c = pixel_bounds_noisy(
            &zero,
            1.0,
            &stack_of(vec![-DMatrix::identity(3, 3)]),
            5.0,
            Exec::Sequential,
        )
        .unwrap();
        assert!((c[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn noisy_bounds_grow_with_delta() {
        let noisy = NtdMatrix::new(
            DMatrix::from_row_slice(2, 2, &[-0.3, 0.1, 0.1, 0.05]),
            Provenance::Noisy,
        );
        let s = DMatrix::from_row_slice(2, 2, &[-1.0, 0.2, 0.2, -0.5]);
        let mut last = 0.0;
        for delta in [0.01, 0.1, 1.0, 10.0] {
            let c = pixel_bounds_noisy(
                &noisy,
                delta,
                &stack_of(vec![s.clone()]),
                1e9,
                Exec::Sequential,
            )
            .unwrap()[0];
            assert!(c > last);
            last = c;
        }
    }

    #[test]
    fn inconsistent_data_is_rejected() {
        let diff = NtdMatrix::new(DMatrix::identity(2, 2), Provenance::Difference);
        assert!(matches!(
            pixel_bounds_from_difference(
                &diff,
                &stack_of(vec![-DMatrix::identity(2, 2)]),
                0.5,
                Exec::Sequential
            ),
            Err(Error::DataNotMonotone { .. })
        ));
    }

    #[test]
    fn zero_target_gives_empty_support() {
        let s = vec![
            -DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 0.0]),
            DMatrix::zeros(2, 2),
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -2.0]),
        ];
        let target = NtdMatrix::new(DMatrix::zeros(2, 2), Provenance::Difference);
        let p = regularized_reconstruction(&target, &stack_of(s), &[0.5; 4], 0.5, 1e-10, 100_000)
            .unwrap();
        assert_eq!(p.support_count(), 0);
        assert_eq!(p.np, 2);
    }

    #[test]
    fn scan_rejects_bad_alpha() {
        let d = NtdMatrix::new(DMatrix::zeros(2, 2), Provenance::Difference);
        let balls = TestBallGrid::uniform_balls(1, 0.1);
        let st = stack_of(vec![-DMatrix::identity(2, 2)]);
        assert!(linearized_scan(&d, &st, &balls, 0.6, 0.5, 0.0, Exec::Sequential).is_err());
        assert!(linearized_scan(&d, &st, &balls, 0.0, 0.5, 0.0, Exec::Sequential).is_err());
        let g = linearized_scan(&d, &st, &balls, 0.5, 0.5, 0.0, Exec::Sequential).unwrap();
        assert_eq!(g.marked, vec![false]);
    }

    #[test]
    fn uniform_balls_layout() {
        let balls = TestBallGrid::uniform_balls(10, 0.05);
        assert_eq!(balls.len(), 100);
        assert_eq!(balls[0].center, [0.05, 0.05]);
        assert!(balls
            .iter()
            .all(|b| b.center[0] - b.radius >= -1e-15 && b.center[1] + b.radius <= 1.0 + 1e-15));
    }
}
