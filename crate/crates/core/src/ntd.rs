//! Boundary currents, Galerkin-projected Neumann-to-Dirichlet matrices,
//! Fréchet-derivative sensitivities and the two noise models.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::grid_fem::{
    boundary_inner_product, BoundaryFunction, BoundaryRole, ConductivityField, CrossedMesh,
    NeumannSolver, Point, PotentialField, Segment,
};
use crate::matops::symmetrize;

/// `g_k = sin(kπy)` on x=0, `−sin(kπy)` on x=1, `cos(kπx)` on y=0 and
/// `−cos(kπx)` on y=1.
pub fn analytic_current(mesh: &CrossedMesh, k: usize) -> BoundaryFunction {
    let kp = k as f64 * PI;
    BoundaryFunction::from_segments(mesh, BoundaryRole::Current, |seg, [x, y]| match seg {
        Segment::Left => (kp * y).sin(),
        Segment::Right => -(kp * y).sin(),
        Segment::Bottom => (kp * x).cos(),
        Segment::Top => -(kp * x).cos(),
    })
}

/// The currents `g_1 … g_m`, optionally Gram–Schmidt orthonormalized in the
/// boundary inner product.
///
/// The orthonormalization is stored as a lower-triangular mixing matrix
/// over the analytic currents so the same basis can be re-evaluated on a
/// different mesh with [`CurrentBasis::on_mesh`].
#[derive(Debug, Clone)]
pub struct CurrentBasis {
    currents: Vec<BoundaryFunction>,
    mixing: DMatrix<f64>,
    orthonormal: bool,
}

impl CurrentBasis {
    pub fn new(mesh: &CrossedMesh, m: usize, orthonormalize: bool) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("at least one current is required"));
        }
        if m > mesh.boundary_nodes().len() {
            return Err(Error::invalid(format!(
                "{m} currents exceed the {} boundary nodes",
                mesh.boundary_nodes().len()
            )));
        }
        let raw: Vec<BoundaryFunction> = (1..=m).map(|k| analytic_current(mesh, k)).collect();
        let mut mixing = DMatrix::<f64>::identity(m, m);
        let mut currents = raw.clone();
        if orthonormalize {
            // Modified Gram–Schmidt; row i of `mixing` expresses current i
            // in terms of the analytic ones.
            for i in 0..m {
                for j in 0..i {
                    let proj = boundary_inner_product(mesh, &currents[i], &currents[j])?;
                    let (head, tail) = currents.split_at_mut(i);
                    tail[0].axpy(-proj, &head[j]);
                    for c in 0..m {
                        mixing[(i, c)] -= proj * mixing[(j, c)];
                    }
                }
                let nrm = boundary_inner_product(mesh, &currents[i], &currents[i])?.sqrt();
                if nrm < 1e-12 {
                    return Err(Error::invalid(format!(
                        "current {} is linearly dependent",
                        i + 1
                    )));
                }
                currents[i].scale(1.0 / nrm);
                for c in 0..m {
                    mixing[(i, c)] /= nrm;
                }
            }
        }
        Ok(Self {
            currents,
            mixing,
            orthonormal: orthonormalize,
        })
    }

    /// The same linear combinations of analytic currents sampled on `mesh`.
    pub fn on_mesh(&self, mesh: &CrossedMesh) -> Self {
        let m = self.len();
        let raw: Vec<BoundaryFunction> = (1..=m).map(|k| analytic_current(mesh, k)).collect();
        let currents = (0..m)
            .map(|i| {
                let mut g = BoundaryFunction::zeros(mesh, BoundaryRole::Current);
                for (c, raw_c) in raw.iter().enumerate() {
                    let w = self.mixing[(i, c)];
                    if w != 0.0 {
                        g.axpy(w, raw_c);
                    }
                }
                g
            })
            .collect();
        Self {
            currents,
            mixing: self.mixing.clone(),
            orthonormal: self.orthonormal,
        }
    }

    pub fn currents(&self) -> &[BoundaryFunction] {
        &self.currents
    }

    pub fn len(&self) -> usize {
        self.currents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.currents.is_empty()
    }

    pub fn is_orthonormal(&self) -> bool {
        self.orthonormal
    }

    pub fn gram(&self, mesh: &CrossedMesh) -> Result<DMatrix<f64>> {
        let m = self.len();
        let mut g = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                g[(i, j)] = boundary_inner_product(mesh, &self.currents[i], &self.currents[j])?;
            }
        }
        Ok(g)
    }
}

pub fn make_current_basis(
    mesh: &CrossedMesh,
    m: usize,
    orthonormalize: bool,
) -> Result<CurrentBasis> {
    CurrentBasis::new(mesh, m, orthonormalize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// `Λ̄(σ)`
    Exact,
    /// `Λ̄(σ) − Λ̄(σ₀)`
    Difference,
    /// `Λ̄'(σ₀) χ_B`
    Sensitivity,
    /// `Λ̄^δ`
    Noisy,
}

impl Provenance {
    fn as_str(self) -> &'static str {
        match self {
            Provenance::Exact => "exact",
            Provenance::Difference => "difference",
            Provenance::Sensitivity => "sensitivity",
            Provenance::Noisy => "noisy",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "exact" => Provenance::Exact,
            "difference" => Provenance::Difference,
            "sensitivity" => Provenance::Sensitivity,
            "noisy" => Provenance::Noisy,
            other => return Err(Error::Parse(format!("unknown provenance '{other}'"))),
        })
    }
}

/// A symmetric `m × m` Galerkin matrix with its provenance and noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct NtdMatrix {
    pub matrix: DMatrix<f64>,
    pub provenance: Provenance,
    /// Relative operator noise level δ.
    pub delta: f64,
    /// Frobenius norm of the added perturbation, `δ ‖Λ̄(σ) − Λ̄(σ₀)‖_F`.
    pub noise_level: f64,
}

impl NtdMatrix {
    pub fn new(matrix: DMatrix<f64>, provenance: Provenance) -> Self {
        Self {
            matrix,
            provenance,
            delta: 0.0,
            noise_level: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `self − other`, tagged as a difference.
    pub fn difference(&self, other: &NtdMatrix) -> NtdMatrix {
        NtdMatrix::new(&self.matrix - &other.matrix, Provenance::Difference)
    }

    /// Plain-text form: `#` header lines carrying `m`, `delta` and
    /// `provenance`, then one row per line in scientific notation.
    pub fn to_text(&self) -> String {
        let m = self.dim();
        let mut s = String::new();
        writeln!(s, "# m = {m}").unwrap();
        writeln!(s, "# delta = {:.17e}", self.delta).unwrap();
        writeln!(s, "# noise_level = {:.17e}", self.noise_level).unwrap();
        writeln!(s, "# provenance = {}", self.provenance.as_str()).unwrap();
        for i in 0..m {
            let row: Vec<String> = (0..m)
                .map(|j| format!("{:.17e}", self.matrix[(i, j)]))
                .collect();
            writeln!(s, "{}", row.join(" ")).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut m = None;
        let mut delta = 0.0;
        let mut noise_level = 0.0;
        let mut provenance = None;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(header) = line.strip_prefix('#') {
                let Some((k, v)) = header.split_once('=') else {
                    continue;
                };
                let v = v.trim();
                match k.trim() {
                    "m" => {
                        m = Some(
                            v.parse::<usize>()
                                .map_err(|e| Error::Parse(e.to_string()))?,
                        )
                    }
                    "delta" => {
                        delta = v
                            .parse()
                            .map_err(|e: std::num::ParseFloatError| Error::Parse(e.to_string()))?
                    }
                    "noise_level" => {
                        noise_level = v
                            .parse()
                            .map_err(|e: std::num::ParseFloatError| Error::Parse(e.to_string()))?
                    }
                    "provenance" => provenance = Some(Provenance::parse(v)?),
                    _ => {}
                }
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|x| {
                    x.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("'{x}': {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        let m = m.ok_or_else(|| Error::Parse("missing 'm' header".into()))?;
        if rows.len() != m || rows.iter().any(|r| r.len() != m) {
            return Err(Error::Parse(format!("expected a {m}x{m} matrix")));
        }
        Ok(Self {
            matrix: DMatrix::from_fn(m, m, |i, j| rows[i][j]),
            provenance: provenance
                .ok_or_else(|| Error::Parse("missing 'provenance' header".into()))?,
            delta,
            noise_level,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Neumann solutions of every basis current for one conductivity.
#[derive(Debug, Clone)]
pub struct ForwardSolutions {
    pub potentials: Vec<PotentialField>,
}

pub fn forward_solutions(
    mesh: &CrossedMesh,
    sigma: &ConductivityField,
    basis: &CurrentBasis,
    exec: Exec,
) -> Result<ForwardSolutions> {
    let solver = NeumannSolver::new(mesh, sigma)?;
    let potentials = exec.try_map_range(basis.len(), |i| solver.solve(&basis.currents()[i]))?;
    Ok(ForwardSolutions { potentials })
}

fn galerkin(
    mesh: &CrossedMesh,
    basis: &CurrentBasis,
    sol: &ForwardSolutions,
) -> Result<DMatrix<f64>> {
    let m = basis.len();
    let traces: Vec<BoundaryFunction> = sol.potentials.iter().map(|u| u.trace(mesh)).collect();
    let mut a = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            a[(i, j)] = boundary_inner_product(mesh, &basis.currents()[j], &traces[i])?;
        }
    }
    Ok(symmetrize(&a))
}

/// `Λ̄(σ)_{ij} = ⟨g_j, u_i|∂Ω⟩`, symmetrized.
pub fn ntd_matrix(
    mesh: &CrossedMesh,
    sigma: &ConductivityField,
    basis: &CurrentBasis,
    exec: Exec,
) -> Result<NtdMatrix> {
    let sol = forward_solutions(mesh, sigma, basis, exec)?;
    Ok(NtdMatrix::new(
        galerkin(mesh, basis, &sol)?,
        Provenance::Exact,
    ))
}

/// Set of triangles a test ball or pixel rasterizes to (centroid rule).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    triangles: Vec<usize>,
}

impl Region {
    pub fn rasterize(mesh: &CrossedMesh, contains: impl Fn(Point) -> bool) -> Result<Self> {
        let triangles: Vec<usize> = (0..mesh.num_triangles())
            .filter(|&t| contains(mesh.centroid(t)))
            .collect();
        Self::from_triangles(triangles)
    }

    pub fn from_triangles(triangles: Vec<usize>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::DegenerateRegion);
        }
        Ok(Self { triangles })
    }

    pub fn ball(mesh: &CrossedMesh, center: Point, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::DegenerateRegion);
        }
        Self::rasterize(mesh, |[x, y]| {
            (x - center[0]).powi(2) + (y - center[1]).powi(2) < radius * radius
        })
    }

    /// Pixel `(i, j)` of an `np × np` partition of the square.
    pub fn pixel(mesh: &CrossedMesh, np: usize, i: usize, j: usize) -> Result<Self> {
        let idx = |v: f64| ((v * np as f64).floor() as usize).min(np - 1);
        Self::rasterize(mesh, |[x, y]| idx(x) == i && idx(y) == j)
    }

    pub fn whole(mesh: &CrossedMesh) -> Self {
        Self {
            triangles: (0..mesh.num_triangles()).collect(),
        }
    }

    pub fn triangles(&self) -> &[usize] {
        &self.triangles
    }

    pub fn indicator(&self, mesh: &CrossedMesh) -> Vec<bool> {
        let mut mask = vec![false; mesh.num_triangles()];
        for &t in &self.triangles {
            mask[t] = true;
        }
        mask
    }

    pub fn area(&self, mesh: &CrossedMesh) -> f64 {
        self.triangles.iter().map(|&t| mesh.area(t)).sum()
    }
}

/// Background solutions `u_i = u^{g_i}_{σ₀}` with their per-triangle
/// gradients cached, so that every region's sensitivity is a gather.
#[derive(Debug, Clone)]
pub struct Background {
    m: usize,
    sigma0: f64,
    /// `gradients[t · m + i]` is `∇u_i` on triangle `t`.
    gradients: Vec<Point>,
    areas: Vec<f64>,
    ntd: NtdMatrix,
}

impl Background {
    pub fn new(mesh: &CrossedMesh, sigma0: f64, basis: &CurrentBasis, exec: Exec) -> Result<Self> {
        let sigma = ConductivityField::constant(mesh, sigma0);
        let sol = forward_solutions(mesh, &sigma, basis, exec)?;
        let m = basis.len();
        let mut gradients = vec![[0.0; 2]; mesh.num_triangles() * m];
        for (i, u) in sol.potentials.iter().enumerate() {
            for t in 0..mesh.num_triangles() {
                gradients[t * m + i] = mesh.gradient(t, &u.values);
            }
        }
        let ntd = NtdMatrix::new(galerkin(mesh, basis, &sol)?, Provenance::Exact);
        Ok(Self {
            m,
            sigma0,
            gradients,
            areas: mesh.areas().to_vec(),
            ntd,
        })
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    /// `Λ̄(σ₀)` from the same solves.
    pub fn ntd(&self) -> &NtdMatrix {
        &self.ntd
    }

    /// `S_{ij} = −∫_B ∇u_i·∇u_j dx`.
    pub fn sensitivity(&self, region: &Region) -> NtdMatrix {
        let m = self.m;
        let mut s = DMatrix::<f64>::zeros(m, m);
        for &t in region.triangles() {
            let g = &self.gradients[t * m..(t + 1) * m];
            let a = self.areas[t];
            for j in 0..m {
                for i in j..m {
                    s[(i, j)] -= a * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                }
            }
        }
        for j in 0..m {
            for i in 0..j {
                s[(i, j)] = s[(j, i)];
            }
        }
        NtdMatrix::new(s, Provenance::Sensitivity)
    }

    pub fn stack(&self, regions: Vec<Region>, exec: Exec) -> SensitivityStack {
        let matrices = exec.map(&regions, |r| self.sensitivity(r).matrix);
        SensitivityStack { regions, matrices }
    }
}

/// `Λ̄'(σ₀) χ_B` for a single region. Batch callers should build a
/// [`Background`] once instead.
pub fn sensitivity_matrix(
    mesh: &CrossedMesh,
    sigma0: f64,
    basis: &CurrentBasis,
    region: &Region,
) -> Result<NtdMatrix> {
    Ok(Background::new(mesh, sigma0, basis, Exec::Sequential)?.sensitivity(region))
}

/// Sensitivity matrices `S_k` for a family of regions.
#[derive(Debug, Clone)]
pub struct SensitivityStack {
    pub regions: Vec<Region>,
    pub matrices: Vec<DMatrix<f64>>,
}

impl SensitivityStack {
    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }
}

/// Operator noise δ (relative), voltage noise η (relative), RNG seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub delta: f64,
    pub eta: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(delta: f64, eta: f64, seed: u64) -> Result<Self> {
        if !(delta >= 0.0) || !(eta >= 0.0) {
            return Err(Error::invalid("noise levels must be non-negative"));
        }
        Ok(Self { delta, eta, seed })
    }
}

/// Seeded generator for an independent stream of one seed.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `Λ + δ‖Λ‖_F · Ẽ/‖Ẽ‖_F` with `Ẽ` the symmetric part of a standard normal
/// matrix.
pub fn add_operator_noise(diff: &NtdMatrix, delta: f64, seed: u64) -> Result<NtdMatrix> {
    if !(delta >= 0.0) {
        return Err(Error::invalid("operator noise level must be non-negative"));
    }
    if delta == 0.0 {
        return Ok(diff.clone());
    }
    let m = diff.dim();
    let mut rng = rng_stream(seed, 0);
    let mut e = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            e[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    let e = symmetrize(&e);
    let noise_level = delta * diff.matrix.norm();
    let scale = noise_level / e.norm();
    Ok(NtdMatrix {
        matrix: &diff.matrix + e * scale,
        provenance: Provenance::Noisy,
        delta,
        noise_level,
    })
}

/// `f + ε`, `ε` i.i.d. normal with standard deviation `η ‖f‖_∞`.
pub fn add_voltage_noise(f: &BoundaryFunction, eta: f64, seed: u64) -> Result<BoundaryFunction> {
    add_voltage_noise_stream(f, eta, seed, 0)
}

pub fn add_voltage_noise_stream(
    f: &BoundaryFunction,
    eta: f64,
    seed: u64,
    stream: u64,
) -> Result<BoundaryFunction> {
    if !(eta >= 0.0) {
        return Err(Error::invalid("voltage noise level must be non-negative"));
    }
    if eta == 0.0 {
        return Ok(f.clone());
    }
    let sd = eta * f.sup_norm();
    let normal = Normal::new(0.0, sd).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = rng_stream(seed, stream);
    let mut out = f.clone();
    out.values
        .iter_mut()
        .for_each(|v| *v += normal.sample(&mut rng));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_fem::boundary_integral;
    use crate::matops::lambda_min;

    fn disk(mesh: &CrossedMesh, s1: f64) -> ConductivityField {
        ConductivityField::rasterize(mesh, 1.0, s1, |[x, y]| {
            (x - 0.5).powi(2) + (y - 0.5).powi(2) < 0.04
        })
    }

    #[test]
    fn currents_have_zero_mean() {
        let mesh = CrossedMesh::new(64).unwrap();
        let basis = CurrentBasis::new(&mesh, 23, false).unwrap();
        assert_eq!(basis.len(), 23);
        for g in basis.currents() {
            assert!(boundary_integral(&mesh, g).abs() < 1e-10);
        }
        assert!(CurrentBasis::new(&mesh, 257, false).is_err());
        assert!(CurrentBasis::new(&mesh, 0, false).is_err());
    }

    #[test]
    fn orthonormalized_gram_is_identity() {
        let mesh = CrossedMesh::new(64).unwrap();
        let basis = CurrentBasis::new(&mesh, 5, true).unwrap();
        let g = basis.gram(&mesh).unwrap();
        assert!((g - DMatrix::identity(5, 5)).abs().max() < 1e-8);
        for c in basis.currents() {
            assert!(boundary_integral(&mesh, c).abs() < 1e-10);
        }
        // Re-evaluated on a finer mesh the basis stays close to orthonormal.
        let fine = CrossedMesh::new(128).unwrap();
        let g = basis.on_mesh(&fine).gram(&fine).unwrap();
        assert!((g - DMatrix::identity(5, 5)).abs().max() < 1e-2);
    }

    #[test]
    fn ntd_diagonal_is_the_energy() {
        let mesh = CrossedMesh::new(32).unwrap();
        let sigma = disk(&mesh, 2.0);
        let basis = CurrentBasis::new(&mesh, 4, false).unwrap();
        let a = ntd_matrix(&mesh, &sigma, &basis, Exec::Rayon).unwrap();
        let sol = forward_solutions(&mesh, &sigma, &basis, Exec::Sequential).unwrap();
        for i in 0..4 {
            let e = crate::grid_fem::energy(&mesh, &sigma, &sol.potentials[i].values);
            assert!((a.matrix[(i, i)] - e).abs() <= 1e-8 * e);
        }
    }

    #[test]
    fn ntd_scaling_and_loewner_decrease() {
        let mesh = CrossedMesh::new(32).unwrap();
        let basis = CurrentBasis::new(&mesh, 6, true).unwrap();
        let sigma = disk(&mesh, 2.0);
        let a = ntd_matrix(&mesh, &sigma, &basis, Exec::Rayon).unwrap();
        let a2 = ntd_matrix(&mesh, &sigma.scaled(2.0), &basis, Exec::Rayon).unwrap();
        assert!((&a2.matrix * 2.0 - &a.matrix).norm() <= 1e-10 * a.matrix.norm());
        let a0 = ntd_matrix(
            &mesh,
            &ConductivityField::constant(&mesh, 1.0),
            &basis,
            Exec::Rayon,
        )
        .unwrap();
        assert!(
            crate::matops::sym_eigen(&(&a.matrix - &a0.matrix))
                .unwrap()
                .max()
                <= 1e-8
        );
    }

    #[test]
    fn ntd_mesh_refinement() {
        let coarse = CrossedMesh::new(64).unwrap();
        let fine = CrossedMesh::new(128).unwrap();
        let basis = CurrentBasis::new(&coarse, 8, false).unwrap();
        let a = ntd_matrix(
            &coarse,
            &ConductivityField::constant(&coarse, 1.0),
            &basis,
            Exec::Rayon,
        )
        .unwrap();
        let fine_basis = basis.on_mesh(&fine);
        let b = ntd_matrix(
            &fine,
            &ConductivityField::constant(&fine, 1.0),
            &fine_basis,
            Exec::Rayon,
        )
        .unwrap();
        let rel = (&a.matrix - &b.matrix).norm() / b.matrix.norm();
        assert!(rel < 0.01, "{rel}");
    }

    #[test]
    fn sensitivity_of_whole_domain_is_minus_background() {
        let mesh = CrossedMesh::new(32).unwrap();
        let basis = CurrentBasis::new(&mesh, 6, true).unwrap();
        let bg = Background::new(&mesh, 1.0, &basis, Exec::Rayon).unwrap();
        let s = bg.sensitivity(&Region::whole(&mesh));
        assert!((&s.matrix + &bg.ntd().matrix).norm() <= 1e-8 * bg.ntd().matrix.norm());
    }

    #[test]
    fn sensitivity_is_additive_and_nonpositive() {
        let mesh = CrossedMesh::new(32).unwrap();
        let basis = CurrentBasis::new(&mesh, 8, true).unwrap();
        let bg = Background::new(&mesh, 1.0, &basis, Exec::Rayon).unwrap();
        let b1 = Region::pixel(&mesh, 10, 2, 3).unwrap();
        let b2 = Region::pixel(&mesh, 10, 7, 7).unwrap();
        let mut both = b1.triangles().to_vec();
        both.extend_from_slice(b2.triangles());
        let s12 = bg
            .sensitivity(&Region::from_triangles(both).unwrap())
            .matrix;
        let s1 = bg.sensitivity(&b1).matrix;
        let s2 = bg.sensitivity(&b2).matrix;
        assert!((&s12 - &s1 - &s2).abs().max() <= 1e-12 * s12.norm().max(1.0));
        for s in [&s1, &s2, &s12] {
            let e = crate::matops::sym_eigen(s).unwrap();
            assert!(e.max() <= 1e-10 * s.norm());
        }
        assert!(matches!(
            Region::ball(&mesh, [0.5, 0.5], 0.0),
            Err(Error::DegenerateRegion)
        ));
        assert!(matches!(
            Region::ball(&mesh, [0.5, 0.5], 1e-4),
            Err(Error::DegenerateRegion)
        ));
    }

    #[test]
    fn sensitivity_matches_central_difference() {
        let mesh = CrossedMesh::new(64).unwrap();
        let basis = CurrentBasis::new(&mesh, 8, false).unwrap();
        let pixel = Region::pixel(&mesh, 10, 5, 5).unwrap();
        let s = sensitivity_matrix(&mesh, 1.0, &basis, &pixel)
            .unwrap()
            .matrix;
        let eps = 1e-4;
        let mask = pixel.indicator(&mesh);
        let plus = ConductivityField::from_inclusion(1.0, 1.0 + eps, mask.clone());
        let minus = ConductivityField::from_inclusion(1.0, 1.0 - eps, mask);
        let ap = ntd_matrix(&mesh, &plus, &basis, Exec::Rayon)
            .unwrap()
            .matrix;
        let am = ntd_matrix(&mesh, &minus, &basis, Exec::Rayon)
            .unwrap()
            .matrix;
        let fd = (ap - am) / (2.0 * eps);
        let rel = (&fd - &s).norm() / s.norm();
        assert!(rel < 1e-3, "{rel}");
    }

    #[test]
    fn operator_noise_norm_and_determinism() {
        let mesh = CrossedMesh::new(16).unwrap();
        let basis = CurrentBasis::new(&mesh, 5, true).unwrap();
        let a = ntd_matrix(&mesh, &disk(&mesh, 2.0), &basis, Exec::Rayon).unwrap();
        assert_eq!(add_operator_noise(&a, 0.0, 1).unwrap(), a);
        for delta in [1e-3, 0.1, 1.0] {
            let n = add_operator_noise(&a, delta, 42).unwrap();
            let dist = (&n.matrix - &a.matrix).norm();
            assert!((dist - delta * a.matrix.norm()).abs() <= 1e-12 * a.matrix.norm().max(1.0));
            assert_eq!(n.matrix, n.matrix.transpose());
            assert_eq!(n, add_operator_noise(&a, delta, 42).unwrap());
        }
        assert_ne!(
            add_operator_noise(&a, 0.1, 1).unwrap(),
            add_operator_noise(&a, 0.1, 2).unwrap()
        );
        assert!(add_operator_noise(&a, -0.1, 1).is_err());
        let _ = lambda_min(&a.matrix).unwrap();
    }

    #[test]
    fn voltage_noise_statistics() {
        let mesh = CrossedMesh::new(64).unwrap();
        let f = analytic_current(&mesh, 2);
        assert_eq!(add_voltage_noise(&f, 0.0, 3).unwrap(), f);
        let noisy = add_voltage_noise(&f, 0.03, 3).unwrap();
        let eps: Vec<f64> = noisy
            .values
            .iter()
            .zip(&f.values)
            .map(|(a, b)| a - b)
            .collect();
        let n = eps.len() as f64;
        let mean = eps.iter().sum::<f64>() / n;
        let sd = (eps.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((sd - 0.03).abs() < 0.006, "{sd}");
        assert_eq!(noisy, add_voltage_noise(&f, 0.03, 3).unwrap());
    }

    #[test]
    fn text_format_round_trips() {
        let mesh = CrossedMesh::new(8).unwrap();
        let basis = CurrentBasis::new(&mesh, 3, true).unwrap();
        let a = ntd_matrix(&mesh, &disk(&mesh, 2.0), &basis, Exec::Sequential).unwrap();
        let noisy = add_operator_noise(&a, 0.01, 5).unwrap();
        let text = noisy.to_text();
        assert!(text.starts_with("# m = 3\n# delta = 1.00000000000000002e-2\n# noise_level = "));
        assert!(text.contains("# provenance = noisy\n"));
        assert_eq!(NtdMatrix::from_text(&text).unwrap(), noisy);
        assert!(NtdMatrix::from_text("# m = 2\n1 2\n").is_err());
    }
}
