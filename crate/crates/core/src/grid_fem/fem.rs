use super::mesh::{CrossedMesh, Point, Segment};
use super::sparse::{CsrMatrix, SparseCholesky};
use crate::error::{Error, Result};

/// Relative residual every linear solve must reach.
pub const SOLVE_TOL: f64 = 1e-10;
/// Relative boundary mean tolerated for a Neumann datum.
pub const NEUMANN_MEAN_TOL: f64 = 1e-8;

/// Piecewise-constant conductivity, one value per triangle, encoding
/// `σ₀ + (σ₁ − σ₀) χ_D` when built from an inclusion.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductivityField {
    values: Vec<f64>,
    sigma0: f64,
    sigma1: f64,
    inclusion: Option<Vec<bool>>,
}

impl ConductivityField {
    pub fn constant(mesh: &CrossedMesh, sigma0: f64) -> Self {
        Self {
            values: vec![sigma0; mesh.num_triangles()],
            sigma0,
            sigma1: sigma0,
            inclusion: Some(vec![false; mesh.num_triangles()]),
        }
    }

    pub fn from_inclusion(sigma0: f64, sigma1: f64, inclusion: Vec<bool>) -> Self {
        let values = inclusion
            .iter()
            .map(|&inside| if inside { sigma1 } else { sigma0 })
            .collect();
        Self {
            values,
            sigma0,
            sigma1,
            inclusion: Some(inclusion),
        }
    }

    /// A triangle belongs to the inclusion when its centroid does.
    pub fn rasterize(
        mesh: &CrossedMesh,
        sigma0: f64,
        sigma1: f64,
        contains: impl Fn(Point) -> bool,
    ) -> Self {
        let inclusion = (0..mesh.num_triangles())
            .map(|t| contains(mesh.centroid(t)))
            .collect();
        Self::from_inclusion(sigma0, sigma1, inclusion)
    }

    /// Arbitrary per-triangle values; `σ₀`/`σ₁` become the min/max.
    pub fn from_values(values: Vec<f64>) -> Self {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            values,
            sigma0: lo,
            sigma1: hi,
            inclusion: None,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * c).collect(),
            sigma0: self.sigma0 * c,
            sigma1: self.sigma1 * c,
            inclusion: self.inclusion.clone(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn sigma1(&self) -> f64 {
        self.sigma1
    }

    pub fn inclusion(&self) -> Option<&[bool]> {
        self.inclusion.as_deref()
    }

    fn validate(&self, mesh: &CrossedMesh) -> Result<()> {
        if self.values.len() != mesh.num_triangles() {
            return Err(Error::MeshMismatch(format!(
                "{} conductivity values for {} triangles",
                self.values.len(),
                mesh.num_triangles()
            )));
        }
        match self
            .values
            .iter()
            .position(|&v| !(v > 0.0 && v.is_finite()))
        {
            Some(t) => Err(Error::NonPositiveConductivity {
                triangle: t,
                value: self.values[t],
            }),
            None => Ok(()),
        }
    }
}

/// Nodal values of a P1 potential.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField {
    pub values: Vec<f64>,
}

impl PotentialField {
    pub fn trace(&self, mesh: &CrossedMesh) -> BoundaryFunction {
        BoundaryFunction::new(
            mesh.boundary_nodes()
                .iter()
                .map(|&v| self.values[v])
                .collect(),
            BoundaryRole::Voltage,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryRole {
    Current,
    Voltage,
}

/// Values at the boundary nodes of a mesh, ordered as
/// [`CrossedMesh::boundary_nodes`].
///
/// A current may jump at a corner of the square. Such nodes keep their two
/// one-sided values (incoming edge, outgoing edge) in `sides`; `values`
/// then holds their average.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFunction {
    pub values: Vec<f64>,
    pub role: BoundaryRole,
    sides: Vec<(usize, f64, f64)>,
}

impl BoundaryFunction {
    pub fn new(values: Vec<f64>, role: BoundaryRole) -> Self {
        Self {
            values,
            role,
            sides: Vec::new(),
        }
    }

    pub fn zeros(mesh: &CrossedMesh, role: BoundaryRole) -> Self {
        Self::new(vec![0.0; mesh.boundary_nodes().len()], role)
    }

    pub fn from_fn(mesh: &CrossedMesh, role: BoundaryRole, f: impl Fn(Point) -> f64) -> Self {
        let values = mesh
            .boundary_nodes()
            .iter()
            .map(|&v| f(mesh.vertices()[v]))
            .collect();
        Self::new(values, role)
    }

    /// Samples a function defined separately on each side of the square.
    pub fn from_segments(
        mesh: &CrossedMesh,
        role: BoundaryRole,
        f: impl Fn(Segment, Point) -> f64,
    ) -> Self {
        let nb = mesh.boundary_nodes().len();
        let edges = mesh.boundary_edges();
        let mut sides = Vec::new();
        let values = (0..nb)
            .map(|p| {
                let prev = &edges[(p + nb - 1) % nb];
                let next = &edges[p];
                let x = mesh.vertices()[mesh.boundary_nodes()[p]];
                if prev.segment == next.segment {
                    f(next.segment, x)
                } else {
                    let (a, b) = (f(prev.segment, x), f(next.segment, x));
                    if a != b {
                        sides.push((p, a, b));
                    }
                    0.5 * (a + b)
                }
            })
            .collect();
        Self {
            values,
            role,
            sides,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sup_norm(&self) -> f64 {
        let nodal = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.sides
            .iter()
            .fold(nodal, |m, &(_, a, b)| m.max(a.abs()).max(b.abs()))
    }

    /// Values on the incoming and outgoing edge at boundary slot `p`.
    pub fn one_sided(&self, p: usize) -> (f64, f64) {
        match self.sides.iter().find(|s| s.0 == p) {
            Some(&(_, a, b)) => (a, b),
            None => (self.values[p], self.values[p]),
        }
    }

    /// True when no corner jumps are stored.
    pub fn is_continuous(&self) -> bool {
        self.sides.is_empty()
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
        self.sides.iter_mut().for_each(|(_, a, b)| {
            *a *= s;
            *b *= s;
        });
    }

    /// `self += a · other`
    pub fn axpy(&mut self, a: f64, other: &BoundaryFunction) {
        let slots: Vec<usize> = self.sides.iter().chain(&other.sides).map(|s| s.0).collect();
        let mut sides: Vec<(usize, f64, f64)> = Vec::new();
        for p in slots {
            if sides.iter().any(|s| s.0 == p) {
                continue;
            }
            let (x0, x1) = self.one_sided(p);
            let (y0, y1) = other.one_sided(p);
            sides.push((p, x0 + a * y0, x1 + a * y1));
        }
        self.values
            .iter_mut()
            .zip(&other.values)
            .for_each(|(x, y)| *x += a * y);
        sides.sort_by_key(|s| s.0);
        self.sides = sides;
    }

    fn check(&self, mesh: &CrossedMesh) -> Result<()> {
        if self.values.len() != mesh.boundary_nodes().len() {
            return Err(Error::MeshMismatch(format!(
                "boundary function has {} values, mesh has {} boundary nodes",
                self.values.len(),
                mesh.boundary_nodes().len()
            )));
        }
        Ok(())
    }
}

fn edge_lengths(mesh: &CrossedMesh) -> Vec<f64> {
    mesh.boundary_edges()
        .iter()
        .map(|e| {
            let [a, b] = e.nodes.map(|v| mesh.vertices()[v]);
            ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
        })
        .collect()
}

/// `∫_∂Ω a b ds` by the trapezoidal rule on boundary edges.
pub fn boundary_inner_product(
    mesh: &CrossedMesh,
    a: &BoundaryFunction,
    b: &BoundaryFunction,
) -> Result<f64> {
    a.check(mesh)?;
    b.check(mesh)?;
    let mut sum: f64 = mesh
        .boundary_weights()
        .iter()
        .zip(a.values.iter().zip(&b.values))
        .map(|(w, (x, y))| w * x * y)
        .sum();
    if !(a.is_continuous() && b.is_continuous()) {
        let len = edge_lengths(mesh);
        let nb = len.len();
        let mut slots: Vec<usize> = a.sides.iter().chain(&b.sides).map(|s| s.0).collect();
        slots.sort_unstable();
        slots.dedup();
        for p in slots {
            let (a0, a1) = a.one_sided(p);
            let (b0, b1) = b.one_sided(p);
            sum -= mesh.boundary_weights()[p] * a.values[p] * b.values[p];
            sum += 0.5 * len[(p + nb - 1) % nb] * a0 * b0 + 0.5 * len[p] * a1 * b1;
        }
    }
    Ok(sum)
}

/// Trapezoidal load vector `b_p = ∫_∂Ω a φ_p ds` per boundary slot.
pub fn boundary_load(mesh: &CrossedMesh, a: &BoundaryFunction) -> Vec<f64> {
    let mut load: Vec<f64> = mesh
        .boundary_weights()
        .iter()
        .zip(&a.values)
        .map(|(w, x)| w * x)
        .collect();
    if !a.is_continuous() {
        let len = edge_lengths(mesh);
        let nb = len.len();
        for &(p, a0, a1) in &a.sides {
            load[p] = 0.5 * len[(p + nb - 1) % nb] * a0 + 0.5 * len[p] * a1;
        }
    }
    load
}

/// `∫_∂Ω a ds`.
pub fn boundary_integral(mesh: &CrossedMesh, a: &BoundaryFunction) -> f64 {
    boundary_load(mesh, a).iter().sum()
}

/// `∫_Ω σ |∇u|² dx`.
pub fn energy(mesh: &CrossedMesh, sigma: &ConductivityField, u: &[f64]) -> f64 {
    (0..mesh.num_triangles())
        .map(|t| {
            let g = mesh.gradient(t, u);
            sigma.values[t] * mesh.area(t) * (g[0] * g[0] + g[1] * g[1])
        })
        .sum()
}

pub(crate) fn stiffness_triplets(mesh: &CrossedMesh, sigma: &[f64]) -> Vec<(usize, usize, f64)> {
    let mut trip = Vec::with_capacity(9 * mesh.num_triangles());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let g = mesh.basis_gradients(t);
        let s = sigma[t] * mesh.area(t);
        for a in 0..3 {
            for b in 0..3 {
                trip.push((tri[a], tri[b], s * (g[a][0] * g[b][0] + g[a][1] * g[b][1])));
            }
        }
    }
    trip
}

pub fn assemble_stiffness(mesh: &CrossedMesh, sigma: &ConductivityField) -> Result<CsrMatrix> {
    sigma.validate(mesh)?;
    Ok(CsrMatrix::from_triplets(
        mesh.num_vertices(),
        stiffness_triplets(mesh, &sigma.values),
    ))
}

/// Factored Neumann problem for one conductivity; reusable across currents.
///
/// The zero-mean constraint is a bordered (Lagrange multiplier) system.
/// For a compatible datum the multiplier vanishes, so the bordered solve
/// reduces to `K w = b` on the complement of constants followed by the
/// shift `u = w − mean_∂Ω(w)`. `K` is made definite by adding its own
/// diagonal entry at one pinned node, which leaves the solution of a
/// compatible system untouched (`1ᵀ K = 0` forces `w_pin = 0`).
#[derive(Debug, Clone)]
pub struct NeumannSolver<'m> {
    mesh: &'m CrossedMesh,
    matrix: CsrMatrix,
    factor: SparseCholesky,
}

impl<'m> NeumannSolver<'m> {
    pub fn new(mesh: &'m CrossedMesh, sigma: &ConductivityField) -> Result<Self> {
        sigma.validate(mesh)?;
        let mut trip = stiffness_triplets(mesh, &sigma.values);
        let pin = mesh.center_node(mesh.n() / 2, mesh.n() / 2);
        let kpp: f64 = trip
            .iter()
            .filter(|&&(r, c, _)| r == pin && c == pin)
            .map(|t| t.2)
            .sum();
        trip.push((pin, pin, kpp));
        let matrix = CsrMatrix::from_triplets(mesh.num_vertices(), trip);
        let factor = SparseCholesky::factor(&matrix)?;
        Ok(Self {
            mesh,
            matrix,
            factor,
        })
    }

    pub fn mesh(&self) -> &'m CrossedMesh {
        self.mesh
    }

    pub fn solve(&self, g: &BoundaryFunction) -> Result<PotentialField> {
        let mesh = self.mesh;
        g.check(mesh)?;
        let w = mesh.boundary_weights();
        let total: f64 = w.iter().sum();
        let bload = boundary_load(mesh, g);
        let mean = bload.iter().sum::<f64>() / total;
        let scale = bload.iter().map(|x| x.abs()).sum::<f64>() / total;
        if mean.abs() > NEUMANN_MEAN_TOL * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::IncompatibleNeumann { mean });
        }
        let mut load = vec![0.0; mesh.num_vertices()];
        for (p, &v) in mesh.boundary_nodes().iter().enumerate() {
            load[v] = bload[p] - w[p] * mean;
        }
        let mut u = self.factor.solve_refined(&self.matrix, &load, SOLVE_TOL)?;
        let shift: f64 = mesh
            .boundary_nodes()
            .iter()
            .zip(w)
            .map(|(&v, wp)| wp * u[v])
            .sum::<f64>()
            / total;
        u.iter_mut().for_each(|x| *x -= shift);
        Ok(PotentialField { values: u })
    }
}

/// Factored Dirichlet problem (interior unknowns) for one conductivity.
#[derive(Debug, Clone)]
pub struct DirichletSolver<'m> {
    mesh: &'m CrossedMesh,
    fixed: Vec<bool>,
    interior: Vec<usize>,
    /// Interior rows of the full stiffness matrix.
    coupling: CsrMatrix,
    matrix: CsrMatrix,
    factor: SparseCholesky,
}

impl<'m> DirichletSolver<'m> {
    pub fn new(mesh: &'m CrossedMesh, sigma: &ConductivityField) -> Result<Self> {
        sigma.validate(mesh)?;
        let fixed = (0..mesh.num_vertices())
            .map(|v| mesh.is_boundary(v))
            .collect();
        Self::with_fixed(mesh, &sigma.values, fixed)
    }

    /// Homogeneous problem with every node flagged in `fixed` (which must
    /// include the boundary) held at zero.
    pub(crate) fn with_fixed(
        mesh: &'m CrossedMesh,
        sigma: &[f64],
        fixed: Vec<bool>,
    ) -> Result<Self> {
        let nv = mesh.num_vertices();
        if fixed.len() != nv || mesh.boundary_nodes().iter().any(|&b| !fixed[b]) {
            return Err(Error::invalid("fixed nodes must cover the boundary"));
        }
        let interior: Vec<usize> = (0..nv).filter(|&v| !fixed[v]).collect();
        if interior.is_empty() {
            return Err(Error::invalid("no free nodes"));
        }
        let mut slot = vec![usize::MAX; nv];
        for (k, &v) in interior.iter().enumerate() {
            slot[v] = k;
        }
        let full = stiffness_triplets(mesh, sigma);
        let mut inner = Vec::with_capacity(full.len());
        let mut coupling = Vec::with_capacity(full.len());
        for &(r, c, v) in &full {
            if slot[r] != usize::MAX {
                coupling.push((slot[r], c, v));
                if slot[c] != usize::MAX {
                    inner.push((slot[r], slot[c], v));
                }
            }
        }
        let ni = interior.len();
        let matrix = CsrMatrix::from_triplets(ni, inner);
        let factor = SparseCholesky::factor(&matrix)?;
        // Rectangular ni × nv; stored square-padded on the row count only.
        let coupling = CsrMatrix::from_triplets(ni.max(nv), coupling);
        Ok(Self {
            mesh,
            fixed,
            interior,
            coupling,
            matrix,
            factor,
        })
    }

    pub fn solve(&self, f: &BoundaryFunction) -> Result<PotentialField> {
        let mesh = self.mesh;
        f.check(mesh)?;
        let mut values = vec![0.0; mesh.num_vertices()];
        for (p, &v) in mesh.boundary_nodes().iter().enumerate() {
            values[v] = f.values[p];
        }
        let rhs: Vec<f64> = (0..self.interior.len())
            .map(|k| {
                -self
                    .coupling
                    .row(k)
                    .filter(|&(c, _)| self.fixed[c])
                    .map(|(c, a)| a * values[c])
                    .sum::<f64>()
            })
            .collect();
        let x = self.factor.solve_refined(&self.matrix, &rhs, SOLVE_TOL)?;
        for (k, &v) in self.interior.iter().enumerate() {
            values[v] = x[k];
        }
        Ok(PotentialField { values })
    }

    /// Solves with homogeneous boundary values for a nodal load vector
    /// (entries at boundary nodes are ignored).
    pub fn solve_load(&self, load: &[f64]) -> Result<Vec<f64>> {
        let rhs: Vec<f64> = self.interior.iter().map(|&v| load[v]).collect();
        let x = self.factor.solve_refined(&self.matrix, &rhs, SOLVE_TOL)?;
        let mut out = vec![0.0; self.mesh.num_vertices()];
        for (k, &v) in self.interior.iter().enumerate() {
            out[v] = x[k];
        }
        Ok(out)
    }
}

pub fn solve_neumann(
    mesh: &CrossedMesh,
    sigma: &ConductivityField,
    g: &BoundaryFunction,
) -> Result<PotentialField> {
    NeumannSolver::new(mesh, sigma)?.solve(g)
}

pub fn solve_dirichlet(
    mesh: &CrossedMesh,
    sigma: &ConductivityField,
    f: &BoundaryFunction,
) -> Result<PotentialField> {
    DirichletSolver::new(mesh, sigma)?.solve(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn g1(mesh: &CrossedMesh) -> BoundaryFunction {
        BoundaryFunction::from_segments(mesh, BoundaryRole::Current, |s, [x, y]| match s {
            Segment::Left => (PI * y).sin(),
            Segment::Right => -(PI * y).sin(),
            Segment::Bottom => (PI * x).cos(),
            Segment::Top => -(PI * x).cos(),
        })
    }

    #[test]
    fn zero_current_gives_zero_potential() {
        let m = CrossedMesh::new(8).unwrap();
        let s = ConductivityField::constant(&m, 1.0);
        let u = solve_neumann(&m, &s, &BoundaryFunction::zeros(&m, BoundaryRole::Current)).unwrap();
        assert!(u.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn neumann_energy_identity_and_zero_mean() {
        let m = CrossedMesh::new(64).unwrap();
        let s = ConductivityField::rasterize(&m, 1.0, 2.0, |[x, y]| {
            (x - 0.5).powi(2) + (y - 0.5).powi(2) < 0.04
        });
        let g = g1(&m);
        let u = solve_neumann(&m, &s, &g).unwrap();
        let e = energy(&m, &s, &u.values);
        let trace = u.trace(&m);
        let pairing = boundary_inner_product(&m, &g, &trace).unwrap();
        assert!((e - pairing).abs() <= 1e-8 * e, "{e} vs {pairing}");
        assert!(boundary_integral(&m, &trace).abs() < 1e-12);
    }

    #[test]
    fn rejects_incompatible_current_and_bad_conductivity() {
        let m = CrossedMesh::new(4).unwrap();
        let s = ConductivityField::constant(&m, 1.0);
        let ones = BoundaryFunction::from_fn(&m, BoundaryRole::Current, |_| 1.0);
        assert!(matches!(
            solve_neumann(&m, &s, &ones),
            Err(Error::IncompatibleNeumann { .. })
        ));
        let mut vals = vec![1.0; m.num_triangles()];
        vals[3] = 0.0;
        let bad = ConductivityField::from_values(vals);
        assert!(matches!(
            solve_neumann(&m, &bad, &g1(&m)),
            Err(Error::NonPositiveConductivity { triangle: 3, .. })
        ));
        assert!(matches!(
            solve_dirichlet(&m, &bad, &ones),
            Err(Error::NonPositiveConductivity { .. })
        ));
    }

    #[test]
    fn dirichlet_reproduces_constants_and_affine_data() {
        let m = CrossedMesh::new(16).unwrap();
        let s = ConductivityField::constant(&m, 1.0);
        let c = BoundaryFunction::from_fn(&m, BoundaryRole::Voltage, |_| 0.7);
        let v = solve_dirichlet(&m, &s, &c).unwrap();
        assert!(v.values.iter().all(|x| (x - 0.7).abs() < 1e-12));
        let f = BoundaryFunction::from_fn(&m, BoundaryRole::Voltage, |[x, _]| x - 0.5);
        let v = solve_dirichlet(&m, &s, &f).unwrap();
        for (p, x) in m.vertices().iter().zip(&v.values) {
            assert!((x - (p[0] - 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn mesh_refinement_of_boundary_traces() {
        // The n = 64 trace, compared with the n = 128 trace at shared nodes.
        let coarse = CrossedMesh::new(64).unwrap();
        let fine = CrossedMesh::new(128).unwrap();
        let uc = solve_neumann(
            &coarse,
            &ConductivityField::constant(&coarse, 1.0),
            &g1(&coarse),
        )
        .unwrap()
        .trace(&coarse);
        let uf = solve_neumann(&fine, &ConductivityField::constant(&fine, 1.0), &g1(&fine))
            .unwrap()
            .trace(&fine);
        let restricted = BoundaryFunction::new(
            (0..uc.len()).map(|p| uf.values[2 * p]).collect(),
            BoundaryRole::Voltage,
        );
        let diff = BoundaryFunction::new(
            uc.values
                .iter()
                .zip(&restricted.values)
                .map(|(a, b)| a - b)
                .collect(),
            BoundaryRole::Voltage,
        );
        let rel = boundary_inner_product(&coarse, &diff, &diff)
            .unwrap()
            .sqrt()
            / boundary_inner_product(&coarse, &restricted, &restricted)
                .unwrap()
                .sqrt();
        assert!(rel < 0.01, "relative L2 trace difference {rel}");
    }

    #[test]
    fn dirichlet_with_neumann_trace_recovers_the_pairing() {
        // Feeding the Neumann trace back as Dirichlet data returns the same
        // potential, so the flux pairing ∫σ∇v·∇u equals ⟨g, u⟩.
        let m = CrossedMesh::new(32).unwrap();
        let s = ConductivityField::rasterize(&m, 1.0, 2.0, |[x, y]| {
            (x - 0.4).powi(2) + (y - 0.55).powi(2) < 0.03
        });
        let g = g1(&m);
        let u = solve_neumann(&m, &s, &g).unwrap();
        let v = solve_dirichlet(&m, &s, &u.trace(&m)).unwrap();
        let max_diff = u
            .values
            .iter()
            .zip(&v.values)
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        assert!(max_diff < 1e-10, "{max_diff}");
        let k = assemble_stiffness(&m, &s).unwrap();
        let kv = k.mul_vec(&v.values);
        let flux: f64 = u.values.iter().zip(&kv).map(|(a, b)| a * b).sum();
        let pairing = boundary_inner_product(&m, &g, &u.trace(&m)).unwrap();
        assert!((flux - pairing).abs() < 1e-9 * pairing.abs());
    }

    #[test]
    fn corner_jumps_are_integrated_per_edge() {
        let m = CrossedMesh::new(4).unwrap();
        let f = BoundaryFunction::from_segments(&m, BoundaryRole::Current, |s, _| match s {
            Segment::Bottom => 1.0,
            _ => 0.0,
        });
        assert!(!f.is_continuous());
        assert!((boundary_integral(&m, &f) - 1.0).abs() < 1e-15);
        assert!((boundary_inner_product(&m, &f, &f).unwrap() - 1.0).abs() < 1e-15);
        let mut g = f.clone();
        g.axpy(-1.0, &f);
        assert_eq!(boundary_inner_product(&m, &g, &g).unwrap(), 0.0);
    }

    #[test]
    fn boundary_quadrature_basics() {
        let m = CrossedMesh::new(64).unwrap();
        let one = BoundaryFunction::from_fn(&m, BoundaryRole::Voltage, |_| 1.0);
        assert!((boundary_inner_product(&m, &one, &one).unwrap() - 4.0).abs() < 1e-12);
        let other = CrossedMesh::new(8).unwrap();
        let wrong = BoundaryFunction::from_fn(&other, BoundaryRole::Voltage, |_| 1.0);
        assert!(matches!(
            boundary_inner_product(&m, &one, &wrong),
            Err(Error::MeshMismatch(_))
        ));
    }

    #[test]
    fn g1_norm_matches_refined_quadrature() {
        // Independent composite trapezoid of ∫ g₁² ds at 512 points per side.
        let reference = {
            let k = 512;
            let mut s = 0.0;
            for i in 0..=k {
                let t = i as f64 / k as f64;
                let w = if i == 0 || i == k { 0.5 } else { 1.0 } / k as f64;
                s += w * 2.0 * ((PI * t).sin().powi(2) + (PI * t).cos().powi(2));
            }
            s
        };
        let m = CrossedMesh::new(64).unwrap();
        let g = g1(&m);
        let val = boundary_inner_product(&m, &g, &g).unwrap();
        assert!(
            (val - reference).abs() < 0.005 * reference,
            "{val} vs {reference}"
        );
    }
}
