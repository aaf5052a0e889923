use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::grid_fem::{
    arclength_of, energy, BoundaryFunction, ConductivityField, CrossedMesh, DirichletSolver,
    NeumannSolver, Point,
};
use crate::ntd::{add_voltage_noise_stream, analytic_current};

use super::field::VelocityField;

/// Current/voltage pairs on the reconstruction mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub currents: Vec<BoundaryFunction>,
    pub voltages: Vec<BoundaryFunction>,
    pub eta: f64,
    pub data_n: usize,
    pub inversion_n: usize,
}

impl MeasurementSet {
    /// Simulates the first `count` analytic currents on `data_mesh`, adds
    /// voltage noise `η` (stream `k` of `seed` for current `k ≥ 1`), and
    /// resamples the voltages onto `inversion`. The data mesh must be
    /// strictly finer.
    pub fn synthesize(
        data_mesh: &CrossedMesh,
        data_sigma: &ConductivityField,
        inversion: &CrossedMesh,
        count: usize,
        eta: f64,
        seed: u64,
        exec: Exec,
    ) -> Result<Self> {
        if data_mesh.n() <= inversion.n() {
            return Err(Error::MeshMismatch(format!(
                "data mesh n={} must be finer than inversion mesh n={}",
                data_mesh.n(),
                inversion.n()
            )));
        }
        if count == 0 {
            return Err(Error::invalid("at least one measurement required"));
        }
        let solver = NeumannSolver::new(data_mesh, data_sigma)?;
        let voltages = exec.try_map_range(count, |k| -> Result<BoundaryFunction> {
            let u = solver.solve(&analytic_current(data_mesh, k + 1))?;
            let f = add_voltage_noise_stream(&u.trace(data_mesh), eta, seed, k as u64 + 1)?;
            resample_boundary(data_mesh, &f, inversion)
        })?;
        Ok(Self {
            currents: (1..=count)
                .map(|k| analytic_current(inversion, k))
                .collect(),
            voltages,
            eta,
            data_n: data_mesh.n(),
            inversion_n: inversion.n(),
        })
    }

    /// Replaces each voltage `f_k` by `f_k − f⁰_k + F⁰_k`, where `f⁰_k` and
    /// `F⁰_k` are the homogeneous (`σ₀`) traces simulated on the data mesh
    /// and on the inversion mesh. This removes the part of the data/model
    /// discretization mismatch that is already present without inclusion.
    pub fn calibrate(
        &mut self,
        data_mesh: &CrossedMesh,
        inversion: &CrossedMesh,
        sigma0: f64,
        exec: Exec,
    ) -> Result<()> {
        if data_mesh.n() != self.data_n || inversion.n() != self.inversion_n {
            return Err(Error::MeshMismatch(
                "calibration meshes differ from the data meshes".into(),
            ));
        }
        let fine = NeumannSolver::new(data_mesh, &ConductivityField::constant(data_mesh, sigma0))?;
        let coarse =
            NeumannSolver::new(inversion, &ConductivityField::constant(inversion, sigma0))?;
        let shifts = exec.try_map_range(self.len(), |k| -> Result<BoundaryFunction> {
            let f0 = fine
                .solve(&analytic_current(data_mesh, k + 1))?
                .trace(data_mesh);
            let mut shift = coarse.solve(&self.currents[k])?.trace(inversion);
            shift.axpy(-1.0, &resample_boundary(data_mesh, &f0, inversion)?);
            Ok(shift)
        })?;
        for (f, shift) in self.voltages.iter_mut().zip(&shifts) {
            f.axpy(1.0, shift);
        }
        Ok(())
    }

    /// Pairs already living on `mesh`; no inverse-crime guard applies.
    pub fn from_pairs(
        mesh: &CrossedMesh,
        currents: Vec<BoundaryFunction>,
        voltages: Vec<BoundaryFunction>,
    ) -> Result<Self> {
        if currents.is_empty() || currents.len() != voltages.len() {
            return Err(Error::invalid(
                "need matching, nonempty current and voltage lists",
            ));
        }
        let nb = mesh.boundary_nodes().len();
        if currents.iter().chain(&voltages).any(|f| f.len() != nb) {
            return Err(Error::MeshMismatch("boundary data length".into()));
        }
        Ok(Self {
            currents,
            voltages,
            eta: 0.0,
            data_n: mesh.n(),
            inversion_n: mesh.n(),
        })
    }

    pub fn len(&self) -> usize {
        self.currents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.currents.is_empty()
    }
}

/// Linear interpolation in arc length of boundary data onto another mesh.
pub fn resample_boundary(
    from: &CrossedMesh,
    f: &BoundaryFunction,
    to: &CrossedMesh,
) -> Result<BoundaryFunction> {
    if f.len() != from.boundary_nodes().len() {
        return Err(Error::MeshMismatch("boundary data length".into()));
    }
    let s = from.boundary_arclength();
    let nb = s.len();
    let values = to
        .boundary_nodes()
        .iter()
        .map(|&v| {
            let t = arclength_of(to.vertices()[v]);
            // First node with arc length > t (nodes are sorted, periodic in 4).
            let hi = s.partition_point(|&x| x <= t);
            let lo = if hi == 0 { nb - 1 } else { hi - 1 };
            let (s_lo, s_hi) = (s[lo], if hi == nb { 4.0 } else { s[hi] });
            let hi = hi % nb;
            let w = if s_hi > s_lo {
                (t - s_lo) / (s_hi - s_lo)
            } else {
                0.0
            };
            (1.0 - w) * f.values[lo] + w * f.values[hi]
        })
        .collect();
    Ok(BoundaryFunction::new(values, f.role))
}

/// Forward states of one conductivity for every measurement pair.
#[derive(Debug, Clone)]
pub struct KvState {
    pub objective: f64,
    pub sigma: ConductivityField,
    /// Neumann solutions.
    pub u: Vec<Vec<f64>>,
    /// Dirichlet solutions.
    pub v: Vec<Vec<f64>>,
}

pub fn kv_state(
    mesh: &CrossedMesh,
    sigma: &ConductivityField,
    data: &MeasurementSet,
    exec: Exec,
) -> Result<KvState> {
    if data.is_empty() {
        return Err(Error::invalid("no measurements"));
    }
    let nb = mesh.boundary_nodes().len();
    if data.currents[0].len() != nb {
        return Err(Error::MeshMismatch(
            "measurements live on another mesh".into(),
        ));
    }
    let neumann = NeumannSolver::new(mesh, sigma)?;
    let dirichlet = DirichletSolver::new(mesh, sigma)?;
    let pairs = exec.try_map_range(data.len(), |k| -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let u = neumann.solve(&data.currents[k])?.values;
        let v = dirichlet.solve(&data.voltages[k])?.values;
        let diff: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
        let j = energy(mesh, sigma, &diff);
        Ok((u, v, j))
    })?;
    let mut state = KvState {
        objective: 0.0,
        sigma: sigma.clone(),
        u: Vec::with_capacity(pairs.len()),
        v: Vec::with_capacity(pairs.len()),
    };
    for (u, v, j) in pairs {
        state.objective += j;
        state.u.push(u);
        state.v.push(v);
    }
    Ok(state)
}

/// `J = Σ_k ∫ σ |∇(u_k − v_k)|²`.
pub fn kv_objective(
    mesh: &CrossedMesh,
    sigma: &ConductivityField,
    data: &MeasurementSet,
    exec: Exec,
) -> Result<f64> {
    Ok(kv_state(mesh, sigma, data, exec)?.objective)
}

/// Which expression of the shape derivative to assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DerivativeForm {
    /// `Σ σ [A(W)∇v·∇v − A(W)∇u·∇u]`, `A(W) = (div W) I − DW − DWᵀ`.
    #[default]
    Distributed,
    /// Unweighted `−(DW + DWᵀ)` part only.
    Literal,
}

pub type Tensor = [[f64; 2]; 2];

/// Per-triangle tensors `S_T` with `dJ(W) = Σ_T |T| S_T : DW_T`.
pub fn shape_tensors(mesh: &CrossedMesh, state: &KvState, form: DerivativeForm) -> Vec<Tensor> {
    let sigma = state.sigma.values();
    (0..mesh.num_triangles())
        .map(|t| {
            let mut s = [[0.0; 2]; 2];
            for (u, v) in state.u.iter().zip(&state.v) {
                let gu = mesh.gradient(t, u);
                let gv = mesh.gradient(t, v);
                if form == DerivativeForm::Distributed {
                    let trace = gv[0] * gv[0] + gv[1] * gv[1] - gu[0] * gu[0] - gu[1] * gu[1];
                    s[0][0] += trace;
                    s[1][1] += trace;
                }
                for a in 0..2 {
                    for b in 0..2 {
                        s[a][b] -= 2.0 * (gv[a] * gv[b] - gu[a] * gu[b]);
                    }
                }
            }
            if form == DerivativeForm::Distributed {
                for row in &mut s {
                    for x in row.iter_mut() {
                        *x *= sigma[t];
                    }
                }
            }
            s
        })
        .collect()
}

/// `dJ(W)` for a nodal vector field `W` on `mesh`.
pub fn directional_derivative(mesh: &CrossedMesh, tensors: &[Tensor], w: &[Point]) -> f64 {
    tensors
        .iter()
        .enumerate()
        .map(|(t, s)| {
            let gx = mesh.gradient(t, &w.iter().map(|p| p[0]).collect::<Vec<_>>());
            let gy = mesh.gradient(t, &w.iter().map(|p| p[1]).collect::<Vec<_>>());
            let dw = [gx, gy];
            let mut c = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    c += s[a][b] * dw[a][b];
                }
            }
            mesh.area(t) * c
        })
        .sum()
}

/// Solves `∫ DV : DW = −dJ(W)` for all `W ∈ H¹₀` with a factored unit
/// Laplacian.
pub struct VelocitySmoother<'m> {
    mesh: &'m CrossedMesh,
    laplace: DirichletSolver<'m>,
}

impl<'m> VelocitySmoother<'m> {
    pub fn new(mesh: &'m CrossedMesh) -> Result<Self> {
        Self::with_clearance(mesh, 0.0)
    }

    /// Velocities additionally vanish on nodes closer than `clearance` to
    /// the boundary, i.e. test fields live in `H¹₀` of the inner square.
    pub fn with_clearance(mesh: &'m CrossedMesh, clearance: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&clearance) {
            return Err(Error::invalid("clearance must lie in [0, 0.5)"));
        }
        let fixed = mesh
            .vertices()
            .iter()
            .enumerate()
            .map(|(k, p)| {
                mesh.is_boundary(k)
                    || p[0].min(p[1]).min(1.0 - p[0]).min(1.0 - p[1]) < clearance - 1e-12
            })
            .collect();
        let ones = vec![1.0; mesh.num_triangles()];
        let laplace = DirichletSolver::with_fixed(mesh, &ones, fixed)?;
        Ok(Self { mesh, laplace })
    }

    pub fn velocity(&self, tensors: &[Tensor]) -> Result<VelocityField> {
        let mesh = self.mesh;
        let nv = mesh.num_vertices();
        let mut load = [vec![0.0; nv], vec![0.0; nv]];
        for (t, s) in tensors.iter().enumerate() {
            let area = mesh.area(t);
            let grads = mesh.basis_gradients(t);
            for (a, &node) in mesh.triangles()[t].iter().enumerate() {
                let g = grads[a];
                for c in 0..2 {
                    load[c][node] -= area * (s[c][0] * g[0] + s[c][1] * g[1]);
                }
            }
        }
        let vx = self.laplace.solve_load(&load[0])?;
        let vy = self.laplace.solve_load(&load[1])?;
        Ok(VelocityField {
            values: vx.into_iter().zip(vy).map(|(x, y)| [x, y]).collect(),
        })
    }
}

/// Smoothed descent velocity for the conductivity `sigma`.
pub fn shape_gradient_velocity(
    mesh: &CrossedMesh,
    sigma: &ConductivityField,
    data: &MeasurementSet,
    form: DerivativeForm,
    exec: Exec,
) -> Result<VelocityField> {
    let state = kv_state(mesh, sigma, data, exec)?;
    VelocitySmoother::new(mesh)?.velocity(&shape_tensors(mesh, &state, form))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_fem::BoundaryRole;
    use std::f64::consts::PI;

    fn disk_sigma(mesh: &CrossedMesh, c: Point, r: f64) -> ConductivityField {
        ConductivityField::rasterize(mesh, 1.0, 2.0, |p| (p[0] - c[0]).hypot(p[1] - c[1]) < r)
    }

    fn self_consistent(mesh: &CrossedMesh, sigma: &ConductivityField) -> MeasurementSet {
        let solver = NeumannSolver::new(mesh, sigma).unwrap();
        let currents: Vec<_> = (1..=3).map(|k| analytic_current(mesh, k)).collect();
        let voltages = currents
            .iter()
            .map(|g| solver.solve(g).unwrap().trace(mesh))
            .collect();
        MeasurementSet::from_pairs(mesh, currents, voltages).unwrap()
    }

    #[test]
    fn consistent_data_give_zero_objective_and_velocity() {
        let mesh = CrossedMesh::new(32).unwrap();
        let sigma = disk_sigma(&mesh, [0.5, 0.5], 0.2);
        let data = self_consistent(&mesh, &sigma);
        let state = kv_state(&mesh, &sigma, &data, Exec::Sequential).unwrap();
        let scale: f64 = state.u.iter().map(|u| energy(&mesh, &sigma, u)).sum();
        assert!(state.objective <= 1e-10 * scale, "{}", state.objective);
        let v = shape_gradient_velocity(
            &mesh,
            &sigma,
            &data,
            DerivativeForm::Distributed,
            Exec::Rayon,
        )
        .unwrap();
        assert!(v.max_norm() <= 1e-10, "{}", v.max_norm());
        let background = ConductivityField::constant(&mesh, 1.0);
        assert!(kv_objective(&mesh, &background, &data, Exec::Sequential).unwrap() > 1e-3 * scale);
    }

    #[test]
    fn velocity_vanishes_on_boundary() {
        let mesh = CrossedMesh::new(16).unwrap();
        let data = self_consistent(&mesh, &disk_sigma(&mesh, [0.5, 0.5], 0.2));
        let trial = disk_sigma(&mesh, [0.4, 0.5], 0.2);
        let v = shape_gradient_velocity(
            &mesh,
            &trial,
            &data,
            DerivativeForm::Distributed,
            Exec::Rayon,
        )
        .unwrap();
        assert!(v.max_norm() > 0.0);
        for &b in mesh.boundary_nodes() {
            assert_eq!(v.values[b], [0.0, 0.0]);
        }
    }

    #[test]
    fn objective_decreases_toward_truth() {
        let fine = CrossedMesh::new(64).unwrap();
        let mesh = CrossedMesh::new(32).unwrap();
        let data = MeasurementSet::synthesize(
            &fine,
            &disk_sigma(&fine, [0.5, 0.5], 0.2),
            &mesh,
            5,
            0.0,
            0,
            Exec::Rayon,
        )
        .unwrap();
        let j: Vec<f64> = [0.1, 0.075, 0.05, 0.025, 0.0]
            .iter()
            .map(|&d| {
                kv_objective(
                    &mesh,
                    &disk_sigma(&mesh, [0.5 + d, 0.5], 0.2),
                    &data,
                    Exec::Rayon,
                )
                .unwrap()
            })
            .collect();
        for w in j.windows(2) {
            assert!(w[1] < w[0], "{j:?}");
        }
    }

    #[test]
    fn inverse_crime_guard() {
        let mesh = CrossedMesh::new(16).unwrap();
        let sigma = ConductivityField::constant(&mesh, 1.0);
        assert!(
            MeasurementSet::synthesize(&mesh, &sigma, &mesh, 2, 0.0, 0, Exec::Sequential).is_err()
        );
    }

    #[test]
    fn resampling_is_exact_for_piecewise_linear_data() {
        let fine = CrossedMesh::new(12).unwrap();
        let coarse = CrossedMesh::new(5).unwrap();
        let lin = |p: Point| {
            let s = arclength_of(p);
            (s * PI / 2.0).sin()
        };
        let f = BoundaryFunction::from_fn(&fine, BoundaryRole::Voltage, lin);
        let r = resample_boundary(&fine, &f, &coarse).unwrap();
        let s_f = fine.boundary_arclength();
        for (k, &v) in coarse.boundary_nodes().iter().enumerate() {
            let t = arclength_of(coarse.vertices()[v]);
            let i = s_f.partition_point(|&x| x <= t) - 1;
            let (a, b) = (s_f[i], s_f.get(i + 1).copied().unwrap_or(4.0));
            let w = (t - a) / (b - a);
            let expect = (1.0 - w) * f.values[i] + w * f.values[(i + 1) % s_f.len()];
            assert!((r.values[k] - expect).abs() < 1e-14);
        }
        let c2 = CrossedMesh::new(6).unwrap();
        let sub = resample_boundary(&fine, &f, &c2).unwrap();
        let direct = BoundaryFunction::from_fn(&c2, BoundaryRole::Voltage, lin);
        for (a, b) in sub.values.iter().zip(&direct.values) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    fn bubble(p: Point) -> f64 {
        (PI * p[0]).sin() * (PI * p[1]).sin()
    }

    /// Central differences of `J` under mesh deformation `x ↦ x + t W(x)`
    /// with the element conductivities carried along.
    #[test]
    fn shape_derivative_matches_finite_differences() {
        let fine = CrossedMesh::new(64).unwrap();
        let mesh = CrossedMesh::new(32).unwrap();
        let data = MeasurementSet::synthesize(
            &fine,
            &disk_sigma(&fine, [0.5, 0.5], 0.2),
            &mesh,
            5,
            0.0,
            0,
            Exec::Rayon,
        )
        .unwrap();
        let sigma = disk_sigma(&mesh, [0.45, 0.55], 0.15);
        let state = kv_state(&mesh, &sigma, &data, Exec::Rayon).unwrap();
        let tensors = shape_tensors(&mesh, &state, DerivativeForm::Distributed);
        let fields: [fn(Point) -> Point; 3] = [
            |p| [bubble(p), 0.0],
            |p| [bubble(p) * (p[0] - 0.3), bubble(p) * p[1] * p[1]],
            |p| {
                [
                    bubble(p) * (2.0 * PI * p[1]).sin(),
                    bubble(p) * (PI * p[0]).cos(),
                ]
            },
        ];
        for w in fields {
            let wv: Vec<Point> = mesh
                .vertices()
                .iter()
                .enumerate()
                .map(|(k, &p)| if mesh.is_boundary(k) { [0.0; 2] } else { w(p) })
                .collect();
            let exact = directional_derivative(&mesh, &tensors, &wv);
            let j_at = |t: f64| {
                let moved = mesh
                    .displaced(&wv.iter().map(|d| [t * d[0], t * d[1]]).collect::<Vec<_>>())
                    .unwrap();
                kv_objective(&moved, &sigma, &data, Exec::Rayon).unwrap()
            };
            let t = 1e-3;
            let fd = (j_at(t) - j_at(-t)) / (2.0 * t);
            assert!(
                (fd - exact).abs() <= 0.02 * exact.abs(),
                "fd {fd} exact {exact}"
            );
        }
    }
}
