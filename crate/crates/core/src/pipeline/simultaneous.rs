//! Joint recovery of the inclusion shape and its conductivity `σ₁`.
//!
//! `Φ(σ₁) = Σ_k [∫ σ|∇u_k|² − ∫_∂Ω g_k f_k]` is strictly decreasing in σ₁
//! for a fixed shape, so its root is found by Newton's method safeguarded
//! with bisection inside `[σ₀ + 10⁻³, σ₁_max]`.

use crate::error::{Error, Result, StageExt};
use crate::exec::Exec;
use crate::grid_fem::{
    boundary_inner_product, energy, ConductivityField, CrossedMesh, NeumannSolver, Point,
};
use crate::kv_levelset::{
    init_signed_distance, kv_state, reinitialize, shape_tensors, transport_levelset, KvState,
    LevelSetDescent, LevelSetField, MeasurementSet, Rasterization, Shape, StopReason, Tensor,
    VelocitySmoother,
};

use super::config::{ExperimentConfig, SigmaUpdate};
use super::phantom::Phantom;
use super::run::{measurements, shape_metrics, Meshes, ShapeMetrics};

/// Lower end of the σ₁ search interval is `σ₀ + SIGMA1_FLOOR`.
pub const SIGMA1_FLOOR: f64 = 1e-3;
const MAX_ROOT_ITER: usize = 60;

/// `Φ(σ₁)` and `Φ′(σ₁)` for a fixed shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterResidual {
    pub value: f64,
    pub derivative: f64,
    /// `Σ_k ∫ σ |∇u_k|²`, the scale of `value`.
    pub energy: f64,
}

/// `Φ` and `Φ′ = −Σ_k ∫ θ |∇u_k|²` for the conductivity
/// `σ₀ + (σ₁ − σ₀) θ`, where `θ` is the per-triangle inclusion fraction and
/// `u_k` solves the Neumann problem for current `g_k`.
pub fn parameter_residual(
    mesh: &CrossedMesh,
    fraction: &[f64],
    sigma0: f64,
    sigma1: f64,
    data: &MeasurementSet,
    exec: Exec,
) -> Result<ParameterResidual> {
    if !(sigma1 > sigma0) {
        return Err(Error::invalid(format!(
            "σ₁ estimate {sigma1} must exceed σ₀ = {sigma0}"
        )));
    }
    if fraction.len() != mesh.num_triangles() {
        return Err(Error::MeshMismatch("inclusion fraction length".into()));
    }
    let sigma = ConductivityField::from_values(
        fraction
            .iter()
            .map(|f| sigma0 + (sigma1 - sigma0) * f)
            .collect(),
    );
    let solver = NeumannSolver::new(mesh, &sigma)?;
    let u = exec.try_map_range(data.len(), |k| {
        solver.solve(&data.currents[k]).map(|p| p.values)
    })?;
    residual_from_potentials(mesh, &sigma, fraction, &u, data)
}

fn residual_from_potentials(
    mesh: &CrossedMesh,
    sigma: &ConductivityField,
    fraction: &[f64],
    u: &[Vec<f64>],
    data: &MeasurementSet,
) -> Result<ParameterResidual> {
    let mut out = ParameterResidual {
        value: 0.0,
        derivative: 0.0,
        energy: 0.0,
    };
    for (k, uk) in u.iter().enumerate() {
        let e = energy(mesh, sigma, uk);
        out.energy += e;
        out.value += e - boundary_inner_product(mesh, &data.currents[k], &data.voltages[k])?;
        out.derivative -= weighted_gradient_energy(mesh, fraction, uk);
    }
    Ok(out)
}

/// `∫ θ |∇w|²`.
fn weighted_gradient_energy(mesh: &CrossedMesh, fraction: &[f64], w: &[f64]) -> f64 {
    fraction
        .iter()
        .enumerate()
        .filter(|(_, &f)| f > 0.0)
        .map(|(t, &f)| {
            let g = mesh.gradient(t, w);
            f * mesh.area(t) * (g[0] * g[0] + g[1] * g[1])
        })
        .sum()
}

/// Root of `Φ` on `[floor, ceiling]` by Newton's method from `start`.
/// Iterates leaving the current bracket are replaced by bisection, after
/// checking that the far end of the search interval has the opposite sign.
pub fn solve_sigma1(
    eval: impl Fn(f64) -> Result<ParameterResidual>,
    start: f64,
    floor: f64,
    ceiling: f64,
    tol: f64,
) -> Result<(f64, ParameterResidual, usize)> {
    let (mut lo, mut hi) = (floor, ceiling);
    let (mut lo_checked, mut hi_checked) = (false, false);
    let mut s = start.clamp(floor, ceiling);
    for it in 1..=MAX_ROOT_ITER {
        let r = eval(s)?;
        if r.value == 0.0 {
            return Ok((s, r, it));
        }
        if r.value > 0.0 {
            lo = s;
            lo_checked = true;
        } else {
            hi = s;
            hi_checked = true;
        }
        let newton = if r.derivative < 0.0 {
            s - r.value / r.derivative
        } else {
            f64::NAN
        };
        let next = if newton > lo && newton < hi {
            newton
        } else {
            let (end, checked) = if r.value > 0.0 {
                (hi, &mut hi_checked)
            } else {
                (lo, &mut lo_checked)
            };
            if !*checked {
                let re = eval(end)?;
                if (re.value > 0.0) == (r.value > 0.0) && re.value != 0.0 {
                    return Err(Error::BracketLost(format!(
                        "Φ({s:.6}) = {:.3e} and Φ({end:.6}) = {:.3e} share a sign",
                        r.value, re.value
                    )));
                }
                *checked = true;
            }
            0.5 * (lo + hi)
        };
        if (next - s).abs() <= tol * s {
            return Ok((s, r, it));
        }
        s = next;
    }
    Err(Error::BracketLost(format!(
        "no convergence in {MAX_ROOT_ITER} iterations, bracket [{lo:.6}, {hi:.6}]"
    )))
}

/// One outer iteration of simultaneous recovery.
#[derive(Debug, Clone, PartialEq)]
pub struct SimultaneousRecord {
    pub iter: usize,
    /// Objective at the accepted shape and the updated σ₁.
    pub objective: f64,
    /// Accepted time step, zero when the shape did not move.
    pub dt: f64,
    pub rejected: usize,
    pub sigma1: f64,
    /// `Φ` at the shape of this iteration before the σ₁ update.
    pub residual: f64,
    pub derivative: f64,
    pub contour: Vec<Vec<Point>>,
}

pub struct SimultaneousOutcome {
    pub phi0: LevelSetField,
    pub phi: LevelSetField,
    pub sigma1: f64,
    pub initial_objective: f64,
    pub initial_sigma1: f64,
    pub history: Vec<SimultaneousRecord>,
    pub stop: StopReason,
    pub metrics: ShapeMetrics,
}

pub fn simultaneous_reconstruct(
    config: &ExperimentConfig,
    phantom: &Phantom,
    meshes: &Meshes,
    shapes: &[Shape],
) -> Result<SimultaneousOutcome> {
    config.validate().stage("config")?;
    let inv = &meshes.inversion;
    let phi0 = init_signed_distance(shapes, inv).stage("levelset-init")?;
    let data = measurements(config, phantom, meshes).stage("measurements")?;
    let (phi, sigma1, (initial, initial_sigma1), history, stop) = match config.sigma_update {
        SigmaUpdate::Reduced => ReducedDescent::new(config, inv, &data, phi0.clone())
            .and_then(|d| d.run())
            .stage("simultaneous")?,
        SigmaUpdate::Alternating | SigmaUpdate::Literal => {
            alternate(config, inv, &data, phi0.clone()).stage("simultaneous")?
        }
    };
    let metrics = shape_metrics(inv, &phi, phantom, config.samples).stage("metrics")?;
    Ok(SimultaneousOutcome {
        phi0,
        phi,
        sigma1,
        initial_objective: initial,
        initial_sigma1,
        history,
        stop,
        metrics,
    })
}

/// Final field and σ₁, initial objective and σ₁, history, stop reason.
type RunResult = (
    LevelSetField,
    f64,
    (f64, f64),
    Vec<SimultaneousRecord>,
    StopReason,
);

fn stagnated(initial: f64, history: &[SimultaneousRecord], window: usize, tol: f64) -> bool {
    if history.len() < window {
        return false;
    }
    let last = history[history.len() - 1].objective;
    let before = if history.len() == window {
        initial
    } else {
        history[history.len() - 1 - window].objective
    };
    before <= 0.0 || (before - last) / before < tol
}

/// Shape descent on `j(D) = J(D, σ₁(D))`, where `σ₁(D)` is the root of
/// `Φ` for the shape `D`. Implicit differentiation of `Φ(D, σ₁(D)) = 0`
/// gives the shape gradient `dJ_D − (∂_σ J / Φ′) dΦ_D`.
struct ReducedDescent<'m> {
    mesh: &'m CrossedMesh,
    data: &'m MeasurementSet,
    smoother: VelocitySmoother<'m>,
    config: &'m ExperimentConfig,
    phi: LevelSetField,
    point: Evaluated,
    accepted: usize,
}

struct Evaluated {
    sigma1: f64,
    fraction: Vec<f64>,
    state: KvState,
    residual: ParameterResidual,
}

impl<'m> ReducedDescent<'m> {
    fn new(
        config: &'m ExperimentConfig,
        mesh: &'m CrossedMesh,
        data: &'m MeasurementSet,
        phi: LevelSetField,
    ) -> Result<Self> {
        let point = evaluate(config, mesh, data, &phi, config.sigma1_init)?;
        Ok(Self {
            mesh,
            data,
            smoother: VelocitySmoother::with_clearance(mesh, config.descent.clearance)?,
            config,
            phi,
            point,
            accepted: 0,
        })
    }

    fn tensors(&self) -> Vec<Tensor> {
        let mesh = self.mesh;
        let p = &self.point;
        let mut s = shape_tensors(mesh, &p.state, self.config.descent.form);
        let djds: f64 = p
            .state
            .u
            .iter()
            .zip(&p.state.v)
            .map(|(u, v)| {
                weighted_gradient_energy(mesh, &p.fraction, v)
                    - weighted_gradient_energy(mesh, &p.fraction, u)
            })
            .sum();
        if !(p.residual.derivative < 0.0) {
            return s;
        }
        let c = -djds / p.residual.derivative;
        let sigma = p.state.sigma.values();
        for (t, st) in s.iter_mut().enumerate() {
            for u in &p.state.u {
                let g = mesh.gradient(t, u);
                let n2 = g[0] * g[0] + g[1] * g[1];
                for a in 0..2 {
                    for b in 0..2 {
                        let delta = if a == b { n2 } else { 0.0 };
                        st[a][b] += c * sigma[t] * (2.0 * g[a] * g[b] - delta);
                    }
                }
            }
        }
        s
    }

    fn step(&mut self, iter: usize) -> Result<Option<SimultaneousRecord>> {
        let v = self.smoother.velocity(&self.tensors())?;
        let d = &self.config.descent;
        let dt0 = v.admissible_dt(self.mesh.n()) * d.dt_scale;
        if !dt0.is_finite() {
            return Ok(None);
        }
        let current = self.point.state.objective;
        let mut dt = dt0;
        let mut rejected = 0;
        while dt >= d.dt_min * dt0 {
            let trial = transport_levelset(&self.phi, &v, dt)?;
            let fraction = trial.inside_fraction(self.mesh, d.rasterization)?;
            if fraction == self.point.fraction {
                if d.rasterization == Rasterization::Centroid {
                    break;
                }
            } else {
                let point = evaluate(self.config, self.mesh, self.data, &trial, self.point.sigma1)?;
                if point.state.objective < current {
                    let residual = self.point.residual;
                    self.phi = trial;
                    self.point = point;
                    self.accepted += 1;
                    if d.reinit_every > 0 && self.accepted.is_multiple_of(d.reinit_every) {
                        self.try_reinitialize()?;
                    }
                    return Ok(Some(SimultaneousRecord {
                        iter,
                        objective: self.point.state.objective,
                        dt,
                        rejected,
                        sigma1: self.point.sigma1,
                        residual: residual.value,
                        derivative: residual.derivative,
                        contour: self.phi.contours(),
                    }));
                }
            }
            rejected += 1;
            dt *= d.shrink;
        }
        Ok(None)
    }

    fn try_reinitialize(&mut self) -> Result<()> {
        let candidate = reinitialize(&self.phi);
        let rule = self.config.descent.rasterization;
        if candidate.inside_fraction(self.mesh, rule)? == self.point.fraction {
            self.phi = candidate;
            return Ok(());
        }
        let point = evaluate(
            self.config,
            self.mesh,
            self.data,
            &candidate,
            self.point.sigma1,
        )?;
        if point.state.objective <= self.point.state.objective {
            self.phi = candidate;
            self.point = point;
        }
        Ok(())
    }

    fn run(mut self) -> Result<RunResult> {
        let d = self.config.descent;
        let initial = self.point.state.objective;
        let start = (initial, self.point.sigma1);
        let mut history = Vec::new();
        let mut stop = StopReason::MaxIter;
        for iter in 1..=d.max_iter {
            match self.step(iter)? {
                Some(rec) => history.push(rec),
                None if iter == 1 => return Err(Error::StationaryInitialization),
                None => {
                    stop = StopReason::StepUnderflow;
                    break;
                }
            }
            if stagnated(initial, &history, d.stop_window, d.stop_tol) {
                stop = StopReason::Stagnation;
                break;
            }
        }
        Ok((self.phi, self.point.sigma1, start, history, stop))
    }
}

/// σ₁ root for the shape `phi`, then the Kohn–Vogelius state at that σ₁.
fn evaluate(
    config: &ExperimentConfig,
    mesh: &CrossedMesh,
    data: &MeasurementSet,
    phi: &LevelSetField,
    start: f64,
) -> Result<Evaluated> {
    let rule = config.descent.rasterization;
    let sigma0 = config.sigma0;
    let fraction = phi.inside_fraction(mesh, rule)?;
    let eval = |s: f64| parameter_residual(mesh, &fraction, sigma0, s, data, config.exec);
    let (sigma1, residual, _) = solve_sigma1(
        eval,
        start,
        sigma0 + SIGMA1_FLOOR,
        config.sigma1_max(),
        config.newton_tol,
    )?;
    let state = kv_state(
        mesh,
        &phi.conductivity(mesh, sigma0, sigma1, rule)?,
        data,
        config.exec,
    )?;
    Ok(Evaluated {
        sigma1,
        fraction,
        state,
        residual,
    })
}

/// One level-set step at the current σ₁, then one σ₁ update for the new
/// shape: a safeguarded Newton step on `Φ = 0`, or with
/// [`SigmaUpdate::Literal`] a projected step decreasing `Φ` itself.
fn alternate(
    config: &ExperimentConfig,
    mesh: &CrossedMesh,
    data: &MeasurementSet,
    phi0: LevelSetField,
) -> Result<RunResult> {
    let d = config.descent;
    let rule = d.rasterization;
    let sigma0 = config.sigma0;
    let (floor, ceiling) = (sigma0 + SIGMA1_FLOOR, config.sigma1_max());
    let mut descent =
        LevelSetDescent::new(mesh, data, phi0, sigma0, config.sigma1_init, d, config.exec)?;
    let initial = descent.objective();
    let mut history: Vec<SimultaneousRecord> = Vec::new();
    let mut shape_records = Vec::new();
    let mut stop = StopReason::MaxIter;
    for iter in 1..=d.max_iter {
        let step = descent.step(iter)?;
        if let Some(rec) = &step {
            shape_records.push(rec.clone());
        }
        let sigma1 = descent.sigma1();
        let fraction = descent.phi().inside_fraction(mesh, rule)?;
        let state = descent.state();
        let r = residual_from_potentials(mesh, &state.sigma, &fraction, &state.u, data)?;
        let next = match config.sigma_update {
            SigmaUpdate::Literal => literal_update(sigma1, r, floor, ceiling),
            _ => {
                // A single Newton iteration of the safeguarded solver.
                let eval = |s: f64| {
                    if s == sigma1 {
                        Ok(r)
                    } else {
                        parameter_residual(mesh, &fraction, sigma0, s, data, config.exec)
                    }
                };
                newton_step(eval, sigma1, r, floor, ceiling)?
            }
        };
        let change = (next - sigma1).abs() / sigma1;
        if next != sigma1 {
            descent.set_sigma1(next)?;
        }
        history.push(SimultaneousRecord {
            iter,
            objective: descent.objective(),
            dt: step.as_ref().map_or(0.0, |s| s.dt),
            rejected: step.as_ref().map_or(0, |s| s.rejected),
            sigma1: next,
            residual: r.value,
            derivative: r.derivative,
            contour: descent.phi().contours(),
        });
        let shape_done = step.is_none() || descent.stagnated(initial, &shape_records);
        if shape_done && change <= config.newton_tol {
            stop = if step.is_none() {
                StopReason::StepUnderflow
            } else {
                StopReason::Stagnation
            };
            break;
        }
    }
    let sigma1 = descent.sigma1();
    Ok((
        descent.into_phi(),
        sigma1,
        (initial, config.sigma1_init),
        history,
        stop,
    ))
}

/// Newton step from `s` with residual `r`; falls back to bisection of the
/// validated bracket when the step leaves it.
fn newton_step(
    eval: impl Fn(f64) -> Result<ParameterResidual>,
    s: f64,
    r: ParameterResidual,
    floor: f64,
    ceiling: f64,
) -> Result<f64> {
    if r.value == 0.0 {
        return Ok(s);
    }
    let newton = if r.derivative < 0.0 {
        s - r.value / r.derivative
    } else {
        f64::NAN
    };
    if newton > floor && newton < ceiling {
        return Ok(newton);
    }
    let end = if r.value > 0.0 { ceiling } else { floor };
    let re = eval(end)?;
    if (re.value > 0.0) == (r.value > 0.0) && re.value != 0.0 {
        return Err(Error::BracketLost(format!(
            "Φ({s:.6}) = {:.3e} and Φ({end:.6}) = {:.3e} share a sign",
            r.value, re.value
        )));
    }
    Ok(0.5 * (s + end))
}

/// Projected step that lowers `Φ` itself, raising σ₁ by a tenth per call.
fn literal_update(sigma1: f64, r: ParameterResidual, floor: f64, ceiling: f64) -> f64 {
    if r.derivative >= 0.0 {
        return sigma1;
    }
    let tau = 0.1 * sigma1 / r.derivative.abs();
    (sigma1 - tau * r.derivative).clamp(floor, ceiling)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ntd::analytic_current;

    fn same_mesh_data(mesh: &CrossedMesh, phantom: &Phantom, count: usize) -> MeasurementSet {
        let sigma = phantom.conductivity(mesh);
        let solver = NeumannSolver::new(mesh, &sigma).unwrap();
        let currents: Vec<_> = (1..=count).map(|k| analytic_current(mesh, k)).collect();
        let voltages = currents
            .iter()
            .map(|g| solver.solve(g).unwrap().trace(mesh))
            .collect();
        MeasurementSet::from_pairs(mesh, currents, voltages).unwrap()
    }

    fn truth_fraction(mesh: &CrossedMesh, phantom: &Phantom) -> Vec<f64> {
        (0..mesh.num_triangles())
            .map(|t| {
                if phantom.contains(mesh.centroid(t)) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect()
    }

    #[test]
    fn residual_vanishes_at_truth_and_decreases() {
        let mesh = CrossedMesh::new(24).unwrap();
        let phantom = Phantom::by_name("disk", 1.0, 2.0).unwrap();
        let data = same_mesh_data(&mesh, &phantom, 3);
        let fraction = truth_fraction(&mesh, &phantom);
        let at = |s: f64| parameter_residual(&mesh, &fraction, 1.0, s, &data, Exec::Rayon).unwrap();
        let r = at(2.0);
        assert!(r.value.abs() <= 1e-8 * r.energy, "{r:?}");
        assert!(r.derivative < 0.0);
        assert!(at(1.1).value > 0.0 && at(4.0).value < 0.0);
        let e = 1e-4;
        let fd = (at(1.5 + e).value - at(1.5 - e).value) / (2.0 * e);
        let exact = at(1.5).derivative;
        assert!((fd - exact).abs() <= 1e-5 * fd.abs(), "{fd} vs {exact}");
        assert!(parameter_residual(&mesh, &fraction, 1.0, 1.0, &data, Exec::Rayon).is_err());
    }

    #[test]
    fn root_solver_recovers_truth() {
        let mesh = CrossedMesh::new(24).unwrap();
        let phantom = Phantom::by_name("disk", 1.0, 2.0).unwrap();
        let data = same_mesh_data(&mesh, &phantom, 3);
        let fraction = truth_fraction(&mesh, &phantom);
        let eval = |s: f64| parameter_residual(&mesh, &fraction, 1.0, s, &data, Exec::Rayon);
        for start in [1.05, 1.5, 9.0] {
            let (s, _, it) = solve_sigma1(eval, start, 1.001, 10.0, 1e-10).unwrap();
            assert!((s - 2.0).abs() < 1e-6, "start {start}: {s} after {it}");
        }
    }

    fn linear(root: f64) -> impl Fn(f64) -> Result<ParameterResidual> {
        move |s| {
            Ok(ParameterResidual {
                value: root - s,
                derivative: -1.0,
                energy: 1.0,
            })
        }
    }

    #[test]
    fn safeguards() {
        let (s, _, _) = solve_sigma1(linear(3.0), 1.5, 1.001, 10.0, 1e-12).unwrap();
        assert!((s - 3.0).abs() < 1e-12);
        // Root beyond the ceiling.
        assert!(matches!(
            solve_sigma1(linear(12.0), 2.0, 1.001, 10.0, 1e-12),
            Err(Error::BracketLost(_))
        ));
        // Flat derivative: bisection toward the validated end.
        let flat = |s: f64| {
            Ok(ParameterResidual {
                value: 3.0 - s,
                derivative: -1e-9,
                energy: 1.0,
            })
        };
        let r = flat(2.0).unwrap();
        let next = newton_step(flat, 2.0, r, 1.001, 10.0).unwrap();
        assert!((next - 6.0).abs() < 1e-12);
        let (s, _, _) = solve_sigma1(flat, 2.0, 1.001, 10.0, 1e-12).unwrap();
        assert!((s - 3.0).abs() < 1e-9);
        let r = linear(12.0)(2.0).unwrap();
        assert!(newton_step(linear(12.0), 2.0, r, 1.001, 10.0).is_err());
        assert_eq!(literal_update(2.0, r, 1.001, 10.0), 2.2);
    }
}
