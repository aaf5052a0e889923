use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::grid_fem::{ConductivityField, CrossedMesh, Point};

use super::field::{reinitialize, transport_levelset, LevelSetField, Rasterization, VelocityField};
use super::objective::{
    kv_state, shape_tensors, DerivativeForm, KvState, MeasurementSet, VelocitySmoother,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentConfig {
    /// First trial step as a fraction of the CFL limit `0.5 h / max|V|`.
    pub dt_scale: f64,
    pub shrink: f64,
    /// Smallest trial step relative to the first one.
    pub dt_min: f64,
    pub max_iter: usize,
    pub stop_tol: f64,
    pub stop_window: usize,
    pub reinit_every: usize,
    /// Width of the boundary strip in which velocities vanish.
    pub clearance: f64,
    pub rasterization: Rasterization,
    pub form: DerivativeForm,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            dt_scale: 1.0,
            shrink: 0.5,
            dt_min: 1e-6,
            max_iter: 300,
            stop_tol: 1e-4,
            stop_window: 10,
            reinit_every: 5,
            clearance: 0.05,
            rasterization: Rasterization::Centroid,
            form: DerivativeForm::Distributed,
        }
    }
}

impl DescentConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dt_scale > 0.0
            && self.dt_scale <= 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.dt_min > 0.0
            && self.dt_min < 1.0
            && self.stop_tol > 0.0
            && self.stop_window > 0
            && self.max_iter > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "invalid descent configuration {self:?}"
            )))
        }
    }
}

/// One accepted iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct DescentRecord {
    pub iter: usize,
    pub objective: f64,
    /// Objective before the step, at the same conductivities.
    pub previous: f64,
    pub dt: f64,
    pub rejected: usize,
    pub sigma1: f64,
    pub contour: Vec<Vec<Point>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Stagnation,
    StepUnderflow,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct DescentResult {
    pub phi: LevelSetField,
    pub initial_objective: f64,
    pub history: Vec<DescentRecord>,
    pub stop: StopReason,
}

impl DescentResult {
    pub fn final_objective(&self) -> f64 {
        self.history
            .last()
            .map_or(self.initial_objective, |r| r.objective)
    }
}

/// Kohn–Vogelius descent state for a fixed mesh and data set.
pub struct LevelSetDescent<'m> {
    mesh: &'m CrossedMesh,
    data: &'m MeasurementSet,
    smoother: VelocitySmoother<'m>,
    config: DescentConfig,
    sigma0: f64,
    sigma1: f64,
    exec: Exec,
    phi: LevelSetField,
    state: KvState,
    accepted: usize,
}

impl<'m> LevelSetDescent<'m> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mesh: &'m CrossedMesh,
        data: &'m MeasurementSet,
        phi: LevelSetField,
        sigma0: f64,
        sigma1: f64,
        config: DescentConfig,
        exec: Exec,
    ) -> Result<Self> {
        config.validate()?;
        if !(sigma0 > 0.0 && sigma1 > 0.0) {
            return Err(Error::invalid("conductivities must be positive"));
        }
        let sigma = phi.conductivity(mesh, sigma0, sigma1, config.rasterization)?;
        let state = kv_state(mesh, &sigma, data, exec)?;
        Ok(Self {
            mesh,
            data,
            smoother: VelocitySmoother::with_clearance(mesh, config.clearance)?,
            config,
            sigma0,
            sigma1,
            exec,
            phi,
            state,
            accepted: 0,
        })
    }

    pub fn phi(&self) -> &LevelSetField {
        &self.phi
    }

    pub fn objective(&self) -> f64 {
        self.state.objective
    }

    pub fn state(&self) -> &KvState {
        &self.state
    }

    pub fn sigma1(&self) -> f64 {
        self.sigma1
    }

    pub fn into_phi(self) -> LevelSetField {
        self.phi
    }

    fn conductivity(&self, phi: &LevelSetField) -> Result<ConductivityField> {
        phi.conductivity(
            self.mesh,
            self.sigma0,
            self.sigma1,
            self.config.rasterization,
        )
    }

    /// Changes the inclusion conductivity and refreshes the forward states.
    pub fn set_sigma1(&mut self, sigma1: f64) -> Result<()> {
        if !(sigma1 > 0.0) {
            return Err(Error::invalid("conductivities must be positive"));
        }
        self.sigma1 = sigma1;
        let sigma = self.conductivity(&self.phi)?;
        self.state = kv_state(self.mesh, &sigma, self.data, self.exec)?;
        Ok(())
    }

    pub fn velocity(&self) -> Result<VelocityField> {
        self.smoother
            .velocity(&shape_tensors(self.mesh, &self.state, self.config.form))
    }

    /// Backtracking step. Returns `None` when no trial step down to
    /// `dt_min · Δt₀` lowers the objective.
    pub fn step(&mut self, iter: usize) -> Result<Option<DescentRecord>> {
        let v = self.velocity()?;
        let dt0 = v.admissible_dt(self.mesh.n()) * self.config.dt_scale;
        if !dt0.is_finite() {
            return Ok(None);
        }
        let mut dt = dt0;
        let mut rejected = 0;
        let current = self.state.objective;
        let current_sigma = self.state.sigma.values().to_vec();
        while dt >= self.config.dt_min * dt0 {
            let trial = transport_levelset(&self.phi, &v, dt)?;
            let sigma = self.conductivity(&trial)?;
            if sigma.values() == current_sigma.as_slice() {
                // Smaller steps cannot change the rasterized shape either
                // under the centroid rule; other rules just keep shrinking.
                if self.config.rasterization == Rasterization::Centroid {
                    break;
                }
            } else {
                let state = kv_state(self.mesh, &sigma, self.data, self.exec)?;
                if state.objective < current {
                    self.phi = trial;
                    self.state = state;
                    self.accepted += 1;
                    if self.config.reinit_every > 0
                        && self.accepted.is_multiple_of(self.config.reinit_every)
                    {
                        self.try_reinitialize()?;
                    }
                    return Ok(Some(DescentRecord {
                        iter,
                        objective: self.state.objective,
                        previous: current,
                        dt,
                        rejected,
                        sigma1: self.sigma1,
                        contour: self.phi.contours(),
                    }));
                }
            }
            rejected += 1;
            dt *= self.config.shrink;
        }
        Ok(None)
    }

    /// Keeps the reinitialized field only if it does not raise the objective.
    fn try_reinitialize(&mut self) -> Result<()> {
        let candidate = reinitialize(&self.phi);
        let sigma = self.conductivity(&candidate)?;
        if sigma.values() == self.state.sigma.values() {
            self.phi = candidate;
            return Ok(());
        }
        let state = kv_state(self.mesh, &sigma, self.data, self.exec)?;
        if state.objective <= self.state.objective {
            self.phi = candidate;
            self.state = state;
        }
        Ok(())
    }

    /// True when the relative decrease over the last `stop_window` accepted
    /// objectives (preceded by `initial`) falls below `stop_tol`.
    pub fn stagnated(&self, initial: f64, history: &[DescentRecord]) -> bool {
        let w = self.config.stop_window;
        if history.len() < w {
            return false;
        }
        let last = history[history.len() - 1].objective;
        let before = if history.len() == w {
            initial
        } else {
            history[history.len() - 1 - w].objective
        };
        before <= 0.0 || (before - last) / before < self.config.stop_tol
    }

    pub fn run(mut self) -> Result<DescentResult> {
        let initial = self.state.objective;
        let mut history: Vec<DescentRecord> = Vec::new();
        let mut stop = StopReason::MaxIter;
        for iter in 1..=self.config.max_iter {
            match self.step(iter)? {
                Some(rec) => history.push(rec),
                None if iter == 1 => return Err(Error::StationaryInitialization),
                None => {
                    stop = StopReason::StepUnderflow;
                    break;
                }
            }
            if self.stagnated(initial, &history) {
                stop = StopReason::Stagnation;
                break;
            }
        }
        Ok(DescentResult {
            phi: self.phi,
            initial_objective: initial,
            history,
            stop,
        })
    }
}

/// Level-set descent from `phi0` with fixed conductivities.
#[allow(clippy::too_many_arguments)]
pub fn levelset_reconstruct(
    mesh: &CrossedMesh,
    data: &MeasurementSet,
    phi0: LevelSetField,
    sigma0: f64,
    sigma1: f64,
    config: DescentConfig,
    exec: Exec,
) -> Result<DescentResult> {
    LevelSetDescent::new(mesh, data, phi0, sigma0, sigma1, config, exec)?.run()
}
