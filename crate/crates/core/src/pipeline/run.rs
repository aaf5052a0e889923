use crate::error::{Error, Result, StageExt};
use crate::grid_fem::{ConductivityField, CrossedMesh};
use crate::kv_levelset::{
    init_signed_distance, DescentResult, LevelSetDescent, LevelSetField, MeasurementSet, Shape,
};
use crate::matops::BoundMode;
use crate::monotonicity::{
    ball_stack, linearized_alpha_bound, linearized_scan, pixel_bounds_from_difference,
    pixel_bounds_noisy, pixel_stack, regularized_reconstruction, PixelPartition, TestBallGrid,
};
use crate::ntd::{add_operator_noise, ntd_matrix, Background, CurrentBasis, NtdMatrix};

use super::config::{ExperimentConfig, NtdMesh};
use super::initial_guess::{extract_initial_guess_with, InitialGuess};
use super::phantom::Phantom;

/// Lower end of the σ₁ search interval is `σ₀ + SIGMA1_FLOOR`.
pub const SIGMA1_FLOOR: f64 = 1e-3;

/// Data mesh (forward simulation) and inversion mesh.
pub struct Meshes {
    pub data: CrossedMesh,
    pub inversion: CrossedMesh,
}

impl Meshes {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            data: CrossedMesh::new(config.data_n)?,
            inversion: CrossedMesh::new(config.inversion_n)?,
        })
    }
}

pub fn load_phantom(config: &ExperimentConfig) -> Result<Phantom> {
    Phantom::by_name(&config.phantom, config.sigma0, config.sigma1)
}

/// Background solutions on the inversion mesh and the (possibly noisy)
/// difference `Λ̄(σ) − Λ̄(σ₀)`.
pub struct MonotonicityData {
    pub basis: CurrentBasis,
    pub background: Background,
    pub difference: NtdMatrix,
}

impl MonotonicityData {
    /// Wraps a difference matrix read from disk.
    pub fn from_difference(
        config: &ExperimentConfig,
        inversion: &CrossedMesh,
        difference: NtdMatrix,
    ) -> Result<Self> {
        let basis = CurrentBasis::new(inversion, config.currents, config.orthonormalize)?;
        if difference.dim() != basis.len() {
            return Err(Error::invalid(format!(
                "NtD data of size {} for {} currents",
                difference.dim(),
                basis.len()
            )));
        }
        let background = Background::new(inversion, config.sigma0, &basis, config.exec)?;
        Ok(Self {
            basis,
            background,
            difference,
        })
    }
}

pub fn monotonicity_data(
    config: &ExperimentConfig,
    phantom: &Phantom,
    meshes: &Meshes,
) -> Result<MonotonicityData> {
    let exec = config.exec;
    let inv = &meshes.inversion;
    let basis = CurrentBasis::new(inv, config.currents, config.orthonormalize)?;
    let background = Background::new(inv, config.sigma0, &basis, exec)?;
    let clean = match config.ntd_mesh {
        NtdMesh::Inversion => {
            ntd_matrix(inv, &phantom.conductivity(inv), &basis, exec)?.difference(background.ntd())
        }
        NtdMesh::Data => {
            let fine = &meshes.data;
            let fb = basis.on_mesh(fine);
            let l1 = ntd_matrix(fine, &phantom.conductivity(fine), &fb, exec)?;
            let l0 = ntd_matrix(
                fine,
                &ConductivityField::constant(fine, config.sigma0),
                &fb,
                exec,
            )?;
            l1.difference(&l0)
        }
    };
    let difference = add_operator_noise(&clean, config.delta, config.noise_seed()?)?;
    Ok(MonotonicityData {
        basis,
        background,
        difference,
    })
}

/// Linearized monotonicity scan over the configured test balls.
pub fn run_scan(
    config: &ExperimentConfig,
    inversion: &CrossedMesh,
    data: &MonotonicityData,
) -> Result<TestBallGrid> {
    let balls = TestBallGrid::uniform_balls(config.balls, config.ball_radius);
    let stack = ball_stack(inversion, &data.background, &balls, config.exec)?;
    linearized_scan(
        &data.difference,
        &stack,
        &balls,
        config.alpha,
        linearized_alpha_bound(config.sigma0, config.sigma1),
        data.difference.noise_level,
        config.exec,
    )
}

/// Pixel bounds and the box-constrained least-squares fit.
pub fn run_regularize(
    config: &ExperimentConfig,
    inversion: &CrossedMesh,
    data: &MonotonicityData,
) -> Result<PixelPartition> {
    let exec = config.exec;
    let np = config.pixels;
    let stack = pixel_stack(inversion, &data.background, np, exec)?;
    let bounds = match config.bounds {
        BoundMode::Simplified => vec![config.cbar; np * np],
        BoundMode::Full if data.difference.noise_level > 0.0 => pixel_bounds_noisy(
            &data.difference,
            data.difference.noise_level,
            &stack,
            config.cbar,
            exec,
        )?,
        BoundMode::Full => {
            pixel_bounds_from_difference(&data.difference, &stack, config.cbar, exec)?
        }
    };
    regularized_reconstruction(
        &data.difference,
        &stack,
        &bounds,
        config.cbar,
        config.qp_tol,
        config.qp_max_iter,
    )
}

pub fn measurements(
    config: &ExperimentConfig,
    phantom: &Phantom,
    meshes: &Meshes,
) -> Result<MeasurementSet> {
    let mut data = MeasurementSet::synthesize(
        &meshes.data,
        &phantom.conductivity(&meshes.data),
        &meshes.inversion,
        config.measurements,
        config.eta,
        config.noise_seed()?,
        config.exec,
    )?;
    if config.calibrate {
        data.calibrate(&meshes.data, &meshes.inversion, config.sigma0, config.exec)?;
    }
    Ok(data)
}

/// Reconstruction quality against the phantom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeMetrics {
    pub symmetric_difference: f64,
    pub true_area: f64,
    pub reconstructed_area: f64,
}

impl ShapeMetrics {
    pub fn relative(&self) -> f64 {
        self.symmetric_difference / self.true_area
    }
}

pub fn shape_metrics(
    mesh: &CrossedMesh,
    phi: &LevelSetField,
    phantom: &Phantom,
    samples: usize,
) -> Result<ShapeMetrics> {
    Ok(ShapeMetrics {
        symmetric_difference: phi.symmetric_difference(mesh, |p| phantom.contains(p), samples)?,
        true_area: phantom.area(samples),
        reconstructed_area: phi.area(mesh)?,
    })
}

/// F1 score of a predicted pixel set against a ground-truth mask.
pub fn f1_score(predicted: &[bool], truth: &[bool]) -> f64 {
    let (mut tp, mut fp, mut fnn) = (0usize, 0usize, 0usize);
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fnn += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fnn) as f64
}

/// Output of the level-set stage.
pub struct LevelSetOutcome {
    pub phi0: LevelSetField,
    pub descent: DescentResult,
    pub metrics: ShapeMetrics,
}

pub fn run_levelset(
    config: &ExperimentConfig,
    phantom: &Phantom,
    meshes: &Meshes,
    shapes: &[Shape],
) -> Result<LevelSetOutcome> {
    let inv = &meshes.inversion;
    let phi0 = init_signed_distance(shapes, inv).stage("levelset-init")?;
    let data = measurements(config, phantom, meshes).stage("measurements")?;
    let descent = LevelSetDescent::new(
        inv,
        &data,
        phi0.clone(),
        config.sigma0,
        config.sigma1,
        config.descent,
        config.exec,
    )
    .and_then(|d| d.run())
    .stage("levelset")?;
    let metrics = shape_metrics(inv, &descent.phi, phantom, config.samples).stage("metrics")?;
    Ok(LevelSetOutcome {
        phi0,
        descent,
        metrics,
    })
}

/// Every intermediate artifact of the monotonicity-initialized pipeline.
pub struct CombinedOutcome {
    pub difference: NtdMatrix,
    pub partition: PixelPartition,
    pub guess: InitialGuess,
    pub levelset: LevelSetOutcome,
}

/// Monotonicity regularization for the initial shape, then level-set
/// refinement.
pub fn combined_reconstruct(
    config: &ExperimentConfig,
    phantom: &Phantom,
) -> Result<CombinedOutcome> {
    let (meshes, partition, guess, difference) = initialize(config, phantom)?;
    let levelset = run_levelset(config, phantom, &meshes, &guess.shapes)?;
    Ok(CombinedOutcome {
        difference,
        partition,
        guess,
        levelset,
    })
}

fn initialize(
    config: &ExperimentConfig,
    phantom: &Phantom,
) -> Result<(Meshes, PixelPartition, InitialGuess, NtdMatrix)> {
    config.validate().stage("config")?;
    let meshes = Meshes::new(config).stage("mesh")?;
    let data = monotonicity_data(config, phantom, &meshes).stage("ntd")?;
    let partition = run_regularize(config, &meshes.inversion, &data).stage("regularize")?;
    let guess = extract_initial_guess_with(&partition, config.init_threshold, config.min_component)
        .stage("initial-guess")?;
    Ok((meshes, partition, guess, data.difference))
}

/// Initial shapes from monotonicity regularization.
pub fn monotonicity_shapes(
    config: &ExperimentConfig,
    phantom: &Phantom,
) -> Result<(Meshes, PixelPartition, InitialGuess, NtdMatrix)> {
    initialize(config, phantom)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_counts() {
        let t = [true, true, false, false];
        assert_eq!(f1_score(&t, &t), 1.0);
        assert!((f1_score(&[true, false, true, false], &t) - 0.5).abs() < 1e-12);
        assert_eq!(f1_score(&[false; 4], &t), 0.0);
    }
}
