//! Kohn–Vogelius shape reconstruction with level sets.

mod descent;
mod field;
mod geometry;
mod objective;

pub use descent::{
    levelset_reconstruct, DescentConfig, DescentRecord, DescentResult, LevelSetDescent, StopReason,
};
pub use field::{
    init_signed_distance, reinitialize, transport_levelset, LevelSetField, Rasterization,
    VelocityField,
};
pub use geometry::{union_distance, Shape};
pub use objective::{
    directional_derivative, kv_objective, kv_state, resample_boundary, shape_gradient_velocity,
    shape_tensors, DerivativeForm, KvState, MeasurementSet, Tensor, VelocitySmoother,
};
