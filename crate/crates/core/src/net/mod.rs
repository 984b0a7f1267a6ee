//! The unrolled reconstruction network.

pub mod conv;
pub mod forward;
pub mod params;
pub mod prox;

pub use conv::{Conv2d, FeatureMap};
pub use forward::{
    net_forward, phase, ppm_forward, reconstruct, sgd_step, transform_forward, transform_inverse,
    StageTape, Tape, PHASE_EPS,
};
pub use params::{NetConfig, NetParams, StageParams, TensorView, TensorViewMut};
pub use prox::{soft_threshold, softplus};
