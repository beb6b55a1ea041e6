//! Toy diffusion-transformer block built from the accelerated primitives, and
//! few-step consistency sampling with two-expert switching.

mod block;
mod norm;
mod sampler;
mod schedule;
mod weights;

pub use block::{toy_block_forward, AttnMode, BlockOptions, Stage, StageClock, ToyModel};
pub use norm::{layernorm, layernorm_unfused, rmsnorm, rmsnorm_unfused, DEFAULT_EPS};
pub use sampler::{consistency_sample, two_expert_sample, Denoiser, Sample, TwoExpertConfig};
pub use schedule::{make_schedule, Schedule, DEFAULT_SIGMA_MAX, DEFAULT_SIGMA_MIN};
pub use weights::{Linear, ToyBlockWeights, ToyConfig};
