//! Parameter storage, feed-forward networks, Adam and the finite-difference
//! gradient oracle.

mod adam;
pub mod fd;
mod net;
mod params;

pub use adam::{adam_step, AdamState, DEFAULT_LR};
pub use fd::{finite_diff_grad, max_relative_error};
pub use net::{check_finite, Activation, Layer, NetSpec, Trace};
pub use params::{ParamStore, SliceInfo};
