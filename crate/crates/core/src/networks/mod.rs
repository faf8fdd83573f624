//! Network families assembled from the layers, with analytic input
//! gradients recorded on the same tape as the forward pass.

mod checkpoint;
mod icnn;
mod model;
mod oracle;
mod pickan;
mod spec;

pub use checkpoint::{content_hash, Checkpoint};
pub use icnn::Icnn;
pub use model::{Arch, Model, Pass};
pub use oracle::construct_max_affine_p1;
pub use pickan::Pickan;
pub use spec::{Activation, Family, NetworkSpec};
