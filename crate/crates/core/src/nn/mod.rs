//! Numerical core: flat parameter vectors, the task MLP, the recurrent
//! Q-network, Adam and checkpoint I/O.

pub mod adam;
pub mod checkpoint;
pub mod drqn;
pub mod mlp;
pub mod param;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use drqn::{drqn_backward, drqn_batch_backward, drqn_forward, DrqnSpec};
pub use mlp::{argmax, mlp_backward, mlp_forward, softmax_rows, Activation, MlpSpec};
pub use param::{LayerShape, ParamVector, ShapeMap};
