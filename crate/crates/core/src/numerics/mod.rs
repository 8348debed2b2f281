//! Dense arrays, parameters, reverse-mode tape and gradient checking.

mod array;
mod checkpoint;
mod gradcheck;
mod params;
mod tape;

pub use array::DenseArray;
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointEntry, CHECKPOINT_FORMAT_VERSION,
};
pub use gradcheck::grad_check;
pub use params::{Param, ParamStore};
pub use tape::{Tape, Var, EPS_NORM};
