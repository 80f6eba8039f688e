//! Differentiation, gradient checking, optimization and checkpoints.

pub mod backend;
pub mod checkpoint;
pub mod func;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;

pub use backend::{Backend, Eager};
pub use func::Func;
pub use params::{Gradients, Matrix, ParamId, ParamSpace, ParamStore, Tensor};
pub use tape::{Tape, Var};
pub use checkpoint::Checkpoint;
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use optim::{AdamConfig, EarlyStopping, LrSchedule, RiemannianAdam, StopDecision};
