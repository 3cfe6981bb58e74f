//! Dense numeric kernel: row-major tensors, a reverse-mode tape, and Adam.
//!
//! Only the operations the hyper label model needs are provided. Every
//! reduction runs in a fixed order so seeded runs are bit-reproducible.

mod adam;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use tape::{sigmoid as sigmoid_scalar, Gradients, Groups, Tape, Var};
pub use tensor::Tensor;
pub(crate) use tensor::gemm_nt;
