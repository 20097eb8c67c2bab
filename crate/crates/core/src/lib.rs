//! Orthonormal k-frame randomized encoding for one-shot federated kernel
//! learning.
//!
//! Parties derive a shared [`keys::EncodingKey`] from a pre-shared seed,
//! encode their rows with [`encoder::encode`], and a server reconstructs the
//! exact kernel matrix with [`kernel::assemble_global`] before training on it
//! with [`ml`].

pub mod encoder;
pub mod io;
pub mod kernel;
pub mod keys;
pub mod linalg;
pub mod ml;
pub mod rng;

pub use encoder::{
    encode, encode_incremental, encode_into, flatten_images, DataMatrix, EncodeError,
    EncodedMatrix, ImageTensor,
};
pub use kernel::{assemble_global, plaintext_gram, GlobalGram, KernelError, KernelSpec};
pub use keys::{build_key, derive_plan, verify_key, EncodingKey, FramePlan, KeyError, Seed};
pub use linalg::Matrix;
