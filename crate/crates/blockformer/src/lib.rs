//! Transformer-encoder inference as a pipeline of relational operators over
//! fixed-size tensor blocks, backed by a paged model store with block-level
//! deduplication and two-stage page packing.
//!
//! The crate is organized around six pieces:
//!
//! - [`tensor`]: blocked matrices and the block-level kernels (matmul,
//!   transpose, element-wise joins and maps).
//! - [`pipeline`]: relational stage execution with traces, the two-phase
//!   softmax, layer normalization, and the intermediate writer.
//! - [`model`]: the encoder itself (attention heads, feed-forward network,
//!   residual blocks) expressed over the pipeline layer.
//! - [`store`]: paged persistence, content fingerprinting, LSH near-duplicate
//!   detection, deduplication, and two-stage page packing.
//! - [`oracle`]: an independent dense reference implementation used as ground
//!   truth in tests and as the benchmark baseline.
//! - [`bench`] and [`cli`]: the timing harness, report schema, and the
//!   `blockformer` command-line driver.
//!
//! See the `examples/` directory for one runnable walkthrough per capability.

pub mod bench;
pub mod cli;
pub mod error;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod store;
pub mod tensor;

pub use error::{Error, Result};
