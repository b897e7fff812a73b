//! Blocked-matrix representation and block-level linear-algebra kernels.

mod batch;
mod block;
mod kernels;
mod matrix;

pub use batch::BatchedTensor;
pub use block::TensorBlock;
pub use kernels::{
    block_matmul, block_transpose, broadcast_row_add, concat_cols, elementwise_add,
    elementwise_map, kernel_pool, slice_cols, MapFn,
};
pub use matrix::{block_span, BlockedMatrix};
