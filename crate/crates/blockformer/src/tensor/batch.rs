//! A batch of equally shaped blocked matrices (Batch x Sequence x EmbeddingDim).

use crate::error::{Error, Result};
use crate::tensor::matrix::BlockedMatrix;

/// `B` blocked matrices sharing logical dimensions and block_dim; item `i` is
/// batch element `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchedTensor {
    items: Vec<BlockedMatrix>,
}

impl BatchedTensor {
    pub fn new(items: Vec<BlockedMatrix>) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("batch must contain at least one item".into()))?;
        let dims = (
            first.logical_rows(),
            first.logical_cols(),
            first.block_dim(),
        );
        for (i, item) in items.iter().enumerate() {
            let got = (item.logical_rows(), item.logical_cols(), item.block_dim());
            if got != dims {
                return Err(Error::Shape(format!(
                    "batch item {} has shape {:?}, expected {:?}",
                    i, got, dims
                )));
            }
        }
        Ok(Self { items })
    }

    pub fn batch(&self) -> usize {
        self.items.len()
    }

    pub fn seq_len(&self) -> usize {
        self.items[0].logical_rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.items[0].logical_cols()
    }

    pub fn block_dim(&self) -> usize {
        self.items[0].block_dim()
    }

    pub fn items(&self) -> &[BlockedMatrix] {
        &self.items
    }

    pub fn into_items(self) -> Vec<BlockedMatrix> {
        self.items
    }
}
