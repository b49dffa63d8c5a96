pub mod conv;
pub mod elementwise;
pub mod linalg;
pub mod loss;
pub mod norm;
pub mod resample;
pub mod shape;
pub mod softmax;

use crate::error::{Result, TensorError};

pub(crate) fn expect_rank(op: &'static str, shape: &[usize], rank: usize) -> Result<()> {
    if shape.len() != rank {
        return Err(TensorError::Rank {
            op,
            expected: rank,
            found: shape.to_vec(),
        });
    }
    Ok(())
}

pub(crate) fn expect_dim(op: &'static str, axis: usize, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(TensorError::DimMismatch {
            op,
            axis,
            expected,
            found,
        });
    }
    Ok(())
}

pub(crate) fn expect_same_shape(op: &'static str, left: &[usize], right: &[usize]) -> Result<()> {
    if left != right {
        return Err(TensorError::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        });
    }
    Ok(())
}
