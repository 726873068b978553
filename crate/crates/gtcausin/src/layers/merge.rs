//! Skip-connection merge: channel-wise concatenation of block outputs.

use crate::error::{input_err, Result};
use crate::tensor::Tensor;

/// Concatenates N×F_l×T tensors along the channel axis, preserving order.
pub fn merge_forward(blocks: &[&Tensor]) -> Result<Tensor> {
    if blocks.is_empty() {
        return input_err("merge of no blocks");
    }
    let first = blocks[0].shape();
    if first.len() != 3 {
        return input_err(format!("merge expects N×F×T blocks, got {first:?}"));
    }
    let (n, t) = (first[0], first[2]);
    for b in blocks {
        let s = b.shape();
        if s.len() != 3 || s[0] != n || s[2] != t {
            return input_err(format!(
                "block shape {s:?} does not match leading block {first:?}"
            ));
        }
    }
    let total: usize = blocks.iter().map(|b| b.shape()[1]).sum();
    let mut data = Vec::with_capacity(n * total * t);
    for ni in 0..n {
        for b in blocks {
            let f = b.shape()[1];
            let chunk = &b.data()[ni * f * t..(ni + 1) * f * t];
            data.extend_from_slice(chunk);
        }
    }
    Tensor::new(&[n, total, t], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_block_is_identity() {
        let b = Tensor::new(&[2, 3, 4], (0..24).map(|i| i as f64).collect()).unwrap();
        assert_eq!(merge_forward(&[&b]).unwrap(), b);
    }

    #[test]
    fn two_blocks_concatenate_in_order() {
        let a = Tensor::filled(&[2, 8, 3], 1.0);
        let b = Tensor::filled(&[2, 8, 3], 2.0);
        let m = merge_forward(&[&a, &b]).unwrap();
        assert_eq!(m.shape(), &[2, 16, 3]);
        for ni in 0..2 {
            for f in 0..8 {
                for t in 0..3 {
                    assert_eq!(m.at3(ni, f, t), 1.0);
                    assert_eq!(m.at3(ni, f + 8, t), 2.0);
                }
            }
        }
    }

    #[test]
    fn four_blocks_of_width_eight() {
        let blocks: Vec<Tensor> = (0..4)
            .map(|i| Tensor::filled(&[3, 8, 12], i as f64))
            .collect();
        let refs: Vec<&Tensor> = blocks.iter().collect();
        let m = merge_forward(&refs).unwrap();
        assert_eq!(m.shape(), &[3, 32, 12]);
        assert_eq!(m.at3(1, 25, 5), 3.0);
    }

    #[test]
    fn mismatched_blocks_rejected() {
        let a = Tensor::filled(&[2, 8, 3], 1.0);
        let b = Tensor::filled(&[3, 8, 3], 2.0);
        assert!(merge_forward(&[&a, &b]).is_err());
        let c = Tensor::filled(&[2, 8, 4], 2.0);
        assert!(merge_forward(&[&a, &c]).is_err());
    }
}
