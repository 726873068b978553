//! Graph diffusion convolution over forward and reverse random walks,
//! plus the truncation-tail bound used to pick the step count.

use crate::autodiff::Tape;
use crate::error::{input_err, Result};
use crate::graph::RandomWalks;
use crate::tensor::Tensor;
use std::sync::Arc;

/// Single-snapshot diffusion: x is N×P, theta is Q×P×K×2, output N×Q.
/// Step k applies the k-th power of each walk; k = 0 is the identity.
pub fn diffusion_forward(theta: &Tensor, x: &Tensor, walks: &Arc<RandomWalks>) -> Result<Tensor> {
    if x.rank() != 2 {
        return input_err(format!("diffusion input must be N×P, got {:?}", x.shape()));
    }
    let (n, p) = (x.rows(), x.cols());
    let mut tape = Tape::new();
    let xv = tape.constant(x.reshaped(&[n, p, 1])?);
    let th = tape.constant(theta.clone());
    let out = tape.diffusion(xv, th, walks)?;
    let q = tape.shape(out)[1];
    tape.value(out).reshaped(&[n, q])
}

/// Mass of the stationary-walk series beyond `k_max` steps:
/// Σ_{k>k_max} α(1−α)^k = (1−α)^(k_max+1).
pub fn diffusion_tail_norm(alpha: f64, k_max: u32) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return input_err(format!(
            "restart probability must be in (0, 1], got {alpha}"
        ));
    }
    Ok((1.0 - alpha).powi(k_max as i32 + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{self, DistanceRecord};
    use crate::tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(from: &str, to: &str, cost: f64) -> DistanceRecord {
        DistanceRecord {
            from: from.into(),
            to: to.into(),
            cost,
        }
    }

    fn five_node_walks() -> Arc<RandomWalks> {
        let g = graph::build_adjacency(
            &[
                rec("a", "b", 2.0),
                rec("b", "c", 3.0),
                rec("c", "d", 2.5),
                rec("d", "e", 4.0),
                rec("e", "a", 3.0),
                rec("b", "e", 5.0),
            ],
            3.0,
            10.0,
        )
        .unwrap();
        Arc::new(graph::build_random_walks(&g).unwrap())
    }

    #[test]
    fn zeroth_power_is_identity() {
        let walks = five_node_walks();
        let theta = Tensor::new(&[1, 1, 1, 2], vec![1.0, 0.0]).unwrap();
        let x = Tensor::new(&[5, 1], vec![1.0, -2.0, 3.0, 0.5, 4.0]).unwrap();
        let out = diffusion_forward(&theta, &x, &walks).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn zero_theta_gives_zero() {
        let walks = five_node_walks();
        let theta = Tensor::zeros(&[2, 1, 3, 2]);
        let x = Tensor::new(&[5, 1], vec![1.0, -2.0, 3.0, 0.5, 4.0]).unwrap();
        let out = diffusion_forward(&theta, &x, &walks).unwrap();
        assert_eq!(out.data(), &[0.0; 10]);
    }

    #[test]
    fn three_steps_match_matrix_power_oracle() {
        let walks = five_node_walks();
        let (p, q, k_max) = (2, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let theta = {
            let data = (0..q * p * k_max * 2)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            Tensor::new(&[q, p, k_max, 2], data).unwrap()
        };
        let x = {
            let data = (0..5 * p).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Tensor::new(&[5, p], data).unwrap()
        };
        let got = diffusion_forward(&theta, &x, &walks).unwrap();

        // Explicit accumulation of walk powers applied column by column.
        let mut fwd = vec![eye(5)];
        let mut rev = vec![eye(5)];
        for k in 1..k_max {
            fwd.push(tensor::matmul(&walks.forward, &fwd[k - 1]).unwrap());
            rev.push(tensor::matmul(&walks.reverse, &rev[k - 1]).unwrap());
        }
        for ni in 0..5 {
            for qi in 0..q {
                let mut want = 0.0;
                for pi in 0..p {
                    for ki in 0..k_max {
                        let base = ((qi * p + pi) * k_max + ki) * 2;
                        for mi in 0..5 {
                            want += theta.data()[base] * fwd[ki].at2(ni, mi) * x.at2(mi, pi);
                            want += theta.data()[base + 1] * rev[ki].at2(ni, mi) * x.at2(mi, pi);
                        }
                    }
                }
                assert!((got.at2(ni, qi) - want).abs() < 1e-10);
            }
        }
    }

    fn eye(n: usize) -> Tensor {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.set2(i, i, 1.0);
        }
        t
    }

    #[test]
    fn diffusion_is_linear() {
        let walks = five_node_walks();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let theta = {
            let data = (0..2 * 2 * 3 * 2)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            Tensor::new(&[2, 2, 3, 2], data).unwrap()
        };
        let rand_x = |rng: &mut ChaCha8Rng| {
            let data = (0..10).map(|_| rng.gen_range(-5.0..5.0)).collect();
            Tensor::new(&[5, 2], data).unwrap()
        };
        let x = rand_x(&mut rng);
        let y = rand_x(&mut rng);
        let (a, b) = (1.7, -0.4);
        let mut combo = x.clone();
        combo.scale_assign(a);
        let mut yb = y.clone();
        yb.scale_assign(b);
        combo.add_assign(&yb);
        let lhs = diffusion_forward(&theta, &combo, &walks).unwrap();
        let mut rhs = diffusion_forward(&theta, &x, &walks).unwrap();
        rhs.scale_assign(a);
        let mut ry = diffusion_forward(&theta, &y, &walks).unwrap();
        ry.scale_assign(b);
        rhs.add_assign(&ry);
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            assert!((l - r).abs() < 1e-9);
        }
    }

    #[test]
    fn tail_norm_values() {
        assert_eq!(diffusion_tail_norm(1.0, 0).unwrap(), 0.0);
        assert_eq!(diffusion_tail_norm(1.0, 7).unwrap(), 0.0);
        assert!((diffusion_tail_norm(0.5, 3).unwrap() - 0.0625).abs() < 1e-15);
        assert!((diffusion_tail_norm(0.1, 2).unwrap() - 0.729).abs() < 1e-12);
        assert!(diffusion_tail_norm(0.0, 3).is_err());
        assert!(diffusion_tail_norm(1.5, 3).is_err());
    }

    #[test]
    fn tail_norm_matches_truncated_series() {
        // Partial sums of α(1−α)^k confirm the closed form.
        let (alpha, k_max) = (0.3f64, 4u32);
        let mut head = 0.0;
        for k in 0..=k_max {
            head += alpha * (1.0 - alpha).powi(k as i32);
        }
        let tail = diffusion_tail_norm(alpha, k_max).unwrap();
        assert!((head + tail - 1.0).abs() < 1e-12);
    }
}
