use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Gate, Params};
use crate::error::Result;

/// Uniform Glorot bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Initialises every layer: Glorot-uniform input weights per gate,
/// orthogonal recurrent weights per gate, zero biases except a forget bias of 1.
pub fn init_params(layer_units: &[usize], in_dim: usize, seed: u64) -> Result<Params> {
    let mut params = Params::zeros(in_dim, layer_units)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for layer in &mut params.layers {
        let limit = glorot_limit(layer.in_dim, layer.units);
        for v in layer.w.iter_mut() {
            *v = rng.random_range(-limit..limit);
        }
        let block = layer.units * layer.units;
        for gate in layer.u.chunks_exact_mut(block) {
            gate.copy_from_slice(&orthogonal(layer.units, &mut rng));
        }
        layer.gate_b_mut(Gate::Forget).iter_mut().for_each(|b| *b = 1.0);
    }

    let head = &mut params.head;
    let limit = glorot_limit(head.in_dim, head.out_dim);
    for v in head.w.iter_mut() {
        *v = rng.random_range(-limit..limit);
    }
    Ok(params)
}

/// Random `n x n` orthogonal matrix (row-major) from Gram-Schmidt on a
/// Gaussian matrix.
fn orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let mut m: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
        if gram_schmidt(&mut m, n) {
            return m;
        }
    }
}

/// Orthonormalises the rows in place; false if they were (numerically) dependent.
fn gram_schmidt(m: &mut [f64], n: usize) -> bool {
    for i in 0..n {
        for j in 0..i {
            let (done, rest) = m.split_at_mut(i * n);
            let prev = &done[j * n..(j + 1) * n];
            let row = &mut rest[..n];
            let dot: f64 = row.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (r, p) in row.iter_mut().zip(prev) {
                *r -= dot * p;
            }
        }
        let row = &mut m[i * n..(i + 1) * n];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-10 {
            return false;
        }
        row.iter_mut().for_each(|v| *v /= norm);
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn deterministic_per_seed() {
        let a = init_params(&[8, 4], 6, 99).unwrap();
        let b = init_params(&[8, 4], 6, 99).unwrap();
        assert_eq!(a.flatten(), b.flatten());
        let c = init_params(&[8, 4], 6, 100).unwrap();
        assert_ne!(a.flatten(), c.flatten());
    }

    #[test]
    fn forget_bias_is_one() {
        let p = init_params(&[5, 3, 2], 4, 1).unwrap();
        for layer in &p.layers {
            assert!(layer.gate_b(Gate::Forget).iter().all(|&b| b == 1.0));
            for g in [Gate::Input, Gate::Cell, Gate::Output] {
                assert!(layer.gate_b(g).iter().all(|&b| b == 0.0));
            }
        }
        assert!(p.head.b.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn glorot_bound_for_27_to_64() {
        let bound = glorot_limit(27, 64);
        assert!((bound - (6.0f64 / 91.0).sqrt()).abs() < 1e-15);
        assert!((bound - 0.2567).abs() < 1e-4);
        let p = init_params(&[64], 27, 5).unwrap();
        assert!(p.layers[0].w.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn recurrent_blocks_are_orthogonal() {
        let p = init_params(&[6], 3, 2).unwrap();
        for g in [Gate::Input, Gate::Forget, Gate::Cell, Gate::Output] {
            let u = p.layers[0].gate_u(g);
            for i in 0..6 {
                for j in 0..6 {
                    let dot: f64 = (0..6).map(|k| u[i * 6 + k] * u[j * 6 + k]).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_empty_or_zero_architectures() {
        assert!(matches!(init_params(&[], 4, 0), Err(Error::InvalidArchitecture(_))));
        assert!(matches!(init_params(&[4, 0], 4, 0), Err(Error::InvalidArchitecture(_))));
        assert!(matches!(init_params(&[4], 0, 0), Err(Error::InvalidArchitecture(_))));
    }
}
