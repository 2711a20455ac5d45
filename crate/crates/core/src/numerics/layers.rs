use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Matrix, ParamId, ParamStore};
use crate::error::Result;

/// Weight initialisation for [`Linear`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Normal with std `gain / sqrt(fan_in)`, zero bias.
    Scaled(f64),
    Zero,
}

/// Fully connected layer `y = x·Wᵀ + b` with `W` stored `out × in`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = match init {
            Init::Zero => Matrix::zeros(fan_out, fan_in),
            Init::Scaled(gain) => {
                let std = gain / (fan_in.max(1) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                Matrix::from_fn(fan_out, fan_in, |_, _| normal.sample(rng))
            }
        };
        let weight = store.insert(format!("{name}.weight"), weight)?;
        let bias = store.insert(format!("{name}.bias"), Matrix::zeros(1, fan_out))?;
        Ok(Self { weight, bias })
    }

    /// Looks up an existing layer by prefix.
    pub fn lookup(store: &ParamStore, name: &str) -> Result<Self> {
        Ok(Self {
            weight: store.require(&format!("{name}.weight"))?,
            bias: store.require(&format!("{name}.bias"))?,
        })
    }

    pub fn in_dim(&self, store: &ParamStore) -> usize {
        store.value(self.weight).cols()
    }

    pub fn out_dim(&self, store: &ParamStore) -> usize {
        store.value(self.weight).rows()
    }

    pub fn forward(&self, store: &ParamStore, x: &Matrix) -> Result<Matrix> {
        x.matmul_nt(store.value(self.weight))?.add_row_broadcast(store.value(self.bias))
    }

    /// Accumulates weight/bias gradients and returns `dL/dx`.
    pub fn backward(&self, store: &mut ParamStore, x: &Matrix, dy: &Matrix) -> Result<Matrix> {
        let dw = dy.matmul_tn(x)?;
        let db = dy.col_sums();
        let dx = dy.matmul(store.value(self.weight))?;
        store.accumulate(self.weight, &dw)?;
        store.accumulate(self.bias, &db)?;
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_backward_passes_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let layer = Linear::register(&mut store, "fc", 4, 3, Init::Scaled(1.0), &mut rng).unwrap();
        store.set_value(layer.bias, Matrix::row_vector(&[0.1, -0.2, 0.3])).unwrap();
        let x = Matrix::from_fn(5, 4, |r, c| ((r * 4 + c) as f64 * 0.37).sin());
        let target = Matrix::from_fn(5, 3, |r, c| ((r + c) as f64 * 0.11).cos());
        let report = grad_check(&mut store, 1e-5, |s, with_grad| {
            let y = layer.forward(s, &x)?;
            let diff = y.sub(&target)?;
            if with_grad {
                s.zero_grad();
                layer.backward(s, &x, &diff)?;
            }
            Ok(0.5 * diff.frobenius_sq())
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-7, "{report:?}");
    }
}
