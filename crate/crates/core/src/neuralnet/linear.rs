use super::{gemm, ParamId, ParamKind, ParameterStore, Tensor};
use crate::error::{Error, Result};

/// `y = x W^T + b` over a batch of row vectors; `W` is `[out x in]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearLayer {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Self> {
        let weight = store.add(
            &format!("{name}.weight"),
            &[out_dim, in_dim],
            ParamKind::LinearWeight {
                fan_in: in_dim,
                fan_out: out_dim,
            },
        )?;
        let bias = store.add(&format!("{name}.bias"), &[out_dim], ParamKind::LinearBias)?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    fn batch_of(&self, x: &Tensor) -> Result<usize> {
        match x.shape() {
            [b, d] if *d == self.in_dim => Ok(*b),
            other => Err(Error::ShapeMismatch {
                op: "linear",
                expected: vec![0, self.in_dim],
                got: other.to_vec(),
            }),
        }
    }

    pub fn forward(&self, store: &ParameterStore, x: &Tensor) -> Result<Tensor> {
        let batch = self.batch_of(x)?;
        let bias = store.param(self.bias).data();
        let mut y = Tensor::zeros(&[batch, self.out_dim]);
        for row in y.data_mut().chunks_exact_mut(self.out_dim) {
            row.copy_from_slice(bias);
        }
        gemm(
            batch,
            self.in_dim,
            self.out_dim,
            x.data(),
            false,
            store.param(self.weight).data(),
            true,
            1.0,
            y.data_mut(),
        );
        y.ensure_finite("linear forward")?;
        Ok(y)
    }

    /// Accumulates `dW += dy^T x`, `db += sum_rows(dy)` and returns `dx = dy W`.
    pub fn backward(&self, store: &mut ParameterStore, x: &Tensor, dy: &Tensor) -> Result<Tensor> {
        let batch = self.batch_of(x)?;
        if dy.shape() != [batch, self.out_dim] {
            return Err(Error::ShapeMismatch {
                op: "linear backward",
                expected: vec![batch, self.out_dim],
                got: dy.shape().to_vec(),
            });
        }
        gemm(
            self.out_dim,
            batch,
            self.in_dim,
            dy.data(),
            true,
            x.data(),
            false,
            1.0,
            store.grad_mut(self.weight).data_mut(),
        );
        let db = store.grad_mut(self.bias).data_mut();
        for row in dy.data().chunks_exact(self.out_dim) {
            for (acc, g) in db.iter_mut().zip(row) {
                *acc += g;
            }
        }
        let mut dx = Tensor::zeros(&[batch, self.in_dim]);
        gemm(
            batch,
            self.out_dim,
            self.in_dim,
            dy.data(),
            false,
            store.param(self.weight).data(),
            false,
            0.0,
            dx.data_mut(),
        );
        Ok(dx)
    }
}
