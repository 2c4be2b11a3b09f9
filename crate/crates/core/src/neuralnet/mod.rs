//! Small dense neural-network kernel with hand-written backward passes.
//!
//! Activations are batched row-major matrices `[batch x features]`;
//! sequences are time-major `[steps x batch x features]`. Parameters and
//! their gradients live in a [`ParameterStore`] and layers hold indices
//! into it.

mod linear;
mod lstm;

pub use linear::LinearLayer;
pub use lstm::{
    bilstm_backward, bilstm_encode, lstm_sequence, BiLstmCache, Direction, LstmCache, LstmCell,
};

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                expected: shape.to_vec(),
                got: vec![data.len()],
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::ShapeMismatch {
                op: "dims2",
                expected: vec![0, 0],
                got: other.to_vec(),
            }),
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericFailure(format!(
                "{context}: non-finite value {} at flat index {i}",
                self.data[i]
            )));
        }
        Ok(())
    }
}

/// `c = a_op * b_op + beta * c`, with `a_op` `m x k` and `b_op` `k x n`.
/// `trans_a` / `trans_b` read the stored row-major matrix transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the slices hold exactly the m*k, k*n and m*n elements addressed
    // by these strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|v| v.max(0.0)).collect(),
    }
}

/// Gradient through ReLU given its output; the subgradient at 0 is 0.
pub fn relu_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    Tensor {
        shape: dy.shape.clone(),
        data: y
            .data
            .iter()
            .zip(&dy.data)
            .map(|(y, g)| if *y > 0.0 { *g } else { 0.0 })
            .collect(),
    }
}

/// Initialisation rule attached to each parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamKind {
    LinearWeight {
        fan_in: usize,
        fan_out: usize,
    },
    LinearBias,
    LstmWeight {
        hidden: usize,
    },
    /// Gate order (input, forget, cell, output).
    LstmBias {
        hidden: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Ordered named parameters with a gradient buffer of identical shape each.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    names: Vec<String>,
    kinds: Vec<ParamKind>,
    params: Vec<Tensor>,
    grads: Vec<Tensor>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], kind: ParamKind) -> Result<ParamId> {
        if self.names.iter().any(|n| n == name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name {name}"
            )));
        }
        self.names.push(name.to_string());
        self.kinds.push(kind);
        self.params.push(Tensor::zeros(shape));
        self.grads.push(Tensor::zeros(shape));
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn param(&self, id: ParamId) -> &Tensor {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn grads(&self) -> &[Tensor] {
        &self.grads
    }

    pub fn params_and_grads_mut(&mut self) -> (&mut [Tensor], &[Tensor]) {
        (&mut self.params, &self.grads)
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn grads_mut(&mut self) -> &mut [Tensor] {
        &mut self.grads
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Replaces a parameter's values; the shape must match.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))?;
        if self.params[id.0].shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "ParameterStore::set",
                expected: self.params[id.0].shape().to_vec(),
                got: value.shape().to_vec(),
            });
        }
        self.params[id.0] = value;
        Ok(())
    }
}

/// Glorot-uniform linear weights and zero biases; LSTM weights uniform in
/// `±1/sqrt(h)`, forget-gate bias 1 and other biases 0.
pub fn init_params<R: Rng + ?Sized>(store: &mut ParameterStore, rng: &mut R) {
    for (param, kind) in store.params.iter_mut().zip(&store.kinds) {
        match *kind {
            ParamKind::LinearWeight { fan_in, fan_out } => {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
                param.data.iter_mut().for_each(|v| *v = dist.sample(rng));
            }
            ParamKind::LinearBias => param.fill(0.0),
            ParamKind::LstmWeight { hidden } => {
                let limit = 1.0 / (hidden as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
                param.data.iter_mut().for_each(|v| *v = dist.sample(rng));
            }
            ParamKind::LstmBias { hidden } => {
                param.fill(0.0);
                param.data[hidden..2 * hidden]
                    .iter_mut()
                    .for_each(|v| *v = 1.0);
            }
        }
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::stream_rng;

    #[test]
    fn gemm_matches_naive_for_all_transpositions() {
        let mut rng = stream_rng(1, 0, 0, 0);
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let at = |i: usize, p: usize| if ta { a[p * m + i] } else { a[i * k + p] };
            let bt = |p: usize, j: usize| if tb { b[j * k + p] } else { b[p * n + j] };
            let mut c = vec![1.0; m * n];
            gemm(m, k, n, &a, ta, &b, tb, 0.5, &mut c);
            for i in 0..m {
                for j in 0..n {
                    let want: f64 = 0.5 + (0..k).map(|p| at(i, p) * bt(p, j)).sum::<f64>();
                    assert!((c[i * n + j] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn relu_examples() {
        let x = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        let y = relu(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu(&y), y);
        let dy = Tensor::from_vec(&[3], vec![5.0, 5.0, 5.0]).unwrap();
        assert_eq!(relu_backward(&y, &dy).data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn relu_gradient_matches_finite_differences() {
        let mut rng = stream_rng(2, 0, 0, 0);
        let xs: Vec<f64> = (0..50)
            .map(|_| rng.random_range(-2.0..2.0))
            .filter(|v: &f64| v.abs() > 1e-3)
            .collect();
        let x = Tensor::from_vec(&[xs.len()], xs.clone()).unwrap();
        let y = relu(&x);
        let ones = Tensor::from_vec(&[xs.len()], vec![1.0; xs.len()]).unwrap();
        let g = relu_backward(&y, &ones);
        let eps = 1e-5;
        for (i, v) in xs.iter().enumerate() {
            let num = ((v + eps).max(0.0) - (v - eps).max(0.0)) / (2.0 * eps);
            assert!(testutil::rel_err(g.data()[i], num) < 1e-6);
        }
    }

    #[test]
    fn tensor_shape_is_checked() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::from_vec(&[2], vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(
            t.ensure_finite("x"),
            Err(Error::NumericFailure(_))
        ));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let build = || {
            let mut s = ParameterStore::new();
            s.add(
                "w",
                &[8, 6],
                ParamKind::LinearWeight {
                    fan_in: 6,
                    fan_out: 8,
                },
            )
            .unwrap();
            s.add("b", &[8], ParamKind::LinearBias).unwrap();
            s.add("lw", &[16, 6], ParamKind::LstmWeight { hidden: 4 })
                .unwrap();
            s.add("lb", &[16], ParamKind::LstmBias { hidden: 4 })
                .unwrap();
            s
        };
        let mut a = build();
        let mut b = build();
        init_params(&mut a, &mut stream_rng(5, 0, 0, 0));
        init_params(&mut b, &mut stream_rng(5, 0, 0, 0));
        assert_eq!(a, b);

        let glorot = (6.0f64 / 14.0).sqrt();
        assert!(a.params()[0].data().iter().all(|v| v.abs() <= glorot));
        assert!(a.params()[1].data().iter().all(|v| *v == 0.0));
        assert!(a.params()[2].data().iter().all(|v| v.abs() <= 0.5));
        let lb = a.params()[3].data();
        assert!(lb[4..8].iter().all(|v| *v == 1.0));
        assert!(lb[..4].iter().chain(&lb[8..]).all(|v| *v == 0.0));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParameterStore::new();
        s.add("w", &[1], ParamKind::LinearBias).unwrap();
        assert!(s.add("w", &[1], ParamKind::LinearBias).is_err());
    }

    use rand::Rng;
}
