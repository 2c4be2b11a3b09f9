use super::{gemm, ParamId, ParamKind, ParameterStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Single LSTM layer. Gate blocks are stacked (input, forget, cell, output)
/// along the `4h` axis of `w_ih`, `w_hh` and `bias`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LstmCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self> {
        let kind = ParamKind::LstmWeight { hidden };
        let w_ih = store.add(&format!("{name}.w_ih"), &[4 * hidden, input], kind)?;
        let w_hh = store.add(&format!("{name}.w_hh"), &[4 * hidden, hidden], kind)?;
        let bias = store.add(
            &format!("{name}.bias"),
            &[4 * hidden],
            ParamKind::LstmBias { hidden },
        )?;
        Ok(Self {
            w_ih,
            w_hh,
            bias,
            input,
            hidden,
        })
    }
}

#[derive(Debug, Clone)]
struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates `[batch x 4h]`.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Everything needed for exact backpropagation through time.
#[derive(Debug, Clone)]
pub struct LstmCache {
    direction: Direction,
    batch: usize,
    steps: Vec<StepCache>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn sequence_dims(cell: &LstmCell, inputs: &Tensor) -> Result<(usize, usize)> {
    match inputs.shape() {
        [n, b, d] if *d == cell.input && *n >= 1 => Ok((*n, *b)),
        other => Err(Error::ShapeMismatch {
            op: "lstm_sequence",
            expected: vec![1, 0, cell.input],
            got: other.to_vec(),
        }),
    }
}

/// Runs the cell over a time-major `[steps x batch x input]` sequence from
/// zero state and returns the final hidden state `[batch x hidden]`.
/// `Direction::Backward` consumes the steps in reverse order.
pub fn lstm_sequence(
    cell: &LstmCell,
    store: &ParameterStore,
    inputs: &Tensor,
    direction: Direction,
) -> Result<(Tensor, LstmCache)> {
    let (steps, batch) = sequence_dims(cell, inputs)?;
    let (h, d) = (cell.hidden, cell.input);
    let w_ih = store.param(cell.w_ih).data();
    let w_hh = store.param(cell.w_hh).data();
    let bias = store.param(cell.bias).data();

    let mut h_state = vec![0.0; batch * h];
    let mut c_state = vec![0.0; batch * h];
    let mut cache = Vec::with_capacity(steps);
    for s in 0..steps {
        let t = match direction {
            Direction::Forward => s,
            Direction::Backward => steps - 1 - s,
        };
        let x = inputs.data()[t * batch * d..(t + 1) * batch * d].to_vec();
        let mut z = vec![0.0; batch * 4 * h];
        for row in z.chunks_exact_mut(4 * h) {
            row.copy_from_slice(bias);
        }
        gemm(batch, d, 4 * h, &x, false, w_ih, true, 1.0, &mut z);
        gemm(batch, h, 4 * h, &h_state, false, w_hh, true, 1.0, &mut z);

        let mut c_new = vec![0.0; batch * h];
        let mut h_new = vec![0.0; batch * h];
        let mut tanh_c = vec![0.0; batch * h];
        for b in 0..batch {
            let zr = &mut z[b * 4 * h..(b + 1) * 4 * h];
            for j in 0..h {
                zr[j] = sigmoid(zr[j]);
                zr[h + j] = sigmoid(zr[h + j]);
                zr[2 * h + j] = zr[2 * h + j].tanh();
                zr[3 * h + j] = sigmoid(zr[3 * h + j]);
                let k = b * h + j;
                c_new[k] = zr[h + j] * c_state[k] + zr[j] * zr[2 * h + j];
                tanh_c[k] = c_new[k].tanh();
                h_new[k] = zr[3 * h + j] * tanh_c[k];
            }
        }
        if h_new.iter().chain(&c_new).any(|v| !v.is_finite()) {
            return Err(Error::NumericFailure(format!(
                "lstm step {s}: non-finite state"
            )));
        }
        let h_prev = std::mem::replace(&mut h_state, h_new);
        let c_prev = std::mem::replace(&mut c_state, c_new);
        cache.push(StepCache {
            x,
            h_prev,
            c_prev,
            gates: z,
            tanh_c,
        });
    }
    Ok((
        Tensor::from_vec(&[batch, h], h_state)?,
        LstmCache {
            direction,
            batch,
            steps: cache,
        },
    ))
}

impl LstmCell {
    /// Backpropagation through time from the gradient of the final hidden
    /// state. Accumulates parameter gradients and returns `d inputs` in the
    /// original (unreversed) time order.
    pub fn backward(
        &self,
        store: &mut ParameterStore,
        cache: &LstmCache,
        dh_final: &Tensor,
    ) -> Result<Tensor> {
        let (h, d, batch) = (self.hidden, self.input, cache.batch);
        if dh_final.shape() != [batch, h] {
            return Err(Error::ShapeMismatch {
                op: "lstm backward",
                expected: vec![batch, h],
                got: dh_final.shape().to_vec(),
            });
        }
        let steps = cache.steps.len();
        let w_ih = store.param(self.w_ih).clone();
        let w_hh = store.param(self.w_hh).clone();
        let mut dw_ih = vec![0.0; 4 * h * d];
        let mut dw_hh = vec![0.0; 4 * h * h];
        let mut db = vec![0.0; 4 * h];
        let mut dx = Tensor::zeros(&[steps, batch, d]);

        let mut dh = dh_final.data().to_vec();
        let mut dc = vec![0.0; batch * h];
        let mut dz = vec![0.0; batch * 4 * h];
        for s in (0..steps).rev() {
            let sc = &cache.steps[s];
            for b in 0..batch {
                let g = &sc.gates[b * 4 * h..(b + 1) * 4 * h];
                let dzr = &mut dz[b * 4 * h..(b + 1) * 4 * h];
                for j in 0..h {
                    let k = b * h + j;
                    let (ig, fg, cg, og) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                    let tc = sc.tanh_c[k];
                    let d_o = dh[k] * tc;
                    dc[k] += dh[k] * og * (1.0 - tc * tc);
                    let d_i = dc[k] * cg;
                    let d_g = dc[k] * ig;
                    let d_f = dc[k] * sc.c_prev[k];
                    dzr[j] = d_i * ig * (1.0 - ig);
                    dzr[h + j] = d_f * fg * (1.0 - fg);
                    dzr[2 * h + j] = d_g * (1.0 - cg * cg);
                    dzr[3 * h + j] = d_o * og * (1.0 - og);
                    dc[k] *= fg;
                }
            }
            gemm(4 * h, batch, d, &dz, true, &sc.x, false, 1.0, &mut dw_ih);
            gemm(
                4 * h,
                batch,
                h,
                &dz,
                true,
                &sc.h_prev,
                false,
                1.0,
                &mut dw_hh,
            );
            for row in dz.chunks_exact(4 * h) {
                for (acc, v) in db.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            let t = match cache.direction {
                Direction::Forward => s,
                Direction::Backward => steps - 1 - s,
            };
            gemm(
                batch,
                4 * h,
                d,
                &dz,
                false,
                w_ih.data(),
                false,
                0.0,
                &mut dx.data_mut()[t * batch * d..(t + 1) * batch * d],
            );
            gemm(
                batch,
                4 * h,
                h,
                &dz,
                false,
                w_hh.data(),
                false,
                0.0,
                &mut dh,
            );
        }

        for (id, g) in [(self.w_ih, dw_ih), (self.w_hh, dw_hh), (self.bias, db)] {
            for (acc, v) in store.grad_mut(id).data_mut().iter_mut().zip(g) {
                *acc += v;
            }
        }
        dx.ensure_finite("lstm backward")?;
        Ok(dx)
    }
}

#[derive(Debug, Clone)]
pub struct BiLstmCache {
    fwd: LstmCache,
    bwd: LstmCache,
}

/// Concatenation `[h_fwd ; h_bwd]` of the two final hidden states,
/// `[batch x 2h]`.
pub fn bilstm_encode(
    fwd: &LstmCell,
    bwd: &LstmCell,
    store: &ParameterStore,
    inputs: &Tensor,
) -> Result<(Tensor, BiLstmCache)> {
    let (hf, cf) = lstm_sequence(fwd, store, inputs, Direction::Forward)?;
    let (hb, cb) = lstm_sequence(bwd, store, inputs, Direction::Backward)?;
    let (batch, h1) = hf.dims2()?;
    let h2 = hb.dims2()?.1;
    let mut u = Vec::with_capacity(batch * (h1 + h2));
    for b in 0..batch {
        u.extend_from_slice(&hf.data()[b * h1..(b + 1) * h1]);
        u.extend_from_slice(&hb.data()[b * h2..(b + 1) * h2]);
    }
    Ok((
        Tensor::from_vec(&[batch, h1 + h2], u)?,
        BiLstmCache { fwd: cf, bwd: cb },
    ))
}

pub fn bilstm_backward(
    fwd: &LstmCell,
    bwd: &LstmCell,
    store: &mut ParameterStore,
    cache: &BiLstmCache,
    du: &Tensor,
) -> Result<Tensor> {
    let (batch, width) = du.dims2()?;
    let (h1, h2) = (fwd.hidden, bwd.hidden);
    if width != h1 + h2 {
        return Err(Error::ShapeMismatch {
            op: "bilstm backward",
            expected: vec![batch, h1 + h2],
            got: du.shape().to_vec(),
        });
    }
    let mut dhf = Vec::with_capacity(batch * h1);
    let mut dhb = Vec::with_capacity(batch * h2);
    for row in du.data().chunks_exact(width) {
        dhf.extend_from_slice(&row[..h1]);
        dhb.extend_from_slice(&row[h1..]);
    }
    let mut dx = fwd.backward(store, &cache.fwd, &Tensor::from_vec(&[batch, h1], dhf)?)?;
    let dxb = bwd.backward(store, &cache.bwd, &Tensor::from_vec(&[batch, h2], dhb)?)?;
    for (a, b) in dx.data_mut().iter_mut().zip(dxb.data()) {
        *a += b;
    }
    Ok(dx)
}
