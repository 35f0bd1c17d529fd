//! A single LSTM layer with hand-derived backpropagation through time.
//!
//! Gate weights are kept in split form: for every gate `g` the product
//! `W_g [h_{t-1}, x_t]` is stored as `W_gh h_{t-1} + W_gx x_t`, so the
//! gradient of each block can be accumulated separately.
//!
//! Forward recurrence, for `t = 1..n`:
//!
//! ```text
//! f_t = σ(W_fh h_{t-1} + W_fx x_t + b_f)
//! i_t = σ(W_ih h_{t-1} + W_ix x_t + b_i)
//! Q_t = tanh(W_ch h_{t-1} + W_cx x_t + b_c)
//! c_t = f_t ⊙ c_{t-1} + i_t ⊙ Q_t
//! o_t = σ(W_oh h_{t-1} + W_ox x_t + b_o)
//! h_t = o_t ⊙ tanh(c_t)
//! ```

use std::ops::{Deref, DerefMut};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{self, Direction, Params, TensorView};
use crate::tensor::{
    matvec_acc, matvec_t_acc, sigmoid, sigmoid_grad_from_output, tanh_grad_from_output, Matrix,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub hidden_size: usize,
    pub input_size: usize,
    pub w_fh: Matrix,
    pub w_fx: Matrix,
    pub w_ih: Matrix,
    pub w_ix: Matrix,
    pub w_ch: Matrix,
    pub w_cx: Matrix,
    pub w_oh: Matrix,
    pub w_ox: Matrix,
    pub b_f: Vec<f64>,
    pub b_i: Vec<f64>,
    pub b_c: Vec<f64>,
    pub b_o: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(hidden_size: usize, input_size: usize) -> Self {
        let wh = || Matrix::zeros(hidden_size, hidden_size);
        let wx = || Matrix::zeros(hidden_size, input_size);
        LstmParams {
            hidden_size,
            input_size,
            w_fh: wh(),
            w_fx: wx(),
            w_ih: wh(),
            w_ix: wx(),
            w_ch: wh(),
            w_cx: wx(),
            w_oh: wh(),
            w_ox: wx(),
            b_f: vec![0.0; hidden_size],
            b_i: vec![0.0; hidden_size],
            b_c: vec![0.0; hidden_size],
            b_o: vec![0.0; hidden_size],
        }
    }

    /// Uniform initialization on `[-r, r]` with `r = 1/sqrt(hidden + input)`.
    pub fn random<R: Rng + ?Sized>(hidden_size: usize, input_size: usize, rng: &mut R) -> Self {
        let r = 1.0 / ((hidden_size + input_size) as f64).sqrt();
        let mut p = LstmParams::zeros(hidden_size, input_size);
        for t in p.tensors_mut() {
            for v in t.iter_mut() {
                *v = rng.random_range(-r..=r);
            }
        }
        p
    }

    fn check_shapes(&self) -> Result<()> {
        let (h, x) = (self.hidden_size, self.input_size);
        for (name, m) in [("w_fh", &self.w_fh), ("w_ih", &self.w_ih), ("w_ch", &self.w_ch), ("w_oh", &self.w_oh)] {
            m.ensure_shape(h, h, name)?;
        }
        for (name, m) in [("w_fx", &self.w_fx), ("w_ix", &self.w_ix), ("w_cx", &self.w_cx), ("w_ox", &self.w_ox)] {
            m.ensure_shape(h, x, name)?;
        }
        for (name, b) in [("b_f", &self.b_f), ("b_i", &self.b_i), ("b_c", &self.b_c), ("b_o", &self.b_o)] {
            if b.len() != h {
                return Err(Error::shape(format!("{name} has length {}, expected {h}", b.len())));
            }
        }
        Ok(())
    }
}

impl Params for LstmParams {
    // Gradient families in the order W_oh, W_fh, W_ih, W_ch, b_o, b_i, b_f,
    // b_c, W_ox, W_fx, W_ix, W_cx.
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let (h, x) = (self.hidden_size, self.input_size);
        fn m<'a>(name: &'static str, w: &'a Matrix) -> TensorView<'a> {
            TensorView {
                name,
                shape: [w.rows(), w.cols()],
                data: w.as_slice(),
            }
        }
        let b = |name, v| TensorView {
            name,
            shape: [h, 1],
            data: v,
        };
        debug_assert_eq!(self.w_ox.cols(), x);
        vec![
            m("w_oh", &self.w_oh),
            m("w_fh", &self.w_fh),
            m("w_ih", &self.w_ih),
            m("w_ch", &self.w_ch),
            b("b_o", &self.b_o),
            b("b_i", &self.b_i),
            b("b_f", &self.b_f),
            b("b_c", &self.b_c),
            m("w_ox", &self.w_ox),
            m("w_fx", &self.w_fx),
            m("w_ix", &self.w_ix),
            m("w_cx", &self.w_cx),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_oh.as_mut_slice(),
            self.w_fh.as_mut_slice(),
            self.w_ih.as_mut_slice(),
            self.w_ch.as_mut_slice(),
            &mut self.b_o,
            &mut self.b_i,
            &mut self.b_f,
            &mut self.b_c,
            self.w_ox.as_mut_slice(),
            self.w_fx.as_mut_slice(),
            self.w_ix.as_mut_slice(),
            self.w_cx.as_mut_slice(),
        ]
    }
}

/// `∂E/∂(·)` for every field of [`LstmParams`], with identical shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmGrads(pub LstmParams);

impl LstmGrads {
    pub fn zeros_like(params: &LstmParams) -> Self {
        LstmGrads(LstmParams::zeros(params.hidden_size, params.input_size))
    }

    pub fn into_inner(self) -> LstmParams {
        self.0
    }
}

impl Deref for LstmGrads {
    type Target = LstmParams;

    fn deref(&self) -> &LstmParams {
        &self.0
    }
}

impl DerefMut for LstmGrads {
    fn deref_mut(&mut self) -> &mut LstmParams {
        &mut self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_size: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden_size],
            c: vec![0.0; hidden_size],
        }
    }
}

/// Activations retained by the forward pass. Every per-step field is an
/// `n × hidden_size` matrix whose row `t` belongs to time step `t + 1`.
#[derive(Clone, Debug)]
pub struct LstmCache {
    pub inputs: Matrix,
    pub initial: LstmState,
    pub f: Matrix,
    pub i: Matrix,
    pub q: Matrix,
    pub o: Matrix,
    pub c: Matrix,
    pub tanh_c: Matrix,
    pub h: Matrix,
}

impl LstmCache {
    pub fn steps(&self) -> usize {
        self.inputs.rows()
    }

    fn prev_h(&self, t: usize) -> &[f64] {
        if t == 0 {
            &self.initial.h
        } else {
            self.h.row(t - 1)
        }
    }

    fn prev_c(&self, t: usize) -> &[f64] {
        if t == 0 {
            &self.initial.c
        } else {
            self.c.row(t - 1)
        }
    }
}

/// Runs the layer over the rows of `inputs` (one row per time step) and
/// returns the hidden outputs `h_1..h_n` as rows of a matrix.
pub fn lstm_forward(
    params: &LstmParams,
    inputs: &Matrix,
    initial: &LstmState,
) -> Result<(Matrix, LstmCache)> {
    params.check_shapes()?;
    let hs = params.hidden_size;
    if inputs.cols() != params.input_size {
        return Err(Error::shape(format!(
            "input width {} does not match layer input size {}",
            inputs.cols(),
            params.input_size
        )));
    }
    if initial.h.len() != hs || initial.c.len() != hs {
        return Err(Error::shape("initial state does not match hidden size"));
    }
    let n = inputs.rows();
    let mut cache = LstmCache {
        inputs: inputs.clone(),
        initial: initial.clone(),
        f: Matrix::zeros(n, hs),
        i: Matrix::zeros(n, hs),
        q: Matrix::zeros(n, hs),
        o: Matrix::zeros(n, hs),
        c: Matrix::zeros(n, hs),
        tanh_c: Matrix::zeros(n, hs),
        h: Matrix::zeros(n, hs),
    };

    let mut h_prev = initial.h.clone();
    let mut c_prev = initial.c.clone();
    let mut pre = vec![0.0; hs];
    let gate = |w_h: &Matrix, w_x: &Matrix, b: &[f64], h: &[f64], x: &[f64], out: &mut [f64]| {
        out.copy_from_slice(b);
        matvec_acc(w_h, h, out);
        matvec_acc(w_x, x, out);
    };

    for t in 0..n {
        let x = inputs.row(t);

        gate(&params.w_fh, &params.w_fx, &params.b_f, &h_prev, x, &mut pre);
        cache.f.row_mut(t).iter_mut().zip(&pre).for_each(|(d, &a)| *d = sigmoid(a));

        gate(&params.w_ih, &params.w_ix, &params.b_i, &h_prev, x, &mut pre);
        cache.i.row_mut(t).iter_mut().zip(&pre).for_each(|(d, &a)| *d = sigmoid(a));

        gate(&params.w_ch, &params.w_cx, &params.b_c, &h_prev, x, &mut pre);
        cache.q.row_mut(t).iter_mut().zip(&pre).for_each(|(d, &a)| *d = a.tanh());

        // Output gate reads h_{t-1}; h_t does not exist yet.
        gate(&params.w_oh, &params.w_ox, &params.b_o, &h_prev, x, &mut pre);
        cache.o.row_mut(t).iter_mut().zip(&pre).for_each(|(d, &a)| *d = sigmoid(a));

        for k in 0..hs {
            let c = cache.f[(t, k)] * c_prev[k] + cache.i[(t, k)] * cache.q[(t, k)];
            let tc = c.tanh();
            cache.c[(t, k)] = c;
            cache.tanh_c[(t, k)] = tc;
            cache.h[(t, k)] = cache.o[(t, k)] * tc;
        }
        h_prev.copy_from_slice(cache.h.row(t));
        c_prev.copy_from_slice(cache.c.row(t));
    }

    Ok((cache.h.clone(), cache))
}

/// Backpropagation through time.
///
/// `dh` holds `∂E/∂h_t` injected from above at each step (row per step).
/// Returns the parameter gradients summed over all steps and `∂E/∂x_t` for
/// every input row.
pub fn lstm_backward(
    params: &LstmParams,
    cache: &LstmCache,
    dh: &Matrix,
) -> Result<(LstmGrads, Matrix)> {
    params.check_shapes()?;
    let hs = params.hidden_size;
    let n = cache.steps();
    if cache.h.cols() != hs || cache.inputs.cols() != params.input_size {
        return Err(Error::shape("cache was produced by a layer of a different shape"));
    }
    dh.ensure_shape(n, hs, "upstream hidden error")?;

    let mut grads = LstmGrads::zeros_like(params);
    let mut dx = Matrix::zeros(n, params.input_size);

    // Errors carried from step t+1 into step t through h_t and c_t.
    let mut dh_next = vec![0.0; hs];
    let mut dc_next = vec![0.0; hs];

    let mut delta_o = vec![0.0; hs];
    let mut delta_f = vec![0.0; hs];
    let mut delta_i = vec![0.0; hs];
    let mut delta_q = vec![0.0; hs];

    for t in (0..n).rev() {
        let h_prev = cache.prev_h(t);
        let c_prev = cache.prev_c(t);
        let (f, i, q, o, tc) = (
            cache.f.row(t),
            cache.i.row(t),
            cache.q.row(t),
            cache.o.row(t),
            cache.tanh_c.row(t),
        );
        let dh_t = dh.row(t);

        for k in 0..hs {
            let delta = dh_t[k] + dh_next[k];
            delta_o[k] = delta * tc[k] * sigmoid_grad_from_output(o[k]);
            let dc = delta * o[k] * tanh_grad_from_output(tc[k]) + dc_next[k];
            delta_f[k] = dc * c_prev[k] * sigmoid_grad_from_output(f[k]);
            delta_i[k] = dc * q[k] * sigmoid_grad_from_output(i[k]);
            delta_q[k] = dc * i[k] * tanh_grad_from_output(q[k]);
            dc_next[k] = dc * f[k];
        }

        // Error handed to step t-1 through the recurrent weights.
        dh_next.fill(0.0);
        matvec_t_acc(&params.w_oh, &delta_o, &mut dh_next);
        matvec_t_acc(&params.w_fh, &delta_f, &mut dh_next);
        matvec_t_acc(&params.w_ih, &delta_i, &mut dh_next);
        matvec_t_acc(&params.w_ch, &delta_q, &mut dh_next);

        // Error handed to the layer below through the input weights.
        let dx_t = dx.row_mut(t);
        matvec_t_acc(&params.w_ox, &delta_o, dx_t);
        matvec_t_acc(&params.w_fx, &delta_f, dx_t);
        matvec_t_acc(&params.w_ix, &delta_i, dx_t);
        matvec_t_acc(&params.w_cx, &delta_q, dx_t);

        let x = cache.inputs.row(t);
        grads.w_oh.add_outer(&delta_o, h_prev);
        grads.w_fh.add_outer(&delta_f, h_prev);
        grads.w_ih.add_outer(&delta_i, h_prev);
        grads.w_ch.add_outer(&delta_q, h_prev);
        grads.w_ox.add_outer(&delta_o, x);
        grads.w_fx.add_outer(&delta_f, x);
        grads.w_ix.add_outer(&delta_i, x);
        grads.w_cx.add_outer(&delta_q, x);
        for k in 0..hs {
            grads.b_o[k] += delta_o[k];
            grads.b_f[k] += delta_f[k];
            grads.b_i[k] += delta_i[k];
            grads.b_c[k] += delta_q[k];
        }
    }

    Ok((grads, dx))
}

/// One plain gradient step, returning the updated parameters.
pub fn sgd_apply(
    params: &LstmParams,
    grads: &LstmGrads,
    lr: f64,
    direction: Direction,
) -> Result<LstmParams> {
    params.check_shapes()?;
    grads.check_shapes()?;
    if params.hidden_size != grads.hidden_size || params.input_size != grads.input_size {
        return Err(Error::shape("gradient shapes do not match parameters"));
    }
    let mut out = params.clone();
    params::sgd_step(&mut out, &grads.0, lr, direction)?;
    Ok(out)
}
