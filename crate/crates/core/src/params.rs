//! Uniform access to the named weight arrays of a network, so that the
//! optimizer, gradient clipping and checkpointing do not need to know each
//! network's layout.

use crate::error::{Error, Result};

/// Borrowed view of one named parameter array.
#[derive(Clone, Copy, Debug)]
pub struct TensorView<'a> {
    pub name: &'static str,
    pub shape: [usize; 2],
    pub data: &'a [f64],
}

pub trait Params {
    /// Named arrays in a fixed order.
    fn tensors(&self) -> Vec<TensorView<'_>>;

    /// Mutable arrays, same order as [`Params::tensors`].
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.fill(value);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Descend,
    Ascend,
}

/// `params ∓= lr * grads` in place. Rejects non-finite gradients before
/// touching any parameter.
pub fn sgd_step<P: Params>(params: &mut P, grads: &P, lr: f64, direction: Direction) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::config(format!("learning rate must be positive, got {lr}")));
    }
    let grad_views = grads.tensors();
    for g in &grad_views {
        if let Some(bad) = g.data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!(
                "non-finite gradient {bad} in {}",
                g.name
            )));
        }
    }
    let scale = match direction {
        Direction::Descend => -lr,
        Direction::Ascend => lr,
    };
    let targets = params.tensors_mut();
    if targets.len() != grad_views.len() {
        return Err(Error::shape("parameter/gradient layout mismatch"));
    }
    for (p, g) in targets.into_iter().zip(&grad_views) {
        if p.len() != g.data.len() {
            return Err(Error::shape(format!("gradient {} has wrong size", g.name)));
        }
        for (pi, gi) in p.iter_mut().zip(g.data) {
            *pi += scale * gi;
        }
    }
    Ok(())
}

/// Elementwise clip of every gradient entry to `[-limit, limit]`.
pub fn clip_elementwise<P: Params>(grads: &mut P, limit: f64) {
    for t in grads.tensors_mut() {
        for v in t.iter_mut() {
            *v = v.clamp(-limit, limit);
        }
    }
}

/// `acc += other`, for merging per-sample gradients.
pub fn accumulate<P: Params>(acc: &mut P, other: &P) {
    let src = other.tensors();
    for (dst, s) in acc.tensors_mut().into_iter().zip(src) {
        for (d, v) in dst.iter_mut().zip(s.data) {
            *d += v;
        }
    }
}

pub fn scale<P: Params>(p: &mut P, factor: f64) {
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v *= factor;
        }
    }
}
