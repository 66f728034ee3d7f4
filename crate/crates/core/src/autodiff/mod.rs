//! Dense `f64` tensors and a reverse-mode differentiation tape.
//!
//! The op set is deliberately small: exactly what the CNN-LSTM generators, the
//! embedding discriminator and the adversarial losses need. Every op carries a
//! hand-written vector-Jacobian product, and [`grad_check`] verifies any scalar
//! graph against central finite differences.

mod check;
mod graph;
mod ops;
mod tensor;

pub use check::{grad_check, relative_error, GradReport};
pub use graph::{Bindings, Grads, Graph, NodeId};
pub use ops::{conv_out_len, log_softmax, softmax, OpKind, ATANH_CLAMP};
pub use tensor::Tensor;


/// Adds `scale * src` into `dst`, inserting missing entries.
pub fn accumulate(dst: &mut Grads, src: &Grads, scale: f64) {
    for (name, g) in src {
        match dst.get_mut(name) {
            Some(acc) => acc.add_scaled(g, scale),
            None => {
                dst.insert(name.clone(), g.scaled(scale));
            }
        }
    }
}
