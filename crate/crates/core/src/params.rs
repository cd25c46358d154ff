//! Named parameter traversal shared by the optimizer, checkpoints and gradient checks.

use crate::tensor::{Real, Tensor};

/// Gradients in the same order as [`Parameterized::visit_params`].
pub type Grads<T> = Vec<Tensor<T>>;

/// A set of trainable tensors (and optionally non-trainable buffers) with stable names.
///
/// Visit order is fixed. Gradient vectors, optimizer moments and checkpoint
/// blocks all index parameters by this order.
pub trait Parameterized<T: Real> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>));
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>));

    /// Non-trainable state such as batch-norm running statistics.
    fn visit_buffers(&self, _prefix: &str, _f: &mut dyn FnMut(String, &Tensor<T>)) {}
    fn visit_buffers_mut(&mut self, _prefix: &str, _f: &mut dyn FnMut(String, &mut Tensor<T>)) {}

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params("", &mut |n, _| names.push(n));
        names
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        self.visit_params("", &mut |_, t| shapes.push(t.shape().to_vec()));
        shapes
    }

    fn param_count(&self) -> usize {
        let mut count = 0;
        self.visit_params("", &mut |_, t| count += t.len());
        count
    }

    fn max_abs_param(&self) -> f64 {
        let mut m = 0.0f64;
        self.visit_params("", &mut |_, t| m = m.max(t.max_abs().to_f64_lossless()));
        m
    }

    fn clone_params(&self) -> Vec<Tensor<T>> {
        let mut out = Vec::new();
        self.visit_params("", &mut |_, t| out.push(t.clone()));
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Loose named tensors, mostly for checking individual kernels.
#[derive(Debug, Clone, Default)]
pub struct NamedTensors<T>(pub Vec<(String, Tensor<T>)>);

impl<T: Real> NamedTensors<T> {
    pub fn get(&self, name: &str) -> &Tensor<T> {
        &self
            .0
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("no tensor named {name}"))
            .1
    }
}

impl<T: Real> Parameterized<T> for NamedTensors<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        for (n, t) in &self.0 {
            f(join(prefix, n), t);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        for (n, t) in &mut self.0 {
            f(join(prefix, n), t);
        }
    }
}
