use ndarray::ArrayD;

use crate::Float;

/// A trainable tensor together with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub value: ArrayD<T>,
    pub grad: ArrayD<T>,
    /// Whether weight decay applies. Off for biases and normalization affine terms.
    pub decay: bool,
}

impl<T: Float> Param<T> {
    pub fn new(value: ArrayD<T>, decay: bool) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self { value, grad, decay }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Read access to a named piece of model state.
pub enum StateRef<'a, T> {
    Param(&'a Param<T>),
    Buffer(&'a ArrayD<T>),
}

/// Write access to a named piece of model state.
pub enum StateMut<'a, T> {
    Param(&'a mut Param<T>),
    Buffer(&'a mut ArrayD<T>),
}

impl<T> StateRef<'_, T> {
    pub fn array(&self) -> &ArrayD<T> {
        match self {
            StateRef::Param(p) => &p.value,
            StateRef::Buffer(b) => b,
        }
    }
}

impl<T> StateMut<'_, T> {
    pub fn array_mut(&mut self) -> &mut ArrayD<T> {
        match self {
            StateMut::Param(p) => &mut p.value,
            StateMut::Buffer(b) => b,
        }
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
