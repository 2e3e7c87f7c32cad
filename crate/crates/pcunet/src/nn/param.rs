use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub w: ArrayD<f32>,
    pub g: ArrayD<f32>,
}

impl Param {
    /// Fan-in-scaled uniform init: U(-b, b) with b = sqrt(6 / fan_in).
    pub fn kaiming(name: &str, shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / fan_in as f32).sqrt();
        let w = ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.gen_range(-bound..bound));
        let g = ArrayD::zeros(IxDyn(shape));
        Param {
            name: name.to_string(),
            w,
            g,
        }
    }

    pub fn zeros(name: &str, shape: &[usize]) -> Self {
        Param {
            name: name.to_string(),
            w: ArrayD::zeros(IxDyn(shape)),
            g: ArrayD::zeros(IxDyn(shape)),
        }
    }

    pub fn zero_grad(&mut self) {
        self.g.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}
