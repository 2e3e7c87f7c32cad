//! Adam optimizer with bias correction.

use ndarray::ArrayD;

use super::param::Param;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: u64,
    m: Vec<ArrayD<f32>>,
    v: Vec<ArrayD<f32>>,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update over all parameters. `params` must be passed in the same
    /// order every call; moment buffers are allocated lazily on first use.
    pub fn step(&mut self, params: &mut [&mut Param]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| ArrayD::zeros(p.w.raw_dim())).collect();
            self.v = params.iter().map(|p| ArrayD::zeros(p.w.raw_dim())).collect();
        }
        assert_eq!(params.len(), self.m.len(), "parameter list changed between steps");
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            assert_eq!(p.w.raw_dim(), self.m[i].raw_dim(), "parameter shape changed");
            let m = self.m[i].as_slice_mut().expect("moment contiguous");
            let v = self.v[i].as_slice_mut().expect("moment contiguous");
            let w = p.w.as_slice_mut().expect("weight contiguous");
            let g = p.g.as_slice().expect("grad contiguous");
            for j in 0..w.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / b1t;
                let vhat = v[j] / b2t;
                w[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
