//! Fully connected layer.
//!
//! The matmul here is a hand-rolled per-row loop rather than a GEMM call on
//! purpose: each output row is computed independently in a fixed order, so a
//! permutation of the input rows permutes the output rows bitwise-exactly.
//! The PointNet invariance guarantee depends on this.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use super::param::Param;

#[derive(Debug, Clone)]
pub struct Linear {
    pub cin: usize,
    pub cout: usize,
    /// (cout, cin)
    pub w: Param,
    /// (cout,)
    pub b: Param,
    cache: Option<Array2<f32>>,
}

impl Linear {
    pub fn new(name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            cin,
            cout,
            w: Param::kaiming(&format!("{name}.w"), &[cout, cin], cin, rng),
            b: Param::zeros(&format!("{name}.b"), &[cout]),
            cache: None,
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }

    /// `x` is (n_rows, cin); returns (n_rows, cout).
    pub fn forward(&mut self, x: &Array2<f32>, train: bool) -> Array2<f32> {
        assert_eq!(x.ncols(), self.cin, "linear input width");
        let n = x.nrows();
        let ws = self.w.w.as_slice().expect("weight contiguous");
        let bs = self.b.w.as_slice().expect("bias contiguous");
        let xs = x.as_slice().expect("input contiguous");
        let mut out = Array2::zeros((n, self.cout));
        let os = out.as_slice_mut().expect("output contiguous");
        for r in 0..n {
            let xr = &xs[r * self.cin..(r + 1) * self.cin];
            let or = &mut os[r * self.cout..(r + 1) * self.cout];
            for (c, o) in or.iter_mut().enumerate() {
                let wr = &ws[c * self.cin..(c + 1) * self.cin];
                let mut acc = bs[c];
                for (wv, xv) in wr.iter().zip(xr.iter()) {
                    acc += wv * xv;
                }
                *o = acc;
            }
        }
        if train {
            self.cache = Some(x.clone());
        }
        out
    }

    pub fn backward(&mut self, gy: &Array2<f32>) -> Array2<f32> {
        let x = self.cache.take().expect("forward(train=true) before backward");
        let n = x.nrows();
        assert_eq!(gy.dim(), (n, self.cout));
        let ws = self.w.w.as_slice().expect("weight contiguous");
        let dws = self.w.g.as_slice_mut().expect("weight grad contiguous");
        let dbs = self.b.g.as_slice_mut().expect("bias grad contiguous");
        let xs = x.as_slice().expect("input contiguous");
        let gys = gy.as_slice().expect("grad contiguous");
        let mut dx = Array2::zeros((n, self.cin));
        let dxs = dx.as_slice_mut().expect("dx contiguous");
        for r in 0..n {
            let xr = &xs[r * self.cin..(r + 1) * self.cin];
            let gr = &gys[r * self.cout..(r + 1) * self.cout];
            let dxr = &mut dxs[r * self.cin..(r + 1) * self.cin];
            for (c, &g) in gr.iter().enumerate() {
                dbs[c] += g;
                let wr = &ws[c * self.cin..(c + 1) * self.cin];
                let dwr = &mut dws[c * self.cin..(c + 1) * self.cin];
                for i in 0..self.cin {
                    dwr[i] += g * xr[i];
                    dxr[i] += g * wr[i];
                }
            }
        }
        dx
    }
}
