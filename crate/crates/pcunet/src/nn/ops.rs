//! Stateless-ish layers: activations, nearest upsampling, point max-pooling.

use ndarray::{Array1, Array2, Array4};

/// ReLU over any contiguous buffer; caches the pass-through mask.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl Relu {
    pub fn forward4(&mut self, mut x: Array4<f32>, train: bool) -> Array4<f32> {
        self.apply(x.as_slice_mut().expect("contiguous"), train);
        x
    }

    pub fn forward2(&mut self, mut x: Array2<f32>, train: bool) -> Array2<f32> {
        self.apply(x.as_slice_mut().expect("contiguous"), train);
        x
    }

    pub fn backward4(&mut self, mut gy: Array4<f32>) -> Array4<f32> {
        self.unapply(gy.as_slice_mut().expect("contiguous"));
        gy
    }

    pub fn backward2(&mut self, mut gy: Array2<f32>) -> Array2<f32> {
        self.unapply(gy.as_slice_mut().expect("contiguous"));
        gy
    }

    fn apply(&mut self, xs: &mut [f32], train: bool) {
        if train {
            self.mask.clear();
            self.mask.extend(xs.iter().map(|&v| v > 0.0));
        }
        for v in xs.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    fn unapply(&mut self, gs: &mut [f32]) {
        assert_eq!(gs.len(), self.mask.len(), "relu backward shape");
        for (g, &m) in gs.iter_mut().zip(&self.mask) {
            if !m {
                *g = 0.0;
            }
        }
    }
}

/// Logistic sigmoid; caches the outputs for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Sigmoid {
    out: Vec<f32>,
}

impl Sigmoid {
    pub fn forward4(&mut self, mut x: Array4<f32>, train: bool) -> Array4<f32> {
        let xs = x.as_slice_mut().expect("contiguous");
        for v in xs.iter_mut() {
            *v = 1.0 / (1.0 + (-*v).exp());
        }
        if train {
            self.out = xs.to_vec();
        }
        x
    }

    pub fn backward4(&mut self, mut gy: Array4<f32>) -> Array4<f32> {
        let gs = gy.as_slice_mut().expect("contiguous");
        assert_eq!(gs.len(), self.out.len(), "sigmoid backward shape");
        for (g, &y) in gs.iter_mut().zip(&self.out) {
            *g *= y * (1.0 - y);
        }
        gy
    }
}

/// Nearest-neighbor upsampling by integer factors per axis.
#[derive(Debug, Clone)]
pub struct Upsample {
    pub factors: [usize; 3],
    in_dim: Option<(usize, usize, usize, usize)>,
}

impl Upsample {
    pub fn new(factors: [usize; 3]) -> Self {
        Upsample { factors, in_dim: None }
    }

    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let (c, nx, ny, nz) = x.dim();
        let [fx, fy, fz] = self.factors;
        if train {
            self.in_dim = Some(x.dim());
        }
        Array4::from_shape_fn((c, nx * fx, ny * fy, nz * fz), |(ci, xi, yi, zi)| {
            x[[ci, xi / fx, yi / fy, zi / fz]]
        })
    }

    pub fn backward(&mut self, gy: &Array4<f32>) -> Array4<f32> {
        let dim = self.in_dim.take().expect("forward(train=true) before backward");
        let [fx, fy, fz] = self.factors;
        let mut dx = Array4::zeros(dim);
        for ((ci, xi, yi, zi), &g) in gy.indexed_iter() {
            dx[[ci, xi / fx, yi / fy, zi / fz]] += g;
        }
        dx
    }
}

/// Channel-wise max over point rows: (n, c) -> (c,), caching the argmax rows.
/// Ties resolve to the lowest row index, so the pooled value (and the
/// backward routing) is independent of point order up to tie permutations.
#[derive(Debug, Clone, Default)]
pub struct MaxPoolPoints {
    argmax: Vec<usize>,
    n_rows: usize,
}

impl MaxPoolPoints {
    pub fn forward(&mut self, x: &Array2<f32>, train: bool) -> Array1<f32> {
        let (n, c) = x.dim();
        assert!(n > 0, "max pool over empty point set");
        let mut out = Array1::from_elem(c, f32::NEG_INFINITY);
        let mut argmax = vec![0usize; c];
        for (r, row) in x.outer_iter().enumerate() {
            for (ci, &v) in row.iter().enumerate() {
                if v > out[ci] {
                    out[ci] = v;
                    argmax[ci] = r;
                }
            }
        }
        if train {
            self.argmax = argmax;
            self.n_rows = n;
        }
        out
    }

    pub fn backward(&mut self, gy: &Array1<f32>) -> Array2<f32> {
        assert_eq!(gy.len(), self.argmax.len(), "max pool backward shape");
        let mut dx = Array2::zeros((self.n_rows, gy.len()));
        for (ci, &r) in self.argmax.iter().enumerate() {
            dx[[r, ci]] += gy[ci];
        }
        dx
    }
}
