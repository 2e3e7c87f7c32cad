//! N-channel volumetric convolution via chunked im2col + GEMM.
//!
//! Grids are `Array4<f32>` laid out `(C, X, Y, Z)` with `Z` fastest. 2D
//! convolutions are the `kernel = [k, k, 1]` special case. The column buffer
//! is built in output-`x` slabs to bound memory.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayViewMut2, s};
use rand_chacha::ChaCha8Rng;

use super::param::Param;

/// Column-buffer budget in elements (~32 MB of f32).
const COL_BUDGET: usize = 8 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct Conv {
    pub cin: usize,
    pub cout: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    /// (cout, cin * kx * ky * kz)
    pub w: Param,
    /// (cout,)
    pub b: Param,
    cache: Option<Array4<f32>>,
}

impl Conv {
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let k = kernel[0] * kernel[1] * kernel[2];
        let pad = [kernel[0] / 2, kernel[1] / 2, kernel[2] / 2];
        Conv {
            cin,
            cout,
            kernel,
            stride,
            pad,
            w: Param::kaiming(&format!("{name}.w"), &[cout, cin * k], cin * k, rng),
            b: Param::zeros(&format!("{name}.b"), &[cout]),
            cache: None,
        }
    }

    pub fn out_shape(&self, d: (usize, usize, usize)) -> (usize, usize, usize) {
        let o = |n: usize, k: usize, s: usize, p: usize| (n + 2 * p - k) / s + 1;
        (
            o(d.0, self.kernel[0], self.stride[0], self.pad[0]),
            o(d.1, self.kernel[1], self.stride[1], self.pad[1]),
            o(d.2, self.kernel[2], self.stride[2], self.pad[2]),
        )
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let (cin, nx, ny, nz) = x.dim();
        assert_eq!(cin, self.cin, "conv input channels");
        let (ox, oy, oz) = self.out_shape((nx, ny, nz));
        let krows = self.cin * self.kernel.iter().product::<usize>();
        let mut out = Array4::zeros((self.cout, ox, oy, oz));
        let chunk_x = (COL_BUDGET / (krows * oy * oz).max(1)).clamp(1, ox);
        let wmat: ArrayView2<f32> = self
            .w
            .w
            .view()
            .into_dimensionality()
            .expect("conv weight is 2-d");
        let bias = self.b.w.as_slice().expect("bias contiguous").to_vec();
        for x0 in (0..ox).step_by(chunk_x) {
            let xe = (x0 + chunk_x).min(ox);
            let ncols = (xe - x0) * oy * oz;
            let mut col = Array2::zeros((krows, ncols));
            self.fill_col(x, x0, xe, (oy, oz), col.view_mut());
            let mut y = Array2::zeros((self.cout, ncols));
            general_mat_mul(1.0, &wmat, &col.view(), 0.0, &mut y);
            for (c, mut row) in y.outer_iter_mut().enumerate() {
                row += bias[c];
            }
            let y4 = y
                .into_shape_with_order((self.cout, xe - x0, oy, oz))
                .expect("chunk reshape");
            out.slice_mut(s![.., x0..xe, .., ..]).assign(&y4);
        }
        if train {
            self.cache = Some(x.clone());
        }
        out
    }

    pub fn backward(&mut self, gy: &Array4<f32>) -> Array4<f32> {
        let x = self.cache.take().expect("forward(train=true) before backward");
        let (_, nx, ny, nz) = x.dim();
        let (_, ox, oy, oz) = gy.dim();
        let krows = self.cin * self.kernel.iter().product::<usize>();
        let mut dx = Array4::zeros(x.dim());
        let wmat = wmat_view(&self.w).to_owned();
        let mut dwmat = Array2::<f32>::zeros((self.cout, krows));
        let mut db = vec![0.0f32; self.cout];
        let chunk_x = (COL_BUDGET / (krows * oy * oz).max(1)).clamp(1, ox);
        for x0 in (0..ox).step_by(chunk_x) {
            let xe = (x0 + chunk_x).min(ox);
            let ncols = (xe - x0) * oy * oz;
            let mut col = Array2::zeros((krows, ncols));
            self.fill_col(&x, x0, xe, (oy, oz), col.view_mut());
            let gyc_owned: Array2<f32> = gy
                .slice(s![.., x0..xe, .., ..])
                .to_owned()
                .into_shape_with_order((self.cout, ncols))
                .expect("grad chunk reshape");
            general_mat_mul(1.0, &gyc_owned.view(), &col.view().t(), 1.0, &mut dwmat);
            for (c, row) in gyc_owned.outer_iter().enumerate() {
                db[c] += row.sum();
            }
            let mut dcol = Array2::zeros((krows, ncols));
            general_mat_mul(1.0, &wmat.t(), &gyc_owned.view(), 0.0, &mut dcol);
            self.scatter_col(&mut dx, x0, xe, (oy, oz), (nx, ny, nz), &dcol);
        }
        let mut wg: ArrayViewMut2<f32> = self
            .w
            .g
            .view_mut()
            .into_dimensionality()
            .expect("conv weight grad is 2-d");
        wg += &dwmat;
        for (bg, d) in self.b.g.iter_mut().zip(&db) {
            *bg += d;
        }
        dx
    }

    /// Gathers input patches for output columns `x0..xe` into `col`.
    fn fill_col(
        &self,
        x: &Array4<f32>,
        x0: usize,
        xe: usize,
        (oy, oz): (usize, usize),
        mut col: ArrayViewMut2<f32>,
    ) {
        let (_, nx, ny, nz) = x.dim();
        let xs = x.as_slice().expect("input contiguous");
        let cs = col.as_slice_mut().expect("col contiguous");
        let ncols = (xe - x0) * oy * oz;
        let [kx, ky, kz] = self.kernel;
        let [sx, sy, sz] = self.stride;
        let [px, py, pz] = self.pad;
        for ci in 0..self.cin {
            for dkx in 0..kx {
                for dky in 0..ky {
                    for dkz in 0..kz {
                        let r = ((ci * kx + dkx) * ky + dky) * kz + dkz;
                        let row = &mut cs[r * ncols..(r + 1) * ncols];
                        for xo in x0..xe {
                            let ix = (xo * sx + dkx) as isize - px as isize;
                            if ix < 0 || ix >= nx as isize {
                                continue;
                            }
                            for yo in 0..oy {
                                let iy = (yo * sy + dky) as isize - py as isize;
                                if iy < 0 || iy >= ny as isize {
                                    continue;
                                }
                                let in_base = ((ci * nx + ix as usize) * ny + iy as usize) * nz;
                                let out_base = ((xo - x0) * oy + yo) * oz;
                                // valid z range: 0 <= zo*sz + dkz - pz < nz
                                let z_lo = pz.saturating_sub(dkz).div_ceil(sz).min(oz);
                                let mut z_hi = oz;
                                let top = nz + pz;
                                if dkz < top {
                                    z_hi = z_hi.min((top - dkz - 1) / sz + 1);
                                } else {
                                    z_hi = z_lo;
                                }
                                if sz == 1 {
                                    let iz0 = z_lo + dkz - pz;
                                    let n = z_hi.saturating_sub(z_lo);
                                    row[out_base + z_lo..out_base + z_lo + n]
                                        .copy_from_slice(&xs[in_base + iz0..in_base + iz0 + n]);
                                } else {
                                    for zo in z_lo..z_hi {
                                        let iz = zo * sz + dkz - pz;
                                        row[out_base + zo] = xs[in_base + iz];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Transpose of [`Self::fill_col`]: accumulates column gradients back
    /// into the input gradient.
    fn scatter_col(
        &self,
        dx: &mut Array4<f32>,
        x0: usize,
        xe: usize,
        (oy, oz): (usize, usize),
        (nx, ny, nz): (usize, usize, usize),
        dcol: &Array2<f32>,
    ) {
        let ds = dx.as_slice_mut().expect("dx contiguous");
        let cs = dcol.as_slice().expect("dcol contiguous");
        let ncols = (xe - x0) * oy * oz;
        let [kx, ky, kz] = self.kernel;
        let [sx, sy, sz] = self.stride;
        let [px, py, pz] = self.pad;
        for ci in 0..self.cin {
            for dkx in 0..kx {
                for dky in 0..ky {
                    for dkz in 0..kz {
                        let r = ((ci * kx + dkx) * ky + dky) * kz + dkz;
                        let row = &cs[r * ncols..(r + 1) * ncols];
                        for xo in x0..xe {
                            let ix = (xo * sx + dkx) as isize - px as isize;
                            if ix < 0 || ix >= nx as isize {
                                continue;
                            }
                            for yo in 0..oy {
                                let iy = (yo * sy + dky) as isize - py as isize;
                                if iy < 0 || iy >= ny as isize {
                                    continue;
                                }
                                let in_base = ((ci * nx + ix as usize) * ny + iy as usize) * nz;
                                let out_base = ((xo - x0) * oy + yo) * oz;
                                let z_lo = pz.saturating_sub(dkz).div_ceil(sz).min(oz);
                                let mut z_hi = oz;
                                let top = nz + pz;
                                if dkz < top {
                                    z_hi = z_hi.min((top - dkz - 1) / sz + 1);
                                } else {
                                    z_hi = z_lo;
                                }
                                for zo in z_lo..z_hi {
                                    let iz = zo * sz + dkz - pz;
                                    ds[in_base + iz] += row[out_base + zo];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn wmat_view(p: &Param) -> ArrayView2<'_, f32> {
    p.w.view().into_dimensionality().expect("conv weight is 2-d")
}

/// Reference direct convolution used by tests.
#[cfg(test)]
pub fn conv_reference(conv: &Conv, x: &Array4<f32>) -> Array4<f32> {
    let (_, nx, ny, nz) = x.dim();
    let (ox, oy, oz) = conv.out_shape((nx, ny, nz));
    let mut out = Array4::zeros((conv.cout, ox, oy, oz));
    let w = wmat_view(&conv.w);
    let [kx, ky, kz] = conv.kernel;
    for co in 0..conv.cout {
        for xo in 0..ox {
            for yo in 0..oy {
                for zo in 0..oz {
                    let mut acc = conv.b.w[[co]];
                    for ci in 0..conv.cin {
                        for dkx in 0..kx {
                            for dky in 0..ky {
                                for dkz in 0..kz {
                                    let ix = (xo * conv.stride[0] + dkx) as isize - conv.pad[0] as isize;
                                    let iy = (yo * conv.stride[1] + dky) as isize - conv.pad[1] as isize;
                                    let iz = (zo * conv.stride[2] + dkz) as isize - conv.pad[2] as isize;
                                    if ix < 0 || iy < 0 || iz < 0
                                        || ix >= nx as isize || iy >= ny as isize || iz >= nz as isize
                                    {
                                        continue;
                                    }
                                    let r = ((ci * kx + dkx) * ky + dky) * kz + dkz;
                                    acc += w[[co, r]] * x[[ci, ix as usize, iy as usize, iz as usize]];
                                }
                            }
                        }
                    }
                    out[[co, xo, yo, zo]] = acc;
                }
            }
        }
    }
    out
}

#[allow(dead_code)]
pub fn bias_view(b: &Param) -> Array1<f32> {
    b.w.view()
        .into_dimensionality::<ndarray::Ix1>()
        .expect("bias is 1-d")
        .to_owned()
}
