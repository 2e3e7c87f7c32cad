//! Network building blocks. Each block owns its layers and their caches;
//! `forward(train=true)` must precede `backward`.

use ndarray::{Array1, Array2, Array4, Axis, s};
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, SkipMode};
use crate::nn::ops::{MaxPoolPoints, Relu, Sigmoid, Upsample};
use crate::nn::{Conv, Linear, Param};

fn cat_channels(a: &Array4<f32>, b: &Array4<f32>) -> Array4<f32> {
    ndarray::concatenate(Axis(0), &[a.view(), b.view()])
        .expect("channel concat")
        .as_standard_layout()
        .to_owned()
}

/// One downsampling stage: strided conv + conv, both ReLU.
#[derive(Debug, Clone)]
pub struct EncStage {
    down: Conv,
    conv: Conv,
    r1: Relu,
    r2: Relu,
}

impl EncStage {
    fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let h = self.r1.forward4(self.down.forward(x, train), train);
        self.r2.forward4(self.conv.forward(&h, train), train)
    }

    fn backward(&mut self, gy: &Array4<f32>) -> Array4<f32> {
        let g = self.conv.backward(&self.r2.backward4(gy.clone()));
        self.down.backward(&self.r1.backward4(g))
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    stages: Vec<EncStage>,
}

impl Encoder {
    pub fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut stages = Vec::new();
        let mut cin = cfg.conv_in_channels();
        for (i, &c) in cfg.encoder_channels.iter().enumerate() {
            stages.push(EncStage {
                down: Conv::new(&format!("enc{i}.down"), cin, c, cfg.kernel(), cfg.down_stride(), rng),
                conv: Conv::new(&format!("enc{i}.conv"), c, c, cfg.kernel(), [1, 1, 1], rng),
                r1: Relu::default(),
                r2: Relu::default(),
            });
            cin = c;
        }
        Encoder { stages }
    }

    /// Returns every stage output; the last entry is the bottleneck.
    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Vec<Array4<f32>> {
        let mut outs = Vec::with_capacity(self.stages.len());
        let mut cur = x.clone();
        for st in &mut self.stages {
            cur = st.forward(&cur, train);
            outs.push(cur.clone());
        }
        outs
    }

    /// `grads[i]` is the loss gradient w.r.t. stage `i`'s output (skip
    /// connections contribute to inner stages, the bottleneck to the last).
    pub fn backward(&mut self, mut grads: Vec<Option<Array4<f32>>>) {
        assert_eq!(grads.len(), self.stages.len());
        let mut g = grads
            .pop()
            .flatten()
            .expect("bottleneck gradient required");
        for i in (0..self.stages.len()).rev() {
            let gx = self.stages[i].backward(&g);
            if i == 0 {
                break;
            }
            g = match grads[i - 1].take() {
                Some(extra) => gx + extra,
                None => gx,
            };
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.stages
            .iter_mut()
            .flat_map(|s| {
                s.down
                    .params_mut()
                    .into_iter()
                    .chain(s.conv.params_mut())
            })
            .collect()
    }
}

/// One upsampling stage with an optional encoder skip.
#[derive(Debug, Clone)]
struct DecStage {
    up: Upsample,
    skip: SkipMode,
    unit_offset: bool,
    /// 1x1 projection of the encoder feature (multiply mode only).
    proj: Option<Conv>,
    conv: Conv,
    relu: Relu,
    cache_d: Option<Array4<f32>>,
    cache_s: Option<Array4<f32>>,
    split_at: usize,
}

impl DecStage {
    fn forward(&mut self, x: &Array4<f32>, enc: Option<&Array4<f32>>, train: bool) -> Array4<f32> {
        let d = self.up.forward(x, train);
        let h = match self.skip {
            SkipMode::Multiply => {
                let enc = enc.expect("multiply skip needs encoder features");
                let mut s = self.proj.as_mut().unwrap().forward(enc, train);
                if self.unit_offset {
                    s += 1.0;
                }
                let h = &d * &s;
                if train {
                    self.cache_d = Some(d);
                    self.cache_s = Some(s);
                }
                h
            }
            SkipMode::Concat => {
                let enc = enc.expect("concat skip needs encoder features");
                self.split_at = d.dim().0;
                cat_channels(&d, enc)
            }
            SkipMode::None => d,
        };
        self.relu.forward4(self.conv.forward(&h, train), train)
    }

    /// Returns the gradient w.r.t. the stage input and, if this stage has a
    /// skip, w.r.t. the encoder feature it consumed.
    fn backward(&mut self, gy: &Array4<f32>) -> (Array4<f32>, Option<Array4<f32>>) {
        let g = self.conv.backward(&self.relu.backward4(gy.clone()));
        match self.skip {
            SkipMode::Multiply => {
                let d = self.cache_d.take().expect("forward before backward");
                let se = self.cache_s.take().expect("forward before backward");
                let gd = &g * &se;
                // d/ds [d * (1 + s)] = d, same as without the offset
                let gs = &g * &d;
                let ge = self.proj.as_mut().unwrap().backward(&gs);
                (self.up.backward(&gd), Some(ge))
            }
            SkipMode::Concat => {
                let gd = g
                    .slice(s![..self.split_at, .., .., ..])
                    .as_standard_layout()
                    .to_owned();
                let ge = g
                    .slice(s![self.split_at.., .., .., ..])
                    .as_standard_layout()
                    .to_owned();
                (self.up.backward(&gd), Some(ge))
            }
            SkipMode::None => (self.up.backward(&g), None),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    stages: Vec<DecStage>,
    out: Conv,
    sig: Sigmoid,
}

impl Decoder {
    pub fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let ch = &cfg.encoder_channels;
        let n = ch.len();
        let skip = cfg.variant.skip_mode();
        let mut stages = Vec::new();
        let mut cin = ch[n - 1];
        for i in 0..n {
            // stage i brings /2^(n-i) up to /2^(n-i-1); the matching encoder
            // feature exists for all but the last (full-resolution) stage
            let has_skip = i + 1 < n && skip != SkipMode::None;
            let enc_c = if i + 1 < n { ch[n - 2 - i] } else { 0 };
            let cout = if i + 1 < n { ch[n - 2 - i] } else { ch[0] };
            let mode = if has_skip { skip } else { SkipMode::None };
            let proj = (mode == SkipMode::Multiply).then(|| {
                Conv::new(&format!("dec{i}.proj"), enc_c, cin, [1, 1, 1], [1, 1, 1], rng)
            });
            let conv_in = if mode == SkipMode::Concat { cin + enc_c } else { cin };
            stages.push(DecStage {
                up: Upsample::new(cfg.down_stride()),
                skip: mode,
                unit_offset: cfg.unit_offset_skips,
                proj,
                conv: Conv::new(&format!("dec{i}.conv"), conv_in, cout, cfg.kernel(), [1, 1, 1], rng),
                relu: Relu::default(),
                cache_d: None,
                cache_s: None,
                split_at: 0,
            });
            cin = cout;
        }
        Decoder {
            stages,
            out: Conv::new("dec.out", ch[0], cfg.mask_out_channels(), [1, 1, 1], [1, 1, 1], rng),
            sig: Sigmoid::default(),
        }
    }

    /// `enc_outs` are the encoder stage outputs (unused under `SkipMode::None`).
    pub fn forward(
        &mut self,
        x: &Array4<f32>,
        enc_outs: Option<&[Array4<f32>]>,
        train: bool,
    ) -> Array4<f32> {
        let n = self.stages.len();
        let mut cur = x.clone();
        for (i, st) in self.stages.iter_mut().enumerate() {
            let enc = if st.skip == SkipMode::None {
                None
            } else {
                Some(&enc_outs.expect("skips need encoder outputs")[n - 2 - i])
            };
            cur = st.forward(&cur, enc, train);
        }
        self.sig.forward4(self.out.forward(&cur, train), train)
    }

    /// Returns the gradient w.r.t. the decoder input plus per-encoder-stage
    /// skip gradients, indexed like the encoder outputs.
    pub fn backward(&mut self, gy: &Array4<f32>) -> (Array4<f32>, Vec<Option<Array4<f32>>>) {
        let n = self.stages.len();
        let mut skip_grads: Vec<Option<Array4<f32>>> = (0..n).map(|_| None).collect();
        let mut g = self.out.backward(&self.sig.backward4(gy.clone()));
        for i in (0..n).rev() {
            let (gx, ge) = self.stages[i].backward(&g);
            if let Some(ge) = ge {
                skip_grads[n - 2 - i] = Some(ge);
            }
            g = gx;
        }
        (g, skip_grads)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps: Vec<&mut Param> = self
            .stages
            .iter_mut()
            .flat_map(|s| {
                s.proj
                    .iter_mut()
                    .flat_map(|p| p.params_mut())
                    .chain(s.conv.params_mut())
                    .collect::<Vec<_>>()
            })
            .collect();
        ps.extend(self.out.params_mut());
        ps
    }
}

/// Two fully connected layers mapping the flattened bottleneck to N points.
#[derive(Debug, Clone)]
pub struct PointHead {
    fc1: Linear,
    relu: Relu,
    fc2: Linear,
    n_points: usize,
    in_dim: (usize, usize, usize, usize),
}

const POINT_HEAD_HIDDEN: usize = 256;

impl PointHead {
    pub fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let cb = *cfg.encoder_channels.last().unwrap();
        let (bx, by, bz) = cfg.bottleneck_grid();
        let flat = cb * bx * by * bz;
        PointHead {
            fc1: Linear::new("phead.fc1", flat, POINT_HEAD_HIDDEN, rng),
            relu: Relu::default(),
            fc2: Linear::new("phead.fc2", POINT_HEAD_HIDDEN, 3 * cfg.n_points, rng),
            n_points: cfg.n_points,
            in_dim: (cb, bx, by, bz),
        }
    }

    pub fn forward(&mut self, bneck: &Array4<f32>, train: bool) -> Array2<f32> {
        assert_eq!(bneck.dim(), self.in_dim);
        let flat = bneck
            .as_slice()
            .expect("bottleneck contiguous")
            .to_vec();
        let x = Array2::from_shape_vec((1, flat.len()), flat).unwrap();
        let h = self.relu.forward2(self.fc1.forward(&x, train), train);
        let o = self.fc2.forward(&h, train);
        o.into_shape_with_order((self.n_points, 3)).unwrap()
    }

    pub fn backward(&mut self, g_points: &Array2<f32>) -> Array4<f32> {
        let g = g_points
            .to_owned()
            .into_shape_with_order((1, 3 * self.n_points))
            .unwrap();
        let gh = self.relu.backward2(self.fc2.backward(&g));
        let gx = self.fc1.backward(&gh);
        gx.into_shape_with_order(self.in_dim).unwrap()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = self.fc1.params_mut();
        ps.extend(self.fc2.params_mut());
        ps
    }
}

/// Shared per-point MLP, channel-wise max pool, then two fully connected
/// layers producing the global point feature.
#[derive(Debug, Clone)]
pub struct PointNet {
    mlp: Vec<(Linear, Relu)>,
    pool: MaxPoolPoints,
    fc1: Linear,
    r4: Relu,
    fc2: Linear,
}

impl PointNet {
    pub fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let [c1, c2, c3] = cfg.pointnet_channels;
        let mut mlp = Vec::new();
        let mut cin = 3;
        for (i, c) in [c1, c2, c3].into_iter().enumerate() {
            mlp.push((Linear::new(&format!("pnet.mlp{i}"), cin, c, rng), Relu::default()));
            cin = c;
        }
        let hidden = (c3 / 2).max(1);
        PointNet {
            mlp,
            pool: MaxPoolPoints::default(),
            fc1: Linear::new("pnet.fc1", c3, hidden, rng),
            r4: Relu::default(),
            fc2: Linear::new("pnet.fc2", hidden, c3, rng),
        }
    }

    pub fn forward(&mut self, points: &Array2<f32>, train: bool) -> Array1<f32> {
        let mut h = points.clone();
        for (lin, relu) in &mut self.mlp {
            h = relu.forward2(lin.forward(&h, train), train);
        }
        let pooled = self.pool.forward(&h, train);
        let g = Array2::from_shape_vec((1, pooled.len()), pooled.to_vec()).unwrap();
        let f = self
            .fc2
            .forward(&self.r4.forward2(self.fc1.forward(&g, train), train), train);
        f.row(0).to_owned()
    }

    pub fn backward(&mut self, g_feat: &Array1<f32>) -> Array2<f32> {
        let g = Array2::from_shape_vec((1, g_feat.len()), g_feat.to_vec()).unwrap();
        let gp = self.fc1.backward(&self.r4.backward2(self.fc2.backward(&g)));
        let mut gh = self.pool.backward(&gp.row(0).to_owned());
        for (lin, relu) in self.mlp.iter_mut().rev() {
            gh = lin.backward(&relu.backward2(gh));
        }
        gh
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps: Vec<&mut Param> = self
            .mlp
            .iter_mut()
            .flat_map(|(l, _)| l.params_mut())
            .collect();
        ps.extend(self.fc1.params_mut());
        ps.extend(self.fc2.params_mut());
        ps
    }
}

/// Broadcasts the global point feature onto the bottleneck grid and fuses it
/// with the image features by concatenation + 1x1 convolution. A zero image
/// grid still yields spatial structure because the projection is a separate
/// weight per grid cell.
#[derive(Debug, Clone)]
pub struct Inject {
    lin: Linear,
    fuse: Conv,
    relu: Relu,
    grid: (usize, usize, usize, usize),
}

impl Inject {
    pub fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let cb = *cfg.encoder_channels.last().unwrap();
        let (bx, by, bz) = cfg.bottleneck_grid();
        let pf = cfg.pointnet_channels[2];
        Inject {
            lin: Linear::new("inject.lin", pf, cb * bx * by * bz, rng),
            fuse: Conv::new("inject.fuse", 2 * cb, cb, [1, 1, 1], [1, 1, 1], rng),
            relu: Relu::default(),
            grid: (cb, bx, by, bz),
        }
    }

    pub fn forward(&mut self, pf: &Array1<f32>, bneck: &Array4<f32>, train: bool) -> Array4<f32> {
        let x = Array2::from_shape_vec((1, pf.len()), pf.to_vec()).unwrap();
        let p = self.lin.forward(&x, train);
        let pgrid = p
            .into_shape_with_order(self.grid)
            .expect("point feature grid");
        let cat = cat_channels(&pgrid, bneck);
        self.relu.forward4(self.fuse.forward(&cat, train), train)
    }

    pub fn backward(&mut self, gy: &Array4<f32>) -> (Array1<f32>, Array4<f32>) {
        let g = self.fuse.backward(&self.relu.backward4(gy.clone()));
        let cb = self.grid.0;
        let gp = g
            .slice(s![..cb, .., .., ..])
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order((1, self.grid.0 * self.grid.1 * self.grid.2 * self.grid.3))
            .unwrap();
        let gb = g.slice(s![cb.., .., .., ..]).as_standard_layout().to_owned();
        let gpf = self.lin.backward(&gp);
        (gpf.row(0).to_owned(), gb)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = self.lin.params_mut();
        ps.extend(self.fuse.params_mut());
        ps
    }
}
