//! The assembled network, its backward pass, and checkpointing.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blocks::{Decoder, Encoder, Inject, PointHead, PointNet};
use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::Param;
use crate::volume::VoxelVolume;

/// Outputs of one forward pass. Heads a variant lacks are `None`.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Predicted point cloud, (n_points, 3), in the centered world frame.
    pub cloud: Option<Array2<f32>>,
    /// Voxel-wise foreground probabilities on the input grid.
    pub probs: Option<Array3<f32>>,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub config: ModelConfig,
    enc: Option<Encoder>,
    point_head: Option<PointHead>,
    pointnet: Option<PointNet>,
    inject: Option<Inject>,
    dec: Option<Decoder>,
    n_enc_stages: usize,
}

impl Network {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let v = config.variant;
        let enc = v.has_encoder().then(|| Encoder::new(&config, &mut rng));
        let point_head = v.has_point_head().then(|| PointHead::new(&config, &mut rng));
        let pointnet = v.has_pointnet().then(|| PointNet::new(&config, &mut rng));
        let inject = v.has_pointnet().then(|| Inject::new(&config, &mut rng));
        let dec = v.has_mask_head().then(|| Decoder::new(&config, &mut rng));
        let n_enc_stages = config.encoder_channels.len();
        Ok(Network {
            config,
            enc,
            point_head,
            pointnet,
            inject,
            dec,
            n_enc_stages,
        })
    }

    /// Lays a preprocessed volume out as the grid this variant convolves:
    /// a single-channel 3d grid, depth-as-channels 2d grid, or the middle
    /// z slice.
    pub fn prepare_input(&self, vol: &VoxelVolume) -> Result<Array4<f32>> {
        let (nx, ny, nz) = vol.data.dim();
        let [ex, ey, ez] = self.config.input_shape;
        if (nx, ny, nz) != (ex, ey, ez) {
            return Err(Error::ShapeMismatch(format!(
                "volume {:?} vs model input {:?}",
                (nx, ny, nz),
                self.config.input_shape
            )));
        }
        use super::config::Variant;
        let x = match self.config.variant {
            v if v.is_3d() => vol.data.clone().insert_axis(Axis(0)),
            Variant::PointoutnetSingleSlice => {
                let mid = nz / 2;
                Array4::from_shape_fn((1, nx, ny, 1), |(_, xi, yi, _)| vol.data[[xi, yi, mid]])
            }
            _ => Array4::from_shape_fn((nz, nx, ny, 1), |(zi, xi, yi, _)| vol.data[[xi, yi, zi]]),
        };
        Ok(x.as_standard_layout().to_owned())
    }

    /// `gt_cloud` is required when the PointNet is configured to consume the
    /// reference cloud rather than the predicted one.
    pub fn forward(
        &mut self,
        x: &Array4<f32>,
        gt_cloud: Option<&Array2<f32>>,
        train: bool,
    ) -> Result<ForwardPass> {
        self.forward_impl(x, gt_cloud, train, false)
    }

    /// Forward pass with every non-bottleneck encoder output replaced by
    /// zeros before the decoder sees it. A variant without skip connections
    /// must produce the exact same outputs as the plain forward pass.
    pub fn forward_zeroed_skips(
        &mut self,
        x: &Array4<f32>,
        gt_cloud: Option<&Array2<f32>>,
    ) -> Result<ForwardPass> {
        self.forward_impl(x, gt_cloud, false, true)
    }

    fn forward_impl(
        &mut self,
        x: &Array4<f32>,
        gt_cloud: Option<&Array2<f32>>,
        train: bool,
        zero_skips: bool,
    ) -> Result<ForwardPass> {
        let mut enc_outs = self.enc.as_mut().map(|e| e.forward(x, train));
        if zero_skips {
            if let Some(outs) = enc_outs.as_mut() {
                let last = outs.len() - 1;
                for o in &mut outs[..last] {
                    o.fill(0.0);
                }
            }
        }
        let bneck = match &enc_outs {
            Some(outs) => outs.last().unwrap().clone(),
            None => {
                let cb = *self.config.encoder_channels.last().unwrap();
                let (bx, by, bz) = self.config.bottleneck_grid();
                Array4::zeros((cb, bx, by, bz))
            }
        };

        let cloud = self
            .point_head
            .as_mut()
            .map(|ph| ph.forward(&bneck, train));

        let probs = if let Some(dec) = self.dec.as_mut() {
            let dec_in = if let (Some(pn), Some(inj)) = (self.pointnet.as_mut(), self.inject.as_mut()) {
                let pn_points = if self.config.pointnet_feeds_gt() {
                    gt_cloud.ok_or_else(|| {
                        Error::Config("this variant consumes the reference cloud; none given".into())
                    })?
                } else {
                    cloud.as_ref().expect("point head output")
                };
                let pf = pn.forward(pn_points, train);
                inj.forward(&pf, &bneck, train)
            } else {
                bneck.clone()
            };
            let grid = dec.forward(&dec_in, enc_outs.as_deref(), train);
            Some(self.grid_to_probs(&grid))
        } else {
            None
        };

        Ok(ForwardPass { cloud, probs })
    }

    /// Propagates loss gradients (w.r.t. the predicted cloud and/or the mask
    /// probabilities) into all parameter gradients.
    pub fn backward(
        &mut self,
        g_cloud: Option<&Array2<f32>>,
        g_probs: Option<&Array3<f32>>,
    ) {
        let cb = *self.config.encoder_channels.last().unwrap();
        let (bx, by, bz) = self.config.bottleneck_grid();
        let mut g_bneck = Array4::<f32>::zeros((cb, bx, by, bz));
        let mut skip_grads: Vec<Option<Array4<f32>>> = (0..self.n_enc_stages).map(|_| None).collect();
        let mut g_points: Option<Array2<f32>> = g_cloud.map(|g| g.to_owned());

        if let Some(gp) = g_probs {
            let grid_grad = self.config_probs_grad_to_grid(gp);
            let dec = self.dec.as_mut().expect("mask gradient on a maskless variant");
            let (g_dec_in, sg) = dec.backward(&grid_grad);
            skip_grads = sg;
            if let (Some(pn), Some(inj)) = (self.pointnet.as_mut(), self.inject.as_mut()) {
                let (g_pf, g_if) = inj.backward(&g_dec_in);
                let g_pn_points = pn.backward(&g_pf);
                if !self.config.pointnet_feeds_gt() {
                    g_points = Some(match g_points {
                        Some(g) => g + &g_pn_points,
                        None => g_pn_points,
                    });
                }
                if self.enc.is_some() {
                    g_bneck += &g_if;
                }
            } else {
                g_bneck += &g_dec_in;
            }
        }

        if let (Some(ph), Some(gp)) = (self.point_head.as_mut(), g_points.as_ref()) {
            g_bneck += &ph.backward(gp);
        }

        if let Some(enc) = self.enc.as_mut() {
            let last = skip_grads.len() - 1;
            skip_grads[last] = Some(match skip_grads[last].take() {
                Some(g) => g + &g_bneck,
                None => g_bneck,
            });
            enc.backward(skip_grads);
        }
    }

    fn grid_to_probs(&self, grid: &Array4<f32>) -> Array3<f32> {
        let [nx, ny, nz] = self.config.input_shape;
        if self.config.variant.is_3d() {
            grid.index_axis(Axis(0), 0).to_owned()
        } else {
            Array3::from_shape_fn((nx, ny, nz), |(xi, yi, zi)| grid[[zi, xi, yi, 0]])
        }
    }

    fn config_probs_grad_to_grid(&self, g: &Array3<f32>) -> Array4<f32> {
        let (nx, ny, nz) = g.dim();
        if self.config.variant.is_3d() {
            g.clone().insert_axis(Axis(0))
        } else {
            Array4::from_shape_fn((nz, nx, ny, 1), |(zi, xi, yi, _)| g[[xi, yi, zi]])
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = Vec::new();
        if let Some(e) = self.enc.as_mut() {
            ps.extend(e.params_mut());
        }
        if let Some(p) = self.point_head.as_mut() {
            ps.extend(p.params_mut());
        }
        if let Some(p) = self.pointnet.as_mut() {
            ps.extend(p.params_mut());
        }
        if let Some(i) = self.inject.as_mut() {
            ps.extend(i.params_mut());
        }
        if let Some(d) = self.dec.as_mut() {
            ps.extend(d.params_mut());
        }
        ps
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn count_parameters(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.len()).sum()
    }

    pub fn save(&mut self, path: &Path) -> Result<()> {
        let config = self.config.clone();
        let params = self.params_mut();
        let header = CheckpointHeader {
            config,
            params: params
                .iter()
                .map(|p| ParamInfo {
                    name: p.name.clone(),
                    shape: p.w.shape().to_vec(),
                })
                .collect(),
        };
        let hjson = serde_json::to_vec(&header)
            .map_err(|e| Error::Checkpoint(format!("header encode: {e}")))?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(CKPT_MAGIC).map_err(|e| Error::io(path, e))?;
        f.write_all(&(hjson.len() as u32).to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
        f.write_all(&hjson).map_err(|e| Error::io(path, e))?;
        let mut blob = Vec::new();
        for p in &params {
            for &v in p.w.as_slice().expect("param contiguous") {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        f.write_all(&blob).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Network> {
        let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        if &magic != CKPT_MAGIC {
            return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
        }
        let mut lenb = [0u8; 4];
        f.read_exact(&mut lenb).map_err(|e| Error::io(path, e))?;
        let hlen = u32::from_le_bytes(lenb) as usize;
        let mut hjson = vec![0u8; hlen];
        f.read_exact(&mut hjson).map_err(|e| Error::io(path, e))?;
        let header: CheckpointHeader = serde_json::from_slice(&hjson)
            .map_err(|e| Error::Checkpoint(format!("header decode: {e}")))?;
        let mut net = Network::new(header.config)?;
        let mut blob = Vec::new();
        f.read_to_end(&mut blob).map_err(|e| Error::io(path, e))?;
        let mut off = 0usize;
        let params = net.params_mut();
        if params.len() != header.params.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: file has {}, model has {}",
                header.params.len(),
                params.len()
            )));
        }
        for (p, info) in params.into_iter().zip(&header.params) {
            if p.w.shape() != info.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {}: file {:?}, model {:?}",
                    info.name,
                    info.shape,
                    p.w.shape()
                )));
            }
            let n = p.len() * 4;
            if off + n > blob.len() {
                return Err(Error::Checkpoint("weight blob truncated".into()));
            }
            for (w, chunk) in p
                .w
                .as_slice_mut()
                .expect("param contiguous")
                .iter_mut()
                .zip(blob[off..off + n].chunks_exact(4))
            {
                *w = f32::from_le_bytes(chunk.try_into().unwrap());
            }
            off += n;
        }
        if off != blob.len() {
            return Err(Error::Checkpoint("trailing bytes after weights".into()));
        }
        Ok(net)
    }
}

const CKPT_MAGIC: &[u8; 4] = b"PCKP";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    params: Vec<ParamInfo>,
}

#[derive(Serialize, Deserialize)]
struct ParamInfo {
    name: String,
    shape: Vec<usize>,
}
