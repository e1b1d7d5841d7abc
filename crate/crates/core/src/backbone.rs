//! Reference gait recognition backbone with named injection hook points.
//!
//! Pipeline per clip (1, f, H, W):
//!   conv3d 1->c1, ReLU, spatial max-pool      -> (c1, f, h, w)
//!   conv3d c1->c2, ReLU                        = EARLY_3D hook
//!   [injector at EARLY_3D]
//!   temporal max-pool (kernel 3, stride 3, ceil)
//!   conv3d ->c3, ReLU
//!   max over remaining frames                  -> (c3, h, w)
//!   horizontal pyramid pooling (max+mean strips plus one global-mean
//!   strip)                                     = DEEP_FLAT hook (parts, c3)
//!   [injector at DEEP_FLAT]
//!   per-part fully connected c3 -> embed_dim   -> signature (parts, embed)

use ndarray::{Array1, Array2, Array3, Array4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::awareness::{AwarenessError, AwarenessInjector, Beta, DeepTrace, EarlyTrace, InjectorGrads};
use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::data_model::{GaitSignature, SilhouetteVideo};
use crate::nn::{
    max_pool3d_spatial, max_pool3d_spatial_backward, max_pool_temporal, max_pool_temporal_backward,
    relu, relu_backward, temporal_max, temporal_max_backward, AdamConfig, Conv3d, Linear, Scalar,
};
use crate::seed;

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error("hook mismatch: {0}")]
    HookMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid external declaration: {0}")]
    InvalidDeclaration(String),
    #[error("missing beta: {0}")]
    MissingBeta(String),
    #[error("awareness: {0}")]
    Awareness(#[from] AwarenessError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
}

/// A named location where an injector may replace the intermediate feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HookPoint {
    /// After the second conv stage: feature shape (channels, f, h, w).
    Early3d { channels: usize },
    /// Before the part-wise head: feature shape (parts, part_dim).
    DeepFlat { parts: usize, part_dim: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    /// Channel widths of the three conv stages.
    pub channels: (usize, usize, usize),
    /// Input width of stage 3; defaults to `channels.1`, widened when a
    /// wide-output learnable-conv injector sits at EARLY_3D.
    pub conv3_in: Option<usize>,
    /// Non-overlapping spatial pool size after stage 1.
    pub spatial_pool: usize,
    /// Temporal max-pool (kernel, stride), ceil mode, between the hooks.
    pub temporal_pool: (usize, usize),
    /// Horizontal pyramid: strip counts per level over the grid rows.
    pub row_bins: Vec<usize>,
    /// Output embedding width per part.
    pub embed_dim: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            channels: (32, 64, 128),
            conv3_in: None,
            spatial_pool: 8,
            temporal_pool: (3, 3),
            row_bins: vec![8, 4, 2, 1],
            embed_dim: 64,
        }
    }
}

impl BackboneConfig {
    /// Pyramid strips plus one global-mean strip.
    pub fn num_parts(&self) -> usize {
        self.row_bins.iter().sum::<usize>() + 1
    }

    fn conv3_in(&self) -> usize {
        self.conv3_in.unwrap_or(self.channels.1)
    }
}

/// Convert a silhouette video into a (1, f, H, W) clip tensor.
pub fn video_to_clip<T: Scalar>(video: &SilhouetteVideo) -> Array4<T> {
    let f = video.frames.len();
    let (h, w) = video.frames[0].pixels().dim();
    let mut clip = Array4::zeros((1, f, h, w));
    for (t, frame) in video.frames.iter().enumerate() {
        for ((r, c), &v) in frame.pixels().indexed_iter() {
            clip[[0, t, r, c]] = T::from_f64(v as f64);
        }
    }
    clip
}

enum StripKind {
    /// max + mean over the strip; per-channel flat argmax into (c, h, w).
    MaxPlusMean { argmax: Vec<usize> },
    MeanOnly,
}

struct Strip {
    r0: usize,
    r1: usize,
    kind: StripKind,
}

struct HppTrace {
    strips: Vec<Strip>,
    in_dim: (usize, usize, usize),
}

fn hpp_forward<T: Scalar>(fmap: &Array3<T>, row_bins: &[usize]) -> (Array2<T>, HppTrace) {
    let (c, h, w) = fmap.dim();
    let mut strips = Vec::new();
    let num_parts = row_bins.iter().sum::<usize>() + 1;
    let mut out = Array2::zeros((num_parts, c));
    let mut part = 0;
    for &bins in row_bins {
        assert!(h % bins == 0, "row bins must divide the grid height");
        let rows = h / bins;
        for s in 0..bins {
            let (r0, r1) = (s * rows, (s + 1) * rows);
            let denom = T::from_f64(((r1 - r0) * w) as f64);
            let mut argmax = vec![0usize; c];
            for ci in 0..c {
                let mut best = T::neg_infinity();
                let mut sum = T::zero();
                for r in r0..r1 {
                    for cc in 0..w {
                        let v = fmap[[ci, r, cc]];
                        sum = sum + v;
                        if v > best {
                            best = v;
                            argmax[ci] = (ci * h + r) * w + cc;
                        }
                    }
                }
                out[[part, ci]] = best + sum / denom;
            }
            strips.push(Strip {
                r0,
                r1,
                kind: StripKind::MaxPlusMean { argmax },
            });
            part += 1;
        }
    }
    // global mean strip
    let denom = T::from_f64((h * w) as f64);
    for ci in 0..c {
        out[[part, ci]] = fmap.index_axis(ndarray::Axis(0), ci).sum() / denom;
    }
    strips.push(Strip {
        r0: 0,
        r1: h,
        kind: StripKind::MeanOnly,
    });
    (
        out,
        HppTrace {
            strips,
            in_dim: (c, h, w),
        },
    )
}

fn hpp_backward<T: Scalar>(trace: &HppTrace, gy: &Array2<T>) -> Array3<T> {
    let (c, h, w) = trace.in_dim;
    let mut gx = Array3::zeros((c, h, w));
    let gs = gx.as_slice_mut().unwrap();
    for (part, strip) in trace.strips.iter().enumerate() {
        let denom = T::from_f64(((strip.r1 - strip.r0) * w) as f64);
        for ci in 0..c {
            let g = gy[[part, ci]];
            if let StripKind::MaxPlusMean { argmax } = &strip.kind {
                gs[argmax[ci]] = gs[argmax[ci]] + g;
            }
            let spread = g / denom;
            for r in strip.r0..strip.r1 {
                for cc in 0..w {
                    let i = (ci * h + r) * w + cc;
                    gs[i] = gs[i] + spread;
                }
            }
        }
    }
    gx
}

pub struct ClipTrace<T: Scalar> {
    x0: Array4<T>,
    pre1: Array4<T>,
    pool1_idx: Array4<usize>,
    pool1_in: (usize, usize, usize, usize),
    conv2_in: Array4<T>,
    pre2: Array4<T>,
    early_trace: Option<EarlyTrace<T>>,
    tpool_idx: Array4<usize>,
    tpool_in: (usize, usize, usize, usize),
    conv3_in: Array4<T>,
    pre3: Array4<T>,
    tmax_idx: Array3<usize>,
    tmax_in: (usize, usize, usize, usize),
    hpp: HppTrace,
    deep_trace: Option<DeepTrace<T>>,
    head_in: Array2<T>,
}

/// Accumulated parameter gradients for one optimization step.
pub struct BackboneGrads<T: Scalar> {
    conv_w: [ndarray::Array5<T>; 3],
    conv_b: [Array1<T>; 3],
    head_w: Vec<Array2<T>>,
    head_b: Vec<Array1<T>>,
    injector: InjectorGrads<T>,
}

impl<T: Scalar> BackboneGrads<T> {
    /// Gradients flattened in [`ReferenceBackbone::params_flat`] order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.conv_w.iter().zip(self.conv_b.iter()) {
            out.extend(w.iter().map(|v| v.to_f64_prim()));
            out.extend(b.iter().map(|v| v.to_f64_prim()));
        }
        for (w, b) in self.head_w.iter().zip(self.head_b.iter()) {
            out.extend(w.iter().map(|v| v.to_f64_prim()));
            out.extend(b.iter().map(|v| v.to_f64_prim()));
        }
        out.extend(self.injector.flat());
        out
    }
}

pub struct ReferenceBackbone<T: Scalar> {
    pub config: BackboneConfig,
    conv1: Conv3d<T>,
    conv2: Conv3d<T>,
    conv3: Conv3d<T>,
    head: Vec<Linear<T>>,
    pub injector: Option<AwarenessInjector<T>>,
}

impl<T: Scalar> ReferenceBackbone<T> {
    pub fn new(config: BackboneConfig, rng_seed: u64) -> Self {
        let mut rng = seed::rng(rng_seed);
        let (c1, c2, c3) = config.channels;
        let conv1 = Conv3d::new(1, c1, 3, 1, &mut rng);
        let conv2 = Conv3d::new(c1, c2, 3, 1, &mut rng);
        let conv3 = Conv3d::new(config.conv3_in(), c3, 3, 1, &mut rng);
        let head = (0..config.num_parts())
            .map(|_| Linear::new(c3, config.embed_dim, &mut rng))
            .collect();
        Self {
            config,
            conv1,
            conv2,
            conv3,
            head,
            injector: None,
        }
    }

    pub fn hooks(&self) -> Vec<HookPoint> {
        vec![
            HookPoint::Early3d {
                channels: self.config.channels.1,
            },
            HookPoint::DeepFlat {
                parts: self.config.num_parts(),
                part_dim: self.config.channels.2,
            },
        ]
    }

    /// Attach an injector, validating its dimensions against the hooks.
    pub fn set_injector(&mut self, injector: AwarenessInjector<T>) -> Result<(), BackboneError> {
        if injector.variant.binds_early() {
            if injector.early_channels != self.config.channels.1 {
                return Err(BackboneError::HookMismatch(format!(
                    "injector expects {} EARLY_3D channels, backbone has {}",
                    injector.early_channels, self.config.channels.1
                )));
            }
            if injector.conv_out_channels != self.config.conv3_in() {
                return Err(BackboneError::HookMismatch(format!(
                    "injector emits {} channels, stage 3 consumes {}",
                    injector.conv_out_channels,
                    self.config.conv3_in()
                )));
            }
        }
        if injector.variant.binds_deep() && injector.part_dim != self.config.channels.2 {
            return Err(BackboneError::HookMismatch(format!(
                "injector part dim {} vs DEEP_FLAT part dim {}",
                injector.part_dim, self.config.channels.2
            )));
        }
        self.injector = Some(injector);
        Ok(())
    }

    fn check_beta(&self, beta: &Beta<T>, frames: usize) -> Result<(), BackboneError> {
        if let Some(inj) = &self.injector {
            let (need_t, need_c) = inj.variant.beta_modes();
            if need_t {
                let t = beta
                    .transient
                    .as_ref()
                    .ok_or_else(|| BackboneError::MissingBeta("transient".into()))?;
                if t.nrows() != frames {
                    return Err(BackboneError::ShapeMismatch(format!(
                        "transient beta has {} rows for {frames} frames",
                        t.nrows()
                    )));
                }
            }
            if need_c && beta.cumulative.is_none() {
                return Err(BackboneError::MissingBeta("cumulative".into()));
            }
        }
        Ok(())
    }

    pub fn forward_traced(
        &self,
        clip: &Array4<T>,
        beta: &Beta<T>,
    ) -> Result<(Array2<T>, ClipTrace<T>), BackboneError> {
        let (cin, f, h, w) = clip.dim();
        if cin != 1 {
            return Err(BackboneError::ShapeMismatch(format!(
                "clip has {cin} channels, expected 1"
            )));
        }
        if h % self.config.spatial_pool != 0 || w % self.config.spatial_pool != 0 {
            return Err(BackboneError::ShapeMismatch(format!(
                "frame size {h}x{w} not divisible by spatial pool {}",
                self.config.spatial_pool
            )));
        }
        self.check_beta(beta, f)?;

        let pre1 = self.conv1.forward(clip);
        let act1 = relu(&pre1);
        let pool1_in = act1.dim();
        let (pooled1, pool1_idx) = max_pool3d_spatial(&act1, self.config.spatial_pool);
        drop(act1);

        let pre2 = self.conv2.forward(&pooled1);
        let early = relu(&pre2);

        let (injected, early_trace) = match &self.injector {
            Some(inj) if inj.variant.binds_early() => {
                let beta_t = beta.transient.as_ref().unwrap();
                let (out, tr) = inj.apply_early(&early, beta_t)?;
                (out, Some(tr))
            }
            _ => (early, None),
        };

        let tpool_in = injected.dim();
        let (tk, ts) = self.config.temporal_pool;
        let (tpooled, tpool_idx) = max_pool_temporal(&injected, tk, ts);

        let pre3 = self.conv3.forward(&tpooled);
        let act3 = relu(&pre3);
        let tmax_in = act3.dim();
        let (fmap, tmax_idx) = temporal_max(&act3);

        let (deep, hpp) = hpp_forward(&fmap, &self.config.row_bins);

        let (head_in, deep_trace) = match &self.injector {
            Some(inj) if inj.variant.binds_deep() => {
                let beta_c = beta.cumulative.as_ref().unwrap();
                let (out, tr) = inj.apply_deep(&deep, beta_c)?;
                (out, Some(tr))
            }
            _ => (deep, None),
        };

        let mut sig = Array2::zeros((self.head.len(), self.config.embed_dim));
        for (p, lin) in self.head.iter().enumerate() {
            let row = head_in.row(p).insert_axis(ndarray::Axis(0)).to_owned();
            let out = lin.forward(&row);
            sig.row_mut(p).assign(&out.index_axis(ndarray::Axis(0), 0));
        }

        Ok((
            sig,
            ClipTrace {
                x0: clip.clone(),
                pre1,
                pool1_idx,
                pool1_in,
                conv2_in: pooled1,
                pre2,
                early_trace,
                tpool_idx,
                tpool_in,
                conv3_in: tpooled,
                pre3,
                tmax_idx,
                tmax_in,
                hpp,
                deep_trace,
                head_in,
            },
        ))
    }

    /// Plain forward, inference only.
    pub fn forward(&self, clip: &Array4<T>, beta: &Beta<T>) -> Result<Array2<T>, BackboneError> {
        Ok(self.forward_traced(clip, beta)?.0)
    }

    /// Forward returning a GaitSignature (f32).
    pub fn signature(
        &self,
        clip: &Array4<T>,
        beta: &Beta<T>,
    ) -> Result<GaitSignature, BackboneError> {
        let sig = self.forward(clip, beta)?;
        Ok(GaitSignature::new(sig.mapv(|v| v.to_f64_prim() as f32)))
    }

    pub fn zero_grads(&self) -> BackboneGrads<T> {
        BackboneGrads {
            conv_w: [
                ndarray::Array5::zeros(self.conv1.weight.value.raw_dim()),
                ndarray::Array5::zeros(self.conv2.weight.value.raw_dim()),
                ndarray::Array5::zeros(self.conv3.weight.value.raw_dim()),
            ],
            conv_b: [
                Array1::zeros(self.conv1.bias.value.raw_dim()),
                Array1::zeros(self.conv2.bias.value.raw_dim()),
                Array1::zeros(self.conv3.bias.value.raw_dim()),
            ],
            head_w: self
                .head
                .iter()
                .map(|l| Array2::zeros(l.weight.value.raw_dim()))
                .collect(),
            head_b: self
                .head
                .iter()
                .map(|l| Array1::zeros(l.bias.value.raw_dim()))
                .collect(),
            injector: InjectorGrads {
                conv_w: None,
                conv_b: None,
                aff1_w: None,
                aff1_b: None,
                aff2_w: None,
                aff2_b: None,
            },
        }
    }

    /// Backprop one clip's signature gradient into `grads`.
    pub fn accumulate_backward(
        &self,
        trace: &ClipTrace<T>,
        g_sig: &Array2<T>,
        grads: &mut BackboneGrads<T>,
    ) {
        let mut g_head_in = Array2::zeros(trace.head_in.raw_dim());
        for (p, lin) in self.head.iter().enumerate() {
            let row = trace.head_in.row(p).insert_axis(ndarray::Axis(0)).to_owned();
            let gy = g_sig.row(p).insert_axis(ndarray::Axis(0)).to_owned();
            let (gx, gw, gb) = lin.backward(&row, &gy);
            grads.head_w[p] += &gw;
            grads.head_b[p] += &gb;
            g_head_in
                .row_mut(p)
                .assign(&gx.index_axis(ndarray::Axis(0), 0));
        }

        let g_deep = match (&self.injector, &trace.deep_trace) {
            (Some(inj), Some(tr)) => inj.deep_backward(tr, &g_head_in, &mut grads.injector),
            _ => g_head_in,
        };

        let g_fmap = hpp_backward(&trace.hpp, &g_deep);
        let g_act3 = temporal_max_backward(&trace.tmax_idx, &g_fmap, trace.tmax_in);
        let g_pre3 = relu_backward(&trace.pre3, &g_act3);
        let (g_tpooled, g_w3, g_b3) = self.conv3.backward(&trace.conv3_in, &g_pre3);
        grads.conv_w[2] += &g_w3;
        grads.conv_b[2] += &g_b3;

        let g_injected = max_pool_temporal_backward(&trace.tpool_idx, &g_tpooled, trace.tpool_in);
        let g_early = match (&self.injector, &trace.early_trace) {
            (Some(inj), Some(tr)) => inj.early_backward(tr, &g_injected, &mut grads.injector),
            _ => g_injected,
        };

        let g_pre2 = relu_backward(&trace.pre2, &g_early);
        let (g_pooled1, g_w2, g_b2) = self.conv2.backward(&trace.conv2_in, &g_pre2);
        grads.conv_w[1] += &g_w2;
        grads.conv_b[1] += &g_b2;

        let g_act1 = max_pool3d_spatial_backward(&trace.pool1_idx, &g_pooled1, trace.pool1_in);
        let g_pre1 = relu_backward(&trace.pre1, &g_act1);
        let (_, g_w1, g_b1) = self.conv1.backward(&trace.x0, &g_pre1);
        grads.conv_w[0] += &g_w1;
        grads.conv_b[0] += &g_b1;
    }

    pub fn apply_gradients(&mut self, grads: &BackboneGrads<T>, lr: f64, cfg: &AdamConfig) {
        self.conv1.weight.adam_step(&grads.conv_w[0], lr, cfg);
        self.conv1.bias.adam_step(&grads.conv_b[0], lr, cfg);
        self.conv2.weight.adam_step(&grads.conv_w[1], lr, cfg);
        self.conv2.bias.adam_step(&grads.conv_b[1], lr, cfg);
        self.conv3.weight.adam_step(&grads.conv_w[2], lr, cfg);
        self.conv3.bias.adam_step(&grads.conv_b[2], lr, cfg);
        for (p, lin) in self.head.iter_mut().enumerate() {
            lin.weight.adam_step(&grads.head_w[p], lr, cfg);
            lin.bias.adam_step(&grads.head_b[p], lr, cfg);
        }
        if let Some(inj) = &mut self.injector {
            inj.apply_gradients(&grads.injector, lr, cfg);
        }
    }

    /// Parameter values flattened in a fixed order (convs, head, injector)
    /// mirroring [`BackboneGrads::flat`]. For gradient diagnostics.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for conv in [&self.conv1, &self.conv2, &self.conv3] {
            out.extend(conv.weight.value.iter().map(|v| v.to_f64_prim()));
            out.extend(conv.bias.value.iter().map(|v| v.to_f64_prim()));
        }
        for lin in &self.head {
            out.extend(lin.weight.value.iter().map(|v| v.to_f64_prim()));
            out.extend(lin.bias.value.iter().map(|v| v.to_f64_prim()));
        }
        if let Some(inj) = &self.injector {
            out.extend(inj.params_flat());
        }
        out
    }

    /// Overwrite all parameters from a [`Self::params_flat`] vector.
    pub fn set_params_flat(&mut self, vals: &[f64]) {
        let mut it = vals.iter().copied();
        for conv in [&mut self.conv1, &mut self.conv2, &mut self.conv3] {
            crate::awareness::fill(&mut conv.weight.value, &mut it);
            crate::awareness::fill(&mut conv.bias.value, &mut it);
        }
        for lin in &mut self.head {
            crate::awareness::fill(&mut lin.weight.value, &mut it);
            crate::awareness::fill(&mut lin.bias.value, &mut it);
        }
        if let Some(inj) = &mut self.injector {
            inj.set_params_flat(&mut it);
        }
        assert!(it.next().is_none(), "flat parameter vector too long");
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        let convs = [&self.conv1, &self.conv2, &self.conv3];
        for (i, conv) in convs.iter().enumerate() {
            ck.insert(
                &format!("conv{}.weight", i + 1),
                &conv.weight.value.mapv(|v| v.to_f64_prim() as f32),
            );
            ck.insert(
                &format!("conv{}.bias", i + 1),
                &conv.bias.value.mapv(|v| v.to_f64_prim() as f32),
            );
        }
        for (p, lin) in self.head.iter().enumerate() {
            ck.insert(
                &format!("head{p}.weight"),
                &lin.weight.value.mapv(|v| v.to_f64_prim() as f32),
            );
            ck.insert(
                &format!("head{p}.bias"),
                &lin.bias.value.mapv(|v| v.to_f64_prim() as f32),
            );
        }
        if let Some(inj) = &self.injector {
            inj.add_to_checkpoint(&mut ck);
        }
        ck
    }

    pub fn load_weights(&mut self, ck: &Checkpoint) -> Result<(), BackboneError> {
        let convs = [&mut self.conv1, &mut self.conv2, &mut self.conv3];
        for (i, conv) in convs.into_iter().enumerate() {
            conv.weight.value = ck
                .get_shaped(&format!("conv{}.weight", i + 1), conv.weight.value.raw_dim())?
                .mapv(|v| T::from_f64(v as f64));
            conv.bias.value = ck
                .get_shaped(&format!("conv{}.bias", i + 1), conv.bias.value.raw_dim())?
                .mapv(|v| T::from_f64(v as f64));
        }
        for (p, lin) in self.head.iter_mut().enumerate() {
            lin.weight.value = ck
                .get_shaped(&format!("head{p}.weight"), lin.weight.value.raw_dim())?
                .mapv(|v| T::from_f64(v as f64));
            lin.bias.value = ck
                .get_shaped(&format!("head{p}.bias"), lin.bias.value.raw_dim())?
                .mapv(|v| T::from_f64(v as f64));
        }
        if let Some(inj) = &mut self.injector {
            inj.load_from_checkpoint(ck)?;
        }
        Ok(())
    }

    pub fn checksum(&self) -> u64 {
        self.to_checkpoint().checksum()
    }

    pub fn save(
        &self,
        path: &std::path::Path,
        metrics: &serde_json::Value,
    ) -> Result<(), BackboneError> {
        self.to_checkpoint().save(path)?;
        let injector = self.injector.as_ref().map(|inj| {
            serde_json::json!({
                "variant": inj.variant,
                "conv_out_channels": inj.conv_out_channels,
            })
        });
        let sidecar = serde_json::json!({
            "kind": "backbone",
            "config": self.config,
            "injector": injector,
            "metrics": metrics,
        });
        Checkpoint::save_sidecar(path, &sidecar)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, BackboneError> {
        let sidecar = Checkpoint::load_sidecar(path)?;
        let config: BackboneConfig = serde_json::from_value(sidecar["config"].clone())
            .map_err(|e| BackboneError::InvalidDeclaration(e.to_string()))?;
        let mut net = Self::new(config, 0);
        if !sidecar["injector"].is_null() {
            let variant: crate::awareness::Variant =
                serde_json::from_value(sidecar["injector"]["variant"].clone())
                    .map_err(|e| BackboneError::InvalidDeclaration(e.to_string()))?;
            let conv_out = sidecar["injector"]["conv_out_channels"]
                .as_u64()
                .map(|v| v as usize);
            let inj = crate::awareness::make_injector_with_conv_out(
                variant,
                &net.hooks(),
                conv_out,
                0,
            )?;
            net.set_injector(inj)?;
        }
        net.load_weights(&Checkpoint::load(path)?)?;
        Ok(net)
    }
}

/// The contract any backbone must satisfy to plug into training/evaluation.
pub trait GaitModel<T: Scalar> {
    fn hooks(&self) -> Vec<HookPoint>;
    /// (num_parts, embed_dim)
    fn signature_dims(&self) -> (usize, usize);
    /// (needs transient beta, needs cumulative beta)
    fn beta_requirements(&self) -> (bool, bool) {
        (false, false)
    }
    fn forward(&self, clip: &Array4<T>, beta: &Beta<T>) -> Result<Array2<T>, BackboneError>;
    /// One optimization step over a batch of clips. `grad_fn` maps the
    /// stacked signatures to (scalar loss, per-clip signature gradients).
    fn train_step(
        &mut self,
        clips: &[Array4<T>],
        betas: &[Beta<T>],
        lr: f64,
        grad_fn: &mut dyn FnMut(&[Array2<T>]) -> (f64, Vec<Array2<T>>),
    ) -> Result<f64, BackboneError>;
}

impl<T: Scalar> GaitModel<T> for ReferenceBackbone<T> {
    fn hooks(&self) -> Vec<HookPoint> {
        ReferenceBackbone::hooks(self)
    }

    fn signature_dims(&self) -> (usize, usize) {
        (self.config.num_parts(), self.config.embed_dim)
    }

    fn beta_requirements(&self) -> (bool, bool) {
        self.injector
            .as_ref()
            .map_or((false, false), |inj| inj.variant.beta_modes())
    }

    fn forward(&self, clip: &Array4<T>, beta: &Beta<T>) -> Result<Array2<T>, BackboneError> {
        ReferenceBackbone::forward(self, clip, beta)
    }

    fn train_step(
        &mut self,
        clips: &[Array4<T>],
        betas: &[Beta<T>],
        lr: f64,
        grad_fn: &mut dyn FnMut(&[Array2<T>]) -> (f64, Vec<Array2<T>>),
    ) -> Result<f64, BackboneError> {
        assert_eq!(clips.len(), betas.len());
        let mut sigs = Vec::with_capacity(clips.len());
        let mut traces = Vec::with_capacity(clips.len());
        for (clip, beta) in clips.iter().zip(betas.iter()) {
            let (sig, trace) = self.forward_traced(clip, beta)?;
            sigs.push(sig);
            traces.push(trace);
        }
        let (loss, g_sigs) = grad_fn(&sigs);
        assert_eq!(g_sigs.len(), traces.len());
        let mut grads = self.zero_grads();
        for (trace, g) in traces.iter().zip(g_sigs.iter()) {
            self.accumulate_backward(trace, g, &mut grads);
        }
        self.apply_gradients(&grads, lr, &AdamConfig::default());
        Ok(loss)
    }
}

/// Wrapper registering an external model against a declared hook list.
/// Declarations are validated here, at registration, never at runtime.
pub struct ExternalBackbone<T: Scalar, M: GaitModel<T>> {
    model: M,
    _marker: std::marker::PhantomData<T>,
}

/// Validate an external model's hook declaration and wrap it. EARLY_3D
/// declarations must match the detector feature width exactly; this adapter
/// refuses to guess a projection for mismatched widths.
pub fn adapt_external<T: Scalar, M: GaitModel<T>>(
    model: M,
    declared: &[HookPoint],
) -> Result<ExternalBackbone<T, M>, BackboneError> {
    let actual = model.hooks();
    for hook in declared {
        if !actual.contains(hook) {
            return Err(BackboneError::InvalidDeclaration(format!(
                "declared hook {hook:?} not offered by the model (offers {actual:?})"
            )));
        }
        if let HookPoint::Early3d { channels } = hook {
            if *channels != crate::awareness::BETA_DIM {
                return Err(BackboneError::InvalidDeclaration(format!(
                    "EARLY_3D declares {channels} channels; injection requires {}",
                    crate::awareness::BETA_DIM
                )));
            }
        }
    }
    if declared.is_empty() {
        return Err(BackboneError::InvalidDeclaration(
            "external model must declare at least one hook".into(),
        ));
    }
    Ok(ExternalBackbone {
        model,
        _marker: std::marker::PhantomData,
    })
}

impl<T: Scalar, M: GaitModel<T>> ExternalBackbone<T, M> {
    pub fn inner(&self) -> &M {
        &self.model
    }

    pub fn inner_mut(&mut self) -> &mut M {
        &mut self.model
    }
}

impl<T: Scalar, M: GaitModel<T>> GaitModel<T> for ExternalBackbone<T, M> {
    fn hooks(&self) -> Vec<HookPoint> {
        self.model.hooks()
    }

    fn signature_dims(&self) -> (usize, usize) {
        self.model.signature_dims()
    }

    fn beta_requirements(&self) -> (bool, bool) {
        self.model.beta_requirements()
    }

    fn forward(&self, clip: &Array4<T>, beta: &Beta<T>) -> Result<Array2<T>, BackboneError> {
        self.model.forward(clip, beta)
    }

    fn train_step(
        &mut self,
        clips: &[Array4<T>],
        betas: &[Beta<T>],
        lr: f64,
        grad_fn: &mut dyn FnMut(&[Array2<T>]) -> (f64, Vec<Array2<T>>),
    ) -> Result<f64, BackboneError> {
        self.model.train_step(clips, betas, lr, grad_fn)
    }
}
