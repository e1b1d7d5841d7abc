//! Occlusion-type detector: a small CNN over single silhouette frames.
//!
//! Three 3x3/stride-1/pad-1 conv stages (1 -> 32 -> 64 -> 128), each ReLU +
//! 2x2 max-pool, then a global average pool to a channel vector, FC1 down to
//! the 64-d occlusion feature and FC2 up to the 9 class logits. FC1 output
//! (post-ReLU) doubles as the occlusion feature beta; the FC2 classifier
//! head plays no part in it.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::data_model::{SilhouetteFrame, SilhouetteVideo};
use crate::nn::{
    global_avg_pool2d, global_avg_pool2d_backward, max_pool2d, max_pool2d_backward, relu,
    relu_backward, softmax_cross_entropy, AdamConfig, Conv2d, Linear, Scalar,
};
use crate::occlusion::{self, OcclusionError};
use crate::seed;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("input frame is {got:?}, expected {want}x{want}")]
    ShapeMismatch { got: (usize, usize), want: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("occlusion: {0}")]
    Occlusion(#[from] OcclusionError),
    #[error("checkpoint config does not match: {0}")]
    ConfigMismatch(String),
}

/// Architecture knobs. The default matches the full-size detector; tests
/// instantiate reduced variants (fewer channels, smaller input) and the
/// 1-/5-conv-layer ablations are just different `conv_channels` lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub input_size: usize,
    pub conv_channels: Vec<usize>,
    pub feature_dim: usize,
    pub num_classes: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            conv_channels: vec![32, 64, 128],
            feature_dim: 64,
            num_classes: 9,
        }
    }
}

impl DetectorConfig {
    fn validate(&self) {
        assert!(!self.conv_channels.is_empty(), "need at least one conv stage");
        assert!(
            self.input_size % (1 << self.conv_channels.len()) == 0,
            "input size must survive one 2x2 pool per conv stage"
        );
    }
}

#[derive(Debug, Clone)]
pub struct DetectorNetwork<T: Scalar> {
    pub config: DetectorConfig,
    convs: Vec<Conv2d<T>>,
    fc1: Linear<T>,
    fc2: Linear<T>,
    frozen: bool,
}

/// Per-frame occlusion feature in one of the two temporal modes.
#[derive(Debug, Clone, PartialEq)]
pub enum OcclusionFeature {
    /// One row per frame: shape (f, feature_dim).
    Transient(Array2<f32>),
    /// Temporal mean over frames: shape (feature_dim,).
    Cumulative(Array1<f32>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaMode {
    Transient,
    Cumulative,
}

struct FrameTrace<T: Scalar> {
    conv_inputs: Vec<Array3<T>>,
    conv_pre: Vec<Array3<T>>,
    pool_idx: Vec<Array3<usize>>,
    pool_in_dims: Vec<(usize, usize, usize)>,
    avg_in_dim: (usize, usize, usize),
    fc1_in: Array2<T>,
    fc1_pre: Array2<T>,
    feature: Array2<T>,
}

/// Accumulated parameter gradients, same layout as the network.
pub struct DetectorGrads<T: Scalar> {
    conv_w: Vec<ndarray::Array4<T>>,
    conv_b: Vec<Array1<T>>,
    fc1_w: Array2<T>,
    fc1_b: Array1<T>,
    fc2_w: Array2<T>,
    fc2_b: Array1<T>,
}

impl<T: Scalar> DetectorGrads<T> {
    /// Gradients flattened in [`DetectorNetwork::params_flat`] order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.conv_w.iter().zip(self.conv_b.iter()) {
            out.extend(w.iter().map(|v| v.to_f64_prim()));
            out.extend(b.iter().map(|v| v.to_f64_prim()));
        }
        for w in self.fc1_w.iter() {
            out.push(w.to_f64_prim());
        }
        out.extend(self.fc1_b.iter().map(|v| v.to_f64_prim()));
        for w in self.fc2_w.iter() {
            out.push(w.to_f64_prim());
        }
        out.extend(self.fc2_b.iter().map(|v| v.to_f64_prim()));
        out
    }
}

impl<T: Scalar> DetectorNetwork<T> {
    pub fn new(config: DetectorConfig, rng_seed: u64) -> Self {
        config.validate();
        let mut rng = seed::rng(rng_seed);
        let mut convs = Vec::new();
        let mut in_ch = 1;
        for &out_ch in &config.conv_channels {
            convs.push(Conv2d::new(in_ch, out_ch, 3, 1, &mut rng));
            in_ch = out_ch;
        }
        let fc1 = Linear::new(in_ch, config.feature_dim, &mut rng);
        let fc2 = Linear::new(config.feature_dim, config.num_classes, &mut rng);
        Self {
            config,
            convs,
            fc1,
            fc2,
            frozen: false,
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Freezing is permanent for this value and idempotent.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    fn frame_to_array(&self, frame: &SilhouetteFrame) -> Result<Array3<T>, DetectorError> {
        let px = frame.pixels();
        let (h, w) = px.dim();
        if h != self.config.input_size || w != self.config.input_size {
            return Err(DetectorError::ShapeMismatch {
                got: (h, w),
                want: self.config.input_size,
            });
        }
        Ok(px
            .mapv(|v| T::from_f64(v as f64))
            .insert_axis(ndarray::Axis(0)))
    }

    fn forward_traced(&self, x: Array3<T>) -> FrameTrace<T> {
        let mut conv_inputs = Vec::new();
        let mut conv_pre = Vec::new();
        let mut pool_idx = Vec::new();
        let mut pool_in_dims = Vec::new();
        let mut cur = x;
        for conv in &self.convs {
            conv_inputs.push(cur.clone());
            let pre = conv.forward(&cur);
            let act = relu(&pre);
            conv_pre.push(pre);
            pool_in_dims.push(act.dim());
            let (pooled, idx) = max_pool2d(&act, 2);
            pool_idx.push(idx);
            cur = pooled;
        }
        let avg_in_dim = cur.dim();
        let avg = global_avg_pool2d(&cur);
        let fc1_in = avg.insert_axis(ndarray::Axis(0));
        let fc1_pre = self.fc1.forward(&fc1_in);
        let feature = relu(&fc1_pre);
        FrameTrace {
            conv_inputs,
            conv_pre,
            pool_idx,
            pool_in_dims,
            avg_in_dim,
            fc1_in,
            fc1_pre,
            feature,
        }
    }

    /// Forward one raw (size x size) array; returns (feature, logits).
    pub fn forward_array(&self, x: Array3<T>) -> (Array1<T>, Array1<T>) {
        let trace = self.forward_traced(x);
        let logits = self.fc2.forward(&trace.feature);
        (
            trace.feature.index_axis(ndarray::Axis(0), 0).to_owned(),
            logits.index_axis(ndarray::Axis(0), 0).to_owned(),
        )
    }

    /// Forward a silhouette frame; returns (feature, logits).
    pub fn forward_frame(
        &self,
        frame: &SilhouetteFrame,
    ) -> Result<(Array1<T>, Array1<T>), DetectorError> {
        Ok(self.forward_array(self.frame_to_array(frame)?))
    }

    fn zero_grads(&self) -> DetectorGrads<T> {
        DetectorGrads {
            conv_w: self
                .convs
                .iter()
                .map(|c| ndarray::Array4::zeros(c.weight.value.raw_dim()))
                .collect(),
            conv_b: self
                .convs
                .iter()
                .map(|c| Array1::zeros(c.bias.value.raw_dim()))
                .collect(),
            fc1_w: Array2::zeros(self.fc1.weight.value.raw_dim()),
            fc1_b: Array1::zeros(self.fc1.bias.value.raw_dim()),
            fc2_w: Array2::zeros(self.fc2.weight.value.raw_dim()),
            fc2_b: Array1::zeros(self.fc2.bias.value.raw_dim()),
        }
    }

    /// Backprop one frame's logit gradient into `grads`.
    fn accumulate_backward(
        &self,
        trace: &FrameTrace<T>,
        grad_logits: &Array2<T>,
        grads: &mut DetectorGrads<T>,
    ) {
        let (g_feat, g_fc2w, g_fc2b) = self.fc2.backward(&trace.feature, grad_logits);
        grads.fc2_w += &g_fc2w;
        grads.fc2_b += &g_fc2b;
        let g_fc1_pre = relu_backward(&trace.fc1_pre, &g_feat);
        let (g_fc1_in, g_fc1w, g_fc1b) = self.fc1.backward(&trace.fc1_in, &g_fc1_pre);
        grads.fc1_w += &g_fc1w;
        grads.fc1_b += &g_fc1b;
        let g_avg = g_fc1_in.index_axis(ndarray::Axis(0), 0).to_owned();
        let mut g_cur = global_avg_pool2d_backward(&g_avg, trace.avg_in_dim);
        for li in (0..self.convs.len()).rev() {
            let g_act =
                max_pool2d_backward(&trace.pool_idx[li], &g_cur, trace.pool_in_dims[li]);
            let g_pre = relu_backward(&trace.conv_pre[li], &g_act);
            let (g_in, g_w, g_b) = self.convs[li].backward(&trace.conv_inputs[li], &g_pre);
            grads.conv_w[li] += &g_w;
            grads.conv_b[li] += &g_b;
            g_cur = g_in;
        }
    }

    /// Cross-entropy loss + parameter gradients over a batch of frames.
    /// Returns (mean loss, number correct, grads).
    pub fn loss_and_grads(
        &self,
        batch: &[(Array3<T>, usize)],
    ) -> (f64, usize, DetectorGrads<T>) {
        let n = batch.len();
        assert!(n > 0);
        let mut grads = self.zero_grads();
        let mut total_loss = 0.0;
        let mut correct = 0;
        let inv_n = T::from_f64(1.0 / n as f64);
        for (x, label) in batch {
            let trace = self.forward_traced(x.clone());
            let logits = self.fc2.forward(&trace.feature);
            let (loss, mut g_logits) = softmax_cross_entropy(&logits, &[*label]);
            // softmax_cross_entropy averages over its (single) row; rescale
            // so the batch mean comes out right.
            g_logits.mapv_inplace(|v| v * inv_n);
            total_loss += loss.to_f64_prim() / n as f64;
            let pred = argmax(&logits.index_axis(ndarray::Axis(0), 0).to_owned());
            if pred == *label {
                correct += 1;
            }
            self.accumulate_backward(&trace, &g_logits, &mut grads);
        }
        (total_loss, correct, grads)
    }

    /// One Adam step. Silently a no-op when frozen, honoring the contract
    /// that no operation mutates frozen weights.
    pub fn apply_gradients(&mut self, grads: &DetectorGrads<T>, lr: f64, cfg: &AdamConfig) {
        if self.frozen {
            return;
        }
        for (conv, (gw, gb)) in self
            .convs
            .iter_mut()
            .zip(grads.conv_w.iter().zip(grads.conv_b.iter()))
        {
            conv.weight.adam_step(gw, lr, cfg);
            conv.bias.adam_step(gb, lr, cfg);
        }
        self.fc1.weight.adam_step(&grads.fc1_w, lr, cfg);
        self.fc1.bias.adam_step(&grads.fc1_b, lr, cfg);
        self.fc2.weight.adam_step(&grads.fc2_w, lr, cfg);
        self.fc2.bias.adam_step(&grads.fc2_b, lr, cfg);
    }

    /// Parameter values flattened in a fixed order (convs, fc1, fc2)
    /// mirroring [`DetectorGrads::flat`]. For gradient diagnostics.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for conv in &self.convs {
            out.extend(conv.weight.value.iter().map(|v| v.to_f64_prim()));
            out.extend(conv.bias.value.iter().map(|v| v.to_f64_prim()));
        }
        for fc in [&self.fc1, &self.fc2] {
            out.extend(fc.weight.value.iter().map(|v| v.to_f64_prim()));
            out.extend(fc.bias.value.iter().map(|v| v.to_f64_prim()));
        }
        out
    }

    /// Overwrite all parameters from a [`Self::params_flat`] vector.
    /// Panics when called on a frozen detector.
    pub fn set_params_flat(&mut self, vals: &[f64]) {
        assert!(!self.frozen, "cannot overwrite a frozen detector");
        let mut it = vals.iter().copied();
        for conv in &mut self.convs {
            crate::awareness::fill(&mut conv.weight.value, &mut it);
            crate::awareness::fill(&mut conv.bias.value, &mut it);
        }
        for fc in [&mut self.fc1, &mut self.fc2] {
            crate::awareness::fill(&mut fc.weight.value, &mut it);
            crate::awareness::fill(&mut fc.bias.value, &mut it);
        }
        assert!(it.next().is_none(), "flat parameter vector too long");
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for (i, conv) in self.convs.iter().enumerate() {
            ck.insert(
                &format!("conv{i}.weight"),
                &conv.weight.value.mapv(|v| v.to_f64_prim() as f32),
            );
            ck.insert(
                &format!("conv{i}.bias"),
                &conv.bias.value.mapv(|v| v.to_f64_prim() as f32),
            );
        }
        ck.insert("fc1.weight", &self.fc1.weight.value.mapv(|v| v.to_f64_prim() as f32));
        ck.insert("fc1.bias", &self.fc1.bias.value.mapv(|v| v.to_f64_prim() as f32));
        ck.insert("fc2.weight", &self.fc2.weight.value.mapv(|v| v.to_f64_prim() as f32));
        ck.insert("fc2.bias", &self.fc2.bias.value.mapv(|v| v.to_f64_prim() as f32));
        ck
    }

    pub fn load_weights(&mut self, ck: &Checkpoint) -> Result<(), DetectorError> {
        assert!(!self.frozen, "cannot overwrite a frozen detector");
        for (i, conv) in self.convs.iter_mut().enumerate() {
            let w = ck.get_shaped(&format!("conv{i}.weight"), conv.weight.value.raw_dim())?;
            let b = ck.get_shaped(&format!("conv{i}.bias"), conv.bias.value.raw_dim())?;
            conv.weight.value = w.mapv(|v| T::from_f64(v as f64));
            conv.bias.value = b.mapv(|v| T::from_f64(v as f64));
        }
        let w = ck.get_shaped("fc1.weight", self.fc1.weight.value.raw_dim())?;
        let b = ck.get_shaped("fc1.bias", self.fc1.bias.value.raw_dim())?;
        self.fc1.weight.value = w.mapv(|v| T::from_f64(v as f64));
        self.fc1.bias.value = b.mapv(|v| T::from_f64(v as f64));
        let w = ck.get_shaped("fc2.weight", self.fc2.weight.value.raw_dim())?;
        let b = ck.get_shaped("fc2.bias", self.fc2.bias.value.raw_dim())?;
        self.fc2.weight.value = w.mapv(|v| T::from_f64(v as f64));
        self.fc2.bias.value = b.mapv(|v| T::from_f64(v as f64));
        Ok(())
    }

    /// Weight checksum, used to police the frozen contract.
    pub fn checksum(&self) -> u64 {
        self.to_checkpoint().checksum()
    }

    pub fn save(&self, path: &std::path::Path, metrics: &serde_json::Value) -> Result<(), DetectorError> {
        self.to_checkpoint().save(path)?;
        let sidecar = serde_json::json!({
            "kind": "detector",
            "config": self.config,
            "metrics": metrics,
        });
        Checkpoint::save_sidecar(path, &sidecar)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, DetectorError> {
        let sidecar = Checkpoint::load_sidecar(path)?;
        let config: DetectorConfig = serde_json::from_value(sidecar["config"].clone())
            .map_err(|e| DetectorError::ConfigMismatch(e.to_string()))?;
        let mut net = Self::new(config, 0);
        net.load_weights(&Checkpoint::load(path)?)?;
        Ok(net)
    }
}

fn argmax<T: Scalar>(v: &Array1<T>) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

impl<T: Scalar> DetectorNetwork<T> {
    /// Per-frame (transient) or temporally averaged (cumulative) occlusion
    /// feature for a whole video. The cumulative mean is accumulated in f64.
    pub fn extract_beta(
        &self,
        video: &SilhouetteVideo,
        mode: BetaMode,
    ) -> Result<OcclusionFeature, DetectorError> {
        let f = video.frames.len();
        assert!(f >= 1, "extract_beta needs at least one frame");
        let mut transient = Array2::<f32>::zeros((f, self.config.feature_dim));
        for (t, frame) in video.frames.iter().enumerate() {
            let (feat, _) = self.forward_frame(frame)?;
            for (dst, src) in transient.row_mut(t).iter_mut().zip(feat.iter()) {
                *dst = src.to_f64_prim() as f32;
            }
        }
        Ok(match mode {
            BetaMode::Transient => OcclusionFeature::Transient(transient),
            BetaMode::Cumulative => {
                let mut mean = Array1::<f32>::zeros(self.config.feature_dim);
                for c in 0..self.config.feature_dim {
                    let sum: f64 = transient.column(c).iter().map(|&v| v as f64).sum();
                    mean[c] = (sum / f as f64) as f32;
                }
                OcclusionFeature::Cumulative(mean)
            }
        })
    }
}

/// One labelled training sample: an occluded frame and its occlusion class.
pub type DetectorSample = (SilhouetteFrame, usize);

/// A corner-patch occlusion must visibly bite into the silhouette to carry
/// its label: thin walkers often leave frame corners empty, and a patch that
/// removes (almost) nothing is indistinguishable from class 0 in principle.
const MIN_REMOVED_PIXELS: usize = 30;

/// Build the detector training set: one frame from every 50 per video,
/// each occluded with a freshly sampled class-and-ratio at load time.
/// Corner-patch ratios are deterministically resampled (class kept) until
/// the patch removes at least [`MIN_REMOVED_PIXELS`] foreground pixels; the
/// most effective attempt is kept as a fallback.
pub fn build_detector_samples(
    videos: &[SilhouetteVideo],
    allowed_classes: &BTreeSet<u8>,
    rng_seed: u64,
) -> Result<Vec<DetectorSample>, DetectorError> {
    let mut samples = Vec::new();
    for (vi, video) in videos.iter().enumerate() {
        let video_seed = seed::mix(rng_seed, vi as u64);
        for (si, t) in (0..video.frames.len()).step_by(50).enumerate() {
            let frame_seed = seed::mix(video_seed, si as u64);
            let original = &video.frames[t];
            let spec = occlusion::sample_spec(allowed_classes, frame_seed)?;
            let mut frame = occlusion::apply_consistent_frame(original, &spec)?;
            if matches!(spec.class.id(), 1..=4) {
                let class_only: BTreeSet<u8> = [spec.class.id()].into();
                let mut best_removed =
                    original.foreground_count() - frame.foreground_count();
                for attempt in 1..32u64 {
                    if best_removed >= MIN_REMOVED_PIXELS {
                        break;
                    }
                    let retry = occlusion::sample_spec(
                        &class_only,
                        seed::mix(frame_seed, attempt),
                    )?;
                    let candidate = occlusion::apply_consistent_frame(original, &retry)?;
                    let removed =
                        original.foreground_count() - candidate.foreground_count();
                    if removed > best_removed {
                        best_removed = removed;
                        frame = candidate;
                    }
                }
            }
            samples.push((frame, spec.class.id() as usize));
        }
    }
    if samples.is_empty() {
        return Err(DetectorError::EmptyDataset);
    }
    Ok(samples)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub rng_seed: u64,
    /// Fraction of samples held out for validation (rounded down, >= 1
    /// sample when possible).
    pub val_fraction: f64,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            lr: 0.001,
            rng_seed: 0,
            val_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorEpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorTrainLog {
    pub epochs: Vec<DetectorEpochLog>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

/// Train with Adam and return the best-validation-accuracy weights.
pub fn train_detector<T: Scalar>(
    net: &mut DetectorNetwork<T>,
    samples: &[DetectorSample],
    config: &DetectorTrainConfig,
) -> Result<DetectorTrainLog, DetectorError> {
    use rand::seq::SliceRandom;
    if samples.is_empty() {
        return Err(DetectorError::EmptyDataset);
    }
    // Pre-convert frames once; shuffle indices per epoch.
    let arrays: Vec<(Array3<T>, usize)> = samples
        .iter()
        .map(|(f, y)| Ok((net.frame_to_array(f)?, *y)))
        .collect::<Result<_, DetectorError>>()?;
    let mut order: Vec<usize> = (0..arrays.len()).collect();
    let mut split_rng = seed::rng(seed::mix(config.rng_seed, 0x511));
    order.shuffle(&mut split_rng);
    let n_val = ((arrays.len() as f64 * config.val_fraction) as usize)
        .min(arrays.len().saturating_sub(1))
        .max(usize::from(arrays.len() > 1));
    let (val_idx, train_idx) = order.split_at(n_val);
    let val_idx = val_idx.to_vec();
    let mut train_idx = train_idx.to_vec();

    let adam = AdamConfig::default();
    let mut log = DetectorTrainLog {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_acc: -1.0,
    };
    let mut best_weights = net.to_checkpoint();
    for epoch in 0..config.epochs {
        let mut epoch_rng = seed::rng(seed::mix(config.rng_seed, 1000 + epoch as u64));
        train_idx.shuffle(&mut epoch_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        let mut nbatches = 0;
        for chunk in train_idx.chunks(config.batch_size) {
            let batch: Vec<(Array3<T>, usize)> =
                chunk.iter().map(|&i| arrays[i].clone()).collect();
            let (loss, ncorr, grads) = net.loss_and_grads(&batch);
            net.apply_gradients(&grads, config.lr, &adam);
            loss_sum += loss;
            correct += ncorr;
            nbatches += 1;
        }
        let val_correct = val_idx
            .iter()
            .filter(|&&i| {
                let (_, logits) = net.forward_array(arrays[i].0.clone());
                argmax(&logits) == arrays[i].1
            })
            .count();
        let entry = DetectorEpochLog {
            epoch,
            train_loss: loss_sum / nbatches.max(1) as f64,
            train_acc: correct as f64 / train_idx.len().max(1) as f64,
            val_acc: val_correct as f64 / val_idx.len().max(1) as f64,
        };
        if entry.val_acc > log.best_val_acc {
            log.best_val_acc = entry.val_acc;
            log.best_epoch = epoch;
            best_weights = net.to_checkpoint();
        }
        log.epochs.push(entry);
    }
    net.load_weights(&best_weights)?;
    Ok(log)
}
