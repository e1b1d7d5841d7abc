//! End-to-end backbone (+ injector) training with a frozen detector:
//! P x K batch sampling, part-wise batch-all triplet loss, and an identity
//! cross-entropy head over flattened signatures.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use ndarray::{Array1, Array2, Array4};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::awareness::Beta;
use crate::backbone::{video_to_clip, BackboneError, GaitModel};
use crate::data_model::SilhouetteVideo;
use crate::detector::{BetaMode, DetectorError, DetectorNetwork, OcclusionFeature};
use crate::nn::{softmax_cross_entropy, AdamConfig, Linear, Scalar};
use crate::occlusion::{self, OcclusionError};
use crate::seed;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("frozen-detector contract violated: checksum changed during training")]
    FrozenContractViolation,
    #[error("detector must be provided frozen for an awareness-injected model")]
    DetectorNotFrozen,
    #[error("dataset is empty or too small: {0}")]
    EmptyDataset(String),
    #[error("backbone: {0}")]
    Backbone(#[from] BackboneError),
    #[error("detector: {0}")]
    Detector(#[from] DetectorError),
    #[error("occlusion: {0}")]
    Occlusion(#[from] OcclusionError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub frames_per_clip: usize,
    pub batch_subjects: usize,
    pub clips_per_subject: usize,
    pub learning_rate: f64,
    pub triplet_margin: f64,
    /// (triplet weight, cross-entropy weight)
    pub loss_weights: (f64, f64),
    pub max_steps: usize,
    /// 0 disables periodic validation.
    pub eval_every: usize,
    pub rng_seed: u64,
    /// Occlusion classes sampled fresh for every drawn clip.
    pub occlusion_classes: BTreeSet<u8>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            frames_per_clip: 30,
            batch_subjects: 8,
            clips_per_subject: 8,
            learning_rate: 1e-4,
            triplet_margin: 0.2,
            loss_weights: (1.0, 0.1),
            max_steps: 200,
            eval_every: 0,
            rng_seed: 0,
            occlusion_classes: (0..9).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss_triplet: f64,
    pub loss_ce: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_rank1: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
}

impl TrainLog {
    /// Newline-delimited JSON, one record per step.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for rec in &self.steps {
            out.push_str(&serde_json::to_string(rec).unwrap());
            out.push('\n');
        }
        out
    }
}

/// Part-wise batch-all triplet loss with Euclidean distances.
///
/// For each part independently, every (anchor, positive, negative) triple
/// contributes max(0, d(a,p) - d(a,n) + margin); the part's loss is the
/// mean over strictly positive terms (0 when none). The total is the mean
/// over parts. Returns the loss and per-clip signature gradients.
pub fn partwise_triplet_loss<T: Scalar>(
    sigs: &[Array2<T>],
    labels: &[usize],
    margin: f64,
) -> Result<(f64, Vec<Array2<T>>), TrainError> {
    let n = sigs.len();
    if n != labels.len() || n == 0 {
        return Err(TrainError::DegenerateBatch("empty batch".into()));
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0) += 1;
    }
    if counts.len() < 2 || counts.values().any(|&c| c < 2) {
        return Err(TrainError::DegenerateBatch(
            "need >=2 subjects with >=2 clips each".into(),
        ));
    }
    let (parts, embed) = sigs[0].dim();
    for s in sigs {
        if s.dim() != (parts, embed) {
            return Err(TrainError::DegenerateBatch(
                "signatures disagree in shape".into(),
            ));
        }
    }
    let margin_t = margin;
    let mut grads: Vec<Array2<T>> = sigs.iter().map(|s| Array2::zeros(s.raw_dim())).collect();
    let mut total = 0.0;
    for p in 0..parts {
        // pairwise distances for this part
        let mut dist = vec![vec![0.0f64; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let mut d2 = 0.0;
                for e in 0..embed {
                    let diff = (sigs[i][[p, e]] - sigs[j][[p, e]]).to_f64_prim();
                    d2 += diff * diff;
                }
                let d = d2.sqrt();
                dist[i][j] = d;
                dist[j][i] = d;
            }
        }
        // collect active triples first so gradients can be scaled by the
        // non-zero count
        let mut active: Vec<(usize, usize, usize, f64)> = Vec::new();
        for a in 0..n {
            for pos in 0..n {
                if pos == a || labels[pos] != labels[a] {
                    continue;
                }
                for neg in 0..n {
                    if labels[neg] == labels[a] {
                        continue;
                    }
                    let term = dist[a][pos] - dist[a][neg] + margin_t;
                    if term > 0.0 {
                        active.push((a, pos, neg, term));
                    }
                }
            }
        }
        if active.is_empty() {
            continue;
        }
        let part_loss: f64 = active.iter().map(|t| t.3).sum::<f64>() / active.len() as f64;
        total += part_loss / parts as f64;
        let scale = 1.0 / (active.len() * parts) as f64;
        for &(a, pos, neg, _) in &active {
            // d(d_ap)/d e = unit vectors; zero-distance pairs get no grad
            if dist[a][pos] > 0.0 {
                let inv = scale / dist[a][pos];
                for e in 0..embed {
                    let diff = (sigs[a][[p, e]] - sigs[pos][[p, e]]).to_f64_prim() * inv;
                    grads[a][[p, e]] += T::from_f64(diff);
                    grads[pos][[p, e]] += T::from_f64(-diff);
                }
            }
            if dist[a][neg] > 0.0 {
                let inv = scale / dist[a][neg];
                for e in 0..embed {
                    let diff = (sigs[a][[p, e]] - sigs[neg][[p, e]]).to_f64_prim() * inv;
                    grads[a][[p, e]] += T::from_f64(-diff);
                    grads[neg][[p, e]] += T::from_f64(diff);
                }
            }
        }
    }
    Ok((total, grads))
}

/// Identity classification head over flattened signatures.
pub struct IdHead<T: Scalar> {
    pub linear: Linear<T>,
    num_classes: usize,
}

impl<T: Scalar> IdHead<T> {
    pub fn new(sig_dim: usize, num_classes: usize, rng_seed: u64) -> Self {
        let mut rng = seed::rng(rng_seed);
        Self {
            linear: Linear::new(sig_dim, num_classes, &mut rng),
            num_classes,
        }
    }

    /// Returns (loss, per-clip signature gradients, (head weight grad,
    /// head bias grad)).
    #[allow(clippy::type_complexity)]
    pub fn loss_and_grads(
        &self,
        sigs: &[Array2<T>],
        labels: &[usize],
    ) -> Result<(f64, Vec<Array2<T>>, (Array2<T>, Array1<T>)), TrainError> {
        for &l in labels {
            if l >= self.num_classes {
                return Err(TrainError::LabelOutOfRange {
                    label: l,
                    num_classes: self.num_classes,
                });
            }
        }
        let n = sigs.len();
        let dim = sigs[0].len();
        let mut flat = Array2::zeros((n, dim));
        for (i, s) in sigs.iter().enumerate() {
            for (j, v) in s.iter().enumerate() {
                flat[[i, j]] = *v;
            }
        }
        let logits = self.linear.forward(&flat);
        let (loss, g_logits) = softmax_cross_entropy(&logits, labels);
        let (g_flat, g_w, g_b) = self.linear.backward(&flat, &g_logits);
        let g_sigs = (0..n)
            .map(|i| {
                Array2::from_shape_vec(sigs[i].raw_dim(), g_flat.row(i).to_vec()).unwrap()
            })
            .collect();
        Ok((loss.to_f64_prim(), g_sigs, (g_w, g_b)))
    }

    pub fn apply(&mut self, grads: &(Array2<T>, Array1<T>), lr: f64, cfg: &AdamConfig) {
        self.linear.weight.adam_step(&grads.0, lr, cfg);
        self.linear.bias.adam_step(&grads.1, lr, cfg);
    }
}

/// Standard softmax cross-entropy on flattened signatures through `head`.
pub fn id_cross_entropy<T: Scalar>(
    sigs: &[Array2<T>],
    labels: &[usize],
    head: &IdHead<T>,
) -> Result<f64, TrainError> {
    Ok(head.loss_and_grads(sigs, labels)?.0)
}

/// Ordered random crop of `frames` contiguous frames; videos shorter than
/// the window are wrap-padded (cyclic repeat).
pub fn sample_clip(
    video: &SilhouetteVideo,
    frames: usize,
    rng: &mut impl Rng,
) -> SilhouetteVideo {
    let len = video.frames.len();
    let picked: Vec<_> = if len >= frames {
        let start = rng.gen_range(0..=(len - frames));
        video.frames[start..start + frames].to_vec()
    } else {
        let start = rng.gen_range(0..len);
        (0..frames)
            .map(|k| video.frames[(start + k) % len].clone())
            .collect()
    };
    video.with_frames(picked)
}

/// Compute the beta features a model needs for one (already occluded) clip.
pub fn compute_beta<T: Scalar>(
    detector: &DetectorNetwork<T>,
    video: &SilhouetteVideo,
    needs: (bool, bool),
) -> Result<Beta<T>, TrainError> {
    let (need_t, need_c) = needs;
    if !need_t && !need_c {
        return Ok(Beta::none());
    }
    let OcclusionFeature::Transient(t) = detector.extract_beta(video, BetaMode::Transient)?
    else {
        unreachable!()
    };
    let transient = t.mapv(|v| T::from_f64(v as f64));
    let cumulative = if need_c {
        let f = transient.nrows();
        let mut mean = Array1::zeros(transient.ncols());
        for c in 0..transient.ncols() {
            let sum: f64 = transient.column(c).iter().map(|v| v.to_f64_prim()).sum();
            mean[c] = T::from_f64(sum / f as f64);
        }
        Some(mean)
    } else {
        None
    };
    Ok(Beta {
        transient: if need_t { Some(transient) } else { None },
        cumulative,
    })
}

/// One assembled training batch.
struct Batch<T: Scalar> {
    clips: Vec<Array4<T>>,
    betas: Vec<Beta<T>>,
    labels: Vec<usize>,
}

fn assemble_batch<T: Scalar, M: GaitModel<T>>(
    model: &M,
    detector: Option<&DetectorNetwork<T>>,
    by_subject: &BTreeMap<String, Vec<usize>>,
    videos: &[SilhouetteVideo],
    label_of: &BTreeMap<String, usize>,
    config: &TrainConfig,
    step: usize,
) -> Result<Batch<T>, TrainError> {
    let step_seed = seed::mix(config.rng_seed, 0xBA7C + step as u64);
    let mut rng = seed::rng(step_seed);
    let subjects: Vec<&String> = by_subject.keys().collect();
    if subjects.len() < config.batch_subjects {
        return Err(TrainError::EmptyDataset(format!(
            "{} subjects available, batch needs {}",
            subjects.len(),
            config.batch_subjects
        )));
    }
    let mut order: Vec<usize> = (0..subjects.len()).collect();
    order.shuffle(&mut rng);
    let needs = model.beta_requirements();
    let mut batch = Batch {
        clips: Vec::new(),
        betas: Vec::new(),
        labels: Vec::new(),
    };
    for &si in order.iter().take(config.batch_subjects) {
        let subject = subjects[si];
        let vids = &by_subject[subject];
        for k in 0..config.clips_per_subject {
            let video = &videos[vids[rng.gen_range(0..vids.len())]];
            let clip_video = sample_clip(video, config.frames_per_clip, &mut rng);
            let spec_seed = seed::mix(step_seed, (si as u64) << 16 | k as u64);
            let spec = occlusion::sample_spec(&config.occlusion_classes, spec_seed)?;
            let occluded = occlusion::apply(&clip_video, &spec)?;
            let beta = match detector {
                Some(det) if needs.0 || needs.1 => compute_beta(det, &occluded, needs)?,
                _ => Beta::none(),
            };
            batch.clips.push(video_to_clip(&occluded));
            batch.betas.push(beta);
            batch.labels.push(label_of[subject]);
        }
    }
    Ok(batch)
}

/// Train a backbone (+ its injector) on freshly occluded clips with the
/// detector held frozen throughout.
pub fn train_occluded<T: Scalar, M: GaitModel<T>>(
    model: &mut M,
    detector: Option<&DetectorNetwork<T>>,
    videos: &[SilhouetteVideo],
    config: &TrainConfig,
) -> Result<TrainLog, TrainError> {
    if videos.is_empty() {
        return Err(TrainError::EmptyDataset("no videos".into()));
    }
    let needs = model.beta_requirements();
    if needs.0 || needs.1 {
        match detector {
            Some(det) if det.is_frozen() => {}
            _ => return Err(TrainError::DetectorNotFrozen),
        }
    }
    let mut by_subject: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, v) in videos.iter().enumerate() {
        by_subject.entry(v.subject_id.clone()).or_default().push(i);
    }
    let label_of: BTreeMap<String, usize> = by_subject
        .keys()
        .enumerate()
        .map(|(i, s)| (s.clone(), i))
        .collect();
    let (parts, embed) = model.signature_dims();
    let mut head: IdHead<T> = IdHead::new(
        parts * embed,
        label_of.len(),
        seed::mix(config.rng_seed, 0x1DEA),
    );
    let det_checksum = detector.map(|d| d.checksum());
    let (w_tri, w_ce) = config.loss_weights;
    let margin = config.triplet_margin;
    let adam = AdamConfig::default();
    let mut log = TrainLog { steps: Vec::new() };

    for step in 0..config.max_steps {
        let batch = assemble_batch(model, detector, &by_subject, videos, &label_of, config, step)?;
        let labels = batch.labels.clone();
        let mut loss_tri = 0.0;
        let mut loss_ce = 0.0;
        let mut err: Option<TrainError> = None;
        {
            let head_ref = &mut head;
            let err_ref = &mut err;
            let mut grad_fn = |sigs: &[Array2<T>]| -> (f64, Vec<Array2<T>>) {
                let (lt, g_tri) = match partwise_triplet_loss(sigs, &labels, margin) {
                    Ok(v) => v,
                    Err(e) => {
                        *err_ref = Some(e);
                        return (0.0, sigs.iter().map(|s| Array2::zeros(s.raw_dim())).collect());
                    }
                };
                let (lc, g_ce, head_grads) = match head_ref.loss_and_grads(sigs, &labels) {
                    Ok(v) => v,
                    Err(e) => {
                        *err_ref = Some(e);
                        return (0.0, sigs.iter().map(|s| Array2::zeros(s.raw_dim())).collect());
                    }
                };
                head_ref.apply(&head_grads, config.learning_rate, &AdamConfig::default());
                loss_tri = lt;
                loss_ce = lc;
                let combined = g_tri
                    .into_iter()
                    .zip(g_ce)
                    .map(|(gt, gc)| {
                        gt.mapv(|v| v * T::from_f64(w_tri)) + gc.mapv(|v| v * T::from_f64(w_ce))
                    })
                    .collect();
                (w_tri * lt + w_ce * lc, combined)
            };
            model.train_step(&batch.clips, &batch.betas, config.learning_rate, &mut grad_fn)?;
        }
        let _ = &adam;
        if let Some(e) = err {
            return Err(e);
        }
        if let (Some(expected), Some(det)) = (det_checksum, detector) {
            if det.checksum() != expected {
                return Err(TrainError::FrozenContractViolation);
            }
        }
        let val_rank1 = if config.eval_every > 0 && (step + 1) % config.eval_every == 0 {
            Some(quick_rank1(model, detector, &by_subject, videos, config)?)
        } else {
            None
        };
        log.steps.push(StepRecord {
            step,
            loss_triplet: loss_tri,
            loss_ce,
            val_rank1,
        });
    }
    Ok(log)
}

/// Cheap rank-1 probe: first video per subject enrolls the gallery, the
/// rest are probes; clean (class-0) clips capped at the training length.
fn quick_rank1<T: Scalar, M: GaitModel<T>>(
    model: &M,
    detector: Option<&DetectorNetwork<T>>,
    by_subject: &BTreeMap<String, Vec<usize>>,
    videos: &[SilhouetteVideo],
    config: &TrainConfig,
) -> Result<f64, TrainError> {
    let needs = model.beta_requirements();
    let mut gallery: Vec<(Vec<f64>, &String)> = Vec::new();
    let mut probes: Vec<(Vec<f64>, &String)> = Vec::new();
    for (subject, vids) in by_subject {
        for (i, &vi) in vids.iter().enumerate() {
            let mut rng = seed::rng(seed::mix(config.rng_seed, 0xEA1 + vi as u64));
            let clip_video = sample_clip(&videos[vi], config.frames_per_clip, &mut rng);
            let beta = match detector {
                Some(det) if needs.0 || needs.1 => compute_beta(det, &clip_video, needs)?,
                _ => Beta::none(),
            };
            let sig = model.forward(&video_to_clip(&clip_video), &beta)?;
            let flat: Vec<f64> = sig.iter().map(|v| v.to_f64_prim()).collect();
            if i == 0 {
                gallery.push((flat, subject));
            } else {
                probes.push((flat, subject));
            }
        }
    }
    if probes.is_empty() || gallery.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for (p, subject) in &probes {
        let mut best = (f64::INFINITY, 0usize);
        for (gi, (g, _)) in gallery.iter().enumerate() {
            let d: f64 = p.iter().zip(g.iter()).map(|(a, b)| (a - b).powi(2)).sum();
            if d < best.0 {
                best = (d, gi);
            }
        }
        if gallery[best.1].1 == *subject {
            hits += 1;
        }
    }
    Ok(hits as f64 / probes.len() as f64)
}
