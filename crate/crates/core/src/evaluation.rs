//! Gallery/probe rank-K retrieval with randomized occlusion repetition,
//! occlusion-type slicing, cross-occlusion protocols, and detector
//! cross-domain reporting.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::awareness::Beta;
use crate::backbone::{video_to_clip, BackboneError, GaitModel};
use crate::data_model::SilhouetteVideo;
use crate::detector::{DetectorConfig, DetectorNetwork, DetectorSample, DetectorTrainConfig};
use crate::nn::Scalar;
use crate::occlusion::{self, OcclusionError, OcclusionSpec};
use crate::seed;
use crate::training::{compute_beta, TrainError};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("signature dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("missing video {0:?}")]
    MissingVideo(String),
    #[error("protocol invariant violated: {0}")]
    ProtocolInvariant(String),
    #[error("occlusion: {0}")]
    Occlusion(#[from] OcclusionError),
    #[error("backbone: {0}")]
    Backbone(#[from] BackboneError),
    #[error("training helper: {0}")]
    Train(#[from] TrainError),
    #[error("detector: {0}")]
    Detector(#[from] crate::detector::DetectorError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Gallery,
    Probe,
}

/// One row of a protocol file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolEntry {
    pub role: Role,
    /// `subject_id/sequence_id`, matching [`occlusion::video_key`].
    pub video_id: String,
    pub subject_id: String,
    pub condition: String,
    /// Optional probe window (inclusive start, exclusive end frame).
    pub start: Option<usize>,
    pub end: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub gallery: Vec<ProtocolEntry>,
    pub probes: Vec<ProtocolEntry>,
    pub ranks: Vec<usize>,
    pub num_runs: usize,
    pub gallery_occlusion_classes: BTreeSet<u8>,
    pub probe_occlusion_classes: BTreeSet<u8>,
    pub rng_seed: u64,
    /// When set, the gallery stays unoccluded.
    pub probe_only: bool,
    /// When set, probes get dynamic moving-patch occlusions instead of the
    /// consistent classes (unseen-occlusion protocol).
    pub dynamic_probes: bool,
    /// Distance = mean of per-part Euclidean distances instead of Euclidean
    /// on the flattened signature.
    #[serde(default)]
    pub part_averaged: bool,
}

impl EvalProtocol {
    /// Standard split over a loaded dataset: the lexicographically first
    /// `gallery_seqs` sequences of each subject enroll the gallery, the
    /// rest probe.
    pub fn from_videos(
        videos: &[SilhouetteVideo],
        gallery_seqs: usize,
        ranks: Vec<usize>,
        num_runs: usize,
        rng_seed: u64,
    ) -> Self {
        let mut by_subject: BTreeMap<&str, Vec<&SilhouetteVideo>> = BTreeMap::new();
        for v in videos {
            by_subject.entry(&v.subject_id).or_default().push(v);
        }
        let mut gallery = Vec::new();
        let mut probes = Vec::new();
        for (subject, mut vids) in by_subject {
            vids.sort_by(|a, b| a.sequence_id.cmp(&b.sequence_id));
            for (i, v) in vids.iter().enumerate() {
                let entry = ProtocolEntry {
                    role: if i < gallery_seqs {
                        Role::Gallery
                    } else {
                        Role::Probe
                    },
                    video_id: occlusion::video_key(v),
                    subject_id: subject.to_string(),
                    condition: v.condition.clone().unwrap_or_else(|| "all".to_string()),
                    start: None,
                    end: None,
                };
                if i < gallery_seqs {
                    gallery.push(entry);
                } else {
                    probes.push(entry);
                }
            }
        }
        Self {
            gallery,
            probes,
            ranks,
            num_runs,
            gallery_occlusion_classes: (0..9).collect(),
            probe_occlusion_classes: (0..9).collect(),
            rng_seed,
            probe_only: false,
            dynamic_probes: false,
            part_averaged: false,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let gal_ids: BTreeSet<&str> = self.gallery.iter().map(|e| e.video_id.as_str()).collect();
        let gal_subjects: BTreeSet<&str> =
            self.gallery.iter().map(|e| e.subject_id.as_str()).collect();
        for p in &self.probes {
            if gal_ids.contains(p.video_id.as_str()) {
                return Err(EvalError::ProtocolInvariant(format!(
                    "video {} appears in both gallery and probes",
                    p.video_id
                )));
            }
            if !gal_subjects.contains(p.subject_id.as_str()) {
                return Err(EvalError::ProtocolInvariant(format!(
                    "probe subject {} absent from gallery",
                    p.subject_id
                )));
            }
        }
        if self.gallery.is_empty() || self.probes.is_empty() {
            return Err(EvalError::ProtocolInvariant(
                "empty gallery or probe set".into(),
            ));
        }
        Ok(())
    }
}

/// Protocol CSV: `role,video_id,subject_id,condition,start,end`.
pub fn write_protocol_csv<W: Write>(out: W, protocol: &EvalProtocol) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["role", "video_id", "subject_id", "condition", "start", "end"])?;
    for e in protocol.gallery.iter().chain(protocol.probes.iter()) {
        w.write_record([
            match e.role {
                Role::Gallery => "gallery",
                Role::Probe => "probe",
            },
            &e.video_id,
            &e.subject_id,
            &e.condition,
            &e.start.map(|v| v.to_string()).unwrap_or_default(),
            &e.end.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parse the rows of a protocol CSV into (gallery, probes).
pub fn read_protocol_csv<R: Read>(
    input: R,
) -> Result<(Vec<ProtocolEntry>, Vec<ProtocolEntry>), EvalError> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut gallery = Vec::new();
    let mut probes = Vec::new();
    for record in rdr.records() {
        let rec = record?;
        let get = |i: usize| rec.get(i).unwrap_or("").to_string();
        let role = match rec.get(0).unwrap_or("") {
            "gallery" => Role::Gallery,
            "probe" => Role::Probe,
            other => {
                return Err(EvalError::ProtocolInvariant(format!(
                    "unknown role {other:?}"
                )))
            }
        };
        let parse_opt = |s: String| -> Option<usize> {
            if s.is_empty() {
                None
            } else {
                s.parse().ok()
            }
        };
        let entry = ProtocolEntry {
            role,
            video_id: get(1),
            subject_id: get(2),
            condition: get(3),
            start: parse_opt(get(4)),
            end: parse_opt(get(5)),
        };
        match role {
            Role::Gallery => gallery.push(entry),
            Role::Probe => probes.push(entry),
        }
    }
    Ok((gallery, probes))
}

/// Rank-K retrieval over gallery *videos*: a probe hits if any of its K
/// nearest gallery videos (Euclidean on flattened signatures, ties broken
/// by ascending gallery index) shares the probe's subject.
pub fn rank_retrieval(
    probe_sigs: &[Vec<f32>],
    probe_subjects: &[String],
    gallery_sigs: &[Vec<f32>],
    gallery_subjects: &[String],
    k: usize,
) -> Result<Vec<bool>, EvalError> {
    if probe_sigs.len() != probe_subjects.len() || gallery_sigs.len() != gallery_subjects.len() {
        return Err(EvalError::DimensionMismatch(
            "signature/subject count mismatch".into(),
        ));
    }
    let dim = gallery_sigs.first().map(|s| s.len()).unwrap_or(0);
    for s in probe_sigs.iter().chain(gallery_sigs.iter()) {
        if s.len() != dim {
            return Err(EvalError::DimensionMismatch(format!(
                "expected dimension {dim}, found {}",
                s.len()
            )));
        }
    }
    Ok(hits_by_distance(
        probe_sigs.len(),
        gallery_sigs.len(),
        |pi, gi| euclidean(&probe_sigs[pi], &gallery_sigs[gi]),
        probe_subjects,
        gallery_subjects,
        k,
    ))
}

/// Same retrieval rule with distance = mean over parts of the per-part
/// Euclidean distance (signatures shaped parts x dim).
pub fn rank_retrieval_part_averaged(
    probe_sigs: &[ndarray::Array2<f32>],
    probe_subjects: &[String],
    gallery_sigs: &[ndarray::Array2<f32>],
    gallery_subjects: &[String],
    k: usize,
) -> Result<Vec<bool>, EvalError> {
    let dim = gallery_sigs.first().map(|s| s.dim()).unwrap_or((0, 0));
    for s in probe_sigs.iter().chain(gallery_sigs.iter()) {
        if s.dim() != dim {
            return Err(EvalError::DimensionMismatch(format!(
                "expected signature shape {dim:?}, found {:?}",
                s.dim()
            )));
        }
    }
    Ok(hits_by_distance(
        probe_sigs.len(),
        gallery_sigs.len(),
        |pi, gi| {
            let p = &probe_sigs[pi];
            let g = &gallery_sigs[gi];
            let parts = p.nrows().max(1);
            (0..p.nrows())
                .map(|r| {
                    euclidean(
                        p.row(r).as_slice().unwrap(),
                        g.row(r).as_slice().unwrap(),
                    )
                })
                .sum::<f64>()
                / parts as f64
        },
        probe_subjects,
        gallery_subjects,
        k,
    ))
}

fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn hits_by_distance(
    num_probes: usize,
    num_gallery: usize,
    dist: impl Fn(usize, usize) -> f64,
    probe_subjects: &[String],
    gallery_subjects: &[String],
    k: usize,
) -> Vec<bool> {
    let mut hits = Vec::with_capacity(num_probes);
    for pi in 0..num_probes {
        let mut order: Vec<(f64, usize)> =
            (0..num_gallery).map(|gi| (dist(pi, gi), gi)).collect();
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let hit = order
            .iter()
            .take(k)
            .any(|&(_, gi)| gallery_subjects[gi] == probe_subjects[pi]);
        hits.push(hit);
    }
    hits
}

/// Accuracy table keyed by condition then rank.
pub type AccuracyTable = BTreeMap<String, BTreeMap<String, f64>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    /// Echo of the protocol that produced the report.
    pub config: serde_json::Value,
    pub ranks: Vec<usize>,
    /// One accuracy table per run.
    pub per_run: Vec<AccuracyTable>,
    pub mean: AccuracyTable,
    pub std: AccuracyTable,
    /// Manifest file names, one per run, relative to the manifest dir.
    pub manifests: Vec<String>,
}

impl EvalReport {
    /// CSV rows `condition,rank,mean,std` matching the mean/std tables.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("condition,rank,mean,std\n");
        for (cond, by_k) in &self.mean {
            for (k, m) in by_k {
                let s = self.std[cond][k];
                out.push_str(&format!("{cond},{k},{m},{s}\n"));
            }
        }
        out
    }
}

fn embed_video<T: Scalar, M: GaitModel<T>>(
    model: &M,
    detector: Option<&DetectorNetwork<T>>,
    video: &SilhouetteVideo,
) -> Result<ndarray::Array2<f32>, EvalError> {
    let needs = model.beta_requirements();
    let beta = match detector {
        Some(det) if needs.0 || needs.1 => compute_beta(det, video, needs)?,
        _ => {
            if needs.0 || needs.1 {
                return Err(EvalError::ProtocolInvariant(
                    "model requires beta but no detector was provided".into(),
                ));
            }
            Beta::none()
        }
    };
    let sig = model.forward(&video_to_clip(video), &beta)?;
    Ok(sig.mapv(|v| v.to_f64_prim() as f32))
}

fn retrieval_hits(
    probe_sigs: &[ndarray::Array2<f32>],
    probe_subjects: &[String],
    gallery_sigs: &[ndarray::Array2<f32>],
    gallery_subjects: &[String],
    k: usize,
    part_averaged: bool,
) -> Result<Vec<bool>, EvalError> {
    if part_averaged {
        rank_retrieval_part_averaged(probe_sigs, probe_subjects, gallery_sigs, gallery_subjects, k)
    } else {
        let flat = |sigs: &[ndarray::Array2<f32>]| -> Vec<Vec<f32>> {
            sigs.iter().map(|s| s.iter().copied().collect()).collect()
        };
        rank_retrieval(
            &flat(probe_sigs),
            probe_subjects,
            &flat(gallery_sigs),
            gallery_subjects,
            k,
        )
    }
}

fn windowed<'a>(
    video: &'a SilhouetteVideo,
    entry: &ProtocolEntry,
) -> Result<SilhouetteVideo, EvalError> {
    match (entry.start, entry.end) {
        (None, None) => Ok(video.clone()),
        (s, e) => {
            let s = s.unwrap_or(0);
            let e = e.unwrap_or(video.frames.len());
            if s >= e || e > video.frames.len() {
                return Err(EvalError::ProtocolInvariant(format!(
                    "window {s}..{e} invalid for {} frames of {}",
                    video.frames.len(),
                    entry.video_id
                )));
            }
            Ok(video.with_frames(video.frames[s..e].to_vec()))
        }
    }
}

fn sample_run_specs(
    protocol: &EvalProtocol,
    run_seed: u64,
) -> Result<Vec<(String, OcclusionSpec)>, EvalError> {
    let mut specs = Vec::new();
    for e in &protocol.gallery {
        let spec = if protocol.probe_only {
            OcclusionSpec::none()
        } else {
            occlusion::sample_spec(
                &protocol.gallery_occlusion_classes,
                seed::mix_str(run_seed, &format!("gallery/{}", e.video_id)),
            )?
        };
        specs.push((e.video_id.clone(), spec));
    }
    for e in &protocol.probes {
        let s = seed::mix_str(run_seed, &format!("probe/{}", e.video_id));
        let spec = if protocol.dynamic_probes {
            occlusion::sample_dynamic_spec(s)
        } else {
            occlusion::sample_spec(&protocol.probe_occlusion_classes, s)?
        };
        specs.push((e.video_id.clone(), spec));
    }
    Ok(specs)
}

fn accuracy_tables(
    hits_per_k: &BTreeMap<usize, Vec<bool>>,
    probes: &[ProtocolEntry],
) -> AccuracyTable {
    let mut table: AccuracyTable = BTreeMap::new();
    let mut conditions: BTreeSet<String> = probes.iter().map(|p| p.condition.clone()).collect();
    conditions.insert("all".to_string());
    for cond in conditions {
        let idx: Vec<usize> = probes
            .iter()
            .enumerate()
            .filter(|(_, p)| cond == "all" || p.condition == cond)
            .map(|(i, _)| i)
            .collect();
        let mut by_k = BTreeMap::new();
        for (k, hits) in hits_per_k {
            let n = idx.len().max(1);
            let h = idx.iter().filter(|&&i| hits[i]).count();
            by_k.insert(k.to_string(), h as f64 / n as f64);
        }
        table.insert(cond, by_k);
    }
    table
}

/// Run the full protocol: `num_runs` repetitions with fresh occlusions
/// (seed = rng_seed + r), full-length videos, per-run manifests persisted
/// to `manifest_dir` or replayed from `replay_dir`.
pub fn run_protocol<T: Scalar, M: GaitModel<T>>(
    model: &M,
    detector: Option<&DetectorNetwork<T>>,
    videos: &[SilhouetteVideo],
    protocol: &EvalProtocol,
    manifest_dir: Option<&Path>,
    replay_dir: Option<&Path>,
) -> Result<EvalReport, EvalError> {
    protocol.validate()?;
    let by_id: BTreeMap<String, &SilhouetteVideo> = videos
        .iter()
        .map(|v| (occlusion::video_key(v), v))
        .collect();
    for e in protocol.gallery.iter().chain(protocol.probes.iter()) {
        if !by_id.contains_key(&e.video_id) {
            return Err(EvalError::MissingVideo(e.video_id.clone()));
        }
    }
    if let Some(dir) = manifest_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut per_run = Vec::new();
    let mut manifests = Vec::new();
    let probe_subjects: Vec<String> =
        protocol.probes.iter().map(|e| e.subject_id.clone()).collect();
    let gallery_subjects: Vec<String> =
        protocol.gallery.iter().map(|e| e.subject_id.clone()).collect();
    for r in 0..protocol.num_runs {
        let run_seed = protocol.rng_seed + r as u64;
        let manifest_name = format!("run_{r:03}.csv");
        let specs: Vec<(String, OcclusionSpec)> = match replay_dir {
            Some(dir) => {
                let f = std::fs::File::open(dir.join(&manifest_name))?;
                occlusion::read_manifest(f)?
            }
            None => sample_run_specs(protocol, run_seed)?,
        };
        // gallery specs come first, probes after, in protocol order
        let mut spec_iter = specs.iter();
        let mut gallery_sigs = Vec::new();
        for e in &protocol.gallery {
            let (id, spec) = spec_iter.next().ok_or_else(|| {
                EvalError::ProtocolInvariant("manifest shorter than protocol".into())
            })?;
            debug_assert_eq!(id, &e.video_id);
            let video = windowed(by_id[&e.video_id], e)?;
            let occluded = occlusion::apply(&video, spec)?;
            gallery_sigs.push(embed_video(model, detector, &occluded)?);
        }
        let mut probe_sigs = Vec::new();
        for e in &protocol.probes {
            let (id, spec) = spec_iter.next().ok_or_else(|| {
                EvalError::ProtocolInvariant("manifest shorter than protocol".into())
            })?;
            debug_assert_eq!(id, &e.video_id);
            let video = windowed(by_id[&e.video_id], e)?;
            let occluded = occlusion::apply(&video, spec)?;
            probe_sigs.push(embed_video(model, detector, &occluded)?);
        }
        let mut hits_per_k = BTreeMap::new();
        for &k in &protocol.ranks {
            let hits = retrieval_hits(
                &probe_sigs,
                &probe_subjects,
                &gallery_sigs,
                &gallery_subjects,
                k,
                protocol.part_averaged,
            )?;
            hits_per_k.insert(k, hits);
        }
        per_run.push(accuracy_tables(&hits_per_k, &protocol.probes));
        if let Some(dir) = manifest_dir {
            let f = std::fs::File::create(dir.join(&manifest_name))?;
            occlusion::write_manifest(f, &specs)?;
        }
        manifests.push(manifest_name);
    }
    let (mean, std) = aggregate(&per_run);
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: serde_json::to_value(protocol)?,
        ranks: protocol.ranks.clone(),
        per_run,
        mean,
        std,
        manifests,
    })
}

/// Mean and population standard deviation over runs, per (condition, K).
pub fn aggregate(per_run: &[AccuracyTable]) -> (AccuracyTable, AccuracyTable) {
    let mut mean: AccuracyTable = BTreeMap::new();
    let mut std: AccuracyTable = BTreeMap::new();
    if per_run.is_empty() {
        return (mean, std);
    }
    for cond in per_run[0].keys() {
        let mut m_k = BTreeMap::new();
        let mut s_k = BTreeMap::new();
        for k in per_run[0][cond].keys() {
            let vals: Vec<f64> = per_run.iter().map(|t| t[cond][k]).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
            m_k.insert(k.clone(), m);
            s_k.insert(k.clone(), var.sqrt());
        }
        mean.insert(cond.clone(), m_k);
        std.insert(cond.clone(), s_k);
    }
    (mean, std)
}

/// One run_protocol per class subset, with probe and gallery occlusions
/// restricted to that subset and manifests kept in disjoint subdirs.
pub fn sliced_eval<T: Scalar, M: GaitModel<T>>(
    model: &M,
    detector: Option<&DetectorNetwork<T>>,
    videos: &[SilhouetteVideo],
    base: &EvalProtocol,
    class_subsets: &[BTreeSet<u8>],
    manifest_dir: Option<&Path>,
) -> Result<Vec<(BTreeSet<u8>, EvalReport)>, EvalError> {
    let mut rows = Vec::new();
    for (i, subset) in class_subsets.iter().enumerate() {
        let mut protocol = base.clone();
        protocol.gallery_occlusion_classes = subset.clone();
        protocol.probe_occlusion_classes = subset.clone();
        let sub_dir = manifest_dir.map(|d| d.join(format!("slice_{i}")));
        let report = run_protocol(
            model,
            detector,
            videos,
            &protocol,
            sub_dir.as_deref(),
            None,
        )?;
        rows.push((subset.clone(), report));
    }
    Ok(rows)
}

/// Cross-occlusion protocol: gallery occluded with the corner classes
/// (1-4), probes with {5,6} and {7,8} in two separate runs.
pub fn cross_occlusion_eval<T: Scalar, M: GaitModel<T>>(
    model: &M,
    detector: Option<&DetectorNetwork<T>>,
    videos: &[SilhouetteVideo],
    base: &EvalProtocol,
    manifest_dir: Option<&Path>,
) -> Result<Vec<(BTreeSet<u8>, BTreeSet<u8>, EvalReport)>, EvalError> {
    let gallery_classes: BTreeSet<u8> = (1..=4).collect();
    let probe_sets: [BTreeSet<u8>; 2] = [(5..=6).collect(), (7..=8).collect()];
    let mut rows = Vec::new();
    for (i, probe_classes) in probe_sets.iter().enumerate() {
        let mut protocol = base.clone();
        protocol.gallery_occlusion_classes = gallery_classes.clone();
        protocol.probe_occlusion_classes = probe_classes.clone();
        let sub_dir = manifest_dir.map(|d| d.join(format!("cross_{i}")));
        let report = run_protocol(
            model,
            detector,
            videos,
            &protocol,
            sub_dir.as_deref(),
            None,
        )?;
        rows.push((gallery_classes.clone(), probe_classes.clone(), report));
    }
    Ok(rows)
}

/// Classification accuracy of a detector over labelled samples.
pub fn detector_accuracy<T: Scalar>(
    det: &DetectorNetwork<T>,
    samples: &[DetectorSample],
) -> Result<f64, EvalError> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for (frame, label) in samples {
        let (_, logits) = det.forward_frame(frame)?;
        let mut best = 0;
        for i in 1..logits.len() {
            if logits[i] > logits[best] {
                best = i;
            }
        }
        if best == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Train one detector per domain and evaluate each on both held-out sets.
/// Returns accuracies indexed `[train_domain][test_domain]`.
pub fn detector_cross_domain<T: Scalar>(
    domain_a: (&[DetectorSample], &[DetectorSample]),
    domain_b: (&[DetectorSample], &[DetectorSample]),
    det_config: &DetectorConfig,
    train_config: &DetectorTrainConfig,
) -> Result<[[f64; 2]; 2], EvalError> {
    let mut matrix = [[0.0; 2]; 2];
    for (row, (train, _)) in [domain_a, domain_b].into_iter().enumerate() {
        let mut det = DetectorNetwork::<T>::new(
            det_config.clone(),
            seed::mix(train_config.rng_seed, row as u64),
        );
        crate::detector::train_detector(&mut det, train, train_config)?;
        matrix[row][0] = detector_accuracy(&det, domain_a.1)?;
        matrix[row][1] = detector_accuracy(&det, domain_b.1)?;
    }
    Ok(matrix)
}
