//! Procedural silhouette-walker generator.
//!
//! Real occluded gait datasets are restricted, so desk-scale experiments
//! run on articulated 2-D stick walkers: a torso, head disc, two
//! two-segment legs and arms, animated by sinusoidal joint angles. Each
//! subject's limb proportions and gait parameters carry its identity.
//! Seeding is layered (dataset seed -> subject seed -> sequence seed) so
//! any sequence is reproducible in isolation.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_model::{normalize_frame, resize_nearest, DataError, SilhouetteVideo};
use crate::seed;

/// Raw rasterization canvas side; frames are normalized to 64x64 on load.
pub const CANVAS: usize = 128;
const BODY_HEIGHT: f64 = 80.0;

pub const GENERATOR_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WalkerError {
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("png encode: {0}")]
    Png(#[from] image::ImageError),
    #[error("metadata: {0}")]
    Json(#[from] serde_json::Error),
    #[error("all counts must be >= 1")]
    BadCounts,
}

/// Two generator parameter regimes, standing in for two capture domains
/// in cross-domain detector evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum WalkerRegime {
    /// Lean, fast walkers.
    #[default]
    A,
    /// Stockier, slower walkers with wider torsos.
    B,
}

/// Per-subject body proportions and gait dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkerParams {
    pub subject_id: String,
    /// [thigh, shin, upper_arm, forearm] as fractions of body height.
    pub limb_length_ratios: [f64; 4],
    pub torso_width_ratio: f64,
    /// Cycles per frame.
    pub stride_frequency: f64,
    /// Peak hip swing, radians.
    pub stride_amplitude: f64,
    /// Peak shoulder swing, radians.
    pub arm_swing_amplitude: f64,
    pub phase_offset: f64,
    pub head_radius_ratio: f64,
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + rng.gen::<f64>() * (hi - lo)
}

/// Draw a subject's parameters from the regime's documented uniform ranges.
pub fn sample_subject_in(regime: WalkerRegime, rng_seed: u64) -> WalkerParams {
    let mut rng = seed::rng(rng_seed);
    let r = |rng: &mut rand_chacha::ChaCha8Rng, a: (f64, f64), b: (f64, f64)| match regime {
        WalkerRegime::A => uniform(rng, a.0, a.1),
        WalkerRegime::B => uniform(rng, b.0, b.1),
    };
    WalkerParams {
        subject_id: format!("subj_{rng_seed:08x}"),
        limb_length_ratios: [
            r(&mut rng, (0.24, 0.32), (0.18, 0.26)),
            r(&mut rng, (0.22, 0.30), (0.17, 0.24)),
            r(&mut rng, (0.16, 0.24), (0.13, 0.20)),
            r(&mut rng, (0.14, 0.22), (0.11, 0.18)),
        ],
        torso_width_ratio: r(&mut rng, (0.10, 0.17), (0.17, 0.26)),
        stride_frequency: r(&mut rng, (0.03, 0.08), (0.02, 0.05)),
        stride_amplitude: r(&mut rng, (0.35, 0.70), (0.20, 0.50)),
        arm_swing_amplitude: r(&mut rng, (0.25, 0.60), (0.15, 0.45)),
        phase_offset: uniform(&mut rng, 0.0, 2.0 * PI),
        head_radius_ratio: r(&mut rng, (0.055, 0.085), (0.080, 0.120)),
    }
}

/// Regime-A subject sampling; deterministic per seed.
pub fn sample_subject(rng_seed: u64) -> WalkerParams {
    sample_subject_in(WalkerRegime::A, rng_seed)
}

fn draw_segment(canvas: &mut Array2<u8>, p1: (f64, f64), p2: (f64, f64), half_width: f64) {
    let (x1, y1) = p1;
    let (x2, y2) = p2;
    let pad = half_width + 1.0;
    let xmin = (x1.min(x2) - pad).floor().max(0.0) as usize;
    let xmax = (x1.max(x2) + pad).ceil().min((CANVAS - 1) as f64) as usize;
    let ymin = (y1.min(y2) - pad).floor().max(0.0) as usize;
    let ymax = (y1.max(y2) + pad).ceil().min((CANVAS - 1) as f64) as usize;
    let dx = x2 - x1;
    let dy = y2 - y1;
    let len2 = dx * dx + dy * dy;
    for y in ymin..=ymax {
        for x in xmin..=xmax {
            let (px, py) = (x as f64, y as f64);
            let t = if len2 > 0.0 {
                (((px - x1) * dx + (py - y1) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (cx, cy) = (x1 + t * dx, y1 + t * dy);
            let d2 = (px - cx).powi(2) + (py - cy).powi(2);
            if d2 <= half_width * half_width {
                canvas[[y, x]] = 1;
            }
        }
    }
}

fn draw_disc(canvas: &mut Array2<u8>, center: (f64, f64), radius: f64) {
    draw_segment(canvas, center, center, radius);
}

/// Rasterize one raw frame of the walker at time `t` (in frames).
/// `phase_shift` offsets the gait cycle; rendering is otherwise a pure
/// function of the parameters.
pub fn render_raw_frame(params: &WalkerParams, t: f64, phase_shift: f64) -> Array2<u8> {
    let mut canvas = Array2::zeros((CANVAS, CANVAS));
    let phi = 2.0 * PI * params.stride_frequency * t + params.phase_offset + phase_shift;

    let h = BODY_HEIGHT;
    let [thigh, shin, upper_arm, forearm] = params.limb_length_ratios.map(|r| r * h);
    let torso_len = 0.32 * h;
    let torso_w = params.torso_width_ratio * h;
    let head_r = params.head_radius_ratio * h;
    let leg_w = (torso_w * 0.32).max(2.0);
    let arm_w = (torso_w * 0.24).max(1.6);

    let hip = (CANVAS as f64 / 2.0, 58.0 + 1.5 * (2.0 * phi).cos());
    let shoulder = (hip.0, hip.1 - torso_len);
    let head_c = (hip.0, shoulder.1 - 2.0 - head_r);

    draw_segment(&mut canvas, hip, shoulder, torso_w / 2.0);
    draw_disc(&mut canvas, head_c, head_r);

    // angles measured from straight down, positive toward +x
    let dir = |origin: (f64, f64), angle: f64, len: f64| {
        (origin.0 + len * angle.sin(), origin.1 + len * angle.cos())
    };
    for (side_phase, side_dx) in [(0.0, -1.5), (PI, 1.5)] {
        let leg_phi = phi + side_phase;
        let hip_angle = params.stride_amplitude * leg_phi.sin();
        let knee_flex = 0.6 * params.stride_amplitude * (leg_phi + 0.9).sin().max(0.0);
        let hip_pt = (hip.0 + side_dx, hip.1);
        let knee = dir(hip_pt, hip_angle, thigh);
        let foot = dir(knee, hip_angle - knee_flex, shin);
        draw_segment(&mut canvas, hip_pt, knee, leg_w / 2.0);
        draw_segment(&mut canvas, knee, foot, leg_w / 2.0);

        // arms swing opposite to the same-side leg
        let arm_angle = params.arm_swing_amplitude * (leg_phi + PI).sin();
        let shoulder_pt = (shoulder.0 + side_dx, shoulder.1 + 2.0);
        let elbow = dir(shoulder_pt, arm_angle, upper_arm);
        let hand = dir(elbow, arm_angle + 0.45, forearm);
        draw_segment(&mut canvas, shoulder_pt, elbow, arm_w / 2.0);
        draw_segment(&mut canvas, elbow, hand, arm_w / 2.0);
    }
    canvas
}

/// Rasterize `num_frames` raw frames; the sequence seed only shifts the
/// gait phase so sequences of one subject differ while staying periodic.
pub fn render_raw_sequence(
    params: &WalkerParams,
    num_frames: usize,
    rng_seed: u64,
) -> Vec<Array2<u8>> {
    let phase_shift = uniform(&mut seed::rng(rng_seed), 0.0, 2.0 * PI);
    (0..num_frames)
        .map(|t| render_raw_frame(params, t as f64, phase_shift))
        .collect()
}

/// Render and normalize a full sequence into a [`SilhouetteVideo`].
pub fn render_sequence(
    params: &WalkerParams,
    num_frames: usize,
    rng_seed: u64,
) -> Result<SilhouetteVideo, WalkerError> {
    let frames = render_raw_sequence(params, num_frames, rng_seed)
        .iter()
        .map(normalize_frame)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SilhouetteVideo::new(
        frames,
        params.subject_id.clone(),
        format!("seq_{rng_seed:08x}"),
    )?)
}

/// Per-sequence camera jitter: integer translation up to 3 px and scale in
/// [0.9, 1.1], both attenuated by `noise` in [0, 1].
fn apply_jitter(raw: &Array2<u8>, noise: f64, rng_seed: u64) -> Array2<u8> {
    if noise <= 0.0 {
        return raw.clone();
    }
    let mut rng = seed::rng(rng_seed);
    let scale = 1.0 + uniform(&mut rng, -0.1, 0.1) * noise;
    let max_t = (3.0 * noise).round() as i64;
    let (dx, dy) = if max_t > 0 {
        (rng.gen_range(-max_t..=max_t), rng.gen_range(-max_t..=max_t))
    } else {
        (0, 0)
    };
    let side = ((CANVAS as f64 * scale).round() as usize).max(1);
    let scaled = resize_nearest(raw, side, side);
    let mut out = Array2::zeros((CANVAS, CANVAS));
    let off = (CANVAS as i64 - side as i64) / 2;
    for r in 0..side {
        for c in 0..side {
            let rr = r as i64 + off + dy;
            let cc = c as i64 + off + dx;
            if (0..CANVAS as i64).contains(&rr) && (0..CANVAS as i64).contains(&cc) {
                out[[rr as usize, cc as usize]] = scaled[[r, c]];
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectMeta {
    pub subject_id: String,
    pub seed: u64,
    pub gallery_sequences: Vec<String>,
    pub probe_sequences: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator_version: u32,
    pub rng_seed: u64,
    pub regime: WalkerRegime,
    pub num_subjects: usize,
    pub seqs_per_subject: usize,
    pub frames_per_seq: usize,
    pub condition_noise: f64,
    pub subjects: Vec<SubjectMeta>,
}

impl DatasetMeta {
    pub fn load(root: &Path) -> Result<Self, WalkerError> {
        let path = root.join("metadata.json");
        let text = std::fs::read_to_string(&path).map_err(|e| WalkerError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn write_png(path: &Path, mask: &Array2<u8>) -> Result<(), WalkerError> {
    let (h, w) = mask.dim();
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for (x, y, p) in img.enumerate_pixels_mut() {
        p.0[0] = mask[[y as usize, x as usize]] * 255;
    }
    img.save(path)?;
    Ok(())
}

/// Generate a dataset tree `root/<subject>/<sequence>/<frame>.png` with a
/// `metadata.json` alongside. Sequence 0 of each subject is assigned to
/// the gallery split, the rest to the probe split.
pub fn build_dataset(
    root: &Path,
    regime: WalkerRegime,
    num_subjects: usize,
    seqs_per_subject: usize,
    frames_per_seq: usize,
    condition_noise: f64,
    rng_seed: u64,
) -> Result<DatasetMeta, WalkerError> {
    if num_subjects == 0 || seqs_per_subject == 0 || frames_per_seq == 0 {
        return Err(WalkerError::BadCounts);
    }
    let io_err = |path: &Path, e: std::io::Error| WalkerError::Io {
        path: path.display().to_string(),
        source: e,
    };
    std::fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
    let mut subjects = Vec::with_capacity(num_subjects);
    for si in 0..num_subjects {
        let subject_seed = seed::mix(rng_seed, si as u64);
        let mut params = sample_subject_in(regime, subject_seed);
        params.subject_id = format!("subj_{si:03}");
        let mut gallery = Vec::new();
        let mut probe = Vec::new();
        for qi in 0..seqs_per_subject {
            let seq_seed = seed::mix(subject_seed, qi as u64);
            let seq_id = format!("seq_{qi:02}");
            let dir = root.join(&params.subject_id).join(&seq_id);
            std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
            let raw = render_raw_sequence(&params, frames_per_seq, seq_seed);
            for (fi, frame) in raw.iter().enumerate() {
                let jittered =
                    apply_jitter(frame, condition_noise, seed::mix(seq_seed, 0x0F_0000 + fi as u64));
                write_png(&dir.join(format!("{fi:04}.png")), &jittered)?;
            }
            if qi == 0 {
                gallery.push(seq_id);
            } else {
                probe.push(seq_id);
            }
        }
        subjects.push(SubjectMeta {
            subject_id: params.subject_id,
            seed: subject_seed,
            gallery_sequences: gallery,
            probe_sequences: probe,
        });
    }
    let meta = DatasetMeta {
        generator_version: GENERATOR_VERSION,
        rng_seed,
        regime,
        num_subjects,
        seqs_per_subject,
        frames_per_seq,
        condition_noise,
        subjects,
    };
    let path = root.join("metadata.json");
    std::fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| io_err(&path, e))?;
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::video_pixel_sum;

    #[test]
    fn sample_subject_is_deterministic_and_in_range() {
        let a = sample_subject(0);
        let b = sample_subject(0);
        assert_eq!(a, b);
        for r in a.limb_length_ratios {
            assert!(r > 0.0 && r < 1.0);
        }
        assert!((0.02..=0.08).contains(&a.stride_frequency));
        assert!(a.torso_width_ratio > 0.0 && a.torso_width_ratio < 1.0);
        assert!(a.head_radius_ratio > 0.0 && a.head_radius_ratio < 1.0);
    }

    #[test]
    fn distinct_seeds_give_distinct_params() {
        // collision scan over many seed pairs
        let mut seen = std::collections::HashSet::new();
        for s in 0..10_000u64 {
            let p = sample_subject(s);
            let key = format!("{:?}{:?}", p.limb_length_ratios, p.stride_frequency);
            assert!(seen.insert(key), "params collision at seed {s}");
        }
    }

    #[test]
    fn single_frame_render_is_valid() {
        let p = sample_subject(3);
        let v = render_sequence(&p, 1, 0).unwrap();
        assert_eq!(v.num_frames(), 1);
        assert!(video_pixel_sum(&v) > 0);
    }

    #[test]
    fn render_is_deterministic() {
        let p = sample_subject(5);
        let a = render_sequence(&p, 8, 11).unwrap();
        let b = render_sequence(&p, 8, 11).unwrap();
        assert_eq!(a, b);
        let c = render_sequence(&p, 8, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gait_cycle_is_periodic() {
        let mut p = sample_subject(7);
        p.stride_frequency = 0.05; // period of exactly 20 frames
        let v = render_sequence(&p, 45, 2).unwrap();
        let period = (1.0 / p.stride_frequency).round() as usize;
        for t in [0usize, 5, 20] {
            let a = v.frames[t].pixels();
            let b = v.frames[t + period].pixels();
            let mut inter = 0.0;
            let mut union = 0.0;
            for (x, y) in a.iter().zip(b.iter()) {
                if *x == 1 && *y == 1 {
                    inter += 1.0;
                }
                if *x == 1 || *y == 1 {
                    union += 1.0;
                }
            }
            assert!(inter / union >= 0.95, "IoU {} at t={t}", inter / union);
        }
    }

    #[test]
    fn build_dataset_writes_expected_tree() {
        let dir = tempfile::tempdir().unwrap();
        let meta = build_dataset(dir.path(), WalkerRegime::A, 1, 1, 5, 0.0, 9).unwrap();
        assert_eq!(meta.subjects.len(), 1);
        let seq_dir = dir.path().join("subj_000/seq_00");
        let pngs: Vec<_> = std::fs::read_dir(&seq_dir).unwrap().collect();
        assert_eq!(pngs.len(), 5);
        assert!(dir.path().join("metadata.json").exists());
        assert!(matches!(
            build_dataset(dir.path(), WalkerRegime::A, 0, 1, 1, 0.0, 9),
            Err(WalkerError::BadCounts)
        ));
    }

    #[test]
    fn rebuild_is_byte_identical() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        for d in [&d1, &d2] {
            build_dataset(d.path(), WalkerRegime::A, 2, 2, 4, 0.5, 123).unwrap();
        }
        let hash_tree = |root: &Path| -> Vec<(String, Vec<u8>)> {
            let mut files = Vec::new();
            let mut stack = vec![root.to_path_buf()];
            while let Some(p) = stack.pop() {
                for e in std::fs::read_dir(&p).unwrap() {
                    let path = e.unwrap().path();
                    if path.is_dir() {
                        stack.push(path);
                    } else {
                        let rel = path.strip_prefix(root).unwrap().display().to_string();
                        files.push((rel, std::fs::read(&path).unwrap()));
                    }
                }
            }
            files.sort();
            files
        };
        assert_eq!(hash_tree(d1.path()), hash_tree(d2.path()));
    }

    #[test]
    fn dataset_loads_back_and_counts_match() {
        let dir = tempfile::tempdir().unwrap();
        build_dataset(dir.path(), WalkerRegime::A, 3, 2, 4, 0.3, 5).unwrap();
        let videos = crate::data_model::load_dataset(dir.path()).unwrap();
        assert_eq!(videos.len(), 6);
        let subjects: std::collections::HashSet<_> =
            videos.iter().map(|v| v.subject_id.clone()).collect();
        assert_eq!(subjects.len(), 3);
        for v in &videos {
            assert_eq!(v.num_frames(), 4);
        }
    }

    #[test]
    fn mean_silhouette_nearest_neighbor_beats_chance() {
        // identity signal: rank-1 nearest-neighbor on mean silhouettes over
        // 10 subjects must beat the 10% chance level
        let num_subjects = 10;
        let mean_image = |v: &SilhouetteVideo| -> Vec<f64> {
            let mut acc = vec![0.0; 64 * 64];
            for f in &v.frames {
                for (i, &p) in f.pixels().iter().enumerate() {
                    acc[i] += p as f64;
                }
            }
            acc.iter().map(|x| x / v.num_frames() as f64).collect()
        };
        let mut gallery = Vec::new();
        let mut probes = Vec::new();
        for s in 0..num_subjects {
            let subject_seed = seed::mix(99, s as u64);
            let p = sample_subject(subject_seed);
            gallery.push(mean_image(
                &render_sequence(&p, 30, seed::mix(subject_seed, 0)).unwrap(),
            ));
            probes.push(mean_image(
                &render_sequence(&p, 30, seed::mix(subject_seed, 1)).unwrap(),
            ));
        }
        let mut hits = 0;
        for (i, probe) in probes.iter().enumerate() {
            let nearest = gallery
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    let da: f64 = a.iter().zip(probe).map(|(x, y)| (x - y).powi(2)).sum();
                    let db: f64 = b.iter().zip(probe).map(|(x, y)| (x - y).powi(2)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap()
                .0;
            if nearest == i {
                hits += 1;
            }
        }
        assert!(
            hits as f64 / num_subjects as f64 > 0.10,
            "rank-1 {hits}/{num_subjects} not above chance"
        );
    }
}
