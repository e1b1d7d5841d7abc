//! Deterministic, replayable synthetic occlusion transforms.
//!
//! Nine consistent classes (0 = none, 1-4 corner patches, 5-6 top/bottom
//! removal with rescale, 7-8 left/right half removal) plus dynamic moving
//! patches. Every applied occlusion is fully described by an
//! [`OcclusionSpec`], and a CSV manifest of specs reproduces outputs
//! bit-exactly.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_model::{resize_nearest, SilhouetteFrame, SilhouetteVideo, FRAME_SIZE};
use crate::seed;

/// Occlusion ratio range R for classes 1-6.
pub const RATIO_RANGE: (f64, f64) = (0.20, 0.50);
/// Side ratio range R_ds for small dynamic rectangles.
pub const SMALL_RECT_RANGE: (f64, f64) = (0.3, 0.5);
/// Width ratio range R_dt for tall dynamic rectangles.
pub const TALL_RECT_WIDTH_RANGE: (f64, f64) = (0.2, 0.4);
/// Velocity range R_v in pixels per frame.
pub const VELOCITY_RANGE: (f64, f64) = (0.5, 1.0);

/// Number of consistent occlusion classes including "none".
pub const NUM_CLASSES: usize = 9;

#[derive(Debug, Error)]
pub enum OcclusionError {
    #[error("allowed class set is empty")]
    EmptyClassSet,
    #[error("invalid occlusion class id {0}, expected 0-8")]
    InvalidClass(u8),
    #[error("bad spec: {0}")]
    BadSpec(String),
    #[error("manifest misses video {0}")]
    MissingVideo(String),
    #[error("duplicate manifest entry for video {0}")]
    DuplicateEntry(String),
    #[error("manifest io: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("manifest field {field}: {value:?} cannot be parsed")]
    BadField { field: &'static str, value: String },
}

/// Consistent occlusion class ids as laid out in the nine-class labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum OcclusionClass {
    None = 0,
    CornerTopLeft = 1,
    CornerTopRight = 2,
    CornerBottomLeft = 3,
    CornerBottomRight = 4,
    TopRemoval = 5,
    BottomRemoval = 6,
    LeftHalf = 7,
    RightHalf = 8,
}

impl OcclusionClass {
    pub fn from_id(id: u8) -> Result<Self, OcclusionError> {
        use OcclusionClass::*;
        Ok(match id {
            0 => None,
            1 => CornerTopLeft,
            2 => CornerTopRight,
            3 => CornerBottomLeft,
            4 => CornerBottomRight,
            5 => TopRemoval,
            6 => BottomRemoval,
            7 => LeftHalf,
            8 => RightHalf,
            other => return Err(OcclusionError::InvalidClass(other)),
        })
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    /// Legal ratio range for this class; `None` when the ratio is unused
    /// (class 0) and a degenerate range for the fixed-half classes 7-8.
    pub fn ratio_range(self) -> Option<(f64, f64)> {
        use OcclusionClass::*;
        match self {
            None => Option::None,
            CornerTopLeft | CornerTopRight | CornerBottomLeft | CornerBottomRight
            | TopRemoval | BottomRemoval => Some(RATIO_RANGE),
            LeftHalf | RightHalf => Some((0.5, 0.5)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatchShape {
    SmallRect,
    TallRect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    LeftToRight,
    RightToLeft,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::LeftToRight => 1.0,
            Direction::RightToLeft => -1.0,
        }
    }
}

/// A moving black patch with constant velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicPatchSpec {
    pub shape: PatchShape,
    pub height_ratio: f64,
    pub width_ratio: f64,
    /// Pixels per frame.
    pub velocity: f64,
    pub direction: Direction,
    /// X position of the patch's left edge at frame 0; may start off-frame.
    pub initial_x: i32,
}

/// Fully deterministic description of one applied occlusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionSpec {
    pub class: OcclusionClass,
    pub ratio: f64,
    pub dynamic: Option<DynamicPatchSpec>,
    pub rng_seed: u64,
}

impl OcclusionSpec {
    pub fn none() -> Self {
        Self {
            class: OcclusionClass::None,
            ratio: 0.0,
            dynamic: None,
            rng_seed: 0,
        }
    }
}

fn uniform(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    range.0 + rng.gen::<f64>() * (range.1 - range.0)
}

/// Sample a consistent occlusion spec: class uniform over `allowed_classes`,
/// ratio uniform over the class's legal range. Deterministic per seed.
pub fn sample_spec(
    allowed_classes: &BTreeSet<u8>,
    rng_seed: u64,
) -> Result<OcclusionSpec, OcclusionError> {
    if allowed_classes.is_empty() {
        return Err(OcclusionError::EmptyClassSet);
    }
    let classes: Vec<OcclusionClass> = allowed_classes
        .iter()
        .map(|&id| OcclusionClass::from_id(id))
        .collect::<Result<_, _>>()?;
    let mut rng = seed::rng(rng_seed);
    let class = classes[rng.gen_range(0..classes.len())];
    let ratio = match class.ratio_range() {
        Some((lo, hi)) if lo == hi => lo,
        Some(range) => uniform(&mut rng, range),
        None => 0.0,
    };
    Ok(OcclusionSpec {
        class,
        ratio,
        dynamic: None,
        rng_seed,
    })
}

/// Sample a dynamic moving-patch spec (used only as unseen occlusions at
/// evaluation time; it carries no consistent class).
pub fn sample_dynamic_spec(rng_seed: u64) -> OcclusionSpec {
    let mut rng = seed::rng(rng_seed);
    let shape = if rng.gen::<bool>() {
        PatchShape::SmallRect
    } else {
        PatchShape::TallRect
    };
    let (height_ratio, width_ratio) = match shape {
        PatchShape::SmallRect => (
            uniform(&mut rng, SMALL_RECT_RANGE),
            uniform(&mut rng, SMALL_RECT_RANGE),
        ),
        PatchShape::TallRect => (1.0, uniform(&mut rng, TALL_RECT_WIDTH_RANGE)),
    };
    let velocity = uniform(&mut rng, VELOCITY_RANGE);
    let direction = if rng.gen::<bool>() {
        Direction::LeftToRight
    } else {
        Direction::RightToLeft
    };
    let patch_w = ratio_to_pixels(width_ratio) as i32;
    // patches may start off-frame and enter or exit during the video
    let initial_x = rng.gen_range(-patch_w..=FRAME_SIZE as i32);
    OcclusionSpec {
        class: OcclusionClass::None,
        ratio: 0.0,
        dynamic: Some(DynamicPatchSpec {
            shape,
            height_ratio,
            width_ratio,
            velocity,
            direction,
            initial_x,
        }),
        rng_seed,
    }
}

/// Round-half-up conversion from a frame-dimension ratio to pixels.
pub fn ratio_to_pixels(ratio: f64) -> usize {
    (ratio * FRAME_SIZE as f64).round() as usize
}

fn zero_region(pixels: &mut Array2<u8>, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) {
    pixels.slice_mut(s![rows, cols]).fill(0);
}

fn occlude_frame_consistent(frame: &SilhouetteFrame, spec: &OcclusionSpec) -> SilhouetteFrame {
    use OcclusionClass::*;
    let mut px = frame.pixels().clone();
    let n = FRAME_SIZE;
    match spec.class {
        None => {}
        CornerTopLeft | CornerTopRight | CornerBottomLeft | CornerBottomRight => {
            let side = ratio_to_pixels(spec.ratio).min(n);
            let (rows, cols) = match spec.class {
                CornerTopLeft => (0..side, 0..side),
                CornerTopRight => (0..side, n - side..n),
                CornerBottomLeft => (n - side..n, 0..side),
                CornerBottomRight => (n - side..n, n - side..n),
                _ => unreachable!(),
            };
            zero_region(&mut px, rows, cols);
        }
        TopRemoval | BottomRemoval => {
            let k = ratio_to_pixels(spec.ratio).min(n - 1);
            let surviving = match spec.class {
                TopRemoval => px.slice(s![k.., ..]).to_owned(),
                BottomRemoval => px.slice(s![..n - k, ..]).to_owned(),
                _ => unreachable!(),
            };
            // stretch the surviving rows back to full height; columns keep
            // their positions (64 -> 64 is the identity mapping)
            px = resize_nearest(&surviving, n, n);
        }
        LeftHalf => zero_region(&mut px, 0..n, 0..n / 2),
        RightHalf => zero_region(&mut px, 0..n, n / 2..n),
    }
    SilhouetteFrame::from_binary_unchecked(px)
}

/// Apply a consistent occlusion: the same region is zeroed in every frame.
pub fn apply_consistent(
    video: &SilhouetteVideo,
    spec: &OcclusionSpec,
) -> Result<SilhouetteVideo, OcclusionError> {
    if spec.dynamic.is_some() {
        return Err(OcclusionError::BadSpec(
            "apply_consistent called with a dynamic spec".into(),
        ));
    }
    if let Some((lo, hi)) = spec.class.ratio_range() {
        if !(lo..=hi).contains(&spec.ratio) {
            return Err(OcclusionError::BadSpec(format!(
                "ratio {} outside [{lo}, {hi}] for class {}",
                spec.ratio,
                spec.class.id()
            )));
        }
    }
    let frames = video
        .frames
        .iter()
        .map(|f| occlude_frame_consistent(f, spec))
        .collect();
    Ok(video.with_frames(frames))
}

/// Apply a consistent occlusion to a single frame (used when training the
/// detector on individually sampled frames).
pub fn apply_consistent_frame(
    frame: &SilhouetteFrame,
    spec: &OcclusionSpec,
) -> Result<SilhouetteFrame, OcclusionError> {
    if spec.dynamic.is_some() {
        return Err(OcclusionError::BadSpec(
            "apply_consistent_frame called with a dynamic spec".into(),
        ));
    }
    Ok(occlude_frame_consistent(frame, spec))
}

/// Apply a dynamic moving patch. The patch rectangle is intersected with
/// the frame, so a patch may exit the frame and stop occluding.
pub fn apply_dynamic(
    video: &SilhouetteVideo,
    spec: &OcclusionSpec,
) -> Result<SilhouetteVideo, OcclusionError> {
    let dyn_spec = spec.dynamic.ok_or_else(|| {
        OcclusionError::BadSpec("apply_dynamic called without a dynamic spec".into())
    })?;
    let n = FRAME_SIZE;
    let h = match dyn_spec.shape {
        PatchShape::TallRect => n,
        PatchShape::SmallRect => ratio_to_pixels(dyn_spec.height_ratio).min(n),
    };
    let w = ratio_to_pixels(dyn_spec.width_ratio).min(n);
    // the vertical position of a small patch is fixed for the whole video,
    // derived from the spec seed so replays reproduce it
    let y0 = match dyn_spec.shape {
        PatchShape::TallRect => 0usize,
        PatchShape::SmallRect => seed::rng(seed::mix(spec.rng_seed, 0x79)).gen_range(0..=n - h),
    };
    let frames = video
        .frames
        .iter()
        .enumerate()
        .map(|(t, frame)| {
            let x = (dyn_spec.initial_x as f64
                + dyn_spec.direction.sign() * dyn_spec.velocity * t as f64)
                .round() as i64;
            let c0 = x.max(0).min(n as i64) as usize;
            let c1 = (x + w as i64).max(0).min(n as i64) as usize;
            let mut px = frame.pixels().clone();
            if c1 > c0 {
                zero_region(&mut px, y0..y0 + h, c0..c1);
            }
            SilhouetteFrame::from_binary_unchecked(px)
        })
        .collect();
    Ok(video.with_frames(frames))
}

/// Apply whichever transform the spec describes.
pub fn apply(video: &SilhouetteVideo, spec: &OcclusionSpec) -> Result<SilhouetteVideo, OcclusionError> {
    if spec.dynamic.is_some() {
        apply_dynamic(video, spec)
    } else {
        apply_consistent(video, spec)
    }
}

/// Canonical manifest key for a video.
pub fn video_key(video: &SilhouetteVideo) -> String {
    format!("{}/{}", video.subject_id, video.sequence_id)
}

/// Apply a manifest of specs to a batch of videos. The manifest must cover
/// every video exactly once; class labels are returned alongside.
pub fn occlude_batch(
    videos: &[SilhouetteVideo],
    manifest: &[(String, OcclusionSpec)],
) -> Result<Vec<(SilhouetteVideo, u8)>, OcclusionError> {
    let mut by_id = std::collections::HashMap::new();
    for (id, spec) in manifest {
        if by_id.insert(id.as_str(), spec).is_some() {
            return Err(OcclusionError::DuplicateEntry(id.clone()));
        }
    }
    videos
        .iter()
        .map(|v| {
            let key = video_key(v);
            let spec = by_id
                .get(key.as_str())
                .ok_or_else(|| OcclusionError::MissingVideo(key.clone()))?;
            Ok((apply(v, spec)?, spec.class.id()))
        })
        .collect()
}

const MANIFEST_HEADER: &[&str] = &[
    "video_id",
    "class_id",
    "ratio",
    "shape",
    "height_ratio",
    "width_ratio",
    "velocity",
    "direction",
    "initial_x",
    "rng_seed",
];

/// Write a spec manifest as CSV. Dynamic columns stay empty for
/// consistent specs.
pub fn write_manifest<W: Write>(
    out: W,
    manifest: &[(String, OcclusionSpec)],
) -> Result<(), OcclusionError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MANIFEST_HEADER)?;
    for (id, spec) in manifest {
        let (shape, hr, wr, vel, dir, ix) = match &spec.dynamic {
            Some(d) => (
                match d.shape {
                    PatchShape::SmallRect => "small_rect".to_string(),
                    PatchShape::TallRect => "tall_rect".to_string(),
                },
                d.height_ratio.to_string(),
                d.width_ratio.to_string(),
                d.velocity.to_string(),
                match d.direction {
                    Direction::LeftToRight => "left_to_right".to_string(),
                    Direction::RightToLeft => "right_to_left".to_string(),
                },
                d.initial_x.to_string(),
            ),
            None => Default::default(),
        };
        w.write_record([
            id.as_str(),
            &spec.class.id().to_string(),
            &spec.ratio.to_string(),
            &shape,
            &hr,
            &wr,
            &vel,
            &dir,
            &ix,
            &spec.rng_seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(
    field: &'static str,
    value: &str,
) -> Result<T, OcclusionError> {
    value.parse().map_err(|_| OcclusionError::BadField {
        field,
        value: value.to_string(),
    })
}

/// Read a spec manifest written by [`write_manifest`].
pub fn read_manifest<R: Read>(input: R) -> Result<Vec<(String, OcclusionSpec)>, OcclusionError> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for record in rdr.records() {
        let rec = record?;
        let get = |i: usize| rec.get(i).unwrap_or("");
        let dynamic = if get(3).is_empty() {
            None
        } else {
            Some(DynamicPatchSpec {
                shape: match get(3) {
                    "small_rect" => PatchShape::SmallRect,
                    "tall_rect" => PatchShape::TallRect,
                    other => {
                        return Err(OcclusionError::BadField {
                            field: "shape",
                            value: other.to_string(),
                        })
                    }
                },
                height_ratio: parse_field("height_ratio", get(4))?,
                width_ratio: parse_field("width_ratio", get(5))?,
                velocity: parse_field("velocity", get(6))?,
                direction: match get(7) {
                    "left_to_right" => Direction::LeftToRight,
                    "right_to_left" => Direction::RightToLeft,
                    other => {
                        return Err(OcclusionError::BadField {
                            field: "direction",
                            value: other.to_string(),
                        })
                    }
                },
                initial_x: parse_field("initial_x", get(8))?,
            })
        };
        out.push((
            get(0).to_string(),
            OcclusionSpec {
                class: OcclusionClass::from_id(parse_field("class_id", get(1))?)?,
                ratio: parse_field("ratio", get(2))?,
                dynamic,
                rng_seed: parse_field("rng_seed", get(9))?,
            },
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_video(num_frames: usize) -> SilhouetteVideo {
        let frames = (0..num_frames)
            .map(|t| {
                let mut m = Array2::<u8>::zeros((FRAME_SIZE, FRAME_SIZE));
                // a moving blob so frames differ
                let c = 10 + (t % 20);
                m.slice_mut(s![4..60, c..c + 18]).fill(1);
                SilhouetteFrame::from_binary(m).unwrap()
            })
            .collect();
        SilhouetteVideo::new(frames, "s0", "q0").unwrap()
    }

    fn spec_for(class: u8, ratio: f64) -> OcclusionSpec {
        OcclusionSpec {
            class: OcclusionClass::from_id(class).unwrap(),
            ratio,
            dynamic: None,
            rng_seed: 1,
        }
    }

    #[test]
    fn class_zero_is_identity() {
        let v = test_video(4);
        let out = apply_consistent(&v, &OcclusionSpec::none()).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn corner_patch_geometry_is_exact() {
        let v = test_video(3);
        let out = apply_consistent(&v, &spec_for(1, 0.25)).unwrap();
        for (fin, fout) in v.frames.iter().zip(&out.frames) {
            for r in 0..FRAME_SIZE {
                for c in 0..FRAME_SIZE {
                    let expect = if r < 16 && c < 16 { 0 } else { fin.pixels()[[r, c]] };
                    assert_eq!(fout.pixels()[[r, c]], expect, "at ({r},{c})");
                }
            }
        }
    }

    #[test]
    fn top_removal_matches_resize_oracle() {
        // foreground entirely in the bottom half; removing the top half and
        // stretching should equal a two-line upscale of the bottom rows
        let mut m = Array2::<u8>::zeros((FRAME_SIZE, FRAME_SIZE));
        m.slice_mut(s![40..64, 20..44]).fill(1);
        let v = SilhouetteVideo::new(vec![SilhouetteFrame::from_binary(m.clone()).unwrap()], "s", "q")
            .unwrap();
        let out = apply_consistent(&v, &spec_for(5, 0.5)).unwrap();
        // oracle: surviving rows 32..64 upscaled to 64 rows, align-corners
        let mut expect = Array2::<u8>::zeros((FRAME_SIZE, FRAME_SIZE));
        for r in 0..FRAME_SIZE {
            let sr = 32 + ((r as f64) * 31.0 / 63.0).round() as usize;
            for c in 0..FRAME_SIZE {
                expect[[r, c]] = m[[sr, c]];
            }
        }
        assert_eq!(out.frames[0].pixels(), &expect);
    }

    #[test]
    fn halves_zero_exactly_32_columns() {
        let v = test_video(2);
        let left = apply_consistent(&v, &spec_for(7, 0.5)).unwrap();
        let right = apply_consistent(&v, &spec_for(8, 0.5)).unwrap();
        for t in 0..2 {
            for r in 0..FRAME_SIZE {
                for c in 0..32 {
                    assert_eq!(left.frames[t].pixels()[[r, c]], 0);
                    assert_eq!(
                        right.frames[t].pixels()[[r, c]],
                        v.frames[t].pixels()[[r, c]]
                    );
                }
                for c in 32..64 {
                    assert_eq!(right.frames[t].pixels()[[r, c]], 0);
                    assert_eq!(
                        left.frames[t].pixels()[[r, c]],
                        v.frames[t].pixels()[[r, c]]
                    );
                }
            }
        }
    }

    #[test]
    fn mirror_symmetry_between_left_and_right_half() {
        let v = test_video(5);
        let left_of_mirror = apply_consistent(&v.flipped_horizontal(), &spec_for(7, 0.5)).unwrap();
        let mirror_of_right = apply_consistent(&v, &spec_for(8, 0.5))
            .unwrap()
            .flipped_horizontal();
        assert_eq!(left_of_mirror.frames, mirror_of_right.frames);
    }

    #[test]
    fn dynamic_tall_rect_sweeps_left_to_right() {
        let mut frames = Vec::new();
        for _ in 0..10 {
            frames.push(SilhouetteFrame::from_binary(Array2::ones((64, 64))).unwrap());
        }
        let v = SilhouetteVideo::new(frames, "s", "q").unwrap();
        let spec = OcclusionSpec {
            class: OcclusionClass::None,
            ratio: 0.0,
            dynamic: Some(DynamicPatchSpec {
                shape: PatchShape::TallRect,
                height_ratio: 1.0,
                width_ratio: 0.25,
                velocity: 1.0,
                direction: Direction::LeftToRight,
                initial_x: 0,
            }),
            rng_seed: 3,
        };
        let out = apply_dynamic(&v, &spec).unwrap();
        for t in 0..10usize {
            for r in 0..64 {
                for c in 0..64 {
                    let occluded = c >= t && c < t + 16;
                    assert_eq!(out.frames[t].pixels()[[r, c]], u8::from(!occluded));
                }
            }
        }
    }

    #[test]
    fn dynamic_patch_off_frame_leaves_frames_unchanged() {
        let v = test_video(8);
        let spec = OcclusionSpec {
            class: OcclusionClass::None,
            ratio: 0.0,
            dynamic: Some(DynamicPatchSpec {
                shape: PatchShape::TallRect,
                height_ratio: 1.0,
                width_ratio: 0.25,
                velocity: 16.0,
                direction: Direction::LeftToRight,
                initial_x: 16,
            }),
            rng_seed: 3,
        };
        let out = apply_dynamic(&v, &spec).unwrap();
        // the patch overlaps the blob only at t=0 and leaves the frame
        // entirely by t=2
        assert_ne!(out.frames[0], v.frames[0]);
        for t in 1..8 {
            assert_eq!(out.frames[t], v.frames[t]);
        }
    }

    #[test]
    fn dispatch_errors_on_wrong_spec_kind() {
        let v = test_video(1);
        assert!(matches!(
            apply_consistent(&v, &sample_dynamic_spec(1)),
            Err(OcclusionError::BadSpec(_))
        ));
        assert!(matches!(
            apply_dynamic(&v, &OcclusionSpec::none()),
            Err(OcclusionError::BadSpec(_))
        ));
    }

    #[test]
    fn sample_spec_respects_class_constraints() {
        let only_none: BTreeSet<u8> = [0].into();
        let s = sample_spec(&only_none, 42).unwrap();
        assert_eq!(s.class, OcclusionClass::None);

        let only_left: BTreeSet<u8> = [7].into();
        for seed in 0..20 {
            assert_eq!(sample_spec(&only_left, seed).unwrap().ratio, 0.50);
        }
        assert!(matches!(
            sample_spec(&BTreeSet::new(), 0),
            Err(OcclusionError::EmptyClassSet)
        ));
    }

    #[test]
    fn sample_spec_is_uniform_over_classes_and_ratios() {
        // chi-square goodness of fit at alpha = 0.01
        let corners: BTreeSet<u8> = [1, 2, 3, 4].into();
        let n = 10_000usize;
        let mut class_counts = [0usize; 4];
        let mut ratio_bins = [0usize; 10];
        for s in 0..n as u64 {
            let spec = sample_spec(&corners, s).unwrap();
            class_counts[(spec.class.id() - 1) as usize] += 1;
            assert!((0.20..=0.50).contains(&spec.ratio));
            let bin = (((spec.ratio - 0.20) / 0.30 * 10.0) as usize).min(9);
            ratio_bins[bin] += 1;
        }
        let chi2 = |counts: &[usize], expected: f64| -> f64 {
            counts
                .iter()
                .map(|&c| (c as f64 - expected).powi(2) / expected)
                .sum()
        };
        // df=3 and df=9 critical values at alpha=0.01
        assert!(chi2(&class_counts, n as f64 / 4.0) < 11.345);
        assert!(chi2(&ratio_bins, n as f64 / 10.0) < 21.666);
    }

    #[test]
    fn occlude_batch_validates_manifest_coverage() {
        let videos = vec![test_video(2)];
        let spec = OcclusionSpec::none();
        assert!(matches!(
            occlude_batch(&videos, &[]),
            Err(OcclusionError::MissingVideo(_))
        ));
        let twice = vec![("s0/q0".into(), spec), ("s0/q0".into(), spec)];
        assert!(matches!(
            occlude_batch(&videos, &twice),
            Err(OcclusionError::DuplicateEntry(_))
        ));
        let ok = occlude_batch(&videos, &[("s0/q0".into(), spec)]).unwrap();
        assert_eq!(ok.len(), 1);
        assert_eq!(ok[0].1, 0);
        assert_eq!(ok[0].0, videos[0]);
        assert!(occlude_batch(&[], &[]).unwrap().is_empty());
    }

    #[test]
    fn manifest_roundtrip_replays_bit_exactly() {
        let videos: Vec<SilhouetteVideo> = (0..10)
            .map(|i| {
                let mut v = test_video(6);
                v.sequence_id = format!("q{i}");
                v
            })
            .collect();
        let all: BTreeSet<u8> = (0..=8).collect();
        let mut manifest: Vec<(String, OcclusionSpec)> = videos
            .iter()
            .enumerate()
            .map(|(i, v)| (video_key(v), sample_spec(&all, 1000 + i as u64).unwrap()))
            .collect();
        manifest.push((
            "extra/dyn".to_string(),
            sample_dynamic_spec(77),
        ));
        let mut buf = Vec::new();
        write_manifest(&mut buf, &manifest).unwrap();
        let reread = read_manifest(buf.as_slice()).unwrap();
        assert_eq!(manifest, reread);

        let manifest_videos: Vec<_> = manifest[..videos.len()].to_vec();
        let first = occlude_batch(&videos, &manifest_videos).unwrap();
        let second = occlude_batch(&videos, &reread[..videos.len()].to_vec()).unwrap();
        assert_eq!(first, second);
    }
}
