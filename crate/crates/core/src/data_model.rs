//! Core silhouette types and normalization shared by every other module.
//!
//! All frames are binary 64x64 masks (foreground = 1, background = 0).
//! [`normalize_frame`] turns an arbitrary-size raw mask into that
//! canonical form: crop to the foreground bounding box, resize to height
//! 64 preserving aspect ratio (nearest-neighbor, re-binarized), and
//! center horizontally in the square frame.

use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

/// Canonical frame side length after normalization.
pub const FRAME_SIZE: usize = 64;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("mask contains no foreground pixel")]
    EmptyMask,
    #[error("expected a {expected}x{expected} binary frame, got {rows}x{cols}")]
    BadDimensions {
        expected: usize,
        rows: usize,
        cols: usize,
    },
    #[error("pixel values must be 0 or 1")]
    NotBinary,
    #[error("video must contain at least one frame")]
    EmptyVideo,
    #[error("frame {index} has mismatched dimensions")]
    MixedDimensions { index: usize },
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("png decode error at {path}: {source}")]
    Png {
        path: String,
        source: image::ImageError,
    },
}

/// One binary 64x64 silhouette mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SilhouetteFrame {
    pixels: Array2<u8>,
}

impl SilhouetteFrame {
    /// Wrap an already-normalized 64x64 binary mask.
    pub fn from_binary(pixels: Array2<u8>) -> Result<Self, DataError> {
        let (rows, cols) = pixels.dim();
        if rows != FRAME_SIZE || cols != FRAME_SIZE {
            return Err(DataError::BadDimensions {
                expected: FRAME_SIZE,
                rows,
                cols,
            });
        }
        if pixels.iter().any(|&p| p > 1) {
            return Err(DataError::NotBinary);
        }
        Ok(Self { pixels })
    }

    pub fn pixels(&self) -> &Array2<u8> {
        &self.pixels
    }

    pub fn foreground_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p == 1).count()
    }

    /// Mirror left-right.
    pub fn flipped_horizontal(&self) -> Self {
        let mut out = Array2::zeros((FRAME_SIZE, FRAME_SIZE));
        for r in 0..FRAME_SIZE {
            for c in 0..FRAME_SIZE {
                out[[r, c]] = self.pixels[[r, FRAME_SIZE - 1 - c]];
            }
        }
        Self { pixels: out }
    }

    pub(crate) fn from_binary_unchecked(pixels: Array2<u8>) -> Self {
        Self { pixels }
    }
}

/// An ordered stack of silhouette frames with identity tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SilhouetteVideo {
    pub frames: Vec<SilhouetteFrame>,
    pub subject_id: String,
    pub sequence_id: String,
    pub condition: Option<String>,
}

impl SilhouetteVideo {
    pub fn new(
        frames: Vec<SilhouetteFrame>,
        subject_id: impl Into<String>,
        sequence_id: impl Into<String>,
    ) -> Result<Self, DataError> {
        if frames.is_empty() {
            return Err(DataError::EmptyVideo);
        }
        Ok(Self {
            frames,
            subject_id: subject_id.into(),
            sequence_id: sequence_id.into(),
            condition: None,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn with_frames(&self, frames: Vec<SilhouetteFrame>) -> Self {
        Self {
            frames,
            subject_id: self.subject_id.clone(),
            sequence_id: self.sequence_id.clone(),
            condition: self.condition.clone(),
        }
    }

    pub fn flipped_horizontal(&self) -> Self {
        self.with_frames(self.frames.iter().map(|f| f.flipped_horizontal()).collect())
    }
}

/// Final identity embedding: one `embed_dim` vector per horizontal part.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitSignature {
    parts: Array2<f32>,
}

impl GaitSignature {
    pub fn new(parts: Array2<f32>) -> Self {
        debug_assert!(parts.iter().all(|v| v.is_finite()));
        Self { parts }
    }

    pub fn num_parts(&self) -> usize {
        self.parts.nrows()
    }

    pub fn embed_dim(&self) -> usize {
        self.parts.ncols()
    }

    pub fn parts(&self) -> &Array2<f32> {
        &self.parts
    }

    /// Row-major flattening used for distance computation.
    pub fn flattened(&self) -> Vec<f32> {
        self.parts.iter().copied().collect()
    }
}

/// Nearest-neighbor resize with align-corners index mapping, followed by
/// re-binarization. Align-corners keeps the first/last source rows and
/// columns on the output border, which makes normalization a fixed point.
pub(crate) fn resize_nearest(src: &Array2<u8>, out_h: usize, out_w: usize) -> Array2<u8> {
    let (in_h, in_w) = src.dim();
    let map = |d: usize, d_len: usize, s_len: usize| -> usize {
        if d_len <= 1 || s_len <= 1 {
            0
        } else {
            ((d as f64) * ((s_len - 1) as f64) / ((d_len - 1) as f64)).round() as usize
        }
    };
    let mut out = Array2::zeros((out_h, out_w));
    for r in 0..out_h {
        let sr = map(r, out_h, in_h);
        for c in 0..out_w {
            let sc = map(c, out_w, in_w);
            // threshold at 0.5: nearest-neighbor keeps values binary
            out[[r, c]] = u8::from(src[[sr, sc]] > 0);
        }
    }
    out
}

fn bounding_box(mask: &Array2<u8>) -> Option<(usize, usize, usize, usize)> {
    let (rows, cols) = mask.dim();
    let (mut r0, mut r1, mut c0, mut c1) = (rows, 0usize, cols, 0usize);
    let mut any = false;
    for r in 0..rows {
        for c in 0..cols {
            if mask[[r, c]] > 0 {
                any = true;
                r0 = r0.min(r);
                r1 = r1.max(r);
                c0 = c0.min(c);
                c1 = c1.max(c);
            }
        }
    }
    any.then_some((r0, r1, c0, c1))
}

/// Crop to the subject's bounding box, scale to height 64 preserving
/// aspect ratio, and center horizontally. Output is always a valid
/// binary 64x64 frame, and the operation is idempotent pixel-exact.
pub fn normalize_frame(raw_mask: &Array2<u8>) -> Result<SilhouetteFrame, DataError> {
    // Wide subjects get their width center-cropped, which can empty top or
    // bottom rows and make a single pass non-idempotent; iterate to a fixed
    // point (one pass suffices for anything taller than wide).
    let mut cur = normalize_pass(raw_mask)?;
    for _ in 0..8 {
        let next = normalize_pass(cur.pixels())?;
        if next.pixels() == cur.pixels() {
            break;
        }
        cur = next;
    }
    Ok(cur)
}

fn normalize_pass(raw_mask: &Array2<u8>) -> Result<SilhouetteFrame, DataError> {
    let (r0, r1, c0, c1) = bounding_box(raw_mask).ok_or(DataError::EmptyMask)?;
    let patch = raw_mask
        .slice(ndarray::s![r0..=r1, c0..=c1])
        .mapv(|p| u8::from(p > 0));
    let (bh, bw) = patch.dim();
    let out_w = (((bw * FRAME_SIZE) as f64 / bh as f64).round() as usize).max(1);
    let resized = resize_nearest(&patch, FRAME_SIZE, out_w);

    let mut canvas = Array2::zeros((FRAME_SIZE, FRAME_SIZE));
    if out_w <= FRAME_SIZE {
        let start = (FRAME_SIZE - out_w) / 2;
        canvas
            .slice_mut(ndarray::s![.., start..start + out_w])
            .assign(&resized);
    } else {
        let crop = (out_w - FRAME_SIZE) / 2;
        canvas.assign(&resized.slice(ndarray::s![.., crop..crop + FRAME_SIZE]));
    }

    // Wide subjects may have empty margins after the center crop; translate
    // so the foreground bounding box is exactly centered.
    let (_, _, cc0, cc1) = bounding_box(&canvas).ok_or(DataError::EmptyMask)?;
    let width = cc1 - cc0 + 1;
    let target = (FRAME_SIZE - width) / 2;
    if target != cc0 {
        let mut shifted = Array2::zeros((FRAME_SIZE, FRAME_SIZE));
        for r in 0..FRAME_SIZE {
            for c in cc0..=cc1 {
                shifted[[r, target + c - cc0]] = canvas[[r, c]];
            }
        }
        canvas = shifted;
    }
    Ok(SilhouetteFrame::from_binary_unchecked(canvas))
}

/// Total foreground pixel count across all frames.
pub fn video_pixel_sum(video: &SilhouetteVideo) -> u64 {
    video
        .frames
        .iter()
        .map(|f| f.foreground_count() as u64)
        .sum()
}

/// Load one sequence directory of `<frame_index>.png` files, normalizing
/// every frame. Foreground is any gray value above 127.
pub fn load_video(
    dir: &Path,
    subject_id: &str,
    sequence_id: &str,
) -> Result<SilhouetteVideo, DataError> {
    let mut entries: Vec<(u64, std::path::PathBuf)> = Vec::new();
    let rd = std::fs::read_dir(dir).map_err(|e| DataError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    for entry in rd {
        let entry = entry.map_err(|e| DataError::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
        let path = entry.path();
        if path.extension().is_some_and(|e| e == "png") {
            let idx = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse::<u64>().ok());
            if let Some(idx) = idx {
                entries.push((idx, path));
            }
        }
    }
    entries.sort_by_key(|(idx, _)| *idx);
    let mut frames = Vec::with_capacity(entries.len());
    for (_, path) in &entries {
        let img = image::open(path)
            .map_err(|e| DataError::Png {
                path: path.display().to_string(),
                source: e,
            })?
            .into_luma8();
        let (w, h) = img.dimensions();
        let mut mask = Array2::zeros((h as usize, w as usize));
        for (x, y, p) in img.enumerate_pixels() {
            mask[[y as usize, x as usize]] = u8::from(p.0[0] > 127);
        }
        frames.push(normalize_frame(&mask)?);
    }
    SilhouetteVideo::new(frames, subject_id, sequence_id)
}

/// Load a full `root/<subject_id>/<sequence_id>/<frame>.png` tree.
/// Videos are returned sorted by (subject_id, sequence_id).
pub fn load_dataset(root: &Path) -> Result<Vec<SilhouetteVideo>, DataError> {
    let io_err = |e| DataError::Io {
        path: root.display().to_string(),
        source: e,
    };
    let mut videos = Vec::new();
    let mut subjects: Vec<_> = std::fs::read_dir(root)
        .map_err(io_err)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    subjects.sort();
    for subj_dir in subjects {
        let subject_id = subj_dir.file_name().unwrap().to_string_lossy().to_string();
        let mut seqs: Vec<_> = std::fs::read_dir(&subj_dir)
            .map_err(|e| DataError::Io {
                path: subj_dir.display().to_string(),
                source: e,
            })?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| e.path())
            .collect();
        seqs.sort();
        for seq_dir in seqs {
            let sequence_id = seq_dir.file_name().unwrap().to_string_lossy().to_string();
            videos.push(load_video(&seq_dir, &subject_id, &sequence_id)?);
        }
    }
    Ok(videos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::s;

    fn centered_square_mask(size: usize, side: usize) -> Array2<u8> {
        let mut m = Array2::zeros((size, size));
        let start = (size - side) / 2;
        m.slice_mut(s![start..start + side, start..start + side])
            .fill(1);
        m
    }

    #[test]
    fn normalize_rejects_empty_mask() {
        let empty = Array2::<u8>::zeros((32, 32));
        assert!(matches!(
            normalize_frame(&empty),
            Err(DataError::EmptyMask)
        ));
    }

    #[test]
    fn tight_centered_mask_is_identity() {
        // full-height blob whose bounding box is already centered
        let mut m = Array2::<u8>::zeros((64, 64));
        m.slice_mut(s![0..64, 22..42]).fill(1);
        let out = normalize_frame(&m).unwrap();
        assert_eq!(out.pixels(), &m);
    }

    #[test]
    fn centered_square_downscales_to_all_ones() {
        let m = centered_square_mask(128, 64);
        let out = normalize_frame(&m).unwrap();
        assert_eq!(out.foreground_count(), 64 * 64);
    }

    #[test]
    fn offcenter_blob_matches_reference_oracle() {
        // brute-force reference: bbox -> aspect resize -> center, written
        // as an independent straight-line computation
        let mut m = Array2::<u8>::zeros((100, 80));
        m.slice_mut(s![10..90, 5..25]).fill(1);
        let out = normalize_frame(&m).unwrap();

        // oracle: bbox is 80x20, scale 64/80 -> width 16, centered at 24
        let mut expect = Array2::<u8>::zeros((64, 64));
        for r in 0..64usize {
            let sr = ((r as f64) * 79.0 / 63.0).round() as usize;
            for c in 0..16usize {
                let sc = ((c as f64) * 19.0 / 15.0).round() as usize;
                expect[[r, 24 + c]] = m[[10 + sr, 5 + sc]];
            }
        }
        assert_eq!(out.pixels(), &expect);
    }

    #[test]
    fn video_pixel_sum_matches_loop_oracle() {
        let frames = vec![
            SilhouetteFrame::from_binary(Array2::zeros((64, 64))).unwrap(),
            SilhouetteFrame::from_binary(centered_square_mask(64, 10)).unwrap(),
            normalize_frame(&centered_square_mask(128, 64)).unwrap(),
        ];
        let video = SilhouetteVideo::new(frames.clone(), "s", "q").unwrap();
        let mut expect = 0u64;
        for f in &frames {
            let mut per_frame = 0u64;
            for &p in f.pixels() {
                per_frame += p as u64;
            }
            expect += per_frame;
        }
        assert_eq!(video_pixel_sum(&video), expect);
        assert_eq!(
            video_pixel_sum(&SilhouetteVideo::new(
                vec![
                    SilhouetteFrame::from_binary(Array2::zeros((64, 64))).unwrap();
                    3
                ],
                "s",
                "q"
            )
            .unwrap()),
            0
        );
        let ones = SilhouetteFrame::from_binary(Array2::ones((64, 64))).unwrap();
        let v = SilhouetteVideo::new(vec![ones], "s", "q").unwrap();
        assert_eq!(video_pixel_sum(&v), 4096);
    }

    #[test]
    fn from_binary_validates() {
        assert!(SilhouetteFrame::from_binary(Array2::zeros((32, 64))).is_err());
        let mut bad = Array2::<u8>::zeros((64, 64));
        bad[[0, 0]] = 2;
        assert!(matches!(
            SilhouetteFrame::from_binary(bad),
            Err(DataError::NotBinary)
        ));
    }
}
