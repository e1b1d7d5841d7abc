//! Pooling layers. Max pools return flat argmax indices into the input
//! so the backward pass is a plain scatter-add.

use ndarray::{Array1, Array3, Array4};

use super::Scalar;

/// Non-overlapping k x k max pool over (C, H, W). H and W must divide by k.
pub fn max_pool2d<T: Scalar>(x: &Array3<T>, k: usize) -> (Array3<T>, Array3<usize>) {
    let (c, h, w) = x.dim();
    assert!(h % k == 0 && w % k == 0, "pool size must divide input");
    let (oh, ow) = (h / k, w / k);
    let mut y = Array3::zeros((c, oh, ow));
    let mut idx = Array3::zeros((c, oh, ow));
    for ci in 0..c {
        for r in 0..oh {
            for cc in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_at = 0usize;
                for dr in 0..k {
                    for dc in 0..k {
                        let (ir, ic) = (r * k + dr, cc * k + dc);
                        let v = x[[ci, ir, ic]];
                        if v > best {
                            best = v;
                            best_at = (ci * h + ir) * w + ic;
                        }
                    }
                }
                y[[ci, r, cc]] = best;
                idx[[ci, r, cc]] = best_at;
            }
        }
    }
    (y, idx)
}

pub fn max_pool2d_backward<T: Scalar>(
    idx: &Array3<usize>,
    gy: &Array3<T>,
    in_dim: (usize, usize, usize),
) -> Array3<T> {
    let mut gx = Array3::zeros(in_dim);
    let gs = gx.as_slice_mut().unwrap();
    for (&i, &g) in idx.iter().zip(gy.iter()) {
        gs[i] = gs[i] + g;
    }
    gx
}

/// k x k max pool over the two spatial axes of (C, F, H, W); frames kept.
pub fn max_pool3d_spatial<T: Scalar>(x: &Array4<T>, k: usize) -> (Array4<T>, Array4<usize>) {
    let (c, f, h, w) = x.dim();
    assert!(h % k == 0 && w % k == 0, "pool size must divide input");
    let (oh, ow) = (h / k, w / k);
    let mut y = Array4::zeros((c, f, oh, ow));
    let mut idx = Array4::zeros((c, f, oh, ow));
    for ci in 0..c {
        for t in 0..f {
            for r in 0..oh {
                for cc in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_at = 0usize;
                    for dr in 0..k {
                        for dc in 0..k {
                            let (ir, ic) = (r * k + dr, cc * k + dc);
                            let v = x[[ci, t, ir, ic]];
                            if v > best {
                                best = v;
                                best_at = ((ci * f + t) * h + ir) * w + ic;
                            }
                        }
                    }
                    y[[ci, t, r, cc]] = best;
                    idx[[ci, t, r, cc]] = best_at;
                }
            }
        }
    }
    (y, idx)
}

pub fn max_pool3d_spatial_backward<T: Scalar>(
    idx: &Array4<usize>,
    gy: &Array4<T>,
    in_dim: (usize, usize, usize, usize),
) -> Array4<T> {
    let mut gx = Array4::zeros(in_dim);
    let gs = gx.as_slice_mut().unwrap();
    for (&i, &g) in idx.iter().zip(gy.iter()) {
        gs[i] = gs[i] + g;
    }
    gx
}

/// Max pool along the frame axis of (C, F, H, W) with ceil mode: windows of
/// `k` frames at stride `stride`; the last window may be shorter.
pub fn max_pool_temporal<T: Scalar>(
    x: &Array4<T>,
    k: usize,
    stride: usize,
) -> (Array4<T>, Array4<usize>) {
    let (c, f, h, w) = x.dim();
    // number of ceil-mode windows whose start is inside the input
    let nf = f.div_ceil(stride);
    let mut y = Array4::zeros((c, nf, h, w));
    let mut idx = Array4::zeros((c, nf, h, w));
    for ci in 0..c {
        for o in 0..nf {
            let t0 = o * stride;
            let t1 = (t0 + k).min(f);
            for r in 0..h {
                for cc in 0..w {
                    let mut best = T::neg_infinity();
                    let mut best_at = 0usize;
                    for t in t0..t1 {
                        let v = x[[ci, t, r, cc]];
                        if v > best {
                            best = v;
                            best_at = ((ci * f + t) * h + r) * w + cc;
                        }
                    }
                    y[[ci, o, r, cc]] = best;
                    idx[[ci, o, r, cc]] = best_at;
                }
            }
        }
    }
    (y, idx)
}

pub fn max_pool_temporal_backward<T: Scalar>(
    idx: &Array4<usize>,
    gy: &Array4<T>,
    in_dim: (usize, usize, usize, usize),
) -> Array4<T> {
    let mut gx = Array4::zeros(in_dim);
    let gs = gx.as_slice_mut().unwrap();
    for (&i, &g) in idx.iter().zip(gy.iter()) {
        gs[i] = gs[i] + g;
    }
    gx
}

/// Max over the entire frame axis: (C, F, H, W) -> (C, H, W).
pub fn temporal_max<T: Scalar>(x: &Array4<T>) -> (Array3<T>, Array3<usize>) {
    let (c, f, h, w) = x.dim();
    assert!(f > 0, "empty frame axis");
    let mut y = Array3::zeros((c, h, w));
    let mut idx = Array3::zeros((c, h, w));
    for ci in 0..c {
        for r in 0..h {
            for cc in 0..w {
                let mut best = T::neg_infinity();
                let mut best_at = 0usize;
                for t in 0..f {
                    let v = x[[ci, t, r, cc]];
                    if v > best {
                        best = v;
                        best_at = ((ci * f + t) * h + r) * w + cc;
                    }
                }
                y[[ci, r, cc]] = best;
                idx[[ci, r, cc]] = best_at;
            }
        }
    }
    (y, idx)
}

pub fn temporal_max_backward<T: Scalar>(
    idx: &Array3<usize>,
    gy: &Array3<T>,
    in_dim: (usize, usize, usize, usize),
) -> Array4<T> {
    let mut gx = Array4::zeros(in_dim);
    let gs = gx.as_slice_mut().unwrap();
    for (&i, &g) in idx.iter().zip(gy.iter()) {
        gs[i] = gs[i] + g;
    }
    gx
}

/// Global average pool: (C, H, W) -> (C,).
pub fn global_avg_pool2d<T: Scalar>(x: &Array3<T>) -> Array1<T> {
    let (_, h, w) = x.dim();
    let inv = T::one() / T::from_f64((h * w) as f64);
    x.map_axis(ndarray::Axis(2), |v| v.sum())
        .map_axis(ndarray::Axis(1), |v| v.sum())
        * inv
}

pub fn global_avg_pool2d_backward<T: Scalar>(
    gy: &Array1<T>,
    in_dim: (usize, usize, usize),
) -> Array3<T> {
    let (c, h, w) = in_dim;
    let inv = T::one() / T::from_f64((h * w) as f64);
    let mut gx = Array3::zeros(in_dim);
    for ci in 0..c {
        gx.index_axis_mut(ndarray::Axis(0), ci).fill(gy[ci] * inv);
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{Array3, Array4};

    fn seq3(dim: (usize, usize, usize)) -> Array3<f64> {
        let mut i = 0.0;
        Array3::from_shape_simple_fn(dim, || {
            i += 1.0;
            (i * 7.0) % 13.0
        })
    }

    #[test]
    fn max_pool2d_picks_window_maxima_and_backward_scatters() {
        let x = seq3((2, 4, 4));
        let (y, idx) = max_pool2d(&x, 2);
        assert_eq!(y.dim(), (2, 2, 2));
        for ci in 0..2 {
            for r in 0..2 {
                for cc in 0..2 {
                    let mut expect = f64::NEG_INFINITY;
                    for dr in 0..2 {
                        for dc in 0..2 {
                            expect = expect.max(x[[ci, 2 * r + dr, 2 * cc + dc]]);
                        }
                    }
                    assert_eq!(y[[ci, r, cc]], expect);
                }
            }
        }
        let gy = Array3::from_elem((2, 2, 2), 1.0);
        let gx = max_pool2d_backward(&idx, &gy, (2, 4, 4));
        assert_abs_diff_eq!(gx.sum(), 8.0, epsilon = 1e-12);
        // gradient only lands on argmax cells
        for ((c, r, cc), &g) in gx.indexed_iter() {
            if g != 0.0 {
                assert_eq!(y[[c, r / 2, cc / 2]], x[[c, r, cc]]);
            }
        }
    }

    #[test]
    fn temporal_pool_ceil_mode_covers_trailing_frames() {
        // 7 frames, window 3, stride 3 -> 3 output frames (last window has 1 frame)
        let x = Array4::from_shape_fn((1, 7, 1, 1), |(_, t, _, _)| t as f64);
        let (y, idx) = max_pool_temporal(&x, 3, 3);
        assert_eq!(y.dim(), (1, 3, 1, 1));
        assert_eq!(y[[0, 0, 0, 0]], 2.0);
        assert_eq!(y[[0, 1, 0, 0]], 5.0);
        assert_eq!(y[[0, 2, 0, 0]], 6.0);
        let gy = Array4::from_elem((1, 3, 1, 1), 1.0);
        let gx = max_pool_temporal_backward(&idx, &gy, (1, 7, 1, 1));
        assert_eq!(gx[[0, 2, 0, 0]], 1.0);
        assert_eq!(gx[[0, 6, 0, 0]], 1.0);
        assert_abs_diff_eq!(gx.sum(), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn temporal_max_reduces_frame_axis() {
        let x = Array4::from_shape_fn((2, 5, 3, 3), |(c, t, r, cc)| {
            ((c + 1) * (t + 2) * (r + 1)) as f64 - cc as f64
        });
        let (y, idx) = temporal_max(&x);
        for ((c, r, cc), &v) in y.indexed_iter() {
            let expect = (0..5).map(|t| x[[c, t, r, cc]]).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(v, expect);
        }
        let gy = Array3::from_elem((2, 3, 3), 2.0);
        let gx = temporal_max_backward(&idx, &gy, (2, 5, 3, 3));
        assert_abs_diff_eq!(gx.sum(), 36.0, epsilon = 1e-12);
    }

    #[test]
    fn spatial_pool_on_frames_matches_per_frame_2d_pool() {
        let x = Array4::from_shape_fn((2, 3, 4, 4), |(c, t, r, cc)| {
            ((c * 31 + t * 17 + r * 5 + cc * 3) % 23) as f64
        });
        let (y, _) = max_pool3d_spatial(&x, 2);
        for t in 0..3 {
            let frame = x.index_axis(ndarray::Axis(1), t).to_owned();
            let (yf, _) = max_pool2d(&frame, 2);
            assert_eq!(y.index_axis(ndarray::Axis(1), t), yf);
        }
    }

    #[test]
    fn global_avg_pool_matches_mean_and_backward_spreads() {
        let x = seq3((3, 2, 2));
        let y = global_avg_pool2d(&x);
        for c in 0..3 {
            let mean = x.index_axis(ndarray::Axis(0), c).mean().unwrap();
            assert_abs_diff_eq!(y[c], mean, epsilon = 1e-12);
        }
        let gy = ndarray::array![4.0, 8.0, 12.0];
        let gx = global_avg_pool2d_backward(&gy, (3, 2, 2));
        assert_abs_diff_eq!(gx[[0, 0, 0]], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(gx[[2, 1, 1]], 3.0, epsilon = 1e-12);
    }
}
