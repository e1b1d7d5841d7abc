//! 2-D and 3-D convolutions via im2col + matmul, stride 1.

use ndarray::{Array1, Array2, Array3, Array4, Array5, Ix1, Ix4, Ix5};
use rand::Rng;

use super::{fan_in_uniform, Param, Scalar};

/// Stride-1 2-D convolution over a (C, H, W) input.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar> {
    pub weight: Param<T, Ix4>, // (out, in, k, k)
    pub bias: Param<T, Ix1>,
    pub kernel: usize,
    pub padding: usize,
}

fn im2col_2d<T: Scalar>(x: &Array3<T>, k: usize, pad: usize) -> Array2<T> {
    let (c, h, w) = x.dim();
    let oh = h + 2 * pad + 1 - k;
    let ow = w + 2 * pad + 1 - k;
    let mut col = Array2::zeros((c * k * k, oh * ow));
    for ci in 0..c {
        for kr in 0..k {
            for kc in 0..k {
                let row = (ci * k + kr) * k + kc;
                for or in 0..oh {
                    let ir = or + kr;
                    if ir < pad || ir >= h + pad {
                        continue;
                    }
                    let ir = ir - pad;
                    for oc in 0..ow {
                        let ic = oc + kc;
                        if ic < pad || ic >= w + pad {
                            continue;
                        }
                        col[[row, or * ow + oc]] = x[[ci, ir, ic - pad]];
                    }
                }
            }
        }
    }
    col
}

fn col2im_2d<T: Scalar>(
    gcol: &Array2<T>,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
) -> Array3<T> {
    let oh = h + 2 * pad + 1 - k;
    let ow = w + 2 * pad + 1 - k;
    let mut gx = Array3::zeros((c, h, w));
    for ci in 0..c {
        for kr in 0..k {
            for kc in 0..k {
                let row = (ci * k + kr) * k + kc;
                for or in 0..oh {
                    let ir = or + kr;
                    if ir < pad || ir >= h + pad {
                        continue;
                    }
                    let ir = ir - pad;
                    for oc in 0..ow {
                        let ic = oc + kc;
                        if ic < pad || ic >= w + pad {
                            continue;
                        }
                        gx[[ci, ir, ic - pad]] = gx[[ci, ir, ic - pad]] + gcol[[row, or * ow + oc]];
                    }
                }
            }
        }
    }
    gx
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, padding: usize, rng: &mut impl Rng) -> Self {
        let fan_in = in_ch * kernel * kernel;
        Self {
            weight: Param::new(fan_in_uniform(
                Ix4(out_ch, in_ch, kernel, kernel),
                fan_in,
                rng,
            )),
            bias: Param::new(Array1::zeros(out_ch)),
            kernel,
            padding,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.dim().0
    }

    pub fn forward(&self, x: &Array3<T>) -> Array3<T> {
        let (_, h, w) = x.dim();
        let (o, c, k, _) = self.weight.value.dim();
        let oh = h + 2 * self.padding + 1 - k;
        let ow = w + 2 * self.padding + 1 - k;
        let col = im2col_2d(x, k, self.padding);
        let wmat = self
            .weight
            .value
            .view()
            .into_shape_with_order((o, c * k * k))
            .unwrap();
        let mut y = wmat.dot(&col); // (o, oh*ow)
        for (mut row, &b) in y.rows_mut().into_iter().zip(self.bias.value.iter()) {
            row.mapv_inplace(|v| v + b);
        }
        y.into_shape_with_order((o, oh, ow)).unwrap()
    }

    /// Returns (grad_x, grad_weight, grad_bias).
    pub fn backward(&self, x: &Array3<T>, gy: &Array3<T>) -> (Array3<T>, Array4<T>, Array1<T>) {
        let (c, h, w) = x.dim();
        let (o, _, k, _) = self.weight.value.dim();
        let (_, oh, ow) = gy.dim();
        let gy_mat = gy.view().into_shape_with_order((o, oh * ow)).unwrap();
        let col = im2col_2d(x, k, self.padding);
        let gw = gy_mat
            .dot(&col.t())
            .into_shape_with_order((o, c, k, k))
            .unwrap();
        let gb = gy_mat.sum_axis(ndarray::Axis(1));
        let wmat = self
            .weight
            .value
            .view()
            .into_shape_with_order((o, c * k * k))
            .unwrap();
        let gcol = wmat.t().dot(&gy_mat);
        let gx = col2im_2d(&gcol, c, h, w, k, self.padding);
        (gx, gw, gb)
    }
}

/// Stride-1 3-D convolution over a (C, F, H, W) input with cubic kernels.
#[derive(Debug, Clone)]
pub struct Conv3d<T: Scalar> {
    pub weight: Param<T, Ix5>, // (out, in, k, k, k)
    pub bias: Param<T, Ix1>,
    pub kernel: usize,
    pub padding: usize,
}

fn im2col_3d<T: Scalar>(x: &Array4<T>, k: usize, pad: usize) -> Array2<T> {
    let (c, f, h, w) = x.dim();
    let of = f + 2 * pad + 1 - k;
    let oh = h + 2 * pad + 1 - k;
    let ow = w + 2 * pad + 1 - k;
    let mut col = Array2::zeros((c * k * k * k, of * oh * ow));
    let xs = x.as_slice().expect("contiguous");
    let cs = col.as_slice_mut().expect("contiguous");
    let ncols = of * oh * ow;
    for ci in 0..c {
        for kf in 0..k {
            for kr in 0..k {
                for kc in 0..k {
                    let row = ((ci * k + kf) * k + kr) * k + kc;
                    let base = row * ncols;
                    for ot in 0..of {
                        let it = ot + kf;
                        if it < pad || it >= f + pad {
                            continue;
                        }
                        let it = it - pad;
                        for or in 0..oh {
                            let ir = or + kr;
                            if ir < pad || ir >= h + pad {
                                continue;
                            }
                            let ir = ir - pad;
                            let x_base = ((ci * f + it) * h + ir) * w;
                            let c_base = base + (ot * oh + or) * ow;
                            for oc in 0..ow {
                                let ic = oc + kc;
                                if ic < pad || ic >= w + pad {
                                    continue;
                                }
                                cs[c_base + oc] = xs[x_base + ic - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im_3d<T: Scalar>(
    gcol: &Array2<T>,
    c: usize,
    f: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
) -> Array4<T> {
    let of = f + 2 * pad + 1 - k;
    let oh = h + 2 * pad + 1 - k;
    let ow = w + 2 * pad + 1 - k;
    let mut gx = Array4::zeros((c, f, h, w));
    let gs = gx.as_slice_mut().expect("contiguous");
    let cs = gcol.as_slice().expect("contiguous");
    let ncols = of * oh * ow;
    for ci in 0..c {
        for kf in 0..k {
            for kr in 0..k {
                for kc in 0..k {
                    let row = ((ci * k + kf) * k + kr) * k + kc;
                    let base = row * ncols;
                    for ot in 0..of {
                        let it = ot + kf;
                        if it < pad || it >= f + pad {
                            continue;
                        }
                        let it = it - pad;
                        for or in 0..oh {
                            let ir = or + kr;
                            if ir < pad || ir >= h + pad {
                                continue;
                            }
                            let ir = ir - pad;
                            let x_base = ((ci * f + it) * h + ir) * w;
                            let c_base = base + (ot * oh + or) * ow;
                            for oc in 0..ow {
                                let ic = oc + kc;
                                if ic < pad || ic >= w + pad {
                                    continue;
                                }
                                gs[x_base + ic - pad] = gs[x_base + ic - pad] + cs[c_base + oc];
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

impl<T: Scalar> Conv3d<T> {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, padding: usize, rng: &mut impl Rng) -> Self {
        let fan_in = in_ch * kernel * kernel * kernel;
        Self {
            weight: Param::new(fan_in_uniform(
                Ix5(out_ch, in_ch, kernel, kernel, kernel),
                fan_in,
                rng,
            )),
            bias: Param::new(Array1::zeros(out_ch)),
            kernel,
            padding,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.dim().0
    }

    pub fn forward(&self, x: &Array4<T>) -> Array4<T> {
        let (_, f, h, w) = x.dim();
        let (o, c, k, _, _) = self.weight.value.dim();
        let p = self.padding;
        let (of, oh, ow) = (f + 2 * p + 1 - k, h + 2 * p + 1 - k, w + 2 * p + 1 - k);
        let col = im2col_3d(x, k, p);
        let wmat = self
            .weight
            .value
            .view()
            .into_shape_with_order((o, c * k * k * k))
            .unwrap();
        let mut y = wmat.dot(&col);
        for (mut row, &b) in y.rows_mut().into_iter().zip(self.bias.value.iter()) {
            row.mapv_inplace(|v| v + b);
        }
        y.into_shape_with_order((o, of, oh, ow)).unwrap()
    }

    /// Returns (grad_x, grad_weight, grad_bias).
    pub fn backward(&self, x: &Array4<T>, gy: &Array4<T>) -> (Array4<T>, Array5<T>, Array1<T>) {
        let (c, f, h, w) = x.dim();
        let (o, _, k, _, _) = self.weight.value.dim();
        let (_, of, oh, ow) = gy.dim();
        let gy_mat = gy.view().into_shape_with_order((o, of * oh * ow)).unwrap();
        let col = im2col_3d(x, k, self.padding);
        let gw = gy_mat
            .dot(&col.t())
            .into_shape_with_order((o, c, k, k, k))
            .unwrap();
        let gb = gy_mat.sum_axis(ndarray::Axis(1));
        let wmat = self
            .weight
            .value
            .view()
            .into_shape_with_order((o, c * k * k * k))
            .unwrap();
        let gcol = wmat.t().dot(&gy_mat);
        let gx = col2im_3d(&gcol, c, f, h, w, k, self.padding);
        (gx, gw, gb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Straight-loop convolution, no im2col: the independent oracle.
    fn naive_conv2d(
        x: &Array3<f64>,
        w: &Array4<f64>,
        b: &Array1<f64>,
        pad: usize,
    ) -> Array3<f64> {
        let (c, h, wd) = x.dim();
        let (o, _, k, _) = w.dim();
        let oh = h + 2 * pad + 1 - k;
        let ow = wd + 2 * pad + 1 - k;
        let mut y = Array3::zeros((o, oh, ow));
        for oi in 0..o {
            for r in 0..oh {
                for cc in 0..ow {
                    let mut acc = b[oi];
                    for ci in 0..c {
                        for kr in 0..k {
                            for kc in 0..k {
                                let ir = r + kr;
                                let ic = cc + kc;
                                if ir >= pad && ir < h + pad && ic >= pad && ic < wd + pad {
                                    acc += x[[ci, ir - pad, ic - pad]] * w[[oi, ci, kr, kc]];
                                }
                            }
                        }
                    }
                    y[[oi, r, cc]] = acc;
                }
            }
        }
        y
    }

    fn naive_conv3d(
        x: &Array4<f64>,
        w: &Array5<f64>,
        b: &Array1<f64>,
        pad: usize,
    ) -> Array4<f64> {
        let (c, f, h, wd) = x.dim();
        let (o, _, k, _, _) = w.dim();
        let (of, oh, ow) = (f + 2 * pad + 1 - k, h + 2 * pad + 1 - k, wd + 2 * pad + 1 - k);
        let mut y = Array4::zeros((o, of, oh, ow));
        for oi in 0..o {
            for t in 0..of {
                for r in 0..oh {
                    for cc in 0..ow {
                        let mut acc = b[oi];
                        for ci in 0..c {
                            for kf in 0..k {
                                for kr in 0..k {
                                    for kc in 0..k {
                                        let it = t + kf;
                                        let ir = r + kr;
                                        let ic = cc + kc;
                                        if it >= pad
                                            && it < f + pad
                                            && ir >= pad
                                            && ir < h + pad
                                            && ic >= pad
                                            && ic < wd + pad
                                        {
                                            acc += x[[ci, it - pad, ir - pad, ic - pad]]
                                                * w[[oi, ci, kf, kr, kc]];
                                        }
                                    }
                                }
                            }
                        }
                        y[[oi, t, r, cc]] = acc;
                    }
                }
            }
        }
        y
    }

    fn rand_array<D: ndarray::Dimension>(dim: D, seed: u64) -> ndarray::Array<f64, D> {
        use rand::Rng;
        let mut rng = crate::seed::rng(seed);
        ndarray::Array::from_shape_simple_fn(dim, || rng.gen::<f64>() - 0.5)
    }

    #[test]
    fn conv2d_matches_naive_oracle() {
        let mut rng = crate::seed::rng(1);
        let conv = Conv2d::<f64>::new(3, 4, 3, 1, &mut rng);
        let x = rand_array(ndarray::Ix3(3, 6, 5), 2);
        let y = conv.forward(&x);
        let expect = naive_conv2d(&x, &conv.weight.value, &conv.bias.value, 1);
        assert_eq!(y.dim(), (4, 6, 5));
        for (a, b) in y.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn conv3d_matches_naive_oracle() {
        let mut rng = crate::seed::rng(3);
        let conv = Conv3d::<f64>::new(2, 3, 3, 1, &mut rng);
        let x = rand_array(ndarray::Ix4(2, 4, 5, 5), 4);
        let y = conv.forward(&x);
        let expect = naive_conv3d(&x, &conv.weight.value, &conv.bias.value, 1);
        assert_eq!(y.dim(), (3, 4, 5, 5));
        for (a, b) in y.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn conv2d_gradients_match_finite_differences() {
        let mut rng = crate::seed::rng(5);
        let mut conv = Conv2d::<f64>::new(2, 3, 3, 1, &mut rng);
        let x = rand_array(ndarray::Ix3(2, 4, 4), 6);
        // scalar objective: sum of squares of the output
        let loss = |c: &Conv2d<f64>, x: &Array3<f64>| -> f64 {
            c.forward(x).iter().map(|v| v * v).sum::<f64>() * 0.5
        };
        let y = conv.forward(&x);
        let (gx, gw, gb) = conv.backward(&x, &y);
        let eps = 1e-5;
        let mut xp = x.clone();
        for idx in [(0usize, 0usize, 0usize), (1, 2, 3), (0, 3, 1)] {
            let orig = xp[idx];
            xp[idx] = orig + eps;
            let lp = loss(&conv, &xp);
            xp[idx] = orig - eps;
            let lm = loss(&conv, &xp);
            xp[idx] = orig;
            assert_abs_diff_eq!(gx[idx], (lp - lm) / (2.0 * eps), epsilon = 1e-6);
        }
        for idx in [(0usize, 0usize, 0usize, 0usize), (2, 1, 2, 2)] {
            let orig = conv.weight.value[idx];
            conv.weight.value[idx] = orig + eps;
            let lp = loss(&conv, &x);
            conv.weight.value[idx] = orig - eps;
            let lm = loss(&conv, &x);
            conv.weight.value[idx] = orig;
            assert_abs_diff_eq!(gw[idx], (lp - lm) / (2.0 * eps), epsilon = 1e-6);
        }
        for i in 0..3 {
            let orig = conv.bias.value[i];
            conv.bias.value[i] = orig + eps;
            let lp = loss(&conv, &x);
            conv.bias.value[i] = orig - eps;
            let lm = loss(&conv, &x);
            conv.bias.value[i] = orig;
            assert_abs_diff_eq!(gb[i], (lp - lm) / (2.0 * eps), epsilon = 1e-6);
        }
    }
}
