//! Occlusion awareness injectors: transforms that fold the detector's
//! occlusion feature beta into an intermediate backbone feature X.
//!
//! Variants:
//! - GuidedAdd: parameter-free broadcast add of per-frame beta onto a
//!   64-channel 3-D feature map.
//! - Learnable3dConv: channel-concatenate broadcast beta with X, then one
//!   learnable 3x3x3 convolution back down (output width configurable).
//! - DeferredConcat / ComplexDeferredConcat: per part, concatenate the
//!   cumulative beta and map back with one (or two, with a rectifier in
//!   between) affine layers shared across parts.
//! - ConvPlusDeferred: both of the above in one forward pass.

use ndarray::{Array1, Array2, Array4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::HookPoint;
use crate::nn::{relu, relu_backward, AdamConfig, Conv3d, Linear, Scalar};
use crate::seed;

/// Width of the detector's occlusion feature.
pub const BETA_DIM: usize = 64;

#[derive(Debug, Error)]
pub enum AwarenessError {
    #[error("feature has {got} channels, guided add requires {want}")]
    ChannelMismatch { got: usize, want: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("hook mismatch: {0}")]
    HookMismatch(String),
    #[error("missing beta: {0}")]
    MissingBeta(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    GuidedAdd,
    Learnable3dConv,
    DeferredConcat,
    ComplexDeferredConcat,
    ConvPlusDeferred,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::GuidedAdd => "guided-add",
            Variant::Learnable3dConv => "learnable-3dconv",
            Variant::DeferredConcat => "deferred-concat",
            Variant::ComplexDeferredConcat => "complex-deferred-concat",
            Variant::ConvPlusDeferred => "conv-plus-deferred",
        }
    }

    pub fn from_str(s: &str) -> Option<Self> {
        Some(match s {
            "guided-add" => Variant::GuidedAdd,
            "learnable-3dconv" => Variant::Learnable3dConv,
            "deferred-concat" => Variant::DeferredConcat,
            "complex-deferred-concat" => Variant::ComplexDeferredConcat,
            "conv-plus-deferred" => Variant::ConvPlusDeferred,
            _ => return None,
        })
    }

    pub fn binds_early(self) -> bool {
        matches!(
            self,
            Variant::GuidedAdd | Variant::Learnable3dConv | Variant::ConvPlusDeferred
        )
    }

    pub fn binds_deep(self) -> bool {
        matches!(
            self,
            Variant::DeferredConcat | Variant::ComplexDeferredConcat | Variant::ConvPlusDeferred
        )
    }

    /// (needs transient beta, needs cumulative beta)
    pub fn beta_modes(self) -> (bool, bool) {
        (self.binds_early(), self.binds_deep())
    }
}

/// Occlusion features handed to the backbone for one clip.
#[derive(Debug, Clone)]
pub struct Beta<T: Scalar> {
    /// Per-frame features, shape (f, BETA_DIM).
    pub transient: Option<Array2<T>>,
    /// Temporal mean, shape (BETA_DIM,).
    pub cumulative: Option<Array1<T>>,
}

impl<T: Scalar> Beta<T> {
    pub fn none() -> Self {
        Self {
            transient: None,
            cumulative: None,
        }
    }
}

/// Parameter-free guided add: X'[c,t,i,j] = X[c,t,i,j] + beta_t[t,c].
pub fn guided_add<T: Scalar>(
    x: &Array4<T>,
    beta_t: &Array2<T>,
) -> Result<Array4<T>, AwarenessError> {
    let (c, f, _, _) = x.dim();
    if c != BETA_DIM {
        return Err(AwarenessError::ChannelMismatch { got: c, want: BETA_DIM });
    }
    if beta_t.dim() != (f, BETA_DIM) {
        return Err(AwarenessError::ShapeMismatch(format!(
            "beta_t is {:?}, expected ({f}, {BETA_DIM})",
            beta_t.dim()
        )));
    }
    let mut out = x.clone();
    for ci in 0..c {
        for t in 0..f {
            let b = beta_t[[t, ci]];
            out.index_axis_mut(ndarray::Axis(0), ci)
                .index_axis_mut(ndarray::Axis(0), t)
                .mapv_inplace(|v| v + b);
        }
    }
    Ok(out)
}

/// Broadcast beta_t over (h, w) and stack under X along the channel axis.
fn concat_beta_channels<T: Scalar>(x: &Array4<T>, beta_t: &Array2<T>) -> Array4<T> {
    let (c, f, h, w) = x.dim();
    let mut cat = Array4::zeros((c + BETA_DIM, f, h, w));
    cat.slice_mut(ndarray::s![..c, .., .., ..]).assign(x);
    for bc in 0..BETA_DIM {
        for t in 0..f {
            cat.index_axis_mut(ndarray::Axis(0), c + bc)
                .index_axis_mut(ndarray::Axis(0), t)
                .fill(beta_t[[t, bc]]);
        }
    }
    cat
}

/// Concatenate beta_c to every part row: (parts, P) -> (parts, P + BETA_DIM).
fn concat_beta_parts<T: Scalar>(x: &Array2<T>, beta_c: &Array1<T>) -> Array2<T> {
    let (parts, p) = x.dim();
    let mut cat = Array2::zeros((parts, p + BETA_DIM));
    cat.slice_mut(ndarray::s![.., ..p]).assign(x);
    for row in 0..parts {
        for bc in 0..BETA_DIM {
            cat[[row, p + bc]] = beta_c[bc];
        }
    }
    cat
}

#[derive(Debug, Clone)]
pub struct AwarenessInjector<T: Scalar> {
    pub variant: Variant,
    /// Channel count of the EARLY_3D feature this injector accepts.
    pub early_channels: usize,
    /// Output channels of the learnable conv (equals early_channels unless
    /// the wide-channel ablation is enabled).
    pub conv_out_channels: usize,
    /// Part embedding width at DEEP_FLAT.
    pub part_dim: usize,
    conv: Option<Conv3d<T>>,
    affine1: Option<Linear<T>>,
    affine2: Option<Linear<T>>,
}

/// Trace of one early-hook application, kept for backprop.
pub struct EarlyTrace<T: Scalar> {
    concat_in: Option<Array4<T>>,
}

/// Trace of one deep-hook application.
pub struct DeepTrace<T: Scalar> {
    concat_in: Array2<T>,
    pre_relu: Option<Array2<T>>,
    hidden: Option<Array2<T>>,
}

/// Accumulated parameter gradients, mirroring the injector's layout.
#[derive(Debug, Clone)]
pub struct InjectorGrads<T: Scalar> {
    pub conv_w: Option<ndarray::Array5<T>>,
    pub conv_b: Option<Array1<T>>,
    pub aff1_w: Option<Array2<T>>,
    pub aff1_b: Option<Array1<T>>,
    pub aff2_w: Option<Array2<T>>,
    pub aff2_b: Option<Array1<T>>,
}

impl<T: Scalar> InjectorGrads<T> {
    /// Gradients flattened in [`AwarenessInjector::params_flat`] order.
    /// Valid after a backward pass has populated every present layer.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if let (Some(w), Some(b)) = (&self.conv_w, &self.conv_b) {
            out.extend(w.iter().map(|v| v.to_f64_prim()));
            out.extend(b.iter().map(|v| v.to_f64_prim()));
        }
        for (w, b) in [(&self.aff1_w, &self.aff1_b), (&self.aff2_w, &self.aff2_b)] {
            if let (Some(w), Some(b)) = (w, b) {
                out.extend(w.iter().map(|v| v.to_f64_prim()));
                out.extend(b.iter().map(|v| v.to_f64_prim()));
            }
        }
        out
    }
}

/// Overwrite a tensor elementwise from a flat value stream.
pub(crate) fn fill<T: Scalar, D: ndarray::Dimension>(
    arr: &mut ndarray::Array<T, D>,
    vals: &mut impl Iterator<Item = f64>,
) {
    for v in arr.iter_mut() {
        *v = T::from_f64(vals.next().expect("flat parameter stream too short"));
    }
}

impl<T: Scalar> AwarenessInjector<T> {
    /// Build an injector for explicit dimensions. `conv_out` widens the
    /// learnable conv output for the "more channels" ablation; `None`
    /// keeps it equal to `early_channels`.
    pub fn new(
        variant: Variant,
        early_channels: usize,
        conv_out: Option<usize>,
        part_dim: usize,
        rng_seed: u64,
    ) -> Self {
        let mut rng = seed::rng(rng_seed);
        let conv_out_channels = conv_out.unwrap_or(early_channels);
        let conv = if matches!(variant, Variant::Learnable3dConv | Variant::ConvPlusDeferred) {
            Some(Conv3d::new(
                early_channels + BETA_DIM,
                conv_out_channels,
                3,
                1,
                &mut rng,
            ))
        } else {
            None
        };
        let affine1 = if variant.binds_deep() {
            Some(Linear::new(part_dim + BETA_DIM, part_dim, &mut rng))
        } else {
            None
        };
        let affine2 = if variant == Variant::ComplexDeferredConcat {
            Some(Linear::new(part_dim, part_dim, &mut rng))
        } else {
            None
        };
        Self {
            variant,
            early_channels,
            conv_out_channels: if variant.binds_early() {
                conv_out_channels
            } else {
                early_channels
            },
            part_dim,
            conv,
            affine1,
            affine2,
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        if let Some(c) = &self.conv {
            n += c.weight.len() + c.bias.len();
        }
        if let Some(a) = &self.affine1 {
            n += a.weight.len() + a.bias.len();
        }
        if let Some(a) = &self.affine2 {
            n += a.weight.len() + a.bias.len();
        }
        n
    }

    /// Apply at EARLY_3D. Returns the transformed map plus a trace.
    pub fn apply_early(
        &self,
        x: &Array4<T>,
        beta_t: &Array2<T>,
    ) -> Result<(Array4<T>, EarlyTrace<T>), AwarenessError> {
        let (c, f, _, _) = x.dim();
        if c != self.early_channels {
            return Err(AwarenessError::ChannelMismatch {
                got: c,
                want: self.early_channels,
            });
        }
        if beta_t.dim() != (f, BETA_DIM) {
            return Err(AwarenessError::ShapeMismatch(format!(
                "beta_t is {:?}, expected ({f}, {BETA_DIM})",
                beta_t.dim()
            )));
        }
        match self.variant {
            Variant::GuidedAdd => Ok((guided_add(x, beta_t)?, EarlyTrace { concat_in: None })),
            Variant::Learnable3dConv | Variant::ConvPlusDeferred => {
                let cat = concat_beta_channels(x, beta_t);
                let out = self.conv.as_ref().unwrap().forward(&cat);
                Ok((out, EarlyTrace { concat_in: Some(cat) }))
            }
            _ => Err(AwarenessError::HookMismatch(format!(
                "{} does not bind EARLY_3D",
                self.variant.as_str()
            ))),
        }
    }

    /// Backward through the early hook: gradient w.r.t. X plus parameter
    /// gradients accumulated into `grads`. Beta is a frozen constant; its
    /// gradient is discarded.
    pub fn early_backward(
        &self,
        trace: &EarlyTrace<T>,
        gy: &Array4<T>,
        grads: &mut InjectorGrads<T>,
    ) -> Array4<T> {
        match self.variant {
            Variant::GuidedAdd => gy.clone(),
            Variant::Learnable3dConv | Variant::ConvPlusDeferred => {
                let cat = trace.concat_in.as_ref().unwrap();
                let (g_cat, g_w, g_b) = self.conv.as_ref().unwrap().backward(cat, gy);
                *grads.conv_w.get_or_insert_with(|| {
                    ndarray::Array5::zeros(g_w.raw_dim())
                }) += &g_w;
                *grads.conv_b.get_or_insert_with(|| Array1::zeros(g_b.raw_dim())) += &g_b;
                g_cat
                    .slice(ndarray::s![..self.early_channels, .., .., ..])
                    .to_owned()
            }
            _ => unreachable!("early_backward on a deep-only injector"),
        }
    }

    /// Apply at DEEP_FLAT: per-part concat with beta_c, then the shared
    /// affine map(s).
    pub fn apply_deep(
        &self,
        x: &Array2<T>,
        beta_c: &Array1<T>,
    ) -> Result<(Array2<T>, DeepTrace<T>), AwarenessError> {
        let (_, p) = x.dim();
        if p != self.part_dim {
            return Err(AwarenessError::ShapeMismatch(format!(
                "part dim {p}, expected {}",
                self.part_dim
            )));
        }
        if beta_c.len() != BETA_DIM {
            return Err(AwarenessError::ShapeMismatch(format!(
                "beta_c length {}, expected {BETA_DIM}",
                beta_c.len()
            )));
        }
        if !self.variant.binds_deep() {
            return Err(AwarenessError::HookMismatch(format!(
                "{} does not bind DEEP_FLAT",
                self.variant.as_str()
            )));
        }
        let cat = concat_beta_parts(x, beta_c);
        let h1 = self.affine1.as_ref().unwrap().forward(&cat);
        match &self.affine2 {
            None => Ok((
                h1,
                DeepTrace {
                    concat_in: cat,
                    pre_relu: None,
                    hidden: None,
                },
            )),
            Some(a2) => {
                let act = relu(&h1);
                let out = a2.forward(&act);
                Ok((
                    out,
                    DeepTrace {
                        concat_in: cat,
                        pre_relu: Some(h1),
                        hidden: Some(act),
                    },
                ))
            }
        }
    }

    /// Backward through the deep hook; returns gradient w.r.t. X.
    pub fn deep_backward(
        &self,
        trace: &DeepTrace<T>,
        gy: &Array2<T>,
        grads: &mut InjectorGrads<T>,
    ) -> Array2<T> {
        let a1 = self.affine1.as_ref().unwrap();
        let g_h1 = match &self.affine2 {
            None => gy.clone(),
            Some(a2) => {
                let (g_act, g_w2, g_b2) = a2.backward(trace.hidden.as_ref().unwrap(), gy);
                *grads.aff2_w.get_or_insert_with(|| Array2::zeros(g_w2.raw_dim())) += &g_w2;
                *grads.aff2_b.get_or_insert_with(|| Array1::zeros(g_b2.raw_dim())) += &g_b2;
                relu_backward(trace.pre_relu.as_ref().unwrap(), &g_act)
            }
        };
        let (g_cat, g_w1, g_b1) = a1.backward(&trace.concat_in, &g_h1);
        *grads.aff1_w.get_or_insert_with(|| Array2::zeros(g_w1.raw_dim())) += &g_w1;
        *grads.aff1_b.get_or_insert_with(|| Array1::zeros(g_b1.raw_dim())) += &g_b1;
        g_cat.slice(ndarray::s![.., ..self.part_dim]).to_owned()
    }

    pub fn apply_gradients(&mut self, grads: &InjectorGrads<T>, lr: f64, cfg: &AdamConfig) {
        if let (Some(c), Some(gw), Some(gb)) = (self.conv.as_mut(), &grads.conv_w, &grads.conv_b) {
            c.weight.adam_step(gw, lr, cfg);
            c.bias.adam_step(gb, lr, cfg);
        }
        if let (Some(a), Some(gw), Some(gb)) = (self.affine1.as_mut(), &grads.aff1_w, &grads.aff1_b)
        {
            a.weight.adam_step(gw, lr, cfg);
            a.bias.adam_step(gb, lr, cfg);
        }
        if let (Some(a), Some(gw), Some(gb)) = (self.affine2.as_mut(), &grads.aff2_w, &grads.aff2_b)
        {
            a.weight.adam_step(gw, lr, cfg);
            a.bias.adam_step(gb, lr, cfg);
        }
    }

    /// Re-initialize the learnable layers to be exactly feature-preserving:
    /// the conv becomes a center-tap identity on the X channels (zero on the
    /// beta channels and any extra outputs), and the deferred affines
    /// reproduce X while ignoring beta. An injected model then starts at
    /// baseline parity and learns beta usage as a correction. Relies on the
    /// deep features being non-negative so the complex variant's inner ReLU
    /// is transparent at initialization.
    pub fn init_identity(&mut self) {
        if let Some(c) = &mut self.conv {
            let (oc, _, _, _, _) = c.weight.value.dim();
            c.weight.value.fill(T::zero());
            c.bias.value.fill(T::zero());
            for o in 0..oc.min(self.early_channels) {
                c.weight.value[[o, o, 1, 1, 1]] = T::one();
            }
        }
        if let Some(a) = &mut self.affine1 {
            let (out, _) = a.weight.value.dim();
            a.weight.value.fill(T::zero());
            a.bias.value.fill(T::zero());
            for o in 0..out {
                a.weight.value[[o, o]] = T::one();
            }
        }
        if let Some(a) = &mut self.affine2 {
            let (out, _) = a.weight.value.dim();
            a.weight.value.fill(T::zero());
            a.bias.value.fill(T::zero());
            for o in 0..out {
                a.weight.value[[o, o]] = T::one();
            }
        }
    }

    /// Parameter values flattened in checkpoint order (conv, affine1,
    /// affine2; weight before bias). For gradient diagnostics.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if let Some(c) = &self.conv {
            out.extend(c.weight.value.iter().map(|v| v.to_f64_prim()));
            out.extend(c.bias.value.iter().map(|v| v.to_f64_prim()));
        }
        for a in [&self.affine1, &self.affine2].into_iter().flatten() {
            out.extend(a.weight.value.iter().map(|v| v.to_f64_prim()));
            out.extend(a.bias.value.iter().map(|v| v.to_f64_prim()));
        }
        out
    }

    /// Overwrite parameters from an iterator in [`Self::params_flat`] order.
    pub fn set_params_flat(&mut self, vals: &mut impl Iterator<Item = f64>) {
        if let Some(c) = &mut self.conv {
            fill(&mut c.weight.value, vals);
            fill(&mut c.bias.value, vals);
        }
        for a in [&mut self.affine1, &mut self.affine2].into_iter().flatten() {
            fill(&mut a.weight.value, vals);
            fill(&mut a.bias.value, vals);
        }
    }

    /// Serialize parameters into a checkpoint under the `injector.` namespace.
    pub fn add_to_checkpoint(&self, ck: &mut crate::checkpoint::Checkpoint) {
        if let Some(c) = &self.conv {
            ck.insert("injector.conv.weight", &c.weight.value.mapv(|v| v.to_f64_prim() as f32));
            ck.insert("injector.conv.bias", &c.bias.value.mapv(|v| v.to_f64_prim() as f32));
        }
        if let Some(a) = &self.affine1 {
            ck.insert("injector.affine1.weight", &a.weight.value.mapv(|v| v.to_f64_prim() as f32));
            ck.insert("injector.affine1.bias", &a.bias.value.mapv(|v| v.to_f64_prim() as f32));
        }
        if let Some(a) = &self.affine2 {
            ck.insert("injector.affine2.weight", &a.weight.value.mapv(|v| v.to_f64_prim() as f32));
            ck.insert("injector.affine2.bias", &a.bias.value.mapv(|v| v.to_f64_prim() as f32));
        }
    }

    pub fn load_from_checkpoint(
        &mut self,
        ck: &crate::checkpoint::Checkpoint,
    ) -> Result<(), crate::checkpoint::CheckpointError> {
        if let Some(c) = &mut self.conv {
            c.weight.value = ck
                .get_shaped("injector.conv.weight", c.weight.value.raw_dim())?
                .mapv(|v| T::from_f64(v as f64));
            c.bias.value = ck
                .get_shaped("injector.conv.bias", c.bias.value.raw_dim())?
                .mapv(|v| T::from_f64(v as f64));
        }
        if let Some(a) = &mut self.affine1 {
            a.weight.value = ck
                .get_shaped("injector.affine1.weight", a.weight.value.raw_dim())?
                .mapv(|v| T::from_f64(v as f64));
            a.bias.value = ck
                .get_shaped("injector.affine1.bias", a.bias.value.raw_dim())?
                .mapv(|v| T::from_f64(v as f64));
        }
        if let Some(a) = &mut self.affine2 {
            a.weight.value = ck
                .get_shaped("injector.affine2.weight", a.weight.value.raw_dim())?
                .mapv(|v| T::from_f64(v as f64));
            a.bias.value = ck
                .get_shaped("injector.affine2.bias", a.bias.value.raw_dim())?
                .mapv(|v| T::from_f64(v as f64));
        }
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn conv_mut(&mut self) -> &mut Conv3d<T> {
        self.conv.as_mut().unwrap()
    }

    #[cfg(test)]
    pub(crate) fn affine1_mut(&mut self) -> &mut Linear<T> {
        self.affine1.as_mut().unwrap()
    }

    #[cfg(test)]
    pub(crate) fn affine2_mut(&mut self) -> &mut Linear<T> {
        self.affine2.as_mut().unwrap()
    }
}

/// Construct an injector against a backbone's declared hooks, validating
/// the binding rules: early-hook variants require the EARLY_3D channel
/// count to match the detector feature width exactly.
pub fn make_injector<T: Scalar>(
    variant: Variant,
    hooks: &[HookPoint],
    rng_seed: u64,
) -> Result<AwarenessInjector<T>, AwarenessError> {
    make_injector_with_conv_out(variant, hooks, None, rng_seed)
}

/// As `make_injector`, with the wide-channel ablation knob for the
/// learnable conv's output width.
pub fn make_injector_with_conv_out<T: Scalar>(
    variant: Variant,
    hooks: &[HookPoint],
    conv_out: Option<usize>,
    rng_seed: u64,
) -> Result<AwarenessInjector<T>, AwarenessError> {
    let early = hooks.iter().find_map(|h| match h {
        HookPoint::Early3d { channels } => Some(*channels),
        _ => None,
    });
    let deep = hooks.iter().find_map(|h| match h {
        HookPoint::DeepFlat { part_dim, .. } => Some(*part_dim),
        _ => None,
    });
    let early_channels = if variant.binds_early() {
        let c = early.ok_or_else(|| {
            AwarenessError::HookMismatch(format!(
                "{} requires an EARLY_3D hook",
                variant.as_str()
            ))
        })?;
        if c != BETA_DIM {
            return Err(AwarenessError::ChannelMismatch { got: c, want: BETA_DIM });
        }
        c
    } else {
        early.unwrap_or(BETA_DIM)
    };
    let part_dim = if variant.binds_deep() {
        deep.ok_or_else(|| {
            AwarenessError::HookMismatch(format!(
                "{} requires a DEEP_FLAT hook",
                variant.as_str()
            ))
        })?
    } else {
        deep.unwrap_or(0).max(1)
    };
    Ok(AwarenessInjector::new(
        variant,
        early_channels,
        conv_out,
        part_dim,
        rng_seed,
    ))
}
