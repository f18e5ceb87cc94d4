//! Coarse-to-fine segmentation head shared across scales.
//!
//! Every scale projects its input features to `F` channels, concatenates
//! them with the upsampled refined representation of the next coarser
//! scale (zeros at the coarsest) and refines with two 3×3 convolutions.
//! Only the finest representation is projected to logits.

pub mod adam;
pub mod checkpoint;
pub mod layers;

use ndarray::{concatenate, Array1, Array2, Array3, ArrayViewD, ArrayViewMutD, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::volume::Mask;
use layers::NormCache;

pub const DEFAULT_FEATURES: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct SegNetParams {
    pub in_w: Array2<f64>,
    pub in_b: Array1<f64>,
    pub in_gamma: Array1<f64>,
    pub in_beta: Array1<f64>,
    pub c1_w: Array2<f64>,
    pub c1_b: Array1<f64>,
    pub c1_gamma: Array1<f64>,
    pub c1_beta: Array1<f64>,
    pub c2_w: Array2<f64>,
    pub c2_b: Array1<f64>,
    pub c2_gamma: Array1<f64>,
    pub c2_beta: Array1<f64>,
    pub out_w: Array2<f64>,
    pub out_b: Array1<f64>,
}

pub const PARAM_NAMES: [&str; 14] = [
    "in_w", "in_b", "in_gamma", "in_beta", "c1_w", "c1_b", "c1_gamma", "c1_beta", "c2_w", "c2_b",
    "c2_gamma", "c2_beta", "out_w", "out_b",
];

fn uniform2(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = 1.0 / (cols as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

impl SegNetParams {
    /// Fan-in scaled uniform weights, zero biases, identity affine norms.
    pub fn init(in_channels: usize, features: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = features;
        SegNetParams {
            in_w: uniform2(&mut rng, f, in_channels),
            in_b: Array1::zeros(f),
            in_gamma: Array1::ones(f),
            in_beta: Array1::zeros(f),
            c1_w: uniform2(&mut rng, f, 9 * 2 * f),
            c1_b: Array1::zeros(f),
            c1_gamma: Array1::ones(f),
            c1_beta: Array1::zeros(f),
            c2_w: uniform2(&mut rng, f, 9 * f),
            c2_b: Array1::zeros(f),
            c2_gamma: Array1::ones(f),
            c2_beta: Array1::zeros(f),
            out_w: uniform2(&mut rng, 1, f),
            out_b: Array1::zeros(1),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_w.ncols()
    }

    pub fn features(&self) -> usize {
        self.in_w.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, mut t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn tensors(&self) -> Vec<(&'static str, ArrayViewD<'_, f64>)> {
        let views = [
            self.in_w.view().into_dyn(),
            self.in_b.view().into_dyn(),
            self.in_gamma.view().into_dyn(),
            self.in_beta.view().into_dyn(),
            self.c1_w.view().into_dyn(),
            self.c1_b.view().into_dyn(),
            self.c1_gamma.view().into_dyn(),
            self.c1_beta.view().into_dyn(),
            self.c2_w.view().into_dyn(),
            self.c2_b.view().into_dyn(),
            self.c2_gamma.view().into_dyn(),
            self.c2_beta.view().into_dyn(),
            self.out_w.view().into_dyn(),
            self.out_b.view().into_dyn(),
        ];
        PARAM_NAMES.into_iter().zip(views).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, ArrayViewMutD<'_, f64>)> {
        let views = [
            self.in_w.view_mut().into_dyn(),
            self.in_b.view_mut().into_dyn(),
            self.in_gamma.view_mut().into_dyn(),
            self.in_beta.view_mut().into_dyn(),
            self.c1_w.view_mut().into_dyn(),
            self.c1_b.view_mut().into_dyn(),
            self.c1_gamma.view_mut().into_dyn(),
            self.c1_beta.view_mut().into_dyn(),
            self.c2_w.view_mut().into_dyn(),
            self.c2_b.view_mut().into_dyn(),
            self.c2_gamma.view_mut().into_dyn(),
            self.c2_beta.view_mut().into_dyn(),
            self.out_w.view_mut().into_dyn(),
            self.out_b.view_mut().into_dyn(),
        ];
        PARAM_NAMES.into_iter().zip(views).collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// `self += alpha * other`.
    pub fn scaled_add(&mut self, alpha: f64, other: &SegNetParams) {
        for ((_, mut a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.scaled_add(alpha, &b);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter().map(|v| v * v).collect::<Vec<_>>())
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone)]
struct ScaleTrace {
    input: Array3<f64>,
    proj_pre: Array3<f64>,
    proj_norm: NormCache,
    prev_dim: (usize, usize),
    cat_dim: (usize, usize, usize),
    c1_cols: Array2<f64>,
    c1_pre: Array3<f64>,
    c1_norm: NormCache,
    c2_cols: Array2<f64>,
    c2_pre: Array3<f64>,
    c2_norm: NormCache,
}

/// Activations from [`seg_forward_traced`], consumed by [`seg_backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Coarsest scale first.
    scales: Vec<ScaleTrace>,
    refined: Array3<f64>,
}

fn check_inputs(features: &[Array3<f64>], params: &SegNetParams) -> Result<()> {
    if features.is_empty() {
        return Err(Error::Shape("no input scales".into()));
    }
    for (i, f) in features.iter().enumerate() {
        if f.dim().0 != params.in_channels() {
            return Err(Error::Shape(format!(
                "scale {i} has {} channels, the head expects {}",
                f.dim().0,
                params.in_channels()
            )));
        }
        if f.dim().1 == 0 || f.dim().2 == 0 {
            return Err(Error::Shape(format!("scale {i} is empty")));
        }
    }
    Ok(())
}

pub fn seg_forward(features: &[Array3<f64>], params: &SegNetParams) -> Result<Array2<f64>> {
    seg_forward_traced(features, params).map(|(l, _)| l)
}

/// Logits at the resolution of `features[0]`; features are ordered finest
/// first and processed coarsest first.
pub fn seg_forward_traced(
    features: &[Array3<f64>],
    params: &SegNetParams,
) -> Result<(Array2<f64>, ForwardTrace)> {
    check_inputs(features, params)?;
    let f = params.features();
    let mut prev: Option<Array3<f64>> = None;
    let mut scales = Vec::with_capacity(features.len());
    for x in features.iter().rev() {
        let (_, h, w) = x.dim();
        let x = x.as_standard_layout().into_owned();
        let proj_pre = layers::conv1x1(&x, &params.in_w, &params.in_b);
        let (proj, proj_norm) = layers::instance_norm(&layers::celu(&proj_pre), &params.in_gamma, &params.in_beta);
        let (up, prev_dim) = match &prev {
            Some(p) => (layers::upsample(p, h, w), (p.dim().1, p.dim().2)),
            None => (Array3::zeros((f, h, w)), (0, 0)),
        };
        let cat = concatenate(Axis(0), &[proj.view(), up.view()]).expect("matching extents");
        let cat_dim = cat.dim();
        let (c1_pre, c1_cols) = layers::conv3x3(&cat, &params.c1_w, &params.c1_b);
        let (a1, c1_norm) = layers::instance_norm(&layers::celu(&c1_pre), &params.c1_gamma, &params.c1_beta);
        let (c2_pre, c2_cols) = layers::conv3x3(&a1, &params.c2_w, &params.c2_b);
        let (a2, c2_norm) = layers::instance_norm(&layers::celu(&c2_pre), &params.c2_gamma, &params.c2_beta);
        scales.push(ScaleTrace {
            input: x,
            proj_pre,
            proj_norm,
            prev_dim,
            cat_dim,
            c1_cols,
            c1_pre,
            c1_norm,
            c2_cols,
            c2_pre,
            c2_norm,
        });
        prev = Some(a2);
    }
    let refined = prev.expect("at least one scale");
    let logits = layers::conv1x1(&refined, &params.out_w, &params.out_b)
        .index_axis_move(Axis(0), 0);
    Ok((logits, ForwardTrace { scales, refined }))
}

/// Parameter gradients and input gradients (finest first) for upstream
/// gradient `d_logits`.
pub fn seg_backward(
    params: &SegNetParams,
    trace: &ForwardTrace,
    d_logits: &Array2<f64>,
) -> (SegNetParams, Vec<Array3<f64>>) {
    let f = params.features();
    let mut grads = params.zeros_like();
    let g_out = d_logits.clone().insert_axis(Axis(0));
    let (mut g_refined, dw, db) = layers::conv1x1_backward(&trace.refined, &params.out_w, &g_out);
    grads.out_w += &dw;
    grads.out_b += &db;

    let mut d_inputs = Vec::with_capacity(trace.scales.len());
    for s in trace.scales.iter().rev() {
        let (g, dgam, dbet) = layers::instance_norm_backward(&s.c2_norm, &params.c2_gamma, &g_refined);
        grads.c2_gamma += &dgam;
        grads.c2_beta += &dbet;
        let g = layers::celu_backward(&s.c2_pre, &g);
        let a1_dim = (f, s.cat_dim.1, s.cat_dim.2);
        let (g, dw, db) = layers::conv3x3_backward(&s.c2_cols, a1_dim, &params.c2_w, &g);
        grads.c2_w += &dw;
        grads.c2_b += &db;

        let (g, dgam, dbet) = layers::instance_norm_backward(&s.c1_norm, &params.c1_gamma, &g);
        grads.c1_gamma += &dgam;
        grads.c1_beta += &dbet;
        let g = layers::celu_backward(&s.c1_pre, &g);
        let (g_cat, dw, db) = layers::conv3x3_backward(&s.c1_cols, s.cat_dim, &params.c1_w, &g);
        grads.c1_w += &dw;
        grads.c1_b += &db;

        let g_proj = g_cat.slice_axis(Axis(0), (0..f).into()).to_owned();
        let g_up = g_cat.slice_axis(Axis(0), (f..2 * f).into()).to_owned();

        let (g, dgam, dbet) = layers::instance_norm_backward(&s.proj_norm, &params.in_gamma, &g_proj);
        grads.in_gamma += &dgam;
        grads.in_beta += &dbet;
        let g = layers::celu_backward(&s.proj_pre, &g);
        let (d_in, dw, db) = layers::conv1x1_backward(&s.input, &params.in_w, &g);
        grads.in_w += &dw;
        grads.in_b += &db;
        d_inputs.push(d_in);

        if s.prev_dim != (0, 0) {
            g_refined = layers::upsample_backward(&g_up, s.prev_dim.0, s.prev_dim.1);
        }
    }
    (grads, d_inputs)
}

/// Mean softplus-form binary cross-entropy and its gradient w.r.t. logits.
pub fn bce_loss(logits: &Array2<f64>, mask: &Mask) -> Result<(f64, Array2<f64>)> {
    if logits.dim() != mask.dim() {
        return Err(Error::Shape(format!(
            "logits {:?} vs mask {:?}",
            logits.dim(),
            mask.dim()
        )));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(logits.dim());
    Zip::from(&mut grad)
        .and(logits)
        .and(mask)
        .for_each(|g, &l, &m| {
            let y = if m { 1.0 } else { 0.0 };
            loss += l.max(0.0) - l * y + (-l.abs()).exp().ln_1p();
            *g = (sigmoid(l) - y) / n;
        });
    Ok((loss / n, grad))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Foreground where `sigmoid(logit) > 0.5`, i.e. `logit > 0`.
pub fn predict_mask(logits: &Array2<f64>) -> Mask {
    logits.mapv(|l| l > 0.0)
}

/// Per-tensor agreement between analytic and central-difference gradients.
#[derive(Debug, Clone)]
pub struct GradientCheck {
    pub step: f64,
    /// `(name, norm-wise relative error, worst elementwise relative error)`.
    pub tensors: Vec<(&'static str, f64, f64)>,
}

impl GradientCheck {
    pub fn max_tensor_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.1).fold(0.0, f64::max)
    }

    pub fn max_element_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.2).fold(0.0, f64::max)
    }
}

/// Compare [`seg_backward`] against central differences of the BCE loss
/// for every parameter entry.
pub fn gradient_check(
    features: &[Array3<f64>],
    params: &SegNetParams,
    mask: &Mask,
    step: f64,
) -> Result<GradientCheck> {
    let loss = |p: &SegNetParams| -> Result<f64> { Ok(bce_loss(&seg_forward(features, p)?, mask)?.0) };
    let (logits, trace) = seg_forward_traced(features, params)?;
    let (_, dl) = bce_loss(&logits, mask)?;
    let (grads, _) = seg_backward(params, &trace, &dl);
    let mut tensors = Vec::new();
    for (ti, (name, g)) in grads.tensors().into_iter().enumerate() {
        let an: Vec<f64> = g.iter().copied().collect();
        let mut fd = Vec::with_capacity(an.len());
        for k in 0..an.len() {
            let probe = |d: f64| -> Result<f64> {
                let mut q = params.clone();
                q.tensors_mut()[ti].1.as_slice_mut().expect("contiguous")[k] += d;
                loss(&q)
            };
            fd.push((probe(step)? - probe(-step)?) / (2.0 * step));
        }
        let elem = an
            .iter()
            .zip(&fd)
            .map(|(&a, &b)| crate::gradcheck::relative_error(a, b, 1e-6))
            .fold(0.0, f64::max);
        tensors.push((name, crate::gradcheck::tensor_relative_error(&an, &fd), elem));
    }
    Ok(GradientCheck { step, tensors })
}
