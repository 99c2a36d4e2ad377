//! Reference segmentation network: a small fully convolutional
//! encoder-decoder with three stride-2 encoder stages and three
//! nearest-upsampled decoder stages, ending in a 1x1 class head. Forward and
//! backward passes are written out explicitly over an im2col + GEMM core so
//! gradients are available without an autodiff framework.
//!
//! Features are carried channel-first (C, H, W); the public boundary
//! converts to the H×W×C layout used by the rest of the crate.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array3, ArrayD, IxDyn};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::adapt::ParameterSnapshot;
use crate::error::{Error, Result};
use crate::rng;
use crate::segcore::{ImageTensor, LogitMap};

/// Every spatial size handled by the network must divide by this (three
/// stride-2 stages).
pub const SIZE_MULTIPLE: usize = 8;

/// Architecture description: class count, encoder widths, expected input
/// size, and the parameter-initialization seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegModelSpec {
    pub num_classes: usize,
    pub widths: [usize; 3],
    pub input_size: (usize, usize),
    pub init_seed: u64,
}

impl Default for SegModelSpec {
    fn default() -> Self {
        Self {
            num_classes: 5,
            widths: [12, 24, 48],
            input_size: (64, 64),
            init_seed: 0,
        }
    }
}

impl SegModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.num_classes > 255 {
            return Err(Error::config("num_classes must lie in [2, 255]"));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::config("stage widths must be positive"));
        }
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % SIZE_MULTIPLE != 0 || w % SIZE_MULTIPLE != 0 {
            return Err(Error::config(format!(
                "input size must be a positive multiple of {SIZE_MULTIPLE}, got {h}x{w}"
            )));
        }
        Ok(())
    }

    fn layers(&self) -> Vec<LayerDef> {
        let [w0, w1, w2] = self.widths;
        vec![
            LayerDef::new("enc1", 3, w0, 3, 2, true, false),
            LayerDef::new("enc2", w0, w1, 3, 2, true, false),
            LayerDef::new("enc3", w1, w2, 3, 2, true, false),
            LayerDef::new("mid", w2, w2, 3, 1, true, false),
            LayerDef::new("dec3", w2, w1, 3, 1, true, true),
            LayerDef::new("dec2", w1, w0, 3, 1, true, true),
            LayerDef::new("dec1", w0, w0, 3, 1, true, true),
            LayerDef::new("head", w0, self.num_classes, 1, 1, false, false),
        ]
    }

    /// Parameter names in snapshot order.
    pub fn parameter_names(&self) -> Vec<String> {
        self.layers()
            .iter()
            .flat_map(|l| [format!("{}.weight", l.name), format!("{}.bias", l.name)])
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers()
            .iter()
            .map(|l| l.cout * l.cin * l.k * l.k + l.cout)
            .sum()
    }

    /// He-normal initialized parameters, deterministic in `init_seed`.
    pub fn init_parameters(&self) -> Result<ParameterSnapshot> {
        self.validate()?;
        let mut entries = Vec::new();
        for (ix, layer) in self.layers().iter().enumerate() {
            let fan_in = (layer.cin * layer.k * layer.k) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            let mut r = rng::stream(self.init_seed, "model-init", &[ix as u64]);
            let weight = ArrayD::from_shape_fn(
                IxDyn(&[layer.cout, layer.cin, layer.k, layer.k]),
                |_| normal.sample(&mut r),
            );
            entries.push((format!("{}.weight", layer.name), weight));
            entries.push((
                format!("{}.bias", layer.name),
                ArrayD::zeros(IxDyn(&[layer.cout])),
            ));
        }
        ParameterSnapshot::new(entries)
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerDef {
    name: &'static str,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    relu: bool,
    upsample_after: bool,
}

impl LayerDef {
    fn new(
        name: &'static str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        relu: bool,
        upsample_after: bool,
    ) -> Self {
        Self {
            name,
            cin,
            cout,
            k,
            stride,
            relu,
            upsample_after,
        }
    }

    fn pad(&self) -> usize {
        self.k / 2
    }
}

struct LayerParams {
    weight: Array2<f64>, // (cout, cin*k*k)
    bias: Array1<f64>,
}

/// A network instantiated from a parameter snapshot, ready to run.
pub struct Model {
    spec: SegModelSpec,
    defs: Vec<LayerDef>,
    params: Vec<LayerParams>,
}

/// Cached activations from a forward pass, consumed by [`Model::backward`].
pub struct ForwardTrace {
    /// Input to each conv layer, channel-first.
    inputs: Vec<Array3<f64>>,
    /// Post-ReLU conv output of each layer (before any upsampling).
    outputs: Vec<Array3<f64>>,
}

/// Parameter and optional input gradients from a backward pass.
pub struct Gradients {
    pub params: ParameterSnapshot,
    pub input: Option<Array3<f64>>, // (H, W, 3) layout, like ImageTensor
}

impl Model {
    pub fn new(spec: &SegModelSpec, snapshot: &ParameterSnapshot) -> Result<Self> {
        spec.validate()?;
        let defs = spec.layers();
        let mut params = Vec::with_capacity(defs.len());
        for def in &defs {
            let weight = snapshot.get(&format!("{}.weight", def.name))?;
            let bias = snapshot.get(&format!("{}.bias", def.name))?;
            let expect_w = [def.cout, def.cin, def.k, def.k];
            if weight.shape() != expect_w {
                return Err(Error::ShapeMismatch {
                    context: "model weight",
                    expected: format!("{expect_w:?}"),
                    actual: format!("{:?}", weight.shape()),
                });
            }
            if bias.shape() != [def.cout] {
                return Err(Error::ShapeMismatch {
                    context: "model bias",
                    expected: format!("[{}]", def.cout),
                    actual: format!("{:?}", bias.shape()),
                });
            }
            let weight2d = weight
                .to_owned()
                .into_shape_with_order((def.cout, def.cin * def.k * def.k))
                .expect("weight reshape");
            let bias1d = bias
                .to_owned()
                .into_shape_with_order(def.cout)
                .expect("bias reshape");
            params.push(LayerParams {
                weight: weight2d,
                bias: bias1d,
            });
        }
        Ok(Self {
            spec: *spec,
            defs,
            params,
        })
    }

    pub fn spec(&self) -> &SegModelSpec {
        &self.spec
    }

    fn check_input(&self, image: &ImageTensor) -> Result<()> {
        let expected = self.spec.input_size;
        if (image.height(), image.width()) != expected {
            return Err(Error::ShapeMismatch {
                context: "model input",
                expected: format!("{}x{}", expected.0, expected.1),
                actual: format!("{}x{}", image.height(), image.width()),
            });
        }
        Ok(())
    }

    /// Forward pass returning logits and the trace needed for backward.
    pub fn forward_traced(&self, image: &ImageTensor) -> Result<(LogitMap, ForwardTrace)> {
        self.check_input(image)?;
        let mut feat = hwc_to_chw(image.pixels());
        let mut inputs = Vec::with_capacity(self.defs.len());
        let mut outputs = Vec::with_capacity(self.defs.len());
        for (def, p) in self.defs.iter().zip(&self.params) {
            inputs.push(feat.clone());
            let mut out = conv_forward(&feat, &p.weight, &p.bias, def);
            if def.relu {
                out.mapv_inplace(|v| v.max(0.0));
            }
            outputs.push(out.clone());
            feat = if def.upsample_after {
                upsample2(&out)
            } else {
                out
            };
        }
        let logits = LogitMap::new(chw_to_hwc(&feat))?;
        Ok((logits, ForwardTrace { inputs, outputs }))
    }

    /// Forward pass without gradient bookkeeping.
    pub fn forward(&self, image: &ImageTensor) -> Result<LogitMap> {
        self.check_input(image)?;
        let mut feat = hwc_to_chw(image.pixels());
        for (def, p) in self.defs.iter().zip(&self.params) {
            let mut out = conv_forward(&feat, &p.weight, &p.bias, def);
            if def.relu {
                out.mapv_inplace(|v| v.max(0.0));
            }
            feat = if def.upsample_after {
                upsample2(&out)
            } else {
                out
            };
        }
        LogitMap::new(chw_to_hwc(&feat))
    }

    /// Backpropagates `d_logits` (H×W×C layout) through the trace, returning
    /// parameter gradients and, when `want_input_grad`, the gradient with
    /// respect to the input image.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        d_logits: &Array3<f64>,
        want_input_grad: bool,
    ) -> Result<Gradients> {
        let mut d_feat = hwc_to_chw(d_logits);
        let mut entries: Vec<(String, ArrayD<f64>)> = Vec::with_capacity(self.defs.len() * 2);
        for ix in (0..self.defs.len()).rev() {
            let def = &self.defs[ix];
            let p = &self.params[ix];
            if def.upsample_after {
                d_feat = downsample_sum2(&d_feat);
            }
            if def.relu {
                // kill gradient where the activation was clamped
                for (g, &o) in d_feat.iter_mut().zip(trace.outputs[ix].iter()) {
                    if o <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let need_dx = ix > 0 || want_input_grad;
            let (dw, db, dx) = conv_backward(&trace.inputs[ix], &p.weight, &d_feat, def, need_dx);
            entries.push((
                format!("{}.bias", def.name),
                db.into_dyn(),
            ));
            entries.push((
                format!("{}.weight", def.name),
                dw.into_shape_with_order(IxDyn(&[def.cout, def.cin, def.k, def.k]))
                    .expect("grad reshape")
                    .into_dyn(),
            ));
            if let Some(dx) = dx {
                d_feat = dx;
            } else {
                d_feat = Array3::zeros((0, 0, 0));
            }
        }
        entries.reverse();
        let input = want_input_grad.then(|| chw_to_hwc(&d_feat));
        Ok(Gradients {
            params: ParameterSnapshot::new(entries)?,
            input,
        })
    }
}

/// Runs the network described by `spec` with parameters from `params`.
/// Deterministic in `(params, image)`.
pub fn model_forward(
    params: &ParameterSnapshot,
    spec: &SegModelSpec,
    image: &ImageTensor,
) -> Result<LogitMap> {
    Model::new(spec, params)?.forward(image)
}

fn hwc_to_chw(x: &Array3<f64>) -> Array3<f64> {
    let permuted = x.view().permuted_axes([2, 0, 1]);
    let mut out = Array3::zeros(permuted.raw_dim());
    out.assign(&permuted);
    out
}

fn chw_to_hwc(x: &Array3<f64>) -> Array3<f64> {
    let permuted = x.view().permuted_axes([1, 2, 0]);
    let mut out = Array3::zeros(permuted.raw_dim());
    out.assign(&permuted);
    out
}

fn out_size(def: &LayerDef, h: usize, w: usize) -> (usize, usize) {
    let pad = def.pad();
    (
        (h + 2 * pad - def.k) / def.stride + 1,
        (w + 2 * pad - def.k) / def.stride + 1,
    )
}

/// Unrolls conv receptive fields into a (cin*k*k, out_h*out_w) matrix.
fn im2col(x: &Array3<f64>, def: &LayerDef, out_h: usize, out_w: usize) -> Array2<f64> {
    let (cin, h, w) = x.dim();
    let k = def.k;
    let pad = def.pad() as isize;
    let stride = def.stride;
    let mut cols = Array2::<f64>::zeros((cin * k * k, out_h * out_w));
    let xs = x.as_slice().expect("contiguous feature map");
    let cs = cols.as_slice_mut().expect("contiguous col buffer");
    for c in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst_base = row * out_h * out_w;
                for oy in 0..out_h {
                    let iy = (oy * stride + ky) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_base = (c * h + iy as usize) * w;
                    let dst_row = dst_base + oy * out_w;
                    if stride == 1 {
                        let shift = kx as isize - pad;
                        let ox_lo = (-shift).max(0) as usize;
                        let ox_hi = ((w as isize - shift).min(out_w as isize)).max(0) as usize;
                        if ox_lo < ox_hi {
                            let src_lo = (ox_lo as isize + shift) as usize;
                            cs[dst_row + ox_lo..dst_row + ox_hi].copy_from_slice(
                                &xs[src_base + src_lo..src_base + src_lo + (ox_hi - ox_lo)],
                            );
                        }
                    } else {
                        for ox in 0..out_w {
                            let ix = (ox * stride + kx) as isize - pad;
                            if (0..w as isize).contains(&ix) {
                                cs[dst_row + ox] = xs[src_base + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-adds a column matrix back onto an input-shaped gradient.
fn col2im(cols: &Array2<f64>, def: &LayerDef, cin: usize, h: usize, w: usize) -> Array3<f64> {
    let k = def.k;
    let pad = def.pad() as isize;
    let stride = def.stride;
    let (out_h, out_w) = out_size(def, h, w);
    let mut dx = Array3::<f64>::zeros((cin, h, w));
    let ds = dx.as_slice_mut().expect("contiguous grad buffer");
    let cs = cols.as_slice().expect("contiguous col buffer");
    for c in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src_base = row * out_h * out_w;
                for oy in 0..out_h {
                    let iy = (oy * stride + ky) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_base = (c * h + iy as usize) * w;
                    let src_row = src_base + oy * out_w;
                    for ox in 0..out_w {
                        let ix = (ox * stride + kx) as isize - pad;
                        if (0..w as isize).contains(&ix) {
                            ds[dst_base + ix as usize] += cs[src_row + ox];
                        }
                    }
                }
            }
        }
    }
    dx
}

fn conv_forward(x: &Array3<f64>, weight: &Array2<f64>, bias: &Array1<f64>, def: &LayerDef) -> Array3<f64> {
    let (_, h, w) = x.dim();
    let (out_h, out_w) = out_size(def, h, w);
    let cols = im2col(x, def, out_h, out_w);
    let mut out2d = Array2::<f64>::zeros((def.cout, out_h * out_w));
    general_mat_mul(1.0, weight, &cols, 0.0, &mut out2d);
    for (mut row, &b) in out2d.rows_mut().into_iter().zip(bias.iter()) {
        if b != 0.0 {
            row.mapv_inplace(|v| v + b);
        }
    }
    out2d
        .into_shape_with_order((def.cout, out_h, out_w))
        .expect("conv output reshape")
}

fn conv_backward(
    x: &Array3<f64>,
    weight: &Array2<f64>,
    d_out: &Array3<f64>,
    def: &LayerDef,
    need_dx: bool,
) -> (Array2<f64>, Array1<f64>, Option<Array3<f64>>) {
    let (cin, h, w) = x.dim();
    let (out_h, out_w) = out_size(def, h, w);
    let d2d = d_out
        .view()
        .into_shape_with_order((def.cout, out_h * out_w))
        .expect("grad reshape");
    let cols = im2col(x, def, out_h, out_w);

    let mut dw = Array2::<f64>::zeros(weight.raw_dim());
    general_mat_mul(1.0, &d2d, &cols.t(), 0.0, &mut dw);

    let db = d2d.sum_axis(ndarray::Axis(1));

    let dx = need_dx.then(|| {
        let mut dcols = Array2::<f64>::zeros(cols.raw_dim());
        general_mat_mul(1.0, &weight.t(), &d2d, 0.0, &mut dcols);
        col2im(&dcols, def, cin, h, w)
    });
    (dw, db, dx)
}

fn upsample2(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let mut out = Array3::<f64>::zeros((c, h * 2, w * 2));
    let xs = x.as_slice().expect("contiguous");
    let os = out.as_slice_mut().expect("contiguous");
    for ci in 0..c {
        for y in 0..h {
            let src = (ci * h + y) * w;
            let dst0 = (ci * 2 * h + 2 * y) * 2 * w;
            let dst1 = dst0 + 2 * w;
            for x_ in 0..w {
                let v = xs[src + x_];
                os[dst0 + 2 * x_] = v;
                os[dst0 + 2 * x_ + 1] = v;
                os[dst1 + 2 * x_] = v;
                os[dst1 + 2 * x_ + 1] = v;
            }
        }
    }
    out
}

fn downsample_sum2(d: &Array3<f64>) -> Array3<f64> {
    let (c, h2, w2) = d.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = Array3::<f64>::zeros((c, h, w));
    let ds = d.as_slice().expect("contiguous");
    let os = out.as_slice_mut().expect("contiguous");
    for ci in 0..c {
        for y in 0..h {
            let src0 = (ci * h2 + 2 * y) * w2;
            let src1 = src0 + w2;
            let dst = (ci * h + y) * w;
            for x_ in 0..w {
                os[dst + x_] = ds[src0 + 2 * x_]
                    + ds[src0 + 2 * x_ + 1]
                    + ds[src1 + 2 * x_]
                    + ds[src1 + 2 * x_ + 1];
            }
        }
    }
    out
}
