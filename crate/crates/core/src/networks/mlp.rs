use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

const BATCH_STD_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

/// Normalization applied to hidden layers before the activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    /// Per-feature standardization over the batch with a learnable scale
    /// and shift. Always uses the statistics of the batch being processed.
    BatchStandardize,
}

/// Shape of a fully-connected network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width followed by the output width of every linear layer.
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub normalization: Normalization,
    /// Apply normalization and activation after the last layer as well.
    pub activate_output: bool,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>) -> Self {
        Self {
            widths,
            activation: Activation::Relu,
            normalization: Normalization::None,
            activate_output: false,
        }
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    pub fn with_activated_output(mut self, activate: bool) -> Self {
        self.activate_output = activate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::ConfigInvalid(
                "an MLP needs at least an input and an output width".into(),
            ));
        }
        if self.widths.contains(&0) {
            return Err(Error::ConfigInvalid("MLP widths must be positive".into()));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    fn layer_is_hidden(&self, layer: usize) -> bool {
        layer + 2 < self.widths.len() || self.activate_output
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct Layer {
    /// `out × in`
    pub(crate) weight: Matrix,
    pub(crate) bias: Vec<f64>,
    /// Present iff the layer is hidden and batch standardization is on.
    pub(crate) norm: Option<BatchStd>,
    pub(crate) activated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct BatchStd {
    pub(crate) scale: Vec<f64>,
    pub(crate) shift: Vec<f64>,
}

#[derive(Clone, Debug)]
struct LayerCache {
    input: Matrix,
    /// Standardized pre-activation and per-feature inverse std.
    standardized: Option<(Matrix, Vec<f64>)>,
    /// Value fed into the activation.
    pre_activation: Matrix,
}

/// Gradients for every parameter of one [`Mlp`], in layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientTape {
    pub(crate) layers: Vec<LayerGrad>,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct LayerGrad {
    pub(crate) weight: Matrix,
    pub(crate) bias: Vec<f64>,
    pub(crate) norm: Option<(Vec<f64>, Vec<f64>)>,
}

impl GradientTape {
    pub fn zeros_like(net: &Mlp) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| LayerGrad {
                weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                bias: vec![0.0; l.bias.len()],
                norm: l
                    .norm
                    .as_ref()
                    .map(|n| (vec![0.0; n.scale.len()], vec![0.0; n.shift.len()])),
            })
            .collect();
        Self { layers }
    }

    pub fn zero(&mut self) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// `self += alpha * other`; shapes must match.
    pub fn accumulate(&mut self, alpha: f64, other: &GradientTape) -> Result<()> {
        let theirs = other.slices();
        let mine = self.slices_mut();
        if mine.len() != theirs.len() {
            return Err(Error::DimMismatch {
                expected: mine.len(),
                got: theirs.len(),
            });
        }
        for (a, b) in mine.into_iter().zip(theirs) {
            if a.len() != b.len() {
                return Err(Error::DimMismatch {
                    expected: a.len(),
                    got: b.len(),
                });
            }
            a.iter_mut().zip(b).for_each(|(x, y)| *x += alpha * y);
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    /// Parameter gradient arrays in the same order as [`Mlp::param_slices`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weight.as_slice());
            out.push(l.bias.as_slice());
            if let Some((s, t)) = &l.norm {
                out.push(s.as_slice());
                out.push(t.as_slice());
            }
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
            if let Some((s, t)) = &mut l.norm {
                out.push(s.as_mut_slice());
                out.push(t.as_mut_slice());
            }
        }
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }
}

/// Fully-connected network with a cached forward pass for backprop.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mlp {
    spec: MlpSpec,
    pub(crate) layers: Vec<Layer>,
    #[serde(skip)]
    cache: Option<Vec<LayerCache>>,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.layers == other.layers
    }
}

impl Mlp {
    /// Weights and biases uniform in `±1/√fan_in`; normalization scale 1,
    /// shift 0.
    pub fn new(spec: MlpSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.widths.len() - 1);
        for (i, pair) in spec.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weight = Matrix::from_fn(fan_out, fan_in, |_, _| rng.uniform_range(-bound, bound));
            let bias = (0..fan_out).map(|_| rng.uniform_range(-bound, bound)).collect();
            let hidden = spec.layer_is_hidden(i);
            let norm = (hidden && spec.normalization == Normalization::BatchStandardize).then(|| {
                BatchStd {
                    scale: vec![1.0; fan_out],
                    shift: vec![0.0; fan_out],
                }
            });
            layers.push(Layer {
                weight,
                bias,
                norm,
                activated: hidden,
            });
        }
        Ok(Self {
            spec,
            layers,
            cache: None,
        })
    }

    /// Linear map `x ↦ x·Wᵀ + b` as a single-layer network.
    pub fn linear(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::DimMismatch {
                expected: weight.rows(),
                got: bias.len(),
            });
        }
        let spec = MlpSpec::new(vec![weight.cols(), weight.rows()]);
        Ok(Self {
            spec,
            layers: vec![Layer {
                weight,
                bias,
                norm: None,
                activated: false,
            }],
            cache: None,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    /// Forward pass that records the activations needed by [`Mlp::backward`].
    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        let (out, cache) = self.run(x, true)?;
        self.cache = cache;
        Ok(out)
    }

    /// Forward pass without recording anything.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.run(x, false)?.0)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    fn run(&self, x: &Matrix, record: bool) -> Result<(Matrix, Option<Vec<LayerCache>>)> {
        if x.cols() != self.spec.input_width() {
            return Err(Error::DimMismatch {
                expected: self.spec.input_width(),
                got: x.cols(),
            });
        }
        let mut caches = record.then(|| Vec::with_capacity(self.layers.len()));
        let mut h = x.clone();
        for layer in &self.layers {
            let mut z = h.matmul_t(&layer.weight)?;
            for r in 0..z.rows() {
                z.row_mut(r)
                    .iter_mut()
                    .zip(&layer.bias)
                    .for_each(|(v, b)| *v += b);
            }
            let mut standardized = None;
            if let Some(bn) = &layer.norm {
                let (xhat, inv_std) = standardize_columns(&z);
                let mut y = xhat.clone();
                for r in 0..y.rows() {
                    for ((v, s), t) in y.row_mut(r).iter_mut().zip(&bn.scale).zip(&bn.shift) {
                        *v = *v * s + t;
                    }
                }
                standardized = Some((xhat, inv_std));
                z = y;
            }
            let out = if layer.activated {
                let mut a = z.clone();
                a.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
                a
            } else {
                z.clone()
            };
            if let Some(c) = caches.as_mut() {
                c.push(LayerCache {
                    input: h,
                    standardized,
                    pre_activation: z,
                });
            }
            h = out;
        }
        Ok((h, caches))
    }

    /// Backpropagates `upstream` (gradient of a scalar loss w.r.t. the
    /// output of the last [`Mlp::forward`]) to the input and parameters.
    pub fn backward(&self, upstream: &Matrix) -> Result<(Matrix, GradientTape)> {
        let caches = self.cache.as_ref().ok_or(Error::NoForwardState)?;
        let out_rows = caches.first().map_or(0, |c| c.input.rows());
        if upstream.rows() != out_rows || upstream.cols() != self.spec.output_width() {
            return Err(Error::DimMismatch {
                expected: out_rows * self.spec.output_width(),
                got: upstream.rows() * upstream.cols(),
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = upstream.clone();
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            if layer.activated {
                for (gv, &pv) in g
                    .as_mut_slice()
                    .iter_mut()
                    .zip(cache.pre_activation.as_slice())
                {
                    if pv <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            let mut norm_grad = None;
            if let (Some(bn), Some((xhat, inv_std))) = (&layer.norm, &cache.standardized) {
                let (dz, dscale, dshift) = batch_std_backward(&g, xhat, inv_std, &bn.scale);
                norm_grad = Some((dscale, dshift));
                g = dz;
            }
            let dweight = g.t_matmul(&cache.input)?;
            let mut dbias = vec![0.0; layer.bias.len()];
            for row in g.row_iter() {
                dbias.iter_mut().zip(row).for_each(|(d, v)| *d += v);
            }
            let dinput = g.matmul(&layer.weight)?;
            grads.push(LayerGrad {
                weight: dweight,
                bias: dbias,
                norm: norm_grad,
            });
            g = dinput;
        }
        grads.reverse();
        Ok((g, GradientTape { layers: grads }))
    }

    /// Parameter arrays in a fixed order: per layer weight, bias, then
    /// normalization scale and shift when present.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weight.as_slice());
            out.push(l.bias.as_slice());
            if let Some(n) = &l.norm {
                out.push(n.scale.as_slice());
                out.push(n.shift.as_slice());
            }
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
            if let Some(n) = &mut l.norm {
                out.push(n.scale.as_mut_slice());
                out.push(n.shift.as_mut_slice());
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn flatten_params(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let total = self.num_params();
        if flat.len() != total {
            return Err(Error::DimMismatch {
                expected: total,
                got: flat.len(),
            });
        }
        let mut offset = 0;
        for s in self.param_slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        self.cache = None;
        Ok(())
    }

    /// `θ ← θ − lr·grad`.
    pub fn sgd_step(&mut self, tape: &GradientTape, lr: f64) -> Result<()> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        let grads = tape.slices();
        let params = self.param_slices_mut();
        if grads.len() != params.len() {
            return Err(Error::DimMismatch {
                expected: params.len(),
                got: grads.len(),
            });
        }
        for (p, g) in params.into_iter().zip(grads) {
            if p.len() != g.len() {
                return Err(Error::DimMismatch {
                    expected: p.len(),
                    got: g.len(),
                });
            }
            p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
        }
        Ok(())
    }
}

fn standardize_columns(z: &Matrix) -> (Matrix, Vec<f64>) {
    let (n, d) = z.shape();
    let nf = n as f64;
    let mut mean = vec![0.0; d];
    for row in z.row_iter() {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / nf);
    }
    let mut var = vec![0.0; d];
    for row in z.row_iter() {
        var.iter_mut()
            .zip(row)
            .zip(&mean)
            .for_each(|((s, v), m)| *s += (v - m) * (v - m) / nf);
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCH_STD_EPS).sqrt()).collect();
    let xhat = Matrix::from_fn(n, d, |r, c| (z.get(r, c) - mean[c]) * inv_std[c]);
    (xhat, inv_std)
}

fn batch_std_backward(
    dy: &Matrix,
    xhat: &Matrix,
    inv_std: &[f64],
    scale: &[f64],
) -> (Matrix, Vec<f64>, Vec<f64>) {
    let (n, d) = dy.shape();
    let nf = n as f64;
    let mut dscale = vec![0.0; d];
    let mut dshift = vec![0.0; d];
    let mut sum_dxhat = vec![0.0; d];
    let mut sum_dxhat_xhat = vec![0.0; d];
    for r in 0..n {
        for c in 0..d {
            let g = dy.get(r, c);
            let xh = xhat.get(r, c);
            dscale[c] += g * xh;
            dshift[c] += g;
            let dxh = g * scale[c];
            sum_dxhat[c] += dxh;
            sum_dxhat_xhat[c] += dxh * xh;
        }
    }
    let dz = Matrix::from_fn(n, d, |r, c| {
        let dxh = dy.get(r, c) * scale[c];
        inv_std[c] / nf * (nf * dxh - sum_dxhat[c] - xhat.get(r, c) * sum_dxhat_xhat[c])
    });
    (dz, dscale, dshift)
}
