//! Online encoder, EMA target encoder and predictor.
//!
//! Every network is a small [`Mlp`] with a hand-written backward pass. The
//! target encoder has no backward path at all: it is only ever evaluated
//! with [`Encoder::infer`] and moved by [`NetworkStack::ema_update`].

mod mlp;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use mlp::{Activation, GradientTape, Mlp, MlpSpec, Normalization};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// Widths of the whole stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackSpec {
    pub input_dim: usize,
    /// Hidden widths of the backbone. The backbone output is `feature_dim`
    /// wide and passes through the activation.
    pub backbone_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub projector_hidden: usize,
    /// Width of the embeddings every loss operates on.
    pub projection_dim: usize,
    pub predictor_hidden: usize,
    pub normalization: Normalization,
    /// Without a predictor the online projection is compared with the
    /// target directly (identity head).
    pub use_predictor: bool,
}

impl StackSpec {
    pub fn backbone(&self) -> MlpSpec {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.backbone_hidden);
        widths.push(self.feature_dim);
        MlpSpec::new(widths)
            .with_normalization(self.normalization)
            .with_activated_output(true)
    }

    pub fn projector(&self) -> MlpSpec {
        MlpSpec::new(vec![
            self.feature_dim,
            self.projector_hidden,
            self.projection_dim,
        ])
        .with_normalization(self.normalization)
    }

    pub fn predictor(&self) -> MlpSpec {
        MlpSpec::new(vec![
            self.projection_dim,
            self.predictor_hidden,
            self.projection_dim,
        ])
        .with_normalization(self.normalization)
    }
}

/// Backbone followed by a projection head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub backbone: Mlp,
    pub projector: Mlp,
}

/// Activations of an [`Encoder`]: backbone features and projections.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub features: Matrix,
    pub projection: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderTape {
    pub backbone: GradientTape,
    pub projector: GradientTape,
}

impl EncoderTape {
    pub fn zeros_like(enc: &Encoder) -> Self {
        Self {
            backbone: GradientTape::zeros_like(&enc.backbone),
            projector: GradientTape::zeros_like(&enc.projector),
        }
    }

    pub fn accumulate(&mut self, alpha: f64, other: &EncoderTape) -> Result<()> {
        self.backbone.accumulate(alpha, &other.backbone)?;
        self.projector.accumulate(alpha, &other.projector)
    }

    pub fn scale(&mut self, alpha: f64) {
        self.backbone.scale(alpha);
        self.projector.scale(alpha);
    }
}

impl Encoder {
    pub fn new(spec: &StackSpec, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            backbone: Mlp::new(spec.backbone(), rng)?,
            projector: Mlp::new(spec.projector(), rng)?,
        })
    }

    pub fn forward(&mut self, x: &Matrix) -> Result<EncoderOutput> {
        let features = self.backbone.forward(x)?;
        let projection = self.projector.forward(&features)?;
        Ok(EncoderOutput {
            features,
            projection,
        })
    }

    pub fn infer(&self, x: &Matrix) -> Result<EncoderOutput> {
        let features = self.backbone.infer(x)?;
        let projection = self.projector.infer(&features)?;
        Ok(EncoderOutput {
            features,
            projection,
        })
    }

    /// Backpropagates a gradient w.r.t. the projection of the last forward.
    pub fn backward(&self, d_projection: &Matrix) -> Result<(Matrix, EncoderTape)> {
        let (d_features, projector) = self.projector.backward(d_projection)?;
        let (dx, backbone) = self.backbone.backward(&d_features)?;
        Ok((dx, EncoderTape { backbone, projector }))
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.backbone.param_slices();
        v.extend(self.projector.param_slices());
        v
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.backbone.param_slices_mut();
        v.extend(self.projector.param_slices_mut());
        v
    }

    pub fn flatten_params(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    pub fn sgd_step(&mut self, tape: &EncoderTape, lr: f64) -> Result<()> {
        self.backbone.sgd_step(&tape.backbone, lr)?;
        self.projector.sgd_step(&tape.projector, lr)
    }
}

/// Gradients for everything gradient descent touches: the online encoder
/// and the predictor. There is deliberately no slot for the target.
#[derive(Clone, Debug, PartialEq)]
pub struct StackTape {
    pub online: EncoderTape,
    pub predictor: Option<GradientTape>,
}

impl StackTape {
    pub fn zeros_like(stack: &NetworkStack) -> Self {
        Self {
            online: EncoderTape::zeros_like(&stack.online),
            predictor: stack.predictor.as_ref().map(GradientTape::zeros_like),
        }
    }

    pub fn accumulate(&mut self, alpha: f64, other: &StackTape) -> Result<()> {
        self.online.accumulate(alpha, &other.online)?;
        match (&mut self.predictor, &other.predictor) {
            (Some(a), Some(b)) => a.accumulate(alpha, b),
            (None, None) => Ok(()),
            _ => Err(Error::InvalidArgument(
                "predictor gradient present on one side only".into(),
            )),
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.online.scale(alpha);
        if let Some(p) = &mut self.predictor {
            p.scale(alpha);
        }
    }

    /// Online encoder gradients followed by predictor gradients.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.online.backbone.flatten();
        v.extend(self.online.projector.flatten());
        if let Some(p) = &self.predictor {
            v.extend(p.flatten());
        }
        v
    }
}

/// Online encoder, EMA target encoder and predictor head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkStack {
    pub spec: StackSpec,
    pub online: Encoder,
    pub target: Encoder,
    pub predictor: Option<Mlp>,
    /// EMA coefficient of the target update, in `[0, 1)`.
    pub momentum: f64,
}

impl NetworkStack {
    /// The target starts as an exact copy of the online encoder.
    pub fn new(spec: StackSpec, momentum: f64, rng: &mut Rng) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::ConfigInvalid(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        let online = Encoder::new(&spec, rng)?;
        let predictor = if spec.use_predictor {
            Some(Mlp::new(spec.predictor(), rng)?)
        } else {
            None
        };
        Ok(Self {
            target: online.clone(),
            online,
            predictor,
            spec,
            momentum,
        })
    }

    /// `θ_target ← m·θ_target + (1−m)·θ_online`, elementwise.
    pub fn ema_update(&mut self) {
        let m = self.momentum;
        let online = self.online.param_slices();
        for (t, o) in self.target.param_slices_mut().into_iter().zip(online) {
            t.iter_mut()
                .zip(o)
                .for_each(|(t, o)| *t = m * *t + (1.0 - m) * o);
        }
    }

    /// Plain SGD on the online encoder and predictor.
    pub fn sgd_step(&mut self, tape: &StackTape, lr: f64, predictor_lr: f64) -> Result<()> {
        self.online.sgd_step(&tape.online, lr)?;
        match (&mut self.predictor, &tape.predictor) {
            (Some(p), Some(g)) => p.sgd_step(g, predictor_lr),
            (None, None) => Ok(()),
            _ => Err(Error::InvalidArgument(
                "predictor gradient does not match the stack".into(),
            )),
        }
    }
}

/// On-disk snapshot of a stack and the optimizer step counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub step: u64,
    pub epoch: usize,
    pub stack: NetworkStack,
}

impl Checkpoint {
    pub const FORMAT_VERSION: u32 = 1;

    pub fn new(stack: NetworkStack, step: u64, epoch: usize) -> Self {
        Self {
            format_version: Self::FORMAT_VERSION,
            step,
            epoch,
            stack,
        }
    }

    /// JSON text. Floats are written in shortest round-trip form, so
    /// [`Checkpoint::from_json`] restores every parameter bit for bit.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format_version != Self::FORMAT_VERSION {
            return Err(Error::ConfigInvalid(format!(
                "unsupported checkpoint version {}",
                ck.format_version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
