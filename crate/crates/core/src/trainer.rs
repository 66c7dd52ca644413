//! The training loop: alternating k-means pseudo-labeling of target
//! features with gradient steps on the combined positive-proximity and
//! cluster-dispersion objective.
//!
//! An epoch runs, in order: a pseudo-label refresh when the schedule asks
//! for one, the gradient steps over a seeded shuffle of the data, and an
//! evaluation pass that clusters the target features of the whole dataset.
//! Each gradient step is an SGD update of the online encoder and predictor
//! followed by one EMA update of the target.

use serde::{Deserialize, Serialize};

use crate::clustering::{
    assign_batch, cluster_pool, spherical_kmeans, KMeansParams, MemoryQueue, PseudoLabeling,
};
use crate::data::{augment_batch, AugmentSpec, Dataset};
use crate::error::{Error, Result};
use crate::losses::{cdr_surrogate, pip_mix, positive_alignment_loss, PositiveSampler, ViewPair};
use crate::metrics::{
    imbalance_ratio, preservation_rate, std_uniformity, MetricsReport, Partition, PartitionScores,
};
use crate::networks::{
    Checkpoint, Encoder, GradientTape, Mlp, NetworkStack, Normalization, StackSpec, StackTape,
};
use crate::numerics::{l2_normalize_rows, l2_normalize_rows_backward, Matrix, Rng};

/// Which target activations k-means clusters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSource {
    /// Backbone output.
    Encoder,
    /// Projection head output, the space the losses live in.
    Projector,
}

/// How the predictor's input is sampled around each anchor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositiveSampling {
    /// Interpolation towards the in-batch nearest neighbor.
    Pip,
    /// Additive Gaussian noise.
    Psa,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub tau: f64,
    pub sigma: f64,
    /// Weight of the positive-proximity term; the dispersion term gets `1 − w`.
    pub w: f64,
    /// EMA coefficient of the target network.
    pub momentum: f64,
    /// Pseudo labels are refreshed every `kmeans_every` epochs after warmup.
    pub kmeans_every: usize,
    pub k: usize,
    /// Learning-rate warmup length; the dispersion term is off until it ends.
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak learning rate is `lr_base · batch_size / 256`.
    pub lr_base: f64,
    pub predictor_lr_mult: f64,
    /// Momentum of the SGD optimizer (0 gives plain SGD).
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    /// 0 disables the memory queue.
    pub queue_capacity: usize,
    pub seed: u64,
    pub feature_source: FeatureSource,
    pub positive_sampling: PositiveSampling,
    pub use_predictor: bool,
    pub backbone_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub projector_hidden: usize,
    pub projection_dim: usize,
    pub predictor_hidden: usize,
    pub batch_norm: bool,
    pub augment: AugmentSpec,
    pub kmeans_n_init: usize,
    pub kmeans_max_iter: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            sigma: 0.001,
            w: 0.91,
            momentum: 0.996,
            kmeans_every: 1,
            k: 10,
            warmup_epochs: 20,
            epochs: 200,
            batch_size: 64,
            lr_base: 0.05,
            predictor_lr_mult: 10.0,
            sgd_momentum: 0.9,
            weight_decay: 0.0,
            queue_capacity: 0,
            seed: 0,
            feature_source: FeatureSource::Projector,
            positive_sampling: PositiveSampling::Pip,
            use_predictor: true,
            backbone_hidden: vec![64],
            feature_dim: 32,
            projector_hidden: 64,
            projection_dim: 8,
            predictor_hidden: 32,
            batch_norm: false,
            augment: AugmentSpec {
                noise_std: 0.05,
                mask_prob: 0.1,
                scale_jitter: 0.2,
            },
            kmeans_n_init: 5,
            kmeans_max_iter: 100,
        }
    }
}

impl TrainConfig {
    /// Settings of the committed 8-cluster synthetic benchmark.
    pub fn benchmark() -> Self {
        Self {
            k: 8,
            epochs: 200,
            batch_size: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::ConfigInvalid(msg));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return fail(format!("sigma must be non-negative, got {}", self.sigma));
        }
        if !(0.0..=1.0).contains(&self.w) {
            return fail(format!("w must lie in [0, 1], got {}", self.w));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.kmeans_every == 0 {
            return fail("kmeans_every must be at least 1".into());
        }
        if self.k < 2 {
            return fail(format!("K must be at least 2, got {}", self.k));
        }
        if self.batch_size < 2 {
            return fail(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(self.lr_base > 0.0 && self.lr_base.is_finite()) {
            return fail(format!("lr_base must be positive, got {}", self.lr_base));
        }
        if !(self.predictor_lr_mult > 0.0 && self.predictor_lr_mult.is_finite()) {
            return fail(format!(
                "predictor_lr_mult must be positive, got {}",
                self.predictor_lr_mult
            ));
        }
        if !(0.0..1.0).contains(&self.sgd_momentum) {
            return fail(format!("sgd_momentum must lie in [0, 1), got {}", self.sgd_momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        let widths = [
            self.feature_dim,
            self.projector_hidden,
            self.projection_dim,
            self.predictor_hidden,
        ];
        if widths.contains(&0) || self.backbone_hidden.contains(&0) {
            return fail("layer widths must be positive".into());
        }
        if self.kmeans_n_init == 0 || self.kmeans_max_iter == 0 {
            return fail("kmeans_n_init and kmeans_max_iter must be positive".into());
        }
        self.augment.validate()
    }

    pub fn stack_spec(&self, input_dim: usize) -> StackSpec {
        StackSpec {
            input_dim,
            backbone_hidden: self.backbone_hidden.clone(),
            feature_dim: self.feature_dim,
            projector_hidden: self.projector_hidden,
            projection_dim: self.projection_dim,
            predictor_hidden: self.predictor_hidden,
            normalization: if self.batch_norm {
                Normalization::BatchStandardize
            } else {
                Normalization::None
            },
            use_predictor: self.use_predictor,
        }
    }

    pub fn kmeans_params(&self) -> KMeansParams {
        KMeansParams {
            k: self.k,
            max_iter: self.kmeans_max_iter,
            tol: 1e-6,
            n_init: self.kmeans_n_init,
        }
    }

    pub fn loss_settings(&self) -> LossSettings {
        LossSettings {
            tau: self.tau,
            sigma: self.sigma,
            w: self.w,
            positive_sampling: self.positive_sampling,
        }
    }

    /// Whether the pseudo labels are refreshed at the start of `epoch`.
    pub fn refreshes_at(&self, epoch: usize) -> bool {
        epoch >= self.warmup_epochs && (epoch - self.warmup_epochs).is_multiple_of(self.kmeans_every)
    }

    /// Gradient steps per epoch on `n` points: full batches plus a final
    /// short batch when it holds at least two points.
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n / self.batch_size + usize::from(n % self.batch_size >= 2)
    }

    pub fn peak_lr(&self) -> f64 {
        self.lr_base * self.batch_size as f64 / 256.0
    }
}

/// Linear warmup to `peak` over `warmup_steps`, then cosine decay towards 0
/// at `total_steps`. Strictly positive for every step below `total_steps`.
pub fn learning_rate(step: usize, total_steps: usize, warmup_steps: usize, peak: f64) -> f64 {
    if step < warmup_steps {
        return peak * (step + 1) as f64 / warmup_steps as f64;
    }
    let span = total_steps.saturating_sub(warmup_steps).max(1) as f64;
    let progress = ((step - warmup_steps) as f64 / span).min(1.0);
    0.5 * peak * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Loss hyperparameters of one gradient step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSettings {
    pub tau: f64,
    pub sigma: f64,
    pub w: f64,
    pub positive_sampling: PositiveSampling,
}

/// Inputs of one step besides the networks.
#[derive(Clone, Copy, Debug)]
pub struct StepBatch<'a> {
    pub xa: &'a Matrix,
    pub xb: &'a Matrix,
    /// Pseudo labels of the batch; `None` before warmup ends, which turns
    /// the dispersion term off.
    pub labels: Option<&'a [usize]>,
    /// Gaussian draws for the two directions, used by [`PositiveSampling::Psa`].
    pub psa_noise: Option<(&'a Matrix, &'a Matrix)>,
}

/// Symmetrized loss values of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLoss {
    pub total: f64,
    pub pip: f64,
    /// 0 when the dispersion term is off.
    pub cdr: f64,
}

struct Direction {
    pip: f64,
    cdr: f64,
    tape: StackTape,
}

fn one_direction(
    stack: &mut NetworkStack,
    x_online: &Matrix,
    target_same: &Matrix,
    target_other: &Matrix,
    labels: Option<&[usize]>,
    settings: &LossSettings,
    noise: Option<&Matrix>,
) -> Result<Direction> {
    let projection = stack.online.forward(x_online)?.projection;
    let sampler = match settings.positive_sampling {
        PositiveSampling::Pip => PositiveSampler::Neighbor {
            sigma: settings.sigma,
        },
        PositiveSampling::Psa => PositiveSampler::Gaussian {
            sigma: settings.sigma,
            noise: noise
                .cloned()
                .ok_or_else(|| Error::InvalidArgument("Gaussian sampling needs noise draws".into()))?,
        },
    };
    let pip = positive_alignment_loss(stack.predictor.as_mut(), &projection, target_other, &sampler)?;
    let w = if labels.is_some() { settings.w } else { 1.0 };
    let mut d_projection = pip.loss.grad_za.scaled(w);
    let mut cdr_value = 0.0;
    if let Some(labels) = labels {
        let za = l2_normalize_rows(&projection)?;
        let pair = ViewPair::new(&za, target_other, Some(target_same))?;
        let cdr = cdr_surrogate(&pair, labels, settings.tau)?;
        cdr_value = cdr.value;
        let d_raw = l2_normalize_rows_backward(&projection, &za, &cdr.grad_za)?;
        d_projection.axpy(1.0 - w, &d_raw)?;
    }
    let (_, online) = stack.online.backward(&d_projection)?;
    let predictor = pip.predictor_tape.map(|mut t| {
        t.scale(w);
        t
    });
    Ok(Direction {
        pip: pip.loss.value,
        cdr: cdr_value,
        tape: StackTape { online, predictor },
    })
}

/// Symmetrized loss of one batch and its gradient w.r.t. the online encoder
/// and predictor. The target network is only read.
///
/// Each direction feeds one view through the online encoder and compares it
/// with the target embedding of the other view; the two directions are
/// averaged. Before warmup ends (`labels == None`) the objective is the
/// positive-proximity term alone.
pub fn loss_and_grads(
    stack: &mut NetworkStack,
    batch: &StepBatch<'_>,
    settings: &LossSettings,
) -> Result<(StepLoss, StackTape)> {
    if batch.xa.shape() != batch.xb.shape() {
        return Err(Error::DimMismatch {
            expected: batch.xa.rows() * batch.xa.cols(),
            got: batch.xb.rows() * batch.xb.cols(),
        });
    }
    if batch.xa.rows() < 2 {
        return Err(Error::BatchTooSmall {
            got: batch.xa.rows(),
            need: 2,
        });
    }
    let ta = l2_normalize_rows(&stack.target.infer(batch.xa)?.projection)?;
    let tb = l2_normalize_rows(&stack.target.infer(batch.xb)?.projection)?;
    let (na, nb) = match batch.psa_noise {
        Some((a, b)) => (Some(a), Some(b)),
        None => (None, None),
    };
    let ab = one_direction(stack, batch.xa, &ta, &tb, batch.labels, settings, na)?;
    let ba = one_direction(stack, batch.xb, &tb, &ta, batch.labels, settings, nb)?;
    let mut tape = ab.tape;
    tape.accumulate(1.0, &ba.tape)?;
    tape.scale(0.5);
    let pip = 0.5 * (ab.pip + ba.pip);
    let cdr = 0.5 * (ab.cdr + ba.cdr);
    let w = if batch.labels.is_some() { settings.w } else { 1.0 };
    Ok((
        StepLoss {
            total: w * pip + (1.0 - w) * cdr,
            pip,
            cdr,
        },
        tape,
    ))
}

/// ℓ2-normalized target activations of `x` from the chosen layer.
pub fn target_features(encoder: &Encoder, x: &Matrix, source: FeatureSource) -> Result<Matrix> {
    let out = encoder.infer(x)?;
    let feats = match source {
        FeatureSource::Encoder => out.features,
        FeatureSource::Projector => out.projection,
    };
    l2_normalize_rows(&feats)
}

/// Everything the loop mutates.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub stack: NetworkStack,
    /// Centroids of the last refresh; `None` until the first one.
    pub pseudo: Option<PseudoLabeling>,
    pub queue: MemoryQueue,
    /// Epochs completed.
    pub epoch: usize,
    /// Gradient steps taken.
    pub step: usize,
    /// Drives shuffling, augmentation and Gaussian sampling.
    pub rng: Rng,
    /// Drives the pseudo-label k-means.
    pub kmeans_rng: Rng,
    pub history: Vec<MetricsReport>,
    /// Pseudo-label refreshes performed.
    pub kmeans_runs: usize,
    /// Clustering of the target features after the last completed epoch.
    pub last_eval: Option<PseudoLabeling>,
    velocity: Option<StackTape>,
}

const INIT_STREAM: u64 = 1;
const DATA_STREAM: u64 = 2;
const KMEANS_STREAM: u64 = 3;
const EVAL_STREAM: u64 = 4;

/// Result of a finished run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    /// Final clusters: k-means on the target features of the final network.
    pub clusters: PseudoLabeling,
}

impl TrainOutcome {
    pub fn history(&self) -> &[MetricsReport] {
        &self.state.history
    }
}

/// Stepwise driver of a training run.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    data: &'a Dataset,
    state: TrainState,
}

impl<'a> Trainer<'a> {
    pub fn new(data: &'a Dataset, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if data.len() < cfg.k {
            return Err(Error::TooFewPoints {
                points: data.len(),
                k: cfg.k,
            });
        }
        if data.len() < 2 {
            return Err(Error::BatchTooSmall {
                got: data.len(),
                need: 2,
            });
        }
        let root = Rng::new(cfg.seed);
        let stack = NetworkStack::new(cfg.stack_spec(data.dim()), cfg.momentum, &mut root.fork(INIT_STREAM))?;
        let state = TrainState {
            stack,
            pseudo: None,
            queue: MemoryQueue::new(cfg.queue_capacity),
            epoch: 0,
            step: 0,
            rng: root.fork(DATA_STREAM),
            kmeans_rng: root.fork(KMEANS_STREAM),
            history: Vec::new(),
            kmeans_runs: 0,
            last_eval: None,
            velocity: None,
        };
        Ok(Self { cfg, data, state })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.epoch >= self.cfg.epochs
    }

    pub fn total_steps(&self) -> usize {
        self.cfg.epochs * self.cfg.steps_per_epoch(self.data.len())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.state.stack.clone(), self.state.step as u64, self.state.epoch)
    }

    /// Target features of the whole dataset in the clustering space.
    pub fn dataset_features(&self) -> Result<Matrix> {
        target_features(&self.state.stack.target, &self.data.features, self.cfg.feature_source)
    }

    /// Pseudo-label refresh: k-means over the target features of the whole
    /// dataset, pooled with the queue when it is enabled.
    pub fn first_m_step(&mut self) -> Result<()> {
        let feats = self.dataset_features()?;
        let pool = cluster_pool(&feats, &self.state.queue)?;
        let mut pseudo = spherical_kmeans(&pool, &self.cfg.kmeans_params(), &mut self.state.kmeans_rng)?;
        pseudo.assign.truncate(feats.rows());
        self.state.pseudo = Some(pseudo);
        self.state.kmeans_runs += 1;
        Ok(())
    }

    /// One gradient step on the rows `idx`.
    pub fn second_m_step(&mut self, idx: &[usize]) -> Result<StepLoss> {
        let cfg = &self.cfg;
        let state = &mut self.state;
        let x = self.data.features.select_rows(idx);
        let xa = augment_batch(&x, &cfg.augment, &mut state.rng);
        let xb = augment_batch(&x, &cfg.augment, &mut state.rng);
        let post_warmup = state.epoch >= cfg.warmup_epochs;

        let needs_clean = post_warmup || cfg.queue_capacity > 0;
        let clean = if needs_clean {
            Some(target_features(&state.stack.target, &x, cfg.feature_source)?)
        } else {
            None
        };
        let labels = match (&state.pseudo, &clean) {
            (Some(p), Some(c)) if post_warmup => Some(assign_batch(p, c)?),
            _ => None,
        };
        if let Some(c) = &clean {
            state.queue.push(c)?;
        }
        let noise = match cfg.positive_sampling {
            PositiveSampling::Psa => {
                let d = cfg.projection_dim;
                let a = Matrix::from_fn(x.rows(), d, |_, _| state.rng.normal());
                let b = Matrix::from_fn(x.rows(), d, |_, _| state.rng.normal());
                Some((a, b))
            }
            PositiveSampling::Pip => None,
        };
        let batch = StepBatch {
            xa: &xa,
            xb: &xb,
            labels: labels.as_deref(),
            psa_noise: noise.as_ref().map(|(a, b)| (a, b)),
        };
        let (loss, mut grad) = loss_and_grads(&mut state.stack, &batch, &cfg.loss_settings())?;
        if !loss.total.is_finite() {
            return Err(Error::NonFinite { index: state.step });
        }

        if cfg.weight_decay > 0.0 {
            add_weight_decay(&mut grad, &state.stack, cfg.weight_decay);
        }
        let update = match &mut state.velocity {
            Some(v) => {
                v.scale(cfg.sgd_momentum);
                v.accumulate(1.0, &grad)?;
                v.clone()
            }
            None => {
                state.velocity = Some(grad.clone());
                grad
            }
        };
        let total = cfg.epochs * cfg.steps_per_epoch(self.data.len());
        let warm = cfg.warmup_epochs * cfg.steps_per_epoch(self.data.len());
        let lr = learning_rate(state.step, total.max(state.step + 1), warm, cfg.peak_lr());
        state
            .stack
            .sgd_step(&update, lr, lr * cfg.predictor_lr_mult)?;
        state.stack.ema_update();
        state.step += 1;
        Ok(loss)
    }

    /// Clusters the target features of the whole dataset and scores them.
    fn evaluate(&mut self, loss: StepLoss) -> Result<MetricsReport> {
        let feats = self.dataset_features()?;
        let mut rng = Rng::new(self.cfg.seed).fork(EVAL_STREAM).fork(self.state.epoch as u64);
        let clusters = spherical_kmeans(&feats, &self.cfg.kmeans_params(), &mut rng)?;
        let pred = Partition::new(&clusters.assign);
        let scores = match &self.data.labels {
            Some(truth) => PartitionScores::compute(truth, &pred)?,
            None => PartitionScores::missing(),
        };
        let projections = target_features(
            &self.state.stack.target,
            &self.data.features,
            FeatureSource::Projector,
        )?;
        let report = MetricsReport {
            epoch: self.state.epoch,
            nmi: scores.nmi,
            ami: scores.ami,
            ari: scores.ari,
            acc: scores.acc,
            imbalance_ratio: imbalance_ratio(&pred, self.cfg.k),
            std_uniformity: std_uniformity(&projections)?,
            loss_pip: loss.pip,
            loss_cdr: loss.cdr,
        };
        self.state.last_eval = Some(clusters);
        Ok(report)
    }

    /// Runs one epoch and returns its report.
    pub fn run_epoch(&mut self) -> Result<MetricsReport> {
        if self.cfg.refreshes_at(self.state.epoch) {
            self.first_m_step()?;
        }
        let perm = self.state.rng.permutation(self.data.len());
        let mut sum = StepLoss::default();
        let mut steps = 0;
        for chunk in perm.chunks(self.cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let l = self.second_m_step(chunk)?;
            sum.total += l.total;
            sum.pip += l.pip;
            sum.cdr += l.cdr;
            steps += 1;
        }
        let n = steps.max(1) as f64;
        let mean = StepLoss {
            total: sum.total / n,
            pip: sum.pip / n,
            cdr: sum.cdr / n,
        };
        let report = self.evaluate(mean)?;
        self.state.history.push(report);
        self.state.epoch += 1;
        Ok(report)
    }

    /// Runs the remaining epochs.
    pub fn run(&mut self) -> Result<()> {
        while !self.is_done() {
            self.run_epoch()?;
        }
        Ok(())
    }

    /// Final clusters of the current network.
    pub fn finish(mut self) -> Result<TrainOutcome> {
        let clusters = match self.state.last_eval.take() {
            Some(c) => c,
            None => {
                let feats = self.dataset_features()?;
                let mut rng = Rng::new(self.cfg.seed).fork(EVAL_STREAM).fork(u64::MAX);
                spherical_kmeans(&feats, &self.cfg.kmeans_params(), &mut rng)?
            }
        };
        self.state.last_eval = Some(clusters.clone());
        Ok(TrainOutcome {
            state: self.state,
            clusters,
        })
    }

    /// Rate at which in-batch neighbor interpolation keeps the k-NN class.
    ///
    /// Even rows with their true labels form the reference set, odd rows
    /// are the probe inputs. Inputs are embedded with the online encoder,
    /// split into batches of `batch_size`, mixed with [`pip_mix`] at
    /// `sigma`, and both inputs and mixed rows are classified with cosine
    /// k-NN against the reference embeddings.
    pub fn preservation_probe(&self, sigma: f64, k: usize) -> Result<f64> {
        let truth = self.data.labels.as_ref().ok_or(Error::LabelsMissing)?;
        let even: Vec<usize> = (0..self.data.len()).step_by(2).collect();
        let odd: Vec<usize> = (1..self.data.len()).step_by(2).collect();
        let embed = |idx: &[usize]| -> Result<Matrix> {
            let x = self.data.features.select_rows(idx);
            l2_normalize_rows(&self.state.stack.online.infer(&x)?.projection)
        };
        let reference = embed(&even)?;
        let ref_labels: Vec<usize> = even.iter().map(|&i| truth.labels()[i]).collect();
        let inputs = embed(&odd)?;
        let mut mixed = Matrix::zeros(inputs.rows(), inputs.cols());
        let mut start = 0;
        while start < inputs.rows() {
            let end = (start + self.cfg.batch_size).min(inputs.rows());
            let idx: Vec<usize> = (start..end).collect();
            let chunk = inputs.select_rows(&idx);
            let v = if chunk.rows() >= 2 {
                pip_mix(&chunk, sigma)?.0
            } else {
                chunk
            };
            for (r, i) in idx.into_iter().enumerate() {
                mixed.row_mut(i).copy_from_slice(v.row(r));
            }
            start = end;
        }
        preservation_rate(&inputs, &mixed, &reference, &Partition::new(&ref_labels), k)
    }
}

fn add_weight_decay(grad: &mut StackTape, stack: &NetworkStack, wd: f64) {
    fn add(tape: &mut GradientTape, net: &Mlp, wd: f64) {
        for (g, p) in tape.slices_mut().into_iter().zip(net.param_slices()) {
            g.iter_mut().zip(p).for_each(|(g, p)| *g += wd * p);
        }
    }
    add(&mut grad.online.backbone, &stack.online.backbone, wd);
    add(&mut grad.online.projector, &stack.online.projector, wd);
    if let (Some(t), Some(p)) = (&mut grad.predictor, &stack.predictor) {
        add(t, p, wd);
    }
}

/// Full run: `cfg.epochs` epochs, then the final clustering.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(data, cfg.clone())?;
    trainer.run()?;
    trainer.finish()
}
