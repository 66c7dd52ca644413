//! Contrastive, non-contrastive and cluster-level losses.
//!
//! Every loss returns its batch-mean value together with the analytic
//! gradient w.r.t. the online embeddings `za`. Target-network embeddings
//! are read-only inputs: no gradient is ever produced for them, which is
//! the stop-gradient of the target path.
//!
//! The InfoNCE family (plain, decoupled, supervised, and the cluster
//! dispersion surrogate) shares one engine. For an anchor `i` each loss is
//!
//! ```text
//! L_i = −Σ_k α_ik · (za_i·key_k)/τ  +  log Σ_{k ∈ U_i} exp(za_i·key_k/τ)
//! ```
//!
//! where keys come from view `a` (the target embeddings of view `a` when
//! given, otherwise `za` itself) and view `b`. The losses differ only in
//! the alignment weights `α` and the log-sum-exp set `U`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{GradientTape, Mlp};
use crate::numerics::{dot, l2_normalize_rows, l2_normalize_rows_backward, log_sum_exp, Matrix, Rng};

/// Embeddings of one batch under two augmentations.
#[derive(Clone, Copy, Debug)]
pub struct ViewPair<'a> {
    /// Online embeddings of view `a`, unit rows. Gradients are w.r.t. these.
    pub za: &'a Matrix,
    /// Target embeddings of view `b`, unit rows, constant.
    pub zb_target: &'a Matrix,
    /// Target embeddings of view `a`. When absent, `za` doubles as the
    /// view-`a` keys and gradients flow through those keys too.
    pub za_target: Option<&'a Matrix>,
}

impl<'a> ViewPair<'a> {
    pub fn new(za: &'a Matrix, zb_target: &'a Matrix, za_target: Option<&'a Matrix>) -> Result<Self> {
        let pair = Self {
            za,
            zb_target,
            za_target,
        };
        pair.check()?;
        Ok(pair)
    }

    fn check(&self) -> Result<()> {
        let shape = self.za.shape();
        for m in [Some(self.zb_target), self.za_target].into_iter().flatten() {
            if m.shape() != shape {
                return Err(Error::DimMismatch {
                    expected: shape.0 * shape.1,
                    got: m.rows() * m.cols(),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.za.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.za.rows() == 0
    }

    fn keys_a(&self) -> &Matrix {
        self.za_target.unwrap_or(self.za)
    }
}

/// Alignment / uniformity split of a decoupled loss, both batch means.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub alignment: f64,
    pub uniformity: f64,
}

/// Loss value and gradients.
#[derive(Clone, Debug)]
pub struct LossOut {
    /// Mean over the batch.
    pub value: f64,
    /// Gradient of `value` w.r.t. the online embeddings, same shape.
    pub grad_za: Matrix,
    /// Gradient w.r.t. an auxiliary input (the predictor output for the
    /// positive-sampling losses).
    pub grad_aux: Option<Matrix>,
    pub per_instance: Vec<f64>,
    pub parts: Option<LossParts>,
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    Ok(())
}

fn check_batch(n: usize, need: usize) -> Result<()> {
    if n < need {
        return Err(Error::BatchTooSmall { got: n, need });
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum Key {
    A(usize),
    B(usize),
}

/// Per-anchor recipe: alignment keys with weights, and the log-sum-exp set.
struct Recipe {
    align: Vec<(Key, f64)>,
    uniform: Vec<Key>,
}

fn contrastive_engine(
    pair: &ViewPair<'_>,
    tau: f64,
    recipe: impl Fn(usize) -> Recipe,
) -> Result<LossOut> {
    pair.check()?;
    let n = pair.len();
    let d = pair.za.cols();
    let ka = pair.keys_a();
    let kb = pair.zb_target;
    let sim_a = pair.za.matmul_t(ka)?;
    let sim_b = pair.za.matmul_t(kb)?;
    let sim = |k: Key, i: usize| match k {
        Key::A(j) => sim_a.get(i, j) / tau,
        Key::B(j) => sim_b.get(i, j) / tau,
    };

    // coefficient of each key in d L_i / d (za_i·key / τ)
    let mut coef_a = Matrix::zeros(n, n);
    let mut coef_b = Matrix::zeros(n, n);
    let mut per_instance = Vec::with_capacity(n);
    let (mut align_sum, mut unif_sum) = (0.0, 0.0);
    let add = |ca: &mut Matrix, cb: &mut Matrix, k: Key, i: usize, c: f64| match k {
        Key::A(j) => ca.set(i, j, ca.get(i, j) + c),
        Key::B(j) => cb.set(i, j, cb.get(i, j) + c),
    };
    let mut logits = Vec::with_capacity(2 * n);
    for i in 0..n {
        let r = recipe(i);
        let mut align = 0.0;
        for &(k, w) in &r.align {
            align += w * sim(k, i);
            add(&mut coef_a, &mut coef_b, k, i, -w);
        }
        let mut unif = 0.0;
        if !r.uniform.is_empty() {
            logits.clear();
            logits.extend(r.uniform.iter().map(|&k| sim(k, i)));
            unif = log_sum_exp(&logits);
            for (&k, &l) in r.uniform.iter().zip(&logits) {
                add(&mut coef_a, &mut coef_b, k, i, (l - unif).exp());
            }
        }
        align_sum -= align;
        unif_sum += unif;
        per_instance.push(unif - align);
    }

    let nf = n as f64;
    let scale = 1.0 / (tau * nf);
    let mut grad = coef_a.matmul(ka)?;
    grad.axpy(1.0, &coef_b.matmul(kb)?)?;
    let mut grad_za = grad.scaled(scale);
    if pair.za_target.is_none() {
        // view-a keys are za itself
        grad_za.axpy(scale, &coef_a.t_matmul(pair.za)?)?;
    }
    debug_assert_eq!(grad_za.shape(), (n, d));
    Ok(LossOut {
        value: per_instance.iter().sum::<f64>() / nf,
        grad_za,
        grad_aux: None,
        per_instance,
        parts: Some(LossParts {
            alignment: align_sum / nf,
            uniformity: unif_sum / nf,
        }),
    })
}

fn negatives_excluding(n: usize, skip: impl Fn(usize) -> bool) -> Vec<Key> {
    let mut keys = Vec::with_capacity(2 * n);
    for j in (0..n).filter(|&j| !skip(j)) {
        keys.push(Key::A(j));
        keys.push(Key::B(j));
    }
    keys
}

/// InfoNCE with the positive `(a_i, b_i)` and `2(N−1)` negatives from both
/// views of every other instance.
pub fn info_nce(pair: &ViewPair<'_>, tau: f64) -> Result<LossOut> {
    check_tau(tau)?;
    check_batch(pair.len(), 2)?;
    let n = pair.len();
    contrastive_engine(pair, tau, |i| {
        let mut uniform = vec![Key::B(i)];
        uniform.extend(negatives_excluding(n, |j| j == i));
        Recipe {
            align: vec![(Key::B(i), 1.0)],
            uniform,
        }
    })
}

/// InfoNCE split into an instance-alignment term and an instance-uniformity
/// term (the positive is dropped from the denominator). `value` is exactly
/// `parts.alignment + parts.uniformity`.
pub fn decoupled_info_nce(pair: &ViewPair<'_>, tau: f64) -> Result<LossOut> {
    check_tau(tau)?;
    check_batch(pair.len(), 2)?;
    let n = pair.len();
    contrastive_engine(pair, tau, |i| Recipe {
        align: vec![(Key::B(i), 1.0)],
        uniform: negatives_excluding(n, |j| j == i),
    })
}

fn cluster_alignment(labels: &[usize], i: usize) -> (Vec<(Key, f64)>, usize) {
    let members: Vec<usize> = (0..labels.len())
        .filter(|&k| labels[k] == labels[i])
        .collect();
    let weight = 1.0 / (2 * members.len() - 1) as f64;
    let mut align = vec![(Key::B(i), weight)];
    for &k in members.iter().filter(|&&k| k != i) {
        align.push((Key::A(k), weight));
        align.push((Key::B(k), weight));
    }
    (align, members.len())
}

fn check_labels(pair: &ViewPair<'_>, labels: &[usize]) -> Result<()> {
    if labels.len() != pair.len() {
        return Err(Error::LengthMismatch {
            left: pair.len(),
            right: labels.len(),
        });
    }
    Ok(())
}

/// Supervised-style contrastive loss: every other member of the anchor's
/// class is a positive in both views, averaged with the `2|p(i)|−1`
/// normalizer; the denominator is the plain InfoNCE one.
pub fn supervised_contrastive(pair: &ViewPair<'_>, labels: &[usize], tau: f64) -> Result<LossOut> {
    check_tau(tau)?;
    check_batch(pair.len(), 2)?;
    check_labels(pair, labels)?;
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::SingleCluster);
    }
    let n = pair.len();
    contrastive_engine(pair, tau, |i| {
        let (align, _) = cluster_alignment(labels, i);
        let mut uniform = vec![Key::B(i)];
        uniform.extend(negatives_excluding(n, |j| j == i));
        Recipe { align, uniform }
    })
}

/// Cluster dispersion surrogate built from batch pseudo-labels.
///
/// Cluster alignment pulls the anchor towards the target embeddings of all
/// its cluster-mates in both views; cluster uniformity is a log-sum-exp over
/// both views of every instance outside the anchor's cluster. An anchor
/// whose cluster spans the whole batch has no negatives and contributes its
/// alignment term only.
pub fn cdr_surrogate(pair: &ViewPair<'_>, batch_labels: &[usize], tau: f64) -> Result<LossOut> {
    check_tau(tau)?;
    check_labels(pair, batch_labels)?;
    if pair.is_empty() {
        return Err(Error::DegenerateBatch);
    }
    let n = pair.len();
    contrastive_engine(pair, tau, |i| {
        let (align, _) = cluster_alignment(batch_labels, i);
        Recipe {
            align,
            uniform: negatives_excluding(n, |j| batch_labels[j] == batch_labels[i]),
        }
    })
}

/// Mean squared distance between predictor outputs and target embeddings,
/// both unit rows. Equals `2 − 2·cos` per instance.
pub fn alignment_byol(pred_out: &Matrix, zb_target: &Matrix) -> Result<LossOut> {
    if pred_out.shape() != zb_target.shape() {
        return Err(Error::DimMismatch {
            expected: pred_out.rows() * pred_out.cols(),
            got: zb_target.rows() * zb_target.cols(),
        });
    }
    let n = pred_out.rows();
    let nf = n.max(1) as f64;
    let mut grad = Matrix::zeros(n, pred_out.cols());
    let mut per_instance = Vec::with_capacity(n);
    for i in 0..n {
        let mut sq = 0.0;
        for ((g, &p), &t) in grad
            .row_mut(i)
            .iter_mut()
            .zip(pred_out.row(i))
            .zip(zb_target.row(i))
        {
            let diff = p - t;
            sq += diff * diff;
            *g = 2.0 * diff / nf;
        }
        per_instance.push(sq);
    }
    Ok(LossOut {
        value: per_instance.iter().sum::<f64>() / nf,
        grad_za: grad,
        grad_aux: None,
        per_instance,
        parts: None,
    })
}

/// Index `j ≠ i` with the highest cosine to row `i` (smallest cosine
/// distance); ties go to the smallest index.
pub fn nearest_neighbor_index(za: &Matrix, i: usize) -> Result<usize> {
    check_batch(za.rows(), 2)?;
    if i >= za.rows() {
        return Err(Error::InvalidArgument(format!(
            "row {i} out of range for {} rows",
            za.rows()
        )));
    }
    let anchor = za.row(i);
    let mut best = usize::MAX;
    let mut best_sim = f64::NEG_INFINITY;
    for j in (0..za.rows()).filter(|&j| j != i) {
        let s = dot(anchor, za.row(j));
        if s > best_sim {
            best_sim = s;
            best = j;
        }
    }
    Ok(best)
}

pub fn nearest_neighbors(za: &Matrix) -> Result<Vec<usize>> {
    (0..za.rows()).map(|i| nearest_neighbor_index(za, i)).collect()
}

/// Interpolates every row towards its in-batch nearest neighbor:
/// `v_i = (1−σ)·za_i + σ·za_{nn_i}`. Rows are not renormalized.
pub fn pip_mix(za: &Matrix, sigma: f64) -> Result<(Matrix, Vec<usize>)> {
    check_sigma(sigma)?;
    let nn = nearest_neighbors(za)?;
    let mut v = za.clone();
    for (i, &j) in nn.iter().enumerate() {
        for (out, (&a, &b)) in v.row_mut(i).iter_mut().zip(za.row(i).iter().zip(za.row(j))) {
            *out = (1.0 - sigma) * a + sigma * b;
        }
    }
    Ok((v, nn))
}

/// Gaussian positive sampling: `v_i = za_i + σ·ε_i`, `ε_i ~ N(0, I)`.
pub fn psa_mix(za: &Matrix, sigma: f64, rng: &mut Rng) -> Result<Matrix> {
    check_sigma(sigma)?;
    let noise = Matrix::from_fn(za.rows(), za.cols(), |_, _| rng.normal());
    let mut v = za.clone();
    v.axpy(sigma, &noise)?;
    Ok(v)
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sigma must be non-negative, got {sigma}"
        )));
    }
    Ok(())
}

/// How the positive fed to the predictor is sampled around each anchor.
#[derive(Clone, Debug)]
pub enum PositiveSampler {
    /// Interpolation towards the in-batch nearest neighbor.
    Neighbor { sigma: f64 },
    /// Additive Gaussian noise; `noise` holds the pre-drawn `ε` rows.
    Gaussian { sigma: f64, noise: Matrix },
}

/// Output of [`pip_loss`] / [`psa_loss`].
#[derive(Clone, Debug)]
pub struct PositiveAlignmentOut {
    /// `grad_za` is w.r.t. the raw (unnormalized) online embeddings;
    /// `grad_aux` w.r.t. the raw predictor output.
    pub loss: LossOut,
    pub predictor_tape: Option<GradientTape>,
    /// Nearest-neighbor indices used (empty for Gaussian sampling).
    pub neighbors: Vec<usize>,
}

/// Positive-instance proximity loss.
///
/// `za_raw` is normalized, mixed towards each row's nearest neighbor, fed
/// through the predictor (identity when `None`), normalized again and
/// compared with the target embeddings by squared distance. The neighbor
/// indices are constants of the batch: no gradient flows through the
/// argmin.
pub fn pip_loss(
    predictor: Option<&mut Mlp>,
    za_raw: &Matrix,
    zb_target: &Matrix,
    sigma: f64,
) -> Result<PositiveAlignmentOut> {
    positive_alignment_loss(
        predictor,
        za_raw,
        zb_target,
        &PositiveSampler::Neighbor { sigma },
    )
}

/// Same pipeline as [`pip_loss`] with Gaussian positive sampling.
pub fn psa_loss(
    predictor: Option<&mut Mlp>,
    za_raw: &Matrix,
    zb_target: &Matrix,
    sigma: f64,
    rng: &mut Rng,
) -> Result<PositiveAlignmentOut> {
    check_sigma(sigma)?;
    let noise = Matrix::from_fn(za_raw.rows(), za_raw.cols(), |_, _| rng.normal());
    positive_alignment_loss(
        predictor,
        za_raw,
        zb_target,
        &PositiveSampler::Gaussian { sigma, noise },
    )
}

pub fn positive_alignment_loss(
    predictor: Option<&mut Mlp>,
    za_raw: &Matrix,
    zb_target: &Matrix,
    sampler: &PositiveSampler,
) -> Result<PositiveAlignmentOut> {
    if za_raw.shape() != zb_target.shape() {
        return Err(Error::DimMismatch {
            expected: za_raw.rows() * za_raw.cols(),
            got: zb_target.rows() * zb_target.cols(),
        });
    }
    let za = l2_normalize_rows(za_raw)?;
    let (v, neighbors) = match sampler {
        PositiveSampler::Neighbor { sigma } => pip_mix(&za, *sigma)?,
        PositiveSampler::Gaussian { sigma, noise } => {
            check_sigma(*sigma)?;
            let mut v = za.clone();
            v.axpy(*sigma, noise)?;
            (v, Vec::new())
        }
    };
    let mut predictor = predictor;
    let p = match predictor.as_deref_mut() {
        Some(g) => g.forward(&v)?,
        None => v.clone(),
    };
    let pn = l2_normalize_rows(&p)?;
    let align = alignment_byol(&pn, zb_target)?;
    let grad_p = l2_normalize_rows_backward(&p, &pn, &align.grad_za)?;
    let (grad_v, predictor_tape) = match predictor.as_deref() {
        Some(g) => {
            let (gv, tape) = g.backward(&grad_p)?;
            (gv, Some(tape))
        }
        None => (grad_p.clone(), None),
    };
    let grad_za = match sampler {
        PositiveSampler::Neighbor { sigma } => {
            let mut g = grad_v.scaled(1.0 - sigma);
            for (i, &j) in neighbors.iter().enumerate() {
                for (gj, &gv) in g.row_mut(j).iter_mut().zip(grad_v.row(i)) {
                    *gj += sigma * gv;
                }
            }
            g
        }
        PositiveSampler::Gaussian { .. } => grad_v,
    };
    let grad_raw = l2_normalize_rows_backward(za_raw, &za, &grad_za)?;
    Ok(PositiveAlignmentOut {
        loss: LossOut {
            value: align.value,
            grad_za: grad_raw,
            grad_aux: Some(grad_p),
            per_instance: align.per_instance,
            parts: None,
        },
        predictor_tape,
        neighbors,
    })
}

/// `w·pip + (1−w)·cdr` for values and gradients.
pub fn combined_loss(pip: &LossOut, cdr: &LossOut, w: f64) -> Result<LossOut> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::InvalidArgument(format!("w must lie in [0, 1], got {w}")));
    }
    let mut grad_za = pip.grad_za.scaled(w);
    grad_za.axpy(1.0 - w, &cdr.grad_za)?;
    let per_instance = if pip.per_instance.len() == cdr.per_instance.len() {
        pip.per_instance
            .iter()
            .zip(&cdr.per_instance)
            .map(|(p, c)| w * p + (1.0 - w) * c)
            .collect()
    } else {
        Vec::new()
    };
    Ok(LossOut {
        value: w * pip.value + (1.0 - w) * cdr.value,
        grad_za,
        grad_aux: pip.grad_aux.as_ref().map(|g| g.scaled(w)),
        per_instance,
        parts: None,
    })
}
