//! Clustering quality, representation uniformity and neighbor preservation.
//!
//! Partition metrics work on contingency tables built from [`Partition`]s.
//! Iteration is always over dense label indices, never over hash maps, so
//! floating-point sums happen in a fixed order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, format_f64, l2_normalize_rows, Matrix};

/// Cluster labels canonicalized to `0..K` in order of first appearance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    labels: Vec<usize>,
    k: usize,
}

impl Partition {
    pub fn new(raw: &[usize]) -> Self {
        let mut map: Vec<(usize, usize)> = Vec::new();
        let mut labels = Vec::with_capacity(raw.len());
        for &r in raw {
            let l = match map.binary_search_by_key(&r, |&(k, _)| k) {
                Ok(pos) => map[pos].1,
                Err(pos) => {
                    let l = map.len();
                    map.insert(pos, (r, l));
                    l
                }
            };
            labels.push(l);
        }
        Self { labels, k: map.len() }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Number of distinct labels.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.k];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

impl From<&[usize]> for Partition {
    fn from(raw: &[usize]) -> Self {
        Self::new(raw)
    }
}

struct Contingency {
    n: usize,
    table: Vec<Vec<usize>>,
    rows: Vec<usize>,
    cols: Vec<usize>,
}

impl Contingency {
    fn new(a: &Partition, b: &Partition) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::LengthMismatch {
                left: a.len(),
                right: b.len(),
            });
        }
        if a.is_empty() {
            return Err(Error::InvalidArgument("partitions are empty".into()));
        }
        let mut table = vec![vec![0; b.k]; a.k];
        for (&x, &y) in a.labels.iter().zip(&b.labels) {
            table[x][y] += 1;
        }
        Ok(Self {
            n: a.len(),
            table,
            rows: a.counts(),
            cols: b.counts(),
        })
    }

    fn mutual_information(&self) -> f64 {
        let n = self.n as f64;
        let mut mi = 0.0;
        for (i, row) in self.table.iter().enumerate() {
            for (j, &nij) in row.iter().enumerate() {
                if nij > 0 {
                    let nij = nij as f64;
                    mi += nij / n * (n * nij / (self.rows[i] as f64 * self.cols[j] as f64)).ln();
                }
            }
        }
        mi.max(0.0)
    }
}

fn entropy(counts: &[usize], n: usize) -> f64 {
    let n = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum::<f64>()
        .max(0.0)
}

/// Normalized mutual information with the arithmetic-mean normalizer.
///
/// Both entropies zero gives 1; exactly one zero gives 0.
pub fn nmi(a: &Partition, b: &Partition) -> Result<f64> {
    let ct = Contingency::new(a, b)?;
    let (ha, hb) = (entropy(&ct.rows, ct.n), entropy(&ct.cols, ct.n));
    if ha == 0.0 && hb == 0.0 {
        return Ok(1.0);
    }
    if ha == 0.0 || hb == 0.0 {
        return Ok(0.0);
    }
    Ok((ct.mutual_information() / (0.5 * (ha + hb))).clamp(0.0, 1.0))
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n + 1];
    for i in 1..=n {
        t[i] = t[i - 1] + (i as f64).ln();
    }
    t
}

/// Expected mutual information of two random partitions with the given
/// marginals under the hypergeometric permutation model.
fn expected_mutual_information(ct: &Contingency) -> f64 {
    let n = ct.n;
    let nf = n as f64;
    let lf = ln_factorials(n);
    let mut emi = 0.0;
    for &a in &ct.rows {
        for &b in &ct.cols {
            let lo = (a + b).saturating_sub(n).max(1);
            let hi = a.min(b);
            let fixed = lf[a] + lf[b] + lf[n - a] + lf[n - b] - lf[n];
            for nij in lo..=hi {
                let x = nij as f64;
                let log_p = fixed - lf[nij] - lf[a - nij] - lf[b - nij] - lf[n + nij - a - b];
                emi += x / nf * (nf * x / (a as f64 * b as f64)).ln() * log_p.exp();
            }
        }
    }
    emi
}

/// Mutual information adjusted for chance, arithmetic-mean normalizer.
pub fn ami(a: &Partition, b: &Partition) -> Result<f64> {
    let ct = Contingency::new(a, b)?;
    let (ha, hb) = (entropy(&ct.rows, ct.n), entropy(&ct.cols, ct.n));
    if ha == 0.0 && hb == 0.0 {
        return Ok(1.0);
    }
    let mi = ct.mutual_information();
    let emi = expected_mutual_information(&ct);
    let mut denom = 0.5 * (ha + hb) - emi;
    if denom.abs() < f64::EPSILON {
        denom = f64::EPSILON.copysign(denom);
    }
    Ok((mi - emi) / denom)
}

fn pairs(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index by pair counting.
pub fn ari(a: &Partition, b: &Partition) -> Result<f64> {
    let ct = Contingency::new(a, b)?;
    let index: f64 = ct.table.iter().flatten().map(|&c| pairs(c)).sum();
    let sa: f64 = ct.rows.iter().map(|&c| pairs(c)).sum();
    let sb: f64 = ct.cols.iter().map(|&c| pairs(c)).sum();
    let total = pairs(ct.n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sa * sb / total;
    let max = 0.5 * (sa + sb);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with potentials, O(n³)). Returns the column assigned to each row.
pub fn hungarian_min(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; index 0 is the virtual start column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Accuracy under the best one-to-one matching of predicted to true labels.
/// Non-square contingency tables are padded with zeros.
pub fn clustering_accuracy(truth: &Partition, pred: &Partition) -> Result<f64> {
    let ct = Contingency::new(pred, truth)?;
    let size = pred.k.max(truth.k);
    let max = ct.n as f64;
    let cost: Vec<Vec<f64>> = (0..size)
        .map(|i| {
            (0..size)
                .map(|j| {
                    let c = ct.table.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0);
                    max - c as f64
                })
                .collect()
        })
        .collect();
    let matching = hungarian_min(&cost);
    let hits: usize = matching
        .iter()
        .enumerate()
        .map(|(i, &j)| ct.table.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0))
        .sum();
    Ok(hits as f64 / ct.n as f64)
}

/// Smallest over largest cluster size across `max(k_expected, K)` clusters,
/// absent clusters counting as empty.
pub fn imbalance_ratio(pred: &Partition, k_expected: usize) -> f64 {
    let mut counts = pred.counts();
    counts.resize(k_expected.max(counts.len()), 0);
    let max = counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return 0.0;
    }
    let min = counts.iter().copied().min().unwrap_or(0);
    min as f64 / max as f64
}

/// Mean over dimensions of the (population) standard deviation of the
/// ℓ2-normalized rows. Uniform embeddings on the sphere give about `1/√d`;
/// collapsed ones give 0.
pub fn std_uniformity(z: &Matrix) -> Result<f64> {
    if z.rows() < 2 {
        return Err(Error::BatchTooSmall {
            got: z.rows(),
            need: 2,
        });
    }
    let u = l2_normalize_rows(z)?;
    let (n, d) = u.shape();
    let nf = n as f64;
    let mut mean = vec![0.0; d];
    for r in u.row_iter() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / nf;
        }
    }
    let mut var = vec![0.0; d];
    for r in u.row_iter() {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m) / nf;
        }
    }
    Ok(var.iter().map(|v| v.sqrt()).sum::<f64>() / d as f64)
}

/// Cosine k-NN classifier over a labeled reference set.
pub struct KnnClassifier {
    reference: Matrix,
    labels: Partition,
    k: usize,
}

impl KnnClassifier {
    pub fn new(reference: &Matrix, labels: &Partition, k: usize) -> Result<Self> {
        if reference.rows() == 0 {
            return Err(Error::EmptyReference);
        }
        if labels.len() != reference.rows() {
            return Err(Error::LengthMismatch {
                left: reference.rows(),
                right: labels.len(),
            });
        }
        if k == 0 {
            return Err(Error::InvalidArgument("k-NN needs k ≥ 1".into()));
        }
        Ok(Self {
            reference: l2_normalize_rows(reference)?,
            labels: labels.clone(),
            k: k.min(reference.rows()),
        })
    }

    /// Majority label among the `k` most similar reference rows (similarity
    /// ties to the lower reference index, vote ties to the smaller label).
    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        if x.cols() != self.reference.cols() {
            return Err(Error::DimMismatch {
                expected: self.reference.cols(),
                got: x.cols(),
            });
        }
        let x = l2_normalize_rows(x)?;
        let mut sims: Vec<(f64, usize)> = Vec::with_capacity(self.reference.rows());
        let mut votes = vec![0usize; self.labels.k()];
        let mut out = Vec::with_capacity(x.rows());
        for q in x.row_iter() {
            sims.clear();
            sims.extend(self.reference.row_iter().map(|r| dot(q, r)).zip(0..));
            sims.select_nth_unstable_by(self.k - 1, |a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            votes.iter_mut().for_each(|v| *v = 0);
            for &(_, j) in &sims[..self.k] {
                votes[self.labels.labels()[j]] += 1;
            }
            let best = votes.iter().copied().max().unwrap_or(0);
            out.push(votes.iter().position(|&v| v == best).unwrap_or(0));
        }
        Ok(out)
    }
}

/// Fraction of rows whose k-NN class is the same for `inputs` and their
/// `mixed` counterparts.
pub fn preservation_rate(
    inputs: &Matrix,
    mixed: &Matrix,
    reference_feats: &Matrix,
    reference_labels: &Partition,
    k: usize,
) -> Result<f64> {
    if inputs.shape() != mixed.shape() {
        return Err(Error::LengthMismatch {
            left: inputs.rows(),
            right: mixed.rows(),
        });
    }
    let knn = KnnClassifier::new(reference_feats, reference_labels, k)?;
    if inputs.rows() == 0 {
        return Ok(1.0);
    }
    let a = knn.predict(inputs)?;
    let b = knn.predict(mixed)?;
    let same = a.iter().zip(&b).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.len() as f64)
}

/// NMI, AMI, ARI and ACC of one prediction against ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionScores {
    pub nmi: f64,
    pub ami: f64,
    pub ari: f64,
    pub acc: f64,
}

impl PartitionScores {
    pub fn compute(truth: &Partition, pred: &Partition) -> Result<Self> {
        Ok(Self {
            nmi: nmi(truth, pred)?,
            ami: ami(truth, pred)?,
            ari: ari(truth, pred)?,
            acc: clustering_accuracy(truth, pred)?,
        })
    }

    /// All NaN, for runs without ground truth.
    pub fn missing() -> Self {
        Self {
            nmi: f64::NAN,
            ami: f64::NAN,
            ari: f64::NAN,
            acc: f64::NAN,
        }
    }
}

/// One epoch of diagnostics. Metrics that need ground truth are NaN when
/// none is available.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub epoch: usize,
    pub nmi: f64,
    pub ami: f64,
    pub ari: f64,
    pub acc: f64,
    pub imbalance_ratio: f64,
    pub std_uniformity: f64,
    pub loss_pip: f64,
    pub loss_cdr: f64,
}

impl MetricsReport {
    /// Frozen CSV column order.
    pub const COLUMNS: [&'static str; 9] = [
        "epoch",
        "nmi",
        "ami",
        "ari",
        "acc",
        "imbalance_ratio",
        "std_uniformity",
        "loss_pip",
        "loss_cdr",
    ];

    pub fn csv_header() -> String {
        Self::COLUMNS.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut fields = vec![self.epoch.to_string()];
        fields.extend(
            [
                self.nmi,
                self.ami,
                self.ari,
                self.acc,
                self.imbalance_ratio,
                self.std_uniformity,
                self.loss_pip,
                self.loss_cdr,
            ]
            .map(format_f64),
        );
        fields.join(",")
    }

    /// Header plus one row per report, newline-terminated.
    pub fn to_csv(reports: &[MetricsReport]) -> String {
        let mut s = Self::csv_header();
        s.push('\n');
        for r in reports {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }

    /// JSON object; NaN metrics become `null`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{random_unit_rows, Rng};

    fn p(v: &[usize]) -> Partition {
        Partition::new(v)
    }

    #[test]
    fn partition_canonicalizes() {
        let part = p(&[7, 3, 7, 9]);
        assert_eq!(part.labels(), &[0, 1, 0, 2]);
        assert_eq!(part.k(), 3);
    }

    #[test]
    fn nmi_examples() {
        assert!((nmi(&p(&[0, 0, 1, 1]), &p(&[0, 0, 1, 1])).unwrap() - 1.0).abs() < 1e-12);
        assert!(nmi(&p(&[0, 0, 1, 1]), &p(&[0, 1, 0, 1])).unwrap().abs() < 1e-12);
        assert_eq!(nmi(&p(&[0, 0]), &p(&[1, 1])).unwrap(), 1.0);
        assert_eq!(nmi(&p(&[0, 0]), &p(&[0, 1])).unwrap(), 0.0);
        assert!(matches!(nmi(&p(&[0]), &p(&[0, 1])), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn ami_examples() {
        assert!((ami(&p(&[0, 0, 1, 1, 2]), &p(&[1, 1, 0, 0, 2])).unwrap() - 1.0).abs() < 1e-10);
        assert_eq!(ami(&p(&[3, 3, 3]), &p(&[1, 1, 1])).unwrap(), 1.0);
    }

    #[test]
    fn ami_with_clusters_covering_most_points() {
        // cluster sizes 4 and 3 out of 5 force a nonzero lower bound on n_ij
        let a = p(&[0, 0, 0, 0, 1]);
        let b = p(&[0, 0, 0, 1, 1]);
        assert!((ami(&a, &a).unwrap() - 1.0).abs() < 1e-10);
        let v = ami(&a, &b).unwrap();
        assert!(v.is_finite() && v < 1.0);
    }

    #[test]
    fn ari_examples() {
        assert!((ari(&p(&[0, 0, 1, 1]), &p(&[1, 1, 0, 0])).unwrap() - 1.0).abs() < 1e-12);
        // all six pairs: index 0, sa = sb = 2, expected 4/6, max 2
        let expected = (0.0 - 4.0 / 6.0) / (2.0 - 4.0 / 6.0);
        assert!((ari(&p(&[0, 0, 1, 1]), &p(&[0, 1, 0, 1])).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(clustering_accuracy(&p(&[0, 0, 1, 1]), &p(&[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(clustering_accuracy(&p(&[0, 0, 1, 1]), &p(&[0, 0, 0, 0])).unwrap(), 0.5);
        // more predicted clusters than classes
        assert_eq!(clustering_accuracy(&p(&[0, 0, 1, 1]), &p(&[0, 1, 2, 2])).unwrap(), 0.75);
    }

    #[test]
    fn hungarian_small() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let m = hungarian_min(&cost);
        let total: f64 = m.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn imbalance_examples() {
        assert_eq!(imbalance_ratio(&p(&[0; 10].iter().chain(&[1; 10]).chain(&[2; 10]).copied().collect::<Vec<_>>()), 3), 1.0);
        let counts: Vec<usize> = [0; 5].iter().chain(&[1; 10]).copied().collect();
        assert_eq!(imbalance_ratio(&p(&counts), 2), 0.5);
        assert_eq!(imbalance_ratio(&p(&counts), 3), 0.0);
    }

    #[test]
    fn std_examples() {
        let same = Matrix::from_rows(&[[0.6, 0.8]; 5]).unwrap();
        assert!(std_uniformity(&same).unwrap().abs() < 1e-12);
        let alt = Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]]).unwrap();
        assert!((std_uniformity(&alt).unwrap() - 0.5).abs() < 1e-12);
        assert!(std_uniformity(&Matrix::from_rows(&[[1.0, 0.0]]).unwrap()).is_err());
    }

    #[test]
    fn std_invariances() {
        let mut rng = Rng::new(8);
        let z = random_unit_rows(50, 4, &mut rng);
        let base = std_uniformity(&z).unwrap();
        let rev: Vec<usize> = (0..50).rev().collect();
        assert!((std_uniformity(&z.select_rows(&rev)).unwrap() - base).abs() < 1e-12);
        let mut flipped = z.clone();
        for r in 0..50 {
            let v = flipped.get(r, 2);
            flipped.set(r, 2, -v);
        }
        assert!((std_uniformity(&flipped).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn preservation_examples() {
        let reference = Matrix::from_rows(&[[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9]]).unwrap();
        let labels = p(&[0, 0, 1, 1]);
        let inputs = Matrix::from_rows(&[[1.0, 0.05], [0.05, 1.0]]).unwrap();
        assert_eq!(preservation_rate(&inputs, &inputs, &reference, &labels, 3).unwrap(), 1.0);
        let swapped = Matrix::from_rows(&[[0.05, 1.0], [0.05, 1.0]]).unwrap();
        assert_eq!(preservation_rate(&inputs, &swapped, &reference, &labels, 1).unwrap(), 0.5);
        assert!(matches!(
            preservation_rate(&inputs, &inputs, &Matrix::zeros(0, 2), &p(&[]), 1),
            Err(Error::EmptyReference)
        ));
    }

    #[test]
    fn knn_vote_ties_to_smaller_label() {
        let reference = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        // labels canonicalize to 0 for the first row, 1 for the second
        let knn = KnnClassifier::new(&reference, &p(&[5, 2]), 2).unwrap();
        let q = Matrix::from_rows(&[[1.0, 0.2]]).unwrap();
        assert_eq!(knn.predict(&q).unwrap(), vec![0]);
    }

    #[test]
    fn report_csv_layout() {
        let r = MetricsReport {
            epoch: 3,
            nmi: 0.5,
            ami: 0.25,
            ari: 0.125,
            acc: 1.0,
            imbalance_ratio: 0.75,
            std_uniformity: 0.1,
            loss_pip: 2.0,
            loss_cdr: 0.0,
        };
        assert_eq!(
            MetricsReport::to_csv(&[r]),
            "epoch,nmi,ami,ari,acc,imbalance_ratio,std_uniformity,loss_pip,loss_cdr\n3,0.5,0.25,0.125,1,0.75,0.1,2,0\n"
        );
        assert_eq!(r.to_json()["acc"], 1.0);
    }
}
