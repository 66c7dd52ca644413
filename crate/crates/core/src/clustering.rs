//! Spherical k-means pseudo-labels and the memory queue.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, format_f64, Matrix, Rng};

/// Centroids on the unit sphere and the assignment of every point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabeling {
    /// `K×d`, unit rows.
    pub centroids: Matrix,
    pub assign: Vec<usize>,
    /// Sum over points of `1 − cos(x_i, c_{assign[i]})`.
    pub inertia: f64,
}

impl PseudoLabeling {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    /// Point count per cluster, length `K`.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.k()];
        for &a in &self.assign {
            c[a] += 1;
        }
        c
    }

    /// Writes the centroids (one per line) and the assignments (one label
    /// per line) as two headerless CSV files.
    pub fn save_csv(&self, centroids_path: impl AsRef<Path>, assign_path: impl AsRef<Path>) -> Result<()> {
        self.centroids.save_csv(centroids_path)?;
        let path = assign_path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write_labels(&self.assign, std::io::BufWriter::new(file))
    }

    /// Reads a pair written by [`PseudoLabeling::save_csv`]; inertia is
    /// recomputed from `points` when given, otherwise left at NaN.
    pub fn load_csv(
        centroids_path: impl AsRef<Path>,
        assign_path: impl AsRef<Path>,
        points: Option<&Matrix>,
    ) -> Result<Self> {
        let centroids = Matrix::load_csv(centroids_path)?;
        let path = assign_path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let assign = read_labels(std::io::BufReader::new(file))?;
        if let Some(&bad) = assign.iter().find(|&&a| a >= centroids.rows()) {
            return Err(Error::InvalidArgument(format!(
                "assignment {bad} out of range for {} centroids",
                centroids.rows()
            )));
        }
        let inertia = match points {
            Some(x) => inertia_of(x, &centroids, &assign)?,
            None => f64::NAN,
        };
        Ok(Self {
            centroids,
            assign,
            inertia,
        })
    }
}

/// One non-negative integer label per line.
pub fn write_labels<W: Write>(labels: &[usize], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(writer);
    for l in labels {
        w.write_record([l.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn read_labels<R: Read>(reader: R) -> Result<Vec<usize>> {
    let (m, _) = crate::data::parse_csv_table(reader, None)?;
    if m.rows() > 0 && m.cols() != 1 {
        return Err(Error::RaggedRows {
            row: 1,
            expected: 1,
            got: m.cols(),
        });
    }
    m.as_slice()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v >= 0.0 && v.fract() == 0.0 && v < usize::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(Error::Parse {
                    row: i + 1,
                    column: 1,
                    message: format!("expected a non-negative integer label, got {}", format_f64(v)),
                })
            }
        })
        .collect()
}

/// Settings of [`spherical_kmeans`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iter: usize,
    /// Stop once the relative inertia improvement falls below this.
    pub tol: f64,
    /// Independent k-means++ restarts; the lowest inertia wins.
    pub n_init: usize,
}

impl KMeansParams {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            max_iter: 100,
            tol: 1e-6,
            n_init: 5,
        }
    }
}

/// One restart with its inertia after every assignment step.
#[derive(Clone, Debug)]
pub struct KMeansRun {
    pub labeling: PseudoLabeling,
    pub inertia_trace: Vec<f64>,
}

fn argmax_cosine(x: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, c) in centroids.row_iter().enumerate() {
        let s = dot(x, c);
        if s > best.1 {
            best = (k, s);
        }
    }
    best
}

fn check_dims(x: &Matrix, centroids: &Matrix) -> Result<()> {
    if x.cols() != centroids.cols() {
        return Err(Error::DimMismatch {
            expected: centroids.cols(),
            got: x.cols(),
        });
    }
    Ok(())
}

/// Nearest centroid (highest cosine) for each row, ties to the smallest
/// index. Works with stale centroids on any batch of matching width.
pub fn assign_batch(pseudo: &PseudoLabeling, x: &Matrix) -> Result<Vec<usize>> {
    check_dims(x, &pseudo.centroids)?;
    Ok(x.row_iter()
        .map(|r| argmax_cosine(r, &pseudo.centroids).0)
        .collect())
}

fn inertia_of(x: &Matrix, centroids: &Matrix, assign: &[usize]) -> Result<f64> {
    check_dims(x, centroids)?;
    if assign.len() != x.rows() {
        return Err(Error::LengthMismatch {
            left: x.rows(),
            right: assign.len(),
        });
    }
    Ok(x.row_iter()
        .zip(assign)
        .map(|(r, &a)| 1.0 - dot(r, centroids.row(a)))
        .sum())
}

fn check_input(x: &Matrix, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("k-means needs K ≥ 1".into()));
    }
    if x.rows() < k {
        return Err(Error::TooFewPoints {
            points: x.rows(),
            k,
        });
    }
    Ok(())
}

/// k-means++ seeding with cosine distance: each new centroid is a data point
/// drawn with weight `1 − max cos` to the centroids chosen so far.
fn plus_plus_init(x: &Matrix, k: usize, rng: &mut Rng) -> Matrix {
    let n = x.rows();
    let mut chosen = vec![rng.below(n)];
    let mut best_cos: Vec<f64> = x.row_iter().map(|r| dot(r, x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let weights: Vec<f64> = best_cos.iter().map(|c| (1.0 - c).max(0.0)).collect();
        let next = rng.weighted_index(&weights).unwrap_or_else(|| rng.below(n));
        chosen.push(next);
        for (b, r) in best_cos.iter_mut().zip(x.row_iter()) {
            *b = b.max(dot(r, x.row(next)));
        }
    }
    x.select_rows(&chosen)
}

/// Moves every centroid to the normalized mean of its members. A centroid
/// with no members, or whose members sum to the zero vector, is re-seeded
/// at the point farthest (in cosine distance) from its current centroid.
fn update_centroids(x: &Matrix, centroids: &mut Matrix, assign: &[usize]) {
    let (k, d) = centroids.shape();
    let mut sums = Matrix::zeros(k, d);
    for (r, &a) in x.row_iter().zip(assign) {
        for (s, v) in sums.row_mut(a).iter_mut().zip(r) {
            *s += v;
        }
    }
    let mut orphans = Vec::new();
    for c in 0..k {
        let n = crate::numerics::norm(sums.row(c));
        if n > crate::numerics::MIN_ROW_NORM {
            for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                *dst = s / n;
            }
        } else {
            orphans.push(c);
        }
    }
    if orphans.is_empty() {
        return;
    }
    let mut far: Vec<(f64, usize)> = x
        .row_iter()
        .zip(assign)
        .enumerate()
        .map(|(i, (r, &a))| (1.0 - dot(r, centroids.row(a)), i))
        .collect();
    // farthest first, then by index
    far.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (c, &(_, i)) in orphans.into_iter().zip(&far) {
        centroids.row_mut(c).copy_from_slice(x.row(i));
    }
}

/// A single k-means++ seeded run, recording the inertia after each
/// assignment step.
pub fn spherical_kmeans_run(
    x: &Matrix,
    k: usize,
    max_iter: usize,
    tol: f64,
    rng: &mut Rng,
) -> Result<KMeansRun> {
    check_input(x, k)?;
    let mut centroids = plus_plus_init(x, k, rng);
    let mut trace = Vec::new();
    let mut assign = vec![0; x.rows()];
    let mut prev = f64::INFINITY;
    for iter in 0..max_iter.max(1) {
        for (a, r) in assign.iter_mut().zip(x.row_iter()) {
            *a = argmax_cosine(r, &centroids).0;
        }
        let inertia = inertia_of(x, &centroids, &assign)?;
        trace.push(inertia);
        let converged = prev.is_finite() && prev - inertia <= tol * prev.abs();
        if converged || inertia == 0.0 || iter + 1 == max_iter.max(1) {
            break;
        }
        prev = inertia;
        update_centroids(x, &mut centroids, &assign);
    }
    let inertia = *trace.last().unwrap_or(&0.0);
    Ok(KMeansRun {
        labeling: PseudoLabeling {
            centroids,
            assign,
            inertia,
        },
        inertia_trace: trace,
    })
}

/// Spherical k-means on unit rows with `n_init` seeded restarts.
///
/// Restart `r` draws from `rng`'s child stream `r` (after one draw from
/// `rng` itself), so results are fixed by the caller's generator state. The
/// lowest inertia wins, ties to the earliest restart.
pub fn spherical_kmeans(x: &Matrix, params: &KMeansParams, rng: &mut Rng) -> Result<PseudoLabeling> {
    check_input(x, params.k)?;
    let base = Rng::new(rng.next_u64());
    let mut best: Option<PseudoLabeling> = None;
    for r in 0..params.n_init.max(1) {
        let run = spherical_kmeans_run(x, params.k, params.max_iter, params.tol, &mut base.fork(r as u64))?;
        if best.as_ref().is_none_or(|b| run.labeling.inertia < b.inertia) {
            best = Some(run.labeling);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// FIFO of recent target embeddings used to enlarge the clustering pool.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MemoryQueue {
    capacity: usize,
    dim: Option<usize>,
    entries: VecDeque<(Vec<f64>, u64)>,
    next_age: u64,
}

impl MemoryQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            ..Self::default()
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends the rows in order, evicting the oldest beyond capacity. Each
    /// row gets the next value of an insertion counter as its age stamp.
    pub fn push(&mut self, batch: &Matrix) -> Result<()> {
        if batch.rows() == 0 || self.capacity == 0 {
            return Ok(());
        }
        match self.dim {
            Some(d) if d != batch.cols() => {
                return Err(Error::DimMismatch {
                    expected: d,
                    got: batch.cols(),
                })
            }
            _ => self.dim = Some(batch.cols()),
        }
        for r in batch.row_iter() {
            self.entries.push_back((r.to_vec(), self.next_age));
            self.next_age += 1;
            if self.entries.len() > self.capacity {
                self.entries.pop_front();
            }
        }
        Ok(())
    }

    /// Oldest first.
    pub fn ages(&self) -> Vec<u64> {
        self.entries.iter().map(|(_, a)| *a).collect()
    }

    /// Oldest first. Empty queues give a `0×0` matrix.
    pub fn as_matrix(&self) -> Matrix {
        let d = self.dim.unwrap_or(0);
        let data: Vec<f64> = self.entries.iter().flat_map(|(v, _)| v.iter().copied()).collect();
        Matrix::new(self.entries.len(), if data.is_empty() { 0 } else { d }, data)
            .expect("queue rows are finite")
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// Batch rows followed by the queue contents.
pub fn cluster_pool(batch: &Matrix, queue: &MemoryQueue) -> Result<Matrix> {
    if queue.is_empty() {
        return Ok(batch.clone());
    }
    let q = queue.as_matrix();
    if q.cols() != batch.cols() {
        return Err(Error::DimMismatch {
            expected: batch.cols(),
            got: q.cols(),
        });
    }
    Matrix::vstack(&[batch, &q])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{l2_normalize_rows, random_unit_rows};

    #[test]
    fn single_cluster_is_normalized_mean() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]]).unwrap();
        let p = spherical_kmeans(&x, &KMeansParams::new(1), &mut Rng::new(1)).unwrap();
        let mean = l2_normalize_rows(&Matrix::from_rows(&[[1.6, 1.8]]).unwrap()).unwrap();
        assert!(p.centroids.max_abs_diff(&mean).unwrap() < 1e-12);
        assert_eq!(p.assign, vec![0, 0, 0]);
    }

    #[test]
    fn n_equals_k_gives_zero_inertia() {
        let mut rng = Rng::new(2);
        let x = random_unit_rows(5, 3, &mut rng);
        let p = spherical_kmeans(&x, &KMeansParams::new(5), &mut rng).unwrap();
        assert!(p.inertia.abs() < 1e-12);
        let mut seen = p.assign.clone();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn too_few_points() {
        let x = random_unit_rows(2, 3, &mut Rng::new(0));
        assert!(matches!(
            spherical_kmeans(&x, &KMeansParams::new(3), &mut Rng::new(0)),
            Err(Error::TooFewPoints { points: 2, k: 3 })
        ));
    }

    #[test]
    fn assign_batch_examples() {
        let c = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let p = PseudoLabeling {
            centroids: c.clone(),
            assign: vec![0, 1],
            inertia: 0.0,
        };
        assert_eq!(assign_batch(&p, &c).unwrap(), vec![0, 1]);
        let anti = Matrix::from_rows(&[[-1.0, 0.0]]).unwrap();
        assert_eq!(assign_batch(&p, &anti).unwrap(), vec![1]);
        assert!(assign_batch(&p, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn assign_batch_matches_scan() {
        let mut rng = Rng::new(21);
        let c = random_unit_rows(4, 5, &mut rng);
        let x = random_unit_rows(30, 5, &mut rng);
        let p = PseudoLabeling {
            centroids: c.clone(),
            assign: vec![],
            inertia: 0.0,
        };
        let got = assign_batch(&p, &x).unwrap();
        for (i, &g) in got.iter().enumerate() {
            let sims: Vec<f64> = (0..4).map(|k| dot(x.row(i), c.row(k))).collect();
            let best = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(sims.iter().position(|&s| s == best).unwrap(), g);
        }
    }

    #[test]
    fn converged_assignment_is_reproduced() {
        let mut rng = Rng::new(31);
        let x = random_unit_rows(60, 4, &mut rng);
        let p = spherical_kmeans(&x, &KMeansParams::new(4), &mut rng).unwrap();
        assert_eq!(assign_batch(&p, &x).unwrap(), p.assign);
        for c in p.centroids.row_iter() {
            assert!((crate::numerics::norm(c) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn queue_is_fifo() {
        let mut q = MemoryQueue::new(4);
        let rows = |v: &[f64]| Matrix::from_rows(&v.iter().map(|&x| [x, 0.0]).collect::<Vec<_>>()).unwrap();
        q.push(&rows(&[1.0, 2.0])).unwrap();
        q.push(&rows(&[3.0, 4.0, 5.0])).unwrap();
        assert_eq!(q.as_matrix(), rows(&[2.0, 3.0, 4.0, 5.0]));
        let ages = q.ages();
        assert!(ages.windows(2).all(|w| w[0] < w[1]));

        let mut off = MemoryQueue::new(0);
        off.push(&rows(&[1.0])).unwrap();
        assert!(off.is_empty());

        let mut q = MemoryQueue::new(3);
        q.push(&rows(&[1.0, 2.0, 3.0, 4.0, 5.0])).unwrap();
        assert_eq!(q.as_matrix(), rows(&[3.0, 4.0, 5.0]));
        assert!(q.push(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn pool_concatenates_batch_first() {
        let batch = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let q = MemoryQueue::new(5);
        assert_eq!(cluster_pool(&batch, &q).unwrap(), batch);
        let mut q = MemoryQueue::new(5);
        let extra = Matrix::from_rows(&[[0.6, 0.8], [0.8, 0.6], [-1.0, 0.0]]).unwrap();
        q.push(&extra).unwrap();
        let pooled = cluster_pool(&batch, &q).unwrap();
        assert_eq!(pooled.rows(), 5);
        assert_eq!(pooled.row(0), batch.row(0));
        assert_eq!(pooled.row(2), extra.row(0));
    }

    #[test]
    fn csv_pair_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = Rng::new(4);
        let x = random_unit_rows(20, 3, &mut rng);
        let p = spherical_kmeans(&x, &KMeansParams::new(3), &mut rng).unwrap();
        let (c, a) = (dir.path().join("c.csv"), dir.path().join("a.csv"));
        p.save_csv(&c, &a).unwrap();
        let back = PseudoLabeling::load_csv(&c, &a, Some(&x)).unwrap();
        assert_eq!(back.centroids, p.centroids);
        assert_eq!(back.assign, p.assign);
        assert!((back.inertia - p.inertia).abs() < 1e-12);
    }
}
