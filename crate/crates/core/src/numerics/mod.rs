//! Dense matrices, geometry on the unit hypersphere and the seeded RNG.

mod matrix;
mod rng;

pub use matrix::{dot, norm, Matrix};
pub(crate) use matrix::format_f64;
pub use rng::Rng;

use crate::error::{Error, Result};

/// Rows with a norm at or below this are rejected by normalization.
pub const MIN_ROW_NORM: f64 = 1e-12;

/// Scales every row to unit ℓ2 norm.
pub fn l2_normalize_rows(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let n = norm(row);
        if !(n > MIN_ROW_NORM) {
            return Err(Error::ZeroRow { row: r, norm: n });
        }
        row.iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}

/// Pulls a gradient back through [`l2_normalize_rows`].
///
/// For `y = x / ‖x‖` the Jacobian-vector product is
/// `(dy − y·(yᵀdy)) / ‖x‖`.
pub fn l2_normalize_rows_backward(x: &Matrix, y: &Matrix, dy: &Matrix) -> Result<Matrix> {
    if x.shape() != y.shape() || x.shape() != dy.shape() {
        return Err(Error::DimMismatch {
            expected: x.rows() * x.cols(),
            got: dy.rows() * dy.cols(),
        });
    }
    let mut dx = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let n = norm(x.row(r));
        let yr = y.row(r);
        let gr = dy.row(r);
        let proj = dot(yr, gr);
        for ((d, &yv), &gv) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
            *d = (gv - yv * proj) / n;
        }
    }
    Ok(dx)
}

/// Cosine similarity of two unit vectors: their dot product clamped to
/// `[-1, 1]`.
pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    debug_assert!((norm(u) - 1.0).abs() < 1e-9 && (norm(v) - 1.0).abs() < 1e-9);
    Ok(dot(u, v).clamp(-1.0, 1.0))
}

/// All-pairs cosine similarity of unit rows.
pub fn pairwise_cosine(m: &Matrix) -> Matrix {
    let n = m.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        out.set(i, i, dot(m.row(i), m.row(i)).clamp(-1.0, 1.0));
        for j in (i + 1)..n {
            let c = dot(m.row(i), m.row(j)).clamp(-1.0, 1.0);
            out.set(i, j, c);
            out.set(j, i, c);
        }
    }
    out
}

/// Rows of i.i.d. standard normals, normalized: uniform on the sphere.
pub fn random_unit_rows(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let mut m = Matrix::from_fn(rows, cols, |_, _| rng.normal());
    for r in 0..rows {
        let row = m.row_mut(r);
        let n = norm(row).max(f64::MIN_POSITIVE);
        row.iter_mut().for_each(|v| *v /= n);
    }
    m
}

/// Numerically stable `log Σ exp(v)`. Returns `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use super::Rng;

    #[test]
    fn normalize_examples() {
        let m = Matrix::from_rows(&[[3.0, 4.0]]).unwrap();
        assert_eq!(l2_normalize_rows(&m).unwrap().as_slice(), &[0.6, 0.8]);
        let e = Matrix::from_rows(&[[1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(l2_normalize_rows(&e).unwrap(), e);
        let z = Matrix::from_rows(&[[0.0, 0.0]]).unwrap();
        assert!(matches!(l2_normalize_rows(&z), Err(Error::ZeroRow { row: 0, .. })));
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_sim(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        assert!(matches!(
            cosine_sim(&[1.0, 0.0], &[1.0, 0.0, 0.0]),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn pairwise_examples() {
        let basis = Matrix::identity(2);
        assert_eq!(pairwise_cosine(&basis), Matrix::identity(2));
        let one = Matrix::from_rows(&[[0.6, 0.8]]).unwrap();
        assert_eq!(pairwise_cosine(&one).as_slice(), &[1.0]);
    }

    #[test]
    fn pairwise_matches_scalar_loop() {
        let mut rng = Rng::new(5);
        let m = random_unit_rows(5, 4, &mut rng);
        let p = pairwise_cosine(&m);
        for i in 0..5 {
            assert!((p.get(i, i) - 1.0).abs() < 1e-10);
            for j in 0..5 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += m.get(i, k) * m.get(j, k);
                }
                assert!((p.get(i, j) - s).abs() < 1e-12);
                assert!((p.get(i, j) - p.get(j, i)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn normalize_backward_matches_finite_differences() {
        let mut rng = Rng::new(9);
        let x = Matrix::from_fn(3, 4, |_, _| rng.normal());
        let dy = Matrix::from_fn(3, 4, |_, _| rng.normal());
        let y = l2_normalize_rows(&x).unwrap();
        let dx = l2_normalize_rows_backward(&x, &y, &dy).unwrap();
        let f = |x: &Matrix| -> f64 {
            let y = l2_normalize_rows(x).unwrap();
            dot(y.as_slice(), dy.as_slice())
        };
        let h = 1e-6;
        for i in 0..12 {
            let mut xp = x.clone();
            xp.as_mut_slice()[i] += h;
            let mut xm = x.clone();
            xm.as_mut_slice()[i] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            assert!((fd - dx.as_slice()[i]).abs() < 1e-7);
        }
    }

    proptest! {
        #[test]
        fn chord_identity_holds(seed in any::<u64>(), d in 2usize..10) {
            let mut rng = Rng::new(seed);
            let m = random_unit_rows(2, d, &mut rng);
            let (u, v) = (m.row(0), m.row(1));
            let sq: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            prop_assert!((sq - (2.0 - 2.0 * dot(u, v))).abs() < 1e-12);
        }

        #[test]
        fn normalize_is_idempotent(seed in any::<u64>(), rows in 1usize..6, d in 1usize..8) {
            let mut rng = Rng::new(seed);
            let m = Matrix::from_fn(rows, d, |_, _| rng.normal() + 0.1);
            if let Ok(once) = l2_normalize_rows(&m) {
                let twice = l2_normalize_rows(&once).unwrap();
                prop_assert!(once.max_abs_diff(&twice).unwrap() < 1e-12);
                for r in once.row_iter() {
                    prop_assert!((norm(r) - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
