//! Small dense-matrix helpers used only as verification oracles.
//!
//! Matrices are row-major `Vec<Vec<f64>>`. Nothing on the training or
//! sampling path touches this module.

use nalgebra::DMatrix;

pub type Dense = Vec<Vec<f64>>;

pub fn identity(m: usize) -> Dense {
    (0..m)
        .map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let n = a.len();
    let k = b.len();
    let m = b.first().map_or(0, Vec::len);
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for l in 0..k {
            let a_il = a[i][l];
            if a_il == 0.0 {
                continue;
            }
            for j in 0..m {
                out[i][j] += a_il * b[l][j];
            }
        }
    }
    out
}

pub fn matvec(a: &Dense, v: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum())
        .collect()
}

pub fn transpose(a: &Dense) -> Dense {
    let m = a.first().map_or(0, Vec::len);
    (0..m)
        .map(|j| a.iter().map(|row| row[j]).collect())
        .collect()
}

pub fn scale_add(alpha: f64, a: &Dense, beta: f64, b: &Dense) -> Dense {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| {
            ra.iter()
                .zip(rb)
                .map(|(x, y)| alpha * x + beta * y)
                .collect()
        })
        .collect()
}

pub fn max_abs_diff(a: &Dense, b: &Dense) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

pub fn max_abs_diff_vec(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn column_sums(a: &Dense) -> Vec<f64> {
    let m = a.first().map_or(0, Vec::len);
    (0..m).map(|j| a.iter().map(|row| row[j]).sum()).collect()
}

/// Number of singular values above `tol`.
pub fn numeric_rank(a: &Dense, tol: f64) -> usize {
    let n = a.len();
    let m = a.first().map_or(0, Vec::len);
    let mat = DMatrix::from_fn(n, m, |i, j| a[i][j]);
    mat.singular_values().iter().filter(|s| **s > tol).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_of_identity_and_outer_product() {
        assert_eq!(numeric_rank(&identity(4), 1e-9), 4);
        let outer: Dense = (0..4)
            .map(|i| (0..4).map(|j| (i + 1) as f64 * (j + 2) as f64).collect())
            .collect();
        assert_eq!(numeric_rank(&outer, 1e-9), 1);
    }

    #[test]
    fn matmul_with_identity() {
        let a = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        assert_eq!(matmul(&a, &identity(2)), a);
        assert_eq!(transpose(&a), vec![vec![1.0, 3.0], vec![2.0, 4.0]]);
    }
}
