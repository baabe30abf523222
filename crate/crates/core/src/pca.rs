//! Two-component PCA used to draw per-year cluster centers in the plane.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Projection {
    pub points: Vec<[f64; 2]>,
    /// Unit principal directions, one per output column.
    pub axes: [Vec<f64>; 2],
    /// Population variance of each output column.
    pub variances: [f64; 2],
}

/// Projects `vectors` onto their two leading principal directions.
///
/// Data are mean-centered and the covariance uses the population (`1/n`)
/// normalization, so each column's variance equals its eigenvalue. Each axis
/// is signed so that its largest-magnitude loading is positive.
pub fn pca_project(vectors: &[Vec<f64>]) -> Result<Projection> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::input(format!("need at least 2 vectors, got {n}")));
    }
    let dim = vectors[0].len();
    if dim < 2 {
        return Err(Error::input(format!("need dimension >= 2, got {dim}")));
    }
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::input("vectors have inconsistent dimensions"));
    }
    if vectors.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::input("vectors contain non-finite values"));
    }
    if vectors.iter().all(|v| v == &vectors[0]) {
        return Err(Error::DegenerateVariance(
            "all vectors are identical".into(),
        ));
    }

    let mean: Vec<f64> = (0..dim)
        .map(|d| vectors.iter().map(|v| v[d]).sum::<f64>() / n as f64)
        .collect();
    let centered = DMatrix::from_fn(n, dim, |i, d| vectors[i][d] - mean[d]);
    let cov = (centered.transpose() * &centered) / n as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let axis = |k: usize| -> Vec<f64> {
        let col = eig.eigenvectors.column(order[k]);
        let mut v: Vec<f64> = col.iter().copied().collect();
        let pivot = v
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, x)| {
                if x.abs() > best.1.abs() {
                    (i, *x)
                } else {
                    best
                }
            })
            .1;
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    let axes = [axis(0), axis(1)];
    let points: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let row = centered.row(i);
            let p = |a: &Vec<f64>| row.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
            [p(&axes[0]), p(&axes[1])]
        })
        .collect();
    let var = |k: usize| points.iter().map(|p| p[k] * p[k]).sum::<f64>() / n as f64;
    let variances = [var(0), var(1)];
    Ok(Projection {
        points,
        axes,
        variances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_dimensional_centered_input() {
        let data = vec![
            vec![2.0, 0.1],
            vec![-2.0, -0.1],
            vec![0.5, -0.7],
            vec![-0.5, 0.7],
        ];
        let p = pca_project(&data).unwrap();
        let total_in: f64 = data.iter().map(|v| v[0] * v[0] + v[1] * v[1]).sum::<f64>() / 4.0;
        assert!((p.variances[0] + p.variances[1] - total_in).abs() < 1e-9);
        assert!(p.variances[0] >= p.variances[1]);
        for (v, q) in data.iter().zip(&p.points) {
            let r_in = (v[0] * v[0] + v[1] * v[1]).sqrt();
            let r_out = (q[0] * q[0] + q[1] * q[1]).sqrt();
            assert!((r_in - r_out).abs() < 1e-9);
        }
    }

    #[test]
    fn sign_convention() {
        let data = vec![
            vec![0.0, 0.0, 0.0],
            vec![-3.0, 0.1, 0.0],
            vec![3.0, -0.1, 0.2],
        ];
        let p = pca_project(&data).unwrap();
        for axis in &p.axes {
            let max = axis
                .iter()
                .cloned()
                .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(max > 0.0);
        }
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            pca_project(&[vec![1.0, 2.0], vec![1.0, 2.0]]),
            Err(Error::DegenerateVariance(_))
        ));
        assert!(pca_project(&[vec![1.0, 2.0]]).is_err());
        assert!(pca_project(&[vec![1.0], vec![2.0]]).is_err());
    }
}
