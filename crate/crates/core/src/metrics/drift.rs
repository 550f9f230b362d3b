use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// Rows per side kept for the kernel estimate.
pub const MMD_MAX_ROWS: usize = 2000;
/// Pooled rows used for the median-distance bandwidth.
const MEDIAN_ROWS: usize = 1000;

fn subsample<R: Rng + ?Sized>(x: &Matrix<f64>, cap: usize, rng: &mut R) -> Matrix<f64> {
    if x.rows() <= cap {
        return x.clone();
    }
    let mut idx = sample(rng, x.rows(), cap).into_vec();
    idx.sort_unstable();
    x.select_rows(&idx)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Pairwise squared distances between the rows of `a` and `b`.
fn sq_dists(a: &Matrix<f64>, b: &Matrix<f64>) -> Result<Matrix<f64>> {
    let na: Vec<f64> = (0..a.rows())
        .map(|i| a.row(i).iter().map(|v| v * v).sum())
        .collect();
    let nb: Vec<f64> = (0..b.rows())
        .map(|i| b.row(i).iter().map(|v| v * v).sum())
        .collect();
    let mut g = a.matmul(&b.transpose())?;
    for i in 0..a.rows() {
        for (j, v) in g.row_mut(i).iter_mut().enumerate() {
            *v = (na[i] + nb[j] - 2.0 * *v).max(0.0);
        }
    }
    Ok(g)
}

/// Median pairwise Euclidean distance over the pooled sample.
pub fn median_bandwidth(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    let half = MEDIAN_ROWS / 2;
    let take = |x: &Matrix<f64>| {
        (0..x.rows().min(half))
            .map(|i| x.row(i).to_vec())
            .collect::<Vec<_>>()
    };
    let mut pooled = take(a);
    pooled.extend(take(b));
    let mut d = Vec::with_capacity(pooled.len() * pooled.len() / 2);
    for i in 0..pooled.len() {
        for j in (i + 1)..pooled.len() {
            d.push(sq_dist(&pooled[i], &pooled[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    if *m > 0.0 {
        *m
    } else {
        1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmdEstimate {
    /// Unbiased MMD², may be slightly negative.
    pub mmd2_unbiased: f64,
    /// `sqrt(max(MMD², 0))`.
    pub mmd: f64,
    pub bandwidth: f64,
    pub rows_a: usize,
    pub rows_b: usize,
}

/// Unbiased RBF-kernel MMD between two samples, each capped at
/// `max_rows` by uniform subsampling without replacement. The bandwidth is
/// the median pairwise distance of the pooled sample.
pub fn mmd_rbf<R: Rng + ?Sized>(
    a: &Matrix<f64>,
    b: &Matrix<f64>,
    max_rows: usize,
    rng: &mut R,
) -> Result<MmdEstimate> {
    if a.cols() != b.cols() {
        return Err(Error::Dimension(format!(
            "mmd over {} and {} columns",
            a.cols(),
            b.cols()
        )));
    }
    if a.rows() < 2 || b.rows() < 2 {
        return Err(Error::Config(
            "mmd needs at least two rows per sample".into(),
        ));
    }
    let xa = subsample(a, max_rows, rng);
    let xb = subsample(b, max_rows, rng);
    let sigma = median_bandwidth(&xa, &xb);
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let mean_k = |d: &Matrix<f64>, skip_diag: bool| {
        let mut s = 0.0;
        for i in 0..d.rows() {
            for (j, &v) in d.row(i).iter().enumerate() {
                if !(skip_diag && i == j) {
                    s += (-gamma * v).exp();
                }
            }
        }
        let n = (d.rows() * d.cols()) as f64 - if skip_diag { d.rows() as f64 } else { 0.0 };
        s / n
    };
    let kaa = mean_k(&sq_dists(&xa, &xa)?, true);
    let kbb = mean_k(&sq_dists(&xb, &xb)?, true);
    let kab = mean_k(&sq_dists(&xa, &xb)?, false);
    let m2 = kaa + kbb - 2.0 * kab;
    Ok(MmdEstimate {
        mmd2_unbiased: m2,
        mmd: m2.max(0.0).sqrt(),
        bandwidth: sigma,
        rows_a: xa.rows(),
        rows_b: xb.rows(),
    })
}

/// Euclidean distance between the column means.
pub fn l2_mean_drift(a: &Matrix<f64>, b: &Matrix<f64>) -> Result<f64> {
    if a.cols() != b.cols() || a.rows() == 0 || b.rows() == 0 {
        return Err(Error::Dimension(format!(
            "mean drift over {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let ma = a.column_sums();
    let mb = b.column_sums();
    Ok(ma
        .iter()
        .zip(&mb)
        .map(|(x, y)| (x / a.rows() as f64 - y / b.rows() as f64).powi(2))
        .sum::<f64>()
        .sqrt())
}
