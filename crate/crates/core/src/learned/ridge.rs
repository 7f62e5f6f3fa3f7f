//! Ridge-regression scorer on standardized features, with the ridge
//! parameter chosen by k-fold cross-validated squared error.
//!
//! Training streams feature rows into per-fold sufficient statistics
//! (row count, feature sums, Gram matrix, feature-label products, label
//! sums), so the feature matrix never has to be held in memory. Every fold
//! fit, held-out error and the final fit are exact functions of those
//! statistics.

use faer::linalg::matmul::matmul;
use faer::linalg::solvers::Solve;
use faer::{Accum, Mat, Par, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeConfig {
    /// Candidate ridge parameters, tried in order.
    pub lambdas: Vec<f64>,
    pub folds: usize,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        Self {
            lambdas: log_grid(-1.0, 5.0, 13),
            folds: 5,
        }
    }
}

/// `count` points evenly spaced in log10 between `10^lo` and `10^hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![10f64.powf(lo)];
    }
    (0..count)
        .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (count - 1) as f64))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub lambda: f64,
}

impl LinearModel {
    pub fn num_features(&self) -> usize {
        self.weights.len()
    }

    /// `weights . (features - mean) / scale + intercept`.
    pub fn score(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.weights.len() {
            return Err(Error::LengthMismatch {
                expected: self.weights.len(),
                actual: features.len(),
            });
        }
        Ok(features
            .iter()
            .zip(&self.weights)
            .zip(self.mean.iter().zip(&self.scale))
            .map(|((f, w), (m, s))| w * (f - m) / s)
            .sum::<f64>()
            + self.intercept)
    }
}

/// Per-lambda mean held-out squared error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub lambdas: Vec<f64>,
    pub errors: Vec<f64>,
    pub selected: usize,
}

#[derive(Clone, Debug)]
struct Stats {
    n: usize,
    sum_x: Vec<f64>,
    gram: Mat<f64>,
    xy: Vec<f64>,
    sum_y: f64,
    sum_yy: f64,
}

impl Stats {
    fn new(p: usize) -> Self {
        Self {
            n: 0,
            sum_x: vec![0.0; p],
            gram: Mat::zeros(p, p),
            xy: vec![0.0; p],
            sum_y: 0.0,
            sum_yy: 0.0,
        }
    }

    fn add(&mut self, other: &Stats) {
        self.n += other.n;
        self.sum_x.iter_mut().zip(&other.sum_x).for_each(|(a, b)| *a += b);
        self.gram += &other.gram;
        self.xy.iter_mut().zip(&other.xy).for_each(|(a, b)| *a += b);
        self.sum_y += other.sum_y;
        self.sum_yy += other.sum_yy;
    }

    fn minus(&self, other: &Stats) -> Stats {
        Stats {
            n: self.n - other.n,
            sum_x: self.sum_x.iter().zip(&other.sum_x).map(|(a, b)| a - b).collect(),
            gram: &self.gram - &other.gram,
            xy: self.xy.iter().zip(&other.xy).map(|(a, b)| a - b).collect(),
            sum_y: self.sum_y - other.sum_y,
            sum_yy: self.sum_yy - other.sum_yy,
        }
    }

    /// Statistics of `z = (x - mean) / scale`.
    fn standardize(&self, mean: &[f64], scale: &[f64]) -> Stats {
        let p = mean.len();
        let n = self.n as f64;
        let sum_z: Vec<f64> = (0..p)
            .map(|j| (self.sum_x[j] - n * mean[j]) / scale[j])
            .collect();
        let gram = Mat::from_fn(p, p, |i, j| {
            (self.gram[(i, j)] - self.sum_x[i] * mean[j] - mean[i] * self.sum_x[j]
                + n * mean[i] * mean[j])
                / (scale[i] * scale[j])
        });
        let xy = (0..p)
            .map(|j| (self.xy[j] - mean[j] * self.sum_y) / scale[j])
            .collect();
        Stats {
            n: self.n,
            sum_x: sum_z,
            gram,
            xy,
            sum_y: self.sum_y,
            sum_yy: self.sum_yy,
        }
    }

    /// Ridge fit with an unpenalized intercept.
    fn solve(&self, lambda: f64) -> Result<(Vec<f64>, f64)> {
        let p = self.sum_x.len();
        let n = self.n as f64;
        if self.n == 0 {
            return Err(Error::Degenerate("ridge fit on an empty subset".into()));
        }
        let m: Vec<f64> = self.sum_x.iter().map(|s| s / n).collect();
        let y_bar = self.sum_y / n;
        let a = Mat::from_fn(p, p, |i, j| {
            self.gram[(i, j)] - n * m[i] * m[j] + if i == j { lambda } else { 0.0 }
        });
        let rhs = Mat::from_fn(p, 1, |i, _| self.xy[i] - n * m[i] * y_bar);
        let llt = a
            .llt(Side::Lower)
            .map_err(|e| Error::Degenerate(format!("ridge system not positive definite: {e:?}")))?;
        let sol = llt.solve(&rhs);
        let w: Vec<f64> = (0..p).map(|i| sol[(i, 0)]).collect();
        let b = y_bar - m.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        Ok((w, b))
    }

    /// `sum (y - z.w - b)^2` over the rows summarized by `self`.
    fn squared_error(&self, w: &[f64], b: f64) -> f64 {
        let p = w.len();
        let wv = Mat::from_fn(p, 1, |i, _| w[i]);
        let mut gw = Mat::<f64>::zeros(p, 1);
        matmul(gw.as_mut(), Accum::Replace, self.gram.as_ref(), wv.as_ref(), 1.0, Par::Seq);
        let quad: f64 = (0..p).map(|i| w[i] * gw[(i, 0)]).sum();
        let wxy: f64 = w.iter().zip(&self.xy).map(|(a, b)| a * b).sum();
        let wsx: f64 = w.iter().zip(&self.sum_x).map(|(a, b)| a * b).sum();
        self.sum_yy - 2.0 * wxy - 2.0 * b * self.sum_y + quad + 2.0 * b * wsx
            + self.n as f64 * b * b
    }
}

/// Streams labelled feature rows into per-fold statistics. Row `i` (in
/// push order) belongs to fold `i % folds`.
pub struct RidgeAccumulator {
    p: usize,
    folds: Vec<Stats>,
    pushed: usize,
    labels_seen: [bool; 2],
}

impl RidgeAccumulator {
    pub fn new(num_features: usize, folds: usize) -> Result<Self> {
        if folds < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 folds, got {folds}")));
        }
        Ok(Self {
            p: num_features,
            folds: (0..folds).map(|_| Stats::new(num_features)).collect(),
            pushed: 0,
            labels_seen: [false; 2],
        })
    }

    pub fn rows(&self) -> usize {
        self.pushed
    }

    /// Adds a block of rows; `labels[i]` is true for "signal present".
    pub fn push_block(&mut self, rows: &[Vec<f64>], labels: &[bool]) -> Result<()> {
        if rows.len() != labels.len() {
            return Err(Error::LengthMismatch {
                expected: rows.len(),
                actual: labels.len(),
            });
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != self.p) {
            return Err(Error::LengthMismatch {
                expected: self.p,
                actual: bad.len(),
            });
        }
        let k = self.folds.len();
        for fold in 0..k {
            let members: Vec<usize> = (0..rows.len())
                .filter(|i| (self.pushed + i) % k == fold)
                .collect();
            if members.is_empty() {
                continue;
            }
            let block = Mat::from_fn(members.len(), self.p, |r, c| rows[members[r]][c]);
            let stats = &mut self.folds[fold];
            matmul(
                stats.gram.as_mut(),
                Accum::Add,
                block.transpose(),
                block.as_ref(),
                1.0,
                Par::Seq,
            );
            for &i in &members {
                let y = if labels[i] { 1.0 } else { -1.0 };
                self.labels_seen[labels[i] as usize] = true;
                stats.n += 1;
                stats.sum_y += y;
                stats.sum_yy += y * y;
                for (j, v) in rows[i].iter().enumerate() {
                    stats.sum_x[j] += v;
                    stats.xy[j] += v * y;
                }
            }
        }
        self.pushed += rows.len();
        Ok(())
    }

    /// Selects the ridge parameter by cross-validation and refits on all rows.
    pub fn finish(self, config: &RidgeConfig) -> Result<(LinearModel, CvReport)> {
        if !(self.labels_seen[0] && self.labels_seen[1]) {
            return Err(Error::Degenerate("training labels contain a single class".into()));
        }
        if config.lambdas.is_empty() || config.lambdas.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::InvalidParameter("ridge grid must hold positive values".into()));
        }
        if self.folds.iter().any(|f| f.n == 0) {
            return Err(Error::Degenerate(format!(
                "{} rows cannot fill {} folds",
                self.pushed,
                self.folds.len()
            )));
        }
        let mut total = Stats::new(self.p);
        for f in &self.folds {
            total.add(f);
        }
        let n = total.n as f64;
        let mean: Vec<f64> = total.sum_x.iter().map(|s| s / n).collect();
        let scale: Vec<f64> = (0..self.p)
            .map(|j| {
                let var = total.gram[(j, j)] / n - mean[j] * mean[j];
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();

        let total_z = total.standardize(&mean, &scale);
        let folds_z: Vec<Stats> = self
            .folds
            .iter()
            .map(|f| f.standardize(&mean, &scale))
            .collect();

        let mut errors = vec![0.0; config.lambdas.len()];
        for held_out in &folds_z {
            let train = total_z.minus(held_out);
            for (li, &lambda) in config.lambdas.iter().enumerate() {
                let (w, b) = train.solve(lambda)?;
                errors[li] += held_out.squared_error(&w, b);
            }
        }
        errors.iter_mut().for_each(|e| *e /= n);
        // ties resolve toward stronger regularization
        let selected = errors
            .iter()
            .enumerate()
            .fold(0, |best, (i, &e)| {
                let cmp = e.total_cmp(&errors[best]);
                let stronger = config.lambdas[i] > config.lambdas[best];
                if cmp.is_lt() || (cmp.is_eq() && stronger) {
                    i
                } else {
                    best
                }
            });
        let lambda = config.lambdas[selected];
        let (weights, intercept) = total_z.solve(lambda)?;
        if weights.iter().any(|w| !w.is_finite()) || !intercept.is_finite() {
            return Err(Error::Degenerate("ridge solution is not finite".into()));
        }
        Ok((
            LinearModel {
                weights,
                intercept,
                mean,
                scale,
                lambda,
            },
            CvReport {
                lambdas: config.lambdas.clone(),
                errors,
                selected,
            },
        ))
    }
}

/// In-memory convenience wrapper around [`RidgeAccumulator`].
pub fn train(features: &[Vec<f64>], labels: &[bool], config: &RidgeConfig) -> Result<LinearModel> {
    let p = features.first().map(Vec::len).unwrap_or(0);
    let mut acc = RidgeAccumulator::new(p, config.folds)?;
    acc.push_block(features, labels)?;
    Ok(acc.finish(config)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng_from_seed;
    use rand::Rng;

    fn toy(seed: u64, n: usize, p: usize) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = rng_from_seed(seed);
        let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let rows = labels
            .iter()
            .map(|&l| {
                (0..p)
                    .map(|j| {
                        let shift = if l && j == 0 { 0.8 } else { 0.0 };
                        rng.random::<f64>() + shift
                    })
                    .collect()
            })
            .collect();
        (rows, labels)
    }

    /// Direct normal-equation oracle on explicitly standardized, centered data.
    fn oracle(rows: &[Vec<f64>], labels: &[bool], lambda: f64) -> (Vec<f64>, f64) {
        let n = rows.len() as f64;
        let p = rows[0].len();
        let mean: Vec<f64> = (0..p).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale: Vec<f64> = (0..p)
            .map(|j| (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        let z: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| (0..p).map(|j| (r[j] - mean[j]) / scale[j]).collect())
            .collect();
        let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
        let y_bar = y.iter().sum::<f64>() / n;
        // Gaussian elimination on (Z'Z + lambda I) w = Z'(y - y_bar)
        let mut a = vec![vec![0.0; p + 1]; p];
        for i in 0..p {
            for j in 0..p {
                a[i][j] = z.iter().map(|r| r[i] * r[j]).sum::<f64>() + if i == j { lambda } else { 0.0 };
            }
            a[i][p] = z.iter().zip(&y).map(|(r, v)| r[i] * (v - y_bar)).sum();
        }
        for c in 0..p {
            let piv = a[c][c];
            for r in c + 1..p {
                let f = a[r][c] / piv;
                for k in c..=p {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
        let mut w = vec![0.0; p];
        for c in (0..p).rev() {
            let s: f64 = (c + 1..p).map(|k| a[c][k] * w[k]).sum();
            w[c] = (a[c][p] - s) / a[c][c];
        }
        (w, y_bar)
    }

    #[test]
    fn matches_normal_equations() {
        let (rows, labels) = toy(1, 200, 6);
        let cfg = RidgeConfig {
            lambdas: vec![3.0],
            folds: 4,
        };
        let model = train(&rows, &labels, &cfg).unwrap();
        let (w, b) = oracle(&rows, &labels, 3.0);
        for (a, e) in model.weights.iter().zip(&w) {
            assert!((a - e).abs() < 1e-9, "{a} vs {e}");
        }
        assert!((model.intercept - b).abs() < 1e-9);
    }

    #[test]
    fn separable_toy_is_classified() {
        let rows: Vec<Vec<f64>> = [-2.0, -1.5, -1.0, -0.5, 0.5, 1.0, 1.5, 2.0, -1.2, 1.2]
            .iter()
            .map(|&v| vec![v])
            .collect();
        let labels: Vec<bool> = rows.iter().map(|r| r[0] > 0.0).collect();
        let model = train(
            &rows,
            &labels,
            &RidgeConfig {
                lambdas: log_grid(-3.0, 1.0, 5),
                folds: 2,
            },
        )
        .unwrap();
        for (r, l) in rows.iter().zip(&labels) {
            assert_eq!(model.score(r).unwrap() > 0.0, *l);
        }
    }

    #[test]
    fn duplicated_data_with_scaled_grid_gives_same_model() {
        let (rows, labels) = toy(2, 100, 4);
        let grid = log_grid(-2.0, 3.0, 11);
        let cfg = RidgeConfig {
            lambdas: grid.clone(),
            folds: 5,
        };
        let (single, cv1) = {
            let mut acc = RidgeAccumulator::new(4, 5).unwrap();
            acc.push_block(&rows, &labels).unwrap();
            acc.finish(&cfg).unwrap()
        };
        let doubled_rows: Vec<_> = rows.iter().chain(&rows).cloned().collect();
        let doubled_labels: Vec<_> = labels.iter().chain(&labels).cloned().collect();
        let cfg2 = RidgeConfig {
            lambdas: grid.iter().map(|l| l * 2.0).collect(),
            folds: 5,
        };
        let mut acc = RidgeAccumulator::new(4, 5).unwrap();
        acc.push_block(&doubled_rows, &doubled_labels).unwrap();
        let (double, cv2) = acc.finish(&cfg2).unwrap();
        assert_eq!(cv1.selected, cv2.selected);
        assert!((double.lambda - 2.0 * single.lambda).abs() < 1e-12);
        for (a, b) in single.weights.iter().zip(&double.weights) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!((single.intercept - double.intercept).abs() < 1e-9);
    }

    #[test]
    fn huge_lambda_shrinks_to_intercept() {
        let (rows, labels) = toy(3, 60, 5);
        let model = train(
            &rows,
            &labels,
            &RidgeConfig {
                lambdas: vec![1e12],
                folds: 3,
            },
        )
        .unwrap();
        assert!(model.weights.iter().all(|w| w.abs() < 1e-9));
        let y_bar = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).sum::<f64>() / 60.0;
        assert!((model.score(&rows[7]).unwrap() - y_bar).abs() < 1e-8);
    }

    #[test]
    fn single_class_is_rejected() {
        let rows = vec![vec![1.0, 2.0]; 10];
        let labels = vec![true; 10];
        assert!(matches!(
            train(&rows, &labels, &RidgeConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn score_properties() {
        let model = LinearModel {
            weights: vec![0.0, 0.0],
            intercept: 0.25,
            mean: vec![1.0, 2.0],
            scale: vec![1.0, 1.0],
            lambda: 1.0,
        };
        assert_eq!(model.score(&[9.0, -3.0]).unwrap(), 0.25);
        let model = LinearModel {
            weights: vec![1.5, -0.5],
            ..model
        };
        assert_eq!(model.score(&[1.0, 2.0]).unwrap(), 0.25);
        assert!(model.score(&[1.1, 2.0]).unwrap() > model.score(&[1.0, 2.0]).unwrap());
        assert!(model.score(&[1.0]).is_err());
    }

    #[test]
    fn constant_feature_keeps_unit_scale() {
        let (mut rows, labels) = toy(4, 40, 3);
        rows.iter_mut().for_each(|r| r[2] = 0.5);
        let model = train(&rows, &labels, &RidgeConfig::default()).unwrap();
        assert_eq!(model.scale[2], 1.0);
        assert!(model.weights.iter().all(|w| w.is_finite()));
    }
}
