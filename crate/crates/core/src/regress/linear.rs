//! Ordinary least squares and elastic net.

use serde::{Deserialize, Serialize};

use super::FitError;

/// `y ≈ intercept + weights · x`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

fn column_means(x: &[Vec<f64>], p: usize) -> Vec<f64> {
    let n = x.len() as f64;
    let mut m = vec![0.0; p];
    for row in x {
        for (j, v) in row.iter().enumerate() {
            m[j] += v;
        }
    }
    m.iter_mut().for_each(|v| *v /= n);
    m
}

fn check_shape(x: &[Vec<f64>], y: &[f64]) -> Result<usize, FitError> {
    if x.is_empty() {
        return Err(FitError::EmptyTrainingSet);
    }
    if x.len() != y.len() {
        return Err(FitError::InvalidInput(format!("{} rows but {} targets", x.len(), y.len())));
    }
    let p = x[0].len();
    if x.iter().any(|r| r.len() != p) {
        return Err(FitError::InvalidInput("ragged feature matrix".into()));
    }
    Ok(p)
}

/// In-place Cholesky factorisation of a symmetric positive definite matrix
/// (row-major, lower triangle written). Returns false if not SPD.
fn cholesky(a: &mut [f64], p: usize) -> bool {
    for j in 0..p {
        let mut d = a[j * p + j];
        for k in 0..j {
            d -= a[j * p + k] * a[j * p + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * p + j] = d;
        for i in j + 1..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = s / d;
        }
    }
    true
}

fn cholesky_solve(l: &[f64], p: usize, b: &mut [f64]) {
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * p + k] * b[k];
        }
        b[i] = s / l[i * p + i];
    }
    for i in (0..p).rev() {
        let mut s = b[i];
        for k in i + 1..p {
            s -= l[k * p + i] * b[k];
        }
        b[i] = s / l[i * p + i];
    }
}

/// Least squares via the centred normal equations. A singular Gram matrix is
/// retried once with a `1e-10` ridge on the diagonal.
pub fn fit_ols(x: &[Vec<f64>], y: &[f64]) -> Result<LinearModel, FitError> {
    let p = check_shape(x, y)?;
    if x.len() <= p {
        return Err(FitError::InvalidInput(format!("need more rows than columns ({} <= {p})", x.len())));
    }
    let xm = column_means(x, p);
    let ym = y.iter().sum::<f64>() / y.len() as f64;

    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    for (row, &t) in x.iter().zip(y) {
        let yc = t - ym;
        for i in 0..p {
            let xi = row[i] - xm[i];
            rhs[i] += xi * yc;
            for j in 0..=i {
                gram[i * p + j] += xi * (row[j] - xm[j]);
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            gram[j * p + i] = gram[i * p + j];
        }
    }

    let mut l = gram.clone();
    if !cholesky(&mut l, p) {
        l = gram;
        for i in 0..p {
            l[i * p + i] += 1e-10;
        }
        if !cholesky(&mut l, p) {
            return Err(FitError::SingularSystem);
        }
    }
    let mut w = rhs;
    cholesky_solve(&l, p, &mut w);
    let intercept = ym - w.iter().zip(&xm).map(|(a, b)| a * b).sum::<f64>();
    Ok(LinearModel { weights: w, intercept })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElasticNetParams {
    /// Mix between L1 (1.0) and L2 (0.0) penalties.
    pub l1_ratio: f64,
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ElasticNetParams {
    fn default() -> Self {
        Self { l1_ratio: 0.5, lambda: 0.01, tol: 1e-6, max_iter: 10_000 }
    }
}

impl ElasticNetParams {
    pub fn validate(&self) -> Result<(), FitError> {
        if !(0.0..=1.0).contains(&self.l1_ratio) {
            return Err(FitError::InvalidParams(format!("l1_ratio {} outside [0, 1]", self.l1_ratio)));
        }
        if !(self.lambda >= 0.0) {
            return Err(FitError::InvalidParams(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(FitError::InvalidParams("tol must be > 0 and max_iter >= 1".into()));
        }
        Ok(())
    }
}

/// Objective minimised by [`fit_elastic_net`]:
/// `1/(2n)·‖y − b − Xw‖² + λ·(α‖w‖₁ + (1−α)/2·‖w‖²)`.
pub fn elastic_net_objective(x: &[Vec<f64>], y: &[f64], model: &LinearModel, params: &ElasticNetParams) -> f64 {
    let n = x.len() as f64;
    let rss: f64 = x.iter().zip(y).map(|(r, t)| (t - model.predict(r)).powi(2)).sum();
    let l1: f64 = model.weights.iter().map(|w| w.abs()).sum();
    let l2: f64 = model.weights.iter().map(|w| w * w).sum();
    rss / (2.0 * n) + params.lambda * (params.l1_ratio * l1 + 0.5 * (1.0 - params.l1_ratio) * l2)
}

#[inline]
fn soft_threshold(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

/// Cyclic coordinate descent on centred data with an unpenalised intercept.
/// Converged when the largest coefficient change in a sweep is below `tol`.
pub fn fit_elastic_net(x: &[Vec<f64>], y: &[f64], params: &ElasticNetParams) -> Result<LinearModel, FitError> {
    params.validate()?;
    let p = check_shape(x, y)?;
    let n = x.len();
    let nf = n as f64;
    let xm = column_means(x, p);
    let ym = y.iter().sum::<f64>() / nf;

    // column-major centred copy
    let cols: Vec<Vec<f64>> = (0..p).map(|j| x.iter().map(|r| r[j] - xm[j]).collect()).collect();
    let sq: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>() / nf).collect();
    let mut resid: Vec<f64> = y.iter().map(|t| t - ym).collect();
    let mut w = vec![0.0; p];
    let l1 = params.lambda * params.l1_ratio;
    let l2 = params.lambda * (1.0 - params.l1_ratio);

    let mut converged = false;
    for _ in 0..params.max_iter {
        let mut max_delta: f64 = 0.0;
        for j in 0..p {
            if sq[j] == 0.0 {
                continue;
            }
            let col = &cols[j];
            let rho = col.iter().zip(&resid).map(|(a, r)| a * r).sum::<f64>() / nf + sq[j] * w[j];
            let new = soft_threshold(rho, l1) / (sq[j] + l2);
            let delta = new - w[j];
            if delta != 0.0 {
                resid.iter_mut().zip(col).for_each(|(r, a)| *r -= delta * a);
                w[j] = new;
            }
            max_delta = max_delta.max(delta.abs());
        }
        if max_delta < params.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(FitError::NotConverged { max_iter: params.max_iter });
    }
    let intercept = ym - w.iter().zip(&xm).map(|(a, b)| a * b).sum::<f64>();
    Ok(LinearModel { weights: w, intercept })
}
