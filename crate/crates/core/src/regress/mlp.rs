//! Small fully connected network: tanh hidden layers, linear output, trained
//! by full-batch gradient descent on mean squared error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FitError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self { hidden: vec![8], epochs: 1000, learning_rate: 0.05 }
    }
}

impl MlpParams {
    pub fn validate(&self) -> Result<(), FitError> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(FitError::InvalidParams("need at least one hidden layer, widths >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(FitError::InvalidParams(format!("learning_rate {} must be > 0", self.learning_rate)));
        }
        Ok(())
    }
}

/// Layer `l` maps `sizes[l]` inputs to `sizes[l + 1]` outputs. Parameters are
/// stored flat: for each layer the row-major weight matrix, then the biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

impl Network {
    /// Glorot-uniform weights, zero biases.
    pub fn init(sizes: Vec<usize>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self { sizes, params }
    }

    fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = vec![0];
        for w in self.sizes.windows(2) {
            off.push(off.last().unwrap() + w[0] * w[1] + w[1]);
        }
        off
    }

    /// Activations of every layer, input first.
    fn forward_all(&self, x: &[f64], off: &[usize]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off[l]..off[l] + n_in * n_out];
            let b = &self.params[off[l] + n_in * n_out..off[l + 1]];
            let a = acts.last().unwrap();
            let last = l + 1 == self.n_layers();
            let z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let s = b[o] + w[o * n_in..(o + 1) * n_in].iter().zip(a).map(|(wi, ai)| wi * ai).sum::<f64>();
                    if last {
                        s
                    } else {
                        s.tanh()
                    }
                })
                .collect();
            acts.push(z);
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        self.forward_all(x, &self.offsets()).last().unwrap()[0]
    }

    /// Mean squared error `1/n Σ (f(x) − y)²` and its gradient with respect
    /// to `params`.
    pub fn loss_and_grad(&self, x: &[Vec<f64>], y: &[f64]) -> (f64, Vec<f64>) {
        let off = self.offsets();
        let n = x.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for (xi, &yi) in x.iter().zip(y) {
            let acts = self.forward_all(xi, &off);
            let err = acts.last().unwrap()[0] - yi;
            loss += err * err;
            // dL/dz for the current layer
            let mut delta = vec![2.0 * err / n];
            for l in (0..self.n_layers()).rev() {
                let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
                let a_in = &acts[l];
                let wo = off[l];
                let bo = off[l] + n_in * n_out;
                for o in 0..n_out {
                    grad[bo + o] += delta[o];
                    for i in 0..n_in {
                        grad[wo + o * n_in + i] += delta[o] * a_in[i];
                    }
                }
                if l > 0 {
                    delta = (0..n_in)
                        .map(|i| {
                            let back: f64 = (0..n_out).map(|o| self.params[wo + o * n_in + i] * delta[o]).sum();
                            back * (1.0 - a_in[i] * a_in[i])
                        })
                        .collect();
                }
            }
        }
        (loss / n, grad)
    }
}

/// Network plus the target scaling applied during training:
/// prediction = `y_mean + y_scale · network(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub network: Network,
    pub y_mean: f64,
    pub y_scale: f64,
}

impl Mlp {
    pub fn predict(&self, x: &[f64]) -> f64 {
        if self.y_scale == 0.0 {
            return self.y_mean;
        }
        self.y_mean + self.y_scale * self.network.forward(x)
    }
}

/// Targets are centred and scaled to unit (population) variance before
/// training; a constant target yields an exact constant model.
pub fn fit_mlp(x: &[Vec<f64>], y: &[f64], params: &MlpParams, seed: u64) -> Result<Mlp, FitError> {
    params.validate()?;
    if x.is_empty() {
        return Err(FitError::EmptyTrainingSet);
    }
    if x.len() != y.len() {
        return Err(FitError::InvalidInput(format!("{} rows but {} targets", x.len(), y.len())));
    }
    let n = y.len() as f64;
    let y_mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n;
    let y_scale = if var > 1e-24 { var.sqrt() } else { 0.0 };

    let mut sizes = vec![x[0].len()];
    sizes.extend(&params.hidden);
    sizes.push(1);
    let mut network = Network::init(sizes, seed);
    if y_scale > 0.0 {
        let t: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_scale).collect();
        for _ in 0..params.epochs {
            let (loss, grad) = network.loss_and_grad(x, &t);
            if !loss.is_finite() {
                return Err(FitError::DivergedLoss);
            }
            for (p, g) in network.params.iter_mut().zip(&grad) {
                *p -= params.learning_rate * g;
            }
        }
        if network.params.iter().any(|p| !p.is_finite()) {
            return Err(FitError::DivergedLoss);
        }
    }
    Ok(Mlp { network, y_mean, y_scale })
}
