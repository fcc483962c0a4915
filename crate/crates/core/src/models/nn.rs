//! Feedforward ReLU network trained with Adam on standardized data.

use serde::{Deserialize, Serialize};

use super::{ModelError, ModelKind, Regressor};
use crate::dataset::{mean_std, Dataset, Feature, Standardizer};
use crate::rng::{purpose, PortableRng};
use crate::Scalar;

pub const MIN_NN_ROWS: usize = 50;

/// Training defaults. The architecture (10 and 5 ReLU units) is fixed by the
/// method; the optimizer schedule is this crate's choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnHyperParams {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Full batch up to this many rows, seeded mini-batches beyond.
    pub batch_size: usize,
    /// Stop when the best training MSE improved by less than
    /// `min_improvement` over the last `patience` epochs.
    pub patience: usize,
    pub min_improvement: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for NnHyperParams {
    fn default() -> Self {
        Self {
            hidden: vec![10, 5],
            learning_rate: 1e-3,
            epochs: 2000,
            batch_size: 4096,
            patience: 50,
            min_improvement: 1e-8,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

/// Fully connected layer; `weights` is row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer<F> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<F>,
    pub biases: Vec<F>,
}

impl<F: Scalar> DenseLayer<F> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![F::zero(); inputs * outputs],
            biases: vec![F::zero(); outputs],
        }
    }

    fn affine(&self, x: &[F], out: &mut [F]) {
        for (o, out_v) in out.iter_mut().enumerate() {
            let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            *out_v = w
                .iter()
                .zip(x)
                .fold(self.biases[o], |acc, (w, x)| acc + *w * *x);
        }
    }
}

/// ReLU on every hidden layer, identity on the single output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network<F> {
    pub layers: Vec<DenseLayer<F>>,
}

impl<F: Scalar> Network<F> {
    /// `sizes` = `[inputs, hidden..., 1]`.
    pub fn zeros(sizes: &[usize]) -> Self {
        Self {
            layers: sizes
                .windows(2)
                .map(|w| DenseLayer::zeros(w[0], w[1]))
                .collect(),
        }
    }

    fn he_uniform(sizes: &[usize], rng: &mut PortableRng) -> Self {
        let mut net = Self::zeros(sizes);
        for layer in &mut net.layers {
            let limit = (6.0 / layer.inputs as f64).sqrt();
            for w in &mut layer.weights {
                *w = F::lit(limit * (2.0 * rng.next_f64() - 1.0));
            }
        }
        net
    }

    pub fn n_inputs(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.n_inputs()];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Layer by layer, weights then biases.
    pub fn parameters(&self) -> Vec<F> {
        let mut p = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.biases);
        }
        p
    }

    pub fn set_parameters(&mut self, p: &[F]) {
        assert_eq!(p.len(), self.n_params(), "parameter count");
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&p[k..k + nw]);
            k += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&p[k..k + nb]);
            k += nb;
        }
    }

    fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    fn scratch(&self) -> Vec<Vec<F>> {
        self.layers
            .iter()
            .map(|l| vec![F::zero(); l.outputs])
            .collect()
    }

    /// Forward pass filling `pre` with every layer's pre-activation.
    fn forward_into(&self, x: &[F], pre: &mut [Vec<F>], post: &mut [Vec<F>]) -> F {
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (input, rest) = if l == 0 {
                (x, &mut post[..])
            } else {
                let (a, b) = post.split_at_mut(l);
                (&a[l - 1][..], b)
            };
            layer.affine(input, &mut pre[l]);
            let out = &mut rest[0];
            for (o, z) in out.iter_mut().zip(&pre[l]) {
                *o = if l == last || *z > F::zero() {
                    *z
                } else {
                    F::zero()
                };
            }
        }
        post[last][0]
    }

    pub fn forward(&self, x: &[F]) -> Result<F, ModelError> {
        if x.len() != self.n_inputs() {
            return Err(ModelError::Shape {
                expected: self.n_inputs(),
                got: x.len(),
            });
        }
        let mut pre = self.scratch();
        let mut post = self.scratch();
        Ok(self.forward_into(x, &mut pre, &mut post))
    }

    /// Mean squared error over row-major `xs` against `ys`.
    pub fn mse(&self, xs: &[F], ys: &[F]) -> F {
        let p = self.n_inputs();
        let mut pre = self.scratch();
        let mut post = self.scratch();
        let sse = xs.chunks(p).zip(ys).fold(F::zero(), |acc, (x, y)| {
            let e = self.forward_into(x, &mut pre, &mut post) - *y;
            acc + e * e
        });
        sse / F::from_usize_lossy(ys.len())
    }

    /// Mean squared error and its gradient with respect to every parameter,
    /// returned as a network of the same shape.
    pub fn loss_and_gradient(&self, xs: &[F], ys: &[F]) -> Result<(F, Network<F>), ModelError> {
        let p = self.n_inputs();
        if ys.is_empty() || xs.len() != ys.len() * p {
            return Err(ModelError::Shape {
                expected: ys.len() * p,
                got: xs.len(),
            });
        }
        let n = F::from_usize_lossy(ys.len());
        let two_over_n = F::lit(2.0) / n;
        let mut grad = Network::zeros(&self.sizes());
        let mut pre = self.scratch();
        let mut post = self.scratch();
        let mut delta = self.scratch();
        let mut sse = F::zero();
        let last = self.layers.len() - 1;
        for (x, y) in xs.chunks(p).zip(ys) {
            let e = self.forward_into(x, &mut pre, &mut post) - *y;
            sse = sse + e * e;
            delta[last][0] = two_over_n * e;
            for l in (0..=last).rev() {
                let layer = &self.layers[l];
                let input: &[F] = if l == 0 { x } else { &post[l - 1] };
                let g = &mut grad.layers[l];
                for (o, &d) in delta[l].iter().enumerate() {
                    if d == F::zero() {
                        continue;
                    }
                    g.biases[o] = g.biases[o] + d;
                    let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (gw, a) in row.iter_mut().zip(input) {
                        *gw = *gw + d * *a;
                    }
                }
                if l > 0 {
                    let (below, here) = delta.split_at_mut(l);
                    let prev = &mut below[l - 1];
                    for (i, dp) in prev.iter_mut().enumerate() {
                        if pre[l - 1][i] > F::zero() {
                            *dp = (0..layer.outputs).fold(F::zero(), |acc, o| {
                                acc + layer.weights[o * layer.inputs + i] * here[0][o]
                            });
                        } else {
                            *dp = F::zero();
                        }
                    }
                }
            }
        }
        Ok((sse / n, grad))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub epochs_run: usize,
    pub initial_mse: f64,
    pub final_mse: f64,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnModel<F> {
    pub features: Vec<Feature>,
    pub network: Network<F>,
    pub input_scaler: Standardizer<F>,
    pub target_mean: F,
    pub target_std: F,
    pub hyperparams: NnHyperParams,
    pub trace: TrainingTrace,
}

impl<F: Scalar> Regressor<F> for NnModel<F> {
    fn features(&self) -> &[Feature] {
        &self.features
    }

    fn predict_row(&self, x: &[F]) -> F {
        let z = self.input_scaler.transform_row(x);
        let mut pre = self.network.scratch();
        let mut post = self.network.scratch();
        self.network.forward_into(&z, &mut pre, &mut post) * self.target_std + self.target_mean
    }
}

/// Prediction in raw units for one input row.
pub fn nn_forward<F: Scalar>(m: &NnModel<F>, inputs: &[F]) -> Result<F, ModelError> {
    if inputs.len() != m.features.len() {
        return Err(ModelError::Shape {
            expected: m.features.len(),
            got: inputs.len(),
        });
    }
    Ok(m.predict_row(inputs))
}

/// MSE gradient of `network` on a standardized batch.
pub fn nn_gradient<F: Scalar>(
    network: &Network<F>,
    xs: &[F],
    ys: &[F],
) -> Result<(F, Network<F>), ModelError> {
    network.loss_and_gradient(xs, ys)
}

struct Adam<F> {
    m: Vec<F>,
    v: Vec<F>,
    t: i32,
}

impl<F: Scalar> Adam<F> {
    fn new(n: usize) -> Self {
        Self {
            m: vec![F::zero(); n],
            v: vec![F::zero(); n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [F], grad: &[F], hp: &NnHyperParams) {
        self.t += 1;
        let (b1, b2) = (F::lit(hp.beta1), F::lit(hp.beta2));
        let lr = F::lit(hp.learning_rate);
        let eps = F::lit(hp.adam_epsilon);
        let c1 = F::one() - b1.powi(self.t);
        let c2 = F::one() - b2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (F::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (F::one() - b2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] = params[i] - lr * mh / (vh.sqrt() + eps);
        }
    }
}

/// Trains the network deterministically from `seed`. The returned parameters
/// are the best seen on the training set, so the final MSE never exceeds the
/// initial one.
pub fn fit_nn<F: Scalar>(
    train: &Dataset<F>,
    seed: u64,
    hp: &NnHyperParams,
) -> Result<NnModel<F>, ModelError> {
    let n = train.len();
    if n < MIN_NN_ROWS {
        return Err(ModelError::TooFewRows {
            model: ModelKind::Nn,
            needed: MIN_NN_ROWS,
            got: n,
        });
    }
    let p = train.n_features();
    let input_scaler = Standardizer::fit(train)?;
    let (target_mean, target_std) =
        mean_std(train.targets()).unwrap_or((train.targets()[0], F::one()));
    let xs: Vec<F> = train
        .rows()
        .flat_map(|r| input_scaler.transform_row(r))
        .collect();
    let ys: Vec<F> = train
        .targets()
        .iter()
        .map(|y| (*y - target_mean) / target_std)
        .collect();

    let mut sizes = vec![p];
    sizes.extend(&hp.hidden);
    sizes.push(1);
    let mut net = Network::he_uniform(
        &sizes,
        &mut PortableRng::derived(seed, purpose::NN_INIT, &[]),
    );
    let mut batch_rng = PortableRng::derived(seed, purpose::NN_BATCH, &[]);
    let mut adam = Adam::new(net.n_params());

    let initial = net.mse(&xs, &ys);
    if !initial.is_finite() {
        return Err(ModelError::Divergence { epoch: 0 });
    }
    let mut best = (initial, net.clone());
    let mut history = vec![initial];
    let mut stopped_early = false;
    let mut epochs_run = 0;
    let batch = hp.batch_size.max(1);
    let mut bx = Vec::new();
    let mut by = Vec::new();

    for epoch in 1..=hp.epochs {
        epochs_run = epoch;
        let order = if n > batch {
            Some(batch_rng.permutation(n))
        } else {
            None
        };
        let mut start = 0;
        while start < n {
            let end = (start + batch).min(n);
            let (gx, gy): (&[F], &[F]) = match &order {
                None => (&xs, &ys),
                Some(order) => {
                    bx.clear();
                    by.clear();
                    for &i in &order[start..end] {
                        bx.extend_from_slice(&xs[i * p..(i + 1) * p]);
                        by.push(ys[i]);
                    }
                    (&bx, &by)
                }
            };
            let (loss, grad) = net.loss_and_gradient(gx, gy)?;
            if !loss.is_finite() {
                return Err(ModelError::Divergence { epoch });
            }
            let mut params = net.parameters();
            adam.step(&mut params, &grad.parameters(), hp);
            net.set_parameters(&params);
            start = end;
        }
        let mse = net.mse(&xs, &ys);
        if !mse.is_finite() || !net.is_finite() {
            return Err(ModelError::Divergence { epoch });
        }
        if mse < best.0 {
            best = (mse, net.clone());
        }
        history.push(best.0);
        if epoch >= hp.patience
            && history[epoch - hp.patience] - best.0 < F::lit(hp.min_improvement)
        {
            stopped_early = true;
            break;
        }
    }

    Ok(NnModel {
        features: train.features().to_vec(),
        network: best.1,
        input_scaler,
        target_mean,
        target_std,
        hyperparams: hp.clone(),
        trace: TrainingTrace {
            epochs_run,
            initial_mse: initial.as_f64(),
            final_mse: best.0.as_f64(),
            stopped_early,
        },
    })
}
