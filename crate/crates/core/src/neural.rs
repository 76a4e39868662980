//! Fully connected feed-forward regressor trained by backpropagation.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_fit_inputs, check_width};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Logistic,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Logistic => 1.0 / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Logistic => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpSpec {
    pub hidden: Vec<usize>,
    /// One activation per hidden layer; the output unit is linear.
    pub activations: Vec<Activation>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2_decay: f64,
    pub optimizer: Optimizer,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for MlpSpec {
    fn default() -> Self {
        MlpSpec {
            hidden: vec![64, 32],
            activations: vec![Activation::Relu, Activation::Relu],
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 256,
            l2_decay: 1e-5,
            optimizer: Optimizer::Adam,
            patience: 20,
            seed: 0,
        }
    }
}

impl MlpSpec {
    pub fn with_hidden(mut self, hidden: Vec<usize>, activation: Activation) -> Self {
        self.activations = vec![activation; hidden.len()];
        self.hidden = hidden;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(Error::InvalidInput("network needs at least one hidden layer".into()));
        }
        if self.hidden.len() != self.activations.len() {
            return Err(Error::InvalidInput(format!(
                "{} hidden layers but {} activations",
                self.hidden.len(),
                self.activations.len()
            )));
        }
        if self.hidden.contains(&0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidInput("widths, epochs and batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || self.l2_decay < 0.0 {
            return Err(Error::InvalidInput("learning rate must be positive and l2 decay non-negative".into()));
        }
        Ok(())
    }
}

/// One dense layer; `weights` is row-major `n_out x n_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub spec: MlpSpec,
    pub layers: Vec<Layer>,
    pub training_loss: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub validation_loss: Vec<f64>,
}

/// Layer shapes `(n_in, n_out)` from input width to the single output.
pub fn layer_shapes(n_inputs: usize, spec: &MlpSpec) -> Vec<(usize, usize)> {
    let mut shapes = Vec::new();
    let mut prev = n_inputs;
    for &w in &spec.hidden {
        shapes.push((prev, w));
        prev = w;
    }
    shapes.push((prev, 1));
    shapes
}

fn n_params(shapes: &[(usize, usize)]) -> usize {
    shapes.iter().map(|(i, o)| i * o + o).sum()
}

fn layer_activation(spec: &MlpSpec, l: usize) -> Activation {
    spec.activations.get(l).copied().unwrap_or(Activation::Identity)
}

struct Net<'a> {
    spec: &'a MlpSpec,
    shapes: Vec<(usize, usize)>,
}

impl<'a> Net<'a> {
    fn unpack(&self, params: &[f64]) -> Vec<(DMatrix<f64>, DVector<f64>)> {
        let mut off = 0;
        self.shapes
            .iter()
            .map(|&(i, o)| {
                let w = DMatrix::from_row_slice(o, i, &params[off..off + i * o]);
                off += i * o;
                let b = DVector::from_column_slice(&params[off..off + o]);
                off += o;
                (w, b)
            })
            .collect()
    }

    /// Pre-activations and activations per layer; `acts[0]` is the input.
    fn forward(&self, layers: &[(DMatrix<f64>, DVector<f64>)], x: &DMatrix<f64>) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let mut zs = Vec::with_capacity(layers.len());
        let mut acts = vec![x.clone()];
        for (l, (w, b)) in layers.iter().enumerate() {
            let mut z = acts[l].clone() * w.transpose();
            for mut row in z.row_iter_mut() {
                row += b.transpose();
            }
            let act = layer_activation(self.spec, l);
            let a = z.map(|v| act.apply(v));
            zs.push(z);
            acts.push(a);
        }
        (zs, acts)
    }

    fn penalty(&self, params: &[f64]) -> f64 {
        let mut off = 0;
        let mut s = 0.0;
        for &(i, o) in &self.shapes {
            s += params[off..off + i * o].iter().map(|w| w * w).sum::<f64>();
            off += i * o + o;
        }
        self.spec.l2_decay * s
    }

    fn loss_and_gradient(&self, params: &[f64], x: &DMatrix<f64>, y: &[f64]) -> (f64, Vec<f64>) {
        let layers = self.unpack(params);
        let (zs, acts) = self.forward(&layers, x);
        let n = x.nrows() as f64;
        let out = acts.last().expect("output layer");
        let resid: Vec<f64> = (0..x.nrows()).map(|r| out[(r, 0)] - y[r]).collect();
        let loss = resid.iter().map(|e| e * e).sum::<f64>() / n + self.penalty(params);

        let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(layers.len());
        let mut delta = DMatrix::from_fn(x.nrows(), 1, |r, _| 2.0 * resid[r] / n);
        for l in (0..layers.len()).rev() {
            let (w, _) = &layers[l];
            let mut gw = delta.transpose() * &acts[l];
            gw += w * (2.0 * self.spec.l2_decay);
            let gb = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
            if l > 0 {
                let act = layer_activation(self.spec, l - 1);
                let mut next = &delta * w;
                for (v, (z, a)) in next.iter_mut().zip(zs[l - 1].iter().zip(acts[l].iter())) {
                    *v *= act.derivative(*z, *a);
                }
                delta = next;
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        let mut flat = Vec::with_capacity(params.len());
        for (gw, gb) in grads {
            for r in 0..gw.nrows() {
                flat.extend(gw.row(r).iter());
            }
            flat.extend(gb.iter());
        }
        (loss, flat)
    }

    fn predict(&self, params: &[f64], x: &DMatrix<f64>) -> Vec<f64> {
        let layers = self.unpack(params);
        let (_, acts) = self.forward(&layers, x);
        acts.last().expect("output layer").column(0).iter().copied().collect()
    }
}

fn flatten(layers: &[Layer]) -> Vec<f64> {
    layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
}

fn layers_from_flat(shapes: &[(usize, usize)], params: &[f64]) -> Vec<Layer> {
    let mut off = 0;
    shapes
        .iter()
        .map(|&(i, o)| {
            let weights = params[off..off + i * o].to_vec();
            off += i * o;
            let bias = params[off..off + o].to_vec();
            off += o;
            Layer {
                n_in: i,
                n_out: o,
                weights,
                bias,
            }
        })
        .collect()
}

impl MlpModel {
    /// Builds a model from explicit layers, checking that shapes chain.
    pub fn from_layers(spec: MlpSpec, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        let n_in = layers.first().map(|l| l.n_in).unwrap_or(0);
        let shapes = layer_shapes(n_in, &spec);
        let ok = shapes.len() == layers.len()
            && layers.iter().zip(&shapes).all(|(l, &(i, o))| {
                l.n_in == i && l.n_out == o && l.weights.len() == i * o && l.bias.len() == o
            });
        if !ok {
            return Err(Error::InvalidInput("layer shapes do not chain to one output".into()));
        }
        Ok(MlpModel {
            spec,
            layers,
            training_loss: Vec::new(),
            validation_loss: Vec::new(),
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn params(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        mlp_predict(self, x)
    }

    /// Penalized training objective and its gradient with respect to the
    /// flattened parameters (layer by layer: weights row-major, then bias).
    pub fn loss_and_gradient(&self, params: &[f64], x: &DMatrix<f64>, y: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_width(self.n_inputs(), x)?;
        if params.len() != self.params().len() || y.len() != x.nrows() {
            return Err(Error::InvalidInput("parameter or target length mismatch".into()));
        }
        let net = Net {
            spec: &self.spec,
            shapes: layer_shapes(self.n_inputs(), &self.spec),
        };
        Ok(net.loss_and_gradient(params, x, y))
    }
}

pub fn mlp_predict(m: &MlpModel, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_width(m.n_inputs(), x)?;
    let net = Net {
        spec: &m.spec,
        shapes: layer_shapes(m.n_inputs(), &m.spec),
    };
    Ok(net.predict(&m.params(), x))
}

/// Seeded uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn init_params(shapes: &[(usize, usize)], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_params(shapes));
    for &(i, o) in shapes {
        let bound = 1.0 / (i.max(1) as f64).sqrt();
        for _ in 0..(i * o + o) {
            out.push(rng.gen_range(-bound..=bound));
        }
    }
    out
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for k in 0..params.len() {
            self.m[k] = Self::B1 * self.m[k] + (1.0 - Self::B1) * grad[k];
            self.v[k] = Self::B2 * self.v[k] + (1.0 - Self::B2) * grad[k] * grad[k];
            params[k] -= lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + Self::EPS);
        }
    }
}

fn gather_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |r, c| x[(rows[r], c)])
}

fn mse(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

pub fn mlp_fit(x: &DMatrix<f64>, y: &[f64], spec: &MlpSpec) -> Result<MlpModel> {
    mlp_fit_with_validation(x, y, None, spec)
}

/// Mini-batch training. With a validation set, training stops after
/// `patience` epochs without improvement and the best parameters are kept.
pub fn mlp_fit_with_validation(
    x: &DMatrix<f64>,
    y: &[f64],
    validation: Option<(&DMatrix<f64>, &[f64])>,
    spec: &MlpSpec,
) -> Result<MlpModel> {
    spec.validate()?;
    check_fit_inputs(x, &DVector::from_column_slice(y))?;
    if let Some((xv, yv)) = validation {
        check_width(x.ncols(), xv)?;
        check_fit_inputs(xv, &DVector::from_column_slice(yv))?;
    }
    let shapes = layer_shapes(x.ncols(), spec);
    let net = Net {
        spec,
        shapes: shapes.clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut params = init_params(&shapes, &mut rng);
    let mut adam = Adam::new(params.len());
    let n = y.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut training_loss = Vec::with_capacity(spec.epochs);
    let mut validation_loss = Vec::new();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut since_best = 0;
    let mut last_finite = f64::NAN;

    for epoch in 0..spec.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(spec.batch_size) {
            let xb = gather_rows(x, chunk);
            let yb: Vec<f64> = chunk.iter().map(|&r| y[r]).collect();
            let (_, grad) = net.loss_and_gradient(&params, &xb, &yb);
            match spec.optimizer {
                Optimizer::Adam => adam.step(&mut params, &grad, spec.learning_rate),
                Optimizer::Sgd => params.iter_mut().zip(&grad).for_each(|(p, g)| *p -= spec.learning_rate * g),
            }
        }
        let loss = mse(&net.predict(&params, x), y) + net.penalty(&params);
        if !loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                last_finite_loss: last_finite,
            });
        }
        last_finite = loss;
        training_loss.push(loss);
        if let Some((xv, yv)) = validation {
            let vl = mse(&net.predict(&params, xv), yv);
            validation_loss.push(vl);
            if best.as_ref().is_none_or(|(b, _)| vl < *b) {
                best = Some((vl, params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= spec.patience {
                    log::debug!("early stop at epoch {epoch}");
                    break;
                }
            }
        }
    }
    if let Some((_, p)) = best {
        params = p;
    }
    Ok(MlpModel {
        spec: spec.clone(),
        layers: layers_from_flat(&shapes, &params),
        training_loss,
        validation_loss,
    })
}
