//! Fully connected ReLU network with a sigmoid output, trained with Adam on
//! mean binary cross-entropy. Early stopping watches the loss on a held-out
//! slice of the training rows and restores the best weights.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{sigmoid, MlpHyper, TrainingSummary};
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense<T> {
    /// `(inputs, outputs)`.
    pub w: Array2<T>,
    pub b: Array1<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams<T> {
    pub layers: Vec<Dense<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGradients<T> {
    pub dw: Vec<Array2<T>>,
    pub db: Vec<Array1<T>>,
}

fn softplus<T: Scalar>(z: T) -> T {
    if z > T::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl<T: Scalar> MlpParams<T> {
    /// He-normal hidden layers, `N(0, 1/fan_in)` output layer, zero biases.
    pub fn init(sizes: &[usize], seed: u64) -> Self {
        let mut r = rng::stream(seed, &["mlp", "init"]);
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, io)| {
                let (fan_in, fan_out) = (io[0], io[1]);
                let gain = if i + 2 == sizes.len() { 1.0 } else { 2.0 };
                let normal = Normal::new(0.0, (gain / fan_in.max(1) as f64).sqrt()).expect("valid sd");
                Dense {
                    w: Array2::from_shape_simple_fn((fan_in, fan_out), || T::lit(normal.sample(&mut r))),
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        MlpParams { layers }
    }

    /// Activations of every layer; the last is the pre-sigmoid logit.
    fn forward(&self, x: ArrayView2<T>) -> Vec<Array2<T>> {
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = cur.dot(&layer.w) + &layer.b;
            if i + 1 < self.layers.len() {
                z.mapv_inplace(|v| v.max(T::zero()));
            }
            acts.push(z.clone());
            cur = z;
        }
        acts
    }

    pub fn logits(&self, x: ArrayView2<T>) -> Array1<T> {
        self.forward(x).pop().expect("at least one layer").column(0).to_owned()
    }

    pub fn proba(&self, x: ArrayView2<T>) -> Vec<T> {
        self.logits(x).iter().map(|&z| sigmoid(z)).collect()
    }

    /// Mean cross-entropy over the rows of `x`.
    pub fn loss(&self, x: ArrayView2<T>, y: &[T]) -> T {
        let z = self.logits(x);
        let n = T::from_usize_lossy(y.len().max(1));
        z.iter().zip(y).map(|(&z, &y)| softplus(z) - y * z).sum::<T>() / n
    }

    /// Mean cross-entropy and its gradient by backpropagation.
    pub fn loss_and_grad(&self, x: ArrayView2<T>, y: &[T]) -> (T, MlpGradients<T>) {
        let acts = self.forward(x);
        let n = T::from_usize_lossy(y.len().max(1));
        let z = acts.last().expect("layer").column(0);
        let loss = z.iter().zip(y).map(|(&z, &y)| softplus(z) - y * z).sum::<T>() / n;
        let mut delta = Array2::from_shape_fn((y.len(), 1), |(i, _)| (sigmoid(z[i]) - y[i]) / n);
        let depth = self.layers.len();
        let mut dw = vec![Array2::zeros((0, 0)); depth];
        let mut db = vec![Array1::zeros(0); depth];
        for l in (0..depth).rev() {
            let input = if l == 0 { x } else { acts[l - 1].view() };
            dw[l] = input.t().dot(&delta);
            db[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.layers[l].w.t());
                back.zip_mut_with(&acts[l - 1], |g, &a| {
                    if a <= T::zero() {
                        *g = T::zero();
                    }
                });
                delta = back;
            }
        }
        (loss, MlpGradients { dw, db })
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Parameters in layer order, weights (row-major) before biases.
    pub fn flatten(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied().collect::<Vec<_>>())
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[T]) {
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.w.iter_mut().chain(l.b.iter_mut()).for_each(|v| *v = it.next().expect("length"));
        }
    }
}

impl<T: Scalar> MlpGradients<T> {
    pub fn flatten(&self) -> Vec<T> {
        self.dw
            .iter()
            .zip(&self.db)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied().collect::<Vec<_>>())
            .collect()
    }
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    fn step(&mut self, params: &mut MlpParams<T>, grads: &MlpGradients<T>, h: &MlpHyper) {
        self.t += 1;
        let (b1, b2) = (T::lit(h.beta1), T::lit(h.beta2));
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        let (lr, eps) = (T::lit(h.learning_rate), T::lit(h.epsilon));
        let mut k = 0;
        for (layer, (gw, gb)) in params.layers.iter_mut().zip(grads.dw.iter().zip(&grads.db)) {
            for (p, &g) in layer.w.iter_mut().chain(layer.b.iter_mut()).zip(gw.iter().chain(gb.iter())) {
                self.m[k] = b1 * self.m[k] + (T::one() - b1) * g;
                self.v[k] = b2 * self.v[k] + (T::one() - b2) * g * g;
                let mh = self.m[k] / c1;
                let vh = self.v[k] / c2;
                *p = *p - lr * mh / (vh.sqrt() + eps);
                k += 1;
            }
        }
    }
}

fn rows<T: Scalar>(x: ArrayView2<T>, y: &[T], idx: &[usize]) -> (Array2<T>, Vec<T>) {
    (x.select(Axis(0), idx), idx.iter().map(|&i| y[i]).collect())
}

pub(super) fn fit<T: Scalar>(x: ArrayView2<T>, y: &[bool], h: &MlpHyper, seed: u64, summary: &mut TrainingSummary) -> Result<MlpParams<T>> {
    if h.batch_size == 0 || !(h.learning_rate > 0.0) || !(0.0..1.0).contains(&h.validation_fraction) {
        return Err(Error::InvalidConfig("invalid MLP hyper-parameters".into()));
    }
    let n = y.len();
    let yt: Vec<T> = y.iter().map(|&l| if l { T::one() } else { T::zero() }).collect();
    let mut sizes = vec![x.ncols()];
    sizes.extend(&h.hidden);
    sizes.push(1);
    let mut params = MlpParams::init(&sizes, seed);

    let mut order: Vec<usize> = (0..n).collect();
    let mut split_rng = rng::stream(seed, &["mlp", "split"]);
    order.shuffle(&mut split_rng);
    let n_val = (h.validation_fraction * n as f64).ceil() as usize;
    let early = h.early_stopping && n_val >= 1 && n - n_val >= 2;
    let (train_idx, val_idx) = if early {
        let (v, t) = order.split_at(n_val);
        let mut t = t.to_vec();
        t.sort_unstable();
        let mut v = v.to_vec();
        v.sort_unstable();
        (t, v)
    } else {
        ((0..n).collect(), Vec::new())
    };
    let (xv, yv) = rows(x, &yt, &val_idx);
    let (xt, ytt) = rows(x, &yt, &train_idx);

    let mut adam = Adam {
        m: vec![T::zero(); params.n_params()],
        v: vec![T::zero(); params.n_params()],
        t: 0,
    };
    let mut epoch_rng = rng::stream(seed, &["mlp", "epochs"]);
    let mut best = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut since_best = 0;
    let mut perm: Vec<usize> = (0..train_idx.len()).collect();
    let mut epochs = 0;
    for epoch in 0..h.epochs {
        epochs = epoch + 1;
        perm.shuffle(&mut epoch_rng);
        let mut total = 0.0;
        for batch in perm.chunks(h.batch_size) {
            let (xb, yb) = rows(xt.view(), &ytt, batch);
            let (loss, grads) = params.loss_and_grad(xb.view(), &yb);
            total += loss.as_f64() * batch.len() as f64;
            adam.step(&mut params, &grads, h);
        }
        summary.loss_curve.push(total / perm.len().max(1) as f64);
        let monitored = if early {
            params.loss(xv.view(), &yv).as_f64()
        } else {
            params.loss(xt.view(), &ytt).as_f64()
        };
        if !monitored.is_finite() {
            return Err(Error::DegenerateFit("MLP loss diverged".into()));
        }
        if monitored < best_loss {
            best_loss = monitored;
            best = params.clone();
            since_best = 0;
            summary.checkpoints.push((epoch, monitored));
        } else {
            since_best += 1;
            if h.early_stopping && since_best >= h.patience {
                break;
            }
        }
    }
    summary.iterations = epochs;
    summary.converged = since_best > 0 || epochs < h.epochs;
    Ok(best)
}
