use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::adam::adam_update;
use super::layers::{self, BnCache, Geom, BN_MOMENTUM, KERNEL};
use super::{NnError, Result, Tensor};

/// Output channels of the four convolutions.
pub const CONV_CHANNELS: [usize; 4] = [32, 128, 128, 32];
pub const HIDDEN_UNITS: usize = 64;
/// Rows of every input signal (I and Q).
pub const INPUT_CHANNELS: usize = 2;

const BN_NAMES: [&str; 6] = ["bn1", "bn2", "bn2_pool", "bn3", "bn3_pool", "bn4"];
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    /// `[out][in][3]`
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub scale: Tensor,
    pub shift: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BatchNorm {
    fn new(channels: usize) -> Self {
        BatchNorm {
            scale: Tensor::filled(vec![channels], 1.0),
            shift: Tensor::zeros(vec![channels]),
            running_mean: Tensor::zeros(vec![channels]),
            running_var: Tensor::filled(vec![channels], 1.0),
        }
    }

    fn eval(&self, x: &[f64], n: usize) -> Vec<f64> {
        layers::bn_forward_eval(
            x,
            n,
            self.scale.data(),
            self.shift.data(),
            self.running_mean.data(),
            self.running_var.data(),
        )
    }

    fn update_running(&mut self, stats: &[(f64, f64)]) {
        let mean = self.running_mean.data_mut();
        for (rm, (batch_mean, _)) in mean.iter_mut().zip(stats) {
            *rm = BN_MOMENTUM * *rm + (1.0 - BN_MOMENTUM) * batch_mean;
        }
        let var = self.running_var.data_mut();
        for (rv, (_, batch_var)) in var.iter_mut().zip(stats) {
            *rv = BN_MOMENTUM * *rv + (1.0 - BN_MOMENTUM) * batch_var;
        }
    }
}

/// Fully connected layer, `weight` is `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// `m x k` embedding matrix; rows are non-negative with unit Euclidean norm
/// when produced by the network.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    /// # Panics
    /// If `values.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(rows * cols, values.len(), "feature matrix size mismatch");
        FeatureMatrix { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..][..self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// Largest deviation of a row norm from 1.
    pub fn max_norm_error(&self) -> f64 {
        self.iter_rows()
            .map(|r| (r.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Stacks row blocks computed separately, in order.
    pub fn concat(parts: Vec<FeatureMatrix>) -> Option<FeatureMatrix> {
        let cols = parts.first()?.cols;
        let mut values = Vec::new();
        let mut rows = 0;
        for part in parts {
            if part.cols != cols {
                return None;
            }
            rows += part.rows;
            values.extend(part.values);
        }
        Some(FeatureMatrix { rows, cols, values })
    }
}

/// Per-parameter gradients, in [`ModelState::parameter_names`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(model: &ModelState) -> Self {
        Gradients {
            tensors: model.parameters().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter())
            .fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

/// Everything the backward pass needs from a train-mode forward pass.
pub struct Trace {
    batch: usize,
    signal_length: usize,
    num_classes: usize,
    conv_in: [Geom; 4],
    conv_cols: [Vec<f64>; 4],
    bn: [BnCache; 6],
    relu_out: [Vec<f64>; 4],
    pool_idx: [Vec<usize>; 2],
    flat_geom: Geom,
    flat: Vec<f64>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
    features: Vec<f64>,
    norms: Vec<f64>,
}

impl Trace {
    pub fn batch_size(&self) -> usize {
        self.batch
    }
}

/// Parameters, batch-norm running statistics and Adam state of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub(crate) signal_length: usize,
    pub(crate) num_classes: usize,
    pub conv: [Conv1d; 4],
    pub bn: [BatchNorm; 6],
    pub dense: [Dense; 2],
    pub(crate) first_moment: Vec<Tensor>,
    pub(crate) second_moment: Vec<Tensor>,
    pub step: u64,
}

/// Time steps left after the two pooling stages.
pub fn pooled_length(signal_length: usize) -> usize {
    signal_length / 2 / 2
}

fn he_tensor(shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| normal.sample(rng)).collect())
}

impl ModelState {
    /// Builds a freshly initialized network for `signal_length`-sample inputs
    /// and `num_classes` outputs.
    pub fn init(signal_length: usize, num_classes: usize, seed: u64) -> Result<Self> {
        if pooled_length(signal_length) == 0 || num_classes < 2 {
            return Err(NnError::InvalidDims {
                signal_length,
                num_classes,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_channels = INPUT_CHANNELS;
        let conv = CONV_CHANNELS.map(|out| {
            let fan_in = in_channels * KERNEL;
            let layer = Conv1d {
                weight: he_tensor(vec![out, in_channels, KERNEL], fan_in, &mut rng),
                bias: Tensor::zeros(vec![out]),
            };
            in_channels = out;
            layer
        });
        let bn = [
            CONV_CHANNELS[0],
            CONV_CHANNELS[1],
            CONV_CHANNELS[1],
            CONV_CHANNELS[2],
            CONV_CHANNELS[2],
            CONV_CHANNELS[3],
        ]
        .map(BatchNorm::new);
        let flat = CONV_CHANNELS[3] * pooled_length(signal_length);
        let dense = [
            Dense {
                weight: he_tensor(vec![HIDDEN_UNITS, flat], flat, &mut rng),
                bias: Tensor::zeros(vec![HIDDEN_UNITS]),
            },
            Dense {
                weight: he_tensor(vec![num_classes, HIDDEN_UNITS], HIDDEN_UNITS, &mut rng),
                bias: Tensor::zeros(vec![num_classes]),
            },
        ];
        let mut model = ModelState {
            signal_length,
            num_classes,
            conv,
            bn,
            dense,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step: 0,
        };
        model.reset_moments();
        Ok(model)
    }

    pub fn signal_length(&self) -> usize {
        self.signal_length
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Errors unless the model was built for exactly these dimensions.
    pub fn ensure_dims(&self, signal_length: usize, num_classes: usize) -> Result<()> {
        if self.signal_length != signal_length || self.num_classes != num_classes {
            return Err(NnError::ShapeTable(format!(
                "model is L={}, k={} but L={signal_length}, k={num_classes} was expected",
                self.signal_length, self.num_classes
            )));
        }
        Ok(())
    }

    /// Replaces the output layer with a fresh `num_classes`-unit layer.
    pub fn reinit_output(&mut self, num_classes: usize, seed: u64) -> Result<()> {
        if num_classes < 2 {
            return Err(NnError::InvalidDims {
                signal_length: self.signal_length,
                num_classes,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.dense[1] = Dense {
            weight: he_tensor(vec![num_classes, HIDDEN_UNITS], HIDDEN_UNITS, &mut rng),
            bias: Tensor::zeros(vec![num_classes]),
        };
        self.num_classes = num_classes;
        let n = self.first_moment.len();
        for i in [n - 2, n - 1] {
            let shape = self.parameters()[i].shape().to_vec();
            self.first_moment[i] = Tensor::zeros(shape.clone());
            self.second_moment[i] = Tensor::zeros(shape);
        }
        Ok(())
    }

    pub(crate) fn reset_moments(&mut self) {
        self.first_moment = self.parameters().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
        self.second_moment = self.first_moment.clone();
    }

    /// Names of the trainable tensors, in gradient order.
    pub fn parameter_names() -> Vec<String> {
        let mut names = Vec::new();
        let conv_bn: [(usize, &[usize]); 4] = [(0, &[0]), (1, &[1, 2]), (2, &[3, 4]), (3, &[5])];
        for (conv, bns) in conv_bn {
            names.push(format!("conv{}.weight", conv + 1));
            names.push(format!("conv{}.bias", conv + 1));
            for &b in bns {
                names.push(format!("{}.scale", BN_NAMES[b]));
                names.push(format!("{}.shift", BN_NAMES[b]));
            }
        }
        for d in 1..=2 {
            names.push(format!("dense{d}.weight"));
            names.push(format!("dense{d}.bias"));
        }
        names
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        let [c1, c2, c3, c4] = &self.conv;
        let [b1, b2, b2p, b3, b3p, b4] = &self.bn;
        let [d1, d2] = &self.dense;
        vec![
            &c1.weight, &c1.bias, &b1.scale, &b1.shift,
            &c2.weight, &c2.bias, &b2.scale, &b2.shift, &b2p.scale, &b2p.shift,
            &c3.weight, &c3.bias, &b3.scale, &b3.shift, &b3p.scale, &b3p.shift,
            &c4.weight, &c4.bias, &b4.scale, &b4.shift,
            &d1.weight, &d1.bias, &d2.weight, &d2.bias,
        ]
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let [c1, c2, c3, c4] = &mut self.conv;
        let [b1, b2, b2p, b3, b3p, b4] = &mut self.bn;
        let [d1, d2] = &mut self.dense;
        vec![
            &mut c1.weight, &mut c1.bias, &mut b1.scale, &mut b1.shift,
            &mut c2.weight, &mut c2.bias, &mut b2.scale, &mut b2.shift, &mut b2p.scale, &mut b2p.shift,
            &mut c3.weight, &mut c3.bias, &mut b3.scale, &mut b3.shift, &mut b3p.scale, &mut b3p.shift,
            &mut c4.weight, &mut c4.bias, &mut b4.scale, &mut b4.shift,
            &mut d1.weight, &mut d1.bias, &mut d2.weight, &mut d2.bias,
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize> {
        let shape = batch.shape();
        if shape.len() != 3 || shape[1] != INPUT_CHANNELS || shape[2] != self.signal_length || shape[0] == 0 {
            return Err(NnError::ShapeMismatch {
                expected: format!("[m >= 1, {INPUT_CHANNELS}, {}]", self.signal_length),
                found: format!("{shape:?}"),
            });
        }
        if !batch.is_finite() {
            return Err(NnError::NonFinite("input batch"));
        }
        Ok(shape[0])
    }

    /// Inference with running batch-norm statistics. Large batches are
    /// processed in chunks; the result is independent of the chunking.
    pub fn forward_eval(&self, batch: &Tensor) -> Result<FeatureMatrix> {
        let m = self.check_batch(batch)?;
        let per = INPUT_CHANNELS * self.signal_length;
        let parts = batch
            .data()
            .chunks(EVAL_CHUNK * per)
            .map(|chunk| {
                let rows = chunk.len() / per;
                let (features, _) = self.propagate(chunk, rows, None);
                FeatureMatrix::from_vec(rows, self.num_classes, features)
            })
            .collect();
        let out = FeatureMatrix::concat(parts).expect("at least one chunk");
        debug_assert_eq!(out.rows(), m);
        Ok(out)
    }

    /// Training-mode forward pass: batch statistics are used and folded into
    /// the running statistics. The returned trace feeds [`Self::backward`].
    pub fn forward_train(&mut self, batch: &Tensor) -> Result<(FeatureMatrix, Trace)> {
        let m = self.check_batch(batch)?;
        let mut stats = Vec::with_capacity(6);
        let (features, trace) = self.propagate(batch.data(), m, Some(&mut stats));
        for (bn, s) in self.bn.iter_mut().zip(&stats) {
            bn.update_running(s);
        }
        Ok((
            FeatureMatrix::from_vec(m, self.num_classes, features),
            trace.expect("train mode records a trace"),
        ))
    }

    /// Dispatches to [`Self::forward_train`] or [`Self::forward_eval`].
    pub fn forward(&mut self, batch: &Tensor, train_mode: bool) -> Result<FeatureMatrix> {
        if train_mode {
            self.forward_train(batch).map(|(f, _)| f)
        } else {
            self.forward_eval(batch)
        }
    }

    /// Shared forward path. With `stats` present, batch statistics are used,
    /// collected into it, and a trace is returned.
    fn propagate(&self, input: &[f64], m: usize, mut stats: Option<&mut Vec<Vec<(f64, f64)>>>) -> (Vec<f64>, Option<Trace>) {
        let train = stats.is_some();
        let mut bn_caches = Vec::new();
        let mut norm = |x: &[f64], n: usize, idx: usize| -> Vec<f64> {
            let bn = &self.bn[idx];
            match stats.as_deref_mut() {
                Some(s) => {
                    let (y, cache, st) = layers::bn_forward_train(x, n, bn.scale.data(), bn.shift.data());
                    bn_caches.push(cache);
                    s.push(st);
                    y
                }
                None => bn.eval(x, n),
            }
        };

        let l = self.signal_length;
        let g0 = Geom { channels: INPUT_CHANNELS, batch: m, time: l };
        let x = layers::to_channel_major(input, g0);

        let (mut a1, cols1) = layers::conv_forward(&x, g0, self.conv[0].weight.data(), self.conv[0].bias.data());
        let g1 = Geom { channels: CONV_CHANNELS[0], ..g0 };
        a1 = norm(&a1, g1.run(), 0);
        layers::relu_inplace(&mut a1);

        let (mut a2, cols2) = layers::conv_forward(&a1, g1, self.conv[1].weight.data(), self.conv[1].bias.data());
        let g2 = Geom { channels: CONV_CHANNELS[1], ..g1 };
        a2 = norm(&a2, g2.run(), 1);
        layers::relu_inplace(&mut a2);
        let (p2, idx2, g2p) = layers::maxpool_forward(&a2, g2);
        let b2 = norm(&p2, g2p.run(), 2);

        let (mut a3, cols3) = layers::conv_forward(&b2, g2p, self.conv[2].weight.data(), self.conv[2].bias.data());
        let g3 = Geom { channels: CONV_CHANNELS[2], ..g2p };
        a3 = norm(&a3, g3.run(), 3);
        layers::relu_inplace(&mut a3);
        let (p3, idx3, g3p) = layers::maxpool_forward(&a3, g3);
        let b3 = norm(&p3, g3p.run(), 4);

        let (mut a4, cols4) = layers::conv_forward(&b3, g3p, self.conv[3].weight.data(), self.conv[3].bias.data());
        let g4 = Geom { channels: CONV_CHANNELS[3], ..g3p };
        a4 = norm(&a4, g4.run(), 5);
        layers::relu_inplace(&mut a4);

        let flat = layers::flatten(&a4, g4);
        let mut hidden = layers::dense_forward(&flat, m, self.dense[0].weight.data(), self.dense[0].bias.data());
        layers::relu_inplace(&mut hidden);
        let mut probs = layers::dense_forward(&hidden, m, self.dense[1].weight.data(), self.dense[1].bias.data());
        let k = self.num_classes;
        layers::softmax_rows(&mut probs, k);
        let mut features = probs.clone();
        let norms = layers::l2_normalize_rows(&mut features, k);

        if !train {
            return (features, None);
        }
        let bn: [BnCache; 6] = bn_caches.try_into().ok().expect("six batch-norm layers");
        let trace = Trace {
            batch: m,
            signal_length: l,
            num_classes: k,
            conv_in: [g0, g1, g2p, g3p],
            conv_cols: [cols1, cols2, cols3, cols4],
            bn,
            relu_out: [a1, a2, a3, a4],
            pool_idx: [idx2, idx3],
            flat_geom: g4,
            flat,
            hidden,
            probs,
            features: features.clone(),
            norms,
        };
        (features, Some(trace))
    }

    /// Reverse-mode pass from `d_features` (`m x k`, the loss gradient with
    /// respect to the normalized features) to every trainable parameter.
    pub fn backward(&self, trace: &Trace, d_features: &[f64]) -> Result<Gradients> {
        let (m, k) = (trace.batch, trace.num_classes);
        if trace.signal_length != self.signal_length || k != self.num_classes {
            return Err(NnError::TraceMismatch("trace was recorded by a model of different shape".into()));
        }
        if d_features.len() != m * k {
            return Err(NnError::TraceMismatch(format!(
                "upstream gradient has {} values, trace expects {m} x {k}",
                d_features.len()
            )));
        }
        if d_features.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("upstream gradient"));
        }

        let dp = layers::l2_normalize_backward(d_features, &trace.features, &trace.norms, k);
        let dz = layers::softmax_backward(&dp, &trace.probs, k);
        let (dw_d2, db_d2, mut dh) = layers::dense_backward(&dz, &trace.hidden, m, self.dense[1].weight.data(), k);
        layers::relu_backward_inplace(&mut dh, &trace.hidden);
        let (dw_d1, db_d1, dflat) = layers::dense_backward(&dh, &trace.flat, m, self.dense[0].weight.data(), HIDDEN_UNITS);

        let g4 = trace.flat_geom;
        let mut d = layers::unflatten(&dflat, g4);
        layers::relu_backward_inplace(&mut d, &trace.relu_out[3]);
        let (ds_bn4, dt_bn4, d) = layers::bn_backward(&d, g4.run(), &trace.bn[5], self.bn[5].scale.data());
        let (dw_c4, db_c4, d) = self.conv_back(trace, 3, &d, true);
        let d = d.expect("input gradient");

        let g3p = trace.conv_in[3];
        let (ds_bn3p, dt_bn3p, d) = layers::bn_backward(&d, g3p.run(), &trace.bn[4], self.bn[4].scale.data());
        let g3 = Geom { channels: CONV_CHANNELS[2], ..trace.conv_in[2] };
        let mut d = layers::maxpool_backward(&d, &trace.pool_idx[1], g3.len());
        layers::relu_backward_inplace(&mut d, &trace.relu_out[2]);
        let (ds_bn3, dt_bn3, d) = layers::bn_backward(&d, g3.run(), &trace.bn[3], self.bn[3].scale.data());
        let (dw_c3, db_c3, d) = self.conv_back(trace, 2, &d, true);
        let d = d.expect("input gradient");

        let g2p = trace.conv_in[2];
        let (ds_bn2p, dt_bn2p, d) = layers::bn_backward(&d, g2p.run(), &trace.bn[2], self.bn[2].scale.data());
        let g2 = Geom { channels: CONV_CHANNELS[1], ..trace.conv_in[1] };
        let mut d = layers::maxpool_backward(&d, &trace.pool_idx[0], g2.len());
        layers::relu_backward_inplace(&mut d, &trace.relu_out[1]);
        let (ds_bn2, dt_bn2, d) = layers::bn_backward(&d, g2.run(), &trace.bn[1], self.bn[1].scale.data());
        let (dw_c2, db_c2, d) = self.conv_back(trace, 1, &d, true);
        let mut d = d.expect("input gradient");

        let g1 = trace.conv_in[1];
        layers::relu_backward_inplace(&mut d, &trace.relu_out[0]);
        let (ds_bn1, dt_bn1, d) = layers::bn_backward(&d, g1.run(), &trace.bn[0], self.bn[0].scale.data());
        let (dw_c1, db_c1, _) = self.conv_back(trace, 0, &d, false);

        let flat = vec![
            dw_c1, db_c1, ds_bn1, dt_bn1,
            dw_c2, db_c2, ds_bn2, dt_bn2, ds_bn2p, dt_bn2p,
            dw_c3, db_c3, ds_bn3, dt_bn3, ds_bn3p, dt_bn3p,
            dw_c4, db_c4, ds_bn4, dt_bn4,
            dw_d1, db_d1, dw_d2, db_d2,
        ];
        let tensors = flat
            .into_iter()
            .zip(self.parameters())
            .map(|(g, p)| Tensor::from_vec(p.shape().to_vec(), g))
            .collect();
        Ok(Gradients { tensors })
    }

    fn conv_back(&self, trace: &Trace, layer: usize, dy: &[f64], need_input: bool) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
        layers::conv_backward(
            dy,
            &trace.conv_cols[layer],
            trace.conv_in[layer],
            self.conv[layer].weight.data(),
            CONV_CHANNELS[layer],
            need_input,
        )
    }

    /// Applies one Adam update with the given learning rate.
    pub fn adam_step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        let shapes_match = grads.tensors.len() == self.first_moment.len()
            && grads.tensors.iter().zip(self.parameters()).all(|(g, p)| g.shape() == p.shape());
        if !shapes_match {
            return Err(NnError::ShapeMismatch {
                expected: "gradients matching the parameter table".into(),
                found: format!("{} gradient tensors", grads.tensors.len()),
            });
        }
        if !grads.is_finite() {
            return Err(NnError::NonFinite("gradient"));
        }
        self.step += 1;
        let step = self.step;
        let mut first = std::mem::take(&mut self.first_moment);
        let mut second = std::mem::take(&mut self.second_moment);
        for (((param, grad), m), v) in self
            .parameters_mut()
            .into_iter()
            .zip(&grads.tensors)
            .zip(first.iter_mut())
            .zip(second.iter_mut())
        {
            adam_update(param.data_mut(), grad.data(), m.data_mut(), v.data_mut(), step, lr);
        }
        self.first_moment = first;
        self.second_moment = second;
        Ok(())
    }
}
