//! Softmax MLP over the vectorized final feature volume, trained by
//! backpropagation, plus confusion-matrix evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autoencoder::Activation;
use crate::error::{Error, Result};
use crate::hierarchy::FeatureVolume;

/// Flattens a feature volume in `(y, x, channel)` order. Never-written cells
/// contribute zeros.
pub fn vectorize(vol: &FeatureVolume) -> Vec<f64> {
    // the volume stores codes in exactly this order
    vol.codes().to_vec()
}

/// Training objective for the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlpLoss {
    CrossEntropy,
    SquaredError,
}

impl MlpLoss {
    pub fn tag(self) -> u8 {
        match self {
            MlpLoss::CrossEntropy => 0,
            MlpLoss::SquaredError => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<MlpLoss> {
        match tag {
            0 => Some(MlpLoss::CrossEntropy),
            1 => Some(MlpLoss::SquaredError),
            _ => None,
        }
    }
}

/// One-hidden-layer perceptron with a softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub(crate) input_dim: usize,
    pub(crate) hidden_dim: usize,
    pub(crate) classes: usize,
    /// hidden_dim x input_dim, row-major.
    pub(crate) w1: Vec<f64>,
    pub(crate) b1: Vec<f64>,
    /// classes x hidden_dim, row-major.
    pub(crate) w2: Vec<f64>,
    pub(crate) b2: Vec<f64>,
    pub(crate) hidden_activation: Activation,
    pub(crate) loss: MlpLoss,
    /// Per-feature (mean, inverse std) when input standardization is on.
    pub(crate) standardize: Option<(Vec<f64>, Vec<f64>)>,
}

impl Mlp {
    pub fn new(input_dim: usize, hidden_dim: usize, classes: usize, seed: u64) -> Result<Mlp> {
        Mlp::with_options(
            input_dim,
            hidden_dim,
            classes,
            Activation::Sigmoid,
            MlpLoss::CrossEntropy,
            seed,
        )
    }

    pub fn with_options(
        input_dim: usize,
        hidden_dim: usize,
        classes: usize,
        hidden_activation: Activation,
        loss: MlpLoss,
        seed: u64,
    ) -> Result<Mlp> {
        if input_dim == 0 || hidden_dim == 0 || classes == 0 {
            return Err(Error::Config(format!(
                "mlp dims must be positive, got input={input_dim} hidden={hidden_dim} classes={classes}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w1 = xavier(&mut rng, hidden_dim, input_dim);
        let w2 = xavier(&mut rng, classes, hidden_dim);
        Ok(Mlp {
            input_dim,
            hidden_dim,
            classes,
            w1,
            b1: vec![0.0; hidden_dim],
            w2,
            b2: vec![0.0; classes],
            hidden_activation,
            loss,
            standardize: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn loss_kind(&self) -> MlpLoss {
        self.loss
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn is_standardized(&self) -> bool {
        self.standardize.is_some()
    }

    /// Fits per-feature mean and standard deviation on `inputs` and applies
    /// them to every future forward pass.
    pub fn fit_standardization(&mut self, inputs: &[Vec<f64>]) -> Result<()> {
        if inputs.is_empty() {
            return Err(Error::Dataset(
                "cannot fit standardization on an empty set".into(),
            ));
        }
        let n = inputs.len() as f64;
        let mut mean = vec![0.0; self.input_dim];
        for x in inputs {
            for (m, v) in mean.iter_mut().zip(x.iter()) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut inv_std = vec![0.0; self.input_dim];
        for x in inputs {
            for (s, (v, m)) in inv_std.iter_mut().zip(x.iter().zip(mean.iter())) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut inv_std {
            let std = (*s / n).sqrt();
            *s = if std > 1e-12 { 1.0 / std } else { 1.0 };
        }
        self.standardize = Some((mean, inv_std));
        Ok(())
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut p =
            Vec::with_capacity(self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len());
        p.extend_from_slice(&self.w1);
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(&self.w2);
        p.extend_from_slice(&self.b2);
        p
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        let expected = self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len();
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: params.len(),
            });
        }
        let mut offset = 0;
        for dst in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            let len = dst.len();
            dst.copy_from_slice(&params[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    /// Probability vector over the classes: softmax of the output layer.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: input.len(),
            });
        }
        let (_, _, probs) = self.forward_parts(input);
        Ok(probs)
    }

    /// (hidden pre-activations, hidden outputs, class probabilities)
    fn forward_parts(&self, input: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let x_store;
        let x: &[f64] = match &self.standardize {
            Some((mean, inv_std)) => {
                x_store = input
                    .iter()
                    .zip(mean.iter().zip(inv_std.iter()))
                    .map(|(v, (m, s))| (v - m) * s)
                    .collect::<Vec<f64>>();
                &x_store
            }
            None => input,
        };
        let mut pre_h = vec![0.0; self.hidden_dim];
        let mut hidden = vec![0.0; self.hidden_dim];
        for j in 0..self.hidden_dim {
            let row = &self.w1[j * self.input_dim..(j + 1) * self.input_dim];
            let mut acc = self.b1[j];
            for (w, v) in row.iter().zip(x.iter()) {
                acc += w * v;
            }
            pre_h[j] = acc;
            hidden[j] = self.hidden_activation.apply(acc);
        }
        let mut logits = vec![0.0; self.classes];
        for c in 0..self.classes {
            let row = &self.w2[c * self.hidden_dim..(c + 1) * self.hidden_dim];
            let mut acc = self.b2[c];
            for (w, h) in row.iter().zip(hidden.iter()) {
                acc += w * h;
            }
            logits[c] = acc;
        }
        let probs = softmax(&logits);
        (pre_h, hidden, probs)
    }

    /// Predicted class: argmax probability, ties broken toward the lowest
    /// class index.
    pub fn predict(&self, input: &[f64]) -> Result<usize> {
        let probs = self.forward(input)?;
        Ok(argmax(&probs))
    }

    /// Loss of one labeled sample under the configured objective.
    pub fn sample_loss(&self, input: &[f64], label: usize) -> Result<f64> {
        if label >= self.classes {
            return Err(Error::Dataset(format!(
                "label {label} out of range for {} classes",
                self.classes
            )));
        }
        let probs = self.forward(input)?;
        Ok(match self.loss {
            MlpLoss::CrossEntropy => -(probs[label].max(1e-300)).ln(),
            MlpLoss::SquaredError => probs
                .iter()
                .enumerate()
                .map(|(c, p)| {
                    let y = if c == label { 1.0 } else { 0.0 };
                    (p - y) * (p - y)
                })
                .sum(),
        })
    }

    /// One SGD step on a single labeled sample; returns (loss, correct)
    /// evaluated before the step.
    pub fn train_step(&mut self, input: &[f64], label: usize, learning_rate: f64) -> Result<(f64, bool)> {
        if input.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: input.len(),
            });
        }
        if label >= self.classes {
            return Err(Error::Dataset(format!(
                "label {label} out of range for {} classes",
                self.classes
            )));
        }
        let x_store;
        let x: &[f64] = match &self.standardize {
            Some((mean, inv_std)) => {
                x_store = input
                    .iter()
                    .zip(mean.iter().zip(inv_std.iter()))
                    .map(|(v, (m, s))| (v - m) * s)
                    .collect::<Vec<f64>>();
                &x_store
            }
            None => input,
        };

        // forward
        let mut pre_h = vec![0.0; self.hidden_dim];
        let mut hidden = vec![0.0; self.hidden_dim];
        for j in 0..self.hidden_dim {
            let row = &self.w1[j * self.input_dim..(j + 1) * self.input_dim];
            let mut acc = self.b1[j];
            for (w, v) in row.iter().zip(x.iter()) {
                acc += w * v;
            }
            pre_h[j] = acc;
            hidden[j] = self.hidden_activation.apply(acc);
        }
        let mut logits = vec![0.0; self.classes];
        for c in 0..self.classes {
            let row = &self.w2[c * self.hidden_dim..(c + 1) * self.hidden_dim];
            let mut acc = self.b2[c];
            for (w, h) in row.iter().zip(hidden.iter()) {
                acc += w * h;
            }
            logits[c] = acc;
        }
        let probs = softmax(&logits);
        let correct = argmax(&probs) == label;
        let loss = match self.loss {
            MlpLoss::CrossEntropy => -(probs[label].max(1e-300)).ln(),
            MlpLoss::SquaredError => probs
                .iter()
                .enumerate()
                .map(|(c, p)| {
                    let y = if c == label { 1.0 } else { 0.0 };
                    (p - y) * (p - y)
                })
                .sum(),
        };
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                what: "classifier loss".into(),
            });
        }

        // gradient at the logits
        let mut delta = vec![0.0; self.classes];
        match self.loss {
            MlpLoss::CrossEntropy => {
                // softmax + cross-entropy collapses to p - y
                for c in 0..self.classes {
                    let y = if c == label { 1.0 } else { 0.0 };
                    delta[c] = probs[c] - y;
                }
            }
            MlpLoss::SquaredError => {
                // chain dL/dp = 2(p - y) through the softmax Jacobian
                let g: Vec<f64> = probs
                    .iter()
                    .enumerate()
                    .map(|(c, p)| {
                        let y = if c == label { 1.0 } else { 0.0 };
                        2.0 * (p - y)
                    })
                    .collect();
                let dot: f64 = g.iter().zip(probs.iter()).map(|(gi, pi)| gi * pi).sum();
                for c in 0..self.classes {
                    delta[c] = probs[c] * (g[c] - dot);
                }
            }
        }

        // backprop into the hidden layer
        let mut delta_hidden = vec![0.0; self.hidden_dim];
        for (c, &d) in delta.iter().enumerate() {
            let row = &self.w2[c * self.hidden_dim..(c + 1) * self.hidden_dim];
            for (j, w) in row.iter().enumerate() {
                delta_hidden[j] += d * w;
            }
        }
        for j in 0..self.hidden_dim {
            delta_hidden[j] *= self.hidden_activation.derivative(pre_h[j], hidden[j]);
        }

        // fused updates
        for (c, &d) in delta.iter().enumerate() {
            let row = &mut self.w2[c * self.hidden_dim..(c + 1) * self.hidden_dim];
            for (w, h) in row.iter_mut().zip(hidden.iter()) {
                *w -= learning_rate * d * h;
            }
            self.b2[c] -= learning_rate * d;
        }
        for (j, &dh) in delta_hidden.iter().enumerate() {
            let row = &mut self.w1[j * self.input_dim..(j + 1) * self.input_dim];
            for (w, v) in row.iter_mut().zip(x.iter()) {
                *w -= learning_rate * dh * v;
            }
            self.b1[j] -= learning_rate * dh;
        }
        Ok((loss, correct))
    }
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f64> {
    use rand::Rng;
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Epochs, step size and shuffle seed for classifier training.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MlpTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Drives the per-epoch shuffles.
    pub seed: u64,
}

impl MlpTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "classifier.learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Per-epoch mean loss and accuracy of the predictions made during training.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MlpTrainingReport {
    pub epoch_loss: Vec<f64>,
    pub epoch_accuracy: Vec<f64>,
}

/// Online SGD over the labeled set with seeded per-epoch shuffling.
pub fn mlp_train(
    mlp: &mut Mlp,
    inputs: &[Vec<f64>],
    labels: &[usize],
    cfg: &MlpTrainConfig,
) -> Result<MlpTrainingReport> {
    cfg.validate()?;
    if inputs.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.len(),
            got: labels.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut learning_rate = cfg.learning_rate;
    let mut halvings = 0u32;
    let mut report = MlpTrainingReport {
        epoch_loss: Vec::with_capacity(cfg.epochs),
        epoch_accuracy: Vec::with_capacity(cfg.epochs),
    };
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for &i in &order {
            match mlp.train_step(&inputs[i], labels[i], learning_rate) {
                Ok((loss, ok)) => {
                    loss_sum += loss;
                    correct += usize::from(ok);
                }
                Err(Error::NonFinite { .. }) if halvings < 3 => {
                    halvings += 1;
                    learning_rate /= 2.0;
                }
                Err(e) => return Err(e),
            }
        }
        let n = inputs.len().max(1) as f64;
        report.epoch_loss.push(loss_sum / n);
        report.epoch_accuracy.push(correct as f64 / n);
    }
    Ok(report)
}

/// Class-count table: rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> ConfusionMatrix {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.classes + predicted] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.classes, other.classes);
        for (a, b) in self.counts.iter_mut().zip(other.counts.iter()) {
            *a += b;
        }
    }

    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth * self.classes..(truth + 1) * self.classes]
            .iter()
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.count(c, c)).sum()
    }

    /// Overall recognition rate: trace / total (0 when empty).
    pub fn overall_rate(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.trace() as f64 / total as f64
        }
    }

    /// Per-class recognition rates; classes with no samples report 0.
    pub fn per_class_rates(&self) -> Vec<f64> {
        (0..self.classes)
            .map(|c| {
                let row = self.row_sum(c);
                if row == 0 {
                    0.0
                } else {
                    self.count(c, c) as f64 / row as f64
                }
            })
            .collect()
    }

    /// Aligned plain-text table with per-class rates.
    pub fn to_text_table(&self, labels: &[String]) -> String {
        assert_eq!(labels.len(), self.classes);
        let width = labels
            .iter()
            .map(|l| l.len())
            .chain(self.counts.iter().map(|c| c.to_string().len()))
            .max()
            .unwrap_or(1)
            .max(4);
        let mut out = String::new();
        out.push_str(&format!("{:>width$} |", "t\\p", width = width));
        for l in labels {
            out.push_str(&format!(" {l:>width$}"));
        }
        out.push_str(&format!(" | {:>7}\n", "rate"));
        let rates = self.per_class_rates();
        for (t, l) in labels.iter().enumerate() {
            out.push_str(&format!("{l:>width$} |"));
            for p in 0..self.classes {
                out.push_str(&format!(" {:>width$}", self.count(t, p)));
            }
            out.push_str(&format!(" | {:>7.4}\n", rates[t]));
        }
        out.push_str(&format!("overall rate: {:.4}\n", self.overall_rate()));
        out
    }

    /// Comma-separated counts with a header row and column.
    pub fn to_csv(&self, labels: &[String]) -> String {
        assert_eq!(labels.len(), self.classes);
        let mut out = String::from("true\\pred");
        for l in labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (t, l) in labels.iter().enumerate() {
            out.push_str(l);
            for p in 0..self.classes {
                out.push_str(&format!(",{}", self.count(t, p)));
            }
            out.push('\n');
        }
        out
    }
}

/// Argmax prediction over every sample; read-only and parallel, merged by
/// summation.
pub fn evaluate(mlp: &Mlp, inputs: &[Vec<f64>], labels: &[usize]) -> Result<ConfusionMatrix> {
    if inputs.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.len(),
            got: labels.len(),
        });
    }
    inputs
        .par_iter()
        .zip(labels.par_iter())
        .try_fold(
            || ConfusionMatrix::new(mlp.classes),
            |mut m, (x, &label)| {
                if label >= mlp.classes {
                    return Err(Error::Dataset(format!(
                        "label {label} out of range for {} classes",
                        mlp.classes
                    )));
                }
                m.record(label, mlp.predict(x)?);
                Ok(m)
            },
        )
        .try_reduce(
            || ConfusionMatrix::new(mlp.classes),
            |mut a, b| {
                a.merge(&b);
                Ok(a)
            },
        )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Geometry;

    #[test]
    fn vectorize_order_is_y_then_x_then_channel() {
        let mut vol = FeatureVolume::new(Geometry::new(2, 2), 1);
        vol.write(0, 0, &[1.0], 0).unwrap();
        vol.write(1, 0, &[2.0], 1).unwrap();
        vol.write(0, 1, &[3.0], 2).unwrap();
        vol.write(1, 1, &[4.0], 3).unwrap();
        assert_eq!(vectorize(&vol), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn vectorize_all_never_is_zero() {
        let vol = FeatureVolume::new(Geometry::new(3, 2), 4);
        assert_eq!(vectorize(&vol), vec![0.0; 24]);
    }

    #[test]
    fn vectorize_single_cell_two_channels() {
        let mut vol = FeatureVolume::new(Geometry::new(1, 1), 2);
        vol.write(0, 0, &[0.25, 0.75], 0).unwrap();
        assert_eq!(vectorize(&vol), vec![0.25, 0.75]);
    }

    fn zeroed_mlp(input: usize, hidden: usize, classes: usize) -> Mlp {
        let mut mlp = Mlp::new(input, hidden, classes, 0).unwrap();
        let n = mlp.params_flat().len();
        mlp.set_params_flat(&vec![0.0; n]).unwrap();
        mlp
    }

    #[test]
    fn zero_weights_give_uniform_distribution() {
        let mlp = zeroed_mlp(4, 3, 5);
        let probs = mlp.forward(&[0.1, 0.9, 0.3, 0.7]).unwrap();
        for p in probs {
            assert!((p - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let mlp = Mlp::new(6, 4, 3, 7).unwrap();
        for seed in 0..10u64 {
            let x: Vec<f64> = (0..6).map(|i| ((seed + i) % 5) as f64 / 4.0).collect();
            let probs = mlp.forward(&x).unwrap();
            let sum: f64 = probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(probs.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn forward_matches_hand_rolled_evaluation() {
        let mlp = Mlp::new(3, 2, 2, 5).unwrap();
        let x = [0.5, -0.25, 0.8];
        let probs = mlp.forward(&x).unwrap();
        // independent re-evaluation
        let mut hidden = [0.0f64; 2];
        for j in 0..2 {
            let mut acc = mlp.b1[j];
            for k in 0..3 {
                acc += mlp.w1[j * 3 + k] * x[k];
            }
            hidden[j] = 1.0 / (1.0 + (-acc).exp());
        }
        let mut logits = [0.0f64; 2];
        for c in 0..2 {
            let mut acc = mlp.b2[c];
            for j in 0..2 {
                acc += mlp.w2[c * 2 + j] * hidden[j];
            }
            logits[c] = acc;
        }
        let z = (logits[0].exp(), logits[1].exp());
        let expected = [z.0 / (z.0 + z.1), z.1 / (z.0 + z.1)];
        for (p, e) in probs.iter().zip(expected.iter()) {
            assert!((p - e).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_ties_break_toward_lowest_index() {
        let mlp = zeroed_mlp(2, 2, 4);
        // uniform output: everything ties, class 0 wins
        assert_eq!(mlp.predict(&[0.3, 0.4]).unwrap(), 0);
    }

    #[test]
    fn logit_shift_does_not_change_prediction() {
        let mut mlp = Mlp::new(4, 3, 3, 11).unwrap();
        let x = [0.2, 0.8, 0.5, 0.1];
        let before = mlp.predict(&x).unwrap();
        for b in &mut mlp.b2 {
            *b += 42.0;
        }
        assert_eq!(mlp.predict(&x).unwrap(), before);
    }

    fn finite_difference_grads(mlp: &Mlp, x: &[f64], label: usize, eps: f64) -> Vec<f64> {
        let params = mlp.params_flat();
        let mut grads = vec![0.0; params.len()];
        for i in 0..params.len() {
            let mut plus = mlp.clone();
            let mut minus = mlp.clone();
            let mut p = params.clone();
            p[i] += eps;
            plus.set_params_flat(&p).unwrap();
            p[i] = params[i] - eps;
            minus.set_params_flat(&p).unwrap();
            grads[i] = (plus.sample_loss(x, label).unwrap()
                - minus.sample_loss(x, label).unwrap())
                / (2.0 * eps);
        }
        grads
    }

    fn analytic_grads(mlp: &Mlp, x: &[f64], label: usize) -> Vec<f64> {
        let before = mlp.params_flat();
        let mut stepped = mlp.clone();
        stepped.train_step(x, label, 1.0).unwrap();
        let after = stepped.params_flat();
        before.iter().zip(after.iter()).map(|(b, a)| b - a).collect()
    }

    #[test]
    fn gradients_match_finite_differences_for_both_losses() {
        for loss in [MlpLoss::CrossEntropy, MlpLoss::SquaredError] {
            for seed in 0..5u64 {
                let mlp = Mlp::with_options(5, 4, 3, Activation::Sigmoid, loss, seed).unwrap();
                let x: Vec<f64> = (0..5).map(|i| ((seed + i) % 7) as f64 / 6.0).collect();
                let label = (seed % 3) as usize;
                let numeric = finite_difference_grads(&mlp, &x, label, 1e-5);
                let analytic = analytic_grads(&mlp, &x, label);
                for (n, a) in numeric.iter().zip(analytic.iter()) {
                    let scale = n.abs().max(a.abs()).max(1e-8);
                    assert!(
                        (n - a).abs() / scale < 1e-4,
                        "{loss:?} seed {seed}: numeric {n} vs analytic {a}"
                    );
                }
            }
        }
    }

    #[test]
    fn zero_epochs_leave_weights_unchanged() {
        let mut mlp = Mlp::new(4, 3, 2, 1).unwrap();
        let before = mlp.params_flat();
        let report = mlp_train(
            &mut mlp,
            &[vec![0.0; 4]],
            &[0],
            &MlpTrainConfig {
                epochs: 0,
                learning_rate: 0.1,
                seed: 0,
            },
        )
        .unwrap();
        assert!(report.epoch_loss.is_empty());
        assert_eq!(mlp.params_flat(), before);
    }

    #[test]
    fn separable_blobs_reach_high_training_accuracy() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..200 {
            let class = i % 2;
            let center = if class == 0 { (-1.0, -1.0) } else { (1.0, 1.0) };
            inputs.push(vec![
                center.0 + rng.gen_range(-0.5..0.5),
                center.1 + rng.gen_range(-0.5..0.5),
            ]);
            labels.push(class);
        }
        let mut mlp = Mlp::new(2, 8, 2, 7).unwrap();
        let report = mlp_train(
            &mut mlp,
            &inputs,
            &labels,
            &MlpTrainConfig {
                epochs: 50,
                learning_rate: 0.5,
                seed: 99,
            },
        )
        .unwrap();
        let last = *report.epoch_accuracy.last().unwrap();
        assert!(last >= 0.95, "training accuracy {last}");
    }

    #[test]
    fn perfect_predictor_gives_diagonal_matrix() {
        let mut m = ConfusionMatrix::new(3);
        for c in 0..3 {
            for _ in 0..5 {
                m.record(c, c);
            }
        }
        assert_eq!(m.overall_rate(), 1.0);
        assert_eq!(m.trace(), 15);
        for t in 0..3 {
            for p in 0..3 {
                assert_eq!(m.count(t, p), if t == p { 5 } else { 0 });
            }
        }
    }

    #[test]
    fn constant_predictor_on_balanced_set_scores_chance() {
        let mut m = ConfusionMatrix::new(10);
        for c in 0..10 {
            for _ in 0..7 {
                m.record(c, 0);
            }
        }
        assert!((m.overall_rate() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn matrix_accounting_identities() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = ConfusionMatrix::new(4);
        let mut per_class = [0u64; 4];
        for _ in 0..500 {
            let t = rng.gen_range(0..4);
            let p = rng.gen_range(0..4);
            m.record(t, p);
            per_class[t] += 1;
        }
        for (c, &expected) in per_class.iter().enumerate() {
            assert_eq!(m.row_sum(c), expected);
        }
        assert_eq!(m.total(), 500);
        assert!((m.overall_rate() - m.trace() as f64 / 500.0).abs() < 1e-15);
    }

    #[test]
    fn evaluate_runs_parallel_and_matches_serial() {
        let mlp = Mlp::new(3, 4, 3, 2).unwrap();
        let inputs: Vec<Vec<f64>> = (0..50)
            .map(|i| (0..3).map(|k| ((i * 3 + k) % 9) as f64 / 8.0).collect())
            .collect();
        let labels: Vec<usize> = (0..50).map(|i| i % 3).collect();
        let parallel = evaluate(&mlp, &inputs, &labels).unwrap();
        let mut serial = ConfusionMatrix::new(3);
        for (x, &l) in inputs.iter().zip(labels.iter()) {
            serial.record(l, mlp.predict(x).unwrap());
        }
        assert_eq!(parallel, serial);
    }

    #[test]
    fn csv_and_text_reports_are_well_formed() {
        let mut m = ConfusionMatrix::new(2);
        m.record(0, 0);
        m.record(1, 0);
        let labels = vec!["cat".to_string(), "dog".to_string()];
        let csv = m.to_csv(&labels);
        assert!(csv.starts_with("true\\pred,cat,dog\n"));
        assert!(csv.contains("cat,1,0"));
        let table = m.to_text_table(&labels);
        assert!(table.contains("overall rate: 0.5000"));
    }
}
