//! Single-hidden-layer autoencoder trained online by backpropagation.
//!
//! The encoder maps a flattened time surface `s` (length D) to a code
//! `z = sigma(W s + b)` of length `N_z < D`; the decoder reconstructs
//! `s_hat = sigma'(W' z + b')`. Both weight sets are trained by plain SGD on
//! the per-element mean squared reconstruction error, one surface at a time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Element-wise activation for the encoder or decoder stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Rectifier,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Rectifier => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative at pre-activation `pre`, given that `out == apply(pre)`.
    #[inline]
    pub(crate) fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Sigmoid => out * (1.0 - out),
            Activation::Rectifier => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    /// Stable tag for the model blob format.
    pub fn tag(self) -> u8 {
        match self {
            Activation::Sigmoid => 0,
            Activation::Rectifier => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Activation> {
        match tag {
            0 => Some(Activation::Sigmoid),
            1 => Some(Activation::Rectifier),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Activation::Sigmoid => write!(f, "sigmoid"),
            Activation::Rectifier => write!(f, "rectifier"),
            Activation::Identity => write!(f, "identity"),
        }
    }
}

/// Encoder/decoder weight sets compressing surfaces into code vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub(crate) input_dim: usize,
    pub(crate) code_dim: usize,
    /// code_dim x input_dim, row-major.
    pub(crate) enc_weights: Vec<f64>,
    pub(crate) enc_bias: Vec<f64>,
    /// input_dim x code_dim, row-major.
    pub(crate) dec_weights: Vec<f64>,
    pub(crate) dec_bias: Vec<f64>,
    pub(crate) enc_activation: Activation,
    pub(crate) dec_activation: Activation,
}

impl Autoencoder {
    /// Random initialization: weights uniform in `±sqrt(6 / (D + N_z))`,
    /// biases zero. Requires `code_dim < input_dim` (the code must compress).
    pub fn new(
        input_dim: usize,
        code_dim: usize,
        enc_activation: Activation,
        dec_activation: Activation,
        seed: u64,
    ) -> Result<Autoencoder> {
        if code_dim == 0 || input_dim == 0 {
            return Err(Error::Config(format!(
                "autoencoder dims must be positive, got input_dim={input_dim} code_dim={code_dim}"
            )));
        }
        if code_dim >= input_dim {
            return Err(Error::Config(format!(
                "code_dim ({code_dim}) must be smaller than input_dim ({input_dim})"
            )));
        }
        let limit = (6.0 / (input_dim + code_dim) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc_weights = (0..code_dim * input_dim)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        let dec_weights = (0..input_dim * code_dim)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Ok(Autoencoder {
            input_dim,
            code_dim,
            enc_weights,
            enc_bias: vec![0.0; code_dim],
            dec_weights,
            dec_bias: vec![0.0; input_dim],
            enc_activation,
            dec_activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn code_dim(&self) -> usize {
        self.code_dim
    }

    pub fn encoder_activation(&self) -> Activation {
        self.enc_activation
    }

    pub fn decoder_activation(&self) -> Activation {
        self.dec_activation
    }

    /// Decoder column for code channel `j`: the learned feature rendered in
    /// input space (length `input_dim`).
    pub fn decoder_column(&self, j: usize) -> Vec<f64> {
        assert!(j < self.code_dim);
        (0..self.input_dim)
            .map(|d| self.dec_weights[d * self.code_dim + j])
            .collect()
    }

    /// All parameters as one flat vector, in the order encoder weights,
    /// encoder bias, decoder weights, decoder bias.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(
            self.enc_weights.len()
                + self.enc_bias.len()
                + self.dec_weights.len()
                + self.dec_bias.len(),
        );
        p.extend_from_slice(&self.enc_weights);
        p.extend_from_slice(&self.enc_bias);
        p.extend_from_slice(&self.dec_weights);
        p.extend_from_slice(&self.dec_bias);
        p
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        let expected = self.enc_weights.len()
            + self.enc_bias.len()
            + self.dec_weights.len()
            + self.dec_bias.len();
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: params.len(),
            });
        }
        let mut offset = 0;
        for dst in [
            &mut self.enc_weights,
            &mut self.enc_bias,
            &mut self.dec_weights,
            &mut self.dec_bias,
        ] {
            let len = dst.len();
            dst.copy_from_slice(&params[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    /// `z = sigma(W s + b)`.
    pub fn encode(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut code = vec![0.0; self.code_dim];
        self.encode_into(input, &mut code)?;
        Ok(code)
    }

    /// Allocation-free encode for the per-event hot path.
    pub fn encode_into(&self, input: &[f64], code: &mut [f64]) -> Result<()> {
        if input.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: input.len(),
            });
        }
        debug_assert_eq!(code.len(), self.code_dim);
        for (j, out) in code.iter_mut().enumerate() {
            let row = &self.enc_weights[j * self.input_dim..(j + 1) * self.input_dim];
            let mut acc = self.enc_bias[j];
            for (w, s) in row.iter().zip(input.iter()) {
                acc += w * s;
            }
            *out = self.enc_activation.apply(acc);
        }
        Ok(())
    }

    /// `s_hat = sigma'(W' z + b')`.
    pub fn decode(&self, code: &[f64]) -> Result<Vec<f64>> {
        if code.len() != self.code_dim {
            return Err(Error::DimensionMismatch {
                expected: self.code_dim,
                got: code.len(),
            });
        }
        let mut recon = vec![0.0; self.input_dim];
        for (d, out) in recon.iter_mut().enumerate() {
            let row = &self.dec_weights[d * self.code_dim..(d + 1) * self.code_dim];
            let mut acc = self.dec_bias[d];
            for (w, z) in row.iter().zip(code.iter()) {
                acc += w * z;
            }
            *out = self.dec_activation.apply(acc);
        }
        Ok(recon)
    }

    /// Per-element mean squared reconstruction error `||s_hat - s||^2 / D`.
    pub fn reconstruction_error(&self, input: &[f64]) -> Result<f64> {
        let recon = self.decode(&self.encode(input)?)?;
        let sum: f64 = recon
            .iter()
            .zip(input.iter())
            .map(|(r, s)| (r - s) * (r - s))
            .sum();
        Ok(sum / self.input_dim as f64)
    }

    /// One SGD step on the reconstruction loss for a single surface. Returns
    /// the loss before the step. A non-finite loss leaves the parameters
    /// untouched and reports a training error so the caller can back off the
    /// learning rate.
    pub fn train_step(&mut self, input: &[f64], learning_rate: f64) -> Result<f64> {
        if input.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: input.len(),
            });
        }
        if !(learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be >= 0, got {learning_rate}"
            )));
        }
        let d = self.input_dim;
        let nz = self.code_dim;

        // forward
        let mut pre_h = vec![0.0; nz];
        let mut code = vec![0.0; nz];
        for j in 0..nz {
            let row = &self.enc_weights[j * d..(j + 1) * d];
            let mut acc = self.enc_bias[j];
            for (w, s) in row.iter().zip(input.iter()) {
                acc += w * s;
            }
            pre_h[j] = acc;
            code[j] = self.enc_activation.apply(acc);
        }
        let mut pre_o = vec![0.0; d];
        let mut recon = vec![0.0; d];
        let mut loss = 0.0;
        for k in 0..d {
            let row = &self.dec_weights[k * nz..(k + 1) * nz];
            let mut acc = self.dec_bias[k];
            for (w, z) in row.iter().zip(code.iter()) {
                acc += w * z;
            }
            pre_o[k] = acc;
            recon[k] = self.dec_activation.apply(acc);
            let diff = recon[k] - input[k];
            loss += diff * diff;
        }
        loss /= d as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                what: "autoencoder reconstruction loss".into(),
            });
        }

        // backward: dL/ds_hat_k = 2 (s_hat_k - s_k) / D
        let mut delta_out = vec![0.0; d];
        for k in 0..d {
            let g = 2.0 * (recon[k] - input[k]) / d as f64;
            delta_out[k] = g * self.dec_activation.derivative(pre_o[k], recon[k]);
        }
        let mut delta_hidden = vec![0.0; nz];
        for (k, &dout) in delta_out.iter().enumerate() {
            let row = &self.dec_weights[k * nz..(k + 1) * nz];
            for (j, w) in row.iter().enumerate() {
                delta_hidden[j] += dout * w;
            }
        }
        for j in 0..nz {
            delta_hidden[j] *= self.enc_activation.derivative(pre_h[j], code[j]);
        }

        // fused parameter update
        for (k, &dout) in delta_out.iter().enumerate() {
            let row = &mut self.dec_weights[k * nz..(k + 1) * nz];
            for (w, z) in row.iter_mut().zip(code.iter()) {
                *w -= learning_rate * dout * z;
            }
            self.dec_bias[k] -= learning_rate * dout;
        }
        for (j, &dh) in delta_hidden.iter().enumerate() {
            let row = &mut self.enc_weights[j * d..(j + 1) * d];
            for (w, s) in row.iter_mut().zip(input.iter()) {
                *w -= learning_rate * dh * s;
            }
            self.enc_bias[j] -= learning_rate * dh;
        }
        Ok(loss)
    }
}

/// Stopping rule and step size for online training.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainingConfig {
    /// Convergence threshold on the running mean reconstruction error.
    pub threshold: f64,
    /// Hard cap on consumed surfaces.
    pub max_surfaces: usize,
    pub learning_rate: f64,
    /// Running-mean window length.
    pub window: usize,
    /// Record one trajectory point per this many surfaces.
    pub trajectory_stride: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            threshold: 0.01,
            max_surfaces: 200_000,
            learning_rate: 0.05,
            window: 1000,
            trajectory_stride: 1000,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold >= 0.0) {
            return Err(Error::Config(format!(
                "autoencoder.epsilon must be >= 0, got {}",
                self.threshold
            )));
        }
        if self.max_surfaces == 0 {
            return Err(Error::Config("autoencoder.max_surfaces must be > 0".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "autoencoder.learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.window == 0 {
            return Err(Error::Config("autoencoder.window must be > 0".into()));
        }
        Ok(())
    }
}

/// Outcome of one online training run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainingReport {
    pub surfaces_seen: usize,
    pub final_error: f64,
    /// Running-mean error sampled every `trajectory_stride` surfaces, plus
    /// the final value.
    pub trajectory: Vec<f64>,
    pub converged: bool,
}

/// Push-based online trainer, so a stream driver can feed surfaces as they
/// are produced and stop as soon as the threshold is reached.
pub struct OnlineTrainer<'a> {
    ae: &'a mut Autoencoder,
    cfg: TrainingConfig,
    learning_rate: f64,
    window: Vec<f64>,
    window_sum: f64,
    seen: usize,
    halvings: u32,
    trajectory: Vec<f64>,
    converged: bool,
}

impl<'a> OnlineTrainer<'a> {
    pub fn new(ae: &'a mut Autoencoder, cfg: TrainingConfig) -> Result<OnlineTrainer<'a>> {
        cfg.validate()?;
        let learning_rate = cfg.learning_rate;
        Ok(OnlineTrainer {
            ae,
            cfg,
            learning_rate,
            window: Vec::new(),
            window_sum: 0.0,
            seen: 0,
            halvings: 0,
            trajectory: Vec::new(),
            converged: false,
        })
    }

    /// Mean reconstruction error over the trailing window (or over everything
    /// seen while the window is still filling). NaN before the first surface.
    pub fn running_mean(&self) -> f64 {
        self.window_sum / self.window.len() as f64
    }

    pub fn is_done(&self) -> bool {
        self.converged || self.seen >= self.cfg.max_surfaces
    }

    /// Trains on one surface. Returns `Ok(false)` once training should stop
    /// (threshold reached or cap hit). Non-finite losses trigger up to three
    /// learning-rate halvings before the error propagates.
    pub fn push(&mut self, surface: &[f64]) -> Result<bool> {
        if self.is_done() {
            return Ok(false);
        }
        let loss = match self.ae.train_step(surface, self.learning_rate) {
            Ok(loss) => loss,
            Err(Error::NonFinite { .. }) if self.halvings < 3 => {
                self.halvings += 1;
                self.learning_rate /= 2.0;
                return Ok(!self.is_done());
            }
            Err(e) => return Err(e),
        };
        self.seen += 1;
        if self.window.len() == self.cfg.window {
            // surface number `seen` overwrites the oldest slot
            let slot = (self.seen - 1) % self.cfg.window;
            self.window_sum -= self.window[slot];
            self.window[slot] = loss;
        } else {
            self.window.push(loss);
        }
        self.window_sum += loss;
        if self.running_mean() < self.cfg.threshold {
            self.converged = true;
        }
        if self.seen % self.cfg.trajectory_stride == 0 {
            self.trajectory.push(self.running_mean());
        }
        Ok(!self.is_done())
    }

    pub fn finish(mut self) -> TrainingReport {
        let final_error = if self.seen == 0 { 0.0 } else { self.running_mean() };
        if self.trajectory.last() != Some(&final_error) || self.trajectory.is_empty() {
            self.trajectory.push(final_error);
        }
        TrainingReport {
            surfaces_seen: self.seen,
            final_error,
            trajectory: self.trajectory,
            converged: self.converged,
        }
    }
}

/// Trains on surfaces pulled from `source` until the running mean error
/// drops below the threshold or `max_surfaces` are consumed.
pub fn train_until_threshold<I, S>(
    ae: &mut Autoencoder,
    source: I,
    cfg: TrainingConfig,
) -> Result<TrainingReport>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[f64]>,
{
    let mut trainer = OnlineTrainer::new(ae, cfg)?;
    for surface in source {
        if !trainer.push(surface.as_ref())? {
            break;
        }
    }
    Ok(trainer.finish())
}
