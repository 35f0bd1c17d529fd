use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::{lstm_backward, lstm_forward, LstmCache, LstmParams, LstmState};
use crate::params::{Params, TensorView};
use crate::tensor::{dot, matvec_acc, matvec_t_acc, sigmoid, Matrix};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any log.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanConfig {
    pub n_steps: usize,
    pub feature_dim: usize,
    pub hidden_size: usize,
    pub latent_dim: usize,
    pub lr_d: f64,
    pub lr_g: f64,
    pub d_steps_per_g_step: usize,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Train the generator on `-log D(G(z))` instead of `log(1 - D(G(z)))`.
    pub non_saturating: bool,
    /// Elementwise gradient clip applied before every update.
    pub grad_clip: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            n_steps: 12,
            feature_dim: 11,
            hidden_size: 16,
            latent_dim: 8,
            lr_d: 0.01,
            lr_g: 0.01,
            d_steps_per_g_step: 1,
            minibatch_size: 32,
            epochs: 300,
            seed: 0,
            non_saturating: false,
            grad_clip: 5.0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_steps", self.n_steps),
            ("feature_dim", self.feature_dim),
            ("hidden_size", self.hidden_size),
            ("latent_dim", self.latent_dim),
            ("d_steps_per_g_step", self.d_steps_per_g_step),
            ("minibatch_size", self.minibatch_size),
            ("epochs", self.epochs),
        ] {
            if v == 0 {
                return Err(Error::config(format!("gan.{name} must be at least 1")));
            }
        }
        for (name, v) in [("lr_d", self.lr_d), ("lr_g", self.lr_g), ("grad_clip", self.grad_clip)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("gan.{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Latent input of the generator: `n_steps × latent_dim`, prior uniform on
/// `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSequence {
    pub z: Matrix,
}

impl LatentSequence {
    pub fn sample<R: Rng + ?Sized>(n_steps: usize, latent_dim: usize, rng: &mut R) -> Self {
        LatentSequence {
            z: Matrix::from_fn(n_steps, latent_dim, |_, _| rng.random_range(-1.0..=1.0)),
        }
    }
}

/// LSTM layer, per-step tanh dense layer, mean pooling over time and a
/// sigmoid output unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorNet {
    pub lstm: LstmParams,
    pub dense2_w: Matrix,
    pub dense2_b: Vec<f64>,
    pub out_w: Matrix,
    pub out_b: f64,
}

#[derive(Clone, Debug)]
pub struct DiscriminatorCache {
    lstm: LstmCache,
    hidden: Matrix,
    dense: Matrix,
    pooled: Vec<f64>,
    pub logit: f64,
    pub prob: f64,
}

impl DiscriminatorNet {
    pub fn zeros(feature_dim: usize, hidden_size: usize) -> Self {
        DiscriminatorNet {
            lstm: LstmParams::zeros(hidden_size, feature_dim),
            dense2_w: Matrix::zeros(hidden_size, hidden_size),
            dense2_b: vec![0.0; hidden_size],
            out_w: Matrix::zeros(1, hidden_size),
            out_b: 0.0,
        }
    }

    pub fn random<R: Rng + ?Sized>(feature_dim: usize, hidden_size: usize, rng: &mut R) -> Self {
        let mut net = DiscriminatorNet::zeros(feature_dim, hidden_size);
        net.lstm = LstmParams::random(hidden_size, feature_dim, rng);
        let r = 1.0 / (hidden_size as f64).sqrt();
        for v in net
            .dense2_w
            .as_mut_slice()
            .iter_mut()
            .chain(net.dense2_b.iter_mut())
            .chain(net.out_w.as_mut_slice())
        {
            *v = rng.random_range(-r..=r);
        }
        net.out_b = rng.random_range(-r..=r);
        net
    }

    pub fn feature_dim(&self) -> usize {
        self.lstm.input_size
    }

    pub fn forward(&self, features: &Matrix) -> Result<DiscriminatorCache> {
        let hs = self.lstm.hidden_size;
        let n = features.rows();
        if n == 0 {
            return Err(Error::shape("discriminator input has no time steps"));
        }
        let (hidden, lstm) = lstm_forward(&self.lstm, features, &LstmState::zeros(hs))?;
        let width = self.dense2_w.rows();
        let mut dense = Matrix::zeros(n, width);
        let mut pooled = vec![0.0; width];
        for t in 0..n {
            let row = dense.row_mut(t);
            row.copy_from_slice(&self.dense2_b);
            matvec_acc(&self.dense2_w, hidden.row(t), row);
            for (v, p) in row.iter_mut().zip(pooled.iter_mut()) {
                *v = v.tanh();
                *p += *v / n as f64;
            }
        }
        let logit = dot(self.out_w.row(0), &pooled) + self.out_b;
        Ok(DiscriminatorCache {
            lstm,
            hidden,
            dense,
            pooled,
            logit,
            prob: sigmoid(logit),
        })
    }

    /// Backpropagates `∂E/∂logit` and returns parameter gradients together
    /// with `∂E/∂features`.
    pub fn backward(&self, cache: &DiscriminatorCache, dlogit: f64) -> Result<(DiscriminatorNet, Matrix)> {
        let n = cache.hidden.rows();
        let hs = self.lstm.hidden_size;
        let width = self.dense2_w.rows();
        let mut grads = DiscriminatorNet::zeros(self.feature_dim(), hs);
        grads.out_b = dlogit;
        for (g, p) in grads.out_w.as_mut_slice().iter_mut().zip(&cache.pooled) {
            *g = dlogit * p;
        }
        let mut dpre = vec![0.0; width];
        let mut dh = Matrix::zeros(n, hs);
        for t in 0..n {
            for (k, d) in dpre.iter_mut().enumerate() {
                let a = cache.dense[(t, k)];
                *d = dlogit * self.out_w[(0, k)] / n as f64 * (1.0 - a * a);
            }
            grads.dense2_w.add_outer(&dpre, cache.hidden.row(t));
            for (g, d) in grads.dense2_b.iter_mut().zip(&dpre) {
                *g += d;
            }
            matvec_t_acc(&self.dense2_w, &dpre, dh.row_mut(t));
        }
        let (lstm_grads, dx) = lstm_backward(&self.lstm, &cache.lstm, &dh)?;
        grads.lstm = lstm_grads.into_inner();
        Ok((grads, dx))
    }
}

impl Params for DiscriminatorNet {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut v = prefixed(self.lstm.tensors(), LSTM_NAMES_D);
        v.push(TensorView {
            name: "dense2_w",
            shape: [self.dense2_w.rows(), self.dense2_w.cols()],
            data: self.dense2_w.as_slice(),
        });
        v.push(TensorView {
            name: "dense2_b",
            shape: [self.dense2_b.len(), 1],
            data: &self.dense2_b,
        });
        v.push(TensorView {
            name: "out_w",
            shape: [1, self.out_w.cols()],
            data: self.out_w.as_slice(),
        });
        v.push(TensorView {
            name: "out_b",
            shape: [1, 1],
            data: std::slice::from_ref(&self.out_b),
        });
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.lstm.tensors_mut();
        v.push(self.dense2_w.as_mut_slice());
        v.push(&mut self.dense2_b);
        v.push(self.out_w.as_mut_slice());
        v.push(std::slice::from_mut(&mut self.out_b));
        v
    }
}

/// LSTM layer followed by a per-step affine projection and a sigmoid, so
/// every generated entry lies in the normalized feature range `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorNet {
    pub lstm: LstmParams,
    pub out_w: Matrix,
    pub out_b: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct GeneratorCache {
    lstm: LstmCache,
    hidden: Matrix,
    pub output: Matrix,
}

impl GeneratorNet {
    pub fn zeros(latent_dim: usize, hidden_size: usize, feature_dim: usize) -> Self {
        GeneratorNet {
            lstm: LstmParams::zeros(hidden_size, latent_dim),
            out_w: Matrix::zeros(feature_dim, hidden_size),
            out_b: vec![0.0; feature_dim],
        }
    }

    pub fn random<R: Rng + ?Sized>(latent_dim: usize, hidden_size: usize, feature_dim: usize, rng: &mut R) -> Self {
        let mut net = GeneratorNet::zeros(latent_dim, hidden_size, feature_dim);
        net.lstm = LstmParams::random(hidden_size, latent_dim, rng);
        let r = 1.0 / (hidden_size as f64).sqrt();
        for v in net.out_w.as_mut_slice().iter_mut().chain(net.out_b.iter_mut()) {
            *v = rng.random_range(-r..=r);
        }
        net
    }

    pub fn latent_dim(&self) -> usize {
        self.lstm.input_size
    }

    pub fn feature_dim(&self) -> usize {
        self.out_b.len()
    }

    pub fn forward(&self, z: &LatentSequence) -> Result<GeneratorCache> {
        let (hidden, lstm) = lstm_forward(&self.lstm, &z.z, &LstmState::zeros(self.lstm.hidden_size))?;
        let n = hidden.rows();
        let mut output = Matrix::zeros(n, self.feature_dim());
        for t in 0..n {
            let row = output.row_mut(t);
            row.copy_from_slice(&self.out_b);
            matvec_acc(&self.out_w, hidden.row(t), row);
            row.iter_mut().for_each(|v| *v = sigmoid(*v));
        }
        Ok(GeneratorCache { lstm, hidden, output })
    }

    /// Backpropagates `∂E/∂output` and returns parameter gradients together
    /// with `∂E/∂z`.
    pub fn backward(&self, cache: &GeneratorCache, doutput: &Matrix) -> Result<(GeneratorNet, Matrix)> {
        let n = cache.output.rows();
        doutput.ensure_shape(n, self.feature_dim(), "generator output error")?;
        let hs = self.lstm.hidden_size;
        let mut grads = GeneratorNet::zeros(self.latent_dim(), hs, self.feature_dim());
        let mut dpre = vec![0.0; self.feature_dim()];
        let mut dh = Matrix::zeros(n, hs);
        for t in 0..n {
            for (k, d) in dpre.iter_mut().enumerate() {
                let y = cache.output[(t, k)];
                *d = doutput[(t, k)] * y * (1.0 - y);
            }
            grads.out_w.add_outer(&dpre, cache.hidden.row(t));
            for (g, d) in grads.out_b.iter_mut().zip(&dpre) {
                *g += d;
            }
            matvec_t_acc(&self.out_w, &dpre, dh.row_mut(t));
        }
        let (lstm_grads, dz) = lstm_backward(&self.lstm, &cache.lstm, &dh)?;
        grads.lstm = lstm_grads.into_inner();
        Ok((grads, dz))
    }
}

impl Params for GeneratorNet {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut v = prefixed(self.lstm.tensors(), LSTM_NAMES_G);
        v.push(TensorView {
            name: "out_w",
            shape: [self.out_w.rows(), self.out_w.cols()],
            data: self.out_w.as_slice(),
        });
        v.push(TensorView {
            name: "out_b",
            shape: [self.out_b.len(), 1],
            data: &self.out_b,
        });
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.lstm.tensors_mut();
        v.push(self.out_w.as_mut_slice());
        v.push(&mut self.out_b);
        v
    }
}

const LSTM_NAMES_D: [&str; 12] = [
    "lstm.w_oh", "lstm.w_fh", "lstm.w_ih", "lstm.w_ch", "lstm.b_o", "lstm.b_i",
    "lstm.b_f", "lstm.b_c", "lstm.w_ox", "lstm.w_fx", "lstm.w_ix", "lstm.w_cx",
];
const LSTM_NAMES_G: [&str; 12] = LSTM_NAMES_D;

fn prefixed<'a>(views: Vec<TensorView<'a>>, names: [&'static str; 12]) -> Vec<TensorView<'a>> {
    views
        .into_iter()
        .zip(names)
        .map(|(v, name)| TensorView { name, ..v })
        .collect()
}

/// A generator/discriminator pair plus the number of epochs already trained.
#[derive(Clone, Debug, PartialEq)]
pub struct GanModel {
    pub generator: GeneratorNet,
    pub discriminator: DiscriminatorNet,
    pub epochs_completed: usize,
}

impl GanModel {
    /// Seeded random initialization.
    pub fn init(config: &GanConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let generator = GeneratorNet::random(config.latent_dim, config.hidden_size, config.feature_dim, &mut rng);
        let discriminator = DiscriminatorNet::random(config.feature_dim, config.hidden_size, &mut rng);
        Ok(GanModel {
            generator,
            discriminator,
            epochs_completed: 0,
        })
    }
}

/// Probability that `features` came from the training data.
pub fn discriminate(net: &DiscriminatorNet, features: &Matrix) -> Result<f64> {
    if features.cols() != net.feature_dim() {
        return Err(Error::shape(format!(
            "discriminator expects {} features per step, got {}",
            net.feature_dim(),
            features.cols()
        )));
    }
    Ok(net.forward(features)?.prob)
}

pub fn generate(net: &GeneratorNet, z: &LatentSequence) -> Result<Matrix> {
    if z.z.cols() != net.latent_dim() {
        return Err(Error::shape(format!(
            "generator expects latent width {}, got {}",
            net.latent_dim(),
            z.z.cols()
        )));
    }
    Ok(net.forward(z)?.output)
}

pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// `d_loss = −[log D(real) + log(1 − D(fake))]`, `g_loss = log(1 − D(fake))`.
pub fn gan_loss_terms(net_d: &DiscriminatorNet, real: &Matrix, fake: &Matrix) -> Result<(f64, f64)> {
    if real.shape() != fake.shape() {
        return Err(Error::shape("real and generated matrices differ in shape"));
    }
    let p_real = clamp_prob(discriminate(net_d, real)?);
    let p_fake = clamp_prob(discriminate(net_d, fake)?);
    let g_loss = (1.0 - p_fake).ln();
    Ok((-(p_real.ln() + g_loss), g_loss))
}

/// `∂ log(clamp(σ(a)))/∂a`, zero where the clamp is active.
pub(crate) fn dlog_p_dlogit(p: f64) -> f64 {
    if (PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        1.0 - p
    } else {
        0.0
    }
}

/// `∂ log(1 − clamp(σ(a)))/∂a`, zero where the clamp is active.
pub(crate) fn dlog_1mp_dlogit(p: f64) -> f64 {
    if (PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        -p
    } else {
        0.0
    }
}
