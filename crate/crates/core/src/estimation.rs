//! Reconstruction of corrupted traffic matrices with a pre-trained GAN.
//!
//! A latent sequence `z` is fitted by gradient descent on
//!
//! ```text
//! L(z) = ‖M ⊙ G(z) − M ⊙ y‖₁ + λ_p · log(1 − D(G(z))) + λ_c · L_cons(G(z))
//! ```
//!
//! where `L_cons` is the mean squared violation of the discrete conservation
//! law, evaluated in physical units after de-normalizing `G(z)`. The
//! gradient with respect to `z` flows back through the frozen discriminator
//! and generator. The fitted `G(ẑ)` only fills the missing entries:
//! `M ⊙ y + (1 − M) ⊙ G(ẑ)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Geometry, Scaler, TrafficStateMatrix};
use crate::error::{Error, Result};
use crate::gan::{Checkpoint, DiscriminatorNet, GeneratorNet, LatentSequence, PROB_EPS};
use crate::tensor::Matrix;

/// Binary observation indicator: 1 = observed, 0 = missing.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask(Matrix);

impl Mask {
    pub fn new(m: Matrix) -> Result<Self> {
        if let Some(v) = m.as_slice().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::config(format!("mask entries must be 0 or 1, found {v}")));
        }
        Ok(Mask(m))
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Mask(Matrix::filled(rows, cols, 1.0))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mask(Matrix::zeros(rows, cols))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    #[inline]
    pub fn is_observed(&self, r: usize, c: usize) -> bool {
        self.0[(r, c)] == 1.0
    }

    pub fn observed(&self) -> usize {
        self.0.as_slice().iter().filter(|&&v| v == 1.0).count()
    }

    pub fn missing(&self) -> usize {
        self.0.as_slice().len() - self.observed()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_p: f64,
    pub lambda_c: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_p: 0.1,
            lambda_c: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_p >= 0.0 && self.lambda_c >= 0.0) || !self.lambda_p.is_finite() || !self.lambda_c.is_finite() {
            return Err(Error::config("loss weights must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateConfig {
    pub iterations: usize,
    pub step_size: f64,
    pub restarts: usize,
    pub seed: u64,
    pub weights: LossWeights,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            iterations: 500,
            step_size: 0.05,
            restarts: 3,
            seed: 0,
            weights: LossWeights::default(),
        }
    }
}

impl EstimateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.restarts == 0 {
            return Err(Error::config("estimation needs at least one iteration and one restart"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::config("step_size must be positive"));
        }
        self.weights.validate()
    }
}

/// Borrowed, read-only view of a trained model plus the data conventions it
/// was trained under.
#[derive(Clone, Copy, Debug)]
pub struct FrozenGan<'a> {
    pub generator: &'a GeneratorNet,
    pub discriminator: &'a DiscriminatorNet,
    pub scaler: &'a Scaler,
    pub geometry: &'a Geometry,
}

impl<'a> FrozenGan<'a> {
    pub fn from_checkpoint(ck: &'a Checkpoint) -> Self {
        FrozenGan {
            generator: &ck.model.generator,
            discriminator: &ck.model.discriminator,
            scaler: &ck.scaler,
            geometry: &ck.geometry,
        }
    }

    fn n_steps_from(&self, y: &Matrix) -> usize {
        y.rows()
    }
}

fn check_same_shape(a: &Matrix, b: &Matrix, mask: &Mask) -> Result<()> {
    if a.shape() != b.shape() || a.shape() != mask.shape() {
        return Err(Error::shape(format!(
            "matrices {:?}, {:?} and mask {:?} must agree",
            a.shape(),
            b.shape(),
            mask.shape()
        )));
    }
    Ok(())
}

/// `‖M ⊙ gz − M ⊙ y‖₁`.
pub fn contextual_loss(gz: &Matrix, y: &Matrix, mask: &Mask) -> Result<f64> {
    check_same_shape(gz, y, mask)?;
    Ok(gz
        .as_slice()
        .iter()
        .zip(y.as_slice())
        .zip(mask.matrix().as_slice())
        .filter(|(_, &m)| m == 1.0)
        .map(|((g, v), _)| (g - v).abs())
        .sum())
}

/// `log(1 − D(gz))` with `D` clamped to `[ε, 1 − ε]`.
pub fn perceptual_loss(net_d: &DiscriminatorNet, gz: &Matrix) -> Result<f64> {
    let p = crate::gan::discriminate(net_d, gz)?;
    Ok((1.0 - p.clamp(PROB_EPS, 1.0 - PROB_EPS)).ln())
}

/// Mean squared conservation residual of a physical traffic matrix over all
/// `t = 1..n−1`, `s = 1..m`.
pub fn conservative_loss_physical(ts: &TrafficStateMatrix) -> Result<f64> {
    ts.geometry.validate()?;
    let r = crate::data::conservation_residuals(ts);
    let n = r.as_slice().len();
    Ok(r.as_slice().iter().map(|v| v * v).sum::<f64>() / n as f64)
}

/// Conservative loss of a normalized feature matrix, de-normalized with
/// `scaler` into flows (veh/h) and densities (veh/km).
pub fn conservative_loss(gz: &Matrix, scaler: &Scaler, geometry: &Geometry) -> Result<f64> {
    Ok(ConservationTerm::new(scaler, geometry, gz)?.loss_and_grad(gz, false).0)
}

/// Residual evaluation and its gradient with respect to normalized entries.
struct ConservationTerm<'a> {
    scaler: &'a Scaler,
    geometry: &'a Geometry,
}

impl<'a> ConservationTerm<'a> {
    fn new(scaler: &'a Scaler, geometry: &'a Geometry, gz: &Matrix) -> Result<Self> {
        geometry.validate()?;
        let width = geometry.feature_dim();
        if gz.cols() != width || scaler.width() != width {
            return Err(Error::shape(format!(
                "feature width {} / scaler width {} do not match {} cells",
                gz.cols(),
                scaler.width(),
                geometry.cells()
            )));
        }
        if gz.rows() < 2 {
            return Err(Error::shape("conservation needs at least two time steps"));
        }
        Ok(ConservationTerm { scaler, geometry })
    }

    fn loss_and_grad(&self, gz: &Matrix, want_grad: bool) -> (f64, Option<Matrix>) {
        let m = self.geometry.cells();
        let n = gz.rows();
        let cols = &self.scaler.columns;
        let phys = |t: usize, c: usize| cols[c].denormalize(gz[(t, c)]);
        let count = ((n - 1) * m) as f64;
        let mut loss = 0.0;
        let mut grad = want_grad.then(|| Matrix::zeros(n, gz.cols()));
        for t in 0..n - 1 {
            for s in 0..m {
                let ratio = self.geometry.dt / self.geometry.cell_lengths[s];
                let (k_now, k_next) = (m + 1 + s, m + 1 + s);
                let r = phys(t + 1, k_next) - phys(t, k_now) - ratio * (phys(t, s) - phys(t, s + 1));
                loss += r * r;
                if let Some(g) = grad.as_mut() {
                    let d = 2.0 * r / count;
                    g[(t + 1, k_next)] += d * cols[k_next].span();
                    g[(t, k_now)] -= d * cols[k_now].span();
                    g[(t, s)] -= d * ratio * cols[s].span();
                    g[(t, s + 1)] += d * ratio * cols[s + 1].span();
                }
            }
        }
        (loss / count, grad)
    }
}

/// The three loss components and their weighted total.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub contextual: f64,
    pub perceptual: f64,
    pub conservative: f64,
    pub total: f64,
}

/// Total loss at `z`. Components with zero weight are not evaluated and
/// reported as zero.
pub fn total_loss(
    z: &LatentSequence,
    model: &FrozenGan<'_>,
    y: &Matrix,
    mask: &Mask,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    Ok(total_loss_and_grad(z, model, y, mask, weights, false)?.0)
}

/// Total loss at `z` and its gradient `∂L/∂z`.
pub fn total_loss_grad(
    z: &LatentSequence,
    model: &FrozenGan<'_>,
    y: &Matrix,
    mask: &Mask,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Matrix)> {
    let (loss, grad) = total_loss_and_grad(z, model, y, mask, weights, true)?;
    Ok((loss, grad.expect("gradient requested")))
}

fn total_loss_and_grad(
    z: &LatentSequence,
    model: &FrozenGan<'_>,
    y: &Matrix,
    mask: &Mask,
    weights: &LossWeights,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Matrix>)> {
    weights.validate()?;
    let g_cache = model.generator.forward(z)?;
    let gz = &g_cache.output;
    check_same_shape(gz, y, mask)?;

    let mut dgz = Matrix::zeros(gz.rows(), gz.cols());
    let contextual = contextual_loss(gz, y, mask)?;
    for ((d, (&g, &v)), &m) in dgz
        .as_mut_slice()
        .iter_mut()
        .zip(gz.as_slice().iter().zip(y.as_slice()))
        .zip(mask.matrix().as_slice())
    {
        if m == 1.0 {
            *d = if g > v {
                1.0
            } else if g < v {
                -1.0
            } else {
                0.0
            };
        }
    }

    let mut perceptual = 0.0;
    if weights.lambda_p > 0.0 {
        let d_cache = model.discriminator.forward(gz)?;
        let p = d_cache.prob;
        perceptual = (1.0 - p.clamp(PROB_EPS, 1.0 - PROB_EPS)).ln();
        if want_grad {
            let dlogit = if (PROB_EPS..=1.0 - PROB_EPS).contains(&p) { -p } else { 0.0 };
            let (_, dx) = model.discriminator.backward(&d_cache, weights.lambda_p * dlogit)?;
            dgz.add_scaled(&dx, 1.0);
        }
    }

    let mut conservative = 0.0;
    if weights.lambda_c > 0.0 {
        let term = ConservationTerm::new(model.scaler, model.geometry, gz)?;
        let (loss, grad) = term.loss_and_grad(gz, want_grad);
        conservative = loss;
        if let Some(g) = grad {
            dgz.add_scaled(&g, weights.lambda_c);
        }
    }

    let total = contextual + weights.lambda_p * perceptual + weights.lambda_c * conservative;
    let breakdown = LossBreakdown {
        contextual,
        perceptual,
        conservative,
        total,
    };
    if !want_grad {
        return Ok((breakdown, None));
    }
    let (_, dz) = model.generator.backward(&g_cache, &dgz)?;
    Ok((breakdown, Some(dz)))
}

#[derive(Clone, Debug)]
pub struct EstimateResult {
    pub z_hat: LatentSequence,
    pub gz_hat: Matrix,
    /// Best-so-far total loss after each evaluation of the chosen restart;
    /// entry 0 is the initialization.
    pub loss_trace: Vec<f64>,
    pub loss: LossBreakdown,
    pub restart: usize,
}

/// Fits `z` by plain gradient descent from `config.restarts` seeded uniform
/// initializations and keeps the restart with the lowest loss.
pub fn estimate(model: &FrozenGan<'_>, y: &Matrix, mask: &Mask, config: &EstimateConfig) -> Result<EstimateResult> {
    config.validate()?;
    if y.shape() != mask.shape() {
        return Err(Error::shape("observation and mask differ in shape"));
    }
    if y.cols() != model.generator.feature_dim() {
        return Err(Error::shape(format!(
            "observation has {} columns, model produces {}",
            y.cols(),
            model.generator.feature_dim()
        )));
    }
    let n_steps = model.n_steps_from(y);
    let latent_dim = model.generator.latent_dim();

    let mut best: Option<EstimateResult> = None;
    for restart in 0..config.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(restart as u64);
        let mut z = LatentSequence::sample(n_steps, latent_dim, &mut rng);
        let mut best_z = z.clone();
        let mut best_loss: Option<LossBreakdown> = None;
        let mut trace = Vec::with_capacity(config.iterations + 1);

        for it in 0..=config.iterations {
            let last = it == config.iterations;
            let (loss, grad) = if last {
                (total_loss(&z, model, y, mask, &config.weights)?, None)
            } else {
                let (l, g) = total_loss_grad(&z, model, y, mask, &config.weights)?;
                (l, Some(g))
            };
            if !loss.total.is_finite() {
                return Err(Error::Divergence(format!(
                    "estimation loss is not finite at iteration {it} (restart {restart})"
                )));
            }
            if best_loss.is_none_or(|b| loss.total < b.total) {
                best_loss = Some(loss);
                best_z = z.clone();
            }
            trace.push(best_loss.expect("set above").total);
            if let Some(g) = grad {
                z.z.add_scaled(&g, -config.step_size);
            }
        }

        let loss = best_loss.expect("at least one evaluation");
        if best.as_ref().is_none_or(|b| loss.total < b.loss.total) {
            let gz_hat = model.generator.forward(&best_z)?.output;
            best = Some(EstimateResult {
                z_hat: best_z,
                gz_hat,
                loss_trace: trace,
                loss,
                restart,
            });
        }
    }
    Ok(best.expect("restarts >= 1"))
}

/// `M ⊙ y + (1 − M) ⊙ gz`, copying observed entries bit for bit.
pub fn reconstruct(y: &Matrix, mask: &Mask, gz_hat: &Matrix) -> Result<Matrix> {
    check_same_shape(y, gz_hat, mask)?;
    Ok(Matrix::from_fn(y.rows(), y.cols(), |r, c| {
        if mask.is_observed(r, c) {
            y[(r, c)]
        } else {
            gz_hat[(r, c)]
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ColumnRange;
    use crate::gan::{GanConfig, GanModel};
    use proptest::prelude::*;
    use rand::Rng;

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn contextual_examples() {
        let a = m(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(contextual_loss(&a, &a, &Mask::ones(2, 2)).unwrap(), 0.0);
        let b = m(&[vec![0.0, 2.0], vec![3.0, 0.0]]);
        assert_eq!(contextual_loss(&a, &b, &Mask::zeros(2, 2)).unwrap(), 0.0);
        let mask = Mask::new(m(&[vec![1.0, 1.0], vec![1.0, 0.0]])).unwrap();
        assert_eq!(contextual_loss(&a, &b, &mask).unwrap(), 1.0);
        assert!(contextual_loss(&a, &b, &Mask::ones(1, 2)).is_err());
    }

    #[test]
    fn mask_rejects_non_binary() {
        assert!(Mask::new(m(&[vec![1.0, 0.5]])).is_err());
    }

    #[test]
    fn perceptual_with_indifferent_discriminator() {
        let mut d = DiscriminatorNet::random(3, 2, &mut ChaCha8Rng::seed_from_u64(0));
        d.out_w = Matrix::zeros(1, 2);
        d.out_b = 0.0;
        let gz = Matrix::filled(4, 3, 0.9);
        assert_eq!(perceptual_loss(&d, &gz).unwrap(), 0.5f64.ln());
    }

    #[test]
    fn perceptual_is_decreasing_in_d() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = DiscriminatorNet::random(3, 4, &mut rng);
        let a = Matrix::from_fn(5, 3, |_, _| rng.random());
        let b = Matrix::from_fn(5, 3, |_, _| rng.random());
        let (pa, pb) = (d.forward(&a).unwrap().prob, d.forward(&b).unwrap().prob);
        let (la, lb) = (perceptual_loss(&d, &a).unwrap(), perceptual_loss(&d, &b).unwrap());
        assert_eq!(pa > pb, la < lb);
    }

    fn one_cell(k_next: f64) -> TrafficStateMatrix {
        TrafficStateMatrix::new(
            m(&[vec![1860.0, 1800.0], vec![1860.0, 1800.0]]),
            m(&[vec![10.0], vec![k_next]]),
            Geometry::uniform(1.0 / 12.0, 1, 0.5),
        )
        .unwrap()
    }

    #[test]
    fn single_cell_conservation_arithmetic() {
        assert!(conservative_loss_physical(&one_cell(20.0)).unwrap() < 1e-24);
        let l = conservative_loss_physical(&one_cell(21.0)).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalized_conservation_matches_physical() {
        let ts = one_cell(23.5);
        let scaler = Scaler {
            columns: vec![
                ColumnRange { min: 0.0, max: 2000.0 },
                ColumnRange { min: 0.0, max: 2000.0 },
                ColumnRange { min: 0.0, max: 150.0 },
            ],
        };
        let fs = crate::data::to_features(&ts, Some(&scaler)).unwrap();
        let l = conservative_loss(&fs.features, &scaler, &ts.geometry).unwrap();
        assert!((l - conservative_loss_physical(&ts).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn nonpositive_geometry_is_rejected() {
        let scaler = Scaler { columns: vec![ColumnRange { min: 0.0, max: 1.0 }; 3] };
        let gz = Matrix::filled(3, 3, 0.5);
        assert!(conservative_loss(&gz, &scaler, &Geometry::uniform(0.0, 1, 0.5)).is_err());
        assert!(conservative_loss(&gz, &scaler, &Geometry::uniform(0.1, 1, -0.5)).is_err());
    }

    #[test]
    fn reconstruct_examples() {
        let y = m(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let g = m(&[vec![9.0, 8.0], vec![7.0, 6.0]]);
        assert_eq!(reconstruct(&y, &Mask::ones(2, 2), &g).unwrap(), y);
        assert_eq!(reconstruct(&y, &Mask::zeros(2, 2), &g).unwrap(), g);
        let mask = Mask::new(m(&[vec![1.0, 0.0], vec![0.0, 1.0]])).unwrap();
        assert_eq!(reconstruct(&y, &mask, &g).unwrap(), m(&[vec![1.0, 8.0], vec![7.0, 4.0]]));
    }

    fn tiny_model() -> (GanModel, Scaler, Geometry) {
        let cfg = GanConfig {
            n_steps: 3,
            feature_dim: 5,
            hidden_size: 3,
            latent_dim: 2,
            seed: 5,
            ..GanConfig::default()
        };
        let model = GanModel::init(&cfg).unwrap();
        let scaler = Scaler {
            columns: vec![
                ColumnRange { min: 0.0, max: 2000.0 },
                ColumnRange { min: 100.0, max: 1900.0 },
                ColumnRange { min: 0.0, max: 2000.0 },
                ColumnRange { min: 0.0, max: 150.0 },
                ColumnRange { min: 5.0, max: 120.0 },
            ],
        };
        (model, scaler, Geometry::uniform(1.0 / 12.0, 2, 0.5))
    }

    #[test]
    fn zero_weights_reduce_to_contextual() {
        let (model, scaler, geometry) = tiny_model();
        let frozen = FrozenGan {
            generator: &model.generator,
            discriminator: &model.discriminator,
            scaler: &scaler,
            geometry: &geometry,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let z = LatentSequence::sample(3, 2, &mut rng);
            let y = Matrix::from_fn(3, 5, |_, _| rng.random());
            let mask = crate::data::CorruptionSpec::random_entries(0.3, rng.random()).mask(3, 5).unwrap();
            let zero = LossWeights { lambda_p: 0.0, lambda_c: 0.0 };
            let total = total_loss(&z, &frozen, &y, &mask, &zero).unwrap().total;
            let gz = model.generator.forward(&z).unwrap().output;
            assert_eq!(total, contextual_loss(&gz, &y, &mask).unwrap());

            let w = LossWeights::default();
            let full = total_loss(&z, &frozen, &y, &mask, &w).unwrap().total;
            let recomputed = contextual_loss(&gz, &y, &mask).unwrap()
                + w.lambda_p * perceptual_loss(&model.discriminator, &gz).unwrap()
                + w.lambda_c * conservative_loss(&gz, &scaler, &geometry).unwrap();
            assert!((full - recomputed).abs() < 1e-12);

            let no_c = LossWeights { lambda_c: 0.0, ..w };
            let expected = contextual_loss(&gz, &y, &mask).unwrap()
                + w.lambda_p * perceptual_loss(&model.discriminator, &gz).unwrap();
            assert!((total_loss(&z, &frozen, &y, &mask, &no_c).unwrap().total - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn best_so_far_trace_never_increases() {
        let (model, scaler, geometry) = tiny_model();
        let frozen = FrozenGan {
            generator: &model.generator,
            discriminator: &model.discriminator,
            scaler: &scaler,
            geometry: &geometry,
        };
        let y = Matrix::from_fn(3, 5, |r, c| 0.1 + 0.15 * ((r + c) % 5) as f64);
        let cfg = EstimateConfig { iterations: 60, restarts: 2, ..EstimateConfig::default() };
        let res = estimate(&frozen, &y, &Mask::ones(3, 5), &cfg).unwrap();
        assert_eq!(res.loss_trace.len(), 61);
        assert!(res.loss_trace.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*res.loss_trace.last().unwrap(), res.loss.total);
        assert_eq!(res.gz_hat, model.generator.forward(&res.z_hat).unwrap().output);
    }

    #[test]
    fn descent_matches_grid_search_on_two_dim_latent() {
        // One step, input gate and output gate stuck at 0.5, candidate reads
        // 0.5·z, so G(z) = sigmoid(W · 0.5·tanh(0.5·tanh(0.5·z))) in closed form.
        let w = [[4.0, 0.0], [0.0, 4.0], [2.0, 2.0]];
        let closed_form = |z: [f64; 2]| -> [f64; 3] {
            let h = z.map(|v| 0.5 * (0.5 * (0.5 * v).tanh()).tanh());
            w.map(|row| 1.0 / (1.0 + (-(row[0] * h[0] + row[1] * h[1])).exp()))
        };
        let mut model = GanModel::init(&GanConfig {
            n_steps: 1,
            feature_dim: 3,
            hidden_size: 2,
            latent_dim: 2,
            ..GanConfig::default()
        })
        .unwrap();
        let mut lstm = crate::lstm::LstmParams::zeros(2, 2);
        lstm.w_cx = m(&[vec![0.5, 0.0], vec![0.0, 0.5]]);
        model.generator.lstm = lstm;
        model.generator.out_w = m(&w.map(|r| r.to_vec()));
        model.generator.out_b = vec![0.0; 3];
        let scaler = Scaler { columns: vec![ColumnRange { min: 0.0, max: 1.0 }; 3] };
        let geometry = Geometry::uniform(1.0 / 12.0, 1, 0.5);
        let frozen = FrozenGan {
            generator: &model.generator,
            discriminator: &model.discriminator,
            scaler: &scaler,
            geometry: &geometry,
        };

        let anchor = closed_form([0.7, -0.5]);
        let y = m(&[vec![anchor[0], anchor[1], anchor[2] + 0.01]]);
        let l1 = |z: [f64; 2]| closed_form(z).iter().zip(y.row(0)).map(|(g, y)| (g - y).abs()).sum::<f64>();

        let (mut grid_z, mut grid_loss) = ([0.0; 2], f64::INFINITY);
        for a in -300..=300 {
            for b in -300..=300 {
                let z = [a as f64 * 0.01, b as f64 * 0.01];
                let l = l1(z);
                if l < grid_loss {
                    (grid_z, grid_loss) = (z, l);
                }
            }
        }

        let cfg = EstimateConfig {
            iterations: 3000,
            step_size: 0.01,
            restarts: 2,
            weights: LossWeights { lambda_p: 0.0, lambda_c: 0.0 },
            ..EstimateConfig::default()
        };
        let res = estimate(&frozen, &y, &Mask::ones(1, 3), &cfg).unwrap();
        let z_hat = [res.z_hat.z[(0, 0)], res.z_hat.z[(0, 1)]];
        assert!((res.loss.total - l1(z_hat)).abs() < 1e-12);
        assert!(res.loss.total <= grid_loss + 1e-3, "{} vs grid {}", res.loss.total, grid_loss);
        assert!((z_hat[0] - grid_z[0]).abs() < 0.05 && (z_hat[1] - grid_z[1]).abs() < 0.05, "{z_hat:?} vs {grid_z:?}");
    }

    proptest! {
        #[test]
        fn observed_entries_pass_through(
            y in prop::collection::vec(-1e6f64..1e6, 12),
            g in prop::collection::vec(-1e6f64..1e6, 12),
            bits in prop::collection::vec(any::<bool>(), 12),
        ) {
            let y = Matrix::from_vec(3, 4, y).unwrap();
            let g = Matrix::from_vec(3, 4, g).unwrap();
            let mask = Mask::new(Matrix::from_vec(3, 4, bits.iter().map(|&b| b as u8 as f64).collect()).unwrap()).unwrap();
            let out = reconstruct(&y, &mask, &g).unwrap();
            for i in 0..12 {
                if bits[i] {
                    prop_assert_eq!(out.as_slice()[i].to_bits(), y.as_slice()[i].to_bits());
                } else {
                    prop_assert_eq!(out.as_slice()[i].to_bits(), g.as_slice()[i].to_bits());
                }
            }
        }

        #[test]
        fn context_ignores_missing_entries(
            y in prop::collection::vec(0.0f64..1.0, 12),
            g in prop::collection::vec(0.0f64..1.0, 12),
            noise in prop::collection::vec(-5.0f64..5.0, 12),
            bits in prop::collection::vec(any::<bool>(), 12),
        ) {
            let mask = Mask::new(Matrix::from_vec(3, 4, bits.iter().map(|&b| b as u8 as f64).collect()).unwrap()).unwrap();
            let y1 = Matrix::from_vec(3, 4, y.clone()).unwrap();
            let y2 = Matrix::from_vec(3, 4, y.iter().zip(&noise).zip(&bits).map(|((v, n), &b)| if b { *v } else { v + n }).collect()).unwrap();
            let g = Matrix::from_vec(3, 4, g).unwrap();
            prop_assert_eq!(contextual_loss(&g, &y1, &mask).unwrap(), contextual_loss(&g, &y2, &mask).unwrap());
        }
    }
}
