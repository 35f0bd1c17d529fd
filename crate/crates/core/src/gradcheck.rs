//! Central finite-difference verification of every hand-written gradient:
//! the twelve LSTM parameter families and the input channel, the
//! discriminator loss, the generator loss through a frozen discriminator,
//! and the latent gradient used during estimation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{ColumnRange, CorruptionSpec, Geometry, Scaler};
use crate::error::{Error, Result};
use crate::estimation::{total_loss, total_loss_grad, FrozenGan, LossWeights, Mask};
use crate::gan::{DiscriminatorNet, GeneratorNet, LatentSequence};
use crate::lstm::{lstm_backward, lstm_forward, LstmParams, LstmState};
use crate::params::Params;
use crate::tensor::{dot, Matrix};

/// Denominator floor of [`relative_error`], so entries whose true gradient
/// vanishes are judged on absolute error instead.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Central differences of `f` with respect to every parameter of `p`,
/// grouped like [`Params::tensors`].
fn numeric_param_grads<P: Params + Clone>(p: &P, eps: f64, f: impl Fn(&P) -> Result<f64>) -> Result<Vec<Vec<f64>>> {
    let mut work = p.clone();
    let sizes: Vec<usize> = p.tensors().iter().map(|t| t.data.len()).collect();
    let mut out = Vec::with_capacity(sizes.len());
    for (family, &len) in sizes.iter().enumerate() {
        let mut g = vec![0.0; len];
        for (k, gk) in g.iter_mut().enumerate() {
            let orig = work.tensors_mut()[family][k];
            work.tensors_mut()[family][k] = orig + eps;
            let plus = f(&work)?;
            work.tensors_mut()[family][k] = orig - eps;
            let minus = f(&work)?;
            work.tensors_mut()[family][k] = orig;
            *gk = (plus - minus) / (2.0 * eps);
        }
        out.push(g);
    }
    Ok(out)
}

fn numeric_matrix_grad(x: &Matrix, eps: f64, f: impl Fn(&Matrix) -> Result<f64>) -> Result<Matrix> {
    let mut work = x.clone();
    let mut g = Matrix::zeros(x.rows(), x.cols());
    for k in 0..x.as_slice().len() {
        let orig = work.as_slice()[k];
        work.as_mut_slice()[k] = orig + eps;
        let plus = f(&work)?;
        work.as_mut_slice()[k] = orig - eps;
        let minus = f(&work)?;
        work.as_mut_slice()[k] = orig;
        g.as_mut_slice()[k] = (plus - minus) / (2.0 * eps);
    }
    Ok(g)
}

fn per_family<P: Params>(prefix: &str, analytic: &P, numeric: &[Vec<f64>]) -> Vec<(String, f64)> {
    analytic
        .tensors()
        .iter()
        .zip(numeric)
        .map(|(t, n)| (format!("{prefix}{}", t.name), max_relative_error(t.data, n)))
        .collect()
}

/// One LSTM instance with the scalar loss `E = Σ_t ⟨weights_t, h_t⟩`.
#[derive(Clone, Debug)]
pub struct LstmCase {
    pub params: LstmParams,
    pub inputs: Matrix,
    pub initial: LstmState,
    pub weights: Matrix,
}

impl LstmCase {
    pub fn random<R: Rng + ?Sized>(hidden: usize, input: usize, steps: usize, rng: &mut R) -> Self {
        let mut params = LstmParams::random(hidden, input, rng);
        // Widen the default init so the gates are not all near 0.5.
        for t in params.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= 2.0);
        }
        let inputs = Matrix::from_fn(steps, input, |_, _| rng.random_range(-1.0..1.0));
        let initial = LstmState {
            h: (0..hidden).map(|_| rng.random_range(-0.5..0.5)).collect(),
            c: (0..hidden).map(|_| rng.random_range(-0.5..0.5)).collect(),
        };
        let weights = Matrix::from_fn(steps, hidden, |_, _| rng.random_range(-1.0..1.0));
        LstmCase {
            params,
            inputs,
            initial,
            weights,
        }
    }

    fn loss(&self, params: &LstmParams, inputs: &Matrix) -> Result<f64> {
        let (h, _) = lstm_forward(params, inputs, &self.initial)?;
        Ok(dot(h.as_slice(), self.weights.as_slice()))
    }

    /// Max relative error per parameter family plus `dx`.
    pub fn errors(&self, eps: f64) -> Result<Vec<(String, f64)>> {
        self.errors_with(eps, false)
    }

    fn errors_with(&self, eps: f64, corrupt: bool) -> Result<Vec<(String, f64)>> {
        let (_, cache) = lstm_forward(&self.params, &self.inputs, &self.initial)?;
        let (mut grads, dx) = lstm_backward(&self.params, &cache, &self.weights)?;
        if corrupt {
            let g = &mut grads.0.w_oh.as_mut_slice()[0];
            *g += 1e-2 * (1.0 + g.abs());
        }
        let numeric = numeric_param_grads(&self.params, eps, |p| self.loss(p, &self.inputs))?;
        let mut out = per_family("", &grads.into_inner(), &numeric);
        let ndx = numeric_matrix_grad(&self.inputs, eps, |x| self.loss(&self.params, x))?;
        out.push(("dx".into(), max_relative_error(dx.as_slice(), ndx.as_slice())));
        Ok(out)
    }
}

/// A tiny generator/discriminator pair plus an estimation problem.
#[derive(Clone, Debug)]
pub struct ComposedCase {
    pub generator: GeneratorNet,
    pub discriminator: DiscriminatorNet,
    pub latents: Vec<LatentSequence>,
    pub real: Matrix,
    pub scaler: Scaler,
    pub geometry: Geometry,
    pub observed: Matrix,
    pub mask: Mask,
    pub weights: LossWeights,
}

impl ComposedCase {
    /// `cells` road cells give `2·cells + 1` features.
    pub fn random<R: Rng + ?Sized>(hidden: usize, latent: usize, steps: usize, cells: usize, rng: &mut R) -> Result<Self> {
        let features = 2 * cells + 1;
        let generator = GeneratorNet::random(latent, hidden, features, rng);
        let discriminator = DiscriminatorNet::random(features, hidden, rng);
        let latents = (0..2).map(|_| LatentSequence::sample(steps, latent, rng)).collect();
        let real = Matrix::from_fn(steps, features, |_, _| rng.random());
        let columns = (0..features)
            .map(|c| {
                let top = if c <= cells { 2000.0 } else { 150.0 };
                let min = rng.random_range(0.0..0.1 * top);
                ColumnRange {
                    min,
                    max: min + rng.random_range(0.5..0.9) * top,
                }
            })
            .collect();
        let geometry = Geometry {
            dt: 1.0 / 12.0,
            cell_lengths: (0..cells).map(|_| rng.random_range(0.3..1.0)).collect(),
        };
        let observed = Matrix::from_fn(steps, features, |_, _| rng.random());
        let mask = CorruptionSpec::random_entries(0.3, rng.random()).mask(steps, features)?;
        Ok(ComposedCase {
            generator,
            discriminator,
            latents,
            real,
            scaler: Scaler { columns },
            geometry,
            observed,
            mask,
            weights: LossWeights::default(),
        })
    }

    fn frozen(&self) -> FrozenGan<'_> {
        FrozenGan {
            generator: &self.generator,
            discriminator: &self.discriminator,
            scaler: &self.scaler,
            geometry: &self.geometry,
        }
    }

    /// Generator loss `mean log(1 − D(G(z)))` with respect to every
    /// generator parameter.
    pub fn generator_error(&self, eps: f64) -> Result<f64> {
        let (_, grads) = crate::gan::train::generator_loss_and_gradient(&self.generator, &self.discriminator, &self.latents, false)?;
        let numeric = numeric_param_grads(&self.generator, eps, |g| {
            Ok(crate::gan::train::generator_loss_and_gradient(g, &self.discriminator, &self.latents, false)?.0)
        })?;
        Ok(per_family("", &grads, &numeric).into_iter().map(|(_, e)| e).fold(0.0, f64::max))
    }

    /// Discriminator objective `log D(real) + log(1 − D(G(z₀)))` with
    /// respect to every discriminator parameter.
    pub fn discriminator_error(&self, eps: f64) -> Result<f64> {
        let fake = self.generator.forward(&self.latents[0])?.output;
        let objective = |d: &DiscriminatorNet| -> Result<f64> {
            let (d_loss, _) = crate::gan::gan_loss_terms(d, &self.real, &fake)?;
            Ok(-d_loss)
        };
        let real_cache = self.discriminator.forward(&self.real)?;
        let fake_cache = self.discriminator.forward(&fake)?;
        let (mut grads, _) = self
            .discriminator
            .backward(&real_cache, crate::gan::nets::dlog_p_dlogit(real_cache.prob))?;
        let (g_fake, _) = self
            .discriminator
            .backward(&fake_cache, crate::gan::nets::dlog_1mp_dlogit(fake_cache.prob))?;
        crate::params::accumulate(&mut grads, &g_fake);
        let numeric = numeric_param_grads(&self.discriminator, eps, objective)?;
        Ok(per_family("", &grads, &numeric).into_iter().map(|(_, e)| e).fold(0.0, f64::max))
    }

    /// Estimation loss with respect to the latent sequence.
    pub fn latent_error(&self, eps: f64) -> Result<f64> {
        let model = self.frozen();
        let z0 = &self.latents[0];
        let (_, grad) = total_loss_grad(z0, &model, &self.observed, &self.mask, &self.weights)?;
        let numeric = numeric_matrix_grad(&z0.z, eps, |z| {
            let z = LatentSequence { z: z.clone() };
            Ok(total_loss(&z, &model, &self.observed, &self.mask, &self.weights)?.total)
        })?;
        Ok(max_relative_error(grad.as_slice(), numeric.as_slice()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub hidden_sizes: Vec<usize>,
    pub input_sizes: Vec<usize>,
    pub steps: Vec<usize>,
    /// LSTM instances per (hidden, input, steps) combination.
    pub repeats: usize,
    /// Generator/discriminator/latent instances.
    pub composed_instances: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub tolerance: f64,
    /// Test hook: perturb one analytic LSTM gradient entry.
    pub corrupt_gradient: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            hidden_sizes: vec![1, 2, 4, 8],
            input_sizes: vec![1, 3],
            steps: vec![1, 2, 5, 10],
            repeats: 4,
            composed_instances: 20,
            seed: 0,
            epsilon: 1e-5,
            tolerance: 1e-4,
            corrupt_gradient: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComponentError {
    pub component: String,
    pub max_relative_error: f64,
    pub instances: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub components: Vec<ComponentError>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.components
            .iter()
            .all(|c| c.max_relative_error < self.tolerance)
    }

    pub fn worst(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.max_relative_error)
            .fold(0.0, f64::max)
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.components {
            let verdict = if c.max_relative_error < self.tolerance { "ok" } else { "FAIL" };
            writeln!(
                f,
                "{:<32} {:>12.3e}  ({} instances)  {verdict}",
                c.component, c.max_relative_error, c.instances
            )?;
        }
        Ok(())
    }
}

fn merge(rows: &mut Vec<ComponentError>, name: String, err: f64) {
    match rows.iter_mut().find(|r| r.component == name) {
        Some(r) => {
            r.max_relative_error = r.max_relative_error.max(err);
            r.instances += 1;
        }
        None => rows.push(ComponentError {
            component: name,
            max_relative_error: err,
            instances: 1,
        }),
    }
}

pub fn run_gradcheck(config: &GradCheckConfig) -> Result<GradCheckReport> {
    if !(config.epsilon > 0.0) || config.hidden_sizes.contains(&0) || config.input_sizes.contains(&0) || config.steps.contains(&0) {
        return Err(Error::config("gradcheck dimensions and epsilon must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rows = Vec::new();
    for &h in &config.hidden_sizes {
        for &x in &config.input_sizes {
            for &n in &config.steps {
                for _ in 0..config.repeats {
                    let case = LstmCase::random(h, x, n, &mut rng);
                    for (name, e) in case.errors_with(config.epsilon, config.corrupt_gradient)? {
                        merge(&mut rows, format!("lstm.{name}"), e);
                    }
                }
            }
        }
    }
    for _ in 0..config.composed_instances {
        let case = ComposedCase::random(2, 2, 3, 2, &mut rng)?;
        merge(&mut rows, "discriminator.params".into(), case.discriminator_error(config.epsilon)?);
        merge(&mut rows, "generator.params_through_d".into(), case.generator_error(config.epsilon)?);
        merge(&mut rows, "estimation.latent".into(), case.latent_error(config.epsilon)?);
    }
    Ok(GradCheckReport {
        tolerance: config.tolerance,
        components: rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_examples() {
        assert_eq!(relative_error(2.0, 2.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert_eq!(relative_error(0.0, 1e-9), 1e-3);
    }

    #[test]
    fn lstm_hidden4_input3_five_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let case = LstmCase::random(4, 3, 5, &mut rng);
            let errs = case.errors(1e-5).unwrap();
            assert_eq!(errs.len(), 13);
            for (name, e) in errs {
                assert!(e < 1e-6, "{name}: {e}");
            }
        }
    }

    #[test]
    fn composed_gradients_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let case = ComposedCase::random(2, 2, 3, 1, &mut rng).unwrap();
            assert!(case.generator_error(1e-5).unwrap() < 1e-4);
            assert!(case.discriminator_error(1e-5).unwrap() < 1e-4);
            assert!(case.latent_error(1e-5).unwrap() < 1e-4);
        }
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let cfg = GradCheckConfig {
            hidden_sizes: vec![2],
            input_sizes: vec![1],
            steps: vec![2],
            repeats: 1,
            composed_instances: 1,
            corrupt_gradient: true,
            ..GradCheckConfig::default()
        };
        let report = run_gradcheck(&cfg).unwrap();
        assert!(!report.passed());
        let clean = run_gradcheck(&GradCheckConfig { corrupt_gradient: false, ..cfg }).unwrap();
        assert!(clean.passed(), "{clean}");
    }

    #[test]
    fn report_names_all_twelve_families() {
        let cfg = GradCheckConfig {
            hidden_sizes: vec![1],
            input_sizes: vec![1],
            steps: vec![1],
            repeats: 1,
            composed_instances: 0,
            ..GradCheckConfig::default()
        };
        let report = run_gradcheck(&cfg).unwrap();
        for fam in ["w_oh", "w_fh", "w_ih", "w_ch", "b_o", "b_i", "b_f", "b_c", "w_ox", "w_fx", "w_ix", "w_cx"] {
            assert!(report.components.iter().any(|c| c.component == format!("lstm.{fam}")), "{fam}");
        }
    }
}
