//! Simultaneous minibatch SGD of the two networks.
//!
//! Each iteration takes `d_steps_per_g_step` ascent steps of the
//! discriminator on `log D(x) + log(1 − D(G(z)))`, each on a fresh real
//! minibatch, then one descent step of the generator on `log(1 − D(G(z)))`
//! (or `−log D(G(z))` when `non_saturating` is set) with the discriminator
//! frozen. Per-sample gradients are summed in minibatch order.
//!
//! Every epoch draws from its own ChaCha stream, so training `a` epochs and
//! then resuming for `b` more reproduces a single run of `a + b` epochs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nets::{clamp_prob, dlog_1mp_dlogit, dlog_p_dlogit};
use super::{DiscriminatorNet, GanConfig, GanModel, GeneratorNet, LatentSequence};
use crate::error::{Error, Result};
use crate::params::{self, Direction};
use crate::tensor::Matrix;

/// Upper bound on the number of held-out matrices scored per epoch.
const ACCURACY_SAMPLES: usize = 256;
const ACCURACY_STREAM: u64 = 1 << 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub d_accuracy: f64,
}

fn epoch_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trains for `config.epochs` further epochs. `holdout` matrices are used
/// only to report the discriminator's real-vs-fake accuracy; when empty the
/// training matrices are scored instead.
pub fn train(
    mut model: GanModel,
    dataset: &[Matrix],
    holdout: &[Matrix],
    config: &GanConfig,
) -> Result<(GanModel, Vec<EpochStats>)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::NoTrainingData);
    }
    for (i, m) in dataset.iter().chain(holdout).enumerate() {
        m.ensure_shape(config.n_steps, config.feature_dim, &format!("training matrix {i}"))?;
        if m.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::config(format!("training matrix {i} is not normalized to [0, 1]")));
        }
    }
    if model.generator.latent_dim() != config.latent_dim
        || model.generator.feature_dim() != config.feature_dim
        || model.discriminator.feature_dim() != config.feature_dim
    {
        return Err(Error::shape("model does not match the training configuration"));
    }

    let scored = if holdout.is_empty() { dataset } else { holdout };
    let mut history = Vec::with_capacity(config.epochs);
    let first = model.epochs_completed;
    for epoch in first + 1..=first + config.epochs {
        let mut rng = epoch_rng(config.seed, epoch as u64);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);

        let diverged = |what: &str, e: Option<Error>| {
            Error::Divergence(match e {
                Some(e) => format!("epoch {epoch}: {what}: {e}"),
                None => format!("epoch {epoch}: non-finite {what}"),
            })
        };

        let (mut d_sum, mut d_count, mut g_sum, mut g_count) = (0.0, 0usize, 0.0, 0usize);
        for (step, batch) in order.chunks(config.minibatch_size).enumerate() {
            let real: Vec<&Matrix> = batch.iter().map(|&i| &dataset[i]).collect();
            let (d_loss, mut d_grads) = discriminator_gradient(&model, &real, config, &mut rng)?;
            if !d_loss.is_finite() {
                return Err(diverged("discriminator loss", None));
            }
            params::clip_elementwise(&mut d_grads, config.grad_clip);
            params::sgd_step(&mut model.discriminator, &d_grads, config.lr_d, Direction::Ascend)
                .map_err(|e| diverged("discriminator update", Some(e)))?;
            d_sum += d_loss;
            d_count += 1;

            if (step + 1) % config.d_steps_per_g_step == 0 {
                let (g_loss, mut g_grads) = generator_gradient(&model, batch.len(), config, &mut rng)?;
                if !g_loss.is_finite() {
                    return Err(diverged("generator loss", None));
                }
                params::clip_elementwise(&mut g_grads, config.grad_clip);
                params::sgd_step(&mut model.generator, &g_grads, config.lr_g, Direction::Descend)
                    .map_err(|e| diverged("generator update", Some(e)))?;
                g_sum += g_loss;
                g_count += 1;
            }
        }

        let mut eval_rng = epoch_rng(config.seed, ACCURACY_STREAM + epoch as u64);
        let d_accuracy = d_accuracy(&model, &scored[..scored.len().min(ACCURACY_SAMPLES)], config, &mut eval_rng)?;
        model.epochs_completed = epoch;
        history.push(EpochStats {
            epoch,
            d_loss: d_sum / d_count as f64,
            g_loss: if g_count > 0 { g_sum / g_count as f64 } else { f64::NAN },
            d_accuracy,
        });
    }
    Ok((model, history))
}

/// Fraction of correct calls when the discriminator scores every matrix in
/// `real` and as many fresh generator samples, thresholding at 0.5.
pub fn d_accuracy(
    model: &GanModel,
    real: &[Matrix],
    config: &GanConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if real.is_empty() {
        return Err(Error::EmptyEvaluation("no real matrices to score".into()));
    }
    let mut correct = 0usize;
    for x in real {
        if model.discriminator.forward(x)?.prob >= 0.5 {
            correct += 1;
        }
        let z = LatentSequence::sample(config.n_steps, config.latent_dim, rng);
        let fake = model.generator.forward(&z)?.output;
        if model.discriminator.forward(&fake)?.prob < 0.5 {
            correct += 1;
        }
    }
    Ok(correct as f64 / (2 * real.len()) as f64)
}

/// Minibatch-mean `d_loss` and the gradient of `−d_loss` (the quantity the
/// discriminator ascends).
pub(crate) fn discriminator_gradient(
    model: &GanModel,
    real: &[&Matrix],
    config: &GanConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, DiscriminatorNet)> {
    let d = &model.discriminator;
    let mut grads = DiscriminatorNet::zeros(d.feature_dim(), d.lstm.hidden_size);
    let mut loss = 0.0;
    let scale = 1.0 / real.len() as f64;
    for x in real {
        let z = LatentSequence::sample(config.n_steps, config.latent_dim, rng);
        let fake = model.generator.forward(&z)?.output;

        let cache = d.forward(x)?;
        loss -= clamp_prob(cache.prob).ln();
        let (g, _) = d.backward(&cache, scale * dlog_p_dlogit(cache.prob))?;
        params::accumulate(&mut grads, &g);

        let cache = d.forward(&fake)?;
        loss -= (1.0 - clamp_prob(cache.prob)).ln();
        let (g, _) = d.backward(&cache, scale * dlog_1mp_dlogit(cache.prob))?;
        params::accumulate(&mut grads, &g);
    }
    Ok((loss * scale, grads))
}

/// Minibatch-mean generator loss and its gradient with respect to the
/// generator parameters, backpropagated through the frozen discriminator.
pub(crate) fn generator_gradient(
    model: &GanModel,
    batch: usize,
    config: &GanConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, GeneratorNet)> {
    let latents: Vec<LatentSequence> = (0..batch)
        .map(|_| LatentSequence::sample(config.n_steps, config.latent_dim, rng))
        .collect();
    generator_loss_and_gradient(&model.generator, &model.discriminator, &latents, config.non_saturating)
}

pub(crate) fn generator_loss_and_gradient(
    generator: &GeneratorNet,
    discriminator: &DiscriminatorNet,
    latents: &[LatentSequence],
    non_saturating: bool,
) -> Result<(f64, GeneratorNet)> {
    let mut grads = GeneratorNet::zeros(generator.latent_dim(), generator.lstm.hidden_size, generator.feature_dim());
    let mut loss = 0.0;
    let scale = 1.0 / latents.len() as f64;
    for z in latents {
        let g_cache = generator.forward(z)?;
        let d_cache = discriminator.forward(&g_cache.output)?;
        let p = d_cache.prob;
        let dlogit = if non_saturating {
            loss -= clamp_prob(p).ln();
            -dlog_p_dlogit(p)
        } else {
            loss += (1.0 - clamp_prob(p)).ln();
            dlog_1mp_dlogit(p)
        };
        let (_, dx) = discriminator.backward(&d_cache, scale * dlogit)?;
        let (g, _) = generator.backward(&g_cache, &dx)?;
        params::accumulate(&mut grads, &g);
    }
    Ok((loss * scale, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::gan_loss_terms;
    use crate::params::Params;
    use rand::Rng;

    fn tiny_config() -> GanConfig {
        GanConfig {
            n_steps: 3,
            feature_dim: 4,
            hidden_size: 3,
            latent_dim: 2,
            minibatch_size: 4,
            epochs: 2,
            seed: 11,
            ..GanConfig::default()
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let cfg = tiny_config();
        let model = GanModel::init(&cfg).unwrap();
        assert!(matches!(train(model, &[], &[], &cfg), Err(Error::NoTrainingData)));
    }

    #[test]
    fn unnormalized_data_is_rejected() {
        let cfg = tiny_config();
        let model = GanModel::init(&cfg).unwrap();
        let bad = vec![Matrix::filled(3, 4, 1.5)];
        assert!(train(model, &bad, &[], &cfg).is_err());
    }

    #[test]
    fn training_is_bit_reproducible_and_resumable() {
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let data: Vec<Matrix> = (0..10).map(|_| Matrix::from_fn(3, 4, |_, _| rng.random())).collect();

        let (a, ha) = train(GanModel::init(&cfg).unwrap(), &data, &[], &GanConfig { epochs: 4, ..cfg.clone() }).unwrap();
        let (b, hb) = train(GanModel::init(&cfg).unwrap(), &data, &[], &GanConfig { epochs: 4, ..cfg.clone() }).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);

        let (half, h1) = train(GanModel::init(&cfg).unwrap(), &data, &[], &cfg).unwrap();
        let (resumed, h2) = train(half, &data, &[], &cfg).unwrap();
        assert_eq!(resumed, a);
        assert_eq!(h2[0].epoch, 3);
        assert_eq!([h1, h2].concat(), ha);
    }

    #[test]
    fn small_discriminator_step_decreases_its_loss() {
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..20 {
            let model = GanModel::init(&GanConfig { seed: trial, ..cfg.clone() }).unwrap();
            let real: Vec<Matrix> = (0..4).map(|_| Matrix::from_fn(3, 4, |_, _| rng.random())).collect();
            let fakes: Vec<Matrix> = (0..4)
                .map(|_| model.generator.forward(&LatentSequence::sample(3, 2, &mut rng)).unwrap().output)
                .collect();
            let batch_loss = |d: &DiscriminatorNet| -> f64 {
                real.iter()
                    .zip(&fakes)
                    .map(|(r, f)| gan_loss_terms(d, r, f).unwrap().0)
                    .sum::<f64>()
                    / 4.0
            };
            // Gradient of the fixed-minibatch objective.
            let mut grads = DiscriminatorNet::zeros(4, 3);
            for (r, f) in real.iter().zip(&fakes) {
                let c = model.discriminator.forward(r).unwrap();
                let (g, _) = model.discriminator.backward(&c, 0.25 * dlog_p_dlogit(c.prob)).unwrap();
                params::accumulate(&mut grads, &g);
                let c = model.discriminator.forward(f).unwrap();
                let (g, _) = model.discriminator.backward(&c, 0.25 * dlog_1mp_dlogit(c.prob)).unwrap();
                params::accumulate(&mut grads, &g);
            }
            let before = batch_loss(&model.discriminator);
            let mut d = model.discriminator.clone();
            params::sgd_step(&mut d, &grads, 1e-3, Direction::Ascend).unwrap();
            assert!(batch_loss(&d) < before, "trial {trial}");
        }
    }

    #[test]
    fn history_has_one_row_per_epoch() {
        let cfg = GanConfig { epochs: 3, ..tiny_config() };
        let data = vec![Matrix::filled(3, 4, 0.3); 5];
        let (model, history) = train(GanModel::init(&cfg).unwrap(), &data, &[], &cfg).unwrap();
        assert_eq!(history.len(), 3);
        assert_eq!(model.epochs_completed, 3);
        assert!(history.iter().all(|h| (0.0..=1.0).contains(&h.d_accuracy)));
        assert!(model.generator.is_finite());
    }

    #[test]
    fn generator_memorizes_a_single_constant_matrix() {
        // With one real sample the generator only learns as fast as the
        // discriminator can tell it apart, so D gets the larger step.
        let target = Matrix::filled(3, 4, 0.3);
        for seed in [3, 5, 11] {
            let cfg = GanConfig { epochs: 200, minibatch_size: 1, lr_d: 2.0, lr_g: 0.5, seed, ..tiny_config() };
            let (model, _) = train(GanModel::init(&cfg).unwrap(), std::slice::from_ref(&target), &[], &cfg).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            for _ in 0..20 {
                let out = model.generator.forward(&LatentSequence::sample(3, 2, &mut rng)).unwrap().output;
                let per_entry = out.as_slice().iter().map(|v| (v - 0.3).abs()).sum::<f64>() / 12.0;
                assert!(per_entry <= 0.05, "seed {seed}: mean L1 per entry {per_entry}");
            }
        }
    }
}
