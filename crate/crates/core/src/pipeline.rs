//! Glue between a simulated corpus and a trained checkpoint.

use crate::data::corpus::{Corpus, Split};
use crate::data::{to_features, Scaler};
use crate::error::{Error, Result};
use crate::gan::{train, Checkpoint, EpochStats, GanConfig, GanModel};
use crate::tensor::Matrix;

/// Normalized training and validation feature matrices of `corpus`.
pub fn corpus_features(corpus: &Corpus, scaler: &Scaler) -> Result<(Vec<Matrix>, Vec<Matrix>)> {
    let encode = |split| {
        corpus
            .split(split)
            .map(|r| Ok(to_features(&r.matrix, Some(scaler))?.features))
            .collect::<Result<Vec<_>>>()
    };
    Ok((encode(Split::Train)?, encode(Split::Validation)?))
}

/// Trains a fresh model on the training split, or continues `resume` for
/// `config.epochs` more epochs. The scaler is fitted on the training split
/// of a fresh run and reused unchanged when resuming.
pub fn train_on_corpus(
    corpus: &Corpus,
    config: &GanConfig,
    resume: Option<Checkpoint>,
) -> Result<(Checkpoint, Vec<EpochStats>)> {
    let train_set = corpus.train_matrices();
    if train_set.is_empty() {
        return Err(Error::NoTrainingData);
    }
    let geometry = train_set[0].geometry.clone();
    if geometry.feature_dim() != config.feature_dim || train_set[0].steps() != config.n_steps {
        return Err(Error::config(format!(
            "corpus records are {}×{} features but gan config expects {}×{}",
            train_set[0].steps(),
            geometry.feature_dim(),
            config.n_steps,
            config.feature_dim
        )));
    }
    let (model, scaler) = match resume {
        Some(ck) => {
            if ck.geometry != geometry {
                return Err(Error::Checkpoint("checkpoint geometry differs from the corpus".into()));
            }
            if ck.config.hidden_size != config.hidden_size || ck.config.latent_dim != config.latent_dim {
                return Err(Error::Checkpoint("checkpoint network sizes differ from the config".into()));
            }
            (ck.model, ck.scaler)
        }
        None => (GanModel::init(config)?, Scaler::fit(train_set.iter().copied())?),
    };
    let (train_x, holdout) = corpus_features(corpus, &scaler)?;
    let (model, history) = train(model, &train_x, &holdout, config)?;
    Ok((
        Checkpoint {
            config: config.clone(),
            model,
            scaler,
            geometry,
        },
        history,
    ))
}
