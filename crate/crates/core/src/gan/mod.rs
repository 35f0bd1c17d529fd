//! Discriminator and generator LSTM networks and their adversarial training.

mod checkpoint;
pub(crate) mod nets;
pub(crate) mod train;

pub use checkpoint::{Checkpoint, Encoding, CHECKPOINT_FORMAT_VERSION};
pub use nets::{
    discriminate, generate, gan_loss_terms, DiscriminatorCache, DiscriminatorNet, GanConfig,
    GanModel, GeneratorCache, GeneratorNet, LatentSequence, PROB_EPS,
};
pub use train::{d_accuracy, train, EpochStats};
