//! Helpers shared by the unit tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{bias_name, BackboneConfig};
use crate::optim::ParameterStore;

/// Nudge all backbone biases off exact zero. Zero-initialized biases put
/// relu kinks exactly on the finite-difference probe points whenever a
/// hidden layer goes dead, which is a property of relu rather than a
/// gradient bug; generic fixtures avoid the straddle.
pub(crate) fn jitter_biases(
    store: &ParameterStore<f64>,
    cfg: &BackboneConfig,
    rng: &mut ChaCha8Rng,
) {
    for layer in 0..cfg.n_layers() {
        for leaf in store.get(&bias_name(layer)) {
            leaf.set_value(rng.random_range(0.01..0.2));
        }
    }
}
