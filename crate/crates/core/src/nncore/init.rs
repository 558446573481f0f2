use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ConvLayer, Network, Stage};

/// The crate's seedable generator: ChaCha with 8 rounds, seeded through
/// `SeedableRng::seed_from_u64`.
pub type Rng64 = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `sqrt(6 / (fan_in + fan_out))` with fans counted as `k * k * channels`.
pub fn glorot_bound(layer: &ConvLayer) -> f64 {
    (6.0 / (layer.fan_in() + layer.fan_out()) as f64).sqrt()
}

/// Glorot-uniform weights, zero biases, unit BN scale and zero BN shift.
/// Layers are filled in network order, weights in storage order.
pub fn glorot_init(mut network: Network, seed: u64) -> Network {
    let mut rng = seeded_rng(seed);
    for stage in &mut network.stages {
        if let Stage::Block(block) = stage {
            let b = glorot_bound(&block.conv);
            for w in &mut block.conv.weight {
                *w = rng.gen_range(-b..=b);
            }
            block.conv.bias.iter_mut().for_each(|v| *v = 0.0);
            block.bn.gamma.iter_mut().for_each(|v| *v = 1.0);
            block.bn.beta.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    network.bump_version();
    network
}
