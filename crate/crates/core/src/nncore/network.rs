use crate::error::{Error, Result};
use crate::volume::FeatureView;

use super::{
    maxpool2_backward, maxpool2_forward, relu_backward, relu_forward, upsample2_backward,
    upsample2_forward, BatchNorm, BatchNormCache, ConvLayer, ConvMode, Tensor4,
};

/// Channels of every hidden layer and of the output feature map.
pub const FEATURE_CHANNELS: usize = 64;

/// Convolution (or deconvolution) followed by ReLU and batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub conv: ConvLayer,
    pub bn: BatchNorm,
}

impl ConvBlock {
    fn new(cin: usize, cout: usize, k: usize, mode: ConvMode) -> Self {
        Self {
            conv: ConvLayer::new(cin, cout, k, mode).expect("odd kernel"),
            bn: BatchNorm::new(cout),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    Block(ConvBlock),
    MaxPool,
    Upsample,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub stages: Vec<Stage>,
    version: u64,
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    height: usize,
    width: usize,
    stages: Vec<StageCache>,
}

impl ForwardCache {
    /// The piecewise-linear switching state of this pass: one bit per ReLU
    /// input (`> 0`) and the recorded argmax of every max-pool window. Two
    /// passes with equal patterns lie in the same smooth piece of the loss.
    pub fn switching_pattern(&self) -> (Vec<bool>, Vec<usize>) {
        let mut relu = Vec::new();
        let mut pool = Vec::new();
        for sc in &self.stages {
            match sc {
                StageCache::Block { pre_relu, .. } => {
                    relu.extend(pre_relu.data.iter().map(|&v| v > 0.0))
                }
                StageCache::MaxPool { argmax, .. } => pool.extend_from_slice(argmax),
                StageCache::Upsample => {}
            }
        }
        (relu, pool)
    }
}

#[derive(Debug, Clone)]
enum StageCache {
    Block {
        input: Tensor4,
        pre_relu: Tensor4,
        bn: BatchNormCache,
    },
    MaxPool {
        input_shape: (usize, usize, usize),
        argmax: Vec<usize>,
    },
    Upsample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Parameter gradients, one entry per conv block in network order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGrads {
    pub blocks: Vec<BlockGrads>,
}

impl NetworkGrads {
    /// Flat views in the same order as [`Network::params_mut`].
    pub fn as_slices(&self) -> Vec<&[f64]> {
        self.blocks
            .iter()
            .flat_map(|b| [&b.weight[..], &b.bias[..], &b.gamma[..], &b.beta[..]])
            .collect()
    }
}

impl Network {
    /// The fixed feature extractor: three 3x3 conv blocks with two 2x2 max
    /// pools, then upsample + 3x3 deconv block and upsample + 1x1 deconv
    /// block, all 64 channels wide. Parameters start at zero (see
    /// [`super::glorot_init`]).
    pub fn feature_extractor(in_channels: usize) -> Self {
        let p = FEATURE_CHANNELS;
        Self {
            stages: vec![
                Stage::Block(ConvBlock::new(in_channels, p, 3, ConvMode::Forward)),
                Stage::MaxPool,
                Stage::Block(ConvBlock::new(p, p, 3, ConvMode::Forward)),
                Stage::MaxPool,
                Stage::Block(ConvBlock::new(p, p, 3, ConvMode::Forward)),
                Stage::Upsample,
                Stage::Block(ConvBlock::new(p, p, 3, ConvMode::Transposed)),
                Stage::Upsample,
                Stage::Block(ConvBlock::new(p, p, 1, ConvMode::Transposed)),
            ],
            version: 0,
        }
    }

    /// Custom stage list, mainly for small-width tests.
    pub fn from_stages(stages: Vec<Stage>) -> Result<Self> {
        let mut channels: Option<usize> = None;
        let mut scale = 0i32;
        for s in &stages {
            match s {
                Stage::Block(b) => {
                    if let Some(c) = channels {
                        if c != b.conv.in_channels {
                            return Err(Error::shape(format!(
                                "block expects {} channels, previous stage gives {c}",
                                b.conv.in_channels
                            )));
                        }
                    }
                    if b.bn.channels() != b.conv.out_channels {
                        return Err(Error::shape("batch norm width differs from conv"));
                    }
                    channels = Some(b.conv.out_channels);
                }
                Stage::MaxPool => scale -= 1,
                Stage::Upsample => scale += 1,
            }
        }
        if channels.is_none() || scale != 0 {
            return Err(Error::InvalidArgument(
                "network needs at least one block and matching pool/upsample counts".into(),
            ));
        }
        Ok(Self { stages, version: 0 })
    }

    pub fn in_channels(&self) -> usize {
        self.blocks().next().map_or(0, |b| b.conv.in_channels)
    }

    pub fn out_channels(&self) -> usize {
        self.blocks().last().map_or(0, |b| b.conv.out_channels)
    }

    pub fn blocks(&self) -> impl Iterator<Item = &ConvBlock> {
        self.stages.iter().filter_map(|s| match s {
            Stage::Block(b) => Some(b),
            _ => None,
        })
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut ConvBlock> {
        self.stages.iter_mut().filter_map(|s| match s {
            Stage::Block(b) => Some(b),
            _ => None,
        })
    }

    /// Spatial sizes must be multiples of this for the pool/upsample path to
    /// return to the input size.
    pub fn size_multiple(&self) -> usize {
        let pools = self
            .stages
            .iter()
            .filter(|s| matches!(s, Stage::MaxPool))
            .count();
        1 << pools
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub(crate) fn bump_version(&mut self) {
        self.version += 1;
    }

    /// Mutable parameter views: weight, bias, gamma, beta per block.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.version += 1;
        self.stages
            .iter_mut()
            .filter_map(|s| match s {
                Stage::Block(b) => Some(b),
                _ => None,
            })
            .flat_map(|b| {
                [
                    &mut b.conv.weight[..],
                    &mut b.conv.bias[..],
                    &mut b.bn.gamma[..],
                    &mut b.bn.beta[..],
                ]
            })
            .collect()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.blocks()
            .flat_map(|b| [&b.conv.weight[..], &b.conv.bias[..], &b.bn.gamma[..], &b.bn.beta[..]])
            .collect()
    }

    /// Applies one optimizer step with `grads`.
    pub fn apply(&mut self, opt: &mut super::SgdMomentum, grads: &NetworkGrads) -> Result<()> {
        let g = grads.as_slices();
        let mut p = self.params_mut();
        opt.step(&mut p, &g)
    }

    /// Runs the network on a `(channel, row, col)` volume. Inputs whose sides
    /// are not multiples of [`Self::size_multiple`] are edge-replicated on
    /// the bottom/right and the output is cropped back.
    ///
    /// The returned features are the final batch-norm output.
    pub fn forward(&self, input: FeatureView<'_>) -> Result<(Tensor4, ForwardCache)> {
        if input.channels != self.in_channels() {
            return Err(Error::shape(format!(
                "network expects {} input channels, got {}",
                self.in_channels(),
                input.channels
            )));
        }
        let m = self.size_multiple();
        let (h, w) = (input.height, input.width);
        let mut x = pad_replicate(input, h.div_ceil(m) * m, w.div_ceil(m) * m);
        let mut caches = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            match stage {
                Stage::Block(b) => {
                    let pre_relu = b.conv.forward(&x)?;
                    let act = relu_forward(&pre_relu);
                    let (y, bn) = b.bn.forward(&act)?;
                    caches.push(StageCache::Block {
                        input: x,
                        pre_relu,
                        bn,
                    });
                    x = y;
                }
                Stage::MaxPool => {
                    let (y, argmax) = maxpool2_forward(&x);
                    caches.push(StageCache::MaxPool {
                        input_shape: x.shape(),
                        argmax,
                    });
                    x = y;
                }
                Stage::Upsample => {
                    caches.push(StageCache::Upsample);
                    x = upsample2_forward(&x);
                }
            }
        }
        let features = crop(&x, h, w);
        Ok((
            features,
            ForwardCache {
                version: self.version,
                height: h,
                width: w,
                stages: caches,
            },
        ))
    }

    /// Chain-rule gradients of all parameters given the gradient of the loss
    /// with respect to the returned features.
    pub fn backward(&self, cache: &ForwardCache, grad_features: &Tensor4) -> Result<NetworkGrads> {
        if cache.version != self.version || cache.stages.len() != self.stages.len() {
            return Err(Error::shape("forward cache is stale or from another network"));
        }
        if grad_features.shape() != (self.out_channels(), cache.height, cache.width) {
            return Err(Error::shape(format!(
                "feature gradient {:?} does not match forward output",
                grad_features.shape()
            )));
        }
        let mut grad = None::<Tensor4>;
        let mut block_grads = Vec::new();
        for (stage, sc) in self.stages.iter().zip(&cache.stages).rev() {
            let g = match grad.take() {
                Some(g) => g,
                None => {
                    // Pad the cropped feature gradient back to the working size.
                    let (c, ph, pw) = match sc {
                        StageCache::Block { pre_relu, .. } => pre_relu.shape(),
                        _ => unreachable!("network ends with a block"),
                    };
                    pad_zeros(grad_features, c, ph, pw)
                }
            };
            let next = match (stage, sc) {
                (
                    Stage::Block(b),
                    StageCache::Block {
                        input,
                        pre_relu,
                        bn,
                    },
                ) => {
                    let bng = b.bn.backward(bn, &g)?;
                    let gr = relu_backward(pre_relu, &bng.input)?;
                    let cg = b.conv.backward(input, &gr)?;
                    block_grads.push(BlockGrads {
                        weight: cg.weight,
                        bias: cg.bias,
                        gamma: bng.gamma,
                        beta: bng.beta,
                    });
                    cg.input
                }
                (Stage::MaxPool, StageCache::MaxPool { input_shape, argmax }) => {
                    maxpool2_backward(*input_shape, argmax, &g)?
                }
                (Stage::Upsample, StageCache::Upsample) => upsample2_backward(&g)?,
                _ => return Err(Error::shape("forward cache does not match stages")),
            };
            grad = Some(next);
        }
        block_grads.reverse();
        Ok(NetworkGrads {
            blocks: block_grads,
        })
    }
}

fn pad_replicate(input: FeatureView<'_>, ph: usize, pw: usize) -> Tensor4 {
    let (c, h, w) = (input.channels, input.height, input.width);
    if ph == h && pw == w {
        return Tensor4::from_view(input);
    }
    let mut out = Tensor4::zeros(c, ph, pw);
    for ch in 0..c {
        let src = input.channel(ch);
        for y in 0..ph {
            let sy = y.min(h - 1);
            for x in 0..pw {
                *out.at_mut(ch, y, x) = src[sy * w + x.min(w - 1)];
            }
        }
    }
    out
}

fn crop(t: &Tensor4, h: usize, w: usize) -> Tensor4 {
    if t.height == h && t.width == w {
        return t.clone();
    }
    let mut out = Tensor4::zeros(t.channels, h, w);
    for c in 0..t.channels {
        for y in 0..h {
            for x in 0..w {
                *out.at_mut(c, y, x) = t.at(c, y, x);
            }
        }
    }
    out
}

fn pad_zeros(t: &Tensor4, c: usize, ph: usize, pw: usize) -> Tensor4 {
    if t.height == ph && t.width == pw {
        return t.clone();
    }
    let mut out = Tensor4::zeros(c, ph, pw);
    for ch in 0..c {
        for y in 0..t.height {
            for x in 0..t.width {
                *out.at_mut(ch, y, x) = t.at(ch, y, x);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::{glorot_init, seeded_rng};
    use rand::Rng;

    fn random_input(seed: u64, c: usize, h: usize, w: usize) -> Vec<f64> {
        let mut rng = seeded_rng(seed);
        (0..c * h * w).map(|_| rng.gen()).collect()
    }

    #[test]
    fn output_matches_input_size() {
        let net = glorot_init(Network::feature_extractor(3), 1);
        for (h, w) in [(8, 8), (4, 12), (16, 8)] {
            let data = random_input(2, 3, h, w);
            let (f, _) = net.forward(FeatureView::new(3, h, w, &data).unwrap()).unwrap();
            assert_eq!(f.shape(), (FEATURE_CHANNELS, h, w));
        }
    }

    #[test]
    fn odd_sizes_are_padded_and_cropped() {
        let net = glorot_init(Network::feature_extractor(2), 1);
        let data = random_input(3, 2, 7, 9);
        let view = FeatureView::new(2, 7, 9, &data).unwrap();
        let (f, cache) = net.forward(view).unwrap();
        assert_eq!(f.shape(), (FEATURE_CHANNELS, 7, 9));
        let g = net.backward(&cache, &f).unwrap();
        assert_eq!(g.blocks.len(), 5);
    }

    #[test]
    fn zero_network_on_zero_cube_gives_zero_features() {
        let net = Network::feature_extractor(3);
        let data = vec![0.0; 3 * 8 * 8];
        let (f, _) = net.forward(FeatureView::new(3, 8, 8, &data).unwrap()).unwrap();
        assert!(f.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch_and_stale_cache() {
        let mut net = glorot_init(Network::feature_extractor(3), 1);
        let data = random_input(4, 2, 8, 8);
        assert!(net.forward(FeatureView::new(2, 8, 8, &data).unwrap()).is_err());
        let data = random_input(4, 3, 8, 8);
        let (f, cache) = net.forward(FeatureView::new(3, 8, 8, &data).unwrap()).unwrap();
        let grads = net.backward(&cache, &f).unwrap();
        let mut opt = crate::nncore::SgdMomentum::new(0.1, 0.9).unwrap();
        net.apply(&mut opt, &grads).unwrap();
        assert!(net.backward(&cache, &f).is_err());
    }

    #[test]
    fn zero_and_scaled_feature_gradients() {
        let net = glorot_init(Network::feature_extractor(3), 7);
        let data = random_input(5, 3, 8, 8);
        let (f, cache) = net.forward(FeatureView::new(3, 8, 8, &data).unwrap()).unwrap();
        let zero = net
            .backward(&cache, &Tensor4::zeros(f.channels, f.height, f.width))
            .unwrap();
        assert!(zero.as_slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
        let mut rng = seeded_rng(8);
        let g = Tensor4::from_vec(
            f.channels,
            8,
            8,
            (0..f.data.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let g2 = Tensor4 {
            data: g.data.iter().map(|v| 2.0 * v).collect(),
            ..g.clone()
        };
        let a = net.backward(&cache, &g).unwrap();
        let b = net.backward(&cache, &g2).unwrap();
        for (sa, sb) in a.as_slices().iter().zip(b.as_slices()) {
            for (x, y) in sa.iter().zip(sb) {
                assert!((2.0 * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }
    }
}
