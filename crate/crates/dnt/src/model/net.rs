//! The assembled two-stream classifier.
//!
//! Deep branch: backbone conv blocks over the RGB input scaled to [0,1],
//! bilinear upsample of the final map, row-major partition into square
//! patches, per-patch global average pooling, and an LSTM whose final
//! hidden state summarizes the patch sequence. Texture branch: the LBP
//! descriptor of the same augmented view, read as raw [0,255] grayscale so
//! both branches see one image. The branches meet by concatenation or
//! addition in front of a dense softmax classifier, with dropout on the
//! fused vector during training.

use crate::data::RgbImage;
use crate::error::{Error, Result};
use crate::lbp::{texture_descriptor, to_grayscale};
use crate::nn::layers::{BnCache, BnStats, DropoutMask};
use crate::nn::lstm::LstmCache;
use crate::nn::pool::MaxPoolCache;
use crate::nn::{
    bilinear_resize, bilinear_resize_backward, dropout_backward, dropout_forward,
    global_average_pool, global_average_pool_backward, maxpool2, maxpool2_backward, relu,
    relu_backward, softmax, softmax_cross_entropy, softmax_cross_entropy_backward, BatchNorm,
    Conv2d, Dense, LstmCell, Parameter, Tensor,
};
use crate::rng::{self, stream};
use crate::rng::SplitMix64;

use super::config::{Fusion, ModelConfig, PatchGrid};

/// Splits the feature map into the grid's disjoint patches after
/// bilinearly upsampling it to the grid extents. Patches are emitted
/// row-major; their union is exactly the upsampled map.
pub fn partition_patches(fmap: &Tensor, grid: &PatchGrid) -> Result<Vec<Tensor>> {
    grid.validate()?;
    let (uh, uw) = grid.upsampled;
    let up = bilinear_resize(fmap, uh, uw)?;
    let (_, _, c) = up.dims3();
    let a = grid.patch_side;
    let mut patches = Vec::with_capacity(grid.patch_count);
    for py in 0..grid.rows() {
        for px in 0..grid.cols() {
            let mut patch = Tensor::zeros(vec![a, a, c]);
            for y in 0..a {
                for x in 0..a {
                    for ch in 0..c {
                        *patch.at3_mut(y, x, ch) = up.at3(py * a + y, px * a + x, ch);
                    }
                }
            }
            patches.push(patch);
        }
    }
    Ok(patches)
}

/// Per-patch feature vectors F1: each patch is bilinearly resampled to
/// `pooled_side` (the patch side itself in every shipped configuration,
/// which makes the resample the identity) and reduced to its per-channel
/// spatial mean. Output order matches patch order.
pub fn patch_features(patches: &[Tensor], pooled_side: usize) -> Result<Vec<Vec<f64>>> {
    if patches.is_empty() {
        return Err(Error::Usage("patch feature extraction needs patches".into()));
    }
    let mut features = Vec::with_capacity(patches.len());
    for patch in patches {
        let (h, w, _) = patch.dims3();
        let pooled = if (h, w) == (pooled_side, pooled_side) {
            global_average_pool(patch)
        } else {
            global_average_pool(&bilinear_resize(patch, pooled_side, pooled_side)?)
        };
        features.push(pooled.into_data());
    }
    Ok(features)
}

/// One backbone stage and its trainable state.
#[derive(Debug, Clone)]
struct ConvBlock {
    conv: Conv2d,
    bn: Option<BatchNorm>,
}

struct BlockCache {
    input: Tensor,
    bn: Option<BnCache>,
    pre_relu: Tensor,
    pool: MaxPoolCache,
}

struct ForwardCache {
    blocks: Vec<BlockCache>,
    fmap_shape: Vec<usize>,
    lstm: Option<LstmCache>,
    descriptor: Option<Tensor>,
    fused: Tensor,
    dropout: Option<DropoutMask>,
    label: usize,
}

/// Everything one training forward produces: the loss, the class
/// probabilities, the per-layer batchnorm statistics for the caller to
/// fold into the running estimates, and the cache [`DntModel::backward`]
/// consumes.
pub struct TrainForward {
    pub loss: f64,
    pub probs: Vec<f64>,
    pub bn_stats: Vec<BnStats>,
    cache: ForwardCache,
}

/// Gradients for every parameter of one model, in [`DntModel::params`]
/// order. Produced per sample, summed over a mini-batch, then folded into
/// the parameters with [`DntModel::accumulate`].
#[derive(Debug, Clone)]
pub struct ModelGrads {
    grads: Vec<Tensor>,
}

impl ModelGrads {
    pub fn add_assign(&mut self, other: &ModelGrads) {
        assert_eq!(self.grads.len(), other.grads.len(), "grad layouts differ");
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            for x in g.data_mut() {
                *x *= factor;
            }
        }
    }

    /// All gradient values concatenated in parameter order.
    pub fn flat(&self) -> Vec<f64> {
        self.grads.iter().flat_map(|g| g.data().iter().copied()).collect()
    }
}

/// Scalar parameter counts per component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamBreakdown {
    pub backbone: usize,
    pub lstm: usize,
    pub projection: usize,
    pub classifier: usize,
}

impl ParamBreakdown {
    pub fn total(&self) -> usize {
        self.backbone + self.lstm + self.projection + self.classifier
    }
}

/// The two-stream classifier.
#[derive(Debug, Clone)]
pub struct DntModel {
    config: ModelConfig,
    blocks: Vec<ConvBlock>,
    lstm: Option<LstmCell>,
    projection: Option<Dense>,
    classifier: Dense,
}

impl DntModel {
    /// Builds the model with all weights drawn from the seed's init
    /// substream, consumed in declaration order.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, rng::domain::INIT, 0, 0);
        let mut blocks = Vec::with_capacity(config.backbone.blocks.len());
        let mut cin = 3;
        for (i, block) in config.backbone.blocks.iter().enumerate() {
            let name = format!("backbone.block{i}.conv");
            // A batchnorm subtracts the per-channel mean right after the
            // conv, so those convs are built bias-free.
            let conv = if block.batchnorm {
                Conv2d::new_no_bias(&name, 3, cin, block.out_channels, 1, 1, &mut rng)?
            } else {
                Conv2d::new(&name, 3, cin, block.out_channels, 1, 1, &mut rng)?
            };
            let bn = block
                .batchnorm
                .then(|| BatchNorm::new(&format!("backbone.block{i}.bn"), block.out_channels));
            blocks.push(ConvBlock { conv, bn });
            cin = block.out_channels;
        }
        let lstm = if config.use_patch_encoder {
            Some(LstmCell::new("lstm", cin, config.lstm_hidden, &mut rng))
        } else {
            None
        };
        let projection = if config.use_lbp && config.fusion == Fusion::Addition {
            Some(Dense::new_no_bias(
                "projection",
                config.texture_width(),
                config.deep_width(),
                &mut rng,
            ))
        } else {
            None
        };
        let classifier =
            Dense::new("classifier", config.fused_width(), config.num_classes, &mut rng);
        Ok(DntModel { config, blocks, lstm, projection, classifier })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_input(&self, img: &RgbImage) -> Result<()> {
        let s = self.config.input_size;
        if img.height() != s || img.width() != s {
            return Err(Error::Config(format!(
                "model expects {s}x{s} inputs, got {}x{}",
                img.height(),
                img.width()
            )));
        }
        Ok(())
    }

    /// The deep branch reads the image scaled to [0,1]; the texture branch
    /// reads the raw [0,255] grayscale.
    fn normalized_input(img: &RgbImage) -> Tensor {
        let mut t = img.to_tensor();
        for v in t.data_mut() {
            *v /= 255.0;
        }
        t
    }

    /// Inference-mode backbone over an image: the feature map F.
    pub fn backbone_forward(&self, img: &RgbImage) -> Result<Tensor> {
        self.check_input(img)?;
        self.backbone_infer(&Self::normalized_input(img))
    }

    fn backbone_infer(&self, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        for block in &self.blocks {
            let mut y = block.conv.forward(&x)?;
            if let Some(bn) = &block.bn {
                y = bn.forward_infer(&y)?;
            }
            let (pooled, _) = maxpool2(&relu(&y));
            x = pooled;
        }
        Ok(x)
    }

    fn backbone_train(&self, input: &Tensor) -> Result<(Tensor, Vec<BlockCache>, Vec<BnStats>)> {
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut stats = Vec::new();
        for block in &self.blocks {
            let conv_in = x;
            let conv_out = block.conv.forward(&conv_in)?;
            let (pre_relu, bn_cache) = match &block.bn {
                Some(bn) => {
                    let (y, cache, s) = bn.forward_train(&conv_out)?;
                    stats.push(s);
                    (y, Some(cache))
                }
                None => (conv_out, None),
            };
            let (pooled, pool) = maxpool2(&relu(&pre_relu));
            caches.push(BlockCache { input: conv_in, bn: bn_cache, pre_relu, pool });
            x = pooled;
        }
        Ok((x, caches, stats))
    }

    /// Deep feature from the feature map: LSTM final hidden state over the
    /// patch sequence, or plain GAP when the encoder is ablated.
    fn encode_deep(&self, fmap: &Tensor) -> Result<(Tensor, Option<LstmCache>)> {
        match &self.lstm {
            Some(cell) => {
                let patches = partition_patches(fmap, &self.config.grid)?;
                let feats = patch_features(&patches, self.config.grid.patch_side)?;
                let (h, cache) = cell.forward(&feats)?;
                Ok((Tensor::vector(h), Some(cache)))
            }
            None => {
                let c = self.config.backbone.out_channels();
                Ok((global_average_pool(fmap).reshaped(vec![c])?, None))
            }
        }
    }

    fn texture(&self, img: &RgbImage) -> Result<Option<Tensor>> {
        if !self.config.use_lbp {
            return Ok(None);
        }
        let descriptor =
            texture_descriptor(&to_grayscale(img), &self.config.lbp_configs, true)?;
        Ok(Some(Tensor::vector(descriptor.values)))
    }

    fn fuse(&self, deep: &Tensor, descriptor: Option<&Tensor>) -> Result<Tensor> {
        match descriptor {
            None => Ok(deep.clone()),
            Some(f3) => match self.config.fusion {
                Fusion::Concatenation => {
                    let mut v = deep.data().to_vec();
                    v.extend_from_slice(f3.data());
                    Ok(Tensor::vector(v))
                }
                Fusion::Addition => {
                    let projection = self.projection.as_ref().expect("built for addition");
                    let p = projection.forward(f3)?;
                    let v = deep.data().iter().zip(p.data()).map(|(a, b)| a + b).collect();
                    Ok(Tensor::vector(v))
                }
            },
        }
    }

    /// Training-mode forward pass for one labeled sample. Dropout draws
    /// come from `dropout_rng`; a zero dropout rate draws nothing.
    pub fn train_forward(
        &self,
        img: &RgbImage,
        label: usize,
        dropout_rng: &mut SplitMix64,
    ) -> Result<TrainForward> {
        self.check_input(img)?;
        let input = Self::normalized_input(img);
        let (fmap, blocks, bn_stats) = self.backbone_train(&input)?;
        let fmap_shape = fmap.shape().to_vec();
        let (deep, lstm) = self.encode_deep(&fmap)?;
        let descriptor = self.texture(img)?;
        let fused_raw = self.fuse(&deep, descriptor.as_ref())?;
        let (fused, dropout) = if self.config.dropout_rate > 0.0 {
            let (t, mask) = dropout_forward(&fused_raw, self.config.dropout_rate, dropout_rng)?;
            (t, Some(mask))
        } else {
            (fused_raw, None)
        };
        let logits = self.classifier.forward(&fused)?;
        let (loss, probs) = softmax_cross_entropy(logits.data(), label)?;
        Ok(TrainForward {
            loss,
            probs,
            bn_stats,
            cache: ForwardCache { blocks, fmap_shape, lstm, descriptor, fused, dropout, label },
        })
    }

    /// Inference-mode class probabilities: batchnorm running statistics,
    /// no dropout, bitwise deterministic.
    pub fn infer(&self, img: &RgbImage) -> Result<Vec<f64>> {
        Ok(softmax(self.infer_logits(img)?.data()))
    }

    /// Inference probabilities plus the cross-entropy against a label.
    pub fn infer_with_loss(&self, img: &RgbImage, label: usize) -> Result<(f64, Vec<f64>)> {
        softmax_cross_entropy(self.infer_logits(img)?.data(), label)
    }

    fn infer_logits(&self, img: &RgbImage) -> Result<Tensor> {
        self.check_input(img)?;
        let fmap = self.backbone_infer(&Self::normalized_input(img))?;
        let (deep, _) = self.encode_deep(&fmap)?;
        let descriptor = self.texture(img)?;
        let fused = self.fuse(&deep, descriptor.as_ref())?;
        self.classifier.forward(&fused)
    }

    /// Backward pass through everything the forward touched, producing
    /// gradients in parameter order. The descriptor is a fixed function of
    /// the image, so the texture branch contributes no upstream gradient.
    pub fn backward(&self, fwd: &TrainForward) -> ModelGrads {
        let cache = &fwd.cache;
        let dlogits = Tensor::vector(softmax_cross_entropy_backward(&fwd.probs, cache.label));
        let (g, classifier_grads) = self.classifier.backward(&cache.fused, &dlogits);
        let g_fused = match &cache.dropout {
            Some(mask) => dropout_backward(mask, &g),
            None => g,
        };

        let (g_deep, projection_grads) = match (&cache.descriptor, self.config.fusion) {
            (None, _) => (g_fused, None),
            (Some(_), Fusion::Concatenation) => {
                let deep_w = self.config.deep_width();
                (Tensor::vector(g_fused.data()[..deep_w].to_vec()), None)
            }
            (Some(f3), Fusion::Addition) => {
                let projection = self.projection.as_ref().expect("built for addition");
                let (_, pg) = projection.backward(f3, &g_fused);
                (g_fused, Some(pg))
            }
        };

        let (mut g, lstm_grads) = match (&self.lstm, &cache.lstm) {
            (Some(cell), Some(lstm_cache)) => {
                let (dx, lg) = cell.backward(lstm_cache, g_deep.data());
                let channels = cache.fmap_shape[2];
                let g_up = scatter_patch_grads(&dx, &self.config.grid, channels);
                (bilinear_resize_backward(&cache.fmap_shape, &g_up), Some(lg))
            }
            _ => {
                let g_vec = g_deep.reshaped(vec![1, 1, self.config.deep_width()])
                    .expect("deep width vector");
                (global_average_pool_backward(&cache.fmap_shape, &g_vec), None)
            }
        };

        let mut block_grads_rev = Vec::with_capacity(self.blocks.len());
        for (block, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            g = maxpool2_backward(&bc.pool, &g);
            g = relu_backward(&bc.pre_relu, &g);
            let bn_grads = match (&block.bn, &bc.bn) {
                (Some(bn), Some(bn_cache)) => {
                    let (gx, bg) = bn.backward(bn_cache, &g);
                    g = gx;
                    Some(bg)
                }
                _ => None,
            };
            let (gx, cg) = block.conv.backward(&bc.input, &g);
            g = gx;
            block_grads_rev.push((cg, bn_grads));
        }

        let mut grads = Vec::new();
        for (cg, bg) in block_grads_rev.into_iter().rev() {
            grads.push(cg.kernels);
            grads.push(cg.bias);
            if let Some(b) = bg {
                grads.push(b.gamma);
                grads.push(b.beta);
            }
        }
        if let Some(lg) = lstm_grads {
            for gate in [lg.input_gate, lg.forget_gate, lg.output_gate, lg.candidate] {
                grads.push(gate.wx);
                grads.push(gate.wh);
                grads.push(gate.b);
            }
        }
        if let Some(pg) = projection_grads {
            grads.push(pg.weight);
            grads.push(pg.bias);
        }
        grads.push(classifier_grads.weight);
        grads.push(classifier_grads.bias);
        ModelGrads { grads }
    }

    /// Adds a gradient set into the parameters' accumulators.
    pub fn accumulate(&mut self, grads: &ModelGrads) {
        let params = self.params_mut();
        assert_eq!(params.len(), grads.grads.len(), "grad layout mismatch");
        for (p, g) in params.into_iter().zip(&grads.grads) {
            for (a, b) in p.grad.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }

    /// Folds per-sample batchnorm statistics into the running estimates,
    /// one stat set per batchnorm layer in block order.
    pub fn apply_bn_stats(&mut self, stats: &[BnStats]) -> Result<()> {
        let mut it = stats.iter();
        for block in &mut self.blocks {
            if let Some(bn) = &mut block.bn {
                let s = it
                    .next()
                    .ok_or_else(|| Error::Usage("fewer stat sets than batchnorm layers".into()))?;
                bn.apply_stats(s);
            }
        }
        if it.next().is_some() {
            return Err(Error::Usage("more stat sets than batchnorm layers".into()));
        }
        Ok(())
    }

    /// All trainable parameters, in the declaration order the checkpoint
    /// and gradient layouts share: backbone blocks, LSTM gates, texture
    /// projection, classifier.
    pub fn params(&self) -> Vec<&Parameter> {
        let mut ps = Vec::new();
        for block in &self.blocks {
            ps.extend(block.conv.params());
            if let Some(bn) = &block.bn {
                ps.extend(bn.params());
            }
        }
        if let Some(lstm) = &self.lstm {
            ps.extend(lstm.params());
        }
        if let Some(projection) = &self.projection {
            ps.extend(projection.params());
        }
        ps.extend(self.classifier.params());
        ps
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut ps = Vec::new();
        for block in &mut self.blocks {
            ps.extend(block.conv.params_mut());
            if let Some(bn) = &mut block.bn {
                ps.extend(bn.params_mut());
            }
        }
        if let Some(lstm) = &mut self.lstm {
            ps.extend(lstm.params_mut());
        }
        if let Some(projection) = &mut self.projection {
            ps.extend(projection.params_mut());
        }
        ps.extend(self.classifier.params_mut());
        ps
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.numel()).sum()
    }

    pub fn param_breakdown(&self) -> ParamBreakdown {
        let backbone = self
            .blocks
            .iter()
            .map(|b| {
                b.conv.param_count() + b.bn.as_ref().map_or(0, |bn| bn.param_count())
            })
            .sum();
        ParamBreakdown {
            backbone,
            lstm: self.lstm.as_ref().map_or(0, |l| l.param_count()),
            projection: self.projection.as_ref().map_or(0, |p| p.param_count()),
            classifier: self.classifier.param_count(),
        }
    }

    /// All parameter values concatenated in parameter order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.value.data().iter().copied()).collect()
    }

    /// Overwrites every parameter from a flat value vector.
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Usage(format!(
                "expected {} parameter values, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.value.numel();
            p.value.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Batchnorm running statistics as named state entries, in block
    /// order. These are not trained but must survive a checkpoint reload
    /// for inference to be loss-preserving.
    pub(crate) fn bn_state(&self) -> Vec<(String, &[f64])> {
        let mut entries = Vec::new();
        for (i, block) in self.blocks.iter().enumerate() {
            if let Some(bn) = &block.bn {
                entries.push((format!("backbone.block{i}.bn.running_mean"), &bn.running_mean[..]));
                entries.push((format!("backbone.block{i}.bn.running_var"), &bn.running_var[..]));
            }
        }
        entries
    }

    pub(crate) fn bn_state_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut entries = Vec::new();
        for (i, block) in self.blocks.iter_mut().enumerate() {
            if let Some(bn) = &mut block.bn {
                entries.push((
                    format!("backbone.block{i}.bn.running_mean"),
                    &mut bn.running_mean[..],
                ));
                entries.push((
                    format!("backbone.block{i}.bn.running_var"),
                    &mut bn.running_var[..],
                ));
            }
        }
        entries
    }
}

/// Scatters per-patch feature gradients back onto the upsampled map. Each
/// patch feature is the patch's spatial mean, so its gradient spreads
/// uniformly over the patch cells.
fn scatter_patch_grads(dx: &[Vec<f64>], grid: &PatchGrid, channels: usize) -> Tensor {
    let (uh, uw) = grid.upsampled;
    let a = grid.patch_side;
    let cols = grid.cols();
    let scale = 1.0 / (a * a) as f64;
    let mut g = Tensor::zeros(vec![uh, uw, channels]);
    for (p, gp) in dx.iter().enumerate() {
        let oy = (p / cols) * a;
        let ox = (p % cols) * a;
        for y in 0..a {
            for x in 0..a {
                for ch in 0..channels {
                    *g.at3_mut(oy + y, ox + x, ch) = gp[ch] * scale;
                }
            }
        }
    }
    g
}
