//! Declarative builders for the fovea sub-network (VGG-style trunk), the
//! periphery sub-network (8 convs, no pooling), and the fused dual-stream
//! model, plus parameter accounting and forward/backward execution.
//!
//! Layer names are stable and used by the checkpoint format:
//! `fovea.conv1_1 .. fovea.conv5_3`, `fovea.fc1`, `fovea.fc2`,
//! `fovea.classifier`, `periphery.conv1 .. periphery.conv8`, `fusion.dense`.

use crate::layers::{
    concat2, concat2_backward, conv2d_backward, conv2d_forward, dense_backward, dense_forward,
    flatten, flatten_backward, init_params, maxpool2, maxpool2_backward, relu, relu_backward,
    ConcatCache, ConvCache, ConvSpec, DenseCache, DenseSpec, FlattenCache, LayerParams, LayerSpec,
    PoolCache, ReluCache,
};
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Shape, Tensor};
use crate::{Error, Result};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

/// One stage of the fovea conv plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FoveaStage {
    /// 3x3 same-padded conv with this many output channels, plus ReLU.
    Conv(usize),
    /// 2x2 stride-2 max pool.
    Pool,
}

/// Configuration of the fovea (object) stream: VGG-style conv blocks, two
/// fully connected layers, and a classification head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoveaConfig {
    pub in_channels: usize,
    pub side: usize,
    pub conv_plan: Vec<FoveaStage>,
    pub fc1: usize,
    pub fc2: usize,
    pub num_classes: usize,
}

impl FoveaConfig {
    /// The paper-scale baseline: 224-pixel input, VGG-16 conv plan, fc
    /// 4096/1024, 80 classes.
    pub fn full_scale() -> Self {
        use FoveaStage::{Conv, Pool};
        FoveaConfig {
            in_channels: 3,
            side: 224,
            conv_plan: vec![
                Conv(64),
                Conv(64),
                Pool,
                Conv(128),
                Conv(128),
                Pool,
                Conv(256),
                Conv(256),
                Conv(256),
                Pool,
                Conv(512),
                Conv(512),
                Conv(512),
                Pool,
                Conv(512),
                Conv(512),
                Conv(512),
                Pool,
            ],
            fc1: 4096,
            fc2: 1024,
            num_classes: 80,
        }
    }

    /// CPU-trainable variant preserving the block structure.
    pub fn desk_scale() -> Self {
        use FoveaStage::{Conv, Pool};
        FoveaConfig {
            in_channels: 3,
            side: 64,
            conv_plan: vec![
                Conv(16),
                Conv(16),
                Pool,
                Conv(32),
                Conv(32),
                Pool,
                Conv(64),
                Conv(64),
                Pool,
            ],
            fc1: 256,
            fc2: 64,
            num_classes: 8,
        }
    }

    pub fn pool_count(&self) -> usize {
        self.conv_plan
            .iter()
            .filter(|s| matches!(s, FoveaStage::Pool))
            .count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_plan.is_empty() {
            return Err(Error::Config("fovea conv plan must not be empty".into()));
        }
        let divisor = 1usize << self.pool_count();
        if self.side % divisor != 0 {
            return Err(Error::Config(format!(
                "fovea input side {} not divisible by 2^{} (pool count)",
                self.side,
                self.pool_count()
            )));
        }
        if self.side / divisor == 0 {
            return Err(Error::Config(format!(
                "fovea input side {} collapses to zero after {} pools",
                self.side,
                self.pool_count()
            )));
        }
        Ok(())
    }

    /// Side of the final conv grid: side / 2^pools.
    pub fn final_grid_side(&self) -> usize {
        self.side >> self.pool_count()
    }
}

/// One periphery conv layer descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeripheryLayer {
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Configuration of the periphery (context) stream: 8 conv+ReLU layers,
/// kernels 5,5,5,5,5,3,3,3, strides 2,2,2,2,2,2,1,1, no pooling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeripheryConfig {
    pub in_channels: usize,
    pub side: usize,
    pub layers: Vec<PeripheryLayer>,
    pub num_classes: usize,
}

impl PeripheryConfig {
    /// Builds the fixed 8-layer kernel/stride pattern over a channel plan.
    pub fn from_channels(side: usize, channels: [usize; 8], num_classes: usize) -> Self {
        let layers = channels
            .iter()
            .enumerate()
            .map(|(i, &out_ch)| PeripheryLayer {
                out_ch,
                kernel: if i < 5 { 5 } else { 3 },
                stride: if i < 6 { 2 } else { 1 },
            })
            .collect();
        PeripheryConfig {
            in_channels: 3,
            side,
            layers,
            num_classes,
        }
    }

    /// Channel plan reproducing the reported added-parameter budget.
    pub fn full_scale() -> Self {
        Self::from_channels(448, [32, 128, 128, 256, 256, 256, 256, 256], 80)
    }

    pub fn desk_scale() -> Self {
        Self::from_channels(128, [8, 16, 16, 32, 32, 32, 32, 32], 8)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() != 8 {
            return Err(Error::Config(format!(
                "periphery must have exactly 8 conv layers, got {}",
                self.layers.len()
            )));
        }
        for (i, l) in self.layers.iter().enumerate() {
            let want_k = if i < 5 { 5 } else { 3 };
            let want_s = if i < 6 { 2 } else { 1 };
            if l.kernel != want_k || l.stride != want_s {
                return Err(Error::Config(format!(
                    "periphery layer {} must have kernel {want_k} stride {want_s}, got kernel {} stride {}",
                    i + 1,
                    l.kernel,
                    l.stride
                )));
            }
            if l.out_ch == 0 {
                return Err(Error::Config(format!("periphery layer {} has 0 channels", i + 1)));
            }
        }
        if self.side % 64 != 0 {
            return Err(Error::Config(format!(
                "periphery input side {} not divisible by 2^6 = 64",
                self.side
            )));
        }
        Ok(())
    }

    /// Pre-flatten grid side: input side / 2^6.
    pub fn final_grid_side(&self) -> usize {
        self.side >> 6
    }

    /// Flatten length feeding the fusion layer.
    pub fn flatten_len(&self) -> usize {
        let g = self.final_grid_side();
        g * g * self.layers[7].out_ch
    }
}

/// Combined configuration of the fused model, with an optional rational
/// scale applied to channel widths, fc sizes, and input sides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GistNetConfig {
    pub fovea: FoveaConfig,
    pub periphery: PeripheryConfig,
    pub scale_num: u32,
    pub scale_den: u32,
}

fn scale_dim(v: usize, num: u32, den: u32) -> usize {
    // Round half up, floor at 1.
    (((v as u64 * num as u64) + den as u64 / 2) / den as u64).max(1) as usize
}

impl GistNetConfig {
    pub fn full_scale() -> Self {
        GistNetConfig {
            fovea: FoveaConfig::full_scale(),
            periphery: PeripheryConfig::full_scale(),
            scale_num: 1,
            scale_den: 1,
        }
    }

    pub fn desk_scale() -> Self {
        GistNetConfig {
            fovea: FoveaConfig::desk_scale(),
            periphery: PeripheryConfig::desk_scale(),
            scale_num: 1,
            scale_den: 1,
        }
    }

    /// Applies the rational scale to widths, fc sizes, and input sides.
    /// Kernel sizes, stride pattern, layer counts, and the fusion topology
    /// are preserved exactly.
    pub fn scaled(&self) -> Self {
        let (n, d) = (self.scale_num, self.scale_den);
        if n == d {
            return self.clone();
        }
        let mut fovea = self.fovea.clone();
        fovea.side = scale_dim(fovea.side, n, d);
        fovea.fc1 = scale_dim(fovea.fc1, n, d);
        fovea.fc2 = scale_dim(fovea.fc2, n, d);
        fovea.conv_plan = fovea
            .conv_plan
            .iter()
            .map(|s| match s {
                FoveaStage::Conv(ch) => FoveaStage::Conv(scale_dim(*ch, n, d)),
                FoveaStage::Pool => FoveaStage::Pool,
            })
            .collect();
        let mut periphery = self.periphery.clone();
        periphery.side = scale_dim(periphery.side, n, d);
        for l in periphery.layers.iter_mut() {
            l.out_ch = scale_dim(l.out_ch, n, d);
        }
        GistNetConfig {
            fovea,
            periphery,
            scale_num: 1,
            scale_den: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale_num == 0 || self.scale_den == 0 {
            return Err(Error::Config("scale must be a positive rational".into()));
        }
        self.fovea.validate()?;
        self.periphery.validate()?;
        if self.fovea.num_classes != self.periphery.num_classes {
            return Err(Error::Config(format!(
                "fovea num_classes {} != periphery num_classes {}",
                self.fovea.num_classes, self.periphery.num_classes
            )));
        }
        Ok(())
    }

    /// Length of the fusion dense input: periphery flatten + fovea fc2.
    pub fn fusion_input_len(&self) -> usize {
        self.periphery.flatten_len() + self.fovea.fc2
    }
}

// ---------------------------------------------------------------------------
// Named parameter collection
// ---------------------------------------------------------------------------

/// Ordered map from layer name to its parameters; iteration order is the
/// layer order. Also used as the gradient container (same structure).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Scalar>(IndexMap<String, LayerParams<T>>);

/// Gradients share the parameter layout.
pub type ModelGrads<T> = ModelParams<T>;

impl<T: Scalar> Default for ModelParams<T> {
    fn default() -> Self {
        ModelParams(IndexMap::new())
    }
}

impl<T: Scalar> ModelParams<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, params: LayerParams<T>) {
        self.0.insert(name.into(), params);
    }

    pub fn get(&self, name: &str) -> Result<&LayerParams<T>> {
        self.0
            .get(name)
            .ok_or_else(|| Error::Argument(format!("no parameters for layer '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut LayerParams<T>> {
        self.0
            .get_mut(name)
            .ok_or_else(|| Error::Argument(format!("no parameters for layer '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &LayerParams<T>)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    /// Zero tensors in the same layout.
    pub fn zeros_like(&self) -> Self {
        ModelParams(
            self.0
                .iter()
                .map(|(k, v)| {
                    (
                        k.clone(),
                        LayerParams {
                            weights: Tensor::zeros(v.weights.shape().clone()),
                            bias: Tensor::zeros(v.bias.shape().clone()),
                        },
                    )
                })
                .collect(),
        )
    }

    /// In-place elementwise accumulation; layouts must match.
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        if self.0.len() != other.0.len() {
            return Err(Error::Shape("parameter layouts differ".into()));
        }
        for (k, v) in self.0.iter_mut() {
            let o = other.get(k)?;
            v.weights = v.weights.add(&o.weights)?;
            v.bias = v.bias.add(&o.bias)?;
        }
        Ok(())
    }

    /// In-place scale of every element.
    pub fn scale_assign(&mut self, c: T) {
        for (_, v) in self.0.iter_mut() {
            v.weights = v.weights.scale(c);
            v.bias = v.bias.scale(c);
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams(self.0.iter().map(|(k, v)| (k.clone(), v.cast())).collect())
    }

    /// Total scalar count across all tensors.
    pub fn total_count(&self) -> u64 {
        self.0.values().map(|p| p.count() as u64).sum()
    }
}

/// Sum over all weight and bias element counts, with a per-layer table.
pub fn count_params<T: Scalar>(params: &ModelParams<T>) -> (u64, Vec<(String, u64)>) {
    let table: Vec<(String, u64)> = params
        .iter()
        .map(|(name, p)| (name.clone(), p.count() as u64))
        .collect();
    let total = table.iter().map(|(_, c)| c).sum();
    (total, table)
}

/// Total parameter count of the fovea baseline (trunk plus its own
/// classification head), straight from the config.
pub fn fovea_param_total(cfg: &FoveaConfig) -> u64 {
    let (trunk, _) = count_params_from_layout(&fovea_trunk_layout(cfg));
    trunk + DenseSpec::new(cfg.fc2, cfg.num_classes).param_count() as u64
}

/// Total parameter count of the fused model (fovea trunk without its
/// classifier, periphery trunk, fusion dense), straight from the config.
pub fn gistnet_param_total(cfg: &GistNetConfig) -> u64 {
    let (fovea_trunk, _) = count_params_from_layout(&fovea_trunk_layout(&cfg.fovea));
    let (periphery, _) = count_params_from_layout(&periphery_trunk_layout(&cfg.periphery));
    fovea_trunk
        + periphery
        + DenseSpec::new(cfg.fusion_input_len(), cfg.fovea.num_classes).param_count() as u64
}

/// Per-layer parameter counts straight from a layer layout, without
/// instantiating any tensors. Matches [`count_params`] on built params.
pub fn count_params_from_layout(layout: &[(String, LayerSpec)]) -> (u64, Vec<(String, u64)>) {
    let table: Vec<(String, u64)> = layout
        .iter()
        .filter(|(_, spec)| spec.has_params())
        .map(|(name, spec)| (name.clone(), spec.param_count() as u64))
        .collect();
    let total = table.iter().map(|(_, c)| c).sum();
    (total, table)
}

// ---------------------------------------------------------------------------
// Chain execution
// ---------------------------------------------------------------------------

/// A linear sequence of named layers.
#[derive(Debug, Clone)]
pub struct Chain {
    layers: Vec<(String, LayerSpec)>,
}

#[derive(Debug)]
enum LayerCache<T: Scalar> {
    Conv(ConvCache<T>),
    Dense(DenseCache<T>),
    Relu(ReluCache),
    Pool(PoolCache),
    Flatten(FlattenCache),
}

/// Per-layer caches from one chain forward; consumed by one backward.
#[derive(Debug)]
pub struct ChainCache<T: Scalar> {
    items: Vec<LayerCache<T>>,
}

impl Chain {
    pub fn layers(&self) -> &[(String, LayerSpec)] {
        &self.layers
    }

    /// Shape inference along the chain; validates wiring without compute.
    pub fn out_shape(&self, input: &Shape) -> Result<Shape> {
        let mut s = input.clone();
        for (name, spec) in &self.layers {
            s = layer_out_shape(spec, &s)
                .map_err(|e| Error::Shape(format!("at layer '{name}': {e}")))?;
        }
        Ok(s)
    }

    pub fn forward<T: Scalar>(
        &self,
        params: &ModelParams<T>,
        x: Tensor<T>,
    ) -> Result<(Tensor<T>, ChainCache<T>)> {
        let mut cur = x;
        let mut items = Vec::with_capacity(self.layers.len());
        for (name, spec) in &self.layers {
            match spec {
                LayerSpec::Conv2d(c) => {
                    let (y, cache) = conv2d_forward(c, params.get(name)?, &cur)?;
                    cur = y;
                    items.push(LayerCache::Conv(cache));
                }
                LayerSpec::Dense(d) => {
                    let (y, cache) = dense_forward(d, params.get(name)?, &cur)?;
                    cur = y;
                    items.push(LayerCache::Dense(cache));
                }
                LayerSpec::Relu => {
                    let (y, cache) = relu(&cur);
                    cur = y;
                    items.push(LayerCache::Relu(cache));
                }
                LayerSpec::MaxPool2 => {
                    let (y, cache) = maxpool2(&cur)?;
                    cur = y;
                    items.push(LayerCache::Pool(cache));
                }
                LayerSpec::Flatten => {
                    let (y, cache) = flatten(&cur)?;
                    cur = y;
                    items.push(LayerCache::Flatten(cache));
                }
                other => {
                    return Err(Error::Argument(format!(
                        "layer '{name}' ({other:?}) cannot appear in a chain"
                    )))
                }
            }
        }
        Ok((cur, ChainCache { items }))
    }

    /// Walks the chain in reverse, inserting each parameterised layer's
    /// gradients into `grads` and returning the input gradient.
    pub fn backward<T: Scalar>(
        &self,
        params: &ModelParams<T>,
        cache: ChainCache<T>,
        dy: Tensor<T>,
        grads: &mut ModelGrads<T>,
    ) -> Result<Tensor<T>> {
        let mut cur = dy;
        for ((name, spec), item) in self.layers.iter().zip(cache.items).rev() {
            match (spec, item) {
                (LayerSpec::Conv2d(c), LayerCache::Conv(cc)) => {
                    let (dx, dw, db) = conv2d_backward(c, params.get(name)?, cc, &cur)?;
                    grads.insert(name.clone(), LayerParams { weights: dw, bias: db });
                    cur = dx;
                }
                (LayerSpec::Dense(d), LayerCache::Dense(dc)) => {
                    let (dx, dw, db) = dense_backward(d, params.get(name)?, dc, &cur)?;
                    grads.insert(name.clone(), LayerParams { weights: dw, bias: db });
                    cur = dx;
                }
                (LayerSpec::Relu, LayerCache::Relu(rc)) => {
                    cur = relu_backward(rc, &cur)?;
                }
                (LayerSpec::MaxPool2, LayerCache::Pool(pc)) => {
                    cur = maxpool2_backward(pc, &cur)?;
                }
                (LayerSpec::Flatten, LayerCache::Flatten(fc)) => {
                    cur = flatten_backward(fc, &cur)?;
                }
                (spec, _) => {
                    return Err(Error::Argument(format!(
                        "cache does not match layer '{name}' ({spec:?})"
                    )))
                }
            }
        }
        Ok(cur)
    }
}

fn layer_out_shape(spec: &LayerSpec, input: &Shape) -> Result<Shape> {
    match spec {
        LayerSpec::Conv2d(c) => {
            if input.rank() != 3 {
                return Err(Error::Shape(format!("conv input must be rank-3, got {input}")));
            }
            let (ch, h, w) = (input.dims()[0], input.dims()[1], input.dims()[2]);
            if ch != c.in_ch {
                return Err(Error::Shape(format!(
                    "conv expects {} channels, got {ch}",
                    c.in_ch
                )));
            }
            if h + 2 * c.pad < c.kernel || w + 2 * c.pad < c.kernel {
                return Err(Error::Shape(format!(
                    "spatial {h}x{w} too small for kernel {}",
                    c.kernel
                )));
            }
            Shape::new([c.out_ch, c.out_extent(h), c.out_extent(w)])
        }
        LayerSpec::Dense(d) => {
            if input.rank() != 1 || input.len() != d.in_features {
                return Err(Error::Shape(format!(
                    "dense expects rank-1 length {}, got {input}",
                    d.in_features
                )));
            }
            Shape::new([d.out_features])
        }
        LayerSpec::Relu => Ok(input.clone()),
        LayerSpec::MaxPool2 => {
            if input.rank() != 3 {
                return Err(Error::Shape(format!("pool input must be rank-3, got {input}")));
            }
            let (c, h, w) = (input.dims()[0], input.dims()[1], input.dims()[2]);
            if h % 2 != 0 || w % 2 != 0 {
                return Err(Error::Shape(format!("pool needs even spatial dims, got {h}x{w}")));
            }
            Shape::new([c, h / 2, w / 2])
        }
        LayerSpec::Flatten => Shape::new([input.len()]),
        other => Err(Error::Shape(format!("no chain shape rule for {other:?}"))),
    }
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

/// Stream id base for per-layer init streams, so data and init draws never
/// collide.
const INIT_STREAM_BASE: u64 = 0x1000_0000;

fn fovea_trunk_layout(cfg: &FoveaConfig) -> Vec<(String, LayerSpec)> {
    let mut layers = Vec::new();
    let mut in_ch = cfg.in_channels;
    let mut block = 1;
    let mut idx = 1;
    for stage in &cfg.conv_plan {
        match stage {
            FoveaStage::Conv(out_ch) => {
                layers.push((
                    format!("fovea.conv{block}_{idx}"),
                    LayerSpec::Conv2d(ConvSpec::same(in_ch, *out_ch, 3, 1)),
                ));
                layers.push((format!("fovea.relu{block}_{idx}"), LayerSpec::Relu));
                in_ch = *out_ch;
                idx += 1;
            }
            FoveaStage::Pool => {
                layers.push((format!("fovea.pool{block}"), LayerSpec::MaxPool2));
                block += 1;
                idx = 1;
            }
        }
    }
    layers.push(("fovea.flatten".into(), LayerSpec::Flatten));
    let grid = cfg.final_grid_side();
    let flat = grid * grid * in_ch;
    layers.push((
        "fovea.fc1".into(),
        LayerSpec::Dense(DenseSpec::new(flat, cfg.fc1)),
    ));
    layers.push(("fovea.relu_fc1".into(), LayerSpec::Relu));
    layers.push((
        "fovea.fc2".into(),
        LayerSpec::Dense(DenseSpec::new(cfg.fc1, cfg.fc2)),
    ));
    layers.push(("fovea.relu_fc2".into(), LayerSpec::Relu));
    layers
}

fn periphery_trunk_layout(cfg: &PeripheryConfig) -> Vec<(String, LayerSpec)> {
    let mut layers = Vec::new();
    let mut in_ch = cfg.in_channels;
    for (i, l) in cfg.layers.iter().enumerate() {
        layers.push((
            format!("periphery.conv{}", i + 1),
            LayerSpec::Conv2d(ConvSpec::same(in_ch, l.out_ch, l.kernel, l.stride)),
        ));
        layers.push((format!("periphery.relu{}", i + 1), LayerSpec::Relu));
        in_ch = l.out_ch;
    }
    layers.push(("periphery.flatten".into(), LayerSpec::Flatten));
    layers
}

/// Initialises every parameterised layer of `layout`; each layer draws from
/// its own rng substream keyed by position, so initialisation is
/// deterministic per (seed, layer index).
fn init_layout<T: Scalar>(
    layout: &[(String, LayerSpec)],
    rng: &SeededRng,
    params: &mut ModelParams<T>,
    layer_offset: u64,
) -> Result<u64> {
    let mut index = layer_offset;
    for (name, spec) in layout {
        if spec.has_params() {
            let mut layer_rng = rng.substream(INIT_STREAM_BASE + index);
            params.insert(name.clone(), init_params(spec, &mut layer_rng)?);
            index += 1;
        }
    }
    Ok(index)
}

/// The fovea stream with its own classification head (the baseline model).
#[derive(Debug, Clone)]
pub struct FoveaModel {
    pub cfg: FoveaConfig,
    trunk: Chain,
    classifier: DenseSpec,
}

/// Caches from one [`FoveaModel::forward`].
#[derive(Debug)]
pub struct FoveaCache<T: Scalar> {
    trunk: ChainCache<T>,
    cls: DenseCache<T>,
}

pub const FOVEA_CLASSIFIER: &str = "fovea.classifier";
pub const FUSION_DENSE: &str = "fusion.dense";

impl FoveaModel {
    /// The complete parameter layout including the classifier.
    pub fn param_layout(&self) -> Vec<(String, LayerSpec)> {
        let mut l = self.trunk.layers().to_vec();
        l.push((FOVEA_CLASSIFIER.into(), LayerSpec::Dense(self.classifier)));
        l
    }

    pub fn input_shape(&self) -> Shape {
        Shape::new([self.cfg.in_channels, self.cfg.side, self.cfg.side]).expect("valid dims")
    }

    /// Returns class logits, the fc2 activation (post-ReLU) as embedding,
    /// and the cache for a backward pass.
    pub fn forward<T: Scalar>(
        &self,
        params: &ModelParams<T>,
        image: Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>, FoveaCache<T>)> {
        if image.shape() != &self.input_shape() {
            return Err(Error::Shape(format!(
                "fovea input must be {}, got {}",
                self.input_shape(),
                image.shape()
            )));
        }
        let (emb, trunk_cache) = self.trunk.forward(params, image)?;
        let (logits, cls_cache) = dense_forward(&self.classifier, params.get(FOVEA_CLASSIFIER)?, &emb)?;
        Ok((
            logits,
            emb,
            FoveaCache {
                trunk: trunk_cache,
                cls: cls_cache,
            },
        ))
    }

    /// Gradients for all parameters plus the input-image gradient.
    pub fn backward<T: Scalar>(
        &self,
        params: &ModelParams<T>,
        cache: FoveaCache<T>,
        dlogits: &Tensor<T>,
    ) -> Result<(ModelGrads<T>, Tensor<T>)> {
        let mut grads = ModelGrads::new();
        let (demb, dw, db) =
            dense_backward(&self.classifier, params.get(FOVEA_CLASSIFIER)?, cache.cls, dlogits)?;
        grads.insert(FOVEA_CLASSIFIER, LayerParams { weights: dw, bias: db });
        let dx = self.trunk.backward(params, cache.trunk, demb, &mut grads)?;
        Ok((grads, dx))
    }
}

/// Builds the fovea baseline: conv blocks with pools, flatten, fc1+ReLU,
/// fc2+ReLU, then a Dense classification head.
pub fn build_fovea<T: Scalar>(cfg: &FoveaConfig, rng: &SeededRng) -> Result<(FoveaModel, ModelParams<T>)> {
    cfg.validate()?;
    let layout = fovea_trunk_layout(cfg);
    let trunk = Chain { layers: layout };
    // Validate wiring.
    let emb_shape = trunk.out_shape(&Shape::new([cfg.in_channels, cfg.side, cfg.side])?)?;
    debug_assert_eq!(emb_shape.dims(), &[cfg.fc2]);
    let classifier = DenseSpec::new(cfg.fc2, cfg.num_classes);
    let mut params = ModelParams::new();
    let next = init_layout(trunk.layers(), rng, &mut params, 0)?;
    let mut cls_rng = rng.substream(INIT_STREAM_BASE + next);
    params.insert(
        FOVEA_CLASSIFIER,
        init_params(&LayerSpec::Dense(classifier), &mut cls_rng)?,
    );
    Ok((
        FoveaModel {
            cfg: cfg.clone(),
            trunk,
            classifier,
        },
        params,
    ))
}

/// The periphery trunk alone: 8 conv+ReLU layers then Flatten. The fusion
/// dense lives in the fused model.
pub fn build_periphery<T: Scalar>(
    cfg: &PeripheryConfig,
    rng: &SeededRng,
) -> Result<(Chain, ModelParams<T>)> {
    cfg.validate()?;
    let chain = Chain {
        layers: periphery_trunk_layout(cfg),
    };
    let out = chain.out_shape(&Shape::new([cfg.in_channels, cfg.side, cfg.side])?)?;
    debug_assert_eq!(out.len(), cfg.flatten_len());
    let mut params = ModelParams::new();
    init_layout(chain.layers(), rng, &mut params, 0)?;
    Ok((chain, params))
}

/// The fused dual-stream model. The fovea trunk runs up to and including
/// fc2+ReLU (its standalone classifier is absent); the periphery trunk runs
/// through flatten; their concatenation feeds one fusion dense of length K.
#[derive(Debug, Clone)]
pub struct GistNetModel {
    pub cfg: GistNetConfig,
    fovea_trunk: Chain,
    periphery_trunk: Chain,
    fusion: DenseSpec,
}

/// Caches from one [`GistNetModel::forward`].
#[derive(Debug)]
pub struct GistCache<T: Scalar> {
    fovea: ChainCache<T>,
    periphery: ChainCache<T>,
    concat: ConcatCache,
    fusion: DenseCache<T>,
}

impl GistNetModel {
    pub fn param_layout(&self) -> Vec<(String, LayerSpec)> {
        let mut l = self.fovea_trunk.layers().to_vec();
        l.extend(self.periphery_trunk.layers().to_vec());
        l.push((FUSION_DENSE.into(), LayerSpec::Dense(self.fusion)));
        l
    }

    pub fn fovea_input_shape(&self) -> Shape {
        Shape::new([
            self.cfg.fovea.in_channels,
            self.cfg.fovea.side,
            self.cfg.fovea.side,
        ])
        .expect("valid dims")
    }

    pub fn context_input_shape(&self) -> Shape {
        Shape::new([
            self.cfg.periphery.in_channels,
            self.cfg.periphery.side,
            self.cfg.periphery.side,
        ])
        .expect("valid dims")
    }

    /// Returns class logits, the periphery embedding (the flatten output,
    /// the last periphery-only representation), and the backward cache.
    pub fn forward<T: Scalar>(
        &self,
        params: &ModelParams<T>,
        fovea_image: Tensor<T>,
        context_image: Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>, GistCache<T>)> {
        if fovea_image.shape() != &self.fovea_input_shape() {
            return Err(Error::Shape(format!(
                "fovea input must be {}, got {}",
                self.fovea_input_shape(),
                fovea_image.shape()
            )));
        }
        if context_image.shape() != &self.context_input_shape() {
            return Err(Error::Shape(format!(
                "context input must be {}, got {}",
                self.context_input_shape(),
                context_image.shape()
            )));
        }
        let (fovea_emb, fovea_cache) = self.fovea_trunk.forward(params, fovea_image)?;
        let (peri_emb, peri_cache) = self.periphery_trunk.forward(params, context_image)?;
        // Periphery flatten first, fovea fc2 second.
        let (fused, concat_cache) = concat2(&peri_emb, &fovea_emb)?;
        let (logits, fusion_cache) = dense_forward(&self.fusion, params.get(FUSION_DENSE)?, &fused)?;
        Ok((
            logits,
            peri_emb,
            GistCache {
                fovea: fovea_cache,
                periphery: peri_cache,
                concat: concat_cache,
                fusion: fusion_cache,
            },
        ))
    }

    /// Gradients for all parameters plus both input-image gradients
    /// (fovea, context).
    pub fn backward<T: Scalar>(
        &self,
        params: &ModelParams<T>,
        cache: GistCache<T>,
        dlogits: &Tensor<T>,
    ) -> Result<(ModelGrads<T>, Tensor<T>, Tensor<T>)> {
        let mut grads = ModelGrads::new();
        let (dfused, dw, db) =
            dense_backward(&self.fusion, params.get(FUSION_DENSE)?, cache.fusion, dlogits)?;
        grads.insert(FUSION_DENSE, LayerParams { weights: dw, bias: db });
        let (dperi, dfovea_emb) = concat2_backward(cache.concat, &dfused)?;
        let dx_fovea = self
            .fovea_trunk
            .backward(params, cache.fovea, dfovea_emb, &mut grads)?;
        let dx_ctx = self
            .periphery_trunk
            .backward(params, cache.periphery, dperi, &mut grads)?;
        Ok((grads, dx_fovea, dx_ctx))
    }
}

/// Builds the fused model with deterministic per-layer initialisation.
pub fn build_gistnet<T: Scalar>(
    cfg: &GistNetConfig,
    rng: &SeededRng,
) -> Result<(GistNetModel, ModelParams<T>)> {
    cfg.validate()?;
    let fovea_trunk = Chain {
        layers: fovea_trunk_layout(&cfg.fovea),
    };
    let periphery_trunk = Chain {
        layers: periphery_trunk_layout(&cfg.periphery),
    };
    let emb = fovea_trunk.out_shape(&Shape::new([
        cfg.fovea.in_channels,
        cfg.fovea.side,
        cfg.fovea.side,
    ])?)?;
    let flat = periphery_trunk.out_shape(&Shape::new([
        cfg.periphery.in_channels,
        cfg.periphery.side,
        cfg.periphery.side,
    ])?)?;
    let fusion = DenseSpec::new(flat.len() + emb.len(), cfg.fovea.num_classes);
    let mut params = ModelParams::new();
    let next = init_layout(fovea_trunk.layers(), rng, &mut params, 0)?;
    let next = init_layout(periphery_trunk.layers(), rng, &mut params, next)?;
    let mut fusion_rng = rng.substream(INIT_STREAM_BASE + next);
    params.insert(
        FUSION_DENSE,
        init_params(&LayerSpec::Dense(fusion), &mut fusion_rng)?,
    );
    Ok((
        GistNetModel {
            cfg: cfg.clone(),
            fovea_trunk,
            periphery_trunk,
            fusion,
        },
        params,
    ))
}
