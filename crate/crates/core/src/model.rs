//! The dual-tower classifier: a pre-activation bottleneck CNN over causal
//! images, a graph-convolution + SortPooling tower over enclosing subgraphs,
//! an embedding-fusion head, the training loop and whole-graph inference.
//!
//! Known pairs are never re-predicted: inference copies their labels through
//! unchanged and only novel pairs receive network scores.

use std::cell::RefCell;
use std::collections::HashMap;
use std::path::Path;
use std::rc::Rc;

use d2cl_nn::layers::{self, BnStats};
use d2cl_nn::loss::{bce_with_logits, sigmoid};
use d2cl_nn::optim::{adam_step, AdamState, ParamId, ParamSet, PlateauSchedule};
use d2cl_nn::{conv, init, ops, Real, Tape, Tensor, Value};
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::CoreError;
use crate::graph::{DirectedGraph, KnowledgeSet, PairIndex};
use crate::kde::{data_axis, kde_channel, positional_channels, silverman_bandwidth, GridSpec};
use crate::rng::{derive_seed, seeded_rng, streams};
use crate::subgraph::{drnl_labels, encode_features, extract_1hop, feature_width};

/// Which towers are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TowerMode {
    CnnOnly,
    GnnOnly,
    Dual,
}

impl std::str::FromStr for TowerMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cnn" | "cnn-only" => Ok(TowerMode::CnnOnly),
            "gnn" | "gnn-only" => Ok(TowerMode::GnnOnly),
            "dual" => Ok(TowerMode::Dual),
            other => Err(CoreError::Schema(format!("unknown tower mode {:?}", other))),
        }
    }
}

/// Image tower: stem conv, five stages of pre-activation bottleneck blocks,
/// global average pooling and a fully connected head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnTowerConfig {
    /// Blocks per stage; five stages.
    pub stage_blocks: Vec<usize>,
    pub stem_channels: usize,
    /// Output channels per stage; five entries.
    pub stage_widths: Vec<usize>,
    /// Bottleneck mid-width divisor.
    pub bottleneck_ratio: usize,
    pub embedding: usize,
    pub head_hidden: usize,
}

impl CnnTowerConfig {
    /// Small preset that trains in minutes on a few CPU cores.
    pub fn desk() -> Self {
        Self {
            stage_blocks: vec![1, 1, 1, 1, 1],
            stem_channels: 8,
            stage_widths: vec![8, 16, 32, 64, 128],
            bottleneck_ratio: 2,
            embedding: 64,
            head_hidden: 96,
        }
    }

    /// Full-size preset; far beyond desk-scale training budgets.
    pub fn paper_scale() -> Self {
        Self {
            stage_blocks: vec![3, 4, 6, 3, 3],
            stem_channels: 64,
            stage_widths: vec![64, 128, 256, 512, 512],
            bottleneck_ratio: 4,
            embedding: 64,
            head_hidden: 256,
        }
    }
}

/// Subgraph tower: four graph-conv layers, SortPooling, two 1-D convolutions
/// and a fully connected readout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnnTowerConfig {
    /// Widths of the four graph-conv layers; the final width-1 layer is the
    /// SortPooling key channel.
    pub layer_widths: Vec<usize>,
    pub sortpool_k: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub conv2_kernel: usize,
    pub embedding: usize,
}

impl Default for GnnTowerConfig {
    fn default() -> Self {
        Self {
            layer_widths: vec![32, 32, 32, 1],
            sortpool_k: 16,
            conv1_channels: 16,
            conv2_channels: 32,
            conv2_kernel: 5,
            embedding: 64,
        }
    }
}

/// Fully connected fusion stack ending in a single logit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub hidden: Vec<usize>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { hidden: vec![128, 32] }
    }
}

/// Pair featurization knobs shared by both towers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeaturizerConfig {
    pub grid_resolution: usize,
    pub max_label: u32,
    pub data_features: bool,
    pub shuffle_seed: u64,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        Self {
            grid_resolution: 32,
            max_label: 10,
            data_features: true,
            shuffle_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: TowerMode,
    pub cnn: CnnTowerConfig,
    pub gnn: GnnTowerConfig,
    pub fusion: FusionConfig,
    pub featurizer: FeaturizerConfig,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn desk(mode: TowerMode, init_seed: u64) -> Self {
        Self {
            mode,
            cnn: CnnTowerConfig::desk(),
            gnn: GnnTowerConfig::default(),
            fusion: FusionConfig::default(),
            featurizer: FeaturizerConfig::default(),
            init_seed,
        }
    }

    fn validate(&self) -> Result<(), CoreError> {
        if self.cnn.stage_blocks.len() != 5 || self.cnn.stage_widths.len() != 5 {
            return Err(CoreError::Schema(
                "CNN tower needs exactly five stages (blocks and widths)".into(),
            ));
        }
        if self.gnn.layer_widths.len() != 4 {
            return Err(CoreError::Schema(
                "GNN tower needs exactly four graph-conv layers".into(),
            ));
        }
        if *self.gnn.layer_widths.last().unwrap() != 1 {
            return Err(CoreError::Schema(
                "the final graph-conv layer must have width 1 (SortPooling key)".into(),
            ));
        }
        if self.gnn.sortpool_k < self.gnn.conv2_kernel {
            return Err(CoreError::Schema(format!(
                "sortpool k={} must be at least the second conv kernel {}",
                self.gnn.sortpool_k, self.gnn.conv2_kernel
            )));
        }
        if self.fusion.hidden.is_empty() {
            return Err(CoreError::Schema("fusion head needs hidden layers".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Architecture: layer structs referencing positions in the ParamSet.
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
struct Conv2dLayer {
    w: ParamId,
    stride: usize,
    pad: usize,
}

#[derive(Clone, Debug)]
struct Conv1dLayer {
    w: ParamId,
    b: ParamId,
    stride: usize,
}

#[derive(Clone, Debug)]
struct LinearLayer {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct BnLayer {
    gamma: ParamId,
    beta: ParamId,
    stats: usize,
}

#[derive(Clone, Debug)]
struct PreluLayer {
    a: ParamId,
}

#[derive(Clone, Debug)]
struct Bottleneck {
    bn1: BnLayer,
    act1: PreluLayer,
    conv_down: Conv2dLayer,
    bn2: BnLayer,
    act2: PreluLayer,
    conv_mid: Conv2dLayer,
    bn3: BnLayer,
    act3: PreluLayer,
    conv_up: Conv2dLayer,
    projection: Option<Conv2dLayer>,
}

#[derive(Clone, Debug)]
struct CnnTower {
    stem: Conv2dLayer,
    stem_bias: ParamId,
    stages: Vec<Vec<Bottleneck>>,
    final_bn: BnLayer,
    final_act: PreluLayer,
    head1: LinearLayer,
    head_act: PreluLayer,
    head2: LinearLayer,
}

#[derive(Clone, Debug)]
struct GnnTower {
    gconv: Vec<ParamId>,
    conv1: Conv1dLayer,
    act1: PreluLayer,
    conv2: Conv1dLayer,
    act2: PreluLayer,
    fc: LinearLayer,
    feature_width: usize,
}

#[derive(Clone, Debug)]
struct FusionHead {
    layers: Vec<(LinearLayer, PreluLayer)>,
    out: LinearLayer,
}

#[derive(Clone, Debug)]
struct Architecture {
    cnn: Option<CnnTower>,
    gnn: Option<GnnTower>,
    fusion: FusionHead,
}

struct Builder<F: Real> {
    params: ParamSet<F>,
    bn_count: usize,
    rng: rand_chacha::ChaCha8Rng,
}

impl<F: Real> Builder<F> {
    fn conv2d(&mut self, name: &str, c_out: usize, c_in: usize, k: usize, stride: usize, pad: usize) -> Conv2dLayer {
        let w = self.params.push(
            format!("{}.w", name),
            init::he_normal(&[c_out, c_in, k, k], c_in * k * k, &mut self.rng),
        );
        Conv2dLayer { w, stride, pad }
    }

    fn conv1d(&mut self, name: &str, c_out: usize, c_in: usize, k: usize, stride: usize) -> Conv1dLayer {
        let w = self.params.push(
            format!("{}.w", name),
            init::he_normal(&[c_out, c_in, k], c_in * k, &mut self.rng),
        );
        let b = self.params.push(format!("{}.b", name), Tensor::zeros(&[c_out]));
        Conv1dLayer { w, b, stride }
    }

    fn linear(&mut self, name: &str, d_in: usize, d_out: usize) -> LinearLayer {
        let w = self.params.push(
            format!("{}.w", name),
            init::he_normal(&[d_in, d_out], d_in, &mut self.rng),
        );
        let b = self.params.push(format!("{}.b", name), Tensor::zeros(&[d_out]));
        LinearLayer { w, b }
    }

    fn batch_norm(&mut self, name: &str, channels: usize) -> BnLayer {
        let gamma = self
            .params
            .push(format!("{}.gamma", name), Tensor::full(&[channels], F::ONE));
        let beta = self
            .params
            .push(format!("{}.beta", name), Tensor::zeros(&[channels]));
        let stats = self.bn_count;
        self.bn_count += 1;
        BnLayer { gamma, beta, stats }
    }

    fn prelu(&mut self, name: &str, channels: usize) -> PreluLayer {
        let a = self.params.push(
            format!("{}.a", name),
            Tensor::full(&[channels], F::from_f64(0.25)),
        );
        PreluLayer { a }
    }
}

/// Spatial schedule: the first block of each stage halves the spatial extent,
/// except stage one and any stage where halving would drop below 1x1.
fn stage_strides(resolution: usize) -> Vec<usize> {
    let mut spatial = resolution;
    (0..5)
        .map(|stage| {
            if stage == 0 || spatial < 2 {
                1
            } else {
                spatial /= 2;
                2
            }
        })
        .collect()
}

fn build_cnn<F: Real>(b: &mut Builder<F>, cfg: &CnnTowerConfig, resolution: usize) -> CnnTower {
    let strides = stage_strides(resolution);
    let stem = b.conv2d("cnn.stem", cfg.stem_channels, 3, 3, 1, 1);
    let stem_bias = b
        .params
        .push("cnn.stem.b".to_string(), Tensor::zeros(&[cfg.stem_channels]));
    let mut stages = Vec::with_capacity(5);
    let mut c_in = cfg.stem_channels;
    for stage in 0..5 {
        let c_out = cfg.stage_widths[stage];
        let mid = (c_out / cfg.bottleneck_ratio).max(1);
        let mut blocks = Vec::with_capacity(cfg.stage_blocks[stage]);
        for block in 0..cfg.stage_blocks[stage] {
            let stride = if block == 0 { strides[stage] } else { 1 };
            let name = format!("cnn.s{}.b{}", stage, block);
            let bn1 = b.batch_norm(&format!("{}.bn1", name), c_in);
            let act1 = b.prelu(&format!("{}.act1", name), c_in);
            let conv_down = b.conv2d(&format!("{}.down", name), mid, c_in, 1, 1, 0);
            let bn2 = b.batch_norm(&format!("{}.bn2", name), mid);
            let act2 = b.prelu(&format!("{}.act2", name), mid);
            let conv_mid = b.conv2d(&format!("{}.mid", name), mid, mid, 3, stride, 1);
            let bn3 = b.batch_norm(&format!("{}.bn3", name), mid);
            let act3 = b.prelu(&format!("{}.act3", name), mid);
            let conv_up = b.conv2d(&format!("{}.up", name), c_out, mid, 1, 1, 0);
            let projection = (stride != 1 || c_in != c_out)
                .then(|| b.conv2d(&format!("{}.proj", name), c_out, c_in, 1, stride, 0));
            blocks.push(Bottleneck {
                bn1,
                act1,
                conv_down,
                bn2,
                act2,
                conv_mid,
                bn3,
                act3,
                conv_up,
                projection,
            });
            c_in = c_out;
        }
        stages.push(blocks);
    }
    let final_bn = b.batch_norm("cnn.final.bn", c_in);
    let final_act = b.prelu("cnn.final.act", c_in);
    let head1 = b.linear("cnn.head1", c_in, cfg.head_hidden);
    let head_act = b.prelu("cnn.head.act", 1);
    let head2 = b.linear("cnn.head2", cfg.head_hidden, cfg.embedding);
    CnnTower {
        stem,
        stem_bias,
        stages,
        final_bn,
        final_act,
        head1,
        head_act,
        head2,
    }
}

fn build_gnn<F: Real>(b: &mut Builder<F>, cfg: &GnnTowerConfig, node_feature_width: usize) -> GnnTower {
    let mut gconv = Vec::with_capacity(4);
    let mut width = node_feature_width;
    for (layer, &out) in cfg.layer_widths.iter().enumerate() {
        gconv.push(
            b.params.push(
                format!("gnn.gc{}.w", layer),
                init::he_normal(&[width, out], width, &mut b.rng),
            ),
        );
        width = out;
    }
    let total_width: usize = cfg.layer_widths.iter().sum();
    let conv1 = b.conv1d("gnn.conv1", cfg.conv1_channels, 1, total_width, total_width);
    let act1 = b.prelu("gnn.conv1.act", cfg.conv1_channels);
    let conv2 = b.conv1d("gnn.conv2", cfg.conv2_channels, cfg.conv1_channels, cfg.conv2_kernel, 1);
    let act2 = b.prelu("gnn.conv2.act", cfg.conv2_channels);
    let flat = cfg.conv2_channels * (cfg.sortpool_k - cfg.conv2_kernel + 1);
    let fc = b.linear("gnn.fc", flat, cfg.embedding);
    GnnTower {
        gconv,
        conv1,
        act1,
        conv2,
        act2,
        fc,
        feature_width: node_feature_width,
    }
}

fn build_fusion<F: Real>(b: &mut Builder<F>, cfg: &FusionConfig, input_width: usize) -> FusionHead {
    let mut layers = Vec::with_capacity(cfg.hidden.len());
    let mut width = input_width;
    for (idx, &hidden) in cfg.hidden.iter().enumerate() {
        let linear = b.linear(&format!("fusion.fc{}", idx), width, hidden);
        let act = b.prelu(&format!("fusion.fc{}.act", idx), 1);
        layers.push((linear, act));
        width = hidden;
    }
    let out = b.linear("fusion.out", width, 1);
    FusionHead { layers, out }
}

fn build_architecture<F: Real>(
    config: &ModelConfig,
) -> Result<(Architecture, ParamSet<F>, usize), CoreError> {
    config.validate()?;
    let mut b = Builder {
        params: ParamSet::new(),
        bn_count: 0,
        rng: seeded_rng(config.init_seed, streams::INIT),
    };
    let node_width = feature_width(config.featurizer.max_label, config.featurizer.data_features);
    let cnn = matches!(config.mode, TowerMode::CnnOnly | TowerMode::Dual)
        .then(|| build_cnn(&mut b, &config.cnn, config.featurizer.grid_resolution));
    let gnn = matches!(config.mode, TowerMode::GnnOnly | TowerMode::Dual)
        .then(|| build_gnn(&mut b, &config.gnn, node_width));
    let fusion_width = match config.mode {
        TowerMode::CnnOnly => config.cnn.embedding,
        TowerMode::GnnOnly => config.gnn.embedding,
        TowerMode::Dual => config.cnn.embedding + config.gnn.embedding,
    };
    let fusion = build_fusion(&mut b, &config.fusion, fusion_width);
    let arch = Architecture { cnn, gnn, fusion };
    Ok((arch, b.params, b.bn_count))
}

/// Everything trainable plus optimizer and schedule state.
pub struct ModelState<F: Real = f32> {
    pub config: ModelConfig,
    arch: Architecture,
    pub params: ParamSet<F>,
    pub bn_stats: Vec<BnStats<F>>,
    pub adam: AdamState<F>,
    pub schedule: PlateauSchedule,
    pub epoch: usize,
}

impl<F: Real> ModelState<F> {
    pub fn new(config: ModelConfig) -> Result<Self, CoreError> {
        let (arch, params, bn_count) = build_architecture::<F>(&config)?;
        let bn_stats = (0..bn_count)
            .map(|_| {
                // Channel count comes from the gamma shape of the matching layer;
                // recovered below.
                BnStats::new(1)
            })
            .collect::<Vec<_>>();
        let mut state = Self {
            adam: AdamState::new(&params),
            schedule: PlateauSchedule::default(),
            epoch: 0,
            config,
            arch,
            params,
            bn_stats,
        };
        state.reset_bn_stats();
        Ok(state)
    }

    fn reset_bn_stats(&mut self) {
        let mut stats = vec![BnStats::new(1); self.bn_stats.len()];
        let mut assign = |layer: &BnLayer, params: &ParamSet<F>| {
            let channels = params.get(layer.gamma).len();
            stats[layer.stats] = BnStats::new(channels);
        };
        if let Some(cnn) = &self.arch.cnn {
            for stage in &cnn.stages {
                for block in stage {
                    assign(&block.bn1, &self.params);
                    assign(&block.bn2, &self.params);
                    assign(&block.bn3, &self.params);
                }
            }
            assign(&cnn.final_bn, &self.params);
        }
        self.bn_stats = stats;
    }

    pub fn mode(&self) -> TowerMode {
        self.config.mode
    }

    pub fn param_count(&self) -> usize {
        self.params.value_count()
    }
}

// ---------------------------------------------------------------------------
// Forward passes.
// ---------------------------------------------------------------------------

const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;

fn linear_fwd<F: Real>(
    tape: &Tape<F>,
    pv: &[Value],
    layer: &LinearLayer,
    x: Value,
) -> Result<Value, CoreError> {
    let h = ops::matmul(tape, x, pv[layer.w.0]).map_err(CoreError::Engine)?;
    ops::add_bias_row(tape, h, pv[layer.b.0]).map_err(CoreError::Engine)
}

#[allow(clippy::too_many_arguments)]
fn bn_fwd<F: Real>(
    tape: &Tape<F>,
    pv: &[Value],
    layer: &BnLayer,
    x: Value,
    training: bool,
    bn: &mut [BnStats<F>],
) -> Result<Value, CoreError> {
    layers::batch_norm(
        tape,
        x,
        pv[layer.gamma.0],
        pv[layer.beta.0],
        &mut bn[layer.stats],
        training,
        F::from_f64(BN_MOMENTUM),
        F::from_f64(BN_EPS),
    )
    .map_err(CoreError::Engine)
}

fn bottleneck_fwd<F: Real>(
    tape: &Tape<F>,
    pv: &[Value],
    block: &Bottleneck,
    x: Value,
    training: bool,
    bn: &mut [BnStats<F>],
) -> Result<Value, CoreError> {
    let pre = bn_fwd(tape, pv, &block.bn1, x, training, bn)?;
    let pre = layers::prelu(tape, pre, pv[block.act1.a.0]);
    // The projection shortcut reads the pre-activated input; the identity
    // shortcut reads the raw input.
    let shortcut = match &block.projection {
        Some(proj) => conv::conv2d(tape, pre, pv[proj.w.0], proj.stride, proj.pad)
            .map_err(CoreError::Engine)?,
        None => x,
    };
    let h = conv::conv2d(tape, pre, pv[block.conv_down.w.0], 1, 0).map_err(CoreError::Engine)?;
    let h = bn_fwd(tape, pv, &block.bn2, h, training, bn)?;
    let h = layers::prelu(tape, h, pv[block.act2.a.0]);
    let h = conv::conv2d(tape, h, pv[block.conv_mid.w.0], block.conv_mid.stride, 1)
        .map_err(CoreError::Engine)?;
    let h = bn_fwd(tape, pv, &block.bn3, h, training, bn)?;
    let h = layers::prelu(tape, h, pv[block.act3.a.0]);
    let h = conv::conv2d(tape, h, pv[block.conv_up.w.0], 1, 0).map_err(CoreError::Engine)?;
    Ok(ops::add(tape, h, shortcut))
}

fn cnn_forward<F: Real>(
    tape: &Tape<F>,
    pv: &[Value],
    tower: &CnnTower,
    images: Value,
    training: bool,
    bn: &mut [BnStats<F>],
) -> Result<Value, CoreError> {
    let h = conv::conv2d(tape, images, pv[tower.stem.w.0], 1, 1).map_err(CoreError::Engine)?;
    let mut h = ops::add_bias_chan(tape, h, pv[tower.stem_bias.0]).map_err(CoreError::Engine)?;
    for stage in &tower.stages {
        for block in stage {
            h = bottleneck_fwd(tape, pv, block, h, training, bn)?;
        }
    }
    let h = bn_fwd(tape, pv, &tower.final_bn, h, training, bn)?;
    let h = layers::prelu(tape, h, pv[tower.final_act.a.0]);
    let h = layers::global_avg_pool2d(tape, h).map_err(CoreError::Engine)?;
    let h = linear_fwd(tape, pv, &tower.head1, h)?;
    let h = layers::prelu(tape, h, pv[tower.head_act.a.0]);
    linear_fwd(tape, pv, &tower.head2, h)
}

fn gnn_forward_single<F: Real>(
    tape: &Tape<F>,
    pv: &[Value],
    tower: &GnnTower,
    cfg: &GnnTowerConfig,
    sg: &SubgraphFeatures,
) -> Result<Value, CoreError> {
    let m = sg.node_count;
    let feats = Tensor::new(
        vec![m, tower.feature_width],
        sg.features.iter().map(|&v| F::from_f64(v)).collect(),
    );
    let adj = Tensor::new(
        vec![m, m],
        sg.norm_adjacency.iter().map(|&v| F::from_f64(v)).collect(),
    );
    let adj_v = tape.constant(adj);
    let mut z = tape.constant(feats);
    let mut layer_outputs = Vec::with_capacity(tower.gconv.len());
    for &w in &tower.gconv {
        z = layers::graph_conv(tape, adj_v, z, pv[w.0]).map_err(CoreError::Engine)?;
        layer_outputs.push(z);
    }
    let zc = ops::concat_cols(tape, &layer_outputs).map_err(CoreError::Engine)?;
    let pooled = layers::sort_pool(tape, zc, cfg.sortpool_k);
    let total_width: usize = cfg.layer_widths.iter().sum();
    let seq = ops::reshape(tape, pooled, vec![1, 1, cfg.sortpool_k * total_width]);
    let c = conv::conv1d(tape, seq, pv[tower.conv1.w.0], tower.conv1.stride)
        .map_err(CoreError::Engine)?;
    let c = ops::add_bias_chan(tape, c, pv[tower.conv1.b.0]).map_err(CoreError::Engine)?;
    let c = layers::prelu(tape, c, pv[tower.act1.a.0]);
    let c = conv::conv1d(tape, c, pv[tower.conv2.w.0], tower.conv2.stride)
        .map_err(CoreError::Engine)?;
    let c = ops::add_bias_chan(tape, c, pv[tower.conv2.b.0]).map_err(CoreError::Engine)?;
    let c = layers::prelu(tape, c, pv[tower.act2.a.0]);
    let flat_len = cfg.conv2_channels * (cfg.sortpool_k - cfg.conv2_kernel + 1);
    let flat = ops::reshape(tape, c, vec![1, flat_len]);
    let e = linear_fwd(tape, pv, &tower.fc, flat)?;
    Ok(ops::reshape(tape, e, vec![cfg.embedding]))
}

fn fusion_forward<F: Real>(
    tape: &Tape<F>,
    pv: &[Value],
    head: &FusionHead,
    x: Value,
) -> Result<Value, CoreError> {
    let mut h = x;
    for (linear, act) in &head.layers {
        h = linear_fwd(tape, pv, linear, h)?;
        h = layers::prelu(tape, h, pv[act.a.0]);
    }
    linear_fwd(tape, pv, &head.out, h)
}

// ---------------------------------------------------------------------------
// Pair featurization with per-run caches.
// ---------------------------------------------------------------------------

/// Node features plus normalized propagation matrix of one enclosing
/// subgraph, ready for the GNN tower.
pub struct SubgraphFeatures {
    pub node_count: usize,
    /// Row-major node_count x feature_width.
    pub features: Vec<f64>,
    /// Row-major node_count x node_count.
    pub norm_adjacency: Vec<f64>,
}

struct ColumnPrep {
    bandwidth: f64,
    axis: crate::kde::Axis,
}

/// Featurizes ordered pairs against one dataset and one initial graph,
/// caching per-pair work. Bound to a single thread; independent runs build
/// independent featurizers.
pub struct PairFeaturizer<'a> {
    x: &'a DataMatrix,
    cfg: FeaturizerConfig,
    g0: Option<&'a DirectedGraph>,
    index: PairIndex,
    columns: Vec<Option<ColumnPrep>>,
    positional: Vec<f32>,
    image_cache: RefCell<HashMap<usize, Rc<Vec<f32>>>>,
    subgraph_cache: RefCell<HashMap<usize, Rc<SubgraphFeatures>>>,
}

impl<'a> PairFeaturizer<'a> {
    pub fn new(x: &'a DataMatrix, cfg: FeaturizerConfig, g0: Option<&'a DirectedGraph>) -> Self {
        let grid = GridSpec::new(cfg.grid_resolution);
        let columns = (0..x.n_cols())
            .map(|j| {
                silverman_bandwidth(x.col(j)).ok().map(|bandwidth| ColumnPrep {
                    bandwidth,
                    axis: data_axis(x.col(j), bandwidth),
                })
            })
            .collect();
        let positional = positional_channels(&grid).iter().map(|&v| v as f32).collect();
        Self {
            x,
            index: PairIndex::new(x.n_cols()),
            g0,
            columns,
            positional,
            image_cache: RefCell::new(HashMap::new()),
            subgraph_cache: RefCell::new(HashMap::new()),
            cfg,
        }
    }

    pub fn pair_index(&self) -> PairIndex {
        self.index
    }

    pub fn degenerate_columns(&self) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_none())
            .map(|(j, _)| j)
            .collect()
    }

    /// KDE channel of the pair's causal image (positional channels are shared
    /// and appended at batch-assembly time).
    pub fn image_channel(&self, k: usize) -> Result<Rc<Vec<f32>>, CoreError> {
        if let Some(hit) = self.image_cache.borrow().get(&k) {
            return Ok(hit.clone());
        }
        let (i, j) = self.index.pair_of(k)?;
        let ci = self.columns[i]
            .as_ref()
            .ok_or(CoreError::DegenerateColumn { node: i })?;
        let cj = self.columns[j]
            .as_ref()
            .ok_or(CoreError::DegenerateColumn { node: j })?;
        let channel = kde_channel(
            self.x.col(i),
            self.x.col(j),
            ci.bandwidth,
            cj.bandwidth,
            &ci.axis,
            &cj.axis,
            self.cfg.grid_resolution,
        );
        let channel: Rc<Vec<f32>> = Rc::new(channel.iter().map(|&v| v as f32).collect());
        self.image_cache.borrow_mut().insert(k, channel.clone());
        Ok(channel)
    }

    /// Encoded enclosing subgraph of the pair.
    pub fn subgraph_features(&self, k: usize) -> Result<Rc<SubgraphFeatures>, CoreError> {
        if let Some(hit) = self.subgraph_cache.borrow().get(&k) {
            return Ok(hit.clone());
        }
        let g0 = self.g0.ok_or_else(|| {
            CoreError::Schema("GNN featurization requires an initial graph estimate".into())
        })?;
        let (i, j) = self.index.pair_of(k)?;
        let sg = extract_1hop(g0, i, j, derive_seed(self.cfg.shuffle_seed, k as u64))?;
        let labels = drnl_labels(&sg);
        let data = self.cfg.data_features.then_some(self.x);
        let features = encode_features(&sg, &labels, self.cfg.max_label, data);
        let m = sg.len();
        let undirected = sg.undirected_adjacency();
        let adj = Tensor::new(
            vec![m, m],
            undirected.iter().map(|&v| v as f64).collect(),
        );
        let norm = layers::normalized_adjacency(&adj);
        let out = Rc::new(SubgraphFeatures {
            node_count: m,
            features,
            norm_adjacency: norm.into_data(),
        });
        self.subgraph_cache.borrow_mut().insert(k, out.clone());
        Ok(out)
    }

    /// Stack the causal images of `pairs` into an N x 3 x H x W tensor.
    pub fn images_tensor<F: Real>(&self, pairs: &[usize]) -> Result<Tensor<F>, CoreError> {
        let r = self.cfg.grid_resolution;
        let hw = r * r;
        let mut data = Vec::with_capacity(pairs.len() * 3 * hw);
        for &k in pairs {
            let channel = self.image_channel(k)?;
            data.extend(channel.iter().map(|&v| F::from_f64(v as f64)));
            data.extend(self.positional.iter().map(|&v| F::from_f64(v as f64)));
        }
        Ok(Tensor::new(vec![pairs.len(), 3, r, r], data))
    }

    /// Whether the pair can be featurized for the CNN tower.
    pub fn cnn_usable(&self, k: usize) -> Result<(), CoreError> {
        let (i, j) = self.index.pair_of(k)?;
        if self.columns[i].is_none() {
            return Err(CoreError::DegenerateColumn { node: i });
        }
        if self.columns[j].is_none() {
            return Err(CoreError::DegenerateColumn { node: j });
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Embedding perturbation (failing-tower experiments).
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbTower {
    Cnn,
    Gnn,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbMode {
    /// Replace the tower's embedding with zeros.
    Zero,
    /// Add zero-mean Gaussian noise of the given scale.
    Gauss { sigma: f64 },
}

/// Inference-time corruption of one tower's embedding at the fusion input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPerturbation {
    pub tower: PerturbTower,
    pub mode: PerturbMode,
    pub seed: u64,
}

fn perturb_embedding_value<F: Real>(
    tape: &Tape<F>,
    emb: Value,
    pairs: &[usize],
    perturbation: &EmbeddingPerturbation,
) -> Value {
    let current = tape.value(emb);
    let shape = current.shape().to_vec();
    let width = shape[1];
    match perturbation.mode {
        PerturbMode::Zero => tape.constant(Tensor::zeros(&shape)),
        PerturbMode::Gauss { sigma } => {
            let mut data = current.into_data();
            // One noise stream per pair, so scores do not depend on batching.
            for (row, &k) in pairs.iter().enumerate() {
                let mut rng = seeded_rng(perturbation.seed, k as u64);
                for slot in 0..width {
                    let z: f64 = rand_distr::Distribution::sample(
                        &rand_distr::StandardNormal,
                        &mut rng,
                    );
                    data[row * width + slot] += F::from_f64(sigma * z);
                }
            }
            tape.constant(Tensor::new(shape, data))
        }
    }
}

// ---------------------------------------------------------------------------
// Shared batch forward.
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
fn forward_batch<F: Real>(
    tape: &Tape<F>,
    pv: &[Value],
    arch: &Architecture,
    config: &ModelConfig,
    feat: &PairFeaturizer,
    pairs: &[usize],
    training: bool,
    bn: &mut [BnStats<F>],
    perturbation: Option<&EmbeddingPerturbation>,
) -> Result<Value, CoreError> {
    let n = pairs.len();
    let mut tower_embeddings = Vec::new();
    if let Some(cnn) = &arch.cnn {
        let images = feat.images_tensor::<F>(pairs)?;
        let images_v = tape.constant(images);
        tower_embeddings.push(cnn_forward(tape, pv, cnn, images_v, training, bn)?);
    }
    if let Some(gnn) = &arch.gnn {
        let mut rows = Vec::with_capacity(n);
        for &k in pairs {
            let sg = feat.subgraph_features(k)?;
            rows.push(gnn_forward_single(tape, pv, gnn, &config.gnn, &sg)?);
        }
        tower_embeddings.push(ops::stack_rows(tape, &rows).map_err(CoreError::Engine)?);
    }
    if let Some(p) = perturbation {
        let slot = match p.tower {
            PerturbTower::Cnn => 0,
            PerturbTower::Gnn => 1,
        };
        tower_embeddings[slot] = perturb_embedding_value(tape, tower_embeddings[slot], pairs, p);
    }
    let fused_input = if tower_embeddings.len() == 1 {
        tower_embeddings[0]
    } else {
        ops::concat_cols(tape, &tower_embeddings).map_err(CoreError::Engine)?
    };
    let logits = fusion_forward(tape, pv, &arch.fusion, fused_input)?;
    Ok(ops::reshape(tape, logits, vec![n]))
}

fn push_params<F: Real>(tape: &Tape<F>, params: &ParamSet<F>) -> Vec<Value> {
    params.tensors().map(|t| tape.param(t.clone())).collect()
}

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    /// Negatives kept per positive in each epoch's balanced subsample.
    pub negative_ratio: f64,
    /// Fraction of the knowledge set held out to drive the schedule.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            weight_decay: 1e-4,
            negative_ratio: 4.0,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    /// AUC on the held-out fold; NaN when the fold cannot score (single
    /// class), in which case the schedule falls back to the training loss.
    pub val_auc: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub train_positives: usize,
    pub train_negatives: usize,
    pub validation_pairs: usize,
    pub negative_ratio: f64,
    pub skipped_pairs: Vec<(usize, String)>,
}

impl TrainHistory {
    /// CSV with header `epoch,loss,val_auc,lr`.
    pub fn write_csv(&self, path: &Path) -> Result<(), CoreError> {
        use std::io::Write;
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "epoch,loss,val_auc,lr")?;
        for row in &self.epochs {
            writeln!(file, "{},{},{},{}", row.epoch, row.loss, row.val_auc, row.lr)?;
        }
        Ok(())
    }
}

fn sample_without_replacement(
    pool: &[usize],
    count: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<usize> {
    if count >= pool.len() {
        return pool.to_vec();
    }
    rand::seq::index::sample(rng, pool.len(), count)
        .iter()
        .map(|idx| pool[idx])
        .collect()
}

/// Train on labeled pairs. `g0` is required by the GNN and dual modes and
/// ignored by the image-only mode.
pub fn train(
    state: &mut ModelState<f32>,
    x: &DataMatrix,
    knowledge: &KnowledgeSet,
    g0: Option<&DirectedGraph>,
    cfg: &TrainConfig,
) -> Result<TrainHistory, CoreError> {
    let uses_cnn = state.arch.cnn.is_some();
    let uses_gnn = state.arch.gnn.is_some();
    if uses_gnn && g0.is_none() {
        return Err(CoreError::Schema(
            "this tower mode needs an initial graph estimate".into(),
        ));
    }
    let feat = PairFeaturizer::new(
        x,
        state.config.featurizer.clone(),
        if uses_gnn { g0 } else { None },
    );

    // Usable pairs: the CNN path cannot featurize degenerate columns.
    let mut skipped = Vec::new();
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for &(k, label) in &knowledge.entries {
        if uses_cnn {
            if let Err(e) = feat.cnn_usable(k) {
                skipped.push((k, e.to_string()));
                continue;
            }
        }
        if label == 1 {
            positives.push(k);
        } else {
            negatives.push(k);
        }
    }

    // Stratified validation fold, never touching the test pairs.
    let mut val_rng = seeded_rng(cfg.seed, streams::VAL_FOLD);
    let take = |pool: &mut Vec<usize>, frac: f64, rng: &mut rand_chacha::ChaCha8Rng| {
        let want = ((frac * pool.len() as f64).round() as usize).min(pool.len().saturating_sub(1));
        let picked = sample_without_replacement(pool, want, rng);
        pool.retain(|k| !picked.contains(k));
        picked
    };
    let mut val_pairs: Vec<(usize, u8)> = Vec::new();
    for k in take(&mut positives, cfg.validation_fraction, &mut val_rng) {
        val_pairs.push((k, 1));
    }
    for k in take(&mut negatives, cfg.validation_fraction, &mut val_rng) {
        val_pairs.push((k, 0));
    }

    if positives.is_empty() || negatives.is_empty() {
        return Err(CoreError::SingleClassKnowledge);
    }
    let val_has_both = val_pairs.iter().any(|(_, l)| *l == 1) && val_pairs.iter().any(|(_, l)| *l == 0);

    let mut history = TrainHistory {
        epochs: Vec::with_capacity(cfg.epochs),
        train_positives: positives.len(),
        train_negatives: negatives.len(),
        validation_pairs: val_pairs.len(),
        negative_ratio: cfg.negative_ratio,
        skipped_pairs: skipped,
    };

    for epoch in 0..cfg.epochs {
        let mut rng = seeded_rng(derive_seed(cfg.seed, epoch as u64), streams::BATCH);
        let neg_want = ((cfg.negative_ratio * positives.len() as f64).round() as usize).max(1);
        let epoch_negatives = sample_without_replacement(&negatives, neg_want, &mut rng);
        let mut epoch_pairs: Vec<(usize, u8)> = positives
            .iter()
            .map(|&k| (k, 1u8))
            .chain(epoch_negatives.iter().map(|&k| (k, 0u8)))
            .collect();
        for a in (1..epoch_pairs.len()).rev() {
            let b = rand::Rng::random_range(&mut rng, 0..=a);
            epoch_pairs.swap(a, b);
        }

        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for batch in epoch_pairs.chunks(cfg.batch_size) {
            if batch.len() < 2 && uses_cnn {
                continue; // batch norm needs at least two samples
            }
            let pairs: Vec<usize> = batch.iter().map(|(k, _)| *k).collect();
            let labels = Tensor::from_vec(
                batch.iter().map(|(_, l)| *l as f32).collect::<Vec<f32>>(),
            );
            let tape = Tape::<f32>::new();
            let pv = push_params(&tape, &state.params);
            let logits = forward_batch(
                &tape,
                &pv,
                &state.arch,
                &state.config,
                &feat,
                &pairs,
                true,
                &mut state.bn_stats,
                None,
            )?;
            let loss = bce_with_logits(&tape, logits, &labels);
            loss_sum += tape.value(loss).item() as f64 * batch.len() as f64;
            loss_count += batch.len();
            tape.backward(loss);
            let grads: Vec<Option<Tensor<f32>>> = pv.iter().map(|&v| tape.grad(v)).collect();
            adam_step(
                &mut state.params,
                &grads,
                &mut state.adam,
                state.schedule.rate as f32,
                cfg.weight_decay as f32,
            );
        }
        let epoch_loss = if loss_count > 0 { loss_sum / loss_count as f64 } else { f64::NAN };

        let val_auc = if val_has_both {
            let ks: Vec<usize> = val_pairs.iter().map(|(k, _)| *k).collect();
            let scores = score_with(state, &feat, &ks, None)?;
            let labels: Vec<u8> = val_pairs.iter().map(|(_, l)| *l).collect();
            let values: Vec<f64> = scores.iter().map(|s| s.score).collect();
            crate::eval::roc_auc(&values, &labels)?.auc
        } else {
            f64::NAN
        };
        let metric = if val_auc.is_nan() { -epoch_loss } else { val_auc };
        let lr = state.schedule.update(metric);
        history.epochs.push(EpochStats {
            epoch,
            loss: epoch_loss,
            val_auc,
            lr,
        });
        state.epoch += 1;
    }
    Ok(history)
}

// ---------------------------------------------------------------------------
// Inference.
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct PairScore {
    pub pair: usize,
    /// Sigmoid of the network logit; 0.5 with a reason when skipped.
    pub score: f64,
    pub skipped: Option<String>,
}

const INFERENCE_BATCH: usize = 256;

fn score_with(
    state: &ModelState<f32>,
    feat: &PairFeaturizer,
    pairs: &[usize],
    perturbation: Option<&EmbeddingPerturbation>,
) -> Result<Vec<PairScore>, CoreError> {
    if perturbation.is_some() && state.config.mode != TowerMode::Dual {
        return Err(CoreError::PerturbationNeedsDualMode);
    }
    let uses_cnn = state.arch.cnn.is_some();
    // Inference never updates running statistics, but the batch-norm call
    // needs a mutable slice; work on a local copy to keep `state` untouched.
    let mut bn = state.bn_stats.clone();
    let mut out: Vec<Option<PairScore>> = vec![None; pairs.len()];
    let mut live: Vec<(usize, usize)> = Vec::with_capacity(pairs.len()); // (slot, pair)
    for (slot, &k) in pairs.iter().enumerate() {
        if uses_cnn {
            if let Err(e) = feat.cnn_usable(k) {
                out[slot] = Some(PairScore {
                    pair: k,
                    score: 0.5,
                    skipped: Some(e.to_string()),
                });
                continue;
            }
        }
        live.push((slot, k));
    }
    for chunk in live.chunks(INFERENCE_BATCH) {
        let ks: Vec<usize> = chunk.iter().map(|&(_, k)| k).collect();
        let tape = Tape::<f32>::new();
        let pv = push_params(&tape, &state.params);
        let logits = forward_batch(
            &tape,
            &pv,
            &state.arch,
            &state.config,
            feat,
            &ks,
            false,
            &mut bn,
            perturbation,
        )?;
        let values = tape.value(logits);
        for (&(slot, k), &logit) in chunk.iter().zip(values.data().iter()) {
            out[slot] = Some(PairScore {
                pair: k,
                score: sigmoid(logit as f64),
                skipped: None,
            });
        }
    }
    Ok(out.into_iter().map(|s| s.expect("every slot filled")).collect())
}

/// Sigmoid scores for a list of pair indices (novel pairs; no knowledge
/// override here).
pub fn score_pairs(
    state: &ModelState<f32>,
    feat: &PairFeaturizer,
    pairs: &[usize],
    perturbation: Option<&EmbeddingPerturbation>,
) -> Result<Vec<PairScore>, CoreError> {
    score_with(state, feat, pairs, perturbation)
}

/// Network logit for a single pair.
pub fn predict_logit(
    state: &ModelState<f32>,
    feat: &PairFeaturizer,
    k: usize,
) -> Result<f64, CoreError> {
    let scores = score_with(state, feat, &[k], None)?;
    let s = &scores[0];
    if let Some(reason) = &s.skipped {
        return Err(CoreError::Schema(format!("pair {} skipped: {}", k, reason)));
    }
    // Invert the sigmoid for callers that want the raw logit.
    Ok((s.score / (1.0 - s.score)).ln())
}

/// Per-tower embeddings at the fusion input, for export and direction
/// analysis.
pub fn tower_embeddings(
    state: &ModelState<f32>,
    feat: &PairFeaturizer,
    pairs: &[usize],
) -> Result<Vec<Vec<f32>>, CoreError> {
    let mut bn = state.bn_stats.clone();
    let tape = Tape::<f32>::new();
    let pv = push_params(&tape, &state.params);
    let mut embeddings = Vec::new();
    if let Some(cnn) = &state.arch.cnn {
        let images = feat.images_tensor::<f32>(pairs)?;
        let images_v = tape.constant(images);
        embeddings.push(cnn_forward(&tape, &pv, cnn, images_v, false, &mut bn)?);
    }
    if let Some(gnn) = &state.arch.gnn {
        let mut rows = Vec::with_capacity(pairs.len());
        for &k in pairs {
            let sg = feat.subgraph_features(k)?;
            rows.push(gnn_forward_single(&tape, &pv, gnn, &state.config.gnn, &sg)?);
        }
        embeddings.push(ops::stack_rows(&tape, &rows).map_err(CoreError::Engine)?);
    }
    let joined = if embeddings.len() == 1 {
        embeddings[0]
    } else {
        ops::concat_cols(&tape, &embeddings).map_err(CoreError::Engine)?
    };
    let values = tape.value(joined);
    let width = values.shape()[1];
    Ok(values
        .data()
        .chunks(width)
        .map(|row| row.to_vec())
        .collect())
}

/// Full p x p score matrix with the knowledge override applied: known pairs
/// carry their labels exactly, novel pairs carry network scores.
#[derive(Clone, Debug)]
pub struct ScoreMatrix {
    pub p: usize,
    pub scores: Vec<f64>,
    pub known: Vec<bool>,
    pub skipped: Vec<(usize, String)>,
}

impl ScoreMatrix {
    pub fn score(&self, i: usize, j: usize) -> f64 {
        self.scores[i * self.p + j]
    }

    pub fn is_known(&self, i: usize, j: usize) -> bool {
        self.known[i * self.p + j]
    }

    pub fn to_graph(&self, threshold: f64) -> DirectedGraph {
        let mut g = DirectedGraph::new(self.p);
        for i in 0..self.p {
            for j in 0..self.p {
                if i != j && self.scores[i * self.p + j] >= threshold {
                    g.set_edge(i, j, true).expect("diagonal excluded");
                }
            }
        }
        g
    }

    /// CSV with header `source,target,score,known` over all ordered pairs.
    pub fn write_predictions_csv(&self, path: &Path) -> Result<(), CoreError> {
        use std::io::Write;
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(file, "source,target,score,known")?;
        for i in 0..self.p {
            for j in 0..self.p {
                if i == j {
                    continue;
                }
                writeln!(
                    file,
                    "{},{},{},{}",
                    i,
                    j,
                    self.scores[i * self.p + j],
                    u8::from(self.known[i * self.p + j])
                )?;
            }
        }
        Ok(())
    }
}

/// Score every ordered pair. Pairs in the knowledge set keep their labels
/// bit-exactly; everything else gets a network score.
pub fn infer_graph(
    state: &ModelState<f32>,
    x: &DataMatrix,
    knowledge: &KnowledgeSet,
    g0: Option<&DirectedGraph>,
    perturbation: Option<&EmbeddingPerturbation>,
) -> Result<ScoreMatrix, CoreError> {
    let p = x.n_cols();
    let index = PairIndex::new(p);
    let uses_gnn = state.arch.gnn.is_some();
    if uses_gnn && g0.is_none() {
        return Err(CoreError::Schema(
            "this tower mode needs an initial graph estimate".into(),
        ));
    }
    let feat = PairFeaturizer::new(
        x,
        state.config.featurizer.clone(),
        if uses_gnn { g0 } else { None },
    );
    let mut known_labels: HashMap<usize, u8> = HashMap::new();
    for &(k, label) in &knowledge.entries {
        known_labels.insert(k, label);
    }
    let novel: Vec<usize> = (0..index.pair_count())
        .filter(|k| !known_labels.contains_key(k))
        .collect();
    let scores = score_with(state, &feat, &novel, perturbation)?;

    let mut matrix = ScoreMatrix {
        p,
        scores: vec![0.0; p * p],
        known: vec![false; p * p],
        skipped: Vec::new(),
    };
    for (&k, &label) in &known_labels {
        let (i, j) = index.pair_of(k)?;
        matrix.scores[i * p + j] = label as f64;
        matrix.known[i * p + j] = true;
    }
    for s in scores {
        let (i, j) = index.pair_of(s.pair)?;
        matrix.scores[i * p + j] = s.score;
        if let Some(reason) = s.skipped {
            matrix.skipped.push((s.pair, reason));
        }
    }
    matrix.skipped.sort_by_key(|(k, _)| *k);
    Ok(matrix)
}

// ---------------------------------------------------------------------------
// Checkpointing.
// ---------------------------------------------------------------------------

impl ModelState<f32> {
    /// Write `<stem>.json` + `<stem>.bin`: parameters, Adam moments and
    /// batch-norm running stats in manifest order.
    pub fn save(&self, stem: &Path) -> Result<(), CoreError> {
        let mut entries: Vec<(String, Tensor<f32>)> = Vec::new();
        for (name, tensor) in self.params.iter() {
            entries.push((format!("param.{}", name), tensor.clone()));
        }
        for (idx, m) in self.adam.m.iter().enumerate() {
            entries.push((format!("adam.m.{}", idx), m.clone()));
        }
        for (idx, v) in self.adam.v.iter().enumerate() {
            entries.push((format!("adam.v.{}", idx), v.clone()));
        }
        for (idx, stats) in self.bn_stats.iter().enumerate() {
            entries.push((format!("bn.{}.mean", idx), stats.mean.clone()));
            entries.push((format!("bn.{}.var", idx), stats.var.clone()));
        }
        let meta = serde_json::json!({
            "config": self.config,
            "schedule": self.schedule,
            "adam_t": self.adam.t,
            "epoch": self.epoch,
        });
        d2cl_nn::checkpoint::save(stem, &entries, &meta)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self, CoreError> {
        let (entries, meta) = d2cl_nn::checkpoint::load(stem)?;
        let config: ModelConfig = serde_json::from_value(meta["config"].clone())?;
        let mut state = ModelState::<f32>::new(config)?;
        state.schedule = serde_json::from_value(meta["schedule"].clone())?;
        state.adam.t = meta["adam_t"].as_u64().unwrap_or(0);
        state.epoch = meta["epoch"].as_u64().unwrap_or(0) as usize;

        let by_name: HashMap<String, Tensor<f32>> = entries.into_iter().collect();
        for idx in 0..state.params.len() {
            let id = ParamId(idx);
            let name = format!("param.{}", state.params.name(id));
            let tensor = by_name
                .get(&name)
                .ok_or_else(|| CoreError::Schema(format!("checkpoint missing {}", name)))?;
            if tensor.shape() != state.params.get(id).shape() {
                return Err(CoreError::Schema(format!("checkpoint shape mismatch at {}", name)));
            }
            *state.params.get_mut(id) = tensor.clone();
        }
        for idx in 0..state.adam.m.len() {
            if let Some(t) = by_name.get(&format!("adam.m.{}", idx)) {
                state.adam.m[idx] = t.clone();
            }
            if let Some(t) = by_name.get(&format!("adam.v.{}", idx)) {
                state.adam.v[idx] = t.clone();
            }
        }
        for idx in 0..state.bn_stats.len() {
            if let Some(t) = by_name.get(&format!("bn.{}.mean", idx)) {
                state.bn_stats[idx].mean = t.clone();
            }
            if let Some(t) = by_name.get(&format!("bn.{}.var", idx)) {
                state.bn_stats[idx].var = t.clone();
            }
        }
        Ok(state)
    }
}
