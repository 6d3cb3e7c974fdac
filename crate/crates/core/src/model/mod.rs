//! Pre-activation ResNet-50 ("ResNet50V2") assembled from [`crate::tensor`]
//! kernels.
//!
//! Topology: 7×7/2 stem convolution → 3×3/2 max pool → four stages of
//! bottleneck blocks (3, 4, 6, 3) → batch norm + ReLU → global average pool →
//! dense head. Each block normalises and rectifies its input once (the shared
//! pre-activation) and feeds that to both the 1×1 → 3×3 → 1×1 residual branch
//! and, in the first block of a stage, a 1×1 projection shortcut. Stage 1
//! keeps the 56×56 grid; the first block of stages 2–4 halves it with stride 2
//! on the 3×3 and projection convolutions while the width doubles.

mod gradcam;
pub mod slots;
pub mod synthetic;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};

pub use gradcam::{grad_cam_from_activation, GradCamMap};
pub use slots::{FEATURE_DIM, IMAGENET_CLASSES, INPUT_SIZE};

use crate::error::{Error, Result};
use crate::tensor::{
    add, batch_norm_inference, conv2d, dense, global_avg_pool, max_pool, relu, softmax, BatchNormParams,
    ConvParams, Padding, Tensor,
};
use crate::weights::{SlotSpec, WeightArchive};
use slots::{block_prefix, BN_EPSILON, STAGES};

/// Named intermediate activations exposed by [`ModelGraph::forward`].
///
/// `stage1`–`stage3` are the residual outputs of the last block in each
/// stage. `stage4` is the final normalised and rectified 7×7×2048 map, i.e.
/// exactly what the global pool averages, which makes it the Grad-CAM target.
/// `pooled` is the 2048-d embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tap {
    Stage1,
    Stage2,
    Stage3,
    Stage4,
    Pooled,
}

impl Tap {
    pub const ALL: [Tap; 5] = [Tap::Stage1, Tap::Stage2, Tap::Stage3, Tap::Stage4, Tap::Pooled];

    pub fn name(self) -> &'static str {
        match self {
            Tap::Stage1 => "stage1",
            Tap::Stage2 => "stage2",
            Tap::Stage3 => "stage3",
            Tap::Stage4 => "stage4",
            Tap::Pooled => "pooled",
        }
    }

    /// Per-image shape for a 224×224 input.
    pub fn shape(self) -> Vec<usize> {
        match self {
            Tap::Stage1 => vec![56, 56, 256],
            Tap::Stage2 => vec![28, 28, 512],
            Tap::Stage3 => vec![14, 14, 1024],
            Tap::Stage4 => vec![7, 7, 2048],
            Tap::Pooled => vec![2048],
        }
    }

    /// Length of the embedding taken from this tap (spatial mean for stages).
    pub fn embedding_dim(self) -> usize {
        *self.shape().last().expect("non-empty")
    }
}

impl fmt::Display for Tap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Tap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Tap::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::UnknownTap(s.to_owned()))
    }
}

impl Serialize for Tap {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shortcut {
    Identity,
    Projection(ConvParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BottleneckBlock {
    preact: BatchNormParams,
    reduce: ConvParams,
    norm1: BatchNormParams,
    spatial: ConvParams,
    norm2: BatchNormParams,
    expand: ConvParams,
    shortcut: Shortcut,
}

impl BottleneckBlock {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let pre = relu(&batch_norm_inference(x, &self.preact)?);
        let shortcut = match &self.shortcut {
            Shortcut::Identity => x.clone(),
            Shortcut::Projection(p) => conv2d(&pre, p)?,
        };
        let h = relu(&batch_norm_inference(&conv2d(&pre, &self.reduce)?, &self.norm1)?);
        let h = relu(&batch_norm_inference(&conv2d(&h, &self.spatial)?, &self.norm2)?);
        let h = conv2d(&h, &self.expand)?;
        add(&shortcut, &h)
    }

    pub fn stride(&self) -> usize {
        self.spatial.stride()
    }

    pub fn shortcut(&self) -> &Shortcut {
        &self.shortcut
    }

    pub fn in_channels(&self) -> usize {
        self.preact.channels()
    }

    pub fn out_channels(&self) -> usize {
        self.expand.dims().3
    }

    fn param_count(&self) -> usize {
        let shortcut = match &self.shortcut {
            Shortcut::Identity => 0,
            Shortcut::Projection(p) => p.param_count(),
        };
        self.preact.param_count()
            + self.reduce.param_count()
            + self.norm1.param_count()
            + self.spatial.param_count()
            + self.norm2.param_count()
            + self.expand.param_count()
            + shortcut
    }
}

/// Immutable network: backbone plus dense classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    stem: ConvParams,
    stages: Vec<Vec<BottleneckBlock>>,
    post_norm: BatchNormParams,
    head_weights: Tensor,
    head_bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Tensor,
    pub probs: Tensor,
    pub taps: BTreeMap<Tap, Tensor>,
}

struct SlotReader<'a> {
    archive: &'a WeightArchive,
}

impl SlotReader<'_> {
    fn tensor(&self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let t = self
            .archive
            .get(name)
            .ok_or_else(|| Error::MissingSlot(name.to_owned()))?;
        if t.shape() != shape {
            return Err(Error::SlotShape {
                slot: name.to_owned(),
                expected: shape.to_vec(),
                actual: t.shape().to_vec(),
            });
        }
        Ok(t.clone())
    }

    fn conv(&self, prefix: &str, shape: [usize; 4], bias: bool, stride: usize) -> Result<ConvParams> {
        let kernel = self.tensor(&format!("{prefix}/kernel"), &shape)?;
        let bias = if bias {
            Some(self.tensor(&format!("{prefix}/bias"), &[shape[3]])?)
        } else {
            None
        };
        ConvParams::new(kernel, bias, stride, Padding::Same)
    }

    fn bn(&self, prefix: &str, channels: usize) -> Result<BatchNormParams> {
        let get = |p: &str| self.tensor(&format!("{prefix}/{p}"), &[channels]);
        BatchNormParams::new(get("gamma")?, get("beta")?, get("moving_mean")?, get("moving_var")?, BN_EPSILON)
    }
}

/// Assembles the network from `archive`.
///
/// With `num_classes == 1000` the ImageNet head (`head/W`, `head/b`) is
/// required. Any other class count takes the head from the archive when one of
/// that size is present and otherwise starts from a zero head, ready for
/// fine-tuning.
pub fn build_model(num_classes: usize, archive: &WeightArchive) -> Result<ModelGraph> {
    if num_classes == 0 {
        return Err(Error::invalid("num_classes must be at least 1"));
    }
    let r = SlotReader { archive };
    let stem = ConvParams::new(
        r.tensor("stem/conv/kernel", &[7, 7, 3, slots::STEM_CHANNELS])?,
        Some(r.tensor("stem/conv/bias", &[slots::STEM_CHANNELS])?),
        2,
        Padding::Same,
    )?;
    let mut stages = Vec::with_capacity(STAGES.len());
    let mut cin = slots::STEM_CHANNELS;
    for (s, &(width, blocks, first_stride)) in STAGES.iter().enumerate() {
        let cout = 4 * width;
        let mut stage = Vec::with_capacity(blocks);
        for b in 1..=blocks {
            let p = block_prefix(s + 1, b);
            let stride = if b == 1 { first_stride } else { 1 };
            let shortcut = if b == 1 {
                Shortcut::Projection(r.conv(&format!("{p}/shortcut"), [1, 1, cin, cout], true, stride)?)
            } else {
                Shortcut::Identity
            };
            stage.push(BottleneckBlock {
                preact: r.bn(&format!("{p}/preact_bn"), cin)?,
                reduce: r.conv(&format!("{p}/conv1"), [1, 1, cin, width], false, 1)?,
                norm1: r.bn(&format!("{p}/bn1"), width)?,
                spatial: r.conv(&format!("{p}/conv2"), [3, 3, width, width], false, stride)?,
                norm2: r.bn(&format!("{p}/bn2"), width)?,
                expand: r.conv(&format!("{p}/conv3"), [1, 1, width, cout], true, 1)?,
                shortcut,
            });
            cin = cout;
        }
        stages.push(stage);
    }
    let post_norm = r.bn("post_bn", cin)?;

    let archived_head = archive
        .get("head/W")
        .is_some_and(|w| w.shape() == [FEATURE_DIM, num_classes]);
    let (head_weights, head_bias) = if num_classes == IMAGENET_CLASSES || archived_head {
        (
            r.tensor("head/W", &[FEATURE_DIM, num_classes])?,
            r.tensor("head/b", &[num_classes])?,
        )
    } else {
        (
            Tensor::zeros(vec![FEATURE_DIM, num_classes])?,
            Tensor::zeros(vec![num_classes])?,
        )
    };
    Ok(ModelGraph {
        stem,
        stages,
        post_norm,
        head_weights,
        head_bias,
    })
}

impl ModelGraph {
    pub fn num_classes(&self) -> usize {
        self.head_bias.len()
    }

    pub fn stages(&self) -> &[Vec<BottleneckBlock>] {
        &self.stages
    }

    pub fn head_weights(&self) -> &Tensor {
        &self.head_weights
    }

    pub fn head_bias(&self) -> &Tensor {
        &self.head_bias
    }

    /// Replaces the dense head (`2048×K` weights, `K` bias).
    pub fn with_head(mut self, weights: Tensor, bias: Tensor) -> Result<Self> {
        if weights.rank() != 2 || weights.shape()[0] != FEATURE_DIM || bias.shape() != [weights.shape()[1]] {
            return Err(Error::ShapeMismatch {
                op: "with_head",
                left: weights.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        self.head_weights = weights;
        self.head_bias = bias;
        Ok(self)
    }

    /// Runs a `N×224×224×3` batch and returns logits, probabilities and the
    /// requested taps.
    pub fn forward(&self, batch: &Tensor, taps: &[Tap]) -> Result<ForwardOutput> {
        let s = batch.shape();
        if s.len() != 4 || s[1..] != [INPUT_SIZE, INPUT_SIZE, 3] {
            return Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: format!("model input must be N×{INPUT_SIZE}×{INPUT_SIZE}×3"),
            });
        }
        let mut out_taps = BTreeMap::new();
        let mut x = conv2d(batch, &self.stem)?;
        x = max_pool(&x, 3, 2, Padding::Same)?;
        let stage_taps = [Tap::Stage1, Tap::Stage2, Tap::Stage3];
        for (i, stage) in self.stages.iter().enumerate() {
            for block in stage {
                x = block.forward(&x)?;
            }
            if let Some(&tap) = stage_taps.get(i) {
                if taps.contains(&tap) {
                    out_taps.insert(tap, x.clone());
                }
            }
        }
        let features = relu(&batch_norm_inference(&x, &self.post_norm)?);
        let pooled = global_avg_pool(&features)?;
        if taps.contains(&Tap::Stage4) {
            out_taps.insert(Tap::Stage4, features);
        }
        let logits = dense(&pooled, &self.head_weights, &self.head_bias)?;
        let probs = softmax(&logits)?;
        if taps.contains(&Tap::Pooled) {
            out_taps.insert(Tap::Pooled, pooled);
        }
        Ok(ForwardOutput { logits, probs, taps: out_taps })
    }

    /// [`forward`](Self::forward) with taps given by name.
    pub fn forward_named(&self, batch: &Tensor, taps: &[&str]) -> Result<ForwardOutput> {
        let taps = taps.iter().map(|t| t.parse()).collect::<Result<Vec<Tap>>>()?;
        self.forward(batch, &taps)
    }

    /// `N×D` embeddings from `tap`; stage taps are averaged over space.
    pub fn embed(&self, batch: &Tensor, tap: Tap) -> Result<Tensor> {
        let mut out = self.forward(batch, &[tap])?;
        let t = out.taps.remove(&tap).expect("requested tap present");
        match tap {
            Tap::Pooled => Ok(t),
            _ => global_avg_pool(&t),
        }
    }

    /// Grad-CAM on the final 7×7×2048 activation for one image
    /// (`224×224×3` or `1×224×224×3`).
    pub fn grad_cam(&self, image: &Tensor, class_index: usize) -> Result<GradCamMap> {
        if class_index >= self.num_classes() {
            return Err(Error::ClassOutOfRange {
                index: class_index,
                classes: self.num_classes(),
            });
        }
        let batch = if image.rank() == 3 { image.clone().unsqueeze() } else { image.clone() };
        if batch.shape()[0] != 1 {
            return Err(Error::invalid("grad-cam takes a single image"));
        }
        let out = self.forward(&batch, &[Tap::Stage4])?;
        grad_cam_from_activation(&out.taps[&Tap::Stage4], &self.head_weights, class_index)
    }

    /// Total element count over every weight slot, head included.
    pub fn param_count(&self) -> usize {
        self.stem.param_count()
            + self.stages.iter().flatten().map(BottleneckBlock::param_count).sum::<usize>()
            + self.post_norm.param_count()
            + self.head_weights.len()
            + self.head_bias.len()
    }

    /// Convolution and dense layers on the main path: the stem, three per
    /// bottleneck block and the head. Projection shortcuts are not counted.
    pub fn weighted_layer_count(&self) -> usize {
        1 + 3 * self.stages.iter().map(Vec::len).sum::<usize>() + 1
    }

    /// Slot manifest for this model's class count.
    pub fn manifest(&self) -> Vec<SlotSpec> {
        slots::model_manifest(self.num_classes())
    }

    /// Writes every slot (backbone and head) back into an archive.
    pub fn to_archive(&self) -> WeightArchive {
        let mut a = WeightArchive::new();
        let mut put = |name: String, t: &Tensor| a.insert(name, t.clone()).expect("unique slot names");
        let bn = |put: &mut dyn FnMut(String, &Tensor), prefix: &str, p: &BatchNormParams| {
            put(format!("{prefix}/gamma"), &p.gamma);
            put(format!("{prefix}/beta"), &p.beta);
            put(format!("{prefix}/moving_mean"), &p.moving_mean);
            put(format!("{prefix}/moving_var"), &p.moving_var);
        };
        let conv = |put: &mut dyn FnMut(String, &Tensor), prefix: &str, p: &ConvParams| {
            put(format!("{prefix}/kernel"), p.kernel());
            if let Some(b) = p.bias() {
                put(format!("{prefix}/bias"), b);
            }
        };
        conv(&mut put, "stem/conv", &self.stem);
        for (s, stage) in self.stages.iter().enumerate() {
            for (b, block) in stage.iter().enumerate() {
                let p = block_prefix(s + 1, b + 1);
                bn(&mut put, &format!("{p}/preact_bn"), &block.preact);
                if let Shortcut::Projection(sc) = &block.shortcut {
                    conv(&mut put, &format!("{p}/shortcut"), sc);
                }
                conv(&mut put, &format!("{p}/conv1"), &block.reduce);
                bn(&mut put, &format!("{p}/bn1"), &block.norm1);
                conv(&mut put, &format!("{p}/conv2"), &block.spatial);
                bn(&mut put, &format!("{p}/bn2"), &block.norm2);
                conv(&mut put, &format!("{p}/conv3"), &block.expand);
            }
        }
        bn(&mut put, "post_bn", &self.post_norm);
        put("head/W".into(), &self.head_weights);
        put("head/b".into(), &self.head_bias);
        a
    }

    /// CRC32 over all backbone payloads (head excluded), in slot order.
    pub fn backbone_checksum(&self) -> u32 {
        let archive = self.to_archive();
        let mut h = crc32fast::Hasher::new();
        for e in archive.entries().iter().filter(|e| !e.name.starts_with("head/")) {
            h.update(e.name.as_bytes());
            h.update(&crate::weights::payload_bytes(e.tensor.data()));
        }
        h.finalize()
    }
}
