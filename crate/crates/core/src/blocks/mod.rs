//! Builders for the RefineNet decoder blocks, the encoders that feed them,
//! and the full encoder-decoder assembly.
//!
//! Node ids follow a fixed scheme so blocks can be found again by prefix:
//! `backbone.*` for the encoder, `decoder.l<k>.*` for decoder level `k`
//! (4 is the deepest, stride 32; 1 is stride 4), and `clf.*` for the
//! classifier and the final resize.

mod mobilenet;
mod resnet;
mod toy;

pub use mobilenet::build_mobilenet_v2;
pub use resnet::build_resnet;
pub use toy::build_toy;

use thiserror::Error;

use crate::arch::{ArchSpec, Backbone, Variant};
use crate::graph::{Graph, GraphBuilder, GraphError, GraphMeta};
use crate::tensor::{ConvParams, PoolParams};

/// Channel reduction inside the light-weight RCU bottleneck.
pub const BOTTLENECK_REDUCTION: usize = 2;

/// Residual units before and after each CRP in the RCU-bearing variants.
pub const RCUS_BEFORE_CRP: usize = 2;
pub const RCUS_AFTER_CRP: usize = 3;

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("{block}: {channels} channels not divisible by {factor}")]
    Indivisible {
        block: String,
        channels: usize,
        factor: usize,
    },

    #[error("cannot fuse two paths at the same level {0}")]
    SameLevel(usize),

    #[error("fusion expects the coarse path first (levels {coarse} and {fine})")]
    FusionOrder { coarse: usize, fine: usize },

    #[error("unsupported ResNet depth {0} (expected 50, 101 or 152)")]
    UnsupportedDepth(usize),

    #[error("{0} must be positive")]
    Zero(&'static str),

    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub type Result<T> = std::result::Result<T, BuildError>;

/// Entry and exit nodes of a block inside the enclosing graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockHandle {
    pub entry: String,
    pub exit: String,
    pub in_ch: usize,
    pub out_ch: usize,
    /// Decoder level, 1..=4 with 4 the deepest.
    pub level: usize,
}

impl BlockHandle {
    /// Output stride of the block's level relative to the input image.
    pub fn stride(&self) -> usize {
        1 << (self.level + 1)
    }
}

/// Encoder feature taps at output strides 4, 8, 16 and 32.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneTaps {
    pub ids: [String; 4],
    pub channels: [usize; 4],
}

impl BackboneTaps {
    pub const STRIDES: [usize; 4] = [4, 8, 16, 32];
}

fn conv_kernel(variant: Variant) -> usize {
    if variant.is_light() {
        1
    } else {
        3
    }
}

/// Residual conv unit. The original form is relu, 3x3, relu, 3x3 plus the
/// identity; the light-weight form is a relu-separated 1x1, 3x3, 1x1
/// bottleneck at `C / BOTTLENECK_REDUCTION` width plus the identity.
pub fn build_rcu(g: &mut GraphBuilder, prefix: &str, from: &str, channels: usize, level: usize, variant: Variant) -> Result<BlockHandle> {
    if channels == 0 {
        return Err(BuildError::Zero("RCU channels"));
    }
    let mut x = g.relu(format!("{prefix}.relu1"), from);
    if variant.is_light() {
        if channels % BOTTLENECK_REDUCTION != 0 {
            return Err(BuildError::Indivisible {
                block: prefix.to_string(),
                channels,
                factor: BOTTLENECK_REDUCTION,
            });
        }
        let mid = channels / BOTTLENECK_REDUCTION;
        x = g.conv(format!("{prefix}.conv1"), &x, channels, mid, ConvParams::square(1, 1, true));
        x = g.relu(format!("{prefix}.relu2"), &x);
        x = g.conv(format!("{prefix}.conv2"), &x, mid, mid, ConvParams::square(3, 1, true));
        x = g.relu(format!("{prefix}.relu3"), &x);
        x = g.conv(format!("{prefix}.conv3"), &x, mid, channels, ConvParams::square(1, 1, true));
    } else {
        x = g.conv(format!("{prefix}.conv1"), &x, channels, channels, ConvParams::square(3, 1, true));
        x = g.relu(format!("{prefix}.relu2"), &x);
        x = g.conv(format!("{prefix}.conv2"), &x, channels, channels, ConvParams::square(3, 1, true));
    }
    let exit = g.add(format!("{prefix}.add"), from, &x);
    Ok(BlockHandle {
        entry: format!("{prefix}.relu1"),
        exit,
        in_ch: channels,
        out_ch: channels,
        level,
    })
}

/// Chained residual pooling: relu, then `stages` rounds of 5x5/1 max-pool
/// followed by a conv, each conv output added into a running sum that
/// starts at the relu output. Each pool consumes the previous round's conv.
pub fn build_crp(g: &mut GraphBuilder, prefix: &str, from: &str, channels: usize, stages: usize, level: usize, variant: Variant) -> Result<BlockHandle> {
    if stages == 0 {
        return Err(BuildError::Zero("CRP stages"));
    }
    let k = conv_kernel(variant);
    let relu = g.relu(format!("{prefix}.relu"), from);
    let mut top = relu.clone();
    let mut sum = relu;
    for i in 1..=stages {
        let pooled = g.maxpool(format!("{prefix}.pool{i}"), &top, PoolParams::square(5, 1, 2));
        top = g.conv(format!("{prefix}.conv{i}"), &pooled, channels, channels, ConvParams::square(k, 1, true));
        sum = g.add(format!("{prefix}.add{i}"), &sum, &top);
    }
    Ok(BlockHandle {
        entry: format!("{prefix}.relu"),
        exit: sum,
        in_ch: channels,
        out_ch: channels,
        level,
    })
}

/// Multi-resolution fusion: conv on each path to `out_ch`, bilinear resize
/// of the coarse path to the fine path's size, elementwise sum.
pub fn build_fusion(g: &mut GraphBuilder, prefix: &str, coarse: &BlockHandle, fine: &BlockHandle, out_ch: usize, variant: Variant) -> Result<BlockHandle> {
    if coarse.level == fine.level {
        return Err(BuildError::SameLevel(coarse.level));
    }
    if coarse.level < fine.level {
        return Err(BuildError::FusionOrder {
            coarse: coarse.level,
            fine: fine.level,
        });
    }
    let k = conv_kernel(variant);
    let c = g.conv(format!("{prefix}.coarse_conv"), &coarse.exit, coarse.out_ch, out_ch, ConvParams::square(k, 1, true));
    let f = g.conv(format!("{prefix}.fine_conv"), &fine.exit, fine.out_ch, out_ch, ConvParams::square(k, 1, true));
    let up = g.upsample(format!("{prefix}.upsample"), &c, &f);
    let exit = g.add(format!("{prefix}.add"), &up, &f);
    Ok(BlockHandle {
        entry: c,
        exit,
        in_ch: coarse.out_ch,
        out_ch,
        level: fine.level,
    })
}

/// The classifier: one 3x3 conv with bias producing a score per class.
pub fn build_clf(g: &mut GraphBuilder, from: &str, in_ch: usize, num_classes: usize) -> Result<BlockHandle> {
    if num_classes == 0 {
        return Err(BuildError::Zero("num_classes"));
    }
    let id = g.conv("clf.conv", from, in_ch, num_classes, ConvParams::square(3, 1, true));
    Ok(BlockHandle {
        entry: id.clone(),
        exit: id,
        in_ch,
        out_ch: num_classes,
        level: 1,
    })
}

fn build_backbone(g: &mut GraphBuilder, backbone: Backbone, input: &str) -> Result<BackboneTaps> {
    match backbone {
        Backbone::ResNet50 => build_resnet(g, input, 50),
        Backbone::ResNet101 => build_resnet(g, input, 101),
        Backbone::ResNet152 => build_resnet(g, input, 152),
        Backbone::MobileNetV2 => Ok(build_mobilenet_v2(g, input)),
        Backbone::Toy => Ok(build_toy(g, input)),
    }
}

/// Builds the full network described by `spec`.
///
/// Decoding runs from level 4 to level 1. Each level adapts its encoder tap
/// to the level width, runs the pre-CRP RCUs, fuses with the coarser level
/// (levels 1 to 3), then runs CRP and the post-CRP RCUs. The post-CRP RCUs
/// of level 1 are the last residual units before the classifier. Scores are
/// resized back to the input resolution.
pub fn assemble_refinenet(spec: &ArchSpec) -> Result<Graph> {
    if spec.channel_plan.contains(&0) {
        return Err(BuildError::Zero("channel_plan entries"));
    }
    let mut g = GraphBuilder::new(GraphMeta {
        variant: spec.variant.to_string(),
        backbone: spec.backbone.to_string(),
        num_classes: spec.num_classes,
    });
    let input = g.input("input");
    let taps = build_backbone(&mut g, spec.backbone, &input)?;
    let with_rcu = spec.variant != Variant::Lw;
    let k = conv_kernel(spec.variant);

    let mut coarser: Option<BlockHandle> = None;
    for level in (1..=4).rev() {
        let width = spec.channel_plan[4 - level];
        let prefix = format!("decoder.l{level}");
        let tap = &taps.ids[level - 1];
        let tap_ch = taps.channels[level - 1];
        let adapt = g.conv(format!("{prefix}.adapt"), tap, tap_ch, width, ConvParams::square(k, 1, true));
        let mut x = BlockHandle {
            entry: adapt.clone(),
            exit: adapt,
            in_ch: tap_ch,
            out_ch: width,
            level,
        };
        if with_rcu {
            for i in 0..RCUS_BEFORE_CRP {
                x = build_rcu(&mut g, &format!("{prefix}.rcu_pre{i}"), &x.exit, width, level, spec.variant)?;
            }
        }
        if let Some(c) = &coarser {
            x = build_fusion(&mut g, &format!("{prefix}.fusion"), c, &x, width, spec.variant)?;
        }
        x = build_crp(&mut g, &format!("{prefix}.crp"), &x.exit, width, spec.crp_stages, level, spec.variant)?;
        if with_rcu {
            for i in 0..RCUS_AFTER_CRP {
                x = build_rcu(&mut g, &format!("{prefix}.rcu_post{i}"), &x.exit, width, level, spec.variant)?;
            }
        }
        coarser = Some(x);
    }
    let last = coarser.expect("four levels built");
    let clf = build_clf(&mut g, &last.exit, last.out_ch, spec.num_classes)?;
    let scores = g.upsample("clf.upsample", &clf.exit, &input);
    g.output("output", &scores);
    Ok(g.finish()?)
}

/// Distinct RCU blocks in a graph, identified by their id prefix.
pub fn rcu_blocks(graph: &Graph) -> Vec<String> {
    block_prefixes(graph, "rcu")
}

/// Distinct blocks whose id has a path segment starting with `segment`.
pub fn block_prefixes(graph: &Graph, segment: &str) -> Vec<String> {
    let mut out: Vec<String> = graph
        .nodes()
        .filter_map(|n| {
            let parts: Vec<&str> = n.id.split('.').collect();
            let pos = parts.iter().position(|p| p.starts_with(segment))?;
            Some(parts[..=pos].join("."))
        })
        .collect();
    out.sort();
    out.dedup();
    out
}
