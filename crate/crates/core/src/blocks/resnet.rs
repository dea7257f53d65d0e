use super::{BackboneTaps, BuildError, Result};
use crate::graph::GraphBuilder;
use crate::tensor::{ConvParams, PoolParams};

/// Bottleneck blocks per stage.
pub fn stage_blocks(depth: usize) -> Option<[usize; 4]> {
    match depth {
        50 => Some([3, 4, 6, 3]),
        101 => Some([3, 4, 23, 3]),
        152 => Some([3, 8, 36, 3]),
        _ => None,
    }
}

fn conv_bn(g: &mut GraphBuilder, prefix: &str, from: &str, in_ch: usize, out_ch: usize, p: ConvParams) -> String {
    let c = g.conv(format!("{prefix}.conv"), from, in_ch, out_ch, p);
    g.affine(format!("{prefix}.bn"), &c, out_ch)
}

/// Bottleneck residual network without its classifier head. Convolutions
/// carry no bias; batch norm is a per-channel affine node. Downsampling
/// stages put the stride on the first block's 3x3 conv.
pub fn build_resnet(g: &mut GraphBuilder, input: &str, depth: usize) -> Result<BackboneTaps> {
    let blocks = stage_blocks(depth).ok_or(BuildError::UnsupportedDepth(depth))?;
    let stem = conv_bn(g, "backbone.stem", input, 3, 64, ConvParams::square(7, 2, false));
    let stem = g.relu("backbone.stem.relu", &stem);
    let mut x = g.maxpool("backbone.stem.pool", &stem, PoolParams::square(3, 2, 1));
    let mut in_ch = 64;
    let mut ids: Vec<String> = Vec::new();
    let mut channels = [0; 4];
    for (stage, &count) in blocks.iter().enumerate() {
        let mid = 64 << stage;
        let out_ch = mid * 4;
        let stage_stride = if stage == 0 { 1 } else { 2 };
        for b in 0..count {
            let p = format!("backbone.layer{}.{}", stage + 1, b);
            let stride = if b == 0 { stage_stride } else { 1 };
            let y = conv_bn(g, &format!("{p}.a"), &x, in_ch, mid, ConvParams::square(1, 1, false));
            let y = g.relu(format!("{p}.a.relu"), &y);
            let y = conv_bn(g, &format!("{p}.b"), &y, mid, mid, ConvParams::square(3, stride, false));
            let y = g.relu(format!("{p}.b.relu"), &y);
            let y = conv_bn(g, &format!("{p}.c"), &y, mid, out_ch, ConvParams::square(1, 1, false));
            let shortcut = if b == 0 {
                conv_bn(g, &format!("{p}.downsample"), &x, in_ch, out_ch, ConvParams::square(1, stride, false))
            } else {
                x.clone()
            };
            let sum = g.add(format!("{p}.add"), &y, &shortcut);
            x = g.relu(format!("{p}.relu"), &sum);
            in_ch = out_ch;
        }
        ids.push(x.clone());
        channels[stage] = out_ch;
    }
    Ok(BackboneTaps {
        ids: ids.try_into().expect("four stages"),
        channels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzer::count_params;
    use crate::graph::{infer_shapes, GraphMeta};
    use crate::tensor::Shape;

    fn backbone(depth: usize) -> (crate::graph::Graph, BackboneTaps) {
        let mut g = GraphBuilder::new(GraphMeta::default());
        let input = g.input("input");
        let taps = build_resnet(&mut g, &input, depth).unwrap();
        g.output("output", &taps.ids[3]);
        (g.finish().unwrap(), taps)
    }

    /// Closed-form parameter count of a bottleneck ResNet trunk with
    /// affine batch norm (2 per channel) and no classifier.
    fn closed_form(depth: usize) -> u64 {
        let blocks = stage_blocks(depth).unwrap();
        let conv_bn = |cin: u64, cout: u64, k: u64| k * k * cin * cout + 2 * cout;
        let mut total = conv_bn(3, 64, 7);
        let mut cin = 64u64;
        for (s, &n) in blocks.iter().enumerate() {
            let mid = 64u64 << s;
            for b in 0..n {
                total += conv_bn(cin, mid, 1) + conv_bn(mid, mid, 3) + conv_bn(mid, 4 * mid, 1);
                if b == 0 {
                    total += conv_bn(cin, 4 * mid, 1);
                }
                cin = 4 * mid;
            }
        }
        total
    }

    #[test]
    fn parameter_counts_match_closed_form() {
        // The widely quoted 25.6M / 44.5M / 60.2M include the 2048 -> 1000
        // classifier (2,049,000 parameters), which the trunk omits.
        let fc = 2048 * 1000 + 1000;
        for (depth, published_m) in [(50, 25.6), (101, 44.5), (152, 60.2)] {
            let (g, _) = backbone(depth);
            let params = count_params(&g).total.params;
            assert_eq!(params, closed_form(depth));
            let with_head = (params + fc) as f64 / 1e6;
            assert!((with_head - published_m).abs() < 0.1, "resnet{depth}: {with_head}M");
        }
        assert_eq!(closed_form(50), 23_508_032);
    }

    #[test]
    fn taps_at_strides_4_to_32() {
        let (g, taps) = backbone(50);
        let shapes = infer_shapes(&g, Shape::new(1, 3, 512, 512)).unwrap();
        let sizes: Vec<_> = taps.ids.iter().map(|id| shapes[id]).collect();
        assert_eq!(
            sizes,
            vec![
                Shape::new(1, 256, 128, 128),
                Shape::new(1, 512, 64, 64),
                Shape::new(1, 1024, 32, 32),
                Shape::new(1, 2048, 16, 16)
            ]
        );
        assert_eq!(taps.channels, [256, 512, 1024, 2048]);
    }

    #[test]
    fn unsupported_depth() {
        let mut g = GraphBuilder::new(GraphMeta::default());
        let input = g.input("input");
        assert!(matches!(build_resnet(&mut g, &input, 34), Err(BuildError::UnsupportedDepth(34))));
    }
}
