use super::BackboneTaps;
use crate::graph::GraphBuilder;
use crate::tensor::ConvParams;

/// (expansion t, output channels c, repeats n, first stride s)
pub const INVERTED_RESIDUALS: [(usize, usize, usize, usize); 7] = [
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
];

// Stage indices (into INVERTED_RESIDUALS) whose last block is tapped.
const TAPPED_STAGES: [usize; 4] = [1, 2, 4, 6];

fn conv_bn(g: &mut GraphBuilder, prefix: &str, from: &str, in_ch: usize, out_ch: usize, p: ConvParams) -> String {
    let c = g.conv(format!("{prefix}.conv"), from, in_ch, out_ch, p);
    g.affine(format!("{prefix}.bn"), &c, out_ch)
}

/// MobileNet-v2 feature extractor up to the 320-channel stage. The final
/// 1x1 expansion to 1280 channels belongs to the classifier and is left
/// out. Activations are plain ReLU.
pub fn build_mobilenet_v2(g: &mut GraphBuilder, input: &str) -> BackboneTaps {
    let stem = conv_bn(g, "backbone.stem", input, 3, 32, ConvParams::square(3, 2, false));
    let mut x = g.relu("backbone.stem.relu", &stem);
    let mut in_ch = 32;
    let mut index = 0;
    let mut ids = Vec::new();
    let mut channels = [0; 4];
    for (stage, &(t, c, n, s)) in INVERTED_RESIDUALS.iter().enumerate() {
        for j in 0..n {
            index += 1;
            let p = format!("backbone.block{index:02}");
            let stride = if j == 0 { s } else { 1 };
            let hidden = in_ch * t;
            let mut y = x.clone();
            if t != 1 {
                y = conv_bn(g, &format!("{p}.expand"), &y, in_ch, hidden, ConvParams::square(1, 1, false));
                y = g.relu(format!("{p}.expand.relu"), &y);
            }
            y = conv_bn(g, &format!("{p}.dw"), &y, hidden, hidden, ConvParams::square(3, stride, false).with_groups(hidden));
            y = g.relu(format!("{p}.dw.relu"), &y);
            y = conv_bn(g, &format!("{p}.project"), &y, hidden, c, ConvParams::square(1, 1, false));
            x = if stride == 1 && in_ch == c {
                g.add(format!("{p}.add"), &x, &y)
            } else {
                y
            };
            in_ch = c;
        }
        if let Some(slot) = TAPPED_STAGES.iter().position(|&t| t == stage) {
            ids.push(x.clone());
            channels[slot] = c;
        }
    }
    BackboneTaps {
        ids: ids.try_into().expect("four taps"),
        channels,
    }
}
