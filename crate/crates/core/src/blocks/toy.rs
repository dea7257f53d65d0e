use super::BackboneTaps;
use crate::graph::GraphBuilder;
use crate::tensor::{ConvParams, PoolParams};

pub const TOY_CHANNELS: [usize; 4] = [8, 16, 32, 64];

/// Small encoder for tests: a stride-1 3x3 stem, a 3x3/2 max-pool, then
/// four stride-2 3x3 conv stages tapped at strides 4, 8, 16 and 32.
pub fn build_toy(g: &mut GraphBuilder, input: &str) -> BackboneTaps {
    let stem = g.conv("backbone.stem.conv", input, 3, 8, ConvParams::square(3, 1, true));
    let stem = g.relu("backbone.stem.relu", &stem);
    let mut x = g.maxpool("backbone.stem.pool", &stem, PoolParams::square(3, 2, 1));
    let mut in_ch = 8;
    let mut ids = Vec::new();
    for (i, &c) in TOY_CHANNELS.iter().enumerate() {
        let conv = g.conv(format!("backbone.stage{}.conv", i + 1), &x, in_ch, c, ConvParams::square(3, 2, true));
        x = g.relu(format!("backbone.stage{}.relu", i + 1), &conv);
        ids.push(x.clone());
        in_ch = c;
    }
    BackboneTaps {
        ids: ids.try_into().expect("four stages"),
        channels: TOY_CHANNELS,
    }
}
