//! Architecture description files.
//!
//! Line-oriented `key = value` pairs; `#` starts a comment; several
//! `key=value` pairs may share a line. Lists are comma separated, input
//! sizes are written `HxW`. The canonical form written by [`serialize_spec`]
//! puts one key per line in a fixed order:
//!
//! ```text
//! backbone = resnet101
//! variant = lw
//! num_classes = 21
//! channel_plan = 512,256,256,256
//! crp_stages = 4
//! input_size = 512x512
//! mean = 0.485,0.456,0.406
//! std = 0.229,0.224,0.225
//! ```

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::blocks::{self, BuildError};
use crate::graph::Graph;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SpecError {
    #[error("line {line}: unknown key `{key}` (valid keys: {})", KEYS.join(", "))]
    UnknownKey { line: usize, key: String },

    #[error("line {line}: invalid value `{value}` for `{key}`; expected {expected}")]
    InvalidValue {
        line: usize,
        key: String,
        value: String,
        expected: String,
    },

    #[error("line {line}: expected `key = value`, found `{text}`")]
    Malformed { line: usize, text: String },

    #[error("line {line}: `{key}` given twice")]
    Duplicate { line: usize, key: String },

    #[error("missing required key `{0}`")]
    Missing(&'static str),
}

const KEYS: [&str; 8] = [
    "backbone",
    "variant",
    "num_classes",
    "channel_plan",
    "crp_stages",
    "input_size",
    "mean",
    "std",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Backbone {
    ResNet50,
    ResNet101,
    ResNet152,
    MobileNetV2,
    Toy,
}

impl Backbone {
    pub const ALL: [Backbone; 5] = [
        Backbone::ResNet50,
        Backbone::ResNet101,
        Backbone::ResNet152,
        Backbone::MobileNetV2,
        Backbone::Toy,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Backbone::ResNet50 => "resnet50",
            Backbone::ResNet101 => "resnet101",
            Backbone::ResNet152 => "resnet152",
            Backbone::MobileNetV2 => "mobilenetv2",
            Backbone::Toy => "toy",
        }
    }

    /// Decoder widths used when the file does not give `channel_plan`,
    /// deepest level first.
    pub fn default_channel_plan(&self) -> [usize; 4] {
        match self {
            Backbone::ResNet50 | Backbone::ResNet101 | Backbone::ResNet152 => [512, 256, 256, 256],
            Backbone::MobileNetV2 => [256, 256, 256, 256],
            Backbone::Toy => [32, 16, 16, 16],
        }
    }

    fn label(&self) -> &'static str {
        match self {
            Backbone::ResNet50 => "50",
            Backbone::ResNet101 => "101",
            Backbone::ResNet152 => "152",
            Backbone::MobileNetV2 => "MobileNet-v2",
            Backbone::Toy => "Toy",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// 3x3 convolutions everywhere, RCUs around every CRP.
    Original,
    /// 1x1 CRP/fusion/adaptation convolutions, bottleneck RCUs kept.
    LwWithRcu,
    /// 1x1 convolutions and no RCUs.
    Lw,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Original, Variant::LwWithRcu, Variant::Lw];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Original => "original",
            Variant::LwWithRcu => "lw_with_rcu",
            Variant::Lw => "lw",
        }
    }

    pub fn is_light(&self) -> bool {
        !matches!(self, Variant::Original)
    }
}

macro_rules! enum_from_str {
    ($ty:ty) => {
        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                <$ty>::ALL
                    .into_iter()
                    .find(|v| v.as_str() == s)
                    .ok_or_else(|| {
                        let names: Vec<&str> = <$ty>::ALL.iter().map(|v| v.as_str()).collect();
                        format!("one of {{{}}}", names.join(", "))
                    })
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

enum_from_str!(Backbone);
enum_from_str!(Variant);

/// A parsed model description with defaults applied.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchSpec {
    pub backbone: Backbone,
    pub variant: Variant,
    pub num_classes: usize,
    /// Decoder widths per level, deepest (stride 32) first.
    pub channel_plan: [usize; 4],
    pub crp_stages: usize,
    /// (H, W) used for reporting.
    pub input_size: (usize, usize),
    /// Per-channel normalization applied to [0, 1] pixel values.
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl ArchSpec {
    pub fn new(backbone: Backbone, variant: Variant, num_classes: usize) -> Self {
        ArchSpec {
            backbone,
            variant,
            num_classes,
            channel_plan: backbone.default_channel_plan(),
            crp_stages: 4,
            input_size: (512, 512),
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }

    /// Row label in the style `RefineNet-101-LW`.
    pub fn model_name(&self) -> String {
        let suffix = match self.variant {
            Variant::Original => "",
            Variant::LwWithRcu => "-LW-WITH-RCU",
            Variant::Lw => "-LW",
        };
        format!("RefineNet-{}{}", self.backbone.label(), suffix)
    }

    pub fn build_graph(&self) -> Result<Graph, BuildError> {
        blocks::assemble_refinenet(self)
    }
}

pub fn parse_spec(text: &str) -> Result<ArchSpec, SpecError> {
    let mut backbone = None;
    let mut variant = None;
    let mut num_classes = None;
    let mut channel_plan = None;
    let mut crp_stages = None;
    let mut input_size = None;
    let mut mean = None;
    let mut std = None;
    let mut seen: Vec<&str> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        for (key, value) in pairs(content, line)? {
            let value = value.as_str();
            let key_static = KEYS.iter().find(|k| **k == key).ok_or_else(|| SpecError::UnknownKey {
                line,
                key: key.to_string(),
            })?;
            if seen.contains(key_static) {
                return Err(SpecError::Duplicate {
                    line,
                    key: key.to_string(),
                });
            }
            seen.push(key_static);
            let invalid = |expected: String| SpecError::InvalidValue {
                line,
                key: key.to_string(),
                value: value.to_string(),
                expected,
            };
            match key {
                "backbone" => backbone = Some(value.parse::<Backbone>().map_err(invalid)?),
                "variant" => variant = Some(value.parse::<Variant>().map_err(invalid)?),
                "num_classes" => num_classes = Some(positive(value).ok_or_else(|| invalid("a positive integer".into()))?),
                "crp_stages" => crp_stages = Some(positive(value).ok_or_else(|| invalid("a positive integer".into()))?),
                "channel_plan" => {
                    let v: Option<Vec<usize>> = value.split(',').map(positive).collect();
                    let v = v.filter(|v| v.len() == 4).ok_or_else(|| invalid("four positive integers".into()))?;
                    channel_plan = Some([v[0], v[1], v[2], v[3]]);
                }
                "input_size" => {
                    let (h, w) = value.split_once('x').ok_or_else(|| invalid("HxW".into()))?;
                    let hw = positive(h).zip(positive(w)).ok_or_else(|| invalid("HxW with positive extents".into()))?;
                    input_size = Some(hw);
                }
                "mean" | "std" => {
                    let v: Option<Vec<f32>> = value.split(',').map(|s| s.parse::<f32>().ok().filter(|x| x.is_finite())).collect();
                    let v = v
                        .filter(|v| v.len() == 3 && (key == "mean" || v.iter().all(|x| *x > 0.0)))
                        .ok_or_else(|| invalid("three finite numbers (std positive)".into()))?;
                    let arr = [v[0], v[1], v[2]];
                    if key == "mean" {
                        mean = Some(arr);
                    } else {
                        std = Some(arr);
                    }
                }
                _ => unreachable!(),
            }
        }
    }

    let backbone = backbone.ok_or(SpecError::Missing("backbone"))?;
    let variant = variant.ok_or(SpecError::Missing("variant"))?;
    let num_classes = num_classes.ok_or(SpecError::Missing("num_classes"))?;
    let mut spec = ArchSpec::new(backbone, variant, num_classes);
    if let Some(v) = channel_plan {
        spec.channel_plan = v;
    }
    if let Some(v) = crp_stages {
        spec.crp_stages = v;
    }
    if let Some(v) = input_size {
        spec.input_size = v;
    }
    if let Some(v) = mean {
        spec.mean = v;
    }
    if let Some(v) = std {
        spec.std = v;
    }
    Ok(spec)
}

pub fn serialize_spec(spec: &ArchSpec) -> String {
    let list = |v: &[String]| v.join(",");
    let plan: Vec<String> = spec.channel_plan.iter().map(|c| c.to_string()).collect();
    let mean: Vec<String> = spec.mean.iter().map(|c| c.to_string()).collect();
    let std: Vec<String> = spec.std.iter().map(|c| c.to_string()).collect();
    format!(
        "backbone = {}\nvariant = {}\nnum_classes = {}\nchannel_plan = {}\ncrp_stages = {}\ninput_size = {}x{}\nmean = {}\nstd = {}\n",
        spec.backbone,
        spec.variant,
        spec.num_classes,
        list(&plan),
        spec.crp_stages,
        spec.input_size.0,
        spec.input_size.1,
        list(&mean),
        list(&std),
    )
}

fn positive(s: &str) -> Option<usize> {
    s.parse::<usize>().ok().filter(|&v| v > 0)
}

/// Splits one comment-free line into `(key, value)` pairs, tolerating
/// whitespace around `=` and after commas.
fn pairs(content: &str, line: usize) -> Result<Vec<(&str, String)>, SpecError> {
    let malformed = || SpecError::Malformed {
        line,
        text: content.trim().to_string(),
    };
    let mut out = Vec::new();
    let mut rest = content.trim();
    while !rest.is_empty() {
        let eq = rest.find('=').ok_or_else(malformed)?;
        let key = rest[..eq].trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(malformed());
        }
        let after = rest[eq + 1..].trim_start();
        // The value runs until whitespace that is not just after a comma.
        let bytes = after.as_bytes();
        let mut end = 0;
        while end < bytes.len() {
            if bytes[end].is_ascii_whitespace() {
                let prev_comma = end > 0 && bytes[end - 1] == b',';
                let next = after[end..].trim_start();
                if !prev_comma && !next.starts_with(',') {
                    break;
                }
            }
            end += 1;
        }
        let value = after[..end].trim();
        if value.is_empty() {
            return Err(malformed());
        }
        out.push((key, value.split_whitespace().collect()));
        rest = after[end..].trim_start();
    }
    Ok(out)
}

impl ArchSpec {
    /// Canonical text; see [`serialize_spec`].
    pub fn to_text(&self) -> String {
        serialize_spec(self)
    }
}
