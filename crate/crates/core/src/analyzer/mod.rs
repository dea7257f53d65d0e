//! Static parameter and operation counts.
//!
//! Counting conventions are carried in every report. The default counts one
//! FLOP per multiply-accumulate and ignores bias additions, which is the
//! convention under which the published RefineNet tables are reproduced;
//! [`Conventions::mul_add`] counts multiplies and adds separately.

mod render;

pub use render::{render_comparison, render_kv, render_table};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::arch::{Backbone, Variant};
use crate::graph::{infer_shapes, Graph, GraphError};
use crate::tensor::{Op, Shape};

pub const GROUPS: [&str; 3] = ["backbone", "decoder", "clf"];

/// FLOPs charged per output element of a bilinear resize.
pub const UPSAMPLE_FLOPS_PER_ELEMENT: u64 = 11;

#[derive(Debug, Error)]
pub enum AnalyzeError {
    #[error(transparent)]
    Graph(#[from] GraphError),

    #[error("reports use different counting conventions ({0} vs {1})")]
    ConventionMismatch(String, String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conventions {
    pub flops_per_mac: u64,
    pub bias_adds: bool,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions {
            flops_per_mac: 1,
            bias_adds: false,
        }
    }
}

impl Conventions {
    /// Multiplies and adds counted separately, plus one add per bias.
    pub fn mul_add() -> Self {
        Conventions {
            flops_per_mac: 2,
            bias_adds: true,
        }
    }

    /// Stable `key=value` description.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("flops_per_mac", self.flops_per_mac.to_string()),
            ("bias_adds", self.bias_adds.to_string()),
            ("bn", "affine-2c".to_string()),
            ("upsample_flops_per_element", UPSAMPLE_FLOPS_PER_ELEMENT.to_string()),
        ]
    }

    fn describe(&self) -> String {
        self.pairs()
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerReport {
    pub id: String,
    pub op: &'static str,
    pub params: u64,
    pub macs: u64,
    /// Conv FLOPs for conv nodes, elementwise FLOPs otherwise.
    pub flops: u64,
    pub output: Option<Shape>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Totals {
    pub params: u64,
    pub macs: u64,
    pub conv_flops: u64,
    pub other_flops: u64,
}

impl Totals {
    pub fn flops(&self) -> u64 {
        self.conv_flops + self.other_flops
    }

    fn absorb(&mut self, layer: &LayerReport) {
        self.params += layer.params;
        self.macs += layer.macs;
        if layer.op == "conv" {
            self.conv_flops += layer.flops;
        } else {
            self.other_flops += layer.flops;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelReport {
    pub model: String,
    pub backbone: String,
    pub variant: String,
    pub num_classes: usize,
    /// `None` for a params-only report.
    pub input: Option<Shape>,
    pub layers: Vec<LayerReport>,
    pub total: Totals,
    pub groups: BTreeMap<String, Totals>,
    pub conventions: Conventions,
}

impl ModelReport {
    pub fn group(&self, name: &str) -> Totals {
        self.groups.get(name).copied().unwrap_or_default()
    }
}

/// Subsystem of a node: the first id segment if it is a known group.
pub fn group_of(id: &str) -> &str {
    let head = id.split('.').next().unwrap_or(id);
    if GROUPS.contains(&head) {
        head
    } else {
        "other"
    }
}

fn model_name(graph: &Graph) -> String {
    let meta = &graph.meta;
    match (meta.backbone.parse::<Backbone>(), meta.variant.parse::<Variant>()) {
        (Ok(b), Ok(v)) => crate::arch::ArchSpec::new(b, v, meta.num_classes).model_name(),
        _ => "custom".to_string(),
    }
}

fn node_params(op: &Op) -> u64 {
    op.weight_shapes().iter().map(|s| s.numel() as u64).sum()
}

fn node_work(op: &Op, out: Shape, conv: Conventions) -> (u64, u64) {
    let elems = out.numel() as u64;
    match op {
        Op::Conv(spec) => {
            let (kh, kw) = spec.params.kernel;
            let per_out = (kh * kw * (spec.in_ch / spec.params.groups)) as u64;
            let macs = per_out * elems;
            let bias = if spec.params.bias && conv.bias_adds { elems } else { 0 };
            (macs, conv.flops_per_mac * macs + bias)
        }
        Op::MaxPool(p) => (0, (p.kernel.0 * p.kernel.1 - 1) as u64 * elems),
        Op::Relu | Op::Add => (0, elems),
        Op::Affine { .. } => (0, 2 * elems),
        Op::Upsample => (0, UPSAMPLE_FLOPS_PER_ELEMENT * elems),
        Op::Input | Op::Output => (0, 0),
    }
}

fn build_report(graph: &Graph, input: Option<Shape>, conv: Conventions) -> Result<ModelReport, AnalyzeError> {
    let shapes = match input {
        Some(s) => Some(infer_shapes(graph, s)?),
        None => None,
    };
    let mut layers = Vec::with_capacity(graph.len());
    let mut total = Totals::default();
    let mut groups: BTreeMap<String, Totals> = BTreeMap::new();
    for node in graph.ordered() {
        let output = shapes.as_ref().map(|s| s[&node.id]);
        let (macs, flops) = output.map_or((0, 0), |out| node_work(&node.op, out, conv));
        let layer = LayerReport {
            id: node.id.clone(),
            op: node.op.tag(),
            params: node_params(&node.op),
            macs,
            flops,
            output,
        };
        total.absorb(&layer);
        let g = group_of(&layer.id);
        if g != "other" || layer.params + layer.flops > 0 {
            groups.entry(g.to_string()).or_default().absorb(&layer);
        }
        layers.push(layer);
    }
    Ok(ModelReport {
        model: model_name(graph),
        backbone: graph.meta.backbone.clone(),
        variant: graph.meta.variant.clone(),
        num_classes: graph.meta.num_classes,
        input,
        layers,
        total,
        groups,
        conventions: conv,
    })
}

/// Parameter counts only; no shapes needed.
pub fn count_params(graph: &Graph) -> ModelReport {
    build_report(graph, None, Conventions::default()).expect("no shape inference without an input")
}

/// Parameters, MACs and FLOPs at `input` under the default conventions.
pub fn count_flops(graph: &Graph, input: Shape) -> Result<ModelReport, AnalyzeError> {
    build_report(graph, Some(input), Conventions::default())
}

pub fn count_flops_with(graph: &Graph, input: Shape, conventions: Conventions) -> Result<ModelReport, AnalyzeError> {
    build_report(graph, Some(input), conventions)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    /// `total` or a subsystem name.
    pub name: String,
    pub a: Totals,
    pub b: Totals,
}

fn ratio(a: u64, b: u64) -> Option<f64> {
    (b != 0).then(|| a as f64 / b as f64)
}

impl CompareRow {
    pub fn params_ratio(&self) -> Option<f64> {
        ratio(self.a.params, self.b.params)
    }

    pub fn flops_ratio(&self) -> Option<f64> {
        ratio(self.a.flops(), self.b.flops())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub rows: Vec<CompareRow>,
    pub conventions: Conventions,
}

impl Comparison {
    pub fn total(&self) -> &CompareRow {
        &self.rows[0]
    }

    pub fn row(&self, name: &str) -> Option<&CompareRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Fraction of the total parameter difference explained by a subsystem.
    pub fn params_delta_share(&self, name: &str) -> Option<f64> {
        let delta = |r: &CompareRow| r.a.params as f64 - r.b.params as f64;
        let total = delta(self.total());
        (total != 0.0).then(|| self.row(name).map_or(0.0, delta) / total)
    }

    pub fn flops_delta_share(&self, name: &str) -> Option<f64> {
        let delta = |r: &CompareRow| r.a.flops() as f64 - r.b.flops() as f64;
        let total = delta(self.total());
        (total != 0.0).then(|| self.row(name).map_or(0.0, delta) / total)
    }

    /// Subsystem with the largest absolute parameter change.
    pub fn dominant(&self) -> Option<&str> {
        self.rows[1..]
            .iter()
            .max_by_key(|r| (r.a.params.abs_diff(r.b.params), r.a.flops().abs_diff(r.b.flops())))
            .map(|r| r.name.as_str())
    }
}

pub fn compare_reports(a: &ModelReport, b: &ModelReport) -> Result<Comparison, AnalyzeError> {
    if a.conventions != b.conventions {
        return Err(AnalyzeError::ConventionMismatch(a.conventions.describe(), b.conventions.describe()));
    }
    let mut names: Vec<&String> = a.groups.keys().chain(b.groups.keys()).collect();
    names.sort();
    names.dedup();
    let mut rows = vec![CompareRow {
        name: "total".to_string(),
        a: a.total,
        b: b.total,
    }];
    rows.extend(names.into_iter().map(|n| CompareRow {
        name: n.clone(),
        a: a.group(n),
        b: b.group(n),
    }));
    Ok(Comparison {
        a: a.model.clone(),
        b: b.model.clone(),
        rows,
        conventions: a.conventions,
    })
}
