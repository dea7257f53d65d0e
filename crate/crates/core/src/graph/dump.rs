use std::collections::BTreeMap;
use std::fmt::Write;

use super::Graph;
use crate::tensor::Shape;

/// Topological listing, one node per line:
/// `<id> <op and hyperparams> <- <input ids> -> <output shape>`.
pub fn dump(graph: &Graph, shapes: Option<&BTreeMap<String, Shape>>) -> String {
    let mut out = String::new();
    for node in graph.ordered() {
        let _ = write!(out, "{} {}", node.id, node.op);
        if !node.inputs.is_empty() {
            let _ = write!(out, " <- {}", node.inputs.join(","));
        }
        if let Some(shape) = shapes.and_then(|s| s.get(&node.id)) {
            let _ = write!(out, " -> {shape}");
        }
        out.push('\n');
    }
    out
}
