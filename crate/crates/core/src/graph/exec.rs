use std::collections::BTreeMap;

use super::{infer_shapes, Graph, GraphError, Node, Result, WeightStore};
use crate::tensor::{self, Op, Tensor};

/// Buffer accounting for one execution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExecStats {
    /// Tensors produced (one per non-input node, plus the bound input).
    pub allocations: usize,
    /// Largest number of node outputs alive at once.
    pub peak_live: usize,
}

/// Runs the graph and returns the output-node values in graph output order.
pub fn execute(graph: &Graph, weights: &WeightStore, input: &Tensor) -> Result<Vec<Tensor>> {
    execute_with_stats(graph, weights, input).map(|(out, _)| out)
}

/// Like [`execute`], but also reports buffer statistics. Each intermediate
/// is dropped as soon as its last consumer has run.
pub fn execute_with_stats(graph: &Graph, weights: &WeightStore, input: &Tensor) -> Result<(Vec<Tensor>, ExecStats)> {
    let shapes = infer_shapes(graph, input.shape())?;
    weights.validate(graph)?;

    let mut remaining = graph.consumer_counts();
    let mut live: BTreeMap<&str, Tensor> = BTreeMap::new();
    let mut stats = ExecStats::default();
    let mut outputs: BTreeMap<&str, Tensor> = BTreeMap::new();

    for node in graph.ordered() {
        let value = {
            let ins: Vec<&Tensor> = node.inputs.iter().map(|i| &live[i.as_str()]).collect();
            run_node(node, &ins, weights, input)?
        };
        assert_eq!(value.shape(), shapes[&node.id], "node {} disagrees with shape inference", node.id);
        stats.allocations += 1;
        for i in &node.inputs {
            let r = remaining.get_mut(i.as_str()).expect("validated");
            *r -= 1;
            if *r == 0 {
                live.remove(i.as_str());
            }
        }
        if node.op == Op::Output {
            outputs.insert(&node.id, value);
        } else if remaining[node.id.as_str()] > 0 {
            live.insert(&node.id, value);
        }
        stats.peak_live = stats.peak_live.max(live.len() + outputs.len());
    }
    let out = graph
        .outputs()
        .iter()
        .map(|id| outputs.remove(id.as_str()).expect("every output node runs"))
        .collect();
    Ok((out, stats))
}

/// Runs the graph keeping every node's output, keyed by node id.
pub fn execute_traced(graph: &Graph, weights: &WeightStore, input: &Tensor) -> Result<BTreeMap<String, Tensor>> {
    infer_shapes(graph, input.shape())?;
    weights.validate(graph)?;
    let mut values: BTreeMap<String, Tensor> = BTreeMap::new();
    for node in graph.ordered() {
        let value = {
            let ins: Vec<&Tensor> = node.inputs.iter().map(|i| &values[i]).collect();
            run_node(node, &ins, weights, input)?
        };
        values.insert(node.id.clone(), value);
    }
    Ok(values)
}

pub(crate) fn bound_weights<'a>(node: &Node, weights: &'a WeightStore) -> Result<Vec<&'a Tensor>> {
    node.weights
        .iter()
        .map(|w| weights.get(w).ok_or_else(|| GraphError::MissingWeight(w.clone())))
        .collect()
}

fn run_node(node: &Node, ins: &[&Tensor], weights: &WeightStore, input: &Tensor) -> Result<Tensor> {
    let ws = bound_weights(node, weights)?;
    let wrap = |source| GraphError::Shape {
        node: node.id.clone(),
        inputs: node.inputs.clone(),
        source,
    };
    match node.op {
        Op::Input => Ok(input.clone()),
        Op::Output => Ok(ins[0].clone()),
        Op::Conv(spec) => tensor::conv2d(ins[0], ws[0], ws.get(1).copied(), spec.params).map_err(wrap),
        Op::MaxPool(p) => tensor::maxpool2d(ins[0], p).map_err(wrap),
        Op::Relu => Ok(tensor::relu(ins[0])),
        Op::Add => tensor::add(ins[0], ins[1]).map_err(wrap),
        Op::Upsample => {
            let like = ins[1].shape();
            tensor::upsample_bilinear(ins[0], like.h, like.w).map_err(wrap)
        }
        Op::Affine { .. } => tensor::affine(ins[0], ws[0], ws[1]).map_err(wrap),
    }
}
