//! Computation-graph IR: nodes, validation, topological order, shape
//! inference, execution and weight binding.

mod dump;
mod exec;
mod weights;

pub use dump::dump;
pub use exec::{execute, execute_traced, execute_with_stats, ExecStats};
pub(crate) use exec::bound_weights;
pub use weights::{random_weights, random_weights_with, WeightInit, WeightStore};

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::tensor::{Op, Shape, TensorError};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),

    #[error("node `{node}` references unknown input `{input}`")]
    UnknownInput { node: String, input: String },

    #[error("graph has a cycle through: {}", .0.join(", "))]
    Cycle(Vec<String>),

    #[error("graph has no {0} node")]
    Missing(&'static str),

    #[error("node `{node}`: {op} takes {expected} inputs, got {actual}")]
    Arity {
        node: String,
        op: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("node `{node}` (inputs {}): {source}", .inputs.join(", "))]
    Shape {
        node: String,
        inputs: Vec<String>,
        #[source]
        source: TensorError,
    },

    #[error("unresolved weight `{0}`")]
    MissingWeight(String),

    #[error("weight `{name}` has shape {actual}, node expects {expected}")]
    WeightShape { name: String, expected: Shape, actual: Shape },

    #[error("node `{0}` is not reachable from the graph input")]
    Unreachable(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("input tensor {actual} does not match declared input {expected}")]
    InputShape { expected: Shape, actual: Shape },
}

pub type Result<T> = std::result::Result<T, GraphError>;

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub id: String,
    pub op: Op,
    /// Weight tensor names, parallel to `op.weight_suffixes()`.
    pub weights: Vec<String>,
    pub inputs: Vec<String>,
}

impl Node {
    /// A node whose weights are named `<id>.<suffix>`.
    pub fn new(id: impl Into<String>, op: Op, inputs: &[&str]) -> Self {
        let id = id.into();
        let weights = op.weight_suffixes().iter().map(|s| format!("{id}.{s}")).collect();
        Node {
            id,
            op,
            weights,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GraphMeta {
    pub variant: String,
    pub backbone: String,
    pub num_classes: usize,
}

/// A validated, acyclic computation graph. Immutable once built.
#[derive(Clone, Debug)]
pub struct Graph {
    nodes: BTreeMap<String, Node>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    order: Vec<String>,
    pub meta: GraphMeta,
}

impl Graph {
    /// Validates references and arities and computes the execution order.
    /// Input and output lists are taken from the `input`/`output` nodes in
    /// the order given.
    pub fn from_nodes(nodes: Vec<Node>, meta: GraphMeta) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        for node in nodes {
            match node.op {
                Op::Input => inputs.push(node.id.clone()),
                Op::Output => outputs.push(node.id.clone()),
                _ => {}
            }
            if map.contains_key(&node.id) {
                return Err(GraphError::DuplicateNode(node.id));
            }
            map.insert(node.id.clone(), node);
        }
        for node in map.values() {
            if node.inputs.len() != node.op.arity() {
                return Err(GraphError::Arity {
                    node: node.id.clone(),
                    op: node.op.tag(),
                    expected: node.op.arity(),
                    actual: node.inputs.len(),
                });
            }
            for input in &node.inputs {
                if !map.contains_key(input) {
                    return Err(GraphError::UnknownInput {
                        node: node.id.clone(),
                        input: input.clone(),
                    });
                }
            }
        }
        if inputs.is_empty() {
            return Err(GraphError::Missing("input"));
        }
        if outputs.is_empty() {
            return Err(GraphError::Missing("output"));
        }
        let order = topological_order(&map)?;
        Ok(Graph {
            nodes: map,
            inputs,
            outputs,
            order,
            meta,
        })
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn inputs(&self) -> &[String] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[String] {
        &self.outputs
    }

    /// Deterministic execution order: Kahn's algorithm, lowest id first
    /// among ready nodes.
    pub fn order(&self) -> &[String] {
        &self.order
    }

    /// Nodes in execution order.
    pub fn ordered(&self) -> impl Iterator<Item = &Node> {
        self.order.iter().map(|id| &self.nodes[id])
    }

    /// Number of nodes consuming each node's output.
    pub fn consumer_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts: BTreeMap<&str, usize> = self.nodes.keys().map(|k| (k.as_str(), 0)).collect();
        for node in self.nodes.values() {
            for input in &node.inputs {
                *counts.get_mut(input.as_str()).expect("validated") += 1;
            }
        }
        counts
    }

    /// Every node on some path from `id` back to the graph inputs, including `id`.
    pub fn ancestors(&self, id: &str) -> Result<BTreeSet<String>> {
        if !self.nodes.contains_key(id) {
            return Err(GraphError::UnknownNode(id.to_string()));
        }
        let mut seen = BTreeSet::new();
        let mut stack = vec![id.to_string()];
        while let Some(cur) = stack.pop() {
            if seen.insert(cur.clone()) {
                stack.extend(self.nodes[&cur].inputs.iter().cloned());
            }
        }
        Ok(seen)
    }
}

fn topological_order(nodes: &BTreeMap<String, Node>) -> Result<Vec<String>> {
    let mut indegree: BTreeMap<&str, usize> = BTreeMap::new();
    let mut consumers: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for node in nodes.values() {
        indegree.insert(&node.id, node.inputs.len());
        for input in &node.inputs {
            consumers.entry(input.as_str()).or_default().push(&node.id);
        }
    }
    let mut ready: BTreeSet<&str> = indegree.iter().filter(|(_, &d)| d == 0).map(|(&k, _)| k).collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(id) = ready.pop_first() {
        order.push(id.to_string());
        for &consumer in consumers.get(id).map(Vec::as_slice).unwrap_or(&[]) {
            let d = indegree.get_mut(consumer).expect("known node");
            *d -= 1;
            if *d == 0 {
                ready.insert(consumer);
            }
        }
    }
    if order.len() != nodes.len() {
        let stuck = indegree
            .into_iter()
            .filter(|(_, d)| *d > 0)
            .map(|(k, _)| k.to_string())
            .collect();
        return Err(GraphError::Cycle(stuck));
    }
    Ok(order)
}

/// Output shape of every node when each input node receives `input`.
pub fn infer_shapes(graph: &Graph, input: Shape) -> Result<BTreeMap<String, Shape>> {
    let mut shapes = BTreeMap::new();
    for node in graph.ordered() {
        let shape = if node.op == Op::Input {
            input
        } else {
            let ins: Vec<Shape> = node.inputs.iter().map(|i| shapes[i]).collect();
            node.op.infer(&ins).map_err(|source| GraphError::Shape {
                node: node.id.clone(),
                inputs: node.inputs.clone(),
                source,
            })?
        };
        shapes.insert(node.id.clone(), shape);
    }
    Ok(shapes)
}

/// Incremental graph construction used by the block builders. Ids are
/// scoped with dot-separated prefixes.
pub struct GraphBuilder {
    nodes: Vec<Node>,
    ids: BTreeSet<String>,
    meta: GraphMeta,
}

impl GraphBuilder {
    pub fn new(meta: GraphMeta) -> Self {
        GraphBuilder {
            nodes: Vec::new(),
            ids: BTreeSet::new(),
            meta,
        }
    }

    /// Adds a node and returns its id. Panics on a duplicate id, which is a
    /// bug in the calling builder.
    pub fn push(&mut self, id: impl Into<String>, op: Op, inputs: &[&str]) -> String {
        let node = Node::new(id, op, inputs);
        assert!(self.ids.insert(node.id.clone()), "duplicate node id {}", node.id);
        let id = node.id.clone();
        self.nodes.push(node);
        id
    }

    pub fn input(&mut self, id: &str) -> String {
        self.push(id, Op::Input, &[])
    }

    pub fn output(&mut self, id: &str, from: &str) -> String {
        self.push(id, Op::Output, &[from])
    }

    pub fn conv(&mut self, id: impl Into<String>, from: &str, in_ch: usize, out_ch: usize, params: crate::tensor::ConvParams) -> String {
        self.push(id, Op::Conv(crate::tensor::ConvSpec { in_ch, out_ch, params }), &[from])
    }

    pub fn relu(&mut self, id: impl Into<String>, from: &str) -> String {
        self.push(id, Op::Relu, &[from])
    }

    pub fn affine(&mut self, id: impl Into<String>, from: &str, channels: usize) -> String {
        self.push(id, Op::Affine { channels }, &[from])
    }

    pub fn maxpool(&mut self, id: impl Into<String>, from: &str, params: crate::tensor::PoolParams) -> String {
        self.push(id, Op::MaxPool(params), &[from])
    }

    pub fn add(&mut self, id: impl Into<String>, a: &str, b: &str) -> String {
        self.push(id, Op::Add, &[a, b])
    }

    /// Bilinear resize of `from` to the spatial size of `like`.
    pub fn upsample(&mut self, id: impl Into<String>, from: &str, like: &str) -> String {
        self.push(id, Op::Upsample, &[from, like])
    }

    pub fn finish(self) -> Result<Graph> {
        Graph::from_nodes(self.nodes, self.meta)
    }
}
