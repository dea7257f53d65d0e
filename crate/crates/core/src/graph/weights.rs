use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, GraphError, Result};
use crate::tensor::{Op, Tensor};

/// Named weight tensors bound to graph nodes at execution time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore {
    tensors: BTreeMap<String, Tensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Sum of element counts over all tensors.
    pub fn total_elements(&self) -> u64 {
        self.tensors.values().map(|t| t.len() as u64).sum()
    }

    /// Replaces every tensor whose name satisfies `pred` with zeros.
    pub fn zero_where(&mut self, mut pred: impl FnMut(&str) -> bool) {
        for (name, t) in self.tensors.iter_mut() {
            if pred(name) {
                *t = Tensor::zeros(t.shape());
            }
        }
    }

    /// Checks that every weight the graph names is present with the shape
    /// its node declares.
    pub fn validate(&self, graph: &Graph) -> Result<()> {
        for node in graph.nodes() {
            for (name, expected) in node.weights.iter().zip(node.op.weight_shapes()) {
                let t = self.get(name).ok_or_else(|| GraphError::MissingWeight(name.clone()))?;
                if t.shape() != expected {
                    return Err(GraphError::WeightShape {
                        name: name.clone(),
                        expected,
                        actual: t.shape(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Names the graph needs that this store lacks, in sorted order.
    pub fn missing(&self, graph: &Graph) -> Vec<String> {
        let mut out: Vec<String> = graph
            .nodes()
            .flat_map(|n| n.weights.iter())
            .filter(|w| !self.tensors.contains_key(*w))
            .cloned()
            .collect();
        out.sort();
        out
    }
}

impl FromIterator<(String, Tensor)> for WeightStore {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        WeightStore {
            tensors: iter.into_iter().collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightInit {
    /// Conv weights uniform in `±sqrt(6 / fan_in)`, biases in `±1/sqrt(fan_in)`.
    He,
    /// Conv weights and biases uniform in `(0, sqrt(6 / fan_in)]`; used where
    /// every path must carry signal and no unit may be dead.
    Positive,
}

/// He-initialized weights; affine nodes get scale 1, shift 0.
pub fn random_weights(graph: &Graph, seed: u64) -> WeightStore {
    random_weights_with(graph, seed, WeightInit::He)
}

/// Each tensor draws from its own stream seeded by `seed` and its name, so
/// the values do not depend on traversal order.
pub fn random_weights_with(graph: &Graph, seed: u64, init: WeightInit) -> WeightStore {
    let mut store = WeightStore::new();
    for node in graph.nodes() {
        let shapes = node.op.weight_shapes();
        for ((name, suffix), shape) in node.weights.iter().zip(node.op.weight_suffixes()).zip(shapes) {
            let t = match node.op {
                Op::Conv(spec) => {
                    let ws = spec.weight_shape();
                    let fan_in = (ws.c * ws.h * ws.w) as f32;
                    let bound = if *suffix == "weight" {
                        (6.0 / fan_in).sqrt()
                    } else {
                        1.0 / fan_in.sqrt()
                    };
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(name));
                    let data = (0..shape.numel())
                        .map(|_| match init {
                            WeightInit::He => rng.gen_range(-bound..=bound),
                            WeightInit::Positive => bound * (1.0 - rng.gen::<f32>()),
                        })
                        .collect();
                    Tensor::from_vec(shape, data).expect("sized from shape")
                }
                Op::Affine { .. } => Tensor::full(shape, if *suffix == "scale" { 1.0 } else { 0.0 }),
                _ => unreachable!("only conv and affine nodes carry weights"),
            };
            store.insert(name.clone(), t);
        }
    }
    store
}

/// 64-bit FNV-1a.
fn name_hash(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}
