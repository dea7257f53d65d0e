//! Receptive fields: an analytic bound computed over the graph, and the
//! empirical support of a unit's input gradient.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::graph::{execute_traced, infer_shapes, Graph, GraphError, WeightStore};
use crate::image::write_pgm;
use crate::tensor::{vjp, Op, Shape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum RfError {
    #[error(transparent)]
    Graph(#[from] GraphError),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("unit {unit:?} is outside node `{node}` of shape {shape}")]
    Unit { node: String, unit: (usize, usize, usize), shape: Shape },

    #[error("empirical receptive fields need a batch of 1, got {0}")]
    Batch(usize),

    #[error("threshold must lie in [0, 1), got {0}")]
    Threshold(f64),
}

/// Receptive field along one axis, in input pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisRf {
    /// Input cells spanned by one unit.
    pub size: f64,
    /// Input cells advanced per unit step.
    pub jump: f64,
    /// Input coordinate of the center of unit 0.
    pub offset: f64,
}

impl AxisRf {
    pub const PIXEL: AxisRf = AxisRf {
        size: 1.0,
        jump: 1.0,
        offset: 0.0,
    };

    fn window(self, k: usize, stride: usize, pad: usize) -> AxisRf {
        AxisRf {
            size: self.size + (k as f64 - 1.0) * self.jump,
            jump: self.jump * stride as f64,
            offset: self.offset + ((k as f64 - 1.0) / 2.0 - pad as f64) * self.jump,
        }
    }

    /// Bilinear resize from `src` to `dst` samples. Output unit `i` reads
    /// source units `floor(s)` and `floor(s) + 1` with `s = (i + 0.5) r - 0.5`,
    /// so its field is the source field widened by one source step each side.
    fn resize(self, src: usize, dst: usize) -> AxisRf {
        let r = src as f64 / dst as f64;
        AxisRf {
            size: self.size + 2.0 * self.jump,
            jump: self.jump * r,
            offset: self.offset + (0.5 * r - 0.5) * self.jump,
        }
    }

    fn union(self, other: AxisRf) -> AxisRf {
        let lo = self.lo(0).min(other.lo(0));
        let hi = self.hi(0).max(other.hi(0));
        AxisRf {
            size: hi - lo + 1.0,
            jump: self.jump.max(other.jump),
            offset: (lo + hi) / 2.0,
        }
    }

    pub fn center(&self, i: usize) -> f64 {
        self.offset + i as f64 * self.jump
    }

    pub fn lo(&self, i: usize) -> f64 {
        self.center(i) - (self.size - 1.0) / 2.0
    }

    pub fn hi(&self, i: usize) -> f64 {
        self.center(i) + (self.size - 1.0) / 2.0
    }

    /// Integer cells of unit `i`'s field that lie inside `[0, len)`.
    pub fn clipped(&self, i: usize, len: usize) -> Option<(usize, usize)> {
        let lo = self.lo(i).ceil().max(0.0);
        let hi = self.hi(i).floor().min(len as f64 - 1.0);
        (lo <= hi).then_some((lo as usize, hi as usize))
    }

    /// True when unit `i`'s field lies entirely inside `[0, len)`.
    pub fn inside(&self, i: usize, len: usize) -> bool {
        self.lo(i) >= 0.0 && self.hi(i) <= len as f64 - 1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RFInfo {
    pub y: AxisRf,
    pub x: AxisRf,
}

impl RFInfo {
    pub const PIXEL: RFInfo = RFInfo {
        y: AxisRf::PIXEL,
        x: AxisRf::PIXEL,
    };

    /// Field of unit `(y, x)` clipped to an `h` by `w` input.
    pub fn unit_box(&self, y: usize, x: usize, h: usize, w: usize) -> Option<BoundingBox> {
        let (y0, y1) = self.y.clipped(y, h)?;
        let (x0, x1) = self.x.clipped(x, w)?;
        Some(BoundingBox { y0, y1, x0, x1 })
    }
}

impl fmt::Display for RFInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.y == self.x {
            write!(f, "size={} jump={} offset={}", self.x.size, self.x.jump, self.x.offset)
        } else {
            write!(
                f,
                "size={}x{} jump={}x{} offset={}x{}",
                self.y.size, self.x.size, self.y.jump, self.x.jump, self.y.offset, self.x.offset
            )
        }
    }
}

/// Analytic receptive field of `node_id` with respect to the graph input.
///
/// Sliding windows grow the field by `(k - 1) * jump`; sums take the union
/// of their inputs' fields; resizes scale the jump and widen the field by
/// one source step on each side. The result bounds the true support.
/// Shapes are needed only to get resize ratios.
pub fn analytic_rf(graph: &Graph, node_id: &str, input: Shape) -> Result<RFInfo, RfError> {
    let ancestors = graph.ancestors(node_id)?;
    let shapes = infer_shapes(graph, input)?;
    let mut rf: BTreeMap<&str, Option<RFInfo>> = BTreeMap::new();
    for node in graph.ordered().filter(|n| ancestors.contains(&n.id)) {
        let first = node.inputs.first().and_then(|i| rf[i.as_str()]);
        let value = match &node.op {
            Op::Input => Some(RFInfo::PIXEL),
            Op::Output | Op::Relu | Op::Affine { .. } => first,
            Op::Conv(spec) => {
                let p = spec.params;
                first.map(|r| RFInfo {
                    y: r.y.window(p.kernel.0, p.stride.0, p.padding.0),
                    x: r.x.window(p.kernel.1, p.stride.1, p.padding.1),
                })
            }
            Op::MaxPool(p) => first.map(|r| RFInfo {
                y: r.y.window(p.kernel.0, p.stride.0, p.padding.0),
                x: r.x.window(p.kernel.1, p.stride.1, p.padding.1),
            }),
            Op::Add => {
                let second = rf[node.inputs[1].as_str()];
                match (first, second) {
                    (Some(a), Some(b)) => Some(RFInfo {
                        y: a.y.union(b.y),
                        x: a.x.union(b.x),
                    }),
                    (a, b) => a.or(b),
                }
            }
            Op::Upsample => {
                let src = shapes[&node.inputs[0]];
                let dst = shapes[&node.id];
                first.map(|r| RFInfo {
                    y: r.y.resize(src.h, dst.h),
                    x: r.x.resize(src.w, dst.w),
                })
            }
        };
        rf.insert(&node.id, value);
    }
    rf[node_id].ok_or_else(|| GraphError::Unreachable(node_id.to_string()).into())
}

/// Inclusive pixel box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundingBox {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl BoundingBox {
    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn contains(&self, o: &BoundingBox) -> bool {
        self.y0 <= o.y0 && self.x0 <= o.x0 && self.y1 >= o.y1 && self.x1 >= o.x1
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "y={}..{} x={}..{}", self.y0, self.y1, self.x0, self.x1)
    }
}

/// Binary input-plane mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn bbox(&self) -> Option<BoundingBox> {
        let mut b: Option<BoundingBox> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    let e = b.get_or_insert(BoundingBox { y0: y, y1: y, x0: x, x1: x });
                    e.y0 = e.y0.min(y);
                    e.y1 = e.y1.max(y);
                    e.x0 = e.x0.min(x);
                    e.x1 = e.x1.max(x);
                }
            }
        }
        b
    }

    /// Every set cell of `other` is set here.
    pub fn contains(&self, other: &Mask) -> bool {
        self.data.len() == other.data.len() && self.data.iter().zip(&other.data).all(|(&a, &b)| a || !b)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&b| if b { 255 } else { 0 }).collect()
    }

    pub fn write_pgm<W: std::io::Write>(&self, w: W) -> std::io::Result<()> {
        write_pgm(w, self.width, self.height, &self.to_bytes())
    }
}

/// Gradient support of one unit.
#[derive(Clone, Debug, PartialEq)]
pub struct Erf {
    /// Cells with `|grad| > threshold * max |grad|` for some probe.
    pub support: Mask,
    /// Cells with any nonzero gradient.
    pub nonzero: Mask,
    pub threshold: f64,
}

/// Probe images for [`empirical_rf`]: ramps rising along +x, -x, +y and -y
/// on top of a constant 1. Under max-pooling each ramp routes the gradient
/// to one extreme of every window, so the union of supports reaches every
/// side of the field when weights are positive.
pub fn ramp_probes(shape: Shape) -> Vec<Tensor> {
    let (h, w) = (shape.h as f32, shape.w as f32);
    let ramp = move |f: fn(f32, f32, f32, f32) -> f32| Tensor::from_fn(shape, move |_, _, y, x| 1.0 + 0.01 * f(y as f32, x as f32, h, w));
    vec![
        ramp(|_, x, _, _| x),
        ramp(|_, x, _, w| w - 1.0 - x),
        ramp(|y, _, _, _| y),
        ramp(|y, _, h, _| h - 1.0 - y),
    ]
}

/// Back-propagates a one-hot gradient at `unit` of `node_id` to the input,
/// once per probe image, and unions the supports. A dead path gives empty
/// masks rather than an error.
pub fn empirical_rf(
    graph: &Graph,
    weights: &WeightStore,
    node_id: &str,
    unit: (usize, usize, usize),
    input_shape: Shape,
    threshold_frac: f64,
) -> Result<Erf, RfError> {
    empirical_rf_with(graph, weights, node_id, unit, &ramp_probes(input_shape), threshold_frac)
}

/// [`empirical_rf`] with caller-supplied probe images.
pub fn empirical_rf_with(
    graph: &Graph,
    weights: &WeightStore,
    node_id: &str,
    unit: (usize, usize, usize),
    probes: &[Tensor],
    threshold_frac: f64,
) -> Result<Erf, RfError> {
    if !(0.0..1.0).contains(&threshold_frac) {
        return Err(RfError::Threshold(threshold_frac));
    }
    let shape = probes.first().map(Tensor::shape).unwrap_or(Shape::new(1, 3, 1, 1));
    if shape.n != 1 {
        return Err(RfError::Batch(shape.n));
    }
    let mut support = Mask::empty(shape.h, shape.w);
    let mut nonzero = Mask::empty(shape.h, shape.w);
    for probe in probes {
        let grad = input_gradient(graph, weights, node_id, unit, probe)?;
        let plane = shape.plane();
        let mut mag = vec![0.0f32; plane];
        for c in 0..shape.c {
            for (m, g) in mag.iter_mut().zip(grad.plane(0, c)) {
                *m = m.max(g.abs());
            }
        }
        let peak = mag.iter().cloned().fold(0.0f32, f32::max);
        if peak == 0.0 {
            continue;
        }
        let cut = threshold_frac as f32 * peak;
        for (i, &m) in mag.iter().enumerate() {
            if m != 0.0 {
                nonzero.data[i] = true;
            }
            if m > cut {
                support.data[i] = true;
            }
        }
    }
    Ok(Erf {
        support,
        nonzero,
        threshold: threshold_frac,
    })
}

/// d unit / d input for one probe image.
pub fn input_gradient(graph: &Graph, weights: &WeightStore, node_id: &str, unit: (usize, usize, usize), probe: &Tensor) -> Result<Tensor, RfError> {
    let ancestors = graph.ancestors(node_id)?;
    let values = execute_traced(graph, weights, probe)?;
    let out_shape = values[node_id].shape();
    let (c, y, x) = unit;
    if c >= out_shape.c || y >= out_shape.h || x >= out_shape.w {
        return Err(RfError::Unit {
            node: node_id.to_string(),
            unit,
            shape: out_shape,
        });
    }
    let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut seed = Tensor::zeros(out_shape);
    let idx = seed.index(0, c, y, x);
    let mut data = seed.into_data();
    data[idx] = 1.0;
    seed = Tensor::from_vec(out_shape, data)?;
    grads.insert(node_id.to_string(), seed);

    let order: Vec<&str> = graph.order().iter().map(String::as_str).filter(|id| ancestors.contains(*id)).collect();
    let mut input_grad = Tensor::zeros(probe.shape());
    for &id in order.iter().rev() {
        let Some(g) = grads.remove(id) else { continue };
        let node = graph.node(id).expect("ordered ids exist");
        if node.op == Op::Input {
            input_grad = crate::tensor::add(&input_grad, &g)?;
            continue;
        }
        let ins: Vec<&Tensor> = node.inputs.iter().map(|i| &values[i]).collect();
        let ws = crate::graph::bound_weights(node, weights)?;
        let back = vjp(&node.op, &ins, &ws, &g)?;
        for (name, gi) in node.inputs.iter().zip(back.inputs) {
            let Some(gi) = gi else { continue };
            match grads.remove(name) {
                Some(acc) => grads.insert(name.clone(), crate::tensor::add(&acc, &gi)?),
                None => grads.insert(name.clone(), gi),
            };
        }
    }
    Ok(input_grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{random_weights_with, GraphBuilder, GraphMeta, WeightInit};
    use crate::tensor::{ConvParams, PoolParams};

    fn chain(build: impl FnOnce(&mut GraphBuilder, &str) -> String) -> Graph {
        let mut g = GraphBuilder::new(GraphMeta::default());
        let x = g.input("input");
        let y = build(&mut g, &x);
        g.output("output", &y);
        g.finish().unwrap()
    }

    #[test]
    fn single_conv() {
        let g = chain(|g, x| g.conv("conv", x, 1, 1, ConvParams::square(3, 1, false)));
        let rf = analytic_rf(&g, "conv", Shape::new(1, 1, 9, 9)).unwrap();
        assert_eq!(rf.x, AxisRf { size: 3.0, jump: 1.0, offset: 0.0 });
        assert!(rf.to_string().starts_with("size=3 jump=1"));

        let w = random_weights_with(&g, 3, WeightInit::Positive);
        let erf = empirical_rf(&g, &w, "conv", (0, 4, 4), Shape::new(1, 1, 9, 9), 0.0).unwrap();
        assert_eq!(erf.nonzero.bbox(), Some(BoundingBox { y0: 3, y1: 5, x0: 3, x1: 5 }));
        assert_eq!(erf.nonzero.count(), 9);
    }

    #[test]
    fn pointwise_conv_leaves_field_unchanged() {
        let g = chain(|g, x| {
            let a = g.conv("a", x, 1, 2, ConvParams::square(3, 2, false));
            g.conv("b", &a, 2, 2, ConvParams::square(1, 1, true))
        });
        let s = Shape::new(1, 1, 16, 16);
        assert_eq!(analytic_rf(&g, "a", s).unwrap(), analytic_rf(&g, "b", s).unwrap());
    }

    #[test]
    fn strided_composition() {
        let g = chain(|g, x| {
            let a = g.conv("a", x, 1, 1, ConvParams::square(3, 2, false));
            let b = g.maxpool("b", &a, PoolParams::square(3, 2, 1));
            g.conv("c", &b, 1, 1, ConvParams::square(3, 1, false))
        });
        let rf = analytic_rf(&g, "c", Shape::new(1, 1, 32, 32)).unwrap();
        assert_eq!(rf.x.size, 3.0 + 2.0 * 2.0 + 2.0 * 4.0);
        assert_eq!(rf.x.jump, 4.0);
        assert_eq!(rf.x.offset, 0.0);
    }

    #[test]
    fn unreachable_node() {
        let mut g = GraphBuilder::new(GraphMeta::default());
        let x = g.input("input");
        let y = g.relu("r", &x);
        g.output("output", &y);
        let g = g.finish().unwrap();
        assert!(matches!(analytic_rf(&g, "nope", Shape::new(1, 1, 4, 4)), Err(RfError::Graph(GraphError::UnknownNode(_)))));
    }

    #[test]
    fn dead_path_is_empty() {
        let g = chain(|g, x| {
            let c = g.conv("c", x, 1, 1, ConvParams::square(3, 1, false));
            g.relu("r", &c)
        });
        let mut w = random_weights_with(&g, 1, WeightInit::Positive);
        w.insert("c.weight", Tensor::full([1, 1, 3, 3], -1.0));
        let erf = empirical_rf(&g, &w, "r", (0, 2, 2), Shape::new(1, 1, 5, 5), 0.01).unwrap();
        assert_eq!(erf.nonzero.count(), 0);
        assert_eq!(erf.support.bbox(), None);
    }

    #[test]
    fn unit_out_of_range() {
        let g = chain(|g, x| g.relu("r", x));
        let w = WeightStore::new();
        assert!(matches!(
            empirical_rf(&g, &w, "r", (1, 0, 0), Shape::new(1, 1, 4, 4), 0.0),
            Err(RfError::Unit { .. })
        ));
    }
}
