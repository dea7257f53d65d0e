use std::fmt;

use super::{window_out, Result, Shape, TensorError};

/// Sliding-window hyperparameters for a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvParams {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
    pub bias: bool,
}

impl ConvParams {
    /// Square kernel with "same"-style padding `k / 2`.
    pub fn square(k: usize, stride: usize, bias: bool) -> Self {
        ConvParams {
            kernel: (k, k),
            stride: (stride, stride),
            padding: (k / 2, k / 2),
            groups: 1,
            bias,
        }
    }

    pub fn with_groups(self, groups: usize) -> Self {
        ConvParams { groups, ..self }
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1)
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let oh = window_out(h, self.kernel.0, self.stride.0, self.padding.0)?;
        let ow = window_out(w, self.kernel.1, self.stride.1, self.padding.1)?;
        Some((oh, ow))
    }
}

/// A convolution with its channel counts, enough to size its weights
/// without knowing the input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub params: ConvParams,
}

impl ConvSpec {
    pub fn weight_shape(&self) -> Shape {
        let (kh, kw) = self.params.kernel;
        Shape::new(self.out_ch, self.in_ch / self.params.groups.max(1), kh, kw)
    }

    pub fn is_depthwise(&self) -> bool {
        self.params.groups == self.in_ch && self.out_ch == self.in_ch && self.in_ch > 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolParams {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl PoolParams {
    pub fn square(k: usize, stride: usize, pad: usize) -> Self {
        PoolParams {
            kernel: (k, k),
            stride: (stride, stride),
            padding: (pad, pad),
        }
    }
}

/// Operation kinds a graph node can carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Input,
    Output,
    Conv(ConvSpec),
    MaxPool(PoolParams),
    Relu,
    Add,
    /// Bilinear resize of input 0 to the spatial size of input 1.
    Upsample,
    /// Per-channel `scale * x + shift`; inference-time batch norm.
    Affine { channels: usize },
}

impl Op {
    pub fn tag(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Output => "output",
            Op::Conv(_) => "conv",
            Op::MaxPool(_) => "maxpool",
            Op::Relu => "relu",
            Op::Add => "add",
            Op::Upsample => "upsample",
            Op::Affine { .. } => "bn-affine",
        }
    }

    /// Number of data inputs the op consumes.
    pub fn arity(&self) -> usize {
        match self {
            Op::Input => 0,
            Op::Add | Op::Upsample => 2,
            _ => 1,
        }
    }

    /// Suffixes of the weight tensors the op binds, in binding order.
    pub fn weight_suffixes(&self) -> &'static [&'static str] {
        match self {
            Op::Conv(c) if c.params.bias => &["weight", "bias"],
            Op::Conv(_) => &["weight"],
            Op::Affine { .. } => &["scale", "shift"],
            _ => &[],
        }
    }

    /// Shapes of the weight tensors, parallel to [`Op::weight_suffixes`].
    pub fn weight_shapes(&self) -> Vec<Shape> {
        match self {
            Op::Conv(c) => {
                let mut v = vec![c.weight_shape()];
                if c.params.bias {
                    v.push(Shape::new(1, 1, 1, c.out_ch));
                }
                v
            }
            Op::Affine { channels } => vec![Shape::new(1, 1, 1, *channels); 2],
            _ => Vec::new(),
        }
    }

    /// Output shape given input shapes.
    pub fn infer(&self, inputs: &[Shape]) -> Result<Shape> {
        let op = self.tag();
        if inputs.len() != self.arity() {
            return Err(TensorError::Arity {
                op,
                expected: self.arity(),
                actual: inputs.len(),
            });
        }
        match *self {
            Op::Input => unreachable!("input shapes are supplied by the caller"),
            Op::Output | Op::Relu => Ok(inputs[0]),
            Op::Conv(spec) => {
                let s = inputs[0];
                if s.c != spec.in_ch {
                    return Err(TensorError::Dimension {
                        op,
                        axis: "channel",
                        expected: spec.in_ch,
                        actual: s.c,
                    });
                }
                let (oh, ow) = spec.params.out_spatial(s.h, s.w).ok_or_else(|| TensorError::Degenerate {
                    op,
                    reason: format!("kernel {:?} does not fit input {}", spec.params.kernel, s),
                })?;
                Ok(Shape::new(s.n, spec.out_ch, oh, ow))
            }
            Op::MaxPool(p) => {
                let s = inputs[0];
                let (oh, ow) = pool_out(p, s)?;
                Ok(s.with_spatial(oh, ow))
            }
            Op::Add => {
                if inputs[0] != inputs[1] {
                    return Err(TensorError::ShapeMismatch {
                        op,
                        lhs: inputs[0],
                        rhs: inputs[1],
                    });
                }
                Ok(inputs[0])
            }
            Op::Upsample => {
                let (src, like) = (inputs[0], inputs[1]);
                if src.n != like.n {
                    return Err(TensorError::Dimension {
                        op,
                        axis: "batch",
                        expected: like.n,
                        actual: src.n,
                    });
                }
                if like.h == 0 || like.w == 0 {
                    return Err(TensorError::Degenerate {
                        op,
                        reason: "target extents must be at least 1".into(),
                    });
                }
                Ok(src.with_spatial(like.h, like.w))
            }
            Op::Affine { channels } => {
                if inputs[0].c != channels {
                    return Err(TensorError::Dimension {
                        op,
                        axis: "channel",
                        expected: channels,
                        actual: inputs[0].c,
                    });
                }
                Ok(inputs[0])
            }
        }
    }
}

pub(super) fn pool_out(p: PoolParams, s: Shape) -> Result<(usize, usize)> {
    let degenerate = |reason: String| TensorError::Degenerate { op: "maxpool", reason };
    let (kh, kw) = p.kernel;
    let (ph, pw) = p.padding;
    if s.h == 0 || s.w == 0 {
        return Err(degenerate(format!("empty input {s}")));
    }
    // A window lying entirely in padding would have no real cells.
    if ph >= kh || pw >= kw {
        return Err(degenerate(format!(
            "padding {:?} leaves windows with no real cells for kernel {:?}",
            p.padding, p.kernel
        )));
    }
    let oh = window_out(s.h, kh, p.stride.0, ph);
    let ow = window_out(s.w, kw, p.stride.1, pw);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok((oh, ow)),
        _ => Err(degenerate(format!("kernel {:?} does not fit input {}", p.kernel, s))),
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Conv(c) => {
                let p = c.params;
                write!(
                    f,
                    "conv k={}x{} s={}x{} p={}x{} g={} in={} out={}{}",
                    p.kernel.0,
                    p.kernel.1,
                    p.stride.0,
                    p.stride.1,
                    p.padding.0,
                    p.padding.1,
                    p.groups,
                    c.in_ch,
                    c.out_ch,
                    if p.bias { " bias" } else { "" }
                )
            }
            Op::MaxPool(p) => write!(
                f,
                "maxpool k={}x{} s={}x{} p={}x{}",
                p.kernel.0, p.kernel.1, p.stride.0, p.stride.1, p.padding.0, p.padding.1
            ),
            Op::Affine { channels } => write!(f, "bn-affine c={channels}"),
            Op::Upsample => write!(f, "upsample bilinear-halfpixel"),
            other => f.write_str(other.tag()),
        }
    }
}
