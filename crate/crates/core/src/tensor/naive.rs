//! Direct loop versions of every kernel: one output cell at a time, bounds
//! checked per tap, no lowering and no parallelism.

use super::kernels::{bilinear_tap, check_conv};
use super::op::pool_out;
use super::{ConvParams, PoolParams, Result, Shape, Tensor, TensorError};

pub fn conv2d(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, p: ConvParams) -> Result<Tensor> {
    let (oh, ow) = check_conv(input.shape(), weight.shape(), bias.map(Tensor::shape), &p)?;
    let s = input.shape();
    let ws = weight.shape();
    let cin_g = ws.c;
    let cout_g = ws.n / p.groups;
    let out = Shape::new(s.n, ws.n, oh, ow);
    Ok(Tensor::from_fn(out, |n, co, oy, ox| {
        let g = co / cout_g;
        let mut acc = 0.0f32;
        for ci in 0..cin_g {
            for ky in 0..p.kernel.0 {
                for kx in 0..p.kernel.1 {
                    let iy = (oy * p.stride.0 + ky) as isize - p.padding.0 as isize;
                    let ix = (ox * p.stride.1 + kx) as isize - p.padding.1 as isize;
                    if iy < 0 || ix < 0 || iy as usize >= s.h || ix as usize >= s.w {
                        continue;
                    }
                    acc += input.at(n, g * cin_g + ci, iy as usize, ix as usize) * weight.at(co, ci, ky, kx);
                }
            }
        }
        acc + bias.map_or(0.0, |b| b.data()[co])
    }))
}

pub fn maxpool2d(input: &Tensor, p: PoolParams) -> Result<Tensor> {
    let s = input.shape();
    let (oh, ow) = pool_out(p, s)?;
    Ok(Tensor::from_fn(s.with_spatial(oh, ow), |n, c, oy, ox| {
        let mut m = f32::NEG_INFINITY;
        for ky in 0..p.kernel.0 {
            for kx in 0..p.kernel.1 {
                let iy = (oy * p.stride.0 + ky) as isize - p.padding.0 as isize;
                let ix = (ox * p.stride.1 + kx) as isize - p.padding.1 as isize;
                if iy >= 0 && ix >= 0 && (iy as usize) < s.h && (ix as usize) < s.w {
                    m = m.max(input.at(n, c, iy as usize, ix as usize));
                }
            }
        }
        m
    }))
}

pub fn relu(input: &Tensor) -> Tensor {
    let s = input.shape();
    Tensor::from_fn(s, |n, c, y, x| {
        let v = input.at(n, c, y, x);
        if v > 0.0 {
            v
        } else {
            0.0
        }
    })
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "add",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(Tensor::from_fn(a.shape(), |n, c, y, x| a.at(n, c, y, x) + b.at(n, c, y, x)))
}

pub fn affine(input: &Tensor, scale: &Tensor, shift: &Tensor) -> Result<Tensor> {
    let c = input.shape().c;
    if scale.len() != c || shift.len() != c {
        return Err(TensorError::Dimension {
            op: "bn-affine",
            axis: "channel",
            expected: c,
            actual: scale.len().min(shift.len()),
        });
    }
    Ok(Tensor::from_fn(input.shape(), |n, ch, y, x| {
        scale.data()[ch] * input.at(n, ch, y, x) + shift.data()[ch]
    }))
}

pub fn upsample_bilinear(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = input.shape();
    if out_h == 0 || out_w == 0 || s.h == 0 || s.w == 0 {
        return Err(TensorError::Degenerate {
            op: "upsample",
            reason: format!("cannot resize {s} to {out_h}x{out_w}"),
        });
    }
    Ok(Tensor::from_fn(s.with_spatial(out_h, out_w), |n, c, oy, ox| {
        let (y0, y1, fy) = bilinear_tap(oy, s.h, out_h);
        let (x0, x1, fx) = bilinear_tap(ox, s.w, out_w);
        let top = (1.0 - fx) * input.at(n, c, y0, x0) + fx * input.at(n, c, y0, x1);
        let bottom = (1.0 - fx) * input.at(n, c, y1, x0) + fx * input.at(n, c, y1, x1);
        (1.0 - fy) * top + fy * bottom
    }))
}
