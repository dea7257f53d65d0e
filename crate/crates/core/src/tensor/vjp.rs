//! Vector-Jacobian products for every forward kernel.

use super::kernels::bilinear_tap;
use super::{Op, Result, Shape, Tensor, TensorError};

/// Gradients with respect to the data inputs (`None` where no gradient
/// flows, e.g. the size reference of an upsample) and the bound weights.
#[derive(Debug)]
pub struct Grads {
    pub inputs: Vec<Option<Tensor>>,
    pub weights: Vec<Tensor>,
}

/// Back-propagates `grad_out` through `op` evaluated at `inputs`/`weights`.
pub fn vjp(op: &Op, inputs: &[&Tensor], weights: &[&Tensor], grad_out: &Tensor) -> Result<Grads> {
    if matches!(op, Op::Input) {
        return Err(TensorError::Unsupported(op.tag().to_string()));
    }
    let in_shapes: Vec<Shape> = inputs.iter().map(|t| t.shape()).collect();
    let expected = op.infer(&in_shapes)?;
    if grad_out.shape() != expected {
        return Err(TensorError::ShapeMismatch {
            op: "vjp",
            lhs: expected,
            rhs: grad_out.shape(),
        });
    }
    let need = op.weight_suffixes().len();
    if weights.len() != need {
        return Err(TensorError::Arity {
            op: op.tag(),
            expected: need,
            actual: weights.len(),
        });
    }
    let g = grad_out;
    Ok(match *op {
        Op::Input => unreachable!(),
        Op::Output => Grads {
            inputs: vec![Some(g.clone())],
            weights: vec![],
        },
        Op::Relu => {
            let x = inputs[0];
            let data = x
                .data()
                .iter()
                .zip(g.data())
                .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                .collect();
            Grads {
                inputs: vec![Some(Tensor::from_vec(x.shape(), data)?)],
                weights: vec![],
            }
        }
        Op::Add => Grads {
            inputs: vec![Some(g.clone()), Some(g.clone())],
            weights: vec![],
        },
        Op::Affine { .. } => affine_vjp(inputs[0], weights[0], g)?,
        Op::MaxPool(p) => {
            let x = inputs[0];
            let s = x.shape();
            let mut dx = vec![0.0f32; s.numel()];
            let o = g.shape();
            for n in 0..s.n {
                for c in 0..s.c {
                    let plane = x.plane(n, c);
                    let base = (n * s.c + c) * s.plane();
                    for oy in 0..o.h {
                        for ox in 0..o.w {
                            let mut best: Option<(usize, f32)> = None;
                            for ky in 0..p.kernel.0 {
                                let iy = (oy * p.stride.0 + ky) as isize - p.padding.0 as isize;
                                if iy < 0 || iy as usize >= s.h {
                                    continue;
                                }
                                for kx in 0..p.kernel.1 {
                                    let ix = (ox * p.stride.1 + kx) as isize - p.padding.1 as isize;
                                    if ix < 0 || ix as usize >= s.w {
                                        continue;
                                    }
                                    let at = iy as usize * s.w + ix as usize;
                                    // Strict comparison keeps the first maximum in scan order.
                                    if best.is_none_or(|(_, m)| plane[at] > m) {
                                        best = Some((at, plane[at]));
                                    }
                                }
                            }
                            if let Some((at, _)) = best {
                                dx[base + at] += g.at(n, c, oy, ox);
                            }
                        }
                    }
                }
            }
            Grads {
                inputs: vec![Some(Tensor::from_vec(s, dx)?)],
                weights: vec![],
            }
        }
        Op::Upsample => {
            let x = inputs[0];
            let s = x.shape();
            let o = g.shape();
            let mut dx = vec![0.0f32; s.numel()];
            for n in 0..s.n {
                for c in 0..s.c {
                    let base = (n * s.c + c) * s.plane();
                    for oy in 0..o.h {
                        let (y0, y1, fy) = bilinear_tap(oy, s.h, o.h);
                        for ox in 0..o.w {
                            let (x0, x1, fx) = bilinear_tap(ox, s.w, o.w);
                            let v = g.at(n, c, oy, ox);
                            dx[base + y0 * s.w + x0] += (1.0 - fy) * (1.0 - fx) * v;
                            dx[base + y0 * s.w + x1] += (1.0 - fy) * fx * v;
                            dx[base + y1 * s.w + x0] += fy * (1.0 - fx) * v;
                            dx[base + y1 * s.w + x1] += fy * fx * v;
                        }
                    }
                }
            }
            Grads {
                inputs: vec![Some(Tensor::from_vec(s, dx)?), None],
                weights: vec![],
            }
        }
        Op::Conv(spec) => conv_vjp(inputs[0], weights[0], spec.params, spec.params.bias, g)?,
    })
}

fn affine_vjp(x: &Tensor, scale: &Tensor, g: &Tensor) -> Result<Grads> {
    let s = x.shape();
    let mut dx = vec![0.0f32; s.numel()];
    let mut dscale = vec![0.0f32; s.c];
    let mut dshift = vec![0.0f32; s.c];
    let plane = s.plane();
    for (idx, ((dxp, xp), gp)) in dx
        .chunks_mut(plane.max(1))
        .zip(x.data().chunks(plane.max(1)))
        .zip(g.data().chunks(plane.max(1)))
        .enumerate()
    {
        let c = idx % s.c;
        let a = scale.data()[c];
        for ((d, &xv), &gv) in dxp.iter_mut().zip(xp).zip(gp) {
            *d = a * gv;
            dscale[c] += gv * xv;
            dshift[c] += gv;
        }
    }
    Ok(Grads {
        inputs: vec![Some(Tensor::from_vec(s, dx)?)],
        weights: vec![Tensor::vector(dscale), Tensor::vector(dshift)],
    })
}

fn conv_vjp(x: &Tensor, w: &Tensor, p: super::ConvParams, has_bias: bool, g: &Tensor) -> Result<Grads> {
    let s = x.shape();
    let ws = w.shape();
    let o = g.shape();
    let groups = p.groups;
    let cin_g = ws.c;
    let cout_g = ws.n / groups;
    let (kh, kw) = p.kernel;
    let k = cin_g * kh * kw;
    let npix = o.h * o.w;

    let mut dx = vec![0.0f32; s.numel()];
    let mut dw = vec![0.0f32; ws.numel()];
    let mut dcol = vec![0.0f32; k * npix];
    for n in 0..s.n {
        for gi in 0..groups {
            let col = lower_full(x, n, gi * cin_g, cin_g, p, o.h, o.w);
            let a = &w.data()[gi * cout_g * k..(gi + 1) * cout_g * k];
            let go = &g.data()[(n * o.c + gi * cout_g) * npix..(n * o.c + (gi + 1) * cout_g) * npix];
            // SAFETY: all operands are dense row-major buffers of the stated sizes;
            // transposes are expressed through strides.
            unsafe {
                // dcol (k x npix) = a^T (k x cout_g) * go (cout_g x npix)
                matrixmultiply::sgemm(
                    k,
                    cout_g,
                    npix,
                    1.0,
                    a.as_ptr(),
                    1,
                    k as isize,
                    go.as_ptr(),
                    npix as isize,
                    1,
                    0.0,
                    dcol.as_mut_ptr(),
                    npix as isize,
                    1,
                );
                // dw_g (cout_g x k) += go (cout_g x npix) * col^T (npix x k)
                matrixmultiply::sgemm(
                    cout_g,
                    npix,
                    k,
                    1.0,
                    go.as_ptr(),
                    npix as isize,
                    1,
                    col.as_ptr(),
                    1,
                    npix as isize,
                    1.0,
                    dw[gi * cout_g * k..].as_mut_ptr(),
                    k as isize,
                    1,
                );
            }
            scatter_columns(&mut dx, s, n, gi * cin_g, cin_g, p, o.h, o.w, &dcol);
        }
    }
    let mut weights = vec![Tensor::from_vec(ws, dw)?];
    if has_bias {
        let mut db = vec![0.0f32; o.c];
        for n in 0..o.n {
            for (c, d) in db.iter_mut().enumerate() {
                *d += g.plane(n, c).iter().sum::<f32>();
            }
        }
        weights.push(Tensor::vector(db));
    }
    Ok(Grads {
        inputs: vec![Some(Tensor::from_vec(s, dx)?)],
        weights,
    })
}

fn lower_full(x: &Tensor, n: usize, c0: usize, cin_g: usize, p: super::ConvParams, oh: usize, ow: usize) -> Vec<f32> {
    let s = x.shape();
    let (kh, kw) = p.kernel;
    let npix = oh * ow;
    let mut col = vec![0.0f32; cin_g * kh * kw * npix];
    for ci in 0..cin_g {
        let plane = x.plane(n, c0 + ci);
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                for oy in 0..oh {
                    let iy = (oy * p.stride.0 + ky) as isize - p.padding.0 as isize;
                    if iy < 0 || iy as usize >= s.h {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * p.stride.1 + kx) as isize - p.padding.1 as isize;
                        if ix >= 0 && (ix as usize) < s.w {
                            col[row * npix + oy * ow + ox] = plane[iy as usize * s.w + ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

#[allow(clippy::too_many_arguments)]
fn scatter_columns(
    dx: &mut [f32],
    s: Shape,
    n: usize,
    c0: usize,
    cin_g: usize,
    p: super::ConvParams,
    oh: usize,
    ow: usize,
    dcol: &[f32],
) {
    let (kh, kw) = p.kernel;
    let npix = oh * ow;
    for ci in 0..cin_g {
        let base = (n * s.c + c0 + ci) * s.plane();
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                for oy in 0..oh {
                    let iy = (oy * p.stride.0 + ky) as isize - p.padding.0 as isize;
                    if iy < 0 || iy as usize >= s.h {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * p.stride.1 + kx) as isize - p.padding.1 as isize;
                        if ix >= 0 && (ix as usize) < s.w {
                            dx[base + iy as usize * s.w + ix as usize] += dcol[row * npix + oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}
