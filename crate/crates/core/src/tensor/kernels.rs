//! Optimized kernels. Work is split into tasks whose boundaries depend only on
//! the problem shape, and every output cell is accumulated sequentially by one
//! task, so results are bit-identical for any worker count.

use rayon::prelude::*;

use super::op::pool_out;
use super::{ConvParams, PoolParams, Result, Shape, Tensor, TensorError};

/// Elementwise work is handed out in slices of this many values.
const ELEMENTWISE_CHUNK: usize = 1 << 14;

/// Upper bound on the size of one lowered column block, in floats.
const COLUMN_BLOCK_FLOATS: usize = 1 << 22;

pub(super) fn check_conv(input: Shape, weight: Shape, bias: Option<Shape>, p: &ConvParams) -> Result<(usize, usize)> {
    const OP: &str = "conv2d";
    let dim = |axis, expected, actual| TensorError::Dimension {
        op: OP,
        axis,
        expected,
        actual,
    };
    if p.groups == 0 || p.stride.0 == 0 || p.stride.1 == 0 {
        return Err(TensorError::Degenerate {
            op: OP,
            reason: format!("groups {} and stride {:?} must be positive", p.groups, p.stride),
        });
    }
    if weight.h != p.kernel.0 {
        return Err(dim("kernel height", p.kernel.0, weight.h));
    }
    if weight.w != p.kernel.1 {
        return Err(dim("kernel width", p.kernel.1, weight.w));
    }
    if input.c != weight.c * p.groups {
        return Err(dim("input channel", weight.c * p.groups, input.c));
    }
    if weight.n % p.groups != 0 {
        return Err(dim("output channel", weight.n.div_ceil(p.groups) * p.groups, weight.n));
    }
    if let Some(b) = bias {
        if b.numel() != weight.n {
            return Err(dim("bias", weight.n, b.numel()));
        }
    }
    match p.out_spatial(input.h, input.w) {
        Some((oh, ow)) if oh > 0 && ow > 0 && input.h > 0 && input.w > 0 => Ok((oh, ow)),
        _ => Err(TensorError::Degenerate {
            op: OP,
            reason: format!("kernel {:?} with padding {:?} does not fit input {}", p.kernel, p.padding, input),
        }),
    }
}

/// 2-D cross-correlation (no kernel flip).
///
/// `weight` is (Cout, Cin / groups, kh, kw). Grouped convolutions with one
/// input channel per group run a direct sliding-window loop; everything else
/// is lowered to columns and multiplied with a dense sgemm.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, p: ConvParams) -> Result<Tensor> {
    let (oh, ow) = check_conv(input.shape(), weight.shape(), bias.map(Tensor::shape), &p)?;
    let s = input.shape();
    let cout = weight.shape().n;
    let out_shape = Shape::new(s.n, cout, oh, ow);
    let bias = bias.map(Tensor::data);

    if weight.shape().c == 1 && cout == p.groups {
        return Ok(depthwise(input, weight, bias, p, out_shape));
    }

    let groups = p.groups;
    let cin_g = s.c / groups;
    let cout_g = cout / groups;
    let (kh, kw) = p.kernel;
    let k = cin_g * kh * kw;
    let npix = oh * ow;
    let block = (COLUMN_BLOCK_FLOATS / k.max(1)).clamp(64, 4096) / 16 * 16;
    let blocks = npix.div_ceil(block);
    let pointwise = p.kernel == (1, 1) && p.stride == (1, 1) && p.padding == (0, 0);

    let tasks: Vec<(usize, usize, usize)> = (0..s.n)
        .flat_map(|n| (0..groups).flat_map(move |g| (0..blocks).map(move |b| (n, g, b))))
        .collect();

    let results: Vec<Vec<f32>> = tasks
        .par_iter()
        .map(|&(n, g, b)| {
            let p0 = b * block;
            let cols = block.min(npix - p0);
            let mut out = vec![0.0f32; cout_g * cols];
            let a = &weight.data()[g * cout_g * k..(g + 1) * cout_g * k];
            let lowered;
            let (b_ptr, rsb) = if pointwise {
                let start = input.index(n, g * cin_g, 0, 0) + p0;
                (input.data()[start..].as_ptr(), (s.h * s.w) as isize)
            } else {
                lowered = lower_columns(input, n, g * cin_g, cin_g, p, ow, p0, cols);
                (lowered.as_ptr(), cols as isize)
            };
            // SAFETY: `a` is cout_g x k row-major; the column operand holds k rows
            // of `cols` readable values at stride `rsb`; `out` is cout_g x cols.
            unsafe {
                matrixmultiply::sgemm(
                    cout_g,
                    k,
                    cols,
                    1.0,
                    a.as_ptr(),
                    k as isize,
                    1,
                    b_ptr,
                    rsb,
                    1,
                    0.0,
                    out.as_mut_ptr(),
                    cols as isize,
                    1,
                );
            }
            if let Some(bias) = bias {
                for (row, bv) in out.chunks_mut(cols).zip(&bias[g * cout_g..(g + 1) * cout_g]) {
                    row.iter_mut().for_each(|v| *v += bv);
                }
            }
            out
        })
        .collect();

    let mut data = vec![0.0f32; out_shape.numel()];
    for (&(n, g, b), block_out) in tasks.iter().zip(results) {
        let p0 = b * block;
        let cols = block.min(npix - p0);
        for (r, row) in block_out.chunks(cols).enumerate() {
            let co = g * cout_g + r;
            let start = (n * cout + co) * npix + p0;
            data[start..start + cols].copy_from_slice(row);
        }
    }
    Tensor::from_vec(out_shape, data)
}

/// Lowers output pixels `[p0, p0 + cols)` of image `n` into a
/// (cin_g * kh * kw) x cols column matrix.
#[allow(clippy::too_many_arguments)]
fn lower_columns(
    input: &Tensor,
    n: usize,
    c0: usize,
    cin_g: usize,
    p: ConvParams,
    ow: usize,
    p0: usize,
    cols: usize,
) -> Vec<f32> {
    let s = input.shape();
    let (kh, kw) = p.kernel;
    let (sh, sw) = p.stride;
    let (ph, pw) = p.padding;
    let mut col = vec![0.0f32; cin_g * kh * kw * cols];
    let mut row = 0;
    for ci in 0..cin_g {
        let plane = input.plane(n, c0 + ci);
        for ky in 0..kh {
            for kx in 0..kw {
                let dst = &mut col[row * cols..(row + 1) * cols];
                let (mut oy, mut ox) = (p0 / ow, p0 % ow);
                for d in dst.iter_mut() {
                    let iy = (oy * sh + ky) as isize - ph as isize;
                    let ix = (ox * sw + kx) as isize - pw as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < s.h && (ix as usize) < s.w {
                        *d = plane[iy as usize * s.w + ix as usize];
                    }
                    ox += 1;
                    if ox == ow {
                        ox = 0;
                        oy += 1;
                    }
                }
                row += 1;
            }
        }
    }
    col
}

fn depthwise(input: &Tensor, weight: &Tensor, bias: Option<&[f32]>, p: ConvParams, out_shape: Shape) -> Tensor {
    let s = input.shape();
    let (kh, kw) = p.kernel;
    let (sh, sw) = p.stride;
    let (ph, pw) = p.padding;
    let (oh, ow) = (out_shape.h, out_shape.w);
    let mut data = vec![0.0f32; out_shape.numel()];
    data.par_chunks_mut(oh * ow).enumerate().for_each(|(idx, out)| {
        let (n, c) = (idx / out_shape.c, idx % out_shape.c);
        let plane = input.plane(n, c);
        let wk = &weight.data()[c * kh * kw..(c + 1) * kh * kw];
        let b = bias.map_or(0.0, |b| b[c]);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f32;
                for ky in 0..kh {
                    let iy = (oy * sh + ky) as isize - ph as isize;
                    if iy < 0 || iy as usize >= s.h {
                        continue;
                    }
                    let row = &plane[iy as usize * s.w..(iy as usize + 1) * s.w];
                    for kx in 0..kw {
                        let ix = (ox * sw + kx) as isize - pw as isize;
                        if ix >= 0 && (ix as usize) < s.w {
                            acc += row[ix as usize] * wk[ky * kw + kx];
                        }
                    }
                }
                out[oy * ow + ox] = acc + b;
            }
        }
    });
    Tensor::from_vec(out_shape, data).expect("depthwise output sized from shape")
}

/// Max pooling; padded cells never win.
pub fn maxpool2d(input: &Tensor, p: PoolParams) -> Result<Tensor> {
    let s = input.shape();
    let (oh, ow) = pool_out(p, s)?;
    let (kh, kw) = p.kernel;
    let (sh, sw) = p.stride;
    let (ph, pw) = p.padding;
    let out_shape = s.with_spatial(oh, ow);
    let mut data = vec![0.0f32; out_shape.numel()];
    if oh * ow == 0 {
        return Tensor::from_vec(out_shape, data);
    }
    data.par_chunks_mut(oh * ow).enumerate().for_each(|(idx, out)| {
        let plane = input.plane(idx / s.c, idx % s.c);
        for oy in 0..oh {
            let y0 = (oy * sh) as isize - ph as isize;
            let ylo = y0.max(0) as usize;
            let yhi = ((y0 + kh as isize) as usize).min(s.h);
            for ox in 0..ow {
                let x0 = (ox * sw) as isize - pw as isize;
                let xlo = x0.max(0) as usize;
                let xhi = ((x0 + kw as isize) as usize).min(s.w);
                let mut m = f32::NEG_INFINITY;
                for y in ylo..yhi {
                    for &v in &plane[y * s.w + xlo..y * s.w + xhi] {
                        if v > m {
                            m = v;
                        }
                    }
                }
                out[oy * ow + ox] = m;
            }
        }
    });
    Tensor::from_vec(out_shape, data)
}

pub fn relu(input: &Tensor) -> Tensor {
    map_unary(input, |v| v.max(0.0))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "add",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let mut data = a.data().to_vec();
    data.par_chunks_mut(ELEMENTWISE_CHUNK)
        .zip(b.data().par_chunks(ELEMENTWISE_CHUNK))
        .for_each(|(x, y)| x.iter_mut().zip(y).for_each(|(x, y)| *x += y));
    Tensor::from_vec(a.shape(), data)
}

/// Per-channel `scale[c] * x + shift[c]`.
pub fn affine(input: &Tensor, scale: &Tensor, shift: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    for (axis, t) in [("scale", scale), ("shift", shift)] {
        if t.len() != s.c {
            return Err(TensorError::Dimension {
                op: "bn-affine",
                axis,
                expected: s.c,
                actual: t.len(),
            });
        }
    }
    let mut data = input.data().to_vec();
    let plane = s.plane();
    if plane > 0 {
        data.par_chunks_mut(plane).enumerate().for_each(|(idx, out)| {
            let c = idx % s.c;
            let (a, b) = (scale.data()[c], shift.data()[c]);
            out.iter_mut().for_each(|v| *v = a * *v + b);
        });
    }
    Tensor::from_vec(s, data)
}

/// Source sampling for one output index under half-pixel alignment:
/// `src = (i + 0.5) * in / out - 0.5`, clamped to `[0, in - 1]`.
/// Returns the two source indices and the weight of the second.
#[inline]
pub(super) fn bilinear_tap(i: usize, in_len: usize, out_len: usize) -> (usize, usize, f32) {
    let scale = in_len as f64 / out_len as f64;
    let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(in_len - 1);
    let i1 = (i0 + 1).min(in_len - 1);
    let frac = if i0 == in_len - 1 { 0.0 } else { (src - i0 as f64) as f32 };
    (i0, i1, frac)
}

/// Bilinear resize with half-pixel (non-corner-aligned) sampling.
pub fn upsample_bilinear(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = input.shape();
    if out_h == 0 || out_w == 0 || s.h == 0 || s.w == 0 {
        return Err(TensorError::Degenerate {
            op: "upsample",
            reason: format!("cannot resize {s} to {out_h}x{out_w}"),
        });
    }
    let rows: Vec<_> = (0..out_h).map(|i| bilinear_tap(i, s.h, out_h)).collect();
    let cols: Vec<_> = (0..out_w).map(|i| bilinear_tap(i, s.w, out_w)).collect();
    let out_shape = s.with_spatial(out_h, out_w);
    let mut data = vec![0.0f32; out_shape.numel()];
    data.par_chunks_mut(out_h * out_w).enumerate().for_each(|(idx, out)| {
        let plane = input.plane(idx / s.c, idx % s.c);
        for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
            let r0 = &plane[y0 * s.w..(y0 + 1) * s.w];
            let r1 = &plane[y1 * s.w..(y1 + 1) * s.w];
            for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                let top = (1.0 - fx) * r0[x0] + fx * r0[x1];
                let bottom = (1.0 - fx) * r1[x0] + fx * r1[x1];
                out[oy * out_w + ox] = (1.0 - fy) * top + fy * bottom;
            }
        }
    });
    Tensor::from_vec(out_shape, data)
}

fn map_unary(input: &Tensor, f: impl Fn(f32) -> f32 + Sync) -> Tensor {
    let mut data = input.data().to_vec();
    data.par_chunks_mut(ELEMENTWISE_CHUNK)
        .for_each(|chunk| chunk.iter_mut().for_each(|v| *v = f(*v)));
    Tensor::from_vec(input.shape(), data).expect("same length as input")
}
