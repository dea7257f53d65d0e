#![allow(dead_code)]

use lwrefine::arch::{ArchSpec, Backbone, Variant};
use lwrefine::graph::{dump, execute, infer_shapes, random_weights, Graph};
use lwrefine::tensor::{self, naive, vjp, ConvParams, Op, PoolParams, Shape, Tensor, Workers};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(r: &mut ChaCha8Rng, shape: impl Into<Shape>) -> Tensor {
    let shape = shape.into();
    let data = (0..shape.numel()).map(|_| r.gen_range(-1.0f32..1.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Values whose pairwise gaps are at least `gap`, in random order, so
/// max-pool and relu are differentiable at every entry (no value lies
/// within `gap / 4` of zero).
pub fn spaced_tensor(r: &mut ChaCha8Rng, shape: impl Into<Shape>, gap: f32) -> Tensor {
    let shape = shape.into();
    let n = shape.numel();
    let mut data: Vec<f32> = (0..n).map(|i| (i as f32 - n as f32 / 2.0 + 0.75) * gap).collect();
    for i in (1..n).rev() {
        let j = r.gen_range(0..=i);
        data.swap(i, j);
    }
    Tensor::from_vec(shape, data).unwrap()
}

pub fn spec(backbone: Backbone, variant: Variant) -> ArchSpec {
    let classes = if backbone == Backbone::Toy { 5 } else { 21 };
    ArchSpec::new(backbone, variant, classes)
}

pub fn golden_name(backbone: Backbone, variant: Variant) -> String {
    format!("{backbone}_{variant}.txt")
}

/// Node listing with shapes at the spec's default input size.
pub fn listing(backbone: Backbone, variant: Variant) -> String {
    let spec = spec(backbone, variant);
    let g = spec.build_graph().unwrap();
    let (h, w) = spec.input_size;
    let shapes = infer_shapes(&g, Shape::new(1, 3, h, w)).unwrap();
    dump(&g, Some(&shapes))
}

/// One parsed listing line.
pub struct Line<'a> {
    pub id: &'a str,
    pub op: &'a str,
}

pub fn parse_listing(text: &str) -> Vec<Line<'_>> {
    text.lines()
        .map(|l| {
            let (id, rest) = l.split_once(' ').expect("id and op");
            let op = rest.split(" <- ").next().unwrap().split(" -> ").next().unwrap();
            Line { id, op }
        })
        .collect()
}

/// Structural facts read back from a listing.
#[derive(Debug, PartialEq, Eq)]
pub struct Structure {
    pub rcu_blocks: usize,
    pub rcu_pre_per_level: [usize; 4],
    pub rcu_post_per_level: [usize; 4],
    pub decoder_3x3_convs: usize,
    pub clf_3x3_convs: usize,
    /// Pool stages per CRP block, level 1 first.
    pub crp_stages: [usize; 4],
}

fn block_of<'a>(id: &'a str, segment: &str) -> Option<&'a str> {
    let mut end = 0;
    for part in id.split('.') {
        end += part.len();
        if part.starts_with(segment) {
            return Some(&id[..end]);
        }
        end += 1;
    }
    None
}

fn level_of(id: &str) -> usize {
    (id.as_bytes()["decoder.l".len()] - b'0') as usize
}

pub fn structure(text: &str) -> Structure {
    let lines = parse_listing(text);
    let mut rcu: Vec<&str> = lines.iter().filter_map(|l| block_of(l.id, "rcu")).collect();
    rcu.sort();
    rcu.dedup();
    let mut pre = [0; 4];
    let mut post = [0; 4];
    for b in &rcu {
        let level = level_of(b);
        if b.contains(".rcu_pre") {
            pre[level - 1] += 1;
        } else {
            post[level - 1] += 1;
        }
    }
    let is_3x3 = |l: &&Line| l.op.starts_with("conv k=3x3");
    let mut crp = [0; 4];
    for l in &lines {
        if l.id.starts_with("decoder.l") && l.id.contains(".crp.pool") {
            let level = level_of(l.id);
            crp[level - 1] += 1;
        }
    }
    Structure {
        rcu_blocks: rcu.len(),
        rcu_pre_per_level: pre,
        rcu_post_per_level: post,
        decoder_3x3_convs: lines.iter().filter(|l| l.id.starts_with("decoder.")).filter(is_3x3).count(),
        clf_3x3_convs: lines.iter().filter(|l| l.id.starts_with("clf.")).filter(is_3x3).count(),
        crp_stages: crp,
    }
}

/// Checks one listing against the variant's expected structure.
pub fn check_structure(variant: Variant, s: &Structure) -> Result<(), String> {
    let fail = |what: &str| Err(format!("{variant}: {what}: {s:?}"));
    if s.crp_stages != [4; 4] {
        return fail("CRP stage count");
    }
    match variant {
        Variant::Lw => {
            if s.rcu_blocks != 0 {
                return fail("RCU present");
            }
            if s.decoder_3x3_convs + s.clf_3x3_convs != 1 || s.clf_3x3_convs != 1 {
                return fail("expected the classifier as the only 3x3 conv");
            }
        }
        Variant::Original | Variant::LwWithRcu => {
            if s.rcu_pre_per_level != [2; 4] || s.rcu_post_per_level != [3; 4] || s.rcu_blocks != 20 {
                return fail("RCU placement");
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Kernel oracles

#[derive(Debug)]
pub struct OracleStat {
    pub op: &'static str,
    pub cases: usize,
    pub worst: f32,
}

fn random_conv(r: &mut ChaCha8Rng) -> (Tensor, Tensor, Option<Tensor>, ConvParams) {
    loop {
        let kh = r.gen_range(1..=5);
        let kw = if r.gen_bool(0.7) { kh } else { r.gen_range(1..=5) };
        let groups = [1, 1, 1, 2, 3, 4][r.gen_range(0..6)];
        let depthwise = r.gen_bool(0.2);
        let (cin, cout, groups) = if depthwise {
            let c = r.gen_range(1..=8);
            (c, c, c)
        } else {
            (groups * r.gen_range(1..=4), groups * r.gen_range(1..=4), groups)
        };
        let p = ConvParams {
            kernel: (kh, kw),
            stride: (r.gen_range(1..=3), r.gen_range(1..=3)),
            padding: (r.gen_range(0..=kh / 2 + 1), r.gen_range(0..=kw / 2 + 1)),
            groups,
            bias: r.gen_bool(0.5),
        };
        let (h, w) = (r.gen_range(1..=14), r.gen_range(1..=14));
        if p.out_spatial(h, w).is_none() {
            continue;
        }
        let n = r.gen_range(1..=2);
        let x = random_tensor(r, [n, cin, h, w]);
        let wt = random_tensor(r, [cout, cin / groups, kh, kw]);
        let b = p.bias.then(|| random_tensor(r, Shape::new(1, 1, 1, cout)));
        return (x, wt, b, p);
    }
}

fn random_pool(r: &mut ChaCha8Rng) -> (Tensor, PoolParams) {
    loop {
        let k = r.gen_range(1..=5);
        let p = PoolParams {
            kernel: (k, k),
            stride: (r.gen_range(1..=3), r.gen_range(1..=3)),
            padding: (r.gen_range(0..k), r.gen_range(0..k)),
        };
        let (h, w) = (r.gen_range(1..=12), r.gen_range(1..=12));
        if lwrefine::tensor::window_out(h, k, p.stride.0, p.padding.0).is_none()
            || lwrefine::tensor::window_out(w, k, p.stride.1, p.padding.1).is_none()
        {
            continue;
        }
        let s = Shape::new(r.gen_range(1..=2), r.gen_range(1..=4), h, w);
        let x = random_tensor(r, s);
        return (x, p);
    }
}

/// Optimized kernels against the direct-loop versions.
pub fn kernel_oracles(cases: usize, seed: u64) -> Vec<OracleStat> {
    let mut r = rng(seed);
    let mut stats = Vec::new();
    let mut run = |op: &'static str, f: &mut dyn FnMut(&mut ChaCha8Rng) -> f32| {
        let worst = (0..cases).map(|_| f(&mut r)).fold(0.0f32, f32::max);
        stats.push(OracleStat { op, cases, worst });
    };
    run("conv2d", &mut |r| {
        let (x, w, b, p) = random_conv(r);
        let fast = tensor::conv2d(&x, &w, b.as_ref(), p).unwrap();
        let slow = naive::conv2d(&x, &w, b.as_ref(), p).unwrap();
        fast.max_abs_diff(&slow)
    });
    run("maxpool2d", &mut |r| {
        let (x, p) = random_pool(r);
        tensor::maxpool2d(&x, p).unwrap().max_abs_diff(&naive::maxpool2d(&x, p).unwrap())
    });
    run("relu", &mut |r| {
        let s = Shape::new(r.gen_range(1..=2), r.gen_range(1..=5), r.gen_range(1..=9), r.gen_range(1..=9));
        let x = random_tensor(r, s);
        tensor::relu(&x).max_abs_diff(&naive::relu(&x))
    });
    run("add", &mut |r| {
        let s = Shape::new(r.gen_range(1..=2), r.gen_range(1..=5), r.gen_range(1..=9), r.gen_range(1..=9));
        let (a, b) = (random_tensor(r, s), random_tensor(r, s));
        tensor::add(&a, &b).unwrap().max_abs_diff(&naive::add(&a, &b).unwrap())
    });
    run("affine", &mut |r| {
        let s = Shape::new(r.gen_range(1..=2), r.gen_range(1..=5), r.gen_range(1..=9), r.gen_range(1..=9));
        let x = random_tensor(r, s);
        let sc = random_tensor(r, Shape::new(1, 1, 1, s.c));
        let sh = random_tensor(r, Shape::new(1, 1, 1, s.c));
        tensor::affine(&x, &sc, &sh).unwrap().max_abs_diff(&naive::affine(&x, &sc, &sh).unwrap())
    });
    run("upsample_bilinear", &mut |r| {
        let s = Shape::new(r.gen_range(1..=2), r.gen_range(1..=4), r.gen_range(1..=10), r.gen_range(1..=10));
        let x = random_tensor(r, s);
        let (oh, ow) = (r.gen_range(1..=24), r.gen_range(1..=24));
        tensor::upsample_bilinear(&x, oh, ow)
            .unwrap()
            .max_abs_diff(&naive::upsample_bilinear(&x, oh, ow).unwrap())
    });
    stats
}

/// `sum(probe * f(..))` in f64.
fn weighted_sum(t: &Tensor, probe: &Tensor) -> f64 {
    t.data().iter().zip(probe.data()).map(|(&a, &b)| a as f64 * b as f64).sum()
}

/// Relative error `|vjp - fd| / max(|fd|, |vjp|, 1)` over every entry of one
/// tensor argument, with central differences of step `eps`.
fn fd_check(value: &mut Tensor, grad: &Tensor, eps: f32, mut loss: impl FnMut(&Tensor) -> f64) -> f64 {
    let mut worst = 0.0f64;
    let shape = value.shape();
    let mut data = value.data().to_vec();
    for i in 0..data.len() {
        let orig = data[i];
        data[i] = orig + eps;
        let hi_step = data[i];
        let plus = loss(&Tensor::from_vec(shape, data.clone()).unwrap());
        data[i] = orig - eps;
        let lo_step = data[i];
        let minus = loss(&Tensor::from_vec(shape, data.clone()).unwrap());
        data[i] = orig;
        let fd = (plus - minus) / (hi_step as f64 - lo_step as f64);
        let g = grad.data()[i] as f64;
        worst = worst.max((g - fd).abs() / fd.abs().max(g.abs()).max(1.0));
    }
    *value = Tensor::from_vec(shape, data).unwrap();
    worst
}

/// Vector-Jacobian products against central differences. Returns the worst
/// relative error per op.
pub fn vjp_oracles(cases: usize, seed: u64, eps: f32) -> Vec<(&'static str, usize, f64)> {
    let mut r = rng(seed);
    let mut out = Vec::new();

    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (mut x, mut w, b, p) = random_conv(&mut r);
        let spec = lwrefine::tensor::ConvSpec {
            in_ch: x.shape().c,
            out_ch: w.shape().n,
            params: p,
        };
        let op = Op::Conv(spec);
        let y = tensor::conv2d(&x, &w, b.as_ref(), p).unwrap();
        let probe = random_tensor(&mut r, y.shape());
        let mut ws: Vec<&Tensor> = vec![&w];
        if let Some(b) = &b {
            ws.push(b);
        }
        let grads = vjp(&op, &[&x], &ws, &probe).unwrap();
        let dx = grads.inputs[0].clone().unwrap();
        let dw = grads.weights[0].clone();
        let w0 = w.clone();
        worst = worst.max(fd_check(&mut x, &dx, eps, |xx| {
            weighted_sum(&tensor::conv2d(xx, &w0, b.as_ref(), p).unwrap(), &probe)
        }));
        let x0 = x.clone();
        worst = worst.max(fd_check(&mut w, &dw, eps, |ww| {
            weighted_sum(&tensor::conv2d(&x0, ww, b.as_ref(), p).unwrap(), &probe)
        }));
        if let Some(mut bb) = b.clone() {
            let db = grads.weights[1].clone();
            worst = worst.max(fd_check(&mut bb, &db, eps, |bv| {
                weighted_sum(&tensor::conv2d(&x0, &w, Some(bv), p).unwrap(), &probe)
            }));
        }
    }
    out.push(("conv2d", cases, worst));

    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (x, p) = random_pool(&mut r);
        let mut x = spaced_tensor(&mut r, x.shape(), 0.01);
        let y = tensor::maxpool2d(&x, p).unwrap();
        let probe = random_tensor(&mut r, y.shape());
        let dx = vjp(&Op::MaxPool(p), &[&x], &[], &probe).unwrap().inputs[0].clone().unwrap();
        worst = worst.max(fd_check(&mut x, &dx, eps, |xx| weighted_sum(&tensor::maxpool2d(xx, p).unwrap(), &probe)));
    }
    out.push(("maxpool2d", cases, worst));

    let mut worst = 0.0f64;
    for _ in 0..cases {
        let s = Shape::new(1, r.gen_range(1..=3), r.gen_range(1..=6), r.gen_range(1..=6));
        let mut x = spaced_tensor(&mut r, s, 0.01);
        let probe = random_tensor(&mut r, s);
        let dx = vjp(&Op::Relu, &[&x], &[], &probe).unwrap().inputs[0].clone().unwrap();
        worst = worst.max(fd_check(&mut x, &dx, eps, |xx| weighted_sum(&tensor::relu(xx), &probe)));
    }
    out.push(("relu", cases, worst));

    let mut worst = 0.0f64;
    for _ in 0..cases {
        let s = Shape::new(1, r.gen_range(1..=3), r.gen_range(1..=6), r.gen_range(1..=6));
        let (mut a, b) = (random_tensor(&mut r, s), random_tensor(&mut r, s));
        let probe = random_tensor(&mut r, s);
        let da = vjp(&Op::Add, &[&a, &b], &[], &probe).unwrap().inputs[0].clone().unwrap();
        worst = worst.max(fd_check(&mut a, &da, eps, |aa| weighted_sum(&tensor::add(aa, &b).unwrap(), &probe)));
    }
    out.push(("add", cases, worst));

    let mut worst = 0.0f64;
    for _ in 0..cases {
        let s = Shape::new(r.gen_range(1..=2), r.gen_range(1..=4), r.gen_range(1..=6), r.gen_range(1..=6));
        let mut x = random_tensor(&mut r, s);
        let mut sc = random_tensor(&mut r, Shape::new(1, 1, 1, s.c));
        let mut sh = random_tensor(&mut r, Shape::new(1, 1, 1, s.c));
        let probe = random_tensor(&mut r, s);
        let op = Op::Affine { channels: s.c };
        let g = vjp(&op, &[&x], &[&sc, &sh], &probe).unwrap();
        let dx = g.inputs[0].clone().unwrap();
        let (dsc, dsh) = (g.weights[0].clone(), g.weights[1].clone());
        let (sc0, sh0, x0) = (sc.clone(), sh.clone(), x.clone());
        worst = worst.max(fd_check(&mut x, &dx, eps, |xx| weighted_sum(&tensor::affine(xx, &sc0, &sh0).unwrap(), &probe)));
        worst = worst.max(fd_check(&mut sc, &dsc, eps, |v| weighted_sum(&tensor::affine(&x0, v, &sh0).unwrap(), &probe)));
        worst = worst.max(fd_check(&mut sh, &dsh, eps, |v| weighted_sum(&tensor::affine(&x0, &sc0, v).unwrap(), &probe)));
    }
    out.push(("affine", cases, worst));

    let mut worst = 0.0f64;
    for _ in 0..cases {
        let s = Shape::new(1, r.gen_range(1..=3), r.gen_range(1..=7), r.gen_range(1..=7));
        let mut x = random_tensor(&mut r, s);
        let (oh, ow) = (r.gen_range(1..=16), r.gen_range(1..=16));
        let like = Tensor::zeros(s.with_spatial(oh, ow));
        let probe = random_tensor(&mut r, like.shape());
        let dx = vjp(&Op::Upsample, &[&x, &like], &[], &probe).unwrap().inputs[0].clone().unwrap();
        worst = worst.max(fd_check(&mut x, &dx, eps, |xx| {
            weighted_sum(&tensor::upsample_bilinear(xx, oh, ow).unwrap(), &probe)
        }));
    }
    out.push(("upsample_bilinear", cases, worst));
    out
}

/// Runs `graph` under each worker count and reports whether all outputs
/// are bit-identical to the single-worker run.
pub fn bit_identical_across_workers(graph: &Graph, input: &Tensor, counts: &[usize]) -> bool {
    let w = random_weights(graph, 7);
    let reference = Workers::new(1).run(|| execute(graph, &w, input).unwrap());
    counts.iter().all(|&n| {
        let out = Workers::new(n).run(|| execute(graph, &w, input).unwrap());
        out.iter()
            .zip(&reference)
            .all(|(a, b)| a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()))
    })
}

// ---------------------------------------------------------------------------
// Spec fuzzing

/// A random valid spec.
pub fn fuzz_spec(r: &mut ChaCha8Rng) -> ArchSpec {
    let backbone = Backbone::ALL[r.gen_range(0..Backbone::ALL.len())];
    let variant = Variant::ALL[r.gen_range(0..Variant::ALL.len())];
    let mut s = ArchSpec::new(backbone, variant, r.gen_range(1..=300));
    s.channel_plan = std::array::from_fn(|_| r.gen_range(1..=1024));
    s.crp_stages = r.gen_range(1..=8);
    s.input_size = (r.gen_range(1..=2048), r.gen_range(1..=2048));
    s.mean = std::array::from_fn(|_| r.gen_range(-10.0f32..10.0));
    s.std = std::array::from_fn(|_| r.gen_range(1e-3f32..10.0));
    s
}

/// Same content as `serialize_spec`, with shuffled keys, random spacing,
/// comments and several pairs per line.
pub fn scramble_spec_text(r: &mut ChaCha8Rng, spec: &ArchSpec) -> String {
    let canonical = lwrefine::arch::serialize_spec(spec);
    let mut pairs: Vec<(String, String)> = canonical
        .lines()
        .map(|l| {
            let (k, v) = l.split_once(" = ").unwrap();
            (k.to_string(), v.to_string())
        })
        .collect();
    for i in (1..pairs.len()).rev() {
        let j = r.gen_range(0..=i);
        pairs.swap(i, j);
    }
    let mut out = String::from("# fuzzed\n");
    for (k, v) in pairs {
        let v = if r.gen_bool(0.5) { v.replace(',', ", ") } else { v };
        let sep = [" = ", "=", "  =\t", "= "][r.gen_range(0..4)];
        out.push_str(&format!("{k}{sep}{v}"));
        out.push_str(if r.gen_bool(0.3) { "   " } else if r.gen_bool(0.3) { "  # note\n" } else { "\n" });
    }
    out.push('\n');
    out
}
