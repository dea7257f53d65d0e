//! Forward-pass timing.

use std::fmt::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{execute, Graph, GraphError, WeightStore};
use crate::tensor::{Shape, Tensor, Workers};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("iteration count must be at least 1")]
    NoIterations,

    #[error("forward pass {index} failed: {source}")]
    Iteration {
        index: usize,
        #[source]
        source: GraphError,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BenchOptions {
    pub iters: usize,
    pub warmup: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            iters: 100,
            warmup: 10,
            seed: 0,
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub mean_ms: f64,
    pub std_ms: f64,
    pub iterations: usize,
    pub warmup: usize,
    pub input: Shape,
    pub workers: usize,
    pub host: String,
    pub samples_ms: Vec<f64>,
}

/// `os/arch cpus=N`.
pub fn host_descriptor() -> String {
    let cpus = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!("{}/{} cpus={}", std::env::consts::OS, std::env::consts::ARCH, cpus)
}

/// Uniform [-1, 1) input for pass `index`.
pub fn random_input(shape: Shape, seed: u64, index: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64));
    let data = (0..shape.numel()).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    Tensor::from_vec(shape, data).expect("sized from shape")
}

/// Mean and sample standard deviation; the deviation of one sample is 0.
pub fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Times `iters` forward passes after `warmup` untimed ones. Each pass gets
/// a fresh random input, generated outside the timed region.
pub fn benchmark(graph: &Graph, weights: &WeightStore, input: Shape, opts: BenchOptions) -> Result<BenchResult, BenchError> {
    if opts.iters == 0 {
        return Err(BenchError::NoIterations);
    }
    let pool = Workers::new(opts.workers);
    let mut samples = Vec::with_capacity(opts.iters);
    for index in 0..opts.warmup + opts.iters {
        let x = random_input(input, opts.seed, index);
        let start = Instant::now();
        let out = pool.run(|| execute(graph, weights, &x));
        let elapsed = start.elapsed();
        out.map_err(|source| BenchError::Iteration { index, source })?;
        if index >= opts.warmup {
            samples.push(elapsed.as_secs_f64() * 1e3);
        }
    }
    let (mean_ms, std_ms) = mean_std(&samples);
    Ok(BenchResult {
        mean_ms,
        std_ms,
        iterations: opts.iters,
        warmup: opts.warmup,
        input,
        workers: pool.count(),
        host: host_descriptor(),
        samples_ms: samples,
    })
}

pub fn render_bench_kv(model: &str, r: &BenchResult) -> String {
    let mut out = String::new();
    let s = r.input;
    let _ = writeln!(out, "model={model}");
    let _ = writeln!(out, "input={}x{}x{}x{}", s.n, s.c, s.h, s.w);
    let _ = writeln!(out, "iterations={}", r.iterations);
    let _ = writeln!(out, "warmup={}", r.warmup);
    let _ = writeln!(out, "workers={}", r.workers);
    let _ = writeln!(out, "host={}", r.host);
    let _ = writeln!(out, "mean_ms={:.3}", r.mean_ms);
    let _ = writeln!(out, "std_ms={:.3}", r.std_ms);
    out
}
