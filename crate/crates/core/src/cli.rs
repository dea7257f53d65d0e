//! Command-line front end. Exit codes: 0 success, 1 runtime failure,
//! 2 usage or parse error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::analyzer::{compare_reports, count_flops_with, render_comparison, render_kv, render_table, Conventions};
use crate::arch::{parse_spec, ArchSpec};
use crate::bench::{benchmark, render_bench_kv, BenchOptions};
use crate::container::load_for_graph;
use crate::graph::{dump, execute, infer_shapes, random_weights_with, Graph, WeightInit, WeightStore};
use crate::image::{argmax_labels, read_ppm, to_tensor, write_ppm};
use crate::rf::{analytic_rf, empirical_rf};
use crate::tensor::{default_worker_count, Shape, Workers};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Parser, Debug)]
#[command(name = "lwrefine", version, about = "RefineNet and Light-Weight RefineNet: build, profile, run")]
pub struct Cli {
    /// Kernel worker threads.
    #[arg(long, global = true, env = "LWREFINE_WORKERS")]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Format {
    Table,
    Kv,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Convention {
    /// One FLOP per multiply-accumulate, bias adds not counted.
    Mac,
    /// Two FLOPs per multiply-accumulate plus one per bias add.
    MulAdd,
}

impl From<Convention> for Conventions {
    fn from(c: Convention) -> Self {
        match c {
            Convention::Mac => Conventions::default(),
            Convention::MulAdd => Conventions::mul_add(),
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RfMode {
    Analytic,
    Empirical,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parameter and FLOP counts.
    Analyze {
        spec: PathBuf,
        /// HxW; defaults to the spec's input_size.
        #[arg(long, value_parser = parse_size)]
        input_size: Option<(usize, usize)>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        #[arg(long, value_enum, default_value = "mac")]
        convention: Convention,
    },
    /// Times forward passes on random inputs.
    Bench {
        spec: PathBuf,
        #[arg(long, default_value_t = 100)]
        iters: usize,
        #[arg(long, default_value_t = 10)]
        warmup: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = parse_size)]
        input_size: Option<(usize, usize)>,
        /// Weight container; random weights when absent.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Segments a binary PPM image and writes a palette PPM.
    Infer {
        spec: PathBuf,
        weights: PathBuf,
        image: PathBuf,
        out: PathBuf,
    },
    /// Receptive field of one node.
    Rf {
        spec: PathBuf,
        #[arg(long)]
        node: String,
        /// c,y,x of the unit; defaults to channel 0 at the map center.
        #[arg(long, value_parser = parse_unit)]
        unit: Option<(usize, usize, usize)>,
        #[arg(long, value_enum, default_value = "analytic")]
        mode: RfMode,
        #[arg(long, value_parser = parse_size)]
        input_size: Option<(usize, usize)>,
        /// Support threshold as a fraction of the peak gradient magnitude.
        #[arg(long, default_value_t = 0.01)]
        threshold: f64,
        /// Seed for the positive random weights used without --weights.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// PGM file for the empirical support mask.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Side-by-side counts of two models.
    Compare {
        spec_a: PathBuf,
        spec_b: PathBuf,
        #[arg(long, value_parser = parse_size)]
        input_size: Option<(usize, usize)>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        #[arg(long, value_enum, default_value = "mac")]
        convention: Convention,
    },
    /// Topological node listing with output shapes.
    Dump {
        spec: PathBuf,
        #[arg(long, value_parser = parse_size)]
        input_size: Option<(usize, usize)>,
    },
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once('x').ok_or("expected HxW")?;
    let h: usize = h.parse().map_err(|_| format!("bad height `{h}`"))?;
    let w: usize = w.parse().map_err(|_| format!("bad width `{w}`"))?;
    if h == 0 || w == 0 {
        return Err("extents must be positive".into());
    }
    Ok((h, w))
}

fn parse_unit(s: &str) -> Result<(usize, usize, usize), String> {
    let v: Vec<usize> = s.split(',').map(|p| p.trim().parse().map_err(|_| format!("bad index `{p}`"))).collect::<Result<_, _>>()?;
    match v[..] {
        [c, y, x] => Ok((c, y, x)),
        _ => Err("expected c,y,x".into()),
    }
}

fn load_spec(path: &Path) -> Result<ArchSpec, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    parse_spec(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn build(spec: &ArchSpec) -> Result<Graph, CliError> {
    spec.build_graph().map_err(|e| CliError::Usage(e.to_string()))
}

fn input_shape(spec: &ArchSpec, size: Option<(usize, usize)>) -> Shape {
    let (h, w) = size.unwrap_or(spec.input_size);
    Shape::new(1, 3, h, w)
}

fn load_weights(path: &Path, graph: &Graph) -> Result<WeightStore, CliError> {
    let file = File::open(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    load_for_graph(BufReader::new(file), graph).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| runtime(format!("{}: {e}", path.display())))
}

/// Parses `args` (including the program name) and runs the command,
/// writing results to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| {
        if e.use_stderr() {
            CliError::Usage(e.render().to_string())
        } else {
            // --help / --version: print and succeed.
            let _ = write!(out, "{}", e.render());
            CliError::Usage(String::new())
        }
    });
    let cli = match cli {
        Ok(c) => c,
        Err(CliError::Usage(m)) if m.is_empty() => return Ok(()),
        Err(e) => return Err(e),
    };
    let workers = cli.workers.filter(|&n| n > 0).unwrap_or_else(default_worker_count);
    let w = |r: std::io::Result<()>| r.map_err(runtime);

    match cli.command {
        Command::Analyze {
            spec,
            input_size,
            format,
            convention,
        } => {
            let spec = load_spec(&spec)?;
            let graph = build(&spec)?;
            let report = count_flops_with(&graph, input_shape(&spec, input_size), convention.into()).map_err(runtime)?;
            let text = match format {
                Format::Table => render_table(&report),
                Format::Kv => render_kv(&report),
            };
            w(out.write_all(text.as_bytes()))
        }
        Command::Compare {
            spec_a,
            spec_b,
            input_size,
            format,
            convention,
        } => {
            let mut reports = Vec::new();
            for path in [&spec_a, &spec_b] {
                let spec = load_spec(path)?;
                let graph = build(&spec)?;
                reports.push(count_flops_with(&graph, input_shape(&spec, input_size), convention.into()).map_err(runtime)?);
            }
            let cmp = compare_reports(&reports[0], &reports[1]).map_err(runtime)?;
            w(out.write_all(render_comparison(&cmp, matches!(format, Format::Kv)).as_bytes()))
        }
        Command::Bench {
            spec,
            iters,
            warmup,
            seed,
            input_size,
            weights,
        } => {
            let spec = load_spec(&spec)?;
            let graph = build(&spec)?;
            let store = match weights {
                Some(p) => load_weights(&p, &graph)?,
                None => crate::graph::random_weights(&graph, seed),
            };
            let opts = BenchOptions {
                iters,
                warmup,
                seed,
                workers,
            };
            let result = benchmark(&graph, &store, input_shape(&spec, input_size), opts).map_err(runtime)?;
            w(out.write_all(render_bench_kv(&spec.model_name(), &result).as_bytes()))
        }
        Command::Infer {
            spec,
            weights,
            image,
            out: out_path,
        } => {
            let spec = load_spec(&spec)?;
            let graph = build(&spec)?;
            let store = load_weights(&weights, &graph)?;
            let file = File::open(&image).map_err(|e| runtime(format!("{}: {e}", image.display())))?;
            let img = read_ppm(BufReader::new(file)).map_err(|e| runtime(format!("{}: {e}", image.display())))?;
            let x = to_tensor(&img, spec.mean, spec.std);
            let pool = Workers::new(workers);
            let scores = pool.run(|| execute(&graph, &store, &x)).map_err(runtime)?;
            let labels = argmax_labels(&scores[0]);
            let mut f = create(&out_path)?;
            w(write_ppm(&mut f, &labels.to_rgb()).and_then(|_| f.flush()))?;
            w(writeln!(out, "wrote {} ({}x{}) workers={}", out_path.display(), labels.width, labels.height, pool.count()))
        }
        Command::Rf {
            spec,
            node,
            unit,
            mode,
            input_size,
            threshold,
            seed,
            weights,
            out: mask_path,
        } => {
            let spec = load_spec(&spec)?;
            let graph = build(&spec)?;
            let shape = input_shape(&spec, input_size);
            let shapes = infer_shapes(&graph, shape).map_err(runtime)?;
            let node_shape = *shapes.get(&node).ok_or_else(|| CliError::Usage(format!("unknown node `{node}`")))?;
            let unit = unit.unwrap_or((0, node_shape.h / 2, node_shape.w / 2));
            match mode {
                RfMode::Analytic => {
                    let rf = analytic_rf(&graph, &node, shape).map_err(runtime)?;
                    w(writeln!(out, "node={node}"))?;
                    w(writeln!(out, "{rf}"))?;
                    if let Some(b) = rf.unit_box(unit.1, unit.2, shape.h, shape.w) {
                        w(writeln!(out, "box {b}"))?;
                    }
                    Ok(())
                }
                RfMode::Empirical => {
                    let store = match weights {
                        Some(p) => load_weights(&p, &graph)?,
                        None => random_weights_with(&graph, seed, WeightInit::Positive),
                    };
                    let pool = Workers::new(workers);
                    let erf = pool
                        .run(|| empirical_rf(&graph, &store, &node, unit, shape, threshold))
                        .map_err(runtime)?;
                    w(writeln!(out, "node={node}"))?;
                    w(writeln!(out, "unit={},{},{}", unit.0, unit.1, unit.2))?;
                    w(writeln!(out, "threshold={threshold}"))?;
                    w(writeln!(out, "support_pixels={}", erf.support.count()))?;
                    let describe = |b: Option<crate::rf::BoundingBox>| b.map_or("empty".to_string(), |b| b.to_string());
                    w(writeln!(out, "support_box={}", describe(erf.support.bbox())))?;
                    w(writeln!(out, "nonzero_box={}", describe(erf.nonzero.bbox())))?;
                    if let Some(p) = mask_path {
                        let mut f = create(&p)?;
                        w(erf.support.write_pgm(&mut f).and_then(|_| f.flush()))?;
                    }
                    Ok(())
                }
            }
        }
        Command::Dump { spec, input_size } => {
            let spec = load_spec(&spec)?;
            let graph = build(&spec)?;
            let shapes = infer_shapes(&graph, input_shape(&spec, input_size)).map_err(runtime)?;
            w(out.write_all(dump(&graph, Some(&shapes)).as_bytes()))
        }
    }
}

/// Runs with process arguments and stdio; returns the exit code.
pub fn main_entry() -> i32 {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(std::env::args_os(), &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            let _ = lock.flush();
            let msg = e.message();
            if msg.ends_with('\n') {
                eprint!("{msg}");
            } else {
                eprintln!("error: {msg}");
            }
            e.exit_code()
        }
    }
}
