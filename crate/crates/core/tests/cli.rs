use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lwrefine::arch::{ArchSpec, Backbone, Variant};
use lwrefine::container::write_container;
use lwrefine::graph::{random_weights, random_weights_with, WeightInit};
use lwrefine::image::{palette_color, read_ppm, write_ppm, RgbImage};
use lwrefine::rf::empirical_rf;
use lwrefine::tensor::Shape;
use tempfile::TempDir;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lwrefine"))
        .args(args)
        .env_remove("LWREFINE_WORKERS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn spec_path(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../specs")
        .join(name)
        .display()
        .to_string()
}

fn kv(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in\n{text}"))
        .to_string()
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> String {
    let p = dir.join(name);
    std::fs::write(&p, bytes).unwrap();
    p.display().to_string()
}

#[test]
fn analyze_kv_reports_totals() {
    let o = bin(&["analyze", &spec_path("resnet50_lw.spec"), "--format", "kv"]);
    let text = stdout(&o);
    assert_eq!(kv(&text, "model"), "RefineNet-50-LW");
    assert_eq!(kv(&text, "input"), "1x3x512x512");
    let params: u64 = kv(&text, "params.total").parse().unwrap();
    assert!((26.0e6..28.8e6).contains(&(params as f64)), "{params}");
    let conv: u64 = kv(&text, "flops.conv").parse().unwrap();
    let other: u64 = kv(&text, "flops.other").parse().unwrap();
    assert_eq!(kv(&text, "flops.total").parse::<u64>().unwrap(), conv + other);
}

#[test]
fn analyze_output_is_byte_stable() {
    let args = ["analyze", &spec_path("mobilenetv2_lw.spec"), "--format", "kv", "--input-size", "625x468"];
    let a = stdout(&bin(&args));
    let b = stdout(&bin(&args));
    assert_eq!(a, b);
    assert_eq!(kv(&a, "input"), "1x3x625x468");
    let table = stdout(&bin(&["analyze", &spec_path("mobilenetv2_lw.spec")]));
    assert!(!table.is_empty());
}

#[test]
fn bad_spec_is_a_usage_error_with_line_number() {
    let dir = TempDir::new().unwrap();
    let p = write_file(dir.path(), "bad.spec", b"backbone = resnet50\nvariant = light\n");
    let o = bin(&["analyze", &p]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2"), "{err}");

    let o = bin(&["analyze", &spec_path("toy_lw.spec"), "--input-size", "12by5"]);
    assert_eq!(o.status.code(), Some(2));
    let o = bin(&["analyze", &dir.path().join("missing.spec").display().to_string()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compare_prints_ratios() {
    let o = bin(&[
        "compare",
        &spec_path("resnet101_original.spec"),
        &spec_path("resnet101_lw.spec"),
        "--format",
        "kv",
    ]);
    let text = stdout(&o);
    let ratio = |key: &str| -> f64 {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{key}=")))
            .unwrap_or_else(|| panic!("no {key} in\n{text}"))
            .parse()
            .unwrap()
    };
    assert!(ratio("params.total.ratio") >= 2.0);
    assert!(ratio("flops.total.ratio") >= 3.0);
}

#[test]
fn rf_analytic_on_stem() {
    let text = stdout(&bin(&["rf", &spec_path("toy_lw.spec"), "--node", "backbone.stem.conv"]));
    assert!(text.contains("node=backbone.stem.conv"));
    assert!(text.contains("size=3 jump=1"), "{text}");

    let o = bin(&["rf", &spec_path("toy_lw.spec"), "--node", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn rf_empirical_writes_support_mask() {
    let dir = TempDir::new().unwrap();
    let mask = dir.path().join("mask.pgm");
    let text = stdout(&bin(&[
        "rf",
        &spec_path("toy_lw.spec"),
        "--node",
        "decoder.l4.crp.add4",
        "--mode",
        "empirical",
        "--input-size",
        "128x128",
        "--seed",
        "3",
        "--out",
        &mask.display().to_string(),
    ]));
    let g = ArchSpec::new(Backbone::Toy, Variant::Lw, 5).build_graph().unwrap();
    let w = random_weights_with(&g, 3, WeightInit::Positive);
    let erf = empirical_rf(&g, &w, "decoder.l4.crp.add4", (0, 2, 2), Shape::new(1, 3, 128, 128), 0.01).unwrap();
    assert_eq!(kv(&text, "unit"), "0,2,2");
    assert_eq!(kv(&text, "support_pixels"), erf.support.count().to_string());
    let bytes = std::fs::read(&mask).unwrap();
    let (w, h, pixels) = lwrefine::image::read_pgm(&bytes[..]).unwrap();
    assert_eq!((w, h), (128, 128));
    assert_eq!(pixels, erf.support.to_bytes());
}

fn toy_weights(dir: &Path, zero_clf: bool, drop: Option<&str>) -> String {
    let g = ArchSpec::new(Backbone::Toy, Variant::Lw, 5).build_graph().unwrap();
    let mut w = random_weights(&g, 8);
    if zero_clf {
        w.zero_where(|n| n.starts_with("clf.conv."));
    }
    let store = match drop {
        Some(d) => w.iter().filter(|(n, _)| *n != d).map(|(n, t)| (n.to_string(), t.clone())).collect(),
        None => w,
    };
    let mut buf = Vec::new();
    write_container(&mut buf, &store).unwrap();
    write_file(dir, "weights.rnlw", &buf)
}

fn test_image(dir: &Path) -> String {
    let (width, height) = (37, 29);
    let data = (0..width * height * 3).map(|i| (i * 37 % 251) as u8).collect();
    let mut buf = Vec::new();
    write_ppm(&mut buf, &RgbImage { width, height, data }).unwrap();
    write_file(dir, "in.ppm", &buf)
}

#[test]
fn infer_with_zero_classifier_paints_background() {
    let dir = TempDir::new().unwrap();
    let weights = toy_weights(dir.path(), true, None);
    let image = test_image(dir.path());
    let spec = spec_path("toy_lw.spec");
    let outs: Vec<Vec<u8>> = ["a.ppm", "b.ppm"]
        .iter()
        .map(|name| {
            let p = dir.path().join(name).display().to_string();
            stdout(&bin(&["infer", &spec, &weights, &image, &p]));
            std::fs::read(&p).unwrap()
        })
        .collect();
    assert_eq!(outs[0], outs[1]);
    let img = read_ppm(&outs[0][..]).unwrap();
    assert_eq!((img.width, img.height), (37, 29));
    assert!(img.data.chunks(3).all(|px| px == palette_color(0)));
}

#[test]
fn infer_is_stable_across_runs_and_workers() {
    let dir = TempDir::new().unwrap();
    let weights = toy_weights(dir.path(), false, None);
    let image = test_image(dir.path());
    let spec = spec_path("toy_lw.spec");
    let run = |name: &str, workers: &str| {
        let p = dir.path().join(name).display().to_string();
        stdout(&bin(&["--workers", workers, "infer", &spec, &weights, &image, &p]));
        std::fs::read(&p).unwrap()
    };
    let a = run("a.ppm", "1");
    assert_eq!(a, run("b.ppm", "1"));
    assert_eq!(a, run("c.ppm", "3"));
}

#[test]
fn infer_lists_unresolved_weights() {
    let dir = TempDir::new().unwrap();
    let weights = toy_weights(dir.path(), false, Some("decoder.l2.adapt.weight"));
    let image = test_image(dir.path());
    let out = dir.path().join("o.ppm").display().to_string();
    let o = bin(&["infer", &spec_path("toy_lw.spec"), &weights, &image, &out]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("decoder.l2.adapt.weight"), "{err}");
}

#[test]
fn infer_rejects_malformed_image() {
    let dir = TempDir::new().unwrap();
    let weights = toy_weights(dir.path(), false, None);
    let image = write_file(dir.path(), "bad.ppm", b"P6\n4 4\n255\nabc");
    let out = dir.path().join("o.ppm").display().to_string();
    let o = bin(&["infer", &spec_path("toy_lw.spec"), &weights, &image, &out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
}

#[test]
fn bench_defaults_and_overrides() {
    let spec = spec_path("toy_lw.spec");
    let text = stdout(&bin(&["bench", &spec, "--input-size", "32x32"]));
    assert_eq!(kv(&text, "iterations"), "100");
    assert_eq!(kv(&text, "warmup"), "10");
    assert!(kv(&text, "mean_ms").parse::<f64>().unwrap() > 0.0);

    let text = stdout(&bin(&["--workers", "2", "bench", &spec, "--iters", "3", "--warmup", "0", "--input-size", "32x32"]));
    assert_eq!(kv(&text, "iterations"), "3");
    assert_eq!(kv(&text, "workers"), "2");
    assert_eq!(kv(&text, "input"), "1x3x32x32");

    let o = bin(&["bench", &spec, "--iters", "0"]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn dump_lists_nodes() {
    let text = stdout(&bin(&["dump", &spec_path("toy_original.spec"), "--input-size", "64x64"]));
    assert!(text.lines().any(|l| l.starts_with("backbone.stem.conv ")));
    assert!(text.lines().any(|l| l.starts_with("clf.conv ")));
}
