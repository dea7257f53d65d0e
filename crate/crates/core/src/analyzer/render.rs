use std::fmt::Write;

use super::{Comparison, ModelReport, Totals};

fn shape_key(report: &ModelReport) -> String {
    match report.input {
        Some(s) => format!("{}x{}x{}x{}", s.n, s.c, s.h, s.w),
        None => "none".to_string(),
    }
}

/// `key=value` lines in a fixed order.
pub fn render_kv(report: &ModelReport) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k}={v}");
    };
    kv("model", report.model.clone());
    kv("backbone", report.backbone.clone());
    kv("variant", report.variant.clone());
    kv("num_classes", report.num_classes.to_string());
    kv("input", shape_key(report));
    for (k, v) in report.conventions.pairs() {
        kv(&format!("convention.{k}"), v);
    }
    kv("params.total", report.total.params.to_string());
    for (g, t) in &report.groups {
        kv(&format!("params.{g}"), t.params.to_string());
    }
    if report.input.is_some() {
        kv("macs.total", report.total.macs.to_string());
        kv("flops.conv", report.total.conv_flops.to_string());
        kv("flops.other", report.total.other_flops.to_string());
        kv("flops.total", report.total.flops().to_string());
        for (g, t) in &report.groups {
            kv(&format!("flops.{g}"), t.flops().to_string());
        }
    }
    out
}

fn millions(v: u64) -> String {
    format!("{:.2}", v as f64 / 1e6)
}

fn billions(v: u64) -> String {
    format!("{:.2}", v as f64 / 1e9)
}

fn table_row(out: &mut String, name: &str, t: &Totals) {
    let _ = writeln!(
        out,
        "{:<28} {:>10} {:>10} {:>10} {:>10}",
        name,
        millions(t.params),
        billions(t.conv_flops),
        billions(t.other_flops),
        billions(t.flops())
    );
}

/// Fixed-width table: one row for the model, then one per subsystem.
/// FLOP columns are in billions, params in millions.
pub fn render_table(report: &ModelReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "input {}", shape_key(report));
    let _ = writeln!(
        out,
        "{:<28} {:>10} {:>10} {:>10} {:>10}",
        "Model", "Params,M", "Conv,B", "Other,B", "FLOPs,B"
    );
    table_row(&mut out, &report.model, &report.total);
    for (g, t) in &report.groups {
        table_row(&mut out, &format!("  {g}"), t);
    }
    let conv: Vec<String> = report.conventions.pairs().iter().map(|(k, v)| format!("{k}={v}")).collect();
    let _ = writeln!(out, "conventions {}", conv.join(" "));
    out
}

fn fmt_ratio(r: Option<f64>) -> String {
    r.map_or_else(|| "-".to_string(), |r| format!("{r:.3}"))
}

/// Side-by-side comparison. With `kv`, emits `key=value` lines instead.
pub fn render_comparison(c: &Comparison, kv: bool) -> String {
    let mut out = String::new();
    if kv {
        let _ = writeln!(out, "a={}", c.a);
        let _ = writeln!(out, "b={}", c.b);
        for r in &c.rows {
            let _ = writeln!(out, "params.{}.a={}", r.name, r.a.params);
            let _ = writeln!(out, "params.{}.b={}", r.name, r.b.params);
            let _ = writeln!(out, "params.{}.ratio={}", r.name, fmt_ratio(r.params_ratio()));
            let _ = writeln!(out, "flops.{}.a={}", r.name, r.a.flops());
            let _ = writeln!(out, "flops.{}.b={}", r.name, r.b.flops());
            let _ = writeln!(out, "flops.{}.ratio={}", r.name, fmt_ratio(r.flops_ratio()));
        }
        if let Some(d) = c.dominant() {
            let _ = writeln!(out, "dominant={d}");
        }
        return out;
    }
    let _ = writeln!(out, "a: {}", c.a);
    let _ = writeln!(out, "b: {}", c.b);
    let _ = writeln!(
        out,
        "{:<12} {:>10} {:>10} {:>8} {:>10} {:>10} {:>8}",
        "", "Params a,M", "Params b,M", "ratio", "FLOPs a,B", "FLOPs b,B", "ratio"
    );
    for r in &c.rows {
        let _ = writeln!(
            out,
            "{:<12} {:>10} {:>10} {:>8} {:>10} {:>10} {:>8}",
            r.name,
            millions(r.a.params),
            millions(r.b.params),
            fmt_ratio(r.params_ratio()),
            billions(r.a.flops()),
            billions(r.b.flops()),
            fmt_ratio(r.flops_ratio())
        );
    }
    if let Some(d) = c.dominant() {
        let _ = writeln!(out, "largest change: {d}");
    }
    out
}
