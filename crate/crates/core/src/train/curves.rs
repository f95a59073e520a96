use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::EpochMetrics;
use crate::error::{Error, Result};
use crate::optim::OptimizerKind;

pub const METRICS_HEADER: &str = "epoch,lr,train_loss,train_acc,val_loss,val_acc";

/// Metrics rows as CSV text, six decimals per value.
pub fn metrics_csv(series: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in series {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            m.epoch, m.lr, m.train_loss, m.train_acc, m.val_loss, m.val_acc
        );
    }
    out
}

/// Writes the metrics CSV and, for a non-empty series, an SVG chart of
/// train and validation accuracy against epoch. Returns whether the SVG was
/// written.
pub fn emit_curves(
    series: &[EpochMetrics],
    optimizer: OptimizerKind,
    csv_path: impl AsRef<Path>,
    svg_path: Option<&Path>,
) -> Result<bool> {
    let csv_path = csv_path.as_ref();
    fs::write(csv_path, metrics_csv(series)).map_err(|e| Error::io(csv_path, e))?;
    match svg_path {
        Some(p) if !series.is_empty() => {
            fs::write(p, accuracy_svg(series, optimizer)).map_err(|e| Error::io(p, e))?;
            Ok(true)
        }
        _ => Ok(false),
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn accuracy_svg(series: &[EpochMetrics], optimizer: OptimizerKind) -> String {
    let epochs = series.len();
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let last = series.last().map_or(1, |m| m.epoch).max(2);
    let first = series.first().map_or(1, |m| m.epoch);
    let x = |e: usize| LEFT + plot_w * (e - first) as f64 / (last - first).max(1) as f64;
    let y = |acc: f64| TOP + plot_h * (1.0 - acc.clamp(0.0, 1.0));
    let line = |pick: fn(&EpochMetrics) -> f64| {
        series
            .iter()
            .map(|m| format!("{:.2},{:.2}", x(m.epoch), y(pick(m))))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">Train acc vs Val acc (epochs={epochs}, {})</text>"#,
        WIDTH / 2.0,
        optimizer.to_string().to_uppercase()
    );
    // axes and ticks
    let _ = writeln!(
        s,
        r#"<path d="M{LEFT},{TOP} V{} H{}" fill="none" stroke="black"/>"#,
        TOP + plot_h,
        LEFT + plot_w
    );
    for i in 0..=5 {
        let acc = f64::from(i) / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{acc:.1}</text>"#,
            LEFT - 6.0,
            y(acc) + 4.0
        );
    }
    for e in [first, (first + last) / 2, last] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{e}</text>"#,
            x(e),
            TOP + plot_h + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">accuracy</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
        line(|m| m.train_acc)
    );
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="darkorange" stroke-width="2"/>"#,
        line(|m| m.val_acc)
    );
    // legend
    let (lx, ly) = (LEFT + plot_w - 190.0, TOP + plot_h - 50.0);
    let opt = optimizer.to_string().to_uppercase();
    for (i, (color, label)) in [("steelblue", "train acc"), ("darkorange", "val acc")]
        .iter()
        .enumerate()
    {
        let yy = ly + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{yy}" x2="{}" y2="{yy}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{label} ({opt}, {epochs} epochs)</text>"#,
            lx + 20.0,
            lx + 26.0,
            yy + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}
