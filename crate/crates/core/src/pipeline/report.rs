//! Report files of an exploration run. Everything is written in a fixed
//! order with fixed formatting so identical runs give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::FlowConfig;
use super::flow::{lambda_summary, Exploration, SearchOutcome};
use super::model_file::save_model;
use super::pareto::{pareto_extract, Axis, ParetoPoint};
use crate::error::Result;

#[derive(Serialize)]
struct SearchRow {
    lambda_index: usize,
    lambda: f64,
    seed: u64,
    conv1: usize,
    conv2: usize,
    fc1: usize,
    params: u64,
    macs: u64,
    final_loss: f32,
}

#[derive(Serialize)]
struct FrontierRow<'a> {
    set: &'static str,
    model_id: &'a str,
    spec: &'a str,
    lambda: f64,
    cost: u64,
    bas_mean: f64,
    bas_std: f64,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_points(path: &Path) -> Result<Vec<ParetoPoint>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|p| p.map_err(Into::into)).collect()
}

/// `search.csv` (one row per searched architecture) and
/// `lambda_summary.csv`.
pub fn write_search(dir: &Path, outcomes: &[SearchOutcome]) -> Result<[PathBuf; 2]> {
    let rows = dir.join("search.csv");
    write_csv(
        &rows,
        outcomes.iter().map(|o| SearchRow {
            lambda_index: o.lambda_index,
            lambda: o.lambda,
            seed: o.seed,
            conv1: o.widths.conv1,
            conv2: o.widths.conv2,
            fc1: o.widths.fc1,
            params: o.params(),
            macs: o.macs(),
            final_loss: o.final_loss,
        }),
    )?;
    let summary = dir.join("lambda_summary.csv");
    write_csv(&summary, lambda_summary(outcomes))?;
    Ok([rows, summary])
}

/// Float and quantized frontiers on `axis`, in that order.
pub fn frontiers(points: &[ParetoPoint], axis: Axis) -> (Vec<ParetoPoint>, Vec<ParetoPoint>) {
    let (float, quant): (Vec<ParetoPoint>, Vec<ParetoPoint>) = points.iter().cloned().partition(|p| p.is_float());
    (pareto_extract(&float, axis), pareto_extract(&quant, axis))
}

/// Writes `frontier_<axis>.csv` and `frontier_<axis>.svg`; returns both
/// paths.
pub fn write_frontier(dir: &Path, points: &[ParetoPoint], axis: Axis) -> Result<[PathBuf; 2]> {
    let (float, quant) = frontiers(points, axis);
    let rows = float
        .iter()
        .map(|p| ("float32", p))
        .chain(quant.iter().map(|p| ("quantized", p)))
        .map(|(set, p)| FrontierRow {
            set,
            model_id: &p.model_id,
            spec: &p.spec,
            lambda: p.lambda,
            cost: p.cost(axis).expect("frontier points have a cost"),
            bas_mean: p.bas_mean,
            bas_std: p.bas_std,
        });
    let csv_path = dir.join(format!("frontier_{axis}.csv"));
    write_csv(&csv_path, rows)?;
    let svg_path = dir.join(format!("frontier_{axis}.svg"));
    fs::write(&svg_path, frontier_svg(points, axis))?;
    Ok([csv_path, svg_path])
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 52.0;
const FLOAT_COLOR: &str = "#1f6fb4";
const QUANT_COLOR: &str = "#c8402a";

/// Self-contained SVG of BAS against log cost: every point faint, both
/// frontiers as staircases.
pub fn frontier_svg(points: &[ParetoPoint], axis: Axis) -> String {
    let (float, quant) = frontiers(points, axis);
    let costed: Vec<&ParetoPoint> = points.iter().filter(|p| p.cost(axis).is_some()).collect();
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">BAS vs {axis}</text>"#,
        W / 2.0
    );
    if costed.is_empty() {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">no points</text>"#, W / 2.0, H / 2.0);
        s.push_str("</svg>\n");
        return s;
    }
    let lc = |p: &ParetoPoint| (p.cost(axis).expect("costed").max(1) as f64).log10();
    let xmin = costed.iter().map(|p| lc(p)).fold(f64::INFINITY, f64::min).floor();
    let xmax = costed.iter().map(|p| lc(p)).fold(f64::NEG_INFINITY, f64::max).ceil().max(xmin + 1.0);
    let bmin = costed.iter().map(|p| p.bas_mean).fold(1.0, f64::min);
    let ymin = ((bmin * 10.0).floor() / 10.0).clamp(0.0, 0.9);
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let px = |x: f64| LEFT + (x - xmin) / (xmax - xmin) * pw;
    let py = |b: f64| TOP + (1.0 - (b - ymin) / (1.0 - ymin)) * ph;

    let _ = writeln!(
        s,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
    );
    let mut d = xmin as i32;
    while d as f64 <= xmax {
        let x = px(d as f64);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">1e{d}</text>"##,
            TOP + ph,
            TOP + ph + 16.0
        );
        d += 1;
    }
    let steps = ((1.0 - ymin) * 10.0).round() as i32;
    for i in 0..=steps {
        let b = ymin + i as f64 / 10.0;
        let y = py(b);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{b:.1}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{axis} (log scale)</text>"#,
        LEFT + pw / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">BAS</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );

    for p in &costed {
        let color = if p.is_float() { FLOAT_COLOR } else { QUANT_COLOR };
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="none" stroke="{color}" stroke-opacity="0.35"/>"#,
            px(lc(p)),
            py(p.bas_mean)
        );
    }
    for (front, color) in [(&float, FLOAT_COLOR), (&quant, QUANT_COLOR)] {
        if front.is_empty() {
            continue;
        }
        let mut path = String::new();
        for (i, p) in front.iter().enumerate() {
            let (x, y) = (px(lc(p)), py(p.bas_mean));
            if i == 0 {
                let _ = write!(path, "M{x:.2},{y:.2}");
            } else {
                let _ = write!(path, " H{x:.2} V{y:.2}");
            }
        }
        let _ = writeln!(s, r#"<path d="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>"#);
        for p in front.iter() {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"><title>{} {} BAS {:.3}</title></circle>"#,
                px(lc(p)),
                py(p.bas_mean),
                p.model_id,
                p.cost(axis).expect("costed"),
                p.bas_mean
            );
        }
    }
    let (lx, ly) = (LEFT + pw - 130.0, TOP + ph - 40.0);
    for (i, (label, color)) in [("float32", FLOAT_COLOR), ("quantized", QUANT_COLOR)].iter().enumerate() {
        let y = ly + i as f64 * 18.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{label}</text>"#,
            lx + 24.0,
            lx + 30.0,
            y + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes every report and model artifact of `ex` below `dir`, including
/// the effective configuration. Returns the written paths in order.
pub fn write_reports(dir: &Path, ex: &Exploration, cfg: &FlowConfig) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir.join("models"))?;
    let mut written = Vec::new();

    let p = dir.join("config.toml");
    fs::write(&p, cfg.to_toml()?)?;
    written.push(p);

    written.extend(write_search(dir, &ex.search)?);

    let p = dir.join("cv.csv");
    write_csv(&p, &ex.cv)?;
    written.push(p);

    let p = dir.join("skipped.csv");
    write_csv(&p, &ex.skipped)?;
    written.push(p);

    let p = dir.join("points.csv");
    write_csv(&p, &ex.points)?;
    written.push(p);

    for &axis in &cfg.pareto.axes {
        written.extend(write_frontier(dir, &ex.points, axis)?);
    }
    for (id, art) in &ex.models {
        let p = dir.join("models").join(format!("{id}.ircm"));
        save_model(&p, art)?;
        written.push(p);
    }
    Ok(written)
}
