//! Static SVG figures: training curves and the response-length histogram.
//!
//! Rendering is plain string formatting with fixed precision, so the same
//! inputs always give the same bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use aimlab::io::write_atomic;
use aimlab::trainer::StepLog;
use aimlab::{Error, Result};

pub const STEPS_CSV: &str = "steps.csv";
pub const GENERATIONS_TSV: &str = "generations.tsv";
pub const CURVES_SVG: &str = "curves.svg";
pub const LENGTHS_SVG: &str = "lengths.svg";

const WIDTH: f64 = 640.0;
const PANEL_HEIGHT: f64 = 180.0;
const MARGIN: f64 = 48.0;

fn header(out: &mut String, height: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{height:.0}" viewBox="0 0 {WIDTH:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// `(lo, hi)` padded so a constant series still gets a visible band.
fn range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        return None;
    }
    if hi - lo < 1e-12 {
        let pad = lo.abs().max(1.0) * 0.05;
        Some((lo - pad, hi + pad))
    } else {
        Some((lo, hi))
    }
}

/// One panel per named series, stacked vertically, sharing the step axis.
pub fn render_curves(series: &[(&str, Vec<(f64, f64)>)]) -> String {
    let height = PANEL_HEIGHT * series.len().max(1) as f64;
    let mut out = String::new();
    header(&mut out, height);
    let steps = range(series.iter().flat_map(|(_, pts)| pts.iter().map(|p| p.0)));
    for (k, (name, pts)) in series.iter().enumerate() {
        let top = k as f64 * PANEL_HEIGHT;
        let (x0, x1, y0, y1) = (MARGIN, WIDTH - 16.0, top + PANEL_HEIGHT - 28.0, top + 20.0);
        let _ = writeln!(out, r#"<g class="panel" data-series="{}">"#, escape(name));
        let _ = writeln!(out, r#"<text x="{x0:.1}" y="{:.1}" font-weight="bold">{}</text>"#, top + 14.0, escape(name));
        let _ = writeln!(
            out,
            r##"<rect x="{x0:.1}" y="{y1:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#999"/>"##,
            x1 - x0,
            y0 - y1
        );
        match (steps, range(pts.iter().map(|p| p.1))) {
            (Some((s_lo, s_hi)), Some((v_lo, v_hi))) if !pts.is_empty() => {
                let sx = |s: f64| x0 + (s - s_lo) / (s_hi - s_lo) * (x1 - x0);
                let sy = |v: f64| y0 - (v - v_lo) / (v_hi - v_lo) * (y0 - y1);
                let coords: Vec<String> = pts.iter().map(|&(s, v)| format!("{:.2},{:.2}", sx(s), sy(v))).collect();
                let _ = writeln!(
                    out,
                    r##"<polyline class="curve" data-points="{}" fill="none" stroke="#1f5fa8" stroke-width="1.2" points="{}"/>"##,
                    pts.len(),
                    coords.join(" ")
                );
                let _ = writeln!(out, r#"<text x="4" y="{:.1}">{v_hi:.4}</text>"#, y1 + 4.0);
                let _ = writeln!(out, r#"<text x="4" y="{y0:.1}">{v_lo:.4}</text>"#);
                let _ = writeln!(out, r#"<text x="{x0:.1}" y="{:.1}">step {s_lo:.0}</text>"#, y0 + 14.0);
                let _ = writeln!(out, r#"<text x="{x1:.1}" y="{:.1}" text-anchor="end">step {s_hi:.0}</text>"#, y0 + 14.0);
            }
            _ => {
                let _ = writeln!(out, r##"<text x="{:.1}" y="{:.1}" fill="#777">not logged in this phase</text>"##, x0 + 8.0, y1 + 20.0);
            }
        }
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    out
}

/// Bars for every length that occurs, in increasing order of length.
pub fn render_histogram(lengths: &[usize]) -> String {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in lengths {
        *counts.entry(l).or_insert(0) += 1;
    }
    let height = 260.0;
    let mut out = String::new();
    header(&mut out, height);
    let _ = writeln!(out, r#"<text x="{MARGIN:.1}" y="16" font-weight="bold">response length (tokens), n = {}</text>"#, lengths.len());
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - 16.0, height - 32.0, 28.0);
    let _ = writeln!(out, r##"<line x1="{x0:.1}" y1="{y0:.1}" x2="{x1:.1}" y2="{y0:.1}" stroke="#999"/>"##);
    let max_count = counts.values().copied().max().unwrap_or(0);
    if let (Some(&lo), Some(&hi)) = (counts.keys().next(), counts.keys().next_back()) {
        let slots = (hi - lo + 1) as f64;
        let slot = (x1 - x0) / slots;
        for (&len, &n) in &counts {
            let h = n as f64 / max_count as f64 * (y0 - y1);
            let x = x0 + (len - lo) as f64 * slot;
            let _ = writeln!(
                out,
                r##"<rect class="bar" data-length="{len}" data-count="{n}" x="{:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="#1f5fa8"/>"##,
                x + slot * 0.1,
                y0 - h,
                slot * 0.8
            );
            let _ = writeln!(out, r#"<text x="{:.2}" y="{:.1}" text-anchor="middle">{len}</text>"#, x + slot / 2.0, y0 + 14.0);
            let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{n}</text>"#, x + slot / 2.0, y0 - h - 3.0);
        }
    }
    out.push_str("</svg>\n");
    out
}

pub fn read_steps(path: &Path) -> Result<Vec<StepLog>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    reader.deserialize().collect::<std::result::Result<Vec<StepLog>, _>>().map_err(|e| csv_err(path, e))
}

pub fn steps_csv(logs: &[StepLog]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for l in logs {
        w.serialize(l).map_err(|e| csv_err(Path::new(STEPS_CSV), e))?;
    }
    w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))
}

pub fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

pub fn curve_series(logs: &[StepLog]) -> Vec<(&'static str, Vec<(f64, f64)>)> {
    let pick = |f: fn(&StepLog) -> Option<f64>| logs.iter().filter_map(|l| f(l).map(|v| (l.step as f64, v))).collect::<Vec<_>>();
    vec![
        ("GAN loss", pick(|l| l.gan)),
        ("MI lower bound", pick(|l| l.mi)),
        ("MLE", pick(|l| Some(l.mle))),
    ]
}

/// Response lengths from a `source<TAB>response` file.
pub fn read_lengths(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| l.split_once('\t').map_or(l, |(_, r)| r).split_whitespace().count())
        .collect())
}

/// Renders every figure whose log is present in `dir` and returns the file
/// names written.
pub fn emit_plots(dir: &Path) -> Result<Vec<&'static str>> {
    let mut written = Vec::new();
    let steps = dir.join(STEPS_CSV);
    if steps.exists() {
        let logs = read_steps(&steps)?;
        write_atomic(&dir.join(CURVES_SVG), render_curves(&curve_series(&logs)).as_bytes())?;
        written.push(CURVES_SVG);
    }
    let gens = dir.join(GENERATIONS_TSV);
    if gens.exists() {
        write_atomic(&dir.join(LENGTHS_SVG), render_histogram(&read_lengths(&gens)?).as_bytes())?;
        written.push(LENGTHS_SVG);
    }
    if written.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no run logs in {} (expected {STEPS_CSV} or {GENERATIONS_TSV})",
            dir.display()
        )));
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use aimlab::trainer::Phase;

    fn log(step: u64, gan: Option<f64>) -> StepLog {
        StepLog {
            phase: Phase::Adversarial,
            step,
            epoch: 0,
            mle: 3.0 - step as f64 * 0.1,
            gan,
            disc_loss: None,
            mi: gan.map(|g| -g),
            objective: None,
            clamp_rate: Some(0.0),
            valid_mle: None,
        }
    }

    fn polyline_points(svg: &str) -> Vec<usize> {
        svg.lines()
            .filter(|l| l.contains("class=\"curve\""))
            .map(|l| {
                let pts = l.split("points=\"").nth(2).unwrap().split('"').next().unwrap();
                pts.split(' ').count()
            })
            .collect()
    }

    #[test]
    fn curve_has_one_point_per_logged_step() {
        let logs: Vec<StepLog> = (0..7).map(|s| log(s, Some(0.5))).collect();
        let svg = render_curves(&curve_series(&logs));
        assert_eq!(polyline_points(&svg), [7, 7, 7]);
    }

    #[test]
    fn unlogged_series_is_labelled_not_drawn() {
        let logs: Vec<StepLog> = (0..4).map(|s| log(s, None)).collect();
        let svg = render_curves(&curve_series(&logs));
        assert_eq!(polyline_points(&svg), [4]);
        assert_eq!(svg.matches("not logged").count(), 2);
    }

    #[test]
    fn constant_lengths_give_one_bar() {
        let svg = render_histogram(&[3; 10]);
        assert_eq!(svg.matches("class=\"bar\"").count(), 1);
        assert!(svg.contains(r#"data-length="3" data-count="10""#));
    }

    #[test]
    fn rendering_is_byte_stable() {
        let logs: Vec<StepLog> = (0..5).map(|s| log(s, Some(s as f64 / 3.0))).collect();
        assert_eq!(render_curves(&curve_series(&logs)), render_curves(&curve_series(&logs)));
        assert_eq!(render_histogram(&[1, 2, 2, 5]), render_histogram(&[1, 2, 2, 5]));
    }

    #[test]
    fn steps_survive_csv() {
        let logs: Vec<StepLog> = (0..3).map(|s| log(s, Some(0.25))).collect();
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join(STEPS_CSV);
        std::fs::write(&p, steps_csv(&logs).unwrap()).unwrap();
        let back = read_steps(&p).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[2].gan, Some(0.25));
        assert_eq!(back[0].valid_mle, None);
    }

    #[test]
    fn emit_needs_some_log() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(emit_plots(tmp.path()).is_err());
        std::fs::write(tmp.path().join(GENERATIONS_TSV), "a\tx y z\nb\tp q r\n").unwrap();
        assert_eq!(emit_plots(tmp.path()).unwrap(), [LENGTHS_SVG]);
        let first = std::fs::read(tmp.path().join(LENGTHS_SVG)).unwrap();
        emit_plots(tmp.path()).unwrap();
        assert_eq!(std::fs::read(tmp.path().join(LENGTHS_SVG)).unwrap(), first);
    }
}
