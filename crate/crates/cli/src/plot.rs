//! Line charts from CSV output, written as plain SVG.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CliError, CliResult};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 140.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlotSpec {
    pub x: Option<String>,
    pub y: Option<String>,
    pub group: Option<String>,
    pub title: Option<String>,
    pub log_y: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub key: String,
    pub points: Vec<(f64, f64)>,
}

/// Fills unset columns from the known schemas.
fn columns(header: &[String], spec: &PlotSpec) -> (String, String, Option<String>) {
    let has = |c: &str| header.iter().any(|h| h == c);
    let (x, y, g) = if has("se") {
        ("step", "se", Some("seed"))
    } else if has("effect_d") {
        ("iteration", "effect_d", Some("path"))
    } else {
        (header.first().map_or("", String::as_str), header.get(1).map_or("", String::as_str), None)
    };
    (
        spec.x.clone().unwrap_or_else(|| x.to_string()),
        spec.y.clone().unwrap_or_else(|| y.to_string()),
        spec.group.clone().or_else(|| g.map(str::to_string)),
    )
}

/// Series in order of first appearance; rows with an empty y cell are skipped.
pub fn read_series(path: &Path, text: &str, spec: &PlotSpec) -> CliResult<(String, String, Vec<Series>)> {
    let parse_err = |message: String| CliError::Parse { path: path.to_path_buf(), message };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> =
        reader.headers().map_err(|e| parse_err(e.to_string()))?.iter().map(str::to_string).collect();
    if header.iter().all(String::is_empty) {
        return Err(parse_err("missing header row".into()));
    }
    let (x, y, group) = columns(&header, spec);
    let index =
        |name: &str| header.iter().position(|h| h == name).ok_or_else(|| parse_err(format!("no column `{name}`")));
    let (xi, yi) = (index(&x)?, index(&y)?);
    let gi = group.as_deref().map(index).transpose()?;
    let mut series: Vec<Series> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        let cell = |i: usize| record.get(i).unwrap_or("");
        if cell(yi).is_empty() {
            continue;
        }
        let num = |i: usize| {
            cell(i).parse::<f64>().map_err(|_| parse_err(format!("row {}: `{}` is not a number", line + 2, cell(i))))
        };
        let point = (num(xi)?, num(yi)?);
        let key = gi.map(|i| cell(i).to_string()).unwrap_or_default();
        match series.iter_mut().find(|s| s.key == key) {
            Some(s) => s.points.push(point),
            None => series.push(Series { key, points: vec![point] }),
        }
    }
    if series.is_empty() {
        return Err(CliError::EmptyData(path.to_path_buf()));
    }
    Ok((x, y, series))
}

fn tick(v: f64) -> String {
    if v == 0.0 || (1e-3..1e4).contains(&v.abs()) {
        format!("{}", (v * 1000.0).round() / 1000.0)
    } else {
        format!("{v:.2e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi - lo > 0.0 {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

pub fn render(x_label: &str, y_label: &str, series: &[Series], spec: &PlotSpec) -> String {
    let floor = series.iter().flat_map(|s| &s.points).map(|p| p.1).filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor } else { 1e-300 };
    let ty = |v: f64| if spec.log_y { v.max(floor).log10() } else { v };
    let (x0, x1) = span(series.iter().flat_map(|s| &s.points).map(|p| p.0));
    let (y0, y1) = span(series.iter().flat_map(|s| &s.points).map(|p| ty(p.1)));
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let sx = |v: f64| LEFT + (v - x0) / (x1 - x0) * pw;
    let sy = |v: f64| TOP + ph - (ty(v) - y0) / (y1 - y0) * ph;
    let y_tick = |v: f64| if spec.log_y { tick(10f64.powf(v)) } else { tick(v) };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    if let Some(t) = &spec.title {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            escape(t)
        );
    }
    let (bx, by) = (LEFT + pw, TOP + ph);
    let _ = writeln!(svg, r#"<path d="M{LEFT} {TOP} L{LEFT} {by} L{bx} {by}" fill="none" stroke="black"/>"#);
    let _ = writeln!(svg, r#"<text x="{LEFT}" y="{}" text-anchor="middle">{}</text>"#, by + 16.0, tick(x0));
    let _ = writeln!(svg, r#"<text x="{bx}" y="{}" text-anchor="middle">{}</text>"#, by + 16.0, tick(x1));
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, LEFT - 6.0, by, y_tick(y0));
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, LEFT - 6.0, TOP + 4.0, y_tick(y1));
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    );
    let y_name = if spec.log_y { format!("{y_label} (log)") } else { y_label.to_string() };
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        TOP + ph / 2.0,
        escape(&y_name)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ =
            writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let ly = TOP + 14.0 * i as f64;
        let _ = writeln!(svg, r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/>"#, bx + 12.0, ly);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, bx + 26.0, ly + 9.0, escape(&s.key));
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn plot_file(input: &Path, spec: &PlotSpec) -> CliResult<String> {
    let text = std::fs::read_to_string(input).map_err(|e| CliError::io(input, e))?;
    let (x, y, series) = read_series(input, &text, spec)?;
    Ok(render(&x, &y, &series, spec))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> CliResult<(String, String, Vec<Series>)> {
        read_series(Path::new("t.csv"), text, &PlotSpec::default())
    }

    #[test]
    fn two_rows_make_one_segment() {
        let (_, _, s) = parse("x,y\n0,1\n1,2\n").unwrap();
        assert_eq!(s, vec![Series { key: String::new(), points: vec![(0.0, 1.0), (1.0, 2.0)] }]);
        let svg = render("x", "y", &s, &PlotSpec::default());
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg, render("x", "y", &s, &PlotSpec::default()));
    }

    #[test]
    fn schema_defaults_group_curves() {
        let text = "seed,n_d,step,se,schedule,mode\n1,2,0,0.5,per-token,kernel\n1,2,1,0,per-token,kernel\n2,2,0,0.4,per-token,kernel\n";
        let (x, y, s) = parse(text).unwrap();
        assert_eq!((x.as_str(), y.as_str()), ("step", "se"));
        assert_eq!(s.len(), 2);
        let opt = "iteration,path,effect_d,similarity,collapse,perturbed,demo_id\n0,0,1,,false,false,0\n";
        assert_eq!(parse(opt).unwrap().0, "iteration");
    }

    #[test]
    fn bad_input() {
        assert!(matches!(parse("x,y\n"), Err(CliError::EmptyData(_))));
        assert!(matches!(parse("x,y\n1,abc\n"), Err(CliError::Parse { .. })));
        assert!(matches!(parse("x,y\n1,2,3\n"), Err(CliError::Parse { .. })));
        let spec = PlotSpec { y: Some("z".into()), ..Default::default() };
        assert!(matches!(read_series(Path::new("t"), "x,y\n1,2\n", &spec), Err(CliError::Parse { .. })));
    }

    #[test]
    fn log_axis_tolerates_zeros() {
        let (_, _, s) = parse("x,y\n0,1\n1,0\n").unwrap();
        let svg = render("x", "y", &s, &PlotSpec { log_y: true, ..Default::default() });
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }
}
