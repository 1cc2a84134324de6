//! Static SVG plots of pipeline artifacts. The kind of plot follows from the
//! artifact's columns.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

use scoopcoach_core::learn::EpisodeReport;

use crate::CliError;

type Series = (String, Vec<(f64, f64)>);

struct Chart {
    title: &'static str,
    x: &'static str,
    y: &'static str,
    series: Vec<Series>,
    /// Horizontal reference line.
    level: Option<(String, f64)>,
}

fn bad(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {msg}", path.display()))
}

/// Rows of named columns; non-numeric cells read as NaN.
struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    fn parse(path: &Path, text: &str) -> Result<Table, CliError> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let columns = r.headers().map_err(|e| bad(path, e))?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| bad(path, e))?;
            let row = rec
                .iter()
                .map(|c| c.parse::<f64>().unwrap_or(f64::NAN))
                .collect();
            rows.push(row);
        }
        Ok(Table { columns, rows })
    }

    fn has(&self, names: &[&str]) -> bool {
        names.iter().all(|n| self.columns.iter().any(|c| c == n))
    }

    fn col(&self, name: &str) -> usize {
        self.columns.iter().position(|c| c == name).expect("column checked")
    }

    fn xy(&self, x: &str, y: &str, keep: impl Fn(&[f64]) -> bool) -> Vec<(f64, f64)> {
        let (i, j) = (self.col(x), self.col(y));
        self.rows
            .iter()
            .filter(|r| keep(r))
            .map(|r| (r[i], r[j]))
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .collect()
    }
}

fn running_mean(points: &[(f64, f64)], window: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(points.len());
    let mut sum = 0.0;
    for (i, &(x, y)) in points.iter().enumerate() {
        sum += y;
        if i >= window {
            sum -= points[i - window].1;
        }
        out.push((x, sum / (i + 1).min(window) as f64));
    }
    out
}

fn episode_chart(path: &Path, body: &str) -> Result<Chart, CliError> {
    let reports = body
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str::<EpisodeReport>(l).map_err(|e| bad(path, e)))
        .collect::<Result<Vec<_>, _>>()?;
    let points = reports.iter().map(|r| (r.episode as f64, r.reward)).collect();
    Ok(Chart {
        title: "Coaching reward",
        x: "episode",
        y: "reward",
        series: vec![("reward".into(), points)],
        level: Some(("goal".into(), 1.0)),
    })
}

fn table_chart(path: &Path, t: &Table) -> Result<Chart, CliError> {
    let all = |_: &[f64]| true;
    if t.has(&["iteration", "work"]) {
        return Ok(Chart {
            title: "Least-effort planning",
            x: "iteration",
            y: "work (J)",
            series: vec![("work".into(), t.xy("iteration", "work", all))],
            level: None,
        });
    }
    if t.has(&["path", "x", "z"]) {
        let p = t.col("path");
        return Ok(Chart {
            title: "Least-effort scoop path",
            x: "x (m)",
            y: "z (m)",
            series: vec![
                ("demonstrated".into(), t.xy("x", "z", |r| r[p] == 0.0)),
                ("least effort".into(), t.xy("x", "z", |r| r[p] == 1.0)),
            ],
            level: None,
        });
    }
    if t.has(&["episode", "reward"]) {
        let raw = t.xy("episode", "reward", all);
        return Ok(Chart {
            title: "Self-evaluation reward",
            x: "episode",
            y: "reward, mean of 100",
            series: vec![("reward".into(), running_mean(&raw, 100))],
            level: None,
        });
    }
    if t.has(&["time", "mass_in_scoop", "mass_transferred"]) {
        let grams = |pts: Vec<(f64, f64)>| pts.into_iter().map(|(x, y)| (x, y * 1000.0)).collect();
        return Ok(Chart {
            title: "Execution",
            x: "time (s)",
            y: "mass (g)",
            series: vec![
                ("in scoop".into(), grams(t.xy("time", "mass_in_scoop", all))),
                ("transferred".into(), grams(t.xy("time", "mass_transferred", all))),
            ],
            level: None,
        });
    }
    if t.has(&["time", "cumulative_work"]) {
        return Ok(Chart {
            title: "Media work along the planned path",
            x: "time (s)",
            y: "cumulative work (J)",
            series: vec![("work".into(), t.xy("time", "cumulative_work", all))],
            level: None,
        });
    }
    Err(CliError::Usage(format!(
        "{}: no plot for columns {}",
        path.display(),
        t.columns.join(",")
    )))
}

fn range(values: impl Iterator<Item = f64>) -> std::ops::Range<f64> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return 0.0..1.0;
    }
    let pad = ((hi - lo) * 0.05).max(1e-9);
    (lo - pad)..(hi + pad)
}

fn draw(chart: &Chart, out: &Path) -> Result<(), Box<dyn std::error::Error>> {
    let root = SVGBackend::new(out, (800, 500)).into_drawing_area();
    root.fill(&WHITE)?;
    let points = || chart.series.iter().flat_map(|(_, p)| p.iter());
    let xs = range(points().map(|p| p.0));
    let ys = range(points().map(|p| p.1).chain(chart.level.iter().map(|l| l.1)));
    let mut c = ChartBuilder::on(&root)
        .caption(chart.title, ("sans-serif", 22))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(xs.clone(), ys)?;
    c.configure_mesh().x_desc(chart.x).y_desc(chart.y).draw()?;
    for (i, (name, pts)) in chart.series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        c.draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    if let Some((name, y)) = &chart.level {
        let style = BLACK.mix(0.5);
        c.draw_series(LineSeries::new([(xs.start, *y), (xs.end, *y)], style))?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], style));
    }
    c.configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()?;
    root.present()?;
    Ok(())
}

/// Renders `input` to `<out_dir>/<input stem>.svg`.
pub fn render(input: &Path, out_dir: &Path) -> Result<PathBuf, CliError> {
    let text = std::fs::read_to_string(input).map_err(|e| CliError::io(input, e))?;
    let body: String = text
        .split_inclusive('\n')
        .filter(|l| !l.starts_with('#'))
        .collect();
    let chart = if body.trim_start().starts_with('{') {
        let first: serde_json::Value = body
            .lines()
            .next()
            .and_then(|l| serde_json::from_str(l).ok())
            .unwrap_or_default();
        if first.get("episode").is_none() || first.get("reward").is_none() {
            return Err(CliError::Usage(format!("{}: not an episode log", input.display())));
        }
        episode_chart(input, &body)?
    } else {
        table_chart(input, &Table::parse(input, &body)?)?
    };
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let stem = input.file_stem().unwrap_or_default().to_string_lossy();
    let out = out_dir.join(format!("{stem}.svg"));
    draw(&chart, &out).map_err(|e| bad(&out, e))?;
    Ok(out)
}
