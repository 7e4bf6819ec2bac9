//! CSV tables, SVG plots and the run manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use elastreg_core::{DisplacementField, ScalarImage};

use crate::config::Resolved;
use crate::{CliError, CliResult};

/// Fixed numeric format of every CSV cell.
pub fn f6(v: f64) -> String {
    format!("{v:.6}")
}

pub fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

/// `0.5 + (r − t)/2`, so zero difference is mid gray.
pub fn difference_image(r: &ScalarImage, t: &ScalarImage) -> CliResult<ScalarImage> {
    let samples = r
        .samples()
        .iter()
        .zip(t.samples())
        .map(|(a, b)| (0.5 + 0.5 * (a - b)).clamp(0.0, 1.0))
        .collect();
    Ok(ScalarImage::new(r.width(), r.height(), samples, r.domain())?)
}

const PLOT_SIZE: f64 = 480.0;

/// Grid lines (every `stride` cells in each direction) drawn through the map
/// `x ↦ x − u(x)`, rows top down like the rasters.
pub fn deformed_grid_svg(u: &DisplacementField, stride: usize) -> String {
    let grid = u.grid();
    let (nx, ny) = (grid.nx(), grid.ny());
    let d = grid.domain();
    let mapped = u.mapped_points();
    let px = |p: [f64; 2]| {
        (
            (p[0] - d.x_min) / d.width() * PLOT_SIZE,
            (p[1] - d.y_min) / d.height() * PLOT_SIZE,
        )
    };
    let mut svg = svg_header();
    let mut line = |pts: &mut dyn Iterator<Item = [f64; 2]>| {
        let coords: Vec<String> = pts
            .map(|p| {
                let (x, y) = px(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="black" stroke-width="0.6" points="{}"/>"#,
            coords.join(" ")
        );
    };
    for i2 in (0..ny).step_by(stride.max(1)) {
        line(&mut (0..nx).map(|i1| mapped[i1 + nx * i2]));
    }
    for i1 in (0..nx).step_by(stride.max(1)) {
        line(&mut (0..ny).map(|i2| mapped[i1 + nx * i2]));
    }
    svg.push_str("</svg>\n");
    svg
}

fn svg_header() -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{s}\" height=\"{s}\" viewBox=\"0 0 {s} {s}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        s = PLOT_SIZE
    )
}

/// One polyline per named series over a shared index axis.
pub fn curve_svg(series: &[(&str, Vec<f64>)]) -> String {
    const COLORS: [&str; 2] = ["#c0392b", "#2471a3"];
    let margin = 40.0;
    let n = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    let top = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    let top = if top > 0.0 { top } else { 1.0 };
    let span = PLOT_SIZE - 2.0 * margin;
    let x = |k: usize| margin + if n > 1 { span * k as f64 / (n - 1) as f64 } else { span / 2.0 };
    let y = |v: f64| PLOT_SIZE - margin - span * v / top;
    let mut svg = svg_header();
    let _ = writeln!(
        svg,
        r#"<polyline fill="none" stroke="gray" points="{m},{m} {m},{b} {r},{b}"/>"#,
        m = margin,
        b = PLOT_SIZE - margin,
        r = PLOT_SIZE - margin
    );
    let _ = writeln!(svg, r#"<text x="4" y="{}" font-size="10">{top:.3}</text>"#, margin);
    for (k, (name, values)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(i, v)| format!("{:.2},{:.2}", x(i), y(*v)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{name}</text>"#,
            margin + 8.0,
            margin + 14.0 * (k + 1) as f64
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Plain-text record of a run. Its `[config]` section can be passed back as
/// `--config` to reproduce the outputs.
pub struct Manifest {
    command: &'static str,
    argv: Vec<String>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    extra: Vec<(String, String)>,
    started: String,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl Manifest {
    pub fn start(command: &'static str, argv: &[String]) -> Self {
        Manifest {
            command,
            argv: argv.to_vec(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            extra: Vec::new(),
            started: now(),
        }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.extra.push((key.to_string(), value.to_string()));
    }

    pub fn finish(mut self, dir: &Path, resolved: &Resolved) -> CliResult<()> {
        let path = dir.join("manifest.txt");
        self.outputs.push(path.clone());
        let mut s = String::from("[run]\n");
        let _ = writeln!(s, "command: {}", self.command);
        let _ = writeln!(s, "argv: {}", self.argv.join(" "));
        let _ = writeln!(s, "version: {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "seed: {}", resolved.seed);
        let _ = writeln!(s, "started: {}", self.started);
        let _ = writeln!(s, "finished: {}", now());
        for (k, v) in &self.extra {
            let _ = writeln!(s, "{k}: {v}");
        }
        s.push_str("[inputs]\n");
        for p in &self.inputs {
            let _ = writeln!(s, "{}", p.display());
        }
        s.push_str("[outputs]\n");
        for p in &self.outputs {
            let _ = writeln!(s, "{}", p.display());
        }
        s.push_str("[config]\n");
        for l in resolved.to_lines() {
            let _ = writeln!(s, "{l}");
        }
        write_file(&path, &s)
    }
}
