//! Atomic file emission: CSV tables and a minimal SVG scatter.

use anyhow::{Context, Result};
use qrh_mm::backtest::FrontierReport;
use std::path::{Path, PathBuf};

/// Writes `content` to `path` atomically (temp file in the same directory,
/// then rename).
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))?;
    }
    let tmp = path.with_extension(format!(
        "tmp{}",
        std::process::id()
    ));
    std::fs::write(&tmp, content).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

/// CSV table with a fixed header; floats use the shortest round-trip form.
pub struct CsvTable {
    out: String,
}

impl CsvTable {
    pub fn new(header: &str) -> Self {
        let mut out = String::new();
        out.push_str(header);
        out.push('\n');
        CsvTable { out }
    }

    pub fn row<I: IntoIterator<Item = String>>(&mut self, cells: I) {
        let mut first = true;
        for cell in cells {
            if !first {
                self.out.push(',');
            }
            self.out.push_str(&cell);
            first = false;
        }
        self.out.push('\n');
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.out)
    }
}

pub fn fmt(x: f64) -> String {
    // Canonicalize the sign of zero so equal values print identically.
    format!("{}", if x == 0.0 { 0.0 } else { x })
}

pub fn frontier_csv(report: &FrontierReport) -> CsvTable {
    let mut table = CsvTable::new("kappa,strategy,mean,std,stderr,n_paths");
    for row in &report.rows {
        table.row([
            fmt(row.kappa),
            row.strategy.to_string(),
            fmt(row.mean),
            fmt(row.std),
            fmt(row.std_error),
            row.n_paths.to_string(),
        ]);
    }
    table
}

/// Minimal (std, mean) scatter per strategy, one marker shape-free colored
/// series each; enough to eyeball a frontier without plotting tooling.
pub fn frontier_svg(report: &FrontierReport) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const PAD: f64 = 60.0;
    let xs: Vec<f64> = report.rows.iter().map(|r| r.std).collect();
    let ys: Vec<f64> = report.rows.iter().map(|r| r.mean).collect();
    let (x_min, x_max) = bounds(&xs);
    let (y_min, y_max) = bounds(&ys);
    let sx = |x: f64| PAD + (x - x_min) / (x_max - x_min).max(1e-12) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y_min) / (y_max - y_min).max(1e-12) * (H - 2.0 * PAD);

    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"];
    let mut strategies: Vec<&str> = report.rows.iter().map(|r| r.strategy).collect();
    strategies.dedup();
    strategies.sort_unstable();
    strategies.dedup();

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{PAD}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n",
        H - PAD,
        W - PAD
    ));
    svg.push_str(&format!(
        "<line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - PAD
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\">std of P&amp;L ($)</text>\n",
        W / 2.0 - 40.0,
        H - PAD / 3.0
    ));
    svg.push_str(&format!(
        "<text x=\"12\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 12,{})\">mean P&amp;L ($)</text>\n",
        H / 2.0,
        H / 2.0
    ));
    for (si, strategy) in strategies.iter().enumerate() {
        let color = palette[si % palette.len()];
        for row in report.rows.iter().filter(|r| r.strategy == *strategy) {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{}\"><title>{} kappa={}</title></circle>\n",
                sx(row.std),
                sy(row.mean),
                color,
                strategy,
                row.kappa
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{}\">{}</text>\n",
            W - PAD + 6.0,
            PAD + 16.0 * si as f64,
            color,
            strategy
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn bounds(values: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 1.0, hi + 1.0)
    } else {
        (lo, hi)
    }
}

/// Resolves the output directory: flag, then QRH_MM_OUT_DIR, then the config
/// value, then `./out`.
pub fn resolve_out_dir(flag: Option<&str>, config_dir: Option<&str>) -> PathBuf {
    if let Some(dir) = flag {
        return PathBuf::from(dir);
    }
    if let Ok(dir) = std::env::var("QRH_MM_OUT_DIR") {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    PathBuf::from(config_dir.unwrap_or("out"))
}
