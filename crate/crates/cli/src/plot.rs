//! Plain SVG charts drawn from the CSV tables of an output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;
const COLORS: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

/// Columns of a CSV table, by name.
struct Csv {
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Csv {
    fn read(path: &Path) -> Result<Csv> {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_path(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let columns = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<Result<_, _>>()?;
        Ok(Csv { columns, rows })
    }

    fn col(&self, name: &str) -> Result<usize> {
        match self.columns.iter().position(|c| c == name) {
            Some(i) => Ok(i),
            None => bail!("missing column {name}"),
        }
    }

    fn floats(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.col(name)?;
        Ok(self
            .rows
            .iter()
            .map(|r| r[i].parse().unwrap_or(f64::NAN))
            .collect())
    }

    fn texts(&self, name: &str) -> Result<Vec<String>> {
        let i = self.col(name)?;
        Ok(self.rows.iter().map(|r| r[i].clone()).collect())
    }
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

struct Chart {
    title: String,
    xlabel: String,
    ylabel: String,
    log_x: bool,
    lines: Vec<Series>,
    /// Histogram bars as (left, right, height).
    bars: Vec<(f64, f64, f64)>,
}

impl Chart {
    fn new(title: &str, xlabel: &str, ylabel: &str) -> Chart {
        Chart {
            title: title.into(),
            xlabel: xlabel.into(),
            ylabel: ylabel.into(),
            log_x: false,
            lines: Vec::new(),
            bars: Vec::new(),
        }
    }

    fn svg(&self) -> String {
        let tx = |x: f64| if self.log_x { x.log10() } else { x };
        let mut xs: Vec<f64> = self
            .lines
            .iter()
            .flat_map(|s| s.points.iter().map(|p| tx(p.0)))
            .collect();
        let mut ys: Vec<f64> = self
            .lines
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.1))
            .collect();
        for &(l, r, h) in &self.bars {
            xs.extend([l, r]);
            ys.extend([0.0, h]);
        }
        let finite = |v: &[f64]| {
            v.iter()
                .copied()
                .filter(|x| x.is_finite())
                .collect::<Vec<_>>()
        };
        let (xs, ys) = (finite(&xs), finite(&ys));
        let range = |v: &[f64]| {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, lo + 0.5)
            }
        };
        let (x0, x1) = range(&xs);
        let (y0, y1) = range(&ys);
        let (y0, y1) = (y0.min(0.0), y1 + 0.05 * (y1 - y0));
        let px = |x: f64| MARGIN + (tx(x) - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
        let pxr = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
        let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            self.title
        );
        let (l, r, b, t) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
        let _ = writeln!(
            s,
            r#"<path d="M{l},{t} L{l},{b} L{r},{b}" stroke="black" fill="none"/>"#
        );
        for k in 0..=4 {
            let fx = x0 + (x1 - x0) * k as f64 / 4.0;
            let fy = y0 + (y1 - y0) * k as f64 / 4.0;
            let lx = if self.log_x { 10f64.powf(fx) } else { fx };
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
                pxr(fx),
                b + 18.0,
                tick(lx)
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                l - 6.0,
                py(fy) + 4.0,
                tick(fy)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 16.0,
            self.xlabel
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            self.ylabel
        );
        for &(bl, br, h) in &self.bars {
            let _ = writeln!(
                s,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#9ecae1" stroke="#6baed6"/>"##,
                pxr(bl),
                py(h),
                pxr(br) - pxr(bl),
                py(0.0) - py(h)
            );
        }
        for (i, series) in self.lines.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let d: Vec<String> = series
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" stroke="{color}" fill="none" stroke-width="1.5"/>"#,
                d.join(" ")
            );
            let ly = MARGIN + 16.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">{}</text>"#,
                r, series.label
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

/// Groups `(x, y)` pairs by a label built from `keys`.
fn grouped(t: &Csv, keys: &[&str], x: &str, y: &str) -> Result<Vec<Series>> {
    let xs = t.floats(x)?;
    let ys = t.floats(y)?;
    let labels: Vec<Vec<String>> = keys.iter().map(|k| t.texts(k)).collect::<Result<_>>()?;
    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for i in 0..xs.len() {
        let label = keys
            .iter()
            .zip(&labels)
            .map(|(k, v)| format!("{k}={}", v[i]))
            .collect::<Vec<_>>()
            .join(" ");
        groups.entry(label).or_default().push((xs[i], ys[i]));
    }
    Ok(groups
        .into_iter()
        .map(|(label, mut points)| {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series { label, points }
        })
        .collect())
}

fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, f64)> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Vec::new();
    }
    let w = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        counts[(((v - lo) / w) as usize).min(bins - 1)] += 1;
    }
    let n = values.len() as f64;
    counts
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            (
                lo + k as f64 * w,
                lo + (k + 1) as f64 * w,
                c as f64 / (n * w),
            )
        })
        .collect()
}

fn toy_chart(dir: &Path) -> Result<Chart> {
    let samples = Csv::read(&dir.join("samples_t1.csv"))?;
    let pdf = Csv::read(&dir.join("target_pdf.csv"))?;
    let mut c = Chart::new("particles at t = 1", "x", "density");
    c.bars = histogram(&samples.floats("x")?, 40);
    let x = pdf.floats("x")?;
    c.lines.push(Series {
        label: "target".into(),
        points: x.iter().copied().zip(pdf.floats("pdf")?).collect(),
    });
    c.lines.push(Series {
        label: "prior".into(),
        points: x.iter().copied().zip(pdf.floats("prior_pdf")?).collect(),
    });
    Ok(c)
}

fn skew_sample_chart(path: &Path) -> Result<Vec<(String, Chart)>> {
    let t = Csv::read(path)?;
    let kernels = t.texts("kernel")?;
    let x1 = t.floats("x_t1")?;
    let mut names: Vec<String> = kernels.clone();
    names.dedup();
    Ok(names
        .into_iter()
        .map(|k| {
            let v: Vec<f64> = x1
                .iter()
                .zip(&kernels)
                .filter(|(_, kk)| **kk == k)
                .map(|(x, _)| *x)
                .collect();
            let mut c = Chart::new(
                &format!("first coordinate at t = 1, {k} kernel"),
                "x",
                "density",
            );
            c.bars = histogram(&v, 30);
            (format!("skew_samples_{k}.svg"), c)
        })
        .collect())
}

/// Writes an SVG next to every table it knows how to draw. Returns the files written.
pub fn plot_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut charts: Vec<(PathBuf, Chart)> = Vec::new();
    if dir.join("samples_t1.csv").exists() {
        charts.push((dir.join("toy.svg"), toy_chart(dir)?));
    }
    if let Ok(entries) = fs::read_dir(dir) {
        for e in entries.flatten() {
            if e.path().join("samples_t1.csv").exists() {
                let sub = e.path();
                charts.push((sub.join("toy.svg"), toy_chart(&sub)?));
            }
        }
    }
    let skew = dir.join("skew_w2.csv");
    if skew.exists() {
        let t = Csv::read(&skew)?;
        let mut c = Chart::new("W2 of the first marginal", "dimension d", "W2");
        c.lines = grouped(&t, &["kernel", "N"], "d", "w2_mean")?;
        charts.push((dir.join("skew_w2.svg"), c));
    }
    let samples = dir.join("skew_samples.csv");
    if samples.exists() {
        for (name, c) in skew_sample_chart(&samples)? {
            charts.push((dir.join(name), c));
        }
    }
    let sweep = dir.join("bandwidth_w2.csv");
    if sweep.exists() {
        let t = Csv::read(&sweep)?;
        let mut c = Chart::new("W2 of the first marginal", "bandwidth", "W2");
        c.log_x = true;
        c.lines = grouped(&t, &["N"], "bandwidth", "w2_mean")?;
        charts.push((dir.join("bandwidth_w2.svg"), c));
    }
    let lorenz = dir.join("lorenz_summary.csv");
    if lorenz.exists() {
        let t = Csv::read(&lorenz)?;
        let mut c = Chart::new("mean RMSE", "ensemble size", "RMSE");
        c.lines = grouped(&t, &["method"], "ensemble_size", "rmse_mean")?;
        charts.push((dir.join("lorenz_rmse.svg"), c));
    }
    if charts.is_empty() {
        bail!("no known tables in {}", dir.display());
    }
    charts
        .into_iter()
        .map(|(path, c)| {
            fs::write(&path, c.svg()).with_context(|| format!("writing {}", path.display()))?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_integrates_to_one() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin()).collect();
        let area: f64 = histogram(&v, 25).iter().map(|(l, r, h)| (r - l) * h).sum();
        assert!((area - 1.0).abs() < 1e-12);
    }

    #[test]
    fn svg_contains_each_series() {
        let mut c = Chart::new("t", "x", "y");
        c.lines.push(Series {
            label: "a".into(),
            points: vec![(1.0, 2.0), (2.0, 3.0)],
        });
        c.lines.push(Series {
            label: "b".into(),
            points: vec![(1.0, 1.0), (2.0, f64::NAN)],
        });
        let s = c.svg();
        assert_eq!(s.matches("<polyline").count(), 2);
        assert!(s.ends_with("</svg>\n"));
    }
}
