use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 56.0;
const TICKS: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    #[error("column {0:?} not found")]
    MissingColumn(String),
    #[error("no finite data points to plot")]
    Empty,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Which columns to draw and where to put the figure. When `y_err` is
/// `None`, a `{y}_err` column is used for error bars if present.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotSpec {
    pub x: String,
    pub y: String,
    pub y_err: Option<String>,
    pub title: String,
    pub output: PathBuf,
}

/// Reads `x`, `y` and optional error columns from a CSV and writes an SVG
/// scatter plot. Rows with empty or non-finite cells are skipped. Nothing
/// is written on error.
pub fn export_svg(csv_path: &Path, spec: &PlotSpec) -> Result<(), PlotError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| PlotError::Io { path, source }
    };
    let text = std::fs::read_to_string(csv_path).map_err(io(csv_path))?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let xi = find(&spec.x).ok_or_else(|| PlotError::MissingColumn(spec.x.clone()))?;
    let yi = find(&spec.y).ok_or_else(|| PlotError::MissingColumn(spec.y.clone()))?;
    let ei = match &spec.y_err {
        Some(e) => Some(find(e).ok_or_else(|| PlotError::MissingColumn(e.clone()))?),
        None => find(&format!("{}_err", spec.y)),
    };
    let parse = |s: Option<&str>| {
        s.and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|v| v.is_finite())
    };
    let (mut xs, mut ys, mut es) = (Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec?;
        let (Some(x), Some(y)) = (parse(rec.get(xi)), parse(rec.get(yi))) else {
            continue;
        };
        xs.push(x);
        ys.push(y);
        es.push(ei.and_then(|i| parse(rec.get(i))).unwrap_or(0.0).abs());
    }
    let errors = ei.map(|_| es.as_slice());
    let svg = render_svg(&xs, &ys, errors, spec)?;
    std::fs::write(&spec.output, svg).map_err(io(&spec.output))
}

/// Renders a scatter plot with optional symmetric error bars.
pub fn render_svg(
    xs: &[f64],
    ys: &[f64],
    errors: Option<&[f64]>,
    spec: &PlotSpec,
) -> Result<String, PlotError> {
    let n = xs.len().min(ys.len());
    if n == 0 {
        return Err(PlotError::Empty);
    }
    let err = |i: usize| errors.and_then(|e| e.get(i)).copied().unwrap_or(0.0);
    let (mut x_lo, mut x_hi) = bounds(xs[..n].iter().copied());
    let (mut y_lo, mut y_hi) = bounds((0..n).flat_map(|i| [ys[i] - err(i), ys[i] + err(i)]));
    pad(&mut x_lo, &mut x_hi);
    pad(&mut y_lo, &mut y_hi);

    let pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let ph = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let px = |x: f64| MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * pw;
    let py = |y: f64| MARGIN_TOP + (y_hi - y) / (y_hi - y_lo) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(&spec.title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for k in 0..=TICKS {
        let t = k as f64 / TICKS as f64;
        let (xv, yv) = (x_lo + t * (x_hi - x_lo), y_lo + t * (y_hi - y_lo));
        let (x, y) = (px(xv), py(yv));
        let bottom = MARGIN_TOP + ph;
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{bottom}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
            bottom + 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            bottom + 18.0,
            tick_label(xv)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{MARGIN_LEFT}" y2="{y:.2}" stroke="black"/>"#,
            MARGIN_LEFT - 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 8.0,
            y + 4.0,
            tick_label(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + pw / 2.0,
        HEIGHT - 12.0,
        escape(&spec.x)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0:.2}" text-anchor="middle" transform="rotate(-90 16 {0:.2})">{1}</text>"#,
        MARGIN_TOP + ph / 2.0,
        escape(&spec.y)
    );
    for i in 0..n {
        let (x, y) = (px(xs[i]), py(ys[i]));
        let e = err(i);
        if e > 0.0 {
            let (top, bot) = (py(ys[i] + e), py(ys[i] - e));
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{top:.2}" x2="{x:.2}" y2="{bot:.2}" stroke="steelblue"/>"#
            );
            for yy in [top, bot] {
                let _ = writeln!(
                    s,
                    r#"<line x1="{:.2}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="steelblue"/>"#,
                    x - 3.0,
                    x + 3.0
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="3.5" fill="steelblue"/>"#
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

fn pad(lo: &mut f64, hi: &mut f64) {
    let span = *hi - *lo;
    let margin = if span > 0.0 {
        0.05 * span
    } else {
        0.5 * lo.abs().max(1.0)
    };
    *lo -= margin;
    *hi += margin;
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{:.4}", v)
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(dir: &Path) -> PlotSpec {
        PlotSpec {
            x: "x".into(),
            y: "y".into(),
            title: "t <1>".into(),
            output: dir.join("p.svg"),
            ..Default::default()
        }
    }

    #[test]
    fn draws_points_and_error_bars() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("d.csv");
        std::fs::write(&csv, "x,y,y_err\n1,2,0.1\n2,3,0.2\n3,,0.1\n").unwrap();
        export_svg(&csv, &spec(dir.path())).unwrap();
        let svg = std::fs::read_to_string(dir.path().join("p.svg")).unwrap();
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains("stroke=\"steelblue\""));
        assert!(svg.contains("t &lt;1&gt;"));
    }

    #[test]
    fn missing_column_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("d.csv");
        std::fs::write(&csv, "x,z\n1,2\n").unwrap();
        let e = export_svg(&csv, &spec(dir.path())).unwrap_err();
        assert!(matches!(e, PlotError::MissingColumn(ref c) if c == "y"));
        assert!(!dir.path().join("p.svg").exists());
    }

    #[test]
    fn empty_data_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("d.csv");
        std::fs::write(&csv, "x,y\n").unwrap();
        assert!(matches!(
            export_svg(&csv, &spec(dir.path())),
            Err(PlotError::Empty)
        ));
        assert!(!dir.path().join("p.svg").exists());
    }

    #[test]
    fn single_point_has_nonzero_range() {
        let svg = render_svg(&[1.0], &[1.0], None, &PlotSpec::default()).unwrap();
        assert!(!svg.contains("NaN"));
    }
}
