use super::{ConventionReport, EvalReport, SabotageReport};
use std::fmt::Write as _;
use std::io::Write;

/// Mean returns as a bare `M × M` grid.
pub fn matrix_csv<W: Write>(r: &EvalReport, out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for row in &r.xp {
        w.write_record(row.iter().map(|s| s.mean.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Long-form matrix: one row per cell with its count and SEM.
pub fn matrix_long_csv<W: Write>(r: &EvalReport, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row", "col", "kind", "mean", "sem", "n"])?;
    for (i, row) in r.xp.iter().enumerate() {
        for (j, s) in row.iter().enumerate() {
            let kind = if i == j { "sp" } else { "xp" };
            w.write_record([i.to_string(), j.to_string(), kind.into(), s.mean.to_string(), s.sem.to_string(), s.n.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn sabotage_csv<W: Write>(r: &SabotageReport, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["agent", "fraction", "sem", "n"])?;
    for (i, s) in r.per_agent.iter().enumerate() {
        match s {
            Some(s) => w.write_record([i.to_string(), s.mean.to_string(), s.sem.to_string(), s.n.to_string()])?,
            None => w.write_record([i.to_string(), String::new(), String::new(), "0".into()])?,
        }
    }
    let avg = r.average.map(|a| a.to_string()).unwrap_or_default();
    w.write_record(["average".to_string(), avg, String::new(), String::new()])?;
    w.flush()?;
    Ok(())
}

/// Landmark histogram, one row per agent in training order and one column
/// per landmark.
pub fn conventions_csv<W: Write>(r: &ConventionReport, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = r.histograms.first().map_or(4, |h| h.len());
    w.write_record((0..n).map(|i| format!("l{i}")))?;
    for h in &r.histograms {
        w.write_record(h.iter().map(|c| c.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn shade(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(247.0, 8.0), lerp(251.0, 48.0), lerp(255.0, 107.0))
}

/// Heatmap of the mean returns, darker is higher.
pub fn matrix_svg(r: &EvalReport, title: &str) -> String {
    let m = r.xp.len();
    let (cell, pad) = (48.0, 40.0);
    let side = pad + cell * m as f64 + 10.0;
    let vals = r.xp.iter().flatten().map(|s| s.mean);
    let lo = vals.clone().fold(f64::INFINITY, f64::min);
    let hi = vals.fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{side}" height="{h}" font-family="sans-serif" font-size="11">"#,
        h = side + 20.0
    );
    let _ = writeln!(s, r#"<text x="{pad}" y="14">{}</text>"#, escape(title));
    for i in 0..m {
        let y = pad + cell * i as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{i}</text>"#, pad - 6.0, y + cell / 2.0 + 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{i}</text>"#, y + cell / 2.0, pad - 6.0);
        for j in 0..m {
            let x = pad + cell * j as f64;
            let v = r.xp[i][j].mean;
            let t = (v - lo) / span;
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{}" stroke="white"/>"#,
                shade(t)
            );
            let ink = if t > 0.5 { "white" } else { "black" };
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}">{v:.1}</text>"#,
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

const PALETTE: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];

/// Line plot of cumulative real steps against agent index, one series per
/// run.
pub fn scaling_svg(series: &[(String, Vec<(usize, usize)>)]) -> String {
    let (w, h, pad) = (520.0, 340.0, 60.0);
    let max_x = series.iter().flat_map(|s| s.1.iter().map(|p| p.0)).max().unwrap_or(0).max(1) as f64;
    let max_y = series.iter().flat_map(|s| s.1.iter().map(|p| p.1)).max().unwrap_or(0).max(1) as f64;
    let px = |x: usize| pad + (w - 2.0 * pad) * x as f64 / max_x;
    let py = |y: usize| h - pad - (h - 2.0 * pad) * y as f64 / max_y;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(
        s,
        r#"<path d="M{pad} {} V{} H{}" fill="none" stroke="black"/>"#,
        pad / 2.0,
        h - pad,
        w - pad / 2.0
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">agent index</text>"#, w / 2.0, h - 20.0);
    let _ = writeln!(s, r#"<text x="{pad}" y="{}">cumulative real steps (max {max_y})</text>"#, pad / 2.0 - 8.0);
    for (k, (name, pts)) in series.iter().enumerate() {
        let c = PALETTE[k % PALETTE.len()];
        let d: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#, d.join(" "));
        let _ = writeln!(s, r#"<text x="{}" y="{}" fill="{c}">{}</text>"#, w - pad - 100.0, pad + 14.0 * k as f64, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Stat;

    fn report(m: usize) -> EvalReport {
        let xp: Vec<Vec<Stat>> = (0..m)
            .map(|i| (0..m).map(|j| Stat { mean: (i + j) as f64, sem: 0.5, n: 4 }).collect())
            .collect();
        EvalReport {
            episodes_per_pair: 2,
            sp: (0..m).map(|i| xp[i][i]).collect(),
            xp,
        }
    }

    #[test]
    fn matrix_csv_has_one_row_per_cell() {
        let mut buf = Vec::new();
        matrix_long_csv(&report(3), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 10);
        assert!(text.lines().nth(1).unwrap().starts_with("0,0,sp,0,0.5,4"));
    }

    #[test]
    fn wide_matrix_is_square() {
        let mut buf = Vec::new();
        matrix_csv(&report(1), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "0\n");
    }

    #[test]
    fn svg_has_a_rect_per_cell() {
        let s = matrix_svg(&report(2), "a<b");
        assert_eq!(s.matches("<rect").count(), 4);
        assert!(s.contains("a&lt;b"));
    }
}
