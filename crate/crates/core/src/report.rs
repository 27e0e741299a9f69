//! Plain-text tables, CSV blocks and SVG heatmaps for command output.

use std::fmt::Write;

use crate::lrt::{OverallTestResult, PairwiseReport};
use crate::simplex::{CorrelationMatrix, ProportionTable};

/// Likelihood ratios print with three decimals.
pub fn fmt_lr(x: f64) -> String {
    format!("{x:.3}")
}

/// p-values below 1e-3 print in scientific notation.
pub fn fmt_p(p: f64) -> String {
    if p < 1e-3 {
        format!("{p:.3e}")
    } else {
        format!("{p:.4}")
    }
}

fn pad(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

pub fn overall_table(r: &OverallTestResult) -> String {
    let mut rows = vec![vec!["Split".into(), "LR".into(), "df".into(), "p-value".into()]];
    for l in &r.layers {
        rows.push(vec![
            l.label.clone(),
            fmt_lr(l.lambda),
            l.df.to_string(),
            fmt_p(crate::lrt::chi_square_upper_tail(l.lambda, l.df)),
        ]);
    }
    rows.push(vec!["Total".into(), fmt_lr(r.lambda), r.v.to_string(), fmt_p(r.p_value)]);
    format!("Groups: {}\n{}", r.groups.join(", "), pad(&rows))
}

pub fn overall_csv(r: &OverallTestResult) -> String {
    let mut out = String::from("split,lr,df,p_value\n");
    for l in &r.layers {
        let p = crate::lrt::chi_square_upper_tail(l.lambda, l.df);
        let _ = writeln!(out, "{},{:.6},{},{:.6e}", csv_field(&l.label), l.lambda, l.df, p);
    }
    let _ = writeln!(out, "Total,{:.6},{},{:.6e}", r.lambda, r.v, r.p_value);
    out
}

/// One column block (LR, df, p) per pair, one row per split.
pub fn pairwise_table(reports: &[PairwiseReport]) -> String {
    if reports.is_empty() {
        return String::new();
    }
    let mut header = vec![String::new()];
    let mut sub = vec!["Split".to_string()];
    for r in reports {
        header.extend([r.title(), String::new(), String::new()]);
        sub.extend(["LR".into(), "df".into(), "p-value".into()]);
    }
    let mut rows = vec![header, sub];
    for (i, l) in reports[0].layers.iter().enumerate() {
        let mut row = vec![l.label.clone()];
        for r in reports {
            let l = &r.layers[i];
            row.extend([
                fmt_lr(l.lambda),
                l.df.to_string(),
                fmt_p(crate::lrt::chi_square_upper_tail(l.lambda, l.df)),
            ]);
        }
        rows.push(row);
    }
    let mut total = vec!["Total".to_string()];
    for r in reports {
        total.extend([fmt_lr(r.lambda), r.v.to_string(), fmt_p(r.p_value)]);
    }
    rows.push(total);
    if reports.iter().any(|r| r.p_bonferroni.is_some()) {
        let mut adj = vec!["Bonferroni p".to_string()];
        for r in reports {
            adj.extend([String::new(), String::new(), r.p_bonferroni.map_or(String::new(), fmt_p)]);
        }
        rows.push(adj);
    }
    pad(&rows)
}

pub fn pairwise_csv(reports: &[PairwiseReport]) -> String {
    let mut out = String::from("pair,split,lr,df,p_value,p_bonferroni\n");
    for r in reports {
        let pair = csv_field(&r.title());
        for l in &r.layers {
            let p = crate::lrt::chi_square_upper_tail(l.lambda, l.df);
            let _ = writeln!(out, "{pair},{},{:.6},{},{:.6e},", csv_field(&l.label), l.lambda, l.df, p);
        }
        let adj = r.p_bonferroni.map_or(String::new(), |p| format!("{p:.6e}"));
        let _ = writeln!(out, "{pair},Total,{:.6},{},{:.6e},{adj}", r.lambda, r.v, r.p_value);
    }
    out
}

pub fn proportion_table(t: &ProportionTable) -> String {
    let mut header = vec!["Group".to_string()];
    header.extend(t.components.iter().cloned());
    header.push("Total".into());
    let mut rows = vec![header];
    for (g, (vals, total)) in t.groups.iter().zip(t.values.iter().zip(&t.totals)) {
        let mut row = vec![g.clone()];
        row.extend(vals.iter().map(|v| format!("{v:.3}")));
        row.push(total.to_string());
        rows.push(row);
    }
    pad(&rows)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Correlation matrices as CSV blocks, each headed by `# group: <name>`.
/// Undefined entries are left empty.
pub fn heatmap_csv(panels: &[(String, CorrelationMatrix)]) -> String {
    let mut out = String::new();
    for (name, m) in panels {
        let _ = writeln!(out, "# group: {name} (n = {})", m.n);
        let _ = writeln!(out, ",{}", m.components.iter().map(|c| csv_field(c)).collect::<Vec<_>>().join(","));
        for (i, c) in m.components.iter().enumerate() {
            let cells: Vec<String> = (0..m.components.len())
                .map(|j| m.get(i, j).map_or(String::new(), |v| format!("{v:.6}")))
                .collect();
            let _ = writeln!(out, "{},{}", csv_field(c), cells.join(","));
        }
    }
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

// Blue for -1, white for 0, red for +1.
fn diverging(r: f64) -> String {
    let r = r.clamp(-1.0, 1.0);
    let (end, t) = if r < 0.0 {
        ((33.0, 102.0, 172.0), -r)
    } else {
        ((178.0, 24.0, 43.0), r)
    };
    let mix = |e: f64| (255.0 + (e - 255.0) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(end.0), mix(end.1), mix(end.2))
}

const CELL: usize = 40;
const NEUTRAL: &str = "#bdbdbd";

/// Self-contained SVG with one heatmap per matrix, side by side, and a
/// color legend. `metadata` is embedded verbatim (escaped) in the file.
pub fn heatmap_svg(panels: &[(String, CorrelationMatrix)], metadata: &str) -> String {
    let k = panels.first().map_or(0, |(_, m)| m.components.len());
    let label_w = 80;
    let panel_w = label_w + k * CELL + 30;
    let top = 110;
    let width = panel_w * panels.len().max(1) + 90;
    let height = top + k * CELL + 40;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, "<metadata>{}</metadata>", xml_escape(metadata));
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    for (p, (name, m)) in panels.iter().enumerate() {
        let x0 = p * panel_w + label_w;
        let undefined = m.undefined_components();
        let mut title = format!("{name} (n = {})", m.n);
        if !undefined.is_empty() {
            title.push_str(&format!(" undefined: {}", undefined.join(", ")));
        }
        let _ = writeln!(s, r#"<text x="{x0}" y="16" font-size="13">{}</text>"#, xml_escape(&title));
        for (j, c) in m.components.iter().enumerate() {
            let cx = x0 + j * CELL + CELL / 2;
            let _ = writeln!(
                s,
                r#"<text x="{cx}" y="{}" transform="rotate(-60 {cx} {})" text-anchor="start">{}</text>"#,
                top - 6,
                top - 6,
                xml_escape(c)
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end" dominant-baseline="middle">{}</text>"#,
                x0 - 6,
                top + j * CELL + CELL / 2,
                xml_escape(c)
            );
        }
        for i in 0..k {
            for j in 0..k {
                let (x, y) = (x0 + j * CELL, top + i * CELL);
                let (fill, text) = match m.get(i, j) {
                    Some(v) => (diverging(v), format!("{v:.2}")),
                    None => (NEUTRAL.to_string(), "NA".to_string()),
                };
                let _ = writeln!(
                    s,
                    r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{fill}" stroke="#ffffff"/>"##
                );
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" text-anchor="middle" dominant-baseline="middle" font-size="10">{text}</text>"#,
                    x + CELL / 2,
                    y + CELL / 2
                );
            }
        }
    }
    // legend
    let lx = panel_w * panels.len().max(1) + 20;
    let steps = 20;
    let h = (k * CELL).max(CELL) / steps;
    for t in 0..steps {
        let r = 1.0 - 2.0 * (t as f64 + 0.5) / steps as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{}" width="16" height="{h}" fill="{}"/>"#,
            top + t * h,
            diverging(r)
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}">+1</text>"#, lx + 20, top + 8);
    let _ = writeln!(s, r#"<text x="{}" y="{}">0</text>"#, lx + 20, top + steps * h / 2 + 4);
    let _ = writeln!(s, r#"<text x="{}" y="{}">-1</text>"#, lx + 20, top + steps * h);
    let _ = writeln!(
        s,
        r##"<rect x="{lx}" y="{}" width="16" height="12" fill="{NEUTRAL}"/><text x="{}" y="{}">NA</text>"##,
        top + steps * h + 10,
        lx + 20,
        top + steps * h + 20
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_formats() {
        assert_eq!(fmt_lr(51.2149), "51.215");
        assert_eq!(fmt_p(0.25), "0.2500");
        assert_eq!(fmt_p(2.5e-5), "2.500e-5");
    }

    #[test]
    fn colors_diverge() {
        assert_eq!(diverging(0.0), "#ffffff");
        assert_eq!(diverging(1.0), "#b2182b");
        assert_eq!(diverging(-1.0), "#2166ac");
    }

    fn matrix() -> CorrelationMatrix {
        CorrelationMatrix {
            components: vec!["a".into(), "b".into()],
            n: 5,
            values: vec![vec![Some(1.0), None], vec![None, None]],
        }
    }

    #[test]
    fn undefined_cells_are_neutral() {
        let svg = heatmap_svg(&[("pooled".into(), matrix())], "{\"x\":1}");
        assert!(svg.contains(NEUTRAL));
        assert!(svg.contains("undefined: b"));
        assert!(svg.contains("&quot;x&quot;"));
        let csv = heatmap_csv(&[("pooled".into(), matrix())]);
        assert!(csv.contains("a,1.000000,\n"));
    }
}
