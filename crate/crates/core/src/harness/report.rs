use std::fmt::Write as _;

use super::coverage::Coverage;
use super::pipeline::CoverageReport;

pub const PLANNER_REF: &str = "planner-ref";

fn index<T: PartialEq>(v: &mut Vec<T>, x: T) -> usize {
    match v.iter().position(|y| *y == x) {
        Some(i) => i,
        None => {
            v.push(x);
            v.len() - 1
        }
    }
}

/// Rows are (domain, split) pairs, columns the planner reference (when any
/// report has one) followed by each configuration label.
struct Grid {
    rows: Vec<(String, String)>,
    columns: Vec<String>,
    cells: Vec<(usize, usize, Coverage, usize)>,
}

fn grid(reports: &[CoverageReport]) -> Grid {
    let mut rows: Vec<(String, String)> = Vec::new();
    let mut columns: Vec<String> = Vec::new();
    let mut cells = Vec::new();
    if reports.iter().any(|r| !r.planner_ref.is_empty()) {
        columns.push(PLANNER_REF.to_string());
    }
    for r in reports {
        let col = index(&mut columns, r.label.clone());
        for s in &r.splits {
            let row = index(&mut rows, (r.domain.clone(), s.split.clone()));
            cells.push((row, col, s.coverage, s.instances));
        }
        for s in &r.planner_ref {
            let row = index(&mut rows, (r.domain.clone(), s.split.clone()));
            if !cells.iter().any(|&(rr, c, _, _)| rr == row && c == 0) {
                cells.push((row, 0, s.coverage, s.instances));
            }
        }
    }
    Grid { rows, columns, cells }
}

/// Plain-text coverage table, one row per domain and split.
pub fn render_table(reports: &[CoverageReport]) -> String {
    let g = grid(reports);
    let mut table: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["domain".to_string(), "split".to_string()];
    header.extend(g.columns.iter().cloned());
    table.push(header);
    for (i, (domain, split)) in g.rows.iter().enumerate() {
        let mut line = vec![domain.clone(), split.clone()];
        for c in 0..g.columns.len() {
            let cell = g.cells.iter().find(|&&(r, cc, _, _)| r == i && cc == c);
            line.push(cell.map_or("-".to_string(), |(_, _, cov, _)| cov.to_string()));
        }
        table.push(line);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|c| table.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &table {
        let cells: Vec<String> =
            row.iter().zip(&widths).map(|(s, &w)| format!("{s}{}", " ".repeat(w - s.chars().count()))).collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

/// `domain,split,config,mean,std,instances`; an undefined rate leaves mean
/// and std empty.
pub fn render_csv(reports: &[CoverageReport]) -> String {
    let g = grid(reports);
    let mut out = String::from("domain,split,config,mean,std,instances\n");
    let mut cells = g.cells.clone();
    cells.sort_by_key(|&(r, c, _, _)| (r, c));
    for (r, c, cov, n) in cells {
        let (mean, std) = match cov {
            Coverage::Rate { mean, std } => (format!("{mean:.4}"), format!("{std:.4}")),
            Coverage::NoInstances => (String::new(), String::new()),
        };
        let (domain, split) = &g.rows[r];
        let _ = writeln!(out, "{domain},{split},{},{mean},{std},{n}", g.columns[c]);
    }
    out
}

const PALETTE: [&str; 9] =
    ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c", "#ccb974"];

/// Grouped bar chart of mean coverage for one split: one group per domain,
/// one bar per configuration, with a standard deviation whisker.
pub fn render_svg(reports: &[CoverageReport], split: &str) -> String {
    let g = grid(reports);
    let domains: Vec<&String> = {
        let mut d: Vec<&String> = Vec::new();
        for (dom, s) in &g.rows {
            if s == split && !d.contains(&dom) {
                d.push(dom);
            }
        }
        d
    };
    let bar = 18.0;
    let group_w = bar * g.columns.len() as f64 + 30.0;
    let (left, top, plot_h) = (50.0, 30.0, 200.0);
    let width = left + group_w * domains.len().max(1) as f64 + 20.0;
    let legend_h = 16.0 * g.columns.len() as f64;
    let height = top + plot_h + 40.0 + legend_h;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<text x="{left}" y="18" font-size="13">coverage, {split}</text>"#);
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let y = top + plot_h * (1.0 - v);
        let _ = writeln!(
            out,
            r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
            width - 20.0,
            left - 4.0,
            y + 4.0
        );
    }
    for (gi, dom) in domains.iter().enumerate() {
        let x0 = left + group_w * gi as f64 + 15.0;
        let row = g.rows.iter().position(|(d, s)| d == *dom && s == split).unwrap();
        for (c, _) in g.columns.iter().enumerate() {
            let Some(&(_, _, Coverage::Rate { mean, std }, _)) =
                g.cells.iter().find(|&&(r, cc, _, _)| r == row && cc == c)
            else {
                continue;
            };
            let x = x0 + bar * c as f64;
            let h = plot_h * mean;
            let _ = writeln!(
                out,
                r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="{}"/>"#,
                top + plot_h - h,
                bar - 2.0,
                PALETTE[c % PALETTE.len()]
            );
            if std > 0.0 {
                let cx = x + (bar - 2.0) / 2.0;
                let y1 = top + plot_h * (1.0 - (mean + std).min(1.0));
                let y2 = top + plot_h * (1.0 - (mean - std).max(0.0));
                let _ = writeln!(out, r#"<line x1="{cx:.1}" y1="{y1:.1}" x2="{cx:.1}" y2="{y2:.1}" stroke="black"/>"#);
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{dom}</text>"#,
            x0 + bar * g.columns.len() as f64 / 2.0,
            top + plot_h + 16.0
        );
    }
    for (c, name) in g.columns.iter().enumerate() {
        let y = top + plot_h + 36.0 + 16.0 * c as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{left}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{:.1}">{name}</text>"#,
            y - 9.0,
            PALETTE[c % PALETTE.len()],
            left + 14.0,
            y
        );
    }
    out.push_str("</svg>\n");
    out
}
