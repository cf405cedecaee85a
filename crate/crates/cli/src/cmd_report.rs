use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;

use crate::cmd_probe::{OOD_FILE, PROBE_FILE};
use crate::cmd_train::HISTORY_FILE;
use crate::config::{write_file, CliResult};
use crate::svg;

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories holding probe.csv, ood.csv or history.csv.
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

type Table = Vec<BTreeMap<String, String>>;

/// Reads a headed CSV without quoting, or `None` when the file is absent.
fn read_csv(path: &Path) -> Option<Table> {
    let text = std::fs::read_to_string(path).ok()?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next()?.split(',').collect();
    Some(
        lines
            .filter(|l| !l.is_empty())
            .map(|l| header.iter().map(|h| h.to_string()).zip(l.split(',').map(str::to_string)).collect())
            .collect(),
    )
}

fn run_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string())
}

fn field<'a>(row: &'a BTreeMap<String, String>, k: &str) -> &'a str {
    row.get(k).map(String::as_str).unwrap_or("")
}

fn fmt_num(s: &str) -> String {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => format!("{v:.3}"),
        Ok(_) => "NaN".into(),
        Err(_) => s.into(),
    }
}

/// Markdown table with the given row keys, column keys and cells.
fn md_table(corner: &str, rows: &[String], cols: &[String], cell: impl Fn(&str, &str) -> Option<String>) -> String {
    let mut s = format!("| {corner} |");
    for c in cols {
        let _ = write!(s, " {c} |");
    }
    s.push_str("\n|---|");
    s.push_str(&"---|".repeat(cols.len()));
    s.push('\n');
    for r in rows {
        let _ = write!(s, "| {r} |");
        for c in cols {
            let _ = write!(s, " {} |", cell(r, c).unwrap_or_else(|| "-".into()));
        }
        s.push('\n');
    }
    s
}

fn push_unique(v: &mut Vec<String>, x: &str) {
    if !v.iter().any(|y| y == x) {
        v.push(x.to_string());
    }
}

fn probe_section(md: &mut String, probes: &[(String, Table)]) {
    let mut zoos: Vec<String> = Vec::new();
    for (_, t) in probes {
        for r in t {
            push_unique(&mut zoos, field(r, "zoo"));
        }
    }
    md.push_str("## Probes\n\n");
    for zoo in &zoos {
        let mut tasks = Vec::new();
        let mut cols = Vec::new();
        let mut cells = BTreeMap::new();
        for (run, t) in probes {
            for r in t.iter().filter(|r| field(r, "zoo") == zoo) {
                let col = format!("{run}: {}", field(r, "source"));
                push_unique(&mut tasks, field(r, "task"));
                push_unique(&mut cols, &col);
                cells.insert((field(r, "task").to_string(), col), fmt_num(field(r, "value")));
            }
        }
        let _ = writeln!(md, "### {zoo}\n");
        md.push_str(&md_table("task", &tasks, &cols, |r, c| cells.get(&(r.to_string(), c.to_string())).cloned()));
        md.push('\n');
    }
}

fn ood_section(md: &mut String, oods: &[(String, Table)]) {
    md.push_str("## Transfer (Kendall tau)\n\n");
    let mut tasks = Vec::new();
    for (_, t) in oods {
        for r in t {
            push_unique(&mut tasks, field(r, "task"));
        }
    }
    for task in &tasks {
        let mut rows = Vec::new();
        let mut cols = Vec::new();
        let mut cells = BTreeMap::new();
        for (_, t) in oods {
            for r in t.iter().filter(|r| field(r, "task") == task) {
                push_unique(&mut rows, field(r, "source"));
                push_unique(&mut cols, field(r, "target"));
                cells.insert((field(r, "source").to_string(), field(r, "target").to_string()), fmt_num(field(r, "tau")));
            }
        }
        let _ = writeln!(md, "### {task}\n");
        md.push_str(&md_table("source \\ target", &rows, &cols, |r, c| cells.get(&(r.to_string(), c.to_string())).cloned()));
        md.push('\n');
    }
}

pub fn render(runs: &[PathBuf]) -> (String, Option<String>) {
    let mut md = String::from("# Report\n\n");
    if runs.is_empty() {
        md.push_str("No run directories were given, so there is nothing to report.\n");
        return (md, None);
    }
    let mut probes = Vec::new();
    let mut oods = Vec::new();
    let mut histories = Vec::new();
    for r in runs {
        let name = run_name(r);
        if let Some(t) = read_csv(&r.join(PROBE_FILE)) {
            probes.push((name.clone(), t));
        }
        if let Some(t) = read_csv(&r.join(OOD_FILE)) {
            oods.push((name.clone(), t));
        }
        if let Some(t) = read_csv(&r.join(HISTORY_FILE)) {
            histories.push((name, t));
        }
    }
    md.push_str("Runs:\n\n");
    for r in runs {
        let _ = writeln!(md, "- `{}`", r.display());
    }
    md.push('\n');
    if !probes.is_empty() {
        probe_section(&mut md, &probes);
    }
    if !oods.is_empty() {
        ood_section(&mut md, &oods);
    }
    let mut chart = None;
    if !histories.is_empty() {
        md.push_str("## Training\n\n| run | epochs | best val R² | final loss |\n|---|---|---|---|\n");
        let mut series = Vec::new();
        for (name, t) in &histories {
            let pts: Vec<(f64, f64)> = t
                .iter()
                .filter_map(|r| Some((field(r, "epoch").parse().ok()?, field(r, "val_r2").parse().ok()?)))
                .collect();
            let best = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            let best = if best.is_finite() { format!("{best:.4}") } else { "-".into() };
            let last = t.last().map(|r| fmt_num(field(r, "loss"))).unwrap_or_else(|| "-".into());
            let _ = writeln!(md, "| {name} | {} | {best} | {last} |", t.len());
            series.push((name.clone(), pts));
        }
        md.push_str("\nValidation R² curves: `curves.svg`.\n");
        chart = Some(svg::line_chart("Validation reconstruction R² per epoch", &series));
    }
    if probes.is_empty() && oods.is_empty() && histories.is_empty() {
        md.push_str("None of the runs contain probe, transfer or training CSVs.\n");
    }
    (md, chart)
}

pub fn run(a: ReportArgs) -> CliResult {
    let (md, chart) = render(&a.runs);
    write_file(&a.out.join("report.md"), &md)?;
    if let Some(c) = chart {
        write_file(&a.out.join("curves.svg"), c)?;
    }
    print!("{md}");
    Ok(())
}
