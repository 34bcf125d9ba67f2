//! Static report from run CSVs: one markdown index with summary tables plus
//! SVG plots (training curves, n-sweep curve, annotation-quality bars).
//! Output depends only on file names and contents, so regeneration from the
//! same inputs is byte-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::grpo::GRPO_METRICS_HEADER;
use crate::ppo::METRICS_HEADER;
use crate::verify::SWEEP_N;

use super::{BenchReport, ABLATION_HEADER, SWEEP_HEADER};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{file}: unrecognized schema, column {index} is '{found}' (expected '{expected}' for a {kind} file)")]
    Schema { file: String, index: usize, found: String, expected: String, kind: &'static str },
    #[error("{file}:{line}: column '{column}' has invalid value '{value}'")]
    Value { file: String, line: usize, column: String, value: String },
    #[error("{file}:{line}: expected {expected} fields, found {found}")]
    Arity { file: String, line: usize, expected: usize, found: usize },
    #[error("io on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsvKind {
    Ppo,
    Grpo,
    Sweep,
    Ablation,
    Episodes,
}

impl CsvKind {
    const ALL: [CsvKind; 5] = [CsvKind::Ppo, CsvKind::Grpo, CsvKind::Sweep, CsvKind::Ablation, CsvKind::Episodes];

    pub fn header(self) -> &'static [&'static str] {
        match self {
            CsvKind::Ppo => &METRICS_HEADER,
            CsvKind::Grpo => &GRPO_METRICS_HEADER,
            CsvKind::Sweep => &SWEEP_HEADER,
            CsvKind::Ablation => &ABLATION_HEADER,
            CsvKind::Episodes => &BenchReport::EPISODE_HEADER,
        }
    }

    fn name(self) -> &'static str {
        match self {
            CsvKind::Ppo => "ppo-metrics",
            CsvKind::Grpo => "grpo-metrics",
            CsvKind::Sweep => "n-sweep",
            CsvKind::Ablation => "annotation-ablation",
            CsvKind::Episodes => "benchmark-episodes",
        }
    }

    /// Kind whose header matches `cols`, or the schema error against the
    /// closest known header.
    pub fn detect(file: &str, cols: &[String]) -> Result<Self, ReportError> {
        let prefix = |k: CsvKind| k.header().iter().zip(cols).take_while(|(a, b)| **a == b.as_str()).count();
        if let Some(k) = Self::ALL.into_iter().find(|k| prefix(*k) == k.header().len() && cols.len() == k.header().len()) {
            return Ok(k);
        }
        let best = Self::ALL.into_iter().max_by_key(|k| (prefix(*k), std::cmp::Reverse(k.header().len()))).expect("non-empty");
        let i = prefix(best);
        Err(ReportError::Schema {
            file: file.to_string(),
            index: i,
            found: cols.get(i).cloned().unwrap_or_else(|| "<missing>".into()),
            expected: best.header().get(i).map(|s| s.to_string()).unwrap_or_else(|| "<end of header>".into()),
            kind: best.name(),
        })
    }
}

/// Minimal CSV field splitter: commas, with double-quoted fields that may
/// contain commas and doubled quotes.
fn split_fields(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', _) => quoted = !quoted,
            (',', false) => out.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    out.push(cur);
    out
}

struct Table {
    file: String,
    kind: CsvKind,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn col(&self, name: &str) -> usize {
        self.kind.header().iter().position(|c| *c == name).expect("known column")
    }

    /// Numeric column; empty cells are allowed only where `optional`.
    fn numbers(&self, name: &str, optional: bool) -> Result<Vec<Option<f64>>, ReportError> {
        let c = self.col(name);
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let v = r[c].trim();
                if v.is_empty() && optional {
                    return Ok(None);
                }
                v.parse::<f64>().ok().filter(|x| x.is_finite()).map(Some).ok_or_else(|| ReportError::Value {
                    file: self.file.clone(),
                    line: i + 2,
                    column: name.to_string(),
                    value: v.to_string(),
                })
            })
            .collect()
    }

    fn required(&self, name: &str) -> Result<Vec<f64>, ReportError> {
        Ok(self.numbers(name, false)?.into_iter().map(|x| x.expect("required")).collect())
    }

    fn text(&self, name: &str) -> Vec<&str> {
        let c = self.col(name);
        self.rows.iter().map(|r| r[c].as_str()).collect()
    }

    /// Type-checks every column up front so errors name the column.
    fn validate(&self) -> Result<(), ReportError> {
        let optional = |c: &str| self.kind == CsvKind::Grpo && (c == "type_match" || c == "exact_match");
        for c in self.kind.header() {
            match *c {
                "preset" | "task_id" | "actions" => {}
                _ => {
                    self.numbers(c, optional(c))?;
                }
            }
        }
        Ok(())
    }
}

fn read_table(path: &Path) -> Result<Table, ReportError> {
    let file = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io { path: path.display().to_string(), source })?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines.next().map(split_fields).unwrap_or_default();
    let kind = CsvKind::detect(&file, &header)?;
    let mut rows = Vec::new();
    for (i, l) in lines.enumerate() {
        let f = split_fields(l);
        if f.len() != header.len() {
            return Err(ReportError::Arity { file, line: i + 2, expected: header.len(), found: f.len() });
        }
        rows.push(f);
    }
    let t = Table { file, kind, rows };
    t.validate()?;
    Ok(t)
}

const W: f64 = 480.0;
const H: f64 = 300.0;
const PAD: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#).unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title)).unwrap();
    writeln!(s, r#"<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - PAD, W - PAD / 2.0, H - PAD).unwrap();
    writeln!(s, r#"<line x1="{PAD}" y1="{}" x2="{PAD}" y2="{}" stroke="black"/>"#, H - PAD, PAD / 2.0).unwrap();
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        let y = ymap(v, 0.0, 1.0);
        writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, PAD - 4.0, y + 4.0).unwrap();
        writeln!(s, r##"<line x1="{PAD}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#ddd"/>"##, W - PAD / 2.0).unwrap();
    }
    s
}

fn ymap(v: f64, lo: f64, hi: f64) -> f64 {
    let span = if hi > lo { hi - lo } else { 1.0 };
    (H - PAD) - (v - lo) / span * (H - 1.5 * PAD)
}

fn xmap(i: f64, lo: f64, hi: f64) -> f64 {
    let span = if hi > lo { hi - lo } else { 1.0 };
    PAD + (i - lo) / span * (W - 1.5 * PAD)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart of `series` (label, points) on a [0, 1] y-axis.
fn line_chart(title: &str, x_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let xs: Vec<f64> = series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)).collect();
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if xs.is_empty() { (0.0, 1.0) } else { (lo, hi) };
    let mut s = svg_open(title);
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 8.0, escape(x_label)).unwrap();
    writeln!(s, r#"<text x="{PAD}" y="{}" text-anchor="middle">{lo}</text>"#, H - PAD + 14.0).unwrap();
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{hi}</text>"#, xmap(hi, lo, hi), H - PAD + 14.0).unwrap();
    for (k, (label, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> =
            pts.iter().map(|(x, y)| format!("{:.1},{:.1}", xmap(*x, lo, hi), ymap(y.clamp(0.0, 1.0), 0.0, 1.0))).collect();
        writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" ")).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" fill="{color}">{}</text>"#, PAD + 6.0, PAD / 2.0 + 14.0 * (k + 1) as f64, escape(label)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// n-sweep chart: categorical x positions, one per value of `SWEEP_N`.
fn sweep_chart(series: &[(String, Vec<(usize, f64, f64, f64)>)]) -> String {
    let mut s = svg_open("success rate vs candidates n");
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">n</text>"#, W / 2.0, H - 8.0).unwrap();
    let last = (SWEEP_N.len() - 1) as f64;
    let xpos = |n: usize| SWEEP_N.iter().position(|&m| m == n).map(|i| xmap(i as f64, 0.0, last));
    for (i, n) in SWEEP_N.iter().enumerate() {
        writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{n}</text>"#, xmap(i as f64, 0.0, last), H - PAD + 14.0).unwrap();
    }
    for (k, (label, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut path = Vec::new();
        for &(n, v, lo, hi) in pts {
            let Some(x) = xpos(n) else { continue };
            path.push(format!("{x:.1},{:.1}", ymap(v, 0.0, 1.0)));
            writeln!(s, r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="{color}"/>"#, ymap(lo, 0.0, 1.0), ymap(hi, 0.0, 1.0)).unwrap();
        }
        writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" ")).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" fill="{color}">{}</text>"#, PAD + 6.0, PAD / 2.0 + 14.0 * (k + 1) as f64, escape(label)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Grouped bars: for each group, one bar per metric.
fn bar_chart(title: &str, groups: &[(String, Vec<f64>)], metrics: &[&str]) -> String {
    let mut s = svg_open(title);
    let slot = (W - 1.5 * PAD) / groups.len().max(1) as f64;
    let bw = slot * 0.8 / metrics.len().max(1) as f64;
    for (g, (name, vals)) in groups.iter().enumerate() {
        let x0 = PAD + g as f64 * slot + slot * 0.1;
        for (m, v) in vals.iter().enumerate() {
            let y = ymap(v.clamp(0.0, 1.0), 0.0, 1.0);
            writeln!(
                s,
                r#"<rect x="{:.1}" y="{y:.1}" width="{bw:.1}" height="{:.1}" fill="{}"/>"#,
                x0 + m as f64 * bw,
                H - PAD - y,
                COLORS[m % COLORS.len()]
            )
            .unwrap();
        }
        writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, x0 + slot * 0.4, H - PAD + 14.0, escape(name)).unwrap();
    }
    for (m, name) in metrics.iter().enumerate() {
        writeln!(s, r#"<text x="{}" y="{}" fill="{}">{}</text>"#, PAD + 6.0, PAD / 2.0 + 14.0 * (m + 1) as f64, COLORS[m % COLORS.len()], name).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn stem(file: &str) -> &str {
    file.strip_suffix(".csv").unwrap_or(file)
}

/// What `make_report` wrote.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportSummary {
    pub runs: usize,
    pub files: Vec<PathBuf>,
}

/// Reads every `*.csv` in `inputs` (sorted by name) and writes `index.md` plus
/// SVG plots into `out_dir`.
pub fn make_report(inputs: &Path, out_dir: &Path) -> Result<ReportSummary, ReportError> {
    let io = |p: &Path| {
        let path = p.display().to_string();
        move |source| ReportError::Io { path, source }
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(inputs)
        .map_err(io(inputs))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    let tables = paths.iter().map(|p| read_table(p)).collect::<Result<Vec<_>, _>>()?;
    std::fs::create_dir_all(out_dir).map_err(io(out_dir))?;

    let mut md = String::from("# Experiment report\n\n");
    let mut svgs: Vec<(String, String)> = Vec::new();
    if tables.is_empty() {
        md.push_str("> **no runs**: the input directory contains no CSV files.\n");
    }

    let of = |k: CsvKind| tables.iter().filter(move |t| t.kind == k);

    if of(CsvKind::Episodes).next().is_some() {
        md.push_str("## Benchmark runs\n\n| run | episodes | successes | success rate | 95% CI |\n|---|---|---|---|---|\n");
        for t in of(CsvKind::Episodes) {
            let succ = t.required("success")?;
            let p = crate::stats::Proportion::new(succ.iter().filter(|&&x| x > 0.5).count() as u64, succ.len() as u64);
            writeln!(md, "| {} | {} | {} | {:.3} | [{:.3}, {:.3}] |", stem(&t.file), p.n, p.successes, p.value, p.interval.lo, p.interval.hi)
                .unwrap();
        }
        md.push('\n');
    }

    for (kind, title, y) in [(CsvKind::Ppo, "PPO training", "success_rate"), (CsvKind::Grpo, "GRPO training", "success_rate")] {
        if of(kind).next().is_none() {
            continue;
        }
        writeln!(md, "## {title}\n\n| run | iterations | first {y} | last {y} | last mean_reward |\n|---|---|---|---|---|").unwrap();
        let mut series = Vec::new();
        for t in of(kind) {
            let it = t.required("iteration")?;
            let sr = t.required(y)?;
            let rw = t.required("mean_reward")?;
            let (f, l, r) = (sr.first().copied().unwrap_or(0.0), sr.last().copied().unwrap_or(0.0), rw.last().copied().unwrap_or(0.0));
            writeln!(md, "| {} | {} | {f:.3} | {l:.3} | {r:.3} |", stem(&t.file), it.len()).unwrap();
            series.push((stem(&t.file).to_string(), it.into_iter().zip(sr).collect::<Vec<_>>()));
            if kind == CsvKind::Grpo {
                let tm = t.numbers("type_match", true)?;
                let em = t.numbers("exact_match", true)?;
                let evals: Vec<_> = t.required("iteration")?.into_iter().zip(tm.into_iter().zip(em)).filter_map(|(i, (a, b))| Some((i, a?, b?))).collect();
                if !evals.is_empty() {
                    let name = format!("{}-match.svg", stem(&t.file));
                    let chart = line_chart(
                        &format!("{} offline match", stem(&t.file)),
                        "iteration",
                        &[
                            ("type match".into(), evals.iter().map(|e| (e.0, e.1)).collect()),
                            ("exact match".into(), evals.iter().map(|e| (e.0, e.2)).collect()),
                        ],
                    );
                    svgs.push((name, chart));
                }
            }
        }
        let name = format!("{}-curves.svg", kind.name());
        writeln!(md, "\n![{title} curves]({name})\n").unwrap();
        svgs.push((name, line_chart(&format!("{title}: {y}"), "iteration", &series)));
    }
    for t in of(CsvKind::Grpo) {
        let name = format!("{}-match.svg", stem(&t.file));
        if svgs.iter().any(|(n, _)| *n == name) {
            writeln!(md, "![{} offline match]({name})\n", stem(&t.file)).unwrap();
        }
    }

    if of(CsvKind::Sweep).next().is_some() {
        md.push_str("## Candidate-count sweep\n\n| run | n | success rate | 95% CI | episodes |\n|---|---|---|---|---|\n");
        let mut series = Vec::new();
        for t in of(CsvKind::Sweep) {
            let n = t.required("n")?;
            let (v, lo, hi, eps) = (t.required("success_rate")?, t.required("ci_lo")?, t.required("ci_hi")?, t.required("episodes")?);
            let mut pts = Vec::new();
            for i in 0..n.len() {
                writeln!(md, "| {} | {} | {:.3} | [{:.3}, {:.3}] | {} |", stem(&t.file), n[i], v[i], lo[i], hi[i], eps[i]).unwrap();
                pts.push((n[i] as usize, v[i], lo[i], hi[i]));
            }
            series.push((stem(&t.file).to_string(), pts));
        }
        md.push_str("\n![n sweep](n-sweep.svg)\n\n");
        svgs.push(("n-sweep.svg".into(), sweep_chart(&series)));
    }

    if of(CsvKind::Ablation).next().is_some() {
        md.push_str("## Annotation quality\n\n| run | preset | accuracy | seeds | mean PRM accuracy | mean verified SR |\n|---|---|---|---|---|---|\n");
        let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
        for t in of(CsvKind::Ablation) {
            let presets = t.text("preset");
            let acc = t.required("annotator_accuracy")?;
            let pa = t.required("prm_accuracy")?;
            let sr = t.required("verified_sr")?;
            let mut order: Vec<&str> = Vec::new();
            for p in &presets {
                if !order.contains(p) {
                    order.push(p);
                }
            }
            for p in order {
                let idx: Vec<usize> = (0..presets.len()).filter(|&i| presets[i] == p).collect();
                let m = |v: &[f64]| idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len() as f64;
                writeln!(md, "| {} | {p} | {:.2} | {} | {:.4} | {:.4} |", stem(&t.file), acc[idx[0]], idx.len(), m(&pa), m(&sr)).unwrap();
                groups.push((p.to_string(), vec![m(&pa), m(&sr)]));
            }
        }
        md.push_str("\n![annotation quality](annotation-quality.svg)\n\n");
        svgs.push(("annotation-quality.svg".into(), bar_chart("annotation quality", &groups, &["PRM accuracy", "verified SR"])));
    }

    if !tables.is_empty() {
        md.push_str("## Inputs\n\n");
        for t in &tables {
            writeln!(md, "- `{}` ({}, {} rows)", t.file, t.kind.name(), t.rows.len()).unwrap();
        }
    }

    let mut files = Vec::new();
    let index = out_dir.join("index.md");
    std::fs::write(&index, md).map_err(io(&index))?;
    files.push(index);
    for (name, body) in svgs {
        let p = out_dir.join(name);
        std::fs::write(&p, body).map_err(io(&p))?;
        files.push(p);
    }
    Ok(ReportSummary { runs: tables.len(), files })
}
