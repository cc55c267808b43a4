//! Study outputs: summary CSV, per-replication log, text table and a
//! long-format CSV for plotting.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::{Family, Method, ReplicationRecord, StudyReport};
use crate::error::{Error, Result};
use crate::metrics::MethodSummary;
use crate::truth::TruthCache;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    /// `summary.csv`
    Summary,
    /// `replications.csv`
    Replications,
    /// `table.txt`
    Table,
    /// `long.csv`
    Long,
}

impl OutputFormat {
    pub const ALL: [OutputFormat; 4] = [OutputFormat::Summary, OutputFormat::Replications, OutputFormat::Table, OutputFormat::Long];

    pub fn file_name(self) -> &'static str {
        match self {
            OutputFormat::Summary => "summary.csv",
            OutputFormat::Replications => "replications.csv",
            OutputFormat::Table => "table.txt",
            OutputFormat::Long => "long.csv",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Bias,
    Variance,
    Mse,
    Ess,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Bias, Metric::Variance, Metric::Mse, Metric::Ess];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Bias => "bias",
            Metric::Variance => "variance",
            Metric::Mse => "mse",
            Metric::Ess => "ess",
        }
    }

    pub fn value(self, s: &MethodSummary) -> f64 {
        match self {
            Metric::Bias => s.bias,
            Metric::Variance => s.variance,
            Metric::Mse => s.mse,
            Metric::Ess => s.ess,
        }
    }

    /// ESS is better when larger, everything else when smaller.
    fn better(self, a: f64, b: f64) -> bool {
        match self {
            Metric::Ess => a > b,
            _ => a < b,
        }
    }
}

fn family_of(label: &str) -> Option<Family> {
    label.parse::<Method>().ok().map(Method::family)
}

/// Best method of a family within one (scenario, MT size) block; ties go
/// to the first listed.
pub fn best_method<'a>(summaries: &'a [MethodSummary], family: Family, scenario: &str, mt_size: usize, metric: Metric) -> Option<&'a str> {
    let mut best: Option<&MethodSummary> = None;
    for s in summaries {
        if s.scenario != scenario || s.mt_size != mt_size || family_of(&s.method) != Some(family) {
            continue;
        }
        let v = metric.value(s);
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|b| metric.better(v, metric.value(b))) {
            best = Some(s);
        }
    }
    best.map(|s| s.method.as_str())
}

pub fn write_summary_csv<W: Write>(summaries: &[MethodSummary], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for s in summaries {
        w.serialize(s)?;
    }
    if summaries.is_empty() {
        w.write_record(["scenario", "mt_size", "method", "bias", "variance", "mse", "ess", "n_used", "n_failed"])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn read_summary_csv<R: Read>(reader: R) -> Result<Vec<MethodSummary>> {
    csv::Reader::from_reader(reader).deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn write_replication_csv<W: Write>(records: &[ReplicationRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// One row per (scenario, MT size, method, metric).
pub fn write_long_csv<W: Write>(summaries: &[MethodSummary], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["scenario", "mt_size", "method", "family", "metric", "value"])?;
    for s in summaries {
        let family = family_of(&s.method).map_or("", Family::short);
        for m in Metric::ALL {
            w.write_record([
                s.scenario.as_str(),
                &s.mt_size.to_string(),
                &s.method,
                family,
                m.label(),
                &m.value(s).to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

fn ordered_unique<T: PartialEq + Clone>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for i in items {
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

const NAME_WIDTH: usize = 22;
const COL_WIDTH: usize = 9;

fn format_value(metric: Metric, v: f64, best: bool) -> String {
    let text = if v.is_nan() {
        "-".to_string()
    } else if metric == Metric::Ess {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    };
    let mark = if best { "*" } else { " " };
    format!("{text:>w$}{mark}", w = COL_WIDTH - 1)
}

/// Summary table, one block per MT size; `*` marks the best method of each
/// family for each scenario and metric.
pub fn render_table(summaries: &[MethodSummary]) -> String {
    let mut out = String::new();
    let sizes = ordered_unique(summaries.iter().map(|s| s.mt_size));
    let scenarios = ordered_unique(summaries.iter().map(|s| s.scenario.clone()));
    let block_width = COL_WIDTH * Metric::ALL.len();
    for mt in sizes {
        let _ = writeln!(out, "MT={mt}");
        let mut header = format!("{:<NAME_WIDTH$}", "Scenario");
        let mut columns = format!("{:<NAME_WIDTH$}", "Method");
        for sc in &scenarios {
            let _ = write!(header, "| {:<w$}", sc, w = block_width);
            columns.push_str("| ");
            for m in ["Bias", "Variance", "MSE", "ESS"] {
                let _ = write!(columns, "{m:>w$} ", w = COL_WIDTH - 1);
            }
        }
        let _ = writeln!(out, "{}\n{}", header.trim_end(), columns.trim_end());
        for family in Family::ALL {
            let methods = ordered_unique(
                summaries
                    .iter()
                    .filter(|s| s.mt_size == mt && family_of(&s.method) == Some(family))
                    .map(|s| s.method.clone()),
            );
            if methods.is_empty() {
                continue;
            }
            let _ = writeln!(out, "{}", family.title());
            for method in &methods {
                let mut line = format!("{method:<NAME_WIDTH$}");
                for sc in &scenarios {
                    line.push_str("| ");
                    let cell = summaries.iter().find(|s| s.mt_size == mt && &s.scenario == sc && &s.method == method);
                    for m in Metric::ALL {
                        match cell {
                            Some(s) => {
                                let best = best_method(summaries, family, sc, mt, m) == Some(method.as_str());
                                line.push_str(&format_value(m, m.value(s), best));
                            }
                            None => line.push_str(&format!("{:>w$}", "", w = COL_WIDTH)),
                        }
                    }
                }
                let _ = writeln!(out, "{}", line.trim_end());
            }
            let mut line = format!("{:<NAME_WIDTH$}", format!("Best for {}", family.short()));
            for sc in &scenarios {
                line.push_str("| ");
                for m in Metric::ALL {
                    let best = best_method(summaries, family, sc, mt, m).unwrap_or("-");
                    line.push_str(&format!("{best:>w$} ", w = COL_WIDTH - 1));
                }
            }
            let _ = writeln!(out, "{}", line.trim_end());
        }
        out.push('\n');
    }
    out
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Write the requested outputs plus `config.json` and `truth.csv` into
/// `dir`; returns the paths written.
pub fn emit_report(report: &StudyReport, dir: &Path, formats: &[OutputFormat]) -> Result<Vec<PathBuf>> {
    report.config.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let path = dir.join("config.json");
    let mut text = serde_json::to_string_pretty(&report.config)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let path = dir.join("truth.csv");
    let mut cache = TruthCache::default();
    for t in &report.truths {
        cache.insert(t.clone());
    }
    cache.save(&path)?;
    written.push(path);

    for &format in formats {
        let path = dir.join(format.file_name());
        let mut file = create(&path)?;
        match format {
            OutputFormat::Summary => write_summary_csv(&report.summaries, &mut file)?,
            OutputFormat::Replications => write_replication_csv(&report.replications, &mut file)?,
            OutputFormat::Long => write_long_csv(&report.summaries, &mut file)?,
            OutputFormat::Table => file
                .write_all(render_table(&report.summaries).as_bytes())
                .map_err(|e| Error::io(&path, e))?,
        }
        file.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
