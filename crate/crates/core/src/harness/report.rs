//! Run results and their on-disk form.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;
use serde_json::json;

use super::config::ExperimentConfig;
use super::svg;
use crate::error::{Error, Result};
use crate::shaping::{empirical_cdf_positions, ProbBatch};
use crate::specfun::BetaParams;

/// Per-step losses: `columns[0]` is the objective, the rest its components.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossTrace {
    pub columns: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl LossTrace {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.values.push(row);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The objective column.
    pub fn totals(&self) -> Vec<f64> {
        self.values.iter().map(|r| r[0]).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerProbs {
    pub layer: usize,
    pub batch: ProbBatch<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CdfTrace {
    pub source: String,
    pub category: usize,
    pub x: Vec<f64>,
    pub empirical: Vec<f64>,
    pub target: Vec<f64>,
}

impl CdfTrace {
    /// Sorted clamped values against their `j/B` positions and the target
    /// CDF.
    pub fn new(
        source: &str,
        category: usize,
        values: &[f64],
        params: &BetaParams<f64>,
        eps: f64,
    ) -> Result<Self> {
        let clamped: Vec<f64> = values.iter().map(|v| v.clamp(eps, 1.0 - eps)).collect();
        let ecdf = empirical_cdf_positions(&clamped);
        let target = ecdf
            .sorted
            .iter()
            .map(|&x| params.cdf(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            source: source.to_string(),
            category,
            x: ecdf.sorted,
            empirical: ecdf.ranks,
            target,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub name: String,
    pub category: usize,
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
    /// Target density at each bin centre.
    pub target_pdf: Option<Vec<f64>>,
}

impl Histogram {
    /// Density histogram of `values` over `[0, 1]` with equal-width bins.
    pub fn new(
        name: &str,
        category: usize,
        values: &[f64],
        bins: usize,
        target: Option<&BetaParams<f64>>,
    ) -> Result<Self> {
        let width = 1.0 / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|i| i as f64 * width).collect();
        let mut counts = vec![0usize; bins];
        for &v in values {
            let i = ((v / width) as usize).min(bins - 1);
            counts[i] += 1;
        }
        let n = values.len().max(1) as f64;
        let density = counts.iter().map(|&c| c as f64 / (n * width)).collect();
        let target_pdf = target
            .map(|p| {
                edges
                    .windows(2)
                    .map(|w| p.pdf(0.5 * (w[0] + w[1])))
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        Ok(Self {
            name: name.to_string(),
            category,
            edges,
            density,
            target_pdf,
        })
    }

    /// Integral of the binned density; one for a non-empty sample.
    pub fn total_mass(&self) -> f64 {
        self.density
            .iter()
            .zip(self.edges.windows(2))
            .map(|(d, w)| d * (w[1] - w[0]))
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimplexSeries {
    pub source: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CvmEntry {
    pub layer: usize,
    pub source: String,
    pub category: usize,
    pub distance: f64,
}

/// Mean probability mass per expert for the tokens of one source.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpecializationRow {
    pub layer: usize,
    pub source: String,
    pub mass: Vec<f64>,
}

/// Final routing decisions for one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingDump {
    pub layer: usize,
    pub tags: Vec<String>,
    pub probs: Array2<f64>,
    pub selected: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub loss: LossTrace,
    pub final_probs: Vec<LayerProbs>,
    pub cdf_traces: Vec<CdfTrace>,
    pub histograms: Vec<Histogram>,
    pub simplex: Vec<SimplexSeries>,
    /// CoV of expert loads per layer.
    pub cov: Vec<f64>,
    pub cvm: Vec<CvmEntry>,
    pub specialization: Vec<SpecializationRow>,
    pub routing: Vec<RoutingDump>,
    pub summary: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn empty(config: ExperimentConfig) -> Self {
        Self {
            config,
            loss: LossTrace::default(),
            final_probs: Vec::new(),
            cdf_traces: Vec::new(),
            histograms: Vec::new(),
            simplex: Vec::new(),
            cov: Vec::new(),
            cvm: Vec::new(),
            specialization: Vec::new(),
            routing: Vec::new(),
            summary: BTreeMap::new(),
        }
    }

    pub fn summary_value(&self, key: &str) -> Option<f64> {
        self.summary.get(key).copied()
    }
}

/// Files written by [`emit_report`], relative to `dir`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Manifest {
    pub dir: PathBuf,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn paths(&self) -> impl Iterator<Item = PathBuf> + '_ {
        self.files.iter().map(|f| self.dir.join(f))
    }
}

/// Seventeen significant digits.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Restricts a tag to characters that are safe in file names.
pub fn file_stem(tag: &str) -> String {
    tag.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

struct Emitter {
    dir: PathBuf,
    files: Vec<String>,
}

impl Emitter {
    fn csv(
        &mut self,
        name: &str,
        header: &[String],
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> Result<()> {
        let path = self.dir.join(name);
        let err = |e: csv::Error| Error::io(&path, e.into());
        let mut w = csv::Writer::from_path(&path).map_err(err)?;
        w.write_record(header).map_err(err)?;
        for row in rows {
            w.write_record(&row).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn text(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }
}

fn header(fixed: &[&str], prefix: &str, n: usize) -> Vec<String> {
    fixed
        .iter()
        .map(|s| s.to_string())
        .chain((0..n).map(|i| format!("{prefix}{i}")))
        .collect()
}

/// Writes every non-empty section of `report` under `dir` and returns the
/// manifest. `report.json` is always written.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Emitter {
        dir: dir.to_path_buf(),
        files: Vec::new(),
    };

    if !report.loss.is_empty() {
        let mut head = vec!["step".to_string()];
        head.extend(report.loss.columns.iter().cloned());
        let rows = report.loss.values.iter().enumerate().map(|(step, row)| {
            std::iter::once(step.to_string())
                .chain(row.iter().map(|&v| fmt_num(v)))
                .collect()
        });
        out.csv("loss.csv", &head, rows)?;
    }

    if let Some(first) = report.final_probs.first() {
        let k = first.batch.categories();
        let rows = report.final_probs.iter().flat_map(|lp| {
            lp.batch
                .probs()
                .rows()
                .into_iter()
                .enumerate()
                .map(move |(i, row)| {
                    [
                        lp.layer.to_string(),
                        i.to_string(),
                        lp.batch.tag(i).to_string(),
                    ]
                    .into_iter()
                    .chain(row.iter().map(|&v| fmt_num(v)))
                    .collect()
                })
        });
        out.csv(
            "probs_final.csv",
            &header(&["layer", "row", "source"], "p_", k),
            rows,
        )?;
    }

    for t in &report.cdf_traces {
        let name = format!("cdf_trace_{}_{}.csv", file_stem(&t.source), t.category);
        let rows = (0..t.x.len()).map(|i| {
            vec![
                fmt_num(t.x[i]),
                fmt_num(t.empirical[i]),
                fmt_num(t.target[i]),
            ]
        });
        out.csv(&name, &header(&["x", "empirical", "target"], "", 0), rows)?;
    }

    for h in &report.histograms {
        let name = format!("hist_{}_{}.csv", file_stem(&h.name), h.category);
        let mut head = header(&["bin_lo", "bin_hi", "density"], "", 0);
        if h.target_pdf.is_some() {
            head.push("target_pdf".into());
        }
        let rows = (0..h.density.len()).map(|i| {
            let mut row = vec![
                fmt_num(h.edges[i]),
                fmt_num(h.edges[i + 1]),
                fmt_num(h.density[i]),
            ];
            if let Some(pdf) = &h.target_pdf {
                row.push(fmt_num(pdf[i]));
            }
            row
        });
        out.csv(&name, &head, rows)?;
    }

    if !report.simplex.is_empty() {
        out.text("simplex.svg", &svg::simplex_scatter(&report.simplex))?;
    }

    if !report.cov.is_empty() {
        let rows = report
            .cov
            .iter()
            .enumerate()
            .map(|(l, &c)| vec![l.to_string(), fmt_num(c)]);
        out.csv("cov.csv", &header(&["layer", "cov"], "", 0), rows)?;
    }

    if let Some(first) = report.specialization.first() {
        let rows = report.specialization.iter().map(|s| {
            [s.layer.to_string(), s.source.clone()]
                .into_iter()
                .chain(s.mass.iter().map(|&v| fmt_num(v)))
                .collect()
        });
        out.csv(
            "specialization.csv",
            &header(&["layer", "source"], "e_", first.mass.len()),
            rows,
        )?;
    }

    if let Some(first) = report.routing.first() {
        let n = first.probs.ncols();
        let rows = report.routing.iter().flat_map(|d| {
            d.probs.rows().into_iter().enumerate().map(move |(t, row)| {
                let selected = d.selected[t]
                    .iter()
                    .map(|e| e.to_string())
                    .collect::<Vec<_>>()
                    .join(";");
                [d.layer.to_string(), t.to_string(), d.tags[t].clone()]
                    .into_iter()
                    .chain(row.iter().map(|&v| fmt_num(v)))
                    .chain(std::iter::once(selected))
                    .collect()
            })
        });
        let mut head = header(&["layer", "token_id", "source_tag"], "p_", n);
        head.push("selected_indices".into());
        out.csv("routing.csv", &head, rows)?;
    }

    out.files.push("report.json".into());
    let doc = json!({
        "config": report.config,
        "summary": report.summary,
        "cov": report.cov,
        "cvm": report.cvm,
        "specialization": report.specialization,
        "steps_logged": report.loss.len(),
        "files": out.files,
    });
    let text = serde_json::to_string_pretty(&doc).expect("report serializes");
    let path = dir.join("report.json");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;

    Ok(Manifest {
        dir: out.dir,
        files: out.files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ExperimentKind;

    #[test]
    fn empty_report_writes_config_only() {
        let dir = tempfile::tempdir().unwrap();
        let report = RunReport::empty(ExperimentConfig::new(ExperimentKind::ShapeToy));
        let manifest = emit_report(&report, dir.path()).unwrap();
        assert_eq!(manifest.files, vec!["report.json"]);
        let doc: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap())
                .unwrap();
        assert_eq!(doc["config"]["kind"], "shape-toy");
    }

    #[test]
    fn number_format_has_seventeen_digits() {
        assert_eq!(fmt_num(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_num(-2.0), "-2.0000000000000000e0");
        assert_eq!(fmt_num(0.1).parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn histogram_integrates_to_one() {
        let values: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let beta = BetaParams::new(2.0, 2.0).unwrap();
        let h = Histogram::new("s", 0, &values, 10, Some(&beta)).unwrap();
        assert!((h.total_mass() - 1.0).abs() < 1e-12);
        assert_eq!(h.edges.len(), 11);
        assert!((h.target_pdf.unwrap()[0] - 6.0 * 0.05 * 0.95).abs() < 1e-12);
    }

    #[test]
    fn cdf_trace_positions() {
        let beta = BetaParams::new(1.0, 1.0).unwrap();
        let t = CdfTrace::new("s", 1, &[0.5, 0.0, 0.25], &beta, 1e-7).unwrap();
        assert_eq!(t.x, vec![1e-7, 0.25, 0.5]);
        assert_eq!(t.empirical, vec![1.0 / 3.0, 2.0 / 3.0, 1.0]);
        for (f, x) in t.target.iter().zip(&t.x) {
            assert!((f - x).abs() < 1e-12);
        }
    }

    #[test]
    fn file_stems_are_sanitized() {
        assert_eq!(file_stem("vision/text 1"), "vision_text_1");
    }

    #[test]
    fn io_errors_carry_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let report = RunReport::empty(ExperimentConfig::new(ExperimentKind::ShapeToy));
        match emit_report(&report, &blocker.join("sub")) {
            Err(Error::Io { path, .. }) => assert!(path.starts_with(&blocker)),
            other => panic!("{other:?}"),
        }
    }
}
