//! Report files and the output directory they go to.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use portcon_core::analytics::{ConditionalRow, ExposureReport, KinkEvent, RollingStats, SkewCurve};
use portcon_core::backtest::BacktestResult;
use serde::Serialize;

use crate::error::CliError;

/// Directory, under the run output, holding the pool-aggregated results.
pub const WORLD_DIR: &str = "world";

/// An output directory that refuses to overwrite earlier reports unless
/// forced.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn prepare(root: &Path, force: bool) -> Result<Self, CliError> {
        if root.exists() {
            if !root.is_dir() {
                return Err(CliError::Config(format!("{} exists and is not a directory", root.display())));
            }
            let non_empty = std::fs::read_dir(root).map_err(|e| CliError::output(root, e))?.next().is_some();
            if non_empty && !force {
                return Err(CliError::Config(format!(
                    "{} already holds reports; pass --force to overwrite them",
                    root.display()
                )));
            }
        }
        std::fs::create_dir_all(root).map_err(|e| CliError::output(root, e))?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Files written so far, relative to the root, in writing order.
    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// Creates `rel` (and its parents) and hands a buffered writer to `fill`.
    pub fn write<F>(&mut self, rel: impl AsRef<Path>, fill: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<(), String>,
    {
        let path = self.root.join(rel.as_ref());
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::output(parent, e))?;
        }
        let file = File::create(&path).map_err(|e| CliError::output(&path, e))?;
        let mut w = BufWriter::new(file);
        fill(&mut w).map_err(|e| CliError::output(&path, e))?;
        w.flush().map_err(|e| CliError::output(&path, e))?;
        self.written.push(rel.as_ref().to_path_buf());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: impl AsRef<Path>, value: &T) -> Result<(), CliError> {
        self.write(rel, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(|e| e.to_string())?;
            w.write_all(b"\n").map_err(|e| e.to_string())
        })
    }
}

/// File-system friendly form of a scheme id: `markowitz:k=5` becomes
/// `markowitz_k5`.
pub fn scheme_dir(scheme: &str) -> String {
    scheme.replace(':', "_").replace('=', "")
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::Writer::from_writer(w)
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<(), String> {
    w.flush().map_err(|e| e.to_string())
}

pub fn write_backtest<W: Write>(w: W, r: &BacktestResult) -> Result<(), String> {
    r.write_csv(w).map_err(|e| e.to_string())
}

/// `rank,pnl,cum_pnl`.
pub fn write_skew_curve<W: Write>(w: W, curve: &SkewCurve) -> Result<(), String> {
    let mut w = csv_writer(w);
    let err = |e: csv::Error| e.to_string();
    w.write_record(["rank", "pnl", "cum_pnl"]).map_err(err)?;
    for p in &curve.points {
        w.write_record([p.rank.to_string(), p.pnl.to_string(), p.cum_pnl.to_string()]).map_err(err)?;
    }
    finish(w)
}

/// `kind,date,n,depth_sigma`: one row per event and per threshold it clears.
pub fn write_kinks<W: Write>(w: W, events: &[KinkEvent], thresholds: &[f64]) -> Result<(), String> {
    let mut w = csv_writer(w);
    let err = |e: csv::Error| e.to_string();
    w.write_record(["kind", "date", "n", "depth_sigma"]).map_err(err)?;
    for &n in thresholds {
        for e in events.iter().filter(|e| e.depth_sigma >= n) {
            w.write_record([e.kind.as_str().to_string(), e.date.to_string(), n.to_string(), e.depth_sigma.to_string()])
                .map_err(err)?;
        }
    }
    finish(w)
}

/// `kind,n,mean,stderr,count`; empty cells where undefined.
pub fn write_conditional<W: Write>(w: W, rows: &[ConditionalRow]) -> Result<(), String> {
    let mut w = csv_writer(w);
    let err = |e: csv::Error| e.to_string();
    w.write_record(["kind", "n", "mean", "stderr", "count"]).map_err(err)?;
    for r in rows {
        w.write_record([
            r.kind.as_str().to_string(),
            r.n.to_string(),
            cell(r.mean),
            cell(r.stderr),
            r.count.to_string(),
        ])
        .map_err(err)?;
    }
    finish(w)
}

/// `date,vol,normalized_vol,corr`; header only when the series is shorter
/// than one window.
pub fn write_rolling<W: Write>(w: W, dates: &[NaiveDate], rolling: Option<&RollingStats>) -> Result<(), String> {
    let mut w = csv_writer(w);
    let err = |e: csv::Error| e.to_string();
    w.write_record(["date", "vol", "normalized_vol", "corr"]).map_err(err)?;
    if let Some(r) = rolling {
        for (k, d) in dates.iter().enumerate() {
            w.write_record([d.to_string(), cell(r.vol[k]), cell(r.normalized_vol[k]), cell(r.corr[k])]).map_err(err)?;
        }
    }
    finish(w)
}

/// `sector,average_exposure`.
pub fn write_exposures<W: Write>(w: W, e: &ExposureReport) -> Result<(), String> {
    let mut w = csv_writer(w);
    let err = |e: csv::Error| e.to_string();
    w.write_record(["sector", "average_exposure"]).map_err(err)?;
    for (name, v) in e.sector_names.iter().zip(&e.sector_average) {
        w.write_record([name.clone(), v.to_string()]).map_err(err)?;
    }
    finish(w)
}

/// `date,net_over_gross,beta,<one column per sector>`.
pub fn write_exposure_series<W: Write>(w: W, e: &ExposureReport) -> Result<(), String> {
    let mut w = csv_writer(w);
    let err = |e: csv::Error| e.to_string();
    let mut header = vec!["date".to_string(), "net_over_gross".into(), "beta".into()];
    header.extend(e.sector_names.iter().cloned());
    w.write_record(&header).map_err(err)?;
    for (k, d) in e.dates.iter().enumerate() {
        let mut row = vec![d.to_string(), cell(e.net_over_gross[k]), cell(e.beta[k])];
        row.extend(e.sector_series[k].iter().map(|v| cell(*v)));
        w.write_record(&row).map_err(err)?;
    }
    finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use portcon_core::analytics::{skew_curve, ConditionalRow, KinkKind};

    fn text(f: impl FnOnce(&mut Vec<u8>) -> Result<(), String>) -> String {
        let mut buf = Vec::new();
        f(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn scheme_directories() {
        assert_eq!(scheme_dir("markowitz:k=5"), "markowitz_k5");
        assert_eq!(scheme_dir("neutral"), "neutral");
    }

    #[test]
    fn skew_and_conditional_layouts() {
        let curve = skew_curve(&[1.0, -2.0, 0.5]);
        assert_eq!(text(|b| write_skew_curve(b, &curve)), "rank,pnl,cum_pnl\n1,0.5,0.5\n2,1,1.5\n3,-2,-0.5\n");
        let rows = [
            ConditionalRow { kind: KinkKind::Minimum, n: 1.0, count: 1, mean: Some(0.25), stderr: None },
            ConditionalRow { kind: KinkKind::Maximum, n: 2.0, count: 0, mean: None, stderr: None },
        ];
        assert_eq!(
            text(|b| write_conditional(b, &rows)),
            "kind,n,mean,stderr,count\nminimum,1,0.25,,1\nmaximum,2,,,0\n"
        );
    }

    #[test]
    fn output_directory_is_protected() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("out");
        let mut out = OutputDir::prepare(&root, false).unwrap();
        out.write("a/b.csv", |w| w.write_all(b"x\n").map_err(|e| e.to_string())).unwrap();
        assert_eq!(out.written(), &[PathBuf::from("a/b.csv")]);
        let e = OutputDir::prepare(&root, false).unwrap_err();
        assert_eq!(e.exit_code(), 1);
        assert!(e.to_string().contains("--force"));
        assert!(OutputDir::prepare(&root, true).is_ok());
    }
}
