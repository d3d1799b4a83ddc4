use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::Metrics;
use super::EvalError;
use crate::datapipe::Component;

pub const REPORT_HEADER: &str = "model,component,sparse,rdf,vin,fold,seed,mse,mae,rmse,psnr_db";

/// What a report row scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Component(Component),
    Magnitude,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Component(c) => c.name(),
            Target::Magnitude => "magnitude",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        if s == "magnitude" {
            return Some(Target::Magnitude);
        }
        Component::parse(s).map(Target::Component)
    }
}

/// Which inputs the scored model received.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InputFlags {
    pub sparse: bool,
    pub rdf: bool,
    pub vin: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub target: Target,
    pub inputs: InputFlags,
    /// `None` on rows averaged over folds.
    pub fold: Option<usize>,
    /// `None` on rows averaged over seeds.
    pub seed: Option<u64>,
    pub metrics: Metrics,
}

impl MetricReport {
    pub fn csv_row(&self) -> String {
        let b = |v: bool| if v { "1" } else { "0" };
        let opt = |v: Option<u64>| v.map_or("mean".to_string(), |v| v.to_string());
        let m = &self.metrics;
        format!(
            "{},{},{},{},{},{},{},{:e},{:e},{:e},{:e}",
            self.model,
            self.target.name(),
            b(self.inputs.sparse),
            b(self.inputs.rdf),
            b(self.inputs.vin),
            opt(self.fold.map(|f| f as u64)),
            opt(self.seed),
            m.mse,
            m.mae,
            m.rmse,
            m.psnr_db
        )
    }

    fn parse(line: &str) -> Result<Self, String> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(format!("{} fields, expected 11", f.len()));
        }
        let flag = |s: &str| match s {
            "1" => Ok(true),
            "0" => Ok(false),
            _ => Err(format!("bad flag {s:?}")),
        };
        let opt = |s: &str| if s == "mean" { Ok(None) } else { s.parse::<u64>().map(Some).map_err(|e| format!("{s:?}: {e}")) };
        let num = |s: &str| s.parse::<f64>().map_err(|e| format!("{s:?}: {e}"));
        Ok(MetricReport {
            model: f[0].to_string(),
            target: Target::parse(f[1]).ok_or_else(|| format!("unknown component {:?}", f[1]))?,
            inputs: InputFlags { sparse: flag(f[2])?, rdf: flag(f[3])?, vin: flag(f[4])? },
            fold: opt(f[5])?.map(|v| v as usize),
            seed: opt(f[6])?,
            metrics: Metrics { mse: num(f[7])?, mae: num(f[8])?, rmse: num(f[9])?, psnr_db: num(f[10])? },
        })
    }
}

pub fn report_csv(rows: &[MetricReport]) -> String {
    let mut s = String::new();
    writeln!(s, "{REPORT_HEADER}").expect("string write");
    for r in rows {
        writeln!(s, "{}", r.csv_row()).expect("string write");
    }
    s
}

pub fn write_report(path: &Path, rows: &[MetricReport]) -> Result<(), EvalError> {
    std::fs::write(path, report_csv(rows)).map_err(|e| EvalError::io(path, e))
}

pub fn read_report(path: &Path) -> Result<Vec<MetricReport>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(REPORT_HEADER) {
        return Err(EvalError::Invalid(format!("{}: missing report header", path.display())));
    }
    lines
        .enumerate()
        .map(|(i, l)| MetricReport::parse(l).map_err(|e| EvalError::Invalid(format!("{}:{}: {e}", path.display(), i + 2))))
        .collect()
}

/// Averages groups of rows. MSE and MAE are averaged; RMSE and PSNR are
/// recomputed from the mean MSE so every row keeps `rmse = √mse`.
fn average(rows: &[&MetricReport], peak: f64, fold: Option<usize>, seed: Option<u64>) -> MetricReport {
    let n = rows.len() as f64;
    let mse = rows.iter().map(|r| r.metrics.mse).sum::<f64>() / n;
    let mae = rows.iter().map(|r| r.metrics.mae).sum::<f64>() / n;
    MetricReport { fold, seed, metrics: Metrics::from_mse_mae(mse, mae, peak), ..rows[0].clone() }
}

fn group_by<K: PartialEq>(rows: &[MetricReport], key: impl Fn(&MetricReport) -> K) -> Vec<Vec<&MetricReport>> {
    let mut groups: Vec<(K, Vec<&MetricReport>)> = Vec::new();
    for r in rows {
        let k = key(r);
        match groups.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(r),
            None => groups.push((k, vec![r])),
        }
    }
    groups.into_iter().map(|(_, v)| v).collect()
}

/// One row per (model, target, inputs, seed), averaged over folds, in order
/// of first appearance.
pub fn fold_means(rows: &[MetricReport], peak: f64) -> Vec<MetricReport> {
    group_by(rows, |r| (r.model.clone(), r.target, r.inputs, r.seed))
        .into_iter()
        .map(|g| average(&g, peak, None, g[0].seed))
        .collect()
}

/// One row per (model, target, inputs), averaged over folds and seeds.
pub fn summarize(rows: &[MetricReport], peak: f64) -> Vec<MetricReport> {
    group_by(rows, |r| (r.model.clone(), r.target, r.inputs)).into_iter().map(|g| average(&g, peak, None, None)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(model: &str, target: Target, fold: usize, mse: f64) -> MetricReport {
        MetricReport {
            model: model.into(),
            target,
            inputs: InputFlags { sparse: true, rdf: true, vin: false },
            fold: Some(fold),
            seed: Some(7),
            metrics: Metrics::from_mse_mae(mse, mse.sqrt() * 0.8, 1.0),
        }
    }

    #[test]
    fn csv_round_trip() {
        let mut rows = vec![row("lvadnet3d", Target::Component(Component::Y), 2, 1.9e-3), row("unet3d", Target::Magnitude, 0, 0.0)];
        rows.extend(fold_means(&rows, 1.0));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_report(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("model,component,sparse,rdf,vin,fold,seed,mse,mae,rmse,psnr_db\nlvadnet3d,y,1,1,0,2,7,"));
        assert!(text.contains(",inf\n"));
        assert!(text.contains(",mean,7,"));
        assert_eq!(read_report(&p).unwrap(), rows);
    }

    #[test]
    fn means_keep_rmse_identity() {
        let rows = vec![
            row("m", Target::Component(Component::X), 0, 1e-2),
            row("m", Target::Component(Component::X), 1, 3e-2),
            row("m", Target::Magnitude, 0, 4e-2),
        ];
        let means = fold_means(&rows, 1.0);
        assert_eq!(means.len(), 2);
        assert_eq!(means[0].metrics.mse, 2e-2);
        assert_eq!(means[0].metrics.rmse, 2e-2f64.sqrt());
        assert_eq!(means[0].fold, None);
        let s = summarize(&rows, 1.0);
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].seed, None);
    }
}
