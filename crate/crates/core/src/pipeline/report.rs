use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ffd::ParameterPoint;
use crate::pipeline::manifest::Store;
use crate::pipeline::online::{Method, OnlineModels};
use crate::pipeline::store::{write_atomic, write_json};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub mu: ParameterPoint,
    /// Database size behind a ROM row; `None` for ground-truth rows.
    pub n_snapshots: Option<usize>,
    /// `|u - u_N| / |u_baseline|`.
    pub field_err: f64,
    /// `|Q - Q_N| / |Q_baseline|`.
    pub qoi_err: f64,
    pub qoi: f64,
    pub eval_seconds: f64,
    /// Ground-truth solve time over this row's time.
    pub speedup: f64,
    pub ddpod_iterations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub baseline_norm: f64,
    pub baseline_qoi: f64,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn rows_for(&self, method: Method, mu: &ParameterPoint) -> impl Iterator<Item = &ReportRow> {
        let mu = mu.clone();
        self.rows.iter().filter(move |r| r.method == method && r.mu == mu)
    }

    pub fn row(&self, method: Method, mu: &ParameterPoint, n: Option<usize>) -> Option<&ReportRow> {
        self.rows_for(method, mu).find(|r| r.n_snapshots == n)
    }

    /// CSV text; with `mask_timing` the wall-clock columns are blanked so
    /// that runs can be compared byte for byte.
    pub fn to_csv(&self, mask_timing: bool) -> Vec<u8> {
        let mut out = Vec::new();
        writeln!(out, "# config_hash={}", self.config_hash).expect("in-memory write");
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "mu", "n_snapshots", "field_err", "qoi_err", "eval_seconds", "speedup"]).expect("in-memory write");
        for r in &self.rows {
            let mu = r.mu.values().iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
            let (t, s) = if mask_timing { (String::new(), String::new()) } else { (r.eval_seconds.to_string(), r.speedup.to_string()) };
            w.write_record([
                r.method.to_string(),
                mu,
                r.n_snapshots.map(|n| n.to_string()).unwrap_or_default(),
                r.field_err.to_string(),
                r.qoi_err.to_string(),
                t,
                s,
            ])
            .expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Errors of PODI and DD-POD against fresh full-order solves at each
/// validation point, for every database prefix from the initial design up
/// to the full database. Writes `report.csv` and `report.json`.
pub fn cmd_report(root: &Path, validation: Option<&[ParameterPoint]>) -> Result<Report> {
    let store = Store::new(root);
    let (models, manifest) = OnlineModels::load(&store)?;
    let baseline = manifest
        .baseline
        .as_ref()
        .ok_or_else(|| Error::Config("store has no baseline solution".into()))?;
    let u_base = store.read_field(baseline)?;
    let baseline_norm = l2(&u_base);
    let baseline_qoi = baseline.qoi;
    if !(baseline_norm > 0.0) || baseline_qoi == 0.0 {
        return Err(Error::Config("baseline field or QoI is zero; relative errors are undefined".into()));
    }
    let points = validation.map(<[_]>::to_vec).unwrap_or_else(|| models.config().validation.clone());
    let n_initial = manifest.sampling.as_ref().map_or(models.n_snapshots(), |s| s.n_initial);
    let prefixes: Vec<OnlineModels> = (n_initial..=models.n_snapshots()).map(|n| models.prefix(n)).collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for mu in &points {
        let truth = models.evaluate(mu, Method::Fom, 1, None)?;
        rows.push(ReportRow {
            method: Method::Fom,
            mu: mu.clone(),
            n_snapshots: None,
            field_err: 0.0,
            qoi_err: 0.0,
            qoi: truth.qoi,
            eval_seconds: truth.eval_seconds,
            speedup: 1.0,
            ddpod_iterations: None,
        });
        for method in [Method::Podi, Method::Ddpod] {
            for m in &prefixes {
                let e = m.evaluate(mu, method, 3, None)?;
                rows.push(ReportRow {
                    method,
                    mu: mu.clone(),
                    n_snapshots: e.n_snapshots,
                    field_err: l2_diff(&e.field, &truth.field) / baseline_norm,
                    qoi_err: (e.qoi - truth.qoi).abs() / baseline_qoi.abs(),
                    qoi: e.qoi,
                    eval_seconds: e.eval_seconds,
                    speedup: truth.eval_seconds / e.eval_seconds,
                    ddpod_iterations: e.ddpod.map(|d| d.outer_iterations),
                });
            }
        }
    }
    let report = Report { config_hash: manifest.config_hash.clone(), baseline_norm, baseline_qoi, rows };
    write_atomic(&store.path("report.csv"), &report.to_csv(false))?;
    write_json(&store.path("report.json"), &report)?;
    Ok(report)
}
