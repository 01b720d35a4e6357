//! Power-versus-SINR curves, learning curves and per-instance timing, with
//! their CSV forms.

use std::fmt;
use std::fs::File;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelSet;
use crate::cnn::{CnnModel, Encoding, TrainReport};
use crate::error::{Error, Result};
use crate::precoding::{mrc_directions, power_allocation, zf_directions, DirectionMatrix, SinrSpec};
use crate::socp::{solve_power_min, SolverOptions, SolverStatus};

/// Default SINR grid in dB.
pub const GAMMA_GRID_DB: [f64; 5] = [0.0, 2.5, 5.0, 7.5, 10.0];
/// Fewest instances a timing statistic is reported over.
pub const MIN_TIMING_INSTANCES: usize = 30;
/// Untimed runs per method before measuring.
const WARMUP: usize = 5;

/// A way of choosing beam directions. Declaration order is the CSV row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Label,
    Tcnn,
    Fcnn,
    Mrc,
    Zf,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Label, Method::Tcnn, Method::Fcnn, Method::Mrc, Method::Zf];

    pub fn encoding(self) -> Option<Encoding> {
        match self {
            Method::Tcnn => Some(Encoding::Tcnn),
            Method::Fcnn => Some(Encoding::Fcnn),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Label => "label",
            Method::Tcnn => "tcnn",
            Method::Fcnn => "fcnn",
            Method::Mrc => "mrc",
            Method::Zf => "zf",
        }
    }
}

impl From<Encoding> for Method {
    fn from(e: Encoding) -> Self {
        match e {
            Encoding::Tcnn => Method::Tcnn,
            Encoding::Fcnn => Method::Fcnn,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCurvePoint {
    pub gamma_db: f64,
    pub method: Method,
    /// Linear power, averaged over the samples every compared method
    /// serves feasibly at this `gamma_db`.
    pub mean_total_power: f64,
    pub feasibility_rate: f64,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurveRow {
    pub epoch: usize,
    pub encoding: Encoding,
    pub train_rmse: f64,
    pub val_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub method: Method,
    pub median_s: f64,
    pub p95_s: f64,
    pub instance_count: usize,
}

/// How a network is picked for an SINR grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModelMatch {
    /// The model must have been trained at exactly that SINR.
    #[default]
    Exact,
    /// The model trained closest to that SINR (lower one on ties).
    Nearest,
}

impl FromStr for ModelMatch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exact" => Ok(ModelMatch::Exact),
            "nearest" => Ok(ModelMatch::Nearest),
            other => Err(Error::InvalidParameter(format!("unknown model match policy `{other}`"))),
        }
    }
}

/// Trained networks, looked up by encoding and SINR.
#[derive(Debug, Clone, Copy)]
pub struct ModelSet<'a> {
    pub models: &'a [CnnModel<f64>],
    pub policy: ModelMatch,
}

impl<'a> ModelSet<'a> {
    pub fn new(models: &'a [CnnModel<f64>], policy: ModelMatch) -> Self {
        Self { models, policy }
    }

    pub fn find(&self, encoding: Encoding, gamma_db: f64) -> Result<&'a CnnModel<f64>> {
        let candidates = self.models.iter().filter(|m| m.encoding == encoding);
        let hit = match self.policy {
            ModelMatch::Exact => candidates.into_iter().find(|m| m.gamma_db == gamma_db),
            ModelMatch::Nearest => candidates.min_by(|a, b| {
                let da = (a.gamma_db - gamma_db).abs();
                let db = (b.gamma_db - gamma_db).abs();
                da.total_cmp(&db).then(a.gamma_db.total_cmp(&b.gamma_db))
            }),
        };
        hit.ok_or(Error::MissingModel {
            encoding: encoding.to_string(),
            gamma_db,
        })
    }
}

/// Total power of one method on one channel, `None` when it cannot meet
/// the SINR floors.
fn method_power(
    method: Method,
    c: &ChannelSet<f64>,
    gamma: &SinrSpec<f64>,
    model: Option<&CnnModel<f64>>,
    opts: &SolverOptions,
) -> Result<Option<f64>> {
    let directions: Result<DirectionMatrix<f64>> = match method {
        Method::Label => {
            let sol = solve_power_min(c, gamma, opts)?;
            return Ok((sol.status == SolverStatus::Optimal).then_some(sol.total_power));
        }
        Method::Mrc => mrc_directions(c),
        Method::Zf => zf_directions(c),
        Method::Tcnn | Method::Fcnn => model.expect("model resolved for network methods").predict_directions(c),
    };
    let u = match directions {
        Ok(u) => u,
        Err(Error::ZfUndefined(_) | Error::DegenerateOutput { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    Ok(match power_allocation(c, &u, gamma) {
        Ok(r) if r.feasible => Some(r.total),
        Ok(_) | Err(Error::SingularDiagonal { .. }) => None,
        Err(e) => return Err(e),
    })
}

/// Mean transmit power per method and SINR over shared test channels.
///
/// Means run over the samples that every listed method serves feasibly at
/// that SINR; each method's own feasibility rate is reported alongside.
/// Rows come out ordered by method, then SINR.
pub fn power_curve(
    test: &[ChannelSet<f64>],
    methods: &[Method],
    models: ModelSet<'_>,
    gamma_grid_db: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<PowerCurvePoint>> {
    if test.is_empty() {
        return Err(Error::Empty);
    }
    let (n, k) = (test[0].n(), test[0].k());
    if let Some(c) = test.iter().find(|c| (c.n(), c.k()) != (n, k)) {
        return Err(Error::Mismatch(format!(
            "test channels mix n={n}, k={k} with n={}, k={}",
            c.n(),
            c.k()
        )));
    }
    let mut methods = methods.to_vec();
    methods.sort();
    methods.dedup();
    let mut out = Vec::with_capacity(methods.len() * gamma_grid_db.len());
    for &gamma_db in gamma_grid_db {
        let gamma = SinrSpec::uniform_db(k, gamma_db)?;
        let resolved: Vec<Option<&CnnModel<f64>>> = methods
            .iter()
            .map(|m| m.encoding().map(|e| models.find(e, gamma_db)).transpose())
            .collect::<Result<_>>()?;
        for m in resolved.iter().flatten() {
            if (m.n, m.k) != (n, k) {
                return Err(Error::Mismatch(format!(
                    "{} model is for n={}, k={}; test channels have n={n}, k={k}",
                    m.encoding, m.n, m.k
                )));
            }
        }
        let per_sample: Vec<Vec<Option<f64>>> = test
            .par_iter()
            .map(|c| {
                methods
                    .iter()
                    .zip(&resolved)
                    .map(|(&m, model)| method_power(m, c, &gamma, *model, opts))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let shared: Vec<&Vec<Option<f64>>> = per_sample.iter().filter(|row| row.iter().all(Option::is_some)).collect();
        for (j, &method) in methods.iter().enumerate() {
            let feasible = per_sample.iter().filter(|row| row[j].is_some()).count();
            let sum: f64 = shared.iter().map(|row| row[j].unwrap()).sum();
            out.push(PowerCurvePoint {
                gamma_db,
                method,
                mean_total_power: if shared.is_empty() { f64::NAN } else { sum / shared.len() as f64 },
                feasibility_rate: feasible as f64 / test.len() as f64,
                sample_count: shared.len(),
            });
        }
    }
    out.sort_by(|a, b| a.method.cmp(&b.method).then(a.gamma_db.total_cmp(&b.gamma_db)));
    Ok(out)
}

/// Per-epoch rows for several training runs of equal length, grouped by
/// encoding in report order.
pub fn learning_curves(reports: &[TrainReport]) -> Result<Vec<LearningCurveRow>> {
    let Some(first) = reports.first() else {
        return Ok(Vec::new());
    };
    let epochs = first.train_rmse.len();
    for r in reports {
        if r.train_rmse.len() != epochs || r.val_rmse.len() != epochs {
            return Err(Error::Mismatch(format!(
                "learning curves of {} and {}/{} epochs",
                epochs,
                r.train_rmse.len(),
                r.val_rmse.len()
            )));
        }
    }
    Ok(reports
        .iter()
        .flat_map(|r| {
            (0..epochs).map(move |e| LearningCurveRow {
                epoch: e + 1,
                encoding: r.encoding,
                train_rmse: r.train_rmse[e],
                val_rmse: r.val_rmse[e],
            })
        })
        .collect())
}

/// Median and 95th percentile (nearest rank) of `samples`.
pub fn summarize(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Empty);
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let median = 0.5 * (s[(n - 1) / 2] + s[n / 2]);
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    Ok((median, s[rank - 1]))
}

/// One instance of a method's full inference path, from channel to
/// powers. Returns the elapsed seconds.
fn time_once(
    method: Method,
    c: &ChannelSet<f64>,
    gamma: &SinrSpec<f64>,
    model: Option<&CnnModel<f64>>,
    opts: &SolverOptions,
) -> Result<f64> {
    let start = Instant::now();
    match (method, model) {
        (Method::Label, _) => {
            std::hint::black_box(solve_power_min(c, gamma, opts)?);
        }
        (_, Some(m)) => {
            let u = m.predict_directions(c);
            if let Ok(u) = u {
                std::hint::black_box(power_allocation(c, &u, gamma).ok());
            }
        }
        (other, None) => return Err(Error::InvalidParameter(format!("no timing path for `{other}`"))),
    }
    Ok(start.elapsed().as_secs_f64())
}

/// Wall-clock per instance for the label solver and each model on the
/// first `instances` channels. Runs on the calling thread only.
pub fn bench_time(
    channels: &[ChannelSet<f64>],
    models: &[&CnnModel<f64>],
    gamma_db: f64,
    instances: usize,
    opts: &SolverOptions,
) -> Result<Vec<TimingRecord>> {
    if instances < MIN_TIMING_INSTANCES {
        return Err(Error::InvalidParameter(format!(
            "timing needs at least {MIN_TIMING_INSTANCES} instances, got {instances}"
        )));
    }
    if channels.len() < instances {
        return Err(Error::InsufficientSamples {
            needed: instances,
            available: channels.len(),
        });
    }
    let channels = &channels[..instances];
    let k = channels[0].k();
    let gamma = SinrSpec::uniform_db(k, gamma_db)?;
    let mut runs: Vec<(Method, Option<&CnnModel<f64>>)> = vec![(Method::Label, None)];
    for m in models {
        if let Some(c) = channels.iter().find(|c| (c.n(), c.k()) != (m.n, m.k)) {
            return Err(Error::Mismatch(format!(
                "{} model is for n={}, k={}; channel has n={}, k={}",
                m.encoding,
                m.n,
                m.k,
                c.n(),
                c.k()
            )));
        }
        runs.push((Method::from(m.encoding), Some(*m)));
    }
    for &(method, model) in &runs {
        for c in channels.iter().cycle().take(WARMUP) {
            time_once(method, c, &gamma, model, opts)?;
        }
    }
    let mut out = Vec::with_capacity(runs.len());
    for &(method, model) in &runs {
        let times = channels
            .iter()
            .map(|c| time_once(method, c, &gamma, model, opts))
            .collect::<Result<Vec<_>>>()?;
        let (median_s, p95_s) = summarize(&times)?;
        out.push(TimingRecord {
            method,
            median_s,
            p95_s,
            instance_count: instances,
        });
    }
    out.sort_by_key(|r| r.method);
    Ok(out)
}

/// A row type with a fixed CSV header.
pub trait CsvRecord: Serialize + DeserializeOwned {
    const HEADER: &'static [&'static str];
}

impl CsvRecord for PowerCurvePoint {
    const HEADER: &'static [&'static str] = &["gamma_db", "method", "mean_total_power", "feasibility_rate", "sample_count"];
}

impl CsvRecord for LearningCurveRow {
    const HEADER: &'static [&'static str] = &["epoch", "encoding", "train_rmse", "val_rmse"];
}

impl CsvRecord for TimingRecord {
    const HEADER: &'static [&'static str] = &["method", "median_s", "p95_s", "instance_count"];
}

/// CSV text for `records`, header first (alone when `records` is empty).
/// Floats are written in their shortest round-trip form.
pub fn to_csv<R: CsvRecord>(records: &[R]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(R::HEADER)?;
    for r in records {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Mismatch(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn emit_csv<R: CsvRecord>(records: &[R], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = to_csv(records)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`emit_csv`], checking the header.
pub fn read_csv<R: CsvRecord>(path: impl AsRef<Path>) -> Result<Vec<R>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != R::HEADER {
        return Err(Error::Malformed {
            line: 1,
            field: "header".into(),
            detail: format!("expected {:?}, found {header:?}", R::HEADER),
        });
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        let (m, p) = summarize(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(m, 2.5);
        assert_eq!(p, 4.0);
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(summarize(&xs).unwrap(), (50.5, 95.0));
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn method_names() {
        assert_eq!("ZF".parse::<Method>().unwrap(), Method::Zf);
        assert!("cvx".parse::<Method>().is_err());
        assert_eq!(Method::from(Encoding::Fcnn), Method::Fcnn);
        assert!(Method::Label < Method::Tcnn && Method::Fcnn < Method::Mrc);
    }

    #[test]
    fn empty_csv_is_header_only() {
        assert_eq!(to_csv::<TimingRecord>(&[]).unwrap(), "method,median_s,p95_s,instance_count\n");
        assert_eq!(to_csv::<LearningCurveRow>(&[]).unwrap(), "epoch,encoding,train_rmse,val_rmse\n");
    }

    #[test]
    fn csv_rows_use_shortest_floats() {
        let rows = [PowerCurvePoint {
            gamma_db: 2.5,
            method: Method::Mrc,
            mean_total_power: 0.1 + 0.2,
            feasibility_rate: 1.0,
            sample_count: 3,
        }];
        assert_eq!(
            to_csv(&rows).unwrap(),
            "gamma_db,method,mean_total_power,feasibility_rate,sample_count\n2.5,mrc,0.30000000000000004,1.0,3\n"
        );
    }

    #[test]
    fn learning_curve_rows_align() {
        let rep = |encoding, n: usize| TrainReport {
            encoding,
            train_rmse: vec![0.5; n],
            val_rmse: vec![0.6; n],
            epoch_seconds: vec![0.0; n],
            checksum: String::new(),
            train_samples: 0,
            val_samples: 0,
        };
        let rows = learning_curves(&[rep(Encoding::Tcnn, 3), rep(Encoding::Fcnn, 3)]).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!((rows[3].epoch, rows[3].encoding), (1, Encoding::Fcnn));
        assert!(matches!(
            learning_curves(&[rep(Encoding::Tcnn, 3), rep(Encoding::Fcnn, 2)]),
            Err(Error::Mismatch(_))
        ));
    }
}
