//! Rayleigh channel realizations, user ordering, and labeled JSONL datasets.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::precoding::SinrSpec;
use crate::scalar::Scalar;
use crate::socp::{BeamSolution, SolverStatus};

/// Downlink channel of `k` single-antenna users seen from an `n`-antenna
/// transmitter. Column `j` of `h` is user `j`'s channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet<T> {
    h: CMatrix<T>,
    sigma2: T,
}

impl<T: Scalar> ChannelSet<T> {
    /// Validates `sigma2 > 0`, finite entries, and non-zero columns. Does not reorder.
    pub fn new(h: CMatrix<T>, sigma2: T) -> Result<Self> {
        if h.rows() == 0 || h.cols() == 0 {
            return Err(Error::InvalidParameter(
                "channel needs at least one antenna and one user".into(),
            ));
        }
        if !(sigma2 > T::zero()) || !sigma2.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "noise variance must be positive, got {sigma2}"
            )));
        }
        if !h.is_finite() {
            return Err(Error::InvalidParameter("non-finite channel entry".into()));
        }
        if let Some(j) = (0..h.cols()).find(|&j| h.col_norm(j) == T::zero()) {
            return Err(Error::ZeroChannel(j));
        }
        Ok(Self { h, sigma2 })
    }

    pub fn n(&self) -> usize {
        self.h.rows()
    }

    pub fn k(&self) -> usize {
        self.h.cols()
    }

    pub fn h(&self) -> &CMatrix<T> {
        &self.h
    }

    /// Channel of user `k` (0-based).
    pub fn user(&self, k: usize) -> &[Complex<T>] {
        self.h.col(k)
    }

    pub fn sigma2(&self) -> T {
        self.sigma2
    }

    pub fn sigma(&self) -> T {
        self.sigma2.sqrt()
    }

    pub fn norms(&self) -> Vec<T> {
        (0..self.k()).map(|j| self.h.col_norm(j)).collect()
    }

    pub fn is_ordered(&self) -> bool {
        self.norms().windows(2).all(|w| w[0] <= w[1])
    }

    /// Same users, new noise variance.
    pub fn with_sigma2(&self, sigma2: T) -> Result<Self> {
        Self::new(self.h.clone(), sigma2)
    }
}

/// Stable permutation sorting users by ascending channel norm.
pub fn user_order<T: Scalar>(c: &ChannelSet<T>) -> Vec<usize> {
    let norms = c.norms();
    let mut order: Vec<usize> = (0..c.k()).collect();
    // sort_by is stable, so equal norms keep their original order.
    order.sort_by(|&a, &b| norms[a].partial_cmp(&norms[b]).expect("finite norms"));
    order
}

/// Permutes users into non-decreasing channel-norm order.
pub fn order_users<T: Scalar>(c: &ChannelSet<T>) -> ChannelSet<T> {
    let order = user_order(c);
    ChannelSet {
        h: c.h.permute_columns(&order),
        sigma2: c.sigma2,
    }
}

/// Identifies one reproducible random stream: `(seed, stream_id)` always
/// yields the same draws, independent of what other streams were used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Draws i.i.d. CN(0, 1) entries (each part variance 1/2) and orders users.
pub fn sample_rayleigh<T: Scalar>(
    n: usize,
    k: usize,
    sigma2: T,
    stream: RngStream,
) -> Result<ChannelSet<T>> {
    if n == 0 || k == 0 {
        return Err(Error::InvalidParameter(format!(
            "need n >= 1 and k >= 1, got n={n}, k={k}"
        )));
    }
    let mut rng = stream.rng();
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let mut h = CMatrix::zeros(n, k);
    for j in 0..k {
        for i in 0..n {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            h[(i, j)] = Complex::new(T::lit(re * scale), T::lit(im * scale));
        }
    }
    Ok(order_users(&ChannelSet::new(h, sigma2)?))
}

/// One labeled example: an ordered channel and its minimum-power beamformer.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSample {
    pub channel: ChannelSet<f64>,
    pub gamma_db: f64,
    /// Unit-norm label directions, one column per user.
    pub u: CMatrix<f64>,
    pub p: Vec<f64>,
    pub total_power: f64,
    pub status: SolverStatus,
    pub seed: u64,
    pub stream_id: u64,
}

impl DatasetSample {
    pub fn from_solution(
        channel: ChannelSet<f64>,
        gamma_db: f64,
        sol: &BeamSolution<f64>,
        stream: RngStream,
    ) -> Self {
        let (u, p, total_power) = if sol.status == SolverStatus::Optimal {
            (sol.u.clone(), sol.p.clone(), sol.p.iter().sum())
        } else {
            (CMatrix::zeros(channel.n(), channel.k()), vec![0.0; channel.k()], 0.0)
        };
        Self {
            channel,
            gamma_db,
            u,
            p,
            total_power,
            status: sol.status,
            seed: stream.seed,
            stream_id: stream.stream_id,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolverStatus::Optimal
    }
}

/// Produces the label for one channel.
pub trait Labeler: Sync {
    fn label(&self, channel: &ChannelSet<f64>, gamma: &SinrSpec<f64>) -> BeamSolution<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetParams {
    pub count: usize,
    pub n: usize,
    pub k: usize,
    pub sigma2: f64,
    pub gamma_db: f64,
    pub seed: u64,
}

/// Generates `count` samples; sample `i` draws from stream `(seed, i)` so
/// the output does not depend on how work is scheduled. Solver failures are
/// recorded in the sample, never raised.
pub fn generate_dataset<L: Labeler>(params: &DatasetParams, labeler: &L) -> Result<Vec<DatasetSample>> {
    if params.count == 0 {
        return Err(Error::InvalidParameter("count must be at least 1".into()));
    }
    let gamma = SinrSpec::uniform_db(params.k, params.gamma_db)?;
    (0..params.count as u64)
        .into_par_iter()
        .map(|i| {
            let stream = RngStream::new(params.seed, i);
            let channel = sample_rayleigh(params.n, params.k, params.sigma2, stream)?;
            let sol = labeler.label(&channel, &gamma);
            Ok(DatasetSample::from_solution(channel, params.gamma_db, &sol, stream))
        })
        .collect()
}

#[derive(Serialize)]
struct SampleRecord<'a> {
    n: usize,
    k: usize,
    sigma2: f64,
    gamma_db: f64,
    h_re: Vec<Vec<f64>>,
    h_im: Vec<Vec<f64>>,
    u_re: Vec<Vec<f64>>,
    u_im: Vec<Vec<f64>>,
    p: &'a [f64],
    total_power: f64,
    status: SolverStatus,
    seed: u64,
    stream_id: u64,
}

/// Serializes one sample as a single JSON line (no trailing newline).
pub fn sample_to_line(s: &DatasetSample) -> String {
    let (h_re, h_im) = s.channel.h().to_parts();
    let (u_re, u_im) = s.u.to_parts();
    let rec = SampleRecord {
        n: s.channel.n(),
        k: s.channel.k(),
        sigma2: s.channel.sigma2(),
        gamma_db: s.gamma_db,
        h_re,
        h_im,
        u_re,
        u_im,
        p: &s.p,
        total_power: s.total_power,
        status: s.status,
        seed: s.seed,
        stream_id: s.stream_id,
    };
    serde_json::to_string(&rec).expect("finite sample serializes")
}

pub fn save_dataset(samples: &[DatasetSample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for s in samples {
        writeln!(out, "{}", sample_to_line(s)).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<DatasetSample>> {
    read_lines(path, parse_sample_line)
}

/// Loads bare channels: any JSONL whose lines carry at least `n`, `k`,
/// `sigma2`, `h_re`, `h_im`. Dataset files qualify.
pub fn load_channels(path: impl AsRef<Path>) -> Result<Vec<ChannelSet<f64>>> {
    read_lines(path, |line, idx| {
        let v = parse_object(line, idx)?;
        parse_channel(&v, idx)
    })
}

fn read_lines<R>(
    path: impl AsRef<Path>,
    parse: impl Fn(&str, usize) -> Result<R>,
) -> Result<Vec<R>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse(&line, i + 1)?);
    }
    Ok(out)
}

fn malformed(line: usize, field: &str, detail: impl Into<String>) -> Error {
    Error::Malformed {
        line,
        field: field.to_string(),
        detail: detail.into(),
    }
}

fn parse_object(text: &str, line: usize) -> Result<serde_json::Map<String, Value>> {
    match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(malformed(line, "<line>", "expected a JSON object")),
        Err(e) => Err(malformed(line, "<line>", e.to_string())),
    }
}

type Obj = serde_json::Map<String, Value>;

fn get<'a>(obj: &'a Obj, line: usize, field: &str) -> Result<&'a Value> {
    obj.get(field)
        .ok_or_else(|| malformed(line, field, "missing"))
}

fn get_f64(obj: &Obj, line: usize, field: &str) -> Result<f64> {
    get(obj, line, field)?
        .as_f64()
        .ok_or_else(|| malformed(line, field, "expected a number"))
}

fn get_u64(obj: &Obj, line: usize, field: &str) -> Result<u64> {
    get(obj, line, field)?
        .as_u64()
        .ok_or_else(|| malformed(line, field, "expected a non-negative integer"))
}

fn get_vec(obj: &Obj, line: usize, field: &str, len: usize) -> Result<Vec<f64>> {
    let arr = get(obj, line, field)?
        .as_array()
        .ok_or_else(|| malformed(line, field, "expected an array"))?;
    if arr.len() != len {
        return Err(malformed(line, field, format!("expected {len} entries, found {}", arr.len())));
    }
    arr.iter()
        .map(|v| v.as_f64().ok_or_else(|| malformed(line, field, "expected numbers")))
        .collect()
}

fn get_table(obj: &Obj, line: usize, field: &str, rows: usize, cols: usize) -> Result<Vec<Vec<f64>>> {
    let arr = get(obj, line, field)?
        .as_array()
        .ok_or_else(|| malformed(line, field, "expected an array of rows"))?;
    if arr.len() != rows {
        return Err(malformed(line, field, format!("expected {rows} rows, found {}", arr.len())));
    }
    arr.iter()
        .map(|row| {
            let row = row
                .as_array()
                .ok_or_else(|| malformed(line, field, "expected an array of rows"))?;
            if row.len() != cols {
                return Err(malformed(line, field, format!("expected rows of {cols}, found {}", row.len())));
            }
            row.iter()
                .map(|v| v.as_f64().ok_or_else(|| malformed(line, field, "expected numbers")))
                .collect()
        })
        .collect()
}

fn parse_channel(obj: &Obj, line: usize) -> Result<ChannelSet<f64>> {
    let n = get_u64(obj, line, "n")? as usize;
    let k = get_u64(obj, line, "k")? as usize;
    let sigma2 = get_f64(obj, line, "sigma2")?;
    let h_re = get_table(obj, line, "h_re", n, k)?;
    let h_im = get_table(obj, line, "h_im", n, k)?;
    let h = CMatrix::from_parts(&h_re, &h_im).ok_or_else(|| malformed(line, "h_re", "empty channel"))?;
    ChannelSet::new(h, sigma2).map_err(|e| malformed(line, "h_re", e.to_string()))
}

/// Parses one dataset line; `line` is the 1-based line number for errors.
pub fn parse_sample_line(text: &str, line: usize) -> Result<DatasetSample> {
    let obj = parse_object(text, line)?;
    let channel = parse_channel(&obj, line)?;
    let (n, k) = (channel.n(), channel.k());
    let gamma_db = get_f64(&obj, line, "gamma_db")?;
    let u_re = get_table(&obj, line, "u_re", n, k)?;
    let u_im = get_table(&obj, line, "u_im", n, k)?;
    let u = CMatrix::from_parts(&u_re, &u_im).expect("shape checked");
    let p = get_vec(&obj, line, "p", k)?;
    let total_power = get_f64(&obj, line, "total_power")?;
    let status = serde_json::from_value::<SolverStatus>(get(&obj, line, "status")?.clone())
        .map_err(|e| malformed(line, "status", e.to_string()))?;
    let seed = get_u64(&obj, line, "seed")?;
    let stream_id = get_u64(&obj, line, "stream_id")?;
    Ok(DatasetSample {
        channel,
        gamma_db,
        u,
        p,
        total_power,
        status,
        seed,
        stream_id,
    })
}
