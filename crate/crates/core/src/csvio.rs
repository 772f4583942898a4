//! CSV files emitted by the experiment commands, with matching readers.
//!
//! Floats are written in shortest round-trip form, so reading a file back
//! reproduces every value bit for bit. Missing values (losses of episodes
//! without updates, incomplete reward blocks) are empty fields.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{IQRSummary, LearningCurve};
use crate::qtraj::QuantumRow;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed file: {0}")]
    Format(String),
}

/// One sample of a classical trajectory: time, quadratures `q_1, p_1, ...`
/// and energies `n_1, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub quadratures: Vec<f64>,
    pub energies: Vec<f64>,
}

pub fn trajectory_header(n_nodes: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for j in 1..=n_nodes {
        h.push(format!("q_{j}"));
        h.push(format!("p_{j}"));
    }
    h.extend((1..=n_nodes).map(|j| format!("n_{j}")));
    h
}

pub fn write_trajectory<W: Write>(w: W, n_nodes: usize, rows: &[TrajectoryRow]) -> Result<(), CsvError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(trajectory_header(n_nodes))?;
    for r in rows {
        if r.quadratures.len() != 2 * n_nodes || r.energies.len() != n_nodes {
            return Err(CsvError::Format(format!("row at t={} does not match {n_nodes} nodes", r.t)));
        }
        let fields = std::iter::once(&r.t).chain(&r.quadratures).chain(&r.energies);
        out.write_record(fields.map(|x| x.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trajectory<R: Read>(r: R) -> Result<(usize, Vec<TrajectoryRow>), CsvError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < 4 || !(header.len() - 1).is_multiple_of(3) {
        return Err(CsvError::Format(format!("{} trajectory columns", header.len())));
    }
    let n = (header.len() - 1) / 3;
    if header != trajectory_header(n) {
        return Err(CsvError::Format("unexpected trajectory header".into()));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let vals = rec?.iter().map(parse_f64).collect::<Result<Vec<_>, _>>()?;
        rows.push(TrajectoryRow {
            t: vals[0],
            quadratures: vals[1..1 + 2 * n].to_vec(),
            energies: vals[1 + 2 * n..].to_vec(),
        });
    }
    Ok((n, rows))
}

/// One line of an ensemble summary. `node` is one-based; `n_samples`
/// counts the values that entered the quantiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub metric: String,
    pub node: usize,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub n_samples: usize,
}

impl SummaryRow {
    pub fn new(metric: impl Into<String>, node: usize, s: IQRSummary, n_samples: usize) -> Self {
        Self { metric: metric.into(), node, q25: s.q25, median: s.median, q75: s.q75, n_samples }
    }

    pub fn summary(&self) -> IQRSummary {
        IQRSummary { q25: self.q25, median: self.median, q75: self.q75 }
    }
}

pub fn write_summary<W: Write>(w: W, rows: &[SummaryRow]) -> Result<(), CsvError> {
    write_serde(w, rows)
}

pub fn read_summary<R: Read>(r: R) -> Result<Vec<SummaryRow>, CsvError> {
    read_serde(r)
}

pub fn write_quantum<W: Write>(w: W, rows: &[QuantumRow]) -> Result<(), CsvError> {
    write_serde(w, rows)
}

pub fn read_quantum<R: Read>(r: R) -> Result<Vec<QuantumRow>, CsvError> {
    read_serde(r)
}

/// Ensemble quantiles of every node's energy at one sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct BandRow {
    pub t: f64,
    pub bands: Vec<IQRSummary>,
}

pub fn band_header(n_nodes: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for j in 1..=n_nodes {
        h.extend(["q25", "median", "q75"].iter().map(|q| format!("n_{j}_{q}")));
    }
    h
}

/// Columns `t, n_1_q25, n_1_median, n_1_q75, n_2_q25, ...`.
pub fn write_bands<W: Write>(w: W, n_nodes: usize, rows: &[BandRow]) -> Result<(), CsvError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(band_header(n_nodes))?;
    for r in rows {
        if r.bands.len() != n_nodes {
            return Err(CsvError::Format(format!("row at t={} does not match {n_nodes} nodes", r.t)));
        }
        let mut fields = vec![r.t.to_string()];
        for b in &r.bands {
            fields.extend([b.q25, b.median, b.q75].iter().map(|x| x.to_string()));
        }
        out.write_record(fields)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_bands<R: Read>(r: R) -> Result<(usize, Vec<BandRow>), CsvError> {
    let mut rdr = csv::Reader::from_reader(r);
    let width = rdr.headers()?.len();
    if width < 4 || (width - 1) % 3 != 0 {
        return Err(CsvError::Format(format!("{width} band columns")));
    }
    let n = (width - 1) / 3;
    if rdr.headers()?.iter().ne(band_header(n).iter().map(String::as_str)) {
        return Err(CsvError::Format("unexpected band header".into()));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let v = rec?.iter().map(parse_f64).collect::<Result<Vec<_>, _>>()?;
        let bands = v[1..].chunks_exact(3).map(|c| IQRSummary { q25: c[0], median: c[1], q75: c[2] }).collect();
        rows.push(BandRow { t: v[0], bands });
    }
    Ok((n, rows))
}

#[derive(Serialize, Deserialize)]
struct CurveRow {
    episode: usize,
    #[serde(rename = "return")]
    ret: f64,
    #[serde(rename = "R_tilde_100")]
    r_tilde: Option<f64>,
    q_loss: Option<f64>,
    pi_loss: Option<f64>,
}

/// Columns `episode, return, R_tilde_100, q_loss, pi_loss`. Episodes are
/// one-based; every episode of a complete 100-episode block carries that
/// block's mean return.
pub fn write_learning_curve<W: Write>(w: W, curve: &LearningCurve) -> Result<(), CsvError> {
    let blocks = curve.r_tilde();
    let finite = |x: f64| x.is_finite().then_some(x);
    let rows: Vec<CurveRow> = (0..curve.episodes())
        .map(|i| CurveRow {
            episode: i + 1,
            ret: curve.returns[i],
            r_tilde: blocks.get(i / 100).copied(),
            q_loss: finite(curve.q_loss[i]),
            pi_loss: finite(curve.pi_loss[i]),
        })
        .collect();
    write_serde(w, &rows)
}

pub fn read_learning_curve<R: Read>(r: R) -> Result<LearningCurve, CsvError> {
    let rows: Vec<CurveRow> = read_serde(r)?;
    let mut curve = LearningCurve::default();
    for (i, row) in rows.iter().enumerate() {
        if row.episode != i + 1 {
            return Err(CsvError::Format(format!("episode {} at line {}", row.episode, i + 2)));
        }
        curve.push(row.ret, row.q_loss.unwrap_or(f64::NAN), row.pi_loss.unwrap_or(f64::NAN));
    }
    Ok(curve)
}

fn write_serde<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<(), CsvError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

fn read_serde<R: Read, T: for<'de> Deserialize<'de>>(r: R) -> Result<Vec<T>, CsvError> {
    csv::Reader::from_reader(r).deserialize().map(|x| x.map_err(CsvError::from)).collect()
}

fn parse_f64(s: &str) -> Result<f64, CsvError> {
    s.trim().parse().map_err(|_| CsvError::Format(format!("not a number: {s:?}")))
}
