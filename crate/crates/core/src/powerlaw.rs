//! Densification and heavy-tail diagnostics by least squares in log-log space.

use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};
use crate::graph::GraphKind;
use crate::ledger::LedgerRecord;

pub const DEFAULT_SNAPSHOTS: usize = 20;
pub const DEFAULT_BIN_RATIO: f64 = 2.0;
/// Sparse tail bins are mostly noise.
pub const DEFAULT_MIN_BIN_COUNT: usize = 5;
pub const DEFAULT_DEVIATION_THRESHOLD: f64 = 3.0;

/// Node and edge counts of a growing graph at one point in time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snapshot {
    pub t: i64,
    pub nodes: u64,
    pub edges: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensificationSeries {
    snapshots: Vec<Snapshot>,
}

impl DensificationSeries {
    pub fn new(snapshots: Vec<Snapshot>) -> Result<Self> {
        for w in snapshots.windows(2) {
            if w[1].t <= w[0].t {
                return Err(Error::Consistency(
                    "snapshot times must be strictly increasing".into(),
                ));
            }
            if w[1].nodes < w[0].nodes || w[1].edges < w[0].edges {
                return Err(Error::Consistency(
                    "node and edge counts must be non-decreasing".into(),
                ));
            }
        }
        Ok(DensificationSeries { snapshots })
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    /// Replays the ledger and records (N, E) after every `len / count`
    /// transactions. Snapshots that share a timestamp collapse into the
    /// latest one.
    pub fn from_ledger(records: &[LedgerRecord], kind: GraphKind, count: usize) -> Self {
        let mut snaps: Vec<Snapshot> = Vec::new();
        if records.is_empty() || count == 0 {
            return DensificationSeries { snapshots: snaps };
        }
        let count = count.min(records.len());
        let mut cuts: Vec<usize> = (1..=count).map(|i| i * records.len() / count).collect();
        cuts.dedup();

        let mut users: HashSet<u64> = HashSet::new();
        let (mut nodes, mut edges) = (0u64, 0u64);
        let mut next_cut = cuts.iter().peekable();
        for (i, r) in records.iter().enumerate() {
            match kind {
                GraphKind::Transaction => {
                    nodes += 1;
                    edges += r.inputs.iter().filter(|x| x.src_tx_id.is_some()).count() as u64;
                }
                GraphKind::User => {
                    let mut senders: Vec<u64> = r.inputs.iter().map(|x| x.user_id).collect();
                    senders.sort_unstable();
                    senders.dedup();
                    edges += (senders.len() * r.outputs.len()) as u64;
                    for u in senders
                        .into_iter()
                        .chain(r.outputs.iter().map(|o| o.user_id))
                    {
                        users.insert(u);
                    }
                    nodes = users.len() as u64;
                }
            }
            if next_cut.peek() == Some(&&(i + 1)) {
                next_cut.next();
                let snap = Snapshot {
                    t: r.timestamp,
                    nodes,
                    edges,
                };
                match snaps.last_mut() {
                    Some(last) if last.t >= snap.t => *last = snap,
                    _ => snaps.push(snap),
                }
            }
        }
        DensificationSeries { snapshots: snaps }
    }
}

/// One point entering a fit, in raw and log10 coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitPoint {
    pub x: f64,
    pub y: f64,
    pub log_x: f64,
    pub log_y: f64,
    pub fitted: f64,
    pub residual: f64,
    /// Raw value range `[lo, hi)` covered by a histogram bin.
    pub bin: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerLawFit {
    /// Densification alpha, or gamma for distributions (P(k) ~ k^-gamma).
    pub exponent: f64,
    /// Fitted log10 y at log10 x = 0.
    pub intercept: f64,
    pub r_squared: f64,
    pub points: Vec<FitPoint>,
    /// Points beyond the default deviation threshold.
    pub outlier_points: Vec<FitPoint>,
}

impl PowerLawFit {
    pub fn residual_sd(&self) -> f64 {
        let n = self.points.len() as f64;
        (self
            .points
            .iter()
            .map(|p| p.residual * p.residual)
            .sum::<f64>()
            / n)
            .sqrt()
    }
}

struct Line {
    slope: f64,
    intercept: f64,
    r_squared: f64,
}

fn least_squares(xs: &[f64], ys: &[f64]) -> Line {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - (intercept + slope * x)).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Line {
        slope,
        intercept,
        r_squared,
    }
}

fn fit_points(raw: Vec<(f64, f64, Option<(f64, f64)>)>, negate: bool) -> PowerLawFit {
    let xs: Vec<f64> = raw.iter().map(|p| p.0.log10()).collect();
    let ys: Vec<f64> = raw.iter().map(|p| p.1.log10()).collect();
    let line = least_squares(&xs, &ys);
    let points = raw
        .iter()
        .zip(xs.iter().zip(&ys))
        .map(|(&(x, y, bin), (&lx, &ly))| {
            let fitted = line.intercept + line.slope * lx;
            FitPoint {
                x,
                y,
                log_x: lx,
                log_y: ly,
                fitted,
                residual: ly - fitted,
                bin,
            }
        })
        .collect();
    let mut fit = PowerLawFit {
        exponent: if negate { -line.slope } else { line.slope },
        intercept: line.intercept,
        r_squared: line.r_squared,
        points,
        outlier_points: Vec::new(),
    };
    fit.outlier_points = deviation_points(&fit, DEFAULT_DEVIATION_THRESHOLD);
    fit
}

/// Least-squares line through (log N, log E); the slope is the exponent.
pub fn densification_fit(s: &DensificationSeries) -> Result<PowerLawFit> {
    let usable: Vec<(f64, f64, Option<(f64, f64)>)> = s
        .snapshots
        .iter()
        .filter(|p| p.nodes >= 2 && p.edges >= 1)
        .map(|p| (p.nodes as f64, p.edges as f64, None))
        .collect();
    if usable.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} usable snapshots, need at least 3",
            usable.len()
        )));
    }
    Ok(fit_points(usable, false))
}

/// How raw values are turned into (k, P(k)) points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Binning {
    /// Every distinct value is a point; P(k) is the fraction of values equal
    /// to k.
    Exact,
    /// Geometric bins `[x_min r^j, x_min r^(j+1))`. P is the count per unit
    /// width (per integer for integer data), so the slope estimates -gamma
    /// of the underlying density. Integer k stands for `[k, k + 1)`, so an
    /// integer bin is placed at `sqrt(first * (last + 1))`. Bins with fewer
    /// than `min_count` values are dropped.
    Log { ratio: f64, min_count: usize },
}

impl Default for Binning {
    fn default() -> Self {
        Binning::Log {
            ratio: DEFAULT_BIN_RATIO,
            min_count: DEFAULT_MIN_BIN_COUNT,
        }
    }
}

/// Log-log least squares over the binned distribution of the positive
/// entries of `values`. Zero-count bins are skipped.
pub fn degree_distribution_fit(values: &[f64], binning: Binning) -> Result<PowerLawFit> {
    let pos: Vec<f64> = values
        .iter()
        .copied()
        .filter(|v| v.is_finite() && *v > 0.0)
        .collect();
    if pos.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "{} nonzero values, need at least 10",
            pos.len()
        )));
    }
    let min = pos.iter().copied().fold(f64::INFINITY, f64::min);
    let max = pos.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Err(Error::Degenerate(format!("all values equal {min}")));
    }
    let total = pos.len() as f64;

    let raw = match binning {
        Binning::Exact => {
            let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
            for v in &pos {
                *counts.entry(v.to_bits()).or_default() += 1;
            }
            counts
                .into_iter()
                .map(|(bits, c)| {
                    let v = f64::from_bits(bits);
                    (v, c as f64 / total, Some((v, v)))
                })
                .collect::<Vec<_>>()
        }
        Binning::Log { ratio, min_count } => {
            if !(ratio > 1.0) {
                return Err(Error::Config(format!("bin ratio {ratio} must exceed 1")));
            }
            let integer = pos.iter().all(|v| v.fract() == 0.0 && *v < 9e15);
            let mut edges = vec![min];
            while *edges.last().unwrap() <= max {
                let next = edges.last().unwrap() * ratio;
                edges.push(next);
            }
            let nbins = edges.len() - 1;
            let mut counts = vec![0usize; nbins];
            for &v in &pos {
                // first edge above v, minus one
                let j = edges.partition_point(|&e| e <= v) - 1;
                counts[j.min(nbins - 1)] += 1;
            }
            let mut pts = Vec::new();
            for (j, &c) in counts.iter().enumerate() {
                if c == 0 || c < min_count {
                    continue;
                }
                let (lo, hi) = (edges[j], edges[j + 1]);
                let (x, width) = if integer {
                    let (ilo, ihi) = (lo.ceil() as u64, hi.ceil() as u64);
                    if ihi <= ilo {
                        continue;
                    }
                    ((ilo as f64 * ihi as f64).sqrt(), (ihi - ilo) as f64)
                } else {
                    ((lo * hi).sqrt(), hi - lo)
                };
                pts.push((x, c as f64 / (total * width), Some((lo, hi))));
            }
            pts
        }
    };
    if raw.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} non-empty bins, need at least 2",
            raw.len()
        )));
    }
    Ok(fit_points(raw, true))
}

/// Points whose absolute log residual exceeds `threshold` residual standard
/// deviations, largest first.
pub fn deviation_points(fit: &PowerLawFit, threshold: f64) -> Vec<FitPoint> {
    let sd = fit.residual_sd();
    // residuals at rounding level mean the law is exact
    let scale = fit.points.iter().fold(1.0f64, |a, p| a.max(p.log_y.abs()));
    if !(sd > 1e-9 * scale) {
        return Vec::new();
    }
    let mut out: Vec<FitPoint> = fit
        .points
        .iter()
        .filter(|p| p.residual.abs() > threshold * sd)
        .copied()
        .collect();
    out.sort_by(|a, b| {
        b.residual
            .abs()
            .total_cmp(&a.residual.abs())
            .then(a.x.total_cmp(&b.x))
    });
    out
}

/// Ids whose value lies in one of the given (binned) points.
pub fn ids_in_points(ids: &[u64], values: &[f64], points: &[FitPoint]) -> Vec<u64> {
    ids.iter()
        .zip(values)
        .filter(|(_, &v)| {
            points.iter().any(|p| match p.bin {
                Some((lo, hi)) if lo == hi => v == lo,
                Some((lo, hi)) => v >= lo && v < hi,
                None => false,
            })
        })
        .map(|(&id, _)| id)
        .collect()
}
