//! Synthetic ledgers with planted power-law structure and labeled anomalies.
//!
//! Growth model:
//! * every normal user sends `floor(X)` payments with `X` Pareto of tail
//!   index `degree_exponent - 1`, so user out-degrees follow
//!   `P(k) ~ k^-degree_exponent`;
//! * each payment has one sender and one receiver, the receiver picked with
//!   probability proportional to `1 + payments already received`;
//! * the remaining transaction slots are coinbase records;
//! * the number of sourced inputs of transaction `n` tops the running total
//!   up to `round(c * n^densification_exponent)`, so the transaction graph
//!   densifies with the target exponent. A payment whose quota is zero gets
//!   one unsourced input;
//! * payment values are Pareto distributed; fees are zero.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Pareto};

use crate::error::{Error, Result};
use crate::evaluate::Label;
use crate::graph::GraphKind;
use crate::ledger::{Amount, LedgerRecord, TxInput, TxOutput};

pub const START_TIME: i64 = 1_231_006_505;
pub const BLOCK_INTERVAL: i64 = 600;
pub const COINBASE_VALUE: u64 = 50 * 100_000_000;
/// Pareto scale and shape of normal payment values (BTC).
pub const VALUE_SCALE: f64 = 0.01;
pub const VALUE_SHAPE: f64 = 1.5;
const VALUE_CAP: f64 = 1e5;
/// Sourced inputs per transaction at the end of the ledger, on average.
const FINAL_EDGE_RATE: f64 = 1.5;
const RING_SIZE: usize = 4;
const BURST_RANGE: (usize, usize) = (20, 50);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnomalyProfile {
    /// Outgoing payments of 50 to 100 times the median value.
    ExtremeValue,
    /// Small cliques paying each other and nobody else.
    RingCluster,
    /// A long run of payments in consecutive blocks.
    BurstSender,
}

impl AnomalyProfile {
    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyProfile::ExtremeValue => "extreme-value",
            AnomalyProfile::RingCluster => "ring-cluster",
            AnomalyProfile::BurstSender => "burst-sender",
        }
    }
}

impl fmt::Display for AnomalyProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnomalyProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "extreme-value" | "extremevalue" => Ok(AnomalyProfile::ExtremeValue),
            "ring-cluster" | "ringcluster" => Ok(AnomalyProfile::RingCluster),
            "burst-sender" | "burstsender" => Ok(AnomalyProfile::BurstSender),
            _ => Err(Error::Config(format!("unknown anomaly profile {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_tx: usize,
    pub degree_exponent: f64,
    pub densification_exponent: f64,
    pub anomaly_rate: f64,
    pub anomaly_profile: AnomalyProfile,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 10_000,
            n_tx: 40_000,
            degree_exponent: 2.5,
            densification_exponent: 1.3,
            anomaly_rate: 0.01,
            anomaly_profile: AnomalyProfile::ExtremeValue,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn anomaly_count(&self) -> usize {
        (self.anomaly_rate * self.n_users as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_users < 2 {
            return Err(Error::Config("n_users must be at least 2".into()));
        }
        if self.n_tx == 0 {
            return Err(Error::Config("n_tx must be positive".into()));
        }
        if !(self.degree_exponent > 1.0) {
            return Err(Error::Config("degree_exponent must exceed 1".into()));
        }
        if !(self.densification_exponent > 1.0) {
            return Err(Error::Config("densification_exponent must exceed 1".into()));
        }
        if !(0.0..=0.1).contains(&self.anomaly_rate) {
            return Err(Error::Config("anomaly_rate must lie in [0, 0.1]".into()));
        }
        let a = self.anomaly_count();
        if a > self.n_users {
            return Err(Error::Config(format!(
                "{a} anomalies exceed {} users",
                self.n_users
            )));
        }
        if self.anomaly_profile == AnomalyProfile::RingCluster && a > 0 && a < 3 {
            return Err(Error::Config(format!(
                "ring-cluster needs at least 3 anomalies, got {a}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub ledger: Vec<LedgerRecord>,
    /// Planted anomalies, sorted.
    pub labels: Vec<Label>,
}

/// Median of the normal payment value distribution, in BTC.
pub fn median_value() -> f64 {
    VALUE_SCALE * 2f64.powf(1.0 / VALUE_SHAPE)
}

#[derive(Clone, Copy)]
enum Slot {
    Coinbase,
    Pay { sender: u64, extreme: bool },
    Ring { sender: u64, receiver: u64 },
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let users: Vec<u64> = (1..=cfg.n_users as u64).collect();

    let mut shuffled = users.clone();
    shuffled.shuffle(&mut rng);
    let mut anomalies: Vec<u64> = shuffled[..cfg.anomaly_count()].to_vec();
    anomalies.sort_unstable();
    let anomalous: HashSet<u64> = anomalies.iter().copied().collect();

    // sender schedule, grouped so bursts stay contiguous after shuffling
    let tail = cfg.degree_exponent - 1.0;
    let mut items: Vec<Vec<Slot>> = Vec::new();
    let mut payments = 0usize;
    for &u in &users {
        let profile = anomalous.contains(&u).then_some(cfg.anomaly_profile);
        match profile {
            Some(AnomalyProfile::RingCluster) => {}
            Some(AnomalyProfile::BurstSender) => {
                let b = rng.random_range(BURST_RANGE.0..=BURST_RANGE.1);
                payments += b;
                items.push(vec![
                    Slot::Pay {
                        sender: u,
                        extreme: false
                    };
                    b
                ]);
            }
            _ => {
                let x = (1.0 - rng.random::<f64>()).powf(-1.0 / tail);
                let d = x.min(cfg.n_tx as f64 + 1.0).floor() as usize;
                payments += d;
                let extreme = profile == Some(AnomalyProfile::ExtremeValue);
                for _ in 0..d {
                    items.push(vec![Slot::Pay { sender: u, extreme }]);
                }
            }
        }
    }
    if cfg.anomaly_profile == AnomalyProfile::RingCluster && !anomalies.is_empty() {
        let mut members = anomalies.clone();
        members.shuffle(&mut rng);
        for ring in ring_groups(&members) {
            for &s in &ring {
                for &r in &ring {
                    if s != r {
                        payments += 1;
                        items.push(vec![Slot::Ring {
                            sender: s,
                            receiver: r,
                        }]);
                    }
                }
            }
        }
    }
    if payments > cfg.n_tx {
        return Err(Error::Config(format!(
            "n_tx = {} cannot hold the {payments} payments drawn for {} users",
            cfg.n_tx, cfg.n_users
        )));
    }
    items.extend((payments..cfg.n_tx).map(|_| vec![Slot::Coinbase]));
    items.shuffle(&mut rng);
    let slots: Vec<Slot> = items.into_iter().flatten().collect();

    // preferential receiver urn; ring members only pay each other
    let mut urn: Vec<u64> = if cfg.anomaly_profile == AnomalyProfile::RingCluster {
        users
            .iter()
            .copied()
            .filter(|u| !anomalous.contains(u))
            .collect()
    } else {
        users.clone()
    };
    let mut received: Vec<Vec<u64>> = vec![Vec::new(); cfg.n_users + 1];
    let value_dist = Pareto::new(VALUE_SCALE, VALUE_SHAPE).expect("valid pareto");
    let median = median_value();

    let n_tx = cfg.n_tx as f64;
    let alpha = cfg.densification_exponent;
    let c = FINAL_EDGE_RATE * n_tx.powf(1.0 - alpha);
    let mut edges_so_far = 0u64;

    let mut ledger = Vec::with_capacity(cfg.n_tx);
    for (i, slot) in slots.into_iter().enumerate() {
        let n = i as u64 + 1;
        let timestamp = START_TIME + i as i64 * BLOCK_INTERVAL;
        let (sender, receiver, value) = match slot {
            Slot::Coinbase => {
                let to = users[rng.random_range(0..users.len())];
                received[to as usize].push(n);
                ledger.push(LedgerRecord {
                    tx_id: n,
                    timestamp,
                    inputs: vec![],
                    outputs: vec![TxOutput {
                        user_id: to,
                        value: Amount::from_sats(COINBASE_VALUE),
                    }],
                });
                continue;
            }
            Slot::Pay { sender, extreme } => {
                let receiver = loop {
                    let r = urn[rng.random_range(0..urn.len())];
                    if r != sender || urn.iter().all(|&x| x == sender) {
                        break r;
                    }
                };
                let btc = if extreme {
                    median * rng.random_range(50.0..=100.0)
                } else {
                    value_dist.sample(&mut rng).min(VALUE_CAP)
                };
                urn.push(receiver);
                (sender, receiver, btc)
            }
            Slot::Ring { sender, receiver } => {
                (sender, receiver, value_dist.sample(&mut rng).min(VALUE_CAP))
            }
        };
        let value = ((value * 1e8).round() as u64).max(1);
        received[receiver as usize].push(n);

        let target = (c * (n as f64).powf(alpha)).round() as u64;
        let quota = target.saturating_sub(edges_so_far).min(i as u64) as usize;
        let sources = pick_sources(&mut rng, &received[sender as usize], n, quota);
        edges_so_far += sources.len() as u64;
        let inputs = if sources.is_empty() {
            vec![TxInput {
                src_tx_id: None,
                user_id: sender,
                value: Amount::from_sats(value),
            }]
        } else {
            split_evenly(value, sources.len())
                .into_iter()
                .zip(sources)
                .map(|(v, src)| TxInput {
                    src_tx_id: Some(src),
                    user_id: sender,
                    value: Amount::from_sats(v),
                })
                .collect()
        };
        ledger.push(LedgerRecord {
            tx_id: n,
            timestamp,
            inputs,
            outputs: vec![TxOutput {
                user_id: receiver,
                value: Amount::from_sats(value),
            }],
        });
    }

    let labels = anomalies
        .into_iter()
        .map(|id| Label {
            kind: GraphKind::User,
            id,
        })
        .collect();
    Ok(SynthOutput { ledger, labels })
}

/// Consecutive groups of `RING_SIZE`; a short remainder joins the last group.
fn ring_groups(members: &[u64]) -> Vec<Vec<u64>> {
    let mut groups: Vec<Vec<u64>> = members.chunks(RING_SIZE).map(|c| c.to_vec()).collect();
    if groups.len() > 1 && groups.last().is_some_and(|g| g.len() < 3) {
        let last = groups.pop().expect("non-empty");
        groups.last_mut().expect("non-empty").extend(last);
    }
    groups
}

/// Up to `quota` distinct earlier transactions: the sender's most recent
/// receipts first, then uniformly random earlier ones.
fn pick_sources(rng: &mut ChaCha8Rng, receipts: &[u64], n: u64, quota: usize) -> Vec<u64> {
    let mut out: Vec<u64> = receipts
        .iter()
        .rev()
        .filter(|&&t| t < n)
        .take(quota)
        .copied()
        .collect();
    let mut seen: HashSet<u64> = out.iter().copied().collect();
    let earlier = n - 1;
    while out.len() < quota && (seen.len() as u64) < earlier {
        let t = rng.random_range(1..n);
        if seen.insert(t) {
            out.push(t);
        }
    }
    out.sort_unstable();
    out
}

fn split_evenly(total: u64, parts: usize) -> Vec<u64> {
    let base = total / parts as u64;
    let extra = (total % parts as u64) as usize;
    (0..parts).map(|i| base + u64::from(i < extra)).collect()
}
