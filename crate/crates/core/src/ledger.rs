//! Canonical ledger CSV: one transaction per row.
//!
//! ```text
//! tx_id,timestamp,inputs,outputs
//! 3,1700000000,1:4:30.0;2:9:20.0,7:49.5;4:0.5
//! ```
//!
//! `inputs` holds `src_txid:user:value` triples (empty `src_txid` for freshly
//! minted value), `outputs` holds `user:value` pairs. Values carry at most
//! eight fractional digits and are held internally as integer satoshis.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const LEDGER_HEADER: [&str; 4] = ["tx_id", "timestamp", "inputs", "outputs"];

const SATS_PER_BTC: u64 = 100_000_000;

/// A non-negative BTC amount stored as satoshis.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Amount(u64);

impl Amount {
    pub const ZERO: Amount = Amount(0);

    pub const fn from_sats(sats: u64) -> Self {
        Amount(sats)
    }

    pub const fn sats(self) -> u64 {
        self.0
    }

    pub fn btc(self) -> f64 {
        self.0 as f64 / SATS_PER_BTC as f64
    }

    /// Nearest representable amount; negative or non-finite input is rejected.
    pub fn from_btc(btc: f64) -> Option<Self> {
        if !btc.is_finite() || btc < 0.0 {
            return None;
        }
        let sats = (btc * SATS_PER_BTC as f64).round();
        if sats > u64::MAX as f64 {
            return None;
        }
        Some(Amount(sats as u64))
    }

    pub fn checked_add(self, other: Amount) -> Option<Amount> {
        self.0.checked_add(other.0).map(Amount)
    }
}

impl std::iter::Sum for Amount {
    fn sum<I: Iterator<Item = Amount>>(iter: I) -> Self {
        Amount(iter.map(|a| a.0).sum())
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 / SATS_PER_BTC;
        let frac = self.0 % SATS_PER_BTC;
        if frac == 0 {
            return write!(f, "{whole}.0");
        }
        let digits = format!("{frac:08}");
        write!(f, "{whole}.{}", digits.trim_end_matches('0'))
    }
}

impl FromStr for Amount {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (whole, frac) = match s.split_once('.') {
            Some((w, f)) => (w, f),
            None => (s, ""),
        };
        if whole.is_empty() || !whole.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("invalid amount {s:?}"));
        }
        if frac.len() > 8 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!(
                "invalid amount {s:?} (at most 8 fractional digits)"
            ));
        }
        let whole: u64 = whole
            .parse()
            .map_err(|_| format!("amount out of range {s:?}"))?;
        let mut frac_sats = 0u64;
        for (i, b) in frac.bytes().enumerate() {
            frac_sats += u64::from(b - b'0') * 10u64.pow(7 - i as u32);
        }
        whole
            .checked_mul(SATS_PER_BTC)
            .and_then(|w| w.checked_add(frac_sats))
            .map(Amount)
            .ok_or_else(|| format!("amount out of range {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxInput {
    pub src_tx_id: Option<u64>,
    pub user_id: u64,
    pub value: Amount,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxOutput {
    pub user_id: u64,
    pub value: Amount,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerRecord {
    pub tx_id: u64,
    pub timestamp: i64,
    pub inputs: Vec<TxInput>,
    pub outputs: Vec<TxOutput>,
}

impl LedgerRecord {
    pub fn is_coinbase(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn output_total(&self) -> Amount {
        self.outputs.iter().map(|o| o.value).sum()
    }

    pub fn input_total(&self) -> Amount {
        self.inputs.iter().map(|i| i.value).sum()
    }

    /// Every user appearing as an input or output party, in first-seen order.
    pub fn parties(&self) -> Vec<u64> {
        let mut seen = Vec::new();
        let users = self
            .inputs
            .iter()
            .map(|i| i.user_id)
            .chain(self.outputs.iter().map(|o| o.user_id));
        for u in users {
            if !seen.contains(&u) {
                seen.push(u);
            }
        }
        seen
    }

    fn inputs_field(&self) -> String {
        self.inputs
            .iter()
            .map(|i| {
                let src = i.src_tx_id.map(|s| s.to_string()).unwrap_or_default();
                format!("{src}:{}:{}", i.user_id, i.value)
            })
            .collect::<Vec<_>>()
            .join(";")
    }

    fn outputs_field(&self) -> String {
        self.outputs
            .iter()
            .map(|o| format!("{}:{}", o.user_id, o.value))
            .collect::<Vec<_>>()
            .join(";")
    }
}

fn parse_u64(field: &str, what: &str, line: u64) -> Result<u64> {
    field.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {what} {field:?}"),
    })
}

fn parse_amount(field: &str, line: u64) -> Result<Amount> {
    field
        .parse()
        .map_err(|message| Error::Parse { line, message })
}

/// Strips whitespace and one level of surrounding double quotes.
fn clean(field: &str) -> &str {
    let f = field.trim();
    f.strip_prefix('"')
        .and_then(|f| f.strip_suffix('"'))
        .map(str::trim)
        .unwrap_or(f)
}

fn parse_inputs(field: &str, line: u64) -> Result<Vec<TxInput>> {
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field
        .split(';')
        .map(|part| {
            let pieces: Vec<&str> = part.trim().split(':').collect();
            let [src, user, value] = pieces[..] else {
                return Err(Error::Parse {
                    line,
                    message: format!("input {part:?} is not src_txid:user:value"),
                });
            };
            let src = src.trim();
            let src_tx_id = if src.is_empty() {
                None
            } else {
                Some(parse_u64(src, "src_txid", line)?)
            };
            Ok(TxInput {
                src_tx_id,
                user_id: parse_u64(user.trim(), "user id", line)?,
                value: parse_amount(value.trim(), line)?,
            })
        })
        .collect()
}

fn parse_outputs(field: &str, line: u64) -> Result<Vec<TxOutput>> {
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field
        .split(';')
        .map(|part| {
            let pieces: Vec<&str> = part.trim().split(':').collect();
            let [user, value] = pieces[..] else {
                return Err(Error::Parse {
                    line,
                    message: format!("output {part:?} is not user:value"),
                });
            };
            Ok(TxOutput {
                user_id: parse_u64(user.trim(), "user id", line)?,
                value: parse_amount(value.trim(), line)?,
            })
        })
        .collect()
}

/// Parses ledger CSV from any reader, validating every record invariant.
pub fn read_ledger<R: Read>(reader: R) -> Result<Vec<LedgerRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);

    let mut records: Vec<LedgerRecord> = Vec::new();
    // tx_id -> timestamp of every record seen so far
    let mut seen: HashMap<u64, i64> = HashMap::new();
    let mut header_done = false;

    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let fields: Vec<&str> = row.iter().map(clean).collect();
        if !header_done {
            if fields != LEDGER_HEADER {
                return Err(Error::Parse {
                    line,
                    message: format!("expected header {:?}", LEDGER_HEADER.join(",")),
                });
            }
            header_done = true;
            continue;
        }
        if fields.len() != 4 {
            return Err(Error::Parse {
                line,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let tx_id = parse_u64(fields[0], "tx_id", line)?;
        let timestamp: i64 = fields[1].parse().map_err(|_| Error::Parse {
            line,
            message: format!("invalid timestamp {:?}", fields[1]),
        })?;
        let inputs = parse_inputs(fields[2], line)?;
        let outputs = parse_outputs(fields[3], line)?;
        if outputs.is_empty() {
            return Err(Error::Parse {
                line,
                message: format!("tx {tx_id} has no outputs"),
            });
        }
        if seen.contains_key(&tx_id) {
            return Err(Error::Reference {
                tx_id,
                message: "duplicates an earlier tx_id".into(),
            });
        }
        for input in &inputs {
            let Some(src) = input.src_tx_id else { continue };
            match seen.get(&src) {
                None => {
                    return Err(Error::Reference {
                        tx_id,
                        message: format!("spends unknown or later tx {src}"),
                    })
                }
                Some(&ts) if ts > timestamp => {
                    return Err(Error::Reference {
                        tx_id,
                        message: format!("spends tx {src} with a later timestamp"),
                    })
                }
                Some(_) => {}
            }
        }
        seen.insert(tx_id, timestamp);
        records.push(LedgerRecord {
            tx_id,
            timestamp,
            inputs,
            outputs,
        });
    }
    if !header_done {
        return Err(Error::Parse {
            line: 1,
            message: "missing header".into(),
        });
    }
    Ok(records)
}

pub fn parse_ledger(path: impl AsRef<Path>) -> Result<Vec<LedgerRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ledger(BufReader::new(file))
}

pub fn write_ledger<W: Write>(writer: W, records: &[LedgerRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let fmt_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(LEDGER_HEADER).map_err(fmt_err)?;
    for r in records {
        w.write_record([
            r.tx_id.to_string(),
            r.timestamp.to_string(),
            r.inputs_field(),
            r.outputs_field(),
        ])
        .map_err(fmt_err)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}
