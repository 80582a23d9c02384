use std::collections::{HashMap, HashSet};
use std::io::{self, BufRead, Write};

use crate::{Recommendation, VertexId};

/// Column mapping for line-oriented edge lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub separator: char,
    pub has_header: bool,
    pub user_col: usize,
    pub product_col: usize,
    pub timestamp_col: usize,
    pub rating_col: usize,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            separator: ',',
            has_header: false,
            user_col: 0,
            product_col: 1,
            timestamp_col: 2,
            rating_col: 3,
        }
    }
}

/// Densely renumbered edges plus the dictionaries mapping ordinals back to
/// the original ids. `user_ids[k]` is the original id of user ordinal `k`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawEdges {
    pub user_ids: Vec<String>,
    pub product_ids: Vec<String>,
    pub edges: Vec<Recommendation>,
}

impl RawEdges {
    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_products(&self) -> usize {
        self.product_ids.len()
    }

    /// Inclusive (min, max) timestamp, or `None` for an edgeless graph.
    pub fn timestamp_range(&self) -> Option<(u64, u64)> {
        let min = self.edges.iter().map(|e| e.timestamp).min()?;
        let max = self.edges.iter().map(|e| e.timestamp).max()?;
        Some((min, max))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    /// 1-based.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    /// Non-blank data lines seen (header excluded).
    pub lines: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// Lines identical in (user, product, timestamp, rating) to an earlier line.
    pub duplicates: usize,
    /// First few rejections, for diagnostics.
    pub samples: Vec<Rejection>,
}

#[derive(Debug, Clone)]
pub struct IngestOutput {
    pub edges: RawEdges,
    pub report: IngestReport,
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("unreadable input: {0}")]
    Io(#[from] io::Error),
    #[error("{rejected} of {lines} lines rejected (limit is 10%); first: {first}")]
    TooManyRejected {
        rejected: usize,
        lines: usize,
        first: String,
    },
    #[error("too many distinct {0} ids for 32-bit ordinals")]
    IdOverflow(&'static str),
}

const MAX_SAMPLES: usize = 16;

#[derive(Default)]
struct Dictionary {
    ids: Vec<String>,
    index: HashMap<String, VertexId>,
}

impl Dictionary {
    fn intern(&mut self, id: &str, side: &'static str) -> Result<VertexId, IngestError> {
        if let Some(&ord) = self.index.get(id) {
            return Ok(ord);
        }
        let ord = VertexId::try_from(self.ids.len()).map_err(|_| IngestError::IdOverflow(side))?;
        self.ids.push(id.to_owned());
        self.index.insert(id.to_owned(), ord);
        Ok(ord)
    }
}

fn parse_timestamp(field: &str) -> Result<u64, String> {
    if let Ok(t) = field.parse::<u64>() {
        return Ok(t);
    }
    // sub-second precision is truncated
    match field.parse::<f64>() {
        Ok(t) if t.is_finite() && t >= 0.0 && t < u64::MAX as f64 => Ok(t.trunc() as u64),
        _ => Err(format!("bad timestamp {field:?}")),
    }
}

fn parse_rating(field: &str) -> Result<u8, String> {
    let value = match field.parse::<i64>() {
        Ok(v) => v,
        Err(_) => match field.parse::<f64>() {
            Ok(v) if v.is_finite() && v.fract() == 0.0 => v as i64,
            _ => return Err(format!("bad rating {field:?}")),
        },
    };
    if (1..=255).contains(&value) {
        Ok(value as u8)
    } else {
        Err(format!("rating {value} outside 1..=255"))
    }
}

struct ParsedLine<'a> {
    user: &'a str,
    product: &'a str,
    timestamp: u64,
    rating: u8,
}

fn parse_line<'a>(line: &'a str, schema: &Schema) -> Result<ParsedLine<'a>, String> {
    let fields: Vec<&str> = line.split(schema.separator).map(str::trim).collect();
    let get = |col: usize, name: &str| {
        fields
            .get(col)
            .copied()
            .filter(|f| !f.is_empty())
            .ok_or_else(|| format!("missing {name} column {col}"))
    };
    Ok(ParsedLine {
        user: get(schema.user_col, "user")?,
        product: get(schema.product_col, "product")?,
        timestamp: parse_timestamp(get(schema.timestamp_col, "timestamp")?)?,
        rating: parse_rating(get(schema.rating_col, "rating")?)?,
    })
}

/// Reads a line-oriented edge list, renumbering string ids to dense ordinals
/// in order of first appearance.
///
/// Malformed lines are skipped and counted; more than 10% rejected lines is
/// a hard failure. Exact duplicate lines are dropped and counted, while
/// repeated (user, product) pairs with a different timestamp or rating are
/// kept as separate events.
pub fn ingest<R: BufRead>(reader: R, schema: &Schema) -> Result<IngestOutput, IngestError> {
    let mut users = Dictionary::default();
    let mut products = Dictionary::default();
    let mut edges = Vec::new();
    let mut seen = HashSet::new();
    let mut report = IngestReport::default();
    let mut header_pending = schema.has_header;

    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if header_pending {
            header_pending = false;
            continue;
        }
        report.lines += 1;
        match parse_line(line, schema) {
            Ok(parsed) => {
                let rec = Recommendation {
                    user: users.intern(parsed.user, "user")?,
                    product: products.intern(parsed.product, "product")?,
                    timestamp: parsed.timestamp,
                    weight: parsed.rating,
                };
                if seen.insert(rec) {
                    edges.push(rec);
                    report.accepted += 1;
                } else {
                    report.duplicates += 1;
                }
            }
            Err(reason) => {
                report.rejected += 1;
                if report.samples.len() < MAX_SAMPLES {
                    report.samples.push(Rejection {
                        line: idx + 1,
                        reason,
                    });
                }
            }
        }
    }

    if report.rejected * 10 > report.lines {
        let first = report
            .samples
            .first()
            .map(|r| format!("line {}: {}", r.line, r.reason))
            .unwrap_or_default();
        return Err(IngestError::TooManyRejected {
            rejected: report.rejected,
            lines: report.lines,
            first,
        });
    }
    if edges.is_empty() {
        log::warn!("ingest: input contained no edges");
    } else if report.rejected > 0 {
        log::warn!("ingest: rejected {} of {} lines", report.rejected, report.lines);
    }

    Ok(IngestOutput {
        edges: RawEdges {
            user_ids: users.ids,
            product_ids: products.ids,
            edges,
        },
        report,
    })
}

/// Writes edges in the ingest text format using the original ids.
pub fn write_edges<W: Write>(mut out: W, edges: &RawEdges, separator: char) -> io::Result<()> {
    for e in &edges.edges {
        writeln!(
            out,
            "{}{sep}{}{sep}{}{sep}{}",
            edges.user_ids[e.user as usize],
            edges.product_ids[e.product as usize],
            e.timestamp,
            e.weight,
            sep = separator
        )?;
    }
    out.flush()
}
