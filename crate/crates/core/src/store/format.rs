use serde::{Deserialize, Serialize};

use super::FormatError;
use crate::Recommendation;

pub const MAGIC: [u8; 4] = *b"ORFL";
pub const FORMAT_VERSION: u16 = 1;
/// magic + version + record count
pub const HEADER_LEN: usize = 4 + 2 + 8;
/// user u32 + product u32 + timestamp u64 + weight u8
pub const RECORD_LEN: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShardHeader {
    pub version: u16,
    pub records: u64,
}

impl ShardHeader {
    pub fn new(records: u64) -> Self {
        Self {
            version: FORMAT_VERSION,
            records,
        }
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..4].copy_from_slice(&MAGIC);
        out[4..6].copy_from_slice(&self.version.to_le_bytes());
        out[6..14].copy_from_slice(&self.records.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        if bytes.len() < HEADER_LEN {
            return Err(FormatError::Truncated {
                needed: HEADER_LEN,
                available: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(FormatError::BadMagic(magic));
        }
        let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(FormatError::Version(version));
        }
        let records = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
        Ok(Self { version, records })
    }
}

pub(crate) fn encode_record(rec: &Recommendation, out: &mut Vec<u8>) {
    out.extend_from_slice(&rec.user.to_le_bytes());
    out.extend_from_slice(&rec.product.to_le_bytes());
    out.extend_from_slice(&rec.timestamp.to_le_bytes());
    out.push(rec.weight);
}

pub(crate) fn decode_record(bytes: &[u8]) -> Recommendation {
    debug_assert_eq!(bytes.len(), RECORD_LEN);
    Recommendation {
        user: u32::from_le_bytes(bytes[0..4].try_into().unwrap()),
        product: u32::from_le_bytes(bytes[4..8].try_into().unwrap()),
        timestamp: u64::from_le_bytes(bytes[8..16].try_into().unwrap()),
        weight: bytes[16],
    }
}

/// Decodes a run of packed records. `first_index` only feeds error messages.
pub fn decode_records(
    bytes: &[u8],
    first_index: u64,
    out: &mut Vec<Recommendation>,
) -> Result<(), FormatError> {
    if !bytes.len().is_multiple_of(RECORD_LEN) {
        return Err(FormatError::Truncated {
            needed: bytes.len().div_ceil(RECORD_LEN) * RECORD_LEN,
            available: bytes.len(),
        });
    }
    for (i, chunk) in bytes.chunks_exact(RECORD_LEN).enumerate() {
        let rec = decode_record(chunk);
        if rec.weight == 0 {
            return Err(FormatError::ZeroWeight {
                index: first_index + i as u64,
            });
        }
        out.push(rec);
    }
    Ok(())
}

/// Serializes a complete shard (or mirror) file.
pub fn encode_shard(records: &[Recommendation]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + records.len() * RECORD_LEN);
    out.extend_from_slice(&ShardHeader::new(records.len() as u64).encode());
    for rec in records {
        encode_record(rec, &mut out);
    }
    out
}

/// Parses a complete shard file held in memory.
pub fn decode_shard(bytes: &[u8]) -> Result<(ShardHeader, Vec<Recommendation>), FormatError> {
    let header = ShardHeader::decode(bytes)?;
    let payload = &bytes[HEADER_LEN..];
    let actual = (payload.len() / RECORD_LEN) as u64;
    if !payload.len().is_multiple_of(RECORD_LEN) || actual != header.records {
        return Err(FormatError::CountMismatch {
            declared: header.records,
            actual,
        });
    }
    let mut records = Vec::with_capacity(actual as usize);
    decode_records(payload, 0, &mut records)?;
    Ok((header, records))
}

/// One shard (or mirror part) file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardDescriptor {
    pub file: String,
    /// Smallest sort-key vertex in the file (product for shards, user for the mirror).
    pub first_vertex: u32,
    pub last_vertex: u32,
    /// Byte offset of the first record.
    pub offset: u64,
    pub records: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u16,
    pub num_users: u64,
    pub num_products: u64,
    pub num_edges: u64,
    pub record_len: u64,
    pub memory_budget: u64,
    pub block_size: u64,
    /// Bytes of packed records in one ordering.
    pub dataset_bytes: u64,
    /// Blocks occupied by the product-ordered shard files.
    pub blocks: u64,
    /// Hash of the sorted records and both dictionaries.
    pub dataset_id: String,
    /// Hash of the raw input plus layout parameters, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_hash: Option<String>,
    pub duplicates_dropped: u64,
    pub user_dictionary: String,
    pub product_dictionary: String,
    pub shards: Vec<ShardDescriptor>,
    pub mirror: Vec<ShardDescriptor>,
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Self, FormatError> {
        let manifest: Manifest =
            serde_json::from_str(text).map_err(|e| FormatError::Manifest(e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        text
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        let bad = |msg: String| Err(FormatError::Manifest(msg));
        if self.format_version != FORMAT_VERSION {
            return Err(FormatError::Version(self.format_version));
        }
        if self.record_len != RECORD_LEN as u64 {
            return bad(format!("record length {} != {RECORD_LEN}", self.record_len));
        }
        if self.block_size == 0 {
            return bad("block size is zero".into());
        }
        if self.shards.len() != self.mirror.len() {
            return bad(format!(
                "{} shards but {} mirror parts",
                self.shards.len(),
                self.mirror.len()
            ));
        }
        let total: u64 = self.shards.iter().map(|s| s.records).sum();
        let mirror_total: u64 = self.mirror.iter().map(|s| s.records).sum();
        if total != self.num_edges || mirror_total != self.num_edges {
            return bad(format!(
                "edge count {} disagrees with shards ({total}) / mirror ({mirror_total})",
                self.num_edges
            ));
        }
        let names = self
            .shards
            .iter()
            .chain(&self.mirror)
            .map(|p| p.file.as_str())
            .chain([self.user_dictionary.as_str(), self.product_dictionary.as_str()]);
        for name in names {
            if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
                return bad(format!("illegal file name {name:?}"));
            }
        }
        for part in self.shards.iter().chain(&self.mirror) {
            if part.first_vertex > part.last_vertex {
                return bad(format!("shard {} has an inverted vertex range", part.file));
            }
        }
        for pair in self.shards.windows(2) {
            if pair[0].last_vertex >= pair[1].first_vertex {
                return bad("product shard ranges overlap or are unsorted".into());
            }
        }
        Ok(())
    }
}
