//! The `report.json` bundle. Timing sits outside the hashed payload so that
//! identical configs give identical `payload_hash` values.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    /// A certificate, inequality or convergence check did not hold.
    Fail,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail => 2,
        }
    }

    pub fn and(self, other: Status) -> Status {
        if self == Status::Pass && other == Status::Pass {
            Status::Pass
        } else {
            Status::Fail
        }
    }

    pub fn from_bool(ok: bool) -> Status {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub version: u32,
    pub command: String,
    pub config: serde_json::Value,
    pub input_hash: String,
    pub status: Status,
    pub payload: serde_json::Value,
    pub payload_hash: String,
    pub timing_ms: u128,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the compact JSON serialisation.
pub fn json_hash(value: &serde_json::Value) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("JSON value serialises"))
}

/// SHA-256 over the little-endian bytes of a float sequence.
pub fn float_bits_hash<'a>(values: impl IntoIterator<Item = &'a f64>) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}
