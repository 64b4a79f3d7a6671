//! Protocol files: JSON with complex entries as `[re, im]` pairs and
//! row-major matrices.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::KrausFamily;
use crate::error::{Error, Result};
use crate::numerics::{c, ComplexMatrix};
use crate::protocol::CommitmentProtocol;

/// Largest dimension accepted from a file.
pub const MAX_FILE_DIM: usize = 64;
/// Largest number of Kraus operators per bit accepted from a file.
pub const MAX_FILE_OPERATORS: usize = 256;
/// Files above this size are rejected before parsing.
pub const MAX_FILE_BYTES: u64 = 64 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyFile {
    pub kraus: Vec<Vec<Vec<[f64; 2]>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolFile {
    pub name: String,
    pub dim_in: usize,
    pub dim_out: usize,
    pub bit0: FamilyFile,
    pub bit1: FamilyFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priors: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParseOptions {
    /// Complete trace-decreasing families with abort outcomes.
    pub complete: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self { complete: true }
    }
}

fn decode<'de, T: Deserialize<'de>>(text: &'de str) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Parse {
        path: e.path().to_string(),
        message: e.into_inner().to_string(),
    })?;
    de.end().map_err(|e| Error::Parse { path: ".".into(), message: e.to_string() })?;
    Ok(value)
}

impl ProtocolFile {
    pub fn from_json(text: &str) -> Result<Self> {
        decode(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("protocol files always serialize")
    }

    fn check_dims(&self) -> Result<()> {
        for (field, d) in [("dim_in", self.dim_in), ("dim_out", self.dim_out)] {
            if d == 0 || d > MAX_FILE_DIM {
                return Err(Error::Parse {
                    path: field.into(),
                    message: format!("must be between 1 and {MAX_FILE_DIM}, got {d}"),
                });
            }
        }
        Ok(())
    }

    fn family(&self, bit: usize) -> Result<KrausFamily> {
        let file = if bit == 0 { &self.bit0 } else { &self.bit1 };
        let at = |suffix: String| format!("bit{bit}.{suffix}");
        if file.kraus.is_empty() || file.kraus.len() > MAX_FILE_OPERATORS {
            return Err(Error::Parse {
                path: at("kraus".into()),
                message: format!("need between 1 and {MAX_FILE_OPERATORS} operators, got {}", file.kraus.len()),
            });
        }
        let mut ops = Vec::with_capacity(file.kraus.len());
        for (k, rows) in file.kraus.iter().enumerate() {
            if rows.len() != self.dim_out {
                return Err(Error::Parse {
                    path: at(format!("kraus[{k}]")),
                    message: format!("expected {} rows, got {}", self.dim_out, rows.len()),
                });
            }
            let mut m = ComplexMatrix::zeros(self.dim_out, self.dim_in);
            for (i, row) in rows.iter().enumerate() {
                if row.len() != self.dim_in {
                    return Err(Error::Parse {
                        path: at(format!("kraus[{k}][{i}]")),
                        message: format!("expected {} entries, got {}", self.dim_in, row.len()),
                    });
                }
                for (j, &[re, im]) in row.iter().enumerate() {
                    m[(i, j)] = c(re, im);
                }
            }
            ops.push(m);
        }
        let family = KrausFamily::new(self.dim_in, self.dim_out, ops)?;
        match &file.probs {
            Some(p) => family.with_weights(p.clone()),
            None => Ok(family),
        }
    }

    /// Validated protocol. Trace-decreasing families are completed with
    /// abort outcomes when `opts.complete` is set.
    pub fn to_protocol(&self, opts: ParseOptions) -> Result<CommitmentProtocol> {
        self.check_dims()?;
        let wrap = |bit: usize| move |e: Error| match e {
            e @ Error::Parse { .. } => e,
            e => Error::Validation { bit, source: Box::new(e) },
        };
        let f0 = self.family(0).map_err(wrap(0))?;
        let f1 = self.family(1).map_err(wrap(1))?;
        let mut protocol = CommitmentProtocol::new(self.name.clone(), f0, f1)?;
        if let Some(priors) = self.priors {
            protocol = protocol.with_priors(priors)?;
        }
        if opts.complete {
            protocol = protocol.completed()?;
        }
        Ok(protocol)
    }

    /// File form of a protocol, operators and weights as stored.
    pub fn from_protocol(protocol: &CommitmentProtocol) -> Self {
        let family = |bit: usize| {
            let f = protocol.family(bit);
            FamilyFile {
                kraus: f
                    .raw_operators()
                    .iter()
                    .map(|m| {
                        (0..m.nrows())
                            .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
                            .collect()
                    })
                    .collect(),
                probs: f.weights().map(<[f64]>::to_vec),
            }
        };
        Self {
            name: protocol.name().to_string(),
            dim_in: protocol.dim_in(),
            dim_out: protocol.dim_out(),
            bit0: family(0),
            bit1: family(1),
            priors: Some(protocol.priors()),
        }
    }
}

pub fn parse_protocol_str(text: &str, opts: ParseOptions) -> Result<CommitmentProtocol> {
    ProtocolFile::from_json(text)?.to_protocol(opts)
}

/// Byte entry point; invalid UTF-8 is a parse error.
pub fn parse_protocol_bytes(data: &[u8], opts: ParseOptions) -> Result<CommitmentProtocol> {
    let text = std::str::from_utf8(data)
        .map_err(|e| Error::Parse { path: ".".into(), message: e.to_string() })?;
    parse_protocol_str(text, opts)
}

pub fn parse_protocol(path: &Path, opts: ParseOptions) -> Result<CommitmentProtocol> {
    parse_protocol_str(&read_limited(path)?, opts)
}

fn read_limited(path: &Path) -> Result<String> {
    let len = std::fs::metadata(path)?.len();
    if len > MAX_FILE_BYTES {
        return Err(Error::Parse {
            path: path.display().to_string(),
            message: format!("file is {len} bytes, limit is {MAX_FILE_BYTES}"),
        });
    }
    Ok(std::fs::read_to_string(path)?)
}

pub fn emit_protocol(protocol: &CommitmentProtocol) -> String {
    ProtocolFile::from_protocol(protocol).to_json()
}

/// Parameters for a tradeoff scan over a built-in protocol family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanFile {
    pub family: String,
    pub parameters: Vec<f64>,
}

impl ScanFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let scan: Self = decode(text)?;
        if scan.parameters.is_empty() {
            return Err(Error::Parse { path: "parameters".into(), message: "must not be empty".into() });
        }
        if let Some(k) = scan.parameters.iter().position(|p| !p.is_finite()) {
            return Err(Error::Parse { path: format!("parameters[{k}]"), message: "must be finite".into() });
        }
        Ok(scan)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&read_limited(path)?)
    }
}
