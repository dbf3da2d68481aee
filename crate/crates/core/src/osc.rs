//! OSC message values. The wire codec lives in the network crate; cues only
//! need to describe what to send.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OscValueError {
    #[error("invalid OSC address `{0}`")]
    InvalidAddress(String),
    #[error("OSC text argument {0} contains a NUL byte")]
    InvalidText(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OscArg {
    Int32(i32),
    Float32(f32),
    Text(String),
    Blob(Vec<u8>),
}

impl OscArg {
    pub fn type_tag(&self) -> u8 {
        match self {
            OscArg::Int32(_) => b'i',
            OscArg::Float32(_) => b'f',
            OscArg::Text(_) => b's',
            OscArg::Blob(_) => b'b',
        }
    }
}

// Floats compare by bit pattern so that every encodable value, NaN included,
// survives a round trip as "equal".
impl PartialEq for OscArg {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (OscArg::Int32(a), OscArg::Int32(b)) => a == b,
            (OscArg::Float32(a), OscArg::Float32(b)) => a.to_bits() == b.to_bits(),
            (OscArg::Text(a), OscArg::Text(b)) => a == b,
            (OscArg::Blob(a), OscArg::Blob(b)) => a == b,
            _ => false,
        }
    }
}

impl fmt::Display for OscArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OscArg::Int32(v) => write!(f, "{v}"),
            OscArg::Float32(v) => write!(f, "{v}f"),
            OscArg::Text(v) => write!(f, "{v:?}"),
            OscArg::Blob(v) => write!(f, "<{} bytes>", v.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscMessage {
    pub address: String,
    pub args: Vec<OscArg>,
}

/// An address is `/`-rooted printable ASCII without spaces or the reserved
/// `#` and `,` characters.
pub fn is_valid_address(address: &str) -> bool {
    address.starts_with('/')
        && address
            .bytes()
            .all(|b| b.is_ascii_graphic() && b != b'#' && b != b',')
}

impl OscMessage {
    pub fn new(address: impl Into<String>, args: Vec<OscArg>) -> Result<Self, OscValueError> {
        let msg = OscMessage {
            address: address.into(),
            args,
        };
        msg.validate()?;
        Ok(msg)
    }

    pub fn validate(&self) -> Result<(), OscValueError> {
        if !is_valid_address(&self.address) {
            return Err(OscValueError::InvalidAddress(self.address.clone()));
        }
        for (i, arg) in self.args.iter().enumerate() {
            if let OscArg::Text(t) = arg {
                if t.contains('\0') {
                    return Err(OscValueError::InvalidText(i));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for OscMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.address)?;
        for arg in &self.args {
            write!(f, " {arg}")?;
        }
        Ok(())
    }
}
