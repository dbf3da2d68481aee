//! OSC 1.0 message codec, one message per datagram.
//!
//! Layout: padded address string, padded type-tag string starting with `,`,
//! then the arguments. Everything is big-endian and every field ends on a
//! 4-byte boundary. Bundles are not supported.

use regie_core::devio::{DeviceError, InputEvent, KeyEdge};
use regie_core::osc::{is_valid_address, OscValueError};
use regie_core::world::{Command, Input};
use thiserror::Error;

pub use regie_core::osc::{OscArg, OscMessage};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed OSC packet at byte {offset}: {reason}")]
pub struct MalformedPacket {
    pub offset: usize,
    pub reason: String,
}

fn malformed(offset: usize, reason: impl Into<String>) -> MalformedPacket {
    MalformedPacket {
        offset,
        reason: reason.into(),
    }
}

fn pad4(len: usize) -> usize {
    (len + 3) & !3
}

fn put_str(out: &mut Vec<u8>, s: &[u8]) {
    out.extend_from_slice(s);
    out.resize(out.len() + pad4(s.len() + 1) - s.len(), 0);
}

/// Encodes a message. Fails only when the address or a text argument
/// cannot be represented.
pub fn encode_osc(msg: &OscMessage) -> Result<Vec<u8>, OscValueError> {
    msg.validate()?;
    let mut out = Vec::with_capacity(64);
    put_str(&mut out, msg.address.as_bytes());
    let mut tags = Vec::with_capacity(msg.args.len() + 1);
    tags.push(b',');
    tags.extend(msg.args.iter().map(OscArg::type_tag));
    put_str(&mut out, &tags);
    for arg in &msg.args {
        match arg {
            OscArg::Int32(v) => out.extend_from_slice(&v.to_be_bytes()),
            OscArg::Float32(v) => out.extend_from_slice(&v.to_bits().to_be_bytes()),
            OscArg::Text(s) => put_str(&mut out, s.as_bytes()),
            OscArg::Blob(b) => {
                let len = i32::try_from(b.len()).expect("blob larger than 2 GiB");
                out.extend_from_slice(&len.to_be_bytes());
                out.extend_from_slice(b);
                out.resize(out.len() + pad4(b.len()) - b.len(), 0);
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn word(&mut self) -> Result<[u8; 4], MalformedPacket> {
        let end = self.pos + 4;
        let w = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| malformed(self.pos, "truncated argument"))?;
        self.pos = end;
        Ok(w.try_into().expect("slice of four"))
    }

    fn padding(&mut self, start: usize, end: usize) -> Result<(), MalformedPacket> {
        let pad = self
            .bytes
            .get(start..end)
            .ok_or_else(|| malformed(start, "truncated padding"))?;
        if let Some(i) = pad.iter().position(|&b| b != 0) {
            return Err(malformed(start + i, "nonzero padding byte"));
        }
        self.pos = end;
        Ok(())
    }

    fn string(&mut self) -> Result<&'a str, MalformedPacket> {
        let start = self.pos;
        let nul = self.bytes[start..]
            .iter()
            .position(|&b| b == 0)
            .ok_or_else(|| malformed(start, "unterminated string"))?;
        let text = std::str::from_utf8(&self.bytes[start..start + nul]).map_err(|_| malformed(start, "string is not UTF-8"))?;
        self.padding(start + nul, start + pad4(nul + 1))?;
        Ok(text)
    }

    fn blob(&mut self) -> Result<Vec<u8>, MalformedPacket> {
        let at = self.pos;
        let len = i32::from_be_bytes(self.word()?);
        let len = usize::try_from(len).map_err(|_| malformed(at, "negative blob size"))?;
        let start = self.pos;
        let data = self
            .bytes
            .get(start..start + len)
            .ok_or_else(|| malformed(start, "truncated blob"))?
            .to_vec();
        self.padding(start + len, start + pad4(len))?;
        Ok(data)
    }
}

/// Decodes one message, rejecting anything `encode_osc` would not produce.
pub fn decode_osc(bytes: &[u8]) -> Result<OscMessage, MalformedPacket> {
    if !bytes.len().is_multiple_of(4) {
        return Err(malformed(bytes.len(), "packet length is not a multiple of 4"));
    }
    let mut r = Reader { bytes, pos: 0 };
    if bytes.is_empty() {
        return Err(malformed(0, "empty packet"));
    }
    let address = r.string()?;
    if address == "#bundle" {
        return Err(malformed(0, "OSC bundles are not supported"));
    }
    if !is_valid_address(address) {
        return Err(malformed(0, format!("invalid address `{address}`")));
    }
    let tag_at = r.pos;
    if tag_at == bytes.len() {
        return Err(malformed(tag_at, "missing type tag string"));
    }
    let tags = r.string()?;
    let tags = tags
        .strip_prefix(',')
        .ok_or_else(|| malformed(tag_at, "type tag string must start with ','"))?;
    let mut args = Vec::with_capacity(tags.len());
    for (i, tag) in tags.chars().enumerate() {
        let arg = match tag {
            'i' => OscArg::Int32(i32::from_be_bytes(r.word()?)),
            'f' => OscArg::Float32(f32::from_bits(u32::from_be_bytes(r.word()?))),
            's' => OscArg::Text(r.string()?.to_string()),
            'b' => OscArg::Blob(r.blob()?),
            other => return Err(malformed(tag_at + 1 + i, format!("unsupported type tag '{other}'"))),
        };
        args.push(arg);
    }
    if r.pos != bytes.len() {
        return Err(malformed(r.pos, "trailing bytes after last argument"));
    }
    Ok(OscMessage {
        address: address.to_string(),
        args,
    })
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InboundError {
    #[error("no command bound to OSC address `{0}`")]
    UnknownAddress(String),
    #[error("`{address}` expects arguments {expected}")]
    BadArguments { address: String, expected: &'static str },
    #[error(transparent)]
    Device(#[from] DeviceError),
}

/// Maps an inbound `/regie/*` message onto the engine input queue.
///
/// | address          | args       |
/// |------------------|------------|
/// | `/regie/go`      |            |
/// | `/regie/goback`  |            |
/// | `/regie/cuelist` | s          |
/// | `/regie/bypass`  | i i [i]    |
/// | `/regie/key`     | s          |
/// | `/regie/midi`    | i i i      |
pub fn inbound_input(msg: &OscMessage, timestamp: f64) -> Result<Input, InboundError> {
    use OscArg::{Int32, Text};
    let bad = |expected| InboundError::BadArguments {
        address: msg.address.clone(),
        expected,
    };
    let input = match (msg.address.as_str(), msg.args.as_slice()) {
        ("/regie/go", []) => Input::Command(Command::Go),
        ("/regie/go", _) => return Err(bad("none")),
        ("/regie/goback", []) => Input::Command(Command::GoBack),
        ("/regie/goback", _) => return Err(bad("none")),
        ("/regie/cuelist", [Text(name)]) => Input::Command(Command::SelectCuelist { name: name.clone() }),
        ("/regie/cuelist", _) => return Err(bad("s")),
        ("/regie/bypass", [Int32(cue), Int32(set), rest @ ..]) if *cue > 0 && *set >= 0 && rest.len() <= 1 => {
            let flag = match rest {
                [] => None,
                [Int32(f)] => Some(*f != 0),
                _ => return Err(bad("i i [i]")),
            };
            Input::Command(Command::Bypass {
                cue: *cue as u32,
                set: *set as usize,
                flag,
            })
        }
        ("/regie/bypass", _) => return Err(bad("i i [i]")),
        ("/regie/key", [Text(key)]) => Input::Device(InputEvent::key(timestamp, key.clone(), KeyEdge::Down)),
        ("/regie/key", _) => return Err(bad("s")),
        ("/regie/midi", [Int32(s), Int32(d1), Int32(d2)]) => {
            let byte = |v: &i32| u8::try_from(*v).map_err(|_| bad("i i i"));
            Input::Device(InputEvent::midi(timestamp, byte(s)?, byte(d1)?, byte(d2)?)?)
        }
        ("/regie/midi", _) => return Err(bad("i i i")),
        (other, _) => return Err(InboundError::UnknownAddress(other.to_string())),
    };
    Ok(input)
}
