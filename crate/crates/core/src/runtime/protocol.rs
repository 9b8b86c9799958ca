//! Wire format for fusion-center traffic.
//!
//! Frame layout, all little-endian:
//!
//!   magic "CMPM" | version u16 | kind u8 | processor u16 | round u32
//!   | n u32 | payload (n x f64) | crc32 of all preceding bytes
//!
//! Processor id 0 is the center; workers are 1-based.

use crate::error::{Error, Result};

pub const FRAME_MAGIC: [u8; 4] = *b"CMPM";
pub const FRAME_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageKind {
    /// A worker's end-of-round contribution estimate.
    Contribution,
    /// The center's aggregated contribution sum for the next round.
    Aggregate,
    Shutdown,
}

impl MessageKind {
    fn code(self) -> u8 {
        match self {
            MessageKind::Contribution => 0,
            MessageKind::Aggregate => 1,
            MessageKind::Shutdown => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(MessageKind::Contribution),
            1 => Ok(MessageKind::Aggregate),
            2 => Ok(MessageKind::Shutdown),
            other => Err(Error::Container(format!("unknown message kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionMessage {
    pub kind: MessageKind,
    pub round: u32,
    pub processor: u16,
    pub payload: Vec<f64>,
}

/// CRC-32 (IEEE, reflected polynomial 0xEDB88320).
pub fn crc32(bytes: &[u8]) -> u32 {
    static TABLE: std::sync::OnceLock<[u32; 256]> = std::sync::OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = [0u32; 256];
        for (i, slot) in t.iter_mut().enumerate() {
            let mut c = i as u32;
            for _ in 0..8 {
                c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            }
            *slot = c;
        }
        t
    });
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    !crc
}

pub fn encode_message(msg: &FusionMessage) -> Result<Vec<u8>> {
    let n: u32 = msg
        .payload
        .len()
        .try_into()
        .map_err(|_| Error::InvalidArgument("payload length overflows u32".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + msg.payload.len() * 8 + 4);
    out.extend_from_slice(&FRAME_MAGIC);
    out.extend_from_slice(&FRAME_VERSION.to_le_bytes());
    out.push(msg.kind.code());
    out.extend_from_slice(&msg.processor.to_le_bytes());
    out.extend_from_slice(&msg.round.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    for &v in &msg.payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Exact inverse of [`encode_message`]; each failure mode is reported
/// distinctly.
pub fn decode_message(bytes: &[u8]) -> Result<FusionMessage> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            needed: HEADER_LEN,
            got: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != FRAME_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != FRAME_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let kind = MessageKind::from_code(bytes[6])?;
    let processor = u16::from_le_bytes(bytes[7..9].try_into().unwrap());
    let round = u32::from_le_bytes(bytes[9..13].try_into().unwrap());
    let n = u32::from_le_bytes(bytes[13..17].try_into().unwrap()) as usize;
    let total = HEADER_LEN + n * 8 + 4;
    if bytes.len() < total {
        return Err(Error::Truncated {
            needed: total,
            got: bytes.len(),
        });
    }
    let expected = crc32(&bytes[..total - 4]);
    let found = u32::from_le_bytes(bytes[total - 4..total].try_into().unwrap());
    if expected != found {
        return Err(Error::CrcMismatch { expected, found });
    }
    let mut payload = Vec::with_capacity(n);
    for i in 0..n {
        let off = HEADER_LEN + i * 8;
        payload.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
    }
    Ok(FusionMessage {
        kind,
        round,
        processor,
        payload,
    })
}
