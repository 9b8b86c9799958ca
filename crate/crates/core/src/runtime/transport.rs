//! Message links between the fusion center and workers.
//!
//! Delivery is ordered and reliable on both implementations: in-process
//! channels for the parallel mode, framed loopback TCP for the distributed
//! mode.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::mpsc::{Receiver, Sender};
use std::time::Duration;

use crate::error::{Error, Result};

use super::protocol::{decode_message, encode_message, FusionMessage, HEADER_LEN};

pub trait Link {
    fn send(&mut self, msg: &FusionMessage) -> Result<()>;
    fn recv(&mut self) -> Result<FusionMessage>;
}

/// One endpoint of a bidirectional in-process link.
pub struct ChannelLink {
    pub tx: Sender<FusionMessage>,
    pub rx: Receiver<FusionMessage>,
}

impl ChannelLink {
    /// A connected (center endpoint, worker endpoint) pair.
    pub fn pair() -> (ChannelLink, ChannelLink) {
        let (to_worker, from_center) = std::sync::mpsc::channel();
        let (to_center, from_worker) = std::sync::mpsc::channel();
        (
            ChannelLink {
                tx: to_worker,
                rx: from_worker,
            },
            ChannelLink {
                tx: to_center,
                rx: from_center,
            },
        )
    }
}

impl Link for ChannelLink {
    fn send(&mut self, msg: &FusionMessage) -> Result<()> {
        self.tx.send(msg.clone()).map_err(|_| Error::Transport {
            round: msg.round as usize,
            detail: "peer hung up".into(),
        })
    }

    fn recv(&mut self) -> Result<FusionMessage> {
        self.rx.recv().map_err(|_| Error::Transport {
            round: 0,
            detail: "peer hung up".into(),
        })
    }
}

/// Framed messages over a TCP stream.
pub struct TcpLink {
    stream: TcpStream,
}

impl TcpLink {
    pub fn new(stream: TcpStream, timeout: Option<Duration>) -> Result<Self> {
        stream.set_read_timeout(timeout)?;
        stream.set_write_timeout(timeout)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }
}

impl Link for TcpLink {
    fn send(&mut self, msg: &FusionMessage) -> Result<()> {
        let bytes = encode_message(msg)?;
        self.stream.write_all(&bytes).map_err(|e| Error::Transport {
            round: msg.round as usize,
            detail: format!("send failed: {e}"),
        })
    }

    fn recv(&mut self) -> Result<FusionMessage> {
        let mut header = [0u8; HEADER_LEN];
        self.stream
            .read_exact(&mut header)
            .map_err(|e| Error::Transport {
                round: 0,
                detail: format!("recv failed: {e}"),
            })?;
        let n = u32::from_le_bytes(header[13..17].try_into().unwrap()) as usize;
        let mut frame = vec![0u8; HEADER_LEN + n * 8 + 4];
        frame[..HEADER_LEN].copy_from_slice(&header);
        self.stream
            .read_exact(&mut frame[HEADER_LEN..])
            .map_err(|e| Error::Transport {
                round: 0,
                detail: format!("recv failed: {e}"),
            })?;
        decode_message(&frame)
    }
}
