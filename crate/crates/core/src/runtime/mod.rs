//! Message-passing execution of the fusion protocol.
//!
//! Per outer round the center broadcasts one aggregate to every worker and
//! collects exactly one contribution from each; after the final round it
//! sends a shutdown. Workers hold their own column block and never share it
//! with the center or each other. The center sums contributions in ascending
//! processor id regardless of arrival order, so trajectories are
//! bit-identical to the sequential engine.

pub mod protocol;
pub mod transport;

pub use protocol::{crc32, decode_message, encode_message, FusionMessage, MessageKind};
pub use transport::{ChannelLink, Link, TcpLink};

use std::net::{TcpListener, TcpStream};
use std::time::Duration;

use crate::denoise::Denoiser;
use crate::error::{Error, Result};
use crate::model::ProblemInstance;
use crate::multiproc::{
    build_workers, finish_run, fusion_aggregate, CmpRun, DampingConfig, RunOptions, Schedule,
    Worker,
};
use crate::scalar::Real;

const WORKER_TIMEOUT: Duration = Duration::from_secs(120);

/// Center side: drives `outer_rounds` fusion rounds over the given links
/// (one per worker, ascending processor id) and shuts the workers down.
fn drive_center<T: Real, L: Link>(links: &mut [L], schedule: &Schedule, n: usize) -> Result<()> {
    let mut g: Vec<T> = vec![T::zero(); n];
    for s in 1..=schedule.outer_rounds() {
        let payload: Vec<f64> = g.iter().map(|v| v.as_f64()).collect();
        for link in links.iter_mut() {
            link.send(&FusionMessage {
                kind: MessageKind::Aggregate,
                round: s as u32,
                processor: 0,
                payload: payload.clone(),
            })
            .map_err(|e| at_round(e, s))?;
        }
        let mut contributions: Vec<Vec<T>> = Vec::with_capacity(links.len());
        for (idx, link) in links.iter_mut().enumerate() {
            let msg = link.recv().map_err(|e| at_round(e, s))?;
            if msg.kind != MessageKind::Contribution
                || msg.round != s as u32
                || msg.processor as usize != idx + 1
                || msg.payload.len() != n
            {
                return Err(Error::Transport {
                    round: s,
                    detail: format!(
                        "protocol violation from worker {}: kind {:?}, round {}, n {}",
                        idx + 1,
                        msg.kind,
                        msg.round,
                        msg.payload.len()
                    ),
                });
            }
            contributions.push(msg.payload.iter().map(|&v| T::of(v)).collect());
        }
        g = fusion_aggregate(&contributions)?;
    }
    for link in links.iter_mut() {
        link.send(&FusionMessage {
            kind: MessageKind::Shutdown,
            round: 0,
            processor: 0,
            payload: vec![],
        })
        .map_err(|e| at_round(e, schedule.outer_rounds()))?;
    }
    Ok(())
}

fn at_round(e: Error, s: usize) -> Error {
    match e {
        Error::Transport { detail, .. } => Error::Transport { round: s, detail },
        other => other,
    }
}

/// Worker side: answer aggregates with contributions until shutdown.
fn worker_loop<T: Real, L: Link>(
    mut worker: Worker<T>,
    mut link: L,
    schedule: &Schedule,
) -> Result<Worker<T>> {
    loop {
        let msg = link.recv()?;
        match msg.kind {
            MessageKind::Aggregate => {
                let s = msg.round as usize;
                if s == 0 || s > schedule.outer_rounds() {
                    return Err(Error::Transport {
                        round: s,
                        detail: "aggregate for an unknown round".into(),
                    });
                }
                let g: Vec<T> = msg.payload.iter().map(|&v| T::of(v)).collect();
                worker.run_round(s, schedule.inner_iters(s), &g)?;
                let payload: Vec<f64> =
                    worker.contribution().iter().map(|v| v.as_f64()).collect();
                link.send(&FusionMessage {
                    kind: MessageKind::Contribution,
                    round: msg.round,
                    processor: worker.p as u16 + 1,
                    payload,
                })?;
            }
            MessageKind::Shutdown => return Ok(worker),
            MessageKind::Contribution => {
                return Err(Error::Transport {
                    round: msg.round as usize,
                    detail: "unexpected contribution at a worker".into(),
                })
            }
        }
    }
}

fn collect<T: Real>(
    results: Vec<std::result::Result<Result<Worker<T>>, Box<dyn std::any::Any + Send>>>,
    center_result: Result<()>,
    schedule: &Schedule,
) -> Result<CmpRun<T>> {
    let mut workers = Vec::with_capacity(results.len());
    let mut worker_err = None;
    for joined in results {
        match joined {
            Ok(Ok(w)) => workers.push(w),
            Ok(Err(e)) => worker_err = Some(e),
            Err(_) => {
                worker_err = Some(Error::Transport {
                    round: 0,
                    detail: "worker thread panicked".into(),
                })
            }
        }
    }
    if let Some(e) = worker_err {
        return Err(e);
    }
    center_result?;
    workers.sort_by_key(|w| w.p);
    Ok(finish_run(workers, schedule))
}

/// In-process transport: one thread per worker, channel links.
pub fn run_channel_parallel<T: Real>(
    inst: &ProblemInstance<T>,
    schedule: &Schedule,
    denoiser: &Denoiser<T>,
    damping: &DampingConfig<T>,
    opts: &RunOptions<'_, T>,
) -> Result<CmpRun<T>> {
    let workers = build_workers(inst, schedule, denoiser, damping, opts, false)?;
    let n = inst.n();
    let mut center_links = Vec::new();
    let mut worker_ends = Vec::new();
    for _ in 0..workers.len() {
        let (c, w) = ChannelLink::pair();
        center_links.push(c);
        worker_ends.push(w);
    }
    let (results, center_result) = std::thread::scope(|scope| {
        let handles: Vec<_> = workers
            .into_iter()
            .zip(worker_ends)
            .map(|(w, link)| scope.spawn(move || worker_loop(w, link, schedule)))
            .collect();
        let center_result = drive_center::<T, _>(&mut center_links, schedule, n);
        let results: Vec<_> = handles.into_iter().map(|h| h.join()).collect();
        (results, center_result)
    });
    collect(results, center_result, schedule)
}

/// Loopback-socket transport: each worker serves one TCP connection; the
/// center connects to the workers in ascending processor order.
pub fn run_distributed<T: Real>(
    inst: &ProblemInstance<T>,
    schedule: &Schedule,
    denoiser: &Denoiser<T>,
    damping: &DampingConfig<T>,
    opts: &RunOptions<'_, T>,
) -> Result<CmpRun<T>> {
    let workers = build_workers(inst, schedule, denoiser, damping, opts, false)?;
    let n = inst.n();
    let mut listeners = Vec::new();
    let mut addrs = Vec::new();
    for _ in 0..workers.len() {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        addrs.push(listener.local_addr()?);
        listeners.push(listener);
    }
    let (results, center_result) = std::thread::scope(|scope| {
        let handles: Vec<_> = workers
            .into_iter()
            .zip(listeners)
            .map(|(w, listener)| {
                scope.spawn(move || serve_worker_tcp(listener, w, schedule))
            })
            .collect();
        let center_result = (|| {
            let mut links = Vec::with_capacity(addrs.len());
            for addr in &addrs {
                let stream = TcpStream::connect(addr).map_err(|e| Error::Transport {
                    round: 0,
                    detail: format!("connect {addr}: {e}"),
                })?;
                links.push(TcpLink::new(stream, Some(WORKER_TIMEOUT))?);
            }
            drive_center::<T, _>(&mut links, schedule, n)
        })();
        let results: Vec<_> = handles.into_iter().map(|h| h.join()).collect();
        (results, center_result)
    });
    collect(results, center_result, schedule)
}

/// Serves one worker over the first connection accepted on `listener`;
/// building block for runs whose workers live in other processes.
pub(crate) fn serve_worker_tcp<T: Real>(
    listener: TcpListener,
    worker: Worker<T>,
    schedule: &Schedule,
) -> Result<Worker<T>> {
    let (stream, _) = listener.accept().map_err(|e| Error::Transport {
        round: 0,
        detail: format!("accept: {e}"),
    })?;
    let link = TcpLink::new(stream, Some(WORKER_TIMEOUT))?;
    worker_loop(worker, link, schedule)
}
