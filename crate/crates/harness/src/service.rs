//! Batched preference-oracle service.
//!
//! One thread per connection parses frames and forwards requests to a
//! single batching consumer, which drains the queue until it holds
//! `max_batch` pairs or `max_delay` has passed since the first request.
//! Labels depend only on each request's seed and pair index, so grouping
//! never changes an answer.

use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use duel_align::oracle::decide_label;
use duel_align::OracleSpec;

use crate::wire::{self, ErrorResponse, LabelRequest, LabelResponse, Reply};

#[derive(Clone, Copy, Debug)]
pub struct ServiceConfig {
    pub max_batch: usize,
    pub max_delay: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_batch: 64,
            max_delay: Duration::from_millis(2),
        }
    }
}

/// Counters exposed for tests and logging.
#[derive(Debug, Default)]
pub struct ServiceStats {
    pub requests: AtomicU64,
    pub batches: AtomicU64,
    pub max_batch_pairs: AtomicU64,
}

struct Job {
    request: LabelRequest,
    reply: Sender<Reply>,
}

pub struct OracleService {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    stats: Arc<ServiceStats>,
    acceptor: Option<JoinHandle<()>>,
}

impl OracleService {
    /// Starts serving on `listener` in background threads.
    pub fn start(listener: TcpListener, oracle: OracleSpec, config: ServiceConfig) -> std::io::Result<Self> {
        let addr = listener.local_addr()?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let stats = Arc::new(ServiceStats::default());
        let (jobs_tx, jobs_rx) = mpsc::channel::<Job>();
        let batch_stats = Arc::clone(&stats);
        thread::Builder::new()
            .name("oracle-batcher".into())
            .spawn(move || batch_loop(jobs_rx, oracle, config, &batch_stats))?;
        let stop = Arc::clone(&shutdown);
        let conn_stats = Arc::clone(&stats);
        let acceptor = thread::Builder::new().name("oracle-accept".into()).spawn(move || {
            for stream in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                match stream {
                    Ok(s) => {
                        let tx = jobs_tx.clone();
                        let st = Arc::clone(&conn_stats);
                        let _ = thread::Builder::new()
                            .name("oracle-conn".into())
                            .spawn(move || serve_connection(s, tx, &st));
                    }
                    Err(e) => log::warn!("accept failed: {e}"),
                }
            }
        })?;
        log::info!("oracle service listening on {addr}");
        Ok(Self {
            addr,
            shutdown,
            stats,
            acceptor: Some(acceptor),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> &ServiceStats {
        &self.stats
    }

    /// Blocks until the acceptor stops.
    pub fn join(mut self) {
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

impl Drop for OracleService {
    fn drop(&mut self) {
        if self.acceptor.is_some() {
            self.stop();
        }
    }
}

fn serve_connection(stream: TcpStream, jobs: Sender<Job>, stats: &ServiceStats) {
    let _ = stream.set_nodelay(true);
    let peer = stream.peer_addr().ok();
    let Ok(read_half) = stream.try_clone() else { return };
    let mut reader = BufReader::new(read_half);
    let mut writer = BufWriter::new(stream);
    loop {
        let body = match wire::read_frame(&mut reader) {
            Ok(Some(b)) => b,
            Ok(None) => return,
            Err(e) => {
                let _ = wire::send(&mut writer, &error_reply(0, format!("bad frame: {e}")));
                return;
            }
        };
        let request: LabelRequest = match wire::decode(&body) {
            Ok(r) => r,
            Err(e) => {
                let id = serde_json::from_slice::<serde_json::Value>(&body)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|i| i.as_u64()))
                    .unwrap_or(0);
                log::warn!("malformed request from {peer:?}: {e}");
                let _ = wire::send(&mut writer, &error_reply(id, format!("malformed request: {e}")));
                return;
            }
        };
        stats.requests.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = mpsc::channel();
        if jobs.send(Job { request, reply: tx }).is_err() {
            return;
        }
        let Ok(reply) = rx.recv() else { return };
        let failed = matches!(reply, Reply::Error(_));
        if wire::send(&mut writer, &reply).is_err() || failed {
            return;
        }
    }
}

fn error_reply(id: u64, error: String) -> Reply {
    Reply::Error(ErrorResponse { id, error })
}

fn batch_loop(jobs: Receiver<Job>, oracle: OracleSpec, config: ServiceConfig, stats: &ServiceStats) {
    let max_batch = config.max_batch.max(1);
    while let Ok(first) = jobs.recv() {
        let deadline = Instant::now() + config.max_delay;
        let mut pairs = first.request.pairs.len();
        let mut batch = vec![first];
        while pairs < max_batch {
            let wait = deadline.saturating_duration_since(Instant::now());
            match jobs.recv_timeout(wait) {
                Ok(job) => {
                    pairs += job.request.pairs.len();
                    batch.push(job);
                }
                Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => break,
            }
        }
        stats.batches.fetch_add(1, Ordering::Relaxed);
        stats.max_batch_pairs.fetch_max(pairs as u64, Ordering::Relaxed);
        for job in batch {
            let _ = job.reply.send(answer(&oracle, &job.request));
        }
    }
}

/// Labels every pair of one request.
pub fn answer(oracle: &OracleSpec, request: &LabelRequest) -> Reply {
    let p = oracle.feature_dim();
    let mut winners = Vec::with_capacity(request.pairs.len());
    let mut probs = Vec::with_capacity(request.pairs.len());
    for (i, pair) in request.pairs.iter().enumerate() {
        if pair.fy.len() != p || pair.fyp.len() != p {
            return error_reply(
                request.id,
                format!("pair {i}: feature length {}/{} but oracle expects {p}", pair.fy.len(), pair.fyp.len()),
            );
        }
        let rewards = oracle
            .reward_features(&pair.fy)
            .and_then(|a| oracle.reward_features(&pair.fyp).map(|b| (a, b)));
        let (r1, r2) = match rewards {
            Ok(r) => r,
            Err(e) => return error_reply(request.id, format!("pair {i}: {e}")),
        };
        let d = decide_label(r1, r2, request.mode, request.seed, i as u64);
        winners.push(if d.first_wins { 0 } else { 1 });
        probs.push(d.prob);
    }
    Reply::Labels(LabelResponse {
        id: request.id,
        winners,
        probs,
    })
}
