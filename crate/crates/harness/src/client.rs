//! TCP client that labels duels through the oracle service.

use std::io::{BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use duel_align::oracle::{LabelDecision, PreferenceLabeler};
use duel_align::{ContextVec, Error as CoreError, LabelMode, LabelSource, PreferenceTriplet, ResponseRef, RngStream};
use rand::RngCore;

use crate::wire::{self, LabelRequest, Reply, WirePair};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);
pub const DEFAULT_RETRIES: u32 = 3;

struct Connection {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

pub struct RemoteLabeler {
    addr: String,
    mode: LabelMode,
    timeout: Duration,
    retries: u32,
    next_id: u64,
    conn: Option<Connection>,
}

impl RemoteLabeler {
    /// Lazily connects on first use.
    pub fn new(addr: impl Into<String>, mode: LabelMode) -> Self {
        Self {
            addr: addr.into(),
            mode,
            timeout: DEFAULT_TIMEOUT,
            retries: DEFAULT_RETRIES,
            next_id: 1,
            conn: None,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    fn connect(&self) -> std::io::Result<Connection> {
        let mut last = None;
        for addr in self.addr.to_socket_addrs()? {
            match TcpStream::connect_timeout(&addr, self.timeout) {
                Ok(s) => {
                    s.set_read_timeout(Some(self.timeout))?;
                    s.set_write_timeout(Some(self.timeout))?;
                    s.set_nodelay(true)?;
                    return Ok(Connection {
                        reader: BufReader::new(s.try_clone()?),
                        writer: BufWriter::new(s),
                    });
                }
                Err(e) => last = Some(e),
            }
        }
        Err(last.unwrap_or_else(|| std::io::Error::other("address resolved to nothing")))
    }

    fn exchange(&mut self, request: &LabelRequest) -> std::io::Result<Reply> {
        if self.conn.is_none() {
            self.conn = Some(self.connect()?);
        }
        let conn = self.conn.as_mut().unwrap();
        wire::send(&mut conn.writer, request)?;
        let body = wire::read_frame(&mut conn.reader)?
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "server closed connection"))?;
        wire::decode(&body)
    }

    /// Sends `pairs` in one request, retrying transport failures.
    pub fn label_raw(&mut self, pairs: Vec<WirePair>, seed: u64) -> duel_align::Result<Vec<LabelDecision>> {
        let request = LabelRequest {
            id: self.next_id,
            pairs,
            mode: self.mode,
            seed,
        };
        self.next_id += 1;
        let mut last_err = String::new();
        for attempt in 0..=self.retries {
            match self.exchange(&request) {
                Ok(Reply::Labels(resp)) => {
                    if resp.id != request.id || resp.winners.len() != request.pairs.len() || resp.probs.len() != request.pairs.len() {
                        return Err(CoreError::Oracle(format!(
                            "response {} does not match request {} ({} pairs)",
                            resp.id,
                            request.id,
                            request.pairs.len()
                        )));
                    }
                    return Ok(resp
                        .winners
                        .iter()
                        .zip(&resp.probs)
                        .map(|(&w, &prob)| LabelDecision { first_wins: w == 0, prob })
                        .collect());
                }
                Ok(Reply::Error(e)) => {
                    self.conn = None;
                    return Err(CoreError::Oracle(format!("oracle rejected request {}: {}", e.id, e.error)));
                }
                Err(e) => {
                    self.conn = None;
                    log::warn!("oracle {} attempt {} failed: {e}", self.addr, attempt + 1);
                    last_err = e.to_string();
                }
            }
        }
        Err(CoreError::Oracle(format!(
            "oracle {} unreachable after {} attempts: {last_err}",
            self.addr,
            self.retries + 1
        )))
    }
}

impl PreferenceLabeler<f64> for RemoteLabeler {
    fn label(
        &mut self,
        context: &ContextVec,
        y: &ResponseRef,
        y_prime: &ResponseRef,
        rng: &mut RngStream,
        round: u64,
    ) -> duel_align::Result<PreferenceTriplet> {
        if y.action_id == y_prime.action_id {
            return Err(CoreError::Input("cannot label a duel between identical actions".into()));
        }
        let seed = rng.next_u64();
        let (first, second) = if y.action_id < y_prime.action_id { (y, y_prime) } else { (y_prime, y) };
        let pair = WirePair {
            ctx: context.values().to_vec(),
            fy: first.features.clone(),
            fyp: second.features.clone(),
        };
        let d = self.label_raw(vec![pair], seed)?.remove(0);
        let (winner, loser) = if d.first_wins { (first, second) } else { (second, first) };
        PreferenceTriplet::new(context.clone(), winner.clone(), loser.clone(), LabelSource::OracleLabel, round)
    }
}
