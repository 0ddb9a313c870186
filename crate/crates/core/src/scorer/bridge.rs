//! Client side of the scorer wire protocol.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::Mutex;

use super::protocol::{encode_request, Request, RequestBody, Response};
use super::{ScoreResult, ScorerConfig, ScorerError, TokenScorer};
use crate::num::Real;
use crate::stream_model::TokenId;

/// Where a bridge process listens.
///
/// Textual forms: `tcp:HOST:PORT` or `stdio:PROGRAM [ARGS...]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BridgeEndpoint {
    Tcp(String),
    Stdio { program: String, args: Vec<String> },
}

impl FromStr for BridgeEndpoint {
    type Err = ScorerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(addr) = s.strip_prefix("tcp:") {
            if addr.is_empty() {
                return Err(ScorerError::Config("empty tcp address".into()));
            }
            return Ok(Self::Tcp(addr.to_owned()));
        }
        if let Some(cmd) = s.strip_prefix("stdio:") {
            let mut parts = cmd.split_whitespace().map(str::to_owned);
            let program = parts
                .next()
                .ok_or_else(|| ScorerError::Config("empty stdio command".into()))?;
            return Ok(Self::Stdio {
                program,
                args: parts.collect(),
            });
        }
        Err(ScorerError::Config(format!(
            "bridge endpoint must start with tcp: or stdio:, got {s:?}"
        )))
    }
}

struct Connection {
    reader: BufReader<Box<dyn Read + Send>>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
    next_id: i64,
}

impl Connection {
    fn roundtrip(&mut self, body: RequestBody) -> Result<Response, ScorerError> {
        let id = self.next_id;
        self.next_id += 1;
        let mut line = encode_request(&Request { id, body });
        line.push('\n');
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| ScorerError::Transport(e.to_string()))?;

        let mut reply = String::new();
        let n = self
            .reader
            .read_line(&mut reply)
            .map_err(|e| ScorerError::Transport(e.to_string()))?;
        if n == 0 {
            return Err(ScorerError::Transport("connection closed".into()));
        }
        let resp: Response = serde_json::from_str(reply.trim_end())
            .map_err(|e| ScorerError::Protocol(format!("unparseable response: {e}")))?;
        if let Some(msg) = resp.error {
            return Err(ScorerError::Remote(msg));
        }
        if resp.id != id {
            return Err(ScorerError::Protocol(format!(
                "response id {} does not answer request {id}",
                resp.id
            )));
        }
        Ok(resp)
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// A [`TokenScorer`] backed by a remote bridge process.
pub struct BridgeScorer {
    config: ScorerConfig,
    conn: Mutex<Connection>,
}

impl BridgeScorer {
    /// Connect and perform the handshake (an empty score request that must
    /// answer with an empty logprob list).
    pub fn connect(endpoint: &BridgeEndpoint, config: ScorerConfig) -> Result<Self, ScorerError> {
        config.validate()?;
        let conn = match endpoint {
            BridgeEndpoint::Tcp(addr) => {
                let stream =
                    TcpStream::connect(addr).map_err(|e| ScorerError::Transport(format!("{addr}: {e}")))?;
                stream.set_nodelay(true).ok();
                let read = stream
                    .try_clone()
                    .map_err(|e| ScorerError::Transport(e.to_string()))?;
                Connection {
                    reader: BufReader::new(Box::new(read)),
                    writer: Box::new(stream),
                    child: None,
                    next_id: 0,
                }
            }
            BridgeEndpoint::Stdio { program, args } => {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .spawn()
                    .map_err(|e| ScorerError::Transport(format!("{program}: {e}")))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Connection {
                    reader: BufReader::new(Box::new(stdout)),
                    writer: Box::new(stdin),
                    child: Some(child),
                    next_id: 0,
                }
            }
        };
        Self::handshake(conn, config)
    }

    /// Wrap an already-open byte stream pair.
    pub fn from_streams(
        reader: Box<dyn Read + Send>,
        writer: Box<dyn Write + Send>,
        config: ScorerConfig,
    ) -> Result<Self, ScorerError> {
        config.validate()?;
        let conn = Connection {
            reader: BufReader::new(reader),
            writer,
            child: None,
            next_id: 0,
        };
        Self::handshake(conn, config)
    }

    fn handshake(mut conn: Connection, config: ScorerConfig) -> Result<Self, ScorerError> {
        let resp = conn.roundtrip(RequestBody::Score {
            ctx: Vec::new(),
            cont: Vec::new(),
        })?;
        match resp.logprobs.as_deref() {
            Some([]) => Ok(Self {
                config,
                conn: Mutex::new(conn),
            }),
            _ => Err(ScorerError::Protocol(
                "handshake: expected an empty logprob list".into(),
            )),
        }
    }

    fn call(&self, body: RequestBody) -> Result<Response, ScorerError> {
        let mut conn = self
            .conn
            .lock()
            .map_err(|_| ScorerError::Transport("connection poisoned".into()))?;
        conn.roundtrip(body)
    }
}

fn to_result<R: Real>(logprobs: Option<Vec<f64>>, expected_len: Option<usize>) -> Result<ScoreResult<R>, ScorerError> {
    let lps = logprobs.ok_or_else(|| ScorerError::Protocol("response lacks logprobs".into()))?;
    if let Some(n) = expected_len {
        if lps.len() != n {
            return Err(ScorerError::Protocol(format!(
                "expected {n} logprobs, got {}",
                lps.len()
            )));
        }
    }
    ScoreResult::new(lps.into_iter().map(R::of).collect())
}

impl<R: Real> TokenScorer<R> for BridgeScorer {
    fn config(&self) -> &ScorerConfig {
        &self.config
    }

    fn score_continuation(
        &self,
        ctx: &[TokenId],
        cont: &[TokenId],
    ) -> Result<ScoreResult<R>, ScorerError> {
        self.config.check_context(ctx)?;
        self.config.check_tokens(cont)?;
        let resp = self.call(RequestBody::Score {
            ctx: ctx.to_vec(),
            cont: cont.to_vec(),
        })?;
        to_result(resp.logprobs, Some(cont.len()))
    }

    fn generate_caption(
        &self,
        ctx: &[TokenId],
        max_len: usize,
    ) -> Result<(Vec<TokenId>, ScoreResult<R>), ScorerError> {
        self.config.check_context(ctx)?;
        self.config.check_generation(max_len)?;
        let resp = self.call(RequestBody::Generate {
            ctx: ctx.to_vec(),
            max_len,
        })?;
        let tokens = resp
            .tokens
            .ok_or_else(|| ScorerError::Protocol("generate response lacks tokens".into()))?;
        if tokens.len() > max_len {
            return Err(ScorerError::Protocol(format!(
                "generated {} tokens, max_len was {max_len}",
                tokens.len()
            )));
        }
        self.config.check_tokens(&tokens)?;
        let scores = to_result(resp.logprobs, Some(tokens.len()))?;
        Ok((tokens, scores))
    }

    fn concurrent_safe(&self) -> bool {
        false
    }
}
