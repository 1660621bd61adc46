//! Client for external logit providers.
//!
//! The wire format is newline-delimited JSON over a TCP stream or a child
//! process's stdio. The server greets with
//! `{"type":"hello","vocab":[...]}`; each request
//! `{"type":"next","session":..,"variant":"with"|"without","context":[..]|null,"query":[..],"prefix":[..]}`
//! is answered by exactly one `logits` or `error` line. Requests are
//! lock-step: one in flight per connection.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{check_ids, LmSource, SourceError};
use crate::dist::TokenDistribution;
use crate::TokenId;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    With,
    Without,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClientMessage {
    Next {
        session: String,
        variant: Variant,
        context: Option<Vec<TokenId>>,
        query: Vec<TokenId>,
        prefix: Vec<TokenId>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    Hello { vocab: Vec<String> },
    Logits { session: String, values: Vec<f64> },
    Error { message: String },
}

/// Where the logit provider lives: `host:port` or `stdio` with a command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    Stdio(Vec<String>),
}

impl Endpoint {
    /// Parses `host:port` or `stdio`; `command` is required for the latter.
    pub fn parse(endpoint: &str, command: Option<&[String]>) -> Result<Self, SourceError> {
        if endpoint == "stdio" {
            return match command {
                Some(cmd) if !cmd.is_empty() => Ok(Endpoint::Stdio(cmd.to_vec())),
                _ => Err(SourceError::BadConfig(
                    "a stdio endpoint needs a command to launch".into(),
                )),
            };
        }
        match endpoint.rsplit_once(':') {
            Some((host, port)) if !host.is_empty() && port.parse::<u16>().is_ok() => {
                Ok(Endpoint::Tcp(endpoint.to_string()))
            }
            _ => Err(SourceError::BadConfig(format!(
                "endpoint {endpoint:?} is neither host:port nor stdio"
            ))),
        }
    }
}

struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
    broken: bool,
}

pub struct RemoteLogitClient {
    conn: Mutex<Connection>,
    vocab: Vec<String>,
    session: String,
    timeout: Duration,
}

impl std::fmt::Debug for RemoteLogitClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteLogitClient")
            .field("session", &self.session)
            .field("vocab_size", &self.vocab.len())
            .field("timeout", &self.timeout)
            .finish()
    }
}

fn spawn_reader<R: BufRead + Send + 'static>(reader: R) -> Receiver<std::io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for line in reader.lines() {
            let stop = line.is_err();
            if tx.send(line).is_err() || stop {
                break;
            }
        }
    });
    rx
}

impl RemoteLogitClient {
    pub fn connect(endpoint: &Endpoint, session: &str, timeout: Duration) -> Result<Self, SourceError> {
        match endpoint {
            Endpoint::Tcp(addr) => Self::connect_tcp(addr, session, timeout),
            Endpoint::Stdio(cmd) => Self::spawn(cmd, session, timeout),
        }
    }

    pub fn connect_tcp(addr: &str, session: &str, timeout: Duration) -> Result<Self, SourceError> {
        let addrs: Vec<SocketAddr> = addr
            .to_socket_addrs()
            .map_err(|e| SourceError::Transport(format!("cannot resolve {addr}: {e}")))?
            .collect();
        let mut last = None;
        for a in addrs {
            match TcpStream::connect_timeout(&a, timeout) {
                Ok(stream) => {
                    stream.set_nodelay(true).ok();
                    let reader = stream
                        .try_clone()
                        .map_err(|e| SourceError::Transport(e.to_string()))?;
                    return Self::handshake(
                        Box::new(stream),
                        spawn_reader(BufReader::new(reader)),
                        None,
                        session,
                        timeout,
                    );
                }
                Err(e) => last = Some(e),
            }
        }
        Err(SourceError::Transport(match last {
            Some(e) => format!("cannot connect to {addr}: {e}"),
            None => format!("{addr} resolved to no addresses"),
        }))
    }

    /// Launches `command` and speaks the protocol over its stdin/stdout.
    pub fn spawn(command: &[String], session: &str, timeout: Duration) -> Result<Self, SourceError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| SourceError::BadConfig("empty command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| SourceError::Transport(format!("cannot launch {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Self::handshake(
            Box::new(stdin),
            spawn_reader(BufReader::new(stdout)),
            Some(child),
            session,
            timeout,
        )
    }

    /// Runs the protocol over an arbitrary stream pair.
    pub fn from_streams<R, W>(reader: R, writer: W, session: &str, timeout: Duration) -> Result<Self, SourceError>
    where
        R: BufRead + Send + 'static,
        W: Write + Send + 'static,
    {
        Self::handshake(Box::new(writer), spawn_reader(reader), None, session, timeout)
    }

    fn handshake(
        writer: Box<dyn Write + Send>,
        lines: Receiver<std::io::Result<String>>,
        child: Option<Child>,
        session: &str,
        timeout: Duration,
    ) -> Result<Self, SourceError> {
        let mut conn = Connection {
            writer,
            lines,
            child,
            broken: false,
        };
        let line = conn.recv(timeout)?;
        let vocab = match parse_server_line(&line)? {
            ServerMessage::Hello { vocab } => vocab,
            ServerMessage::Error { message } => return Err(SourceError::Remote(message)),
            ServerMessage::Logits { .. } => {
                return Err(SourceError::Protocol {
                    reason: "expected hello".into(),
                    line,
                })
            }
        };
        if vocab.len() < 2 {
            return Err(SourceError::Protocol {
                reason: format!("handshake vocabulary has {} tokens", vocab.len()),
                line,
            });
        }
        Ok(RemoteLogitClient {
            conn: Mutex::new(conn),
            vocab,
            session: session.to_string(),
            timeout,
        })
    }

    pub fn session(&self) -> &str {
        &self.session
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    /// Sends one request and waits for its logits.
    pub fn request(
        &self,
        variant: Variant,
        context: Option<&[TokenId]>,
        query: &[TokenId],
        prefix: &[TokenId],
    ) -> Result<Vec<f64>, SourceError> {
        let message = ClientMessage::Next {
            session: self.session.clone(),
            variant,
            context: context.map(<[TokenId]>::to_vec),
            query: query.to_vec(),
            prefix: prefix.to_vec(),
        };
        let mut payload = serde_json::to_string(&message).expect("request serializes");
        payload.push('\n');

        let mut conn = self.conn.lock().unwrap_or_else(|e| e.into_inner());
        if conn.broken {
            return Err(SourceError::Transport("connection is no longer usable".into()));
        }
        if let Err(e) = conn
            .writer
            .write_all(payload.as_bytes())
            .and_then(|_| conn.writer.flush())
        {
            conn.broken = true;
            return Err(SourceError::Transport(e.to_string()));
        }
        let line = conn.recv(self.timeout)?;
        match parse_server_line(&line)? {
            ServerMessage::Logits { values, .. } => {
                if values.len() != self.vocab.len() {
                    return Err(SourceError::VocabMismatch {
                        expected: self.vocab.len(),
                        got: values.len(),
                    });
                }
                Ok(values)
            }
            ServerMessage::Error { message } => Err(SourceError::Remote(message)),
            ServerMessage::Hello { .. } => Err(SourceError::Protocol {
                reason: "unexpected hello".into(),
                line,
            }),
        }
    }
}

impl Connection {
    fn recv(&mut self, timeout: Duration) -> Result<String, SourceError> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => {
                self.broken = true;
                Err(SourceError::Transport(e.to_string()))
            }
            Err(RecvTimeoutError::Timeout) => {
                // a late reply would desynchronize the lock-step exchange
                self.broken = true;
                Err(SourceError::Timeout(timeout))
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.broken = true;
                Err(SourceError::Transport("connection closed by peer".into()))
            }
        }
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

fn parse_server_line(line: &str) -> Result<ServerMessage, SourceError> {
    serde_json::from_str(line).map_err(|e| SourceError::Protocol {
        reason: e.to_string(),
        line: line.to_string(),
    })
}

impl LmSource for RemoteLogitClient {
    fn vocab(&self) -> &[String] {
        &self.vocab
    }

    fn next_distribution(
        &self,
        context: Option<&[TokenId]>,
        query: &[TokenId],
        prefix: &[TokenId],
    ) -> Result<TokenDistribution, SourceError> {
        let v = self.vocab.len();
        check_ids(query, v)?;
        check_ids(prefix, v)?;
        if let Some(c) = context {
            check_ids(c, v)?;
        }
        let variant = if context.is_some() {
            Variant::With
        } else {
            Variant::Without
        };
        let values = self.request(variant, context, query, prefix)?;
        Ok(TokenDistribution::from_logits(&values)?)
    }
}
