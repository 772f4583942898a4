//! JSON-lines protocol over TCP for driving [`CoolingEnv`] from other
//! processes.
//!
//! Each request is one JSON object on one line:
//!
//! ```text
//! {"op":"spec"}
//! {"op":"reset","seed":7}
//! {"op":"step","action":[0.25]}
//! {"op":"close"}
//! ```
//!
//! and is answered by exactly one line, either `{"ok":true,"payload":...}`
//! or `{"ok":false,"code":"...","message":"..."}`. Every connection owns
//! its own environment; a malformed request never ends the session.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::thread::{self, JoinHandle};

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::env::{CoolingEnv, EnvError, EpisodeConfig, StepInfo};
use crate::topology::OscillatorNetwork;

/// Longest accepted request line, newline excluded.
pub const MAX_LINE: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
pub enum Request {
    Spec,
    Reset { seed: u64 },
    Step { action: Vec<f64> },
    Close,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub n_nodes: usize,
    /// One-based indices of the actuated leaves, in action order.
    pub leaves: Vec<usize>,
    pub obs_len: usize,
    pub action_len: usize,
    pub action_low: f64,
    pub action_high: f64,
    /// In units of the base period.
    pub kick_interval: f64,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResetPayload {
    pub obs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPayload {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    NoEpisode,
    BadAction,
    EpisodeFinished,
    EnvFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Response {
    Ok { ok: True, payload: serde_json::Value },
    Err { ok: False, code: ErrorCode, message: String },
}

/// Serialises as the JSON literal `true`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct True;
/// Serialises as the JSON literal `false`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct False;

macro_rules! bool_literal {
    ($t:ty, $v:expr) => {
        impl Serialize for $t {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_bool($v)
            }
        }
        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                if bool::deserialize(d)? == $v {
                    Ok(Self)
                } else {
                    Err(serde::de::Error::custom(concat!("expected ", stringify!($v))))
                }
            }
        }
    };
}
bool_literal!(True, true);
bool_literal!(False, false);

impl Response {
    pub fn ok<T: Serialize>(payload: &T) -> Self {
        Self::Ok { ok: True, payload: serde_json::to_value(payload).expect("payload serialises") }
    }

    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        Self::Err { ok: False, code, message: message.into() }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, Self::Ok { .. })
    }

    /// Payload of a success reply deserialised into `T`.
    pub fn payload<T: for<'de> Deserialize<'de>>(&self) -> Option<T> {
        match self {
            Self::Ok { payload, .. } => serde_json::from_value(payload.clone()).ok(),
            Self::Err { .. } => None,
        }
    }

    pub fn code(&self) -> Option<ErrorCode> {
        match self {
            Self::Err { code, .. } => Some(*code),
            Self::Ok { .. } => None,
        }
    }
}

fn env_error(e: EnvError) -> Response {
    let code = match e {
        EnvError::NoEpisode => ErrorCode::NoEpisode,
        EnvError::BadAction { .. } => ErrorCode::BadAction,
        EnvError::EpisodeFinished => ErrorCode::EpisodeFinished,
        _ => ErrorCode::EnvFailure,
    };
    Response::error(code, e.to_string())
}

/// Protocol state machine of one connection.
pub struct Session {
    env: CoolingEnv,
    spec: EnvSpec,
}

impl Session {
    pub fn new(config: EpisodeConfig) -> Result<Self, EnvError> {
        let n = config.n_nodes();
        let probe = OscillatorNetwork::new(n, config.network.edges()?, vec![1.0; n], config.coupling)?;
        let env = CoolingEnv::new(config)?;
        let spec = EnvSpec {
            n_nodes: n,
            leaves: probe.leaves().to_vec(),
            obs_len: 2 * n,
            action_len: env.n_leaves(),
            action_low: -1.0,
            action_high: 1.0,
            kick_interval: env.config().kick_interval,
            horizon: env.config().horizon,
        };
        Ok(Self { env, spec })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn handle(&mut self, req: Request) -> Response {
        match req {
            Request::Spec => Response::ok(&self.spec),
            Request::Reset { seed } => match self.env.reset(seed) {
                Ok(obs) => Response::ok(&ResetPayload { obs }),
                Err(e) => env_error(e),
            },
            Request::Step { action } => match self.env.step(&action) {
                Ok(r) => Response::ok(&StepPayload {
                    obs: r.obs,
                    reward: r.reward,
                    terminated: r.terminated,
                    truncated: r.truncated,
                    info: r.info,
                }),
                Err(e) => env_error(e),
            },
            Request::Close => Response::ok(&serde_json::Value::Null),
        }
    }

    /// Parses and answers one line.
    pub fn handle_line(&mut self, line: &str) -> (Response, bool) {
        match serde_json::from_str::<Request>(line) {
            Ok(req) => {
                let close = req == Request::Close;
                (self.handle(req), close)
            }
            Err(e) => (Response::error(ErrorCode::BadRequest, e.to_string()), false),
        }
    }
}

enum Line {
    Text(String),
    TooLong,
    NotUtf8,
    Eof,
}

fn read_line<R: BufRead>(r: &mut R) -> io::Result<Line> {
    let mut buf = Vec::new();
    let n = r.by_ref().take(MAX_LINE as u64 + 1).read_until(b'\n', &mut buf)?;
    if n == 0 {
        return Ok(Line::Eof);
    }
    if buf.last() == Some(&b'\n') {
        buf.pop();
    } else if buf.len() > MAX_LINE {
        // discard the rest of the oversized line
        loop {
            let avail = r.fill_buf()?;
            if avail.is_empty() {
                break;
            }
            if let Some(i) = avail.iter().position(|&b| b == b'\n') {
                r.consume(i + 1);
                break;
            }
            let len = avail.len();
            r.consume(len);
        }
        return Ok(Line::TooLong);
    }
    if buf.last() == Some(&b'\r') {
        buf.pop();
    }
    Ok(String::from_utf8(buf).map_or(Line::NotUtf8, Line::Text))
}

fn send<W: Write>(w: &mut W, resp: &Response) -> io::Result<()> {
    let mut text = serde_json::to_string(resp).expect("response serialises");
    text.push('\n');
    w.write_all(text.as_bytes())?;
    w.flush()
}

/// Serves one connection until `close`, end of input or an I/O error.
pub fn handle_session<R: Read, W: Write>(reader: R, mut writer: W, config: EpisodeConfig) -> io::Result<()> {
    let mut session = Session::new(config).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    let mut reader = BufReader::new(reader);
    loop {
        let (resp, close) = match read_line(&mut reader)? {
            Line::Eof => return Ok(()),
            Line::TooLong => (Response::error(ErrorCode::BadRequest, format!("line exceeds {MAX_LINE} bytes")), false),
            Line::NotUtf8 => (Response::error(ErrorCode::BadRequest, "line is not UTF-8"), false),
            Line::Text(t) if t.trim().is_empty() => continue,
            Line::Text(t) => session.handle_line(&t),
        };
        if let Response::Err { code, message, .. } = &resp {
            debug!("request rejected ({code:?}): {message}");
        }
        send(&mut writer, &resp)?;
        if close {
            return Ok(());
        }
    }
}

/// Listening socket plus the configuration every session starts from.
pub struct Server {
    listener: TcpListener,
    config: EpisodeConfig,
}

impl Server {
    pub fn bind<A: ToSocketAddrs>(addr: A, config: EpisodeConfig) -> io::Result<Self> {
        config.validate().map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        Ok(Self { listener: TcpListener::bind(addr)?, config })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections forever, one thread each.
    pub fn serve(self) -> io::Result<()> {
        info!("serving on {}", self.local_addr()?);
        for conn in self.listener.incoming() {
            let stream = match conn {
                Ok(s) => s,
                Err(e) => {
                    warn!("accept failed: {e}");
                    continue;
                }
            };
            let config = self.config.clone();
            thread::spawn(move || {
                let peer = stream.peer_addr().ok();
                if let Err(e) = serve_stream(stream, config) {
                    warn!("session {peer:?} ended with {e}");
                }
            });
        }
        Ok(())
    }

    /// Runs [`Server::serve`] on a background thread.
    pub fn spawn(self) -> io::Result<(SocketAddr, JoinHandle<io::Result<()>>)> {
        let addr = self.local_addr()?;
        Ok((addr, thread::spawn(move || self.serve())))
    }
}

fn serve_stream(stream: TcpStream, config: EpisodeConfig) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let reader = stream.try_clone()?;
    handle_session(reader, stream, config)
}

/// Blocking line client, mainly for tests and scripting.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Client {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> io::Result<Self> {
        let writer = TcpStream::connect(addr)?;
        writer.set_nodelay(true)?;
        Ok(Self { reader: BufReader::new(writer.try_clone()?), writer })
    }

    /// Sends a raw line (newline appended) and reads the reply.
    pub fn send_raw(&mut self, line: &str) -> io::Result<Response> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        let mut reply = String::new();
        if self.reader.read_line(&mut reply)? == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "server closed the connection"));
        }
        serde_json::from_str(&reply).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    pub fn request(&mut self, req: &Request) -> io::Result<Response> {
        self.send_raw(&serde_json::to_string(req).expect("request serialises"))
    }
}
