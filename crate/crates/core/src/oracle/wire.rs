//! Newline-delimited JSON classifier protocol, client and server sides.
//!
//! ```text
//! -> {"op":"hello","proto":1}
//! <- {"proto":1,"labels":["no_tumor","tumor"]}
//! -> {"id":1,"op":"classify","height":H,"width":W,"channels":C,"pixels":"<base64>"}
//! <- {"id":1,"label":"tumor","confidence":0.9,"scores":{...}}
//! <- {"id":2,"error":"message"}
//! ```
//!
//! Pixels are little-endian `f32`, row-major, channel-last. Responses may
//! arrive in any order; the client matches them by id.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::Serialize;
use serde_json::Value;

use super::{collect_batch, Oracle, OracleError, Prediction, QueryCounter};
use crate::imaging::Image;

pub const PROTOCOL_VERSION: u64 = 1;

// Requests in flight per round trip; keeps reply backlog well under a pipe
// buffer.
const WINDOW: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// `host:port`
    Tcp(String),
    /// Program and arguments; spoken to over stdin/stdout.
    Command(Vec<String>),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Tcp(addr) => write!(f, "tcp:{addr}"),
            Endpoint::Command(argv) => write!(f, "cmd:{}", argv.join(" ")),
        }
    }
}

#[derive(Serialize)]
struct Hello {
    op: &'static str,
    proto: u64,
}

#[derive(Serialize)]
struct HelloReply<'a> {
    proto: u64,
    labels: &'a [String],
}

#[derive(Serialize)]
struct ClassifyRequest<'a> {
    id: u64,
    op: &'a str,
    height: usize,
    width: usize,
    channels: usize,
    pixels: String,
}

#[derive(Serialize)]
struct ResponseFrame<'a> {
    id: u64,
    label: &'a str,
    confidence: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    scores: Option<&'a BTreeMap<String, f64>>,
}

#[derive(Serialize)]
struct ErrorFrame<'a> {
    id: u64,
    error: &'a str,
}

pub fn encode_pixels(image: &Image) -> String {
    let mut bytes = Vec::with_capacity(image.data().len() * 4);
    for &v in image.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    BASE64.encode(bytes)
}

pub fn decode_pixels(
    height: usize,
    width: usize,
    channels: usize,
    pixels: &str,
) -> Result<Image, String> {
    let bytes = BASE64
        .decode(pixels)
        .map_err(|e| format!("bad base64: {e}"))?;
    let expected = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(channels))
        .and_then(|n| n.checked_mul(4))
        .ok_or("dimensions overflow")?;
    if bytes.len() != expected {
        return Err(format!(
            "expected {expected} pixel bytes for {height}x{width}x{channels}, got {}",
            bytes.len()
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect();
    Image::new(height, width, channels, data).map_err(|e| e.to_string())
}

/// Serialized classify request line, without the trailing newline.
pub fn request_line(id: u64, image: &Image) -> String {
    serde_json::to_string(&ClassifyRequest {
        id,
        op: "classify",
        height: image.height(),
        width: image.width(),
        channels: image.channels(),
        pixels: encode_pixels(image),
    })
    .expect("request serializes")
}

pub fn hello_line() -> String {
    serde_json::to_string(&Hello {
        op: "hello",
        proto: PROTOCOL_VERSION,
    })
    .expect("hello serializes")
}

pub fn response_line(id: u64, prediction: &Prediction) -> String {
    serde_json::to_string(&ResponseFrame {
        id,
        label: &prediction.label,
        confidence: prediction.confidence,
        scores: prediction.scores.as_ref(),
    })
    .expect("response serializes")
}

pub fn error_line(id: u64, message: &str) -> String {
    serde_json::to_string(&ErrorFrame { id, error: message }).expect("error serializes")
}

fn protocol(msg: impl Into<String>) -> OracleError {
    OracleError::Protocol(msg.into())
}

/// Parses a response or error frame into `(id, outcome)`.
pub fn parse_response(line: &str) -> Result<(u64, Result<Prediction, OracleError>), OracleError> {
    let value: Value =
        serde_json::from_str(line).map_err(|e| protocol(format!("malformed frame: {e}")))?;
    let obj = value.as_object().ok_or_else(|| protocol("frame is not an object"))?;
    let id = obj
        .get("id")
        .and_then(Value::as_u64)
        .ok_or_else(|| protocol("frame without a numeric id"))?;
    if let Some(err) = obj.get("error") {
        let message = err.as_str().ok_or_else(|| protocol("error must be a string"))?;
        return Ok((
            id,
            Err(OracleError::Rejected {
                id,
                message: message.to_string(),
            }),
        ));
    }
    let label = obj
        .get("label")
        .and_then(Value::as_str)
        .ok_or_else(|| protocol(format!("response {id} without label")))?;
    let confidence = obj
        .get("confidence")
        .and_then(Value::as_f64)
        .ok_or_else(|| protocol(format!("response {id} without confidence")))?;
    if !(0.0..=1.0).contains(&confidence) {
        return Err(protocol(format!("response {id}: confidence {confidence} outside [0, 1]")));
    }
    let scores = match obj.get("scores") {
        None | Some(Value::Null) => None,
        Some(Value::Object(map)) => {
            let mut scores = BTreeMap::new();
            for (k, v) in map {
                let s = v
                    .as_f64()
                    .ok_or_else(|| protocol(format!("response {id}: score for {k} is not a number")))?;
                scores.insert(k.clone(), s);
            }
            Some(scores)
        }
        Some(_) => return Err(protocol(format!("response {id}: scores must be an object"))),
    };
    let prediction = Prediction {
        label: label.to_string(),
        confidence,
        scores,
    };
    if !prediction.is_consistent() {
        return Err(protocol(format!(
            "response {id}: label/confidence disagree with scores"
        )));
    }
    Ok((id, Ok(prediction)))
}

struct Connection {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
    labels: Vec<String>,
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn unavailable(endpoint: &Endpoint, e: impl fmt::Display) -> OracleError {
    OracleError::Unavailable(format!("{endpoint}: {e}"))
}

impl Connection {
    fn open(endpoint: &Endpoint) -> Result<Self, OracleError> {
        let (reader, writer, child): (Box<dyn BufRead + Send>, Box<dyn Write + Send>, _) =
            match endpoint {
                Endpoint::Tcp(addr) => {
                    let stream = TcpStream::connect(addr).map_err(|e| unavailable(endpoint, e))?;
                    let _ = stream.set_nodelay(true);
                    let read_half = stream.try_clone().map_err(|e| unavailable(endpoint, e))?;
                    (
                        Box::new(BufReader::new(read_half)),
                        Box::new(BufWriter::new(stream)),
                        None,
                    )
                }
                Endpoint::Command(argv) => {
                    let (program, args) = argv
                        .split_first()
                        .ok_or_else(|| OracleError::InvalidParams("empty command".into()))?;
                    let mut child = Command::new(program)
                        .args(args)
                        .stdin(Stdio::piped())
                        .stdout(Stdio::piped())
                        .stderr(Stdio::inherit())
                        .spawn()
                        .map_err(|e| unavailable(endpoint, e))?;
                    let stdin = child.stdin.take().expect("piped stdin");
                    let stdout = child.stdout.take().expect("piped stdout");
                    (
                        Box::new(BufReader::new(stdout)),
                        Box::new(BufWriter::new(stdin)),
                        Some(child),
                    )
                }
            };
        let mut conn = Connection {
            reader,
            writer,
            child,
            labels: Vec::new(),
        };
        conn.handshake(endpoint)?;
        Ok(conn)
    }

    fn handshake(&mut self, endpoint: &Endpoint) -> Result<(), OracleError> {
        self.send(endpoint, &hello_line())?;
        self.flush(endpoint)?;
        let line = self.recv(endpoint)?;
        let value: Value = serde_json::from_str(&line)
            .map_err(|e| protocol(format!("malformed handshake: {e}")))?;
        let proto = value.get("proto").and_then(Value::as_u64);
        if proto != Some(PROTOCOL_VERSION) {
            return Err(protocol(format!(
                "server speaks protocol {proto:?}, expected {PROTOCOL_VERSION}"
            )));
        }
        self.labels = value
            .get("labels")
            .and_then(Value::as_array)
            .ok_or_else(|| protocol("handshake without labels"))?
            .iter()
            .map(|v| v.as_str().map(str::to_string).ok_or_else(|| protocol("non-string label")))
            .collect::<Result<_, _>>()?;
        Ok(())
    }

    fn send(&mut self, endpoint: &Endpoint, line: &str) -> Result<(), OracleError> {
        self.writer
            .write_all(line.as_bytes())
            .and_then(|()| self.writer.write_all(b"\n"))
            .map_err(|e| unavailable(endpoint, e))
    }

    fn flush(&mut self, endpoint: &Endpoint) -> Result<(), OracleError> {
        self.writer.flush().map_err(|e| unavailable(endpoint, e))
    }

    fn recv(&mut self, endpoint: &Endpoint) -> Result<String, OracleError> {
        let mut line = String::new();
        let n = self
            .reader
            .read_line(&mut line)
            .map_err(|e| unavailable(endpoint, e))?;
        if n == 0 {
            return Err(unavailable(endpoint, "connection closed"));
        }
        Ok(line.trim_end_matches(['\r', '\n']).to_string())
    }

    /// Sends one window of requests, then collects every reply.
    fn round_trip(
        &mut self,
        endpoint: &Endpoint,
        first_id: u64,
        images: &[Image],
    ) -> Result<Vec<Result<Prediction, OracleError>>, OracleError> {
        let mut pending = HashMap::with_capacity(images.len());
        for (pos, image) in images.iter().enumerate() {
            let id = first_id + pos as u64;
            self.send(endpoint, &request_line(id, image))?;
            pending.insert(id, pos);
        }
        self.flush(endpoint)?;
        let mut results: Vec<Option<Result<Prediction, OracleError>>> =
            (0..images.len()).map(|_| None).collect();
        while !pending.is_empty() {
            let line = self.recv(endpoint)?;
            let (id, outcome) = parse_response(&line)?;
            let pos = pending
                .remove(&id)
                .ok_or_else(|| protocol(format!("reply for unknown or repeated id {id}")))?;
            results[pos] = Some(outcome);
        }
        Ok(results.into_iter().map(|r| r.expect("every id answered")).collect())
    }
}

struct State {
    conn: Option<Connection>,
    next_id: u64,
}

/// Client for an external classifier speaking the wire protocol.
///
/// Calls are serialized over a single connection; batches are pipelined.
/// A transport failure drops the connection; with `retries > 0` the client
/// reconnects and resends the affected window.
pub struct WireOracle {
    endpoint: Endpoint,
    retries: u32,
    state: Mutex<State>,
    counter: QueryCounter,
}

impl WireOracle {
    /// Connects and performs the handshake.
    pub fn connect(endpoint: Endpoint) -> Result<Self, OracleError> {
        let conn = Connection::open(&endpoint)?;
        Ok(Self {
            endpoint,
            retries: 0,
            state: Mutex::new(State {
                conn: Some(conn),
                next_id: 1,
            }),
            counter: QueryCounter::default(),
        })
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    /// Labels announced in the most recent handshake.
    pub fn labels(&self) -> Vec<String> {
        let state = self.state.lock().unwrap_or_else(|p| p.into_inner());
        state.conn.as_ref().map(|c| c.labels.clone()).unwrap_or_default()
    }

    fn run_window(
        &self,
        state: &mut State,
        images: &[Image],
    ) -> Result<Vec<Result<Prediction, OracleError>>, OracleError> {
        let mut attempt = 0;
        loop {
            let result = (|| {
                if state.conn.is_none() {
                    state.conn = Some(Connection::open(&self.endpoint)?);
                }
                let first_id = state.next_id;
                state.next_id += images.len() as u64;
                state
                    .conn
                    .as_mut()
                    .expect("connected above")
                    .round_trip(&self.endpoint, first_id, images)
            })();
            match result {
                Ok(r) => return Ok(r),
                Err(e) => {
                    // The stream may be mid-frame; never reuse it.
                    state.conn = None;
                    if !e.is_unavailable() || attempt >= self.retries {
                        return Err(e);
                    }
                    attempt += 1;
                }
            }
        }
    }
}

impl Oracle for WireOracle {
    fn classify(&self, image: &Image) -> Result<Prediction, OracleError> {
        let mut batch = self.classify_batch(std::slice::from_ref(image))?;
        Ok(batch.pop().expect("one reply"))
    }

    fn classify_batch(&self, images: &[Image]) -> Result<Vec<Prediction>, OracleError> {
        self.counter.add(images.len());
        let mut state = self.state.lock().unwrap_or_else(|p| p.into_inner());
        let mut outcomes = Vec::with_capacity(images.len());
        for (w, window) in images.chunks(WINDOW).enumerate() {
            let replies = self.run_window(&mut state, window).map_err(|e| OracleError::Batch {
                index: w * WINDOW,
                source: Box::new(e),
            })?;
            outcomes.extend(replies);
        }
        drop(state);
        let result = collect_batch(outcomes);
        if images.len() == 1 {
            // Single calls report the bare error.
            return result.map_err(|e| match e {
                OracleError::Batch { source, .. } => *source,
                other => other,
            });
        }
        result
    }

    fn query_count(&self) -> u64 {
        self.counter.get()
    }
}

fn parse_request(line: &str) -> Result<(u64, Option<Image>), (u64, String)> {
    // Parser detail stays out of the reply so error frames are stable.
    let value: Value = serde_json::from_str(line).map_err(|_| (0, "malformed frame".to_string()))?;
    let obj = value.as_object().ok_or((0, "frame is not an object".to_string()))?;
    let id = obj.get("id").and_then(Value::as_u64).unwrap_or(0);
    match obj.get("op").and_then(Value::as_str) {
        Some("hello") => {
            let proto = obj.get("proto").and_then(Value::as_u64);
            if proto != Some(PROTOCOL_VERSION) {
                return Err((id, format!("unsupported protocol {proto:?}")));
            }
            Ok((id, None))
        }
        Some("classify") => {
            if obj.get("id").and_then(Value::as_u64).is_none() {
                return Err((0, "classify without a numeric id".into()));
            }
            let dim = |key: &str| {
                obj.get(key)
                    .and_then(Value::as_u64)
                    .map(|v| v as usize)
                    .ok_or((id, format!("missing or invalid {key}")))
            };
            let (h, w, c) = (dim("height")?, dim("width")?, dim("channels")?);
            let pixels = obj
                .get("pixels")
                .and_then(Value::as_str)
                .ok_or((id, "missing pixels".to_string()))?;
            let image = decode_pixels(h, w, c, pixels).map_err(|m| (id, m))?;
            Ok((id, Some(image)))
        }
        Some(op) => Err((id, format!("unknown op {op:?}"))),
        None => Err((id, "missing op".into())),
    }
}

/// Answers protocol frames from `reader` until end of input.
///
/// Malformed frames get an error frame (id 0 when none can be read); they
/// never end the session.
pub fn serve<R: BufRead, W: Write>(
    oracle: &dyn Oracle,
    labels: &[String],
    reader: R,
    mut writer: W,
) -> io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let reply = match parse_request(line) {
            Ok((_, None)) => serde_json::to_string(&HelloReply {
                proto: PROTOCOL_VERSION,
                labels,
            })
            .expect("hello reply serializes"),
            Ok((id, Some(image))) => match oracle.classify(&image) {
                Ok(p) => response_line(id, &p),
                Err(e) => error_line(id, &e.to_string()),
            },
            Err((id, message)) => error_line(id, &message),
        };
        writer.write_all(reply.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}
