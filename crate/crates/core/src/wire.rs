//! Framed request/response protocol between client and server processes.
//!
//! Frame: `u32 BE body length ‖ msg_type (1 byte) ‖ u32 BE protocol version ‖
//! body`, body at most 64 KiB and itself a canonical field list. Responses to
//! `ENROLL` and `OPEN_SESSION` reuse the request's message type; access
//! requests are answered with `DECISION`; failures with `ERROR`.
//!
//! Traffic is plaintext. Deployments are expected to run it inside a secured
//! channel.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use crate::client::AuthzEndpoint;
use crate::crypto::{
    AuthKey, Digest, GrantedAccess, Operation, Resource, ResourceClass, Timestamp, UserAttr,
    DIGEST_LEN,
};
use crate::encoding::{Encoder, Fields};
use crate::error::{Error, Result};
use crate::server::{
    AccessDecision, AccessRequest, AuthzServer, Reason, SessionId, Sid, Verdict, NONCE_LEN,
    SID_LEN,
};

pub const PROTOCOL_VERSION: u32 = 1;
pub const MAX_BODY: usize = 64 * 1024;
pub const FRAME_HEADER_LEN: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Enroll = 1,
    OpenSession = 2,
    AccessRequest = 3,
    Decision = 4,
    Error = 5,
}

impl MsgType {
    pub const ALL: [MsgType; 5] = [
        MsgType::Enroll,
        MsgType::OpenSession,
        MsgType::AccessRequest,
        MsgType::Decision,
        MsgType::Error,
    ];

    pub fn from_byte(b: u8) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| *t as u8 == b)
            .ok_or_else(|| Error::RejectFrame(format!("unknown message type {b:#04x}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub msg_type: MsgType,
    pub protocol_version: u32,
    pub body: Vec<u8>,
}

impl WireMessage {
    pub fn new(msg_type: MsgType, body: Vec<u8>) -> Self {
        Self {
            msg_type,
            protocol_version: PROTOCOL_VERSION,
            body,
        }
    }

    pub fn error(err: &Error) -> Self {
        Self::new(
            MsgType::Error,
            Encoder::new()
                .field(0x01, &err.code().to_be_bytes())
                .field(0x02, err.to_string().as_bytes())
                .finish(),
        )
    }
}

pub fn encode_frame(msg: &WireMessage) -> Result<Vec<u8>> {
    if msg.body.len() > MAX_BODY {
        return Err(Error::RejectFrame(format!(
            "body of {} bytes exceeds {MAX_BODY}",
            msg.body.len()
        )));
    }
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + msg.body.len());
    out.extend_from_slice(&(msg.body.len() as u32).to_be_bytes());
    out.push(msg.msg_type as u8);
    out.extend_from_slice(&msg.protocol_version.to_be_bytes());
    out.extend_from_slice(&msg.body);
    Ok(out)
}

/// Header fields, validated in order: length, then type, then version.
fn parse_header(header: &[u8; FRAME_HEADER_LEN]) -> Result<(usize, Result<MsgType>, u32)> {
    let len = u32::from_be_bytes(header[..4].try_into().unwrap()) as usize;
    if len > MAX_BODY {
        return Err(Error::RejectFrame(format!("declared length {len} exceeds {MAX_BODY}")));
    }
    let version = u32::from_be_bytes(header[5..9].try_into().unwrap());
    Ok((len, MsgType::from_byte(header[4]), version))
}

fn check_version(version: u32) -> Result<()> {
    if version != PROTOCOL_VERSION {
        return Err(Error::RejectFrame(format!("unsupported protocol version {version}")));
    }
    Ok(())
}

/// Decodes exactly one frame occupying all of `data`.
pub fn decode_frame(data: &[u8]) -> Result<WireMessage> {
    let header: &[u8; FRAME_HEADER_LEN] = data
        .get(..FRAME_HEADER_LEN)
        .and_then(|h| h.try_into().ok())
        .ok_or_else(|| Error::RejectFrame("truncated header".into()))?;
    let (len, msg_type, version) = parse_header(header)?;
    let msg_type = msg_type?;
    check_version(version)?;
    let body = &data[FRAME_HEADER_LEN..];
    if body.len() != len {
        return Err(Error::RejectFrame(format!(
            "declared body {len} bytes, got {}",
            body.len()
        )));
    }
    Ok(WireMessage {
        msg_type,
        protocol_version: version,
        body: body.to_vec(),
    })
}

/// Outcome of reading one frame from a stream.
pub enum ReadOutcome {
    Message(WireMessage),
    /// Well-delimited but unacceptable frame; the stream is still in sync.
    Rejected(Error),
    Eof,
}

/// Reads one frame. An oversized length is returned as `Err` because the
/// stream cannot be resynchronized after it.
pub fn read_frame(r: &mut impl Read) -> Result<ReadOutcome> {
    let mut header = [0u8; FRAME_HEADER_LEN];
    let mut filled = 0;
    while filled < FRAME_HEADER_LEN {
        match r.read(&mut header[filled..])? {
            0 if filled == 0 => return Ok(ReadOutcome::Eof),
            0 => return Err(Error::RejectFrame("truncated header".into())),
            n => filled += n,
        }
    }
    let (len, msg_type, version) = parse_header(&header)?;
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::RejectFrame("truncated body".into()),
        _ => Error::Io(e),
    })?;
    let msg_type = match msg_type {
        Ok(t) => t,
        Err(e) => return Ok(ReadOutcome::Rejected(e)),
    };
    if let Err(e) = check_version(version) {
        return Ok(ReadOutcome::Rejected(e));
    }
    Ok(ReadOutcome::Message(WireMessage {
        msg_type,
        protocol_version: version,
        body,
    }))
}

pub fn write_frame(w: &mut impl Write, msg: &WireMessage) -> Result<()> {
    w.write_all(&encode_frame(msg)?)?;
    w.flush()?;
    Ok(())
}

// ---- typed bodies ----

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    Enroll { user: UserAttr, key: AuthKey },
    Challenge { user_id: String },
    OpenSession { user_id: String, proof: Digest },
    Access(AccessRequest),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    Enrolled(Vec<GrantedAccess>),
    Challenge([u8; NONCE_LEN]),
    Session(SessionId),
    Decision(AccessDecision),
    Error { code: u16, message: String },
}

fn encode_user(enc: Encoder, u: &UserAttr) -> Encoder {
    let enc = enc
        .field(0x01, u.user_id.as_bytes())
        .field(0x02, u.key_id.as_bytes());
    match &u.role {
        Some(role) => enc.field(0x03, role.as_bytes()),
        None => enc,
    }
}

fn decode_user(f: &Fields<'_>) -> Result<UserAttr> {
    UserAttr::new(f.string(0x01)?, f.string(0x02)?, f.opt_string(0x03)?)
}

fn single_byte(f: &Fields<'_>, tag: u8) -> Result<u8> {
    f.array::<1>(tag).map(|[b]| b)
}

impl Request {
    pub fn to_message(&self) -> WireMessage {
        match self {
            Request::Enroll { user, key } => WireMessage::new(
                MsgType::Enroll,
                encode_user(Encoder::new(), user)
                    .field(0x04, &key.key_bytes)
                    .finish(),
            ),
            Request::Challenge { user_id } => WireMessage::new(
                MsgType::OpenSession,
                Encoder::new().field(0x01, user_id.as_bytes()).finish(),
            ),
            Request::OpenSession { user_id, proof } => WireMessage::new(
                MsgType::OpenSession,
                Encoder::new()
                    .field(0x01, user_id.as_bytes())
                    .field(0x02, proof)
                    .finish(),
            ),
            Request::Access(req) => {
                let sga: Vec<u8> = req.sga.iter().flatten().copied().collect();
                WireMessage::new(
                    MsgType::AccessRequest,
                    encode_user(Encoder::new(), &req.user)
                        .field(0x04, &req.sid.0)
                        .field(0x05, &[req.op.to_byte()])
                        .field(0x06, req.resource.resource_id.as_bytes())
                        .field(0x07, &[req.resource.class.to_byte()])
                        .field(0x08, &sga)
                        .finish(),
                )
            }
        }
    }

    pub fn from_message(msg: &WireMessage) -> Result<Self> {
        let f = Fields::parse(&msg.body)?;
        match msg.msg_type {
            MsgType::Enroll => {
                let user = decode_user(&f)?;
                let key = AuthKey::from_slice(user.key_id.clone(), f.bytes(0x04)?)?;
                Ok(Request::Enroll { user, key })
            }
            MsgType::OpenSession => {
                let user_id = f.string(0x01)?;
                match f.get(0x02) {
                    None => Ok(Request::Challenge { user_id }),
                    Some(_) => Ok(Request::OpenSession {
                        user_id,
                        proof: f.array(0x02)?,
                    }),
                }
            }
            MsgType::AccessRequest => {
                let sga_raw = f.bytes(0x08)?;
                if sga_raw.len() % DIGEST_LEN != 0 {
                    return Err(Error::RejectFormat("sga is not a list of digests".into()));
                }
                Ok(Request::Access(AccessRequest {
                    user: decode_user(&f)?,
                    sid: Sid(f.array::<SID_LEN>(0x04)?),
                    op: Operation::from_byte(single_byte(&f, 0x05)?)?,
                    resource: Resource::new(
                        f.string(0x06)?,
                        ResourceClass::from_byte(single_byte(&f, 0x07)?)?,
                    )?,
                    sga: sga_raw
                        .chunks_exact(DIGEST_LEN)
                        .map(|c| c.try_into().unwrap())
                        .collect(),
                }))
            }
            other => Err(Error::RejectFrame(format!("{other:?} is not a request type"))),
        }
    }
}

impl Response {
    pub fn to_message(&self) -> WireMessage {
        match self {
            Response::Enrolled(gas) => {
                let mut blob = Vec::with_capacity(gas.len() * 40);
                for ga in gas {
                    blob.extend_from_slice(&ga.digest);
                    blob.extend_from_slice(&ga.issued_at.to_be_bytes());
                }
                WireMessage::new(MsgType::Enroll, Encoder::new().field(0x01, &blob).finish())
            }
            Response::Challenge(nonce) => {
                WireMessage::new(MsgType::OpenSession, Encoder::new().field(0x03, nonce).finish())
            }
            Response::Session(s) => WireMessage::new(
                MsgType::OpenSession,
                Encoder::new()
                    .field(0x04, &s.sid.0)
                    .field(0x05, &s.expires_at.to_be_bytes())
                    .field(0x06, s.user_id.as_bytes())
                    .finish(),
            ),
            Response::Decision(d) => {
                let enc = Encoder::new()
                    .field(0x01, &[verdict_byte(d.verdict)])
                    .field(0x02, &[reason_byte(d.reason)]);
                let enc = match d.new_ga_ts {
                    Some(ts) => enc.field(0x03, &ts.to_be_bytes()),
                    None => enc,
                };
                WireMessage::new(MsgType::Decision, enc.finish())
            }
            Response::Error { code, message } => WireMessage::new(
                MsgType::Error,
                Encoder::new()
                    .field(0x01, &code.to_be_bytes())
                    .field(0x02, message.as_bytes())
                    .finish(),
            ),
        }
    }

    pub fn from_message(msg: &WireMessage) -> Result<Self> {
        let f = Fields::parse(&msg.body)?;
        match msg.msg_type {
            MsgType::Enroll => {
                let blob = f.bytes(0x01)?;
                if blob.len() % 40 != 0 {
                    return Err(Error::RejectFormat("enrollment GA list malformed".into()));
                }
                Ok(Response::Enrolled(
                    blob.chunks_exact(40)
                        .map(|c| GrantedAccess {
                            digest: c[..32].try_into().unwrap(),
                            issued_at: Timestamp(u64::from_be_bytes(c[32..].try_into().unwrap())),
                        })
                        .collect(),
                ))
            }
            MsgType::OpenSession => {
                if f.get(0x03).is_some() {
                    Ok(Response::Challenge(f.array(0x03)?))
                } else {
                    Ok(Response::Session(SessionId {
                        sid: Sid(f.array(0x04)?),
                        expires_at: Timestamp(f.u64(0x05)?),
                        user_id: f.string(0x06)?,
                    }))
                }
            }
            MsgType::Decision => {
                let verdict = match single_byte(&f, 0x01)? {
                    1 => Verdict::Granted,
                    2 => Verdict::Denied,
                    b => return Err(Error::RejectFormat(format!("bad verdict byte {b}"))),
                };
                let reason = match single_byte(&f, 0x02)? {
                    0 => Reason::Ok,
                    1 => Reason::ArFail,
                    2 => Reason::VpFail,
                    3 => Reason::SessionInvalid,
                    b => return Err(Error::RejectFormat(format!("bad reason byte {b}"))),
                };
                let new_ga_ts = f.get(0x03).map(|_| f.u64(0x03).map(Timestamp)).transpose()?;
                if (verdict == Verdict::Granted) != (reason == Reason::Ok)
                    || (verdict == Verdict::Granted) != new_ga_ts.is_some()
                {
                    return Err(Error::RejectFormat("inconsistent decision".into()));
                }
                Ok(Response::Decision(AccessDecision {
                    verdict,
                    reason,
                    new_ga_ts,
                }))
            }
            MsgType::Error => Ok(Response::Error {
                code: u16::from_be_bytes(f.array(0x01)?),
                message: f.string(0x02)?,
            }),
            MsgType::AccessRequest => {
                Err(Error::RejectFrame("ACCESS_REQUEST is not a response type".into()))
            }
        }
    }
}

fn verdict_byte(v: Verdict) -> u8 {
    match v {
        Verdict::Granted => 1,
        Verdict::Denied => 2,
    }
}

fn reason_byte(r: Reason) -> u8 {
    match r {
        Reason::Ok => 0,
        Reason::ArFail => 1,
        Reason::VpFail => 2,
        Reason::SessionInvalid => 3,
    }
}

/// Server-side dispatch of one decoded message. Never panics on bad input;
/// every failure becomes an `ERROR` message.
pub fn handle_message(server: &AuthzServer, msg: &WireMessage) -> WireMessage {
    let outcome = Request::from_message(msg).and_then(|req| match req {
        Request::Enroll { user, key } => server
            .enroll(user, key, None)
            .map(|(_, gas)| Response::Enrolled(gas)),
        Request::Challenge { user_id } => server.issue_challenge(&user_id).map(Response::Challenge),
        Request::OpenSession { user_id, proof } => {
            server.open_session(&user_id, &proof).map(Response::Session)
        }
        Request::Access(req) => server.authorize(&req).map(Response::Decision),
    });
    match outcome {
        Ok(resp) => resp.to_message(),
        Err(e) => WireMessage::error(&e),
    }
}

/// Decode-then-dispatch for raw frame bytes.
pub fn handle_bytes(server: &AuthzServer, data: &[u8]) -> WireMessage {
    match decode_frame(data) {
        Ok(msg) => handle_message(server, &msg),
        Err(e) => WireMessage::error(&e),
    }
}

fn serve_connection(server: &AuthzServer, stream: TcpStream) -> Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    loop {
        match read_frame(&mut reader) {
            Ok(ReadOutcome::Eof) => return Ok(()),
            Ok(ReadOutcome::Message(msg)) => write_frame(&mut writer, &handle_message(server, &msg))?,
            Ok(ReadOutcome::Rejected(e)) => write_frame(&mut writer, &WireMessage::error(&e))?,
            Err(e @ Error::RejectFrame(_)) => {
                let _ = write_frame(&mut writer, &WireMessage::error(&e));
                return Ok(());
            }
            Err(e) => return Err(e),
        }
    }
}

/// A listening server. Each connection gets its own thread.
pub struct WireServer {
    listener: TcpListener,
    server: Arc<AuthzServer>,
    stop: Arc<AtomicBool>,
}

pub struct ServeHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl WireServer {
    pub fn bind(addr: impl ToSocketAddrs, server: Arc<AuthzServer>) -> Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            server,
            stop: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Accepts connections until the process ends or a [`ServeHandle`] stops it.
    pub fn run(self) -> Result<()> {
        for stream in self.listener.incoming() {
            if self.stop.load(Ordering::SeqCst) {
                break;
            }
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let _ = stream.set_nodelay(true);
            let server = self.server.clone();
            std::thread::spawn(move || {
                let peer = stream.peer_addr().ok();
                if let Err(e) = serve_connection(&server, stream) {
                    log::debug!("connection {peer:?} closed: {e}");
                }
            });
        }
        Ok(())
    }

    pub fn spawn(self) -> Result<ServeHandle> {
        let addr = self.local_addr()?;
        let stop = self.stop.clone();
        let thread = std::thread::spawn(move || {
            if let Err(e) = self.run() {
                log::error!("server loop failed: {e}");
            }
        });
        Ok(ServeHandle {
            addr,
            stop,
            thread: Some(thread),
        })
    }
}

impl ServeHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // unblock accept()
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServeHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop_inner();
        }
    }
}

/// Blocking client over one TCP connection.
pub struct WireClient {
    conn: Mutex<(BufReader<TcpStream>, BufWriter<TcpStream>)>,
}

impl WireClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            conn: Mutex::new((BufReader::new(stream.try_clone()?), BufWriter::new(stream))),
        })
    }

    pub fn call(&self, msg: &WireMessage) -> Result<WireMessage> {
        let mut guard = self.conn.lock().unwrap_or_else(|e| e.into_inner());
        let (reader, writer) = &mut *guard;
        write_frame(writer, msg)?;
        match read_frame(reader)? {
            ReadOutcome::Message(m) => Ok(m),
            ReadOutcome::Rejected(e) => Err(e),
            ReadOutcome::Eof => Err(Error::Io(std::io::ErrorKind::UnexpectedEof.into())),
        }
    }

    fn request(&self, req: &Request) -> Result<Response> {
        match Response::from_message(&self.call(&req.to_message())?)? {
            Response::Error { code, message } => Err(Error::Remote { code, message }),
            other => Ok(other),
        }
    }

    pub fn enroll(&self, user: &UserAttr, key: &AuthKey) -> Result<Vec<GrantedAccess>> {
        match self.request(&Request::Enroll {
            user: user.clone(),
            key: key.clone(),
        })? {
            Response::Enrolled(gas) => Ok(gas),
            other => Err(unexpected(&other)),
        }
    }

    /// Challenge then proof, returning the new session.
    pub fn open_session(&self, user_id: &str, key: &AuthKey) -> Result<SessionId> {
        let nonce = match self.request(&Request::Challenge {
            user_id: user_id.to_owned(),
        })? {
            Response::Challenge(n) => n,
            other => return Err(unexpected(&other)),
        };
        match self.request(&Request::OpenSession {
            user_id: user_id.to_owned(),
            proof: crate::server::key_proof_for(key, &nonce),
        })? {
            Response::Session(s) => Ok(s),
            other => Err(unexpected(&other)),
        }
    }
}

fn unexpected(resp: &Response) -> Error {
    Error::RejectFormat(format!("unexpected response {resp:?}"))
}

impl AuthzEndpoint for WireClient {
    fn authorize(&self, req: &AccessRequest) -> Result<AccessDecision> {
        match self.request(&Request::Access(req.clone()))? {
            Response::Decision(d) => Ok(d),
            other => Err(unexpected(&other)),
        }
    }
}
