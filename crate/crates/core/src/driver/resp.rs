//! RESP2 framing and the network driver.
//!
//! Commands go out as arrays of bulk strings. Replies may be simple strings,
//! errors, integers, bulk strings or arrays (nil bulk and nil array included).
//! Inline commands are not accepted.

use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use crate::key::StoreKey;

use super::flat::{self, Command};
use super::server::MiniRespServer;
use super::{next_session_id, Ack, Driver, DriverError, MutationBatch, Session, SessionInfo, Snapshot};

/// Nesting bound for arrays in replies.
const MAX_DEPTH: usize = 8;
/// Bulk strings beyond this size are treated as malformed (blobs are capped at 64 KiB).
const MAX_BULK: usize = 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    Simple(String),
    Error(String),
    Integer(i64),
    Bulk(Option<Vec<u8>>),
    Array(Option<Vec<Reply>>),
}

impl Reply {
    pub fn ok() -> Reply {
        Reply::Simple("OK".into())
    }

    pub fn err(msg: impl Into<String>) -> Reply {
        Reply::Error(msg.into())
    }

    pub fn bulk(b: impl Into<Vec<u8>>) -> Reply {
        Reply::Bulk(Some(b.into()))
    }

    pub fn nil() -> Reply {
        Reply::Bulk(None)
    }

    pub fn array(items: Vec<Reply>) -> Reply {
        Reply::Array(Some(items))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RespError {
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<RespError> for DriverError {
    fn from(e: RespError) -> Self {
        match e {
            RespError::Malformed(m) => DriverError::Protocol(m),
            RespError::Io(e) => DriverError::ConnectionLost(e.to_string()),
        }
    }
}

fn malformed(msg: impl Into<String>) -> RespError {
    RespError::Malformed(msg.into())
}

/// Frames a command as a RESP array of bulk strings.
pub fn encode_command<A: AsRef<[u8]>>(args: &[A]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + args.iter().map(|a| a.as_ref().len() + 16).sum::<usize>());
    write_command(&mut out, args);
    out
}

pub fn write_command<A: AsRef<[u8]>>(out: &mut Vec<u8>, args: &[A]) {
    out.push(b'*');
    out.extend_from_slice(args.len().to_string().as_bytes());
    out.extend_from_slice(b"\r\n");
    for a in args {
        let a = a.as_ref();
        out.push(b'$');
        out.extend_from_slice(a.len().to_string().as_bytes());
        out.extend_from_slice(b"\r\n");
        out.extend_from_slice(a);
        out.extend_from_slice(b"\r\n");
    }
}

pub fn encode_reply(reply: &Reply) -> Vec<u8> {
    let mut out = Vec::new();
    write_reply(&mut out, reply);
    out
}

pub fn write_reply(out: &mut Vec<u8>, reply: &Reply) {
    match reply {
        Reply::Simple(s) => {
            out.push(b'+');
            out.extend_from_slice(s.as_bytes());
        }
        Reply::Error(s) => {
            out.push(b'-');
            out.extend_from_slice(s.as_bytes());
        }
        Reply::Integer(n) => {
            out.push(b':');
            out.extend_from_slice(n.to_string().as_bytes());
        }
        Reply::Bulk(None) => out.extend_from_slice(b"$-1"),
        Reply::Bulk(Some(b)) => {
            out.push(b'$');
            out.extend_from_slice(b.len().to_string().as_bytes());
            out.extend_from_slice(b"\r\n");
            out.extend_from_slice(b);
        }
        Reply::Array(None) => out.extend_from_slice(b"*-1"),
        Reply::Array(Some(items)) => {
            out.push(b'*');
            out.extend_from_slice(items.len().to_string().as_bytes());
            out.extend_from_slice(b"\r\n");
            for item in items {
                write_reply(out, item);
            }
            return;
        }
    }
    out.extend_from_slice(b"\r\n");
}

/// Decodes one reply from the front of `buf`. Returns the reply and the number
/// of bytes consumed, or `None` if the frame is incomplete.
pub fn decode_reply(buf: &[u8]) -> Result<Option<(Reply, usize)>, RespError> {
    let mut cursor = io::Cursor::new(buf);
    match read_reply(&mut cursor) {
        Ok(r) => Ok(Some((r, cursor.position() as usize))),
        Err(RespError::Io(e)) if e.kind() == io::ErrorKind::UnexpectedEof => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn read_reply<R: BufRead>(r: &mut R) -> Result<Reply, RespError> {
    read_reply_depth(r, 0)
}

fn read_reply_depth<R: BufRead>(r: &mut R, depth: usize) -> Result<Reply, RespError> {
    if depth > MAX_DEPTH {
        return Err(malformed("arrays nested too deeply"));
    }
    let line = read_line(r)?;
    let (tag, rest) = line.split_first().ok_or_else(|| malformed("empty line"))?;
    match tag {
        b'+' => Ok(Reply::Simple(utf8(rest)?)),
        b'-' => Ok(Reply::Error(utf8(rest)?)),
        b':' => Ok(Reply::Integer(parse_int(rest)?)),
        b'$' => {
            let len = parse_int(rest)?;
            if len == -1 {
                return Ok(Reply::Bulk(None));
            }
            Ok(Reply::Bulk(Some(read_bulk_body(r, len)?)))
        }
        b'*' => {
            let n = parse_int(rest)?;
            if n == -1 {
                return Ok(Reply::Array(None));
            }
            if n < 0 {
                return Err(malformed(format!("bad array length {n}")));
            }
            let mut items = Vec::with_capacity((n as usize).min(1024));
            for _ in 0..n {
                items.push(read_reply_depth(r, depth + 1)?);
            }
            Ok(Reply::Array(Some(items)))
        }
        other => Err(malformed(format!("unexpected type byte {:?}", *other as char))),
    }
}

/// Reads a client command: an array of bulk strings. `Ok(None)` on clean EOF
/// before the first byte.
pub fn read_command<R: BufRead>(r: &mut R) -> Result<Option<Command>, RespError> {
    if r.fill_buf()?.is_empty() {
        return Ok(None);
    }
    let line = read_line(r)?;
    let Some((b'*', rest)) = line.split_first() else {
        return Err(malformed("expected command array"));
    };
    let n = parse_int(rest)?;
    if n <= 0 {
        return Err(malformed(format!("bad command length {n}")));
    }
    let mut args = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let line = read_line(r)?;
        let Some((b'$', rest)) = line.split_first() else {
            return Err(malformed("expected bulk string argument"));
        };
        let len = parse_int(rest)?;
        args.push(read_bulk_body(r, len)?);
    }
    Ok(Some(args))
}

fn read_bulk_body<R: BufRead>(r: &mut R, len: i64) -> Result<Vec<u8>, RespError> {
    if len < 0 || len as usize > MAX_BULK {
        return Err(malformed(format!("bad bulk length {len}")));
    }
    let mut body = vec![0; len as usize + 2];
    r.read_exact(&mut body)?;
    if !body.ends_with(b"\r\n") {
        return Err(malformed("bulk string not terminated by CRLF"));
    }
    body.truncate(len as usize);
    Ok(body)
}

fn read_line<R: BufRead>(r: &mut R) -> Result<Vec<u8>, RespError> {
    let mut line = Vec::new();
    let n = r.read_until(b'\n', &mut line)?;
    if n == 0 || !line.ends_with(b"\n") {
        return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into());
    }
    if !line.ends_with(b"\r\n") {
        return Err(malformed("line not terminated by CRLF"));
    }
    line.truncate(line.len() - 2);
    Ok(line)
}

fn utf8(b: &[u8]) -> Result<String, RespError> {
    String::from_utf8(b.to_vec()).map_err(|_| malformed("non UTF-8 status line"))
}

fn parse_int(b: &[u8]) -> Result<i64, RespError> {
    std::str::from_utf8(b)
        .ok()
        .and_then(|s| s.parse::<i64>().ok())
        .ok_or_else(|| malformed(format!("bad integer {:?}", String::from_utf8_lossy(b))))
}

/// Socket buffer size on both ends; large enough that a typical flush
/// pipeline moves in a few syscalls.
pub(crate) const IO_BUFFER: usize = 64 * 1024;

/// A RESP2 connection with buffered IO.
pub struct RespConnection {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl RespConnection {
    pub fn connect(addr: &str, timeout: Duration) -> Result<Self, DriverError> {
        let sock = addr
            .to_socket_addrs()
            .map_err(|e| DriverError::BadEndpoint(format!("{addr}: {e}")))?
            .next()
            .ok_or_else(|| DriverError::BadEndpoint(addr.to_owned()))?;
        let stream = TcpStream::connect_timeout(&sock, timeout)
            .map_err(|e| DriverError::ConnectionLost(format!("{addr}: {e}")))?;
        let lost = |e: io::Error| DriverError::ConnectionLost(e.to_string());
        stream.set_nodelay(true).map_err(lost)?;
        stream.set_read_timeout(Some(timeout)).map_err(lost)?;
        stream.set_write_timeout(Some(timeout)).map_err(lost)?;
        let reader = BufReader::with_capacity(IO_BUFFER, stream.try_clone().map_err(lost)?);
        Ok(Self { reader, writer: BufWriter::with_capacity(IO_BUFFER, stream) })
    }

    /// Sends all commands, then reads one reply per command.
    pub fn pipeline(&mut self, cmds: &[Command]) -> Result<Vec<Reply>, DriverError> {
        let mut buf = Vec::new();
        for c in cmds {
            write_command(&mut buf, c);
        }
        self.writer
            .write_all(&buf)
            .and_then(|_| self.writer.flush())
            .map_err(|e| DriverError::ConnectionLost(e.to_string()))?;
        cmds.iter().map(|_| Ok(read_reply(&mut self.reader)?)).collect()
    }

    pub fn call(&mut self, cmd: Command) -> Result<Reply, DriverError> {
        let mut replies = self.pipeline(std::slice::from_ref(&cmd))?;
        Ok(replies.pop().expect("one reply per command"))
    }
}

/// Driver speaking RESP2 to an external store (or to a bundled server).
pub struct RespDriver {
    endpoint: String,
    timeout: Duration,
    // Keeps a bundled server alive as long as the driver.
    _server: Option<MiniRespServer>,
}

impl RespDriver {
    pub fn connect(endpoint: &str) -> Result<Self, DriverError> {
        let driver = Self { endpoint: endpoint.to_owned(), timeout: Duration::from_secs(5), _server: None };
        // Probe once so a bad endpoint fails at configuration time.
        let mut conn = RespConnection::connect(endpoint, driver.timeout)?;
        match conn.call(vec![b"PING".to_vec()])? {
            Reply::Simple(s) if s == "PONG" => Ok(driver),
            other => Err(DriverError::Protocol(format!("unexpected PING reply {other:?}"))),
        }
    }

    /// Starts a private mini server on a loopback ephemeral port.
    pub fn with_local_server() -> Result<Self, DriverError> {
        let server = MiniRespServer::start("127.0.0.1:0")
            .map_err(|e| DriverError::ConnectionLost(format!("cannot start local server: {e}")))?;
        let mut driver = Self::connect(&server.local_addr().to_string())?;
        driver._server = Some(server);
        Ok(driver)
    }

    pub fn flush_all(&self) -> Result<(), DriverError> {
        let mut conn = RespConnection::connect(&self.endpoint, self.timeout)?;
        expect_ok(conn.call(vec![b"FLUSHALL".to_vec()])?)
    }

    pub fn server(&self) -> Option<&MiniRespServer> {
        self._server.as_ref()
    }
}

impl Driver for RespDriver {
    fn label(&self) -> &str {
        "resp"
    }

    fn endpoint(&self) -> String {
        self.endpoint.clone()
    }

    fn open_session(&self) -> Result<Box<dyn Session>, DriverError> {
        let conn = RespConnection::connect(&self.endpoint, self.timeout)?;
        Ok(Box::new(RespSession {
            info: SessionInfo {
                driver_label: "resp".into(),
                endpoint: self.endpoint.clone(),
                session_id: next_session_id(),
            },
            conn: Some(conn),
            timeout: self.timeout,
            uncertain_seq: None,
            acked_seq: 0,
        }))
    }
}

fn expect_ok(r: Reply) -> Result<(), DriverError> {
    match r {
        Reply::Simple(_) => Ok(()),
        Reply::Error(e) => Err(DriverError::Rejected(e)),
        other => Err(DriverError::Protocol(format!("unexpected reply {other:?}"))),
    }
}

struct RespSession {
    info: SessionInfo,
    conn: Option<RespConnection>,
    timeout: Duration,
    /// Sequence number of a batch whose outcome is unknown after a lost connection.
    uncertain_seq: Option<u64>,
    /// Highest sequence number this session has seen acknowledged.
    acked_seq: u64,
}

impl RespSession {
    fn seq_key(&self) -> Vec<u8> {
        format!("flexstate:session:{}", self.info.session_id).into_bytes()
    }

    fn with_conn<T>(
        &mut self,
        f: impl FnOnce(&mut RespConnection) -> Result<T, DriverError>,
    ) -> Result<T, DriverError> {
        if self.conn.is_none() {
            self.conn = Some(RespConnection::connect(&self.info.endpoint, self.timeout)?);
        }
        let res = f(self.conn.as_mut().expect("connected"));
        if matches!(res, Err(DriverError::ConnectionLost(_)) | Err(DriverError::Protocol(_))) {
            self.conn = None;
        }
        res
    }

    fn applied_seq(&mut self) -> Result<u64, DriverError> {
        let key = self.seq_key();
        match self.with_conn(|c| c.call(vec![b"GET".to_vec(), key]))? {
            Reply::Bulk(None) => Ok(0),
            Reply::Bulk(Some(v)) => std::str::from_utf8(&v)
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| DriverError::Protocol("corrupt session sequence".into())),
            other => Err(DriverError::Protocol(format!("unexpected reply {other:?}"))),
        }
    }
}

impl Session for RespSession {
    fn info(&self) -> &SessionInfo {
        &self.info
    }

    fn apply(&mut self, batch: &MutationBatch) -> Result<Ack, DriverError> {
        if batch.is_empty() {
            return Ok(Ack { seq: batch.seq, mutations: 0, fresh: true });
        }
        if batch.seq != 0 && batch.seq <= self.acked_seq {
            return Ok(Ack { seq: batch.seq, mutations: batch.len(), fresh: false });
        }
        if batch.seq != 0 && self.uncertain_seq.is_some_and(|s| s >= batch.seq) {
            let applied = self.applied_seq()?;
            self.acked_seq = self.acked_seq.max(applied);
            if applied >= batch.seq {
                self.uncertain_seq = None;
                return Ok(Ack { seq: batch.seq, mutations: batch.len(), fresh: false });
            }
        }
        // MULTI ... EXEC makes the batch all-or-nothing; the session sequence
        // number is written inside the same transaction.
        let mut cmds: Vec<Command> = Vec::with_capacity(batch.len() + 3);
        cmds.push(vec![b"MULTI".to_vec()]);
        for (key, m) in &batch.ops {
            cmds.extend(flat::mutation_commands(key, m));
        }
        if batch.seq != 0 {
            cmds.push(vec![b"SET".to_vec(), self.seq_key(), batch.seq.to_string().into_bytes()]);
        }
        cmds.push(vec![b"EXEC".to_vec()]);
        let replies = match self.with_conn(|c| c.pipeline(&cmds)) {
            Ok(r) => r,
            Err(e @ (DriverError::ConnectionLost(_) | DriverError::Protocol(_))) => {
                self.uncertain_seq = Some(batch.seq);
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        self.uncertain_seq = None;
        match replies.last() {
            Some(Reply::Array(Some(results))) => {
                if let Some(Reply::Error(e)) = results.iter().find(|r| matches!(r, Reply::Error(_))) {
                    return Err(DriverError::Rejected(e.clone()));
                }
                self.acked_seq = self.acked_seq.max(batch.seq);
                Ok(Ack { seq: batch.seq, mutations: batch.len(), fresh: true })
            }
            Some(Reply::Error(e)) => Err(DriverError::Rejected(e.clone())),
            other => Err(DriverError::Protocol(format!("unexpected EXEC reply {other:?}"))),
        }
    }

    fn fetch(&mut self, key: &StoreKey) -> Result<Option<Snapshot>, DriverError> {
        let cmd = flat::fetch_command(key);
        let reply = self.with_conn(|c| c.call(cmd))?;
        flat::decode_fetch(key.structure_type(), reply)
    }

    fn scan_prefix(&mut self, nf_id: &str, instance_id: &str) -> Result<Vec<(StoreKey, Snapshot)>, DriverError> {
        let pattern = flat::prefix_pattern(nf_id, instance_id);
        let reply = self.with_conn(|c| c.call(vec![b"KEYS".to_vec(), pattern]))?;
        let keys = flat::parse_key_list(reply, nf_id, instance_id)?;
        let cmds: Vec<Command> = keys.iter().map(flat::fetch_command).collect();
        let replies = if cmds.is_empty() { Vec::new() } else { self.with_conn(|c| c.pipeline(&cmds))? };
        let mut out = Vec::with_capacity(keys.len());
        for (key, reply) in keys.into_iter().zip(replies) {
            if let Some(snap) = flat::decode_fetch(key.structure_type(), reply)? {
                out.push((key, snap));
            }
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(out)
    }
}
