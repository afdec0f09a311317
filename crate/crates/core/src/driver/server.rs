//! Minimal RESP2 server backed by an in-memory [`FlatKeyspace`].
//!
//! Serves PING SET GET DEL EXISTS INCRBY HSET HGET HDEL HINCRBY HGETALL SADD
//! SREM SMEMBERS RPUSH LRANGE LLEN KEYS FLUSHALL plus MULTI/EXEC/DISCARD.
//! One thread per connection; every command (and every EXEC) runs under the
//! keyspace lock.

use std::io::{self, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use parking_lot::Mutex;

use super::flat::{Command, FlatKeyspace};
use super::resp::{read_command, write_reply, Reply, RespError, IO_BUFFER};

struct Inner {
    keyspace: Mutex<FlatKeyspace>,
    conns: Mutex<Vec<TcpStream>>,
    stopping: AtomicBool,
    commands: AtomicU64,
}

/// Handle to a running server; dropping it stops the server.
pub struct MiniRespServer {
    addr: SocketAddr,
    inner: Arc<Inner>,
    acceptor: Option<JoinHandle<()>>,
}

impl MiniRespServer {
    /// Binds `addr` (e.g. `127.0.0.1:0` for an ephemeral port) and starts serving.
    pub fn start(addr: &str) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let inner = Arc::new(Inner {
            keyspace: Mutex::new(FlatKeyspace::new()),
            conns: Mutex::new(Vec::new()),
            stopping: AtomicBool::new(false),
            commands: AtomicU64::new(0),
        });
        let acceptor = {
            let inner = inner.clone();
            std::thread::Builder::new().name("resp-accept".into()).spawn(move || accept_loop(listener, inner))?
        };
        Ok(Self { addr, inner, acceptor: Some(acceptor) })
    }

    pub fn start_on_port(port: u16) -> io::Result<Self> {
        Self::start(&format!("127.0.0.1:{port}"))
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Commands executed so far, transactions counted per queued command.
    pub fn commands_served(&self) -> u64 {
        self.inner.commands.load(Ordering::Relaxed)
    }

    /// Severs every open client connection; the server keeps accepting.
    pub fn drop_connections(&self) {
        for c in self.inner.conns.lock().drain(..) {
            let _ = c.shutdown(std::net::Shutdown::Both);
        }
    }

    /// Runs a command directly against the keyspace.
    pub fn execute(&self, args: &[Vec<u8>]) -> Reply {
        self.inner.keyspace.lock().execute(args)
    }

    pub fn shutdown(&mut self) {
        if self.inner.stopping.swap(true, Ordering::SeqCst) {
            return;
        }
        // Unblock accept().
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
        self.drop_connections();
    }
}

impl Drop for MiniRespServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(listener: TcpListener, inner: Arc<Inner>) {
    for stream in listener.incoming() {
        if inner.stopping.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = stream else { continue };
        let _ = stream.set_nodelay(true);
        if let Ok(c) = stream.try_clone() {
            let mut conns = inner.conns.lock();
            conns.retain(|c| c.peer_addr().is_ok());
            conns.push(c);
        }
        let inner = inner.clone();
        let _ = std::thread::Builder::new().name("resp-conn".into()).spawn(move || {
            let _ = serve(stream, &inner);
        });
    }
}

fn serve(stream: TcpStream, inner: &Inner) -> io::Result<()> {
    let mut reader = BufReader::with_capacity(IO_BUFFER, stream.try_clone()?);
    let mut writer = BufWriter::with_capacity(IO_BUFFER, stream);
    let mut queued: Option<Vec<Command>> = None;
    let mut out = Vec::new();
    loop {
        let cmd = match read_command(&mut reader) {
            Ok(Some(c)) => c,
            Ok(None) => return Ok(()),
            Err(RespError::Malformed(m)) => {
                write_reply(&mut out, &Reply::err(format!("ERR Protocol error: {m}")));
                writer.write_all(&out)?;
                writer.flush()?;
                return Ok(());
            }
            Err(RespError::Io(e)) => return Err(e),
        };
        let reply = dispatch(cmd, &mut queued, inner);
        write_reply(&mut out, &reply);
        // Flush once the client has nothing more pipelined.
        if reader.buffer().is_empty() {
            writer.write_all(&out)?;
            writer.flush()?;
            out.clear();
        }
    }
}

fn dispatch(cmd: Command, queued: &mut Option<Vec<Command>>, inner: &Inner) -> Reply {
    let name = cmd[0].to_ascii_uppercase();
    match (name.as_slice(), queued.as_mut()) {
        (b"MULTI", Some(_)) => Reply::err("ERR MULTI calls can not be nested"),
        (b"MULTI", None) => {
            *queued = Some(Vec::new());
            Reply::ok()
        }
        (b"EXEC", None) => Reply::err("ERR EXEC without MULTI"),
        (b"EXEC", Some(_)) => {
            let cmds = queued.take().unwrap_or_default();
            let mut ks = inner.keyspace.lock();
            inner.commands.fetch_add(cmds.len() as u64, Ordering::Relaxed);
            Reply::array(cmds.iter().map(|c| ks.execute(c)).collect())
        }
        (b"DISCARD", None) => Reply::err("ERR DISCARD without MULTI"),
        (b"DISCARD", Some(_)) => {
            *queued = None;
            Reply::ok()
        }
        (_, Some(q)) => {
            q.push(cmd);
            Reply::Simple("QUEUED".into())
        }
        (_, None) => {
            inner.commands.fetch_add(1, Ordering::Relaxed);
            inner.keyspace.lock().execute(&cmd)
        }
    }
}
