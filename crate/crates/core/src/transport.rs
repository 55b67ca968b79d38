//! Line-oriented transport to external model services.
//!
//! A backend is addressed by URI: `exec:<program> [args...]` spawns a child
//! process and talks over its stdin/stdout, `tcp:<host>:<port>` connects to a
//! server. Each connection carries one request at a time; concurrent callers
//! draw separate connections from a [`ConnectionPool`].

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("invalid backend uri {0:?} (expected exec:<cmd> or tcp:<host>:<port>)")]
    Uri(String),
    #[error("cannot start backend {uri}: {source}")]
    Connect {
        uri: String,
        #[source]
        source: std::io::Error,
    },
    #[error("backend {uri} i/o error: {source}")]
    Io {
        uri: String,
        #[source]
        source: std::io::Error,
    },
    #[error("backend {uri} timed out")]
    Timeout { uri: String },
    #[error("backend {uri} closed the connection")]
    Closed { uri: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendUri {
    Exec { program: String, args: Vec<String> },
    Tcp { addr: String },
}

impl FromStr for BackendUri {
    type Err = TransportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TransportError::Uri(s.to_string());
        if let Some(cmd) = s.strip_prefix("exec:") {
            let mut parts = cmd.split_whitespace().map(str::to_string);
            let program = parts.next().ok_or_else(bad)?;
            Ok(Self::Exec {
                program,
                args: parts.collect(),
            })
        } else if let Some(addr) = s.strip_prefix("tcp:") {
            match addr.rsplit_once(':') {
                Some((host, port)) if !host.is_empty() && port.parse::<u16>().is_ok() => {
                    Ok(Self::Tcp { addr: addr.to_string() })
                }
                _ => Err(bad()),
            }
        } else {
            Err(bad())
        }
    }
}

impl std::fmt::Display for BackendUri {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Exec { program, args } => {
                write!(f, "exec:{program}")?;
                for a in args {
                    write!(f, " {a}")?;
                }
                Ok(())
            }
            Self::Tcp { addr } => write!(f, "tcp:{addr}"),
        }
    }
}

enum Link {
    Exec {
        child: Child,
        stdin: ChildStdin,
        stdout: BufReader<ChildStdout>,
    },
    Tcp {
        writer: TcpStream,
        reader: BufReader<TcpStream>,
    },
}

/// One open connection to a backend.
pub struct Connection {
    uri: String,
    link: Link,
}

impl Connection {
    pub fn open(uri: &BackendUri, timeout: Option<Duration>) -> Result<Self, TransportError> {
        let name = uri.to_string();
        let connect_err = |source| TransportError::Connect {
            uri: name.clone(),
            source,
        };
        let link = match uri {
            BackendUri::Exec { program, args } => {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(connect_err)?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
                Link::Exec { child, stdin, stdout }
            }
            BackendUri::Tcp { addr } => {
                let stream = TcpStream::connect(addr).map_err(connect_err)?;
                stream.set_read_timeout(timeout).map_err(connect_err)?;
                stream.set_write_timeout(timeout).map_err(connect_err)?;
                let reader = BufReader::new(stream.try_clone().map_err(connect_err)?);
                Link::Tcp { writer: stream, reader }
            }
        };
        Ok(Self { uri: name, link })
    }

    /// Sends one line and waits for one line back (without the newline).
    pub fn round_trip(&mut self, line: &str) -> Result<String, TransportError> {
        debug_assert!(!line.contains('\n'));
        let uri = &self.uri;
        let io_err = |source: std::io::Error| match source.kind() {
            std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut => {
                TransportError::Timeout { uri: uri.clone() }
            }
            _ => TransportError::Io {
                uri: uri.clone(),
                source,
            },
        };
        let (w, r): (&mut dyn Write, &mut dyn BufRead) = match &mut self.link {
            Link::Exec { stdin, stdout, .. } => (stdin, stdout),
            Link::Tcp { writer, reader } => (writer, reader),
        };
        w.write_all(line.as_bytes()).map_err(io_err)?;
        w.write_all(b"\n").map_err(io_err)?;
        w.flush().map_err(io_err)?;
        let mut reply = String::new();
        if r.read_line(&mut reply).map_err(io_err)? == 0 {
            return Err(TransportError::Closed { uri: uri.clone() });
        }
        while reply.ends_with('\n') || reply.ends_with('\r') {
            reply.pop();
        }
        Ok(reply)
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Link::Exec { child, .. } = &mut self.link {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Lazily grown set of connections to one backend. A connection is only
/// ever used by one caller at a time and is dropped after any failure.
pub struct ConnectionPool {
    uri: BackendUri,
    timeout: Option<Duration>,
    idle: Mutex<Vec<Connection>>,
}

impl ConnectionPool {
    pub fn new(uri: BackendUri, timeout: Option<Duration>) -> Self {
        Self {
            uri,
            timeout,
            idle: Mutex::new(Vec::new()),
        }
    }

    pub fn uri(&self) -> &BackendUri {
        &self.uri
    }

    pub fn round_trip(&self, line: &str) -> Result<String, TransportError> {
        let pooled = self.idle.lock().expect("pool lock").pop();
        let mut conn = match pooled {
            Some(c) => c,
            None => Connection::open(&self.uri, self.timeout)?,
        };
        let reply = conn.round_trip(line)?;
        self.idle.lock().expect("pool lock").push(conn);
        Ok(reply)
    }
}
