//! Console listeners: newline-delimited JSON over TCP, and the same
//! messages as WebSocket text frames.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use tungstenite::{Message, WebSocket};

use crate::error::{ServiceError, ServiceResult};
use crate::hub::Recv;
use crate::pipeline::ServiceHandle;
use crate::wire::encode;

const ACCEPT_POLL: Duration = Duration::from_millis(20);
const WS_POLL: Duration = Duration::from_millis(10);

pub struct Listener {
    addr: SocketAddr,
    websocket: bool,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl Listener {
    pub fn tcp(addr: &str, handle: ServiceHandle) -> ServiceResult<Self> {
        Self::bind(addr, handle, false)
    }

    pub fn websocket(addr: &str, handle: ServiceHandle) -> ServiceResult<Self> {
        Self::bind(addr, handle, true)
    }

    fn bind(addr: &str, handle: ServiceHandle, websocket: bool) -> ServiceResult<Self> {
        let bind_err = |source| ServiceError::Bind {
            addr: addr.to_owned(),
            source,
        };
        let listener = TcpListener::bind(addr).map_err(bind_err)?;
        listener.set_nonblocking(true).map_err(bind_err)?;
        let local = listener.local_addr().map_err(bind_err)?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = std::thread::Builder::new()
            .name(if websocket { "ws-accept" } else { "tcp-accept" }.into())
            .spawn(move || accept_loop(listener, handle, websocket, flag))
            .map_err(bind_err)?;
        log::info!("{} listener on {local}", if websocket { "websocket" } else { "ndjson" });
        Ok(Self {
            addr: local,
            websocket,
            stop,
            thread: Some(thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn is_websocket(&self) -> bool {
        self.websocket
    }

    /// Stops accepting. Open connections end once the hub closes.
    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Listener {
    fn drop(&mut self) {
        self.halt();
    }
}

fn accept_loop(listener: TcpListener, handle: ServiceHandle, websocket: bool, stop: Arc<AtomicBool>) {
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                log::info!("console connected from {peer}");
                let handle = handle.clone();
                let spawned = std::thread::Builder::new()
                    .name(format!("conn-{peer}"))
                    .spawn(move || {
                        let result = if websocket {
                            serve_websocket(stream, handle).map_err(|e| e.to_string())
                        } else {
                            serve_tcp(stream, handle).map_err(|e| e.to_string())
                        };
                        if let Err(e) = result {
                            log::debug!("connection {peer} ended: {e}");
                        }
                    });
                if let Err(e) = spawned {
                    log::error!("cannot serve {peer}: {e}");
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => std::thread::sleep(ACCEPT_POLL),
            Err(e) => {
                log::warn!("accept failed: {e}");
                std::thread::sleep(ACCEPT_POLL);
            }
        }
    }
}

fn serve_tcp(stream: TcpStream, handle: ServiceHandle) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let sub = handle.connect();

    let writer_stream = stream.try_clone()?;
    let writer_sub = sub.clone();
    let writer = std::thread::spawn(move || {
        let mut out = BufWriter::new(&writer_stream);
        let mut run = || -> std::io::Result<()> {
            while let Some(msg) = writer_sub.recv() {
                out.write_all(encode(&msg).as_bytes())?;
                out.write_all(b"\n")?;
                if writer_sub.is_empty() {
                    out.flush()?;
                }
            }
            out.flush()
        };
        let _ = run();
        // Unblocks the reader when the hub closes or the peer stops reading.
        let _ = writer_stream.shutdown(Shutdown::Both);
    });

    let reader = BufReader::new(&stream);
    let mut result = Ok(());
    for line in reader.lines() {
        match line {
            Ok(line) => handle.handle_line(&line, &sub),
            Err(e) if e.kind() == std::io::ErrorKind::InvalidData => {
                handle.handle_line("\u{fffd}", &sub);
            }
            Err(e) => {
                result = Err(e);
                break;
            }
        }
    }
    handle.disconnect(&sub);
    let _ = writer.join();
    result
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io)
        if matches!(io.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut))
}

fn serve_websocket(stream: TcpStream, handle: ServiceHandle) -> Result<(), tungstenite::Error> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut ws: WebSocket<TcpStream> = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => {
            tungstenite::Error::Io(std::io::Error::other("handshake interrupted"))
        }
    })?;
    ws.get_mut().set_read_timeout(Some(WS_POLL))?;
    let sub = handle.connect();

    let result = (|| loop {
        loop {
            match sub.try_recv() {
                Recv::Message(m) => ws.write(Message::text(encode(&m)))?,
                Recv::Timeout => break,
                Recv::Closed => {
                    ws.flush()?;
                    let _ = ws.close(None);
                    let _ = ws.flush();
                    return Ok(());
                }
            }
        }
        ws.flush()?;
        match ws.read() {
            Ok(Message::Text(text)) => handle.handle_line(text.as_str(), &sub),
            Ok(Message::Binary(bytes)) => match std::str::from_utf8(&bytes) {
                Ok(text) => handle.handle_line(text, &sub),
                Err(_) => handle.handle_line("\u{fffd}", &sub),
            },
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(e) if is_timeout(&e) => {}
            Err(tungstenite::Error::ConnectionClosed) => return Ok(()),
            Err(e) => return Err(e),
        }
    })();
    handle.disconnect(&sub);
    result
}
