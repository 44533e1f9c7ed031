//! TCP front end: one reader thread and one writer thread per connection.

use std::io::{self, BufReader};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use tracing::{debug, info, warn};

use crate::config::ServiceConfig;
use crate::frame::{read_frame, write_frame, Frame, FrameError};
use crate::scheduler::{Outbox, Scheduler, ServerSession};
use crate::ErrorCode;

const ACCEPT_POLL: Duration = Duration::from_millis(5);

pub struct Server {
    listener: TcpListener,
    scheduler: Arc<Scheduler>,
}

impl Server {
    pub fn bind(config: ServiceConfig) -> io::Result<Self> {
        let listener = TcpListener::bind(config.listen)?;
        Ok(Self {
            listener,
            scheduler: Arc::new(Scheduler::new(config)),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn scheduler(&self) -> Arc<Scheduler> {
        Arc::clone(&self.scheduler)
    }

    /// Serves until `stop` is set or `max_rounds` rounds have completed, then
    /// closes every connection after its queued frames are written.
    pub fn run(self, max_rounds: Option<usize>, stop: Arc<AtomicBool>) -> io::Result<()> {
        self.listener.set_nonblocking(true)?;
        info!(addr = %self.listener.local_addr()?, "scheduler listening");
        let mut connections: Vec<(TcpStream, JoinHandle<()>)> = Vec::new();
        loop {
            if stop.load(Ordering::Relaxed)
                || max_rounds.is_some_and(|n| self.scheduler.rounds_completed() >= n)
            {
                break;
            }
            match self.listener.accept() {
                Ok((stream, peer)) => {
                    debug!(%peer, "connection accepted");
                    stream.set_nonblocking(false)?;
                    stream.set_nodelay(true)?;
                    let handle = stream.try_clone()?;
                    let scheduler = Arc::clone(&self.scheduler);
                    let worker = thread::spawn(move || serve_connection(stream, scheduler));
                    connections.push((handle, worker));
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(ACCEPT_POLL),
                Err(e) => warn!(error = %e, "accept failed"),
            }
            connections.retain(|(_, worker)| !worker.is_finished());
        }
        for (stream, _) in &connections {
            let _ = stream.shutdown(Shutdown::Read);
        }
        for (_, worker) in connections {
            let _ = worker.join();
        }
        info!(rounds = self.scheduler.rounds_completed(), "scheduler stopped");
        Ok(())
    }

    /// Runs the server on a background thread.
    pub fn spawn(self, max_rounds: Option<usize>) -> io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let scheduler = self.scheduler();
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let thread = thread::spawn(move || self.run(max_rounds, flag));
        Ok(ServerHandle {
            addr,
            scheduler,
            stop,
            thread,
        })
    }
}

pub struct ServerHandle {
    pub addr: SocketAddr,
    pub scheduler: Arc<Scheduler>,
    stop: Arc<AtomicBool>,
    thread: JoinHandle<io::Result<()>>,
}

impl ServerHandle {
    pub fn shutdown(self) -> io::Result<()> {
        self.stop.store(true, Ordering::Relaxed);
        self.join()
    }

    /// Waits for the server to stop on its own (e.g. after its round limit).
    pub fn join(self) -> io::Result<()> {
        self.thread.join().expect("server thread panicked")
    }
}

fn serve_connection(stream: TcpStream, scheduler: Arc<Scheduler>) {
    let (outbox, queue) = Outbox::new();
    let mut write_half = match stream.try_clone() {
        Ok(s) => s,
        Err(e) => {
            warn!(error = %e, "cannot clone connection");
            return;
        }
    };
    let writer = thread::spawn(move || {
        for frame in queue {
            if write_frame(&mut write_half, &frame).is_err() {
                break;
            }
        }
        let _ = write_half.shutdown(Shutdown::Both);
    });

    let mut session = ServerSession::new(scheduler, outbox);
    let mut reader = BufReader::new(stream);
    loop {
        let frame = match read_frame(&mut reader) {
            Ok(frame) => frame,
            Err(FrameError::Closed) => break,
            Err(FrameError::Io(e)) => {
                debug!(error = %e, "connection read failed");
                break;
            }
            Err(e) => {
                warn!(error = %e, "malformed frame; closing connection");
                session.outbox().send(Frame::error(ErrorCode::MalformedMessage));
                break;
            }
        };
        if let Err(e) = session.handle(frame) {
            let code = e.code();
            warn!(client = ?session.client_id(), error = %e, "request rejected");
            session.outbox().send(Frame::error(code));
            if code.is_fatal() {
                break;
            }
        }
    }
    // dropping the session closes the queue once it is drained
    drop(session);
    let _ = writer.join();
}
