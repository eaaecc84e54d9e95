//! Fixed-rate control loop with a live command connection.

use std::io::{self, BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::mailbox::{CommandMailbox, TelemetryQueue};
use super::wire::{decode, encode, salvage_seq, ClientFrame, ErrorFrame, Hello, ServerFrame, TelemetryMessage};
use crate::sim::{LogRecord, OperatorInput, Pipeline, Scenario, SimError};

/// Environment variable that overrides the default endpoint.
pub const ENDPOINT_ENV: &str = "BIMANUAL_ENDPOINT";
pub const DEFAULT_ENDPOINT: &str = "127.0.0.1:7878";
pub const DEFAULT_DECIMATION: usize = 20;

const POLL: Duration = Duration::from_millis(10);
const WRITE_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("cannot bind {endpoint}: {source}")]
    Bind { endpoint: String, source: io::Error },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("connection handler failed: {0}")]
    Handler(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Pacing {
    /// One cycle per `dt` of wall time.
    #[default]
    Realtime,
    /// Cycles run back to back.
    Unpaced,
}

#[derive(Clone, Debug)]
pub struct ServeOptions {
    /// Telemetry is published every `decimation`-th cycle.
    pub decimation: usize,
    pub pacing: Pacing,
    /// Hold cycle 0 until the first command has arrived.
    pub wait_for_command: bool,
    pub max_cycles: Option<u64>,
    pub queue_capacity: usize,
    /// Keep every cycle's record for the summary.
    pub keep_log: bool,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            decimation: DEFAULT_DECIMATION,
            pacing: Pacing::Realtime,
            wait_for_command: false,
            max_cycles: None,
            queue_capacity: 256,
            keep_log: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ServeSummary {
    pub cycles: u64,
    pub records: Vec<LogRecord>,
    pub telemetry_dropped: u64,
}

#[derive(Debug)]
struct Shared {
    mailbox: CommandMailbox,
    telemetry: TelemetryQueue<TelemetryMessage>,
    shutdown: AtomicBool,
    cycle: AtomicU64,
}

/// Stops a running server from another thread.
#[derive(Clone, Debug)]
pub struct ShutdownHandle(Arc<Shared>);

impl ShutdownHandle {
    pub fn shutdown(&self) {
        self.0.shutdown.store(true, Ordering::SeqCst);
    }
}

pub struct Server {
    listener: TcpListener,
    scenario: Scenario,
    pipeline: Pipeline,
    options: ServeOptions,
    shared: Arc<Shared>,
}

impl Server {
    /// Build the pipeline from the scenario (its command stream is ignored)
    /// and bind the endpoint.
    pub fn bind(scenario: &Scenario, endpoint: &str, options: ServeOptions) -> Result<Self, BridgeError> {
        assert!(options.decimation > 0, "telemetry decimation must be at least 1");
        let pipeline = Pipeline::new(scenario)?;
        let listener =
            TcpListener::bind(endpoint).map_err(|source| BridgeError::Bind { endpoint: endpoint.into(), source })?;
        listener
            .set_nonblocking(true)
            .map_err(|source| BridgeError::Bind { endpoint: endpoint.into(), source })?;
        let shared = Arc::new(Shared {
            mailbox: CommandMailbox::new(),
            telemetry: TelemetryQueue::new(options.queue_capacity),
            shutdown: AtomicBool::new(false),
            cycle: AtomicU64::new(0),
        });
        Ok(Self { listener, scenario: scenario.clone(), pipeline, options, shared })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    pub fn shutdown_handle(&self) -> ShutdownHandle {
        ShutdownHandle(Arc::clone(&self.shared))
    }

    /// Run the loop until shut down or `max_cycles` is reached.
    pub fn run(self) -> Result<ServeSummary, BridgeError> {
        let Server { listener, scenario, mut pipeline, options, shared } = self;
        let hello = Hello {
            dt: pipeline.dt,
            decimation: options.decimation,
            dof: pipeline.dual.dof(),
            adaptation: scenario.adaptation,
            tau_limit: pipeline.tau_limit().to_vec(),
        };
        let handler = {
            let shared = Arc::clone(&shared);
            thread::Builder::new()
                .name("bridge-connection".into())
                .spawn(move || accept_loop(listener, &shared, &hello))
                .map_err(|e| BridgeError::Handler(e.to_string()))?
        };

        if options.wait_for_command {
            while shared.mailbox.latest().is_none() && !shared.shutdown.load(Ordering::SeqCst) {
                thread::sleep(Duration::from_millis(1));
            }
        }

        let dt = Duration::from_secs_f64(pipeline.dt);
        let start = Instant::now();
        let mut records = Vec::new();
        let mut k = 0u64;
        while !shared.shutdown.load(Ordering::SeqCst) && options.max_cycles.map_or(true, |m| k < m) {
            shared.cycle.store(k, Ordering::SeqCst);
            let posted = shared.mailbox.latest();
            let input = posted.map_or_else(OperatorInput::hold, |p| p.input);
            let disturbance = scenario.disturbance_at(pipeline.time());
            let record = pipeline.cycle(&input, disturbance);
            if k % options.decimation as u64 == 0 {
                let applied = posted.and_then(|p| p.seq.map(|s| (s, p.received_cycle)));
                shared.telemetry.push(TelemetryMessage::from_record(k, &record, applied));
            }
            if options.keep_log {
                records.push(record);
            }
            k += 1;
            if options.pacing == Pacing::Realtime {
                if let Some(wait) = (start + dt.mul_f64(k as f64)).checked_duration_since(Instant::now()) {
                    thread::sleep(wait);
                }
            }
        }

        shared.shutdown.store(true, Ordering::SeqCst);
        shared.telemetry.close();
        handler.join().map_err(|_| BridgeError::Handler("connection thread panicked".into()))?;
        Ok(ServeSummary { cycles: k, records, telemetry_dropped: shared.telemetry.dropped() })
    }
}

fn accept_loop(listener: TcpListener, shared: &Shared, hello: &Hello) {
    while !shared.shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                if let Err(e) = serve_client(stream, shared, hello) {
                    if !matches!(e.kind(), ErrorKind::BrokenPipe | ErrorKind::ConnectionReset) {
                        eprintln!("bridge: connection ended: {e}");
                    }
                }
                shared.mailbox.hold(shared.cycle.load(Ordering::SeqCst));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(e) => {
                eprintln!("bridge: accept failed: {e}");
                thread::sleep(POLL);
            }
        }
    }
}

fn send(out: &Mutex<TcpStream>, frame: &ServerFrame) -> io::Result<()> {
    let mut s = out.lock().unwrap_or_else(|e| e.into_inner());
    s.write_all(encode(frame).as_bytes())
}

fn serve_client(stream: TcpStream, shared: &Shared, hello: &Hello) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(POLL))?;
    stream.set_write_timeout(Some(WRITE_TIMEOUT))?;
    let out = Mutex::new(stream.try_clone()?);
    shared.telemetry.clear();
    send(&out, &ServerFrame::Hello(hello.clone()))?;

    let done = AtomicBool::new(false);
    thread::scope(|scope| {
        let writer = scope.spawn(|| -> io::Result<()> {
            // Drains the queue before stopping, so the last cycles still go out.
            loop {
                if let Some(msg) = shared.telemetry.pop_timeout(POLL) {
                    if let Err(e) = send(&out, &ServerFrame::Telemetry(msg)) {
                        done.store(true, Ordering::SeqCst);
                        let _ = stream.shutdown(std::net::Shutdown::Both);
                        return Err(e);
                    }
                } else if done.load(Ordering::SeqCst) || shared.shutdown.load(Ordering::SeqCst) {
                    break;
                }
            }
            Ok(())
        });
        let read = read_commands(&stream, shared, &out, &done, hello.adaptation);
        done.store(true, Ordering::SeqCst);
        let wrote = writer.join().unwrap_or_else(|_| Err(io::Error::other("telemetry writer panicked")));
        read.and(wrote)
    })
}

fn read_commands(
    stream: &TcpStream,
    shared: &Shared,
    out: &Mutex<TcpStream>,
    done: &AtomicBool,
    adaptation: bool,
) -> io::Result<()> {
    let mut reader = BufReader::new(stream);
    let mut line = Vec::new();
    loop {
        if done.load(Ordering::SeqCst) || shared.shutdown.load(Ordering::SeqCst) {
            return Ok(());
        }
        match reader.read_until(b'\n', &mut line) {
            Ok(0) => return Ok(()),
            Ok(_) if line.last() != Some(&b'\n') => return Ok(()),
            Ok(_) => {}
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => continue,
            Err(e) => return Err(e),
        }
        let text = String::from_utf8_lossy(&line).trim().to_string();
        line.clear();
        if text.is_empty() {
            continue;
        }
        let reject = |message: String| {
            send(out, &ServerFrame::Error(ErrorFrame { message, seq: salvage_seq(&text) }))
        };
        match decode::<ClientFrame>(&text) {
            Ok(ClientFrame::Command(cmd)) => match cmd.validate(adaptation) {
                Ok(()) => {
                    shared.mailbox.offer(cmd.seq, cmd.input(), shared.cycle.load(Ordering::SeqCst));
                }
                Err(message) => reject(message)?,
            },
            Ok(ClientFrame::Shutdown) => {
                shared.shutdown.store(true, Ordering::SeqCst);
                return Ok(());
            }
            Err(message) => reject(message)?,
        }
    }
}
