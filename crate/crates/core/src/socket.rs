//! Loopback TCP transport: one coordinator process plus one worker process
//! per node. Workers derive the plan and schedule themselves (the codegen
//! stage), exchange shuffle traffic over a pairwise mesh, and report stage
//! timings and per-slot byte counts back to the coordinator, which alone
//! assembles the ledger. A multicast is performed as sequential unicasts to
//! each receiver but its payload bytes are counted once.
//!
//! Wire format: every frame is a 4-byte little-endian body length, a 1-byte
//! type tag (0x01 control, 0x02 data), then the body. Control bodies are
//! JSON; data bodies are raw bytes.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{records_from_bytes, records_to_bytes, NodeId, Record};
use crate::orchestrator::{
    plan_for, Mode, NodeRuntime, RunOutcome, SortedOutput, StageTimes,
};
use crate::placement::{assign_files, FileAssignment};
use crate::transport::{slot_units, CostModel, InboundMessage, LedgerEntry, ShuffleLedger};
use crate::metrics::communication_load;

/// Environment variable choosing the coordinator's port; unset or 0 means an
/// ephemeral port assigned by the OS.
pub const PORT_BASE_ENV: &str = "CODED_SHUFFLE_PORT_BASE";

const FRAME_CTRL: u8 = 0x01;
const FRAME_DATA: u8 = 0x02;
/// Sanity cap on a single frame body; anything larger is a protocol error.
const MAX_FRAME: u32 = 1 << 30;
const IO_TIMEOUT: Duration = Duration::from_secs(120);
const ACCEPT_DEADLINE: Duration = Duration::from_secs(60);

/// How to launch and address the worker processes.
#[derive(Debug, Clone)]
pub struct SocketConfig {
    /// Executable to spawn for each worker (normally the CLI binary itself).
    pub worker_exe: PathBuf,
    /// Arguments inserted before the worker subcommand.
    pub worker_args: Vec<String>,
    /// Coordinator listen port; 0 asks the OS for an ephemeral port.
    pub port_base: u16,
}

impl SocketConfig {
    /// Uses `exe` as the worker binary, taking the port base from
    /// [`PORT_BASE_ENV`] when it holds a valid port.
    pub fn new(exe: impl Into<PathBuf>) -> Self {
        let port_base = std::env::var(PORT_BASE_ENV)
            .ok()
            .and_then(|value| value.parse().ok())
            .unwrap_or(0);
        SocketConfig {
            worker_exe: exe.into(),
            worker_args: Vec::new(),
            port_base,
        }
    }
}

/// Control-plane messages, JSON-encoded in 0x01 frames.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "msg", rename_all = "snake_case")]
enum Ctrl {
    Hello { node: usize },
    Setup { coded: bool, k: usize, r: usize },
    ListenReady { port: u16 },
    PortMap { ports: Vec<u16> },
    MeshReady,
    Proceed { stage: Stage },
    StageDone { stage: Stage, seconds: f64, slot_bytes: Vec<(usize, u64)> },
    Shutdown,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum Stage {
    Codegen,
    Map,
    Pack,
    Shuffle,
    Decode,
    Reduce,
}

fn write_frame(stream: &mut impl Write, kind: u8, body: &[u8]) -> Result<()> {
    let len = u32::try_from(body.len())
        .ok()
        .filter(|&len| len <= MAX_FRAME)
        .ok_or_else(|| Error::Protocol(format!("frame of {} bytes exceeds cap", body.len())))?;
    stream.write_all(&len.to_le_bytes())?;
    stream.write_all(&[kind])?;
    stream.write_all(body)?;
    stream.flush()?;
    Ok(())
}

fn read_frame(stream: &mut impl Read) -> Result<(u8, Vec<u8>)> {
    let mut header = [0u8; 5];
    stream.read_exact(&mut header)?;
    let len = u32::from_le_bytes([header[0], header[1], header[2], header[3]]);
    if len > MAX_FRAME {
        return Err(Error::Protocol(format!("frame of {len} bytes exceeds cap")));
    }
    let mut body = vec![0u8; len as usize];
    stream.read_exact(&mut body)?;
    Ok((header[4], body))
}

fn send_ctrl(stream: &mut impl Write, message: &Ctrl) -> Result<()> {
    let body = serde_json::to_vec(message)
        .map_err(|err| Error::Protocol(format!("control encode failed: {err}")))?;
    write_frame(stream, FRAME_CTRL, &body)
}

fn recv_ctrl(stream: &mut impl Read) -> Result<Ctrl> {
    let (kind, body) = read_frame(stream)?;
    if kind != FRAME_CTRL {
        return Err(Error::Protocol(format!(
            "expected control frame, got type {kind:#04x}"
        )));
    }
    serde_json::from_slice(&body)
        .map_err(|err| Error::Protocol(format!("control decode failed: {err}")))
}

fn send_data(stream: &mut impl Write, payload: &[u8]) -> Result<()> {
    write_frame(stream, FRAME_DATA, payload)
}

fn recv_data(stream: &mut impl Read) -> Result<Vec<u8>> {
    let (kind, body) = read_frame(stream)?;
    if kind != FRAME_DATA {
        return Err(Error::Protocol(format!(
            "expected data frame, got type {kind:#04x}"
        )));
    }
    Ok(body)
}

fn set_timeouts(stream: &TcpStream) -> Result<()> {
    stream.set_read_timeout(Some(IO_TIMEOUT))?;
    stream.set_write_timeout(Some(IO_TIMEOUT))?;
    Ok(())
}

/// Kills any still-running workers when the coordinator unwinds.
struct WorkerGuard(Vec<Child>);

impl Drop for WorkerGuard {
    fn drop(&mut self) {
        for child in &mut self.0 {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Accepts exactly `k` worker connections, indexed by their Hello node id.
fn accept_workers(
    listener: &TcpListener,
    k: usize,
    guard: &mut WorkerGuard,
) -> Result<Vec<TcpStream>> {
    listener.set_nonblocking(true)?;
    let deadline = Instant::now() + ACCEPT_DEADLINE;
    let mut streams: Vec<Option<TcpStream>> = (0..k).map(|_| None).collect();
    let mut connected = 0;
    while connected < k {
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                set_timeouts(&stream)?;
                let mut stream = stream;
                let hello = recv_ctrl(&mut stream)?;
                let Ctrl::Hello { node } = hello else {
                    return Err(Error::Protocol(format!(
                        "expected hello, got {hello:?}"
                    )));
                };
                if node == 0 || node > k || streams[node - 1].is_some() {
                    return Err(Error::Protocol(format!("bad hello from node {node}")));
                }
                streams[node - 1] = Some(stream);
                connected += 1;
            }
            Err(err) if err.kind() == std::io::ErrorKind::WouldBlock => {
                if Instant::now() > deadline {
                    return Err(Error::Protocol(format!(
                        "only {connected} of {k} workers connected"
                    )));
                }
                for child in &mut guard.0 {
                    if let Some(status) = child.try_wait()? {
                        return Err(Error::Protocol(format!(
                            "worker exited during startup with {status}"
                        )));
                    }
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            Err(err) => return Err(err.into()),
        }
    }
    listener.set_nonblocking(false)?;
    Ok(streams.into_iter().map(|stream| stream.unwrap()).collect())
}

fn expect_stage_done(
    stream: &mut TcpStream,
    node: usize,
    stage: Stage,
) -> Result<(f64, Vec<(usize, u64)>)> {
    let reply = recv_ctrl(stream)?;
    match reply {
        Ctrl::StageDone { stage: done, seconds, slot_bytes } if done == stage => {
            Ok((seconds, slot_bytes))
        }
        other => Err(Error::Protocol(format!(
            "node {node} answered {other:?} while {stage:?} was pending"
        ))),
    }
}

/// Broadcasts a stage start, waits for every worker to finish it, and
/// returns the slowest worker's wall seconds plus all slot-byte reports.
fn run_stage(
    workers: &mut [TcpStream],
    stage: Stage,
) -> Result<(f64, Vec<Vec<(usize, u64)>>)> {
    for stream in workers.iter_mut() {
        send_ctrl(stream, &Ctrl::Proceed { stage })?;
    }
    let mut slowest = 0.0f64;
    let mut reports = Vec::with_capacity(workers.len());
    for (index, stream) in workers.iter_mut().enumerate() {
        let (seconds, slot_bytes) = expect_stage_done(stream, index + 1, stage)?;
        slowest = slowest.max(seconds);
        reports.push(slot_bytes);
    }
    Ok((slowest, reports))
}

/// Coordinator: spawns one worker process per node, distributes the input
/// files, sequences the stages, and assembles the ledger and output.
pub(crate) fn run_cluster(
    mode: Mode,
    records: &[Record],
    k: usize,
    cost: &CostModel,
    config: &SocketConfig,
) -> Result<RunOutcome> {
    let plan = plan_for(k, mode)?;
    let schedule = crate::orchestrator::schedule_for(&plan, mode);
    let assignments = assign_files(&plan, records)?;

    let listener = TcpListener::bind(("127.0.0.1", config.port_base))?;
    let port = listener.local_addr()?.port();

    let mut guard = WorkerGuard(Vec::with_capacity(k));
    for node in 1..=k {
        let child = Command::new(&config.worker_exe)
            .args(&config.worker_args)
            .arg("worker")
            .arg("--node")
            .arg(node.to_string())
            .arg("--port")
            .arg(port.to_string())
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .spawn()
            .map_err(|err| {
                Error::Protocol(format!(
                    "failed to spawn worker {node} from {}: {err}",
                    config.worker_exe.display()
                ))
            })?;
        guard.0.push(child);
    }

    let mut workers = accept_workers(&listener, k, &mut guard)?;

    for stream in workers.iter_mut() {
        send_ctrl(
            stream,
            &Ctrl::Setup { coded: mode.is_coded(), k, r: mode.r() },
        )?;
    }

    // Workers run codegen on Setup and report its duration before opening
    // their mesh listener.
    let mut codegen = 0.0f64;
    let mut ports = vec![0u16; k];
    for (index, stream) in workers.iter_mut().enumerate() {
        let (seconds, _) = expect_stage_done(stream, index + 1, Stage::Codegen)?;
        codegen = codegen.max(seconds);
        match recv_ctrl(stream)? {
            Ctrl::ListenReady { port } => ports[index] = port,
            other => {
                return Err(Error::Protocol(format!(
                    "node {} answered {other:?} instead of a listen port",
                    index + 1
                )))
            }
        }
    }
    for stream in workers.iter_mut() {
        send_ctrl(stream, &Ctrl::PortMap { ports: ports.clone() })?;
    }
    for (index, stream) in workers.iter_mut().enumerate() {
        match recv_ctrl(stream)? {
            Ctrl::MeshReady => {}
            other => {
                return Err(Error::Protocol(format!(
                    "node {} answered {other:?} during mesh setup",
                    index + 1
                )))
            }
        }
    }

    // Placement: ship each node its files in plan order.
    for (index, stream) in workers.iter_mut().enumerate() {
        for &file_index in plan.files_of(NodeId::new(index + 1)) {
            send_data(stream, &records_to_bytes(&assignments[file_index].records))?;
        }
    }

    let (map, _) = run_stage(&mut workers, Stage::Map)?;
    let (pack_encode, _) = run_stage(&mut workers, Stage::Pack)?;

    // Shuffle: the traffic itself flows worker-to-worker; the coordinator
    // only collects per-slot byte counts from each sender afterwards.
    let (_, reports) = run_stage(&mut workers, Stage::Shuffle)?;
    let mut slot_bytes: Vec<Option<u64>> = vec![None; schedule.len()];
    for (index, report) in reports.into_iter().enumerate() {
        for (slot, bytes) in report {
            let cell = slot_bytes
                .get_mut(slot)
                .ok_or_else(|| Error::Protocol(format!("byte report for unknown slot {slot}")))?;
            if schedule[slot].sender.get() != index + 1 || cell.is_some() {
                return Err(Error::Protocol(format!(
                    "node {} reported bytes for slot {slot} it does not send",
                    index + 1
                )));
            }
            *cell = Some(bytes);
        }
    }
    let entries = schedule
        .iter()
        .zip(&slot_bytes)
        .enumerate()
        .map(|(index, (slot, bytes))| {
            Ok(LedgerEntry {
                sender: slot.sender,
                receivers: slot.receivers.clone(),
                bytes: bytes
                    .ok_or_else(|| Error::Protocol(format!("no byte report for slot {index}")))?,
                units: slot_units(slot),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ledger = ShuffleLedger { entries };
    let shuffle = ledger.shuffle_seconds(cost);

    let (unpack_decode, _) = run_stage(&mut workers, Stage::Decode)?;
    let (reduce, _) = run_stage(&mut workers, Stage::Reduce)?;

    // Each worker follows its Reduce report with its sorted partition.
    let mut partitions = Vec::with_capacity(k);
    for stream in workers.iter_mut() {
        partitions.push(records_from_bytes(&recv_data(stream)?)?);
    }

    for stream in workers.iter_mut() {
        send_ctrl(stream, &Ctrl::Shutdown)?;
    }
    for (index, child) in guard.0.iter_mut().enumerate() {
        let status = child.wait()?;
        if !status.success() {
            return Err(Error::Protocol(format!(
                "worker {} exited with {status}",
                index + 1
            )));
        }
    }

    let load = communication_load(&ledger, k as u64, plan.files().len() as u64, mode.r())?;
    Ok(RunOutcome {
        output: SortedOutput { partitions },
        times: StageTimes::new(codegen, map, pack_encode, shuffle, unpack_decode, reduce),
        load,
        ledger,
    })
}

/// Dials every lower-numbered peer and accepts every higher-numbered one,
/// yielding one stream per other node (index = node - 1).
fn build_mesh(
    me: usize,
    k: usize,
    ports: &[u16],
    listener: &TcpListener,
) -> Result<Vec<Option<TcpStream>>> {
    let mut mesh: Vec<Option<TcpStream>> = (0..k).map(|_| None).collect();
    for peer in 1..me {
        let mut stream = TcpStream::connect(("127.0.0.1", ports[peer - 1]))?;
        set_timeouts(&stream)?;
        send_ctrl(&mut stream, &Ctrl::Hello { node: me })?;
        mesh[peer - 1] = Some(stream);
    }
    for _ in me + 1..=k {
        let (stream, _) = listener.accept()?;
        set_timeouts(&stream)?;
        let mut stream = stream;
        match recv_ctrl(&mut stream)? {
            Ctrl::Hello { node } if node > me && node <= k && mesh[node - 1].is_none() => {
                mesh[node - 1] = Some(stream);
            }
            other => {
                return Err(Error::Protocol(format!(
                    "unexpected mesh handshake {other:?}"
                )))
            }
        }
    }
    Ok(mesh)
}

/// Walks the global schedule: send own slots to each receiver in turn, read
/// slots addressed to this node, skip the rest. Returns (slot, bytes) for
/// every sent slot, counting the payload once per slot.
fn run_shuffle(
    runtime: &mut NodeRuntime,
    mesh: &mut [Option<TcpStream>],
    me: NodeId,
) -> Result<Vec<(usize, u64)>> {
    let schedule = runtime.schedule().to_vec();
    let mut sent = Vec::new();
    for (index, slot) in schedule.iter().enumerate() {
        if slot.sender == me {
            let payload = runtime.take_payload(index)?;
            for receiver in &slot.receivers {
                let stream = mesh[receiver.get() - 1].as_mut().ok_or_else(|| {
                    Error::Protocol(format!("no mesh link to node {receiver}"))
                })?;
                send_data(stream, &payload)?;
            }
            sent.push((index, payload.len() as u64));
        } else if slot.receivers.contains(&me) {
            let stream = mesh[slot.sender.get() - 1].as_mut().ok_or_else(|| {
                Error::Protocol(format!("no mesh link to node {}", slot.sender))
            })?;
            let payload = recv_data(stream)?;
            runtime.accept(InboundMessage { slot: index, sender: slot.sender, payload })?;
        }
    }
    Ok(sent)
}

fn timed<T>(work: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let started = Instant::now();
    let value = work()?;
    Ok((value, started.elapsed().as_secs_f64()))
}

fn expect_proceed(coordinator: &mut TcpStream, stage: Stage) -> Result<()> {
    match recv_ctrl(coordinator)? {
        Ctrl::Proceed { stage: next } if next == stage => Ok(()),
        other => Err(Error::Protocol(format!(
            "expected {stage:?} go-ahead, got {other:?}"
        ))),
    }
}

/// Worker process body: connect to the coordinator on `port` and run node
/// `node`'s side of the pipeline to completion.
pub fn run_worker(node: usize, port: u16) -> Result<()> {
    if node == 0 {
        return Err(Error::InvalidConfig("worker node ids start at 1".into()));
    }
    let mut coordinator = TcpStream::connect(("127.0.0.1", port))?;
    set_timeouts(&coordinator)?;
    send_ctrl(&mut coordinator, &Ctrl::Hello { node })?;

    let setup = recv_ctrl(&mut coordinator)?;
    let Ctrl::Setup { coded, k, r } = setup else {
        return Err(Error::Protocol(format!("expected setup, got {setup:?}")));
    };
    let mode = if coded { Mode::Coded { r } } else { Mode::Uncoded };

    let (mut runtime, codegen) =
        timed(|| NodeRuntime::new(NodeId::new(node), k, mode))?;
    send_ctrl(
        &mut coordinator,
        &Ctrl::StageDone { stage: Stage::Codegen, seconds: codegen, slot_bytes: Vec::new() },
    )?;

    let listener = TcpListener::bind(("127.0.0.1", 0))?;
    send_ctrl(
        &mut coordinator,
        &Ctrl::ListenReady { port: listener.local_addr()?.port() },
    )?;
    let ports = match recv_ctrl(&mut coordinator)? {
        Ctrl::PortMap { ports } if ports.len() == k => ports,
        other => return Err(Error::Protocol(format!("expected port map, got {other:?}"))),
    };
    let mut mesh = build_mesh(node, k, &ports, &listener)?;
    send_ctrl(&mut coordinator, &Ctrl::MeshReady)?;

    let me = NodeId::new(node);
    let own: Vec<usize> = runtime.plan().files_of(me).to_vec();
    let mut files = Vec::with_capacity(own.len());
    for &index in &own {
        let bytes = recv_data(&mut coordinator)?;
        files.push(FileAssignment {
            file: runtime.plan().files()[index].clone(),
            records: records_from_bytes(&bytes)?,
        });
    }
    runtime.load_files(files)?;

    expect_proceed(&mut coordinator, Stage::Map)?;
    let (_, seconds) = timed(|| runtime.map_stage())?;
    send_ctrl(
        &mut coordinator,
        &Ctrl::StageDone { stage: Stage::Map, seconds, slot_bytes: Vec::new() },
    )?;

    expect_proceed(&mut coordinator, Stage::Pack)?;
    let (_, seconds) = timed(|| runtime.pack_stage())?;
    send_ctrl(
        &mut coordinator,
        &Ctrl::StageDone { stage: Stage::Pack, seconds, slot_bytes: Vec::new() },
    )?;

    expect_proceed(&mut coordinator, Stage::Shuffle)?;
    let (slot_bytes, seconds) = timed(|| run_shuffle(&mut runtime, &mut mesh, me))?;
    send_ctrl(
        &mut coordinator,
        &Ctrl::StageDone { stage: Stage::Shuffle, seconds, slot_bytes },
    )?;

    expect_proceed(&mut coordinator, Stage::Decode)?;
    let (_, seconds) = timed(|| runtime.decode_stage())?;
    send_ctrl(
        &mut coordinator,
        &Ctrl::StageDone { stage: Stage::Decode, seconds, slot_bytes: Vec::new() },
    )?;

    expect_proceed(&mut coordinator, Stage::Reduce)?;
    let (partition, seconds) = timed(|| runtime.reduce_stage())?;
    send_ctrl(
        &mut coordinator,
        &Ctrl::StageDone { stage: Stage::Reduce, seconds, slot_bytes: Vec::new() },
    )?;
    send_data(&mut coordinator, &records_to_bytes(&partition))?;

    match recv_ctrl(&mut coordinator)? {
        Ctrl::Shutdown => Ok(()),
        other => Err(Error::Protocol(format!("expected shutdown, got {other:?}"))),
    }
}

// ---- Tests ----
