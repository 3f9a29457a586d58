//! Client side of the sandbox worker protocol.
//!
//! Frames are a 4-byte big-endian length followed by that many bytes of
//! UTF-8 JSON, over the worker's stdin (requests) and stdout (responses).
//! Every message carries `"version": "1"`.

use std::io::{self, BufReader, Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{timeout_message, CellExecutor, ExecOutcome, ResolveError, WorkspaceError};
use crate::protocol::{CellStatus, CodeCell};

pub const PROTOCOL_VERSION: &str = "1";

/// Largest frame either side accepts.
pub const MAX_FRAME: usize = 16 * 1024 * 1024;

/// Grace period after a deadline before the worker is killed.
const KILL_GRACE: Duration = Duration::from_millis(200);

/// How long control requests (resolve, reset) may take.
const CONTROL_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecOp {
    Execute,
    ResolveVar,
    Reset,
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecRequest {
    pub version: String,
    pub op: ExecOp,
    #[serde(default)]
    pub cell_name: String,
    #[serde(default)]
    pub source: String,
    #[serde(default)]
    pub var_name: Option<String>,
}

impl ExecRequest {
    pub fn execute(cell: &CodeCell) -> Self {
        Self {
            version: PROTOCOL_VERSION.into(),
            op: ExecOp::Execute,
            cell_name: cell.name.clone(),
            source: cell.source.clone(),
            var_name: None,
        }
    }

    pub fn resolve(var: &str) -> Self {
        Self {
            version: PROTOCOL_VERSION.into(),
            op: ExecOp::ResolveVar,
            cell_name: String::new(),
            source: String::new(),
            var_name: Some(var.into()),
        }
    }

    pub fn control(op: ExecOp) -> Self {
        Self {
            version: PROTOCOL_VERSION.into(),
            op,
            cell_name: String::new(),
            source: String::new(),
            var_name: None,
        }
    }

    /// Execute needs a cell name; ResolveVar needs a variable name.
    pub fn is_well_formed(&self) -> bool {
        match self.op {
            ExecOp::Execute => !self.cell_name.is_empty(),
            ExecOp::ResolveVar => self.var_name.as_deref().is_some_and(|v| !v.is_empty()),
            ExecOp::Reset | ExecOp::Shutdown => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    Error,
    Interrupted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecResponse {
    pub version: String,
    pub status: ExecStatus,
    #[serde(default)]
    pub stdout: String,
    #[serde(default)]
    pub error_trace: Option<String>,
    #[serde(default)]
    pub duration: f64,
    #[serde(default)]
    pub peak_memory: u64,
}

pub fn write_frame<W: Write, T: Serialize>(w: &mut W, msg: &T) -> io::Result<()> {
    let bytes = serde_json::to_vec(msg).map_err(io::Error::other)?;
    let len = u32::try_from(bytes.len())
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(&bytes)?;
    w.flush()
}

/// Reads one frame. `Ok(None)` on clean EOF before a length prefix.
pub fn read_frame<R: Read, T: for<'de> Deserialize<'de>>(r: &mut R) -> io::Result<Option<T>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "frame exceeds limit"));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    serde_json::from_slice(&buf)
        .map(Some)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

/// How to launch a worker process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelCommand {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default)]
    pub env: Vec<(String, String)>,
}

impl KernelCommand {
    pub fn new(program: impl Into<String>) -> Self {
        Self { program: program.into(), args: Vec::new(), env: Vec::new() }
    }

    pub fn arg(mut self, a: impl Into<String>) -> Self {
        self.args.push(a.into());
        self
    }
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    responses: Receiver<io::Result<ExecResponse>>,
}

impl Worker {
    fn spawn(cmd: &KernelCommand) -> io::Result<Self> {
        let mut child = Command::new(&cmd.program)
            .args(&cmd.args)
            .envs(cmd.env.iter().map(|(k, v)| (k, v)))
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                match read_frame::<_, ExecResponse>(&mut reader) {
                    Ok(Some(resp)) => {
                        if tx.send(Ok(resp)).is_err() {
                            break;
                        }
                    }
                    Ok(None) => break,
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });
        Ok(Self { child, stdin, responses: rx })
    }

    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

enum CallError {
    Timeout,
    Dead,
}

/// A sandbox worker process. Killed and respawned on timeout or crash; the
/// process is always reaped on drop.
pub struct KernelClient {
    command: KernelCommand,
    worker: Option<Worker>,
}

impl KernelClient {
    pub fn spawn(command: KernelCommand) -> Result<Self, WorkspaceError> {
        let worker = Worker::spawn(&command)?;
        Ok(Self { command, worker: Some(worker) })
    }

    pub fn pid(&self) -> Option<u32> {
        self.worker.as_ref().map(|w| w.child.id())
    }

    fn restart(&mut self) {
        if let Some(mut w) = self.worker.take() {
            w.kill();
        }
        match Worker::spawn(&self.command) {
            Ok(w) => self.worker = Some(w),
            Err(e) => tracing::error!(error = %e, "failed to respawn worker"),
        }
    }

    fn call(&mut self, req: &ExecRequest, timeout: Duration) -> Result<ExecResponse, CallError> {
        let Some(worker) = self.worker.as_mut() else {
            return Err(CallError::Dead);
        };
        if write_frame(&mut worker.stdin, req).is_err() {
            return Err(CallError::Dead);
        }
        match worker.responses.recv_timeout(timeout) {
            Ok(Ok(resp)) => Ok(resp),
            Ok(Err(_)) | Err(RecvTimeoutError::Disconnected) => Err(CallError::Dead),
            Err(RecvTimeoutError::Timeout) => Err(CallError::Timeout),
        }
    }

    /// Clears the namespace without restarting the process.
    pub fn reset(&mut self) -> bool {
        match self.call(&ExecRequest::control(ExecOp::Reset), CONTROL_TIMEOUT) {
            Ok(r) => r.status == ExecStatus::Ok,
            Err(_) => {
                self.restart();
                false
            }
        }
    }
}

impl CellExecutor for KernelClient {
    fn execute(&mut self, cell: &CodeCell, timeout: f64) -> ExecOutcome {
        let start = Instant::now();
        let limit = Duration::from_secs_f64(timeout.max(0.0)) + KILL_GRACE;
        match self.call(&ExecRequest::execute(cell), limit) {
            Ok(resp) => ExecOutcome::Finished {
                status: match resp.status {
                    ExecStatus::Ok => CellStatus::Ok,
                    ExecStatus::Error => CellStatus::Error,
                    ExecStatus::Interrupted => CellStatus::Interrupted,
                },
                stdout: resp.stdout,
                error_trace: resp.error_trace,
                duration: start.elapsed().as_secs_f64(),
            },
            Err(CallError::Timeout) => {
                self.restart();
                ExecOutcome::Finished {
                    status: CellStatus::Interrupted,
                    stdout: String::new(),
                    error_trace: Some(timeout_message(timeout)),
                    duration: start.elapsed().as_secs_f64(),
                }
            }
            Err(CallError::Dead) => {
                self.restart();
                ExecOutcome::WorkerDead { duration: start.elapsed().as_secs_f64() }
            }
        }
    }

    fn resolve_variable(&mut self, name: &str) -> Result<String, ResolveError> {
        match self.call(&ExecRequest::resolve(name), CONTROL_TIMEOUT) {
            Ok(resp) => match resp.status {
                ExecStatus::Ok => Ok(resp.stdout),
                _ => {
                    let msg = resp.error_trace.unwrap_or_default();
                    if msg.starts_with("undefined") {
                        Err(ResolveError::Undefined(name.into()))
                    } else if msg.starts_with("not a string") {
                        Err(ResolveError::NotAString(name.into()))
                    } else {
                        Err(ResolveError::Workspace(msg))
                    }
                }
            },
            Err(_) => {
                self.restart();
                Err(ResolveError::Workspace("worker did not answer".into()))
            }
        }
    }
}

impl Drop for KernelClient {
    fn drop(&mut self) {
        if let Some(mut w) = self.worker.take() {
            let _ = write_frame(&mut w.stdin, &ExecRequest::control(ExecOp::Shutdown));
            let deadline = Instant::now() + Duration::from_millis(500);
            loop {
                match w.child.try_wait() {
                    Ok(Some(_)) => return,
                    Ok(None) if Instant::now() < deadline => {
                        thread::sleep(Duration::from_millis(5))
                    }
                    _ => break,
                }
            }
            w.kill();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn op() -> impl Strategy<Value = ExecOp> {
        prop_oneof![
            Just(ExecOp::Execute),
            Just(ExecOp::ResolveVar),
            Just(ExecOp::Reset),
            Just(ExecOp::Shutdown)
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]
        #[test]
        fn request_frames_round_trip(
            op in op(),
            cell_name in "[a-z_]{0,12}",
            source in any::<String>(),
            var in proptest::option::of("[a-z_]{1,8}"),
        ) {
            let req = ExecRequest { version: PROTOCOL_VERSION.into(), op, cell_name, source, var_name: var };
            let mut buf = Vec::new();
            write_frame(&mut buf, &req).unwrap();
            let back: ExecRequest = read_frame(&mut buf.as_slice()).unwrap().unwrap();
            prop_assert_eq!(back, req);
        }

        #[test]
        fn response_frames_round_trip(
            status in prop_oneof![Just(ExecStatus::Ok), Just(ExecStatus::Error), Just(ExecStatus::Interrupted)],
            stdout in any::<String>(),
            trace in proptest::option::of(any::<String>()),
            ms in 0u32..100_000,
            peak in any::<u64>(),
        ) {
            let resp = ExecResponse {
                version: PROTOCOL_VERSION.into(), status, stdout, error_trace: trace,
                duration: f64::from(ms) / 1000.0, peak_memory: peak,
            };
            let mut buf = Vec::new();
            write_frame(&mut buf, &resp).unwrap();
            let back: ExecResponse = read_frame(&mut buf.as_slice()).unwrap().unwrap();
            prop_assert_eq!(back, resp);
        }
    }

    #[test]
    fn eof_and_oversized_frames() {
        let empty: &[u8] = &[];
        assert!(read_frame::<_, ExecResponse>(&mut &*empty).unwrap().is_none());
        let huge = (MAX_FRAME as u32 + 1).to_be_bytes();
        assert!(read_frame::<_, ExecResponse>(&mut &huge[..]).is_err());
    }

    #[test]
    fn wire_field_names() {
        let req = ExecRequest::resolve("answer");
        let v = serde_json::to_value(&req).unwrap();
        assert_eq!(v["version"], "1");
        assert_eq!(v["op"], "resolve_var");
        assert_eq!(v["var_name"], "answer");
        assert!(req.is_well_formed());
        assert!(!ExecRequest::control(ExecOp::Execute).is_well_formed());
    }
}
