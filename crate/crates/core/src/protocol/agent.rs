//! Agent process handles: spawn, framed stdio, wall-clock watchdog.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use super::frame::{read_frame, write_frame, FrameError};
use super::Message;

/// How an agent process ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExitInfo {
    pub code: Option<i32>,
    pub success: bool,
}

/// One end of a protocol session as seen by the harness.
pub trait AgentHandle: Send {
    fn send(&mut self, message: &Message) -> Result<(), FrameError>;
    /// Next message, or `None` once the agent closed its output.
    fn recv(&mut self) -> Result<Option<Message>, FrameError>;
    /// Closes the agent's input and waits for it to exit.
    fn finish(&mut self) -> io::Result<ExitInfo>;
    /// Whether the wall-clock limit fired.
    fn timed_out(&self) -> bool;
}

/// Command line for one phase entrypoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entrypoint {
    pub program: String,
    pub args: Vec<String>,
    pub cwd: Option<PathBuf>,
}

impl Entrypoint {
    pub fn new(argv: &[String]) -> Option<Self> {
        let (program, args) = argv.split_first()?;
        Some(Entrypoint { program: program.clone(), args: args.to_vec(), cwd: None })
    }

    pub fn in_dir(mut self, cwd: &Path) -> Self {
        self.cwd = Some(cwd.to_path_buf());
        self
    }
}

struct Watchdog {
    cancel: Option<mpsc::Sender<()>>,
    fired: Arc<AtomicBool>,
    thread: Option<thread::JoinHandle<()>>,
}

impl Watchdog {
    fn start(child: Arc<Mutex<Child>>, limit: Duration) -> Self {
        let (cancel, cancelled) = mpsc::channel::<()>();
        let fired = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&fired);
        let thread = thread::spawn(move || {
            if let Err(RecvTimeoutError::Timeout) = cancelled.recv_timeout(limit) {
                flag.store(true, Ordering::SeqCst);
                let _ = child.lock().expect("child lock").kill();
            }
        });
        Watchdog { cancel: Some(cancel), fired, thread: Some(thread) }
    }

    fn stop(&mut self) {
        self.cancel.take();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// An agent running as a child process speaking frames over stdin/stdout.
/// Stderr goes to `stderr_log` when given, otherwise it is discarded.
pub struct ProcessAgent {
    child: Arc<Mutex<Child>>,
    stdin: Option<BufWriter<ChildStdin>>,
    stdout: BufReader<ChildStdout>,
    watchdog: Watchdog,
    exit: Option<ExitInfo>,
}

impl ProcessAgent {
    pub fn spawn(
        entrypoint: &Entrypoint,
        extra_args: &[&str],
        wall_clock_limit: Duration,
        stderr_log: Option<&Path>,
    ) -> io::Result<Self> {
        let mut cmd = Command::new(&entrypoint.program);
        cmd.args(&entrypoint.args).args(extra_args);
        if let Some(dir) = &entrypoint.cwd {
            cmd.current_dir(dir);
        }
        let stderr = match stderr_log {
            Some(path) => Stdio::from(File::create(path)?),
            None => Stdio::null(),
        };
        cmd.stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(stderr);
        let mut child = cmd.spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let child = Arc::new(Mutex::new(child));
        let watchdog = Watchdog::start(Arc::clone(&child), wall_clock_limit);
        Ok(ProcessAgent {
            child,
            stdin: Some(BufWriter::new(stdin)),
            stdout: BufReader::new(stdout),
            watchdog,
            exit: None,
        })
    }

    fn poll_exit(&mut self) -> io::Result<ExitInfo> {
        if let Some(exit) = self.exit {
            return Ok(exit);
        }
        let mut pause = Duration::from_micros(200);
        loop {
            let status = self.child.lock().expect("child lock").try_wait()?;
            if let Some(status) = status {
                let info = ExitInfo { code: status.code(), success: status.success() };
                self.exit = Some(info);
                self.watchdog.stop();
                return Ok(info);
            }
            thread::sleep(pause);
            pause = (pause * 2).min(Duration::from_millis(20));
        }
    }
}

impl AgentHandle for ProcessAgent {
    fn send(&mut self, message: &Message) -> Result<(), FrameError> {
        match self.stdin.as_mut() {
            Some(w) => write_frame(w, message),
            None => Err(FrameError::Io(io::Error::new(io::ErrorKind::BrokenPipe, "agent input closed"))),
        }
    }

    fn recv(&mut self) -> Result<Option<Message>, FrameError> {
        read_frame(&mut self.stdout)
    }

    fn finish(&mut self) -> io::Result<ExitInfo> {
        if let Some(mut w) = self.stdin.take() {
            let _ = w.flush();
        }
        self.poll_exit()
    }

    fn timed_out(&self) -> bool {
        self.watchdog.fired.load(Ordering::SeqCst)
    }
}

impl Drop for ProcessAgent {
    fn drop(&mut self) {
        self.stdin.take();
        if self.exit.is_none() {
            let mut child = self.child.lock().expect("child lock");
            if matches!(child.try_wait(), Ok(None)) {
                let _ = child.kill();
            }
            let _ = child.wait();
        }
        self.watchdog.stop();
    }
}
