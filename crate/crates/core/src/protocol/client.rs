//! Agent side of the protocol, for agents written in Rust.

use std::io::{self, BufReader, BufWriter, Read, Stdin, Stdout, Write};

use super::frame::{read_frame, write_frame, FrameError};
use super::{Hello, Message, PhaseStart, Role, PROTOCOL_VERSION};

pub struct AgentClient<R: Read, W: Write> {
    reader: R,
    writer: W,
}

impl AgentClient<BufReader<Stdin>, BufWriter<Stdout>> {
    pub fn stdio() -> Self {
        AgentClient::new(BufReader::new(io::stdin()), BufWriter::new(io::stdout()))
    }
}

impl<R: Read, W: Write> AgentClient<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        AgentClient { reader, writer }
    }

    pub fn send(&mut self, message: &Message) -> Result<(), FrameError> {
        write_frame(&mut self.writer, message)
    }

    pub fn recv(&mut self) -> Result<Message, FrameError> {
        read_frame(&mut self.reader)?.ok_or_else(|| FrameError::Malformed("harness closed the stream".into()))
    }

    /// Answers the harness `Hello` and returns the `PhaseStart` that follows.
    pub fn handshake(&mut self) -> Result<PhaseStart, FrameError> {
        match self.recv()? {
            Message::Hello(h) if h.role == Role::Harness => {}
            other => return Err(FrameError::Malformed(format!("expected harness Hello, got {}", other.kind()))),
        }
        self.send(&Message::Hello(Hello { protocol_version: PROTOCOL_VERSION, role: Role::Agent }))?;
        match self.recv()? {
            Message::PhaseStart(start) => Ok(start),
            other => Err(FrameError::Malformed(format!("expected PhaseStart, got {}", other.kind()))),
        }
    }
}
