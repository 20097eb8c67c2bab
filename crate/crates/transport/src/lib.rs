//! Wire protocol and session server for one-shot encoded submissions.

mod http;
pub mod protocol;
pub mod server;

pub use protocol::{
    frame_message, parse_frame, read_frame, write_frame, AckMessage, ErrorCode, ErrorMessage,
    Frame, FrameKind, ProtocolError, SubmissionMessage, DEFAULT_MAX_BODY, PROTOCOL_VERSION,
};
pub use server::{run_server, Server, SessionConfig, SessionError, SessionOutcome};
