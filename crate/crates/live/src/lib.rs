//! Real-time sessions for a human in the loop: each session runs the
//! closed loop at wall-clock pace, streams ticks over a websocket and takes
//! pedal-power and reference commands at tick boundaries.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{Ack, CommandRecord, CreateSession, ErrorBody, ServerMessage, SessionInfo, TickMessage};
pub use server::{router, serve, serve_blocking, AppState, ServiceConfig};
pub use session::{SessionHandle, LOG_CAPACITY};
