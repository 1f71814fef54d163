//! Master/worker messaging: the frame codec and its two backends.

pub mod codec;
pub mod inproc;
pub mod tcp;

pub use codec::{decode, encode, read_frame, DecodeError, EncodeError, FrameError, Message};
pub use inproc::{InProcQueue, OrderKey};

/// Default TCP port of the master.
pub const DEFAULT_PORT: u16 = 7477;
