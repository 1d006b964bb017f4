//! On-line experimentation for BROOM models. A [`Session`] owns one running
//! simulation; [`serve`] paces it against the wall clock and exposes it over
//! WebSocket at `/experiment`. Frame schemas are in [`protocol`].

pub mod protocol;
mod service;
mod session;

pub use protocol::{Command, Frame, Request, Snapshot};
pub use service::{serve, PATH};
pub use session::{request, Applied, Session, Ticked, MAX_STEP};
