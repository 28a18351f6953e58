//! Multi-agent simulation harness: scenes, the V2X channel, the end-to-end
//! pipeline, evaluation and sweeps.

mod channel;
mod config;
mod eval;
mod params;
mod pipeline;
mod scene;
mod sweep;

pub use channel::*;
pub use config::*;
pub use eval::*;
pub use params::*;
pub use pipeline::*;
pub use scene::*;
pub use sweep::*;
