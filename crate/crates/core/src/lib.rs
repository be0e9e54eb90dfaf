//! Dataset construction, benchmark metrics and layout-aware training targets
//! for prompt-grounded text rendering.

pub mod align;
pub mod client;
pub mod filter;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod stratify;
pub mod target;
pub mod text;
pub mod toy;
