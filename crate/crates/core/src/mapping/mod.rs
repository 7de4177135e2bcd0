//! Rewrites over the virtual mapping graph and placement onto the fabric.

mod place;
mod rewrite;
mod search;

pub use place::*;
pub use rewrite::*;
pub use search::*;
