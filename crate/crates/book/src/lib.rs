//! The guide in `book/`, compiled as documentation so that every Rust
//! listing runs as a doc-test. One module per chapter, so a failing listing
//! names the chapter it came from. The README's listing is checked the same
//! way.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/routing.md")]
pub mod routing {}
#[doc = include_str!("../../../book/src/solver.md")]
pub mod solver {}
#[doc = include_str!("../../../book/src/robust.md")]
pub mod robust {}
#[doc = include_str!("../../../book/src/allocation.md")]
pub mod allocation {}
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
#[doc = include_str!("../../../README.md")]
pub mod readme {}
