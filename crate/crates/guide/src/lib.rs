//! mdbook cannot run snippets that depend on workspace crates, so every
//! chapter is pulled in as the docs of an empty module and `cargo test --doc`
//! runs its code blocks. One module per chapter keeps failures attributable.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/sets.md")]
pub mod sets {}
#[doc = include_str!("../../../book/src/adaptation.md")]
pub mod adaptation {}
#[doc = include_str!("../../../book/src/synthesis.md")]
pub mod synthesis {}
#[doc = include_str!("../../../book/src/controller.md")]
pub mod controller {}
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("../../../book/src/verification.md")]
pub mod verification {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
