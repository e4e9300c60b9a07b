//! The book's chapters, included as module docs so that every `rust` code
//! fence in `book/src/*.md` compiles and runs under `cargo test --doc`.
//! One module per chapter keeps failures attributable to a file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}

#[doc = include_str!("../../../book/src/packs.md")]
pub mod packs {}

#[doc = include_str!("../../../book/src/equivalence.md")]
pub mod equivalence {}

#[doc = include_str!("../../../book/src/composition.md")]
pub mod composition {}

#[doc = include_str!("../../../book/src/steering.md")]
pub mod steering {}

#[doc = include_str!("../../../book/src/routing.md")]
pub mod routing {}

#[doc = include_str!("../../../book/src/formats.md")]
pub mod formats {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
