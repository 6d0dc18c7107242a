pub mod error;
pub mod grid;
pub mod linalg;
pub mod local;
pub mod media;
pub mod mortar;
pub mod pressure;
pub mod transport;
pub mod driver;
pub mod config;
pub mod io;
pub mod checks;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/grids.md")]
    mod grids {}
    #[doc = include_str!("../../../book/src/media.md")]
    mod media {}
    #[doc = include_str!("../../../book/src/mortar.md")]
    mod mortar {}
    #[doc = include_str!("../../../book/src/pressure.md")]
    mod pressure {}
    #[doc = include_str!("../../../book/src/transport.md")]
    mod transport {}
    #[doc = include_str!("../../../book/src/running.md")]
    mod running {}
    #[doc = include_str!("../../../book/src/checks.md")]
    mod checks {}
}
