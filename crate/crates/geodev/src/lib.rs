//! geodev: a numerical laboratory for geodesic deviation under affine
//! torsion-free connections.
//!
//! The crate integrates geodesics, the Jacobi equation, the generalized
//! Jacobi equation and the exact deviation equation in local charts,
//! transforms solutions between charts (tensorially and exactly), builds
//! Fermi coordinate charts along geodesics, and packages the key
//! transformation facts as numerical experiments with pass/fail verdicts.
//!
//! Start with [`connection::catalog`] for a chart, [`geodesic`] for paths,
//! [`deviation`] for the three deviation equations, [`chartmap`] for
//! coordinate changes, [`fermi`] for Fermi charts and [`experiments`] for
//! the packaged verdicts. The mdbook under `book/` walks through all of it;
//! its code snippets compile and run as doctests of this crate.

pub mod chartmap;
pub mod config;
pub mod connection;
pub mod deviation;
pub mod error;
pub mod experiments;
pub mod fermi;
pub mod geodesic;
pub mod integrate;
pub mod jet;
pub mod report;
pub mod tensor;

pub use error::{Error, Result};

// The book's code blocks double as doctests so the guide can never drift
// from the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/charts-and-connections.md")]
    mod charts_and_connections {}
    #[doc = include_str!("../../../book/src/integrating-geodesics.md")]
    mod integrating_geodesics {}
    #[doc = include_str!("../../../book/src/deviation-equations.md")]
    mod deviation_equations {}
    #[doc = include_str!("../../../book/src/changing-coordinates.md")]
    mod changing_coordinates {}
    #[doc = include_str!("../../../book/src/fermi-charts.md")]
    mod fermi_charts {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments_chapter {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli_chapter {}
}
