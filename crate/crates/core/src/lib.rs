//! Reconstruction and analysis of historical Meta Pixel configurations.
//!
//! The crate is organized as a pipeline:
//!
//! * [`archive`] queries the web-archive CDX index and fetches replayed captures.
//! * [`store`] persists captures content-addressed, with line-delimited indexes.
//! * [`pixel`] finds Pixel IDs in archived landing-page HTML.
//! * [`config`] parses the structured tail of per-Pixel configuration scripts.
//! * [`behavior`] turns a parsed configuration into the event payloads it produces.
//! * [`cracker`] reverses SHA-256 hashed sensitive keys with a dictionary.
//! * [`stats`] computes per-cohort adoption statistics over the years.
//! * [`pipeline`] wires the stages together behind a name-keyed registry.
//!
//! [`mock_archive`] and [`fixtures`] provide a hermetic archive used by the
//! test-suite and the `mock-archive` CLI subcommand.

pub mod archive;
pub mod behavior;
pub mod config;
pub mod cracker;
pub mod fixtures;
pub mod hashing;
pub mod mock_archive;
pub mod pipeline;
pub mod pixel;
pub mod stats;
pub mod store;

pub use config::PixelConfiguration;
pub use pixel::PixelId;
