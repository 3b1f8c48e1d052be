#![doc = include_str!("../../../book/src/introduction.md")]
#![warn(missing_docs)]
#![forbid(unsafe_code)]

#[doc = include_str!("../../../book/src/schedules.md")]
pub mod schedule;

#[doc = include_str!("../../../book/src/shuffles.md")]
pub mod shuffle;

#[doc = include_str!("../../../book/src/coarse-graining.md")]
pub mod mgrid;

#[doc = include_str!("../../../book/src/two-scale.md")]
pub mod twoscale;

#[doc = include_str!("../../../book/src/layered-heat.md")]
pub mod heatml;

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod cli;
