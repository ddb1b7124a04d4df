#![no_std]

extern crate alloc;

pub mod geom;
pub mod relations;
pub mod scene;
pub mod fusion;
pub mod nbv;
pub mod simenv;
pub mod orchestrator;
