#![allow(dead_code)]

pub mod fixtures;
pub mod gradients;
pub mod oracles;
pub mod suites;
