//! Fixtures shared by the integration tests. Each test binary uses a subset.
#![allow(dead_code)]

pub mod gradcheck;
pub mod movies;
pub mod toy;
