//! Acceptance suite for `mrf-core`; see `tests/acceptance.rs`.
