//! Acceptance gate for the `roadrisk` workspace; see `tests/acceptance.rs`.
