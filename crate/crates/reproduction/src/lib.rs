//! Acceptance experiments for `emberflow`; everything lives in
//! `tests/acceptance.rs`.
