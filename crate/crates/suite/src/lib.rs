//! Acceptance criteria for odedbn live in `tests/acceptance.rs`; run them with
//! `cargo test -p odedbn-suite --test acceptance`.
