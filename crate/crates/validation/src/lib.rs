//! End-to-end acceptance checks for navsst. Run them with
//! `cargo test -p navsst-validation --test acceptance`.
