pub mod auto_screen;
pub mod catalog;
pub mod config;
pub mod dedup;
pub mod error;
pub mod export;
pub mod ingest;
pub mod persistence;
pub mod screening;
pub mod search;
pub mod service;
