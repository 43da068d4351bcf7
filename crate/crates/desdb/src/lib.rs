//! Deductive database engine with persistent predicates backed by
//! external SQL databases.
//!
//! Rules of a persistent predicate that can be expressed in SQL are
//! compiled to views and executed by the backend; the rest (recursion,
//! unsupported built-ins) stay in the local tabled engine, and query
//! solving combines both sources.

pub mod ast;
pub mod backend;
pub mod bench;
pub mod builtin;
pub mod catalog;
pub mod engine;
pub mod persist;
pub mod repl;
pub mod session;
pub mod sql;
pub mod value;

pub use session::Session;
pub use value::Value;
