//! A bottom-up Datalog engine with three interchangeable evaluation
//! strategies — naive, semi-naive, and eager (work-stealing,
//! most-recent-first) — plus an external-functor bridge with per-worker
//! satisfiability oracle sessions that model incremental-solver conjunct
//! caching.
//!
//! The library is organized around a small pipeline:
//! parse ([`parse`]) → validate ([`validate`]) → stratify ([`stratify`]) →
//! plan indexes ([`storage`]) → evaluate ([`engine`]), orchestrated by
//! [`driver`]. All engines share one concurrent relation substrate and
//! produce identical relation contents; they differ in derivation order,
//! which the oracle sessions ([`externs`]) make observable as conjunct cache
//! misses.

pub mod driver;
pub mod engine;
pub mod error;
pub mod externs;
pub mod ir;
pub mod metrics;
pub mod parse;
pub mod storage;
pub mod stratify;
pub mod treegen;
pub mod validate;

pub use driver::{prepare, EngineKind, ExecResult, FactSet, Prepared, RunConfig};
pub use error::{Diagnostic, EvalError, ParseError, StratificationError};
pub use externs::{BackendKind, CachePolicy, Functor, FunctorRegistry, OracleConfig, OracleSession};
pub use ir::{Interner, Program, Term, Value, ValueId};
pub use metrics::{emit_csv, emit_csv_many, RunMetrics};
pub use storage::{BoundPattern, Relation, Tuple};
pub use stratify::{stratify, Stratum};
