//! Eager evaluation: work-stealing, tuple-at-a-time, most-recent-first.
//!
//! Each worker owns a deque of work items, popping from the back (LIFO) and
//! stealing from the front of a random other worker's deque (FIFO) when its
//! own is empty. A work item is either a non-recursive rule (one per such
//! rule seeds the pool, round-robin), a rule occurrence lazily specialized to
//! one fact (evaluated δ-first against a mock singleton δ holding just that
//! fact), or the continuation of a suspended evaluation.
//!
//! When a novel fact comes out of an evaluation, the evaluation is suspended:
//! the continuation is pushed, then one specialized item per matching
//! occurrence in ascending (rule id, occurrence) order. The LIFO pop then
//! explores the newest derivation before the producer resumes, which at one
//! worker is exactly a depth-first traversal of the inference space. Other
//! recursive atoms always read the live full relations; completeness under
//! races follows from linearizable relations plus the deque's
//! writes-precede-dequeues ordering.
//!
//! Quiescence: a counter of in-flight items (incremented before every push,
//! decremented after an item's processing ends). Zero means no item is
//! queued or being processed, and nothing can ever be pushed again.

use std::sync::atomic::{AtomicBool, AtomicI64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crossbeam::deque::{Steal, Stealer, Worker};
use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::EvalError;
use crate::externs::{FunctorRegistry, OracleSession};
use crate::ir::Program;
use crate::metrics::WorkerMetrics;
use crate::storage::Tuple;
use crate::stratify::Stratum;

use super::{compile_stratum, specialize_matches, CompiledStratum, Database, EvalCtx, RuleCursor};

pub struct EagerOptions {
    pub threads: usize,
    /// Seeds the per-worker victim-selection generators. Results are
    /// seed-independent; schedules are not.
    pub seed: u64,
}

enum WorkItem {
    /// A rule with no recursive body atom, evaluated once.
    Seed { rule: usize },
    /// A δ-rule lazily specialized to `fact`.
    Fact { spec: usize, fact: Tuple },
    /// A suspended evaluation, resumed where it left off.
    Resume { cursor: Box<RuleCursor> },
}

struct Shared {
    in_flight: AtomicI64,
    failed: AtomicBool,
    failure: Mutex<Option<EvalError>>,
}

impl Shared {
    fn record_failure(&self, e: EvalError) {
        let mut slot = self.failure.lock();
        if slot.is_none() {
            *slot = Some(e);
        }
        self.failed.store(true, Ordering::Release);
    }
}

/// Evaluates one stratum to quiescence. Lower strata must be complete.
#[allow(clippy::too_many_arguments)]
pub fn run_stratum_eager(
    program: &Program,
    stratum: &Stratum,
    db: &Database,
    registry: &FunctorRegistry,
    sessions: &mut [OracleSession],
    wms: &mut [WorkerMetrics],
    opts: &EagerOptions,
    trace: Option<&mut Vec<(String, Tuple)>>,
) -> Result<(), EvalError> {
    let threads = opts.threads.max(1);
    assert!(sessions.len() >= threads && wms.len() >= threads);
    let compiled = Arc::new(compile_stratum(program, stratum, true, true));

    let deques: Vec<Worker<WorkItem>> = (0..threads).map(|_| Worker::new_lifo()).collect();
    let stealers: Vec<Stealer<WorkItem>> = deques.iter().map(|d| d.stealer()).collect();
    for (k, &rule) in compiled.seeds.iter().enumerate() {
        deques[k % threads].push(WorkItem::Seed { rule });
    }
    let shared = Shared {
        in_flight: AtomicI64::new(compiled.seeds.len() as i64),
        failed: AtomicBool::new(false),
        failure: Mutex::new(None),
    };
    let record = trace.is_some();

    let traces: Vec<Vec<(String, Tuple)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = deques
            .into_iter()
            .zip(sessions.iter_mut())
            .zip(wms.iter_mut())
            .enumerate()
            .map(|(w, ((deque, session), wm))| {
                let compiled = compiled.clone();
                let shared = &shared;
                let stealers = &stealers;
                scope.spawn(move || {
                    worker_loop(
                        w, deque, stealers, shared, &compiled, db, registry, session, wm,
                        opts.seed, record,
                    )
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });

    if shared.failed.load(Ordering::Acquire) {
        return Err(shared.failure.lock().take().unwrap_or_else(|| {
            EvalError::Internal("worker failed without recording an error".into())
        }));
    }
    debug_assert_eq!(shared.in_flight.load(Ordering::SeqCst), 0);
    if let Some(out) = trace {
        for t in traces {
            out.extend(t);
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn worker_loop(
    w: usize,
    deque: Worker<WorkItem>,
    stealers: &[Stealer<WorkItem>],
    shared: &Shared,
    compiled: &CompiledStratum,
    db: &Database,
    registry: &FunctorRegistry,
    session: &mut OracleSession,
    wm: &mut WorkerMetrics,
    seed: u64,
    record: bool,
) -> Vec<(String, Tuple)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (w as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut trace = Vec::new();
    let mut idle = 0u32;
    loop {
        if shared.failed.load(Ordering::Acquire) {
            break;
        }
        let item = deque.pop().or_else(|| {
            if shared.in_flight.load(Ordering::SeqCst) == 0 {
                return None;
            }
            if stealers.len() > 1 {
                let mut victim = rng.gen_range(0..stealers.len() - 1);
                if victim >= w {
                    victim += 1;
                }
                if let Steal::Success(it) = stealers[victim].steal() {
                    return Some(it);
                }
            }
            // Nothing stolen this round; stay in the loop.
            idle += 1;
            if idle < 64 {
                std::thread::yield_now();
            } else {
                std::thread::sleep(Duration::from_micros(50));
            }
            None
        });
        let Some(item) = item else {
            if shared.in_flight.load(Ordering::SeqCst) == 0 {
                break;
            }
            continue;
        };
        idle = 0;
        if let Err(e) = process(
            item, &deque, shared, compiled, db, registry, session, wm, record, &mut trace,
        ) {
            shared.record_failure(e);
            break;
        }
    }
    trace
}

/// Runs one item. On a novel fact with at least one successful
/// specialization the evaluation suspends: continuation first, then the
/// children in ascending (rule id, occurrence) order, so the LIFO pop takes
/// the most recent derivation next.
#[allow(clippy::too_many_arguments)]
fn process(
    item: WorkItem,
    deque: &Worker<WorkItem>,
    shared: &Shared,
    compiled: &CompiledStratum,
    db: &Database,
    registry: &FunctorRegistry,
    session: &mut OracleSession,
    wm: &mut WorkerMetrics,
    record: bool,
    trace: &mut Vec<(String, Tuple)>,
) -> Result<(), EvalError> {
    wm.items_executed += 1;
    let mut cursor = match item {
        WorkItem::Seed { rule } => RuleCursor::new(compiled.rules[rule].clone(), None),
        WorkItem::Fact { spec, fact } => RuleCursor::new(compiled.rules[spec].clone(), Some(fact)),
        WorkItem::Resume { cursor } => *cursor,
    };
    let head_pred = cursor.rule().head_pred.clone();
    let specs = compiled.spec_map.get(&head_pred);
    let mut work = 0;
    let outcome = loop {
        let mut ctx = EvalCtx {
            db,
            delta: None,
            registry,
            session,
            work: &mut work,
        };
        match cursor.next(&mut ctx) {
            Err(e) => break Err(e),
            Ok(None) => break Ok(()),
            Ok(Some(t)) => {
                if db.relation(&head_pred).add_if_absent(t.clone()) {
                    wm.derived += 1;
                    if record {
                        trace.push((head_pred.clone(), t.clone()));
                    }
                    let children: Vec<WorkItem> = specs
                        .map(|specs| {
                            specs
                                .iter()
                                .filter(|&&si| specialize_matches(&compiled.rules[si], &t))
                                .map(|&si| WorkItem::Fact {
                                    spec: si,
                                    fact: t.clone(),
                                })
                                .collect()
                        })
                        .unwrap_or_default();
                    if !children.is_empty() {
                        shared
                            .in_flight
                            .fetch_add(1 + children.len() as i64, Ordering::SeqCst);
                        deque.push(WorkItem::Resume {
                            cursor: Box::new(cursor),
                        });
                        for c in children {
                            deque.push(c);
                        }
                        shared.in_flight.fetch_sub(1, Ordering::SeqCst);
                        wm.work += work;
                        return Ok(());
                    }
                } else {
                    wm.rederived += 1;
                }
            }
        }
    };
    wm.work += work;
    shared.in_flight.fetch_sub(1, Ordering::SeqCst);
    outcome
}
