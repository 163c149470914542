//! Naive (reference) and semi-naive fixpoint evaluation of one stratum.
//!
//! Semi-naive iteration `i` evaluates every δ-rule with the δ scan bound to
//! the tuples first derived in iteration `i-1` and every other recursive scan
//! against the full relation as of the start of iteration `i` (the previous δ
//! is merged in before rules run). New tuples not already in the full
//! relation collect in the next δ buffer; the stratum is done when that
//! buffer stays empty.
//!
//! With more than one worker the matches of each rule's outermost scan are
//! partitioned across workers. Partitioning neither duplicates nor drops
//! outer tuples, so the work counter equals the single-threaded count.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::EvalError;
use crate::externs::{FunctorRegistry, OracleSession};
use crate::ir::Program;
use crate::metrics::WorkerMetrics;
use crate::storage::{IndexPlan, RelRole, Relation, Tuple};
use crate::stratify::Stratum;

use super::{compile_stratum, CompiledRule, Database, EvalCtx, RuleCursor};

pub struct SeminaiveOptions {
    /// Rotate the δ atom to the front of each rule body (the ordering the
    /// eager engine always uses), keeping work comparisons apples-to-apples.
    pub delta_first: bool,
    pub threads: usize,
}

/// A derivation sink shared by both fixpoint styles.
fn offer(
    rel: &Relation,
    staged: Option<&Relation>,
    pred: &str,
    t: Tuple,
    wm: &mut WorkerMetrics,
    trace: &mut Option<&mut Vec<(String, Tuple)>>,
) {
    let novel = match staged {
        Some(next) => !rel.contains(&t) && next.add_if_absent(t.clone()),
        None => rel.add_if_absent(t.clone()),
    };
    if novel {
        wm.derived += 1;
        if let Some(tr) = trace {
            tr.push((pred.to_string(), t));
        }
    } else {
        wm.rederived += 1;
    }
}

fn run_rule_sequential(
    rule: &Arc<CompiledRule>,
    db: &Database,
    delta_prev: &HashMap<String, Relation>,
    staged: Option<&HashMap<String, Relation>>,
    registry: &FunctorRegistry,
    session: &mut OracleSession,
    wm: &mut WorkerMetrics,
    trace: &mut Option<&mut Vec<(String, Tuple)>>,
) -> Result<(), EvalError> {
    wm.items_executed += 1;
    let mut cursor = RuleCursor::new(rule.clone(), None);
    let mut work = 0;
    let result = loop {
        let mut ctx = EvalCtx {
            db,
            delta: Some(delta_prev),
            registry,
            session,
            work: &mut work,
        };
        match cursor.next(&mut ctx) {
            Err(e) => break Err(e),
            Ok(None) => break Ok(()),
            Ok(Some(t)) => {
                let rel = db.relation(&rule.head_pred);
                let st = staged.map(|s| &s[&rule.head_pred]);
                offer(rel, st, &rule.head_pred, t, wm, trace);
            }
        }
    };
    wm.work += work;
    result
}

/// Partitions the rule's outer scan across `threads` workers. Derivations
/// race into the staged buffer; `add_if_absent` keeps counts exact.
fn run_rule_parallel(
    rule: &Arc<CompiledRule>,
    db: &Database,
    delta_prev: &HashMap<String, Relation>,
    staged: Option<&HashMap<String, Relation>>,
    registry: &FunctorRegistry,
    sessions: &mut [OracleSession],
    wms: &mut [WorkerMetrics],
    threads: usize,
) -> Result<(), EvalError> {
    let result: Vec<Result<(), EvalError>> = std::thread::scope(|s| {
        let handles: Vec<_> = sessions
            .iter_mut()
            .zip(wms.iter_mut())
            .enumerate()
            .take(threads)
            .map(|(w, (session, wm))| {
                s.spawn(move || {
                    wm.items_executed += 1;
                    let mut cursor = RuleCursor::with_outer_slice(rule.clone(), w, threads);
                    let mut work = 0;
                    let r = loop {
                        let mut ctx = EvalCtx {
                            db,
                            delta: Some(delta_prev),
                            registry,
                            session,
                            work: &mut work,
                        };
                        match cursor.next(&mut ctx) {
                            Err(e) => break Err(e),
                            Ok(None) => break Ok(()),
                            Ok(Some(t)) => {
                                let rel = db.relation(&rule.head_pred);
                                let st = staged.map(|s| &s[&rule.head_pred]);
                                offer(rel, st, &rule.head_pred, t, wm, &mut None);
                            }
                        }
                    };
                    wm.work += work;
                    r
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    result.into_iter().collect()
}

/// Semi-naive fixpoint for one stratum. Lower strata must be complete.
#[allow(clippy::too_many_arguments)]
pub fn run_stratum_seminaive(
    program: &Program,
    stratum: &Stratum,
    db: &Database,
    plan: &IndexPlan,
    registry: &FunctorRegistry,
    sessions: &mut [OracleSession],
    wms: &mut [WorkerMetrics],
    opts: &SeminaiveOptions,
    mut trace: Option<&mut Vec<(String, Tuple)>>,
) -> Result<(), EvalError> {
    let compiled = compile_stratum(program, stratum, opts.delta_first, false);
    let interner = db.interner().clone();
    let delta_cols = |pred: &str| -> Vec<Vec<usize>> {
        plan.get(&(pred.to_string(), RelRole::Delta))
            .map(|s| s.iter().cloned().collect())
            .unwrap_or_default()
    };
    let mut delta_prev: HashMap<String, Relation> = HashMap::new();
    let mut delta_next: HashMap<String, Relation> = HashMap::new();
    for pred in &stratum.preds {
        let arity = program.arity_of(pred).unwrap();
        delta_prev.insert(
            pred.clone(),
            Relation::new(pred, arity, interner.clone(), delta_cols(pred)),
        );
        delta_next.insert(
            pred.clone(),
            Relation::new(pred, arity, interner.clone(), delta_cols(pred)),
        );
    }
    let threads = opts.threads.max(1);

    // Iteration 0: non-recursive rules populate the first δ.
    for &si in &compiled.seeds {
        let rule = &compiled.rules[si];
        if threads == 1 {
            run_rule_sequential(
                rule,
                db,
                &delta_prev,
                Some(&delta_next),
                registry,
                &mut sessions[0],
                &mut wms[0],
                &mut trace,
            )?;
        } else {
            run_rule_parallel(
                rule,
                db,
                &delta_prev,
                Some(&delta_next),
                registry,
                sessions,
                wms,
                threads,
            )?;
        }
    }

    let delta_rules: Vec<&Arc<CompiledRule>> = compiled
        .rules
        .iter()
        .filter(|r| r.delta_occurrence.is_some())
        .collect();

    loop {
        if delta_next.values().all(|r| r.is_empty()) {
            break;
        }
        // δ of the previous iteration becomes this iteration's input and is
        // merged into the full relations before any rule runs.
        for (pred, prev) in &delta_prev {
            prev.clear();
            prev.swap_contents(&delta_next[pred]);
        }
        for (pred, prev) in &delta_prev {
            let full = db.relation(pred);
            for t in prev.snapshot() {
                let fresh = full.add_if_absent(t);
                debug_assert!(fresh, "δ must stay disjoint from the full relation");
            }
        }
        for rule in &delta_rules {
            if threads == 1 {
                run_rule_sequential(
                    rule,
                    db,
                    &delta_prev,
                    Some(&delta_next),
                    registry,
                    &mut sessions[0],
                    &mut wms[0],
                    &mut trace,
                )?;
            } else {
                run_rule_parallel(
                    rule,
                    db,
                    &delta_prev,
                    Some(&delta_next),
                    registry,
                    sessions,
                    wms,
                    threads,
                )?;
            }
        }
    }
    Ok(())
}

/// Naive fixpoint: every rule re-evaluated against the full relations each
/// round until a round derives nothing. The trusted reference engine.
pub fn run_stratum_naive(
    program: &Program,
    stratum: &Stratum,
    db: &Database,
    registry: &FunctorRegistry,
    session: &mut OracleSession,
    wm: &mut WorkerMetrics,
    mut trace: Option<&mut Vec<(String, Tuple)>>,
) -> Result<(), EvalError> {
    let rules: Vec<Arc<CompiledRule>> = stratum
        .rules
        .iter()
        .map(|&rid| {
            let rule = &program.rules[rid];
            Arc::new(CompiledRule {
                rule_id: rid,
                delta_occurrence: None,
                delta_eval_index: None,
                mock_delta: false,
                atoms: rule.body.clone(),
                head_pred: rule.head_pred.clone(),
                head_args: rule.head_args.clone(),
            })
        })
        .collect();
    let empty_delta = HashMap::new();
    loop {
        let derived_before = wm.derived;
        for rule in &rules {
            run_rule_sequential(
                rule,
                db,
                &empty_delta,
                None,
                registry,
                session,
                wm,
                &mut trace,
            )?;
        }
        if wm.derived == derived_before {
            break;
        }
    }
    Ok(())
}
