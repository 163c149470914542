//! Orchestration: parse, validate, stratify, plan indexes, load facts, run an
//! engine over every stratum, and collect outputs and metrics.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use crate::engine::eager::{run_stratum_eager, EagerOptions};
use crate::engine::seminaive::{run_stratum_naive, run_stratum_seminaive, SeminaiveOptions};
use crate::engine::{compile_stratum, Database};
use crate::error::{Diagnostic, EvalError, ParseError, StratificationError};
use crate::externs::{FunctorRegistry, OracleConfig, OracleSession};
use crate::ir::{Interner, PredKind, Program};
use crate::metrics::{RunMetrics, RunTimer, WorkerMetrics};
use crate::parse::{parse_facts, parse_program};
use crate::storage::{plan_indexes, IndexPlan, Tuple};
use crate::stratify::{stratify, Stratum};
use crate::validate::{check_rotation_safety, validate};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineKind {
    Naive,
    Seminaive,
    Eager,
}

impl EngineKind {
    pub fn name(&self) -> &'static str {
        match self {
            EngineKind::Naive => "naive",
            EngineKind::Seminaive => "seminaive",
            EngineKind::Eager => "eager",
        }
    }
}

impl std::str::FromStr for EngineKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "naive" => Ok(EngineKind::Naive),
            "seminaive" => Ok(EngineKind::Seminaive),
            "eager" => Ok(EngineKind::Eager),
            other => Err(format!(
                "unknown engine `{other}` (expected naive, seminaive, or eager)"
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub engine: EngineKind,
    pub threads: usize,
    pub delta_first: bool,
    pub oracle: OracleConfig,
    pub seed: u64,
    /// Record the derivation order (meaningful at one thread).
    pub record_trace: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            engine: EngineKind::Seminaive,
            threads: 1,
            delta_first: false,
            oracle: OracleConfig::default(),
            seed: 0,
            record_trace: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PrepareError {
    #[error("{0}")]
    Parse(#[from] ParseError),
    #[error("validation failed:\n{}", .0.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Validation(Vec<Diagnostic>),
    #[error("{0}")]
    Stratification(#[from] StratificationError),
}

/// A parsed, validated, stratified program bound to one interner and functor
/// registry, ready to execute any number of times.
pub struct Prepared {
    pub program: Program,
    pub strata: Vec<Stratum>,
    pub interner: Arc<Interner>,
    pub registry: Arc<FunctorRegistry>,
}

/// Input tuples per predicate.
pub type FactSet = HashMap<String, Vec<Tuple>>;

pub fn prepare(
    text: &str,
    file: &str,
    registry: Arc<FunctorRegistry>,
) -> Result<Prepared, PrepareError> {
    let interner = Arc::new(Interner::new());
    prepare_with_interner(text, file, registry, interner)
}

pub fn prepare_with_interner(
    text: &str,
    file: &str,
    registry: Arc<FunctorRegistry>,
    interner: Arc<Interner>,
) -> Result<Prepared, PrepareError> {
    let program = parse_program(text, file, &interner)?;
    let diags = validate(&program, &registry.arity_map());
    if !diags.is_empty() {
        return Err(PrepareError::Validation(diags));
    }
    let strata = stratify(&program)?;
    let rot = check_rotation_safety(&program, &strata);
    if !rot.is_empty() {
        return Err(PrepareError::Validation(rot));
    }
    Ok(Prepared {
        program,
        strata,
        interner,
        registry,
    })
}

impl Prepared {
    /// Reads `<pred>.facts` for every input predicate from `dir`. A missing
    /// file is an empty relation.
    pub fn load_facts_dir(&self, dir: &Path) -> Result<FactSet, ParseError> {
        let mut facts = FactSet::new();
        for (name, decl) in &self.program.declarations {
            if decl.kind != PredKind::Input {
                continue;
            }
            let path = dir.join(format!("{name}.facts"));
            let text = match std::fs::read_to_string(&path) {
                Ok(t) => t,
                Err(_) => continue,
            };
            facts.insert(
                name.clone(),
                parse_facts(name, decl.arity, &text, &self.interner)?,
            );
        }
        Ok(facts)
    }

    /// Builds a fact set from integer rows; rows are interned here.
    pub fn facts_from_rows(&self, rows: &[(&str, Vec<Vec<i64>>)]) -> FactSet {
        let mut facts = FactSet::new();
        for (pred, tuples) in rows {
            facts.insert(
                pred.to_string(),
                tuples
                    .iter()
                    .map(|r| r.iter().map(|&n| self.interner.intern_int(n)).collect())
                    .collect(),
            );
        }
        facts
    }

    /// Index plan covering every access path the configured engine makes.
    fn plan(&self, config: &RunConfig) -> IndexPlan {
        let mut plan = IndexPlan::new();
        for stratum in &self.strata {
            let compiled = match config.engine {
                EngineKind::Naive => compile_stratum(&self.program, stratum, false, false),
                EngineKind::Seminaive => {
                    compile_stratum(&self.program, stratum, config.delta_first, false)
                }
                EngineKind::Eager => compile_stratum(&self.program, stratum, true, true),
            };
            for (k, v) in plan_indexes(&compiled.body_plans()) {
                plan.entry(k).or_default().extend(v);
            }
        }
        plan
    }

    /// Evaluates the program to fixpoint under `config`.
    pub fn run(&self, facts: &FactSet, config: &RunConfig) -> Result<ExecResult, EvalError> {
        let threads = config.threads.max(1);
        let worker_count = match config.engine {
            EngineKind::Naive => 1,
            _ => threads,
        };
        let plan = self.plan(config);
        let db = Database::new(&self.program, &plan, self.interner.clone());
        for (pred, rows) in facts {
            let rel = db.relation(pred);
            for t in rows {
                rel.add_if_absent(t.clone());
            }
        }
        let mut sessions: Vec<OracleSession> = (0..worker_count)
            .map(|w| OracleSession::new(w, config.oracle.clone()))
            .collect::<Result<_, _>>()?;
        let mut wms = vec![WorkerMetrics::default(); worker_count];
        let mut trace: Vec<(String, Tuple)> = Vec::new();

        let timer = RunTimer::start();
        for stratum in &self.strata {
            let tr = config.record_trace.then_some(&mut trace);
            match config.engine {
                EngineKind::Naive => run_stratum_naive(
                    &self.program,
                    stratum,
                    &db,
                    &self.registry,
                    &mut sessions[0],
                    &mut wms[0],
                    tr,
                )?,
                EngineKind::Seminaive => run_stratum_seminaive(
                    &self.program,
                    stratum,
                    &db,
                    &plan,
                    &self.registry,
                    &mut sessions,
                    &mut wms,
                    &SeminaiveOptions {
                        delta_first: config.delta_first,
                        threads: worker_count,
                    },
                    tr,
                )?,
                EngineKind::Eager => run_stratum_eager(
                    &self.program,
                    stratum,
                    &db,
                    &self.registry,
                    &mut sessions,
                    &mut wms,
                    &EagerOptions {
                        threads: worker_count,
                        seed: config.seed,
                    },
                    tr,
                )?,
            }
        }
        let (wall, cpu) = timer.elapsed();

        let metrics = RunMetrics {
            engine: config.engine.name().to_string(),
            threads: worker_count,
            wall_seconds: wall,
            cpu_seconds: cpu,
            work: wms.iter().map(|w| w.work).sum(),
            derived: wms.iter().map(|w| w.derived).sum(),
            rederived: wms.iter().map(|w| w.rederived).sum(),
            oracle_calls: sessions.iter().map(|s| s.calls).sum(),
            cache_misses: sessions.iter().map(|s| s.cache_misses).sum(),
            per_worker: sessions
                .iter()
                .zip(&wms)
                .map(|(s, w)| (s.calls, s.cache_misses, w.items_executed))
                .collect(),
        };
        let oracle_logs = sessions.into_iter().map(|s| s.call_log).collect();
        Ok(ExecResult {
            db,
            metrics,
            trace,
            oracle_logs,
        })
    }
}

pub struct ExecResult {
    pub db: Database,
    pub metrics: RunMetrics,
    /// Novel facts in derivation order (only when requested; total order is
    /// meaningful at one thread).
    pub trace: Vec<(String, Tuple)>,
    /// Per worker: (formula, misses) per oracle call, in call order.
    pub oracle_logs: Vec<Vec<(crate::ir::ValueId, u64)>>,
}

impl ExecResult {
    pub fn dump(&self, pred: &str) -> String {
        self.db.relation(pred).dump()
    }

    /// Sorted dumps of every output relation, concatenated with headers; the
    /// canonical artifact for engine-equivalence comparisons.
    pub fn dump_outputs(&self, program: &Program) -> String {
        let mut out = String::new();
        for name in program.decl_order() {
            if program.declarations[name].kind == PredKind::Output {
                out.push_str(&format!("# {name}\n"));
                out.push_str(&self.db.relation(name).dump());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treegen::{tree_reach, TreeGenConfig, TREE_REACH_PROGRAM};

    const TC: &str = ".decl edge(2) input .decl reach(2) output \
         reach(X,Y) :- edge(X,Y). reach(X,Z) :- edge(X,Y), reach(Y,Z).";

    fn builtin_registry() -> Arc<FunctorRegistry> {
        Arc::new(FunctorRegistry::with_builtins())
    }

    #[test]
    fn run_all_engines_agree_on_tc() {
        let prepared = prepare(TC, "<t>", builtin_registry()).unwrap();
        let facts = prepared.facts_from_rows(&[(
            "edge",
            vec![vec![0, 1], vec![0, 2], vec![1, 3], vec![2, 4]],
        )]);
        let mut dumps = Vec::new();
        for engine in [EngineKind::Naive, EngineKind::Seminaive, EngineKind::Eager] {
            let cfg = RunConfig {
                engine,
                ..Default::default()
            };
            let out = prepared.run(&facts, &cfg).unwrap();
            dumps.push(out.dump("reach"));
        }
        assert_eq!(dumps[0], dumps[1]);
        assert_eq!(dumps[1], dumps[2]);
        assert_eq!(dumps[0].lines().count(), 6);
    }

    #[test]
    fn unsafe_program_fails_preparation() {
        let err = prepare(
            ".decl p(1) output .decl q(1) input p(X) :- !q(X).",
            "<t>",
            builtin_registry(),
        )
        .err().unwrap();
        assert!(matches!(err, PrepareError::Validation(_)));
    }

    #[test]
    fn unstratifiable_program_fails_preparation() {
        let err = prepare(
            ".decl a(1) input .decl p(1) output p(X) :- a(X), !p(X).",
            "<t>",
            builtin_registry(),
        )
        .err().unwrap();
        assert!(matches!(err, PrepareError::Stratification(_)));
    }

    #[test]
    fn tree_reach_counts_match_the_brute_force_oracle() {
        let inst = tree_reach(&TreeGenConfig {
            depth: 4,
            branching: 2,
            contradiction_rate: 0.5,
            seed: 7,
        });
        let prepared = prepare(TREE_REACH_PROGRAM, "<gen>", builtin_registry()).unwrap();
        let rows: Vec<Vec<i64>> = inst
            .labels
            .iter()
            .map(|&(p, c, v, s)| vec![p as i64, c as i64, v, s])
            .collect();
        let facts = prepared.facts_from_rows(&[("edge", rows)]);
        // Independent oracle: walk each root path, check for complements.
        let mut label = vec![(0i64, 0i64); inst.node_count as usize];
        for &(_, c, v, s) in &inst.labels {
            label[c as usize] = (v, s);
        }
        let mut expected = 0;
        for n in 0..inst.node_count {
            let mut path = std::collections::BTreeSet::new();
            let mut cur = n;
            while cur != 0 {
                path.insert(label[cur as usize]);
                cur = (cur - 1) / 2;
            }
            if path.iter().all(|&(v, s)| !path.contains(&(v, 1 - s))) {
                expected += 1;
            }
        }
        for engine in [EngineKind::Naive, EngineKind::Seminaive, EngineKind::Eager] {
            let out = prepared
                .run(
                    &facts,
                    &RunConfig {
                        engine,
                        ..Default::default()
                    },
                )
                .unwrap();
            assert_eq!(
                out.db.relation("reach").len() as u64,
                expected,
                "engine {}",
                engine.name()
            );
        }
    }

    /// The 5-node labeled tree: 0 -> {1, 2}, 1 -> 3, 2 -> 4, each edge
    /// carrying a fresh positive literal. Single-threaded semi-naive must
    /// issue the four oracle calls breadth-first; single-threaded eager
    /// depth-first.
    #[test]
    fn five_node_tree_call_orders() {
        let prepared = prepare(TREE_REACH_PROGRAM, "<gen>", builtin_registry()).unwrap();
        let facts = prepared.facts_from_rows(&[(
            "edge",
            vec![
                vec![0, 1, 0, 1],
                vec![0, 2, 1, 1],
                vec![1, 3, 2, 1],
                vec![2, 4, 3, 1],
            ],
        )]);
        let call_lits = |engine: EngineKind, delta_first: bool| -> Vec<Vec<(i64, bool)>> {
            let out = prepared
                .run(
                    &facts,
                    &RunConfig {
                        engine,
                        delta_first,
                        ..Default::default()
                    },
                )
                .unwrap();
            assert_eq!(out.db.relation("reach").len(), 5);
            out.oracle_logs[0]
                .iter()
                .map(|&(f, _)| {
                    crate::externs::flatten(f, &prepared.interner)
                        .unwrap()
                        .into_iter()
                        .collect()
                })
                .collect()
        };
        let lit = |v: i64| (v, true);
        let bfs = vec![
            vec![lit(0)],
            vec![lit(1)],
            vec![lit(0), lit(2)],
            vec![lit(1), lit(3)],
        ];
        let dfs = vec![
            vec![lit(0)],
            vec![lit(0), lit(2)],
            vec![lit(1)],
            vec![lit(1), lit(3)],
        ];
        assert_eq!(call_lits(EngineKind::Seminaive, false), bfs);
        assert_eq!(call_lits(EngineKind::Seminaive, true), bfs);
        assert_eq!(call_lits(EngineKind::Eager, false), dfs);
    }

    /// Replaying the traces through the replace-policy cache gives total
    /// misses 6 (breadth-first) and 4 (depth-first).
    #[test]
    fn five_node_tree_miss_profiles() {
        let prepared = prepare(TREE_REACH_PROGRAM, "<gen>", builtin_registry()).unwrap();
        let facts = prepared.facts_from_rows(&[(
            "edge",
            vec![
                vec![0, 1, 0, 1],
                vec![0, 2, 1, 1],
                vec![1, 3, 2, 1],
                vec![2, 4, 3, 1],
            ],
        )]);
        let profile = |engine: EngineKind| -> Vec<u64> {
            let out = prepared
                .run(
                    &facts,
                    &RunConfig {
                        engine,
                        ..Default::default()
                    },
                )
                .unwrap();
            out.oracle_logs[0].iter().map(|&(_, m)| m).collect()
        };
        assert_eq!(profile(EngineKind::Seminaive), vec![1, 1, 2, 2]);
        assert_eq!(profile(EngineKind::Eager), vec![1, 1, 1, 1]);
    }

    #[test]
    fn derived_equals_final_cardinality_of_rule_heads() {
        let prepared = prepare(TC, "<t>", builtin_registry()).unwrap();
        let facts =
            prepared.facts_from_rows(&[("edge", vec![vec![0, 1], vec![1, 2], vec![2, 0]])]);
        let out = prepared
            .run(&facts, &RunConfig::default())
            .unwrap();
        assert_eq!(out.metrics.derived as usize, out.db.relation("reach").len());
    }

    #[test]
    fn oracle_call_totals_are_the_sum_of_sessions() {
        let prepared = prepare(TREE_REACH_PROGRAM, "<gen>", builtin_registry()).unwrap();
        let inst = tree_reach(&TreeGenConfig {
            depth: 5,
            branching: 2,
            contradiction_rate: 0.0,
            seed: 1,
        });
        let rows: Vec<Vec<i64>> = inst
            .labels
            .iter()
            .map(|&(p, c, v, s)| vec![p as i64, c as i64, v, s])
            .collect();
        let facts = prepared.facts_from_rows(&[("edge", rows)]);
        let out = prepared
            .run(
                &facts,
                &RunConfig {
                    engine: EngineKind::Eager,
                    threads: 4,
                    ..Default::default()
                },
            )
            .unwrap();
        let per_worker_sum: u64 = out.oracle_logs.iter().map(|l| l.len() as u64).sum();
        assert_eq!(out.metrics.oracle_calls, per_worker_sum);
    }
}
