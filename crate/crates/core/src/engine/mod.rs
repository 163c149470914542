//! Shared evaluation machinery: the relation database, the δ-rewrite that
//! compiles a stratum's rules into evaluation orders, and the resumable
//! nested-loop join cursor both engines run.
//!
//! A [`RuleCursor`] enumerates the substitutions satisfying a rule body left
//! to right, yielding one ground head tuple at a time. It is an explicit
//! state machine rather than an iterator so the eager engine can suspend an
//! evaluation mid-stream, queue it as a continuation work item, and resume it
//! later (possibly on another worker).

pub mod eager;
pub mod seminaive;

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::EvalError;
use crate::externs::{FunctorRegistry, OracleSession};
use crate::ir::{Atom, Interner, Program, Substitution, Term, ValueId};
use crate::storage::{BodyPlan, BoundPattern, IndexPlan, RelRole, Relation, Tuple};
use crate::stratify::Stratum;

/// All relations of a run, keyed by predicate name. Shared read/write among
/// workers; the relations themselves carry the concurrency contract.
pub struct Database {
    interner: Arc<Interner>,
    relations: HashMap<String, Relation>,
}

impl Database {
    pub fn new(program: &Program, plan: &IndexPlan, interner: Arc<Interner>) -> Self {
        let mut relations = HashMap::new();
        for (name, decl) in &program.declarations {
            let cols: Vec<Vec<usize>> = plan
                .get(&(name.clone(), RelRole::Full))
                .map(|s| s.iter().cloned().collect())
                .unwrap_or_default();
            relations.insert(
                name.clone(),
                Relation::new(name, decl.arity, interner.clone(), cols),
            );
        }
        Database {
            interner,
            relations,
        }
    }

    pub fn relation(&self, pred: &str) -> &Relation {
        &self.relations[pred]
    }

    pub fn interner(&self) -> &Arc<Interner> {
        &self.interner
    }

    pub fn relation_names(&self) -> impl Iterator<Item = &str> {
        self.relations.keys().map(|s| s.as_str())
    }
}

/// A rule compiled to one evaluation order, with at most one body occurrence
/// marked as the δ scan.
#[derive(Debug, Clone)]
pub struct CompiledRule {
    pub rule_id: usize,
    /// Index of the δ-marked occurrence among the original body atoms; None
    /// for rules with no recursive body atom.
    pub delta_occurrence: Option<usize>,
    /// Position of the δ scan within `atoms` (the evaluation order).
    pub delta_eval_index: Option<usize>,
    /// The δ scan reads a mock singleton relation holding one fact instead of
    /// a δ relation (eager evaluation's lazy specialization).
    pub mock_delta: bool,
    pub atoms: Vec<Atom>,
    pub head_pred: String,
    pub head_args: Vec<Term>,
}

/// A stratum compiled for one engine configuration.
pub struct CompiledStratum {
    pub rules: Vec<Arc<CompiledRule>>,
    /// Indexes into `rules` with no δ mark, evaluated once as seeds.
    pub seeds: Vec<usize>,
    /// Recursive predicate -> δ-rule indexes specializable to its facts, in
    /// ascending (rule id, occurrence) order.
    pub spec_map: HashMap<String, Vec<usize>>,
}

/// Rewrites a stratum's rules: one compiled rule per occurrence of a
/// recursive-predicate body atom (non-linear rules split into several), plus
/// one unmarked rule for each rule without recursive body atoms. With
/// `delta_first` the δ atom is moved to the front, others keeping their
/// relative order.
pub fn compile_stratum(
    program: &Program,
    stratum: &Stratum,
    delta_first: bool,
    mock_delta: bool,
) -> CompiledStratum {
    let mut rules = Vec::new();
    let mut seeds = Vec::new();
    let mut spec_map: HashMap<String, Vec<usize>> = HashMap::new();
    for &rid in &stratum.rules {
        let rule = &program.rules[rid];
        let occurrences: Vec<usize> = rule
            .body
            .iter()
            .enumerate()
            .filter(|(_, a)| {
                matches!(a, Atom::Pos { pred, .. } if stratum.recursive_preds.contains(pred))
            })
            .map(|(i, _)| i)
            .collect();
        if occurrences.is_empty() {
            seeds.push(rules.len());
            rules.push(Arc::new(CompiledRule {
                rule_id: rid,
                delta_occurrence: None,
                delta_eval_index: None,
                mock_delta: false,
                atoms: rule.body.clone(),
                head_pred: rule.head_pred.clone(),
                head_args: rule.head_args.clone(),
            }));
            continue;
        }
        for &occ in &occurrences {
            let (atoms, eval_index) = if delta_first {
                let mut atoms = vec![rule.body[occ].clone()];
                atoms.extend(
                    rule.body
                        .iter()
                        .enumerate()
                        .filter(|&(i, _)| i != occ)
                        .map(|(_, a)| a.clone()),
                );
                (atoms, 0)
            } else {
                (rule.body.clone(), occ)
            };
            let pred = match &rule.body[occ] {
                Atom::Pos { pred, .. } => pred.clone(),
                _ => unreachable!(),
            };
            spec_map.entry(pred).or_default().push(rules.len());
            rules.push(Arc::new(CompiledRule {
                rule_id: rid,
                delta_occurrence: Some(occ),
                delta_eval_index: Some(eval_index),
                mock_delta,
                atoms,
                head_pred: rule.head_pred.clone(),
                head_args: rule.head_args.clone(),
            }));
        }
    }
    CompiledStratum {
        rules,
        seeds,
        spec_map,
    }
}

impl CompiledStratum {
    /// Body views for the index planner.
    pub fn body_plans(&self) -> Vec<BodyPlan<'_>> {
        self.rules
            .iter()
            .map(|r| BodyPlan {
                atoms: &r.atoms,
                delta_index: r.delta_eval_index,
                delta_is_mock: r.mock_delta,
            })
            .collect()
    }
}

/// Everything a cursor needs for one `next` step. The session and work
/// counter belong to the evaluating worker.
pub struct EvalCtx<'a> {
    pub db: &'a Database,
    /// δ relations per recursive predicate (semi-naive only).
    pub delta: Option<&'a HashMap<String, Relation>>,
    pub registry: &'a FunctorRegistry,
    pub session: &'a mut OracleSession,
    pub work: &'a mut u64,
}

impl<'a> EvalCtx<'a> {
    fn eval_term(&mut self, t: &Term, bindings: &Substitution) -> Result<ValueId, EvalError> {
        match t {
            Term::Var(v) => bindings.get(v).ok_or_else(|| {
                EvalError::Internal(format!("unbound variable `{v}` (validator bug)"))
            }),
            Term::Const(id) => Ok(*id),
            Term::FunctorCall { name, args } => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.eval_term(a, bindings)?);
                }
                self.registry
                    .call(name, &vals, self.db.interner(), self.session)
            }
        }
    }

    /// Evaluates `t` if every variable in it is bound; `None` marks a free
    /// column.
    fn pattern_value(
        &mut self,
        t: &Term,
        bindings: &Substitution,
    ) -> Result<Option<ValueId>, EvalError> {
        let mut vs = Vec::new();
        t.vars(&mut vs);
        if vs.iter().all(|v| bindings.get(v).is_some()) {
            Ok(Some(self.eval_term(t, bindings)?))
        } else {
            Ok(None)
        }
    }
}

struct Frame {
    atom_idx: usize,
    /// Columns already constrained by the query pattern.
    pattern: Vec<Option<ValueId>>,
    results: Vec<Tuple>,
    cursor: usize,
    mark: usize,
}

enum CursorState {
    Fresh,
    Yielded,
    Done,
}

/// Resumable enumeration of a compiled rule's solutions.
pub struct RuleCursor {
    rule: Arc<CompiledRule>,
    /// The fact a specialized work item unifies the δ atom against.
    mock_fact: Option<Tuple>,
    /// Restrict the first scan's matches to indexes ≡ offset (mod stride);
    /// used to partition an outer loop across workers.
    outer_slice: Option<(usize, usize)>,
    frames: Vec<Frame>,
    bindings: Substitution,
    state: CursorState,
}

impl RuleCursor {
    pub fn new(rule: Arc<CompiledRule>, mock_fact: Option<Tuple>) -> Self {
        RuleCursor {
            rule,
            mock_fact,
            outer_slice: None,
            frames: Vec::new(),
            bindings: Substitution::new(),
            state: CursorState::Fresh,
        }
    }

    pub fn with_outer_slice(rule: Arc<CompiledRule>, offset: usize, stride: usize) -> Self {
        let mut c = Self::new(rule, None);
        c.outer_slice = Some((offset, stride));
        c
    }

    pub fn rule(&self) -> &CompiledRule {
        &self.rule
    }

    /// Produces the next ground head tuple, or `None` at exhaustion.
    pub fn next(&mut self, ctx: &mut EvalCtx) -> Result<Option<Tuple>, EvalError> {
        let mut i = match self.state {
            CursorState::Done => return Ok(None),
            CursorState::Fresh => {
                self.state = CursorState::Yielded;
                0
            }
            CursorState::Yielded => match self.backtrack(ctx)? {
                Some(next) => next,
                None => {
                    self.state = CursorState::Done;
                    return Ok(None);
                }
            },
        };
        let rule = self.rule.clone();
        loop {
            if i == rule.atoms.len() {
                let mut head = Vec::with_capacity(rule.head_args.len());
                for t in &rule.head_args {
                    head.push(ctx.eval_term(t, &self.bindings)?);
                }
                if self.frames.is_empty() {
                    // No choice points: at most one solution.
                    self.state = CursorState::Done;
                }
                return Ok(Some(head));
            }
            let ok = match &rule.atoms[i] {
                Atom::Pos { .. } => {
                    self.enter_scan(i, ctx)?;
                    self.advance_top_frame(ctx)?
                }
                Atom::Neg { pred, args } => {
                    let mut t = Vec::with_capacity(args.len());
                    for a in args {
                        t.push(ctx.eval_term(a, &self.bindings)?);
                    }
                    !ctx.db.relation(pred).contains(&t)
                }
                Atom::Eq { lhs, rhs } => self.eval_eq(lhs, rhs, ctx)?,
                Atom::Neq { lhs, rhs } => {
                    let l = ctx.eval_term(lhs, &self.bindings)?;
                    let r = ctx.eval_term(rhs, &self.bindings)?;
                    l != r
                }
            };
            if ok {
                i += 1;
            } else {
                // A failed scan leaves an exhausted frame on top; drop it
                // before resuming older choice points.
                if matches!(rule.atoms[i], Atom::Pos { .. }) {
                    let f = self.frames.pop().expect("scan frame");
                    self.bindings.truncate(f.mark);
                }
                match self.backtrack(ctx)? {
                    Some(next) => i = next,
                    None => {
                        self.state = CursorState::Done;
                        return Ok(None);
                    }
                }
            }
        }
    }

    fn enter_scan(&mut self, atom_idx: usize, ctx: &mut EvalCtx) -> Result<(), EvalError> {
        let Atom::Pos { pred, args } = &self.rule.atoms[atom_idx] else {
            unreachable!()
        };
        let mark = self.bindings.mark();
        let mut pattern = Vec::with_capacity(args.len());
        for a in args {
            pattern.push(ctx.pattern_value(a, &self.bindings)?);
        }
        let is_delta = self.rule.delta_eval_index == Some(atom_idx);
        let mut results = if is_delta && self.rule.mock_delta {
            let fact = self
                .mock_fact
                .as_ref()
                .ok_or_else(|| EvalError::Internal("missing specialization fact".into()))?;
            let bp = BoundPattern(pattern.clone());
            if bp.matches(fact) {
                vec![fact.clone()]
            } else {
                Vec::new()
            }
        } else if is_delta {
            let delta = ctx
                .delta
                .ok_or_else(|| EvalError::Internal("missing delta relations".into()))?;
            delta[pred].query(&BoundPattern(pattern.clone()))
        } else {
            ctx.db.relation(pred).query(&BoundPattern(pattern.clone()))
        };
        if self.frames.is_empty() {
            if let Some((offset, stride)) = self.outer_slice {
                results = results
                    .into_iter()
                    .enumerate()
                    .filter(|(k, _)| k % stride == offset)
                    .map(|(_, t)| t)
                    .collect();
            }
        }
        *ctx.work += results.len() as u64;
        self.frames.push(Frame {
            atom_idx,
            pattern,
            results,
            cursor: 0,
            mark,
        });
        Ok(())
    }

    /// Binds the top frame's next matching tuple; false when exhausted.
    fn advance_top_frame(&mut self, _ctx: &mut EvalCtx) -> Result<bool, EvalError> {
        let f = self.frames.last_mut().expect("frame");
        let Atom::Pos { args, .. } = &self.rule.atoms[f.atom_idx] else {
            unreachable!()
        };
        loop {
            self.bindings.truncate(f.mark);
            if f.cursor >= f.results.len() {
                return Ok(false);
            }
            let tuple = &f.results[f.cursor];
            f.cursor += 1;
            if unify_args(args, tuple, &f.pattern, &mut self.bindings)? {
                return Ok(true);
            }
        }
    }

    /// Re-advances the deepest live frame; returns the atom index to resume
    /// from, or `None` when every frame is exhausted.
    fn backtrack(&mut self, ctx: &mut EvalCtx) -> Result<Option<usize>, EvalError> {
        loop {
            let Some(top) = self.frames.last() else {
                return Ok(None);
            };
            let resume_at = top.atom_idx + 1;
            if self.advance_top_frame(ctx)? {
                return Ok(Some(resume_at));
            }
            let f = self.frames.pop().expect("frame");
            self.bindings.truncate(f.mark);
        }
    }

    fn eval_eq(&mut self, lhs: &Term, rhs: &Term, ctx: &mut EvalCtx) -> Result<bool, EvalError> {
        if let Term::Var(v) = lhs {
            if self.bindings.get(v).is_none() {
                let r = ctx.eval_term(rhs, &self.bindings)?;
                self.bindings.bind(v, r);
                return Ok(true);
            }
        }
        let l = ctx.eval_term(lhs, &self.bindings)?;
        let r = ctx.eval_term(rhs, &self.bindings)?;
        Ok(l == r)
    }
}

/// Unifies atom arguments against a scanned tuple. Columns constrained by
/// the query pattern already match; the rest are unbound variables (binding
/// them) or repeated variables (checked).
fn unify_args(
    args: &[Term],
    tuple: &Tuple,
    pattern: &[Option<ValueId>],
    bindings: &mut Substitution,
) -> Result<bool, EvalError> {
    for (col, term) in args.iter().enumerate() {
        if pattern[col].is_some() {
            continue;
        }
        match term {
            Term::Var(v) => match bindings.get(v) {
                Some(bound) => {
                    if bound != tuple[col] {
                        return Ok(false);
                    }
                }
                None => bindings.bind(v, tuple[col]),
            },
            _ => {
                return Err(EvalError::Internal(
                    "non-variable column left unconstrained (validator bug)".into(),
                ))
            }
        }
    }
    Ok(true)
}

/// Unification check used when specializing a rule occurrence to a fact:
/// constants must match and repeated variables must agree. Functor-call
/// arguments are deferred to evaluation (lazy specialization).
pub fn specialize_matches(rule: &CompiledRule, fact: &Tuple) -> bool {
    let idx = match rule.delta_eval_index {
        Some(i) => i,
        None => return false,
    };
    let Atom::Pos { args, .. } = &rule.atoms[idx] else {
        return false;
    };
    let mut seen: Vec<(&str, ValueId)> = Vec::new();
    for (col, term) in args.iter().enumerate() {
        match term {
            Term::Const(c) => {
                if *c != fact[col] {
                    return false;
                }
            }
            Term::Var(v) => match seen.iter().find(|(name, _)| name == v) {
                Some(&(_, prev)) => {
                    if prev != fact[col] {
                        return false;
                    }
                }
                None => seen.push((v, fact[col])),
            },
            Term::FunctorCall { .. } => {}
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::externs::{OracleConfig, OracleSession};
    use crate::ir::Value;
    use crate::parse::parse_program;
    use crate::storage::plan_indexes;
    use crate::stratify::stratify;

    fn setup(src: &str) -> (Program, Vec<Stratum>, Arc<Interner>) {
        let interner = Arc::new(Interner::new());
        let p = parse_program(src, "<t>", &interner).unwrap();
        let strata = stratify(&p).unwrap();
        (p, strata, interner)
    }

    const TC: &str = ".decl edge(2) input .decl reach(2) output \
         reach(X,Y) :- edge(X,Y). reach(X,Z) :- edge(X,Y), reach(Y,Z).";

    #[test]
    fn trans_step_rewrites_to_one_delta_rule() {
        let (p, strata, _) = setup(TC);
        let c = compile_stratum(&p, &strata[0], false, false);
        assert_eq!(c.rules.len(), 2);
        assert_eq!(c.seeds, vec![0]);
        let delta_rules: Vec<_> = c.rules.iter().filter(|r| r.delta_occurrence.is_some()).collect();
        assert_eq!(delta_rules.len(), 1);
        assert_eq!(delta_rules[0].delta_occurrence, Some(1));
    }

    #[test]
    fn trans_guess_splits_per_occurrence() {
        let (p, strata, _) = setup(
            ".decl edge(2) input .decl reach(2) output \
             reach(X,Y) :- edge(X,Y). reach(X,Z) :- reach(X,Y), reach(Y,Z).",
        );
        let c = compile_stratum(&p, &strata[0], false, false);
        let occs: Vec<Option<usize>> = c
            .rules
            .iter()
            .filter(|r| r.rule_id == 1)
            .map(|r| r.delta_occurrence)
            .collect();
        assert_eq!(occs, vec![Some(0), Some(1)]);
        assert_eq!(c.spec_map["reach"].len(), 2);
    }

    #[test]
    fn non_recursive_rule_is_an_unmarked_seed() {
        let (p, strata, _) = setup(TC);
        let c = compile_stratum(&p, &strata[0], true, false);
        assert_eq!(c.seeds.len(), 1);
        assert!(c.rules[c.seeds[0]].delta_occurrence.is_none());
    }

    #[test]
    fn delta_first_rotates_preserving_relative_order() {
        let (p, strata, _) = setup(TC);
        let c = compile_stratum(&p, &strata[0], true, false);
        let dr = c
            .rules
            .iter()
            .find(|r| r.delta_occurrence.is_some())
            .unwrap();
        assert_eq!(dr.delta_eval_index, Some(0));
        assert!(matches!(&dr.atoms[0], Atom::Pos { pred, .. } if pred == "reach"));
        assert!(matches!(&dr.atoms[1], Atom::Pos { pred, .. } if pred == "edge"));
    }

    fn run_cursor(
        rule: Arc<CompiledRule>,
        mock: Option<Tuple>,
        db: &Database,
        delta: Option<&HashMap<String, Relation>>,
        registry: &FunctorRegistry,
    ) -> Vec<Tuple> {
        let mut session = OracleSession::new(0, OracleConfig::default()).unwrap();
        let mut work = 0;
        let mut ctx = EvalCtx {
            db,
            delta,
            registry,
            session: &mut session,
            work: &mut work,
        };
        let mut cursor = RuleCursor::new(rule, mock);
        let mut out = Vec::new();
        while let Some(t) = cursor.next(&mut ctx).unwrap() {
            out.push(t);
        }
        out
    }

    #[test]
    fn delta_first_specialization_derives_the_expected_head() {
        // trans_step on edge={(0,1)}, δ = reach{(1,3)}: head reach(0,3).
        let (p, strata, interner) = setup(TC);
        let c = compile_stratum(&p, &strata[0], true, false);
        let plan = plan_indexes(&c.body_plans());
        let db = Database::new(&p, &plan, interner.clone());
        db.relation("edge")
            .add_if_absent(vec![interner.intern_int(0), interner.intern_int(1)]);
        let mut delta = HashMap::new();
        let dr = Relation::new("reach", 2, interner.clone(), []);
        dr.add_if_absent(vec![interner.intern_int(1), interner.intern_int(3)]);
        delta.insert("reach".to_string(), dr);
        let rule = c
            .rules
            .iter()
            .find(|r| r.delta_occurrence.is_some())
            .unwrap()
            .clone();
        let registry = FunctorRegistry::with_builtins();
        let heads = run_cursor(rule, None, &db, Some(&delta), &registry);
        assert_eq!(
            heads,
            vec![vec![interner.intern_int(0), interner.intern_int(3)]]
        );
    }

    #[test]
    fn contradictory_neq_yields_nothing() {
        let (p, strata, interner) = setup(
            ".decl q(1) input .decl p(1) output p(X) :- q(X), X != X.",
        );
        let c = compile_stratum(&p, &strata[0], false, false);
        let plan = plan_indexes(&c.body_plans());
        let db = Database::new(&p, &plan, interner.clone());
        db.relation("q").add_if_absent(vec![interner.intern_int(1)]);
        let registry = FunctorRegistry::with_builtins();
        let heads = run_cursor(c.rules[0].clone(), None, &db, None, &registry);
        assert!(heads.is_empty());
    }

    #[test]
    fn functor_binding_in_eq() {
        let (p, strata, interner) = setup(
            ".decl q(1) input .decl p(1) output p(Y) :- q(X), Y = @inc(X).",
        );
        let c = compile_stratum(&p, &strata[0], false, false);
        let plan = plan_indexes(&c.body_plans());
        let db = Database::new(&p, &plan, interner.clone());
        db.relation("q").add_if_absent(vec![interner.intern_int(1)]);
        let mut registry = FunctorRegistry::with_builtins();
        registry
            .register(crate::externs::Functor::pure("inc", 1, |i, a| {
                match i.resolve(a[0]) {
                    Value::Int(n) => Ok(i.intern_int(n + 1)),
                    _ => Err(EvalError::Functor {
                        name: "inc".into(),
                        message: "expects an integer".into(),
                    }),
                }
            }))
            .unwrap();
        let heads = run_cursor(c.rules[0].clone(), None, &db, None, &registry);
        assert_eq!(heads, vec![vec![interner.intern_int(2)]]);
    }

    #[test]
    fn specialize_fails_on_constant_mismatch() {
        // body atom p(0) vs fact p(1).
        let (p, strata, interner) = setup(
            ".decl a(1) input .decl p(1) output p(X) :- a(X). p(1) :- p(0).",
        );
        let c = compile_stratum(&p, &strata[0], true, true);
        let rule = c
            .rules
            .iter()
            .find(|r| r.delta_occurrence.is_some())
            .unwrap();
        assert!(specialize_matches(rule, &vec![interner.intern_int(0)]));
        assert!(!specialize_matches(rule, &vec![interner.intern_int(1)]));
    }

    #[test]
    fn specialize_fails_on_repeated_var_disagreement() {
        // body atom p(X,X) vs fact p(1,2).
        let (p, strata, interner) = setup(
            ".decl a(2) input .decl p(2) output p(X,Y) :- a(X,Y). p(X,X) :- p(X,X), a(X,X).",
        );
        let c = compile_stratum(&p, &strata[0], true, true);
        let rule = c
            .rules
            .iter()
            .find(|r| r.delta_occurrence.is_some())
            .unwrap();
        let one = interner.intern_int(1);
        let two = interner.intern_int(2);
        assert!(specialize_matches(rule, &vec![one, one]));
        assert!(!specialize_matches(rule, &vec![one, two]));
    }

    #[test]
    fn work_counts_tuples_yielded_by_scans() {
        let (p, strata, interner) = setup(TC);
        let c = compile_stratum(&p, &strata[0], false, false);
        let plan = plan_indexes(&c.body_plans());
        let db = Database::new(&p, &plan, interner.clone());
        for t in [[0, 1], [1, 2], [2, 3]] {
            db.relation("edge")
                .add_if_absent(t.iter().map(|&n| interner.intern_int(n)).collect());
        }
        let registry = FunctorRegistry::with_builtins();
        let mut session = OracleSession::new(0, OracleConfig::default()).unwrap();
        let mut work = 0;
        let mut ctx = EvalCtx {
            db: &db,
            delta: None,
            registry: &registry,
            session: &mut session,
            work: &mut work,
        };
        let mut cursor = RuleCursor::new(c.rules[c.seeds[0]].clone(), None);
        while cursor.next(&mut ctx).unwrap().is_some() {}
        assert_eq!(work, 3);
    }
}
