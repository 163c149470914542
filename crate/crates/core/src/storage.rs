//! Concurrent indexed relations: linearizable insert-if-absent plus
//! bound-prefix queries.
//!
//! A relation keeps one primary index (full lexicographic order over all
//! columns) and one secondary index per bound-column set the query planner
//! requests. All indexes live behind a single lock and are updated together,
//! so the relation is linearizable as one object; queries snapshot their
//! matches and are therefore weakly consistent with concurrent inserts.
//!
//! Index keys are the canonical order-preserving byte encodings of the
//! interned values, which makes iteration order (and dumps) deterministic
//! regardless of the order values were interned in.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use parking_lot::RwLock;

use crate::ir::{Atom, Interner, Term, ValueId};

/// A ground tuple; length equals the relation arity.
pub type Tuple = Vec<ValueId>;

/// Per-column bound/free pattern for a query. `Some(v)` fixes a column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundPattern(pub Vec<Option<ValueId>>);

impl BoundPattern {
    pub fn all_free(arity: usize) -> Self {
        BoundPattern(vec![None; arity])
    }

    pub fn bound_cols(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|_| i))
            .collect()
    }

    pub fn matches(&self, t: &Tuple) -> bool {
        self.0
            .iter()
            .zip(t)
            .all(|(p, v)| p.map_or(true, |b| b == *v))
    }
}

struct Secondary {
    cols: Vec<usize>,
    /// Column permutation: bound columns (ascending), then the rest.
    perm: Vec<usize>,
    map: BTreeMap<Vec<u8>, Tuple>,
}

struct Indexes {
    primary: BTreeMap<Vec<u8>, Tuple>,
    secondary: Vec<Secondary>,
}

/// A named, fixed-arity set of ground tuples shared among workers.
pub struct Relation {
    name: String,
    arity: usize,
    interner: Arc<Interner>,
    inner: RwLock<Indexes>,
}

impl Relation {
    /// Creates a relation with secondary indexes for each given bound-column
    /// set (proper, non-empty subsets of the columns; anything else is served
    /// by the primary index).
    pub fn new(
        name: &str,
        arity: usize,
        interner: Arc<Interner>,
        secondary_cols: impl IntoIterator<Item = Vec<usize>>,
    ) -> Self {
        let mut secondary = Vec::new();
        let mut seen = BTreeSet::new();
        for cols in secondary_cols {
            let mut cols = cols;
            cols.sort_unstable();
            cols.dedup();
            if cols.is_empty() || cols.len() >= arity || !seen.insert(cols.clone()) {
                continue;
            }
            let mut perm = cols.clone();
            perm.extend((0..arity).filter(|c| !cols.contains(c)));
            secondary.push(Secondary {
                cols,
                perm,
                map: BTreeMap::new(),
            });
        }
        Relation {
            name: name.to_string(),
            arity,
            interner,
            inner: RwLock::new(Indexes {
                primary: BTreeMap::new(),
                secondary,
            }),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    fn key_for(&self, t: &Tuple, perm: Option<&[usize]>) -> Vec<u8> {
        let mut key = Vec::with_capacity(t.len() * 9);
        match perm {
            None => {
                for &v in t {
                    self.interner.write_canon(v, &mut key);
                }
            }
            Some(perm) => {
                for &c in perm {
                    self.interner.write_canon(t[c], &mut key);
                }
            }
        }
        key
    }

    /// Inserts `t` if absent. Returns true exactly once per tuple over the
    /// relation's lifetime; the insert is atomic across all indexes, and the
    /// tuple is visible to every query that starts after this call returns.
    pub fn add_if_absent(&self, t: Tuple) -> bool {
        assert_eq!(t.len(), self.arity, "arity mismatch inserting into {}", self.name);
        let key = self.key_for(&t, None);
        let mut g = self.inner.write();
        if g.primary.contains_key(&key) {
            return false;
        }
        for s in &mut g.secondary {
            let skey = {
                let mut k = Vec::with_capacity(t.len() * 9);
                for &c in &s.perm {
                    self.interner.write_canon(t[c], &mut k);
                }
                k
            };
            s.map.insert(skey, t.clone());
        }
        g.primary.insert(key, t);
        true
    }

    pub fn contains(&self, t: &Tuple) -> bool {
        let key = self.key_for(t, None);
        self.inner.read().primary.contains_key(&key)
    }

    /// Returns the tuples matching `pattern`, in canonical index order. The
    /// result is a snapshot: concurrent inserts may or may not appear.
    pub fn query(&self, pattern: &BoundPattern) -> Vec<Tuple> {
        assert_eq!(pattern.0.len(), self.arity, "pattern arity mismatch on {}", self.name);
        let cols = pattern.bound_cols();
        let g = self.inner.read();
        if cols.len() == self.arity {
            // Fully bound: membership probe.
            let t: Tuple = pattern.0.iter().map(|v| v.unwrap()).collect();
            let key = self.key_for(&t, None);
            return g.primary.get(&key).map(|t| vec![t.clone()]).unwrap_or_default();
        }
        if cols.is_empty() {
            return g.primary.values().cloned().collect();
        }
        if let Some(s) = g.secondary.iter().find(|s| s.cols == cols) {
            let mut prefix = Vec::new();
            for &c in &s.cols {
                self.interner.write_canon(pattern.0[c].unwrap(), &mut prefix);
            }
            return s
                .map
                .range(prefix.clone()..)
                .take_while(|(k, _)| k.starts_with(&prefix))
                .map(|(_, t)| t.clone())
                .collect();
        }
        // No planned index for this pattern: filter the primary. The result
        // order is identical to what a dedicated index would yield.
        g.primary
            .values()
            .filter(|t| pattern.matches(t))
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.inner.read().primary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.read().primary.is_empty()
    }

    /// All tuples in canonical order.
    pub fn snapshot(&self) -> Vec<Tuple> {
        self.inner.read().primary.values().cloned().collect()
    }

    pub fn clear(&self) {
        let mut g = self.inner.write();
        g.primary.clear();
        for s in &mut g.secondary {
            s.map.clear();
        }
    }

    /// Exchanges contents with `other` (same arity and index layout).
    pub fn swap_contents(&self, other: &Relation) {
        assert_eq!(self.arity, other.arity);
        // Lock in address order; the pair is private to one engine phase.
        let (first, second) = if (self as *const _ as usize) < (other as *const _ as usize) {
            (self, other)
        } else {
            (other, self)
        };
        let mut a = first.inner.write();
        let mut b = second.inner.write();
        std::mem::swap(&mut a.primary, &mut b.primary);
        debug_assert_eq!(a.secondary.len(), b.secondary.len());
        for (sa, sb) in a.secondary.iter_mut().zip(b.secondary.iter_mut()) {
            debug_assert_eq!(sa.cols, sb.cols);
            std::mem::swap(&mut sa.map, &mut sb.map);
        }
    }

    /// Tab-separated rows in canonical order; deterministic regardless of
    /// thread count or interning order.
    pub fn dump(&self) -> String {
        let g = self.inner.read();
        let mut out = String::new();
        for t in g.primary.values() {
            let row: Vec<String> = t.iter().map(|&v| self.interner.render(v)).collect();
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }

    /// Union of the per-index contents; used to check that no index lost a
    /// tuple.
    pub fn index_cardinalities(&self) -> Vec<usize> {
        let g = self.inner.read();
        let mut out = vec![g.primary.len()];
        out.extend(g.secondary.iter().map(|s| s.map.len()));
        out
    }
}

/// Which copy of a predicate's tuples an atom scans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RelRole {
    Full,
    Delta,
}

/// Secondary-index requests per (predicate, role), as sorted bound-column
/// sets.
pub type IndexPlan = HashMap<(String, RelRole), BTreeSet<Vec<usize>>>;

/// One rule body in the exact order an engine will evaluate it.
pub struct BodyPlan<'a> {
    pub atoms: &'a [Atom],
    /// Atom position whose positive scan reads the delta relation.
    pub delta_index: Option<usize>,
    /// Eager evaluation replaces the delta scan with a mock singleton, which
    /// needs no index.
    pub delta_is_mock: bool,
}

/// Simulates left-to-right binding for each body and collects the bound
/// column set of every positive scan. The primary index is always available,
/// so empty and full column sets are not requested.
pub fn plan_indexes(bodies: &[BodyPlan]) -> IndexPlan {
    let mut plan: IndexPlan = HashMap::new();
    for body in bodies {
        let mut bound: BTreeSet<&str> = BTreeSet::new();
        let term_ground = |t: &Term, bound: &BTreeSet<&str>| {
            let mut vs = Vec::new();
            t.vars(&mut vs);
            vs.iter().all(|v| bound.contains(v))
        };
        for (i, atom) in body.atoms.iter().enumerate() {
            match atom {
                Atom::Pos { pred, args } => {
                    let cols: Vec<usize> = args
                        .iter()
                        .enumerate()
                        .filter(|(_, t)| term_ground(t, &bound))
                        .map(|(c, _)| c)
                        .collect();
                    let is_delta = body.delta_index == Some(i);
                    let skip = is_delta && body.delta_is_mock;
                    if !skip && !cols.is_empty() && cols.len() < args.len() {
                        let role = if is_delta { RelRole::Delta } else { RelRole::Full };
                        plan.entry((pred.clone(), role)).or_default().insert(cols);
                    }
                    for t in args {
                        if let Term::Var(v) = t {
                            bound.insert(v);
                        }
                    }
                }
                Atom::Eq { lhs, rhs } => {
                    if let Term::Var(v) = lhs {
                        if !bound.contains(v.as_str()) && term_ground(rhs, &bound) {
                            bound.insert(v);
                        }
                    }
                }
                Atom::Neg { .. } | Atom::Neq { .. } => {}
            }
        }
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_program;

    fn int_tuple(i: &Interner, vals: &[i64]) -> Tuple {
        vals.iter().map(|&n| i.intern_int(n)).collect()
    }

    #[test]
    fn add_if_absent_reports_novelty_once() {
        let i = Arc::new(Interner::new());
        let r = Relation::new("edge", 2, i.clone(), []);
        assert!(r.add_if_absent(int_tuple(&i, &[0, 1])));
        assert!(!r.add_if_absent(int_tuple(&i, &[0, 1])));
    }

    #[test]
    fn query_by_bound_prefix() {
        let i = Arc::new(Interner::new());
        let r = Relation::new("edge", 2, i.clone(), [vec![0]]);
        for t in [[0, 1], [0, 2], [1, 3]] {
            r.add_if_absent(int_tuple(&i, &t));
        }
        let zero = i.intern_int(0);
        let got = r.query(&BoundPattern(vec![Some(zero), None]));
        assert_eq!(got, vec![int_tuple(&i, &[0, 1]), int_tuple(&i, &[0, 2])]);
        assert_eq!(r.query(&BoundPattern::all_free(2)).len(), 3);
        let five = i.intern_int(5);
        assert!(r.query(&BoundPattern(vec![Some(five), None])).is_empty());
    }

    #[test]
    fn query_order_is_canonical_not_interning_order() {
        let i = Arc::new(Interner::new());
        // Intern 2 before 1 so id order disagrees with value order.
        i.intern_int(2);
        let r = Relation::new("edge", 2, i.clone(), [vec![0]]);
        r.add_if_absent(int_tuple(&i, &[0, 2]));
        r.add_if_absent(int_tuple(&i, &[0, 1]));
        let zero = i.intern_int(0);
        let got = r.query(&BoundPattern(vec![Some(zero), None]));
        assert_eq!(got, vec![int_tuple(&i, &[0, 1]), int_tuple(&i, &[0, 2])]);
    }

    #[test]
    fn unplanned_pattern_falls_back_to_primary_with_same_order() {
        let i = Arc::new(Interner::new());
        let indexed = Relation::new("r", 3, i.clone(), [vec![1]]);
        let fallback = Relation::new("r", 3, i.clone(), []);
        for t in [[0, 5, 2], [1, 5, 0], [0, 4, 9], [2, 5, 7]] {
            indexed.add_if_absent(int_tuple(&i, &t));
            fallback.add_if_absent(int_tuple(&i, &t));
        }
        let five = i.intern_int(5);
        let p = BoundPattern(vec![None, Some(five), None]);
        assert_eq!(indexed.query(&p), fallback.query(&p));
        assert_eq!(indexed.query(&p).len(), 3);
    }

    #[test]
    fn concurrent_add_if_absent_yields_exactly_one_true() {
        let i = Arc::new(Interner::new());
        let t = int_tuple(&i, &[3, 4]);
        for _ in 0..50 {
            let r = Relation::new("edge", 2, i.clone(), []);
            let hits: usize = std::thread::scope(|s| {
                let handles: Vec<_> = (0..8)
                    .map(|_| {
                        let r = &r;
                        let t = t.clone();
                        s.spawn(move || r.add_if_absent(t) as usize)
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().unwrap()).sum()
            });
            assert_eq!(hits, 1);
        }
    }

    #[test]
    fn indexes_agree_after_concurrent_inserts() {
        let i = Arc::new(Interner::new());
        let r = Relation::new("r", 2, i.clone(), [vec![0], vec![1]]);
        std::thread::scope(|s| {
            for w in 0..4i64 {
                let r = &r;
                let i = i.clone();
                s.spawn(move || {
                    for k in 0..64i64 {
                        r.add_if_absent(vec![i.intern_int(k % 7), i.intern_int(w)]);
                    }
                });
            }
        });
        let cards = r.index_cardinalities();
        assert!(cards.iter().all(|&c| c == cards[0]), "{cards:?}");
        assert_eq!(cards[0], r.len());
    }

    #[test]
    fn dump_is_sorted_and_tab_separated() {
        let i = Arc::new(Interner::new());
        let r = Relation::new("edge", 2, i.clone(), []);
        r.add_if_absent(int_tuple(&i, &[1, 3]));
        r.add_if_absent(int_tuple(&i, &[0, 2]));
        r.add_if_absent(int_tuple(&i, &[0, 1]));
        assert_eq!(r.dump(), "0\t1\n0\t2\n1\t3\n");
    }

    fn plan_for(src: &str, delta_first: bool, mock: bool) -> IndexPlan {
        let i = Interner::new();
        let p = parse_program(src, "<t>", &i).unwrap();
        let strata = crate::stratify::stratify(&p).unwrap();
        let mut bodies: Vec<(Vec<Atom>, Option<usize>)> = Vec::new();
        for stratum in &strata {
            for &rid in &stratum.rules {
                let rule = &p.rules[rid];
                let occs: Vec<usize> = rule
                    .body
                    .iter()
                    .enumerate()
                    .filter(|(_, a)| {
                        matches!(a, Atom::Pos { pred, .. } if stratum.recursive_preds.contains(pred))
                    })
                    .map(|(i, _)| i)
                    .collect();
                if occs.is_empty() {
                    bodies.push((rule.body.clone(), None));
                } else {
                    for &occ in &occs {
                        if delta_first {
                            let mut atoms = vec![rule.body[occ].clone()];
                            atoms.extend(
                                rule.body
                                    .iter()
                                    .enumerate()
                                    .filter(|&(i, _)| i != occ)
                                    .map(|(_, a)| a.clone()),
                            );
                            bodies.push((atoms, Some(0)));
                        } else {
                            bodies.push((rule.body.clone(), Some(occ)));
                        }
                    }
                }
            }
        }
        let plans: Vec<BodyPlan> = bodies
            .iter()
            .map(|(atoms, delta)| BodyPlan {
                atoms,
                delta_index: *delta,
                delta_is_mock: mock,
            })
            .collect();
        plan_indexes(&plans)
    }

    const TRANS_STEP: &str = ".decl edge(2) input .decl reach(2) output \
         reach(X,Y) :- edge(X,Y). reach(X,Z) :- edge(X,Y), reach(Y,Z).";

    #[test]
    fn trans_step_needs_reach_col0() {
        // Written order (edge, reach): reach is scanned with column 0 bound.
        let plan = plan_for(TRANS_STEP, false, false);
        assert_eq!(
            plan.get(&("reach".into(), RelRole::Delta)),
            Some(&BTreeSet::from([vec![0]]))
        );
        // edge is scanned first with nothing bound: primary suffices.
        assert!(!plan.contains_key(&("edge".into(), RelRole::Full)));
    }

    #[test]
    fn single_atom_body_needs_only_primary() {
        let plan = plan_for(
            ".decl edge(2) input .decl copy(2) output copy(X,Y) :- edge(X,Y).",
            false,
            false,
        );
        assert!(plan.is_empty());
    }

    #[test]
    fn trans_guess_delta_first_needs_both_reach_columns() {
        let plan = plan_for(
            ".decl edge(2) input .decl reach(2) output \
             reach(X,Y) :- edge(X,Y). reach(X,Z) :- reach(X,Y), reach(Y,Z).",
            true,
            true,
        );
        // Two delta-first rotations: [δ(X,Y), reach(Y,Z)] binds col 0;
        // [δ(Y,Z), reach(X,Y)] binds col 1.
        assert_eq!(
            plan.get(&("reach".into(), RelRole::Full)),
            Some(&BTreeSet::from([vec![0], vec![1]]))
        );
    }
}
