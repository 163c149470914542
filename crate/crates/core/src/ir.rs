//! Program representation: interned values, terms, atoms, rules, and programs.
//!
//! Tuples flowing through the engines hold only [`ValueId`]s; structured
//! values exist so external functors can build and inspect terms such as
//! oracle formulas. The interner is the single shared piece of mutable
//! state and supports concurrent `intern`/`resolve`.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::fmt;

use parking_lot::RwLock;

/// A ground value: an integer literal or a constructed term whose arguments
/// are already-interned values.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Int(i64),
    Ctor { symbol: String, args: Vec<ValueId> },
}

/// Dense identifier for an interned [`Value`]. Stable for the lifetime of one
/// engine run; equality of ids is equality of values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueId(pub u32);

impl fmt::Display for ValueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

struct InternerInner {
    map: HashMap<Value, ValueId>,
    values: Vec<Value>,
    /// Order-preserving byte encoding per value, computed once at interning.
    /// Byte-lexicographic comparison of encodings equals structural value
    /// order, independent of id assignment order.
    canon: Vec<Box<[u8]>>,
}

/// Hash-consing value interner. `intern` is a bijection between values and
/// ids; both operations are linearizable.
pub struct Interner {
    inner: RwLock<InternerInner>,
}

impl Default for Interner {
    fn default() -> Self {
        Self::new()
    }
}

impl Interner {
    pub fn new() -> Self {
        Interner {
            inner: RwLock::new(InternerInner {
                map: HashMap::new(),
                values: Vec::new(),
                canon: Vec::new(),
            }),
        }
    }

    /// Interns `v`, returning the unique id for it. Idempotent.
    ///
    /// All `Ctor` arguments must already be interned ids from this interner.
    pub fn intern(&self, v: Value) -> ValueId {
        if let Some(&id) = self.inner.read().map.get(&v) {
            return id;
        }
        let mut g = self.inner.write();
        if let Some(&id) = g.map.get(&v) {
            return id;
        }
        let id = ValueId(g.values.len() as u32);
        let canon = canon_bytes(&v, &g.canon);
        g.values.push(v.clone());
        g.canon.push(canon.into_boxed_slice());
        g.map.insert(v, id);
        id
    }

    pub fn intern_int(&self, n: i64) -> ValueId {
        self.intern(Value::Int(n))
    }

    pub fn intern_ctor(&self, symbol: &str, args: &[ValueId]) -> ValueId {
        self.intern(Value::Ctor {
            symbol: symbol.to_string(),
            args: args.to_vec(),
        })
    }

    /// Returns the value interned under `id`.
    ///
    /// Panics on an id that was not produced by this interner; that is
    /// internal corruption, not a user error.
    pub fn resolve(&self, id: ValueId) -> Value {
        self.inner.read().values[id.0 as usize].clone()
    }

    /// The canonical order-preserving encoding of `id`'s value.
    pub fn canon(&self, id: ValueId) -> Box<[u8]> {
        self.inner.read().canon[id.0 as usize].clone()
    }

    /// Appends the canonical encoding of `id` to `out`.
    pub fn write_canon(&self, id: ValueId, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.inner.read().canon[id.0 as usize]);
    }

    /// Structural order of two interned values (the order of their canonical
    /// encodings).
    pub fn value_cmp(&self, a: ValueId, b: ValueId) -> std::cmp::Ordering {
        if a == b {
            return std::cmp::Ordering::Equal;
        }
        let g = self.inner.read();
        g.canon[a.0 as usize].cmp(&g.canon[b.0 as usize])
    }

    /// Renders `id` in source-like syntax: integers as decimals, constructed
    /// terms as `symbol(arg, ...)`.
    pub fn render(&self, id: ValueId) -> String {
        match self.resolve(id) {
            Value::Int(n) => n.to_string(),
            Value::Ctor { symbol, args } => {
                let rendered: Vec<String> = args.iter().map(|&a| self.render(a)).collect();
                format!("{}({})", symbol, rendered.join(","))
            }
        }
    }

    pub fn len(&self) -> usize {
        self.inner.read().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Builds the order-preserving encoding for `v` given the encodings of all
/// previously interned values. The encodings are prefix-free, so raw
/// concatenation compares component-wise.
fn canon_bytes(v: &Value, existing: &[Box<[u8]>]) -> Vec<u8> {
    match v {
        Value::Int(n) => {
            let mut out = Vec::with_capacity(9);
            out.push(0x01);
            // Flip the sign bit so byte order matches integer order.
            out.extend_from_slice(&((*n as u64) ^ (1 << 63)).to_be_bytes());
            out
        }
        Value::Ctor { symbol, args } => {
            let mut out = Vec::new();
            out.push(0x02);
            out.extend_from_slice(symbol.as_bytes());
            out.push(0x00);
            out.extend_from_slice(&(args.len() as u32).to_be_bytes());
            for a in args {
                out.extend_from_slice(&existing[a.0 as usize]);
            }
            out
        }
    }
}

/// A term in a rule: a variable, an interned constant, or an external functor
/// call over terms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Var(String),
    Const(ValueId),
    FunctorCall { name: String, args: Vec<Term> },
}

impl Term {
    /// Collects the variables occurring anywhere in this term, in order.
    pub fn vars<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Term::Var(v) => out.push(v),
            Term::Const(_) => {}
            Term::FunctorCall { args, .. } => {
                for a in args {
                    a.vars(out);
                }
            }
        }
    }

    /// True when the term contains no variables at all.
    pub fn is_ground(&self) -> bool {
        let mut vs = Vec::new();
        self.vars(&mut vs);
        vs.is_empty()
    }
}

/// A body atom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Atom {
    Pos { pred: String, args: Vec<Term> },
    Neg { pred: String, args: Vec<Term> },
    Eq { lhs: Term, rhs: Term },
    Neq { lhs: Term, rhs: Term },
}

/// A Horn clause. `head_pred(head_args) :- body.` The id is the rule's index
/// in its program and is stable across compilation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub id: usize,
    pub head_pred: String,
    pub head_args: Vec<Term>,
    pub body: Vec<Atom>,
}

/// Declared role of a predicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredKind {
    Input,
    Output,
    Internal,
}

#[derive(Debug, Clone)]
pub struct Declaration {
    pub arity: usize,
    pub kind: PredKind,
    /// Position of this declaration in the source, used for deterministic
    /// stratum numbering.
    pub order: usize,
}

/// A parsed program: declarations plus rules.
#[derive(Debug, Clone, Default)]
pub struct Program {
    pub declarations: BTreeMap<String, Declaration>,
    pub rules: Vec<Rule>,
}

impl Program {
    pub fn arity_of(&self, pred: &str) -> Option<usize> {
        self.declarations.get(pred).map(|d| d.arity)
    }

    /// Predicate names in declaration order.
    pub fn decl_order(&self) -> Vec<&str> {
        let mut names: Vec<(&str, usize)> = self
            .declarations
            .iter()
            .map(|(n, d)| (n.as_str(), d.order))
            .collect();
        names.sort_by_key(|&(_, o)| o);
        names.into_iter().map(|(n, _)| n).collect()
    }
}

/// A partial map from variables to interned constants. Bindings are
/// append-only; backtracking truncates the trail.
#[derive(Debug, Clone, Default)]
pub struct Substitution {
    trail: Vec<(String, ValueId)>,
}

impl Substitution {
    pub fn new() -> Self {
        Substitution { trail: Vec::new() }
    }

    pub fn get(&self, var: &str) -> Option<ValueId> {
        self.trail
            .iter()
            .rev()
            .find(|(v, _)| v == var)
            .map(|&(_, id)| id)
    }

    /// Binds `var`; the variable must not already be bound.
    pub fn bind(&mut self, var: &str, id: ValueId) {
        debug_assert!(self.get(var).is_none(), "rebinding {var}");
        self.trail.push((var.to_string(), id));
    }

    /// Current trail length; pass to [`Substitution::truncate`] to backtrack.
    pub fn mark(&self) -> usize {
        self.trail.len()
    }

    pub fn truncate(&mut self, mark: usize) {
        self.trail.truncate(mark);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, ValueId)> {
        self.trail.iter().map(|(v, id)| (v.as_str(), *id))
    }

    pub fn len(&self) -> usize {
        self.trail.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trail.is_empty()
    }
}

/// Replaces bound variables in `t` with constants; unbound variables and term
/// structure are left untouched.
pub fn apply(s: &Substitution, t: &Term) -> Term {
    match t {
        Term::Var(v) => match s.get(v) {
            Some(id) => Term::Const(id),
            None => t.clone(),
        },
        Term::Const(_) => t.clone(),
        Term::FunctorCall { name, args } => Term::FunctorCall {
            name: name.clone(),
            args: args.iter().map(|a| apply(s, a)).collect(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn intern_is_idempotent() {
        let i = Interner::new();
        assert_eq!(i.intern_int(7), i.intern_int(7));
    }

    #[test]
    fn intern_is_injective() {
        let i = Interner::new();
        assert_ne!(i.intern_int(7), i.intern_int(8));
    }

    #[test]
    fn ctor_interning_follows_argument_ids() {
        let i = Interner::new();
        let a = i.intern_int(1);
        let b = i.intern_int(1);
        assert_eq!(a, b);
        let c1 = i.intern_ctor("conj", &[a, b]);
        let c2 = i.intern_ctor("conj", &[a, b]);
        assert_eq!(c1, c2);
        assert_ne!(c1, i.intern_ctor("conj", &[a, i.intern_int(2)]));
    }

    #[test]
    fn resolve_round_trips() {
        let i = Interner::new();
        assert_eq!(i.resolve(i.intern_int(0)), Value::Int(0));
        let x = i.intern_int(4);
        let lit = Value::Ctor {
            symbol: "lit".into(),
            args: vec![x],
        };
        assert_eq!(i.resolve(i.intern(lit.clone())), lit);
    }

    #[test]
    fn canonical_order_matches_integer_order() {
        let i = Interner::new();
        // Intern out of numeric order on purpose.
        let big = i.intern_int(100);
        let neg = i.intern_int(-3);
        let mid = i.intern_int(5);
        assert_eq!(i.value_cmp(neg, mid), std::cmp::Ordering::Less);
        assert_eq!(i.value_cmp(mid, big), std::cmp::Ordering::Less);
        assert_eq!(i.value_cmp(big, big), std::cmp::Ordering::Equal);
    }

    #[test]
    fn apply_substitutes_and_preserves_structure() {
        let i = Interner::new();
        let zero = i.intern_int(0);
        let mut s = Substitution::new();
        s.bind("X", zero);
        assert_eq!(apply(&s, &Term::Var("X".into())), Term::Const(zero));
        // Identity on terms without bound vars.
        let t = Term::Var("Phi".into());
        assert_eq!(apply(&Substitution::new(), &t), t);
        // Congruence through functor calls.
        let call = Term::FunctorCall {
            name: "conj".into(),
            args: vec![Term::Var("X".into()), Term::Var("Phi".into())],
        };
        assert_eq!(
            apply(&s, &call),
            Term::FunctorCall {
                name: "conj".into(),
                args: vec![Term::Const(zero), Term::Var("Phi".into())],
            }
        );
    }

    /// Random value trees of depth <= 5 for the bijection property.
    fn arb_value_tree() -> impl Strategy<Value = TestValue> {
        let leaf = prop_oneof![(-64i64..64).prop_map(TestValue::Int)];
        leaf.prop_recursive(4, 64, 3, |inner| {
            (prop_oneof!["a", "bb", "conj"], prop::collection::vec(inner, 0..3))
                .prop_map(|(sym, args)| TestValue::Ctor(sym.to_string(), args))
        })
    }

    /// A structural stand-in so proptest can generate whole trees without ids.
    #[derive(Debug, Clone, PartialEq)]
    enum TestValue {
        Int(i64),
        Ctor(String, Vec<TestValue>),
    }

    fn intern_tree(i: &Interner, t: &TestValue) -> ValueId {
        match t {
            TestValue::Int(n) => i.intern_int(*n),
            TestValue::Ctor(sym, args) => {
                let ids: Vec<ValueId> = args.iter().map(|a| intern_tree(i, a)).collect();
                i.intern_ctor(sym, &ids)
            }
        }
    }

    proptest! {
        #[test]
        fn intern_bijection(a in arb_value_tree(), b in arb_value_tree()) {
            let i = Interner::new();
            let ia = intern_tree(&i, &a);
            let ib = intern_tree(&i, &b);
            prop_assert_eq!(ia == ib, a == b);
        }

        #[test]
        fn resolve_inverts_intern(t in arb_value_tree()) {
            let i = Interner::new();
            let id = intern_tree(&i, &t);
            // Re-interning the resolved value must give the same id back.
            let v = i.resolve(id);
            prop_assert_eq!(i.intern(v), id);
        }

        #[test]
        fn canon_order_is_total_and_consistent(a in arb_value_tree(), b in arb_value_tree()) {
            let i = Interner::new();
            let ia = intern_tree(&i, &a);
            let ib = intern_tree(&i, &b);
            let ord = i.value_cmp(ia, ib);
            prop_assert_eq!(ord == std::cmp::Ordering::Equal, ia == ib);
            prop_assert_eq!(ord, i.value_cmp(ib, ia).reverse());
        }
    }

    #[test]
    fn round_trip_over_random_values() {
        // Randomized round-trip oracle: intern 1000 pseudo-random values and
        // check resolve returns structurally equal values.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let i = Interner::new();
        let mut ids: Vec<(ValueId, Value)> = Vec::new();
        for _ in 0..1000 {
            let v = if ids.is_empty() || rng.gen_bool(0.6) {
                Value::Int(rng.gen_range(-1000..1000))
            } else {
                let k = rng.gen_range(0..=2usize.min(ids.len()));
                let args: Vec<ValueId> =
                    (0..k).map(|_| ids[rng.gen_range(0..ids.len())].0).collect();
                Value::Ctor {
                    symbol: ["lit", "conj", "pair"][rng.gen_range(0..3)].to_string(),
                    args,
                }
            };
            let id = i.intern(v.clone());
            ids.push((id, v));
        }
        for (id, v) in &ids {
            assert_eq!(&i.resolve(*id), v);
        }
    }
}
