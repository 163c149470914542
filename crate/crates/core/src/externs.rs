//! External functors and per-worker satisfiability oracle sessions.
//!
//! The registry maps functor names to pure functions over interned values,
//! plus the special `is_sat` entry that routes to the calling worker's
//! stateful oracle session. Formulas are interned terms built from
//! `true()`, `lit(var, sign)`, and `conj(f, f)`.
//!
//! Each session keeps a cache of the conjuncts currently asserted in its
//! backend and counts a cache miss for every conjunct of a call that is not
//! already cached. The mock backend decides satisfiability syntactically (a
//! formula is unsatisfiable iff it contains a complementary literal pair);
//! the optional SMT-LIB backend drives a solver subprocess and must agree
//! with the mock on this theory.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Arc;
use std::time::Duration;

use crate::error::EvalError;
use crate::ir::{Interner, Value, ValueId};

type PureFn = Arc<dyn Fn(&Interner, &[ValueId]) -> Result<ValueId, EvalError> + Send + Sync>;

enum FunctorImpl {
    Pure(PureFn),
    /// Routed to the evaluating worker's oracle session.
    Oracle,
}

/// Name, arity, and implementation of one external functor.
pub struct Functor {
    pub name: String,
    pub arity: usize,
    imp: FunctorImpl,
}

impl Functor {
    pub fn pure(
        name: &str,
        arity: usize,
        f: impl Fn(&Interner, &[ValueId]) -> Result<ValueId, EvalError> + Send + Sync + 'static,
    ) -> Self {
        Functor {
            name: name.to_string(),
            arity,
            imp: FunctorImpl::Pure(Arc::new(f)),
        }
    }
}

/// Read-only after startup; shared by all workers.
#[derive(Default)]
pub struct FunctorRegistry {
    functors: HashMap<String, Functor>,
}

impl FunctorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The registry used by the driver: formula constructors plus `is_sat`.
    pub fn with_builtins() -> Self {
        let mut r = Self::new();
        r.register(Functor::pure("true", 0, |i, _| Ok(i.intern_ctor("true", &[]))))
            .unwrap();
        r.register(Functor::pure("lit", 2, |i, args| {
            for (k, &a) in args.iter().enumerate() {
                match i.resolve(a) {
                    Value::Int(s) if k == 1 && !(s == 0 || s == 1) => {
                        return Err(EvalError::Functor {
                            name: "lit".into(),
                            message: format!("sign must be 0 or 1, got {s}"),
                        })
                    }
                    Value::Int(_) => {}
                    Value::Ctor { .. } => {
                        return Err(EvalError::Functor {
                            name: "lit".into(),
                            message: "arguments must be integers".into(),
                        })
                    }
                }
            }
            Ok(i.intern_ctor("lit", args))
        }))
        .unwrap();
        r.register(Functor::pure("conj", 2, |i, args| {
            Ok(i.intern_ctor("conj", args))
        }))
        .unwrap();
        r.register(Functor {
            name: "is_sat".to_string(),
            arity: 1,
            imp: FunctorImpl::Oracle,
        })
        .unwrap();
        r
    }

    /// Registers a functor; the name must be unused.
    pub fn register(&mut self, f: Functor) -> Result<(), EvalError> {
        if self.functors.contains_key(&f.name) {
            return Err(EvalError::Functor {
                name: f.name.clone(),
                message: "already registered".into(),
            });
        }
        self.functors.insert(f.name.clone(), f);
        Ok(())
    }

    pub fn arity_map(&self) -> HashMap<String, usize> {
        self.functors
            .iter()
            .map(|(n, f)| (n.clone(), f.arity))
            .collect()
    }

    /// Evaluates functor `name`; `is_sat` goes through `session`.
    pub fn call(
        &self,
        name: &str,
        args: &[ValueId],
        interner: &Interner,
        session: &mut OracleSession,
    ) -> Result<ValueId, EvalError> {
        let f = self.functors.get(name).ok_or_else(|| EvalError::Functor {
            name: name.to_string(),
            message: "not registered".into(),
        })?;
        if args.len() != f.arity {
            return Err(EvalError::Functor {
                name: name.to_string(),
                message: format!("expects {} argument(s), got {}", f.arity, args.len()),
            });
        }
        match &f.imp {
            FunctorImpl::Pure(p) => p(interner, args),
            FunctorImpl::Oracle => session.is_sat(args[0], interner),
        }
    }
}

/// A signed propositional literal: variable index plus sign.
pub type Literal = (i64, bool);

/// Flattens a formula value into its multiset of literals (as a set; the
/// theory is idempotent conjunction). `true()` flattens to the empty set.
pub fn flatten(id: ValueId, interner: &Interner) -> Result<BTreeSet<Literal>, EvalError> {
    let mut out = BTreeSet::new();
    flatten_into(id, interner, &mut out)?;
    Ok(out)
}

fn flatten_into(
    id: ValueId,
    interner: &Interner,
    out: &mut BTreeSet<Literal>,
) -> Result<(), EvalError> {
    match interner.resolve(id) {
        Value::Ctor { symbol, args } => match (symbol.as_str(), args.len()) {
            ("true", 0) => Ok(()),
            ("lit", 2) => {
                let var = match interner.resolve(args[0]) {
                    Value::Int(v) => v,
                    _ => return Err(malformed(id, interner)),
                };
                let sign = match interner.resolve(args[1]) {
                    Value::Int(0) => false,
                    Value::Int(1) => true,
                    _ => return Err(malformed(id, interner)),
                };
                out.insert((var, sign));
                Ok(())
            }
            ("conj", 2) => {
                flatten_into(args[0], interner, out)?;
                flatten_into(args[1], interner, out)
            }
            _ => Err(malformed(id, interner)),
        },
        Value::Int(_) => Err(malformed(id, interner)),
    }
}

fn malformed(id: ValueId, interner: &Interner) -> EvalError {
    EvalError::Oracle(format!("malformed formula value `{}`", interner.render(id)))
}

/// What to do with the conjunct cache after each call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CachePolicy {
    /// Cache becomes exactly the conjuncts of the most recent call.
    #[default]
    Replace,
    /// Cache accumulates every conjunct ever asserted (unbounded).
    Union,
}

/// Shared oracle configuration.
#[derive(Debug, Clone, Default)]
pub struct OracleConfig {
    pub backend: BackendKind,
    pub cache_policy: CachePolicy,
    /// Artificial cost per cache miss, letting small runs exhibit a
    /// solver-dominated regime.
    pub latency_us: u64,
}

#[derive(Debug, Clone, Default)]
pub enum BackendKind {
    #[default]
    Mock,
    /// Command line for an SMT-LIB v2 solver reading from stdin, e.g.
    /// `z3 -in`.
    Smtlib(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SatResult {
    Sat,
    Unsat,
    Unknown,
}

/// Per-worker stateful satisfiability session. Never shared between workers.
pub struct OracleSession {
    pub worker: usize,
    config: OracleConfig,
    cache: BTreeSet<Literal>,
    pub calls: u64,
    pub cache_misses: u64,
    /// Per-call record: formula id and misses charged, in call order.
    pub call_log: Vec<(ValueId, u64)>,
    backend: Backend,
}

enum Backend {
    Mock,
    Smtlib(SmtProcess),
}

impl OracleSession {
    pub fn new(worker: usize, config: OracleConfig) -> Result<Self, EvalError> {
        let backend = match &config.backend {
            BackendKind::Mock => Backend::Mock,
            BackendKind::Smtlib(cmd) => Backend::Smtlib(SmtProcess::spawn(cmd)?),
        };
        Ok(OracleSession {
            worker,
            config,
            cache: BTreeSet::new(),
            calls: 0,
            cache_misses: 0,
            call_log: Vec::new(),
            backend,
        })
    }

    /// Checks satisfiability of the formula `f`, returning interned `1` or
    /// `0`. Updates call and miss counters and the conjunct cache.
    pub fn is_sat(&mut self, f: ValueId, interner: &Interner) -> Result<ValueId, EvalError> {
        let lits = flatten(f, interner)?;
        let misses = lits.difference(&self.cache).count() as u64;
        self.calls += 1;
        self.cache_misses += misses;
        self.call_log.push((f, misses));
        if self.config.latency_us > 0 && misses > 0 {
            std::thread::sleep(Duration::from_micros(self.config.latency_us * misses));
        }
        let result = match &mut self.backend {
            Backend::Mock => {
                if mock_is_sat(&lits) {
                    SatResult::Sat
                } else {
                    SatResult::Unsat
                }
            }
            Backend::Smtlib(proc) => proc.check(&lits, &self.cache)?,
        };
        match self.config.cache_policy {
            CachePolicy::Replace => self.cache = lits,
            CachePolicy::Union => self.cache.extend(lits),
        }
        match result {
            SatResult::Sat => Ok(interner.intern_int(1)),
            SatResult::Unsat => Ok(interner.intern_int(0)),
            SatResult::Unknown => Err(EvalError::Oracle(
                "solver returned unknown".to_string(),
            )),
        }
    }

    /// Raw three-valued check against the configured backend, bypassing the
    /// 1/0 interning. Counters update as in [`OracleSession::is_sat`].
    pub fn check_sat(
        &mut self,
        f: ValueId,
        interner: &Interner,
    ) -> Result<SatResult, EvalError> {
        let lits = flatten(f, interner)?;
        let misses = lits.difference(&self.cache).count() as u64;
        self.calls += 1;
        self.cache_misses += misses;
        self.call_log.push((f, misses));
        let result = match &mut self.backend {
            Backend::Mock => {
                if mock_is_sat(&lits) {
                    SatResult::Sat
                } else {
                    SatResult::Unsat
                }
            }
            Backend::Smtlib(proc) => proc.check(&lits, &self.cache)?,
        };
        match self.config.cache_policy {
            CachePolicy::Replace => self.cache = lits,
            CachePolicy::Union => self.cache.extend(lits),
        }
        Ok(result)
    }
}

/// Satisfiable iff no variable occurs with both signs.
pub fn mock_is_sat(lits: &BTreeSet<Literal>) -> bool {
    lits.iter().all(|&(v, s)| !lits.contains(&(v, !s)))
}

/// Line-oriented SMT-LIB v2 session over a solver subprocess.
struct SmtProcess {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    declared: BTreeSet<i64>,
}

impl SmtProcess {
    fn spawn(cmdline: &str) -> Result<Self, EvalError> {
        let mut parts = cmdline.split_whitespace();
        let bin = parts.next().ok_or_else(|| {
            EvalError::Oracle("empty solver command".to_string())
        })?;
        let mut child = Command::new(bin)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| EvalError::Oracle(format!("cannot spawn solver `{cmdline}`: {e}")))?;
        let stdin = child.stdin.take().unwrap();
        let stdout = BufReader::new(child.stdout.take().unwrap());
        let mut p = SmtProcess {
            child,
            stdin,
            stdout,
            declared: BTreeSet::new(),
        };
        p.send("(set-logic QF_UF)")?;
        Ok(p)
    }

    fn send(&mut self, line: &str) -> Result<(), EvalError> {
        writeln!(self.stdin, "{line}")
            .and_then(|_| self.stdin.flush())
            .map_err(|e| EvalError::Oracle(format!("solver write failed: {e}")))
    }

    fn var_name(v: i64) -> String {
        if v < 0 {
            format!("vm{}", -(v as i128))
        } else {
            format!("v{v}")
        }
    }

    fn assert_lit(&mut self, (v, s): Literal) -> Result<(), EvalError> {
        if self.declared.insert(v) {
            self.send(&format!("(declare-const {} Bool)", Self::var_name(v)))?;
        }
        let name = Self::var_name(v);
        if s {
            self.send(&format!("(assert {name})"))
        } else {
            self.send(&format!("(assert (not {name}))"))
        }
    }

    /// Asserts the conjuncts of the call and issues `check-sat`. When the
    /// cached assertion set is not a subset of the new one the whole solver
    /// state is reset first.
    fn check(
        &mut self,
        lits: &BTreeSet<Literal>,
        cached: &BTreeSet<Literal>,
    ) -> Result<SatResult, EvalError> {
        if cached.is_subset(lits) {
            for &l in lits.difference(cached) {
                self.assert_lit(l)?;
            }
        } else {
            self.send("(reset)")?;
            self.declared.clear();
            self.send("(set-logic QF_UF)")?;
            for &l in lits {
                self.assert_lit(l)?;
            }
        }
        self.send("(check-sat)")?;
        let mut line = String::new();
        self.stdout
            .read_line(&mut line)
            .map_err(|e| EvalError::Oracle(format!("solver read failed: {e}")))?;
        match line.trim() {
            "sat" => Ok(SatResult::Sat),
            "unsat" => Ok(SatResult::Unsat),
            "unknown" => Ok(SatResult::Unknown),
            other => Err(EvalError::Oracle(format!(
                "solver protocol desync: unexpected reply `{other}`"
            ))),
        }
    }
}

impl Drop for SmtProcess {
    fn drop(&mut self) {
        let _ = self.send("(exit)");
        let _ = self.child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session() -> OracleSession {
        OracleSession::new(0, OracleConfig::default()).unwrap()
    }

    fn lit(i: &Interner, v: i64, s: i64) -> ValueId {
        let args = [i.intern_int(v), i.intern_int(s)];
        i.intern_ctor("lit", &args)
    }

    fn conj(i: &Interner, a: ValueId, b: ValueId) -> ValueId {
        i.intern_ctor("conj", &[a, b])
    }

    #[test]
    fn register_then_call_pure_functor() {
        let mut r = FunctorRegistry::new();
        r.register(Functor::pure("inc", 1, |i, args| match i.resolve(args[0]) {
            Value::Int(n) => Ok(i.intern_int(n + 1)),
            _ => Err(EvalError::Functor {
                name: "inc".into(),
                message: "expects an integer".into(),
            }),
        }))
        .unwrap();
        let i = Interner::new();
        let mut s = session();
        let forty_one = i.intern_int(41);
        assert_eq!(
            r.call("inc", &[forty_one], &i, &mut s).unwrap(),
            i.intern_int(42)
        );
    }

    #[test]
    fn duplicate_registration_fails() {
        let mut r = FunctorRegistry::new();
        r.register(Functor::pure("inc", 1, |i, a| Ok(a[0]).map(|x| { let _ = i; x })))
            .unwrap();
        assert!(r
            .register(Functor::pure("inc", 1, |_, a| Ok(a[0])))
            .is_err());
    }

    #[test]
    fn conj_builds_interned_values() {
        let r = FunctorRegistry::with_builtins();
        let i = Interner::new();
        let mut s = session();
        let t = r.call("true", &[], &i, &mut s).unwrap();
        let l = lit(&i, 3, 1);
        let c = r.call("conj", &[l, t], &i, &mut s).unwrap();
        assert_eq!(c, conj(&i, l, t));
    }

    #[test]
    fn complementary_pair_is_unsat() {
        let i = Interner::new();
        let mut s = session();
        let f = conj(&i, lit(&i, 1, 1), lit(&i, 1, 0));
        assert_eq!(s.is_sat(f, &i).unwrap(), i.intern_int(0));
    }

    #[test]
    fn true_is_sat_with_zero_misses() {
        let i = Interner::new();
        let mut s = session();
        let t = i.intern_ctor("true", &[]);
        assert_eq!(s.is_sat(t, &i).unwrap(), i.intern_int(1));
        assert_eq!(s.calls, 1);
        assert_eq!(s.cache_misses, 0);
    }

    #[test]
    fn miss_profile_depends_on_call_order() {
        let i = Interner::new();
        let a = lit(&i, 0, 1);
        let ab = conj(&i, a, lit(&i, 1, 1));

        let mut s = session();
        s.is_sat(a, &i).unwrap();
        s.is_sat(ab, &i).unwrap();
        let profile: Vec<u64> = s.call_log.iter().map(|&(_, m)| m).collect();
        assert_eq!(profile, vec![1, 1]);

        let mut s = session();
        s.is_sat(ab, &i).unwrap();
        s.is_sat(a, &i).unwrap();
        let profile: Vec<u64> = s.call_log.iter().map(|&(_, m)| m).collect();
        assert_eq!(profile, vec![2, 0]);
        // Totals match a brute replay of the trace either way.
        assert_eq!(s.cache_misses, 2);
    }

    #[test]
    fn repeated_identical_call_costs_nothing() {
        let i = Interner::new();
        let mut s = session();
        let f = conj(&i, lit(&i, 4, 1), lit(&i, 5, 0));
        s.is_sat(f, &i).unwrap();
        let before = s.cache_misses;
        s.is_sat(f, &i).unwrap();
        assert_eq!(s.cache_misses, before);
    }

    #[test]
    fn union_policy_never_evicts() {
        let i = Interner::new();
        let mut s = OracleSession::new(
            0,
            OracleConfig {
                cache_policy: CachePolicy::Union,
                ..Default::default()
            },
        )
        .unwrap();
        let a = lit(&i, 0, 1);
        let b = lit(&i, 1, 1);
        s.is_sat(a, &i).unwrap();
        s.is_sat(b, &i).unwrap();
        s.is_sat(a, &i).unwrap(); // still cached under union
        let profile: Vec<u64> = s.call_log.iter().map(|&(_, m)| m).collect();
        assert_eq!(profile, vec![1, 1, 0]);
    }

    #[test]
    fn misses_never_exceed_flatten_size() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let i = Interner::new();
        let mut s = session();
        for _ in 0..200 {
            let mut f = i.intern_ctor("true", &[]);
            let n = rng.gen_range(0..6);
            for _ in 0..n {
                f = conj(&i, f, lit(&i, rng.gen_range(0..8), rng.gen_range(0..2)));
            }
            let size = flatten(f, &i).unwrap().len() as u64;
            let before = s.cache_misses;
            s.is_sat(f, &i).unwrap();
            assert!(s.cache_misses - before <= size);
        }
    }

    #[test]
    fn malformed_formula_is_diagnosed() {
        let i = Interner::new();
        let mut s = session();
        let bogus = i.intern_int(7);
        assert!(matches!(s.is_sat(bogus, &i), Err(EvalError::Oracle(_))));
        let wrong_ctor = i.intern_ctor("pair", &[]);
        assert!(s.is_sat(wrong_ctor, &i).is_err());
    }

    /// Mock satisfiability agrees with brute-force assignment enumeration.
    #[test]
    fn mock_matches_brute_force_enumeration() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let i = Interner::new();
        for _ in 0..300 {
            let n_vars = rng.gen_range(1..=8i64);
            let mut f = i.intern_ctor("true", &[]);
            for _ in 0..rng.gen_range(0..10) {
                f = conj(&i, f, lit(&i, rng.gen_range(0..n_vars), rng.gen_range(0..2)));
            }
            let lits = flatten(f, &i).unwrap();
            let brute = (0..(1u32 << n_vars)).any(|assignment| {
                lits.iter().all(|&(v, s)| {
                    let val = assignment & (1 << v) != 0;
                    val == s
                })
            });
            assert_eq!(mock_is_sat(&lits), brute, "formula {}", i.render(f));
        }
    }

    /// Optional backend: agreement with the mock oracle on random formulas.
    /// Skipped when no solver is available in the environment.
    #[test]
    fn smtlib_backend_agrees_with_mock() {
        let solver = std::env::var("EAGERLOG_SMT_SOLVER").ok().or_else(|| {
            ["z3", "cvc5"].iter().find_map(|bin| {
                let found = Command::new("which")
                    .arg(bin)
                    .output()
                    .map(|o| o.status.success())
                    .unwrap_or(false);
                found.then(|| format!("{bin} {}", if *bin == "z3" { "-in" } else { "--incremental -" }))
            })
        });
        let Some(cmd) = solver else {
            eprintln!("skipping: no SMT solver on PATH (set EAGERLOG_SMT_SOLVER to enable)");
            return;
        };
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let i = Interner::new();
        let mut smt = OracleSession::new(
            0,
            OracleConfig {
                backend: BackendKind::Smtlib(cmd),
                ..Default::default()
            },
        )
        .unwrap();
        for _ in 0..500 {
            let mut f = i.intern_ctor("true", &[]);
            for _ in 0..rng.gen_range(0..8) {
                f = conj(&i, f, lit(&i, rng.gen_range(0..10), rng.gen_range(0..2)));
            }
            let expected = if mock_is_sat(&flatten(f, &i).unwrap()) {
                SatResult::Sat
            } else {
                SatResult::Unsat
            };
            assert_eq!(smt.check_sat(f, &i).unwrap(), expected);
        }
    }
}
