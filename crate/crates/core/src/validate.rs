//! Rule validation: arity checks and the left-to-right safety rule.
//!
//! Scanning body atoms in written order, a variable becomes bound the first
//! time it appears as a direct argument of a positive atom or on the left of
//! an `=` whose right side is fully bound. Every variable occurring in the
//! head, in a negated atom, on either side of `!=`, or inside a functor-call
//! argument must already be bound at its point of use.

use std::collections::{BTreeSet, HashMap};

use crate::error::Diagnostic;
use crate::ir::{Atom, PredKind, Program, Rule, Term};
use crate::stratify::Stratum;

/// True when every variable inside `t` is in `bound`.
fn term_fully_bound(t: &Term, bound: &BTreeSet<String>) -> bool {
    let mut vs = Vec::new();
    t.vars(&mut vs);
    vs.iter().all(|v| bound.contains(*v))
}

/// Checks arity and safety for every rule. An empty result means the program
/// is well-formed. Diagnostics carry the rule index and the offending
/// variable or atom.
pub fn validate(program: &Program, functor_arities: &HashMap<String, usize>) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for rule in &program.rules {
        validate_rule(program, rule, functor_arities, &mut out);
    }
    out
}

fn check_functor_arities(
    rule: &Rule,
    t: &Term,
    functor_arities: &HashMap<String, usize>,
    out: &mut Vec<Diagnostic>,
) {
    if let Term::FunctorCall { name, args } = t {
        match functor_arities.get(name) {
            None => out.push(Diagnostic {
                rule: Some(rule.id),
                message: format!("unknown functor `@{name}`"),
            }),
            Some(&a) if a != args.len() => out.push(Diagnostic {
                rule: Some(rule.id),
                message: format!(
                    "functor `@{name}` expects {a} argument(s), got {}",
                    args.len()
                ),
            }),
            _ => {}
        }
        for a in args {
            check_functor_arities(rule, a, functor_arities, out);
        }
    }
}

fn validate_rule(
    program: &Program,
    rule: &Rule,
    functor_arities: &HashMap<String, usize>,
    out: &mut Vec<Diagnostic>,
) {
    let before = out.len();

    // Arity and declaration checks.
    let check_pred = |pred: &str, args: &[Term], out: &mut Vec<Diagnostic>| {
        match program.arity_of(pred) {
            None => out.push(Diagnostic {
                rule: Some(rule.id),
                message: format!("undeclared predicate `{pred}`"),
            }),
            Some(a) if a != args.len() => out.push(Diagnostic {
                rule: Some(rule.id),
                message: format!("`{pred}` expects {a} argument(s), got {}", args.len()),
            }),
            _ => {}
        }
    };
    check_pred(&rule.head_pred, &rule.head_args, out);
    if let Some(decl) = program.declarations.get(&rule.head_pred) {
        if decl.kind == PredKind::Input {
            out.push(Diagnostic {
                rule: Some(rule.id),
                message: format!("input predicate `{}` may not appear in a rule head", rule.head_pred),
            });
        }
    }
    for atom in &rule.body {
        match atom {
            Atom::Pos { pred, args } | Atom::Neg { pred, args } => {
                check_pred(pred, args, out);
                for t in args {
                    check_functor_arities(rule, t, functor_arities, out);
                }
            }
            Atom::Eq { lhs, rhs } | Atom::Neq { lhs, rhs } => {
                check_functor_arities(rule, lhs, functor_arities, out);
                check_functor_arities(rule, rhs, functor_arities, out);
            }
        }
    }
    for t in &rule.head_args {
        check_functor_arities(rule, t, functor_arities, out);
    }
    if out.len() != before {
        // Arity problems make the binding walk unreliable; stop here.
        return;
    }

    // Left-to-right binding walk.
    let mut bound: BTreeSet<String> = BTreeSet::new();
    let unsafe_var = |rule_id: usize, var: &str, ctx: &str, out: &mut Vec<Diagnostic>| {
        out.push(Diagnostic {
            rule: Some(rule_id),
            message: format!("unsafe: variable `{var}` unbound at {ctx}"),
        });
    };
    for atom in &rule.body {
        match atom {
            Atom::Pos { pred, args } => {
                // Variables nested inside functor-call arguments must be
                // bound beforehand; direct variable arguments become bound.
                for t in args {
                    match t {
                        Term::Var(_) | Term::Const(_) => {}
                        Term::FunctorCall { .. } => {
                            let mut vs = Vec::new();
                            t.vars(&mut vs);
                            for v in vs {
                                if !bound.contains(v) {
                                    unsafe_var(rule.id, v, &format!("functor argument of `{pred}`"), out);
                                }
                            }
                        }
                    }
                }
                for t in args {
                    if let Term::Var(v) = t {
                        bound.insert(v.clone());
                    }
                }
            }
            Atom::Neg { pred, args } => {
                for t in args {
                    let mut vs = Vec::new();
                    t.vars(&mut vs);
                    for v in vs {
                        if !bound.contains(v) {
                            unsafe_var(rule.id, v, &format!("negated atom `!{pred}`"), out);
                        }
                    }
                }
            }
            Atom::Eq { lhs, rhs } => {
                if let Term::Var(v) = lhs {
                    if !bound.contains(v) {
                        if term_fully_bound(rhs, &bound) {
                            bound.insert(v.clone());
                        } else {
                            let mut vs = Vec::new();
                            rhs.vars(&mut vs);
                            for rv in vs {
                                if !bound.contains(rv) {
                                    unsafe_var(rule.id, rv, "right side of `=`", out);
                                }
                            }
                        }
                        continue;
                    }
                }
                for (t, side) in [(lhs, "left"), (rhs, "right")] {
                    let mut vs = Vec::new();
                    t.vars(&mut vs);
                    for v in vs {
                        if !bound.contains(v) {
                            unsafe_var(rule.id, v, &format!("{side} side of `=`"), out);
                        }
                    }
                }
            }
            Atom::Neq { lhs, rhs } => {
                for t in [lhs, rhs] {
                    let mut vs = Vec::new();
                    t.vars(&mut vs);
                    for v in vs {
                        if !bound.contains(v) {
                            unsafe_var(rule.id, v, "`!=`", out);
                        }
                    }
                }
            }
        }
    }
    for t in &rule.head_args {
        let mut vs = Vec::new();
        t.vars(&mut vs);
        for v in vs {
            if !bound.contains(v) {
                unsafe_var(rule.id, v, "head", out);
            }
        }
    }
}

/// Both engines rotate recursive body atoms to the front (δ-first orders and
/// specialization). Rotation preserves left-to-right safety except for the
/// rotated atom itself: functor-call arguments in a recursive body atom would
/// lose their binders, so they must be variable-free.
pub fn check_rotation_safety(program: &Program, strata: &[Stratum]) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for stratum in strata {
        for &rule_id in &stratum.rules {
            let rule = &program.rules[rule_id];
            for atom in &rule.body {
                if let Atom::Pos { pred, args } = atom {
                    if !stratum.recursive_preds.contains(pred) {
                        continue;
                    }
                    for t in args {
                        if matches!(t, Term::FunctorCall { .. }) && !t.is_ground() {
                            out.push(Diagnostic {
                                rule: Some(rule.id),
                                message: format!(
                                    "recursive atom `{pred}` has a functor-call argument with variables; \
                                     it cannot be evaluated first"
                                ),
                            });
                        }
                    }
                }
            }
        }
    }
    out
}
