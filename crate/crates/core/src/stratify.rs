//! Predicate dependency analysis: SCC condensation, stratum ordering, and
//! rejection of negation inside recursion.

use std::collections::{BTreeSet, HashMap, HashSet};

use petgraph::graph::{DiGraph, NodeIndex};

use crate::error::StratificationError;
use crate::ir::{Atom, Program};

/// One evaluation unit: a set of mutually recursive predicates plus the rules
/// defining them. Strata are ordered so every body predicate lives in the
/// same or a lower stratum and every negated predicate strictly lower.
#[derive(Debug, Clone)]
pub struct Stratum {
    pub index: usize,
    pub preds: BTreeSet<String>,
    /// Rule ids (indexes into `Program::rules`) whose head is in `preds`.
    pub rules: Vec<usize>,
    /// Predicates defined by rules in this stratum that are on a dependency
    /// cycle within it (or directly self-recursive).
    pub recursive_preds: BTreeSet<String>,
}

/// Splits the program into ordered strata.
///
/// The strata are the topological order of the SCC condensation of the
/// dependency graph (an edge `q -> p` for every rule with head `p` and body
/// predicate `q`, positive or negative). Components without rules (pure
/// input predicates) are not emitted. Ties in the topological order are
/// broken by the lowest declaration index in the component, so numbering is
/// deterministic.
pub fn stratify(program: &Program) -> Result<Vec<Stratum>, StratificationError> {
    let decl_order = program.decl_order();
    let pred_index: HashMap<&str, usize> = decl_order
        .iter()
        .enumerate()
        .map(|(i, &n)| (n, i))
        .collect();

    let mut graph: DiGraph<(), ()> = DiGraph::new();
    let nodes: Vec<NodeIndex> = decl_order.iter().map(|_| graph.add_node(())).collect();

    // (body pred, head pred, rule id) for every negative edge, checked after
    // condensation.
    let mut neg_edges: Vec<(usize, usize, usize)> = Vec::new();
    for rule in &program.rules {
        let head = pred_index[rule.head_pred.as_str()];
        for atom in &rule.body {
            match atom {
                Atom::Pos { pred, .. } => {
                    let body = pred_index[pred.as_str()];
                    graph.update_edge(nodes[body], nodes[head], ());
                }
                Atom::Neg { pred, .. } => {
                    let body = pred_index[pred.as_str()];
                    graph.update_edge(nodes[body], nodes[head], ());
                    neg_edges.push((body, head, rule.id));
                }
                Atom::Eq { .. } | Atom::Neq { .. } => {}
            }
        }
    }

    // tarjan_scc returns components; we only rely on membership and build the
    // topological order ourselves for deterministic tie-breaking.
    let sccs = petgraph::algo::tarjan_scc(&graph);
    let mut comp_of: Vec<usize> = vec![0; decl_order.len()];
    for (ci, comp) in sccs.iter().enumerate() {
        for &n in comp {
            comp_of[n.index()] = ci;
        }
    }

    for &(body, head, rule) in &neg_edges {
        if comp_of[body] == comp_of[head] {
            return Err(StratificationError {
                rule,
                head: decl_order[head].to_string(),
                negated: decl_order[body].to_string(),
            });
        }
    }

    // Condensation edges between distinct components.
    let n_comps = sccs.len();
    let mut succs: Vec<HashSet<usize>> = vec![HashSet::new(); n_comps];
    let mut indegree: Vec<usize> = vec![0; n_comps];
    for e in graph.edge_indices() {
        let (a, b) = graph.edge_endpoints(e).unwrap();
        let (ca, cb) = (comp_of[a.index()], comp_of[b.index()]);
        if ca != cb && succs[ca].insert(cb) {
            indegree[cb] += 1;
        }
    }

    // Kahn's algorithm; ready components ordered by their minimum declaration
    // index.
    let comp_min_decl: Vec<usize> = sccs
        .iter()
        .map(|comp| comp.iter().map(|n| n.index()).min().unwrap())
        .collect();
    let mut ready: BTreeSet<(usize, usize)> = (0..n_comps)
        .filter(|&c| indegree[c] == 0)
        .map(|c| (comp_min_decl[c], c))
        .collect();
    let mut topo: Vec<usize> = Vec::with_capacity(n_comps);
    while let Some(&(key, c)) = ready.iter().next() {
        ready.remove(&(key, c));
        topo.push(c);
        for &s in &succs[c] {
            indegree[s] -= 1;
            if indegree[s] == 0 {
                ready.insert((comp_min_decl[s], s));
            }
        }
    }
    debug_assert_eq!(topo.len(), n_comps);

    // Self-loop lookup for singleton components.
    let mut self_loop: HashSet<usize> = HashSet::new();
    for e in graph.edge_indices() {
        let (a, b) = graph.edge_endpoints(e).unwrap();
        if a == b {
            self_loop.insert(a.index());
        }
    }

    let mut rules_by_head: HashMap<&str, Vec<usize>> = HashMap::new();
    for rule in &program.rules {
        rules_by_head
            .entry(rule.head_pred.as_str())
            .or_default()
            .push(rule.id);
    }

    let mut strata = Vec::new();
    for c in topo {
        let comp = &sccs[c];
        let preds: BTreeSet<String> = comp
            .iter()
            .map(|n| decl_order[n.index()].to_string())
            .collect();
        let mut rules: Vec<usize> = preds
            .iter()
            .flat_map(|p| rules_by_head.get(p.as_str()).cloned().unwrap_or_default())
            .collect();
        rules.sort_unstable();
        if rules.is_empty() {
            continue;
        }
        let recursive_preds: BTreeSet<String> = if comp.len() > 1 {
            preds.clone()
        } else {
            let n = comp[0].index();
            if self_loop.contains(&n) {
                preds.clone()
            } else {
                BTreeSet::new()
            }
        };
        strata.push(Stratum {
            index: strata.len(),
            preds,
            rules,
            recursive_preds,
        });
    }
    Ok(strata)
}
