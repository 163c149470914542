//! Benchmark instance generator: reachability over a complete b-ary tree
//! whose edges carry propositional literals, with path satisfiability gating
//! each step. A seeded fraction of edges is labeled with the complement of a
//! literal already on the path from the root, pruning that subtree.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct TreeGenConfig {
    pub depth: u32,
    pub branching: u32,
    /// Probability that a non-root-level edge contradicts an ancestor label.
    pub contradiction_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TreeInstance {
    /// Program text (`.dl` dialect).
    pub program: String,
    /// `edge.facts` rows: parent, child, literal variable, sign.
    pub edge_facts: String,
    pub node_count: u64,
    /// Edge labels in (parent, child) order, as (var, sign) pairs.
    pub labels: Vec<(u64, u64, i64, i64)>,
}

/// The fixed program evaluated over generated trees: the root is reachable
/// under the empty path condition; a child is reachable when its parent is
/// and the extended path condition stays satisfiable.
pub const TREE_REACH_PROGRAM: &str = "\
.decl edge(4) input
.decl reach(2) output
reach(0, T) :- T = @true().
reach(Y, F) :- reach(X, P), edge(X, Y, V, S), L = @lit(V, S), F = @conj(P, L), 1 = @is_sat(F).
";

pub fn tree_reach(config: &TreeGenConfig) -> TreeInstance {
    assert!(config.depth >= 1, "depth must be at least 1");
    assert!(config.branching >= 1, "branching must be at least 1");
    assert!(
        (0.0..=1.0).contains(&config.contradiction_rate),
        "contradiction rate must be within [0, 1]"
    );
    let b = config.branching as u64;
    let node_count: u64 = if b == 1 {
        config.depth as u64 + 1
    } else {
        (b.pow(config.depth + 1) - 1) / (b - 1)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // labels[child] = (var, sign); parent of node n is (n-1)/b.
    let mut labels: Vec<(i64, i64)> = vec![(0, 0); node_count as usize];
    let mut rows = String::new();
    let mut out_labels = Vec::new();
    let mut fresh: i64 = 0;
    for parent in 0..node_count {
        for k in 0..b {
            let child = parent * b + k + 1;
            if child >= node_count {
                break;
            }
            let ancestors: Vec<(i64, i64)> = {
                let mut path = Vec::new();
                let mut n = parent;
                while n != 0 {
                    path.push(labels[n as usize]);
                    n = (n - 1) / b;
                }
                path
            };
            let (var, sign) = if !ancestors.is_empty()
                && rng.gen_bool(config.contradiction_rate)
            {
                let (v, s) = ancestors[rng.gen_range(0..ancestors.len())];
                (v, 1 - s)
            } else {
                let v = fresh;
                fresh += 1;
                (v, 1)
            };
            labels[child as usize] = (var, sign);
            rows.push_str(&format!("{parent}\t{child}\t{var}\t{sign}\n"));
            out_labels.push((parent, child, var, sign));
        }
    }
    TreeInstance {
        program: TREE_REACH_PROGRAM.to_string(),
        edge_facts: rows,
        node_count,
        labels: out_labels,
    }
}
