//! Tanner graphs and girth.

use std::collections::VecDeque;

use super::Gf2Matrix;

/// Bipartite graph of a parity-check matrix.
///
/// Edges are numbered check by check: the edges of check `i` are
/// `check_edges(i)`, and `edge_var[e]` is the variable at the other end.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TannerGraph {
    d: usize,
    check_vars: Vec<Vec<usize>>,
    var_checks: Vec<Vec<usize>>,
    check_offsets: Vec<usize>,
    edge_check: Vec<usize>,
    edge_var: Vec<usize>,
    var_edges: Vec<Vec<usize>>,
    girth: Option<usize>,
}

impl TannerGraph {
    pub fn from_parity(h: &Gf2Matrix) -> Self {
        let d = h.ncols();
        let check_vars: Vec<Vec<usize>> = (0..h.nrows()).map(|i| h.row_support(i)).collect();
        let mut var_checks = vec![Vec::new(); d];
        let mut var_edges = vec![Vec::new(); d];
        let mut check_offsets = Vec::with_capacity(check_vars.len() + 1);
        let mut edge_check = Vec::new();
        let mut edge_var = Vec::new();
        check_offsets.push(0);
        for (i, vars) in check_vars.iter().enumerate() {
            for &j in vars {
                var_checks[j].push(i);
                var_edges[j].push(edge_var.len());
                edge_check.push(i);
                edge_var.push(j);
            }
            check_offsets.push(edge_var.len());
        }
        let mut g = Self { d, check_vars, var_checks, check_offsets, edge_check, edge_var, var_edges, girth: None };
        g.girth = g.compute_girth();
        g
    }

    pub fn num_vars(&self) -> usize {
        self.d
    }

    pub fn num_checks(&self) -> usize {
        self.check_vars.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_var.len()
    }

    /// Variables adjacent to check `i`.
    pub fn check_neighbors(&self, i: usize) -> &[usize] {
        &self.check_vars[i]
    }

    /// Checks adjacent to variable `j`.
    pub fn var_neighbors(&self, j: usize) -> &[usize] {
        &self.var_checks[j]
    }

    pub fn check_edges(&self, i: usize) -> std::ops::Range<usize> {
        self.check_offsets[i]..self.check_offsets[i + 1]
    }

    pub fn var_edges(&self, j: usize) -> &[usize] {
        &self.var_edges[j]
    }

    pub fn edge_var(&self, e: usize) -> usize {
        self.edge_var[e]
    }

    pub fn edge_check(&self, e: usize) -> usize {
        self.edge_check[e]
    }

    /// Length of the shortest cycle, `None` for a forest.
    pub fn girth(&self) -> Option<usize> {
        self.girth
    }

    // Node ids: variables 0..d, checks d..d+m.
    fn neighbors(&self, node: usize) -> &[usize] {
        if node < self.d {
            &self.var_checks[node]
        } else {
            &self.check_vars[node - self.d]
        }
    }

    fn node_id(&self, node: usize, is_var: bool) -> usize {
        if is_var {
            node
        } else {
            node + self.d
        }
    }

    /// BFS from every node; the shortest cycle through the root is found
    /// when two BFS branches meet.
    fn compute_girth(&self) -> Option<usize> {
        let n = self.d + self.check_vars.len();
        let mut best = usize::MAX;
        let mut dist = vec![usize::MAX; n];
        let mut parent = vec![usize::MAX; n];
        let mut queue = VecDeque::new();
        for root in 0..n {
            dist.fill(usize::MAX);
            dist[root] = 0;
            parent[root] = usize::MAX;
            queue.clear();
            queue.push_back(root);
            while let Some(u) = queue.pop_front() {
                if 2 * dist[u] + 1 >= best {
                    break;
                }
                let is_var = u < self.d;
                for &w in self.neighbors(u) {
                    let v = self.node_id(w, !is_var);
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        parent[v] = u;
                        queue.push_back(v);
                    } else if parent[u] != v {
                        best = best.min(dist[u] + dist[v] + 1);
                    }
                }
            }
        }
        (best != usize::MAX).then_some(best)
    }
}
