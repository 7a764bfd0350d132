//! Primal network simplex for transportation problems.
//!
//! The spanning tree is kept strongly feasible, so degenerate pivots cannot
//! cycle. Large dense instances are solved on a candidate arc set which is
//! enlarged until a full reduced-cost scan certifies optimality.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::sqrt;

const NONE: usize = usize::MAX;

/// Instances with at most this many arcs are solved on the full arc set.
const DENSE_LIMIT: usize = 200_000;
/// Candidate arcs kept per node in the sparse phase.
const NEIGHBORS: usize = 12;

#[derive(Clone, Copy, Debug)]
struct Arc {
    s: u32,
    t: u32,
    c: f64,
}

/// Basic arcs of the optimal tree `(source, sink, flow)` and dual potentials
/// with `c_ij − u_i − v_j ≥ 0`.
pub(crate) struct Flow {
    pub basic: Vec<(usize, usize, f64)>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// `min Σ c_ij f_ij` subject to `Σ_j f_ij = supply_i`, `Σ_i f_ij = demand_j`, `f ≥ 0`
/// over all source-sink pairs. Totals must agree. `eps` is the entering threshold
/// on reduced costs after scaling costs to `[0, 1]`.
pub(crate) fn transport<F>(supply: &[f64], demand: &[f64], cost: F, eps: f64) -> Result<Flow>
where
    F: Fn(usize, usize) -> f64,
{
    let ns = supply.len();
    let nt = demand.len();
    let mut max_cost: f64 = 0.0;
    let full = ns * nt;
    let mut arcs: Vec<Arc> = Vec::new();
    if full <= DENSE_LIMIT {
        arcs.reserve(full);
        for i in 0..ns {
            for j in 0..nt {
                let c = cost(i, j);
                max_cost = max_cost.max(c);
                arcs.push(Arc {
                    s: i as u32,
                    t: j as u32,
                    c,
                });
            }
        }
        let scale = if max_cost > 0.0 { 1.0 / max_cost } else { 1.0 };
        return solve(supply, demand, &arcs, scale, eps);
    }

    // nearest candidates per row, and per column through bounded sorted lists
    let mut seen = vec![false; full];
    let kr = NEIGHBORS.min(nt);
    let kc = NEIGHBORS.min(ns);
    let mut cols: Vec<Vec<(f64, usize)>> = vec![Vec::with_capacity(kc + 1); nt];
    let mut row = Vec::with_capacity(nt);
    for i in 0..ns {
        row.clear();
        for (j, col) in cols.iter_mut().enumerate() {
            let c = cost(i, j);
            max_cost = max_cost.max(c);
            row.push((c, j));
            if col.len() < kc || c < col[kc - 1].0 {
                let at = col.partition_point(|e| e.0 <= c);
                col.insert(at, (c, i));
                col.truncate(kc);
            }
        }
        row.select_nth_unstable_by(kr - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(c, j) in &row[..kr] {
            seen[i * nt + j] = true;
            arcs.push(Arc {
                s: i as u32,
                t: j as u32,
                c,
            });
        }
    }
    for (j, col) in cols.iter().enumerate() {
        for &(c, i) in col {
            if !seen[i * nt + j] {
                seen[i * nt + j] = true;
                arcs.push(Arc {
                    s: i as u32,
                    t: j as u32,
                    c,
                });
            }
        }
    }
    let scale = if max_cost > 0.0 { 1.0 / max_cost } else { 1.0 };
    // arcs only ever enter the candidate set, so the tree stays feasible between rounds
    let mut tree = Tree::new(supply, demand, scale);
    loop {
        tree.run(&arcs, eps)?;
        // artificial flow may remain until the missing arcs have been priced in
        let flow = tree.flow_unchecked();
        let mut added = 0;
        for i in 0..ns {
            for j in 0..nt {
                if seen[i * nt + j] {
                    continue;
                }
                let c = cost(i, j);
                if (c - flow.u[i] - flow.v[j]) * scale < -eps {
                    seen[i * nt + j] = true;
                    arcs.push(Arc {
                        s: i as u32,
                        t: j as u32,
                        c,
                    });
                    added += 1;
                }
            }
        }
        if added == 0 {
            return tree.flow(supply, demand);
        }
    }
}

/// Strongly feasible spanning tree over sources, sinks and an artificial root.
/// Each tree arc is stored on its lower endpoint: endpoints, scaled cost, flow.
/// Sinks are numbered `ns + j`.
struct Tree {
    ns: usize,
    root: usize,
    scale: f64,
    parent: Vec<usize>,
    arc_src: Vec<usize>,
    arc_dst: Vec<usize>,
    arc_cost: Vec<f64>,
    flow: Vec<f64>,
    depth: Vec<usize>,
    pi: Vec<f64>,
    // children as intrusive doubly linked sibling lists
    child: Vec<usize>,
    next: Vec<usize>,
    prev: Vec<usize>,
    path: Vec<usize>,
    next_arc: usize,
}

fn solve(supply: &[f64], demand: &[f64], arcs: &[Arc], scale: f64, eps: f64) -> Result<Flow> {
    let mut tree = Tree::new(supply, demand, scale);
    tree.run(arcs, eps)?;
    tree.flow(supply, demand)
}

impl Tree {
    fn new(supply: &[f64], demand: &[f64], scale: f64) -> Tree {
        let ns = supply.len();
        let n = ns + demand.len();
        let root = n;
        let big = 2.0 * (n as f64 + 1.0);
        let mut t = Tree {
            ns,
            root,
            scale,
            parent: vec![root; n + 1],
            arc_src: vec![NONE; n + 1],
            arc_dst: vec![NONE; n + 1],
            arc_cost: vec![big; n + 1],
            flow: vec![0.0; n + 1],
            depth: vec![1usize; n + 1],
            pi: vec![0.0; n + 1],
            child: vec![NONE; n + 1],
            next: vec![NONE; n + 1],
            prev: vec![NONE; n + 1],
            path: Vec::new(),
            next_arc: 0,
        };
        t.parent[root] = NONE;
        t.depth[root] = 0;
        for v in 0..n {
            let (s, is_source) = if v < ns {
                (supply[v], true)
            } else {
                (demand[v - ns], false)
            };
            if is_source && s > 0.0 {
                t.arc_src[v] = v;
                t.arc_dst[v] = root;
                t.pi[v] = -big;
            } else {
                t.arc_src[v] = root;
                t.arc_dst[v] = v;
                t.pi[v] = big;
            }
            t.flow[v] = s;
            t.attach(v, root);
        }
        t
    }

    fn attach(&mut self, v: usize, p: usize) {
        self.next[v] = self.child[p];
        self.prev[v] = NONE;
        if self.child[p] != NONE {
            self.prev[self.child[p]] = v;
        }
        self.child[p] = v;
    }

    /// Pivots until no arc of `arcs` has reduced cost below `−eps`.
    fn run(&mut self, arcs: &[Arc], eps: f64) -> Result<()> {
        let Tree {
            ns,
            scale,
            parent,
            arc_src,
            arc_dst,
            arc_cost,
            flow,
            depth,
            pi,
            child,
            next,
            prev,
            path,
            next_arc,
            ..
        } = self;
        let (ns, scale) = (*ns, *scale);
        let m = arcs.len();
        let block = (sqrt(m as f64) as usize).max(10).min(m.max(1));
        if *next_arc >= m {
            *next_arc = 0;
        }
        let mut stack = Vec::new();

        loop {
            // block search pricing
            let mut best = (NONE, -eps);
            let mut scanned = 0;
            let mut in_block = 0;
            while scanned < m {
                let k = *next_arc;
                *next_arc += 1;
                if *next_arc == m {
                    *next_arc = 0;
                }
                let a = arcs[k];
                let rc = a.c * scale + pi[a.s as usize] - pi[ns + a.t as usize];
                if rc < best.1 {
                    best = (k, rc);
                }
                scanned += 1;
                in_block += 1;
                if in_block == block {
                    if best.0 != NONE {
                        break;
                    }
                    in_block = 0;
                }
            }
            if best.0 == NONE {
                break;
            }
            let entering = arcs[best.0];
            let first = entering.s as usize;
            let second = ns + entering.t as usize;

            let (mut a, mut b) = (first, second);
            while a != b {
                if depth[a] > depth[b] {
                    a = parent[a];
                } else if depth[b] > depth[a] {
                    b = parent[b];
                } else {
                    a = parent[a];
                    b = parent[b];
                }
            }
            let join = a;

            // leaving arc: strict on the first path, non-strict on the second
            let mut delta = f64::INFINITY;
            let mut u_out = NONE;
            let mut side = 0;
            let mut w = first;
            while w != join {
                if arc_src[w] == w && flow[w] < delta {
                    delta = flow[w];
                    u_out = w;
                    side = 1;
                }
                w = parent[w];
            }
            let mut w = second;
            while w != join {
                if arc_dst[w] == w && flow[w] <= delta {
                    delta = flow[w];
                    u_out = w;
                    side = 2;
                }
                w = parent[w];
            }
            if u_out == NONE {
                return Err(Error::InvalidParameter(
                    "transport problem is unbounded".into(),
                ));
            }

            if delta > 0.0 {
                let mut w = first;
                while w != join {
                    if arc_src[w] == w {
                        flow[w] -= delta;
                    } else {
                        flow[w] += delta;
                    }
                    w = parent[w];
                }
                let mut w = second;
                while w != join {
                    if arc_dst[w] == w {
                        flow[w] -= delta;
                    } else {
                        flow[w] += delta;
                    }
                    w = parent[w];
                }
            }

            // re-hang the subtree below the leaving arc from the entering arc
            let (u_in, v_in) = if side == 1 {
                (first, second)
            } else {
                (second, first)
            };
            path.clear();
            let mut w = u_in;
            loop {
                path.push(w);
                if w == u_out {
                    break;
                }
                w = parent[w];
            }
            for &w in path.iter() {
                let (pw, nw) = (prev[w], next[w]);
                if pw != NONE {
                    next[pw] = nw;
                } else {
                    child[parent[w]] = nw;
                }
                if nw != NONE {
                    prev[nw] = pw;
                }
            }

            let mut w = u_in;
            let mut up = (v_in, first, second, entering.c * scale, delta);
            loop {
                let old = (parent[w], arc_src[w], arc_dst[w], arc_cost[w], flow[w]);
                parent[w] = up.0;
                arc_src[w] = up.1;
                arc_dst[w] = up.2;
                arc_cost[w] = up.3;
                flow[w] = up.4;
                if w == u_out {
                    break;
                }
                up = (w, old.1, old.2, old.3, old.4);
                w = old.0;
            }
            for &w in path.iter() {
                let p = parent[w];
                next[w] = child[p];
                prev[w] = NONE;
                if child[p] != NONE {
                    prev[child[p]] = w;
                }
                child[p] = w;
            }

            // c + π(src) − π(dst) = 0 on the entering arc fixes the subtree shift
            let target = if arc_src[u_in] == u_in {
                pi[v_in] - arc_cost[u_in]
            } else {
                pi[v_in] + arc_cost[u_in]
            };
            let shift = target - pi[u_in];
            stack.clear();
            stack.push(u_in);
            while let Some(x) = stack.pop() {
                pi[x] += shift;
                depth[x] = depth[parent[x]] + 1;
                let mut y = child[x];
                while y != NONE {
                    stack.push(y);
                    y = next[y];
                }
            }
        }

        Ok(())
    }

    fn flow_unchecked(&self) -> Flow {
        let (ns, root, scale) = (self.ns, self.root, self.scale);
        let n = self.arc_src.len() - 1;
        let u = (0..ns).map(|i| -self.pi[i] / scale).collect();
        let v = (ns..n).map(|j| self.pi[j] / scale).collect();
        let basic = (0..n)
            .filter(|&v| self.arc_src[v] != root && self.arc_dst[v] != root)
            .map(|v| (self.arc_src[v], self.arc_dst[v] - ns, self.flow[v]))
            .collect();
        Flow { basic, u, v }
    }

    fn flow(&self, supply: &[f64], demand: &[f64]) -> Result<Flow> {
        let (ns, nt, root, scale) = (self.ns, demand.len(), self.root, self.scale);
        let (arc_src, arc_dst, flow, pi) = (&self.arc_src, &self.arc_dst, &self.flow, &self.pi);
        let n = ns + nt;
        let mut basic = Vec::new();
        let tol = 1e-9 * (supply.iter().sum::<f64>() + demand.iter().sum::<f64>()).max(1e-300);
        for v in 0..n {
            let (s, d) = (arc_src[v], arc_dst[v]);
            if s == root || d == root {
                if flow[v] > tol {
                    return Err(Error::UnbalancedMass(
                        supply.iter().sum(),
                        demand.iter().sum(),
                    ));
                }
                continue;
            }
            basic.push((s, d - ns, flow[v]));
        }
        basic.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
        let u = (0..ns).map(|i| -pi[i] / scale).collect();
        let v = (0..nt).map(|j| pi[ns + j] / scale).collect();
        Ok(Flow { basic, u, v })
    }
}
