//! Primal network simplex for uncapacitated min-cost flow with integer
//! supplies and costs.
//!
//! The spanning tree is stored with parent/thread/successor-count arrays and
//! the entering arc is chosen by block search. The initial tree uses one
//! artificial arc per node to an extra root node, priced high enough that
//! any feasible flow avoids them.

use crate::error::{Error, Result};

const STATE_TREE: i8 = 0;
const STATE_LOWER: i8 = 1;
const DIR_UP: i64 = 1;
const DIR_DOWN: i64 = -1;

/// A min-cost flow problem on nodes `0..n`; supplies must sum to zero.
#[derive(Debug, Clone, Default)]
pub struct FlowProblem {
    supply: Vec<i64>,
    source: Vec<usize>,
    target: Vec<usize>,
    cost: Vec<i64>,
}

impl FlowProblem {
    pub fn new(supply: Vec<i64>) -> Self {
        Self { supply, ..Default::default() }
    }

    /// Adds an uncapacitated arc and returns its index.
    pub fn add_arc(&mut self, from: usize, to: usize, cost: i64) -> usize {
        debug_assert!(cost >= 0 && from < self.supply.len() && to < self.supply.len());
        self.source.push(from);
        self.target.push(to);
        self.cost.push(cost);
        self.source.len() - 1
    }

    pub fn nodes(&self) -> usize {
        self.supply.len()
    }

    pub fn arcs(&self) -> usize {
        self.source.len()
    }

    pub fn arc(&self, e: usize) -> (usize, usize, i64) {
        (self.source[e], self.target[e], self.cost[e])
    }

    /// Optimal arc flows.
    pub fn solve(&self) -> Result<Vec<i64>> {
        if self.supply.iter().sum::<i64>() != 0 {
            return Err(Error::Infeasible);
        }
        let mut s = Solver::new(self);
        s.run()?;
        Ok(s.flow[..self.arcs()].to_vec())
    }
}

struct Solver {
    n: usize,
    m: usize,
    source: Vec<usize>,
    target: Vec<usize>,
    cost: Vec<i64>,
    flow: Vec<i64>,
    state: Vec<i8>,
    pi: Vec<i64>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    pred_dir: Vec<i64>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    dirty_revs: Vec<usize>,
    block_size: usize,
    next_arc: usize,
    // Current pivot.
    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
}

const NONE: usize = usize::MAX;

impl Solver {
    fn new(p: &FlowProblem) -> Self {
        let n = p.nodes();
        let m = p.arcs();
        let root = n;
        let max_cost = p.cost.iter().copied().max().unwrap_or(0);
        let art_cost = (max_cost + 1) * (n as i64 + 1);

        let mut source = p.source.clone();
        let mut target = p.target.clone();
        let mut cost = p.cost.clone();
        let mut flow = vec![0i64; m + n];
        let mut state = vec![STATE_LOWER; m + n];
        let mut pi = vec![0i64; n + 1];
        let mut parent = vec![NONE; n + 1];
        let mut pred = vec![NONE; n + 1];
        let mut pred_dir = vec![0i64; n + 1];
        let mut thread = vec![0usize; n + 1];
        let mut rev_thread = vec![0usize; n + 1];
        let mut succ_num = vec![1usize; n + 1];
        let mut last_succ = vec![0usize; n + 1];

        succ_num[root] = n + 1;
        last_succ[root] = if n == 0 { root } else { n - 1 };
        thread[root] = if n == 0 { root } else { 0 };
        rev_thread[if n == 0 { root } else { 0 }] = root;
        for u in 0..n {
            let e = m + u;
            parent[u] = root;
            pred[u] = e;
            thread[u] = u + 1;
            rev_thread[u + 1] = u;
            last_succ[u] = u;
            state[e] = STATE_TREE;
            cost.push(art_cost);
            if p.supply[u] >= 0 {
                source.push(u);
                target.push(root);
                flow[e] = p.supply[u];
                pred_dir[u] = DIR_UP;
                pi[u] = -art_cost;
            } else {
                source.push(root);
                target.push(u);
                flow[e] = -p.supply[u];
                pred_dir[u] = DIR_DOWN;
                pi[u] = art_cost;
            }
        }
        if n > 0 {
            thread[n - 1] = root;
            rev_thread[root] = n - 1;
        }

        let block_size = ((m as f64).sqrt().ceil() as usize).max(10);
        Self {
            n,
            m,
            source,
            target,
            cost,
            flow,
            state,
            pi,
            parent,
            pred,
            pred_dir,
            thread,
            rev_thread,
            succ_num,
            last_succ,
            dirty_revs: Vec::new(),
            block_size,
            next_arc: 0,
            in_arc: NONE,
            join: NONE,
            u_in: NONE,
            v_in: NONE,
            u_out: NONE,
        }
    }

    fn reduced(&self, e: usize) -> i64 {
        self.state[e] as i64 * (self.cost[e] + self.pi[self.source[e]] - self.pi[self.target[e]])
    }

    fn find_entering_arc(&mut self) -> bool {
        let mut min = 0i64;
        let mut cnt = self.block_size;
        let order = (self.next_arc..self.m).chain(0..self.next_arc);
        for e in order {
            let c = self.reduced(e);
            if c < min {
                min = c;
                self.in_arc = e;
            }
            cnt -= 1;
            if cnt == 0 {
                if min < 0 {
                    break;
                }
                cnt = self.block_size;
            }
        }
        if min >= 0 {
            return false;
        }
        self.next_arc = self.in_arc;
        true
    }

    fn find_join_node(&mut self) {
        let (mut u, mut v) = (self.source[self.in_arc], self.target[self.in_arc]);
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        self.join = u;
    }

    /// Returns the flow change, or None if the cycle is unbounded.
    fn find_leaving_arc(&mut self) -> Option<i64> {
        let first = self.source[self.in_arc];
        let second = self.target[self.in_arc];
        let mut delta = i64::MAX;
        let mut side = 0;
        let mut u = first;
        while u != self.join {
            if self.pred_dir[u] == DIR_UP {
                let d = self.flow[self.pred[u]];
                if d < delta {
                    delta = d;
                    self.u_out = u;
                    side = 1;
                }
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != self.join {
            if self.pred_dir[u] == DIR_DOWN {
                let d = self.flow[self.pred[u]];
                if d <= delta {
                    delta = d;
                    self.u_out = u;
                    side = 2;
                }
            }
            u = self.parent[u];
        }
        match side {
            0 => None,
            1 => {
                self.u_in = first;
                self.v_in = second;
                Some(delta)
            }
            _ => {
                self.u_in = second;
                self.v_in = first;
                Some(delta)
            }
        }
    }

    fn change_flow(&mut self, delta: i64) {
        if delta > 0 {
            self.flow[self.in_arc] += delta;
            let mut u = self.source[self.in_arc];
            while u != self.join {
                self.flow[self.pred[u]] -= self.pred_dir[u] * delta;
                u = self.parent[u];
            }
            let mut u = self.target[self.in_arc];
            while u != self.join {
                self.flow[self.pred[u]] += self.pred_dir[u] * delta;
                u = self.parent[u];
            }
        }
        self.state[self.in_arc] = STATE_TREE;
        let out = self.pred[self.u_out];
        self.state[out] = STATE_LOWER;
    }

    fn update_tree_structure(&mut self) {
        let (u_in, v_in, u_out, join) = (self.u_in, self.v_in, self.u_out, self.join);
        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out];

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = self.in_arc;
            self.pred_dir[u_in] = if u_in == self.source[self.in_arc] { DIR_UP } else { DIR_DOWN };
            if self.thread[v_in] != u_out {
                let mut after = self.thread[old_last_succ];
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
                after = self.thread[v_in];
                self.thread[v_in] = u_out;
                self.rev_thread[u_out] = v_in;
                self.thread[old_last_succ] = after;
                self.rev_thread[after] = old_last_succ;
            }
        } else {
            let thread_continue =
                if old_rev_thread == v_in { self.thread[old_last_succ] } else { self.thread[v_in] };

            // Re-hang the stem from u_in up to u_out under v_in.
            let mut stem = u_in;
            let mut par_stem = v_in;
            let mut last = self.last_succ[u_in];
            let mut after = self.thread[last];
            self.thread[v_in] = u_in;
            self.dirty_revs.clear();
            self.dirty_revs.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem];
                self.thread[last] = next_stem;
                self.dirty_revs.push(last);

                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;

                self.parent[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;

                last = if self.last_succ[stem] == self.last_succ[par_stem] {
                    self.rev_thread[par_stem]
                } else {
                    self.last_succ[stem]
                };
                after = self.thread[last];
            }
            self.parent[u_out] = par_stem;
            self.thread[last] = thread_continue;
            self.rev_thread[thread_continue] = last;
            self.last_succ[u_out] = last;

            if old_rev_thread != v_in {
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
            }
            for k in 0..self.dirty_revs.len() {
                let u = self.dirty_revs[k];
                let t = self.thread[u];
                self.rev_thread[t] = u;
            }

            // Stem nodes take over the tree arcs of their old children.
            let mut tmp_sc = 0usize;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            while u != u_in {
                let p = self.parent[u];
                self.pred[u] = self.pred[p];
                self.pred_dir[u] = -self.pred_dir[p];
                tmp_sc += self.succ_num[u] - self.succ_num[p];
                self.succ_num[u] = tmp_sc;
                self.last_succ[p] = tmp_ls;
                u = p;
            }
            self.pred[u_in] = self.in_arc;
            self.pred_dir[u_in] = if u_in == self.source[self.in_arc] { DIR_UP } else { DIR_DOWN };
            self.succ_num[u_in] = old_succ_num;
        }

        let up_limit_out = if self.last_succ[join] == v_in { join } else { NONE };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in;
        while u != NONE && self.last_succ[u] == v_in {
            self.last_succ[u] = last_succ_out;
            u = self.parent[u];
        }

        if join != old_rev_thread && v_in != old_rev_thread {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = old_rev_thread;
                u = self.parent[u];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = last_succ_out;
                u = self.parent[u];
            }
        }

        let mut u = v_in;
        while u != join {
            self.succ_num[u] += old_succ_num;
            u = self.parent[u];
        }
        let mut u = v_out;
        while u != join {
            self.succ_num[u] -= old_succ_num;
            u = self.parent[u];
        }
    }

    fn update_potential(&mut self) {
        let sigma = self.pi[self.v_in] - self.pi[self.u_in] - self.pred_dir[self.u_in] * self.cost[self.in_arc];
        let end = self.thread[self.last_succ[self.u_in]];
        let mut u = self.u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }

    fn run(&mut self) -> Result<()> {
        let mut pivots = 0usize;
        while self.find_entering_arc() {
            self.find_join_node();
            let delta = self.find_leaving_arc().ok_or(Error::Infeasible)?;
            self.change_flow(delta);
            self.update_tree_structure();
            self.update_potential();
            pivots += 1;
        }
        log::trace!("network simplex: {pivots} pivots on {} nodes, {} arcs", self.n, self.m);
        if self.flow[self.m..].iter().any(|&f| f != 0) {
            return Err(Error::Infeasible);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Successive shortest paths with Bellman-Ford, one unit path at a time
    /// along the cheapest augmenting path (with residual reverse arcs).
    fn ssp_cost(p: &FlowProblem) -> Option<i64> {
        let n = p.nodes();
        let mut excess = p.supply.clone();
        let m = p.arcs();
        let mut flow = vec![0i64; m];
        loop {
            let Some(s) = (0..n).find(|&u| excess[u] > 0) else { break };
            let mut dist = vec![i64::MAX; n];
            let mut prev: Vec<Option<(usize, bool)>> = vec![None; n];
            dist[s] = 0;
            for _ in 0..n {
                let mut changed = false;
                for e in 0..m {
                    let (a, b, c) = p.arc(e);
                    if dist[a] != i64::MAX && dist[a] + c < dist[b] {
                        dist[b] = dist[a] + c;
                        prev[b] = Some((e, true));
                        changed = true;
                    }
                    if flow[e] > 0 && dist[b] != i64::MAX && dist[b] - c < dist[a] {
                        dist[a] = dist[b] - c;
                        prev[a] = Some((e, false));
                        changed = true;
                    }
                }
                if !changed {
                    break;
                }
            }
            let t = (0..n).filter(|&u| excess[u] < 0 && dist[u] != i64::MAX).min_by_key(|&u| dist[u])?;
            let mut push = excess[s].min(-excess[t]);
            let mut v = t;
            while v != s {
                let (e, fwd) = prev[v].unwrap();
                if !fwd {
                    push = push.min(flow[e]);
                }
                v = if fwd { p.arc(e).0 } else { p.arc(e).1 };
            }
            let mut v = t;
            while v != s {
                let (e, fwd) = prev[v].unwrap();
                flow[e] += if fwd { push } else { -push };
                v = if fwd { p.arc(e).0 } else { p.arc(e).1 };
            }
            excess[s] -= push;
            excess[t] += push;
        }
        Some((0..m).map(|e| flow[e] * p.arc(e).2).sum())
    }

    fn total_cost(p: &FlowProblem, flow: &[i64]) -> i64 {
        flow.iter().enumerate().map(|(e, f)| f * p.arc(e).2).sum()
    }

    fn check_feasible(p: &FlowProblem, flow: &[i64]) {
        let mut net = p.supply.clone();
        for (e, &f) in flow.iter().enumerate() {
            assert!(f >= 0);
            let (a, b, _) = p.arc(e);
            net[a] -= f;
            net[b] += f;
        }
        assert!(net.iter().all(|&x| x == 0), "{net:?}");
    }

    #[test]
    fn single_arc() {
        let mut p = FlowProblem::new(vec![3, -3]);
        p.add_arc(0, 1, 7);
        assert_eq!(p.solve().unwrap(), vec![3]);
    }

    #[test]
    fn picks_the_cheaper_route() {
        let mut p = FlowProblem::new(vec![5, 0, -5]);
        p.add_arc(0, 2, 10);
        p.add_arc(0, 1, 3);
        p.add_arc(1, 2, 4);
        let f = p.solve().unwrap();
        assert_eq!(f, vec![0, 5, 5]);
    }

    #[test]
    fn infeasible_without_arcs() {
        let p = FlowProblem::new(vec![1, -1]);
        assert!(matches!(p.solve(), Err(Error::Infeasible)));
        assert!(matches!(FlowProblem::new(vec![1, 0]).solve(), Err(Error::Infeasible)));
    }

    #[test]
    fn empty_problem() {
        assert!(FlowProblem::new(vec![]).solve().unwrap().is_empty());
        assert!(FlowProblem::new(vec![0, 0]).solve().unwrap().is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn matches_successive_shortest_paths(
            n in 2usize..9,
            raw_supply in proptest::collection::vec(-6i64..7, 9),
            arcs in proptest::collection::vec((0usize..9, 0usize..9, 0i64..20), 1..30),
        ) {
            let mut supply: Vec<i64> = raw_supply[..n].to_vec();
            let s: i64 = supply.iter().sum();
            supply[0] -= s;
            let mut p = FlowProblem::new(supply);
            // A complete cycle keeps every instance feasible.
            for u in 0..n {
                p.add_arc(u, (u + 1) % n, 25);
            }
            for (a, b, c) in arcs {
                if a < n && b < n && a != b {
                    p.add_arc(a, b, c);
                }
            }
            let flow = p.solve().unwrap();
            check_feasible(&p, &flow);
            prop_assert_eq!(Some(total_cost(&p, &flow)), ssp_cost(&p));
        }
    }
}
