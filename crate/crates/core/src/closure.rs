//! Maximum-weight closure through a Dinic min-cut.

use std::collections::VecDeque;

pub(crate) trait Capacity: Copy + PartialOrd + std::fmt::Debug {
    const ZERO: Self;
    const INF: Self;
    fn add(self, o: Self) -> Self;
    fn sub(self, o: Self) -> Self;
    fn neg(self) -> Self;
    /// Strictly positive beyond numerical noise.
    fn positive(self) -> bool;
}

impl Capacity for i64 {
    const ZERO: Self = 0;
    const INF: Self = i64::MAX / 4;
    fn add(self, o: Self) -> Self {
        self + o
    }
    fn sub(self, o: Self) -> Self {
        self - o
    }
    fn neg(self) -> Self {
        -self
    }
    fn positive(self) -> bool {
        self > 0
    }
}

impl Capacity for f64 {
    const ZERO: Self = 0.0;
    const INF: Self = f64::INFINITY;
    fn add(self, o: Self) -> Self {
        self + o
    }
    fn sub(self, o: Self) -> Self {
        self - o
    }
    fn neg(self) -> Self {
        -self
    }
    fn positive(self) -> bool {
        self > 1e-13
    }
}

struct Arc<C> {
    to: usize,
    cap: C,
}

struct Network<C> {
    arcs: Vec<Arc<C>>,
    adj: Vec<Vec<usize>>,
    level: Vec<i32>,
    next: Vec<usize>,
}

impl<C: Capacity> Network<C> {
    fn new(n: usize) -> Self {
        Self { arcs: Vec::new(), adj: vec![Vec::new(); n], level: vec![0; n], next: vec![0; n] }
    }

    fn add_arc(&mut self, from: usize, to: usize, cap: C) {
        self.adj[from].push(self.arcs.len());
        self.arcs.push(Arc { to, cap });
        self.adj[to].push(self.arcs.len());
        self.arcs.push(Arc { to: from, cap: C::ZERO });
    }

    fn bfs(&mut self, s: usize, t: usize) -> bool {
        self.level.iter_mut().for_each(|l| *l = -1);
        self.level[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(x) = q.pop_front() {
            for &a in &self.adj[x] {
                let arc = &self.arcs[a];
                if arc.cap.positive() && self.level[arc.to] < 0 {
                    self.level[arc.to] = self.level[x] + 1;
                    q.push_back(arc.to);
                }
            }
        }
        self.level[t] >= 0
    }

    fn dfs(&mut self, x: usize, t: usize, pushed: C) -> C {
        if x == t {
            return pushed;
        }
        while self.next[x] < self.adj[x].len() {
            let a = self.adj[x][self.next[x]];
            let (to, cap) = (self.arcs[a].to, self.arcs[a].cap);
            if cap.positive() && self.level[to] == self.level[x] + 1 {
                let want = if cap < pushed { cap } else { pushed };
                let got = self.dfs(to, t, want);
                if got.positive() {
                    self.arcs[a].cap = self.arcs[a].cap.sub(got);
                    self.arcs[a ^ 1].cap = self.arcs[a ^ 1].cap.add(got);
                    return got;
                }
            }
            self.next[x] += 1;
        }
        C::ZERO
    }

    fn max_flow(&mut self, s: usize, t: usize) {
        while self.bfs(s, t) {
            self.next.iter_mut().for_each(|n| *n = 0);
            loop {
                let f = self.dfs(s, t, C::INF);
                if !f.positive() {
                    break;
                }
            }
        }
    }

    fn source_side(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.adj.len()];
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(x) = stack.pop() {
            for &a in &self.adj[x] {
                let arc = &self.arcs[a];
                if arc.cap.positive() && !seen[arc.to] {
                    seen[arc.to] = true;
                    stack.push(arc.to);
                }
            }
        }
        seen
    }
}

/// Returns a maximum-weight closed node set: whenever `x` is selected every
/// node in `requires[x]` is selected too. The empty set is always feasible.
pub(crate) fn max_weight_closure<C: Capacity>(weights: &[C], requires: &[Vec<usize>]) -> Vec<bool> {
    let n = weights.len();
    let (s, t) = (n, n + 1);
    let mut net = Network::new(n + 2);
    for (x, &w) in weights.iter().enumerate() {
        if w.positive() {
            net.add_arc(s, x, w);
        } else if w.neg().positive() {
            net.add_arc(x, t, w.neg());
        }
        for &y in &requires[x] {
            net.add_arc(x, y, C::INF);
        }
    }
    net.max_flow(s, t);
    let mut side = net.source_side(s);
    side.truncate(n);
    side
}
