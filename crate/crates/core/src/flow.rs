//! Small min-cost max-flow by successive shortest paths (Bellman-Ford,
//! so negative arc costs are fine as long as the input graph is acyclic).

#[derive(Debug, Clone)]
struct Arc {
    to: usize,
    cap: i64,
    cost: f64,
}

#[derive(Debug, Clone)]
pub struct MinCostFlow {
    arcs: Vec<Arc>,
    adj: Vec<Vec<usize>>,
}

impl MinCostFlow {
    pub fn new(nodes: usize) -> Self {
        Self { arcs: Vec::new(), adj: vec![Vec::new(); nodes] }
    }

    /// Adds an arc and returns its id (its reverse arc is `id ^ 1`).
    pub fn add_arc(&mut self, from: usize, to: usize, cap: i64, cost: f64) -> usize {
        let id = self.arcs.len();
        self.arcs.push(Arc { to, cap, cost });
        self.adj[from].push(id);
        self.arcs.push(Arc { to: from, cap: 0, cost: -cost });
        self.adj[to].push(id + 1);
        id
    }

    /// Flow currently carried by arc `id`.
    pub fn flow(&self, id: usize) -> i64 {
        self.arcs[id ^ 1].cap
    }

    /// Pushes up to `limit` units from `s` to `t`; returns (flow, cost).
    pub fn run(&mut self, s: usize, t: usize, limit: i64) -> (i64, f64) {
        let n = self.adj.len();
        let (mut flow, mut cost) = (0i64, 0.0);
        while flow < limit {
            let mut dist = vec![f64::INFINITY; n];
            let mut prev = vec![usize::MAX; n];
            dist[s] = 0.0;
            for _ in 0..n {
                let mut changed = false;
                for v in 0..n {
                    if dist[v] == f64::INFINITY {
                        continue;
                    }
                    for &id in &self.adj[v] {
                        let arc = &self.arcs[id];
                        let cand = dist[v] + arc.cost;
                        let cur = dist[arc.to];
                        let better = if cur.is_finite() { cand < cur - 1e-15 * (1.0 + cur.abs()) } else { true };
                        if arc.cap > 0 && better {
                            dist[arc.to] = cand;
                            prev[arc.to] = id;
                            changed = true;
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
            if dist[t] == f64::INFINITY {
                break;
            }
            let mut push = limit - flow;
            let mut v = t;
            while v != s {
                let id = prev[v];
                push = push.min(self.arcs[id].cap);
                v = self.arcs[id ^ 1].to;
            }
            let mut v = t;
            while v != s {
                let id = prev[v];
                self.arcs[id].cap -= push;
                self.arcs[id ^ 1].cap += push;
                v = self.arcs[id ^ 1].to;
            }
            flow += push;
            cost += push as f64 * dist[t];
        }
        (flow, cost)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignment_with_negative_costs() {
        // source 0, workers 1..=2, jobs 3..=4, sink 5; skip option direct to sink.
        let mut g = MinCostFlow::new(6);
        g.add_arc(0, 1, 1, 0.0);
        g.add_arc(0, 2, 1, 0.0);
        let a13 = g.add_arc(1, 3, 1, -1.0);
        let a14 = g.add_arc(1, 4, 1, -3.0);
        let a23 = g.add_arc(2, 3, 1, -2.0);
        let a24 = g.add_arc(2, 4, 1, -3.5);
        g.add_arc(1, 5, 1, 0.0);
        g.add_arc(2, 5, 1, 0.0);
        g.add_arc(3, 5, 1, 0.0);
        g.add_arc(4, 5, 1, 0.0);
        let (f, c) = g.run(0, 5, 2);
        assert_eq!(f, 2);
        assert!((c + 5.0).abs() < 1e-12);
        assert_eq!((g.flow(a13), g.flow(a14), g.flow(a23), g.flow(a24)), (0, 1, 1, 0));
    }
}
