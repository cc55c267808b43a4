//! Successive-shortest-path minimum-cost flow with Dijkstra and potentials.
//! Arc costs must be nonnegative.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

#[derive(Clone, Debug)]
struct Arc {
    to: usize,
    capacity: i64,
    cost: i64,
}

#[derive(Clone, Debug)]
pub(crate) struct FlowNetwork {
    arcs: Vec<Arc>,
    adjacency: Vec<Vec<usize>>,
}

impl FlowNetwork {
    pub fn new(nodes: usize) -> Self {
        FlowNetwork {
            arcs: Vec::new(),
            adjacency: vec![Vec::new(); nodes],
        }
    }

    /// Returns the arc id; its residual twin is `id ^ 1`.
    pub fn add_arc(&mut self, from: usize, to: usize, capacity: i64, cost: i64) -> usize {
        debug_assert!(cost >= 0);
        let id = self.arcs.len();
        self.arcs.push(Arc { to, capacity, cost });
        self.arcs.push(Arc {
            to: from,
            capacity: 0,
            cost: -cost,
        });
        self.adjacency[from].push(id);
        self.adjacency[to].push(id + 1);
        id
    }

    pub fn flow(&self, arc: usize) -> i64 {
        self.arcs[arc ^ 1].capacity
    }

    /// Push up to `demand` units from `source` to `sink` at minimum cost.
    /// Returns `(flow, cost)`. Call once per network: potentials start at
    /// zero, which is valid only while every residual arc cost is nonnegative.
    pub fn min_cost_flow(&mut self, source: usize, sink: usize, demand: i64) -> (i64, i64) {
        let n = self.adjacency.len();
        let mut potential = vec![0i64; n];
        let mut total_flow = 0;
        let mut total_cost = 0;
        while total_flow < demand {
            let mut dist = vec![i64::MAX; n];
            let mut via = vec![usize::MAX; n];
            dist[source] = 0;
            let mut heap = BinaryHeap::new();
            heap.push(Reverse((0i64, source)));
            while let Some(Reverse((d, u))) = heap.pop() {
                if d > dist[u] {
                    continue;
                }
                for &id in &self.adjacency[u] {
                    let arc = &self.arcs[id];
                    if arc.capacity == 0 {
                        continue;
                    }
                    let next = d + arc.cost + potential[u] - potential[arc.to];
                    if next < dist[arc.to] {
                        dist[arc.to] = next;
                        via[arc.to] = id;
                        heap.push(Reverse((next, arc.to)));
                    }
                }
            }
            if dist[sink] == i64::MAX {
                break;
            }
            for v in 0..n {
                if dist[v] != i64::MAX {
                    potential[v] += dist[v];
                }
            }
            let mut push = demand - total_flow;
            let mut v = sink;
            while v != source {
                let id = via[v];
                push = push.min(self.arcs[id].capacity);
                v = self.arcs[id ^ 1].to;
            }
            let mut v = sink;
            while v != source {
                let id = via[v];
                self.arcs[id].capacity -= push;
                self.arcs[id ^ 1].capacity += push;
                total_cost += push * self.arcs[id].cost;
                v = self.arcs[id ^ 1].to;
            }
            total_flow += push;
        }
        (total_flow, total_cost)
    }
}
