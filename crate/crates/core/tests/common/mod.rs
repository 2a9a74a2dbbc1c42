//! Graph oracles and topology builders shared by the integration tests.
#![allow(dead_code)]

use std::collections::VecDeque;

use amisim::{Position, RandomStream};

/// Unit-disk adjacency: an edge wherever two nodes are within `range`.
pub fn unit_disk_adjacency(positions: &[Position], range: f64) -> Vec<Vec<usize>> {
    let n = positions.len();
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| {
                    if i == j {
                        return false;
                    }
                    let dx = positions[i].x - positions[j].x;
                    let dy = positions[i].y - positions[j].y;
                    (dx * dx + dy * dy).sqrt() <= range
                })
                .collect()
        })
        .collect()
}

/// Hop distance from `src` to every node; `None` when unreachable.
pub fn bfs(adj: &[Vec<usize>], src: usize) -> Vec<Option<u32>> {
    let mut dist = vec![None; adj.len()];
    dist[src] = Some(0);
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        let d = dist[u].unwrap();
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(d + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Uniform placement in a `side` x `side` square, redrawn until the
/// unit-disk graph is connected.
pub fn random_connected(seed: u64, n: usize, side: f64, range: f64) -> Vec<Position> {
    let mut rng = RandomStream::new(seed, 7);
    loop {
        let pos: Vec<Position> =
            (0..n).map(|_| Position::new(rng.uniform(0.0, side), rng.uniform(0.0, side))).collect();
        let adj = unit_disk_adjacency(&pos, range);
        if bfs(&adj, 0).iter().all(Option::is_some) {
            return pos;
        }
    }
}

/// Nodes 200 m apart on a line; node 0 at one end.
pub fn chain(n: usize) -> Vec<Position> {
    (0..n).map(|i| Position::new(200.0 * i as f64, 0.0)).collect()
}

/// Node 0 in the middle, the others on a 200 m circle around it.
pub fn star(n: usize) -> Vec<Position> {
    let leaves = n - 1;
    std::iter::once(Position::new(0.0, 0.0))
        .chain((0..leaves).map(|k| {
            let a = std::f64::consts::TAU * k as f64 / leaves as f64;
            Position::new(200.0 * a.cos(), 200.0 * a.sin())
        }))
        .collect()
}
