//! Leiden community detection on a weighted undirected graph.
//!
//! Each pass runs fast local moving, refines every community into
//! well-connected sub-communities, aggregates on the refined partition and
//! seeds the aggregate graph with the unrefined partition. Passes repeat from
//! the previous result until modularity stops improving.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GAIN_EPS: f64 = 1e-12;
const MAX_PASSES: usize = 32;
/// Randomness of the refinement merge choice.
const REFINE_THETA: f64 = 0.01;

/// Symmetric adjacency lists. A self-loop of weight `s` appears once in its
/// node's list and contributes `2s` to that node's degree.
#[derive(Debug, Clone, Default)]
pub struct WeightedGraph {
    adj: Vec<Vec<(usize, f64)>>,
}

impl WeightedGraph {
    pub fn new(n: usize) -> Self {
        WeightedGraph { adj: vec![Vec::new(); n] }
    }

    /// Adds weight to the undirected edge `u–v`, merging with an existing edge.
    pub fn add_edge(&mut self, u: usize, v: usize, w: f64) {
        Self::bump(&mut self.adj[u], v, w);
        if u != v {
            Self::bump(&mut self.adj[v], u, w);
        }
    }

    fn bump(list: &mut Vec<(usize, f64)>, to: usize, w: f64) {
        match list.iter_mut().find(|(t, _)| *t == to) {
            Some(e) => e.1 += w,
            None => list.push((to, w)),
        }
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, u: usize) -> &[(usize, f64)] {
        &self.adj[u]
    }

    pub fn degree(&self, u: usize) -> f64 {
        self.adj[u].iter().map(|&(v, w)| if v == u { 2.0 * w } else { w }).sum()
    }

    /// Twice the total edge weight.
    pub fn two_m(&self) -> f64 {
        (0..self.node_count()).map(|u| self.degree(u)).sum()
    }

    fn sort_lists(&mut self) {
        for l in &mut self.adj {
            l.sort_by_key(|&(v, _)| v);
        }
    }
}

/// Modularity of `membership` with resolution `gamma`.
pub fn modularity(g: &WeightedGraph, membership: &[usize], gamma: f64) -> f64 {
    let two_m = g.two_m();
    if two_m == 0.0 {
        return 0.0;
    }
    let nc = membership.iter().copied().max().map_or(0, |m| m + 1);
    let mut internal = vec![0.0; nc];
    let mut tot = vec![0.0; nc];
    for u in 0..g.node_count() {
        let cu = membership[u];
        tot[cu] += g.degree(u);
        for &(v, w) in g.neighbors(u) {
            if membership[v] == cu {
                internal[cu] += if v == u { 2.0 * w } else { w };
            }
        }
    }
    internal
        .iter()
        .zip(&tot)
        .map(|(i, t)| i - gamma * t * t / two_m)
        .sum::<f64>()
        / two_m
}

/// Relabels to `0..k` in order of first appearance.
fn compact(membership: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    membership
        .iter()
        .map(|&c| {
            let next = map.len();
            *map.entry(c).or_insert(next)
        })
        .collect()
}

/// Queue-based local moving. `part` is updated in place.
fn local_move(g: &WeightedGraph, part: &mut [usize], gamma: f64, rng: &mut ChaCha8Rng) -> bool {
    let n = g.node_count();
    let two_m = g.two_m();
    if two_m == 0.0 {
        return false;
    }
    let k: Vec<f64> = (0..n).map(|u| g.degree(u)).collect();
    let mut tot = vec![0.0; n];
    let mut size = vec![0usize; n];
    for u in 0..n {
        tot[part[u]] += k[u];
        size[part[u]] += 1;
    }
    let mut empty: Vec<usize> = (0..n).filter(|&c| size[c] == 0).rev().collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut queue: std::collections::VecDeque<usize> = order.into();
    let mut queued = vec![true; n];
    let mut moved = false;
    let mut w_to = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();

    while let Some(v) = queue.pop_front() {
        queued[v] = false;
        let cur = part[v];
        for &(u, w) in g.neighbors(v) {
            if u == v {
                continue;
            }
            let c = part[u];
            if w_to[c] == 0.0 {
                touched.push(c);
            }
            w_to[c] += w;
        }
        tot[cur] -= k[v];
        size[cur] -= 1;

        let gain = |c: usize, w: f64| w - gamma * k[v] * tot[c] / two_m;
        let mut best = cur;
        let mut best_gain = gain(cur, w_to[cur]);
        touched.sort_unstable();
        for &c in &touched {
            let g_c = gain(c, w_to[c]);
            if g_c > best_gain + GAIN_EPS {
                best = c;
                best_gain = g_c;
            }
        }
        if best_gain < -GAIN_EPS && size[cur] > 0 {
            // isolating v beats every neighbor community
            if let Some(&e) = empty.last() {
                best = e;
            }
        }
        for &c in &touched {
            w_to[c] = 0.0;
        }
        touched.clear();

        if size[cur] == 0 && best != cur {
            empty.push(cur);
        }
        if size[best] == 0 {
            if let Some(pos) = empty.iter().position(|&e| e == best) {
                empty.remove(pos);
            }
        }
        tot[best] += k[v];
        size[best] += 1;
        if best != cur {
            part[v] = best;
            moved = true;
            for &(u, _) in g.neighbors(v) {
                if u != v && part[u] != best && !queued[u] {
                    queued[u] = true;
                    queue.push_back(u);
                }
            }
        }
    }
    moved
}

/// Splits every community of `part` into well-connected sub-communities.
fn refine(g: &WeightedGraph, part: &[usize], gamma: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = g.node_count();
    let two_m = g.two_m();
    let k: Vec<f64> = (0..n).map(|u| g.degree(u)).collect();
    let mut refined: Vec<usize> = (0..n).collect();
    if two_m == 0.0 {
        return refined;
    }
    let mut r_tot = k.clone();
    let mut r_size = vec![1usize; n];
    // weight from each refined community to the rest of its parent community
    let mut r_ext = vec![0.0; n];
    for v in 0..n {
        r_ext[v] = g.neighbors(v).iter().filter(|&&(u, _)| u != v && part[u] == part[v]).map(|&(_, w)| w).sum();
    }

    let nc = part.iter().copied().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); nc];
    for v in 0..n {
        members[part[v]].push(v);
    }
    let mut w_to = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();
    for nodes in members.iter_mut().filter(|m| m.len() > 1) {
        let k_s: f64 = nodes.iter().map(|&v| k[v]).sum();
        nodes.shuffle(rng);
        for &v in nodes.iter() {
            if r_size[refined[v]] != 1 {
                continue;
            }
            let ext_v = r_ext[refined[v]];
            if ext_v < gamma * k[v] * (k_s - k[v]) / two_m - GAIN_EPS {
                continue;
            }
            for &(u, w) in g.neighbors(v) {
                if u == v || part[u] != part[v] {
                    continue;
                }
                let c = refined[u];
                if w_to[c] == 0.0 {
                    touched.push(c);
                }
                w_to[c] += w;
            }
            touched.sort_unstable();
            let own = refined[v];
            // candidates with nonnegative gain, staying put included; picked
            // with probability proportional to exp(gain / theta)
            let mut cands: Vec<(usize, f64)> = vec![(own, 0.0)];
            for &c in &touched {
                if c == own {
                    continue;
                }
                let well_connected = r_ext[c] >= gamma * r_tot[c] * (k_s - r_tot[c]) / two_m - GAIN_EPS;
                if !well_connected {
                    continue;
                }
                let gain = (w_to[c] - gamma * k[v] * r_tot[c] / two_m) / two_m;
                if gain >= -GAIN_EPS {
                    cands.push((c, gain));
                }
            }
            let top = cands.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = cands.iter().map(|c| ((c.1 - top) / REFINE_THETA).exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut pick = rng.gen::<f64>() * total;
            let mut best = cands[cands.len() - 1].0;
            for (c, w) in cands.iter().zip(&weights) {
                if pick < *w {
                    best = c.0;
                    break;
                }
                pick -= w;
            }
            if best != own {
                let w_vc = w_to[best];
                r_ext[best] = r_ext[best] + ext_v - 2.0 * w_vc;
                r_tot[best] += k[v];
                r_size[best] += 1;
                r_size[own] = 0;
                r_tot[own] = 0.0;
                refined[v] = best;
            }
            for &c in &touched {
                w_to[c] = 0.0;
            }
            touched.clear();
        }
    }
    refined
}

/// Collapses each community of `membership` (compact ids) into a node.
fn aggregate(g: &WeightedGraph, membership: &[usize]) -> WeightedGraph {
    let nc = membership.iter().copied().max().map_or(0, |m| m + 1);
    let mut acc: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); nc];
    for u in 0..g.node_count() {
        for &(v, w) in g.neighbors(u) {
            let (cu, cv) = (membership[u], membership[v]);
            // self-loops are stored once; inner edges are seen from both ends
            let add = if u == v { 2.0 * w } else { w };
            *acc[cu].entry(cv).or_insert(0.0) += add;
        }
    }
    let mut out = WeightedGraph::new(nc);
    for (c, row) in acc.into_iter().enumerate() {
        for (d, w) in row {
            if c == d {
                out.adj[c].push((c, w / 2.0));
            } else {
                out.adj[c].push((d, w));
            }
        }
    }
    out.sort_lists();
    out
}

fn leiden_pass(g: &WeightedGraph, init: &[usize], gamma: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut graph = g.clone();
    let mut part = compact(init);
    // aggregate node of every original node
    let mut node_of: Vec<usize> = (0..g.node_count()).collect();
    loop {
        local_move(&graph, &mut part, gamma, rng);
        part = compact(&part);
        let ncomm = part.iter().copied().max().map_or(0, |m| m + 1);
        if ncomm == graph.node_count() {
            break;
        }
        let refined = compact(&refine(&graph, &part, gamma, rng));
        let nref = refined.iter().copied().max().map_or(0, |m| m + 1);
        let next = aggregate(&graph, &refined);
        let mut next_part = vec![0usize; nref];
        for v in 0..graph.node_count() {
            next_part[refined[v]] = part[v];
        }
        for n in node_of.iter_mut() {
            *n = refined[*n];
        }
        part = next_part;
        if nref == graph.node_count() {
            // refinement kept every node apart; another round would repeat this one
            break;
        }
        graph = next;
    }
    compact(&node_of.iter().map(|&a| part[a]).collect::<Vec<_>>())
}

/// Leiden passes from `start` until modularity stops improving.
fn improve(g: &WeightedGraph, start: Vec<usize>, gamma: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64) {
    let mut current = compact(&start);
    let mut current_q = modularity(g, &current, gamma);
    for _ in 0..MAX_PASSES {
        let next = leiden_pass(g, &current, gamma, rng);
        let q = modularity(g, &next, gamma);
        if q > current_q + GAIN_EPS {
            current = next;
            current_q = q;
        } else {
            break;
        }
    }
    (current, current_q)
}

/// Moves a few random nodes into a neighbor's community or a fresh one.
fn perturb(g: &WeightedGraph, part: &mut [usize], rng: &mut ChaCha8Rng) {
    let n = g.node_count();
    let moves = 1 + rng.gen_range(0..=n.min(8) / 3);
    for _ in 0..moves {
        let v = rng.gen_range(0..n);
        let nbrs: Vec<usize> = g.neighbors(v).iter().map(|&(u, _)| u).filter(|&u| u != v).collect();
        if nbrs.is_empty() || rng.gen_bool(0.25) {
            part[v] = n;
        } else {
            part[v] = part[nbrs[rng.gen_range(0..nbrs.len())]];
        }
    }
}

/// Leiden partition of `g`. The first run starts from singletons; each of the
/// remaining `restarts - 1` rounds perturbs the current partition and runs
/// Leiden again from there, keeping the result unless it is worse. The best
/// partition seen is returned. Deterministic for a given seed. Labels are
/// compact, numbered by first appearance over node order.
pub fn leiden(g: &WeightedGraph, gamma: f64, seed: u64, restarts: usize) -> Vec<usize> {
    let n = g.node_count();
    if n == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let singletons: Vec<usize> = (0..n).collect();
    let (mut best, mut best_q) = improve(g, singletons, gamma, &mut rng);
    let (mut current, mut current_q) = (best.clone(), best_q);
    for _ in 1..restarts.max(1) {
        let mut start = current.clone();
        perturb(g, &mut start, &mut rng);
        let (cand, q) = improve(g, start, gamma, &mut rng);
        if q >= current_q - GAIN_EPS {
            current = cand;
            current_q = q;
            if current_q > best_q + GAIN_EPS {
                best = current.clone();
                best_q = current_q;
            }
        }
    }
    best
}
