//! Shared instance generators and independent oracles for the integration
//! and acceptance suites. Oracles implement the arithmetic from first
//! principles so they stay independent of the library's evaluation path.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use frcvp::model::{build_route_graph, Edge, GraphShape, Instance, NodeId, RoadNetwork, Vehicle};
use frcvp::timewin::{adaptive_discretize, compute_rtws, BucketSet};

/// Random single-tree instance with unbounded platoons, trail rate at least
/// the lead rate, and at most `max_buckets` feasible buckets per vehicle.
pub fn random_tree_instance(
    seed: u64,
    max_vehicles: usize,
    max_buckets: usize,
) -> (Instance, BucketSet) {
    for attempt in 0..400u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(attempt));
        let n_nodes = rng.gen_range(4..=8usize);
        let mut edges: Vec<Edge> = Vec::new();
        for child in 1..n_nodes as NodeId {
            let parent = rng.gen_range(0..child);
            let cost = [0.5, 1.0, 1.5, 2.0][rng.gen_range(0..4)];
            edges.push(Edge { from: parent, to: child, time: 1.0, cost });
        }
        let mut out_of: HashMap<NodeId, Vec<usize>> = HashMap::new();
        for (i, e) in edges.iter().enumerate() {
            out_of.entry(e.from).or_default().push(i);
        }

        let n_vehicles = rng.gen_range(3..=max_vehicles);
        let mut vehicles = Vec::new();
        for id in 0..n_vehicles {
            let mut route = Vec::new();
            let mut at = rng.gen_range(0..n_nodes as NodeId);
            for _ in 0..rng.gen_range(1..=3usize) {
                let Some(outs) = out_of.get(&at) else { break };
                let e = outs[rng.gen_range(0..outs.len())];
                route.push(e);
                at = edges[e].to;
            }
            if route.is_empty() {
                // Fall back to any edge as a one-hop route.
                route.push(rng.gen_range(0..edges.len()));
            }
            let origin = edges[route[0]].from;
            let dest = edges[*route.last().unwrap()].to;
            let depart = rng.gen_range(0..=3) as f64;
            let slack = rng.gen_range(0..=2) as f64;
            let travel = route.len() as f64;
            vehicles.push(Vehicle {
                id,
                origin,
                dest,
                t_depart_min: depart,
                t_arrive_max: depart + travel + slack,
                route,
            });
        }
        let sigma_f = 0.1 + 0.2 * rng.gen::<f64>();
        let sigma_l = sigma_f * rng.gen::<f64>();
        let instance = Instance {
            network: RoadNetwork { nodes: (0..n_nodes as NodeId).collect(), edges },
            vehicles,
            lambda: None,
            sigma_l,
            sigma_f,
        };
        let Ok(graph) = build_route_graph(&instance) else { continue };
        if graph.shape != GraphShape::Tree {
            continue;
        }
        let Ok(rtws) = compute_rtws(&instance, &graph) else { continue };
        let Ok(buckets) = adaptive_discretize(&rtws) else { continue };
        let ok = instance
            .vehicles
            .iter()
            .all(|v| (1..=max_buckets).contains(&buckets.feasible_for(v.id).len()));
        if ok {
            return (instance, buckets);
        }
    }
    panic!("no suitable random instance for seed {seed}");
}

/// Per-edge saving of `n` simultaneous vehicles, written out from the
/// packing rules rather than through the library.
pub fn oracle_edge_saving(n: u32, lambda: Option<u32>, sigma_l: f64, sigma_f: f64) -> f64 {
    match lambda {
        None => {
            if n <= 1 {
                0.0
            } else {
                sigma_l + (n as f64 - 1.0) * sigma_f
            }
        }
        Some(l) => {
            let full = n / l;
            let rem = n % l;
            let open_leads = u32::from(rem >= 2);
            let trailing = n - full - u32::from(rem >= 1);
            sigma_l * full as f64 + sigma_l * open_leads as f64 + sigma_f * trailing as f64
        }
    }
}

/// Value of a complete bucket choice, counted directly over (edge, bucket)
/// groups.
pub fn oracle_assignment_value(instance: &Instance, choice: &[(usize, usize)]) -> f64 {
    let mut count: HashMap<(usize, usize), u32> = HashMap::new();
    for &(vid, t) in choice {
        for &e in &instance.vehicle(vid).route {
            *count.entry((e, t)).or_insert(0) += 1;
        }
    }
    count
        .into_iter()
        .map(|((e, _), n)| {
            instance.network.edge(e).cost
                * oracle_edge_saving(n, instance.lambda, instance.sigma_l, instance.sigma_f)
        })
        .sum()
}

/// Schedule-space brute force over all bucket midpoints: every vehicle takes
/// the midpoint of one feasible bucket on the shared axis; simultaneity is
/// midpoint equality. Returns the best total saving.
pub fn midpoint_brute_force(instance: &Instance, buckets: &BucketSet) -> f64 {
    let ids: Vec<usize> = instance.vehicles.iter().map(|v| v.id).collect();
    let mut best = f64::NEG_INFINITY;
    let mut stack: Vec<Vec<usize>> = vec![Vec::new()];
    while let Some(prefix) = stack.pop() {
        if prefix.len() == ids.len() {
            let choice: Vec<(usize, usize)> =
                ids.iter().copied().zip(prefix.iter().copied()).collect();
            best = best.max(oracle_assignment_value(instance, &choice));
            continue;
        }
        for &t in buckets.feasible_for(ids[prefix.len()]) {
            let mut next = prefix.clone();
            next.push(t);
            stack.push(next);
        }
    }
    best.max(0.0)
}

/// Minimum clique partition of an interval set, by subset dynamic
/// programming; cliques are interval sets with a common point.
pub fn min_clique_partition(windows: &[(f64, f64)]) -> usize {
    let n = windows.len();
    assert!(n <= 16);
    let full = (1usize << n) - 1;
    // A subset is a clique iff the intersection of its windows is non-empty.
    let mut is_clique = vec![false; full + 1];
    for mask in 1..=full {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for (i, &(a, b)) in windows.iter().enumerate() {
            if mask & (1 << i) != 0 {
                lo = lo.max(a);
                hi = hi.min(b);
            }
        }
        is_clique[mask] = lo <= hi;
    }
    let mut dp = vec![usize::MAX; full + 1];
    dp[0] = 0;
    for mask in 1..=full {
        // Iterate sub-masks containing the lowest set bit.
        let low = mask & mask.wrapping_neg();
        let mut sub = mask;
        while sub != 0 {
            if sub & low != 0 && is_clique[sub] && dp[mask ^ sub] != usize::MAX {
                dp[mask] = dp[mask].min(dp[mask ^ sub] + 1);
            }
            sub = (sub - 1) & mask;
        }
    }
    dp[full]
}
