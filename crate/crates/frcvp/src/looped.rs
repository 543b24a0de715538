//! Route graphs with loops: spanning-tree choice, maximal deviated paths,
//! start-node splitting with virtual vehicle copies, the break-point
//! projection fixed point that aligns bucket boundaries across copies, and a
//! single-copy heuristic for instances where the exact scheme is too big.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::milp::build_va;
use crate::model::{
    build_route_graph, EdgeId, GraphShape, Instance, NodeId, RouteGraph, Vehicle, VehicleId,
};
use crate::objective::{evaluate_schedule, Assignment, Schedule};
use crate::solvers::{branch_and_bound, exact_enumerate};
use crate::timewin::{adaptive_discretize, compute_rtws, Bucket, BucketSet, Rtw};
use crate::{Error, Result, TIME_EPS};

/// A directed spanning tree of the route graph, chosen depth-first from the
/// lowest zero-in-degree node so the choice is reproducible.
#[derive(Debug, Clone)]
pub struct SpanningTree {
    pub edges: BTreeSet<EdgeId>,
    pub root: NodeId,
}

pub fn spanning_tree(instance: &Instance, graph: &RouteGraph) -> Result<SpanningTree> {
    let mut in_deg: BTreeMap<NodeId, usize> = graph.nodes.iter().map(|&n| (n, 0)).collect();
    for &e in &graph.edges {
        *in_deg.get_mut(&instance.network.edge(e).to).unwrap() += 1;
    }
    let root = in_deg
        .iter()
        .find(|(_, &d)| d == 0)
        .map(|(&n, _)| n)
        .unwrap_or(*graph.nodes.iter().next().unwrap());

    let mut tree = BTreeSet::new();
    let mut seen: HashSet<NodeId> = HashSet::new();
    seen.insert(root);
    // Depth-first: lowest neighbor id explored fully before its siblings.
    fn visit(
        graph: &RouteGraph,
        at: NodeId,
        seen: &mut HashSet<NodeId>,
        tree: &mut BTreeSet<EdgeId>,
    ) {
        let mut nbrs: Vec<(NodeId, EdgeId)> =
            graph.neighbors(at).iter().map(|&(m, e, _)| (m, e)).collect();
        nbrs.sort_unstable();
        for (m, e) in nbrs {
            if seen.insert(m) {
                tree.insert(e);
                visit(graph, m, seen, tree);
            }
        }
    }
    visit(graph, root, &mut seen, &mut tree);
    Ok(SpanningTree { edges: tree, root })
}

/// Partitions the off-tree edges into maximal directed chains; every chain
/// starts and ends on the tree (which spans all nodes).
pub fn deviated_paths(
    instance: &Instance,
    graph: &RouteGraph,
    tree: &SpanningTree,
) -> Vec<Vec<EdgeId>> {
    let off: Vec<EdgeId> = graph
        .edges
        .iter()
        .copied()
        .filter(|e| !tree.edges.contains(e))
        .collect();
    let mut out_of: HashMap<NodeId, Vec<EdgeId>> = HashMap::new();
    let mut into: HashMap<NodeId, Vec<EdgeId>> = HashMap::new();
    for &e in &off {
        out_of.entry(instance.network.edge(e).from).or_default().push(e);
        into.entry(instance.network.edge(e).to).or_default().push(e);
    }
    let chain_node = |n: NodeId| {
        out_of.get(&n).map_or(0, Vec::len) == 1 && into.get(&n).map_or(0, Vec::len) == 1
    };

    let mut used: HashSet<EdgeId> = HashSet::new();
    let mut paths = Vec::new();
    for &seed in &off {
        if used.contains(&seed) {
            continue;
        }
        let mut chain = vec![seed];
        // Extend backward through degree-one junctions.
        loop {
            let head = instance.network.edge(chain[0]).from;
            if !chain_node(head) {
                break;
            }
            let prev = into[&head][0];
            if used.contains(&prev) || chain.contains(&prev) {
                break;
            }
            chain.insert(0, prev);
        }
        // Extend forward.
        loop {
            let tail = instance.network.edge(*chain.last().unwrap()).to;
            if !chain_node(tail) {
                break;
            }
            let next = out_of[&tail][0];
            if used.contains(&next) || chain.contains(&next) {
                break;
            }
            chain.push(next);
        }
        used.extend(chain.iter().copied());
        paths.push(chain);
    }
    paths.sort();
    paths
}

/// One extended vehicle: either a lone copy of a real vehicle or one of the
/// per-deviated-path copies of a split vehicle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VirtualVehicle {
    pub ext_id: usize,
    pub parent: VehicleId,
    pub copy_index: usize,
    /// Departure node of the scope in the extended network.
    pub start_node: NodeId,
    /// Edge ids of the scope (edge ids are shared with the input network).
    pub scope: Vec<EdgeId>,
    pub rtw: Rtw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LoopBreakStatus {
    Converged,
    IterationCapped,
}

/// Everything produced by the loop-break preprocess.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoopBreakOutput {
    /// Network with each deviated path's first edge re-rooted at a fresh
    /// split node; edge ids match the input network.
    pub ext_network: RoadNetwork,
    pub root: NodeId,
    pub copies: Vec<VirtualVehicle>,
    /// Parents that kept a single copy.
    pub real: Vec<VehicleId>,
    /// Parents that were split into multiple copies.
    pub virtual_parents: Vec<VehicleId>,
    /// Parent id -> extended ids of its copies, in route order.
    pub mapping: BTreeMap<VehicleId, Vec<usize>>,
    /// Global bucket set keyed by extended id.
    pub buckets: BucketSet,
    /// Time-consistent bucket pairs per (parent, copy i, copy j), i < j.
    pub consistency: BTreeMap<(VehicleId, usize, usize), Vec<(usize, usize)>>,
    pub status: LoopBreakStatus,
    pub quantum: f64,
    #[serde(skip)]
    ext_instance: Option<Instance>,
}

use crate::model::RoadNetwork;

impl LoopBreakOutput {
    pub fn converged(&self) -> bool {
        self.status == LoopBreakStatus::Converged
    }

    /// The tree instance over the extended vehicles.
    pub fn extended_instance(&self) -> Instance {
        self.ext_instance
            .clone()
            .expect("extended instance is built by loop_break")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// How an instance splits at the deviated-path start nodes, independent of
/// any time discretization.
struct SplitStructure {
    ext_network: RoadNetwork,
    /// Per parent (id order): the scope list.
    scopes: BTreeMap<VehicleId, Vec<ScopePiece>>,
}

struct ScopePiece {
    start_node: NodeId,
    edges: Vec<EdgeId>,
    depart_min: f64,
    arrive_max: f64,
}

fn split_structure(instance: &Instance, graph: &RouteGraph) -> Result<SplitStructure> {
    let tree = spanning_tree(instance, graph)?;
    let paths = deviated_paths(instance, graph, &tree);
    if paths.is_empty() {
        return Err(Error::NotLoopy);
    }

    let mut ext_network = instance.network.clone();
    let mut next_node: NodeId = instance.network.nodes.iter().copied().max().unwrap_or(0) + 1;
    // First edge of each deviated path gets re-rooted at a fresh node.
    let mut split_of_edge: HashMap<EdgeId, NodeId> = HashMap::new();
    for path in &paths {
        let first = path[0];
        split_of_edge.insert(first, next_node);
        ext_network.nodes.push(next_node);
        ext_network.edges[first].from = next_node;
        next_node += 1;
    }

    let mut scopes: BTreeMap<VehicleId, Vec<ScopePiece>> = BTreeMap::new();
    for v in &instance.vehicles {
        let total = v.route_time(&instance.network);
        let mut pieces: Vec<ScopePiece> = Vec::new();
        let mut cur_edges: Vec<EdgeId> = Vec::new();
        let mut cur_start = v.origin;
        let mut cur_prefix = 0.0; // travel before the current scope
        let mut prefix = 0.0;
        for (k, &e) in v.route.iter().enumerate() {
            if let Some(&split_node) = split_of_edge.get(&e) {
                if k == 0 {
                    // Origin sits on the split node: the whole route simply
                    // departs from the fresh copy of it.
                    cur_start = split_node;
                } else {
                    pieces.push(ScopePiece {
                        start_node: cur_start,
                        edges: std::mem::take(&mut cur_edges),
                        depart_min: v.t_depart_min + cur_prefix,
                        arrive_max: v.t_arrive_max - (total - prefix),
                    });
                    cur_start = split_node;
                    cur_prefix = prefix;
                }
            }
            cur_edges.push(e);
            prefix += instance.network.edge(e).time;
        }
        pieces.push(ScopePiece {
            start_node: cur_start,
            edges: cur_edges,
            depart_min: v.t_depart_min + cur_prefix,
            arrive_max: v.t_arrive_max,
        });
        scopes.insert(v.id, pieces);
    }
    Ok(SplitStructure { ext_network, scopes })
}

fn build_extended_instance(instance: &Instance, split: &SplitStructure) -> Instance {
    let mut vehicles = Vec::new();
    let mut ext_id = 0usize;
    for (_, pieces) in split.scopes.iter() {
        for piece in pieces {
            let dest = piece
                .edges
                .last()
                .map(|&e| split.ext_network.edge(e).to)
                .unwrap_or(piece.start_node);
            vehicles.push(Vehicle {
                id: ext_id,
                origin: piece.start_node,
                dest,
                t_depart_min: piece.depart_min,
                t_arrive_max: piece.arrive_max,
                route: piece.edges.clone(),
            });
            ext_id += 1;
        }
    }
    Instance {
        network: split.ext_network.clone(),
        vehicles,
        lambda: instance.lambda,
        sigma_l: instance.sigma_l,
        sigma_f: instance.sigma_f,
    }
}

fn lattice(value: f64, quantum: f64) -> Result<i64> {
    let q = value / quantum;
    let r = q.round();
    if (q - r).abs() * quantum > TIME_EPS {
        return Err(Error::QuantumViolated(value, quantum));
    }
    Ok(r as i64)
}

/// Breaks every loop of the instance, computes relative windows for the
/// extended vehicles, discretizes, and runs the alternating shift/vertical
/// break-point projections until the bucket boundaries are consistent
/// across all copies. Window endpoints must sit on the `quantum` lattice.
pub fn loop_break(
    instance: &Instance,
    quantum: f64,
    max_iter: Option<u32>,
) -> Result<LoopBreakOutput> {
    if !(quantum > 0.0) {
        return Err(Error::InvalidParams("quantum must be positive".into()));
    }
    let graph = build_route_graph(instance)?;
    if graph.shape != GraphShape::Loopy {
        return Err(Error::NotLoopy);
    }
    let split = split_structure(instance, &graph)?;
    let ext_instance = build_extended_instance(instance, &split);
    let ext_graph = build_route_graph(&ext_instance)?;
    if ext_graph.shape != GraphShape::Tree {
        return Err(Error::NotATree(
            "splitting the deviated-path start nodes did not yield a tree".into(),
        ));
    }
    let rtws = compute_rtws(&ext_instance, &ext_graph)?;

    // Everything must live on the quantum lattice for the projections to
    // terminate; validate and switch to integer coordinates.
    let starts: Vec<i64> = rtws
        .iter()
        .map(|r| lattice(r.start, quantum))
        .collect::<Result<_>>()?;
    let ends: Vec<i64> = rtws
        .iter()
        .map(|r| lattice(r.end, quantum))
        .collect::<Result<_>>()?;

    let initial = adaptive_discretize(&rtws)?;
    let n_ext = rtws.len();
    let mut points: Vec<BTreeSet<i64>> = vec![BTreeSet::new(); n_ext];
    for (u, r) in rtws.iter().enumerate() {
        for &k in initial.feasible_for(r.vehicle) {
            points[u].insert(lattice(initial.buckets[k].start, quantum)?);
            points[u].insert(lattice(initial.buckets[k].end, quantum)?);
        }
        points[u].insert(starts[u]);
        points[u].insert(ends[u]);
    }

    // Copy bookkeeping: extended ids are assigned in parent order.
    let mut mapping: BTreeMap<VehicleId, Vec<usize>> = BTreeMap::new();
    {
        let mut ext_id = 0usize;
        for (&parent, pieces) in split.scopes.iter() {
            mapping.insert(parent, (ext_id..ext_id + pieces.len()).collect());
            ext_id += pieces.len();
        }
    }
    let virtual_parents: Vec<VehicleId> = mapping
        .iter()
        .filter(|(_, c)| c.len() >= 2)
        .map(|(&p, _)| p)
        .collect();
    let real: Vec<VehicleId> = mapping
        .iter()
        .filter(|(_, c)| c.len() == 1)
        .map(|(&p, _)| p)
        .collect();

    // Projection sources: real vehicles start empty, copies start full.
    let is_virtual: Vec<bool> = (0..n_ext)
        .map(|u| {
            let parent = split
                .scopes
                .iter()
                .flat_map(|(&p, pieces)| std::iter::repeat(p).take(pieces.len()))
                .nth(u)
                .unwrap();
            mapping[&parent].len() >= 2
        })
        .collect();
    let mut delta: Vec<BTreeSet<i64>> = (0..n_ext)
        .map(|u| if is_virtual[u] { points[u].clone() } else { BTreeSet::new() })
        .collect();

    let range = ends.iter().max().unwrap() - starts.iter().min().unwrap();
    let cap = max_iter.unwrap_or((10 * range.max(1)) as u32).max(4);
    let mut shift_mode = true;
    let mut status = LoopBreakStatus::IterationCapped;
    for _ in 0..cap {
        let mut grew = false;
        if shift_mode {
            for &parent in &virtual_parents {
                let copies = &mapping[&parent];
                for &ci in copies {
                    for &cj in copies {
                        if ci == cj {
                            continue;
                        }
                        // Project from cj onto ci at equal window offsets.
                        let shifted: Vec<i64> = delta[cj]
                            .iter()
                            .map(|p| p - starts[cj] + starts[ci])
                            .collect();
                        for p in shifted {
                            grew |= points[ci].insert(p);
                        }
                        delta[ci] = points[ci].clone();
                    }
                }
            }
        } else {
            for u in 0..n_ext {
                for w in 0..n_ext {
                    if u == w {
                        continue;
                    }
                    let in_range: Vec<i64> = delta[w]
                        .iter()
                        .copied()
                        .filter(|&p| starts[u] <= p && p <= ends[u])
                        .collect();
                    for p in in_range {
                        grew |= points[u].insert(p);
                    }
                    delta[u] = points[u].clone();
                }
            }
        }
        if !grew {
            status = LoopBreakStatus::Converged;
            break;
        }
        shift_mode = !shift_mode;
    }

    // Global buckets from the union of all break points; a bucket survives
    // when it fits inside at least one window.
    let mut all: BTreeSet<i64> = BTreeSet::new();
    for set in &points {
        all.extend(set.iter().copied());
    }
    let coords: Vec<i64> = all.into_iter().collect();
    let mut buckets = Vec::new();
    for pair in coords.windows(2) {
        let inside = (0..n_ext).any(|u| starts[u] <= pair[0] && pair[1] <= ends[u]);
        if inside {
            buckets.push(Bucket {
                start: pair[0] as f64 * quantum,
                end: pair[1] as f64 * quantum,
            });
        }
    }
    let mut bucket_set = BucketSet { buckets, feasibility: BTreeMap::new() };
    bucket_set.assign_feasibility(&rtws);

    // Matched offset pairs between copies of each split vehicle.
    let mut consistency: BTreeMap<(VehicleId, usize, usize), Vec<(usize, usize)>> = BTreeMap::new();
    for &parent in &virtual_parents {
        let copies = &mapping[&parent];
        for i in 0..copies.len() {
            for j in i + 1..copies.len() {
                let (ci, cj) = (copies[i], copies[j]);
                let mut pairs = Vec::new();
                for &s in bucket_set.feasible_for(ci) {
                    for &t in bucket_set.feasible_for(cj) {
                        let off_s = lattice(bucket_set.buckets[s].start, quantum)? - starts[ci];
                        let off_t = lattice(bucket_set.buckets[t].start, quantum)? - starts[cj];
                        let end_s = lattice(bucket_set.buckets[s].end, quantum)? - starts[ci];
                        let end_t = lattice(bucket_set.buckets[t].end, quantum)? - starts[cj];
                        if off_s == off_t && end_s == end_t {
                            pairs.push((s, t));
                        }
                    }
                }
                consistency.insert((parent, i, j), pairs);
            }
        }
    }

    let mut copies = Vec::with_capacity(n_ext);
    {
        let mut ext_id = 0usize;
        for (&parent, pieces) in split.scopes.iter() {
            for (copy_index, piece) in pieces.iter().enumerate() {
                copies.push(VirtualVehicle {
                    ext_id,
                    parent,
                    copy_index,
                    start_node: piece.start_node,
                    scope: piece.edges.clone(),
                    rtw: rtws[ext_id],
                });
                ext_id += 1;
            }
        }
    }

    Ok(LoopBreakOutput {
        ext_network: split.ext_network,
        root: ext_graph.root.unwrap(),
        copies,
        real,
        virtual_parents,
        mapping,
        buckets: bucket_set,
        consistency,
        status,
        quantum,
        ext_instance: Some(ext_instance),
    })
}

/// Decodes a bucket assignment of the extended vehicles into departures of
/// the original vehicles: each parent's departure is read off its first
/// copy's bucket midpoint.
pub fn decode_gva_schedule(
    instance: &Instance,
    lb: &LoopBreakOutput,
    assignment: &Assignment,
) -> Result<Schedule> {
    let mut departure = BTreeMap::new();
    for v in &instance.vehicles {
        let first_copy = lb.mapping[&v.id][0];
        let copy = &lb.copies[first_copy];
        let t = assignment.bucket_of.get(&first_copy).ok_or_else(|| {
            Error::InfeasibleAssignment(format!("copy {first_copy} unassigned"))
        })?;
        let instant = lb.buckets.buckets[*t].midpoint();
        // The first scope starts at the vehicle's origin.
        departure.insert(v.id, instant - copy.rtw.offset);
    }
    Ok(Schedule { departure })
}

/// Potential saving of one copy's scope: trail-rate saving against every
/// other vehicle sharing each scope edge in the original instance.
fn scope_potential(instance: &Instance, scope: &[EdgeId]) -> f64 {
    let edge_vehicles = instance.edge_vehicles();
    scope
        .iter()
        .map(|e| {
            let sharing = edge_vehicles.get(e).map_or(0, Vec::len);
            instance.network.edge(*e).cost
                * instance.sigma_f
                * sharing.saturating_sub(1) as f64
        })
        .sum()
}

/// Loop heuristic: keep one copy per split vehicle (the scope with the most
/// potential saving), solve the resulting tree instance, and realize the
/// departures on the original loopy instance.
pub fn heuristic_single_copy(instance: &Instance, budget: Duration) -> Result<(f64, Schedule)> {
    let graph = build_route_graph(instance)?;
    if graph.shape != GraphShape::Loopy {
        // Nothing to discard: plain tree solve.
        let rtws = compute_rtws(instance, &graph)?;
        let buckets = adaptive_discretize(&rtws)?;
        let assignment = solve_tree_assignment(instance, &buckets, budget)?;
        let schedule = crate::objective::decode_schedule(instance, &buckets, &assignment)?;
        let value = evaluate_schedule(instance, &schedule)?;
        return Ok((value, schedule));
    }

    let split = split_structure(instance, &graph)?;
    // Choose the most promising scope per parent (ties keep the first).
    let mut reduced_vehicles = Vec::new();
    let mut kept_piece: BTreeMap<VehicleId, usize> = BTreeMap::new();
    for (vid, pieces) in split.scopes.iter() {
        let mut best = 0usize;
        let mut best_value = f64::NEG_INFINITY;
        for (i, piece) in pieces.iter().enumerate() {
            let p = scope_potential(instance, &piece.edges);
            if p > best_value + 1e-12 {
                best = i;
                best_value = p;
            }
        }
        kept_piece.insert(*vid, best);
        let piece = &pieces[best];
        let dest = piece
            .edges
            .last()
            .map(|&e| split.ext_network.edge(e).to)
            .unwrap_or(piece.start_node);
        reduced_vehicles.push(Vehicle {
            id: *vid,
            origin: piece.start_node,
            dest,
            t_depart_min: piece.depart_min,
            t_arrive_max: piece.arrive_max,
            route: piece.edges.clone(),
        });
    }
    let reduced = Instance {
        network: split.ext_network.clone(),
        vehicles: reduced_vehicles,
        lambda: instance.lambda,
        sigma_l: instance.sigma_l,
        sigma_f: instance.sigma_f,
    };
    let reduced_graph = build_route_graph(&reduced)?;
    let rtws = compute_rtws(&reduced, &reduced_graph)?;
    let buckets = adaptive_discretize(&rtws)?;
    let assignment = solve_tree_assignment(&reduced, &buckets, budget)?;
    let partial = crate::objective::decode_schedule(&reduced, &buckets, &assignment)?;

    // Map scope departures back to origin departures of the full routes.
    let mut departure = BTreeMap::new();
    for v in &instance.vehicles {
        let piece_idx = kept_piece[&v.id];
        let mut prefix = 0.0;
        let pieces = &split.scopes[&v.id];
        for piece in pieces.iter().take(piece_idx) {
            prefix += piece
                .edges
                .iter()
                .map(|&e| instance.network.edge(e).time)
                .sum::<f64>();
        }
        departure.insert(v.id, partial.departure[&v.id] - prefix);
    }
    let schedule = Schedule { departure };
    let value = evaluate_schedule(instance, &schedule)?;
    Ok((value, schedule))
}

/// Small instances go to exhaustive search, everything else to branch and
/// bound with the iterative greedy as a safety net.
fn solve_tree_assignment(
    instance: &Instance,
    buckets: &BucketSet,
    budget: Duration,
) -> Result<Assignment> {
    let space: u128 = instance
        .vehicles
        .iter()
        .map(|v| buckets.feasible_for(v.id).len() as u128)
        .product();
    if space <= 4096 {
        return Ok(exact_enumerate(instance, buckets, None)?.1);
    }
    let model = build_va(instance, buckets)?;
    match branch_and_bound(&model, budget) {
        Ok(out) => match out.assignment(&model) {
            Some(a) if !a.bucket_of.is_empty() => Ok(a),
            _ => Ok(crate::approx::greedy_iterative(instance, buckets)?.1),
        },
        Err(_) => Ok(crate::approx::greedy_iterative(instance, buckets)?.1),
    }
}
