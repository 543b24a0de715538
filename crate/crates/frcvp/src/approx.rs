//! Approximation algorithms over a bucketed tree instance: the two-bucket
//! greedy with its competitive ratio, the iterative greedy, the exact
//! uniform-traffic special case, the contraction/decomposition/enumeration
//! scheme with an accuracy guarantee, and LP randomized rounding.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::milp::build_lp_relax;
use crate::model::{EdgeId, Instance, NodeId, VehicleId};
use crate::objective::{evaluate_assignment, group_saving_unchecked, saving_rate, Assignment};
use crate::solvers::{simplex_solve, LpStatus};
use crate::timewin::{Bucket, BucketSet, Rtw};
use crate::{Error, Result, TIME_EPS};

/// A uniform division of the coordination axis into equal buckets; every
/// vehicle's feasible set is a contiguous index run.
#[derive(Debug, Clone)]
pub struct UniformBuckets {
    pub set: BucketSet,
    pub t_count: usize,
}

impl UniformBuckets {
    /// Divides the hull of the windows into `t_count` equal buckets; a
    /// bucket is feasible for a vehicle when they overlap in more than a
    /// point (or contain a degenerate window).
    pub fn from_rtws(rtws: &[Rtw], t_count: usize) -> Result<Self> {
        if rtws.is_empty() || t_count == 0 {
            return Err(Error::InvalidParams("need windows and a bucket count".into()));
        }
        let lo = rtws.iter().map(|r| r.start).fold(f64::INFINITY, f64::min);
        let hi = rtws.iter().map(|r| r.end).fold(f64::NEG_INFINITY, f64::max);
        let width = ((hi - lo) / t_count as f64).max(TIME_EPS);
        let buckets: Vec<Bucket> = (0..t_count)
            .map(|k| Bucket { start: lo + k as f64 * width, end: lo + (k + 1) as f64 * width })
            .collect();
        let mut feasibility = BTreeMap::new();
        for r in rtws {
            let feas: Vec<usize> = buckets
                .iter()
                .enumerate()
                .filter(|(_, b)| {
                    let overlap = r.end.min(b.end) - r.start.max(b.start);
                    overlap > TIME_EPS || (r.width() <= TIME_EPS && overlap >= -TIME_EPS)
                })
                .map(|(k, _)| k)
                .collect();
            if feas.is_empty() {
                return Err(Error::InvalidParams(format!(
                    "vehicle {} overlaps no bucket",
                    r.vehicle
                )));
            }
            feasibility.insert(r.vehicle, feas);
        }
        Ok(UniformBuckets { set: BucketSet { buckets, feasibility }, t_count })
    }

    /// Builds the abstract instance directly from contiguous index runs
    /// `(vehicle, first, last)` over `t_count` unit buckets.
    pub fn from_runs(runs: &[(VehicleId, usize, usize)], t_count: usize) -> Result<Self> {
        let buckets: Vec<Bucket> = (0..t_count)
            .map(|k| Bucket { start: k as f64, end: (k + 1) as f64 })
            .collect();
        let mut feasibility = BTreeMap::new();
        for &(v, first, last) in runs {
            if first > last || last >= t_count {
                return Err(Error::InvalidParams(format!(
                    "bad run [{first}, {last}] for vehicle {v}"
                )));
            }
            feasibility.insert(v, (first..=last).collect());
        }
        Ok(UniformBuckets { set: BucketSet { buckets, feasibility }, t_count })
    }
}

fn require_unbounded(instance: &Instance) -> Result<()> {
    if instance.lambda.is_some() {
        return Err(Error::CapacityNotSupported);
    }
    Ok(())
}

fn first_feasible(buckets: &BucketSet, v: VehicleId) -> usize {
    buckets.feasible_for(v)[0]
}

/// Two-bucket greedy: takes the best of all single-bucket mass assignments
/// and all pairwise split assignments, where vehicles feasible in both
/// buckets go to the side with the larger marginal saving outside the
/// pair-shared core edges. Returns the greedy value and a completed
/// assignment realizing at least that value.
pub fn greedy_two_bucket(
    instance: &Instance,
    uniform: &UniformBuckets,
) -> Result<(f64, Assignment)> {
    require_unbounded(instance)?;
    let buckets = &uniform.set;
    let t_count = uniform.t_count;
    let feasible_at = |t: usize| -> Vec<VehicleId> {
        instance
            .vehicles
            .iter()
            .map(|v| v.id)
            .filter(|&v| buckets.feasible_for(v).contains(&t))
            .collect()
    };

    #[derive(Clone)]
    enum Plan {
        Single(usize, Vec<VehicleId>),
        Pair { t1: usize, t2: usize, side1: Vec<VehicleId>, side2: Vec<VehicleId> },
    }

    let mut best_value = f64::NEG_INFINITY;
    let mut best_plan = Plan::Single(0, Vec::new());
    for t in 0..t_count {
        let group = feasible_at(t);
        let value = group_saving_unchecked(instance, &group, None);
        if value > best_value {
            best_value = value;
            best_plan = Plan::Single(t, group);
        }
    }

    for t1 in 0..t_count {
        for t2 in t1 + 1..t_count {
            let mut only1: Vec<VehicleId> = Vec::new();
            let mut only2: Vec<VehicleId> = Vec::new();
            let mut both: Vec<VehicleId> = Vec::new();
            for v in &instance.vehicles {
                let feas = buckets.feasible_for(v.id);
                match (feas.contains(&t1), feas.contains(&t2)) {
                    (true, true) => both.push(v.id),
                    (true, false) => only1.push(v.id),
                    (false, true) => only2.push(v.id),
                    (false, false) => {}
                }
            }
            // Core edges: shared by at least two of the both-feasible set.
            let mut count: HashMap<EdgeId, u32> = HashMap::new();
            for &v in &both {
                for &e in &instance.vehicle(v).route {
                    *count.entry(e).or_insert(0) += 1;
                }
            }
            let core: BTreeSet<EdgeId> = count
                .into_iter()
                .filter(|&(_, n)| n >= 2)
                .map(|(e, _)| e)
                .collect();

            let mut side1 = only1.clone();
            let mut side2 = only2.clone();
            for &v in &both {
                let outside: BTreeSet<EdgeId> = instance
                    .vehicle(v)
                    .route
                    .iter()
                    .copied()
                    .filter(|e| !core.contains(e))
                    .collect();
                let gain = |base: &[VehicleId]| {
                    let mut with: Vec<VehicleId> = base.to_vec();
                    with.push(v);
                    group_saving_unchecked(instance, &with, Some(&outside))
                        - group_saving_unchecked(instance, base, Some(&outside))
                };
                if gain(&only1) >= gain(&only2) {
                    side1.push(v);
                } else {
                    side2.push(v);
                }
            }
            let value = group_saving_unchecked(instance, &side1, None)
                + group_saving_unchecked(instance, &side2, None);
            if value > best_value {
                best_value = value;
                best_plan = Plan::Pair { t1, t2, side1, side2 };
            }
        }
    }

    let mut bucket_of: BTreeMap<VehicleId, usize> = BTreeMap::new();
    match best_plan {
        Plan::Single(t, group) => {
            for v in group {
                bucket_of.insert(v, t);
            }
        }
        Plan::Pair { t1, t2, side1, side2 } => {
            for v in side1 {
                bucket_of.insert(v, t1);
            }
            for v in side2 {
                bucket_of.insert(v, t2);
            }
        }
    }
    for v in &instance.vehicles {
        bucket_of
            .entry(v.id)
            .or_insert_with(|| first_feasible(buckets, v.id));
    }
    Ok((best_value.max(0.0), Assignment { bucket_of }))
}

/// Iterative greedy: repeatedly commits the bucket whose remaining feasible
/// vehicles save the most when sent there together, then retires it.
pub fn greedy_iterative(instance: &Instance, buckets: &BucketSet) -> Result<(f64, Assignment)> {
    let mut remaining: BTreeSet<VehicleId> = instance.vehicles.iter().map(|v| v.id).collect();
    let mut open: BTreeSet<usize> = instance
        .vehicles
        .iter()
        .flat_map(|v| buckets.feasible_for(v.id).iter().copied())
        .collect();
    let mut bucket_of: BTreeMap<VehicleId, usize> = BTreeMap::new();

    while !remaining.is_empty() {
        let mut best_t = None;
        let mut best_q = f64::NEG_INFINITY;
        for &t in &open {
            let group: Vec<VehicleId> = remaining
                .iter()
                .copied()
                .filter(|&v| buckets.feasible_for(v).contains(&t))
                .collect();
            let q = bucket_value(instance, &group);
            if q > best_q + 1e-12 {
                best_q = q;
                best_t = Some(t);
            } else if best_t.is_none() {
                best_t = Some(t);
                best_q = q;
            }
        }
        let Some(t) = best_t else {
            return Err(Error::InfeasibleAssignment(
                "vehicles left without an open feasible bucket".into(),
            ));
        };
        for v in remaining
            .iter()
            .copied()
            .filter(|&v| buckets.feasible_for(v).contains(&t))
            .collect::<Vec<_>>()
        {
            bucket_of.insert(v, t);
            remaining.remove(&v);
        }
        open.remove(&t);
    }
    let assignment = Assignment { bucket_of };
    let (value, _) = evaluate_assignment(instance, buckets, &assignment)?;
    Ok((value, assignment))
}

/// Capacity-aware saving of one simultaneous group.
fn bucket_value(instance: &Instance, group: &[VehicleId]) -> f64 {
    let mut count: HashMap<EdgeId, u32> = HashMap::new();
    for &v in group {
        for &e in &instance.vehicle(v).route {
            *count.entry(e).or_insert(0) += 1;
        }
    }
    count
        .into_iter()
        .map(|(e, n)| {
            crate::objective::pack_platoons(n, instance.lambda).saving(
                instance.network.edge(e).cost,
                instance.sigma_l,
                instance.sigma_f,
            )
        })
        .sum()
}

/// Exact special case: when the per-bucket route-sharing kernels are
/// pairwise disjoint across buckets, sending each kernel to its bucket is
/// optimal. Returns `None` when the kernels overlap.
pub fn uniform_case_solve(
    instance: &Instance,
    uniform: &UniformBuckets,
) -> Result<Option<Assignment>> {
    require_unbounded(instance)?;
    let buckets = &uniform.set;
    let mut kernel_of: BTreeMap<VehicleId, usize> = BTreeMap::new();
    for t in 0..uniform.t_count {
        let group: Vec<VehicleId> = instance
            .vehicles
            .iter()
            .map(|v| v.id)
            .filter(|&v| buckets.feasible_for(v).contains(&t))
            .collect();
        for &u in &group {
            let ru: HashSet<EdgeId> = instance.vehicle(u).route.iter().copied().collect();
            let shares = group.iter().any(|&v| {
                v != u && instance.vehicle(v).route.iter().any(|e| ru.contains(e))
            });
            if shares {
                if kernel_of.insert(u, t).is_some() {
                    return Ok(None);
                }
            }
        }
    }
    let mut bucket_of = kernel_of;
    for v in &instance.vehicles {
        bucket_of
            .entry(v.id)
            .or_insert_with(|| first_feasible(buckets, v.id));
    }
    Ok(Some(Assignment { bucket_of }))
}

/// A tree with some edges contracted away: surviving union edges plus a
/// node-merging map.
#[derive(Debug, Clone)]
pub struct ContractedTree {
    /// Surviving union edges, ascending.
    pub edges: Vec<EdgeId>,
    rep: HashMap<NodeId, NodeId>,
}

impl ContractedTree {
    /// Merged-node representative.
    pub fn rep(&self, n: NodeId) -> NodeId {
        let mut at = n;
        while let Some(&p) = self.rep.get(&at) {
            if p == at {
                break;
            }
            at = p;
        }
        at
    }

    pub fn endpoints(&self, instance: &Instance, e: EdgeId) -> (NodeId, NodeId) {
        let edge = instance.network.edge(e);
        (self.rep(edge.from), self.rep(edge.to))
    }
}

/// Removes every union edge shared by at least `n0` vehicles, merging its
/// endpoints. Returns the contracted tree and the removed edges.
pub fn contract_heavy_edges(instance: &Instance, n0: usize) -> (ContractedTree, Vec<EdgeId>) {
    let edge_vehicles = instance.edge_vehicles();
    let mut removed = Vec::new();
    let mut rep: HashMap<NodeId, NodeId> = HashMap::new();
    let mut edges: Vec<EdgeId> = Vec::new();
    for (&e, members) in &edge_vehicles {
        if members.len() >= n0 {
            removed.push(e);
        } else {
            edges.push(e);
        }
    }
    let mut tree = ContractedTree { edges, rep: HashMap::new() };
    for &e in &removed {
        let edge = instance.network.edge(e);
        let (a, b) = (tree.rep(edge.from), tree.rep(edge.to));
        if a != b {
            rep.insert(a.max(b), a.min(b));
            tree.rep = rep.clone();
        }
    }
    tree.rep = rep;
    (tree, removed)
}

/// A sub-tree produced by the decomposition; holds contracted-tree edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubTree {
    pub edges: Vec<EdgeId>,
}

fn adjacency(
    instance: &Instance,
    tree: &ContractedTree,
    edges: &BTreeSet<EdgeId>,
) -> HashMap<NodeId, Vec<(NodeId, EdgeId, bool)>> {
    let mut adj: HashMap<NodeId, Vec<(NodeId, EdgeId, bool)>> = HashMap::new();
    for &e in edges {
        let (a, b) = tree.endpoints(instance, e);
        adj.entry(a).or_default().push((b, e, true));
        adj.entry(b).or_default().push((a, e, false));
    }
    for v in adj.values_mut() {
        v.sort_unstable();
    }
    adj
}

/// Longest extension of a maximal directed path in the contracted tree,
/// started from the lowest zero-in-degree merged node.
pub fn maximal_directed_path(instance: &Instance, tree: &ContractedTree) -> Vec<EdgeId> {
    let edge_set: BTreeSet<EdgeId> = tree.edges.iter().copied().collect();
    maximal_path_in(instance, tree, &edge_set, None)
}

/// Maximal directed path within `edges`; when `through` is given the path
/// is grown from that edge in both directions.
fn maximal_path_in(
    instance: &Instance,
    tree: &ContractedTree,
    edges: &BTreeSet<EdgeId>,
    through: Option<EdgeId>,
) -> Vec<EdgeId> {
    if edges.is_empty() {
        return Vec::new();
    }
    let adj = adjacency(instance, tree, edges);
    let seed = match through {
        Some(e) => e,
        None => {
            // Start from the lowest merged node without incoming edges.
            let mut in_deg: BTreeMap<NodeId, usize> = BTreeMap::new();
            for &e in edges {
                let (a, b) = tree.endpoints(instance, e);
                in_deg.entry(a).or_insert(0);
                *in_deg.entry(b).or_insert(0) += 1;
            }
            let start = in_deg
                .iter()
                .find(|(_, &d)| d == 0)
                .map(|(&n, _)| n)
                .unwrap_or_else(|| *in_deg.keys().next().unwrap());
            adj[&start]
                .iter()
                .find(|&&(_, _, fwd)| fwd)
                .map(|&(_, e, _)| e)
                .unwrap_or(*edges.iter().next().unwrap())
        }
    };
    let mut path = vec![seed];
    // Forward from the head.
    loop {
        let tail = tree.endpoints(instance, *path.last().unwrap()).1;
        let next = adj
            .get(&tail)
            .and_then(|v| v.iter().find(|&&(_, e, fwd)| fwd && !path.contains(&e)));
        match next {
            Some(&(_, e, _)) => path.push(e),
            None => break,
        }
    }
    // Backward from the start.
    loop {
        let head = tree.endpoints(instance, path[0]).0;
        let prev = adj
            .get(&head)
            .and_then(|v| v.iter().find(|&&(_, e, fwd)| !fwd && !path.contains(&e)));
        match prev {
            Some(&(_, e, _)) => path.insert(0, e),
            None => break,
        }
    }
    path
}

/// Component of `edges` minus `cut` that contains `keep`.
fn component_edges(
    instance: &Instance,
    tree: &ContractedTree,
    edges: &BTreeSet<EdgeId>,
    cut: EdgeId,
    keep: NodeId,
) -> BTreeSet<EdgeId> {
    let adj = adjacency(instance, tree, edges);
    let mut seen: HashSet<NodeId> = HashSet::new();
    let mut out: BTreeSet<EdgeId> = BTreeSet::new();
    let mut stack = vec![keep];
    seen.insert(keep);
    while let Some(n) = stack.pop() {
        for &(m, e, _) in adj.get(&n).map(Vec::as_slice).unwrap_or(&[]) {
            if e == cut {
                continue;
            }
            out.insert(e);
            if seen.insert(m) {
                stack.push(m);
            }
        }
    }
    out
}

/// Recursive sweep decomposition: branches hanging off the path are
/// decomposed first (their undersized remainders stay attached), then the
/// path is swept, cutting a sub-tree whenever the part behind the sweep
/// reaches `n1` edges. The sub-trees partition the edges; only the final
/// remainder may be smaller than `n1`.
pub fn decompose_tree(
    instance: &Instance,
    tree: &ContractedTree,
    path: &[EdgeId],
    n1: usize,
) -> Vec<SubTree> {
    let all: BTreeSet<EdgeId> = tree.edges.iter().copied().collect();
    let (mut pieces, leftover) = decompose_inner(instance, tree, path.to_vec(), all, n1);
    if !leftover.is_empty() {
        pieces.push(SubTree { edges: leftover.into_iter().collect() });
    }
    pieces
}

fn decompose_inner(
    instance: &Instance,
    tree: &ContractedTree,
    mut path: Vec<EdgeId>,
    mut edges: BTreeSet<EdgeId>,
    n1: usize,
) -> (Vec<SubTree>, BTreeSet<EdgeId>) {
    let mut pieces: Vec<SubTree> = Vec::new();

    // Path nodes in order.
    let mut nodes: Vec<NodeId> = Vec::new();
    if let Some(&first) = path.first() {
        nodes.push(tree.endpoints(instance, first).0);
        for &e in &path {
            nodes.push(tree.endpoints(instance, e).1);
        }
    }

    // Recurse into the branches hanging off high-degree path nodes.
    for &s in &nodes {
        loop {
            let adj = adjacency(instance, tree, &edges);
            let Some(nbrs) = adj.get(&s) else { break };
            if nbrs.len() <= 2 {
                break;
            }
            let Some(&(other, e, _)) = nbrs.iter().find(|&&(_, e, _)| !path.contains(&e)) else {
                break;
            };
            let mut branch = component_edges(instance, tree, &edges, e, other);
            branch.insert(e);
            let branch_path = maximal_path_in(instance, tree, &branch, Some(e));
            let (sub, leftover) = decompose_inner(instance, tree, branch_path, branch, n1);
            // Cut pieces leave the tree; the branch leftover stays attached.
            for piece in &sub {
                for &pe in &piece.edges {
                    edges.remove(&pe);
                }
            }
            pieces.extend(sub);
            let _ = leftover;
            // All branch edges either left or remain; either way this branch
            // is settled, but another branch may hang at the same node.
            if adjacency(instance, tree, &edges)
                .get(&s)
                .map_or(0, Vec::len)
                <= 2
            {
                break;
            }
            // Avoid re-walking a branch that kept all of its edges.
            if edges.contains(&e) {
                break;
            }
        }
    }

    // Sweep the path, cutting once the tree behind the sweep is large
    // enough.
    let mut root = match path.first() {
        Some(&e) => tree.endpoints(instance, e).0,
        None => return (pieces, edges),
    };
    let mut k = 0usize;
    while k + 1 < path.len() {
        let e = path[k];
        let (_, s2) = tree.endpoints(instance, e);
        let behind = component_edges(instance, tree, &edges, e, root);
        if behind.len() >= n1 {
            let mut piece: BTreeSet<EdgeId> = behind;
            piece.insert(e);
            for &pe in &piece {
                edges.remove(&pe);
            }
            pieces.push(SubTree { edges: piece.into_iter().collect() });
            root = s2;
            path.drain(..=k);
            k = 0;
        } else {
            k += 1;
        }
    }
    (pieces, edges)
}

/// Regularity constants of an instance family.
#[derive(Debug, Clone, Copy)]
pub struct Regularity {
    /// Bound on max edge cost over min edge cost.
    pub cost_ratio: f64,
    /// Bound on route length in edges.
    pub max_route_len: usize,
    /// Bound on node in- and out-degree.
    pub max_degree: usize,
}

impl Regularity {
    /// Measures the constants of a concrete instance.
    pub fn measure(instance: &Instance) -> Regularity {
        let mut cmin = f64::INFINITY;
        let mut cmax = 0.0f64;
        let mut used: BTreeSet<EdgeId> = BTreeSet::new();
        let mut route_len = 0usize;
        for v in &instance.vehicles {
            route_len = route_len.max(v.route.len());
            used.extend(v.route.iter().copied());
        }
        let mut in_deg: HashMap<NodeId, usize> = HashMap::new();
        let mut out_deg: HashMap<NodeId, usize> = HashMap::new();
        for &e in &used {
            let edge = instance.network.edge(e);
            cmin = cmin.min(edge.cost);
            cmax = cmax.max(edge.cost);
            *out_deg.entry(edge.from).or_insert(0) += 1;
            *in_deg.entry(edge.to).or_insert(0) += 1;
        }
        let degree = in_deg
            .values()
            .chain(out_deg.values())
            .copied()
            .max()
            .unwrap_or(1);
        Regularity {
            cost_ratio: if cmin > 0.0 { cmax / cmin } else { f64::INFINITY },
            max_route_len: route_len.max(1),
            max_degree: degree,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PtasParams {
    /// Heavy-traffic contraction threshold.
    pub n0: usize,
    /// Sub-tree size threshold.
    pub n1: usize,
    pub eps: f64,
    /// Regularity constants; without them the guarantee flag stays off.
    pub regularity: Option<Regularity>,
    /// Per-sub-tree enumeration budget.
    pub enum_limit: u128,
}

impl PtasParams {
    pub fn heuristic(n0: usize, n1: usize) -> Self {
        PtasParams { n0, n1, eps: 1.0, regularity: None, enum_limit: 1 << 22 }
    }

    fn meets_thresholds(&self, t_count: usize) -> bool {
        match &self.regularity {
            None => false,
            Some(r) => {
                let need_n0 = (1.0 + 1.0 / self.eps) * t_count as f64;
                let need_n1 = 5.0
                    * (r.max_route_len as f64).powi(4)
                    * (self.n0 as f64).powi(3)
                    * r.cost_ratio
                    / self.eps;
                self.n0 as f64 >= need_n0 - 1e-9 && self.n1 as f64 >= need_n1 - 1e-9
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct PtasOutcome {
    pub value: f64,
    pub assignment: Assignment,
    /// True when the parameters meet the accuracy thresholds and no
    /// sub-tree fell back to the greedy.
    pub guarantee: bool,
}

/// Saving over `edges` when the listed vehicles take the given buckets.
fn value_on_edges(
    instance: &Instance,
    edges: &BTreeSet<EdgeId>,
    chosen: &BTreeMap<VehicleId, usize>,
) -> f64 {
    let mut count: HashMap<(EdgeId, usize), u32> = HashMap::new();
    for (&v, &t) in chosen {
        for &e in &instance.vehicle(v).route {
            if edges.contains(&e) {
                *count.entry((e, t)).or_insert(0) += 1;
            }
        }
    }
    count
        .into_iter()
        .map(|((e, _), n)| {
            instance.network.edge(e).cost * saving_rate(n, instance.sigma_l, instance.sigma_f)
        })
        .sum()
}

/// Contraction, decomposition, per-sub-tree exhaustive assignment: heavy
/// edges are dropped first (dense edges are near-optimal under any
/// schedule), the rest is cut into bounded sub-trees, and each sub-tree is
/// solved by enumeration over its not-yet-fixed vehicles.
pub fn ptas(
    instance: &Instance,
    uniform: &UniformBuckets,
    params: &PtasParams,
) -> Result<PtasOutcome> {
    require_unbounded(instance)?;
    let buckets = &uniform.set;
    let (tree, _removed) = contract_heavy_edges(instance, params.n0);
    let mut fixed: BTreeMap<VehicleId, usize> = BTreeMap::new();
    let mut guarantee = params.meets_thresholds(uniform.t_count);

    if !tree.edges.is_empty() {
        let path = maximal_directed_path(instance, &tree);
        let pieces = decompose_tree(instance, &tree, &path, params.n1);
        for piece in &pieces {
            let piece_edges: BTreeSet<EdgeId> = piece.edges.iter().copied().collect();
            let unfixed: Vec<VehicleId> = instance
                .vehicles
                .iter()
                .map(|v| v.id)
                .filter(|&v| {
                    !fixed.contains_key(&v)
                        && instance.vehicle(v).route.iter().any(|e| piece_edges.contains(e))
                })
                .collect();
            if unfixed.is_empty() {
                continue;
            }
            let space: u128 = unfixed
                .iter()
                .map(|&v| buckets.feasible_for(v).len() as u128)
                .product();
            if space > params.enum_limit {
                // Too big to enumerate: greedy fallback on this sub-tree.
                guarantee = false;
                let sub = Instance {
                    network: instance.network.clone(),
                    vehicles: instance
                        .vehicles
                        .iter()
                        .filter(|v| unfixed.contains(&v.id))
                        .cloned()
                        .collect(),
                    lambda: instance.lambda,
                    sigma_l: instance.sigma_l,
                    sigma_f: instance.sigma_f,
                };
                let (_, partial) = greedy_iterative(&sub, buckets)?;
                fixed.extend(partial.bucket_of);
                continue;
            }
            // Exhaustive assignment of the unfixed vehicles, scored on the
            // sub-tree edges together with already-fixed vehicles.
            let mut chosen: BTreeMap<VehicleId, usize> = fixed
                .iter()
                .filter(|(v, _)| {
                    instance
                        .vehicle(**v)
                        .route
                        .iter()
                        .any(|e| piece_edges.contains(e))
                })
                .map(|(&v, &t)| (v, t))
                .collect();
            let mut best_value = f64::NEG_INFINITY;
            let mut best: Vec<usize> = Vec::new();
            let mut odometer: Vec<usize> = vec![0; unfixed.len()];
            loop {
                for (i, &v) in unfixed.iter().enumerate() {
                    chosen.insert(v, buckets.feasible_for(v)[odometer[i]]);
                }
                let value = value_on_edges(instance, &piece_edges, &chosen);
                if value > best_value {
                    best_value = value;
                    best = odometer.clone();
                }
                // Advance.
                let mut i = 0;
                loop {
                    if i == unfixed.len() {
                        break;
                    }
                    odometer[i] += 1;
                    if odometer[i] < buckets.feasible_for(unfixed[i]).len() {
                        break;
                    }
                    odometer[i] = 0;
                    i += 1;
                }
                if i == unfixed.len() {
                    break;
                }
            }
            for (i, &v) in unfixed.iter().enumerate() {
                fixed.insert(v, buckets.feasible_for(v)[best[i]]);
            }
        }
    }

    for v in &instance.vehicles {
        fixed
            .entry(v.id)
            .or_insert_with(|| first_feasible(buckets, v.id));
    }
    let assignment = Assignment { bucket_of: fixed };
    let (value, _) = evaluate_assignment(instance, buckets, &assignment)?;
    Ok(PtasOutcome { value, assignment, guarantee })
}

/// Randomized rounding of the LP relaxation: each vehicle samples its
/// bucket from its fractional weights; the best of `reps` draws wins.
pub fn lp_round(
    instance: &Instance,
    buckets: &BucketSet,
    reps: usize,
    seed: u64,
) -> Result<(f64, Assignment)> {
    if reps == 0 {
        return Err(Error::InvalidParams("need at least one draw".into()));
    }
    let model = build_lp_relax(instance, buckets)?;
    let sol = simplex_solve(&model)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::InfeasibleAssignment(
            "LP relaxation has no optimum".into(),
        ));
    }
    let mut weights: BTreeMap<VehicleId, Vec<(usize, f64)>> = BTreeMap::new();
    for v in &instance.vehicles {
        let mut row: Vec<(usize, f64)> = buckets
            .feasible_for(v.id)
            .iter()
            .map(|&t| {
                let idx = model.var_index(&format!("x[{}][{}]", v.id, t)).unwrap();
                (t, sol.values[idx].max(0.0))
            })
            .collect();
        let total: f64 = row.iter().map(|(_, w)| w).sum();
        if total <= 1e-12 {
            row = row.into_iter().map(|(t, _)| (t, 1.0)).collect();
        }
        weights.insert(v.id, row);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Assignment)> = None;
    for _ in 0..reps {
        let mut bucket_of = BTreeMap::new();
        for (&v, row) in &weights {
            let total: f64 = row.iter().map(|(_, w)| w).sum();
            let mut pick = rng.gen_range(0.0..total.max(1e-12));
            let mut chosen = row[0].0;
            for &(t, w) in row {
                if pick < w {
                    chosen = t;
                    break;
                }
                pick -= w;
            }
            bucket_of.insert(v, chosen);
        }
        let assignment = Assignment { bucket_of };
        let (value, _) = evaluate_assignment(instance, buckets, &assignment)?;
        if best.as_ref().map_or(true, |(b, _)| value > *b) {
            best = Some((value, assignment));
        }
    }
    Ok(best.unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Edge, RoadNetwork, Vehicle};
    use crate::solvers::exact_enumerate;

    /// Path network with `len` unit edges and vehicles given as
    /// (route edge span inclusive, feasible bucket run inclusive).
    fn path_instance(
        len: usize,
        spec: &[((usize, usize), (usize, usize))],
        t_count: usize,
    ) -> (Instance, UniformBuckets) {
        let network = RoadNetwork {
            nodes: (0..=len as u32).collect(),
            edges: (0..len)
                .map(|i| Edge { from: i as u32, to: i as u32 + 1, time: 1.0, cost: 1.0 })
                .collect(),
        };
        let vehicles: Vec<Vehicle> = spec
            .iter()
            .enumerate()
            .map(|(id, &((e0, e1), _))| Vehicle {
                id,
                origin: e0 as u32,
                dest: e1 as u32 + 1,
                t_depart_min: 0.0,
                t_arrive_max: 100.0,
                route: (e0..=e1).collect(),
            })
            .collect();
        let runs: Vec<(VehicleId, usize, usize)> = spec
            .iter()
            .enumerate()
            .map(|(id, &(_, (b0, b1)))| (id, b0, b1))
            .collect();
        let uniform = UniformBuckets::from_runs(&runs, t_count).unwrap();
        let inst = Instance {
            network,
            vehicles,
            lambda: None,
            sigma_l: 0.1,
            sigma_f: 0.2,
        };
        (inst, uniform)
    }

    #[test]
    fn single_bucket_greedy_takes_everyone() {
        // All vehicles feasible only in bucket 0: the greedy returns the
        // whole-group saving, which is optimal.
        let (inst, uniform) =
            path_instance(3, &[((0, 2), (0, 0)), ((0, 2), (0, 0)), ((1, 2), (0, 0))], 2);
        let (value, assignment) = greedy_two_bucket(&inst, &uniform).unwrap();
        let all: Vec<VehicleId> = vec![0, 1, 2];
        let expect = group_saving_unchecked(&inst, &all, None);
        assert!((value - expect).abs() < 1e-12);
        let (opt, _) = exact_enumerate(&inst, &uniform.set, None).unwrap();
        assert!((value - opt).abs() < 1e-12);
        assert_eq!(assignment.bucket_of.len(), 3);
    }

    #[test]
    fn greedy_two_bucket_rejects_capacity() {
        let (mut inst, uniform) = path_instance(2, &[((0, 1), (0, 1))], 2);
        inst.lambda = Some(2);
        assert!(matches!(
            greedy_two_bucket(&inst, &uniform),
            Err(Error::CapacityNotSupported)
        ));
    }

    #[test]
    fn greedy_two_bucket_meets_its_ratio_on_a_spread_instance() {
        // Four vehicles, two buckets; the pairwise split matters.
        let (inst, uniform) = path_instance(
            4,
            &[
                ((0, 3), (0, 1)),
                ((0, 1), (0, 0)),
                ((2, 3), (1, 1)),
                ((0, 3), (0, 1)),
            ],
            2,
        );
        let (value, assignment) = greedy_two_bucket(&inst, &uniform).unwrap();
        let (opt, _) = exact_enumerate(&inst, &uniform.set, None).unwrap();
        let (sl, sf) = (inst.sigma_l, inst.sigma_f);
        let ratio = (4.0 * sl + 6.0 * sf) / ((4.0 * sl + 5.0 * sf) * uniform.t_count as f64);
        assert!(value >= ratio * opt - 1e-9, "{value} vs bound {}", ratio * opt);
        let (realized, _) = evaluate_assignment(&inst, &uniform.set, &assignment).unwrap();
        assert!(realized >= value - 1e-9);
    }

    #[test]
    fn iterative_greedy_single_bucket() {
        let (inst, uniform) = path_instance(2, &[((0, 1), (0, 0)), ((0, 1), (0, 0))], 1);
        let (value, assignment) = greedy_iterative(&inst, &uniform.set).unwrap();
        assert!((value - 2.0 * saving_rate(2, 0.1, 0.2)).abs() < 1e-12);
        assert!(assignment.bucket_of.values().all(|&t| t == 0));
    }

    #[test]
    fn iterative_greedy_never_beats_the_oracle() {
        let cases: Vec<Vec<((usize, usize), (usize, usize))>> = vec![
            vec![((0, 2), (0, 1)), ((1, 2), (1, 2)), ((0, 1), (0, 0)), ((2, 2), (2, 2))],
            vec![((0, 3), (0, 2)), ((0, 3), (0, 2)), ((1, 2), (1, 1))],
        ];
        for spec in cases {
            let (inst, uniform) = path_instance(4, &spec, 3);
            let (value, _) = greedy_iterative(&inst, &uniform.set).unwrap();
            let (opt, _) = exact_enumerate(&inst, &uniform.set, None).unwrap();
            assert!(value <= opt + 1e-9);
        }
    }

    #[test]
    fn uniform_case_disjoint_kernels_solve_exactly() {
        // Two pairs locked to their own buckets on disjoint edges.
        let (inst, uniform) = path_instance(
            4,
            &[
                ((0, 1), (0, 0)),
                ((0, 1), (0, 0)),
                ((2, 3), (1, 1)),
                ((2, 3), (1, 1)),
            ],
            2,
        );
        let assignment = uniform_case_solve(&inst, &uniform).unwrap().unwrap();
        let (value, _) = evaluate_assignment(&inst, &uniform.set, &assignment).unwrap();
        let (opt, _) = exact_enumerate(&inst, &uniform.set, None).unwrap();
        assert!((value - opt).abs() < 1e-12);
    }

    #[test]
    fn uniform_case_overlapping_kernels_bail_out() {
        // A vehicle sharing edges in both buckets joins both kernels.
        let (inst, uniform) = path_instance(
            2,
            &[((0, 1), (0, 1)), ((0, 1), (0, 0)), ((0, 1), (1, 1))],
            2,
        );
        assert!(uniform_case_solve(&inst, &uniform).unwrap().is_none());
    }

    #[test]
    fn contraction_identity_below_threshold() {
        let (inst, _) = path_instance(3, &[((0, 2), (0, 0)), ((1, 2), (0, 0))], 1);
        let (tree, removed) = contract_heavy_edges(&inst, 3);
        assert!(removed.is_empty());
        assert_eq!(tree.edges, vec![0, 1, 2]);
    }

    #[test]
    fn contraction_merges_heavy_edge_endpoints() {
        let (inst, _) = path_instance(3, &[((0, 2), (0, 0)), ((1, 2), (0, 0))], 1);
        let (tree, removed) = contract_heavy_edges(&inst, 2);
        // Edges 1 and 2 carry two vehicles each and disappear.
        assert_eq!(removed, vec![1, 2]);
        assert_eq!(tree.edges, vec![0]);
        assert_eq!(tree.rep(3), tree.rep(1));
        assert_eq!(tree.rep(2), tree.rep(1));
        assert_ne!(tree.rep(0), tree.rep(1));
    }

    #[test]
    fn any_schedule_on_a_dense_edge_is_near_optimal() {
        // One edge shared by five vehicles, two buckets: enumerate every
        // split and compare against the best.
        let (sl, sf) = (0.1, 0.2);
        let n = 5u32;
        let t = 2u32;
        let mut worst = f64::INFINITY;
        let mut best = f64::NEG_INFINITY;
        for k in 0..=n {
            let value = saving_rate(k, sl, sf) + saving_rate(n - k, sl, sf);
            worst = worst.min(value);
            best = best.max(value);
        }
        assert!(worst / best >= 1.0 - t as f64 / n as f64 - 1e-12);
    }

    #[test]
    fn decomposition_of_a_ten_edge_path() {
        let (inst, _) = path_instance(10, &[((0, 9), (0, 0))], 1);
        let (tree, _) = contract_heavy_edges(&inst, 99);
        let path = maximal_directed_path(&inst, &tree);
        assert_eq!(path.len(), 10);
        let pieces = decompose_tree(&inst, &tree, &path, 3);
        let sizes: Vec<usize> = pieces.iter().map(|p| p.edges.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        // Partition of the edges.
        let mut all: Vec<EdgeId> = pieces.iter().flat_map(|p| p.edges.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn decomposition_keeps_small_trees_whole() {
        let (inst, _) = path_instance(4, &[((0, 3), (0, 0))], 1);
        let (tree, _) = contract_heavy_edges(&inst, 99);
        let path = maximal_directed_path(&inst, &tree);
        let pieces = decompose_tree(&inst, &tree, &path, 10);
        assert_eq!(pieces.len(), 1);
        assert_eq!(pieces[0].edges.len(), 4);
    }

    #[test]
    fn ptas_single_subtree_is_exact() {
        let (inst, uniform) = path_instance(
            3,
            &[((0, 2), (0, 1)), ((0, 1), (0, 0)), ((1, 2), (1, 1))],
            2,
        );
        let params = PtasParams::heuristic(100, 100);
        let out = ptas(&inst, &uniform, &params).unwrap();
        let (opt, _) = exact_enumerate(&inst, &uniform.set, None).unwrap();
        assert!((out.value - opt).abs() < 1e-9, "{} vs {opt}", out.value);
        assert!(!out.guarantee);
    }

    #[test]
    fn ptas_guarantee_flag_needs_thresholds() {
        let (inst, uniform) = path_instance(2, &[((0, 1), (0, 1)), ((0, 1), (0, 1))], 2);
        let reg = Regularity::measure(&inst);
        assert_eq!(reg.max_route_len, 2);
        let mut params = PtasParams::heuristic(2, 2);
        params.eps = 0.5;
        params.regularity = Some(reg);
        // Thresholds demand n0 >= 6 here, so the flag stays off.
        assert!(!ptas(&inst, &uniform, &params).unwrap().guarantee);
        params.n0 = 6;
        params.n1 = (5.0 * 16.0 * 216.0 * reg.cost_ratio / 0.5).ceil() as usize;
        let out = ptas(&inst, &uniform, &params).unwrap();
        assert!(out.guarantee);
        // Everything was contracted or enumerated; value is still optimal
        // here because the instance is tiny.
        let (opt, _) = exact_enumerate(&inst, &uniform.set, None).unwrap();
        assert!(out.value >= (1.0 - params.eps) * opt - 1e-9);
    }

    #[test]
    fn lp_round_integral_optimum_is_deterministic() {
        // Forced buckets: the relaxation is integral, every draw equal.
        let (inst, uniform) = path_instance(2, &[((0, 1), (0, 0)), ((0, 1), (0, 0))], 1);
        let (v1, a1) = lp_round(&inst, &uniform.set, 3, 1).unwrap();
        let (v2, a2) = lp_round(&inst, &uniform.set, 3, 999).unwrap();
        assert_eq!(a1, a2);
        assert!((v1 - v2).abs() < 1e-12);
        assert!((v1 - 2.0 * saving_rate(2, 0.1, 0.2)).abs() < 1e-9);
    }

    #[test]
    fn lp_round_value_bounded_by_oracle() {
        let (inst, uniform) = path_instance(
            3,
            &[((0, 2), (0, 1)), ((0, 2), (0, 1)), ((0, 2), (0, 1)), ((0, 1), (1, 1))],
            2,
        );
        let (value, _) = lp_round(&inst, &uniform.set, 50, 7).unwrap();
        let (opt, _) = exact_enumerate(&inst, &uniform.set, None).unwrap();
        assert!(value <= opt + 1e-9);
        assert!(value >= 0.0);
    }
}
