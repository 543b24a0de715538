//! Time windows at nodes, relative time windows on a shared tree, the
//! interval overlap graph, and adaptive time discretization.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Instance, NodeId, RouteGraph, VehicleId};
use crate::{Error, Result, TIME_EPS};

/// Arrival-time window of a vehicle at a node on its route.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeTimeWindow {
    pub vehicle: VehicleId,
    pub node: NodeId,
    pub lower: f64,
    pub upper: f64,
}

/// Feasible arrival window of `vehicle` at `node`: earliest departure pushed
/// forward along the route prefix, latest arrival pulled back along the
/// suffix.
pub fn node_time_window(
    instance: &Instance,
    vehicle: VehicleId,
    node: NodeId,
) -> Result<NodeTimeWindow> {
    let v = instance.vehicle(vehicle);
    let nodes = v.route_nodes(&instance.network);
    let pos = nodes
        .iter()
        .position(|&n| n == node)
        .ok_or(Error::NodeNotOnRoute { vehicle, node })?;
    let prefix: f64 = v.route[..pos]
        .iter()
        .map(|&e| instance.network.edge(e).time)
        .sum();
    let suffix: f64 = v.route[pos..]
        .iter()
        .map(|&e| instance.network.edge(e).time)
        .sum();
    Ok(NodeTimeWindow {
        vehicle,
        node,
        lower: v.t_depart_min + prefix,
        upper: v.t_arrive_max - suffix,
    })
}

/// Relative time of node `s` with respect to node `t`: along the unique
/// undirected path from `s` to `t`, forward edge times count positive and
/// backward edge times count negative.
pub fn relative_time(instance: &Instance, graph: &RouteGraph, s: NodeId, t: NodeId) -> Result<f64> {
    if s == t {
        return Ok(0.0);
    }
    // BFS on the undirected counterpart; the route graph of a tree instance
    // has a unique path between connected nodes.
    let mut prev: HashMap<NodeId, (NodeId, f64)> = HashMap::new();
    let mut queue = std::collections::VecDeque::from([s]);
    prev.insert(s, (s, 0.0));
    while let Some(n) = queue.pop_front() {
        if n == t {
            break;
        }
        for &(m, e, forward) in graph.neighbors(n) {
            if prev.contains_key(&m) {
                continue;
            }
            let step = instance.network.edge(e).time;
            prev.insert(m, (n, if forward { step } else { -step }));
            queue.push_back(m);
        }
    }
    if !prev.contains_key(&t) {
        return Err(Error::NotConnected(s, t));
    }
    let mut total = 0.0;
    let mut at = t;
    while at != s {
        let (p, step) = prev[&at];
        total += step;
        at = p;
    }
    Ok(total)
}

/// Relative time window: a vehicle's feasible departure interval expressed
/// in the root-relative coordinate shared by all vehicles of the tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rtw {
    pub vehicle: VehicleId,
    pub start: f64,
    pub end: f64,
    /// Shift that maps the vehicle's origin departure time onto the shared
    /// axis; subtract it to recover the absolute departure time.
    pub offset: f64,
}

impl Rtw {
    pub fn width(&self) -> f64 {
        self.end - self.start
    }

    pub fn intersects(&self, other: &Rtw) -> bool {
        self.start <= other.end + TIME_EPS && other.start <= self.end + TIME_EPS
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start - TIME_EPS <= t && t <= self.end + TIME_EPS
    }
}

/// One relative time window per vehicle, with respect to the tree root.
pub fn compute_rtws(instance: &Instance, graph: &RouteGraph) -> Result<Vec<Rtw>> {
    let root = graph
        .root
        .ok_or_else(|| Error::NotATree("relative time windows need a rooted tree".into()))?;
    let mut out = Vec::with_capacity(instance.vehicles.len());
    for v in &instance.vehicles {
        let w = node_time_window(instance, v.id, v.origin)?;
        let offset = relative_time(instance, graph, v.origin, root)?;
        out.push(Rtw {
            vehicle: v.id,
            start: w.lower + offset,
            end: w.upper + offset,
            offset,
        });
    }
    Ok(out)
}

/// Undirected overlap graph of the relative time windows; an interval graph.
#[derive(Debug, Clone)]
pub struct PseudoPlatoonGraph {
    pub vehicle_ids: Vec<VehicleId>,
    adj: Vec<Vec<bool>>,
}

impl PseudoPlatoonGraph {
    pub fn linked(&self, u: VehicleId, v: VehicleId) -> bool {
        let iu = self.index_of(u);
        let iv = self.index_of(v);
        self.adj[iu][iv]
    }

    fn index_of(&self, v: VehicleId) -> usize {
        self.vehicle_ids
            .iter()
            .position(|&x| x == v)
            .unwrap_or_else(|| panic!("vehicle {v} not in pseudo-platooning graph"))
    }

    /// True when every pair in `ids` is adjacent.
    pub fn is_clique(&self, ids: &[VehicleId]) -> bool {
        for (i, &u) in ids.iter().enumerate() {
            for &v in &ids[i + 1..] {
                if !self.linked(u, v) {
                    return false;
                }
            }
        }
        true
    }
}

/// Adjacency by closed-interval intersection of relative time windows.
pub fn pseudo_platoon_graph(rtws: &[Rtw]) -> PseudoPlatoonGraph {
    let n = rtws.len();
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            if rtws[i].intersects(&rtws[j]) {
                adj[i][j] = true;
                adj[j][i] = true;
            }
        }
    }
    PseudoPlatoonGraph {
        vehicle_ids: rtws.iter().map(|r| r.vehicle).collect(),
        adj,
    }
}

/// A time bucket; `start == end` is a legal singleton.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub start: f64,
    pub end: f64,
}

impl Bucket {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.start + self.end)
    }
}

/// Sorted, interior-disjoint time buckets with per-vehicle feasible index
/// sets. A bucket is feasible for a vehicle when it lies inside the
/// vehicle's relative time window; the feasible buckets of a vehicle tile
/// its window exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BucketSet {
    pub buckets: Vec<Bucket>,
    pub feasibility: BTreeMap<VehicleId, Vec<usize>>,
}

impl BucketSet {
    pub fn feasible_for(&self, v: VehicleId) -> &[usize] {
        self.feasibility.get(&v).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Dump<'a> {
            buckets: Vec<[f64; 2]>,
            feasibility: &'a BTreeMap<VehicleId, Vec<usize>>,
        }
        Ok(serde_json::to_string_pretty(&Dump {
            buckets: self.buckets.iter().map(|b| [b.start, b.end]).collect(),
            feasibility: &self.feasibility,
        })?)
    }

    /// Rebuilds the per-vehicle feasibility from a window list; buckets not
    /// inside any window are kept (they simply stay infeasible for all).
    pub fn assign_feasibility(&mut self, rtws: &[Rtw]) {
        self.feasibility.clear();
        for r in rtws {
            let set: Vec<usize> = self
                .buckets
                .iter()
                .enumerate()
                .filter(|(_, b)| {
                    r.start - TIME_EPS <= b.start && b.end <= r.end + TIME_EPS
                })
                .map(|(k, _)| k)
                .collect();
            self.feasibility.insert(r.vehicle, set);
        }
    }
}

/// Adaptive time discretization: incorporates the windows one at a time,
/// splitting partially overlapped buckets, filling overlapped gaps and
/// extending past both ends, then re-sorting.
pub fn adaptive_discretize(rtws: &[Rtw]) -> Result<BucketSet> {
    if rtws.is_empty() {
        return Err(Error::EmptyInput("no relative time windows".into()));
    }
    let mut buckets: Vec<Bucket> = Vec::new();
    for r in rtws {
        if r.end < r.start - TIME_EPS {
            return Err(Error::InvalidParams(format!(
                "window of vehicle {} is reversed",
                r.vehicle
            )));
        }
        let interval = Bucket { start: r.start, end: r.end.max(r.start) };
        if buckets.is_empty() {
            buckets.push(interval);
        } else {
            refine(&mut buckets, interval);
        }
    }
    let mut set = BucketSet { buckets, feasibility: BTreeMap::new() };
    set.assign_feasibility(rtws);
    Ok(set)
}

/// One refinement round of the discretization with the interval `iv`.
fn refine(buckets: &mut Vec<Bucket>, iv: Bucket) {
    let snapshot = buckets.clone();
    let degenerate = iv.end - iv.start <= TIME_EPS;
    let mut next: Vec<Bucket> = Vec::with_capacity(snapshot.len() + 3);

    // Split buckets partially overlapped by iv. A point intersection makes a
    // singleton bucket; the closure of the remainder may be two pieces when
    // iv sits strictly inside.
    for b in &snapshot {
        let lo = iv.start.max(b.start);
        let hi = iv.end.min(b.end);
        let overlap = hi >= lo - TIME_EPS;
        if !overlap {
            next.push(*b);
            continue;
        }
        let covers_all = lo <= b.start + TIME_EPS && hi >= b.end - TIME_EPS;
        if covers_all {
            next.push(*b);
            continue;
        }
        next.push(Bucket { start: lo, end: hi.max(lo) });
        if lo > b.start + TIME_EPS {
            next.push(Bucket { start: b.start, end: lo });
        }
        if hi < b.end - TIME_EPS {
            next.push(Bucket { start: hi, end: b.end });
        }
    }

    // Fill the gaps of the pre-split collection that iv overlaps. A gap
    // piece must have positive width unless iv itself is a single point.
    for pair in snapshot.windows(2) {
        let (gap_lo, gap_hi) = (pair[0].end, pair[1].start);
        let lo = iv.start.max(gap_lo);
        let hi = iv.end.min(gap_hi);
        if hi > lo + TIME_EPS || (degenerate && hi >= lo - TIME_EPS && gap_hi > gap_lo + TIME_EPS) {
            next.push(Bucket { start: lo, end: hi.max(lo) });
        }
    }

    // Extend past both ends of the collection.
    let first = snapshot.first().unwrap().start;
    let last = snapshot.last().unwrap().end;
    if iv.start < first - TIME_EPS {
        let hi = iv.end.min(first);
        if hi > iv.start + TIME_EPS || degenerate {
            next.push(Bucket { start: iv.start, end: hi.max(iv.start) });
        }
    }
    if iv.end > last + TIME_EPS {
        let lo = iv.start.max(last);
        if iv.end > lo + TIME_EPS || degenerate {
            next.push(Bucket { start: lo, end: iv.end });
        }
    }

    next.sort_by(|a, b| {
        a.start
            .partial_cmp(&b.start)
            .unwrap()
            .then(a.end.partial_cmp(&b.end).unwrap())
    });
    next.dedup_by(|a, b| {
        (a.start - b.start).abs() <= TIME_EPS && (a.end - b.end).abs() <= TIME_EPS
    });
    *buckets = next;
}

/// Monte-Carlo estimate of the expected bucket count when window starts are
/// uniform on `[0, horizon]` and widths uniform on `[0, max_width]`, with
/// the matching analytic lower bound and (when defined) upper bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketCountStats {
    pub mean: f64,
    pub std_err: f64,
    pub lower_bound: f64,
    /// Present only when the bound's geometric series converges.
    pub upper_bound: Option<f64>,
}

pub fn simulate_bucket_count(
    n: usize,
    horizon: f64,
    max_width: f64,
    trials: usize,
    seed: u64,
) -> Result<BucketCountStats> {
    if n < 1 || trials < 1 || !(max_width > 0.0) || max_width >= horizon {
        return Err(Error::InvalidParams(
            "need n >= 1, trials >= 1 and 0 < max_width < horizon".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = Vec::with_capacity(trials);
    for _ in 0..trials {
        let rtws: Vec<Rtw> = (0..n)
            .map(|v| {
                let start = rng.gen_range(0.0..horizon);
                let width = rng.gen_range(0.0..max_width);
                Rtw { vehicle: v, start, end: start + width, offset: 0.0 }
            })
            .collect();
        counts.push(adaptive_discretize(&rtws)?.len() as f64);
    }
    let mean = counts.iter().sum::<f64>() / trials as f64;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (trials.max(2) - 1) as f64;
    let std_err = (var / trials as f64).sqrt();

    let nf = n as f64;
    let ratio = max_width / horizon;
    let beta = (nf - 1.0) * ratio;
    let lower_bound = nf + (0.5 * beta - beta * beta / 6.0) * nf;
    let q = std::f64::consts::E * (nf + 1.0) * ratio / 2.0;
    let upper_bound =
        (q < 1.0).then(|| nf + q * std::f64::consts::E * nf / (2.0 * (1.0 - q)));
    Ok(BucketCountStats { mean, std_err, lower_bound, upper_bound })
}

/// Analytic lower bound on the expected bucket count for `n` windows at
/// width-to-horizon ratio `beta / (n - 1)`.
pub fn expected_bucket_lower_bound(n: usize, beta: f64) -> f64 {
    let nf = n as f64;
    nf + (0.5 * beta - beta * beta / 6.0) * nf
}
