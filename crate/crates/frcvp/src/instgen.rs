//! Reproducible instance generators: a random attachment road network,
//! region-sampled vehicles with tree-cast routes, time-window assignment,
//! and the single-shared-edge reduction from interval task scheduling.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Edge, Instance, NodeId, RoadNetwork, Vehicle};
use crate::{Error, Result};

/// Parameters for end-to-end instance generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenParams {
    pub edge_count: usize,
    pub vehicle_count: usize,
    pub gamma_full: f64,
    pub gamma_ext: f64,
    pub seed: u64,
    pub lambda: Option<u32>,
    pub sigma_l: f64,
    pub sigma_f: f64,
}

impl GenParams {
    pub fn validate(&self) -> Result<()> {
        if self.edge_count == 0 || self.vehicle_count == 0 {
            return Err(Error::InvalidParams(
                "edge and vehicle counts must be positive".into(),
            ));
        }
        if !(self.gamma_full > self.gamma_ext && self.gamma_ext > 0.0) {
            return Err(Error::InvalidParams(
                "need gamma_full > gamma_ext > 0".into(),
            ));
        }
        Ok(())
    }
}

/// A generated network together with the planar node positions used for
/// region-based origin/destination sampling.
#[derive(Debug, Clone)]
pub struct GeneratedNetwork {
    pub network: RoadNetwork,
    pub positions: BTreeMap<NodeId, (f64, f64)>,
}

impl GeneratedNetwork {
    /// Nodes strictly on the negative side of the horizontal axis.
    pub fn negative_x_nodes(&self) -> Vec<NodeId> {
        self.positions
            .iter()
            .filter(|(_, p)| p.0 < 0.0)
            .map(|(&n, _)| n)
            .collect()
    }

    /// Nodes strictly on the positive side of the horizontal axis.
    pub fn positive_x_nodes(&self) -> Vec<NodeId> {
        self.positions
            .iter()
            .filter(|(_, p)| p.0 > 0.0)
            .map(|(&n, _)| n)
            .collect()
    }
}

const ANGLES: [f64; 10] = [
    0.0,
    std::f64::consts::FRAC_PI_6,
    -std::f64::consts::FRAC_PI_6,
    std::f64::consts::FRAC_PI_3,
    -std::f64::consts::FRAC_PI_3,
    2.0 * std::f64::consts::FRAC_PI_3,
    -2.0 * std::f64::consts::FRAC_PI_3,
    5.0 * std::f64::consts::FRAC_PI_6,
    -5.0 * std::f64::consts::FRAC_PI_6,
    std::f64::consts::PI,
];

/// Grows a random attachment tree from the origin. Each step attaches a new
/// edge to a random node of degree at most three; lengths are uniform on
/// [1, 1.5] and the orientation is drawn from ten fixed angles whose weights
/// push growth away from the axes of the current node. Travel time and cost
/// both equal the length.
pub fn gen_artifnet(edge_count: usize, seed: u64) -> Result<GeneratedNetwork> {
    if edge_count == 0 {
        return Err(Error::InvalidParams("edge_count must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions: BTreeMap<NodeId, (f64, f64)> = BTreeMap::new();
    positions.insert(0, (0.0, 0.0));
    let mut degree: BTreeMap<NodeId, usize> = BTreeMap::new();
    degree.insert(0, 0);
    let mut edges: Vec<Edge> = Vec::with_capacity(edge_count);

    for step in 0..edge_count {
        let active: Vec<NodeId> = degree
            .iter()
            .filter(|(_, &d)| d <= 3)
            .map(|(&n, _)| n)
            .collect();
        let at = active[rng.gen_range(0..active.len())];
        let (x, y) = positions[&at];

        let mut weights = [1.0f64; 10];
        for (i, &a) in ANGLES.iter().enumerate() {
            let upward = (1..=4).map(|k| ANGLES[2 * k - 1]).any(|u| (a - u).abs() < 1e-12);
            let downward = (1..=4).map(|k| ANGLES[2 * k]).any(|u| (a - u).abs() < 1e-12);
            let rightward = a.abs() < 1.1;
            if y > 0.0 && upward {
                weights[i] *= 2.0;
            }
            if y < 0.0 && downward {
                weights[i] *= 2.0;
            }
            if x > 0.0 && rightward {
                weights[i] *= 2.0;
            }
            if x < 0.0 && !rightward {
                weights[i] *= 2.0;
            }
        }
        let total: f64 = weights.iter().sum();
        let mut pick = rng.gen_range(0.0..total);
        let mut angle = ANGLES[9];
        for (i, w) in weights.iter().enumerate() {
            if pick < *w {
                angle = ANGLES[i];
                break;
            }
            pick -= w;
        }

        let len = rng.gen_range(1.0..1.5);
        let new_id = (step + 1) as NodeId;
        positions.insert(new_id, (x + len * angle.cos(), y + len * angle.sin()));
        degree.insert(new_id, 1);
        *degree.get_mut(&at).unwrap() += 1;
        edges.push(Edge { from: at, to: new_id, time: len, cost: len });
    }

    Ok(GeneratedNetwork {
        network: RoadNetwork {
            nodes: positions.keys().copied().collect(),
            edges,
        },
        positions,
    })
}

/// Undirected Dijkstra over link times with deterministic lowest-id ties.
/// Returns the node sequence from `from` to `to`.
fn undirected_shortest_path(net: &RoadNetwork, from: NodeId, to: NodeId) -> Option<Vec<NodeId>> {
    let mut adj: HashMap<NodeId, Vec<(NodeId, f64)>> = HashMap::new();
    for e in &net.edges {
        adj.entry(e.from).or_default().push((e.to, e.time));
        adj.entry(e.to).or_default().push((e.from, e.time));
    }
    for v in adj.values_mut() {
        v.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.partial_cmp(&b.1).unwrap()));
    }
    let mut dist: HashMap<NodeId, f64> = HashMap::new();
    let mut prev: HashMap<NodeId, NodeId> = HashMap::new();
    let mut heap = std::collections::BinaryHeap::new();
    dist.insert(from, 0.0);
    heap.push(std::cmp::Reverse((ordered(0.0), from)));
    while let Some(std::cmp::Reverse((d, n))) = heap.pop() {
        let d = d.0;
        if n == to {
            break;
        }
        if d > dist[&n] + 1e-12 {
            continue;
        }
        for &(m, w) in adj.get(&n).map(Vec::as_slice).unwrap_or(&[]) {
            let nd = d + w;
            let better = match dist.get(&m) {
                None => true,
                Some(&old) => nd < old - 1e-12 || (nd < old + 1e-12 && n < prev[&m]),
            };
            if better {
                dist.insert(m, nd);
                prev.insert(m, n);
                heap.push(std::cmp::Reverse((ordered(nd), m)));
            }
        }
    }
    if !dist.contains_key(&to) {
        return None;
    }
    let mut path = vec![to];
    while *path.last().unwrap() != from {
        path.push(prev[path.last().unwrap()]);
    }
    path.reverse();
    Some(path)
}

#[derive(PartialEq, PartialOrd)]
struct OrderedF64(f64);
impl Eq for OrderedF64 {}
#[allow(clippy::derive_ord_xor_partial_ord)]
impl Ord for OrderedF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.partial_cmp(other).unwrap()
    }
}
fn ordered(x: f64) -> OrderedF64 {
    OrderedF64(x)
}

/// Running union of admitted routes; keeps the union an undirected forest
/// with one fixed travel direction per physical link.
struct UnionState {
    direction: HashMap<(NodeId, NodeId), (NodeId, NodeId)>,
    parent: HashMap<NodeId, NodeId>,
    adj: HashMap<NodeId, Vec<NodeId>>,
}

impl UnionState {
    fn new() -> Self {
        UnionState {
            direction: HashMap::new(),
            parent: HashMap::new(),
            adj: HashMap::new(),
        }
    }

    fn find(&mut self, n: NodeId) -> NodeId {
        let p = *self.parent.entry(n).or_insert(n);
        if p == n {
            return n;
        }
        let r = self.find(p);
        self.parent.insert(n, r);
        r
    }

    fn link_key(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
        (a.min(b), a.max(b))
    }

    /// Checks a node walk against the union: every already-claimed link must
    /// be walked in its fixed direction, and new links must not close an
    /// undirected cycle.
    fn admissible(&mut self, walk: &[NodeId]) -> bool {
        let mut joins: Vec<(NodeId, NodeId)> = Vec::new();
        for pair in walk.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            match self.direction.get(&Self::link_key(a, b)) {
                Some(&(f, _)) => {
                    if f != a {
                        return false;
                    }
                }
                None => joins.push((a, b)),
            }
        }
        // Simulate the union-find joins on a scratch overlay.
        let mut scratch: HashMap<NodeId, NodeId> = HashMap::new();
        fn overlay_find(
            scratch: &mut HashMap<NodeId, NodeId>,
            base: &mut UnionState,
            mut n: NodeId,
        ) -> NodeId {
            loop {
                let p = match scratch.get(&n) {
                    Some(&p) => p,
                    None => base.find(n),
                };
                if p == n {
                    return n;
                }
                n = p;
            }
        }
        for &(a, b) in &joins {
            let ra = overlay_find(&mut scratch, self, a);
            let rb = overlay_find(&mut scratch, self, b);
            if ra == rb {
                return false;
            }
            scratch.insert(ra, rb);
        }
        true
    }

    fn commit(&mut self, walk: &[NodeId]) {
        for pair in walk.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let key = Self::link_key(a, b);
            if !self.direction.contains_key(&key) {
                self.direction.insert(key, (a, b));
                self.adj.entry(a).or_default().push(b);
                self.adj.entry(b).or_default().push(a);
                let ra = self.find(a);
                let rb = self.find(b);
                self.parent.insert(ra, rb);
            }
        }
    }

    /// Unique undirected union path between two union nodes, if connected.
    fn tree_path(&self, from: NodeId, to: NodeId) -> Option<Vec<NodeId>> {
        let mut prev: HashMap<NodeId, NodeId> = HashMap::new();
        prev.insert(from, from);
        let mut queue = std::collections::VecDeque::from([from]);
        while let Some(n) = queue.pop_front() {
            if n == to {
                let mut path = vec![to];
                while *path.last().unwrap() != from {
                    path.push(prev[path.last().unwrap()]);
                }
                path.reverse();
                return Some(path);
            }
            let mut nbrs = self.adj.get(&n).cloned().unwrap_or_default();
            nbrs.sort_unstable();
            for m in nbrs {
                prev.entry(m).or_insert_with(|| {
                    queue.push_back(m);
                    n
                });
            }
        }
        None
    }

    fn touches(&self, n: NodeId) -> bool {
        self.adj.contains_key(&n)
    }
}

/// Samples `n` origin/destination pairs from the given node regions, routes
/// each on the shortest undirected path and casts the running route union to
/// a tree: a route that would close an undirected loop is rerouted through
/// the unique existing union path between its first and last union-touching
/// nodes, and is resampled when even that fails. Reverse directed edges are
/// appended to the network as routes require them.
pub fn gen_vehicles(
    gnet: &GeneratedNetwork,
    n: usize,
    origin_region: &[NodeId],
    dest_region: &[NodeId],
    seed: u64,
) -> Result<(RoadNetwork, Vec<Vehicle>)> {
    if origin_region.is_empty() || dest_region.is_empty() {
        return Err(Error::InvalidParams("empty origin or destination region".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut network = gnet.network.clone();
    let mut edge_by_pair: HashMap<(NodeId, NodeId), usize> = network
        .edges
        .iter()
        .enumerate()
        .map(|(i, e)| ((e.from, e.to), i))
        .collect();
    let mut union = UnionState::new();
    let mut vehicles = Vec::with_capacity(n);

    const RETRIES: usize = 200;
    for id in 0..n {
        let mut admitted: Option<Vec<NodeId>> = None;
        for _ in 0..RETRIES {
            let o = origin_region[rng.gen_range(0..origin_region.len())];
            let d = dest_region[rng.gen_range(0..dest_region.len())];
            if o == d {
                continue;
            }
            let Some(walk) = undirected_shortest_path(&gnet.network, o, d) else {
                continue;
            };
            if union.admissible(&walk) {
                admitted = Some(walk);
                break;
            }
            if let Some(rerouted) = reroute_through_union(&union, &walk) {
                if union.admissible(&rerouted) {
                    admitted = Some(rerouted);
                    break;
                }
            }
        }
        let Some(walk) = admitted else {
            return Err(Error::NoPath(origin_region[0], dest_region[0]));
        };
        union.commit(&walk);

        let mut route = Vec::with_capacity(walk.len() - 1);
        for pair in walk.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let idx = match edge_by_pair.get(&(a, b)) {
                Some(&i) => i,
                None => {
                    // Materialize the reverse direction of an existing link.
                    let &rev = edge_by_pair
                        .get(&(b, a))
                        .expect("walk steps over network links");
                    let e = network.edges[rev].clone();
                    network.edges.push(Edge { from: a, to: b, time: e.time, cost: e.cost });
                    let i = network.edges.len() - 1;
                    edge_by_pair.insert((a, b), i);
                    i
                }
            };
            route.push(idx);
        }
        let travel: f64 = route.iter().map(|&e| network.edge(e).time).sum();
        vehicles.push(Vehicle {
            id,
            origin: walk[0],
            dest: *walk.last().unwrap(),
            t_depart_min: 0.0,
            t_arrive_max: travel,
            route,
        });
    }
    Ok((network, vehicles))
}

/// Replaces the span between the first and last union-touching nodes of the
/// walk by the unique union path, when that yields a simple walk.
fn reroute_through_union(union: &UnionState, walk: &[NodeId]) -> Option<Vec<NodeId>> {
    let first = walk.iter().position(|&n| union.touches(n))?;
    let last = walk.iter().rposition(|&n| union.touches(n))?;
    if first >= last {
        return None;
    }
    let mid = union.tree_path(walk[first], walk[last])?;
    let mut out: Vec<NodeId> = walk[..first].to_vec();
    out.extend(mid);
    out.extend(&walk[last + 1..]);
    let unique: HashSet<NodeId> = out.iter().copied().collect();
    (unique.len() == out.len()).then_some(out)
}

/// Draws departure windows: the earliest departure is uniform on
/// `[0, gamma_full * mean_route_time]` and the latest arrival leaves idle
/// slack proportional to the vehicle's own travel time.
pub fn gen_time_windows(
    network: &RoadNetwork,
    vehicles: &[Vehicle],
    gamma_full: f64,
    gamma_ext: f64,
    seed: u64,
) -> Vec<Vehicle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean: f64 =
        vehicles.iter().map(|v| v.route_time(network)).sum::<f64>() / vehicles.len() as f64;
    vehicles
        .iter()
        .map(|v| {
            let travel = v.route_time(network);
            let depart = rng.gen_range(0.0..gamma_full * mean);
            Vehicle {
                t_depart_min: depart,
                t_arrive_max: depart + (1.0 + gamma_ext) * travel,
                ..v.clone()
            }
        })
        .collect()
}

/// Full pipeline: attachment network, region-sampled tree-cast vehicles,
/// and time windows, all derived from one seed.
pub fn gen_instance(params: &GenParams) -> Result<Instance> {
    params.validate()?;
    let gnet = gen_artifnet(params.edge_count, params.seed)?;
    let origins = gnet.negative_x_nodes();
    let dests = gnet.positive_x_nodes();
    let (network, vehicles) =
        gen_vehicles(&gnet, params.vehicle_count, &origins, &dests, params.seed ^ 0x5eed)?;
    let vehicles = gen_time_windows(
        &network,
        &vehicles,
        params.gamma_full,
        params.gamma_ext,
        params.seed ^ 0x71e5,
    );
    let instance = Instance {
        network,
        vehicles,
        lambda: params.lambda,
        sigma_l: params.sigma_l,
        sigma_f: params.sigma_f,
    };
    instance.validate()?;
    Ok(instance)
}

/// Builds the single-shared-edge instance whose optimum encodes a minimum
/// clique partition of the interval graph of the given integer task
/// windows: every vehicle funnels through one common link, the lead saving
/// rate is zero, and each window becomes the vehicle's relative time window.
pub fn gen_from_uet(task_windows: &[(f64, f64)]) -> Result<Instance> {
    if task_windows.is_empty() {
        return Err(Error::EmptyInput("no task windows".into()));
    }
    for &(a, b) in task_windows {
        if a.fract() != 0.0 || b.fract() != 0.0 || b < a || a < 0.0 {
            return Err(Error::InvalidParams(format!(
                "task window ({a}, {b}) must have ordered non-negative integer endpoints"
            )));
        }
    }
    let n = task_windows.len();
    let hub = n as NodeId;
    let sink = n as NodeId + 1;
    let mut edges: Vec<Edge> = (0..n)
        .map(|k| Edge { from: k as NodeId, to: hub, time: 1.0, cost: 1.0 })
        .collect();
    edges.push(Edge { from: hub, to: sink, time: 1.0, cost: 1.0 });
    let vehicles = task_windows
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| Vehicle {
            id: k,
            origin: k as NodeId,
            dest: sink,
            t_depart_min: a,
            t_arrive_max: b + 2.0,
            route: vec![k, n],
        })
        .collect();
    Ok(Instance {
        network: RoadNetwork {
            nodes: (0..n as NodeId + 2).collect(),
            edges,
        },
        vehicles,
        lambda: None,
        sigma_l: 0.0,
        sigma_f: 0.5,
    })
}

/// Seven vehicles on a single shared tree whose trunk edge is used by all of
/// them; a compact worked example exercised throughout the test suite.
///
/// Nodes 0..=10 play A..K; all edges are unit time and cost.
pub fn seven_vehicle_tree() -> Instance {
    let unit = |from, to| Edge { from, to, time: 1.0, cost: 1.0 };
    let network = RoadNetwork {
        nodes: (0..=10).collect(),
        edges: vec![
            unit(0, 1),  // 0: A -> B
            unit(1, 2),  // 1: B -> C
            unit(2, 3),  // 2: C -> D
            unit(3, 4),  // 3: D -> E
            unit(5, 1),  // 4: F -> B
            unit(6, 2),  // 5: G -> C
            unit(8, 9),  // 6: I -> J
            unit(9, 2),  // 7: J -> C
            unit(7, 9),  // 8: H -> J
            unit(3, 10), // 9: D -> K
        ],
    };
    let v = |id, origin, dest, lo, hi, route: Vec<usize>| Vehicle {
        id,
        origin,
        dest,
        t_depart_min: lo,
        t_arrive_max: hi,
        route,
    };
    Instance {
        network,
        vehicles: vec![
            v(0, 0, 4, 4.0, 12.0, vec![0, 1, 2, 3]),
            v(1, 5, 4, 3.0, 11.0, vec![4, 1, 2, 3]),
            v(2, 6, 4, 4.0, 13.0, vec![5, 2, 3]),
            v(3, 8, 4, 4.0, 11.0, vec![6, 7, 2, 3]),
            v(4, 7, 4, 9.0, 19.0, vec![8, 7, 2, 3]),
            v(5, 9, 10, 11.0, 15.0, vec![7, 2, 9]),
            v(6, 1, 10, 13.0, 19.0, vec![1, 2, 9]),
        ],
        lambda: None,
        sigma_l: 0.1,
        sigma_f: 0.2,
    }
}

/// Four vehicles whose route union closes a loop: one vehicle detours
/// around the block that the other routes cut across. Endpoints sit on a
/// half-unit lattice, so loop breaking converges.
///
/// Nodes 0..=5 play A, B, C, D, F, G; all edges are unit time and cost.
pub fn looped_five_vehicle() -> Instance {
    let unit = |from, to| Edge { from, to, time: 1.0, cost: 1.0 };
    let network = RoadNetwork {
        nodes: (0..=5).collect(),
        edges: vec![
            unit(0, 1), // 0: A -> B
            unit(1, 2), // 1: B -> C
            unit(2, 3), // 2: C -> D
            unit(1, 4), // 3: B -> F
            unit(4, 5), // 4: F -> G
            unit(5, 2), // 5: G -> C
        ],
    };
    let v = |id, origin, dest, lo, hi, route: Vec<usize>| Vehicle {
        id,
        origin,
        dest,
        t_depart_min: lo,
        t_arrive_max: hi,
        route,
    };
    Instance {
        network,
        vehicles: vec![
            v(0, 0, 3, 0.0, 10.0, vec![0, 3, 4, 5, 2]),
            v(1, 0, 3, 2.0, 12.0, vec![0, 1, 2]),
            v(2, 0, 3, 3.5, 11.0, vec![0, 1, 2]),
            v(3, 4, 3, 6.0, 13.0, vec![4, 5, 2]),
        ],
        lambda: None,
        sigma_l: 0.1,
        sigma_f: 0.2,
    }
}
