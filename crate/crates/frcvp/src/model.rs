//! Problem data: road networks, vehicles with fixed routes, and the union
//! route graph with its structural classification.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::timewin::BucketSet;
use crate::{Error, Result, TIME_EPS};

pub type NodeId = u32;
pub type EdgeId = usize;
pub type VehicleId = usize;

/// A directed road link with a travel time and a traversal fuel cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub time: f64,
    pub cost: f64,
}

/// Directed road network. Routes reference edges by index into `edges`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadNetwork {
    pub nodes: Vec<NodeId>,
    pub edges: Vec<Edge>,
}

impl RoadNetwork {
    pub fn edge(&self, e: EdgeId) -> &Edge {
        &self.edges[e]
    }

    fn validate(&self) -> Result<()> {
        let node_set: HashSet<NodeId> = self.nodes.iter().copied().collect();
        if node_set.len() != self.nodes.len() {
            return Err(Error::InvalidInstance("duplicate node id".into()));
        }
        let mut seen = HashSet::new();
        for (i, e) in self.edges.iter().enumerate() {
            if !node_set.contains(&e.from) || !node_set.contains(&e.to) {
                return Err(Error::InvalidInstance(format!(
                    "edge {i} references an unknown node"
                )));
            }
            if e.from == e.to {
                return Err(Error::InvalidInstance(format!("edge {i} is a self-loop")));
            }
            if !seen.insert((e.from, e.to)) {
                return Err(Error::InvalidInstance(format!(
                    "duplicate directed edge ({}, {})",
                    e.from, e.to
                )));
            }
            if !(e.time > 0.0) || !(e.cost > 0.0) {
                return Err(Error::InvalidInstance(format!(
                    "edge {i} must have positive time and cost"
                )));
            }
        }
        Ok(())
    }
}

/// A vehicle with a fixed route and departure/arrival time bounds.
///
/// The id order fixes the platoon-leader convention: in any platoon the
/// vehicle with the smallest id leads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: VehicleId,
    pub origin: NodeId,
    pub dest: NodeId,
    /// Earliest allowed departure from the origin.
    pub t_depart_min: f64,
    /// Latest allowed arrival at the destination.
    pub t_arrive_max: f64,
    /// Ordered edge indices forming a directed path origin -> dest.
    pub route: Vec<EdgeId>,
}

impl Vehicle {
    /// Total travel time along the route.
    pub fn route_time(&self, net: &RoadNetwork) -> f64 {
        self.route.iter().map(|&e| net.edge(e).time).sum()
    }

    /// Nodes visited along the route, origin first, destination last.
    pub fn route_nodes(&self, net: &RoadNetwork) -> Vec<NodeId> {
        let mut nodes = vec![self.origin];
        for &e in &self.route {
            nodes.push(net.edge(e).to);
        }
        nodes
    }

    fn validate(&self, net: &RoadNetwork) -> Result<()> {
        let bad = |msg: String| Error::DisconnectedRoute(self.id, msg);
        if self.route.is_empty() {
            return Err(bad("route is empty".into()));
        }
        let mut at = self.origin;
        let mut visited: HashSet<NodeId> = HashSet::new();
        visited.insert(at);
        for &e in &self.route {
            if e >= net.edges.len() {
                return Err(bad(format!("edge index {e} out of range")));
            }
            let edge = net.edge(e);
            if edge.from != at {
                return Err(bad(format!(
                    "edge {e} starts at node {} but the route is at node {at}",
                    edge.from
                )));
            }
            at = edge.to;
            if !visited.insert(at) {
                return Err(bad(format!("route revisits node {at}")));
            }
        }
        if at != self.dest {
            return Err(bad(format!("route ends at node {at}, not the destination")));
        }
        if self.t_arrive_max - self.t_depart_min < self.route_time(net) - TIME_EPS {
            return Err(Error::InfeasibleVehicle(self.id));
        }
        Ok(())
    }
}

/// A full problem instance.
///
/// `lambda = None` means platoons of unbounded size are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub network: RoadNetwork,
    pub vehicles: Vec<Vehicle>,
    pub lambda: Option<u32>,
    pub sigma_l: f64,
    pub sigma_f: f64,
}

impl Instance {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if !(0.0..1.0).contains(&self.sigma_l) || !(0.0..1.0).contains(&self.sigma_f) {
            return Err(Error::InvalidInstance(
                "saving rates must lie in [0, 1)".into(),
            ));
        }
        if let Some(l) = self.lambda {
            if l < 2 {
                return Err(Error::InvalidInstance(
                    "platoon capacity must be at least 2".into(),
                ));
            }
        }
        let mut ids = HashSet::new();
        for v in &self.vehicles {
            if !ids.insert(v.id) {
                return Err(Error::InvalidInstance(format!("duplicate vehicle id {}", v.id)));
            }
            v.validate(&self.network)?;
        }
        Ok(())
    }

    pub fn vehicle(&self, id: VehicleId) -> &Vehicle {
        self.vehicles
            .iter()
            .find(|v| v.id == id)
            .unwrap_or_else(|| panic!("unknown vehicle id {id}"))
    }

    /// Vehicles sharing each edge of the union route graph.
    pub fn edge_vehicles(&self) -> BTreeMap<EdgeId, Vec<VehicleId>> {
        let mut map: BTreeMap<EdgeId, Vec<VehicleId>> = BTreeMap::new();
        for v in &self.vehicles {
            for &e in &v.route {
                map.entry(e).or_default().push(v.id);
            }
        }
        for list in map.values_mut() {
            list.sort_unstable();
        }
        map
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let inst: Instance = serde_json::from_str(text)?;
        inst.validate()?;
        Ok(inst)
    }
}

/// Classification of the union route graph on its undirected counterpart.
///
/// Antiparallel directed edges count as a loop: two vehicles traversing the
/// same link in opposite directions cannot share a relative time axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraphShape {
    Tree,
    Forest,
    Loopy,
}

/// Union of all vehicle routes with per-edge vehicle sets.
#[derive(Debug, Clone)]
pub struct RouteGraph {
    /// Union edge ids, ascending.
    pub edges: Vec<EdgeId>,
    /// Vehicles sharing each union edge.
    pub vehicles_on: BTreeMap<EdgeId, Vec<VehicleId>>,
    /// Nodes touched by at least one route.
    pub nodes: BTreeSet<NodeId>,
    pub shape: GraphShape,
    /// Chosen root when the graph is a single tree: the lowest node id with
    /// zero in-degree restricted to the union.
    pub root: Option<NodeId>,
    /// Undirected adjacency: node -> (neighbor, edge id, true if the edge is
    /// directed node -> neighbor).
    adjacency: HashMap<NodeId, Vec<(NodeId, EdgeId, bool)>>,
}

impl RouteGraph {
    pub fn neighbors(&self, n: NodeId) -> &[(NodeId, EdgeId, bool)] {
        self.adjacency.get(&n).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Connected components of the undirected counterpart, as node sets.
    pub fn components(&self) -> Vec<BTreeSet<NodeId>> {
        let mut seen: BTreeSet<NodeId> = BTreeSet::new();
        let mut out = Vec::new();
        for &start in &self.nodes {
            if seen.contains(&start) {
                continue;
            }
            let mut comp = BTreeSet::new();
            let mut stack = vec![start];
            while let Some(n) = stack.pop() {
                if !comp.insert(n) {
                    continue;
                }
                for &(m, _, _) in self.neighbors(n) {
                    if !comp.contains(&m) {
                        stack.push(m);
                    }
                }
            }
            seen.extend(comp.iter().copied());
            out.push(comp);
        }
        out
    }
}

/// Builds the union route graph, classifies it and picks a deterministic
/// root for tree instances.
pub fn build_route_graph(instance: &Instance) -> Result<RouteGraph> {
    instance.validate()?;
    let vehicles_on = instance.edge_vehicles();
    let edges: Vec<EdgeId> = vehicles_on.keys().copied().collect();
    if edges.is_empty() {
        return Err(Error::EmptyInput("instance has no vehicles".into()));
    }

    let mut nodes = BTreeSet::new();
    let mut adjacency: HashMap<NodeId, Vec<(NodeId, EdgeId, bool)>> = HashMap::new();
    let mut undirected: HashSet<(NodeId, NodeId)> = HashSet::new();
    let mut parallel_pair = false;
    for &e in &edges {
        let edge = instance.network.edge(e);
        nodes.insert(edge.from);
        nodes.insert(edge.to);
        adjacency.entry(edge.from).or_default().push((edge.to, e, true));
        adjacency.entry(edge.to).or_default().push((edge.from, e, false));
        let key = (edge.from.min(edge.to), edge.from.max(edge.to));
        if !undirected.insert(key) {
            parallel_pair = true;
        }
    }
    for list in adjacency.values_mut() {
        list.sort_unstable();
    }

    let mut graph = RouteGraph {
        edges,
        vehicles_on,
        nodes,
        shape: GraphShape::Loopy,
        root: None,
        adjacency,
    };

    let comps = graph.components();
    let mut all_trees = !parallel_pair;
    if all_trees {
        for comp in &comps {
            let edge_count = graph
                .edges
                .iter()
                .filter(|&&e| comp.contains(&instance.network.edge(e).from))
                .count();
            if edge_count != comp.len() - 1 {
                all_trees = false;
                break;
            }
        }
    }

    graph.shape = if !all_trees {
        GraphShape::Loopy
    } else if comps.len() == 1 {
        GraphShape::Tree
    } else {
        GraphShape::Forest
    };

    if graph.shape == GraphShape::Tree {
        graph.root = Some(choose_root(instance, &graph)?);
    }
    Ok(graph)
}

/// Lowest node id with zero in-degree restricted to the union edges.
fn choose_root(instance: &Instance, graph: &RouteGraph) -> Result<NodeId> {
    let mut in_deg: BTreeMap<NodeId, usize> = graph.nodes.iter().map(|&n| (n, 0)).collect();
    for &e in &graph.edges {
        *in_deg.get_mut(&instance.network.edge(e).to).unwrap() += 1;
    }
    in_deg
        .iter()
        .find(|(_, &d)| d == 0)
        .map(|(&n, _)| n)
        .ok_or_else(|| Error::NotATree("no node with zero in-degree".into()))
}

/// Splits a forest instance into one single-tree sub-instance per component.
///
/// Vehicle ids are preserved; each sub-instance keeps the full network.
pub fn split_components(instance: &Instance) -> Result<Vec<Instance>> {
    let graph = build_route_graph(instance)?;
    let comps = graph.components();
    if comps.len() <= 1 {
        return Ok(vec![instance.clone()]);
    }
    let mut out = Vec::new();
    for comp in comps {
        let vehicles: Vec<Vehicle> = instance
            .vehicles
            .iter()
            .filter(|v| comp.contains(&v.origin))
            .cloned()
            .collect();
        if !vehicles.is_empty() {
            out.push(Instance {
                network: instance.network.clone(),
                vehicles,
                lambda: instance.lambda,
                sigma_l: instance.sigma_l,
                sigma_f: instance.sigma_f,
            });
        }
    }
    Ok(out)
}

/// All maximal ideal paths of the union graph: directed paths whose edges are
/// shared by at least two common vehicles, not extendable with the same
/// shared set. Returns (edge sequence, shared vehicle set) pairs.
pub fn maximal_ideal_paths(
    instance: &Instance,
    graph: &RouteGraph,
) -> Vec<(Vec<EdgeId>, BTreeSet<VehicleId>)> {
    // Enumerate directed simple paths by DFS from every node. Union graphs at
    // coordination scale are small, so the quadratic path count is fine.
    let mut found: Vec<(Vec<EdgeId>, BTreeSet<VehicleId>)> = Vec::new();
    let out_edges: HashMap<NodeId, Vec<EdgeId>> = {
        let mut m: HashMap<NodeId, Vec<EdgeId>> = HashMap::new();
        for &e in &graph.edges {
            m.entry(instance.network.edge(e).from).or_default().push(e);
        }
        for v in m.values_mut() {
            v.sort_unstable();
        }
        m
    };

    fn extend(
        instance: &Instance,
        graph: &RouteGraph,
        out_edges: &HashMap<NodeId, Vec<EdgeId>>,
        path: &mut Vec<EdgeId>,
        shared: &BTreeSet<VehicleId>,
        visited: &mut HashSet<NodeId>,
        found: &mut Vec<(Vec<EdgeId>, BTreeSet<VehicleId>)>,
    ) {
        if shared.len() >= 2 {
            found.push((path.clone(), shared.clone()));
        }
        let tail = instance.network.edge(*path.last().unwrap()).to;
        for &e in out_edges.get(&tail).map(Vec::as_slice).unwrap_or(&[]) {
            let to = instance.network.edge(e).to;
            if visited.contains(&to) {
                continue;
            }
            let next: BTreeSet<VehicleId> = shared
                .intersection(&graph.vehicles_on[&e].iter().copied().collect())
                .copied()
                .collect();
            if next.len() < 2 {
                continue;
            }
            visited.insert(to);
            path.push(e);
            extend(instance, graph, out_edges, path, &next, visited, found);
            path.pop();
            visited.remove(&to);
        }
    }

    for &e in &graph.edges {
        let shared: BTreeSet<VehicleId> = graph.vehicles_on[&e].iter().copied().collect();
        if shared.len() < 2 {
            continue;
        }
        let edge = instance.network.edge(e);
        let mut visited: HashSet<NodeId> = [edge.from, edge.to].into_iter().collect();
        let mut path = vec![e];
        extend(
            instance,
            graph,
            &out_edges,
            &mut path,
            &shared,
            &mut visited,
            &mut found,
        );
    }

    // Keep only maximal paths: drop P when a strict super-path has the same
    // shared vehicle set.
    let mut keep = vec![true; found.len()];
    for (i, (p, s)) in found.iter().enumerate() {
        for (j, (q, t)) in found.iter().enumerate() {
            if i != j && s == t && p.len() < q.len() && is_subsequence(p, q) {
                keep[i] = false;
                break;
            }
        }
    }
    let mut out: Vec<_> = found
        .into_iter()
        .zip(keep)
        .filter_map(|(x, k)| k.then_some(x))
        .collect();
    out.sort();
    out.dedup();
    out
}

fn is_subsequence(short: &[EdgeId], long: &[EdgeId]) -> bool {
    long.windows(short.len()).any(|w| w == short)
}

/// 2-partition of the vehicles whose route unions are disjoint, if one
/// exists. Computed from the connected components of the route-intersection
/// graph.
pub fn decomposable_partition(
    instance: &Instance,
) -> Option<(Vec<VehicleId>, Vec<VehicleId>)> {
    partition_by(instance, |u, v| routes_intersect(instance, u, v))
}

/// Partition check behind the PTAS precondition: splits the vehicles into
/// (U1, U2) such that any cross pair has disjoint routes or disjoint feasible
/// bucket sets. `None` if the instance is inseparable (or trivial).
pub fn separable_partition(
    instance: &Instance,
    buckets: &BucketSet,
) -> Option<(Vec<VehicleId>, Vec<VehicleId>)> {
    partition_by(instance, |u, v| {
        routes_intersect(instance, u, v) && buckets_intersect(buckets, u, v)
    })
}

fn routes_intersect(instance: &Instance, u: VehicleId, v: VehicleId) -> bool {
    let ru: HashSet<EdgeId> = instance.vehicle(u).route.iter().copied().collect();
    instance.vehicle(v).route.iter().any(|e| ru.contains(e))
}

fn buckets_intersect(buckets: &BucketSet, u: VehicleId, v: VehicleId) -> bool {
    let su: HashSet<usize> = buckets.feasible_for(u).iter().copied().collect();
    buckets.feasible_for(v).iter().any(|t| su.contains(t))
}

/// Connected components of the relation `linked`; the partition is the first
/// component versus everything else.
fn partition_by(
    instance: &Instance,
    linked: impl Fn(VehicleId, VehicleId) -> bool,
) -> Option<(Vec<VehicleId>, Vec<VehicleId>)> {
    let ids: Vec<VehicleId> = instance.vehicles.iter().map(|v| v.id).collect();
    if ids.len() < 2 {
        return None;
    }
    let mut comp: Vec<usize> = (0..ids.len()).collect();
    fn find(comp: &mut Vec<usize>, i: usize) -> usize {
        if comp[i] != i {
            let r = find(comp, comp[i]);
            comp[i] = r;
        }
        comp[i]
    }
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            if linked(ids[i], ids[j]) {
                let (a, b) = (find(&mut comp, i), find(&mut comp, j));
                if a != b {
                    comp[a] = b;
                }
            }
        }
    }
    let first = find(&mut comp, 0);
    let (mut one, mut two) = (Vec::new(), Vec::new());
    for i in 0..ids.len() {
        if find(&mut comp, i) == first {
            one.push(ids[i]);
        } else {
            two.push(ids[i]);
        }
    }
    if two.is_empty() {
        None
    } else {
        Some((one, two))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instgen::{looped_five_vehicle, seven_vehicle_tree};

    #[test]
    fn seven_vehicle_example_is_a_tree_with_shared_trunk() {
        let inst = seven_vehicle_tree();
        let g = build_route_graph(&inst).unwrap();
        assert_eq!(g.shape, GraphShape::Tree);
        assert_eq!(g.root, Some(0)); // node A
        // C -> D is shared by all seven vehicles.
        let cd = inst
            .network
            .edges
            .iter()
            .position(|e| (e.from, e.to) == (2, 3))
            .unwrap();
        assert_eq!(g.vehicles_on[&cd], vec![0, 1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn single_vehicle_route_is_a_tree() {
        let net = RoadNetwork {
            nodes: vec![0, 1],
            edges: vec![Edge { from: 0, to: 1, time: 1.0, cost: 1.0 }],
        };
        let inst = Instance {
            network: net,
            vehicles: vec![Vehicle {
                id: 0,
                origin: 0,
                dest: 1,
                t_depart_min: 0.0,
                t_arrive_max: 5.0,
                route: vec![0],
            }],
            lambda: None,
            sigma_l: 0.1,
            sigma_f: 0.1,
        };
        let g = build_route_graph(&inst).unwrap();
        assert_eq!(g.shape, GraphShape::Tree);
        assert_eq!(g.root, Some(0));
        assert_eq!(g.vehicles_on[&0], vec![0]);
    }

    #[test]
    fn loop_example_is_loopy() {
        let inst = looped_five_vehicle();
        let g = build_route_graph(&inst).unwrap();
        assert_eq!(g.shape, GraphShape::Loopy);
        assert_eq!(g.root, None);
    }

    #[test]
    fn infeasible_vehicle_is_rejected() {
        let mut inst = seven_vehicle_tree();
        inst.vehicles[0].t_arrive_max = inst.vehicles[0].t_depart_min + 1.0;
        match build_route_graph(&inst) {
            Err(Error::InfeasibleVehicle(0)) => {}
            other => panic!("expected InfeasibleVehicle, got {other:?}"),
        }
    }

    #[test]
    fn broken_route_is_rejected() {
        let mut inst = seven_vehicle_tree();
        inst.vehicles[0].route.swap(0, 1);
        assert!(matches!(
            build_route_graph(&inst),
            Err(Error::DisconnectedRoute(0, _))
        ));
    }

    #[test]
    fn seven_vehicle_maximal_ideal_paths() {
        let inst = seven_vehicle_tree();
        let g = build_route_graph(&inst).unwrap();
        let paths = maximal_ideal_paths(&inst, &g);
        let by_nodes: Vec<(Vec<NodeId>, Vec<VehicleId>)> = paths
            .iter()
            .map(|(es, vs)| {
                let mut nodes = vec![inst.network.edge(es[0]).from];
                nodes.extend(es.iter().map(|&e| inst.network.edge(e).to));
                (nodes, vs.iter().copied().collect())
            })
            .collect();
        // A=0 B=1 C=2 D=3 E=4 F=5 G=6 H=7 I=8 J=9 K=10. The first five are
        // the textbook ones; the last two also satisfy the definition (their
        // shared sets shrink under any extension).
        let expect: Vec<(Vec<NodeId>, Vec<VehicleId>)> = vec![
            (vec![2, 3], vec![0, 1, 2, 3, 4, 5, 6]),
            (vec![2, 3, 4], vec![0, 1, 2, 3, 4]),
            (vec![1, 2, 3, 4], vec![0, 1]),
            (vec![9, 2, 3, 4], vec![3, 4]),
            (vec![2, 3, 10], vec![5, 6]),
            (vec![1, 2, 3], vec![0, 1, 6]),
            (vec![9, 2, 3], vec![3, 4, 5]),
        ];
        for want in &expect {
            assert!(
                by_nodes.contains(want),
                "missing maximal ideal path {want:?} in {by_nodes:?}"
            );
        }
        assert_eq!(by_nodes.len(), expect.len(), "{by_nodes:?}");
    }

    #[test]
    fn disjoint_routes_have_no_ideal_paths_and_decompose() {
        let net = RoadNetwork {
            nodes: vec![0, 1, 2, 3],
            edges: vec![
                Edge { from: 0, to: 1, time: 1.0, cost: 1.0 },
                Edge { from: 2, to: 3, time: 1.0, cost: 1.0 },
            ],
        };
        let inst = Instance {
            network: net,
            vehicles: vec![
                Vehicle { id: 0, origin: 0, dest: 1, t_depart_min: 0.0, t_arrive_max: 4.0, route: vec![0] },
                Vehicle { id: 1, origin: 2, dest: 3, t_depart_min: 0.0, t_arrive_max: 4.0, route: vec![1] },
            ],
            lambda: None,
            sigma_l: 0.1,
            sigma_f: 0.1,
        };
        let g = build_route_graph(&inst).unwrap();
        assert_eq!(g.shape, GraphShape::Forest);
        assert!(maximal_ideal_paths(&inst, &g).is_empty());
        assert_eq!(decomposable_partition(&inst), Some((vec![0], vec![1])));
        assert_eq!(split_components(&inst).unwrap().len(), 2);
    }

    #[test]
    fn three_vehicles_sharing_one_edge() {
        let net = RoadNetwork {
            nodes: vec![0, 1, 2, 3, 4],
            edges: vec![
                Edge { from: 0, to: 1, time: 1.0, cost: 1.0 },
                Edge { from: 2, to: 0, time: 1.0, cost: 1.0 },
                Edge { from: 3, to: 0, time: 1.0, cost: 1.0 },
                Edge { from: 1, to: 4, time: 1.0, cost: 1.0 },
            ],
        };
        let inst = Instance {
            network: net,
            vehicles: vec![
                Vehicle { id: 0, origin: 2, dest: 1, t_depart_min: 0.0, t_arrive_max: 9.0, route: vec![1, 0] },
                Vehicle { id: 1, origin: 3, dest: 1, t_depart_min: 0.0, t_arrive_max: 9.0, route: vec![2, 0] },
                Vehicle { id: 2, origin: 0, dest: 4, t_depart_min: 0.0, t_arrive_max: 9.0, route: vec![0, 3] },
            ],
            lambda: None,
            sigma_l: 0.1,
            sigma_f: 0.1,
        };
        let g = build_route_graph(&inst).unwrap();
        let paths = maximal_ideal_paths(&inst, &g);
        // Exhaustive enumeration on this toy graph: the only path shared by
        // all three is the single edge 0 -> 1.
        assert!(paths.contains(&(vec![0], [0, 1, 2].into_iter().collect())));
        assert_eq!(decomposable_partition(&inst), None);
    }

    #[test]
    fn seven_vehicle_example_is_not_decomposable() {
        let inst = seven_vehicle_tree();
        assert_eq!(decomposable_partition(&inst), None);
    }

    #[test]
    fn route_graph_build_is_deterministic() {
        let inst = seven_vehicle_tree();
        let a = build_route_graph(&inst).unwrap();
        let b = build_route_graph(&inst).unwrap();
        assert_eq!(a.shape, b.shape);
        assert_eq!(a.root, b.root);
        assert_eq!(a.edges, b.edges);
    }

    #[test]
    fn instance_json_round_trip() {
        let inst = seven_vehicle_tree();
        let text = inst.to_json().unwrap();
        let back = Instance::from_json(&text).unwrap();
        assert_eq!(inst, back);
    }
}
