//! Solver-agnostic linear models: construction of the assignment (`va`),
//! time-window-overlap (`twof`), continuous-time (`ct`), extended assignment
//! (`gva`) and LP-relaxation (`lp`) formulations, plus LP-format text export
//! and a matching reader.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::looped::LoopBreakOutput;
use crate::model::{EdgeId, Instance, NodeId, VehicleId};
use crate::objective::Assignment;
use crate::timewin::{node_time_window, BucketSet, PseudoPlatoonGraph};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Continuous,
    Binary,
    Integer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub kind: VarKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpSense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinConstraint {
    pub name: String,
    /// (variable index, coefficient) pairs; indices refer to `MilpModel::vars`.
    pub terms: Vec<(usize, f64)>,
    pub sense: CmpSense,
    pub rhs: f64,
}

/// A linear model with a maximization objective. Variables keep their
/// declaration order, which fixes the exported text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilpModel {
    pub name: String,
    pub vars: Vec<Variable>,
    pub constraints: Vec<LinConstraint>,
    /// (variable index, coefficient) pairs of the maximized objective.
    pub objective: Vec<(usize, f64)>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl MilpModel {
    pub fn new(name: &str) -> Self {
        MilpModel {
            name: name.to_string(),
            vars: Vec::new(),
            constraints: Vec::new(),
            objective: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add_var(&mut self, name: String, lower: f64, upper: f64, kind: VarKind) -> usize {
        debug_assert!(
            !self.index.contains_key(&name),
            "duplicate variable name {name}"
        );
        let idx = self.vars.len();
        self.index.insert(name.clone(), idx);
        self.vars.push(Variable { name, lower, upper, kind });
        idx
    }

    pub fn add_binary(&mut self, name: String) -> usize {
        self.add_var(name, 0.0, 1.0, VarKind::Binary)
    }

    pub fn add_constraint(
        &mut self,
        name: String,
        terms: Vec<(usize, f64)>,
        sense: CmpSense,
        rhs: f64,
    ) {
        self.constraints.push(LinConstraint { name, terms, sense, rhs });
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Drops integrality, keeping the [0, 1] bounds of binaries.
    pub fn relax(&self) -> MilpModel {
        let mut relaxed = self.clone();
        for v in &mut relaxed.vars {
            v.kind = VarKind::Continuous;
        }
        relaxed.name = format!("{}_relax", self.name);
        relaxed
    }

    /// Objective value of a point, no feasibility check.
    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective.iter().map(|&(i, c)| c * values[i]).sum()
    }

    /// Largest constraint violation and bound violation of a point.
    pub fn feasibility_residual(&self, values: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for c in &self.constraints {
            let lhs: f64 = c.terms.iter().map(|&(i, k)| k * values[i]).sum();
            let gap = match c.sense {
                CmpSense::Le => lhs - c.rhs,
                CmpSense::Ge => c.rhs - lhs,
                CmpSense::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(gap);
        }
        for (v, &x) in self.vars.iter().zip(values) {
            worst = worst.max(v.lower - x).max(x - v.upper);
        }
        worst
    }

    pub fn stats(&self) -> ModelStats {
        let mut s = ModelStats {
            continuous: 0,
            binary: 0,
            integer: 0,
            constraints: self.constraints.len(),
        };
        for v in &self.vars {
            match v.kind {
                VarKind::Continuous => s.continuous += 1,
                VarKind::Binary => s.binary += 1,
                VarKind::Integer => s.integer += 1,
            }
        }
        s
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .vars
            .iter()
            .enumerate()
            .map(|(i, v)| (v.name.clone(), i))
            .collect();
    }

    /// Reads a 0/1 bucket choice out of the `x[u][t]` variables.
    pub fn assignment_from_values(&self, values: &[f64]) -> Assignment {
        let mut bucket_of = BTreeMap::new();
        for (i, v) in self.vars.iter().enumerate() {
            if values[i] > 0.5 {
                if let Some((u, t)) = parse_x_name(&v.name) {
                    bucket_of.insert(u, t);
                }
            }
        }
        Assignment { bucket_of }
    }
}

fn parse_x_name(name: &str) -> Option<(VehicleId, usize)> {
    let rest = name.strip_prefix("x[")?;
    let (u, rest) = rest.split_once("][")?;
    let t = rest.strip_suffix(']')?;
    Some((u.parse().ok()?, t.parse().ok()?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelStats {
    pub continuous: usize,
    pub binary: usize,
    pub integer: usize,
    pub constraints: usize,
}

impl ModelStats {
    pub fn vars(&self) -> usize {
        self.continuous + self.binary + self.integer
    }
}

/// Vehicles sharing edge `e` that can use bucket `t`.
fn bucket_edge_groups(
    instance: &Instance,
    buckets: &BucketSet,
) -> BTreeMap<(EdgeId, usize), Vec<VehicleId>> {
    let mut groups: BTreeMap<(EdgeId, usize), Vec<VehicleId>> = BTreeMap::new();
    for v in &instance.vehicles {
        for &t in buckets.feasible_for(v.id) {
            for &e in &v.route {
                groups.entry((e, t)).or_default().push(v.id);
            }
        }
    }
    for members in groups.values_mut() {
        members.sort_unstable();
    }
    groups
}

/// Effective platoon capacity on an edge: the stated capacity, or the edge's
/// sharing count when platoons are unbounded (no platoon can exceed it).
/// Clamped to two so a solo vehicle can never count as a saturated platoon.
fn edge_capacity(instance: &Instance, sharing: usize) -> u32 {
    match instance.lambda {
        Some(l) => l,
        None => sharing.max(2) as u32,
    }
}

/// Vehicle-to-time-bucket assignment model over an adaptive bucket set.
pub fn build_va(instance: &Instance, buckets: &BucketSet) -> Result<MilpModel> {
    let mut m = MilpModel::new("va");
    build_va_into(&mut m, instance, buckets, false)?;
    Ok(m)
}

fn build_va_into(
    m: &mut MilpModel,
    instance: &Instance,
    buckets: &BucketSet,
    skip_trivial: bool,
) -> Result<()> {
    let edge_vehicles = instance.edge_vehicles();
    let mut x: BTreeMap<(VehicleId, usize), usize> = BTreeMap::new();
    for v in &instance.vehicles {
        let feas = buckets.feasible_for(v.id);
        if feas.is_empty() {
            return Err(Error::InfeasibleAssignment(format!(
                "vehicle {} has no feasible bucket",
                v.id
            )));
        }
        for &t in feas {
            let idx = m.add_binary(format!("x[{}][{}]", v.id, t));
            x.insert((v.id, t), idx);
        }
    }
    let groups = bucket_edge_groups(instance, buckets);
    let mut objective: Vec<(usize, f64)> = Vec::new();
    for ((e, t), members) in &groups {
        if skip_trivial && members.len() < 2 {
            // A lone vehicle on (e, t) saves nothing; the block only feeds
            // the relaxation.
            continue;
        }
        let n = members.len() as f64;
        let lam = f64::from(edge_capacity(instance, edge_vehicles[e].len()));
        let cost = instance.network.edge(*e).cost;
        // Tight valid ranges: z is a quotient of at most n by lam, q the
        // remainder, w the trailing count.
        let z = m.add_var(format!("z[{e}][{t}]"), 0.0, (n / lam).floor(), VarKind::Integer);
        let q = m.add_var(format!("q[{e}][{t}]"), 0.0, n.min(lam - 1.0), VarKind::Integer);
        let w = m.add_var(format!("w[{e}][{t}]"), 0.0, (n - 1.0).max(0.0), VarKind::Integer);
        let y = m.add_binary(format!("y[{e}][{t}]"));
        let yp = m.add_binary(format!("yp[{e}][{t}]"));
        objective.push((z, instance.sigma_l * cost));
        objective.push((yp, instance.sigma_l * cost));
        objective.push((w, instance.sigma_f * cost));

        let sum_x: Vec<usize> = members.iter().map(|&u| x[&(u, *t)]).collect();
        // Quotient pinning: lam*z <= sum x <= lam*(z+1) - 1.
        let mut c3 = vec![(z, lam)];
        c3.extend(sum_x.iter().map(|&i| (i, -1.0)));
        m.add_constraint(format!("quot_lo[{e}][{t}]"), c3, CmpSense::Le, 0.0);
        let mut c4 = vec![(z, lam)];
        c4.extend(sum_x.iter().map(|&i| (i, -1.0)));
        m.add_constraint(format!("quot_hi[{e}][{t}]"), c4, CmpSense::Ge, 1.0 - lam);
        // Trailing count: w - sum x + z + y = 0.
        let mut c5 = vec![(w, 1.0), (z, 1.0), (y, 1.0)];
        c5.extend(sum_x.iter().map(|&i| (i, -1.0)));
        m.add_constraint(format!("trail[{e}][{t}]"), c5, CmpSense::Eq, 0.0);
        // Remainder: q - sum x + lam*z = 0.
        let mut c6 = vec![(q, 1.0), (z, lam)];
        c6.extend(sum_x.iter().map(|&i| (i, -1.0)));
        m.add_constraint(format!("rem[{e}][{t}]"), c6, CmpSense::Eq, 0.0);
        // y = 1 iff the remainder platoon exists.
        m.add_constraint(
            format!("open_lo[{e}][{t}]"),
            vec![(y, 1.0), (q, -1.0)],
            CmpSense::Le,
            0.0,
        );
        m.add_constraint(
            format!("open_hi[{e}][{t}]"),
            vec![(y, lam), (q, -1.0)],
            CmpSense::Ge,
            0.0,
        );
        // The remainder platoon leads only from size two upward.
        m.add_constraint(
            format!("pair[{e}][{t}]"),
            vec![(q, 1.0), (yp, -2.0)],
            CmpSense::Ge,
            0.0,
        );
        m.add_constraint(
            format!("pair_open[{e}][{t}]"),
            vec![(yp, 1.0), (y, -1.0)],
            CmpSense::Le,
            0.0,
        );
    }
    for v in &instance.vehicles {
        let terms: Vec<(usize, f64)> = buckets
            .feasible_for(v.id)
            .iter()
            .map(|&t| (x[&(v.id, t)], 1.0))
            .collect();
        m.add_constraint(format!("assign[{}]", v.id), terms, CmpSense::Eq, 1.0);
    }
    m.objective = objective;
    Ok(())
}

/// Assignment model plus per-edge aggregate rows that tighten its
/// relaxation for the embedded search without touching the integer optimum:
/// platoons counted by the objective have at least two members, and the
/// buckets used on an edge are at least the stabbing number of its
/// vehicles' feasible runs.
pub fn build_va_strengthened(instance: &Instance, buckets: &BucketSet) -> Result<MilpModel> {
    let mut m = MilpModel::new("va");
    build_va_into(&mut m, instance, buckets, true)?;
    add_va_aggregate_rows(&mut m, instance, buckets);
    Ok(m)
}

fn add_va_aggregate_rows(m: &mut MilpModel, instance: &Instance, buckets: &BucketSet) {
    for (e, members) in instance.edge_vehicles() {
        let blocks: Vec<usize> = (0..buckets.len())
            .filter(|t| m.var_index(&format!("z[{e}][{t}]")).is_some())
            .collect();
        if blocks.is_empty() {
            continue;
        }
        let n = members.len() as f64;
        let mut lead_terms = Vec::new();
        let mut trail_terms = Vec::new();
        for &t in &blocks {
            let z = m.var_index(&format!("z[{e}][{t}]")).unwrap();
            let w = m.var_index(&format!("w[{e}][{t}]")).unwrap();
            let yp = m.var_index(&format!("yp[{e}][{t}]")).unwrap();
            lead_terms.push((z, 1.0));
            lead_terms.push((yp, 1.0));
            trail_terms.push((w, 1.0));
        }
        m.add_constraint(
            format!("lead_cap[{e}]"),
            lead_terms,
            CmpSense::Le,
            (n / 2.0).floor(),
        );
        // The vehicles of an edge occupy at least as many buckets as the
        // stabbing number of their contiguous feasible runs, so at most
        // n - stab of them trail.
        let mut runs: Vec<(usize, usize)> = members
            .iter()
            .map(|&u| {
                let feas = buckets.feasible_for(u);
                (*feas.first().unwrap(), *feas.last().unwrap())
            })
            .collect();
        runs.sort_by_key(|&(lo, hi)| (hi, lo));
        let mut stab = 0usize;
        let mut last: Option<usize> = None;
        for (lo, hi) in runs {
            if last.map_or(true, |p| lo > p) {
                stab += 1;
                last = Some(hi);
            }
        }
        m.add_constraint(
            format!("trail_cap[{e}]"),
            trail_terms,
            CmpSense::Le,
            n - stab as f64,
        );
    }
}

/// Overlap model: lead/follow binaries on every shared edge, tied by the
/// interval overlap graph and the triple coordination rows.
pub fn build_twof(instance: &Instance, pseudo: &PseudoPlatoonGraph) -> Result<MilpModel> {
    let mut m = MilpModel::new("twof");
    let edge_vehicles = instance.edge_vehicles();
    let mut lead: BTreeMap<(VehicleId, EdgeId), usize> = BTreeMap::new();
    let mut follow: BTreeMap<(VehicleId, VehicleId, EdgeId), usize> = BTreeMap::new();

    for (&e, members) in &edge_vehicles {
        for &v in members {
            lead.insert((v, e), m.add_binary(format!("l[{v}][{e}]")));
        }
        for (i, &v) in members.iter().enumerate() {
            for &u in &members[i + 1..] {
                // u > v by the sort order of the member list.
                follow.insert((u, v, e), m.add_binary(format!("f[{u}][{v}][{e}]")));
            }
        }
    }

    let mut objective: Vec<(usize, f64)> = Vec::new();
    for (&e, members) in &edge_vehicles {
        let cost = instance.network.edge(e).cost;
        for &v in members {
            objective.push((lead[&(v, e)], instance.sigma_l * cost));
        }
        for (i, &v) in members.iter().enumerate() {
            for &u in &members[i + 1..] {
                objective.push((follow[&(u, v, e)], instance.sigma_f * cost));
            }
        }
    }
    m.objective = objective;

    for (&e, members) in &edge_vehicles {
        let lam = f64::from(edge_capacity(instance, members.len()));
        for &v in members {
            let followers: Vec<(usize, f64)> = members
                .iter()
                .filter(|&&u| u > v)
                .map(|&u| (follow[&(u, v, e)], 1.0))
                .collect();
            // Platoon size cap: sum_{u>v} f <= (lam - 1) l.
            let mut cap = followers.clone();
            cap.push((lead[&(v, e)], 1.0 - lam));
            m.add_constraint(format!("cap[{v}][{e}]"), cap, CmpSense::Le, 0.0);
            // A lead must attract at least one follower.
            let mut min_follow = followers;
            min_follow.push((lead[&(v, e)], -1.0));
            m.add_constraint(format!("leadmin[{v}][{e}]"), min_follow, CmpSense::Ge, 0.0);
            // Follow at most one smaller-index vehicle, none when leading.
            let mut heads: Vec<(usize, f64)> = members
                .iter()
                .filter(|&&w| w < v)
                .map(|&w| (follow[&(v, w, e)], 1.0))
                .collect();
            heads.push((lead[&(v, e)], 1.0));
            m.add_constraint(format!("onehead[{v}][{e}]"), heads, CmpSense::Le, 1.0);
        }
        // Overlap gate: following requires intersecting windows.
        for (i, &v) in members.iter().enumerate() {
            for &u in &members[i + 1..] {
                let a = f64::from(pseudo.linked(u, v));
                m.add_constraint(
                    format!("gate[{u}][{v}][{e}]"),
                    vec![(follow[&(u, v, e)], 1.0)],
                    CmpSense::Le,
                    a,
                );
            }
        }
        // The largest index on the edge can never lead.
        let max_v = *members.last().unwrap();
        m.add_constraint(
            format!("nolead[{max_v}][{e}]"),
            vec![(lead[&(max_v, e)], 1.0)],
            CmpSense::Le,
            0.0,
        );
    }

    // Triple coordination: if u,w platoon somewhere and v,w platoon
    // somewhere, u and v get coordinated as well. Rows exist only where
    // both follow variables do.
    let ids: Vec<VehicleId> = instance.vehicles.iter().map(|v| v.id).collect();
    let edges: Vec<EdgeId> = edge_vehicles.keys().copied().collect();
    for &u in &ids {
        for &v in &ids {
            if u >= v {
                continue;
            }
            for &w in &ids {
                if w == u || w == v {
                    continue;
                }
                let a = f64::from(pseudo.linked(u, v));
                for &e in &edges {
                    let Some(&f_uw) = follow.get(&(u.max(w), u.min(w), e)) else {
                        continue;
                    };
                    for &e2 in &edges {
                        let Some(&f_vw) = follow.get(&(v.max(w), v.min(w), e2)) else {
                            continue;
                        };
                        m.add_constraint(
                            format!("triple[{u}][{v}][{w}][{e}][{e2}]"),
                            vec![(f_uw, 1.0), (f_vw, 1.0)],
                            CmpSense::Le,
                            1.0 + a,
                        );
                    }
                }
            }
        }
    }
    Ok(m)
}

/// Tightest activation coefficient for the pair (u, v) at node `i`: the
/// largest feasible arrival-time difference in either direction.
fn pair_big_m(instance: &Instance, u: VehicleId, v: VehicleId, node: NodeId) -> Result<f64> {
    let wu = node_time_window(instance, u, node)?;
    let wv = node_time_window(instance, v, node)?;
    Ok((wu.upper - wv.lower).max(wv.upper - wu.lower).max(0.0))
}

/// Continuous-time model with per-node arrival variables and pairwise
/// simultaneity activation; valid on any route graph.
pub fn build_ct(instance: &Instance) -> Result<MilpModel> {
    instance.validate()?;
    let mut m = MilpModel::new("ct");
    let edge_vehicles = instance.edge_vehicles();

    let mut tvar: BTreeMap<(VehicleId, NodeId), usize> = BTreeMap::new();
    for v in &instance.vehicles {
        for node in v.route_nodes(&instance.network) {
            let w = node_time_window(instance, v.id, node)?;
            let idx = m.add_var(
                format!("t[{}][{}]", v.id, node),
                w.lower,
                w.upper,
                VarKind::Continuous,
            );
            tvar.insert((v.id, node), idx);
        }
    }
    let mut lead: BTreeMap<(VehicleId, EdgeId), usize> = BTreeMap::new();
    let mut follow: BTreeMap<(VehicleId, VehicleId, EdgeId), usize> = BTreeMap::new();
    for (&e, members) in &edge_vehicles {
        for &v in members {
            lead.insert((v, e), m.add_binary(format!("l[{v}][{e}]")));
        }
        for (i, &v) in members.iter().enumerate() {
            for &u in &members[i + 1..] {
                follow.insert((u, v, e), m.add_binary(format!("f[{u}][{v}][{e}]")));
            }
        }
    }

    let mut objective: Vec<(usize, f64)> = Vec::new();
    for (&e, members) in &edge_vehicles {
        let cost = instance.network.edge(e).cost;
        for &v in members {
            objective.push((lead[&(v, e)], instance.sigma_l * cost));
        }
        for (i, &v) in members.iter().enumerate() {
            for &u in &members[i + 1..] {
                objective.push((follow[&(u, v, e)], instance.sigma_f * cost));
            }
        }
    }
    m.objective = objective;

    // Travel-time chain along each route.
    for v in &instance.vehicles {
        let mut at = v.origin;
        for &e in &v.route {
            let edge = instance.network.edge(e);
            m.add_constraint(
                format!("chain[{}][{}]", v.id, e),
                vec![(tvar[&(v.id, edge.to)], 1.0), (tvar[&(v.id, at)], -1.0)],
                CmpSense::Eq,
                edge.time,
            );
            at = edge.to;
        }
    }

    for (&e, members) in &edge_vehicles {
        let head = instance.network.edge(e).from;
        let lam = f64::from(edge_capacity(instance, members.len()));
        // Simultaneity activation per follower pair.
        for (i, &v) in members.iter().enumerate() {
            for &u in &members[i + 1..] {
                let big_m = pair_big_m(instance, u, v, head)?;
                let f = follow[&(u, v, e)];
                m.add_constraint(
                    format!("sync_hi[{u}][{v}][{e}]"),
                    vec![(tvar[&(u, head)], 1.0), (tvar[&(v, head)], -1.0), (f, big_m)],
                    CmpSense::Le,
                    big_m,
                );
                m.add_constraint(
                    format!("sync_lo[{u}][{v}][{e}]"),
                    vec![(tvar[&(u, head)], 1.0), (tvar[&(v, head)], -1.0), (f, -big_m)],
                    CmpSense::Ge,
                    -big_m,
                );
            }
        }
        for &v in members {
            let followers: Vec<(usize, f64)> = members
                .iter()
                .filter(|&&u| u > v)
                .map(|&u| (follow[&(u, v, e)], 1.0))
                .collect();
            let mut heads: Vec<(usize, f64)> = members
                .iter()
                .filter(|&&w| w < v)
                .map(|&w| (follow[&(v, w, e)], 1.0))
                .collect();
            heads.push((lead[&(v, e)], 1.0));
            m.add_constraint(format!("onehead[{v}][{e}]"), heads, CmpSense::Le, 1.0);
            let mut cap = followers.clone();
            cap.push((lead[&(v, e)], 1.0 - lam));
            m.add_constraint(format!("cap[{v}][{e}]"), cap, CmpSense::Le, 0.0);
            let mut min_follow = followers;
            min_follow.push((lead[&(v, e)], -1.0));
            m.add_constraint(format!("leadmin[{v}][{e}]"), min_follow, CmpSense::Ge, 0.0);
        }
    }
    Ok(m)
}

/// Linear relaxation used by the randomized rounding algorithm; defined for
/// unbounded platoon capacity.
pub fn build_lp_relax(instance: &Instance, buckets: &BucketSet) -> Result<MilpModel> {
    if instance.lambda.is_some() {
        return Err(Error::CapacityNotSupported);
    }
    let mut m = MilpModel::new("lp");
    let mut x: BTreeMap<(VehicleId, usize), usize> = BTreeMap::new();
    for v in &instance.vehicles {
        let feas = buckets.feasible_for(v.id);
        if feas.is_empty() {
            return Err(Error::InfeasibleAssignment(format!(
                "vehicle {} has no feasible bucket",
                v.id
            )));
        }
        for &t in feas {
            let idx = m.add_var(format!("x[{}][{}]", v.id, t), 0.0, 1.0, VarKind::Continuous);
            x.insert((v.id, t), idx);
        }
    }
    let groups = bucket_edge_groups(instance, buckets);
    let mut objective: Vec<(usize, f64)> = Vec::new();
    for ((e, t), members) in &groups {
        let cost = instance.network.edge(*e).cost;
        let y = m.add_var(format!("y[{e}][{t}]"), 0.0, 1.0, VarKind::Continuous);
        let yp = m.add_var(format!("yp[{e}][{t}]"), 0.0, 1.0, VarKind::Continuous);
        let w = m.add_var(format!("w[{e}][{t}]"), 0.0, f64::INFINITY, VarKind::Continuous);
        objective.push((yp, instance.sigma_l * cost));
        objective.push((w, instance.sigma_f * cost));

        // Pair activation: yp >= x_u + x_v - 1.
        for (i, &u) in members.iter().enumerate() {
            for &v in &members[i + 1..] {
                m.add_constraint(
                    format!("pair[{u}][{v}][{e}][{t}]"),
                    vec![(yp, 1.0), (x[&(u, *t)], -1.0), (x[&(v, *t)], -1.0)],
                    CmpSense::Ge,
                    -1.0,
                );
            }
        }
        // 2 yp <= sum x.
        let mut c3 = vec![(yp, 2.0)];
        c3.extend(members.iter().map(|&u| (x[&(u, *t)], -1.0)));
        m.add_constraint(format!("paircap[{e}][{t}]"), c3, CmpSense::Le, 0.0);
        // w = sum x - y.
        let mut c4 = vec![(w, 1.0), (y, 1.0)];
        c4.extend(members.iter().map(|&u| (x[&(u, *t)], -1.0)));
        m.add_constraint(format!("trail[{e}][{t}]"), c4, CmpSense::Eq, 0.0);
        // y >= x_u for every sharing vehicle.
        for &u in members {
            m.add_constraint(
                format!("head[{u}][{e}][{t}]"),
                vec![(y, 1.0), (x[&(u, *t)], -1.0)],
                CmpSense::Ge,
                0.0,
            );
        }
    }
    for v in &instance.vehicles {
        let terms: Vec<(usize, f64)> = buckets
            .feasible_for(v.id)
            .iter()
            .map(|&t| (x[&(v.id, t)], 1.0))
            .collect();
        m.add_constraint(format!("assign[{}]", v.id), terms, CmpSense::Eq, 1.0);
    }
    m.objective = objective;
    Ok(m)
}

/// Assignment model over the loop-broken extended vehicles, with equality
/// rows that keep all copies of a vehicle on time-consistent buckets.
pub fn build_gva(lb: &LoopBreakOutput) -> Result<MilpModel> {
    if !lb.converged() {
        return Err(Error::LoopBreakIncomplete);
    }
    let instance = lb.extended_instance();
    let mut m = MilpModel::new("gva");
    build_va_into(&mut m, &instance, &lb.buckets, false)?;
    for ((parent, i, j), pairs) in &lb.consistency {
        let (ci, cj) = (lb.mapping[parent][*i], lb.mapping[parent][*j]);
        for &(s, t) in pairs {
            let a = m
                .var_index(&format!("x[{ci}][{s}]"))
                .ok_or_else(|| Error::InvalidParams(format!("missing x[{ci}][{s}]")))?;
            let b = m
                .var_index(&format!("x[{cj}][{t}]"))
                .ok_or_else(|| Error::InvalidParams(format!("missing x[{cj}][{t}]")))?;
            m.add_constraint(
                format!("consist[{parent}][{i}][{j}][{s}][{t}]"),
                vec![(a, 1.0), (b, -1.0)],
                CmpSense::Eq,
                0.0,
            );
        }
    }
    Ok(m)
}

fn fmt_num(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

fn fmt_terms(terms: &[(usize, f64)], vars: &[Variable]) -> String {
    let mut out = String::new();
    for (k, &(i, c)) in terms.iter().enumerate() {
        if k == 0 {
            if c < 0.0 {
                out.push_str("- ");
            }
        } else if c < 0.0 {
            out.push_str(" - ");
        } else {
            out.push_str(" + ");
        }
        let a = c.abs();
        if (a - 1.0).abs() > 1e-15 {
            out.push_str(&fmt_num(a));
            out.push(' ');
        }
        out.push_str(&vars[i].name);
    }
    out
}

/// Wraps an expression at term boundaries; continuation lines are indented
/// and carry no row name, which the reader understands.
fn wrap_expr(expr: &str, first_indent: usize) -> String {
    const WIDTH: usize = 200;
    let mut out = String::new();
    let mut line_len = first_indent;
    for (i, token) in expr.split(' ').enumerate() {
        if i > 0 && line_len + token.len() + 1 > WIDTH {
            out.push_str("\n   ");
            line_len = 3;
        } else if i > 0 {
            out.push(' ');
            line_len += 1;
        }
        out.push_str(token);
        line_len += token.len();
    }
    out
}

/// Serializes the model in LP-format text with deterministic ordering.
pub fn export_lp(model: &MilpModel) -> String {
    let mut out = String::new();
    out.push_str(&format!("\\ model {}\n", model.name));
    out.push_str("Maximize\n obj: ");
    if model.objective.is_empty() {
        out.push('0');
    } else {
        out.push_str(&wrap_expr(&fmt_terms(&model.objective, &model.vars), 6));
    }
    out.push_str("\nSubject To\n");
    for c in &model.constraints {
        let op = match c.sense {
            CmpSense::Le => "<=",
            CmpSense::Eq => "=",
            CmpSense::Ge => ">=",
        };
        let body = format!(
            "{} {} {}",
            fmt_terms(&c.terms, &model.vars),
            op,
            fmt_num(c.rhs)
        );
        out.push_str(&format!(
            " {}: {}\n",
            c.name,
            wrap_expr(&body, c.name.len() + 3)
        ));
    }
    out.push_str("Bounds\n");
    for v in &model.vars {
        if v.kind == VarKind::Binary {
            continue; // implied 0..1
        }
        match (v.lower.is_finite(), v.upper.is_finite()) {
            (true, true) => out.push_str(&format!(
                " {} <= {} <= {}\n",
                fmt_num(v.lower),
                v.name,
                fmt_num(v.upper)
            )),
            (true, false) => out.push_str(&format!(" {} >= {}\n", v.name, fmt_num(v.lower))),
            (false, true) => out.push_str(&format!(" {} <= {}\n", v.name, fmt_num(v.upper))),
            (false, false) => out.push_str(&format!(" {} free\n", v.name)),
        }
    }
    let generals: Vec<&str> = model
        .vars
        .iter()
        .filter(|v| v.kind == VarKind::Integer)
        .map(|v| v.name.as_str())
        .collect();
    if !generals.is_empty() {
        out.push_str("Generals\n");
        for name in generals {
            out.push_str(&format!(" {name}\n"));
        }
    }
    let binaries: Vec<&str> = model
        .vars
        .iter()
        .filter(|v| v.kind == VarKind::Binary)
        .map(|v| v.name.as_str())
        .collect();
    if !binaries.is_empty() {
        out.push_str("Binaries\n");
        for name in binaries {
            out.push_str(&format!(" {name}\n"));
        }
    }
    out.push_str("End\n");
    out
}

/// Reads a model back from LP text. Accepts the subset of the format that
/// [`export_lp`] emits.
pub fn parse_lp(text: &str) -> Result<MilpModel> {
    #[derive(PartialEq)]
    enum Section {
        Start,
        Objective,
        Constraints,
        Bounds,
        Generals,
        Binaries,
        End,
    }

    struct Interner {
        vars: Vec<Variable>,
        index: HashMap<String, usize>,
    }
    impl Interner {
        fn get(&mut self, name: &str) -> usize {
            if let Some(&i) = self.index.get(name) {
                return i;
            }
            self.vars.push(Variable {
                name: name.to_string(),
                lower: 0.0,
                upper: f64::INFINITY,
                kind: VarKind::Continuous,
            });
            let i = self.vars.len() - 1;
            self.index.insert(name.to_string(), i);
            i
        }
    }

    fn parse_terms(
        expr: &str,
        line_no: usize,
        interner: &mut Interner,
    ) -> Result<Vec<(usize, f64)>> {
        let mut terms = Vec::new();
        let mut sign = 1.0;
        let mut coeff: Option<f64> = None;
        for token in expr.split_whitespace() {
            match token {
                "+" => sign = 1.0,
                "-" => sign = -1.0,
                _ => {
                    if let Ok(num) = token.parse::<f64>() {
                        coeff = Some(num);
                    } else {
                        let idx = interner.get(token);
                        terms.push((idx, sign * coeff.take().unwrap_or(1.0)));
                        sign = 1.0;
                    }
                }
            }
        }
        match coeff {
            // A bare constant is legal only as the empty expression `0`.
            Some(c) if c == 0.0 && terms.is_empty() => {}
            Some(_) => return Err(Error::LpParse(line_no, "dangling coefficient".into())),
            None => {}
        }
        Ok(terms)
    }

    let mut model = MilpModel::new("parsed");
    let mut interner = Interner { vars: Vec::new(), index: HashMap::new() };

    // Join wrapped continuation lines: inside the objective and constraint
    // sections, a non-keyword line without a row-name colon continues the
    // previous logical line.
    let keywords = [
        "maximize", "max", "subject to", "st", "s.t.", "bounds", "generals", "general",
        "binaries", "binary", "end",
    ];
    let mut logical: Vec<(usize, String)> = Vec::new();
    let mut in_expr_section = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('\\') {
            continue;
        }
        let lowered = line.to_ascii_lowercase();
        if keywords.contains(&lowered.as_str()) {
            in_expr_section = matches!(lowered.as_str(), "maximize" | "max" | "subject to" | "st" | "s.t.");
            logical.push((i + 1, line.to_string()));
            continue;
        }
        if in_expr_section && !line.contains(':') {
            if let Some((_, prev)) = logical.last_mut() {
                prev.push(' ');
                prev.push_str(line);
                continue;
            }
        }
        logical.push((i + 1, line.to_string()));
    }

    let mut section = Section::Start;
    for (line_no, line) in logical {
        let line = line.as_str();
        let lowered = line.to_ascii_lowercase();
        match lowered.as_str() {
            "maximize" | "max" => {
                section = Section::Objective;
                continue;
            }
            "subject to" | "st" | "s.t." => {
                section = Section::Constraints;
                continue;
            }
            "bounds" => {
                section = Section::Bounds;
                continue;
            }
            "generals" | "general" => {
                section = Section::Generals;
                continue;
            }
            "binaries" | "binary" => {
                section = Section::Binaries;
                continue;
            }
            "end" => {
                section = Section::End;
                continue;
            }
            _ => {}
        }
        match section {
            Section::Start => {
                return Err(Error::LpParse(line_no, "expected Maximize".into()));
            }
            Section::Objective => {
                let expr = line.split_once(':').map(|(_, e)| e).unwrap_or(line);
                model.objective = parse_terms(expr, line_no, &mut interner)?;
            }
            Section::Constraints => {
                let (name, rest) = line
                    .split_once(':')
                    .ok_or_else(|| Error::LpParse(line_no, "missing row name".into()))?;
                let (sense, op) = if rest.contains("<=") {
                    (CmpSense::Le, "<=")
                } else if rest.contains(">=") {
                    (CmpSense::Ge, ">=")
                } else if rest.contains('=') {
                    (CmpSense::Eq, "=")
                } else {
                    return Err(Error::LpParse(line_no, "missing comparison".into()));
                };
                let (lhs, rhs) = rest.split_once(op).unwrap();
                let rhs: f64 = rhs
                    .trim()
                    .parse()
                    .map_err(|_| Error::LpParse(line_no, "bad rhs".into()))?;
                let terms = parse_terms(lhs, line_no, &mut interner)?;
                model.constraints.push(LinConstraint {
                    name: name.trim().to_string(),
                    terms,
                    sense,
                    rhs,
                });
            }
            Section::Bounds => {
                let tokens: Vec<&str> = line.split_whitespace().collect();
                let bad = || Error::LpParse(line_no, "bad bounds line".into());
                match tokens.as_slice() {
                    [lo, "<=", name, "<=", hi] => {
                        let idx = interner.get(name);
                        interner.vars[idx].lower = lo.parse().map_err(|_| bad())?;
                        interner.vars[idx].upper = hi.parse().map_err(|_| bad())?;
                    }
                    [name, ">=", lo] => {
                        let idx = interner.get(name);
                        interner.vars[idx].lower = lo.parse().map_err(|_| bad())?;
                        interner.vars[idx].upper = f64::INFINITY;
                    }
                    [name, "<=", hi] => {
                        let idx = interner.get(name);
                        interner.vars[idx].upper = hi.parse().map_err(|_| bad())?;
                    }
                    [name, "free"] => {
                        let idx = interner.get(name);
                        interner.vars[idx].lower = f64::NEG_INFINITY;
                        interner.vars[idx].upper = f64::INFINITY;
                    }
                    _ => return Err(bad()),
                }
            }
            Section::Generals => {
                let idx = interner.get(line);
                interner.vars[idx].kind = VarKind::Integer;
            }
            Section::Binaries => {
                let idx = interner.get(line);
                interner.vars[idx].kind = VarKind::Binary;
                interner.vars[idx].lower = 0.0;
                interner.vars[idx].upper = 1.0;
            }
            Section::End => {}
        }
    }
    model.vars = interner.vars;
    model.rebuild_index();
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instgen::seven_vehicle_tree;
    use crate::model::build_route_graph;
    use crate::timewin::{adaptive_discretize, compute_rtws, pseudo_platoon_graph};

    fn worked_example() -> (Instance, BucketSet, PseudoPlatoonGraph) {
        let inst = seven_vehicle_tree();
        let graph = build_route_graph(&inst).unwrap();
        let rtws = compute_rtws(&inst, &graph).unwrap();
        let buckets = adaptive_discretize(&rtws).unwrap();
        let pseudo = pseudo_platoon_graph(&rtws);
        (inst, buckets, pseudo)
    }

    #[test]
    fn va_model_counts_match_closed_form() {
        let (inst, buckets, _) = worked_example();
        let m = build_va(&inst, &buckets).unwrap();
        let x_count: usize = inst
            .vehicles
            .iter()
            .map(|v| buckets.feasible_for(v.id).len())
            .sum();
        let group_count = bucket_edge_groups(&inst, &buckets).len();
        let stats = m.stats();
        assert_eq!(stats.binary, x_count + 2 * group_count);
        assert_eq!(stats.integer, 3 * group_count);
        assert_eq!(stats.constraints, inst.vehicles.len() + 8 * group_count);
    }

    #[test]
    fn empty_group_generates_no_block() {
        let (inst, buckets, _) = worked_example();
        let m = build_va(&inst, &buckets).unwrap();
        // Edge 0 (A -> B) is used only by vehicle 0; its blocks exist only
        // for vehicle 0's feasible buckets.
        for t in 0..buckets.len() {
            let present = m.var_index(&format!("z[0][{t}]")).is_some();
            let expected = buckets.feasible_for(0).contains(&t);
            assert_eq!(present, expected, "bucket {t}");
        }
    }

    #[test]
    fn twof_constraint_count_matches_closed_form() {
        let (inst, _, pseudo) = worked_example();
        let m = build_twof(&inst, &pseudo).unwrap();
        let edge_vehicles = inst.edge_vehicles();
        let mut expect_triples = 0usize;
        let ids: Vec<VehicleId> = inst.vehicles.iter().map(|v| v.id).collect();
        for &u in &ids {
            for &v in &ids {
                for &w in &ids {
                    if u >= v || w == u || w == v {
                        continue;
                    }
                    for m1 in edge_vehicles.values() {
                        if !(m1.contains(&u) && m1.contains(&w)) {
                            continue;
                        }
                        for m2 in edge_vehicles.values() {
                            if m2.contains(&v) && m2.contains(&w) {
                                expect_triples += 1;
                            }
                        }
                    }
                }
            }
        }
        let triples = m
            .constraints
            .iter()
            .filter(|c| c.name.starts_with("triple["))
            .count();
        assert_eq!(triples, expect_triples);
        assert!(triples > 0);
    }

    #[test]
    fn twof_gate_forces_zero_without_overlap() {
        let (inst, _, pseudo) = worked_example();
        let m = build_twof(&inst, &pseudo).unwrap();
        // Vehicles 3 and 4 share edges but have disjoint windows: the gate
        // row pins f[4][3][e] to zero.
        let gate = m
            .constraints
            .iter()
            .find(|c| c.name.starts_with("gate[4][3]"))
            .unwrap();
        assert_eq!(gate.rhs, 0.0);
        assert_eq!(gate.sense, CmpSense::Le);
    }

    #[test]
    fn ct_bounds_come_from_node_windows() {
        let inst = seven_vehicle_tree();
        let m = build_ct(&inst).unwrap();
        // Vehicle 0 at its origin A: window [4, 8].
        let idx = m.var_index("t[0][0]").unwrap();
        assert_eq!((m.vars[idx].lower, m.vars[idx].upper), (4.0, 8.0));
        // The pair coefficient at the head of the trunk edge equals the
        // worst window gap there.
        let w0 = node_time_window(&inst, 0, 2).unwrap();
        let w6 = node_time_window(&inst, 6, 2).unwrap();
        let expect = (w0.upper - w6.lower).max(w6.upper - w0.lower);
        let row = m
            .constraints
            .iter()
            .find(|c| c.name.starts_with("sync_hi[6][0][2]"))
            .unwrap();
        let f_coeff = row
            .terms
            .iter()
            .find(|&&(i, _)| m.vars[i].name.starts_with("f["))
            .unwrap()
            .1;
        assert!((f_coeff - expect).abs() < 1e-9);
        assert!((row.rhs - expect).abs() < 1e-9);
    }

    #[test]
    fn lp_relax_requires_unbounded_capacity() {
        let (mut inst, buckets, _) = worked_example();
        inst.lambda = Some(4);
        assert!(matches!(
            build_lp_relax(&inst, &buckets),
            Err(Error::CapacityNotSupported)
        ));
    }

    #[test]
    fn export_empty_model() {
        let m = MilpModel::new("empty");
        let text = export_lp(&m);
        assert!(text.starts_with("\\ model empty\nMaximize\n obj: 0\nSubject To\nBounds\n"));
        assert!(text.ends_with("End\n"));
    }

    #[test]
    fn export_two_var_toy_golden() {
        let mut m = MilpModel::new("toy");
        let x = m.add_var("x".into(), 0.0, 2.5, VarKind::Continuous);
        let y = m.add_binary("y".into());
        m.objective = vec![(x, 1.0), (y, 3.0)];
        m.add_constraint("c1".into(), vec![(x, 1.0), (y, -2.0)], CmpSense::Le, 1.5);
        let text = export_lp(&m);
        let expect = "\\ model toy\n\
                      Maximize\n obj: x + 3 y\n\
                      Subject To\n c1: x - 2 y <= 1.5\n\
                      Bounds\n 0 <= x <= 2.5\n\
                      Binaries\n y\n\
                      End\n";
        assert_eq!(text, expect);
    }

    #[test]
    fn parse_round_trips_structurally() {
        let (inst, buckets, pseudo) = worked_example();
        for model in [
            build_va(&inst, &buckets).unwrap(),
            build_twof(&inst, &pseudo).unwrap(),
            build_ct(&inst).unwrap(),
            build_lp_relax(&inst, &buckets).unwrap(),
        ] {
            let text = export_lp(&model);
            let back = parse_lp(&text).unwrap();
            // Variable order follows first appearance in the text, so the
            // comparison is by name.
            assert_eq!(back.vars.len(), model.vars.len());
            assert_eq!(back.constraints.len(), model.constraints.len());
            for a in &model.vars {
                let b = &back.vars[back.var_index(&a.name).expect("variable survives")];
                assert_eq!(a.kind, b.kind, "{}", a.name);
                assert!((a.lower - b.lower).abs() < 1e-9);
                assert!(
                    a.upper.is_infinite() && b.upper.is_infinite()
                        || (a.upper - b.upper).abs() < 1e-9
                );
            }
            for (a, b) in model.constraints.iter().zip(&back.constraints) {
                assert_eq!(a.name, b.name);
                assert_eq!(a.sense, b.sense);
                assert!((a.rhs - b.rhs).abs() < 1e-9);
                assert_eq!(a.terms.len(), b.terms.len());
            }
            // Same objective and row values on a probe point assigning each
            // variable a value derived from its name.
            let score = |name: &str| (name.len() % 5) as f64 + 1.0;
            let probe_a: Vec<f64> = model.vars.iter().map(|v| score(&v.name)).collect();
            let probe_b: Vec<f64> = back.vars.iter().map(|v| score(&v.name)).collect();
            assert!(
                (model.objective_value(&probe_a) - back.objective_value(&probe_b)).abs() < 1e-9
            );
            for (a, b) in model.constraints.iter().zip(&back.constraints) {
                let lhs_a: f64 = a.terms.iter().map(|&(i, c)| c * probe_a[i]).sum();
                let lhs_b: f64 = b.terms.iter().map(|&(i, c)| c * probe_b[i]).sum();
                assert!((lhs_a - lhs_b).abs() < 1e-9, "{}", a.name);
            }
        }
    }
}
