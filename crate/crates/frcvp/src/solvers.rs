//! Embedded solving: a dense-tableau two-phase primal simplex, exhaustive
//! assignment enumeration with an admissible pruning bound, and LP-bounded
//! best-first branch and bound over the built models.

use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use crate::milp::{CmpSense, MilpModel, VarKind};
use crate::model::Instance;
use crate::objective::{pack_platoons, Assignment};
use crate::timewin::BucketSet;
use crate::{Error, Result};

const PIVOT_EPS: f64 = 1e-9;
const FEAS_EPS: f64 = 1e-7;
const INT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Objective of the original (maximization) model; meaningful only when
    /// the status is optimal.
    pub objective: f64,
    /// Values per model variable, in declaration order.
    pub values: Vec<f64>,
}

/// How an original variable maps onto the nonnegative standard-form columns.
enum Substitution {
    /// x = lower + column.
    Shift { col: usize, lower: f64 },
    /// x = upper - column.
    Mirror { col: usize, upper: f64 },
    /// x = plus - minus.
    Split { plus: usize, minus: usize },
}

/// Solves the continuous relaxation of `model` (integrality is ignored) with
/// optional per-variable bound overrides, via primal simplex with Bland's
/// anti-cycling rule. Deterministic for a fixed model.
pub fn simplex_solve(model: &MilpModel) -> Result<LpSolution> {
    simplex_solve_with_bounds(model, &[])
}

pub fn simplex_solve_with_bounds(
    model: &MilpModel,
    overrides: &[(usize, f64, f64)],
) -> Result<LpSolution> {
    let mut lower: Vec<f64> = model.vars.iter().map(|v| v.lower).collect();
    let mut upper: Vec<f64> = model.vars.iter().map(|v| v.upper).collect();
    for &(i, lo, hi) in overrides {
        lower[i] = lower[i].max(lo);
        upper[i] = upper[i].min(hi);
    }
    let infeasible = || LpSolution {
        status: LpStatus::Infeasible,
        objective: f64::NEG_INFINITY,
        values: vec![0.0; model.vars.len()],
    };
    for i in 0..lower.len() {
        if lower[i] > upper[i] + FEAS_EPS {
            return Ok(infeasible());
        }
    }

    // Substitute every variable by columns with bounds [0, u].
    let mut subs: Vec<Substitution> = Vec::with_capacity(model.vars.len());
    let mut col_upper: Vec<f64> = Vec::new();
    for i in 0..model.vars.len() {
        let (lo, hi) = (lower[i], upper[i]);
        if lo.is_finite() {
            subs.push(Substitution::Shift { col: col_upper.len(), lower: lo });
            col_upper.push(if hi.is_finite() { hi - lo } else { f64::INFINITY });
        } else if hi.is_finite() {
            subs.push(Substitution::Mirror { col: col_upper.len(), upper: hi });
            col_upper.push(f64::INFINITY);
        } else {
            subs.push(Substitution::Split {
                plus: col_upper.len(),
                minus: col_upper.len() + 1,
            });
            col_upper.push(f64::INFINITY);
            col_upper.push(f64::INFINITY);
        }
    }
    let n_struct = col_upper.len();

    let substitute = |terms: &[(usize, f64)]| -> (Vec<(usize, f64)>, f64) {
        let mut cols: Vec<(usize, f64)> = Vec::with_capacity(terms.len() + 1);
        let mut constant = 0.0;
        for &(i, c) in terms {
            match subs[i] {
                Substitution::Shift { col, lower } => {
                    cols.push((col, c));
                    constant += c * lower;
                }
                Substitution::Mirror { col, upper } => {
                    cols.push((col, -c));
                    constant += c * upper;
                }
                Substitution::Split { plus, minus } => {
                    cols.push((plus, c));
                    cols.push((minus, -c));
                }
            }
        }
        (cols, constant)
    };

    // Equality rows with slack/surplus columns, right-hand sides normalized
    // to be nonnegative; rows without a usable slack get an artificial.
    let m = model.constraints.len();
    let mut slack_of_row: Vec<Option<usize>> = vec![None; m];
    let mut total = n_struct;
    for (r, c) in model.constraints.iter().enumerate() {
        if c.sense != CmpSense::Eq {
            slack_of_row[r] = Some(total);
            total += 1;
        }
    }
    let art_start = total;
    let mut dense: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut rhs_all: Vec<f64> = Vec::with_capacity(m);
    let mut basis: Vec<usize> = Vec::with_capacity(m);
    let mut n_art = 0usize;
    for (r, c) in model.constraints.iter().enumerate() {
        let (cols, constant) = substitute(&c.terms);
        let mut row = vec![0.0f64; art_start];
        for (j, v) in cols {
            row[j] += v;
        }
        if let Some(s) = slack_of_row[r] {
            row[s] = if c.sense == CmpSense::Le { 1.0 } else { -1.0 };
        }
        let mut rhs = c.rhs - constant;
        if rhs < 0.0 {
            for x in row.iter_mut() {
                *x = -*x;
            }
            rhs = -rhs;
        }
        let basic = match slack_of_row[r] {
            Some(s) if row[s] > 0.5 => s,
            _ => {
                n_art += 1;
                art_start + n_art - 1
            }
        };
        basis.push(basic);
        dense.push(row);
        rhs_all.push(rhs);
    }
    let width = art_start + n_art;
    let mut tableau: Vec<Vec<f64>> = dense;
    for (r, row) in tableau.iter_mut().enumerate() {
        row.resize(width, 0.0);
        if basis[r] >= art_start {
            row[basis[r]] = 1.0;
        }
    }
    // Slacks and artificials are unbounded above.
    col_upper.resize(width, f64::INFINITY);

    let mut state = Bounded {
        tableau,
        xb: rhs_all,
        basis,
        status: vec![ColStatus::AtLower; width],
        upper: col_upper,
        width,
    };
    for r in 0..m {
        state.status[state.basis[r]] = ColStatus::Basic;
    }
    let iter_limit = 2000 + 200 * (m + width);

    if n_art > 0 {
        let mut cost = vec![0.0f64; width];
        for j in art_start..width {
            cost[j] = 1.0;
        }
        match state.optimize(&cost, iter_limit)? {
            BoundedStatus::Optimal => {}
            BoundedStatus::Unbounded => {
                return Err(Error::InvalidParams("auxiliary objective unbounded".into()))
            }
        }
        if state.objective(&cost) > FEAS_EPS {
            return Ok(infeasible());
        }
        // Pivot leftover artificial basics out where a degenerate swap is
        // possible (an at-lower column keeps every value in place), drop
        // rows that became all-zero, and freeze the artificial columns at
        // zero so the remaining ones keep their rows enforced.
        let mut r = 0;
        while r < state.tableau.len() {
            if state.basis[r] >= art_start {
                let at_lower = (0..art_start).find(|&j| {
                    state.status[j] == ColStatus::AtLower && state.tableau[r][j].abs() > PIVOT_EPS
                });
                match at_lower {
                    Some(j) => state.pivot(r, j),
                    None => {
                        let redundant = (0..art_start)
                            .all(|j| state.tableau[r][j].abs() <= PIVOT_EPS)
                            && state.xb[r].abs() <= FEAS_EPS;
                        if redundant {
                            state.drop_row(r);
                            continue;
                        }
                    }
                }
            }
            r += 1;
        }
        for j in art_start..width {
            state.upper[j] = 0.0;
        }
    }

    let mut cost = vec![0.0f64; width];
    for &(j, c) in &substitute(&model.objective).0 {
        cost[j] -= c; // minimize the negated objective
    }
    match state.optimize(&cost, iter_limit)? {
        BoundedStatus::Unbounded => {
            return Ok(LpSolution {
                status: LpStatus::Unbounded,
                objective: f64::INFINITY,
                values: vec![0.0; model.vars.len()],
            });
        }
        BoundedStatus::Optimal => {}
    }

    let mut col_values = vec![0.0f64; width];
    for j in 0..width {
        if state.status[j] == ColStatus::AtUpper {
            col_values[j] = state.upper[j];
        }
    }
    for (r, &b) in state.basis.iter().enumerate() {
        col_values[b] = state.xb[r];
    }
    let mut values = vec![0.0f64; model.vars.len()];
    for (i, sub) in subs.iter().enumerate() {
        values[i] = match *sub {
            Substitution::Shift { col, lower } => lower + col_values[col],
            Substitution::Mirror { col, upper } => upper - col_values[col],
            Substitution::Split { plus, minus } => col_values[plus] - col_values[minus],
        };
    }
    let objective = model.objective_value(&values);
    Ok(LpSolution { status: LpStatus::Optimal, objective, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ColStatus {
    Basic,
    AtLower,
    AtUpper,
}

enum BoundedStatus {
    Optimal,
    Unbounded,
}

/// Dense tableau state for the bounded-variable primal simplex: nonbasic
/// columns rest at either bound, entering steps may terminate in a bound
/// flip, and Bland's smallest-index rule breaks every tie.
struct Bounded {
    tableau: Vec<Vec<f64>>,
    /// Current values of the basic variables, row-aligned.
    xb: Vec<f64>,
    basis: Vec<usize>,
    status: Vec<ColStatus>,
    upper: Vec<f64>,
    width: usize,
}

impl Bounded {
    fn objective(&self, cost: &[f64]) -> f64 {
        let mut total = 0.0;
        for (r, &b) in self.basis.iter().enumerate() {
            total += cost[b] * self.xb[r];
        }
        for j in 0..self.width {
            if self.status[j] == ColStatus::AtUpper {
                total += cost[j] * self.upper[j];
            }
        }
        total
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.tableau[row][col];
        for x in self.tableau[row].iter_mut() {
            *x /= p;
        }
        let pivot_row = self.tableau[row].clone();
        for (r, target) in self.tableau.iter_mut().enumerate() {
            if r != row {
                let f = target[col];
                if f != 0.0 {
                    for (t, &p) in target.iter_mut().zip(&pivot_row) {
                        *t -= f * p;
                    }
                }
            }
        }
        self.status[self.basis[row]] = ColStatus::AtLower;
        self.basis[row] = col;
        self.status[col] = ColStatus::Basic;
    }

    fn drop_row(&mut self, row: usize) {
        self.status[self.basis[row]] = ColStatus::AtLower;
        self.tableau.remove(row);
        self.xb.remove(row);
        self.basis.remove(row);
    }

    /// Minimizes `cost`; afterwards the state sits at an optimal basis.
    fn optimize(&mut self, cost: &[f64], iter_limit: usize) -> Result<BoundedStatus> {
        let m = self.tableau.len();
        let mut zrow = cost[..self.width].to_vec();
        for r in 0..m {
            let cb = cost[self.basis[r]];
            if cb != 0.0 {
                for (z, &t) in zrow.iter_mut().zip(&self.tableau[r]) {
                    *z -= cb * t;
                }
            }
        }
        for _ in 0..iter_limit {
            // Bland: smallest eligible column.
            let mut enter = None;
            for j in 0..self.width {
                match self.status[j] {
                    ColStatus::AtLower if zrow[j] < -PIVOT_EPS && self.upper[j] > 0.0 => {
                        enter = Some((j, 1.0));
                        break;
                    }
                    ColStatus::AtUpper if zrow[j] > PIVOT_EPS => {
                        enter = Some((j, -1.0));
                        break;
                    }
                    _ => {}
                }
            }
            let Some((enter, dir)) = enter else {
                return Ok(BoundedStatus::Optimal);
            };

            // Ratio test: basic vars hitting either bound, or the entering
            // variable flipping to its other bound.
            let mut theta = self.upper[enter];
            let mut leave: Option<(usize, bool)> = None; // (row, exits at upper)
            for r in 0..m {
                let d = dir * self.tableau[r][enter];
                if d > PIVOT_EPS {
                    let t = self.xb[r] / d;
                    if t < theta - PIVOT_EPS
                        || (t < theta + PIVOT_EPS
                            && leave.map_or(false, |(lr, _)| self.basis[r] < self.basis[lr]))
                    {
                        theta = t.max(0.0);
                        leave = Some((r, false));
                    }
                } else if d < -PIVOT_EPS && self.upper[self.basis[r]].is_finite() {
                    let t = (self.upper[self.basis[r]] - self.xb[r]) / (-d);
                    if t < theta - PIVOT_EPS
                        || (t < theta + PIVOT_EPS
                            && leave.map_or(false, |(lr, _)| self.basis[r] < self.basis[lr]))
                    {
                        theta = t.max(0.0);
                        leave = Some((r, true));
                    }
                }
            }
            if theta.is_infinite() {
                return Ok(BoundedStatus::Unbounded);
            }

            match leave {
                None => {
                    // Bound flip of the entering column.
                    for r in 0..m {
                        self.xb[r] -= dir * theta * self.tableau[r][enter];
                    }
                    self.status[enter] = if dir > 0.0 {
                        ColStatus::AtUpper
                    } else {
                        ColStatus::AtLower
                    };
                }
                Some((row, exits_upper)) => {
                    for r in 0..m {
                        if r != row {
                            self.xb[r] -= dir * theta * self.tableau[r][enter];
                        }
                    }
                    let entering_value =
                        if dir > 0.0 { theta } else { self.upper[enter] - theta };
                    let leaving = self.basis[row];
                    self.pivot(row, enter);
                    self.status[leaving] = if exits_upper {
                        ColStatus::AtUpper
                    } else {
                        ColStatus::AtLower
                    };
                    self.xb[row] = entering_value;
                    // Update reduced costs through the pivot row.
                    let f = zrow[enter];
                    if f != 0.0 {
                        for (z, &t) in zrow.iter_mut().zip(&self.tableau[row]) {
                            *z -= f * t;
                        }
                    }
                }
            }
        }
        Err(Error::IterationLimit)
    }
}


/// Convenience wrapper: optimal objective or an error for non-optimal
/// statuses.
pub fn lp_optimum(model: &MilpModel) -> Result<f64> {
    let sol = simplex_solve(model)?;
    match sol.status {
        LpStatus::Optimal => Ok(sol.objective),
        LpStatus::Infeasible => Err(Error::InfeasibleAssignment("LP infeasible".into())),
        LpStatus::Unbounded => Err(Error::InvalidParams("LP unbounded".into())),
    }
}

const DEFAULT_ENUM_LIMIT: u128 = 10_000_000;

/// Exhaustive search over per-vehicle feasible buckets with an incremental
/// objective and an admissible remaining-contribution bound. Returns a
/// global optimum.
pub fn exact_enumerate(
    instance: &Instance,
    buckets: &BucketSet,
    limit: Option<u128>,
) -> Result<(f64, Assignment)> {
    let limit = limit.unwrap_or(DEFAULT_ENUM_LIMIT);
    let mut space: u128 = 1;
    for v in &instance.vehicles {
        let k = buckets.feasible_for(v.id).len();
        if k == 0 {
            return Err(Error::InfeasibleAssignment(format!(
                "vehicle {} has no feasible bucket",
                v.id
            )));
        }
        space = space.saturating_mul(k as u128);
        if space > limit {
            return Err(Error::SearchSpaceTooLarge(space, limit));
        }
    }

    // Order by fewest choices first; ties by id for determinism.
    let mut order: Vec<usize> = (0..instance.vehicles.len()).collect();
    order.sort_by_key(|&i| {
        (
            buckets.feasible_for(instance.vehicles[i].id).len(),
            instance.vehicles[i].id,
        )
    });

    // Admissible bound: a vehicle can add at most (lead+trail) rate on each
    // of its edges.
    let marginal_cap = instance.sigma_l + instance.sigma_f;
    let vehicle_bound: Vec<f64> = order
        .iter()
        .map(|&i| {
            instance.vehicles[i]
                .route
                .iter()
                .map(|&e| instance.network.edge(e).cost * marginal_cap)
                .sum()
        })
        .collect();
    let mut remaining_bound: Vec<f64> = vec![0.0; order.len() + 1];
    for i in (0..order.len()).rev() {
        remaining_bound[i] = remaining_bound[i + 1] + vehicle_bound[i];
    }

    struct Dfs<'a> {
        instance: &'a Instance,
        buckets: &'a BucketSet,
        order: &'a [usize],
        remaining_bound: &'a [f64],
        counts: std::collections::HashMap<(usize, usize), u32>,
        choice: Vec<usize>,
        best_value: f64,
        best_choice: Vec<usize>,
    }

    impl Dfs<'_> {
        fn place(&mut self, vi: usize, t: usize, sign: i32) -> f64 {
            let v = &self.instance.vehicles[self.order[vi]];
            let mut delta = 0.0;
            for &e in &v.route {
                let cost = self.instance.network.edge(e).cost;
                let n = self.counts.entry((e, t)).or_insert(0);
                let before =
                    pack_platoons(*n, self.instance.lambda).saving(cost, self.instance.sigma_l, self.instance.sigma_f);
                if sign > 0 {
                    *n += 1;
                } else {
                    *n -= 1;
                }
                let after =
                    pack_platoons(*n, self.instance.lambda).saving(cost, self.instance.sigma_l, self.instance.sigma_f);
                delta += after - before;
            }
            delta
        }

        fn run(&mut self, vi: usize, value: f64) {
            if vi == self.order.len() {
                if value > self.best_value {
                    self.best_value = value;
                    self.best_choice = self.choice.clone();
                }
                return;
            }
            if value + self.remaining_bound[vi] <= self.best_value + 1e-12 {
                return;
            }
            let id = self.instance.vehicles[self.order[vi]].id;
            let feas: Vec<usize> = self.buckets.feasible_for(id).to_vec();
            for t in feas {
                let delta = self.place(vi, t, 1);
                self.choice.push(t);
                self.run(vi + 1, value + delta);
                self.choice.pop();
                self.place(vi, t, -1);
            }
        }
    }

    let mut dfs = Dfs {
        instance,
        buckets,
        order: &order,
        remaining_bound: &remaining_bound,
        counts: std::collections::HashMap::new(),
        choice: Vec::new(),
        best_value: f64::NEG_INFINITY,
        best_choice: Vec::new(),
    };
    dfs.run(0, 0.0);

    let bucket_of = order
        .iter()
        .zip(&dfs.best_choice)
        .map(|(&i, &t)| (instance.vehicles[i].id, t))
        .collect();
    Ok((dfs.best_value.max(0.0), Assignment { bucket_of }))
}

/// Search statistics of a branch-and-bound run.
#[derive(Debug, Clone)]
pub struct SearchStats {
    pub nodes: u64,
    pub incumbents: u32,
    /// Global best bound after each improvement.
    pub bound_history: Vec<f64>,
    pub wall: Duration,
}

#[derive(Debug, Clone)]
pub struct BnbOutcome {
    /// Best integer point found, as raw variable values.
    pub values: Option<Vec<f64>>,
    /// Objective of the incumbent.
    pub objective: Option<f64>,
    /// Valid upper bound on the optimum.
    pub best_bound: f64,
    pub stats: SearchStats,
    pub budget_exhausted: bool,
}

impl BnbOutcome {
    /// Remaining optimality gap; zero means solved.
    pub fn gap(&self) -> f64 {
        match self.objective {
            Some(obj) => (self.best_bound - obj).max(0.0),
            None => f64::INFINITY,
        }
    }

    /// Bucket choice of the incumbent, for assignment-style models.
    pub fn assignment(&self, model: &MilpModel) -> Option<Assignment> {
        self.values
            .as_ref()
            .map(|v| model.assignment_from_values(v))
    }
}

struct Node {
    bound: f64,
    depth: u32,
    overrides: Vec<(usize, f64, f64)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.depth == other.depth
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Best bound first; deeper nodes break ties.
        self.bound
            .partial_cmp(&other.bound)
            .unwrap()
            .then(self.depth.cmp(&other.depth))
    }
}

/// Best-bound branch and bound with simplex node relaxations. Branches on
/// the most fractional assignment variable, falling back to any fractional
/// integer variable.
pub fn branch_and_bound(model: &MilpModel, budget: Duration) -> Result<BnbOutcome> {
    let start = Instant::now();
    let relaxed = model.relax();
    let int_vars: Vec<usize> = model
        .vars
        .iter()
        .enumerate()
        .filter(|(_, v)| v.kind != VarKind::Continuous)
        .map(|(i, _)| i)
        .collect();

    // Set-partitioning rows (all-binary, unit coefficients, equal one) are
    // branched one member per child.
    let mut choice_rows: std::collections::HashMap<usize, Vec<usize>> =
        std::collections::HashMap::new();
    for c in &model.constraints {
        let is_choice = c.sense == CmpSense::Eq
            && (c.rhs - 1.0).abs() < 1e-12
            && c.terms.len() >= 2
            && c.terms.iter().all(|&(i, k)| {
                (k - 1.0).abs() < 1e-12 && model.vars[i].kind == VarKind::Binary
            });
        if is_choice {
            let members: Vec<usize> = c.terms.iter().map(|&(i, _)| i).collect();
            for &i in &members {
                choice_rows.entry(i).or_insert_with(|| members.clone());
            }
        }
    }

    let mut stats = SearchStats {
        nodes: 0,
        incumbents: 0,
        bound_history: Vec::new(),
        wall: Duration::ZERO,
    };
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut heap: BinaryHeap<Node> = BinaryHeap::new();
    heap.push(Node { bound: f64::INFINITY, depth: 0, overrides: Vec::new() });
    let mut budget_exhausted = false;
    let mut global_bound = f64::INFINITY;

    // Dive for a first incumbent: repeatedly fix the relaxation's preferred
    // choice and re-solve. The best-bound phase then prunes against it.
    let mut root_bound = f64::INFINITY;
    {
        let mut overrides: Vec<(usize, f64, f64)> = Vec::new();
        loop {
            let sol = simplex_solve_with_bounds(&relaxed, &overrides)?;
            if sol.status != LpStatus::Optimal {
                break;
            }
            stats.nodes += 1;
            if overrides.is_empty() {
                root_bound = sol.objective;
            }
            let fractional = int_vars
                .iter()
                .copied()
                .filter(|&i| {
                    let x = sol.values[i];
                    (x - x.round()).abs() > INT_EPS
                })
                .max_by(|&a, &b| {
                    let fa = (sol.values[a] - sol.values[a].round()).abs();
                    let fb = (sol.values[b] - sol.values[b].round()).abs();
                    fa.partial_cmp(&fb).unwrap()
                });
            match fractional {
                None => {
                    let mut values = sol.values.clone();
                    for &i in &int_vars {
                        values[i] = values[i].round();
                    }
                    if model.feasibility_residual(&values) <= FEAS_EPS {
                        let obj = model.objective_value(&values);
                        incumbent = Some((obj, values));
                        stats.incumbents += 1;
                    }
                    break;
                }
                Some(i) => match choice_rows.get(&i) {
                    Some(row) => {
                        let &fix = row
                            .iter()
                            .max_by(|&&a, &&b| {
                                sol.values[a].partial_cmp(&sol.values[b]).unwrap()
                            })
                            .unwrap();
                        overrides.push((fix, 1.0, 1.0));
                    }
                    None => {
                        let r = sol.values[i].round();
                        overrides.push((i, r, r));
                    }
                },
            }
            if start.elapsed() >= budget && stats.nodes > 1 {
                break;
            }
        }
    }
    // The dive's root solve may already close the gap (integral root).
    if let Some((inc, values)) = &incumbent {
        if root_bound <= inc + 1e-9 {
            stats.wall = start.elapsed();
            stats.bound_history.push(*inc);
            return Ok(BnbOutcome {
                values: Some(values.clone()),
                objective: Some(*inc),
                best_bound: *inc,
                stats,
                budget_exhausted: false,
            });
        }
    }

    while let Some(node) = heap.pop() {
        let inc_value = incumbent.as_ref().map(|(v, _)| *v).unwrap_or(f64::NEG_INFINITY);
        if node.bound <= inc_value + 1e-9 {
            // Best-bound order: nothing left can improve the incumbent.
            global_bound = inc_value;
            break;
        }
        if stats.nodes > 0 && start.elapsed() >= budget {
            budget_exhausted = true;
            global_bound = global_bound.min(node.bound);
            break;
        }
        stats.nodes += 1;
        let sol = simplex_solve_with_bounds(&relaxed, &node.overrides)?;
        match sol.status {
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded => {
                return Err(Error::InvalidParams("relaxation unbounded".into()))
            }
            LpStatus::Optimal => {}
        }
        if sol.objective <= inc_value + 1e-9 {
            continue;
        }
        if stats.nodes == 1 {
            global_bound = sol.objective;
            stats.bound_history.push(global_bound);
        }

        // Most fractional integer variable, assignment variables first.
        let frac = |i: usize| {
            let x = sol.values[i];
            (x - x.round()).abs()
        };
        let pick = |candidates: &mut dyn Iterator<Item = usize>| -> Option<usize> {
            let mut best: Option<(usize, f64)> = None;
            for i in candidates {
                let f = frac(i);
                if f > INT_EPS {
                    let score = (f - 0.5).abs();
                    if best.map_or(true, |(_, s)| score < s - 1e-12) {
                        best = Some((i, score));
                    }
                }
            }
            best.map(|(i, _)| i)
        };
        let branch_var = pick(
            &mut int_vars
                .iter()
                .copied()
                .filter(|&i| model.vars[i].name.starts_with("x[")),
        )
        .or_else(|| pick(&mut int_vars.iter().copied()));

        match branch_var {
            None => {
                // Integral point: snap and accept.
                let mut values = sol.values.clone();
                for &i in &int_vars {
                    values[i] = values[i].round();
                }
                let obj = model.objective_value(&values);
                if obj > inc_value {
                    incumbent = Some((obj, values));
                    stats.incumbents += 1;
                    stats.bound_history.push(global_bound);
                }
            }
            Some(i) => {
                // A choice row (sum of binaries equal to one) holding the
                // fractional variable is branched as a unit, one child per
                // member; otherwise split the single variable.
                match choice_rows.get(&i) {
                    Some(row) => {
                        for &j in row {
                            if sol.values[j] > 1.0 - INT_EPS {
                                continue; // already forced by the overrides
                            }
                            let mut fixed = node.overrides.clone();
                            fixed.push((j, 1.0, 1.0));
                            heap.push(Node {
                                bound: sol.objective,
                                depth: node.depth + 1,
                                overrides: fixed,
                            });
                        }
                    }
                    None => {
                        let x = sol.values[i];
                        let (lo, hi) = (model.vars[i].lower, model.vars[i].upper);
                        let mut down = node.overrides.clone();
                        down.push((i, lo, x.floor()));
                        let mut up = node.overrides;
                        up.push((i, x.ceil(), hi));
                        heap.push(Node {
                            bound: sol.objective,
                            depth: node.depth + 1,
                            overrides: down,
                        });
                        heap.push(Node {
                            bound: sol.objective,
                            depth: node.depth + 1,
                            overrides: up,
                        });
                    }
                }
            }
        }
        // The heap top is a valid global bound alongside the incumbent.
        let top = heap
            .peek()
            .map(|n| n.bound)
            .unwrap_or(f64::NEG_INFINITY)
            .max(incumbent.as_ref().map(|(v, _)| *v).unwrap_or(f64::NEG_INFINITY));
        if top < global_bound {
            global_bound = top;
            stats.bound_history.push(global_bound);
        }
    }

    if heap.is_empty() && !budget_exhausted {
        if let Some((v, _)) = &incumbent {
            global_bound = *v;
        }
    }
    stats.wall = start.elapsed();
    let (objective, values) = match incumbent {
        Some((v, x)) => (Some(v), Some(x)),
        None => (None, None),
    };
    if budget_exhausted && objective.is_none() {
        return Err(Error::InvalidParams(
            "time budget exhausted before any incumbent".into(),
        ));
    }
    Ok(BnbOutcome {
        values,
        objective,
        best_bound: global_bound,
        stats,
        budget_exhausted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instgen::seven_vehicle_tree;
    use crate::milp::{build_va, MilpModel, VarKind};
    use crate::model::build_route_graph;
    use crate::objective::evaluate_assignment;
    use crate::timewin::{adaptive_discretize, compute_rtws};

    #[test]
    fn simplex_box_toy() {
        let mut m = MilpModel::new("box");
        let x1 = m.add_var("x1".into(), 0.0, f64::INFINITY, VarKind::Continuous);
        let x2 = m.add_var("x2".into(), 0.0, f64::INFINITY, VarKind::Continuous);
        m.objective = vec![(x1, 1.0), (x2, 1.0)];
        m.add_constraint("c1".into(), vec![(x1, 1.0)], CmpSense::Le, 1.0);
        m.add_constraint("c2".into(), vec![(x2, 1.0)], CmpSense::Le, 1.0);
        let sol = simplex_solve(&m).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - 2.0).abs() < 1e-9);
        assert!(m.feasibility_residual(&sol.values) <= FEAS_EPS);
    }

    #[test]
    fn simplex_detects_infeasible() {
        let mut m = MilpModel::new("bad");
        let x = m.add_var("x".into(), 0.0, f64::INFINITY, VarKind::Continuous);
        m.objective = vec![(x, 1.0)];
        m.add_constraint("c".into(), vec![(x, 1.0)], CmpSense::Le, -1.0);
        let sol = simplex_solve(&m).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
    }

    #[test]
    fn simplex_detects_unbounded() {
        let mut m = MilpModel::new("open");
        let x = m.add_var("x".into(), 0.0, f64::INFINITY, VarKind::Continuous);
        m.objective = vec![(x, 1.0)];
        m.add_constraint("c".into(), vec![(x, -1.0)], CmpSense::Le, 1.0);
        let sol = simplex_solve(&m).unwrap();
        assert_eq!(sol.status, LpStatus::Unbounded);
    }

    #[test]
    fn simplex_handles_equalities_and_free_vars() {
        // max x + y st x + y = 3, x - y >= -1, y free in [-10, 10].
        let mut m = MilpModel::new("mix");
        let x = m.add_var("x".into(), 0.0, f64::INFINITY, VarKind::Continuous);
        let y = m.add_var("y".into(), -10.0, 10.0, VarKind::Continuous);
        m.objective = vec![(x, 2.0), (y, 1.0)];
        m.add_constraint("sum".into(), vec![(x, 1.0), (y, 1.0)], CmpSense::Eq, 3.0);
        m.add_constraint("diff".into(), vec![(x, 1.0), (y, -1.0)], CmpSense::Ge, -1.0);
        let sol = simplex_solve(&m).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        // x as large as possible: y >= -10 gives x = 13, y = -10.
        assert!((sol.objective - (2.0 * 13.0 - 10.0)).abs() < 1e-7, "{}", sol.objective);
        assert!(m.feasibility_residual(&sol.values) <= FEAS_EPS);
    }

    #[test]
    fn weak_duality_spot_check() {
        // Any feasible point is below the reported optimum.
        let mut m = MilpModel::new("poly");
        let x = m.add_var("x".into(), 0.0, 4.0, VarKind::Continuous);
        let y = m.add_var("y".into(), 0.0, 4.0, VarKind::Continuous);
        m.objective = vec![(x, 3.0), (y, 5.0)];
        m.add_constraint("c1".into(), vec![(x, 1.0), (y, 2.0)], CmpSense::Le, 6.0);
        m.add_constraint("c2".into(), vec![(x, 3.0), (y, 1.0)], CmpSense::Le, 9.0);
        let sol = simplex_solve(&m).unwrap();
        for (px, py) in [(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (0.0, 3.0), (3.0, 0.0)] {
            let vals = vec![px, py];
            if m.feasibility_residual(&vals) <= 1e-9 {
                assert!(m.objective_value(&vals) <= sol.objective + 1e-9);
            }
        }
    }

    fn worked_example() -> (Instance, BucketSet) {
        let inst = seven_vehicle_tree();
        let graph = build_route_graph(&inst).unwrap();
        let rtws = compute_rtws(&inst, &graph).unwrap();
        let buckets = adaptive_discretize(&rtws).unwrap();
        (inst, buckets)
    }

    #[test]
    fn enumeration_single_vehicle_is_zero() {
        let (inst, buckets) = worked_example();
        let mut one = inst.clone();
        one.vehicles.truncate(1);
        let (value, assignment) = exact_enumerate(&one, &buckets, None).unwrap();
        assert_eq!(value, 0.0);
        assert!(buckets.feasible_for(0).contains(&assignment.bucket_of[&0]));
    }

    #[test]
    fn enumeration_matches_unpruned_brute_force() {
        let (inst, buckets) = worked_example();
        let (value, assignment) = exact_enumerate(&inst, &buckets, None).unwrap();
        let (check, _) = evaluate_assignment(&inst, &buckets, &assignment).unwrap();
        assert!((check - value).abs() < 1e-9);
        // Unpruned brute force over the full cross product.
        let ids: Vec<usize> = inst.vehicles.iter().map(|v| v.id).collect();
        let mut best = f64::NEG_INFINITY;
        let mut stack = vec![Vec::<usize>::new()];
        while let Some(prefix) = stack.pop() {
            if prefix.len() == ids.len() {
                let a = Assignment {
                    bucket_of: ids.iter().copied().zip(prefix.iter().copied()).collect(),
                };
                let (v, _) = evaluate_assignment(&inst, &buckets, &a).unwrap();
                best = best.max(v);
                continue;
            }
            let id = ids[prefix.len()];
            for &t in buckets.feasible_for(id) {
                let mut next = prefix.clone();
                next.push(t);
                stack.push(next);
            }
        }
        assert!((best - value).abs() < 1e-9, "{best} vs {value}");
    }

    #[test]
    fn enumeration_rejects_huge_spaces() {
        let (inst, buckets) = worked_example();
        assert!(matches!(
            exact_enumerate(&inst, &buckets, Some(8)),
            Err(Error::SearchSpaceTooLarge(_, 8))
        ));
    }

    #[test]
    fn branch_and_bound_matches_enumeration() {
        // Five of the seven vehicles keep the run fast on the plain model;
        // the acceptance suite covers the full sizes.
        let (mut inst, _) = worked_example();
        inst.vehicles.truncate(5);
        let graph = build_route_graph(&inst).unwrap();
        let rtws = compute_rtws(&inst, &graph).unwrap();
        let buckets = adaptive_discretize(&rtws).unwrap();
        let (opt, _) = exact_enumerate(&inst, &buckets, None).unwrap();
        let model = build_va(&inst, &buckets).unwrap();
        let out = branch_and_bound(&model, Duration::from_secs(60)).unwrap();
        assert!(!out.budget_exhausted);
        let obj = out.objective.unwrap();
        assert!((obj - opt).abs() < 1e-6, "{obj} vs {opt}");
        assert!(out.gap() < 1e-6);
        assert!(out.best_bound >= obj - 1e-9);
        // The incumbent decodes to a feasible assignment of equal value.
        let assignment = out.assignment(&model).unwrap();
        let (value, _) = evaluate_assignment(&inst, &buckets, &assignment).unwrap();
        assert!((value - opt).abs() < 1e-6);
    }

    #[test]
    fn branch_and_bound_integral_root() {
        // Uncoupled binaries: the root relaxation is already integral.
        let mut m = MilpModel::new("toy");
        let x = m.add_binary("x".into());
        let y = m.add_binary("y".into());
        m.objective = vec![(x, 3.0), (y, 2.0)];
        m.add_constraint("cx".into(), vec![(x, 1.0)], CmpSense::Le, 1.0);
        m.add_constraint("cy".into(), vec![(y, 1.0)], CmpSense::Le, 1.0);
        let out = branch_and_bound(&m, Duration::from_secs(10)).unwrap();
        assert_eq!(out.stats.nodes, 1);
        assert!(out.gap() < 1e-9);
        assert!((out.objective.unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn branch_and_bound_zero_budget_reports_bound() {
        let (inst, buckets) = worked_example();
        let model = build_va(&inst, &buckets).unwrap();
        let out = branch_and_bound(&model, Duration::ZERO);
        match out {
            Ok(out) => {
                assert!(out.budget_exhausted || out.gap() < 1e-9);
                assert!(out.best_bound.is_finite());
            }
            Err(Error::InvalidParams(_)) => {} // no incumbent at the root
            Err(e) => panic!("unexpected error {e:?}"),
        }
    }
}
