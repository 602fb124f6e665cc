//! Small dense linear programming: problem representation, a text dump for
//! diffing hand-built instances, and a bounded-variable primal simplex.
//!
//! Problems are `min c'x` subject to sparse rows `a'x <= b` or `a'x = b` and
//! per-variable bounds `l <= x <= u` (either side may be infinite).

use std::fmt::Write as _;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LpProblem {
    names: Vec<String>,
    cost: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    constraints: Vec<Constraint>,
}

impl LpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a variable with objective coefficient `cost` and bounds
    /// `[lower, upper]`; returns its index.
    pub fn add_var(&mut self, name: impl Into<String>, cost: f64, lower: f64, upper: f64) -> usize {
        self.names.push(name.into());
        self.cost.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.cost.len() - 1
    }

    pub fn add_constraint(&mut self, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> usize {
        self.constraints.push(Constraint { coeffs, sense, rhs });
        self.constraints.len() - 1
    }

    pub fn set_cost(&mut self, var: usize, cost: f64) {
        self.cost[var] = cost;
    }

    pub fn n_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn cost(&self) -> &[f64] {
        &self.cost
    }

    pub fn bounds(&self, var: usize) -> (f64, f64) {
        (self.lower[var], self.upper[var])
    }

    pub fn name(&self, var: usize) -> &str {
        &self.names[var]
    }

    /// Checks dimensions and rejects NaN data.
    pub fn validate(&self) -> Result<(), String> {
        let n = self.n_vars();
        for j in 0..n {
            if self.cost[j].is_nan() || !self.cost[j].is_finite() {
                return Err(format!("objective coefficient of {} is not finite", self.names[j]));
            }
            if self.lower[j].is_nan() || self.upper[j].is_nan() {
                return Err(format!("bounds of {} are NaN", self.names[j]));
            }
            if self.lower[j] == f64::INFINITY || self.upper[j] == f64::NEG_INFINITY {
                return Err(format!("bounds of {} are empty", self.names[j]));
            }
        }
        for (r, c) in self.constraints.iter().enumerate() {
            if !c.rhs.is_finite() {
                return Err(format!("rhs of row {r} is not finite"));
            }
            for &(j, a) in &c.coeffs {
                if j >= n {
                    return Err(format!("row {r} references variable {j} of {n}"));
                }
                if !a.is_finite() {
                    return Err(format!("row {r} has a non-finite coefficient"));
                }
            }
        }
        Ok(())
    }

    /// Value of every row's left-hand side at `x`.
    pub fn row_activity(&self, x: &[f64]) -> Vec<f64> {
        self.constraints
            .iter()
            .map(|c| c.coeffs.iter().map(|&(j, a)| a * x[j]).sum())
            .collect()
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self
            .constraints
            .iter()
            .zip(self.row_activity(x))
            .map(|(c, act)| match c.sense {
                Sense::Le => (act - c.rhs).max(0.0),
                Sense::Eq => (act - c.rhs).abs(),
            });
        let bounds = (0..self.n_vars()).map(|j| (self.lower[j] - x[j]).max(x[j] - self.upper[j]).max(0.0));
        rows.chain(bounds).fold(0.0, f64::max)
    }

    /// One line per row: `coef*var coef*var ... <= rhs`, preceded by the
    /// objective and followed by the bounds.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let term = |out: &mut String, a: f64, j: usize| {
            let _ = write!(out, "{}{}*{}", if out.ends_with(' ') || out.is_empty() { "" } else { " " }, fmt_num(a), self.names[j]);
        };
        out.push_str("minimize:");
        for (j, &c) in self.cost.iter().enumerate() {
            if c != 0.0 {
                out.push(' ');
                term(&mut out, c, j);
            }
        }
        out.push('\n');
        for c in &self.constraints {
            let mut line = String::new();
            for &(j, a) in &c.coeffs {
                term(&mut line, a, j);
            }
            let op = match c.sense {
                Sense::Le => "<=",
                Sense::Eq => "=",
            };
            let _ = writeln!(out, "{line} {op} {}", fmt_num(c.rhs));
        }
        for j in 0..self.n_vars() {
            let _ = writeln!(out, "{} <= {} <= {}", fmt_num(self.lower[j]), self.names[j], fmt_num(self.upper[j]));
        }
        out
    }
}

fn fmt_num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
    Malformed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub values: Vec<f64>,
    /// Row prices `y` with `c - A'y` the reduced costs; `y <= 0` on active
    /// `<=` rows of a minimization.
    pub duals: Vec<f64>,
    pub objective_value: f64,
    pub iterations: usize,
}

impl LpSolution {
    fn failed(status: LpStatus, n: usize, iterations: usize) -> Self {
        Self {
            status,
            values: vec![f64::NAN; n],
            duals: Vec::new(),
            objective_value: f64::NAN,
            iterations,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// Seam for plugging in another LP backend.
pub trait LpSolver {
    fn solve(&self, problem: &LpProblem) -> LpSolution;
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimplexOptions {
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    pub max_iterations: usize,
    /// Consecutive degenerate pivots after which entering-variable selection
    /// switches from largest reduced cost to Bland's smallest-index rule.
    pub bland_after: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-7,
            optimality_tol: 1e-9,
            max_iterations: 200_000,
            bland_after: 50,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct DenseSimplex {
    pub options: SimplexOptions,
}

impl LpSolver for DenseSimplex {
    fn solve(&self, problem: &LpProblem) -> LpSolution {
        solve_lp_with(problem, &self.options)
    }
}

pub fn solve_lp(problem: &LpProblem) -> LpSolution {
    solve_lp_with(problem, &SimplexOptions::default())
}

/// How an original variable maps onto non-negative tableau columns.
#[derive(Clone, Copy, Debug)]
enum VarMap {
    /// x = offset + sign * col
    Shifted { col: usize, offset: f64, sign: f64 },
    /// x = pos - neg
    Split { pos: usize, neg: usize },
}

const PIVOT_TOL: f64 = 1e-9;

struct Tableau {
    m: usize,
    ncols: usize,
    /// Row-major `m x ncols` matrix `B^-1 A`.
    t: Vec<f64>,
    /// Values of the basic variables.
    xb: Vec<f64>,
    basis: Vec<usize>,
    /// Upper bound per column (lower is always zero).
    upper: Vec<f64>,
    at_upper: Vec<bool>,
    is_basic: Vec<bool>,
    /// Reduced costs of the active objective.
    d: Vec<f64>,
    cost: Vec<f64>,
}

enum Phase {
    Optimal,
    Unbounded,
    IterationLimit,
}

impl Tableau {
    fn row(&self, r: usize) -> &[f64] {
        &self.t[r * self.ncols..(r + 1) * self.ncols]
    }

    fn set_objective(&mut self, cost: Vec<f64>) {
        self.d = cost.clone();
        for r in 0..self.m {
            let cb = cost[self.basis[r]];
            if cb != 0.0 {
                let row = &self.t[r * self.ncols..(r + 1) * self.ncols];
                for (dj, &a) in self.d.iter_mut().zip(row) {
                    *dj -= cb * a;
                }
            }
        }
        self.cost = cost;
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let nc = self.ncols;
        let p = self.t[r * nc + j];
        {
            let row = &mut self.t[r * nc..(r + 1) * nc];
            for a in row.iter_mut() {
                *a /= p;
            }
            row[j] = 1.0;
        }
        let (before, rest) = self.t.split_at_mut(r * nc);
        let (prow, after) = rest.split_at_mut(nc);
        for other in before.chunks_exact_mut(nc).chain(after.chunks_exact_mut(nc)) {
            let f = other[j];
            if f != 0.0 {
                for (a, &b) in other.iter_mut().zip(prow.iter()) {
                    *a -= f * b;
                }
                other[j] = 0.0;
            }
        }
        let f = self.d[j];
        if f != 0.0 {
            for (a, &b) in self.d.iter_mut().zip(prow.iter()) {
                *a -= f * b;
            }
            self.d[j] = 0.0;
        }
        let leaving = self.basis[r];
        self.is_basic[leaving] = false;
        self.is_basic[j] = true;
        self.basis[r] = j;
    }

    fn run(&mut self, opts: &SimplexOptions, iterations: &mut usize) -> Phase {
        let mut degenerate_streak = 0usize;
        loop {
            if *iterations >= opts.max_iterations {
                return Phase::IterationLimit;
            }
            let bland = degenerate_streak >= opts.bland_after;
            // entering column
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..self.ncols {
                if self.is_basic[j] || self.upper[j] <= 0.0 {
                    continue;
                }
                let dj = self.d[j];
                let improving = if self.at_upper[j] {
                    dj > opts.optimality_tol
                } else {
                    dj < -opts.optimality_tol
                };
                if !improving {
                    continue;
                }
                if bland {
                    entering = Some((j, dj));
                    break;
                }
                if entering.is_none_or(|(_, best)| dj.abs() > best.abs()) {
                    entering = Some((j, dj));
                }
            }
            let Some((j, _)) = entering else {
                return Phase::Optimal;
            };
            *iterations += 1;
            let dir = if self.at_upper[j] { -1.0 } else { 1.0 };

            // Harris two-pass ratio test: find the largest step that keeps
            // every basic variable within its bounds relaxed by the
            // feasibility tolerance, then pick the largest pivot among rows
            // blocking within that step.
            let delta = opts.feasibility_tol;
            let col = |r: usize| dir * self.t[r * self.ncols + j];
            let relaxed_limit = |r: usize, a: f64, relax: f64| -> Option<f64> {
                let b = self.basis[r];
                if a > PIVOT_TOL {
                    Some((self.xb[r] + relax).max(0.0) / a)
                } else if a < -PIVOT_TOL && self.upper[b].is_finite() {
                    Some((self.upper[b] - self.xb[r] + relax).max(0.0) / -a)
                } else {
                    None
                }
            };
            let mut max_step = f64::INFINITY;
            for r in 0..self.m {
                if let Some(l) = relaxed_limit(r, col(r), delta) {
                    max_step = max_step.min(l);
                }
            }
            let mut best_row: Option<(usize, f64, f64)> = None;
            if max_step.is_finite() {
                for r in 0..self.m {
                    let a = col(r);
                    let Some(limit) = relaxed_limit(r, a, 0.0) else {
                        continue;
                    };
                    if limit > max_step {
                        continue;
                    }
                    let better = match best_row {
                        None => true,
                        Some((br, _, ba)) => {
                            if bland {
                                self.basis[r] < self.basis[br]
                            } else {
                                a.abs() > ba.abs()
                            }
                        }
                    };
                    if better {
                        best_row = Some((r, limit, a));
                    }
                }
            }
            let flip = self.upper[j];
            let step = match best_row {
                Some((_, l, _)) if l < flip => l,
                _ if flip.is_finite() => flip,
                _ => return Phase::Unbounded,
            };
            if step <= 1e-12 {
                degenerate_streak += 1;
            } else {
                degenerate_streak = 0;
            }
            // move basic values along the edge
            if step != 0.0 {
                for r in 0..self.m {
                    self.xb[r] -= dir * step * self.t[r * self.ncols + j];
                }
            }
            match best_row {
                Some((r, l, a)) if l < flip => {
                    let leaving = self.basis[r];
                    let entering_value = if self.at_upper[j] { self.upper[j] - step } else { step };
                    // a > 0 means the leaving variable fell to zero
                    self.at_upper[leaving] = a < 0.0;
                    self.at_upper[j] = false;
                    self.pivot(r, j);
                    self.xb[r] = entering_value;
                }
                _ => {
                    self.at_upper[j] = !self.at_upper[j];
                }
            }
        }
    }

    fn column_value(&self, col: usize) -> f64 {
        if self.is_basic[col] {
            let r = self.basis.iter().position(|&b| b == col).expect("basic column in basis");
            self.xb[r]
        } else if self.at_upper[col] {
            self.upper[col]
        } else {
            0.0
        }
    }
}

/// Solves `problem` with a two-phase bounded-variable primal simplex on a
/// dense tableau. Deterministic for identical input.
pub fn solve_lp_with(problem: &LpProblem, opts: &SimplexOptions) -> LpSolution {
    let n = problem.n_vars();
    if problem.validate().is_err() {
        return LpSolution::failed(LpStatus::Malformed, n, 0);
    }
    for j in 0..n {
        let (l, u) = problem.bounds(j);
        if l > u {
            return LpSolution::failed(LpStatus::Infeasible, n, 0);
        }
    }

    // columns for structural variables
    let mut maps = Vec::with_capacity(n);
    let mut col_upper = Vec::new();
    for j in 0..n {
        let (l, u) = problem.bounds(j);
        let map = if l.is_finite() {
            col_upper.push(u - l);
            VarMap::Shifted { col: col_upper.len() - 1, offset: l, sign: 1.0 }
        } else if u.is_finite() {
            col_upper.push(f64::INFINITY);
            VarMap::Shifted { col: col_upper.len() - 1, offset: u, sign: -1.0 }
        } else {
            col_upper.push(f64::INFINITY);
            col_upper.push(f64::INFINITY);
            VarMap::Split { pos: col_upper.len() - 2, neg: col_upper.len() - 1 }
        };
        maps.push(map);
    }
    let n_struct = col_upper.len();
    let m = problem.n_constraints();
    let n_slack = problem.constraints().iter().filter(|c| c.sense == Sense::Le).count();

    // dense rows over structural + slack columns, rhs shifted by offsets
    let mut rows = vec![0.0; m * (n_struct + n_slack)];
    let width = n_struct + n_slack;
    let mut rhs = vec![0.0; m];
    let mut slack_of_row = vec![None; m];
    // scaled row = factor * original row
    let mut row_factor = vec![1.0; m];
    let mut next_slack = n_struct;
    for (r, c) in problem.constraints().iter().enumerate() {
        let row = &mut rows[r * width..(r + 1) * width];
        let mut b = c.rhs;
        for &(j, a) in &c.coeffs {
            match maps[j] {
                VarMap::Shifted { col, offset, sign } => {
                    row[col] += a * sign;
                    b -= a * offset;
                }
                VarMap::Split { pos, neg } => {
                    row[pos] += a;
                    row[neg] -= a;
                }
            }
        }
        // equilibrate: largest structural coefficient becomes 1
        let norm = row[..n_struct].iter().fold(0.0f64, |acc, a| acc.max(a.abs()));
        row_factor[r] = 1.0;
        if norm > 0.0 {
            row_factor[r] = 1.0 / norm;
            for a in row[..n_struct].iter_mut() {
                *a /= norm;
            }
            b /= norm;
        }
        if c.sense == Sense::Le {
            row[next_slack] = 1.0;
            slack_of_row[r] = Some(next_slack);
            next_slack += 1;
        }
        if b < 0.0 {
            for a in row.iter_mut() {
                *a = -*a;
            }
            b = -b;
            row_factor[r] = -row_factor[r];
        }
        rhs[r] = b;
    }

    // initial basis: slacks with +1 coefficient, artificials elsewhere
    let mut basis = vec![usize::MAX; m];
    let mut n_art = 0;
    for r in 0..m {
        match slack_of_row[r] {
            Some(s) if rows[r * width + s] > 0.0 => basis[r] = s,
            _ => {
                basis[r] = width + n_art;
                n_art += 1;
            }
        }
    }
    let identity_col = basis.clone();
    let ncols = width + n_art;
    let mut t = vec![0.0; m * ncols];
    for r in 0..m {
        t[r * ncols..r * ncols + width].copy_from_slice(&rows[r * width..(r + 1) * width]);
        if basis[r] >= width {
            t[r * ncols + basis[r]] = 1.0;
        }
    }
    drop(rows);

    let mut upper = col_upper;
    upper.resize(width, f64::INFINITY);
    upper.resize(ncols, f64::INFINITY);
    let mut is_basic = vec![false; ncols];
    for &b in &basis {
        is_basic[b] = true;
    }
    let mut tab = Tableau {
        m,
        ncols,
        t,
        xb: rhs,
        basis,
        upper,
        at_upper: vec![false; ncols],
        is_basic,
        d: Vec::new(),
        cost: Vec::new(),
    };

    let mut iterations = 0;
    let scale = 1.0 + tab.xb.iter().fold(0.0f64, |acc, &b| acc.max(b.abs()));

    if n_art > 0 {
        let mut phase1 = vec![0.0; ncols];
        for c in phase1.iter_mut().skip(width) {
            *c = 1.0;
        }
        tab.set_objective(phase1);
        match tab.run(opts, &mut iterations) {
            Phase::Optimal => {}
            Phase::IterationLimit => return LpSolution::failed(LpStatus::IterationLimit, n, iterations),
            Phase::Unbounded => return LpSolution::failed(LpStatus::Infeasible, n, iterations),
        }
        let infeasibility: f64 = (0..m)
            .filter(|&r| tab.basis[r] >= width)
            .map(|r| tab.xb[r])
            .sum();
        if infeasibility > opts.feasibility_tol * scale {
            return LpSolution::failed(LpStatus::Infeasible, n, iterations);
        }
        // fix artificials at zero and drive the basic ones out where possible
        for c in width..ncols {
            tab.upper[c] = 0.0;
            tab.at_upper[c] = false;
        }
        for r in 0..m {
            if tab.basis[r] < width {
                continue;
            }
            let candidate = (0..width)
                .filter(|&j| !tab.is_basic[j])
                .max_by(|&a, &b| tab.row(r)[a].abs().total_cmp(&tab.row(r)[b].abs()));
            if let Some(j) = candidate {
                if tab.row(r)[j].abs() > 1e-7 {
                    let value = if tab.at_upper[j] { tab.upper[j] } else { 0.0 };
                    // degenerate exchange: the artificial's value is ~0
                    let shift = tab.xb[r] / tab.row(r)[j];
                    for rr in 0..m {
                        if rr != r {
                            tab.xb[rr] -= shift * tab.t[rr * ncols + j];
                        }
                    }
                    tab.at_upper[j] = false;
                    tab.pivot(r, j);
                    tab.xb[r] = value + shift;
                }
            }
        }
    }

    let mut phase2 = vec![0.0; ncols];
    for j in 0..n {
        let c = problem.cost()[j];
        match maps[j] {
            VarMap::Shifted { col, sign, .. } => phase2[col] = c * sign,
            VarMap::Split { pos, neg } => {
                phase2[pos] = c;
                phase2[neg] = -c;
            }
        }
    }
    tab.set_objective(phase2);
    match tab.run(opts, &mut iterations) {
        Phase::Optimal => {}
        Phase::IterationLimit => return LpSolution::failed(LpStatus::IterationLimit, n, iterations),
        Phase::Unbounded => return LpSolution::failed(LpStatus::Unbounded, n, iterations),
    }

    let values: Vec<f64> = maps
        .iter()
        .map(|map| match *map {
            VarMap::Shifted { col, offset, sign } => offset + sign * tab.column_value(col),
            VarMap::Split { pos, neg } => tab.column_value(pos) - tab.column_value(neg),
        })
        .collect();
    let objective_value = values.iter().zip(problem.cost()).map(|(x, c)| x * c).sum();
    // the initial identity columns carry zero cost, so their reduced costs
    // are the negated row prices
    let duals = (0..m).map(|r| -tab.d[identity_col[r]] * row_factor[r]).collect();
    LpSolution {
        status: LpStatus::Optimal,
        values,
        duals,
        objective_value,
        iterations,
    }
}
