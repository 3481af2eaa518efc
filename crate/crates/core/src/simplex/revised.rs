use super::{LinearProgram, LpSolution, LpStatus, Relation, FEAS_TOL, OPT_TOL};
use crate::error::{Error, Result};

/// Smallest pivot magnitude accepted by the ratio test.
const PIVOT_TOL: f64 = 1e-9;
/// Pivots between explicit refactorizations of the basis inverse.
const REFACTOR_EVERY: usize = 64;
/// Consecutive degenerate pivots before switching to Bland's rule.
const DEGENERATE_STREAK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
enum State {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free column held at zero.
    Free,
}

#[derive(Debug, Clone, Copy)]
enum Column {
    Structural(usize),
    /// Unit column `sign * e_row`.
    Unit { row: usize, sign: f64 },
}

enum Outcome {
    Optimal,
    Unbounded,
}

struct Engine<'a> {
    lp: &'a LinearProgram,
    m: usize,
    /// Column-major copy of the constraint matrix.
    a: Vec<f64>,
    b: Vec<f64>,
    cols: Vec<Column>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    cost: Vec<f64>,
    x: Vec<f64>,
    state: Vec<State>,
    basis: Vec<usize>,
    /// Row-major explicit basis inverse.
    binv: Vec<f64>,
    iterations: usize,
    limit: usize,
    since_refactor: usize,
    // scratch
    y: Vec<f64>,
    w: Vec<f64>,
}

pub(super) fn solve(lp: &LinearProgram) -> Result<LpSolution> {
    let mut engine = Engine::new(lp);
    let n = lp.num_vars();
    let m = engine.m;

    let artificials = engine.cols.len() - n - m;
    if artificials > 0 {
        engine.cost = engine
            .cols
            .iter()
            .enumerate()
            .map(|(j, _)| if j >= n + m { 1.0 } else { 0.0 })
            .collect();
        engine.run()?;
        let infeasibility: f64 = (n + m..engine.cols.len()).map(|j| engine.x[j]).sum();
        let scale = 1.0 + engine.b.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        if infeasibility > FEAS_TOL * scale {
            return Ok(LpSolution::without_solution(
                LpStatus::Infeasible,
                n,
                m,
                engine.iterations,
            ));
        }
        for j in n + m..engine.cols.len() {
            engine.ub[j] = 0.0;
            if engine.state[j] != State::Basic {
                engine.state[j] = State::AtLower;
                engine.x[j] = 0.0;
            }
        }
        engine.refactor()?;
    }

    engine.cost = (0..engine.cols.len())
        .map(|j| if j < n { lp.cost[j] } else { 0.0 })
        .collect();
    match engine.run()? {
        Outcome::Unbounded => Ok(LpSolution::without_solution(
            LpStatus::Unbounded,
            n,
            m,
            engine.iterations,
        )),
        Outcome::Optimal => {
            engine.refactor()?;
            Ok(engine.certificate())
        }
    }
}

impl<'a> Engine<'a> {
    fn new(lp: &'a LinearProgram) -> Self {
        let n = lp.num_vars();
        let m = lp.num_rows();
        let mut a = vec![0.0; m * n];
        for (i, row) in lp.constraints.iter().enumerate() {
            for (j, &v) in row.coeffs.iter().enumerate() {
                a[j * m + i] = v;
            }
        }
        let b: Vec<f64> = lp.constraints.iter().map(|r| r.rhs).collect();

        let mut cols: Vec<Column> = (0..n).map(Column::Structural).collect();
        let mut lb = lp.lower.clone();
        let mut ub = lp.upper.clone();
        let mut x = vec![0.0; n];
        let mut state = vec![State::AtLower; n];
        for j in 0..n {
            if lb[j].is_finite() {
                x[j] = lb[j];
                state[j] = State::AtLower;
            } else if ub[j].is_finite() {
                x[j] = ub[j];
                state[j] = State::AtUpper;
            } else {
                state[j] = State::Free;
            }
        }

        // Row activity with structural columns at their starting values.
        let mut resid = b.clone();
        for j in 0..n {
            if x[j] != 0.0 {
                for i in 0..m {
                    resid[i] -= a[j * m + i] * x[j];
                }
            }
        }

        let mut basis = vec![0; m];
        let mut artificial = Vec::new();
        for (i, row) in lp.constraints.iter().enumerate() {
            let (sl, su) = match row.relation {
                Relation::Le => (0.0, f64::INFINITY),
                Relation::Ge => (f64::NEG_INFINITY, 0.0),
                Relation::Eq => (0.0, 0.0),
            };
            let j = cols.len();
            cols.push(Column::Unit { row: i, sign: 1.0 });
            lb.push(sl);
            ub.push(su);
            let r = resid[i];
            if r >= sl - FEAS_TOL && r <= su + FEAS_TOL {
                x.push(r.clamp(sl, su));
                state.push(State::Basic);
                basis[i] = j;
            } else {
                x.push(0.0);
                state.push(if sl == 0.0 { State::AtLower } else { State::AtUpper });
                artificial.push((i, r));
            }
        }
        for (i, r) in artificial {
            let j = cols.len();
            cols.push(Column::Unit {
                row: i,
                sign: r.signum(),
            });
            lb.push(0.0);
            ub.push(f64::INFINITY);
            x.push(r.abs());
            state.push(State::Basic);
            basis[i] = j;
        }

        let total = cols.len();
        let mut binv = vec![0.0; m * m];
        for (i, &j) in basis.iter().enumerate() {
            if let Column::Unit { sign, .. } = cols[j] {
                binv[i * m + i] = sign;
            }
        }
        Engine {
            lp,
            m,
            a,
            b,
            cols,
            lb,
            ub,
            cost: vec![0.0; total],
            x,
            state,
            basis,
            binv,
            iterations: 0,
            limit: 20_000 + 50 * (m + total),
            since_refactor: 0,
            y: vec![0.0; m],
            w: vec![0.0; m],
        }
    }

    fn col_dot(&self, j: usize, v: &[f64]) -> f64 {
        match self.cols[j] {
            Column::Structural(s) => {
                let col = &self.a[s * self.m..(s + 1) * self.m];
                col.iter().zip(v).map(|(a, b)| a * b).sum()
            }
            Column::Unit { row, sign } => sign * v[row],
        }
    }

    /// `w = B^{-1} a_j`.
    fn ftran(&mut self, j: usize) {
        let m = self.m;
        match self.cols[j] {
            Column::Structural(s) => {
                let col = &self.a[s * m..(s + 1) * m];
                for i in 0..m {
                    let row = &self.binv[i * m..(i + 1) * m];
                    self.w[i] = row.iter().zip(col).map(|(p, q)| p * q).sum();
                }
            }
            Column::Unit { row, sign } => {
                for i in 0..m {
                    self.w[i] = sign * self.binv[i * m + row];
                }
            }
        }
    }

    /// `y^T = c_B^T B^{-1}`.
    fn compute_duals(&mut self) {
        let m = self.m;
        self.y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..m {
            let cb = self.cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.binv[i * m..(i + 1) * m];
                for (yk, bk) in self.y.iter_mut().zip(row) {
                    *yk += cb * bk;
                }
            }
        }
    }

    /// Rebuilds `B^{-1}` by Gauss-Jordan elimination and recomputes basic values.
    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        self.since_refactor = 0;
        if m == 0 {
            return Ok(());
        }
        let mut bmat = vec![0.0; m * m];
        for (k, &j) in self.basis.iter().enumerate() {
            match self.cols[j] {
                Column::Structural(s) => {
                    for i in 0..m {
                        bmat[i * m + k] = self.a[s * m + i];
                    }
                }
                Column::Unit { row, sign } => bmat[row * m + k] = sign,
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for c in 0..m {
            let p = (c..m)
                .max_by(|&r1, &r2| bmat[r1 * m + c].abs().total_cmp(&bmat[r2 * m + c].abs()))
                .expect("nonempty range");
            let piv = bmat[p * m + c];
            if piv.abs() < 1e-12 {
                return Err(Error::NumericalError("singular basis".into()));
            }
            if p != c {
                for k in 0..m {
                    bmat.swap(p * m + k, c * m + k);
                    inv.swap(p * m + k, c * m + k);
                }
            }
            let scale = 1.0 / piv;
            for k in 0..m {
                bmat[c * m + k] *= scale;
                inv[c * m + k] *= scale;
            }
            for r in 0..m {
                if r != c {
                    let f = bmat[r * m + c];
                    if f != 0.0 {
                        for k in 0..m {
                            bmat[r * m + k] -= f * bmat[c * m + k];
                            inv[r * m + k] -= f * inv[c * m + k];
                        }
                    }
                }
            }
        }
        self.binv = inv;

        let mut rhs = self.b.clone();
        for j in 0..self.cols.len() {
            if self.state[j] != State::Basic && self.x[j] != 0.0 {
                let xj = self.x[j];
                match self.cols[j] {
                    Column::Structural(s) => {
                        for i in 0..m {
                            rhs[i] -= self.a[s * m + i] * xj;
                        }
                    }
                    Column::Unit { row, sign } => rhs[row] -= sign * xj,
                }
            }
        }
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            self.x[self.basis[i]] = row.iter().zip(&rhs).map(|(p, q)| p * q).sum();
        }
        Ok(())
    }

    fn reduced_cost(&self, j: usize) -> f64 {
        self.cost[j] - self.col_dot(j, &self.y)
    }

    /// Picks an entering column and its direction of motion.
    fn choose_entering(&self, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.cols.len() {
            let dir = match self.state[j] {
                State::Basic => continue,
                _ if self.lb[j] == self.ub[j] => continue,
                State::AtLower => {
                    let d = self.reduced_cost(j);
                    if d < -OPT_TOL {
                        Some((1.0, -d))
                    } else {
                        None
                    }
                }
                State::AtUpper => {
                    let d = self.reduced_cost(j);
                    if d > OPT_TOL {
                        Some((-1.0, d))
                    } else {
                        None
                    }
                }
                State::Free => {
                    let d = self.reduced_cost(j);
                    if d.abs() > OPT_TOL {
                        Some((-d.signum(), d.abs()))
                    } else {
                        None
                    }
                }
            };
            if let Some((dir, score)) = dir {
                if bland {
                    return Some((j, dir));
                }
                if best.map_or(true, |(_, _, s)| score > s) {
                    best = Some((j, dir, score));
                }
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    fn run(&mut self) -> Result<Outcome> {
        let m = self.m;
        let mut degenerate = 0usize;
        loop {
            if self.iterations >= self.limit {
                return Err(Error::SolverStalled {
                    iterations: self.iterations,
                });
            }
            if self.since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
            }
            self.compute_duals();
            let bland = degenerate >= DEGENERATE_STREAK;
            let Some((q, dir)) = self.choose_entering(bland) else {
                return Ok(Outcome::Optimal);
            };
            self.ftran(q);

            // Ratio test. `None` leaving row means the entering column flips bounds.
            let mut theta = self.ub[q] - self.lb[q];
            let mut leave: Option<usize> = None;
            let mut leave_alpha = 0.0;
            for i in 0..m {
                let alpha = dir * self.w[i];
                let bi = self.basis[i];
                let t = if alpha > PIVOT_TOL && self.lb[bi].is_finite() {
                    (self.x[bi] - self.lb[bi]) / alpha
                } else if alpha < -PIVOT_TOL && self.ub[bi].is_finite() {
                    (self.ub[bi] - self.x[bi]) / -alpha
                } else {
                    continue;
                };
                let t = t.max(0.0);
                let tie = 1e-12 * (1.0 + t.abs());
                let better = if t < theta - tie {
                    true
                } else if t <= theta + tie {
                    match leave {
                        None => false,
                        Some(r) => {
                            if bland {
                                bi < self.basis[r]
                            } else {
                                alpha.abs() > leave_alpha
                                    || (alpha.abs() == leave_alpha && bi < self.basis[r])
                            }
                        }
                    }
                } else {
                    false
                };
                if better {
                    theta = t;
                    leave = Some(i);
                    leave_alpha = alpha.abs();
                }
            }
            if theta == f64::INFINITY {
                return Ok(Outcome::Unbounded);
            }
            self.iterations += 1;
            if theta <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }

            if theta != 0.0 {
                self.x[q] += dir * theta;
                for i in 0..m {
                    let bi = self.basis[i];
                    self.x[bi] -= theta * dir * self.w[i];
                }
            }
            match leave {
                None => {
                    if dir > 0.0 {
                        self.x[q] = self.ub[q];
                        self.state[q] = State::AtUpper;
                    } else {
                        self.x[q] = self.lb[q];
                        self.state[q] = State::AtLower;
                    }
                }
                Some(r) => {
                    let bl = self.basis[r];
                    if dir * self.w[r] > 0.0 {
                        self.x[bl] = self.lb[bl];
                        self.state[bl] = State::AtLower;
                    } else {
                        self.x[bl] = self.ub[bl];
                        self.state[bl] = State::AtUpper;
                    }
                    self.basis[r] = q;
                    self.state[q] = State::Basic;
                    self.pivot(r);
                }
            }
        }
    }

    fn pivot(&mut self, r: usize) {
        let m = self.m;
        let inv_piv = 1.0 / self.w[r];
        for k in 0..m {
            self.binv[r * m + k] *= inv_piv;
        }
        let (head, rest) = self.binv.split_at_mut(r * m);
        let (pivot_row, tail) = rest.split_at_mut(m);
        for (i, row) in head.chunks_exact_mut(m).enumerate() {
            let f = self.w[i];
            if f != 0.0 {
                row.iter_mut().zip(pivot_row.iter()).for_each(|(a, p)| *a -= f * p);
            }
        }
        for (off, row) in tail.chunks_exact_mut(m).enumerate() {
            let f = self.w[r + 1 + off];
            if f != 0.0 {
                row.iter_mut().zip(pivot_row.iter()).for_each(|(a, p)| *a -= f * p);
            }
        }
        self.since_refactor += 1;
    }

    fn certificate(&mut self) -> LpSolution {
        let n = self.lp.num_vars();
        self.compute_duals();
        let primal: Vec<f64> = self.x[..n].to_vec();
        let objective = self.lp.objective_at(&primal);
        let mut dual_objective: f64 = self.b.iter().zip(&self.y).map(|(b, y)| b * y).sum();
        for j in 0..self.cols.len() {
            let d = self.reduced_cost(j);
            let bound = if self.state[j] == State::Basic || d.abs() <= OPT_TOL {
                self.x[j]
            } else if d > 0.0 {
                self.lb[j]
            } else {
                self.ub[j]
            };
            if d != 0.0 {
                dual_objective += d * bound;
            }
        }
        LpSolution {
            status: LpStatus::Optimal,
            primal,
            duals: self.y.clone(),
            objective,
            dual_objective,
            iterations: self.iterations,
        }
    }
}
