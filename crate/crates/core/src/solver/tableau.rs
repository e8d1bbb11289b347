//! Dense simplex tableau shared by the LP and QP solvers.
//!
//! The tableau stores `B^-1 [A | b]` row-major for a problem in the standard
//! form `A x = b`, where every column is either free, nonnegative, or an
//! artificial introduced for phase one. Row operations skip zero entries of the
//! pivot row and column, which keeps pivots cheap on the block-sparse programs
//! produced by the MPC dualization.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::tolerance::Tolerances;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ColKind {
    Free,
    NonNeg,
    Artificial,
}

/// Entering-variable selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum PricingRule {
    /// Smallest-index rule; cannot cycle.
    #[default]
    Bland,
    /// Largest reduced cost, falling back to Bland's rule after a run of
    /// degenerate pivots.
    Dantzig,
}

/// Origin of a tableau row in the caller's problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum RowOrigin {
    Ub(usize),
    Eq(usize),
}

pub(crate) struct Tableau {
    pub rows: usize,
    pub cols: usize,
    stride: usize,
    data: Vec<f64>,
    pub basis: Vec<usize>,
    pub row_of: Vec<usize>,
    pub kind: Vec<ColKind>,
    pub origin: Vec<RowOrigin>,
    /// For every column, the structural index it represents (`None` for slacks
    /// and artificials).
    pub structural: Vec<Option<usize>>,
    /// Slack column of each inequality row of the caller's problem.
    pub slack_col: Vec<usize>,
}

const NONBASIC: usize = usize::MAX;
const DEGENERATE_STREAK: usize = 50;

impl Tableau {
    /// Builds the phase-one tableau for
    /// `a_ub x <= b_ub, a_eq x = b_eq, x_j >= lower_j` (free when `lower_j` is
    /// `-inf`). Variables with finite lower bounds are shifted to start at zero.
    pub fn build(
        a_ub: &DMatrix<f64>,
        b_ub: &DVector<f64>,
        a_eq: &DMatrix<f64>,
        b_eq: &DVector<f64>,
        lower: &[f64],
    ) -> Self {
        let n = lower.len();
        let n_ub = a_ub.nrows();
        let n_eq = a_eq.nrows();
        let rows = n_ub + n_eq;

        let shift: Vec<f64> = lower
            .iter()
            .map(|&l| if l.is_finite() { l } else { 0.0 })
            .collect();
        let mut nnz = vec![0usize; n];
        for j in 0..n {
            for i in 0..n_ub {
                if a_ub[(i, j)] != 0.0 {
                    nnz[j] += 1;
                }
            }
            for i in 0..n_eq {
                if a_eq[(i, j)] != 0.0 {
                    nnz[j] += 1;
                }
            }
        }

        // Row coefficients (after sign normalization) and crash choices.
        let mut row_sign = vec![1.0; rows];
        let mut rhs = vec![0.0; rows];
        for i in 0..rows {
            let (row, b) = if i < n_ub {
                (a_ub.row(i), b_ub[i])
            } else {
                (a_eq.row(i - n_ub), b_eq[i - n_ub])
            };
            let shifted: f64 = b - (0..n).map(|j| row[j] * shift[j]).sum::<f64>();
            if shifted < 0.0 {
                row_sign[i] = -1.0;
            }
            rhs[i] = shifted * row_sign[i];
        }

        let mut used = vec![false; n];
        let mut crash: Vec<Option<(usize, f64)>> = vec![None; rows];
        for i in 0..rows {
            if i < n_ub && row_sign[i] > 0.0 {
                crash[i] = Some((n + i, 1.0));
                continue;
            }
            let row = if i < n_ub { a_ub.row(i) } else { a_eq.row(i - n_ub) };
            for j in 0..n {
                if used[j] || nnz[j] != 1 || !lower[j].is_finite() {
                    continue;
                }
                let coef = row[j] * row_sign[i];
                if coef > 0.0 {
                    used[j] = true;
                    crash[i] = Some((j, coef));
                    break;
                }
            }
        }
        let n_art = crash.iter().filter(|c| c.is_none()).count();
        let cols = n + n_ub + n_art;
        let stride = cols + 1;
        let mut data = vec![0.0; rows * stride];
        let mut kind = Vec::with_capacity(cols);
        let mut structural = Vec::with_capacity(cols);
        for (j, &l) in lower.iter().enumerate() {
            kind.push(if l.is_finite() { ColKind::NonNeg } else { ColKind::Free });
            structural.push(Some(j));
        }
        for _ in 0..n_ub {
            kind.push(ColKind::NonNeg);
            structural.push(None);
        }
        for _ in 0..n_art {
            kind.push(ColKind::Artificial);
            structural.push(None);
        }

        let mut basis = vec![0; rows];
        let mut origin = Vec::with_capacity(rows);
        let mut next_art = n + n_ub;
        for i in 0..rows {
            let base = i * stride;
            let s = row_sign[i];
            if i < n_ub {
                for j in 0..n {
                    data[base + j] = s * a_ub[(i, j)];
                }
                data[base + n + i] = s;
                origin.push(RowOrigin::Ub(i));
            } else {
                for j in 0..n {
                    data[base + j] = s * a_eq[(i - n_ub, j)];
                }
                origin.push(RowOrigin::Eq(i - n_ub));
            }
            data[base + cols] = rhs[i];
            let (col, coef) = match crash[i] {
                Some(c) => c,
                None => {
                    let c = next_art;
                    next_art += 1;
                    data[base + c] = 1.0;
                    (c, 1.0)
                }
            };
            if coef != 1.0 {
                for v in &mut data[base..base + stride] {
                    *v /= coef;
                }
            }
            basis[i] = col;
        }
        let mut row_of = vec![NONBASIC; cols];
        for (i, &b) in basis.iter().enumerate() {
            row_of[b] = i;
        }
        Self {
            rows,
            cols,
            stride,
            data,
            basis,
            row_of,
            kind,
            origin,
            structural,
            slack_col: (0..n_ub).map(|i| n + i).collect(),
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.stride + j]
    }

    #[inline]
    pub fn rhs(&self, i: usize) -> f64 {
        self.data[i * self.stride + self.cols]
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.stride..(i + 1) * self.stride]
    }

    /// Pivots column `c` into the basis at row `r`; optionally keeps a
    /// reduced-cost vector in sync.
    pub fn pivot(&mut self, r: usize, c: usize, reduced: Option<&mut [f64]>) {
        let stride = self.stride;
        let p = self.data[r * stride + c];
        {
            let row = &mut self.data[r * stride..(r + 1) * stride];
            for v in row.iter_mut() {
                if *v != 0.0 {
                    *v /= p;
                }
            }
            row[c] = 1.0;
        }
        let nz: Vec<(usize, f64)> = self.data[r * stride..(r + 1) * stride]
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(k, v)| (k, *v))
            .collect();
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let base = i * stride;
            let f = self.data[base + c];
            if f == 0.0 {
                continue;
            }
            for &(k, v) in &nz {
                let x = self.data[base + k] - f * v;
                self.data[base + k] = if x.abs() < 1e-15 { 0.0 } else { x };
            }
            self.data[base + c] = 0.0;
        }
        if let Some(d) = reduced {
            let f = d[c];
            if f != 0.0 {
                for &(k, v) in &nz {
                    if k < self.cols {
                        d[k] -= f * v;
                    }
                }
                d[c] = 0.0;
            }
        }
        let old = self.basis[r];
        self.row_of[old] = NONBASIC;
        self.basis[r] = c;
        self.row_of[c] = r;
    }

    /// Reduced costs `c - c_B^T B^-1 A` for every column.
    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for i in 0..self.rows {
            let cb = cost[self.basis[i]];
            if cb == 0.0 {
                continue;
            }
            for (j, v) in self.row(i)[..self.cols].iter().enumerate() {
                if *v != 0.0 {
                    d[j] -= cb * v;
                }
            }
        }
        d
    }

    /// Primal simplex on the current basis. Returns the number of pivots.
    pub fn simplex(
        &mut self,
        cost: &[f64],
        rule: PricingRule,
        tol: &Tolerances,
        max_iter: usize,
    ) -> SimplexOutcome {
        let mut d = self.reduced_costs(cost);
        let scale = 1.0 + cost.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let opt_tol = tol.optimality * scale;
        let mut degenerate = 0usize;
        for iter in 0..max_iter {
            let bland = rule == PricingRule::Bland || degenerate >= DEGENERATE_STREAK;
            let mut enter: Option<usize> = None;
            let mut best = 0.0;
            for j in 0..self.cols {
                if self.row_of[j] != NONBASIC || self.kind[j] == ColKind::Artificial {
                    continue;
                }
                let viol = match self.kind[j] {
                    ColKind::NonNeg => -d[j],
                    ColKind::Free => d[j].abs(),
                    ColKind::Artificial => continue,
                };
                if viol > opt_tol {
                    if bland {
                        enter = Some(j);
                        break;
                    }
                    if viol > best {
                        best = viol;
                        enter = Some(j);
                    }
                }
            }
            let Some(c) = enter else {
                return SimplexOutcome::Optimal { iterations: iter };
            };
            let sigma = if d[c] < 0.0 { 1.0 } else { -1.0 };
            let mut leave: Option<(usize, f64, f64)> = None;
            for i in 0..self.rows {
                if self.kind[self.basis[i]] == ColKind::Free {
                    continue;
                }
                let a = sigma * self.at(i, c);
                if a <= tol.pivot {
                    continue;
                }
                let ratio = self.rhs(i).max(0.0) / a;
                match leave {
                    None => leave = Some((i, ratio, a)),
                    Some((li, lr, la)) => {
                        let tie = (ratio - lr).abs() <= 1e-12 * (1.0 + lr.abs());
                        let better = if tie {
                            if bland {
                                self.basis[i] < self.basis[li]
                            } else {
                                a > la
                            }
                        } else {
                            ratio < lr
                        };
                        if better {
                            leave = Some((i, ratio, a));
                        }
                    }
                }
            }
            let Some((r, ratio, _)) = leave else {
                return SimplexOutcome::Unbounded;
            };
            if ratio <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(r, c, Some(&mut d));
        }
        SimplexOutcome::MaxIter
    }

    /// Phase one: minimize the sum of artificials, then drive remaining
    /// artificials out of the basis, drop redundant rows, and remove the
    /// artificial columns.
    pub fn phase_one(&mut self, rule: PricingRule, tol: &Tolerances, max_iter: usize) -> PhaseOne {
        let has_art = self.kind.contains(&ColKind::Artificial);
        if has_art {
            let cost: Vec<f64> = self
                .kind
                .iter()
                .map(|k| if *k == ColKind::Artificial { 1.0 } else { 0.0 })
                .collect();
            let rhs_scale = 1.0 + (0..self.rows).fold(0.0f64, |m, i| m.max(self.rhs(i).abs()));
            match self.simplex(&cost, rule, tol, max_iter) {
                SimplexOutcome::MaxIter => return PhaseOne::MaxIter,
                SimplexOutcome::Unbounded => {
                    return PhaseOne::MaxIter;
                }
                SimplexOutcome::Optimal { .. } => {}
            }
            let infeas: f64 = (0..self.rows)
                .filter(|&i| self.kind[self.basis[i]] == ColKind::Artificial)
                .map(|i| self.rhs(i))
                .sum();
            if infeas > tol.feasibility * rhs_scale * 10.0 {
                return PhaseOne::Infeasible;
            }
            let mut drop_rows = Vec::new();
            for i in 0..self.rows {
                if self.kind[self.basis[i]] != ColKind::Artificial {
                    continue;
                }
                let mut best: Option<(usize, f64)> = None;
                for j in 0..self.cols {
                    if self.kind[j] == ColKind::Artificial || self.row_of[j] != NONBASIC {
                        continue;
                    }
                    let a = self.at(i, j).abs();
                    if a > tol.pivot * 100.0 && best.is_none_or(|(_, b)| a > b) {
                        best = Some((j, a));
                    }
                }
                match best {
                    Some((j, _)) => self.pivot(i, j, None),
                    None => drop_rows.push(i),
                }
            }
            self.compact(&drop_rows);
        }
        PhaseOne::Feasible
    }

    /// Removes the given rows and all artificial columns.
    fn compact(&mut self, drop_rows: &[usize]) {
        let keep_cols: Vec<usize> = (0..self.cols)
            .filter(|&j| self.kind[j] != ColKind::Artificial)
            .collect();
        let keep_rows: Vec<usize> = (0..self.rows).filter(|i| !drop_rows.contains(i)).collect();
        let new_cols = keep_cols.len();
        let new_stride = new_cols + 1;
        let mut data = vec![0.0; keep_rows.len() * new_stride];
        for (ni, &i) in keep_rows.iter().enumerate() {
            for (nj, &j) in keep_cols.iter().enumerate() {
                data[ni * new_stride + nj] = self.at(i, j);
            }
            data[ni * new_stride + new_cols] = self.rhs(i);
        }
        let mut col_map = vec![NONBASIC; self.cols];
        for (nj, &j) in keep_cols.iter().enumerate() {
            col_map[j] = nj;
        }
        self.basis = keep_rows.iter().map(|&i| col_map[self.basis[i]]).collect();
        self.origin = keep_rows.iter().map(|&i| self.origin[i]).collect();
        self.kind = keep_cols.iter().map(|&j| self.kind[j]).collect();
        self.structural = keep_cols.iter().map(|&j| self.structural[j]).collect();
        self.slack_col = self.slack_col.iter().map(|&j| col_map[j]).collect();
        self.rows = keep_rows.len();
        self.cols = new_cols;
        self.stride = new_stride;
        self.data = data;
        self.row_of = vec![NONBASIC; self.cols];
        for (i, &b) in self.basis.iter().enumerate() {
            self.row_of[b] = i;
        }
    }

    /// Values of all columns at the current basic solution (nonbasics at zero).
    pub fn basic_solution(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.cols];
        for i in 0..self.rows {
            x[self.basis[i]] = self.rhs(i);
        }
        x
    }

    /// Reduced-gradient active-set method for a convex quadratic objective
    /// `1/2 x' H x + f' x`, started from the current basic feasible solution.
    ///
    /// The nonbasic columns at their bound form the working set. Superbasic
    /// columns move freely along the null space of the active constraints;
    /// their count never exceeds `rank(H) + 1`.
    pub fn reduced_gradient(
        &mut self,
        quad: &QuadForm,
        f: &[f64],
        rule: PricingRule,
        tol: &Tolerances,
        max_iter: usize,
    ) -> (QpOutcome, Vec<f64>) {
        let mut x = self.basic_solution();
        let mut superbasic: Vec<usize> = Vec::new();
        let mut degenerate = 0usize;
        let mut g = vec![0.0; self.cols];

        for iter in 0..max_iter {
            // Gradient.
            g.copy_from_slice(f);
            let xq = DVector::from_iterator(quad.idx.len(), quad.idx.iter().map(|&j| x[j]));
            let hx = &quad.h * &xq;
            for (k, &j) in quad.idx.iter().enumerate() {
                g[j] += hx[k];
            }
            let gscale = 1.0 + g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let opt_tol = tol.optimality * gscale;
            let gb: Vec<f64> = self.basis.iter().map(|&b| g[b]).collect();

            let reduced_s: Vec<f64> = superbasic
                .iter()
                .map(|&s| {
                    let mut r = g[s];
                    for (i, gbi) in gb.iter().enumerate() {
                        if *gbi != 0.0 {
                            r -= gbi * self.at(i, s);
                        }
                    }
                    r
                })
                .collect();
            let rmax = reduced_s.iter().fold(0.0f64, |m, v| m.max(v.abs()));

            if rmax <= opt_tol {
                // Stationary on the current face: price the working set.
                let mut d: Vec<f64> = g.clone();
                for (i, gbi) in gb.iter().enumerate() {
                    if *gbi == 0.0 {
                        continue;
                    }
                    for (j, v) in self.row(i)[..self.cols].iter().enumerate() {
                        if *v != 0.0 {
                            d[j] -= gbi * v;
                        }
                    }
                }
                let bland = rule == PricingRule::Bland || degenerate >= DEGENERATE_STREAK;
                let mut enter: Option<usize> = None;
                let mut best = 0.0;
                for j in 0..self.cols {
                    if self.row_of[j] != NONBASIC || superbasic.contains(&j) {
                        continue;
                    }
                    let viol = match self.kind[j] {
                        ColKind::NonNeg => -d[j],
                        ColKind::Free => d[j].abs(),
                        ColKind::Artificial => continue,
                    };
                    if viol > opt_tol {
                        if bland {
                            enter = Some(j);
                            break;
                        }
                        if viol > best {
                            best = viol;
                            enter = Some(j);
                        }
                    }
                }
                match enter {
                    None => return (QpOutcome::Optimal { iterations: iter }, x),
                    Some(j) => {
                        superbasic.push(j);
                        continue;
                    }
                }
            }

            // Search direction in the superbasic subspace.
            let ns = superbasic.len();
            let mut zq = DMatrix::<f64>::zeros(quad.idx.len(), ns);
            for (c, &s) in superbasic.iter().enumerate() {
                for (k, &j) in quad.idx.iter().enumerate() {
                    if j == s {
                        zq[(k, c)] = 1.0;
                    } else if self.row_of[j] != NONBASIC {
                        zq[(k, c)] = -self.at(self.row_of[j], s);
                    }
                }
            }
            let rh = zq.transpose() * &quad.h * &zq;
            let r = DVector::from_vec(reduced_s.clone());
            let eig = SymmetricEigen::new(rh);
            let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let thr = 1e-10 * lmax.max(1.0);
            let mut p = DVector::<f64>::zeros(ns);
            let mut newton = true;
            // Zero-curvature descent direction takes precedence.
            let mut best_null: Option<(usize, f64)> = None;
            for k in 0..ns {
                if eig.eigenvalues[k] <= thr {
                    let u = eig.eigenvectors.column(k);
                    let ur = u.dot(&r);
                    if ur.abs() > opt_tol && best_null.is_none_or(|(_, b)| ur.abs() > b) {
                        best_null = Some((k, ur.abs()));
                    }
                }
            }
            if let Some((k, _)) = best_null {
                let u = eig.eigenvectors.column(k).into_owned();
                let ur = u.dot(&r);
                p = -u * ur.signum();
                newton = false;
            } else {
                for k in 0..ns {
                    let lam = eig.eigenvalues[k];
                    if lam > thr {
                        let u = eig.eigenvectors.column(k);
                        p -= u * (u.dot(&r) / lam);
                    }
                }
            }

            // Induced change of the basic variables.
            let mut dx_b = vec![0.0; self.rows];
            for (c, &s) in superbasic.iter().enumerate() {
                let ps = p[c];
                if ps == 0.0 {
                    continue;
                }
                for (i, v) in dx_b.iter_mut().enumerate() {
                    let t = self.at(i, s);
                    if t != 0.0 {
                        *v -= t * ps;
                    }
                }
            }

            // Ratio test.
            let mut alpha = if newton { 1.0 } else { f64::INFINITY };
            let mut block: Option<Block> = None;
            let bland = rule == PricingRule::Bland || degenerate >= DEGENERATE_STREAK;
            let consider = |ratio: f64, blk: Block, mag: f64, alpha: &mut f64, block: &mut Option<Block>, best_mag: &mut f64| {
                let tie = (ratio - *alpha).abs() <= 1e-12 * (1.0 + alpha.abs());
                if ratio < *alpha && !tie {
                    *alpha = ratio;
                    *block = Some(blk);
                    *best_mag = mag;
                } else if tie && block.is_some() {
                    let better = if bland {
                        blk.col() < block.unwrap().col()
                    } else {
                        mag > *best_mag
                    };
                    if better {
                        *block = Some(blk);
                        *best_mag = mag;
                    }
                } else if tie && block.is_none() && ratio <= *alpha {
                    *alpha = ratio;
                    *block = Some(blk);
                    *best_mag = mag;
                }
            };
            let mut best_mag = 0.0;
            for i in 0..self.rows {
                let b = self.basis[i];
                if self.kind[b] == ColKind::Free {
                    continue;
                }
                let dx = dx_b[i];
                if dx < -tol.pivot {
                    let ratio = x[b].max(0.0) / -dx;
                    consider(ratio, Block::Basic(i, b), -dx, &mut alpha, &mut block, &mut best_mag);
                }
            }
            for (c, &s) in superbasic.iter().enumerate() {
                if self.kind[s] != ColKind::NonNeg {
                    continue;
                }
                if p[c] < -tol.pivot {
                    let ratio = x[s].max(0.0) / -p[c];
                    consider(ratio, Block::Super(c, s), -p[c], &mut alpha, &mut block, &mut best_mag);
                }
            }
            if alpha.is_infinite() {
                return (QpOutcome::Unbounded, x);
            }
            if alpha <= 1e-14 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }

            for (c, &s) in superbasic.iter().enumerate() {
                x[s] += alpha * p[c];
            }
            match block {
                None => {}
                Some(Block::Super(c, s)) => {
                    x[s] = 0.0;
                    superbasic.remove(c);
                }
                Some(Block::Basic(i, b)) => {
                    // Swap the blocking basic variable with the superbasic
                    // column that has the largest entry in its row.
                    let mut best: Option<(usize, f64)> = None;
                    for (c, &s) in superbasic.iter().enumerate() {
                        let a = self.at(i, s).abs();
                        if best.is_none_or(|(_, m)| a > m) {
                            best = Some((c, a));
                        }
                    }
                    let (c, _) = best.expect("superbasic set is nonempty");
                    let s = superbasic.remove(c);
                    self.pivot(i, s, None);
                    x[b] = 0.0;
                }
            }
            // Recompute the basic values from the tableau to avoid drift.
            for i in 0..self.rows {
                let mut v = self.rhs(i);
                for &s in &superbasic {
                    let t = self.at(i, s);
                    if t != 0.0 {
                        v -= t * x[s];
                    }
                }
                x[self.basis[i]] = v;
            }
            let _ = iter;
        }
        (QpOutcome::MaxIter, x)
    }
}

#[derive(Debug, Clone, Copy)]
enum Block {
    Basic(usize, usize),
    Super(usize, usize),
}

impl Block {
    fn col(&self) -> usize {
        match self {
            Block::Basic(_, c) | Block::Super(_, c) => *c,
        }
    }
}

/// Quadratic part of the objective restricted to the columns it touches.
pub(crate) struct QuadForm {
    pub idx: Vec<usize>,
    pub h: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SimplexOutcome {
    Optimal { iterations: usize },
    Unbounded,
    MaxIter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum PhaseOne {
    Feasible,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum QpOutcome {
    Optimal { iterations: usize },
    Unbounded,
    MaxIter,
}
