//! Convex QP solver: primal-dual interior point with Mehrotra
//! predictor-corrector.
//!
//! Problem form:
//!   min ½ xᵀHx + gᵀx   s.t.  A x = b,  lb ≤ x ≤ ub
//! with H positive semidefinite (diagonal in the fast path) and any bound
//! allowed to be infinite.
//!
//! Two linear-algebra paths solve the Newton systems:
//! * diagonal H: eliminate the primal block, factor the Schur complement
//!   A D⁻¹Aᵀ with a banded Cholesky; the few columns with wide row span
//!   (e.g. free-duration variables that touch every collocation row of a
//!   phase) are split off and folded back via the Woodbury identity;
//! * dense fallback: LU of the full KKT matrix, used for small or
//!   unstructured problems.

use super::sparse::{Banded, Columns, SparseMat};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Converged,
    MaxIterations,
    Infeasible,
}

#[derive(Debug, Clone, Copy)]
pub enum Hessian<'a> {
    Diag(&'a [f64]),
    Dense(&'a DMatrix<f64>),
}

pub struct QpProblem<'a> {
    pub hessian: Hessian<'a>,
    pub g: &'a [f64],
    pub a: &'a SparseMat,
    pub b: &'a [f64],
    pub lb: &'a [f64],
    pub ub: &'a [f64],
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// equality multipliers
    pub y: Vec<f64>,
    /// lower/upper bound multipliers (zero where the bound is infinite)
    pub z_lower: Vec<f64>,
    pub z_upper: Vec<f64>,
    pub status: QpStatus,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct QpOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Fallback tolerance: once the barrier is exhausted, residuals at this
    /// level still count as converged. Ill-conditioned problems can hit a
    /// linear-algebra floor well above `tol`.
    pub tol_loose: f64,
    pub initial_x: Option<Vec<f64>>,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions { max_iter: 60, tol: 1e-9, tol_loose: 1e-4, initial_x: None }
    }
}

/// How far a column's constraint rows span; columns wider than this go
/// through the Woodbury low-rank update instead of widening the band.
const WIDE_COLUMN_SPAN: usize = 120;
const MAX_WIDE_COLUMNS: usize = 12;
/// slacks only divide after flooring, so boundary-touching iterates stay finite
const SLACK_FLOOR: f64 = 1e-300;
const DENSE_SIZE_LIMIT: usize = 150;

pub fn solve_qp(p: &QpProblem, opts: &QpOptions) -> QpSolution {
    let n = p.g.len();
    let m = p.b.len();
    assert_eq!(p.a.nrows(), m);
    assert_eq!(p.a.ncols(), n);
    assert_eq!(p.lb.len(), n);
    assert_eq!(p.ub.len(), n);

    // exactly pinned variables (equal bounds) break the log barrier; they are
    // substituted out here and scattered back into the solution
    if (0..n).any(|i| p.ub[i] - p.lb[i] <= 0.0) {
        return solve_with_pins(p, opts);
    }
    solve_interior(p, opts)
}

fn solve_with_pins(p: &QpProblem, opts: &QpOptions) -> QpSolution {
    let n = p.g.len();
    let m = p.b.len();
    let pinned: Vec<bool> = (0..n).map(|i| p.ub[i] - p.lb[i] <= 0.0).collect();
    let free: Vec<usize> = (0..n).filter(|&i| !pinned[i]).collect();
    let mut remap = vec![usize::MAX; n];
    for (k, &i) in free.iter().enumerate() {
        remap[i] = k;
    }
    let nf = free.len();

    let mut g = Vec::with_capacity(nf);
    for &i in &free {
        let mut gi = p.g[i];
        if let Hessian::Dense(h) = &p.hessian {
            for j in 0..n {
                if pinned[j] {
                    gi += h[(i, j)] * p.lb[j];
                }
            }
        }
        g.push(gi);
    }
    let h_diag: Vec<f64> = match &p.hessian {
        Hessian::Diag(d) => free.iter().map(|&i| d[i]).collect(),
        Hessian::Dense(_) => vec![],
    };
    let h_dense;
    let hessian = match &p.hessian {
        Hessian::Diag(_) => Hessian::Diag(&h_diag),
        Hessian::Dense(h) => {
            let mut hd = DMatrix::zeros(nf, nf);
            for (r, &i) in free.iter().enumerate() {
                for (c, &j) in free.iter().enumerate() {
                    hd[(r, c)] = h[(i, j)];
                }
            }
            h_dense = hd;
            Hessian::Dense(&h_dense)
        }
    };
    let mut b = p.b.to_vec();
    let mut trips = Vec::new();
    for r in 0..m {
        let (cols, vals) = p.a.row(r);
        for (c, v) in cols.iter().zip(vals) {
            if pinned[*c] {
                b[r] -= v * p.lb[*c];
            } else {
                trips.push((r, remap[*c], *v));
            }
        }
    }
    let a = SparseMat::from_triplets(m, nf, &trips);
    let lb: Vec<f64> = free.iter().map(|&i| p.lb[i]).collect();
    let ub: Vec<f64> = free.iter().map(|&i| p.ub[i]).collect();
    let reduced = QpProblem { hessian, g: &g, a: &a, b: &b, lb: &lb, ub: &ub };
    let mut ropts = opts.clone();
    if let Some(x0) = &opts.initial_x {
        ropts.initial_x = Some(free.iter().map(|&i| x0[i]).collect());
    }
    let rsol = solve_interior(&reduced, &ropts);

    let mut x = vec![0.0; n];
    let mut zl = vec![0.0; n];
    let mut zu = vec![0.0; n];
    for i in 0..n {
        if pinned[i] {
            x[i] = p.lb[i];
        }
    }
    for (k, &i) in free.iter().enumerate() {
        x[i] = rsol.x[k];
        zl[i] = rsol.z_lower[k];
        zu[i] = rsol.z_upper[k];
    }
    // pinned multipliers absorb the leftover gradient
    let mut grad = vec![0.0; n];
    hess_mul(&p.hessian, &x, &mut grad);
    for i in 0..n {
        grad[i] += p.g[i];
    }
    p.a.matvec_t_add(&rsol.y, &mut grad);
    for i in 0..n {
        if pinned[i] {
            if grad[i] > 0.0 {
                zl[i] = grad[i];
            } else {
                zu[i] = -grad[i];
            }
        }
    }
    QpSolution {
        x,
        y: rsol.y,
        z_lower: zl,
        z_upper: zu,
        status: rsol.status,
        iterations: rsol.iterations,
    }
}

fn solve_interior(p: &QpProblem, opts: &QpOptions) -> QpSolution {
    let n = p.g.len();
    let m = p.b.len();

    let mut solver = match &p.hessian {
        Hessian::Diag(h) if n >= DENSE_SIZE_LIMIT => {
            assert_eq!(h.len(), n);
            match SchurSolver::new(p.a, m) {
                Some(s) => Newton::Schur(s),
                None => Newton::Dense(DenseSolver::new(n, m)),
            }
        }
        Hessian::Diag(h) => {
            assert_eq!(h.len(), n);
            Newton::Dense(DenseSolver::new(n, m))
        }
        Hessian::Dense(h) => {
            assert_eq!(h.nrows(), n);
            Newton::Dense(DenseSolver::new(n, m))
        }
    };

    // initial point: strictly inside the box, unit multipliers
    let mut x = vec![0.0; n];
    for i in 0..n {
        let guess = opts.initial_x.as_ref().map_or(0.0, |v| v[i]);
        x[i] = interior_clamp(guess, p.lb[i], p.ub[i]);
    }
    let mut y = vec![0.0; m];
    let mut zl = vec![0.0; n];
    let mut zu = vec![0.0; n];
    let mut n_pairs = 0usize;
    for i in 0..n {
        if p.lb[i].is_finite() {
            zl[i] = 1.0;
            n_pairs += 1;
        }
        if p.ub[i].is_finite() {
            zu[i] = 1.0;
            n_pairs += 1;
        }
    }

    let scale_b = 1.0 + p.b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let scale_g = 1.0 + p.g.iter().fold(0.0f64, |a, v| a.max(v.abs()));

    let mut rd = vec![0.0; n];
    let mut rp = vec![0.0; m];
    let mut iterations = 0;
    // best iterate fallback for non-converged exits
    let mut best: Option<(f64, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> = None;
    let (mut last_feas, mut last_mu) = (f64::INFINITY, f64::INFINITY);
    let mut prev_res = f64::INFINITY;
    let mut stalled = 0usize;

    for iter in 0..opts.max_iter {
        iterations = iter + 1;

        // residuals
        hess_mul(&p.hessian, &x, &mut rd);
        for i in 0..n {
            rd[i] += p.g[i] - zl[i] + zu[i];
        }
        p.a.matvec_t_add(&y, &mut rd);
        p.a.matvec(&x, &mut rp);
        for i in 0..m {
            rp[i] -= p.b[i];
        }
        let mut mu = 0.0;
        for i in 0..n {
            if p.lb[i].is_finite() {
                mu += (x[i] - p.lb[i]) * zl[i];
            }
            if p.ub[i].is_finite() {
                mu += (p.ub[i] - x[i]) * zu[i];
            }
        }
        if n_pairs > 0 {
            mu /= n_pairs as f64;
        }

        let feas = inf_norm(&rp) / scale_b;
        let stat = inf_norm(&rd) / scale_g;
        (last_feas, last_mu) = (feas, mu);
        if std::env::var_os("GAPWING_QP_TRACE").is_some() {
            eprintln!("  qp iter {iter}: feas={feas:.3e} stat={stat:.3e} mu={mu:.3e}");
        }
        if feas < opts.tol && stat < opts.tol && mu < opts.tol.max(1e-12) {
            return QpSolution { x, y, z_lower: zl, z_upper: zu, status: QpStatus::Converged, iterations };
        }
        let res = feas.max(stat);
        stalled = if res > 0.5 * prev_res { stalled + 1 } else { 0 };
        prev_res = res;
        if stalled >= 3 && mu < 1e-8 && res < opts.tol_loose {
            return QpSolution { x, y, z_lower: zl, z_upper: zu, status: QpStatus::Converged, iterations };
        }
        let score = feas.max(stat).max(mu.abs());
        if score.is_finite()
            && x.iter().all(|v| v.is_finite())
            && best.as_ref().map_or(true, |b| score < b.0)
        {
            best = Some((score, x.clone(), y.clone(), zl.clone(), zu.clone()));
        }
        if !score.is_finite() || x.iter().any(|v| !v.is_finite() || v.abs() > 1e14) {
            let blew_up = x.iter().all(|v| v.is_finite()) && x.iter().any(|v| v.abs() > 1e14);
            let status = if blew_up { QpStatus::Infeasible } else { QpStatus::MaxIterations };
            let (x, y, zl, zu) = match best {
                Some((_, bx, by, bzl, bzu)) => (bx, by, bzl, bzu),
                None => (x, y, zl, zu),
            };
            return QpSolution { x, y, z_lower: zl, z_upper: zu, status, iterations };
        }
        if n_pairs > 0 && mu < 1e-13 && feas >= opts.tol {
            // complementarity is at floating-point limits while primal
            // feasibility stalled; further steps only corrupt the iterate
            break;
        }

        // barrier-condensed diagonal and factorization for this iterate
        let mut d = vec![0.0; n];
        if let Hessian::Diag(h) = &p.hessian {
            d.copy_from_slice(h);
        }
        for i in 0..n {
            if p.lb[i].is_finite() {
                d[i] += zl[i] / (x[i] - p.lb[i]).max(SLACK_FLOOR);
            }
            if p.ub[i].is_finite() {
                d[i] += zu[i] / (p.ub[i] - x[i]).max(SLACK_FLOOR);
            }
            d[i] += 1e-12;
        }
        if !solver.factor(p, &d) {
            // singular even with regularization bumps
            let status = if n_pairs > 0 && mu < 1e-8 && feas > 1e-2 {
                QpStatus::Infeasible
            } else {
                QpStatus::MaxIterations
            };
            return QpSolution { x, y, z_lower: zl, z_upper: zu, status, iterations };
        }

        // predictor (affine scaling) step
        // condensed rhs: rhat = r_d + r_cl/s_l - r_cu/s_u with r_c = S Z e
        let mut rhat = vec![0.0; n];
        for i in 0..n {
            rhat[i] = rd[i];
            if p.lb[i].is_finite() {
                rhat[i] += zl[i];
            }
            if p.ub[i].is_finite() {
                rhat[i] -= zu[i];
            }
        }
        let (dx_a, dy_a) = solve_refined(&solver, p, &d, &rhat, &rp);
        let (dzl_a, dzu_a) = recover_dz(p, &x, &zl, &zu, &dx_a, None, 0.0);
        let (ap_a, ad_a) = step_lengths(p, &x, &zl, &zu, &dx_a, &dzl_a, &dzu_a, 1.0);

        let mut mu_aff = 0.0;
        for i in 0..n {
            if p.lb[i].is_finite() {
                mu_aff += (x[i] - p.lb[i] + ap_a * dx_a[i]) * (zl[i] + ad_a * dzl_a[i]);
            }
            if p.ub[i].is_finite() {
                mu_aff += (p.ub[i] - x[i] - ap_a * dx_a[i]) * (zu[i] + ad_a * dzu_a[i]);
            }
        }
        if n_pairs > 0 {
            mu_aff /= n_pairs as f64;
        }
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3).clamp(0.0, 1.0) } else { 0.0 };

        // corrector step
        let mut rhat_c = vec![0.0; n];
        for i in 0..n {
            rhat_c[i] = rd[i];
            if p.lb[i].is_finite() {
                let s = (x[i] - p.lb[i]).max(SLACK_FLOOR);
                rhat_c[i] += (s * zl[i] + dx_a[i] * dzl_a[i] - sigma * mu) / s;
            }
            if p.ub[i].is_finite() {
                let s = (p.ub[i] - x[i]).max(SLACK_FLOOR);
                rhat_c[i] -= (s * zu[i] - dx_a[i] * dzu_a[i] - sigma * mu) / s;
            }
        }
        let (dx, dy) = solve_refined(&solver, p, &d, &rhat_c, &rp);
        let (dzl, dzu) = recover_dz(p, &x, &zl, &zu, &dx, Some((&dx_a, &dzl_a, &dzu_a)), sigma * mu);
        let (ap, ad) = step_lengths(p, &x, &zl, &zu, &dx, &dzl, &dzu, 0.9995);

        if ap < 1e-12 && ad < 1e-12 {
            // wedged against the boundary; fall back to the best iterate
            break;
        }

        for i in 0..n {
            x[i] += ap * dx[i];
        }
        for i in 0..m {
            y[i] += ad * dy[i];
        }
        for i in 0..n {
            zl[i] = (zl[i] + ad * dzl[i]).max(0.0);
            zu[i] = (zu[i] + ad * dzu[i]).max(0.0);
        }
        let _ = (dy_a, dzl_a, dzu_a);
    }

    // Classify the non-converged outcome, reporting the best iterate seen.
    // Infeasibility needs positive evidence: the barrier is exhausted while
    // the equalities stay far from satisfied. A merely hard problem returns
    // MaxIterations and a usable approximate solution.
    let (x, y, zl, zu) = match best {
        Some((_, bx, by, bzl, bzu)) => (bx, by, bzl, bzu),
        None => (x, y, zl, zu),
    };
    // With bounds, infeasibility shows as an exhausted barrier (mu -> 0)
    // with the equalities still violated. Without bounds the KKT system is
    // linear, so any residual surviving repeated Newton steps is structural.
    let status = if last_feas > 1e-2 && (n_pairs == 0 || last_mu < 1e-8) {
        QpStatus::Infeasible
    } else {
        QpStatus::MaxIterations
    };
    QpSolution { x, y, z_lower: zl, z_upper: zu, status, iterations }
}

/// Newton solve with one iterative-refinement pass. The Schur route loses
/// digits when the condensed diagonal spans many orders of magnitude (free
/// variables divide by the bare damping); re-solving the residual through
/// the same factorization restores them.
fn solve_refined(
    solver: &Newton,
    p: &QpProblem,
    d: &[f64],
    rhat: &[f64],
    rp: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (mut dx, mut dy) = solver.solve(p, d, rhat, rp);
    let n = dx.len();
    let m = dy.len();
    let scale = 1.0 + inf_norm(rhat).max(inf_norm(rp));
    for _ in 0..3 {
        let mut e1 = vec![0.0; n];
        if let Hessian::Dense(h) = &p.hessian {
            // the dense path keeps the Hessian separate from the barrier diagonal
            let r = *h * DVector::from_column_slice(&dx);
            e1.copy_from_slice(r.as_slice());
        }
        for i in 0..n {
            e1[i] += d[i] * dx[i] + rhat[i];
        }
        p.a.matvec_t_add(&dy, &mut e1);
        let mut e2 = vec![0.0; m];
        p.a.matvec(&dx, &mut e2);
        for i in 0..m {
            e2[i] += rp[i];
        }
        if inf_norm(&e1).max(inf_norm(&e2)) < 1e-12 * scale {
            break;
        }
        let (cx, cy) = solver.solve(p, d, &e1, &e2);
        for i in 0..n {
            dx[i] += cx[i];
        }
        for i in 0..m {
            dy[i] += cy[i];
        }
    }
    (dx, dy)
}

fn interior_clamp(v: f64, lb: f64, ub: f64) -> f64 {
    match (lb.is_finite(), ub.is_finite()) {
        (true, true) => {
            let margin = ((ub - lb) * 0.25).min(1.0).max(1e-8);
            v.clamp(lb + margin, ub - margin)
        }
        (true, false) => v.max(lb + 1.0),
        (false, true) => v.min(ub - 1.0),
        (false, false) => v,
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    // NaN anywhere means the iterate is garbage; report it as such instead
    // of letting f64::max silently drop it
    v.iter().fold(0.0f64, |a, x| if x.is_nan() { f64::INFINITY } else { a.max(x.abs()) })
}

fn hess_mul(h: &Hessian, x: &[f64], out: &mut [f64]) {
    match h {
        Hessian::Diag(d) => {
            for i in 0..x.len() {
                out[i] = d[i] * x[i];
            }
        }
        Hessian::Dense(m) => {
            let r = *m * DVector::from_column_slice(x);
            out.copy_from_slice(r.as_slice());
        }
    }
}

/// dz from the linearized complementarity rows, with optional Mehrotra
/// correction terms.
fn recover_dz(
    p: &QpProblem,
    x: &[f64],
    zl: &[f64],
    zu: &[f64],
    dx: &[f64],
    corr: Option<(&[f64], &[f64], &[f64])>,
    sigma_mu: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let mut dzl = vec![0.0; n];
    let mut dzu = vec![0.0; n];
    for i in 0..n {
        if p.lb[i].is_finite() {
            let s = (x[i] - p.lb[i]).max(SLACK_FLOOR);
            let mut rc = s * zl[i] - sigma_mu;
            if let Some((dxa, dzla, _)) = corr {
                rc += dxa[i] * dzla[i];
            }
            // collapsed slacks can otherwise launch the dual to infinity
            dzl[i] = (-(rc + zl[i] * dx[i]) / s).clamp(-1e12, 1e12);
        }
        if p.ub[i].is_finite() {
            let s = (p.ub[i] - x[i]).max(SLACK_FLOOR);
            let mut rc = s * zu[i] - sigma_mu;
            if let Some((dxa, _, dzua)) = corr {
                rc -= dxa[i] * dzua[i];
            }
            dzu[i] = (-(rc - zu[i] * dx[i]) / s).clamp(-1e12, 1e12);
        }
    }
    (dzl, dzu)
}

/// Largest primal/dual steps keeping slacks and multipliers positive.
#[allow(clippy::too_many_arguments)]
fn step_lengths(
    p: &QpProblem,
    x: &[f64],
    zl: &[f64],
    zu: &[f64],
    dx: &[f64],
    dzl: &[f64],
    dzu: &[f64],
    damp: f64,
) -> (f64, f64) {
    let mut ap = 1.0f64;
    let mut ad = 1.0f64;
    for i in 0..x.len() {
        if p.lb[i].is_finite() {
            let s = x[i] - p.lb[i];
            if dx[i] < 0.0 {
                ap = ap.min(-damp * s / dx[i]);
            }
            if dzl[i] < 0.0 {
                ad = ad.min(-damp * zl[i] / dzl[i]);
            }
        }
        if p.ub[i].is_finite() {
            let s = p.ub[i] - x[i];
            if dx[i] > 0.0 {
                ap = ap.min(damp * s / dx[i]);
            }
            if dzu[i] < 0.0 {
                ad = ad.min(-damp * zu[i] / dzu[i]);
            }
        }
    }
    (ap.min(1.0), ad.min(1.0))
}

enum Newton {
    Schur(SchurSolver),
    Dense(DenseSolver),
}

impl Newton {
    fn factor(&mut self, p: &QpProblem, d: &[f64]) -> bool {
        match self {
            Newton::Schur(s) => s.factor(d),
            Newton::Dense(s) => s.factor(p, d),
        }
    }

    /// Solve [D Aᵀ; A 0][dx; dy] = [-rhat; -rp].
    fn solve(&self, p: &QpProblem, d: &[f64], rhat: &[f64], rp: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match self {
            Newton::Schur(s) => s.solve(p, d, rhat, rp),
            Newton::Dense(s) => s.solve(p, rhat, rp),
        }
    }
}

/// Banded Schur-complement solver for diagonal condensed systems.
struct SchurSolver {
    csc: Columns,
    wide: Vec<usize>,
    is_wide: Vec<bool>,
    m: usize,
    band: Banded,
    /// Woodbury factor columns (A_wide scaled by D^{-1/2}), refreshed per factorization
    u: DMatrix<f64>,
    w: DMatrix<f64>,
    cap: DMatrix<f64>,
    /// Equilibration: the factored system is R S R with R = diag(scal)
    scal: Vec<f64>,
}

impl SchurSolver {
    fn new(a: &SparseMat, m: usize) -> Option<Self> {
        let csc = a.to_columns();
        let n = a.ncols();
        let mut wide = Vec::new();
        let mut is_wide = vec![false; n];
        let mut bw = 0usize;
        for c in 0..n {
            let (rows, _) = csc.col(c);
            if rows.is_empty() {
                continue;
            }
            let span = rows[rows.len() - 1] - rows[0];
            if span > WIDE_COLUMN_SPAN {
                wide.push(c);
                is_wide[c] = true;
            } else {
                bw = bw.max(span);
            }
        }
        if wide.len() > MAX_WIDE_COLUMNS || bw + 1 >= m.max(1) && m > DENSE_SIZE_LIMIT {
            return None;
        }
        let p = wide.len();
        Some(SchurSolver {
            csc,
            wide,
            is_wide,
            m,
            band: Banded::zeros(m, bw.min(m.saturating_sub(1))),
            u: DMatrix::zeros(m, p),
            w: DMatrix::zeros(m, p),
            cap: DMatrix::zeros(p, p),
            scal: vec![1.0; m],
        })
    }

    fn factor(&mut self, d: &[f64]) -> bool {
        let n = d.len();
        for bump in 0..4 {
            let reg = 1e-11 * 10f64.powi(3 * bump);
            self.band.fill_zero();
            for c in 0..n {
                if self.is_wide[c] {
                    continue;
                }
                let (rows, vals) = self.csc.col(c);
                let inv = 1.0 / d[c];
                for (ri, &r) in rows.iter().enumerate() {
                    let vr = vals[ri] * inv;
                    for (rj, &r2) in rows.iter().enumerate().skip(ri) {
                        self.band.add(r2, r, vr * vals[rj]);
                        let _ = rj;
                    }
                }
            }
            // Equilibrate to unit diagonal before factoring; D can span many
            // orders of magnitude near convergence and the raw Schur
            // complement inherits that spread.
            let mut diag = vec![0.0; self.m];
            for i in 0..self.m {
                diag[i] = self.band.get(i, i);
            }
            for &c in &self.wide {
                let (rows, vals) = self.csc.col(c);
                let inv = 1.0 / d[c];
                for (&r, &v) in rows.iter().zip(vals) {
                    diag[r] += v * v * inv;
                }
            }
            for i in 0..self.m {
                self.scal[i] = if diag[i].is_finite() && diag[i] > 0.0 {
                    1.0 / diag[i].sqrt()
                } else {
                    1.0
                };
            }
            self.band.scale_sym(&self.scal);
            for i in 0..self.m {
                self.band.add(i, i, reg);
            }
            if self.band.cholesky_in_place().is_err() {
                continue;
            }
            // Woodbury pieces: U = R A_wide D^{-1/2}, W = S_b^{-1} U,
            // cap = I + Uᵀ W  (all in the equilibrated system)
            let p = self.wide.len();
            for (k, &c) in self.wide.iter().enumerate() {
                let (rows, vals) = self.csc.col(c);
                let scale = 1.0 / d[c].sqrt();
                let mut col = vec![0.0; self.m];
                for (&r, &v) in rows.iter().zip(vals) {
                    col[r] = v * scale * self.scal[r];
                }
                self.u.set_column(k, &DVector::from_column_slice(&col));
                let mut solved = vec![0.0; self.m];
                self.band.solve_cholesky(&col, &mut solved);
                self.w.set_column(k, &DVector::from_column_slice(&solved));
            }
            let mut cap = DMatrix::identity(p, p);
            cap += self.u.transpose() * &self.w;
            match cap.clone().lu().try_inverse() {
                Some(inv) => {
                    self.cap = inv;
                    return true;
                }
                None => continue,
            }
        }
        false
    }

    fn solve(&self, p: &QpProblem, d: &[f64], rhat: &[f64], rp: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = d.len();
        // rhs_y = rp + A D^{-1} (-rhat)  (so that A dx = -rp)
        let mut dinv_rhat = vec![0.0; n];
        for i in 0..n {
            dinv_rhat[i] = -rhat[i] / d[i];
        }
        let mut rhs_y = vec![0.0; self.m];
        p.a.matvec(&dinv_rhat, &mut rhs_y);
        for i in 0..self.m {
            rhs_y[i] = (rhs_y[i] + rp[i]) * self.scal[i];
        }
        // S dy = rhs_y via Woodbury around the banded factor, in the
        // equilibrated system (dy = R dy')
        let mut s0 = vec![0.0; self.m];
        self.band.solve_cholesky(&rhs_y, &mut s0);
        let mut dy = if self.wide.is_empty() {
            s0
        } else {
            let s0v = DVector::from_column_slice(&s0);
            let t = &self.cap * (self.u.transpose() * &s0v);
            let corr = &self.w * t;
            (s0v - corr).as_slice().to_vec()
        };
        for i in 0..self.m {
            dy[i] *= self.scal[i];
        }
        // dx = D^{-1}(-rhat - Aᵀ dy)
        let mut at_dy = vec![0.0; n];
        p.a.matvec_t_add(&dy, &mut at_dy);
        let mut dx = vec![0.0; n];
        for i in 0..n {
            dx[i] = (-rhat[i] - at_dy[i]) / d[i];
        }
        (dx, dy)
    }
}

/// Dense KKT LU fallback.
struct DenseSolver {
    n: usize,
    m: usize,
    lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl DenseSolver {
    fn new(n: usize, m: usize) -> Self {
        DenseSolver { n, m, lu: None }
    }

    fn factor(&mut self, p: &QpProblem, d: &[f64]) -> bool {
        let (n, m) = (self.n, self.m);
        let mut kkt = DMatrix::<f64>::zeros(n + m, n + m);
        match &p.hessian {
            Hessian::Diag(_) => {
                for i in 0..n {
                    kkt[(i, i)] = d[i];
                }
            }
            Hessian::Dense(h) => {
                kkt.view_mut((0, 0), (n, n)).copy_from(*h);
                for i in 0..n {
                    // d already contains the Hessian diagonal only in the
                    // diag path; here add the barrier part explicitly
                    kkt[(i, i)] += d[i];
                }
            }
        }
        for r in 0..m {
            let (cols, vals) = p.a.row(r);
            for (c, v) in cols.iter().zip(vals) {
                kkt[(n + r, *c)] = *v;
                kkt[(*c, n + r)] = *v;
            }
            kkt[(n + r, n + r)] = -1e-11;
        }
        let lu = kkt.lu();
        if lu.determinant() == 0.0 {
            return false;
        }
        self.lu = Some(lu);
        true
    }

    fn solve(&self, _p: &QpProblem, rhat: &[f64], rp: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (n, m) = (self.n, self.m);
        let mut rhs = DVector::zeros(n + m);
        for i in 0..n {
            rhs[i] = -rhat[i];
        }
        for i in 0..m {
            rhs[n + i] = -rp[i];
        }
        let sol = self.lu.as_ref().unwrap().solve(&rhs).unwrap();
        (sol.as_slice()[..n].to_vec(), sol.as_slice()[n..].to_vec())
    }
}
