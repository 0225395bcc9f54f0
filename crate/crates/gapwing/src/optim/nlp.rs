//! Equality-constrained nonlinear least squares via SQP with Gauss-Newton
//! Hessians.
//!
//! Cost terms each depend on a single decision variable, so the
//! Gauss-Newton Hessian is diagonal; any coupling between variables is
//! expressed through the (sparse) equality constraints. This shape maps
//! directly onto the banded QP fast path.

use super::qp::{solve_qp, Hessian, QpOptions, QpProblem, QpStatus};
use super::sparse::SparseMat;
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error)]
#[error("model evaluation failed{}", if msg.is_empty() { String::new() } else { format!(": {msg}") })]
pub struct EvalError {
    pub msg: String,
}

impl EvalError {
    pub fn new(msg: impl Into<String>) -> Self {
        EvalError { msg: msg.into() }
    }
}

/// One least-squares cost term ½·value² attached to a single variable.
#[derive(Debug, Clone, Copy)]
pub struct CostTerm {
    pub var: usize,
    pub value: f64,
    pub grad: f64,
}

pub trait NlpModel {
    fn num_vars(&self) -> usize;
    fn num_eq(&self) -> usize;

    /// Least-squares terms at `x`; total cost is ½ Σ value² plus the linear
    /// part.
    fn cost_terms(&self, x: &[f64], out: &mut Vec<CostTerm>) -> Result<(), EvalError>;

    /// Constant linear cost coefficients (e.g. elapsed-time terms).
    fn linear_cost(&self, _out: &mut [f64]) {}

    fn eq_constraints(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError>;

    fn eq_jacobian(&self, x: &[f64]) -> Result<SparseMat, EvalError>;

    /// Fill lower/upper variable bounds (pre-filled with ±inf).
    fn bounds(&self, _lb: &mut [f64], _ub: &mut [f64]) {}

    fn initial_guess(&self, x: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqpStatus {
    Converged,
    MaxIterations,
    LineSearchFailed,
    QpFailed,
    EvalFailed,
}

#[derive(Debug, Clone)]
pub struct SqpOptions {
    pub max_iter: usize,
    pub feas_tol: f64,
    pub step_tol: f64,
    pub initial_damping: f64,
    /// Floor on the Gauss-Newton diagonal. Variables without cost terms
    /// otherwise carry only the adaptive damping, which lets the subproblem
    /// wander along cost-flat directions.
    pub min_curvature: f64,
    /// Accept a feasible iterate once the cost improves by less than this
    /// relative amount over a trailing window (0 disables the stall exit).
    pub stall_tol: f64,
    pub qp: QpOptions,
}

impl Default for SqpOptions {
    fn default() -> Self {
        SqpOptions {
            max_iter: 120,
            feas_tol: 1e-9,
            step_tol: 1e-8,
            initial_damping: 1e-6,
            min_curvature: 0.0,
            stall_tol: 0.0,
            qp: QpOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SqpSolution {
    pub x: Vec<f64>,
    /// equality multipliers from the last QP
    pub y: Vec<f64>,
    pub status: SqpStatus,
    pub iterations: usize,
    pub cost: f64,
    pub constraint_inf: f64,
    /// (before, after) merit values of each accepted step, both measured
    /// with that step's penalty parameter
    pub merit_history: Vec<[f64; 2]>,
}

struct Eval {
    cost: f64,
    c_inf: f64,
    c: Vec<f64>,
    terms: Vec<CostTerm>,
}

fn evaluate(model: &dyn NlpModel, x: &[f64], lin: &[f64]) -> Result<Eval, EvalError> {
    let mut terms = Vec::new();
    model.cost_terms(x, &mut terms)?;
    let mut c = vec![0.0; model.num_eq()];
    model.eq_constraints(x, &mut c)?;
    let mut cost = 0.0;
    for t in &terms {
        cost += 0.5 * t.value * t.value;
    }
    for (xi, li) in x.iter().zip(lin) {
        cost += xi * li;
    }
    if !cost.is_finite() || c.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::new("non-finite cost or constraint"));
    }
    let c_inf = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(Eval { cost, c_inf, c, terms })
}

pub fn solve_nlp(model: &dyn NlpModel, opts: &SqpOptions) -> SqpSolution {
    let n = model.num_vars();
    let m = model.num_eq();

    let mut lb = vec![f64::NEG_INFINITY; n];
    let mut ub = vec![f64::INFINITY; n];
    model.bounds(&mut lb, &mut ub);
    let mut lin = vec![0.0; n];
    model.linear_cost(&mut lin);

    let mut x = vec![0.0; n];
    model.initial_guess(&mut x);
    for i in 0..n {
        x[i] = x[i].clamp(lb[i], ub[i]);
    }

    let mut ev = match evaluate(model, &x, &lin) {
        Ok(e) => e,
        Err(_) => {
            return SqpSolution {
                x,
                y: vec![0.0; m],
                status: SqpStatus::EvalFailed,
                iterations: 0,
                cost: f64::NAN,
                constraint_inf: f64::NAN,
                merit_history: vec![],
            }
        }
    };

    let mut damping = opts.initial_damping;
    let mut nu = 1.0f64; // l1 merit penalty
    let mut y = vec![0.0; m];
    let mut merit_history: Vec<[f64; 2]> = Vec::new();
    // trailing (cost, |c|_1) pairs for the non-monotone acceptance window
    let mut recent: VecDeque<(f64, f64)> = VecDeque::new();
    recent.push_back((ev.cost, l1(&ev.c)));
    // lowest-cost feasible iterate seen so far, and accepted steps since it
    // last improved meaningfully (drives the stall exit)
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    let mut since_best = 0usize;
    let mut status = SqpStatus::MaxIterations;
    let mut iterations = 0;

    for iter in 0..opts.max_iter {
        iterations = iter + 1;

        let jac = match model.eq_jacobian(&x) {
            Ok(j) => j,
            Err(_) => {
                status = SqpStatus::EvalFailed;
                break;
            }
        };

        // Gauss-Newton diagonal and gradient
        let mut h = vec![damping.max(opts.min_curvature); n];
        let mut grad = lin.clone();
        for t in &ev.terms {
            h[t.var] += t.grad * t.grad;
            grad[t.var] += t.value * t.grad;
        }

        // step bounds shifted to the current iterate
        let dlb: Vec<f64> = (0..n).map(|i| lb[i] - x[i]).collect();
        let dub: Vec<f64> = (0..n).map(|i| ub[i] - x[i]).collect();
        let neg_c: Vec<f64> = ev.c.iter().map(|v| -v).collect();
        let qp = QpProblem {
            hessian: Hessian::Diag(&h),
            g: &grad,
            a: &jac,
            b: &neg_c,
            lb: &dlb,
            ub: &dub,
        };
        let sol = solve_qp(&qp, &opts.qp);
        if sol.status == QpStatus::Infeasible {
            // inconsistent linearization: damp and retry from the same point
            damping *= 10.0;
            if damping > 1e10 {
                status = SqpStatus::QpFailed;
                break;
            }
            continue;
        }
        let d = sol.x;
        y = sol.y.clone();

        let step_inf = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if std::env::var_os("GAPWING_SQP_TRACE").is_some() {
            let (ymax_i, ymax) =
                y.iter().enumerate().fold((0, 0.0f64), |a, (i, v)| if v.abs() > a.1 { (i, v.abs()) } else { a });
            let (cmax_i, cmax) =
                ev.c.iter().enumerate().fold((0, 0.0f64), |a, (i, v)| if v.abs() > a.1 { (i, v.abs()) } else { a });
            let (dmax_i, _) =
                d.iter().enumerate().fold((0, 0.0f64), |a, (i, v)| if v.abs() > a.1 { (i, v.abs()) } else { a });
            eprintln!(
                "sqp iter {iter}: qp={:?}/{} step={step_inf:.3e}@{dmax_i} c={:.3e}@{cmax_i} cost={:.6e} damp={damping:.1e} nu={nu:.1e} ymax={ymax:.1e}@{ymax_i} cm={cmax:.1e}",
                sol.status, sol.iterations, ev.c_inf, ev.cost
            );
        }
        let x_inf = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if step_inf < opts.step_tol * (1.0 + x_inf) && ev.c_inf < opts.feas_tol {
            status = SqpStatus::Converged;
            break;
        }

        // merit parameter tracks the multipliers; allow slow decay so one
        // garbage multiplier estimate cannot freeze the merit forever, and
        // ignore multipliers from subproblems that never converged
        if sol.status == QpStatus::Converged {
            let y_inf = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let nu_target = 1.5 * y_inf + 1e-3;
            nu = if nu_target > nu { nu_target } else { nu_target.max(0.5 * nu) };
        }
        let merit0 = ev.cost + nu * l1(&ev.c);
        let descent: f64 = grad.iter().zip(&d).map(|(g, di)| g * di).sum::<f64>() - nu * l1(&ev.c);
        // non-monotone reference (Grippo): compare against the worst merit in
        // the recent window so curvature in the constraints cannot force the
        // line search into tiny steps on every iteration
        let merit_ref = recent.iter().map(|(c, l)| c + nu * l).fold(merit0, f64::max);

        let mut alpha = 1.0f64;
        let mut accepted = None;
        while alpha > 1e-14 {
            let xt: Vec<f64> = (0..n).map(|i| (x[i] + alpha * d[i]).clamp(lb[i], ub[i])).collect();
            if let Ok(et) = evaluate(model, &xt, &lin) {
                let merit_t = et.cost + nu * l1(&et.c);
                if merit_t <= merit_ref + 1e-4 * alpha * descent.min(0.0) {
                    accepted = Some((xt, et, merit_t));
                    break;
                }
            }
            alpha *= 0.5;
        }

        if std::env::var_os("GAPWING_SQP_TRACE").is_some() {
            eprintln!("    accepted alpha={:.3e}", if accepted.is_some() { alpha } else { f64::NAN });
        }
        match accepted {
            Some((xt, et, merit_t)) => {
                x = xt;
                ev = et;
                merit_history.push([merit0, merit_t]);
                recent.push_back((ev.cost, l1(&ev.c)));
                if recent.len() > 5 {
                    recent.pop_front();
                }
                // Levenberg-style adaptation: trust well-accepted steps,
                // shrink the model when the line search had to cut deeply
                if alpha >= 0.5 {
                    damping = (damping * 0.4).max(1e-9);
                } else if alpha < 0.25 {
                    damping = (damping * 4.0).min(1e9);
                }
                // feasible iterates feed the stall exit: once a full window
                // of accepted steps fails to buy a meaningful cost reduction,
                // the subproblem model has nothing more to give
                if ev.c_inf < opts.feas_tol {
                    match &best {
                        Some((bc, _, _)) if ev.cost >= bc - opts.stall_tol * (1.0 + bc.abs()) => {
                            if ev.cost < *bc {
                                best = Some((ev.cost, ev.c_inf, x.clone()));
                            }
                            since_best += 1;
                        }
                        _ => {
                            best = Some((ev.cost, ev.c_inf, x.clone()));
                            since_best = 0;
                        }
                    }
                }
                if opts.stall_tol > 0.0 && since_best >= 12 {
                    status = SqpStatus::Converged;
                    break;
                }
            }
            None => {
                damping *= 10.0;
                if damping > 1e10 {
                    status = SqpStatus::LineSearchFailed;
                    break;
                }
            }
        }
    }

    let mut cost = ev.cost;
    let mut constraint_inf = ev.c_inf;
    if let Some((bc, bci, bx)) = best {
        // the current iterate may have wandered above the best feasible one
        // under the non-monotone rule; return the best
        if ev.c_inf >= opts.feas_tol || bc < ev.cost {
            x = bx;
            cost = bc;
            constraint_inf = bci;
        }
    }
    if std::env::var_os("GAPWING_SQP_TRACE").is_some() {
        eprintln!("sqp exit at iter {iterations}: {status:?} cost={cost:.6e} c={constraint_inf:.3e}");
    }

    SqpSolution {
        x,
        y,
        status,
        iterations,
        cost,
        constraint_inf,
        merit_history,
    }
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// First-order optimality report computed from scratch (no solver state).
#[derive(Debug, Clone, Copy)]
pub struct KktReport {
    /// max |∇f + Jᵀy| over variables strictly inside their bounds, and
    /// sign-violating components at active bounds
    pub stationarity: f64,
    /// max |c(x)|
    pub feasibility: f64,
    /// max bound violation
    pub bound_violation: f64,
}

impl KktReport {
    pub fn satisfied(&self, tol: f64) -> bool {
        self.stationarity <= tol && self.feasibility <= tol && self.bound_violation <= tol
    }
}

/// Re-derives the KKT residuals of `(x, y)` for the model, independently of
/// how they were obtained.
pub fn check_kkt(model: &dyn NlpModel, x: &[f64], y: &[f64]) -> Result<KktReport, EvalError> {
    let n = model.num_vars();
    let mut lb = vec![f64::NEG_INFINITY; n];
    let mut ub = vec![f64::INFINITY; n];
    model.bounds(&mut lb, &mut ub);
    let mut lin = vec![0.0; n];
    model.linear_cost(&mut lin);

    let mut terms = Vec::new();
    model.cost_terms(x, &mut terms)?;
    let mut grad = lin;
    for t in &terms {
        grad[t.var] += t.value * t.grad;
    }
    let jac = model.eq_jacobian(x)?;
    jac.matvec_t_add(y, &mut grad);

    let mut c = vec![0.0; model.num_eq()];
    model.eq_constraints(x, &mut c)?;
    let feasibility = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));

    let mut stationarity = 0.0f64;
    let mut bound_violation = 0.0f64;
    for i in 0..n {
        let scale = 1.0 + x[i].abs();
        bound_violation = bound_violation.max(lb[i] - x[i]).max(x[i] - ub[i]);
        let at_lower = lb[i].is_finite() && x[i] - lb[i] <= 1e-7 * scale;
        let at_upper = ub[i].is_finite() && ub[i] - x[i] <= 1e-7 * scale;
        let s = grad[i];
        let viol = if at_lower && at_upper {
            0.0 // fixed variable: any multiplier works
        } else if at_lower {
            (-s).max(0.0) // need s >= 0 (lower-bound multiplier)
        } else if at_upper {
            s.max(0.0)
        } else {
            s.abs()
        };
        stationarity = stationarity.max(viol);
    }
    Ok(KktReport { stationarity, feasibility, bound_violation: bound_violation.max(0.0) })
}
