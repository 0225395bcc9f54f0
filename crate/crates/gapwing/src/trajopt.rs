//! Multi-phase trajectory optimization for gap traversal references.
//!
//! A reference flight is transcribed with separated Hermite-Simpson
//! collocation over five segments whose x-extents are pinned while their
//! durations stay free: approach, the two halves of the gap threshold
//! (split at the gap plane so the crossing altitude can be pinned exactly),
//! recovery, and a steady closing segment flown at constant input. Wing
//! sweep is boxed near fully retracted inside the threshold, the recovery
//! segment must end on a level equilibrium, and the scenario objective
//! picks which quantity the reference trades away while crossing.
//!
//! The running-cost quadrature weights are frozen at the nominal segment
//! durations (segment length over approach speed). That keeps every cost
//! term attached to a single variable, which is what the Gauss-Newton
//! solver expects; elapsed-time objectives enter exactly through the
//! linear cost instead.

use std::io::{self, BufRead, Write};

use crate::dynamics::{
    self, idx, linearize, state_derivative, AMat, BMat, DynError, InputVec, LinearizeMode,
    StateVec, Trim, NU, NX,
};
use crate::optim::{solve_nlp, CostTerm, EvalError, NlpModel, SparseMat, SqpOptions, SqpSolution, SqpStatus};
use crate::params::{DroneParams, GapScenario, Objective};
use thiserror::Error;

/// Which leg of the reference a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Approach,
    Gap,
    Recovery,
    Steady,
}

impl Phase {
    pub fn number(self) -> u8 {
        match self {
            Phase::Approach => 1,
            Phase::Gap => 2,
            Phase::Recovery => 3,
            Phase::Steady => 4,
        }
    }

    pub fn from_number(n: u8) -> Option<Phase> {
        match n {
            1 => Some(Phase::Approach),
            2 => Some(Phase::Gap),
            3 => Some(Phase::Recovery),
            4 => Some(Phase::Steady),
            _ => None,
        }
    }
}

/// segment index -> phase tag (the threshold is split into two segments)
const SEG_PHASE: [Phase; 5] = [Phase::Approach, Phase::Gap, Phase::Gap, Phase::Recovery, Phase::Steady];

#[derive(Debug, Error)]
pub enum TrajError {
    #[error("no usable trim to seed the transcription: {0}")]
    Trim(#[from] DynError),
    #[error("transcription solve failed: {status:?} (constraint residual {constraint_inf:.3e})")]
    SolverFailed { status: SqpStatus, constraint_inf: f64 },
    #[error("integration re-check defect {max_defect:.3e} exceeds {tol:.3e} after {refinements} mesh refinement(s)")]
    DefectTooLarge { max_defect: f64, tol: f64, refinements: usize },
    #[error("reference evaluation failed: {0}")]
    Eval(String),
    #[error("reference csv: {0}")]
    Csv(String),
}

/// Transcription and solve settings.
#[derive(Debug, Clone)]
pub struct TrajOptions {
    /// collocation intervals per segment: approach, threshold front half,
    /// threshold back half, recovery, steady
    pub mesh: [usize; 5],
    /// scaled infinity-norm tolerance of the independent integration re-check
    pub defect_tol: f64,
    /// mesh doublings allowed when the re-check fails
    pub max_refinements: usize,
    /// optional altitude corridor half-width boxed at every threshold node
    /// (the crossing altitude itself is always pinned at the gap plane)
    pub gap_corridor: Option<f64>,
    pub sqp: SqpOptions,
}

impl Default for TrajOptions {
    fn default() -> Self {
        let mut sqp = SqpOptions::default();
        sqp.max_iter = 2000;
        sqp.initial_damping = 1e-4;
        sqp.feas_tol = 1e-6;
        sqp.min_curvature = 1e-4;
        sqp.stall_tol = 3e-5;
        TrajOptions {
            mesh: [10, 4, 4, 8, 4],
            defect_tol: 1e-4,
            max_refinements: 2,
            gap_corridor: None,
            sqp,
        }
    }
}

/// Per-component scales dividing dynamics-derived rows so one tolerance is
/// meaningful across states (rotor speed lives in the thousands, sweep rate
/// in the tens, everything else near unity).
pub const STATE_SCALE: [f64; NX] = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 100.0, 1.0, 10.0, 1.0];

/// derivative components pulled to zero where the recovery segment ends
/// (everything but the x-advance and the elevator integrator)
const EQUIL_ROWS: [usize; 8] = [idx::Z, idx::THETA, idx::U, idx::W, idx::Q, idx::OMEGA, idx::XW, idx::XWDOT];
/// penalty on the settling slacks; high enough that the recovery end sits
/// close to force balance, low enough to stay reachable
const SETTLE_WEIGHT: f64 = 1e2;

// actuator command boxes, shared with the tracking controller
pub const UM_RANGE: (f64, f64) = (0.0, 1.0);
pub const UE_RANGE: (f64, f64) = (-8.0, 8.0);
pub const UW_RANGE: (f64, f64) = (0.0, 1.0);

// guard boxes keeping solver iterates inside the model's domain
const U_RANGE: (f64, f64) = (0.5, 15.0);
const W_RANGE: (f64, f64) = (-8.0, 8.0);
const THETA_RANGE: (f64, f64) = (-1.2, 1.2);
const Q_RANGE: (f64, f64) = (-20.0, 20.0);
const XWDOT_RANGE: (f64, f64) = (-60.0, 60.0);
const Z_MARGIN: f64 = 5.0;
/// minimum normalized sweep everywhere inside the threshold
pub const SWEPT_FLOOR: f64 = 0.95;

const NODE_VARS: usize = NX + NU;

/// Variable/row bookkeeping for one transcription.
///
/// Nodes and midpoints interleave as `[node_k, mid_k, node_{k+1}, ...]`,
/// each a `[state; input]` block, with the five durations trailing. Rows
/// are laid out interval by interval so the equality Jacobian stays close
/// to banded; the handful of rows tied to a single node (equilibrium,
/// input constancy) are emitted right next to that node's defect rows.
struct Layout {
    mesh: [usize; 5],
    k_total: usize,
    seg_of: Vec<usize>,
    seg_first: [usize; 5],
    /// node index closing each segment
    seg_end_node: [usize; 5],
    defect_base: Vec<usize>,
    constancy_base: Vec<Option<usize>>,
    /// rows tying each midpoint input to the mean of its interval's nodes,
    /// so inputs stay piecewise linear and cannot hide oscillations the
    /// collocation points never see
    tie_base: Vec<Option<usize>>,
    equil_base: usize,
    n_rows: usize,
    n_vars: usize,
}

impl Layout {
    fn new(mesh: [usize; 5]) -> Layout {
        assert!(mesh.iter().all(|&n| n >= 1), "every segment needs an interval");
        let k_total: usize = mesh.iter().sum();
        let mut seg_of = Vec::with_capacity(k_total);
        let mut seg_first = [0usize; 5];
        let mut seg_end_node = [0usize; 5];
        let mut k = 0;
        for s in 0..5 {
            seg_first[s] = k;
            for _ in 0..mesh[s] {
                seg_of.push(s);
                k += 1;
            }
            seg_end_node[s] = k;
        }
        let mut defect_base = Vec::with_capacity(k_total);
        let mut constancy_base = vec![None; k_total];
        let mut tie_base = vec![None; k_total];
        let mut row = 0;
        let mut equil_base = 0;
        for k in 0..k_total {
            defect_base.push(row);
            row += 2 * NX;
            if seg_of[k] != 4 {
                tie_base[k] = Some(row);
                row += NU;
            }
            if k + 1 == seg_first[4] {
                equil_base = row;
                row += EQUIL_ROWS.len();
            }
            if seg_of[k] == 4 {
                constancy_base[k] = Some(row);
                row += 4;
            }
        }
        Layout {
            mesh,
            k_total,
            seg_of,
            seg_first,
            seg_end_node,
            defect_base,
            constancy_base,
            tie_base,
            equil_base,
            n_rows: row,
            n_vars: 2 * NODE_VARS * k_total + NODE_VARS + 5 + EQUIL_ROWS.len(),
        }
    }

    fn node(&self, k: usize) -> usize {
        2 * NODE_VARS * k
    }

    fn mid(&self, k: usize) -> usize {
        2 * NODE_VARS * k + NODE_VARS
    }

    fn dur(&self, s: usize) -> usize {
        2 * NODE_VARS * self.k_total + NODE_VARS + s
    }

    /// elastic slack on the i-th settling row; penalized in the cost so the
    /// recovery end is pulled to force balance without a hard (and possibly
    /// unreachable) terminal manifold
    fn slack(&self, i: usize) -> usize {
        2 * NODE_VARS * self.k_total + NODE_VARS + 5 + i
    }

    /// nodes lying inside the gap threshold, entry and exit included
    fn node_in_gap(&self, k: usize) -> bool {
        k >= self.seg_end_node[0] && k <= self.seg_end_node[2]
    }
}

/// quadratic running-cost weights per state/input channel
struct CostWeights {
    z: f64,
    u: f64,
    q: f64,
    ue: f64,
    um: f64,
}

impl CostWeights {
    fn for_objective(obj: Objective) -> CostWeights {
        // small attitude-rate and actuator regularizers keep the problem
        // well conditioned without visibly shaping the solution
        let base = CostWeights { z: 0.0, u: 0.0, q: 1e-3, ue: 1e-3, um: 1e-3 };
        match obj {
            Objective::AltitudeHold => CostWeights { z: 1.0, u: 1e-3, ..base },
            Objective::SpeedHold => CostWeights { z: 1e-4, u: 1.0, ..base },
            Objective::MinGapTime => CostWeights { z: 1e-4, u: 0.0, ..base },
        }
    }
}

struct GapNlp<'a> {
    params: &'a DroneParams,
    scenario: &'a GapScenario,
    lay: Layout,
    trim: Trim,
    weights: CostWeights,
    /// altitude corridor half-width applied at threshold nodes
    corridor: Option<f64>,
    /// previously solved trajectory to interpolate as the starting point
    warm: Option<PhasedTrajectory>,
    seg_x0: [f64; 5],
    seg_len: [f64; 5],
    /// nominal durations freezing the cost quadrature
    t_nom: [f64; 5],
    w_node: Vec<f64>,
    w_mid: Vec<f64>,
}

impl<'a> GapNlp<'a> {
    fn new(params: &'a DroneParams, scenario: &'a GapScenario, trim: Trim, mesh: [usize; 5]) -> GapNlp<'a> {
        let lay = Layout::new(mesh);
        let marks = [
            0.0,
            scenario.threshold_entry_x(),
            scenario.gap_x,
            scenario.threshold_exit_x(),
            scenario.recovery_end_x(),
            scenario.total_length(),
        ];
        let mut seg_x0 = [0.0; 5];
        let mut seg_len = [0.0; 5];
        let mut t_nom = [0.0; 5];
        for s in 0..5 {
            seg_x0[s] = marks[s];
            seg_len[s] = marks[s + 1] - marks[s];
            t_nom[s] = seg_len[s] / scenario.initial_speed;
        }
        let mut w_node = vec![0.0; lay.k_total + 1];
        let mut w_mid = vec![0.0; lay.k_total];
        for k in 0..lay.k_total {
            let s = lay.seg_of[k];
            let h0 = t_nom[s] / mesh[s] as f64;
            w_node[k] += h0 / 6.0;
            w_node[k + 1] += h0 / 6.0;
            w_mid[k] = 4.0 * h0 / 6.0;
        }
        GapNlp {
            params,
            scenario,
            lay,
            trim,
            weights: CostWeights::for_objective(scenario.objective),
            corridor: None,
            warm: None,
            seg_x0,
            seg_len,
            t_nom,
            w_node,
            w_mid,
        }
    }

    fn unpack(&self, x: &[f64], base: usize) -> (StateVec, InputVec) {
        (
            StateVec::from_column_slice(&x[base..base + NX]),
            InputVec::from_column_slice(&x[base + NX..base + NODE_VARS]),
        )
    }

    fn deriv_at(&self, x: &[f64], base: usize) -> Result<StateVec, EvalError> {
        let (xs, us) = self.unpack(x, base);
        state_derivative(&xs, &us, self.params).map_err(|e| EvalError::new(e.to_string()))
    }

    fn lin_at(&self, x: &[f64], base: usize) -> Result<(StateVec, AMat, BMat), EvalError> {
        let (xs, us) = self.unpack(x, base);
        let f = state_derivative(&xs, &us, self.params).map_err(|e| EvalError::new(e.to_string()))?;
        let (a, b) = linearize(&xs, &us, self.params, LinearizeMode::Continuous)
            .map_err(|e| EvalError::new(e.to_string()))?;
        Ok((f, a, b))
    }

    /// initial sweep profile: retract shortly before entry, re-extend after exit
    fn sweep_guess(&self, x_pos: f64) -> f64 {
        let entry = self.scenario.threshold_entry_x();
        let exit = self.scenario.threshold_exit_x();
        let lead = 0.4;
        let tail = 0.5;
        if x_pos < entry {
            ((x_pos - (entry - lead)) / lead).clamp(0.0, 1.0)
        } else if x_pos <= exit {
            1.0
        } else {
            (1.0 - (x_pos - exit) / tail).clamp(0.0, 1.0)
        }
    }

    fn guess_block(&self, x_pos: f64) -> [f64; NODE_VARS] {
        let z_gap = self.scenario.gap_center_z;
        let entry = self.scenario.threshold_entry_x();
        let mut b = [0.0; NODE_VARS];
        for c in 0..NX {
            b[c] = self.trim.state[c];
        }
        b[idx::X] = x_pos;
        // drift toward the gap altitude over the approach, stay there after
        b[idx::Z] = if x_pos < entry { z_gap * (x_pos / entry) } else { z_gap };
        let xw = self.sweep_guess(x_pos);
        b[idx::XW] = xw;
        b[NX + idx::UM] = self.trim.input[idx::UM];
        b[NX + idx::UE] = 0.0;
        b[NX + idx::UW] = xw;
        b
    }

    fn push_block_cost(&self, x: &[f64], base: usize, wq: f64, out: &mut Vec<CostTerm>) {
        let refs = [
            (idx::Z, self.weights.z, self.scenario.gap_center_z),
            (idx::U, self.weights.u, self.scenario.initial_speed),
            (idx::Q, self.weights.q, 0.0),
            (NX + idx::UE, self.weights.ue, 0.0),
            (NX + idx::UM, self.weights.um, self.trim.input[idx::UM]),
        ];
        for (off, w, r) in refs {
            if w > 0.0 && wq > 0.0 {
                let s = (2.0 * wq * w).sqrt();
                out.push(CostTerm { var: base + off, value: s * (x[base + off] - r), grad: s });
            }
        }
    }
}

impl NlpModel for GapNlp<'_> {
    fn num_vars(&self) -> usize {
        self.lay.n_vars
    }

    fn num_eq(&self) -> usize {
        self.lay.n_rows
    }

    fn cost_terms(&self, x: &[f64], out: &mut Vec<CostTerm>) -> Result<(), EvalError> {
        for k in 0..=self.lay.k_total {
            self.push_block_cost(x, self.lay.node(k), self.w_node[k], out);
        }
        for k in 0..self.lay.k_total {
            self.push_block_cost(x, self.lay.mid(k), self.w_mid[k], out);
        }
        let sw = (2.0 * SETTLE_WEIGHT).sqrt();
        for i in 0..EQUIL_ROWS.len() {
            let v = self.lay.slack(i);
            out.push(CostTerm { var: v, value: sw * x[v], grad: sw });
        }
        Ok(())
    }

    fn linear_cost(&self, out: &mut [f64]) {
        if self.scenario.objective == Objective::MinGapTime {
            out[self.lay.dur(1)] = 1.0;
            out[self.lay.dur(2)] = 1.0;
        }
    }

    fn eq_constraints(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        let l = &self.lay;
        let kt = l.k_total;
        let mut f_node = Vec::with_capacity(kt + 1);
        for k in 0..=kt {
            f_node.push(self.deriv_at(x, l.node(k))?);
        }
        let mut f_mid = Vec::with_capacity(kt);
        for k in 0..kt {
            f_mid.push(self.deriv_at(x, l.mid(k))?);
        }
        for k in 0..kt {
            let s = l.seg_of[k];
            let h = x[l.dur(s)] / l.mesh[s] as f64;
            let na = l.node(k);
            let nm = l.mid(k);
            let nb = l.node(k + 1);
            let (fa, fm, fb) = (&f_node[k], &f_mid[k], &f_node[k + 1]);
            let base = l.defect_base[k];
            for c in 0..NX {
                let xa = x[na + c];
                let xm = x[nm + c];
                let xb = x[nb + c];
                out[base + c] = (xm - 0.5 * (xa + xb) - h / 8.0 * (fa[c] - fb[c])) / STATE_SCALE[c];
                out[base + NX + c] =
                    (xb - xa - h / 6.0 * (fa[c] + 4.0 * fm[c] + fb[c])) / STATE_SCALE[c];
            }
            if let Some(tb) = l.tie_base[k] {
                for (i, j) in [idx::UM, idx::UE, idx::UW].into_iter().enumerate() {
                    out[tb + i] = x[nm + NX + j] - 0.5 * (x[na + NX + j] + x[nb + NX + j]);
                }
            }
            if let Some(cb) = l.constancy_base[k] {
                out[cb] = x[nm + NX + idx::UM] - x[na + NX + idx::UM];
                out[cb + 1] = x[nm + NX + idx::UW] - x[na + NX + idx::UW];
                out[cb + 2] = x[nb + NX + idx::UM] - x[na + NX + idx::UM];
                out[cb + 3] = x[nb + NX + idx::UW] - x[na + NX + idx::UW];
            }
        }
        let fe = &f_node[l.seg_end_node[3]];
        for (i, &c) in EQUIL_ROWS.iter().enumerate() {
            out[l.equil_base + i] = fe[c] / STATE_SCALE[c] - x[l.slack(i)];
        }
        Ok(())
    }

    fn eq_jacobian(&self, x: &[f64]) -> Result<SparseMat, EvalError> {
        let l = &self.lay;
        let kt = l.k_total;
        let mut node_lin = Vec::with_capacity(kt + 1);
        for k in 0..=kt {
            node_lin.push(self.lin_at(x, l.node(k))?);
        }
        let mut mid_lin = Vec::with_capacity(kt);
        for k in 0..kt {
            mid_lin.push(self.lin_at(x, l.mid(k))?);
        }
        let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(kt * 700 + 200);
        for k in 0..kt {
            let s = l.seg_of[k];
            let n_s = l.mesh[s] as f64;
            let h = x[l.dur(s)] / n_s;
            let na = l.node(k);
            let nm = l.mid(k);
            let nb = l.node(k + 1);
            let (fa, aa, ba) = &node_lin[k];
            let (fm, am, bm) = &mid_lin[k];
            let (fb, ab, bb) = &node_lin[k + 1];
            let base = l.defect_base[k];
            for c in 0..NX {
                let sc = 1.0 / STATE_SCALE[c];
                let rm = base + c;
                let rs = base + NX + c;
                for j in 0..NX {
                    let d = if c == j { 1.0 } else { 0.0 };
                    trip.push((rm, na + j, (-0.5 * d - h / 8.0 * aa[(c, j)]) * sc));
                    trip.push((rm, nb + j, (-0.5 * d + h / 8.0 * ab[(c, j)]) * sc));
                    trip.push((rs, na + j, (-d - h / 6.0 * aa[(c, j)]) * sc));
                    trip.push((rs, nm + j, -4.0 * h / 6.0 * am[(c, j)] * sc));
                    trip.push((rs, nb + j, (d - h / 6.0 * ab[(c, j)]) * sc));
                }
                trip.push((rm, nm + c, sc));
                for j in 0..NU {
                    trip.push((rm, na + NX + j, -h / 8.0 * ba[(c, j)] * sc));
                    trip.push((rm, nb + NX + j, h / 8.0 * bb[(c, j)] * sc));
                    trip.push((rs, na + NX + j, -h / 6.0 * ba[(c, j)] * sc));
                    trip.push((rs, nm + NX + j, -4.0 * h / 6.0 * bm[(c, j)] * sc));
                    trip.push((rs, nb + NX + j, -h / 6.0 * bb[(c, j)] * sc));
                }
                trip.push((rm, l.dur(s), -(fa[c] - fb[c]) / (8.0 * n_s) * sc));
                trip.push((rs, l.dur(s), -(fa[c] + 4.0 * fm[c] + fb[c]) / (6.0 * n_s) * sc));
            }
            if let Some(tb) = l.tie_base[k] {
                for (i, j) in [idx::UM, idx::UE, idx::UW].into_iter().enumerate() {
                    trip.push((tb + i, nm + NX + j, 1.0));
                    trip.push((tb + i, na + NX + j, -0.5));
                    trip.push((tb + i, nb + NX + j, -0.5));
                }
            }
            if let Some(cb) = l.constancy_base[k] {
                trip.push((cb, nm + NX + idx::UM, 1.0));
                trip.push((cb, na + NX + idx::UM, -1.0));
                trip.push((cb + 1, nm + NX + idx::UW, 1.0));
                trip.push((cb + 1, na + NX + idx::UW, -1.0));
                trip.push((cb + 2, nb + NX + idx::UM, 1.0));
                trip.push((cb + 2, na + NX + idx::UM, -1.0));
                trip.push((cb + 3, nb + NX + idx::UW, 1.0));
                trip.push((cb + 3, na + NX + idx::UW, -1.0));
            }
        }
        let e = l.seg_end_node[3];
        let (_, ae, be) = &node_lin[e];
        for (i, &c) in EQUIL_ROWS.iter().enumerate() {
            let row = l.equil_base + i;
            let sc = 1.0 / STATE_SCALE[c];
            for j in 0..NX {
                trip.push((row, l.node(e) + j, ae[(c, j)] * sc));
            }
            for j in 0..NU {
                trip.push((row, l.node(e) + NX + j, be[(c, j)] * sc));
            }
            trip.push((row, l.slack(i), -1.0));
        }
        Ok(SparseMat::from_triplets(l.n_rows, l.n_vars, &trip))
    }

    fn bounds(&self, lb: &mut [f64], ub: &mut [f64]) {
        let l = &self.lay;
        let z_gap = self.scenario.gap_center_z;
        let omega_max = self.params.motor.omega_max();
        let set = |base: usize, off: usize, lo: f64, hi: f64, lb: &mut [f64], ub: &mut [f64]| {
            lb[base + off] = lo;
            ub[base + off] = hi;
        };
        let box_block = |base: usize, gap: bool, lb: &mut [f64], ub: &mut [f64]| {
            let (zl, zu) = match self.corridor {
                Some(c) if gap => (z_gap - c, z_gap + c),
                _ => (z_gap - Z_MARGIN, z_gap + Z_MARGIN),
            };
            set(base, idx::Z, zl, zu, lb, ub);
            set(base, idx::THETA, THETA_RANGE.0, THETA_RANGE.1, lb, ub);
            set(base, idx::U, U_RANGE.0, U_RANGE.1, lb, ub);
            set(base, idx::W, W_RANGE.0, W_RANGE.1, lb, ub);
            set(base, idx::Q, Q_RANGE.0, Q_RANGE.1, lb, ub);
            set(base, idx::OMEGA, 0.0, omega_max, lb, ub);
            set(base, idx::XW, if gap { SWEPT_FLOOR } else { 0.0 }, 1.0, lb, ub);
            set(base, idx::XWDOT, XWDOT_RANGE.0, XWDOT_RANGE.1, lb, ub);
            set(base, idx::XE, -1.0, 1.0, lb, ub);
            set(base, NX + idx::UM, UM_RANGE.0, UM_RANGE.1, lb, ub);
            set(base, NX + idx::UE, UE_RANGE.0, UE_RANGE.1, lb, ub);
            if gap {
                set(base, NX + idx::UW, 1.0, 1.0, lb, ub);
            } else {
                set(base, NX + idx::UW, UW_RANGE.0, UW_RANGE.1, lb, ub);
            }
        };
        for k in 0..=l.k_total {
            box_block(l.node(k), l.node_in_gap(k), lb, ub);
        }
        for k in 0..l.k_total {
            let gap_mid = matches!(l.seg_of[k], 1 | 2);
            box_block(l.mid(k), gap_mid, lb, ub);
        }
        // segment boundary pins in x, plus the crossing altitude
        for s in 0..5 {
            let n = l.node(l.seg_end_node[s]);
            let xp = self.seg_x0[s] + self.seg_len[s];
            lb[n + idx::X] = xp;
            ub[n + idx::X] = xp;
        }
        let gp = l.node(l.seg_end_node[1]);
        lb[gp + idx::Z] = z_gap;
        ub[gp + idx::Z] = z_gap;
        // launch at trim
        let n0 = l.node(0);
        for c in 0..NX {
            lb[n0 + c] = self.trim.state[c];
            ub[n0 + c] = self.trim.state[c];
        }
        for j in 0..NU {
            lb[n0 + NX + j] = self.trim.input[j];
            ub[n0 + NX + j] = self.trim.input[j];
        }
        // the closing segment holds the elevator still
        for k in l.seg_end_node[3]..=l.k_total {
            let n = l.node(k);
            lb[n + NX + idx::UE] = 0.0;
            ub[n + NX + idx::UE] = 0.0;
        }
        for k in l.seg_first[4]..l.k_total {
            let m = l.mid(k);
            lb[m + NX + idx::UE] = 0.0;
            ub[m + NX + idx::UE] = 0.0;
        }
        for s in 0..5 {
            lb[l.dur(s)] = 0.25 * self.t_nom[s];
            ub[l.dur(s)] = 4.0 * self.t_nom[s];
        }
        for i in 0..EQUIL_ROWS.len() {
            lb[l.slack(i)] = -20.0;
            ub[l.slack(i)] = 20.0;
        }
    }

    fn initial_guess(&self, x: &mut [f64]) {
        if let Some(w) = &self.warm {
            self.guess_from(w, x);
            return;
        }
        let l = &self.lay;
        for k in 0..l.k_total {
            let s = l.seg_of[k];
            let h_x = self.seg_len[s] / l.mesh[s] as f64;
            let xa = self.seg_x0[s] + (k - l.seg_first[s]) as f64 * h_x;
            let a = self.guess_block(xa);
            let m = self.guess_block(xa + 0.5 * h_x);
            x[l.node(k)..l.node(k) + NODE_VARS].copy_from_slice(&a);
            x[l.mid(k)..l.mid(k) + NODE_VARS].copy_from_slice(&m);
        }
        let last = self.guess_block(self.scenario.total_length());
        let nk = l.node(l.k_total);
        x[nk..nk + NODE_VARS].copy_from_slice(&last);
        for s in 0..5 {
            x[l.dur(s)] = self.t_nom[s];
        }
        for i in 0..EQUIL_ROWS.len() {
            x[l.slack(i)] = 0.0;
        }
    }
}

impl<'a> GapNlp<'a> {
    /// Transfer a solution onto this mesh: cubic state interpolation within
    /// each solved interval, linear inputs, durations carried over, slacks
    /// re-derived from the interpolated settle node.
    fn guess_from(&self, w: &PhasedTrajectory, x: &mut [f64]) {
        let l = &self.lay;
        let mut old_first = [0usize; 5];
        for s in 1..5 {
            old_first[s] = old_first[s - 1] + w.info.mesh[s - 1];
        }
        let eval = |s: usize, frac: f64| -> [f64; NODE_VARS] {
            let n_old = w.info.mesh[s] as f64;
            let pos = (frac * n_old).clamp(0.0, n_old - 1e-9);
            let io = pos.floor() as usize;
            let iv = &w.intervals[old_first[s] + io];
            let tau = pos - io as f64;
            let half = iv.h / 2.0;
            let (x0, f0, x1, f1, u0, u1, tt) = if tau <= 0.5 {
                (&iv.xa, &iv.fa, &iv.xm, &iv.fm, &iv.ua, &iv.um, tau * 2.0)
            } else {
                (&iv.xm, &iv.fm, &iv.xb, &iv.fb, &iv.um, &iv.ub, tau * 2.0 - 1.0)
            };
            let xs = hermite(x0, f0, x1, f1, half, tt);
            let us = u0 + (u1 - u0) * tt;
            let mut b = [0.0; NODE_VARS];
            b[..NX].copy_from_slice(xs.as_slice());
            b[NX..].copy_from_slice(us.as_slice());
            b
        };
        for k in 0..l.k_total {
            let s = l.seg_of[k];
            let j = (k - l.seg_first[s]) as f64;
            let n_new = l.mesh[s] as f64;
            let a = eval(s, j / n_new);
            let m = eval(s, (j + 0.5) / n_new);
            x[l.node(k)..l.node(k) + NODE_VARS].copy_from_slice(&a);
            x[l.mid(k)..l.mid(k) + NODE_VARS].copy_from_slice(&m);
        }
        let last = eval(4, 1.0);
        let nk = l.node(l.k_total);
        x[nk..nk + NODE_VARS].copy_from_slice(&last);
        for s in 0..5 {
            x[l.dur(s)] = w.durations[s];
        }
        let ke = l.node(l.seg_end_node[3]);
        let (xs, us) = self.unpack(x, ke);
        let fe = state_derivative(&xs, &us, self.params).unwrap_or_else(|_| StateVec::zeros());
        for i in 0..EQUIL_ROWS.len() {
            x[l.slack(i)] = fe[EQUIL_ROWS[i]] / STATE_SCALE[EQUIL_ROWS[i]];
        }
    }
}

/// One solved collocation interval with its endpoint/midpoint derivatives,
/// enough to evaluate the interpolant anywhere inside.
#[derive(Debug, Clone)]
pub struct IntervalSol {
    pub t0: f64,
    pub h: f64,
    pub phase: Phase,
    pub xa: StateVec,
    pub ua: InputVec,
    pub xm: StateVec,
    pub um: InputVec,
    pub xb: StateVec,
    pub ub: InputVec,
    pub fa: StateVec,
    pub fm: StateVec,
    pub fb: StateVec,
}

#[derive(Debug, Clone)]
pub struct SolveInfo {
    pub iterations: usize,
    pub cost: f64,
    pub constraint_inf: f64,
    pub mesh: [usize; 5],
    pub refinements: usize,
    /// scaled infinity norm from the integration re-check
    pub max_defect: f64,
}

/// A converged reference with its phase structure.
#[derive(Debug, Clone)]
pub struct PhasedTrajectory {
    pub scenario: GapScenario,
    pub durations: [f64; 5],
    pub intervals: Vec<IntervalSol>,
    pub info: SolveInfo,
}

impl PhasedTrajectory {
    pub fn total_duration(&self) -> f64 {
        self.durations.iter().sum()
    }

    /// time spent between threshold entry and exit
    pub fn gap_time(&self) -> f64 {
        self.durations[1] + self.durations[2]
    }

    /// average ground speed across the threshold
    pub fn mean_gap_speed(&self) -> f64 {
        self.scenario.gap_threshold / self.gap_time()
    }

    /// Independent accuracy check: integrate each interval with a fine RK4
    /// under linearly interpolated inputs and compare against the next node,
    /// in scaled units. This shares no arithmetic with the collocation
    /// residuals, so it catches a mesh that is too coarse for the dynamics.
    pub fn max_defect(&self, params: &DroneParams) -> Result<f64, TrajError> {
        let mut worst: f64 = 0.0;
        for iv in &self.intervals {
            worst = worst.max(interval_defect(iv, params)?);
        }
        Ok(worst)
    }

    /// Worst integration defect per segment, so refinement can target the
    /// segments that actually need a finer mesh.
    pub fn segment_defects(&self, params: &DroneParams) -> Result<[f64; 5], TrajError> {
        let mut out = [0.0f64; 5];
        let mut k = 0;
        for s in 0..5 {
            for _ in 0..self.info.mesh[s] {
                out[s] = out[s].max(interval_defect(&self.intervals[k], params)?);
                k += 1;
            }
        }
        Ok(out)
    }

    /// Uniformly sampled copy: cubic interpolation over each half-interval
    /// for states, linear for inputs.
    pub fn resample(&self, dt: f64) -> ReferenceTrajectory {
        assert!(dt > 0.0);
        let total = self.total_duration();
        let count = (total / dt + 1e-9).floor() as usize;
        let mut samples = Vec::with_capacity(count + 1);
        let mut iv_idx = 0;
        for i in 0..=count {
            let t = (i as f64 * dt).min(total);
            while iv_idx + 1 < self.intervals.len()
                && t > self.intervals[iv_idx].t0 + self.intervals[iv_idx].h + 1e-12
            {
                iv_idx += 1;
            }
            let iv = &self.intervals[iv_idx];
            let local = (t - iv.t0).clamp(0.0, iv.h);
            let half = iv.h / 2.0;
            let (x0, f0, x1, f1, u0, u1, tau) = if local <= half {
                (&iv.xa, &iv.fa, &iv.xm, &iv.fm, &iv.ua, &iv.um, local / half)
            } else {
                (&iv.xm, &iv.fm, &iv.xb, &iv.fb, &iv.um, &iv.ub, (local - half) / half)
            };
            samples.push(RefSample {
                t,
                state: hermite(x0, f0, x1, f1, half, tau),
                input: u0 + (u1 - u0) * tau,
                phase: iv.phase,
            });
        }
        ReferenceTrajectory { dt, samples }
    }
}

fn interval_defect(iv: &IntervalSol, params: &DroneParams) -> Result<f64, TrajError> {
    const SUBSTEPS: usize = 12;
    let mut xs = iv.xa;
    let dt = iv.h / SUBSTEPS as f64;
    let input_at = |t: f64| -> InputVec {
        let half = iv.h / 2.0;
        if t <= half {
            iv.ua + (iv.um - iv.ua) * (t / half)
        } else {
            iv.um + (iv.ub - iv.um) * ((t - half) / half)
        }
    };
    let f = |xs: &StateVec, t: f64| -> Result<StateVec, TrajError> {
        state_derivative(xs, &input_at(t), params).map_err(|e| TrajError::Eval(e.to_string()))
    };
    for i in 0..SUBSTEPS {
        let t = i as f64 * dt;
        let k1 = f(&xs, t)?;
        let k2 = f(&(xs + k1 * (dt / 2.0)), t + dt / 2.0)?;
        let k3 = f(&(xs + k2 * (dt / 2.0)), t + dt / 2.0)?;
        let k4 = f(&(xs + k3 * dt), t + dt)?;
        xs += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    }
    let mut worst: f64 = 0.0;
    for c in 0..NX {
        worst = worst.max(((xs[c] - iv.xb[c]) / STATE_SCALE[c]).abs());
    }
    Ok(worst)
}

/// cubic Hermite interpolation over a step of length `h` at fraction `tau`
fn hermite(x0: &StateVec, f0: &StateVec, x1: &StateVec, f1: &StateVec, h: f64, tau: f64) -> StateVec {
    let t2 = tau * tau;
    let t3 = t2 * tau;
    x0 * (2.0 * t3 - 3.0 * t2 + 1.0)
        + f0 * ((t3 - 2.0 * t2 + tau) * h)
        + x1 * (-2.0 * t3 + 3.0 * t2)
        + f1 * ((t3 - t2) * h)
}

/// One reference sample on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RefSample {
    pub t: f64,
    pub state: StateVec,
    pub input: InputVec,
    pub phase: Phase,
}

/// A uniformly sampled reference, the controller-facing product.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub dt: f64,
    pub samples: Vec<RefSample>,
}

impl ReferenceTrajectory {
    pub fn duration(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }

    /// x position where the sweep command first crosses half travel
    pub fn sweep_initiation_x(&self) -> Option<f64> {
        self.samples
            .iter()
            .find(|s| s.input[idx::UW] >= 0.5)
            .map(|s| s.state[idx::X])
    }
}

/// Solve a gap scenario into a phased reference, refining the mesh until
/// the independent integration re-check passes.
pub fn solve_gap_trajectory(
    scenario: &GapScenario,
    params: &DroneParams,
    opts: &TrajOptions,
) -> Result<PhasedTrajectory, TrajError> {
    scenario.validate().map_err(|e| TrajError::Eval(e.to_string()))?;
    let trim = dynamics::solve_trim(scenario.initial_speed, 0.0, params)?;
    let mut mesh = opts.mesh;
    let mut warm: Option<PhasedTrajectory> = None;
    for refinement in 0..=opts.max_refinements {
        let nlp = GapNlp {
            corridor: opts.gap_corridor,
            warm: warm.take(),
            ..GapNlp::new(params, scenario, trim, mesh)
        };
        let sol = solve_nlp(&nlp, &opts.sqp);
        if sol.status != SqpStatus::Converged {
            if std::env::var_os("GAPWING_SQP_TRACE").is_some() {
                let s: Vec<String> =
                    (0..EQUIL_ROWS.len()).map(|i| format!("{:.3e}", sol.x[nlp.lay.slack(i)])).collect();
                eprintln!("settle slacks at failure: {s:?}");
                eprintln!("durations: {:?}", (0..5).map(|s| sol.x[nlp.lay.dur(s)]).collect::<Vec<_>>());
            }
            return Err(TrajError::SolverFailed {
                status: sol.status,
                constraint_inf: sol.constraint_inf,
            });
        }
        let mut traj = extract(&nlp, &sol, refinement)?;
        let seg_d = traj.segment_defects(params)?;
        let defect = seg_d.iter().fold(0.0f64, |a, d| a.max(*d));
        traj.info.max_defect = defect;
        if std::env::var_os("GAPWING_SQP_TRACE").is_some() {
            let ds: Vec<String> = seg_d.iter().map(|d| format!("{d:.2e}")).collect();
            eprintln!("mesh {mesh:?}: re-check defects {ds:?}");
        }
        if defect <= opts.defect_tol {
            return Ok(traj);
        }
        if refinement == opts.max_refinements {
            return Err(TrajError::DefectTooLarge {
                max_defect: defect,
                tol: opts.defect_tol,
                refinements: refinement,
            });
        }
        // split only the segments that failed, and restart from the solution
        for s in 0..5 {
            if seg_d[s] > opts.defect_tol {
                mesh[s] *= 2;
            }
        }
        warm = Some(traj);
    }
    unreachable!("refinement loop always returns");
}

fn extract(nlp: &GapNlp, sol: &SqpSolution, refinements: usize) -> Result<PhasedTrajectory, TrajError> {
    let l = &nlp.lay;
    let x = &sol.x;
    let mut durations = [0.0; 5];
    for s in 0..5 {
        durations[s] = x[l.dur(s)];
    }
    let mut seg_t0 = [0.0; 5];
    for s in 1..5 {
        seg_t0[s] = seg_t0[s - 1] + durations[s - 1];
    }
    let deriv = |base: usize| -> Result<StateVec, TrajError> {
        let (xs, us) = nlp.unpack(x, base);
        state_derivative(&xs, &us, nlp.params).map_err(|e| TrajError::Eval(e.to_string()))
    };
    let mut intervals = Vec::with_capacity(l.k_total);
    for k in 0..l.k_total {
        let s = l.seg_of[k];
        let h = durations[s] / l.mesh[s] as f64;
        let (xa, ua) = nlp.unpack(x, l.node(k));
        let (xm, um) = nlp.unpack(x, l.mid(k));
        let (xb, ub) = nlp.unpack(x, l.node(k + 1));
        intervals.push(IntervalSol {
            t0: seg_t0[s] + (k - l.seg_first[s]) as f64 * h,
            h,
            phase: SEG_PHASE[s],
            xa,
            ua,
            xm,
            um,
            xb,
            ub,
            fa: deriv(l.node(k))?,
            fm: deriv(l.mid(k))?,
            fb: deriv(l.node(k + 1))?,
        });
    }
    Ok(PhasedTrajectory {
        scenario: nlp.scenario.clone(),
        durations,
        intervals,
        info: SolveInfo {
            iterations: sol.iterations,
            cost: sol.cost,
            constraint_inf: sol.constraint_inf,
            mesh: l.mesh,
            refinements,
            max_defect: f64::NAN,
        },
    })
}

pub const REF_CSV_HEADER: &str = "t,x,z,theta,u,w,q,omega_m,x_w,xdot_w,x_e,u_m,u_e,u_w,phase";

pub fn write_reference_csv<W: Write>(mut w: W, traj: &ReferenceTrajectory) -> io::Result<()> {
    writeln!(w, "{REF_CSV_HEADER}")?;
    for s in &traj.samples {
        write!(w, "{:.12}", s.t)?;
        for c in 0..NX {
            write!(w, ",{:.12}", s.state[c])?;
        }
        for j in 0..NU {
            write!(w, ",{:.12}", s.input[j])?;
        }
        writeln!(w, ",{}", s.phase.number())?;
    }
    Ok(())
}

pub fn read_reference_csv<R: BufRead>(r: R) -> Result<ReferenceTrajectory, TrajError> {
    let bad = |m: &str, line: usize| TrajError::Csv(format!("line {}: {m}", line + 1));
    let mut samples = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| TrajError::Csv(e.to_string()))?;
        if i == 0 {
            if line.trim() != REF_CSV_HEADER {
                return Err(bad("unexpected header", i));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 + NX + NU {
            return Err(bad("wrong field count", i));
        }
        let num = |k: usize| -> Result<f64, TrajError> {
            fields[k].trim().parse::<f64>().map_err(|_| bad("bad number", i))
        };
        let mut state = StateVec::zeros();
        for c in 0..NX {
            state[c] = num(1 + c)?;
        }
        let mut input = InputVec::zeros();
        for j in 0..NU {
            input[j] = num(1 + NX + j)?;
        }
        let phase_num: u8 = fields[1 + NX + NU]
            .trim()
            .parse()
            .map_err(|_| bad("bad phase", i))?;
        samples.push(RefSample {
            t: num(0)?,
            state,
            input,
            phase: Phase::from_number(phase_num).ok_or_else(|| bad("bad phase", i))?,
        });
    }
    let dt = if samples.len() >= 2 { samples[1].t - samples[0].t } else { 0.0 };
    Ok(ReferenceTrajectory { dt, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::DroneParams;
    use approx::assert_abs_diff_eq;

    fn scenario(objective: Objective) -> GapScenario {
        GapScenario::new(4.0, 0.8, 6.0, objective)
    }

    #[test]
    fn layout_rows_and_vars_line_up() {
        let lay = Layout::new([3, 2, 2, 3, 2]);
        let kt = 12;
        assert_eq!(lay.k_total, kt);
        assert_eq!(lay.n_vars, 26 * kt + 13 + 5);
        assert_eq!(lay.n_rows, 20 * kt + 8 + 4 * 2);
        assert_eq!(lay.seg_end_node[1], 5); // gap plane node
        assert!(lay.node_in_gap(3) && lay.node_in_gap(7) && !lay.node_in_gap(8));
        // rows stay anchored near their intervals
        assert_eq!(lay.defect_base[0], 0);
        assert_eq!(lay.equil_base, 20 * 10);
        assert_eq!(lay.constancy_base[10], Some(20 * 10 + 8 + 20));
    }

    #[test]
    fn constraint_jacobian_matches_finite_differences() {
        let p = DroneParams::default();
        let sc = scenario(Objective::AltitudeHold);
        let trim = dynamics::solve_trim(6.0, 0.0, &p).unwrap();
        let nlp = GapNlp {
            corridor: None,
            ..GapNlp::new(&p, &sc, trim, [2, 1, 1, 2, 1])
        };
        let n = nlp.num_vars();
        let m = nlp.num_eq();
        let mut x = vec![0.0; n];
        nlp.initial_guess(&mut x);
        // move off the guess so no term sits at a degenerate zero
        for (j, v) in x.iter_mut().enumerate() {
            *v += 1e-3 * ((j as f64 * 0.7).sin());
        }
        let jac = nlp.eq_jacobian(&x).unwrap().to_dense();
        let mut fd = nalgebra::DMatrix::<f64>::zeros(m, n);
        let mut cp = vec![0.0; m];
        let mut cm = vec![0.0; m];
        for j in 0..n {
            let h = 1e-6 * x[j].abs().max(1.0);
            let keep = x[j];
            x[j] = keep + h;
            nlp.eq_constraints(&x, &mut cp).unwrap();
            x[j] = keep - h;
            nlp.eq_constraints(&x, &mut cm).unwrap();
            x[j] = keep;
            for i in 0..m {
                fd[(i, j)] = (cp[i] - cm[i]) / (2.0 * h);
            }
        }
        let mut worst = 0.0f64;
        for i in 0..m {
            for j in 0..n {
                worst = worst.max((jac[(i, j)] - fd[(i, j)]).abs() / fd[(i, j)].abs().max(1.0));
            }
        }
        assert!(worst < 2e-4, "jacobian mismatch {worst:.3e}");
    }

    #[test]
    fn guess_and_bounds_are_consistent() {
        let p = DroneParams::default();
        let sc = scenario(Objective::AltitudeHold);
        let trim = dynamics::solve_trim(6.0, 0.0, &p).unwrap();
        let nlp = GapNlp {
            corridor: None,
            ..GapNlp::new(&p, &sc, trim, [4, 2, 2, 3, 2])
        };
        let n = nlp.num_vars();
        let mut x = vec![0.0; n];
        nlp.initial_guess(&mut x);
        let mut lb = vec![f64::NEG_INFINITY; n];
        let mut ub = vec![f64::INFINITY; n];
        nlp.bounds(&mut lb, &mut ub);
        for j in 0..n {
            assert!(lb[j] <= ub[j] + 1e-12, "crossed bounds at {j}");
            assert!(
                x[j] >= lb[j] - 1e-9 && x[j] <= ub[j] + 1e-9,
                "guess outside box at {j}: {} not in [{}, {}]",
                x[j],
                lb[j],
                ub[j]
            );
        }
        // evaluating the guess must stay inside the model's domain
        let mut c = vec![0.0; nlp.num_eq()];
        nlp.eq_constraints(&x, &mut c).unwrap();
        assert!(c.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn reference_meets_pins_boxes_and_recheck() {
        let p = DroneParams::default();
        let sc = scenario(Objective::AltitudeHold);
        let traj = solve_gap_trajectory(&sc, &p, &TrajOptions::default()).unwrap();

        assert!(traj.info.max_defect <= 1e-4);
        assert!(traj.durations.iter().all(|&d| d > 0.0));

        // segment boundaries sit where the scenario says
        let bounds_x = [
            sc.threshold_entry_x(),
            sc.gap_x,
            sc.threshold_exit_x(),
            sc.recovery_end_x(),
            sc.total_length(),
        ];
        let mut idx_end = [0usize; 5];
        let mut count = 0;
        for s in 0..5 {
            count += traj.info.mesh[s];
            idx_end[s] = count - 1;
        }
        for s in 0..5 {
            assert_abs_diff_eq!(traj.intervals[idx_end[s]].xb[idx::X], bounds_x[s], epsilon = 1e-6);
        }
        // crossing altitude pinned at the gap plane
        assert_abs_diff_eq!(
            traj.intervals[idx_end[1]].xb[idx::Z],
            sc.gap_center_z,
            epsilon = 1e-6
        );
        // swept through the whole threshold
        for iv in traj.intervals.iter().filter(|iv| iv.phase == Phase::Gap) {
            for xw in [iv.xa[idx::XW], iv.xm[idx::XW], iv.xb[idx::XW]] {
                assert!(xw >= SWEPT_FLOOR - 1e-7, "sweep dropped to {xw}");
            }
            for uw in [iv.ua[idx::UW], iv.um[idx::UW], iv.ub[idx::UW]] {
                assert_abs_diff_eq!(uw, 1.0, epsilon = 1e-9);
            }
        }
        // recovery ends on a level equilibrium of the actual dynamics
        let end = &traj.intervals[idx_end[3]];
        let f = state_derivative(&end.xb, &end.ub, &p).unwrap();
        for c in EQUIL_ROWS {
            assert!(
                (f[c] / STATE_SCALE[c]).abs() < 1e-6,
                "equilibrium residual {c}: {}",
                f[c]
            );
        }
    }

    #[test]
    fn min_time_objective_crosses_faster() {
        let p = DroneParams::default();
        let opts = TrajOptions::default();
        let hold = solve_gap_trajectory(&scenario(Objective::AltitudeHold), &p, &opts).unwrap();
        let fast = solve_gap_trajectory(&scenario(Objective::MinGapTime), &p, &opts).unwrap();
        assert!(
            fast.mean_gap_speed() > hold.mean_gap_speed() + 0.3,
            "gap speeds: fast {:.2} vs hold {:.2}",
            fast.mean_gap_speed(),
            hold.mean_gap_speed()
        );
    }

    #[test]
    fn resampling_reproduces_cubic_trajectories_exactly() {
        // cubic states with matching derivatives are interpolated without error
        let coef: Vec<[f64; 4]> = (0..NX)
            .map(|c| {
                let c = c as f64;
                [0.3 + c, 1.1 - 0.2 * c, -0.4 + 0.05 * c, 0.2 + 0.03 * c]
            })
            .collect();
        let poly = |t: f64| -> StateVec {
            StateVec::from_fn(|c, _| {
                let a = &coef[c];
                a[0] + a[1] * t + a[2] * t * t + a[3] * t * t * t
            })
        };
        let dpoly = |t: f64| -> StateVec {
            StateVec::from_fn(|c, _| {
                let a = &coef[c];
                a[1] + 2.0 * a[2] * t + 3.0 * a[3] * t * t
            })
        };
        let input = |t: f64| InputVec::new(0.5 + 0.1 * t, -0.2 * t, 0.3);
        let h = 0.4;
        let intervals: Vec<IntervalSol> = (0..3)
            .map(|k| {
                let t0 = k as f64 * h;
                IntervalSol {
                    t0,
                    h,
                    phase: Phase::Approach,
                    xa: poly(t0),
                    ua: input(t0),
                    xm: poly(t0 + h / 2.0),
                    um: input(t0 + h / 2.0),
                    xb: poly(t0 + h),
                    ub: input(t0 + h),
                    fa: dpoly(t0),
                    fm: dpoly(t0 + h / 2.0),
                    fb: dpoly(t0 + h),
                }
            })
            .collect();
        let traj = PhasedTrajectory {
            scenario: GapScenario::new(4.0, 0.8, 6.0, Objective::AltitudeHold),
            durations: [3.0 * h, 0.0, 0.0, 0.0, 0.0],
            intervals,
            info: SolveInfo {
                iterations: 0,
                cost: 0.0,
                constraint_inf: 0.0,
                mesh: [3, 0, 0, 0, 0],
                refinements: 0,
                max_defect: 0.0,
            },
        };
        let sampled = traj.resample(0.037);
        for s in &sampled.samples {
            let want = poly(s.t);
            for c in 0..NX {
                assert_abs_diff_eq!(s.state[c], want[c], epsilon = 1e-10);
            }
            let u = input(s.t);
            for j in 0..NU {
                assert_abs_diff_eq!(s.input[j], u[j], epsilon = 1e-10);
            }
        }
        assert_abs_diff_eq!(sampled.duration(), 3.0 * h - (3.0 * h) % 0.037, epsilon = 1e-9);
    }

    #[test]
    fn perturbed_interval_fails_the_integration_recheck() {
        let p = DroneParams::default();
        let sc = scenario(Objective::AltitudeHold);
        let traj = solve_gap_trajectory(&sc, &p, &TrajOptions::default()).unwrap();
        let mut broken = traj.clone();
        broken.intervals[5].xb[idx::U] += 0.05;
        assert!(broken.max_defect(&p).unwrap() > 0.04);
    }

    #[test]
    fn csv_round_trip_preserves_samples() {
        let mk = |t: f64, phase: Phase| RefSample {
            t,
            state: StateVec::from_fn(|c, _| (c as f64 + 1.0) * 0.1 - t),
            input: InputVec::new(0.4 + t, -1.25 * t, 0.0123456789),
            phase,
        };
        let traj = ReferenceTrajectory {
            dt: 0.5,
            samples: vec![mk(0.0, Phase::Approach), mk(0.5, Phase::Gap), mk(1.0, Phase::Steady)],
        };
        let mut buf = Vec::new();
        write_reference_csv(&mut buf, &traj).unwrap();
        let back = read_reference_csv(buf.as_slice()).unwrap();
        assert_eq!(back.samples.len(), 3);
        assert_abs_diff_eq!(back.dt, 0.5, epsilon = 1e-12);
        for (a, b) in traj.samples.iter().zip(&back.samples) {
            assert_eq!(a.phase, b.phase);
            assert_abs_diff_eq!(a.t, b.t, epsilon = 1e-9);
            for c in 0..NX {
                assert_abs_diff_eq!(a.state[c], b.state[c], epsilon = 1e-9);
            }
            for j in 0..NU {
                assert_abs_diff_eq!(a.input[j], b.input[j], epsilon = 1e-9);
            }
        }
        assert!(read_reference_csv("nope\n1,2".as_bytes()).is_err());
    }
}
