//! Primal-dual interior-point solver for the block problems built in `relax`.
//!
//! Problem: `min c^T y + offset` s.t. `A y = b`, `S_k = C_k + sum_i y_i F_ki >= 0`.
//! Dual: `max b^T w - sum_k <C_k, Z_k> + offset` s.t. `A^T w + F^*(Z) = c`, `Z_k >= 0`.
//!
//! Infeasible-start path following with Mehrotra predictor-corrector steps and
//! the HKM search direction. Everything is dense and single-threaded, so a solve
//! is fully deterministic.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frob, sym};
use crate::polybasis::PseudoMomentSequence;
use crate::relax::{SdpProblem, VarGroup, VarTag};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverOptions {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iters: usize,
    /// Reserved for randomized components; the current method uses none.
    pub seed: u64,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { feas_tol: 1e-8, gap_tol: 1e-8, max_iters: 200, seed: 0, verbose: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalLimit,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Optimal => "optimal",
            Status::Infeasible => "infeasible",
            Status::Unbounded => "unbounded",
            Status::NumericalLimit => "numerical_limit",
        })
    }
}

#[derive(Clone, Debug)]
pub struct ConicSolution {
    pub status: Status,
    pub primal: Vec<f64>,
    /// Multipliers of the original equality rows (zero on rows dropped as redundant).
    pub dual_equalities: Vec<f64>,
    pub dual_blocks: Vec<DMatrix<f64>>,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub iterations: usize,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub tags: Vec<VarTag>,
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }
}

/// `|primal - dual| / (1 + |primal|)` of an optimal solution.
pub fn duality_gap(solution: &ConicSolution) -> Result<f64> {
    if !solution.is_optimal() {
        return Err(Error::NotOptimal(solution.status.to_string()));
    }
    Ok((solution.primal_obj - solution.dual_obj).abs() / (1.0 + solution.primal_obj.abs()))
}

/// Pseudo-moment sequence held by the variables of `group`.
pub fn extract_moment_vector(solution: &ConicSolution, group: VarGroup) -> Result<PseudoMomentSequence> {
    if !solution.is_optimal() {
        return Err(Error::NotOptimal(solution.status.to_string()));
    }
    moment_vector_unchecked(solution, group)
}

/// As [`extract_moment_vector`] but also for non-optimal final iterates.
pub fn moment_vector_unchecked(solution: &ConicSolution, group: VarGroup) -> Result<PseudoMomentSequence> {
    let tag = solution
        .tags
        .iter()
        .find(|t| t.group == group)
        .ok_or_else(|| Error::UnknownTag(group.to_string()))?;
    let values = solution.primal[tag.start..tag.start + tag.len()].to_vec();
    PseudoMomentSequence::new(tag.basis.clone(), values)
}

/// Block data in the form used by the iterations.
struct BlockData {
    dim: usize,
    constant: DMatrix<f64>,
    /// Both triangles: `(var, row, col, coef)`, sorted by variable.
    entries: Vec<(usize, usize, usize, f64)>,
}

impl BlockData {
    /// Expands upper-triangular triplets to both triangles and merges duplicates.
    fn new(dim: usize, constant: &[(usize, usize, f64)], coeffs: &[(usize, usize, usize, f64)]) -> BlockData {
        let mut cm = DMatrix::zeros(dim, dim);
        for &(r, c, v) in constant {
            cm[(r, c)] += v;
            if r != c {
                cm[(c, r)] += v;
            }
        }
        let mut upper: Vec<(usize, usize, usize, f64)> = coeffs.to_vec();
        upper.sort_by_key(|e| (e.0, e.1, e.2));
        let mut merged: Vec<(usize, usize, usize, f64)> = Vec::with_capacity(upper.len());
        for e in upper {
            match merged.last_mut() {
                Some(last) if (last.0, last.1, last.2) == (e.0, e.1, e.2) => last.3 += e.3,
                _ => merged.push(e),
            }
        }
        let mut entries = Vec::with_capacity(2 * merged.len());
        for (k, r, c, v) in merged {
            if v == 0.0 {
                continue;
            }
            entries.push((k, r, c, v));
            if r != c {
                entries.push((k, c, r, v));
            }
        }
        entries.sort_by_key(|e| (e.0, e.2, e.1));
        BlockData { dim, constant: cm, entries }
    }

    /// `sum_i y_i F_i`.
    fn apply(&self, y: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for &(k, r, c, v) in &self.entries {
            m[(r, c)] += v * y[k];
        }
        m
    }

    /// Accumulates `<F_i, X>` into `out`.
    fn adjoint_into(&self, x: &DMatrix<f64>, out: &mut [f64]) {
        for &(k, r, c, v) in &self.entries {
            out[k] += v * x[(r, c)];
        }
    }

    /// Accumulates `H_ij += tr(F_i P F_j Z)` into the row-major `h`.
    fn schur_into(&self, p: &DMatrix<f64>, z: &DMatrix<f64>, h: &mut [f64], m: usize) {
        let n = self.dim;
        let ps = p.as_slice();
        let zs = z.as_slice();
        for &(i, a, b, u) in &self.entries {
            let pb = &ps[b * n..(b + 1) * n];
            let za = &zs[a * n..(a + 1) * n];
            let row = &mut h[i * m..(i + 1) * m];
            for &(j, c, d, v) in &self.entries {
                row[j] += u * v * pb[c] * za[d];
            }
        }
    }
}

/// The problem after substituting the equality constraints away:
/// `y_B = b' - A'_N y_N` for pivot variables `B`, free variables `N`.
struct Reduction {
    /// Original index of every free variable.
    free: Vec<usize>,
    /// `(original pivot variable, constant, [(free index, coef)])`.
    pivots: Vec<(usize, f64, Vec<(usize, f64)>)>,
    /// Row combinations producing the pivot rows from the original rows.
    transform: Vec<Vec<(usize, f64)>>,
    objective: DVector<f64>,
    offset: f64,
    blocks: Vec<BlockData>,
}

/// Gauss-Jordan elimination of the equality rows with Markowitz-style pivot
/// choice (fewest competing rows, magnitude at least a tenth of the row maximum).
/// Returns `None` when the rows are inconsistent.
fn reduce(problem: &SdpProblem) -> Option<Reduction> {
    let nv = problem.nvars;
    let nr = problem.eq_rows.len();
    let mut a = DMatrix::<f64>::zeros(nr, nv);
    let mut b = problem.eq_rhs.clone();
    for (r, row) in problem.eq_rows.iter().enumerate() {
        for &(v, c) in row {
            a[(r, v)] += c;
        }
    }
    let scale: Vec<f64> = (0..nr).map(|r| a.row(r).amax().max(b[r].abs()).max(1e-300)).collect();
    let mut t = DMatrix::<f64>::identity(nr, nr);
    let mut active: Vec<bool> = vec![true; nr];
    let mut pivot_of_row: Vec<Option<usize>> = vec![None; nr];
    loop {
        let mut count = vec![0usize; nv];
        let mut any = false;
        for r in (0..nr).filter(|&r| active[r]) {
            for v in 0..nv {
                if a[(r, v)] != 0.0 {
                    count[v] += 1;
                }
            }
        }
        let mut best: Option<(usize, usize, usize, f64)> = None;
        for r in 0..nr {
            if !active[r] {
                continue;
            }
            let rmax = a.row(r).amax();
            if rmax <= 1e-11 * scale[r] {
                if b[r].abs() > 1e-9 * (1.0 + problem.eq_rhs[r].abs()) {
                    return None;
                }
                active[r] = false;
                continue;
            }
            any = true;
            let nnz = (0..nv).filter(|&v| a[(r, v)] != 0.0).count();
            for v in 0..nv {
                let x = a[(r, v)].abs();
                if x < 0.1 * rmax {
                    continue;
                }
                let cost = (count[v] - 1) * (nnz - 1);
                let rel = x / rmax;
                let better = match best {
                    None => true,
                    Some((_, _, bc, brel)) => cost < bc || (cost == bc && rel > brel),
                };
                if better {
                    best = Some((r, v, cost, rel));
                }
            }
        }
        if !any {
            break;
        }
        let (r, v, _, _) = best.expect("an active row has a pivot candidate");
        let piv = a[(r, v)];
        a.row_mut(r).scale_mut(1.0 / piv);
        t.row_mut(r).scale_mut(1.0 / piv);
        b[r] /= piv;
        a[(r, v)] = 1.0;
        for i in 0..nr {
            if i == r {
                continue;
            }
            let f = a[(i, v)];
            if f == 0.0 {
                continue;
            }
            for k in 0..nv {
                let x = a[(r, k)];
                if x != 0.0 {
                    a[(i, k)] -= f * x;
                }
            }
            for k in 0..nr {
                let x = t[(r, k)];
                if x != 0.0 {
                    t[(i, k)] -= f * x;
                }
            }
            b[i] -= f * b[r];
            a[(i, v)] = 0.0;
        }
        active[r] = false;
        pivot_of_row[r] = Some(v);
    }

    let mut is_pivot = vec![false; nv];
    for v in pivot_of_row.iter().flatten() {
        is_pivot[*v] = true;
    }
    let free: Vec<usize> = (0..nv).filter(|&v| !is_pivot[v]).collect();
    let mut free_index = vec![usize::MAX; nv];
    for (j, &v) in free.iter().enumerate() {
        free_index[v] = j;
    }
    let mut pivots = Vec::new();
    let mut transform = Vec::new();
    for r in 0..nr {
        if let Some(v) = pivot_of_row[r] {
            let terms: Vec<(usize, f64)> = free
                .iter()
                .enumerate()
                .filter_map(|(j, &k)| {
                    let x = a[(r, k)];
                    (x.abs() > 1e-15).then_some((j, -x))
                })
                .collect();
            pivots.push((v, b[r], terms));
            transform.push((0..nr).filter_map(|k| (t[(r, k)] != 0.0).then_some((k, t[(r, k)]))).collect());
        }
    }

    let mut pivot_slot = vec![usize::MAX; nv];
    for (s, p) in pivots.iter().enumerate() {
        pivot_slot[p.0] = s;
    }
    let mut objective = DVector::zeros(free.len());
    let mut offset = problem.offset;
    for (v, &c) in problem.objective.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        if is_pivot[v] {
            let (_, k, terms) = &pivots[pivot_slot[v]];
            offset += c * k;
            for &(j, x) in terms {
                objective[j] += c * x;
            }
        } else {
            objective[free_index[v]] += c;
        }
    }
    let blocks = problem
        .blocks
        .iter()
        .map(|blk| {
            let mut constant = blk.constant.clone();
            let mut coeffs = Vec::with_capacity(blk.coeffs.len());
            for &(v, r, c, u) in &blk.coeffs {
                if is_pivot[v] {
                    let (_, k, terms) = &pivots[pivot_slot[v]];
                    if *k != 0.0 {
                        constant.push((r, c, u * k));
                    }
                    coeffs.extend(terms.iter().map(|&(j, x)| (j, r, c, u * x)));
                } else {
                    coeffs.push((free_index[v], r, c, u));
                }
            }
            BlockData::new(blk.dim, &constant, &coeffs)
        })
        .collect();
    Some(Reduction { free, pivots, transform, objective, offset, blocks })
}

impl Reduction {
    fn expand(&self, nvars: usize, z: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; nvars];
        for (j, &v) in self.free.iter().enumerate() {
            y[v] = z[j];
        }
        for (v, k, terms) in &self.pivots {
            y[*v] = k + terms.iter().map(|&(j, x)| x * z[j]).sum::<f64>();
        }
        y
    }

    /// Equality multipliers from the block duals: on pivot columns the dual
    /// constraint `A^T w + F^*(Z) = c` determines `w` exactly.
    fn multipliers(&self, problem: &SdpProblem, zs: &[DMatrix<f64>]) -> Vec<f64> {
        let orig: Vec<BlockData> =
            problem.blocks.iter().map(|b| BlockData::new(b.dim, &b.constant, &b.coeffs)).collect();
        let mut fz = vec![0.0; problem.nvars];
        for (blk, z) in orig.iter().zip(zs) {
            blk.adjoint_into(z, &mut fz);
        }
        let mut w = vec![0.0; problem.eq_rows.len()];
        for ((v, _, _), row) in self.pivots.iter().zip(&self.transform) {
            let wr = problem.objective[*v] - fz[*v];
            for &(k, x) in row {
                w[k] += wr * x;
            }
        }
        w
    }
}

/// Cholesky with a growing diagonal shift when the matrix is numerically singular.
fn robust_cholesky(mut m: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let scale = m.diagonal().iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1e-300);
    let mut shift = 0.0;
    for _ in 0..12 {
        if let Some(ch) = m.clone().cholesky() {
            return Some(ch);
        }
        let next = if shift == 0.0 { 1e-14 * scale } else { shift * 100.0 };
        for i in 0..m.nrows() {
            m[(i, i)] += next - shift;
        }
        shift = next;
    }
    None
}

/// Largest step in `(0, inf]` keeping `X + t dX` positive semidefinite.
fn max_step(x_chol: &Cholesky<f64, Dyn>, dx: &DMatrix<f64>) -> f64 {
    let l = x_chol.l();
    let mut t = dx.clone();
    l.solve_lower_triangular_mut(&mut t);
    let mut t = t.transpose();
    l.solve_lower_triangular_mut(&mut t);
    let lam = sym(&t).symmetric_eigenvalues().min();
    if lam >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lam
    }
}

fn inverse_from(ch: &Cholesky<f64, Dyn>) -> DMatrix<f64> {
    sym(&ch.inverse())
}

pub fn solve(problem: &SdpProblem, opts: &SolverOptions) -> Result<ConicSolution> {
    problem.validate()?;
    if problem.blocks.is_empty() {
        return Err(Error::MalformedProblem("no semidefinite blocks".into()));
    }
    if !(opts.feas_tol > 0.0 && opts.gap_tol > 0.0) {
        return Err(Error::MalformedProblem("tolerances must be positive".into()));
    }
    let Some(red) = reduce(problem) else {
        log::debug!("sdp: inconsistent equality constraints");
        return Ok(infeasible_solution(problem));
    };
    log::debug!(
        "sdp: {} variables, {} equalities, {} free after elimination, blocks {:?}",
        problem.nvars,
        problem.eq_rows.len(),
        red.free.len(),
        problem.block_dims()
    );
    let ipm = Ipm::new(&red, opts);
    let out = ipm.run();
    let primal = red.expand(problem.nvars, out.z.as_slice());
    let eq_res = problem
        .eq_rows
        .iter()
        .zip(&problem.eq_rhs)
        .map(|(row, rhs)| (row.iter().map(|&(v, c)| c * primal[v]).sum::<f64>() - rhs).abs())
        .fold(0.0f64, f64::max);
    let rhs_norm = problem.eq_rhs.iter().map(|b| b * b).sum::<f64>().sqrt();
    let dual_equalities = red.multipliers(problem, &out.dual);
    Ok(ConicSolution {
        status: out.status,
        primal_obj: problem.objective_value(&primal),
        primal,
        dual_equalities,
        dual_blocks: out.dual,
        dual_obj: out.dobj,
        iterations: out.iterations,
        primal_infeasibility: out.pinf.max(eq_res / (1.0 + rhs_norm)),
        dual_infeasibility: out.dinf,
        tags: problem.tags.clone(),
    })
}

fn infeasible_solution(problem: &SdpProblem) -> ConicSolution {
    ConicSolution {
        status: Status::Infeasible,
        primal: vec![0.0; problem.nvars],
        dual_equalities: vec![0.0; problem.eq_rows.len()],
        dual_blocks: problem.blocks.iter().map(|b| DMatrix::zeros(b.dim, b.dim)).collect(),
        primal_obj: f64::INFINITY,
        dual_obj: f64::INFINITY,
        iterations: 0,
        primal_infeasibility: f64::INFINITY,
        dual_infeasibility: 0.0,
        tags: problem.tags.clone(),
    }
}

/// Interior-point iterations on the equality-free reduced problem
/// `min c^T z + offset`, `S_k = C_k + F_k(z) >= 0`.
struct Ipm<'a> {
    red: &'a Reduction,
    opts: &'a SolverOptions,
    m: usize,
    total_dim: f64,
    c_norm: f64,
    cmat_norm: f64,
}

/// Dual-residual slack (in units of `feas_tol`) accepted once the iteration stalls.
const RELAXED_DUAL: f64 = 1e3;
const STALL_ITERS: usize = 10;

struct IpmResult {
    status: Status,
    z: DVector<f64>,
    dual: Vec<DMatrix<f64>>,
    dobj: f64,
    pinf: f64,
    dinf: f64,
    iterations: usize,
}

#[derive(Clone)]
struct Iterate {
    y: DVector<f64>,
    s: Vec<DMatrix<f64>>,
    z: Vec<DMatrix<f64>>,
}

struct Residuals {
    rs: Vec<DMatrix<f64>>,
    rd: DVector<f64>,
    pinf: f64,
    dinf: f64,
    pobj: f64,
    dobj: f64,
    mu: f64,
}

struct Direction {
    dy: DVector<f64>,
    ds: Vec<DMatrix<f64>>,
    dz: Vec<DMatrix<f64>>,
}

impl<'a> Ipm<'a> {
    fn new(red: &'a Reduction, opts: &'a SolverOptions) -> Self {
        Ipm {
            red,
            opts,
            m: red.free.len(),
            total_dim: red.blocks.iter().map(|b| b.dim as f64).sum(),
            c_norm: red.objective.norm(),
            cmat_norm: red.blocks.iter().map(|b| b.constant.norm_squared()).sum::<f64>().sqrt(),
        }
    }

    fn residuals(&self, it: &Iterate) -> Residuals {
        let ys = it.y.as_slice();
        let rs: Vec<DMatrix<f64>> =
            self.red.blocks.iter().zip(&it.s).map(|(blk, s)| &blk.constant + blk.apply(ys) - s).collect();
        let mut fz = vec![0.0; self.m];
        for (blk, z) in self.red.blocks.iter().zip(&it.z) {
            blk.adjoint_into(z, &mut fz);
        }
        let rd = &self.red.objective - DVector::from_vec(fz);
        let rs_norm = rs.iter().map(|r| r.norm_squared()).sum::<f64>().sqrt();
        let pinf = rs_norm / (1.0 + self.cmat_norm);
        let dinf = rd.norm() / (1.0 + self.c_norm);
        let pobj = self.red.objective.dot(&it.y) + self.red.offset;
        let ctz: f64 = self.red.blocks.iter().zip(&it.z).map(|(blk, z)| frob(&blk.constant, z)).sum();
        let dobj = self.red.offset - ctz;
        let mu = it.s.iter().zip(&it.z).map(|(s, z)| frob(s, z)).sum::<f64>() / self.total_dim;
        Residuals { rs, rd, pinf, dinf, pobj, dobj, mu }
    }

    fn initial_point(&self) -> Iterate {
        let fmax = self
            .red
            .blocks
            .iter()
            .flat_map(|b| b.entries.iter().map(|e| e.3.abs()))
            .fold(0.0f64, f64::max)
            .max(1.0);
        let cmax = self.red.blocks.iter().map(|b| b.constant.amax()).fold(0.0f64, f64::max);
        let scale_s = (1.0 + cmax).max(1.0);
        let scale_z = ((1.0 + self.red.objective.amax()) / fmax).max(1.0);
        Iterate {
            y: DVector::zeros(self.m),
            s: self.red.blocks.iter().map(|b| DMatrix::identity(b.dim, b.dim) * scale_s).collect(),
            z: self.red.blocks.iter().map(|b| DMatrix::identity(b.dim, b.dim) * scale_z).collect(),
        }
    }

    fn run(&self) -> IpmResult {
        let mut it = self.initial_point();
        let mut status = Status::NumericalLimit;
        let mut iterations = 0;
        let mut stalls = 0;
        let mut res = self.residuals(&it);
        // Best iterate meeting the primal and gap tolerances with a dual residual
        // above `feas_tol` but below `RELAXED_DUAL * feas_tol`.
        let mut relaxed: Option<(Iterate, f64, f64, f64, usize)> = None;
        let mut best_merit = f64::INFINITY;
        let mut since_progress = 0;
        for k in 0..self.opts.max_iters {
            let gap = (res.pobj - res.dobj).abs() / (1.0 + res.pobj.abs() + res.dobj.abs());
            if self.opts.verbose {
                log::info!(
                    "iter {k:3} pobj {:+.10e} dobj {:+.10e} pinf {:.2e} dinf {:.2e} gap {:.2e} mu {:.2e}",
                    res.pobj,
                    res.dobj,
                    res.pinf,
                    res.dinf,
                    gap,
                    res.mu
                );
            }
            if res.pinf <= self.opts.feas_tol && gap <= self.opts.gap_tol {
                if res.dinf <= self.opts.feas_tol {
                    status = Status::Optimal;
                    relaxed = None;
                    break;
                }
                if res.dinf <= RELAXED_DUAL * self.opts.feas_tol
                    && relaxed.as_ref().map_or(true, |r| res.dinf < r.3)
                {
                    relaxed = Some((it.clone(), res.dobj, res.pinf, res.dinf, iterations));
                }
            }
            if res.dinf <= self.opts.feas_tol && res.dobj > 1e10 * (1.0 + res.pobj.abs().min(1e10)) {
                status = Status::Infeasible;
                break;
            }
            if res.pinf <= self.opts.feas_tol && res.pobj < -1e10 {
                status = Status::Unbounded;
                break;
            }
            if self.m == 0 {
                break;
            }
            let merit = res.pinf.max(res.dinf).max(gap);
            if merit < 0.5 * best_merit {
                best_merit = merit;
                since_progress = 0;
            } else {
                since_progress += 1;
                if since_progress >= STALL_ITERS {
                    log::debug!("sdp: no progress in {STALL_ITERS} iterations");
                    break;
                }
            }
            let Some((alpha_p, alpha_d)) = self.step(&mut it, &res) else {
                log::debug!("sdp: linear algebra breakdown at iteration {k}");
                break;
            };
            iterations = k + 1;
            res = self.residuals(&it);
            if alpha_p.max(alpha_d) < 1e-8 {
                stalls += 1;
                if stalls >= 5 {
                    break;
                }
            } else {
                stalls = 0;
            }
        }
        if self.m == 0 && status == Status::NumericalLimit {
            // nothing to optimize: feasible iff the constant blocks are PSD
            let feasible = self.red.blocks.iter().all(|b| crate::linalg::is_psd(&b.constant, 1e-12));
            status = if feasible { Status::Optimal } else { Status::Infeasible };
            return IpmResult {
                status,
                z: it.y,
                dual: self.red.blocks.iter().map(|b| DMatrix::zeros(b.dim, b.dim)).collect(),
                dobj: self.red.offset,
                pinf: 0.0,
                dinf: 0.0,
                iterations: 0,
            };
        }
        if status == Status::NumericalLimit {
            if let Some((best, dobj, pinf, dinf, at)) = relaxed {
                log::debug!("sdp: accepting iterate {at} with dual residual {dinf:.2e}");
                return IpmResult { status: Status::Optimal, z: best.y, dual: best.z, dobj, pinf, dinf, iterations };
            }
        }
        IpmResult {
            status,
            z: it.y,
            dual: it.z,
            dobj: res.dobj,
            pinf: res.pinf,
            dinf: res.dinf,
            iterations,
        }
    }

    /// One predictor-corrector step; returns the step lengths taken.
    fn step(&self, it: &mut Iterate, res: &Residuals) -> Option<(f64, f64)> {
        let m = self.m;
        let nb = self.red.blocks.len();
        let s_chol: Vec<_> = it.s.iter().map(|s| s.clone().cholesky()).collect::<Option<_>>()?;
        let z_chol: Vec<_> = it.z.iter().map(|z| z.clone().cholesky()).collect::<Option<_>>()?;
        let p: Vec<DMatrix<f64>> = s_chol.iter().map(inverse_from).collect();

        let mut h = vec![0.0; m * m];
        for (k, blk) in self.red.blocks.iter().enumerate() {
            blk.schur_into(&p[k], &it.z[k], &mut h, m);
        }
        let h = DMatrix::from_row_slice(m, m, &h);
        let h = sym(&h);
        let h_chol = robust_cholesky(h.clone())?;

        // Solve H dy = F^*(target) - r_d; `extra` is the second-order correction.
        let direction = |sigma: f64, extra: Option<&[DMatrix<f64>]>| -> Direction {
            let mut hvec = vec![0.0; m];
            for k in 0..nb {
                let mut t = &p[k] * (sigma * res.mu) - &it.z[k] - &p[k] * &res.rs[k] * &it.z[k];
                if let Some(e) = extra {
                    t -= &e[k];
                }
                self.red.blocks[k].adjoint_into(&t, &mut hvec);
            }
            let rhs = DVector::from_vec(hvec) - &res.rd;
            let mut dy = h_chol.solve(&rhs);
            // refine against the operator itself rather than the assembled H
            for _ in 0..2 {
                let ys = dy.as_slice();
                let mut hy = vec![0.0; m];
                for (k, blk) in self.red.blocks.iter().enumerate() {
                    blk.adjoint_into(&(&p[k] * blk.apply(ys) * &it.z[k]), &mut hy);
                }
                dy += h_chol.solve(&(&rhs - DVector::from_vec(hy)));
            }
            let ys = dy.as_slice();
            let ds: Vec<DMatrix<f64>> =
                self.red.blocks.iter().zip(&res.rs).map(|(blk, r)| blk.apply(ys) + r).collect();
            let dz: Vec<DMatrix<f64>> = (0..nb)
                .map(|k| {
                    let mut t = &p[k] * (sigma * res.mu) - &it.z[k] - sym(&(&p[k] * &ds[k] * &it.z[k]));
                    if let Some(e) = extra {
                        t -= sym(&e[k]);
                    }
                    t
                })
                .collect();
            Direction { dy, ds, dz }
        };
        let steps = |d: &Direction| -> (f64, f64) {
            let ap = s_chol.iter().zip(&d.ds).map(|(ch, ds)| max_step(ch, ds)).fold(f64::INFINITY, f64::min);
            let ad = z_chol.iter().zip(&d.dz).map(|(ch, dz)| max_step(ch, dz)).fold(f64::INFINITY, f64::min);
            (ap, ad)
        };

        let pred = direction(0.0, None);
        let (ap, ad) = steps(&pred);
        let (ap1, ad1) = (ap.min(1.0), ad.min(1.0));
        let mu_aff: f64 = (0..nb)
            .map(|k| frob(&(&it.s[k] + &pred.ds[k] * ap1), &(&it.z[k] + &pred.dz[k] * ad1)))
            .sum::<f64>()
            / self.total_dim;
        let ratio = (mu_aff / res.mu).clamp(0.0, 1.0);
        let expo = if ap1.min(ad1) > 0.2 { 3.0 } else { 2.0 };
        let sigma = ratio.powf(expo).clamp(0.0, 1.0);
        let extra: Vec<DMatrix<f64>> = (0..nb).map(|k| &p[k] * &pred.ds[k] * &pred.dz[k]).collect();
        let corr = direction(sigma, Some(&extra));
        let (ap, ad) = steps(&corr);
        let gamma = 0.9 + 0.09 * ap1.min(ad1);
        let alpha_p = (gamma * ap).min(1.0);
        let alpha_d = (gamma * ad).min(1.0);

        it.y.axpy(alpha_p, &corr.dy, 1.0);
        for k in 0..nb {
            it.s[k] += &corr.ds[k] * alpha_p;
            it.z[k] += &corr.dz[k] * alpha_d;
            it.s[k] = sym(&it.s[k]);
            it.z[k] = sym(&it.z[k]);
        }
        Some((alpha_p, alpha_d))
    }
}
