//! Mixture-order estimation from the spectrum of the mixing-measure moment
//! matrix, the flatness test, and atom/weight extraction from a flat matrix.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Schur};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sorted_symmetric_eigen;
use crate::polybasis::{moment_matrix, GradedBasis, PseudoMomentSequence};
use crate::relax::{build_relaxation, RelaxationSpec, VarGroup};
use crate::sdp::{duality_gap, moment_vector_unchecked, solve, SolverOptions, Status};

/// Cumulative-energy rank of a PSD matrix.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RankEstimate {
    /// Descending, clipped at zero.
    pub eigenvalues: Vec<f64>,
    pub khat: usize,
    pub tol: f64,
    /// Set when the matrix has no positive spectrum.
    pub degenerate: bool,
}

/// Smallest `r` whose leading eigenvalues carry a `1 - tol` share of the trace.
pub fn estimate_rank(m: &DMatrix<f64>, tol: f64) -> RankEstimate {
    let (vals, _) = sorted_symmetric_eigen(m);
    rank_from_spectrum(vals.iter().map(|v| v.max(0.0)).collect(), tol)
}

fn rank_from_spectrum(eigenvalues: Vec<f64>, tol: f64) -> RankEstimate {
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return RankEstimate { eigenvalues, khat: 0, tol, degenerate: true };
    }
    let target = (1.0 - tol) * total;
    let mut acc = 0.0;
    let mut khat = eigenvalues.len();
    for (r, v) in eigenvalues.iter().enumerate() {
        acc += v;
        if acc >= target {
            khat = r + 1;
            break;
        }
    }
    RankEstimate { eigenvalues, khat, tol, degenerate: false }
}

/// Ranks of `M_d(phi)` and `M_{d - shift}(phi)`.
pub fn flatness_ranks(phi: &PseudoMomentSequence, d: usize, shift: usize, tol: f64) -> Result<(usize, usize)> {
    if shift > d {
        return Err(Error::DegreeOverflow { needed: shift, available: d });
    }
    let big = estimate_rank(&moment_matrix(phi, d)?, tol);
    let small = estimate_rank(&moment_matrix(phi, d - shift)?, tol);
    Ok((big.khat, small.khat))
}

/// True when both matrices have the same cumulative-energy rank.
pub fn flatness_check(phi: &PseudoMomentSequence, d: usize, d_min: usize, tol: f64) -> Result<bool> {
    let (a, b) = flatness_ranks(phi, d, d_min, tol)?;
    Ok(a == b && a > 0)
}

/// Lexicographic order on parameter vectors.
pub fn canonical_order(atoms: &mut [Vec<f64>]) {
    atoms.sort_by(|a, b| {
        a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
}

/// Atoms of a flat moment matrix of rank `k`.
///
/// `m` is indexed by the first `m.nrows()` monomials of `basis`. The factor
/// `V` of the top-`k` eigenpairs is reduced to column-echelon form on greedily
/// chosen pivot monomials; multiplication matrices are read off the echelon
/// rows of the shifted monomials and jointly triangularized through the real
/// Schur form of a random combination.
pub fn extract_atoms(m: &DMatrix<f64>, basis: &GradedBasis, k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let n = m.nrows();
    if k == 0 || k > n {
        return Err(Error::Extraction(format!("rank {k} for a {n}x{n} matrix")));
    }
    if n > basis.len() {
        return Err(Error::DimensionMismatch { expected: basis.len(), got: n });
    }
    let rows = &basis.monomials()[..n];
    let d = rows.last().map(|r| r.degree()).unwrap_or(0);
    let p = basis.nvars();

    let (vals, vecs) = sorted_symmetric_eigen(m);
    if vals[k - 1] <= 0.0 {
        return Err(Error::Extraction(format!("matrix has fewer than {k} positive eigenvalues")));
    }
    let mut v = DMatrix::zeros(n, k);
    for j in 0..k {
        v.set_column(j, &(vecs.column(j) * vals[j].sqrt()));
    }

    // greedy pivots in graded order
    let max_norm = (0..n).map(|i| v.row(i).norm()).fold(0.0f64, f64::max);
    let mut ortho: Vec<DVector<f64>> = Vec::new();
    let mut pivots = Vec::new();
    for i in 0..n {
        if pivots.len() == k {
            break;
        }
        let mut r: DVector<f64> = v.row(i).transpose();
        for _ in 0..2 {
            for q in &ortho {
                let t = q.dot(&r);
                r.axpy(-t, q, 1.0);
            }
        }
        let rn = r.norm();
        if rn > 1e-8 * max_norm {
            ortho.push(r / rn);
            pivots.push(i);
        }
    }
    if pivots.len() < k {
        return Err(Error::Extraction(format!("found {} independent rows for rank {k}; increase d", pivots.len())));
    }
    if let Some(&bad) = pivots.iter().find(|&&i| rows[i].degree() + 1 > d) {
        return Err(Error::Extraction(format!("pivot monomial {} has top degree; increase d", rows[bad])));
    }

    let mut vp = DMatrix::zeros(k, k);
    for (j, &i) in pivots.iter().enumerate() {
        vp.set_row(j, &v.row(i));
    }
    // U = V Vp^{-1}, solved in least squares against numerical noise
    let svd = vp.transpose().svd(true, true);
    let u = svd
        .solve(&v.transpose(), 1e-14)
        .map_err(|e| Error::Extraction(e.to_string()))?
        .transpose();

    let mut mult: Vec<DMatrix<f64>> = Vec::with_capacity(p);
    for var in 0..p {
        let mut ni = DMatrix::zeros(k, k);
        for (j, &i) in pivots.iter().enumerate() {
            let shifted = rows[i].add(&crate::polybasis::MultiIndex::unit(p, var));
            let pos = basis
                .position(&shifted)
                .filter(|&q| q < n)
                .ok_or_else(|| Error::Extraction("shifted pivot outside the matrix; increase d".into()))?;
            ni.set_row(j, &u.row(pos));
        }
        mult.push(ni);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kappa: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = kappa.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    kappa.iter_mut().for_each(|x| *x /= norm);
    let mut combo = DMatrix::zeros(k, k);
    for (ni, c) in mult.iter().zip(&kappa) {
        combo += ni * *c;
    }
    let (q, _) = Schur::new(combo).unpack();
    let mut atoms: Vec<Vec<f64>> = (0..k)
        .map(|col| {
            let qk = q.column(col);
            mult.iter().map(|ni| qk.dot(&(ni * qk))).collect()
        })
        .collect();
    canonical_order(&mut atoms);
    Ok(atoms)
}

/// Atoms with nonnegative weights.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AtomicMeasure {
    pub atoms: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl AtomicMeasure {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn moments(&self, maxdeg: usize) -> Result<PseudoMomentSequence> {
        PseudoMomentSequence::from_atoms(maxdeg, &self.atoms, &self.weights)
    }

    /// Largest absolute deviation between the measure's moments and `phi`.
    pub fn moment_residual(&self, phi: &PseudoMomentSequence) -> Result<f64> {
        let own = self.moments(phi.maxdeg())?;
        Ok(own.values().iter().zip(phi.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    /// Keeps the `k` heaviest atoms (renormalizing the weights).
    pub fn top_k(&self, k: usize) -> AtomicMeasure {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.weights[b].total_cmp(&self.weights[a]));
        idx.truncate(k);
        idx.sort();
        let mass: f64 = self.weights.iter().sum();
        let kept: f64 = idx.iter().map(|&i| self.weights[i]).sum();
        let s = if kept > 0.0 { mass / kept } else { 1.0 };
        AtomicMeasure {
            atoms: idx.iter().map(|&i| self.atoms[i].clone()).collect(),
            weights: idx.iter().map(|&i| self.weights[i] * s).collect(),
        }
    }
}

/// Merges atoms closer than `1e-6` (keeping the first of each cluster).
fn merge_close(atoms: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for a in atoms {
        let close = out.iter().any(|b| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt() < 1e-6);
        if !close {
            out.push(a.clone());
        }
    }
    out
}

/// Least-squares weights against `phi_gamma`, `|gamma| <= d`; negatives
/// clipped and the total rescaled to `phi_0`.
pub fn recover_weights(atoms: &[Vec<f64>], phi: &PseudoMomentSequence, d: usize) -> Result<AtomicMeasure> {
    if atoms.is_empty() {
        return Err(Error::Extraction("no atoms".into()));
    }
    if d > phi.maxdeg() {
        return Err(Error::DegreeOverflow { needed: d, available: phi.maxdeg() });
    }
    let atoms = merge_close(atoms);
    let rows = phi.basis().prefix_len(d);
    let k = atoms.len();
    let mut vander = DMatrix::zeros(rows, k);
    for (g, gamma) in phi.basis().monomials()[..rows].iter().enumerate() {
        for (j, a) in atoms.iter().enumerate() {
            vander[(g, j)] = gamma.eval(a);
        }
    }
    let rhs = DVector::from_column_slice(&phi.values()[..rows]);
    let w = vander
        .svd(true, true)
        .solve(&rhs, 1e-13)
        .map_err(|e| Error::Extraction(e.to_string()))?;
    let mut weights: Vec<f64> = w.iter().map(|x| x.max(0.0)).collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Extraction("all recovered weights are nonpositive".into()));
    }
    let mass = phi.mass();
    weights.iter_mut().for_each(|x| *x *= mass / total);
    Ok(AtomicMeasure { atoms, weights })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Algorithm1Options {
    pub tol: f64,
    pub max_order: usize,
    pub seed: u64,
    /// Check ranks on the moment matrix of the location parameters only.
    pub principal_submatrix: bool,
    pub solver: SolverOptions,
}

impl Default for Algorithm1Options {
    fn default() -> Self {
        Algorithm1Options {
            tol: 1e-2,
            max_order: 4,
            seed: 0,
            principal_submatrix: false,
            solver: SolverOptions::default(),
        }
    }
}

/// One relaxation order of the loop.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrderStep {
    pub order: usize,
    pub status: Status,
    pub objective: f64,
    pub duality_gap: Option<f64>,
    pub rank: usize,
    pub shifted_rank: usize,
    pub flat: bool,
    pub eigenvalues: Vec<f64>,
    pub solve_seconds: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    /// Flat at some order; atoms extracted.
    Flat,
    /// Not flat at the last order; top eigenspace extracted anyway.
    Approximate,
    /// No atoms could be produced.
    Failed,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Algorithm1Report {
    pub status: FitStatus,
    pub khat: usize,
    pub measure: Option<AtomicMeasure>,
    pub order: usize,
    pub objective: f64,
    pub duality_gap: Option<f64>,
    pub flatness_shift: usize,
    pub rank_rule: String,
    pub trace: Vec<OrderStep>,
    pub message: Option<String>,
    /// Final mixing-measure moments, kept for diagnostics.
    #[serde(skip)]
    pub phi: Option<PseudoMomentSequence>,
}

/// Solve, test flatness, extract; raise the order until flat or `max_order`.
///
/// Flatness compares `M_d(phi)` with `M_{d-s}(phi)` where `s` is the largest
/// half-degree of the parameter-set constraints (at least one).
pub fn run_algorithm1(
    mu: &PseudoMomentSequence,
    spec: &RelaxationSpec,
    opts: &Algorithm1Options,
) -> Result<Algorithm1Report> {
    if opts.max_order < spec.order {
        return Err(Error::InvalidSpec(format!("max order {} below order {}", opts.max_order, spec.order)));
    }
    let shift = spec.set.max_half_degree().max(1);
    let loc = spec.family.location_params();
    let mut trace = Vec::new();
    let mut last: Option<(PseudoMomentSequence, usize, f64, Option<f64>)> = None;
    let mut message = None;

    for order in spec.order..=opts.max_order {
        let spec_d = spec.with_order(order)?;
        let mu_d = mu.truncate(2 * order)?;
        let problem = build_relaxation(&mu_d, &spec_d)?;
        let started = Instant::now();
        let sol = solve(&problem, &opts.solver)?;
        let secs = started.elapsed().as_secs_f64();
        log::info!(
            "order {order}: {} after {} iterations, objective {:.6e}, {:.2}s",
            sol.status,
            sol.iterations,
            sol.primal_obj,
            secs
        );
        let phi = moment_vector_unchecked(&sol, VarGroup::Phi)?;
        let gap = duality_gap(&sol).ok();
        let ranked = if opts.principal_submatrix { phi.marginal(&loc)? } else { phi.clone() };
        let big = estimate_rank(&moment_matrix(&ranked, order)?, opts.tol);
        let small = estimate_rank(&moment_matrix(&ranked, order - shift.min(order))?, opts.tol);
        let flat = sol.is_optimal() && big.khat == small.khat && big.khat > 0;
        trace.push(OrderStep {
            order,
            status: sol.status,
            objective: sol.primal_obj,
            duality_gap: gap,
            rank: big.khat,
            shifted_rank: small.khat,
            flat,
            eigenvalues: big.eigenvalues.clone(),
            solve_seconds: secs,
            iterations: sol.iterations,
        });
        let khat = estimate_rank(&moment_matrix(&phi, order)?, opts.tol).khat;
        if flat {
            match extract_measure(&phi, order, if opts.principal_submatrix { big.khat } else { khat }, opts.seed) {
                Ok(measure) => {
                    return Ok(Algorithm1Report {
                        status: FitStatus::Flat,
                        khat: measure.len(),
                        measure: Some(measure),
                        order,
                        objective: sol.primal_obj,
                        duality_gap: gap,
                        flatness_shift: shift,
                        rank_rule: rank_rule(opts),
                        trace,
                        message: None,
                        phi: Some(phi),
                    })
                }
                Err(e) => {
                    log::info!("order {order}: flat but extraction failed ({e})");
                    message = Some(e.to_string());
                }
            }
        }
        last = Some((phi, if opts.principal_submatrix { big.khat } else { khat }, sol.primal_obj, gap));
        if sol.status == Status::Infeasible {
            break;
        }
    }

    let (phi, khat, objective, gap) = last.expect("at least one order was solved");
    let order = trace.last().map(|s| s.order).unwrap_or(spec.order);
    let (status, measure) = match extract_measure(&phi, order, khat, opts.seed) {
        Ok(m) => (FitStatus::Approximate, Some(m)),
        Err(e) => {
            message = Some(e.to_string());
            (FitStatus::Failed, None)
        }
    };
    Ok(Algorithm1Report {
        status,
        khat: measure.as_ref().map(|m| m.len()).unwrap_or(khat),
        measure,
        order,
        objective,
        duality_gap: gap,
        flatness_shift: shift,
        rank_rule: rank_rule(opts),
        trace,
        message,
        phi: Some(phi),
    })
}

fn rank_rule(opts: &Algorithm1Options) -> String {
    let target = if opts.principal_submatrix { "location-parameter submatrix" } else { "full moment matrix" };
    format!("cumulative-energy rank with tol {} on both matrices ({target})", opts.tol)
}

/// Atoms and weights from `M_d(phi)` at rank `k`.
pub fn extract_measure(phi: &PseudoMomentSequence, d: usize, k: usize, seed: u64) -> Result<AtomicMeasure> {
    let m = moment_matrix(phi, d)?;
    let atoms = extract_atoms(&m, phi.basis(), k, seed)?;
    recover_weights(&atoms, phi, d)
}
