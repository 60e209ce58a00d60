//! Multi-indices, graded monomial bases, sparse polynomials and the
//! pseudo-moment matrices built from a truncated moment sequence.
//!
//! Monomials are ordered graded-lexicographically: total degree first, then
//! exponent vectors in decreasing lexicographic order, so that the basis of
//! degree two in two variables reads `1, x1, x2, x1^2, x1 x2, x2^2`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponent vector of a monomial.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiIndex {
    exps: Vec<u32>,
    degree: u32,
}

impl MultiIndex {
    pub fn new(exps: Vec<u32>) -> Self {
        let degree = exps.iter().sum();
        MultiIndex { exps, degree }
    }

    pub fn zero(nvars: usize) -> Self {
        MultiIndex { exps: vec![0; nvars], degree: 0 }
    }

    /// The exponent vector of the single variable `x_i`.
    pub fn unit(nvars: usize, i: usize) -> Self {
        let mut exps = vec![0; nvars];
        exps[i] = 1;
        MultiIndex { exps, degree: 1 }
    }

    pub fn exps(&self) -> &[u32] {
        &self.exps
    }

    pub fn nvars(&self) -> usize {
        self.exps.len()
    }

    pub fn degree(&self) -> usize {
        self.degree as usize
    }

    pub fn is_zero(&self) -> bool {
        self.degree == 0
    }

    /// Exponent-wise sum (monomial product).
    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        debug_assert_eq!(self.nvars(), other.nvars());
        MultiIndex {
            exps: self.exps.iter().zip(&other.exps).map(|(a, b)| a + b).collect(),
            degree: self.degree + other.degree,
        }
    }

    pub fn scale(&self, k: u32) -> MultiIndex {
        MultiIndex { exps: self.exps.iter().map(|e| e * k).collect(), degree: self.degree * k }
    }

    /// Concatenation `(alpha, beta)` used for joint moments over product spaces.
    pub fn concat(&self, other: &MultiIndex) -> MultiIndex {
        let mut exps = self.exps.clone();
        exps.extend_from_slice(&other.exps);
        MultiIndex { exps, degree: self.degree + other.degree }
    }

    /// Keeps only the listed coordinates, in the given order.
    pub fn select(&self, coords: &[usize]) -> MultiIndex {
        MultiIndex::new(coords.iter().map(|&c| self.exps[c]).collect())
    }

    /// Evaluates `x^alpha`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.exps
            .iter()
            .zip(x)
            .filter(|(e, _)| **e > 0)
            .map(|(&e, &v)| v.powi(e as i32))
            .product()
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree.cmp(&other.degree).then_with(|| other.exps.cmp(&self.exps))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, e) in self.exps.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, ")")
    }
}

/// `binomial(n + d, d)` with overflow detection.
pub fn basis_size(nvars: usize, maxdeg: usize) -> Option<usize> {
    let mut acc: usize = 1;
    for k in 1..=maxdeg {
        acc = acc.checked_mul(nvars + k)? / k;
    }
    Some(acc)
}

/// The monomials of `N^n_d` in graded order, with a reverse lookup.
#[derive(Debug, Clone)]
pub struct GradedBasis {
    nvars: usize,
    maxdeg: usize,
    monomials: Vec<MultiIndex>,
    positions: HashMap<MultiIndex, usize>,
}

fn push_compositions(nvars: usize, deg: u32, prefix: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
    if prefix.len() + 1 == nvars {
        prefix.push(deg);
        out.push(MultiIndex::new(prefix.clone()));
        prefix.pop();
        return;
    }
    for first in (0..=deg).rev() {
        prefix.push(first);
        push_compositions(nvars, deg - first, prefix, out);
        prefix.pop();
    }
}

impl GradedBasis {
    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn maxdeg(&self) -> usize {
        self.maxdeg
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn monomials(&self) -> &[MultiIndex] {
        &self.monomials
    }

    pub fn get(&self, pos: usize) -> &MultiIndex {
        &self.monomials[pos]
    }

    pub fn position(&self, alpha: &MultiIndex) -> Option<usize> {
        self.positions.get(alpha).copied()
    }

    /// Number of monomials of degree at most `d` (a prefix of the ordering).
    pub fn prefix_len(&self, d: usize) -> usize {
        basis_size(self.nvars, d.min(self.maxdeg)).unwrap_or(self.len())
    }
}

/// Enumerates `N^nvars_maxdeg` in graded order, constant monomial first.
pub fn enumerate_basis(nvars: usize, maxdeg: usize) -> Result<GradedBasis> {
    if nvars == 0 {
        return Err(Error::Sizing { nvars, maxdeg });
    }
    let size = basis_size(nvars, maxdeg).ok_or(Error::Sizing { nvars, maxdeg })?;
    // dense storage beyond this point is not meaningful
    if size > 50_000_000 {
        return Err(Error::Sizing { nvars, maxdeg });
    }
    let mut monomials = Vec::with_capacity(size);
    let mut prefix = Vec::with_capacity(nvars);
    for deg in 0..=maxdeg as u32 {
        push_compositions(nvars, deg, &mut prefix, &mut monomials);
    }
    debug_assert_eq!(monomials.len(), size);
    let positions = monomials.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
    Ok(GradedBasis { nvars, maxdeg, monomials, positions })
}

/// Sparse polynomial with real coefficients; zero coefficients are never stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    nvars: usize,
    coeffs: BTreeMap<MultiIndex, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial { nvars, coeffs: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        Polynomial::monomial(MultiIndex::zero(nvars), c)
    }

    pub fn monomial(alpha: MultiIndex, c: f64) -> Self {
        let nvars = alpha.nvars();
        let mut coeffs = BTreeMap::new();
        if c != 0.0 {
            coeffs.insert(alpha, c);
        }
        Polynomial { nvars, coeffs }
    }

    /// The coordinate polynomial `x_i`.
    pub fn var(nvars: usize, i: usize) -> Self {
        Polynomial::monomial(MultiIndex::unit(nvars, i), 1.0)
    }

    pub fn from_terms(nvars: usize, terms: impl IntoIterator<Item = (MultiIndex, f64)>) -> Self {
        let mut p = Polynomial::zero(nvars);
        for (alpha, c) in terms {
            p.add_term(alpha, c);
        }
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn add_term(&mut self, alpha: MultiIndex, c: f64) {
        assert_eq!(alpha.nvars(), self.nvars, "monomial arity mismatch");
        if c == 0.0 {
            return;
        }
        let entry = self.coeffs.entry(alpha);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let s = *o.get() + c;
                if s == 0.0 {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    pub fn coeff(&self, alpha: &MultiIndex) -> f64 {
        self.coeffs.get(alpha).copied().unwrap_or(0.0)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.coeffs.iter().map(|(a, c)| (a, *c))
    }

    pub fn support_len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Degree of the polynomial; the zero polynomial has degree 0.
    pub fn degree(&self) -> usize {
        self.coeffs.keys().map(|a| a.degree()).max().unwrap_or(0)
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        for (a, c) in other.terms() {
            out.add_term(a.clone(), c);
        }
        out
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        Polynomial::from_terms(self.nvars, self.terms().map(|(a, c)| (a.clone(), c * s)))
    }

    pub fn mul_monomial(&self, alpha: &MultiIndex, c: f64) -> Polynomial {
        Polynomial::from_terms(self.nvars, self.terms().map(|(a, v)| (a.add(alpha), v * c)))
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut out = Polynomial::zero(self.nvars);
        for (a, c) in other.terms() {
            for (b, v) in self.terms() {
                out.add_term(a.add(b), c * v);
            }
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms().map(|(a, c)| c * a.eval(x)).sum()
    }

    /// Re-expresses a polynomial in `nvars` variables, mapping variable `i` to `mapping[i]`.
    pub fn embed(&self, nvars: usize, mapping: &[usize]) -> Polynomial {
        Polynomial::from_terms(
            nvars,
            self.terms().map(|(a, c)| {
                let mut exps = vec![0; nvars];
                for (i, &e) in a.exps().iter().enumerate() {
                    exps[mapping[i]] += e;
                }
                (MultiIndex::new(exps), c)
            }),
        )
    }
}

/// A truncated (pseudo-)moment sequence, dense over `N^nvars_maxdeg`.
#[derive(Clone, Debug)]
pub struct PseudoMomentSequence {
    basis: Arc<GradedBasis>,
    values: Vec<f64>,
}

impl PseudoMomentSequence {
    pub fn new(basis: Arc<GradedBasis>, values: Vec<f64>) -> Result<Self> {
        if values.len() != basis.len() {
            return Err(Error::DimensionMismatch { expected: basis.len(), got: values.len() });
        }
        Ok(PseudoMomentSequence { basis, values })
    }

    pub fn from_fn(nvars: usize, maxdeg: usize, f: impl Fn(&MultiIndex) -> f64) -> Result<Self> {
        let basis = Arc::new(enumerate_basis(nvars, maxdeg)?);
        let values = basis.monomials().iter().map(f).collect();
        Ok(PseudoMomentSequence { basis, values })
    }

    /// Exact moments of `sum_i w_i delta_{x_i}`.
    pub fn from_atoms(maxdeg: usize, atoms: &[Vec<f64>], weights: &[f64]) -> Result<Self> {
        let nvars = atoms.first().map(|a| a.len()).ok_or_else(|| Error::Degenerate("no atoms".into()))?;
        if atoms.len() != weights.len() {
            return Err(Error::DimensionMismatch { expected: atoms.len(), got: weights.len() });
        }
        PseudoMomentSequence::from_fn(nvars, maxdeg, |alpha| {
            atoms.iter().zip(weights).map(|(x, w)| w * alpha.eval(x)).sum()
        })
    }

    pub fn nvars(&self) -> usize {
        self.basis.nvars()
    }

    pub fn maxdeg(&self) -> usize {
        self.basis.maxdeg()
    }

    pub fn basis(&self) -> &Arc<GradedBasis> {
        &self.basis
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mass(&self) -> f64 {
        self.values[0]
    }

    pub fn get(&self, alpha: &MultiIndex) -> Option<f64> {
        self.basis.position(alpha).map(|p| self.values[p])
    }

    /// Restricts to moments of degree at most `maxdeg`.
    pub fn truncate(&self, maxdeg: usize) -> Result<PseudoMomentSequence> {
        if maxdeg > self.maxdeg() {
            return Err(Error::DegreeOverflow { needed: maxdeg, available: self.maxdeg() });
        }
        let basis = Arc::new(enumerate_basis(self.nvars(), maxdeg)?);
        let values = self.values[..basis.len()].to_vec();
        Ok(PseudoMomentSequence { basis, values })
    }

    /// Moments of the push-forward onto the listed coordinates.
    pub fn marginal(&self, coords: &[usize]) -> Result<PseudoMomentSequence> {
        PseudoMomentSequence::from_fn(coords.len(), self.maxdeg(), |beta| {
            let mut exps = vec![0; self.nvars()];
            for (k, &c) in coords.iter().enumerate() {
                exps[c] = beta.exps()[k];
            }
            self.get(&MultiIndex::new(exps)).unwrap_or(0.0)
        })
    }
}

/// The Riesz functional `L_y(f) = sum_alpha f_alpha y_alpha`.
pub fn riesz(y: &PseudoMomentSequence, f: &Polynomial) -> Result<f64> {
    if f.nvars() != y.nvars() {
        return Err(Error::DimensionMismatch { expected: y.nvars(), got: f.nvars() });
    }
    if f.degree() > y.maxdeg() {
        return Err(Error::DegreeOverflow { needed: f.degree(), available: y.maxdeg() });
    }
    Ok(f.terms().map(|(a, c)| c * y.get(a).expect("degree checked")).sum())
}

/// Moment matrix of order `d`: entry `(alpha, beta)` is `y_{alpha+beta}`.
pub fn moment_matrix(y: &PseudoMomentSequence, d: usize) -> Result<DMatrix<f64>> {
    localizing_matrix(y, &Polynomial::constant(y.nvars(), 1.0), d)
}

/// Localizing matrix of `r` at order `d`, indexed by `N^n_{d - ceil(deg r / 2)}`.
pub fn localizing_matrix(y: &PseudoMomentSequence, r: &Polynomial, d: usize) -> Result<DMatrix<f64>> {
    if r.nvars() != y.nvars() {
        return Err(Error::DimensionMismatch { expected: y.nvars(), got: r.nvars() });
    }
    let half = r.degree().div_ceil(2);
    if half > d {
        return Err(Error::DegreeOverflow { needed: r.degree(), available: 2 * d });
    }
    if 2 * d > y.maxdeg() {
        return Err(Error::DegreeOverflow { needed: 2 * d, available: y.maxdeg() });
    }
    let rows = &y.basis().monomials()[..y.basis().prefix_len(d - half)];
    let n = rows.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let ab = rows[i].add(&rows[j]);
            let v: f64 = r
                .terms()
                .map(|(g, c)| c * y.get(&ab.add(g)).expect("degree checked"))
                .sum();
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{is_psd, numerical_rank};
    use proptest::prelude::*;

    #[test]
    fn basis_sizes_and_order() {
        let b = enumerate_basis(1, 1).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.get(0).exps(), &[0]);
        assert_eq!(b.get(1).exps(), &[1]);
        assert_eq!(enumerate_basis(2, 2).unwrap().len(), 6);
        assert_eq!(enumerate_basis(4, 4).unwrap().len(), 70);
        let b = enumerate_basis(2, 2).unwrap();
        let listed: Vec<_> = b.monomials().iter().map(|m| m.exps().to_vec()).collect();
        assert_eq!(listed, vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]);
        for w in b.monomials().windows(2) {
            assert!(w[0] < w[1]);
        }
    }

    #[test]
    fn basis_overflow_is_a_sizing_error() {
        assert!(matches!(enumerate_basis(1000, 1000), Err(Error::Sizing { .. })));
        assert!(enumerate_basis(0, 3).is_err());
    }

    #[test]
    fn riesz_examples() {
        let y = PseudoMomentSequence::from_fn(1, 4, |a| 0.5f64.powi(a.degree() as i32)).unwrap();
        assert_eq!(riesz(&y, &Polynomial::constant(1, 1.0)).unwrap(), 1.0);
        let x2 = Polynomial::monomial(MultiIndex::new(vec![2]), 1.0);
        assert!((riesz(&y, &x2).unwrap() - 0.25).abs() < 1e-15);
        let x5 = Polynomial::monomial(MultiIndex::new(vec![5]), 1.0);
        assert!(matches!(riesz(&y, &x5), Err(Error::DegreeOverflow { .. })));
    }

    #[test]
    fn riesz_of_cubic_against_gaussian_moments() {
        // N(1, 1) raw moments: 1, 1, 2, 4, 10
        let raw = [1.0, 1.0, 2.0, 4.0, 10.0];
        let y = PseudoMomentSequence::from_fn(1, 4, |a| raw[a.degree()]).unwrap();
        let x3 = Polynomial::monomial(MultiIndex::new(vec![3]), 1.0);
        assert!((riesz(&y, &x3).unwrap() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn hankel_two_by_two() {
        let y = PseudoMomentSequence::new(Arc::new(enumerate_basis(1, 2).unwrap()), vec![1.0, 0.3, 0.2]).unwrap();
        let m = moment_matrix(&y, 1).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.2]));
    }

    #[test]
    fn dirac_moment_matrix_is_rank_one() {
        let y = PseudoMomentSequence::from_atoms(6, &[vec![0.3]], &[1.0]).unwrap();
        let m = moment_matrix(&y, 3).unwrap();
        let v = nalgebra::DVector::from_vec(vec![1.0, 0.3, 0.09, 0.027]);
        let outer = &v * v.transpose();
        assert!((m - outer).abs().max() < 1e-15);
    }

    #[test]
    fn two_atom_moment_matrix_rank_two() {
        let y = PseudoMomentSequence::from_atoms(6, &[vec![0.2], vec![0.8]], &[0.5, 0.5]).unwrap();
        let m = moment_matrix(&y, 3).unwrap();
        assert!(is_psd(&m, 1e-10));
        assert_eq!(numerical_rank(&m, 1e-10), 2);
    }

    #[test]
    fn localizing_examples() {
        let r = Polynomial::from_terms(1, [(MultiIndex::new(vec![1]), 1.0), (MultiIndex::new(vec![2]), -1.0)]);
        let inside = PseudoMomentSequence::from_atoms(4, &[vec![0.3]], &[1.0]).unwrap();
        let loc = localizing_matrix(&inside, &r, 2).unwrap();
        assert_eq!(loc.nrows(), 2);
        assert!(is_psd(&loc, 1e-10));
        let outside = PseudoMomentSequence::from_atoms(4, &[vec![1.5]], &[1.0]).unwrap();
        let loc = localizing_matrix(&outside, &r, 2).unwrap();
        assert!(loc.symmetric_eigen().eigenvalues.min() < -1e-6);
    }

    #[test]
    fn localizing_with_unit_is_moment_matrix() {
        let y = PseudoMomentSequence::from_fn(2, 4, |a| 1.0 / (1.0 + a.degree() as f64)).unwrap();
        let one = Polynomial::constant(2, 1.0);
        assert_eq!(localizing_matrix(&y, &one, 2).unwrap(), moment_matrix(&y, 2).unwrap());
    }

    #[test]
    fn moment_matrix_rejects_short_sequence() {
        let y = PseudoMomentSequence::from_fn(1, 3, |_| 1.0).unwrap();
        assert!(moment_matrix(&y, 2).is_err());
    }

    fn atoms_strategy() -> impl Strategy<Value = (usize, Vec<Vec<f64>>, Vec<f64>)> {
        (1usize..=3, 1usize..=4).prop_flat_map(|(n, k)| {
            (
                Just(n),
                prop::collection::vec(prop::collection::vec(-1.0f64..1.0, n), k),
                prop::collection::vec(0.05f64..1.0, k),
            )
        })
    }

    proptest! {
        #[test]
        fn atomic_moment_matrices_are_psd_symmetric_hankel((n, atoms, weights) in atoms_strategy()) {
            let y = PseudoMomentSequence::from_atoms(6, &atoms, &weights).unwrap();
            let m = moment_matrix(&y, 3).unwrap();
            prop_assert_eq!(&m, &m.transpose());
            let eig = m.clone().symmetric_eigen().eigenvalues;
            prop_assert!(eig.min() >= -1e-10 * eig.max().max(1.0));
            let rows = &y.basis().monomials()[..m.nrows()];
            for i in 0..rows.len() {
                for j in 0..rows.len() {
                    let s = rows[i].add(&rows[j]);
                    prop_assert_eq!(m[(i, j)], y.get(&s).unwrap());
                }
            }
            if n == 1 {
                // Hankel: depends on i + j only
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        prop_assert_eq!(m[(i, j)], y.values()[i + j]);
                    }
                }
            }
        }

        #[test]
        fn rank_counts_distinct_atoms(xs in prop::collection::vec(0.0f64..1.0, 1..4)) {
            let mut xs = xs;
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            prop_assume!(xs.windows(2).all(|w| w[1] - w[0] > 0.15));
            let atoms: Vec<_> = xs.iter().map(|&x| vec![x]).collect();
            let w = vec![1.0 / xs.len() as f64; xs.len()];
            let y = PseudoMomentSequence::from_atoms(8, &atoms, &w).unwrap();
            let m = moment_matrix(&y, 4).unwrap();
            prop_assert_eq!(numerical_rank(&m, 1e-10), xs.len());
        }

        #[test]
        fn riesz_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0,
                           fc in prop::collection::vec(-1.0f64..1.0, 10),
                           gc in prop::collection::vec(-1.0f64..1.0, 10),
                           yv in prop::collection::vec(-1.0f64..1.0, 10)) {
            let basis = Arc::new(enumerate_basis(2, 3).unwrap());
            let y = PseudoMomentSequence::new(basis.clone(), yv).unwrap();
            let f = Polynomial::from_terms(2, basis.monomials().iter().cloned().zip(fc));
            let g = Polynomial::from_terms(2, basis.monomials().iter().cloned().zip(gc));
            let lhs = riesz(&y, &f.scale(a).add(&g.scale(b))).unwrap();
            let rhs = a * riesz(&y, &f).unwrap() + b * riesz(&y, &g).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }
}
