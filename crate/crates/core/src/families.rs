//! Parametric component families whose raw moments are polynomials in the
//! component parameters, plus the semialgebraic parameter sets and the
//! regularizers placed on the mixing measure.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polybasis::{enumerate_basis, MultiIndex, Polynomial};

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `(2l - 1)!!` with the convention `(-1)!! = 1`.
fn odd_double_factorial(l: u32) -> f64 {
    (1..=l).map(|i| (2 * i - 1) as f64).product()
}

/// Raw moment `E[(m + sigma Z)^k]` as a polynomial in `(m, sigma)`.
pub fn gaussian1d_moment_poly(k: u32) -> Polynomial {
    let mut p = Polynomial::zero(2);
    for l in 0..=k / 2 {
        let c = binomial(k, 2 * l) * odd_double_factorial(l);
        p.add_term(MultiIndex::new(vec![k - 2 * l, 2 * l]), c);
    }
    p
}

/// Product of one-dimensional Gaussian moments over
/// `theta = (m_1, .., m_n, sigma_1, .., sigma_n)`.
pub fn gaussian_diag_moment_poly(alpha: &MultiIndex) -> Polynomial {
    let n = alpha.nvars();
    let mut out = Polynomial::constant(2 * n, 1.0);
    for (i, &k) in alpha.exps().iter().enumerate() {
        if k > 0 {
            out = out.mul(&gaussian1d_moment_poly(k).embed(2 * n, &[i, n + i]));
        }
    }
    out
}

/// Stirling numbers of the second kind `S(k, j)` for `j = 0..=k`.
pub fn stirling2_row(k: u32) -> Vec<f64> {
    let mut row = vec![1.0];
    for n in 1..=k as usize {
        let mut next = vec![0.0; n + 1];
        for j in 1..=n {
            let carry = if j < row.len() { j as f64 * row[j] } else { 0.0 };
            next[j] = carry + row[j - 1];
        }
        row = next;
    }
    row
}

/// Touchard polynomial: the `k`-th raw moment of `Poisson(lambda)`.
pub fn poisson_moment_poly(k: u32) -> Polynomial {
    let row = stirling2_row(k);
    Polynomial::from_terms(1, row.iter().enumerate().map(|(j, &s)| (MultiIndex::new(vec![j as u32]), s)))
}

/// `k! eta^k`, the `k`-th raw moment of an exponential with mean `eta`.
pub fn exponential_moment_poly(k: u32) -> Polynomial {
    let fact: f64 = (1..=k).map(|i| i as f64).product();
    Polynomial::monomial(MultiIndex::new(vec![k]), fact)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    GaussianDiagonal,
    Poisson,
    Exponential,
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FamilyKind::GaussianDiagonal => "gaussian_diagonal",
            FamilyKind::Poisson => "poisson",
            FamilyKind::Exponential => "exponential",
        };
        f.write_str(s)
    }
}

impl FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" | "gaussian_diagonal" => Ok(FamilyKind::GaussianDiagonal),
            "poisson" => Ok(FamilyKind::Poisson),
            "exponential" => Ok(FamilyKind::Exponential),
            other => Err(Error::Parse(format!("unknown family {other}"))),
        }
    }
}

/// A product family on `R^n` with polynomial moment map `alpha -> p_alpha(theta)`.
///
/// Components have independent coordinates. Moment polynomials are memoized.
pub struct ParametricFamily {
    kind: FamilyKind,
    data_dim: usize,
    cache: RwLock<HashMap<MultiIndex, Arc<Polynomial>>>,
}

impl fmt::Debug for ParametricFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParametricFamily").field("kind", &self.kind).field("data_dim", &self.data_dim).finish()
    }
}

impl Clone for ParametricFamily {
    fn clone(&self) -> Self {
        ParametricFamily::new(self.kind, self.data_dim)
    }
}

impl ParametricFamily {
    pub fn new(kind: FamilyKind, data_dim: usize) -> Self {
        ParametricFamily { kind, data_dim, cache: RwLock::new(HashMap::new()) }
    }

    pub fn gaussian(data_dim: usize) -> Self {
        Self::new(FamilyKind::GaussianDiagonal, data_dim)
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn param_dim(&self) -> usize {
        match self.kind {
            FamilyKind::GaussianDiagonal => 2 * self.data_dim,
            FamilyKind::Poisson | FamilyKind::Exponential => self.data_dim,
        }
    }

    /// Parameter coordinates that carry the component location.
    pub fn location_params(&self) -> Vec<usize> {
        (0..self.data_dim).collect()
    }

    /// Parameter coordinates belonging to data coordinate `i`.
    pub fn coordinate_params(&self, i: usize) -> Vec<usize> {
        match self.kind {
            FamilyKind::GaussianDiagonal => vec![i, self.data_dim + i],
            _ => vec![i],
        }
    }

    /// `p_alpha` with `deg(p_alpha) <= |alpha|`.
    pub fn moment_poly(&self, alpha: &MultiIndex) -> Arc<Polynomial> {
        assert_eq!(alpha.nvars(), self.data_dim, "moment index arity mismatch");
        if let Some(p) = self.cache.read().expect("moment cache poisoned").get(alpha) {
            return p.clone();
        }
        let p = Arc::new(match self.kind {
            FamilyKind::GaussianDiagonal => gaussian_diag_moment_poly(alpha),
            FamilyKind::Poisson => product_of_univariate(alpha, poisson_moment_poly),
            FamilyKind::Exponential => product_of_univariate(alpha, exponential_moment_poly),
        });
        self.cache.write().expect("moment cache poisoned").insert(alpha.clone(), p.clone());
        p
    }

    /// Exact moment `E_theta[x^alpha]`.
    pub fn moment(&self, alpha: &MultiIndex, theta: &[f64]) -> f64 {
        self.moment_poly(alpha).eval(theta)
    }

    /// Component mean.
    pub fn mean(&self, theta: &[f64]) -> Vec<f64> {
        theta[..self.data_dim].to_vec()
    }

    /// Per-coordinate standard deviations.
    pub fn std_dev(&self, theta: &[f64]) -> Vec<f64> {
        let n = self.data_dim;
        match self.kind {
            FamilyKind::GaussianDiagonal => theta[n..2 * n].iter().map(|s| s.abs()).collect(),
            FamilyKind::Poisson => theta[..n].iter().map(|l| l.max(0.0).sqrt()).collect(),
            FamilyKind::Exponential => theta[..n].iter().map(|e| e.abs()).collect(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, theta: &[f64], rng: &mut R) -> Vec<f64> {
        let n = self.data_dim;
        (0..n)
            .map(|i| match self.kind {
                FamilyKind::GaussianDiagonal => {
                    Normal::new(theta[i], theta[n + i].abs()).expect("finite sigma").sample(rng)
                }
                FamilyKind::Poisson => Poisson::new(theta[i].max(1e-12)).expect("positive rate").sample(rng),
                FamilyKind::Exponential => Exp::new(1.0 / theta[i]).expect("positive mean").sample(rng),
            })
            .collect()
    }

    /// Density (or mass function) of a one-dimensional member at `x`.
    pub fn density_1d(&self, theta: &[f64], x: f64) -> f64 {
        match self.kind {
            FamilyKind::GaussianDiagonal => {
                let (m, s) = (theta[0], theta[1].abs().max(1e-300));
                (-(x - m).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
            }
            FamilyKind::Exponential => {
                if x < 0.0 {
                    0.0
                } else {
                    (-x / theta[0]).exp() / theta[0]
                }
            }
            FamilyKind::Poisson => {
                let k = x.round();
                if k < 0.0 || (x - k).abs() > 1e-9 {
                    return 0.0;
                }
                let lf: f64 = (1..=k as u64).map(|i| (i as f64).ln()).sum();
                (k * theta[0].ln() - theta[0] - lf).exp()
            }
        }
    }

    /// The same family on a single data coordinate.
    pub fn univariate(&self) -> ParametricFamily {
        ParametricFamily::new(self.kind, 1)
    }
}

fn product_of_univariate(alpha: &MultiIndex, f: fn(u32) -> Polynomial) -> Polynomial {
    let n = alpha.nvars();
    let mut out = Polynomial::constant(n, 1.0);
    for (i, &k) in alpha.exps().iter().enumerate() {
        if k > 0 {
            out = out.mul(&f(k).embed(n, &[i]));
        }
    }
    out
}

/// `{theta : r_j(theta) >= 0}` with cached half-degrees `ceil(deg r_j / 2)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SemiAlgebraicSet {
    pvars: usize,
    constraints: Vec<Polynomial>,
    half_degrees: Vec<usize>,
    bounds: Option<Vec<(f64, f64)>>,
}

impl SemiAlgebraicSet {
    pub fn new(pvars: usize, constraints: Vec<Polynomial>) -> Result<Self> {
        for r in &constraints {
            if r.nvars() != pvars {
                return Err(Error::DimensionMismatch { expected: pvars, got: r.nvars() });
            }
            let is_unit = r.degree() == 0 && r.coeff(&MultiIndex::zero(pvars)) == 1.0;
            if r.degree() == 0 && !is_unit {
                return Err(Error::InvalidSet("constant constraint other than 1".into()));
            }
        }
        let half_degrees = constraints.iter().map(|r| r.degree().div_ceil(2)).collect();
        Ok(SemiAlgebraicSet { pvars, constraints, half_degrees, bounds: None })
    }

    pub fn pvars(&self) -> usize {
        self.pvars
    }

    pub fn constraints(&self) -> &[Polynomial] {
        &self.constraints
    }

    pub fn half_degrees(&self) -> &[usize] {
        &self.half_degrees
    }

    /// `max_j d_j` (zero for an unconstrained set).
    pub fn max_half_degree(&self) -> usize {
        self.half_degrees.iter().copied().max().unwrap_or(0)
    }

    pub fn bounds(&self) -> Option<&[(f64, f64)]> {
        self.bounds.as_deref()
    }

    /// Smallest constraint value at `theta`.
    pub fn min_constraint(&self, theta: &[f64]) -> f64 {
        self.constraints.iter().map(|r| r.eval(theta)).fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, theta: &[f64], tol: f64) -> bool {
        self.constraints.iter().all(|r| r.eval(theta) >= -tol)
    }

    /// Coordinate projection of a box set.
    pub fn project_box(&self, coords: &[usize]) -> Result<SemiAlgebraicSet> {
        let bounds = self
            .bounds
            .as_ref()
            .ok_or_else(|| Error::InvalidSet("projection is only available for box sets".into()))?;
        let (lo, hi): (Vec<f64>, Vec<f64>) = coords.iter().map(|&c| bounds[c]).unzip();
        box_set(&lo, &hi)
    }
}

/// Box `prod_i [l_i, u_i]` encoded as `(theta_i - l_i)(u_i - theta_i) >= 0`.
pub fn box_set(lowers: &[f64], uppers: &[f64]) -> Result<SemiAlgebraicSet> {
    if lowers.len() != uppers.len() {
        return Err(Error::DimensionMismatch { expected: lowers.len(), got: uppers.len() });
    }
    if lowers.is_empty() {
        return Err(Error::InvalidSet("empty box".into()));
    }
    let p = lowers.len();
    let mut constraints = Vec::with_capacity(p);
    for (i, (&l, &u)) in lowers.iter().zip(uppers).enumerate() {
        if !(l < u) || !l.is_finite() || !u.is_finite() {
            return Err(Error::InvalidSet(format!("bounds [{l}, {u}] on coordinate {i}")));
        }
        let t = Polynomial::var(p, i);
        let below = t.add(&Polynomial::constant(p, -l));
        let above = Polynomial::constant(p, u).add(&t.scale(-1.0));
        constraints.push(below.mul(&above));
    }
    let mut set = SemiAlgebraicSet::new(p, constraints)?;
    set.bounds = Some(lowers.iter().copied().zip(uppers.iter().copied()).collect());
    Ok(set)
}

/// `R(theta) = sum over nonzero gamma in N^p_d of theta^(2 gamma)`.
pub fn trace_regularizer(p: usize, d: usize) -> Polynomial {
    let basis = enumerate_basis(p, d).expect("regularizer basis");
    Polynomial::from_terms(p, basis.monomials().iter().skip(1).map(|g| (g.scale(2), 1.0)))
}

/// Penalty `strength * L_phi(poly)` on the mixing measure.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Regularizer {
    poly: Polynomial,
    strength: f64,
}

impl Regularizer {
    pub fn new(poly: Polynomial, strength: f64) -> Result<Self> {
        if !(strength >= 0.0) || !strength.is_finite() {
            return Err(Error::InvalidRegularizer(format!("strength {strength}")));
        }
        for (a, _) in poly.terms() {
            if a.is_zero() {
                return Err(Error::InvalidRegularizer("nonzero constant term".into()));
            }
            if a.exps().iter().any(|e| e % 2 == 1) {
                return Err(Error::InvalidRegularizer(format!("odd power in monomial {a}")));
            }
        }
        Ok(Regularizer { poly, strength })
    }

    pub fn trace(p: usize, d: usize, strength: f64) -> Result<Self> {
        Regularizer::new(trace_regularizer(p, d), strength)
    }

    pub fn none(p: usize) -> Self {
        Regularizer { poly: Polynomial::zero(p), strength: 0.0 }
    }

    pub fn poly(&self) -> &Polynomial {
        &self.poly
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    pub fn is_active(&self) -> bool {
        self.strength > 0.0 && !self.poly.is_zero()
    }

    /// `strength * R(theta)`.
    pub fn penalty(&self, theta: &[f64]) -> f64 {
        self.strength * self.poly.eval(theta)
    }
}
