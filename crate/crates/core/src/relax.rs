//! Moment relaxations of the regularized W2 and total-variation mixture fits,
//! assembled as block-structured conic programs.
//!
//! A problem is `min c^T y + offset` subject to `A y = b` and, for every block,
//! `C_k + sum_i y_i F_ki` positive semidefinite. Block matrices are stored as
//! upper-triangular sparse triplets.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::{ParametricFamily, Regularizer, SemiAlgebraicSet};
use crate::polybasis::{enumerate_basis, GradedBasis, MultiIndex, Polynomial, PseudoMomentSequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    W2,
    Tv,
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Distance::W2 => "w2",
            Distance::Tv => "tv",
        })
    }
}

impl FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "w2" | "W2" => Ok(Distance::W2),
            "tv" | "TV" => Ok(Distance::Tv),
            other => Err(Error::Parse(format!("unknown distance {other}"))),
        }
    }
}

/// Variable groups of the relaxations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarGroup {
    /// Transport plan moments over `(x, y)`.
    Lambda,
    /// Mixing-measure moments over the parameters.
    Phi,
    PsiPlus,
    PsiMinus,
}

impl fmt::Display for VarGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VarGroup::Lambda => "lambda",
            VarGroup::Phi => "phi",
            VarGroup::PsiPlus => "psi_plus",
            VarGroup::PsiMinus => "psi_minus",
        })
    }
}

impl FromStr for VarGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(VarGroup::Lambda),
            "phi" => Ok(VarGroup::Phi),
            "psi_plus" => Ok(VarGroup::PsiPlus),
            "psi_minus" => Ok(VarGroup::PsiMinus),
            other => Err(Error::UnknownTag(other.to_string())),
        }
    }
}

/// A contiguous range of scalar variables holding a pseudo-moment sequence.
#[derive(Clone, Debug)]
pub struct VarTag {
    pub group: VarGroup,
    pub start: usize,
    pub basis: Arc<GradedBasis>,
}

impl VarTag {
    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn var(&self, alpha: &MultiIndex) -> usize {
        self.start + self.basis.position(alpha).expect("index inside the tagged basis")
    }
}

/// `C + sum_i y_i F_i` with upper-triangular triplets `(row <= col)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PsdBlock {
    pub dim: usize,
    pub constant: Vec<(usize, usize, f64)>,
    /// `(var, row, col, coef)`.
    pub coeffs: Vec<(usize, usize, usize, f64)>,
}

impl PsdBlock {
    fn new(dim: usize) -> Self {
        PsdBlock { dim, ..Default::default() }
    }

    /// Dense value of the block at `y`.
    pub fn eval(&self, y: &[f64]) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.dim, self.dim);
        for &(r, c, v) in &self.constant {
            m[(r, c)] += v;
        }
        for &(k, r, c, v) in &self.coeffs {
            m[(r, c)] += v * y[k];
        }
        for r in 0..self.dim {
            for c in r + 1..self.dim {
                m[(c, r)] = m[(r, c)];
            }
        }
        m
    }
}

#[derive(Clone, Debug)]
pub struct SdpProblem {
    pub nvars: usize,
    pub objective: Vec<f64>,
    pub offset: f64,
    /// Sparse equality rows `(var, coef)`.
    pub eq_rows: Vec<Vec<(usize, f64)>>,
    pub eq_rhs: Vec<f64>,
    pub blocks: Vec<PsdBlock>,
    pub tags: Vec<VarTag>,
}

impl SdpProblem {
    pub fn new(nvars: usize) -> Self {
        SdpProblem {
            nvars,
            objective: vec![0.0; nvars],
            offset: 0.0,
            eq_rows: Vec::new(),
            eq_rhs: Vec::new(),
            blocks: Vec::new(),
            tags: Vec::new(),
        }
    }

    pub fn num_equalities(&self) -> usize {
        self.eq_rows.len()
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.dim).collect()
    }

    pub fn tag(&self, group: VarGroup) -> Option<&VarTag> {
        self.tags.iter().find(|t| t.group == group)
    }

    pub fn objective_value(&self, y: &[f64]) -> f64 {
        self.offset + self.objective.iter().zip(y).map(|(c, v)| c * v).sum::<f64>()
    }

    /// Structural checks: indices in range, triangular storage, tag ranges.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::MalformedProblem(msg));
        if self.nvars == 0 {
            return bad("no variables".into());
        }
        if self.objective.len() != self.nvars {
            return bad(format!("objective has {} entries for {} variables", self.objective.len(), self.nvars));
        }
        if self.eq_rows.len() != self.eq_rhs.len() {
            return bad("equality rows and right-hand side differ in length".into());
        }
        if self.eq_rows.iter().flatten().any(|&(v, _)| v >= self.nvars) {
            return bad("equality references an undeclared variable".into());
        }
        let mut used = vec![false; self.nvars];
        for (v, _) in self.eq_rows.iter().flatten() {
            used[*v] = true;
        }
        for (k, b) in self.blocks.iter().enumerate() {
            if b.dim == 0 {
                return bad(format!("block {k} is empty"));
            }
            if b.constant.iter().any(|&(r, c, _)| r > c || c >= b.dim) {
                return bad(format!("block {k} constant is not upper-triangular in range"));
            }
            for &(v, r, c, _) in &b.coeffs {
                if v >= self.nvars || r > c || c >= b.dim {
                    return bad(format!("block {k} has an out-of-range coefficient"));
                }
                used[v] = true;
            }
        }
        if let Some(v) = used.iter().position(|u| !u) {
            return bad(format!("variable {v} appears in no constraint"));
        }
        for t in &self.tags {
            if t.start + t.len() > self.nvars {
                return bad(format!("tag {} exceeds the variable range", t.group));
            }
        }
        Ok(())
    }

    /// Plain-text sparse dump, one record per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "vars {}", self.nvars);
        let _ = writeln!(s, "offset {:e}", self.offset);
        for (i, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                let _ = writeln!(s, "obj {i} {c:e}");
            }
        }
        for (r, (row, rhs)) in self.eq_rows.iter().zip(&self.eq_rhs).enumerate() {
            let _ = writeln!(s, "rhs {r} {rhs:e}");
            for &(v, c) in row {
                let _ = writeln!(s, "eq {r} {v} {c:e}");
            }
        }
        for (k, b) in self.blocks.iter().enumerate() {
            let _ = writeln!(s, "block {k} {}", b.dim);
            for &(r, c, v) in &b.constant {
                let _ = writeln!(s, "c {k} {r} {c} {v:e}");
            }
            for &(var, r, c, v) in &b.coeffs {
                let _ = writeln!(s, "f {k} {var} {r} {c} {v:e}");
            }
        }
        for t in &self.tags {
            let _ = writeln!(s, "tag {} {} {} {}", t.group, t.start, t.basis.nvars(), t.basis.maxdeg());
        }
        s
    }

    pub fn from_text(text: &str) -> Result<SdpProblem> {
        let perr = |line: usize, msg: &str| Error::Parse(format!("line {}: {msg}", line + 1));
        let mut problem: Option<SdpProblem> = None;
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let num = |i: usize| -> Result<f64> {
                toks.get(i).and_then(|t| t.parse::<f64>().ok()).ok_or_else(|| perr(ln, "bad number"))
            };
            let idx = |i: usize| -> Result<usize> {
                toks.get(i).and_then(|t| t.parse::<usize>().ok()).ok_or_else(|| perr(ln, "bad index"))
            };
            if toks[0] == "vars" {
                problem = Some(SdpProblem::new(idx(1)?));
                continue;
            }
            let p = problem.as_mut().ok_or_else(|| perr(ln, "record before 'vars'"))?;
            match toks[0] {
                "offset" => p.offset = num(1)?,
                "obj" => {
                    let i = idx(1)?;
                    *p.objective.get_mut(i).ok_or_else(|| perr(ln, "objective index out of range"))? = num(2)?;
                }
                "rhs" => {
                    let r = idx(1)?;
                    if r != p.eq_rhs.len() {
                        return Err(perr(ln, "equality rows out of sequence"));
                    }
                    p.eq_rhs.push(num(2)?);
                    p.eq_rows.push(Vec::new());
                }
                "eq" => {
                    let r = idx(1)?;
                    let row = p.eq_rows.get_mut(r).ok_or_else(|| perr(ln, "undeclared equality row"))?;
                    row.push((idx(2)?, num(3)?));
                }
                "block" => {
                    if idx(1)? != p.blocks.len() {
                        return Err(perr(ln, "blocks out of sequence"));
                    }
                    p.blocks.push(PsdBlock::new(idx(2)?));
                }
                "c" => {
                    let k = idx(1)?;
                    let b = p.blocks.get_mut(k).ok_or_else(|| perr(ln, "undeclared block"))?;
                    b.constant.push((idx(2)?, idx(3)?, num(4)?));
                }
                "f" => {
                    let k = idx(1)?;
                    let entry = (idx(2)?, idx(3)?, idx(4)?, num(5)?);
                    p.blocks.get_mut(k).ok_or_else(|| perr(ln, "undeclared block"))?.coeffs.push(entry);
                }
                "tag" => {
                    let group = toks.get(1).ok_or_else(|| perr(ln, "missing group"))?.parse()?;
                    let basis = Arc::new(enumerate_basis(idx(3)?, idx(4)?)?);
                    p.tags.push(VarTag { group, start: idx(2)?, basis });
                }
                other => return Err(perr(ln, &format!("unknown record '{other}'"))),
            }
        }
        let p = problem.ok_or_else(|| Error::Parse("missing 'vars' record".into()))?;
        p.validate()?;
        Ok(p)
    }
}

/// Everything that defines one relaxation besides the data moments.
#[derive(Clone, Debug)]
pub struct RelaxationSpec {
    pub distance: Distance,
    pub order: usize,
    pub family: Arc<ParametricFamily>,
    pub set: SemiAlgebraicSet,
    pub regularizer: Regularizer,
}

impl RelaxationSpec {
    pub fn new(
        distance: Distance,
        order: usize,
        family: Arc<ParametricFamily>,
        set: SemiAlgebraicSet,
        regularizer: Regularizer,
    ) -> Result<Self> {
        let p = family.param_dim();
        if set.pvars() != p {
            return Err(Error::InvalidSpec(format!("set has {} parameters, family has {p}", set.pvars())));
        }
        if regularizer.poly().nvars() != p {
            return Err(Error::InvalidSpec(format!(
                "regularizer has {} variables, family has {p}",
                regularizer.poly().nvars()
            )));
        }
        let spec = RelaxationSpec { distance, order, family, set, regularizer };
        if order == 0 || order < spec.d_min() {
            return Err(Error::InvalidSpec(format!("order {order} below the minimal order {}", spec.d_min().max(1))));
        }
        Ok(spec)
    }

    pub fn epsilon(&self) -> f64 {
        self.regularizer.strength()
    }

    pub fn with_order(&self, order: usize) -> Result<RelaxationSpec> {
        RelaxationSpec::new(self.distance, order, self.family.clone(), self.set.clone(), self.regularizer.clone())
    }

    pub fn with_distance(&self, distance: Distance) -> RelaxationSpec {
        RelaxationSpec { distance, ..self.clone() }
    }

    /// `max(max_j d_j, ceil(deg R / 2))`, the regularizer counting only when active.
    pub fn d_min(&self) -> usize {
        let reg = if self.regularizer.is_active() { self.regularizer.poly().degree().div_ceil(2) } else { 0 };
        self.set.max_half_degree().max(reg)
    }

    /// Specification of the one-dimensional problem for data coordinate `coord`.
    pub fn project(&self, coord: usize, set: SemiAlgebraicSet) -> Result<RelaxationSpec> {
        let params = self.family.coordinate_params(coord);
        let family = Arc::new(self.family.univariate());
        let reg = restrict_poly(self.regularizer.poly(), &params);
        let regularizer = Regularizer::new(reg, self.regularizer.strength())?;
        RelaxationSpec::new(self.distance, self.order, family, set, regularizer)
    }
}

/// Keeps the terms supported on `coords` and renumbers them.
fn restrict_poly(p: &Polynomial, coords: &[usize]) -> Polynomial {
    let terms = p.terms().filter_map(|(a, c)| {
        let inside: u32 = coords.iter().map(|&i| a.exps()[i]).sum();
        (inside as usize == a.degree()).then(|| (a.select(coords), c))
    });
    Polynomial::from_terms(coords.len(), terms)
}

struct Builder {
    problem: SdpProblem,
}

impl Builder {
    fn new() -> Self {
        Builder { problem: SdpProblem::new(0) }
    }

    fn alloc(&mut self, group: VarGroup, nvars: usize, maxdeg: usize) -> Result<VarTag> {
        let basis = Arc::new(enumerate_basis(nvars, maxdeg)?);
        let tag = VarTag { group, start: self.problem.nvars, basis };
        self.problem.nvars += tag.len();
        self.problem.objective.resize(self.problem.nvars, 0.0);
        self.problem.tags.push(tag.clone());
        Ok(tag)
    }

    fn equality(&mut self, row: Vec<(usize, f64)>, rhs: f64) {
        self.problem.eq_rows.push(row);
        self.problem.eq_rhs.push(rhs);
    }

    fn push_block(&mut self, block: PsdBlock) {
        self.problem.blocks.push(block);
    }

    fn finish(self) -> Result<SdpProblem> {
        self.problem.validate()?;
        Ok(self.problem)
    }
}

/// Linear form `sum_gamma f_gamma z_gamma` over the variables of `tag`.
fn riesz_form(tag: &VarTag, f: &Polynomial, scale: f64) -> Vec<(usize, f64)> {
    f.terms().map(|(g, c)| (tag.var(g), scale * c)).collect()
}

/// Adds `scale * M_{order - ceil(deg r/2)}(r z)` for the tagged sequence `z`.
fn add_localizing(block: &mut PsdBlock, tag: &VarTag, r: &Polynomial, order: usize, scale: f64) {
    let rows = &tag.basis.monomials()[..tag.basis.prefix_len(order - r.degree().div_ceil(2))];
    debug_assert_eq!(rows.len(), block.dim);
    for i in 0..rows.len() {
        for j in i..rows.len() {
            let ab = rows[i].add(&rows[j]);
            for (g, c) in r.terms() {
                block.coeffs.push((tag.var(&ab.add(g)), i, j, scale * c));
            }
        }
    }
}

fn localizing_dim(nvars: usize, order: usize, r: &Polynomial) -> usize {
    crate::polybasis::basis_size(nvars, order - r.degree().div_ceil(2)).expect("basis size")
}

/// Localizing blocks of the parameter set, the plain moment block first.
fn add_parameter_blocks(b: &mut Builder, phi: &VarTag, spec: &RelaxationSpec) {
    let p = spec.family.param_dim();
    let d = spec.order;
    let one = Polynomial::constant(p, 1.0);
    for r in std::iter::once(&one).chain(spec.set.constraints()) {
        let mut block = PsdBlock::new(localizing_dim(p, d, r));
        add_localizing(&mut block, phi, r, d, 1.0);
        b.push_block(block);
    }
}

fn add_regularization(b: &mut Builder, phi: &VarTag, spec: &RelaxationSpec) {
    let eps = spec.epsilon();
    if eps > 0.0 {
        for (v, c) in riesz_form(phi, spec.regularizer.poly(), eps) {
            b.problem.objective[v] += c;
        }
    }
}

fn check_moments(mu: &PseudoMomentSequence, spec: &RelaxationSpec) -> Result<()> {
    if mu.nvars() != spec.family.data_dim() {
        return Err(Error::DimensionMismatch { expected: spec.family.data_dim(), got: mu.nvars() });
    }
    if mu.maxdeg() < 2 * spec.order {
        return Err(Error::DegreeOverflow { needed: 2 * spec.order, available: mu.maxdeg() });
    }
    Ok(())
}

fn moments_at(mu: &PseudoMomentSequence, alpha: &MultiIndex) -> f64 {
    mu.get(alpha).expect("moment degree checked")
}

/// Regularized W2 relaxation over the transport moments `lambda` and the mixing moments `phi`.
pub fn build_w2(mu: &PseudoMomentSequence, spec: &RelaxationSpec) -> Result<SdpProblem> {
    if spec.distance != Distance::W2 {
        return Err(Error::InvalidSpec("build_w2 called with a TV spec".into()));
    }
    check_moments(mu, spec)?;
    let n = spec.family.data_dim();
    let p = spec.family.param_dim();
    let d = spec.order;
    let mut b = Builder::new();
    let lambda = b.alloc(VarGroup::Lambda, 2 * n, 2 * d)?;
    let phi = b.alloc(VarGroup::Phi, p, 2 * d)?;

    for i in 0..n {
        let xi = MultiIndex::unit(2 * n, i);
        let yi = MultiIndex::unit(2 * n, n + i);
        b.problem.objective[lambda.var(&xi.scale(2))] += 1.0;
        b.problem.objective[lambda.var(&xi.add(&yi))] -= 2.0;
        b.problem.objective[lambda.var(&yi.scale(2))] += 1.0;
    }
    add_regularization(&mut b, &phi, spec);

    let zero_n = MultiIndex::zero(n);
    let data_basis = enumerate_basis(n, 2 * d)?;
    for alpha in data_basis.monomials() {
        b.equality(vec![(lambda.var(&alpha.concat(&zero_n)), 1.0)], moments_at(mu, alpha));
    }
    for alpha in data_basis.monomials() {
        let mut row = vec![(lambda.var(&zero_n.concat(alpha)), 1.0)];
        row.extend(riesz_form(&phi, &spec.family.moment_poly(alpha), -1.0));
        b.equality(row, 0.0);
    }
    b.equality(vec![(phi.var(&MultiIndex::zero(p)), 1.0)], 1.0);

    let mut block = PsdBlock::new(enumerate_basis(2 * n, d)?.len());
    add_localizing(&mut block, &lambda, &Polynomial::constant(2 * n, 1.0), d, 1.0);
    b.push_block(block);
    add_parameter_blocks(&mut b, &phi, spec);
    b.finish()
}

/// Regularized TV relaxation over `psi_plus`, `psi_minus` and `phi`.
pub fn build_tv(mu: &PseudoMomentSequence, spec: &RelaxationSpec) -> Result<SdpProblem> {
    if spec.distance != Distance::Tv {
        return Err(Error::InvalidSpec("build_tv called with a W2 spec".into()));
    }
    check_moments(mu, spec)?;
    let n = spec.family.data_dim();
    let p = spec.family.param_dim();
    let d = spec.order;
    let mut b = Builder::new();
    let plus = b.alloc(VarGroup::PsiPlus, n, 2 * d)?;
    let minus = b.alloc(VarGroup::PsiMinus, n, 2 * d)?;
    let phi = b.alloc(VarGroup::Phi, p, 2 * d)?;

    let zero_n = MultiIndex::zero(n);
    b.problem.objective[plus.var(&zero_n)] += 1.0;
    b.problem.objective[minus.var(&zero_n)] += 1.0;
    add_regularization(&mut b, &phi, spec);

    for alpha in plus.basis.clone().monomials() {
        let mut row = vec![(plus.var(alpha), 1.0), (minus.var(alpha), -1.0)];
        row.extend(riesz_form(&phi, &spec.family.moment_poly(alpha), 1.0));
        b.equality(row, moments_at(mu, alpha));
    }
    b.equality(vec![(phi.var(&MultiIndex::zero(p)), 1.0)], 1.0);

    let rows = &plus.basis.monomials()[..plus.basis.prefix_len(d)];
    let dim = rows.len();
    let one = Polynomial::constant(n, 1.0);

    // M_d(mu) - M_d(psi_plus)
    let mut dom_plus = PsdBlock::new(dim);
    for i in 0..dim {
        for j in i..dim {
            let v = moments_at(mu, &rows[i].add(&rows[j]));
            if v != 0.0 {
                dom_plus.constant.push((i, j, v));
            }
        }
    }
    add_localizing(&mut dom_plus, &plus, &one, d, -1.0);
    b.push_block(dom_plus);

    let mut psd_plus = PsdBlock::new(dim);
    add_localizing(&mut psd_plus, &plus, &one, d, 1.0);
    b.push_block(psd_plus);

    // M_d(p; phi) - M_d(psi_minus)
    let mut dom_minus = PsdBlock::new(dim);
    for i in 0..dim {
        for j in i..dim {
            let pab = spec.family.moment_poly(&rows[i].add(&rows[j]));
            for (v, c) in riesz_form(&phi, &pab, 1.0) {
                dom_minus.coeffs.push((v, i, j, c));
            }
        }
    }
    add_localizing(&mut dom_minus, &minus, &one, d, -1.0);
    b.push_block(dom_minus);

    let mut psd_minus = PsdBlock::new(dim);
    add_localizing(&mut psd_minus, &minus, &one, d, 1.0);
    b.push_block(psd_minus);

    add_parameter_blocks(&mut b, &phi, spec);
    b.finish()
}

pub fn build_relaxation(mu: &PseudoMomentSequence, spec: &RelaxationSpec) -> Result<SdpProblem> {
    match spec.distance {
        Distance::W2 => build_w2(mu, spec),
        Distance::Tv => build_tv(mu, spec),
    }
}

/// One-dimensional relaxation for data coordinate `coord`; `spec` is the
/// multivariate specification and `set` the projected parameter set.
pub fn build_univariate_projection(
    mu_1d: &PseudoMomentSequence,
    coord: usize,
    spec: &RelaxationSpec,
    set: &SemiAlgebraicSet,
) -> Result<SdpProblem> {
    if coord >= spec.family.data_dim() {
        return Err(Error::InvalidSpec(format!("coordinate {coord} out of range")));
    }
    let projected = spec.project(coord, set.clone())?;
    build_relaxation(mu_1d, &projected)
}

/// Objective of the relaxation at the moments of an explicit mixing measure
/// (atoms in parameter space, weights summing to one) that reproduces `mu`
/// exactly: zero distance plus the regularization term.
pub fn regularized_objective(spec: &RelaxationSpec, atoms: &[Vec<f64>], weights: &[f64]) -> f64 {
    atoms.iter().zip(weights).map(|(t, w)| w * spec.regularizer.penalty(t)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::box_set;

    fn gaussian_spec(distance: Distance, d: usize, eps: f64) -> RelaxationSpec {
        let fam = Arc::new(ParametricFamily::gaussian(1));
        let set = box_set(&[0.0, 0.05], &[1.0, 1.0]).unwrap();
        let reg = if eps > 0.0 { Regularizer::trace(2, 1, eps).unwrap() } else { Regularizer::none(2) };
        RelaxationSpec::new(distance, d, fam, set, reg).unwrap()
    }

    fn gaussian_moments(m: f64, s: f64, maxdeg: usize) -> PseudoMomentSequence {
        let fam = ParametricFamily::gaussian(1);
        PseudoMomentSequence::from_fn(1, maxdeg, |a| fam.moment(a, &[m, s])).unwrap()
    }

    #[test]
    fn w2_sizes() {
        let spec = gaussian_spec(Distance::W2, 2, 0.0);
        let prob = build_w2(&gaussian_moments(0.5, 0.1, 4), &spec).unwrap();
        assert_eq!(prob.num_equalities(), 11);
        assert_eq!(prob.blocks[0].dim, 6);
        assert_eq!(prob.blocks[1].dim, 6);
        // box constraints are quadratic in each parameter: order 1 blocks
        assert_eq!(prob.block_dims(), vec![6, 6, 3, 3]);
        assert_eq!(prob.tag(VarGroup::Lambda).unwrap().len(), 15);
        assert_eq!(prob.tag(VarGroup::Phi).unwrap().len(), 15);
    }

    #[test]
    fn tv_sizes() {
        let spec = gaussian_spec(Distance::Tv, 3, 0.0);
        let prob = build_tv(&gaussian_moments(0.5, 0.1, 6), &spec).unwrap();
        assert_eq!(&prob.block_dims()[..5], &[4, 4, 4, 4, 10]);
        assert_eq!(prob.num_equalities(), 8);
    }

    #[test]
    fn order_below_minimum_is_rejected() {
        let fam = Arc::new(ParametricFamily::gaussian(1));
        let set = box_set(&[0.0, 0.05], &[1.0, 1.0]).unwrap();
        let reg = Regularizer::trace(2, 2, 0.1).unwrap();
        assert!(RelaxationSpec::new(Distance::W2, 1, fam.clone(), set.clone(), reg.clone()).is_err());
        assert!(RelaxationSpec::new(Distance::W2, 2, fam, set, reg).is_ok());
    }

    #[test]
    fn short_moments_are_rejected() {
        let spec = gaussian_spec(Distance::W2, 3, 0.0);
        assert!(matches!(
            build_w2(&gaussian_moments(0.5, 0.1, 4), &spec),
            Err(Error::DegreeOverflow { .. })
        ));
    }

    /// Moments of the exact coupling `(X, X)` with `X ~ mu_theta` and of `delta_theta`
    /// satisfy every constraint of the W2 problem.
    #[test]
    fn exact_pair_is_feasible_for_w2() {
        let (m, s) = (0.4, 0.2);
        let spec = gaussian_spec(Distance::W2, 2, 0.0);
        let mu = gaussian_moments(m, s, 4);
        let prob = build_w2(&mu, &spec).unwrap();
        let fam = ParametricFamily::gaussian(1);
        let mut y = vec![0.0; prob.nvars];
        let lambda = prob.tag(VarGroup::Lambda).unwrap();
        for (k, a) in lambda.basis.monomials().iter().enumerate() {
            let tot = MultiIndex::new(vec![a.exps()[0] + a.exps()[1]]);
            y[lambda.start + k] = fam.moment(&tot, &[m, s]);
        }
        let phi = prob.tag(VarGroup::Phi).unwrap();
        for (k, g) in phi.basis.monomials().iter().enumerate() {
            y[phi.start + k] = g.eval(&[m, s]);
        }
        for (row, rhs) in prob.eq_rows.iter().zip(&prob.eq_rhs) {
            let v: f64 = row.iter().map(|&(i, c)| c * y[i]).sum();
            assert!((v - rhs).abs() < 1e-12);
        }
        for b in &prob.blocks {
            assert!(crate::linalg::is_psd(&b.eval(&y), 1e-10));
        }
        assert!(prob.objective_value(&y).abs() < 1e-12);
    }

    #[test]
    fn text_round_trip() {
        let spec = gaussian_spec(Distance::Tv, 2, 0.1);
        let prob = build_tv(&gaussian_moments(0.5, 0.1, 4), &spec).unwrap();
        let back = SdpProblem::from_text(&prob.to_text()).unwrap();
        assert_eq!(back.nvars, prob.nvars);
        assert_eq!(back.objective, prob.objective);
        assert_eq!(back.eq_rows, prob.eq_rows);
        assert_eq!(back.eq_rhs, prob.eq_rhs);
        assert_eq!(back.blocks, prob.blocks);
        assert_eq!(back.tags.len(), prob.tags.len());
        assert!(SdpProblem::from_text("obj 0 1").is_err());
    }

    #[test]
    fn projection_restricts_regularizer() {
        let fam = Arc::new(ParametricFamily::gaussian(2));
        let set = box_set(&[0.0, 0.0, 0.05, 0.05], &[1.0; 4]).unwrap();
        let reg = Regularizer::trace(4, 1, 0.1).unwrap();
        let spec = RelaxationSpec::new(Distance::W2, 2, fam, set.clone(), reg).unwrap();
        let proj = spec.project(1, set.project_box(&[1, 3]).unwrap()).unwrap();
        assert_eq!(proj.regularizer.poly(), &crate::families::trace_regularizer(2, 1));
        assert_eq!(proj.family.data_dim(), 1);
        assert_eq!(proj.set.bounds().unwrap(), &[(0.0, 1.0), (0.05, 1.0)]);
    }
}
