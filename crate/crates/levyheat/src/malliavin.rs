//! The add-one-point difference operator `D_{s,x}F = F(N + δ_{(s,x)}) − F(N)`.
//!
//! Every derivative here is literal path surgery: insert a jump, rerun the
//! deterministic pipeline, subtract. The identities checked on top of it:
//!
//! * the discrete derivative recursion of the scheme,
//!   `D X^m = S_{h,k}(D X^{m-1} + k[F(X^{m-1} + D X^{m-1}) − F(X^{m-1})] + 1_{(t_{m-1}, t_m]}(s) x)`;
//! * adaptedness, `D_{s,x} X^m = 0` for `s > t_m`;
//! * the chain rule `D h(F) = h(F + DF) − h(F)`;
//! * the duality `E⟨F, ∫∫Φ dÑ⟩ = E ∫∫⟨D_{t,x}F, Φ(t,x)⟩ ν(dx) dt`;
//! * the mild equation for `Z(t) = D_{s,x}X(t)` on the reference solver.

use std::collections::HashMap;
use std::fmt;

use crate::error::{invalid, Error, Result};
use crate::noise::{sample_path, Jump, JumpPath, LevyModel, MarkAtom};
use crate::par::{map_indexed, Exec};
use crate::solver::{state_norm, ReferenceSolver, Scheme};
use crate::spectral::dirichlet_eigenvalue;

/// The point `(s, x)` with `x = coeff · e_mode`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointInsertion {
    pub time: f64,
    pub mode: usize,
    pub coeff: f64,
}

impl PointInsertion {
    pub fn new(time: f64, mode: usize, coeff: f64) -> Result<Self> {
        if mode == 0 || !coeff.is_finite() || !time.is_finite() {
            return Err(invalid(
                "insertion needs a finite time, a mode ≥ 1 and a finite coefficient",
            ));
        }
        Ok(PointInsertion { time, mode, coeff })
    }

    pub fn at_atom(time: f64, atom: &MarkAtom) -> Self {
        PointInsertion {
            time,
            mode: atom.mode,
            coeff: atom.coeff,
        }
    }

    pub fn jump(&self) -> Jump {
        Jump {
            time: self.time,
            mode: self.mode,
            coeff: self.coeff,
        }
    }
}

/// `N + δ_{(s,x)}`. The new jump goes after any jumps already at `s`.
pub fn add_point(path: &JumpPath, ins: &PointInsertion) -> Result<JumpPath> {
    if !(ins.time > 0.0 && ins.time <= path.horizon) {
        return Err(Error::OutOfRange {
            t: ins.time,
            lo: 0.0,
            hi: path.horizon,
        });
    }
    let mut out = path.clone();
    let pos = out.jumps.partition_point(|j| j.time <= ins.time);
    out.jumps.insert(pos, ins.jump());
    Ok(out)
}

/// Removes the last jump equal to `ins`; inverse of [`add_point`].
pub fn remove_point(path: &JumpPath, ins: &PointInsertion) -> Result<JumpPath> {
    let target = ins.jump();
    let pos = path
        .jumps
        .iter()
        .rposition(|j| *j == target)
        .ok_or_else(|| invalid(format!("no jump {target:?} to remove")))?;
    let mut out = path.clone();
    out.jumps.remove(pos);
    Ok(out)
}

/// First scheme step whose window `(t_{m-1}, t_m]` contains `s`; `M + 1` if
/// `s > t_M`, where the scheme never sees the jump.
pub fn scheme_cell(scheme: &Scheme, s: f64) -> usize {
    let disc = scheme.disc();
    (1..=disc.steps)
        .find(|&m| disc.time(m) >= s)
        .unwrap_or(disc.steps + 1)
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Scheme states on `perturbed`, reusing `base` (the run on the unperturbed
/// path) for every step before `cell`. Both paths must agree on `[0, t_{cell-1}]`;
/// the result is then bitwise the full rerun.
pub fn rerun_from(
    scheme: &Scheme,
    perturbed: &JumpPath,
    base: &[Vec<f64>],
    cell: usize,
) -> Result<Vec<Vec<f64>>> {
    let disc = scheme.disc();
    let mut out: Vec<Vec<f64>> = base[..cell.min(disc.steps + 1)].to_vec();
    if cell > disc.steps {
        return Ok(out);
    }
    let mut w = scheme.work();
    let mut f = vec![0.0; scheme.dim()];
    for m in cell..=disc.steps {
        let x = &out[m - 1];
        let mut next = vec![0.0; x.len()];
        scheme.drift(x, &mut f, &mut w);
        scheme.advance(
            x,
            &f,
            perturbed.jumps_in(disc.time(m - 1), disc.time(m))?,
            &mut next,
            &mut w,
        );
        out.push(next);
    }
    Ok(out)
}

/// `D_{s,x} X^m`, `m = 0..=M`, computed two ways.
#[derive(Debug, Clone)]
pub struct SchemeDerivative {
    pub times: Vec<f64>,
    /// Add-point rerun minus base run.
    pub rerun: Vec<Vec<f64>>,
    /// The derivative recursion stepped along the stored base trajectory.
    pub recursion: Vec<Vec<f64>>,
    /// `‖x‖_H` of the inserted mark.
    pub mark_norm: f64,
}

impl SchemeDerivative {
    /// `(rerun, recursion)` of the piecewise constant interpolation at `t`.
    pub fn at(&self, t: f64) -> (&[f64], &[f64]) {
        let m = self.times.partition_point(|&s| s <= t).max(1) - 1;
        (&self.rerun[m], &self.recursion[m])
    }

    /// `max_m ‖rerun − recursion‖ / max(max_m ‖rerun‖, ‖x‖)`.
    ///
    /// The mark's norm guards the quotient when the mesh cannot see the mark
    /// at all (a P1 load of `e_N` on `N` cells is zero).
    pub fn relative_discrepancy(&self) -> f64 {
        let diff = self
            .rerun
            .iter()
            .zip(&self.recursion)
            .map(|(a, b)| norm(&sub(a, b)))
            .fold(0.0, f64::max);
        let scale = self
            .rerun
            .iter()
            .map(|a| norm(a))
            .fold(self.mark_norm, f64::max);
        if scale > 0.0 {
            diff / scale
        } else {
            diff
        }
    }
}

pub fn derivative_of_solution(
    scheme: &Scheme,
    path: &JumpPath,
    ins: &PointInsertion,
) -> Result<SchemeDerivative> {
    let disc = *scheme.disc();
    let plus = add_point(path, ins)?;
    let base = scheme.run(path)?.values;
    let perturbed = scheme.run(&plus)?.values;
    let rerun: Vec<Vec<f64>> = perturbed
        .iter()
        .zip(&base)
        .map(|(a, b)| sub(a, b))
        .collect();

    let dim = scheme.dim();
    let mut w = scheme.work();
    let (mut fa, mut fb) = (vec![0.0; dim], vec![0.0; dim]);
    let mut recursion = vec![vec![0.0; dim]];
    let own = [ins.jump()];
    for m in 1..=disc.steps {
        let d = &recursion[m - 1];
        let x = &base[m - 1];
        let shifted: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + b).collect();
        scheme.drift(&shifted, &mut fa, &mut w);
        scheme.drift(x, &mut fb, &mut w);
        let g = sub(&fa, &fb);
        let inside = ins.time > disc.time(m - 1) && ins.time <= disc.time(m);
        let mut next = vec![0.0; dim];
        scheme.advance(d, &g, if inside { &own } else { &[] }, &mut next, &mut w);
        recursion.push(next);
    }
    Ok(SchemeDerivative {
        times: (0..=disc.steps).map(|m| disc.time(m)).collect(),
        rerun,
        recursion,
        mark_norm: ins.coeff.abs(),
    })
}

/// `‖Z(t) − S(t−s)x − ∫_s^t S(t−r)[F(X(r) + Z(r)) − F(X(r))] dr‖` on the
/// reference, with `Z` by add-point and the integral by the left-point rule
/// on the reference grid. Zero for `t < s`.
pub fn derivative_equation_residual(
    reference: &ReferenceSolver,
    path: &JumpPath,
    ins: &PointInsertion,
    t: f64,
) -> Result<f64> {
    let s = ins.time;
    if t < s {
        return Ok(0.0);
    }
    let n = reference.settings().modes;
    if ins.mode > n {
        return Err(invalid(format!(
            "mark mode {} exceeds the reference's {n} modes",
            ins.mode
        )));
    }
    let plus = add_point(path, ins)?;
    let extra = [s, t];
    let mut base = Vec::new();
    let (grid, _) = reference.run_observed(path, &extra, |_, _, x| base.push(x.to_vec()))?;
    let mut pert = Vec::new();
    let (grid_plus, _) = reference.run_observed(&plus, &extra, |_, _, x| pert.push(x.to_vec()))?;
    debug_assert_eq!(grid, grid_plus);
    let find = |r: f64| {
        grid.iter()
            .position(|&g| g == r)
            .expect("extra times are grid nodes")
    };
    let (i_s, i_t) = (find(s), find(t));
    let lambda: Vec<f64> = (1..=n).map(dirichlet_eigenvalue).collect();

    let mut resid = sub(&pert[i_t], &base[i_t]);
    resid[ins.mode - 1] -= (-lambda[ins.mode - 1] * (t - s)).exp() * ins.coeff;
    let mut w = reference.work();
    let (mut fa, mut fb) = (vec![0.0; n], vec![0.0; n]);
    for i in i_s..i_t {
        let dr = grid[i + 1] - grid[i];
        reference.drift(&pert[i], &mut fa, &mut w);
        reference.drift(&base[i], &mut fb, &mut w);
        for j in 0..n {
            resid[j] -= dr * (-lambda[j] * (t - grid[i])).exp() * (fa[j] - fb[j]);
        }
    }
    Ok(norm(&resid))
}

/// A (vector valued) functional `F` of the jump path, in spectral coordinates.
///
/// `Base` caches whatever the unperturbed evaluation produced so that
/// `F(N + δ)` can reuse it.
pub trait PathFunction: Sync {
    type Base: Send;

    fn base(&self, path: &JumpPath) -> Result<Self::Base>;

    fn value(&self, base: &Self::Base) -> Vec<f64>;

    /// `F(N + δ_{(s,x)})`.
    fn with_point(
        &self,
        path: &JumpPath,
        base: &Self::Base,
        ins: &PointInsertion,
    ) -> Result<Vec<f64>>;

    fn derivative(
        &self,
        path: &JumpPath,
        base: &Self::Base,
        ins: &PointInsertion,
    ) -> Result<Vec<f64>> {
        Ok(sub(&self.with_point(path, base, ins)?, &self.value(base)))
    }

    /// A key such that `D_{s,x}F = D_{s',x}F` whenever `cell(s) == cell(s')`.
    fn cell(&self, _s: f64) -> Option<usize> {
        None
    }

    /// `false` if `D_{s,x}F = 0` for every mark in `mode`.
    fn sees_mode(&self, _mode: usize) -> bool {
        true
    }
}

/// `F = map(X̃_{h,k}(T)) = map(X^M)`.
pub struct SchemeTerminal<M> {
    scheme: Scheme,
    map: M,
}

impl<M: Fn(&[f64]) -> Vec<f64> + Sync> SchemeTerminal<M> {
    pub fn new(scheme: Scheme, map: M) -> Self {
        SchemeTerminal { scheme, map }
    }

    pub fn scheme(&self) -> &Scheme {
        &self.scheme
    }
}

impl<M: Fn(&[f64]) -> Vec<f64> + Sync> PathFunction for SchemeTerminal<M> {
    type Base = Vec<Vec<f64>>;

    fn base(&self, path: &JumpPath) -> Result<Self::Base> {
        Ok(self.scheme.run(path)?.values)
    }

    fn value(&self, base: &Self::Base) -> Vec<f64> {
        (self.map)(base.last().expect("nonempty run"))
    }

    fn with_point(
        &self,
        path: &JumpPath,
        base: &Self::Base,
        ins: &PointInsertion,
    ) -> Result<Vec<f64>> {
        let plus = add_point(path, ins)?;
        let states = rerun_from(
            &self.scheme,
            &plus,
            base,
            scheme_cell(&self.scheme, ins.time),
        )?;
        Ok((self.map)(states.last().expect("nonempty run")))
    }

    fn cell(&self, s: f64) -> Option<usize> {
        Some(scheme_cell(&self.scheme, s))
    }

    fn sees_mode(&self, mode: usize) -> bool {
        match self.scheme.space() {
            crate::solver::Space::Spectral { modes } => mode <= modes,
            crate::solver::Space::Fem { .. } => true,
        }
    }
}

/// A functional that ignores the path.
pub struct ConstantFunction(pub Vec<f64>);

impl PathFunction for ConstantFunction {
    type Base = ();

    fn base(&self, _: &JumpPath) -> Result<()> {
        Ok(())
    }

    fn value(&self, _: &()) -> Vec<f64> {
        self.0.clone()
    }

    fn with_point(&self, _: &JumpPath, _: &(), _: &PointInsertion) -> Result<Vec<f64>> {
        Ok(self.0.clone())
    }

    fn cell(&self, _: f64) -> Option<usize> {
        Some(0)
    }
}

/// One add-point evaluation: `D_{s,x}F` at a fixed path.
#[derive(Debug, Clone)]
pub struct MalliavinSample {
    pub base: JumpPath,
    pub insertion: PointInsertion,
    pub derivative: Vec<f64>,
}

pub fn malliavin_sample<F: PathFunction>(
    f: &F,
    path: &JumpPath,
    ins: PointInsertion,
) -> Result<MalliavinSample> {
    let base = f.base(path)?;
    Ok(MalliavinSample {
        base: path.clone(),
        insertion: ins,
        derivative: f.derivative(path, &base, &ins)?,
    })
}

/// `|D(h∘F) − (h(F + DF) − h(F))|` for a scalar `F`.
pub fn chain_rule_check<F: PathFunction>(
    f: &F,
    h: impl Fn(f64) -> f64,
    path: &JumpPath,
    ins: &PointInsertion,
) -> Result<f64> {
    let base = f.base(path)?;
    let (v, vp) = (f.value(&base), f.with_point(path, &base, ins)?);
    if v.len() != 1 {
        return Err(invalid("chain rule check needs a scalar functional"));
    }
    let (v, vp) = (v[0], vp[0]);
    let lhs = h(vp) - h(v);
    let df = vp - v;
    let rhs = h(v + df) - h(v);
    Ok((lhs - rhs).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Positive,
    Negative,
}

/// Which marks a block sees.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MarkPredicate {
    /// `None` admits every mode.
    pub modes: Option<Vec<usize>>,
    pub sign: Option<Sign>,
}

impl MarkPredicate {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn modes(modes: Vec<usize>) -> Self {
        MarkPredicate {
            modes: Some(modes),
            sign: None,
        }
    }

    pub fn accepts(&self, mode: usize, coeff: f64) -> bool {
        self.modes.as_ref().is_none_or(|m| m.contains(&mode))
            && match self.sign {
                None => true,
                Some(Sign::Positive) => coeff > 0.0,
                Some(Sign::Negative) => coeff < 0.0,
            }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarkWeight {
    One,
    /// The mark's coefficient `c` in `x = c e_j`.
    Coeff,
}

impl MarkWeight {
    fn at(&self, coeff: f64) -> f64 {
        match self {
            MarkWeight::One => 1.0,
            MarkWeight::Coeff => coeff,
        }
    }
}

/// The random scalar factor of a block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlockScalar {
    Constant(f64),
    /// `⟨L(at), e_mode⟩`, known at time `at`.
    LevyCoordinate {
        at: f64,
        mode: usize,
    },
}

impl BlockScalar {
    fn eval(&self, path: &JumpPath) -> f64 {
        match *self {
            BlockScalar::Constant(c) => c,
            BlockScalar::LevyCoordinate { at, mode } => path
                .jumps
                .iter()
                .take_while(|j| j.time <= at)
                .filter(|j| j.mode == mode)
                .map(|j| j.coeff)
                .sum(),
        }
    }
}

/// `Φ(t, x) = 1_{(start, end]}(t) 1_{marks}(x) w(x) c(ω) v`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrandBlock {
    pub start: f64,
    pub end: f64,
    pub marks: MarkPredicate,
    pub weight: MarkWeight,
    pub scalar: BlockScalar,
    /// `v ∈ H` in spectral coordinates.
    pub value: Vec<f64>,
}

/// A finite sum of predictable blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct SimpleIntegrand {
    blocks: Vec<IntegrandBlock>,
}

impl SimpleIntegrand {
    pub fn new(blocks: Vec<IntegrandBlock>, horizon: f64) -> Result<Self> {
        for b in &blocks {
            if !(0.0 <= b.start && b.start < b.end && b.end <= horizon) {
                return Err(Error::ReversedInterval(b.start, b.end));
            }
            if let BlockScalar::LevyCoordinate { at, .. } = b.scalar {
                if at > b.start {
                    return Err(Error::NonPredictable(format!(
                        "block on ({}, {}] reads the path at {at}, after its left endpoint",
                        b.start, b.end
                    )));
                }
            }
        }
        Ok(SimpleIntegrand { blocks })
    }

    pub fn zero() -> Self {
        SimpleIntegrand { blocks: Vec::new() }
    }

    pub fn blocks(&self) -> &[IntegrandBlock] {
        &self.blocks
    }

    fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.value.len()).max().unwrap_or(0)
    }

    /// `∫∫ Φ dÑ` over `(0, T] × U` for one path.
    pub fn compensated_integral(&self, path: &JumpPath, atoms: &[MarkAtom]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for b in &self.blocks {
            let c = b.scalar.eval(path);
            let hits: f64 = path
                .jumps
                .iter()
                .filter(|j| j.time > b.start && j.time <= b.end && b.marks.accepts(j.mode, j.coeff))
                .map(|j| b.weight.at(j.coeff))
                .sum();
            let comp: f64 = atoms
                .iter()
                .filter(|a| b.marks.accepts(a.mode, a.coeff))
                .map(|a| a.mass * b.weight.at(a.coeff))
                .sum();
            let factor = c * (hits - (b.end - b.start) * comp);
            out.iter_mut()
                .zip(&b.value)
                .for_each(|(o, v)| *o += factor * v);
        }
        out
    }
}

/// Both sides of the duality formula with their standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub se_lhs: f64,
    pub se_rhs: f64,
    pub samples: usize,
}

impl DualityReport {
    pub fn pooled_se(&self) -> f64 {
        self.se_lhs.hypot(self.se_rhs)
    }

    /// `|lhs − rhs|` in pooled standard errors.
    pub fn z(&self) -> f64 {
        let se = self.pooled_se();
        if se > 0.0 {
            (self.lhs - self.rhs).abs() / se
        } else if self.lhs == self.rhs {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Midpoint nodes of `[0, T]`.
pub fn midpoint_nodes(horizon: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|q| horizon * (q as f64 + 0.5) / n as f64)
        .collect()
}

pub(crate) fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (var / n).sqrt())
}

/// Settings shared by the sampled checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampling {
    pub samples: usize,
    pub seed: u64,
    /// Midpoint nodes for `dt` integrals.
    pub nodes: usize,
    pub exec: Exec,
}

/// `(lhs, rhs)` Monte Carlo estimates of the duality formula for `(F, Φ)`.
pub fn duality_check<F: PathFunction>(
    f: &F,
    phi: &SimpleIntegrand,
    model: &LevyModel,
    horizon: f64,
    sampling: Sampling,
) -> Result<DualityReport> {
    let atoms = model.atoms();
    let nodes = midpoint_nodes(horizon, sampling.nodes);
    let dt = horizon / sampling.nodes as f64;
    let per_sample = map_indexed(sampling.exec, sampling.samples, |i| -> Result<(f64, f64)> {
        let path = sample_path(model, horizon, sampling.seed, i as u64);
        let base = f.base(&path)?;
        let value = f.value(&base);
        let lhs = dot(&value, &phi.compensated_integral(&path, &atoms));

        let scalars: Vec<f64> = phi.blocks.iter().map(|b| b.scalar.eval(&path)).collect();
        let mut cache: HashMap<(usize, usize), Vec<f64>> = HashMap::new();
        let mut rhs = 0.0;
        for &t in &nodes {
            for (b, c) in phi.blocks.iter().zip(&scalars) {
                if !(t > b.start && t <= b.end) || *c == 0.0 {
                    continue;
                }
                for (ai, a) in atoms.iter().enumerate() {
                    if !b.marks.accepts(a.mode, a.coeff) || !f.sees_mode(a.mode) {
                        continue;
                    }
                    let ins = PointInsertion::at_atom(t, a);
                    let d = match f.cell(t) {
                        Some(cell) => match cache.entry((cell, ai)) {
                            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                            std::collections::hash_map::Entry::Vacant(e) => {
                                e.insert(f.derivative(&path, &base, &ins)?)
                            }
                        }
                        .clone(),
                        None => f.derivative(&path, &base, &ins)?,
                    };
                    rhs += dt * a.mass * b.weight.at(a.coeff) * c * dot(&d, &b.value);
                }
            }
        }
        Ok((lhs, rhs))
    });
    let per_sample: Vec<(f64, f64)> = per_sample.into_iter().collect::<Result<_>>()?;
    let (lhs, se_lhs) = mean_se(&per_sample.iter().map(|p| p.0).collect::<Vec<_>>());
    let (rhs, se_rhs) = mean_se(&per_sample.iter().map(|p| p.1).collect::<Vec<_>>());
    Ok(DualityReport {
        lhs,
        rhs,
        se_lhs,
        se_rhs,
        samples: sampling.samples,
    })
}

/// Where `D_{s,x}X(t)` comes from.
#[derive(Clone, Copy)]
pub enum DerivativeSource<'a> {
    Scheme(&'a Scheme),
    Reference(&'a ReferenceSolver),
}

/// A mark `coeff · e_mode`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mark {
    pub mode: usize,
    pub coeff: f64,
}

/// Empirical `sup ‖D_{s,x}X(t)‖ (t−s)^{(1−β)/2} / ‖x‖_U`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityProfile {
    pub sup: f64,
    /// `(sample, s, t, mode)` attaining the sup.
    pub argmax: (usize, f64, f64, usize),
    pub samples: usize,
    pub pairs: usize,
}

/// All `(s, t)` with `s < t` on `{iT/n : i = 1..n}`.
pub fn dyadic_pairs(horizon: f64, n: usize) -> Vec<(f64, f64)> {
    let g = |i: usize| horizon * i as f64 / n as f64;
    (1..n)
        .flat_map(|i| (i + 1..=n).map(move |j| (g(i), g(j))))
        .collect()
}

pub fn regularity_profile(
    source: DerivativeSource<'_>,
    model: &LevyModel,
    marks: &[Mark],
    pairs: &[(f64, f64)],
    sampling: Sampling,
) -> Result<RegularityProfile> {
    if let Some(&(s, t)) = pairs.iter().find(|(s, t)| !(t > s)) {
        return Err(invalid(format!(
            "profile grid point (s, t) = ({s}, {t}) needs t > s"
        )));
    }
    let problem = match source {
        DerivativeSource::Scheme(s) => *s.problem(),
        DerivativeSource::Reference(r) => *r.problem(),
    };
    let gamma = (1.0 - problem.beta) / 2.0;
    let u_norm = |m: &Mark| m.coeff.abs() * dirichlet_eigenvalue(m.mode).powf(-gamma);
    let mut s_values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    s_values.sort_by(f64::total_cmp);
    s_values.dedup();

    let per_sample = map_indexed(
        sampling.exec,
        sampling.samples,
        |i| -> Result<(f64, f64, f64, usize)> {
            let path = sample_path(model, problem.horizon, sampling.seed, i as u64);
            let mut best = (0.0, 0.0, 0.0, 0);
            let mut consider = |v: f64, s: f64, t: f64, mode: usize| {
                if v > best.0 {
                    best = (v, s, t, mode);
                }
            };
            match source {
                DerivativeSource::Scheme(scheme) => {
                    let base = scheme.run(&path)?;
                    for &s in &s_values {
                        for mark in marks {
                            let ins = PointInsertion::new(s, mark.mode, mark.coeff)?;
                            let plus = add_point(&path, &ins)?;
                            let states =
                                rerun_from(scheme, &plus, &base.values, scheme_cell(scheme, s))?;
                            for &(_, t) in pairs.iter().filter(|p| p.0 == s) {
                                let m = base.index_at(t)?;
                                let d = sub(&states[m], &base.values[m]);
                                consider(
                                    state_norm(base.space, &d) * (t - s).powf(gamma) / u_norm(mark),
                                    s,
                                    t,
                                    mark.mode,
                                );
                            }
                        }
                    }
                }
                DerivativeSource::Reference(reference) => {
                    let mut extra: Vec<f64> = pairs.iter().flat_map(|p| [p.0, p.1]).collect();
                    extra.sort_by(f64::total_cmp);
                    extra.dedup();
                    let base = reference.run(&path, &extra)?;
                    for &s in &s_values {
                        for mark in marks {
                            let plus =
                                add_point(&path, &PointInsertion::new(s, mark.mode, mark.coeff)?)?;
                            let pert = reference.run(&plus, &extra)?;
                            for &(_, t) in pairs.iter().filter(|p| p.0 == s) {
                                let m = base.index_at(t)?;
                                let d = sub(&pert.values[m], &base.values[m]);
                                consider(
                                    norm(&d) * (t - s).powf(gamma) / u_norm(mark),
                                    s,
                                    t,
                                    mark.mode,
                                );
                            }
                        }
                    }
                }
            }
            Ok(best)
        },
    );
    let mut out = RegularityProfile {
        sup: 0.0,
        argmax: (0, 0.0, 0.0, 0),
        samples: sampling.samples,
        pairs: pairs.len(),
    };
    for (i, r) in per_sample.into_iter().enumerate() {
        let (v, s, t, mode) = r?;
        if v > out.sup {
            out.sup = v;
            out.argmax = (i, s, t, mode);
        }
    }
    Ok(out)
}

/// Outer Lebesgue exponent of the seminorm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OuterNorm {
    Two,
    Infinity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeminormEstimate {
    pub value: f64,
    /// Standard error for `p = 2`; `None` for sample maxima.
    pub se: Option<f64>,
    pub samples: usize,
    /// `‖DF‖_{L^q(0,T; L²(ν; H))}` per sample, in sample order.
    pub per_sample: Vec<f64>,
}

/// Checks `q ∈ (1, 2/(1−β))`, the range on which the regularity bound holds.
pub fn check_seminorm_exponent(q: f64, beta: f64) -> Result<()> {
    let upper = if beta < 1.0 {
        2.0 / (1.0 - beta)
    } else {
        f64::INFINITY
    };
    if q > 1.0 && q < upper {
        Ok(())
    } else {
        Err(invalid(format!(
            "q = {q} outside (1, 2/(1−β)) = (1, {upper}); the regularity estimate requires q in this range"
        )))
    }
}

/// `|F|_{M^{1,p,q}}`: exact `ν`-sum, midpoint `dt` quadrature, Monte Carlo
/// mean (`p = 2`) or sample max (`p = ∞`) over paths.
pub fn m1pq_seminorm<F: PathFunction>(
    f: &F,
    model: &LevyModel,
    horizon: f64,
    p: OuterNorm,
    q: f64,
    sampling: Sampling,
) -> Result<SeminormEstimate> {
    check_seminorm_exponent(q, model.beta())?;
    let atoms = model.atoms();
    let nodes = midpoint_nodes(horizon, sampling.nodes);
    let dt = horizon / sampling.nodes as f64;
    let per_sample = map_indexed(sampling.exec, sampling.samples, |i| -> Result<f64> {
        let path = sample_path(model, horizon, sampling.seed, i as u64);
        let base = f.base(&path)?;
        let mut cache: HashMap<usize, f64> = HashMap::new();
        let mut integral = 0.0;
        for &t in &nodes {
            let inner = |t: f64| -> Result<f64> {
                let mut sq = 0.0;
                for a in atoms.iter().filter(|a| f.sees_mode(a.mode)) {
                    let d = f.derivative(&path, &base, &PointInsertion::at_atom(t, a))?;
                    sq += a.mass * dot(&d, &d);
                }
                Ok(sq)
            };
            let sq = match f.cell(t) {
                Some(c) => match cache.get(&c) {
                    Some(v) => *v,
                    None => {
                        let v = inner(t)?;
                        cache.insert(c, v);
                        v
                    }
                },
                None => inner(t)?,
            };
            integral += dt * sq.powf(q / 2.0);
        }
        Ok(integral.powf(1.0 / q))
    });
    let per_sample: Vec<f64> = per_sample.into_iter().collect::<Result<_>>()?;
    let (value, se) = match p {
        OuterNorm::Two => {
            let sq: Vec<f64> = per_sample.iter().map(|v| v * v).collect();
            let (m, se) = mean_se(&sq);
            let value = m.sqrt();
            (
                value,
                Some(if value > 0.0 { se / (2.0 * value) } else { 0.0 }),
            )
        }
        OuterNorm::Infinity => (per_sample.iter().copied().fold(0.0, f64::max), None),
    };
    Ok(SeminormEstimate {
        value,
        se,
        samples: sampling.samples,
        per_sample,
    })
}

/// How a report compares its two sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    /// `|lhs − rhs| ≤ tol`.
    Equal,
    /// `lhs ≤ rhs + tol`.
    AtMost,
}

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub tolerance: f64,
    pub relation: Relation,
    pub pass: bool,
}

impl IdentityReport {
    pub fn new(name: impl Into<String>, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        let pass = (lhs - rhs).abs() <= tolerance;
        IdentityReport {
            name: name.into(),
            lhs,
            rhs,
            tolerance,
            relation: Relation::Equal,
            pass,
        }
    }

    pub fn at_most(name: impl Into<String>, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        let pass = lhs <= rhs + tolerance;
        IdentityReport {
            name: name.into(),
            lhs,
            rhs,
            tolerance,
            relation: Relation::AtMost,
            pass,
        }
    }

    /// `value ∈ [lo, hi]`, stored as `|value − mid| ≤ half-width`.
    pub fn within(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Self::new(name, value, 0.5 * (lo + hi), 0.5 * (hi - lo))
    }
}

impl fmt::Display for IdentityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rel = match self.relation {
            Relation::Equal => "eq",
            Relation::AtMost => "le",
        };
        write!(
            f,
            "{} lhs={:.12e} rhs={:.12e} tol={:.3e} rel={rel} {}",
            self.name,
            self.lhs,
            self.rhs,
            self.tolerance,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::AmplitudeLaw;
    use crate::solver::{Backend, Discretization, Drift, InitialValue, Problem, ReferenceSettings};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn nonlinear() -> Problem {
        Problem::acceptance_default()
    }

    fn linear() -> Problem {
        Problem::new(0.5, 1.0, Drift::Zero, InitialValue::Parabola { scale: 1.0 }).unwrap()
    }

    fn scheme(problem: Problem, backend: Backend, steps: usize) -> Scheme {
        Scheme::new(
            problem,
            Discretization::new(backend, 1.0 / steps as f64, 1.0).unwrap(),
        )
        .unwrap()
    }

    fn model(k_noise: usize) -> LevyModel {
        LevyModel::new(10.0, 1.1, k_noise, 0.5, AmplitudeLaw::rademacher()).unwrap()
    }

    fn seq(samples: usize, nodes: usize) -> Sampling {
        Sampling {
            samples,
            seed: 5,
            nodes,
            exec: Exec::Sequential,
        }
    }

    #[test]
    fn add_point_contracts() {
        let empty = JumpPath::empty(1.0);
        let ins = PointInsertion::new(0.3, 2, 1.5).unwrap();
        let one = add_point(&empty, &ins).unwrap();
        assert_eq!(one.jumps, vec![ins.jump()]);
        assert!(empty.is_empty());

        let path = JumpPath::from_jumps(
            1.0,
            vec![Jump {
                time: 0.3,
                mode: 1,
                coeff: -1.0,
            }],
        )
        .unwrap();
        let both = add_point(&path, &ins).unwrap();
        assert_eq!(both.jumps[0], path.jumps[0]);
        assert_eq!(both.jumps[1], ins.jump());
        let before = path.increment(0.0, 1.0, 4).unwrap();
        let after = both.increment(0.0, 1.0, 4).unwrap();
        assert_relative_eq!(after.coeffs()[1] - before.coeffs()[1], 1.5);
        assert_eq!(remove_point(&both, &ins).unwrap(), path);

        assert!(add_point(&path, &PointInsertion::new(0.0, 1, 1.0).unwrap()).is_err());
        assert!(add_point(&path, &PointInsertion::new(1.5, 1, 1.0).unwrap()).is_err());
    }

    #[test]
    fn rerun_from_cell_is_bitwise_full_rerun() {
        let s = scheme(nonlinear(), Backend::Spectral { modes: 16 }, 32);
        let path = sample_path(&model(64), 1.0, 3, 0);
        let base = s.run(&path).unwrap();
        for t in [0.01, 0.5, 0.5 + 1e-9, 1.0] {
            let ins = PointInsertion::new(t, 3, 0.7).unwrap();
            let plus = add_point(&path, &ins).unwrap();
            let full = s.run(&plus).unwrap().values;
            let fast = rerun_from(&s, &plus, &base.values, scheme_cell(&s, t)).unwrap();
            assert_eq!(full, fast);
        }
    }

    #[test]
    fn recursion_matches_rerun_nonlinear() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for backend in [Backend::Spectral { modes: 16 }, Backend::Fem { cells: 16 }] {
            let s = scheme(nonlinear(), backend, 32);
            for i in 0..5 {
                let path = sample_path(&model(32), 1.0, 9, i);
                let ins = PointInsertion::new(
                    rng.random_range(0.01..1.0),
                    rng.random_range(1..=12),
                    rng.random_range(-3.0..3.0),
                )
                .unwrap();
                let d = derivative_of_solution(&s, &path, &ins).unwrap();
                assert!(
                    d.relative_discrepancy() < 1e-10,
                    "{backend}: {}",
                    d.relative_discrepancy()
                );
                assert!(d.rerun.last().unwrap().iter().any(|v| *v != 0.0));
            }
        }
    }

    #[test]
    fn mark_invisible_to_the_mesh() {
        let s = scheme(nonlinear(), Backend::Fem { cells: 23 }, 34);
        let path = sample_path(&model(23), 1.0, 1, 0);
        let d = derivative_of_solution(&s, &path, &PointInsertion::new(0.8, 23, -1.3).unwrap())
            .unwrap();
        assert!(d.rerun.iter().flatten().all(|v| v.abs() < 1e-13));
        assert!(d.relative_discrepancy() < 1e-10);
    }

    #[test]
    fn adaptedness_is_exact() {
        let s = scheme(nonlinear(), Backend::Spectral { modes: 16 }, 32);
        let path = sample_path(&model(32), 1.0, 2, 1);
        let ins = PointInsertion::new(0.51, 2, 1.0).unwrap();
        let d = derivative_of_solution(&s, &path, &ins).unwrap();
        for (m, t) in d.times.iter().enumerate() {
            if *t < 0.51 {
                assert!(d.rerun[m].iter().all(|v| *v == 0.0));
                assert!(d.recursion[m].iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn linear_derivative_is_discrete_convolution() {
        let steps = 16;
        let s = scheme(linear(), Backend::Spectral { modes: 8 }, steps);
        let path = sample_path(&model(8), 1.0, 4, 2);
        let ins = PointInsertion::new(0.3, 2, 1.3).unwrap();
        let d = derivative_of_solution(&s, &path, &ins).unwrap();
        let j = 5; // 0.3 ∈ (4/16, 5/16]
        let r = 1.0 / (1.0 + dirichlet_eigenvalue(2) / steps as f64);
        for m in 0..=steps {
            let expect = if m >= j {
                r.powi((m - j + 1) as i32) * 1.3
            } else {
                0.0
            };
            assert_relative_eq!(d.rerun[m][1], expect, epsilon = 1e-14);
            assert_relative_eq!(d.recursion[m][1], expect, epsilon = 1e-14);
            assert!(d.recursion[m]
                .iter()
                .enumerate()
                .all(|(i, v)| i == 1 || *v == 0.0));
        }
    }

    #[test]
    fn chain_rule_examples() {
        let f = SchemeTerminal::new(
            scheme(nonlinear(), Backend::Spectral { modes: 16 }, 32),
            |x: &[f64]| vec![x[0] + 0.3 * x[2]],
        );
        let path = sample_path(&model(32), 1.0, 8, 0);
        let ins = PointInsertion::new(0.4, 1, 2.0).unwrap();
        assert_eq!(chain_rule_check(&f, |v| v, &path, &ins).unwrap(), 0.0);
        assert!(chain_rule_check(&f, |v| v * v, &path, &ins).unwrap() <= 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for i in 0..10 {
            let (a, b, c) = (
                rng.random_range(-2.0..2.0),
                rng.random_range(0.5..3.0),
                rng.random_range(-1.0..1.0),
            );
            let path = sample_path(&model(32), 1.0, 8, i);
            let ins = PointInsertion::new(
                rng.random_range(0.01..1.0),
                rng.random_range(1..=16),
                rng.random_range(-2.0..2.0),
            )
            .unwrap();
            let h = move |v: f64| a * (b * v).sin() + c * v * v;
            assert!(chain_rule_check(&f, h, &path, &ins).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn residual_trivial_cases() {
        let path = sample_path(&model(32), 1.0, 6, 0);
        let ins = PointInsertion::new(0.37, 3, 1.1).unwrap();
        let lin = ReferenceSolver::new(
            linear(),
            ReferenceSettings {
                modes: 32,
                substeps: 128,
            },
        )
        .unwrap();
        assert!(derivative_equation_residual(&lin, &path, &ins, 1.0).unwrap() < 1e-12);
        let nl = ReferenceSolver::new(
            nonlinear(),
            ReferenceSettings {
                modes: 32,
                substeps: 128,
            },
        )
        .unwrap();
        assert!(derivative_equation_residual(&nl, &path, &ins, 0.37).unwrap() < 1e-15);
        assert_eq!(
            derivative_equation_residual(&nl, &path, &ins, 0.2).unwrap(),
            0.0
        );
    }

    #[test]
    fn residual_is_first_order_in_substeps() {
        let path = sample_path(&model(64), 1.0, 6, 1);
        let ins = PointInsertion::new(0.3, 1, 2.0).unwrap();
        let r: Vec<f64> = [256, 512]
            .iter()
            .map(|&m| {
                let reference = ReferenceSolver::new(
                    nonlinear(),
                    ReferenceSettings {
                        modes: 64,
                        substeps: m,
                    },
                )
                .unwrap();
                derivative_equation_residual(&reference, &path, &ins, 1.0).unwrap()
            })
            .collect();
        let ratio = r[0] / r[1];
        assert!((1.7..=2.3).contains(&ratio), "{r:?}");
    }

    fn small() -> (Scheme, LevyModel) {
        let m = LevyModel::new(5.0, 1.1, 8, 0.5, AmplitudeLaw::rademacher()).unwrap();
        (scheme(nonlinear(), Backend::Spectral { modes: 8 }, 16), m)
    }

    #[test]
    fn duality_zero_integrand_and_constant_functional() {
        let (s, m) = small();
        let f = SchemeTerminal::new(s, |x: &[f64]| x.to_vec());
        let rep = duality_check(&f, &SimpleIntegrand::zero(), &m, 1.0, seq(50, 16)).unwrap();
        assert_eq!((rep.lhs, rep.rhs), (0.0, 0.0));

        let phi = SimpleIntegrand::new(
            vec![IntegrandBlock {
                start: 0.0,
                end: 1.0,
                marks: MarkPredicate::all(),
                weight: MarkWeight::Coeff,
                scalar: BlockScalar::Constant(1.0),
                value: vec![1.0, 0.5],
            }],
            1.0,
        )
        .unwrap();
        let rep = duality_check(
            &ConstantFunction(vec![2.0, -1.0]),
            &phi,
            &m,
            1.0,
            seq(4000, 16),
        )
        .unwrap();
        assert_eq!(rep.rhs, 0.0);
        assert!(rep.z() < 3.0, "{rep:?}");
    }

    #[test]
    fn duality_linear_closed_form() {
        let steps = 16;
        let m = LevyModel::new(5.0, 1.1, 8, 0.5, AmplitudeLaw::rademacher()).unwrap();
        let f = SchemeTerminal::new(
            scheme(linear(), Backend::Spectral { modes: 8 }, steps),
            |x: &[f64]| vec![x[0]],
        );
        let phi = SimpleIntegrand::new(
            vec![IntegrandBlock {
                start: 0.25,
                end: 1.0,
                marks: MarkPredicate::modes(vec![1]),
                weight: MarkWeight::Coeff,
                scalar: BlockScalar::Constant(2.0),
                value: vec![1.0],
            }],
            1.0,
        )
        .unwrap();
        let rep = duality_check(&f, &phi, &m, 1.0, seq(20_000, 64)).unwrap();
        let k = 1.0 / steps as f64;
        let r = 1.0 / (1.0 + k * dirichlet_eigenvalue(1));
        let kernel: f64 = (5..=steps)
            .map(|j| k * r.powi((steps - j + 1) as i32))
            .sum();
        let exact: f64 = m
            .atoms()
            .iter()
            .filter(|a| a.mode == 1)
            .map(|a| a.mass * 2.0 * a.coeff * a.coeff * kernel)
            .sum();
        assert!((rep.rhs - exact).abs() < 1e-8, "{} vs {exact}", rep.rhs);
        assert!(
            (rep.lhs - exact).abs() < 3.0 * rep.se_lhs,
            "{rep:?} vs {exact}"
        );
    }

    #[test]
    fn non_predictable_integrands_rejected() {
        let block = IntegrandBlock {
            start: 0.2,
            end: 0.6,
            marks: MarkPredicate::all(),
            weight: MarkWeight::One,
            scalar: BlockScalar::LevyCoordinate { at: 0.3, mode: 1 },
            value: vec![1.0],
        };
        assert!(matches!(
            SimpleIntegrand::new(vec![block.clone()], 1.0),
            Err(Error::NonPredictable(_))
        ));
        let ok = IntegrandBlock {
            scalar: BlockScalar::LevyCoordinate { at: 0.2, mode: 1 },
            ..block.clone()
        };
        assert!(SimpleIntegrand::new(vec![ok], 1.0).is_ok());
        let reversed = IntegrandBlock {
            start: 0.7,
            ..block
        };
        assert!(SimpleIntegrand::new(vec![reversed], 1.0).is_err());
    }

    #[test]
    fn compensated_integral_of_one_jump() {
        let m = LevyModel::new(5.0, 1.1, 4, 0.5, AmplitudeLaw::rademacher()).unwrap();
        let path = JumpPath::from_jumps(
            1.0,
            vec![Jump {
                time: 0.5,
                mode: 2,
                coeff: 3.0,
            }],
        )
        .unwrap();
        let phi = SimpleIntegrand::new(
            vec![IntegrandBlock {
                start: 0.0,
                end: 1.0,
                marks: MarkPredicate {
                    modes: None,
                    sign: Some(Sign::Positive),
                },
                weight: MarkWeight::One,
                scalar: BlockScalar::Constant(1.0),
                value: vec![1.0],
            }],
            1.0,
        )
        .unwrap();
        // One hit minus half the total intensity (positive marks only).
        assert_relative_eq!(
            phi.compensated_integral(&path, &m.atoms())[0],
            1.0 - 2.5,
            epsilon = 1e-14
        );
    }

    #[test]
    fn regularity_profile_linear_reference_closed_form() {
        let problem = linear();
        let reference = ReferenceSolver::new(
            problem,
            ReferenceSettings {
                modes: 16,
                substeps: 64,
            },
        )
        .unwrap();
        let m = model(16);
        let j = 4;
        let mark = Mark {
            mode: j,
            coeff: m.sigma(j),
        };
        let pairs = dyadic_pairs(1.0, 16);
        let prof = regularity_profile(
            DerivativeSource::Reference(&reference),
            &m,
            &[mark],
            &pairs,
            seq(2, 1),
        )
        .unwrap();
        let lambda = dirichlet_eigenvalue(j);
        let exact = pairs
            .iter()
            .map(|&(s, t)| lambda.powf(0.25) * (-lambda * (t - s)).exp() * (t - s).powf(0.25))
            .fold(0.0, f64::max);
        assert_relative_eq!(prof.sup, exact, max_relative = 1e-12);
        // The continuous maximum sits at λ(t−s) = (1−β)/2.
        assert!(prof.sup <= (0.25f64 / std::f64::consts::E).powf(0.25) + 1e-12);
    }

    #[test]
    fn regularity_profile_beta_one_is_contraction() {
        let problem = Problem::new(1.0, 1.0, Drift::Zero, InitialValue::Zero).unwrap();
        let s = scheme(problem, Backend::Spectral { modes: 16 }, 32);
        let m = LevyModel::new(5.0, 1.1, 16, 1.0, AmplitudeLaw::rademacher()).unwrap();
        let marks: Vec<Mark> = [1, 2, 8]
            .iter()
            .map(|&mode| Mark { mode, coeff: 1.0 })
            .collect();
        let prof = regularity_profile(
            DerivativeSource::Scheme(&s),
            &m,
            &marks,
            &dyadic_pairs(1.0, 8),
            seq(3, 1),
        )
        .unwrap();
        assert!(prof.sup <= 1.0 && prof.sup > 0.0, "{prof:?}");
        assert!(regularity_profile(
            DerivativeSource::Scheme(&s),
            &m,
            &marks,
            &[(0.5, 0.5)],
            seq(1, 1)
        )
        .is_err());
    }

    #[test]
    fn seminorm_contracts() {
        let (s, m) = small();
        assert!(matches!(
            m1pq_seminorm(
                &ConstantFunction(vec![1.0]),
                &m,
                1.0,
                OuterNorm::Two,
                4.0,
                seq(4, 16)
            ),
            Err(Error::InvalidParameter(_))
        ));
        let c = m1pq_seminorm(
            &ConstantFunction(vec![1.0]),
            &m,
            1.0,
            OuterNorm::Infinity,
            2.0,
            seq(4, 16),
        )
        .unwrap();
        assert_eq!(c.value, 0.0);

        let f = SchemeTerminal::new(s, |x: &[f64]| x.to_vec());
        let a = m1pq_seminorm(&f, &m, 1.0, OuterNorm::Two, 2.0, seq(40, 32)).unwrap();
        let b = m1pq_seminorm(&f, &m, 1.0, OuterNorm::Two, 2.0, seq(40, 64)).unwrap();
        assert!(
            (a.value / b.value - 1.0).abs() < 0.1,
            "{} {}",
            a.value,
            b.value
        );
    }

    #[test]
    fn seminorm_linear_closed_form() {
        let steps = 16;
        let m = LevyModel::new(5.0, 1.1, 8, 0.5, AmplitudeLaw::rademacher()).unwrap();
        let f = SchemeTerminal::new(
            scheme(linear(), Backend::Spectral { modes: 8 }, steps),
            |x: &[f64]| vec![x[0]],
        );
        let q = 3.0;
        let est = m1pq_seminorm(&f, &m, 1.0, OuterNorm::Two, q, seq(10, 64)).unwrap();
        let k = 1.0 / steps as f64;
        let r = 1.0 / (1.0 + k * dirichlet_eigenvalue(1));
        let mass_c2: f64 = m
            .atoms()
            .iter()
            .filter(|a| a.mode == 1)
            .map(|a| a.mass * a.coeff * a.coeff)
            .sum();
        let integral: f64 = (1..=steps)
            .map(|j| k * (mass_c2 * r.powi(2 * (steps - j + 1) as i32)).powf(q / 2.0))
            .sum();
        let exact = integral.powf(1.0 / q);
        assert_relative_eq!(est.value, exact, max_relative = 1e-12);
        assert!((est.value - exact).abs() <= 3.0 * est.se.unwrap() + 1e-12);
    }

    proptest! {
        #[test]
        fn linear_derivative_is_linear_in_the_mark(c1 in -3.0f64..3.0, c2 in -3.0f64..3.0, s in 0.01f64..1.0, mode in 1usize..8) {
            let sch = scheme(linear(), Backend::Fem { cells: 8 }, 16);
            let path = sample_path(&model(8), 1.0, 1, 0);
            let d = |c: f64| derivative_of_solution(&sch, &path, &PointInsertion::new(s, mode, c).unwrap()).unwrap().rerun;
            let (a, b, ab) = (d(c1), d(c2), d(c1 + c2));
            for m in 0..a.len() {
                for i in 0..a[m].len() {
                    prop_assert!((ab[m][i] - a[m][i] - b[m][i]).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn insert_then_remove_restores(t in 0.001f64..1.0, mode in 1usize..20, c in -2.0f64..2.0, idx in 0u64..50) {
            let path = sample_path(&model(32), 1.0, 13, idx);
            let ins = PointInsertion::new(t, mode, c).unwrap();
            prop_assert_eq!(remove_point(&add_point(&path, &ins).unwrap(), &ins).unwrap(), path);
        }
    }
}
