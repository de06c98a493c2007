//! Path functionals `f(x) = φ(∫ x dμ₁, …, ∫ x dμ_n)`.
//!
//! Every time measure is a finite sum of Dirac atoms plus a constant Lebesgue
//! density on `[0, T]`. The outer map only ever sees the scalar pairings
//! `p_i = ⟨∫ x dμ_i, ψ_i⟩`, so `φ(y) = g(p)` and `φ′(y) = (∂_i g(p) ψ_i)_i`.
//! Pairings are exact on both backends: spectral states pair coefficientwise,
//! P1 states through the exact load vector of `ψ`.

use crate::error::{invalid, Error, Result};
use crate::fem::{spectral_load, FemMesh};
use crate::solver::{Space, TrajectoryRecord};
use crate::spectral::eigenfunction;

/// `Σ w_i δ_{t_i} + c·dt` on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeMeasure {
    atoms: Vec<(f64, f64)>,
    density: f64,
}

impl TimeMeasure {
    pub fn new(mut atoms: Vec<(f64, f64)>, density: f64) -> Result<Self> {
        if atoms
            .iter()
            .any(|&(t, w)| !t.is_finite() || !(w >= 0.0) || !w.is_finite())
        {
            return Err(invalid(
                "atoms need finite times and finite nonnegative weights",
            ));
        }
        if !(density >= 0.0) || !density.is_finite() {
            return Err(invalid(format!(
                "density must be finite and nonnegative, got {density}"
            )));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(TimeMeasure { atoms, density })
    }

    pub fn dirac(t: f64) -> Self {
        TimeMeasure {
            atoms: vec![(t, 1.0)],
            density: 0.0,
        }
    }

    pub fn lebesgue(density: f64) -> Result<Self> {
        Self::new(Vec::new(), density)
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn density(&self) -> f64 {
        self.density
    }

    /// `μ([0, T])`.
    pub fn mass(&self, horizon: f64) -> f64 {
        self.atoms.iter().map(|a| a.1).sum::<f64>() + self.density * horizon
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        match self.atoms.iter().find(|a| !(0.0..=horizon).contains(&a.0)) {
            Some(&(t, _)) => Err(Error::OutOfRange {
                t,
                lo: 0.0,
                hi: horizon,
            }),
            None => Ok(()),
        }
    }

    /// Weight the measure gives to the piece `[start, end)`, or `[start, end]`
    /// for the last piece.
    fn piece_weight(&self, start: f64, end: f64, last: bool) -> f64 {
        let lo = self.atoms.partition_point(|a| a.0 < start);
        let hi = if last {
            self.atoms.partition_point(|a| a.0 <= end)
        } else {
            self.atoms.partition_point(|a| a.0 < end)
        };
        self.atoms[lo..hi].iter().map(|a| a.1).sum::<f64>() + self.density * (end - start)
    }
}

/// A test vector `ψ = Σ_j c_j e_j ∈ H` given by its sine coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    coeffs: Vec<f64>,
}

impl TestFunction {
    pub fn new(coeffs: Vec<f64>) -> Self {
        TestFunction { coeffs }
    }

    pub fn zero() -> Self {
        TestFunction { coeffs: Vec::new() }
    }

    /// `e_j`.
    pub fn mode(j: usize) -> Self {
        assert!(j >= 1, "modes are 1-based");
        let mut coeffs = vec![0.0; j];
        coeffs[j - 1] = 1.0;
        TestFunction { coeffs }
    }

    /// `Σ_{j≤K} e_j(ξ₀) e_j`, the spectral truncation of `δ_{ξ₀}`.
    pub fn truncated_delta(xi0: f64, modes: usize) -> Self {
        TestFunction {
            coeffs: (1..=modes).map(|j| eigenfunction(j, xi0)).collect(),
        }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Weights `w` with `⟨y, ψ⟩ = Σ_i y_i w_i` for a state `y` in `space`.
    pub fn dual_weights(&self, space: Space) -> Vec<f64> {
        match space {
            Space::Spectral { modes } => {
                let mut w = vec![0.0; modes];
                let n = modes.min(self.coeffs.len());
                w[..n].copy_from_slice(&self.coeffs[..n]);
                w
            }
            Space::Fem { cells } => {
                spectral_load(&FemMesh::new(cells).expect("recorded mesh"), &self.coeffs)
            }
        }
    }
}

/// Outer map `g` acting on the pairings `p_1..p_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outer {
    /// `c` (no components).
    Constant(f64),
    /// `p₁`.
    Linear,
    /// `p₁ p₂`.
    Product,
    /// `Σ p_i²`.
    SumOfSquares,
    /// `sin(ω p₁)`.
    Sine { freq: f64 },
}

impl Outer {
    fn arity_ok(&self, n: usize) -> bool {
        match self {
            Outer::Constant(_) => n == 0,
            Outer::Linear | Outer::Sine { .. } => n == 1,
            Outer::Product => n == 2,
            Outer::SumOfSquares => n >= 1,
        }
    }

    pub fn value(&self, p: &[f64]) -> f64 {
        match *self {
            Outer::Constant(c) => c,
            Outer::Linear => p[0],
            Outer::Product => p[0] * p[1],
            Outer::SumOfSquares => p.iter().map(|x| x * x).sum(),
            Outer::Sine { freq } => (freq * p[0]).sin(),
        }
    }

    /// `∂g/∂p_i`.
    pub fn partials(&self, p: &[f64]) -> Vec<f64> {
        match *self {
            Outer::Constant(_) => Vec::new(),
            Outer::Linear => vec![1.0],
            Outer::Product => vec![p[1], p[0]],
            Outer::SumOfSquares => p.iter().map(|x| 2.0 * x).collect(),
            Outer::Sine { freq } => vec![freq * (freq * p[0]).cos()],
        }
    }
}

/// `f(x) = g(⟨∫ x dμ_1, ψ_1⟩, …, ⟨∫ x dμ_n, ψ_n⟩)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathFunctional {
    components: Vec<(TimeMeasure, TestFunction)>,
    outer: Outer,
}

impl PathFunctional {
    pub fn new(components: Vec<(TimeMeasure, TestFunction)>, outer: Outer) -> Result<Self> {
        if !outer.arity_ok(components.len()) {
            return Err(invalid(format!(
                "{outer:?} cannot take {} components",
                components.len()
            )));
        }
        Ok(PathFunctional { components, outer })
    }

    pub fn constant(c: f64) -> Self {
        PathFunctional {
            components: Vec::new(),
            outer: Outer::Constant(c),
        }
    }

    /// `⟨x(t), ψ⟩`.
    pub fn linear_at(t: f64, psi: TestFunction) -> Self {
        PathFunctional {
            components: vec![(TimeMeasure::dirac(t), psi)],
            outer: Outer::Linear,
        }
    }

    /// `⟨x(t₁), ψ₁⟩⟨x(t₂), ψ₂⟩`.
    pub fn product_at(t1: f64, psi1: TestFunction, t2: f64, psi2: TestFunction) -> Self {
        PathFunctional {
            components: vec![
                (TimeMeasure::dirac(t1), psi1),
                (TimeMeasure::dirac(t2), psi2),
            ],
            outer: Outer::Product,
        }
    }

    pub fn components(&self) -> &[(TimeMeasure, TestFunction)] {
        &self.components
    }

    pub fn outer(&self) -> Outer {
        self.outer
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        self.components
            .iter()
            .try_for_each(|(mu, _)| mu.validate(horizon))
    }

    /// `φ` on integrated fields given in spectral coordinates.
    pub fn phi(&self, ys: &[Vec<f64>]) -> f64 {
        self.outer.value(&self.pairings(ys))
    }

    /// `φ′(y)`, one spectral field per component.
    pub fn phi_gradient(&self, ys: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let d = self.outer.partials(&self.pairings(ys));
        self.components
            .iter()
            .zip(d)
            .map(|((_, psi), di)| psi.coeffs.iter().map(|c| di * c).collect())
            .collect()
    }

    /// A global Lipschitz constant of `φ′` on `Hⁿ` with the product norm.
    pub fn gradient_lipschitz(&self) -> f64 {
        let norms: Vec<f64> = self.components.iter().map(|(_, psi)| psi.norm()).collect();
        match self.outer {
            Outer::Constant(_) | Outer::Linear => 0.0,
            Outer::Product => norms[0] * norms[1] * std::f64::consts::SQRT_2,
            Outer::SumOfSquares => 2.0 * norms.iter().fold(0.0f64, |m, n| m.max(n * n)),
            Outer::Sine { freq } => freq * freq * norms[0] * norms[0],
        }
    }

    fn pairings(&self, ys: &[Vec<f64>]) -> Vec<f64> {
        self.components
            .iter()
            .zip(ys)
            .map(|((_, psi), y)| psi.coeffs.iter().zip(y).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// A streaming evaluator for trajectories in `space`.
    pub fn accumulator(&self, space: Space, horizon: f64) -> Result<FunctionalAccumulator<'_>> {
        self.validate(horizon)?;
        Ok(FunctionalAccumulator {
            functional: self,
            weights: self
                .components
                .iter()
                .map(|(_, psi)| psi.dual_weights(space))
                .collect(),
            horizon,
            sums: vec![0.0; self.components.len()],
            current: None,
        })
    }
}

/// Evaluates a [`PathFunctional`] from a stream of `(t_i, x(t_i))` pushes
/// describing a piecewise constant path, without storing it.
pub struct FunctionalAccumulator<'a> {
    functional: &'a PathFunctional,
    weights: Vec<Vec<f64>>,
    horizon: f64,
    sums: Vec<f64>,
    current: Option<(f64, Vec<f64>)>,
}

impl FunctionalAccumulator<'_> {
    /// The path takes value `x` from `t` until the next push.
    pub fn push(&mut self, t: f64, x: &[f64]) {
        let pairs: Vec<f64> = self
            .weights
            .iter()
            .map(|w| w.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect();
        if let Some((start, prev)) = self.current.take() {
            self.close(start, t, &prev, false);
        }
        self.current = Some((t, pairs));
    }

    pub fn finish(mut self) -> f64 {
        if let Some((start, prev)) = self.current.take() {
            self.close(start, self.horizon, &prev, true);
        }
        self.functional.outer.value(&self.sums)
    }

    fn close(&mut self, start: f64, end: f64, pairs: &[f64], last: bool) {
        for ((sum, (mu, _)), p) in self
            .sums
            .iter_mut()
            .zip(&self.functional.components)
            .zip(pairs)
        {
            *sum += mu.piece_weight(start, end, last) * p;
        }
    }
}

/// `∫ x(t) μ(dt)` of a recorded trajectory, in the record's coordinates.
pub fn integrate_path(rec: &TrajectoryRecord, mu: &TimeMeasure) -> Result<Vec<f64>> {
    mu.validate(rec.horizon)?;
    let dim = rec.values.first().map_or(0, Vec::len);
    let mut out = vec![0.0; dim];
    for &(t, w) in &mu.atoms {
        out.iter_mut()
            .zip(rec.eval(t)?)
            .for_each(|(o, v)| *o += w * v);
    }
    if mu.density > 0.0 {
        rec.for_each_piece(|start, end, v, _| {
            let c = mu.density * (end - start);
            out.iter_mut().zip(v).for_each(|(o, x)| *o += c * x);
        });
    }
    Ok(out)
}

/// `f(rec)`.
pub fn eval_functional(f: &PathFunctional, rec: &TrajectoryRecord) -> Result<f64> {
    let mut acc = f.accumulator(rec.space, rec.horizon)?;
    for (t, v) in rec.times.iter().zip(&rec.values) {
        acc.push(*t, v);
    }
    Ok(acc.finish())
}

/// `(⟨x(t₁),ψ₁⟩⟨x(t₂),ψ₂⟩, ⟨x(t₁),ψ₁⟩, ⟨x(t₂),ψ₂⟩)`, from which
/// `Cov = E f₁ − E f₂ E f₃`.
pub fn covariance_triple(
    horizon: f64,
    t1: f64,
    t2: f64,
    psi1: &TestFunction,
    psi2: &TestFunction,
) -> Result<[PathFunctional; 3]> {
    for t in [t1, t2] {
        if !(t > 0.0 && t <= horizon) {
            return Err(Error::OutOfRange {
                t,
                lo: 0.0,
                hi: horizon,
            });
        }
    }
    Ok([
        PathFunctional::product_at(t1, psi1.clone(), t2, psi2.clone()),
        PathFunctional::linear_at(t1, psi1.clone()),
        PathFunctional::linear_at(t2, psi2.clone()),
    ])
}

/// Sample covariance `mean(f₁) − mean(f₂) mean(f₃)` and its delta-method
/// standard error.
pub fn covariance_estimate(triples: &[[f64; 3]]) -> (f64, f64) {
    let n = triples.len() as f64;
    let mean = |i: usize| triples.iter().map(|t| t[i]).sum::<f64>() / n;
    let (m1, m2, m3) = (mean(0), mean(1), mean(2));
    let cov = m1 - m2 * m3;
    let infl: Vec<f64> = triples.iter().map(|t| (t[1] - m2) * (t[2] - m3)).collect();
    let mi = infl.iter().sum::<f64>() / n;
    let var = infl.iter().map(|x| (x - mi) * (x - mi)).sum::<f64>() / (n - 1.0).max(1.0);
    (cov, (var / n).sqrt())
}
