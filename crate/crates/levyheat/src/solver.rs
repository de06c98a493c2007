//! The linearly implicit Euler scheme and the spectral reference solver.
//!
//! Scheme, on either backend:
//!
//! ```text
//! X⁰ = P_h X₀,   X^m = S_{h,k}(X^{m-1} + k F(X^{m-1}) + L(t_m) - L(t_{m-1}))
//! ```
//!
//! with `S_{h,k} = (I + kA_h)^{-1} P_h`, `t_m = mk` and `M = max{m : mk ≤ T}`.
//! Its piecewise constant interpolation takes `X^m` on `[t_m, t_{m+1})` and
//! `X^M` on `[t_M, T]`. Since `S_{h,k}` already contains `P_h`, starting from
//! `P_h X₀` or from `X₀` gives the same iterates.
//!
//! The reference solves the spectral truncation on `N_ref` modes with
//! exponential Euler substeps: the semigroup is applied exactly per mode, the
//! drift integral by the left-point exponential rule, and jumps enter exactly
//! at their arrival times (which are merged into the substep grid).

use std::f64::consts::{PI, SQRT_2};

use log::debug;

use crate::error::{invalid, Error, Result};
use crate::fem::{
    add_mode_load, interpolate_spectral, project_l2_fn, FemMesh, FemStepper, GaussRule,
};
use crate::noise::{Jump, JumpPath};
use crate::spectral::{dirichlet_eigenvalue, SineTransform, SineWork};

/// Scalar drift `f` of the Nemytskii operator `F(x)(ξ) = f(x(ξ))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Drift {
    Zero,
    /// `f(u) = a sin u`, with `|f'|, |f''| ≤ |a|`.
    Sine {
        amplitude: f64,
    },
}

impl Drift {
    pub fn value(&self, u: f64) -> f64 {
        match *self {
            Drift::Zero => 0.0,
            Drift::Sine { amplitude } => amplitude * u.sin(),
        }
    }

    pub fn derivative(&self, u: f64) -> f64 {
        match *self {
            Drift::Zero => 0.0,
            Drift::Sine { amplitude } => amplitude * u.cos(),
        }
    }

    pub fn second_derivative(&self, u: f64) -> f64 {
        match *self {
            Drift::Zero => 0.0,
            Drift::Sine { amplitude } => -amplitude * u.sin(),
        }
    }

    /// Bound on `|f'|` and `|f''|`.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            Drift::Zero => 0.0,
            Drift::Sine { amplitude } => amplitude.abs(),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Drift::Zero)
            || matches!(self, Drift::Sine { amplitude } if *amplitude == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialValue {
    Zero,
    /// `X₀(ξ) = c ξ(1-ξ)`.
    Parabola {
        scale: f64,
    },
}

impl InitialValue {
    pub fn value(&self, xi: f64) -> f64 {
        match *self {
            InitialValue::Zero => 0.0,
            InitialValue::Parabola { scale } => scale * xi * (1.0 - xi),
        }
    }

    /// Coefficient on `e_j`: `4√2 c/(jπ)³` for odd `j`, zero otherwise.
    pub fn coefficient(&self, j: usize) -> f64 {
        match *self {
            InitialValue::Zero => 0.0,
            InitialValue::Parabola { scale } => {
                if j % 2 == 1 {
                    scale * 4.0 * SQRT_2 / (j as f64 * PI).powi(3)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn coefficients(&self, modes: usize) -> Vec<f64> {
        (1..=modes).map(|j| self.coefficient(j)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Problem {
    pub beta: f64,
    pub horizon: f64,
    pub drift: Drift,
    pub initial: InitialValue,
    /// Smoothing exponent of the drift, recorded for documentation (> 1/2 in 1D).
    pub delta: f64,
}

impl Problem {
    pub fn new(beta: f64, horizon: f64, drift: Drift, initial: InitialValue) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(invalid(format!("β must lie in (0, 1], got {beta}")));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Problem {
            beta,
            horizon,
            drift,
            initial,
            delta: 1.0,
        })
    }

    /// β = 1/2, T = 1, f(u) = sin(u)/2, X₀(ξ) = ξ(1-ξ).
    pub fn acceptance_default() -> Self {
        Problem {
            beta: 0.5,
            horizon: 1.0,
            drift: Drift::Sine { amplitude: 0.5 },
            initial: InitialValue::Parabola { scale: 1.0 },
            delta: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backend {
    Spectral { modes: usize },
    Fem { cells: usize },
}

impl Backend {
    pub fn h(&self) -> f64 {
        match *self {
            Backend::Spectral { modes } => 1.0 / modes as f64,
            Backend::Fem { cells } => 1.0 / cells as f64,
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            Backend::Spectral { modes } => modes,
            Backend::Fem { cells } => cells - 1,
        }
    }
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Backend::Spectral { modes } => write!(f, "spectral(N={modes})"),
            Backend::Fem { cells } => write!(f, "fem(cells={cells})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discretization {
    pub backend: Backend,
    pub k: f64,
    pub steps: usize,
}

impl Discretization {
    /// `M = max{m : mk ≤ T}`.
    pub fn new(backend: Backend, k: f64, horizon: f64) -> Result<Self> {
        if !(k > 0.0 && k < 1.0) {
            return Err(invalid(format!("time step must lie in (0, 1), got {k}")));
        }
        match backend {
            Backend::Spectral { modes: 0 } => return Err(invalid("spectral backend needs N ≥ 1")),
            Backend::Fem { cells } if cells < 2 => {
                return Err(invalid("FEM backend needs at least 2 cells"))
            }
            _ => {}
        }
        let mut steps = (horizon / k).floor() as usize;
        while (steps + 1) as f64 * k <= horizon {
            steps += 1;
        }
        while steps > 0 && steps as f64 * k > horizon {
            steps -= 1;
        }
        Ok(Discretization { backend, k, steps })
    }

    pub fn h(&self) -> f64 {
        self.backend.h()
    }

    pub fn time(&self, m: usize) -> f64 {
        m as f64 * self.k
    }
}

/// How a jump mark enters the FEM space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Injection {
    #[default]
    L2Projection,
    NodalInterpolation,
}

/// Coordinates of a recorded state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    /// Coefficients on `e_1..e_N`.
    Spectral { modes: usize },
    /// Values at the interior nodes of a uniform mesh.
    Fem { cells: usize },
}

/// A piecewise constant trajectory: `values[i]` holds on `[times[i], times[i+1])`,
/// the last value on `[times.last(), T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub space: Space,
    pub horizon: f64,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    /// Jumps dropped because their mode exceeds the spectral capacity.
    pub truncated_jumps: usize,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn index_at(&self, t: f64) -> Result<usize> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::OutOfRange {
                t,
                lo: 0.0,
                hi: self.horizon,
            });
        }
        Ok(self.times.partition_point(|&s| s <= t).max(1) - 1)
    }

    /// Value of the piecewise constant interpolation at `t ∈ [0, T]`.
    pub fn eval(&self, t: f64) -> Result<&[f64]> {
        Ok(&self.values[self.index_at(t)?])
    }

    /// Calls `f(start, end, value, last)` for every constant piece.
    pub fn for_each_piece(&self, mut f: impl FnMut(f64, f64, &[f64], bool)) {
        let n = self.times.len();
        for i in 0..n {
            let end = if i + 1 < n {
                self.times[i + 1]
            } else {
                self.horizon
            };
            f(self.times[i], end, &self.values[i], i + 1 == n);
        }
    }

    /// Columnar text: a `#` header naming the space, then `t v_1 ... v_d` per row.
    pub fn to_text(&self) -> String {
        let space = match self.space {
            Space::Spectral { modes } => format!("spectral modes={modes}"),
            Space::Fem { cells } => format!("fem cells={cells}"),
        };
        let mut s = format!("# trajectory v1 {space} horizon={}\n", self.horizon);
        for (t, v) in self.times.iter().zip(&self.values) {
            s.push_str(&t.to_string());
            for x in v {
                s.push(' ');
                s.push_str(&x.to_string());
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let perr = |line: usize, msg: &str| Error::Parse {
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| perr(1, "empty input"))?;
        let fields: Vec<&str> = header
            .strip_prefix("# trajectory v1 ")
            .ok_or_else(|| perr(1, "missing '# trajectory v1' header"))?
            .split_whitespace()
            .collect();
        if fields.len() != 3 {
            return Err(perr(1, "malformed header"));
        }
        let value = |kv: &str, key: &str| -> Result<String> {
            kv.strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .map(str::to_string)
                .ok_or_else(|| perr(1, &format!("expected {key}=...")))
        };
        let size: usize = match fields[0] {
            "spectral" => value(fields[1], "modes")?
                .parse()
                .map_err(|_| perr(1, "bad size"))?,
            "fem" => value(fields[1], "cells")?
                .parse()
                .map_err(|_| perr(1, "bad size"))?,
            _ => return Err(perr(1, "unknown space")),
        };
        let space = if fields[0] == "spectral" {
            Space::Spectral { modes: size }
        } else {
            Space::Fem { cells: size }
        };
        let horizon: f64 = value(fields[2], "horizon")?
            .parse()
            .map_err(|_| perr(1, "bad horizon"))?;
        let (mut times, mut values) = (Vec::new(), Vec::new());
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let nums: std::result::Result<Vec<f64>, _> =
                line.split_whitespace().map(str::parse::<f64>).collect();
            let nums = nums.map_err(|_| perr(i + 1, "bad number"))?;
            if nums.is_empty() {
                return Err(perr(i + 1, "empty row"));
            }
            times.push(nums[0]);
            values.push(nums[1..].to_vec());
        }
        Ok(TrajectoryRecord {
            space,
            horizon,
            times,
            values,
            truncated_jumps: 0,
        })
    }
}

/// Scratch buffers for one running solve.
pub struct Work {
    sine: SineWork,
    phys: Vec<f64>,
    rhs: Vec<f64>,
}

enum Stepper {
    Spectral {
        resolvent: Vec<f64>,
        transform: SineTransform,
    },
    Fem {
        stepper: FemStepper,
        injection: Injection,
    },
}

/// The scheme for one `(problem, discretization)` pair. Immutable once built;
/// share it across workers.
pub struct Scheme {
    problem: Problem,
    disc: Discretization,
    stepper: Stepper,
}

impl Scheme {
    pub fn new(problem: Problem, disc: Discretization) -> Result<Self> {
        Self::with_injection(problem, disc, Injection::default())
    }

    pub fn with_injection(
        problem: Problem,
        disc: Discretization,
        injection: Injection,
    ) -> Result<Self> {
        let stepper = match disc.backend {
            Backend::Spectral { modes } => Stepper::Spectral {
                resolvent: (1..=modes)
                    .map(|j| 1.0 / (1.0 + disc.k * dirichlet_eigenvalue(j)))
                    .collect(),
                transform: SineTransform::new(modes),
            },
            Backend::Fem { cells } => Stepper::Fem {
                stepper: FemStepper::new(FemMesh::new(cells)?, disc.k)?,
                injection,
            },
        };
        Ok(Scheme {
            problem,
            disc,
            stepper,
        })
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn disc(&self) -> &Discretization {
        &self.disc
    }

    pub fn dim(&self) -> usize {
        self.disc.backend.dim()
    }

    pub fn space(&self) -> Space {
        match self.disc.backend {
            Backend::Spectral { modes } => Space::Spectral { modes },
            Backend::Fem { cells } => Space::Fem { cells },
        }
    }

    pub fn work(&self) -> Work {
        let d = self.dim();
        Work {
            sine: SineWork::default(),
            phys: vec![0.0; d],
            rhs: vec![0.0; d],
        }
    }

    /// `X⁰ = P_h X₀`.
    pub fn initial_state(&self) -> Vec<f64> {
        match &self.stepper {
            Stepper::Spectral { .. } => self.problem.initial.coefficients(self.dim()),
            Stepper::Fem { stepper, .. } => {
                let init = self.problem.initial;
                project_l2_fn(
                    |x| init.value(x),
                    stepper.mesh(),
                    &GaussRule::new(3).expect("3-point rule"),
                )
                .nodal
            }
        }
    }

    /// `F(x)` in backend coordinates.
    pub fn drift(&self, x: &[f64], out: &mut [f64], w: &mut Work) {
        let f = self.problem.drift;
        if f.is_zero() {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        match &self.stepper {
            Stepper::Spectral { transform, .. } => {
                transform.synthesize(x, &mut w.phys, &mut w.sine);
                w.phys.iter_mut().for_each(|u| *u = f.value(*u));
                transform.analyze(&w.phys, out, &mut w.sine);
            }
            Stepper::Fem { .. } => {
                out.iter_mut().zip(x).for_each(|(o, u)| *o = f.value(*u));
            }
        }
    }

    /// `out = S_{h,k}(x + k drift + Σ jumps)`; returns the number of jumps
    /// outside the spectral capacity (removed by `P_N`).
    pub fn advance(
        &self,
        x: &[f64],
        drift: &[f64],
        jumps: &[Jump],
        out: &mut [f64],
        w: &mut Work,
    ) -> usize {
        let k = self.disc.k;
        let mut dropped = 0;
        match &self.stepper {
            Stepper::Spectral { resolvent, .. } => {
                for i in 0..x.len() {
                    out[i] = x[i] + k * drift[i];
                }
                for j in jumps {
                    if j.mode <= x.len() {
                        out[j.mode - 1] += j.coeff;
                    } else {
                        dropped += 1;
                    }
                }
                out.iter_mut().zip(resolvent).for_each(|(o, r)| *o *= r);
            }
            Stepper::Fem { stepper, injection } => {
                for i in 0..x.len() {
                    w.phys[i] = x[i] + k * drift[i];
                }
                match injection {
                    Injection::L2Projection => {
                        w.rhs.iter_mut().for_each(|r| *r = 0.0);
                        for j in jumps {
                            add_mode_load(stepper.mesh(), j.mode, j.coeff, &mut w.rhs);
                        }
                        stepper.solve(&w.phys, Some(&w.rhs), out);
                    }
                    Injection::NodalInterpolation => {
                        let mesh = *stepper.mesh();
                        for j in jumps {
                            for (i, p) in w.phys.iter_mut().enumerate() {
                                *p += j.coeff
                                    * crate::spectral::eigenfunction(j.mode, mesh.node(i + 1));
                            }
                        }
                        stepper.solve(&w.phys, None, out);
                    }
                }
            }
        }
        dropped
    }

    /// Runs the scheme, calling `observer(m, X^m)` for `m = 0..=M`.
    pub fn run_observed(
        &self,
        path: &JumpPath,
        mut observer: impl FnMut(usize, &[f64]),
    ) -> Result<usize> {
        self.check_path(path)?;
        let mut w = self.work();
        let mut x = self.initial_state();
        let mut next = vec![0.0; x.len()];
        let mut f = vec![0.0; x.len()];
        let mut dropped = 0;
        observer(0, &x);
        for m in 1..=self.disc.steps {
            let jumps = path.jumps_in(self.disc.time(m - 1), self.disc.time(m))?;
            self.drift(&x, &mut f, &mut w);
            dropped += self.advance(&x, &f, jumps, &mut next, &mut w);
            std::mem::swap(&mut x, &mut next);
            observer(m, &x);
        }
        Ok(dropped)
    }

    pub fn run(&self, path: &JumpPath) -> Result<TrajectoryRecord> {
        let mut values = Vec::with_capacity(self.disc.steps + 1);
        let dropped = self.run_observed(path, |_, x| values.push(x.to_vec()))?;
        Ok(TrajectoryRecord {
            space: self.space(),
            horizon: self.problem.horizon,
            times: (0..=self.disc.steps).map(|m| self.disc.time(m)).collect(),
            values,
            truncated_jumps: dropped,
        })
    }

    fn check_path(&self, path: &JumpPath) -> Result<()> {
        if path.horizon < self.problem.horizon {
            return Err(invalid(format!(
                "path horizon {} shorter than problem horizon {}",
                path.horizon, self.problem.horizon
            )));
        }
        Ok(())
    }
}

/// Resolution of the spectral reference solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ReferenceSettings {
    pub modes: usize,
    pub substeps: usize,
}

impl ReferenceSettings {
    pub fn doubled(&self) -> Self {
        ReferenceSettings {
            modes: 2 * self.modes,
            substeps: 2 * self.substeps,
        }
    }
}

pub struct ReferenceSolver {
    problem: Problem,
    settings: ReferenceSettings,
    lambda: Vec<f64>,
    uniform_decay: Vec<f64>,
    uniform_phi: Vec<f64>,
    transform: SineTransform,
}

impl ReferenceSolver {
    pub fn new(problem: Problem, settings: ReferenceSettings) -> Result<Self> {
        if settings.modes == 0 || settings.substeps == 0 {
            return Err(invalid("reference needs positive modes and substeps"));
        }
        let lambda: Vec<f64> = (1..=settings.modes).map(dirichlet_eigenvalue).collect();
        let dt = problem.horizon / settings.substeps as f64;
        let (uniform_decay, uniform_phi) = lambda.iter().map(|&l| decay_and_phi(l, dt)).unzip();
        Ok(ReferenceSolver {
            problem,
            settings,
            lambda,
            uniform_decay,
            uniform_phi,
            transform: SineTransform::new(settings.modes),
        })
    }

    pub fn settings(&self) -> ReferenceSettings {
        self.settings
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    /// Uniform substep nodes merged with jump times and `extra` times in `[0, T]`.
    pub fn grid(&self, path: &JumpPath, extra: &[f64]) -> Vec<f64> {
        let t_end = self.problem.horizon;
        let n = self.settings.substeps;
        let mut g: Vec<f64> = (0..=n).map(|i| t_end * i as f64 / n as f64).collect();
        g.extend(path.jumps.iter().map(|j| j.time).filter(|&t| t <= t_end));
        g.extend(
            extra
                .iter()
                .copied()
                .filter(|&t| (0.0..=t_end).contains(&t)),
        );
        g.sort_by(f64::total_cmp);
        g.dedup();
        g
    }

    /// `F(x)` on the reference modes.
    pub fn drift(&self, x: &[f64], out: &mut [f64], w: &mut Work) {
        let f = self.problem.drift;
        if f.is_zero() {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        self.transform.synthesize(x, &mut w.phys, &mut w.sine);
        w.phys.iter_mut().for_each(|u| *u = f.value(*u));
        self.transform.analyze(&w.phys, out, &mut w.sine);
    }

    pub fn work(&self) -> Work {
        let d = self.settings.modes;
        Work {
            sine: SineWork::default(),
            phys: vec![0.0; d],
            rhs: vec![0.0; d],
        }
    }

    /// Runs on `grid(path, extra)`, calling `observer(i, t_i, X(t_i))`.
    pub fn run_observed(
        &self,
        path: &JumpPath,
        extra: &[f64],
        mut observer: impl FnMut(usize, f64, &[f64]),
    ) -> Result<(Vec<f64>, usize)> {
        if path.horizon < self.problem.horizon {
            return Err(invalid("path horizon shorter than problem horizon"));
        }
        let grid = self.grid(path, extra);
        let n = self.settings.modes;
        let uniform_dt = self.problem.horizon / self.settings.substeps as f64;
        let mut w = self.work();
        let mut x = self.problem.initial.coefficients(n);
        let mut f = vec![0.0; n];
        let mut dropped = 0;
        let mut next_jump = path.jumps.partition_point(|j| j.time <= 0.0);
        observer(0, grid[0], &x);
        for i in 1..grid.len() {
            let dt = grid[i] - grid[i - 1];
            self.drift(&x, &mut f, &mut w);
            if (dt - uniform_dt).abs() <= 1e-15 * uniform_dt {
                for j in 0..n {
                    x[j] = self.uniform_decay[j] * x[j] + self.uniform_phi[j] * f[j];
                }
            } else {
                for j in 0..n {
                    let (e, phi) = decay_and_phi(self.lambda[j], dt);
                    x[j] = e * x[j] + phi * f[j];
                }
            }
            while next_jump < path.jumps.len() && path.jumps[next_jump].time <= grid[i] {
                let jump = path.jumps[next_jump];
                if jump.mode <= n {
                    x[jump.mode - 1] += jump.coeff;
                } else {
                    dropped += 1;
                }
                next_jump += 1;
            }
            observer(i, grid[i], &x);
        }
        if dropped > 0 {
            debug!("reference with {n} modes dropped {dropped} jumps above its capacity");
        }
        Ok((grid, dropped))
    }

    pub fn run(&self, path: &JumpPath, extra: &[f64]) -> Result<TrajectoryRecord> {
        let mut values = Vec::new();
        let (times, dropped) = self.run_observed(path, extra, |_, _, x| values.push(x.to_vec()))?;
        Ok(TrajectoryRecord {
            space: Space::Spectral {
                modes: self.settings.modes,
            },
            horizon: self.problem.horizon,
            times,
            values,
            truncated_jumps: dropped,
        })
    }
}

/// `(e^{-λδ}, (1 - e^{-λδ})/λ)`.
fn decay_and_phi(lambda: f64, dt: f64) -> (f64, f64) {
    let em1 = (-lambda * dt).exp_m1();
    (1.0 + em1, -em1 / lambda)
}

/// L² distance between a recorded state and a spectral field.
///
/// Spectral states compare coefficientwise (zero padded). FEM states compare
/// against the nodal interpolant of the spectral field, in the L² norm of the
/// piecewise linear difference.
pub fn distance_to_spectral(space: Space, state: &[f64], reference: &[f64]) -> f64 {
    match space {
        Space::Spectral { .. } => {
            let n = state.len().max(reference.len());
            (0..n)
                .map(|i| {
                    let d = state.get(i).copied().unwrap_or(0.0)
                        - reference.get(i).copied().unwrap_or(0.0);
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        }
        Space::Fem { cells } => {
            let mesh = FemMesh::new(cells).expect("recorded mesh");
            let interp = interpolate_spectral(&mesh, reference);
            let diff: Vec<f64> = state
                .iter()
                .zip(&interp.nodal)
                .map(|(a, b)| a - b)
                .collect();
            crate::fem::Tridiagonal::mass(&mesh)
                .quadratic_form(&diff)
                .max(0.0)
                .sqrt()
        }
    }
}

/// L² norm of a recorded state.
pub fn state_norm(space: Space, state: &[f64]) -> f64 {
    match space {
        Space::Spectral { .. } => state.iter().map(|c| c * c).sum::<f64>().sqrt(),
        Space::Fem { cells } => {
            let mesh = FemMesh::new(cells).expect("recorded mesh");
            crate::fem::Tridiagonal::mass(&mesh)
                .quadratic_form(state)
                .max(0.0)
                .sqrt()
        }
    }
}
