//! Verification suites shared by the command line runner and the test suite.
//!
//! Each suite returns one [`IdentityReport`] per checked relation, in a fixed
//! order, so a report file is a deterministic function of the settings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fem::{discrete_smoothing_constant, error_operator_norm, FemMesh};
use crate::malliavin::{
    chain_rule_check, derivative_equation_residual, derivative_of_solution, duality_check,
    dyadic_pairs, m1pq_seminorm, regularity_profile, BlockScalar, DerivativeSource, IdentityReport,
    IntegrandBlock, Mark, MarkPredicate, MarkWeight, OuterNorm, PathFunction, PointInsertion,
    Sampling, SchemeTerminal, Sign, SimpleIntegrand,
};
use crate::noise::{sample_path, AmplitudeLaw, LevyModel};
use crate::par::Exec;
use crate::solver::{
    Backend, Discretization, Drift, Problem, ReferenceSettings, ReferenceSolver, Scheme,
};
use crate::spectral::{
    continuity_constant_check, continuity_envelope, dirichlet_eigenvalue, smoothing_constant_check,
    smoothing_envelope, SpectralBasis, SpectralField,
};

/// Sizes of the Malliavin identity checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MalliavinSuite {
    /// Randomized instances for the recursion, adaptedness and chain rule.
    pub instances: usize,
    /// Paths per duality pair.
    pub duality_samples: usize,
    /// Midpoint nodes of the `dt` integral in the duality check.
    pub duality_nodes: usize,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for MalliavinSuite {
    fn default() -> Self {
        MalliavinSuite {
            instances: 20,
            duality_samples: 100_000,
            duality_nodes: 64,
            seed: 7,
            exec: Exec::Parallel,
        }
    }
}

fn scheme(problem: Problem, backend: Backend, steps: usize) -> Result<Scheme> {
    Scheme::new(
        problem,
        Discretization::new(backend, problem.horizon / steps as f64, problem.horizon)?,
    )
}

fn linear_problem() -> Problem {
    Problem {
        drift: Drift::Zero,
        ..Problem::acceptance_default()
    }
}

/// The small model of the duality checks: 8 modes, rate 5.
pub fn small_model() -> LevyModel {
    LevyModel::new(5.0, 1.1, 8, 0.5, AmplitudeLaw::rademacher()).expect("valid model")
}

impl MalliavinSuite {
    pub fn run(&self) -> Result<Vec<IdentityReport>> {
        let mut out = self.recursion_and_adaptedness()?;
        out.extend(self.chain_rule()?);
        out.extend(self.duality()?);
        out.extend(self.derivative_equation()?);
        Ok(out)
    }

    /// Add-point rerun against the derivative recursion, and `D X^m = 0` for
    /// `t_m < s`, on random spectral and FEM instances with nonlinear drift.
    pub fn recursion_and_adaptedness(&self) -> Result<Vec<IdentityReport>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let problem = Problem::acceptance_default();
        let mut rec = Vec::new();
        let mut adapted = Vec::new();
        for i in 0..self.instances {
            let n = rng.random_range(16..=32);
            let steps = rng.random_range(32..=64);
            let backend = if i % 2 == 0 {
                Backend::Spectral { modes: n }
            } else {
                Backend::Fem { cells: n }
            };
            let s = scheme(problem, backend, steps)?;
            let model = LevyModel::new(20.0, 1.1, n, problem.beta, AmplitudeLaw::rademacher())?;
            let path = sample_path(&model, problem.horizon, self.seed, i as u64);
            let ins = PointInsertion::new(
                rng.random_range(0.01..1.0),
                rng.random_range(1..=n),
                rng.random_range(-3.0..3.0),
            )?;
            let d = derivative_of_solution(&s, &path, &ins)?;
            rec.push(IdentityReport::new(
                format!("recursion[{i}] {backend} M={steps}"),
                d.relative_discrepancy(),
                0.0,
                1e-10,
            ));
            let before = d
                .times
                .iter()
                .enumerate()
                .filter(|(_, t)| **t < ins.time)
                .flat_map(|(m, _)| d.rerun[m].iter().chain(&d.recursion[m]))
                .fold(0.0f64, |a, v| a.max(v.abs()));
            adapted.push(IdentityReport::new(
                format!("adaptedness[{i}] {backend} s={:.4}", ins.time),
                before,
                0.0,
                0.0,
            ));
        }
        rec.extend(adapted);
        Ok(rec)
    }

    /// `D h(F) = h(F + DF) − h(F)` for random smooth `h` and scalar `F`.
    pub fn chain_rule(&self) -> Result<Vec<IdentityReport>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0xc4a1);
        let model = LevyModel::new(20.0, 1.1, 32, 0.5, AmplitudeLaw::rademacher())?;
        let mut out = Vec::new();
        for i in 0..self.instances {
            let n = rng.random_range(16..=32);
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s = scheme(
                Problem::acceptance_default(),
                Backend::Spectral { modes: n },
                rng.random_range(32..=64),
            )?;
            let f = SchemeTerminal::new(s, move |x: &[f64]| {
                vec![x.iter().zip(&w).map(|(a, b)| a * b).sum()]
            });
            let (a, b, c) = (
                rng.random_range(-2.0..2.0),
                rng.random_range(0.5..3.0),
                rng.random_range(-1.0..1.0),
            );
            let h = move |v: f64| a * (b * v).sin() + c * v * v;
            let path = sample_path(&model, 1.0, self.seed ^ 0xc4a1, i as u64);
            let ins = PointInsertion::new(
                rng.random_range(0.01..1.0),
                rng.random_range(1..=n),
                rng.random_range(-2.0..2.0),
            )?;
            out.push(IdentityReport::new(
                format!("chain-rule[{i}]"),
                chain_rule_check(&f, h, &path, &ins)?,
                0.0,
                1e-12,
            ));
        }
        Ok(out)
    }

    fn sampling(&self) -> Sampling {
        Sampling {
            samples: self.duality_samples,
            seed: self.seed,
            nodes: self.duality_nodes,
            exec: self.exec,
        }
    }

    fn pair<F: PathFunction>(
        &self,
        name: &str,
        f: &F,
        phi: &SimpleIntegrand,
    ) -> Result<(IdentityReport, f64, f64)> {
        let rep = duality_check(f, phi, &small_model(), 1.0, self.sampling())?;
        Ok((
            IdentityReport::new(
                format!("duality:{name}"),
                rep.lhs,
                rep.rhs,
                3.0 * rep.pooled_se(),
            ),
            rep.lhs,
            rep.se_lhs,
        ))
    }

    /// Five registered `(F, Φ)` pairs on the small model; the first has a
    /// closed form for both sides.
    pub fn duality(&self) -> Result<Vec<IdentityReport>> {
        let steps = 16;
        let nonlinear = Problem::acceptance_default();
        let base = |p: Problem| scheme(p, Backend::Spectral { modes: 8 }, steps);
        let block = |start: f64,
                     end: f64,
                     marks: MarkPredicate,
                     weight: MarkWeight,
                     scalar: BlockScalar,
                     value: Vec<f64>| {
            IntegrandBlock {
                start,
                end,
                marks,
                weight,
                scalar,
                value,
            }
        };
        let mut out = Vec::new();

        let f = SchemeTerminal::new(base(linear_problem())?, |x: &[f64]| vec![x[0]]);
        let phi = SimpleIntegrand::new(
            vec![block(
                0.25,
                1.0,
                MarkPredicate::modes(vec![1]),
                MarkWeight::Coeff,
                BlockScalar::Constant(2.0),
                vec![1.0],
            )],
            1.0,
        )?;
        let (rep, lhs, se_lhs) = self.pair("linear", &f, &phi)?;
        let k = 1.0 / steps as f64;
        let r = 1.0 / (1.0 + k * dirichlet_eigenvalue(1));
        let first = (0.25 / k).round() as usize + 1;
        let kernel: f64 = (first..=steps)
            .map(|j| k * r.powi((steps - j + 1) as i32))
            .sum();
        let exact: f64 = small_model()
            .atoms()
            .iter()
            .filter(|a| a.mode == 1)
            .map(|a| a.mass * 2.0 * a.coeff * a.coeff * kernel)
            .sum();
        out.push(IdentityReport::new(
            "duality:linear rhs-closed-form",
            rep.rhs,
            exact,
            1e-8,
        ));
        out.push(IdentityReport::new(
            "duality:linear lhs-closed-form",
            lhs,
            exact,
            3.0 * se_lhs,
        ));
        out.push(rep);

        let f = SchemeTerminal::new(base(nonlinear)?, |x: &[f64]| x.to_vec());
        let v: Vec<f64> = (0..8).map(|i| 0.5f64.powi(i)).collect();
        let phi = SimpleIntegrand::new(
            vec![block(
                0.0,
                1.0,
                MarkPredicate::all(),
                MarkWeight::Coeff,
                BlockScalar::Constant(1.0),
                v,
            )],
            1.0,
        )?;
        out.push(self.pair("vector", &f, &phi)?.0);

        let f = SchemeTerminal::new(base(nonlinear)?, |x: &[f64]| vec![(3.0 * x[0]).sin()]);
        let positive = MarkPredicate {
            modes: Some(vec![1]),
            sign: Some(Sign::Positive),
        };
        let phi = SimpleIntegrand::new(
            vec![block(
                0.25,
                0.75,
                positive,
                MarkWeight::One,
                BlockScalar::Constant(1.0),
                vec![1.0],
            )],
            1.0,
        )?;
        out.push(self.pair("sine", &f, &phi)?.0);

        let f = SchemeTerminal::new(base(nonlinear)?, |x: &[f64]| {
            vec![x.iter().map(|v| v * v).sum()]
        });
        let negative = MarkPredicate {
            modes: None,
            sign: Some(Sign::Negative),
        };
        let phi = SimpleIntegrand::new(
            vec![
                block(
                    0.75,
                    1.0,
                    MarkPredicate::modes(vec![1]),
                    MarkWeight::Coeff,
                    BlockScalar::LevyCoordinate { at: 0.75, mode: 1 },
                    vec![1.0],
                ),
                block(
                    0.75,
                    1.0,
                    negative,
                    MarkWeight::One,
                    BlockScalar::Constant(1.0),
                    vec![0.7],
                ),
            ],
            1.0,
        )?;
        out.push(self.pair("energy", &f, &phi)?.0);

        let f = SchemeTerminal::new(base(nonlinear)?, |x: &[f64]| vec![x[0] * x[1], x[1] * x[1]]);
        let phi = SimpleIntegrand::new(
            vec![block(
                0.5,
                1.0,
                MarkPredicate::modes(vec![1, 2]),
                MarkWeight::One,
                BlockScalar::Constant(1.5),
                vec![1.0, 1.0],
            )],
            1.0,
        )?;
        out.push(self.pair("product", &f, &phi)?.0);
        Ok(out)
    }

    /// Residual of the derivative's mild equation on the reference: it must
    /// halve when the substeps double (first-order quadrature).
    pub fn derivative_equation(&self) -> Result<Vec<IdentityReport>> {
        let problem = Problem::acceptance_default();
        let model = LevyModel::new(10.0, 1.1, 64, 0.5, AmplitudeLaw::rademacher())?;
        let cases = [
            (0.3, 1, 2.0),
            (0.15, 2, -1.5),
            (0.5, 1, 1.0),
            (0.62, 3, 2.5),
            (0.4, 2, -2.0),
        ];
        let refs: Vec<ReferenceSolver> = [512, 1024]
            .iter()
            .map(|&m| {
                ReferenceSolver::new(
                    problem,
                    ReferenceSettings {
                        modes: 64,
                        substeps: m,
                    },
                )
            })
            .collect::<Result<_>>()?;
        let mut out = Vec::new();
        for (i, &(s, mode, coeff)) in cases.iter().enumerate() {
            let path = sample_path(&model, 1.0, self.seed, 100 + i as u64);
            let ins = PointInsertion::new(s, mode, coeff)?;
            let coarse = derivative_equation_residual(&refs[0], &path, &ins, 1.0)?;
            let fine = derivative_equation_residual(&refs[1], &path, &ins, 1.0)?;
            out.push(IdentityReport::within(
                format!("derivative-equation[{i}] ratio"),
                coarse / fine,
                1.7,
                2.3,
            ));
        }
        Ok(out)
    }
}

/// Analytic and discrete operator estimates.
pub fn operator_checks() -> Result<Vec<IdentityReport>> {
    let mut out = Vec::new();
    let basis = SpectralBasis::dirichlet(512);
    let grid: Vec<f64> = (0..=600)
        .map(|i| 10f64.powf(-7.0 + 7.0 * i as f64 / 600.0))
        .collect();
    for rho in [0.0, 0.5, 1.0, 1.5, 2.0] {
        let c = smoothing_constant_check(&basis, rho, &grid)?;
        out.push(IdentityReport::at_most(
            format!("smoothing rho={rho}"),
            c,
            smoothing_envelope(rho),
            1e-9,
        ));
    }
    for rho in [0.5, 1.0, 1.5, 2.0] {
        let c = continuity_constant_check(&basis, rho, &grid)?;
        out.push(IdentityReport::at_most(
            format!("continuity rho={rho}"),
            c,
            continuity_envelope(rho)?,
            1e-9,
        ));
    }

    // sup_{x>0, m≥1} (mx)^{ρ/2} (1+x)^{-m}, attained at m = 1 for ρ ≤ 1.
    for (rho, bound) in [(0.0, 1.0), (1.0, 0.5)] {
        let mut worst: f64 = 0.0;
        for n in [4, 16, 64, 256] {
            for k in [0.1, 0.01, 0.001] {
                worst = worst.max(discrete_smoothing_constant(&FemMesh::new(n)?, k, 200, rho));
            }
        }
        out.push(IdentityReport::at_most(
            format!("discrete-smoothing rho={rho}"),
            worst,
            bound,
            1e-12,
        ));
    }

    let basis = SpectralBasis::dirichlet(4);
    let probes: Vec<_> = (1..=4)
        .map(|j| SpectralField::single_mode(basis.clone(), j, 1.0))
        .collect();
    let e0 = error_operator_norm(&FemMesh::new(8)?, 0.05, 3, 0.0, 0.0, &probes)?;
    out.push(IdentityReport::at_most(
        "error-operator rho=0 sigma=0",
        e0,
        2.0,
        1e-9,
    ));
    let coarse = error_operator_norm(&FemMesh::new(8)?, 1.0 / 4096.0, 2048, 0.0, 2.0, &probes)?;
    let fine = error_operator_norm(&FemMesh::new(16)?, 1.0 / 8192.0, 4096, 0.0, 2.0, &probes)?;
    out.push(IdentityReport::within(
        "error-operator halving ratio",
        coarse / fine,
        3.0,
        5.3,
    ));

    let e1 = [SpectralField::single_mode(
        SpectralBasis::dirichlet(1),
        1,
        1.0,
    )];
    let mut prev = f64::INFINITY;
    let mut wobble: f64 = 0.0;
    for level in 0..4 {
        let n = 4 << level;
        let k = 1.0 / (16 << (2 * level)) as f64;
        let e = error_operator_norm(
            &FemMesh::new(n)?,
            k,
            (1.0 / k).round() as usize,
            0.0,
            2.0,
            &e1,
        )?;
        if prev.is_finite() {
            wobble = wobble.max(e / prev);
        }
        prev = e;
    }
    out.push(IdentityReport::at_most(
        "error-operator e1 refinement max ratio",
        wobble,
        1.1,
        0.0,
    ));
    Ok(out)
}

/// Sizes of the regularity checks.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularitySuite {
    pub profile_samples: usize,
    pub profile_modes: usize,
    pub profile_steps: usize,
    /// Grid densities `n` of the `(s, t)` pairs on `{iT/n}`; compared pairwise.
    pub profile_grids: Vec<usize>,
    /// Nested sample counts of the seminorm growth check.
    pub seminorm_counts: Vec<usize>,
    pub seminorm_modes: usize,
    pub seminorm_steps: usize,
    pub seminorm_q: f64,
    /// Times at which `X(t)` is measured; the scheme keeps the step
    /// `T/seminorm_steps`.
    pub seminorm_times: Vec<f64>,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for RegularitySuite {
    fn default() -> Self {
        RegularitySuite {
            profile_samples: 1000,
            profile_modes: 64,
            profile_steps: 64,
            profile_grids: vec![32, 64],
            seminorm_counts: vec![100, 200, 400, 800],
            seminorm_modes: 16,
            seminorm_steps: 32,
            seminorm_q: 2.0,
            seminorm_times: vec![0.25, 0.5, 1.0],
            seed: 11,
            exec: Exec::Parallel,
        }
    }
}

/// Largest allowed relative change of the profile sup under grid doubling.
pub const PROFILE_DRIFT: f64 = 0.05;
/// Largest allowed log-log slope of the seminorm against the sample count.
pub const SEMINORM_GROWTH: f64 = 0.05;

impl RegularitySuite {
    pub fn run(&self, problem: &Problem, model: &LevyModel) -> Result<Vec<IdentityReport>> {
        let mut out = self.profile(problem, model)?;
        out.extend(self.seminorm(problem, model)?);
        Ok(out)
    }

    /// Normalized sup of `‖D_{s,x}X(t)‖ (t−s)^{(1−β)/2}/‖x‖_U` over dyadic
    /// marks, for each grid density.
    pub fn profile_sups(&self, problem: &Problem, model: &LevyModel) -> Result<Vec<f64>> {
        let s = scheme(
            *problem,
            Backend::Spectral {
                modes: self.profile_modes,
            },
            self.profile_steps,
        )?;
        let marks: Vec<Mark> = std::iter::successors(Some(1usize), |j| Some(2 * j))
            .take_while(|&j| j <= self.profile_modes.min(model.k_noise()))
            .map(|j| Mark {
                mode: j,
                coeff: model.sigma(j),
            })
            .collect();
        let sampling = Sampling {
            samples: self.profile_samples,
            seed: self.seed,
            nodes: 1,
            exec: self.exec,
        };
        self.profile_grids
            .iter()
            .map(|&n| {
                regularity_profile(
                    DerivativeSource::Scheme(&s),
                    model,
                    &marks,
                    &dyadic_pairs(problem.horizon, n),
                    sampling,
                )
                .map(|p| p.sup)
            })
            .collect()
    }

    pub fn profile(&self, problem: &Problem, model: &LevyModel) -> Result<Vec<IdentityReport>> {
        let sups = self.profile_sups(problem, model)?;
        Ok(sups
            .windows(2)
            .zip(self.profile_grids.windows(2))
            .map(|(s, g)| {
                IdentityReport::at_most(
                    format!(
                        "regularity-profile drift grid {}->{} (sup {:.6} -> {:.6})",
                        g[0], g[1], s[0], s[1]
                    ),
                    (s[1] / s[0] - 1.0).abs(),
                    PROFILE_DRIFT,
                    0.0,
                )
            })
            .collect())
    }

    /// `(t, [(n, sample max)])`: the `p = ∞` seminorm of `X(t)` on nested
    /// prefixes of one sample stream.
    pub fn seminorm_values(
        &self,
        problem: &Problem,
        model: &LevyModel,
    ) -> Result<Vec<(f64, Vec<(usize, f64)>)>> {
        let n_max = self.seminorm_counts.iter().copied().max().unwrap_or(0);
        let horizon = problem.horizon;
        if let Some(t) = self
            .seminorm_times
            .iter()
            .find(|t| !(**t > 0.0 && **t <= horizon))
        {
            return Err(crate::Error::OutOfRange {
                t: *t,
                lo: 0.0,
                hi: horizon,
            });
        }
        let mut out = Vec::new();
        for &t in &self.seminorm_times {
            let problem = Problem {
                horizon: t,
                ..*problem
            };
            let steps = ((self.seminorm_steps as f64) * t / horizon)
                .round()
                .max(1.0) as usize;
            let s = scheme(
                problem,
                Backend::Spectral {
                    modes: self.seminorm_modes,
                },
                steps,
            )?;
            let f = SchemeTerminal::new(s, |x: &[f64]| x.to_vec());
            let sampling = Sampling {
                samples: n_max,
                seed: self.seed,
                nodes: 2 * steps,
                exec: self.exec,
            };
            let est = m1pq_seminorm(&f, model, t, OuterNorm::Infinity, self.seminorm_q, sampling)?;
            let prefix = self
                .seminorm_counts
                .iter()
                .map(|&n| (n, est.per_sample[..n].iter().copied().fold(0.0, f64::max)))
                .collect();
            out.push((t, prefix));
        }
        Ok(out)
    }

    pub fn seminorm(&self, problem: &Problem, model: &LevyModel) -> Result<Vec<IdentityReport>> {
        Ok(self
            .seminorm_values(problem, model)?
            .into_iter()
            .map(|(t, vals)| {
                let slope = log_slope(&vals);
                let shown: Vec<String> = vals.iter().map(|(n, v)| format!("{n}:{v:.6}")).collect();
                IdentityReport::at_most(
                    format!(
                        "seminorm-growth t={t} q={} [{}]",
                        self.seminorm_q,
                        shown.join(" ")
                    ),
                    slope,
                    SEMINORM_GROWTH,
                    0.0,
                )
            })
            .collect())
    }
}

/// Least-squares slope of `log v` against `log n`.
fn log_slope(vals: &[(usize, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = vals
        .iter()
        .map(|&(n, v)| ((n as f64).ln(), v.ln()))
        .collect();
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

/// `true` if every report passed.
pub fn all_pass(reports: &[IdentityReport]) -> bool {
    reports.iter().all(|r| r.pass)
}

/// One report per line.
pub fn render(reports: &[IdentityReport]) -> String {
    reports.iter().map(|r| format!("{r}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn operator_checks_pass() {
        let r = operator_checks().unwrap();
        assert!(all_pass(&r), "{}", render(&r));
    }

    #[test]
    fn small_malliavin_suite_passes() {
        let suite = MalliavinSuite {
            instances: 4,
            duality_samples: 2000,
            duality_nodes: 16,
            seed: 3,
            exec: Exec::Sequential,
        };
        let mut r = suite.recursion_and_adaptedness().unwrap();
        r.extend(suite.chain_rule().unwrap());
        assert_eq!(r.len(), 12);
        assert!(all_pass(&r), "{}", render(&r));
        let d = suite.duality().unwrap();
        assert_eq!(d.len(), 7);
        assert!(d[0].pass, "{}", d[0]);
    }

    #[test]
    fn report_relations() {
        assert!(IdentityReport::at_most("a", 1.0, 2.0, 0.0).pass);
        assert!(!IdentityReport::at_most("a", 2.5, 2.0, 0.1).pass);
        assert!(IdentityReport::within("w", 2.0, 1.7, 2.3).pass);
        assert!(!IdentityReport::within("w", 2.4, 1.7, 2.3).pass);
        assert!(IdentityReport::new("e", 1.0, 1.0, 0.0)
            .to_string()
            .ends_with("rel=eq PASS"));
    }

    #[test]
    fn log_slope_of_power() {
        let v: Vec<(usize, f64)> = [100, 200, 400]
            .iter()
            .map(|&n| (n, (n as f64).powf(0.3)))
            .collect();
        assert!((log_slope(&v) - 0.3).abs() < 1e-12);
    }
}
