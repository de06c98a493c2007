//! Coupled Monte Carlo error sweeps.
//!
//! One jump path per sample drives the reference and every rung of every
//! ladder (common random numbers). Strong errors are root mean squares of
//! `‖X(t) − X̃(t)‖`, weak errors are `|mean(f(X̃) − f(X))|`, covariance errors
//! combine the three functionals of the covariance triple. Rates are fitted by
//! weighted least squares in log-log coordinates.

use std::fmt;
use std::fmt::Write as _;

use log::{info, warn};

use crate::error::{invalid, Error, Result};
use crate::functional::{covariance_triple, PathFunctional, TestFunction};
use crate::malliavin::mean_se;
use crate::noise::{sample_jump_path, JumpPath, LevyModel};
use crate::par::{map_indexed, Exec};
use crate::rng::{stream_in, DOMAIN_GATE, DOMAIN_SAMPLES};
use crate::solver::{
    distance_to_spectral, Backend, Discretization, Problem, ReferenceSettings, ReferenceSolver,
    Scheme, Space,
};

/// Rungs whose standard error exceeds this fraction of the estimate are void.
pub const VOID_FRACTION: f64 = 0.3;
/// Estimates below this are treated as exact zeros.
pub const NUMERICAL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepMode {
    /// `k` pinned fine, `h` varies.
    Space,
    /// `h` pinned fine, `k` varies.
    Time,
    /// `k = h²`.
    Diagonal,
}

impl fmt::Display for SweepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepMode::Space => "space",
            SweepMode::Time => "time",
            SweepMode::Diagonal => "diagonal",
        })
    }
}

/// One resolution: a scheme discretization, or a reference solver (for
/// self-comparison).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rung {
    Scheme(Discretization),
    Reference(ReferenceSettings),
}

impl Rung {
    pub fn h(&self) -> f64 {
        match self {
            Rung::Scheme(d) => d.h(),
            Rung::Reference(r) => 1.0 / r.modes as f64,
        }
    }

    pub fn k(&self, horizon: f64) -> f64 {
        match self {
            Rung::Scheme(d) => d.k,
            Rung::Reference(r) => horizon / r.substeps as f64,
        }
    }

    /// Steps times state dimension, a rough per-sample cost.
    pub fn work_units(&self) -> usize {
        match self {
            Rung::Scheme(d) => d.steps * d.backend.dim(),
            Rung::Reference(r) => r.substeps * r.modes,
        }
    }
}

impl fmt::Display for Rung {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rung::Scheme(d) => write!(f, "{} k={} M={}", d.backend, d.k, d.steps),
            Rung::Reference(r) => write!(f, "reference(N={}, M={})", r.modes, r.substeps),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolutionLadder {
    pub mode: SweepMode,
    pub rungs: Vec<Rung>,
}

impl ResolutionLadder {
    /// `backend(n)` for each `n`, all at step `k`.
    pub fn space(
        backend: fn(usize) -> Backend,
        sizes: &[usize],
        k: f64,
        horizon: f64,
    ) -> Result<Self> {
        let rungs = sizes
            .iter()
            .map(|&n| Discretization::new(backend(n), k, horizon).map(Rung::Scheme))
            .collect::<Result<_>>()?;
        Ok(ResolutionLadder {
            mode: SweepMode::Space,
            rungs,
        })
    }

    /// One backend, step sizes `ks`.
    pub fn time(backend: Backend, ks: &[f64], horizon: f64) -> Result<Self> {
        let rungs = ks
            .iter()
            .map(|&k| Discretization::new(backend, k, horizon).map(Rung::Scheme))
            .collect::<Result<_>>()?;
        Ok(ResolutionLadder {
            mode: SweepMode::Time,
            rungs,
        })
    }

    /// `backend(n)` with `k = h²`.
    pub fn diagonal(backend: fn(usize) -> Backend, sizes: &[usize], horizon: f64) -> Result<Self> {
        let rungs = sizes
            .iter()
            .map(|&n| {
                let b = backend(n);
                Discretization::new(b, b.h() * b.h(), horizon).map(Rung::Scheme)
            })
            .collect::<Result<_>>()?;
        Ok(ResolutionLadder {
            mode: SweepMode::Diagonal,
            rungs,
        })
    }

    /// The regression variable of a rung.
    pub fn scale(&self, rung: &Rung, horizon: f64) -> f64 {
        match self.mode {
            SweepMode::Space | SweepMode::Diagonal => rung.h(),
            SweepMode::Time => rung.k(horizon),
        }
    }

    /// Checks that the reference resolves more modes than every rung. Its
    /// time accuracy is not comparable step for step (the exponential rule is
    /// exact for the linear part); the self-convergence gate covers it.
    pub fn check_reference(&self, reference: &ReferenceSettings) -> Result<()> {
        for r in &self.rungs {
            if let Rung::Scheme(d) = r {
                let coarser_space = match d.backend {
                    Backend::Spectral { modes } => modes > reference.modes,
                    Backend::Fem { cells } => cells > reference.modes,
                };
                if coarser_space {
                    return Err(invalid(format!(
                        "reference {reference:?} is not finer than rung {r}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `(t₁, t₂, ψ₁, ψ₂)` of a covariance sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSpec {
    pub t1: f64,
    pub t2: f64,
    pub psi1: TestFunction,
    pub psi2: TestFunction,
}

/// Everything one coupled Monte Carlo pass computes.
#[derive(Debug, Clone)]
pub struct Campaign {
    pub problem: Problem,
    pub model: LevyModel,
    pub reference: ReferenceSettings,
    pub ladders: Vec<ResolutionLadder>,
    /// Strong errors are measured at this time.
    pub t_eval: f64,
    pub strong: bool,
    pub functionals: Vec<(String, PathFunctional)>,
    pub covariance: Option<CovarianceSpec>,
    pub samples: usize,
    pub seed: u64,
    pub exec: Exec,
}

#[derive(Debug, Clone, Default)]
struct SampleOut {
    strong_sq: Vec<f64>,
    reference_f: Vec<f64>,
    rung_f: Vec<Vec<f64>>,
    reference_cov: [f64; 3],
    rung_cov: Vec<[f64; 3]>,
    truncated: Vec<usize>,
    reference_dropped: usize,
}

/// One estimate at one rung.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRow {
    pub sweep: SweepMode,
    pub h: f64,
    pub k: f64,
    pub estimator: String,
    pub estimate: f64,
    pub se: f64,
    pub samples: usize,
    pub void: bool,
}

/// Weighted log-log regression `log err = slope · log scale + intercept`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Indices of points left out by the void rule.
    pub excluded: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitRow {
    pub sweep: SweepMode,
    pub estimator: String,
    /// `Err` carries the reason the fit is unavailable.
    pub fit: std::result::Result<RateFit, String>,
}

/// Differences between the reference and its doubled refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct GateReport {
    pub samples: usize,
    /// RMS of `‖X_ref(t) − X_2ref(t)‖`.
    pub strong_rms: f64,
    /// RMS of `f(X_ref) − f(X_2ref)` per weak functional.
    pub weak_rms: Vec<(String, f64)>,
    /// Filled in by [`ErrorTable::apply_gate`].
    pub verdicts: Vec<GateVerdict>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateVerdict {
    pub estimator: String,
    pub difference: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl GateReport {
    pub fn pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }
}

impl fmt::Display for GateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "self-convergence over {} samples:", self.samples)?;
        for v in &self.verdicts {
            write!(
                f,
                " {} diff={:.3e} threshold={:.3e} {};",
                v.estimator,
                v.difference,
                v.threshold,
                if v.pass { "ok" } else { "FAILED" }
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Metadata {
    pub seed: u64,
    pub config_hash: Option<String>,
    /// Jumps the reference could not represent; nonzero corrupts the oracle.
    pub reference_truncated: usize,
    /// Jumps removed by `P_N` in the spectral scheme, summed over rungs and samples.
    pub scheme_truncated: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTable {
    pub rows: Vec<ErrorRow>,
    pub fits: Vec<FitRow>,
    pub meta: Metadata,
    pub gate: Option<GateReport>,
}

/// Fits `log err` against `log scale` with weights `(err/se)²`, the inverse
/// variances of `log err`; equal weights if any standard error is zero.
/// Points with `err ≤ 0` or `se > 0.3 err` are excluded.
pub fn fit_rate(points: &[(f64, f64, f64)]) -> Result<RateFit> {
    let mut excluded = Vec::new();
    let mut valid = Vec::new();
    for (i, &(x, e, se)) in points.iter().enumerate() {
        if !(e > 0.0) || !(x > 0.0) || se > VOID_FRACTION * e {
            excluded.push(i);
        } else {
            valid.push((x.ln(), e.ln(), se / e));
        }
    }
    if valid.len() < 3 {
        return Err(Error::InsufficientPoints(valid.len()));
    }
    let equal = valid.iter().any(|p| p.2 == 0.0);
    let w: Vec<f64> = valid
        .iter()
        .map(|p| if equal { 1.0 } else { 1.0 / (p.2 * p.2) })
        .collect();
    let sw: f64 = w.iter().sum();
    let mx = valid.iter().zip(&w).map(|(p, w)| w * p.0).sum::<f64>() / sw;
    let my = valid.iter().zip(&w).map(|(p, w)| w * p.1).sum::<f64>() / sw;
    let sxx: f64 = valid
        .iter()
        .zip(&w)
        .map(|(p, w)| w * (p.0 - mx).powi(2))
        .sum();
    let sxy: f64 = valid
        .iter()
        .zip(&w)
        .map(|(p, w)| w * (p.0 - mx) * (p.1 - my))
        .sum();
    let syy: f64 = valid
        .iter()
        .zip(&w)
        .map(|(p, w)| w * (p.1 - my).powi(2))
        .sum();
    if !(sxx > 0.0) {
        return Err(invalid("rate fit needs at least two distinct scales"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 {
        (sxy * sxy) / (sxx * syy)
    } else {
        1.0
    };
    Ok(RateFit {
        slope,
        intercept,
        r2,
        excluded,
    })
}

/// Outcome of dividing the weak slope by the strong slope.
#[derive(Debug, Clone, PartialEq)]
pub enum RatioOutcome {
    Ratio {
        weak: f64,
        strong: f64,
        ratio: f64,
    },
    /// All errors sit at the numerical floor; no rate exists.
    UndefinedByFloor,
    /// A fit was unavailable.
    Void(String),
}

impl fmt::Display for RatioOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RatioOutcome::Ratio {
                weak,
                strong,
                ratio,
            } => write!(f, "{ratio:.4} (weak {weak:.4} / strong {strong:.4})"),
            RatioOutcome::UndefinedByFloor => f.write_str("undefined-by-floor"),
            RatioOutcome::Void(why) => write!(f, "void ({why})"),
        }
    }
}

impl ErrorTable {
    pub fn rows_for(&self, sweep: SweepMode, estimator: &str) -> Vec<&ErrorRow> {
        self.rows
            .iter()
            .filter(|r| r.sweep == sweep && r.estimator == estimator)
            .collect()
    }

    pub fn fit(&self, sweep: SweepMode, estimator: &str) -> Option<&FitRow> {
        self.fits
            .iter()
            .find(|f| f.sweep == sweep && f.estimator == estimator)
    }

    /// `(weak slope)/(strong slope)` on one sweep.
    pub fn weak_strong_ratio(&self, sweep: SweepMode, weak: &str, strong: &str) -> RatioOutcome {
        let at_floor = |name: &str| {
            self.rows_for(sweep, name)
                .iter()
                .all(|r| r.estimate < NUMERICAL_FLOOR)
        };
        if at_floor(weak) && at_floor(strong) {
            return RatioOutcome::UndefinedByFloor;
        }
        let slope = |name: &str| -> std::result::Result<f64, String> {
            match self.fit(sweep, name) {
                Some(FitRow { fit: Ok(f), .. }) => Ok(f.slope),
                Some(FitRow { fit: Err(e), .. }) => Err(format!("{name}: {e}")),
                None => Err(format!("{name}: not estimated")),
            }
        };
        match (slope(weak), slope(strong)) {
            (Ok(w), Ok(s)) if s != 0.0 => RatioOutcome::Ratio {
                weak: w,
                strong: s,
                ratio: w / s,
            },
            (Ok(_), Ok(_)) => RatioOutcome::Void("strong slope is zero".into()),
            (Err(e), _) | (_, Err(e)) => RatioOutcome::Void(e),
        }
    }

    /// Compares the gate's reference differences with the finest errors of
    /// the campaign: every difference must stay below a tenth of the smallest
    /// nonvoid estimate of its estimator.
    pub fn apply_gate(&mut self, mut gate: GateReport) -> &GateReport {
        let finest = |name: &str| {
            self.rows
                .iter()
                .filter(|r| r.estimator == name && !r.void && r.estimate >= NUMERICAL_FLOOR)
                .map(|r| r.estimate)
                .fold(f64::INFINITY, f64::min)
        };
        let mut verdicts = Vec::new();
        let mut check = |name: &str, diff: f64| {
            let f = finest(name);
            if f.is_finite() {
                let threshold = 0.1 * f;
                verdicts.push(GateVerdict {
                    estimator: name.to_string(),
                    difference: diff,
                    threshold,
                    pass: diff < threshold,
                });
            }
        };
        check("strong", gate.strong_rms);
        for (name, d) in &gate.weak_rms {
            check(&format!("weak:{name}"), *d);
        }
        gate.verdicts = verdicts;
        self.gate = Some(gate);
        self.gate.as_ref().expect("just set")
    }

    /// `Err(GateFailed)` unless the gate ran and passed.
    pub fn require_gate(&self) -> Result<()> {
        match &self.gate {
            Some(g) if g.pass() => Ok(()),
            Some(g) => Err(Error::GateFailed(g.to_string())),
            None => Err(Error::GateFailed("gate not run".into())),
        }
    }

    /// `(x, y, y_err)` triplets per `(sweep, estimator)`.
    pub fn plot_data(&self) -> Vec<(SweepMode, String, Vec<(f64, f64, f64)>)> {
        let mut out: Vec<(SweepMode, String, Vec<(f64, f64, f64)>)> = Vec::new();
        for r in &self.rows {
            let x = if r.sweep == SweepMode::Time { r.k } else { r.h };
            match out
                .iter_mut()
                .find(|(s, e, _)| *s == r.sweep && *e == r.estimator)
            {
                Some(entry) => entry.2.push((x, r.estimate, r.se)),
                None => out.push((r.sweep, r.estimator.clone(), vec![(x, r.estimate, r.se)])),
            }
        }
        out
    }

    /// Columns `sweep,h,k,estimator,estimate,se,n_samples,void`; metadata and
    /// fits as `#` comment lines.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        if let Some(h) = &self.meta.config_hash {
            let _ = writeln!(s, "# config_hash={h}");
        }
        let _ = writeln!(s, "# seed={}", self.meta.seed);
        let _ = writeln!(
            s,
            "# reference_truncated={} scheme_truncated={}",
            self.meta.reference_truncated, self.meta.scheme_truncated
        );
        s.push_str("sweep,h,k,estimator,estimate,se,n_samples,void\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{},{:.10e},{:.10e},{},{}",
                r.sweep, r.h, r.k, r.estimator, r.estimate, r.se, r.samples, r.void
            );
        }
        for f in &self.fits {
            match &f.fit {
                Ok(fit) => {
                    let pinned = if f.sweep == SweepMode::Time { "h" } else { "k" };
                    let _ = writeln!(
                        s,
                        "# fit sweep={} estimator={} pinned={pinned} slope={:.6} intercept={:.6} r2={:.6} excluded={:?}",
                        f.sweep, f.estimator, fit.slope, fit.intercept, fit.r2, fit.excluded
                    );
                }
                Err(e) => {
                    let _ = writeln!(
                        s,
                        "# fit sweep={} estimator={} unavailable: {e}",
                        f.sweep, f.estimator
                    );
                }
            }
        }
        if let Some(g) = &self.gate {
            let _ = writeln!(s, "# gate {g}");
        }
        s
    }
}

fn rms_with_se(sq: &[f64]) -> (f64, f64) {
    let (m, se) = mean_se(sq);
    let v = m.max(0.0).sqrt();
    (v, if v > 0.0 { se / (2.0 * v) } else { 0.0 })
}

impl Campaign {
    /// Distinct rungs over all ladders, in first-seen order.
    pub fn rungs(&self) -> Vec<Rung> {
        let mut out: Vec<Rung> = Vec::new();
        for l in &self.ladders {
            for r in &l.rungs {
                if !out.contains(r) {
                    out.push(*r);
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let t_end = self.problem.horizon;
        if !(self.t_eval > 0.0 && self.t_eval <= t_end) {
            return Err(Error::OutOfRange {
                t: self.t_eval,
                lo: 0.0,
                hi: t_end,
            });
        }
        if self.samples < 2 {
            return Err(invalid("a campaign needs at least 2 samples"));
        }
        for l in &self.ladders {
            l.check_reference(&self.reference)?;
        }
        for (_, f) in &self.functionals {
            f.validate(t_end)?;
        }
        if let Some(c) = &self.covariance {
            covariance_triple(t_end, c.t1, c.t2, &c.psi1, &c.psi2)?;
        }
        if self.reference.modes < self.model.k_noise() {
            warn!(
                "reference has {} modes but the noise excites {}; dropped jumps will be counted",
                self.reference.modes,
                self.model.k_noise()
            );
        }
        Ok(())
    }

    fn extra_times(&self) -> Vec<f64> {
        let mut extra = vec![self.t_eval];
        for (_, f) in &self.functionals {
            extra.extend(
                f.components()
                    .iter()
                    .flat_map(|(mu, _)| mu.atoms().iter().map(|a| a.0)),
            );
        }
        if let Some(c) = &self.covariance {
            extra.extend([c.t1, c.t2]);
        }
        extra
    }

    /// Runs every sample and reduces in index order.
    pub fn run(&self) -> Result<ErrorTable> {
        self.validate()?;
        let t_end = self.problem.horizon;
        let rungs = self.rungs();
        let reference = Solver::Reference(ReferenceSolver::new(self.problem, self.reference)?);
        let solvers: Vec<Solver> = rungs
            .iter()
            .map(|r| match r {
                Rung::Scheme(d) => Scheme::new(self.problem, *d).map(Solver::Scheme),
                Rung::Reference(s) => ReferenceSolver::new(self.problem, *s).map(Solver::Reference),
            })
            .collect::<Result<_>>()?;
        let cov_fs = match &self.covariance {
            Some(c) => Some(covariance_triple(t_end, c.t1, c.t2, &c.psi1, &c.psi2)?),
            None => None,
        };
        let extra = self.extra_times();
        info!(
            "campaign: {} samples, {} rungs, reference {:?}",
            self.samples,
            rungs.len(),
            self.reference
        );

        let outs = map_indexed(self.exec, self.samples, |i| -> Result<SampleOut> {
            let mut rng = stream_in(self.seed, DOMAIN_SAMPLES, i as u64);
            let mut path = sample_jump_path(&self.model, t_end, &mut rng);
            path.seed = Some(self.seed);
            path.index = Some(i as u64);
            let fingerprint = path.fingerprint();

            let mut out = SampleOut::default();
            let (ref_state, ref_f, ref_cov, dropped) = evaluate(
                &reference,
                &path,
                self.t_eval,
                &extra,
                &self.functionals,
                cov_fs.as_ref(),
            )?;
            out.reference_f = ref_f;
            out.reference_cov = ref_cov;
            out.reference_dropped = dropped;
            for solver in &solvers {
                let (state, f, cov, truncated) = evaluate(
                    solver,
                    &path,
                    self.t_eval,
                    &extra,
                    &self.functionals,
                    cov_fs.as_ref(),
                )?;
                if self.strong {
                    out.strong_sq
                        .push(distance_to_spectral(solver.space(), &state, &ref_state).powi(2));
                }
                out.rung_f.push(f);
                out.rung_cov.push(cov);
                out.truncated.push(truncated);
            }
            assert_eq!(
                path.fingerprint(),
                fingerprint,
                "coupling broken: path changed during sample {i}"
            );
            Ok(out)
        });
        let outs: Vec<SampleOut> = outs.into_iter().collect::<Result<_>>()?;
        Ok(self.reduce(&rungs, &outs))
    }

    fn reduce(&self, rungs: &[Rung], outs: &[SampleOut]) -> ErrorTable {
        let t_end = self.problem.horizon;
        let n = outs.len();
        let mut per_rung: Vec<Vec<(String, f64, f64)>> = vec![Vec::new(); rungs.len()];
        for (ri, cell) in per_rung.iter_mut().enumerate() {
            if self.strong {
                let sq: Vec<f64> = outs.iter().map(|o| o.strong_sq[ri]).collect();
                let (e, se) = rms_with_se(&sq);
                cell.push(("strong".into(), e, se));
            }
            for (fi, (name, _)) in self.functionals.iter().enumerate() {
                let d: Vec<f64> = outs
                    .iter()
                    .map(|o| o.rung_f[ri][fi] - o.reference_f[fi])
                    .collect();
                let (m, se) = mean_se(&d);
                cell.push((format!("weak:{name}"), m.abs(), se));
            }
            if self.covariance.is_some() {
                let (e, se) =
                    covariance_error(outs.iter().map(|o| (o.reference_cov, o.rung_cov[ri])));
                cell.push(("covariance".into(), e.abs(), se));
            }
        }
        let mut rows = Vec::new();
        let mut fits = Vec::new();
        for ladder in &self.ladders {
            let idx: Vec<usize> = ladder
                .rungs
                .iter()
                .map(|r| rungs.iter().position(|x| x == r).expect("rung"))
                .collect();
            let names: Vec<String> = per_rung[idx[0]].iter().map(|c| c.0.clone()).collect();
            for (ei, name) in names.iter().enumerate() {
                let mut points = Vec::new();
                for &ri in &idx {
                    let (_, e, se) = per_rung[ri][ei].clone();
                    let rung = &rungs[ri];
                    let void = e > 0.0 && se > VOID_FRACTION * e;
                    rows.push(ErrorRow {
                        sweep: ladder.mode,
                        h: rung.h(),
                        k: rung.k(t_end),
                        estimator: name.clone(),
                        estimate: e,
                        se,
                        samples: n,
                        void,
                    });
                    points.push((ladder.scale(rung, t_end), e, se));
                }
                fits.push(FitRow {
                    sweep: ladder.mode,
                    estimator: name.clone(),
                    fit: fit_rate(&points).map_err(|e| e.to_string()),
                });
            }
        }
        let meta = Metadata {
            seed: self.seed,
            config_hash: None,
            reference_truncated: outs.iter().map(|o| o.reference_dropped).sum(),
            scheme_truncated: outs.iter().flat_map(|o| o.truncated.iter()).sum(),
        };
        ErrorTable {
            rows,
            fits,
            meta,
            gate: None,
        }
    }

    /// Reference vs doubled reference on `samples` paths from the gate stream.
    pub fn gate(&self, samples: usize) -> Result<GateReport> {
        let t_end = self.problem.horizon;
        let coarse = Solver::Reference(ReferenceSolver::new(self.problem, self.reference)?);
        let fine = Solver::Reference(ReferenceSolver::new(
            self.problem,
            self.reference.doubled(),
        )?);
        let extra = self.extra_times();
        let per = map_indexed(self.exec, samples, |i| -> Result<(f64, Vec<f64>)> {
            let path = sample_jump_path(
                &self.model,
                t_end,
                &mut stream_in(self.seed, DOMAIN_GATE, i as u64),
            );
            let (a, fa, _, _) =
                evaluate(&coarse, &path, self.t_eval, &extra, &self.functionals, None)?;
            let (b, fb, _, _) =
                evaluate(&fine, &path, self.t_eval, &extra, &self.functionals, None)?;
            let d = distance_to_spectral(coarse.space(), &a, &b);
            Ok((
                d * d,
                fa.iter().zip(&fb).map(|(x, y)| (x - y) * (x - y)).collect(),
            ))
        });
        let per: Vec<(f64, Vec<f64>)> = per.into_iter().collect::<Result<_>>()?;
        let m = per.len() as f64;
        let strong_rms = (per.iter().map(|p| p.0).sum::<f64>() / m).sqrt();
        let weak_rms = self
            .functionals
            .iter()
            .enumerate()
            .map(|(fi, (name, _))| {
                (
                    name.clone(),
                    (per.iter().map(|p| p.1[fi]).sum::<f64>() / m).sqrt(),
                )
            })
            .collect();
        Ok(GateReport {
            samples,
            strong_rms,
            weak_rms,
            verdicts: Vec::new(),
        })
    }

    /// `run`, then the gate on `gate_samples` paths.
    pub fn run_gated(&self, gate_samples: usize) -> Result<ErrorTable> {
        let mut table = self.run()?;
        let gate = self.gate(gate_samples)?;
        table.apply_gate(gate);
        Ok(table)
    }
}

enum Solver {
    Scheme(Scheme),
    Reference(ReferenceSolver),
}

impl Solver {
    fn space(&self) -> Space {
        match self {
            Solver::Scheme(s) => s.space(),
            Solver::Reference(r) => Space::Spectral {
                modes: r.settings().modes,
            },
        }
    }

    fn horizon(&self) -> f64 {
        match self {
            Solver::Scheme(s) => s.problem().horizon,
            Solver::Reference(r) => r.problem().horizon,
        }
    }
}

type Evaluation = (Vec<f64>, Vec<f64>, [f64; 3], usize);

/// One solve: `(state at t_eval, functional values, covariance triple, dropped jumps)`.
fn evaluate(
    solver: &Solver,
    path: &JumpPath,
    t_eval: f64,
    extra: &[f64],
    functionals: &[(String, PathFunctional)],
    cov: Option<&[PathFunctional; 3]>,
) -> Result<Evaluation> {
    let (space, horizon) = (solver.space(), solver.horizon());
    let mut accs = functionals
        .iter()
        .map(|(_, f)| f.accumulator(space, horizon))
        .collect::<Result<Vec<_>>>()?;
    let mut cov_accs = match cov {
        Some(fs) => fs
            .iter()
            .map(|f| f.accumulator(space, horizon))
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let mut state = Vec::new();
    let mut observe = |t: f64, x: &[f64]| {
        if t <= t_eval {
            state.clear();
            state.extend_from_slice(x);
        }
        accs.iter_mut()
            .chain(cov_accs.iter_mut())
            .for_each(|a| a.push(t, x));
    };
    let dropped = match solver {
        Solver::Scheme(s) => {
            let disc = *s.disc();
            s.run_observed(path, |m, x| observe(disc.time(m), x))?
        }
        Solver::Reference(r) => r.run_observed(path, extra, |_, t, x| observe(t, x))?.1,
    };
    let values = accs.into_iter().map(|a| a.finish()).collect();
    let mut triple = [0.0; 3];
    for (slot, a) in triple.iter_mut().zip(cov_accs) {
        *slot = a.finish();
    }
    Ok((state, values, triple, dropped))
}

/// `Cov_Y − Cov_Z` from paired triples `(f₁, f₂, f₃)` of the reference (`Y`)
/// and a rung (`Z`), with a delta-method standard error.
pub fn covariance_error(pairs: impl Iterator<Item = ([f64; 3], [f64; 3])>) -> (f64, f64) {
    let pairs: Vec<([f64; 3], [f64; 3])> = pairs.collect();
    let n = pairs.len() as f64;
    let mean = |f: &dyn Fn(&([f64; 3], [f64; 3])) -> f64| pairs.iter().map(f).sum::<f64>() / n;
    let (y2, y3) = (mean(&|p| p.0[1]), mean(&|p| p.0[2]));
    let (z2, z3) = (mean(&|p| p.1[1]), mean(&|p| p.1[2]));
    let (y1, z1) = (mean(&|p| p.0[0]), mean(&|p| p.1[0]));
    let est = (y1 - y2 * y3) - (z1 - z2 * z3);
    let infl: Vec<f64> = pairs
        .iter()
        .map(|p| (p.0[1] - y2) * (p.0[2] - y3) - (p.1[1] - z2) * (p.1[2] - z3))
        .collect();
    let (_, se) = mean_se(&infl);
    (est, se)
}

/// Base settings for the single-estimator sweeps below.
#[derive(Debug, Clone)]
pub struct SweepSettings {
    pub problem: Problem,
    pub model: LevyModel,
    pub reference: ReferenceSettings,
    pub samples: usize,
    pub seed: u64,
    pub exec: Exec,
    /// Paths for the self-convergence gate; 0 skips it.
    pub gate_samples: usize,
}

impl SweepSettings {
    fn campaign(&self, ladder: &ResolutionLadder) -> Campaign {
        Campaign {
            problem: self.problem,
            model: self.model.clone(),
            reference: self.reference,
            ladders: vec![ladder.clone()],
            t_eval: self.problem.horizon,
            strong: false,
            functionals: Vec::new(),
            covariance: None,
            samples: self.samples,
            seed: self.seed,
            exec: self.exec,
        }
    }

    fn finish(&self, c: &Campaign) -> Result<ErrorTable> {
        if self.gate_samples == 0 {
            return c.run();
        }
        let table = c.run_gated(self.gate_samples)?;
        table.require_gate()?;
        Ok(table)
    }
}

pub fn strong_error_sweep(
    settings: &SweepSettings,
    ladder: &ResolutionLadder,
    t_eval: f64,
) -> Result<ErrorTable> {
    let mut c = settings.campaign(ladder);
    c.strong = true;
    c.t_eval = t_eval;
    settings.finish(&c)
}

pub fn weak_error_sweep(
    settings: &SweepSettings,
    ladder: &ResolutionLadder,
    f: &PathFunctional,
) -> Result<ErrorTable> {
    let mut c = settings.campaign(ladder);
    c.functionals = vec![("f".into(), f.clone())];
    settings.finish(&c)
}

/// Weak over strong slope on one ladder (strong measured at `T`).
pub fn weak_strong_ratio(
    settings: &SweepSettings,
    ladder: &ResolutionLadder,
    f: &PathFunctional,
) -> Result<RatioOutcome> {
    let mut c = settings.campaign(ladder);
    c.strong = true;
    c.functionals = vec![("f".into(), f.clone())];
    let table = settings.finish(&c)?;
    Ok(table.weak_strong_ratio(ladder.mode, "weak:f", "strong"))
}

pub fn covariance_error_sweep(
    settings: &SweepSettings,
    ladder: &ResolutionLadder,
    spec: &CovarianceSpec,
) -> Result<ErrorTable> {
    let mut c = settings.campaign(ladder);
    c.covariance = Some(spec.clone());
    settings.finish(&c)
}

/// `true` if each estimate along the sweep is at most the previous one plus
/// one standard error (rows in ladder order, coarse to fine).
pub fn monotone_within_se(rows: &[&ErrorRow]) -> bool {
    rows.windows(2)
        .all(|w| w[1].estimate <= w[0].estimate + w[1].se.max(w[0].se))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::AmplitudeLaw;
    use crate::solver::{Drift, InitialValue};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_power_law() {
        let pts: Vec<(f64, f64, f64)> = (1..=5)
            .map(|i| {
                let h = 0.5f64.powi(i);
                (h, 3.0 * h * h, 0.0)
            })
            .collect();
        let fit = fit_rate(&pts).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-9, "{fit:?}");
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-9);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noisy_power_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let pts: Vec<(f64, f64, f64)> = (1..=5)
                .map(|i| {
                    let h = 0.5f64.powi(i);
                    let e = h * h * (1.0 + 0.01 * rng.random_range(-1.0..1.0));
                    (h, e, 0.01 * e)
                })
                .collect();
            assert!((fit_rate(&pts).unwrap().slope - 2.0).abs() < 0.05);
        }
    }

    #[test]
    fn void_rung_is_excluded() {
        let mut pts: Vec<(f64, f64, f64)> = (1..=4)
            .map(|i| {
                let h = 0.5f64.powi(i);
                (h, h, 0.01 * h)
            })
            .collect();
        pts[2].2 = 0.5 * pts[2].1;
        let fit = fit_rate(&pts).unwrap();
        assert_eq!(fit.excluded, vec![2]);
        assert!((fit.slope - 1.0).abs() < 1e-12);
        pts[1].2 = pts[1].1;
        assert_eq!(fit_rate(&pts), Err(Error::InsufficientPoints(2)));
    }

    #[test]
    fn weights_follow_relative_errors() {
        // An outlier with a large relative error barely moves the fit.
        let pts = [
            (0.5, 0.5, 0.001),
            (0.25, 0.25, 0.0005),
            (0.125, 0.125, 0.00025),
            (0.0625, 0.09, 0.02),
        ];
        let fit = fit_rate(&pts).unwrap();
        assert!((fit.slope - 1.0).abs() < 0.01, "{fit:?}");
    }

    fn linear_campaign(ladder: ResolutionLadder, samples: usize) -> Campaign {
        let problem =
            Problem::new(0.5, 1.0, Drift::Zero, InitialValue::Parabola { scale: 1.0 }).unwrap();
        Campaign {
            problem,
            model: LevyModel::new(20.0, 1.1, 32, 0.5, AmplitudeLaw::rademacher()).unwrap(),
            reference: ReferenceSettings {
                modes: 32,
                substeps: 64,
            },
            ladders: vec![ladder],
            t_eval: 1.0,
            strong: true,
            functionals: vec![("const".into(), PathFunctional::constant(2.5))],
            covariance: None,
            samples,
            seed: 3,
            exec: Exec::Sequential,
        }
    }

    #[test]
    fn self_comparison_and_constant_functional_are_exact() {
        let ladder = ResolutionLadder {
            mode: SweepMode::Space,
            rungs: vec![
                Rung::Reference(ReferenceSettings {
                    modes: 32,
                    substeps: 64,
                }),
                Rung::Scheme(
                    Discretization::new(Backend::Spectral { modes: 8 }, 1.0 / 64.0, 1.0).unwrap(),
                ),
            ],
        };
        let table = linear_campaign(ladder, 20).run().unwrap();
        let strong = table.rows_for(SweepMode::Space, "strong");
        assert_eq!(strong[0].estimate, 0.0);
        assert!(strong[1].estimate > 0.0);
        assert!(table
            .rows_for(SweepMode::Space, "weak:const")
            .iter()
            .all(|r| r.estimate == 0.0 && r.se == 0.0));
        assert_eq!(table.meta.reference_truncated, 0);
    }

    #[test]
    fn reference_must_be_finer() {
        let ladder =
            ResolutionLadder::space(|n| Backend::Spectral { modes: n }, &[64], 1.0 / 64.0, 1.0)
                .unwrap();
        assert!(linear_campaign(ladder, 4).run().is_err());
    }

    #[test]
    fn floor_ratio_is_undefined() {
        // No noise, no drift, spectral rungs: nothing differs from the reference in mode 1 but time.
        let ladder = ResolutionLadder::space(
            |n| Backend::Spectral { modes: n },
            &[2, 4, 8],
            1.0 / 32.0,
            1.0,
        )
        .unwrap();
        let mut c = linear_campaign(ladder, 4);
        c.problem.initial = InitialValue::Zero;
        c.model = LevyModel::new(0.0, 1.1, 32, 0.5, AmplitudeLaw::rademacher()).unwrap();
        c.functionals = vec![(
            "lin".into(),
            PathFunctional::linear_at(1.0, TestFunction::mode(1)),
        )];
        let table = c.run().unwrap();
        assert_eq!(
            table.weak_strong_ratio(SweepMode::Space, "weak:lin", "strong"),
            RatioOutcome::UndefinedByFloor
        );
    }

    #[test]
    fn csv_layout() {
        let ladder =
            ResolutionLadder::time(Backend::Spectral { modes: 8 }, &[0.25, 0.125, 0.0625], 1.0)
                .unwrap();
        let mut table = linear_campaign(ladder, 10).run().unwrap();
        table.meta.config_hash = Some("abc".into());
        let csv = table.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# config_hash=abc");
        assert_eq!(lines[1], "# seed=3");
        assert!(lines.contains(&"sweep,h,k,estimator,estimate,se,n_samples,void"));
        let data = lines
            .iter()
            .filter(|l| !l.starts_with('#') && !l.starts_with("sweep"))
            .count();
        assert_eq!(data, 6);
        assert!(lines
            .iter()
            .any(|l| l.starts_with("# fit sweep=time estimator=strong pinned=h slope=")));
        assert_eq!(table.plot_data().len(), 2);
    }
}
