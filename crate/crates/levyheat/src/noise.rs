//! Compound Poisson noise with values in `U = Ḣ^{β-1}`.
//!
//! Jumps arrive at rate `λ_ν`. Each mark is `ζ σ_j e_j`: the mode `j` is drawn
//! with probability `p_j ∝ j^{-α}` on `1..=K_noise` and the amplitude `ζ` from a
//! symmetric finite law. The default scaling `σ_j = λ_j^{(1-β)/2}` puts every
//! mark on the sphere `‖x‖_U = |ζ|`, hence `|ν|₂² = λ_ν E[ζ²]`.
//!
//! Because amplitudes are symmetric the compensator vanishes, and the path
//! `L(t) = Σ_{τ_i ≤ t} x_i` is known exactly.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::spectral::{dirichlet_eigenvalue, SpectralBasis, SpectralField};

/// Symmetric finite amplitude law.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeLaw {
    atoms: Vec<(f64, f64)>,
}

impl AmplitudeLaw {
    /// `ζ = ±1` with probability ½ each.
    pub fn rademacher() -> Self {
        AmplitudeLaw {
            atoms: vec![(-1.0, 0.5), (1.0, 0.5)],
        }
    }

    /// Atoms `(value, probability)`; rejects laws that are not symmetric about zero.
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(invalid("amplitude law has no atoms"));
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if atoms.iter().any(|a| !(a.1 > 0.0) || !a.0.is_finite()) || (total - 1.0).abs() > 1e-12 {
            return Err(invalid(
                "amplitude probabilities must be positive and sum to 1",
            ));
        }
        for &(v, p) in &atoms {
            let mirror: f64 = atoms.iter().filter(|a| a.0 == -v).map(|a| a.1).sum();
            let same: f64 = atoms.iter().filter(|a| a.0 == v).map(|a| a.1).sum();
            if v != 0.0 && (mirror - same).abs() > 1e-12 {
                return Err(invalid(format!(
                    "amplitude law is not symmetric: P(ζ={v}) = {p} has no matching mass at {}",
                    -v
                )));
            }
        }
        Ok(AmplitudeLaw { atoms })
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn second_moment(&self) -> f64 {
        self.atoms.iter().map(|(v, p)| v * v * p).sum()
    }

    fn sample(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for &(v, p) in &self.atoms {
            acc += p;
            if u < acc {
                return v;
            }
        }
        self.atoms[self.atoms.len() - 1].0
    }
}

/// One atom of the Lévy measure: the mark `coeff · e_mode` with mass `mass`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkAtom {
    pub mode: usize,
    pub amplitude: f64,
    pub coeff: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevyModel {
    rate: f64,
    alpha: f64,
    beta: f64,
    amplitude: AmplitudeLaw,
    sigma: Vec<f64>,
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl LevyModel {
    pub fn new(
        rate: f64,
        alpha: f64,
        k_noise: usize,
        beta: f64,
        amplitude: AmplitudeLaw,
    ) -> Result<Self> {
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(invalid(format!(
                "jump rate must be nonnegative, got {rate}"
            )));
        }
        if !(alpha > 1.0) {
            return Err(invalid(format!("mode decay α must exceed 1, got {alpha}")));
        }
        if k_noise == 0 {
            return Err(invalid("K_noise must be positive"));
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(invalid(format!("β must lie in (0, 1], got {beta}")));
        }
        let weights: Vec<f64> = (1..=k_noise).map(|j| (j as f64).powf(-alpha)).collect();
        let total: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut cdf = Vec::with_capacity(k_noise);
        let mut acc = 0.0;
        for p in &probs {
            acc += p;
            cdf.push(acc);
        }
        let sigma = (1..=k_noise)
            .map(|j| dirichlet_eigenvalue(j).powf((1.0 - beta) / 2.0))
            .collect();
        Ok(LevyModel {
            rate,
            alpha,
            beta,
            amplitude,
            sigma,
            probs,
            cdf,
        })
    }

    /// Replace the default mark scaling by arbitrary positive `σ_j`.
    pub fn with_sigma(mut self, sigma: Vec<f64>) -> Result<Self> {
        if sigma.len() != self.sigma.len() || sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(invalid("σ must be positive with one entry per noise mode"));
        }
        self.sigma = sigma;
        Ok(self)
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn k_noise(&self) -> usize {
        self.sigma.len()
    }

    pub fn amplitude(&self) -> &AmplitudeLaw {
        &self.amplitude
    }

    pub fn mode_probability(&self, j: usize) -> f64 {
        self.probs[j - 1]
    }

    pub fn sigma(&self, j: usize) -> f64 {
        self.sigma[j - 1]
    }

    /// `‖c e_j‖_U = |c| λ_j^{(β-1)/2}`.
    pub fn mark_norm(&self, j: usize, coeff: f64) -> f64 {
        coeff.abs() * dirichlet_eigenvalue(j).powf((self.beta - 1.0) / 2.0)
    }

    /// All atoms of ν (mode × amplitude), in mode-major order.
    pub fn atoms(&self) -> Vec<MarkAtom> {
        let mut out = Vec::with_capacity(self.k_noise() * self.amplitude.atoms.len());
        for j in 1..=self.k_noise() {
            for &(a, p) in &self.amplitude.atoms {
                out.push(MarkAtom {
                    mode: j,
                    amplitude: a,
                    coeff: a * self.sigma(j),
                    mass: self.rate * self.mode_probability(j) * p,
                });
            }
        }
        out
    }

    fn sample_mode(&self, u: f64) -> usize {
        self.cdf
            .partition_point(|&c| c <= u)
            .min(self.cdf.len() - 1)
            + 1
    }
}

/// `|ν|₂ = (λ_ν E[ζ²] Σ_j p_j σ_j² λ_j^{β-1})^{1/2}`.
pub fn second_moment(model: &LevyModel) -> f64 {
    let s: f64 = (1..=model.k_noise())
        .map(|j| {
            let s = model.sigma(j);
            model.mode_probability(j) * s * s * dirichlet_eigenvalue(j).powf(model.beta - 1.0)
        })
        .sum();
    (model.rate * model.amplitude.second_moment() * s).sqrt()
}

/// A single-mode jump `coeff · e_mode` at `time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub time: f64,
    pub mode: usize,
    pub coeff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpPath {
    pub horizon: f64,
    pub jumps: Vec<Jump>,
    pub seed: Option<u64>,
    pub index: Option<u64>,
}

impl JumpPath {
    pub fn empty(horizon: f64) -> Self {
        JumpPath {
            horizon,
            jumps: Vec::new(),
            seed: None,
            index: None,
        }
    }

    /// Builds a path from unsorted jumps (stable sort by time).
    pub fn from_jumps(horizon: f64, mut jumps: Vec<Jump>) -> Result<Self> {
        for j in &jumps {
            if !(j.time > 0.0 && j.time <= horizon) {
                return Err(Error::OutOfRange {
                    t: j.time,
                    lo: 0.0,
                    hi: horizon,
                });
            }
            if j.mode == 0 {
                return Err(invalid("modes are 1-based"));
            }
        }
        jumps.sort_by(|a, b| a.time.total_cmp(&b.time));
        Ok(JumpPath {
            horizon,
            jumps,
            seed: None,
            index: None,
        })
    }

    pub fn len(&self) -> usize {
        self.jumps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jumps.is_empty()
    }

    /// Jumps with `τ ∈ (s, t]`.
    pub fn jumps_in(&self, s: f64, t: f64) -> Result<&[Jump]> {
        if t < s {
            return Err(Error::ReversedInterval(s, t));
        }
        let a = self.jumps.partition_point(|j| j.time <= s);
        let b = self.jumps.partition_point(|j| j.time <= t);
        Ok(&self.jumps[a..b])
    }

    /// `L(t) - L(s)` on the first `modes` modes.
    pub fn increment(&self, s: f64, t: f64, modes: usize) -> Result<SpectralField> {
        let mut out = SpectralField::zeros(SpectralBasis::dirichlet(modes));
        for j in self.jumps_in(s, t)? {
            if j.mode <= modes {
                out.coeffs_mut()[j.mode - 1] += j.coeff;
            }
        }
        Ok(out)
    }

    /// Deterministic fingerprint of the jump data (bit patterns).
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.horizon.to_bits().hash(&mut h);
        for j in &self.jumps {
            j.time.to_bits().hash(&mut h);
            j.mode.hash(&mut h);
            j.coeff.to_bits().hash(&mut h);
        }
        h.finish()
    }

    /// Line-based text form:
    ///
    /// ```text
    /// # jumppath v1 horizon=<T> seed=<u64|-> index=<u64|->
    /// <time> <mode> <coeff>
    /// ```
    ///
    /// Floats use shortest round-trip formatting, so parsing is exact.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<u64>| v.map_or("-".to_string(), |v| v.to_string());
        let mut s = format!(
            "# jumppath v1 horizon={} seed={} index={}\n",
            self.horizon,
            opt(self.seed),
            opt(self.index)
        );
        for j in &self.jumps {
            s.push_str(&format!("{} {} {}\n", j.time, j.mode, j.coeff));
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
        let rest = header
            .strip_prefix("# jumppath v1")
            .ok_or_else(|| perr(1, "missing '# jumppath v1' header"))?;
        let (mut horizon, mut seed, mut index) = (None, None, None);
        for kv in rest.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| perr(1, "malformed header field"))?;
            let num = |v: &str| -> Result<Option<u64>> {
                if v == "-" {
                    Ok(None)
                } else {
                    v.parse().map(Some).map_err(|_| perr(1, "bad integer"))
                }
            };
            match k {
                "horizon" => horizon = Some(v.parse::<f64>().map_err(|_| perr(1, "bad horizon"))?),
                "seed" => seed = num(v)?,
                "index" => index = num(v)?,
                _ => return Err(perr(1, &format!("unknown header field '{k}'"))),
            }
        }
        let horizon = horizon.ok_or_else(|| perr(1, "missing horizon"))?;
        let mut jumps = Vec::new();
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(perr(i + 1, "expected 'time mode coeff'"));
            }
            jumps.push(Jump {
                time: f[0].parse().map_err(|_| perr(i + 1, "bad time"))?,
                mode: f[1].parse().map_err(|_| perr(i + 1, "bad mode"))?,
                coeff: f[2].parse().map_err(|_| perr(i + 1, "bad coefficient"))?,
            });
        }
        if jumps.windows(2).any(|w| w[1].time < w[0].time) {
            return Err(perr(0, "jump times are not sorted"));
        }
        let mut path = JumpPath::from_jumps(horizon, jumps)?;
        path.seed = seed;
        path.index = index;
        Ok(path)
    }
}

/// Draws one path on `(0, T]` from `rng`.
pub fn sample_jump_path<R: Rng + ?Sized>(model: &LevyModel, horizon: f64, rng: &mut R) -> JumpPath {
    let mean = model.rate * horizon;
    let count = if mean > 0.0 {
        Poisson::new(mean)
            .expect("positive Poisson mean")
            .sample(rng) as usize
    } else {
        0
    };
    let mut jumps = Vec::with_capacity(count);
    for _ in 0..count {
        let time = horizon * (1.0 - rng.random::<f64>());
        let mode = model.sample_mode(rng.random::<f64>());
        let amp = model.amplitude.sample(rng.random::<f64>());
        jumps.push(Jump {
            time,
            mode,
            coeff: amp * model.sigma(mode),
        });
    }
    jumps.sort_by(|a, b| a.time.total_cmp(&b.time));
    JumpPath {
        horizon,
        jumps,
        seed: None,
        index: None,
    }
}

/// Path number `index` of the sample stream keyed by `seed`.
pub fn sample_path(model: &LevyModel, horizon: f64, seed: u64, index: u64) -> JumpPath {
    let mut r = rng::stream(seed, index);
    let mut p = sample_jump_path(model, horizon, &mut r);
    p.seed = Some(seed);
    p.index = Some(index);
    p
}

/// `Σ_{τ_i ≤ t} S(t - τ_i) x_i` on the first `modes` modes, exactly per mode.
pub fn stochastic_convolution_exact(
    path: &JumpPath,
    t: f64,
    modes: usize,
) -> Result<SpectralField> {
    if !(0.0..=path.horizon).contains(&t) {
        return Err(Error::OutOfRange {
            t,
            lo: 0.0,
            hi: path.horizon,
        });
    }
    let mut out = SpectralField::zeros(SpectralBasis::dirichlet(modes));
    for j in path.jumps_in(0.0, t)? {
        if j.mode <= modes {
            out.coeffs_mut()[j.mode - 1] +=
                (-dirichlet_eigenvalue(j.mode) * (t - j.time)).exp() * j.coeff;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn model(rate: f64) -> LevyModel {
        LevyModel::new(rate, 1.1, 64, 0.5, AmplitudeLaw::rademacher()).unwrap()
    }

    #[test]
    fn zero_rate_gives_empty_path() {
        assert!(sample_path(&model(0.0), 1.0, 1, 0).is_empty());
    }

    #[test]
    fn deterministic_per_stream() {
        let m = model(50.0);
        let a = sample_path(&m, 1.0, 9, 4);
        assert_eq!(a, sample_path(&m, 1.0, 9, 4));
        assert_ne!(a.fingerprint(), sample_path(&m, 1.0, 9, 5).fingerprint());
        assert!(a.jumps.windows(2).all(|w| w[0].time < w[1].time));
        assert!(a.jumps.iter().all(|j| j.time > 0.0 && j.time <= 1.0));
    }

    #[test]
    fn mean_jump_count() {
        let m = model(5.0);
        let n = 10_000;
        let mean = (0..n)
            .map(|i| sample_path(&m, 1.0, 3, i).len() as f64)
            .sum::<f64>()
            / n as f64;
        assert!(
            (mean - 5.0).abs() <= 3.0 * (5.0f64 / n as f64).sqrt(),
            "{mean}"
        );
    }

    #[test]
    fn martingale_mean_zero() {
        let m = LevyModel::new(5.0, 1.1, 4, 0.5, AmplitudeLaw::rademacher()).unwrap();
        let n = 10_000;
        let vals: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                sample_path(&m, 1.0, 11, i)
                    .increment(0.0, 0.6, 4)
                    .unwrap()
                    .into_coeffs()
            })
            .collect();
        for j in 0..4 {
            let mean = vals.iter().map(|v| v[j]).sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!(
                mean.abs() <= 3.0 * (var / n as f64).sqrt() + 1e-12,
                "mode {}: {mean}",
                j + 1
            );
        }
    }

    #[test]
    fn itô_isometry_of_convolution() {
        let m = LevyModel::new(5.0, 1.1, 8, 0.5, AmplitudeLaw::rademacher()).unwrap();
        let t = 0.2;
        // E‖∫ S(t-s) dL‖² = Σ_atoms mass · coeff² · (1 - e^{-2λt})/(2λ).
        let closed: f64 = m
            .atoms()
            .iter()
            .map(|a| {
                let l = dirichlet_eigenvalue(a.mode);
                a.mass * a.coeff * a.coeff * (1.0 - (-2.0 * l * t).exp()) / (2.0 * l)
            })
            .sum();
        let n = 20_000;
        let v: Vec<f64> = (0..n)
            .map(|i| {
                let p = sample_path(&m, t, 5, i);
                stochastic_convolution_exact(&p, t, 8)
                    .unwrap()
                    .norm()
                    .powi(2)
            })
            .collect();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(
            (mean - closed).abs() <= 3.0 * (var / n as f64).sqrt(),
            "{mean} vs {closed}"
        );
    }

    #[test]
    fn marks_on_unit_sphere() {
        let m = model(50.0);
        let p = sample_path(&m, 1.0, 2, 0);
        for j in &p.jumps {
            assert_relative_eq!(m.mark_norm(j.mode, j.coeff), 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn second_moment_examples() {
        assert_relative_eq!(
            second_moment(&model(50.0)),
            50f64.sqrt(),
            max_relative = 1e-12
        );
        assert_eq!(second_moment(&model(0.0)), 0.0);
        // Generic σ: exhaustive expectation over the discrete mark law.
        let sigma: Vec<f64> = (1..=64).map(|j| 1.0 + (j as f64).sin().abs()).collect();
        let amp =
            AmplitudeLaw::new(vec![(-2.0, 0.25), (-0.5, 0.25), (0.5, 0.25), (2.0, 0.25)]).unwrap();
        let m = LevyModel::new(3.0, 1.7, 64, 0.3, amp)
            .unwrap()
            .with_sigma(sigma)
            .unwrap();
        let brute: f64 = m
            .atoms()
            .iter()
            .map(|a| a.mass * m.mark_norm(a.mode, a.coeff).powi(2))
            .sum();
        assert_relative_eq!(second_moment(&m), brute.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn rejects_asymmetric_amplitudes() {
        assert!(AmplitudeLaw::new(vec![(1.0, 0.5), (-2.0, 0.5)]).is_err());
        assert!(AmplitudeLaw::new(vec![(1.0, 0.7), (-1.0, 0.3)]).is_err());
        assert!(AmplitudeLaw::new(vec![(0.0, 0.2), (1.0, 0.4), (-1.0, 0.4)]).is_ok());
        assert!(LevyModel::new(1.0, 1.0, 8, 0.5, AmplitudeLaw::rademacher()).is_err());
    }

    #[test]
    fn increment_examples() {
        let p = JumpPath::from_jumps(
            1.0,
            vec![Jump {
                time: 0.5,
                mode: 2,
                coeff: 0.7,
            }],
        )
        .unwrap();
        assert_eq!(p.increment(0.3, 0.3, 4).unwrap().norm(), 0.0);
        assert_eq!(p.increment(0.4, 0.6, 4).unwrap().coeffs()[1], 0.7);
        assert_eq!(p.increment(0.6, 0.9, 4).unwrap().norm(), 0.0);
        assert_eq!(p.increment(0.4, 0.5, 4).unwrap().coeffs()[1], 0.7);
        assert!(matches!(
            p.increment(0.6, 0.4, 4),
            Err(Error::ReversedInterval(..))
        ));
    }

    #[test]
    fn convolution_examples() {
        assert_eq!(
            stochastic_convolution_exact(&JumpPath::empty(1.0), 0.7, 5)
                .unwrap()
                .norm(),
            0.0
        );
        let p = JumpPath::from_jumps(
            1.0,
            vec![Jump {
                time: 0.25,
                mode: 3,
                coeff: -1.5,
            }],
        )
        .unwrap();
        let v = stochastic_convolution_exact(&p, 0.3, 5).unwrap();
        assert_relative_eq!(
            v.coeffs()[2],
            -1.5 * (-9.0 * std::f64::consts::PI.powi(2) * 0.05).exp()
        );
    }

    #[test]
    fn convolution_matches_fine_riemann_sum() {
        // Oracle: ∫₀ᵗ S(t-s) dL(s) as a sum over 10⁶ substeps of S(t - s_i)(L(s_i) - L(s_{i-1})).
        let m = LevyModel::new(20.0, 1.1, 6, 0.5, AmplitudeLaw::rademacher()).unwrap();
        let p = sample_path(&m, 1.0, 17, 0);
        let t = 0.8;
        let n = 1_000_000;
        let mut oracle = vec![0.0; 6];
        let mut next = 0;
        for i in 1..=n {
            let s = t * i as f64 / n as f64;
            while next < p.jumps.len() && p.jumps[next].time <= s {
                let j = p.jumps[next];
                oracle[j.mode - 1] += (-dirichlet_eigenvalue(j.mode) * (t - s)).exp() * j.coeff;
                next += 1;
            }
        }
        // Each jump is evaluated at most one substep late: |error| ≤ |c|(1 - e^{-λΔ}).
        let dt = t / n as f64;
        let mut bound = vec![1e-12; 6];
        for j in p.jumps_in(0.0, t).unwrap() {
            bound[j.mode - 1] += j.coeff.abs() * -(-dirichlet_eigenvalue(j.mode) * dt).exp_m1();
        }
        let exact = stochastic_convolution_exact(&p, t, 6).unwrap();
        for ((a, b), e) in exact.coeffs().iter().zip(&oracle).zip(&bound) {
            assert!((a - b).abs() <= *e, "{a} vs {b}");
        }
    }

    #[test]
    fn text_round_trip() {
        let p = sample_path(&model(30.0), 1.0, 123, 77);
        let text = p.to_text();
        assert!(text.starts_with("# jumppath v1 horizon=1 seed=123 index=77\n"));
        assert_eq!(JumpPath::from_text(&text).unwrap(), p);
        assert!(matches!(
            JumpPath::from_text("# jumppath v1 horizon=1\n0.5 x 1\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(JumpPath::from_text("nonsense").is_err());
    }

    proptest! {
        #[test]
        fn increments_telescope(seed in 0u64..500, cuts in prop::collection::vec(0.0..1.0f64, 1..6)) {
            let p = sample_path(&model(40.0), 1.0, seed, 0);
            let mut pts = cuts.clone();
            pts.push(0.0);
            pts.push(1.0);
            pts.sort_by(f64::total_cmp);
            let mut sum = vec![0.0; 64];
            for w in pts.windows(2) {
                let inc = p.increment(w[0], w[1], 64).unwrap();
                sum.iter_mut().zip(inc.coeffs()).for_each(|(a, b)| *a += b);
            }
            let total = p.increment(0.0, 1.0, 64).unwrap();
            for (a, b) in sum.iter().zip(total.coeffs()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
