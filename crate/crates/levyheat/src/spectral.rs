//! Spectral model of the Dirichlet Laplacian on (0,1).
//!
//! `A = -d²/dξ²` with zero boundary values has eigenpairs
//! `λ_j = (jπ)²`, `e_j(ξ) = √2 sin(jπξ)`. A field is a coefficient vector in
//! this basis; `Ḣ^ρ` norms, fractional powers and the semigroup `S(t) = e^{-tA}`
//! act diagonally.
//!
//! Physical values on the grid `ξ_i = i/(n+1)` come from the type-I discrete
//! sine transform, see [`SineTransform`].

use std::f64::consts::{E, PI, SQRT_2};
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    eigenvalues: Arc<[f64]>,
}

impl SpectralBasis {
    /// First `k` Dirichlet eigenvalues `(jπ)²`.
    pub fn dirichlet(k: usize) -> Self {
        SpectralBasis {
            eigenvalues: (1..=k).map(dirichlet_eigenvalue).collect(),
        }
    }

    /// A user-supplied eigenvalue sequence; must be positive and strictly increasing.
    pub fn from_eigenvalues(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("empty eigenvalue sequence"));
        }
        if values[0] <= 0.0 || !values.iter().all(|v| v.is_finite()) {
            return Err(invalid("eigenvalues must be positive and finite"));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("eigenvalues must be strictly increasing"));
        }
        Ok(SpectralBasis {
            eigenvalues: values.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `λ_j` for the 1-based mode `j`.
    pub fn eigenvalue(&self, j: usize) -> f64 {
        self.eigenvalues[j - 1]
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }
}

pub fn dirichlet_eigenvalue(j: usize) -> f64 {
    let w = j as f64 * PI;
    w * w
}

/// `e_j(ξ) = √2 sin(jπξ)`.
pub fn eigenfunction(j: usize, xi: f64) -> f64 {
    SQRT_2 * (j as f64 * PI * xi).sin()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    basis: SpectralBasis,
    coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn new(basis: SpectralBasis, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.len() {
            return Err(invalid(format!(
                "{} coefficients for a basis of {} modes",
                coeffs.len(),
                basis.len()
            )));
        }
        Ok(SpectralField { basis, coeffs })
    }

    pub fn zeros(basis: SpectralBasis) -> Self {
        let coeffs = vec![0.0; basis.len()];
        SpectralField { basis, coeffs }
    }

    /// `c · e_j`.
    pub fn single_mode(basis: SpectralBasis, j: usize, c: f64) -> Self {
        let mut f = Self::zeros(basis);
        f.coeffs[j - 1] = c;
        f
    }

    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// `‖v‖_{Ḣ^ρ} = (Σ λ_j^ρ c_j²)^{1/2}`.
    pub fn hdot_norm(&self, rho: f64) -> f64 {
        hdot_norm(self.basis.eigenvalues(), &self.coeffs, rho)
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn inner(&self, other: &SpectralField) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// `S(t) v`, i.e. `c_j ← e^{-λ_j t} c_j`.
    pub fn apply_semigroup(&self, t: f64) -> Result<SpectralField> {
        if t < 0.0 {
            return Err(Error::NegativeTime(t));
        }
        let coeffs = self
            .coeffs
            .iter()
            .zip(self.basis.eigenvalues())
            .map(|(c, l)| (-l * t).exp() * c)
            .collect();
        Ok(SpectralField {
            basis: self.basis.clone(),
            coeffs,
        })
    }

    /// `A^{ρ/2} v`.
    pub fn apply_fractional_power(&self, rho: f64) -> SpectralField {
        let coeffs = self
            .coeffs
            .iter()
            .zip(self.basis.eigenvalues())
            .map(|(c, l)| l.powf(rho / 2.0) * c)
            .collect();
        SpectralField {
            basis: self.basis.clone(),
            coeffs,
        }
    }

    /// Point value by direct summation (Dirichlet basis only).
    pub fn eval_at(&self, xi: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c * eigenfunction(i + 1, xi))
            .sum()
    }
}

pub fn hdot_norm(eigenvalues: &[f64], coeffs: &[f64], rho: f64) -> f64 {
    coeffs
        .iter()
        .zip(eigenvalues)
        .map(|(c, l)| l.powf(rho) * c * c)
        .sum::<f64>()
        .sqrt()
}

/// Analytic bound `sup_{λ>0} (λt)^{ρ/2} e^{-λt} = (ρ/(2e))^{ρ/2}` (1 at ρ = 0).
pub fn smoothing_envelope(rho: f64) -> f64 {
    if rho == 0.0 {
        1.0
    } else {
        (rho / (2.0 * E)).powf(rho / 2.0)
    }
}

/// `max_{t ∈ grid} t^{ρ/2} max_j λ_j^{ρ/2} e^{-λ_j t}` over the basis.
pub fn smoothing_constant_check(basis: &SpectralBasis, rho: f64, t_grid: &[f64]) -> Result<f64> {
    if rho < 0.0 {
        return Err(invalid("smoothing check needs ρ ≥ 0"));
    }
    let mut worst: f64 = 0.0;
    for &t in t_grid {
        if t <= 0.0 {
            return Err(invalid(format!("grid time {t} must be positive")));
        }
        for &l in basis.eigenvalues() {
            let v = (l * t).powf(rho / 2.0) * (-l * t).exp();
            worst = worst.max(v);
        }
    }
    Ok(worst)
}

/// `sup_{x>0} x^{-ρ/2}(1 - e^{-x})` for ρ ∈ (0, 2].
///
/// For ρ < 2 the maximizer solves `x/(e^x - 1) = ρ/2`; at ρ = 2 the supremum
/// is the limit 1 at x → 0.
pub fn continuity_envelope(rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho <= 2.0) {
        return Err(invalid("continuity envelope needs ρ ∈ (0, 2]"));
    }
    if rho == 2.0 {
        return Ok(1.0);
    }
    let target = rho / 2.0;
    let (mut lo, mut hi) = (1e-12_f64, 60.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid / mid.exp_m1() > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = 0.5 * (lo + hi);
    Ok(x.powf(-rho / 2.0) * -(-x).exp_m1())
}

/// `max_{j, t} λ_j^{-ρ/2}(1 - e^{-λ_j t}) / t^{ρ/2}`, to compare with [`continuity_envelope`].
pub fn continuity_constant_check(basis: &SpectralBasis, rho: f64, t_grid: &[f64]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &t in t_grid {
        if t <= 0.0 {
            return Err(invalid(format!("grid time {t} must be positive")));
        }
        for &l in basis.eigenvalues() {
            let v = l.powf(-rho / 2.0) * -(-l * t).exp_m1() / t.powf(rho / 2.0);
            worst = worst.max(v);
        }
    }
    Ok(worst)
}

/// Type-I discrete sine transform between `n` coefficients and the `n`
/// interior grid values `u_i = Σ_j c_j e_j(i/(n+1))`.
///
/// The two directions are exact inverses:
/// `c_j = (1/(n+1)) Σ_i u_i e_j(i/(n+1))`.
#[derive(Clone)]
pub struct SineTransform {
    n: usize,
    kind: SineKind,
}

#[derive(Clone)]
enum SineKind {
    /// Dense table `sin(jπi/(n+1))`, row-major in i.
    Table(Arc<[f64]>),
    Fft(Arc<dyn Fft<f64>>),
}

/// Scratch for [`SineTransform`]; one per concurrent caller.
#[derive(Default)]
pub struct SineWork {
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

const TABLE_MAX: usize = 48;

impl SineTransform {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "sine transform needs at least one point");
        let kind = if n <= TABLE_MAX {
            let h = PI / (n + 1) as f64;
            let table = (1..=n)
                .flat_map(|i| (1..=n).map(move |j| ((i * j) as f64 * h).sin()))
                .collect();
            SineKind::Table(table)
        } else {
            SineKind::Fft(FftPlanner::new().plan_fft_forward(2 * (n + 1)))
        };
        SineTransform { n, kind }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn work(&self) -> SineWork {
        SineWork::default()
    }

    /// Raw DST-I `y_j = Σ_i x_i sin(πij/(n+1))`.
    fn dst(&self, x: &[f64], y: &mut [f64], w: &mut SineWork) {
        let n = self.n;
        match &self.kind {
            SineKind::Table(t) => {
                for (i, yi) in y.iter_mut().enumerate() {
                    let row = &t[i * n..(i + 1) * n];
                    *yi = row.iter().zip(x).map(|(a, b)| a * b).sum();
                }
            }
            SineKind::Fft(fft) => {
                let len = 2 * (n + 1);
                w.buf.clear();
                w.buf.resize(len, Complex::new(0.0, 0.0));
                for (i, &v) in x.iter().enumerate() {
                    w.buf[i + 1].re = v;
                    w.buf[len - 1 - i].re = -v;
                }
                let need = fft.get_inplace_scratch_len();
                if w.scratch.len() < need {
                    w.scratch.resize(need, Complex::new(0.0, 0.0));
                }
                fft.process_with_scratch(&mut w.buf, &mut w.scratch[..need]);
                for (j, yj) in y.iter_mut().enumerate() {
                    *yj = -0.5 * w.buf[j + 1].im;
                }
            }
        }
    }

    /// Coefficients → grid values.
    pub fn synthesize(&self, coeffs: &[f64], values: &mut [f64], w: &mut SineWork) {
        self.dst(coeffs, values, w);
        values.iter_mut().for_each(|v| *v *= SQRT_2);
    }

    /// Grid values → coefficients.
    pub fn analyze(&self, values: &[f64], coeffs: &mut [f64], w: &mut SineWork) {
        self.dst(values, coeffs, w);
        let s = SQRT_2 / (self.n + 1) as f64;
        coeffs.iter_mut().for_each(|c| *c *= s);
    }
}

impl std::fmt::Debug for SineTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self.kind {
            SineKind::Table(_) => "table",
            SineKind::Fft(_) => "fft",
        };
        write!(f, "SineTransform {{ n: {}, kind: {kind} }}", self.n)
    }
}
