//! P1 finite elements on uniform meshes of (0,1).
//!
//! Unknowns are values at the interior nodes `ξ_i = i h`, `i = 1..n_cells-1`;
//! both boundary values are zero. `A_h` is never formed: the step operator
//! `S_{h,k} = (I + kA_h)^{-1} P_h` is applied by solving
//! `(M_h + k S_h) w = M_h v` with a precomputed tridiagonal factorization.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{invalid, Error, Result};
use crate::spectral::{eigenfunction, SpectralField};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FemMesh {
    n_cells: usize,
}

impl FemMesh {
    pub fn new(n_cells: usize) -> Result<Self> {
        if n_cells < 2 {
            return Err(invalid("a mesh needs at least 2 cells"));
        }
        Ok(FemMesh { n_cells })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_nodes(&self) -> usize {
        self.n_cells - 1
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n_cells as f64
    }

    /// Interior node `i` (1-based).
    pub fn node(&self, i: usize) -> f64 {
        i as f64 / self.n_cells as f64
    }
}

/// Symmetric tridiagonal matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl Tridiagonal {
    pub fn mass(mesh: &FemMesh) -> Self {
        let (n, h) = (mesh.n_nodes(), mesh.h());
        Tridiagonal {
            diag: vec![4.0 * h / 6.0; n],
            off: vec![h / 6.0; n - 1],
        }
    }

    pub fn stiffness(mesh: &FemMesh) -> Self {
        let (n, h) = (mesh.n_nodes(), mesh.h());
        Tridiagonal {
            diag: vec![2.0 / h; n],
            off: vec![-1.0 / h; n - 1],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `self + c · other`.
    pub fn add_scaled(&self, c: f64, other: &Tridiagonal) -> Tridiagonal {
        Tridiagonal {
            diag: self
                .diag
                .iter()
                .zip(&other.diag)
                .map(|(a, b)| a + c * b)
                .collect(),
            off: self
                .off
                .iter()
                .zip(&other.off)
                .map(|(a, b)| a + c * b)
                .collect(),
        }
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.len();
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.off[i] * x[i + 1];
            }
            y[i] = s;
        }
    }

    /// `xᵀ T x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let mut y = vec![0.0; x.len()];
        self.apply(x, &mut y);
        x.iter().zip(&y).map(|(a, b)| a * b).sum()
    }

    /// Thomas factorization; the matrix must be nonsingular without pivoting.
    pub fn factor(&self) -> TridiagonalFactor {
        let n = self.len();
        let mut inv_pivot = vec![0.0; n];
        let mut upper = vec![0.0; n.saturating_sub(1)];
        let mut d = self.diag[0];
        for i in 0..n {
            if i > 0 {
                d = self.diag[i] - self.off[i - 1] * upper[i - 1];
            }
            inv_pivot[i] = 1.0 / d;
            if i + 1 < n {
                upper[i] = self.off[i] * inv_pivot[i];
            }
        }
        TridiagonalFactor {
            lower: self.off.clone(),
            inv_pivot,
            upper,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TridiagonalFactor {
    lower: Vec<f64>,
    inv_pivot: Vec<f64>,
    upper: Vec<f64>,
}

impl TridiagonalFactor {
    /// Solves in place: `x` holds the right-hand side on entry.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = x.len();
        x[0] *= self.inv_pivot[0];
        for i in 1..n {
            x[i] = (x[i] - self.lower[i - 1] * x[i - 1]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            x[i] -= self.upper[i] * x[i + 1];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FemField {
    pub mesh: FemMesh,
    pub nodal: Vec<f64>,
}

impl FemField {
    pub fn zeros(mesh: FemMesh) -> Self {
        FemField {
            mesh,
            nodal: vec![0.0; mesh.n_nodes()],
        }
    }

    /// L² norm of the piecewise linear function.
    pub fn l2_norm(&self) -> f64 {
        Tridiagonal::mass(&self.mesh)
            .quadratic_form(&self.nodal)
            .max(0.0)
            .sqrt()
    }
}

/// `∫ e_j φ_i` for every interior hat `φ_i`, accumulated as `out += c · load`.
///
/// Exact: `∫ sin(ωξ) φ_i = sin(ωξ_i) (2 - 2cos ωh)/(ω² h)`.
pub fn add_mode_load(mesh: &FemMesh, j: usize, c: f64, out: &mut [f64]) {
    let h = mesh.h();
    let w = j as f64 * PI;
    let factor = c * SQRT_2 * (2.0 - 2.0 * (w * h).cos()) / (w * w * h);
    for (i, o) in out.iter_mut().enumerate() {
        *o += factor * (w * mesh.node(i + 1)).sin();
    }
}

/// Load vector `b_i = ∫ v φ_i` of a spectral field.
pub fn spectral_load(mesh: &FemMesh, coeffs: &[f64]) -> Vec<f64> {
    let mut b = vec![0.0; mesh.n_nodes()];
    for (i, &c) in coeffs.iter().enumerate() {
        if c != 0.0 {
            add_mode_load(mesh, i + 1, c, &mut b);
        }
    }
    b
}

/// Nodal interpolant of a spectral field.
pub fn interpolate_spectral(mesh: &FemMesh, coeffs: &[f64]) -> FemField {
    let nodal = (1..=mesh.n_nodes())
        .map(|i| {
            let x = mesh.node(i);
            coeffs
                .iter()
                .enumerate()
                .map(|(j, c)| c * eigenfunction(j + 1, x))
                .sum()
        })
        .collect();
    FemField { mesh: *mesh, nodal }
}

/// L² projection of a spectral field with exact per-mode loads.
pub fn project_l2(v: &SpectralField, mesh: &FemMesh) -> FemField {
    project_load(mesh, spectral_load(mesh, v.coeffs()))
}

fn project_load(mesh: &FemMesh, mut b: Vec<f64>) -> FemField {
    Tridiagonal::mass(mesh).factor().solve_in_place(&mut b);
    FemField {
        mesh: *mesh,
        nodal: b,
    }
}

/// Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussRule {
    points: Vec<(f64, f64)>,
}

impl GaussRule {
    pub fn new(n: usize) -> Result<Self> {
        let points = match n {
            1 => vec![(0.0, 2.0)],
            2 => {
                let a = 1.0 / 3f64.sqrt();
                vec![(-a, 1.0), (a, 1.0)]
            }
            3 => {
                let a = 0.6f64.sqrt();
                vec![(-a, 5.0 / 9.0), (0.0, 8.0 / 9.0), (a, 5.0 / 9.0)]
            }
            4 => {
                let (a, wa) = (0.3399810435848563, 0.6521451548625461);
                let (b, wb) = (0.8611363115940526, 0.3478548451374538);
                vec![(-b, wb), (-a, wa), (a, wa), (b, wb)]
            }
            5 => {
                let (a, wa) = (0.5384693101056831, 0.4786286704993665);
                let (b, wb) = (0.906179845938664, 0.2369268850561891);
                vec![
                    (-b, wb),
                    (-a, wa),
                    (0.0, 0.5688888888888889),
                    (a, wa),
                    (b, wb),
                ]
            }
            _ => {
                return Err(invalid(format!(
                    "Gauss rule with {n} points is not provided (1..=5)"
                )))
            }
        };
        Ok(GaussRule { points })
    }

    /// Highest polynomial degree integrated exactly.
    pub fn degree(&self) -> usize {
        2 * self.points.len() - 1
    }
}

/// L² projection of a callable, loads by Gauss quadrature on each cell.
pub fn project_l2_fn(f: impl Fn(f64) -> f64, mesh: &FemMesh, rule: &GaussRule) -> FemField {
    let (n, h) = (mesh.n_cells(), mesh.h());
    let mut b = vec![0.0; mesh.n_nodes()];
    for c in 0..n {
        let a = c as f64 * h;
        for &(x, w) in &rule.points {
            let xi = a + 0.5 * h * (x + 1.0);
            let fw = f(xi) * w * 0.5 * h;
            let right = (xi - a) / h;
            if c >= 1 {
                b[c - 1] += fw * (1.0 - right);
            }
            if c < n - 1 {
                b[c] += fw * right;
            }
        }
    }
    project_load(mesh, b)
}

/// Eigenvalue `j` of the pencil `(S_h, M_h)`:
/// `λ_{h,j} = (6/h²)(1 - cos jπh)/(2 + cos jπh)`, eigenvector `sin(jπξ_i)`.
pub fn pencil_eigenvalue(mesh: &FemMesh, j: usize) -> f64 {
    let h = mesh.h();
    let c = (j as f64 * PI * h).cos();
    6.0 / (h * h) * (1.0 - c) / (2.0 + c)
}

/// `S_{h,k}` on one mesh, factorized once and shared read-only.
#[derive(Debug, Clone)]
pub struct FemStepper {
    mesh: FemMesh,
    k: f64,
    mass: Tridiagonal,
    factor: TridiagonalFactor,
}

impl FemStepper {
    pub fn new(mesh: FemMesh, k: f64) -> Result<Self> {
        if !(k > 0.0) {
            return Err(invalid(format!("time step must be positive, got {k}")));
        }
        let mass = Tridiagonal::mass(&mesh);
        let factor = mass.add_scaled(k, &Tridiagonal::stiffness(&mesh)).factor();
        Ok(FemStepper {
            mesh,
            k,
            mass,
            factor,
        })
    }

    pub fn mesh(&self) -> &FemMesh {
        &self.mesh
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn mass(&self) -> &Tridiagonal {
        &self.mass
    }

    /// `out = (M + kS)^{-1} (M v + load)`.
    pub fn solve(&self, v: &[f64], load: Option<&[f64]>, out: &mut [f64]) {
        self.mass.apply(v, out);
        if let Some(b) = load {
            out.iter_mut().zip(b).for_each(|(o, b)| *o += b);
        }
        self.factor.solve_in_place(out);
    }

    pub fn apply(&self, v: &FemField) -> Result<FemField> {
        if v.mesh != self.mesh {
            return Err(Error::MeshMismatch {
                expected: self.mesh.n_cells(),
                got: v.mesh.n_cells(),
            });
        }
        let mut out = vec![0.0; v.nodal.len()];
        self.solve(&v.nodal, None, &mut out);
        Ok(FemField {
            mesh: self.mesh,
            nodal: out,
        })
    }
}

/// `max_v ‖(S^m_{h,k} P_h - I_h S(t_m)) A^{ρ/2} v‖ / ‖v‖` over the probes.
///
/// The exact semigroup acts spectrally and is moved to the mesh by nodal
/// interpolation; the difference is measured in L². `σ` only fixes the
/// admissible `ρ` range of the estimate being diagnosed.
pub fn error_operator_norm(
    mesh: &FemMesh,
    k: f64,
    m: usize,
    rho: f64,
    sigma: f64,
    probes: &[SpectralField],
) -> Result<f64> {
    if !(0.0..=2.0).contains(&sigma) {
        return Err(invalid(format!("σ = {sigma} outside [0, 2]")));
    }
    if rho < -sigma || rho > 1f64.min(2.0 - sigma) {
        return Err(invalid(format!(
            "ρ = {rho} outside [-σ, min(1, 2-σ)] for σ = {sigma}"
        )));
    }
    if m < 1 {
        return Err(invalid("error operator needs m ≥ 1"));
    }
    let stepper = FemStepper::new(*mesh, k)?;
    let t = m as f64 * k;
    let mut worst: f64 = 0.0;
    let mut next = vec![0.0; mesh.n_nodes()];
    for v in probes {
        let norm = v.norm();
        if norm == 0.0 {
            continue;
        }
        let w = v.apply_fractional_power(rho);
        let mut u = project_l2(&w, mesh).nodal;
        for _ in 0..m {
            stepper.solve(&u, None, &mut next);
            std::mem::swap(&mut u, &mut next);
        }
        let exact = interpolate_spectral(mesh, w.apply_semigroup(t)?.coeffs());
        let diff: Vec<f64> = u.iter().zip(&exact.nodal).map(|(a, b)| a - b).collect();
        let err = stepper.mass().quadratic_form(&diff).max(0.0).sqrt();
        worst = worst.max(err / norm);
    }
    Ok(worst)
}

/// `max_{j, 1≤m≤m_max} (1 + kλ_{h,j})^{-m} (λ_{h,j} t_m)^{ρ/2}`.
pub fn discrete_smoothing_constant(mesh: &FemMesh, k: f64, m_max: usize, rho: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 1..=mesh.n_nodes() {
        let l = pencil_eigenvalue(mesh, j);
        let r = 1.0 / (1.0 + k * l);
        let mut p = 1.0;
        for m in 1..=m_max {
            p *= r;
            worst = worst.max(p * (l * m as f64 * k).powf(rho / 2.0));
        }
    }
    worst
}
