//! Discrete fractional Fourier transform.
//!
//! The order-`p` kernel is built from the eigenvectors of the symmetric
//! matrix that commutes with the unitary DFT (the discrete Hermite-Gaussians):
//!
//! ```text
//! K_p[m, n] = sum_k u_k[m] * exp(-j * pi/2 * p * k) * u_k[n]
//! ```
//!
//! where `k` runs over the Hermite index assigned to each eigenvector. For
//! even lengths the index set is `0..=N-2` plus `N`; for odd lengths it is
//! `0..N`. With this assignment `K_1` is the unitary DFT and the family
//! satisfies `K_a K_b = K_{a+b}` with period 4.

use std::collections::HashMap;
use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2};
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{ComplexVolume3D, Dims, Spacing, Volume3D};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Below this modulus the phase of a coefficient is taken to be 1.
pub const PHASE_FLOOR: f64 = 1e-300;

/// Fractional order, stored as its representative in `[0, 4)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct FrftOrder(f64);

impl FrftOrder {
    pub fn new(p: f64) -> Self {
        let c = p.rem_euclid(4.0);
        // rem_euclid can round up to the modulus for tiny negative inputs
        Self(if c >= 4.0 { 0.0 } else { c })
    }

    /// Canonical order in `[0, 4)`.
    pub fn p(self) -> f64 {
        self.0
    }

    /// Rotation angle `p * pi / 2` of the canonical order.
    pub fn angle(self) -> f64 {
        self.0 * FRAC_PI_2
    }

    pub fn inverse(self) -> Self {
        Self::new(-self.0)
    }

    pub fn is_identity(self) -> bool {
        self.0 == 0.0
    }

    fn key(self) -> u64 {
        self.0.to_bits()
    }
}

impl From<f64> for FrftOrder {
    fn from(p: f64) -> Self {
        Self::new(p)
    }
}

/// Dense row-major `n x n` complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    n: usize,
    data: Vec<Complex64>,
}

impl Kernel {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, m: usize, k: usize) -> Complex64 {
        self.data[m * self.n + k]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn matmul(&self, other: &Kernel) -> Kernel {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut data = vec![ZERO; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                for j in 0..n {
                    data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        Kernel { n, data }
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..self.n)
            .map(|m| {
                let row = &self.data[m * self.n..(m + 1) * self.n];
                row.iter().zip(x).fold(ZERO, |acc, (k, v)| acc + k * v)
            })
            .collect()
    }
}

/// Discrete Hermite-Gaussian eigenbasis for one axis length, with a cache of
/// order-`p` kernels.
#[derive(Debug)]
pub struct FrftPlan {
    n: usize,
    /// Row-major: `basis[m * n + c]` is entry `m` of column `c`.
    basis: Vec<f64>,
    eig_indices: Vec<usize>,
    kernel_cache: Mutex<HashMap<u64, Arc<Kernel>>>,
}

/// Symmetric matrix commuting with the unitary DFT: `2cos(2 pi m / N)` on the
/// diagonal plus the circulant nearest-neighbour couplings.
pub fn commuting_matrix(n: usize) -> DMatrix<f64> {
    let mut s = DMatrix::<f64>::zeros(n, n);
    for m in 0..n {
        s[(m, m)] = 2.0 * (2.0 * std::f64::consts::PI * m as f64 / n as f64).cos();
        s[(m, (m + 1) % n)] += 1.0;
        s[(m, (m + n - 1) % n)] += 1.0;
    }
    s
}

/// Sign changes of a column after centring index 0 (fftshift), skipping
/// numerically zero entries.
pub fn centered_sign_changes(col: &[f64]) -> usize {
    let n = col.len();
    let scale = col.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-9 * scale;
    let mut changes = 0;
    let mut prev = 0.0f64;
    for i in 0..n {
        let v = col[(i + n - n / 2) % n];
        if v.abs() <= tol {
            continue;
        }
        if prev != 0.0 && (prev > 0.0) != (v > 0.0) {
            changes += 1;
        }
        prev = v;
    }
    changes
}

/// Eigenvectors of `s` restricted to the span of `sub` (orthonormal columns),
/// returned in the full space and sorted by descending eigenvalue.
fn subspace_eigvecs(s: &DMatrix<f64>, sub: &DMatrix<f64>) -> Result<Vec<Vec<f64>>> {
    if sub.ncols() == 0 {
        return Ok(Vec::new());
    }
    let n = s.nrows();
    let reduced = sub.transpose() * s * sub;
    let eig = SymmetricEigen::try_new(reduced, 1e-15, 10_000).ok_or(Error::EigenFailure(n))?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    Ok(order
        .into_iter()
        .map(|c| {
            let full = sub * eig.eigenvectors.column(c);
            let mut v: Vec<f64> = full.iter().copied().collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
                if *first < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
            }
            v
        })
        .collect())
}

impl FrftPlan {
    pub fn build(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::AxisTooShort(n));
        }
        let s = commuting_matrix(n);

        // Orthonormal bases of the even (x[m] = x[-m]) and odd subspaces.
        let half = (n - 1) / 2;
        let n_even = n / 2 + 1;
        let mut even = DMatrix::<f64>::zeros(n, n_even);
        let mut odd = DMatrix::<f64>::zeros(n, half);
        even[(0, 0)] = 1.0;
        for k in 1..=half {
            even[(k, k)] = FRAC_1_SQRT_2;
            even[(n - k, k)] = FRAC_1_SQRT_2;
            odd[(k, k - 1)] = FRAC_1_SQRT_2;
            odd[(n - k, k - 1)] = -FRAC_1_SQRT_2;
        }
        if n % 2 == 0 {
            even[(n / 2, n_even - 1)] = 1.0;
        }

        let even_vecs = subspace_eigvecs(&s, &even)?;
        let odd_vecs = subspace_eigvecs(&s, &odd)?;

        // Hermite index 2i for the i-th even vector, 2i+1 for the i-th odd one.
        // For even n the top even vector lands on index n and n-1 is skipped.
        let mut cols: Vec<(usize, Vec<f64>)> = even_vecs
            .into_iter()
            .enumerate()
            .map(|(i, v)| (2 * i, v))
            .chain(odd_vecs.into_iter().enumerate().map(|(i, v)| (2 * i + 1, v)))
            .collect();
        cols.sort_by_key(|(k, _)| *k);

        let mut basis = vec![0.0; n * n];
        for (c, (_, v)) in cols.iter().enumerate() {
            for m in 0..n {
                basis[m * n + c] = v[m];
            }
        }
        let eig_indices = cols.iter().map(|(k, _)| *k).collect();
        Ok(Self {
            n,
            basis,
            eig_indices,
            kernel_cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Hermite index of each basis column.
    pub fn eig_indices(&self) -> &[usize] {
        &self.eig_indices
    }

    pub fn basis_entry(&self, m: usize, col: usize) -> f64 {
        self.basis[m * self.n + col]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n).map(|m| self.basis_entry(m, col)).collect()
    }

    /// Max-abs deviation of `basis^T basis` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let n = self.n;
        let mut worst = 0.0f64;
        for a in 0..n {
            for b in 0..n {
                let dot: f64 = (0..n)
                    .map(|m| self.basis[m * n + a] * self.basis[m * n + b])
                    .sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    /// Order-`p` kernel, computed once per canonical order.
    pub fn kernel(&self, p: FrftOrder) -> Arc<Kernel> {
        if let Some(k) = self.kernel_cache.lock().unwrap().get(&p.key()) {
            return Arc::clone(k);
        }
        let computed = Arc::new(self.compute_kernel(p));
        let mut cache = self.kernel_cache.lock().unwrap();
        Arc::clone(cache.entry(p.key()).or_insert(computed))
    }

    fn compute_kernel(&self, p: FrftOrder) -> Kernel {
        let n = self.n;
        if p.is_identity() {
            let mut data = vec![ZERO; n * n];
            (0..n).for_each(|i| data[i * n + i] = ONE);
            return Kernel { n, data };
        }
        // (p * k) is reduced mod 4 before scaling so large indices keep full
        // phase accuracy.
        let phases: Vec<Complex64> = self
            .eig_indices
            .iter()
            .map(|&k| {
                let turns = (p.p() * k as f64).rem_euclid(4.0);
                Complex64::from_polar(1.0, -FRAC_PI_2 * turns)
            })
            .collect();
        let mut data = vec![ZERO; n * n];
        for m in 0..n {
            let row_m = &self.basis[m * n..(m + 1) * n];
            for j in m..n {
                let row_j = &self.basis[j * n..(j + 1) * n];
                let mut acc = ZERO;
                for c in 0..n {
                    acc += phases[c] * (row_m[c] * row_j[c]);
                }
                data[m * n + j] = acc;
                data[j * n + m] = acc;
            }
        }
        Kernel { n, data }
    }

    pub fn cached_orders(&self) -> usize {
        self.kernel_cache.lock().unwrap().len()
    }
}

/// Process-wide plan cache keyed by axis length.
pub fn plan_for(n: usize) -> Result<Arc<FrftPlan>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<FrftPlan>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(p) = cache.lock().unwrap().get(&n) {
        return Ok(Arc::clone(p));
    }
    let plan = Arc::new(FrftPlan::build(n)?);
    let mut guard = cache.lock().unwrap();
    Ok(Arc::clone(guard.entry(n).or_insert(plan)))
}

pub fn frft_1d(plan: &FrftPlan, x: &[Complex64], p: FrftOrder) -> Result<Vec<Complex64>> {
    if x.len() != plan.n {
        return Err(Error::PlanLength {
            expected: plan.n,
            actual: x.len(),
        });
    }
    Ok(plan.kernel(p).apply(x))
}

/// Per-axis plans for a grid. Length-1 axes carry no plan: every order acts
/// as the identity there.
#[derive(Debug, Clone)]
pub struct Frft3dPlans {
    dims: Dims,
    axes: [Option<Arc<FrftPlan>>; 3],
}

impl Frft3dPlans {
    pub fn for_dims(dims: Dims) -> Result<Self> {
        let axis = |n: usize| -> Result<Option<Arc<FrftPlan>>> {
            match n {
                0 => Err(Error::InvalidDims(dims)),
                1 => Ok(None),
                n => plan_for(n).map(Some),
            }
        };
        Ok(Self {
            dims,
            axes: [axis(dims[0])?, axis(dims[1])?, axis(dims[2])?],
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn axis(&self, axis: usize) -> Option<&Arc<FrftPlan>> {
        self.axes[axis].as_ref()
    }
}

/// Applies a 1D kernel along `axis` of a row-major grid.
pub(crate) fn apply_along_axis(
    data: &[Complex64],
    dims: Dims,
    axis: usize,
    kernel: &Kernel,
) -> Vec<Complex64> {
    let stride = match axis {
        0 => dims[1] * dims[2],
        1 => dims[2],
        _ => 1,
    };
    let n = dims[axis];
    debug_assert_eq!(kernel.n(), n);
    let mut out = vec![ZERO; data.len()];
    out.par_iter_mut().enumerate().for_each(|(i, o)| {
        let m = (i / stride) % n;
        let start = i - m * stride;
        let row = &kernel.data()[m * n..(m + 1) * n];
        let mut acc = ZERO;
        for (k, w) in row.iter().enumerate() {
            acc += w * data[start + k * stride];
        }
        *o = acc;
    });
    out
}

fn check_plans(dims: Dims, plans: &Frft3dPlans) -> Result<()> {
    if plans.dims != dims {
        return Err(Error::DimsMismatch(plans.dims, dims));
    }
    Ok(())
}

/// Separable 3D transform applying axes in the given order (indices into
/// `(z, y, x)`).
pub fn frft_3d_axes(
    v: &ComplexVolume3D,
    p: FrftOrder,
    plans: &Frft3dPlans,
    order: [usize; 3],
) -> Result<ComplexVolume3D> {
    check_plans(v.dims(), plans)?;
    let dims = v.dims();
    let mut data = v.data().to_vec();
    if !p.is_identity() {
        for axis in order {
            if let Some(plan) = plans.axis(axis) {
                data = apply_along_axis(&data, dims, axis, &plan.kernel(p));
            }
        }
    }
    ComplexVolume3D::new(dims, data)
}

/// Order-`p` transform along x, then y, then z.
pub fn frft_3d(v: &ComplexVolume3D, p: FrftOrder, plans: &Frft3dPlans) -> Result<ComplexVolume3D> {
    frft_3d_axes(v, p, plans, [2, 1, 0])
}

/// Inverse of [`frft_3d`]: the forward transform at order `-p`.
pub fn ifrft_3d(x: &ComplexVolume3D, p: FrftOrder, plans: &Frft3dPlans) -> Result<ComplexVolume3D> {
    frft_3d(x, p.inverse(), plans)
}

/// `A = log(1 + |X|)` and the unit-modulus phase `X / |X|` (1 where `X` vanishes).
pub fn log_magnitude(x: &ComplexVolume3D, spacing: Spacing) -> Result<(Volume3D, ComplexVolume3D)> {
    let (mag, phase): (Vec<f64>, Vec<Complex64>) = x
        .data()
        .iter()
        .map(|c| {
            let r = c.norm();
            let ph = if r < PHASE_FLOOR { ONE } else { c / r };
            (r.ln_1p(), ph)
        })
        .unzip();
    Ok((
        Volume3D::new(x.dims(), spacing, mag)?,
        ComplexVolume3D::new(x.dims(), phase)?,
    ))
}

/// `(exp(A) - 1) * phase`; rejects negative log-magnitudes.
pub fn inv_log_magnitude(a: &Volume3D, phase: &ComplexVolume3D) -> Result<ComplexVolume3D> {
    if a.dims() != phase.dims() {
        return Err(Error::DimsMismatch(a.dims(), phase.dims()));
    }
    if let Some((index, &value)) = a.data().iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::NegativeMagnitude { index, value });
    }
    let data = a
        .data()
        .iter()
        .zip(phase.data())
        .map(|(&m, &ph)| ph * m.exp_m1())
        .collect();
    ComplexVolume3D::new(a.dims(), data)
}

/// Unitary DFT matrix `exp(-2 pi j m n / N) / sqrt(N)`, used as a reference.
pub fn unitary_dft(n: usize) -> Kernel {
    let scale = 1.0 / (n as f64).sqrt();
    let mut data = Vec::with_capacity(n * n);
    for m in 0..n {
        for k in 0..n {
            let turns = ((m * k) % n) as f64 / n as f64;
            data.push(Complex64::from_polar(scale, -2.0 * std::f64::consts::PI * turns));
        }
    }
    Kernel { n, data }
}
