//! Exact diagonalization of one Hamiltonian realization and the normalized
//! Duhamel expectations built on it.
//!
//! With `λ_m = −β(E_m − E_0)` the k-point Duhamel expectation is
//!
//! ```text
//! (A_1 ⋯ A_k)_D = (1/Z) Σ_{σ ∈ S_{k−1}} Σ_{i_1..i_k} exp[λ_{i_1},…,λ_{i_k}]
//!                 · A_1[i_1 i_2] A_{σ2}[i_2 i_3] ⋯ A_{σk}[i_k i_1]
//! ```
//!
//! in the energy eigenbasis, where `exp[…]` is a divided difference. This is
//! `β^{−k} Z^{−1} ∂^k Z / ∂x_1⋯∂x_k` for `Z(x) = Tr exp β(−H + Σ x_i A_i)`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::divdiff::{exp_dd2, exp_dd3, exp_divdiff};
use crate::error::{Error, Result};
use crate::pauli::{hermitian_deviation, CMatrix, SpinOperator, C64};

pub const MAX_DUHAMEL_ORDER: usize = 4;
/// Dimension caps for the dense k-point sums.
pub const DIM_CAP_K3: usize = 1 << 8;
pub const DIM_CAP_K4: usize = 1 << 6;
/// Largest dimension for which the 3-point table is cached.
const F3_TABLE_MAX_DIM: usize = 128;
const IMAG_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DuhamelMethod {
    Spectral,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DuhamelResult {
    pub value: f64,
    pub order: usize,
    pub method: DuhamelMethod,
}

/// Eigen-decomposition of `H` at inverse temperature `β`.
#[derive(Debug)]
pub struct SpectralData {
    pub beta: f64,
    /// Ascending.
    pub energies: Vec<f64>,
    /// Columns are eigenvectors.
    pub eigenvectors: CMatrix,
    /// `e^{−β(E_m − E_0)}`
    pub weights: Vec<f64>,
    pub z_shifted: f64,
    lambdas: Vec<f64>,
    real: bool,
    f2: OnceLock<Vec<f64>>,
    f3: OnceLock<Vec<f64>>,
}

impl Clone for SpectralData {
    fn clone(&self) -> Self {
        Self {
            beta: self.beta,
            energies: self.energies.clone(),
            eigenvectors: self.eigenvectors.clone(),
            weights: self.weights.clone(),
            z_shifted: self.z_shifted,
            lambdas: self.lambdas.clone(),
            real: self.real,
            f2: OnceLock::new(),
            f3: OnceLock::new(),
        }
    }
}

fn is_real(m: &CMatrix) -> bool {
    m.iter().all(|z| z.im == 0.0)
}

fn check_hermitian(m: &CMatrix) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Dimension { expected: m.nrows(), got: m.ncols() });
    }
    let scale = m.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let dev = hermitian_deviation(m);
    if dev > 1e-10 * scale {
        return Err(Error::NotHermitian(dev));
    }
    Ok(())
}

/// Diagonalize a Hermitian matrix. Real symmetric input takes a real solver
/// and yields real eigenvectors.
pub fn eigendecompose(h: &CMatrix, beta: f64) -> Result<SpectralData> {
    check_hermitian(h)?;
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Domain(format!("β must be finite and ≥ 0, got {beta}")));
    }
    let n = h.nrows();
    let real = is_real(h);
    let (vals, vecs): (Vec<f64>, CMatrix) = if real {
        let hr = DMatrix::from_fn(n, n, |i, j| 0.5 * (h[(i, j)].re + h[(j, i)].re));
        let eig = SymmetricEigen::try_new(hr, f64::EPSILON, 0).ok_or(Error::Convergence)?;
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors.map(|x| C64::new(x, 0.0)))
    } else {
        let hs = (h + h.adjoint()) * C64::new(0.5, 0.0);
        let eig = SymmetricEigen::try_new(hs, f64::EPSILON, 0).ok_or(Error::Convergence)?;
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
    let energies: Vec<f64> = order.iter().map(|&i| vals[i]).collect();
    let eigenvectors = CMatrix::from_fn(n, n, |r, c| vecs[(r, order[c])]);
    Ok(SpectralData::from_parts(beta, energies, eigenvectors, real))
}

impl SpectralData {
    fn from_parts(beta: f64, energies: Vec<f64>, eigenvectors: CMatrix, real: bool) -> Self {
        let e0 = energies[0];
        let lambdas: Vec<f64> = energies.iter().map(|&e| -beta * (e - e0)).collect();
        let weights: Vec<f64> = lambdas.iter().map(|l| l.exp()).collect();
        let z_shifted = weights.iter().sum();
        Self {
            beta,
            energies,
            eigenvectors,
            weights,
            z_shifted,
            lambdas,
            real,
            f2: OnceLock::new(),
            f3: OnceLock::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn ground_energy(&self) -> f64 {
        self.energies[0]
    }

    /// `λ_m = −β(E_m − E_0)`
    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// Whether the eigenvectors are real (real symmetric `H`).
    pub fn is_real(&self) -> bool {
        self.real
    }

    /// `log Z = log Z_shifted − β E_0`
    pub fn log_z(&self) -> f64 {
        self.z_shifted.ln() - self.beta * self.energies[0]
    }

    /// `U† O U`
    pub fn to_eigenbasis(&self, op: &CMatrix) -> CMatrix {
        let u = &self.eigenvectors;
        u.adjoint() * (op * u)
    }

    /// `U† σ U`, using the signed-permutation structure for `σ U`.
    pub fn spin_to_eigenbasis(&self, op: &SpinOperator) -> CMatrix {
        let u = &self.eigenvectors;
        let n = self.dim();
        let mut ou = CMatrix::zeros(n, n);
        for c in 0..n {
            let (r, val) = op.column(c);
            for m in 0..n {
                ou[(r, m)] += val * u[(c, m)];
            }
        }
        u.adjoint() * ou
    }

    /// Gibbs expectation of an operator already in the eigenbasis.
    pub fn expect_eig(&self, a: &CMatrix) -> f64 {
        let s: f64 = (0..self.dim()).map(|m| self.weights[m] * a[(m, m)].re).sum();
        s / self.z_shifted
    }

    /// `exp[λ_i, λ_j]`, row-major `dim × dim`.
    pub fn f2_table(&self) -> &[f64] {
        self.f2.get_or_init(|| {
            let n = self.dim();
            let l = &self.lambdas;
            let mut t = vec![0.0; n * n];
            for i in 0..n {
                for j in i..n {
                    let v = exp_dd2(l[i], l[j]);
                    t[i * n + j] = v;
                    t[j * n + i] = v;
                }
            }
            t
        })
    }

    /// `exp[λ_i, λ_j, λ_k]`, row-major `dim³`; `None` above the cache limit.
    pub fn f3_table(&self) -> Option<&[f64]> {
        let n = self.dim();
        if n > F3_TABLE_MAX_DIM {
            return None;
        }
        Some(self.f3.get_or_init(|| {
            let l = &self.lambdas;
            let mut t = vec![0.0; n * n * n];
            for i in 0..n {
                for j in i..n {
                    for k in j..n {
                        let v = exp_dd3(l[i], l[j], l[k]);
                        for (a, b, c) in [(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)] {
                            t[(a * n + b) * n + c] = v;
                        }
                    }
                }
            }
            t
        }))
    }

    #[inline]
    pub(crate) fn f3(&self, i: usize, j: usize, k: usize) -> f64 {
        match self.f3_table() {
            Some(t) => {
                let n = self.dim();
                t[(i * n + j) * n + k]
            }
            None => exp_dd3(self.lambdas[i], self.lambdas[j], self.lambdas[k]),
        }
    }
}

/// Gibbs expectation `Tr(O e^{−βH}) / Z` of an operator in the computational
/// basis.
pub fn gibbs_expect(sd: &SpectralData, op: &CMatrix) -> Result<f64> {
    if op.nrows() != sd.dim() || op.ncols() != sd.dim() {
        return Err(Error::Dimension { expected: sd.dim(), got: op.nrows() });
    }
    let u = &sd.eigenvectors;
    let ou = op * u;
    let mut s = 0.0;
    for m in 0..sd.dim() {
        let d: C64 = u.column(m).iter().zip(ou.column(m).iter()).map(|(a, b)| a.conj() * b).sum();
        s += sd.weights[m] * d.re;
    }
    Ok(s / sd.z_shifted)
}

/// `ψ = log Z / (volume · β)`
pub fn log_pressure(sd: &SpectralData, volume: usize) -> Result<f64> {
    if sd.beta <= 0.0 {
        return Err(Error::Domain("log pressure needs β > 0".into()));
    }
    if volume == 0 {
        return Err(Error::Domain("volume must be ≥ 1".into()));
    }
    Ok(sd.log_z() / (volume as f64 * sd.beta))
}

fn order_check(k: usize, dim: usize) -> Result<()> {
    if k == 0 || k > MAX_DUHAMEL_ORDER {
        return Err(Error::Order { order: k, max: MAX_DUHAMEL_ORDER });
    }
    let cap = match k {
        3 => DIM_CAP_K3,
        4 => DIM_CAP_K4,
        _ => usize::MAX,
    };
    if dim > cap {
        return Err(Error::Size { what: "dimension for this Duhamel order", value: dim, cap });
    }
    Ok(())
}

/// Normalized Duhamel expectation of operators in the computational basis.
pub fn duhamel(sd: &SpectralData, ops: &[&CMatrix]) -> Result<DuhamelResult> {
    order_check(ops.len(), sd.dim())?;
    for o in ops {
        if o.nrows() != sd.dim() {
            return Err(Error::Dimension { expected: sd.dim(), got: o.nrows() });
        }
        check_hermitian(o)?;
    }
    let eig: Vec<CMatrix> = ops.iter().map(|o| sd.to_eigenbasis(o)).collect();
    let refs: Vec<&CMatrix> = eig.iter().collect();
    let v = duhamel_eig(sd, &refs)?;
    let scale = 1.0f64.max(v.re.abs());
    if v.im.abs() > IMAG_TOL * scale {
        return Err(Error::NonReal(v.im));
    }
    Ok(DuhamelResult { value: v.re, order: ops.len(), method: DuhamelMethod::Spectral })
}

/// Duhamel expectation for operators given in the eigenbasis; returns the
/// raw complex sum.
pub fn duhamel_eig(sd: &SpectralData, ops: &[&CMatrix]) -> Result<C64> {
    let n = sd.dim();
    order_check(ops.len(), n)?;
    let w = &sd.weights;
    let l = sd.lambdas();
    let zero = C64::new(0.0, 0.0);
    let s = match ops {
        [a] => (0..n).map(|i| a[(i, i)] * w[i]).sum::<C64>(),
        [a, b] => {
            let f2 = sd.f2_table();
            let mut s = zero;
            for j in 0..n {
                for i in 0..n {
                    s += a[(i, j)] * b[(j, i)] * f2[i * n + j];
                }
            }
            s
        }
        [a, b, c] => {
            let mut s = zero;
            for i in 0..n {
                for j in 0..n {
                    let aij = a[(i, j)];
                    for k in 0..n {
                        let t = b[(j, k)] * c[(k, i)] + c[(j, k)] * b[(k, i)];
                        s += aij * t * sd.f3(i, j, k);
                    }
                }
            }
            s
        }
        [a, b, c, d] => {
            let perms: [[&CMatrix; 3]; 6] =
                [[b, c, d], [b, d, c], [c, b, d], [c, d, b], [d, b, c], [d, c, b]];
            let mut s = zero;
            for i in 0..n {
                for j in 0..n {
                    let aij = a[(i, j)];
                    for k in 0..n {
                        for m in 0..n {
                            let mut t = zero;
                            for [p, q, r] in &perms {
                                t += p[(j, k)] * q[(k, m)] * r[(m, i)];
                            }
                            s += aij * t * exp_divdiff(&[l[i], l[j], l[k], l[m]]);
                        }
                    }
                }
            }
            s
        }
        _ => unreachable!(),
    };
    Ok(s / sd.z_shifted)
}

/// `log Tr exp(M)` for Hermitian `M`, plus the shift used.
fn log_trace_exp(m: &CMatrix) -> Result<f64> {
    let sd = eigendecompose(&(-m), 1.0)?;
    Ok(sd.log_z())
}

/// `Z(x)/Z(0)` via log-traces.
fn z_ratio(h: &CMatrix, beta: f64, ops: &[&CMatrix], x: &[f64], log_z0: f64) -> Result<f64> {
    let mut m = h * C64::new(-beta, 0.0);
    for (o, &xi) in ops.iter().zip(x) {
        m += *o * C64::new(beta * xi, 0.0);
    }
    Ok((log_trace_exp(&m)? - log_z0).exp())
}

fn mixed_central_difference(h: &CMatrix, beta: f64, ops: &[&CMatrix], step: f64, log_z0: f64) -> Result<f64> {
    let k = ops.len();
    let mut acc = 0.0;
    for bits in 0..(1usize << k) {
        let x: Vec<f64> = (0..k).map(|i| if bits >> i & 1 == 1 { step } else { -step }).collect();
        let sign = if (k - bits.count_ones() as usize) % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign * z_ratio(h, beta, ops, &x, log_z0)?;
    }
    Ok(acc / (2.0 * step).powi(k as i32) / beta.powi(k as i32))
}

/// Finite-difference oracle: mixed central differences of
/// `Z(x) = Tr exp β(−H + Σ x_i O_i)`, divided by `β^k Z`. Steps `h` and
/// `2h` are combined by Richardson extrapolation.
pub fn duhamel_fd_oracle(h: &CMatrix, beta: f64, ops: &[&CMatrix], step: f64) -> Result<DuhamelResult> {
    let k = ops.len();
    if k == 0 || k > MAX_DUHAMEL_ORDER {
        return Err(Error::Order { order: k, max: MAX_DUHAMEL_ORDER });
    }
    if !(step > 0.0 && step <= 1e-2) {
        return Err(Error::Argument(format!("finite-difference step {step} outside (0, 1e-2]")));
    }
    if beta <= 0.0 {
        return Err(Error::Domain("finite-difference oracle needs β > 0".into()));
    }
    check_hermitian(h)?;
    for o in ops {
        check_hermitian(o)?;
        if o.nrows() != h.nrows() {
            return Err(Error::Dimension { expected: h.nrows(), got: o.nrows() });
        }
    }
    let log_z0 = log_trace_exp(&(h * C64::new(-beta, 0.0)))?;
    let d1 = mixed_central_difference(h, beta, ops, step, log_z0)?;
    let d2 = mixed_central_difference(h, beta, ops, 2.0 * step, log_z0)?;
    let value = (4.0 * d1 - d2) / 3.0;
    Ok(DuhamelResult { value, order: k, method: DuhamelMethod::FiniteDifference })
}

/// Diagonal matrix helper used in tests and examples.
pub fn diagonal(values: &[f64]) -> CMatrix {
    CMatrix::from_diagonal(&DVector::from_iterator(values.len(), values.iter().map(|&v| C64::new(v, 0.0))))
}
