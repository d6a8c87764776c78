//! Exact SPDM dynamics of the linear (`g = 0`) chain.
//!
//! Without the nonlinearity the second moments `rho_{l,m} = <a_l^* a_m>`
//! close on themselves:
//!
//! ```text
//! d rho / dt = i (J/2) (rho K - K rho) - (Gamma rho + rho Gamma) / 2 + Q
//! ```
//!
//! with `K` the nearest-neighbour adjacency matrix, `Gamma = diag(gamma1, 0,
//! .., 0, gammaL)` and `Q = diag(D1, 0, .., 0, DL)`. The stationary state
//! solves a real linear system over the `L^2` independent real parameters of a
//! Hermitian matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{ChainParams, SpdmMatrix};
use crate::C64;

fn require_linear(params: &ChainParams) -> Result<()> {
    params.validate()?;
    if params.g != 0.0 {
        return Err(Error::Domain(format!(
            "the moment equations close only for g = 0 (got g = {})",
            params.g
        )));
    }
    Ok(())
}

fn edge_rates(params: &ChainParams) -> (Vec<f64>, Vec<f64>) {
    let n = params.length;
    let mut gamma = vec![0.0; n];
    let mut d = vec![0.0; n];
    gamma[0] += params.gamma1;
    gamma[n - 1] += params.gamma_l;
    d[0] += params.d1;
    d[n - 1] += params.d_l;
    (gamma, d)
}

/// Time derivative of `rho` for the linear chain, written entrywise so a
/// single evaluation costs `O(L^2)`.
fn derivative(rho: &DMatrix<C64>, hopping: f64, gamma: &[f64], d: &[f64], out: &mut DMatrix<C64>) {
    let n = rho.nrows();
    let ih = C64::new(0.0, 0.5 * hopping);
    for m in 0..n {
        for l in 0..n {
            let mut hop = C64::new(0.0, 0.0);
            if m + 1 < n {
                hop += rho[(l, m + 1)];
            }
            if m > 0 {
                hop += rho[(l, m - 1)];
            }
            if l + 1 < n {
                hop -= rho[(l + 1, m)];
            }
            if l > 0 {
                hop -= rho[(l - 1, m)];
            }
            let mut v = ih * hop - 0.5 * (gamma[l] + gamma[m]) * rho[(l, m)];
            if l == m {
                v += d[l];
            }
            out[(l, m)] = v;
        }
    }
}

/// The real-linear map `rho -> d rho / dt` restricted to Hermitian matrices.
///
/// Coordinates: `Re rho_{ll}` for every site, then `Re rho_{lm}` and
/// `Im rho_{lm}` for every `l < m`, in row-major order of the upper triangle.
#[derive(Debug, Clone)]
pub struct LinearSystemOperator {
    sites: usize,
    /// Homogeneous part, `L^2 x L^2`.
    pub matrix: DMatrix<f64>,
    /// Inhomogeneous source in the same coordinates.
    pub source: DVector<f64>,
}

impl LinearSystemOperator {
    pub fn new(params: &ChainParams) -> Result<Self> {
        require_linear(params)?;
        let n = params.length;
        let dim = n * n;
        let (gamma, d) = edge_rates(params);
        let zero_d = vec![0.0; n];
        let mut matrix = DMatrix::zeros(dim, dim);
        let mut basis = DMatrix::zeros(n, n);
        let mut image = DMatrix::zeros(n, n);
        for k in 0..dim {
            basis.fill(C64::new(0.0, 0.0));
            let mut unit = DVector::zeros(dim);
            unit[k] = 1.0;
            Self::unpack_into(n, &unit, &mut basis);
            derivative(&basis, params.hopping, &gamma, &zero_d, &mut image);
            matrix.set_column(k, &Self::pack(&image));
        }
        let mut q = DMatrix::zeros(n, n);
        for l in 0..n {
            q[(l, l)] = C64::new(d[l], 0.0);
        }
        Ok(LinearSystemOperator {
            sites: n,
            matrix,
            source: Self::pack(&q),
        })
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn dim(&self) -> usize {
        self.sites * self.sites
    }

    /// Hermitian matrix to real coordinates. Only the upper triangle is read.
    pub fn pack(rho: &DMatrix<C64>) -> DVector<f64> {
        let n = rho.nrows();
        let mut v = DVector::zeros(n * n);
        for l in 0..n {
            v[l] = rho[(l, l)].re;
        }
        let mut k = n;
        for l in 0..n {
            for m in l + 1..n {
                v[k] = rho[(l, m)].re;
                v[k + 1] = rho[(l, m)].im;
                k += 2;
            }
        }
        v
    }

    fn unpack_into(n: usize, v: &DVector<f64>, rho: &mut DMatrix<C64>) {
        for l in 0..n {
            rho[(l, l)] = C64::new(v[l], 0.0);
        }
        let mut k = n;
        for l in 0..n {
            for m in l + 1..n {
                let z = C64::new(v[k], v[k + 1]);
                rho[(l, m)] = z;
                rho[(m, l)] = z.conj();
                k += 2;
            }
        }
    }

    /// Real coordinates back to a Hermitian matrix.
    pub fn unpack(&self, v: &DVector<f64>) -> DMatrix<C64> {
        let mut rho = DMatrix::zeros(self.sites, self.sites);
        Self::unpack_into(self.sites, v, &mut rho);
        rho
    }

    /// Largest real part among the eigenvalues of the homogeneous part.
    /// Negative means every perturbation decays.
    pub fn spectral_abscissa(&self) -> f64 {
        self.matrix
            .complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Solves `matrix * x + source = 0`.
    pub fn stationary(&self) -> Result<DMatrix<C64>> {
        let lu = self.matrix.clone().lu();
        let x = lu
            .solve(&(-&self.source))
            .ok_or_else(|| Error::Singular("stationary moment system has no unique solution".into()))?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("stationary solve produced non-finite values".into()));
        }
        Ok(self.unpack(&x))
    }
}

/// Slowest relaxation time of the linear part of the dynamics, `-1 /
/// abscissa` of the moment equations.
///
/// The SPDM generator has eigenvalues `lambda_i + conj(lambda_j)` where
/// `lambda` are the eigenvalues of the single-particle matrix `i (J/2) K -
/// Gamma / 2`, so an `L x L` problem suffices. Edge-localized damping makes
/// this much longer than `1 / gamma` for long chains (it grows like `L^3`).
/// The nonlinearity is ignored.
pub fn relaxation_time(params: &ChainParams) -> Result<f64> {
    params.validate()?;
    let n = params.length;
    let (gamma, _) = edge_rates(params);
    // Real form [[B, -C], [C, B]] of A = B + iC has the spectrum of A and its
    // conjugate, so the real parts are preserved.
    let mut r = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for l in 0..n {
        r[(l, l)] = -0.5 * gamma[l];
        r[(n + l, n + l)] = -0.5 * gamma[l];
        if l + 1 < n {
            for (a, b) in [(l, l + 1), (l + 1, l)] {
                r[(n + a, b)] = 0.5 * params.hopping;
                r[(a, n + b)] = -0.5 * params.hopping;
            }
        }
    }
    let slowest = r
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if !(slowest < 0.0) {
        return Err(Error::Domain(format!(
            "the chain has an undamped mode (largest decay exponent {slowest:e})"
        )));
    }
    Ok(-0.5 / slowest)
}

/// Integrates the linear moment equations from `rho0` up to time `t` with
/// classical fourth-order Runge-Kutta.
pub fn spdm_evolution(params: &ChainParams, rho0: &SpdmMatrix, t: f64) -> Result<SpdmMatrix> {
    require_linear(params)?;
    let n = params.length;
    if rho0.len() != n {
        return Err(Error::Dimension {
            expected: n,
            found: rho0.len(),
        });
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "t",
            reason: format!("must be finite and non-negative, got {t}"),
        });
    }
    let (gamma, d) = edge_rates(params);
    let rate = params.hopping.max(params.gamma1).max(params.gamma_l);
    let max_dt = if rate > 0.0 { 0.01 / rate } else { 0.01 };
    let steps = (t / max_dt).ceil() as usize;
    let mut rho = rho0.entries.clone();
    if steps == 0 {
        return Ok(SpdmMatrix::exact(rho));
    }
    let h = t / steps as f64;
    let mut k1 = DMatrix::zeros(n, n);
    let mut k2 = DMatrix::zeros(n, n);
    let mut k3 = DMatrix::zeros(n, n);
    let mut k4 = DMatrix::zeros(n, n);
    let mut tmp = DMatrix::zeros(n, n);
    let f = |r: &DMatrix<C64>, out: &mut DMatrix<C64>| derivative(r, params.hopping, &gamma, &d, out);
    for _ in 0..steps {
        f(&rho, &mut k1);
        tmp.zip_zip_apply(&rho, &k1, |t, r, k| *t = r + k * (0.5 * h));
        f(&tmp, &mut k2);
        tmp.zip_zip_apply(&rho, &k2, |t, r, k| *t = r + k * (0.5 * h));
        f(&tmp, &mut k3);
        tmp.zip_zip_apply(&rho, &k3, |t, r, k| *t = r + k * h);
        f(&tmp, &mut k4);
        for i in 0..n * n {
            rho[i] += (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) * (h / 6.0);
        }
    }
    Ok(SpdmMatrix::exact(rho))
}

/// Stationary SPDM from a direct solve of the moment equations.
pub fn stationary_spdm(params: &ChainParams) -> Result<SpdmMatrix> {
    require_linear(params)?;
    if params.gamma1 <= 0.0 || params.gamma_l <= 0.0 {
        return Err(Error::Singular(format!(
            "both edge frictions must be positive for a stationary state (gamma1 = {}, gammaL = {})",
            params.gamma1, params.gamma_l
        )));
    }
    let op = LinearSystemOperator::new(params)?;
    Ok(SpdmMatrix::exact(op.stationary()?))
}

fn symmetric_gamma(params: &ChainParams) -> Result<f64> {
    let (a, b) = (params.gamma1, params.gamma_l);
    if a <= 0.0 || (a - b).abs() > 1e-12 * a.max(b) {
        return Err(Error::Domain(format!(
            "closed form needs gamma1 = gammaL > 0 (got {a} and {b})"
        )));
    }
    Ok(a)
}

/// Closed-form stationary current `J^2 gamma / (J^2 + gamma^2) * (D1 - DL) / (2 gamma)`
/// for equal edge frictions.
pub fn stationary_current_formula(params: &ChainParams) -> Result<f64> {
    let gamma = symmetric_gamma(params)?;
    let j2 = params.hopping * params.hopping;
    Ok(j2 * gamma / (j2 + gamma * gamma) * (params.d1 - params.d_l) / (2.0 * gamma))
}

/// Closed-form bulk action `(D1 + DL) / (2 gamma)` for equal edge frictions.
pub fn stationary_action_formula(params: &ChainParams) -> Result<f64> {
    let gamma = symmetric_gamma(params)?;
    Ok((params.d1 + params.d_l) / (2.0 * gamma))
}

/// Mean action of one linear damped oscillator:
/// `D/gamma + (I0 - D/gamma) e^{-gamma t}`, or `I0 + D t` without friction.
pub fn single_site_action_reference(i0: f64, d: f64, gamma: f64, t: f64) -> f64 {
    if gamma == 0.0 {
        i0 + d * t
    } else {
        let s = d / gamma;
        s + (i0 - s) * (-gamma * t).exp()
    }
}
