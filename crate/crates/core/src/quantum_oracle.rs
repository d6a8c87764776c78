//! Master-equation reference for one damped anharmonic oscillator.
//!
//! The density matrix lives in the Fock basis truncated at `n_max`. Every
//! term of the generator (the number-conserving Hamiltonian and the gain and
//! loss dissipators) maps the `k`-th superdiagonal `rho_{m, m+k}` onto itself,
//! so the matrix is stored band by band and only non-zero bands are evolved.
//! A state that starts diagonal in the Fock basis stays diagonal.
//!
//! The truncated ladder operator satisfies `A^dag A = diag(m)` and
//! `A A^dag = diag(m + 1)` except for a zero in the top corner, which keeps
//! the truncated generator exactly trace-preserving.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ensemble::{run_ensemble, EnsembleConfig};
use crate::error::{Error, Result};
use crate::langevin::IntegratorConfig;
use crate::model::{check_mapping, OscState, SingleSiteParams};
use crate::stats::Estimate;
use crate::C64;

/// Levels at the top of the basis that must stay (almost) empty.
pub const GUARD_LEVELS: usize = 5;
/// Largest population tolerated in the guard levels.
pub const GUARD_POPULATION: f64 = 1e-8;
/// Tail mass the default cutoff aims for below the guard levels.
const CUTOFF_TAIL: f64 = 1e-10;
/// Safety margin on the Gershgorin bound of the generator for RK4.
const STABILITY_FACTOR: f64 = 2.0;

/// How the reservoir coupling is written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MasterForm {
    /// Gain `gamma nbar D[A^dag]` plus loss `gamma (nbar + 1) D[A]`.
    Lindblad,
    /// Double-commutator diffusion with strength `D nbar / 2` plus loss
    /// `gamma D[A]`; `D` and `gamma` are independent.
    Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillatorQuantumParams {
    pub omega: f64,
    /// On-site interaction `U`.
    pub interaction: f64,
    pub nbar: f64,
    pub gamma: f64,
    /// Diffusion coefficient; ignored (taken equal to `gamma`) in the
    /// Lindblad form.
    pub d: f64,
    pub form: MasterForm,
}

impl Default for OscillatorQuantumParams {
    fn default() -> Self {
        OscillatorQuantumParams {
            omega: 1.0,
            interaction: 0.0,
            nbar: 10.0,
            gamma: 0.5,
            d: 0.5,
            form: MasterForm::Lindblad,
        }
    }
}

impl OscillatorQuantumParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("omega", self.omega), ("interaction", self.interaction)] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite, got {v}"),
                });
            }
        }
        for (name, v) in [("nbar", self.nbar), ("gamma", self.gamma), ("d", self.d)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite and >= 0, got {v}"),
                });
            }
        }
        Ok(())
    }

    /// Diffusion coefficient actually in effect.
    pub fn effective_d(&self) -> f64 {
        match self.form {
            MasterForm::Lindblad => self.gamma,
            MasterForm::Split => self.d,
        }
    }

    /// Classical nonlinearity `g = U nbar` of the matching Langevin model.
    pub fn classical_g(&self) -> f64 {
        self.interaction * self.nbar
    }

    fn energy(&self, m: usize) -> f64 {
        let m = m as f64;
        self.omega * m + 0.5 * self.interaction * m * m
    }
}

/// Hermitian density matrix in a truncated Fock basis, stored as its
/// superdiagonal bands: `bands[k][m] = rho_{m, m+k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FockDensityMatrix {
    cutoff: usize,
    bands: Vec<Vec<C64>>,
    pub time: f64,
}

impl FockDensityMatrix {
    /// `|n><n|` in a basis `0..=cutoff`.
    pub fn fock(n: usize, cutoff: usize) -> Result<Self> {
        if n > cutoff {
            return Err(Error::InvalidParameter {
                name: "n",
                reason: format!("Fock level {n} above cutoff {cutoff}"),
            });
        }
        let mut diag = vec![C64::new(0.0, 0.0); cutoff + 1];
        diag[n] = C64::new(1.0, 0.0);
        Ok(FockDensityMatrix {
            cutoff,
            bands: vec![diag],
            time: 0.0,
        })
    }

    pub fn ground(cutoff: usize) -> Self {
        Self::fock(0, cutoff).expect("level 0 is always inside the basis")
    }

    /// Builds from a dense Hermitian matrix with unit trace.
    pub fn from_dense(rho: &DMatrix<C64>) -> Result<Self> {
        let dim = rho.nrows();
        if dim == 0 || rho.ncols() != dim {
            return Err(Error::Dimension {
                expected: dim.max(1),
                found: rho.ncols(),
            });
        }
        let scale = rho.iter().map(|z| z.norm()).fold(1.0, f64::max);
        for i in 0..dim {
            for j in i..dim {
                if (rho[(i, j)] - rho[(j, i)].conj()).norm() > 1e-12 * scale {
                    return Err(Error::InvalidParameter {
                        name: "rho",
                        reason: format!("not Hermitian at ({i}, {j})"),
                    });
                }
            }
        }
        let mut bands: Vec<Vec<C64>> = (0..dim)
            .map(|k| (0..dim - k).map(|m| rho[(m, m + k)]).collect())
            .collect();
        for z in bands[0].iter_mut() {
            z.im = 0.0;
        }
        while bands.len() > 1 && bands.last().is_some_and(|b| b.iter().all(|z| *z == C64::new(0.0, 0.0))) {
            bands.pop();
        }
        let out = FockDensityMatrix {
            cutoff: dim - 1,
            bands,
            time: 0.0,
        };
        if (out.trace() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter {
                name: "rho",
                reason: format!("trace {} differs from 1", out.trace()),
            });
        }
        Ok(out)
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    /// Highest stored superdiagonal.
    pub fn bandwidth(&self) -> usize {
        self.bands.len() - 1
    }

    pub fn element(&self, m: usize, n: usize) -> C64 {
        let (lo, hi) = (m.min(n), m.max(n));
        let z = match self.bands.get(hi - lo) {
            Some(b) if hi <= self.cutoff => b[lo],
            _ => C64::new(0.0, 0.0),
        };
        if m <= n {
            z
        } else {
            z.conj()
        }
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let d = self.cutoff + 1;
        DMatrix::from_fn(d, d, |m, n| self.element(m, n))
    }

    pub fn populations(&self) -> Vec<f64> {
        self.bands[0].iter().map(|z| z.re).collect()
    }

    pub fn trace(&self) -> f64 {
        self.bands[0].iter().map(|z| z.re).sum()
    }

    /// Total population of the top [`GUARD_LEVELS`] levels.
    pub fn guard_population(&self) -> f64 {
        let start = (self.cutoff + 1).saturating_sub(GUARD_LEVELS);
        self.bands[0][start..].iter().map(|z| z.re).sum()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        self.bands[0].iter().map(|z| z.im.abs()).fold(0.0, f64::max)
    }

    /// Smallest eigenvalue (exact shortcut for diagonal states).
    pub fn min_eigenvalue(&self) -> f64 {
        let offdiag = self.bands[1..].iter().flatten().any(|z| z.norm() != 0.0);
        if !offdiag {
            return self.bands[0].iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        }
        self.to_dense()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// `N = Tr[A^dag A rho]`.
pub fn mean_number(rho: &FockDensityMatrix) -> f64 {
    rho.bands[0].iter().enumerate().map(|(m, z)| m as f64 * z.re).sum()
}

/// Steady occupation `nbar D / gamma`.
pub fn steady_number(d: f64, gamma: f64, nbar: f64) -> Result<f64> {
    if gamma <= 0.0 {
        return Err(Error::Domain(format!(
            "no steady state without friction (gamma = {gamma})"
        )));
    }
    Ok(nbar * d / gamma)
}

/// Basis size large enough that a near-thermal distribution with the largest
/// expected occupation leaves less than `1e-10` in the guard levels.
///
/// The expected occupation is the larger of the initial and the steady value,
/// or `N0 + nbar D t_final` without friction. The basis always extends at
/// least ten levels above the highest initially occupied one. Without gain
/// the basis only needs to hold the initial state.
pub fn default_cutoff(params: &OscillatorQuantumParams, rho0_top: usize, n0: f64, t_final: f64) -> usize {
    let d = params.effective_d();
    if d * params.nbar == 0.0 {
        // Loss alone never populates levels above the initial ones.
        return rho0_top + 10;
    }
    let target = if params.gamma > 0.0 {
        n0.max(params.nbar * d / params.gamma)
    } else {
        n0 + params.nbar * d * t_final.max(0.0)
    };
    let tail = if target > 0.0 {
        let ratio = target / (target + 1.0);
        (CUTOFF_TAIL.ln() / ratio.ln()).ceil() as usize
    } else {
        0
    };
    (tail + GUARD_LEVELS - 1).max(rho0_top + 10)
}

/// Generator coefficients, fixed for one parameter set and basis.
struct Generator<'a> {
    params: &'a OscillatorQuantumParams,
    cutoff: usize,
    sqrt: Vec<f64>,
}

impl<'a> Generator<'a> {
    fn new(params: &'a OscillatorQuantumParams, cutoff: usize) -> Self {
        Generator {
            params,
            cutoff,
            sqrt: (0..=cutoff + 1).map(|m| (m as f64).sqrt()).collect(),
        }
    }

    /// `A A^dag` diagonal.
    fn c(&self, m: usize) -> f64 {
        if m < self.cutoff {
            (m + 1) as f64
        } else {
            0.0
        }
    }

    /// Loss and gain rates in `alpha D[A] + beta D[A^dag]` form.
    fn lindblad_rates(&self) -> (f64, f64) {
        let p = self.params;
        (p.gamma * (p.nbar + 1.0), p.gamma * p.nbar)
    }

    /// `d/dt` of band `k`.
    fn apply(&self, k: usize, x: &[C64], out: &mut [C64]) {
        let p = self.params;
        let len = x.len();
        let zero = C64::new(0.0, 0.0);
        for m in 0..len {
            let n = m + k;
            let up = if m + 1 < len { x[m + 1] * (self.sqrt[m + 1] * self.sqrt[n + 1]) } else { zero };
            let down = if m > 0 { x[m - 1] * (self.sqrt[m] * self.sqrt[n]) } else { zero };
            let xm = x[m];
            let rot = C64::new(0.0, -(p.energy(m) - p.energy(n))) * xm;
            let (mf, nf) = (m as f64, n as f64);
            out[m] = match p.form {
                MasterForm::Lindblad => {
                    let (alpha, beta) = self.lindblad_rates();
                    rot + (up - xm * (0.5 * (mf + nf))) * alpha
                        + (down - xm * (0.5 * (self.c(m) + self.c(n)))) * beta
                }
                MasterForm::Split => {
                    // [A, [A^dag, rho]] and [A^dag, [A, rho]]
                    let outer = xm * (self.c(m) + nf) - up - down;
                    let inner = xm * (mf + self.c(n)) - down - up;
                    let friction = (up - xm * (0.5 * (mf + nf))) * p.gamma;
                    rot + friction - (outer + inner) * (0.5 * p.d * p.nbar)
                }
            };
        }
    }

    /// Gershgorin bound on the spectral radius of band `k`.
    fn bound(&self, k: usize) -> f64 {
        let p = self.params;
        let len = self.cutoff + 1 - k;
        let (alpha, beta) = match p.form {
            MasterForm::Lindblad => self.lindblad_rates(),
            MasterForm::Split => (p.gamma + p.d * p.nbar, p.d * p.nbar),
        };
        (0..len)
            .map(|m| {
                let n = m + k;
                let (mf, nf) = (m as f64, n as f64);
                let diag = C64::new(
                    -0.5 * alpha * (mf + nf) - 0.5 * beta * (self.c(m) + self.c(n)),
                    p.energy(n) - p.energy(m),
                )
                .norm();
                diag + alpha * self.sqrt[m + 1] * self.sqrt[n + 1] + beta * self.sqrt[m] * self.sqrt[n]
            })
            .fold(0.0, f64::max)
    }
}

/// Integrates the master equation from `rho0` and returns the state at each
/// requested time (ascending, none before `rho0.time`).
///
/// The step is the smaller of `max_dt` and a stability bound derived from the
/// generator. After every step the top [`GUARD_LEVELS`] levels must hold less
/// than [`GUARD_POPULATION`].
pub fn evolve_master_with(
    params: &OscillatorQuantumParams,
    rho0: &FockDensityMatrix,
    times: &[f64],
    max_dt: f64,
) -> Result<Vec<FockDensityMatrix>> {
    params.validate()?;
    if !(max_dt > 0.0 && max_dt.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: format!("must be positive, got {max_dt}"),
        });
    }
    let mut prev = rho0.time;
    for &t in times {
        if !(t >= prev && t.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "times",
                reason: format!("sample times must be finite and ascending from {}", rho0.time),
            });
        }
        prev = t;
    }
    let gen = Generator::new(params, rho0.cutoff);
    let bound = (0..rho0.bands.len()).map(|k| gen.bound(k)).fold(0.0, f64::max);
    let dt = if bound > 0.0 { max_dt.min(STABILITY_FACTOR / bound) } else { max_dt };

    let mut rho = rho0.clone();
    let width = rho.bands.len();
    let mut k1: Vec<Vec<C64>> = rho.bands.clone();
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut tmp = k1.clone();
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let span = t - rho.time;
        let steps = (span / dt).ceil() as usize;
        let h = if steps > 0 { span / steps as f64 } else { 0.0 };
        let start = rho.time;
        for s in 0..steps {
            for k in 0..width {
                let x = &mut rho.bands[k];
                gen.apply(k, x, &mut k1[k]);
                for (t, (a, b)) in tmp[k].iter_mut().zip(x.iter().zip(&k1[k])) {
                    *t = a + b * (0.5 * h);
                }
                gen.apply(k, &tmp[k], &mut k2[k]);
                for (t, (a, b)) in tmp[k].iter_mut().zip(x.iter().zip(&k2[k])) {
                    *t = a + b * (0.5 * h);
                }
                gen.apply(k, &tmp[k], &mut k3[k]);
                for (t, (a, b)) in tmp[k].iter_mut().zip(x.iter().zip(&k3[k])) {
                    *t = a + b * h;
                }
                gen.apply(k, &tmp[k], &mut k4[k]);
                for i in 0..x.len() {
                    x[i] += (k1[k][i] + 2.0 * k2[k][i] + 2.0 * k3[k][i] + k4[k][i]) * (h / 6.0);
                }
            }
            rho.time = start + (s + 1) as f64 * h;
            let guard = rho.guard_population();
            if !(guard < GUARD_POPULATION) {
                return Err(Error::CutoffTooSmall {
                    cutoff: rho.cutoff,
                    population: guard,
                    time: rho.time,
                });
            }
        }
        rho.time = t;
        out.push(rho.clone());
    }
    Ok(out)
}

/// [`evolve_master_with`] with a base step of `0.01 / max(gamma (nbar + 1), |omega|, |U| n_max)`.
pub fn evolve_master(
    params: &OscillatorQuantumParams,
    rho0: &FockDensityMatrix,
    times: &[f64],
) -> Result<Vec<FockDensityMatrix>> {
    let rate = (params.gamma * (params.nbar + 1.0))
        .max(params.effective_d() * params.nbar)
        .max(params.omega.abs())
        .max(params.interaction.abs() * rho0.cutoff as f64);
    let dt = if rate > 0.0 { 0.01 / rate } else { 0.01 };
    evolve_master_with(params, rho0, times, dt)
}

/// `N(t)` from the ground state with the default cutoff.
pub fn relaxation_curve(params: &OscillatorQuantumParams, times: &[f64]) -> Result<Vec<f64>> {
    let t_final = times.iter().copied().fold(0.0, f64::max);
    let rho0 = FockDensityMatrix::ground(default_cutoff(params, 0, 0.0, t_final));
    Ok(evolve_master(params, &rho0, times)?.iter().map(mean_number).collect())
}

/// Quantum `N(t)/nbar` against the Langevin `<I(t)>` on a shared grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub times: Vec<f64>,
    pub quantum: Vec<f64>,
    pub classical: Vec<Estimate>,
    /// Allowed deviation per time: `3 se + cutoff error + extra`.
    pub tolerance: Vec<f64>,
    pub max_deviation: f64,
    pub max_deviation_time: f64,
    pub within_tolerance: bool,
}

/// Runs both pictures from the vacuum with matched `(omega, g = U nbar,
/// gamma, D)` and compares `N(t)/nbar` with `<I(t)>` at every sample time of
/// `integrator`.
///
/// `g` is checked against `U nbar` when given. `extra_tolerance` widens the
/// band for finite-`nbar` corrections at nonzero `U`.
pub fn classical_consistency(
    params: &OscillatorQuantumParams,
    g: Option<f64>,
    integrator: &IntegratorConfig,
    ensemble: &EnsembleConfig,
    extra_tolerance: f64,
) -> Result<ConsistencyReport> {
    params.validate()?;
    if params.nbar <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "nbar",
            reason: "the classical action N / nbar needs nbar > 0".into(),
        });
    }
    let g = match g {
        Some(g) => {
            check_mapping(g, params.interaction, params.nbar)?;
            g
        }
        None => params.classical_g(),
    };
    let single = SingleSiteParams {
        omega: params.omega,
        g,
        gamma: params.gamma,
        d: params.effective_d(),
    };
    single.validate()?;
    let stats = run_ensemble(&single, &OscState::zeros(1), integrator, ensemble)?;
    let quantum: Vec<f64> = relaxation_curve(params, &stats.times)?
        .into_iter()
        .map(|n| n / params.nbar)
        .collect();
    let classical: Vec<Estimate> = stats.actions.iter().map(|a| a[0]).collect();
    let cutoff_error = GUARD_POPULATION;
    let tolerance: Vec<f64> = classical
        .iter()
        .map(|c| 3.0 * c.se + cutoff_error + extra_tolerance)
        .collect();
    let mut max_deviation = 0.0;
    let mut max_deviation_time = 0.0;
    let mut within = true;
    for i in 0..quantum.len() {
        let dev = (quantum[i] - classical[i].mean).abs();
        if dev > max_deviation {
            max_deviation = dev;
            max_deviation_time = stats.times[i];
        }
        within &= dev <= tolerance[i];
    }
    Ok(ConsistencyReport {
        times: stats.times,
        quantum,
        classical,
        tolerance,
        max_deviation,
        max_deviation_time,
        within_tolerance: within,
    })
}
