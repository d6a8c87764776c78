//! Domain types and the deterministic part of the oscillator dynamics.
//!
//! Amplitudes use the dimensionless-action convention: `I_l = |a_l|^2` is the
//! site occupation divided by the reservoir scale `nbar`, and the classical
//! nonlinearity is `g = U * nbar`. The equation of motion for the chain is
//!
//! ```text
//! i da_l/dt = (omega + g |a_l|^2) a_l - (J/2)(a_{l+1} + a_{l-1})
//!             - i (gamma_l / 2) a_l + sqrt(D_l / 2) xi_l(t)
//! ```
//!
//! with friction and forcing only on the two boundary sites and open ends
//! (`a_0 = a_{L+1} = 0`). This module holds the noise-free part; the noise is
//! added by [`crate::langevin`].

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::C64;

/// Relative tolerance for the `g = U * nbar` consistency check.
const MAPPING_RTOL: f64 = 1e-9;

/// Physical constants of the open chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    /// Chain length `L`.
    pub length: usize,
    /// Hopping amplitude `J`.
    pub hopping: f64,
    /// On-site frequency.
    pub omega: f64,
    /// Classical nonlinearity, the single source of truth for the dynamics.
    pub g: f64,
    pub gamma1: f64,
    pub gamma_l: f64,
    pub d1: f64,
    pub d_l: f64,
    /// Quantum interaction constant `U`, when the config specifies one.
    pub interaction: Option<f64>,
    /// Reservoir density scale; the effective Planck constant is `1 / nbar`.
    pub nbar: f64,
}

impl Default for ChainParams {
    fn default() -> Self {
        ChainParams {
            length: 5,
            hopping: 1.0,
            omega: 1.0,
            g: 0.0,
            gamma1: 0.5,
            gamma_l: 0.5,
            d1: 0.5,
            d_l: 0.25,
            interaction: None,
            nbar: 10.0,
        }
    }
}

impl ChainParams {
    pub fn validate(&self) -> Result<()> {
        if self.length < 2 {
            return Err(Error::InvalidParameter {
                name: "length",
                reason: format!(
                    "chain needs at least 2 sites (got {}); use SingleSiteParams for one oscillator",
                    self.length
                ),
            });
        }
        for (name, value) in [
            ("hopping", self.hopping),
            ("gamma1", self.gamma1),
            ("gammaL", self.gamma_l),
            ("d1", self.d1),
            ("dL", self.d_l),
        ] {
            non_negative(name, value)?;
        }
        finite("omega", self.omega)?;
        finite("g", self.g)?;
        if !(self.nbar > 0.0 && self.nbar.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "nbar",
                reason: format!("must be positive, got {}", self.nbar),
            });
        }
        if let Some(u) = self.interaction {
            check_mapping(self.g, u, self.nbar)?;
        }
        Ok(())
    }

    /// Smallest positive boundary friction, the slowest local relaxation rate.
    pub fn relaxation_rate(&self) -> f64 {
        [self.gamma1, self.gamma_l]
            .into_iter()
            .filter(|g| *g > 0.0)
            .fold(f64::INFINITY, f64::min)
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.length {
            return Err(Error::Dimension {
                expected: self.length,
                found: n,
            });
        }
        Ok(())
    }
}

/// A single damped nonlinear oscillator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleSiteParams {
    pub omega: f64,
    pub g: f64,
    pub gamma: f64,
    pub d: f64,
}

impl Default for SingleSiteParams {
    fn default() -> Self {
        SingleSiteParams {
            omega: 1.0,
            g: 0.0,
            gamma: 0.5,
            d: 0.5,
        }
    }
}

impl SingleSiteParams {
    pub fn validate(&self) -> Result<()> {
        non_negative("gamma", self.gamma)?;
        non_negative("d", self.d)?;
        finite("omega", self.omega)?;
        finite("g", self.g)
    }
}

/// `g = U * nbar` to a relative tolerance.
pub fn check_mapping(g: f64, interaction: f64, nbar: f64) -> Result<()> {
    let expected = interaction * nbar;
    if (g - expected).abs() > MAPPING_RTOL * expected.abs().max(1.0) {
        return Err(Error::Config(format!(
            "g = {g} but U * nbar = {interaction} * {nbar} = {expected}"
        )));
    }
    Ok(())
}

fn non_negative(name: &'static str, value: f64) -> Result<()> {
    if !(value >= 0.0 && value.is_finite()) {
        return Err(Error::InvalidParameter {
            name,
            reason: format!("must be finite and >= 0, got {value}"),
        });
    }
    Ok(())
}

fn finite(name: &'static str, value: f64) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::InvalidParameter {
            name,
            reason: format!("must be finite, got {value}"),
        });
    }
    Ok(())
}

/// Complex oscillator amplitudes `a_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct OscState(pub Vec<C64>);

impl OscState {
    pub fn zeros(len: usize) -> Self {
        OscState(vec![C64::new(0.0, 0.0); len])
    }

    /// Build from canonical quadratures, `a = (q + i p) / sqrt(2)`.
    pub fn from_quadratures(q: &[f64], p: &[f64]) -> Result<Self> {
        if q.len() != p.len() {
            return Err(Error::Dimension {
                expected: q.len(),
                found: p.len(),
            });
        }
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Ok(OscState(
            q.iter().zip(p).map(|(&q, &p)| C64::new(q * s, p * s)).collect(),
        ))
    }

    /// `(q_l, p_l) = sqrt(2) (Re a_l, Im a_l)`.
    pub fn quadratures(&self) -> (Vec<f64>, Vec<f64>) {
        let s = std::f64::consts::SQRT_2;
        self.0.iter().map(|a| (a.re * s, a.im * s)).unzip()
    }

    pub fn actions(&self) -> Vec<f64> {
        self.0.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.0
    }
}

/// Single-particle density matrix `rho_{l,m} = <a_l^* a_m>`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdmMatrix {
    pub entries: DMatrix<C64>,
    /// Per-entry Monte-Carlo errors: the real part holds the standard error
    /// of `Re rho_{l,m}`, the imaginary part that of `Im rho_{l,m}`. Zero for
    /// oracle output.
    pub standard_errors: DMatrix<C64>,
}

impl SpdmMatrix {
    pub fn exact(entries: DMatrix<C64>) -> Self {
        let n = entries.nrows();
        SpdmMatrix {
            entries,
            standard_errors: DMatrix::zeros(n, n),
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self::exact(DMatrix::zeros(len, len))
    }

    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.nrows() == 0
    }

    /// Diagonal entries, the mean site actions.
    pub fn actions(&self) -> Vec<f64> {
        (0..self.len()).map(|l| self.entries[(l, l)].re).collect()
    }

    /// Largest `|rho_{l,m} - conj(rho_{m,l})|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.len();
        let mut worst = 0.0f64;
        for l in 0..n {
            for m in l..n {
                worst = worst.max((self.entries[(l, m)] - self.entries[(m, l)].conj()).norm());
            }
        }
        worst
    }

    /// `J * Im rho_{l,l+1}` for each of the `L - 1` bonds.
    pub fn bond_currents(&self, hopping: f64) -> Vec<f64> {
        (0..self.len().saturating_sub(1))
            .map(|l| hopping * self.entries[(l, l + 1)].im)
            .collect()
    }
}

/// Deterministic part of a Langevin system plus the location and strength of
/// its stochastic forcing.
pub trait Dynamics: Sync {
    fn sites(&self) -> usize;

    /// On-site rotation frequency of a site holding action `intensity`.
    fn local_frequency(&self, site: usize, intensity: f64) -> f64;

    /// Everything in `da/dt` except the on-site rotation and the noise:
    /// hopping and friction. Both slices have [`Dynamics::sites`] elements.
    fn coupling_into(&self, state: &[C64], out: &mut [C64]);

    /// Full noise-free `da/dt`.
    fn drift_into(&self, state: &[C64], out: &mut [C64]) {
        self.coupling_into(state, out);
        for (l, (a, o)) in state.iter().zip(out.iter_mut()).enumerate() {
            let f = self.local_frequency(l, a.norm_sqr());
            *o += C64::new(a.im * f, -a.re * f);
        }
    }

    /// `(site, sqrt(D / 2))` for every stochastically driven site.
    fn noise_sites(&self) -> Vec<(usize, f64)>;

    /// Rate used to size relaxation windows (smallest positive friction).
    fn relaxation_rate(&self) -> f64;

    /// Hopping amplitude, used for the current; zero when there are no bonds.
    fn hopping(&self) -> f64 {
        0.0
    }
}

impl Dynamics for ChainParams {
    fn sites(&self) -> usize {
        self.length
    }

    #[inline]
    fn local_frequency(&self, _site: usize, intensity: f64) -> f64 {
        self.omega + self.g * intensity
    }

    #[inline]
    fn coupling_into(&self, a: &[C64], out: &mut [C64]) {
        let n = a.len();
        let half_j = 0.5 * self.hopping;
        let zero = C64::new(0.0, 0.0);
        for l in 0..n {
            let left = if l > 0 { a[l - 1] } else { zero };
            let right = if l + 1 < n { a[l + 1] } else { zero };
            // i da/dt = -(J/2)(left + right)  =>  da/dt = i (J/2)(left + right)
            let s = left + right;
            out[l] = C64::new(-s.im * half_j, s.re * half_j);
        }
        out[0] -= a[0] * (0.5 * self.gamma1);
        out[n - 1] -= a[n - 1] * (0.5 * self.gamma_l);
    }

    fn noise_sites(&self) -> Vec<(usize, f64)> {
        let mut sites = Vec::with_capacity(2);
        if self.d1 > 0.0 {
            sites.push((0, (0.5 * self.d1).sqrt()));
        }
        if self.d_l > 0.0 {
            sites.push((self.length - 1, (0.5 * self.d_l).sqrt()));
        }
        sites
    }

    fn relaxation_rate(&self) -> f64 {
        ChainParams::relaxation_rate(self)
    }

    fn hopping(&self) -> f64 {
        self.hopping
    }
}

impl Dynamics for SingleSiteParams {
    fn sites(&self) -> usize {
        1
    }

    #[inline]
    fn local_frequency(&self, _site: usize, intensity: f64) -> f64 {
        self.omega + self.g * intensity
    }

    #[inline]
    fn coupling_into(&self, a: &[C64], out: &mut [C64]) {
        out[0] = -a[0] * (0.5 * self.gamma);
    }

    fn noise_sites(&self) -> Vec<(usize, f64)> {
        if self.d > 0.0 {
            vec![(0, (0.5 * self.d).sqrt())]
        } else {
            Vec::new()
        }
    }

    fn relaxation_rate(&self) -> f64 {
        if self.gamma > 0.0 {
            self.gamma
        } else {
            f64::INFINITY
        }
    }
}

/// Noise-free `da/dt` of the chain.
pub fn drift(state: &OscState, params: &ChainParams) -> Result<Vec<C64>> {
    params.check_len(state.len())?;
    let mut out = vec![C64::new(0.0, 0.0); state.len()];
    params.drift_into(&state.0, &mut out);
    Ok(out)
}

/// Noise-free `da/dt` of one oscillator: `i da/dt = (omega + g|a|^2) a - i (gamma/2) a`.
#[inline]
pub fn drift_single(a: C64, params: &SingleSiteParams) -> C64 {
    let freq = params.omega + params.g * a.norm_sqr();
    C64::new(a.im * freq, -a.re * freq) - a * (0.5 * params.gamma)
}

/// `H = sum_l (omega I_l + g/2 I_l^2) - (J/2) sum_l (a_{l+1}^* a_l + c.c.)`.
pub fn hamiltonian(state: &OscState, params: &ChainParams) -> Result<f64> {
    params.check_len(state.len())?;
    let a = &state.0;
    let onsite: f64 = a
        .iter()
        .map(|a| {
            let i = a.norm_sqr();
            params.omega * i + 0.5 * params.g * i * i
        })
        .sum();
    let hop: f64 = a.windows(2).map(|w| (w[1].conj() * w[0]).re).sum();
    Ok(onsite - params.hopping * hop)
}

/// `omega_k = -J cos(2 pi k / L)` for `k = 1..=L`: the ring dispersion used
/// as a label for the collective modes of the open chain.
pub fn eigenfrequencies(params: &ChainParams) -> Vec<f64> {
    let n = params.length as f64;
    (1..=params.length)
        .map(|k| -params.hopping * (2.0 * PI * k as f64 / n).cos())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportRegime {
    Ballistic,
    Diffusive,
    Mixed,
}

impl std::fmt::Display for TransportRegime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TransportRegime::Ballistic => "ballistic",
            TransportRegime::Diffusive => "diffusive",
            TransportRegime::Mixed => "mixed",
        })
    }
}

/// Classifies stationary actions by the per-site criterion `I_l > J / g`
/// (nonlinear shift larger than the conductance band): diffusive when every
/// site satisfies it, ballistic when none does, mixed otherwise.
pub fn transport_regime(stationary_actions: &[f64], params: &ChainParams) -> Result<TransportRegime> {
    params.check_len(stationary_actions.len())?;
    if params.g <= 0.0 {
        return Ok(TransportRegime::Ballistic);
    }
    let threshold = params.hopping / params.g;
    let above = stationary_actions.iter().filter(|&&i| i > threshold).count();
    Ok(match above {
        0 => TransportRegime::Ballistic,
        n if n == stationary_actions.len() => TransportRegime::Diffusive,
        _ => TransportRegime::Mixed,
    })
}
