//! Stationary spectral densities of the oscillator amplitudes.
//!
//! For a post-transient window of `N` samples `a(t_n)` with spacing `h` and
//! length `T = N h`, each realization contributes the periodogram
//!
//! ```text
//! P(nu_k) = T / (2 pi) * | (1/N) sum_n a(t_n) exp(-i nu_k t_n) |^2,   nu_k = 2 pi k / T
//! ```
//!
//! for `k` in `[-N/2, N/2)`. The kernel sign puts a free oscillator
//! `a ~ exp(-i omega t)` at `nu = -omega`. By Parseval,
//! `dnu * sum_k P(nu_k) = (1/N) sum_n |a(t_n)|^2` holds exactly for every
//! realization, so the discrete spectrum integrates to the time-averaged
//! action of the same samples.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::langevin::Trajectory;
use crate::stats::{Estimate, Moments};
use crate::C64;

/// Ensemble-averaged periodograms for every site.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumEstimate {
    /// Ascending grid `nu_k = 2 pi k / T`.
    pub frequencies: Vec<f64>,
    /// `densities[site][k]`.
    pub densities: Vec<Vec<f64>>,
    /// Across-realization standard errors, same layout as `densities`.
    pub standard_errors: Vec<Vec<f64>>,
    /// Window length `T`.
    pub window_length: f64,
    pub realizations: usize,
    /// Time-and-ensemble averaged `|a_l|^2` over the same window: the right
    /// hand side of the discrete sum rule.
    pub window_actions: Vec<Estimate>,
}

impl SpectrumEstimate {
    pub fn bin_width(&self) -> f64 {
        2.0 * PI / self.window_length
    }

    pub fn sites(&self) -> usize {
        self.densities.len()
    }

    /// `dnu * sum_k P_l(nu_k)`.
    pub fn integrated(&self, site: usize) -> Result<f64> {
        let p = self.site(site)?;
        Ok(self.bin_width() * p.iter().sum::<f64>())
    }

    fn site(&self, site: usize) -> Result<&[f64]> {
        self.densities
            .get(site)
            .map(Vec::as_slice)
            .ok_or(Error::SiteOutOfRange {
                index: site,
                len: self.densities.len(),
            })
    }

    /// Frequency of the largest bin.
    pub fn peak_frequency(&self, site: usize) -> Result<f64> {
        let p = self.site(site)?;
        let (k, _) = p
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("spectrum has at least one bin");
        Ok(self.frequencies[k])
    }

    /// Local maxima that reach at least `rel_height` of the site's global
    /// maximum.
    pub fn peaks(&self, site: usize, rel_height: f64) -> Result<Vec<f64>> {
        let p = self.site(site)?;
        let top = p.iter().copied().fold(0.0, f64::max);
        let n = p.len();
        Ok((0..n)
            .filter(|&k| {
                let left = if k > 0 { p[k - 1] } else { f64::NEG_INFINITY };
                let right = if k + 1 < n { p[k + 1] } else { f64::NEG_INFINITY };
                p[k] >= left && p[k] > right && p[k] >= rel_height * top
            })
            .map(|k| self.frequencies[k])
            .collect())
    }
}

/// Accumulates per-realization periodograms of a fixed-length window.
pub struct SpectrumAccumulator {
    samples: usize,
    spacing: f64,
    sites: usize,
    fft: Arc<dyn Fft<f64>>,
    buffer: Vec<C64>,
    scratch: Vec<C64>,
    bins: Vec<Moments>,
    actions: Vec<Moments>,
    realizations: usize,
}

impl SpectrumAccumulator {
    pub fn new(sites: usize, samples: usize, spacing: f64) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(samples);
        let scratch = vec![C64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        SpectrumAccumulator {
            samples,
            spacing,
            sites,
            fft,
            buffer: vec![C64::new(0.0, 0.0); samples],
            scratch,
            bins: vec![Moments::default(); sites * samples],
            actions: vec![Moments::default(); sites],
            realizations: 0,
        }
    }

    pub fn window_length(&self) -> f64 {
        self.samples as f64 * self.spacing
    }

    /// Adds one realization; `window` is site-major, `sites * samples` long.
    pub fn add(&mut self, window: &[C64]) {
        debug_assert_eq!(window.len(), self.sites * self.samples);
        let n = self.samples;
        let norm = self.window_length() / (2.0 * PI) / (n as f64 * n as f64);
        for site in 0..self.sites {
            let signal = &window[site * n..(site + 1) * n];
            let action = signal.iter().map(|a| a.norm_sqr()).sum::<f64>() / n as f64;
            self.actions[site].push(action);
            self.buffer.copy_from_slice(signal);
            self.fft.process_with_scratch(&mut self.buffer, &mut self.scratch);
            let bins = &mut self.bins[site * n..(site + 1) * n];
            for (m, z) in bins.iter_mut().zip(&self.buffer) {
                m.push(norm * z.norm_sqr());
            }
        }
        self.realizations += 1;
    }

    /// Adds another accumulator's realizations after this one's.
    pub fn merge(&mut self, other: &SpectrumAccumulator) {
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            a.merge(b);
        }
        for (a, b) in self.actions.iter_mut().zip(&other.actions) {
            a.merge(b);
        }
        self.realizations += other.realizations;
    }

    /// Same window geometry, no data.
    pub fn empty_like(&self) -> Self {
        SpectrumAccumulator::new(self.sites, self.samples, self.spacing)
    }

    pub fn finish(&self) -> SpectrumEstimate {
        let n = self.samples as i64;
        let t = self.window_length();
        let k_min = -(n / 2);
        let frequencies: Vec<f64> = (k_min..k_min + n).map(|k| 2.0 * PI * k as f64 / t).collect();
        let fft_index = |k: i64| k.rem_euclid(n) as usize;
        let mut densities = Vec::with_capacity(self.sites);
        let mut standard_errors = Vec::with_capacity(self.sites);
        for site in 0..self.sites {
            let bins = &self.bins[site * self.samples..(site + 1) * self.samples];
            let (p, se): (Vec<f64>, Vec<f64>) = (k_min..k_min + n)
                .map(|k| {
                    let e = bins[fft_index(k)].estimate();
                    (e.mean, e.se)
                })
                .unzip();
            densities.push(p);
            standard_errors.push(se);
        }
        SpectrumEstimate {
            frequencies,
            densities,
            standard_errors,
            window_length: t,
            realizations: self.realizations,
            window_actions: self.actions.iter().map(Moments::estimate).collect(),
        }
    }
}

/// Ensemble spectrum of the samples at or after `transient`.
///
/// `relaxation_rate` is the slowest damping rate of the system; windows
/// shorter than `2 / relaxation_rate` are rejected.
pub fn estimate_spectrum(
    trajectories: &[Trajectory],
    transient: f64,
    relaxation_rate: f64,
) -> Result<SpectrumEstimate> {
    let first = trajectories
        .first()
        .ok_or_else(|| Error::InvalidParameter {
            name: "trajectories",
            reason: "need at least one trajectory".into(),
        })?;
    for (i, tr) in trajectories.iter().enumerate().skip(1) {
        if tr.times != first.times {
            return Err(Error::GridMismatch(format!(
                "trajectory {i} has a different time grid than trajectory 0"
            )));
        }
    }
    if first.times.len() < 2 {
        return Err(Error::GridMismatch("need at least two samples".into()));
    }
    let spacing = first.times[1] - first.times[0];
    let start = first
        .times
        .iter()
        .position(|&t| t >= transient - 1e-9 * spacing)
        .unwrap_or(first.times.len());
    let samples = first.times.len() - start;
    let window = samples as f64 * spacing;
    let required = 2.0 / relaxation_rate;
    if samples == 0 || window < required {
        return Err(Error::WindowTooShort { window, required });
    }
    let sites = first.states[0].len();
    let mut acc = SpectrumAccumulator::new(sites, samples, spacing);
    let mut buf = vec![C64::new(0.0, 0.0); sites * samples];
    for tr in trajectories {
        for (n, state) in tr.states[start..].iter().enumerate() {
            if state.len() != sites {
                return Err(Error::Dimension {
                    expected: sites,
                    found: state.len(),
                });
            }
            for (site, a) in state.0.iter().enumerate() {
                buf[site * samples + n] = *a;
            }
        }
        acc.add(&buf);
    }
    Ok(acc.finish())
}

/// Exact spectrum of the linear damped oscillator,
/// `P(nu) = (D / 2 pi) / ((nu + omega)^2 + (gamma / 2)^2)`.
pub fn lorentzian_reference(nu: f64, omega: f64, gamma: f64, d: f64) -> f64 {
    let half = 0.5 * gamma;
    d / (2.0 * PI) / ((nu + omega).powi(2) + half * half)
}

/// First moment `sum nu P / sum P` of one site's spectrum.
pub fn spectral_centroid(spectrum: &SpectrumEstimate, site: usize) -> Result<f64> {
    let p = spectrum.site(site)?;
    let mass: f64 = p.iter().sum();
    if mass <= 0.0 {
        return Err(Error::Domain(format!("site {site} has an empty spectrum")));
    }
    let moment: f64 = p.iter().zip(&spectrum.frequencies).map(|(p, nu)| p * nu).sum();
    Ok(moment / mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::OscState;

    fn synthetic(signal: impl Fn(f64) -> C64, n: usize, h: f64) -> Trajectory {
        let times: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
        let states = times.iter().map(|&t| OscState(vec![signal(t)])).collect();
        Trajectory { times, states }
    }

    #[test]
    fn constant_signal_sits_in_zero_bin() {
        let c = C64::new(0.6, -0.8);
        let tr = synthetic(|_| c, 256, 0.1);
        let s = estimate_spectrum(&[tr], 0.0, 1.0).unwrap();
        let zero = s.frequencies.iter().position(|&nu| nu == 0.0).unwrap();
        let p = &s.densities[0];
        for (k, v) in p.iter().enumerate() {
            if k != zero {
                assert!(*v < 1e-25, "bin {k} = {v}");
            }
        }
        assert!((s.integrated(0).unwrap() - c.norm_sqr()).abs() < 1e-12);
    }

    #[test]
    fn pure_tone_peaks_at_minus_omega() {
        let n = 512;
        let h = 0.05;
        let t = n as f64 * h;
        let omega = 2.0 * PI * 20.0 / t; // on-grid
        let tr = synthetic(|t| C64::from_polar(1.0, -omega * t), n, h);
        let s = estimate_spectrum(&[tr], 0.0, 1.0).unwrap();
        assert!((s.peak_frequency(0).unwrap() + omega).abs() < 1e-12);
        assert!((s.integrated(0).unwrap() - 1.0).abs() < 1e-12);
        assert!((spectral_centroid(&s, 0).unwrap() + omega).abs() < 1e-9);
        assert_eq!(s.peaks(0, 0.1).unwrap().len(), 1);
    }

    #[test]
    fn sum_rule_holds_for_arbitrary_data() {
        let n = 300; // not a power of two
        let tr = synthetic(|t| C64::new((3.1 * t).sin() + 0.2, (0.7 * t * t).cos()), n, 0.03);
        let s = estimate_spectrum(&[tr.clone(), tr], 1.0, 1.0).unwrap();
        let lhs = s.integrated(0).unwrap();
        let rhs = s.window_actions[0].mean;
        assert!(((lhs - rhs) / rhs).abs() < 1e-12);
        assert!(s.densities[0].iter().all(|&p| p >= 0.0));
        // grid: k in [-N/2, N/2)
        assert_eq!(s.frequencies.len(), s.densities[0].len());
        assert!(s.frequencies[0] < 0.0 && s.frequencies.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn short_window_and_mismatched_grids_are_rejected() {
        let a = synthetic(|_| C64::new(1.0, 0.0), 10, 0.1);
        assert!(matches!(
            estimate_spectrum(&[a.clone()], 0.0, 1.0),
            Err(Error::WindowTooShort { .. })
        ));
        let b = synthetic(|_| C64::new(1.0, 0.0), 11, 0.1);
        assert!(matches!(
            estimate_spectrum(&[a, b], 0.0, 0.1),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn lorentzian_examples() {
        let peak = lorentzian_reference(-1.0, 1.0, 0.5, 0.5);
        assert!((peak - 0.5 / (2.0 * PI * 0.0625)).abs() < 1e-12);
        assert!((peak - 1.273_239_544_735_163).abs() < 1e-12);
        for nu in [-1.25, -0.75] {
            assert!((lorentzian_reference(nu, 1.0, 0.5, 0.5) - 0.5 * peak).abs() < 1e-12);
        }
    }

    #[test]
    fn lorentzian_integrates_to_d_over_gamma() {
        // Substituting nu + omega = (gamma/2) tan(theta) maps the real line onto
        // (-pi/2, pi/2); midpoint rule on the smooth integrand.
        let (omega, gamma, d) = (1.0, 0.5, 0.5);
        let n = 20_000;
        let dtheta = PI / n as f64;
        let total: f64 = (0..n)
            .map(|i| {
                let theta = -0.5 * PI + (i as f64 + 0.5) * dtheta;
                let nu = 0.5 * gamma * theta.tan() - omega;
                let jac = 0.5 * gamma / theta.cos().powi(2);
                lorentzian_reference(nu, omega, gamma, d) * jac * dtheta
            })
            .sum();
        assert!((total - d / gamma).abs() < 1e-9, "{total}");
    }

    #[test]
    fn centroid_rejects_bad_site() {
        let tr = synthetic(|_| C64::new(1.0, 0.0), 64, 0.1);
        let s = estimate_spectrum(&[tr], 0.0, 1.0).unwrap();
        assert!(matches!(spectral_centroid(&s, 3), Err(Error::SiteOutOfRange { .. })));
    }
}
