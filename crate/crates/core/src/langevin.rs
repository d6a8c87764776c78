//! Time stepping of single noise realizations.
//!
//! The noise enters the equation for `i da/dt` as `sqrt(D/2) xi(t)`, so the
//! amplitude update receives `-i sqrt(D/2) dW` with `Re dW`, `Im dW`
//! independent `N(0, dt)`. The noise is additive, hence the Ito and
//! Stratonovich readings coincide and the stochastic Heun scheme applies
//! directly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{ChainParams, Dynamics, OscState};
use crate::C64;

/// Amplitudes above this magnitude abort the trajectory.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Fixed-step integration settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_final: f64,
    /// Record every `sample_stride`-th step.
    pub sample_stride: usize,
    /// Samples before this time are excluded from stationary statistics.
    pub transient: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig::stationary(0.5)
    }
}

impl IntegratorConfig {
    pub const DEFAULT_DT: f64 = 0.005;
    pub const DEFAULT_STRIDE: usize = 20;

    /// Defaults for stationary runs: `t_final = 40 / rate`, `transient = 10 / rate`.
    pub fn stationary(relaxation_rate: f64) -> Self {
        IntegratorConfig {
            dt: Self::DEFAULT_DT,
            t_final: 40.0 / relaxation_rate,
            sample_stride: Self::DEFAULT_STRIDE,
            transient: 10.0 / relaxation_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: String| Err(Error::InvalidParameter { name, reason });
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt", format!("must be positive, got {}", self.dt));
        }
        if !(self.t_final > self.dt && self.t_final.is_finite()) {
            return bad("t_final", format!("must exceed dt = {}, got {}", self.dt, self.t_final));
        }
        if self.sample_stride == 0 {
            return bad("stride", "must be at least 1".into());
        }
        if !(self.transient >= 0.0 && self.transient < self.t_final) {
            return bad(
                "transient",
                format!("must lie in [0, t_final = {}), got {}", self.t_final, self.transient),
            );
        }
        Ok(())
    }

    /// Number of steps: `dt` is shrunk slightly when needed so that the
    /// steps land exactly on `t_final`.
    pub fn n_steps(&self) -> usize {
        ((self.t_final / self.dt) - 1e-9).ceil().max(1.0) as usize
    }

    /// Step actually taken, `t_final / n_steps <= dt`.
    pub fn step_size(&self) -> f64 {
        self.t_final / self.n_steps() as f64
    }

    /// Spacing between recorded samples.
    pub fn sample_interval(&self) -> f64 {
        self.step_size() * self.sample_stride as f64
    }

    pub fn n_samples(&self) -> usize {
        self.n_steps() / self.sample_stride + 1
    }

    pub fn sample_times(&self) -> Vec<f64> {
        let h = self.sample_interval();
        (0..self.n_samples()).map(|i| i as f64 * h).collect()
    }

    /// Index of the first sample at or after the transient.
    pub fn window_start(&self) -> usize {
        let h = self.sample_interval();
        ((self.transient / h) - 1e-9).ceil().max(0.0) as usize
    }
}

/// Reproducible Gaussian noise for one trajectory.
///
/// Each `(master_seed, trajectory_index)` pair selects its own ChaCha8
/// stream: the key comes from the master seed and the 64-bit stream id is the
/// trajectory index, so streams never overlap and a stream can be replayed
/// from its identity alone.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    master_seed: u64,
    trajectory_index: u64,
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(master_seed: u64, trajectory_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(trajectory_index);
        NoiseStream {
            master_seed,
            trajectory_index,
            rng,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn trajectory_index(&self) -> u64 {
        self.trajectory_index
    }

    /// Complex Wiener increment with `Re`, `Im` independent `N(0, dt)`.
    #[inline]
    pub fn increment(&mut self, dt: f64) -> C64 {
        let s = dt.sqrt();
        let re: f64 = self.rng.sample(StandardNormal);
        let im: f64 = self.rng.sample(StandardNormal);
        C64::new(s * re, s * im)
    }
}

/// Draws one complex noise increment for time step `dt`.
pub fn noise_increment(stream: &mut NoiseStream, dt: f64) -> C64 {
    stream.increment(dt)
}

/// Reusable stepper; holds scratch buffers so the hot loop does not
/// allocate.
///
/// One step is a Strang splitting: half a step of the on-site rotation
/// `a_l -> a_l exp(-i (omega + g |a_l|^2) dt / 2)`, a full stochastic Heun
/// step of the remaining linear part (hopping, friction, noise), and another
/// half rotation. The rotation is applied in Cayley form, which has unit
/// modulus and a phase error of order `(Omega dt)^3`. It keeps every `|a_l|`
/// fixed, so a large self-trapped amplitude cannot gain spurious norm from
/// the nonlinear phase, which plain Heun does at a rate `(Omega dt)^4 / 8`
/// per step.
pub struct Stepper<'a, D: Dynamics> {
    dynamics: &'a D,
    noise: Vec<(usize, f64)>,
    k1: Vec<C64>,
    k2: Vec<C64>,
    predictor: Vec<C64>,
    kicks: Vec<C64>,
}

impl<'a, D: Dynamics> Stepper<'a, D> {
    pub fn new(dynamics: &'a D) -> Self {
        let n = dynamics.sites();
        let noise = dynamics.noise_sites();
        let zero = C64::new(0.0, 0.0);
        Stepper {
            dynamics,
            kicks: vec![zero; noise.len()],
            noise,
            k1: vec![zero; n],
            k2: vec![zero; n],
            predictor: vec![zero; n],
        }
    }

    #[inline]
    fn rotate(&self, state: &mut [C64], dt: f64) {
        for (l, a) in state.iter_mut().enumerate() {
            let half = 0.5 * self.dynamics.local_frequency(l, a.norm_sqr()) * dt;
            // Cayley form (1 - i h) / (1 + i h): unit modulus, phase 2 atan(h)
            let q = 1.0 / (1.0 + half * half);
            *a *= C64::new((1.0 - half * half) * q, -2.0 * half * q);
        }
    }

    /// Stochastic Heun step of the linear part. Predictor
    /// `a + f(a) dt + K`, corrector `a + (f(a) + f(pred)) dt / 2 + K`, with
    /// the same kick `K = -i sqrt(D/2) dW` in both.
    #[inline]
    fn heun(&mut self, state: &mut [C64], dt: f64, stream: &mut NoiseStream) {
        for (kick, &(_, amp)) in self.kicks.iter_mut().zip(&self.noise) {
            let dw = stream.increment(dt);
            *kick = C64::new(amp * dw.im, -amp * dw.re);
        }
        self.dynamics.coupling_into(state, &mut self.k1);
        for ((p, a), k) in self.predictor.iter_mut().zip(state.iter()).zip(&self.k1) {
            *p = a + k * dt;
        }
        for (kick, &(site, _)) in self.kicks.iter().zip(&self.noise) {
            self.predictor[site] += kick;
        }
        self.dynamics.coupling_into(&self.predictor, &mut self.k2);
        let half = 0.5 * dt;
        for ((a, k1), k2) in state.iter_mut().zip(&self.k1).zip(&self.k2) {
            *a += (k1 + k2) * half;
        }
        for (kick, &(site, _)) in self.kicks.iter().zip(&self.noise) {
            state[site] += kick;
        }
    }

    /// Advances `state` by `dt` in place, drawing exactly one complex
    /// increment per driven site.
    #[inline]
    pub fn advance(&mut self, state: &mut [C64], dt: f64, stream: &mut NoiseStream) {
        self.advance_many(state, dt, 1, stream);
    }

    /// `steps` consecutive steps. Adjacent half rotations are merged into one
    /// full rotation, which is exact because the rotation leaves `|a_l|`
    /// unchanged.
    #[inline]
    pub fn advance_many(&mut self, state: &mut [C64], dt: f64, steps: usize, stream: &mut NoiseStream) {
        if steps == 0 {
            return;
        }
        self.rotate(state, 0.5 * dt);
        for i in 0..steps {
            self.heun(state, dt, stream);
            let tail = if i + 1 == steps { 0.5 * dt } else { dt };
            self.rotate(state, tail);
        }
    }
}

fn check_finite(state: &[C64], time: f64) -> Result<()> {
    let limit = DIVERGENCE_LIMIT * DIVERGENCE_LIMIT;
    let worst = state.iter().map(|a| a.norm_sqr()).fold(0.0, f64::max);
    if !(worst <= limit) {
        return Err(Error::Diverged {
            time,
            magnitude: worst.sqrt(),
        });
    }
    Ok(())
}

/// One integration step of the chain.
pub fn step(state: &OscState, params: &ChainParams, dt: f64, stream: &mut NoiseStream) -> Result<OscState> {
    if state.len() != params.length {
        return Err(Error::Dimension {
            expected: params.length,
            found: state.len(),
        });
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: format!("must be positive, got {dt}"),
        });
    }
    let mut next = state.0.clone();
    Stepper::new(params).advance(&mut next, dt, stream);
    check_finite(&next, dt)?;
    Ok(OscState(next))
}

/// Sampled time series of one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<OscState>,
}

/// Integrates one realization and hands every recorded sample to `observe`
/// as `(sample_index, time, amplitudes)`. Sample 0 is the initial state.
pub fn simulate_with<D, F>(
    initial: &[C64],
    dynamics: &D,
    config: &IntegratorConfig,
    stream: &mut NoiseStream,
    mut observe: F,
) -> Result<()>
where
    D: Dynamics,
    F: FnMut(usize, f64, &[C64]),
{
    config.validate()?;
    if initial.len() != dynamics.sites() {
        return Err(Error::Dimension {
            expected: dynamics.sites(),
            found: initial.len(),
        });
    }
    let mut state = initial.to_vec();
    let mut stepper = Stepper::new(dynamics);
    let stride = config.sample_stride;
    let h = config.sample_interval();
    let dt = config.step_size();
    observe(0, 0.0, &state);
    let n_samples = config.n_samples();
    for sample in 1..n_samples {
        stepper.advance_many(&mut state, dt, stride, stream);
        let t = sample as f64 * h;
        check_finite(&state, t)?;
        observe(sample, t, &state);
    }
    Ok(())
}

/// Integrates one realization of `dynamics` and records every
/// `sample_stride`-th state.
pub fn simulate<D: Dynamics>(
    initial: &OscState,
    dynamics: &D,
    config: &IntegratorConfig,
    stream: &mut NoiseStream,
) -> Result<Trajectory> {
    let n = config.n_samples();
    let mut times = Vec::with_capacity(n);
    let mut states = Vec::with_capacity(n);
    simulate_with(&initial.0, dynamics, config, stream, |_, t, a| {
        times.push(t);
        states.push(OscState(a.to_vec()));
    })?;
    Ok(Trajectory { times, states })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{hamiltonian, SingleSiteParams};

    fn quiet_chain(length: usize, omega: f64, g: f64, hopping: f64) -> ChainParams {
        ChainParams {
            length,
            hopping,
            omega,
            g,
            gamma1: 0.0,
            gamma_l: 0.0,
            d1: 0.0,
            d_l: 0.0,
            interaction: None,
            nbar: 10.0,
        }
    }

    #[test]
    fn noise_statistics() {
        let mut s = NoiseStream::new(11, 0);
        let n = 100_000;
        let dt = 0.01;
        let draws: Vec<C64> = (0..n).map(|_| noise_increment(&mut s, dt)).collect();
        let mean_re = draws.iter().map(|z| z.re).sum::<f64>() / n as f64;
        let mean_im = draws.iter().map(|z| z.im).sum::<f64>() / n as f64;
        let bound = 3.0 * (dt / n as f64).sqrt();
        assert!(mean_re.abs() < bound && mean_im.abs() < bound);

        // For Gaussian data var(s^2) = 2 sigma^4 / (n - 1).
        let var_re = draws.iter().map(|z| (z.re - mean_re).powi(2)).sum::<f64>() / (n - 1) as f64;
        let var_se = dt * (2.0 / (n - 1) as f64).sqrt();
        assert!((var_re - dt).abs() < 3.0 * var_se, "var = {var_re}");
        let cov = draws.iter().map(|z| z.re * z.im).sum::<f64>() / n as f64;
        assert!(cov.abs() < 3.0 * dt / (n as f64).sqrt());
    }

    #[test]
    fn streams_replay_and_differ() {
        let draw = |seed, idx| {
            let mut s = NoiseStream::new(seed, idx);
            (0..64).map(|_| s.increment(1.0)).collect::<Vec<_>>()
        };
        assert_eq!(draw(7, 3), draw(7, 3));
        assert_ne!(draw(7, 3), draw(7, 4));
        assert_ne!(draw(7, 3), draw(8, 3));
    }

    #[test]
    fn sample_bookkeeping() {
        let cfg = IntegratorConfig {
            dt: 0.01,
            t_final: 10.0,
            sample_stride: 10,
            transient: 2.0,
        };
        let times = cfg.sample_times();
        assert_eq!(times.len(), 101);
        assert!((times[1] - 0.1).abs() < 1e-15);
        assert!((times[100] - 10.0).abs() < 1e-12);
        assert_eq!(cfg.window_start(), 20);
    }

    #[test]
    fn config_validation() {
        let ok = IntegratorConfig::default();
        assert!(ok.validate().is_ok());
        assert!(IntegratorConfig { dt: 0.0, ..ok }.validate().is_err());
        assert!(IntegratorConfig { sample_stride: 0, ..ok }.validate().is_err());
        assert!(IntegratorConfig { transient: ok.t_final, ..ok }.validate().is_err());
        assert!(IntegratorConfig { t_final: 0.001, ..ok }.validate().is_err());
    }

    #[test]
    fn free_rotation_returns_minus_one_at_pi() {
        let p = quiet_chain(3, 1.0, 0.0, 0.0);
        let cfg = IntegratorConfig {
            dt: 1e-3,
            t_final: std::f64::consts::PI,
            sample_stride: 1,
            transient: 0.0,
        };
        let mut a = OscState::zeros(3);
        a.0[0] = C64::new(1.0, 0.0);
        let traj = simulate(&a, &p, &cfg, &mut NoiseStream::new(1, 0)).unwrap();
        let last = traj.states.last().unwrap();
        assert!((traj.times.last().unwrap() - std::f64::consts::PI).abs() < 1e-12);
        assert!((last.0[0] - C64::new(-1.0, 0.0)).norm() < 1e-5);
        assert_eq!(last.0[1], C64::new(0.0, 0.0));
    }

    #[test]
    fn coupled_rotation_matches_exact_linear_solution() {
        // For g = 0 and no dissipation a(t) = exp(-i M t) a(0) with
        // M = omega - (J/2) K. For L = 2 the exact solution is
        // a_1 = e^{-i omega t} cos(J t / 2), a_2 = i e^{-i omega t} sin(J t / 2).
        let p = quiet_chain(2, 1.0, 0.0, 1.0);
        let t = std::f64::consts::PI;
        let cfg = IntegratorConfig {
            dt: 1e-3,
            t_final: t,
            sample_stride: 2,
            transient: 0.0,
        };
        let mut a = OscState::zeros(2);
        a.0[0] = C64::new(1.0, 0.0);
        let traj = simulate(&a, &p, &cfg, &mut NoiseStream::new(1, 0)).unwrap();
        let last = traj.states.last().unwrap();
        let phase = C64::from_polar(1.0, -t);
        let exact = [phase * (0.5 * t).cos(), C64::new(0.0, 1.0) * phase * (0.5 * t).sin()];
        for (got, want) in last.0.iter().zip(exact) {
            assert!((got - want).norm() < 1e-4, "{got} vs {want}");
        }
    }

    #[test]
    fn pure_friction_decays_exponentially() {
        let p = ChainParams {
            gamma1: 0.5,
            ..quiet_chain(2, 1.0, 0.0, 0.0)
        };
        let cfg = IntegratorConfig {
            dt: 1e-3,
            t_final: 4.0,
            sample_stride: 1000,
            transient: 0.0,
        };
        let mut a = OscState::zeros(2);
        a.0[0] = C64::new(1.0, 0.0);
        let traj = simulate(&a, &p, &cfg, &mut NoiseStream::new(1, 0)).unwrap();
        let i1 = traj.states.last().unwrap().0[0].norm_sqr();
        assert!((i1 - (-2.0f64).exp()).abs() < 1e-4, "{i1}");
    }

    #[test]
    fn energy_and_norm_drift_shrink_with_dt() {
        let p = ChainParams {
            g: 2.0,
            ..quiet_chain(5, 1.0, 2.0, 1.0)
        };
        let a0 = OscState((0..5).map(|k| C64::from_polar(0.8, k as f64)).collect());
        let h0 = hamiltonian(&a0, &p).unwrap();
        let n0: f64 = a0.actions().iter().sum();
        let errors = |dt: f64| {
            let cfg = IntegratorConfig {
                dt,
                t_final: 10.0,
                sample_stride: 1,
                transient: 0.0,
            };
            let traj = simulate(&a0, &p, &cfg, &mut NoiseStream::new(1, 0)).unwrap();
            // worst drift over the run; the endpoint error alone oscillates
            traj.states.iter().fold((0.0f64, 0.0f64), |(dh, dn), s| {
                let h = (hamiltonian(s, &p).unwrap() - h0).abs();
                let n = (s.actions().iter().sum::<f64>() - n0).abs();
                (dh.max(h), dn.max(n))
            })
        };
        let (dh1, dn1) = errors(0.01);
        let (dh2, dn2) = errors(0.005);
        assert!(dh1 < 1e-3 && dn1 < 1e-3, "{dh1} {dn1}");
        // second-order drift: halving dt cuts the error by about 4
        assert!(dh2 < dh1 / 3.0 && dn2 < dn1 / 3.0, "{dh1} {dh2} {dn1} {dn2}");
    }

    #[test]
    fn step_validates_and_detects_divergence() {
        let p = quiet_chain(2, 0.0, 1.0, 10.0);
        let mut s = NoiseStream::new(0, 0);
        assert!(step(&OscState::zeros(3), &p, 0.1, &mut s).is_err());
        assert!(step(&OscState::zeros(2), &p, 0.0, &mut s).is_err());
        // hopping phase J dt / 2 = 5 per step: the explicit linear part
        // amplifies by roughly (J dt / 2)^2 / 2 each step
        let mut state = OscState(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        let mut result = Ok(());
        for _ in 0..40 {
            match step(&state, &p, 1.0, &mut s) {
                Ok(next) => state = next,
                Err(e) => {
                    result = Err(e);
                    break;
                }
            }
        }
        assert!(matches!(result, Err(Error::Diverged { .. })));
    }

    #[test]
    fn single_site_runs_through_the_same_stepper() {
        let p = SingleSiteParams {
            omega: 1.0,
            g: 0.0,
            gamma: 0.0,
            d: 0.0,
        };
        let cfg = IntegratorConfig {
            dt: 1e-3,
            t_final: std::f64::consts::PI,
            sample_stride: 2,
            transient: 0.0,
        };
        let traj = simulate(&OscState(vec![C64::new(1.0, 0.0)]), &p, &cfg, &mut NoiseStream::new(0, 0)).unwrap();
        assert!((traj.states.last().unwrap().0[0] + 1.0).norm() < 1e-5);
    }

    #[test]
    fn identical_inputs_give_identical_trajectories() {
        let p = ChainParams {
            g: 2.0,
            ..ChainParams::default()
        };
        let cfg = IntegratorConfig {
            dt: 0.005,
            t_final: 5.0,
            sample_stride: 10,
            transient: 1.0,
        };
        let run = || simulate(&OscState::zeros(5), &p, &cfg, &mut NoiseStream::new(42, 9)).unwrap();
        assert_eq!(run(), run());
    }
}
