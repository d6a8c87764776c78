//! Monte-Carlo averages over independent noise realizations.
//!
//! Trajectories are grouped into fixed blocks of [`BLOCK_SIZE`] consecutive
//! indices. Each block is folded sequentially, and block results are merged
//! in ascending block order, so every statistic is bit-identical for any
//! number of worker threads.
//!
//! Stationary quantities are time-and-ensemble averages over the samples in
//! `[transient, t_final]`. Their standard errors come from batch means: each
//! trajectory's window is cut into batches, and the spread of the batch means
//! gives the error. With the default batch length (the whole window) the
//! batches are the per-trajectory time averages, which are exactly i.i.d.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::langevin::{simulate_with, IntegratorConfig, NoiseStream, Trajectory};
use crate::model::{Dynamics, OscState, SpdmMatrix};
use crate::spectral::{SpectrumAccumulator, SpectrumEstimate};
use crate::stats::{Estimate, Moments};
use crate::C64;

/// Trajectories per reduction block.
pub const BLOCK_SIZE: usize = 16;

/// Realizations used by the figure-level experiments.
pub const DEFAULT_REALIZATIONS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EnsembleConfig {
    /// Number of realizations `M`.
    pub realizations: usize,
    pub master_seed: u64,
    /// Keep the full SPDM for every sample time (memory `O(samples * L^2)`).
    pub record_spdm_series: bool,
    /// Accumulate per-site periodograms over the stationary window.
    pub spectrum: bool,
    /// Batch length for stationary error bars; `None` uses the whole window.
    pub batch_length: Option<f64>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            realizations: DEFAULT_REALIZATIONS,
            master_seed: 0,
            record_spdm_series: false,
            spectrum: false,
            batch_length: None,
        }
    }
}

/// Monte-Carlo estimates from one ensemble run.
#[derive(Debug, Clone)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    /// `actions[sample][site]`, the mean `|a_l(t)|^2`.
    pub actions: Vec<Vec<Estimate>>,
    /// SPDM per sample time; empty unless `record_spdm_series` was set.
    pub spdm: Vec<SpdmMatrix>,
    /// Per-bond current per sample time; empty for a single oscillator.
    pub current: Vec<Estimate>,
    pub realizations: usize,
    /// Start and end of the stationary window.
    pub window: (f64, f64),
    pub stationary_actions: Vec<Estimate>,
    pub stationary_spdm: SpdmMatrix,
    pub stationary_current: Option<Estimate>,
    /// Per-site least-squares slope of `I_l(t)` over the stationary window,
    /// fitted per trajectory and averaged; zero within error when stationary.
    pub action_slopes: Vec<Estimate>,
    pub spectrum: Option<SpectrumEstimate>,
}

impl EnsembleStats {
    pub fn sites(&self) -> usize {
        self.stationary_actions.len()
    }

    /// Stationary `J Im rho_{l,l+1}` per bond with errors.
    pub fn stationary_bond_currents(&self, hopping: f64) -> Vec<Estimate> {
        let rho = &self.stationary_spdm;
        (0..rho.len().saturating_sub(1))
            .map(|l| {
                Estimate::new(
                    hopping * rho.entries[(l, l + 1)].im,
                    hopping * rho.standard_errors[(l, l + 1)].im,
                )
            })
            .collect()
    }
}

/// `J * sum_l Im rho_{l,l+1} / (L - 1)`: the bond-averaged current, positive
/// for flow from site 1 toward site L. Zero when there are no bonds.
pub fn current_from_spdm(spdm: &SpdmMatrix, hopping: f64) -> f64 {
    let bonds = spdm.len().saturating_sub(1);
    if bonds == 0 {
        return 0.0;
    }
    spdm.bond_currents(hopping).iter().sum::<f64>() / bonds as f64
}

#[inline]
fn instantaneous_current(a: &[C64], hopping: f64) -> f64 {
    let bonds = a.len() - 1;
    let s: f64 = a.windows(2).map(|w| (w[0].conj() * w[1]).im).sum();
    hopping * s / bonds as f64
}

/// Sample SPDM `<a_l^* a_m>` at sample index `index` across trajectories.
/// Hermitian by construction; errors are across-trajectory standard errors.
pub fn spdm_estimate(trajectories: &[Trajectory], index: usize) -> Result<SpdmMatrix> {
    let first = trajectories.first().ok_or_else(|| Error::InvalidParameter {
        name: "trajectories",
        reason: "need at least one trajectory".into(),
    })?;
    for (i, tr) in trajectories.iter().enumerate() {
        if tr.times != first.times {
            return Err(Error::GridMismatch(format!(
                "trajectory {i} has a different time grid than trajectory 0"
            )));
        }
    }
    let n = first.states.get(index).map(OscState::len).ok_or_else(|| {
        Error::GridMismatch(format!("sample {index} beyond {} samples", first.times.len()))
    })?;
    let mut re = vec![Moments::default(); n * n];
    let mut im = vec![Moments::default(); n * n];
    for tr in trajectories {
        let a = &tr.states[index].0;
        if a.len() != n {
            return Err(Error::Dimension {
                expected: n,
                found: a.len(),
            });
        }
        for l in 0..n {
            for m in l..n {
                let z = a[l].conj() * a[m];
                re[l * n + m].push(z.re);
                im[l * n + m].push(z.im);
            }
        }
    }
    Ok(assemble_hermitian(n, &re, &im, |m| m.estimate()))
}

fn assemble_hermitian(
    n: usize,
    re: &[Moments],
    im: &[Moments],
    est: impl Fn(&Moments) -> Estimate,
) -> SpdmMatrix {
    let mut entries = DMatrix::zeros(n, n);
    let mut errors = DMatrix::zeros(n, n);
    for l in 0..n {
        for m in l..n {
            let (r, i) = (est(&re[l * n + m]), est(&im[l * n + m]));
            let z = if l == m { C64::new(r.mean, 0.0) } else { C64::new(r.mean, i.mean) };
            let e = if l == m { C64::new(r.se, 0.0) } else { C64::new(r.se, i.se) };
            entries[(l, m)] = z;
            entries[(m, l)] = z.conj();
            errors[(l, m)] = e;
            errors[(m, l)] = e;
        }
    }
    SpdmMatrix {
        entries,
        standard_errors: errors,
    }
}

/// Window mean with a batch-means error: `sum / count` over every window
/// sample, error from the spread of `batches`.
#[derive(Debug, Clone, Copy, Default)]
struct WindowStat {
    total: f64,
    count: u64,
    batches: Moments,
}

impl WindowStat {
    fn merge(&mut self, o: &WindowStat) {
        self.total += o.total;
        self.count += o.count;
        self.batches.merge(&o.batches);
    }

    fn estimate(&self) -> Estimate {
        let mean = if self.count == 0 { 0.0 } else { self.total / self.count as f64 };
        Estimate::new(mean, self.batches.estimate().se)
    }
}

/// Sample geometry shared by every trajectory of a run.
#[derive(Debug, Clone, Copy)]
struct Layout {
    sites: usize,
    samples: usize,
    window_start: usize,
    window_samples: usize,
    batch_samples: usize,
    batches: usize,
    spacing: f64,
    hopping: f64,
    record_spdm: bool,
}

impl Layout {
    fn pairs(&self) -> usize {
        self.sites * self.sites
    }
}

/// Partial sums for a set of trajectories.
struct Accumulator {
    layout: Layout,
    actions: Vec<Moments>,
    current: Vec<Moments>,
    spdm_re: Vec<Moments>,
    spdm_im: Vec<Moments>,
    stat_actions: Vec<WindowStat>,
    stat_re: Vec<WindowStat>,
    stat_im: Vec<WindowStat>,
    stat_current: WindowStat,
    slopes: Vec<Moments>,
    spectrum: Option<SpectrumAccumulator>,
}

impl Accumulator {
    fn new(layout: Layout, spectrum: Option<SpectrumAccumulator>) -> Self {
        let l = layout.sites;
        let series_pairs = if layout.record_spdm { layout.samples * layout.pairs() } else { 0 };
        let current = if l >= 2 { layout.samples } else { 0 };
        Accumulator {
            layout,
            actions: vec![Moments::default(); layout.samples * l],
            current: vec![Moments::default(); current],
            spdm_re: vec![Moments::default(); series_pairs],
            spdm_im: vec![Moments::default(); series_pairs],
            stat_actions: vec![WindowStat::default(); l],
            stat_re: vec![WindowStat::default(); layout.pairs()],
            stat_im: vec![WindowStat::default(); layout.pairs()],
            stat_current: WindowStat::default(),
            slopes: vec![Moments::default(); l],
            spectrum,
        }
    }

    fn empty_like(&self) -> Self {
        Accumulator::new(self.layout, self.spectrum.as_ref().map(|s| s.empty_like()))
    }

    fn merge(&mut self, o: &Accumulator) {
        fn zip_merge(a: &mut [Moments], b: &[Moments]) {
            a.iter_mut().zip(b).for_each(|(a, b)| a.merge(b));
        }
        fn zip_merge_w(a: &mut [WindowStat], b: &[WindowStat]) {
            a.iter_mut().zip(b).for_each(|(a, b)| a.merge(b));
        }
        zip_merge(&mut self.actions, &o.actions);
        zip_merge(&mut self.current, &o.current);
        zip_merge(&mut self.spdm_re, &o.spdm_re);
        zip_merge(&mut self.spdm_im, &o.spdm_im);
        zip_merge_w(&mut self.stat_actions, &o.stat_actions);
        zip_merge_w(&mut self.stat_re, &o.stat_re);
        zip_merge_w(&mut self.stat_im, &o.stat_im);
        self.stat_current.merge(&o.stat_current);
        zip_merge(&mut self.slopes, &o.slopes);
        if let (Some(a), Some(b)) = (self.spectrum.as_mut(), o.spectrum.as_ref()) {
            a.merge(b);
        }
    }
}

/// Per-trajectory running sums over the stationary window.
struct TrajectoryScratch {
    batch_actions: Vec<f64>,
    batch_pairs: Vec<C64>,
    batch_current: f64,
    batch_fill: usize,
    batches_done: usize,
    // regression sums per site over (t - t_window_start, I_l)
    st: f64,
    stt: f64,
    si: Vec<f64>,
    sti: Vec<f64>,
    window: Vec<C64>,
}

impl TrajectoryScratch {
    fn new(layout: &Layout, spectrum: bool) -> Self {
        let l = layout.sites;
        TrajectoryScratch {
            batch_actions: vec![0.0; l],
            batch_pairs: vec![C64::new(0.0, 0.0); layout.pairs()],
            batch_current: 0.0,
            batch_fill: 0,
            batches_done: 0,
            st: 0.0,
            stt: 0.0,
            si: vec![0.0; l],
            sti: vec![0.0; l],
            window: if spectrum {
                vec![C64::new(0.0, 0.0); l * layout.window_samples]
            } else {
                Vec::new()
            },
        }
    }
}

impl Accumulator {
    #[inline]
    fn observe(&mut self, scratch: &mut TrajectoryScratch, sample: usize, a: &[C64]) {
        let lay = self.layout;
        let l = lay.sites;
        for (site, z) in a.iter().enumerate() {
            self.actions[sample * l + site].push(z.norm_sqr());
        }
        let j = if l >= 2 {
            let j = instantaneous_current(a, lay.hopping);
            self.current[sample].push(j);
            j
        } else {
            0.0
        };
        if lay.record_spdm {
            let base = sample * lay.pairs();
            for p in 0..l {
                for q in p..l {
                    let z = a[p].conj() * a[q];
                    self.spdm_re[base + p * l + q].push(z.re);
                    self.spdm_im[base + p * l + q].push(z.im);
                }
            }
        }
        if sample < lay.window_start {
            return;
        }
        let w = sample - lay.window_start;
        let t = w as f64 * lay.spacing;
        scratch.st += t;
        scratch.stt += t * t;
        for (site, z) in a.iter().enumerate() {
            let i = z.norm_sqr();
            scratch.batch_actions[site] += i;
            scratch.si[site] += i;
            scratch.sti[site] += t * i;
        }
        for p in 0..l {
            let ap = a[p].conj();
            for q in p..l {
                scratch.batch_pairs[p * l + q] += ap * a[q];
            }
        }
        scratch.batch_current += j;
        if !scratch.window.is_empty() {
            for (site, z) in a.iter().enumerate() {
                scratch.window[site * lay.window_samples + w] = *z;
            }
        }
        scratch.batch_fill += 1;
        let last_batch = scratch.batches_done + 1 == lay.batches;
        if scratch.batch_fill == lay.batch_samples && !last_batch {
            self.flush_batch(scratch);
        }
    }

    fn flush_batch(&mut self, s: &mut TrajectoryScratch) {
        let l = self.layout.sites;
        let n = s.batch_fill as f64;
        if s.batch_fill == 0 {
            return;
        }
        for site in 0..l {
            let st = &mut self.stat_actions[site];
            st.total += s.batch_actions[site];
            st.count += s.batch_fill as u64;
            st.batches.push(s.batch_actions[site] / n);
            s.batch_actions[site] = 0.0;
        }
        for p in 0..l {
            for q in p..l {
                let idx = p * l + q;
                let z = s.batch_pairs[idx];
                for (stat, v) in [(&mut self.stat_re[idx], z.re), (&mut self.stat_im[idx], z.im)] {
                    stat.total += v;
                    stat.count += s.batch_fill as u64;
                    stat.batches.push(v / n);
                }
                s.batch_pairs[idx] = C64::new(0.0, 0.0);
            }
        }
        if l >= 2 {
            let c = &mut self.stat_current;
            c.total += s.batch_current;
            c.count += s.batch_fill as u64;
            c.batches.push(s.batch_current / n);
        }
        s.batch_current = 0.0;
        s.batch_fill = 0;
        s.batches_done += 1;
    }

    fn finish_trajectory(&mut self, mut s: TrajectoryScratch) {
        self.flush_batch(&mut s);
        let n = self.layout.window_samples as f64;
        let denom = n * s.stt - s.st * s.st;
        for site in 0..self.layout.sites {
            let slope = if denom > 0.0 {
                (n * s.sti[site] - s.st * s.si[site]) / denom
            } else {
                0.0
            };
            self.slopes[site].push(slope);
        }
        if let Some(spec) = self.spectrum.as_mut() {
            spec.add(&s.window);
        }
    }

    fn into_stats(self, times: Vec<f64>, realizations: usize, window: (f64, f64)) -> EnsembleStats {
        let lay = self.layout;
        let l = lay.sites;
        let actions = (0..lay.samples)
            .map(|s| (0..l).map(|site| self.actions[s * l + site].estimate()).collect())
            .collect();
        let current = self.current.iter().map(Moments::estimate).collect();
        let spdm = if lay.record_spdm {
            (0..lay.samples)
                .map(|s| {
                    let r = s * lay.pairs()..(s + 1) * lay.pairs();
                    assemble_hermitian(l, &self.spdm_re[r.clone()], &self.spdm_im[r], Moments::estimate)
                })
                .collect()
        } else {
            Vec::new()
        };
        let to_moments = |w: &[WindowStat]| -> Vec<(f64, f64)> {
            w.iter().map(|w| { let e = w.estimate(); (e.mean, e.se) }).collect()
        };
        let re = to_moments(&self.stat_re);
        let im = to_moments(&self.stat_im);
        let mut entries = DMatrix::zeros(l, l);
        let mut errors = DMatrix::zeros(l, l);
        for p in 0..l {
            for q in p..l {
                let (r, i) = (re[p * l + q], im[p * l + q]);
                let (z, e) = if p == q {
                    (C64::new(r.0, 0.0), C64::new(r.1, 0.0))
                } else {
                    (C64::new(r.0, i.0), C64::new(r.1, i.1))
                };
                entries[(p, q)] = z;
                entries[(q, p)] = z.conj();
                errors[(p, q)] = e;
                errors[(q, p)] = e;
            }
        }
        EnsembleStats {
            times,
            actions,
            spdm,
            current,
            realizations,
            window,
            stationary_actions: self.stat_actions.iter().map(WindowStat::estimate).collect(),
            stationary_spdm: SpdmMatrix {
                entries,
                standard_errors: errors,
            },
            stationary_current: (l >= 2).then(|| self.stat_current.estimate()),
            action_slopes: self.slopes.iter().map(Moments::estimate).collect(),
            spectrum: self.spectrum.as_ref().map(SpectrumAccumulator::finish),
        }
    }
}

/// Runs `M` independent realizations of `dynamics` from `initial` and
/// returns time-resolved and stationary Monte-Carlo estimates.
///
/// Trajectory `i` uses the noise stream `(master_seed, i)`. Work is spread
/// over the current rayon pool.
pub fn run_ensemble<D: Dynamics>(
    dynamics: &D,
    initial: &OscState,
    config: &IntegratorConfig,
    ensemble: &EnsembleConfig,
) -> Result<EnsembleStats> {
    config.validate()?;
    if ensemble.realizations < 2 {
        return Err(Error::InvalidParameter {
            name: "realizations",
            reason: format!("need at least 2, got {}", ensemble.realizations),
        });
    }
    let sites = dynamics.sites();
    if initial.len() != sites {
        return Err(Error::Dimension {
            expected: sites,
            found: initial.len(),
        });
    }
    let samples = config.n_samples();
    let window_start = config.window_start().min(samples - 1);
    let window_samples = samples - window_start;
    let spacing = config.sample_interval();
    let batch_samples = match ensemble.batch_length {
        Some(b) if b > 0.0 => ((b / spacing).round() as usize).clamp(1, window_samples),
        Some(b) => {
            return Err(Error::InvalidParameter {
                name: "batch_length",
                reason: format!("must be positive, got {b}"),
            })
        }
        None => window_samples,
    };
    let layout = Layout {
        sites,
        samples,
        window_start,
        window_samples,
        batch_samples,
        batches: (window_samples / batch_samples).max(1),
        spacing,
        hopping: dynamics.hopping(),
        record_spdm: ensemble.record_spdm_series,
    };
    let proto_spectrum = ensemble
        .spectrum
        .then(|| SpectrumAccumulator::new(sites, window_samples, spacing));

    let run_block = |block: usize| -> Result<Accumulator> {
        let mut acc = Accumulator::new(layout, proto_spectrum.as_ref().map(|s| s.empty_like()));
        let start = block * BLOCK_SIZE;
        let end = (start + BLOCK_SIZE).min(ensemble.realizations);
        for index in start..end {
            let mut stream = NoiseStream::new(ensemble.master_seed, index as u64);
            let mut scratch = TrajectoryScratch::new(&layout, ensemble.spectrum);
            simulate_with(&initial.0, dynamics, config, &mut stream, |s, _, a| {
                acc.observe(&mut scratch, s, a)
            })
            .map_err(|e| Error::Trajectory {
                index: index as u64,
                source: Box::new(e),
            })?;
            acc.finish_trajectory(scratch);
        }
        Ok(acc)
    };

    let n_blocks = ensemble.realizations.div_ceil(BLOCK_SIZE);
    let wave = (rayon::current_num_threads() * 2).max(1);
    let mut total: Option<Accumulator> = None;
    let mut first = 0;
    while first < n_blocks {
        let last = (first + wave).min(n_blocks);
        let results: Vec<Result<Accumulator>> = (first..last).into_par_iter().map(run_block).collect();
        for r in results {
            let acc = r?;
            match total.as_mut() {
                None => {
                    let mut t = acc.empty_like();
                    t.merge(&acc);
                    total = Some(t);
                }
                Some(t) => t.merge(&acc),
            }
        }
        first = last;
    }
    let total = total.expect("at least one block");
    let times = config.sample_times();
    let window = (times[window_start], times[samples - 1]);
    Ok(total.into_stats(times, ensemble.realizations, window))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::langevin::simulate;
    use crate::model::{ChainParams, SingleSiteParams};

    #[test]
    fn spdm_of_single_trajectory_is_outer_product() {
        let tr = Trajectory {
            times: vec![0.0],
            states: vec![OscState(vec![C64::new(1.0, 0.0), C64::new(0.0, 1.0)])],
        };
        let rho = spdm_estimate(&[tr], 0).unwrap();
        assert_eq!(rho.entries[(0, 0)], C64::new(1.0, 0.0));
        assert_eq!(rho.entries[(0, 1)], C64::new(0.0, 1.0));
        assert_eq!(rho.entries[(1, 0)], C64::new(0.0, -1.0));
        assert_eq!(rho.entries[(1, 1)], C64::new(1.0, 0.0));
    }

    #[test]
    fn spdm_estimate_rejects_bad_input() {
        let a = Trajectory { times: vec![0.0], states: vec![OscState::zeros(2)] };
        let b = Trajectory { times: vec![0.5], states: vec![OscState::zeros(2)] };
        assert!(matches!(spdm_estimate(&[a.clone(), b], 0), Err(Error::GridMismatch(_))));
        assert!(spdm_estimate(&[a], 3).is_err());
        assert!(spdm_estimate(&[], 0).is_err());
    }

    #[test]
    fn current_examples() {
        let mut rho = SpdmMatrix::zeros(2);
        rho.entries[(0, 1)] = C64::new(0.0, 0.1);
        rho.entries[(1, 0)] = C64::new(0.0, -0.1);
        assert!((current_from_spdm(&rho, 1.0) - 0.1).abs() < 1e-15);
        let sym = SpdmMatrix::exact(DMatrix::from_fn(3, 3, |i, j| C64::new(1.0 / (1 + i + j) as f64, 0.0)));
        assert_eq!(current_from_spdm(&sym, 1.0), 0.0);
        assert_eq!(current_from_spdm(&SpdmMatrix::zeros(1), 1.0), 0.0);
    }

    fn short_config() -> IntegratorConfig {
        IntegratorConfig { dt: 0.01, t_final: 6.0, sample_stride: 10, transient: 2.0 }
    }

    #[test]
    fn undriven_chain_stays_at_rest() {
        let p = ChainParams { d1: 0.0, d_l: 0.0, g: 2.0, ..Default::default() };
        let ens = EnsembleConfig { realizations: 20, record_spdm_series: true, ..Default::default() };
        let stats = run_ensemble(&p, &OscState::zeros(5), &short_config(), &ens).unwrap();
        assert!(stats.actions.iter().flatten().all(|e| e.mean == 0.0 && e.se == 0.0));
        assert!(stats.current.iter().all(|e| e.mean == 0.0));
        assert!(stats.stationary_spdm.entries.iter().all(|z| *z == C64::new(0.0, 0.0)));
        assert_eq!(stats.stationary_current.unwrap().mean, 0.0);
    }

    #[test]
    fn ensemble_matches_direct_trajectory_average() {
        let p = ChainParams { g: 1.0, length: 3, ..Default::default() };
        let cfg = short_config();
        let ens = EnsembleConfig {
            realizations: 37,
            master_seed: 5,
            record_spdm_series: true,
            ..Default::default()
        };
        let stats = run_ensemble(&p, &OscState::zeros(3), &cfg, &ens).unwrap();
        let trajs: Vec<Trajectory> = (0..37)
            .map(|i| simulate(&OscState::zeros(3), &p, &cfg, &mut NoiseStream::new(5, i)).unwrap())
            .collect();
        for s in [0, 10, 60] {
            let rho = spdm_estimate(&trajs, s).unwrap();
            let diff = (&rho.entries - &stats.spdm[s].entries).map(|z| z.norm()).max();
            assert!(diff < 1e-12, "sample {s}: {diff}");
            for site in 0..3 {
                assert!((stats.actions[s][site].mean - rho.entries[(site, site)].re).abs() < 1e-12);
                assert!(stats.spdm[s].entries[(site, site)].im.abs() < 1e-12);
            }
            let j = current_from_spdm(&rho, p.hopping);
            assert!((stats.current[s].mean - j).abs() < 1e-12);
        }
        // stationary: time average over samples 20..=60
        let mut direct = 0.0;
        for tr in &trajs {
            for st in &tr.states[20..] {
                direct += st.0[1].norm_sqr();
            }
        }
        direct /= (37 * 41) as f64;
        assert!((stats.stationary_actions[1].mean - direct).abs() < 1e-12);
        assert_eq!(stats.window, (2.0, 6.0));
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let p = ChainParams { g: 2.0, ..Default::default() };
        let ens = EnsembleConfig { realizations: 70, master_seed: 3, spectrum: true, ..Default::default() };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_ensemble(&p, &OscState::zeros(5), &short_config(), &ens).unwrap())
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(a.stationary_spdm, b.stationary_spdm);
        assert_eq!(a.actions, b.actions);
        assert_eq!(a.current, b.current);
        assert_eq!(a.spectrum, b.spectrum);
    }

    #[test]
    fn batch_errors_are_consistent_with_trajectory_errors() {
        let p = SingleSiteParams::default();
        let cfg = IntegratorConfig { dt: 0.01, t_final: 60.0, sample_stride: 10, transient: 20.0 };
        let whole = EnsembleConfig { realizations: 200, master_seed: 1, ..Default::default() };
        let batched = EnsembleConfig { batch_length: Some(10.0), ..whole };
        let a = run_ensemble(&p, &OscState::zeros(1), &cfg, &whole).unwrap();
        let b = run_ensemble(&p, &OscState::zeros(1), &cfg, &batched).unwrap();
        assert!((a.stationary_actions[0].mean - b.stationary_actions[0].mean).abs() < 1e-12);
        let ratio = b.stationary_actions[0].se / a.stationary_actions[0].se;
        assert!((0.6..1.6).contains(&ratio), "{ratio}");
        assert!(a.stationary_current.is_none() && a.current.is_empty());
    }

    #[test]
    fn invalid_ensemble_requests() {
        let p = ChainParams::default();
        let one = EnsembleConfig { realizations: 1, ..Default::default() };
        assert!(run_ensemble(&p, &OscState::zeros(5), &short_config(), &one).is_err());
        let ok = EnsembleConfig { realizations: 4, ..Default::default() };
        assert!(run_ensemble(&p, &OscState::zeros(4), &short_config(), &ok).is_err());
        let bad_batch = EnsembleConfig { batch_length: Some(-1.0), ..ok };
        assert!(run_ensemble(&p, &OscState::zeros(5), &short_config(), &bad_batch).is_err());
    }

    #[test]
    fn divergence_names_the_trajectory() {
        let p = ChainParams { hopping: 10.0, ..Default::default() };
        let cfg = IntegratorConfig { dt: 0.5, t_final: 50.0, sample_stride: 1, transient: 1.0 };
        let ens = EnsembleConfig { realizations: 4, ..Default::default() };
        match run_ensemble(&p, &OscState::zeros(5), &cfg, &ens) {
            Err(Error::Trajectory { index, source }) => {
                assert!(index < 4);
                assert!(matches!(*source, Error::Diverged { .. }));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
