//! The four experiments. Each returns its tables plus a partially filled
//! manifest; [`crate::execute`] writes them.

use openchain::model::{transport_regime, Dynamics};
use openchain::quantum_oracle::relaxation_curve;
use openchain::stats::weighted_line_fit;
use openchain::{
    lorentzian_reference, relaxation_time, run_ensemble, spectral_centroid, stationary_spdm, EnsembleConfig, EnsembleStats,
    ChainParams, Estimate, IntegratorConfig, MasterForm, OscState, OscillatorQuantumParams,
};
use serde_json::json;

use crate::config::{CommandKind, Settings};
use crate::manifest::{Check, LabelledIntegrator};
use crate::output::{numbered, Cell, Table};
use crate::CliError;

/// Everything a command produced, before anything touches the disk.
#[derive(Debug)]
pub struct CommandOutput {
    pub tables: Vec<Table>,
    pub integrators: Vec<LabelledIntegrator>,
    pub checks: Vec<Check>,
    pub results: serde_json::Value,
}

/// Relative tolerance for the discrete sum rule, an estimator identity.
const SUM_RULE_TOLERANCE: f64 = 1e-12;

pub fn run(settings: &Settings) -> Result<CommandOutput, CliError> {
    match settings.command {
        CommandKind::Relax => cmd_relax(settings),
        CommandKind::Chain => cmd_chain(settings),
        CommandKind::Spectra => cmd_spectra(settings),
        CommandKind::Scaling => cmd_scaling(settings),
    }
}

fn ensemble_config(s: &Settings, spectrum: bool) -> EnsembleConfig {
    EnsembleConfig {
        realizations: s.realizations,
        master_seed: s.seed,
        record_spdm_series: false,
        spectrum,
        batch_length: s.batch_length,
    }
}

fn core(context: impl Into<String>) -> impl FnOnce(openchain::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Core { context, source }
}

fn labelled(label: String, integrator: IntegratorConfig) -> LabelledIntegrator {
    LabelledIntegrator { label, integrator }
}

fn estimate_json(e: &Estimate) -> serde_json::Value {
    json!({ "mean": e.mean, "se": e.se })
}

/// Single-oscillator relaxation from the vacuum.
pub fn cmd_relax(s: &Settings) -> Result<CommandOutput, CliError> {
    let g = s.g[0];
    let single = s.single_site(g)?;
    let rate = single.relaxation_rate();
    let cfg = s.integrator(rate, 1.0 / rate, 1)?;
    let stats = run_ensemble(&single, &OscState::zeros(1), &cfg, &ensemble_config(s, false))
        .map_err(core("classical ensemble"))?;

    let interaction = s.interaction.unwrap_or(if s.nbar > 0.0 { g / s.nbar } else { 0.0 });
    let form = if s.d == s.gamma { MasterForm::Lindblad } else { MasterForm::Split };
    let quantum = OscillatorQuantumParams {
        omega: s.omega,
        interaction,
        nbar: s.nbar,
        gamma: s.gamma,
        d: s.d,
        form,
    };
    let diffusion_only = OscillatorQuantumParams {
        gamma: 0.0,
        form: MasterForm::Split,
        ..quantum
    };
    for p in [&quantum, &diffusion_only] {
        p.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if s.nbar <= 0.0 {
        return Err(CliError::Usage("key `nbar`: relax reports N / nbar and needs nbar > 0".into()));
    }
    let n_quantum = relaxation_curve(&quantum, &stats.times).map_err(core("quantum oracle"))?;
    let n_diffusion = relaxation_curve(&diffusion_only, &stats.times).map_err(core("diffusion-only oracle"))?;

    let mut table = Table::new(
        "relax.csv",
        ["t", "N_quantum/nbar", "N_diffusion_only/nbar", "I_classical", "I_se"]
            .map(String::from)
            .to_vec(),
    );
    for (i, &t) in stats.times.iter().enumerate() {
        let c = stats.actions[i][0];
        table.push(vec![
            t.into(),
            (n_quantum[i] / s.nbar).into(),
            (n_diffusion[i] / s.nbar).into(),
            c.mean.into(),
            c.se.into(),
        ]);
    }
    let last = stats.times.len() - 1;
    let results = json!({
        "master_form": format!("{form:?}").to_lowercase(),
        "final": {
            "t": stats.times[last],
            "quantum": n_quantum[last] / s.nbar,
            "diffusion_only": n_diffusion[last] / s.nbar,
            "classical": estimate_json(&stats.actions[last][0]),
        },
    });
    Ok(CommandOutput {
        tables: vec![table],
        integrators: vec![labelled(format!("g={g}"), cfg)],
        checks: Vec::new(),
        results,
    })
}

/// Slowest relaxation time of the chain's linear part, or `1 / gamma` when
/// some mode is undamped.
fn chain_relaxation_time(p: &ChainParams) -> f64 {
    relaxation_time(p).unwrap_or(1.0 / p.relaxation_rate())
}

/// Linear-chain oracle when it applies (`g = 0`, both reservoirs damped).
fn linear_reference(s: &Settings, g: f64, length: usize) -> Result<Option<openchain::SpdmMatrix>, CliError> {
    if g != 0.0 || s.gamma1 <= 0.0 || s.gamma_l <= 0.0 {
        return Ok(None);
    }
    let p = s.chain(length, g)?;
    stationary_spdm(&p).map(Some).map_err(core("linear oracle"))
}

pub fn cmd_chain(s: &Settings) -> Result<CommandOutput, CliError> {
    let l = s.length;
    let mut actions = Table::new("actions.csv", {
        let mut h = vec!["g".to_string(), "t".to_string()];
        h.extend(numbered("I", l));
        h.extend(numbered("se", l));
        h
    });
    let mut current = Table::new("current.csv", ["g", "t", "j", "j_se"].map(String::from).to_vec());
    let mut stationary = Table::new(
        "stationary.csv",
        ["g", "site", "I", "I_se", "oracle_I", "bond_j", "bond_j_se", "oracle_bond_j"]
            .map(String::from)
            .to_vec(),
    );
    let mut integrators = Vec::new();
    let mut checks = Vec::new();
    let mut per_g = Vec::new();

    for &g in &s.g {
        let p = s.chain(l, g)?;
        let cfg = s.integrator(p.relaxation_rate(), chain_relaxation_time(&p), l)?;
        let stats = run_ensemble(&p, &OscState::zeros(l), &cfg, &ensemble_config(s, false))
            .map_err(core(format!("chain ensemble at g = {g}")))?;
        integrators.push(labelled(format!("g={g}"), cfg));

        for (i, &t) in stats.times.iter().enumerate() {
            let mut row: Vec<Cell> = vec![g.into(), t.into()];
            row.extend(stats.actions[i].iter().map(|e| Cell::from(e.mean)));
            row.extend(stats.actions[i].iter().map(|e| Cell::from(e.se)));
            actions.push(row);
            let j = stats.current[i];
            current.push(vec![g.into(), t.into(), j.mean.into(), j.se.into()]);
        }

        let oracle = linear_reference(s, g, l)?;
        let oracle_actions = oracle.as_ref().map(|o| o.actions());
        let oracle_bonds = oracle.as_ref().map(|o| o.bond_currents(s.hopping));
        let bonds = stats.stationary_bond_currents(s.hopping);
        for site in 0..l {
            let bond = bonds.get(site);
            stationary.push(vec![
                g.into(),
                (site + 1).into(),
                stats.stationary_actions[site].mean.into(),
                stats.stationary_actions[site].se.into(),
                oracle_actions.as_ref().map(|a| a[site]).into(),
                bond.map(|b| b.mean).into(),
                bond.map(|b| b.se).into(),
                oracle_bonds.as_ref().and_then(|b| b.get(site).copied()).into(),
            ]);
        }

        let j = stats.stationary_current.expect("chains have bonds");
        if let Some(o) = &oracle {
            let reference = openchain::current_from_spdm(o, s.hopping);
            checks.push(Check::new(format!("g={g} stationary current vs linear oracle"), j.mean, reference, 3.0 * j.se));
            for site in 0..l {
                let e = stats.stationary_actions[site];
                checks.push(Check::new(
                    format!("g={g} action site {} vs linear oracle", site + 1),
                    e.mean,
                    o.actions()[site],
                    3.0 * e.se,
                ));
            }
        }
        let means: Vec<f64> = stats.stationary_actions.iter().map(|e| e.mean).collect();
        let regime = transport_regime(&means, &p).map_err(core("regime"))?;
        per_g.push(json!({
            "g": g,
            "window": [stats.window.0, stats.window.1],
            "stationary_current": estimate_json(&j),
            "stationary_actions": stats.stationary_actions.iter().map(estimate_json).collect::<Vec<_>>(),
            "action_slopes": stats.action_slopes.iter().map(estimate_json).collect::<Vec<_>>(),
            "regime": regime.to_string(),
        }));
    }
    Ok(CommandOutput {
        tables: vec![actions, current, stationary],
        integrators,
        checks,
        results: json!({ "runs": per_g }),
    })
}

fn sum_rule_checks(label: &str, stats: &EnsembleStats, checks: &mut Vec<Check>) -> Result<(), CliError> {
    let spectrum = stats.spectrum.as_ref().expect("spectrum requested");
    for site in 0..spectrum.sites() {
        let integral = spectrum.integrated(site).map_err(core("sum rule"))?;
        let action = spectrum.window_actions[site].mean;
        checks.push(Check::new(
            format!("{label} sum rule site {}", site + 1),
            integral,
            action,
            SUM_RULE_TOLERANCE * action.abs().max(1.0),
        ));
    }
    Ok(())
}

pub fn cmd_spectra(s: &Settings) -> Result<CommandOutput, CliError> {
    let sites = if s.single_site { 1 } else { s.length };
    let mut header = vec!["g".to_string(), "nu".to_string()];
    header.extend(numbered("P", sites));
    header.extend(numbered("se", sites));
    if s.single_site {
        header.push("lorentzian".into());
    }
    let mut table = Table::new("spectrum.csv", header);
    let mut integrators = Vec::new();
    let mut checks = Vec::new();
    let mut per_g = Vec::new();

    for &g in &s.g {
        let label = format!("g={g}");
        let (stats, cfg) = if s.single_site {
            let p = s.single_site(g)?;
            let tau = 1.0 / p.relaxation_rate();
            spectra_ensemble(s, &p, tau, sites, &label)?
        } else {
            let p = s.chain(s.length, g)?;
            spectra_ensemble(s, &p, chain_relaxation_time(&p), sites, &label)?
        };
        integrators.push(labelled(label.clone(), cfg));
        sum_rule_checks(&label, &stats, &mut checks)?;
        let spectrum = stats.spectrum.as_ref().expect("spectrum requested");
        for (k, &nu) in spectrum.frequencies.iter().enumerate() {
            let mut row: Vec<Cell> = vec![g.into(), nu.into()];
            row.extend(spectrum.densities.iter().map(|p| Cell::from(p[k])));
            row.extend(spectrum.standard_errors.iter().map(|e| Cell::from(e[k])));
            if s.single_site {
                row.push(if g == 0.0 {
                    lorentzian_reference(nu, s.omega, s.gamma, s.d).into()
                } else {
                    Cell::Empty
                });
            }
            table.push(row);
        }
        let mut centroids = Vec::with_capacity(sites);
        let mut peaks = Vec::with_capacity(sites);
        for site in 0..sites {
            centroids.push(spectral_centroid(spectrum, site).map_err(core("centroid"))?);
            peaks.push(spectrum.peak_frequency(site).map_err(core("peak"))?);
        }
        per_g.push(json!({
            "g": g,
            "window_length": spectrum.window_length,
            "bin_width": spectrum.bin_width(),
            "centroids": centroids,
            "peak_frequencies": peaks,
            "window_actions": spectrum.window_actions.iter().map(estimate_json).collect::<Vec<_>>(),
        }));
    }
    Ok(CommandOutput {
        tables: vec![table],
        integrators,
        checks,
        results: json!({ "runs": per_g }),
    })
}

fn spectra_ensemble<D: Dynamics>(
    s: &Settings,
    p: &D,
    tau: f64,
    sites: usize,
    label: &str,
) -> Result<(EnsembleStats, IntegratorConfig), CliError> {
    let rate = p.relaxation_rate();
    let cfg = s.integrator(rate, tau, sites)?;
    let window = cfg.t_final - cfg.transient;
    let required = 20.0 / rate;
    if window < required {
        return Err(CliError::Usage(format!(
            "keys `t-final`, `transient`: spectral window {window} is shorter than 20 / gamma = {required}"
        )));
    }
    let stats = run_ensemble(p, &OscState::zeros(sites), &cfg, &ensemble_config(s, true))
        .map_err(core(format!("spectra ensemble at {label}")))?;
    Ok((stats, cfg))
}

pub fn cmd_scaling(s: &Settings) -> Result<CommandOutput, CliError> {
    let g = s.g[0];
    let mut table = Table::new("scaling.csv", ["L", "inv_L", "j", "j_se", "regime"].map(String::from).to_vec());
    let mut integrators = Vec::new();
    let mut currents = Vec::new();
    let mut inv_l = Vec::new();
    let mut rows = Vec::new();
    let largest = *s.lengths.iter().max().expect("validated non-empty");
    let mut profile = None;

    for &l in &s.lengths {
        let p = s.chain(l, g)?;
        let rate = p.relaxation_rate();
        let cfg = s.integrator(rate, 1.0 / rate, l)?;
        let stats = run_ensemble(&p, &OscState::zeros(l), &cfg, &ensemble_config(s, false))
            .map_err(core(format!("scaling ensemble at L = {l}")))?;
        integrators.push(labelled(format!("L={l}"), cfg));
        let j = stats.stationary_current.expect("chains have bonds");
        let means: Vec<f64> = stats.stationary_actions.iter().map(|e| e.mean).collect();
        let regime = transport_regime(&means, &p).map_err(core(format!("regime at L = {l}")))?;
        table.push(vec![
            l.into(),
            (1.0 / l as f64).into(),
            j.mean.into(),
            j.se.into(),
            Cell::Text(regime.to_string()),
        ]);
        currents.push(j);
        inv_l.push(1.0 / l as f64);
        rows.push(json!({ "L": l, "current": estimate_json(&j), "regime": regime.to_string() }));
        if l == largest && profile.is_none() {
            profile = Some(stats.stationary_actions.clone());
        }
    }

    let mut profile_table = Table::new("profile.csv", ["site", "I", "I_se"].map(String::from).to_vec());
    for (site, e) in profile.expect("largest length was run").iter().enumerate() {
        profile_table.push(vec![(site + 1).into(), e.mean.into(), e.se.into()]);
    }
    let fit = weighted_line_fit(&inv_l, &currents).map(|f| {
        json!({
            "slope": estimate_json(&f.slope),
            "intercept": estimate_json(&f.intercept),
            "r_squared": f.r_squared,
        })
    });
    Ok(CommandOutput {
        tables: vec![table, profile_table],
        integrators,
        checks: Vec::new(),
        results: json!({ "g": g, "profile_length": largest, "lengths": rows, "fit": fit }),
    })
}
