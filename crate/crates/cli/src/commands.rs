use std::io::Write;

use chrono::Utc;
use lqetc::analysis::{
    closed_form_pst_cost, mss_check, mss_radius, priority_coefficients,
    utility_optimal_probabilities, UtilityConfig, SERIES_TOLERANCE,
};
use lqetc::linalg::spectral_radius;
use lqetc::plant::validate_plant;
use lqetc::presets::{reference_grid_p, REFERENCE_GRID_Q, REFERENCE_PRESET};
use lqetc::report::{format_significant, render_csv, CsvRow};
use lqetc::reproduce::{reproduce_all, ReproduceOptions};
use lqetc::sim::{performance_gain, sweep_grid, Experiment};
use lqetc::{GainSet, NetworkConfig, Policy};
use nalgebra::DMatrix;
use serde_json::json;

use crate::config::{self, Loaded, Overrides, ResolvedConfig, SweepSpec};
use crate::manifest::{sidecar_path, RunManifest};
use crate::{Cli, CliError};

fn overrides(cli: &Cli) -> Overrides {
    Overrides {
        seed: cli.seed,
        runs: cli.runs,
        horizon: cli.horizon,
        grid_p: cli.grid_p.clone(),
        grid_q: cli.grid_q.clone(),
        policy: cli.policy,
    }
}

/// Loads the configuration (the reference preset when none is given) and
/// applies command-line values, warning about each replaced one.
fn resolve(cli: &Cli) -> Result<ResolvedConfig, CliError> {
    let Loaded {
        mut config,
        seed_from_file,
    } = config::load(cli.config.as_deref().unwrap_or(REFERENCE_PRESET))?;
    for w in config.apply(&overrides(cli), seed_from_file) {
        eprintln!("warning: {w}");
    }
    config.validate_sweep()?;
    Ok(config)
}

fn format_matrix(m: &DMatrix<f64>) -> String {
    if m.len() == 1 {
        return format!("{:.4}", m[(0, 0)]);
    }
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| {
            let cells: Vec<String> = r.iter().map(|x| format!("{x:.4}")).collect();
            format!("[{}]", cells.join(", "))
        })
        .collect();
    format!("[{}]", rows.join(", "))
}

fn matrix_json(m: &DMatrix<f64>) -> serde_json::Value {
    json!(m.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>())
}

pub fn gains(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve(cli)?;
    let mut out = String::new();
    let mut records = Vec::new();
    for (i, l) in cfg.loops.iter().enumerate() {
        let params = l.params()?;
        let g = GainSet::solve(&params)?;
        out.push_str(&format!("loop {i}\n"));
        for (name, m) in [
            ("K", &g.k),
            ("L", &g.l),
            ("P", &g.p),
            ("Theta_bar", &g.theta_bar),
            ("Theta", &g.theta),
            ("Phi", &g.phi),
            ("Y", &g.y),
        ] {
            out.push_str(&format!("  {name} = {}\n", format_matrix(m)));
        }
        out.push_str(&format!("  tr(PW) = {:.6}\n", g.cost_floor(&params)));
        records.push(json!({
            "loop": i,
            "K": matrix_json(&g.k),
            "L": matrix_json(&g.l),
            "P": matrix_json(&g.p),
            "Theta_bar": matrix_json(&g.theta_bar),
            "Theta": matrix_json(&g.theta),
            "Phi": matrix_json(&g.phi),
            "Y": matrix_json(&g.y),
        }));
    }
    print!("{out}");
    if let Some(path) = &cli.out {
        let text = serde_json::to_string_pretty(&records).expect("gains serialize");
        std::fs::write(path, text + "\n")?;
    }
    Ok(())
}

fn loop_availability(cfg: &ResolvedConfig, index: usize) -> Result<f64, CliError> {
    Ok(match cfg.network()? {
        NetworkConfig::Abstracted { q } => q,
        NetworkConfig::Full => cfg
            .loops
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != index)
            .map(|(_, l)| 1.0 - l.p)
            .product(),
    })
}

pub fn check(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve(cli)?;
    let mut failures = 0usize;
    for (i, l) in cfg.loops.iter().enumerate() {
        let params = l.params()?;
        println!("loop {i}");
        let report = validate_plant(&params)?;
        if report.passed() {
            println!("  plant: ok");
        } else {
            failures += 1;
            for v in &report.violations {
                println!("  plant: {v}");
            }
        }
        match GainSet::solve(&params) {
            Ok(g) => {
                let cl = spectral_radius(&(&params.a + &params.b * &g.k));
                println!("  closed loop: rho(A + BK) = {cl:.6}");
            }
            Err(e) => {
                failures += 1;
                println!("  gains: {e}");
            }
        }
        let q = loop_availability(&cfg, i)?;
        let stable = mss_check(&params, l.p, q)?;
        println!(
            "  mean-square stability at p = {}, q = {}: {} (sqrt(1 - qp) rho(A) = {:.6})",
            l.p,
            q,
            if stable { "yes" } else { "no" },
            mss_radius(&params, l.p * q)
        );
        if !stable {
            eprintln!("warning: loop {i} is not mean-square stable at its configured probabilities");
        }
    }
    if failures > 0 {
        return Err(CliError::Validation(format!("{failures} loop(s) failed validation")));
    }
    Ok(())
}

fn grids(cfg: &ResolvedConfig) -> (Vec<f64>, Vec<f64>) {
    match &cfg.sweep {
        Some(SweepSpec { grid_p, grid_q, .. }) => (grid_p.clone(), grid_q.clone()),
        None => (reference_grid_p(), REFERENCE_GRID_Q.to_vec()),
    }
}

pub fn cost(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve(cli)?;
    let (grid_p, grid_q) = grids(&cfg);
    let f = |x: f64| format_significant(x, 10);
    let mut text = String::from("loop,p,q,eta,mss_radius,J_ps\n");
    for (i, l) in cfg.loops.iter().enumerate() {
        let params = l.params()?;
        let g = GainSet::solve(&params)?;
        for &q in &grid_q {
            for &p in &grid_p {
                let j = match closed_form_pst_cost(&params, &g, p, q, SERIES_TOLERANCE) {
                    Ok(j) => j,
                    Err(lqetc::Error::CostDiverges(_)) => f64::INFINITY,
                    Err(e) => return Err(e.into()),
                };
                text.push_str(&format!(
                    "{i},{},{},{},{},{}\n",
                    f(p),
                    f(q),
                    f(p * q),
                    f(mss_radius(&params, p * q)),
                    f(j)
                ));
            }
        }
    }
    emit(cli, "cost", &cfg, &text)
}

/// Writes `text` to `--out` with a manifest sidecar, or to stdout.
fn emit(cli: &Cli, command: &str, cfg: &ResolvedConfig, text: &str) -> Result<(), CliError> {
    let started = Utc::now();
    match &cli.out {
        Some(path) => {
            std::fs::write(path, text)?;
            RunManifest::new(command, cfg, started).write(&sidecar_path(path))?;
            eprintln!("wrote {}", path.display());
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

pub fn simulate(cli: &Cli) -> Result<(), CliError> {
    let started = Utc::now();
    let cfg = resolve(cli)?;
    let exp_cfg = cfg.experiment()?;
    let exp = Experiment::prepare(&exp_cfg)?;
    for w in exp.mss_warnings() {
        eprintln!("warning: {w}");
    }

    let rows: Vec<CsvRow> = match &cfg.sweep {
        Some(s) => {
            let policies = cfg.sweep_policies()?;
            sweep_grid(&exp_cfg, &policies, &s.grid_p, &s.grid_q)?
                .iter()
                .map(CsvRow::from_sweep)
                .collect()
        }
        None => {
            let result = exp.run_monte_carlo()?;
            let baseline = if exp_cfg.loops.iter().all(|l| l.policy == Policy::Pst) {
                result.clone()
            } else {
                let mut base_cfg = exp_cfg.clone();
                for l in &mut base_cfg.loops {
                    l.policy = Policy::Pst;
                    l.p_schedule = None;
                }
                base_cfg.record_level = lqetc::sim::RecordLevel::Costs;
                Experiment::prepare(&base_cfg)?.run_monte_carlo()?
            };
            let rows = result
                .loops
                .iter()
                .zip(&baseline.loops)
                .map(|(s, b)| {
                    let gain = performance_gain(b, s).ok();
                    CsvRow::from_summary(s, gain)
                })
                .collect::<Vec<_>>();
            let diverged: usize = result.loops.iter().map(|s| s.diverged_runs.len()).sum();
            if diverged > 0 {
                let text = render_csv(&rows);
                write_rows(cli, &cfg, &text, started)?;
                return Err(CliError::Divergence(format!(
                    "{diverged} episode(s) crossed the divergence threshold"
                )));
            }
            rows
        }
    };
    write_rows(cli, &cfg, &render_csv(&rows), started)
}

fn write_rows(
    cli: &Cli,
    cfg: &ResolvedConfig,
    text: &str,
    started: chrono::DateTime<Utc>,
) -> Result<(), CliError> {
    match &cli.out {
        Some(path) => {
            std::fs::write(path, text)?;
            RunManifest::new("simulate", cfg, started).write(&sidecar_path(path))?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

pub fn tune(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve(cli)?;
    let spec = cfg.priorities.clone().unwrap_or(config::PrioritySpec {
        method: "equal".into(),
        c: None,
        alpha: None,
        m: None,
    });
    let c = match spec.method.as_str() {
        "explicit" => spec.c.clone().unwrap_or_default(),
        "equal" => {
            let m = spec.m.unwrap_or(cfg.loops.len());
            if m == 0 {
                return Err(CliError::Config("equal priorities need m >= 1 or at least one loop".into()));
            }
            vec![1.0; m]
        }
        _ => {
            let alpha = spec.alpha.clone().unwrap_or_default();
            let plants = cfg.loops.iter().map(|l| l.params()).collect::<Result<Vec<_>, _>>()?;
            let gains = plants.iter().map(GainSet::solve).collect::<Result<Vec<_>, _>>()?;
            let pairs: Vec<_> = plants.iter().zip(&gains).collect();
            priority_coefficients(&pairs, &alpha)?
        }
    };
    let p = utility_optimal_probabilities(&UtilityConfig { c: c.clone(), alpha: vec![] })?;
    let mut text = String::from("loop,c,p_star\n");
    for (i, (ci, pi)) in c.iter().zip(&p).enumerate() {
        text.push_str(&format!("{i},{},{}\n", format_significant(*ci, 10), format_significant(*pi, 10)));
    }
    emit(cli, "tune", &cfg, &text)
}

pub fn reproduce(cli: &Cli) -> Result<(), CliError> {
    let started = Utc::now();
    if cli.config.is_some() {
        eprintln!("warning: --config is ignored; the reference example is fixed");
    }
    let mut opts = ReproduceOptions::new(cli.seed.map_or_else(config::default_seed, Ok)?);
    if let Some(r) = cli.runs {
        opts.runs = r;
    }
    if let Some(h) = cli.horizon {
        opts.horizon = h;
    }
    let outcome = reproduce_all(&opts)?;
    for r in &outcome.reports {
        println!("{r}");
    }
    if let Some(path) = &cli.out {
        let rows: Vec<CsvRow> = outcome.rows.iter().map(CsvRow::from_sweep).collect();
        std::fs::write(path, render_csv(&rows))?;
        let mut cfg = ResolvedConfig::from_preset(REFERENCE_PRESET, opts.seed).expect("preset exists");
        cfg.runs = opts.runs;
        cfg.horizon = opts.horizon;
        cfg.record_level = "moments".into();
        cfg.sweep = Some(SweepSpec {
            grid_p: reference_grid_p(),
            grid_q: REFERENCE_GRID_Q.to_vec(),
            policies: vec!["pst".into(), "cett".into()],
        });
        RunManifest::new("reproduce-paper", &cfg, started).write(&sidecar_path(path))?;
        eprintln!("wrote {}", path.display());
    }
    let failed: Vec<String> = outcome
        .reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.id.to_string())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Acceptance(format!("criteria failed: {}", failed.join(", "))))
    }
}
