//! Config-driven runs and sweeps with file output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::dynamics::{integrate, pathwise_cost, terminal_residual, terminal_residual_shifted, CostBreakdown, Quadrature};
use crate::error::{Error, Result};
use crate::measures::ValueState;
use crate::models::{Model, ParamCheckpoint};
use crate::potentials::PotentialParts;
use crate::render::render_svg;
use crate::training::{train, Optimizer, TrainReport};

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub quadrature: Option<Quadrature>,
    pub optimizer: Option<Optimizer>,
}

impl Overrides {
    pub fn apply(&self, config: &mut ScenarioConfig) {
        if let Some(seed) = self.seed {
            config.training.seed = seed;
        }
        if let Some(dir) = &self.out_dir {
            config.output.dir = dir.clone();
        }
        if let Some(q) = self.quadrature {
            config.quadrature = q;
        }
        if let Some(o) = self.optimizer {
            config.training.optimizer = o;
        }
    }
}

/// Deterministic per-run metrics written to `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scenario: String,
    pub nodes: usize,
    pub edges: usize,
    pub model: String,
    pub num_params: usize,
    pub seed: u64,
    pub epochs: usize,
    /// Trailing-window averages of ∫𝒦 dt and 𝒢(ρ(T)).
    pub kinetic: f64,
    pub terminal: f64,
    pub kinetic_per_node: f64,
    pub terminal_per_node: f64,
    pub report_window: usize,
    /// Unweighted running-potential integrals of the final trajectory.
    pub potentials: PotentialParts,
    /// Full breakdown of the final trajectory.
    pub final_cost: CostBreakdown,
    /// (1/n)‖ρ(T) − μ_T‖₁ of the final trajectory.
    pub l1_per_node: f64,
    pub terminal_residual: f64,
    pub terminal_residual_shifted: f64,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub min_rho: f64,
    pub mass_drift: f64,
}

/// Trains one scenario and returns its metrics and report without writing files.
pub fn execute(config: &ScenarioConfig) -> Result<(RunMetrics, TrainReport, Vec<f64>)> {
    let sc = config.build()?;
    let model = Model::new(config.model, &sc.graph);
    let report = train(&sc.graph, &sc.problem, &model, &config.training)?;
    let s0 = model.eval(&report.final_params);
    let traj = integrate(&ValueState::new(s0.clone())?, &sc.mu0, &sc.spec, &sc.graph, config.dt, config.m_steps)?;
    let final_cost = pathwise_cost(&traj, &sc.spec, config.quadrature);
    let n = sc.graph.n();
    let l1 = traj.final_rho().iter().zip(sc.mu_t.as_slice()).map(|(a, b)| (a - b).abs()).sum::<f64>();
    let metrics = RunMetrics {
        scenario: config.name.clone(),
        nodes: n,
        edges: sc.graph.m(),
        model: config.model.name().to_string(),
        num_params: report.num_params,
        seed: config.training.seed,
        epochs: config.training.epochs,
        kinetic: report.trailing.kinetic,
        terminal: report.trailing.terminal,
        kinetic_per_node: report.trailing.kinetic_per_node,
        terminal_per_node: report.trailing.terminal_per_node,
        report_window: report.trailing.window,
        potentials: final_cost.potentials,
        final_cost,
        l1_per_node: l1 / n as f64,
        terminal_residual: terminal_residual(&traj, &sc.spec),
        terminal_residual_shifted: terminal_residual_shifted(&traj, &sc.spec),
        best_epoch: report.best_epoch,
        best_loss: report.best_loss,
        min_rho: report.min_rho.min(traj.min_rho()),
        mass_drift: report.mass_drift.max(traj.mass_drift()),
    };
    Ok((metrics, report, s0))
}

/// Trains, then writes metrics, report, trajectory, checkpoints and snapshots
/// into the config's output directory.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunMetrics> {
    let (metrics, report, s0) = execute(config)?;
    let sc = config.build()?;
    let dir = &config.output.dir;
    std::fs::create_dir_all(dir.join("snapshots"))?;

    std::fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&metrics)?)?;
    std::fs::write(dir.join("report.json"), report.to_json()?)?;
    std::fs::write(dir.join("graph.txt"), sc.graph.to_text())?;
    let n = sc.graph.n();
    for (name, params) in [("params_final.txt", &report.final_params), ("params_best.txt", &report.best_params)] {
        let ck = ParamCheckpoint { kind: config.model, seed: config.training.seed, params: params.clone() };
        std::fs::write(dir.join(name), ck.to_text(n))?;
    }

    let traj = integrate(&ValueState::new(s0)?, &sc.mu0, &sc.spec, &sc.graph, config.dt, config.m_steps)?;
    std::fs::write(dir.join("trajectory.csv"), traj.to_csv(0..=config.m_steps))?;
    for &t in &config.output.snapshots {
        let m = ((t / config.dt).round() as usize).min(config.m_steps);
        let t_label = format!("{:.2}", m as f64 * config.dt);
        let rho = render_svg(&sc.graph, &traj.rho[m], &format!("{} rho t={t_label}", config.name));
        let s = render_svg(&sc.graph, &traj.s[m], &format!("{} S t={t_label}", config.name));
        std::fs::write(dir.join("snapshots").join(format!("rho_t{t_label}.svg")), rho)?;
        std::fs::write(dir.join("snapshots").join(format!("s_t{t_label}.svg")), s)?;
    }
    Ok(metrics)
}

/// One row of a sweep summary.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub config: String,
    pub outcome: std::result::Result<RunMetrics, String>,
}

/// Expands `pattern`, runs every match (in parallel up to
/// `GRAPHMFG_THREADS` workers) and returns the rows sorted by config path.
/// A failed run is recorded in its row and does not stop the sweep.
pub fn run_sweep(pattern: &str, overrides: &Overrides) -> Result<Vec<SweepRow>> {
    let mut paths: Vec<PathBuf> = glob::glob(pattern)
        .map_err(|e| Error::config("sweep", format!("bad glob `{pattern}`: {e}")))?
        .filter_map(|p| p.ok())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::config("sweep", format!("no config matches `{pattern}`")));
    }
    let threads = std::env::var("GRAPHMFG_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config("GRAPHMFG_THREADS", e.to_string()))?;
    let rows = pool.install(|| {
        paths
            .par_iter()
            .map(|path| {
                let outcome = ScenarioConfig::load(path).and_then(|mut c| {
                    overrides.apply(&mut c);
                    if let Some(base) = &overrides.out_dir {
                        c.output.dir = base.join(&c.name);
                    }
                    run_scenario(&c)
                });
                SweepRow { config: path.display().to_string(), outcome: outcome.map_err(|e| e.to_string()) }
            })
            .collect::<Vec<_>>()
    });
    Ok(rows)
}

const COLUMNS: [&str; 8] =
    ["config", "status", "nodes", "kinetic", "terminal", "kinetic_per_node", "terminal_per_node", "l1_per_node"];

fn row_cells(row: &SweepRow) -> Vec<String> {
    let name = Path::new(&row.config).file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match &row.outcome {
        Ok(m) => vec![
            name,
            "ok".into(),
            m.nodes.to_string(),
            m.kinetic.to_string(),
            m.terminal.to_string(),
            m.kinetic_per_node.to_string(),
            m.terminal_per_node.to_string(),
            m.l1_per_node.to_string(),
        ],
        Err(e) => {
            let mut cells = vec![name, format!("error: {}", e.replace([',', '\n'], ";"))];
            cells.extend(std::iter::repeat_n(String::new(), COLUMNS.len() - 2));
            cells
        }
    }
}

/// Summary as CSV. Numbers use shortest round-trip formatting so they parse
/// back to exactly the values in each run's `metrics.json`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = COLUMNS.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row_cells(row).join(","));
        out.push('\n');
    }
    out
}

/// Summary as an aligned text table.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let cells: Vec<Vec<String>> = rows.iter().map(row_cells).collect();
    let mut widths: Vec<usize> = COLUMNS.iter().map(|c| c.len()).collect();
    for r in &cells {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, r: &[String]| {
        let parts: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &COLUMNS.map(String::from));
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&mut out, &rule);
    for r in &cells {
        line(&mut out, r);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ok_row(name: &str, kinetic: f64) -> SweepRow {
        let m = RunMetrics {
            scenario: name.into(),
            nodes: 121,
            edges: 220,
            model: "mlp".into(),
            num_params: 337,
            seed: 0,
            epochs: 1,
            kinetic,
            terminal: 0.01,
            kinetic_per_node: kinetic / 121.0,
            terminal_per_node: 0.01 / 121.0,
            report_window: 1,
            potentials: PotentialParts::default(),
            final_cost: CostBreakdown::default(),
            l1_per_node: 1e-4,
            terminal_residual: 0.0,
            terminal_residual_shifted: 0.0,
            best_epoch: 0,
            best_loss: 0.0,
            min_rho: 0.0,
            mass_drift: 0.0,
        };
        SweepRow { config: format!("configs/{name}.cfg"), outcome: Ok(m) }
    }

    #[test]
    fn csv_numbers_roundtrip() {
        let k = 1.0 / 3.0;
        let csv = sweep_csv(&[ok_row("a", k)]);
        let line = csv.lines().nth(1).unwrap();
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[0], "a.cfg");
        assert_eq!(cells[3].parse::<f64>().unwrap(), k);
    }

    #[test]
    fn failed_rows_keep_column_count() {
        let rows = [ok_row("a", 1.0), SweepRow { config: "b.cfg".into(), outcome: Err("boom, at x".into()) }];
        let csv = sweep_csv(&rows);
        for line in csv.lines() {
            assert_eq!(line.split(',').count(), COLUMNS.len(), "{line}");
        }
        let table = sweep_table(&rows);
        assert_eq!(table.lines().count(), 4);
        assert!(table.contains("error: boom; at x"));
    }

    #[test]
    fn empty_glob_is_error() {
        assert!(run_sweep("/nonexistent-dir-xyz/*.cfg", &Overrides::default()).is_err());
    }
}
