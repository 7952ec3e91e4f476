//! INI scenario files.
//!
//! ```ini
//! [graph]
//! kind = lattice
//! rows = 31
//! cols = 31
//! shape = square
//! bounds = -3, 3, -3, 3
//!
//! [mu0]
//! kind = gaussian
//! mean = -1.2, -1.2
//! cov = 0.2
//! ```
//!
//! Every key is checked; a misspelled key is an error naming it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;

use crate::dynamics::Quadrature;
use crate::error::{Error, Result};
use crate::graph::{
    build_lattice_in_box, build_random_inhomogeneous, build_triangular_offset, DomainShape, Graph, Hole, Point,
};
use crate::measures::{circle_means, gaussian_density, gaussian_mixture_density, laplacian_density, DensityState};
use crate::models::ModelKind;
use crate::potentials::{landscape_bump, Kernel, KernelMatrix, PotentialSpec, TerminalKind};
use crate::training::{Optimizer, TrainConfig, WarmStartConfig, WarmStartLoss};
use crate::unroll::Problem;

#[derive(Debug, Clone, PartialEq)]
pub enum GraphSpec {
    Lattice { rows: usize, cols: usize, grid_box: Option<(f64, f64, f64, f64)>, shape: DomainShape },
    Triangular { spacing: f64, offset: Point, shape: DomainShape },
    Random { nodes: usize, degree_min: usize, degree_max: usize, seed: u64, shape: DomainShape },
    File { path: PathBuf },
}

impl GraphSpec {
    pub fn build(&self) -> Result<Graph> {
        match self {
            GraphSpec::Lattice { rows, cols, grid_box, shape } => {
                build_lattice_in_box(*rows, *cols, grid_box.unwrap_or_else(|| shape.bounds()), shape)
            }
            GraphSpec::Triangular { spacing, offset, shape } => build_triangular_offset(*spacing, *offset, shape),
            GraphSpec::Random { nodes, degree_min, degree_max, seed, shape } => {
                build_random_inhomogeneous(*nodes, *degree_min, *degree_max, shape, *seed)
            }
            GraphSpec::File { path } => {
                let file = std::fs::File::open(path)?;
                Graph::from_text(std::io::BufReader::new(file))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DensitySpec {
    Gaussian { mean: Point, cov: f64 },
    /// Equal-weight mixture with means on a circle.
    Mixture { count: usize, radius: f64, center: Point, cov: f64 },
    Laplace { a: Point, b: Point },
    Uniform,
}

impl DensitySpec {
    pub fn build(&self, graph: &Graph) -> Result<DensityState> {
        match self {
            DensitySpec::Gaussian { mean, cov } => gaussian_density(graph, *mean, *cov),
            DensitySpec::Mixture { count, radius, center, cov } => {
                gaussian_mixture_density(graph, &circle_means(*center, *radius, *count), *cov)
            }
            DensitySpec::Laplace { a, b } => laplacian_density(graph, *a, *b),
            DensitySpec::Uniform => Ok(DensityState::uniform(graph.n())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Landscape {
    pub height: f64,
    pub radius: f64,
    pub center: Point,
    pub sharpness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialsSpec {
    pub lambda_k: f64,
    pub lambda_g: f64,
    pub terminal: TerminalKind,
    pub lambda_v: f64,
    pub landscape: Option<Landscape>,
    pub lambda_w: f64,
    pub kernel: Option<Kernel>,
    pub lambda_b: f64,
    pub lambda_i: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub dir: PathBuf,
    /// Snapshot times in [0, T].
    pub snapshots: Vec<f64>,
}

/// Parsed, validated scenario file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub graph: GraphSpec,
    pub mu0: DensitySpec,
    pub mu_t: DensitySpec,
    pub potentials: PotentialsSpec,
    pub horizon: f64,
    pub dt: f64,
    pub m_steps: usize,
    pub quadrature: Quadrature,
    pub model: ModelKind,
    pub training: TrainConfig,
    pub output: OutputSpec,
}

/// Everything needed to train, built from a config.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub graph: Graph,
    pub mu0: DensityState,
    pub mu_t: DensityState,
    pub spec: PotentialSpec,
    pub problem: Problem,
}

struct Sections {
    map: BTreeMap<String, BTreeMap<String, String>>,
    used: BTreeSet<(String, String)>,
}

impl Sections {
    fn raw(&mut self, sec: &str, key: &str) -> Option<String> {
        let v = self.map.get(sec)?.get(key)?.clone();
        self.used.insert((sec.to_string(), key.to_string()));
        Some(v)
    }

    fn opt<T: FromStr>(&mut self, sec: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(sec, key) {
            None => Ok(None),
            Some(v) => v.trim().parse::<T>().map(Some).map_err(|e| Error::config(format!("{sec}.{key}"), format!("`{v}`: {e}"))),
        }
    }

    fn req<T: FromStr>(&mut self, sec: &str, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.opt(sec, key)?.ok_or_else(|| Error::config(format!("{sec}.{key}"), "missing required key"))
    }

    fn or<T: FromStr>(&mut self, sec: &str, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.opt(sec, key)?.unwrap_or(default))
    }

    fn list(&mut self, sec: &str, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(v) = self.raw(sec, key) else { return Ok(None) };
        v.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| Error::config(format!("{sec}.{key}"), format!("`{t}`: {e}"))))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    fn fixed<const N: usize>(&mut self, sec: &str, key: &str) -> Result<Option<[f64; N]>> {
        match self.list(sec, key)? {
            None => Ok(None),
            Some(v) => v
                .try_into()
                .map(Some)
                .map_err(|_| Error::config(format!("{sec}.{key}"), format!("expected {N} comma-separated numbers"))),
        }
    }

    fn point(&mut self, sec: &str, key: &str) -> Result<Point> {
        self.fixed::<2>(sec, key)?.ok_or_else(|| Error::config(format!("{sec}.{key}"), "missing required key"))
    }

    fn has_section(&self, sec: &str) -> bool {
        self.map.contains_key(sec)
    }

    fn check_all_used(&self) -> Result<()> {
        for (sec, keys) in &self.map {
            for key in keys.keys() {
                if !self.used.contains(&(sec.clone(), key.clone())) {
                    return Err(Error::config(format!("{sec}.{key}"), "unknown key"));
                }
            }
        }
        Ok(())
    }
}

fn parse_holes(spec: &str) -> Result<Vec<Hole>> {
    let mut holes = Vec::new();
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let mut it = part.split_whitespace();
        let kind = it.next().unwrap_or_default();
        let nums: Vec<f64> = it
            .map(|t| t.parse::<f64>().map_err(|e| Error::config("graph.holes", format!("`{t}`: {e}"))))
            .collect::<Result<_>>()?;
        let hole = match (kind, nums.as_slice()) {
            ("rect", &[x0, x1, y0, y1]) => Hole::Rect { x0, x1, y0, y1 },
            ("disk", &[cx, cy, r]) => Hole::Disk { center: [cx, cy], radius: r },
            _ => {
                return Err(Error::config(
                    "graph.holes",
                    format!("`{part}`: expected `rect x0 x1 y0 y1` or `disk cx cy r`"),
                ))
            }
        };
        holes.push(hole);
    }
    Ok(holes)
}

fn parse_shape(s: &mut Sections) -> Result<DomainShape> {
    let shape: String = s.or("graph", "shape", "square".to_string())?;
    match shape.as_str() {
        "square" => {
            let [x0, x1, y0, y1] = s.fixed::<4>("graph", "bounds")?.unwrap_or([-3.0, 3.0, -3.0, 3.0]);
            Ok(DomainShape::Square { x0, x1, y0, y1 })
        }
        "disk" | "disk_with_holes" => {
            let center = s.fixed::<2>("graph", "center")?.unwrap_or([0.0, 0.0]);
            let radius: f64 = s.req("graph", "radius")?;
            let holes = match s.raw("graph", "holes") {
                Some(h) => parse_holes(&h)?,
                None => Vec::new(),
            };
            if holes.is_empty() {
                Ok(DomainShape::Disk { center, radius })
            } else {
                Ok(DomainShape::DiskWithHoles { center, radius, holes })
            }
        }
        other => Err(Error::config("graph.shape", format!("unknown shape `{other}`"))),
    }
}

fn parse_graph(s: &mut Sections, base: &Path) -> Result<GraphSpec> {
    let kind: String = s.req("graph", "kind")?;
    match kind.as_str() {
        "lattice" => {
            let rows = s.req("graph", "rows")?;
            let cols = s.or("graph", "cols", rows)?;
            let grid_box = s.fixed::<4>("graph", "grid_box")?.map(|[a, b, c, d]| (a, b, c, d));
            Ok(GraphSpec::Lattice { rows, cols, grid_box, shape: parse_shape(s)? })
        }
        "triangular" => Ok(GraphSpec::Triangular {
            spacing: s.req("graph", "spacing")?,
            offset: s.fixed::<2>("graph", "offset")?.unwrap_or([0.0, 0.0]),
            shape: parse_shape(s)?,
        }),
        "random" => Ok(GraphSpec::Random {
            nodes: s.req("graph", "nodes")?,
            degree_min: s.req("graph", "degree_min")?,
            degree_max: s.req("graph", "degree_max")?,
            seed: s.or("graph", "seed", 0)?,
            shape: parse_shape(s)?,
        }),
        "file" => {
            let p: String = s.req("graph", "path")?;
            Ok(GraphSpec::File { path: base.join(p) })
        }
        other => Err(Error::config("graph.kind", format!("unknown graph builder `{other}`"))),
    }
}

fn parse_density(s: &mut Sections, sec: &str) -> Result<DensitySpec> {
    if !s.has_section(sec) {
        return Err(Error::config(sec, "missing section"));
    }
    let kind: String = s.req(sec, "kind")?;
    match kind.as_str() {
        "gaussian" => Ok(DensitySpec::Gaussian { mean: s.point(sec, "mean")?, cov: s.req(sec, "cov")? }),
        "mixture" => Ok(DensitySpec::Mixture {
            count: s.req(sec, "count")?,
            radius: s.req(sec, "radius")?,
            center: s.fixed::<2>(sec, "center")?.unwrap_or([0.0, 0.0]),
            cov: s.req(sec, "cov")?,
        }),
        "laplace" => Ok(DensitySpec::Laplace { a: s.point(sec, "a")?, b: s.point(sec, "b")? }),
        "uniform" => Ok(DensitySpec::Uniform),
        other => Err(Error::config(format!("{sec}.kind"), format!("unknown distribution `{other}`"))),
    }
}

fn parse_potentials(s: &mut Sections) -> Result<PotentialsSpec> {
    let sec = "potentials";
    let terminal = match s.or(sec, "terminal", "l1".to_string())?.as_str() {
        "l1" => TerminalKind::L1,
        "kl" => TerminalKind::Kl,
        other => return Err(Error::config("potentials.terminal", format!("unknown terminal energy `{other}`"))),
    };
    let landscape = match s.or(sec, "landscape", "none".to_string())?.as_str() {
        "none" => None,
        "bump" => Some(Landscape {
            height: s.req(sec, "landscape_height")?,
            radius: s.req(sec, "landscape_radius")?,
            center: s.point(sec, "landscape_center")?,
            sharpness: s.req(sec, "landscape_sharpness")?,
        }),
        other => return Err(Error::config("potentials.landscape", format!("unknown landscape `{other}`"))),
    };
    let kernel = match s.or(sec, "kernel", "none".to_string())?.as_str() {
        "none" => None,
        "gaussian" => Some(Kernel::Gaussian),
        "coulomb" => Some(Kernel::Coulomb { c: s.req(sec, "coulomb_c")? }),
        other => return Err(Error::config("potentials.kernel", format!("unknown kernel `{other}`"))),
    };
    let p = PotentialsSpec {
        lambda_k: s.or(sec, "lambda_k", 0.5)?,
        lambda_g: s.or(sec, "lambda_g", 5000.0)?,
        terminal,
        lambda_v: s.or(sec, "lambda_v", 0.0)?,
        landscape,
        lambda_w: s.or(sec, "lambda_w", 0.0)?,
        kernel,
        lambda_b: s.or(sec, "lambda_b", 0.0)?,
        lambda_i: s.or(sec, "lambda_i", 0.0)?,
    };
    if p.lambda_v > 0.0 && p.landscape.is_none() {
        return Err(Error::config("potentials.landscape", "lambda_v > 0 needs a landscape"));
    }
    if p.lambda_w > 0.0 && p.kernel.is_none() {
        return Err(Error::config("potentials.kernel", "lambda_w > 0 needs a kernel"));
    }
    Ok(p)
}

fn parse_bool(v: &str, key: &str) -> Result<bool> {
    match v.trim() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        other => Err(Error::config(key, format!("`{other}` is not a boolean"))),
    }
}

fn parse_training(s: &mut Sections) -> Result<(ModelKind, TrainConfig)> {
    let sec = "training";
    let d = TrainConfig::default();
    let model = s.or(sec, "model", ModelKind::Mlp)?;
    let enabled = match s.raw(sec, "warmstart") {
        Some(v) => parse_bool(&v, "training.warmstart")?,
        None => false,
    };
    let ws = WarmStartConfig {
        enabled,
        alpha: s.or(sec, "warmstart_alpha", d.warm_start.alpha)?,
        epochs: s.or(sec, "warmstart_epochs", d.warm_start.epochs)?,
        lr: s.or(sec, "warmstart_lr", d.warm_start.lr)?,
        loss: s.or(sec, "warmstart_loss", WarmStartLoss::Mse)?,
    };
    let epochs = s.or(sec, "epochs", d.epochs)?;
    let config = TrainConfig {
        epochs,
        lr: s.or(sec, "lr", d.lr)?,
        optimizer: s.or(sec, "optimizer", Optimizer::Adam)?,
        seed: s.or(sec, "seed", d.seed)?,
        report_window: s.or(sec, "report_window", d.report_window.min(epochs))?,
        warm_start: ws,
        checkpoint_every: s.or(sec, "checkpoint_every", 0)?,
        init_output_gain: s.or(sec, "init_output_gain", 1.0)?,
    };
    config.validate()?;
    Ok((model, config))
}

impl ScenarioConfig {
    pub fn from_str_with_base(text: &str, base: &Path, default_name: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let mut map: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for (sec, props) in ini.iter() {
            let Some(sec) = sec else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(Error::config(k, "key outside any section"));
                }
                continue;
            };
            let entry = map.entry(sec.to_string()).or_default();
            for (k, v) in props.iter() {
                entry.insert(k.to_string(), v.to_string());
            }
        }
        const KNOWN: [&str; 8] = ["scenario", "graph", "mu0", "mu_t", "potentials", "dynamics", "training", "output"];
        if let Some(sec) = map.keys().find(|k| !KNOWN.contains(&k.as_str())) {
            return Err(Error::config(sec.clone(), "unknown section"));
        }
        let mut s = Sections { map, used: BTreeSet::new() };

        let name = s.or("scenario", "name", default_name.to_string())?;
        let graph = parse_graph(&mut s, base)?;
        let mu0 = parse_density(&mut s, "mu0")?;
        let mu_t = parse_density(&mut s, "mu_t")?;
        let potentials = parse_potentials(&mut s)?;

        let horizon: f64 = s.req("dynamics", "T")?;
        let dt: f64 = s.req("dynamics", "dt")?;
        let m_steps: usize = s.req("dynamics", "M")?;
        if !(dt > 0.0) || m_steps == 0 {
            return Err(Error::config("dynamics.dt", "dt and M must be positive"));
        }
        if (horizon - m_steps as f64 * dt).abs() > 1e-12 * horizon.abs().max(1.0) {
            return Err(Error::config("dynamics.T", format!("T = {horizon} but M·dt = {}", m_steps as f64 * dt)));
        }
        let quadrature = s.or("dynamics", "quadrature", Quadrature::Left)?;
        let (model, training) = parse_training(&mut s)?;

        let dir = PathBuf::from(s.or("output", "dir", format!("out/{name}"))?);
        let snapshots = s.list("output", "snapshots")?.unwrap_or_else(|| vec![0.0, horizon / 2.0, horizon]);
        if let Some(t) = snapshots.iter().find(|&&t| !(0.0..=horizon + 1e-12).contains(&t)) {
            return Err(Error::config("output.snapshots", format!("time {t} outside [0, T]")));
        }
        s.check_all_used()?;
        Ok(ScenarioConfig {
            name,
            graph,
            mu0,
            mu_t,
            potentials,
            horizon,
            dt,
            m_steps,
            quadrature,
            model,
            training,
            output: OutputSpec { dir, snapshots },
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
        Self::from_str_with_base(&text, base, stem)
    }

    /// Builds graph, densities, potentials and the unrolled problem.
    pub fn build(&self) -> Result<Scenario> {
        let graph = self.graph.build()?;
        let mu0 = self.mu0.build(&graph)?;
        let mu_t = self.mu_t.build(&graph)?;
        let p = &self.potentials;
        let v_vec = match &p.landscape {
            Some(l) => landscape_bump(&graph, l.height, l.radius, l.center, l.sharpness),
            None => Vec::new(),
        };
        let interaction = match &p.kernel {
            Some(k) => Some(KernelMatrix::build(k, &graph)?),
            None => None,
        };
        let spec = PotentialSpec {
            lambda_k: p.lambda_k,
            lambda_v: p.lambda_v,
            v_vec,
            lambda_w: p.lambda_w,
            interaction,
            lambda_b: p.lambda_b,
            lambda_i: p.lambda_i,
            terminal: p.terminal,
            lambda_g: p.lambda_g,
            target: mu_t.clone(),
        };
        let problem = Problem::new(&graph, &mu0, &spec, self.dt, self.m_steps, self.quadrature)?;
        Ok(Scenario { graph, mu0, mu_t, spec, problem })
    }

    /// Human-readable resolved scenario.
    pub fn describe(&self, graph: Option<&Graph>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scenario   {}", self.name);
        let _ = writeln!(out, "graph      {:?}", self.graph);
        if let Some(g) = graph {
            let _ = writeln!(out, "           {} nodes, {} edges", g.n(), g.m());
        }
        let _ = writeln!(out, "mu0        {:?}", self.mu0);
        let _ = writeln!(out, "mu_t       {:?}", self.mu_t);
        let _ = writeln!(out, "potentials {:?}", self.potentials);
        let _ = writeln!(
            out,
            "dynamics   T={} dt={} M={} quadrature={:?}",
            self.horizon, self.dt, self.m_steps, self.quadrature
        );
        let _ = writeln!(out, "model      {}", self.model.name());
        let _ = writeln!(out, "training   {:?}", self.training);
        let _ = writeln!(out, "output     {} snapshots {:?}", self.output.dir.display(), self.output.snapshots);
        out
    }
}
