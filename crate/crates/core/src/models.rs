//! Trainable parameterizations of the initial value function S₀.
//!
//! All models read their parameters from one flat vector so the optimizer
//! and the checkpoint format treat them uniformly.

use std::fmt::Write as _;
use std::io::BufRead;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::Graph;

pub const HIDDEN: usize = 16;
pub const SAGE_LAYERS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Two tanh hidden layers of width 16 on node coordinates.
    Mlp,
    /// Linear embed, three mean-aggregation layers, tanh + affine readout.
    Sage,
    /// One free value per node.
    Direct,
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(ModelKind::Mlp),
            "sage" | "gsage" => Ok(ModelKind::Sage),
            "direct" => Ok(ModelKind::Direct),
            other => Err(Error::config("training.model", format!("unknown model `{other}`"))),
        }
    }
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Sage => "sage",
            ModelKind::Direct => "direct",
        }
    }
}

/// One named block of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    /// Weight matrices get Glorot-uniform init; biases start at zero.
    pub is_weight: bool,
}

impl Block {
    const fn weight(name: &'static str, rows: usize, cols: usize) -> Self {
        Block { name, rows, cols, is_weight: true }
    }

    const fn bias(name: &'static str, rows: usize) -> Self {
        Block { name, rows, cols: 1, is_weight: false }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// S₀ model bound to a graph.
#[derive(Debug, Clone)]
pub struct Model {
    kind: ModelKind,
    n: usize,
    coords: Arc<[f64]>,
    offsets: Arc<[usize]>,
    nbrs: Arc<[usize]>,
}

impl Model {
    pub fn new(kind: ModelKind, graph: &Graph) -> Self {
        let coords: Vec<f64> = graph.coords().iter().flat_map(|p| [p[0], p[1]]).collect();
        let mut offsets = Vec::with_capacity(graph.n() + 1);
        let mut nbrs = Vec::new();
        offsets.push(0);
        for i in 0..graph.n() {
            nbrs.extend(graph.neighbors(i).iter().map(|&(j, _)| j));
            offsets.push(nbrs.len());
        }
        Model { kind, n: graph.n(), coords: Arc::from(coords), offsets: Arc::from(offsets), nbrs: Arc::from(nbrs) }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn layout(&self) -> Vec<Block> {
        layout(self.kind, self.n)
    }

    pub fn num_params(&self) -> usize {
        self.layout().iter().map(Block::len).sum()
    }

    /// Glorot-uniform weights in ±√(6/(fan_in+fan_out)), zero biases.
    /// The direct model starts from S₀ = 0.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        self.init_params_with_gain(seed, 1.0)
    }

    /// [`Model::init_params`] with the output weights multiplied by
    /// `output_gain`. A small gain gives a flatter initial S₀, which keeps
    /// long horizons on coarse graphs from blowing up before training starts.
    pub fn init_params_with_gain(&self, seed: u64, output_gain: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(self.num_params());
        let layout = self.layout();
        let last_weight = layout.iter().rposition(|b| b.is_weight);
        for (k, b) in layout.iter().enumerate() {
            if b.is_weight && self.kind != ModelKind::Direct {
                let bound = (6.0 / (b.rows + b.cols) as f64).sqrt();
                let gain = if Some(k) == last_weight { output_gain } else { 1.0 };
                out.extend((0..b.len()).map(|_| gain * rng.gen_range(-bound..=bound)));
            } else {
                out.extend(std::iter::repeat_n(0.0, b.len()));
            }
        }
        out
    }

    /// Records S₀ on the tape.
    pub fn forward<'t>(&self, tape: &'t Tape, params: Var<'t>) -> Var<'t> {
        assert_eq!(params.len(), self.num_params(), "parameter vector length mismatch");
        match self.kind {
            ModelKind::Direct => params.slice(0, self.n),
            ModelKind::Mlp => {
                let mut p = Cursor::new(params);
                let x = tape.constant(self.coords.to_vec());
                let (w1, b1) = (p.take(HIDDEN * 2), p.take(HIDDEN));
                let (w2, b2) = (p.take(HIDDEN * HIDDEN), p.take(HIDDEN));
                let (wo, bo) = (p.take(HIDDEN), p.take(1));
                let h1 = x.linear(w1, b1, 2, HIDDEN).tanh();
                let h2 = h1.linear(w2, b2, HIDDEN, HIDDEN).tanh();
                h2.linear(wo, bo, HIDDEN, 1)
            }
            ModelKind::Sage => {
                let mut p = Cursor::new(params);
                let x = tape.constant(self.coords.to_vec());
                let (we, be) = (p.take(HIDDEN * 2), p.take(HIDDEN));
                let mut h = x.linear(we, be, 2, HIDDEN);
                for _ in 0..SAGE_LAYERS {
                    let (w, b) = (p.take(HIDDEN * 2 * HIDDEN), p.take(HIDDEN));
                    let agg = h.neighbor_mean(&self.offsets, &self.nbrs, HIDDEN);
                    h = h.concat_cols(agg, HIDDEN, HIDDEN).linear(w, b, 2 * HIDDEN, HIDDEN).relu();
                }
                let (wo, bo) = (p.take(HIDDEN), p.take(1));
                h.tanh().linear(wo, bo, HIDDEN, 1)
            }
        }
    }

    /// S₀ values without keeping the tape.
    pub fn eval(&self, params: &[f64]) -> Vec<f64> {
        let tape = Tape::new();
        let p = tape.var(params.to_vec());
        self.forward(&tape, p).value()
    }

    /// Pulls an adjoint on S₀ back to the parameters.
    pub fn pullback(&self, params: &[f64], grad_s0: &[f64]) -> Vec<f64> {
        let tape = Tape::new();
        let p = tape.var(params.to_vec());
        let s0 = self.forward(&tape, p);
        let grads = tape.backward_seeded(&[(s0, grad_s0.to_vec())]).expect("same tape");
        grads.get_or_zero(p).expect("same tape")
    }
}

struct Cursor<'t> {
    params: Var<'t>,
    at: usize,
}

impl<'t> Cursor<'t> {
    fn new(params: Var<'t>) -> Self {
        Cursor { params, at: 0 }
    }

    fn take(&mut self, len: usize) -> Var<'t> {
        let v = self.params.slice(self.at, len);
        self.at += len;
        v
    }
}

fn layout(kind: ModelKind, n: usize) -> Vec<Block> {
    match kind {
        ModelKind::Direct => vec![Block::weight("s0", n, 1)],
        ModelKind::Mlp => vec![
            Block::weight("w1", HIDDEN, 2),
            Block::bias("b1", HIDDEN),
            Block::weight("w2", HIDDEN, HIDDEN),
            Block::bias("b2", HIDDEN),
            Block::weight("w_out", 1, HIDDEN),
            Block::bias("b_out", 1),
        ],
        ModelKind::Sage => {
            let mut v = vec![Block::weight("w_embed", HIDDEN, 2), Block::bias("b_embed", HIDDEN)];
            const NAMES: [(&str, &str); SAGE_LAYERS] = [("w_1", "b_1"), ("w_2", "b_2"), ("w_3", "b_3")];
            for (w, b) in NAMES {
                v.push(Block::weight(w, HIDDEN, 2 * HIDDEN));
                v.push(Block::bias(b, HIDDEN));
            }
            v.push(Block::weight("w_out", 1, HIDDEN));
            v.push(Block::bias("b_out", 1));
            v
        }
    }
}

/// Flat parameter vector with the metadata needed to reload it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheckpoint {
    pub kind: ModelKind,
    pub seed: u64,
    pub params: Vec<f64>,
}

impl ParamCheckpoint {
    /// Header line `# graphmfg-params kind=<k> seed=<s> shapes=<r>x<c>,...`,
    /// then one value per line.
    pub fn to_text(&self, n: usize) -> String {
        let shapes: Vec<String> = layout(self.kind, n).iter().map(|b| format!("{}x{}", b.rows, b.cols)).collect();
        let mut out = format!(
            "# graphmfg-params kind={} seed={} count={} shapes={}\n",
            self.kind.name(),
            self.seed,
            self.params.len(),
            shapes.join(",")
        );
        for p in &self.params {
            let _ = writeln!(out, "{p:?}");
        }
        out
    }

    pub fn from_text(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty checkpoint".into()))??;
        let rest = header
            .strip_prefix("# graphmfg-params")
            .ok_or_else(|| Error::Parse("missing checkpoint header".into()))?;
        let mut kind = None;
        let mut seed = None;
        let mut count = None;
        for field in rest.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(|| Error::Parse(format!("bad header field `{field}`")))?;
            match k {
                "kind" => kind = Some(v.parse::<ModelKind>()?),
                "seed" => seed = Some(v.parse::<u64>().map_err(|e| Error::Parse(e.to_string()))?),
                "count" => count = Some(v.parse::<usize>().map_err(|e| Error::Parse(e.to_string()))?),
                _ => {}
            }
        }
        let mut params = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            params.push(line.trim().parse::<f64>().map_err(|e| Error::Parse(format!("`{line}`: {e}")))?);
        }
        if let Some(c) = count {
            if c != params.len() {
                return Err(Error::Parse(format!("header says {c} values, found {}", params.len())));
            }
        }
        Ok(ParamCheckpoint {
            kind: kind.ok_or_else(|| Error::Parse("header lacks kind".into()))?,
            seed: seed.ok_or_else(|| Error::Parse("header lacks seed".into()))?,
            params,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_lattice, DomainShape};

    fn lattice() -> Graph {
        build_lattice(6, 6, &DomainShape::square(-1.0, 1.0)).unwrap()
    }

    #[test]
    fn parameter_counts() {
        let g = lattice();
        assert_eq!(Model::new(ModelKind::Mlp, &g).num_params(), 337);
        assert_eq!(Model::new(ModelKind::Sage, &g).num_params(), 1649);
        assert_eq!(Model::new(ModelKind::Direct, &g).num_params(), 36);
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let g = lattice();
        for kind in [ModelKind::Mlp, ModelKind::Sage, ModelKind::Direct] {
            let m = Model::new(kind, &g);
            assert!(m.eval(&vec![0.0; m.num_params()]).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let g = lattice();
        let m = Model::new(ModelKind::Sage, &g);
        let a = m.init_params(3);
        assert_eq!(a, m.init_params(3));
        assert_ne!(a, m.init_params(4));
        let mut at = 0;
        for b in m.layout() {
            let chunk = &a[at..at + b.len()];
            if b.is_weight {
                let bound = (6.0 / (b.rows + b.cols) as f64).sqrt();
                assert!(chunk.iter().all(|v| v.abs() <= bound));
                assert!(chunk.iter().any(|&v| v != 0.0));
            } else {
                assert!(chunk.iter().all(|&v| v == 0.0));
            }
            at += b.len();
        }
    }

    #[test]
    fn checkpoint_text_roundtrip() {
        let g = lattice();
        let m = Model::new(ModelKind::Mlp, &g);
        let ck = ParamCheckpoint { kind: ModelKind::Mlp, seed: 9, params: m.init_params(9) };
        let text = ck.to_text(g.n());
        assert!(text.starts_with("# graphmfg-params kind=mlp seed=9 count=337 shapes=16x2,16x1,16x16,16x1,1x16,1x1\n"));
        assert_eq!(ParamCheckpoint::from_text(text.as_bytes()).unwrap(), ck);
        assert!(ParamCheckpoint::from_text("junk\n1.0\n".as_bytes()).is_err());
    }

    #[test]
    fn output_gain_scales_only_last_weights() {
        let g = lattice();
        let m = Model::new(ModelKind::Mlp, &g);
        let a = m.init_params(5);
        let b = m.init_params_with_gain(5, 0.1);
        assert_eq!(a[..320], b[..320]);
        for k in 320..336 {
            assert!((b[k] - 0.1 * a[k]).abs() < 1e-15);
        }
        let sa = m.eval(&a);
        let sb = m.eval(&b);
        for (x, y) in sa.iter().zip(&sb) {
            assert!((y - 0.1 * x).abs() < 1e-12);
        }
    }

    #[test]
    fn pullback_matches_finite_differences() {
        let g = lattice();
        let m = Model::new(ModelKind::Mlp, &g);
        let p = m.init_params(1);
        let weights: Vec<f64> = (0..g.n()).map(|i| (i as f64 * 0.3).sin()).collect();
        let grad = m.pullback(&p, &weights);
        let objective = |q: &[f64]| m.eval(q).iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>();
        for k in [0, 17, 40, 300, 336] {
            let h = 1e-6;
            let mut hi = p.clone();
            hi[k] += h;
            let mut lo = p.clone();
            lo[k] -= h;
            let fd = (objective(&hi) - objective(&lo)) / (2.0 * h);
            assert!((fd - grad[k]).abs() < 1e-7 * (1.0 + fd.abs()), "param {k}: {fd} vs {}", grad[k]);
        }
    }
}
