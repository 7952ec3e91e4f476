//! Differentiable unrolling of the forward system: the loss J₂(S₀) and its
//! gradient with respect to S₀, optionally with segment checkpointing.
//!
//! Each Euler step is recorded on a tape with the same arithmetic as
//! [`crate::dynamics`]. With checkpointing, segments of `checkpoint_every`
//! steps are replayed on fresh tapes during the reverse pass, so at most one
//! segment is ever held in memory alongside the stored boundary states.

use std::sync::Arc;

use crate::autodiff::{Tape, Var};
use crate::dynamics::{CostBreakdown, Quadrature};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::measures::DensityState;
use crate::potentials::{PotentialParts, PotentialSpec, TerminalKind, DENSITY_FLOOR};

/// Immutable, shareable description of one unrolled problem.
#[derive(Debug, Clone)]
pub struct Problem {
    n: usize,
    src: Arc<[usize]>,
    dst: Arc<[usize]>,
    weights: Arc<[f64]>,
    unit_weights: bool,
    spec: PotentialSpec,
    v_vec: Arc<[f64]>,
    target: Arc<[f64]>,
    log_target: Arc<[f64]>,
    mu0: Vec<f64>,
    pub dt: f64,
    pub m_steps: usize,
    pub quadrature: Quadrature,
}

/// Memory instrumentation of one evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MemoryStats {
    /// Floats held by stored segment-boundary states.
    pub checkpoint_floats: usize,
    /// Largest tape (in floats) alive at any time.
    pub peak_tape_floats: usize,
}

/// Loss value, breakdown and ∂J₂/∂S₀.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub breakdown: CostBreakdown,
    pub grad_s0: Vec<f64>,
    pub memory: MemoryStats,
    /// min ρ over all recorded states.
    pub min_rho: f64,
    /// max |Σρ⁽ᵐ⁾ − 1|.
    pub mass_drift: f64,
}

/// Scalars recorded per state for the report.
#[derive(Debug, Clone, Copy, Default)]
struct StepRecord {
    vv: f64,
    parts: PotentialParts,
}

impl Problem {
    pub fn new(
        graph: &Graph,
        mu0: &DensityState,
        spec: &PotentialSpec,
        dt: f64,
        m_steps: usize,
        quadrature: Quadrature,
    ) -> Result<Self> {
        spec.validate(graph)?;
        if m_steps < 1 {
            return Err(Error::config("dynamics.M", "need at least one step"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::config("dynamics.dt", "must be positive"));
        }
        if mu0.len() != graph.n() {
            return Err(Error::config("mu0", "density length differs from node count"));
        }
        let target = spec.target.as_slice();
        Ok(Problem {
            n: graph.n(),
            src: Arc::from(graph.edge_src()),
            dst: Arc::from(graph.edge_dst()),
            weights: Arc::from(graph.weights()),
            unit_weights: graph.weights().iter().all(|&w| w == 1.0),
            spec: spec.clone(),
            v_vec: Arc::from(spec.v_vec.as_slice()),
            target: Arc::from(target),
            log_target: target.iter().map(|&m| m.max(DENSITY_FLOOR).ln()).collect(),
            mu0: mu0.as_slice().to_vec(),
            dt,
            m_steps,
            quadrature,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spec(&self) -> &PotentialSpec {
        &self.spec
    }

    pub fn mu0(&self) -> &[f64] {
        &self.mu0
    }

    fn weighted<'t>(&self, edge: Var<'t>) -> Var<'t> {
        if self.unit_weights {
            edge
        } else {
            edge.mul_const(Arc::clone(&self.weights))
        }
    }

    /// Running-cost variation f and the unweighted term values at one state.
    fn running<'t>(&self, tape: &'t Tape, rho: Var<'t>, need_f: bool) -> (Option<Var<'t>>, [Option<Var<'t>>; 4]) {
        let spec = &self.spec;
        let n = self.n;
        let mut f: Option<Var<'t>> = None;
        let add_f = |f: &mut Option<Var<'t>>, term: Var<'t>| {
            *f = Some(match f.take() {
                Some(acc) => acc + term,
                None => term,
            });
        };
        let mut vals = [None; 4];
        if spec.has_linear() {
            vals[0] = Some(rho.mul_const(Arc::clone(&self.v_vec)).sum());
            if need_f {
                let lv: Vec<f64> = self.v_vec.iter().map(|v| spec.lambda_v * v).collect();
                add_f(&mut f, tape.constant(lv));
            }
        }
        if spec.has_interaction() {
            let k = spec.interaction.as_ref().expect("checked");
            let w_rho = rho.matvec_const(k.data());
            vals[1] = Some((rho * w_rho).sum().scale(0.5));
            if need_f {
                add_f(&mut f, w_rho.scale(spec.lambda_w));
            }
        }
        let needs_log = spec.lambda_b != 0.0 || spec.lambda_i != 0.0;
        let clamped = needs_log.then(|| rho.max_const(DENSITY_FLOOR));
        let logs = clamped.map(|c| c.ln());
        if spec.lambda_b != 0.0 {
            let l = logs.expect("log computed");
            vals[2] = Some((rho * l).sum());
            if need_f {
                add_f(&mut f, l.offset(1.0).scale(spec.lambda_b));
            }
        }
        if spec.lambda_i != 0.0 {
            let l = logs.expect("log computed");
            let d = l.gather(&self.src) - l.gather(&self.dst);
            let th = (rho.gather(&self.src) + rho.gather(&self.dst)).scale(0.5);
            let wd = self.weighted(d);
            let a = wd * th;
            vals[3] = Some((a * d).sum().scale(0.5));
            if need_f {
                // Iᵢ = Σⱼ w[(lᵢ−lⱼ)θ/ρᵢ + ¼(lᵢ−lⱼ)²]
                let b = (wd * d).scale(0.25);
                let cross = a.scatter_add(&self.src, n) - a.scatter_add(&self.dst, n);
                let sq = b.scatter_add(&self.src, n) + b.scatter_add(&self.dst, n);
                let var = cross / clamped.expect("clamped computed") + sq;
                add_f(&mut f, var.scale(spec.lambda_i));
            }
        }
        (f, vals)
    }

    /// ⟨v,v⟩_ρ at one state, plus the edge differences and θ for reuse.
    fn kinetic<'t>(&self, rho: Var<'t>, s: Var<'t>) -> (Var<'t>, Var<'t>, Var<'t>) {
        let ds = s.gather(&self.dst) - s.gather(&self.src);
        let th = (rho.gather(&self.src) + rho.gather(&self.dst)).scale(0.5);
        let vv = (self.weighted(ds.square()) * th).sum();
        (vv, ds, th)
    }

    fn step<'t>(&self, rho: Var<'t>, s: Var<'t>, ds: Var<'t>, th: Var<'t>, f: Option<Var<'t>>) -> (Var<'t>, Var<'t>) {
        let n = self.n;
        let wds = self.weighted(ds);
        let flux = wds * th;
        let drho = flux.scatter_add(&self.src, n) - flux.scatter_add(&self.dst, n);
        let q = self.weighted(ds.square()).scale(0.25);
        let mut dsdt = q.scatter_add(&self.src, n) + q.scatter_add(&self.dst, n);
        if let Some(f) = f {
            dsdt = dsdt - f;
        }
        let s_next = s + dsdt.scale(self.dt);
        let rho_next = rho + drho.scale(self.dt);
        (rho_next, s_next)
    }

    fn terminal<'t>(&self, tape: &'t Tape, rho: Var<'t>) -> Var<'t> {
        let target = tape.constant(self.target.to_vec());
        match self.spec.terminal {
            TerminalKind::L1 => (rho - target).abs().sum(),
            TerminalKind::Kl => {
                let log_t = tape.constant(self.log_target.to_vec());
                (rho * (rho.max_const(DENSITY_FLOOR).ln() - log_t)).sum()
            }
        }
    }

    /// Records steps `start..end` from `(rho, s)`; returns the segment's loss
    /// contribution and end state. The terminal term is added when `end == M`.
    fn segment<'t>(
        &self,
        tape: &'t Tape,
        mut rho: Var<'t>,
        mut s: Var<'t>,
        start: usize,
        end: usize,
        records: &mut [StepRecord],
        rho_values: &mut Vec<Vec<f64>>,
    ) -> (Option<Var<'t>>, Var<'t>, Var<'t>) {
        let spec = &self.spec;
        let quad = self.quadrature.steps(self.m_steps);
        let mut loss: Option<Var<'t>> = None;
        let push = |loss: &mut Option<Var<'t>>, term: Var<'t>| {
            *loss = Some(match loss.take() {
                Some(acc) => acc + term,
                None => term,
            });
        };
        let lambdas = [spec.lambda_v, spec.lambda_w, spec.lambda_b, spec.lambda_i];
        let mut record_state = |m: usize, rho: Var<'t>, s: Var<'t>, need_f: bool, loss: &mut Option<Var<'t>>| {
            let (vv, ds, th) = self.kinetic(rho, s);
            let (f, vals) = self.running(tape, rho, need_f);
            let rec = &mut records[m];
            rec.vv = vv.item();
            let pv: Vec<f64> = vals.iter().map(|v| v.map(|v| v.item()).unwrap_or(0.0)).collect();
            rec.parts = PotentialParts { linear: pv[0], interaction: pv[1], entropy: pv[2], fisher: pv[3] };
            if quad.contains(&m) {
                let mut integrand = vv.scale(spec.lambda_k);
                for (val, lambda) in vals.iter().zip(lambdas) {
                    if let Some(val) = val {
                        integrand = integrand + val.scale(lambda);
                    }
                }
                push(loss, integrand.scale(self.dt));
            }
            (ds, th, f)
        };
        for m in start..end {
            rho_values.push(rho.value());
            let (ds, th, f) = record_state(m, rho, s, true, &mut loss);
            let (r, sn) = self.step(rho, s, ds, th, f);
            rho = r;
            s = sn;
        }
        if end == self.m_steps {
            rho_values.push(rho.value());
            record_state(end, rho, s, false, &mut loss);
            let term = self.terminal(tape, rho).scale(spec.lambda_g);
            push(&mut loss, term);
        }
        (loss, rho, s)
    }

    /// Loss breakdown and ∂J₂/∂S₀. `checkpoint_every >= M` records a single tape.
    pub fn evaluate(&self, s0: &[f64], checkpoint_every: usize) -> Result<Evaluation> {
        assert_eq!(s0.len(), self.n, "S₀ length mismatch");
        let every = checkpoint_every.max(1).min(self.m_steps);
        let bounds: Vec<usize> = (0..self.m_steps).step_by(every).chain([self.m_steps]).collect();
        let n_seg = bounds.len() - 1;
        let mut records = vec![StepRecord::default(); self.m_steps + 1];
        let mut rho_values = Vec::new();
        let mut memory = MemoryStats::default();

        let grad_s0 = if n_seg == 1 {
            let tape = Tape::new();
            let rho = tape.constant(self.mu0.clone());
            let s = tape.var(s0.to_vec());
            let (loss, _, _) = self.segment(&tape, rho, s, 0, self.m_steps, &mut records, &mut rho_values);
            let loss = loss.expect("terminal term always present");
            memory.peak_tape_floats = tape.stored_floats();
            let grads = tape.backward(loss).expect("same tape");
            grads.get_or_zero(s).expect("same tape")
        } else {
            // Forward sweep keeps only the boundary states.
            let mut checkpoints: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(n_seg);
            let mut state = (self.mu0.clone(), s0.to_vec());
            for k in 0..n_seg {
                checkpoints.push(state.clone());
                let tape = Tape::new();
                let rho = tape.constant(state.0.clone());
                let s = tape.constant(state.1.clone());
                let (_, r, sn) = self.segment(&tape, rho, s, bounds[k], bounds[k + 1], &mut records, &mut rho_values);
                memory.peak_tape_floats = memory.peak_tape_floats.max(tape.stored_floats());
                state = (r.value(), sn.value());
            }
            memory.checkpoint_floats = checkpoints.iter().map(|(r, s)| r.len() + s.len()).sum();
            // Reverse sweep replays one segment at a time.
            let mut adj_rho: Option<Vec<f64>> = None;
            let mut adj_s: Option<Vec<f64>> = None;
            let mut scratch = vec![StepRecord::default(); self.m_steps + 1];
            let mut scratch_rho = Vec::new();
            for k in (0..n_seg).rev() {
                let tape = Tape::new();
                let (r0, s0k) = &checkpoints[k];
                let rho = tape.var(r0.clone());
                let s = tape.var(s0k.clone());
                let (loss, r_end, s_end) =
                    self.segment(&tape, rho, s, bounds[k], bounds[k + 1], &mut scratch, &mut scratch_rho);
                scratch_rho.clear();
                memory.peak_tape_floats = memory.peak_tape_floats.max(tape.stored_floats());
                let mut seeds = Vec::new();
                if let Some(loss) = loss {
                    seeds.push((loss, vec![1.0]));
                }
                if let Some(a) = adj_rho.take() {
                    seeds.push((r_end, a));
                }
                if let Some(a) = adj_s.take() {
                    seeds.push((s_end, a));
                }
                let grads = tape.backward_seeded(&seeds).expect("same tape");
                adj_rho = Some(grads.get_or_zero(rho).expect("same tape"));
                adj_s = Some(grads.get_or_zero(s).expect("same tape"));
            }
            adj_s.expect("at least one segment")
        };

        if rho_values.iter().flatten().chain(&grad_s0).any(|v| !v.is_finite()) {
            let step = rho_values.iter().position(|r| r.iter().any(|v| !v.is_finite())).unwrap_or(self.m_steps);
            return Err(Error::Blowup { step });
        }
        let breakdown = self.breakdown(&records, &rho_values);
        if !breakdown.total.is_finite() {
            return Err(Error::Blowup { step: self.m_steps });
        }
        let min_rho = rho_values.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        let mass_drift = rho_values.iter().map(|r| (r.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
        Ok(Evaluation { breakdown, grad_s0, memory, min_rho, mass_drift })
    }

    /// Loss only, no tape.
    pub fn loss(&self, s0: &[f64]) -> Result<CostBreakdown> {
        // Recording one segment per step keeps the live tape tiny.
        let mut records = vec![StepRecord::default(); self.m_steps + 1];
        let mut rho_values = Vec::new();
        let mut state = (self.mu0.clone(), s0.to_vec());
        for m in 0..self.m_steps {
            let tape = Tape::new();
            let rho = tape.constant(state.0.clone());
            let s = tape.constant(state.1.clone());
            let (_, r, sn) = self.segment(&tape, rho, s, m, m + 1, &mut records, &mut rho_values);
            state = (r.value(), sn.value());
        }
        if rho_values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Blowup { step: self.m_steps });
        }
        Ok(self.breakdown(&records, &rho_values))
    }

    fn breakdown(&self, records: &[StepRecord], rho_values: &[Vec<f64>]) -> CostBreakdown {
        let dt = self.dt;
        let mut kinetic = 0.0;
        let mut parts = PotentialParts::default();
        for m in self.quadrature.steps(self.m_steps) {
            kinetic += 0.5 * records[m].vv * dt;
            let p = &records[m].parts;
            parts.linear += p.linear * dt;
            parts.interaction += p.interaction * dt;
            parts.entropy += p.entropy * dt;
            parts.fisher += p.fisher * dt;
        }
        let rho_t = rho_values.last().expect("final state recorded");
        let (terminal, _) = crate::potentials::terminal_energy(rho_t, &self.target, self.spec.terminal);
        CostBreakdown::assemble(kinetic, parts, terminal, &self.spec)
    }
}
