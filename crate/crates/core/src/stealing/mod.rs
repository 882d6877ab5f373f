//! Model stealing: the collaborative generator/substitute procedure and
//! the two competitive baselines.
//!
//! All three share [`StealConfig`], return a [`StealOutcome`], and record
//! their progress against the same fixed evaluation noise so traces are
//! comparable by query count.

mod baselines;
pub mod forward_diff;
pub mod losses;
mod mega;
mod trace;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

pub use baselines::{dast_steal, dfme_steal};
pub use forward_diff::{forward_diff_grad, forward_diff_grad_with_dirs, sample_directions};
pub use losses::{
    entropy, kl_divergence, loss_dast_generator, loss_dfme_l1, loss_generator_confidence, loss_substitute_ce,
};
pub use mega::mega_steal;
pub use trace::{NoiseSeedSet, RoundCheckpoint, RoundStats, StealRunTrace, TraceRow};

use crate::autodiff::{argmax, Tape, Tensor, Var};
use crate::data_io::Dataset;
use crate::error::{Error, Result};
use crate::nets::{
    classifier_forward, forward, generator_forward, Head, NetworkSpec, OptimizerConfig, OptimizerState, Parameters,
};
use crate::oracle::{LedgerKind, TargetOracle};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    Mega,
    Dast,
    Dfme,
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mega" => Ok(Algorithm::Mega),
            "dast" => Ok(Algorithm::Dast),
            "dfme" => Ok(Algorithm::Dfme),
            other => Err(Error::InvalidKind(other.to_string())),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Mega => "mega",
            Algorithm::Dast => "dast",
            Algorithm::Dfme => "dfme",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StealConfig {
    pub algorithm: Algorithm,
    /// MEGA outer rounds.
    pub rounds: usize,
    /// Size of the fixed noise set (also the baselines' evaluation set).
    pub n_seeds: usize,
    pub batch_size: usize,
    /// Substitute inner loop cap.
    pub max_epochs: usize,
    /// Plateau window `W` in epochs.
    pub plateau_window: usize,
    /// Plateau threshold: stop once the epoch-mean loss improved by less
    /// than this fraction over the last `plateau_window` epochs.
    pub plateau_delta: f64,
    pub gen_epochs: usize,
    pub substitute_opt: OptimizerConfig,
    pub generator_opt: OptimizerConfig,
    /// Fresh optimizer moments every round instead of carrying them over.
    pub reset_optimizer_each_round: bool,
    /// Baseline iterations.
    pub iterations: usize,
    /// Baselines record a trace row every this many iterations.
    pub trace_every: usize,
    pub m_dirs: usize,
    pub fd_step: f64,
    /// Keep per-round parameter snapshots (needed by the diagnostics).
    pub keep_checkpoints: bool,
    /// Fill `wall_ms`; off by default so traces are byte-reproducible.
    pub trace_wall_time: bool,
}

impl Default for StealConfig {
    fn default() -> Self {
        StealConfig {
            algorithm: Algorithm::Mega,
            rounds: 30,
            n_seeds: 256,
            batch_size: 32,
            max_epochs: 50,
            plateau_window: 3,
            plateau_delta: 1e-3,
            gen_epochs: 5,
            substitute_opt: OptimizerConfig::adam(1e-2),
            generator_opt: OptimizerConfig::adam(1e-4),
            reset_optimizer_each_round: false,
            iterations: 1000,
            trace_every: 4,
            m_dirs: 1,
            fd_step: 1e-3,
            keep_checkpoints: true,
            trace_wall_time: false,
        }
    }
}

impl StealConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rounds", self.rounds),
            ("n_seeds", self.n_seeds),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("plateau_window", self.plateau_window),
            ("gen_epochs", self.gen_epochs),
            ("iterations", self.iterations),
            ("trace_every", self.trace_every),
            ("m_dirs", self.m_dirs),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        for (name, v) in [
            ("plateau_delta", self.plateau_delta),
            ("fd_step", self.fd_step),
            ("substitute_lr", self.substitute_opt.learning_rate),
            ("generator_lr", self.generator_opt.learning_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Steal-ledger cost of one unit of work (round or iteration).
    pub fn queries_per_step(&self) -> u64 {
        match self.algorithm {
            Algorithm::Mega => self.n_seeds as u64,
            Algorithm::Dast => self.batch_size as u64,
            Algorithm::Dfme => (self.batch_size * (2 + self.m_dirs)) as u64,
        }
    }

    /// Sets rounds (MEGA) or iterations (baselines) to the largest count
    /// whose total cost fits in `budget`.
    pub fn fit_budget(&mut self, budget: u64) -> Result<()> {
        let steps = (budget / self.queries_per_step()) as usize;
        if steps == 0 {
            return Err(Error::Config(format!(
                "budget {budget} is below the cost of one step ({})",
                self.queries_per_step()
            )));
        }
        match self.algorithm {
            Algorithm::Mega => self.rounds = steps,
            _ => self.iterations = steps,
        }
        Ok(())
    }

    /// Total steal-ledger cost of the configured run.
    pub fn planned_queries(&self) -> u64 {
        let steps = match self.algorithm {
            Algorithm::Mega => self.rounds,
            _ => self.iterations,
        };
        steps as u64 * self.queries_per_step()
    }
}

/// Everything a steal run needs.
#[derive(Clone, Copy)]
pub struct StealSetup<'a> {
    pub oracle: &'a TargetOracle,
    pub generator: &'a NetworkSpec,
    pub substitute: &'a NetworkSpec,
    pub config: &'a StealConfig,
    pub seed: u64,
    /// Real examples on which trace rows also measure agreement with T.
    /// Their labels are ignored; T is asked (on the eval ledger).
    pub heldout: Option<&'a Dataset>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PhaseQueries {
    pub substitute: u64,
    pub generator: u64,
}

#[derive(Clone, Debug)]
pub struct StealOutcome {
    pub algorithm: Algorithm,
    pub substitute: Parameters,
    pub generator: Parameters,
    pub trace: StealRunTrace,
    /// Per-round snapshots (MEGA with `keep_checkpoints`).
    pub checkpoints: Vec<RoundCheckpoint>,
    pub round_stats: Vec<RoundStats>,
    /// The fixed noise set (MEGA) or evaluation noise (baselines).
    pub noise: NoiseSeedSet,
    pub generator_init: Parameters,
    pub phase_queries: PhaseQueries,
}

/// Runs the algorithm named in the config.
pub fn steal(setup: &StealSetup<'_>) -> Result<StealOutcome> {
    match setup.config.algorithm {
        Algorithm::Mega => mega::run(setup),
        Algorithm::Dast => baselines::run_dast(setup),
        Algorithm::Dfme => baselines::run_dfme(setup),
    }
}

pub(crate) fn check_setup(setup: &StealSetup<'_>, expected: Algorithm) -> Result<()> {
    let (g, s, o) = (setup.generator, setup.substitute, setup.oracle);
    setup.config.validate()?;
    if setup.config.algorithm != expected {
        return Err(Error::Config(format!(
            "config selects {}, called {expected}",
            setup.config.algorithm
        )));
    }
    if g.head != Head::UnitInterval || s.head != Head::Softmax {
        return Err(Error::Config("need a generator spec and a classifier spec".into()));
    }
    if g.output_dim() != o.input_dim() || s.input_dim() != o.input_dim() {
        return Err(Error::Config(format!(
            "generator {g} / substitute {s} do not match target input width {}",
            o.input_dim()
        )));
    }
    if s.output_dim() != o.num_classes() {
        return Err(Error::Config(format!(
            "substitute has {} classes, target {}",
            s.output_dim(),
            o.num_classes()
        )));
    }
    if let Some(h) = setup.heldout {
        if h.dim() != o.input_dim() {
            return Err(Error::Config("held-out data width does not match the target".into()));
        }
    }
    Ok(())
}

/// One optimizer step of `params` on the batch cross entropy against
/// constant targets. Returns the batch loss before the step.
pub fn ce_train_step(
    spec: &NetworkSpec,
    params: &mut Parameters,
    opt: &mut OptimizerState,
    inputs: &Tensor,
    targets: &Tensor,
) -> Result<f64> {
    supervised_step(spec, params, opt, inputs, targets, losses::ce_rows)
}

pub(crate) fn supervised_step(
    spec: &NetworkSpec,
    params: &mut Parameters,
    opt: &mut OptimizerState,
    inputs: &Tensor,
    targets: &Tensor,
    rows: fn(&mut Tape, Var, Var) -> Result<Var>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let x = tape.constant(inputs.detached());
    let t = tape.constant(targets.detached());
    let probs = forward(spec, &mut tape, &bound, x)?;
    let per_row = rows(&mut tape, t, probs)?;
    let loss = tape.mean(per_row)?;
    let value = tape.value(loss).data()[0];
    tape.backward(loss)?;
    params.absorb_grads(&tape, &bound)?;
    opt.step(params)?;
    Ok(value)
}

/// Generator step against a frozen substitute. `objective` maps the
/// substitute's probabilities (and constant oracle responses when given)
/// to per-row losses. Returns the batch loss before the step.
pub(crate) fn generator_step(
    gen_spec: &NetworkSpec,
    generator: &mut Parameters,
    opt: &mut OptimizerState,
    sub_spec: &NetworkSpec,
    substitute: &Parameters,
    noise: &Tensor,
    targets: Option<&Tensor>,
    objective: &dyn Fn(&mut Tape, Option<Var>, Var) -> Result<Var>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let g = generator.bind(&mut tape, true);
    let s = substitute.bind(&mut tape, false);
    let z = tape.constant(noise.detached());
    let x = forward(gen_spec, &mut tape, &g, z)?;
    let probs = forward(sub_spec, &mut tape, &s, x)?;
    let t = targets.map(|t| tape.constant(t.detached()));
    let per_row = objective(&mut tape, t, probs)?;
    let loss = tape.mean(per_row)?;
    let value = tape.value(loss).data()[0];
    tape.backward(loss)?;
    generator.absorb_grads(&tape, &g)?;
    opt.step(generator)?;
    Ok(value)
}

/// Shared trace bookkeeping: fixed evaluation noise, cached held-out
/// labels of T, and the wall clock.
pub(crate) struct Recorder<'a> {
    setup: StealSetup<'a>,
    eval_noise: NoiseSeedSet,
    heldout_labels: Option<Vec<usize>>,
    start: Instant,
    trace: StealRunTrace,
}

impl<'a> Recorder<'a> {
    pub fn new(setup: &StealSetup<'a>, nz: usize) -> Result<Self> {
        let eval_noise = NoiseSeedSet::new(setup.config.n_seeds, nz, setup.seed)?;
        let heldout_labels = match setup.heldout {
            Some(h) => Some(setup.oracle.query_labels(LedgerKind::Eval, h.examples())?),
            None => None,
        };
        Ok(Recorder {
            setup: *setup,
            eval_noise,
            heldout_labels,
            start: Instant::now(),
            trace: StealRunTrace::default(),
        })
    }

    pub fn noise(&self) -> &NoiseSeedSet {
        &self.eval_noise
    }

    pub fn record(&mut self, generator: &Parameters, substitute: &Parameters) -> Result<&TraceRow> {
        let s = self.setup;
        let x = generator_forward(s.generator, generator, self.eval_noise.vectors())?;
        let t = s.oracle.query_as(LedgerKind::Eval, &x)?;
        let probs = classifier_forward(s.substitute, substitute, &x)?;
        let stats = trace::compare(&t, &probs)?;
        let heldout_agreement = match (&self.heldout_labels, s.heldout) {
            (Some(labels), Some(h)) => {
                let p = classifier_forward(s.substitute, substitute, h.examples())?;
                let hits = p.row_iter().zip(labels).filter(|(r, &l)| argmax(r) == l).count();
                Some(hits as f64 / labels.len() as f64)
            }
            _ => None,
        };
        let wall_ms = if s.config.trace_wall_time {
            self.start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        self.trace.rows.push(TraceRow {
            round: self.trace.rows.len() + 1,
            queries_cum: s.oracle.ledger_snapshot(),
            loss_fixed_z: stats.loss,
            agreement: stats.agreement,
            conf_s: stats.conf_s,
            conf_t: stats.conf_t,
            wall_ms,
            heldout_agreement,
        });
        Ok(self.trace.rows.last().expect("just pushed"))
    }

    pub fn finish(self) -> (StealRunTrace, NoiseSeedSet) {
        (self.trace, self.eval_noise)
    }
}

/// Agreement of a substitute with T on `data`, charged to the eval ledger.
pub fn heldout_agreement(
    oracle: &TargetOracle,
    sub_spec: &NetworkSpec,
    substitute: &Parameters,
    data: &Dataset,
) -> Result<f64> {
    let t = oracle.query_labels(LedgerKind::Eval, data.examples())?;
    let p = classifier_forward(sub_spec, substitute, data.examples())?;
    let hits = p.row_iter().zip(&t).filter(|(r, &l)| argmax(r) == l).count();
    Ok(hits as f64 / t.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_fitting() {
        let mut c = StealConfig::default();
        c.fit_budget(100_000).unwrap();
        assert_eq!(c.rounds, 390);
        c.algorithm = Algorithm::Dast;
        c.fit_budget(100_000).unwrap();
        assert_eq!(c.iterations, 3125);
        c.algorithm = Algorithm::Dfme;
        c.fit_budget(100_000).unwrap();
        assert_eq!(c.iterations, 1041);
        assert!(c.planned_queries() <= 100_000);
        assert!(c.fit_budget(10).is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let c = StealConfig {
            gen_epochs: 0,
            ..StealConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(m)) if m.contains("gen_epochs")));
        let c = StealConfig {
            fd_step: 0.0,
            ..StealConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn algorithm_names() {
        for a in [Algorithm::Mega, Algorithm::Dast, Algorithm::Dfme] {
            assert_eq!(a.to_string().parse::<Algorithm>().unwrap(), a);
        }
        assert!(matches!("maze".parse::<Algorithm>(), Err(Error::InvalidKind(_))));
    }
}
