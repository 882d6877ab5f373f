//! Run-time checks of the convergence argument behind collaborative
//! stealing, evaluated over recorded runs.
//!
//! Each check returns a [`PropertyReport`] holding the statistic, the
//! threshold it was held to, and per-round values so every number can be
//! recomputed from the saved checkpoints and trace.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::autodiff::{argmax, Tape, Tensor};
use crate::data_io::rng::SeedTree;
use crate::error::{Error, Result};
use crate::exec;
use crate::nets::{
    classifier_forward, forward, generator_forward, init_params, NetworkSpec, OptimizerConfig, OptimizerState,
    Parameters,
};
use crate::oracle::{AccessMode, LedgerKind, TargetOracle};
use crate::stealing::losses::{ce_rows, entropy, kl_rows, loss_substitute_ce};
use crate::stealing::{NoiseSeedSet, RoundCheckpoint, TraceRow};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropertyReport {
    pub name: String,
    pub passed: bool,
    pub statistics: BTreeMap<String, f64>,
    /// One value per round (or per trial), in order.
    pub per_case: Vec<f64>,
    pub tolerances: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

impl PropertyReport {
    fn new(name: &str) -> Self {
        PropertyReport {
            name: name.to_string(),
            passed: false,
            statistics: BTreeMap::new(),
            per_case: Vec::new(),
            tolerances: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub fn statistic(&self, key: &str) -> Option<f64> {
        self.statistics.get(key).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    pub lemma1: f64,
    pub theorem1: f64,
    pub argmax: f64,
    pub confidence: f64,
    pub lemma1_slack: f64,
    pub theorem1_slack: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            lemma1: 0.90,
            theorem1: 0.90,
            argmax: 0.95,
            confidence: 0.80,
            lemma1_slack: 1e-6,
            theorem1_slack: 1e-3,
        }
    }
}

/// What the per-round checks need to replay a collaborative run.
#[derive(Clone, Copy)]
pub struct RunArtifacts<'a> {
    pub generator: &'a NetworkSpec,
    pub substitute: &'a NetworkSpec,
    pub checkpoints: &'a [RoundCheckpoint],
    pub noise: &'a NoiseSeedSet,
    pub oracle: &'a TargetOracle,
}

impl RunArtifacts<'_> {
    fn require(&self) -> Result<()> {
        if self.checkpoints.is_empty() {
            return Err(Error::MissingCheckpoint("no round checkpoints".into()));
        }
        Ok(())
    }

    /// Per-example CE of S against T on `G(Z; gen)`.
    fn ce_per_z(&self, gen: &Parameters, sub: &Parameters) -> Result<Vec<f64>> {
        let x = generator_forward(self.generator, gen, self.noise.vectors())?;
        let t = self.oracle.query_as(LedgerKind::Eval, &x)?;
        let s = classifier_forward(self.substitute, sub, &x)?;
        t.row_iter()
            .zip(s.row_iter())
            .map(|(a, b)| loss_substitute_ce(a, b))
            .collect()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Per round and per `z`: is the loss after the generator phase no larger
/// than before it, both measured with the round's substitute?
pub fn check_lemma1(run: &RunArtifacts<'_>, thresholds: &Thresholds) -> Result<PropertyReport> {
    run.require()?;
    let slack = thresholds.lemma1_slack;
    let per_round = exec::try_map_indexed(run.checkpoints.len(), |i| {
        let c = &run.checkpoints[i];
        let after = run.ce_per_z(&c.generator_after, &c.substitute)?;
        let before = run.ce_per_z(&c.generator_before, &c.substitute)?;
        let held = after.iter().zip(&before).filter(|(a, b)| **a <= **b + slack).count();
        Ok::<_, Error>((held, after.len(), mean(&after) - mean(&before)))
    })?;
    let held: usize = per_round.iter().map(|r| r.0).sum();
    let total: usize = per_round.iter().map(|r| r.1).sum();
    let fraction = held as f64 / total as f64;
    let mut r = PropertyReport::new("lemma1");
    r.per_case = per_round.iter().map(|&(h, n, _)| h as f64 / n as f64).collect();
    r.statistics.insert("fraction".into(), fraction);
    r.statistics.insert("pairs".into(), total as f64);
    r.statistics.insert(
        "min_round_fraction".into(),
        r.per_case.iter().copied().fold(f64::INFINITY, f64::min),
    );
    r.statistics.insert(
        "mean_loss_change".into(),
        mean(&per_round.iter().map(|r| r.2).collect::<Vec<_>>()),
    );
    r.tolerances.insert("threshold".into(), thresholds.lemma1);
    r.tolerances.insert("slack".into(), slack);
    r.passed = fraction >= thresholds.lemma1;
    Ok(r)
}

/// Trend of the trace's fixed-noise loss: fraction of non-increasing
/// consecutive pairs, terminal value, and the spread over the last
/// quarter of the run.
pub fn check_theorem1(rows: &[TraceRow], thresholds: &Thresholds) -> Result<PropertyReport> {
    if rows.len() < 5 {
        return Err(Error::TooFewRounds {
            needed: 5,
            found: rows.len(),
        });
    }
    let losses: Vec<f64> = rows.iter().map(|r| r.loss_fixed_z).collect();
    let slack = thresholds.theorem1_slack;
    let pairs = losses.len() - 1;
    let ok = losses.windows(2).filter(|w| w[1] <= w[0] + slack).count();
    let fraction = ok as f64 / pairs as f64;
    let terminal = *losses.last().expect("non-empty");
    let quarter = losses.len().div_ceil(4);
    let tail = &losses[losses.len() - quarter..];
    let flatness =
        tail.iter().copied().fold(f64::NEG_INFINITY, f64::max) - tail.iter().copied().fold(f64::INFINITY, f64::min);
    let mut r = PropertyReport::new("theorem1");
    r.per_case = losses;
    r.statistics.insert("fraction".into(), fraction);
    r.statistics.insert("terminal".into(), terminal);
    r.statistics.insert("last_quartile_range".into(), flatness);
    r.tolerances.insert("threshold".into(), thresholds.theorem1);
    r.tolerances.insert("slack".into(), slack);
    r.passed = fraction >= thresholds.theorem1 && terminal >= 0.0;
    r.notes.push("terminal is the estimate of the limiting loss".into());
    Ok(r)
}

/// After each substitute phase: does S pick T's label on the round's
/// queries `G(Z; theta_g^(t-1))`?
pub fn check_assumption_argmax(run: &RunArtifacts<'_>, thresholds: &Thresholds) -> Result<PropertyReport> {
    run.require()?;
    let per_round = exec::try_map_indexed(run.checkpoints.len(), |i| {
        let c = &run.checkpoints[i];
        argmax_agreement(run, &c.generator_before, &c.substitute)
    })?;
    let min = per_round.iter().copied().fold(f64::INFINITY, f64::min);
    let mut r = PropertyReport::new("assumption_argmax");
    r.statistics.insert("min_agreement".into(), min);
    r.statistics.insert("mean_agreement".into(), mean(&per_round));
    r.per_case = per_round;
    r.tolerances.insert("threshold".into(), thresholds.argmax);
    r.passed = min >= thresholds.argmax;
    Ok(r)
}

/// Agreement of S's and T's arg-max on `G(Z; gen)`.
pub fn argmax_agreement(run: &RunArtifacts<'_>, gen: &Parameters, sub: &Parameters) -> Result<f64> {
    let x = generator_forward(run.generator, gen, run.noise.vectors())?;
    let t = run.oracle.query_labels(LedgerKind::Eval, &x)?;
    let s = classifier_forward(run.substitute, sub, &x)?;
    let hits = s.row_iter().zip(&t).filter(|(row, &l)| argmax(row) == l).count();
    Ok(hits as f64 / t.len() as f64)
}

fn mean_confidence(probs: &Tensor) -> f64 {
    probs.row_iter().map(|r| r[argmax(r)]).sum::<f64>() / probs.rows() as f64
}

/// Mean max-probability of S on `G(Z)` before and after each generator
/// phase. The target side needs probability vectors; pass a
/// probability-only twin of the oracle to include it.
pub fn check_assumption_confidence(
    run: &RunArtifacts<'_>,
    probability_twin: Option<&TargetOracle>,
    thresholds: &Thresholds,
) -> Result<PropertyReport> {
    run.require()?;
    let twin = probability_twin.filter(|o| o.mode() == AccessMode::ProbabilityOnly);
    let per_round = exec::try_map_indexed(run.checkpoints.len(), |i| {
        let c = &run.checkpoints[i];
        let xb = generator_forward(run.generator, &c.generator_before, run.noise.vectors())?;
        let xa = generator_forward(run.generator, &c.generator_after, run.noise.vectors())?;
        let sb = mean_confidence(&classifier_forward(run.substitute, &c.substitute, &xb)?);
        let sa = mean_confidence(&classifier_forward(run.substitute, &c.substitute, &xa)?);
        let t = match twin {
            Some(o) => Some((
                mean_confidence(&o.query_as(LedgerKind::Eval, &xb)?),
                mean_confidence(&o.query_as(LedgerKind::Eval, &xa)?),
            )),
            None => None,
        };
        Ok::<_, Error>((sb, sa, t))
    })?;
    let increases = per_round.iter().filter(|(b, a, _)| a > b).count();
    let fraction = increases as f64 / per_round.len() as f64;
    let mut r = PropertyReport::new("assumption_confidence");
    r.per_case = per_round.iter().map(|(b, a, _)| a - b).collect();
    r.statistics.insert("fraction_increased".into(), fraction);
    r.statistics.insert(
        "mean_before".into(),
        mean(&per_round.iter().map(|p| p.0).collect::<Vec<_>>()),
    );
    r.statistics.insert(
        "mean_after".into(),
        mean(&per_round.iter().map(|p| p.1).collect::<Vec<_>>()),
    );
    if twin.is_some() {
        let t: Vec<(f64, f64)> = per_round.iter().filter_map(|p| p.2).collect();
        let up = t.iter().filter(|(b, a)| a > b).count();
        r.statistics
            .insert("target_fraction_increased".into(), up as f64 / t.len() as f64);
        r.statistics.insert(
            "target_mean_before".into(),
            mean(&t.iter().map(|p| p.0).collect::<Vec<_>>()),
        );
        r.statistics.insert(
            "target_mean_after".into(),
            mean(&t.iter().map(|p| p.1).collect::<Vec<_>>()),
        );
    } else {
        r.notes
            .push("target-side confidence not evaluated: a label-only target always answers with confidence 1".into());
    }
    r.tolerances.insert("threshold".into(), thresholds.confidence);
    r.passed = fraction >= thresholds.confidence;
    Ok(r)
}

fn params_grad(
    spec: &NetworkSpec,
    params: &Parameters,
    probe: &Tensor,
    target: &Tensor,
    kl: bool,
) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let x = tape.constant(probe.detached());
    let t = tape.constant(target.detached());
    let s = forward(spec, &mut tape, &bound, x)?;
    let rows = if kl {
        kl_rows(&mut tape, t, s)?
    } else {
        ce_rows(&mut tape, t, s)?
    };
    let loss = tape.mean(rows)?;
    tape.backward(loss)?;
    let mut p = params.clone();
    p.absorb_grads(&tape, &bound)?;
    let grad = p
        .tensors()
        .flat_map(|(_, t)| t.grad().expect("absorbed").to_vec())
        .collect();
    Ok((tape.value(loss).data()[0], grad))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Parameter-gradient identity and value offset between cross entropy and
/// KL divergence against a constant target.
pub fn ce_kl_identity(spec: &NetworkSpec, params: &Parameters, target: &[f64], probe: &Tensor) -> Result<(f64, f64)> {
    if probe.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    if target.len() != spec.output_dim()
        || target.iter().any(|&p| !(0.0..=1.0).contains(&p))
        || (target.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::Config(format!(
            "{target:?} is not a probability vector of width {}",
            spec.output_dim()
        )));
    }
    let rows: Vec<Vec<f64>> = vec![target.to_vec(); probe.rows()];
    let t = Tensor::from_rows(&rows)?;
    let (ce, g_ce) = params_grad(spec, params, probe, &t, false)?;
    let (kl, g_kl) = params_grad(spec, params, probe, &t, true)?;
    let diff: Vec<f64> = g_ce.iter().zip(&g_kl).map(|(a, b)| a - b).collect();
    let relative = norm(&diff) / (1.0 + norm(&g_ce));
    let offset_error = ((kl - ce) + entropy(target)).abs();
    Ok((relative, offset_error))
}

/// Input-gradient norms of KL and CE with a differentiable target, as a
/// substitute is fitted to it. Returns `|grad_x KL| / |grad_x CE|` at each
/// recording step.
pub fn white_box_ratio_trace(seed: u64, steps: usize, record_every: usize) -> Result<Vec<f64>> {
    let spec = NetworkSpec::classifier(&[2, 8, 2])?;
    let tree = SeedTree::new(seed);
    let target = scaled(&spec, &init_params(&spec, tree.derive_seed("white_box_target", 0)), 3.0);
    let mut sub = init_params(&spec, tree.derive_seed("white_box_substitute", 0));
    let probe = {
        use rand::Rng;
        let mut rng = tree.stream("white_box_probe", 0);
        let data = (0..64 * 2).map(|_| rng.random_range(0.0..1.0)).collect();
        Tensor::new(vec![64, 2], data)?
    };
    let mut opt = OptimizerState::new(OptimizerConfig::adam(1e-2), &sub);
    let mut ratios = Vec::new();
    for step in 0..=steps {
        if step % record_every == 0 || step == steps {
            let kl = input_grad_norm(&spec, &target, &sub, &probe, true)?;
            let ce = input_grad_norm(&spec, &target, &sub, &probe, false)?;
            ratios.push(kl / ce);
        }
        if step == steps {
            break;
        }
        let t = classifier_forward(&spec, &target, &probe)?;
        crate::stealing::ce_train_step(&spec, &mut sub, &mut opt, &probe, &t)?;
    }
    Ok(ratios)
}

fn scaled(spec: &NetworkSpec, params: &Parameters, factor: f64) -> Parameters {
    let layers = params
        .layers()
        .iter()
        .map(|l| crate::nets::Layer {
            weight: Tensor::new(
                l.weight.shape().to_vec(),
                l.weight.data().iter().map(|w| w * factor).collect(),
            )
            .expect("same shape"),
            bias: l.bias.clone(),
        })
        .collect();
    Parameters::from_layers(spec, layers).expect("same shapes")
}

fn input_grad_norm(spec: &NetworkSpec, target: &Parameters, sub: &Parameters, probe: &Tensor, kl: bool) -> Result<f64> {
    let mut tape = Tape::new();
    let tb = target.bind(&mut tape, false);
    let sb = sub.bind(&mut tape, false);
    let x = tape.leaf(probe.detached().with_requires_grad());
    let t = forward(spec, &mut tape, &tb, x)?;
    let s = forward(spec, &mut tape, &sb, x)?;
    let rows = if kl {
        kl_rows(&mut tape, t, s)?
    } else {
        ce_rows(&mut tape, t, s)?
    };
    let loss = tape.sum(rows)?;
    tape.backward(loss)?;
    Ok(norm(tape.grad(x).expect("input requires grad")))
}

/// Cross entropy versus KL divergence: (a) equal parameter gradients for a
/// constant target, (b) values differing by the target's entropy, (c) with
/// a differentiable target, the KL input gradient vanishing relative to
/// the CE one as the substitute fits.
pub fn check_ce_kl(
    spec: &NetworkSpec,
    params: &Parameters,
    target: &[f64],
    probe: &Tensor,
    seed: u64,
) -> Result<PropertyReport> {
    let (relative, offset_error) = ce_kl_identity(spec, params, target, probe)?;
    let ratios = white_box_ratio_trace(seed, 300, 25)?;
    let first = ratios[0];
    let last = *ratios.last().expect("recorded");
    let mut r = PropertyReport::new("ce_kl");
    r.statistics.insert("gradient_relative_difference".into(), relative);
    r.statistics.insert("offset_error".into(), offset_error);
    r.statistics.insert("ratio_start".into(), first);
    r.statistics.insert("ratio_end".into(), last);
    r.per_case = ratios;
    r.tolerances.insert("gradient".into(), 1e-10);
    r.tolerances.insert("offset".into(), 1e-10);
    r.passed = relative <= 1e-10 && offset_error <= 1e-10 && last < first;
    Ok(r)
}
