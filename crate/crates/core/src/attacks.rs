//! Transfer attacks: adversarial examples crafted with the substitute's
//! input gradients, scored against the black-box target.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{argmax, Tape, Tensor};
use crate::data_io::rng::SeedTree;
use crate::data_io::Dataset;
use crate::error::{Error, Result};
use crate::exec;
use crate::nets::{forward, NetworkSpec, Parameters};
use crate::oracle::{LedgerKind, TargetOracle};
use crate::stealing::losses::{ce_rows, one_hot};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttackKind {
    Fgsm,
    Bim,
    Pgd,
}

impl FromStr for AttackKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "fgsm" => Ok(AttackKind::Fgsm),
            "bim" => Ok(AttackKind::Bim),
            "pgd" => Ok(AttackKind::Pgd),
            other => Err(Error::InvalidKind(other.to_string())),
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Bim => "bim",
            AttackKind::Pgd => "pgd",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    /// Any label other than the original.
    Untargeted,
    /// The configured target class.
    Targeted,
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "untargeted" => Ok(Scenario::Untargeted),
            "targeted" => Ok(Scenario::Targeted),
            other => Err(Error::InvalidKind(other.to_string())),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Untargeted => "untargeted",
            Scenario::Targeted => "targeted",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// L-infinity budget.
    pub eps: f64,
    /// Step size of the iterative kinds.
    pub alpha: f64,
    /// Steps of the iterative kinds (FGSM ignores it).
    pub iterations: usize,
    pub scenario: Scenario,
    pub target_class: usize,
    /// PGD restarts.
    pub restarts: usize,
    /// PGD starts from a uniform point in the ball; off, it starts at the
    /// original like BIM.
    pub random_start: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            kind: AttackKind::Fgsm,
            eps: 0.2,
            alpha: 0.02,
            iterations: 20,
            scenario: Scenario::Untargeted,
            target_class: 1,
            restarts: 1,
            random_start: true,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!(
                "attack eps must be non-negative, got {}",
                self.eps
            )));
        }
        if self.kind != AttackKind::Fgsm {
            if self.iterations == 0 || self.restarts == 0 {
                return Err(Error::Config("attack iterations and restarts must be positive".into()));
            }
            if !(self.alpha > 0.0) || (self.eps > 0.0 && self.alpha > self.eps) {
                return Err(Error::Config(format!(
                    "step size {} must lie in (0, eps = {}]",
                    self.alpha, self.eps
                )));
            }
        }
        if self.target_class >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: self.target_class,
                num_classes,
            });
        }
        Ok(())
    }
}

/// Originals, their adversarial versions, and per-example outcomes (filled
/// by [`evaluate_asr`]).
#[derive(Clone, Debug, PartialEq)]
pub struct AdvBatch {
    pub originals: Tensor,
    pub adversarials: Tensor,
    /// True labels of the originals.
    pub labels: Vec<usize>,
    pub success: Vec<bool>,
}

impl AdvBatch {
    pub fn new(originals: Tensor, adversarials: Tensor, labels: Vec<usize>) -> Result<Self> {
        if originals.shape() != adversarials.shape() || originals.rows() != labels.len() {
            return Err(Error::Shape {
                op: "adv_batch",
                lhs: originals.shape().to_vec(),
                rhs: adversarials.shape().to_vec(),
            });
        }
        let n = labels.len();
        Ok(AdvBatch {
            originals,
            adversarials,
            labels,
            success: vec![false; n],
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Largest `|x_adv - x|` over all coordinates.
    pub fn linf(&self) -> f64 {
        self.originals
            .data()
            .iter()
            .zip(self.adversarials.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

const GRAD_CHUNK: usize = 64;

/// Per-example cross entropy of the substitute against `labels` and its
/// input gradient. Rows are independent, so chunks run in parallel.
pub fn loss_and_input_grad(
    spec: &NetworkSpec,
    params: &Parameters,
    x: &Tensor,
    labels: &[usize],
) -> Result<(Vec<f64>, Tensor)> {
    if x.rows() != labels.len() {
        return Err(Error::Shape {
            op: "input_grad",
            lhs: vec![x.rows()],
            rhs: vec![labels.len()],
        });
    }
    let n = x.rows();
    let chunks = n.div_ceil(GRAD_CHUNK);
    let parts = exec::try_map_indexed(chunks, |c| {
        let idx: Vec<usize> = (c * GRAD_CHUNK..((c + 1) * GRAD_CHUNK).min(n)).collect();
        let rows_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let xv = tape.leaf(x.select_rows(&idx).with_requires_grad());
        let t = tape.constant(one_hot(&rows_labels, spec.output_dim())?);
        let probs = forward(spec, &mut tape, &bound, xv)?;
        let per_row = ce_rows(&mut tape, t, probs)?;
        let total = tape.sum(per_row)?;
        tape.backward(total)?;
        let losses = tape.value(per_row).data().to_vec();
        let grad = tape.grad(xv).expect("input requires grad").to_vec();
        Ok::<_, Error>((losses, grad))
    })?;
    let mut losses = Vec::with_capacity(n);
    let mut grads = Vec::with_capacity(x.numel());
    for (l, g) in parts {
        losses.extend(l);
        grads.extend(g);
    }
    Ok((losses, Tensor::new(x.shape().to_vec(), grads)?))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Labels whose loss the attack follows, and the direction: untargeted
/// ascends the loss of the true label, targeted descends the loss of the
/// target class.
fn attack_labels(config: &AttackConfig, labels: &[usize]) -> (Vec<usize>, f64) {
    match config.scenario {
        Scenario::Untargeted => (labels.to_vec(), 1.0),
        Scenario::Targeted => (vec![config.target_class; labels.len()], -1.0),
    }
}

fn check_inputs(spec: &NetworkSpec, x: &Tensor, labels: &[usize], config: &AttackConfig) -> Result<()> {
    config.validate(spec.output_dim())?;
    if x.rank() != 2 || x.cols() != spec.input_dim() || x.rows() != labels.len() {
        return Err(Error::Shape {
            op: "attack",
            lhs: vec![labels.len(), spec.input_dim()],
            rhs: x.shape().to_vec(),
        });
    }
    if x.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok(())
}

/// One signed step of size `step` from `x`, then projection onto the
/// `eps`-ball around `origin` and the unit box.
fn signed_step(x: &Tensor, grad: &Tensor, origin: &Tensor, step: f64, direction: f64, eps: f64) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .zip(origin.data())
        .map(|((&xi, &g), &o)| {
            let moved = xi + direction * step * sign(g);
            moved.clamp(o - eps, o + eps).clamp(0.0, 1.0)
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
}

pub fn fgsm(
    spec: &NetworkSpec,
    params: &Parameters,
    x: &Tensor,
    labels: &[usize],
    config: &AttackConfig,
) -> Result<Tensor> {
    check_inputs(spec, x, labels, config)?;
    let (follow, direction) = attack_labels(config, labels);
    let (_, grad) = loss_and_input_grad(spec, params, x, &follow)?;
    Ok(signed_step(x, &grad, x, config.eps, direction, config.eps))
}

fn iterate(
    spec: &NetworkSpec,
    params: &Parameters,
    origin: &Tensor,
    start: Tensor,
    follow: &[usize],
    direction: f64,
    config: &AttackConfig,
) -> Result<Tensor> {
    let mut x = start;
    for _ in 0..config.iterations {
        let (_, grad) = loss_and_input_grad(spec, params, &x, follow)?;
        x = signed_step(&x, &grad, origin, config.alpha, direction, config.eps);
    }
    Ok(x)
}

pub fn bim(
    spec: &NetworkSpec,
    params: &Parameters,
    x: &Tensor,
    labels: &[usize],
    config: &AttackConfig,
) -> Result<Tensor> {
    check_inputs(spec, x, labels, config)?;
    let (follow, direction) = attack_labels(config, labels);
    iterate(spec, params, x, x.detached(), &follow, direction, config)
}

/// Projected gradient descent with random restarts; per example, keeps
/// the restart with the highest (untargeted) or lowest (targeted)
/// substitute loss.
pub fn pgd(
    spec: &NetworkSpec,
    params: &Parameters,
    x: &Tensor,
    labels: &[usize],
    config: &AttackConfig,
    seed: u64,
) -> Result<Tensor> {
    check_inputs(spec, x, labels, config)?;
    let (follow, direction) = attack_labels(config, labels);
    let tree = SeedTree::new(seed);
    let mut best: Option<(Tensor, Vec<f64>)> = None;
    for restart in 0..config.restarts {
        let start = if config.random_start {
            let mut rng = tree.stream("pgd_start", restart as u64);
            let data = x
                .data()
                .iter()
                .map(|&v| {
                    let u = if config.eps > 0.0 {
                        rng.random_range(-config.eps..=config.eps)
                    } else {
                        0.0
                    };
                    (v + u).clamp(0.0, 1.0)
                })
                .collect();
            Tensor::new(x.shape().to_vec(), data)?
        } else {
            x.detached()
        };
        let candidate = iterate(spec, params, x, start, &follow, direction, config)?;
        let (loss, _) = loss_and_input_grad(spec, params, &candidate, &follow)?;
        best = Some(match best {
            None => (candidate, loss),
            Some((mut keep, mut keep_loss)) => {
                let cols = x.cols();
                let mut data = keep.into_data();
                for i in 0..x.rows() {
                    if direction * (loss[i] - keep_loss[i]) > 0.0 {
                        data[i * cols..(i + 1) * cols].copy_from_slice(candidate.row(i));
                        keep_loss[i] = loss[i];
                    }
                }
                keep = Tensor::new(x.shape().to_vec(), data)?;
                (keep, keep_loss)
            }
        });
    }
    Ok(best.expect("restarts >= 1").0)
}

/// Uniform random perturbation in the `eps`-ball, clipped to the box: the
/// gradient-free reference for transfer attacks.
pub fn uniform_noise(x: &Tensor, eps: f64, seed: u64) -> Result<Tensor> {
    let mut rng = SeedTree::new(seed).stream("uniform_noise", 0);
    let data = x
        .data()
        .iter()
        .map(|&v| {
            let u = if eps > 0.0 { rng.random_range(-eps..=eps) } else { 0.0 };
            (v + u).clamp(0.0, 1.0)
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Runs the configured attack kind on `x`.
pub fn craft(
    spec: &NetworkSpec,
    params: &Parameters,
    x: &Tensor,
    labels: &[usize],
    config: &AttackConfig,
    seed: u64,
) -> Result<AdvBatch> {
    let adv = match config.kind {
        AttackKind::Fgsm => fgsm(spec, params, x, labels, config)?,
        AttackKind::Bim => bim(spec, params, x, labels, config)?,
        AttackKind::Pgd => pgd(spec, params, x, labels, config, seed)?,
    };
    AdvBatch::new(x.detached(), adv, labels.to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AsrReport {
    pub rate: f64,
    pub successes: usize,
    /// Examples eligible for the attack (see [`evaluate_asr`]).
    pub attempts: usize,
}

/// Attack success rate against the target, charged to the attack ledger.
///
/// Only examples the target originally labels correctly count; in the
/// targeted scenario, examples whose true label already is the target
/// class are excluded as well. Untargeted success: the target's label of
/// the adversarial differs from the true label. Targeted success: it
/// equals `target_class`.
pub fn evaluate_asr(
    oracle: &TargetOracle,
    adv: &mut AdvBatch,
    scenario: Scenario,
    target_class: usize,
) -> Result<AsrReport> {
    if adv.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let before = oracle.query_labels(LedgerKind::Attack, &adv.originals)?;
    let after = oracle.query_labels(LedgerKind::Attack, &adv.adversarials)?;
    let mut attempts = 0;
    let mut successes = 0;
    for i in 0..adv.len() {
        let y = adv.labels[i];
        let eligible = before[i] == y && (scenario == Scenario::Untargeted || y != target_class);
        let hit = eligible
            && match scenario {
                Scenario::Untargeted => after[i] != y,
                Scenario::Targeted => after[i] == target_class,
            };
        adv.success[i] = hit;
        attempts += usize::from(eligible);
        successes += usize::from(hit);
    }
    let rate = if attempts == 0 {
        0.0
    } else {
        successes as f64 / attempts as f64
    };
    Ok(AsrReport {
        rate,
        successes,
        attempts,
    })
}

/// Crafts against `data` with the substitute and scores on the target.
pub fn attack_dataset(
    oracle: &TargetOracle,
    spec: &NetworkSpec,
    params: &Parameters,
    data: &Dataset,
    config: &AttackConfig,
    seed: u64,
) -> Result<(AdvBatch, AsrReport)> {
    let mut adv = craft(spec, params, data.examples(), data.labels(), config, seed)?;
    let report = evaluate_asr(oracle, &mut adv, config.scenario, config.target_class)?;
    Ok((adv, report))
}

/// Predicted labels of a substitute, for reports.
pub fn substitute_labels(spec: &NetworkSpec, params: &Parameters, x: &Tensor) -> Result<Vec<usize>> {
    Ok(crate::nets::classifier_forward(spec, params, x)?
        .row_iter()
        .map(argmax)
        .collect())
}
