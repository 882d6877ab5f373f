//! The black-box target: a trained classifier reachable only through
//! metered queries.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::autodiff::{argmax, Tensor};
use crate::data_io::{load_checkpoint, permutation, save_checkpoint, CheckpointHeader, Dataset, SeedTree};
use crate::error::{Error, Result};
use crate::nets::{classifier_forward, init_params, Head, NetworkSpec, OptimizerConfig, OptimizerState, Parameters};
use crate::stealing::ce_train_step;
use crate::stealing::losses::one_hot;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccessMode {
    /// One-hot vector of the predicted label.
    LabelOnly,
    /// Full class-probability vector.
    ProbabilityOnly,
}

impl FromStr for AccessMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "label_only" => Ok(AccessMode::LabelOnly),
            "probability_only" => Ok(AccessMode::ProbabilityOnly),
            other => Err(Error::InvalidKind(other.to_string())),
        }
    }
}

impl fmt::Display for AccessMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AccessMode::LabelOnly => "label_only",
            AccessMode::ProbabilityOnly => "probability_only",
        })
    }
}

/// Which ledger a query is charged to. Stealing algorithms spend the
/// `Steal` budget; attack evaluation and run-time measurements (trace
/// rows, held-out agreement, diagnostics) are kept apart so they never
/// distort the budget comparisons.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LedgerKind {
    Steal,
    Attack,
    Eval,
}

#[derive(Debug, Default)]
struct Ledger {
    steal: AtomicU64,
    attack: AtomicU64,
    eval: AtomicU64,
}

impl Ledger {
    fn counter(&self, kind: LedgerKind) -> &AtomicU64 {
        match kind {
            LedgerKind::Steal => &self.steal,
            LedgerKind::Attack => &self.attack,
            LedgerKind::Eval => &self.eval,
        }
    }
}

/// Wraps a hidden classifier. Nothing on the public surface returns its
/// parameters, logits, or gradients; responses are plain tensors.
pub struct TargetOracle {
    spec: NetworkSpec,
    params: Parameters,
    mode: AccessMode,
    ledger: Ledger,
    heldout_accuracy: Option<f64>,
}

impl fmt::Debug for TargetOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetOracle")
            .field("mode", &self.mode)
            .field("steal_queries", &self.ledger(LedgerKind::Steal))
            .field("heldout_accuracy", &self.heldout_accuracy)
            .finish_non_exhaustive()
    }
}

impl TargetOracle {
    /// Hides an already trained classifier behind the query interface.
    pub fn deploy(spec: NetworkSpec, params: Parameters, mode: AccessMode) -> Result<Self> {
        if spec.head != Head::Softmax {
            return Err(Error::Config(format!("target {spec} is not a classifier")));
        }
        let params = Parameters::from_layers(&spec, params.layers().to_vec())?;
        Ok(TargetOracle {
            spec,
            params,
            mode,
            ledger: Ledger::default(),
            heldout_accuracy: None,
        })
    }

    /// Loads a target checkpoint written by [`TargetOracle::save`].
    pub fn load(path: &Path, mode: AccessMode) -> Result<Self> {
        let (spec, params, _) = load_checkpoint(path)?;
        TargetOracle::deploy(spec, params, mode)
    }

    pub fn save(&self, path: &Path, seed: u64) -> Result<()> {
        save_checkpoint(
            path,
            &self.spec,
            &self.params,
            &CheckpointHeader::new("", seed, 0, "target"),
        )
    }

    /// The same hidden model under another access mode, with fresh ledgers.
    pub fn twin(&self, mode: AccessMode) -> TargetOracle {
        TargetOracle {
            spec: self.spec.clone(),
            params: self.params.clone(),
            mode,
            ledger: Ledger::default(),
            heldout_accuracy: self.heldout_accuracy,
        }
    }

    pub fn mode(&self) -> AccessMode {
        self.mode
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.spec.output_dim()
    }

    pub fn heldout_accuracy(&self) -> Option<f64> {
        self.heldout_accuracy
    }

    /// Queries charged to the stealing budget.
    pub fn query(&self, batch: &Tensor) -> Result<Tensor> {
        self.query_as(LedgerKind::Steal, batch)
    }

    pub fn query_as(&self, kind: LedgerKind, batch: &Tensor) -> Result<Tensor> {
        let probs = classifier_forward(&self.spec, &self.params, batch)?;
        self.ledger
            .counter(kind)
            .fetch_add(batch.rows() as u64, Ordering::SeqCst);
        match self.mode {
            AccessMode::ProbabilityOnly => Ok(probs),
            AccessMode::LabelOnly => {
                let labels: Vec<usize> = probs.row_iter().map(argmax).collect();
                one_hot(&labels, self.num_classes())
            }
        }
    }

    /// Predicted labels; costs one query per row like [`TargetOracle::query_as`].
    pub fn query_labels(&self, kind: LedgerKind, batch: &Tensor) -> Result<Vec<usize>> {
        Ok(self.query_as(kind, batch)?.row_iter().map(argmax).collect())
    }

    /// Steal-ledger count.
    pub fn ledger_snapshot(&self) -> u64 {
        self.ledger(LedgerKind::Steal)
    }

    pub fn ledger(&self, kind: LedgerKind) -> u64 {
        self.ledger.counter(kind).load(Ordering::SeqCst)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainTargetConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub mode: AccessMode,
}

impl Default for TrainTargetConfig {
    fn default() -> Self {
        TrainTargetConfig {
            epochs: 50,
            batch_size: 32,
            optimizer: OptimizerConfig::adam(1e-3),
            mode: AccessMode::LabelOnly,
        }
    }
}

/// Fraction of `data` a classifier labels correctly.
pub fn accuracy(spec: &NetworkSpec, params: &Parameters, data: &Dataset) -> Result<f64> {
    let probs = classifier_forward(spec, params, data.examples())?;
    let hits = probs
        .row_iter()
        .zip(data.labels())
        .filter(|(p, &l)| argmax(p) == l)
        .count();
    Ok(hits as f64 / data.len() as f64)
}

/// Trains a classifier on `train` with cross entropy and deploys it. The
/// held-out accuracy on `test` (when given) is recorded on the oracle.
pub fn train_target(
    spec: &NetworkSpec,
    train: &Dataset,
    test: Option<&Dataset>,
    config: &TrainTargetConfig,
    seed: u64,
) -> Result<TargetOracle> {
    if train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if train.dim() != spec.input_dim() {
        return Err(Error::Shape {
            op: "train_target",
            lhs: vec![spec.input_dim()],
            rhs: vec![train.dim()],
        });
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let classes = spec.output_dim();
    if let Some(&label) = train.labels().iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange {
            label,
            num_classes: classes,
        });
    }
    let tree = SeedTree::new(seed);
    let mut params = init_params(spec, tree.derive_seed("target_init", 0));
    let mut opt = OptimizerState::new(config.optimizer, &params);
    let targets = one_hot(train.labels(), classes)?;
    for epoch in 0..config.epochs {
        let order = permutation(&mut tree.stream("target_epoch", epoch as u64), train.len());
        for chunk in order.chunks(config.batch_size) {
            let x = train.examples().select_rows(chunk);
            let t = targets.select_rows(chunk);
            ce_train_step(spec, &mut params, &mut opt, &x, &t)?;
        }
    }
    let mut oracle = TargetOracle::deploy(spec.clone(), params, config.mode)?;
    if let Some(test) = test {
        oracle.heldout_accuracy = Some(accuracy(spec, &oracle.params, test)?);
    }
    Ok(oracle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::Layer;

    fn fixed_oracle(mode: AccessMode) -> TargetOracle {
        // logits = x * W with W favouring class 2 for positive inputs
        let spec = NetworkSpec::classifier(&[1, 3]).unwrap();
        let layer = Layer {
            weight: Tensor::new(vec![1, 3], vec![0.0, 1.0, 2.0]).unwrap(),
            bias: Tensor::zeros(vec![3]),
        };
        let params = Parameters::from_layers(&spec, vec![layer]).unwrap();
        TargetOracle::deploy(spec, params, mode).unwrap()
    }

    #[test]
    fn label_only_is_one_hot_of_argmax() {
        let o = fixed_oracle(AccessMode::LabelOnly);
        let r = o.query(&Tensor::new(vec![2, 1], vec![1.0, 0.0]).unwrap()).unwrap();
        // second row: all logits equal, smallest index wins
        assert_eq!(r.data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert!(!r.requires_grad());
    }

    #[test]
    fn probability_rows_normalized() {
        let o = fixed_oracle(AccessMode::ProbabilityOnly);
        let r = o.query(&Tensor::new(vec![3, 1], vec![0.1, 0.5, 0.9]).unwrap()).unwrap();
        for row in r.row_iter() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn ledger_counts_examples() {
        let o = fixed_oracle(AccessMode::LabelOnly);
        assert_eq!(o.ledger_snapshot(), 0);
        o.query(&Tensor::zeros(vec![8, 1])).unwrap();
        o.query(&Tensor::zeros(vec![3, 1])).unwrap();
        assert_eq!(o.ledger_snapshot(), 11);
        assert_eq!(o.ledger_snapshot(), 11);
        o.query_as(LedgerKind::Attack, &Tensor::zeros(vec![4, 1])).unwrap();
        assert_eq!(o.ledger_snapshot(), 11);
        assert_eq!(o.ledger(LedgerKind::Attack), 4);
        assert!(o.query(&Tensor::zeros(vec![2, 2])).is_err());
        assert_eq!(o.ledger_snapshot(), 11, "failed queries are not charged");
    }

    #[test]
    fn twin_has_fresh_ledger_and_same_model() {
        let o = fixed_oracle(AccessMode::LabelOnly);
        let x = Tensor::new(vec![1, 1], vec![0.3]).unwrap();
        o.query(&x).unwrap();
        let p = o.twin(AccessMode::ProbabilityOnly);
        assert_eq!(p.ledger_snapshot(), 0);
        let probs = p.query(&x).unwrap();
        let hot = o.query(&x).unwrap();
        assert_eq!(hot.row(0)[argmax(probs.row(0))], 1.0);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [AccessMode::LabelOnly, AccessMode::ProbabilityOnly] {
            assert_eq!(m.to_string().parse::<AccessMode>().unwrap(), m);
        }
        assert!("logits".parse::<AccessMode>().is_err());
    }
}
