use crate::autodiff::{argmax, Tensor};
use crate::data_io::rng::{normals, SeedTree};
use crate::error::Result;
use crate::nets::Parameters;

/// The noise collection `Z`: `n_seeds` standard-normal vectors of width
/// `nz`, drawn once from the run seed.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSeedSet {
    vectors: Tensor,
    seed: u64,
}

pub(crate) const NOISE_SET_LABEL: &str = "noise_set";

impl NoiseSeedSet {
    pub fn new(n_seeds: usize, nz: usize, seed: u64) -> Result<Self> {
        Self::draw(n_seeds, nz, seed, NOISE_SET_LABEL, 0)
    }

    /// A batch from an independent labelled stream, for the baselines'
    /// per-iteration noise.
    pub fn draw(n: usize, nz: usize, seed: u64, label: &str, counter: u64) -> Result<Self> {
        let mut rng = SeedTree::new(seed).stream(label, counter);
        let vectors = Tensor::new(vec![n, nz], normals(&mut rng, n * nz))?;
        Ok(NoiseSeedSet { vectors, seed })
    }

    pub fn from_tensor(vectors: Tensor, seed: u64) -> Self {
        NoiseSeedSet { vectors, seed }
    }

    pub fn vectors(&self) -> &Tensor {
        &self.vectors
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One trace row, written after each MEGA round or at each recording
/// point of a baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub round: usize,
    /// Steal-ledger count when the row was recorded.
    pub queries_cum: u64,
    /// Mean cross entropy of S against T over `G(Z)` with the current
    /// generator.
    pub loss_fixed_z: f64,
    /// Fraction of `G(Z)` where S and T agree on the arg-max.
    pub agreement: f64,
    pub conf_s: f64,
    pub conf_t: f64,
    pub wall_ms: f64,
    /// Agreement with T on a held-out real dataset, when one was supplied.
    pub heldout_agreement: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StealRunTrace {
    pub rows: Vec<TraceRow>,
}

impl StealRunTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss_fixed_z).collect()
    }

    /// Best held-out agreement and the steal-ledger count of the first row
    /// that reached it; `None` without held-out data.
    pub fn best_heldout(&self) -> Option<(f64, u64)> {
        let mut best: Option<(f64, u64)> = None;
        for r in &self.rows {
            let a = r.heldout_agreement?;
            if best.is_none_or(|(b, _)| a > b) {
                best = Some((a, r.queries_cum));
            }
        }
        best
    }

    /// Same as [`StealRunTrace::best_heldout`] over the `agreement` column.
    pub fn best_agreement(&self) -> Option<(f64, u64)> {
        let mut best: Option<(f64, u64)> = None;
        for r in &self.rows {
            if best.is_none_or(|(b, _)| r.agreement > b) {
                best = Some((r.agreement, r.queries_cum));
            }
        }
        best
    }
}

/// Parameters at the phase boundaries of one MEGA round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundCheckpoint {
    pub round: usize,
    /// Generator entering the round (`theta_g^(t-1)`).
    pub generator_before: Parameters,
    /// Substitute after its inner loop (`theta_s^(t)`).
    pub substitute: Parameters,
    /// Generator after its inner loop (`theta_g^(t)`).
    pub generator_after: Parameters,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundStats {
    pub round: usize,
    pub substitute_epochs: usize,
    pub substitute_loss: f64,
    pub generator_loss: f64,
}

/// Row statistics of a pair of response matrices.
pub(crate) struct Agreement {
    pub loss: f64,
    pub agreement: f64,
    pub conf_s: f64,
    pub conf_t: f64,
}

pub(crate) fn compare(t: &Tensor, s: &Tensor) -> Result<Agreement> {
    let n = t.rows() as f64;
    let mut loss = 0.0;
    let mut hits = 0usize;
    let mut conf_s = 0.0;
    let mut conf_t = 0.0;
    for (tr, sr) in t.row_iter().zip(s.row_iter()) {
        loss += super::losses::loss_substitute_ce(tr, sr)?;
        let (kt, ks) = (argmax(tr), argmax(sr));
        hits += usize::from(kt == ks);
        conf_s += sr[ks];
        conf_t += tr[kt];
    }
    Ok(Agreement {
        loss: loss / n,
        agreement: hits as f64 / n,
        conf_s: conf_s / n,
        conf_t: conf_t / n,
    })
}
