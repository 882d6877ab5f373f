use super::losses::confidence_rows;
use super::{
    ce_train_step, check_setup, generator_step, Algorithm, PhaseQueries, Recorder, RoundCheckpoint, RoundStats,
    StealConfig, StealOutcome, StealSetup,
};
use crate::autodiff::Tensor;
use crate::data_io::rng::{permutation, SeedTree};
use crate::error::Result;
use crate::nets::{generator_forward, init_params, NetworkSpec, OptimizerState, Parameters};
use crate::oracle::TargetOracle;

/// Collaborative stealing with a fixed noise set: each round queries
/// `G(Z)` once, fits the substitute to the answers until its loss
/// plateaus, then trains the generator to raise the frozen substitute's
/// confidence on `G(Z)`.
pub fn mega_steal(
    oracle: &TargetOracle,
    gen_spec: &NetworkSpec,
    sub_spec: &NetworkSpec,
    config: &StealConfig,
    seed: u64,
) -> Result<StealOutcome> {
    run(&StealSetup {
        oracle,
        generator: gen_spec,
        substitute: sub_spec,
        config,
        seed,
        heldout: None,
    })
}

pub(crate) fn batch_stream_counter(round: usize, epoch: usize) -> u64 {
    ((round as u64) << 32) | epoch as u64
}

/// Mini-batch epochs over `(x, t)` until the epoch-mean loss stops
/// improving by `plateau_delta` (relative) across `plateau_window` epochs.
/// Returns the epoch count and the last epoch-mean loss.
pub(crate) fn fit_until_plateau(
    spec: &NetworkSpec,
    params: &mut Parameters,
    opt: &mut OptimizerState,
    x: &Tensor,
    t: &Tensor,
    config: &StealConfig,
    tree: &SeedTree,
    round: usize,
) -> Result<(usize, f64)> {
    let n = x.rows();
    let mut history: Vec<f64> = Vec::with_capacity(config.max_epochs);
    for epoch in 0..config.max_epochs {
        let order = permutation(
            &mut tree.stream("mega_substitute", batch_stream_counter(round, epoch)),
            n,
        );
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let loss = ce_train_step(spec, params, opt, &x.select_rows(chunk), &t.select_rows(chunk))?;
            total += loss * chunk.len() as f64;
        }
        let mean = total / n as f64;
        history.push(mean);
        if history.len() > config.plateau_window {
            let prev = history[history.len() - 1 - config.plateau_window];
            if prev <= 0.0 || (prev - mean) / prev < config.plateau_delta {
                break;
            }
        }
    }
    Ok((history.len(), *history.last().expect("max_epochs >= 1")))
}

pub(crate) fn run(setup: &StealSetup<'_>) -> Result<StealOutcome> {
    check_setup(setup, Algorithm::Mega)?;
    let (cfg, oracle) = (setup.config, setup.oracle);
    let (gen_spec, sub_spec) = (setup.generator, setup.substitute);
    let tree = SeedTree::new(setup.seed);
    let mut generator = init_params(gen_spec, tree.derive_seed("generator_init", 0));
    let mut substitute = init_params(sub_spec, tree.derive_seed("substitute_init", 0));
    let generator_init = generator.clone();
    let mut sub_opt = OptimizerState::new(cfg.substitute_opt, &substitute);
    let mut gen_opt = OptimizerState::new(cfg.generator_opt, &generator);

    let mut recorder = Recorder::new(setup, gen_spec.input_dim())?;
    let z = recorder.noise().vectors().clone();
    let n = z.rows();
    let mut checkpoints = Vec::new();
    let mut round_stats = Vec::with_capacity(cfg.rounds);
    let mut phase_queries = PhaseQueries::default();

    for round in 1..=cfg.rounds {
        if cfg.reset_optimizer_each_round {
            sub_opt = OptimizerState::new(cfg.substitute_opt, &substitute);
            gen_opt = OptimizerState::new(cfg.generator_opt, &generator);
        }
        let generator_before = cfg.keep_checkpoints.then(|| generator.clone());

        let x = generator_forward(gen_spec, &generator, &z)?;
        let before = oracle.ledger_snapshot();
        let t = oracle.query(&x)?;
        phase_queries.substitute += oracle.ledger_snapshot() - before;

        let (substitute_epochs, substitute_loss) =
            fit_until_plateau(sub_spec, &mut substitute, &mut sub_opt, &x, &t, cfg, &tree, round)?;

        let mut generator_loss = 0.0;
        for epoch in 0..cfg.gen_epochs {
            let order = permutation(
                &mut tree.stream("mega_generator", batch_stream_counter(round, epoch)),
                n,
            );
            let mut total = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                let loss = generator_step(
                    gen_spec,
                    &mut generator,
                    &mut gen_opt,
                    sub_spec,
                    &substitute,
                    &z.select_rows(chunk),
                    None,
                    &|tape, _, probs| confidence_rows(tape, probs),
                )?;
                total += loss * chunk.len() as f64;
            }
            generator_loss = total / n as f64;
        }

        recorder.record(&generator, &substitute)?;
        round_stats.push(RoundStats {
            round,
            substitute_epochs,
            substitute_loss,
            generator_loss,
        });
        if let Some(generator_before) = generator_before {
            checkpoints.push(RoundCheckpoint {
                round,
                generator_before,
                substitute: substitute.clone(),
                generator_after: generator.clone(),
            });
        }
    }

    let (trace, noise) = recorder.finish();
    Ok(StealOutcome {
        algorithm: Algorithm::Mega,
        substitute,
        generator,
        trace,
        checkpoints,
        round_stats,
        noise,
        generator_init,
        phase_queries,
    })
}
