//! Competitive baselines: fresh noise every iteration, one substitute step
//! and one generator step per batch, the generator pushing towards
//! disagreement.

use super::forward_diff::{combine, probe_points, sample_directions};
use super::losses::{dast_rows, l1_rows, loss_dfme_l1};
use super::{
    ce_train_step, check_setup, generator_step, supervised_step, Algorithm, NoiseSeedSet, PhaseQueries, Recorder,
    StealConfig, StealOutcome, StealSetup,
};
use crate::autodiff::{Tape, Tensor};
use crate::data_io::rng::SeedTree;
use crate::error::{Error, Result};
use crate::exec;
use crate::nets::{
    classifier_forward, forward, generator_forward, init_params, NetworkSpec, OptimizerState, Parameters,
};
use crate::oracle::{AccessMode, TargetOracle};

pub fn dast_steal(
    oracle: &TargetOracle,
    gen_spec: &NetworkSpec,
    sub_spec: &NetworkSpec,
    config: &StealConfig,
    seed: u64,
) -> Result<StealOutcome> {
    run_dast(&StealSetup {
        oracle,
        generator: gen_spec,
        substitute: sub_spec,
        config,
        seed,
        heldout: None,
    })
}

/// Requires a probability-only oracle: the estimator differentiates the
/// L1 gap between output vectors, which is piecewise constant under
/// one-hot responses.
pub fn dfme_steal(
    oracle: &TargetOracle,
    gen_spec: &NetworkSpec,
    sub_spec: &NetworkSpec,
    config: &StealConfig,
    seed: u64,
) -> Result<StealOutcome> {
    run_dfme(&StealSetup {
        oracle,
        generator: gen_spec,
        substitute: sub_spec,
        config,
        seed,
        heldout: None,
    })
}

fn should_record(cfg: &StealConfig, iteration: usize) -> bool {
    iteration.is_multiple_of(cfg.trace_every) || iteration == cfg.iterations
}

pub(crate) fn run_dast(setup: &StealSetup<'_>) -> Result<StealOutcome> {
    check_setup(setup, Algorithm::Dast)?;
    let (cfg, oracle) = (setup.config, setup.oracle);
    let (gen_spec, sub_spec) = (setup.generator, setup.substitute);
    let tree = SeedTree::new(setup.seed);
    let mut generator = init_params(gen_spec, tree.derive_seed("generator_init", 0));
    let mut substitute = init_params(sub_spec, tree.derive_seed("substitute_init", 0));
    let generator_init = generator.clone();
    let mut sub_opt = OptimizerState::new(cfg.substitute_opt, &substitute);
    let mut gen_opt = OptimizerState::new(cfg.generator_opt, &generator);
    let mut recorder = Recorder::new(setup, gen_spec.input_dim())?;
    let mut phase_queries = PhaseQueries::default();

    for iteration in 1..=cfg.iterations {
        let z = NoiseSeedSet::draw(
            cfg.batch_size,
            gen_spec.input_dim(),
            setup.seed,
            "dast_noise",
            iteration as u64,
        )?;
        let x = generator_forward(gen_spec, &generator, z.vectors())?;
        let before = oracle.ledger_snapshot();
        let t = oracle.query(&x)?;
        phase_queries.substitute += oracle.ledger_snapshot() - before;
        ce_train_step(sub_spec, &mut substitute, &mut sub_opt, &x, &t)?;
        generator_step(
            gen_spec,
            &mut generator,
            &mut gen_opt,
            sub_spec,
            &substitute,
            z.vectors(),
            Some(&t),
            &|tape, t, probs| dast_rows(tape, t.expect("targets supplied"), probs),
        )?;
        if should_record(cfg, iteration) {
            recorder.record(&generator, &substitute)?;
        }
    }

    let (trace, noise) = recorder.finish();
    Ok(StealOutcome {
        algorithm: Algorithm::Dast,
        substitute,
        generator,
        trace,
        checkpoints: Vec::new(),
        round_stats: Vec::new(),
        noise,
        generator_init,
        phase_queries,
    })
}

pub(crate) fn run_dfme(setup: &StealSetup<'_>) -> Result<StealOutcome> {
    if setup.oracle.mode() != AccessMode::ProbabilityOnly {
        return Err(Error::Mode(
            "dfme needs probability vectors from the target; it cannot run against a label-only oracle".into(),
        ));
    }
    check_setup(setup, Algorithm::Dfme)?;
    let (cfg, oracle) = (setup.config, setup.oracle);
    let (gen_spec, sub_spec) = (setup.generator, setup.substitute);
    let tree = SeedTree::new(setup.seed);
    let mut generator = init_params(gen_spec, tree.derive_seed("generator_init", 0));
    let mut substitute = init_params(sub_spec, tree.derive_seed("substitute_init", 0));
    let generator_init = generator.clone();
    let mut sub_opt = OptimizerState::new(cfg.substitute_opt, &substitute);
    let mut gen_opt = OptimizerState::new(cfg.generator_opt, &generator);
    let mut recorder = Recorder::new(setup, gen_spec.input_dim())?;
    let mut phase_queries = PhaseQueries::default();
    let (b, m, d) = (cfg.batch_size, cfg.m_dirs, gen_spec.output_dim());

    for iteration in 1..=cfg.iterations {
        let z = NoiseSeedSet::draw(b, gen_spec.input_dim(), setup.seed, "dfme_noise", iteration as u64)?;

        // Generator phase: estimate dL/dx for every example from one batched
        // query of the points and their probes, then chain through G exactly.
        let x = generator_forward(gen_spec, &generator, z.vectors())?;
        let mut rng = tree.stream("dfme_directions", iteration as u64);
        let dirs: Vec<Vec<Vec<f64>>> = (0..b).map(|_| sample_directions(&mut rng, d, m)).collect();
        let mut probe_rows = Vec::with_capacity(b * (1 + m) * d);
        for (row, dirs) in x.row_iter().zip(&dirs) {
            probe_rows.extend_from_slice(row);
            for p in probe_points(row, dirs, cfg.fd_step) {
                probe_rows.extend(p);
            }
        }
        let probes = Tensor::new(vec![b * (1 + m), d], probe_rows)?;
        let before = oracle.ledger_snapshot();
        let t_probe = oracle.query(&probes)?;
        phase_queries.generator += oracle.ledger_snapshot() - before;
        let s_probe = classifier_forward(sub_spec, &substitute, &probes)?;
        let grads = exec::try_map_indexed(b, |i| {
            let f = |r: usize| loss_dfme_l1(t_probe.row(r), s_probe.row(r));
            let base = i * (1 + m);
            let f0 = f(base)?;
            let fs = (1..=m).map(|k| f(base + k)).collect::<Result<Vec<_>>>()?;
            combine(f0, &fs, &dirs[i], cfg.fd_step)
        })?;
        let ghat = Tensor::new(vec![b, d], grads.concat())?;
        dfme_generator_step(gen_spec, &mut generator, &mut gen_opt, z.vectors(), &ghat)?;

        // Substitute phase on the updated generator's output.
        let x = generator_forward(gen_spec, &generator, z.vectors())?;
        let before = oracle.ledger_snapshot();
        let t = oracle.query(&x)?;
        phase_queries.substitute += oracle.ledger_snapshot() - before;
        supervised_step(sub_spec, &mut substitute, &mut sub_opt, &x, &t, l1_rows)?;

        if should_record(cfg, iteration) {
            recorder.record(&generator, &substitute)?;
        }
    }

    let (trace, noise) = recorder.finish();
    Ok(StealOutcome {
        algorithm: Algorithm::Dfme,
        substitute,
        generator,
        trace,
        checkpoints: Vec::new(),
        round_stats: Vec::new(),
        noise,
        generator_init,
        phase_queries,
    })
}

/// Ascends the estimated disagreement: minimises `-(1/B) sum_b <g_b, G(z_b)>`
/// so the parameter gradient is `-(1/B) sum_b g_b dG(z_b)/dtheta`.
fn dfme_generator_step(
    gen_spec: &NetworkSpec,
    generator: &mut Parameters,
    opt: &mut OptimizerState,
    noise: &Tensor,
    ghat: &Tensor,
) -> Result<()> {
    let mut tape = Tape::new();
    let g = generator.bind(&mut tape, true);
    let z = tape.constant(noise.detached());
    let x = forward(gen_spec, &mut tape, &g, z)?;
    let gv = tape.constant(ghat.detached());
    let prod = tape.mul(x, gv)?;
    let rows = tape.sum_axis(prod, 1)?;
    let mean = tape.mean(rows)?;
    let loss = tape.scale(mean, -1.0)?;
    tape.backward(loss)?;
    generator.absorb_grads(&tape, &g)?;
    opt.step(generator)
}
