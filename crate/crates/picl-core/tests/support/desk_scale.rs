//! Shared desk-scale pipeline runs for the end-to-end criteria: five
//! seeds, each pretrained once and adapted twice (with and without the
//! instance loss), computed once per test process.

use std::sync::OnceLock;
use std::time::Instant;

use picl_core::config::RunConfig;
use picl_core::data::generate_world;
use picl_core::trainer::{adapt, evaluate_on, pretrain};

pub struct SeedRun {
    pub seed: u64,
    pub source_eer: f64,
    pub target_eer_baseline: f64,
    pub target_eer_adapted: f64,
    pub target_eer_lambda0: f64,
}

pub struct DeskScaleRuns {
    pub seeds: Vec<SeedRun>,
    pub wall_secs: f64,
}

/// The end-to-end configuration: the default synthetic world and training
/// settings, with the ablation-run memory momentum (0.5, the grid's best
/// row rather than the 0.2 text default).
pub fn desk_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = seed;
    cfg.memory_momentum_source = 0.5;
    cfg.memory_momentum_target = 0.5;
    cfg
}

pub fn desk_scale_results() -> &'static DeskScaleRuns {
    static RUNS: OnceLock<DeskScaleRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let started = Instant::now();
        let seeds = (1..=5u64)
            .map(|seed| {
                let cfg = desk_config(seed);
                let world = generate_world(&cfg.world_spec()).expect("world generation");
                let (model, head, _) = pretrain(&world, &cfg).expect("pretraining");
                let source =
                    evaluate_on(&model, &world.source, &world.source_trials, &cfg).expect("eval");
                let baseline =
                    evaluate_on(&model, &world.target, &world.target_trials, &cfg).expect("eval");

                let (adapted, _, _, _) =
                    adapt(model.clone(), head.clone(), &world, &cfg, None).expect("adaptation");
                let adapted_metrics =
                    evaluate_on(&adapted, &world.target, &world.target_trials, &cfg)
                        .expect("eval");

                let mut cfg0 = cfg.clone();
                cfg0.loss_lambda = 0.0;
                let (adapted0, _, _, _) =
                    adapt(model, head, &world, &cfg0, None).expect("lambda-0 adaptation");
                let lambda0_metrics =
                    evaluate_on(&adapted0, &world.target, &world.target_trials, &cfg0)
                        .expect("eval");

                SeedRun {
                    seed,
                    source_eer: source.eer,
                    target_eer_baseline: baseline.eer,
                    target_eer_adapted: adapted_metrics.eer,
                    target_eer_lambda0: lambda0_metrics.eer,
                }
            })
            .collect();
        DeskScaleRuns {
            seeds,
            wall_secs: started.elapsed().as_secs_f64(),
        }
    })
}
