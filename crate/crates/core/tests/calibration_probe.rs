use scatterhsd::corpus::gen_split;
use scatterhsd::downstream::HfeConfig;
use scatterhsd::scatter::ScatterConfig;
use scatterhsd::trainer::{
    evaluate, prepare_objects, train, train_two_stage, Model, Regularizer, Schedule, TrainConfig,
};
use std::time::Instant;

#[test]
#[ignore]
fn calibration_probe() {
    let train_split = gen_split(8, 10, 42).unwrap();
    let test_specs = gen_split(8, 40, 42).unwrap().test;
    let scatter = ScatterConfig::new(64, 8, 10_000, 0).unwrap();
    let base = TrainConfig {
        epochs: 36,
        schedule: Schedule::Cosine { min_scale: 0.005 },
        trace_objects: 0,
        hfe: HfeConfig {
            classes: 8,
            level_widths: vec![48, 64, 96],
            head_dim: 64,
            ..HfeConfig::default()
        },
        ..TrainConfig::default()
    };
    let t = Instant::now();
    let objects =
        prepare_objects(&train_split.train, &scatter, base.views, base.upstream.target_points)
            .unwrap();
    println!("prep {:?}", t.elapsed());
    for seed in [3u64, 4] {
        for reg in [Regularizer::Baseline, Regularizer::Dsn, Regularizer::Hsd] {
            let cfg = TrainConfig { seed, regularizer: reg, ..base.clone() };
            let mut model = Model::build(&cfg).unwrap();
            train(&mut model, &objects, &cfg, None).unwrap();
            let report = evaluate(&model, &test_specs, &scatter, &cfg).unwrap();
            println!(
                "{:?} seed {} oa {:.3} cd {:.2} ({:.0}s)",
                reg, seed, report.oa.unwrap(), report.cd_x1000,
                t.elapsed().as_secs_f64()
            );
        }
    }
    // Two-stage comparison, all five seeds.
    for seed in 0u64..5 {
        let cfg = TrainConfig { seed, ..base.clone() };
        let (model, _, _) = train_two_stage(&objects, &cfg, None).unwrap();
        let report = evaluate(&model, &test_specs, &scatter, &cfg).unwrap();
        println!(
            "TwoStage seed {} oa {:.3} cd {:.2} ({:.0}s)",
            seed, report.oa.unwrap(), report.cd_x1000,
            t.elapsed().as_secs_f64()
        );
    }
}
