// Scratch probe for overfit tuning; removed once the acceptance suite lands.
use evnet_core::data::{synth_generate, SynthKind};
use evnet_core::model::{task_preset, ModelConfig, ModelParams};
use evnet_core::traj::TaskKind;
use evnet_core::train::{dataset_ade, fit, TrainConfig, TrainSample};
use evnet_core::transforms::TransformKind;

#[test]
#[ignore]
fn probe() {
    let task = task_preset(TaskKind::Co);
    let mut tracks = synth_generate(SynthKind::Linear, 8, &task, 61).unwrap();
    tracks.extend(synth_generate(SynthKind::Circular, 8, &task, 62).unwrap());
    let dataset: Vec<TrainSample> = tracks
        .iter()
        .map(|t| TrainSample { obs: t.slice_steps(0, 8), future: t.slice_steps(8, 12) })
        .collect();

    for kind in [TransformKind::Dft, TransformKind::Haar] {
        for noise_dim in [16usize, 8] {
            let mut cfg = ModelConfig::small(kind, task).unwrap();
            cfg.noise_dim = noise_dim;
            let lr = 3e-3;
            let start = std::time::Instant::now();
            let mut params = ModelParams::init(&cfg, 63).unwrap();
            let train = TrainConfig { lr, batch_size: 16, epochs: 2000, k_train: 3, seed: 64 };
            let log = fit(&dataset, &cfg, &train, &mut params).unwrap();
            let last = log.last().unwrap();
            let ade3 = dataset_ade(&dataset, &params, &cfg, 3, 65).unwrap();
            let ade20 = dataset_ade(&dataset, &params, &cfg, 20, 65).unwrap();
            println!(
                "{kind:?} nd={noise_dim} lr={lr}: akl {:.4} apl {:.4} | ADE@3 {:.4} ADE@20 {:.4} ({:.0?})",
                last.akl, last.apl, ade3, ade20, start.elapsed()
            );
        }
    }
}
