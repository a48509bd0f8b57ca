//! Adversarial training: alternating discriminator and generator updates,
//! checkpoints and per-step metrics.

mod config;
mod run;
mod state;

pub use config::{HeadInit, LrSchedule, TrainConfig, DESK_SCALE_MAX_STEPS};
pub use run::{checkpoint_name, latest_checkpoint, train, TrainSummary, TrainingData, LATEST_FILE, METRICS_FILE};
pub use state::{Batch, StepRecord, TrainState, DISC_PREFIX};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversarial::{DiscriminatorConfig, LossWeights, PerceptualSource};
    use crate::image::ImageTensor;

    pub(crate) fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs: 1,
            images_per_epoch: 3,
            batch_size: 1,
            crop_size: 96,
            discriminator: DiscriminatorConfig { base_channels: 4, n_layers: 1 },
            perceptual: PerceptualSource::FixedRandom { seed: 1, width_divisor: 16 },
            ..Default::default()
        }
    }

    fn data() -> TrainingData {
        let pairs = (0..3)
            .map(|k| {
                let sharp = ImageTensor::from_fn(104, 100, |y, x| {
                    let v = if ((x + k * 5) / 8 + y / 8) % 2 == 0 { 0.9 } else { 0.1 };
                    [v, 0.5 * v + 0.2, 0.3]
                });
                let blur = sharp.map_values(|v| 0.8 * v + 0.1);
                (blur, sharp)
            })
            .collect();
        TrainingData::new(pairs).unwrap()
    }

    #[test]
    fn batches_are_deterministic_and_aligned() {
        let cfg = TrainConfig { batch_size: 2, ..tiny_config() };
        let d = data();
        let a = d.batch(&cfg, 5).unwrap();
        let b = d.batch(&cfg, 5).unwrap();
        assert_eq!(a.blurred.data(), b.blurred.data());
        assert_eq!(a.blurred.shape(), &[2, 3, 96, 96]);
        let expect: Vec<f32> = a.sharp.data().iter().map(|v| 0.8 * v + 0.1).collect();
        for (x, y) in a.blurred.data().iter().zip(&expect) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_loss_weights_leave_generator_unchanged() {
        let cfg = TrainConfig {
            loss: LossWeights { w_pixel: 0.0, w_perceptual: 0.0, w_adversarial: 0.0 },
            ..tiny_config()
        };
        let mut state = TrainState::new(&cfg).unwrap();
        let before: Vec<Vec<f32>> = state.gen_store.iter().filter(|(_, e)| e.kind == ghost_autograd::EntryKind::Trainable).map(|(_, e)| e.value.data().to_vec()).collect();
        let batch = data().batch(&cfg, 0).unwrap();
        let rec = state.training_step(&batch).unwrap();
        assert_eq!(rec.g_loss, 0.0);
        let after: Vec<Vec<f32>> = state.gen_store.iter().filter(|(_, e)| e.kind == ghost_autograd::EntryKind::Trainable).map(|(_, e)| e.value.data().to_vec()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn replayed_step_is_identical_and_consistent() {
        let cfg = tiny_config();
        let batch = data().batch(&cfg, 0).unwrap();
        let a = TrainState::new(&cfg).unwrap().training_step(&batch).unwrap();
        let b = TrainState::new(&cfg).unwrap().training_step(&batch).unwrap();
        assert_eq!(a.losses(), b.losses());
        assert!(a.losses().iter().all(|v| v.is_finite()));
        assert!((a.breakdown().recombine(&cfg.loss) - a.g_loss).abs() < 1e-6);
    }

    #[test]
    fn non_finite_input_reports_divergence() {
        let cfg = tiny_config();
        let mut batch = data().batch(&cfg, 0).unwrap();
        batch.blurred.data_mut()[7] = f32::NAN;
        let err = TrainState::new(&cfg).unwrap().training_step(&batch).err().unwrap();
        assert!(matches!(err, crate::Error::TrainingDiverged { step: 1, .. }), "{err}");
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let cfg = TrainConfig { epochs: 2, images_per_epoch: 2, checkpoint_every: 2, ..tiny_config() };
        let d = data();
        let full_dir = tempfile::tempdir().unwrap();
        let full = train(&cfg, &d, full_dir.path(), None, |_| {}).unwrap();
        assert_eq!(full.records.len(), 4);

        let part_dir = tempfile::tempdir().unwrap();
        let short = TrainConfig { epochs: 1, ..cfg.clone() };
        train(&short, &d, part_dir.path(), None, |_| {}).unwrap();
        let ckpt = latest_checkpoint(part_dir.path()).unwrap();
        assert!(ckpt.ends_with("ckpt_2.bin"));
        let resumed = train(&cfg, &d, part_dir.path(), Some(&ckpt), |_| {}).unwrap();
        assert_eq!(resumed.records.len(), 2);
        for (a, b) in full.records[2..].iter().zip(&resumed.records) {
            assert_eq!(a.losses(), b.losses());
        }
        let lines = std::fs::read_to_string(part_dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(lines.lines().count(), 4);
        let a = crate::checkpoint::Checkpoint::load(&full.final_checkpoint).unwrap();
        let b = crate::checkpoint::Checkpoint::load(&resumed.final_checkpoint).unwrap();
        assert!(a.tensors == b.tensors);
    }

    #[test]
    fn resume_rejects_changed_hyperparameters() {
        let cfg = tiny_config();
        let state = TrainState::new(&cfg).unwrap();
        let ckpt = state.to_checkpoint().unwrap();
        let other = TrainConfig { lr_generator: 5e-4, ..cfg };
        assert!(matches!(TrainState::from_checkpoint(&ckpt, &other), Err(crate::Error::ConfigMismatch(_))));
    }
}
