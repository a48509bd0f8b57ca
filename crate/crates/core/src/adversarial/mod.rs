//! Double-scale patch discriminators and the composite generator objective.

mod discriminator;
mod loss;
mod perceptual;

pub use discriminator::{CropRecord, DiscriminatorConfig, DiscriminatorPair, PatchDiscriminator, Scores};
pub use loss::{ragan_ls, ragan_ls_multi, total_generator_loss, LossBreakdown, LossWeights, RaganLs};
pub use perceptual::{PerceptualExtractor, PerceptualSource, FEATURE_LAYER};

#[cfg(test)]
mod tests {
    use ghost_autograd::{Array, Ctx, ParamStore, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn scores(v: &[f64]) -> Tensor<f64> {
        Tensor::constant(Array::from_vec(vec![v.len()], v.to_vec()))
    }

    #[test]
    fn receptive_field_of_default_stack_is_70() {
        let cfg = DiscriminatorConfig::default();
        assert_eq!(cfg.receptive_field(), 70);
        assert_eq!(cfg.output_size(256, 256), (35, 35));
    }

    #[test]
    fn score_map_shape_matches_config() {
        let cfg = DiscriminatorConfig { base_channels: 4, n_layers: 3 };
        let (pair, store) = DiscriminatorPair::build::<f32>(&cfg, 1).unwrap();
        let x = Tensor::constant(Array::from_fn(vec![1, 3, 160, 144], |i| ((i % 13) as f32) / 13.0 - 0.5));
        let crop = CropRecord::sample(160, 144, &mut ChaCha8Rng::seed_from_u64(3));
        let s = pair.forward(&Ctx::inference(&store), &x, &crop).unwrap();
        let (gh, gw) = cfg.output_size(160, 144);
        assert_eq!(s.global.shape(), &[1, 1, gh, gw]);
        let (lh, lw) = cfg.output_size(80, 72);
        assert_eq!(s.local.shape(), &[1, 1, lh, lw]);
        assert!(s.global.value().all_finite() && s.local.value().all_finite());
    }

    #[test]
    fn undersized_input_is_a_contract_error() {
        let (pair, store) = DiscriminatorPair::build::<f32>(&DiscriminatorConfig { base_channels: 4, n_layers: 3 }, 1).unwrap();
        let x = Tensor::constant(Array::zeros(vec![1, 3, 64, 64]));
        assert!(pair.global.forward(&Ctx::inference(&store), &x).is_err());
    }

    #[test]
    fn zero_weight_discriminator_emits_its_final_bias() {
        let cfg = DiscriminatorConfig { base_channels: 4, n_layers: 2 };
        let (pair, mut store) = DiscriminatorPair::build::<f64>(&cfg, 5).unwrap();
        let ids: Vec<_> = store.iter().map(|(id, e)| (id, e.name.clone(), e.value.shape().to_vec())).collect();
        for (id, name, shape) in ids {
            let v = if name == "global.layers.3.conv.bias" { 0.375 } else { 0.0 };
            store.set(id, Array::full(shape, v));
        }
        let x = Tensor::constant(Array::from_fn(vec![1, 3, 96, 96], |i| (i as f64 * 0.37).sin()));
        let s = pair.global.forward(&Ctx::inference(&store), &x).unwrap();
        assert!(s.value().data().iter().all(|&v| v == 0.375));
    }

    #[test]
    fn crop_is_a_quarter_of_the_area_and_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let c = CropRecord::sample(256, 200, &mut rng);
            assert_eq!((c.height, c.width), (128, 100));
            assert!(c.y0 + c.height <= 256 && c.x0 + c.width <= 200);
        }
    }

    #[test]
    fn ragan_ls_plug_in_values() {
        let r = ragan_ls(&scores(&[1.0; 6]), &scores(&[-1.0; 4])).unwrap();
        assert_eq!((r.d_loss.item(), r.g_loss.item()), (2.0, 18.0));
        let z = ragan_ls(&scores(&[0.0; 3]), &scores(&[0.0; 3])).unwrap();
        assert_eq!((z.d_loss.item(), z.g_loss.item()), (2.0, 2.0));
    }

    #[test]
    fn ragan_ls_rejects_non_finite_scores() {
        assert!(matches!(
            ragan_ls(&scores(&[f64::NAN]), &scores(&[0.0])),
            Err(crate::Error::NonFinite(_))
        ));
    }

    #[test]
    fn multi_scale_average() {
        let a = (scores(&[1.0]), scores(&[-1.0]));
        let b = (scores(&[0.0]), scores(&[0.0]));
        let m = ragan_ls_multi(&[(&a.0, &a.1), (&b.0, &b.1)]).unwrap();
        assert_eq!((m.d_loss.item(), m.g_loss.item()), (2.0, 10.0));
    }

    #[test]
    fn loss_weight_validation() {
        assert!(LossWeights::default().problems().is_empty());
        let bad = LossWeights { w_pixel: -1.0, w_perceptual: f64::NAN, w_adversarial: 0.0 };
        assert_eq!(bad.problems().len(), 2);
    }

    #[test]
    fn missing_vgg_weights_is_a_dependency_error() {
        let src = PerceptualSource::Vgg19 { weights: "/nonexistent/vgg.safetensors".into() };
        let err = PerceptualExtractor::<f32>::from_source(&src).err().unwrap();
        assert!(matches!(err, crate::Error::Dependency(_)));
        assert!(err.to_string().contains("fixed_random"));
    }

    #[test]
    fn vgg_weights_load_from_safetensors() {
        let ex = PerceptualExtractor::<f32>::from_source(&PerceptualSource::FixedRandom { seed: 2, width_divisor: 1 }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vgg.safetensors");
        let store: &ParamStore<f32> = ex.store();
        let bufs: Vec<(String, Vec<usize>, Vec<u8>)> = store
            .iter()
            .map(|(_, e)| (e.name.clone(), e.value.shape().to_vec(), e.value.data().iter().flat_map(|v| v.to_le_bytes()).collect()))
            .collect();
        let views: Vec<_> = bufs
            .iter()
            .map(|(n, s, b)| (n.as_str(), safetensors::tensor::TensorView::new(safetensors::Dtype::F32, s.clone(), b).unwrap()))
            .collect();
        std::fs::write(&path, safetensors::serialize(views, &None).unwrap()).unwrap();
        let loaded = PerceptualExtractor::<f32>::from_source(&PerceptualSource::Vgg19 { weights: path }).unwrap();
        let x = Tensor::constant(Array::from_fn(vec![1, 3, 16, 16], |i| (i % 7) as f32 / 7.0));
        assert_eq!(loaded.features(&x).value(), ex.features(&x).value());
        assert!(loaded.descriptor().starts_with("pretrained"));
    }
}
