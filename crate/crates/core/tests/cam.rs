//! Class-activation-map head behavior and map algebra.

use focusclf_core::cam::{
    build_cam_head, compute_cam, finetune_cam, head_metrics, load_cam_head, save_cam_head,
    CamTrainConfig,
};
use focusclf_core::data::{augment_policy1, original_patches, CaseLibrary};
use focusclf_core::model::{train_fold, Checkpoint, ModelConfig};
use focusclf_core::rng::Pcg32;
use focusclf_core::synth;

fn trained_checkpoint() -> (Checkpoint, CaseLibrary, Vec<focusclf_core::data::LesionRecord>) {
    let ds = synth::generate(&synth::SynthConfig {
        lesions: 64,
        seed: 91,
        ..Default::default()
    });
    let lib = CaseLibrary::from_raw(ds.volumes, &ds.records).unwrap();
    let config = ModelConfig {
        input_size: 32,
        channels: synth::MODALITIES.iter().map(|s| s.to_string()).collect(),
        conv_widths: [8, 8, 12, 12],
        fc_widths: [24, 12],
        epochs: 8,
        batch_size: 16,
        seed: 91,
        ..Default::default()
    };
    let channels = config.channels.clone();
    let (train_recs, val_recs): (Vec<_>, Vec<_>) = ds
        .records
        .iter()
        .cloned()
        .enumerate()
        .partition(|(i, _)| i % 4 != 0);
    let train_recs: Vec<_> = train_recs.into_iter().map(|(_, r)| r).collect();
    let val_recs: Vec<_> = val_recs.into_iter().map(|(_, r)| r).collect();
    let train = augment_policy1(&lib, &train_recs, 32, &channels).unwrap();
    let val = original_patches(&lib, &val_recs, 32, &channels).unwrap();
    let ckpt = train_fold(&train, &val, &config, &Pcg32::new(91)).unwrap();
    (ckpt, lib, ds.records)
}

#[test]
fn cam_head_pooling_and_finetune() {
    let (ckpt, lib, records) = trained_checkpoint();
    let channels: Vec<String> = synth::MODALITIES.iter().map(|s| s.to_string()).collect();
    let patches = original_patches(&lib, &records, 32, &channels).unwrap();

    let mut head = build_cam_head(&ckpt).unwrap();
    // Pooled vector length equals the last conv width.
    let pooled = head.pooled_features(&patches[0].data).unwrap();
    assert_eq!(pooled.len(), ckpt.network.config.conv_widths[3]);

    // Global max pool of a constant map is that constant (checked through
    // the op directly on a constant tensor).
    let constant = focusclf_core::tensor::Tensor::filled(&[5, 5, 3], 1.25f32);
    let (gmp, _) = focusclf_core::ops::global_max_pool(&constant);
    assert_eq!(gmp, vec![1.25, 1.25, 1.25]);

    // Conv stack outputs are bit-identical before and after head
    // fine-tuning (frozen contract).
    let before = head.network.conv_stack_infer(&patches[0].data).unwrap();
    let log = finetune_cam(&mut head, &patches, &CamTrainConfig::default()).unwrap();
    let after = head.network.conv_stack_infer(&patches[0].data).unwrap();
    for (a, b) in before.conv_maps.iter().zip(&after.conv_maps) {
        let ba: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
        let bb: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(ba, bb);
    }

    // Separable pooled features: the linear probe reaches high accuracy.
    assert!(
        log.train_accuracy >= 0.95,
        "head accuracy {}",
        log.train_accuracy
    );
    let metrics = head_metrics(&head, &patches).unwrap();
    assert!(metrics.accuracy >= 0.95);
}

#[test]
fn zero_epoch_finetune_leaves_head_unchanged() {
    let (ckpt, lib, records) = trained_checkpoint();
    let channels: Vec<String> = synth::MODALITIES.iter().map(|s| s.to_string()).collect();
    let patches = original_patches(&lib, &records[..4], 32, &channels).unwrap();
    let mut head = build_cam_head(&ckpt).unwrap();
    let v_before = head.v.clone();
    let cfg = CamTrainConfig {
        max_epochs: 0,
        ..Default::default()
    };
    finetune_cam(&mut head, &patches, &cfg).unwrap();
    assert_eq!(head.v, v_before);
}

#[test]
fn finetune_is_deterministic_under_a_fixed_seed() {
    let (ckpt, lib, records) = trained_checkpoint();
    let channels: Vec<String> = synth::MODALITIES.iter().map(|s| s.to_string()).collect();
    let patches = original_patches(&lib, &records, 32, &channels).unwrap();
    let run = || {
        let mut head = build_cam_head(&ckpt).unwrap();
        finetune_cam(&mut head, &patches, &CamTrainConfig::default()).unwrap();
        head.v
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<u32>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn raw_map_is_the_weighted_sum_of_c4_maps() {
    let (ckpt, lib, records) = trained_checkpoint();
    let channels: Vec<String> = synth::MODALITIES.iter().map(|s| s.to_string()).collect();
    let patches = original_patches(&lib, &records[..3], 32, &channels).unwrap();
    let mut head = build_cam_head(&ckpt).unwrap();
    finetune_cam(&mut head, &patches, &CamTrainConfig::default()).unwrap();

    for patch in &patches {
        let cam = compute_cam(&head, patch, 1).unwrap();
        // Explicit oracle: sum_k V[k, class] * F_k, elementwise.
        let features = head.network.conv_stack_infer(&patch.data).unwrap();
        let c4 = &features.conv_maps[3];
        let (h, w, c) = c4.dims3();
        assert_eq!(cam.raw.shape(), &[h, w]);
        for y in 0..h {
            for x in 0..w {
                let mut want = 0.0f32;
                for k in 0..c {
                    want += head.v.data()[k * 2 + 1] * c4.get3(y, x, k);
                }
                let got = cam.raw.data()[y * w + x];
                assert!((got - want).abs() <= 1e-6, "{} vs {}", got, want);
            }
        }
        // Upsampled map is normalized to [0,1].
        assert!(cam
            .upsampled
            .data()
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(cam.upsampled.shape(), &[32, 32]);
    }
}

#[test]
fn cam_is_linear_in_the_head_weights() {
    let (ckpt, lib, records) = trained_checkpoint();
    let channels: Vec<String> = synth::MODALITIES.iter().map(|s| s.to_string()).collect();
    let patches = original_patches(&lib, &records[..1], 32, &channels).unwrap();
    let mut head = build_cam_head(&ckpt).unwrap();

    // All-zero weights give an identically zero raw map.
    for v in head.v.data_mut() {
        *v = 0.0;
    }
    let cam = compute_cam(&head, &patches[0], 0).unwrap();
    assert!(cam.raw.data().iter().all(|&v| v == 0.0));

    // A single unit weight reproduces that feature map exactly.
    head.v.data_mut()[3 * 2] = 1.0; // V[3, class 0]
    let cam = compute_cam(&head, &patches[0], 0).unwrap();
    let features = head.network.conv_stack_infer(&patches[0].data).unwrap();
    let c4 = &features.conv_maps[3];
    let (h, w, _) = c4.dims3();
    for y in 0..h {
        for x in 0..w {
            assert_eq!(cam.raw.data()[y * w + x], c4.get3(y, x, 3));
        }
    }

    // Scaling V scales the raw map elementwise.
    let alpha = 2.5f32;
    let base = compute_cam(&head, &patches[0], 0).unwrap();
    for v in head.v.data_mut() {
        *v *= alpha;
    }
    let scaled = compute_cam(&head, &patches[0], 0).unwrap();
    for (s, b) in scaled.raw.data().iter().zip(base.raw.data()) {
        assert!((s - alpha * b).abs() < 1e-6);
    }
}

#[test]
fn fully_convolutional_stack_is_bitwise_consistent_and_size_flexible() {
    let (ckpt, lib, records) = trained_checkpoint();
    let channels: Vec<String> = synth::MODALITIES.iter().map(|s| s.to_string()).collect();
    let patches = original_patches(&lib, &records[..2], 32, &channels).unwrap();
    let head = build_cam_head(&ckpt).unwrap();

    // On the training size, the head's stack equals the checkpoint's stack
    // bitwise (same parameters, same code path).
    for patch in &patches {
        let a = head.network.conv_stack_infer(&patch.data).unwrap();
        let b = ckpt.network.conv_stack_infer(&patch.data).unwrap();
        for (ma, mb) in a.conv_maps.iter().zip(&b.conv_maps) {
            let ba: Vec<u32> = ma.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = mb.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ba, bb);
        }
    }

    // Head logits on pooled features equal the head-network forward logits.
    for patch in &patches {
        let pooled = head.pooled_features(&patch.data).unwrap();
        let direct = head.head_logits(&pooled);
        let forward = head.forward(&patch.data).unwrap();
        for (a, b) in direct.iter().zip(&forward) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    // A 64x64 patch flows through the same stack; C4 sits after one pool,
    // so its maps are 32x32 there.
    let big = original_patches(&lib, &records[..1], 64, &channels).unwrap();
    let cam = compute_cam(&head, &big[0], 1).unwrap();
    assert_eq!(cam.raw.shape(), &[32, 32]);
    assert_eq!(cam.upsampled.shape(), &[64, 64]);
}

#[test]
fn cam_head_round_trips_through_the_container() {
    let (ckpt, lib, records) = trained_checkpoint();
    let channels: Vec<String> = synth::MODALITIES.iter().map(|s| s.to_string()).collect();
    let patches = original_patches(&lib, &records[..8], 32, &channels).unwrap();
    let mut head = build_cam_head(&ckpt).unwrap();
    let log = finetune_cam(&mut head, &patches, &CamTrainConfig::default()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cam_head.fclf");
    save_cam_head(&head, &log, &path).unwrap();
    let (back, back_log) = load_cam_head(&path).unwrap();
    assert_eq!(back.v.data(), head.v.data());
    assert_eq!(back.bias, head.bias);
    assert_eq!(back_log.losses.len(), log.losses.len());

    let a = compute_cam(&head, &patches[0], 1).unwrap();
    let b = compute_cam(&back, &patches[0], 1).unwrap();
    assert_eq!(a.raw.data(), b.raw.data());
}

#[test]
fn full_finetune_flag_updates_the_stack() {
    let (ckpt, lib, records) = trained_checkpoint();
    let channels: Vec<String> = synth::MODALITIES.iter().map(|s| s.to_string()).collect();
    let patches = original_patches(&lib, &records[..12], 32, &channels).unwrap();
    let mut head = build_cam_head(&ckpt).unwrap();
    let before = head.network.conv[0].weights.clone();
    let cfg = CamTrainConfig {
        max_epochs: 3,
        full_finetune: true,
        ..Default::default()
    };
    let log = finetune_cam(&mut head, &patches, &cfg).unwrap();
    assert!(!head.frozen);
    assert_eq!(log.losses.len(), 3);
    assert_ne!(head.network.conv[0].weights.data(), before.data());
}

#[test]
fn benign_and_malignant_maps_are_both_exportable() {
    let (ckpt, lib, records) = trained_checkpoint();
    let channels: Vec<String> = synth::MODALITIES.iter().map(|s| s.to_string()).collect();
    let patches = original_patches(&lib, &records[..1], 32, &channels).unwrap();
    let head = build_cam_head(&ckpt).unwrap();
    for class in 0..2 {
        let cam = compute_cam(&head, &patches[0], class).unwrap();
        let base = focusclf_core::ppm::patch_base_plane(&patches[0]);
        let bytes =
            focusclf_core::ppm::render_overlay(&base, cam.upsampled.data(), 32, 0.5).unwrap();
        assert!(bytes.starts_with(b"P6\n32 32\n255\n"));
    }
    assert!(compute_cam(&head, &patches[0], 2).is_err());
}
