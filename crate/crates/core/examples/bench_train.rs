//! Quick throughput probe for the full-size model (not part of the test
//! suite): one epoch of policy-1 training on the synthetic dataset.

use focusclf_core::data::{augment_policy1, original_patches, CaseLibrary};
use focusclf_core::model::{train_fold, ModelConfig};
use focusclf_core::rng::Pcg32;
use focusclf_core::synth;

fn main() {
    let ds = synth::generate(&synth::SynthConfig {
        lesions: 320,
        seed: 7,
        ..Default::default()
    });
    let lib = CaseLibrary::from_raw(ds.volumes, &ds.records).unwrap();
    let channels: Vec<String> = synth::MODALITIES.iter().map(|s| s.to_string()).collect();
    let (train_recs, val_recs): (Vec<_>, Vec<_>) = ds
        .records
        .iter()
        .cloned()
        .enumerate()
        .partition(|(i, _)| i % 10 != 0);
    let train_recs: Vec<_> = train_recs.into_iter().map(|(_, r)| r).collect();
    let val_recs: Vec<_> = val_recs.into_iter().map(|(_, r)| r).collect();

    let t0 = std::time::Instant::now();
    let train = augment_policy1(&lib, &train_recs, 32, &channels).unwrap();
    let val = original_patches(&lib, &val_recs, 32, &channels).unwrap();
    eprintln!(
        "extraction: {:.2}s ({} train patches, {} val)",
        t0.elapsed().as_secs_f64(),
        train.len(),
        val.len()
    );

    let config = ModelConfig {
        epochs: 6,
        seed: 7,
        ..Default::default()
    };
    let t1 = std::time::Instant::now();
    let ckpt = train_fold(&train, &val, &config, &Pcg32::new(7)).unwrap();
    eprintln!("6 epochs full-size: {:.2}s", t1.elapsed().as_secs_f64());
    for e in &ckpt.log.entries {
        eprintln!(
            "epoch {}: loss {:.4}, acc {:.3}, gmean {:.3}, auc {:.3}",
            e.epoch, e.train_loss, e.val_accuracy, e.val_g_mean, e.val_auc
        );
    }
}
