//! Modality sweep: table structure and informative-channel dominance.

use focusclf_core::data::{AugmentPolicy, CaseLibrary};
use focusclf_core::model::ModelConfig;
use focusclf_core::rng::Pcg32;
use focusclf_core::sweep::modality_sweep;
use focusclf_core::synth;

#[test]
fn sweep_rows_mirror_the_combo_list_and_rank_the_informative_channel() {
    // Class signal only on T2W: malignant discs are dark, benign bright;
    // ADC/DWI carry identical structure for both classes.
    let cfg = synth::SynthConfig {
        lesions: 60,
        malignant_fraction: 0.4,
        seed: 301,
        malignant_contrast: [-0.40, -0.20, 0.10],
        benign_contrast: [0.40, -0.20, 0.10],
        benign_dwi_ring: false,
        ..Default::default()
    };
    let ds = synth::generate(&cfg);
    let lib = CaseLibrary::from_raw(ds.volumes, &ds.records).unwrap();

    let base = ModelConfig {
        channels: vec![],
        conv_widths: [6, 6, 8, 8],
        fc_widths: [24, 12],
        epochs: 8,
        batch_size: 16,
        seed: 301,
        ..Default::default()
    };
    let combos: Vec<Vec<String>> = vec![
        vec!["T2W".into(), "ADC".into()],
        vec!["ADC".into(), "DWI_b50".into()],
    ];
    let table = modality_sweep(
        &lib,
        &ds.records,
        &combos,
        &base,
        3,
        0,
        AugmentPolicy::Policy1,
        &Pcg32::new(301),
    )
    .unwrap();

    assert_eq!(table.rows.len(), 2);
    assert_eq!(table.rows[0].combo, combos[0]);
    assert_eq!(table.rows[1].combo, combos[1]);

    let with_t2w = table.rows[0].metrics.g_mean;
    let without = table.rows[1].metrics.g_mean;
    assert!(
        with_t2w > without,
        "combo with the informative channel scored {:.3}, without {:.3}",
        with_t2w,
        without
    );

    // Text rendering has one line per combo plus the header.
    let text = table.to_text();
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn sweep_rejects_missing_modalities() {
    let cfg = synth::SynthConfig {
        lesions: 20,
        seed: 302,
        ..Default::default()
    };
    let ds = synth::generate(&cfg);
    let lib = CaseLibrary::from_raw(ds.volumes, &ds.records).unwrap();
    let base = ModelConfig {
        conv_widths: [2, 2, 3, 3],
        fc_widths: [8, 4],
        epochs: 0,
        seed: 302,
        ..Default::default()
    };
    let combos = vec![vec!["ktrans".to_string()]];
    let err = modality_sweep(
        &lib,
        &ds.records,
        &combos,
        &base,
        2,
        0,
        AugmentPolicy::Policy1,
        &Pcg32::new(302),
    )
    .unwrap_err();
    assert!(matches!(
        err,
        focusclf_core::Error::MissingModality { .. }
    ));
}
