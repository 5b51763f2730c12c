use sha2::{Digest, Sha256};
use soec_core::dataset::sample_campaign;
use soec_core::physics::CellParameters;
use soec_core::surrogate::*;
use soec_core::types::{InputRanges, OperatingPoint};

fn small_ensemble(seed: u64) -> SurrogateEnsemble {
    let ds = sample_campaign(120, &InputRanges::DOMAIN, 4, &CellParameters::default()).unwrap();
    let cfg = LmConfig {
        max_epochs: 25,
        restarts: 2,
        ..LmConfig::default()
    };
    train_lm(&ds, &Architecture { hidden: [4, 4, 4, 3, 3] }, &cfg, seed).unwrap()
}

#[test]
fn text_round_trip_is_exact() {
    let ens = small_ensemble(1);
    let text = ens.to_text();
    let back = SurrogateEnsemble::from_text(&text).unwrap();
    assert_eq!(back.to_text(), text);
    for op in [
        OperatingPoint::new(600.0, 40.0, 20.0, 1.0),
        OperatingPoint::new(683.3, 171.0, 97.5, 1.41),
        OperatingPoint::new(750.0, 300.0, 150.0, 1.7),
    ] {
        assert_eq!(ens.predict(&op).to_array().map(f64::to_bits), back.predict(&op).to_array().map(f64::to_bits));
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.txt");
    save_model(&ens, &path).unwrap();
    assert_eq!(load_model(&path).unwrap().to_text(), text);
}

#[test]
fn truncated_file_reports_a_byte_offset() {
    let text = small_ensemble(1).to_text();
    let cut = &text[..text.len() / 2];
    match SurrogateEnsemble::from_text(cut) {
        Err(ModelFileError::UnexpectedEnd { offset, .. }) => assert!(offset <= cut.len()),
        Err(ModelFileError::Parse { offset, .. }) => assert!(offset < cut.len()),
        other => panic!("expected a positional error, got {other:?}"),
    }
    let corrupt = text.replacen("weights_in", "weights_xx", 1);
    let e = SurrogateEnsemble::from_text(&corrupt).unwrap_err();
    assert!(e.to_string().contains("byte offset"), "{e}");
    assert!(matches!(SurrogateEnsemble::from_text("hello"), Err(ModelFileError::BadMagic)));
}

#[test]
fn same_seed_gives_the_same_file_hash() {
    let digest = |e: &SurrogateEnsemble| Sha256::digest(e.to_text().as_bytes());
    let a = digest(&small_ensemble(5));
    assert_eq!(a, digest(&small_ensemble(5)));
    assert_ne!(a, digest(&small_ensemble(6)));
}
