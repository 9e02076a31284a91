use std::fs;

use segloss::synthdata::io::{load, save, FEATURES_FILE, LABELS_FILE, META_FILE};
use segloss::synthdata::{generate, ShapeFamily, SynthTaskConfig};
use segloss::Error;

fn small(shape_family: ShapeFamily, classes: usize) -> SynthTaskConfig {
    SynthTaskConfig {
        image_size: 16,
        num_classes: classes,
        num_images: 10,
        shape_family,
        seed: 5,
        ..SynthTaskConfig::default()
    }
}

#[test]
fn save_load_round_trip_is_bit_exact() {
    for (family, classes) in [
        (ShapeFamily::Vessels, 2),
        (ShapeFamily::Blobs, 3),
        (ShapeFamily::Mixed, 4),
    ] {
        let ds = generate(&small(family, classes)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save(&ds, dir.path()).unwrap();
        let back = load(dir.path()).unwrap();
        assert_eq!(back, ds);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.features), bits(&ds.features));
    }
}

#[test]
fn saving_twice_gives_identical_bytes() {
    let ds = generate(&small(ShapeFamily::Vessels, 2)).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    save(&ds, a.path()).unwrap();
    save(&ds, b.path()).unwrap();
    for name in [META_FILE, FEATURES_FILE, LABELS_FILE] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap()
        );
    }
}

#[test]
fn feature_file_layout() {
    let ds = generate(&small(ShapeFamily::Blobs, 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save(&ds, dir.path()).unwrap();
    let bytes = fs::read(dir.path().join(FEATURES_FILE)).unwrap();
    assert_eq!(&bytes[..4], b"SSEG");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 4);
    let dims: Vec<u64> = (0..4)
        .map(|k| u64::from_le_bytes(bytes[12 + 8 * k..20 + 8 * k].try_into().unwrap()))
        .collect();
    assert_eq!(dims, vec![10, 16, 16, 5]);
    assert_eq!(bytes.len(), 44 + 10 * 16 * 16 * 5 * 8);
    let first = f64::from_le_bytes(bytes[44..52].try_into().unwrap());
    assert_eq!(first.to_bits(), ds.features[0].to_bits());
}

#[test]
fn corrupt_files_are_format_errors() {
    let ds = generate(&small(ShapeFamily::Vessels, 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save(&ds, dir.path()).unwrap();
    let path = dir.path().join(LABELS_FILE);
    let original = fs::read(&path).unwrap();

    let mut bad_magic = original.clone();
    bad_magic[0] = b'X';
    fs::write(&path, &bad_magic).unwrap();
    assert!(matches!(load(dir.path()), Err(Error::Format { .. })));

    fs::write(&path, &original[..original.len() - 4]).unwrap();
    assert!(matches!(load(dir.path()), Err(Error::Format { .. })));

    let mut negative = original.clone();
    let at = original.len() - 4;
    negative[at..].copy_from_slice(&(-1i32).to_le_bytes());
    fs::write(&path, &negative).unwrap();
    assert!(matches!(load(dir.path()), Err(Error::Format { .. })));
}

#[test]
fn missing_directory_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        load(&dir.path().join("absent")),
        Err(Error::Io { .. })
    ));
}
