mod common;

use tdnn_kws::model::{from_bytes, load, save, to_bytes};
use tdnn_kws::TdnnModel;

#[test]
fn thousand_round_trips_are_bit_identical() {
    for seed in 0..1000 {
        let m = common::random_model(seed);
        let bytes = to_bytes(&m);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, m, "seed {seed}");
        assert_eq!(to_bytes(&back), bytes, "seed {seed}");
    }
}

#[test]
fn file_round_trip_of_the_default_model() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    let m = TdnnModel::build_default(10, 3).unwrap();
    save(&m, &path).unwrap();
    let back = load(&path).unwrap();
    assert_eq!(back, m);
    let bits = |m: &TdnnModel| -> Vec<u32> {
        m.layers()
            .flat_map(|l| l.weights().iter().chain(l.bias()))
            .map(|v| v.to_bits())
            .collect()
    };
    assert_eq!(bits(&back), bits(&m));
}
