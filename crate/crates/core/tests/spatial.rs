//! Grid-indexed nearest neighbour against a linear scan.

use haptic_core::map::{MapEntry, SparseHapticMap};
use proptest::prelude::*;

fn entries() -> impl Strategy<Value = Vec<MapEntry>> {
    // Coarse coordinates make exact ties and shared cells common.
    let coord = prop_oneof![(-40i32..40).prop_map(|v| v as f64 * 0.125), -6.0f64..6.0];
    prop::collection::vec((coord.clone(), coord), 1..80)
        .prop_flat_map(|xy| {
            let n = xy.len();
            let ids: Vec<u64> = (0..n as u64).collect();
            (Just(xy), Just(ids).prop_shuffle())
        })
        .prop_map(|(xy, ids)| {
            xy.into_iter()
                .zip(ids)
                .map(|((x, y), id)| MapEntry {
                    xy: [x, y],
                    elevation: 0.0,
                    embedding: vec![id as f32],
                    source_step_id: id,
                })
                .collect()
        })
}

proptest! {
    #[test]
    fn index_equals_brute_force(entries in entries(), queries in prop::collection::vec(prop::array::uniform2(-12.0f64..12.0), 1..40)) {
        let map = SparseHapticMap::new(1, entries).unwrap();
        for q in queries {
            let (a, da) = map.nearest(q).unwrap();
            let (b, db) = map.nearest_brute_force(q).unwrap();
            prop_assert_eq!(da, db);
            prop_assert_eq!(a.source_step_id, b.source_step_id);
        }
    }

    #[test]
    fn bytes_round_trip(entries in entries()) {
        let map = SparseHapticMap::new(1, entries).unwrap();
        let back = SparseHapticMap::from_bytes(&map.to_bytes()).unwrap();
        prop_assert_eq!(back.entries(), map.entries());
    }
}
