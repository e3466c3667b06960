use std::collections::BTreeSet;

use proptest::prelude::*;

use mgan_core::data::{split_two_fold, Dataset, PairedStudy};
use mgan_core::grid::{CtImage, ImageGrid, ImageKind, LabelMap, PetImage, DEFAULT_CT_WINDOW};
use mgan_core::imageio::{read_image, save_image};
use mgan_core::phantom::derive_label;

fn study(pid: &str, slice: u32) -> PairedStudy {
    PairedStudy::new(
        pid,
        slice,
        LabelMap::empty(8, 8).unwrap(),
        CtImage::new(ImageGrid::filled(8, 8, 0.5).unwrap(), DEFAULT_CT_WINDOW).unwrap(),
        PetImage::new(ImageGrid::filled(8, 8, 0.2).unwrap(), 1.0).unwrap(),
    )
    .unwrap()
}

fn pet(side: usize, values: Vec<f32>) -> PetImage {
    PetImage::new(ImageGrid::unit(side, side, values).unwrap(), 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_partitions_patients(slices in prop::collection::vec(1u32..4, 2..12), seed in any::<u64>()) {
        let studies: Vec<PairedStudy> = slices
            .iter()
            .enumerate()
            .flat_map(|(p, &n)| (0..n).map(move |s| study(&format!("P{p:02}"), s)))
            .collect();
        let ds = Dataset::new(studies, "mem").unwrap();
        let (a, b) = split_two_fold(&ds, seed).unwrap();
        let (ia, ib) = (a.patient_ids(), b.patient_ids());
        prop_assert!(ia.is_disjoint(&ib));
        let union: BTreeSet<String> = ia.union(&ib).cloned().collect();
        prop_assert_eq!(union, ds.patient_ids());
        prop_assert!(ia.len().abs_diff(ib.len()) <= 1);
        // every slice of a patient lands in the same group
        prop_assert_eq!(a.len() + b.len(), ds.len());
        let again = split_two_fold(&ds, seed).unwrap();
        prop_assert_eq!(again.0.patient_ids(), ia);
    }

    #[test]
    fn stored_images_round_trip_within_one_level(values in prop::collection::vec(0.0f32..=1.0, 64)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let grid = ImageGrid::unit(8, 8, values).unwrap();
        save_image(&grid, &path).unwrap();
        let back = read_image(&path, ImageKind::Pet).unwrap();
        for (a, b) in grid.values().iter().zip(back.values()) {
            prop_assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-7);
        }
    }

    #[test]
    fn raising_the_fraction_shrinks_the_label(
        values in prop::collection::vec(0.0f32..=1.0, 256),
        lo in 0.05f32..0.5,
        step in 0.0f32..0.45,
    ) {
        let p = pet(16, values.clone());
        let wide = derive_label(&p, lo, 0.2).unwrap().mask();
        let narrow = derive_label(&p, lo + step, 0.2).unwrap().mask();
        for (w, n) in wide.iter().zip(&narrow) {
            prop_assert!(!n || *w);
        }
    }

    #[test]
    fn label_pixels_reach_the_fraction_of_some_seed(values in prop::collection::vec(0.0f32..=1.0, 256)) {
        let p = pet(16, values.clone());
        let mask = derive_label(&p, 0.4, 0.3).unwrap().mask();
        let peak = values.iter().cloned().fold(0.0f32, f32::max);
        for (i, &on) in mask.iter().enumerate() {
            if on {
                // seeds exceed the floor, so no labelled pixel is below 0.4 of the floor
                prop_assert!(values[i] >= 0.4 * 0.3);
                prop_assert!(values[i] <= peak);
            }
        }
    }
}

#[test]
fn a_thousand_random_grids_round_trip() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.png");
    for _ in 0..1000 {
        let values: Vec<f32> = (0..64).map(|_| rng.gen::<f32>()).collect();
        let grid = ImageGrid::unit(8, 8, values).unwrap();
        save_image(&grid, &path).unwrap();
        let back = read_image(&path, ImageKind::Ct).unwrap();
        let worst = grid
            .values()
            .iter()
            .zip(back.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(worst <= 1.0 / 65535.0, "{worst}");
    }
}
