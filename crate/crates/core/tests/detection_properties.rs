use proptest::prelude::*;

use mgan_core::detection::{extract_instances, match_instances, prf, OverlapDenominator};

/// Component labels by repeated min-label propagation until nothing changes.
fn propagate_components(mask: &[bool], h: usize, w: usize) -> Vec<Vec<usize>> {
    let mut label: Vec<Option<usize>> = (0..h * w).map(|i| mask[i].then_some(i)).collect();
    loop {
        let mut changed = false;
        for r in 0..h {
            for c in 0..w {
                let Some(mut best) = label[r * w + c] else { continue };
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                        if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                            continue;
                        }
                        if let Some(l) = label[rr as usize * w + cc as usize] {
                            best = best.min(l);
                        }
                    }
                }
                if Some(best) != label[r * w + c] {
                    label[r * w + c] = Some(best);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut roots: Vec<usize> = label.iter().flatten().copied().collect();
    roots.sort_unstable();
    roots.dedup();
    roots
        .into_iter()
        .map(|root| (0..h * w).filter(|&i| label[i] == Some(root)).collect())
        .collect()
}

fn mask_strategy(side: usize) -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(prop::bool::weighted(0.35), side * side)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn instances_match_brute_force_components(mask in mask_strategy(16), min_area in 1usize..4) {
        let got: Vec<Vec<usize>> = extract_instances(&mask, 16, 16, min_area).into_iter().map(|t| t.pixels).collect();
        let want: Vec<Vec<usize>> = propagate_components(&mask, 16, 16)
            .into_iter()
            .filter(|c| c.len() >= min_area)
            .collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn swapping_sides_swaps_fp_and_fn(a in mask_strategy(12), b in mask_strategy(12)) {
        let det = extract_instances(&a, 12, 12, 2);
        let tru = extract_instances(&b, 12, 12, 2);
        let fwd = match_instances(&det, &tru, OverlapDenominator::Union);
        let back = match_instances(&tru, &det, OverlapDenominator::Union);
        prop_assert_eq!(fwd.tp, back.tp);
        prop_assert_eq!(fwd.fp, back.fn_);
        prop_assert_eq!(fwd.fn_, back.fp);
    }

    #[test]
    fn counts_partition_both_sides(a in mask_strategy(12), b in mask_strategy(12), truth_denominator in any::<bool>()) {
        let denom = if truth_denominator { OverlapDenominator::Truth } else { OverlapDenominator::Union };
        let det = extract_instances(&a, 12, 12, 2);
        let tru = extract_instances(&b, 12, 12, 2);
        let m = match_instances(&det, &tru, denom);
        prop_assert!(m.tp <= det.len().min(tru.len()));
        prop_assert_eq!(m.tp + m.fp, det.len());
        prop_assert_eq!(m.tp + m.fn_, tru.len());
        prop_assert_eq!(m.matches.len(), m.tp);
        prop_assert!(m.matches.iter().all(|x| x.overlap > 0.5));
    }

    #[test]
    fn prf_stays_in_percent_range(tp in 0usize..500, fp in 0usize..500, fn_ in 0usize..500) {
        let (p, r, f) = prf(tp, fp, fn_);
        for v in [p, r, f] {
            prop_assert!((0.0..=100.0).contains(&v));
        }
        prop_assert!(f <= p.max(r) + 1e-9 && f >= p.min(r) - 1e-9 || f == 0.0);
    }
}

#[test]
fn diagonal_pixels_form_one_instance() {
    let mut mask = vec![false; 64];
    mask[0] = true;
    mask[9] = true;
    let found = extract_instances(&mask, 8, 8, 2);
    assert_eq!(found.len(), 1);
    assert_eq!(found[0].pixels, vec![0, 9]);
}
