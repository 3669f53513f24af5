use proptest::prelude::*;

use svit::eval::{aggregate_views, localize_pnr, ViewScores};
use svit::haog::{giou, iou, parse_haog_record, serialize_haog_record, validate_haog, BoundingBox, Haog, SLOTS};
use svit::synth::{gen_scene, sample_frames, GenConfig};

fn unit_box() -> impl Strategy<Value = BoundingBox> {
    (0.0..0.95f64, 0.0..0.95f64, 0.01..1.0f64, 0.01..1.0f64).prop_map(|(x, y, w, h)| {
        BoundingBox::new(x, y, (x + w * (1.0 - x)).max(x + 1e-3), (y + h * (1.0 - y)).max(y + 1e-3))
    })
}

/// Boxes on a 1/64 grid, printed exactly at six decimals.
fn grid_haog() -> impl Strategy<Value = Haog> {
    let slot = (0u8..2, 0u32..60, 0u32..60, 1u32..5, 1u32..5);
    (proptest::array::uniform4(slot), proptest::array::uniform2(0u8..2)).prop_map(|(slots, contact)| {
        let mut h = Haog::empty();
        for (j, (e, x, y, w, hh)) in slots.into_iter().enumerate() {
            if e == 1 {
                let q = |v: u32| f64::from(v) / 64.0;
                h.exists[j] = 1;
                h.boxes[j] = Some(BoundingBox::new(q(x), q(y), q(x + w), q(y + hh)));
            }
        }
        for (k, c) in contact.into_iter().enumerate() {
            h.contact[k] = c & h.exists[k] & h.exists[k + 2];
        }
        h
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn giou_is_symmetric(a in unit_box(), b in unit_box()) {
        prop_assert!((giou(&a, &b) - giou(&b, &a)).abs() < 1e-12);
    }

    #[test]
    fn giou_lies_in_range_and_below_iou(a in unit_box(), b in unit_box()) {
        let g = giou(&a, &b);
        prop_assert!(g > -1.0 && g <= 1.0);
        prop_assert!(g <= iou(&a, &b) + 1e-15);
        prop_assert!((giou(&a, &a) - 1.0).abs() < 1e-12);
        if a != b {
            prop_assert!(g < 1.0);
        }
    }

    #[test]
    fn giou_equals_iou_for_nested_boxes(a in unit_box(), f in 0.1..1.0f64) {
        let inner = BoundingBox::new(a.x1, a.y1, a.x1 + (a.x2 - a.x1) * f, a.y1 + (a.y2 - a.y1) * f);
        prop_assert!((giou(&a, &inner) - iou(&a, &inner)).abs() < 1e-12);
    }

    #[test]
    fn annotation_round_trip(h in grid_haog(), name in "[a-z]{1,8}\\.svt") {
        prop_assert!(validate_haog(&h).is_ok());
        let line = serialize_haog_record(&name, &h).unwrap();
        let (back_name, back) = parse_haog_record(&line).unwrap();
        prop_assert_eq!(back_name, name);
        prop_assert_eq!(back, h);
    }

    #[test]
    fn sampled_frames_are_sorted_and_bounded(first in 0usize..200, span in 0usize..200, t in 2usize..40) {
        let last = first + span;
        let s = sample_frames(first, last, t).unwrap();
        prop_assert_eq!(s.len(), t);
        prop_assert_eq!(s[0], first);
        prop_assert_eq!(s[t - 1], last);
        prop_assert!(s.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn localization_ignores_monotone_maps_and_shifts(
        scores in proptest::collection::vec(-5.0..5.0f64, 1..32),
        shift in -3.0..3.0f64,
    ) {
        let at = localize_pnr(&scores).unwrap();
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let squashed: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-s).exp())).collect();
        prop_assert_eq!(localize_pnr(&shifted).unwrap(), at);
        prop_assert_eq!(localize_pnr(&squashed).unwrap(), at);
        prop_assert!(scores.iter().all(|&s| s <= scores[at]));
    }

    #[test]
    fn aggregation_takes_the_global_peak(views in proptest::collection::vec(
        proptest::collection::vec(0.0..1.0f64, 4), 1..5)
    ) {
        let built: Vec<ViewScores> = views
            .iter()
            .enumerate()
            .map(|(v, s)| ViewScores {
                raw_indices: (0..4).map(|k| 10 * k + v).collect(),
                scores: s.clone(),
                osc_probability: 0.5,
            })
            .collect();
        let (raw, osc) = aggregate_views(&built).unwrap();
        let peak = views.iter().flatten().cloned().fold(f64::MIN, f64::max);
        let (v, k) = (raw % 10, raw / 10);
        prop_assert_eq!(views[v][k], peak);
        prop_assert!((osc - 0.5).abs() < 1e-15);
    }
}

#[test]
fn giou_hand_cases() {
    let b = |c: [f64; 4]| BoundingBox::from_array(c);
    assert_eq!(giou(&b([0.0, 0.0, 0.5, 0.5]), &b([0.0, 0.0, 0.5, 0.5])), 1.0);
    assert!((giou(&b([0.0, 0.0, 0.5, 0.5]), &b([0.5, 0.5, 1.0, 1.0])) + 0.5).abs() < 1e-12);
    assert!((giou(&b([0.0, 0.0, 1.0, 1.0]), &b([0.0, 0.0, 0.5, 0.5])) - 0.25).abs() < 1e-12);
}

#[test]
fn generated_graphs_are_valid() {
    let cfg = GenConfig::default();
    for seed in 0..200 {
        let s = gen_scene(&cfg, seed);
        assert!(validate_haog(&s.haog).is_ok(), "seed {seed}");
        assert_eq!(s.haog.boxes.iter().filter(|b| b.is_some()).count(), s.haog.exists.iter().map(|&e| e as usize).sum::<usize>());
        assert!(s.haog.exists.len() == SLOTS);
    }
}

#[test]
fn sampling_examples() {
    assert_eq!(sample_frames(0, 15, 16).unwrap(), (0..16).collect::<Vec<_>>());
    assert_eq!(sample_frames(5, 5, 4).unwrap(), vec![5; 4]);
    assert!(sample_frames(6, 5, 4).is_err());
}
