use proptest::prelude::*;
use srdet::dedup::{iou, iou_exact, merge, rational, MergePolicy};
use srdet::detector::{Detection, DetectionSet};

fn boxed() -> impl Strategy<Value = Detection> {
    (
        0.0..100.0f64,
        0.0..100.0f64,
        0.0..40.0f64,
        0.0..40.0f64,
        1u32..=3,
        0.0..=1.0f64,
    )
        .prop_map(|(a, b, w, h, c, s)| Detection::new(a, b, a + w, b + h, c, s).unwrap())
}

fn set(max: usize) -> impl Strategy<Value = DetectionSet> {
    proptest::collection::vec(boxed(), 0..max).prop_map(|v| DetectionSet::new("f", v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn iou_symmetric_bounded_and_self_one(x in boxed(), y in boxed()) {
        let v = iou(&x, &y);
        prop_assert_eq!(v, iou(&y, &x));
        prop_assert!((0.0..=1.0).contains(&v));
        if x.area() > 0.0 {
            prop_assert_eq!(iou(&x, &x), 1.0);
        }
        prop_assert_eq!(iou_exact(&x, &y), iou_exact(&y, &x));
        prop_assert!((v - srdet::dedup::rational_to_f64(&iou_exact(&x, &y))).abs() <= 1e-12);
    }

    #[test]
    fn merge_guarantees(base in set(12), w1 in set(10), w2 in set(10), theta in 0.05..0.9f64, aware in any::<bool>()) {
        let policy = MergePolicy { theta, class_aware: aware };
        let merged = merge(&base, &[w1.clone(), w2.clone()], &policy);
        let items = &merged.items;
        // No two survivors are duplicates.
        for i in 0..items.len() {
            for j in i + 1..items.len() {
                prop_assert!(!policy.matches(&items[i], &items[j]));
            }
        }
        // Every base detection survives or is represented.
        for b in &base.items {
            prop_assert!(items.iter().any(|m| m == b || policy.matches(m, b)));
        }
        // Sorted by score; order of windows irrelevant.
        prop_assert!(items.windows(2).all(|p| p[0].score >= p[1].score));
        prop_assert_eq!(&merged, &merge(&base, &[w2, w1], &policy));
        // Survivors come from the pool.
        prop_assert!(items.len() <= base.len() + 20);
    }

    #[test]
    fn count_never_drops_for_duplicate_free_base(base in set(12), w in set(12)) {
        let policy = MergePolicy::default();
        // Make the base duplicate-free first, as a real detector's NMS would.
        let base = merge(&base, &[], &policy);
        let merged = merge(&base, &[w], &policy);
        prop_assert!(merged.len() >= base.len());
    }
}

#[test]
fn exact_one_seventh() {
    let x = Detection::new(0.0, 0.0, 2.0, 2.0, 3, 0.5).unwrap();
    let y = Detection::new(1.0, 1.0, 3.0, 3.0, 3, 0.5).unwrap();
    assert_eq!(iou_exact(&x, &y), rational(1, 7));
}

#[test]
fn ten_thousand_seeded_boxes() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let mut r = || {
        let (a, b) = (rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
        let (w, h) = (rng.random_range(0.001..30.0), rng.random_range(0.001..30.0));
        Detection::new(a, b, a + w, b + h, 3, 0.5).unwrap()
    };
    for _ in 0..10_000 {
        let (x, y) = (r(), r());
        assert_eq!(iou(&x, &y), iou(&y, &x));
        assert_eq!(iou_exact(&x, &y), iou_exact(&y, &x));
        assert_eq!(iou(&x, &x), 1.0);
        assert_eq!(iou_exact(&x, &x), rational(1, 1));
    }
}
