use peftopt::pareto::{dominates, hypervolume, hypervolume_improvement, nadir, non_dominated_indices, ObjectiveVector};
use proptest::prelude::*;
use rand::Rng;

fn ov(score: f64, cost: f64) -> ObjectiveVector {
    ObjectiveVector::new(score, cost)
}

/// Pairwise check, keeping the first of exact duplicates.
fn brute_front(points: &[ObjectiveVector]) -> Vec<usize> {
    let mut keep: Vec<usize> = (0..points.len())
        .filter(|&i| {
            !points
                .iter()
                .enumerate()
                .any(|(j, q)| dominates(q, &points[i]) || (j < i && q == &points[i]))
        })
        .collect();
    keep.sort_by(|&a, &b| points[a].cost.total_cmp(&points[b].cost));
    keep
}

/// Midpoint rule over a `cells x cells` grid on the reference box.
fn grid_hypervolume(points: &[ObjectiveVector], reference: &ObjectiveVector, cells: usize) -> f64 {
    let top = points.iter().map(|p| p.score).fold(reference.score, f64::max);
    let ds = (top - reference.score) / cells as f64;
    let low = points.iter().map(|p| p.cost).fold(reference.cost, f64::min);
    let dc = (reference.cost - low) / cells as f64;
    let mut covered = 0usize;
    for i in 0..cells {
        let s = reference.score + (i as f64 + 0.5) * ds;
        // cell centres in a column are covered from the cheapest qualifying cost up
        let cheapest = points
            .iter()
            .filter(|p| p.score >= s)
            .map(|p| p.cost)
            .fold(f64::INFINITY, f64::min);
        if cheapest.is_finite() {
            let first = ((cheapest - low) / dc - 0.5).ceil().max(0.0) as usize;
            covered += cells.saturating_sub(first);
        }
    }
    covered as f64 * ds * dc
}

fn random_points(rng: &mut impl Rng, n: usize, coarse: bool) -> Vec<ObjectiveVector> {
    (0..n)
        .map(|_| {
            if coarse {
                ov(rng.random_range(0..6) as f64 / 5.0, rng.random_range(0..6) as f64 / 5.0)
            } else {
                ov(rng.random::<f64>(), rng.random::<f64>())
            }
        })
        .collect()
}

#[test]
fn front_matches_pairwise_oracle() {
    let mut rng = peftopt::rng::seeded(8);
    for set in 0..1000 {
        let n = rng.random_range(0..=50);
        let pts = random_points(&mut rng, n, set % 2 == 0);
        assert_eq!(non_dominated_indices(&pts), brute_front(&pts), "set {set}");
    }
}

#[test]
fn hypervolume_matches_grid_integration() {
    let r = ov(0.0, 1.0);
    let two = [ov(0.9, 0.5), ov(0.8, 0.2)];
    let grid = grid_hypervolume(&two, &r, 20_000);
    assert!((grid - 0.69).abs() / 0.69 < 1e-3);
    assert!((hypervolume(&two, &r) - 0.69).abs() < 1e-12);

    let mut rng = peftopt::rng::seeded(9);
    for _ in 0..50 {
        let n = rng.random_range(1..=50);
        let pts = random_points(&mut rng, n, false);
        let exact = hypervolume(&pts, &r);
        let approx = grid_hypervolume(&pts, &r, 20_000);
        assert!((exact - approx).abs() <= 1e-3 * exact, "{exact} vs {approx}");
    }
}

proptest! {
    #[test]
    fn dominance_is_a_strict_partial_order(a in (0.0..1.0f64, 0.0..1.0f64), b in (0.0..1.0f64, 0.0..1.0f64), c in (0.0..1.0f64, 0.0..1.0f64)) {
        let (a, b, c) = (ov(a.0, a.1), ov(b.0, b.1), ov(c.0, c.1));
        prop_assert!(!dominates(&a, &a));
        prop_assert!(!(dominates(&a, &b) && dominates(&b, &a)));
        if dominates(&a, &b) && dominates(&b, &c) {
            prop_assert!(dominates(&a, &c));
        }
    }

    #[test]
    fn front_is_idempotent_and_hv_monotone(raw in proptest::collection::vec((0.0..1.0f64, 0.0..1.0f64), 1..40), extra in (0.0..1.0f64, 0.0..1.0f64)) {
        let pts: Vec<ObjectiveVector> = raw.iter().map(|&(s, c)| ov(s, c)).collect();
        let front: Vec<ObjectiveVector> = non_dominated_indices(&pts).into_iter().map(|i| pts[i]).collect();
        let again: Vec<ObjectiveVector> = non_dominated_indices(&front).into_iter().map(|i| front[i]).collect();
        prop_assert_eq!(&front, &again);
        let r = ov(0.0, 1.0);
        prop_assert_eq!(hypervolume(&pts, &r), hypervolume(&front, &r));
        let p = ov(extra.0, extra.1);
        let mut more = pts.clone();
        more.push(p);
        let gain = hypervolume(&more, &r) - hypervolume(&pts, &r);
        prop_assert!(gain >= -1e-12);
        prop_assert!((hypervolume_improvement(&front, &p, &r) - gain).abs() < 1e-12);
    }

    #[test]
    fn nadir_bounds_every_point(raw in proptest::collection::vec((0.0..1.0f64, 0.0..1.0f64), 1..40)) {
        let pts: Vec<ObjectiveVector> = raw.iter().map(|&(s, c)| ov(s, c)).collect();
        let n = nadir(&pts).unwrap();
        prop_assert!(pts.iter().all(|p| p.score >= n.score && p.cost <= n.cost));
        // an interior point can only move the nadir outward
        let mid = ov((n.score + pts[0].score) / 2.0, (n.cost + pts[0].cost) / 2.0);
        let mut more = pts.clone();
        more.push(mid);
        let m = nadir(&more).unwrap();
        prop_assert!(m.score <= n.score && m.cost >= n.cost);
    }
}
