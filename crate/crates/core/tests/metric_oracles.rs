//! Metrics checked against brute-force definitions.

use fsps_core::data::{Fixation, ScanpathInstance, FREE_VIEWING};
use fsps_core::metrics::{
    alignment_score, ci95_half_width, evaluate_resamplings, mm_alignment, multimatch, quantize, saccades, scanmatch, sed, shape_cost, GridSpec,
    MetricConfig, Saccade,
};
use proptest::prelude::*;

fn instance(points: &[(f64, f64, u32)]) -> ScanpathInstance {
    ScanpathInstance {
        scene_id: "scene000".into(),
        subject_id: "s0".into(),
        task: FREE_VIEWING.into(),
        fixations: points.iter().map(|&(x, y, d)| Fixation::new(x, y, d)).collect(),
    }
}

fn points(max: usize) -> impl Strategy<Value = Vec<(f64, f64, u32)>> {
    prop::collection::vec((0.0..=1.0f64, 0.0..=1.0f64, 50u32..1500), 1..=max)
}

/// Best score over every alignment, by exhaustive recursion.
fn brute_alignment(a: &[usize], b: &[usize], grid: &GridSpec, gap: f64) -> f64 {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len() as f64 * gap,
        (_, None) => a.len() as f64 * gap,
        (Some((&p, ra)), Some((&q, rb))) => {
            let sub = grid.diagonal() - grid.cell_distance(p, q) + brute_alignment(ra, rb, grid, gap);
            let skip_a = gap + brute_alignment(ra, b, grid, gap);
            let skip_b = gap + brute_alignment(a, rb, grid, gap);
            sub.max(skip_a).max(skip_b)
        }
    }
}

fn naive_levenshtein(a: &[usize], b: &[usize]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((p, ra)), Some((q, rb))) => {
            let sub = naive_levenshtein(ra, rb) + usize::from(p != q);
            sub.min(naive_levenshtein(ra, b) + 1).min(naive_levenshtein(a, rb) + 1)
        }
    }
}

/// Cheapest monotone pairing from (i, j) to the last saccades.
fn brute_mm(a: &[Saccade], b: &[Saccade], i: usize, j: usize) -> f64 {
    let here = shape_cost(&a[i], &b[j]);
    if i + 1 == a.len() && j + 1 == b.len() {
        return here;
    }
    let mut best = f64::INFINITY;
    if i + 1 < a.len() && j + 1 < b.len() {
        best = best.min(brute_mm(a, b, i + 1, j + 1));
    }
    if i + 1 < a.len() {
        best = best.min(brute_mm(a, b, i + 1, j));
    }
    if j + 1 < b.len() {
        best = best.min(brute_mm(a, b, i, j + 1));
    }
    here + best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn scanmatch_alignment_is_optimal(a in points(5), b in points(5), gap in -2.0..0.0f64) {
        let grid = GridSpec::new(6, 4).unwrap();
        let (qa, qb) = (quantize(&instance(&a).fixations, &grid), quantize(&instance(&b).fixations, &grid));
        let fast = alignment_score(&qa, &qb, &grid, gap);
        let slow = brute_alignment(&qa, &qb, &grid, gap);
        prop_assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
    }

    #[test]
    fn sed_matches_naive_recursion(a in points(6), b in points(6)) {
        let grid = GridSpec::default();
        let (ia, ib) = (instance(&a), instance(&b));
        let expected = naive_levenshtein(&quantize(&ia.fixations, &grid), &quantize(&ib.fixations, &grid));
        prop_assert_eq!(sed(&ia, &ib, &grid).unwrap(), expected);
    }

    #[test]
    fn mm_alignment_is_cheapest_monotone_pairing(a in points(6), b in points(6)) {
        prop_assume!(a.len() >= 2 && b.len() >= 2);
        let (sa, sb) = (saccades(&instance(&a).fixations), saccades(&instance(&b).fixations));
        let (cost, path) = mm_alignment(&sa, &sb);
        prop_assert!((cost - brute_mm(&sa, &sb, 0, 0)).abs() < 1e-9);
        let along: f64 = path.iter().map(|&(i, j)| shape_cost(&sa[i], &sb[j])).sum();
        prop_assert!((along - cost).abs() < 1e-9);
        prop_assert_eq!(path.first(), Some(&(0, 0)));
        prop_assert_eq!(path.last(), Some(&(sa.len() - 1, sb.len() - 1)));
        for w in path.windows(2) {
            let (di, dj) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            prop_assert!(matches!((di, dj), (1, 1) | (1, 0) | (0, 1)));
        }
    }

    #[test]
    fn metrics_are_symmetric(a in points(7), b in points(7)) {
        let grid = GridSpec::default();
        let (ia, ib) = (instance(&a), instance(&b));
        let (ab, ba) = (scanmatch(&ia, &ib, &grid, -1.0).unwrap(), scanmatch(&ib, &ia, &grid, -1.0).unwrap());
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert_eq!(sed(&ia, &ib, &grid).unwrap(), sed(&ib, &ia, &grid).unwrap());
        if a.len() >= 2 && b.len() >= 2 {
            let (x, y) = (multimatch(&ia, &ib).unwrap(), multimatch(&ib, &ia).unwrap());
            prop_assert!((x.mean - y.mean).abs() < 1e-9, "{} vs {}", x.mean, y.mean);
        }
    }

    #[test]
    fn sed_obeys_triangle_inequality(a in points(6), b in points(6), c in points(6)) {
        let grid = GridSpec::default();
        let (ia, ib, ic) = (instance(&a), instance(&b), instance(&c));
        prop_assert!(sed(&ia, &ic, &grid).unwrap() <= sed(&ia, &ib, &grid).unwrap() + sed(&ib, &ic, &grid).unwrap());
    }

    #[test]
    fn self_similarity_is_perfect(a in points(8)) {
        let grid = GridSpec::default();
        let ia = instance(&a);
        prop_assert_eq!(scanmatch(&ia, &ia, &grid, -1.0).unwrap(), 1.0);
        prop_assert_eq!(sed(&ia, &ia, &grid).unwrap(), 0);
        if a.len() >= 2 {
            prop_assert!((multimatch(&ia, &ia).unwrap().mean - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn confidence_interval_uses_student_t() {
    let values = [0.61, 0.64, 0.59, 0.66, 0.62, 0.60, 0.65, 0.63, 0.58, 0.67];
    let mean = values.iter().sum::<f64>() / 10.0;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 9.0).sqrt();
    let expected = 2.262_157_162_8 * sd / 10f64.sqrt();
    assert!((ci95_half_width(&values).unwrap() - expected).abs() < 1e-9);
    let three = [1.0, 2.0, 4.0];
    let sd3 = (((1.0f64 - 7.0 / 3.0).powi(2) + (2.0f64 - 7.0 / 3.0).powi(2) + (4.0f64 - 7.0 / 3.0).powi(2)) / 2.0).sqrt();
    assert!((ci95_half_width(&three).unwrap() - 4.302_652_729_7 * sd3 / 3f64.sqrt()).abs() < 1e-8);
    assert!(ci95_half_width(&[1.0]).is_none());
}

#[test]
fn resampling_interval_is_over_run_means() {
    let gt = instance(&[(0.1, 0.1, 200), (0.5, 0.5, 300), (0.9, 0.2, 250)]);
    let runs: Vec<Vec<(ScanpathInstance, ScanpathInstance)>> = [0.0, 0.2, 0.4, 0.6]
        .iter()
        .map(|&shift| {
            let pred = instance(&[(0.1 + shift, 0.1, 200), (0.5, 0.5 + shift / 2.0, 300), (0.9 - shift, 0.2, 250)]);
            vec![(pred, gt.clone())]
        })
        .collect();
    let report = evaluate_resamplings(&runs, &MetricConfig::default()).unwrap();
    let sms: Vec<f64> = report.runs.iter().map(|r| r.sm).collect();
    let ci = report.ci95.unwrap();
    assert_eq!(ci.runs, 4);
    assert!((ci.sm - ci95_half_width(&sms).unwrap()).abs() < 1e-12);
    assert!((report.aggregate.sm - sms.iter().sum::<f64>() / 4.0).abs() < 1e-12);
}
