use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn circle() -> PointMetric {
    PointMetric {
        weights: vec![1.0],
        periodic: vec![true],
    }
}

fn rotation(n: usize, shift: f64) -> SampledSemiflow {
    let points: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / n as f64]).collect();
    let images = points.iter().map(|p| vec![vec![(p[0] + shift).rem_euclid(1.0)]]).collect();
    SampledSemiflow::new(points, images, circle(), 1.0).unwrap()
}

/// Oracle: reachability by exhaustive search from each node.
fn brute_reach(g: &ChainGraph) -> Vec<Vec<bool>> {
    let n = g.node_count;
    (0..n)
        .map(|i| {
            let mut seen = vec![false; n];
            let mut stack: Vec<usize> = g.edges[i].iter().map(|x| *x as usize).collect();
            while let Some(x) = stack.pop() {
                if !seen[x] {
                    seen[x] = true;
                    stack.extend(g.edges[x].iter().map(|y| *y as usize));
                }
            }
            seen
        })
        .collect()
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> ChainGraph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if rng.gen_bool(p) {
                edges.push((i, j));
            }
        }
    }
    ChainGraph::from_edges(n, 1.0, &edges)
}

fn random_flow(rng: &mut ChaCha8Rng, n: usize) -> SampledSemiflow {
    let metric = PointMetric {
        weights: vec![1.0, 1.0],
        periodic: vec![true, false],
    };
    let points: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect();
    let images = points
        .iter()
        .map(|p| {
            let k = if rng.gen_bool(0.05) { 0 } else { rng.gen_range(1..3) };
            (0..k)
                .map(|_| vec![(p[0] + rng.gen_range(-0.2..0.2)).rem_euclid(1.0), p[1] * rng.gen_range(0.5..1.1)])
                .collect()
        })
        .collect();
    SampledSemiflow::new(points, images, metric, 1.0).unwrap()
}

fn check_against_oracle(g: &ChainGraph) {
    let dec = chain_decomposition(g);
    let reach = brute_reach(g);
    let n = g.node_count;
    for i in 0..n {
        for j in 0..n {
            assert_eq!(dec.related(i, j), reach[i][j], "reach {i} -> {j}");
        }
    }
    let recurrent: Vec<usize> = (0..n).filter(|i| reach[*i][*i]).collect();
    assert_eq!(dec.recurrent, recurrent);
    for c in &dec.components {
        for a in c {
            for b in c {
                assert!(reach[*a][*b]);
            }
        }
    }
    // maximality: recurrent nodes in different components are not mutually reachable
    for i in &recurrent {
        for j in &recurrent {
            let same = dec.component_of(*i) == dec.component_of(*j);
            assert_eq!(same, reach[*i][*j] && reach[*j][*i]);
        }
    }
}

#[test]
fn two_fixed_points() {
    let points = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
    let f = SampledSemiflow::new(points.clone(), points.into_iter().map(|p| vec![p]).collect(), PointMetric::euclidean(2), 1.0)
        .unwrap();
    let g = build_chain_graph(&f, 0.1).unwrap();
    assert_eq!(g.edges, vec![vec![0], vec![1]]);
    let dec = chain_decomposition(&g);
    assert_eq!(dec.components, vec![vec![0], vec![1]]);
}

#[test]
fn rotation_is_transitive() {
    let f = rotation(32, 0.1);
    let g = build_chain_graph(&f, 1.0 / 32.0).unwrap();
    let reach = brute_reach(&g);
    assert!(reach.iter().all(|r| r.iter().all(|x| *x)));
    let dec = chain_decomposition(&g);
    assert_eq!(dec.components, vec![(0..32).collect::<Vec<_>>()]);
    let (r, keep) = restrict_omega(&f, 5, 1.0 / 32.0).unwrap();
    assert_eq!(keep.len(), 32);
    assert_eq!(r.len(), 32);
}

#[test]
fn source_sink() {
    let points = vec![vec![0.0], vec![0.5]];
    let images = vec![vec![vec![0.49]], vec![vec![0.5]]];
    let f = SampledSemiflow::new(points, images, PointMetric::euclidean(1), 1.0).unwrap();
    let g = build_chain_graph(&f, 0.05).unwrap();
    assert_eq!(g.edges, vec![vec![1], vec![1]]);
    assert!(chain_relation(&g, 0, 1));
    assert!(!chain_relation(&g, 1, 0));
    assert!(chain_relation(&g, 1, 1));
    assert!(!chain_relation(&g, 0, 0));
    let dec = chain_decomposition(&g);
    assert_eq!(dec.recurrent, vec![1]);
    assert_eq!(dec.components, vec![vec![1]]);
    let (r, keep) = restrict_omega(&f, 1, 0.05).unwrap();
    assert_eq!(keep, vec![1]);
    assert_eq!(r.labels, vec![1]);
}

#[test]
fn isolated_self_loops() {
    let g = ChainGraph::from_edges(5, 1.0, &(0..5).map(|i| (i, i)).collect::<Vec<_>>());
    assert_eq!(chain_decomposition(&g).components.len(), 5);
}

#[test]
fn random_fifty_node_closure() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let g = random_graph(&mut rng, 50, 0.04);
        check_against_oracle(&g);
        let reach = brute_reach(&g);
        for i in 0..50 {
            for j in 0..50 {
                assert_eq!(chain_relation(&g, i, j), reach[i][j]);
            }
        }
    }
}

#[test]
fn sweep_matches_brute_edges() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let f = random_flow(&mut rng, 150);
    for eps in [0.01, 0.05, 0.3, 0.7] {
        let g = build_chain_graph(&f, eps).unwrap();
        for (i, img) in f.images.iter().enumerate() {
            let want: Vec<u32> = (0..f.len())
                .filter(|j| img.iter().any(|x| f.metric.distance(x, &f.points[*j]) <= eps))
                .map(|j| j as u32)
                .collect();
            assert_eq!(g.edges[i], want);
        }
    }
}

#[test]
fn rotation_shift_stability() {
    let f = rotation(40, 0.137);
    let eps = 1.0 / 40.0;
    let g = build_chain_graph(&f, eps).unwrap();
    let dec = chain_decomposition(&g);
    for i in 0..40 {
        for j in 0..40 {
            if dec.related(i, j) {
                let (a, da) = f.nearest(&f.images[i][0]).unwrap();
                let (b, db) = f.nearest(&f.images[j][0]).unwrap();
                assert!(da <= eps && db <= eps);
                assert!(dec.related(a, b));
            }
        }
    }
}

#[test]
fn schedule_and_headline() {
    let s = log_schedule(1.0, 1e-2, 4);
    assert_eq!(s.len(), 9);
    assert!(s.windows(2).all(|w| w[0] > w[1]));
    assert!((s[8] - 1e-2).abs() < 1e-15);
    let h = headline_eps(&s, 1.0 / 64.0).unwrap();
    assert!((h - 10f64.powf(-1.5)).abs() < 1e-12, "{h}");
    assert!(headline_eps(&s, 1.0).is_none());
}

#[test]
fn excess_on_circle() {
    let m = circle();
    assert_eq!(excess(&[vec![0.0]], &[vec![0.0], vec![0.5]], &m), Some(0.0));
    assert_eq!(excess(&[vec![0.0], vec![0.5]], &[vec![0.0]], &m), Some(0.5));
    assert_eq!(excess(&[], &[vec![0.0]], &m), None);
}

#[test]
fn constant_sequence_transfers() {
    let f = rotation(24, 0.1);
    let flows = vec![f.clone(); 3];
    let pairs = vec![(0, 5); 3];
    let sched = log_schedule(0.5, 0.05, 4);
    let rep = limit_chain_transfer(&flows, &f, &pairs, &sched).unwrap();
    assert!(rep.excess.iter().all(|e| *e == 0.0));
    assert!(rep.levels.iter().filter(|l| l.eps >= 1.0 / 24.0).all(|l| l.limit_related && l.related == 3));
    assert_eq!(rep.smallest_eps, sched.last().copied());
}

#[test]
fn converging_rotations_transfer() {
    let limit = rotation(48, 0.1);
    let flows: Vec<_> = (1..=4).map(|k| rotation(48, 0.1 + 0.02 / k as f64)).collect();
    let pairs = vec![(3, 40); 4];
    let rep = limit_chain_transfer(&flows, &limit, &pairs, &[0.1, 0.05, 1.0 / 48.0]).unwrap();
    assert!(rep.source_related.iter().all(|r| *r));
    assert!(rep.levels.iter().all(|l| l.limit_related));
}

#[test]
fn hausdorff_gap_reported() {
    let limit = rotation(8, 0.1);
    let far = SampledSemiflow::new(vec![vec![0.06]], vec![vec![vec![0.06]]], circle(), 1.0).unwrap();
    let err = limit_chain_transfer(&[far], &limit, &[(0, 0)], &[0.01]).unwrap_err();
    assert!(matches!(err, ConleyError::HausdorffGap { .. }));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn scc_matches_brute_force(seed in any::<u64>(), n in 1usize..=200, p in 0.0f64..0.03) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, n, p);
        check_against_oracle(&g);
    }

    #[test]
    fn restriction_keeps_recurrent_set(seed in any::<u64>(), n in 2usize..=120, k in 1usize..6, eps in 0.01f64..0.2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_flow(&mut rng, n);
        let full = chain_decomposition(&build_chain_graph(&f, eps).unwrap());
        let (r, keep) = restrict_omega(&f, k, eps).unwrap();
        let sub = chain_decomposition(&build_chain_graph(&r, eps).unwrap());
        let mapped: Vec<usize> = sub.recurrent.iter().map(|i| keep[*i]).collect();
        let expected: Vec<usize> = full.recurrent.iter().copied().filter(|i| keep.binary_search(i).is_ok()).collect();
        prop_assert_eq!(&mapped, &expected);
        prop_assert_eq!(mapped, full.recurrent);
    }

    #[test]
    fn edges_monotone_in_eps(seed in any::<u64>(), e1 in 0.01f64..0.3, de in 0.0f64..0.3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_flow(&mut rng, 80);
        let a = build_chain_graph(&f, e1).unwrap();
        let b = build_chain_graph(&f, e1 + de).unwrap();
        for i in 0..80 {
            for j in &a.edges[i] {
                prop_assert!(b.edges[i].contains(j));
            }
        }
    }
}
