use std::f64::consts::PI;

use hrgg::census::{count_pattern_bruteforce, count_tree_embeddings, TreeSpec};
use hrgg::geometry::{connection_angle_threshold, hyperbolic_distance, relative_angle, RadialDepthLaw};
use hrgg::graph::{build_hyperbolic_graph, restrict_annulus, BuildMeta, BuildStrategy, Graph, Model};
use hrgg::quadrature::integrate;
use hrgg::sampling::sample_point_cloud;
use hrgg::theory::{expected_subtree_full, ln_expected_subtree_asymptotic, regime_classify};
use hrgg::{HyperbolicPoint, ModelParams, RadiusRule};
use proptest::prelude::*;

fn graph_from(n: usize, edges: &[(u32, u32)]) -> Graph {
    let meta = BuildMeta {
        model: Model::Euclidean,
        params: None,
        radius: 1.0,
        connection_radius: 1.0,
        strategy: BuildStrategy::Loaded,
    };
    Graph::from_edges(n, edges, vec![0.0; n], meta).unwrap()
}

fn small_graph() -> impl Strategy<Value = (usize, Vec<(u32, u32)>)> {
    (2usize..=9).prop_flat_map(|n| {
        let pairs: Vec<(u32, u32)> =
            (0..n as u32).flat_map(|a| (a + 1..n as u32).map(move |b| (a, b))).collect();
        let m = pairs.len();
        (Just(n), proptest::sample::subsequence(pairs, 0..=m))
    })
}

fn small_tree() -> impl Strategy<Value = TreeSpec> {
    (2usize..=5, any::<u64>()).prop_map(|(k, pick)| {
        let all = TreeSpec::all_nonisomorphic(k).unwrap();
        all[(pick % all.len() as u64) as usize].clone()
    })
}

fn point3(r: f64, radius: f64, a: f64, b: f64) -> HyperbolicPoint {
    HyperbolicPoint::from_radius(r, radius, vec![a, b])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn metric_axioms(
        r in proptest::array::uniform3(0.0f64..15.0),
        a in proptest::array::uniform3(0.0f64..PI),
        b in proptest::array::uniform3(0.0f64..2.0 * PI),
        zeta in 0.5f64..2.0,
    ) {
        let p: Vec<HyperbolicPoint> = (0..3).map(|i| point3(r[i], 15.0, a[i], b[i])).collect();
        let dist = |x: &HyperbolicPoint, y: &HyperbolicPoint| hyperbolic_distance(x.r, y.r, relative_angle(x, y), zeta);
        prop_assert_eq!(dist(&p[0], &p[1]), dist(&p[1], &p[0]));
        prop_assert_eq!(dist(&p[0], &p[0]), 0.0);
        prop_assert!(dist(&p[0], &p[2]) <= dist(&p[0], &p[1]) + dist(&p[1], &p[2]) + 1e-9);
    }

    #[test]
    fn threshold_decides_connection(r1 in 0.0f64..12.0, r2 in 0.0f64..12.0, theta in 0.0f64..PI, zeta in 0.5f64..2.0) {
        let radius = 10.0;
        let star = connection_angle_threshold(r1, r2, radius, zeta);
        let d = hyperbolic_distance(r1, r2, theta, zeta);
        prop_assume!((d - radius).abs() > 1e-9 && (theta - star).abs() > 1e-9);
        prop_assert_eq!(theta <= star, d <= radius);
    }

    #[test]
    fn depth_density_normalized_and_bounded(d in 2usize..=5, alpha in 0.3f64..3.0, radius in 5.0f64..25.0) {
        let law = RadialDepthLaw::new(d, alpha, radius);
        let total = integrate(|t| law.density(t), 0.0, radius, 1e-12);
        prop_assert!((total - 1.0).abs() < 1e-10);
        let k = alpha * (d as f64 - 1.0);
        let excess = |radius: f64| {
            let law = RadialDepthLaw::new(d, alpha, radius);
            (0..=40).map(|i| radius * i as f64 / 40.0).map(|t| law.density(t) / (k * (-k * t).exp())).fold(0.0, f64::max) - 1.0
        };
        let (e1, e2) = (excess(radius), excess(2.0 * radius));
        prop_assert!(e1 <= 8.0 * d as f64 * (1.0 + alpha * radius) * (-alpha * radius).exp() + 1e-12);
        prop_assert!(e2 <= e1 + 1e-12);
    }

    #[test]
    fn count_divisible_by_automorphisms((n, edges) in small_graph(), tree in small_tree()) {
        let g = graph_from(n, &edges);
        let c = count_tree_embeddings(&g, &tree, None).unwrap();
        prop_assert_eq!(c % tree.automorphism_count(), 0);
    }

    #[test]
    fn count_monotone_in_edges_and_vertices((n, edges) in small_graph(), tree in small_tree(), extra in any::<u64>()) {
        let g = graph_from(n, &edges);
        let base = count_tree_embeddings(&g, &tree, None).unwrap();
        let missing: Vec<(u32, u32)> = (0..n as u32)
            .flat_map(|a| (a + 1..n as u32).map(move |b| (a, b)))
            .filter(|e| !edges.contains(e))
            .collect();
        if !missing.is_empty() {
            let mut more = edges.clone();
            more.push(missing[(extra % missing.len() as u64) as usize]);
            prop_assert!(count_tree_embeddings(&graph_from(n, &more), &tree, None).unwrap() >= base);
        }
        let mut attach = edges.clone();
        attach.push(((extra % n as u64) as u32, n as u32));
        prop_assert!(count_tree_embeddings(&graph_from(n + 1, &attach), &tree, None).unwrap() >= base);
    }

    #[test]
    fn removing_tree_edges_never_lowers_count((n, edges) in small_graph(), tree in small_tree(), drop in any::<u64>()) {
        let g = graph_from(n, &edges);
        let full = count_pattern_bruteforce(&g, tree.k(), tree.edges(), None).unwrap();
        prop_assert_eq!(full, count_tree_embeddings(&g, &tree, None).unwrap());
        let mut forest = tree.edges().to_vec();
        forest.remove((drop % forest.len() as u64) as usize);
        prop_assert!(count_pattern_bruteforce(&g, tree.k(), &forest, None).unwrap() >= full);
    }

    #[test]
    fn full_expectation_ignores_labels(tree in small_tree(), perm_seed in any::<u64>()) {
        let k = tree.k();
        let mut perm: Vec<usize> = (0..k).collect();
        let mut s = perm_seed;
        for i in (1..k).rev() {
            perm.swap(i, (s % (i as u64 + 1)) as usize);
            s /= i as u64 + 1;
        }
        let relabeled = TreeSpec::new(k, tree.edges().iter().map(|&(a, b)| (perm[a], perm[b])).collect()).unwrap();
        let params = ModelParams::new(2, 3.0, 1.0, 1e4, RadiusRule::Thermodynamic { nu: 1.0 }).unwrap();
        let r = params.radius();
        prop_assert_eq!(expected_subtree_full(&tree, &params, r).unwrap(), expected_subtree_full(&relabeled, &params, r).unwrap());
    }

    #[test]
    fn clt_flag_monotone_in_alpha(tree in small_tree(), a in 0.2f64..6.0, da in 0.0f64..3.0) {
        let p = |alpha: f64| ModelParams::new(2, alpha, 1.0, 1e4, RadiusRule::Thermodynamic { nu: 1.0 }).unwrap();
        let lo = regime_classify(&tree, &p(a));
        let hi = regime_classify(&tree, &p(a + da));
        prop_assert!(!lo.clt_applicable || hi.clt_applicable);
    }

    #[test]
    fn asymptotic_slope_is_exponent(tree in small_tree(), ratio in 0.3f64..3.0, gamma in 0.1f64..0.45) {
        let p = ModelParams::new(2, ratio, 1.0, 1e4, RadiusRule::Thermodynamic { nu: 1.0 })
            .unwrap()
            .with_gamma(gamma)
            .unwrap();
        let at = |n: f64| {
            let q = p.with_n(n).unwrap();
            ln_expected_subtree_asymptotic(&tree, &q, q.radius())
        };
        // keep every rate away from zero, where the limit is approached only logarithmically
        prop_assume!(tree.degrees().iter().all(|&d| (d as f64 - 2.0 * ratio).abs() > 0.2));
        let (n1, n2) = (1e250f64, 1e300f64);
        let slope = (at(n2) - at(n1)) / (n2.ln() - n1.ln());
        let expected = 1.0 + gamma * tree.degrees().iter().map(|&d| (d as f64 - 2.0 * ratio).max(0.0)).sum::<f64>();
        prop_assert!((slope - expected).abs() < 1e-6, "{} vs {}", slope, expected);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cloud_graph_invariants(seed in any::<u64>(), alpha in 0.4f64..2.5, gamma in 0.2f64..1.0) {
        let params = ModelParams::new(2, alpha, 1.0, 300.0, RadiusRule::Thermodynamic { nu: 1.0 }).unwrap();
        let cloud = sample_point_cloud(&params, seed).unwrap();
        prop_assert_eq!(&sample_point_cloud(&params, seed).unwrap().points, &cloud.points);
        let g = build_hyperbolic_graph(&cloud);
        g.check_invariants().unwrap();
        for u in 0..cloud.len() {
            for v in u + 1..cloud.len() {
                let (a, b) = (&cloud.points[u], &cloud.points[v]);
                let d = hyperbolic_distance(a.r, b.r, relative_angle(a, b), 1.0);
                if (d - cloud.radius).abs() > 1e-9 {
                    prop_assert_eq!(g.has_edge(u, v), d <= cloud.radius);
                }
            }
        }
        let keep: Vec<usize> = (0..cloud.len()).filter(|&i| cloud.points[i].t <= gamma * cloud.radius).collect();
        let restricted = restrict_annulus(&cloud, gamma).unwrap();
        prop_assert_eq!(restricted.len(), keep.len());
        let sub = g.induced_subgraph(&keep);
        let direct = build_hyperbolic_graph(&restricted);
        prop_assert_eq!(sub.edges().collect::<Vec<_>>(), direct.edges().collect::<Vec<_>>());
    }
}
