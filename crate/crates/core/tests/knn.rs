use celab::nn::NetworkParams;
use celab::pairs::{generate_synthetic, select_exemplars, Direction};
use celab::repr::{
    embed_pairs, embeddings_from_csv, embeddings_to_csv, evaluate_embeddings, evaluate_method, knn_classify, Embedding,
    MethodConfig, Networks, Source,
};
use celab::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PRIORITY: [Direction; 3] = [Direction::Forward, Direction::Backward, Direction::NoCausality];

fn priority(d: Direction) -> usize {
    PRIORITY.iter().position(|&p| p == d).unwrap()
}

/// Reference vote on integer coordinates: everything strictly inside the
/// k-th distance, then boundary points by (priority, id).
fn oracle(query: &[i64], support: &[(u64, Vec<i64>, Direction)], k: usize) -> Direction {
    let dist = |v: &[i64]| -> i64 { v.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum() };
    let mut all: Vec<i64> = support.iter().map(|s| dist(&s.1)).collect();
    all.sort_unstable();
    let kth = all[k - 1];
    let mut chosen: Vec<Direction> = support.iter().filter(|s| dist(&s.1) < kth).map(|s| s.2).collect();
    let mut boundary: Vec<(usize, u64)> = support
        .iter()
        .filter(|s| dist(&s.1) == kth)
        .map(|s| (priority(s.2), s.0))
        .collect();
    boundary.sort_unstable();
    chosen.extend(boundary.iter().take(k - chosen.len()).map(|b| PRIORITY[b.0]));
    let count = |d: Direction| chosen.iter().filter(|&&c| c == d).count();
    let best = PRIORITY.iter().map(|&d| count(d)).max().unwrap();
    *PRIORITY.iter().find(|&&d| count(d) == best).unwrap()
}

fn embed(id: u64, v: &[i64], label: Direction) -> Embedding {
    Embedding {
        pair_id: id,
        label: Some(label),
        source: Source::CauseEffect,
        vector: v.iter().map(|&x| x as f64).collect(),
    }
}

#[test]
fn matches_reference_on_random_integer_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..2000 {
        let dim = rng.random_range(1..4);
        let n = rng.random_range(1..15);
        let support: Vec<(u64, Vec<i64>, Direction)> = (0..n)
            .map(|i| {
                (
                    rng.random_range(0..1000u64) * 100 + i,
                    (0..dim).map(|_| rng.random_range(-3..=3)).collect(),
                    PRIORITY[rng.random_range(0..3)],
                )
            })
            .collect();
        let query: Vec<i64> = (0..dim).map(|_| rng.random_range(-3..=3)).collect();
        let k = rng.random_range(1..=n as usize);
        let emb: Vec<Embedding> = support.iter().map(|s| embed(s.0, &s.1, s.2)).collect();
        let q: Vec<f64> = query.iter().map(|&x| x as f64).collect();
        assert_eq!(knn_classify(&q, &emb, k).unwrap(), oracle(&query, &support, k));
    }
}

#[test]
fn two_dimensional_miniature() {
    let support = vec![
        embed(1, &[0, 0], Direction::Forward),
        embed(2, &[1, 0], Direction::Forward),
        embed(3, &[10, 10], Direction::Backward),
        embed(4, &[11, 10], Direction::Backward),
        embed(5, &[10, 11], Direction::Backward),
        embed(6, &[-10, 10], Direction::NoCausality),
    ];
    let classify = |q: [f64; 2], k| knn_classify(&q, &support, k).unwrap();
    assert_eq!(classify([0.2, 0.1], 1), Direction::Forward);
    assert_eq!(classify([9.0, 9.0], 3), Direction::Backward);
    assert_eq!(classify([-8.0, 9.0], 1), Direction::NoCausality);
    assert_eq!(classify([0.2, 0.1], 6), Direction::Backward);
    // Two forward and two backward votes among five neighbours: priority decides.
    assert_eq!(classify([0.2, 0.1], 5), Direction::Forward);
    // Equidistant from a forward and a no-causality point: priority decides.
    assert_eq!(classify([-5.0, 5.0], 1), Direction::Forward);
}

#[test]
fn input_errors() {
    let support = vec![embed(1, &[0, 0], Direction::Forward)];
    assert!(matches!(
        knn_classify(&[0.0, 0.0], &[], 1),
        Err(Error::InvalidArgument(_))
    ));
    assert!(matches!(
        knn_classify(&[0.0, 0.0], &support, 2),
        Err(Error::InvalidArgument(_))
    ));
    assert!(matches!(
        knn_classify(&[0.0, 0.0], &support, 0),
        Err(Error::InvalidArgument(_))
    ));
    assert!(matches!(knn_classify(&[0.0], &support, 1), Err(Error::Shape(_))));
    let mut unlabeled = support.clone();
    unlabeled[0].label = None;
    assert!(knn_classify(&[0.0, 0.0], &unlabeled, 1).is_err());
}

/// Integer support points with class indices, a query, and k.
type Instance = (Vec<(Vec<i64>, usize)>, Vec<i64>, usize);

fn arb_instance() -> impl Strategy<Value = Instance> {
    (1usize..4, 1usize..12).prop_flat_map(|(dim, n)| {
        (
            prop::collection::vec((prop::collection::vec(-4i64..=4, dim), 0usize..3), n),
            prop::collection::vec(-4i64..=4, dim),
            1..=n,
        )
    })
}

proptest! {
    #[test]
    fn support_order_is_irrelevant((pts, q, k) in arb_instance(), seed in any::<u64>()) {
        let mut emb: Vec<Embedding> = pts.iter().enumerate().map(|(i, (v, l))| embed(i as u64, v, PRIORITY[*l])).collect();
        let query: Vec<f64> = q.iter().map(|&x| x as f64).collect();
        let before = knn_classify(&query, &emb, k).unwrap();
        emb.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(knn_classify(&query, &emb, k).unwrap(), before);
    }

    #[test]
    fn distant_support_points_do_not_matter((pts, q, k) in arb_instance(), label in 0usize..3) {
        let mut emb: Vec<Embedding> = pts.iter().enumerate().map(|(i, (v, l))| embed(i as u64, v, PRIORITY[*l])).collect();
        let query: Vec<f64> = q.iter().map(|&x| x as f64).collect();
        let before = knn_classify(&query, &emb, k).unwrap();
        let far = vec![1000; q.len()];
        emb.push(embed(999, &far, PRIORITY[label]));
        prop_assert_eq!(knn_classify(&query, &emb, k).unwrap(), before);
    }
}

#[test]
fn self_matching_test_set_scores_one() {
    let support: Vec<Embedding> = (0..12)
        .map(|i| embed(i, &[i as i64 * 3, (i as i64 % 4) * 7], PRIORITY[(i % 3) as usize]))
        .collect();
    let result = evaluate_embeddings(&MethodConfig::ALL[0], &support, &support[3..9]).unwrap();
    assert_eq!(result.accuracy, 1.0);
    assert_eq!(result.correctness, vec![1; 6]);
    assert_eq!(result.item_ids, (3..9).collect::<Vec<u64>>());
}

#[test]
fn accuracy_is_mean_correctness_for_real_networks() {
    let data = generate_synthetic(60, 8).unwrap();
    let exemplars = select_exemplars(&data, 3, 1).unwrap();
    let (train, test) = data.pairs().split_at(45);
    let ce = NetworkParams::init(3, 1).unwrap();
    let networks = Networks {
        cause_effect: Some(&ce),
        mnist: None,
    };
    for method in ["CE-all", "CE-9"] {
        let config: MethodConfig = method.parse().unwrap();
        let r = evaluate_method(&config, &networks, train, exemplars.pairs(), test).unwrap();
        assert_eq!(r.method, method);
        assert_eq!(r.correctness.len(), 15);
        let mean = r.correctness.iter().map(|&c| f64::from(c)).sum::<f64>() / 15.0;
        assert_eq!(r.accuracy, mean);
    }
    let mnist: MethodConfig = "mnist-all".parse().unwrap();
    assert!(matches!(
        evaluate_method(&mnist, &networks, train, exemplars.pairs(), test),
        Err(Error::NotFound(_))
    ));
    let nine: MethodConfig = "CE-9".parse().unwrap();
    assert!(evaluate_method(&nine, &networks, train, &exemplars.pairs()[..8], test).is_err());
}

#[test]
fn embedding_csv_round_trips() {
    let data = generate_synthetic(6, 2).unwrap();
    let params = NetworkParams::init(10, 4).unwrap();
    let mut emb = embed_pairs(&params, Source::Mnist, data.pairs()).unwrap();
    emb[2].label = None;
    assert!(emb
        .iter()
        .all(|e| e.vector.len() == 128 && e.vector.iter().all(|&v| v >= 0.0)));
    let back = embeddings_from_csv(&embeddings_to_csv(&emb), Source::Mnist).unwrap();
    assert_eq!(back, emb);
}
