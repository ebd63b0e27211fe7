use polyglot_ner::crf::{log_likelihood, log_partition, marginals, sample_posterior, viterbi, CrfPotentials};
use polyglot_ner::numerics::rng::stream;
use polyglot_ner::numerics::Tensor;
use proptest::prelude::*;

fn all_paths(t: usize, l: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..t {
        out = out.into_iter().flat_map(|p| (0..l).map(move |y| [p.clone(), vec![y]].concat())).collect();
    }
    out
}

fn brute_score(p: &CrfPotentials, y: &[usize]) -> f64 {
    let mut s = p.start.data()[y[0]] + p.stop.data()[y[y.len() - 1]];
    for (t, &yt) in y.iter().enumerate() {
        s += p.emissions.at(t, yt);
        if t > 0 {
            s += p.transitions.at(y[t - 1], yt);
        }
    }
    s
}

fn potentials() -> impl Strategy<Value = CrfPotentials> {
    (1..=5usize, 1..=4usize).prop_flat_map(|(t, l)| {
        let v = |n| prop::collection::vec(-3.0..3.0f64, n);
        (v(t * l), v(l * l), v(l), v(l)).prop_map(move |(e, tr, s, st)| {
            CrfPotentials::new(
                Tensor::from_vec(&[t, l], e).unwrap(),
                Tensor::from_vec(&[l, l], tr).unwrap(),
                Tensor::from_vec(&[l], s).unwrap(),
                Tensor::from_vec(&[l], st).unwrap(),
            )
            .unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn inference_matches_enumeration(p in potentials()) {
        let (t, l) = (p.len(), p.num_labels());
        let paths = all_paths(t, l);
        let scores: Vec<f64> = paths.iter().map(|y| brute_score(&p, y)).collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        prop_assert!((log_partition(&p) - log_z).abs() < 1e-9);

        let m = marginals(&p);
        let mut unary = vec![0.0; t * l];
        let mut pair = vec![0.0; t.saturating_sub(1) * l * l];
        for (y, s) in paths.iter().zip(&scores) {
            let w = (s - log_z).exp();
            for k in 0..t {
                unary[k * l + y[k]] += w;
                if k + 1 < t {
                    pair[(k * l + y[k]) * l + y[k + 1]] += w;
                }
            }
        }
        for (a, b) in m.unary.data().iter().zip(&unary) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in m.pairwise.data().iter().zip(&pair) {
            prop_assert!((a - b).abs() < 1e-9);
        }

        let best = (0..paths.len()).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
        let (path, score) = viterbi(&p);
        prop_assert!((score - scores[best]).abs() < 1e-9);
        prop_assert!((brute_score(&p, &path) - scores[best]).abs() < 1e-9);

        let gold = &paths[paths.len() / 2];
        let (ll, g) = log_likelihood(&p, gold).unwrap();
        prop_assert!((ll - (brute_score(&p, gold) - log_z)).abs() < 1e-9);
        for k in 0..t {
            for y in 0..l {
                let expected = f64::from(u8::from(gold[k] == y)) - unary[k * l + y];
                prop_assert!((g.emissions.at(k, y) - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn samples_are_valid_paths(p in potentials(), seed in 0u64..1000) {
        for y in sample_posterior(&p, &mut stream(seed, "test", 0), 5) {
            prop_assert_eq!(y.len(), p.len());
            prop_assert!(y.iter().all(|&v| v < p.num_labels()));
        }
    }
}

#[test]
fn constant_potentials_give_uniform_marginals() {
    let (t, l) = (4, 3);
    let p = CrfPotentials::from_emissions(Tensor::zeros(&[t, l])).unwrap();
    assert!((log_partition(&p) - (t as f64) * (l as f64).ln()).abs() < 1e-12);
    for v in marginals(&p).unary.data() {
        assert!((v - 1.0 / l as f64).abs() < 1e-12);
    }
    assert_eq!(viterbi(&p).0, vec![0; t]);
}
