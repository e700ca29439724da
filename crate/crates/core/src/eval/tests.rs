use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;

use super::*;

fn toks(s: &str) -> Tokens {
    s.split_whitespace().map(String::from).collect()
}

fn refs(rs: &[&str]) -> Vec<Tokens> {
    rs.iter().map(|r| toks(r)).collect()
}

#[test]
fn identity_scores_full_marks() {
    let h = vec![toks("loch fyne is a french restaurant")];
    let r = vec![refs(&["loch fyne is a french restaurant"])];
    assert!((bleu4(&h, &r).unwrap().score - 100.0).abs() < 1e-9);
    assert_eq!(rouge(&h, &r, RougeVariant::L).unwrap().score, 1.0);
    assert_eq!(rouge(&h, &r, RougeVariant::N(4)).unwrap().score, 1.0);
    assert_eq!(exact_match(&h, &r).unwrap().score, 1.0);
}

#[test]
fn empty_and_disjoint_score_zero() {
    let r = vec![refs(&["the cat is on the mat"])];
    let empty = vec![Vec::new()];
    let report = bleu4(&empty, &r).unwrap();
    assert_eq!(report.score, 0.0);
    assert_eq!(report.per_example, vec![0.0]);
    assert_eq!(report.brevity_penalty, Some(0.0));
    let disjoint = vec![toks("a b c d e f")];
    assert_eq!(bleu4(&disjoint, &r).unwrap().score, 0.0);
    assert_eq!(rouge(&disjoint, &r, RougeVariant::L).unwrap().score, 0.0);
    assert_eq!(rouge(&disjoint, &r, RougeVariant::N(4)).unwrap().score, 0.0);
}

#[test]
fn cat_mat_matches_reference_values() {
    // nltk: corpus BLEU has no 4-gram match; method-2 sentence BLEU 48.5491771707.
    let h = vec![toks("the cat sat on the mat")];
    let r = vec![refs(&["the cat is on the mat"])];
    let report = bleu4(&h, &r).unwrap();
    assert_eq!(report.score, 0.0);
    assert!((report.per_example[0] - 48.5491771707).abs() < 1e-4);
    let p = report.precisions.unwrap();
    assert!((p[0] - 5.0 / 6.0).abs() < 1e-15 && (p[1] - 3.0 / 5.0).abs() < 1e-15);
    assert!((p[2] - 1.0 / 4.0).abs() < 1e-15 && p[3] == 0.0);
    // rouge-score: ROUGE-L F 0.8333333333.
    assert!((rouge(&h, &r, RougeVariant::L).unwrap().score - 0.8333333333).abs() < 1e-9);
}

#[test]
fn brevity_penalty_uses_closest_reference() {
    // Hypothesis of 4 tokens; references of 3 and 5 tokens are equally close,
    // so the shorter one counts and there is no penalty.
    let h = vec![toks("a b c d")];
    let r = vec![refs(&["a b c", "a b c d e"])];
    let report = bleu4(&h, &r).unwrap();
    assert_eq!(report.reference_length, Some(3));
    assert_eq!(report.brevity_penalty, Some(1.0));
    let r = vec![refs(&["a b c d e f g h"])];
    let report = bleu4(&h, &r).unwrap();
    assert!((report.brevity_penalty.unwrap() - (1.0f64 - 8.0 / 4.0).exp()).abs() < 1e-15);
}

#[test]
fn short_hypotheses_add_one_to_each_total() {
    // The one-token hypothesis has no 2-, 3- or 4-grams but still counts once.
    let h = vec![toks("a b c d e"), toks("a")];
    let r = vec![refs(&["a b c d e"]), refs(&["a"])];
    let p = bleu4(&h, &r).unwrap().precisions.unwrap();
    assert_eq!(p, [1.0, 4.0 / 5.0, 3.0 / 4.0, 2.0 / 3.0]);
}

#[test]
fn input_errors() {
    assert_eq!(bleu4(&[], &[]).unwrap_err(), MetricError::EmptyCorpus);
    assert!(matches!(bleu4(&[toks("a")], &[]), Err(MetricError::CountMismatch { .. })));
    assert_eq!(rouge(&[toks("a")], &[vec![]], RougeVariant::L).unwrap_err(), MetricError::NoReference(0));
}

#[test]
fn lcs_examples() {
    assert_eq!(lcs_len(&toks("a b c d"), &toks("a c d b")), 3);
    assert_eq!(lcs_len(&toks(""), &toks("a")), 0);
    assert_eq!(lcs_len(&toks("x y"), &toks("x y")), 2);
}

#[test]
fn report_names() {
    assert_eq!(RougeVariant::N(4).name(), "ROUGE-4");
    assert_eq!(RougeVariant::L.name(), "ROUGE-L");
    assert_eq!(tokenize_all(&["A b.".to_string()], true), vec![toks("a b .")]);
}

fn corpus() -> impl Strategy<Value = (Vec<Tokens>, Vec<Vec<Tokens>>)> {
    let sentence = || {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 0..9)
            .prop_map(|w| w.into_iter().map(String::from).collect::<Tokens>())
    };
    prop::collection::vec((sentence(), prop::collection::vec(sentence(), 1..4)), 1..8)
        .prop_map(|pairs| pairs.into_iter().unzip())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn example_order_does_not_matter((h, r) in corpus(), shift in 0usize..8) {
        let k = shift % h.len();
        let mut h2 = h.clone();
        let mut r2 = r.clone();
        h2.rotate_left(k);
        r2.rotate_left(k);
        let b1 = bleu4(&h, &r).unwrap().score;
        let b2 = bleu4(&h2, &r2).unwrap().score;
        prop_assert!((b1 - b2).abs() < 1e-9);
        for v in [RougeVariant::L, RougeVariant::N(4)] {
            prop_assert!((rouge(&h, &r, v).unwrap().score - rouge(&h2, &r2, v).unwrap().score).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_reference_never_lowers_scores((h, r) in corpus(), pick in 0usize..8) {
        let mut r2 = r.clone();
        for refs in r2.iter_mut() {
            let dup = refs[pick % refs.len()].clone();
            refs.push(dup);
        }
        let before = bleu4(&h, &r).unwrap();
        let after = bleu4(&h, &r2).unwrap();
        for (a, b) in before.per_example.iter().zip(&after.per_example) {
            prop_assert!(b + 1e-12 >= *a);
        }
        for v in [RougeVariant::L, RougeVariant::N(4)] {
            let (a, b) = (rouge(&h, &r, v).unwrap(), rouge(&h, &r2, v).unwrap());
            for (x, y) in a.per_example.iter().zip(&b.per_example) {
                prop_assert!(y >= x);
            }
        }
    }

    #[test]
    fn bleu_ignores_reference_order((h, r) in corpus()) {
        let reversed: Vec<Vec<Tokens>> = r.iter().map(|rs| rs.iter().rev().cloned().collect()).collect();
        let a = bleu4(&h, &r).unwrap();
        let b = bleu4(&h, &reversed).unwrap();
        prop_assert_eq!(a.score, b.score);
        prop_assert_eq!(a.per_example, b.per_example);
    }

    #[test]
    fn scores_stay_in_range((h, r) in corpus()) {
        let b = bleu4(&h, &r).unwrap();
        prop_assert!((0.0..=100.0 + 1e-9).contains(&b.score));
        prop_assert!(b.per_example.iter().all(|s| (0.0..=100.0 + 1e-9).contains(s)));
        for v in [RougeVariant::L, RougeVariant::N(4)] {
            let s = rouge(&h, &r, v).unwrap();
            prop_assert!((0.0..=1.0).contains(&s.score));
        }
    }
}
