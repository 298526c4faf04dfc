use std::collections::BTreeSet;

use instret::evaluation::{average_precision_of, precision_at_k_of, ApMethod, PrecisionMode};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, PartialEq, Debug)]
enum Label {
    Pos,
    Neg,
    Junk,
}

struct Instance {
    names: Vec<String>,
    positive: BTreeSet<String>,
    junk: BTreeSet<String>,
}

fn instance(labels: &[Label]) -> Instance {
    let names: Vec<String> = (0..labels.len()).map(|i| format!("i{i}")).collect();
    let pick = |want| names.iter().zip(labels).filter(|(_, &l)| l == want).map(|(n, _)| n.clone()).collect();
    Instance {
        positive: pick(Label::Pos),
        junk: pick(Label::Junk),
        names,
    }
}

/// Area under the precision-recall staircase, joining consecutive operating
/// points by straight lines from (recall 0, precision 1).
fn staircase_area(labels: &[Label]) -> f64 {
    let total = labels.iter().filter(|&&l| l == Label::Pos).count() as f64;
    let mut points = vec![(0.0, 1.0)];
    let (mut seen, mut hits) = (0.0, 0.0);
    for &l in labels.iter().filter(|&&l| l != Label::Junk) {
        seen += 1.0;
        if l == Label::Pos {
            hits += 1.0;
            points.push((hits / total, hits / seen));
        }
    }
    points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum()
}

fn textbook_ap(labels: &[Label]) -> f64 {
    let total = labels.iter().filter(|&&l| l == Label::Pos).count() as f64;
    let (mut seen, mut hits, mut sum) = (0.0, 0.0, 0.0);
    for &l in labels.iter().filter(|&&l| l != Label::Junk) {
        seen += 1.0;
        if l == Label::Pos {
            hits += 1.0;
            sum += hits / seen;
        }
    }
    sum / total
}

fn ap(labels: &[Label], method: ApMethod) -> f64 {
    let inst = instance(labels);
    average_precision_of(inst.names.iter().map(String::as_str), &inst.positive, &inst.junk, method).unwrap()
}

fn all_labelings(len: usize, alphabet: &[Label]) -> Vec<Vec<Label>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|p| {
                alphabet.iter().map(move |&l| {
                    let mut q = p.clone();
                    q.push(l);
                    q
                })
            })
            .collect();
    }
    out
}

#[test]
fn pnp_reference_value() {
    let v = ap(&[Label::Pos, Label::Neg, Label::Pos], ApMethod::Trapezoid);
    assert!((v - 0.916_666_666_666_666_6).abs() < 1e-12);
    assert!((staircase_area(&[Label::Pos, Label::Neg, Label::Pos]) - v).abs() < 1e-12);
}

#[test]
fn exhaustive_up_to_eight_items() {
    let mut checked = 0;
    for len in 1..=8 {
        for labels in all_labelings(len, &[Label::Pos, Label::Neg, Label::Junk]) {
            if !labels.contains(&Label::Pos) {
                continue;
            }
            let got = ap(&labels, ApMethod::Trapezoid);
            assert!((got - staircase_area(&labels)).abs() < 1e-12, "{labels:?}");
            let plain = ap(&labels, ApMethod::Plain);
            assert!((plain - textbook_ap(&labels)).abs() < 1e-12, "{labels:?}");
            checked += 1;
        }
    }
    assert!(checked > 9000);
}

#[test]
fn junk_insertion_leaves_ap_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..1000 {
        let len = rng.gen_range(1..=30);
        let mut labels: Vec<Label> = (0..len).map(|_| if rng.gen_bool(0.3) { Label::Pos } else { Label::Neg }).collect();
        labels[rng.gen_range(0..len)] = Label::Pos;
        let base = ap(&labels, ApMethod::Trapezoid);
        let base_p10 = {
            let i = instance(&labels);
            precision_at_k_of(i.names.iter().map(String::as_str), &i.positive, &i.junk, 10, PrecisionMode::JunkRemoved)
                .unwrap()
        };
        for _ in 0..rng.gen_range(1..=10) {
            let at = rng.gen_range(0..=labels.len());
            labels.insert(at, Label::Junk);
        }
        assert!((ap(&labels, ApMethod::Trapezoid) - base).abs() < 1e-12);
        assert!((ap(&labels, ApMethod::Benchmark) - ap(&strip(&labels), ApMethod::Benchmark)).abs() < 1e-12);
        let i = instance(&labels);
        let p10 = precision_at_k_of(i.names.iter().map(String::as_str), &i.positive, &i.junk, 10, PrecisionMode::JunkRemoved)
            .unwrap();
        assert_eq!(p10, base_p10);
    }
}

fn strip(labels: &[Label]) -> Vec<Label> {
    labels.iter().copied().filter(|&l| l != Label::Junk).collect()
}

#[test]
fn ap_depends_only_on_positive_ranks() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..200 {
        let mut labels: Vec<Label> = (0..12).map(|_| if rng.gen_bool(0.4) { Label::Pos } else { Label::Neg }).collect();
        labels[0] = Label::Pos;
        let mut inst = instance(&labels);
        let before = ap(&labels, ApMethod::Trapezoid);
        // Renaming items consistently changes nothing.
        let mut perm: Vec<usize> = (0..labels.len()).collect();
        perm.shuffle(&mut rng);
        let renamed: Vec<String> = perm.iter().map(|p| format!("z{p}")).collect();
        inst.positive = renamed.iter().zip(&labels).filter(|(_, &l)| l == Label::Pos).map(|(n, _)| n.clone()).collect();
        let after =
            average_precision_of(renamed.iter().map(String::as_str), &inst.positive, &inst.junk, ApMethod::Trapezoid)
                .unwrap();
        assert_eq!(before, after);
    }
}

proptest! {
    #[test]
    fn promoting_a_positive_never_lowers_ap(labels in prop::collection::vec(any::<bool>(), 2..20), at in 0usize..19) {
        let mut labels: Vec<Label> = labels.into_iter().map(|b| if b { Label::Pos } else { Label::Neg }).collect();
        let at = at % (labels.len() - 1);
        prop_assume!(labels[at] == Label::Neg && labels[at + 1] == Label::Pos);
        let before = ap(&labels, ApMethod::Trapezoid);
        labels.swap(at, at + 1);
        prop_assert!(ap(&labels, ApMethod::Trapezoid) >= before - 1e-12);
    }

    #[test]
    fn ap_in_unit_interval(labels in prop::collection::vec(0u8..3, 1..40)) {
        let labels: Vec<Label> = labels.into_iter().map(|b| [Label::Pos, Label::Neg, Label::Junk][b as usize]).collect();
        prop_assume!(labels.contains(&Label::Pos));
        for m in [ApMethod::Trapezoid, ApMethod::Benchmark, ApMethod::Plain] {
            let v = ap(&labels, m);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        }
    }

    #[test]
    fn precision_at_k_matches_count(labels in prop::collection::vec(0u8..3, 0..30), k in 1usize..15) {
        let labels: Vec<Label> = labels.into_iter().map(|b| [Label::Pos, Label::Neg, Label::Junk][b as usize]).collect();
        let i = instance(&labels);
        let got = precision_at_k_of(i.names.iter().map(String::as_str), &i.positive, &i.junk, k, PrecisionMode::JunkRemoved).unwrap();
        let hits = strip(&labels).iter().take(k).filter(|&&l| l == Label::Pos).count();
        prop_assert_eq!(got, hits as f64 / k as f64);
        let raw = precision_at_k_of(i.names.iter().map(String::as_str), &i.positive, &i.junk, k, PrecisionMode::Raw).unwrap();
        let raw_hits = labels.iter().take(k).filter(|&&l| l == Label::Pos).count();
        prop_assert_eq!(raw, raw_hits as f64 / k as f64);
    }
}
