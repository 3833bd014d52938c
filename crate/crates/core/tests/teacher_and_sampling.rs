use std::sync::Arc;

use logitgate::harness::{generate_synthetic, SyntheticSpec};
use logitgate::oracle::{make_synthetic_teacher, TeacherSpec};
use logitgate::selection::random_select;
use logitgate::{ApiLedger, CachedOracle};

fn small() -> SyntheticSpec {
    SyntheticSpec {
        train_size: 300,
        test_size: 100,
        dim: 6,
        ..SyntheticSpec::default()
    }
}

#[test]
fn oracle_answers_equal_direct_evaluation() {
    let (train, test) = generate_synthetic(&small(), 3).unwrap();
    let teacher = Arc::new(make_synthetic_teacher(&train, &TeacherSpec::default()).unwrap());
    let oracle = CachedOracle::new(teacher.clone());
    let ledger = ApiLedger::new(test.len());
    for ex in &test {
        let via_oracle = oracle.query(ex, &ledger).unwrap();
        let direct = teacher.evaluate_direct(&ex.embedding).unwrap();
        assert_eq!(via_oracle, direct);
    }
    assert_eq!(ledger.unique_count(), test.len());
}

#[test]
fn teacher_is_deterministic_and_learns() {
    let (train, _) = generate_synthetic(&small(), 4).unwrap();
    let spec = TeacherSpec::default();
    let a = make_synthetic_teacher(&train, &spec).unwrap();
    let b = make_synthetic_teacher(&train, &spec).unwrap();
    assert_eq!(a.fingerprint(), b.fingerprint());
    assert!(a.accuracy() > 0.5, "teacher accuracy {}", a.accuracy());
}

#[test]
fn random_select_is_uniform() {
    let (train, _) = generate_synthetic(
        &SyntheticSpec {
            train_size: 50,
            test_size: 10,
            ..SyntheticSpec::default()
        },
        0,
    )
    .unwrap();
    let (n, count, trials) = (train.len(), 5, 10_000u64);
    let mut hits = vec![0u32; n];
    for seed in 0..trials {
        let picked = random_select(&train, count, seed).unwrap().indices();
        let mut dedup = picked.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), count);
        picked.iter().for_each(|&i| hits[i] += 1);
    }
    let p = count as f64 / n as f64;
    let expected = trials as f64 * p;
    let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
    for (i, &h) in hits.iter().enumerate() {
        assert!(
            (h as f64 - expected).abs() <= 3.0 * sigma,
            "index {i}: {h} vs {expected} ± {}",
            3.0 * sigma
        );
    }
}
