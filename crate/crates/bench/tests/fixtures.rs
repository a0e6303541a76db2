use emma_bench::{corpus, objective_fixture, probabilities};

#[test]
fn fixtures_are_seeded() {
    assert_eq!(probabilities(4, 5, 9), probabilities(4, 5, 9));
    let p = probabilities(4, 5, 9);
    assert!(p.as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
    let (model, _, targets) = objective_fixture(8, 6, 4, 8);
    assert_eq!(model.heads.len(), 2);
    assert_eq!(targets.len(), 4);
    assert_eq!(corpus(3, 7).len(), 3);
}
