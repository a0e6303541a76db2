//! Monotonic alignment estimation.
//!
//! `alpha[i][j]` is the probability that the policy sits on source position
//! `j` when it writes target `i`. The recursive form is the literal dynamic
//! program and serves as the oracle; the parallel form builds a transition
//! matrix per target step from cumulative products and never divides.

use super::params::{EncDecStates, PolicyHeadParams};
use crate::error::{Error, Result};
use crate::numerics::{Axis, Matrix};

/// `p[i][j] = sigmoid((ffn_s(s_i) . ffn_h(h_j) + b) / temperature)`.
pub fn stepwise_probability(params: &PolicyHeadParams, states: &EncDecStates) -> Result<Matrix> {
    params.validate()?;
    if params.ffn_s.input_dim() != states.model_dim() || params.ffn_h.input_dim() != states.model_dim() {
        return Err(Error::Shape {
            op: "stepwise_probability",
            left: (params.ffn_s.input_dim(), params.ffn_h.input_dim()),
            right: states.h.shape(),
        });
    }
    let target_proj = params.ffn_s.forward(&states.s)?;
    let source_proj = params.ffn_h.forward(&states.h)?;
    let logits = target_proj.matmul(&source_proj.transpose())?;
    Ok(logits
        .add_scalar(params.bias)
        .scale(1.0 / params.temperature)
        .sigmoid())
}

fn ensure_probabilities(p: &Matrix) -> Result<()> {
    if let Some(v) = p.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::domain(format!("stepwise probability {v} outside [0, 1]")));
    }
    Ok(())
}

/// Sets the last column to 1 so every row of the alignment sums to one.
pub fn with_last_column_forced(p: &Matrix) -> Matrix {
    let last = p.cols().saturating_sub(1);
    Matrix::from_fn(p.rows(), p.cols(), |r, c| if c == last { 1.0 } else { p.get(r, c) })
}

/// The recursion `alpha[i][j] = p[i][j] * sum_{k<=j} alpha[i-1][k] * prod_{k<=l<j} (1 - p[i][l])`
/// with `alpha[0] = (1, 0, .., 0)`, evaluated literally.
pub fn alignment_recursive(p: &Matrix) -> Result<Matrix> {
    ensure_probabilities(p)?;
    let (tgt, src) = p.shape();
    let mut prev = vec![0.0; src];
    if src > 0 {
        prev[0] = 1.0;
    }
    let mut data = Vec::with_capacity(tgt * src);
    for i in 0..tgt {
        let row = p.row(i);
        let mut cur = vec![0.0; src];
        for j in 0..src {
            let mut total = 0.0;
            let mut stay = 1.0;
            for k in (0..=j).rev() {
                // stay = prod_{l=k}^{j-1} (1 - p[i][l])
                total += prev[k] * stay;
                if k > 0 {
                    stay *= 1.0 - row[k - 1];
                }
            }
            cur[j] = row[j] * total;
        }
        data.extend_from_slice(&cur);
        prev = cur;
    }
    Matrix::new(tgt, src, data)
}

/// `triu_1(J_{n x 1} . roll_1(p_row))`: entry `(m, n)` is `p[n-1]` above the
/// diagonal and zero elsewhere.
pub fn extended_probability(p_row: &[f64]) -> Result<Matrix> {
    if p_row.is_empty() {
        return Err(Error::argument("empty probability row"));
    }
    let row = Matrix::row_vector(p_row);
    ensure_probabilities(&row)?;
    let ones = Matrix::ones(p_row.len(), 1);
    Ok(Matrix::outer(&ones, &row.roll(1))?.triu(1))
}

/// `T[m][n] = prod_{l=m}^{n-1} (1 - p[l])` on and above the diagonal.
pub fn transition_matrix(p_row: &[f64]) -> Result<Matrix> {
    let ext = extended_probability(p_row)?;
    Ok(ext.one_minus().cumprod(Axis::AlongRows).triu(0))
}

/// Closed-form alignment: `alpha[i] = p[i] ⊙ (alpha[i-1] . T(i))`.
pub fn alignment_parallel(p: &Matrix) -> Result<Matrix> {
    ensure_probabilities(p)?;
    let (tgt, src) = p.shape();
    if src == 0 {
        return Ok(p.clone());
    }
    let mut prev = Matrix::from_fn(1, src, |_, c| if c == 0 { 1.0 } else { 0.0 });
    let mut rows = Vec::with_capacity(tgt);
    for i in 0..tgt {
        let p_row = p.select_row(i)?;
        let t = transition_matrix(p_row.as_slice())?;
        let cur = p_row.hadamard(&prev.matmul(&t)?)?;
        rows.push(cur.clone());
        prev = cur;
    }
    Matrix::vstack(&rows.iter().collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emma::params::{FeedForward, PolicyHeadParams};
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn zero_head(d: usize, bias: f64, temperature: f64) -> PolicyHeadParams {
        PolicyHeadParams {
            ffn_s: FeedForward::zeros(d, d, d, 2).unwrap(),
            ffn_h: FeedForward::zeros(d, d, d, 2).unwrap(),
            bias,
            temperature,
        }
    }

    fn states(d: usize) -> EncDecStates {
        EncDecStates::new(
            Matrix::from_fn(3, d, |r, c| (r + c) as f64),
            Matrix::from_fn(2, d, |r, c| r as f64 - c as f64),
            Matrix::zeros(3, 1),
        )
        .unwrap()
    }

    #[test]
    fn stepwise_probability_closed_forms() {
        let p = stepwise_probability(&zero_head(4, 0.0, 1.0), &states(4)).unwrap();
        assert_eq!(p.shape(), (2, 3));
        assert!(p.as_slice().iter().all(|&v| v == 0.5));

        let p = stepwise_probability(&zero_head(4, -4.0, 1.0), &states(4)).unwrap();
        let expected = 1.0 / (1.0 + 4f64.exp());
        assert!(p.as_slice().iter().all(|&v| (v - expected).abs() < 1e-15));
        assert!((expected - 0.017986).abs() < 1e-6);

        let p = stepwise_probability(&zero_head(4, -4.0, 0.5), &states(4)).unwrap();
        assert!(p.as_slice().iter().all(|&v| (v - 3.3535e-4).abs() < 1e-8));
    }

    #[test]
    fn stepwise_probability_rejects_bad_temperature_and_dims() {
        assert!(matches!(
            stepwise_probability(&zero_head(4, 0.0, 0.0), &states(4)),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            stepwise_probability(&zero_head(3, 0.0, 1.0), &states(4)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn recursive_examples() {
        let ones = Matrix::ones(3, 4);
        let a = alignment_recursive(&ones).unwrap();
        for i in 0..3 {
            assert_eq!(a.row(i), &[1.0, 0.0, 0.0, 0.0]);
        }
        assert_eq!(
            alignment_recursive(&m(&[&[0.5, 0.5]])).unwrap(),
            m(&[&[0.5, 0.25]])
        );
        assert_eq!(
            alignment_recursive(&Matrix::ones(2, 2).scale(0.5)).unwrap(),
            m(&[&[0.5, 0.25], &[0.25, 0.25]])
        );
        assert!(matches!(
            alignment_recursive(&m(&[&[1.5]])),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn extended_probability_examples() {
        let (a, b, c) = (0.1, 0.2, 0.3);
        assert_eq!(
            extended_probability(&[a, b, c]).unwrap(),
            m(&[&[0.0, a, b], &[0.0, 0.0, b], &[0.0, 0.0, 0.0]])
        );
        assert_eq!(
            extended_probability(&[0.5, 0.5]).unwrap(),
            m(&[&[0.0, 0.5], &[0.0, 0.0]])
        );
        assert_eq!(extended_probability(&[0.0; 4]).unwrap(), Matrix::zeros(4, 4));
        assert!(matches!(extended_probability(&[]), Err(Error::Argument(_))));
    }

    #[test]
    fn transition_matrix_examples() {
        assert_eq!(
            transition_matrix(&[0.5, 0.5]).unwrap(),
            m(&[&[1.0, 0.5], &[0.0, 1.0]])
        );
        assert_eq!(transition_matrix(&[0.0; 3]).unwrap(), Matrix::ones(3, 3).triu(0));
        assert_eq!(transition_matrix(&[1.0; 3]).unwrap(), Matrix::identity(3));
    }

    #[test]
    fn parallel_examples() {
        assert_eq!(
            alignment_parallel(&m(&[&[0.5, 0.5]])).unwrap(),
            m(&[&[0.5, 0.25]])
        );
        let a = alignment_parallel(&Matrix::ones(4, 5)).unwrap();
        for i in 0..4 {
            assert_eq!(a.row(i), &[1.0, 0.0, 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn forcing_last_column_gives_unit_mass() {
        let p = Matrix::from_fn(3, 5, |r, c| 0.1 + 0.05 * (r + c) as f64);
        let a = alignment_parallel(&with_last_column_forced(&p)).unwrap();
        for s in a.row_sums().as_slice() {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    fn arb_probs() -> impl Strategy<Value = Matrix> {
        (1usize..8, 1usize..12).prop_flat_map(|(r, c)| {
            proptest::collection::vec(0.01f64..0.99, r * c)
                .prop_map(move |d| Matrix::new(r, c, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn parallel_matches_recursive(p in arb_probs()) {
            let a = alignment_parallel(&p).unwrap();
            let b = alignment_recursive(&p).unwrap();
            prop_assert!(a.max_abs_diff(&b).unwrap() <= 1e-10);
            for s in a.row_sums().as_slice() {
                prop_assert!(*s <= 1.0 + 1e-12);
            }
        }

        #[test]
        fn raising_a_single_row_never_lowers_mass(p in arb_probs(), j in 0usize..12, bump in 0.0f64..0.5) {
            let row = p.select_row(0).unwrap();
            let j = j % row.cols();
            let mut raised = row.as_slice().to_vec();
            raised[j] = (raised[j] + bump).min(1.0);
            let before = alignment_parallel(&row).unwrap().sum();
            let after = alignment_parallel(&Matrix::row_vector(&raised)).unwrap().sum();
            prop_assert!(after >= before - 1e-15);
        }
    }
}
