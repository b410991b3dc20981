mod common;

use common::*;
use gatedlex::ctc::{ctc_loss, ctc_loss_log, greedy_decode};
use gatedlex::decoder::ProbMatrix;
use gatedlex::numerics::{SeedRng, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;

#[test]
fn matches_path_enumeration_on_every_small_case() {
    criteria::ctc_oracle().unwrap();
}

#[test]
fn probability_matrix_and_log_entry_points_agree() {
    let mut rng = SeedRng::seed_from_u64(3);
    let probs = random_probs(&mut rng, 5, 4);
    let m = ProbMatrix::<f64>::new(Tensor::from_f64(&[5, 4], &probs).unwrap()).unwrap();
    let logs: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
    let a = ctc_loss(&m, &[0, 2]).unwrap();
    let b = ctc_loss_log(&logs, 5, 4, 3, &[0, 2]).unwrap();
    assert!((a.loss - b.loss).abs() < 1e-12);
}

proptest! {
    #[test]
    fn labelling_mass_sums_to_one(seed in 0u64..1000, frames in 1usize..5, n in 1usize..4) {
        let mut rng = SeedRng::seed_from_u64(seed);
        let probs = random_probs(&mut rng, frames, n + 1);
        let logs: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
        let total: f64 = all_sequences(n, frames)
            .iter()
            .filter_map(|y| ctc_loss_log(&logs, frames, n + 1, n, y).ok())
            .map(|o| (-o.loss).exp())
            .sum();
        prop_assert!((total - 1.0).abs() < 1e-9, "total {}", total);
    }

    #[test]
    fn gradient_rows_sum_to_zero(seed in 0u64..1000, frames in 2usize..7) {
        let mut rng = SeedRng::seed_from_u64(seed);
        let probs = random_probs(&mut rng, frames, 3);
        let logs: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
        let out = ctc_loss_log(&logs, frames, 3, 2, &[0, 1]).unwrap();
        for row in out.grad_logits.chunks(3) {
            prop_assert!(row.iter().sum::<f64>().abs() < 1e-9);
        }
    }

    #[test]
    fn greedy_output_is_a_collapsed_argmax_path(seed in 0u64..1000, frames in 1usize..10) {
        let mut rng = SeedRng::seed_from_u64(seed);
        let probs = random_probs(&mut rng, frames, 4);
        let m = ProbMatrix::<f64>::new(Tensor::from_f64(&[frames, 4], &probs).unwrap()).unwrap();
        let path: Vec<usize> = probs
            .chunks(4)
            .map(|r| (0..4).fold(0, |b, k| if r[k] > r[b] { k } else { b }))
            .collect();
        prop_assert_eq!(greedy_decode(&m), collapse(&path, 3));
    }
}
