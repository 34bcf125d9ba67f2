//! Small dense networks in f64 with hand-written backprop, AdamW, and
//! finite-difference gradient checking.

mod checkpoint;
mod gradcheck;
mod mlp;
mod optim;

pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, max_relative_error, FULL_CHECK_LIMIT};
pub use mlp::{cross_entropy_grad, log_softmax, softmax, Activation, Mlp, Trace};
pub use optim::AdamW;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum NeuralError {
    #[error("invalid layer sizes {0:?}: need at least two positive sizes")]
    InvalidSizes(Vec<usize>),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("finite-difference step {0} outside (0, 1e-3]")]
    InvalidStep(f64),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_final_layer_gives_zero_logits() {
        let m = Mlp::new(&[4, 8, 2], Activation::Tanh, 3).unwrap();
        assert_eq!(m.forward(&[0.3, -1.0, 2.0, 0.5]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(m, Mlp::new(&[4, 8, 2], Activation::Tanh, 3).unwrap());
        assert_ne!(m, Mlp::new(&[4, 8, 2], Activation::Tanh, 4).unwrap());
    }

    #[test]
    fn rejects_bad_sizes_and_inputs() {
        assert!(matches!(Mlp::new(&[4], Activation::Tanh, 0), Err(NeuralError::InvalidSizes(_))));
        assert!(matches!(Mlp::new(&[4, 0, 2], Activation::Tanh, 0), Err(NeuralError::InvalidSizes(_))));
        let m = Mlp::new(&[3, 2], Activation::Relu, 0).unwrap();
        assert_eq!(m.forward(&[1.0]), Err(NeuralError::DimMismatch { expected: 3, got: 1 }));
    }

    #[test]
    fn equal_logits_cost_ln2() {
        let m = Mlp::new(&[2, 4, 2], Activation::Tanh, 0).unwrap();
        let (loss, _) = cross_entropy_grad(&m, &[(vec![1.0, 0.0], 1)]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(cross_entropy_grad(&m, &[]), Err(NeuralError::EmptyBatch));
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[30.0, 29.0, -5.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|x| *x > 0.0));
    }

    #[test]
    fn adamw_first_step_and_decay() {
        let mut p = vec![1.0];
        let mut opt = AdamW::new(1, 0.1, 0.0);
        opt.step(&mut p, &[1.0]).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert_eq!(opt.step, 1);

        let mut p = vec![2.0, -4.0];
        let mut opt = AdamW::new(2, 0.1, 0.5);
        opt.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![2.0 * 0.95, -4.0 * 0.95]);

        let mut p = vec![2.0];
        let mut opt = AdamW::new(1, 0.1, 0.0);
        opt.step(&mut p, &[0.0]).unwrap();
        assert_eq!(p, vec![2.0]);
        assert!(matches!(opt.step(&mut p, &[f64::NAN]), Err(NeuralError::NonFinite(_))));
    }

    #[test]
    fn grad_check_rejects_bad_step() {
        let m = Mlp::new(&[2, 2], Activation::Tanh, 0).unwrap();
        let batch = [(vec![1.0, 2.0], 0)];
        assert_eq!(grad_check(&m, &batch, 0.0), Err(NeuralError::InvalidStep(0.0)));
        assert_eq!(grad_check(&m, &batch, 1e-2), Err(NeuralError::InvalidStep(1e-2)));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut m = Mlp::new(&[3, 5, 2], Activation::Relu, 9).unwrap();
        m.params_mut()[0] = 0.1 + 0.2;
        let ck = Checkpoint::new(m).with_meta("featurizer", "feat-v1");
        let back = Checkpoint::from_text(&ck.to_text()).unwrap();
        assert_eq!(back, ck);
        assert!(back.mlp.params().iter().zip(ck.mlp.params()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(Checkpoint::from_text("garbage").is_err());
    }
}
