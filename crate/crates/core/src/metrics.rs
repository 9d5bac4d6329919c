//! MAPE and accuracy on original-unit test predictions.

use crate::data::{MinMaxScaler, WindowedDataset};
use crate::models::{ModelError, ModelState};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("prediction and actual lengths differ ({pred} vs {actual})")]
    LengthMismatch { pred: usize, actual: usize },
    #[error("no values to score")]
    Empty,
    #[error("actual value is zero at indices {0:?}")]
    ZeroActual(Vec<usize>),
    #[error("every actual value fell below epsilon {0}")]
    AllSkipped(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// How zero actuals are handled.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ZeroPolicy {
    #[default]
    Reject,
    /// Drop terms with `|o_i| < ε` and report how many were dropped.
    SkipBelow(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mape {
    pub percent: f64,
    pub skipped: usize,
}

/// `(1/n) Σ |p_i − o_i| / |o_i| × 100`
pub fn mape(pred: &[f64], actual: &[f64], policy: ZeroPolicy) -> Result<Mape, MetricsError> {
    if pred.len() != actual.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            actual: actual.len(),
        });
    }
    if actual.is_empty() {
        return Err(MetricsError::Empty);
    }
    if policy == ZeroPolicy::Reject {
        let zeros: Vec<usize> = actual
            .iter()
            .enumerate()
            .filter(|(_, &o)| o == 0.0)
            .map(|(i, _)| i)
            .collect();
        if !zeros.is_empty() {
            return Err(MetricsError::ZeroActual(zeros));
        }
    }
    let eps = match policy {
        ZeroPolicy::Reject => 0.0,
        ZeroPolicy::SkipBelow(e) => e,
    };
    let mut total = 0.0;
    let mut used = 0usize;
    for (&p, &o) in pred.iter().zip(actual) {
        if policy != ZeroPolicy::Reject && o.abs() < eps {
            continue;
        }
        total += ((p - o) / o).abs();
        used += 1;
    }
    if used == 0 {
        return Err(MetricsError::AllSkipped(eps));
    }
    Ok(Mape {
        percent: total / used as f64 * 100.0,
        skipped: actual.len() - used,
    })
}

/// `100 − MAPE`, unclamped.
pub fn accuracy(mape_percent: f64) -> f64 {
    100.0 - mape_percent
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub mape_percent: f64,
    pub accuracy_percent: f64,
    pub n_test: usize,
    pub skipped: usize,
}

impl EvalResult {
    pub fn from_mape(m: Mape, n_test: usize) -> Self {
        Self {
            mape_percent: m.percent,
            accuracy_percent: accuracy(m.percent),
            n_test,
            skipped: m.skipped,
        }
    }
}

/// Predicts every test row, inverse-scales, and scores in original units.
pub fn evaluate(
    model: &ModelState,
    test: &WindowedDataset,
    scaler: &MinMaxScaler,
    policy: ZeroPolicy,
) -> Result<EvalResult, MetricsError> {
    if test.rows() == 0 {
        return Err(MetricsError::Empty);
    }
    let pred: Vec<f64> = model
        .predict_batch(&test.x)?
        .into_iter()
        .map(|s| scaler.invert(s))
        .collect();
    let actual: Vec<f64> = test.targets().iter().map(|&s| scaler.invert(s)).collect();
    let m = mape(&pred, &actual, policy)?;
    Ok(EvalResult::from_mape(m, test.rows()))
}

/// One line of `raw_runs.csv`. Timing lives elsewhere so that this file is
/// a pure function of the seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub dataset: String,
    pub model: String,
    pub mode: String,
    pub epochs: usize,
    pub run: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub mape: f64,
    pub final_loss: f64,
}

impl RunRecord {
    pub const HEADER: &'static str = "dataset,model,mode,epochs,run,seed,accuracy,mape,final_loss";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.dataset,
            self.model,
            self.mode,
            self.epochs,
            self.run,
            self.seed,
            self.accuracy,
            self.mape,
            self.final_loss
        )
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::make_windows;
    use crate::models::{init_model, ArchKind, ModelSpec};

    fn loop_mape(p: &[f64], o: &[f64]) -> f64 {
        let mut s = 0.0;
        let mut i = 0;
        while i < p.len() {
            let d = p[i] - o[i];
            s += if d < 0.0 { -d } else { d } / if o[i] < 0.0 { -o[i] } else { o[i] };
            i += 1;
        }
        s * 100.0 / p.len() as f64
    }

    #[test]
    fn mape_examples() {
        assert_eq!(mape(&[3.0, 4.0], &[3.0, 4.0], ZeroPolicy::Reject).unwrap().percent, 0.0);
        assert_eq!(mape(&[110.0], &[100.0], ZeroPolicy::Reject).unwrap().percent, 10.0);
        assert_eq!(
            mape(&[90.0, 110.0], &[100.0, 100.0], ZeroPolicy::Reject).unwrap().percent,
            10.0
        );
    }

    #[test]
    fn zero_actuals_are_rejected_or_skipped() {
        let err = mape(&[1.0, 2.0, 3.0], &[0.0, 2.0, 0.0], ZeroPolicy::Reject).unwrap_err();
        assert!(matches!(err, MetricsError::ZeroActual(ref idx) if idx == &[0, 2]));
        let m = mape(&[1.0, 2.2, 3.0], &[0.0, 2.0, 0.0], ZeroPolicy::SkipBelow(1e-9)).unwrap();
        assert_eq!(m.skipped, 2);
        assert!((m.percent - 10.0).abs() < 1e-12);
        assert!(matches!(
            mape(&[1.0], &[0.0], ZeroPolicy::SkipBelow(1e-9)),
            Err(MetricsError::AllSkipped(_))
        ));
        assert!(matches!(mape(&[], &[], ZeroPolicy::Reject), Err(MetricsError::Empty)));
        assert!(matches!(
            mape(&[1.0], &[1.0, 2.0], ZeroPolicy::Reject),
            Err(MetricsError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(3.94), 96.06);
        assert_eq!(accuracy(0.0), 100.0);
        assert_eq!(accuracy(120.0), -20.0);
    }

    #[test]
    fn mape_matches_loop_oracle_on_random_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..100 {
            let n = rng.random_range(1..50);
            let o: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..500.0)).collect();
            let p: Vec<f64> = o.iter().map(|v| v * rng.random_range(0.5..1.5)).collect();
            let got = mape(&p, &o, ZeroPolicy::Reject).unwrap().percent;
            assert!((got - loop_mape(&p, &o)).abs() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn mape_is_scale_invariant(
            o in proptest::collection::vec(0.1f64..1e3, 1..40),
            ratio in 0.2f64..3.0,
            c in 1e-3f64..1e3,
        ) {
            let p: Vec<f64> = o.iter().enumerate().map(|(i, v)| v * ratio + i as f64 * 0.1).collect();
            let base = mape(&p, &o, ZeroPolicy::Reject).unwrap().percent;
            let cp: Vec<f64> = p.iter().map(|v| v * c).collect();
            let co: Vec<f64> = o.iter().map(|v| v * c).collect();
            let scaled = mape(&cp, &co, ZeroPolicy::Reject).unwrap().percent;
            prop_assert!((base - scaled).abs() <= 1e-12 * base.max(1.0));
        }
    }

    fn constant_model(bias: f64) -> ModelState {
        let mut m = init_model(ModelSpec::new(ArchKind::Rnn, 3, 2).unwrap(), 0).unwrap();
        for p in m.params.iter_mut() {
            p.value.fill(0.0);
        }
        m.params.get_mut("head.b").unwrap().value.fill(bias);
        m
    }

    #[test]
    fn evaluate_scores_in_original_units() {
        let ds = make_windows(&[5.0, 5.0, 5.0, 10.0, 10.0, 10.0], 3).unwrap();
        let scaler = MinMaxScaler::fit(&[0.0, 20.0]).unwrap();
        let scaled = ds.map_values(|v| scaler.apply(v));
        // Constant prediction of 10.5 against actuals 10, 10, 10 → 5%.
        let model = constant_model(scaler.apply(10.5));
        let r = evaluate(&model, &scaled, &scaler, ZeroPolicy::Reject).unwrap();
        assert_eq!(r.n_test, 3);
        assert!((r.mape_percent - 5.0).abs() < 1e-12);
        assert_eq!(r.accuracy_percent, 100.0 - r.mape_percent);

        let perfect = constant_model(scaler.apply(10.0));
        let r = evaluate(&perfect, &scaled, &scaler, ZeroPolicy::Reject).unwrap();
        assert_eq!(r.accuracy_percent, 100.0);

        // Scoring the scaled values directly would give a different number.
        let scaled_space = evaluate(&model, &scaled, &MinMaxScaler::identity(), ZeroPolicy::Reject)
            .unwrap();
        assert!((scaled_space.mape_percent - r.mape_percent).abs() > 1e-6);
        let raw = evaluate(
            &constant_model(10.5),
            &ds,
            &MinMaxScaler::identity(),
            ZeroPolicy::Reject,
        )
        .unwrap();
        assert!((raw.mape_percent - 5.0).abs() < 1e-12);
    }

    #[test]
    fn run_record_row_format() {
        let r = RunRecord {
            dataset: "B".into(),
            model: "LSTM_EN_DE".into(),
            mode: "transfer".into(),
            epochs: 50,
            run: 2,
            seed: 77,
            accuracy: 95.5,
            mape: 4.5,
            final_loss: 0.25,
        };
        assert_eq!(r.csv_row(), "B,LSTM_EN_DE,transfer,50,2,77,95.5,4.5,0.25");
        assert_eq!(RunRecord::HEADER.split(',').count(), 9);
    }
}
