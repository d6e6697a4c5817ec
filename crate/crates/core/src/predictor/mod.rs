//! One-step-ahead ILM forecasting.

mod adam;
mod lstm;
mod sine;
mod train;

pub use adam::{Adam, AdamConfig};
pub use lstm::{Centering, LstmModel, Normalization};
pub use sine::{fft_fit, fft_fit_values, sine_predict, FftPredictor, SineFit, FFT_PAD};
pub use train::{lstm_train, TrainConfig, TrainReport};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// History length fed to every predictor.
pub const WINDOW_LEN: usize = 20;

/// The last [`WINDOW_LEN`] ILM depths (mm) and the time of the newest one.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceWindow {
    values: [f64; WINDOW_LEN],
    t_last: f64,
}

impl SequenceWindow {
    pub fn new(values: &[f64], t_last: f64) -> Result<Self> {
        if values.len() != WINDOW_LEN {
            return Err(Error::InsufficientData {
                needed: WINDOW_LEN,
                got: values.len(),
            });
        }
        ensure_finite("sequence window", values)?;
        ensure_finite("sequence window time", &[t_last])?;
        let mut v = [0.0; WINDOW_LEN];
        v.copy_from_slice(values);
        Ok(Self { values: v, t_last })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn t_last(&self) -> f64 {
        self.t_last
    }
}

pub trait Predictor: Send + Sync {
    fn name(&self) -> &'static str;

    /// Predicted value one sample after the window.
    fn predict(&self, window: &SequenceWindow) -> Result<f64>;
}

/// Repeats the newest sample.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HoldPredictor;

impl Predictor for HoldPredictor {
    fn name(&self) -> &'static str {
        "hold"
    }

    fn predict(&self, window: &SequenceWindow) -> Result<f64> {
        Ok(window.values[WINDOW_LEN - 1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Lstm,
    Fft,
    Hold,
}

impl PredictorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PredictorKind::Lstm => "lstm",
            PredictorKind::Fft => "fft",
            PredictorKind::Hold => "hold",
        }
    }
}

impl std::str::FromStr for PredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(PredictorKind::Lstm),
            "fft" => Ok(PredictorKind::Fft),
            "hold" => Ok(PredictorKind::Hold),
            other => Err(crate::error::invalid("predictor", format!("unknown model '{other}'"))),
        }
    }
}

/// Predictions for samples `WINDOW_LEN..` of a uniformly sampled series:
/// element `k` forecasts `values[k + WINDOW_LEN]`.
pub fn predict_series(p: &dyn Predictor, times: &[f64], values: &[f64]) -> Result<Vec<f64>> {
    if times.len() != values.len() {
        return Err(Error::LengthMismatch {
            left: times.len(),
            right: values.len(),
        });
    }
    if values.len() <= WINDOW_LEN {
        return Err(Error::InsufficientData {
            needed: WINDOW_LEN + 1,
            got: values.len(),
        });
    }
    (WINDOW_LEN..values.len())
        .map(|k| p.predict(&SequenceWindow::new(&values[k - WINDOW_LEN..k], times[k - 1])?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_length_is_enforced() {
        assert!(SequenceWindow::new(&[0.0; 19], 1.0).is_err());
        assert!(SequenceWindow::new(&[0.0; 21], 1.0).is_err());
        let mut v = [0.0; 20];
        v[0] = f64::NAN;
        assert!(SequenceWindow::new(&v, 1.0).is_err());
        assert!(SequenceWindow::new(&[0.0; 20], 1.0).is_ok());
    }

    #[test]
    fn hold_series() {
        let v: Vec<f64> = (0..25).map(|i| i as f64).collect();
        let t: Vec<f64> = (0..25).map(|i| i as f64 * 0.25).collect();
        assert_eq!(predict_series(&HoldPredictor, &t, &v).unwrap(), vec![19.0, 20.0, 21.0, 22.0, 23.0]);
    }

    #[test]
    fn kind_parsing() {
        for k in [PredictorKind::Lstm, PredictorKind::Fft, PredictorKind::Hold] {
            assert_eq!(k.as_str().parse::<PredictorKind>().unwrap(), k);
        }
        assert!("arima".parse::<PredictorKind>().is_err());
    }
}
