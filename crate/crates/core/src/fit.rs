//! Least-squares decay fits of energy traces.
//!
//! * exponential: `log E = c − k t`, reported rate `k`;
//! * polynomial: `log E = c + s log(1 + t)`, reported exponent `s`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::solver::SimulationTrace;

/// Fitted rates below this count as no decay.
pub const NO_DECAY_THRESHOLD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitModel {
    Exponential,
    Polynomial,
}

impl FitModel {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Exponential => "exponential",
            Self::Polynomial => "polynomial",
        }
    }
}

impl fmt::Display for FitModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FitModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exponential" | "exp" => Ok(Self::Exponential),
            "polynomial" | "poly" => Ok(Self::Polynomial),
            other => Err(Error::InvalidParameter(format!(
                "unknown fit model {other:?} (expected exponential or polynomial)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub model: FitModel,
    /// Exponential: the rate `k`. Polynomial: the exponent `s`.
    pub parameter: f64,
    pub slope: f64,
    pub intercept: f64,
    pub window: (f64, f64),
    pub r_squared: f64,
    pub samples: usize,
    /// The fitted slope shows no decay.
    pub no_decay: bool,
}

impl FitResult {
    /// The decay rate: `k` for exponential fits, `−s` for polynomial ones.
    pub fn decay_rate(&self) -> f64 {
        -self.slope
    }

    /// `key,value` rows.
    pub fn to_csv(&self) -> String {
        format!(
            "key,value\nmodel,{}\nparameter,{:.16e}\nslope,{:.16e}\nintercept,{:.16e}\nwindow_start,{:.16e}\nwindow_end,{:.16e}\nr_squared,{:.16e}\nsamples,{}\nno_decay,{}\n",
            self.model,
            self.parameter,
            self.slope,
            self.intercept,
            self.window.0,
            self.window.1,
            self.r_squared,
            self.samples,
            self.no_decay
        )
    }

    pub fn summary(&self) -> String {
        let what = match self.model {
            FitModel::Exponential => "rate",
            FitModel::Polynomial => "exponent",
        };
        format!(
            "{} fit on [{}, {}] ({} samples): {what} = {:.10e}, R^2 = {:.12}{}",
            self.model,
            self.window.0,
            self.window.1,
            self.samples,
            self.parameter,
            self.r_squared,
            if self.no_decay { " (no decay)" } else { "" }
        )
    }
}

/// Parses `a:b` into a window.
pub fn parse_window(text: &str) -> Result<(f64, f64)> {
    let bad = || Error::InvalidParameter(format!("window must look like a:b, got {text:?}"));
    let (a, b) = text.split_once(':').ok_or_else(bad)?;
    let a: f64 = a.trim().parse().map_err(|_| bad())?;
    let b: f64 = b.trim().parse().map_err(|_| bad())?;
    if !(a < b) {
        return Err(Error::InvalidParameter(format!("window start {a} must be below its end {b}")));
    }
    Ok((a, b))
}

/// Fits samples `(t, E)` with `t ∈ window` (inclusive).
pub fn fit_samples(times: &[f64], energies: &[f64], model: FitModel, window: (f64, f64)) -> Result<FitResult> {
    if times.len() != energies.len() {
        return Err(Error::LengthMismatch {
            expected: times.len(),
            got: energies.len(),
        });
    }
    let (a, b) = window;
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidParameter(format!("invalid fit window [{a}, {b}]")));
    }
    let (first, last) = match (times.first(), times.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return Err(Error::InvalidParameter("empty trace".into())),
    };
    let slack = 1e-9 * (b - a).max(last.abs());
    if a < first - slack || b > last + slack {
        return Err(Error::InvalidParameter(format!(
            "fit window [{a}, {b}] outside the trace range [{first}, {last}]"
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&t, &e) in times.iter().zip(energies) {
        if t < a - slack || t > b + slack {
            continue;
        }
        if !(e > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "energy {e} at t = {t} is not positive; cannot fit a logarithm"
            )));
        }
        xs.push(match model {
            FitModel::Exponential => t,
            FitModel::Polynomial => t.ln_1p(),
        });
        ys.push(e.ln());
    }
    if xs.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "fit window [{a}, {b}] holds {} samples; need at least 2",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let syy: f64 = ys.iter().map(|y| (y - ym).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    let parameter = match model {
        FitModel::Exponential => -slope,
        FitModel::Polynomial => slope,
    };
    Ok(FitResult {
        model,
        parameter,
        slope,
        intercept,
        window,
        r_squared,
        samples: xs.len(),
        no_decay: -slope <= NO_DECAY_THRESHOLD,
    })
}

pub fn fit_decay(trace: &SimulationTrace, model: FitModel, window: (f64, f64)) -> Result<FitResult> {
    fit_samples(&trace.times, &trace.energies, model, window)
}

/// `[horizon/3, horizon]`.
pub fn default_window(horizon: f64) -> (f64, f64) {
    (horizon / 3.0, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..=n).map(|k| a + (b - a) * k as f64 / n as f64).collect()
    }

    #[test]
    fn exact_exponential() {
        let t = grid(0.0, 10.0, 200);
        let e: Vec<f64> = t.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
        let f = fit_samples(&t, &e, FitModel::Exponential, (0.0, 10.0)).unwrap();
        assert!((f.parameter - 0.7).abs() < 1e-10);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!(!f.no_decay);
        assert_eq!(f.samples, 201);
    }

    #[test]
    fn inverse_linear_has_exponent_minus_one() {
        let t = grid(0.0, 100.0, 1000);
        let e: Vec<f64> = t.iter().map(|t| 1.0 / (1.0 + t)).collect();
        let f = fit_samples(&t, &e, FitModel::Polynomial, (10.0, 100.0)).unwrap();
        assert!((f.parameter + 1.0).abs() < 1e-6);
        assert!((f.decay_rate() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constant_trace_is_flagged() {
        let t = grid(0.0, 5.0, 50);
        let e = vec![2.0; t.len()];
        let f = fit_samples(&t, &e, FitModel::Exponential, (1.0, 5.0)).unwrap();
        assert!(f.parameter.abs() < 1e-15);
        assert!(f.no_decay);
        assert!(f.summary().contains("no decay"));
        assert!(f.to_csv().contains("\nno_decay,true\n"));
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let t = grid(0.0, 5.0, 50);
        let mut e = vec![1.0; t.len()];
        assert!(fit_samples(&t, &e, FitModel::Exponential, (1.0, 6.0)).is_err());
        assert!(fit_samples(&t, &e, FitModel::Exponential, (3.0, 2.0)).is_err());
        assert!(fit_samples(&t, &e, FitModel::Exponential, (1.0, 1.05)).is_err());
        e[30] = 0.0;
        assert!(fit_samples(&t, &e, FitModel::Exponential, (1.0, 5.0)).is_err());
        assert!(fit_samples(&t, &e, FitModel::Exponential, (0.0, 2.0)).is_ok());
    }

    #[test]
    fn window_and_model_parsing() {
        assert_eq!(parse_window("7:20").unwrap(), (7.0, 20.0));
        assert_eq!(parse_window(" 0.5 : 1e2").unwrap(), (0.5, 100.0));
        assert!(parse_window("7-20").is_err());
        assert!(parse_window("5:5").is_err());
        assert_eq!("exp".parse::<FitModel>().unwrap(), FitModel::Exponential);
        assert_eq!("Polynomial".parse::<FitModel>().unwrap(), FitModel::Polynomial);
        assert!("cubic".parse::<FitModel>().is_err());
    }

    proptest! {
        #[test]
        fn r_squared_in_unit_interval(noise in proptest::collection::vec(-1.0f64..1.0, 40), k in 0.0f64..2.0) {
            let t = grid(0.0, 8.0, 39);
            let e: Vec<f64> = t.iter().zip(&noise).map(|(t, n)| (-k * t + 0.3 * n).exp()).collect();
            for model in [FitModel::Exponential, FitModel::Polynomial] {
                let f = fit_samples(&t, &e, model, (0.0, 8.0)).unwrap();
                prop_assert!((0.0..=1.0).contains(&f.r_squared));
            }
        }

        #[test]
        fn exponential_rate_recovered(k in 0.01f64..5.0, c in 0.1f64..10.0) {
            let t = grid(1.0, 4.0, 30);
            let e: Vec<f64> = t.iter().map(|t| c * (-k * t).exp()).collect();
            let f = fit_samples(&t, &e, FitModel::Exponential, (1.0, 4.0)).unwrap();
            prop_assert!((f.parameter - k).abs() < 1e-9 * k.max(1.0));
        }
    }
}
