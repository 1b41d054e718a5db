//! Excess-risk and generalization-error bounds evaluated for a fitted
//! projection. Both depend on the data only through `tr(B^T K B)`.

use serde::{Deserialize, Serialize};

use crate::error::{MdaError, Result};
use crate::pipeline::MdaModel;
use crate::scatter::trace_form;

/// Lipschitz and boundedness constants of the loss and kernels, plus the
/// confidence level `delta`. All default to 1 except `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub lipschitz_loss: f64,
    pub loss_bound: f64,
    pub kernel_bound_x: f64,
    pub kernel_bound_x_prime: f64,
    pub kernel_bound_gamma: f64,
    pub lipschitz_feature_map: f64,
    pub delta: f64,
}

impl Default for BoundConstants {
    fn default() -> Self {
        Self {
            lipschitz_loss: 1.0,
            loss_bound: 1.0,
            kernel_bound_x: 1.0,
            kernel_bound_x_prime: 1.0,
            kernel_bound_gamma: 1.0,
            lipschitz_feature_map: 1.0,
            delta: 0.05,
        }
    }
}

impl BoundConstants {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lipschitz_loss", self.lipschitz_loss),
            ("loss_bound", self.loss_bound),
            ("kernel_bound_x", self.kernel_bound_x),
            ("kernel_bound_x_prime", self.kernel_bound_x_prime),
            ("kernel_bound_gamma", self.kernel_bound_gamma),
            ("lipschitz_feature_map", self.lipschitz_feature_map),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(MdaError::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(MdaError::InvalidParameter(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// Which training Gram enters `tr(B^T K B)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceGram {
    #[default]
    Centered,
    Raw,
}

pub fn trace_bkb(model: &MdaModel, which: TraceGram) -> f64 {
    let k = match which {
        TraceGram::Centered => model.basis().k_centered(),
        TraceGram::Raw => model.basis().k_raw(),
    };
    let v = trace_form(k.values(), &model.projection().b);
    if v < 0.0 && v >= -1e-10 {
        0.0
    } else {
        v
    }
}

/// `4 L_l L_kg U_k'x U_kx sqrt(tr/n) + sqrt(2 ln(2/delta) / n)`.
pub fn excess_risk_bound(tr_bkb: f64, n: usize, k: &BoundConstants) -> Result<f64> {
    k.validate()?;
    if n == 0 {
        return Err(MdaError::TooFew {
            what: "instances",
            required: 1,
            found: 0,
        });
    }
    let n = n as f64;
    let lead = 4.0
        * k.lipschitz_loss
        * k.lipschitz_feature_map
        * k.kernel_bound_x_prime
        * k.kernel_bound_x;
    Ok(lead * (tr_bkb.max(0.0) / n).sqrt() + (2.0 * (2.0 / k.delta).ln() / n).sqrt())
}

/// `U_l (sqrt(ln(2/d) / (2 m nbar)) + sqrt(ln(1/d) / (2m)))
///  + sqrt(tr) (c1 sqrt(ln(2m/d) / nbar) + c2 (sqrt(1/(m nbar)) + sqrt(1/m)))`
/// with `c1 = 2 sqrt(2) L_l U_kx L_kg U_k'x` and `c2 = 2 L_l U_kx U_kg`.
pub fn generalization_bound(tr_bkb: f64, m: usize, n_bar: f64, k: &BoundConstants) -> Result<f64> {
    k.validate()?;
    if m == 0 {
        return Err(MdaError::TooFew {
            what: "domains",
            required: 1,
            found: 0,
        });
    }
    if !(n_bar >= 1.0) {
        return Err(MdaError::InvalidParameter(format!(
            "mean domain size must be at least 1, got {n_bar}"
        )));
    }
    let m = m as f64;
    let d = k.delta;
    let c1 = 2.0
        * std::f64::consts::SQRT_2
        * k.lipschitz_loss
        * k.kernel_bound_x
        * k.lipschitz_feature_map
        * k.kernel_bound_x_prime;
    let c2 = 2.0 * k.lipschitz_loss * k.kernel_bound_x * k.kernel_bound_gamma;
    let sampling = k.loss_bound
        * (((2.0 / d).ln() / (2.0 * m * n_bar)).sqrt() + ((1.0 / d).ln() / (2.0 * m)).sqrt());
    let projection = tr_bkb.max(0.0).sqrt()
        * (c1 * ((2.0 * m / d).ln() / n_bar).sqrt()
            + c2 * ((1.0 / (m * n_bar)).sqrt() + (1.0 / m).sqrt()));
    Ok(sampling + projection)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub tr_bkb: f64,
    pub excess_risk_bound: f64,
    pub generalization_bound: f64,
    pub constants: BoundConstants,
    pub n: usize,
    pub m: usize,
    pub n_bar: f64,
    pub delta: f64,
}

/// Evaluates both bounds for a fitted model; `n_bar` is the mean domain size.
pub fn bound_report(model: &MdaModel, constants: &BoundConstants, which: TraceGram) -> Result<BoundReport> {
    let train = model.train();
    let n = train.len();
    let m = train.num_domains();
    let n_bar = n as f64 / m.max(1) as f64;
    let tr = trace_bkb(model, which);
    Ok(BoundReport {
        tr_bkb: tr,
        excess_risk_bound: excess_risk_bound(tr, n, constants)?,
        generalization_bound: generalization_bound(tr, m, n_bar, constants)?,
        constants: *constants,
        n,
        m,
        n_bar,
        delta: constants.delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(delta: f64) -> BoundConstants {
        BoundConstants {
            delta,
            ..BoundConstants::default()
        }
    }

    #[test]
    fn excess_risk_plug_in() {
        // 2 ln(2/delta) = n  =>  second term is 1
        let n = 10usize;
        let delta = 2.0 / (n as f64 / 2.0).exp();
        let v = excess_risk_bound(0.0, n, &ones(delta)).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn excess_risk_calculator_value() {
        let v = excess_risk_bound(4.0, 100, &ones(0.1)).unwrap();
        let expect = 0.8 + (2.0 * 20f64.ln() / 100.0).sqrt();
        assert!((v - expect).abs() <= 1e-15, "{v}");
        assert!((v - 1.0447747).abs() < 1e-7);
    }

    #[test]
    fn excess_risk_doubling_n() {
        let k = ones(0.2);
        let a = excess_risk_bound(3.0, 50, &k).unwrap();
        let b = excess_risk_bound(3.0, 100, &k).unwrap();
        assert!((b - a / 2f64.sqrt()).abs() <= 1e-14);
    }

    #[test]
    fn generalization_without_trace() {
        let k = ones(0.1);
        let v = generalization_bound(0.0, 4, 100.0, &k).unwrap();
        let expect = ((20f64).ln() / 800.0).sqrt() + ((10f64).ln() / 8.0).sqrt();
        assert!((v - expect).abs() < 1e-15);
    }

    #[test]
    fn generalization_per_term_scaling() {
        let k = ones(0.1);
        let s1 = generalization_bound(0.0, 4, 100.0, &k).unwrap();
        let s4 = generalization_bound(0.0, 16, 100.0, &k).unwrap();
        assert!((s4 - s1 / 2.0).abs() < 1e-15);
        // with c2 negligible only the c1 term remains, and it grows through ln(2m/delta)
        let c1_only = BoundConstants {
            kernel_bound_gamma: 1e-300,
            ..k
        };
        let t1 = generalization_bound(1.0, 4, 100.0, &c1_only).unwrap() - s1;
        let t4 = generalization_bound(1.0, 16, 100.0, &c1_only).unwrap() - s4;
        assert!(t4 > t1);
        let c1 = 2.0 * 2f64.sqrt();
        assert!((t1 - c1 * (80f64.ln() / 100.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn invalid_inputs() {
        assert!(excess_risk_bound(1.0, 0, &ones(0.1)).is_err());
        assert!(excess_risk_bound(1.0, 5, &ones(1.0)).is_err());
        assert!(generalization_bound(1.0, 0, 10.0, &ones(0.1)).is_err());
        assert!(generalization_bound(1.0, 2, 0.5, &ones(0.1)).is_err());
        let mut k = ones(0.1);
        k.loss_bound = 0.0;
        assert!(k.validate().is_err());
    }
}
