//! The periodic-weight solution of modular addition.
//!
//! With frequencies `σ(k)` and phases `φ_k^u, φ_k^v`,
//!
//! ```text
//! U_ki = A cos(2π i σ(k)/p + φ_k^u)
//! V_kj = A cos(2π j σ(k)/p + φ_k^v)
//! W_qk = A cos(-2π q σ(k)/p - φ_k^u - φ_k^v)
//! ```
//!
//! and quadratic activation, `f_q(m,n)` contains the phase-free term
//! `(A³/2) Σ_k cos(2π σ(k)(m+n-q)/p)`. Every other term carries a random
//! phase and averages out for large `N`. `A³ = 2/N` makes the surviving term
//! `(1/N) Σ_k cos(...)`, which is 1 when `m+n ≡ q` and small otherwise.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{eval_logits, Activation, HyperKinds, ModelParams};
use crate::numkit::{Matrix, Rng};

/// 1 iff `x` is an integer multiple of `p` (negative `x` included).
pub fn modular_delta(x: i64, p: u64) -> u8 {
    assert!(p >= 1, "modulus must be positive");
    (x.rem_euclid(p as i64) == 0) as u8
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrequencyAssignment {
    /// `σ` is a random permutation of `0..N`; the cosine reduces it mod `p`.
    Permutation,
    /// `σ(k) = 1 + (k mod (p-1))`: every nonzero residue used equally often
    /// (counts differ by at most one) and no frequency-0 neurons.
    Balanced,
}

impl std::str::FromStr for FrequencyAssignment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "permutation" => Ok(FrequencyAssignment::Permutation),
            "balanced" => Ok(FrequencyAssignment::Balanced),
            _ => Err(Error::Config(format!(
                "unknown frequency assignment {s:?} (expected permutation or balanced)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticSpec {
    pub p: usize,
    pub width: usize,
    pub sigma: Vec<usize>,
    pub phases_u: Vec<f64>,
    pub phases_v: Vec<f64>,
    pub amplitude: f64,
}

/// `(2/N)^{1/3}`: three weight factors multiply to `2/N`.
pub fn default_amplitude(width: usize) -> f64 {
    (2.0 / width as f64).cbrt()
}

impl AnalyticSpec {
    /// Draws the frequency permutation (if any), then `φ^u`, then `φ^v`,
    /// all from `rng`.
    pub fn random(p: usize, width: usize, assignment: FrequencyAssignment, rng: &mut Rng) -> Result<Self> {
        if p < 2 || width < 1 {
            return Err(Error::Config(format!("need p >= 2 and N >= 1, got p={p}, N={width}")));
        }
        let sigma = match assignment {
            FrequencyAssignment::Permutation => {
                let mut s: Vec<usize> = (0..width).collect();
                rng.shuffle(&mut s);
                s
            }
            FrequencyAssignment::Balanced => (0..width).map(|k| 1 + k % (p - 1)).collect(),
        };
        let phases_u = (0..width).map(|_| rng.phase()).collect();
        let phases_v = (0..width).map(|_| rng.phase()).collect();
        Ok(AnalyticSpec {
            p,
            width,
            sigma,
            phases_u,
            phases_v,
            amplitude: default_amplitude(width),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.width;
        if self.sigma.len() != n || self.phases_u.len() != n || self.phases_v.len() != n {
            return Err(Error::Config("analytic spec vectors must have length N".into()));
        }
        if self.p < 2 || n < 1 {
            return Err(Error::Config(format!(
                "need p >= 2 and N >= 1, got p={}, N={n}",
                self.p
            )));
        }
        if !self.amplitude.is_finite() {
            return Err(Error::Config("amplitude must be finite".into()));
        }
        Ok(())
    }

    /// True when `sigma` is a permutation of `0..N`.
    pub fn is_permutation(&self) -> bool {
        let mut seen = vec![false; self.width];
        self.sigma
            .iter()
            .all(|&s| s < self.width && !std::mem::replace(&mut seen[s], true))
    }

    /// The phase-free term `(1/N) Σ_k cos(2π σ(k) x / p)`.
    pub fn boxed_term(&self, x: i64) -> f64 {
        let p = self.p as i64;
        let s: f64 = self
            .sigma
            .iter()
            .map(|&sk| {
                // Reduce σ·x mod p in integers before the cosine.
                let r = ((sk as i64 % p) * x.rem_euclid(p)).rem_euclid(p);
                (TAU * r as f64 / self.p as f64).cos()
            })
            .sum();
        s / self.width as f64
    }
}

/// Angle `2π·r/p` with `r = j·σ mod p` reduced in integers.
fn angle(j: usize, sigma: usize, p: usize) -> f64 {
    TAU * ((j * (sigma % p)) % p) as f64 / p as f64
}

/// Builds `U`, `V`, `W` from a spec (no norm layer).
pub fn build_analytic_params(spec: &AnalyticSpec) -> Result<ModelParams> {
    spec.validate()?;
    let (p, n, a) = (spec.p, spec.width, spec.amplitude);
    let mut params = ModelParams::zeros(p, n, None);
    for k in 0..n {
        let (s, pu, pv) = (spec.sigma[k], spec.phases_u[k], spec.phases_v[k]);
        for i in 0..p {
            let th = angle(i, s, p);
            params.u.set(k, i, a * (th + pu).cos());
            params.v.set(k, i, a * (th + pv).cos());
            params.w.set(i, k, a * (-th - pu - pv).cos());
        }
    }
    Ok(params)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnalyticReport {
    pub accuracy: f64,
    /// Largest `|f_q(m,n)|` over all inputs and all `q ≠ (m+n) mod p`.
    pub max_offtarget_logit: f64,
    /// Mean of `f_q(m,n)` at `q = (m+n) mod p`.
    pub mean_target_logit: f64,
}

/// Evaluates the network on all `p²` inputs against modular addition.
pub fn verify_analytic(params: &ModelParams, activation: Activation) -> Result<AnalyticReport> {
    if activation != Activation::Quadratic {
        return Err(Error::Config(
            "the periodic solution only holds for quadratic activation".into(),
        ));
    }
    params.validate()?;
    let p = params.p();
    let pairs: Vec<(usize, usize)> = (0..p).flat_map(|m| (0..p).map(move |n| (m, n))).collect();
    let logits: Matrix = eval_logits(params, &pairs, &HyperKinds::default())?;
    let (mut hits, mut max_off, mut target_sum) = (0usize, 0.0f64, 0.0);
    for (i, &(m, n)) in pairs.iter().enumerate() {
        let row = logits.row(i);
        let target = (m + n) % p;
        if crate::model::argmax(row) == target {
            hits += 1;
        }
        target_sum += row[target];
        for (q, &f) in row.iter().enumerate() {
            if q != target {
                max_off = max_off.max(f.abs());
            }
        }
    }
    let total = pairs.len() as f64;
    Ok(AnalyticReport {
        accuracy: hits as f64 / total,
        max_offtarget_logit: max_off,
        mean_target_logit: target_sum / total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{dft_magnitudes, Rng};
    use crate::spectral::per_neuron_ipr;
    use proptest::prelude::*;

    #[test]
    fn delta_values() {
        assert_eq!(modular_delta(0, 97), 1);
        assert_eq!(modular_delta(97, 97), 1);
        assert_eq!(modular_delta(-97, 97), 1);
        assert_eq!(modular_delta(-194, 97), 1);
        assert_eq!(modular_delta(50, 97), 0);
        assert_eq!(modular_delta(-1, 97), 0);
        assert_eq!(modular_delta(5, 1), 1);
    }

    proptest! {
        #[test]
        fn delta_periodic(x in -1_000_000i64..1_000_000, p in 1u64..500) {
            prop_assert_eq!(modular_delta(x, p), modular_delta(x.rem_euclid(p as i64), p));
        }
    }

    #[test]
    fn zero_phase_zero_frequency_row_is_constant() {
        let spec = AnalyticSpec {
            p: 7,
            width: 2,
            sigma: vec![0, 3],
            phases_u: vec![0.0, 0.0],
            phases_v: vec![0.0, 0.0],
            amplitude: 0.8,
        };
        let params = build_analytic_params(&spec).unwrap();
        assert!(params.u.row(0).iter().all(|&x| x == 0.8));
        assert!(!spec.is_permutation());
    }

    #[test]
    fn rows_are_pure_frequencies() {
        let mut rng = Rng::new(3);
        let spec = AnalyticSpec::random(97, 120, FrequencyAssignment::Permutation, &mut rng).unwrap();
        assert!(spec.is_permutation());
        let params = build_analytic_params(&spec).unwrap();
        for k in 0..120 {
            let s = spec.sigma[k] % 97;
            let mags = dft_magnitudes(params.u.row(k));
            for (f, m) in mags.iter().enumerate() {
                let in_support = f == s || f == (97 - s) % 97;
                if !in_support {
                    assert!(m.abs() < 1e-9, "neuron {k} freq {f}: {m}");
                }
            }
        }
    }

    #[test]
    fn analytic_ipr_is_one_half() {
        let mut rng = Rng::new(4);
        let spec = AnalyticSpec::random(97, 500, FrequencyAssignment::Permutation, &mut rng).unwrap();
        let rep = per_neuron_ipr(&build_analytic_params(&spec).unwrap(), 2.0);
        for (k, n) in rep.per_neuron.iter().enumerate() {
            let c = n.ipr_combined.unwrap();
            if !spec.sigma[k].is_multiple_of(97) {
                assert!((c - 0.5).abs() < 1e-9, "{k}: {c}");
            } else {
                assert!((c - 1.0).abs() < 1e-9);
            }
        }
    }

    /// Direct evaluation of `Σ_k W_qk (U_km + V_kn)²` without the model code.
    fn brute_logit(spec: &AnalyticSpec, m: usize, n: usize, q: usize) -> f64 {
        let p = spec.p as f64;
        let a = spec.amplitude;
        (0..spec.width)
            .map(|k| {
                let s = spec.sigma[k] as f64;
                let u = a * (TAU * m as f64 * s / p + spec.phases_u[k]).cos();
                let v = a * (TAU * n as f64 * s / p + spec.phases_v[k]).cos();
                let w = a * (-TAU * q as f64 * s / p - spec.phases_u[k] - spec.phases_v[k]).cos();
                w * (u + v) * (u + v)
            })
            .sum()
    }

    #[test]
    fn logits_match_brute_force_and_margins() {
        let mut rng = Rng::new(5);
        let spec = AnalyticSpec::random(97, 500, FrequencyAssignment::Permutation, &mut rng).unwrap();
        let params = build_analytic_params(&spec).unwrap();
        let pairs = [(0, 0), (3, 94), (50, 60), (96, 96)];
        let logits = eval_logits(&params, &pairs, &HyperKinds::default()).unwrap();
        for (i, &(m, n)) in pairs.iter().enumerate() {
            for q in [0, (m + n) % 97, 41] {
                let b = brute_logit(&spec, m, n, q);
                assert!((logits.get(i, q) - b).abs() < 1e-9);
            }
        }
        let rep = verify_analytic(&params, Activation::Quadratic).unwrap();
        assert_eq!(rep.accuracy, 1.0);
        assert!((0.8..=1.2).contains(&rep.mean_target_logit), "{rep:?}");
        assert!(rep.max_offtarget_logit < 0.5, "{rep:?}");
    }

    #[test]
    fn accuracy_robust_to_phase_redraws() {
        let mut rng = Rng::new(11);
        let perfect = (0..50)
            .filter(|_| {
                let spec = AnalyticSpec::random(97, 500, FrequencyAssignment::Permutation, &mut rng).unwrap();
                let params = build_analytic_params(&spec).unwrap();
                verify_analytic(&params, Activation::Quadratic).unwrap().accuracy == 1.0
            })
            .count();
        assert!(perfect >= 49, "{perfect}/50");
    }

    #[test]
    fn tiny_width_fails() {
        let mut rng = Rng::new(6);
        let spec = AnalyticSpec::random(97, 4, FrequencyAssignment::Permutation, &mut rng).unwrap();
        let rep = verify_analytic(&build_analytic_params(&spec).unwrap(), Activation::Quadratic).unwrap();
        assert!(rep.accuracy < 0.5, "{rep:?}");
    }

    #[test]
    fn relu_rejected() {
        let params = ModelParams::zeros(5, 2, None);
        assert!(matches!(
            verify_analytic(&params, Activation::Relu),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn boxed_term_exact() {
        let mut rng = Rng::new(7);
        for width in [97, 500, 960] {
            let spec = AnalyticSpec::random(97, width, FrequencyAssignment::Balanced, &mut rng).unwrap();
            for x in [0i64, 97, -97, 194] {
                assert!((spec.boxed_term(x) - 1.0).abs() < 1e-9);
            }
        }
        // With all nonzero residues equally represented the off-target term
        // is exactly -1/(p-1): the residues sum to -1 over a full cycle.
        let spec = AnalyticSpec::random(97, 96 * 5, FrequencyAssignment::Balanced, &mut rng).unwrap();
        for x in [1i64, 13, 50, -3] {
            assert!((spec.boxed_term(x) + 1.0 / 96.0).abs() < 1e-12);
        }
    }

    #[test]
    fn printed_negative_exponent_fails() {
        // The amplitude (2/N)^{-1/3} scales every logit by (N/2)^2 relative to
        // (2/N)^{1/3}; argmax survives but the logits no longer approximate
        // the one-hot targets.
        let mut rng = Rng::new(8);
        let mut spec = AnalyticSpec::random(97, 500, FrequencyAssignment::Permutation, &mut rng).unwrap();
        spec.amplitude = (2.0f64 / 500.0).powf(-1.0 / 3.0);
        let rep = verify_analytic(&build_analytic_params(&spec).unwrap(), Activation::Quadratic).unwrap();
        assert!(rep.mean_target_logit > 1e4);
    }
}
