//! Inverse participation ratio of weight vectors in the Fourier basis.
//!
//! For a vector `v` of length `p` with DFT magnitudes `w`,
//! `IPR_r(v) = (‖w‖_{2r} / ‖w‖_2)^{2r}`. A neuron's IPR averages the three
//! vectors attached to it: row `k` of `U`, row `k` of `V`, column `k` of `W`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numkit::DftPlan;

/// Split between memorizing (low) and generalizing (high) neurons.
pub const IPR_SPLIT: f64 = 0.3;
pub const DEFAULT_BINS: usize = 50;

/// IPR with exponent `r`. `None` for an all-zero vector.
pub fn ipr_of_vector(v: &[f64], r: f64) -> Option<f64> {
    ipr_with_plan(&DftPlan::new(v.len()), v, r)
}

pub fn ipr_with_plan(plan: &DftPlan, v: &[f64], r: f64) -> Option<f64> {
    assert!(r >= 1.0, "IPR exponent must be >= 1");
    if v.iter().all(|&x| x == 0.0) {
        return None;
    }
    let mags = plan.magnitudes(v);
    let s2: f64 = mags.iter().map(|m| m * m).sum();
    if s2 == 0.0 {
        return None;
    }
    let val = if r == 2.0 {
        mags.iter().map(|m| (m * m) * (m * m)).sum::<f64>() / (s2 * s2)
    } else {
        mags.iter().map(|m| m.powf(2.0 * r)).sum::<f64>() / s2.powf(r)
    };
    Some(val)
}

/// Per-neuron values. All fields are `None` for a dead neuron.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeuronIpr {
    pub ipr_u: Option<f64>,
    pub ipr_v: Option<f64>,
    pub ipr_w: Option<f64>,
    pub ipr_combined: Option<f64>,
}

impl NeuronIpr {
    pub fn dead(&self) -> bool {
        self.ipr_combined.is_none()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IprReport {
    pub per_neuron: Vec<NeuronIpr>,
    /// Mean combined IPR over live neurons; NaN when every neuron is dead.
    pub mean_ipr: f64,
    pub r: f64,
}

impl IprReport {
    /// `(neuron index, combined IPR)` for live neurons.
    pub fn live(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.per_neuron
            .iter()
            .enumerate()
            .filter_map(|(k, n)| n.ipr_combined.map(|x| (k, x)))
    }

    pub fn live_count(&self) -> usize {
        self.live().count()
    }

    /// Fraction of live neurons with combined IPR strictly below `t`.
    pub fn fraction_below(&self, t: f64) -> f64 {
        let n = self.live_count();
        if n == 0 {
            return 0.0;
        }
        self.live().filter(|&(_, x)| x < t).count() as f64 / n as f64
    }

    /// Fraction of live neurons with combined IPR strictly above `t`.
    pub fn fraction_above(&self, t: f64) -> f64 {
        let n = self.live_count();
        if n == 0 {
            return 0.0;
        }
        self.live().filter(|&(_, x)| x > t).count() as f64 / n as f64
    }

    /// CSV with header `neuron,ipr_u,ipr_v,ipr_w,ipr_combined,dead`; dead
    /// neurons leave the IPR fields empty.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["neuron", "ipr_u", "ipr_v", "ipr_w", "ipr_combined", "dead"])?;
        let f = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for (k, n) in self.per_neuron.iter().enumerate() {
            out.write_record([
                k.to_string(),
                f(n.ipr_u),
                f(n.ipr_v),
                f(n.ipr_w),
                f(n.ipr_combined),
                (n.dead() as u8).to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// A neuron is dead when any of its three vectors is identically zero.
pub fn per_neuron_ipr(params: &ModelParams, r: f64) -> IprReport {
    let plan = DftPlan::new(params.p());
    let per_neuron: Vec<NeuronIpr> = (0..params.width())
        .map(|k| {
            let iu = ipr_with_plan(&plan, params.u.row(k), r);
            let iv = ipr_with_plan(&plan, params.v.row(k), r);
            let iw = ipr_with_plan(&plan, &params.w_col(k), r);
            match (iu, iv, iw) {
                (Some(a), Some(b), Some(c)) => NeuronIpr {
                    ipr_u: iu,
                    ipr_v: iv,
                    ipr_w: iw,
                    ipr_combined: Some((a + b + c) / 3.0),
                },
                _ => NeuronIpr {
                    ipr_u: None,
                    ipr_v: None,
                    ipr_w: None,
                    ipr_combined: None,
                },
            }
        })
        .collect();
    let live: Vec<f64> = per_neuron.iter().filter_map(|n| n.ipr_combined).collect();
    let mean_ipr = if live.is_empty() {
        f64::NAN
    } else {
        live.iter().sum::<f64>() / live.len() as f64
    };
    IprReport {
        per_neuron,
        mean_ipr,
        r,
    }
}

/// Counts of live combined IPR values in `bins` uniform bins on `[0, 1]`;
/// the value 1.0 lands in the last bin.
pub fn ipr_histogram(report: &IprReport, bins: usize) -> Vec<usize> {
    assert!(bins >= 1, "need at least one bin");
    let mut counts = vec![0; bins];
    for (_, x) in report.live() {
        let b = ((x * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correlation {
    pub pearson: f64,
    pub spearman: f64,
    /// Set when either side has zero variance; both coefficients are NaN.
    pub degenerate: bool,
    pub n: usize,
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Ranks starting at 1; ties share their average rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Pearson and Spearman correlation between `|γ_k|` and the combined IPR over
/// live neurons.
pub fn bn_ipr_correlation(gamma: &[f64], report: &IprReport) -> Result<Correlation> {
    if gamma.len() != report.per_neuron.len() {
        return Err(Error::Data(format!(
            "gamma has {} entries for {} neurons",
            gamma.len(),
            report.per_neuron.len()
        )));
    }
    let (g, ipr): (Vec<f64>, Vec<f64>) = report.live().map(|(k, x)| (gamma[k].abs(), x)).unzip();
    if g.len() < 3 {
        return Err(Error::Degenerate(format!(
            "correlation needs at least 3 live neurons, have {}",
            g.len()
        )));
    }
    let n = g.len();
    match (pearson(&g, &ipr), pearson(&ranks(&g), &ranks(&ipr))) {
        (Some(p), Some(s)) => Ok(Correlation {
            pearson: p,
            spearman: s,
            degenerate: false,
            n,
        }),
        _ => Ok(Correlation {
            pearson: f64::NAN,
            spearman: f64::NAN,
            degenerate: true,
            n,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NormKind;
    use crate::numkit::Rng;
    use proptest::prelude::*;
    use std::f64::consts::TAU;

    #[test]
    fn closed_forms() {
        assert!((ipr_of_vector(&[3.0; 97], 2.0).unwrap() - 1.0).abs() < 1e-12);
        let mut e = vec![0.0; 97];
        e[40] = -2.0;
        assert!((ipr_of_vector(&e, 2.0).unwrap() - 1.0 / 97.0).abs() < 1e-12);
        for (freq, phase) in [(1, 0.0), (7, 1.3), (48, -2.9)] {
            let c: Vec<f64> = (0..97)
                .map(|j| (TAU * (freq * j) as f64 / 97.0 + phase).cos())
                .collect();
            assert!((ipr_of_vector(&c, 2.0).unwrap() - 0.5).abs() < 1e-12);
        }
        assert_eq!(ipr_of_vector(&[0.0; 5], 2.0), None);
    }

    #[test]
    fn exponent_one_is_trivial() {
        let mut rng = Rng::new(8);
        let v: Vec<f64> = (0..31).map(|_| rng.normal()).collect();
        assert!((ipr_of_vector(&v, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn general_exponent_matches_r2_path() {
        let mut rng = Rng::new(81);
        let v: Vec<f64> = (0..31).map(|_| rng.normal()).collect();
        let a = ipr_of_vector(&v, 2.0).unwrap();
        let b = ipr_of_vector(&v, 2.0 + 1e-15).unwrap();
        assert!((a - b).abs() < 1e-9);
        assert!(ipr_of_vector(&v, 3.0).unwrap() < a);
    }

    #[test]
    fn random_params_have_low_ipr() {
        let mut rng = Rng::new(1);
        let params = ModelParams::init_gaussian(97, 500, None, 0.05, &mut rng);
        let rep = per_neuron_ipr(&params, 2.0);
        assert!(rep.mean_ipr < 0.1, "{}", rep.mean_ipr);
        let h = ipr_histogram(&rep, 10);
        assert_eq!(h.iter().sum::<usize>(), 500);
        assert_eq!(h[0] + h[1], 500);
    }

    #[test]
    fn dead_neuron_excluded() {
        let mut rng = Rng::new(2);
        let mut params = ModelParams::init_gaussian(11, 4, None, 1.0, &mut rng);
        params.u.row_mut(2).fill(0.0);
        params.v.row_mut(2).fill(0.0);
        for q in 0..11 {
            params.w.set(q, 2, 0.0);
        }
        let rep = per_neuron_ipr(&params, 2.0);
        assert!(rep.per_neuron[2].dead());
        assert_eq!(rep.live_count(), 3);
        let oracle: f64 = [0, 1, 3]
            .iter()
            .map(|&k| {
                let n = rep.per_neuron[k];
                (n.ipr_u.unwrap() + n.ipr_v.unwrap() + n.ipr_w.unwrap()) / 3.0
            })
            .sum::<f64>()
            / 3.0;
        assert!((rep.mean_ipr - oracle).abs() < 1e-15);
        assert_eq!(ipr_histogram(&rep, 7).iter().sum::<usize>(), 3);

        let zero = ModelParams::zeros(11, 3, None);
        let rep = per_neuron_ipr(&zero, 2.0);
        assert!(rep.mean_ipr.is_nan());
        assert_eq!(ipr_histogram(&rep, 5), vec![0; 5]);
    }

    #[test]
    fn histogram_edges() {
        let rep = IprReport {
            per_neuron: [0.0, 0.5, 0.999, 1.0]
                .iter()
                .map(|&x| NeuronIpr {
                    ipr_u: Some(x),
                    ipr_v: Some(x),
                    ipr_w: Some(x),
                    ipr_combined: Some(x),
                })
                .collect(),
            mean_ipr: 0.0,
            r: 2.0,
        };
        assert_eq!(ipr_histogram(&rep, 2), vec![1, 3]);
        assert_eq!(ipr_histogram(&rep, 1), vec![4]);
    }

    fn report_from(values: &[f64]) -> IprReport {
        IprReport {
            per_neuron: values
                .iter()
                .map(|&x| NeuronIpr {
                    ipr_u: Some(x),
                    ipr_v: Some(x),
                    ipr_w: Some(x),
                    ipr_combined: Some(x),
                })
                .collect(),
            mean_ipr: values.iter().sum::<f64>() / values.len() as f64,
            r: 2.0,
        }
    }

    #[test]
    fn correlation_cases() {
        let vals = [0.1, 0.5, 0.3, 0.45, 0.02];
        let rep = report_from(&vals);
        let c = bn_ipr_correlation(&vals, &rep).unwrap();
        assert!((c.pearson - 1.0).abs() < 1e-12 && (c.spearman - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = vals.iter().map(|x| -x).collect();
        assert!((bn_ipr_correlation(&neg, &rep).unwrap().spearman - 1.0).abs() < 1e-12);
        let c = bn_ipr_correlation(&[2.0; 5], &rep).unwrap();
        assert!(c.degenerate && c.spearman.is_nan());
        assert!(bn_ipr_correlation(&[1.0, 2.0], &report_from(&[0.1, 0.2])).is_err());
        assert!(bn_ipr_correlation(&[1.0], &rep).is_err());
        // Monotone but nonlinear: Spearman 1, Pearson < 1.
        let cubed: Vec<f64> = vals.iter().map(|x| x.powi(3)).collect();
        let c = bn_ipr_correlation(&cubed, &rep).unwrap();
        assert!((c.spearman - 1.0).abs() < 1e-12 && c.pearson < 1.0);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn csv_layout() {
        let mut params = ModelParams::zeros(5, 2, Some(NormKind::BatchNorm));
        params.u.row_mut(0).fill(1.0);
        params.v.row_mut(0).fill(1.0);
        for q in 0..5 {
            params.w.set(q, 0, 1.0);
        }
        let mut buf = Vec::new();
        per_neuron_ipr(&params, 2.0).write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "neuron,ipr_u,ipr_v,ipr_w,ipr_combined,dead\n0,1,1,1,1,0\n1,,,,,1\n");
    }

    #[test]
    fn bounds_over_many_vectors() {
        let mut rng = Rng::new(12);
        let plan = DftPlan::new(97);
        for _ in 0..10_000 {
            let v: Vec<f64> = (0..97).map(|_| rng.normal()).collect();
            let x = ipr_with_plan(&plan, &v, 2.0).unwrap();
            assert!((1.0 / 97.0 - 1e-12..=1.0 + 1e-12).contains(&x));
        }
    }

    proptest! {
        #[test]
        fn shift_and_scale_invariant(seed in any::<u64>(), p in 2usize..60, shift in 0usize..60, c in -5.0f64..5.0) {
            prop_assume!(c.abs() > 1e-3);
            let mut rng = Rng::new(seed);
            let v: Vec<f64> = (0..p).map(|_| rng.normal()).collect();
            let base = ipr_of_vector(&v, 2.0).unwrap();
            let shifted: Vec<f64> = (0..p).map(|j| v[(j + shift) % p]).collect();
            let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
            prop_assert!((ipr_of_vector(&shifted, 2.0).unwrap() - base).abs() < 1e-12);
            prop_assert!((ipr_of_vector(&scaled, 2.0).unwrap() - base).abs() < 1e-12);
        }

        #[test]
        fn bounds(seed in any::<u64>(), p in 2usize..100) {
            let mut rng = Rng::new(seed);
            let v: Vec<f64> = (0..p).map(|_| rng.normal()).collect();
            let x = ipr_of_vector(&v, 2.0).unwrap();
            prop_assert!(x >= 1.0 / p as f64 - 1e-12 && x <= 1.0 + 1e-12);
        }
    }
}
