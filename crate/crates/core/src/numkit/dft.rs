//! Direct-summation discrete Fourier transform (magnitudes only).

use std::f64::consts::TAU;

/// Twiddle tables for a fixed length. The phase `2π·jk/p` is reduced to the
/// integer residue `jk mod p` before lookup, so large `jk` never loses precision.
#[derive(Clone, Debug)]
pub struct DftPlan {
    len: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl DftPlan {
    pub fn new(len: usize) -> Self {
        assert!(len >= 1, "DFT length must be positive");
        let step = TAU / len as f64;
        DftPlan {
            len,
            cos: (0..len).map(|r| (step * r as f64).cos()).collect(),
            sin: (0..len).map(|r| (step * r as f64).sin()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `|Σ_j v_j e^{-2πi jk/p}|` for `k = 0..p`.
    pub fn magnitudes_into(&self, v: &[f64], out: &mut [f64]) {
        assert_eq!(v.len(), self.len);
        assert_eq!(out.len(), self.len);
        let p = self.len;
        for (k, o) in out.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            let mut r = 0usize;
            for &x in v {
                re += x * self.cos[r];
                im -= x * self.sin[r];
                r += k;
                if r >= p {
                    r -= p;
                }
            }
            *o = re.hypot(im);
        }
    }

    pub fn magnitudes(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        self.magnitudes_into(v, &mut out);
        out
    }
}

/// One-shot DFT magnitudes; builds a plan each call.
pub fn dft_magnitudes(v: &[f64]) -> Vec<f64> {
    DftPlan::new(v.len()).magnitudes(v)
}
