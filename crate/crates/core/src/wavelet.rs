//! Multi-level Daubechies-4 discrete wavelet transform with half-point
//! symmetric boundary extension.

use thiserror::Error;

/// db4 decomposition low-pass filter (8 taps).
pub const DB4_DEC_LO: [f64; 8] = [
    -0.010_597_401_784_997_278,
    0.032_883_011_666_982_945,
    0.030_841_381_835_986_965,
    -0.187_034_811_718_881_14,
    -0.027_983_769_416_983_85,
    0.630_880_767_929_590_4,
    0.714_846_570_552_541_5,
    0.230_377_813_308_855_23,
];

pub const FILTER_LEN: usize = DB4_DEC_LO.len();

#[derive(Debug, Error, PartialEq)]
pub enum WaveletError {
    #[error("signal of length {len} cannot be decomposed to {levels} levels (max {max})")]
    InvalidLevels {
        len: usize,
        levels: usize,
        max: usize,
    },
    #[error("inconsistent decomposition: {0}")]
    InvalidDecomposition(String),
}

/// Quadrature-mirror filter bank derived from the low-pass analysis filter.
#[derive(Debug, Clone)]
struct FilterBank {
    dec_lo: [f64; FILTER_LEN],
    dec_hi: [f64; FILTER_LEN],
    rec_lo: [f64; FILTER_LEN],
    rec_hi: [f64; FILTER_LEN],
}

impl FilterBank {
    fn db4() -> Self {
        let dec_lo = DB4_DEC_LO;
        let mut dec_hi = [0.0; FILTER_LEN];
        for k in 0..FILTER_LEN {
            let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
            dec_hi[k] = sign * dec_lo[FILTER_LEN - 1 - k];
        }
        let mut rec_lo = dec_lo;
        rec_lo.reverse();
        let mut rec_hi = dec_hi;
        rec_hi.reverse();
        FilterBank {
            dec_lo,
            dec_hi,
            rec_lo,
            rec_hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveletDecomposition {
    /// Approximation at the deepest level.
    pub approximation: Vec<f64>,
    /// Detail coefficients, `details[0]` is level 1 (finest).
    pub details: Vec<Vec<f64>>,
    pub original_length: usize,
    /// Input length at each level, `level_lengths[0] == original_length`.
    level_lengths: Vec<usize>,
}

impl WaveletDecomposition {
    pub fn levels(&self) -> usize {
        self.details.len()
    }
}

/// Coefficient count produced by one analysis step on `n` samples.
pub fn coeff_len(n: usize) -> usize {
    (n + FILTER_LEN - 1) / 2
}

/// Deepest admissible level for a signal of length `n`: `floor(log2(n / 7))`.
pub fn max_level(n: usize) -> usize {
    let ratio = n / (FILTER_LEN - 1);
    if ratio == 0 {
        0
    } else {
        ratio.ilog2() as usize
    }
}

#[inline]
fn symmetric_index(k: isize, n: usize) -> usize {
    // Half-point symmetric extension: ... x1 x0 | x0 x1 ... x(n-1) | x(n-1) x(n-2) ...
    let n = n as isize;
    let period = 2 * n;
    let mut k = k.rem_euclid(period);
    if k >= n {
        k = period - 1 - k;
    }
    k as usize
}

fn analysis_step(x: &[f64], bank: &FilterBank) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let out_len = coeff_len(n);
    let mut lo = Vec::with_capacity(out_len);
    let mut hi = Vec::with_capacity(out_len);
    for o in 0..out_len {
        let i = (2 * o + 1) as isize;
        let (mut a, mut d) = (0.0, 0.0);
        for j in 0..FILTER_LEN {
            let v = x[symmetric_index(i - j as isize, n)];
            a += bank.dec_lo[j] * v;
            d += bank.dec_hi[j] * v;
        }
        lo.push(a);
        hi.push(d);
    }
    (lo, hi)
}

fn synthesis_step(approx: &[f64], detail: &[f64], out_len: usize, bank: &FilterBank) -> Vec<f64> {
    // Full convolution of the zero-upsampled coefficients, keeping the window
    // that starts at FILTER_LEN - 2.
    let offset = FILTER_LEN - 2;
    let mut out = vec![0.0; out_len];
    for (n, slot) in out.iter_mut().enumerate() {
        let m = n + offset;
        let mut acc = 0.0;
        // m - 2k must lie in [0, FILTER_LEN)
        let k_min = (m + 2).saturating_sub(FILTER_LEN) / 2;
        let k_max = (m / 2).min(approx.len() - 1);
        for k in k_min..=k_max {
            let t = m - 2 * k;
            if t < FILTER_LEN {
                acc += approx[k] * bank.rec_lo[t] + detail[k] * bank.rec_hi[t];
            }
        }
        *slot = acc;
    }
    out
}

pub fn dwt_forward(signal: &[f64], levels: usize) -> Result<WaveletDecomposition, WaveletError> {
    let max = max_level(signal.len());
    if levels == 0 || levels > max || signal.len() < FILTER_LEN {
        return Err(WaveletError::InvalidLevels {
            len: signal.len(),
            levels,
            max,
        });
    }
    let bank = FilterBank::db4();
    let mut details = Vec::with_capacity(levels);
    let mut level_lengths = Vec::with_capacity(levels);
    let mut current = signal.to_vec();
    for _ in 0..levels {
        level_lengths.push(current.len());
        let (lo, hi) = analysis_step(&current, &bank);
        details.push(hi);
        current = lo;
    }
    Ok(WaveletDecomposition {
        approximation: current,
        details,
        original_length: signal.len(),
        level_lengths,
    })
}

pub fn dwt_inverse(decomposition: &WaveletDecomposition) -> Result<Vec<f64>, WaveletError> {
    let levels = decomposition.details.len();
    if levels == 0 {
        return Err(WaveletError::InvalidDecomposition("no detail levels".into()));
    }
    if decomposition.level_lengths.len() != levels
        || decomposition.level_lengths.first() != Some(&decomposition.original_length)
    {
        return Err(WaveletError::InvalidDecomposition(
            "level bookkeeping does not match detail count".into(),
        ));
    }
    for (lvl, (d, &n)) in decomposition
        .details
        .iter()
        .zip(&decomposition.level_lengths)
        .enumerate()
    {
        if d.len() != coeff_len(n) {
            return Err(WaveletError::InvalidDecomposition(format!(
                "level {} detail has {} coefficients, expected {}",
                lvl + 1,
                d.len(),
                coeff_len(n)
            )));
        }
    }
    let deepest = decomposition.details[levels - 1].len();
    if decomposition.approximation.len() != deepest {
        return Err(WaveletError::InvalidDecomposition(format!(
            "approximation has {} coefficients, expected {}",
            decomposition.approximation.len(),
            deepest
        )));
    }
    let bank = FilterBank::db4();
    let mut current = decomposition.approximation.clone();
    for lvl in (0..levels).rev() {
        current = synthesis_step(
            &current,
            &decomposition.details[lvl],
            decomposition.level_lengths[lvl],
            &bank,
        );
    }
    Ok(current)
}
