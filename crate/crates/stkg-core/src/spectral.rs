//! Real spectra of fixed-length windows: forward transform, amplitude/phase
//! representation, phase surgery, and trend/residual decomposition.
//!
//! The forward transform is unnormalized; the inverse carries the `1/L`
//! factor. A length-`L` real signal yields `⌊L/2⌋ + 1` bins; bin 0 and (for
//! even `L`) the Nyquist bin have their phases forced into `{0, π}` so every
//! spectrum reconstructs to a real signal.

use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};

/// Amplitude/phase form of one frequency bin. `phase` is always wrapped into
/// `(-π, π]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralBin {
    pub amplitude: f64,
    pub phase: f64,
}

/// Real spectrum of a length-`len` signal: bins `0..=len/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub len: usize,
    pub bins: Vec<SpectralBin>,
}

impl Spectrum {
    pub fn bin_count(&self) -> usize {
        self.bins.len()
    }

    /// Synthesis weight of a bin: interior bins appear twice in the implied
    /// two-sided spectrum.
    pub fn fold_weight(&self, k: usize) -> f64 {
        fold_weight(k, self.len)
    }
}

/// Synthesis weight of bin `k` for series length `l`: 1 for the constant bin
/// and (at even lengths) the alternating bin, 2 for every paired bin.
pub fn fold_weight(k: usize, l: usize) -> f64 {
    if k == 0 || (l % 2 == 0 && k == l / 2) {
        1.0
    } else {
        2.0
    }
}

/// Wrap an angle into `(-π, π]`.
pub fn wrap_phase(p: f64) -> f64 {
    let mut x = p % TAU;
    if x <= -PI {
        x += TAU;
    } else if x > PI {
        x -= TAU;
    }
    x
}

/// Forward real transform. Power-of-two lengths go through an iterative
/// radix-2 FFT; other lengths use the direct O(L²) transform.
pub fn rfft(x: &[f64]) -> Result<Spectrum> {
    let l = x.len();
    if l < 2 {
        return Err(Error::Invalid(format!("rfft needs at least 2 samples, got {l}")));
    }
    let (re, im) = if l.is_power_of_two() {
        let mut re = x.to_vec();
        let mut im = vec![0.0; l];
        fft_radix2(&mut re, &mut im);
        (re, im)
    } else {
        dft_direct(x)
    };
    let bins = (0..=l / 2)
        .map(|k| bin_from_parts(re[k], im[k], k, l))
        .collect();
    Ok(Spectrum { len: l, bins })
}

fn bin_from_parts(re: f64, im: f64, k: usize, l: usize) -> SpectralBin {
    if k == 0 || (l % 2 == 0 && k == l / 2) {
        // purely real bins: phase is 0 or π by construction
        if re >= 0.0 {
            SpectralBin {
                amplitude: re,
                phase: 0.0,
            }
        } else {
            SpectralBin {
                amplitude: -re,
                phase: PI,
            }
        }
    } else {
        SpectralBin {
            amplitude: re.hypot(im),
            phase: wrap_phase(im.atan2(re)),
        }
    }
}

/// Inverse transform with `1/L` normalization:
/// `x[t] = (1/L) Σ_k c_k A_k cos(2πkt/L + φ_k)` with `c_k` the fold weight.
pub fn irfft(s: &Spectrum) -> Vec<f64> {
    let l = s.len;
    let mut x = vec![0.0; l];
    for (k, bin) in s.bins.iter().enumerate() {
        let c = s.fold_weight(k) * bin.amplitude / l as f64;
        if c == 0.0 {
            continue;
        }
        let w = TAU * k as f64 / l as f64;
        for (t, xt) in x.iter_mut().enumerate() {
            *xt += c * (w * t as f64 + bin.phase).cos();
        }
    }
    x
}

/// Replace the phase of bin `k`, leaving its amplitude and every other bin
/// untouched. For bin 0 and the Nyquist bin the new phase snaps to the nearer
/// of `{0, π}` so the spectrum stays real-valued.
pub fn apply_phase(s: &Spectrum, k: usize, phase: f64) -> Result<Spectrum> {
    if k >= s.bins.len() {
        return Err(Error::Invalid(format!(
            "apply_phase: bin {k} out of range for {} bins",
            s.bins.len()
        )));
    }
    let mut out = s.clone();
    let p = wrap_phase(phase);
    out.bins[k].phase = if k == 0 || (s.len % 2 == 0 && k == s.len / 2) {
        if p.abs() <= PI / 2.0 {
            0.0
        } else {
            PI
        }
    } else {
        p
    };
    Ok(out)
}

/// Circular right-shift by `s` steps: `y[t] = x[(t - s) mod L]`.
pub fn circular_shift(x: &[f64], s: i64) -> Vec<f64> {
    let l = x.len() as i64;
    (0..l).map(|t| x[(t - s).rem_euclid(l) as usize]).collect()
}

/// Phase offset that realizes a circular shift by `s` steps at bin `k`.
pub fn shift_phase_offset(k: usize, s: i64, l: usize) -> f64 {
    -TAU * k as f64 * s as f64 / l as f64
}

/// Trend/residual split of each row.
#[derive(Clone, Debug)]
pub struct Decomposition {
    pub trend: Vec<Vec<f64>>,
    pub residual: Vec<Vec<f64>>,
}

/// Centered moving average with replicate padding at both ends. `w` must be
/// odd and `1 <= w <= L`; the residual is the exact remainder `x - trend`.
pub fn decompose(rows: &[Vec<f64>], w: usize) -> Result<Decomposition> {
    if rows.is_empty() {
        return Err(Error::Invalid("decompose of zero rows".into()));
    }
    let l = rows[0].len();
    validate_trend_window(w, l)?;
    let mut trend = Vec::with_capacity(rows.len());
    let mut residual = Vec::with_capacity(rows.len());
    for row in rows {
        if row.len() != l {
            return Err(Error::Invalid("decompose requires equal-length rows".into()));
        }
        let t = moving_average_replicate(row, w);
        let r: Vec<f64> = row.iter().zip(&t).map(|(x, m)| x - m).collect();
        trend.push(t);
        residual.push(r);
    }
    Ok(Decomposition { trend, residual })
}

pub fn validate_trend_window(w: usize, l: usize) -> Result<()> {
    if w == 0 || w % 2 == 0 {
        return Err(Error::Invalid(format!("trend window must be odd and positive, got {w}")));
    }
    if w > l {
        return Err(Error::Invalid(format!("trend window {w} exceeds series length {l}")));
    }
    Ok(())
}

fn moving_average_replicate(x: &[f64], w: usize) -> Vec<f64> {
    let l = x.len() as i64;
    let r = (w / 2) as i64;
    (0..l)
        .map(|t| {
            let mut s = 0.0;
            for u in (t - r)..=(t + r) {
                s += x[u.clamp(0, l - 1) as usize];
            }
            s / w as f64
        })
        .collect()
}

/// Row-major `L x L` matrix `M` with `trend_row = M · x`. Lets a tape express
/// the decomposition as a constant matmul; `trend_matrix(l, w)[t*l + s]` is
/// the weight of sample `s` in trend position `t`.
pub fn trend_matrix(l: usize, w: usize) -> Result<Vec<f64>> {
    validate_trend_window(w, l)?;
    let r = (w / 2) as i64;
    let li = l as i64;
    let mut m = vec![0.0; l * l];
    for t in 0..li {
        for u in (t - r)..=(t + r) {
            let s = u.clamp(0, li - 1) as usize;
            m[t as usize * l + s] += 1.0 / w as f64;
        }
    }
    Ok(m)
}

fn fft_radix2(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    debug_assert!(n.is_power_of_two());
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -TAU / len as f64;
        let (wr, wi) = (ang.cos(), ang.sin());
        let half = len / 2;
        for start in (0..n).step_by(len) {
            let mut cr = 1.0;
            let mut ci = 0.0;
            for k in 0..half {
                let (er, ei) = (re[start + k], im[start + k]);
                let (xr, xi) = (re[start + k + half], im[start + k + half]);
                let or = xr * cr - xi * ci;
                let oi = xr * ci + xi * cr;
                re[start + k] = er + or;
                im[start + k] = ei + oi;
                re[start + k + half] = er - or;
                im[start + k + half] = ei - oi;
                let ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
        }
        len <<= 1;
    }
}

fn dft_direct(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let l = x.len();
    let mut re = vec![0.0; l];
    let mut im = vec![0.0; l];
    for k in 0..l {
        let w = TAU * k as f64 / l as f64;
        let mut sr = 0.0;
        let mut si = 0.0;
        for (t, &xt) in x.iter().enumerate() {
            let a = w * t as f64;
            sr += xt * a.cos();
            si -= xt * a.sin();
        }
        re[k] = sr;
        im[k] = si;
    }
    (re, im)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assert_rows_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            assert!((x - y).abs() <= tol, "index {i}: {x} vs {y}");
        }
    }

    #[test]
    fn round_trip_power_of_two_and_direct_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for l in [8usize, 16, 24, 30] {
            let x: Vec<f64> = (0..l).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let s = rfft(&x).unwrap();
            assert_eq!(s.bin_count(), l / 2 + 1);
            let y = irfft(&s);
            assert_rows_close(&x, &y, 1e-9);
        }
    }

    #[test]
    fn radix2_agrees_with_direct_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fast = rfft(&x).unwrap();
        let (re, im) = dft_direct(&x);
        for (k, bin) in fast.bins.iter().enumerate() {
            let slow = bin_from_parts(re[k], im[k], k, 16);
            assert!((bin.amplitude - slow.amplitude).abs() < 1e-9);
            assert!(
                (bin.phase - slow.phase).abs() < 1e-9 || bin.amplitude < 1e-9,
                "bin {k}: {} vs {}",
                bin.phase,
                slow.phase
            );
        }
    }

    #[test]
    fn single_tone_amplitude_and_phase() {
        let l = 24;
        let phi = 0.4;
        let x: Vec<f64> = (0..l)
            .map(|t| (TAU * t as f64 / l as f64 + phi).cos())
            .collect();
        let s = rfft(&x).unwrap();
        assert!((s.bins[1].amplitude - l as f64 / 2.0).abs() < 1e-9);
        assert!((s.bins[1].phase - phi).abs() < 1e-9);
        for (k, bin) in s.bins.iter().enumerate() {
            if k != 1 {
                assert!(bin.amplitude < 1e-9, "bin {k} leaked {}", bin.amplitude);
            }
        }
    }

    #[test]
    fn constant_series_lives_in_bin_zero() {
        let x = vec![3.0; 10];
        let s = rfft(&x).unwrap();
        assert!((s.bins[0].amplitude - 30.0).abs() < 1e-9);
        assert_eq!(s.bins[0].phase, 0.0);
        let neg = vec![-3.0; 10];
        let sn = rfft(&neg).unwrap();
        assert_eq!(sn.bins[0].phase, PI);
        assert_rows_close(&irfft(&sn), &neg, 1e-9);
    }

    #[test]
    fn nyquist_phase_is_zero_or_pi() {
        let x: Vec<f64> = (0..8).map(|t| if t % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let s = rfft(&x).unwrap();
        assert!((s.bins[4].amplitude - 8.0).abs() < 1e-9);
        assert_eq!(s.bins[4].phase, 0.0);
        assert_rows_close(&irfft(&s), &x, 1e-9);
    }

    #[test]
    fn apply_phase_touches_exactly_one_bin() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = rfft(&x).unwrap();
        let s2 = apply_phase(&s, 3, 1.25).unwrap();
        for (k, (a, b)) in s.bins.iter().zip(&s2.bins).enumerate() {
            assert_eq!(a.amplitude, b.amplitude, "amplitude changed at bin {k}");
            if k == 3 {
                assert_eq!(b.phase, 1.25);
            } else {
                assert_eq!(a.phase, b.phase, "phase changed at bin {k}");
            }
        }
    }

    #[test]
    fn phase_offset_realizes_circular_shift_single_tone() {
        let l = 24usize;
        let x: Vec<f64> = (0..l)
            .map(|t| (TAU * t as f64 / l as f64 + 0.7).cos())
            .collect();
        let s = rfft(&x).unwrap();
        for shift in 0..l as i64 {
            let target = wrap_phase(s.bins[1].phase + shift_phase_offset(1, shift, l));
            let shifted = apply_phase(&s, 1, target).unwrap();
            let y = irfft(&shifted);
            let want = circular_shift(&x, shift);
            assert_rows_close(&y, &want, 1e-9);
        }
    }

    #[test]
    fn full_spectrum_phase_shift_equals_circular_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = 24usize;
        let x: Vec<f64> = (0..l).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = rfft(&x).unwrap();
        for shift in [1i64, 5, 12, 23] {
            let mut shifted = s.clone();
            for k in 0..s.bin_count() {
                let target = wrap_phase(s.bins[k].phase + shift_phase_offset(k, shift, l));
                shifted = apply_phase(&shifted, k, target).unwrap();
            }
            let y = irfft(&shifted);
            let want = circular_shift(&x, shift);
            assert_rows_close(&y, &want, 1e-9);
        }
    }

    #[test]
    fn decompose_ramp_matches_hand_computation() {
        let rows = vec![vec![0.0, 1.0, 2.0, 3.0, 4.0]];
        let d = decompose(&rows, 3).unwrap();
        assert_rows_close(&d.trend[0], &[1.0 / 3.0, 1.0, 2.0, 3.0, 11.0 / 3.0], 1e-12);
        for (x, (t, r)) in rows[0].iter().zip(d.trend[0].iter().zip(&d.residual[0])) {
            assert!((x - (t + r)).abs() < 1e-12);
        }
    }

    #[test]
    fn decompose_rejects_bad_windows() {
        let rows = vec![vec![0.0; 8]];
        assert!(decompose(&rows, 0).is_err());
        assert!(decompose(&rows, 4).is_err());
        assert!(decompose(&rows, 9).is_err());
    }

    #[test]
    fn trend_matrix_reproduces_moving_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l = 24usize;
        let x: Vec<f64> = (0..l).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = trend_matrix(l, 5).unwrap();
        let via_matrix: Vec<f64> = (0..l)
            .map(|t| (0..l).map(|s| m[t * l + s] * x[s]).sum())
            .collect();
        let direct = moving_average_replicate(&x, 5);
        assert_rows_close(&via_matrix, &direct, 1e-12);
    }

    #[test]
    fn wrap_phase_lands_in_half_open_interval() {
        for p in [-PI, PI, 3.5 * PI, -3.5 * PI, 0.0, 1.0, TAU, -TAU] {
            let w = wrap_phase(p);
            assert!(w > -PI && w <= PI, "{p} wrapped to {w}");
        }
        assert_eq!(wrap_phase(-PI), PI);
    }

    proptest! {
        #[test]
        fn round_trip_any_length(len in 2usize..48, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let s = rfft(&x).unwrap();
            prop_assert_eq!(s.bin_count(), len / 2 + 1);
            for bin in &s.bins {
                prop_assert!(bin.phase > -PI && bin.phase <= PI);
                prop_assert!(bin.amplitude >= 0.0);
            }
            let y = irfft(&s);
            for (a, b) in x.iter().zip(&y) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn decompose_identity_and_constant_fixpoint(len in 3usize..40, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = {
                let max_w = len.min(11);
                let mut w = rng.gen_range(1..=max_w);
                if w % 2 == 0 { w -= 1; }
                w.max(1)
            };
            let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let d = decompose(&[x.clone()], w).unwrap();
            for i in 0..len {
                prop_assert!((d.trend[0][i] + d.residual[0][i] - x[i]).abs() < 1e-12);
            }
            let c = vec![rng.gen_range(-3.0..3.0); len];
            let dc = decompose(&[c.clone()], w).unwrap();
            for i in 0..len {
                prop_assert!((dc.trend[0][i] - c[i]).abs() < 1e-12);
                prop_assert!(dc.residual[0][i].abs() < 1e-12);
            }
        }
    }
}
