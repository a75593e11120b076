//! Rational-rate resampling with a polyphase-evaluated Kaiser-windowed sinc
//! anti-alias/anti-image filter.

use ndarray::Array2;
use num_integer::Integer;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::signal::MultichannelSignal;

// 80 dB stopband.
const KAISER_ATTEN_DB: f64 = 80.0;

/// Resample by the rational factor `up/down`. The ratio is reduced
/// internally, so callers need not pass coprime terms. Output rate is
/// `fs * up / down` and output length `ceil(n * up / down)`; the lowpass sits
/// at the smaller of the two Nyquist rates.
pub fn resample_rational(
    signal: &MultichannelSignal,
    up: usize,
    down: usize,
) -> Result<MultichannelSignal> {
    if up < 1 || down < 1 {
        return Err(Error::InvalidRatio(format!(
            "up and down must be >= 1, got up={up}, down={down}"
        )));
    }
    let g = up.gcd(&down);
    let (up, down) = (up / g, down / g);
    if up == 1 && down == 1 {
        return Ok(signal.clone());
    }

    let n_in = signal.n_samples();
    let n_out = (n_in * up).div_ceil(down);
    let out_fs = signal.fs() * up as f64 / down as f64;

    let h = anti_alias_taps(up, down);
    let half = (h.len() - 1) / 2;

    let columns: Vec<Vec<f64>> = (0..signal.n_channels())
        .into_par_iter()
        .map(|c| {
            let x: Vec<f64> = signal.channel(c).to_vec();
            resample_channel(&x, &h, half, up, down, n_out)
        })
        .collect();

    let mut out = Array2::zeros((n_out, signal.n_channels()));
    for (c, col) in columns.iter().enumerate() {
        for (t, v) in col.iter().enumerate() {
            out[(t, c)] = *v;
        }
    }
    let mut result = MultichannelSignal::new(out, out_fs)?;
    if let Some(labels) = signal.channel_labels() {
        result = result.with_labels(labels.to_vec())?;
    }
    Ok(result)
}

/// Evaluate the polyphase sum for one channel. Output sample `m` sits at
/// high-rate index `m*down`; the symmetric filter's group delay `half` is
/// compensated so the output is phase-aligned with the input.
fn resample_channel(
    x: &[f64],
    h: &[f64],
    half: usize,
    up: usize,
    down: usize,
    n_out: usize,
) -> Vec<f64> {
    let n_in = x.len() as i64;
    let (up, down, half) = (up as i64, down as i64, half as i64);
    let mut y = Vec::with_capacity(n_out);
    for m in 0..n_out as i64 {
        let center = m * down; // position on the zero-stuffed grid
        let j_lo = ((center - half) + up - 1).div_euclid(up).max(0);
        let j_hi = ((center + half).div_euclid(up)).min(n_in - 1);
        let mut acc = 0.0;
        for j in j_lo..=j_hi {
            let k = half + center - j * up;
            acc += h[k as usize] * x[j as usize];
        }
        y.push(acc);
    }
    y
}

/// Kaiser-windowed sinc lowpass at the smaller Nyquist rate, gain `up` to
/// compensate zero-stuffing. Half-length 20*max(up, down) keeps the
/// transition narrow relative to the band of interest.
fn anti_alias_taps(up: usize, down: usize) -> Vec<f64> {
    let half = 20 * up.max(down);
    let beta = 0.1102 * (KAISER_ATTEN_DB - 8.7);
    let fc = 0.5 / up.max(down) as f64; // cycles per high-rate sample
    let denom = bessel_i0(beta);
    let m = half as f64;
    (0..=2 * half)
        .map(|k| {
            let t = k as f64 - m;
            let sinc = if t == 0.0 {
                2.0 * fc
            } else {
                (2.0 * std::f64::consts::PI * fc * t).sin() / (std::f64::consts::PI * t)
            };
            let w = bessel_i0(beta * (1.0 - (t / m) * (t / m)).max(0.0).sqrt()) / denom;
            up as f64 * sinc * w
        })
        .collect()
}

/// Modified Bessel function of the first kind, order zero, by power series.
fn bessel_i0(x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    let half_x = x / 2.0;
    for k in 1..64 {
        term *= (half_x / k as f64) * (half_x / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Express `target_fs / fs` as a reduced small-integer ratio. Errors when no
/// ratio with denominator <= 4096 reproduces the target rate to 1e-9 relative.
pub fn rational_ratio(target_fs: f64, fs: f64) -> Result<(usize, usize)> {
    if !(target_fs > 0.0) || !(fs > 0.0) {
        return Err(Error::InvalidRatio(format!(
            "rates must be positive, got target={target_fs}, fs={fs}"
        )));
    }
    let x = target_fs / fs;
    // Continued-fraction convergents.
    let (mut h0, mut h1) = (0u64, 1u64);
    let (mut k0, mut k1) = (1u64, 0u64);
    let mut frac = x;
    for _ in 0..64 {
        let a = frac.floor();
        let ai = a as u64;
        let h2 = ai.checked_mul(h1).and_then(|v| v.checked_add(h0));
        let k2 = ai.checked_mul(k1).and_then(|v| v.checked_add(k0));
        let (Some(h2), Some(k2)) = (h2, k2) else { break };
        if k2 > 4096 {
            break;
        }
        (h0, h1) = (h1, h2);
        (k0, k1) = (k1, k2);
        if (h1 as f64 / k1 as f64 - x).abs() <= 1e-9 * x {
            return Ok((h1 as usize, k1 as usize));
        }
        let rem = frac - a;
        if rem.abs() < 1e-15 {
            break;
        }
        frac = 1.0 / rem;
    }
    if k1 > 0 && (h1 as f64 / k1 as f64 - x).abs() <= 1e-9 * x {
        return Ok((h1 as usize, k1 as usize));
    }
    Err(Error::InvalidRatio(format!(
        "{target_fs} Hz is not a small rational multiple of {fs} Hz"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_and_rate_128_to_20() {
        let x = vec![0.0; 76800];
        let s = MultichannelSignal::single_channel(x, 128.0).unwrap();
        let y = resample_rational(&s, 5, 32).unwrap();
        assert_eq!(y.n_samples(), 12000);
        assert_eq!(y.fs(), 20.0);
    }

    #[test]
    fn identity_ratio_is_identity() {
        let x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let s = MultichannelSignal::single_channel(x.clone(), 128.0).unwrap();
        let y = resample_rational(&s, 1, 1).unwrap();
        assert_eq!(y.samples(), s.samples());
        assert_eq!(y.fs(), 128.0);
        // and for any equal up == down after reduction
        let y = resample_rational(&s, 7, 7).unwrap();
        assert_eq!(y.samples(), s.samples());
    }

    #[test]
    fn zero_ratio_is_error() {
        let s = MultichannelSignal::single_channel(vec![0.0; 10], 128.0).unwrap();
        match resample_rational(&s, 0, 5) {
            Err(Error::InvalidRatio(_)) => {}
            other => panic!("expected invalid-ratio error, got {other:?}"),
        }
        assert!(resample_rational(&s, 5, 0).is_err());
    }

    #[test]
    fn duration_preserved_within_one_output_sample() {
        let s = MultichannelSignal::single_channel(vec![1.0; 76800], 128.0).unwrap();
        let y = resample_rational(&s, 5, 32).unwrap();
        assert!((y.duration_s() - s.duration_s()).abs() <= 1.0 / y.fs());
    }

    #[test]
    fn ratio_resolution() {
        assert_eq!(rational_ratio(20.0, 128.0).unwrap(), (5, 32));
        assert_eq!(rational_ratio(128.0, 20.0).unwrap(), (32, 5));
        assert_eq!(rational_ratio(64.0, 64.0).unwrap(), (1, 1));
        assert_eq!(rational_ratio(20.0, 8000.0).unwrap(), (1, 400));
        assert!(rational_ratio(20.0, std::f64::consts::PI * 100.0).is_err());
    }
}
