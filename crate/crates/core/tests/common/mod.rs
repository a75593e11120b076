//! Independent oracles shared by integration tests. Everything here is a
//! deliberately plain transcription of textbook formulas, kept free of the
//! library's own code paths.

#![allow(dead_code)]

/// |H(e^{j 2 pi f/fs})| by direct trigonometric summation of the transfer
/// function polynomials.
pub fn magnitude_oracle(b: &[f64], a: &[f64], f_hz: f64, fs: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI * f_hz / fs;
    let eval = |c: &[f64]| {
        let re: f64 = c.iter().enumerate().map(|(k, &v)| v * (w * k as f64).cos()).sum();
        let im: f64 = c.iter().enumerate().map(|(k, &v)| -v * (w * k as f64).sin()).sum();
        (re, im)
    };
    let (nr, ni) = eval(b);
    let (dr, di) = eval(a);
    ((nr * nr + ni * ni) / (dr * dr + di * di)).sqrt()
}

/// Lag (in samples, y relative to x) of the cross-correlation peak over
/// lags in [-max_lag, max_lag], restricted to the interior of both signals.
pub fn xcorr_peak_lag(x: &[f64], y: &[f64], max_lag: usize, margin: usize) -> i64 {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    let mut best = (f64::NEG_INFINITY, 0i64);
    for lag in -(max_lag as i64)..=(max_lag as i64) {
        let mut acc = 0.0;
        for t in margin..n - margin {
            let s = t as i64 + lag;
            if s >= margin as i64 && (s as usize) < n - margin {
                acc += x[t] * y[s as usize];
            }
        }
        if acc > best.0 {
            best = (acc, lag);
        }
    }
    best.1
}

/// Amplitude of a sinusoidal signal from its RMS over an interior stretch of
/// whole cycles: amplitude = rms * sqrt(2).
pub fn sinusoid_amplitude(x: &[f64], fs: f64, freq_hz: f64, margin: usize) -> f64 {
    let cycle = fs / freq_hz;
    let avail = x.len() - 2 * margin;
    let n_cycles = (avail as f64 / cycle).floor().max(1.0);
    let take = (n_cycles * cycle).round() as usize;
    let seg = &x[margin..margin + take.min(avail)];
    let rms = (seg.iter().map(|v| v * v).sum::<f64>() / seg.len() as f64).sqrt();
    rms * std::f64::consts::SQRT_2
}

/// Solve A x = b by Gaussian elimination with partial pivoting; row-major A.
pub fn gaussian_elimination_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(row, &bi)| {
            let mut r = row.clone();
            r.push(bi);
            r
        })
        .collect();
    for col in 0..n {
        let (pivot, max) = (col..n)
            .map(|r| (r, m[r][col].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        if max < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        for row in 0..n {
            if row != col {
                let factor = m[row][col] / m[col][col];
                for k in col..=n {
                    m[row][k] -= factor * m[col][k];
                }
            }
        }
    }
    Some((0..n).map(|i| m[i][n] / m[i][i]).collect())
}

/// Exact-summation binomial CDF with p = 1/2: P(X <= k) for X ~ Bin(n, 0.5),
/// running the pmf recurrence term_{j+1} = term_j * (n-j)/(j+1) with the
/// term held as mantissa * 2^exponent so large n neither overflows the
/// binomial coefficient nor underflows the 2^-n scale.
pub fn binomial_cdf_half(k: usize, n: usize) -> f64 {
    let mut mant = 1.0f64;
    let mut exp = -(n as i64); // term value = mant * 2^exp
    let mut acc = 0.0;
    for j in 0..=k.min(n) {
        if exp > -1020 {
            acc += mant * (exp as f64).exp2();
        }
        mant = mant * (n - j) as f64 / (j + 1) as f64;
        while mant >= 2.0 {
            mant *= 0.5;
            exp += 1;
        }
        while mant > 0.0 && mant < 1.0 {
            mant *= 2.0;
            exp -= 1;
        }
    }
    acc
}

/// Smallest k with CDF(k; n, 0.5) >= 1 - alpha, divided by n.
pub fn significance_threshold_oracle(n: usize, alpha: f64) -> f64 {
    for k in 0..=n {
        if binomial_cdf_half(k, n) >= 1.0 - alpha {
            return k as f64 / n as f64;
        }
    }
    1.0
}

/// Two-sided binomial band around 0.5: accuracies inside
/// [lo/n, hi/n] with P(X < lo) <= alpha/2 and P(X > hi) <= alpha/2.
pub fn binomial_band_half(n: usize, alpha: f64) -> (f64, f64) {
    let mut lo = 0;
    while binomial_cdf_half(lo, n) < alpha / 2.0 {
        lo += 1;
    }
    let mut hi = n;
    while hi > 0 && 1.0 - binomial_cdf_half(hi - 1, n) < alpha / 2.0 {
        hi -= 1;
    }
    (lo as f64 / n as f64, hi as f64 / n as f64)
}

/// Sample Pearson correlation by the textbook formula.
pub fn pearson_oracle(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va * vb).sqrt()
}
