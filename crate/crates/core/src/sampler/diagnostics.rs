//! Scalar-chain diagnostics: autocorrelation, integrated autocorrelation
//! time (Geyer's initial positive sequence), split R-hat and batch means.

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len().max(1) as f64
}

pub fn variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

/// Normalized autocorrelation at `lag` (biased estimator, as usual for IAT).
pub fn autocorrelation(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    if lag >= n {
        return 0.0;
    }
    let m = mean(x);
    let c0: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
    if c0 == 0.0 {
        return if lag == 0 { 1.0 } else { 0.0 };
    }
    let ck: f64 = (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum();
    ck / c0
}

/// `tau = 1 + 2 sum_k rho_k`, truncated where the paired sums
/// `rho_{2k} + rho_{2k+1}` stop being positive and kept monotone.
/// Constant chains get `tau = 1`.
pub fn integrated_autocorr_time(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 || variance(x) == 0.0 {
        return 1.0;
    }
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let mut pair = autocorrelation(x, 2 * k) + autocorrelation(x, 2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        pair = pair.min(prev);
        prev = pair;
        tau += 2.0 * pair;
        k += 1;
    }
    tau.max(1.0 / n as f64)
}

pub fn effective_sample_size(x: &[f64]) -> f64 {
    x.len() as f64 / integrated_autocorr_time(x)
}

/// Gelman-Rubin statistic on chains split in half. Returns 1 when every
/// half-chain is constant at the same value.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            [&c[..h], &c[h..2 * h]]
        })
        .filter(|h| h.len() >= 2)
        .collect();
    if halves.len() < 2 {
        return f64::NAN;
    }
    let n = halves.iter().map(|h| h.len()).min().unwrap() as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let w = mean(&halves.iter().map(|h| variance(h)).collect::<Vec<_>>());
    let b = n * variance(&means);
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Mean and its standard error from `batches` contiguous batch means.
pub fn batch_means(x: &[f64], batches: usize) -> (f64, f64) {
    let b = batches.max(2).min(x.len().max(1));
    let size = x.len() / b;
    if size == 0 {
        return (mean(x), f64::NAN);
    }
    let bm: Vec<f64> = (0..b).map(|i| mean(&x[i * size..(i + 1) * size])).collect();
    (mean(x), (variance(&bm) / b as f64).sqrt())
}
