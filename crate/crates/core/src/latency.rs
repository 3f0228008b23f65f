//! Decode latency measurement and power-law fitting.

use std::time::Instant;

use crate::codec::LatentMap;
use crate::decoder::{ArrDecoder, TargetResolution};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyPoint {
    pub height: usize,
    pub width: usize,
    /// Median wall time of one decode, in seconds.
    pub seconds: f64,
}

impl LatencyPoint {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

/// `seconds ≈ coefficient · pixels^exponent`, fitted by least squares in log-log space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub coefficient: f64,
    pub r_squared: f64,
}

/// Times `repeats` decodes per resolution after one warm-up decode.
pub fn measure_decode_latency(
    decoder: &ArrDecoder,
    z: &LatentMap,
    sizes: &[(usize, usize)],
    repeats: usize,
) -> Result<Vec<LatencyPoint>> {
    if repeats == 0 {
        return Err(invalid!("repeats must be positive"));
    }
    sizes
        .iter()
        .map(|&(h, w)| {
            let t = TargetResolution::new(h, w)?;
            decoder.decode(z, t)?;
            let mut times: Vec<f64> = (0..repeats)
                .map(|_| {
                    let start = Instant::now();
                    decoder.decode(z, t).map(|_| start.elapsed().as_secs_f64())
                })
                .collect::<Result<_>>()?;
            times.sort_by(f64::total_cmp);
            Ok(LatencyPoint {
                height: h,
                width: w,
                seconds: times[times.len() / 2],
            })
        })
        .collect()
}

pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 2 {
        return Err(invalid!("a power-law fit needs at least two points"));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(invalid!("power-law fit needs positive coordinates"));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = logs.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid!("power-law fit needs at least two distinct sizes"));
    }
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(PowerLawFit {
        exponent,
        coefficient: intercept.exp(),
        r_squared,
    })
}

pub fn fit_latency(points: &[LatencyPoint]) -> Result<PowerLawFit> {
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.pixels() as f64, p.seconds)).collect();
    fit_power_law(&xy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_power_law() {
        let pts: Vec<(f64, f64)> = [64.0f64, 128.0, 192.0, 256.0]
            .iter()
            .map(|s| (s * s, 3e-7 * (s * s).powf(1.1)))
            .collect();
        let fit = fit_power_law(&pts).unwrap();
        assert!((fit.exponent - 1.1).abs() < 1e-9);
        assert!((fit.coefficient - 3e-7).abs() < 1e-15);
        assert!((fit.r_squared - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(fit_power_law(&[(1.0, 1.0)]).is_err());
        assert!(fit_power_law(&[(2.0, 1.0), (2.0, 3.0)]).is_err());
        assert!(fit_power_law(&[(0.0, 1.0), (2.0, 3.0)]).is_err());
    }
}
