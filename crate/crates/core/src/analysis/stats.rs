use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub rho: f64,
    /// Two-sided, from the t approximation with `n − 2` degrees of freedom.
    pub p_value: f64,
    pub n: usize,
}

fn check_pairs(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::RowCountMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData(format!("{} pairs; need at least 3", x.len())));
    }
    if let Some(pos) = x.iter().chain(y).position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: pos % x.len(),
            col: pos / x.len(),
        });
    }
    Ok(())
}

/// 1-based ranks with ties sharing the average of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        order[start..end].iter().for_each(|&i| ranks[i] = avg);
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantInput("the correlation"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation> {
    check_pairs(x, y)?;
    let rho = pearson(&average_ranks(x), &average_ranks(y))?;
    let n = x.len();
    let df = (n - 2) as f64;
    // A perfect rank correlation has an unbounded t statistic.
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        t_two_sided(rho * (df / (1.0 - rho * rho)).sqrt(), df)
    };
    Ok(Correlation { rho, p_value, n })
}

fn t_two_sided(t: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// R² of the ordinary least-squares fit `response ≈ a + b · predictor`
/// (with `log_x`, the predictor is replaced by `ln(1 + predictor)`).
pub fn variance_explained(predictor: &[f64], response: &[f64], log_x: bool) -> Result<f64> {
    check_pairs(predictor, response)?;
    let x: Vec<f64> = if log_x {
        if let Some(&bad) = predictor.iter().find(|&&v| v <= -1.0) {
            return Err(Error::InvalidConfig(format!("log1p undefined for predictor {bad}")));
        }
        predictor.iter().map(|v| v.ln_1p()).collect()
    } else {
        predictor.to_vec()
    };
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    if x.iter().all(|&v| v == x[0]) {
        return Err(Error::ConstantInput("the regression slope"));
    }
    let my = response.iter().sum::<f64>() / n;
    let syy: f64 = response.iter().map(|v| (v - my) * (v - my)).sum();
    if syy == 0.0 {
        // A constant response is fitted perfectly by the intercept alone.
        return Ok(0.0);
    }
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(response).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok((sxy * sxy / (sxx * syy)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    /// Midpoint of the smallest and largest x in the bin.
    pub x_mid: f64,
    pub y_mean: f64,
    pub count: usize,
}

/// Equal-population bins over `x`; bin sizes differ by at most one.
pub fn binned_curve(x: &[f64], y: &[f64], bins: usize) -> Result<Vec<Bin>> {
    if bins < 2 {
        return Err(Error::InvalidConfig(format!("bins = {bins} must be at least 2")));
    }
    if x.len() != y.len() {
        return Err(Error::RowCountMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < bins {
        return Err(Error::InsufficientData(format!("{} concepts for {bins} bins", x.len())));
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let n = x.len();
    Ok((0..bins)
        .map(|b| {
            let members = &order[b * n / bins..(b + 1) * n / bins];
            let lo = x[members[0]];
            let hi = x[*members.last().unwrap()];
            Bin {
                x_mid: (lo + hi) / 2.0,
                y_mean: members.iter().map(|&i| y[i]).sum::<f64>() / members.len() as f64,
                count: members.len(),
            }
        })
        .collect())
}
