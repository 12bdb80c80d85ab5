//! Hypothesis tests and rank utilities.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

pub fn normal_sf(x: f64) -> f64 {
    Normal::standard().sf(x)
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

pub fn student_t_sf(t: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df).expect("positive df").sf(t)
}

pub fn chi2_sf(x: f64, df: f64) -> f64 {
    ChiSquared::new(df).expect("positive df").sf(x)
}

/// Average ranks (1-based), ties share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Sizes of tie groups of length > 1.
fn tie_groups(x: &[f64]) -> Vec<usize> {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut i = 0;
    while i < s.len() {
        let mut j = i;
        while j + 1 < s.len() && s[j + 1] == s[i] {
            j += 1;
        }
        if j > i {
            out.push(j - i + 1);
        }
        i = j + 1;
    }
    out
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub statistic: f64,
    pub p_two_sided: f64,
    /// Every value identical: the statistic is infinite (p 0) or undefined (p 1).
    pub zero_variance: bool,
}

/// One-sample t-test of mean zero.
pub fn ttest_1samp(x: &[f64]) -> Result<TTest> {
    if x.len() < 2 {
        return Err(Error::invalid("t-test needs at least 2 values"));
    }
    let n = x.len() as f64;
    let m = mean(x);
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    if var == 0.0 || var.sqrt() <= 1e-14 * m.abs() {
        let p = if m == 0.0 { 1.0 } else { 0.0 };
        let t = if m == 0.0 { 0.0 } else { m.signum() * f64::INFINITY };
        return Ok(TTest {
            statistic: t,
            p_two_sided: p,
            zero_variance: true,
        });
    }
    let t = m / (var / n).sqrt();
    Ok(TTest {
        statistic: t,
        p_two_sided: (2.0 * student_t_sf(t.abs(), n - 1.0)).min(1.0),
        zero_variance: false,
    })
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

/// Shapiro-Wilk W and p-value (Royston 1995, AS R94), for 3 ≤ n ≤ 5000.
pub fn shapiro_wilk(x: &[f64]) -> Result<(f64, f64)> {
    let n = x.len();
    if !(3..=5000).contains(&n) {
        return Err(Error::invalid(format!("Shapiro-Wilk needs 3..=5000 values, got {n}")));
    }
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    if s[n - 1] - s[0] < 1e-19 {
        return Err(Error::Undefined("Shapiro-Wilk on constant data".into()));
    }
    let an = n as f64;
    let nn2 = n / 2;
    let mut a = vec![0.0; nn2 + 1];
    if n == 3 {
        a[1] = 0.5f64.sqrt();
    } else {
        const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
        const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
        let an25 = an + 0.25;
        let m: Vec<f64> = (0..=nn2)
            .map(|i| if i == 0 { 0.0 } else { normal_quantile((i as f64 - 0.375) / an25) })
            .collect();
        let summ2 = 2.0 * m[1..].iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / an.sqrt();
        let a1 = poly(&C1, rsn) - m[1] / ssumm2;
        let (i1, fac) = if n > 5 {
            let a2 = -m[2] / ssumm2 + poly(&C2, rsn);
            a[2] = a2;
            let fac = ((summ2 - 2.0 * m[1] * m[1] - 2.0 * m[2] * m[2]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2)).sqrt();
            (3, fac)
        } else {
            (2, ((summ2 - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1)).sqrt())
        };
        a[1] = a1;
        for i in i1..=nn2 {
            a[i] = -m[i] / fac;
        }
    }
    // full antisymmetric coefficient vector against the ascending sample
    let mut coef = vec![0.0; n];
    for i in 1..=nn2 {
        coef[i - 1] = -a[i];
        coef[n - i] = a[i];
    }
    let range = s[n - 1] - s[0];
    let xs: Vec<f64> = s.iter().map(|v| v / range).collect();
    let xm = mean(&xs);
    let num: f64 = coef.iter().zip(&xs).map(|(c, v)| c * v).sum();
    let ssa: f64 = coef.iter().map(|c| c * c).sum();
    let ssx: f64 = xs.iter().map(|v| (v - xm) * (v - xm)).sum();
    let w = (num * num / (ssa * ssx)).min(1.0);

    if n == 3 {
        const PI6: f64 = 1.909_859_317_102_744;
        const STQR: f64 = 1.047_197_551_196_598;
        let p = (PI6 * (w.sqrt().asin() - STQR)).max(0.0);
        return Ok((w, p));
    }
    let w1 = 1.0 - w;
    let mut y = w1.ln();
    let xx = an.ln();
    let (m, sd) = if n <= 11 {
        let gamma = poly(&[-2.273, 0.459], an);
        if y >= gamma {
            return Ok((w, 1e-99));
        }
        y = -(gamma - y).ln();
        (
            poly(&[0.544, -0.39978, 0.025054, -6.714e-4], an),
            poly(&[1.3822, -0.77857, 0.062767, -0.0020322], an).exp(),
        )
    } else {
        (
            poly(&[-1.5861, -0.31082, -0.083751, 0.0038915], xx),
            poly(&[-0.4803, -0.082676, 0.0030302], xx).exp(),
        )
    };
    Ok((w, normal_sf((y - m) / sd)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wilcoxon {
    /// min(R+, R−).
    pub statistic: f64,
    pub p_two_sided: f64,
    pub n_nonzero: usize,
    /// All differences were zero; p is reported as 1.
    pub degenerate: bool,
    pub exact: bool,
}

/// Number of subsets of {1..n} with each rank sum (exact null of R+).
fn signed_rank_counts(n: usize) -> Vec<f64> {
    let max = n * (n + 1) / 2;
    let mut c = vec![0.0; max + 1];
    c[0] = 1.0;
    for k in 1..=n {
        for s in (k..=max).rev() {
            c[s] += c[s - k];
        }
    }
    c
}

/// Two-sided Wilcoxon signed-rank test with zeros dropped. Mirrors scipy's
/// `method="auto"` without continuity correction: exact null for n ≤ 50 with
/// no ties or zeros, full sign-flip enumeration for n ≤ 13 otherwise, and the
/// tie-corrected normal approximation beyond.
pub fn wilcoxon_signed_rank(d: &[f64]) -> Result<Wilcoxon> {
    if d.is_empty() {
        return Err(Error::invalid("Wilcoxon test on no differences"));
    }
    let nz: Vec<f64> = d.iter().copied().filter(|&v| v != 0.0).collect();
    let n = nz.len();
    if n == 0 {
        return Ok(Wilcoxon {
            statistic: 0.0,
            p_two_sided: 1.0,
            n_nonzero: 0,
            degenerate: true,
            exact: true,
        });
    }
    let abs: Vec<f64> = nz.iter().map(|v| v.abs()).collect();
    let ranks = average_ranks(&abs);
    let r_plus: f64 = nz.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let statistic = r_plus.min(total - r_plus);
    let ties = tie_groups(&abs);
    let has_zero = n < d.len();
    let (p, exact) = if d.len() <= 50 && ties.is_empty() && !has_zero {
        let counts = signed_rank_counts(n);
        let all: f64 = counts.iter().sum();
        let k = r_plus.round() as usize;
        let cdf: f64 = counts[..=k].iter().sum::<f64>() / all;
        let sf: f64 = counts[k..].iter().sum::<f64>() / all;
        ((2.0 * cdf.min(sf)).min(1.0), true)
    } else if d.len() <= 13 {
        let mut le = 0usize;
        let mut ge = 0usize;
        let tol = 1e-12 * r_plus.abs().max(1.0);
        for mask in 0u32..(1 << n) {
            let s: f64 = (0..n).filter(|&i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
            if s <= r_plus + tol {
                le += 1;
            }
            if s >= r_plus - tol {
                ge += 1;
            }
        }
        let all = f64::from(1u32 << n);
        ((2.0 * (le as f64 / all).min(ge as f64 / all)).min(1.0), true)
    } else {
        let nf = n as f64;
        let mn = nf * (nf + 1.0) / 4.0;
        let tie: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
        let se = ((nf * (nf + 1.0) * (2.0 * nf + 1.0) - tie / 2.0) / 24.0).sqrt();
        let z = (r_plus - mn) / se;
        ((2.0 * normal_sf(z.abs())).min(1.0), false)
    };
    Ok(Wilcoxon {
        statistic,
        p_two_sided: p,
        n_nonzero: n,
        degenerate: false,
        exact,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spearman {
    pub rho: f64,
    /// One-sided p for positive correlation (t approximation).
    pub p_one_sided: f64,
    pub n: usize,
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    sxy / (sxx * syy).sqrt()
}

pub fn spearman_positive(x: &[f64], y: &[f64]) -> Result<Spearman> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            what: "Spearman inputs".into(),
            expected: x.len(),
            got: y.len(),
        });
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::invalid("Spearman correlation needs at least 3 pairs"));
    }
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(x) || constant(y) {
        return Err(Error::Undefined("Spearman correlation of a constant input".into()));
    }
    let rho = pearson(&average_ranks(x), &average_ranks(y)).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if rho >= 1.0 {
        0.0
    } else if rho <= -1.0 {
        1.0
    } else {
        student_t_sf(rho * (df / (1.0 - rho * rho)).sqrt(), df)
    };
    Ok(Spearman { rho, p_one_sided: p, n })
}
