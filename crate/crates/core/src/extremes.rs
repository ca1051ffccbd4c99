//! Maxima of the log-characteristic-polynomial field, their centering, ladder
//! summaries, the centering fit and the FHK reference density.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{bessel_k0, integrate};
use crate::opuc::FieldSnapshot;
use crate::sampling::ReplicaTag;
use crate::stats::{mean, quantile_sorted, sorted};

/// `log n - ¾ log log n`.
pub fn centering_sequence(n: usize) -> Result<f64> {
    if n < 3 {
        return Err(Error::Domain(format!("centering needs n >= 3, got {n}")));
    }
    let l = (n as f64).ln();
    Ok(l - 0.75 * l.ln())
}

/// Predicted location of the maximum before rescaling:
/// `sqrt(2/β) (log n - ¾ log log n)`.
pub fn centering(n: usize, beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
    }
    Ok((2.0 / beta).sqrt() * centering_sequence(n)?)
}

/// Same formula for real `log n`, used where `n` is not an integer.
pub fn centering_from_log(log_n: f64, beta: f64) -> Result<f64> {
    if !(log_n > 1.0) {
        return Err(Error::Domain(format!("need log n > 1, got {log_n}")));
    }
    Ok((2.0 / beta).sqrt() * (log_n - 0.75 * log_n.ln()))
}

/// Which extreme a statistic refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Re,
    ImPos,
    ImNeg,
    Count,
}

impl Statistic {
    pub const ALL: [Statistic; 4] = [Statistic::Re, Statistic::ImPos, Statistic::ImNeg, Statistic::Count];

    pub fn as_str(self) -> &'static str {
        match self {
            Statistic::Re => "re",
            Statistic::ImPos => "im_pos",
            Statistic::ImNeg => "im_neg",
            Statistic::Count => "count",
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Statistic::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown statistic {s:?}")))
    }
}

/// Extremes of one replica's `log X_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremeRecord {
    pub replica: u64,
    pub seed: u64,
    pub n: usize,
    pub beta: f64,
    pub grid_size: usize,
    pub re_max: f64,
    pub im_max: f64,
    pub im_neg_max: f64,
    pub argmax_theta_re: f64,
    pub argmax_theta_im: f64,
    pub argmax_theta_im_neg: f64,
    /// `sqrt(β/2) (max - centering(n, β))` for Re, +Im, -Im.
    pub centered_re: f64,
    pub centered_im: f64,
    pub centered_im_neg: f64,
    /// `(max Im - min Im) / π`.
    pub count_sup: f64,
    /// `π sqrt(β/8) count_sup - (log n - ¾ log log n)`.
    pub centered_count: f64,
    pub excluded_count: usize,
}

impl ExtremeRecord {
    pub fn tag(&self) -> ReplicaTag {
        ReplicaTag {
            seed: self.seed,
            replica: self.replica,
        }
    }

    pub fn centered(&self, stat: Statistic) -> f64 {
        match stat {
            Statistic::Re => self.centered_re,
            Statistic::ImPos => self.centered_im,
            Statistic::ImNeg => self.centered_im_neg,
            Statistic::Count => self.centered_count,
        }
    }
}

/// Maximum over non-excluded indices; ties go to the lowest index.
fn arg_max<I: Iterator<Item = (usize, f64)>>(it: I) -> Option<(usize, f64)> {
    it.fold(None, |best, (i, v)| match best {
        Some((_, b)) if v <= b => best,
        _ => Some((i, v)),
    })
}

/// Extract Re, +Im and -Im maxima of a `log X_n` snapshot and centre them.
pub fn extract(snapshot: &FieldSnapshot) -> Result<ExtremeRecord> {
    let n = snapshot.n_total;
    let beta = snapshot.beta;
    let g = snapshot.grid_size();
    let live = || (0..g).filter(|&s| !snapshot.excluded[s]);
    let (s_re, re_max) = arg_max(live().map(|s| (s, snapshot.re_log[s]))).ok_or(Error::EmptyField)?;
    let (s_im, im_max) = arg_max(live().map(|s| (s, snapshot.im_log[s]))).ok_or(Error::EmptyField)?;
    let (s_neg, im_neg_max) = arg_max(live().map(|s| (s, -snapshot.im_log[s]))).ok_or(Error::EmptyField)?;
    let loc = centering(n, beta)?;
    let scale = (beta / 2.0).sqrt();
    let count_sup = (im_max + im_neg_max) / PI;
    let angle = |s: usize| TAU * s as f64 / g as f64;
    Ok(ExtremeRecord {
        replica: snapshot.tag.replica,
        seed: snapshot.tag.seed,
        n,
        beta,
        grid_size: g,
        re_max,
        im_max,
        im_neg_max,
        argmax_theta_re: angle(s_re),
        argmax_theta_im: angle(s_im),
        argmax_theta_im_neg: angle(s_neg),
        centered_re: scale * (re_max - loc),
        centered_im: scale * (im_max - loc),
        centered_im_neg: scale * (im_neg_max - loc),
        count_sup,
        centered_count: PI * (beta / 8.0).sqrt() * count_sup - centering_sequence(n)?,
        excluded_count: snapshot.excluded_count(),
    })
}

/// Summary of one statistic in one `(β, n)` cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub beta: f64,
    pub n: usize,
    pub stat: Statistic,
    pub median: f64,
    pub mean: f64,
    pub iqr: f64,
    pub p05: f64,
    pub p95: f64,
    pub replicas: usize,
}

impl CellSummary {
    pub fn from_values(beta: f64, n: usize, stat: Statistic, values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::MissingCell(format!("beta = {beta}, n = {n}, stat = {stat}")));
        }
        let s = sorted(values);
        Ok(Self {
            beta,
            n,
            stat,
            median: quantile_sorted(&s, 0.5),
            mean: mean(&s),
            iqr: quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25),
            p05: quantile_sorted(&s, 0.05),
            p95: quantile_sorted(&s, 0.95),
            replicas: s.len(),
        })
    }
}

/// Per-cell summaries ordered by `(β, n, stat)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderSummary {
    pub cells: Vec<CellSummary>,
}

impl LadderSummary {
    pub fn get(&self, beta: f64, n: usize, stat: Statistic) -> Result<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.beta == beta && c.n == n && c.stat == stat)
            .ok_or_else(|| Error::MissingCell(format!("beta = {beta}, n = {n}, stat = {stat}")))
    }
}

/// Group records by `(β, n)` and summarise every centered statistic.
pub fn ensemble_summary(records: &[ExtremeRecord]) -> Result<LadderSummary> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no extreme records".into()));
    }
    let mut groups: BTreeMap<(u64, usize), Vec<&ExtremeRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.beta.to_bits(), r.n)).or_default().push(r);
    }
    let mut cells = Vec::new();
    for ((beta_bits, n), rs) in groups {
        let beta = f64::from_bits(beta_bits);
        for stat in Statistic::ALL {
            let vals: Vec<f64> = rs.iter().map(|r| r.centered(stat)).collect();
            cells.push(CellSummary::from_values(beta, n, stat, &vals)?);
        }
    }
    cells.sort_by(|a, b| a.beta.total_cmp(&b.beta).then(a.n.cmp(&b.n)).then(a.stat.cmp(&b.stat)));
    Ok(LadderSummary { cells })
}

/// Least-squares fit `median ≈ a log n + b log log n + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenteringFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub residual_norm: f64,
}

/// Fit the centering law to `(n, median)` pairs.
pub fn fit_centering(points: &[(usize, f64)]) -> Result<CenteringFit> {
    let mut distinct: Vec<usize> = points.iter().map(|p| p.0).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Rank(format!(
            "{} distinct n values, need at least 3",
            distinct.len()
        )));
    }
    if let Some(&(n, _)) = points.iter().find(|p| p.0 < 3) {
        return Err(Error::Domain(format!("n = {n} has log log n <= 0")));
    }
    let rows = points.len();
    let design = DMatrix::from_fn(rows, 3, |i, j| {
        let l = (points[i].0 as f64).ln();
        match j {
            0 => l,
            1 => l.ln(),
            _ => 1.0,
        }
    });
    let y = DVector::from_iterator(rows, points.iter().map(|p| p.1));
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-12 * smax {
        return Err(Error::Rank("design matrix is singular".into()));
    }
    let coef = svd.solve(&y, 1e-12 * smax).map_err(|e| Error::Rank(e.to_string()))?;
    let residual_norm = (&design * &coef - &y).norm();
    Ok(CenteringFit {
        a: coef[0],
        b: coef[1],
        c: coef[2],
        residual_norm,
    })
}

/// `p(x) = e^x ∫ e^{-2 e^{x/2} cosh y} dy` by adaptive quadrature, the
/// density of minus a sum of two independent standard Gumbel variables.
pub fn fhk_density(x: f64) -> Result<f64> {
    let a = 2.0 * (0.5 * x).exp();
    // Beyond y_max the integrand is below e^{-750}.
    let y_max = (750.0 / a).max(1.0).acosh() + 1.0;
    let r = integrate(|y: f64| (-a * y.cosh()).exp(), 0.0, y_max, 1e-300, 1e-13)?;
    Ok(2.0 * x.exp() * r.value)
}

/// `p(x) = 2 e^x K_0(2 e^{x/2})`.
pub fn fhk_density_bessel(x: f64) -> f64 {
    2.0 * x.exp() * bessel_k0(2.0 * (0.5 * x).exp())
}
