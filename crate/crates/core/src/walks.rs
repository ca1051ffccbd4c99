//! Gaussian random walks against curved barriers.
//!
//! Barriers: the increasing upper barrier `a_j^{J,C}` and the two-sided
//! entropic envelope `(u_k, l_k)` with exponents 1/10 and 9/10. Estimators: the
//! ballot probability, the Girsanov pair (drifted event vs tilted driftless
//! walk) and the envelope probability with an exponentially tilted sampler.
//!
//! Paths are simulated in fixed-size chunks, each with its own counter block of
//! the walk stream, so results do not depend on the number of threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::auxfield::{default_delta, tau, tau_r};
use crate::error::{Error, Result};
use crate::sampling::{Domain, RngStream};

/// Exponent of the upper envelope offset.
pub const ALPHA_MINUS: f64 = 0.1;
/// Exponent of the lower envelope offset.
pub const ALPHA_PLUS: f64 = 0.9;

const CHUNK: usize = 4096;

/// `a_j^{J,C}`: `C + j^{1/100}` up to `J/2`, then `C + (J-j)^{1/100} - ¾ log J`.
pub fn barrier_a(j: usize, big_j: usize, c: f64) -> Result<f64> {
    if j == 0 || j > big_j {
        return Err(Error::Domain(format!("barrier index {j} outside 1..={big_j}")));
    }
    if !(c > 0.0) {
        return Err(Error::Domain(format!("barrier constant must be positive, got {c}")));
    }
    let g = |x: usize| (x as f64).powf(0.01);
    Ok(if 2 * j <= big_j {
        c + g(j)
    } else {
        c + g(big_j - j) - 0.75 * (big_j as f64).ln()
    })
}

/// Harmonic number for possibly huge arguments.
pub fn harmonic(p: u128) -> f64 {
    if p <= 1 << 20 {
        tau(p as usize)
    } else {
        let x = p as f64;
        x.ln() + 0.577_215_664_901_532_9 + 0.5 / x - 1.0 / (12.0 * x * x)
    }
}

/// Tilted barrier `A_j^{J,C} = τ(b^j) + a_j^{J,C}`.
pub fn barrier_big_a(j: usize, big_j: usize, c: f64, b: u32) -> Result<f64> {
    if b < 2 {
        return Err(Error::Domain(format!("ladder base must be at least 2, got {b}")));
    }
    let p = (b as u128)
        .checked_pow(j as u32)
        .ok_or_else(|| Error::Domain(format!("{b}^{j} overflows")))?;
    Ok(harmonic(p) + barrier_a(j, big_j, c)?)
}

/// Time parametrisation of a walk observed at integer indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Clock {
    /// `t_k = k - start + E_k`.
    Index { errors: Option<Vec<f64>> },
    /// `t_k = τ^{(start)}_k` with the default block exponent.
    Dyadic,
    /// Explicit times, one per observed index.
    Explicit { times: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierKind {
    UpperAJC,
    EnvelopeUNLN,
}

/// Barrier arrays over the observed indices `start..=end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierSpec {
    pub kind: BarrierKind,
    /// First observed index (`r` for envelopes, 1 for `a^{J,C}`).
    pub start: usize,
    /// Last observed index (`N` or `J`).
    pub end: usize,
    /// `C` or `υ`.
    pub width: f64,
    pub alpha_minus: f64,
    pub alpha_plus: f64,
    pub upper: Vec<f64>,
    pub lower: Option<Vec<f64>>,
    pub clock: Clock,
}

impl BarrierSpec {
    pub fn len(&self) -> usize {
        self.upper.len()
    }

    pub fn is_empty(&self) -> bool {
        self.upper.is_empty()
    }

    pub fn upper_at(&self, k: usize) -> f64 {
        self.upper[k - self.start]
    }

    pub fn lower_at(&self, k: usize) -> f64 {
        self.lower.as_ref().map_or(f64::NEG_INFINITY, |l| l[k - self.start])
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    /// Observation times relative to `t_start = 0`, restricted to `from..=end`.
    pub fn times_from(&self, from: usize) -> Result<Vec<f64>> {
        if from < self.start || from > self.end {
            return Err(Error::Domain(format!(
                "index {from} outside {}..={}",
                self.start, self.end
            )));
        }
        let times: Vec<f64> = match &self.clock {
            Clock::Index { errors } => (from..=self.end)
                .map(|k| {
                    let e = errors.as_ref().map_or(0.0, |e| e[k - self.start]);
                    (k - from) as f64 + e
                })
                .collect(),
            Clock::Dyadic => (from..=self.end).map(|k| tau_r(from, k, default_delta)).collect(),
            Clock::Explicit { times } => {
                let t0 = times[from - self.start];
                times[from - self.start..].iter().map(|t| t - t0).collect()
            }
        };
        check_clock(&times, true)?;
        Ok(times)
    }

    /// Whether `x_k`, observed at `from..=end`, stays within the barriers.
    pub fn contains(&self, from: usize, xs: &[f64]) -> bool {
        xs.iter().enumerate().all(|(i, &x)| {
            let k = from + i;
            x >= self.lower_at(k) && x <= self.upper_at(k)
        })
    }
}

fn check_clock(times: &[f64], allow_zero_start: bool) -> Result<()> {
    for (i, &t) in times.iter().enumerate() {
        let floor_ok = if i == 0 && allow_zero_start { t >= 0.0 } else { t > 0.0 };
        if !floor_ok || (i > 0 && t <= times[i - 1]) || !t.is_finite() {
            return Err(Error::Clock(i));
        }
    }
    Ok(())
}

/// Upper barrier `a_j^{J,C}` for `j = 1..=J`, observed at the tilted times
/// `τ(b^j)` (shifted so that `j = 1` is time 0).
pub fn upper_barrier(big_j: usize, c: f64, b: u32) -> Result<BarrierSpec> {
    if big_j < 1 {
        return Err(Error::Domain("J must be at least 1".into()));
    }
    let upper = (1..=big_j).map(|j| barrier_a(j, big_j, c)).collect::<Result<Vec<_>>>()?;
    let times = (1..=big_j)
        .map(|j| {
            (b as u128)
                .checked_pow(j as u32)
                .map(harmonic)
                .ok_or_else(|| Error::Domain(format!("{b}^{j} overflows")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BarrierSpec {
        kind: BarrierKind::UpperAJC,
        start: 1,
        end: big_j,
        width: c,
        alpha_minus: ALPHA_MINUS,
        alpha_plus: ALPHA_PLUS,
        upper,
        lower: None,
        clock: Clock::Explicit { times },
    })
}

/// Entropic envelope `(u_k, l_k)` for `k = r..=N`:
/// `u_k = υ - (k-r)^{1/10}`, `l_k = -υ - (k-r)^{9/10}` up to `⌊N/2⌋`, then
/// `υ - (N-k)^{1/10} - ¾ log N` and `-υ - (N-k)^{9/10} - ¾ log N`.
pub fn envelope(big_n: usize, r: usize, upsilon: f64) -> Result<BarrierSpec> {
    if big_n < 2 * r || big_n < 2 {
        return Err(Error::Domain(format!("need N >= 2r, got N = {big_n}, r = {r}")));
    }
    if !(upsilon > 0.0) {
        return Err(Error::Domain(format!("upsilon must be positive, got {upsilon}")));
    }
    let half = big_n / 2;
    let shift = 0.75 * (big_n as f64).ln();
    let (mut upper, mut lower) = (Vec::new(), Vec::new());
    for k in r..=big_n {
        if k <= half {
            let d = (k - r) as f64;
            upper.push(upsilon - d.powf(ALPHA_MINUS));
            lower.push(-upsilon - d.powf(ALPHA_PLUS));
        } else {
            let d = (big_n - k) as f64;
            upper.push(upsilon - d.powf(ALPHA_MINUS) - shift);
            lower.push(-upsilon - d.powf(ALPHA_PLUS) - shift);
        }
    }
    Ok(BarrierSpec {
        kind: BarrierKind::EnvelopeUNLN,
        start: r,
        end: big_n,
        width: upsilon,
        alpha_minus: ALPHA_MINUS,
        alpha_plus: ALPHA_PLUS,
        upper,
        lower: Some(lower),
        clock: Clock::Dyadic,
    })
}

/// Walk observed at `t_0 = 0 < t_1 < … < t_N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedWalk {
    pub clock: Vec<f64>,
    pub increments: Vec<f64>,
    pub path: Vec<f64>,
}

/// Gaussian walk at times `t_j = j + E_j`, `j = 1..=N`, with `W_0 = 0`.
pub fn simulate_walk(big_n: usize, clock_errors: &[f64], stream: &mut RngStream) -> Result<TimedWalk> {
    if clock_errors.len() != big_n {
        return Err(Error::Shape(format!(
            "{} clock errors for {big_n} steps",
            clock_errors.len()
        )));
    }
    let mut clock = vec![0.0];
    clock.extend((1..=big_n).map(|j| j as f64 + clock_errors[j - 1]));
    check_clock(&clock, true)?;
    let mut increments = Vec::with_capacity(big_n);
    let mut path = vec![0.0];
    for j in 1..=big_n {
        let dw = (clock[j] - clock[j - 1]).sqrt() * stream.standard_normal();
        increments.push(dw);
        path.push(path[j - 1] + dw);
    }
    Ok(TimedWalk {
        clock,
        increments,
        path,
    })
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub stderr: f64,
    pub reps: usize,
    /// Paths with a nonzero contribution.
    pub hits: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    sum: f64,
    sum_sq: f64,
    hits: usize,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.sum += x;
        self.sum_sq += x * x;
        self.hits += usize::from(x != 0.0);
    }

    fn merge(mut self, o: Moments) -> Moments {
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
        self.hits += o.hits;
        self
    }

    fn estimate(self, reps: usize) -> Estimate {
        let n = reps as f64;
        let mean = self.sum / n;
        let var = if reps > 1 {
            ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        Estimate {
            estimate: mean,
            stderr: (var / n).sqrt(),
            reps,
            hits: self.hits,
        }
    }
}

/// Run `reps` independent path functionals in deterministic chunks.
fn monte_carlo<F>(seed: u64, salt: u64, reps: usize, f: F) -> Estimate
where
    F: Fn(&mut RngStream) -> f64 + Sync,
{
    let chunks = reps.div_ceil(CHUNK);
    let parts: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut stream = RngStream::with_domain(seed, Domain::Walks, salt).at(c as u64);
            let len = CHUNK.min(reps - c * CHUNK);
            let mut m = Moments::default();
            for _ in 0..len {
                m.push(f(&mut stream));
            }
            m
        })
        .collect();
    parts.into_iter().fold(Moments::default(), Moments::merge).estimate(reps)
}

/// `P(W_j >= 0 for j = 1..=N)` for a unit-variance Gaussian walk.
pub fn ballot_prob(big_n: usize, reps: usize, seed: u64) -> Result<Estimate> {
    if big_n == 0 || reps == 0 {
        return Err(Error::InvalidParameter("need N >= 1 and reps >= 1".into()));
    }
    Ok(monte_carlo(seed, 0xba11_07, reps, |s| {
        let mut w = 0.0;
        for _ in 0..big_n {
            w += s.standard_normal();
            if w < 0.0 {
                return 0.0;
            }
        }
        1.0
    }))
}

/// Both sides of the Girsanov identity on one barrier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GirsanovPair {
    pub direct: Estimate,
    pub tilted: Estimate,
    /// Mean of `W_T + c T` over the drifted paths; zero if the drift is right.
    pub drift_check: Estimate,
    /// Terminal time `T = t_N - t_k`.
    pub horizon: f64,
}

impl GirsanovPair {
    pub fn combined_se(&self) -> f64 {
        self.direct.stderr.hypot(self.tilted.stderr)
    }

    /// `|p_direct - p_tilted|` in combined standard errors.
    pub fn discrepancy(&self) -> f64 {
        let d = (self.direct.estimate - self.tilted.estimate).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.combined_se()
        }
    }
}

/// `Ev(k,z) = {l_j <= d W_{t_j} - t_j + z <= u_j, j = k..=N}` estimated two ways:
/// directly, and as `E[e^{-c W_T - c²T/2} 1_{GEv(k,z)}]` with `c = 1/d` over the
/// driftless walk, where `GEv` drops the `-t_j` term.
pub fn girsanov_pair(
    k: usize,
    spec: &BarrierSpec,
    z: f64,
    d: f64,
    reps: usize,
    seed: u64,
) -> Result<GirsanovPair> {
    if !(d > 0.0) || reps == 0 {
        return Err(Error::InvalidParameter("need d > 0 and reps >= 1".into()));
    }
    let times = spec.times_from(k)?;
    let horizon = *times.last().expect("non-empty");
    let c = 1.0 / d;
    let steps: Vec<f64> = times.windows(2).map(|w| (w[1] - w[0]).sqrt()).collect();
    let inside = |j: usize, x: f64| x >= spec.lower_at(k + j) && x <= spec.upper_at(k + j);

    let direct = monte_carlo(seed, 0x6769_7231, reps, |s| {
        let mut w = 0.0;
        if !inside(0, z) {
            return 0.0;
        }
        for (j, sd) in steps.iter().enumerate() {
            w += sd * s.standard_normal();
            if !inside(j + 1, d * w - times[j + 1] + z) {
                return 0.0;
            }
        }
        1.0
    });
    let tilted = monte_carlo(seed, 0x6769_7232, reps, |s| {
        let mut w = 0.0;
        if !inside(0, z) {
            return 0.0;
        }
        for (j, sd) in steps.iter().enumerate() {
            w += sd * s.standard_normal();
            if !inside(j + 1, d * w + z) {
                return 0.0;
            }
        }
        (-c * w - 0.5 * c * c * horizon).exp()
    });
    // Drifted paths W - c t, unconstrained: W_T + c T must be centred.
    let drift_check = monte_carlo(seed, 0x6769_7233, reps.min(1 << 16), |s| {
        let mut w = 0.0;
        for (j, sd) in steps.iter().enumerate() {
            w += sd * s.standard_normal() - c * (times[j + 1] - times[j]);
        }
        w + c * horizon
    });
    Ok(GirsanovPair {
        direct,
        tilted,
        drift_check,
        horizon,
    })
}

/// Envelope probability estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeEstimate {
    pub estimate: Estimate,
    /// Drift per unit time of the sampling walk.
    pub tilt: f64,
    /// Set when no path contributed; the estimate is then 0.
    pub zero_warning: bool,
}

fn envelope_common(spec: &BarrierSpec, d: f64, reps: usize, seed: u64, mu: f64) -> Result<EnvelopeEstimate> {
    if spec.kind != BarrierKind::EnvelopeUNLN {
        return Err(Error::InvalidParameter("envelope estimator needs an envelope barrier".into()));
    }
    if !(d > 0.0) || reps == 0 {
        return Err(Error::InvalidParameter("need d > 0 and reps >= 1".into()));
    }
    let times = spec.times_from(spec.start)?;
    let horizon = *times.last().expect("non-empty");
    let steps: Vec<(f64, f64)> = times.windows(2).map(|w| (w[1] - w[0], (w[1] - w[0]).sqrt())).collect();
    let start = spec.start;
    let estimate = monte_carlo(seed, 0x656e_7631, reps, |s| {
        if !spec.contains(start, &[0.0]) {
            return 0.0;
        }
        let mut w = 0.0;
        for (j, &(dt, sd)) in steps.iter().enumerate() {
            w += sd * s.standard_normal() + mu * dt;
            let x = d * w;
            let k = start + j + 1;
            if x < spec.lower_at(k) || x > spec.upper_at(k) {
                return 0.0;
            }
        }
        // dP/dQ for a walk sampled with drift mu.
        (-mu * w + 0.5 * mu * mu * horizon).exp()
    });
    let zero_warning = estimate.hits == 0;
    if zero_warning {
        log::warn!(
            "envelope estimate is zero after {reps} paths (N = {}, r = {})",
            spec.end,
            spec.start
        );
    }
    Ok(EnvelopeEstimate {
        estimate,
        tilt: mu,
        zero_warning,
    })
}

/// `P(l_j <= d W_{t_j} <= u_j, j = r..=N)` with an exponentially tilted
/// sampler whose drift aims the path at the centre of the final window.
pub fn envelope_event_prob(spec: &BarrierSpec, d: f64, reps: usize, seed: u64) -> Result<EnvelopeEstimate> {
    let times = spec.times_from(spec.start)?;
    let horizon = *times.last().expect("non-empty");
    let target = 0.5 * (spec.upper_at(spec.end) + spec.lower_at(spec.end));
    let mu = if horizon > 0.0 { target / (d * horizon) } else { 0.0 };
    envelope_common(spec, d, reps, seed, mu)
}

/// The same probability by plain Monte Carlo.
pub fn envelope_event_prob_direct(spec: &BarrierSpec, d: f64, reps: usize, seed: u64) -> Result<EnvelopeEstimate> {
    envelope_common(spec, d, reps, seed, 0.0)
}

/// Coupled comparison of two envelope widths on identical paths: fraction of
/// paths inside the narrow envelope and inside the wide one.
pub fn envelope_pair_direct(
    narrow: &BarrierSpec,
    wide: &BarrierSpec,
    d: f64,
    reps: usize,
    seed: u64,
) -> Result<(Estimate, Estimate, usize)> {
    if narrow.start != wide.start || narrow.end != wide.end {
        return Err(Error::Shape("envelopes cover different index ranges".into()));
    }
    let times = narrow.times_from(narrow.start)?;
    let steps: Vec<f64> = times.windows(2).map(|w| (w[1] - w[0]).sqrt()).collect();
    let start = narrow.start;
    let mut violations = 0usize;
    let (mut a, mut b) = (Moments::default(), Moments::default());
    for c in 0..reps.div_ceil(CHUNK) {
        let mut stream = RngStream::with_domain(seed, Domain::Walks, 0x656e_7632).at(c as u64);
        for _ in 0..CHUNK.min(reps - c * CHUNK) {
            let mut xs = vec![0.0];
            let mut w = 0.0;
            for sd in &steps {
                w += sd * stream.standard_normal();
                xs.push(d * w);
            }
            let (in_n, in_w) = (narrow.contains(start, &xs), wide.contains(start, &xs));
            violations += usize::from(in_n && !in_w);
            a.push(f64::from(u8::from(in_n)));
            b.push(f64::from(u8::from(in_w)));
        }
    }
    Ok((a.estimate(reps), b.estimate(reps), violations))
}
