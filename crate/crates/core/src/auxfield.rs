//! The Gaussian auxiliary field coupled to `log Φ*_k`.
//!
//! ```text
//! Z_k(θ) = Σ_{j<k} N_j e^{iψ_j(θ)} / sqrt(j+1)
//! S_k(θ) = Σ_{j<k} (j+1) γ_j² e^{2iψ_j(θ)}
//! T_k(θ) = Σ_{j<k} (j+1) γ_j e^{iψ_j(θ)} (1 - sqrt((E_j+Γ_j)/β_j))
//! ```
//!
//! All three are driven by the same Prüfer phases as the log field. The
//! streaming [`AuxAccumulator`] observes a [`FieldState`] before each step;
//! [`field_z`] and [`diagnostics_st`] recompute from a stored phase history.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::opuc::{evaluate_field_with, CircleGrid, FieldSnapshot, FieldState};
use crate::sampling::{beta_shape, CoupledDraw, DrawSequence, ReplicaTag};
use crate::stats::{quantile_sorted, sorted, CompensatedSum};

/// Harmonic number `τ(p) = Σ_{m=1}^p 1/m`.
pub fn tau(p: usize) -> f64 {
    // Smallest terms first.
    (1..=p).rev().map(|m| 1.0 / m as f64).collect::<CompensatedSum>().value()
}

/// Default block exponent `Δ(l) = max(1, min(l-1, ⌊log² l⌋))`.
pub fn default_delta(l: usize) -> usize {
    let lf = (l as f64).ln();
    let d = (lf * lf).floor() as usize;
    d.min(l.saturating_sub(1)).max(1)
}

/// Dyadic clock `τ^{(r)}_j = Σ_{l=r}^{j-1} Σ_{p<2^Δ(l)} 1/(2^Δ(l) + p)`.
pub fn tau_r<F: Fn(usize) -> usize>(r: usize, j: usize, delta_fn: F) -> f64 {
    let mut acc = CompensatedSum::new();
    for l in r..j {
        let m = 1usize << delta_fn(l);
        for p in (0..m).rev() {
            acc.add(1.0 / (m + p) as f64);
        }
    }
    acc.value()
}

/// `Z_k` on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxSnapshot {
    pub tag: ReplicaTag,
    pub k: usize,
    pub z_re: Vec<f64>,
    pub z_im: Vec<f64>,
    pub tau_k: f64,
}

/// Grid suprema of `|S_k|` and `|T_k|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StDiagnostics {
    pub k: usize,
    pub sup_s: f64,
    pub sup_t: f64,
}

/// Accumulates `Z`, `S`, `T` alongside a Prüfer run and captures them at
/// checkpoints. Call [`observe`](Self::observe) with the state *before* each
/// coefficient is applied, then [`finish`](Self::finish).
#[derive(Debug, Clone)]
pub struct AuxAccumulator {
    tag: ReplicaTag,
    beta: f64,
    checkpoints: Vec<usize>,
    next: usize,
    z_re: Vec<f64>,
    z_im: Vec<f64>,
    s_re: Vec<f64>,
    s_im: Vec<f64>,
    t_re: Vec<f64>,
    t_im: Vec<f64>,
    j: usize,
    aux: Vec<AuxSnapshot>,
    st: Vec<StDiagnostics>,
}

impl AuxAccumulator {
    pub fn new(tag: ReplicaTag, beta: f64, grid_size: usize, checkpoints: &[usize]) -> Self {
        let mut cps = checkpoints.to_vec();
        cps.sort_unstable();
        cps.dedup();
        let zeros = vec![0.0; grid_size];
        Self {
            tag,
            beta,
            checkpoints: cps,
            next: 0,
            z_re: zeros.clone(),
            z_im: zeros.clone(),
            s_re: zeros.clone(),
            s_im: zeros.clone(),
            t_re: zeros.clone(),
            t_im: zeros,
            j: 0,
            aux: Vec::new(),
            st: Vec::new(),
        }
    }

    fn capture_due(&mut self) {
        while self.next < self.checkpoints.len() && self.checkpoints[self.next] == self.j {
            self.aux.push(AuxSnapshot {
                tag: self.tag,
                k: self.j,
                z_re: self.z_re.clone(),
                z_im: self.z_im.clone(),
                tau_k: tau(self.j),
            });
            let sup = |re: &[f64], im: &[f64]| {
                re.iter()
                    .zip(im)
                    .map(|(a, b)| a.hypot(*b))
                    .fold(0.0f64, f64::max)
            };
            self.st.push(StDiagnostics {
                k: self.j,
                sup_s: sup(&self.s_re, &self.s_im),
                sup_t: sup(&self.t_re, &self.t_im),
            });
            self.next += 1;
        }
    }

    pub fn observe(&mut self, state: &FieldState, draw: &CoupledDraw) {
        debug_assert_eq!(state.j(), self.j);
        debug_assert_eq!(draw.j, self.j);
        self.capture_due();
        let jp1 = (self.j + 1) as f64;
        let zc = draw.normal / jp1.sqrt();
        let sc = draw.gamma * draw.gamma * jp1;
        let tc = draw.gamma
            * jp1
            * (1.0 - ((draw.e + draw.gamma_var) / beta_shape(draw.j, self.beta)).sqrt());
        let (w_re, w_im) = state.phasors();
        for s in 0..w_re.len() {
            let (wr, wi) = (w_re[s], w_im[s]);
            self.z_re[s] += zc.re * wr - zc.im * wi;
            self.z_im[s] += zc.re * wi + zc.im * wr;
            let (w2r, w2i) = (wr * wr - wi * wi, 2.0 * wr * wi);
            self.s_re[s] += sc.re * w2r - sc.im * w2i;
            self.s_im[s] += sc.re * w2i + sc.im * w2r;
            self.t_re[s] += tc.re * wr - tc.im * wi;
            self.t_im[s] += tc.re * wi + tc.im * wr;
        }
        self.j += 1;
    }

    /// Capture checkpoints equal to the final index and return everything.
    pub fn finish(mut self) -> (Vec<AuxSnapshot>, Vec<StDiagnostics>) {
        self.capture_due();
        (self.aux, self.st)
    }
}

/// Prüfer phases `ψ_0..ψ_{k-1}` on a grid, tagged with their replica.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiHistory {
    pub tag: ReplicaTag,
    pub psi: Vec<Vec<f64>>,
}

/// Record `ψ_j` for `j < k`.
pub fn record_psi_history(draws: &DrawSequence, grid: &CircleGrid, k: usize) -> Result<PsiHistory> {
    if k > draws.len() {
        return Err(Error::Range { k, max: draws.len() });
    }
    let mut state = FieldState::new(grid);
    let mut psi = Vec::with_capacity(k);
    for d in draws.draws.iter().take(k) {
        psi.push(state.psi().to_vec());
        state.prufer_advance(d)?;
    }
    Ok(PsiHistory { tag: draws.tag, psi })
}

fn check_provenance(draws: &DrawSequence, history: &PsiHistory) -> Result<()> {
    if draws.tag != history.tag {
        return Err(Error::Coupling(format!(
            "draws from {:?} but phases from {:?}",
            draws.tag, history.tag
        )));
    }
    Ok(())
}

/// `Z_k` at each checkpoint, recomputed from a phase history.
pub fn field_z(draws: &DrawSequence, history: &PsiHistory, checkpoints: &[usize]) -> Result<Vec<AuxSnapshot>> {
    check_provenance(draws, history)?;
    let max = history.psi.len().min(draws.len());
    if let Some(&k) = checkpoints.iter().find(|&&k| k > max) {
        return Err(Error::Range { k, max });
    }
    let g = history.psi.first().map_or(0, Vec::len);
    checkpoints
        .iter()
        .map(|&k| {
            let mut z = vec![Complex64::new(0.0, 0.0); g];
            for (j, psi_j) in history.psi.iter().take(k).enumerate() {
                let c = draws.draws[j].normal / ((j + 1) as f64).sqrt();
                for (zs, &p) in z.iter_mut().zip(psi_j) {
                    *zs += c * Complex64::cis(p);
                }
            }
            Ok(AuxSnapshot {
                tag: draws.tag,
                k,
                z_re: z.iter().map(|c| c.re).collect(),
                z_im: z.iter().map(|c| c.im).collect(),
                tau_k: tau(k),
            })
        })
        .collect()
}

/// `sup |S_k|` and `sup |T_k|` recomputed from a phase history.
pub fn diagnostics_st(draws: &DrawSequence, history: &PsiHistory, k: usize) -> Result<StDiagnostics> {
    check_provenance(draws, history)?;
    let max = history.psi.len().min(draws.len());
    if k > max {
        return Err(Error::Range { k, max });
    }
    let g = history.psi.first().map_or(0, Vec::len);
    let zero = Complex64::new(0.0, 0.0);
    let (mut s, mut t) = (vec![zero; g], vec![zero; g]);
    for (j, psi_j) in history.psi.iter().take(k).enumerate() {
        let d = &draws.draws[j];
        let jp1 = (j + 1) as f64;
        let factor = 1.0 - ((d.e + d.gamma_var) / beta_shape(j, draws.beta)).sqrt();
        for ((ss, ts), &p) in s.iter_mut().zip(t.iter_mut()).zip(psi_j) {
            let w = Complex64::cis(p);
            *ss += jp1 * d.gamma * d.gamma * w * w;
            *ts += jp1 * d.gamma * w * factor;
        }
    }
    let sup = |v: &[Complex64]| v.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
    Ok(StDiagnostics {
        k,
        sup_s: sup(&s),
        sup_t: sup(&t),
    })
}

/// Per-replica coupling residual `sup_θ |log Φ*_k - sqrt(2/β) Z_k|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub tag: ReplicaTag,
    pub k: usize,
    pub beta: f64,
    pub sup_residual: f64,
}

/// Residual quantiles at one checkpoint across replicas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub k: usize,
    pub replicas: usize,
    pub median: f64,
    pub p05: f64,
    pub p95: f64,
    pub max: f64,
}

impl ResidualSummary {
    pub fn from_reports(k: usize, reports: &[ResidualReport]) -> Result<Self> {
        let vals: Vec<f64> = reports.iter().filter(|r| r.k == k).map(|r| r.sup_residual).collect();
        if vals.is_empty() {
            return Err(Error::MissingCell(format!("residual k = {k}")));
        }
        let s = sorted(&vals);
        Ok(Self {
            k,
            replicas: s.len(),
            median: quantile_sorted(&s, 0.5),
            p05: quantile_sorted(&s, 0.05),
            p95: quantile_sorted(&s, 0.95),
            max: s[s.len() - 1],
        })
    }
}

/// Compare `log Φ*_k` with `sqrt(2/β) Z_k` over non-excluded grid points.
pub fn coupling_residual(log_snapshot: &FieldSnapshot, aux: &AuxSnapshot, beta: f64) -> Result<ResidualReport> {
    if log_snapshot.tag != aux.tag {
        return Err(Error::Coupling(format!(
            "log field from {:?}, auxiliary field from {:?}",
            log_snapshot.tag, aux.tag
        )));
    }
    if log_snapshot.k != aux.k {
        return Err(Error::Coupling(format!(
            "log field at k = {}, auxiliary field at k = {}",
            log_snapshot.k, aux.k
        )));
    }
    if log_snapshot.grid_size() != aux.z_re.len() {
        return Err(Error::Shape(format!(
            "log field has {} points, auxiliary field {}",
            log_snapshot.grid_size(),
            aux.z_re.len()
        )));
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
    }
    let scale = (2.0 / beta).sqrt();
    let sup = (0..log_snapshot.grid_size())
        .filter(|&s| !log_snapshot.excluded[s])
        .map(|s| {
            (log_snapshot.re_log[s] - scale * aux.z_re[s]).hypot(log_snapshot.im_log[s] - scale * aux.z_im[s])
        })
        .fold(0.0f64, f64::max);
    Ok(ResidualReport {
        tag: aux.tag,
        k: aux.k,
        beta,
        sup_residual: sup,
    })
}

/// Both increment fields from `2^l` to `2^{l+1}` accumulated in one pass.
///
/// Block `p` starts at `b_p = 2^l + p 2^{l-Δ}`. The exact field sums
/// `N_j e^{iψ_j}/sqrt(j+1)`; the block field replaces `ψ_{b_p+i}` by
/// `ψ_{b_p} + iθ` and `sqrt(b_p+i+1)` by `sqrt(b_p)`.
#[derive(Debug, Clone)]
struct BlockAccumulator {
    start: usize,
    end: usize,
    block_len: usize,
    angles: Vec<f64>,
    exact: Vec<Complex64>,
    block: Vec<Complex64>,
    inner: Vec<Complex64>,
    head: Vec<Complex64>,
    head_index: usize,
}

impl BlockAccumulator {
    fn flush_block(&mut self) {
        let scale = 1.0 / (self.head_index as f64).sqrt();
        for ((b, i), h) in self.block.iter_mut().zip(self.inner.iter_mut()).zip(&self.head) {
            *b += *i * *h * scale;
            *i = Complex64::new(0.0, 0.0);
        }
    }

    fn observe(&mut self, state: &FieldState, draw: &CoupledDraw) {
        let j = draw.j;
        if j < self.start || j >= self.end {
            return;
        }
        let offset = (j - self.start) % self.block_len;
        let (w_re, w_im) = state.phasors();
        if offset == 0 {
            if j > self.start {
                self.flush_block();
            }
            self.head_index = j;
            for (h, (&wr, &wi)) in self.head.iter_mut().zip(w_re.iter().zip(w_im)) {
                *h = Complex64::new(wr, wi);
            }
        }
        let c = draw.normal / ((j + 1) as f64).sqrt();
        for s in 0..self.angles.len() {
            self.exact[s] += c * Complex64::new(w_re[s], w_im[s]);
            self.inner[s] += draw.normal * Complex64::cis(offset as f64 * self.angles[s]);
        }
        if j + 1 == self.end {
            self.flush_block();
        }
    }
}

/// `sup_θ |Z^{(2^l,Δ)}_{2^{l+1}} - Z^{(2^l)}_{2^{l+1}}|` for one replica.
///
/// `draws` must cover indices below `2^{l+1}`.
pub fn block_field_residual<F: Fn(usize) -> usize>(
    r: usize,
    l: usize,
    draws: &DrawSequence,
    grid: &CircleGrid,
    delta_fn: F,
) -> Result<f64> {
    if l < r {
        return Err(Error::InvalidParameter(format!("level {l} below r = {r}")));
    }
    let delta = delta_fn(l);
    if delta > l || delta == 0 {
        return Err(Error::InvalidDecomposition(format!(
            "Δ = {delta} at level {l} gives block length 2^{}",
            l as i64 - delta as i64
        )));
    }
    let (start, end) = (1usize << l, 1usize << (l + 1));
    if draws.len() < end {
        return Err(Error::Range {
            k: end,
            max: draws.len(),
        });
    }
    let g = grid.len();
    let zero = Complex64::new(0.0, 0.0);
    let mut acc = BlockAccumulator {
        start,
        end,
        block_len: 1 << (l - delta),
        angles: grid.angles().to_vec(),
        exact: vec![zero; g],
        block: vec![zero; g],
        inner: vec![zero; g],
        head: vec![zero; g],
        head_index: start,
    };
    let prefix = DrawSequence::from_draws(draws.tag, draws.beta, draws.draws[..end].to_vec());
    evaluate_field_with(&prefix, grid, &[], end + 1, |state, draw| acc.observe(state, draw))?;
    Ok(acc
        .exact
        .iter()
        .zip(&acc.block)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0f64, f64::max))
}

/// Run the Prüfer recursion and the auxiliary accumulator together.
pub fn evaluate_with_aux(
    draws: &DrawSequence,
    grid: &CircleGrid,
    checkpoints: &[usize],
) -> Result<(Vec<FieldSnapshot>, Vec<AuxSnapshot>, Vec<StDiagnostics>)> {
    let mut acc = AuxAccumulator::new(draws.tag, draws.beta, grid.len(), checkpoints);
    let run = evaluate_field_with(draws, grid, checkpoints, draws.len() + 1, |s, d| acc.observe(s, d))?;
    let (aux, st) = acc.finish();
    Ok((run.snapshots, aux, st))
}
