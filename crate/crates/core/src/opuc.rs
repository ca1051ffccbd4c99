//! Orthogonal polynomials on the unit circle.
//!
//! Two evaluation routes for `log Φ*_k(e^{iθ})`:
//!
//! * coefficient space: [`PolyPair`] advanced by [`szego_step`] and evaluated
//!   by Horner's rule. Exact but `O(k)` memory per polynomial; used as an oracle
//!   for small degrees.
//! * Prüfer form: [`FieldState`] carries the relative Prüfer phase `ψ_j(θ)` and
//!   the cumulative log on a uniform grid, one coefficient at a time:
//!
//!   ```text
//!   log Φ*_{j+1}(e^{iθ}) = log Φ*_j(e^{iθ}) + log(1 - γ_j e^{iψ_j(θ)})
//!   ψ_{j+1}(θ)           = ψ_j(θ) + θ - 2 [arg(1 - γ_j e^{iψ_j(θ)}) - arg(1 - γ_j)]
//!   ```
//!
//!   Every factor has positive real part when `|γ_j| < 1`, so principal logs
//!   add up to the continuous branch.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{CoupledDraw, DrawSequence, ReplicaTag};

/// Default degree cap of the coefficient-space oracle.
pub const DEFAULT_ORACLE_CAP: usize = 64;

/// Default exclusion radius around zeros of the last factor.
pub const DEFAULT_EPS_EXCLUDE: f64 = 1e-8;

/// The pair `(Φ_k, Φ*_k)` in coefficient form, lowest degree first.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyPair {
    pub phi: Vec<Complex64>,
    pub phi_star: Vec<Complex64>,
    cap: usize,
}

impl Default for PolyPair {
    fn default() -> Self {
        Self::one()
    }
}

impl PolyPair {
    /// `Φ_0 = Φ*_0 = 1`.
    pub fn one() -> Self {
        Self::with_cap(DEFAULT_ORACLE_CAP)
    }

    pub fn with_cap(cap: usize) -> Self {
        Self {
            phi: vec![Complex64::new(1.0, 0.0)],
            phi_star: vec![Complex64::new(1.0, 0.0)],
            cap,
        }
    }

    /// Build from explicit Verblunsky coefficients.
    pub fn from_verblunsky(alphas: &[Complex64], cap: usize) -> Result<Self> {
        let mut p = Self::with_cap(cap);
        for &a in alphas {
            p = szego_step(&p, a)?;
        }
        Ok(p)
    }

    pub fn degree(&self) -> usize {
        self.phi.len() - 1
    }

    pub fn eval_phi(&self, z: Complex64) -> Complex64 {
        horner(&self.phi, z)
    }

    pub fn eval_phi_star(&self, z: Complex64) -> Complex64 {
        horner(&self.phi_star, z)
    }
}

/// Horner evaluation of a polynomial with coefficients lowest degree first.
pub fn horner(coeffs: &[Complex64], z: Complex64) -> Complex64 {
    coeffs
        .iter()
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
}

/// One Szegő step:
/// `Φ_{k+1} = zΦ_k - ᾱΦ*_k`, `Φ*_{k+1} = -αzΦ_k + Φ*_k`.
pub fn szego_step(p: &PolyPair, alpha: Complex64) -> Result<PolyPair> {
    if alpha.norm() > 1.0 + 1e-12 {
        return Err(Error::InvalidParameter(format!("|alpha| = {} > 1", alpha.norm())));
    }
    let k = p.degree();
    if k + 1 > p.cap {
        return Err(Error::Capacity {
            requested: k + 1,
            cap: p.cap,
        });
    }
    let zero = Complex64::new(0.0, 0.0);
    let mut phi = vec![zero; k + 2];
    let mut phi_star = vec![zero; k + 2];
    for (i, &c) in p.phi.iter().enumerate() {
        phi[i + 1] += c;
        phi_star[i + 1] -= alpha * c;
    }
    for (i, &c) in p.phi_star.iter().enumerate() {
        phi[i] -= alpha.conj() * c;
        phi_star[i] += c;
    }
    Ok(PolyPair {
        phi,
        phi_star,
        cap: p.cap,
    })
}

/// Recover the Verblunsky coefficients of a polynomial `Q` with `Q(0) = 1`,
/// read as `Φ*_k` with `k = coeffs.len() - 1` (inverse Szegő / Schur–Cohn).
///
/// Fails unless every recovered coefficient lies in the open unit disk, which
/// holds exactly when `Q` has no zero in the closed disk.
pub fn schur_cohn(coeffs: &[Complex64]) -> Result<Vec<Complex64>> {
    if coeffs.is_empty() || (coeffs[0] - Complex64::new(1.0, 0.0)).norm() > 1e-12 {
        return Err(Error::Precondition("polynomial must equal 1 at the origin".into()));
    }
    let k = coeffs.len() - 1;
    let mut star: Vec<Complex64> = coeffs.to_vec();
    let mut alphas = vec![Complex64::new(0.0, 0.0); k];
    for m in (0..k).rev() {
        // Φ_{m+1} is the conjugate reversal of Φ*_{m+1}; its constant term is -ᾱ_m.
        let phi: Vec<Complex64> = star.iter().rev().map(|c| c.conj()).collect();
        let alpha = -phi[0].conj();
        let r = 1.0 - alpha.norm_sqr();
        if r <= 1e-14 {
            return Err(Error::Precondition(format!(
                "Schur–Cohn coefficient {m} has modulus {} >= 1: zero in the closed disk",
                alpha.norm()
            )));
        }
        // Φ*_m = (Φ*_{m+1} + α Φ_{m+1}) / (1 - |α|²); the top coefficient cancels.
        let next: Vec<Complex64> = (0..=m).map(|i| (star[i] + alpha * phi[i]) / r).collect();
        alphas[m] = alpha;
        star = next;
    }
    Ok(alphas)
}

/// Convert deformed coefficients `γ_j` into the Verblunsky coefficients
/// `α_j = γ_j e^{-iΨ_j(0)}` that produce the same polynomials, where
/// `Ψ_j(0) = -2 Σ_{m<j} arg(1 - γ_m)`.
pub fn verblunsky_from_deformed(gammas: &[Complex64]) -> Vec<Complex64> {
    let mut im_at_one = 0.0;
    gammas
        .iter()
        .map(|&g| {
            let alpha = g * Complex64::cis(2.0 * im_at_one);
            im_at_one += (Complex64::new(1.0, 0.0) - g).arg();
            alpha
        })
        .collect()
}

/// Uniform grid `θ_s = 2πs/G`.
#[derive(Debug, Clone, PartialEq)]
pub struct CircleGrid {
    angles: Vec<f64>,
}

impl CircleGrid {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidParameter("grid size must be positive".into()));
        }
        Ok(Self {
            angles: (0..size).map(|s| TAU * s as f64 / size as f64).collect(),
        })
    }

    /// Arbitrary angles (single points, shifted grids).
    pub fn from_angles(angles: Vec<f64>) -> Result<Self> {
        if angles.is_empty() {
            return Err(Error::InvalidParameter("grid needs at least one angle".into()));
        }
        Ok(Self { angles })
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }
}

/// `atan(x)` after Cephes: reduction to `|x| <= tan(π/8)` and a rational
/// approximation in `x²`. Written without early returns so it vectorises.
#[inline(always)]
pub fn fast_atan(x: f64) -> f64 {
    const P: [f64; 5] = [
        -8.750_608_600_031_904e-1,
        -1.615_753_718_733_365_2e1,
        -7.500_855_792_314_705e1,
        -1.228_866_684_490_136_1e2,
        -6.485_021_904_942_025e1,
    ];
    const Q: [f64; 5] = [
        2.485_846_490_142_306_3e1,
        1.650_270_098_316_988_5e2,
        4.328_810_604_912_903e2,
        4.853_903_996_359_137e2,
        1.945_506_571_482_614e2,
    ];
    const T3P8: f64 = 2.414_213_562_373_095;
    const MOREBITS: f64 = 6.123_233_995_736_766e-17;
    let a = x.abs();
    let big = a > T3P8;
    let mid = a > 0.66 && !big;
    let y0 = if big {
        std::f64::consts::FRAC_PI_2
    } else if mid {
        std::f64::consts::FRAC_PI_4
    } else {
        0.0
    };
    let extra = if big {
        MOREBITS
    } else if mid {
        0.5 * MOREBITS
    } else {
        0.0
    };
    let t = if big {
        -1.0 / a
    } else if mid {
        (a - 1.0) / (a + 1.0)
    } else {
        a
    };
    let z = t * t;
    let num = (((P[0] * z + P[1]) * z + P[2]) * z + P[3]) * z + P[4];
    let den = ((((z + Q[0]) * z + Q[1]) * z + Q[2]) * z + Q[3]) * z + Q[4];
    let r = y0 + (t * z * num / den + t) + extra;
    r.copysign(x)
}

/// Re-synchronise the tracked phasor with `ψ` every this many steps.
const PHASOR_RESYNC: usize = 64;
/// Fold `ln |f|²` products into the accumulator every this many steps.
const LOG_BATCH: usize = 8;

/// Prüfer phases and cumulative logs on a grid, advanced one coefficient at a
/// time.
///
/// Besides `ψ_j` the state tracks the phasor `e^{iψ_j}` multiplicatively, so
/// a step costs one `atan` and (amortised) a fraction of a `ln` per point.
#[derive(Debug, Clone)]
pub struct FieldState {
    angles: Vec<f64>,
    rot_re: Vec<f64>,
    rot_im: Vec<f64>,
    psi: Vec<f64>,
    w_re: Vec<f64>,
    w_im: Vec<f64>,
    re_log: Vec<f64>,
    im_log: Vec<f64>,
    modulus_product: Vec<f64>,
    pending: usize,
    j: usize,
    branch_violations: usize,
}

impl FieldState {
    /// `ψ_0(θ) = θ`, `log Φ*_0 = 0`.
    pub fn new(grid: &CircleGrid) -> Self {
        let g = grid.len();
        let angles = grid.angles().to_vec();
        let (rot_im, rot_re): (Vec<f64>, Vec<f64>) = angles.iter().map(|t| t.sin_cos()).unzip();
        Self {
            psi: angles.clone(),
            w_re: rot_re.clone(),
            w_im: rot_im.clone(),
            angles,
            rot_re,
            rot_im,
            re_log: vec![0.0; g],
            im_log: vec![0.0; g],
            modulus_product: vec![1.0; g],
            pending: 0,
            j: 0,
            branch_violations: 0,
        }
    }

    pub fn j(&self) -> usize {
        self.j
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    /// `(Re, Im)` of `e^{iψ_j(θ_s)}`.
    pub fn phasors(&self) -> (&[f64], &[f64]) {
        (&self.w_re, &self.w_im)
    }

    /// Number of factors whose real part was not strictly positive.
    pub fn branch_violations(&self) -> usize {
        self.branch_violations
    }

    fn flush_logs(&mut self) {
        if self.pending == 0 {
            return;
        }
        for (acc, prod) in self.re_log.iter_mut().zip(self.modulus_product.iter_mut()) {
            *acc += 0.5 * prod.ln();
            *prod = 1.0;
        }
        self.pending = 0;
    }

    pub fn re_log(&mut self) -> &[f64] {
        self.flush_logs();
        &self.re_log
    }

    pub fn im_log(&self) -> &[f64] {
        &self.im_log
    }

    /// Complex `log Φ*_j` on the grid.
    pub fn logphi(&mut self) -> Vec<Complex64> {
        self.flush_logs();
        self.re_log
            .iter()
            .zip(&self.im_log)
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect()
    }

    /// Advance by one coefficient: `ψ_j → ψ_{j+1}`, `log Φ*_j → log Φ*_{j+1}`.
    pub fn prufer_advance(&mut self, draw: &CoupledDraw) -> Result<()> {
        if draw.j != self.j {
            return Err(Error::Coupling(format!(
                "draw index {} does not match state index {}",
                draw.j, self.j
            )));
        }
        self.advance_with(draw.gamma)
    }

    /// Advance with an explicit deformed coefficient.
    pub fn advance_with(&mut self, gamma: Complex64) -> Result<()> {
        if !(gamma.norm_sqr() < 1.0) {
            return Err(Error::InvalidCoefficient {
                index: self.j,
                modulus: gamma.norm(),
            });
        }
        let (gr, gi) = (gamma.re, gamma.im);
        let f0 = Complex64::new(1.0 - gr, -gi);
        let a0 = f0.arg();
        let rot0 = f0 * f0 / f0.norm_sqr();
        let resync = (self.j + 1) % PHASOR_RESYNC == 0;
        let mut violations = 0usize;

        let n = self.angles.len();
        let (angles, rot_re, rot_im) = (&self.angles[..n], &self.rot_re[..n], &self.rot_im[..n]);
        let (psi, w_re, w_im) = (&mut self.psi[..n], &mut self.w_re[..n], &mut self.w_im[..n]);
        let (im_log, prod) = (&mut self.im_log[..n], &mut self.modulus_product[..n]);
        for s in 0..n {
            let (wr, wi) = (w_re[s], w_im[s]);
            let fr = 1.0 - (gr * wr - gi * wi);
            let fi = -(gr * wi + gi * wr);
            let m = fr * fr + fi * fi;
            violations += usize::from(fr <= 0.0);
            let a = fast_atan(fi / fr);
            im_log[s] += a;
            prod[s] *= m;
            psi[s] += angles[s] - 2.0 * (a - a0);
            // e^{iψ} ← e^{iψ} · e^{iθ} · conj(f)²/|f|² · e^{2i a0}
            let inv = 1.0 / m;
            let cr = (fr * fr - fi * fi) * inv;
            let ci = -2.0 * fr * fi * inv;
            let (r1, i1) = (wr * rot_re[s] - wi * rot_im[s], wr * rot_im[s] + wi * rot_re[s]);
            let (r2, i2) = (r1 * cr - i1 * ci, r1 * ci + i1 * cr);
            w_re[s] = r2 * rot0.re - i2 * rot0.im;
            w_im[s] = r2 * rot0.im + i2 * rot0.re;
        }
        if resync {
            for s in 0..n {
                let (si, co) = psi[s].sin_cos();
                w_re[s] = co;
                w_im[s] = si;
            }
        }
        self.branch_violations += violations;
        self.pending += 1;
        if self.pending == LOG_BATCH {
            self.flush_logs();
        }
        self.j += 1;
        Ok(())
    }

    /// Freeze the current `log Φ*_j` into a snapshot.
    pub fn snapshot(&mut self, tag: ReplicaTag, beta: f64, n_total: usize) -> FieldSnapshot {
        self.flush_logs();
        FieldSnapshot {
            tag,
            k: self.j,
            beta,
            n_total,
            re_log: self.re_log.clone(),
            im_log: self.im_log.clone(),
            excluded: vec![false; self.len()],
        }
    }
}

/// Reference Prüfer step with principal logs evaluated directly; the oracle
/// for [`FieldState::prufer_advance`].
pub fn prufer_step_reference(
    angles: &[f64],
    psi: &mut [f64],
    logphi: &mut [Complex64],
    gamma: Complex64,
) -> Result<()> {
    if !(gamma.norm_sqr() < 1.0) {
        return Err(Error::InvalidCoefficient {
            index: 0,
            modulus: gamma.norm(),
        });
    }
    let one = Complex64::new(1.0, 0.0);
    let im0 = (one - gamma).ln().im;
    for ((theta, p), l) in angles.iter().zip(psi.iter_mut()).zip(logphi.iter_mut()) {
        let factor = one - gamma * Complex64::cis(*p);
        let lf = factor.ln();
        *l += lf;
        *p += theta - 2.0 * (lf.im - im0);
    }
    Ok(())
}

/// `log Φ*_k` (or `log X_n`) frozen on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSnapshot {
    pub tag: ReplicaTag,
    pub k: usize,
    pub beta: f64,
    pub n_total: usize,
    pub re_log: Vec<f64>,
    pub im_log: Vec<f64>,
    pub excluded: Vec<bool>,
}

impl FieldSnapshot {
    pub fn grid_size(&self) -> usize {
        self.re_log.len()
    }

    pub fn excluded_count(&self) -> usize {
        self.excluded.iter().filter(|&&e| e).count()
    }

    pub fn angle(&self, s: usize) -> f64 {
        TAU * s as f64 / self.grid_size() as f64
    }
}

/// Result of [`evaluate_field`]: snapshots in checkpoint order and the state
/// after the last draw (whose `ψ` feeds the final step).
#[derive(Debug, Clone)]
pub struct FieldRun {
    pub snapshots: Vec<FieldSnapshot>,
    pub state: FieldState,
}

/// Dyadic checkpoints `1, 2, 4, …` not exceeding `max_k`, preceded by `0`.
pub fn dyadic_checkpoints(max_k: usize) -> Vec<usize> {
    let mut ks = vec![0];
    let mut k = 1;
    while k <= max_k {
        ks.push(k);
        k *= 2;
    }
    ks
}

/// Run the Prüfer recursion over all draws, capturing `log Φ*_k` at each
/// checkpoint. `observer` sees the state *before* each coefficient is applied.
pub fn evaluate_field_with<F>(
    draws: &DrawSequence,
    grid: &CircleGrid,
    checkpoints: &[usize],
    n_total: usize,
    mut observer: F,
) -> Result<FieldRun>
where
    F: FnMut(&FieldState, &CoupledDraw),
{
    let max = draws.len();
    let mut sorted = checkpoints.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if let Some(&k) = sorted.iter().find(|&&k| k > max) {
        return Err(Error::Range { k, max });
    }
    let mut state = FieldState::new(grid);
    let mut snapshots = Vec::with_capacity(sorted.len());
    let mut next = sorted.iter().peekable();
    for draw in &draws.draws {
        while next.peek().is_some_and(|&&k| k == state.j()) {
            snapshots.push(state.snapshot(draws.tag, draws.beta, n_total));
            next.next();
        }
        observer(&state, draw);
        state.prufer_advance(draw)?;
    }
    for _ in next {
        snapshots.push(state.snapshot(draws.tag, draws.beta, n_total));
    }
    Ok(FieldRun { snapshots, state })
}

/// [`evaluate_field_with`] without an observer. `draws` holds the `n - 1`
/// coefficients of an `n`-dimensional ensemble.
pub fn evaluate_field(draws: &DrawSequence, grid_size: usize, checkpoints: &[usize]) -> Result<FieldRun> {
    let grid = CircleGrid::new(grid_size)?;
    evaluate_field_with(draws, &grid, checkpoints, draws.len() + 1, |_, _| {})
}

/// Apply the unimodular last coefficient:
/// `log X_n = log Φ*_{n-1} + log(1 - α_{n-1} e^{iψ_{n-1}})`.
///
/// Points where the last factor has modulus below `eps_exclude` are flagged;
/// they stand in for the zeros removed from the circle.
pub fn last_step_charpoly(
    snapshot: &FieldSnapshot,
    psi_final: &[f64],
    alpha_last: Complex64,
    eps_exclude: f64,
) -> Result<FieldSnapshot> {
    if (alpha_last.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "last coefficient must be unimodular, |alpha| = {}",
            alpha_last.norm()
        )));
    }
    if psi_final.len() != snapshot.grid_size() {
        return Err(Error::Shape(format!(
            "psi has {} points, snapshot {}",
            psi_final.len(),
            snapshot.grid_size()
        )));
    }
    let one = Complex64::new(1.0, 0.0);
    let mut out = snapshot.clone();
    out.k = snapshot.k + 1;
    for (s, &p) in psi_final.iter().enumerate() {
        let factor = one - alpha_last * Complex64::cis(p);
        if factor.norm() < eps_exclude {
            out.excluded[s] = true;
            continue;
        }
        let lf = factor.ln();
        out.re_log[s] += lf.re;
        out.im_log[s] += lf.im;
    }
    Ok(out)
}

/// Centered count `N_n - N_n^{(0)}` on the arc from grid index `s1` to `s2`
/// (counterclockwise, `s1 <= s2 <= s1 + G`):
/// `-(Im log X_n(θ_2) - Im log X_n(θ_1)) / π`.
///
/// An excluded endpoint is moved inward to the nearest non-excluded point.
pub fn count_in_arc(field: &FieldSnapshot, s1: usize, s2: usize) -> Result<f64> {
    let g = field.grid_size();
    if s1 >= g || s2 < s1 || s2 > s1 + g {
        return Err(Error::InvalidParameter(format!(
            "arc ({s1}, {s2}) is not a counterclockwise arc on a grid of {g}"
        )));
    }
    if s2 == s1 + g || s2 == s1 {
        return Ok(0.0);
    }
    let ex = |s: usize| field.excluded[s % g];
    if ex(s1) && ex(s2) {
        return Err(Error::UndefinedEndpoint(s1, s2 % g));
    }
    let (mut a, mut b) = (s1, s2);
    while ex(a) && a < b {
        a += 1;
    }
    while ex(b) && b > a {
        b -= 1;
    }
    if ex(a) || ex(b) {
        return Err(Error::UndefinedEndpoint(s1, s2 % g));
    }
    Ok(-(field.im_log[b % g] - field.im_log[a % g]) / PI)
}

/// Raw count: centered count plus `n (θ_2 - θ_1) / 2π`.
pub fn raw_count_in_arc(field: &FieldSnapshot, s1: usize, s2: usize) -> Result<f64> {
    let centered = count_in_arc(field, s1, s2)?;
    let g = field.grid_size() as f64;
    Ok(centered + field.n_total as f64 * (s2 - s1) as f64 / g)
}

/// Both sides of the two grid interpolation inequalities for one polynomial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridBoundReport {
    pub degree: usize,
    /// `sup |Q|` over the `32k`-point grid.
    pub sup_fine: f64,
    /// `sup |Q|` over the `2k`-th roots of unity.
    pub sup_coarse_modulus: f64,
    /// `sup Im log Q` over the `32k`-point grid.
    pub sup_fine_im: f64,
    /// `sup Im log Q` over the `k`-th roots of unity.
    pub sup_coarse_im: f64,
}

impl GridBoundReport {
    pub fn modulus_holds(&self) -> bool {
        self.sup_fine <= 14.0 * self.sup_coarse_modulus
    }

    pub fn im_holds(&self) -> bool {
        self.sup_fine_im <= TAU + self.sup_coarse_im
    }
}

/// Check `sup_U |Q| <= 14 sup_{U_2k} |Q|` and
/// `sup_U Im log Q <= 2π + sup_{U_k} Im log Q` for `Q` given by coefficients
/// (lowest first, `Q(0) = 1`, degree `k = coeffs.len() - 1`).
///
/// The modulus side uses Horner evaluation. The continuous branch of
/// `Im log Q` comes from the product formula over the Verblunsky coefficients
/// recovered by [`schur_cohn`], which fails with a precondition error if `Q`
/// vanishes in the closed disk.
pub fn grid_bound_check(coeffs: &[Complex64]) -> Result<GridBoundReport> {
    let k = coeffs.len().saturating_sub(1);
    if k == 0 {
        return Err(Error::InvalidParameter("degree must be at least 1".into()));
    }
    let fine = 32 * k;
    let modulus = |g: usize, stride: usize| {
        (0..g)
            .step_by(stride)
            .map(|s| horner(coeffs, Complex64::cis(TAU * s as f64 / g as f64)).norm())
            .fold(0.0f64, f64::max)
    };
    let sup_fine = modulus(fine, 1);
    let sup_coarse_modulus = modulus(fine, 16);

    let alphas = schur_cohn(coeffs)?;
    let im = im_log_from_verblunsky(&alphas, fine);
    let sup_fine_im = im.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sup_coarse_im = im.iter().step_by(32).copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(GridBoundReport {
        degree: k,
        sup_fine,
        sup_coarse_modulus,
        sup_fine_im,
        sup_coarse_im,
    })
}

/// Continuous `Im log Φ*_k(e^{iθ_s})` on a `g`-point grid from the absolute
/// Prüfer recursion `Ψ_{j+1} = Ψ_j + θ - 2 arg(1 - α_j e^{iΨ_j})`, `Ψ_0 = θ`.
pub fn im_log_from_verblunsky(alphas: &[Complex64], g: usize) -> Vec<f64> {
    let one = Complex64::new(1.0, 0.0);
    (0..g)
        .map(|s| {
            let theta = TAU * s as f64 / g as f64;
            let mut big_psi = theta;
            let mut im = 0.0;
            for &a in alphas {
                let arg = (one - a * Complex64::cis(big_psi)).arg();
                im += arg;
                big_psi += theta - 2.0 * arg;
            }
            im
        })
        .collect()
}

/// Coefficients of `Φ*_k` built from the first `k` deformed draws.
pub fn phi_star_coefficients(draws: &DrawSequence, k: usize) -> Result<Vec<Complex64>> {
    let gammas: Vec<Complex64> = draws.draws.iter().take(k).map(|d| d.gamma).collect();
    let alphas = verblunsky_from_deformed(&gammas);
    Ok(PolyPair::from_verblunsky(&alphas, k.max(DEFAULT_ORACLE_CAP))?.phi_star)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::CoupledDraw;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn tag() -> ReplicaTag {
        ReplicaTag { seed: 0, replica: 0 }
    }

    fn forced(gammas: &[Complex64]) -> DrawSequence {
        let draws = gammas
            .iter()
            .enumerate()
            .map(|(j, &g)| {
                let mut d = CoupledDraw::from_parts(j, 1.0, 0.0, 1.0).unwrap();
                d.gamma = g;
                d.modulus_sq = g.norm_sqr();
                d
            })
            .collect();
        DrawSequence::from_draws(tag(), 2.0, draws)
    }

    fn wrap(x: f64) -> f64 {
        (x + PI).rem_euclid(TAU) - PI
    }

    #[test]
    fn fast_atan_matches_libm() {
        let mut worst = 0.0f64;
        for i in -200_000..=200_000 {
            let x = i as f64 * 1e-4;
            for v in [x, x * x * x, 1.0 / (x + 1e-7)] {
                worst = worst.max((fast_atan(v) - v.atan()).abs());
            }
        }
        assert!(worst < 4e-16, "{worst:e}");
        assert_eq!(fast_atan(0.0), 0.0);
    }

    #[test]
    fn szego_zero_coefficient() {
        let p = PolyPair::from_verblunsky(&[c(0.3, 0.1), c(-0.2, 0.5)], 64).unwrap();
        let q = szego_step(&p, c(0.0, 0.0)).unwrap();
        assert_eq!(q.phi[0], c(0.0, 0.0));
        assert_eq!(&q.phi[1..], &p.phi[..]);
        assert_eq!(&q.phi_star[..p.phi_star.len()], &p.phi_star[..]);
        assert_eq!(*q.phi_star.last().unwrap(), c(0.0, 0.0));
    }

    #[test]
    fn szego_first_step() {
        let a = c(0.3, -0.4);
        let p = szego_step(&PolyPair::one(), a).unwrap();
        assert_eq!(p.phi, vec![-a.conj(), c(1.0, 0.0)]);
        assert_eq!(p.phi_star, vec![c(1.0, 0.0), -a]);
    }

    #[test]
    fn szego_invariants_and_capacity() {
        let ds = DrawSequence::generate(4, 0, 2.0, 64).unwrap();
        let alphas = verblunsky_from_deformed(&ds.gammas());
        let p = PolyPair::from_verblunsky(&alphas, 64).unwrap();
        assert_eq!(p.phi_star[0], c(1.0, 0.0));
        assert_eq!(*p.phi.last().unwrap(), c(1.0, 0.0));
        for (a, b) in p.phi.iter().rev().zip(&p.phi_star) {
            assert!((a.conj() - b).norm() < 1e-12);
        }
        assert!(matches!(szego_step(&p, c(0.1, 0.0)), Err(Error::Capacity { .. })));
    }

    #[test]
    fn schur_cohn_inverts_szego() {
        let ds = DrawSequence::generate(8, 1, 2.0, 20).unwrap();
        let alphas = verblunsky_from_deformed(&ds.gammas());
        let p = PolyPair::from_verblunsky(&alphas, 64).unwrap();
        let back = schur_cohn(&p.phi_star).unwrap();
        for (a, b) in alphas.iter().zip(&back) {
            assert!((a - b).norm() < 1e-9, "{a} vs {b}");
        }
        // 1 - 2z vanishes at z = 1/2.
        assert!(matches!(schur_cohn(&[c(1.0, 0.0), c(-2.0, 0.0)]), Err(Error::Precondition(_))));
    }

    #[test]
    fn zero_coefficient_advances_by_theta() {
        let grid = CircleGrid::new(16).unwrap();
        let mut st = FieldState::new(&grid);
        assert_eq!(st.psi(), grid.angles());
        st.advance_with(c(0.0, 0.0)).unwrap();
        for (p, t) in st.psi().iter().zip(grid.angles()) {
            assert!((p - 2.0 * t).abs() < 1e-15);
        }
        assert!(st.logphi().iter().all(|l| l.norm() == 0.0));
    }

    #[test]
    fn real_coefficient_at_pi() {
        let grid = CircleGrid::from_angles(vec![PI]).unwrap();
        let mut st = FieldState::new(&grid);
        st.advance_with(c(0.5, 0.0)).unwrap();
        assert!((st.psi()[0] - TAU).abs() < 1e-15);
        assert!((st.logphi()[0] - c(1.5f64.ln(), 0.0)).norm() < 1e-15);
    }

    #[test]
    fn rejects_unit_coefficient() {
        let grid = CircleGrid::new(4).unwrap();
        let mut st = FieldState::new(&grid);
        assert!(matches!(st.advance_with(c(1.0, 0.0)), Err(Error::InvalidCoefficient { .. })));
        let d = CoupledDraw::from_parts(3, 1.0, 0.0, 1.0).unwrap();
        assert!(matches!(st.prufer_advance(&d), Err(Error::Coupling(_))));
    }

    #[test]
    fn fast_kernel_matches_reference_step() {
        let ds = DrawSequence::generate(17, 0, 1.0, 700).unwrap();
        let grid = CircleGrid::new(257).unwrap();
        let mut st = FieldState::new(&grid);
        let mut psi = grid.angles().to_vec();
        let mut logphi = vec![c(0.0, 0.0); grid.len()];
        for d in &ds.draws {
            st.prufer_advance(d).unwrap();
            prufer_step_reference(grid.angles(), &mut psi, &mut logphi, d.gamma).unwrap();
        }
        let fast = st.logphi();
        for s in 0..grid.len() {
            assert!((st.psi()[s] - psi[s]).abs() < 1e-9, "psi at {s}");
            assert!((fast[s] - logphi[s]).norm() < 1e-9, "log at {s}");
        }
        assert_eq!(st.branch_violations(), 0);
    }

    #[test]
    fn prufer_matches_horner_at_n16() {
        let ds = DrawSequence::generate(3, 5, 2.0, 15).unwrap();
        let run = evaluate_field(&ds, 64, &[0, 1, 2, 4, 8, 15]).unwrap();
        let alphas = verblunsky_from_deformed(&ds.gammas());
        for snap in &run.snapshots {
            let p = PolyPair::from_verblunsky(&alphas[..snap.k], 64).unwrap();
            for s in 0..snap.grid_size() {
                let z = Complex64::cis(snap.angle(s));
                let exact = p.eval_phi_star(z);
                assert!((snap.re_log[s] - exact.norm().ln()).abs() < 1e-9);
                assert!(wrap(snap.im_log[s] - exact.arg()).abs() < 1e-9);
                // |Φ_k| = |Φ*_k| on the circle.
                assert!((p.eval_phi(z).norm() - exact.norm()).abs() < 1e-12);
            }
        }
        let zero = &run.snapshots[0];
        assert!(zero.re_log.iter().chain(&zero.im_log).all(|&x| x == 0.0));
    }

    #[test]
    fn checkpoint_out_of_range() {
        let ds = DrawSequence::generate(3, 5, 2.0, 15).unwrap();
        assert!(matches!(evaluate_field(&ds, 32, &[16]), Err(Error::Range { k: 16, max: 15 })));
    }

    #[test]
    fn prufer_periodicity_and_monotonicity() {
        let ds = DrawSequence::generate(12, 2, 2.0, 300).unwrap();
        let grid = CircleGrid::new(1024).unwrap();
        let mut st = FieldState::new(&grid);
        let pair = CircleGrid::from_angles(vec![0.7, 0.7 + TAU]).unwrap();
        let mut st2 = FieldState::new(&pair);
        for d in &ds.draws {
            st.prufer_advance(d).unwrap();
            st2.prufer_advance(d).unwrap();
            let k = st.j() as f64;
            assert!((st2.psi()[1] - st2.psi()[0] - TAU * (k + 1.0)).abs() < 1e-8);
            assert!(st.psi().windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn last_step_bounds_and_exclusion() {
        let ds = DrawSequence::generate(9, 0, 2.0, 31).unwrap();
        let run = evaluate_field(&ds, 128, &[31]).unwrap();
        let snap = &run.snapshots[0];
        let alpha = ds.final_phase();
        let x = last_step_charpoly(snap, run.state.psi(), alpha, DEFAULT_EPS_EXCLUDE).unwrap();
        assert_eq!(x.k, 32);
        for s in 0..x.grid_size() {
            if x.excluded[s] {
                continue;
            }
            assert!(x.re_log[s] - snap.re_log[s] <= 2f64.ln() + 1e-15);
            assert!((x.im_log[s] - snap.im_log[s]).abs() <= PI / 2.0 + 1e-15);
        }
        // Force a zero at grid point 3.
        let mut psi = run.state.psi().to_vec();
        let alpha = Complex64::cis(-psi[3]);
        psi[3] = -alpha.arg();
        let x = last_step_charpoly(snap, &psi, alpha, DEFAULT_EPS_EXCLUDE).unwrap();
        assert!(x.excluded[3]);
        assert_eq!(x.excluded_count(), 1);
    }

    fn charpoly_pair(seed: u64, n: usize) -> (FieldSnapshot, PolyPair) {
        let ds = DrawSequence::generate(seed, 0, 2.0, n - 1).unwrap();
        let run = evaluate_field(&ds, 4 * n, &[n - 1]).unwrap();
        let alpha_last = ds.final_phase();
        let x = last_step_charpoly(&run.snapshots[0], run.state.psi(), alpha_last, 1e-8).unwrap();
        let mut gammas = ds.gammas();
        gammas.push(alpha_last);
        let mut alphas = verblunsky_from_deformed(&gammas[..n - 1]);
        // Same rotation for the unimodular coefficient.
        let full = verblunsky_from_deformed(&gammas);
        alphas.push(full[n - 1]);
        let mut p = PolyPair::with_cap(64);
        for &a in &alphas {
            p = szego_step(&p, a).unwrap();
        }
        (x, p)
    }

    #[test]
    fn last_step_matches_full_szego() {
        let (x, p) = charpoly_pair(77, 12);
        for s in 0..x.grid_size() {
            if x.excluded[s] {
                continue;
            }
            let v = p.eval_phi_star(Complex64::cis(x.angle(s)));
            assert!((x.re_log[s] - v.norm().ln()).abs() < 1e-9);
            assert!(wrap(x.im_log[s] - v.arg()).abs() < 1e-9);
        }
    }

    #[test]
    fn count_full_circle_and_additivity() {
        let (x, _) = charpoly_pair(5, 8);
        let g = x.grid_size();
        assert_eq!(count_in_arc(&x, 0, g).unwrap(), 0.0);
        assert!((raw_count_in_arc(&x, 0, g).unwrap() - 8.0).abs() < 1e-12);
        let a = count_in_arc(&x, 1, 9).unwrap();
        let b = count_in_arc(&x, 9, 20).unwrap();
        let ab = count_in_arc(&x, 1, 20).unwrap();
        assert!((a + b - ab).abs() < 1e-12);
    }

    #[test]
    fn raw_counts_match_dense_root_scan() {
        for seed in 0..20 {
            let n = 3 + (seed as usize % 6);
            let (x, p) = charpoly_pair(100 + seed, n);
            // Zeros of Φ_n lie on the circle; locate them as deep local minima of
            // |Φ_n| on a fine grid.
            let m = 1_000_000;
            let vals: Vec<f64> = (0..m)
                .map(|s| p.eval_phi(Complex64::cis(TAU * s as f64 / m as f64)).norm())
                .collect();
            let roots: Vec<f64> = (0..m)
                .filter(|&s| {
                    let (l, r) = (vals[(s + m - 1) % m], vals[(s + 1) % m]);
                    vals[s] <= l && vals[s] < r && vals[s] < 1e-3
                })
                .map(|s| TAU * s as f64 / m as f64)
                .collect();
            assert_eq!(roots.len(), n, "seed {seed}");
            let g = x.grid_size();
            for (s1, s2) in [(0, g / 3), (g / 4, g - 1), (3, 3 + g / 2)] {
                if x.excluded[s1] || x.excluded[s2 % g] {
                    continue;
                }
                let (t1, t2) = (x.angle(s1), TAU * s2 as f64 / g as f64);
                let scanned = roots.iter().filter(|&&r| r > t1 && r < t2).count();
                let raw = raw_count_in_arc(&x, s1, s2).unwrap();
                assert!((raw - scanned as f64).abs() < 1e-6, "seed {seed}: {raw} vs {scanned}");
            }
        }
    }

    #[test]
    fn count_endpoints_excluded() {
        let (mut x, _) = charpoly_pair(5, 8);
        x.excluded[2] = true;
        x.excluded[7] = true;
        assert!(matches!(count_in_arc(&x, 2, 7), Err(Error::UndefinedEndpoint(2, 7))));
        assert!(count_in_arc(&x, 2, 9).is_ok());
    }

    #[test]
    fn grid_bound_constant_polynomial() {
        let r = grid_bound_check(&[c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        assert_eq!(r.sup_fine, 1.0);
        assert_eq!(r.sup_coarse_modulus, 1.0);
        assert!(r.modulus_holds() && r.im_holds());
    }

    #[test]
    fn grid_bound_on_ensemble_polynomials() {
        for replica in 0..50 {
            let ds = DrawSequence::generate(1234, replica, 2.0, 32).unwrap();
            let q = phi_star_coefficients(&ds, 32).unwrap();
            let r = grid_bound_check(&q).unwrap();
            assert!(r.modulus_holds(), "{r:?}");
            assert!(r.im_holds(), "{r:?}");
            // The product-formula Im log agrees with the Prüfer field mod 2π.
            let run = evaluate_field(&ds, 32 * 32, &[32]).unwrap();
            let im = im_log_from_verblunsky(&schur_cohn(&q).unwrap(), 32 * 32);
            for (a, b) in im.iter().zip(&run.snapshots[0].im_log) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn grid_bound_rejects_zero_in_disk() {
        assert!(matches!(
            grid_bound_check(&[c(1.0, 0.0), c(0.0, 0.0), c(-4.0, 0.0)]),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn forced_sequence_helper_runs() {
        let ds = forced(&[c(0.5, 0.0), c(0.0, 0.2)]);
        let run = evaluate_field(&ds, 8, &[2]).unwrap();
        assert_eq!(run.snapshots[0].k, 2);
    }
}
