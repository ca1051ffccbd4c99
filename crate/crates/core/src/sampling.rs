//! Exact sampling of the deformed Verblunsky coefficients.
//!
//! Each coefficient is built from an independent triple `(E, Θ, Γ)` with
//! `E ~ Exp(1)`, `Θ ~ U[0, 2π)` and `Γ ~ Gamma(β(j+1)/2)`. The same triple
//! yields both the coefficient `γ = sqrt(E / (E + Γ)) e^{iΘ}` and the complex
//! Gaussian `N = -sqrt(E) e^{iΘ}` that drives the auxiliary field, which is
//! what couples the two fields replica by replica.
//!
//! Randomness comes from [`RngStream`], a ChaCha8 keystream addressed by
//! `(master_seed, domain, replica_id, counter)`. Any coefficient of any replica
//! can be regenerated without replaying the ones before it.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest admissible `|γ|²`; sampled values are clamped to it.
pub const MAX_MODULUS_SQ: f64 = 1.0 - f64::EPSILON;

/// Independent families of draws derived from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    Coefficients,
    FinalPhase,
    Walks,
    Auxiliary,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::Coefficients => 0x636f_6566_6669_6369,
            Domain::FinalPhase => 0x6669_6e61_6c70_6861,
            Domain::Walks => 0x7761_6c6b_7761_6c6b,
            Domain::Auxiliary => 0x6175_7869_6c69_6172,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-addressed random stream.
///
/// `(master_seed, domain)` selects the ChaCha key, `replica_id` the ChaCha
/// stream and `counter` a block of 2³² words inside that stream. Streams are
/// plain values: cloning one reproduces its future output exactly.
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    domain: Domain,
    replica_id: u64,
    counter: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, replica_id: u64) -> Self {
        Self::with_domain(master_seed, Domain::Coefficients, replica_id)
    }

    pub fn with_domain(master_seed: u64, domain: Domain, replica_id: u64) -> Self {
        let mut state = master_seed ^ domain.tag();
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(replica_id);
        Self {
            master_seed,
            domain,
            replica_id,
            counter: 0,
            rng,
        }
    }

    /// Same replica, different family of draws.
    pub fn fork(&self, domain: Domain) -> Self {
        Self::with_domain(self.master_seed, domain, self.replica_id).at(self.counter)
    }

    /// Reposition the stream at the start of block `counter`.
    pub fn at(mut self, counter: u64) -> Self {
        self.seek(counter);
        self
    }

    pub fn seek(&mut self, counter: u64) {
        self.counter = counter;
        self.rng.set_word_pos(u128::from(counter) << 32);
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn replica_id(&self) -> u64 {
        self.replica_id
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// Uniform variate in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        rand_distr::StandardNormal.sample(&mut self.rng)
    }

    pub fn exponential(&mut self) -> f64 {
        Exp1.sample(&mut self.rng)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Identifies where a set of draws came from, so that fields built from
/// different replicas are never combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReplicaTag {
    pub seed: u64,
    pub replica: u64,
}

/// Shape parameter `β_j = β(j+1)/2` of the coefficient with index `j`.
pub fn beta_shape(j: usize, beta: f64) -> f64 {
    beta * (j as f64 + 1.0) / 2.0
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
    }
    Ok(())
}

/// Inverse CDF of `Beta(1, s)` with `s = β(j+1)/2`: `1 - (1-u)^{1/s}`.
pub fn beta_magnitude_sq(j: usize, beta: f64, u: f64) -> Result<f64> {
    check_beta(beta)?;
    if !(0.0..1.0).contains(&u) {
        return Err(Error::InvalidParameter(format!("u must lie in [0, 1), got {u}")));
    }
    let s = beta_shape(j, beta);
    Ok(-((-u).ln_1p() / s).exp_m1())
}

/// Exact `Gamma(shape, 1)` variate (Marsaglia–Tsang, with the usual boost for
/// `shape < 1`).
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0 && shape.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "gamma shape must be positive, got {shape}"
        )));
    }
    let dist = Gamma::new(shape, 1.0).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(dist.sample(rng))
}

/// One index's randomness and the two quantities derived from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoupledDraw {
    pub j: usize,
    /// Exponential variate `E_j`.
    pub e: f64,
    /// Uniform phase `Θ_j` in `[0, 2π)`.
    pub theta: f64,
    /// `Γ_j ~ Gamma(β_j)`.
    pub gamma_var: f64,
    /// `|γ_j|² = E_j / (E_j + Γ_j)`, after clamping.
    pub modulus_sq: f64,
    /// Deformed Verblunsky coefficient.
    pub gamma: Complex64,
    /// Standard complex Gaussian `-sqrt(E_j) e^{iΘ_j}`.
    pub normal: Complex64,
    /// Set when `|γ|²` rounded to 1 and had to be clamped.
    pub clamped: bool,
}

impl CoupledDraw {
    /// Assemble a draw from explicit variates.
    pub fn from_parts(j: usize, e: f64, theta: f64, gamma_var: f64) -> Result<Self> {
        if !(e >= 0.0 && gamma_var > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need E >= 0 and Gamma > 0, got E = {e}, Gamma = {gamma_var}"
            )));
        }
        let mut modulus_sq = e / (e + gamma_var);
        let clamped = modulus_sq > MAX_MODULUS_SQ;
        if clamped {
            modulus_sq = MAX_MODULUS_SQ;
        }
        let phase = Complex64::cis(theta);
        Ok(Self {
            j,
            e,
            theta,
            gamma_var,
            modulus_sq,
            gamma: phase * modulus_sq.sqrt(),
            normal: -phase * e.sqrt(),
            clamped,
        })
    }

    pub fn modulus_sq(&self) -> f64 {
        self.modulus_sq
    }
}

/// Draw the triple for index `j` from `stream` at its current position.
pub fn coupled_draw(j: usize, beta: f64, stream: &mut RngStream) -> Result<CoupledDraw> {
    check_beta(beta)?;
    let e = stream.exponential();
    let theta = TAU * stream.uniform();
    let gamma_var = sample_gamma(beta_shape(j, beta), stream)?;
    CoupledDraw::from_parts(j, e, theta, gamma_var)
}

/// Unimodular last coefficient, uniform on the circle.
pub fn final_phase(stream: &mut RngStream) -> Complex64 {
    Complex64::cis(TAU * stream.uniform())
}

/// All coefficient draws of one replica, indices `0..len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawSequence {
    pub tag: ReplicaTag,
    pub beta: f64,
    pub draws: Vec<CoupledDraw>,
}

impl DrawSequence {
    /// Draw `len` coefficients; index `j` always comes from counter block `j`
    /// of the coefficient domain, so prefixes of longer sequences coincide.
    pub fn generate(seed: u64, replica: u64, beta: f64, len: usize) -> Result<Self> {
        check_beta(beta)?;
        let base = RngStream::new(seed, replica);
        let draws = (0..len)
            .map(|j| {
                let mut stream = base.clone().at(j as u64);
                coupled_draw(j, beta, &mut stream)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            tag: ReplicaTag { seed, replica },
            beta,
            draws,
        })
    }

    /// Wrap explicit draws (forced inputs, tests).
    pub fn from_draws(tag: ReplicaTag, beta: f64, draws: Vec<CoupledDraw>) -> Self {
        Self { tag, beta, draws }
    }

    /// The unimodular final coefficient for this replica.
    pub fn final_phase(&self) -> Complex64 {
        let mut stream = RngStream::with_domain(self.tag.seed, Domain::FinalPhase, self.tag.replica);
        final_phase(&mut stream)
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn clamped_count(&self) -> usize {
        self.draws.iter().filter(|d| d.clamped).count()
    }

    pub fn gammas(&self) -> Vec<Complex64> {
        self.draws.iter().map(|d| d.gamma).collect()
    }
}
