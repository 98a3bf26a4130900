//! Exact samplers for alarm times, sojourns and Gamma weights, plus the
//! keyed random streams that drive every simulation.
//!
//! Rates are handled through their logarithms so that clocks of size
//! `~10³` never produce an overflowing `e^T`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("uniform draw {0} outside (0, 1)")]
    UniformDomain(f64),
    #[error("parameter `{name}` = {value} must be positive and finite")]
    NonPositive { name: &'static str, value: f64 },
}

fn positive(name: &'static str, value: f64) -> Result<(), SamplingError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(SamplingError::NonPositive { name, value })
    }
}

/// Which independent stream of a replica a generator belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StreamId {
    Global,
    Vertex(usize),
    Aux(u32),
}

impl StreamId {
    fn code(self) -> u64 {
        match self {
            StreamId::Global => 0,
            StreamId::Vertex(v) => 1 + v as u64,
            StreamId::Aux(k) => (1 << 63) | k as u64,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A ChaCha8 stream keyed by `(seed, replica)` with the stream id selecting
/// one of ChaCha's 2⁶⁴ independent streams. Same key, same draws.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    replica: u64,
    stream: StreamId,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, replica: u64, stream: StreamId) -> Self {
        let mut state = seed ^ replica.wrapping_mul(0xD1B5_4A32_D192_ED03);
        let mut key = [0u8; 32];
        for chunk in key.chunks_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream.code());
        Self {
            seed,
            replica,
            stream,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn replica(&self) -> u64 {
        self.replica
    }

    pub fn stream(&self) -> StreamId {
        self.stream
    }

    /// Another stream of the same replica.
    pub fn sibling(&self, stream: StreamId) -> Self {
        Self::new(self.seed, self.replica, stream)
    }

    /// Uniform on `(0, 1]`.
    pub fn open_closed(&mut self) -> f64 {
        1.0 - self.rng.random::<f64>()
    }

    /// Uniform on `(0, 1)`.
    pub fn open(&mut self) -> f64 {
        loop {
            let u: f64 = self.rng.random();
            if u > 0.0 {
                return u;
            }
        }
    }

    /// Exp(1) draw as `-log(u)` with `u ∈ (0, 1]`.
    pub fn exp1(&mut self) -> f64 {
        -self.open_closed().ln()
    }

    /// Standard Gumbel draw.
    pub fn gumbel(&mut self) -> f64 {
        -self.exp1().ln()
    }

    pub fn standard_normal(&mut self) -> f64 {
        rand_distr::StandardNormal.sample(&mut self.rng)
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

/// Inverse of `F_W^{(T)}(t) = 1 - exp(-W (e^t - e^T))`, evaluated as
/// `T + log1p(-log(1-u) e^{-T} / W)` so large `T` stays finite.
pub fn alarm_inverse_cdf(w: f64, t: f64, u: f64) -> Result<f64, SamplingError> {
    if !(u > 0.0 && u < 1.0) {
        return Err(SamplingError::UniformDomain(u));
    }
    Ok(t + alarm_increment(w, t, u)?)
}

/// `t - T` for the draw of [`alarm_inverse_cdf`], without the cancellation
/// of forming `t` first.
pub fn alarm_increment(w: f64, t: f64, u: f64) -> Result<f64, SamplingError> {
    if !(u > 0.0 && u < 1.0) {
        return Err(SamplingError::UniformDomain(u));
    }
    positive("W", w)?;
    let e = -(-u).ln_1p();
    Ok((e * (-t).exp() / w).ln_1p())
}

/// CDF `F_W^{(T)}`, used by tests and the `sample` subcommand.
pub fn alarm_cdf(w: f64, t0: f64, t: f64) -> f64 {
    if t < t0 {
        0.0
    } else {
        // W(e^t - e^T) = W e^T (e^{t-T} - 1)
        -(-(w * t0.exp() * (t - t0).exp_m1())).exp_m1()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlarmMethod {
    /// `Θ_{k+1} ~ F_W^{(Θ_k)}` iteratively.
    Sequential,
    /// `W(e^{Θ_k} - 1) = ξ_1 + … + ξ_k`.
    PoissonEmbed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlarmSequence {
    pub vertex: usize,
    pub alarms: Vec<f64>,
}

/// Law of the alarm clock of one vertex.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AlarmLaw {
    /// Intensity `W e^s ds` in clock units.
    Reinforced { weight: f64, method: AlarmMethod },
    /// Yule-type clock `Θ_k = Σ_{l<k} ξ_l / (a + l)`.
    Vrrw { initial: f64 },
}

/// Lazily extended alarm sequence for one vertex.
#[derive(Clone, Debug)]
pub struct AlarmClock {
    law: AlarmLaw,
    rng: RngStream,
    last: f64,
    cumulative: f64,
    count: u64,
    pending_zero: bool,
}

impl AlarmClock {
    /// `start` puts the initial alarm at clock 0. For the Yule clock, the
    /// visit at time 0 counts, so the start vertex continues with `a + 1`.
    pub fn new(law: AlarmLaw, start: bool, rng: RngStream) -> Result<Self, SamplingError> {
        let law = match law {
            AlarmLaw::Reinforced { weight, method } => {
                positive("W", weight)?;
                AlarmLaw::Reinforced { weight, method }
            }
            AlarmLaw::Vrrw { initial } => {
                positive("a", initial)?;
                AlarmLaw::Vrrw {
                    initial: if start { initial + 1.0 } else { initial },
                }
            }
        };
        Ok(Self {
            law,
            rng,
            last: 0.0,
            cumulative: 0.0,
            count: 0,
            pending_zero: start,
        })
    }

    pub fn next_alarm(&mut self) -> f64 {
        if self.pending_zero {
            self.pending_zero = false;
            return 0.0;
        }
        let xi = self.rng.exp1();
        let next = match self.law {
            AlarmLaw::Reinforced {
                weight,
                method: AlarmMethod::Sequential,
            } => self.last + (xi * (-self.last).exp() / weight).ln_1p(),
            AlarmLaw::Reinforced {
                weight,
                method: AlarmMethod::PoissonEmbed,
            } => {
                self.cumulative += xi;
                (self.cumulative / weight).ln_1p()
            }
            AlarmLaw::Vrrw { initial } => self.last + xi / (initial + self.count as f64),
        };
        self.count += 1;
        // Strictly increasing even when the increment underflows.
        self.last = if next > self.last { next } else { f64::from_bits(self.last.to_bits() + 1) };
        self.last
    }
}

fn collect(vertex: usize, mut clock: AlarmClock, n: usize) -> AlarmSequence {
    AlarmSequence {
        vertex,
        alarms: (0..n).map(|_| clock.next_alarm()).collect(),
    }
}

/// First `n` alarms of a reinforced clock with weight `w`. `start` prepends
/// the alarm at 0 used by the start vertex.
pub fn alarm_sequence(
    vertex: usize,
    w: f64,
    n: usize,
    start: bool,
    rng: RngStream,
    method: AlarmMethod,
) -> Result<AlarmSequence, SamplingError> {
    let clock = AlarmClock::new(AlarmLaw::Reinforced { weight: w, method }, start, rng)?;
    Ok(collect(vertex, clock, n))
}

/// First `n` alarms `Θ_k = Σ_{l<k} ξ_l/(a+l)` of the discrete-walk clock.
pub fn vrrw_alarm_sequence(
    vertex: usize,
    a: f64,
    n: usize,
    start: bool,
    rng: RngStream,
) -> Result<AlarmSequence, SamplingError> {
    let clock = AlarmClock::new(AlarmLaw::Vrrw { initial: a }, start, rng)?;
    Ok(collect(vertex, clock, n))
}

/// Sojourn at a vertex whose total exit rate is `Z e^s` after `s` time
/// units: `s = log1p(E e^{-log Z})`, survival `exp(-Z(e^s - 1))`.
pub fn sample_sojourn(log_z: f64, rng: &mut RngStream) -> f64 {
    let e = rng.exp1();
    sojourn_from_exp(log_z, e)
}

pub fn sojourn_from_exp(log_z: f64, e: f64) -> f64 {
    if log_z == f64::INFINITY {
        return 0.0;
    }
    (e * (-log_z).exp()).ln_1p()
}

/// Independent `Gamma(a_i, 1)` draws.
pub fn sample_gamma_weights(a: &[f64], rng: &mut RngStream) -> Result<Vec<f64>, SamplingError> {
    a.iter()
        .map(|&shape| {
            positive("a", shape)?;
            let g = Gamma::new(shape, 1.0).map_err(|_| SamplingError::NonPositive {
                name: "a",
                value: shape,
            })?;
            Ok(g.sample(rng))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(k: u64) -> RngStream {
        RngStream::new(7, k, StreamId::Global)
    }

    #[test]
    fn inverse_cdf_at_known_point() {
        let u = 1.0 - (-(std::f64::consts::E - 1.0)).exp();
        assert!((alarm_inverse_cdf(1.0, 0.0, u).unwrap() - 1.0).abs() < 1e-14);
        assert!((alarm_cdf(1.0, 0.0, 1.0) - u).abs() < 1e-15);
    }

    #[test]
    fn inverse_cdf_small_u_tends_to_t() {
        let t = alarm_inverse_cdf(1.0, 0.0, 1e-300).unwrap();
        assert!(t > 0.0 && t < 1e-290);
    }

    #[test]
    fn inverse_cdf_domain() {
        assert_eq!(
            alarm_inverse_cdf(1.0, 0.0, 0.0).unwrap_err(),
            SamplingError::UniformDomain(0.0)
        );
        assert!(alarm_inverse_cdf(1.0, 0.0, 1.0).is_err());
        assert!(alarm_inverse_cdf(0.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn inverse_cdf_large_t_finite() {
        let t = alarm_inverse_cdf(2.0, 1000.0, 0.5).unwrap();
        assert!(t >= 1000.0 && t.is_finite());
        let inc = alarm_increment(2.0, 700.0, 0.5).unwrap();
        let want = (2f64).ln().ln() - 700.0 - 2f64.ln();
        assert!(inc > 0.0 && (inc.ln() - want).abs() < 1e-12);
    }

    #[test]
    fn inverse_cdf_inverts_cdf() {
        for &(w, t0) in &[(0.5, 0.0), (2.0, 1.0), (3.0, 4.0)] {
            for k in 1..20 {
                let u = k as f64 / 20.0;
                let t = alarm_inverse_cdf(w, t0, u).unwrap();
                assert!((alarm_cdf(w, t0, t) - u).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn alarm_sequences_increase() {
        for method in [AlarmMethod::Sequential, AlarmMethod::PoissonEmbed] {
            let s = alarm_sequence(0, 1.0, 3, false, rng(1), method).unwrap();
            assert!(s.alarms[0] > 0.0);
            assert!(s.alarms.windows(2).all(|w| w[0] < w[1]));
            let s = alarm_sequence(0, 1.0, 3, true, rng(1), method).unwrap();
            assert_eq!(s.alarms[0], 0.0);
            assert!(s.alarms.windows(2).all(|w| w[0] < w[1]));
        }
        let v = vrrw_alarm_sequence(2, 1.0, 50, false, rng(2)).unwrap();
        assert!(v.alarms.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn streams_reproducible_and_distinct() {
        let mut a = RngStream::new(1, 2, StreamId::Vertex(3));
        let mut b = RngStream::new(1, 2, StreamId::Vertex(3));
        let mut c = RngStream::new(1, 2, StreamId::Vertex(4));
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..8).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn sojourn_limits() {
        assert_eq!(sojourn_from_exp(f64::INFINITY, 1.0), 0.0);
        assert!(sojourn_from_exp(800.0, 1.0) < 1e-300);
        // survival exp(-Z(e^s-1)) with E = Z(e^s - 1)
        let s = sojourn_from_exp(4f64.ln(), 0.7);
        assert!((4.0 * s.exp_m1() - 0.7).abs() < 1e-14);
    }

    #[test]
    fn gamma_rejects_bad_shape() {
        assert!(sample_gamma_weights(&[1.0, 0.0], &mut rng(3)).is_err());
    }
}
