use super::system::LatentChain;
use crate::rng::Rng;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

/// Current state of a latent chain and the time left until it switches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentState {
    pub state: usize,
    pub clock: f64,
}

fn exponential(rate: f64, rng: &mut Rng) -> f64 {
    if rate > 0.0 {
        // 1 − U lies in (0, 1], so the log is finite
        -(1.0 - rng.random::<f64>()).ln() / rate
    } else {
        f64::INFINITY
    }
}

impl LatentState {
    pub fn start(chain: &LatentChain, rng: &mut Rng) -> Self {
        let state = chain.initial_state;
        Self { state, clock: exponential(chain.rate_out_of(state), rng) }
    }
}

/// Advances the chain by `dt` with exact exponential waiting times.
/// Returns true when the state changed.
pub fn advance_latent_chain(chain: &LatentChain, current: &mut LatentState, dt: f64, rng: &mut Rng) -> bool {
    let before = current.state;
    current.clock -= dt;
    while current.clock <= 0.0 {
        current.state = 1 - current.state;
        current.clock += exponential(chain.rate_out_of(current.state), rng);
    }
    current.state != before
}

/// Feature vector μ_state + N(0, σ²I), appended to `out`.
pub fn emit_features(chain: &LatentChain, state: usize, rng: &mut Rng, out: &mut Vec<f64>) {
    for &m in &chain.mu[state] {
        let z: f64 = StandardNormal.sample(rng);
        out.push(m + chain.sigma_feat * z);
    }
}
