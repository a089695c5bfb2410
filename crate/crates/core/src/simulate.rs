//! Exact simulation of the race.
//!
//! Each contact clock is sampled by inverting the cumulative rate: with
//! `E ~ Exp(1)`, the first event of a Poisson process with rate `a(t)` is
//! `τ = ā^{-1}(E)`, and no contact occurs within the span when `E > ā(span)`.
//! Every episode consumes a fixed set of draws ([`EpisodeDraws`]), so two
//! policy profiles can be compared on common random numbers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{Method, UtilityReport};
use crate::model::{GameParams, PiecewiseConstantControl, StageState, TwoStagePolicy};

/// Replicas per independently seeded chunk.
pub const CHUNK: usize = 4096;

/// Seed and stream of a simulation run. Chunk `k` of stream `s` draws from
/// the ChaCha stream `(s << 32) | k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSpec {
    pub seed: u64,
    pub stream: u32,
}

impl RngSpec {
    pub fn new(seed: u64) -> Self {
        RngSpec { seed, stream: 0 }
    }

    pub fn with_stream(self, stream: u32) -> Self {
        RngSpec { stream, ..self }
    }

    pub fn chunk_rng(&self, chunk: u32) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((self.stream as u64) << 32) | chunk as u64);
        rng
    }
}

/// First contact time of `a` within its span, or `None`.
pub fn sample_contact_time<R: Rng + ?Sized>(a: &PiecewiseConstantControl, rng: &mut R) -> Option<f64> {
    let e: f64 = rng.sample(Exp1);
    a.inverse_cumulative(e)
}

/// Unit-exponential levels for every clock of one episode and a uniform
/// for breaking exact ties.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeDraws {
    pub lock1: Vec<f64>,
    pub lock2: Vec<f64>,
    pub tie: f64,
}

impl EpisodeDraws {
    pub fn sample<R: Rng + ?Sized>(n_agents: usize, rng: &mut R) -> Self {
        let mut lock1 = Vec::with_capacity(n_agents);
        let mut lock2 = Vec::with_capacity(n_agents);
        for _ in 0..n_agents {
            lock1.push(rng.sample(Exp1));
            lock2.push(rng.sample(Exp1));
        }
        EpisodeDraws {
            lock1,
            lock2,
            tie: rng.random(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentOutcome {
    /// Contact times with lock 1 and, for two locks, lock 2 (absolute time).
    pub contacts: Vec<Option<f64>>,
    /// Whether each contact was the first at its lock.
    pub success: Vec<bool>,
    /// `∫ a` over the active durations.
    pub cost: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub agents: Vec<AgentOutcome>,
    pub winner: Option<usize>,
}

/// Plays one episode from pre-drawn randomness.
pub fn play_episode(policies: &[TwoStagePolicy], p: &GameParams, draws: &EpisodeDraws) -> EpisodeOutcome {
    let t_end = p.horizon;
    let first: Vec<Option<f64>> = policies
        .iter()
        .zip(&draws.lock1)
        .map(|(pi, &e)| pi.stage1.inverse_cumulative(e).filter(|&t| t <= t_end))
        .collect();
    let earliest = first.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let winner = if earliest.is_finite() {
        let tied: Vec<usize> = (0..first.len()).filter(|&k| first[k] == Some(earliest)).collect();
        let pick = ((draws.tie * tied.len() as f64) as usize).min(tied.len() - 1);
        Some(tied[pick])
    } else {
        None
    };

    let mut agents = Vec::with_capacity(policies.len());
    for (k, pi) in policies.iter().enumerate() {
        let won = winner == Some(k);
        let mut outcome = AgentOutcome {
            contacts: vec![first[k]],
            success: vec![won],
            cost: pi.stage1.cumulative_rate(first[k].unwrap_or(t_end)),
            reward: 0.0,
        };
        if p.locks == 1 {
            outcome.reward = if won { 1.0 } else { 0.0 };
        } else {
            let mut second = None;
            if let Some(tau) = first[k] {
                let state = if won {
                    StageState::success(tau)
                } else {
                    StageState::failure(tau)
                };
                let a2 = pi.stage2_control(state);
                let rel = a2.inverse_cumulative(draws.lock2[k]);
                outcome.cost += a2.cumulative_rate(rel.unwrap_or(a2.span()));
                second = rel.map(|r| tau + r);
            }
            outcome.contacts.push(second);
            outcome.success.push(won && second.is_some());
            outcome.reward = if won && second.is_some() { 1.0 } else { 0.0 };
        }
        agents.push(outcome);
    }
    let winner = match p.locks {
        1 => winner,
        _ => winner.filter(|&w| agents[w].reward > 0.0),
    };
    EpisodeOutcome { agents, winner }
}

pub fn simulate_episode<R: Rng + ?Sized>(
    policies: &[TwoStagePolicy],
    p: &GameParams,
    rng: &mut R,
) -> EpisodeOutcome {
    let draws = EpisodeDraws::sample(policies.len(), rng);
    play_episode(policies, p, &draws)
}

/// Streaming mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    pub n: u64,
    pub mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(self, o: Welford) -> Welford {
        if self.n == 0 {
            return o;
        }
        if o.n == 0 {
            return self;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        Welford {
            n,
            mean: self.mean + d * o.n as f64 / n as f64,
            m2: self.m2 + o.m2 + d * d * (self.n as f64 * o.n as f64) / n as f64,
        }
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Tally {
    reward: Vec<Welford>,
    cost: Vec<Welford>,
    utility: Vec<Welford>,
}

impl Tally {
    fn new(n: usize) -> Self {
        Tally {
            reward: vec![Welford::default(); n],
            cost: vec![Welford::default(); n],
            utility: vec![Welford::default(); n],
        }
    }

    fn push(&mut self, ep: &EpisodeOutcome, nu: f64) {
        for (k, a) in ep.agents.iter().enumerate() {
            self.reward[k].push(a.reward);
            self.cost[k].push(a.cost);
            self.utility[k].push(a.reward - nu * a.cost);
        }
    }

    fn merge(self, o: Tally) -> Tally {
        let zip = |a: Vec<Welford>, b: Vec<Welford>| a.into_iter().zip(b).map(|(x, y)| x.merge(y)).collect();
        Tally {
            reward: zip(self.reward, o.reward),
            cost: zip(self.cost, o.cost),
            utility: zip(self.utility, o.utility),
        }
    }
}

fn chunks(reps: usize) -> Vec<(u32, usize)> {
    (0..reps.div_ceil(CHUNK))
        .map(|k| (k as u32, CHUNK.min(reps - k * CHUNK)))
        .collect()
}

/// Monte Carlo utility of every agent, deterministic in `rng`.
///
/// Chunks run in parallel and are merged in chunk order, so the result does
/// not depend on the thread count.
pub fn estimate_utilities(
    policies: &[TwoStagePolicy],
    p: &GameParams,
    reps: usize,
    rng: RngSpec,
) -> Vec<UtilityReport> {
    let n = policies.len();
    let tallies: Vec<Tally> = chunks(reps.max(1))
        .into_par_iter()
        .map(|(chunk, size)| {
            let mut r = rng.chunk_rng(chunk);
            let mut t = Tally::new(n);
            for _ in 0..size {
                t.push(&simulate_episode(policies, p, &mut r), p.nu);
            }
            t
        })
        .collect();
    let total = tallies.into_iter().fold(Tally::new(n), Tally::merge);
    (0..n)
        .map(|k| UtilityReport {
            success_prob: total.reward[k].mean,
            expected_cost: total.cost[k].mean,
            utility: total.utility[k].mean,
            method: Method::MonteCarlo,
            stderr: Some(total.utility[k].stderr()),
        })
        .collect()
}

/// Paired estimate of one agent's gain from a unilateral deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationEstimate {
    pub baseline: f64,
    pub deviated: f64,
    pub gain: f64,
    /// Standard error of the paired difference.
    pub stderr: f64,
}

/// Estimates `J_agent(deviation) − J_agent(profile)` on common random numbers.
pub fn estimate_deviation(
    profile: &[TwoStagePolicy],
    agent: usize,
    deviation: &TwoStagePolicy,
    p: &GameParams,
    reps: usize,
    rng: RngSpec,
) -> DeviationEstimate {
    let n = profile.len();
    let mut deviated = profile.to_vec();
    deviated[agent] = deviation.clone();
    let parts: Vec<(Welford, Welford)> = chunks(reps.max(1))
        .into_par_iter()
        .map(|(chunk, size)| {
            let mut r = rng.chunk_rng(chunk);
            let (mut base, mut diff) = (Welford::default(), Welford::default());
            for _ in 0..size {
                let draws = EpisodeDraws::sample(n, &mut r);
                let u = |ep: EpisodeOutcome| {
                    let a = &ep.agents[agent];
                    a.reward - p.nu * a.cost
                };
                let b = u(play_episode(profile, p, &draws));
                let d = u(play_episode(&deviated, p, &draws));
                base.push(b);
                diff.push(d - b);
            }
            (base, diff)
        })
        .collect();
    let (base, diff) = parts
        .into_iter()
        .fold((Welford::default(), Welford::default()), |(a, b), (c, d)| (a.merge(c), b.merge(d)));
    DeviationEstimate {
        baseline: base.mean,
        deviated: base.mean + diff.mean,
        gain: diff.mean,
        stderr: diff.stderr(),
    }
}

/// One-sample Kolmogorov–Smirnov test of contact times against
/// `F(t) = 1 − e^{−ā(t)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub n: usize,
    pub statistic: f64,
    /// 1% critical value `1.628 / √n`.
    pub critical: f64,
}

impl KsReport {
    pub fn passed(&self) -> bool {
        self.statistic < self.critical
    }
}

/// KS statistic of `n` sampled contact times. Samples without a contact sit
/// at `+∞`, where both distribution functions reach one.
pub fn ks_test(a: &PiecewiseConstantControl, n: usize, rng: RngSpec) -> KsReport {
    let mut r = rng.chunk_rng(0);
    let mut times: Vec<f64> = (0..n).filter_map(|_| sample_contact_time(a, &mut r)).collect();
    times.sort_by(f64::total_cmp);
    let nf = n as f64;
    let statistic = times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let f = -(-a.cumulative_rate(t)).exp_m1();
            ((i + 1) as f64 / nf - f).max(f - i as f64 / nf)
        })
        .fold(0.0, f64::max);
    KsReport {
        n,
        statistic,
        critical: 1.628 / nf.sqrt(),
    }
}
