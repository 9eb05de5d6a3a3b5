//! Pair-coalescence simulators and excursion diagnostics for random-walk
//! genealogies.
//!
//! Three samplers share one mechanic — two ancestral lineages whose
//! positions jump at exponential event times until they merge:
//! [`simulate_stepping_pair`] (haploid colonies on the integer line),
//! [`simulate_ring_pair`] (diploid colonies on a ring), and
//! [`simulate_voter_pair`] (a single difference walk driven by a dispersal
//! kernel). Each returns a [`CoalescenceSample`] carrying the raw merge time
//! and its model-specific rescaling.
//!
//! The path side decomposes walk trajectories into excursion cycles around
//! the origin ([`cycle_decompose`]), counts strip crossings
//! ([`crossing_local_time`]) and zero visits ([`count_zero_visits`]), and
//! pools cycle statistics ([`cycle_moment_diagnostics`]). These expose the
//! renewal structure that connects the discrete walks to their local-time
//! limits.
//!
//! Replicas are embarrassingly parallel: [`run_replicas`] hands every
//! replica its own seeded stream and collects results in replica order, so
//! ensembles are bit-identical regardless of how work is scheduled.

use std::io::{self, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;
use thiserror::Error;

use crate::dispersal::DispersalKernel;
use crate::stats::SeedPlan;

/// Default cap on simulated events per replica.
pub const DEFAULT_MAX_STEPS: u64 = 1_000_000_000;

/// Pooled-cycle count below which moment estimates are flagged.
pub const SUFFICIENT_CYCLES: usize = 1_000;

#[derive(Debug, Error, PartialEq)]
pub enum GenealogyError {
    #[error("colony size must be at least 1")]
    BadColonySize,
    #[error("migration probability {0} is outside (0, 1)")]
    BadMigration(f64),
    #[error("two lineages in single-individual colonies need separation at least 1")]
    DegeneratePair,
    #[error("a ring needs at least 3 colonies, got {0}")]
    BadRingSize(u64),
    #[error("diploid colony size must be at least 1")]
    BadDipSize,
    #[error("mutation probability {0} is outside [0, 1)")]
    BadMutation(f64),
    #[error("separation {separation} does not fit a ring of {colonies} colonies")]
    BadSeparation { separation: u64, colonies: u64 },
    #[error("the event cap must be positive")]
    BadMaxSteps,
}

// ── Configurations ─────────────────────────────────────────────────────

/// Two lineages in haploid colonies of `colony_size` individuals on ℤ.
///
/// Every individual is replaced at rate 1; the replacement's parent lives in
/// the same colony with probability `1 − migration` and in a uniformly
/// chosen adjacent colony otherwise, uniform among that colony's
/// individuals either way.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SteppingStoneConfig {
    colony_size: u64,
    migration: f64,
    separation: u64,
    max_steps: u64,
}

impl SteppingStoneConfig {
    pub fn new(colony_size: u64, migration: f64, separation: u64) -> Result<Self, GenealogyError> {
        if colony_size == 0 {
            return Err(GenealogyError::BadColonySize);
        }
        if !(migration > 0.0 && migration < 1.0) {
            return Err(GenealogyError::BadMigration(migration));
        }
        if colony_size == 1 && separation == 0 {
            // A colony of one cannot host two distinct lineages.
            return Err(GenealogyError::DegeneratePair);
        }
        Ok(SteppingStoneConfig {
            colony_size,
            migration,
            separation,
            max_steps: DEFAULT_MAX_STEPS,
        })
    }

    pub fn with_max_steps(mut self, max_steps: u64) -> Result<Self, GenealogyError> {
        if max_steps == 0 {
            return Err(GenealogyError::BadMaxSteps);
        }
        self.max_steps = max_steps;
        Ok(self)
    }

    pub fn colony_size(&self) -> u64 {
        self.colony_size
    }

    pub fn migration(&self) -> f64 {
        self.migration
    }

    pub fn separation(&self) -> u64 {
        self.separation
    }

    pub fn max_steps(&self) -> u64 {
        self.max_steps
    }

    /// Effective coalescence-rate parameter `colony_size · migration /
    /// separation`; infinite for co-started pairs.
    pub fn alpha(&self) -> f64 {
        if self.separation == 0 {
            f64::INFINITY
        } else {
            self.colony_size as f64 * self.migration / self.separation as f64
        }
    }

    /// Factor taking raw times to scaled times: `2·migration/separation²`
    /// (infinite for co-started pairs, whose scaled time is degenerate).
    pub fn scale_factor(&self) -> f64 {
        if self.separation == 0 {
            f64::INFINITY
        } else {
            let l = self.separation as f64;
            2.0 * self.migration / (l * l)
        }
    }
}

/// Two lineages in diploid colonies on a ring; each colony holds
/// `2·dip_size` gene copies with the same per-gene replacement mechanics as
/// the line model, colony arithmetic modulo `colonies`.
///
/// `mutation` is carried for the fixation formulas evaluated elsewhere; the
/// pair simulation itself tracks ancestry only and never mutates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RingConfig {
    colonies: u64,
    dip_size: u64,
    migration: f64,
    mutation: f64,
    separation: u64,
    max_steps: u64,
}

impl RingConfig {
    pub fn new(
        colonies: u64,
        dip_size: u64,
        migration: f64,
        mutation: f64,
        separation: u64,
    ) -> Result<Self, GenealogyError> {
        if colonies < 3 {
            return Err(GenealogyError::BadRingSize(colonies));
        }
        if dip_size == 0 {
            return Err(GenealogyError::BadDipSize);
        }
        if !(migration > 0.0 && migration < 1.0) {
            return Err(GenealogyError::BadMigration(migration));
        }
        if !(mutation >= 0.0 && mutation < 1.0) {
            return Err(GenealogyError::BadMutation(mutation));
        }
        if separation >= colonies {
            return Err(GenealogyError::BadSeparation { separation, colonies });
        }
        Ok(RingConfig {
            colonies,
            dip_size,
            migration,
            mutation,
            separation,
            max_steps: DEFAULT_MAX_STEPS,
        })
    }

    pub fn with_max_steps(mut self, max_steps: u64) -> Result<Self, GenealogyError> {
        if max_steps == 0 {
            return Err(GenealogyError::BadMaxSteps);
        }
        self.max_steps = max_steps;
        Ok(self)
    }

    pub fn colonies(&self) -> u64 {
        self.colonies
    }

    pub fn dip_size(&self) -> u64 {
        self.dip_size
    }

    /// Gene copies per colony.
    pub fn genes(&self) -> u64 {
        2 * self.dip_size
    }

    pub fn migration(&self) -> f64 {
        self.migration
    }

    pub fn mutation(&self) -> f64 {
        self.mutation
    }

    pub fn separation(&self) -> u64 {
        self.separation
    }

    pub fn max_steps(&self) -> u64 {
        self.max_steps
    }

    /// Effective rate parameter `genes · migration / colonies`.
    pub fn alpha(&self) -> f64 {
        self.genes() as f64 * self.migration / self.colonies as f64
    }

    /// Factor taking raw times to scaled times: `migration/colonies²`.
    pub fn scale_factor(&self) -> f64 {
        let c = self.colonies as f64;
        self.migration / (c * c)
    }
}

/// Difference walk of two voter-model lineages: jumps arrive at rate 2 and
/// displace by kernel draws; coalescence is the first visit to 0.
#[derive(Clone, Copy, Debug)]
pub struct VoterConfig<'k> {
    kernel: &'k DispersalKernel,
    separation: u64,
    max_steps: u64,
}

impl<'k> VoterConfig<'k> {
    pub fn new(kernel: &'k DispersalKernel, separation: u64) -> Result<Self, GenealogyError> {
        Ok(VoterConfig { kernel, separation, max_steps: DEFAULT_MAX_STEPS })
    }

    pub fn with_max_steps(mut self, max_steps: u64) -> Result<Self, GenealogyError> {
        if max_steps == 0 {
            return Err(GenealogyError::BadMaxSteps);
        }
        self.max_steps = max_steps;
        Ok(self)
    }

    pub fn kernel(&self) -> &'k DispersalKernel {
        self.kernel
    }

    pub fn separation(&self) -> u64 {
        self.separation
    }

    pub fn max_steps(&self) -> u64 {
        self.max_steps
    }

    /// Diffusive starting point `separation / (σ_N · N)`.
    pub fn x0(&self) -> f64 {
        self.separation as f64 / (self.kernel.sigma_n() * self.kernel.n() as f64)
    }

    /// Factor taking raw times to scaled times: `2/N`.
    pub fn scale_factor(&self) -> f64 {
        2.0 / self.kernel.n() as f64
    }
}

// ── Samples ────────────────────────────────────────────────────────────

/// One replica's coalescence outcome.
///
/// A censored replica (`coalesced == false`) reports the time and event
/// count at the cap, which lower-bound the true values; right-censoring is
/// exact for survival estimates below the censoring horizon.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoalescenceSample {
    pub replica: u64,
    /// Model time at coalescence (or at the event cap).
    pub raw_time: f64,
    /// `raw_time` times the model's documented scale factor.
    pub scaled_time: f64,
    pub coalesced: bool,
    /// Simulated events: every replacement event while the pair shares a
    /// colony plus each migration event while separated (separated-stretch
    /// events that cannot change the state are elided from the event clock),
    /// or every jump of the difference walk.
    pub events: u64,
}

/// Exponential waiting time by inversion; one uniform draw per call.
fn waiting_time(rng: &mut impl Rng, rate: f64) -> f64 {
    // 1 − U lies in (0, 1], so the log is finite.
    -(1.0 - rng.gen::<f64>()).ln() / rate
}

/// Picks the moving lineage and its direction; two uniform draws per call.
fn lineage_and_direction(rng: &mut impl Rng) -> (bool, i64) {
    let first = rng.gen::<f64>() < 0.5;
    let dir = if rng.gen::<f64>() < 0.5 { -1 } else { 1 };
    (first, dir)
}

/// Simulates one lineage pair in the line model exactly.
///
/// Raw replacement events for the pair arrive at rate 2. While the lineages
/// occupy different colonies only migration events (probability `migration`
/// each) can change anything, so those stretches run on the thinned
/// migration clock of rate `2·migration`; every observable keeps its exact
/// law. Co-located stretches keep the full event clock because a
/// same-colony parent pick can end the run. A migration that lands a
/// lineage in its partner's colony draws that partner as parent with
/// probability `1/colony_size` at the same event.
pub fn simulate_stepping_pair(
    cfg: &SteppingStoneConfig,
    replica: u64,
    rng: &mut impl Rng,
) -> CoalescenceSample {
    let colony = cfg.colony_size as f64;
    let nu = cfg.migration;
    let p_stay_coalesce = (1.0 - nu) / colony;
    let p_inherit = 1.0 / colony;
    let mut a: i64 = 0;
    let mut b = cfg.separation as i64;
    let mut t = 0.0;
    let mut events = 0;
    let mut coalesced = false;
    while events < cfg.max_steps {
        events += 1;
        if a == b {
            t += waiting_time(rng, 2.0);
            let u: f64 = rng.gen();
            if u < p_stay_coalesce {
                coalesced = true;
                break;
            }
            if u < p_stay_coalesce + nu {
                // The mover's parent colony is a neighbor, never the shared
                // colony, so this event cannot coalesce.
                let (first, dir) = lineage_and_direction(rng);
                if first {
                    a += dir;
                } else {
                    b += dir;
                }
            }
            // Remaining mass: a same-colony parent other than the partner —
            // ancestry relabels inside the colony and nothing moves.
        } else {
            t += waiting_time(rng, 2.0 * nu);
            let (first, dir) = lineage_and_direction(rng);
            if first {
                a += dir;
            } else {
                b += dir;
            }
            if a == b && rng.gen::<f64>() < p_inherit {
                coalesced = true;
                break;
            }
        }
    }
    CoalescenceSample {
        replica,
        raw_time: t,
        scaled_time: t * cfg.scale_factor(),
        coalesced,
        events,
    }
}

/// Simulates one gene pair on the ring; mechanics as the line model with
/// colony arithmetic modulo the ring size and `2·dip_size` genes per colony.
pub fn simulate_ring_pair(cfg: &RingConfig, replica: u64, rng: &mut impl Rng) -> CoalescenceSample {
    let genes = cfg.genes() as f64;
    let m = cfg.migration;
    let ring = cfg.colonies as i64;
    let p_stay_coalesce = (1.0 - m) / genes;
    let p_inherit = 1.0 / genes;
    let mut a: i64 = 0;
    let mut b = cfg.separation as i64;
    let mut t = 0.0;
    let mut events = 0;
    let mut coalesced = false;
    while events < cfg.max_steps {
        events += 1;
        if a == b {
            t += waiting_time(rng, 2.0);
            let u: f64 = rng.gen();
            if u < p_stay_coalesce {
                coalesced = true;
                break;
            }
            if u < p_stay_coalesce + m {
                let (first, dir) = lineage_and_direction(rng);
                if first {
                    a = (a + dir).rem_euclid(ring);
                } else {
                    b = (b + dir).rem_euclid(ring);
                }
            }
        } else {
            t += waiting_time(rng, 2.0 * m);
            let (first, dir) = lineage_and_direction(rng);
            if first {
                a = (a + dir).rem_euclid(ring);
            } else {
                b = (b + dir).rem_euclid(ring);
            }
            if a == b && rng.gen::<f64>() < p_inherit {
                coalesced = true;
                break;
            }
        }
    }
    CoalescenceSample {
        replica,
        raw_time: t,
        scaled_time: t * cfg.scale_factor(),
        coalesced,
        events,
    }
}

/// Simulates the voter-model difference walk directly: rate-2 jump times,
/// kernel displacements, absorbed at 0.
pub fn simulate_voter_pair(cfg: &VoterConfig, replica: u64, rng: &mut impl Rng) -> CoalescenceSample {
    let mut pos = cfg.separation as i64;
    let mut t = 0.0;
    let mut events = 0;
    while pos != 0 && events < cfg.max_steps {
        events += 1;
        t += waiting_time(rng, 2.0);
        pos += cfg.kernel.sample(rng);
    }
    CoalescenceSample {
        replica,
        raw_time: t,
        scaled_time: t * cfg.scale_factor(),
        coalesced: pos == 0,
        events,
    }
}

/// Jump chain of the voter difference walk: `steps` kernel displacements
/// from the configured separation, positions recorded at every step.
pub fn voter_difference_path(cfg: &VoterConfig, steps: usize, rng: &mut impl Rng) -> Vec<i64> {
    let mut path = Vec::with_capacity(steps + 1);
    let mut pos = cfg.separation as i64;
    path.push(pos);
    for _ in 0..steps {
        pos += cfg.kernel.sample(rng);
        path.push(pos);
    }
    path
}

/// Embedded colony-difference chain of the line model: at each migration
/// event the difference moves ±1 with equal probability.
pub fn embedded_difference_walk(start: u64, steps: usize, rng: &mut impl Rng) -> Vec<i64> {
    let mut path = Vec::with_capacity(steps + 1);
    let mut pos = start as i64;
    path.push(pos);
    for _ in 0..steps {
        pos += if rng.gen::<u32>() & 1 == 0 { -1 } else { 1 };
        path.push(pos);
    }
    path
}

/// Running zero-visit counts `V_k = #{1 ≤ j ≤ k : path[j] = 0}` for
/// `k = 0..=horizon` (clamped to the path's length).
pub fn count_zero_visits(path: &[i64], horizon: usize) -> Vec<u64> {
    let last = horizon.min(path.len().saturating_sub(1));
    let mut counts = Vec::with_capacity(last + 1);
    let mut c = 0u64;
    counts.push(0);
    for &x in &path[1..=last] {
        if x == 0 {
            c += 1;
        }
        counts.push(c);
    }
    counts
}

// ── Excursion cycles ───────────────────────────────────────────────────

/// Exit level `2·n^(5/6)` and re-entry drop `n^(5/6)` used by the cycle
/// decomposition; both real-valued, compared strictly against integer
/// positions.
pub fn cycle_thresholds(n: u64) -> (f64, f64) {
    let half = (n as f64).powf(5.0 / 6.0);
    (2.0 * half, half)
}

/// One excursion cycle: the walk re-enters at step `t` (dropping below the
/// previous exit magnitude by the re-entry drop) and exits past the exit
/// level at step `s`.
///
/// Record 0 uses the virtual re-entry `t = −1`, so its span `eta` counts
/// `s + 1` steps and its `pos_t` reports the path's start.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CycleRecord {
    pub m: u64,
    /// Exit step index.
    pub s: usize,
    /// Re-entry step index (−1 for the opening record).
    pub t: i64,
    /// Cycle span `s − t` in steps.
    pub eta: u64,
    /// Whether this exit landed on the opposite side of 0 from the previous
    /// exit; always false for record 0.
    pub crossed: bool,
    pub pos_s: i64,
    pub pos_t: i64,
}

/// Cycle decomposition of one path, with the first zero-hitting cycle and
/// its accumulated inward/outward step budgets.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleDecomposition {
    pub n: u64,
    pub records: Vec<CycleRecord>,
    /// The path started at or below the exit level, so the opening record
    /// used the first exit of the centered strip instead of the standard
    /// start-outside convention.
    pub pre_phase: bool,
    /// The path ended inside a started cycle (a re-entry without its exit),
    /// or never produced a record at all.
    pub truncated: bool,
    /// Index of the first cycle whose inward segment `[max(t,0), s]`
    /// touches 0.
    pub j: Option<u64>,
    /// Steps spent outside cycles up to cycle `j`:
    /// `−1 + Σ_{m=1..j} (t_m − s_{m−1})`.
    pub a_j: Option<i64>,
    /// Steps spent inside cycles up to cycle `j`: `Σ_{m=0..j} eta_m`.
    pub b_j: Option<u64>,
}

impl CycleDecomposition {
    /// Index of the last completed cycle, if any.
    pub fn completed_cycles(&self) -> Option<u64> {
        self.records.last().map(|r| r.m)
    }

    /// Sign-change cycles among records with exit step at most `step`.
    pub fn crossings_up_to(&self, step: usize) -> u64 {
        self.records.iter().filter(|r| r.crossed && r.s <= step).count() as u64
    }

    /// Sign-change cycles over the whole path.
    pub fn crossings(&self) -> u64 {
        self.records.iter().filter(|r| r.crossed).count() as u64
    }
}

/// Decomposes a walk path into excursion cycles around the origin.
///
/// Exits are strict: step `s` qualifies when `|path[s]|` exceeds the exit
/// level; re-entries are strict drops of more than the re-entry drop below
/// the previous exit's magnitude. A path starting at or below the exit
/// level is handled by the flagged pre-phase rule: the opening record's
/// exit is the first exit of the centered strip.
pub fn cycle_decompose(path: &[i64], n: u64) -> CycleDecomposition {
    let (exit_level, drop) = cycle_thresholds(n);
    let mut records: Vec<CycleRecord> = Vec::new();
    if path.is_empty() {
        return CycleDecomposition {
            n,
            records,
            pre_phase: false,
            truncated: true,
            j: None,
            a_j: None,
            b_j: None,
        };
    }
    let pre_phase = (path[0].unsigned_abs() as f64) <= exit_level;
    let mut awaiting_exit = true;
    let mut t_cur: i64 = -1;
    let mut last_exit: Option<i64> = None;
    for (k, &x) in path.iter().enumerate() {
        let magnitude = x.unsigned_abs() as f64;
        if awaiting_exit {
            if magnitude > exit_level {
                let m = records.len() as u64;
                records.push(CycleRecord {
                    m,
                    s: k,
                    t: t_cur,
                    eta: (k as i64 - t_cur) as u64,
                    crossed: last_exit.map_or(false, |p| (p < 0) != (x < 0)),
                    pos_s: x,
                    pos_t: if t_cur >= 0 { path[t_cur as usize] } else { path[0] },
                });
                last_exit = Some(x);
                awaiting_exit = false;
            }
        } else {
            let bar = (last_exit.unwrap().unsigned_abs() as f64) - drop;
            if magnitude < bar {
                t_cur = k as i64;
                awaiting_exit = true;
            }
        }
    }
    let truncated = awaiting_exit
        && (records.is_empty() || t_cur > records.last().unwrap().s as i64);
    let mut j = None;
    'scan: for rec in &records {
        let lo = rec.t.max(0) as usize;
        for &x in &path[lo..=rec.s] {
            if x == 0 {
                j = Some(rec.m);
                break 'scan;
            }
        }
    }
    let (a_j, b_j) = match j {
        Some(jj) => {
            let jj = jj as usize;
            let mut outside: i64 = -1;
            for m in 1..=jj {
                outside += records[m].t - records[m - 1].s as i64;
            }
            let inside: u64 = records[..=jj].iter().map(|r| r.eta).sum();
            (Some(outside), Some(inside))
        }
        None => (None, None),
    };
    CycleDecomposition { n, records, pre_phase, truncated, j, a_j, b_j }
}

/// Scaled crossing count `2 · (sign-change cycles with exit ≤ ⌊n·t⌋) /
/// n^(1/6)`.
pub fn crossing_local_time(path: &[i64], n: u64, t: f64) -> f64 {
    let horizon = (n as f64 * t).floor();
    if !horizon.is_finite() || horizon < 0.0 {
        return 0.0;
    }
    let dec = cycle_decompose(path, n);
    let count = dec
        .records
        .iter()
        .filter(|r| r.crossed && (r.s as f64) <= horizon)
        .count();
    2.0 * count as f64 / (n as f64).powf(1.0 / 6.0)
}

/// Pooled cycle-span statistics across many decompositions.
///
/// The pool holds spans of records with `m ≥ 1` (the opening record's span
/// depends on the start and is excluded); the block sums `B` feeding the
/// exceedance frequency keep the opening record per the budget convention.
#[derive(Clone, Copy, Debug)]
pub struct CycleMoments {
    /// Pooled stationary cycles.
    pub cycles: usize,
    pub mean_eta: f64,
    pub mean_eta_se: f64,
    pub mean_eta_sq: f64,
    pub mean_eta_sq_se: f64,
    /// Renewal prediction `3·n^(2/3)/σ²` for the mean span.
    pub predicted_mean: f64,
    /// Renewal prediction `19·n^(4/3)/σ⁴` for the second moment.
    pub predicted_second_moment: f64,
    /// Empirical frequency of `B_j > 2·n^(17/18)` with `j = ⌊n^(2/9)⌋`,
    /// over paths holding at least `j + 1` records.
    pub block_sum_exceedance: f64,
    pub eligible_blocks: usize,
    /// Whether the pool reaches [`SUFFICIENT_CYCLES`].
    pub sufficient: bool,
}

/// Pools cycle spans from many decompositions of walks driven by `kernel`
/// and reports their moments beside the renewal predictions.
pub fn cycle_moment_diagnostics(paths: &[CycleDecomposition], kernel: &DispersalKernel) -> CycleMoments {
    let nf = kernel.n() as f64;
    let sigma_sq = kernel.sigma_n() * kernel.sigma_n();
    let mut spans: Vec<f64> = Vec::new();
    for dec in paths {
        for rec in &dec.records {
            if rec.m >= 1 {
                spans.push(rec.eta as f64);
            }
        }
    }
    let (mean_eta, mean_eta_se) = mean_and_se(&spans);
    let squares: Vec<f64> = spans.iter().map(|&e| e * e).collect();
    let (mean_eta_sq, mean_eta_sq_se) = mean_and_se(&squares);

    let block_len = nf.powf(2.0 / 9.0).floor() as usize;
    let threshold = 2.0 * nf.powf(17.0 / 18.0);
    let mut eligible = 0usize;
    let mut exceeded = 0usize;
    for dec in paths {
        if dec.records.len() > block_len {
            eligible += 1;
            let block: u64 = dec.records[..=block_len].iter().map(|r| r.eta).sum();
            if block as f64 > threshold {
                exceeded += 1;
            }
        }
    }
    CycleMoments {
        cycles: spans.len(),
        mean_eta,
        mean_eta_se,
        mean_eta_sq,
        mean_eta_sq_se,
        predicted_mean: 3.0 * nf.powf(2.0 / 3.0) / sigma_sq,
        predicted_second_moment: 19.0 * nf.powf(4.0 / 3.0) / (sigma_sq * sigma_sq),
        block_sum_exceedance: if eligible == 0 { 0.0 } else { exceeded as f64 / eligible as f64 },
        eligible_blocks: eligible,
        sufficient: spans.len() >= SUFFICIENT_CYCLES,
    }
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

// ── Replica ensembles ──────────────────────────────────────────────────

/// Runs `replicas` independent tasks in parallel, each on its own seeded
/// stream, collecting results in replica order. The output is a pure
/// function of `(plan, replicas, task)` — thread count and scheduling
/// cannot change a single bit.
pub fn run_replicas<T, F>(plan: &SeedPlan, replicas: u64, task: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, &mut ChaCha8Rng) -> T + Sync,
{
    (0..replicas)
        .into_par_iter()
        .map(|replica| {
            let mut rng = plan.rng_for(replica);
            task(replica, &mut rng)
        })
        .collect()
}

pub fn stepping_ensemble(
    cfg: &SteppingStoneConfig,
    plan: &SeedPlan,
    replicas: u64,
) -> Vec<CoalescenceSample> {
    run_replicas(plan, replicas, |replica, rng| simulate_stepping_pair(cfg, replica, rng))
}

pub fn ring_ensemble(cfg: &RingConfig, plan: &SeedPlan, replicas: u64) -> Vec<CoalescenceSample> {
    run_replicas(plan, replicas, |replica, rng| simulate_ring_pair(cfg, replica, rng))
}

pub fn voter_ensemble(cfg: &VoterConfig, plan: &SeedPlan, replicas: u64) -> Vec<CoalescenceSample> {
    run_replicas(plan, replicas, |replica, rng| simulate_voter_pair(cfg, replica, rng))
}

// ── Exports ────────────────────────────────────────────────────────────

/// Streams samples as newline-delimited JSON objects with keys `replica`,
/// `raw_time`, `scaled_time`, `coalesced`. A non-finite scaled time (the
/// degenerate co-started line pair) serializes as null.
pub fn write_samples_ndjson<W: Write>(samples: &[CoalescenceSample], w: &mut W) -> io::Result<()> {
    for s in samples {
        let scaled = if s.scaled_time.is_finite() {
            json!(s.scaled_time)
        } else {
            json!(null)
        };
        let line = json!({
            "replica": s.replica,
            "raw_time": s.raw_time,
            "scaled_time": scaled,
            "coalesced": s.coalesced,
        });
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Streams cycle records as CSV under the header
/// `m,S,T,eta,crossed,posS,posT`.
pub fn write_cycles_csv<W: Write>(records: &[CycleRecord], w: &mut W) -> io::Result<()> {
    writeln!(w, "m,S,T,eta,crossed,posS,posT")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.m, r.s, r.t, r.eta, r.crossed, r.pos_s, r.pos_t
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersal::{build_kernel, Family};
    use proptest::prelude::*;

    const FOUR_SIGMA: f64 = 4.0;

    fn freq(hits: usize, total: usize) -> f64 {
        hits as f64 / total as f64
    }

    fn binomial_se(p: f64, n: usize) -> f64 {
        (p * (1.0 - p) / n as f64).sqrt()
    }

    #[test]
    fn config_validation_rejects_bad_parameters() {
        assert_eq!(SteppingStoneConfig::new(0, 0.5, 1).unwrap_err(), GenealogyError::BadColonySize);
        assert!(matches!(
            SteppingStoneConfig::new(2, 0.0, 1).unwrap_err(),
            GenealogyError::BadMigration(_)
        ));
        assert!(matches!(
            SteppingStoneConfig::new(2, 1.0, 1).unwrap_err(),
            GenealogyError::BadMigration(_)
        ));
        assert!(matches!(
            SteppingStoneConfig::new(2, f64::NAN, 1).unwrap_err(),
            GenealogyError::BadMigration(_)
        ));
        assert_eq!(SteppingStoneConfig::new(1, 0.5, 0).unwrap_err(), GenealogyError::DegeneratePair);
        assert!(SteppingStoneConfig::new(2, 0.5, 0).is_ok());
        assert_eq!(
            SteppingStoneConfig::new(2, 0.5, 1).unwrap().with_max_steps(0).unwrap_err(),
            GenealogyError::BadMaxSteps
        );

        assert_eq!(RingConfig::new(2, 1, 0.5, 0.0, 0).unwrap_err(), GenealogyError::BadRingSize(2));
        assert_eq!(RingConfig::new(5, 0, 0.5, 0.0, 0).unwrap_err(), GenealogyError::BadDipSize);
        assert!(matches!(
            RingConfig::new(5, 1, 0.5, 1.0, 0).unwrap_err(),
            GenealogyError::BadMutation(_)
        ));
        assert_eq!(
            RingConfig::new(5, 1, 0.5, 0.0, 5).unwrap_err(),
            GenealogyError::BadSeparation { separation: 5, colonies: 5 }
        );

        let kernel = build_kernel(Family::NearestNeighbor, 1, 0.0).unwrap();
        assert_eq!(
            VoterConfig::new(&kernel, 3).unwrap().with_max_steps(0).unwrap_err(),
            GenealogyError::BadMaxSteps
        );
    }

    #[test]
    fn configs_expose_the_derived_quantities() {
        let stepping = SteppingStoneConfig::new(2000, 0.1, 200).unwrap();
        assert!((stepping.alpha() - 1.0).abs() < 1e-15);
        assert_eq!(stepping.scale_factor(), 2.0 * 0.1 / 40_000.0);
        assert_eq!(stepping.max_steps(), DEFAULT_MAX_STEPS);

        let colocated = SteppingStoneConfig::new(2, 0.5, 0).unwrap();
        assert!(colocated.alpha().is_infinite());
        assert!(colocated.scale_factor().is_infinite());

        let ring = RingConfig::new(32, 1, 0.125, 0.0, 0).unwrap();
        assert_eq!(ring.genes(), 2);
        assert!((ring.alpha() - 2.0 * 0.125 / 32.0).abs() < 1e-18);
        assert_eq!(ring.scale_factor(), 0.125 / 1024.0);

        let kernel = build_kernel(Family::Uniform, 2500, 1.0).unwrap();
        let l = (kernel.sigma_n() * 2500.0).ceil() as u64;
        let voter = VoterConfig::new(&kernel, l).unwrap();
        assert!((voter.x0() - 1.0).abs() < 1e-3);
        assert_eq!(voter.scale_factor(), 2.0 / 2500.0);
    }

    #[test]
    fn first_event_coalescence_matches_the_event_law() {
        // Co-started pair, colony of two, migration one half: the first
        // replacement event coalesces exactly when the parent stays local
        // (1/2) and the pick lands on the partner (1/2).
        let cfg = SteppingStoneConfig::new(2, 0.5, 0).unwrap().with_max_steps(64).unwrap();
        let plan = SeedPlan::new(0x47454E01);
        let replicas = 40_000;
        let mut hits = 0;
        for r in 0..replicas {
            let s = simulate_stepping_pair(&cfg, r as u64, &mut plan.rng_for(r as u64));
            if s.coalesced && s.events == 1 {
                hits += 1;
            }
        }
        let p = freq(hits, replicas);
        assert!(
            (p - 0.25).abs() < FOUR_SIGMA * binomial_se(0.25, replicas),
            "first-event coalescence frequency {p} too far from 0.25"
        );
    }

    #[test]
    fn single_individual_colonies_coalesce_on_first_co_location() {
        // Unit colonies, separation 1: of the four equally likely first
        // migrations, the two that co-locate the pair coalesce certainly.
        let cfg = SteppingStoneConfig::new(1, 0.5, 1).unwrap().with_max_steps(64).unwrap();
        let plan = SeedPlan::new(0x47454E02);
        let replicas = 40_000;
        let mut first_event_hits = 0;
        for r in 0..replicas {
            let s = simulate_stepping_pair(&cfg, r as u64, &mut plan.rng_for(r as u64));
            if s.coalesced {
                assert!(s.raw_time > 0.0);
            }
            if s.coalesced && s.events == 1 {
                first_event_hits += 1;
            }
        }
        let p = freq(first_event_hits, replicas);
        assert!(
            (p - 0.5).abs() < FOUR_SIGMA * binomial_se(0.5, replicas),
            "first-move co-location frequency {p} too far from 0.5"
        );
    }

    #[test]
    fn ring_first_event_matches_the_event_law() {
        let cfg = RingConfig::new(8, 1, 0.5, 0.0, 0).unwrap().with_max_steps(64).unwrap();
        let plan = SeedPlan::new(0x47454E03);
        let replicas = 40_000;
        let mut hits = 0;
        for r in 0..replicas {
            let s = simulate_ring_pair(&cfg, r as u64, &mut plan.rng_for(r as u64));
            if s.coalesced && s.events == 1 {
                hits += 1;
            }
        }
        let p = freq(hits, replicas);
        assert!(
            (p - 0.25).abs() < FOUR_SIGMA * binomial_se(0.25, replicas),
            "ring first-event coalescence frequency {p} too far from 0.25"
        );
    }

    #[test]
    fn small_rings_always_coalesce() {
        let cfg = RingConfig::new(5, 1, 0.5, 0.0, 2).unwrap().with_max_steps(1_000_000).unwrap();
        let plan = SeedPlan::new(0x47454E04);
        let factor = cfg.scale_factor();
        for r in 0..200u64 {
            let s = simulate_ring_pair(&cfg, r, &mut plan.rng_for(r));
            assert!(s.coalesced, "replica {r} failed to coalesce on a 5-ring");
            assert_eq!(s.scaled_time.to_bits(), (s.raw_time * factor).to_bits());
        }
    }

    #[test]
    fn voter_zero_separation_is_immediate() {
        let kernel = build_kernel(Family::Uniform, 100, 1.0).unwrap();
        let cfg = VoterConfig::new(&kernel, 0).unwrap();
        let plan = SeedPlan::new(0x47454E05);
        let s = simulate_voter_pair(&cfg, 0, &mut plan.rng_for(0));
        assert!(s.coalesced);
        assert_eq!(s.raw_time, 0.0);
        assert_eq!(s.scaled_time, 0.0);
        assert_eq!(s.events, 0);
    }

    #[test]
    fn voter_scaling_is_two_raw_over_n() {
        let kernel = build_kernel(Family::Uniform, 400, 1.0).unwrap();
        let cfg = VoterConfig::new(&kernel, 30).unwrap().with_max_steps(10_000).unwrap();
        let plan = SeedPlan::new(0x47454E06);
        for r in 0..50u64 {
            let s = simulate_voter_pair(&cfg, r, &mut plan.rng_for(r));
            assert_eq!(s.scaled_time.to_bits(), (s.raw_time * (2.0 / 400.0)).to_bits());
        }
    }

    #[test]
    fn censored_replicas_report_the_cap() {
        let kernel = build_kernel(Family::NearestNeighbor, 1, 0.0).unwrap();
        let cfg = VoterConfig::new(&kernel, 1).unwrap().with_max_steps(1).unwrap();
        let plan = SeedPlan::new(0x47454E07);
        let mut censored = 0;
        let mut coalesced = 0;
        for r in 0..200u64 {
            let s = simulate_voter_pair(&cfg, r, &mut plan.rng_for(r));
            assert_eq!(s.events, 1);
            assert!(s.raw_time > 0.0);
            if s.coalesced {
                coalesced += 1;
            } else {
                censored += 1;
            }
        }
        // One nearest-neighbor jump from 1 hits 0 half the time.
        assert!(censored > 50 && coalesced > 50);
    }

    #[test]
    fn samples_are_replica_deterministic() {
        let cfg = SteppingStoneConfig::new(3, 0.25, 4).unwrap().with_max_steps(5_000).unwrap();
        let plan = SeedPlan::new(0x47454E08);
        let a = simulate_stepping_pair(&cfg, 7, &mut plan.rng_for(7));
        let b = simulate_stepping_pair(&cfg, 7, &mut plan.rng_for(7));
        let c = simulate_stepping_pair(&cfg, 8, &mut plan.rng_for(8));
        assert_eq!(a.raw_time.to_bits(), b.raw_time.to_bits());
        assert_eq!(a.events, b.events);
        assert!(a.raw_time.to_bits() != c.raw_time.to_bits() || a.events != c.events);
    }

    #[test]
    fn ensembles_are_identical_across_thread_counts() {
        let kernel = build_kernel(Family::Uniform, 100, 1.0).unwrap();
        let cfg = VoterConfig::new(&kernel, 6).unwrap().with_max_steps(500).unwrap();
        let plan = SeedPlan::new(0x47454E09);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| voter_ensemble(&cfg, &plan, 64))
        };
        let two = run(2);
        let four = run(4);
        assert_eq!(two.len(), four.len());
        for (a, b) in two.iter().zip(&four) {
            assert_eq!(a.replica, b.replica);
            assert_eq!(a.raw_time.to_bits(), b.raw_time.to_bits());
            assert_eq!(a.scaled_time.to_bits(), b.scaled_time.to_bits());
            assert_eq!(a.coalesced, b.coalesced);
            assert_eq!(a.events, b.events);
        }
    }

    #[test]
    fn zero_visit_counts_follow_the_hand_trace() {
        assert_eq!(count_zero_visits(&[2, 1, 0, 1, 0], 4), vec![0, 0, 1, 1, 2]);
        assert_eq!(count_zero_visits(&[2, 1, 0, 1, 0], 9), vec![0, 0, 1, 1, 2]);
        assert_eq!(count_zero_visits(&[3, 2, 1, 2, 3], 4), vec![0, 0, 0, 0, 0]);
        assert_eq!(count_zero_visits(&[5], 4), vec![0]);
    }

    #[test]
    fn cycle_hand_trace_matches_the_worked_example() {
        // Scale 64 puts the exit level at 64 and the re-entry drop at 32.
        let dec = cycle_decompose(&[100, 70, 60, 80], 64);
        assert!(!dec.pre_phase);
        assert!(!dec.truncated);
        assert_eq!(dec.records.len(), 2);
        let first = dec.records[0];
        assert_eq!((first.m, first.s, first.t, first.eta), (0, 0, -1, 1));
        assert!(!first.crossed);
        assert_eq!((first.pos_s, first.pos_t), (100, 100));
        let second = dec.records[1];
        assert_eq!((second.m, second.s, second.t, second.eta), (1, 3, 2, 1));
        assert!(!second.crossed);
        assert_eq!((second.pos_s, second.pos_t), (80, 60));
        assert_eq!(dec.j, None);
        assert_eq!(dec.completed_cycles(), Some(1));
    }

    #[test]
    fn monotone_paths_have_a_single_record() {
        let dec = cycle_decompose(&[100, 150, 200], 64);
        assert_eq!(dec.records.len(), 1);
        assert!(!dec.truncated);
        assert_eq!(dec.j, None);
    }

    #[test]
    fn low_starts_use_the_flagged_pre_phase_rule() {
        let dec = cycle_decompose(&[10, 20, 100], 64);
        assert!(dec.pre_phase);
        assert_eq!(dec.records.len(), 1);
        assert_eq!(dec.records[0].s, 2);
        assert_eq!(dec.records[0].t, -1);

        let with_zero = cycle_decompose(&[10, 0, 100], 64);
        assert!(with_zero.pre_phase);
        assert_eq!(with_zero.j, Some(0));
    }

    #[test]
    fn zero_hits_set_the_first_cycle_and_its_budgets() {
        let dec = cycle_decompose(&[100, 50, 0, 90], 64);
        assert_eq!(dec.j, Some(1));
        assert_eq!(dec.a_j, Some(0));
        assert_eq!(dec.b_j, Some(3));
        // The outward and inward budgets partition the steps up to the
        // zero-hitting cycle's exit.
        let s_j = dec.records[1].s as i64;
        assert_eq!(dec.a_j.unwrap() + dec.b_j.unwrap() as i64, s_j);
    }

    #[test]
    fn truncated_paths_are_flagged() {
        // Re-entry at step 1 with no subsequent exit.
        let dec = cycle_decompose(&[100, 50], 64);
        assert!(dec.truncated);
        assert_eq!(dec.records.len(), 1);
        // Never exits at all.
        let never = cycle_decompose(&[10, 12, 9], 64);
        assert!(never.truncated);
        assert!(never.records.is_empty());
        assert!(never.pre_phase);
        // Empty path.
        assert!(cycle_decompose(&[], 64).truncated);
    }

    #[test]
    fn zigzag_crossings_count_exactly() {
        let path = [100, 50, -100, -50, 100, 50, -100];
        let dec = cycle_decompose(&path, 64);
        assert_eq!(dec.crossings(), 3);
        // All three sign-change exits land by step 6 = ⌊64·0.1⌋.
        assert_eq!(crossing_local_time(&path, 64, 0.1), 2.0 * 3.0 / 2.0);
        assert_eq!(crossing_local_time(&path, 64, 0.005), 0.0);
        assert_eq!(crossing_local_time(&[100, 200, 300], 64, 1.0), 0.0);
    }

    #[test]
    fn single_cycle_moments_are_that_cycle() {
        let kernel = build_kernel(Family::Uniform, 64, 1.0).unwrap();
        let dec = cycle_decompose(&[100, 60, 100], 64);
        assert_eq!(dec.records.len(), 2);
        let moments = cycle_moment_diagnostics(&[dec], &kernel);
        assert_eq!(moments.cycles, 1);
        assert_eq!(moments.mean_eta, 1.0);
        assert_eq!(moments.mean_eta_sq, 1.0);
        assert_eq!(moments.mean_eta_se, 0.0);
        assert!(!moments.sufficient);
    }

    #[test]
    fn ndjson_lines_match_the_schema() {
        let samples = [
            CoalescenceSample {
                replica: 3,
                raw_time: 1.5,
                scaled_time: 0.75,
                coalesced: true,
                events: 7,
            },
            CoalescenceSample {
                replica: 4,
                raw_time: 2.0,
                scaled_time: f64::INFINITY,
                coalesced: false,
                events: 9,
            },
        ];
        let mut buf = Vec::new();
        write_samples_ndjson(&samples, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(first.as_object().unwrap().len(), 4);
        assert_eq!(first["replica"], 3);
        assert_eq!(first["raw_time"], 1.5);
        assert_eq!(first["scaled_time"], 0.75);
        assert_eq!(first["coalesced"], true);
        let second: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        assert!(second["scaled_time"].is_null());
        assert_eq!(second["coalesced"], false);
    }

    #[test]
    fn cycle_csv_has_the_documented_header() {
        let dec = cycle_decompose(&[100, 70, 60, 80], 64);
        let mut buf = Vec::new();
        write_cycles_csv(&dec.records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "m,S,T,eta,crossed,posS,posT");
        assert_eq!(lines[1], "0,0,-1,1,false,100,100");
        assert_eq!(lines[2], "1,3,2,1,false,80,60");
    }

    proptest! {
        #[test]
        fn cycle_structure_invariants(
            start in -400i64..400,
            steps in proptest::collection::vec(-60i64..=60, 0..300),
            n in 16u64..1024,
        ) {
            let mut path = vec![start];
            for d in steps {
                let next = path.last().unwrap() + d;
                path.push(next);
            }
            let dec = cycle_decompose(&path, n);
            let (exit_level, _) = cycle_thresholds(n);
            let mut prev_s: i64 = i64::MIN;
            let mut prev_pos: Option<i64> = None;
            for rec in &dec.records {
                prop_assert!(rec.t > prev_s || (rec.m == 0 && rec.t == -1));
                prop_assert!((rec.t) < rec.s as i64);
                prop_assert_eq!(rec.eta, (rec.s as i64 - rec.t) as u64);
                prop_assert!(rec.eta >= 1);
                prop_assert!(rec.pos_s.unsigned_abs() as f64 > exit_level);
                // The exit is the FIRST exceedance after the re-entry: every
                // strictly interior position sits inside the strip.
                for k in (rec.t + 1).max(0) as usize..rec.s {
                    prop_assert!(path[k].unsigned_abs() as f64 <= exit_level);
                }
                if rec.s as i64 > rec.t + 1 {
                    // Reached by a bounded step from inside the strip. An
                    // immediate re-exit (s == t + 1) can fire from anywhere
                    // below the previous exit's re-entry bar, so only the
                    // walked case is bounded.
                    prop_assert!(rec.pos_s.unsigned_abs() as f64 <= exit_level + 60.0);
                }
                prop_assert_eq!(path[rec.s], rec.pos_s);
                if let Some(p) = prev_pos {
                    prop_assert_eq!(rec.crossed, (p < 0) != (rec.pos_s < 0));
                } else {
                    prop_assert!(!rec.crossed);
                }
                prev_s = rec.s as i64;
                prev_pos = Some(rec.pos_s);
            }
            if let (Some(j), Some(a), Some(b)) = (dec.j, dec.a_j, dec.b_j) {
                let rec = &dec.records[j as usize];
                prop_assert!(path[rec.t.max(0) as usize..=rec.s].contains(&0));
                for r in &dec.records[..j as usize] {
                    prop_assert!(!path[r.t.max(0) as usize..=r.s].contains(&0));
                }
                prop_assert_eq!(a + b as i64, rec.s as i64);
            }
        }
    }
}
