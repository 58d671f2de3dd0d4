//! Turning per-outcome event streams into completed blocks, and generating
//! synthetic streams for simulation.
//!
//! Outcomes arrive one at a time, tagged with a stratum and a group. A block
//! of stratum `k` completes the moment `k` has accumulated `n_a` unconsumed
//! group-a outcomes and `n_b` group-b outcomes; blocks from different strata
//! interleave in completion order, and unfinished blocks at the end of the
//! stream are dropped. This recasts `2K` independent streams (one per
//! group-stratum combination, arriving at arbitrary relative rates) as a
//! single sequence of blocks, the unit of sequential time everywhere else in
//! the crate.

use alloc::vec::Vec;

use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};

use crate::model::{BlockCounts, BlockDesign, ThetaPair};

/// Treatment arm of a single outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    A,
    B,
}

/// One raw outcome. Stratum indices are 0-based here; the `1..K` labels of
/// the CSV wire format are converted at the parsing boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutcomeEvent {
    /// Arrival index of the event.
    pub seq: u64,
    pub stratum: usize,
    pub group: Group,
    pub outcome: bool,
}

/// One completed batch of `n_a + n_b` outcomes in a single stratum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    /// 0-based stratum index.
    pub stratum: usize,
    pub counts: BlockCounts,
    /// Arrival index of the event that completed the block.
    pub completed_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestError {
    /// An event carries an out-of-range field.
    MalformedEvent { seq: u64, reason: &'static str },
}

impl core::fmt::Display for IngestError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::MalformedEvent { seq, reason } => {
                write!(f, "malformed event at seq {seq}: {reason}")
            }
        }
    }
}

impl core::error::Error for IngestError {}

/// How a synthetic stream interleaves strata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    /// Cycle strata in index order, skipping exhausted ones.
    #[default]
    RoundRobin,
    /// Each block's stratum is drawn uniformly among those with quota left.
    RandomUniform,
}

#[derive(Default)]
struct OpenBlock {
    outcomes_a: Vec<bool>,
    outcomes_b: Vec<bool>,
}

/// Assemble completed blocks from an ordered event stream.
///
/// Per stratum, outcomes queue up per group; whenever both group quotas of
/// the design are met, a block is emitted, stamped with the finishing event's
/// arrival index. Partial blocks remaining at stream end are discarded.
pub fn assemble_blocks(
    events: &[OutcomeEvent],
    design: BlockDesign,
    n_strata: usize,
) -> Result<Vec<Block>, IngestError> {
    let mut open: Vec<OpenBlock> = (0..n_strata).map(|_| OpenBlock::default()).collect();
    let mut blocks = Vec::new();
    for event in events {
        if event.stratum >= n_strata {
            return Err(IngestError::MalformedEvent {
                seq: event.seq,
                reason: "stratum index out of range",
            });
        }
        let slot = &mut open[event.stratum];
        match event.group {
            Group::A => slot.outcomes_a.push(event.outcome),
            Group::B => slot.outcomes_b.push(event.outcome),
        }
        while slot.outcomes_a.len() >= design.n_a() as usize
            && slot.outcomes_b.len() >= design.n_b() as usize
        {
            let taken_a: Vec<bool> = slot.outcomes_a.drain(..design.n_a() as usize).collect();
            let taken_b: Vec<bool> = slot.outcomes_b.drain(..design.n_b() as usize).collect();
            let successes_a = taken_a.iter().filter(|&&y| y).count() as u32;
            let successes_b = taken_b.iter().filter(|&&y| y).count() as u32;
            blocks.push(Block {
                stratum: event.stratum,
                counts: BlockCounts::new(successes_a, successes_b, design),
                completed_at: event.seq,
            });
        }
    }
    Ok(blocks)
}

/// Explode blocks back into a well-formed event stream (successes first
/// within each group). Assembling the result reproduces the blocks.
pub fn explode_to_events(blocks: &[Block]) -> Vec<OutcomeEvent> {
    let mut events = Vec::new();
    let mut seq = 0;
    for block in blocks {
        let design = block.counts.design();
        for i in 0..design.n_a() {
            seq += 1;
            events.push(OutcomeEvent {
                seq,
                stratum: block.stratum,
                group: Group::A,
                outcome: i < block.counts.successes_a(),
            });
        }
        for i in 0..design.n_b() {
            seq += 1;
            events.push(OutcomeEvent {
                seq,
                stratum: block.stratum,
                group: Group::B,
                outcome: i < block.counts.successes_b(),
            });
        }
    }
    events
}

/// Relabel every block to stratum 0, the unstratified baseline's view of the
/// data.
pub fn erase_strata(blocks: &[Block]) -> Vec<Block> {
    blocks.iter().map(|b| Block { stratum: 0, ..*b }).collect()
}

/// Flip every outcome, negating the risk difference in each stratum. Used to
/// derive maximum-effect confidence sequences from minimum-effect ones.
pub fn flip_outcomes(blocks: &[Block]) -> Vec<Block> {
    blocks
        .iter()
        .map(|b| Block { counts: b.counts.outcome_flipped(), ..*b })
        .collect()
}

/// Deterministic synthetic block stream.
///
/// Stratum `k` contributes `blocks_per_stratum[k]` blocks with counts drawn
/// binomially from `theta[k]`; the schedule decides the interleaving. The
/// generator is ChaCha12 seeded from the given 64-bit seed, so identical
/// inputs give bit-identical streams.
pub fn generate_stream(
    theta: &[ThetaPair],
    design: BlockDesign,
    blocks_per_stratum: &[usize],
    schedule: Schedule,
    seed: u64,
) -> Vec<Block> {
    assert_eq!(theta.len(), blocks_per_stratum.len());
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut remaining = blocks_per_stratum.to_vec();
    let total: usize = remaining.iter().sum();
    let mut blocks = Vec::with_capacity(total);
    let mut outcomes_seen = 0u64;
    let mut cursor = 0usize;
    while blocks.len() < total {
        let stratum = match schedule {
            Schedule::RoundRobin => {
                while remaining[cursor % remaining.len()] == 0 {
                    cursor += 1;
                }
                let k = cursor % remaining.len();
                cursor += 1;
                k
            }
            Schedule::RandomUniform => {
                let live: Vec<usize> =
                    (0..remaining.len()).filter(|&k| remaining[k] > 0).collect();
                let u = uniform_f64(&mut rng);
                live[((u * live.len() as f64) as usize).min(live.len() - 1)]
            }
        };
        remaining[stratum] -= 1;
        let successes_a = binomial_draw(&mut rng, design.n_a(), theta[stratum].theta_a);
        let successes_b = binomial_draw(&mut rng, design.n_b(), theta[stratum].theta_b);
        outcomes_seen += u64::from(design.n());
        blocks.push(Block {
            stratum,
            counts: BlockCounts::new(successes_a, successes_b, design),
            completed_at: outcomes_seen,
        });
    }
    blocks
}

fn uniform_f64(rng: &mut ChaCha12Rng) -> f64 {
    // 53 random mantissa bits; uniform on [0, 1).
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn binomial_draw(rng: &mut ChaCha12Rng, n: u32, p: f64) -> u32 {
    (0..n).filter(|_| uniform_f64(rng) < p).count() as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn event(seq: u64, stratum: usize, group: Group, outcome: bool) -> OutcomeEvent {
        OutcomeEvent { seq, stratum, group, outcome }
    }

    #[test]
    fn assemble_single_block() {
        let design = BlockDesign::paired();
        let events =
            [event(1, 0, Group::A, true), event(2, 0, Group::B, false)];
        let blocks = assemble_blocks(&events, design, 1).unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].stratum, 0);
        assert_eq!(blocks[0].counts.successes_a(), 1);
        assert_eq!(blocks[0].counts.successes_b(), 0);
        assert_eq!(blocks[0].completed_at, 2);
    }

    #[test]
    fn assemble_interleaves_strata_in_completion_order() {
        let design = BlockDesign::paired();
        let events = [
            event(1, 0, Group::A, true),
            event(2, 1, Group::A, true),
            event(3, 0, Group::B, true),
            event(4, 1, Group::B, false),
        ];
        let blocks = assemble_blocks(&events, design, 2).unwrap();
        assert_eq!(blocks.len(), 2);
        assert_eq!((blocks[0].stratum, blocks[0].completed_at), (0, 3));
        assert_eq!((blocks[1].stratum, blocks[1].completed_at), (1, 4));
    }

    #[test]
    fn assemble_drops_unfinished_blocks() {
        let design = BlockDesign::paired();
        let events = [
            event(1, 0, Group::A, true),
            event(2, 0, Group::B, true),
            event(3, 1, Group::A, false),
        ];
        let blocks = assemble_blocks(&events, design, 2).unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].stratum, 0);
    }

    #[test]
    fn assemble_queues_surplus_outcomes_for_later_blocks() {
        let design = BlockDesign::paired();
        let events = [
            event(1, 0, Group::A, true),
            event(2, 0, Group::A, false),
            event(3, 0, Group::B, true),
            event(4, 0, Group::B, true),
        ];
        let blocks = assemble_blocks(&events, design, 1).unwrap();
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].completed_at, 3);
        assert_eq!(blocks[0].counts.successes_a(), 1);
        assert_eq!(blocks[1].completed_at, 4);
        assert_eq!(blocks[1].counts.successes_a(), 0);
    }

    #[test]
    fn assemble_rejects_out_of_range_stratum() {
        let design = BlockDesign::paired();
        let events = [event(1, 5, Group::A, true)];
        let err = assemble_blocks(&events, design, 2).unwrap_err();
        assert!(matches!(err, IngestError::MalformedEvent { seq: 1, .. }));
    }

    #[test]
    fn explode_round_trips_through_assembly() {
        let design = BlockDesign::new(2, 3);
        let theta = [ThetaPair::new(0.3, 0.6), ThetaPair::new(0.8, 0.2)];
        let blocks = generate_stream(&theta, design, &[7, 5], Schedule::RoundRobin, 11);
        let events = explode_to_events(&blocks);
        let reassembled = assemble_blocks(&events, design, 2).unwrap();
        assert_eq!(blocks.len(), reassembled.len());
        for (orig, back) in blocks.iter().zip(&reassembled) {
            assert_eq!(orig.stratum, back.stratum);
            assert_eq!(orig.counts, back.counts);
        }
    }

    #[test]
    fn generate_is_deterministic() {
        let theta = [ThetaPair::new(0.1, 0.9), ThetaPair::new(0.5, 0.5)];
        let a = generate_stream(&theta, BlockDesign::paired(), &[20, 20], Schedule::RandomUniform, 7);
        let b = generate_stream(&theta, BlockDesign::paired(), &[20, 20], Schedule::RandomUniform, 7);
        assert_eq!(a, b);
    }

    #[test]
    fn generate_degenerate_probabilities() {
        let theta = [ThetaPair::new(0.0, 0.0)];
        let blocks = generate_stream(&theta, BlockDesign::new(2, 2), &[10], Schedule::RoundRobin, 3);
        assert!(blocks
            .iter()
            .all(|b| b.counts.successes_a() == 0 && b.counts.successes_b() == 0));
    }

    #[test]
    fn round_robin_balances_strata() {
        let theta = [ThetaPair::new(0.5, 0.5); 3];
        let blocks =
            generate_stream(&theta, BlockDesign::paired(), &[4, 4, 4], Schedule::RoundRobin, 1);
        let order: Vec<usize> = blocks.iter().map(|b| b.stratum).collect();
        assert_eq!(order, vec![0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2]);
    }

    #[test]
    fn truncated_stratum_drops_out_of_rotation() {
        let theta = [ThetaPair::new(0.5, 0.5); 2];
        let blocks =
            generate_stream(&theta, BlockDesign::paired(), &[2, 4], Schedule::RoundRobin, 1);
        let order: Vec<usize> = blocks.iter().map(|b| b.stratum).collect();
        assert_eq!(order, vec![0, 1, 0, 1, 1, 1]);
    }

    #[test]
    fn binomial_rate_converges() {
        let theta = [ThetaPair::new(0.3, 0.3)];
        let blocks =
            generate_stream(&theta, BlockDesign::paired(), &[100_000], Schedule::RoundRobin, 99);
        let successes: u64 =
            blocks.iter().map(|b| u64::from(b.counts.successes_a())).sum();
        let rate = successes as f64 / 100_000.0;
        assert!((rate - 0.3).abs() < 0.005, "rate {rate}");
    }

    #[test]
    fn erase_strata_relabels_everything() {
        let theta = [ThetaPair::new(0.2, 0.4), ThetaPair::new(0.6, 0.8)];
        let blocks =
            generate_stream(&theta, BlockDesign::paired(), &[3, 3], Schedule::RoundRobin, 2);
        let erased = erase_strata(&blocks);
        assert!(erased.iter().all(|b| b.stratum == 0));
        assert_eq!(erased.len(), blocks.len());
    }

    #[test]
    fn flip_outcomes_negates_counts() {
        let design = BlockDesign::new(3, 2);
        let block = Block {
            stratum: 0,
            counts: BlockCounts::new(2, 0, design),
            completed_at: 5,
        };
        let flipped = flip_outcomes(&[block]);
        assert_eq!(flipped[0].counts.successes_a(), 1);
        assert_eq!(flipped[0].counts.successes_b(), 2);
    }
}
