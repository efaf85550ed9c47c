//! Backward induction for one endgame.
//!
//! Pass 1 labels terminals (mate = Loss, stalemate = Draw) and records, for
//! every position with a capture or promotion, what its cross-endgame
//! successors look like in the sub-model tables. Those never change.
//! Each later pass re-examines the unlabeled positions against a frozen
//! snapshot of the previous pass: any Loss successor makes a Win, all-Win
//! successors make a Loss. When a pass labels nothing, the rest are Draws.

use std::ops::ControlFlow;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::IndexSpace;
use crate::material::MaterialSignature;
use crate::tablebase::{Label, SubModelSet, WdlTable};

pub(crate) const LOSS: u8 = Label::Loss as u8;
pub(crate) const DRAW: u8 = Label::Draw as u8;
pub(crate) const WIN: u8 = Label::Win as u8;
pub(crate) const INVALID: u8 = Label::Invalid as u8;
pub(crate) const UNKNOWN: u8 = 4;

/// Some cross-endgame successor is a Loss for the side then to move.
const CROSS_LOSS: u8 = 1;
/// Some cross-endgame successor is not a Win.
const CROSS_NONWIN: u8 = 2;

pub(crate) const CHUNK: usize = 1 << 14;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    /// Passes run, including the seeding pass and the final empty pass.
    pub passes: u32,
    pub labeled_per_pass: Vec<u64>,
    pub wall_time: f64,
    pub terminal_count: u64,
    pub capture_count: u64,
    pub quiet_count: u64,
    pub draws_by_default: u64,
    pub invalid_count: u64,
}

#[derive(Default)]
struct SeedCounts {
    terminal: u64,
    capture: u64,
    quiet: u64,
    invalid: u64,
    error: Option<crate::tablebase::TableError>,
}

impl SeedCounts {
    fn merge(mut self, other: SeedCounts) -> SeedCounts {
        self.terminal += other.terminal;
        self.capture += other.capture;
        self.quiet += other.quiet;
        self.invalid += other.invalid;
        self.error = self.error.or(other.error);
        self
    }
}

pub(crate) fn check_generatable(sig: MaterialSignature) -> Result<()> {
    if sig.has_two_sided_pawns() {
        return Err(Error::TwoSidedPawns(sig.to_string()));
    }
    Ok(())
}

/// Produces the WDL table of `sig`. `sub` must hold tables for every
/// capture successor of `sig`. Labels depend only on `sig` and `sub`.
pub fn generate(sig: MaterialSignature, sub: &SubModelSet) -> Result<(WdlTable, GenerationStats)> {
    let start = Instant::now();
    check_generatable(sig)?;
    sub.ensure_covers(sig)?;
    let space = IndexSpace::new(sig)?;
    let size = space.space_size() as usize;

    let mut labels = vec![UNKNOWN; size];
    let mut flags = vec![0u8; size];
    let mut rounds = vec![0u16; size];

    let seed = labels
        .par_chunks_mut(CHUNK)
        .zip(flags.par_chunks_mut(CHUNK))
        .zip(rounds.par_chunks_mut(CHUNK))
        .enumerate()
        .map(|(ci, ((lab, fl), rd))| {
            let mut counts = SeedCounts::default();
            let base = (ci * CHUNK) as u64;
            for j in 0..lab.len() {
                let idx = base + j as u64;
                let Some(p) = space.decode_unchecked(idx) else {
                    lab[j] = INVALID;
                    counts.invalid += 1;
                    continue;
                };
                let mut any = false;
                let mut crossing = false;
                let mut f = 0u8;
                p.for_each_legal_move(|m| {
                    any = true;
                    if p.is_material_changing(m) {
                        crossing = true;
                        match sub.lookup_cross(&p.make_move(m)) {
                            Ok(Label::Loss) => f |= CROSS_LOSS | CROSS_NONWIN,
                            Ok(Label::Win) => {}
                            Ok(_) => f |= CROSS_NONWIN,
                            Err(e) => {
                                counts.error.get_or_insert(e);
                            }
                        }
                    }
                });
                if !any {
                    lab[j] = if p.in_check() { LOSS } else { DRAW };
                    rd[j] = 1;
                    counts.terminal += 1;
                } else if crossing {
                    fl[j] = f;
                    counts.capture += 1;
                } else {
                    counts.quiet += 1;
                }
            }
            counts
        })
        .reduce(SeedCounts::default, SeedCounts::merge);
    if let Some(e) = seed.error {
        return Err(e.into());
    }

    let mut stats = GenerationStats {
        passes: 1,
        labeled_per_pass: vec![seed.terminal],
        terminal_count: seed.terminal,
        capture_count: seed.capture,
        quiet_count: seed.quiet,
        invalid_count: seed.invalid,
        ..Default::default()
    };

    let pending: Vec<u64> = (0..size as u64)
        .filter(|&i| labels[i as usize] == UNKNOWN && space.is_canonical_code(i))
        .collect();
    let outcome = solve(&space, &mut labels, Some(&flags), Some(&mut rounds), pending, true)?;
    drop(flags);
    for &idx in &outcome.unresolved {
        labels[idx as usize] = DRAW;
    }
    copy_to_duplicate_codes(&space, &mut labels, Some(&mut rounds));

    let passes = 1 + outcome.labeled_per_pass.len();
    stats.passes = passes as u32;
    stats.labeled_per_pass = vec![0; passes];
    stats.draws_by_default = 0;
    for (&l, &r) in labels.iter().zip(&rounds) {
        if l == INVALID {
            continue;
        }
        match r {
            0 => stats.draws_by_default += 1,
            r => stats.labeled_per_pass[r as usize - 1] += 1,
        }
    }

    let table = WdlTable::from_unpacked(sig, &labels, Some(rounds));
    stats.wall_time = start.elapsed().as_secs_f64();
    Ok((table, stats))
}

/// Gives every valid non-canonical code the label (and round) of the
/// canonical code of the same position.
pub(crate) fn copy_to_duplicate_codes(space: &IndexSpace, labels: &mut [u8], rounds: Option<&mut [u16]>) {
    if space.is_canonical_code_always() {
        return;
    }
    let mut rounds = rounds;
    for i in 0..labels.len() as u64 {
        if labels[i as usize] == INVALID || space.is_canonical_code(i) {
            continue;
        }
        let c = space.canonical_code(i) as usize;
        labels[i as usize] = labels[c];
        if let Some(r) = rounds.as_deref_mut() {
            r[i as usize] = r[c];
        }
    }
}

pub(crate) struct Fixpoint {
    /// Positions labeled in each pass from the second on; the last is 0.
    pub labeled_per_pass: Vec<u64>,
    /// Still unlabeled at the fixpoint.
    pub unresolved: Vec<u64>,
}

/// Runs passes 2, 3, ... over `pending` until one labels nothing, writing
/// new labels (and their pass number) in place. With `filter`, a pass only
/// re-examines positions that have a successor labeled in the previous
/// pass; the labels are the same either way.
pub(crate) fn solve(
    space: &IndexSpace,
    labels: &mut [u8],
    cross: Option<&[u8]>,
    mut rounds: Option<&mut [u16]>,
    mut pending: Vec<u64>,
    filter: bool,
) -> Result<Fixpoint> {
    let mut labeled_per_pass = Vec::new();
    let mut dirty: Option<DirtySet> = None;
    let mut pass: u32 = 1;
    loop {
        pass += 1;
        if pass > u16::MAX as u32 {
            return Err(Error::TooManyPasses(u16::MAX as u32));
        }
        let (candidates, waiting): (Vec<u64>, Vec<u64>) = match &dirty {
            Some(d) => pending.iter().partition(|&&i| d.contains(i)),
            None => (std::mem::take(&mut pending), Vec::new()),
        };
        let decided = propagate(space, labels, cross, &candidates);
        let mut fresh = Vec::new();
        let mut still = waiting;
        for (&idx, &label) in candidates.iter().zip(&decided) {
            if label == UNKNOWN {
                still.push(idx);
            } else {
                labels[idx as usize] = label;
                if let Some(r) = rounds.as_deref_mut() {
                    r[idx as usize] = pass as u16;
                }
                fresh.push(idx);
            }
        }
        still.sort_unstable();
        pending = still;
        labeled_per_pass.push(fresh.len() as u64);
        if fresh.is_empty() {
            break;
        }
        if filter {
            dirty = Some(DirtySet::predecessors_of(space, &fresh));
        }
    }
    Ok(Fixpoint {
        labeled_per_pass,
        unresolved: pending,
    })
}

struct DirtySet {
    words: Vec<AtomicU64>,
}

impl DirtySet {
    fn predecessors_of(space: &IndexSpace, changed: &[u64]) -> DirtySet {
        let words: Vec<AtomicU64> = (0..space.space_size().div_ceil(64)).map(|_| AtomicU64::new(0)).collect();
        changed.par_chunks(CHUNK).for_each(|chunk| {
            for &idx in chunk {
                space.for_each_predecessor(idx, |p| {
                    words[(p >> 6) as usize].fetch_or(1 << (p & 63), Ordering::Relaxed);
                });
            }
        });
        DirtySet { words }
    }

    fn contains(&self, i: u64) -> bool {
        self.words[(i >> 6) as usize].load(Ordering::Relaxed) >> (i & 63) & 1 != 0
    }
}

/// One Jacobi step over `pending` against the frozen `labels`: returns the
/// new label per pending index (or `UNKNOWN`). Material-changing moves are
/// summarized by `cross` flags; without flags every move must stay inside
/// the table.
pub(crate) fn propagate(space: &IndexSpace, labels: &[u8], cross: Option<&[u8]>, pending: &[u64]) -> Vec<u8> {
    pending
        .par_chunks(CHUNK)
        .flat_map_iter(|chunk| {
            chunk.iter().map(|&idx| {
                let f = cross.map_or(0, |c| c[idx as usize]);
                if f & CROSS_LOSS != 0 {
                    return WIN;
                }
                let p = space.decode_trusted(idx);
                let mut all_win = f & CROSS_NONWIN == 0;
                let found_loss = p.try_for_each_legal_move(|m| {
                    if p.is_material_changing(m) {
                        return ControlFlow::Continue(());
                    }
                    match labels[space.successor_index(idx, m.from.index(), m.to.index()) as usize] {
                        LOSS => return ControlFlow::Break(()),
                        WIN => {}
                        _ => all_win = false,
                    }
                    ControlFlow::Continue(())
                });
                if found_loss.is_break() {
                    WIN
                } else if all_win {
                    LOSS
                } else {
                    UNKNOWN
                }
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::index::PositionIndex;
    use crate::rules::Position;

    fn sig(s: &str) -> MaterialSignature {
        s.parse().unwrap()
    }

    fn label_of(t: &WdlTable, fen: &str) -> Label {
        let p = Position::from_fen(fen).unwrap();
        let space = IndexSpace::new(t.signature()).unwrap();
        t.get(space.encode(&p).unwrap().0)
    }

    fn kvk() -> Arc<WdlTable> {
        Arc::new(generate(sig("KvK"), &SubModelSet::new()).unwrap().0)
    }

    #[test]
    fn kvk_is_all_draws() {
        let (t, stats) = generate(sig("KvK"), &SubModelSet::new()).unwrap();
        let space = IndexSpace::new(sig("KvK")).unwrap();
        for i in 0..t.space_size() {
            let expect = if space.decode_unchecked(i).is_some() { Label::Draw } else { Label::Invalid };
            assert_eq!(t.get(i), expect);
        }
        assert_eq!(stats.terminal_count, 0);
        assert_eq!(stats.capture_count, 0);
        assert_eq!(stats.draws_by_default, stats.quiet_count);
        assert_eq!(stats.labeled_per_pass, vec![0, 0]);
    }

    #[test]
    fn kqvk_examples() {
        let mut sub = SubModelSet::new();
        sub.insert(kvk()).unwrap();
        let (t, stats) = generate(sig("KQvK"), &sub).unwrap();
        assert_eq!(label_of(&t, "k7/8/1K6/8/8/4Q3/8/8 w"), Label::Win);
        assert_eq!(label_of(&t, "k7/1Q6/1K6/8/8/8/8/8 b"), Label::Loss);
        // stalemate
        assert_eq!(label_of(&t, "k7/8/1Q6/8/8/8/8/4K3 b"), Label::Draw);
        // black to move takes the unprotected queen
        assert_eq!(label_of(&t, "8/8/8/3k4/3Q4/8/8/K7 b"), Label::Draw);
        assert_eq!(
            stats.labeled_per_pass.iter().sum::<u64>() + stats.draws_by_default + stats.invalid_count,
            t.space_size()
        );
        assert_eq!(*stats.labeled_per_pass.last().unwrap(), 0);
        assert!(stats.labeled_per_pass[..stats.labeled_per_pass.len() - 1].iter().all(|&n| n > 0));
        // rounds: seeded terminals are round 1, default draws round 0
        let space = IndexSpace::new(sig("KQvK")).unwrap();
        let mate = space.encode(&Position::from_fen("k7/1Q6/1K6/8/8/8/8/8 b").unwrap()).unwrap();
        assert_eq!(t.rounds().unwrap()[mate.0 as usize], 1);
        let _ = t.get_label(PositionIndex(0)).unwrap();
    }

    #[test]
    fn missing_sub_model_is_an_error() {
        assert!(matches!(
            generate(sig("KQvK"), &SubModelSet::new()),
            Err(Error::Table(crate::tablebase::TableError::MissingSubModel(_)))
        ));
    }

    #[test]
    fn two_sided_pawns_rejected() {
        assert!(matches!(generate(sig("KPvKP"), &SubModelSet::new()), Err(Error::TwoSidedPawns(_))));
    }

    fn unfiltered(name: &str, sub: &SubModelSet) -> Vec<u8> {
        let space = IndexSpace::new(sig(name)).unwrap();
        let (t, _) = generate(sig(name), sub).unwrap();
        // redo the fixpoint from the seeded state without the dirty filter
        let mut labels: Vec<u8> = (0..t.space_size())
            .map(|i| {
                let r = t.rounds().unwrap()[i as usize];
                match t.get(i) {
                    Label::Invalid => INVALID,
                    l if r == 1 => l as u8,
                    _ => UNKNOWN,
                }
            })
            .collect();
        let flags: Vec<u8> = (0..t.space_size())
            .map(|i| match space.decode_unchecked(i) {
                Some(p) if labels[i as usize] == UNKNOWN => {
                    let mut f = 0;
                    for m in p.legal_moves().into_iter().filter(|m| p.is_material_changing(*m)) {
                        match sub.lookup_cross(&p.make_move(m)).unwrap() {
                            Label::Loss => f |= CROSS_LOSS | CROSS_NONWIN,
                            Label::Win => {}
                            _ => f |= CROSS_NONWIN,
                        }
                    }
                    f
                }
                _ => 0,
            })
            .collect();
        let pending = (0..t.space_size()).filter(|&i| labels[i as usize] == UNKNOWN).collect();
        let out = solve(&space, &mut labels, Some(&flags), None, pending, false).unwrap();
        for i in out.unresolved {
            labels[i as usize] = DRAW;
        }
        labels
    }

    #[test]
    fn dirty_filter_changes_nothing() {
        let mut sub = SubModelSet::new();
        sub.insert(kvk()).unwrap();
        for name in ["KQvK", "KRvK", "KBvK", "KNvK", "KPvK", "KNNvK"] {
            let (t, _) = generate(sig(name), &sub).unwrap();
            let plain = unfiltered(name, &sub);
            for (i, &l) in plain.iter().enumerate() {
                assert_eq!(t.get(i as u64) as u8, l, "{name} index {i}");
            }
            sub.insert(Arc::new(t)).unwrap();
        }
    }

    #[test]
    fn deterministic_across_worker_counts() {
        let mut sub = SubModelSet::new();
        sub.insert(kvk()).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| generate(sig("KRvK"), &sub)).unwrap().0;
        let b = three.install(|| generate(sig("KRvK"), &sub)).unwrap().0;
        assert_eq!(a.to_bytes(), b.to_bytes());
    }
}
