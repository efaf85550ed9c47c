//! Verification of WDL tables.
//!
//! The decomposed verifier classifies every position as terminal, capture
//! or quiet and checks retrograde consistency once per position, looking
//! capture successors up in the sub-model tables. The full verifier walks
//! the same space on its own path, with no category dispatch. The
//! quiet-only verifier rebuilds quiet labels by value iteration from the
//! terminal and capture boundary and counts where the table disagrees.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generate::{copy_to_duplicate_codes, solve, CHUNK, DRAW, INVALID, LOSS, UNKNOWN};
use crate::index::{IndexSpace, PositionIndex};
use crate::material::MaterialSignature;
use crate::rules::{Category, Position, Terminal};
use crate::tablebase::{Label, SubModelSet, TableError, WdlTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Decomposed,
    Full,
    QuietOnly,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Decomposed => "decomposed",
            Mode::Full => "full",
            Mode::QuietOnly => "quiet-only",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mode> {
        match s {
            "decomposed" => Ok(Mode::Decomposed),
            "full" => Ok(Mode::Full),
            "quiet-only" | "quiet_only" => Ok(Mode::QuietOnly),
            _ => Err(Error::InvalidArgument(format!("unknown verification mode {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    TerminalMismatch,
    WinNoLossSuccessor,
    LossHasNonWinSuccessor,
    DrawHasLossSuccessor,
    DrawNoDrawSuccessor,
    /// A legal position stored as `Invalid`.
    InvalidLabel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub index: PositionIndex,
    pub category: Category,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "index {}: {:?} ({:?})", self.index.0, self.kind, self.category)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionCounts {
    pub terminal: u64,
    pub capture: u64,
    pub quiet: u64,
    pub invalid: u64,
}

impl PositionCounts {
    pub fn valid(&self) -> u64 {
        self.terminal + self.capture + self.quiet
    }

    fn add(&mut self, o: &PositionCounts) {
        self.terminal += o.terminal;
        self.capture += o.capture;
        self.quiet += o.quiet;
        self.invalid += o.invalid;
    }
}

/// Percentages of valid positions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Fractions {
    pub term_pct: f64,
    pub capt_pct: f64,
    pub quiet_pct: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationCounts {
    pub terminal_v: u64,
    pub capture_v: u64,
    pub quiet_v: u64,
    pub total_v: u64,
}

impl ViolationCounts {
    fn add(&mut self, o: &ViolationCounts) {
        self.terminal_v += o.terminal_v;
        self.capture_v += o.capture_v;
        self.quiet_v += o.quiet_v;
        self.total_v += o.total_v;
    }

    fn record(&mut self, category: Category) {
        match category {
            Category::Terminal(_) => self.terminal_v += 1,
            Category::Capture => self.capture_v += 1,
            Category::Quiet => self.quiet_v += 1,
        }
        self.total_v += 1;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub signature: MaterialSignature,
    pub mode: Mode,
    pub position_counts: PositionCounts,
    pub fractions: Fractions,
    pub violations: ViolationCounts,
    /// `1 / (1 - f_c)`; absent when every valid position is a capture.
    pub estimated_speedup: Option<f64>,
    pub consistency_checks_performed: u64,
    pub wall_time: f64,
}

impl VerificationReport {
    fn new(
        signature: MaterialSignature,
        mode: Mode,
        position_counts: PositionCounts,
        violations: ViolationCounts,
        wall_time: f64,
    ) -> VerificationReport {
        let valid = position_counts.valid();
        let pct = |n: u64| if valid == 0 { 0.0 } else { 100.0 * n as f64 / valid as f64 };
        let fractions = Fractions {
            term_pct: pct(position_counts.terminal),
            capt_pct: pct(position_counts.capture),
            quiet_pct: pct(position_counts.quiet),
        };
        let f_c = fractions.capt_pct / 100.0;
        VerificationReport {
            signature,
            mode,
            position_counts,
            fractions,
            violations,
            estimated_speedup: (f_c < 1.0).then(|| 1.0 / (1.0 - f_c)),
            consistency_checks_performed: valid,
            wall_time,
        }
    }

    pub fn passed(&self) -> bool {
        self.violations.total_v == 0
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.position_counts;
        let v = &self.violations;
        writeln!(f, "{} [{}]", self.signature, self.mode)?;
        writeln!(
            f,
            "  positions: {} terminal, {} capture, {} quiet, {} invalid",
            c.terminal, c.capture, c.quiet, c.invalid
        )?;
        writeln!(
            f,
            "  fractions: term {:.2}%, capt {:.2}%, quiet {:.2}%",
            self.fractions.term_pct, self.fractions.capt_pct, self.fractions.quiet_pct
        )?;
        writeln!(
            f,
            "  violations: terminal {}, capture {}, quiet {}, total {}",
            v.terminal_v, v.capture_v, v.quiet_v, v.total_v
        )?;
        match self.estimated_speedup {
            Some(s) => writeln!(f, "  estimated speedup: {s:.3}x")?,
            None => writeln!(f, "  estimated speedup: n/a")?,
        }
        write!(
            f,
            "  checks: {}, wall time: {:.3}s",
            self.consistency_checks_performed, self.wall_time
        )
    }
}

/// What a position's successors look like.
#[derive(Default)]
struct Successors {
    any: bool,
    crossing: bool,
    loss: bool,
    draw: bool,
    non_win: bool,
}

impl Successors {
    fn see(&mut self, label: Label) {
        match label {
            Label::Loss => {
                self.loss = true;
                self.non_win = true;
            }
            Label::Draw => {
                self.draw = true;
                self.non_win = true;
            }
            Label::Win => {}
            Label::Invalid => self.non_win = true,
        }
    }
}

/// Tables of one signature checked together. Successors are enumerated
/// once; a position is re-examined per table only where its own label or
/// a same-table successor's label differs between the tables.
struct Batch<'a> {
    tables: &'a [&'a WdlTable],
    /// One bit per index at which some table disagrees with the first.
    differs: Vec<u64>,
}

impl<'a> Batch<'a> {
    fn new(tables: &'a [&'a WdlTable], space: &IndexSpace) -> Result<Batch<'a>> {
        let Some(first) = tables.first() else {
            return Err(Error::InvalidArgument("no tables to verify".into()));
        };
        for t in tables {
            if t.signature() != first.signature() {
                return Err(Error::WrongSignature {
                    expected: first.signature().to_string(),
                    found: t.signature().to_string(),
                });
            }
            if t.space_size() != space.space_size() {
                return Err(TableError::SpaceSizeMismatch {
                    signature: t.signature().to_string(),
                    found: t.space_size(),
                    expected: space.space_size(),
                }
                .into());
            }
        }
        let mut differs = vec![0u64; space.space_size().div_ceil(64) as usize];
        if tables.len() > 1 {
            // 16 packed bytes cover one 64-bit word of the mask
            differs.par_iter_mut().enumerate().for_each(|(w, word)| {
                let bytes = w * 16..((w + 1) * 16).min(first.packed().len());
                for t in &tables[1..] {
                    for b in bytes.clone() {
                        let x = t.packed()[b] ^ first.packed()[b];
                        if x == 0 {
                            continue;
                        }
                        for k in 0..4 {
                            if (x >> (2 * k)) & 3 != 0 {
                                *word |= 1 << ((b - w * 16) * 4 + k);
                            }
                        }
                    }
                }
            });
        }
        Ok(Batch { tables, differs })
    }

    fn base(&self) -> &'a WdlTable {
        self.tables[0]
    }

    #[inline]
    fn differs_at(&self, i: u64) -> bool {
        (self.differs[(i >> 6) as usize] >> (i & 63)) & 1 != 0
    }

    fn differing_indices(&self) -> Vec<u64> {
        self.differs
            .iter()
            .enumerate()
            .flat_map(|(w, &word)| crate::rules::bitboard::Bits(word).map(move |b| w as u64 * 64 + b as u64))
            .collect()
    }
}

struct Checker<'a> {
    space: IndexSpace,
    sub: &'a SubModelSet,
}

impl<'a> Checker<'a> {
    fn new(sig: MaterialSignature, sub: &'a SubModelSet) -> Result<Checker<'a>> {
        let space = IndexSpace::new(sig)?;
        sub.ensure_covers(sig)?;
        Ok(Checker { space, sub })
    }

    /// Successor summary read from `table`, and whether any same-table
    /// successor is marked in `batch`.
    fn successors(
        &self,
        idx: u64,
        p: &Position,
        table: &WdlTable,
        batch: Option<&Batch>,
    ) -> Result<(Successors, bool), TableError> {
        let mut s = Successors::default();
        let mut touched = false;
        let mut error = None;
        p.for_each_legal_move(|m| {
            s.any = true;
            let label = if p.is_material_changing(m) {
                s.crossing = true;
                match self.sub.lookup_cross(&p.make_move(m)) {
                    Ok(l) => l,
                    Err(e) => {
                        error.get_or_insert(e);
                        Label::Invalid
                    }
                }
            } else {
                let next = self.space.successor_index(idx, m.from.index(), m.to.index());
                touched |= batch.is_some_and(|b| b.differs_at(next));
                table.get(next)
            };
            s.see(label);
        });
        match error {
            Some(e) => Err(e),
            None => Ok((s, touched)),
        }
    }

    fn category(p: &Position, s: &Successors) -> Category {
        if !s.any {
            Category::Terminal(if p.in_check() { Terminal::Checkmate } else { Terminal::Stalemate })
        } else if s.crossing {
            Category::Capture
        } else {
            Category::Quiet
        }
    }

    /// Category of `p` and the first clause its label in `table` breaks.
    fn check(&self, idx: u64, p: &Position, table: &WdlTable) -> Result<(Category, Option<ViolationKind>), TableError> {
        let (s, _) = self.successors(idx, p, table, None)?;
        let category = Checker::category(p, &s);
        debug_assert_eq!(category, p.classify());
        Ok((category, judge(category, table.get(idx), &s)))
    }

    /// As `check` against the batch's first table, plus whether the
    /// verdict may differ for other tables of the batch.
    fn check_batch(
        &self,
        idx: u64,
        p: &Position,
        batch: &Batch,
    ) -> Result<(Category, Option<ViolationKind>, bool), TableError> {
        let base = batch.base();
        let (s, touched) = self.successors(idx, p, base, Some(batch))?;
        let category = Checker::category(p, &s);
        debug_assert_eq!(category, p.classify());
        Ok((category, judge(category, base.get(idx), &s), touched || batch.differs_at(idx)))
    }
}

fn terminal_label(t: Terminal) -> Label {
    match t {
        Terminal::Checkmate => Label::Loss,
        Terminal::Stalemate => Label::Draw,
    }
}

fn judge(category: Category, label: Label, s: &Successors) -> Option<ViolationKind> {
    if label == Label::Invalid {
        return Some(ViolationKind::InvalidLabel);
    }
    if let Category::Terminal(t) = category {
        return (label != terminal_label(t)).then_some(ViolationKind::TerminalMismatch);
    }
    match label {
        Label::Win if !s.loss => Some(ViolationKind::WinNoLossSuccessor),
        Label::Loss if s.non_win => Some(ViolationKind::LossHasNonWinSuccessor),
        Label::Draw if s.loss => Some(ViolationKind::DrawHasLossSuccessor),
        Label::Draw if !s.draw => Some(ViolationKind::DrawNoDrawSuccessor),
        _ => None,
    }
}

/// Checks the label `label` claimed for `p` against its successors in `t`
/// and `sub`. Returns the first broken clause.
pub fn check_consistency(p: &Position, label: Label, t: &WdlTable, sub: &SubModelSet) -> Result<Option<Violation>> {
    let checker = Checker::new(t.signature(), sub)?;
    let index = checker.space.encode(p)?;
    if !p.is_legal() {
        return Err(Error::InvalidArgument(format!("illegal position {p}")));
    }
    let (s, _) = checker.successors(index.0, p, t, None)?;
    let category = Checker::category(p, &s);
    Ok(judge(category, label, &s).map(|kind| Violation { index, category, kind }))
}

/// Counts shared by every table of a batch, plus per-table extras.
struct Partial {
    counts: PositionCounts,
    shared: ViolationCounts,
    own: Vec<ViolationCounts>,
    error: Option<TableError>,
}

impl Partial {
    fn new(n: usize) -> Partial {
        Partial {
            counts: PositionCounts::default(),
            shared: ViolationCounts::default(),
            own: vec![ViolationCounts::default(); n],
            error: None,
        }
    }

    fn count(&mut self, category: Category) {
        match category {
            Category::Terminal(_) => self.counts.terminal += 1,
            Category::Capture => self.counts.capture += 1,
            Category::Quiet => self.counts.quiet += 1,
        }
    }

    fn merge(mut self, o: Partial) -> Partial {
        self.counts.add(&o.counts);
        self.shared.add(&o.shared);
        for (a, b) in self.own.iter_mut().zip(&o.own) {
            a.add(b);
        }
        self.error = self.error.or(o.error);
        self
    }

    fn violations(&self, member: usize) -> ViolationCounts {
        let mut v = self.shared;
        v.add(&self.own[member]);
        v
    }
}

fn chunk_ranges(size: u64) -> impl IndexedParallelIterator<Item = std::ops::Range<u64>> {
    let chunk = CHUNK as u64;
    (0..size.div_ceil(chunk) as usize)
        .into_par_iter()
        .map(move |c| c as u64 * chunk..((c as u64 + 1) * chunk).min(size))
}

fn single(reports: Result<Vec<VerificationReport>>) -> Result<VerificationReport> {
    Ok(reports?.pop().expect("one report per table"))
}

/// One classification and one consistency check per valid position.
pub fn verify_decomposed(t: &WdlTable, sub: &SubModelSet) -> Result<VerificationReport> {
    single(verify_decomposed_many(&[t], sub))
}

/// `verify_decomposed` for several tables of one signature, in one sweep.
/// Each report's `wall_time` is the time of the whole sweep.
pub fn verify_decomposed_many(tables: &[&WdlTable], sub: &SubModelSet) -> Result<Vec<VerificationReport>> {
    let start = Instant::now();
    let sig = tables
        .first().map(|t| t.signature()).ok_or_else(|| Error::InvalidArgument("no tables to verify".into()))?;
    let checker = Checker::new(sig, sub)?;
    let batch = Batch::new(tables, &checker.space)?;
    let n = tables.len();
    let total = chunk_ranges(checker.space.space_size())
        .map(|range| {
            let mut part = Partial::new(n);
            for idx in range {
                let Some(p) = checker.space.decode_unchecked(idx) else {
                    part.counts.invalid += 1;
                    continue;
                };
                let (category, kind, touched) = match checker.check_batch(idx, &p, &batch) {
                    Ok(r) => r,
                    Err(e) => {
                        part.error.get_or_insert(e);
                        continue;
                    }
                };
                part.count(category);
                if !touched {
                    if kind.is_some() {
                        part.shared.record(category);
                    }
                    continue;
                }
                for (m, t) in tables.iter().enumerate() {
                    match checker.check(idx, &p, t) {
                        Ok((_, Some(_))) => part.own[m].record(category),
                        Ok(_) => {}
                        Err(e) => {
                            part.error.get_or_insert(e);
                        }
                    }
                }
            }
            part
        })
        .reduce(|| Partial::new(n), Partial::merge);
    if let Some(e) = total.error {
        return Err(e.into());
    }
    let elapsed = start.elapsed().as_secs_f64();
    Ok((0..n)
        .map(|m| VerificationReport::new(sig, Mode::Decomposed, total.counts, total.violations(m), elapsed))
        .collect())
}

/// The first `limit` violations in index order.
pub fn collect_violations(t: &WdlTable, sub: &SubModelSet, limit: usize) -> Result<Vec<Violation>> {
    let checker = Checker::new(t.signature(), sub)?;
    let mut out = Vec::new();
    for idx in 0..t.space_size() {
        if out.len() >= limit {
            break;
        }
        let Some(p) = checker.space.decode_unchecked(idx) else { continue };
        if let (category, Some(kind)) = checker.check(idx, &p, t)? {
            out.push(Violation {
                index: PositionIndex(idx),
                category,
                kind,
            });
        }
    }
    Ok(out)
}

/// Baseline: every valid position, every successor, one uniform rule.
/// Category counts are tallied for the report, but no check depends on
/// them and the per-category violation fields stay zero.
pub fn verify_full(t: &WdlTable, sub: &SubModelSet) -> Result<VerificationReport> {
    single(verify_full_many(&[t], sub))
}

enum Value {
    /// A successor inside the table being verified, by index.
    Inside(u64),
    Outside(Label),
}

fn consistent_full(claimed: Label, terminal_in_check: Option<bool>, values: &[Value], table: &WdlTable) -> bool {
    if let Some(in_check) = terminal_in_check {
        return claimed == if in_check { Label::Loss } else { Label::Draw };
    }
    let label = |v: &Value| match *v {
        Value::Inside(i) => table.get(i),
        Value::Outside(l) => l,
    };
    match claimed {
        Label::Win => values.iter().any(|v| label(v) == Label::Loss),
        Label::Loss => values.iter().all(|v| label(v) == Label::Win),
        Label::Draw => {
            !values.iter().any(|v| label(v) == Label::Loss) && values.iter().any(|v| label(v) == Label::Draw)
        }
        Label::Invalid => false,
    }
}

/// `verify_full` for several tables of one signature, in one sweep.
pub fn verify_full_many(tables: &[&WdlTable], sub: &SubModelSet) -> Result<Vec<VerificationReport>> {
    let start = Instant::now();
    let sig = tables
        .first().map(|t| t.signature()).ok_or_else(|| Error::InvalidArgument("no tables to verify".into()))?;
    let space = IndexSpace::new(sig)?;
    sub.ensure_covers(sig)?;
    let batch = Batch::new(tables, &space)?;
    let n = tables.len();
    let base = batch.base();

    let tally = chunk_ranges(space.space_size())
        .map(|range| -> Result<(PositionCounts, u64, Vec<u64>)> {
            let mut counts = PositionCounts::default();
            let mut shared_bad = 0u64;
            let mut own_bad = vec![0u64; n];
            let mut values = Vec::new();
            for i in range {
                let Some(p) = space.decode(PositionIndex(i))? else {
                    counts.invalid += 1;
                    continue;
                };
                let moves = p.legal_moves();
                values.clear();
                let mut left_table = false;
                let mut touched = batch.differs_at(i);
                for &m in &moves {
                    let q = p.make_move(m);
                    if MaterialSignature::of(&q) == sig {
                        let j = space.encode(&q)?.0;
                        touched |= batch.differs_at(j);
                        values.push(Value::Inside(j));
                    } else {
                        left_table = true;
                        values.push(Value::Outside(sub.lookup_cross(&q)?));
                    }
                }
                if moves.is_empty() {
                    counts.terminal += 1;
                } else if left_table {
                    counts.capture += 1;
                } else {
                    counts.quiet += 1;
                }
                let terminal = moves.is_empty().then(|| p.in_check());
                if touched {
                    for (m, t) in tables.iter().enumerate() {
                        own_bad[m] += !consistent_full(t.get(i), terminal, &values, t) as u64;
                    }
                } else {
                    shared_bad += !consistent_full(base.get(i), terminal, &values, base) as u64;
                }
            }
            Ok((counts, shared_bad, own_bad))
        })
        .collect::<Vec<_>>();

    let mut counts = PositionCounts::default();
    let mut shared_bad = 0;
    let mut own_bad = vec![0u64; n];
    for part in tally {
        let (c, s, o) = part?;
        counts.add(&c);
        shared_bad += s;
        for (a, b) in own_bad.iter_mut().zip(o) {
            *a += b;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    Ok(own_bad
        .into_iter()
        .map(|own| {
            let v = ViolationCounts {
                total_v: shared_bad + own,
                ..Default::default()
            };
            VerificationReport::new(sig, Mode::Full, counts, v, elapsed)
        })
        .collect())
}

/// Rebuilds quiet labels by value iteration over the quiet subgraph, with
/// rule-derived terminal labels and the table's (checked) capture labels
/// held fixed, and counts quiet positions where `t` disagrees.
pub fn verify_quiet_only(t: &WdlTable, sub: &SubModelSet) -> Result<VerificationReport> {
    single(verify_quiet_only_many(&[t], sub))
}

const CAT_INVALID: u8 = 0;
const CAT_TERMINAL: u8 = 1;
const CAT_CAPTURE: u8 = 2;
const CAT_QUIET: u8 = 3;

/// `verify_quiet_only` for several tables of one signature. Tables that
/// agree at every capture position share one reconstruction.
pub fn verify_quiet_only_many(tables: &[&WdlTable], sub: &SubModelSet) -> Result<Vec<VerificationReport>> {
    let start = Instant::now();
    let sig = tables
        .first().map(|t| t.signature()).ok_or_else(|| Error::InvalidArgument("no tables to verify".into()))?;
    let checker = Checker::new(sig, sub)?;
    let space = &checker.space;
    let batch = Batch::new(tables, space)?;
    let base = batch.base();
    let n = tables.len();
    let size = space.space_size() as usize;

    let mut labels = vec![UNKNOWN; size];
    let mut category = vec![CAT_INVALID; size];
    let seed = labels
        .par_chunks_mut(CHUNK)
        .zip(category.par_chunks_mut(CHUNK))
        .enumerate()
        .map(|(ci, (lab, cat))| {
            let mut part = Partial::new(n);
            let base_idx = (ci * CHUNK) as u64;
            for j in 0..lab.len() {
                let idx = base_idx + j as u64;
                let Some(p) = space.decode_unchecked(idx) else {
                    lab[j] = INVALID;
                    part.counts.invalid += 1;
                    continue;
                };
                let (c, kind, touched) = match checker.check_batch(idx, &p, &batch) {
                    Ok(r) => r,
                    Err(e) => {
                        part.error.get_or_insert(e);
                        continue;
                    }
                };
                part.count(c);
                match c {
                    Category::Terminal(term) => {
                        cat[j] = CAT_TERMINAL;
                        lab[j] = terminal_label(term) as u8;
                    }
                    Category::Capture => {
                        cat[j] = CAT_CAPTURE;
                        lab[j] = base.get(idx) as u8;
                    }
                    Category::Quiet => {
                        cat[j] = CAT_QUIET;
                        continue;
                    }
                }
                if !touched {
                    if kind.is_some() {
                        part.shared.record(c);
                    }
                    continue;
                }
                for (m, t) in tables.iter().enumerate() {
                    match checker.check(idx, &p, t) {
                        Ok((_, Some(_))) => part.own[m].record(c),
                        Ok(_) => {}
                        Err(e) => {
                            part.error.get_or_insert(e);
                        }
                    }
                }
            }
            part
        })
        .reduce(|| Partial::new(n), Partial::merge);
    if let Some(e) = seed.error {
        return Err(e.into());
    }

    let differing = batch.differing_indices();
    let reconstruct = |mut labels: Vec<u8>| -> Result<Vec<u8>> {
        let pending: Vec<u64> = (0..size as u64)
            .filter(|&i| category[i as usize] == CAT_QUIET && space.is_canonical_code(i))
            .collect();
        let outcome = solve(space, &mut labels, None, None, pending, true)?;
        for &idx in &outcome.unresolved {
            labels[idx as usize] = DRAW;
        }
        copy_to_duplicate_codes(space, &mut labels, None);
        Ok(labels)
    };
    let quiet_differences = |rebuilt: &[u8], t: &WdlTable| -> u64 {
        (0..size)
            .into_par_iter()
            .with_min_len(CHUNK)
            .filter(|&i| category[i] == CAT_QUIET && rebuilt[i] != t.get(i as u64) as u8)
            .count() as u64
    };

    let mut own_boundary: Vec<Option<Vec<u8>>> = vec![None; n];
    for (m, t) in tables.iter().enumerate().skip(1) {
        let moved = differing
            .iter()
            .any(|&i| category[i as usize] == CAT_CAPTURE && t.get(i) != base.get(i));
        if moved {
            let mut own = labels.clone();
            for &i in &differing {
                if category[i as usize] == CAT_CAPTURE {
                    own[i as usize] = t.get(i) as u8;
                }
            }
            own_boundary[m] = Some(own);
        }
    }
    let shared = reconstruct(labels)?;
    let shared_diff = quiet_differences(&shared, base);

    let mut reports = Vec::with_capacity(n);
    let elapsed_so_far = start.elapsed().as_secs_f64();
    for (m, t) in tables.iter().enumerate() {
        let quiet_v = match own_boundary[m].take() {
            Some(own) => quiet_differences(&reconstruct(own)?, t),
            None => {
                // adjust the shared count where this table departs from the first
                let mut d = shared_diff as i64;
                for &i in &differing {
                    if category[i as usize] == CAT_QUIET {
                        let r = shared[i as usize];
                        d -= (r != base.get(i) as u8) as i64;
                        d += (r != t.get(i) as u8) as i64;
                    }
                }
                d as u64
            }
        };
        let mut v = seed.violations(m);
        v.quiet_v = quiet_v;
        v.total_v += quiet_v;
        reports.push(VerificationReport::new(sig, Mode::QuietOnly, seed.counts, v, elapsed_so_far));
    }
    let elapsed = start.elapsed().as_secs_f64();
    for r in &mut reports {
        r.wall_time = elapsed;
    }
    Ok(reports)
}

pub fn verify(mode: Mode, t: &WdlTable, sub: &SubModelSet) -> Result<VerificationReport> {
    match mode {
        Mode::Decomposed => verify_decomposed(t, sub),
        Mode::Full => verify_full(t, sub),
        Mode::QuietOnly => verify_quiet_only(t, sub),
    }
}

/// Rotates the labels of `flips` distinct valid indices chosen from a
/// seeded stream (Win → Draw → Loss → Win). Derivation rounds are dropped.
pub fn mutate(t: &WdlTable, flips: u64, seed: u64) -> Result<WdlTable> {
    if flips == 0 {
        return Err(Error::InvalidArgument("flips must be at least 1".into()));
    }
    let valid = t.valid_count();
    if flips > valid {
        return Err(Error::InvalidArgument(format!(
            "{flips} flips requested but {} has only {valid} valid positions",
            t.signature()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<u64> = if flips.saturating_mul(2) <= valid {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::with_capacity(flips as usize);
        while (out.len() as u64) < flips {
            let i = rng.gen_range(0..t.space_size());
            if t.get(i) != Label::Invalid && seen.insert(i) {
                out.push(i);
            }
        }
        out
    } else {
        let all: Vec<u64> = (0..t.space_size()).filter(|&i| t.get(i) != Label::Invalid).collect();
        rand::seq::index::sample(&mut rng, all.len(), flips as usize)
            .into_iter()
            .map(|k| all[k])
            .collect()
    };
    let mut out = t.clone();
    out.clear_rounds();
    for i in chosen {
        out.set(i, t.get(i).rotate());
    }
    Ok(out)
}

/// Every valid position labeled Draw; with `fix_terminals`, checkmates are
/// labeled Loss (stalemates are Draw either way).
pub fn all_draw_table(sig: MaterialSignature, fix_terminals: bool) -> Result<WdlTable> {
    let space = IndexSpace::new(sig)?;
    let mut labels = vec![INVALID; space.space_size() as usize];
    labels.par_chunks_mut(CHUNK).enumerate().for_each(|(ci, lab)| {
        let base = (ci * CHUNK) as u64;
        for (j, slot) in lab.iter_mut().enumerate() {
            if let Some(p) = space.decode_unchecked(base + j as u64) {
                *slot = if fix_terminals && p.in_check() && p.legal_moves().is_empty() {
                    LOSS
                } else {
                    DRAW
                };
            }
        }
    });
    Ok(WdlTable::from_unpacked(sig, &labels, None))
}
