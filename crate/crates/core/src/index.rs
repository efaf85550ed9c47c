//! Dense position indexing.
//!
//! A position of a signature with `k` pieces maps to
//! `stm · 64^k + Σ square(piece_i) · 64^(k-1-i)`, pieces taken in the
//! signature's canonical order (White first, K Q R B N P). Codes with
//! overlapping pieces or illegal placements are holes. Identical pieces
//! give several codes per position; the one with ascending squares inside
//! each group of identical pieces is the canonical code.

use arrayvec::ArrayVec;

use crate::material::MaterialSignature;
use crate::rules::bitboard::{bishop_attacks, bit, rook_attacks, Bits, KING_ATTACKS, KNIGHT_ATTACKS, RANK_1, RANK_8};
use crate::rules::{Color, Kind, Piece, Position, Square};

/// The widest signature whose index space fits in 64 bits.
pub const MAX_PIECES: usize = 10;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum IndexError {
    #[error("index {index} out of range for a space of {size}")]
    OutOfRange { index: u64, size: u64 },
    #[error("position material {found} does not match {expected}")]
    MaterialMismatch { expected: String, found: String },
    #[error("{0} pieces exceed the 64-bit index space (max {MAX_PIECES})")]
    TooManyPieces(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct PositionIndex(pub u64);

/// Codec between positions of one signature and their indices.
#[derive(Clone, Debug)]
pub struct IndexSpace {
    signature: MaterialSignature,
    pieces: ArrayVec<Piece, MAX_PIECES>,
    /// First slot of each slot's group of identical pieces, and its length.
    groups: ArrayVec<(u8, u8), MAX_PIECES>,
    has_duplicates: bool,
    stm_shift: u32,
}

impl IndexSpace {
    pub fn new(signature: MaterialSignature) -> Result<IndexSpace, IndexError> {
        let list = signature.pieces();
        if list.len() > MAX_PIECES {
            return Err(IndexError::TooManyPieces(list.len() as u32));
        }
        let pieces: ArrayVec<Piece, MAX_PIECES> = list.into_iter().collect();
        let mut groups = ArrayVec::new();
        let mut has_duplicates = false;
        for (i, p) in pieces.iter().enumerate() {
            let start = pieces.iter().position(|q| q == p).unwrap();
            let len = pieces.iter().filter(|q| *q == p).count();
            has_duplicates |= len > 1;
            debug_assert!(i >= start);
            groups.push((start as u8, len as u8));
        }
        Ok(IndexSpace {
            signature,
            stm_shift: 6 * pieces.len() as u32,
            pieces,
            groups,
            has_duplicates,
        })
    }

    pub fn signature(&self) -> MaterialSignature {
        self.signature
    }

    pub fn piece_count(&self) -> usize {
        self.pieces.len()
    }

    /// `2 · 64^k`.
    pub fn space_size(&self) -> u64 {
        2u64 << self.stm_shift
    }

    /// Slot pieces in index order.
    pub fn slot_pieces(&self) -> &[Piece] {
        &self.pieces
    }

    #[inline]
    fn shift(&self, slot: usize) -> u32 {
        6 * (self.pieces.len() - 1 - slot) as u32
    }

    #[inline]
    pub(crate) fn square_of(&self, idx: u64, slot: usize) -> u8 {
        ((idx >> self.shift(slot)) & 63) as u8
    }

    #[inline]
    pub(crate) fn side_of(&self, idx: u64) -> Color {
        if (idx >> self.stm_shift) & 1 == 0 {
            Color::White
        } else {
            Color::Black
        }
    }

    pub fn encode(&self, p: &Position) -> Result<PositionIndex, IndexError> {
        let found = MaterialSignature::of(p);
        if found != self.signature {
            return Err(IndexError::MaterialMismatch {
                expected: self.signature.to_string(),
                found: found.to_string(),
            });
        }
        Ok(PositionIndex(self.encode_unchecked(p)))
    }

    /// Canonical code of a position already known to carry this signature.
    #[inline]
    pub(crate) fn encode_unchecked(&self, p: &Position) -> u64 {
        let mut idx = (p.side_to_move() as u64) << self.stm_shift;
        let mut slot = 0;
        while slot < self.pieces.len() {
            // identical pieces fill consecutive slots in ascending square order
            for sq in Bits(p.by_piece(self.pieces[slot])) {
                idx |= (sq as u64) << self.shift(slot);
                slot += 1;
            }
        }
        idx
    }

    /// The legal position at `i`, or `None` for a hole.
    pub fn decode(&self, i: PositionIndex) -> Result<Option<Position>, IndexError> {
        if i.0 >= self.space_size() {
            return Err(IndexError::OutOfRange {
                index: i.0,
                size: self.space_size(),
            });
        }
        Ok(self.decode_unchecked(i.0))
    }

    #[inline]
    pub(crate) fn decode_unchecked(&self, idx: u64) -> Option<Position> {
        let mut occ = 0u64;
        let mut pawns = 0u64;
        for slot in 0..self.pieces.len() {
            let b = bit(self.square_of(idx, slot));
            if occ & b != 0 {
                return None;
            }
            occ |= b;
            if self.pieces[slot].kind == Kind::Pawn {
                pawns |= b;
            }
        }
        if pawns & (RANK_1 | RANK_8) != 0 {
            return None;
        }
        let mut p = Position::empty(self.side_of(idx));
        for (slot, piece) in self.pieces.iter().enumerate() {
            p.put(Square::from_index_unchecked(self.square_of(idx, slot)), *piece);
        }
        p.is_legal().then_some(p)
    }

    /// Position at a code already known to be valid.
    #[inline]
    pub(crate) fn decode_trusted(&self, idx: u64) -> Position {
        let mut p = Position::empty(self.side_of(idx));
        for (slot, piece) in self.pieces.iter().enumerate() {
            p.put(Square::from_index_unchecked(self.square_of(idx, slot)), *piece);
        }
        p
    }

    /// Calls `visit` with the canonical code of every position that could
    /// reach `idx` by one move keeping the material. A superset: origins are
    /// not checked for legality.
    pub(crate) fn for_each_predecessor(&self, idx: u64, mut visit: impl FnMut(u64)) {
        let k = self.pieces.len();
        let mut occ = 0u64;
        for slot in 0..k {
            occ |= bit(self.square_of(idx, slot));
        }
        let mover = self.side_of(idx).flip();
        let flipped = idx ^ (1u64 << self.stm_shift);
        for slot in 0..k {
            let piece = self.pieces[slot];
            if piece.color != mover {
                continue;
            }
            let to = self.square_of(idx, slot);
            let origins = match piece.kind {
                Kind::King => KING_ATTACKS[to as usize],
                Kind::Knight => KNIGHT_ATTACKS[to as usize],
                Kind::Queen => rook_attacks(to, occ) | bishop_attacks(to, occ),
                Kind::Rook => rook_attacks(to, occ),
                Kind::Bishop => bishop_attacks(to, occ),
                Kind::Pawn => pawn_origins(to, mover, occ),
            } & !occ;
            let shift = self.shift(slot);
            for from in Bits(origins) {
                let code = flipped & !(63u64 << shift) | ((from as u64) << shift);
                visit(if self.has_duplicates { self.canonical_code(code) } else { code });
            }
        }
    }

    /// Canonical index of the position after the piece on `from` moves to
    /// the empty square `to`, with the side to move flipped. Same-signature
    /// moves only.
    #[inline]
    pub(crate) fn successor_index(&self, idx: u64, from: u8, to: u8) -> u64 {
        let k = self.pieces.len();
        let mut slot = 0;
        while slot < k && self.square_of(idx, slot) != from {
            slot += 1;
        }
        debug_assert!(slot < k, "no piece on the origin square");
        let shift = self.shift(slot);
        let mut next = (idx ^ (1u64 << self.stm_shift)) & !(63u64 << shift) | ((to as u64) << shift);
        if self.has_duplicates {
            next = self.canonical_code(next);
        }
        next
    }

    /// Sorts every group of identical pieces into ascending square order.
    pub(crate) fn canonical_code(&self, idx: u64) -> u64 {
        let mut out = idx;
        let mut slot = 0;
        while slot < self.pieces.len() {
            let (start, len) = self.groups[slot];
            if len > 1 {
                out = self.sort_group(out, start as usize, len as usize);
            }
            slot += len as usize;
        }
        out
    }

    fn sort_group(&self, idx: u64, start: usize, len: usize) -> u64 {
        let mut squares: ArrayVec<u8, MAX_PIECES> = (start..start + len).map(|s| self.square_of(idx, s)).collect();
        squares.sort_unstable();
        let mut out = idx;
        for (i, sq) in squares.into_iter().enumerate() {
            let shift = self.shift(start + i);
            out = out & !(63u64 << shift) | ((sq as u64) << shift);
        }
        out
    }

    /// Whether every code is canonical (no identical pieces).
    pub(crate) fn is_canonical_code_always(&self) -> bool {
        !self.has_duplicates
    }

    /// Whether each group of identical pieces is listed in ascending
    /// square order. Always true for signatures without duplicates.
    pub fn is_canonical_code(&self, idx: u64) -> bool {
        if !self.has_duplicates {
            return true;
        }
        (1..self.pieces.len()).all(|slot| {
            self.groups[slot].0 as usize == slot || self.square_of(idx, slot - 1) < self.square_of(idx, slot)
        })
    }
}

fn pawn_origins(to: u8, color: Color, occ: u64) -> u64 {
    let (back, start_rank, double_to) = match color {
        Color::White => (-8i8, 1, 3),
        Color::Black => (8i8, 6, 4),
    };
    let one = (to as i8 + back) as u8;
    if one >= 64 || bit(one) & (RANK_1 | RANK_8) != 0 || bit(one) & occ != 0 {
        return 0;
    }
    let mut out = bit(one);
    if to / 8 == double_to {
        let two = (one as i8 + back) as u8;
        debug_assert_eq!(two / 8, start_rank);
        out |= bit(two);
    }
    out
}

/// The eight symmetries of the square board: identity, mirrors,
/// rotations and transpositions.
pub fn board_symmetries() -> [fn(Square) -> Square; 8] {
    [
        |s| s,
        |s| s.mirror_file(),
        |s| s.mirror_rank(),
        |s| s.mirror_file().mirror_rank(),
        |s| s.transpose(),
        |s| s.transpose().mirror_file(),
        |s| s.transpose().mirror_rank(),
        |s| s.transpose().mirror_file().mirror_rank(),
    ]
}
