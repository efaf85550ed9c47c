use std::fmt;
use std::ops::ControlFlow;

use arrayvec::ArrayVec;

use super::bitboard::{
    between, bishop_attacks, bit, line, rook_attacks, Bitboard, Bits, KING_ATTACKS, KNIGHT_ATTACKS, PAWN_ATTACKS,
    RANK_1, RANK_8,
};
use super::types::{Category, Color, Kind, Move, Piece, Square, Terminal};
use super::RulesError;

/// Upper bound on legal moves in any chess position is 218.
pub type MoveList = ArrayVec<Move, 256>;

/// Piece placement plus side to move. No castling rights, no en-passant
/// square, no move counters.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Position {
    board: [Option<Piece>; 64],
    by_color: [Bitboard; 2],
    by_kind: [Bitboard; 6],
    side_to_move: Color,
}

impl Position {
    pub fn empty(side_to_move: Color) -> Position {
        Position {
            board: [None; 64],
            by_color: [0; 2],
            by_kind: [0; 6],
            side_to_move,
        }
    }

    /// Builds a structurally well-formed position: no shared squares and
    /// exactly one king per color. Legality is checked separately.
    pub fn from_pieces(pieces: &[(Square, Piece)], side_to_move: Color) -> Result<Position, RulesError> {
        let mut pos = Position::empty(side_to_move);
        for &(sq, piece) in pieces {
            if pos.board[sq.index() as usize].is_some() {
                return Err(RulesError::Occupied(sq));
            }
            pos.put(sq, piece);
        }
        for color in Color::ALL {
            let kings = (pos.by_color[color.index()] & pos.by_kind[Kind::King.index()]).count_ones();
            if kings != 1 {
                return Err(RulesError::KingCount { color, count: kings });
            }
        }
        Ok(pos)
    }

    /// Places a piece on an empty square.
    #[inline]
    pub(crate) fn put(&mut self, sq: Square, piece: Piece) {
        let b = bit(sq.index());
        debug_assert!(self.board[sq.index() as usize].is_none());
        self.board[sq.index() as usize] = Some(piece);
        self.by_color[piece.color.index()] |= b;
        self.by_kind[piece.kind.index()] |= b;
    }

    #[inline]
    fn remove(&mut self, sq: Square) -> Option<Piece> {
        let piece = self.board[sq.index() as usize].take()?;
        let b = bit(sq.index());
        self.by_color[piece.color.index()] &= !b;
        self.by_kind[piece.kind.index()] &= !b;
        Some(piece)
    }

    #[inline]
    pub fn piece_at(&self, sq: Square) -> Option<Piece> {
        self.board[sq.index() as usize]
    }

    #[inline]
    pub fn side_to_move(&self) -> Color {
        self.side_to_move
    }

    pub fn with_side_to_move(mut self, color: Color) -> Position {
        self.side_to_move = color;
        self
    }

    #[inline]
    pub fn occupied(&self) -> Bitboard {
        self.by_color[0] | self.by_color[1]
    }

    #[inline]
    pub fn by_color(&self, color: Color) -> Bitboard {
        self.by_color[color.index()]
    }

    #[inline]
    pub fn by_piece(&self, piece: Piece) -> Bitboard {
        self.by_color[piece.color.index()] & self.by_kind[piece.kind.index()]
    }

    pub fn piece_count(&self) -> u32 {
        self.occupied().count_ones()
    }

    /// Occupied squares in ascending order.
    pub fn pieces(&self) -> impl Iterator<Item = (Square, Piece)> + '_ {
        Bits(self.occupied()).map(move |sq| {
            let sq = Square::from_index_unchecked(sq);
            (sq, self.piece_at(sq).expect("occupied square"))
        })
    }

    pub fn king_square(&self, color: Color) -> Option<Square> {
        let kings = self.by_piece(Piece::new(color, Kind::King));
        (kings != 0).then(|| Square::from_index_unchecked(kings.trailing_zeros() as u8))
    }

    /// Whether any piece of `attacker` in `mask` attacks `sq`, given occupancy `occ`.
    #[inline]
    fn attacked_with(&self, sq: u8, attacker: Color, occ: Bitboard, mask: Bitboard) -> bool {
        let theirs = self.by_color[attacker.index()] & mask;
        let k = &self.by_kind;
        let i = sq as usize;
        if KNIGHT_ATTACKS[i] & theirs & k[Kind::Knight.index()] != 0 {
            return true;
        }
        if KING_ATTACKS[i] & theirs & k[Kind::King.index()] != 0 {
            return true;
        }
        if PAWN_ATTACKS[attacker.flip().index()][i] & theirs & k[Kind::Pawn.index()] != 0 {
            return true;
        }
        let queens = k[Kind::Queen.index()];
        let straight = theirs & (queens | k[Kind::Rook.index()]);
        if straight != 0 && rook_attacks(sq, occ) & straight != 0 {
            return true;
        }
        let diagonal = theirs & (queens | k[Kind::Bishop.index()]);
        diagonal != 0 && bishop_attacks(sq, occ) & diagonal != 0
    }

    /// Whether `sq` is attacked by any piece of color `attacker`.
    pub fn is_attacked(&self, sq: Square, attacker: Color) -> bool {
        self.attacked_with(sq.index(), attacker, self.occupied(), !0)
    }

    /// Whether the side to move is in check.
    pub fn in_check(&self) -> bool {
        match self.king_square(self.side_to_move) {
            Some(k) => self.is_attacked(k, self.side_to_move.flip()),
            None => false,
        }
    }

    /// The side not to move is not in check, no pawn stands on the first
    /// or last rank, and each color has exactly one king.
    pub fn is_legal(&self) -> bool {
        if self.by_kind[Kind::Pawn.index()] & (RANK_1 | RANK_8) != 0 {
            return false;
        }
        for color in Color::ALL {
            if self.by_piece(Piece::new(color, Kind::King)).count_ones() != 1 {
                return false;
            }
        }
        let waiting = self.side_to_move.flip();
        let king = self.king_square(waiting).expect("king present");
        !self.is_attacked(king, self.side_to_move)
    }

    /// Pseudo-legal target squares for the piece on `from`.
    #[inline]
    fn targets(&self, from: u8, piece: Piece, occ: Bitboard) -> Bitboard {
        let own = self.by_color[piece.color.index()];
        let theirs = self.by_color[piece.color.flip().index()];
        let i = from as usize;
        let raw = match piece.kind {
            Kind::King => KING_ATTACKS[i],
            Kind::Knight => KNIGHT_ATTACKS[i],
            Kind::Bishop => bishop_attacks(from, occ),
            Kind::Rook => rook_attacks(from, occ),
            Kind::Queen => bishop_attacks(from, occ) | rook_attacks(from, occ),
            Kind::Pawn => {
                let (one, start_rank) = match piece.color {
                    Color::White => (from + 8, 1),
                    Color::Black => (from.wrapping_sub(8), 6),
                };
                let mut pushes = 0;
                // a pawn never stands on its last rank, so `one` is on the board
                if occ & bit(one) == 0 {
                    pushes |= bit(one);
                    if from / 8 == start_rank {
                        let two = match piece.color {
                            Color::White => from + 16,
                            Color::Black => from - 16,
                        };
                        if occ & bit(two) == 0 {
                            pushes |= bit(two);
                        }
                    }
                }
                return pushes | (PAWN_ATTACKS[piece.color.index()][i] & theirs & !self.by_kind[0]);
            }
        };
        // kings are never captured
        raw & !own & !(theirs & self.by_kind[Kind::King.index()])
    }

    /// All legal moves, in ascending order of origin square, then target
    /// square, then promotion kind (Q, R, B, N).
    pub fn legal_moves(&self) -> MoveList {
        let mut list = MoveList::new();
        self.for_each_legal_move(|m| list.push(m));
        list
    }

    /// Visits the legal moves without allocating.
    #[inline]
    pub fn for_each_legal_move(&self, mut visit: impl FnMut(Move)) {
        let _ = self.try_for_each_legal_move(|m| {
            visit(m);
            ControlFlow::Continue(())
        });
    }

    /// Visits the legal moves until `visit` breaks.
    #[inline]
    pub fn try_for_each_legal_move(&self, mut visit: impl FnMut(Move) -> ControlFlow<()>) -> ControlFlow<()> {
        let us = self.side_to_move;
        let them = us.flip();
        let occ = self.occupied();
        let Some(king) = self.king_square(us) else {
            return ControlFlow::Continue(());
        };
        let king = king.index();
        let in_check = self.attacked_with(king, them, occ, !0);
        let pinned = if in_check { 0 } else { self.pinned(king, us) };
        for from in Bits(self.by_color[us.index()]) {
            let piece = self.board[from as usize].expect("own piece");
            let from_bb = bit(from);
            let mut targets = self.targets(from, piece, occ);
            if piece.kind != Kind::King && !in_check && pinned & from_bb != 0 {
                targets &= line(king, from);
            }
            for to in Bits(targets) {
                let to_bb = bit(to);
                // without check, only king moves and pinned pieces can
                // expose the king, and pins are handled above
                if piece.kind == Kind::King || in_check {
                    let after = (occ & !from_bb) | to_bb;
                    let king_after = if piece.kind == Kind::King { to } else { king };
                    if self.attacked_with(king_after, them, after, !to_bb) {
                        continue;
                    }
                }
                let from_sq = Square::from_index_unchecked(from);
                let to_sq = Square::from_index_unchecked(to);
                if piece.kind == Kind::Pawn && to_bb & (RANK_1 | RANK_8) != 0 {
                    for kind in Kind::PROMOTIONS {
                        visit(Move::with_promotion(from_sq, to_sq, kind))?;
                    }
                } else {
                    visit(Move::new(from_sq, to_sq))?;
                }
            }
        }
        ControlFlow::Continue(())
    }

    /// Own pieces that are the only blocker between `king` and an enemy slider.
    #[inline]
    fn pinned(&self, king: u8, us: Color) -> Bitboard {
        let theirs = self.by_color[us.flip().index()];
        let k = &self.by_kind;
        let queens = k[Kind::Queen.index()];
        let snipers = (rook_attacks(king, 0) & theirs & (queens | k[Kind::Rook.index()]))
            | (bishop_attacks(king, 0) & theirs & (queens | k[Kind::Bishop.index()]));
        let occ = self.occupied();
        let mut pinned = 0;
        for s in Bits(snipers) {
            let blockers = between(king, s) & occ;
            if blockers.count_ones() == 1 {
                pinned |= blockers & self.by_color[us.index()];
            }
        }
        pinned
    }

    /// A capture or a promotion.
    #[inline]
    pub fn is_material_changing(&self, m: Move) -> bool {
        m.promotion.is_some() || self.board[m.to.index() as usize].is_some()
    }

    /// Plays `m` without checking that it is legal.
    pub fn make_move(&self, m: Move) -> Position {
        let mut next = *self;
        next.remove(m.to);
        let mut piece = next.remove(m.from).expect("piece on origin square");
        if let Some(kind) = m.promotion {
            piece.kind = kind;
        }
        next.put(m.to, piece);
        next.side_to_move = self.side_to_move.flip();
        next
    }

    /// Plays a legal move, rejecting anything `legal_moves` would not produce.
    pub fn apply_move(&self, m: Move) -> Result<Position, RulesError> {
        if !self.legal_moves().contains(&m) {
            return Err(RulesError::IllegalMove(m));
        }
        Ok(self.make_move(m))
    }

    pub fn classify(&self) -> Category {
        let mut any = false;
        let mut changing = false;
        self.for_each_legal_move(|m| {
            any = true;
            changing |= self.is_material_changing(m);
        });
        if !any {
            if self.in_check() {
                Category::Terminal(Terminal::Checkmate)
            } else {
                Category::Terminal(Terminal::Stalemate)
            }
        } else if changing {
            Category::Capture
        } else {
            Category::Quiet
        }
    }

    /// Relocates every piece through `f`, keeping colors and side to move.
    pub fn map_squares(&self, f: impl Fn(Square) -> Square) -> Position {
        let mut out = Position::empty(self.side_to_move);
        for (sq, piece) in self.pieces() {
            out.put(f(sq), piece);
        }
        out
    }

    /// Swaps piece colors and the side to move, optionally mirroring ranks.
    pub fn swap_colors(&self, mirror_ranks: bool) -> Position {
        let mut out = Position::empty(self.side_to_move.flip());
        for (sq, piece) in self.pieces() {
            let sq = if mirror_ranks { sq.mirror_rank() } else { sq };
            out.put(sq, Piece::new(piece.color.flip(), piece.kind));
        }
        out
    }

    /// Placement and side-to-move fields, followed by "- -".
    pub fn fen(&self) -> String {
        let mut s = String::new();
        for rank in (0..8).rev() {
            let mut gap = 0;
            for file in 0..8 {
                match self.board[rank * 8 + file] {
                    Some(p) => {
                        if gap > 0 {
                            s.push(char::from(b'0' + gap));
                            gap = 0;
                        }
                        s.push(p.fen_char());
                    }
                    None => gap += 1,
                }
            }
            if gap > 0 {
                s.push(char::from(b'0' + gap));
            }
            if rank > 0 {
                s.push('/');
            }
        }
        s.push(' ');
        s.push(match self.side_to_move {
            Color::White => 'w',
            Color::Black => 'b',
        });
        s.push_str(" - -");
        s
    }

    /// Parses placement and side to move. Castling and en-passant fields,
    /// if present, must be "-"; move counters are ignored.
    pub fn from_fen(fen: &str) -> Result<Position, RulesError> {
        let bad = |why: &str| RulesError::BadFen(format!("{why}: {fen:?}"));
        let fields: Vec<&str> = fen.split_whitespace().collect();
        if fields.len() < 2 || fields.len() > 6 {
            return Err(bad("expected 2 to 6 fields"));
        }
        for extra in fields.iter().skip(2).take(2) {
            if *extra != "-" {
                return Err(bad("castling and en-passant fields must be '-'"));
            }
        }
        let stm = match fields[1] {
            "w" => Color::White,
            "b" => Color::Black,
            _ => return Err(bad("side to move must be 'w' or 'b'")),
        };
        let ranks: Vec<&str> = fields[0].split('/').collect();
        if ranks.len() != 8 {
            return Err(bad("placement needs 8 ranks"));
        }
        let mut pieces = Vec::new();
        for (row, text) in ranks.iter().enumerate() {
            let rank = 7 - row as u8;
            let mut file = 0u8;
            for c in text.chars() {
                if let Some(d) = c.to_digit(10) {
                    if !(1..=8).contains(&d) {
                        return Err(bad("bad gap digit"));
                    }
                    file += d as u8;
                } else {
                    let piece = Piece::from_fen_char(c).ok_or_else(|| bad("unknown piece letter"))?;
                    let sq = Square::new(file, rank).ok_or_else(|| bad("rank overflows"))?;
                    pieces.push((sq, piece));
                    file += 1;
                }
                if file > 8 {
                    return Err(bad("rank overflows"));
                }
            }
            if file != 8 {
                return Err(bad("rank does not cover 8 files"));
            }
        }
        Position::from_pieces(&pieces, stm)
    }
}

impl fmt::Debug for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Position({})", self.fen())
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.fen())
    }
}
