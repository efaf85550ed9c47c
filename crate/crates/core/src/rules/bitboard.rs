//! Bitboard helpers and precomputed attack tables.

pub type Bitboard = u64;

#[inline]
pub fn bit(sq: u8) -> Bitboard {
    1u64 << sq
}

/// Iterates set bits from the least significant end.
pub struct Bits(pub Bitboard);

impl Iterator for Bits {
    type Item = u8;

    #[inline]
    fn next(&mut self) -> Option<u8> {
        if self.0 == 0 {
            None
        } else {
            let sq = self.0.trailing_zeros() as u8;
            self.0 &= self.0 - 1;
            Some(sq)
        }
    }
}

const fn step_table(deltas: &[(i8, i8)]) -> [Bitboard; 64] {
    let mut table = [0u64; 64];
    let mut sq = 0;
    while sq < 64 {
        let file = (sq % 8) as i8;
        let rank = (sq / 8) as i8;
        let mut i = 0;
        while i < deltas.len() {
            let f = file + deltas[i].0;
            let r = rank + deltas[i].1;
            if f >= 0 && f < 8 && r >= 0 && r < 8 {
                table[sq] |= 1u64 << (r * 8 + f);
            }
            i += 1;
        }
        sq += 1;
    }
    table
}

pub const KING_ATTACKS: [Bitboard; 64] = step_table(&[
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
]);

pub const KNIGHT_ATTACKS: [Bitboard; 64] = step_table(&[
    (1, 2),
    (2, 1),
    (2, -1),
    (1, -2),
    (-1, -2),
    (-2, -1),
    (-2, 1),
    (-1, 2),
]);

/// Squares attacked by a pawn, indexed by `[color][square]` (0 = White).
pub const PAWN_ATTACKS: [[Bitboard; 64]; 2] = [
    step_table(&[(-1, 1), (1, 1)]),
    step_table(&[(-1, -1), (1, -1)]),
];

// Direction order: N, E, NE, NW are "positive" (blockers found with lsb),
// S, W, SW, SE are "negative" (blockers found with msb).
const DIRS: [(i8, i8); 8] = [
    (0, 1),
    (1, 0),
    (1, 1),
    (-1, 1),
    (0, -1),
    (-1, 0),
    (-1, -1),
    (1, -1),
];

const fn ray_tables() -> [[Bitboard; 64]; 8] {
    let mut rays = [[0u64; 64]; 8];
    let mut d = 0;
    while d < 8 {
        let mut sq = 0;
        while sq < 64 {
            let mut f = (sq % 8) as i8 + DIRS[d].0;
            let mut r = (sq / 8) as i8 + DIRS[d].1;
            while f >= 0 && f < 8 && r >= 0 && r < 8 {
                rays[d][sq] |= 1u64 << (r * 8 + f);
                f += DIRS[d].0;
                r += DIRS[d].1;
            }
            sq += 1;
        }
        d += 1;
    }
    rays
}

const RAYS: [[Bitboard; 64]; 8] = ray_tables();

#[inline]
fn ray_attacks(dir: usize, sq: u8, occ: Bitboard) -> Bitboard {
    let ray = RAYS[dir][sq as usize];
    let blockers = ray & occ;
    if blockers == 0 {
        return ray;
    }
    let first = if dir < 4 {
        blockers.trailing_zeros()
    } else {
        63 - blockers.leading_zeros()
    };
    ray ^ RAYS[dir][first as usize]
}

#[inline]
pub fn rook_attacks(sq: u8, occ: Bitboard) -> Bitboard {
    ray_attacks(0, sq, occ) | ray_attacks(1, sq, occ) | ray_attacks(4, sq, occ) | ray_attacks(5, sq, occ)
}

#[inline]
pub fn bishop_attacks(sq: u8, occ: Bitboard) -> Bitboard {
    ray_attacks(2, sq, occ) | ray_attacks(3, sq, occ) | ray_attacks(6, sq, occ) | ray_attacks(7, sq, occ)
}

const fn line_tables() -> ([[Bitboard; 64]; 64], [[Bitboard; 64]; 64]) {
    let mut line = [[0u64; 64]; 64];
    let mut between = [[0u64; 64]; 64];
    let mut a = 0;
    while a < 64 {
        let mut d = 0;
        while d < 8 {
            let full = RAYS[d][a] | RAYS[(d + 4) % 8][a] | (1u64 << a);
            let mut path = 0u64;
            let mut f = (a % 8) as i8 + DIRS[d].0;
            let mut r = (a / 8) as i8 + DIRS[d].1;
            while f >= 0 && f < 8 && r >= 0 && r < 8 {
                let b = (r * 8 + f) as usize;
                line[a][b] = full;
                between[a][b] = path;
                path |= 1u64 << b;
                f += DIRS[d].0;
                r += DIRS[d].1;
            }
            d += 1;
        }
        a += 1;
    }
    (line, between)
}

static LINES: ([[Bitboard; 64]; 64], [[Bitboard; 64]; 64]) = line_tables();

/// The full board line through two aligned squares, or 0.
#[inline]
pub fn line(a: u8, b: u8) -> Bitboard {
    LINES.0[a as usize][b as usize]
}

/// Squares strictly between two aligned squares, or 0.
#[inline]
pub fn between(a: u8, b: u8) -> Bitboard {
    LINES.1[a as usize][b as usize]
}

pub const RANK_1: Bitboard = 0xff;
pub const RANK_8: Bitboard = 0xff << 56;
