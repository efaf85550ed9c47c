//! Material signatures and the lattice of endgames reachable by captures
//! and promotions.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::rules::{Color, Kind, Piece, Position};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MaterialError {
    #[error("malformed material signature {0:?}, expected e.g. \"KQvKR\"")]
    Malformed(String),
    #[error("{side:?} side of {name:?} has no king")]
    MissingKing { name: String, side: Color },
    #[error("{side:?} side of {name:?} has more than one king")]
    ExtraKing { name: String, side: Color },
}

/// Pieces per color, including exactly one king each.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct MaterialSignature {
    counts: [[u8; 6]; 2],
}

impl MaterialSignature {
    /// Builds a signature from per-color non-king pieces.
    pub fn from_pieces(white: &[Kind], black: &[Kind]) -> Result<MaterialSignature, MaterialError> {
        let mut counts = [[0u8; 6]; 2];
        for (side, kinds) in [white, black].into_iter().enumerate() {
            for k in kinds {
                counts[side][k.index()] += 1;
            }
        }
        let sig = MaterialSignature { counts };
        sig.check_kings()?;
        Ok(sig)
    }

    fn check_kings(&self) -> Result<(), MaterialError> {
        for side in Color::ALL {
            match self.counts[side.index()][Kind::King.index()] {
                0 => {
                    return Err(MaterialError::MissingKing {
                        name: self.to_string(),
                        side,
                    })
                }
                1 => {}
                _ => {
                    return Err(MaterialError::ExtraKing {
                        name: self.to_string(),
                        side,
                    })
                }
            }
        }
        Ok(())
    }

    /// The material actually on the board of `p`.
    pub fn of(p: &Position) -> MaterialSignature {
        let mut counts = [[0u8; 6]; 2];
        for color in Color::ALL {
            for kind in Kind::ALL {
                counts[color.index()][kind.index()] = p.by_piece(Piece::new(color, kind)).count_ones() as u8;
            }
        }
        MaterialSignature { counts }
    }

    pub fn count(&self, piece: Piece) -> u8 {
        self.counts[piece.color.index()][piece.kind.index()]
    }

    pub fn piece_count(&self) -> u32 {
        self.counts.iter().flatten().map(|&c| c as u32).sum()
    }

    pub fn pawn_count(&self) -> u32 {
        self.counts.iter().map(|side| side[Kind::Pawn.index()] as u32).sum()
    }

    pub fn has_pawns(&self, color: Color) -> bool {
        self.counts[color.index()][Kind::Pawn.index()] > 0
    }

    /// Pawns on both sides would need en-passant state, which positions
    /// here do not carry.
    pub fn has_two_sided_pawns(&self) -> bool {
        self.has_pawns(Color::White) && self.has_pawns(Color::Black)
    }

    pub fn color_swap(&self) -> MaterialSignature {
        MaterialSignature {
            counts: [self.counts[1], self.counts[0]],
        }
    }

    /// Every piece in canonical order: White first, then K, Q, R, B, N, P.
    pub fn pieces(&self) -> Vec<Piece> {
        let mut out = Vec::with_capacity(self.piece_count() as usize);
        for color in Color::ALL {
            for kind in Kind::ALL {
                for _ in 0..self.counts[color.index()][kind.index()] {
                    out.push(Piece::new(color, kind));
                }
            }
        }
        out
    }

    /// Signatures reachable by one capture, one promotion, or one capturing
    /// promotion. Never contains `self`.
    pub fn capture_successor_signatures(&self) -> BTreeSet<MaterialSignature> {
        let mut out = BTreeSet::new();
        let removable = |sig: &MaterialSignature, color: Color| -> Vec<Kind> {
            Kind::ALL[1..]
                .iter()
                .copied()
                .filter(|k| sig.counts[color.index()][k.index()] > 0)
                .collect()
        };
        for victim_side in Color::ALL {
            for kind in removable(self, victim_side) {
                let mut next = *self;
                next.counts[victim_side.index()][kind.index()] -= 1;
                out.insert(next);
            }
        }
        for side in Color::ALL {
            if !self.has_pawns(side) {
                continue;
            }
            for promo in Kind::PROMOTIONS {
                let mut promoted = *self;
                promoted.counts[side.index()][Kind::Pawn.index()] -= 1;
                promoted.counts[side.index()][promo.index()] += 1;
                out.insert(promoted);
                for kind in removable(&promoted, side.flip()) {
                    let mut next = promoted;
                    next.counts[side.flip().index()][kind.index()] -= 1;
                    out.insert(next);
                }
            }
        }
        out.remove(self);
        out
    }

    /// The stored representative of `self` and its color swap, with the
    /// transform that maps positions of `self` onto it.
    pub fn canonicalize_for_storage(&self) -> (MaterialSignature, ColorTransform) {
        let swapped = self.color_swap();
        if swapped.name_key().cmp(self.name_key()) == Ordering::Less {
            let pawns = self.pawn_count() > 0;
            (
                swapped,
                ColorTransform {
                    flip_colors: true,
                    mirror_ranks: pawns,
                },
            )
        } else {
            (*self, ColorTransform::IDENTITY)
        }
    }

    pub fn is_canonical(&self) -> bool {
        self.canonicalize_for_storage().1.is_identity()
    }
}

impl MaterialSignature {
    /// The name as piece ranks (K < Q < R < B < N < P), with the side
    /// separator ranked last, so comparing keys orders names with the
    /// stronger side first.
    fn name_key(&self) -> impl Iterator<Item = u8> + '_ {
        fn side(counts: [u8; 6]) -> impl Iterator<Item = u8> {
            Kind::ALL
                .into_iter()
                .flat_map(move |k| std::iter::repeat(k.index() as u8).take(counts[k.index()] as usize))
        }
        side(self.counts[0]).chain(std::iter::once(6)).chain(side(self.counts[1]))
    }
}

impl Ord for MaterialSignature {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.piece_count(), self.pawn_count())
            .cmp(&(other.piece_count(), other.pawn_count()))
            .then_with(|| self.name_key().cmp(other.name_key()))
    }
}

impl PartialOrd for MaterialSignature {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for MaterialSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, side) in self.counts.iter().enumerate() {
            if i == 1 {
                f.write_str("v")?;
            }
            for kind in Kind::ALL {
                for _ in 0..side[kind.index()] {
                    write!(f, "{}", kind.letter())?;
                }
            }
        }
        Ok(())
    }
}

impl fmt::Debug for MaterialSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MaterialSignature({self})")
    }
}

impl FromStr for MaterialSignature {
    type Err = MaterialError;

    fn from_str(name: &str) -> Result<MaterialSignature, MaterialError> {
        let malformed = || MaterialError::Malformed(name.to_string());
        let (white, black) = name.split_once('v').ok_or_else(malformed)?;
        let mut sides = [Vec::new(), Vec::new()];
        for (side, text) in [white, black].into_iter().enumerate() {
            if text.is_empty() {
                return Err(malformed());
            }
            for c in text.chars() {
                if !c.is_ascii_uppercase() {
                    return Err(malformed());
                }
                sides[side].push(Kind::from_letter(c).ok_or_else(malformed)?);
            }
        }
        let mut counts = [[0u8; 6]; 2];
        for (side, kinds) in sides.iter().enumerate() {
            for k in kinds {
                counts[side][k.index()] = counts[side][k.index()].saturating_add(1);
            }
        }
        let sig = MaterialSignature { counts };
        sig.check_kings().map_err(|e| match e {
            MaterialError::MissingKing { side, .. } => MaterialError::MissingKing {
                name: name.to_string(),
                side,
            },
            MaterialError::ExtraKing { side, .. } => MaterialError::ExtraKing {
                name: name.to_string(),
                side,
            },
            other => other,
        })?;
        Ok(sig)
    }
}

impl serde::Serialize for MaterialSignature {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for MaterialSignature {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Maps positions of a signature onto its color-swapped twin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ColorTransform {
    pub flip_colors: bool,
    pub mirror_ranks: bool,
}

impl ColorTransform {
    pub const IDENTITY: ColorTransform = ColorTransform {
        flip_colors: false,
        mirror_ranks: false,
    };

    pub fn is_identity(&self) -> bool {
        !self.flip_colors
    }

    /// Swaps piece colors and side to move (and mirrors ranks when pawns
    /// are present). Labels are relative to the side to move, so they carry
    /// over unchanged.
    pub fn apply(&self, p: &Position) -> Position {
        if self.flip_colors {
            p.swap_colors(self.mirror_ranks)
        } else {
            *p
        }
    }
}

/// Transitive closure of `targets` under capture successors, canonicalized
/// and sorted so that every signature follows all of its dependencies.
pub fn chain_order(targets: &[MaterialSignature]) -> Vec<MaterialSignature> {
    let mut seen = BTreeSet::new();
    let mut stack: Vec<MaterialSignature> = targets
        .iter()
        .map(|t| t.canonicalize_for_storage().0)
        .collect();
    while let Some(sig) = stack.pop() {
        if !seen.insert(sig) {
            continue;
        }
        for next in sig.capture_successor_signatures() {
            let canon = next.canonicalize_for_storage().0;
            if !seen.contains(&canon) {
                stack.push(canon);
            }
        }
    }
    // Ord is (piece count, pawn count, name); every lattice edge strictly
    // decreases the first two, so ascending order is topological.
    seen.into_iter().collect()
}

/// Every canonical signature with at most `max_pieces` pieces, excluding
/// signatures with pawns on both sides.
pub fn all_signatures(max_pieces: u32) -> Vec<MaterialSignature> {
    fn multisets(max: u32) -> Vec<Vec<Kind>> {
        let mut out = vec![Vec::new()];
        let mut frontier = vec![Vec::new()];
        for _ in 0..max {
            let mut next = Vec::new();
            for set in &frontier {
                let last: &Vec<Kind> = set;
                let start = last.last().map_or(1, |k: &Kind| k.index());
                for kind in &Kind::ALL[start..] {
                    let mut grown = set.clone();
                    grown.push(*kind);
                    next.push(grown);
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }
    let extra = max_pieces.saturating_sub(2);
    let sides = multisets(extra);
    let mut out = BTreeSet::new();
    for w in &sides {
        for b in &sides {
            if (w.len() + b.len()) as u32 > extra {
                continue;
            }
            let mut white = vec![Kind::King];
            white.extend(w);
            let mut black = vec![Kind::King];
            black.extend(b);
            let sig = MaterialSignature::from_pieces(&white, &black).expect("one king per side");
            if !sig.has_two_sided_pawns() {
                out.insert(sig.canonicalize_for_storage().0);
            }
        }
    }
    out.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(s: &str) -> MaterialSignature {
        s.parse().unwrap()
    }

    fn names(set: impl IntoIterator<Item = MaterialSignature>) -> Vec<String> {
        let mut v: Vec<String> = set.into_iter().map(|s| s.to_string()).collect();
        v.sort();
        v
    }

    #[test]
    fn parse_and_format() {
        let s = sig("KQvK");
        assert_eq!(s.count(Piece::new(Color::White, Kind::Queen)), 1);
        assert_eq!(s.piece_count(), 3);
        let s = sig("KvKQ");
        assert_eq!(s.count(Piece::new(Color::Black, Kind::Queen)), 1);
        assert_eq!(sig("QKvK").to_string(), "KQvK");
        assert_eq!(sig("KPNBRQvK").to_string(), "KQRBNPvK");
    }

    #[test]
    fn parse_errors() {
        assert!(matches!("KQK".parse::<MaterialSignature>(), Err(MaterialError::Malformed(_))));
        assert!(matches!("KXvK".parse::<MaterialSignature>(), Err(MaterialError::Malformed(_))));
        assert!(matches!("Kv".parse::<MaterialSignature>(), Err(MaterialError::Malformed(_))));
        assert!(matches!("kqvk".parse::<MaterialSignature>(), Err(MaterialError::Malformed(_))));
        assert!(matches!(
            "QvK".parse::<MaterialSignature>(),
            Err(MaterialError::MissingKing { side: Color::White, .. })
        ));
        assert!(matches!(
            "KvKK".parse::<MaterialSignature>(),
            Err(MaterialError::ExtraKing { side: Color::Black, .. })
        ));
    }

    #[test]
    fn successor_examples() {
        assert_eq!(names(sig("KQvK").capture_successor_signatures()), vec!["KvK"]);
        assert_eq!(names(sig("KQvKR").capture_successor_signatures()), vec!["KQvK", "KvKR"]);
    }

    /// Brute force: apply every removal / substitution to the flat piece
    /// list and collect the resulting multisets.
    fn brute_successors(s: MaterialSignature) -> Vec<String> {
        let pieces = s.pieces();
        let build = |list: &[Piece]| {
            let w: Vec<Kind> = list.iter().filter(|p| p.color == Color::White).map(|p| p.kind).collect();
            let b: Vec<Kind> = list.iter().filter(|p| p.color == Color::Black).map(|p| p.kind).collect();
            MaterialSignature::from_pieces(&w, &b).unwrap()
        };
        let mut out = BTreeSet::new();
        for i in 0..pieces.len() {
            if pieces[i].kind == Kind::King {
                continue;
            }
            let mut list = pieces.clone();
            list.remove(i);
            out.insert(build(&list));
        }
        for i in 0..pieces.len() {
            if pieces[i].kind != Kind::Pawn {
                continue;
            }
            for promo in Kind::PROMOTIONS {
                let mut list = pieces.clone();
                list[i].kind = promo;
                out.insert(build(&list));
                for j in 0..list.len() {
                    if list[j].color != list[i].color && list[j].kind != Kind::King {
                        let mut cap = list.clone();
                        cap.remove(j);
                        out.insert(build(&cap));
                    }
                }
            }
        }
        out.remove(&s);
        names(out)
    }

    #[test]
    fn successors_match_brute_force() {
        assert_eq!(
            names(sig("KPvK").capture_successor_signatures()),
            vec!["KBvK", "KNvK", "KQvK", "KRvK", "KvK"]
        );
        for name in ["KPvK", "KPvKR", "KQvKP", "KPPvKN", "KRBvKQ", "KvK"] {
            let s = sig(name);
            assert_eq!(names(s.capture_successor_signatures()), brute_successors(s), "{name}");
        }
    }

    #[test]
    fn canonicalization() {
        assert_eq!(sig("KQvK").canonicalize_for_storage(), (sig("KQvK"), ColorTransform::IDENTITY));
        assert_eq!(
            sig("KvKQ").canonicalize_for_storage(),
            (
                sig("KQvK"),
                ColorTransform {
                    flip_colors: true,
                    mirror_ranks: false
                }
            )
        );
        assert_eq!(
            sig("KvKP").canonicalize_for_storage(),
            (
                sig("KPvK"),
                ColorTransform {
                    flip_colors: true,
                    mirror_ranks: true
                }
            )
        );
        assert_eq!(sig("KNvKR").canonicalize_for_storage().0, sig("KRvKN"));
        assert!(sig("KQvKQ").is_canonical());
        for s in all_signatures(4).iter().chain(&[sig("KvKRP"), sig("KNvKQ")]) {
            let (canon, tf) = s.canonicalize_for_storage();
            assert_eq!(canon.canonicalize_for_storage(), (canon, ColorTransform::IDENTITY));
            if s.pawn_count() == 0 {
                assert!(!tf.mirror_ranks);
            }
        }
    }

    #[test]
    fn chain_order_examples() {
        assert_eq!(names(chain_order(&[sig("KQvK")])), vec!["KQvK", "KvK"]);
        assert_eq!(chain_order(&[sig("KQvK")])[0], sig("KvK"));

        let order = chain_order(&[sig("KPvK")]);
        assert_eq!(order.len(), 6);
        assert_eq!(order[0], sig("KvK"));
        assert_eq!(*order.last().unwrap(), sig("KPvK"));

        let order = chain_order(&[sig("KQvKR")]);
        assert_eq!(names(order.clone()), vec!["KQvK", "KQvKR", "KRvK", "KvK"]);
        assert_eq!(order[0], sig("KvK"));
    }

    #[test]
    fn chain_order_is_topological() {
        let order = chain_order(&[sig("KQvKR"), sig("KPPvKN"), sig("KQQvK"), sig("KRvKP")]);
        for (i, s) in order.iter().enumerate() {
            for dep in s.capture_successor_signatures() {
                let canon = dep.canonicalize_for_storage().0;
                assert!(
                    (dep.piece_count(), dep.pawn_count()) < (s.piece_count(), s.pawn_count()),
                    "{dep} does not descend from {s}"
                );
                let at = order.iter().position(|x| *x == canon).expect("closure");
                assert!(at < i, "{dep} must precede {s}");
            }
        }
    }

    #[test]
    fn enumerates_small_signatures() {
        let three: Vec<String> = all_signatures(3).iter().map(|s| s.to_string()).collect();
        assert_eq!(three, vec!["KvK", "KQvK", "KRvK", "KBvK", "KNvK", "KPvK"]);
        let four = all_signatures(4);
        assert!(four.iter().all(|s| s.is_canonical() && !s.has_two_sided_pawns()));
        assert!(four.contains(&sig("KRvKN")));
        assert!(!four.contains(&sig("KPvKP")));
        // 1 + 5 + 15 (two pieces, one side) + 14 (one each, minus KPvKP, deduplicated)
        assert_eq!(four.len(), 1 + 5 + 15 + 14);
    }
}
