//! Chess rules for tablebase positions: board representation, legality,
//! legal move generation and the terminal / capture / quiet split.
//!
//! Positions carry no castling rights, en-passant square or move counters.

pub mod bitboard;
mod position;
mod types;

pub use position::{MoveList, Position};
pub use types::{Category, Color, Kind, Move, Piece, Square, Terminal};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RulesError {
    #[error("square {0} is already occupied")]
    Occupied(Square),
    #[error("{color:?} has {count} kings, expected exactly one")]
    KingCount { color: Color, count: u32 },
    #[error("bad square {0:?}")]
    BadSquare(String),
    #[error("bad FEN: {0}")]
    BadFen(String),
    #[error("move {0} is not legal in this position")]
    IllegalMove(Move),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sq(s: &str) -> Square {
        s.parse().unwrap()
    }

    fn pos(pieces: &[(&str, char)], stm: Color) -> Position {
        let list: Vec<_> = pieces
            .iter()
            .map(|&(s, c)| (sq(s), Piece::from_fen_char(c).unwrap()))
            .collect();
        Position::from_pieces(&list, stm).unwrap()
    }

    #[test]
    fn adjacent_kings_are_illegal() {
        let p = pos(&[("a1", 'K'), ("b2", 'k')], Color::White);
        assert!(!p.is_legal());
    }

    #[test]
    fn quiet_queen_position_is_legal() {
        let p = pos(&[("b6", 'K'), ("e3", 'Q'), ("a8", 'k')], Color::White);
        assert!(p.is_legal());
    }

    #[test]
    fn pawn_on_last_rank_is_illegal() {
        let p = pos(&[("e1", 'K'), ("e8", 'P'), ("a5", 'k')], Color::White);
        assert!(!p.is_legal());
        let p = pos(&[("e1", 'K'), ("e4", 'p'), ("h1", 'p'), ("a5", 'k')], Color::White);
        assert!(!p.is_legal());
    }

    #[test]
    fn side_not_to_move_in_check_is_illegal() {
        // Black king on the queen's diagonal while White is to move
        let p = pos(&[("a1", 'K'), ("d4", 'Q'), ("h8", 'k'), ("d8", 'r')], Color::White);
        assert!(!p.is_legal());
        assert!(p.with_side_to_move(Color::Black).is_legal());
    }

    #[test]
    fn structural_errors() {
        let k = Piece::new(Color::White, Kind::King);
        let err = Position::from_pieces(&[(sq("a1"), k), (sq("a1"), k)], Color::White).unwrap_err();
        assert_eq!(err, RulesError::Occupied(sq("a1")));
        let err = Position::from_pieces(&[(sq("a1"), k)], Color::White).unwrap_err();
        assert!(matches!(err, RulesError::KingCount { color: Color::Black, count: 0 }));
    }

    #[test]
    fn cornered_king_moves() {
        // c1 covers b1 and b2, leaving only a2
        let p = pos(&[("a1", 'K'), ("c1", 'k')], Color::White);
        let moves: Vec<String> = p.legal_moves().iter().map(|m| m.to_string()).collect();
        assert_eq!(moves, vec!["a1a2"]);
    }

    #[test]
    fn checkmate_has_no_moves() {
        let p = pos(&[("a8", 'k'), ("b6", 'K'), ("b7", 'Q')], Color::Black);
        assert!(p.is_legal());
        assert!(p.legal_moves().is_empty());
        assert!(p.in_check());
        assert_eq!(p.classify(), Category::Terminal(Terminal::Checkmate));
    }

    #[test]
    fn stalemate_classification() {
        let p = pos(&[("a8", 'k'), ("b6", 'Q'), ("e1", 'K')], Color::Black);
        assert!(p.is_legal());
        assert_eq!(p.classify(), Category::Terminal(Terminal::Stalemate));
    }

    #[test]
    fn capture_classification() {
        let p = pos(&[("a1", 'K'), ("d4", 'Q'), ("h7", 'k'), ("d8", 'r')], Color::White);
        assert!(p.is_legal());
        assert_eq!(p.classify(), Category::Capture);
        let take = Move::new(sq("d4"), sq("d8"));
        assert!(p.is_material_changing(take));
        assert!(!p.is_material_changing(Move::new(sq("a1"), sq("a2"))));
        let after = p.apply_move(take).unwrap();
        assert_eq!(after.piece_count(), 3);
        assert_eq!(after.piece_at(sq("d8")), Piece::from_fen_char('Q'));
        assert_eq!(after.side_to_move(), Color::Black);
    }

    #[test]
    fn promotion_fan_out() {
        let p = pos(&[("a1", 'K'), ("e7", 'P'), ("h5", 'k')], Color::White);
        let promos: Vec<Move> = p
            .legal_moves()
            .into_iter()
            .filter(|m| m.from == sq("e7"))
            .collect();
        assert_eq!(promos.len(), 4);
        let kinds: Vec<Kind> = promos.iter().map(|m| m.promotion.unwrap()).collect();
        assert_eq!(kinds, Kind::PROMOTIONS.to_vec());
        let knight = Move::with_promotion(sq("e7"), sq("e8"), Kind::Knight);
        assert!(p.is_material_changing(knight));
        assert_eq!(p.classify(), Category::Capture);
        let after = p.apply_move(knight).unwrap();
        assert_eq!(after.piece_at(sq("e8")), Some(Piece::new(Color::White, Kind::Knight)));
    }

    #[test]
    fn pins_are_respected() {
        // the rook on e2 is pinned against the king by the rook on e8
        let p = pos(&[("e1", 'K'), ("e2", 'R'), ("e8", 'r'), ("a8", 'k')], Color::White);
        for m in p.legal_moves() {
            if m.from == sq("e2") {
                assert_eq!(m.to.file(), 4, "pinned rook left the file: {m}");
            }
        }
        assert!(p.legal_moves().contains(&Move::new(sq("e2"), sq("e8"))));
    }

    #[test]
    fn pawn_pushes_and_blocks() {
        let p = pos(&[("a1", 'K'), ("e2", 'P'), ("h8", 'k')], Color::White);
        let pawn: Vec<String> = p
            .legal_moves()
            .iter()
            .filter(|m| m.from == sq("e2"))
            .map(|m| m.to_string())
            .collect();
        assert_eq!(pawn, vec!["e2e3", "e2e4"]);
        let blocked = pos(&[("a1", 'K'), ("e2", 'P'), ("e3", 'k')], Color::White);
        assert!(blocked.legal_moves().iter().all(|m| m.from != sq("e2")));
        // pawns never capture kings and move diagonally only onto enemy pieces
        let black = pos(&[("a1", 'K'), ("d5", 'p'), ("e4", 'Q'), ("h8", 'k')], Color::Black);
        let pawn: Vec<String> = black
            .legal_moves()
            .iter()
            .filter(|m| m.from == sq("d5"))
            .map(|m| m.to_string())
            .collect();
        assert_eq!(pawn, vec!["d5d4", "d5e4"]);
    }

    #[test]
    fn illegal_move_rejected() {
        let p = pos(&[("a1", 'K'), ("c1", 'k')], Color::White);
        let err = p.apply_move(Move::new(sq("a1"), sq("b1"))).unwrap_err();
        assert!(matches!(err, RulesError::IllegalMove(_)));
    }

    #[test]
    fn fen_round_trip_and_errors() {
        let fen = "k7/1Q6/1K6/8/8/8/8/8 b - -";
        let p = Position::from_fen(fen).unwrap();
        assert_eq!(p.fen(), fen);
        assert_eq!(Position::from_fen("k7/1Q6/1K6/8/8/8/8/8 b").unwrap(), p);
        assert_eq!(Position::from_fen("k7/1Q6/1K6/8/8/8/8/8 b - - 0 1").unwrap(), p);
        assert!(Position::from_fen("k7/1Q6/1K6/8/8/8/8/8 b KQ -").is_err());
        assert!(Position::from_fen("k7/1Q6/1K6/8/8/8/8/8 b - e3").is_err());
        assert!(Position::from_fen("k7/1Q6/1K6/8/8/8/8 b").is_err());
        assert!(Position::from_fen("k7/1Q6/1K6/8/8/8/8/9 w").is_err());
    }

    #[test]
    fn color_swap_preserves_category() {
        let p = pos(&[("a8", 'k'), ("b6", 'K'), ("b7", 'Q')], Color::Black);
        let q = p.swap_colors(false);
        assert_eq!(q.classify(), Category::Terminal(Terminal::Checkmate));
        assert_eq!(q.swap_colors(false), p);
    }
}
