use gomoku_core::engine::{Board, Player, Position};
use gomoku_core::evaluation::{EvalError, EvaluatorBackend, HeuristicBackend, MoveRequest, Score, WinRates};
use gomoku_core::move_select::{choose_move, legal_region, score_parallel};
use proptest::prelude::*;

fn board_from(size: usize, picks: &[usize]) -> Board {
    let mut board = Board::new(size).unwrap();
    for &k in picks {
        let legal = board.legal_positions();
        if legal.is_empty() {
            break;
        }
        let next = board.apply_move(legal[k % legal.len()], board.side_to_move()).unwrap();
        if !next.status().is_over() {
            board = next;
        }
    }
    board
}

fn arb_board() -> impl Strategy<Value = Board> {
    (5usize..=15, prop::collection::vec(any::<usize>(), 0..230)).prop_map(|(s, p)| board_from(s, &p))
}

/// Heuristic scores multiplied by a positive factor (capped by the score range).
struct Scaled(f64);

impl EvaluatorBackend for Scaled {
    fn tag(&self) -> &str {
        "scaled"
    }
    fn propose_move(&self, req: &MoveRequest<'_>) -> Result<Position, EvalError> {
        HeuristicBackend::default().propose_move(req)
    }
    fn score_position(&self, b: &Board, p: Position, pl: Player) -> Result<Score, EvalError> {
        let s = HeuristicBackend::default().score_position(b, p, pl)?.value();
        Score::new(s * self.0)
    }
    fn estimate_win_rates(&self, _b: &Board, _m: Player) -> Result<WinRates, EvalError> {
        Ok(WinRates::from_mover(0.5))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn region_is_minimal_and_legal(board in arb_board(), r in 0usize..20, c in 0usize..20) {
        prop_assume!(!board.is_full());
        let region = legal_region(&board, Position::new(r, c)).unwrap();
        let center = region.center;
        for p in &region.positions {
            prop_assert!(board.is_empty_at(*p));
            prop_assert!(p.chebyshev(center) <= region.order);
        }
        let expected: Vec<Position> = board
            .legal_positions()
            .into_iter()
            .filter(|p| p.chebyshev(center) <= region.order)
            .collect();
        prop_assert_eq!(&region.positions, &expected);
        let closer = region.order > 1
            && board.legal_positions().into_iter().any(|p| p.chebyshev(center) < region.order);
        prop_assert!(!closer);
    }

    #[test]
    fn workers_do_not_change_result(board in arb_board(), workers in 2usize..9) {
        prop_assume!(!board.is_full());
        let legal = board.legal_positions();
        let cand: Vec<Position> = legal.iter().copied().take(12).collect();
        let backend = HeuristicBackend::default();
        let player = board.side_to_move();
        let one = score_parallel(&board, &cand, &backend, player, 1).unwrap();
        let many = score_parallel(&board, &cand, &backend, player, workers).unwrap();
        prop_assert_eq!(one, many);
    }

    #[test]
    fn positive_scaling_keeps_choice(board in arb_board(), r in 0usize..15, c in 0usize..15, k in 0.01f64..1.0) {
        prop_assume!(!board.is_full());
        let player = board.side_to_move();
        let (a, _) = choose_move(&board, Position::new(r, c), &Scaled(1.0), player, 2).unwrap();
        let (b, _) = choose_move(&board, Position::new(r, c), &Scaled(k), player, 2).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn chosen_is_head_of_sorted_candidates(board in arb_board(), r in 0usize..15, c in 0usize..15) {
        prop_assume!(!board.is_full());
        let player = board.side_to_move();
        let (pos, scored) = choose_move(&board, Position::new(r, c), &HeuristicBackend::default(), player, 3).unwrap();
        prop_assert!(board.is_empty_at(pos));
        prop_assert_eq!(scored[0].position, pos);
        for w in scored.windows(2) {
            let (a, b) = (w[0].score.value(), w[1].score.value());
            prop_assert!(a > b || (a == b && board.index(w[0].position) < board.index(w[1].position)));
        }
    }
}
