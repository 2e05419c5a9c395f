//! Reference computations written independently of the library code.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use telewatch_core::verify::{apply_feedback, choose_action, Action, QHyper, QTable, Severity, Verdict};

/// `mean + k * population std`, two-pass.
pub fn mean_k_sigma(errors: &[f64], k: f64) -> f64 {
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    mean + k * var.sqrt()
}

/// The 101-error fixture: a hundred zeros and one 100.
pub fn hundred_zeros_and_one() -> Vec<f64> {
    let mut e = vec![0.0; 100];
    e.push(100.0);
    e
}

/// Operator behaviour used by the learning checks: agree iff the proposed
/// action is the one listed for the state.
pub const ORACLE_POLICY: [(Severity, Action); 3] = [
    (Severity::Low, Action::Reject),
    (Severity::Medium, Action::RequestInfo),
    (Severity::High, Action::Confirm),
];

pub fn oracle_action(s: Severity) -> Action {
    ORACLE_POLICY.iter().find(|(state, _)| *state == s).unwrap().1
}

/// Runs `episodes` one-step verifications with uniformly drawn states.
pub fn train_against_oracle(seed: u64, episodes: usize) -> QTable {
    let hyper = QHyper::default();
    let mut table = QTable::new(&hyper);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..episodes {
        let state = Severity::ALL[rng.random_range(0..3)];
        let action = choose_action(&table, state, &mut rng);
        let verdict = if action == oracle_action(state) { Verdict::Agree } else { Verdict::Disagree };
        apply_feedback(&mut table, state, action, verdict, &hyper);
    }
    table
}

pub fn greedy_matches_oracle(table: &QTable) -> bool {
    ORACLE_POLICY.iter().all(|&(s, a)| table.greedy(s) == a)
}

/// Distance from the fixed point after `n` Agree verdicts on one cell.
pub fn agree_fixed_point_gap(n: usize) -> f64 {
    let hyper = QHyper::default();
    let mut table = QTable::new(&hyper);
    for _ in 0..n {
        apply_feedback(&mut table, Severity::High, Action::Confirm, Verdict::Agree, &hyper);
    }
    (table.value(Severity::High, Action::Confirm) - 1.0).abs()
}

/// `(1 - alpha)^n`: the remaining gap of `Q <- Q + alpha (1 - Q)` from zero.
pub fn geometric_gap(alpha: f64, n: usize) -> f64 {
    (1.0 - alpha).powi(n as i32)
}
