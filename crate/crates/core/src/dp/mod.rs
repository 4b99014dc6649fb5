//! Finite-horizon backward induction over count states.

mod cache;
mod indexer;
mod rule;
mod solver;

pub use cache::{read_table, write_table, TableCache};
pub use indexer::StateIndexer;
pub use rule::{argmax_set, choice_probabilities, ChoiceRule};
pub use solver::{solve_backward, SolveSpec, ValueTable};

pub use crate::combinatorics::{count_states, total_action_values, total_states};

use crate::beliefs::CountState;
use crate::error::Result;
use crate::scalar::Real;

/// Integrated action values `V(k | counts)` for every airline.
pub fn action_values<S: Real>(table: &ValueTable<S>, counts: &CountState) -> Result<Vec<S>> {
    table.action_values(counts).map(<[S]>::to_vec)
}
