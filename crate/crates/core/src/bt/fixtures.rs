//! Reference trees shared by tests, examples and the CLI.

use super::{parse_tree, AtomTable, BehaviorTree};

/// Atoms of the pick-and-place world, in valuation-bit order.
pub const FIG1_ATOMS: [&str; 5] = ["Safe", "ItemPlaced", "HaveItem", "NearItem", "AtGoal"];

/// Pick-and-place tree: a safety guard over an implicit sequence, with the
/// `Move` controller shared by two behavior nodes.
pub const FIG1_TEXT: &str = "\
(seq
  (cond Safe)
  (fb
    (cond ItemPlaced)
    (seq (cond HaveItem) (cond AtGoal) (act Place))
    (seq (cond HaveItem) (act Move :label MoveToGoal))
    (seq (cond NearItem) (act Grasp))
    (act Move :label MoveToItem)))
";

/// Atoms of the 2D goal-reach world, in valuation-bit order.
pub const GOAL2D_ATOMS: [&str; 3] = ["Safe", "AtGoal", "OnSlope"];

/// Safety guard followed by the goal-reaching behavior.
pub const GOAL2D_TEXT: &str = "\
(seq
  (fb
    (cond Safe)
    (act Safety))
  (act Goal :success AtGoal))
";

pub fn fig1_tree() -> BehaviorTree {
    let atoms = AtomTable::new(FIG1_ATOMS).expect("static atoms");
    let root = parse_tree(FIG1_TEXT, &atoms).expect("static tree");
    BehaviorTree::new(root, atoms).expect("static tree")
}

pub fn goal2d_tree() -> BehaviorTree {
    let atoms = AtomTable::new(GOAL2D_ATOMS).expect("static atoms");
    let root = parse_tree(GOAL2D_TEXT, &atoms).expect("static tree");
    BehaviorTree::new(root, atoms).expect("static tree")
}
