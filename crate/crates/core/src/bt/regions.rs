//! Region calculus: per-node Success/Failure/Running regions, influence
//! regions, operating regions and convergence sets.

use fixedbitset::FixedBitSet;

use super::predicate::{Predicate, Valuation};
use super::tree::{BehaviorTree, NodeId, NodeKind};
use super::BtError;

/// Symbolic regions of every node of one tree.
///
/// Fields are public so hand-built (possibly inconsistent) region maps can be
/// fed to [`validate_partition`].
#[derive(Clone, Debug)]
pub struct RegionMap {
    pub success: Vec<Predicate>,
    pub failure: Vec<Predicate>,
    pub running: Vec<Predicate>,
    pub influence: Vec<Predicate>,
    pub operating: Vec<Predicate>,
}

impl RegionMap {
    pub fn compute(tree: &BehaviorTree) -> Self {
        let n = tree.len();
        let mut success = vec![Predicate::False; n];
        let mut failure = vec![Predicate::False; n];
        let mut running = vec![Predicate::False; n];
        // children have larger pre-order ids than their parent
        for id in (0..n).rev() {
            let (s, f, r) = status_regions(tree, id, &success, &failure, &running);
            success[id] = s;
            failure[id] = f;
            running[id] = r;
        }

        let mut influence = vec![Predicate::True; n];
        for id in 1..n {
            let parent = tree.parent(id).expect("non-root has a parent");
            influence[id] = match tree.left_sibling(id) {
                None => influence[parent].clone(),
                Some(b) => match tree.kind(parent).unwrap() {
                    NodeKind::Sequence => Predicate::and([influence[b].clone(), success[b].clone()]),
                    NodeKind::Fallback => Predicate::and([influence[b].clone(), failure[b].clone()]),
                    _ => unreachable!("leaves have no children"),
                },
            };
        }
        let operating = (0..n)
            .map(|i| Predicate::and([influence[i].clone(), running[i].clone()]))
            .collect();
        RegionMap { success, failure, running, influence, operating }
    }
}

fn status_regions(
    tree: &BehaviorTree,
    id: NodeId,
    success: &[Predicate],
    failure: &[Predicate],
    running: &[Predicate],
) -> (Predicate, Predicate, Predicate) {
    match tree.kind(id).unwrap() {
        NodeKind::Condition { atom } => (
            Predicate::atom(*atom),
            Predicate::not(Predicate::atom(*atom)),
            Predicate::False,
        ),
        NodeKind::Behavior { success: s, failure: f, .. } => (
            s.clone(),
            Predicate::and([Predicate::not(s.clone()), f.clone()]),
            Predicate::and([Predicate::not(s.clone()), Predicate::not(f.clone())]),
        ),
        NodeKind::Sequence | NodeKind::Fallback => {
            let is_seq = matches!(tree.kind(id).unwrap(), NodeKind::Sequence);
            // `pass` is the status that hands control to the next child
            let (pass, stop): (&[Predicate], &[Predicate]) =
                if is_seq { (success, failure) } else { (failure, success) };
            let children = tree.children(id);
            let mut prefix = Predicate::True;
            let mut stops = Vec::new();
            let mut runs = Vec::new();
            for &c in children {
                stops.push(Predicate::and([prefix.clone(), stop[c].clone()]));
                runs.push(Predicate::and([prefix.clone(), running[c].clone()]));
                prefix = Predicate::and([prefix, pass[c].clone()]);
            }
            let stopped = Predicate::or(stops);
            let run = Predicate::or(runs);
            if is_seq {
                (prefix, stopped, run)
            } else {
                (stopped, prefix, run)
            }
        }
    }
}

/// Intended progression order: `leaves[k]` has rank `k + 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LeafOrdering {
    leaves: Vec<NodeId>,
}

impl LeafOrdering {
    /// Checks that `leaves` lists every behavior leaf of `tree` exactly once.
    pub fn new(tree: &BehaviorTree, leaves: Vec<NodeId>) -> Result<Self, BtError> {
        let mut expected = tree.behaviors();
        let mut given = leaves.clone();
        expected.sort_unstable();
        given.sort_unstable();
        if expected != given {
            return Err(BtError::InvalidOrdering(format!(
                "ordering {leaves:?} is not a permutation of behavior leaves {expected:?}"
            )));
        }
        Ok(LeafOrdering { leaves })
    }

    /// Ordering from behavior labels.
    pub fn from_labels<S: AsRef<str>>(tree: &BehaviorTree, labels: &[S]) -> Result<Self, BtError> {
        let ids = labels
            .iter()
            .map(|l| {
                tree.find_label(l.as_ref())
                    .ok_or_else(|| BtError::UnknownLabel(l.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(tree, ids)
    }

    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    /// 1-based rank of a leaf.
    pub fn rank_of(&self, leaf: NodeId) -> Option<usize> {
        self.leaves.iter().position(|&l| l == leaf).map(|p| p + 1)
    }

    pub fn leaf_at(&self, rank: usize) -> Option<NodeId> {
        rank.checked_sub(1).and_then(|k| self.leaves.get(k).copied())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum OrderingPattern {
    BackwardChained,
    ImplicitSequence,
}

impl std::str::FromStr for OrderingPattern {
    type Err = BtError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "backward_chained" | "backward-chained" => Ok(OrderingPattern::BackwardChained),
            "implicit_sequence" | "implicit-sequence" => Ok(OrderingPattern::ImplicitSequence),
            other => Err(BtError::InvalidOrdering(format!("unknown pattern `{other}`"))),
        }
    }
}

/// Derives the progression order for the two recognized design patterns.
///
/// Trees that match neither pattern need an explicit ordering.
pub fn derive_ordering(
    tree: &BehaviorTree,
    pattern: OrderingPattern,
) -> Result<LeafOrdering, BtError> {
    match pattern {
        OrderingPattern::BackwardChained => {
            // postcondition-precondition-action shape: every fallback is
            // `(fb (cond post) subtree)`
            for id in 0..tree.len() {
                if matches!(tree.kind(id)?, NodeKind::Fallback) {
                    let ch = tree.children(id);
                    let ok = ch.len() == 2 && matches!(tree.kind(ch[0])?, NodeKind::Condition { .. });
                    if !ok {
                        return Err(BtError::PatternMismatch(format!(
                            "fallback {} is not a postcondition/subtree pair",
                            tree.node_name(id)
                        )));
                    }
                }
            }
            LeafOrdering::new(tree, tree.behaviors())
        }
        OrderingPattern::ImplicitSequence => {
            let behaviors = tree.behaviors();
            if behaviors.len() == 1 {
                return LeafOrdering::new(tree, behaviors);
            }
            let mut found = None;
            for id in 0..tree.len() {
                if !matches!(tree.kind(id)?, NodeKind::Fallback) {
                    continue;
                }
                if let Some(subtrees) = implicit_sequence_subtrees(tree, id) {
                    let leaves: Vec<NodeId> = subtrees.iter().rev().copied().collect();
                    let mut sorted = leaves.clone();
                    sorted.sort_unstable();
                    if sorted == behaviors {
                        if found.is_some() {
                            return Err(BtError::PatternMismatch(
                                "more than one implicit-sequence fallback".into(),
                            ));
                        }
                        found = Some(leaves);
                    }
                }
            }
            match found {
                Some(leaves) => LeafOrdering::new(tree, leaves),
                None => Err(BtError::PatternMismatch(
                    "no fallback whose children are the tree's behavior subtrees".into(),
                )),
            }
        }
    }
}

/// For a fallback of the form `(fb [cond] sub_1 ... sub_k)` where each `sub`
/// is a behavior or a sequence of conditions ending in one behavior, returns
/// the behavior of each sub in left-to-right order.
fn implicit_sequence_subtrees(tree: &BehaviorTree, fb: NodeId) -> Option<Vec<NodeId>> {
    let children = tree.children(fb);
    let mut out = Vec::new();
    for (k, &c) in children.iter().enumerate() {
        match tree.kind(c).ok()? {
            NodeKind::Condition { .. } if k == 0 => {}
            NodeKind::Behavior { .. } => out.push(c),
            NodeKind::Sequence => {
                let seq = tree.children(c);
                let (last, init) = seq.split_last()?;
                if !tree.is_behavior(*last)
                    || !init
                        .iter()
                        .all(|&x| matches!(tree.kind(x), Ok(NodeKind::Condition { .. })))
                {
                    return None;
                }
                out.push(*last);
            }
            _ => return None,
        }
    }
    if out.is_empty() {
        None
    } else {
        Some(out)
    }
}

/// Region queries bound to one tree.
#[derive(Clone, Debug)]
pub struct Regions<'t> {
    tree: &'t BehaviorTree,
    map: RegionMap,
}

impl<'t> Regions<'t> {
    pub fn new(tree: &'t BehaviorTree) -> Self {
        Regions { tree, map: RegionMap::compute(tree) }
    }

    pub fn tree(&self) -> &'t BehaviorTree {
        self.tree
    }

    pub fn map(&self) -> &RegionMap {
        &self.map
    }

    fn check(&self, id: NodeId) -> Result<(), BtError> {
        if self.tree.contains(id) {
            Ok(())
        } else {
            Err(BtError::UnknownNode(id))
        }
    }

    pub fn influence(&self, id: NodeId) -> Result<Predicate, BtError> {
        self.check(id)?;
        Ok(self.map.influence[id].clone())
    }

    pub fn operating(&self, id: NodeId) -> Result<Predicate, BtError> {
        self.check(id)?;
        Ok(self.map.operating[id].clone())
    }

    pub fn success(&self, id: NodeId) -> Result<Predicate, BtError> {
        self.check(id)?;
        Ok(self.map.success[id].clone())
    }

    /// The root's Success region.
    pub fn root_success(&self) -> Predicate {
        self.map.success[self.tree.root()].clone()
    }

    /// `C_rank`: operating regions of this and all later ranks, plus the
    /// root Success region.
    pub fn convergence_set(&self, ordering: &LeafOrdering, rank: usize) -> Result<Predicate, BtError> {
        if rank == 0 || rank > ordering.len() {
            return Err(BtError::RankOutOfRange { rank, len: ordering.len() });
        }
        let mut parts: Vec<Predicate> = ordering.leaves()[rank - 1..]
            .iter()
            .map(|&l| self.map.operating[l].clone())
            .collect();
        parts.push(self.root_success());
        Ok(Predicate::or(parts))
    }

    /// Like [`Regions::convergence_set`], but `rank = len + 1` yields the root
    /// Success region (the region every rank hands over to at the end).
    pub fn progress_set(&self, ordering: &LeafOrdering, rank: usize) -> Result<Predicate, BtError> {
        if rank == ordering.len() + 1 {
            Ok(self.root_success())
        } else {
            self.convergence_set(ordering, rank)
        }
    }
}

pub fn influence_region(tree: &BehaviorTree, id: NodeId) -> Result<Predicate, BtError> {
    Regions::new(tree).influence(id)
}

pub fn operating_region(tree: &BehaviorTree, id: NodeId) -> Result<Predicate, BtError> {
    Regions::new(tree).operating(id)
}

pub fn convergence_set(
    tree: &BehaviorTree,
    ordering: &LeafOrdering,
    rank: usize,
) -> Result<Predicate, BtError> {
    Regions::new(tree).convergence_set(ordering, rank)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionViolation {
    pub parent: NodeId,
    /// Index into the enumerated state list.
    pub state: usize,
    /// Children whose operating region contains the state.
    pub containing: Vec<NodeId>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PartitionReport {
    pub checked_states: usize,
    pub violations: Vec<PartitionViolation>,
}

impl PartitionReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks, for every composite node and every state in its operating
/// region, that exactly one child's operating region contains the state.
pub fn validate_partition(
    tree: &BehaviorTree,
    map: &RegionMap,
    states: &[Valuation],
) -> PartitionReport {
    let mut report = PartitionReport { checked_states: states.len(), violations: Vec::new() };
    for id in 0..tree.len() {
        let children = tree.children(id);
        if children.is_empty() {
            continue;
        }
        let parent_set: FixedBitSet = map.operating[id].materialize(states);
        let child_sets: Vec<FixedBitSet> =
            children.iter().map(|&c| map.operating[c].materialize(states)).collect();
        for k in 0..states.len() {
            let containing: Vec<NodeId> = children
                .iter()
                .zip(&child_sets)
                .filter(|(_, set)| set.contains(k))
                .map(|(&c, _)| c)
                .collect();
            let ok = if parent_set.contains(k) {
                containing.len() == 1
            } else {
                containing.is_empty()
            };
            if !ok {
                report.violations.push(PartitionViolation { parent: id, state: k, containing });
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bt::fixtures::fig1_tree;
    use crate::bt::{AtomTable, BtNode};

    #[test]
    fn root_and_only_child_cover_everything() {
        let atoms = AtomTable::new(["c"]).unwrap();
        let tree = BehaviorTree::new(
            BtNode::sequence(vec![BtNode::behavior("A")]),
            atoms,
        )
        .unwrap();
        assert_eq!(influence_region(&tree, 0).unwrap(), Predicate::True);
        assert_eq!(influence_region(&tree, 1).unwrap(), Predicate::True);
        assert!(matches!(influence_region(&tree, 9), Err(BtError::UnknownNode(9))));
    }

    #[test]
    fn sequence_second_child_inherits_condition() {
        let atoms = AtomTable::new(["c", "d"]).unwrap();
        let tree = BehaviorTree::new(
            BtNode::sequence(vec![BtNode::condition(0), BtNode::behavior("A")]),
            atoms.clone(),
        )
        .unwrap();
        let inf = influence_region(&tree, 2).unwrap();
        let c = Predicate::atom(0);
        for v in atoms.all_valuations() {
            assert_eq!(inf.eval(v), c.eval(v));
        }
    }

    #[test]
    fn condition_operating_region_is_empty() {
        let tree = fig1_tree();
        for id in 0..tree.len() {
            if matches!(tree.kind(id).unwrap(), NodeKind::Condition { .. }) {
                assert_eq!(operating_region(&tree, id).unwrap(), Predicate::False);
            }
        }
        let atoms = AtomTable::new(["c"]).unwrap();
        let single = BehaviorTree::new(BtNode::behavior("A"), atoms).unwrap();
        assert_eq!(operating_region(&single, 0).unwrap(), Predicate::True);
    }

    #[test]
    fn implicit_sequence_order() {
        let tree = fig1_tree();
        let ord = derive_ordering(&tree, OrderingPattern::ImplicitSequence).unwrap();
        let labels: Vec<_> = ord.leaves().iter().map(|&l| tree.label_of(l).unwrap()).collect();
        assert_eq!(labels, ["MoveToItem", "Grasp", "MoveToGoal", "Place"]);
        assert!(matches!(
            derive_ordering(&tree, OrderingPattern::BackwardChained),
            Err(BtError::PatternMismatch(_))
        ));
    }

    #[test]
    fn backward_chained_is_document_order() {
        let atoms = AtomTable::new(["c"]).unwrap();
        let tree = BehaviorTree::new(
            BtNode::sequence(vec![BtNode::behavior("A"), BtNode::behavior("B"), BtNode::behavior("C")]),
            atoms.clone(),
        )
        .unwrap();
        let ord = derive_ordering(&tree, OrderingPattern::BackwardChained).unwrap();
        assert_eq!(ord.leaves(), &[1, 2, 3]);
        let single = BehaviorTree::new(BtNode::behavior("A"), atoms).unwrap();
        for p in [OrderingPattern::BackwardChained, OrderingPattern::ImplicitSequence] {
            assert_eq!(derive_ordering(&single, p).unwrap().leaves(), &[0]);
        }
    }

    #[test]
    fn convergence_rank_bounds() {
        let tree = fig1_tree();
        let ord = derive_ordering(&tree, OrderingPattern::ImplicitSequence).unwrap();
        let regions = Regions::new(&tree);
        assert!(matches!(
            regions.convergence_set(&ord, 0),
            Err(BtError::RankOutOfRange { .. })
        ));
        assert!(regions.convergence_set(&ord, 5).is_err());
        assert_eq!(regions.progress_set(&ord, 5).unwrap(), regions.root_success());
    }

    #[test]
    fn single_child_composite_matches_parent() {
        let atoms = AtomTable::new(["c"]).unwrap();
        let tree = BehaviorTree::new(
            BtNode::fallback(vec![BtNode::behavior_with(
                "A",
                "A",
                Predicate::atom(0),
                Predicate::False,
            )]),
            atoms.clone(),
        )
        .unwrap();
        let map = RegionMap::compute(&tree);
        for v in atoms.all_valuations() {
            assert_eq!(map.operating[0].eval(v), map.operating[1].eval(v));
        }
        assert!(validate_partition(&tree, &map, &atoms.all_valuations()).is_valid());
    }

    #[test]
    fn overlapping_regions_are_reported() {
        let tree = fig1_tree();
        let mut map = RegionMap::compute(&tree);
        let grasp = tree.find_label("Grasp").unwrap();
        let place = tree.find_label("Place").unwrap();
        // make Place claim Grasp's states as well
        map.operating[place] = Predicate::or([map.operating[place].clone(), map.operating[grasp].clone()]);
        let report = validate_partition(&tree, &map, &tree.atoms().all_valuations());
        assert!(!report.is_valid());
    }
}
