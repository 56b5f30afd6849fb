use super::predicate::{AtomTable, Predicate, Valuation};
use super::BtError;

/// Identifier of a node inside a [`BehaviorTree`]: its pre-order index.
pub type NodeId = usize;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum ReturnStatus {
    Success,
    Failure,
    Running,
}

/// Node kinds. Behaviors carry their own success/failure predicates; they
/// return Running everywhere else.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Sequence,
    Fallback,
    Condition {
        atom: usize,
    },
    Behavior {
        controller: String,
        label: String,
        success: Predicate,
        failure: Predicate,
    },
}

/// Nested tree description, as written in tree files and used for
/// construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BtNode {
    pub kind: NodeKind,
    pub children: Vec<BtNode>,
}

impl BtNode {
    pub fn sequence(children: Vec<BtNode>) -> Self {
        BtNode { kind: NodeKind::Sequence, children }
    }

    pub fn fallback(children: Vec<BtNode>) -> Self {
        BtNode { kind: NodeKind::Fallback, children }
    }

    pub fn condition(atom: usize) -> Self {
        BtNode { kind: NodeKind::Condition { atom }, children: Vec::new() }
    }

    /// Behavior running everywhere, labelled by its controller name.
    pub fn behavior(controller: &str) -> Self {
        Self::behavior_with(controller, controller, Predicate::False, Predicate::False)
    }

    pub fn behavior_with(
        controller: &str,
        label: &str,
        success: Predicate,
        failure: Predicate,
    ) -> Self {
        BtNode {
            kind: NodeKind::Behavior {
                controller: controller.to_string(),
                label: label.to_string(),
                success,
                failure,
            },
            children: Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ArenaNode {
    pub kind: NodeKind,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
}

/// A validated behavior tree with pre-order node ids.
///
/// Immutable after construction, so it can be shared freely across threads.
#[derive(Clone, Debug)]
pub struct BehaviorTree {
    pub(crate) nodes: Vec<ArenaNode>,
    source: BtNode,
    atoms: AtomTable,
}

impl BehaviorTree {
    pub fn new(root: BtNode, atoms: AtomTable) -> Result<Self, BtError> {
        let mut nodes = Vec::new();
        flatten(&root, None, &mut nodes, &atoms)?;
        let mut labels: Vec<&str> = Vec::new();
        for node in &nodes {
            if let NodeKind::Behavior { label, .. } = &node.kind {
                if labels.contains(&label.as_str()) {
                    return Err(BtError::DuplicateLabel(label.clone()));
                }
                labels.push(label);
            }
        }
        Ok(BehaviorTree { nodes, source: root, atoms })
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn source(&self) -> &BtNode {
        &self.source
    }

    pub fn atoms(&self) -> &AtomTable {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id < self.nodes.len()
    }

    pub fn kind(&self, id: NodeId) -> Result<&NodeKind, BtError> {
        self.nodes
            .get(id)
            .map(|n| &n.kind)
            .ok_or(BtError::UnknownNode(id))
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes.get(id).and_then(|n| n.parent)
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id].children
    }

    /// Nearest sibling to the left of `id`.
    pub fn left_sibling(&self, id: NodeId) -> Option<NodeId> {
        let parent = self.parent(id)?;
        let siblings = &self.nodes[parent].children;
        let pos = siblings.iter().position(|&c| c == id)?;
        pos.checked_sub(1).map(|p| siblings[p])
    }

    pub fn is_behavior(&self, id: NodeId) -> bool {
        matches!(self.nodes.get(id).map(|n| &n.kind), Some(NodeKind::Behavior { .. }))
    }

    /// Behavior leaves in depth-first, left-first order.
    pub fn behaviors(&self) -> Vec<NodeId> {
        (0..self.nodes.len()).filter(|&i| self.is_behavior(i)).collect()
    }

    pub fn controller_of(&self, id: NodeId) -> Option<&str> {
        match &self.nodes.get(id)?.kind {
            NodeKind::Behavior { controller, .. } => Some(controller),
            _ => None,
        }
    }

    pub fn label_of(&self, id: NodeId) -> Option<&str> {
        match &self.nodes.get(id)?.kind {
            NodeKind::Behavior { label, .. } => Some(label),
            _ => None,
        }
    }

    pub fn find_label(&self, label: &str) -> Option<NodeId> {
        (0..self.nodes.len()).find(|&i| self.label_of(i) == Some(label))
    }

    /// Human-readable node name: the label for behaviors, the atom name for
    /// conditions, `kind#id` for composites.
    pub fn node_name(&self, id: NodeId) -> String {
        match &self.nodes[id].kind {
            NodeKind::Behavior { label, .. } => label.clone(),
            NodeKind::Condition { atom } => self.atoms.name(*atom).to_string(),
            NodeKind::Sequence => format!("seq#{id}"),
            NodeKind::Fallback => format!("fb#{id}"),
        }
    }

    /// Distinct controller names, in order of first appearance.
    pub fn controllers(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for id in self.behaviors() {
            let c = self.controller_of(id).unwrap();
            if !out.iter().any(|x| x == c) {
                out.push(c.to_string());
            }
        }
        out
    }

    /// Ticks the tree once. Memoryless: every condition is recomputed.
    pub fn tick(&self, v: Valuation) -> (ReturnStatus, Option<NodeId>) {
        self.tick_node(self.root(), v)
    }

    pub fn tick_node(&self, id: NodeId, v: Valuation) -> (ReturnStatus, Option<NodeId>) {
        let node = &self.nodes[id];
        match &node.kind {
            NodeKind::Condition { atom } => {
                if v >> atom & 1 == 1 {
                    (ReturnStatus::Success, None)
                } else {
                    (ReturnStatus::Failure, None)
                }
            }
            NodeKind::Behavior { success, failure, .. } => {
                if success.eval(v) {
                    (ReturnStatus::Success, None)
                } else if failure.eval(v) {
                    (ReturnStatus::Failure, None)
                } else {
                    (ReturnStatus::Running, Some(id))
                }
            }
            NodeKind::Sequence => {
                for &c in &node.children {
                    let r = self.tick_node(c, v);
                    if r.0 != ReturnStatus::Success {
                        return r;
                    }
                }
                (ReturnStatus::Success, None)
            }
            NodeKind::Fallback => {
                for &c in &node.children {
                    let r = self.tick_node(c, v);
                    if r.0 != ReturnStatus::Failure {
                        return r;
                    }
                }
                (ReturnStatus::Failure, None)
            }
        }
    }

    /// The Running behavior selected by the root, if any.
    pub fn active_behavior(&self, v: Valuation) -> Option<NodeId> {
        self.tick(v).1
    }
}

fn flatten(
    node: &BtNode,
    parent: Option<NodeId>,
    out: &mut Vec<ArenaNode>,
    atoms: &AtomTable,
) -> Result<NodeId, BtError> {
    let id = out.len();
    match &node.kind {
        NodeKind::Sequence | NodeKind::Fallback => {
            if node.children.is_empty() {
                return Err(BtError::EmptyComposite(id));
            }
        }
        NodeKind::Condition { atom } => {
            if !node.children.is_empty() {
                return Err(BtError::LeafWithChildren(id));
            }
            if *atom >= atoms.len() {
                return Err(BtError::AtomOutOfRange(*atom));
            }
        }
        NodeKind::Behavior { success, failure, .. } => {
            if !node.children.is_empty() {
                return Err(BtError::LeafWithChildren(id));
            }
            for p in [success, failure] {
                if let Some(a) = p.max_atom() {
                    if a >= atoms.len() {
                        return Err(BtError::AtomOutOfRange(a));
                    }
                }
            }
        }
    }
    out.push(ArenaNode { kind: node.kind.clone(), parent, children: Vec::new() });
    for child in &node.children {
        let cid = flatten(child, Some(id), out, atoms)?;
        out[id].children.push(cid);
    }
    Ok(id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bt::fixtures::{fig1_tree, FIG1_ATOMS};

    #[test]
    fn single_running_leaf() {
        let atoms = AtomTable::new(["x"]).unwrap();
        let tree = BehaviorTree::new(BtNode::behavior("Only"), atoms).unwrap();
        for v in [0, 1] {
            assert_eq!(tree.tick(v), (ReturnStatus::Running, Some(0)));
        }
    }

    #[test]
    fn unsafe_state_fails_whole_tree() {
        let tree = fig1_tree();
        let v = tree
            .atoms()
            .valuation(&[("Safe", false), ("NearItem", true), ("HaveItem", true)])
            .unwrap();
        assert_eq!(tree.tick(v), (ReturnStatus::Failure, None));
    }

    #[test]
    fn grasp_is_active_near_item() {
        let tree = fig1_tree();
        let v = tree
            .atoms()
            .valuation(&[
                ("Safe", true),
                ("ItemPlaced", false),
                ("NearItem", true),
                ("HaveItem", false),
            ])
            .unwrap();
        let (status, active) = tree.tick(v);
        assert_eq!(status, ReturnStatus::Running);
        assert_eq!(tree.label_of(active.unwrap()), Some("Grasp"));
        assert_eq!(FIG1_ATOMS.len(), 5);
    }

    #[test]
    fn empty_composite_rejected() {
        let atoms = AtomTable::new(["x"]).unwrap();
        let err = BehaviorTree::new(BtNode::sequence(vec![]), atoms).unwrap_err();
        assert!(matches!(err, BtError::EmptyComposite(0)));
    }

    #[test]
    fn duplicate_labels_rejected() {
        let atoms = AtomTable::new(["x"]).unwrap();
        let root = BtNode::sequence(vec![BtNode::behavior("A"), BtNode::behavior("A")]);
        assert!(matches!(
            BehaviorTree::new(root, atoms),
            Err(BtError::DuplicateLabel(_))
        ));
    }
}
