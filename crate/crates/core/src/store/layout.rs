use crate::transport::NodeId;

/// Placement of node-tier redundancy over the nodes of a process group.
///
/// Partners form a ring in ascending node order. Parity groups are runs of
/// `group_size` consecutive nodes; a trailing group of one is folded into the
/// previous group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeLayout {
    nodes: Vec<NodeId>,
    group_size: usize,
}

impl NodeLayout {
    pub fn new(nodes: impl IntoIterator<Item = NodeId>, group_size: usize) -> Self {
        let mut nodes: Vec<NodeId> = nodes.into_iter().collect();
        nodes.sort_unstable();
        nodes.dedup();
        NodeLayout { nodes, group_size: group_size.max(2) }
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    /// Ring neighbour of `node`, or `None` with fewer than two nodes.
    pub fn partner(&self, node: NodeId) -> Option<NodeId> {
        if self.nodes.len() < 2 {
            return None;
        }
        let i = self.nodes.iter().position(|&n| n == node)?;
        Some(self.nodes[(i + 1) % self.nodes.len()])
    }

    pub fn xor_groups(&self) -> Vec<Vec<NodeId>> {
        if self.nodes.len() < 2 {
            return Vec::new();
        }
        let mut groups: Vec<Vec<NodeId>> =
            self.nodes.chunks(self.group_size).map(|c| c.to_vec()).collect();
        if groups.len() > 1 && groups.last().is_some_and(|g| g.len() == 1) {
            let tail = groups.pop().unwrap();
            groups.last_mut().unwrap().extend(tail);
        }
        groups
    }

    pub fn group_of(&self, node: NodeId) -> Option<(usize, Vec<NodeId>)> {
        self.xor_groups().into_iter().enumerate().find(|(_, g)| g.contains(&node))
    }

    /// Parity holder of `group` for `version`; rotates with the version.
    pub fn holder(group: &[NodeId], version: u64) -> NodeId {
        group[(version % group.len() as u64) as usize]
    }

    /// Node that keeps a plain copy of the holder's own files.
    pub fn holder_backup(group: &[NodeId], version: u64) -> NodeId {
        group[((version + 1) % group.len() as u64) as usize]
    }
}
