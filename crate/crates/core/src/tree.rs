//! Rooted bifurcating phylogenies: Newick input/output, depth scaling,
//! traversal orders and the shared-path tree variance.
//!
//! Tips are numbered `0..N` in the left-to-right order they appear in the
//! Newick string; internal nodes follow as `N..2N-1` in post-order, so the
//! root is always the last node and ascending node ids form a valid
//! post-order.

use std::collections::HashSet;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{is_finite, lit, Real};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Node<T> {
    pub parent: Option<NodeId>,
    /// Empty for tips, exactly two entries for internal nodes.
    pub children: Vec<NodeId>,
    /// Length of the branch above this node; zero at the root.
    pub branch_length: T,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phylogeny<T> {
    nodes: Vec<Node<T>>,
    n_tips: usize,
}

impl<T: Real> Phylogeny<T> {
    /// Builds a tree from parent links. `parents[root]` must be `None`, tips
    /// must come first (`0..labels.len()`), and internal nodes must be listed
    /// in post-order.
    pub fn from_parts(
        parents: Vec<Option<NodeId>>,
        branch_lengths: Vec<T>,
        labels: Vec<String>,
    ) -> Result<Self> {
        let n_nodes = parents.len();
        let n_tips = labels.len();
        if n_tips == 0 || n_nodes != 2 * n_tips - 1 || branch_lengths.len() != n_nodes {
            return Err(Error::Dimension(format!(
                "{n_nodes} nodes and {} branch lengths for {n_tips} tips",
                branch_lengths.len()
            )));
        }
        let mut nodes: Vec<Node<T>> = parents
            .iter()
            .zip(&branch_lengths)
            .enumerate()
            .map(|(id, (&parent, &len))| Node {
                parent,
                children: Vec::new(),
                branch_length: if parent.is_some() { len } else { T::zero() },
                label: labels.get(id).cloned(),
            })
            .collect();
        for id in 0..n_nodes {
            if let Some(p) = parents[id] {
                if p >= n_nodes || p <= id {
                    return Err(Error::InvalidArgument(format!(
                        "node {id} has parent {p}; parents must follow children"
                    )));
                }
                nodes[p].children.push(id);
            }
        }
        let tree = Phylogeny { nodes, n_tips };
        tree.validate()?;
        Ok(tree)
    }

    fn validate(&self) -> Result<()> {
        let roots = self.nodes.iter().filter(|n| n.parent.is_none()).count();
        if roots != 1 || self.nodes[self.root()].parent.is_some() {
            return Err(Error::InvalidArgument("tree must have a single root".into()));
        }
        let mut seen = HashSet::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if id < self.n_tips {
                if !node.children.is_empty() {
                    return Err(Error::InvalidArgument(format!("tip {id} has children")));
                }
                let label = node.label.as_deref().unwrap_or("");
                if label.is_empty() {
                    return Err(Error::EmptyTaxonLabel);
                }
                if !seen.insert(label) {
                    return Err(Error::DuplicateTaxon(label.to_string()));
                }
            } else if node.children.len() != 2 {
                return Err(Error::NotBifurcating(node.children.len()));
            }
            if node.parent.is_some() {
                let b = node.branch_length;
                if !is_finite(b) || b < T::zero() {
                    return Err(Error::InvalidBranchLength(format!("{b}")));
                }
            }
        }
        Ok(())
    }

    pub fn n_tips(&self) -> usize {
        self.n_tips
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn root(&self) -> NodeId {
        self.nodes.len() - 1
    }

    pub fn node(&self, id: NodeId) -> &Node<T> {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn is_tip(&self, id: NodeId) -> bool {
        id < self.n_tips
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id].parent
    }

    pub fn branch_length(&self, id: NodeId) -> T {
        self.nodes[id].branch_length
    }

    /// Taxon labels indexed by tip.
    pub fn taxa(&self) -> Vec<&str> {
        self.nodes[..self.n_tips]
            .iter()
            .map(|n| n.label.as_deref().unwrap_or(""))
            .collect()
    }

    pub fn tip_index(&self, label: &str) -> Option<usize> {
        self.nodes[..self.n_tips]
            .iter()
            .position(|n| n.label.as_deref() == Some(label))
    }

    /// The other child of `id`'s parent.
    pub fn sibling(&self, id: NodeId) -> Option<NodeId> {
        let p = self.nodes[id].parent?;
        self.nodes[p].children.iter().copied().find(|&c| c != id)
    }

    /// Root-to-node path lengths for every node.
    pub fn depths(&self) -> Vec<T> {
        let mut depth = vec![T::zero(); self.nodes.len()];
        for id in self.preorder() {
            if let Some(p) = self.nodes[id].parent {
                depth[id] = depth[p] + self.nodes[id].branch_length;
            }
        }
        depth
    }

    pub fn max_depth(&self) -> T {
        let depths = self.depths();
        depths[..self.n_tips]
            .iter()
            .copied()
            .fold(T::zero(), |a, b| if b > a { b } else { a })
    }

    /// Children before parents, left subtree first.
    pub fn postorder(&self) -> Vec<NodeId> {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root()];
        while let Some(id) = stack.pop() {
            order.push(id);
            stack.extend(self.nodes[id].children.iter().copied());
        }
        order.reverse();
        order
    }

    /// Parents before children, left child first.
    pub fn preorder(&self) -> Vec<NodeId> {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root()];
        while let Some(id) = stack.pop() {
            order.push(id);
            for &c in self.nodes[id].children.iter().rev() {
                stack.push(c);
            }
        }
        order
    }

    /// Nodes on the path from the root down to `id`, both ends included.
    pub fn path_from_root(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Tip indices below `id`, in left-to-right order.
    pub fn descendant_tips(&self, id: NodeId) -> Vec<usize> {
        let mut tips = Vec::new();
        let mut stack = vec![id];
        while let Some(u) = stack.pop() {
            if self.is_tip(u) {
                tips.push(u);
            }
            for &c in self.nodes[u].children.iter().rev() {
                stack.push(c);
            }
        }
        tips
    }

    pub fn to_newick(&self) -> String {
        let mut out = String::new();
        self.write_subtree(self.root(), &mut out);
        out.push(';');
        out
    }

    fn write_subtree(&self, root: NodeId, out: &mut String) {
        // (node, next child to emit)
        let mut stack = vec![(root, 0usize)];
        while let Some((id, next)) = stack.pop() {
            let node = &self.nodes[id];
            if next < node.children.len() {
                out.push(if next == 0 { '(' } else { ',' });
                stack.push((id, next + 1));
                stack.push((node.children[next], 0));
                continue;
            }
            if !node.children.is_empty() {
                out.push(')');
            }
            if let Some(label) = &node.label {
                write_label(label, out);
            }
            if node.parent.is_some() {
                let _ = write!(out, ":{}", node.branch_length);
            }
        }
    }
}

fn write_label(label: &str, out: &mut String) {
    let plain = !label
        .chars()
        .any(|c| c.is_whitespace() || "()[]':;,".contains(c));
    if plain {
        out.push_str(label);
    } else {
        out.push('\'');
        out.push_str(&label.replace('\'', "''"));
        out.push('\'');
    }
}

struct RawNode {
    children: Vec<usize>,
    label: Option<String>,
    length: Option<String>,
}

/// Parses a single rooted, bifurcating Newick tree terminated by `;`.
///
/// Every non-root edge must carry a branch length. A length on the root edge
/// is accepted and ignored. Bracketed comments are skipped.
pub fn parse_newick<T: Real>(text: &str) -> Result<Phylogeny<T>> {
    let bytes = text.as_bytes();
    let syntax = |position: usize, message: &str| Error::NewickSyntax {
        position,
        message: message.to_string(),
    };

    let mut raw: Vec<RawNode> = Vec::new();
    let mut open: Vec<Vec<usize>> = Vec::new();
    // The most recently completed subtree, still accepting a label/length.
    let mut current: Option<usize> = None;
    let mut label_open = false;
    let mut pos = 0;
    let mut terminated = false;

    while pos < bytes.len() {
        let c = bytes[pos] as char;
        match c {
            c if c.is_whitespace() => pos += 1,
            '[' => {
                let end = text[pos..]
                    .find(']')
                    .ok_or_else(|| syntax(pos, "unterminated comment"))?;
                pos += end + 1;
            }
            '(' => {
                if current.is_some() {
                    return Err(syntax(pos, "unexpected '('"));
                }
                open.push(Vec::new());
                pos += 1;
            }
            ',' => {
                let node = current.take().ok_or_else(|| syntax(pos, "empty subtree"))?;
                open.last_mut()
                    .ok_or_else(|| syntax(pos, "',' outside parentheses"))?
                    .push(node);
                label_open = false;
                pos += 1;
            }
            ')' => {
                let node = current.take().ok_or_else(|| syntax(pos, "empty subtree"))?;
                let mut children = open.pop().ok_or_else(|| syntax(pos, "unbalanced ')'"))?;
                children.push(node);
                raw.push(RawNode {
                    children,
                    label: None,
                    length: None,
                });
                current = Some(raw.len() - 1);
                label_open = true;
                pos += 1;
            }
            ':' => {
                let node = current.ok_or_else(|| syntax(pos, "branch length without a node"))?;
                if raw[node].length.is_some() {
                    return Err(syntax(pos, "second branch length"));
                }
                pos += 1;
                let start = pos;
                while pos < bytes.len() && !"(),:;[".contains(bytes[pos] as char) {
                    pos += 1;
                }
                let number = text[start..pos].trim();
                if number.is_empty() {
                    return Err(syntax(start, "empty branch length"));
                }
                raw[node].length = Some(number.to_string());
                label_open = false;
            }
            ';' => {
                terminated = true;
                pos += 1;
                break;
            }
            _ => {
                let (label, next) = read_label(text, pos).map_err(|m| syntax(pos, &m))?;
                match current {
                    None => {
                        raw.push(RawNode {
                            children: Vec::new(),
                            label: Some(label),
                            length: None,
                        });
                        current = Some(raw.len() - 1);
                        label_open = false;
                    }
                    Some(node) if label_open => {
                        raw[node].label = Some(label);
                        label_open = false;
                    }
                    Some(_) => return Err(syntax(pos, "unexpected label")),
                }
                pos = next;
            }
        }
    }

    if !terminated {
        return Err(syntax(bytes.len(), "missing terminating ';'"));
    }
    if text[pos..].trim().chars().any(|c| !c.is_whitespace()) {
        return Err(syntax(pos, "trailing characters after ';'"));
    }
    if !open.is_empty() {
        return Err(syntax(pos, "unbalanced '('"));
    }
    let root = current.ok_or_else(|| syntax(0, "empty tree"))?;
    build_tree(raw, root)
}

fn read_label(text: &str, start: usize) -> std::result::Result<(String, usize), String> {
    let bytes = text.as_bytes();
    if bytes[start] == b'\'' {
        let mut label = String::new();
        let mut pos = start + 1;
        loop {
            let rest = &text[pos..];
            let q = rest.find('\'').ok_or("unterminated quoted label")?;
            label.push_str(&rest[..q]);
            pos += q + 1;
            if pos < bytes.len() && bytes[pos] == b'\'' {
                label.push('\'');
                pos += 1;
            } else {
                return Ok((label, pos));
            }
        }
    }
    let mut pos = start;
    while pos < bytes.len() {
        let c = bytes[pos] as char;
        if "(),:;[".contains(c) || c.is_whitespace() {
            break;
        }
        pos += 1;
    }
    Ok((text[start..pos].to_string(), pos))
}

fn build_tree<T: Real>(raw: Vec<RawNode>, root: usize) -> Result<Phylogeny<T>> {
    let tips: Vec<usize> = (0..raw.len()).filter(|&i| raw[i].children.is_empty()).collect();
    let internals: Vec<usize> = (0..raw.len()).filter(|&i| !raw[i].children.is_empty()).collect();
    for &i in &internals {
        if raw[i].children.len() != 2 {
            return Err(Error::NotBifurcating(raw[i].children.len()));
        }
    }
    let mut new_id = vec![0usize; raw.len()];
    for (k, &i) in tips.iter().chain(internals.iter()).enumerate() {
        new_id[i] = k;
    }
    let n_nodes = raw.len();
    let mut parents = vec![None; n_nodes];
    let mut lengths = vec![T::zero(); n_nodes];
    for (i, node) in raw.iter().enumerate() {
        for &c in &node.children {
            parents[new_id[c]] = Some(new_id[i]);
        }
    }
    for (i, node) in raw.iter().enumerate() {
        if i == root {
            continue;
        }
        let name = node.label.clone().unwrap_or_else(|| format!("internal node {}", new_id[i]));
        let text = node
            .length
            .as_deref()
            .ok_or_else(|| Error::MissingBranchLength(name.clone()))?;
        let value: f64 = text
            .parse()
            .map_err(|_| Error::InvalidBranchLength(text.to_string()))?;
        lengths[new_id[i]] = lit(value);
    }
    let mut labels = Vec::with_capacity(tips.len());
    for &i in &tips {
        let label = raw[i].label.clone().unwrap_or_default();
        if label.is_empty() {
            return Err(Error::EmptyTaxonLabel);
        }
        labels.push(label);
    }
    let mut tree = Phylogeny::from_parts(parents, lengths, labels)?;
    for &i in &internals {
        tree.nodes[new_id[i]].label = raw[i].label.clone();
    }
    Ok(tree)
}

/// Divides every branch by the maximum root-to-tip depth.
pub fn scale_to_unit_depth<T: Real>(tree: &Phylogeny<T>) -> Result<Phylogeny<T>> {
    let depth = tree.max_depth();
    if depth <= T::zero() {
        return Err(Error::ZeroDepth);
    }
    if depth == T::one() {
        return Ok(tree.clone());
    }
    let mut scaled = tree.clone();
    for node in scaled.nodes.iter_mut() {
        node.branch_length /= depth;
    }
    Ok(scaled)
}

/// Post-order and pre-order node lists.
pub fn traversal_orders<T: Real>(tree: &Phylogeny<T>) -> (Vec<NodeId>, Vec<NodeId>) {
    (tree.postorder(), tree.preorder())
}

/// Across-taxa covariance of Brownian diffusion on a tree with a Gaussian
/// root of precision `kappa0`.
#[derive(Debug, Clone)]
pub struct TreeCovariance<T: Real> {
    tree: Phylogeny<T>,
    /// Shared root-path lengths between tips.
    pub psi: DMatrix<T>,
    pub kappa0: T,
    /// Root mean for the multivariate (LMBD) baseline; empty means zero.
    pub mu0: DVector<T>,
}

impl<T: Real> TreeCovariance<T> {
    pub fn tree(&self) -> &Phylogeny<T> {
        &self.tree
    }

    pub fn n_tips(&self) -> usize {
        self.tree.n_tips()
    }

    pub fn with_root_mean(mut self, mu0: DVector<T>) -> Self {
        self.mu0 = mu0;
        self
    }

    /// Root mean of length `len`, zero when unset.
    pub fn root_mean(&self, len: usize) -> DVector<T> {
        if self.mu0.len() == len {
            self.mu0.clone()
        } else {
            DVector::zeros(len)
        }
    }

    /// `psi + J / kappa0`.
    pub fn full(&self) -> DMatrix<T> {
        self.psi.add_scalar(self.kappa0.recip())
    }
}

/// Tree variance by shared-path sums; the tree should already be scaled.
pub fn tree_covariance<T: Real>(tree: &Phylogeny<T>, kappa0: T) -> Result<TreeCovariance<T>> {
    if !(kappa0 > T::zero()) {
        return Err(Error::InvalidArgument(format!("kappa0 must be positive, got {kappa0}")));
    }
    let n = tree.n_tips();
    let depth = tree.depths();
    let mut psi = DMatrix::zeros(n, n);
    for i in 0..n {
        psi[(i, i)] = depth[i];
    }
    for u in n..tree.n_nodes() {
        let kids = &tree.node(u).children;
        let left = tree.descendant_tips(kids[0]);
        let right = tree.descendant_tips(kids[1]);
        for &a in &left {
            for &b in &right {
                psi[(a, b)] = depth[u];
                psi[(b, a)] = depth[u];
            }
        }
    }
    Ok(TreeCovariance {
        tree: tree.clone(),
        psi,
        kappa0,
        mu0: DVector::zeros(0),
    })
}
