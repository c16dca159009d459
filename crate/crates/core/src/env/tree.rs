use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// A post (no parent) or a reply.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Comment {
    pub id: i64,
    pub parent: Option<i64>,
    pub text: String,
    pub karma: i64,
    /// Seconds since the epoch.
    pub ts: i64,
}

/// Validated discussion tree.
///
/// Nodes are stored by index: the post is index 0 and every other comment
/// follows in `(timestamp, id)` order, which is also the order candidates
/// are offered in.
#[derive(Debug, Clone)]
pub struct DiscussionTree {
    nodes: Vec<Comment>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    by_id: BTreeMap<i64, usize>,
    // Euler-tour interval: `v` lies strictly below `u` iff tin[u] < tin[v] <= tout[u].
    tin: Vec<usize>,
    tout: Vec<usize>,
}

impl DiscussionTree {
    pub fn from_comments(comments: Vec<Comment>) -> Result<Self> {
        let mut roots = comments.iter().filter(|c| c.parent.is_none());
        let root = roots
            .next()
            .ok_or_else(|| Error::InvalidTree {
                id: comments.first().map_or(-1, |c| c.id),
                reason: "no post (comment without parent)".into(),
            })?
            .clone();
        if let Some(extra) = roots.next() {
            return Err(Error::InvalidTree {
                id: extra.id,
                reason: "second comment without parent".into(),
            });
        }
        let mut raw: BTreeMap<i64, &Comment> = BTreeMap::new();
        for c in &comments {
            if raw.insert(c.id, c).is_some() {
                return Err(Error::InvalidTree {
                    id: c.id,
                    reason: "duplicate id".into(),
                });
            }
        }
        for c in &comments {
            let Some(p) = c.parent else { continue };
            if p == c.id {
                return Err(Error::InvalidTree {
                    id: c.id,
                    reason: "cycle: comment is its own parent".into(),
                });
            }
            let parent = raw.get(&p).ok_or_else(|| Error::InvalidTree {
                id: c.id,
                reason: format!("missing parent {p}"),
            })?;
            if c.ts < parent.ts {
                return Err(Error::InvalidTree {
                    id: c.id,
                    reason: format!("timestamp {} precedes parent timestamp {}", c.ts, parent.ts),
                });
            }
        }

        let mut rest: Vec<Comment> = comments.into_iter().filter(|c| c.parent.is_some()).collect();
        rest.sort_by_key(|c| (c.ts, c.id));
        let mut nodes = Vec::with_capacity(rest.len() + 1);
        nodes.push(root);
        nodes.extend(rest);
        let by_id: BTreeMap<i64, usize> = nodes.iter().enumerate().map(|(i, c)| (c.id, i)).collect();
        let parent: Vec<Option<usize>> = nodes
            .iter()
            .map(|c| c.parent.map(|p| by_id[&p]))
            .collect();
        let mut children = vec![Vec::new(); nodes.len()];
        for (i, p) in parent.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(i);
            }
        }

        // Iterative DFS from the post; anything unreached sits on a cycle.
        let n = nodes.len();
        let (mut tin, mut tout) = (vec![usize::MAX; n], vec![0; n]);
        let mut clock = 0;
        let mut stack = vec![(0usize, 0usize)];
        tin[0] = 0;
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if let Some(&child) = children[node].get(*next) {
                *next += 1;
                clock += 1;
                tin[child] = clock;
                stack.push((child, 0));
            } else {
                tout[node] = clock;
                stack.pop();
            }
        }
        if let Some(bad) = tin.iter().position(|&t| t == usize::MAX) {
            return Err(Error::InvalidTree {
                id: nodes[bad].id,
                reason: "cycle: not reachable from the post".into(),
            });
        }
        Ok(Self {
            nodes,
            parent,
            children,
            by_id,
            tin,
            tout,
        })
    }

    /// Number of nodes including the post.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of comments excluding the post.
    pub fn comment_count(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn root(&self) -> &Comment {
        &self.nodes[0]
    }

    pub fn node(&self, index: usize) -> &Comment {
        &self.nodes[index]
    }

    pub fn nodes(&self) -> &[Comment] {
        &self.nodes
    }

    pub fn index_of(&self, id: i64) -> Option<usize> {
        self.by_id.get(&id).copied()
    }

    pub fn parent(&self, index: usize) -> Option<usize> {
        self.parent[index]
    }

    /// Children in timestamp order.
    pub fn children(&self, index: usize) -> &[usize] {
        &self.children[index]
    }

    /// Whether `node` lies strictly inside the subtree of `ancestor`.
    pub fn is_strict_descendant(&self, node: usize, ancestor: usize) -> bool {
        self.tin[ancestor] < self.tin[node] && self.tin[node] <= self.tout[ancestor]
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.children[i].is_empty()).collect()
    }

    /// Node indices from `index` up to (excluding) the post.
    pub fn path_to_root(&self, index: usize) -> Vec<usize> {
        let mut path = Vec::new();
        let mut cur = Some(index);
        while let Some(i) = cur {
            if i == 0 {
                break;
            }
            path.push(i);
            cur = self.parent[i];
        }
        path
    }

    pub fn depth(&self) -> usize {
        (0..self.len()).map(|i| self.path_to_root(i).len()).max().unwrap_or(0)
    }
}
