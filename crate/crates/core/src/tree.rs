//! Planar rooted trees with prune and cut operations.
//!
//! A tree is stored as its depth-first (preorder) sequence of child counts,
//! which doubles as the canonical text serialization, e.g. "2,1,0,0,1,0".
//! All traversals are iterative; sampled trees can be deep enough that
//! recursion would overflow the stack.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PlanarTree {
    counts: Vec<u32>,
    depths: Vec<u32>,
    /// z[n] = number of nodes at depth n, for n = 0..=height.
    z: Vec<u64>,
    height: usize,
}

impl PlanarTree {
    /// Builds from preorder child counts, validating that they describe
    /// exactly one tree.
    pub fn from_counts(counts: Vec<u32>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Parse("empty tree".into()));
        }
        let mut depths = vec![0u32; counts.len()];
        // (depth, remaining children) per node still awaiting children
        let mut stack: Vec<(u32, u32)> = Vec::new();
        for (i, &c) in counts.iter().enumerate() {
            if i > 0 {
                let top = stack.last_mut().ok_or_else(|| {
                    Error::Parse(format!("preorder sequence closes the tree before position {i}"))
                })?;
                depths[i] = top.0 + 1;
                top.1 -= 1;
                if top.1 == 0 {
                    stack.pop();
                }
            }
            if c > 0 {
                stack.push((depths[i], c));
            }
        }
        if !stack.is_empty() {
            return Err(Error::Parse("preorder sequence ends with open nodes".into()));
        }
        let height = depths.iter().copied().max().unwrap_or(0) as usize;
        let mut z = vec![0u64; height + 1];
        for &d in &depths {
            z[d as usize] += 1;
        }
        Ok(Self {
            counts,
            depths,
            z,
            height,
        })
    }

    pub fn singleton() -> Self {
        Self::from_counts(vec![0]).unwrap()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let counts: Vec<u32> = text
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<u32>()
                    .map_err(|_| Error::Parse(format!("bad child count '{t}'")))
            })
            .collect::<Result<_>>()?;
        Self::from_counts(counts)
    }

    pub fn serialize(&self) -> String {
        let mut s = String::with_capacity(self.counts.len() * 2);
        for (i, c) in self.counts.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            s.push_str(&c.to_string());
        }
        s
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn depths(&self) -> &[u32] {
        &self.depths
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Z_n: population of generation n.
    pub fn z_count(&self, n: usize) -> u64 {
        self.z.get(n).copied().unwrap_or(0)
    }

    /// Preorder indices of the depth-n nodes; preorder coincides with the
    /// lexicographic order on ancestry words.
    pub fn leaves_lex(&self, n: usize) -> Vec<usize> {
        self.depths
            .iter()
            .enumerate()
            .filter(|(_, &d)| d as usize == n)
            .map(|(i, _)| i)
            .collect()
    }

    /// Parent index per node (root gets usize::MAX).
    pub fn parents(&self) -> Vec<usize> {
        let mut parents = vec![usize::MAX; self.len()];
        let mut stack: Vec<(usize, u32)> = Vec::new();
        for i in 0..self.len() {
            if let Some(&mut (p, ref mut remaining)) = stack.last_mut() {
                parents[i] = p;
                *remaining -= 1;
                if *remaining == 0 {
                    stack.pop();
                }
            }
            if self.counts[i] > 0 {
                stack.push((i, self.counts[i]));
            }
        }
        parents
    }

    /// Maximum depth reached inside each node's subtree.
    fn subtree_max_depth(&self) -> Vec<u32> {
        let parents = self.parents();
        let mut maxd: Vec<u32> = self.depths.clone();
        for i in (1..self.len()).rev() {
            let p = parents[i];
            if maxd[i] > maxd[p] {
                maxd[p] = maxd[i];
            }
        }
        maxd
    }

    /// Pruned tree at height n: keeps the nodes that have a descendant (or
    /// are themselves) at generation n. Returns the single root when Z_n = 0.
    pub fn prune(&self, n: usize) -> PlanarTree {
        if self.z_count(n) == 0 {
            return PlanarTree::singleton();
        }
        let maxd = self.subtree_max_depth();
        let keep: Vec<bool> = (0..self.len())
            .map(|i| (self.depths[i] as usize) <= n && (maxd[i] as usize) >= n)
            .collect();
        // children of kept nodes deeper than n are all dropped; recount
        let parents = self.parents();
        let mut new_counts_per_node = vec![0u32; self.len()];
        for i in 1..self.len() {
            if keep[i] && keep[parents[i]] {
                new_counts_per_node[parents[i]] += 1;
            }
        }
        let counts: Vec<u32> = (0..self.len())
            .filter(|&i| keep[i])
            .map(|i| new_counts_per_node[i])
            .collect();
        PlanarTree::from_counts(counts).expect("pruning preserves preorder validity")
    }

    /// Cut tree at height n: the full subtree rooted at the youngest common
    /// ancestor of all depth-n nodes; the single root when Z_n = 0.
    ///
    /// Since preorder lists each subtree contiguously, the common ancestor of
    /// all depth-n nodes is the ancestor of the first and last of them.
    pub fn cut(&self, n: usize) -> PlanarTree {
        if self.z_count(n) == 0 {
            return PlanarTree::singleton();
        }
        let parents = self.parents();
        let mut first = None;
        let mut last = 0;
        for (i, &d) in self.depths.iter().enumerate() {
            if d as usize == n {
                first.get_or_insert(i);
                last = i;
            }
        }
        let mut a = first.unwrap();
        let mut b = last;
        while a != b {
            if self.depths[a] >= self.depths[b] {
                a = parents[a];
            } else {
                b = parents[b];
            }
        }
        self.subtree(a)
    }

    /// Preorder indices of the direct children of node i.
    pub fn children(&self, i: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.counts[i] as usize);
        let mut j = i + 1;
        for _ in 0..self.counts[i] {
            out.push(j);
            j = self.subtree_end(j);
        }
        out
    }

    /// One past the last preorder index of the subtree rooted at i.
    pub fn subtree_end(&self, i: usize) -> usize {
        let mut open: i64 = 1;
        let mut j = i;
        loop {
            open += self.counts[j] as i64 - 1;
            j += 1;
            if open == 0 {
                return j;
            }
        }
    }

    /// The subtree rooted at node i as a standalone tree.
    pub fn subtree(&self, i: usize) -> PlanarTree {
        let end = self.subtree_end(i);
        PlanarTree::from_counts(self.counts[i..end].to_vec())
            .expect("subtree slice is a valid preorder sequence")
    }
}

impl std::fmt::Display for PlanarTree {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.serialize())
    }
}
