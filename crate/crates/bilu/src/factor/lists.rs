//! Linked-list row/column access for the Crout sweep.
//!
//! One instance serves one factor. `head[b]` starts the chain of blocks whose
//! next unconsumed index lies in block `b`, `list[j]` links chain members,
//! and `first[j]` is the position of that index inside block `j`'s stored
//! index list. Chains are consumed at the step owning `b` and each member is
//! relinked at the block of its next stored index.

pub const NONE: usize = usize::MAX;

#[derive(Debug)]
pub struct TraversalLists {
    pub head: Vec<usize>,
    pub list: Vec<usize>,
    pub first: Vec<usize>,
}

impl TraversalLists {
    pub fn new(n_blocks: usize) -> Self {
        Self {
            head: vec![NONE; n_blocks],
            list: vec![NONE; n_blocks],
            first: vec![NONE; n_blocks],
        }
    }

    /// Insert block `j` at the front of the chain of block `target`.
    pub fn link(&mut self, j: usize, target: usize) {
        self.list[j] = self.head[target];
        self.head[target] = j;
    }

    /// Detach and return the whole chain anchored at block `b`.
    pub fn take_chain(&mut self, b: usize) -> ChainIter {
        let head = std::mem::replace(&mut self.head[b], NONE);
        ChainIter { cursor: head }
    }

    /// Register freshly stored indices of block `j`: sets `first[j] = 0` and
    /// links `j` at the block of its first index.
    pub fn register(&mut self, j: usize, indices: &[usize], block_of: &[usize]) {
        if let Some(&i0) = indices.first() {
            self.first[j] = 0;
            self.link(j, block_of[i0]);
        }
    }

    /// Advance `first[j]` by `consumed` places and relink `j` at its next
    /// index's block, if any. `first` pointers never move backward.
    pub fn advance(&mut self, j: usize, consumed: usize, indices: &[usize], block_of: &[usize]) {
        let pos = self.first[j] + consumed;
        self.first[j] = pos;
        if pos < indices.len() {
            self.link(j, block_of[indices[pos]]);
        }
    }
}

/// Iterator over a detached chain; reads `list` lazily so members may be
/// relinked while iterating.
pub struct ChainIter {
    cursor: usize,
}

impl ChainIter {
    pub fn next(&mut self, lists: &TraversalLists) -> Option<usize> {
        if self.cursor == NONE {
            return None;
        }
        let j = self.cursor;
        self.cursor = lists.list[j];
        Some(j)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chains_link_and_drain() {
        let mut t = TraversalLists::new(4);
        t.register(0, &[2, 3], &[0, 0, 2, 3]);
        t.register(1, &[2], &[0, 0, 2, 3]);
        // both 0 and 1 wait at block 2
        let mut it = t.take_chain(2);
        let mut seen = Vec::new();
        while let Some(j) = it.next(&t) {
            seen.push(j);
            let idx: &[usize] = if j == 0 { &[2, 3] } else { &[2] };
            t.advance(j, 1, idx, &[0, 0, 2, 3]);
        }
        assert_eq!(seen, vec![1, 0]);
        // block 0 relinked at block 3, block 1 exhausted
        let mut it = t.take_chain(3);
        assert_eq!(it.next(&t), Some(0));
        assert_eq!(it.next(&t), None);
        assert_eq!(t.first[0], 1);
        assert_eq!(t.first[1], 1);
    }
}
