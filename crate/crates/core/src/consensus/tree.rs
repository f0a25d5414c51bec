use std::collections::HashMap;
use std::sync::Arc;

use crate::crypto::Digest;
use crate::ledger::{Chain, LedgerBlock, LedgerState};

#[derive(Debug, Clone)]
pub struct TreeEntry {
    pub block: Arc<LedgerBlock>,
    pub state: Arc<LedgerState>,
    pub children: Vec<Digest>,
}

/// Every valid block a node has seen, with the state after it. The node's
/// chain is the path from genesis to its head; other paths are side branches.
#[derive(Debug, Clone)]
pub struct BlockTree {
    entries: HashMap<Digest, TreeEntry>,
    genesis: Digest,
}

/// Fork choice: longer wins; equal lengths go to the lower head hash.
pub fn better(a: (u64, &Digest), b: (u64, &Digest)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

impl BlockTree {
    pub fn new(genesis: Arc<LedgerBlock>, state: Arc<LedgerState>) -> Self {
        let hash = genesis.block_hash;
        let mut entries = HashMap::new();
        entries.insert(
            hash,
            TreeEntry {
                block: genesis,
                state,
                children: Vec::new(),
            },
        );
        BlockTree { entries, genesis: hash }
    }

    pub fn genesis(&self) -> Digest {
        self.genesis
    }

    pub fn contains(&self, h: &Digest) -> bool {
        self.entries.contains_key(h)
    }

    pub fn get(&self, h: &Digest) -> Option<&TreeEntry> {
        self.entries.get(h)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn height(&self, h: &Digest) -> u64 {
        self.entries[h].block.index
    }

    /// Inserts a block whose parent is present.
    pub fn insert(&mut self, block: Arc<LedgerBlock>, state: Arc<LedgerState>) {
        let hash = block.block_hash;
        let parent = block.prev_hash;
        self.entries
            .get_mut(&parent)
            .expect("parent present")
            .children
            .push(hash);
        self.entries.insert(
            hash,
            TreeEntry {
                block,
                state,
                children: Vec::new(),
            },
        );
    }

    fn parent(&self, h: &Digest) -> Option<Digest> {
        let e = &self.entries[h];
        (e.block.index > 0).then_some(e.block.prev_hash)
    }

    /// Ancestor of `h` at `height`.
    pub fn ancestor_at(&self, mut h: Digest, height: u64) -> Digest {
        while self.height(&h) > height {
            h = self.parent(&h).expect("non-genesis has a parent");
        }
        h
    }

    pub fn lca(&self, a: Digest, b: Digest) -> Digest {
        let ha = self.height(&a);
        let hb = self.height(&b);
        let mut a = self.ancestor_at(a, hb.min(ha));
        let mut b = self.ancestor_at(b, hb.min(ha));
        while a != b {
            a = self.parent(&a).expect("common genesis");
            b = self.parent(&b).expect("common genesis");
        }
        a
    }

    pub fn is_ancestor(&self, anc: &Digest, of: &Digest) -> bool {
        let ha = self.height(anc);
        self.height(of) >= ha && &self.ancestor_at(*of, ha) == anc
    }

    /// Blocks strictly after `ancestor` up to and including `tip`, oldest first.
    pub fn path(&self, ancestor: &Digest, tip: &Digest) -> Vec<Arc<LedgerBlock>> {
        let mut out = Vec::new();
        let mut h = *tip;
        while &h != ancestor {
            let e = &self.entries[&h];
            out.push(e.block.clone());
            h = e.block.prev_hash;
        }
        out.reverse();
        out
    }

    pub fn chain_to(&self, tip: &Digest) -> Chain {
        let mut blocks = self.path(&self.genesis, tip);
        blocks.insert(0, self.entries[&self.genesis].block.clone());
        Chain::from_shared(blocks)
    }

    /// Best tip (by fork choice) in the subtree rooted at `root`.
    pub fn best_tip(&self, root: &Digest) -> Digest {
        let mut best = *root;
        let mut stack = vec![*root];
        while let Some(h) = stack.pop() {
            let e = &self.entries[&h];
            if better((e.block.index, &h), (self.height(&best), &best)) {
                best = h;
            }
            stack.extend(e.children.iter().copied());
        }
        best
    }

    pub fn children(&self, h: &Digest) -> &[Digest] {
        &self.entries[h].children
    }
}
