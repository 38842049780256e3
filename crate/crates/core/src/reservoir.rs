//! Local reservoir: an order-statistic B+ tree.
//!
//! Every branch node stores, per child, the number of items in the child's
//! subtree and the child's largest item. The counts give `select` and `rank`
//! in O(log n); the maxima route searches and make `split` cheap: cutting
//! along one root-to-leaf path leaves O(log n) pieces which are joined back
//! together by height, for O(log n) total.
//!
//! Non-root nodes hold between `FANOUT / 2` and `FANOUT` entries. All leaves
//! sit at the same depth.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::Cell;
use core::cmp::Ordering;
use core::fmt;

use crate::variates::Key;

/// Maximum entries per node (items in a leaf, children in a branch).
pub const FANOUT: usize = 16;
const MIN_FILL: usize = FANOUT / 2;

/// An item id with its key, as stored in a reservoir.
///
/// Ordered by `(key, origin_pe, item_id)`, so equal keys still have a well
/// defined global rank.
#[derive(Debug, Clone, Copy)]
pub struct KeyedItem {
    pub key: Key,
    pub origin_pe: u32,
    pub item_id: u64,
}

impl KeyedItem {
    pub fn new(key: Key, origin_pe: u32, item_id: u64) -> Self {
        KeyedItem {
            key,
            origin_pe,
            item_id,
        }
    }
}

impl Ord for KeyedItem {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key
            .total_cmp(&other.key)
            .then(self.origin_pe.cmp(&other.origin_pe))
            .then(self.item_id.cmp(&other.item_id))
    }
}

impl PartialOrd for KeyedItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for KeyedItem {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for KeyedItem {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReservoirError {
    RankOutOfRange { rank: usize, len: usize },
    Empty,
}

impl fmt::Display for ReservoirError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReservoirError::RankOutOfRange { rank, len } => {
                write!(f, "rank {rank} out of range for reservoir of size {len}")
            }
            ReservoirError::Empty => f.write_str("reservoir is empty"),
        }
    }
}

impl core::error::Error for ReservoirError {}

#[derive(Clone)]
enum Node<T> {
    Leaf(Vec<T>),
    Branch(Branch<T>),
}

#[derive(Clone)]
struct Branch<T> {
    children: Vec<Node<T>>,
    maxes: Vec<T>,
    sizes: Vec<usize>,
}

impl<T: Ord + Copy> Node<T> {
    fn empty() -> Self {
        Node::Leaf(Vec::new())
    }

    fn entries(&self) -> usize {
        match self {
            Node::Leaf(v) => v.len(),
            Node::Branch(b) => b.children.len(),
        }
    }

    fn len(&self) -> usize {
        match self {
            Node::Leaf(v) => v.len(),
            Node::Branch(b) => b.sizes.iter().sum(),
        }
    }

    fn max(&self) -> T {
        match self {
            Node::Leaf(v) => *v.last().expect("max of empty node"),
            Node::Branch(b) => *b.maxes.last().expect("max of empty branch"),
        }
    }

    fn branch(children: Vec<Node<T>>) -> Self {
        let maxes = children.iter().map(Node::max).collect();
        let sizes = children.iter().map(Node::len).collect();
        Node::Branch(Branch {
            children,
            maxes,
            sizes,
        })
    }

    /// Splits an overfull node in two halves, returning the right half.
    fn split_half(&mut self) -> Node<T> {
        match self {
            Node::Leaf(v) => Node::Leaf(v.split_off(v.len() / 2)),
            Node::Branch(b) => {
                let at = b.children.len() / 2;
                Node::Branch(Branch {
                    children: b.children.split_off(at),
                    maxes: b.maxes.split_off(at),
                    sizes: b.sizes.split_off(at),
                })
            }
        }
    }
}

impl<T: Ord + Copy> Branch<T> {
    fn refresh(&mut self, i: usize) {
        self.sizes[i] = self.children[i].len();
        self.maxes[i] = self.children[i].max();
    }

    fn insert_child(&mut self, i: usize, child: Node<T>) {
        self.sizes.insert(i, child.len());
        self.maxes.insert(i, child.max());
        self.children.insert(i, child);
    }

    fn remove_child(&mut self, i: usize) -> Node<T> {
        self.sizes.remove(i);
        self.maxes.remove(i);
        self.children.remove(i)
    }
}

/// Merges or evens out two adjacent siblings of equal height so that both
/// reach the minimum fill. Returns `true` if `right` was absorbed into `left`
/// (and is now empty).
fn rebalance_pair<T: Ord + Copy>(left: &mut Node<T>, right: &mut Node<T>) -> bool {
    let total = left.entries() + right.entries();
    let merge = total <= FANOUT;
    let keep_left = if merge { total } else { total / 2 };
    match (left, right) {
        (Node::Leaf(l), Node::Leaf(r)) => {
            if l.len() > keep_left {
                let tail = l.split_off(keep_left);
                r.splice(0..0, tail);
            } else {
                let take = keep_left - l.len();
                l.extend(r.drain(..take));
            }
        }
        (Node::Branch(l), Node::Branch(r)) => {
            if l.children.len() > keep_left {
                let children = l.children.split_off(keep_left);
                let maxes = l.maxes.split_off(keep_left);
                let sizes = l.sizes.split_off(keep_left);
                r.children.splice(0..0, children);
                r.maxes.splice(0..0, maxes);
                r.sizes.splice(0..0, sizes);
            } else {
                let take = keep_left - l.children.len();
                l.children.extend(r.children.drain(..take));
                l.maxes.extend(r.maxes.drain(..take));
                l.sizes.extend(r.sizes.drain(..take));
            }
        }
        _ => unreachable!("siblings at different heights"),
    }
    merge
}

/// A detached subtree with its height and item count.
struct Piece<T> {
    node: Node<T>,
    height: usize,
    len: usize,
}

impl<T: Ord + Copy> Piece<T> {
    fn empty() -> Self {
        Piece {
            node: Node::empty(),
            height: 0,
            len: 0,
        }
    }

    /// Wraps a run of siblings at `height - 1` as a piece.
    fn from_children(mut children: Vec<Node<T>>, height: usize) -> Self {
        match children.len() {
            0 => Piece::empty(),
            1 => {
                let node = children.pop().unwrap();
                let len = node.len();
                Piece {
                    node,
                    height: height - 1,
                    len,
                }
            }
            _ => {
                let node = Node::branch(children);
                let len = node.len();
                Piece { node, height, len }
            }
        }
    }
}

/// Order-statistic B+ tree holding one PE's candidate items.
pub struct Reservoir<T = KeyedItem> {
    root: Node<T>,
    height: usize,
    len: usize,
    visits: Cell<u64>,
}

impl<T: Ord + Copy> Default for Reservoir<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Ord + Copy> Clone for Reservoir<T> {
    fn clone(&self) -> Self {
        Reservoir {
            root: self.root.clone(),
            height: self.height,
            len: self.len,
            visits: Cell::new(0),
        }
    }
}

impl<T: Ord + Copy + fmt::Debug> fmt::Debug for Reservoir<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Reservoir")
            .field("len", &self.len)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl<T: Ord + Copy> FromIterator<T> for Reservoir<T> {
    fn from_iter<I: IntoIterator<Item = T>>(iter: I) -> Self {
        let mut r = Reservoir::new();
        for x in iter {
            r.insert(x);
        }
        r
    }
}

impl<T: Ord + Copy> Reservoir<T> {
    pub fn new() -> Self {
        Reservoir {
            root: Node::empty(),
            height: 0,
            len: 0,
            visits: Cell::new(0),
        }
    }

    fn from_piece(p: Piece<T>) -> Self {
        Reservoir {
            root: p.node,
            height: p.height,
            len: p.len,
            visits: Cell::new(0),
        }
    }

    fn into_piece(self) -> Piece<T> {
        Piece {
            node: self.root,
            height: self.height,
            len: self.len,
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Tree height; a lone leaf has height 0.
    pub fn height(&self) -> usize {
        self.height
    }

    /// Nodes visited by all operations so far. Instrumentation only.
    pub fn node_visits(&self) -> u64 {
        self.visits.get()
    }

    pub fn reset_node_visits(&self) {
        self.visits.set(0);
    }

    #[inline]
    fn visit(&self, n: u64) {
        self.visits.set(self.visits.get() + n);
    }

    pub fn clear(&mut self) {
        self.root = Node::empty();
        self.height = 0;
        self.len = 0;
    }

    pub fn insert(&mut self, item: T) {
        let mut visited = 0;
        if let Some(sibling) = insert_rec(&mut self.root, item, &mut visited) {
            let left = core::mem::replace(&mut self.root, Node::empty());
            self.root = Node::branch(vec![left, sibling]);
            self.height += 1;
        }
        self.len += 1;
        self.visit(visited);
    }

    /// Item at 0-based position `index`.
    pub fn nth(&self, index: usize) -> Option<T> {
        if index >= self.len {
            return None;
        }
        let mut node = &self.root;
        let mut rest = index;
        let mut visited = 1;
        loop {
            match node {
                Node::Leaf(v) => {
                    self.visit(visited);
                    return Some(v[rest]);
                }
                Node::Branch(b) => {
                    let mut i = 0;
                    while rest >= b.sizes[i] {
                        rest -= b.sizes[i];
                        i += 1;
                    }
                    node = &b.children[i];
                    visited += 1;
                }
            }
        }
    }

    /// The item with the `rank`-th smallest key (1-based).
    pub fn select(&self, rank: usize) -> Result<T, ReservoirError> {
        if rank == 0 || rank > self.len {
            return Err(ReservoirError::RankOutOfRange {
                rank,
                len: self.len,
            });
        }
        Ok(self.nth(rank - 1).unwrap())
    }

    /// Length of the longest prefix whose items all satisfy `pred`.
    ///
    /// `pred` must be monotone over the sorted order (true, then false).
    pub fn rank_by(&self, mut pred: impl FnMut(&T) -> bool) -> usize {
        let mut node = &self.root;
        let mut acc = 0;
        let mut visited = 1;
        loop {
            match node {
                Node::Leaf(v) => {
                    self.visit(visited);
                    return acc + v.partition_point(|x| pred(x));
                }
                Node::Branch(b) => {
                    let mut next = None;
                    for (i, m) in b.maxes.iter().enumerate() {
                        if pred(m) {
                            acc += b.sizes[i];
                        } else {
                            next = Some(i);
                            break;
                        }
                    }
                    match next {
                        Some(i) => {
                            node = &b.children[i];
                            visited += 1;
                        }
                        None => {
                            self.visit(visited);
                            return acc;
                        }
                    }
                }
            }
        }
    }

    /// Number of stored items strictly smaller than `probe`.
    pub fn rank_of(&self, probe: &T) -> usize {
        self.rank_by(|x| x < probe)
    }

    /// Number of stored items smaller than or equal to `probe`.
    pub fn count_le(&self, probe: &T) -> usize {
        self.rank_by(|x| x <= probe)
    }

    pub fn min(&self) -> Result<T, ReservoirError> {
        self.nth(0).ok_or(ReservoirError::Empty)
    }

    pub fn max(&self) -> Result<T, ReservoirError> {
        if self.is_empty() {
            return Err(ReservoirError::Empty);
        }
        self.visit(1);
        Ok(self.root.max())
    }

    /// Keeps the `rank` smallest items and returns the rest as a new tree.
    pub fn split_off_rank(&mut self, rank: usize) -> Result<Reservoir<T>, ReservoirError> {
        if rank > self.len {
            return Err(ReservoirError::RankOutOfRange {
                rank,
                len: self.len,
            });
        }
        if rank == self.len {
            return Ok(Reservoir::new());
        }
        let visits = self.visits.get();
        let whole = core::mem::take(self).into_piece();
        let mut visited = 0;
        let (left, right) = split_piece(whole, rank, &mut visited);
        *self = Reservoir::from_piece(left);
        self.visits.set(visits + visited);
        Ok(Reservoir::from_piece(right))
    }

    /// Splits into the `rank` smallest items and the rest.
    pub fn split_at_rank(mut self, rank: usize) -> Result<(Self, Self), ReservoirError> {
        let right = self.split_off_rank(rank)?;
        Ok((self, right))
    }

    /// Splits into items `<= probe` and items `> probe`.
    pub fn split_at_probe(self, probe: &T) -> (Self, Self) {
        let rank = self.count_le(probe);
        self.split_at_rank(rank).expect("rank within bounds")
    }

    /// Drops every item greater than `probe`.
    pub fn truncate_after(&mut self, probe: &T) {
        let rank = self.count_le(probe);
        self.truncate(rank);
    }

    /// Keeps only the `rank` smallest items.
    pub fn truncate(&mut self, rank: usize) {
        if rank < self.len {
            let _ = self.split_off_rank(rank);
        }
    }

    /// In-order iterator over all items.
    pub fn iter(&self) -> Iter<'_, T> {
        self.iter_from(0)
    }

    /// In-order iterator starting at 0-based position `start`.
    pub fn iter_from(&self, start: usize) -> Iter<'_, T> {
        let mut it = Iter {
            stack: Vec::new(),
            leaf: &[],
            pos: 0,
            remaining: 0,
        };
        if start >= self.len {
            return it;
        }
        it.remaining = self.len - start;
        let mut node = &self.root;
        let mut rest = start;
        loop {
            match node {
                Node::Leaf(v) => {
                    it.leaf = v;
                    it.pos = rest;
                    return it;
                }
                Node::Branch(b) => {
                    let mut i = 0;
                    while rest >= b.sizes[i] {
                        rest -= b.sizes[i];
                        i += 1;
                    }
                    it.stack.push((b, i + 1));
                    node = &b.children[i];
                }
            }
        }
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.iter().collect()
    }

    /// Walks the whole tree checking order, counts, routing maxima, fill
    /// levels and uniform leaf depth.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut prev: Option<T> = None;
        let counted = check_node(&self.root, self.height, true, &mut prev)?;
        if counted != self.len {
            return Err(format!("len {} but tree holds {counted}", self.len));
        }
        if let Node::Branch(b) = &self.root {
            if b.children.len() < 2 {
                return Err(String::from("branch root with fewer than two children"));
            }
        }
        Ok(())
    }
}

impl Reservoir<KeyedItem> {
    /// Number of items whose key is strictly below `key`; a bare key sorts
    /// before every item carrying the same key.
    pub fn rank_of_key(&self, key: Key) -> usize {
        self.rank_by(|x| x.key < key)
    }
}

fn insert_rec<T: Ord + Copy>(node: &mut Node<T>, item: T, visited: &mut u64) -> Option<Node<T>> {
    *visited += 1;
    match node {
        Node::Leaf(v) => {
            let at = v.partition_point(|x| *x <= item);
            v.insert(at, item);
            (v.len() > FANOUT).then(|| node.split_half())
        }
        Node::Branch(b) => {
            let last = b.children.len() - 1;
            let i = b.maxes.iter().position(|m| item <= *m).unwrap_or(last);
            let sibling = insert_rec(&mut b.children[i], item, visited);
            match sibling {
                None => {
                    b.sizes[i] += 1;
                    if item > b.maxes[i] {
                        b.maxes[i] = item;
                    }
                }
                Some(s) => {
                    b.refresh(i);
                    b.insert_child(i + 1, s);
                }
            }
            (b.children.len() > FANOUT).then(|| node.split_half())
        }
    }
}

/// Splits `piece` after its first `rank` items.
fn split_piece<T: Ord + Copy>(
    piece: Piece<T>,
    rank: usize,
    visited: &mut u64,
) -> (Piece<T>, Piece<T>) {
    *visited += 1;
    if rank == 0 {
        return (Piece::empty(), piece);
    }
    if rank >= piece.len {
        return (piece, Piece::empty());
    }
    let height = piece.height;
    match piece.node {
        Node::Leaf(mut v) => {
            let right = v.split_off(rank);
            let (ll, rl) = (v.len(), right.len());
            (
                Piece {
                    node: Node::Leaf(v),
                    height: 0,
                    len: ll,
                },
                Piece {
                    node: Node::Leaf(right),
                    height: 0,
                    len: rl,
                },
            )
        }
        Node::Branch(b) => {
            let mut acc = 0;
            let mut i = 0;
            while acc + b.sizes[i] <= rank {
                acc += b.sizes[i];
                i += 1;
            }
            let mut children = b.children;
            let mut right_children = children.split_off(i);
            if acc == rank {
                // Clean cut between two children.
                return (
                    Piece::from_children(children, height),
                    Piece::from_children(right_children, height),
                );
            }
            let middle = right_children.remove(0);
            let middle_len = b.sizes[i];
            let (mid_left, mid_right) = split_piece(
                Piece {
                    node: middle,
                    height: height - 1,
                    len: middle_len,
                },
                rank - acc,
                visited,
            );
            let left = join(Piece::from_children(children, height), mid_left, visited);
            let right = join(
                mid_right,
                Piece::from_children(right_children, height),
                visited,
            );
            (left, right)
        }
    }
}

/// Concatenates two pieces; every item of `a` must precede every item of `b`.
fn join<T: Ord + Copy>(a: Piece<T>, b: Piece<T>, visited: &mut u64) -> Piece<T> {
    if a.len == 0 {
        return b;
    }
    if b.len == 0 {
        return a;
    }
    let len = a.len + b.len;
    match a.height.cmp(&b.height) {
        Ordering::Equal => {
            *visited += 2;
            let (mut l, mut r) = (a.node, b.node);
            if rebalance_pair(&mut l, &mut r) {
                Piece {
                    node: l,
                    height: a.height,
                    len,
                }
            } else {
                Piece {
                    node: Node::branch(vec![l, r]),
                    height: a.height + 1,
                    len,
                }
            }
        }
        Ordering::Greater => {
            let mut root = a.node;
            match join_right(&mut root, a.height, b.node, b.height, visited) {
                None => Piece {
                    node: root,
                    height: a.height,
                    len,
                },
                Some(s) => Piece {
                    node: Node::branch(vec![root, s]),
                    height: a.height + 1,
                    len,
                },
            }
        }
        Ordering::Less => {
            let mut root = b.node;
            match join_left(&mut root, b.height, a.node, a.height, visited) {
                None => Piece {
                    node: root,
                    height: b.height,
                    len,
                },
                Some(s) => Piece {
                    node: Node::branch(vec![s, root]),
                    height: b.height + 1,
                    len,
                },
            }
        }
    }
}

/// Hangs `sub` (height `sub_height < height`) off the right spine of `node`.
/// Returns a new right sibling if `node` overflowed.
fn join_right<T: Ord + Copy>(
    node: &mut Node<T>,
    height: usize,
    sub: Node<T>,
    sub_height: usize,
    visited: &mut u64,
) -> Option<Node<T>> {
    *visited += 1;
    let Node::Branch(b) = node else {
        unreachable!("leaf above a shorter piece")
    };
    let last = b.children.len() - 1;
    if height == sub_height + 1 {
        b.insert_child(last + 1, sub);
        if b.children[last + 1].entries() < MIN_FILL {
            let (head, tail) = b.children.split_at_mut(last + 1);
            if rebalance_pair(&mut head[last], &mut tail[0]) {
                b.remove_child(last + 1);
            } else {
                b.refresh(last + 1);
            }
            b.refresh(last);
        }
    } else {
        let sibling = join_right(&mut b.children[last], height - 1, sub, sub_height, visited);
        b.refresh(last);
        if let Some(s) = sibling {
            b.insert_child(last + 1, s);
        }
    }
    (b.children.len() > FANOUT).then(|| node.split_half())
}

/// Mirror of [`join_right`]: hangs `sub` off the left spine of `node`.
/// Returns a new left sibling if `node` overflowed.
fn join_left<T: Ord + Copy>(
    node: &mut Node<T>,
    height: usize,
    sub: Node<T>,
    sub_height: usize,
    visited: &mut u64,
) -> Option<Node<T>> {
    *visited += 1;
    let Node::Branch(b) = node else {
        unreachable!("leaf above a shorter piece")
    };
    if height == sub_height + 1 {
        b.insert_child(0, sub);
        if b.children[0].entries() < MIN_FILL {
            let (head, tail) = b.children.split_at_mut(1);
            if rebalance_pair(&mut head[0], &mut tail[0]) {
                b.remove_child(1);
            } else {
                b.refresh(1);
            }
            b.refresh(0);
        }
    } else {
        let sibling = join_left(&mut b.children[0], height - 1, sub, sub_height, visited);
        b.refresh(0);
        if let Some(s) = sibling {
            b.insert_child(0, s);
        }
    }
    if b.children.len() > FANOUT {
        // Keep the larger half in place; hand back the smaller left part.
        let right = node.split_half();
        Some(core::mem::replace(node, right))
    } else {
        None
    }
}

fn check_node<T: Ord + Copy>(
    node: &Node<T>,
    height: usize,
    is_root: bool,
    prev: &mut Option<T>,
) -> Result<usize, String> {
    let entries = node.entries();
    if entries > FANOUT {
        return Err(format!("node with {entries} entries exceeds fanout"));
    }
    if !is_root && entries < MIN_FILL {
        return Err(format!("non-root node with {entries} entries is underfull"));
    }
    match node {
        Node::Leaf(v) => {
            if height != 0 {
                return Err(String::from("leaf above the bottom level"));
            }
            for x in v {
                if prev.is_some_and(|p| p > *x) {
                    return Err(String::from("items out of order"));
                }
                *prev = Some(*x);
            }
            Ok(v.len())
        }
        Node::Branch(b) => {
            if height == 0 {
                return Err(String::from("branch at leaf level"));
            }
            if b.maxes.len() != entries || b.sizes.len() != entries {
                return Err(String::from("branch metadata length mismatch"));
            }
            let mut total = 0;
            for (i, c) in b.children.iter().enumerate() {
                let n = check_node(c, height - 1, false, prev)?;
                if n != b.sizes[i] {
                    return Err(format!("size counter {} but subtree holds {n}", b.sizes[i]));
                }
                if c.max() != b.maxes[i] {
                    return Err(String::from("stale routing maximum"));
                }
                total += n;
            }
            Ok(total)
        }
    }
}

/// In-order iterator over a [`Reservoir`].
pub struct Iter<'a, T> {
    stack: Vec<(&'a Branch<T>, usize)>,
    leaf: &'a [T],
    pos: usize,
    remaining: usize,
}

impl<T> fmt::Debug for Iter<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Iter")
            .field("remaining", &self.remaining)
            .finish_non_exhaustive()
    }
}

impl<T: Copy> Iterator for Iter<'_, T> {
    type Item = T;

    fn next(&mut self) -> Option<T> {
        if self.remaining == 0 {
            return None;
        }
        while self.pos >= self.leaf.len() {
            // Climb to the first ancestor with an unvisited child, then
            // descend along leftmost children.
            let (b, next) = loop {
                let top = self.stack.last_mut()?;
                if top.1 < top.0.children.len() {
                    let pair = (top.0, top.1);
                    top.1 += 1;
                    break pair;
                }
                self.stack.pop();
            };
            let mut node = &b.children[next];
            loop {
                match node {
                    Node::Leaf(v) => {
                        self.leaf = v;
                        self.pos = 0;
                        break;
                    }
                    Node::Branch(inner) => {
                        self.stack.push((inner, 1));
                        node = &inner.children[0];
                    }
                }
            }
        }
        let x = self.leaf[self.pos];
        self.pos += 1;
        self.remaining -= 1;
        Some(x)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

impl<T: Copy> ExactSizeIterator for Iter<'_, T> {}
