//! Anchor index: maps each leaf's anchor to the leaf.
//!
//! Two interchangeable backends implement [`AnchorMap`]: an adaptive radix
//! tree over big-endian keys and a plain `BTreeMap`. Lookups return the
//! greatest anchor not above the key; [`correct`] then walks the leaf list
//! to the leaf that actually contains the key.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::mem::size_of;

/// Ordered map from anchors to opaque leaf handles.
pub trait AnchorMap: Send + Sync {
    fn insert(&mut self, key: u64, value: usize) -> Option<usize>;
    fn remove(&mut self, key: u64) -> Option<usize>;
    fn get(&self, key: u64) -> Option<usize>;
    /// Entry with the greatest key `<= key`.
    fn floor(&self, key: u64) -> Option<(u64, usize)>;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// All keys in ascending order.
    fn keys(&self) -> Vec<u64>;
    /// Bytes held by the structure itself.
    fn memory_bytes(&self) -> usize;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AnchorBackend {
    #[default]
    Trie,
    Ordered,
}

impl AnchorBackend {
    pub fn build(self) -> Box<dyn AnchorMap> {
        match self {
            AnchorBackend::Trie => Box::new(AdaptiveRadixTree::new()),
            AnchorBackend::Ordered => Box::new(OrderedAnchors::default()),
        }
    }
}

#[derive(Debug, Default)]
pub struct OrderedAnchors {
    map: BTreeMap<u64, usize>,
}

impl AnchorMap for OrderedAnchors {
    fn insert(&mut self, key: u64, value: usize) -> Option<usize> {
        self.map.insert(key, value)
    }

    fn remove(&mut self, key: u64) -> Option<usize> {
        self.map.remove(&key)
    }

    fn get(&self, key: u64) -> Option<usize> {
        self.map.get(&key).copied()
    }

    fn floor(&self, key: u64) -> Option<(u64, usize)> {
        self.map.range(..=key).next_back().map(|(&k, &v)| (k, v))
    }

    fn len(&self) -> usize {
        self.map.len()
    }

    fn keys(&self) -> Vec<u64> {
        self.map.keys().copied().collect()
    }

    fn memory_bytes(&self) -> usize {
        // Roughly one key, value and child pointer per slot.
        size_of::<Self>() + self.map.len() * (size_of::<u64>() + size_of::<usize>() + size_of::<usize>())
    }
}

const KEY_BYTES: usize = 8;

enum Child {
    Leaf(u64, usize),
    Node(Box<Inner>),
}

struct Inner {
    prefix: [u8; KEY_BYTES],
    prefix_len: usize,
    body: Body,
}

struct Sorted<const N: usize> {
    keys: [u8; N],
    children: [Option<Child>; N],
    len: usize,
}

impl<const N: usize> Sorted<N> {
    fn new() -> Self {
        Sorted {
            keys: [0; N],
            children: std::array::from_fn(|_| None),
            len: 0,
        }
    }

    fn pos(&self, b: u8) -> Option<usize> {
        self.keys[..self.len].iter().position(|&k| k == b)
    }
}

enum Body {
    N4(Sorted<4>),
    N16(Sorted<16>),
    N48 {
        index: [u8; 256],
        children: Box<[Option<Child>; 48]>,
        len: usize,
    },
    N256 {
        children: Box<[Option<Child>; 256]>,
        len: usize,
    },
}

impl Body {
    fn new4() -> Body {
        Body::N4(Sorted::new())
    }

    fn len(&self) -> usize {
        match self {
            Body::N4(s) => s.len,
            Body::N16(s) => s.len,
            Body::N48 { len, .. } | Body::N256 { len, .. } => *len,
        }
    }

    fn is_full(&self) -> bool {
        match self {
            Body::N4(s) => s.len == 4,
            Body::N16(s) => s.len == 16,
            Body::N48 { len, .. } => *len == 48,
            Body::N256 { .. } => false,
        }
    }

    fn find(&self, b: u8) -> Option<&Child> {
        match self {
            Body::N4(s) => s.pos(b).and_then(|i| s.children[i].as_ref()),
            Body::N16(s) => s.pos(b).and_then(|i| s.children[i].as_ref()),
            Body::N48 { index, children, .. } => match index[b as usize] {
                0 => None,
                slot => children[slot as usize - 1].as_ref(),
            },
            Body::N256 { children, .. } => children[b as usize].as_ref(),
        }
    }

    fn find_mut(&mut self, b: u8) -> Option<&mut Child> {
        match self {
            Body::N4(s) => s.pos(b).and_then(|i| s.children[i].as_mut()),
            Body::N16(s) => s.pos(b).and_then(|i| s.children[i].as_mut()),
            Body::N48 { index, children, .. } => match index[b as usize] {
                0 => None,
                slot => children[slot as usize - 1].as_mut(),
            },
            Body::N256 { children, .. } => children[b as usize].as_mut(),
        }
    }

    /// Child with the greatest byte below `b`.
    fn pred(&self, b: u8) -> Option<&Child> {
        match self {
            Body::N4(s) => sorted_pred(s, b),
            Body::N16(s) => sorted_pred(s, b),
            Body::N48 { index, children, .. } => (0..b as usize)
                .rev()
                .find(|&c| index[c] != 0)
                .and_then(|c| children[index[c] as usize - 1].as_ref()),
            Body::N256 { children, .. } => children[..b as usize].iter().rev().flatten().next(),
        }
    }

    fn max(&self) -> Option<&Child> {
        match self {
            Body::N4(s) => s.len.checked_sub(1).and_then(|i| s.children[i].as_ref()),
            Body::N16(s) => s.len.checked_sub(1).and_then(|i| s.children[i].as_ref()),
            Body::N48 { index, children, .. } => index
                .iter()
                .rev()
                .find(|&&slot| slot != 0)
                .and_then(|&slot| children[slot as usize - 1].as_ref()),
            Body::N256 { children, .. } => children.iter().rev().flatten().next(),
        }
    }

    fn add(&mut self, b: u8, child: Child) {
        if self.is_full() {
            self.grow();
        }
        match self {
            Body::N4(s) => sorted_add(s, b, child),
            Body::N16(s) => sorted_add(s, b, child),
            Body::N48 { index, children, len } => {
                let slot = children
                    .iter()
                    .position(Option::is_none)
                    .expect("node48 has a free slot");
                children[slot] = Some(child);
                index[b as usize] = slot as u8 + 1;
                *len += 1;
            }
            Body::N256 { children, len } => {
                debug_assert!(children[b as usize].is_none());
                children[b as usize] = Some(child);
                *len += 1;
            }
        }
    }

    fn remove(&mut self, b: u8) -> Option<Child> {
        let out = match self {
            Body::N4(s) => sorted_remove(s, b),
            Body::N16(s) => sorted_remove(s, b),
            Body::N48 { index, children, len } => match index[b as usize] {
                0 => None,
                slot => {
                    index[b as usize] = 0;
                    *len -= 1;
                    children[slot as usize - 1].take()
                }
            },
            Body::N256 { children, len } => {
                let c = children[b as usize].take();
                if c.is_some() {
                    *len -= 1;
                }
                c
            }
        };
        let shrink = match self {
            Body::N16(s) => s.len <= 3,
            Body::N48 { len, .. } => *len <= 12,
            Body::N256 { len, .. } => *len <= 37,
            Body::N4(_) => false,
        };
        if shrink {
            self.rebuild_smaller();
        }
        out
    }

    fn drain(&mut self) -> Vec<(u8, Child)> {
        let mut out = Vec::with_capacity(self.len());
        match self {
            Body::N4(s) => sorted_drain(s, &mut out),
            Body::N16(s) => sorted_drain(s, &mut out),
            Body::N48 { index, children, len } => {
                for b in 0..256 {
                    if index[b] != 0 {
                        out.push((b as u8, children[index[b] as usize - 1].take().unwrap()));
                        index[b] = 0;
                    }
                }
                *len = 0;
            }
            Body::N256 { children, len } => {
                for (b, c) in children.iter_mut().enumerate() {
                    if let Some(c) = c.take() {
                        out.push((b as u8, c));
                    }
                }
                *len = 0;
            }
        }
        out
    }

    fn refill(&mut self, items: Vec<(u8, Child)>) {
        for (b, c) in items {
            self.add(b, c);
        }
    }

    fn grow(&mut self) {
        let items = self.drain();
        *self = match self {
            Body::N4(_) => Body::N16(Sorted::new()),
            Body::N16(_) => Body::N48 {
                index: [0; 256],
                children: Box::new(std::array::from_fn(|_| None)),
                len: 0,
            },
            _ => Body::N256 {
                children: Box::new(std::array::from_fn(|_| None)),
                len: 0,
            },
        };
        self.refill(items);
    }

    fn rebuild_smaller(&mut self) {
        let items = self.drain();
        *self = match self {
            Body::N16(_) => Body::N4(Sorted::new()),
            Body::N48 { .. } => Body::N16(Sorted::new()),
            _ => Body::N48 {
                index: [0; 256],
                children: Box::new(std::array::from_fn(|_| None)),
                len: 0,
            },
        };
        self.refill(items);
    }

    fn for_each(&self, f: &mut impl FnMut(&Child)) {
        match self {
            Body::N4(s) => s.children[..s.len].iter().flatten().for_each(f),
            Body::N16(s) => s.children[..s.len].iter().flatten().for_each(f),
            Body::N48 { index, children, .. } => {
                for &slot in index.iter().filter(|&&s| s != 0) {
                    if let Some(c) = &children[slot as usize - 1] {
                        f(c);
                    }
                }
            }
            Body::N256 { children, .. } => children.iter().flatten().for_each(f),
        }
    }

    fn bytes(&self) -> usize {
        match self {
            Body::N4(_) | Body::N16(_) => 0,
            Body::N48 { .. } => size_of::<[Option<Child>; 48]>(),
            Body::N256 { .. } => size_of::<[Option<Child>; 256]>(),
        }
    }
}

fn sorted_pred<const N: usize>(s: &Sorted<N>, b: u8) -> Option<&Child> {
    s.keys[..s.len]
        .iter()
        .rposition(|&k| k < b)
        .and_then(|i| s.children[i].as_ref())
}

fn sorted_add<const N: usize>(s: &mut Sorted<N>, b: u8, child: Child) {
    let at = s.keys[..s.len].partition_point(|&k| k < b);
    for i in (at..s.len).rev() {
        s.keys[i + 1] = s.keys[i];
        s.children[i + 1] = s.children[i].take();
    }
    s.keys[at] = b;
    s.children[at] = Some(child);
    s.len += 1;
}

fn sorted_remove<const N: usize>(s: &mut Sorted<N>, b: u8) -> Option<Child> {
    let at = s.pos(b)?;
    let out = s.children[at].take();
    for i in at + 1..s.len {
        s.keys[i - 1] = s.keys[i];
        s.children[i - 1] = s.children[i].take();
    }
    s.len -= 1;
    out
}

fn sorted_drain<const N: usize>(s: &mut Sorted<N>, out: &mut Vec<(u8, Child)>) {
    for i in 0..s.len {
        out.push((s.keys[i], s.children[i].take().unwrap()));
    }
    s.len = 0;
}

fn max_leaf(mut c: &Child) -> Option<(u64, usize)> {
    loop {
        match c {
            Child::Leaf(k, v) => return Some((*k, *v)),
            Child::Node(n) => c = n.body.max()?,
        }
    }
}

fn floor_in(c: &Child, key: u64, kb: &[u8; KEY_BYTES], depth: usize) -> Option<(u64, usize)> {
    match c {
        Child::Leaf(k, v) => (*k <= key).then_some((*k, *v)),
        Child::Node(n) => {
            let end = depth + n.prefix_len;
            match n.prefix[..n.prefix_len].cmp(&kb[depth..end]) {
                Ordering::Less => max_leaf(c),
                Ordering::Greater => None,
                Ordering::Equal => {
                    let b = kb[end];
                    if let Some(found) = n.body.find(b).and_then(|child| floor_in(child, key, kb, end + 1)) {
                        return Some(found);
                    }
                    n.body.pred(b).and_then(max_leaf)
                }
            }
        }
    }
}

fn insert_in(slot: &mut Child, key: u64, value: usize, depth: usize) -> Option<usize> {
    let kb = key.to_be_bytes();
    match slot {
        Child::Leaf(k, v) if *k == key => Some(std::mem::replace(v, value)),
        Child::Leaf(k, _) => {
            let ob = k.to_be_bytes();
            let mut p = depth;
            while kb[p] == ob[p] {
                p += 1;
            }
            let mut node = Inner {
                prefix: [0; KEY_BYTES],
                prefix_len: p - depth,
                body: Body::new4(),
            };
            node.prefix[..p - depth].copy_from_slice(&kb[depth..p]);
            let old = std::mem::replace(slot, Child::Leaf(0, 0));
            node.body.add(ob[p], old);
            node.body.add(kb[p], Child::Leaf(key, value));
            *slot = Child::Node(Box::new(node));
            None
        }
        Child::Node(n) => {
            let mismatch = (0..n.prefix_len).find(|&i| n.prefix[i] != kb[depth + i]);
            if let Some(m) = mismatch {
                let mut parent = Inner {
                    prefix: [0; KEY_BYTES],
                    prefix_len: m,
                    body: Body::new4(),
                };
                parent.prefix[..m].copy_from_slice(&n.prefix[..m]);
                let old_byte = n.prefix[m];
                let rest = n.prefix_len - m - 1;
                n.prefix.copy_within(m + 1..m + 1 + rest, 0);
                n.prefix_len = rest;
                let old = std::mem::replace(slot, Child::Leaf(0, 0));
                parent.body.add(old_byte, old);
                parent.body.add(kb[depth + m], Child::Leaf(key, value));
                *slot = Child::Node(Box::new(parent));
                return None;
            }
            let end = depth + n.prefix_len;
            match n.body.find_mut(kb[end]) {
                Some(child) => insert_in(child, key, value, end + 1),
                None => {
                    n.body.add(kb[end], Child::Leaf(key, value));
                    None
                }
            }
        }
    }
}

/// Replaces a node left with one child by that child.
fn collapse(slot: &mut Child) {
    let Child::Node(n) = slot else { return };
    if n.body.len() != 1 {
        return;
    }
    let (byte, only) = n.body.drain().pop().unwrap();
    *slot = match only {
        Child::Leaf(..) => only,
        Child::Node(mut c) => {
            let mut prefix = [0; KEY_BYTES];
            let mut len = 0;
            for &b in n.prefix[..n.prefix_len]
                .iter()
                .chain(std::iter::once(&byte))
                .chain(&c.prefix[..c.prefix_len])
            {
                prefix[len] = b;
                len += 1;
            }
            c.prefix = prefix;
            c.prefix_len = len;
            Child::Node(c)
        }
    };
}

fn remove_in(n: &mut Inner, key: u64, depth: usize) -> Option<usize> {
    let kb = key.to_be_bytes();
    if n.prefix[..n.prefix_len] != kb[depth..depth + n.prefix_len] {
        return None;
    }
    let end = depth + n.prefix_len;
    let b = kb[end];
    match n.body.find_mut(b)? {
        Child::Leaf(k, _) if *k == key => match n.body.remove(b) {
            Some(Child::Leaf(_, v)) => Some(v),
            _ => unreachable!(),
        },
        Child::Leaf(..) => None,
        child @ Child::Node(_) => {
            let Child::Node(inner) = child else { unreachable!() };
            let out = remove_in(inner, key, end + 1);
            if out.is_some() {
                collapse(child);
            }
            out
        }
    }
}

fn node_bytes(c: &Child) -> usize {
    match c {
        Child::Leaf(..) => 0,
        Child::Node(n) => {
            let mut total = size_of::<Inner>() + n.body.bytes();
            n.body.for_each(&mut |c| total += node_bytes(c));
            total
        }
    }
}

fn collect_keys(c: &Child, out: &mut Vec<u64>) {
    match c {
        Child::Leaf(k, _) => out.push(*k),
        Child::Node(n) => n.body.for_each(&mut |c| collect_keys(c, out)),
    }
}

/// Adaptive radix tree over 8-byte big-endian keys with 4/16/48/256-way
/// nodes, lazy leaf expansion and full stored prefixes.
#[derive(Default)]
pub struct AdaptiveRadixTree {
    root: Option<Child>,
    len: usize,
}

impl AdaptiveRadixTree {
    pub fn new() -> Self {
        Self::default()
    }
}

impl std::fmt::Debug for AdaptiveRadixTree {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdaptiveRadixTree").field("len", &self.len).finish()
    }
}

impl AnchorMap for AdaptiveRadixTree {
    fn insert(&mut self, key: u64, value: usize) -> Option<usize> {
        let old = match &mut self.root {
            None => {
                self.root = Some(Child::Leaf(key, value));
                None
            }
            Some(root) => insert_in(root, key, value, 0),
        };
        if old.is_none() {
            self.len += 1;
        }
        old
    }

    fn remove(&mut self, key: u64) -> Option<usize> {
        let out = match &mut self.root {
            None => None,
            Some(Child::Leaf(k, v)) if *k == key => {
                let v = *v;
                self.root = None;
                Some(v)
            }
            Some(Child::Leaf(..)) => None,
            Some(root @ Child::Node(_)) => {
                let Child::Node(n) = root else { unreachable!() };
                let out = remove_in(n, key, 0);
                if out.is_some() {
                    collapse(root);
                }
                out
            }
        };
        if out.is_some() {
            self.len -= 1;
        }
        out
    }

    fn get(&self, key: u64) -> Option<usize> {
        self.floor(key).filter(|&(k, _)| k == key).map(|(_, v)| v)
    }

    fn floor(&self, key: u64) -> Option<(u64, usize)> {
        floor_in(self.root.as_ref()?, key, &key.to_be_bytes(), 0)
    }

    fn len(&self) -> usize {
        self.len
    }

    fn keys(&self) -> Vec<u64> {
        let mut out = Vec::with_capacity(self.len);
        if let Some(root) = &self.root {
            collect_keys(root, &mut out);
        }
        out
    }

    fn memory_bytes(&self) -> usize {
        size_of::<Self>() + self.root.as_ref().map_or(0, node_bytes)
    }
}

/// A node of the leaf list as seen by [`correct`].
pub trait ListNode: Copy {
    fn anchor(&self) -> u64;
    fn next(&self) -> Option<Self>;
    fn is_deleted(&self) -> bool;
}

/// Walks right from `start` to the node whose span contains `key`.
/// Returns `None` when a deleted node is met; the caller looks up again.
pub fn correct<N: ListNode>(start: N, key: u64) -> Option<N> {
    let mut node = start;
    loop {
        if node.is_deleted() {
            return None;
        }
        match node.next() {
            Some(n) if n.anchor() <= key => node = n,
            _ => return Some(node),
        }
    }
}
