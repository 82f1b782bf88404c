//! Structural modifications: choosing a split point, laying entries out
//! across the resulting leaves, and gluing fragments back together when two
//! leaves merge.
//!
//! Range right bounds take part in split-point selection as exclusive ends
//! (`right + 1`). A leaf that starts at `P` owns blocks `>= P`, so a range
//! ending at `P - 1` belongs entirely to the left side and one starting at
//! `P` entirely to the right; nothing ever straddles an anchor.

use crate::error::RaskError;
use crate::log::{normal_gc, Entry, NonOverlapList};
use crate::range::Range;
use crate::value::Value;

/// Where to cut a leaf and why.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitPlan {
    pub split_point: u64,
    /// Left bounds of union components after the first.
    pub candidates: Vec<u64>,
    /// `|left entries - right entries|` for each candidate.
    pub scores: Vec<u32>,
    /// Sorted boundary multiset, filled only when the median rule was used.
    pub boundaries: Vec<u128>,
    pub p_lmax: u64,
    /// Smallest inclusive right bound.
    pub p_rmin: u64,
    pub from_union: bool,
}

/// Picks the split point for `entries` (oldest to newest, pending insert
/// last) in a leaf owning `[anchor, upper]`.
///
/// With two or more union components the candidate that best balances entry
/// counts wins; smaller keys win ties. Otherwise one of the two medians of
/// all boundaries is used, skipping a median equal to the smallest or
/// largest boundary and preferring the smaller.
pub fn select_split_point(
    entries: &[Entry],
    union: &NonOverlapList,
    anchor: u64,
    upper: u64,
) -> Result<SplitPlan, RaskError> {
    if entries.is_empty() {
        return Err(RaskError::Unsplittable);
    }
    let p_lmax = entries.iter().map(|e| e.range.left()).max().unwrap_or(anchor);
    let p_rmin = entries.iter().map(|e| e.range.right()).min().unwrap_or(upper);
    let total = union.entry_count();

    let mut plan = SplitPlan {
        split_point: 0,
        candidates: Vec::new(),
        scores: Vec::new(),
        boundaries: Vec::new(),
        p_lmax,
        p_rmin,
        from_union: false,
    };

    let mut best: Option<(u32, u64)> = None;
    for (key, before) in union.candidates() {
        let after = total - before;
        let score = before.abs_diff(after);
        plan.candidates.push(key);
        plan.scores.push(score);
        if before == 0 || after == 0 || key <= anchor || key > upper {
            continue;
        }
        if best.is_none_or(|(s, _)| score < s) {
            best = Some((score, key));
        }
    }
    if let Some((_, key)) = best {
        plan.split_point = key;
        plan.from_union = true;
        return Ok(plan);
    }

    plan.split_point = median_split_point(entries, &mut plan.boundaries)?;
    debug_assert!(plan.split_point > anchor && plan.split_point <= upper);
    Ok(plan)
}

fn median_split_point(entries: &[Entry], boundaries: &mut Vec<u128>) -> Result<u64, RaskError> {
    boundaries.clear();
    for e in entries {
        boundaries.push(e.range.left() as u128);
        boundaries.push(e.range.right() as u128 + 1);
    }
    boundaries.sort_unstable();
    let n = entries.len();
    let (lowest, highest) = (boundaries[0], boundaries[2 * n - 1]);
    [boundaries[n - 1], boundaries[n]]
        .into_iter()
        .find(|&m| m != lowest && m != highest)
        .map(|m| m as u64)
        .ok_or(RaskError::Unsplittable)
}

/// A range placed in a post-split leaf. `origin` indexes the input entry it
/// came from; the range is a piece of that entry when they differ.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Placed {
    pub range: Range,
    pub origin: usize,
}

/// Contents of one leaf produced by a split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Part {
    pub anchor: u64,
    pub upper: u64,
    pub entries: Vec<Placed>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitLayout {
    /// Left to right; the first part keeps the original anchor.
    pub parts: Vec<Part>,
    /// Whether the first cut divided any entry.
    pub divided: bool,
    /// Entry-count difference between the two halves of the first cut.
    pub imbalance: usize,
    /// Extra cuts made with the `P_rmin`/`P_lmax` rule.
    pub second_splits: usize,
    /// Cuts beyond that, made with the general selector. Never needed for a
    /// full leaf plus one pending entry.
    pub extra_splits: usize,
}

fn cut(items: &[Placed], point: u64) -> (Vec<Placed>, Vec<Placed>, bool) {
    let (mut left, mut right) = (Vec::new(), Vec::new());
    let mut divided = false;
    for p in items {
        if p.range.right() < point {
            left.push(*p);
        } else if p.range.left() >= point {
            right.push(*p);
        } else {
            divided = true;
            left.push(Placed {
                range: Range::span(p.range.left(), point - 1),
                origin: p.origin,
            });
            right.push(Placed {
                range: Range::span(point, p.range.right()),
                origin: p.origin,
            });
        }
    }
    (left, right, divided)
}

fn as_entries(items: &[Placed], source: &[Entry]) -> Vec<Entry> {
    items
        .iter()
        .map(|p| Entry::new(p.range, source[p.origin].value))
        .collect()
}

fn collect_garbage(items: &mut Vec<Placed>, source: &[Entry], tombstone: Value) {
    let (removed, _) = normal_gc(&as_entries(items, source), tombstone);
    let mut i = 0;
    items.retain(|_| {
        let keep = !removed[i];
        i += 1;
        keep
    });
}

fn split_part(part: Part, point: u64, source: &[Entry], tombstone: Value) -> (Part, Part, bool) {
    let (mut l, mut r, divided) = cut(&part.entries, point);
    // Whole entries that survived GC together still survive on either side.
    if divided {
        collect_garbage(&mut l, source, tombstone);
        collect_garbage(&mut r, source, tombstone);
    }
    (
        Part {
            anchor: part.anchor,
            upper: point - 1,
            entries: l,
        },
        Part {
            anchor: point,
            upper: part.upper,
            entries: r,
        },
        divided,
    )
}

const MAX_CUTS: usize = 64;

/// Lays `entries` out across new leaves starting with a cut at
/// `plan.split_point`. `entries` must already be garbage collected; when a
/// cut divides an entry each side is collected again on its own. A side
/// still over `capacity` is cut once more at its smallest exclusive right
/// bound (right side) or its largest left bound (left side); anything still
/// over capacity after that is cut with [`select_split_point`].
pub fn layout_split(
    entries: &[Entry],
    plan: &SplitPlan,
    anchor: u64,
    upper: u64,
    capacity: usize,
    tombstone: Value,
) -> Result<SplitLayout, RaskError> {
    let whole = Part {
        anchor,
        upper,
        entries: entries
            .iter()
            .enumerate()
            .map(|(origin, e)| Placed { range: e.range, origin })
            .collect(),
    };
    let (left, right, divided) = split_part(whole, plan.split_point, entries, tombstone);
    let imbalance = left.entries.len().abs_diff(right.entries.len());
    let mut layout = SplitLayout {
        parts: vec![left, right],
        divided,
        imbalance,
        second_splits: 0,
        extra_splits: 0,
    };

    for side in [1usize, 0] {
        let part = &layout.parts[side];
        if part.entries.len() <= capacity {
            continue;
        }
        let point = if side == 1 {
            part.entries
                .iter()
                .map(|p| p.range.right())
                .min()
                .map(|r| r.saturating_add(1))
        } else {
            part.entries.iter().map(|p| p.range.left()).max()
        };
        let Some(point) = point.filter(|&p| p > part.anchor && p <= part.upper) else {
            continue;
        };
        let part = layout.parts.remove(side);
        let (a, b, _) = split_part(part, point, entries, tombstone);
        layout.parts.insert(side, b);
        layout.parts.insert(side, a);
        layout.second_splits += 1;
    }

    let mut cuts = 0;
    while let Some(idx) = layout.parts.iter().position(|p| p.entries.len() > capacity) {
        cuts += 1;
        if cuts > MAX_CUTS {
            return Err(RaskError::SplitOverflow {
                entries: layout.parts[idx].entries.len(),
                capacity,
            });
        }
        let part = layout.parts.remove(idx);
        let part_entries = as_entries(&part.entries, entries);
        let union = NonOverlapList::from_entries(&part_entries);
        let sub = select_split_point(&part_entries, &union, part.anchor, part.upper)?;
        let (a, b, _) = split_part(part, sub.split_point, entries, tombstone);
        layout.parts.insert(idx, b);
        layout.parts.insert(idx, a);
        layout.extra_splits += 1;
    }
    Ok(layout)
}

/// Interleaves the entries of two neighboring leaves into one log, gluing
/// pairs that `try_merge` accepts.
///
/// A glued entry takes the place of both halves: it stays newer than
/// everything that preceded either half and older than everything that
/// followed either. Pairs are accepted only in an order consistent with both
/// logs. Returns the merged log and the number of glued pairs.
pub fn coalesce(
    left: &[Entry],
    right: &[Entry],
    boundary: u64,
    tombstone: Value,
    mut try_merge: impl FnMut(&Entry, &Entry) -> Option<Entry>,
) -> (Vec<Entry>, usize) {
    let mut pairs: Vec<(usize, usize, Entry)> = Vec::new();
    if boundary > 0 {
        let mut next_left = 0;
        for (j, b) in right.iter().enumerate() {
            if b.range.left() != boundary || b.value == tombstone {
                continue;
            }
            for (i, a) in left.iter().enumerate().skip(next_left) {
                if a.range.right() != boundary - 1 || a.value == tombstone {
                    continue;
                }
                if let Some(m) = try_merge(a, b) {
                    pairs.push((i, j, m));
                    next_left = i + 1;
                    break;
                }
            }
        }
    }

    let mut out = Vec::with_capacity(left.len() + right.len() - pairs.len());
    let (mut li, mut rj) = (0, 0);
    for &(i, j, m) in &pairs {
        out.extend_from_slice(&left[li..i]);
        out.extend_from_slice(&right[rj..j]);
        out.push(m);
        li = i + 1;
        rj = j + 1;
    }
    out.extend_from_slice(&left[li..]);
    out.extend_from_slice(&right[rj..]);
    (out, pairs.len())
}
