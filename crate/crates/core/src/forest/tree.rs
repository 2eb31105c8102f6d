//! CART-style decision tree growth with per-node feature sampling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{FeatureSchema, RowFeatures, TrainRow, CLASS_COUNT};
use crate::dataset::ClassId;

/// A tree node. Numeric splits send `raw[index] <= threshold` left;
/// category splits send `cluster == category` left.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf {
        class: ClassId,
    },
    NumericSplit {
        raw_index: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    CategorySplit {
        category: u16,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    pub fn predict(&self, features: &RowFeatures) -> ClassId {
        match self {
            Node::Leaf { class } => *class,
            Node::NumericSplit {
                raw_index,
                threshold,
                left,
                right,
            } => {
                if features.raw[*raw_index] <= *threshold {
                    left.predict(features)
                } else {
                    right.predict(features)
                }
            }
            Node::CategorySplit {
                category,
                left,
                right,
            } => {
                if features.cluster == Some(*category) {
                    left.predict(features)
                } else {
                    right.predict(features)
                }
            }
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Node::Leaf { .. } => 1,
            Node::NumericSplit { left, right, .. } | Node::CategorySplit { left, right, .. } => {
                1 + left.node_count() + right.node_count()
            }
        }
    }
}

pub(super) struct GrowSettings {
    pub features_per_split: usize,
    pub min_node_size: usize,
    pub max_depth: Option<usize>,
}

#[derive(Clone, Copy)]
enum FeatureRef {
    Cluster,
    Raw(usize),
}

fn feature_ref(schema: &FeatureSchema, index: usize) -> FeatureRef {
    if schema.cluster_categories.is_some() {
        if index == 0 {
            FeatureRef::Cluster
        } else {
            FeatureRef::Raw(index - 1)
        }
    } else {
        FeatureRef::Raw(index)
    }
}

type Counts = [u64; CLASS_COUNT];

fn class_counts(rows: &[TrainRow], indices: &[usize]) -> Counts {
    let mut counts = [0u64; CLASS_COUNT];
    for &i in indices {
        counts[rows[i].label.index()] += 1;
    }
    counts
}

/// Majority class; ties go to the lowest class id.
fn majority_class(counts: &Counts) -> ClassId {
    let mut best = 0usize;
    for (index, &count) in counts.iter().enumerate() {
        if count > counts[best] {
            best = index;
        }
    }
    ClassId::new(best as u8 + 1).expect("index below CLASS_COUNT")
}

fn gini(counts: &Counts, n: u64) -> f64 {
    let n = n as f64;
    1.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 / n;
            p * p
        })
        .sum::<f64>()
}

fn weighted_children_gini(left: &Counts, n_left: u64, right: &Counts, n_right: u64) -> f64 {
    let n = (n_left + n_right) as f64;
    (n_left as f64 * gini(left, n_left) + n_right as f64 * gini(right, n_right)) / n
}

enum SplitChoice {
    Numeric { raw_index: usize, threshold: f64 },
    Category { category: u16 },
}

/// Samples `m` distinct feature indices from `0..total`, in draw order.
fn sample_features(rng: &mut ChaCha8Rng, total: usize, m: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..total).collect();
    for i in 0..m {
        let j = rng.gen_range(i..total);
        pool.swap(i, j);
    }
    pool.truncate(m);
    pool
}

/// Recursive CART growth over the in-bag multiset (`indices` may repeat).
/// Splits minimize the weighted Gini impurity of the children; a node
/// becomes a leaf when pure, too small, too deep, or when no sampled
/// split reduces impurity.
pub(super) fn grow(
    rows: &[TrainRow],
    schema: &FeatureSchema,
    indices: &[usize],
    depth: usize,
    settings: &GrowSettings,
    rng: &mut ChaCha8Rng,
) -> Node {
    let counts = class_counts(rows, indices);
    let n = indices.len() as u64;
    let majority = majority_class(&counts);

    let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
    let too_small = indices.len() < settings.min_node_size * 2;
    let too_deep = settings.max_depth.is_some_and(|limit| depth >= limit);
    if pure || too_small || too_deep {
        return Node::Leaf { class: majority };
    }

    let parent_gini = gini(&counts, n);
    let features = sample_features(rng, schema.total_features(), settings.features_per_split);

    let mut best: Option<(f64, SplitChoice)> = None;
    for feature in features {
        match feature_ref(schema, feature) {
            FeatureRef::Raw(raw_index) => {
                scan_numeric(rows, indices, raw_index, &counts, &mut best);
            }
            FeatureRef::Cluster => {
                scan_categories(rows, indices, schema, &counts, &mut best);
            }
        }
    }

    let Some((score, choice)) = best else {
        return Node::Leaf { class: majority };
    };
    if score.is_nan() || score >= parent_gini {
        return Node::Leaf { class: majority };
    }

    let (left_indices, right_indices): (Vec<usize>, Vec<usize>) = match &choice {
        SplitChoice::Numeric {
            raw_index,
            threshold,
        } => indices
            .iter()
            .partition(|&&i| rows[i].features.raw[*raw_index] <= *threshold),
        SplitChoice::Category { category } => indices
            .iter()
            .partition(|&&i| rows[i].features.cluster == Some(*category)),
    };

    let left = grow(rows, schema, &left_indices, depth + 1, settings, rng);
    let right = grow(rows, schema, &right_indices, depth + 1, settings, rng);
    match choice {
        SplitChoice::Numeric {
            raw_index,
            threshold,
        } => Node::NumericSplit {
            raw_index,
            threshold,
            left: Box::new(left),
            right: Box::new(right),
        },
        SplitChoice::Category { category } => Node::CategorySplit {
            category,
            left: Box::new(left),
            right: Box::new(right),
        },
    }
}

/// Sweeps midpoints between consecutive distinct values of one raw
/// feature. Strict improvement keeps the first-best split, so tie
/// handling is deterministic.
fn scan_numeric(
    rows: &[TrainRow],
    indices: &[usize],
    raw_index: usize,
    total_counts: &Counts,
    best: &mut Option<(f64, SplitChoice)>,
) {
    let mut pairs: Vec<(f64, usize)> = indices
        .iter()
        .map(|&i| (rows[i].features.raw[raw_index], rows[i].label.index()))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    let n = pairs.len() as u64;
    let mut left = [0u64; CLASS_COUNT];
    let mut right = *total_counts;
    let mut n_left = 0u64;
    for window in 0..pairs.len() - 1 {
        let (value, class_index) = pairs[window];
        left[class_index] += 1;
        right[class_index] -= 1;
        n_left += 1;
        let next_value = pairs[window + 1].0;
        if value == next_value {
            continue;
        }
        let score = weighted_children_gini(&left, n_left, &right, n - n_left);
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            *best = Some((
                score,
                SplitChoice::Numeric {
                    raw_index,
                    threshold: (value + next_value) / 2.0,
                },
            ));
        }
    }
}

/// Tries a one-vs-rest split on every cluster category present.
fn scan_categories(
    rows: &[TrainRow],
    indices: &[usize],
    schema: &FeatureSchema,
    total_counts: &Counts,
    best: &mut Option<(f64, SplitChoice)>,
) {
    let categories = schema.cluster_categories.unwrap_or(0);
    let mut per_category: Vec<Counts> = vec![[0u64; CLASS_COUNT]; categories];
    for &i in indices {
        if let Some(cat) = rows[i].features.cluster {
            per_category[usize::from(cat)][rows[i].label.index()] += 1;
        }
    }
    let n = indices.len() as u64;
    for (category, left) in per_category.iter().enumerate() {
        let n_left: u64 = left.iter().sum();
        if n_left == 0 || n_left == n {
            continue;
        }
        let mut right = *total_counts;
        for (r, l) in right.iter_mut().zip(left) {
            *r -= l;
        }
        let score = weighted_children_gini(left, n_left, &right, n - n_left);
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            *best = Some((
                score,
                SplitChoice::Category {
                    category: category as u16,
                },
            ));
        }
    }
}

/// Writes the tree as a preorder node list, one node per line.
pub(super) fn write_nodes(node: &Node, out: &mut String) {
    match node {
        Node::Leaf { class } => {
            out.push_str(&format!("leaf {class}\n"));
        }
        Node::NumericSplit {
            raw_index,
            threshold,
            left,
            right,
        } => {
            out.push_str(&format!("split raw {raw_index} {threshold}\n"));
            write_nodes(left, out);
            write_nodes(right, out);
        }
        Node::CategorySplit {
            category,
            left,
            right,
        } => {
            out.push_str(&format!("split cluster {category}\n"));
            write_nodes(left, out);
            write_nodes(right, out);
        }
    }
}

/// Rebuilds a tree from its preorder node list.
pub(super) fn parse_nodes<'a, I>(lines: &mut I) -> Result<Node, String>
where
    I: Iterator<Item = &'a str>,
{
    let line = lines.next().ok_or("unexpected end of node list")?;
    let fields: Vec<&str> = line.split_whitespace().collect();
    match fields.as_slice() {
        ["leaf", class] => {
            let class: u8 = class.parse().map_err(|_| format!("bad class in {line:?}"))?;
            let class = ClassId::new(class).map_err(|e| e.to_string())?;
            Ok(Node::Leaf { class })
        }
        ["split", "raw", index, threshold] => {
            let raw_index: usize = index
                .parse()
                .map_err(|_| format!("bad feature index in {line:?}"))?;
            let threshold: f64 = threshold
                .parse()
                .map_err(|_| format!("bad threshold in {line:?}"))?;
            let left = Box::new(parse_nodes(lines)?);
            let right = Box::new(parse_nodes(lines)?);
            Ok(Node::NumericSplit {
                raw_index,
                threshold,
                left,
                right,
            })
        }
        ["split", "cluster", category] => {
            let category: u16 = category
                .parse()
                .map_err(|_| format!("bad category in {line:?}"))?;
            let left = Box::new(parse_nodes(lines)?);
            let right = Box::new(parse_nodes(lines)?);
            Ok(Node::CategorySplit {
                category,
                left,
                right,
            })
        }
        _ => Err(format!("unrecognized node line {line:?}")),
    }
}
