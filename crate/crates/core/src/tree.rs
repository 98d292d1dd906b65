//! Axis-aligned decision tree over RGB triplets.
//!
//! Inference routes a triplet with plain channel comparisons (`value <=
//! threshold` goes left) down to a leaf holding a label distribution; no
//! color distance is ever computed. Leaves keep every label seen during
//! training with its frequency, so ambiguous regions of color space report
//! several names.

use std::fmt::{self, Write as _};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::color::{Channel, Rgb};
use crate::error::{Error, Result};
use crate::survey::ColorNameDataset;

pub const FORMAT_NAME: &str = "huesearch-tree";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitCriterion {
    #[default]
    Gini,
    Entropy,
}

impl SplitCriterion {
    fn impurity(self, counts: &[u32], n: u32) -> f64 {
        if n == 0 {
            return 0.0;
        }
        let n = f64::from(n);
        match self {
            SplitCriterion::Gini => {
                let sum_sq: f64 = counts
                    .iter()
                    .map(|&c| {
                        let p = f64::from(c) / n;
                        p * p
                    })
                    .sum();
                1.0 - sum_sq
            }
            SplitCriterion::Entropy => counts
                .iter()
                .filter(|&&c| c > 0)
                .map(|&c| {
                    let p = f64::from(c) / n;
                    -p * p.log2()
                })
                .sum(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeTrainParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub split_criterion: SplitCriterion,
    /// Recorded with the tree; induction itself has no random component.
    pub seed: u64,
}

impl Default for TreeTrainParams {
    fn default() -> Self {
        TreeTrainParams {
            max_depth: 16,
            min_samples_leaf: 32,
            split_criterion: SplitCriterion::Gini,
            seed: 0,
        }
    }
}

impl TreeTrainParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth < 1 {
            return Err(Error::param("max_depth must be at least 1"));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::param("min_samples_leaf must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeMetadata {
    pub format: String,
    pub version: u32,
    pub labels: Vec<String>,
    pub params: TreeTrainParams,
    pub fingerprint: String,
    pub training_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    Split {
        channel: Channel,
        threshold: f64,
        left: u32,
        right: u32,
    },
    /// `(label index, probability)` ranked by descending probability.
    Leaf { distribution: Vec<(u16, f64)> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub metadata: TreeMetadata,
    nodes: Vec<Node>,
}

/// Ranked label probabilities for one triplet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorPrediction {
    pub ranked: Vec<(String, f64)>,
}

impl ColorPrediction {
    pub fn top(&self) -> (&str, f64) {
        let (l, p) = &self.ranked[0];
        (l, *p)
    }

    pub fn label(&self) -> &str {
        &self.ranked[0].0
    }
}

/// One comparison on the root-to-leaf path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathStep {
    pub channel: Channel,
    pub threshold: f64,
    pub went_left: bool,
}

impl fmt::Display for PathStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = if self.went_left { "<=" } else { ">" };
        write!(f, "{} {op} {}", self.channel, self.threshold)
    }
}

fn rank(counts: &[u32]) -> Vec<(u16, f64)> {
    let n: u32 = counts.iter().sum();
    let mut dist: Vec<(u16, f64)> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(i, &c)| (i as u16, f64::from(c) / f64::from(n)))
        .collect();
    sort_ranked(&mut dist);
    dist
}

// Labels are indexed in lexicographic order, so index order is label order.
fn sort_ranked(dist: &mut [(u16, f64)]) {
    dist.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

struct Builder<'a> {
    rgb: Vec<[u8; 3]>,
    y: Vec<u16>,
    n_labels: usize,
    params: &'a TreeTrainParams,
    nodes: Vec<Node>,
    hist: Vec<u32>,
}

struct Split {
    channel: Channel,
    threshold: f64,
    cut: u8,
    impurity: f64,
}

impl Builder<'_> {
    fn counts(&self, idx: &[u32]) -> Vec<u32> {
        let mut counts = vec![0u32; self.n_labels];
        for &i in idx {
            counts[usize::from(self.y[i as usize])] += 1;
        }
        counts
    }

    fn build(&mut self, idx: &mut [u32], depth: usize) -> u32 {
        let id = self.nodes.len() as u32;
        let counts = self.counts(idx);
        let n = idx.len() as u32;
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let min_leaf = self.params.min_samples_leaf;

        let split = if depth >= self.params.max_depth || pure || idx.len() < 2 * min_leaf {
            None
        } else {
            let parent = self.params.split_criterion.impurity(&counts, n);
            self.best_split(idx)
                .filter(|s| s.impurity < parent - 1e-12)
        };

        let Some(split) = split else {
            self.nodes.push(Node::Leaf {
                distribution: rank(&counts),
            });
            return id;
        };

        self.nodes.push(Node::Split {
            channel: split.channel,
            threshold: split.threshold,
            left: 0,
            right: 0,
        });
        let c = split.channel.index();
        let mut mid = 0;
        for j in 0..idx.len() {
            if self.rgb[idx[j] as usize][c] <= split.cut {
                idx.swap(mid, j);
                mid += 1;
            }
        }
        let (lo, hi) = idx.split_at_mut(mid);
        let left = self.build(lo, depth + 1);
        let right = self.build(hi, depth + 1);
        if let Node::Split {
            left: l, right: r, ..
        } = &mut self.nodes[id as usize]
        {
            *l = left;
            *r = right;
        }
        id
    }

    /// Exhaustive search over channels and midpoints between consecutive
    /// distinct values; the first minimum in (channel, threshold) order wins.
    fn best_split(&mut self, idx: &[u32]) -> Option<Split> {
        let l = self.n_labels;
        let n = idx.len() as u32;
        let min_leaf = self.params.min_samples_leaf as u32;
        let criterion = self.params.split_criterion;
        let mut best: Option<Split> = None;

        for channel in Channel::ALL {
            let c = channel.index();
            self.hist.iter_mut().for_each(|h| *h = 0);
            let mut per_value = [0u32; 256];
            for &i in idx {
                let i = i as usize;
                let v = usize::from(self.rgb[i][c]);
                self.hist[v * l + usize::from(self.y[i])] += 1;
                per_value[v] += 1;
            }
            let present: Vec<usize> = (0..256).filter(|&v| per_value[v] > 0).collect();
            let mut total = vec![0u32; l];
            for &v in &present {
                for (t, h) in total.iter_mut().zip(&self.hist[v * l..(v + 1) * l]) {
                    *t += h;
                }
            }

            let mut left = vec![0u32; l];
            let mut right = total;
            let mut n_left = 0u32;
            for w in present.windows(2) {
                let v = w[0];
                for ((a, b), h) in left
                    .iter_mut()
                    .zip(right.iter_mut())
                    .zip(&self.hist[v * l..(v + 1) * l])
                {
                    *a += h;
                    *b -= h;
                }
                n_left += per_value[v];
                let n_right = n - n_left;
                if n_left < min_leaf || n_right < min_leaf {
                    continue;
                }
                let weighted = (f64::from(n_left) * criterion.impurity(&left, n_left)
                    + f64::from(n_right) * criterion.impurity(&right, n_right))
                    / f64::from(n);
                if best.as_ref().is_none_or(|b| weighted < b.impurity) {
                    best = Some(Split {
                        channel,
                        threshold: (v + w[1]) as f64 / 2.0,
                        cut: v as u8,
                        impurity: weighted,
                    });
                }
            }
        }
        best
    }
}

/// Greedy top-down CART induction on a prepared dataset.
pub fn train_tree(d: &ColorNameDataset, params: &TreeTrainParams) -> Result<DecisionTree> {
    params.validate()?;
    if d.is_empty() {
        return Err(Error::EmptyDataset("cannot train a tree".into()));
    }
    let labels: Vec<String> = d.labels().map(str::to_string).collect();
    if labels.len() > usize::from(u16::MAX) {
        return Err(Error::param("too many distinct labels"));
    }
    let position = |l: &str| labels.binary_search_by(|x| x.as_str().cmp(l)).unwrap() as u16;

    let mut builder = Builder {
        rgb: d.samples().iter().map(|s| s.rgb.0).collect(),
        y: d.samples().iter().map(|s| position(&s.label)).collect(),
        n_labels: labels.len(),
        params,
        nodes: Vec::new(),
        hist: vec![0; 256 * labels.len()],
    };
    let mut idx: Vec<u32> = (0..d.len() as u32).collect();
    builder.build(&mut idx, 0);

    Ok(DecisionTree {
        metadata: TreeMetadata {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            labels,
            params: params.clone(),
            fingerprint: d.fingerprint(),
            training_samples: d.len(),
        },
        nodes: builder.nodes,
    })
}

impl DecisionTree {
    /// A tree that always answers with one label.
    pub fn constant(label: &str) -> Self {
        DecisionTree {
            metadata: TreeMetadata {
                format: FORMAT_NAME.into(),
                version: FORMAT_VERSION,
                labels: vec![label.to_string()],
                params: TreeTrainParams::default(),
                fingerprint: String::new(),
                training_samples: 0,
            },
            nodes: vec![Node::Leaf {
                distribution: vec![(0, 1.0)],
            }],
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn labels(&self) -> &[String] {
        &self.metadata.labels
    }

    /// Index of the leaf `rgb` is routed to.
    #[inline]
    pub fn leaf_index(&self, rgb: Rgb) -> usize {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    channel,
                    threshold,
                    left,
                    right,
                } => {
                    i = if f64::from(rgb.channel(*channel)) <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
                Node::Leaf { .. } => return i,
            }
        }
    }

    fn leaf_distribution(&self, rgb: Rgb) -> &[(u16, f64)] {
        match &self.nodes[self.leaf_index(rgb)] {
            Node::Leaf { distribution } => distribution,
            Node::Split { .. } => unreachable!("leaf_index returns leaves"),
        }
    }

    /// Top-1 label.
    #[inline]
    pub fn predict(&self, rgb: Rgb) -> &str {
        &self.metadata.labels[usize::from(self.leaf_distribution(rgb)[0].0)]
    }

    pub fn classify(&self, rgb: Rgb) -> ColorPrediction {
        ColorPrediction {
            ranked: self
                .leaf_distribution(rgb)
                .iter()
                .map(|&(l, p)| (self.metadata.labels[usize::from(l)].clone(), p))
                .collect(),
        }
    }

    /// The comparisons made while routing `rgb`.
    pub fn decision_path(&self, rgb: Rgb) -> Vec<PathStep> {
        let mut steps = Vec::new();
        let mut i = 0usize;
        while let Node::Split {
            channel,
            threshold,
            left,
            right,
        } = &self.nodes[i]
        {
            let went_left = f64::from(rgb.channel(*channel)) <= *threshold;
            steps.push(PathStep {
                channel: *channel,
                threshold: *threshold,
                went_left,
            });
            i = if went_left { *left } else { *right } as usize;
        }
        steps
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    /// Fraction of samples whose top-1 prediction equals their label.
    pub fn accuracy(&self, d: &ColorNameDataset) -> f64 {
        if d.is_empty() {
            return 0.0;
        }
        let hits = d
            .samples()
            .iter()
            .filter(|s| self.predict(s.rgb) == &*s.label)
            .count();
        hits as f64 / d.len() as f64
    }

    /// Graphviz rendering; leaves list their three most likely labels.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph color_tree {\n  node [fontname=\"Helvetica\"];\n");
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Split {
                    channel,
                    threshold,
                    left,
                    right,
                } => {
                    let _ = writeln!(out, "  n{i} [shape=box, label=\"{channel} <= {threshold}\"];");
                    let _ = writeln!(out, "  n{i} -> n{left} [label=\"yes\"];");
                    let _ = writeln!(out, "  n{i} -> n{right} [label=\"no\"];");
                }
                Node::Leaf { distribution } => {
                    let text: Vec<String> = distribution
                        .iter()
                        .take(3)
                        .map(|&(l, p)| format!("{} {:.2}", self.metadata.labels[usize::from(l)], p))
                        .collect();
                    let _ = writeln!(
                        out,
                        "  n{i} [shape=ellipse, label=\"{}\"];",
                        text.join("\\n").replace('"', "'")
                    );
                }
            }
        }
        out.push_str("}\n");
        out
    }

    fn validate(&mut self) -> Result<()> {
        let bad = |m: String| Err(Error::TreeFormat(m));
        if self.metadata.format != FORMAT_NAME {
            return bad(format!("not a color tree (format '{}')", self.metadata.format));
        }
        if self.metadata.version != FORMAT_VERSION {
            return bad(format!(
                "unsupported version {} (expected {FORMAT_VERSION})",
                self.metadata.version
            ));
        }
        if self.nodes.is_empty() {
            return bad("no nodes".into());
        }
        let n_labels = self.metadata.labels.len();
        let mut parents = vec![0u32; self.nodes.len()];
        for (i, node) in self.nodes.iter_mut().enumerate() {
            match node {
                Node::Split {
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    if !(0.0..=255.0).contains(threshold) {
                        return bad(format!("node {i}: threshold {threshold} outside [0,255]"));
                    }
                    for child in [*left, *right] {
                        let c = child as usize;
                        if c <= i || c >= parents.len() {
                            return bad(format!("node {i}: invalid child index {child}"));
                        }
                        parents[c] += 1;
                    }
                }
                Node::Leaf { distribution } => {
                    if distribution.is_empty() {
                        return bad(format!("leaf {i} has an empty distribution"));
                    }
                    if let Some(&(l, _)) = distribution.iter().find(|(l, _)| usize::from(*l) >= n_labels) {
                        return bad(format!("leaf {i} references unknown label {l}"));
                    }
                    if distribution.iter().any(|&(_, p)| !(0.0..=1.0).contains(&p)) {
                        return bad(format!("leaf {i} has a probability outside [0,1]"));
                    }
                    let sum: f64 = distribution.iter().map(|&(_, p)| p).sum();
                    if (sum - 1.0).abs() > 1e-9 {
                        return bad(format!("leaf {i} probabilities sum to {sum}"));
                    }
                    sort_ranked(distribution);
                }
            }
        }
        if let Some(i) = (1..parents.len()).find(|&i| parents[i] != 1) {
            return bad(format!("node {i} is not referenced exactly once"));
        }
        Ok(())
    }
}

pub fn save_tree<W: Write>(tree: &DecisionTree, sink: W) -> Result<()> {
    serde_json::to_writer_pretty(sink, tree)?;
    Ok(())
}

pub fn load_tree<R: Read>(source: R) -> Result<DecisionTree> {
    let mut tree: DecisionTree =
        serde_json::from_reader(source).map_err(|e| Error::TreeFormat(e.to_string()))?;
    tree.validate()?;
    Ok(tree)
}

pub fn save_tree_file(tree: &DecisionTree, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    save_tree(tree, &mut buf)?;
    buf.push(b'\n');
    crate::util::write_atomic(path, &buf)
}

pub fn load_tree_file(path: &Path) -> Result<DecisionTree> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_tree(std::io::BufReader::new(file))
}
