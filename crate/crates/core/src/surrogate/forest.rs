//! Bagged regression trees with variance-reduction splits.

use std::cmp::Ordering;
use std::io::{Read, Write};

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::TrainingSet;
use crate::binio;
use crate::design::RngSeed;
use crate::error::{arg_err, Error, Result};

const LEAF: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub trees: usize,
    /// Candidate features per split; `None` means `max(1, ⌊d/3⌋)`.
    pub mtry: Option<usize>,
    /// Nodes with at most this many rows are not split.
    pub node_size: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { trees: 500, mtry: None, node_size: 5 }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trees == 0 {
            return arg_err("rf trees must be at least 1");
        }
        if self.node_size == 0 {
            return arg_err("rf node_size must be at least 1");
        }
        if self.mtry == Some(0) {
            return arg_err("rf mtry must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Node {
    /// Split feature, or `LEAF`.
    feature: u32,
    /// Threshold for splits (go left when `x <= value`), mean for leaves.
    value: f64,
    left: u32,
    right: u32,
}

#[derive(Clone, Debug, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            let n = &self.nodes[i];
            if n.feature == LEAF {
                return n.value;
            }
            i = if x[n.feature as usize] <= n.value { n.left } else { n.right } as usize;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Forest {
    dim: usize,
    trees: Vec<Tree>,
}

impl Forest {
    /// Rows are put in a canonical order (inputs, then target) before
    /// bootstrap indices are drawn, so the fit does not depend on the order
    /// in which the caller supplies them. Tree `b` draws from `seed.split(b)`.
    pub fn fit(ts: &TrainingSet, config: &ForestConfig, seed: RngSeed) -> Result<Forest> {
        config.validate()?;
        let n = ts.len();
        let d = ts.dim();
        let mut order: Vec<usize> = (0..n).collect();
        let row_cmp = |a: usize, b: usize| {
            (0..d)
                .map(|j| ts.inputs()[(a, j)].total_cmp(&ts.inputs()[(b, j)]))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
                .then(ts.targets()[a].total_cmp(&ts.targets()[b]))
        };
        order.sort_by(|&a, &b| row_cmp(a, b));
        let x: Vec<f64> = order.iter().flat_map(|&i| ts.inputs().row(i).iter().copied().collect::<Vec<_>>()).collect();
        let y: Vec<f64> = order.iter().map(|&i| ts.targets()[i]).collect();
        let mtry = config.mtry.unwrap_or((d / 3).max(1)).min(d);

        let trees = (0..config.trees)
            .into_par_iter()
            .map(|b| {
                let mut rng = seed.split(b as u64).rng();
                let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                grow(&x, &y, d, rows, mtry, config.node_size, &mut rng)
            })
            .collect();
        Ok(Forest { dim: d, trees })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tree_count(&self) -> usize {
        self.trees.len()
    }

    pub(crate) fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub(crate) fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_u64(w, self.trees.len() as u64)?;
        for t in &self.trees {
            binio::write_u64(w, t.nodes.len() as u64)?;
            let mut buf = Vec::with_capacity(t.nodes.len() * 24);
            for n in &t.nodes {
                buf.extend_from_slice(&(n.feature as u64).to_le_bytes());
                buf.extend_from_slice(&n.value.to_le_bytes());
                buf.extend_from_slice(&((n.left as u64) | ((n.right as u64) << 32)).to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub(crate) fn read_from<R: Read>(r: &mut R, dim: usize) -> Result<Self> {
        let count = binio::read_usize(r, 1 << 24, "tree count")?;
        if count == 0 {
            return Err(Error::Format("forest without trees".into()));
        }
        let mut trees = Vec::with_capacity(count);
        for _ in 0..count {
            let len = binio::read_usize(r, u32::MAX as usize, "node count")?;
            let mut nodes = Vec::with_capacity(len);
            for _ in 0..len {
                let feature = binio::read_u64(r)?;
                let value = binio::read_f64(r)?;
                let links = binio::read_u64(r)?;
                nodes.push(Node {
                    feature: if feature == LEAF as u64 { LEAF } else { feature as u32 },
                    value,
                    left: links as u32,
                    right: (links >> 32) as u32,
                });
            }
            // children always follow their parent, which also rules out cycles
            let ok = !nodes.is_empty()
                && nodes.iter().enumerate().all(|(i, n)| {
                    n.feature == LEAF
                        || ((n.feature as usize) < dim
                            && (n.left as usize) > i
                            && (n.right as usize) > i
                            && (n.left as usize) < len
                            && (n.right as usize) < len)
                });
            if !ok {
                return Err(Error::Format("malformed tree section".into()));
            }
            trees.push(Tree { nodes });
        }
        Ok(Forest { dim, trees })
    }
}

fn grow<R: Rng>(x: &[f64], y: &[f64], d: usize, rows: Vec<usize>, mtry: usize, node_size: usize, rng: &mut R) -> Tree {
    let mut nodes = vec![Node { feature: LEAF, value: 0.0, left: 0, right: 0 }];
    let mut stack = vec![(0usize, rows)];
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    while let Some((slot, rows)) = stack.pop() {
        let m = rows.len();
        let sum: f64 = rows.iter().map(|&i| y[i]).sum();
        let mean = sum / m as f64;
        let pure = rows.iter().all(|&i| y[i] == y[rows[0]]);
        nodes[slot] = Node { feature: LEAF, value: mean, left: 0, right: 0 };
        if m <= node_size || pure {
            continue;
        }
        // best split over a random subset of features
        let mut best: Option<(f64, usize, f64)> = None;
        for f in sample(rng, d, mtry).iter() {
            pairs.clear();
            pairs.extend(rows.iter().map(|&i| (x[i * d + f], y[i])));
            pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let mut left_sum = 0.0;
            for k in 0..m - 1 {
                left_sum += pairs[k].1;
                if pairs[k].0 == pairs[k + 1].0 {
                    continue;
                }
                let nl = (k + 1) as f64;
                let nr = (m - k - 1) as f64;
                let right_sum = sum - left_sum;
                let score = left_sum * left_sum / nl + right_sum * right_sum / nr;
                if best.is_none_or(|(b, _, _)| score > b) {
                    let lo = pairs[k].0;
                    let hi = pairs[k + 1].0;
                    let mid = 0.5 * (lo + hi);
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some((score, f, threshold));
                }
            }
        }
        let Some((score, f, threshold)) = best else { continue };
        // only split when it reduces the node's squared error
        if score <= sum * sum / m as f64 {
            continue;
        }
        let (left, right): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i * d + f] <= threshold);
        let li = nodes.len();
        nodes.push(Node { feature: LEAF, value: 0.0, left: 0, right: 0 });
        nodes.push(Node { feature: LEAF, value: 0.0, left: 0, right: 0 });
        nodes[slot] = Node { feature: f as u32, value: threshold, left: li as u32, right: li as u32 + 1 };
        stack.push((li + 1, right));
        stack.push((li, left));
    }
    Tree { nodes }
}
