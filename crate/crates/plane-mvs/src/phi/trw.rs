//! Min-sum message passing over the 4-connected hypothesis grid.

use super::{pairwise_energy, PhiConfig};

/// One grid pixel's candidate depths with their unary energies.
#[derive(Debug, Clone, PartialEq)]
pub struct GridNode {
    pub labels: Vec<f64>,
    pub unary: Vec<f64>,
}

/// Pairwise undirected model over a pixel grid. Pixels without candidates
/// carry no node; edges connect present direct neighbors only.
#[derive(Debug)]
pub struct GridGraph {
    width: usize,
    height: usize,
    nodes: Vec<Option<GridNode>>,
}

/// Neighbor offsets in sweep order: left, up, right, down. The reverse of
/// direction `d` is `(d + 2) % 4`.
const DIRS: [(isize, isize); 4] = [(-1, 0), (0, -1), (1, 0), (0, 1)];

impl GridGraph {
    pub fn new(width: usize, height: usize, nodes: Vec<Option<GridNode>>) -> Self {
        assert_eq!(nodes.len(), width * height, "node count mismatch");
        for node in nodes.iter().flatten() {
            assert!(!node.labels.is_empty(), "nodes need at least one label");
            assert_eq!(node.labels.len(), node.unary.len());
        }
        Self {
            width,
            height,
            nodes,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn node(&self, x: usize, y: usize) -> Option<&GridNode> {
        self.nodes[y * self.width + x].as_ref()
    }

    fn neighbor(&self, x: usize, y: usize, dir: usize) -> Option<usize> {
        let nx = x as isize + DIRS[dir].0;
        let ny = y as isize + DIRS[dir].1;
        if nx < 0 || ny < 0 || nx >= self.width as isize || ny >= self.height as isize {
            return None;
        }
        let idx = ny as usize * self.width + nx as usize;
        self.nodes[idx].as_ref().map(|_| idx)
    }

    /// Total energy of a labeling: unaries plus every present edge once.
    pub fn labeling_energy(&self, labeling: &[Option<usize>], cfg: &PhiConfig) -> f64 {
        let mut energy = 0.0;
        for y in 0..self.height {
            for x in 0..self.width {
                let idx = y * self.width + x;
                let Some(node) = self.nodes[idx].as_ref() else {
                    continue;
                };
                let label = labeling[idx].expect("present nodes must be labeled");
                energy += node.unary[label];
                for dir in [2, 3] {
                    let Some(n_idx) = self.neighbor(x, y, dir) else {
                        continue;
                    };
                    let n_node = self.nodes[n_idx].as_ref().unwrap();
                    let n_label = labeling[n_idx].expect("present nodes must be labeled");
                    energy +=
                        pairwise_energy(node.labels[label], n_node.labels[n_label], cfg);
                }
            }
        }
        energy
    }
}

/// Sequential tree-reweighted min-sum decoding.
///
/// Each full iteration sweeps the nodes forward (sending right/down
/// messages) and backward (left/up). Per-node reweighting uses
/// `1 / max(forward degree, backward degree)`, which is 1 on chains, where
/// the sweep reduces to exact belief propagation, and 1/2 across grids.
/// Returns the per-node argmin of final beliefs, lowest label on ties;
/// absent nodes stay `None`.
pub fn decode_map(graph: &GridGraph, cfg: &PhiConfig) -> Vec<Option<usize>> {
    let w = graph.width;
    let h = graph.height;
    // msgs[idx][dir] is the message INTO node idx from its neighbor in
    // direction dir, one entry per label of idx.
    let mut msgs: Vec<[Vec<f64>; 4]> = graph
        .nodes
        .iter()
        .map(|n| match n {
            Some(node) => core::array::from_fn(|_| vec![0.0; node.labels.len()]),
            None => Default::default(),
        })
        .collect();
    let gamma: Vec<f64> = (0..w * h)
        .map(|idx| {
            let (x, y) = (idx % w, idx / w);
            if graph.nodes[idx].is_none() {
                return 0.0;
            }
            let bwd = [0, 1]
                .iter()
                .filter(|&&d| graph.neighbor(x, y, d).is_some())
                .count();
            let fwd = [2, 3]
                .iter()
                .filter(|&&d| graph.neighbor(x, y, d).is_some())
                .count();
            match fwd.max(bwd) {
                0 => 0.0,
                n => 1.0 / n as f64,
            }
        })
        .collect();

    let send = |msgs: &mut Vec<[Vec<f64>; 4]>, idx: usize, out_dirs: [usize; 2]| {
        let (x, y) = (idx % w, idx / w);
        let Some(node) = graph.nodes[idx].as_ref() else {
            return;
        };
        let belief: Vec<f64> = node
            .unary
            .iter()
            .enumerate()
            .map(|(i, &u)| u + msgs[idx].iter().map(|m| m[i]).sum::<f64>())
            .collect();
        for dir in out_dirs {
            let Some(t_idx) = graph.neighbor(x, y, dir) else {
                continue;
            };
            let t_node = graph.nodes[t_idx].as_ref().unwrap();
            let incoming = &msgs[idx][dir];
            let mut out: Vec<f64> = t_node
                .labels
                .iter()
                .map(|&lt| {
                    node.labels
                        .iter()
                        .enumerate()
                        .map(|(i, &ls)| {
                            gamma[idx] * belief[i] - incoming[i] + pairwise_energy(ls, lt, cfg)
                        })
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            let floor = out.iter().copied().fold(f64::INFINITY, f64::min);
            for m in &mut out {
                *m -= floor;
            }
            msgs[t_idx][(dir + 2) % 4] = out;
        }
    };

    for _ in 0..cfg.trw_iterations {
        for idx in 0..w * h {
            send(&mut msgs, idx, [2, 3]);
        }
        for idx in (0..w * h).rev() {
            send(&mut msgs, idx, [0, 1]);
        }
    }

    graph
        .nodes
        .iter()
        .enumerate()
        .map(|(idx, n)| {
            let node = n.as_ref()?;
            let mut best = 0;
            let mut best_e = f64::INFINITY;
            for i in 0..node.labels.len() {
                let e = node.unary[i] + msgs[idx].iter().map(|m| m[i]).sum::<f64>();
                if e < best_e {
                    best_e = e;
                    best = i;
                }
            }
            Some(best)
        })
        .collect()
}
