//! Vietoris-Rips persistent homology (H0, H1) over image point clouds.
//!
//! Dimension-0 intervals come from minimum-spanning-forest merge events
//! (union-find over edges sorted ascending, elder rule). Dimension-1
//! intervals come from GF(2) column reduction of the edge/triangle boundary
//! matrix with the standard persistence pairing. Simplices are built up to
//! dimension 2, so reported homology stops at H1.

use crate::error::{Error, Result};
use crate::image::Image;
use serde::{Deserialize, Serialize};

/// Flattened images (or any vectors) treated as points in R^d.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub dim: usize,
    pub points: Vec<Vec<f64>>,
}

/// Each image becomes one point by row-major flattening.
pub fn image_point_cloud(images: &[Image]) -> Result<PointCloud> {
    if images.len() < 2 {
        return Err(Error::InvalidSize(format!(
            "need >= 2 images, got {}",
            images.len()
        )));
    }
    let n = images[0].size();
    for img in images {
        if img.size() != n {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} vs {n}x{n}",
                img.size(),
                img.size()
            )));
        }
    }
    Ok(PointCloud {
        dim: n * n,
        points: images.iter().map(|im| im.data().to_vec()).collect(),
    })
}

/// Symmetric pairwise distances normalized by the maximum distance.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub n: usize,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_entries(n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::ShapeMismatch("distance matrix size".into()));
        }
        let dm = DistanceMatrix { n, entries };
        for i in 0..n {
            if dm.get(i, i) != 0.0 {
                return Err(Error::OutOfDomain("nonzero diagonal".into()));
            }
            for j in 0..n {
                if dm.get(i, j) != dm.get(j, i) || !dm.get(i, j).is_finite() {
                    return Err(Error::OutOfDomain("asymmetric or non-finite entry".into()));
                }
            }
        }
        Ok(dm)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }
}

/// Euclidean pairwise distances divided by the maximum pairwise distance.
pub fn normalized_distances(cloud: &PointCloud) -> Result<DistanceMatrix> {
    let n = cloud.points.len();
    if n < 2 {
        return Err(Error::InvalidSize("need >= 2 points".into()));
    }
    let mut entries = vec![0.0f64; n * n];
    let mut max = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = cloud.points[i]
                .iter()
                .zip(&cloud.points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            entries[i * n + j] = d;
            entries[j * n + i] = d;
            max = max.max(d);
        }
    }
    if max == 0.0 {
        return Err(Error::DegenerateCloud);
    }
    for e in entries.iter_mut() {
        *e /= max;
    }
    DistanceMatrix::from_entries(n, entries)
}

/// Persistence intervals of one homology dimension; death may be infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Barcode {
    pub dimension: usize,
    pub intervals: Vec<(f64, f64)>,
}

impl Barcode {
    pub fn total_persistence(&self) -> f64 {
        self.intervals
            .iter()
            .filter(|(_, d)| d.is_finite())
            .map(|(b, d)| d - b)
            .sum()
    }
}

pub const DEFAULT_POINT_CAP: usize = 256;

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != x {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }
}

fn sorted_edges(dm: &DistanceMatrix) -> Vec<(f64, usize, usize)> {
    let n = dm.n;
    let mut edges = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            edges.push((dm.get(i, j), i, j));
        }
    }
    // ties broken lexicographically by (i, j)
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    edges
}

fn symmetric_difference(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Rips barcodes in dimensions 0 and 1. `cap` bounds the point count since
/// triangle enumeration is O(n^3); pass [`DEFAULT_POINT_CAP`] normally.
pub fn rips_persistence(dm: &DistanceMatrix, cap: usize) -> Result<Vec<Barcode>> {
    let n = dm.n;
    if n > cap {
        return Err(Error::CloudTooLarge { n, cap });
    }
    let edges = sorted_edges(dm);

    // H0: Kruskal merge events; all vertices are born at 0. Elder rule with
    // all-equal births: the component whose root has the smaller index
    // survives.
    let mut uf = UnionFind::new(n);
    let mut h0 = Vec::with_capacity(n.saturating_sub(1));
    // filtration index of each edge among all edges, for the H1 reduction
    let mut edge_index = std::collections::HashMap::new();
    for (idx, &(len, i, j)) in edges.iter().enumerate() {
        edge_index.insert((i, j), idx);
        let (ri, rj) = (uf.find(i), uf.find(j));
        if ri != rj {
            let (survivor, dying) = if ri < rj { (ri, rj) } else { (rj, ri) };
            uf.parent[dying] = survivor;
            if len > 0.0 {
                h0.push((0.0, len));
            }
        }
    }
    h0.sort_by(|a: &(f64, f64), b| a.1.total_cmp(&b.1));
    let mut h0_intervals = h0;
    if n > 0 {
        h0_intervals.push((0.0, f64::INFINITY));
    }

    // H1: triangles in filtration order, reduced against earlier columns.
    let mut triangles = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                let value = dm.get(i, j).max(dm.get(i, k)).max(dm.get(j, k));
                triangles.push((value, i, j, k));
            }
        }
    }
    triangles.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });

    let mut h1 = Vec::new();
    let mut low_owner: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    let mut reduced_columns: Vec<Vec<usize>> = Vec::new();
    for &(value, i, j, k) in &triangles {
        let mut col = vec![
            edge_index[&(i, j)],
            edge_index[&(i, k)],
            edge_index[&(j, k)],
        ];
        col.sort_unstable();
        loop {
            let Some(&low) = col.last() else { break };
            match low_owner.get(&low) {
                Some(&owner) => col = symmetric_difference(&col, &reduced_columns[owner]),
                None => break,
            }
        }
        if let Some(&low) = col.last() {
            let birth = edges[low].0;
            if birth < value {
                h1.push((birth, value));
            }
            low_owner.insert(low, reduced_columns.len());
            reduced_columns.push(col);
        } else {
            reduced_columns.push(col);
        }
    }
    h1.sort_by(|a: &(f64, f64), b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    Ok(vec![
        Barcode {
            dimension: 0,
            intervals: h0_intervals,
        },
        Barcode {
            dimension: 1,
            intervals: h1,
        },
    ])
}

/// Betti numbers sampled on an epsilon grid; intervals are half-open
/// [birth, death).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BettiCurve {
    pub dimension: usize,
    pub grid: Vec<f64>,
    pub values: Vec<usize>,
}

pub fn betti_curve(barcodes: &[Barcode], grid: &[f64]) -> Vec<BettiCurve> {
    barcodes
        .iter()
        .map(|bc| {
            let values = grid
                .iter()
                .map(|&eps| {
                    bc.intervals
                        .iter()
                        .filter(|&&(b, d)| b <= eps && eps < d)
                        .count()
                })
                .collect();
            BettiCurve {
                dimension: bc.dimension,
                grid: grid.to_vec(),
                values,
            }
        })
        .collect()
}

/// Uniform grid of `samples` epsilon values on [0, 1].
pub fn unit_grid(samples: usize) -> Vec<f64> {
    (0..samples)
        .map(|i| i as f64 / (samples - 1) as f64)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    FirstSimpler,
    SecondSimpler,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub beta0_area: [f64; 2],
    pub h1_total_persistence: [f64; 2],
    pub verdict: Verdict,
}

fn trapezoid_area(curve: &BettiCurve) -> f64 {
    curve
        .grid
        .windows(2)
        .zip(curve.values.windows(2))
        .map(|(g, v)| (g[1] - g[0]) * (v[0] + v[1]) as f64 / 2.0)
        .sum()
}

fn find_dim(curves: &[BettiCurve], dim: usize) -> Option<&BettiCurve> {
    curves.iter().find(|c| c.dimension == dim)
}

/// Ordinal comparison of two clouds' topological complexity: smaller area
/// under beta_0 (faster collapse to one cluster) and no-greater total H1
/// persistence together declare one cloud simpler.
pub fn complexity_verdict(
    curves_a: &[BettiCurve],
    curves_b: &[BettiCurve],
    h1_persistence_a: f64,
    h1_persistence_b: f64,
) -> Result<ComplexityReport> {
    let (b0a, b0b) = match (find_dim(curves_a, 0), find_dim(curves_b, 0)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::InvalidConfig("missing beta_0 curve".into())),
    };
    if b0a.grid != b0b.grid {
        return Err(Error::ShapeMismatch("epsilon grids differ".into()));
    }
    let area_a = trapezoid_area(b0a);
    let area_b = trapezoid_area(b0b);
    let verdict = if area_a <= area_b
        && h1_persistence_a <= h1_persistence_b
        && (area_a < area_b || h1_persistence_a < h1_persistence_b)
    {
        Verdict::FirstSimpler
    } else if area_b <= area_a
        && h1_persistence_b <= h1_persistence_a
        && (area_b < area_a || h1_persistence_b < h1_persistence_a)
    {
        Verdict::SecondSimpler
    } else {
        Verdict::Inconclusive
    };
    Ok(ComplexityReport {
        beta0_area: [area_a, area_b],
        h1_total_persistence: [h1_persistence_a, h1_persistence_b],
        verdict,
    })
}
