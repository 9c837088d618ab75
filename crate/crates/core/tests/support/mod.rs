//! Brute-force simplicial homology oracle for small point clouds.
//!
//! Independent of the production reduction path: builds the full Rips
//! complex at every distinct filtration value and derives barcodes from
//! persistent Betti numbers computed as GF(2) matrix ranks.

use sparseview_core::homology::{Barcode, DistanceMatrix};

/// Rank of a dense GF(2) matrix given as rows of bool.
pub fn gf2_rank(mut rows: Vec<Vec<bool>>) -> usize {
    let ncols = rows.first().map_or(0, |r| r.len());
    let mut rank = 0;
    for col in 0..ncols {
        if let Some(pivot) = (rank..rows.len()).find(|&r| rows[r][col]) {
            rows.swap(rank, pivot);
            let pivot_row = rows[rank].clone();
            for (r, row) in rows.iter_mut().enumerate() {
                if r != rank && row[col] {
                    for (a, b) in row.iter_mut().zip(&pivot_row) {
                        *a ^= b;
                    }
                }
            }
            rank += 1;
        }
    }
    rank
}

fn all_edges(dm: &DistanceMatrix) -> Vec<(usize, usize, f64)> {
    let n = dm.n;
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            edges.push((i, j, dm.get(i, j)));
        }
    }
    edges
}

/// Vertex/edge boundary matrix of the complex at threshold eps
/// (rows = vertices, cols = edges with length <= eps).
fn boundary1(dm: &DistanceMatrix, eps: f64) -> Vec<Vec<bool>> {
    let n = dm.n;
    let edges: Vec<_> = all_edges(dm).into_iter().filter(|e| e.2 <= eps).collect();
    let mut rows = vec![vec![false; edges.len()]; n];
    for (c, &(i, j, _)) in edges.iter().enumerate() {
        rows[i][c] = true;
        rows[j][c] = true;
    }
    rows
}

/// Edge/triangle boundary matrix at threshold eps, with a row for EVERY edge
/// of the full complex (so rows can later be restricted by a smaller eps).
pub fn boundary2_full_rows(dm: &DistanceMatrix, eps: f64) -> (Vec<Vec<bool>>, Vec<f64>) {
    let n = dm.n;
    let edges = all_edges(dm);
    let eidx = |i: usize, j: usize| edges.iter().position(|&(a, b, _)| a == i && b == j).unwrap();
    let mut cols = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                let v = dm.get(i, j).max(dm.get(i, k)).max(dm.get(j, k));
                if v <= eps {
                    cols.push([eidx(i, j), eidx(i, k), eidx(j, k)]);
                }
            }
        }
    }
    let mut rows = vec![vec![false; cols.len()]; edges.len()];
    for (c, tri) in cols.iter().enumerate() {
        for &e in tri {
            rows[e][c] = true;
        }
    }
    (rows, edges.iter().map(|e| e.2).collect())
}

fn beta0_at(dm: &DistanceMatrix, eps: f64) -> usize {
    dm.n - gf2_rank(boundary1(dm, eps))
}

/// dim Z_1(K_i): cycle space of the graph at eps_i.
fn z1_dim(dm: &DistanceMatrix, eps: f64) -> usize {
    let edges = all_edges(dm).into_iter().filter(|e| e.2 <= eps).count();
    edges - gf2_rank(boundary1(dm, eps))
}

/// dim (Z_1(K_i) intersect B_1(K_j)): boundaries of K_j triangles supported
/// on K_i edges. Equals rank(M) - rank(M restricted to rows outside K_i).
fn b1_in_ki_dim(dm: &DistanceMatrix, eps_i: f64, eps_j: f64) -> usize {
    let (rows, edge_len) = boundary2_full_rows(dm, eps_j);
    let full = gf2_rank(rows.clone());
    let outside: Vec<Vec<bool>> = rows
        .into_iter()
        .zip(&edge_len)
        .filter(|(_, &len)| len > eps_i)
        .map(|(r, _)| r)
        .collect();
    full - gf2_rank(outside)
}

/// Persistent Betti number beta_p^{i,j} = rank of H_p(K_i) -> H_p(K_j).
fn persistent_betti(dm: &DistanceMatrix, dim: usize, eps_i: f64, eps_j: f64) -> usize {
    match dim {
        // the map on H_0 is surjective when the vertex set is shared
        0 => beta0_at(dm, eps_j),
        1 => z1_dim(dm, eps_i) - b1_in_ki_dim(dm, eps_i, eps_j),
        _ => unreachable!("oracle covers H0/H1 only"),
    }
}

/// Barcodes extracted from persistent Betti numbers by inclusion-exclusion
/// over the distinct filtration values.
pub fn brute_force_barcodes(dm: &DistanceMatrix) -> Vec<Barcode> {
    let mut values: Vec<f64> = vec![0.0];
    values.extend(all_edges(dm).iter().map(|e| e.2));
    values.sort_by(|a, b| a.total_cmp(b));
    values.dedup();
    let last = values.len() - 1;

    let mut barcodes = Vec::new();
    for dim in 0..=1usize {
        // beta[i][j] for i <= j over the value grid
        let betti = |i: usize, j: usize| persistent_betti(dm, dim, values[i], values[j]);
        let mut intervals: Vec<(f64, f64)> = Vec::new();
        for i in 0..values.len() {
            for j in (i + 1)..values.len() {
                // multiplicity of [values[i], values[j])
                let mut m = betti(i, j - 1) as isize - betti(i, j) as isize;
                if i > 0 {
                    m -= betti(i - 1, j - 1) as isize - betti(i - 1, j) as isize;
                }
                for _ in 0..m {
                    intervals.push((values[i], values[j]));
                }
            }
            // intervals still alive at the top of the filtration
            let mut inf = betti(i, last) as isize;
            if i > 0 {
                inf -= betti(i - 1, last) as isize;
            }
            for _ in 0..inf {
                intervals.push((values[i], f64::INFINITY));
            }
        }
        intervals.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        barcodes.push(Barcode { dimension: dim, intervals });
    }
    barcodes
}

/// Sort intervals into a canonical order for comparison.
pub fn canonical(bc: &Barcode) -> Vec<(f64, f64)> {
    let mut v = bc.intervals.clone();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    v
}
