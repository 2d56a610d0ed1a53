//! Symmetric sparse matrices and an up-looking sparse Cholesky
//! factorisation with a geometric nested dissection ordering.

use crate::error::{Error, Result};
use crate::lattice::Vec2;

const NONE: usize = usize::MAX;

/// Compressed sparse rows with full symmetric storage.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl CsrMatrix {
    /// Sums duplicate entries.
    pub fn from_triplets(n: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0; n + 1];
        let mut indices = Vec::with_capacity(t.len());
        let mut data: Vec<f64> = Vec::with_capacity(t.len());
        let mut last = (NONE, NONE);
        for (i, j, v) in t {
            if (i, j) == last {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(j);
                data.push(v);
                indptr[i + 1] += 1;
                last = (i, j);
            }
        }
        for i in 0..n {
            indptr[i + 1] += indptr[i];
        }
        CsrMatrix { n, indptr, indices, data }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.indptr[i]..self.indptr[i + 1]).map(move |p| (self.indices[p], self.data[p]))
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            y[i] = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).filter(|(j, _)| *j == i).map(|(_, v)| v).sum()).collect()
    }
}

/// Fill-reducing order by recursive coordinate bisection: each half is
/// ordered first, the vertex separator last.
pub fn nested_dissection(a: &CsrMatrix, coords: &[Vec2]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.n);
    let mut tag = vec![0usize; a.n];
    let mut counter = 0;
    let all: Vec<usize> = (0..a.n).collect();
    dissect(a, coords, all, &mut out, &mut tag, &mut counter);
    out
}

fn dissect(a: &CsrMatrix, coords: &[Vec2], mut nodes: Vec<usize>, out: &mut Vec<usize>, tag: &mut [usize], counter: &mut usize) {
    if nodes.len() <= 48 {
        out.extend(nodes);
        return;
    }
    let (mut lo, mut hi) = (Vec2::repeat(f64::INFINITY), Vec2::repeat(f64::NEG_INFINITY));
    for &v in &nodes {
        lo = lo.inf(&coords[v]);
        hi = hi.sup(&coords[v]);
    }
    let axis = if hi.x - lo.x >= hi.y - lo.y { 0 } else { 1 };
    nodes.sort_by(|&u, &v| coords[u][axis].total_cmp(&coords[v][axis]).then(u.cmp(&v)));
    let right = nodes.split_off(nodes.len() / 2);
    *counter += 1;
    let id = *counter;
    for &v in &right {
        tag[v] = id;
    }
    let (sep, left): (Vec<usize>, Vec<usize>) =
        nodes.into_iter().partition(|&v| a.row(v).any(|(j, _)| j != v && tag[j] == id));
    dissect(a, coords, left, out, tag, counter);
    dissect(a, coords, right, out, tag, counter);
    out.extend(sep);
}

/// `P A P^T = L L^T` with `L` stored by columns, diagonal entry first.
#[derive(Clone, Debug)]
pub struct Cholesky {
    n: usize,
    perm: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &CsrMatrix, coords: &[Vec2]) -> Result<Self> {
        let n = a.n;
        let perm = nested_dissection(a, coords);
        let mut iperm = vec![0; n];
        for (k, &v) in perm.iter().enumerate() {
            iperm[v] = k;
        }
        // upper triangle of the permuted matrix, by columns
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for i in 0..n {
            for (j, v) in a.row(i) {
                let (pi, pj) = (iperm[i], iperm[j]);
                if pi <= pj {
                    cols[pj].push((pi, v));
                }
            }
        }
        let mut parent = vec![NONE; n];
        let mut ancestor = vec![NONE; n];
        for k in 0..n {
            for &(i0, _) in &cols[k] {
                let mut i = i0;
                while i != NONE && i < k {
                    let next = ancestor[i];
                    ancestor[i] = k;
                    if next == NONE {
                        parent[i] = k;
                    }
                    i = next;
                }
            }
        }
        let mut mark = vec![NONE; n];
        let mut stack = vec![0usize; n];
        let mut pattern = vec![0usize; n];
        let ereach = |k: usize, mark: &mut [usize], stack: &mut [usize], pattern: &mut [usize]| -> usize {
            let mut top = n;
            mark[k] = k;
            for &(i0, _) in &cols[k] {
                let mut len = 0;
                let mut i = i0;
                while i < k && mark[i] != k {
                    stack[len] = i;
                    len += 1;
                    mark[i] = k;
                    i = parent[i];
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    pattern[top] = stack[len];
                }
            }
            top
        };
        let mut counts = vec![1usize; n];
        for k in 0..n {
            let top = ereach(k, &mut mark, &mut stack, &mut pattern);
            for &i in &pattern[top..n] {
                counts[i] += 1;
            }
        }
        let mut lp = vec![0; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + counts[k];
        }
        let nnz = lp[n];
        let mut li = vec![0; nnz];
        let mut lx = vec![0.0; nnz];
        let mut next: Vec<usize> = lp[..n].to_vec();
        let mut x = vec![0.0; n];
        mark.iter_mut().for_each(|m| *m = NONE);
        for k in 0..n {
            let top = ereach(k, &mut mark, &mut stack, &mut pattern);
            for &(i, v) in &cols[k] {
                x[i] += v;
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &i in &pattern[top..n] {
                let lki = x[i] / lx[lp[i]];
                x[i] = 0.0;
                for p in lp[i] + 1..next[i] {
                    x[li[p]] -= lx[p] * lki;
                }
                d -= lki * lki;
                let p = next[i];
                next[i] += 1;
                li[p] = k;
                lx[p] = lki;
            }
            if !(d > 0.0) {
                return Err(Error::Solver(format!("matrix not positive definite at pivot {k}")));
            }
            let p = next[k];
            next[k] += 1;
            li[p] = k;
            lx[p] = d.sqrt();
        }
        Ok(Cholesky { n, perm, lp, li, lx })
    }

    pub fn nnz(&self) -> usize {
        self.lp[self.n]
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let mut y: Vec<f64> = self.perm.iter().map(|&v| b[v]).collect();
        for j in 0..self.n {
            y[j] /= self.lx[self.lp[j]];
            let yj = y[j];
            for p in self.lp[j] + 1..self.lp[j + 1] {
                y[self.li[p]] -= self.lx[p] * yj;
            }
        }
        for j in (0..self.n).rev() {
            let mut s = y[j];
            for p in self.lp[j] + 1..self.lp[j + 1] {
                s -= self.lx[p] * y[self.li[p]];
            }
            y[j] = s / self.lx[self.lp[j]];
        }
        for (k, &v) in self.perm.iter().enumerate() {
            b[v] = y[k];
        }
    }
}

/// Scalar P1 stiffness matrix on the free nodes, plus a small diagonal shift.
/// Returns the matrix and the map from nodes to rows (`usize::MAX` when fixed).
pub fn p1_laplacian<'a, I>(nodes: &[Vec2], triangles: I, free: &[bool], shift: f64) -> (CsrMatrix, Vec<usize>)
where
    I: IntoIterator<Item = &'a [u32; 3]>,
{
    let mut map = vec![NONE; nodes.len()];
    let mut n = 0;
    for (v, &f) in free.iter().enumerate() {
        if f {
            map[v] = n;
            n += 1;
        }
    }
    let mut t = Vec::new();
    for tri in triangles {
        let p = tri.map(|v| nodes[v as usize]);
        let Some((g, area)) = crate::geometry::p1_gradients(&p) else { continue };
        for a in 0..3 {
            let ia = map[tri[a] as usize];
            if ia == NONE {
                continue;
            }
            for b in 0..3 {
                let ib = map[tri[b] as usize];
                if ib != NONE {
                    t.push((ia, ib, area.abs() * g[a].dot(&g[b])));
                }
            }
        }
    }
    for i in 0..n {
        t.push((i, i, shift));
    }
    (CsrMatrix::from_triplets(n, t), map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(m: usize) -> (CsrMatrix, Vec<Vec2>) {
        let idx = |i: usize, j: usize| i * m + j;
        let mut t = Vec::new();
        let mut coords = Vec::new();
        for i in 0..m {
            for j in 0..m {
                coords.push(Vec2::new(i as f64, j as f64));
                t.push((idx(i, j), idx(i, j), 4.1));
                if i + 1 < m {
                    t.push((idx(i, j), idx(i + 1, j), -1.0));
                    t.push((idx(i + 1, j), idx(i, j), -1.0));
                }
                if j + 1 < m {
                    t.push((idx(i, j), idx(i, j + 1), -1.0));
                    t.push((idx(i, j + 1), idx(i, j), -1.0));
                }
            }
        }
        (CsrMatrix::from_triplets(m * m, t), coords)
    }

    #[test]
    fn ordering_is_a_permutation() {
        let (a, c) = grid(30);
        let mut p = nested_dissection(&a, &c);
        p.sort();
        assert_eq!(p, (0..900).collect::<Vec<_>>());
    }

    #[test]
    fn cholesky_solves_grid_laplacian() {
        let (a, c) = grid(40);
        let ch = Cholesky::factor(&a, &c).unwrap();
        let x: Vec<f64> = (0..a.n).map(|i| ((i * 7) % 13) as f64 - 6.0).collect();
        let mut b = vec![0.0; a.n];
        a.matvec(&x, &mut b);
        ch.solve(&mut b);
        for (u, v) in b.iter().zip(&x) {
            assert!((u - v).abs() < 1e-10);
        }
        assert!(ch.nnz() < 40 * a.n);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = CsrMatrix::from_triplets(2, vec![(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)]);
        assert!(Cholesky::factor(&a, &[Vec2::zeros(), Vec2::x()]).is_err());
    }
}
