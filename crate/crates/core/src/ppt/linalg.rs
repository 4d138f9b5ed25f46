//! Small dense LU and a Gauss-Seidel fallback for large sparse systems.

/// LU factorization with partial pivoting of a row-major square matrix.
#[derive(Clone, Debug)]
pub struct DenseLu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

/// Pivots smaller than this (relative to the largest entry) mark the matrix
/// as singular.
const PIVOT_TOL: f64 = 1e-11;

impl DenseLu {
    /// Factors `a` in place. Returns `None` for (numerically) singular input.
    pub fn factor(n: usize, mut a: Vec<f64>) -> Option<Self> {
        assert_eq!(a.len(), n * n);
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if n > 0 && scale == 0.0 {
            return None;
        }
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, a[i * n + k].abs()))
                .fold((k, -1.0), |best, c| if c.1 > best.1 { c } else { best });
            if pmax <= PIVOT_TOL * scale {
                return None;
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = a[k * n + k];
            let (head, tail) = a.split_at_mut((k + 1) * n);
            let row_k = &head[k * n..(k + 1) * n];
            for row_i in tail.chunks_exact_mut(n) {
                let f = row_i[k] / pivot;
                if f == 0.0 {
                    continue;
                }
                row_i[k] = f;
                for j in k + 1..n {
                    row_i[j] -= f * row_k[j];
                }
            }
        }
        Some(Self { n, lu: a, perm })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b`, returning `x`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            let s: f64 = row.iter().zip(&x[..i]).map(|(l, v)| l * v).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n..(i + 1) * n];
            let s: f64 = row[i + 1..]
                .iter()
                .zip(&x[i + 1..])
                .map(|(u, v)| u * v)
                .sum();
            x[i] = (x[i] - s) / row[i];
        }
        x
    }
}

/// Gauss-Seidel for `A x = b` with `A` given as sparse rows that include
/// the diagonal. Stops when the max-norm residual drops below `tol`;
/// returns `None` after `max_iter` sweeps without convergence.
pub fn gauss_seidel(
    rows: &[Vec<(usize, f64)>],
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Option<Vec<f64>> {
    let n = rows.len();
    let mut x = vec![0.0; n];
    let diag: Vec<f64> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| r.iter().filter(|e| e.0 == i).map(|e| e.1).sum())
        .collect();
    if diag.contains(&0.0) {
        return None;
    }
    for _ in 0..max_iter {
        for i in 0..n {
            let off: f64 = rows[i]
                .iter()
                .filter(|e| e.0 != i)
                .map(|e| e.1 * x[e.0])
                .sum();
            x[i] = (b[i] - off) / diag[i];
        }
        let residual = rows
            .iter()
            .zip(b)
            .map(|(r, bi)| (r.iter().map(|e| e.1 * x[e.0]).sum::<f64>() - bi).abs())
            .fold(0.0, f64::max);
        if !residual.is_finite() {
            return None;
        }
        if residual < tol {
            return Some(x);
        }
    }
    None
}
