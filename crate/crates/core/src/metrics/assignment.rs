//! One-to-one matching between predicted and gold spans.

/// Maximum-total-credit assignment of rows to columns (Hungarian method on
/// the square-padded cost matrix). Returns `(row, col)` pairs; rows or
/// columns beyond the smaller side stay unmatched.
pub fn optimal_assignment(credit: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = credit.len();
    let cols = credit.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let n = rows.max(cols);
    let top = credit.iter().flatten().copied().fold(0.0, f64::max);
    let cost = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            top - credit[i][j]
        } else {
            top
        }
    };

    // 1-based potentials formulation; p[j] is the row matched to column j.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=n)
        .filter(|&j| p[j] != 0 && p[j] <= rows && j <= cols)
        .map(|j| (p[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Greedy matching in row order: each row takes the first free column with
/// positive credit equal to the row's best remaining credit.
pub fn greedy_assignment(credit: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let cols = credit.first().map_or(0, Vec::len);
    let mut taken = vec![false; cols];
    let mut pairs = Vec::new();
    for (i, row) in credit.iter().enumerate() {
        let best = (0..cols)
            .filter(|&j| !taken[j] && row[j] > 0.0)
            .fold(None, |acc: Option<usize>, j| match acc {
                Some(b) if row[b] >= row[j] => Some(b),
                _ => Some(j),
            });
        if let Some(j) = best {
            taken[j] = true;
            pairs.push((i, j));
        }
    }
    pairs
}

pub fn total_credit(credit: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(i, j)| credit[i][j]).sum()
}
