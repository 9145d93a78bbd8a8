//! Rank-based group tests and the paired t-test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

use crate::corpus::Category;
use crate::error::{invalid, Error, Result};

/// Significance level used to flag table cells.
pub const ALPHA: f64 = 0.05;

/// Largest pooled sample size for which Mann-Whitney uses the exact null.
pub const MW_EXACT_MAX_N: usize = 12;

/// Largest pooled sample size accepted by [`kruskal_wallis_exact`].
pub const KW_EXACT_MAX_N: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    KruskalWallis,
    MannWhitney,
    PairedT,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: TestMethod,
    pub exact: bool,
    pub tie_corrected: bool,
    pub group_sizes: Vec<usize>,
}

/// Midranks (1-based) of `values`, plus the tie term sum(t^3 - t).
pub fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut ties = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        let t = (j - i) as f64;
        ties += t * t * t - t;
        i = j;
    }
    (ranks, ties)
}

fn h_statistic(ranks: &[f64], sizes: &[usize]) -> f64 {
    let n = ranks.len() as f64;
    let mut start = 0;
    let mut sum = 0.0;
    for &s in sizes {
        let r: f64 = ranks[start..start + s].iter().sum();
        sum += r * r / s as f64;
        start += s;
    }
    12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)
}

fn check_groups(groups: &[Vec<f64>]) -> Result<()> {
    if groups.len() < 2 {
        return Err(invalid!("Kruskal-Wallis needs at least 2 groups, got {}", groups.len()));
    }
    if let Some(i) = groups.iter().position(|g| g.is_empty()) {
        return Err(invalid!("group {i} is empty"));
    }
    Ok(())
}

/// Tie-corrected H and its correction factor; `None` when every value is equal.
fn corrected_h(groups: &[Vec<f64>]) -> (Vec<f64>, Vec<usize>, Option<f64>, bool) {
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let (ranks, ties) = midranks(&pooled);
    let n = pooled.len() as f64;
    let correction = 1.0 - ties / (n * n * n - n);
    if correction <= 0.0 {
        return (ranks, sizes, None, ties > 0.0);
    }
    let h = (h_statistic(&ranks, &sizes) / correction).max(0.0);
    (ranks, sizes, Some(h), ties > 0.0)
}

/// Kruskal-Wallis H test with midranks and tie correction; p from the
/// chi-square distribution with groups - 1 degrees of freedom.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<TestResult> {
    check_groups(groups)?;
    let (_, sizes, h, tied) = corrected_h(groups);
    let (statistic, p_value) = match h {
        None => (0.0, 1.0),
        Some(h) => {
            let chi = ChiSquared::new((groups.len() - 1) as f64).map_err(|e| Error::Numerical(e.to_string()))?;
            (h, chi.sf(h).clamp(0.0, 1.0))
        }
    };
    Ok(TestResult {
        statistic,
        p_value,
        method: TestMethod::KruskalWallis,
        exact: false,
        tie_corrected: tied,
        group_sizes: sizes,
    })
}

/// Kruskal-Wallis with p from enumerating every distinct assignment of the
/// pooled ranks to groups of the observed sizes.
pub fn kruskal_wallis_exact(groups: &[Vec<f64>]) -> Result<TestResult> {
    check_groups(groups)?;
    let (ranks, sizes, h, tied) = corrected_h(groups);
    let n = ranks.len();
    if n > KW_EXACT_MAX_N {
        return Err(invalid!("exact Kruskal-Wallis supports at most {KW_EXACT_MAX_N} observations, got {n}"));
    }
    let Some(h_obs) = h else {
        return Ok(TestResult {
            statistic: 0.0,
            p_value: 1.0,
            method: TestMethod::KruskalWallis,
            exact: true,
            tie_corrected: tied,
            group_sizes: sizes,
        });
    };
    let nn = n as f64;
    let (_, ties) = midranks(&ranks);
    let correction = 1.0 - ties / (nn * nn * nn - nn);

    // assign each pooled position to a group; count arrangements by multiset recursion
    let k = sizes.len();
    let mut remaining = sizes.clone();
    let mut sums = vec![0.0; k];
    let mut hits = 0u64;
    let mut total = 0u64;
    fn recurse(
        pos: usize,
        ranks: &[f64],
        remaining: &mut [usize],
        sums: &mut [f64],
        sizes: &[usize],
        stat: &dyn Fn(&[f64]) -> f64,
        h_obs: f64,
        hits: &mut u64,
        total: &mut u64,
    ) {
        if pos == ranks.len() {
            *total += 1;
            if stat(sums) >= h_obs - 1e-9 {
                *hits += 1;
            }
            return;
        }
        for g in 0..remaining.len() {
            if remaining[g] == 0 {
                continue;
            }
            remaining[g] -= 1;
            sums[g] += ranks[pos];
            recurse(pos + 1, ranks, remaining, sums, sizes, stat, h_obs, hits, total);
            sums[g] -= ranks[pos];
            remaining[g] += 1;
        }
    }
    let stat = |sums: &[f64]| {
        let s: f64 = sums.iter().zip(&sizes).map(|(r, &m)| r * r / m as f64).sum();
        (12.0 / (nn * (nn + 1.0)) * s - 3.0 * (nn + 1.0)) / correction
    };
    recurse(0, &ranks, &mut remaining, &mut sums, &sizes, &stat, h_obs, &mut hits, &mut total);
    Ok(TestResult {
        statistic: h_obs,
        p_value: (hits as f64 / total as f64).clamp(0.0, 1.0),
        method: TestMethod::KruskalWallis,
        exact: true,
        tie_corrected: tied,
        group_sizes: sizes,
    })
}

/// Number of rank arrangements giving each value of U, for sample sizes m and n.
pub fn mann_whitney_null_counts(m: usize, n: usize) -> Vec<f64> {
    // table[i][j][u] for i x-values and j y-values
    let max_u = m * n;
    let mut prev: Vec<Vec<f64>> = vec![vec![0.0; max_u + 1]; n + 1];
    for row in prev.iter_mut() {
        row[0] = 1.0;
    }
    for i in 1..=m {
        let mut cur: Vec<Vec<f64>> = vec![vec![0.0; max_u + 1]; n + 1];
        cur[0][0] = 1.0;
        for j in 1..=n {
            for u in 0..=i * j {
                // largest value is an x (contributes j) or a y (contributes 0)
                let from_x = if u >= j { prev[j][u - j] } else { 0.0 };
                cur[j][u] = from_x + cur[j - 1][u];
            }
        }
        prev = cur;
    }
    prev[n].clone()
}

/// Two-sided Mann-Whitney U test. The reported statistic is min(U_x, U_y).
pub fn mann_whitney(x: &[f64], y: &[f64]) -> Result<TestResult> {
    if x.is_empty() || y.is_empty() {
        return Err(invalid!("Mann-Whitney needs two non-empty samples"));
    }
    let (nx, ny) = (x.len(), y.len());
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let rx: f64 = ranks[..nx].iter().sum();
    let ux = rx - (nx * (nx + 1)) as f64 / 2.0;
    let uy = (nx * ny) as f64 - ux;
    let u = ux.min(uy);
    let n = (nx + ny) as f64;

    let (p_value, exact) = if nx + ny <= MW_EXACT_MAX_N && ties == 0.0 {
        let counts = mann_whitney_null_counts(nx, ny);
        let total: f64 = counts.iter().sum();
        let below: f64 = counts[..=u.round() as usize].iter().sum();
        ((2.0 * below / total).min(1.0), true)
    } else {
        let mu = (nx * ny) as f64 / 2.0;
        let var = (nx * ny) as f64 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
        if var <= 0.0 {
            (1.0, false)
        } else {
            let z = (mu - u - 0.5) / var.sqrt();
            let normal = Normal::standard();
            ((2.0 * normal.sf(z)).clamp(0.0, 1.0), false)
        }
    };
    Ok(TestResult {
        statistic: u,
        p_value,
        method: TestMethod::MannWhitney,
        exact,
        tie_corrected: !exact && ties > 0.0,
        group_sizes: vec![nx, ny],
    })
}

/// Two-sided paired-sample t-test on a - b.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() != b.len() {
        return Err(invalid!("paired samples differ in length: {} vs {}", a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(invalid!("paired test needs at least 2 pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var <= 0.0 {
        return Err(Error::Numerical("degenerate paired test".into()));
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(TestResult {
        statistic: t,
        p_value: (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0),
        method: TestMethod::PairedT,
        exact: false,
        tie_corrected: false,
        group_sizes: vec![n, n],
    })
}

/// Frequency vectors belonging to one named group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupVectors {
    pub name: String,
    pub vectors: Vec<[usize; Category::COUNT]>,
}

impl GroupVectors {
    fn column(&self, c: usize) -> Vec<f64> {
        self.vectors.iter().map(|v| v[c] as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub category: Category,
    pub statistic: f64,
    pub p: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    /// "A vs B" for pairwise rows, or the joined group names for the omnibus row.
    pub pair: String,
    pub test: TestMethod,
    pub cells: Vec<Cell>,
}

impl TableRow {
    pub fn significant_categories(&self) -> Vec<Category> {
        self.cells.iter().filter(|c| c.significant).map(|c| c.category).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub alpha: f64,
    pub omnibus: TableRow,
    pub pairs: Vec<TableRow>,
}

fn cell(category: Category, r: &TestResult) -> Cell {
    Cell {
        category,
        statistic: r.statistic,
        p: r.p_value,
        significant: r.p_value < ALPHA,
    }
}

/// Per-category Kruskal-Wallis across all groups.
pub fn kruskal_by_category(groups: &[GroupVectors]) -> Result<TableRow> {
    let cells = Category::ALL
        .iter()
        .map(|&c| {
            let cols: Vec<Vec<f64>> = groups.iter().map(|g| g.column(c.index())).collect();
            kruskal_wallis(&cols).map(|r| cell(c, &r))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TableRow {
        pair: groups.iter().map(|g| g.name.as_str()).collect::<Vec<_>>().join(", "),
        test: TestMethod::KruskalWallis,
        cells,
    })
}

/// Per-category Mann-Whitney between two groups.
pub fn mann_whitney_by_category(a: &GroupVectors, b: &GroupVectors) -> Result<TableRow> {
    let cells = Category::ALL
        .iter()
        .map(|&c| mann_whitney(&a.column(c.index()), &b.column(c.index())).map(|r| cell(c, &r)))
        .collect::<Result<Vec<_>>>()?;
    Ok(TableRow {
        pair: format!("{} vs {}", a.name, b.name),
        test: TestMethod::MannWhitney,
        cells,
    })
}
