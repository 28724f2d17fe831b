//! Mann–Whitney and Kruskal–Wallis tests with naive, effective-size and
//! permutation p-values. All p-values are two-sided.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::rng;

/// Largest `m + n` for which the exact Mann–Whitney null is used.
pub const EXACT_THRESHOLD: usize = 12;

/// Fewest distinct relabelings a permutation test accepts.
pub const MIN_DISTINCT_PERMUTATIONS: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MannWhitney,
    KruskalWallis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Adjustment {
    #[default]
    None,
    Ess,
    BlockPerm,
    RegionPerm,
}

impl std::str::FromStr for Adjustment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Adjustment::None),
            "ess" => Ok(Adjustment::Ess),
            "block_perm" => Ok(Adjustment::BlockPerm),
            "region_perm" => Ok(Adjustment::RegionPerm),
            _ => Err(Error::Input(format!("unknown adjustment `{s}` (none, ess, block_perm, region_perm)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MwMode {
    Exact,
    NormalApprox,
    #[default]
    Auto,
}

impl std::str::FromStr for MwMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(MwMode::Exact),
            "normal" | "normal_approx" => Ok(MwMode::NormalApprox),
            "auto" => Ok(MwMode::Auto),
            _ => Err(Error::Input(format!("unknown mode `{s}` (exact, normal, auto)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub method: Method,
    /// `U` of the first group, or `H`.
    pub statistic: f64,
    pub p_naive: f64,
    pub p_adjusted: Option<f64>,
    pub adjustment: Adjustment,
    pub n_per_group: Vec<usize>,
    pub n_perm: usize,
    pub tie_correction_applied: bool,
    /// Naive p from the exact null rather than the normal approximation.
    pub exact: bool,
    /// Every value tied; `H = 0` and `p = 1` by convention.
    pub degenerate: bool,
    pub two_sided: bool,
}

impl TestResult {
    fn new(method: Method, statistic: f64, p_naive: f64, n_per_group: Vec<usize>) -> Self {
        TestResult {
            method,
            statistic,
            p_naive,
            p_adjusted: None,
            adjustment: Adjustment::None,
            n_per_group,
            n_perm: 0,
            tie_correction_applied: false,
            exact: false,
            degenerate: false,
            two_sided: true,
        }
    }
}

/// Average ranks, 1-based, ties sharing the mean of their positions.
pub fn rank_with_ties(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // Positions i+1 ..= j share rank (i+1+j)/2.
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// `sum (t^3 - t)` over tie blocks.
fn tie_term(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut total = 0.0;
    let mut i = 0;
    while i < v.len() {
        let mut j = i + 1;
        while j < v.len() && v[j] == v[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        total += t * t * t - t;
        i = j;
    }
    total
}

fn two_sided_normal(z: f64) -> f64 {
    let n = Normal::standard();
    (2.0 * n.sf(z.abs())).min(1.0)
}

/// `U = #{x > y} + #{x = y}/2`, from midranks.
pub fn u_statistic(x: &[f64], y: &[f64]) -> f64 {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = rank_with_ties(&pooled);
    let m = x.len() as f64;
    ranks[..x.len()].iter().sum::<f64>() - m * (m + 1.0) / 2.0
}

/// Counts of each `U` value over all `C(m+n, m)` tie-free rank assignments.
pub fn exact_u_counts(m: usize, n: usize) -> Vec<u64> {
    // f[i][j][u]: arrangements of i x's and j y's with U = u. The largest
    // element is either an x (beating all j y's) or a y.
    let mut f: Vec<Vec<Vec<u64>>> = vec![vec![Vec::new(); n + 1]; m + 1];
    for i in 0..=m {
        for j in 0..=n {
            let mut cur = vec![0u64; i * j + 1];
            if i == 0 || j == 0 {
                cur[0] = 1;
            } else {
                for (u, c) in f[i][j - 1].iter().enumerate() {
                    cur[u] += c;
                }
                for (u, c) in f[i - 1][j].iter().enumerate() {
                    cur[u + j] += c;
                }
            }
            f[i][j] = cur;
        }
    }
    std::mem::take(&mut f[m][n])
}

/// Tail-doubled exact p for an observed `U`.
pub fn exact_p(u: f64, m: usize, n: usize) -> f64 {
    let counts = exact_u_counts(m, n);
    let total: u64 = counts.iter().sum();
    let u = u.round() as usize;
    let lower: u64 = counts[..=u].iter().sum();
    let upper: u64 = counts[u..].iter().sum();
    (2.0 * lower.min(upper) as f64 / total as f64).min(1.0)
}

/// Normal score of `U` with tie-corrected variance, optionally with a 0.5
/// continuity correction toward the mean. `None` when every value is tied.
fn normal_z(u: f64, m: usize, n: usize, ties: f64, continuity: bool) -> Option<f64> {
    let (mf, nf) = (m as f64, n as f64);
    let big_n = mf + nf;
    let var = mf * nf / 12.0 * ((big_n + 1.0) - ties / (big_n * (big_n - 1.0)));
    if !(var > 0.0) {
        return None;
    }
    let d = u - mf * nf / 2.0;
    let d = if continuity { d.signum() * (d.abs() - 0.5).max(0.0) } else { d };
    Some(d / var.sqrt())
}

/// `(U, z)` with the normal approximation; `z` is `None` for all-tied data.
pub fn mann_whitney_z(x: &[f64], y: &[f64], continuity: bool) -> (f64, Option<f64>) {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let u = u_statistic(x, y);
    (u, normal_z(u, x.len(), y.len(), tie_term(&pooled), continuity))
}

pub fn mann_whitney(x: &[f64], y: &[f64], mode: MwMode) -> Result<TestResult> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::precondition("Mann-Whitney needs two nonempty groups"));
    }
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ties = tie_term(&pooled);
    let small = pooled.len() <= EXACT_THRESHOLD;
    let exact = match mode {
        MwMode::Exact if !small => {
            return Err(Error::precondition(format!(
                "exact mode supports m + n <= {EXACT_THRESHOLD}; use normal or a permutation adjustment"
            )))
        }
        MwMode::Exact if ties > 0.0 => {
            return Err(Error::precondition("exact mode needs tie-free data; use normal or a permutation adjustment"))
        }
        MwMode::Exact => true,
        MwMode::NormalApprox => false,
        MwMode::Auto => small && ties == 0.0,
    };
    let u = u_statistic(x, y);
    let mut r = TestResult::new(Method::MannWhitney, u, 1.0, vec![x.len(), y.len()]);
    r.exact = exact;
    r.tie_correction_applied = !exact && ties > 0.0;
    if exact {
        r.p_naive = exact_p(u, x.len(), y.len());
    } else {
        match normal_z(u, x.len(), y.len(), ties, true) {
            Some(z) => r.p_naive = two_sided_normal(z),
            None => r.degenerate = true,
        }
    }
    Ok(r)
}

/// Tie-corrected `H` in the between-groups form
/// `12/(N(N+1)) sum n_j (Rbar_j - Rbar)^2 / C`, with effective group sizes
/// `sizes` in place of the counts. `None` when every value is tied.
fn h_from_ranks(rank_sums: &[f64], counts: &[usize], sizes: &[f64], big_n: usize, ties: f64) -> Option<f64> {
    let nf = big_n as f64;
    let c = 1.0 - ties / (nf * nf * nf - nf);
    if !(c > 1e-15) {
        return None;
    }
    let rbar = (nf + 1.0) / 2.0;
    let between: f64 =
        rank_sums.iter().zip(counts).zip(sizes).map(|((s, &k), w)| w * (s / k as f64 - rbar).powi(2)).sum();
    Some(12.0 / (nf * (nf + 1.0)) * between / c)
}

fn chi2_sf(h: f64, df: usize) -> f64 {
    ChiSquared::new(df as f64).expect("positive df").sf(h).clamp(0.0, 1.0)
}

fn check_groups(groups: &[Vec<f64>]) -> Result<()> {
    if groups.len() < 2 {
        return Err(Error::precondition("Kruskal-Wallis needs at least 2 groups"));
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(Error::precondition("every group must be nonempty"));
    }
    if groups.iter().map(|g| g.len()).sum::<usize>() < 3 {
        return Err(Error::precondition("Kruskal-Wallis needs at least 3 observations"));
    }
    Ok(())
}

fn kw_parts(groups: &[Vec<f64>]) -> (Vec<f64>, Vec<usize>, usize, f64) {
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let ranks = rank_with_ties(&pooled);
    let mut sums = Vec::with_capacity(groups.len());
    let mut at = 0;
    for g in groups {
        sums.push(ranks[at..at + g.len()].iter().sum());
        at += g.len();
    }
    let counts = groups.iter().map(|g| g.len()).collect();
    (sums, counts, pooled.len(), tie_term(&pooled))
}

pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<TestResult> {
    check_groups(groups)?;
    let (sums, counts, big_n, ties) = kw_parts(groups);
    let sizes: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let mut r = TestResult::new(Method::KruskalWallis, 0.0, 1.0, counts.clone());
    r.tie_correction_applied = ties > 0.0;
    match h_from_ranks(&sums, &counts, &sizes, big_n, ties) {
        Some(h) => {
            r.statistic = h;
            r.p_naive = chi2_sf(h, groups.len() - 1);
        }
        None => r.degenerate = true,
    }
    Ok(r)
}

/// How `adjusted_test` corrects for dependence.
#[derive(Debug, Clone, PartialEq)]
pub enum AdjustSpec<'a> {
    /// Design effect per group; group sizes become `n_j / deff_j`.
    Ess(&'a [f64]),
    /// Shuffle group labels across regions; labels must be constant within
    /// each region. `regions[i]` is observation `i`'s region.
    RegionPerm { regions: &'a [usize], n_perm: usize, seed: u64 },
    /// Shuffle group labels among observations of the same region.
    BlockPerm { regions: &'a [usize], n_perm: usize, seed: u64 },
}

/// Naive test plus an adjusted p-value.
///
/// Two groups run Mann–Whitney, more run Kruskal–Wallis. The ESS adjustment
/// uses the normal approximation for both p-values, so a unit design effect
/// reproduces `p_naive` exactly. Permutation adjustments recompute the
/// tie-corrected `H` (for two groups, `z^2` without continuity correction)
/// under each relabeling and report `(b + 1) / (n_perm + 1)`.
pub fn adjusted_test(groups: &[Vec<f64>], spec: &AdjustSpec<'_>) -> Result<TestResult> {
    check_groups(groups)?;
    let two = groups.len() == 2;
    match spec {
        AdjustSpec::Ess(deff) => {
            if deff.len() != groups.len() {
                return Err(Error::Input(format!("{} design effects for {} groups", deff.len(), groups.len())));
            }
            if deff.iter().any(|d| !(*d >= 1.0 && d.is_finite())) {
                return Err(Error::precondition("design effects must be finite and at least 1"));
            }
            let mut r = if two {
                let mut r = mann_whitney(&groups[0], &groups[1], MwMode::NormalApprox)?;
                let (m, n) = (groups[0].len() as f64, groups[1].len() as f64);
                let (_, z) = mann_whitney_z(&groups[0], &groups[1], true);
                if let Some(z) = z {
                    let scale = ((1.0 / m + 1.0 / n) / (deff[0] / m + deff[1] / n)).sqrt();
                    r.p_adjusted = Some(two_sided_normal(z * scale));
                } else {
                    r.p_adjusted = Some(1.0);
                }
                r
            } else {
                let mut r = kruskal_wallis(groups)?;
                let (sums, counts, big_n, ties) = kw_parts(groups);
                let sizes: Vec<f64> = counts.iter().zip(*deff).map(|(&c, d)| c as f64 / d).collect();
                r.p_adjusted = Some(match h_from_ranks(&sums, &counts, &sizes, big_n, ties) {
                    Some(h) => chi2_sf(h, groups.len() - 1),
                    None => 1.0,
                });
                r
            };
            r.adjustment = Adjustment::Ess;
            Ok(r)
        }
        AdjustSpec::RegionPerm { regions, n_perm, seed } => permutation(groups, regions, *n_perm, *seed, true),
        AdjustSpec::BlockPerm { regions, n_perm, seed } => permutation(groups, regions, *n_perm, *seed, false),
    }
}

fn naive(groups: &[Vec<f64>]) -> Result<TestResult> {
    if groups.len() == 2 {
        mann_whitney(&groups[0], &groups[1], MwMode::Auto)
    } else {
        kruskal_wallis(groups)
    }
}

/// `ln(n! / prod k_i!)`.
fn ln_multinomial(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    ln_gamma(n as f64 + 1.0) - counts.iter().map(|&k| ln_gamma(k as f64 + 1.0)).sum::<f64>()
}

fn permutation(
    groups: &[Vec<f64>],
    regions: &[usize],
    n_perm: usize,
    seed: u64,
    across_regions: bool,
) -> Result<TestResult> {
    let k = groups.len();
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let big_n = pooled.len();
    if regions.len() != big_n {
        return Err(Error::Input(format!("{} region labels for {big_n} observations", regions.len())));
    }
    if n_perm == 0 {
        return Err(Error::Config { field: "n_perm".into(), reason: "must be at least 1".into() });
    }
    let labels: Vec<usize> = groups.iter().enumerate().flat_map(|(g, v)| std::iter::repeat_n(g, v.len())).collect();
    let n_regions = regions.iter().copied().max().map_or(0, |m| m + 1);

    // Exchangeable units: one label per region, or each region's members.
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_regions];
    for (i, &r) in regions.iter().enumerate() {
        members[r].push(i);
    }
    members.retain(|m| !m.is_empty());
    let ln_count = if across_regions {
        let mut per_group = vec![0usize; k];
        for m in &members {
            let g = labels[m[0]];
            if m.iter().any(|&i| labels[i] != g) {
                return Err(Error::precondition("region_perm needs the group label to be constant within each region"));
            }
            per_group[g] += 1;
        }
        ln_multinomial(&per_group)
    } else {
        members
            .iter()
            .map(|m| {
                let mut c = vec![0usize; k];
                for &i in m {
                    c[labels[i]] += 1;
                }
                ln_multinomial(&c)
            })
            .sum()
    };
    if ln_count < MIN_DISTINCT_PERMUTATIONS.ln() - 1e-9 {
        return Err(Error::InsufficientUnits(format!(
            "only {:.0} distinct relabelings, need at least {MIN_DISTINCT_PERMUTATIONS}",
            ln_count.exp()
        )));
    }

    let ranks = rank_with_ties(&pooled);
    let ties = tie_term(&pooled);
    // Region relabelings move whole regions, so group sizes follow the labels.
    let stat = |lab: &[usize]| {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (r, &g) in ranks.iter().zip(lab) {
            sums[g] += r;
            counts[g] += 1;
        }
        if counts.contains(&0) {
            return None;
        }
        let sizes: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        h_from_ranks(&sums, &counts, &sizes, big_n, ties)
    };

    let mut result = naive(groups)?;
    result.adjustment = if across_regions { Adjustment::RegionPerm } else { Adjustment::BlockPerm };
    result.n_perm = n_perm;
    let Some(observed) = stat(&labels) else {
        result.p_adjusted = Some(1.0);
        return Ok(result);
    };
    let threshold = observed - 1e-12 * observed.abs().max(1.0);

    let exceed: usize = (0..n_perm)
        .into_par_iter()
        .map(|p| {
            let mut rng = rng::stream(seed, p as u64);
            let mut lab = labels.clone();
            if across_regions {
                let mut unit: Vec<usize> = members.iter().map(|m| labels[m[0]]).collect();
                unit.shuffle(&mut rng);
                for (m, &g) in members.iter().zip(&unit) {
                    for &i in m {
                        lab[i] = g;
                    }
                }
            } else {
                for m in &members {
                    let mut block: Vec<usize> = m.iter().map(|&i| labels[i]).collect();
                    block.shuffle(&mut rng);
                    for (&i, g) in m.iter().zip(block) {
                        lab[i] = g;
                    }
                }
            }
            usize::from(stat(&lab).is_some_and(|h| h >= threshold))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    result.p_adjusted = Some((exceed as f64 + 1.0) / (n_perm as f64 + 1.0));
    Ok(result)
}

/// Splits `values` into groups by label index.
pub fn group_values(values: &[f64], labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let mut g = vec![Vec::new(); k];
    for (&v, &l) in values.iter().zip(labels) {
        g[l].push(v);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Two-sided tail-doubled p by listing every subset of positions for x.
    fn enumeration_p(x: &[f64], y: &[f64]) -> f64 {
        let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
        let big_n = pooled.len();
        let m = x.len();
        let observed = u_statistic(x, y);
        let (mut total, mut le, mut ge) = (0u64, 0u64, 0u64);
        for mask in 0u32..(1 << big_n) {
            if mask.count_ones() as usize != m {
                continue;
            }
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for (i, &v) in pooled.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    xs.push(v);
                } else {
                    ys.push(v);
                }
            }
            // Direct pair count, independent of the rank-based U.
            let u: f64 = xs
                .iter()
                .map(|a| {
                    ys.iter()
                        .map(|b| {
                            if a > b {
                                1.0
                            } else if a == b {
                                0.5
                            } else {
                                0.0
                            }
                        })
                        .sum::<f64>()
                })
                .sum();
            total += 1;
            le += u64::from(u <= observed);
            ge += u64::from(u >= observed);
        }
        (2.0 * le.min(ge) as f64 / total as f64).min(1.0)
    }

    #[test]
    fn midrank_examples() {
        assert_eq!(rank_with_ties(&[10.0, 20.0, 30.0]), vec![1.0, 2.0, 3.0]);
        assert_eq!(rank_with_ties(&[5.0, 5.0]), vec![1.5, 1.5]);
        assert_eq!(rank_with_ties(&[7.0, 7.0, 7.0, 9.0]), vec![2.0, 2.0, 2.0, 4.0]);
        assert_eq!(rank_with_ties(&[3.0, 1.0, 2.0]), vec![3.0, 1.0, 2.0]);
    }

    #[test]
    fn exact_small_example() {
        let r = mann_whitney(&[1.0, 2.0], &[3.0, 4.0], MwMode::Exact).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_naive - 1.0 / 3.0).abs() < 1e-15);
        assert!(r.exact);
        assert_eq!(exact_u_counts(2, 2), vec![1, 1, 2, 1, 1]);
    }

    #[test]
    fn identical_groups_give_p_one() {
        let x = [1.0, 2.0, 3.0, 5.0, 8.0, 13.0, 21.0];
        let r = mann_whitney(&x, &x, MwMode::NormalApprox).unwrap();
        assert_eq!(r.statistic, 24.5);
        assert_eq!(r.p_naive, 1.0);
        assert!(r.tie_correction_applied);
    }

    #[test]
    fn exact_mode_errors() {
        let big: Vec<f64> = (0..13).map(f64::from).collect();
        assert!(mann_whitney(&big[..6], &big[6..], MwMode::Exact).is_err());
        assert!(mann_whitney(&[1.0, 2.0], &[2.0, 3.0], MwMode::Exact).is_err());
        assert!(!mann_whitney(&[1.0, 2.0], &[2.0, 3.0], MwMode::Auto).unwrap().exact);
        assert!(!mann_whitney(&big[..6], &big[6..], MwMode::Auto).unwrap().exact);
    }

    #[test]
    fn kw_no_effect() {
        let g = vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]];
        let r = kruskal_wallis(&g).unwrap();
        assert!(r.statistic.abs() < 1e-12);
        assert!((r.p_naive - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kw_brute_force_three_groups() {
        let g = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        let r = kruskal_wallis(&g).unwrap();
        // Textbook form 12/(N(N+1)) sum R_j^2/n_j - 3(N+1), no ties.
        let n = 6.0;
        let h = 12.0 / (n * (n + 1.0)) * (9.0 + 49.0 + 121.0) / 2.0 - 3.0 * (n + 1.0);
        assert!((r.statistic - h).abs() < 1e-12);
        assert!((r.p_naive - (-h / 2.0).exp()).abs() < 1e-12);
        assert!(!r.tie_correction_applied);
    }

    #[test]
    fn kw_all_tied_is_degenerate() {
        let r = kruskal_wallis(&[vec![2.0, 2.0], vec![2.0]]).unwrap();
        assert!(r.degenerate);
        assert_eq!((r.statistic, r.p_naive), (0.0, 1.0));
    }

    #[test]
    fn ess_unit_deff_is_identity() {
        let x = [1.2, 3.4, 2.2, 5.0, 4.1, 0.3];
        let y = [2.5, 6.1, 7.7, 4.4, 8.0];
        let r = adjusted_test(&[x.to_vec(), y.to_vec()], &AdjustSpec::Ess(&[1.0, 1.0])).unwrap();
        assert_eq!(r.p_adjusted, Some(r.p_naive));
        let g = vec![x.to_vec(), y.to_vec(), vec![9.0, 1.1, 3.3]];
        let r = adjusted_test(&g, &AdjustSpec::Ess(&[1.0; 3])).unwrap();
        assert_eq!(r.p_adjusted, Some(r.p_naive));
    }

    #[test]
    fn ess_deff_four_halves_z() {
        let x: Vec<f64> = (0..15).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..12).map(|i| 0.6 + (i as f64 * 0.71).cos()).collect();
        let r = adjusted_test(&[x.clone(), y.clone()], &AdjustSpec::Ess(&[4.0, 4.0])).unwrap();
        let (_, z) = mann_whitney_z(&x, &y, true);
        let expected = two_sided_normal(z.unwrap() / 2.0);
        assert!((r.p_adjusted.unwrap() - expected).abs() < 1e-15);
        assert!(r.p_adjusted.unwrap() >= r.p_naive);
    }

    #[test]
    fn region_perm_requires_constant_labels() {
        let g = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let spec = AdjustSpec::RegionPerm { regions: &[0, 1, 0, 1], n_perm: 99, seed: 1 };
        assert!(adjusted_test(&g, &spec).is_err());
    }

    #[test]
    fn too_few_relabelings() {
        // Four regions, two per group: C(4,2) = 6 < 20.
        let g = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let spec = AdjustSpec::RegionPerm { regions: &[0, 1, 2, 3], n_perm: 99, seed: 1 };
        let err = adjusted_test(&g, &spec).unwrap_err();
        assert!(err.to_string().contains("insufficient exchangeable units"));
    }

    #[test]
    fn permutation_p_is_deterministic_and_bounded() {
        let x: Vec<f64> = (0..20).map(|i| (i * 7 % 11) as f64).collect();
        let y: Vec<f64> = (0..20).map(|i| (i * 5 % 13) as f64 + 0.5).collect();
        let regions: Vec<usize> = (0..40).map(|i| i % 8).collect();
        let spec = AdjustSpec::BlockPerm { regions: &regions, n_perm: 199, seed: 9 };
        let a = adjusted_test(&[x.clone(), y.clone()], &spec).unwrap();
        let b = adjusted_test(&[x, y], &spec).unwrap();
        assert_eq!(a, b);
        let p = a.p_adjusted.unwrap();
        assert!((1.0 / 200.0..=1.0).contains(&p));
        assert_eq!(a.adjustment, Adjustment::BlockPerm);
    }

    #[test]
    fn separated_regions_reject_under_region_perm() {
        // 10 regions of 3, first five in group 0 with low values.
        let x: Vec<f64> = (0..15).map(f64::from).collect();
        let y: Vec<f64> = (15..30).map(f64::from).collect();
        let regions: Vec<usize> = (0..30).map(|i| i / 3).collect();
        let spec = AdjustSpec::RegionPerm { regions: &regions, n_perm: 999, seed: 3 };
        let r = adjusted_test(&[x, y], &spec).unwrap();
        // Only the observed split and its mirror reach the observed H: 2/252.
        assert!(r.p_adjusted.unwrap() < 0.03);
    }

    /// Tie-corrected H straight from the definition.
    fn h_direct(values: &[f64], labels: &[usize]) -> f64 {
        let n = values.len() as f64;
        let ranks = rank_with_ties(values);
        let mut sums = [0.0; 2];
        let mut counts = [0.0; 2];
        for (r, &g) in ranks.iter().zip(labels) {
            sums[g] += r;
            counts[g] += 1.0;
        }
        let h = 12.0 / (n * (n + 1.0)) * (sums[0].powi(2) / counts[0] + sums[1].powi(2) / counts[1]) - 3.0 * (n + 1.0);
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut t = 0.0;
        for run in sorted.chunk_by(|a, b| a == b) {
            let k = run.len() as f64;
            t += k * k * k - k;
        }
        h / (1.0 - t / (n * n * n - n))
    }

    #[test]
    fn region_perm_matches_enumeration_with_unequal_regions() {
        let sizes = [1usize, 2, 3, 4, 2, 5];
        let regions: Vec<usize> = sizes.iter().enumerate().flat_map(|(r, &s)| std::iter::repeat_n(r, s)).collect();
        let values: Vec<f64> = (0..regions.len()).map(|i| ((i * 37 % 17) as f64).sqrt()).collect();
        let observed: Vec<usize> = regions.iter().map(|&r| usize::from(r >= 3)).collect();
        let h_obs = h_direct(&values, &observed);
        // All C(6, 3) choices of the regions forming group 1.
        let mut hits = 0;
        let mut total = 0;
        for mask in 0u32..64 {
            if mask.count_ones() != 3 {
                continue;
            }
            let lab: Vec<usize> = regions.iter().map(|&r| usize::from(mask >> r & 1 == 1)).collect();
            total += 1;
            hits += usize::from(h_direct(&values, &lab) >= h_obs - 1e-9);
        }
        let p_exact = hits as f64 / total as f64;

        type Obs = Vec<(f64, usize)>;
        let (g0, g1): (Obs, Obs) = values.iter().copied().zip(regions.iter().copied()).partition(|&(_, r)| r < 3);
        let groups = vec![g0.iter().map(|p| p.0).collect(), g1.iter().map(|p| p.0).collect()];
        let units: Vec<usize> = g0.iter().chain(&g1).map(|p| p.1).collect();
        let n_perm = 20_000;
        let spec = AdjustSpec::RegionPerm { regions: &units, n_perm, seed: 11 };
        let p = adjusted_test(&groups, &spec).unwrap().p_adjusted.unwrap();
        let se = (p_exact * (1.0 - p_exact) / n_perm as f64).sqrt();
        assert!((p - p_exact).abs() < 4.0 * se + 1e-4, "{p} vs {p_exact}");
    }

    proptest! {
        #[test]
        fn exact_matches_enumeration(
            m in 1usize..6,
            n in 1usize..6,
            perm in Just((0u32..10).collect::<Vec<_>>()).prop_shuffle(),
        ) {
            let vals: Vec<f64> = perm.iter().map(|&v| v as f64).collect();
            let (x, y) = (&vals[..m], &vals[m..m + n]);
            let r = mann_whitney(x, y, MwMode::Exact).unwrap();
            prop_assert!((r.p_naive - enumeration_p(x, y)).abs() < 1e-12);
        }

        #[test]
        fn h_equals_z_squared_for_two_groups(
            x in proptest::collection::vec(0u8..15, 1..25),
            y in proptest::collection::vec(0u8..15, 1..25),
        ) {
            let x: Vec<f64> = x.into_iter().map(f64::from).collect();
            let y: Vec<f64> = y.into_iter().map(f64::from).collect();
            prop_assume!(x.len() + y.len() >= 3);
            let h = kruskal_wallis(&[x.clone(), y.clone()]).unwrap();
            match mann_whitney_z(&x, &y, false).1 {
                Some(z) => {
                    prop_assert!((h.statistic - z * z).abs() < 1e-10);
                    prop_assert!((h.p_naive - two_sided_normal(z)).abs() < 1e-10);
                }
                None => prop_assert!(h.degenerate),
            }
        }

        #[test]
        fn rank_sum_and_monotone_invariance(
            v in proptest::collection::vec(-20i32..20, 3..30),
            split in 1usize..29,
        ) {
            let v: Vec<f64> = v.into_iter().map(f64::from).collect();
            let n = v.len() as f64;
            let ranks = rank_with_ties(&v);
            prop_assert_eq!(ranks.iter().sum::<f64>(), n * (n + 1.0) / 2.0);
            let split = split.min(v.len() - 1);
            let (x, y) = v.split_at(split);
            let tx: Vec<f64> = x.iter().map(|a| a.exp() + 3.0).collect();
            let ty: Vec<f64> = y.iter().map(|a| a.exp() + 3.0).collect();
            let a = mann_whitney(x, y, MwMode::Auto).unwrap();
            let b = mann_whitney(&tx, &ty, MwMode::Auto).unwrap();
            prop_assert_eq!(a.statistic, b.statistic);
            prop_assert_eq!(a.p_naive, b.p_naive);
            let ka = kruskal_wallis(&[x.to_vec(), y.to_vec()]).unwrap();
            let kb = kruskal_wallis(&[tx, ty]).unwrap();
            prop_assert_eq!(ka.statistic, kb.statistic);
        }

        #[test]
        fn ess_never_decreases_p(
            x in proptest::collection::vec(-5.0f64..5.0, 2..20),
            y in proptest::collection::vec(-5.0f64..5.0, 2..20),
            dx in 1.0f64..6.0,
            dy in 1.0f64..6.0,
        ) {
            let r = adjusted_test(&[x, y], &AdjustSpec::Ess(&[dx, dy])).unwrap();
            let p = r.p_adjusted.unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert!(p >= r.p_naive - 1e-15);
        }
    }
}
