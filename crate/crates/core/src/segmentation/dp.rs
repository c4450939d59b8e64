//! Minimum-cost surface paths under a smoothness limit and a per-column
//! lower bound.
//!
//! Tie rule shared by the DP and the exhaustive oracle: among equal-cost
//! paths, prefer the smaller row in the last column, then the smaller row in
//! the column before it, and so on back to column 0.

use std::cmp::Ordering;

use super::CostField;
use crate::error::{Error, Result};

/// Largest `rows^cols` the exhaustive search will accept.
pub const BRUTE_FORCE_LIMIT: f64 = 1e7;

/// Total cost of a path, summed left to right.
pub fn path_cost(cost: &CostField, path: &[usize]) -> f64 {
    let mut total = 0.0;
    for (x, &z) in path.iter().enumerate() {
        total += cost.at(z, x);
    }
    total
}

fn check_bounds(cost: &CostField, lower_bound: &[usize]) -> Result<()> {
    if lower_bound.len() != cost.cols {
        return Err(Error::Shape(format!(
            "{} lower bounds for {} columns",
            lower_bound.len(),
            cost.cols
        )));
    }
    if let Some(x) = lower_bound.iter().position(|&lb| lb >= cost.rows) {
        return Err(Error::Infeasible(format!(
            "lower bound {} at column {x} is below the last row {}",
            lower_bound[x],
            cost.rows - 1
        )));
    }
    Ok(())
}

/// Forward dynamic programming over (column, row) states with backtracking.
pub fn extract_surface_dp(cost: &CostField, delta: usize, lower_bound: &[usize]) -> Result<Vec<usize>> {
    check_bounds(cost, lower_bound)?;
    let (h, w) = (cost.rows, cost.cols);
    if w == 0 {
        return Ok(Vec::new());
    }
    let mut acc = vec![f64::INFINITY; h];
    let mut next = vec![f64::INFINITY; h];
    let mut pred = vec![usize::MAX; h * w];
    for z in lower_bound[0]..h {
        acc[z] = cost.at(z, 0);
    }
    for x in 1..w {
        next.fill(f64::INFINITY);
        for z in lower_bound[x]..h {
            let lo = z.saturating_sub(delta);
            let hi = (z + delta).min(h - 1);
            let mut best = f64::INFINITY;
            let mut arg = usize::MAX;
            for (zp, &a) in acc.iter().enumerate().take(hi + 1).skip(lo) {
                if a < best {
                    best = a;
                    arg = zp;
                }
            }
            if arg != usize::MAX {
                next[z] = best + cost.at(z, x);
                pred[x * h + z] = arg;
            }
        }
        std::mem::swap(&mut acc, &mut next);
    }
    let mut end = usize::MAX;
    let mut best = f64::INFINITY;
    for (z, &a) in acc.iter().enumerate() {
        if a < best {
            best = a;
            end = z;
        }
    }
    if end == usize::MAX {
        return Err(Error::Infeasible("no path satisfies the smoothness limit".into()));
    }
    let mut path = vec![0; w];
    path[w - 1] = end;
    for x in (1..w).rev() {
        path[x - 1] = pred[x * h + path[x]];
    }
    Ok(path)
}

/// Reverse-lexicographic order: compare the last column first.
fn tie_order(a: &[usize], b: &[usize]) -> Ordering {
    a.iter().rev().cmp(b.iter().rev())
}

/// Exhaustive minimum over every admissible path. Test oracle for
/// [`extract_surface_dp`]; refuses instances with `rows^cols` above
/// [`BRUTE_FORCE_LIMIT`].
pub fn brute_force_surface(cost: &CostField, delta: usize, lower_bound: &[usize]) -> Result<Vec<usize>> {
    let paths = (cost.rows as f64).powi(cost.cols as i32);
    if paths > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge { paths });
    }
    check_bounds(cost, lower_bound)?;

    struct Search<'a> {
        cost: &'a CostField,
        delta: usize,
        lower: &'a [usize],
        current: Vec<usize>,
        best: Option<(f64, Vec<usize>)>,
    }
    impl Search<'_> {
        fn visit(&mut self, x: usize) {
            if x == self.cost.cols {
                let total = path_cost(self.cost, &self.current);
                let better = match &self.best {
                    None => true,
                    Some((b, p)) => total < *b || (total == *b && tie_order(&self.current, p).is_lt()),
                };
                if better {
                    self.best = Some((total, self.current.clone()));
                }
                return;
            }
            let (lo, hi) = match x {
                0 => (0, self.cost.rows - 1),
                _ => {
                    let prev = self.current[x - 1];
                    (prev.saturating_sub(self.delta), (prev + self.delta).min(self.cost.rows - 1))
                }
            };
            for z in lo.max(self.lower[x])..=hi {
                self.current.push(z);
                self.visit(x + 1);
                self.current.pop();
            }
        }
    }

    let mut search = Search { cost, delta, lower: lower_bound, current: Vec::with_capacity(cost.cols), best: None };
    search.visit(0);
    search
        .best
        .map(|(_, p)| p)
        .ok_or_else(|| Error::Infeasible("no path satisfies the smoothness limit".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::segmentation::Polarity;
    use rand::Rng;

    fn field(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> CostField {
        let cost = (0..rows).flat_map(|z| (0..cols).map(move |x| (z, x))).map(|(z, x)| f(z, x)).collect();
        CostField::new(rows, cols, cost, Polarity::DarkToBright).unwrap()
    }

    fn random_field(rows: usize, cols: usize, seed: u64, integer: bool) -> CostField {
        let mut r = rng::stream(seed, &[99]);
        let cost = (0..rows * cols)
            .map(|_| if integer { r.random_range(0..4) as f64 } else { r.random_range(-1.0..1.0) })
            .collect();
        CostField::new(rows, cols, cost, Polarity::DarkToBright).unwrap()
    }

    /// Count of admissible paths with no lower bound, by direct recursion.
    fn count_paths(rows: usize, cols: usize, delta: usize) -> usize {
        fn go(z: usize, x: usize, rows: usize, cols: usize, delta: usize) -> usize {
            if x + 1 == cols {
                return 1;
            }
            let lo = z.saturating_sub(delta);
            let hi = (z + delta).min(rows - 1);
            (lo..=hi).map(|n| go(n, x + 1, rows, cols, delta)).sum()
        }
        (0..rows).map(|z| go(z, 0, rows, cols, delta)).sum()
    }

    #[test]
    fn zero_valley_gives_constant_row() {
        let f = field(10, 7, |z, _| if z == 5 { 0.0 } else { 1.0 });
        assert_eq!(extract_surface_dp(&f, 1, &[0; 7]).unwrap(), vec![5; 7]);
    }

    #[test]
    fn bottom_row_bound_forces_single_path() {
        let f = random_field(8, 5, 3, false);
        assert_eq!(extract_surface_dp(&f, 1, &[7; 5]).unwrap(), vec![7; 5]);
        assert_eq!(brute_force_surface(&f, 1, &[7; 5]).unwrap(), vec![7; 5]);
    }

    #[test]
    fn dp_matches_enumeration_on_6x8() {
        // the enumeration covers every smooth path; with no bound that is
        // fewer than 8 * 3^5 because rows 0 and 7 have only two neighbours
        assert!(count_paths(8, 6, 1) <= 8 * 3usize.pow(5));
        for seed in 0..50 {
            let f = random_field(8, 6, seed, seed % 2 == 0);
            let dp = extract_surface_dp(&f, 1, &[0; 6]).unwrap();
            let bf = brute_force_surface(&f, 1, &[0; 6]).unwrap();
            assert_eq!(dp, bf, "seed {seed}");
            assert_eq!(path_cost(&f, &dp), path_cost(&f, &bf));
        }
    }

    #[test]
    fn one_column_is_argmin() {
        let f = field(6, 1, |z, _| [3.0, 1.0, 0.5, 0.5, 2.0, 9.0][z]);
        assert_eq!(brute_force_surface(&f, 0, &[0]).unwrap(), vec![2]);
        assert_eq!(extract_surface_dp(&f, 0, &[0]).unwrap(), vec![2]);
    }

    #[test]
    fn infeasible_bound_is_reported_by_both() {
        let f = random_field(6, 5, 1, false);
        let lb = [0, 0, 6, 0, 0];
        assert!(matches!(extract_surface_dp(&f, 1, &lb), Err(Error::Infeasible(_))));
        assert!(matches!(brute_force_surface(&f, 1, &lb), Err(Error::Infeasible(_))));
    }

    #[test]
    fn oracle_guard_rejects_large_instances() {
        let f = random_field(20, 8, 1, false);
        assert!(matches!(brute_force_surface(&f, 1, &[0; 8]), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn path_respects_bound_and_smoothness() {
        for seed in 0..20 {
            let f = random_field(12, 9, seed, false);
            let mut r = rng::stream(seed, &[5]);
            let lb: Vec<usize> = (0..9).map(|_| r.random_range(0..6)).collect();
            let p = extract_surface_dp(&f, 2, &lb).unwrap();
            assert!(p.iter().zip(&lb).all(|(z, l)| z >= l));
            assert!(p.windows(2).all(|w| w[0].abs_diff(w[1]) <= 2));
        }
    }

    #[test]
    fn larger_gap_never_lowers_cost() {
        for seed in 0..20 {
            let top = random_field(16, 8, seed, false);
            let below = random_field(16, 8, seed + 1000, false);
            let first = extract_surface_dp(&top, 2, &[0; 8]).unwrap();
            let mut prev = f64::NEG_INFINITY;
            for gap in 0..4 {
                let lb: Vec<usize> = first.iter().map(|z| (z + gap).min(15)).collect();
                let c = path_cost(&below, &extract_surface_dp(&below, 2, &lb).unwrap());
                assert!(c >= prev, "seed {seed} gap {gap}");
                prev = c;
            }
        }
    }
}
