//! Exact discrete optimal transport between uniform empirical measures.
//!
//! Equal sample sizes reduce to an assignment problem (Hungarian method,
//! `O(n^3)`). Unequal sizes are solved as an integer transportation problem
//! by successive shortest paths: point `i` of the first sample supplies
//! `nb / g` units and point `j` of the second demands `na / g`, with
//! `g = gcd(na, nb)`.

use crate::error::{Result, SddeError};

/// Largest sample size accepted by the exact solvers.
pub const MAX_SAMPLE: usize = 512;

fn check_cost(cost: &[f64], na: usize, nb: usize) -> Result<()> {
    if na == 0 || nb == 0 {
        return Err(SddeError::EmptyBatch);
    }
    for size in [na, nb] {
        if size > MAX_SAMPLE {
            return Err(SddeError::SampleTooLarge {
                size,
                cap: MAX_SAMPLE,
            });
        }
    }
    if cost.len() != na * nb {
        return Err(SddeError::Dimension {
            what: "cost matrix",
            expected: na * nb,
            got: cost.len(),
        });
    }
    if let Some(v) = cost.iter().find(|v| !v.is_finite()) {
        return Err(SddeError::invalid("cost", format!("entries must be finite, found {v}")));
    }
    Ok(())
}

/// Minimum-cost perfect matching on an `n x n` row-major cost matrix.
///
/// Returns the total cost and `assignment[row] = column`.
pub fn assignment(cost: &[f64], n: usize) -> Result<(f64, Vec<usize>)> {
    check_cost(cost, n, n)?;
    // 1-based potentials formulation; column 0 is a virtual start
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
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
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        assign[owner[j] - 1] = j - 1;
    }
    let total = assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok((total, assign))
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Optimal transport cost between uniform measures on `na` and `nb` points.
///
/// `cost` is row-major `na x nb`. The result is the expected cost under an
/// optimal coupling, i.e. the total cost divided by the total mass.
pub fn transport(cost: &[f64], na: usize, nb: usize) -> Result<f64> {
    check_cost(cost, na, nb)?;
    if na == nb {
        let (total, _) = assignment(cost, na)?;
        return Ok(total / na as f64);
    }
    let g = gcd(na, nb);
    let (supply_unit, demand_unit) = ((nb / g) as i64, (na / g) as i64);
    let total_mass = supply_unit * na as i64;
    let mut supply = vec![supply_unit; na];
    let mut demand = vec![demand_unit; nb];
    let mut flow = vec![0i64; na * nb];
    // node potentials: a-nodes then b-nodes; all initial costs are >= 0
    let mut pa = vec![0.0f64; na];
    let mut pb = vec![0.0f64; nb];
    let mut remaining = total_mass;
    let inf = f64::INFINITY;

    while remaining > 0 {
        // dense Dijkstra over reduced costs from all a-nodes with supply left
        let mut da: Vec<f64> = supply.iter().map(|&s| if s > 0 { 0.0 } else { inf }).collect();
        let mut db = vec![inf; nb];
        let mut prev_b = vec![usize::MAX; nb]; // a-node feeding b
        let mut prev_a = vec![usize::MAX; na]; // b-node feeding a (via a reverse edge)
        let mut done_a = vec![false; na];
        let mut done_b = vec![false; nb];
        loop {
            // pick the closest unfinished node
            let mut best = (inf, usize::MAX, false);
            for (i, &d) in da.iter().enumerate() {
                if !done_a[i] && d < best.0 {
                    best = (d, i, true);
                }
            }
            for (j, &d) in db.iter().enumerate() {
                if !done_b[j] && d < best.0 {
                    best = (d, j, false);
                }
            }
            let (d, idx, is_a) = best;
            if idx == usize::MAX {
                break;
            }
            if is_a {
                done_a[idx] = true;
                for j in 0..nb {
                    if done_b[j] {
                        continue;
                    }
                    let rc = cost[idx * nb + j] + pa[idx] - pb[j];
                    let nd = d + rc.max(0.0);
                    if nd < db[j] {
                        db[j] = nd;
                        prev_b[j] = idx;
                    }
                }
            } else {
                done_b[idx] = true;
                for i in 0..na {
                    if done_a[i] || flow[i * nb + idx] == 0 {
                        continue;
                    }
                    let rc = -cost[i * nb + idx] + pb[idx] - pa[i];
                    let nd = d + rc.max(0.0);
                    if nd < da[i] {
                        da[i] = nd;
                        prev_a[i] = idx;
                    }
                }
            }
        }
        // cheapest reachable sink
        let sink = (0..nb)
            .filter(|&j| demand[j] > 0 && db[j] < inf)
            .min_by(|&x, &y| db[x].total_cmp(&db[y]))
            .expect("a feasible transport plan always exists");
        let horizon = db[sink];
        for i in 0..na {
            pa[i] += da[i].min(horizon);
        }
        for j in 0..nb {
            pb[j] += db[j].min(horizon);
        }
        // walk back to find the bottleneck
        let mut push = demand[sink];
        let mut j = sink;
        loop {
            let i = prev_b[j];
            if prev_a[i] == usize::MAX {
                push = push.min(supply[i]);
                break;
            }
            let jb = prev_a[i];
            push = push.min(flow[i * nb + jb]);
            j = jb;
        }
        let mut j = sink;
        demand[sink] -= push;
        loop {
            let i = prev_b[j];
            flow[i * nb + j] += push;
            if prev_a[i] == usize::MAX {
                supply[i] -= push;
                break;
            }
            let jb = prev_a[i];
            flow[i * nb + jb] -= push;
            j = jb;
        }
        remaining -= push;
    }
    let total: f64 = flow
        .iter()
        .zip(cost)
        .filter(|(f, _)| **f > 0)
        .map(|(&f, &c)| f as f64 * c)
        .sum();
    Ok(total / total_mass as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(cost: &[f64], n: usize) -> f64 {
        fn rec(cost: &[f64], n: usize, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == n {
                *best = best.min(acc);
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    rec(cost, n, row + 1, used, acc + cost[row * n + j], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, n, 0, &mut vec![false; n], 0.0, &mut best);
        best
    }

    #[test]
    fn hand_instances() {
        let c = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let (total, a) = assignment(&c, 3).unwrap();
        assert_eq!(total, 5.0);
        assert_eq!(a, vec![1, 0, 2]);
        assert_eq!(transport(&[0.3], 1, 1).unwrap(), 0.3);
        // one point against two: mass splits evenly
        assert!((transport(&[1.0, 3.0], 1, 2).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_oversized_and_empty_samples() {
        assert!(matches!(transport(&[], 0, 3), Err(SddeError::EmptyBatch)));
        let c = vec![0.0; 513];
        assert!(matches!(transport(&c, 513, 1), Err(SddeError::SampleTooLarge { size: 513, .. })));
    }

    /// Unequal sizes against the equal-size solver on replicated points.
    fn replicated(cost: &[f64], na: usize, nb: usize) -> f64 {
        let n = na * nb;
        let mut big = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                big[r * n + c] = cost[(r / nb) * nb + c / na];
            }
        }
        assignment(&big, n).unwrap().0 / n as f64
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn assignment_matches_brute_force(n in 1usize..6, seed in prop::collection::vec(0.0f64..1.0, 25)) {
            let cost: Vec<f64> = seed[..n * n].to_vec();
            let (total, a) = assignment(&cost, n).unwrap();
            prop_assert!((total - brute_force(&cost, n)).abs() < 1e-12);
            let mut cols = a.clone();
            cols.sort();
            prop_assert_eq!(cols, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn transport_matches_replication(na in 1usize..5, nb in 1usize..5, seed in prop::collection::vec(0.0f64..1.0, 16)) {
            let cost: Vec<f64> = seed[..na * nb].to_vec();
            let t = transport(&cost, na, nb).unwrap();
            prop_assert!((t - replicated(&cost, na, nb)).abs() < 1e-12, "{} vs {}", t, replicated(&cost, na, nb));
        }
    }
}
