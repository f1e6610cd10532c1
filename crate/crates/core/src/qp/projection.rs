use crate::error::{check_len, Error, Result};

const SUM_TOL: f64 = 1e-10;

/// Euclidean projection onto the box `[lo, hi]`.
pub fn project_box(v: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    v.iter()
        .zip(lo.iter().zip(hi))
        .map(|(x, (l, h))| x.max(*l).min(*h))
        .collect()
}

fn shifted_sum(v: &[f64], lo: &[f64], hi: &[f64], tau: f64) -> f64 {
    v.iter()
        .zip(lo.iter().zip(hi))
        .map(|(x, (l, h))| (x - tau).max(*l).min(*h))
        .sum()
}

/// Euclidean projection of `v` onto `{u : sum(u) = total, lo <= u <= hi}`.
///
/// The minimizer is `clip(v - tau, lo, hi)` for the scalar multiplier `tau`
/// that makes the sum hit `total`. `tau` is bracketed and bisected; the
/// bracket is then closed exactly on the identified free set.
pub fn project_box_budget(v: &[f64], lo: &[f64], hi: &[f64], total: f64) -> Result<Vec<f64>> {
    let n = v.len();
    check_len("projection lo", n, lo.len())?;
    check_len("projection hi", n, hi.len())?;
    if lo.iter().zip(hi).any(|(l, h)| l > h) {
        return Err(Error::Infeasible("box with lo > hi".into()));
    }
    let sum_lo: f64 = lo.iter().sum();
    let sum_hi: f64 = hi.iter().sum();
    let slack = SUM_TOL * (1.0 + total.abs());
    if total < sum_lo - slack || total > sum_hi + slack {
        return Err(Error::Infeasible(format!(
            "budget {total} outside [{sum_lo}, {sum_hi}]"
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if total >= sum_hi {
        return Ok(hi.to_vec());
    }
    if total <= sum_lo {
        return Ok(lo.to_vec());
    }

    // At tau_lo every coordinate sits at hi, at tau_hi every one at lo.
    let mut tau_lo = v
        .iter()
        .zip(hi)
        .map(|(x, h)| x - h)
        .fold(f64::INFINITY, f64::min);
    let mut tau_hi = v
        .iter()
        .zip(lo)
        .map(|(x, l)| x - l)
        .fold(f64::NEG_INFINITY, f64::max);
    if !tau_lo.is_finite() || !tau_hi.is_finite() {
        return Err(Error::InvalidParameter(
            "box-budget projection needs finite bounds".into(),
        ));
    }

    for _ in 0..200 {
        let mid = 0.5 * (tau_lo + tau_hi);
        if mid <= tau_lo || mid >= tau_hi {
            break;
        }
        let s = shifted_sum(v, lo, hi, mid);
        if (s - total).abs() <= SUM_TOL * 1e-2 {
            tau_lo = mid;
            tau_hi = mid;
            break;
        }
        if s > total {
            tau_lo = mid;
        } else {
            tau_hi = mid;
        }
    }

    // Coordinates strictly inside the box over the whole bracket are free;
    // their common shift follows from the budget in closed form.
    let mut fixed_sum = 0.0;
    let mut free_sum = 0.0;
    let mut free = 0usize;
    for i in 0..n {
        if v[i] - tau_lo <= lo[i] {
            fixed_sum += lo[i];
        } else if v[i] - tau_hi >= hi[i] {
            fixed_sum += hi[i];
        } else {
            free_sum += v[i];
            free += 1;
        }
    }
    let mut tau = 0.5 * (tau_lo + tau_hi);
    if free > 0 {
        let exact = (free_sum - (total - fixed_sum)) / free as f64;
        let candidate = project_box(&v.iter().map(|x| x - exact).collect::<Vec<_>>(), lo, hi);
        let err_exact = (candidate.iter().sum::<f64>() - total).abs();
        let err_mid = (shifted_sum(v, lo, hi, tau) - total).abs();
        if err_exact <= err_mid {
            tau = exact;
        }
    }
    let mut u: Vec<f64> = v
        .iter()
        .zip(lo.iter().zip(hi))
        .map(|(x, (l, h))| (x - tau).max(*l).min(*h))
        .collect();

    // Spread any leftover rounding over coordinates with room to move.
    let resid = total - u.iter().sum::<f64>();
    if resid != 0.0 {
        let room: Vec<usize> = (0..n)
            .filter(|&i| if resid > 0.0 { u[i] < hi[i] } else { u[i] > lo[i] })
            .collect();
        if !room.is_empty() {
            let share = resid / room.len() as f64;
            for i in room {
                u[i] = (u[i] + share).max(lo[i]).min(hi[i]);
            }
        }
    }
    Ok(u)
}
