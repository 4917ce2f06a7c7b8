//! Generalized advantage estimation.

/// Advantages and returns for one worker's consecutive transitions.
///
/// `bootstrap` is the critic's value of the state after the last transition;
/// it is ignored when that transition ended an episode.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n, "mismatched GAE inputs");
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Rescales to mean 0 and unit (population) standard deviation.
pub fn normalize(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return Vec::new();
    }
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    xs.iter().map(|x| (x - mean) / std).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct sum `A_t = sum_l (gamma lambda)^l delta_{t+l}`, truncated at the
    /// first episode end.
    fn brute_force(r: &[f64], v: &[f64], d: &[bool], boot: f64, g: f64, l: f64) -> Vec<f64> {
        let n = r.len();
        let value_after = |t: usize| if t + 1 < n { v[t + 1] } else { boot };
        let delta: Vec<f64> = (0..n)
            .map(|t| r[t] + if d[t] { 0.0 } else { g * value_after(t) } - v[t])
            .collect();
        (0..n)
            .map(|t| {
                let mut total = 0.0;
                for k in t..n {
                    total += (g * l).powi((k - t) as i32) * delta[k];
                    if d[k] {
                        break;
                    }
                }
                total
            })
            .collect()
    }

    fn random_case(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>, Vec<bool>, f64) {
        let r = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let v = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let d = (0..n).map(|_| rng.random_bool(0.2)).collect();
        (r, v, d, rng.random_range(-5.0..5.0))
    }

    #[test]
    fn single_terminal_step() {
        let (a, ret) = compute_gae(&[1.0], &[0.0], &[true], 123.0, 0.99, 0.95);
        assert_eq!(a, vec![1.0]);
        assert_eq!(ret, vec![1.0]);
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let (r, v, d, b) = random_case(&mut rng, 10);
            let (a, ret) = compute_gae(&r, &v, &d, b, 0.99, 0.95);
            let want = brute_force(&r, &v, &d, b, 0.99, 0.95);
            for t in 0..10 {
                assert!((a[t] - want[t]).abs() < 1e-10);
                assert!((ret[t] - (want[t] + v[t])).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn lambda_zero_is_td_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (r, v, d, b) = random_case(&mut rng, 10);
        let (a, _) = compute_gae(&r, &v, &d, b, 0.9, 0.0);
        for t in 0..10 {
            let next = if d[t] { 0.0 } else if t + 1 < 10 { v[t + 1] } else { b };
            assert_eq!(a[t], r[t] + 0.9 * next - v[t]);
        }
    }

    #[test]
    fn lambda_one_is_reward_to_go_minus_baseline() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let (r, v, d, b) = random_case(&mut rng, 10);
            let (a, _) = compute_gae(&r, &v, &d, b, 0.97, 1.0);
            for t in 0..10 {
                let mut g = 0.0;
                let mut disc = 1.0;
                let mut ended = false;
                for k in t..10 {
                    g += disc * r[k];
                    disc *= 0.97;
                    if d[k] {
                        ended = true;
                        break;
                    }
                }
                if !ended {
                    g += disc * b;
                }
                assert!((a[t] - (g - v[t])).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn done_blocks_credit() {
        let (a, _) = compute_gae(&[0.0, 5.0], &[0.0, 0.0], &[true, false], 0.0, 0.99, 0.95);
        assert_eq!(a[0], 0.0);
    }

    #[test]
    fn normalize_moments() {
        let z = normalize(&[1.0, 2.0, 3.0, 4.0]);
        let mean: f64 = z.iter().sum::<f64>() / 4.0;
        let var: f64 = z.iter().map(|x| x * x).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-6);
    }
}
