//! Gillespie direct-method simulation and exact discrete observation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{ReactionNetwork, State};

/// Seeded generator for stream `stream` of `seed`; distinct streams are independent.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A piecewise-constant sample path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub event_times: Vec<f64>,
    /// `states[0]` is the initial state, `states[k + 1]` the state after event `k`.
    pub states: Vec<State>,
    pub t_end: f64,
}

impl Path {
    pub fn initial(&self) -> &[i64] {
        &self.states[0]
    }

    pub fn n_events(&self) -> usize {
        self.event_times.len()
    }

    /// Right-continuous state at time `t`.
    pub fn state_at(&self, t: f64) -> &[i64] {
        let k = self.event_times.partition_point(|&e| e <= t);
        &self.states[k]
    }
}

/// Draw one path on `[0, t_end]` with the direct method.
pub fn simulate(
    net: &ReactionNetwork,
    theta: &[f64],
    x0: &[i64],
    t_end: f64,
    seed: u64,
) -> Result<Path> {
    simulate_with_rng(net, theta, x0, t_end, &mut seeded_rng(seed, 0))
}

pub fn simulate_with_rng<R: Rng + ?Sized>(
    net: &ReactionNetwork,
    theta: &[f64],
    x0: &[i64],
    t_end: f64,
    rng: &mut R,
) -> Result<Path> {
    if let Some(t) = theta.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(Error::InvalidParameter(format!("rate {t} is negative or not finite")));
    }
    if !net.in_bounds(x0) {
        return Err(Error::OutOfBounds { state: x0.to_vec() });
    }
    let mut x = x0.to_vec();
    let mut h = net.propensities(&x, theta)?;
    let mut t = 0.0;
    let mut path = Path {
        event_times: Vec::new(),
        states: vec![x.clone()],
        t_end,
    };
    loop {
        let total: f64 = h.iter().sum();
        if !total.is_finite() {
            return Err(Error::PropensityOverflow { state: x });
        }
        if total <= 0.0 {
            break;
        }
        let u: f64 = 1.0 - rng.random::<f64>();
        t += -u.ln() / total;
        if t > t_end {
            break;
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for (j, hj) in h.iter().enumerate() {
            if *hj <= 0.0 {
                continue;
            }
            acc += hj;
            chosen = Some(j);
            if target < acc {
                break;
            }
        }
        // total > 0 guarantees at least one positive propensity
        let j = chosen.expect("positive total propensity");
        x = net.apply_reaction(&x, j)?;
        path.event_times.push(t);
        path.states.push(x.clone());
        h = net.propensities(&x, theta)?;
    }
    Ok(path)
}

/// Record the path at times `dt, 2dt, ..., n dt`.
pub fn observe(path: &Path, dt: f64, n: usize) -> Result<Dataset> {
    if !(dt > 0.0) || n == 0 {
        return Err(Error::InvalidDataset(format!(
            "need dt > 0 and n >= 1 (got dt={dt}, n={n})"
        )));
    }
    let horizon = dt * n as f64;
    if horizon > path.t_end * (1.0 + 1e-12) {
        return Err(Error::HorizonExceeded {
            requested: horizon,
            t_end: path.t_end,
        });
    }
    let observations = (1..=n)
        .map(|i| path.state_at(i as f64 * dt).to_vec())
        .collect();
    Dataset::new(path.initial().to_vec(), observations, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{RateLaw, Reaction};
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    use std::collections::BTreeMap;

    fn pure_death() -> ReactionNetwork {
        ReactionNetwork {
            name: "death".into(),
            species: vec!["X".into()],
            reactions: vec![Reaction {
                name: "death".into(),
                delta: vec![-1],
                rate: RateLaw {
                    reactants: vec![1],
                    complements: vec![],
                },
            }],
            hard_lower: vec![0],
            hard_upper: vec![None],
            aux: BTreeMap::new(),
        }
    }

    #[test]
    fn zero_rates_give_constant_path() {
        let lv = ReactionNetwork::lotka_volterra();
        let path = simulate(&lv, &[0.0; 3], &[30, 40], 10.0, 1).unwrap();
        assert_eq!(path.n_events(), 0);
        let data = observe(&path, 1.0, 10).unwrap();
        assert!(data.observations.iter().all(|x| x == &vec![30, 40]));
    }

    #[test]
    fn deterministic_given_seed() {
        let lv = ReactionNetwork::lotka_volterra();
        let a = simulate(&lv, &[0.3, 0.4, 0.01], &[30, 40], 5.0, 7).unwrap();
        let b = simulate(&lv, &[0.3, 0.4, 0.01], &[30, 40], 5.0, 7).unwrap();
        assert_eq!(a, b);
        let c = simulate(&lv, &[0.3, 0.4, 0.01], &[30, 40], 5.0, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn path_increments_are_reaction_deltas() {
        let lv = ReactionNetwork::lotka_volterra();
        let path = simulate(&lv, &[0.3, 0.4, 0.01], &[30, 40], 20.0, 3).unwrap();
        assert!(path.n_events() > 100);
        assert!(path.event_times.windows(2).all(|w| w[0] < w[1]));
        assert!(*path.event_times.last().unwrap() <= 20.0);
        for w in path.states.windows(2) {
            let d: Vec<i64> = w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect();
            assert!(lv.reactions.iter().any(|r| r.delta == d));
        }
    }

    #[test]
    fn pure_death_survival_probability() {
        let net = pure_death();
        let trials = 20_000;
        let survived = (0..trials)
            .filter(|&s| simulate(&net, &[1.0], &[1], 1.0, s).unwrap().n_events() == 0)
            .count();
        let p = (-1.0f64).exp();
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        let hat = survived as f64 / trials as f64;
        assert!((hat - p).abs() < 3.0 * se, "{hat} vs {p}");
    }

    #[test]
    fn observe_is_right_continuous() {
        let path = Path {
            event_times: vec![1.5],
            states: vec![vec![0], vec![1]],
            t_end: 3.0,
        };
        let data = observe(&path, 1.0, 3).unwrap();
        assert_eq!(data.observations, vec![vec![0], vec![1], vec![1]]);
        let at_event = Path {
            event_times: vec![2.0],
            states: vec![vec![0], vec![1]],
            t_end: 3.0,
        };
        assert_eq!(observe(&at_event, 1.0, 2).unwrap().observations[1], vec![1]);
        assert!(matches!(
            observe(&path, 1.0, 4),
            Err(Error::HorizonExceeded { .. })
        ));
    }

    #[test]
    fn finer_observation_grid_is_a_superset() {
        let lv = ReactionNetwork::lotka_volterra();
        let path = simulate(&lv, &[0.3, 0.4, 0.01], &[30, 40], 20.0, 11).unwrap();
        let lv10 = observe(&path, 2.0, 10).unwrap();
        let lv20 = observe(&path, 1.0, 20).unwrap();
        let lv40 = observe(&path, 0.5, 40).unwrap();
        for i in 0..10 {
            assert_eq!(lv10.observations[i], lv20.observations[2 * i + 1]);
        }
        for i in 0..20 {
            assert_eq!(lv20.observations[i], lv40.observations[2 * i + 1]);
        }
        assert_eq!(observe(&path, 1.0, 20).unwrap(), lv20);
    }

    /// First-event statistics from a fixed LV state.
    fn first_events(n: u64) -> (Vec<f64>, [usize; 3], f64, [f64; 3]) {
        let lv = ReactionNetwork::lotka_volterra();
        let theta = [0.3, 0.4, 0.01];
        let x0 = [30, 40];
        let h = lv.propensities(&x0, &theta).unwrap();
        let total: f64 = h.iter().sum();
        let mut times = Vec::new();
        let mut counts = [0usize; 3];
        for s in 0..n {
            let path = simulate(&lv, &theta, &x0, 10.0, 1_000 + s).unwrap();
            times.push(path.event_times[0] * total);
            let d: Vec<i64> = path.states[1].iter().zip(&x0).map(|(a, b)| a - b).collect();
            let j = lv.reactions.iter().position(|r| r.delta == d).unwrap();
            counts[j] += 1;
        }
        (times, counts, total, [h[0], h[1], h[2]])
    }

    #[test]
    fn holding_times_are_exponential_and_choices_proportional() {
        let n = 10_000;
        let (mut times, counts, total, h) = first_events(n);
        // Kolmogorov-Smirnov against Exp(1)
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let nf = n as f64;
        let d = times
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let f = 1.0 - (-t).exp();
                (f - i as f64 / nf).abs().max(((i + 1) as f64 / nf - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(d < 1.628 / nf.sqrt(), "KS statistic {d}");
        // chi-squared on reaction choice
        let chi2: f64 = counts
            .iter()
            .zip(h)
            .map(|(&c, hj)| {
                let e = nf * hj / total;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        let crit = ChiSquared::new(2.0).unwrap().inverse_cdf(0.99);
        assert!(chi2 < crit, "chi2 {chi2} >= {crit}");
    }
}
