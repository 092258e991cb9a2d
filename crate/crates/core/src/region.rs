//! Nested cuboid regions and their lattice enumeration.
//!
//! For each inter-observation interval the first region is the smallest cuboid
//! holding both endpoints, widened per species until it is at least `w_min`
//! states wide. Each further region widens every species by
//! `max(1, round(gamma * width))` on both sides, clamped to the hard bounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ReactionNetwork, State};

/// How the real-valued widening step `gamma * width` becomes an integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRounding {
    #[default]
    HalfUp,
    Floor,
    Ceil,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionConfig {
    pub gamma: f64,
    pub w_min: u64,
    #[serde(default)]
    pub rounding: StepRounding,
    /// Widen all species together (rather than only the narrow ones) while
    /// any species is narrower than `w_min`.
    #[serde(default)]
    pub joint_w_min: bool,
}

impl RegionConfig {
    pub fn new(gamma: f64, w_min: u64) -> Self {
        Self {
            gamma,
            w_min,
            rounding: StepRounding::HalfUp,
            joint_w_min: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::config("gamma", "must be a finite real >= 0"));
        }
        Ok(())
    }

    fn step(&self, width: i64) -> i64 {
        let raw = self.gamma * width as f64;
        let rounded = match self.rounding {
            StepRounding::HalfUp => (raw + 0.5).floor(),
            StepRounding::Floor => raw.floor(),
            StepRounding::Ceil => raw.ceil(),
        };
        (rounded as i64).max(1)
    }
}

impl Default for RegionConfig {
    fn default() -> Self {
        Self::new(0.0, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    pub lower: State,
    pub upper: State,
    /// Position in the nested sequence, starting at 1.
    pub index: usize,
}

impl Region {
    pub fn width(&self, s: usize) -> i64 {
        self.upper[s] - self.lower[s] + 1
    }

    pub fn contains(&self, x: &[i64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| lo <= v && v <= hi)
    }

    pub fn contains_region(&self, other: &Region) -> bool {
        self.lower.iter().zip(&other.lower).all(|(a, b)| a <= b)
            && self.upper.iter().zip(&other.upper).all(|(a, b)| a >= b)
    }

    /// Same cuboid, ignoring the index.
    pub fn same_extent(&self, other: &Region) -> bool {
        self.lower == other.lower && self.upper == other.upper
    }

    /// Number of lattice states `d_r`, excluding the coffin.
    pub fn volume(&self) -> Result<usize> {
        (0..self.lower.len()).try_fold(1usize, |acc, s| {
            usize::try_from(self.width(s))
                .ok()
                .and_then(|w| acc.checked_mul(w))
                .ok_or(Error::VolumeOverflow)
        })
    }

    pub fn enumerate(&self) -> Result<Enumeration> {
        Enumeration::new(self)
    }
}

fn widen_species(region: &mut Region, s: usize, cfg: &RegionConfig, net: &ReactionNetwork) {
    let step = cfg.step(region.width(s));
    let mut hi = region.upper[s].saturating_add(step);
    if let Some(cap) = net.hard_upper[s] {
        hi = hi.min(cap);
    }
    region.upper[s] = hi;
    region.lower[s] = (region.lower[s] - step).max(net.hard_lower[s]);
}

/// Next region in the nested sequence.
pub fn expand(region: &Region, cfg: &RegionConfig, net: &ReactionNetwork) -> Region {
    let mut next = region.clone();
    for s in 0..next.lower.len() {
        widen_species(&mut next, s, cfg, net);
    }
    next.index = region.index + 1;
    next
}

/// First region for an interval from `x_start` to `x_end`.
pub fn initial_region(
    x_start: &[i64],
    x_end: &[i64],
    cfg: &RegionConfig,
    net: &ReactionNetwork,
) -> Region {
    let mut region = Region {
        lower: x_start.iter().zip(x_end).map(|(a, b)| *a.min(b)).collect(),
        upper: x_start.iter().zip(x_end).map(|(a, b)| *a.max(b)).collect(),
        index: 1,
    };
    let w_min = i64::try_from(cfg.w_min).unwrap_or(i64::MAX);
    let narrow = |r: &Region| (0..r.lower.len()).any(|s| r.width(s) < w_min);
    if cfg.joint_w_min {
        while narrow(&region) {
            let before = region.clone();
            for s in 0..region.lower.len() {
                widen_species(&mut region, s, cfg, net);
            }
            if region == before {
                break;
            }
        }
    } else {
        for s in 0..region.lower.len() {
            while region.width(s) < w_min {
                let before = (region.lower[s], region.upper[s]);
                widen_species(&mut region, s, cfg, net);
                if (region.lower[s], region.upper[s]) == before {
                    break;
                }
            }
        }
    }
    region
}

/// Row-major bijection between the states of a region and `0..d`; the
/// coffin state takes index `d`. The last species varies fastest.
#[derive(Debug, Clone)]
pub struct Enumeration {
    lower: State,
    upper: State,
    strides: Vec<usize>,
    volume: usize,
}

impl Enumeration {
    pub fn new(region: &Region) -> Result<Self> {
        let volume = region.volume()?;
        let ns = region.lower.len();
        let mut strides = vec![1usize; ns];
        for s in (0..ns.saturating_sub(1)).rev() {
            strides[s] = strides[s + 1] * region.width(s + 1) as usize;
        }
        Ok(Self {
            lower: region.lower.clone(),
            upper: region.upper.clone(),
            strides,
            volume,
        })
    }

    /// `d_r`, the number of lattice states.
    pub fn volume(&self) -> usize {
        self.volume
    }

    pub fn coffin(&self) -> usize {
        self.volume
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn index(&self, x: &[i64]) -> Option<usize> {
        let mut k = 0;
        for (s, &v) in x.iter().enumerate() {
            if v < self.lower[s] || v > self.upper[s] {
                return None;
            }
            k += (v - self.lower[s]) as usize * self.strides[s];
        }
        Some(k)
    }

    pub fn state(&self, mut k: usize) -> Option<State> {
        if k >= self.volume {
            return None;
        }
        let mut x = self.lower.clone();
        for (s, stride) in self.strides.iter().enumerate() {
            x[s] += (k / stride) as i64;
            k %= stride;
        }
        Some(x)
    }

    /// All states in index order.
    pub fn states(&self) -> impl Iterator<Item = State> + '_ {
        (0..self.volume).map(|k| self.state(k).expect("k < volume"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(gamma: f64, w_min: u64) -> RegionConfig {
        RegionConfig::new(gamma, w_min)
    }

    #[test]
    fn initial_regions() {
        let lv = ReactionNetwork::lotka_volterra();
        let r = initial_region(&[5, 5], &[5, 5], &cfg(0.0, 0), &lv);
        assert_eq!((r.lower.clone(), r.upper.clone(), r.index), (vec![5, 5], vec![5, 5], 1));
        let r = initial_region(&[3, 10], &[7, 2], &cfg(0.0, 0), &lv);
        assert_eq!((r.lower, r.upper), (vec![3, 2], vec![7, 10]));
        let sch = ReactionNetwork::schlogel();
        let r = initial_region(&[5], &[5], &cfg(0.0, 3), &sch);
        assert_eq!((r.lower, r.upper), (vec![4], vec![6]));
    }

    #[test]
    fn w_min_per_species_versus_joint() {
        let lv = ReactionNetwork::lotka_volterra();
        let per = initial_region(&[10, 10], &[10, 30], &cfg(0.0, 5), &lv);
        assert_eq!((per.lower, per.upper), (vec![8, 10], vec![12, 30]));
        let mut joint_cfg = cfg(0.0, 5);
        joint_cfg.joint_w_min = true;
        let joint = initial_region(&[10, 10], &[10, 30], &joint_cfg, &lv);
        assert_eq!((joint.lower, joint.upper), (vec![8, 8], vec![12, 32]));
    }

    #[test]
    fn w_min_stops_at_hard_bounds() {
        let mut net = ReactionNetwork::schlogel();
        net.hard_upper = vec![Some(3)];
        let r = initial_region(&[1], &[2], &cfg(0.0, 10), &net);
        assert_eq!((r.lower, r.upper), (vec![0], vec![3]));
    }

    #[test]
    fn expansion_steps() {
        let sch = ReactionNetwork::schlogel();
        let r = Region { lower: vec![3], upper: vec![7], index: 1 };
        let e = expand(&r, &cfg(0.0, 0), &sch);
        assert_eq!((e.lower, e.upper, e.index), (vec![2], vec![8], 2));
        let r = Region { lower: vec![0], upper: vec![29], index: 4 };
        let e = expand(&r, &cfg(0.1, 0), &sch);
        assert_eq!((e.lower, e.upper, e.index), (vec![0], vec![32], 5));
        // 0.25 * 10 = 2.5 rounds up to 3, floor gives 2
        let r = Region { lower: vec![10], upper: vec![19], index: 1 };
        assert_eq!(expand(&r, &cfg(0.25, 0), &sch).upper, vec![22]);
        let mut floor = cfg(0.25, 0);
        floor.rounding = StepRounding::Floor;
        assert_eq!(expand(&r, &floor, &sch).upper, vec![21]);
    }

    #[test]
    fn enumeration_is_row_major() {
        let r = Region { lower: vec![0, 0], upper: vec![1, 1], index: 1 };
        let e = r.enumerate().unwrap();
        assert_eq!(e.volume(), 4);
        assert_eq!(e.index(&[0, 0]), Some(0));
        assert_eq!(e.index(&[0, 1]), Some(1));
        assert_eq!(e.index(&[1, 0]), Some(2));
        assert_eq!(e.index(&[1, 1]), Some(3));
        assert_eq!(e.coffin(), 4);
        assert_eq!(e.index(&[2, 0]), None);
        let single = Region { lower: vec![5], upper: vec![5], index: 1 };
        assert_eq!(single.volume().unwrap(), 1);
    }

    #[test]
    fn volume_overflow_is_reported() {
        let r = Region {
            lower: vec![0; 4],
            upper: vec![i64::MAX / 2; 4],
            index: 1,
        };
        assert!(matches!(r.volume(), Err(Error::VolumeOverflow)));
    }

    #[test]
    fn nested_coordinates_agree() {
        let lv = ReactionNetwork::lotka_volterra();
        let r1 = initial_region(&[3, 4], &[5, 2], &cfg(0.2, 2), &lv);
        let r2 = expand(&r1, &cfg(0.2, 2), &lv);
        let (e1, e2) = (r1.enumerate().unwrap(), r2.enumerate().unwrap());
        for x in e1.states() {
            let k2 = e2.index(&x).unwrap();
            assert_eq!(e2.state(k2).unwrap(), x);
        }
    }

    proptest! {
        #[test]
        fn enumeration_bijection(
            lo in proptest::collection::vec(-5i64..5, 3),
            w in proptest::collection::vec(1i64..5, 3),
        ) {
            let up: Vec<i64> = lo.iter().zip(&w).map(|(l, w)| l + w - 1).collect();
            let r = Region { lower: lo, upper: up, index: 1 };
            let e = r.enumerate().unwrap();
            for k in 0..e.volume() {
                let x = e.state(k).unwrap();
                prop_assert!(r.contains(&x));
                prop_assert_eq!(e.index(&x), Some(k));
            }
        }

        #[test]
        fn expansion_nests_and_eventually_covers(
            a in proptest::collection::vec(0i64..50, 2),
            b in proptest::collection::vec(0i64..50, 2),
            y in proptest::collection::vec(0i64..400, 2),
            gamma in 0.0f64..0.5,
            w_min in 0u64..20,
        ) {
            let lv = ReactionNetwork::lotka_volterra();
            let c = cfg(gamma, w_min);
            let mut r = initial_region(&a, &b, &c, &lv);
            prop_assert!(r.contains(&a) && r.contains(&b));
            for _ in 0..1000 {
                if r.contains(&y) {
                    break;
                }
                let next = expand(&r, &c, &lv);
                prop_assert!(next.contains_region(&r));
                r = next;
            }
            prop_assert!(r.contains(&y));
        }
    }
}
