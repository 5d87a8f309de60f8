//! Slotted contention channel. At most one sender wins a slot; simultaneous
//! attempts destroy every colliding payload and a winner learns of its
//! success within the slot. Nothing is retransmitted.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SlotOutcome {
    pub delta: Vec<bool>,
    pub rho: Vec<bool>,
    pub sigma: Vec<bool>,
}

impl SlotOutcome {
    pub fn successes(&self) -> usize {
        self.sigma.iter().filter(|&&s| s).count()
    }

    pub fn collided(&self) -> bool {
        self.delta.iter().filter(|&&d| d).count() > 1
    }
}

/// One loop's view of a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoopOutcome {
    pub delta: bool,
    pub rho: bool,
    pub sigma: bool,
}

impl LoopOutcome {
    /// An attempt that went unacknowledged.
    pub fn collision(&self) -> bool {
        self.delta && !self.sigma
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NetworkConfig {
    /// Every configured loop contends for the same slots.
    Full,
    /// A single loop whose channel is free with probability `q` in every slot.
    Abstracted { q: f64 },
}

impl NetworkConfig {
    pub fn validate(&self, loops: usize) -> Result<()> {
        match *self {
            NetworkConfig::Full if loops == 0 => {
                Err(Error::InvalidConfig("a full network needs at least one loop".into()))
            }
            NetworkConfig::Full => Ok(()),
            NetworkConfig::Abstracted { q } => {
                if !(0.0..=1.0).contains(&q) {
                    return Err(Error::InvalidProbability {
                        what: "channel availability q",
                        value: q,
                        range: "[0, 1]",
                    });
                }
                if loops != 1 {
                    return Err(Error::InvalidConfig(format!(
                        "the abstracted network models exactly one loop, got {loops}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Availability probability for the abstracted channel; `None` for a full
    /// network where it depends on the other loops.
    pub fn q(&self) -> Option<f64> {
        match *self {
            NetworkConfig::Full => None,
            NetworkConfig::Abstracted { q } => Some(q),
        }
    }
}

/// Resolves one slot of a full network: loop `i` sees a free channel iff no
/// other loop attempted.
pub fn resolve_slot(delta: &[bool]) -> SlotOutcome {
    let attempts = delta.iter().filter(|&&d| d).count();
    let rho: Vec<bool> = delta
        .iter()
        .map(|&d| attempts - usize::from(d) == 0)
        .collect();
    let sigma: Vec<bool> = delta.iter().zip(&rho).map(|(&d, &r)| d && r).collect();
    let outcome = SlotOutcome {
        delta: delta.to_vec(),
        rho,
        sigma,
    };
    assert!(outcome.successes() <= 1, "more than one winner in a slot");
    outcome
}

/// Draws the channel state for a single abstracted loop. The availability
/// draw is taken on every slot so the channel stream stays aligned across
/// policies.
pub fn resolve_slot_abstracted(delta: bool, q: f64, rng: &mut StreamRng) -> LoopOutcome {
    let u: f64 = rng.random();
    let rho = u < q;
    LoopOutcome {
        delta,
        rho,
        sigma: rho && delta,
    }
}

/// Success probability of loop `i` when every loop triggers independently
/// with the given probabilities.
pub fn full_network_success_probability(p: &[f64], i: usize) -> f64 {
    p.iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .fold(p[i], |acc, (_, &pj)| acc * (1.0 - pj))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn sole_transmitter_wins() {
        let o = resolve_slot(&[true, false, false]);
        assert_eq!(o.sigma, vec![true, false, false]);
        assert_eq!(o.rho, vec![true, false, false]);
    }

    #[test]
    fn collision_loses_everything() {
        let o = resolve_slot(&[true, true, false]);
        assert_eq!(o.sigma, vec![false, false, false]);
        assert!(o.collided());
    }

    #[test]
    fn idle_slot() {
        let o = resolve_slot(&[false, false, false, false]);
        assert!(o.rho.iter().all(|&r| r));
        assert_eq!(o.successes(), 0);
    }

    #[test]
    fn abstracted_extremes() {
        let mut rng = stream(1, 0, 0, Purpose::Channel);
        for i in 0..1000 {
            let d = i % 3 == 0;
            assert_eq!(resolve_slot_abstracted(d, 1.0, &mut rng).sigma, d);
            assert!(!resolve_slot_abstracted(d, 0.0, &mut rng).sigma);
        }
    }

    #[test]
    fn abstracted_success_rate() {
        let mut rng = stream(2, 0, 0, Purpose::Channel);
        let n = 100_000;
        let wins = (0..n)
            .filter(|_| resolve_slot_abstracted(true, 0.5, &mut rng).sigma)
            .count();
        assert!((wins as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn full_network_matches_product_formula() {
        let p = [0.2, 0.4, 0.1];
        let mut rng = stream(3, 0, 0, Purpose::Scheduler);
        let n = 200_000;
        let mut wins = [0usize; 3];
        for _ in 0..n {
            let delta: Vec<bool> = p.iter().map(|&pi| rng.random::<f64>() < pi).collect();
            let o = resolve_slot(&delta);
            for (w, &s) in wins.iter_mut().zip(&o.sigma) {
                *w += usize::from(s);
            }
        }
        for i in 0..3 {
            let eta = full_network_success_probability(&p, i);
            let se = (eta * (1.0 - eta) / n as f64).sqrt();
            let freq = wins[i] as f64 / n as f64;
            assert!((freq - eta).abs() < 3.0 * se, "loop {i}: {freq} vs {eta}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(NetworkConfig::Full.validate(0).is_err());
        assert!(NetworkConfig::Abstracted { q: 1.5 }.validate(1).is_err());
        assert!(NetworkConfig::Abstracted { q: 0.5 }.validate(2).is_err());
        assert!(NetworkConfig::Abstracted { q: 0.5 }.validate(1).is_ok());
    }
}
