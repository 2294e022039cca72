//! Per-link latency and loss. Every link draws from its own random stream
//! derived from the scenario seed and the endpoint addresses, so loss
//! decisions are a pure function of (seed, link, message index).

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::ident::Locator;
use crate::simnet::rng_stream;

pub type LinkKey = (Locator, Locator);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    pub one_way_latency_ms: u64,
    pub loss_prob: f64,
}

pub struct LinkModel {
    pub params: LinkParams,
    rng: ChaCha12Rng,
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

/// The set of directed links, created lazily with the default parameters and
/// overridable per endpoint pair.
pub struct LinkSet {
    seed: u64,
    default_params: LinkParams,
    overrides: HashMap<LinkKey, LinkParams>,
    links: HashMap<LinkKey, LinkModel>,
}

impl LinkSet {
    pub fn new(seed: u64, default_params: LinkParams) -> Self {
        LinkSet {
            seed,
            default_params,
            overrides: HashMap::new(),
            links: HashMap::new(),
        }
    }

    pub fn set_override(&mut self, src: Locator, dst: Locator, params: LinkParams) {
        self.overrides.insert((src, dst), params);
        if let Some(link) = self.links.get_mut(&(src, dst)) {
            link.params = params;
        }
    }

    fn link_mut(&mut self, src: Locator, dst: Locator) -> &mut LinkModel {
        let key = (src, dst);
        if !self.links.contains_key(&key) {
            let params = self.overrides.get(&key).copied().unwrap_or(self.default_params);
            let label = format!("link:{src}->{dst}");
            self.links.insert(
                key,
                LinkModel {
                    params,
                    rng: rng_stream(self.seed, &label),
                    sent: 0,
                    delivered: 0,
                    dropped: 0,
                },
            );
        }
        self.links.get_mut(&key).expect("link just inserted")
    }

    /// Decides one transmission: `Some(latency)` to deliver after the link's
    /// one-way latency, `None` when the message is lost.
    pub fn transmit(&mut self, src: Locator, dst: Locator) -> Option<u64> {
        let link = self.link_mut(src, dst);
        link.sent += 1;
        let lost = link.params.loss_prob > 0.0 && link.rng.gen::<f64>() < link.params.loss_prob;
        if lost {
            link.dropped += 1;
            None
        } else {
            link.delivered += 1;
            Some(link.params.one_way_latency_ms)
        }
    }

    /// (sent, delivered, dropped) accumulated over every link.
    pub fn totals(&self) -> (u64, u64, u64) {
        let mut totals = (0, 0, 0);
        for link in self.links.values() {
            totals.0 += link.sent;
            totals.1 += link.delivered;
            totals.2 += link.dropped;
        }
        totals
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::Ipv4Addr;

    fn loc(last: u8) -> Locator {
        Locator::new(Ipv4Addr::new(10, 1, 0, last), 1)
    }

    fn links(loss: f64) -> LinkSet {
        LinkSet::new(
            99,
            LinkParams {
                one_way_latency_ms: 10,
                loss_prob: loss,
            },
        )
    }

    #[test]
    fn lossless_link_always_delivers() {
        let mut set = links(0.0);
        for _ in 0..1000 {
            assert_eq!(set.transmit(loc(1), loc(2)), Some(10));
        }
        assert_eq!(set.totals(), (1000, 1000, 0));
    }

    #[test]
    fn total_loss_never_delivers() {
        let mut set = links(1.0);
        for _ in 0..100 {
            assert_eq!(set.transmit(loc(1), loc(2)), None);
        }
        assert_eq!(set.totals(), (100, 0, 100));
    }

    #[test]
    fn drop_count_within_binomial_bound() {
        // 10,000 sends at p=0.01: expect 100 +- 3*sqrt(n*p*(1-p)).
        let mut set = links(0.01);
        for _ in 0..10_000 {
            set.transmit(loc(1), loc(2));
        }
        let (sent, delivered, dropped) = set.totals();
        assert_eq!(sent, 10_000);
        assert_eq!(delivered + dropped, sent);
        let mean = 100.0;
        let sigma = (10_000.0f64 * 0.01 * 0.99).sqrt();
        assert!(
            (dropped as f64 - mean).abs() <= 3.0 * sigma,
            "dropped {dropped} outside 3-sigma of {mean}"
        );
    }

    #[test]
    fn same_seed_same_decisions() {
        let run = || {
            let mut set = links(0.3);
            (0..64).map(|_| set.transmit(loc(1), loc(2)).is_some()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
