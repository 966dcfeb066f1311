//! Seeded generator of labeled behavior-pattern graphs.
//!
//! Four account archetypes are planted among background noise accounts:
//!
//! - **exchange**: hub with high in- and out-degree and high interaction
//!   counts per counterparty;
//! - **ico**: a few large incoming investments and many outgoing reward
//!   payments of moderate amount;
//! - **mining**: many outgoing payouts whose per-edge average amount has very
//!   low variance around a configured mean;
//! - **phish**: high in-degree, near-zero out-degree, incoming average
//!   amounts clustered around a threshold.
//!
//! Labeled accounts interact only with background accounts through their
//! archetype edges, so degree parameters are echoed exactly in the built
//! graph. Background accounts trade among themselves, which gives sampled
//! subgraphs a second hop. Every class also carries a contract-call
//! preference pool so node features are informative. The generator emits raw
//! records (plus an address-to-label table); rebuilding the graph from those
//! records reproduces the intended merged edges exactly.

use crate::graph::InteractionRecord;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, Copy)]
pub struct ExchangeParams {
    pub in_degree: (usize, usize),
    pub out_degree: (usize, usize),
    pub times: (u64, u64),
    pub amount_eth: (f64, f64),
}

#[derive(Debug, Clone, Copy)]
pub struct IcoParams {
    pub investors: (usize, usize),
    pub invest_eth: (f64, f64),
    pub rewards: (usize, usize),
    pub reward_eth: (f64, f64),
    pub times: (u64, u64),
}

#[derive(Debug, Clone, Copy)]
pub struct MiningParams {
    pub funders: (usize, usize),
    pub payouts: (usize, usize),
    pub times: (u64, u64),
    pub avg_eth: f64,
    pub avg_sigma_eth: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct PhishParams {
    pub victims: (usize, usize),
    pub out_degree: (usize, usize),
    pub victim_avg_eth: f64,
    pub victim_sigma_eth: f64,
    pub times: (u64, u64),
}

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub exchanges: usize,
    pub icos: usize,
    pub minings: usize,
    pub phishes: usize,
    pub background: usize,
    pub contracts: usize,
    /// Mean number of background-to-background edges per background account.
    pub background_degree: f64,
    pub background_eth: (f64, f64),
    pub exchange: ExchangeParams,
    pub ico: IcoParams,
    pub mining: MiningParams,
    pub phish: PhishParams,
    pub calls_per_labeled: (u64, u64),
    pub calls_per_background: (u64, u64),
    /// Probability that a labeled account's call lands in its class pool.
    pub class_call_affinity: f64,
    pub start_day: i64,
    pub duration_days: i64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            exchanges: 50,
            icos: 50,
            minings: 50,
            phishes: 50,
            background: 1000,
            contracts: 64,
            background_degree: 1.5,
            background_eth: (0.05, 0.8),
            exchange: ExchangeParams {
                in_degree: (12, 25),
                out_degree: (12, 25),
                times: (20, 60),
                amount_eth: (0.05, 3.0),
            },
            ico: IcoParams {
                investors: (3, 6),
                invest_eth: (50.0, 200.0),
                rewards: (12, 25),
                reward_eth: (0.3, 0.8),
                times: (1, 3),
            },
            mining: MiningParams {
                funders: (1, 3),
                payouts: (12, 25),
                times: (3, 8),
                avg_eth: 2.0,
                avg_sigma_eth: 0.01,
            },
            phish: PhishParams {
                victims: (10, 22),
                out_degree: (0, 1),
                victim_avg_eth: 8.0,
                victim_sigma_eth: 0.2,
                times: (1, 2),
            },
            calls_per_labeled: (5, 15),
            calls_per_background: (0, 3),
            class_call_affinity: 0.9,
            start_day: 18_000,
            duration_days: 90,
        }
    }
}

pub const CLASS_NAMES: [&str; 4] = ["exchange", "ico", "mining", "phish"];

pub struct SyntheticData {
    /// Raw records sorted by timestamp.
    pub records: Vec<InteractionRecord>,
    /// (address, class name) for every labeled account.
    pub labels: Vec<(String, String)>,
}

const WEI: f64 = 1e18;
const FUNCTION_NAMES: [&str; 6] = ["transfer", "approve", "mint", "swap", "deposit", "withdraw"];

struct EdgeIntent {
    from: String,
    to: String,
    times: u64,
    total_wei: u128,
}

struct CallIntent {
    from: String,
    contract: usize,
    times: u64,
}

fn range_u(rng: &mut ChaCha8Rng, range: (usize, usize)) -> usize {
    rng.random_range(range.0..=range.1)
}

fn range_t(rng: &mut ChaCha8Rng, range: (u64, u64)) -> u64 {
    rng.random_range(range.0..=range.1)
}

fn eth_to_wei(eth: f64) -> u128 {
    (eth.max(0.0) * WEI) as u128
}

struct Builder<'a> {
    spec: &'a SyntheticSpec,
    rng: ChaCha8Rng,
    edges: Vec<EdgeIntent>,
    calls: Vec<CallIntent>,
}

impl<'a> Builder<'a> {
    fn background_id(&self, i: usize) -> String {
        format!("0xb{i:05x}")
    }

    fn pick_background(&mut self, count: usize) -> Vec<String> {
        let n = self.spec.background;
        sample_indices(&mut self.rng, n, count.min(n))
            .into_iter()
            .map(|i| self.background_id(i))
            .collect()
    }

    fn edge(&mut self, from: &str, to: &str, times: u64, total_eth: f64) {
        self.edges.push(EdgeIntent {
            from: from.to_string(),
            to: to.to_string(),
            times,
            total_wei: eth_to_wei(total_eth),
        });
    }

    fn exchange(&mut self, id: &str) {
        let p = self.spec.exchange;
        let d_in = range_u(&mut self.rng, p.in_degree);
        for c in self.pick_background(d_in) {
            let times = range_t(&mut self.rng, p.times);
            let per: f64 = self.rng.random_range(p.amount_eth.0..=p.amount_eth.1);
            self.edge(&c, id, times, per * times as f64);
        }
        let d_out = range_u(&mut self.rng, p.out_degree);
        for c in self.pick_background(d_out) {
            let times = range_t(&mut self.rng, p.times);
            let per: f64 = self.rng.random_range(p.amount_eth.0..=p.amount_eth.1);
            self.edge(id, &c, times, per * times as f64);
        }
    }

    fn ico(&mut self, id: &str) {
        let p = self.spec.ico;
        let d_in = range_u(&mut self.rng, p.investors);
        for c in self.pick_background(d_in) {
            let eth: f64 = self.rng.random_range(p.invest_eth.0..=p.invest_eth.1);
            self.edge(&c, id, 1, eth);
        }
        let d_out = range_u(&mut self.rng, p.rewards);
        for c in self.pick_background(d_out) {
            let times = range_t(&mut self.rng, p.times);
            let per: f64 = self.rng.random_range(p.reward_eth.0..=p.reward_eth.1);
            self.edge(id, &c, times, per * times as f64);
        }
    }

    fn mining(&mut self, id: &str) {
        let p = self.spec.mining;
        let d_in = range_u(&mut self.rng, p.funders);
        for c in self.pick_background(d_in) {
            let eth: f64 = self.rng.random_range(1.0..=10.0);
            self.edge(&c, id, 1, eth);
        }
        // payouts share a stable per-edge average income
        let normal = Normal::new(p.avg_eth, p.avg_sigma_eth).expect("sigma >= 0");
        let d_out = range_u(&mut self.rng, p.payouts);
        for c in self.pick_background(d_out) {
            let times = range_t(&mut self.rng, p.times);
            let avg = normal.sample(&mut self.rng).max(p.avg_eth * 0.01);
            self.edge(id, &c, times, avg * times as f64);
        }
    }

    fn phish(&mut self, id: &str) {
        let p = self.spec.phish;
        let normal = Normal::new(p.victim_avg_eth, p.victim_sigma_eth).expect("sigma >= 0");
        let d_in = range_u(&mut self.rng, p.victims);
        for c in self.pick_background(d_in) {
            let times = range_t(&mut self.rng, p.times);
            let avg = normal.sample(&mut self.rng).max(p.victim_avg_eth * 0.01);
            self.edge(&c, id, times, avg * times as f64);
        }
        let d_out = range_u(&mut self.rng, p.out_degree);
        for c in self.pick_background(d_out) {
            let eth: f64 = self.rng.random_range(0.5..=3.0);
            self.edge(id, &c, 1, eth);
        }
    }

    /// Contract pools: the first 20% of contracts are shared, the rest is
    /// split evenly across the four classes.
    fn class_pool(&self, class: usize) -> (usize, usize) {
        let shared = (self.spec.contracts / 5).max(1);
        let per_class = (self.spec.contracts - shared) / 4;
        let start = shared + class * per_class;
        (start, start + per_class.max(1))
    }

    fn labeled_calls(&mut self, id: &str, class: usize) {
        let n = range_t(&mut self.rng, self.spec.calls_per_labeled).max(1);
        let (lo, hi) = self.class_pool(class);
        for _ in 0..n {
            let contract = if self.rng.random::<f64>() < self.spec.class_call_affinity {
                self.rng.random_range(lo..hi)
            } else {
                self.rng.random_range(0..self.spec.contracts)
            };
            // repeated calls to the preferred contract, so call counts stand
            // out against one-off background calls
            let times = range_t(&mut self.rng, (2, 5));
            self.calls.push(CallIntent {
                from: id.to_string(),
                contract,
                times,
            });
        }
    }

    fn background_activity(&mut self) {
        let total_edges =
            (self.spec.background as f64 * self.spec.background_degree / 2.0).round() as usize;
        for _ in 0..total_edges {
            let a = self.rng.random_range(0..self.spec.background);
            let mut b = self.rng.random_range(0..self.spec.background);
            if a == b {
                b = (b + 1) % self.spec.background;
            }
            let times = range_t(&mut self.rng, (1, 4));
            let per: f64 = self
                .rng
                .random_range(self.spec.background_eth.0..=self.spec.background_eth.1);
            let (from, to) = (self.background_id(a), self.background_id(b));
            self.edge(&from, &to, times, per * times as f64);
        }
        for i in 0..self.spec.background {
            let n = range_t(&mut self.rng, self.spec.calls_per_background);
            let from = self.background_id(i);
            for _ in 0..n {
                let contract = self.rng.random_range(0..self.spec.contracts);
                self.calls.push(CallIntent {
                    from: from.clone(),
                    contract,
                    times: 1,
                });
            }
        }
    }
}

/// Generates records and labels for the given spec, reproducibly under one
/// seed. Class counts of zero skip that archetype.
pub fn generate(spec: &SyntheticSpec, seed: u64) -> SyntheticData {
    assert!(spec.contracts >= 8, "need at least 8 contracts for class pools");
    assert!(
        spec.background >= 30,
        "need at least 30 background accounts for counterparty sampling"
    );
    let mut b = Builder {
        spec,
        rng: ChaCha8Rng::seed_from_u64(seed),
        edges: Vec::new(),
        calls: Vec::new(),
    };
    let mut labels = Vec::new();
    let counts = [spec.exchanges, spec.icos, spec.minings, spec.phishes];
    for (class, &count) in counts.iter().enumerate() {
        for i in 0..count {
            let id = format!("0x{}{i:05x}", CLASS_NAMES[class].chars().next().unwrap());
            match class {
                0 => b.exchange(&id),
                1 => b.ico(&id),
                2 => b.mining(&id),
                _ => b.phish(&id),
            }
            b.labeled_calls(&id, class);
            labels.push((id, CLASS_NAMES[class].to_string()));
        }
    }
    b.background_activity();

    // Emit raw records: split each merged-edge intent into `times` amounts
    // that sum exactly to the intended total, timestamps spread over the
    // simulation window.
    let t0 = spec.start_day * 86_400;
    let window = spec.duration_days * 86_400;
    let mut records = Vec::new();
    let mut rng = b.rng;
    for intent in &b.edges {
        let base = intent.total_wei / intent.times as u128;
        let remainder = intent.total_wei % intent.times as u128;
        for k in 0..intent.times {
            let value = base + if (k as u128) < remainder { 1 } else { 0 };
            let timestamp = t0 + rng.random_range(0..window.max(1));
            records.push(InteractionRecord {
                block_number: 0,
                timestamp,
                from: intent.from.clone(),
                to: intent.to.clone(),
                from_is_contract: false,
                to_is_contract: false,
                calling_function: None,
                value,
            });
        }
    }
    for call in &b.calls {
        for _ in 0..call.times {
            let timestamp = t0 + rng.random_range(0..window.max(1));
            let name = FUNCTION_NAMES[rng.random_range(0..FUNCTION_NAMES.len())];
            records.push(InteractionRecord {
                block_number: 0,
                timestamp,
                from: call.from.clone(),
                to: format!("0xc{:04x}", call.contract),
                from_is_contract: false,
                to_is_contract: true,
                calling_function: Some(name.to_string()),
                value: 0,
            });
        }
    }
    records.sort_by(|a, b| {
        (a.timestamp, &a.from, &a.to, a.value).cmp(&(b.timestamp, &b.from, &b.to, b.value))
    });
    for (i, r) in records.iter_mut().enumerate() {
        r.block_number = 1_000_000 + (i / 5) as u64;
    }
    SyntheticData { records, labels }
}
