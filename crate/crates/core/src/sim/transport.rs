//! Virtual-time transport backed by a simulated fleet.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::net::Ipv4Addr;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fleet::Fleet;
use super::router::SIM_PROBER_ADDR;
use crate::probe::{Received, Transport, TransportError};

const BASE_LATENCY_MS: u64 = 5;
const LATENCY_SPREAD_MS: u64 = 50;

/// Delivers probes to simulated routers and queues their replies after a
/// fixed per-router latency. Time only moves when the scanner waits.
pub struct SimTransport {
    fleet: Fleet,
    by_addr: HashMap<Ipv4Addr, usize>,
    now: Duration,
    queue: BinaryHeap<Reverse<(Duration, u64, Vec<u8>)>>,
    seq: u64,
    loss_rng: ChaCha8Rng,
    fail_sends_to: HashSet<Ipv4Addr>,
    fatal_after: Option<usize>,
    sends: usize,
}

impl SimTransport {
    pub fn new(fleet: Fleet) -> Self {
        let by_addr = fleet
            .routers
            .iter()
            .enumerate()
            .map(|(i, r)| (r.address, i))
            .collect();
        let mut loss_rng = ChaCha8Rng::seed_from_u64(fleet.spec.seed);
        loss_rng.set_stream(u64::MAX);
        SimTransport {
            fleet,
            by_addr,
            now: Duration::ZERO,
            queue: BinaryHeap::new(),
            seq: 0,
            loss_rng,
            fail_sends_to: HashSet::new(),
            fatal_after: None,
            sends: 0,
        }
    }

    /// Sends to these addresses fail with a per-target error.
    pub fn fail_sends_to(mut self, addrs: impl IntoIterator<Item = Ipv4Addr>) -> Self {
        self.fail_sends_to.extend(addrs);
        self
    }

    /// The transport breaks for good once this many packets were sent.
    pub fn fatal_after(mut self, sends: usize) -> Self {
        self.fatal_after = Some(sends);
        self
    }

    pub fn fleet(&self) -> &Fleet {
        &self.fleet
    }

    pub fn into_fleet(self) -> Fleet {
        self.fleet
    }

    fn latency(index: usize) -> Duration {
        Duration::from_millis(BASE_LATENCY_MS + (index as u64 % LATENCY_SPREAD_MS))
    }
}

impl Transport for SimTransport {
    fn local_addr(&self) -> Ipv4Addr {
        SIM_PROBER_ADDR
    }

    fn now(&self) -> Duration {
        self.now
    }

    fn wait_until(&mut self, t: Duration) -> Result<(), TransportError> {
        self.now = self.now.max(t);
        Ok(())
    }

    fn send(&mut self, dst: Ipv4Addr, packet: &[u8]) -> Result<(), TransportError> {
        if self.fatal_after.is_some_and(|n| self.sends >= n) {
            return Err(TransportError::Fatal("simulated transport failure".into()));
        }
        if self.fail_sends_to.contains(&dst) {
            return Err(TransportError::Send(format!(
                "simulated send failure to {dst}"
            )));
        }
        self.sends += 1;
        let Some(&i) = self.by_addr.get(&dst) else {
            return Ok(());
        };
        let router = &mut self.fleet.routers[i];
        if let Some(reply) = router.handle_packet(packet, self.now.as_secs_f64()) {
            let loss = self.fleet.spec.loss;
            if loss > 0.0 && self.loss_rng.gen_bool(loss) {
                return Ok(());
            }
            self.seq += 1;
            self.queue
                .push(Reverse((self.now + Self::latency(i), self.seq, reply)));
        }
        Ok(())
    }

    fn drain(&mut self) -> Result<Vec<Received>, TransportError> {
        let mut out = Vec::new();
        while let Some(Reverse((at, _, _))) = self.queue.peek() {
            if *at > self.now {
                break;
            }
            let Reverse((at, _, bytes)) = self.queue.pop().expect("peeked");
            out.push(Received { at, bytes });
        }
        Ok(out)
    }
}
