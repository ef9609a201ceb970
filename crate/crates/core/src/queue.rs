//! Bounded FIFO queue with a pluggable AQM.

use std::collections::VecDeque;

use rand::RngCore;

use crate::aqm::{Aqm, Verdict};
use crate::packet::Packet;
use crate::time::SimTime;

/// Outcome of attempting to admit a packet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Admission {
    Admitted,
    AdmittedMarked,
    Dropped,
}

pub struct Queue {
    capacity_pkts: usize,
    backlog: VecDeque<Packet>,
    byte_count: u64,
    aqm: Box<dyn Aqm>,
}

impl Queue {
    pub fn new(capacity_pkts: usize, aqm: Box<dyn Aqm>) -> Queue {
        Queue {
            capacity_pkts,
            backlog: VecDeque::new(),
            byte_count: 0,
            aqm,
        }
    }

    pub fn len(&self) -> usize {
        self.backlog.len()
    }

    pub fn is_empty(&self) -> bool {
        self.backlog.is_empty()
    }

    pub fn bytes(&self) -> u64 {
        self.byte_count
    }

    pub fn capacity(&self) -> usize {
        self.capacity_pkts
    }

    pub fn aqm(&self) -> &dyn Aqm {
        self.aqm.as_ref()
    }

    pub fn aqm_mut(&mut self) -> &mut dyn Aqm {
        self.aqm.as_mut()
    }

    /// Admits, marks, or drops an arriving packet.
    ///
    /// The AQM sees every data arrival (its averages advance even for
    /// packets the buffer cannot hold), but a full buffer drops the packet
    /// regardless of the verdict. A Mark verdict degrades to Drop for
    /// packets that are not ECN-capable.
    pub fn enqueue(&mut self, mut pkt: Packet, now: SimTime, rng: &mut dyn RngCore) -> Admission {
        let verdict = if pkt.is_ack {
            Verdict::Forward
        } else {
            self.aqm.enqueue_verdict(&pkt, self.backlog.len(), now, rng)
        };
        if self.backlog.len() >= self.capacity_pkts {
            return Admission::Dropped;
        }
        match verdict {
            Verdict::Forward => {
                self.admit(pkt, now);
                Admission::Admitted
            }
            Verdict::Mark => {
                if pkt.ecn_capable {
                    pkt.mark();
                    self.admit(pkt, now);
                    Admission::AdmittedMarked
                } else {
                    Admission::Dropped
                }
            }
            Verdict::Drop => Admission::Dropped,
        }
    }

    fn admit(&mut self, mut pkt: Packet, now: SimTime) {
        pkt.enqueue_time = now;
        self.byte_count += pkt.size as u64;
        self.backlog.push_back(pkt);
        self.aqm.observe_backlog(self.backlog.len(), now);
    }

    /// Removes the next transmittable packet, applying dequeue-side AQM
    /// verdicts. Head-dropped packets are returned separately so the
    /// caller can account for them.
    pub fn dequeue(&mut self, now: SimTime) -> (Option<(Packet, SimTime)>, Vec<Packet>) {
        let mut head_drops = Vec::new();
        while let Some(mut pkt) = self.backlog.pop_front() {
            self.byte_count -= pkt.size as u64;
            let sojourn = now - pkt.enqueue_time;
            let verdict = if pkt.is_ack {
                Verdict::Forward
            } else {
                self.aqm.dequeue_verdict(&pkt, sojourn, self.byte_count, now)
            };
            self.aqm.observe_backlog(self.backlog.len(), now);
            match verdict {
                Verdict::Forward => return (Some((pkt, sojourn)), head_drops),
                Verdict::Mark => {
                    if pkt.ecn_capable {
                        pkt.mark();
                        return (Some((pkt, sojourn)), head_drops);
                    }
                    head_drops.push(pkt);
                }
                Verdict::Drop => head_drops.push(pkt),
            }
        }
        (None, head_drops)
    }
}
