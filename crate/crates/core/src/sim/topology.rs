//! Three-node layout, clock and slot arithmetic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::photon::ChannelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Node {
    Alice,
    Bob,
    Charlie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeTopology {
    pub clock_rate_hz: f64,
    pub bin_separation_ps: f64,
    /// Quantum channel carrying Alice's qubits.
    pub alice_charlie: ChannelParams,
    /// Quantum channel carrying the idler photons.
    pub bob_charlie: ChannelParams,
    /// Classical channel returning Charlie's flags to Bob.
    pub charlie_bob_classical: ChannelParams,
}

impl Default for NodeTopology {
    fn default() -> Self {
        // deployed fibre at ~4.9 µs/km: 6.2 km and 11.1 km
        Self {
            clock_rate_hz: 80.0e6,
            bin_separation_ps: 1400.0,
            alice_charlie: ChannelParams {
                loss_db: 6.0,
                base_delay: 30_380.0,
            },
            bob_charlie: ChannelParams {
                loss_db: 5.7,
                base_delay: 54_390.0,
            },
            charlie_bob_classical: ChannelParams {
                loss_db: 0.0,
                base_delay: 54_390.0,
            },
        }
    }
}

impl NodeTopology {
    pub fn channels(&self) -> [(Node, Node, &ChannelParams); 3] {
        [
            (Node::Alice, Node::Charlie, &self.alice_charlie),
            (Node::Bob, Node::Charlie, &self.bob_charlie),
            (Node::Charlie, Node::Bob, &self.charlie_bob_classical),
        ]
    }

    /// Checks the layout against a detector jitter (RMS, ps).
    pub fn validate(&self, jitter_sigma: f64) -> Result<()> {
        if !(self.clock_rate_hz > 0.0) {
            return Err(Error::Topology("clock rate must be positive".into()));
        }
        let fwhm = 2.0 * (2.0 * std::f64::consts::LN_2).sqrt() * jitter_sigma;
        if !(self.bin_separation_ps > fwhm) {
            return Err(Error::Topology(format!(
                "bin separation {} ps does not exceed the jitter FWHM {fwhm:.0} ps",
                self.bin_separation_ps
            )));
        }
        if 2.0 * self.bin_separation_ps >= self.slot_ps() {
            return Err(Error::Topology(format!(
                "two bins of {} ps do not fit a {:.0} ps slot",
                self.bin_separation_ps,
                self.slot_ps()
            )));
        }
        for (from, to, ch) in self.channels() {
            if !(ch.loss_db >= 0.0) || !(ch.base_delay >= 0.0) {
                return Err(Error::Topology(format!(
                    "channel {from:?}→{to:?} needs non-negative loss and delay"
                )));
            }
        }
        Ok(())
    }

    pub fn slot_ps(&self) -> f64 {
        1e12 / self.clock_rate_hz
    }

    /// Channel delay rounded to whole clock slots.
    pub fn delay_slots(&self, ch: &ChannelParams) -> i64 {
        (ch.base_delay * 1e3 / self.slot_ps()).round() as i64
    }

    /// Slots between emission of a pulse and arrival of its flag at Bob.
    pub fn flag_return_slots(&self) -> i64 {
        self.delay_slots(&self.bob_charlie) + self.delay_slots(&self.charlie_bob_classical)
    }

    /// The delay Bob's electronic delay line must apply to his own detections.
    pub fn correct_vedl(&self) -> i64 {
        self.flag_return_slots()
    }

    /// Slot centre-relative times of the early and late bins, in ps.
    pub fn bin_centers(&self) -> [f64; 2] {
        let mid = 0.5 * self.slot_ps();
        [mid - 0.5 * self.bin_separation_ps, mid + 0.5 * self.bin_separation_ps]
    }
}
