//! Flag/detection bookkeeping at Bob.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::counts::CountCell;
use crate::error::{invalid, Result};
use crate::fock::{pattern, Bin};
use crate::qubit::SettingLabel;

/// A click pattern registered at Charlie and forwarded to Bob.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharlieRecord {
    /// Slot on the shared clock in which the photons reached Charlie.
    pub charlie_slot: i64,
    /// Slot in which the classical signal reaches Bob.
    pub arrival_at_bob: i64,
    pub pattern: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BobClick {
    pub setting: SettingLabel,
    /// `None` for the central (interfering) bin of a superposition basis.
    pub bin: Option<Bin>,
}

impl BobClick {
    pub fn new(setting: SettingLabel) -> Self {
        let bin = match setting {
            SettingLabel::E => Some(Bin::Early),
            SettingLabel::L => Some(Bin::Late),
            _ => None,
        };
        Self { setting, bin }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BobRecord {
    /// Slot in which Bob's photon was detected.
    pub slot: i64,
    pub click: BobClick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoincidenceRecord {
    /// Originating slot at Bob when a detection was matched, else the Charlie slot.
    pub slot_index: i64,
    pub charlie_pattern: u8,
    pub bob_click: Option<BobClick>,
    pub psi_minus_flag: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoincidenceOutcome {
    pub records: Vec<CoincidenceRecord>,
    /// Triples and flags; `elapsed` is left at zero for the caller.
    pub counts: CountCell,
}

/// Matches each Charlie record with the Bob detection delayed by `vedl_delay`
/// slots, i.e. Bob's click in slot s is compared with flags arriving in
/// slot s + vedl_delay.
pub fn triple_coincidence(charlie: &[CharlieRecord], bob: &[BobRecord], vedl_delay: i64) -> Result<CoincidenceOutcome> {
    if vedl_delay < 0 {
        return Err(invalid("vedl_delay", format!("{vedl_delay} slots is negative")));
    }
    let by_slot: HashMap<i64, BobClick> = bob.iter().map(|b| (b.slot + vedl_delay, b.click)).collect();
    let mut out = CoincidenceOutcome::default();
    for c in charlie {
        let flag = pattern::is_psi_minus(c.pattern);
        let matched = by_slot.get(&c.arrival_at_bob).copied();
        if flag {
            out.counts.bsm_flags += 1;
            if matched.is_some() {
                out.counts.triples += 1;
            }
        }
        out.records.push(CoincidenceRecord {
            slot_index: if matched.is_some() { c.arrival_at_bob - vedl_delay } else { c.charlie_slot },
            charlie_pattern: c.pattern,
            bob_click: matched,
            psi_minus_flag: flag,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::pattern::PSI_MINUS;
    use crate::sim::topology::NodeTopology;
    use proptest::prelude::*;

    /// Records for the ideal protocol: every pulse in `slots` yields a flag and a Bob click.
    fn ideal(topo: &NodeTopology, slots: &[i64]) -> (Vec<CharlieRecord>, Vec<BobRecord>) {
        let d_bc = topo.delay_slots(&topo.bob_charlie);
        let d_cb = topo.delay_slots(&topo.charlie_bob_classical);
        let charlie = slots
            .iter()
            .map(|&s| CharlieRecord {
                charlie_slot: s + d_bc,
                arrival_at_bob: s + d_bc + d_cb,
                pattern: PSI_MINUS[(s % 2) as usize],
            })
            .collect();
        let bob = slots
            .iter()
            .map(|&s| BobRecord {
                slot: s,
                click: BobClick::new(SettingLabel::Plus),
            })
            .collect();
        (charlie, bob)
    }

    #[test]
    fn negative_delay_rejected() {
        assert!(triple_coincidence(&[], &[], -1).is_err());
    }

    #[test]
    fn off_by_one_loses_sparse_pairs() {
        let topo = NodeTopology::default();
        let slots: Vec<i64> = (0..50).map(|k| 1000 * k).collect();
        let (c, b) = ideal(&topo, &slots);
        let v = topo.correct_vedl();
        assert_eq!(triple_coincidence(&c, &b, v).unwrap().counts.triples, 50);
        assert_eq!(triple_coincidence(&c, &b, v + 1).unwrap().counts.triples, 0);
        assert_eq!(triple_coincidence(&c, &b, v - 1).unwrap().counts.triples, 0);
    }

    #[test]
    fn non_flag_patterns_are_not_counted() {
        let c = [CharlieRecord {
            charlie_slot: 0,
            arrival_at_bob: 5,
            pattern: pattern::bit(0, 0) | pattern::bit(1, 0),
        }];
        let b = [BobRecord {
            slot: 0,
            click: BobClick::new(SettingLabel::E),
        }];
        let out = triple_coincidence(&c, &b, 5).unwrap();
        assert_eq!(out.counts, CountCell::default());
        assert!(!out.records[0].psi_minus_flag);
        assert!(out.records[0].bob_click.is_some());
    }

    proptest! {
        #[test]
        fn vedl_matches_every_slot(
            l_bc in 0.0..200_000.0f64,
            l_cb in 0.0..200_000.0f64,
            clock in prop::sample::select(vec![40e6, 76e6, 80e6]),
            raw in prop::collection::btree_set(0i64..10_000_000, 1..60),
        ) {
            let mut topo = NodeTopology { clock_rate_hz: clock, ..NodeTopology::default() };
            topo.bob_charlie.base_delay = l_bc;
            topo.charlie_bob_classical.base_delay = l_cb;
            let slots: Vec<i64> = raw.into_iter().collect();
            let (c, b) = ideal(&topo, &slots);
            let out = triple_coincidence(&c, &b, topo.correct_vedl()).unwrap();
            prop_assert_eq!(out.counts.triples, slots.len() as u64);
            for (r, s) in out.records.iter().zip(&slots) {
                prop_assert_eq!(r.slot_index, *s);
            }
        }
    }
}
