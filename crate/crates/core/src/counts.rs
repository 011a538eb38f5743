//! Triple-coincidence tallies per (prepared state, Bob setting, μ_A) cell.
//!
//! CSV schema, one row per cell:
//!
//! ```text
//! prepared,setting,mu_a,triples,bsm_flags,elapsed_s
//! L,E,0.014,412,90311,1800
//! ```
//!
//! `prepared` is the state Alice encodes; the state expected at Bob is its
//! σ_y image.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qubit::SettingLabel;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CountCell {
    pub triples: u64,
    pub bsm_flags: u64,
    /// Integration time in seconds.
    pub elapsed: f64,
}

impl CountCell {
    pub fn add(&mut self, other: &CountCell) {
        self.triples += other.triples;
        self.bsm_flags += other.bsm_flags;
        self.elapsed += other.elapsed;
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    prepared: SettingLabel,
    setting: SettingLabel,
    mu_a: f64,
    triples: u64,
    bsm_flags: u64,
    elapsed_s: f64,
}

type Key = (SettingLabel, SettingLabel, u64);

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CountTable {
    cells: BTreeMap<Key, CountCell>,
}

fn key(prepared: SettingLabel, setting: SettingLabel, mu_a: f64) -> Key {
    // μ ≥ 0, so the bit pattern orders like the value
    (prepared, setting, (mu_a + 0.0).to_bits())
}

impl CountTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, prepared: SettingLabel, setting: SettingLabel, mu_a: f64, cell: &CountCell) {
        self.cells
            .entry(key(prepared, setting, mu_a))
            .or_default()
            .add(cell);
    }

    pub fn get(&self, prepared: SettingLabel, setting: SettingLabel, mu_a: f64) -> Option<&CountCell> {
        self.cells.get(&key(prepared, setting, mu_a))
    }

    pub fn iter(&self) -> impl Iterator<Item = (SettingLabel, SettingLabel, f64, &CountCell)> {
        self.cells
            .iter()
            .map(|(&(p, s, m), c)| (p, s, f64::from_bits(m), c))
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Distinct μ_A values, ascending.
    pub fn mu_levels(&self) -> Vec<f64> {
        let mut v: Vec<u64> = self.cells.keys().map(|k| k.2).collect();
        v.sort_unstable();
        v.dedup();
        v.into_iter().map(f64::from_bits).collect()
    }

    pub fn prepared_states(&self) -> Vec<SettingLabel> {
        let mut v: Vec<SettingLabel> = self.cells.keys().map(|k| k.0).collect();
        v.sort();
        v.dedup();
        v
    }

    /// Same cells with every count replaced by `f(count)`.
    pub fn map_counts(&self, mut f: impl FnMut(u64) -> u64) -> CountTable {
        let cells = self
            .cells
            .iter()
            .map(|(k, c)| {
                (
                    *k,
                    CountCell {
                        triples: f(c.triples),
                        bsm_flags: f(c.bsm_flags),
                        elapsed: c.elapsed,
                    },
                )
            })
            .collect();
        CountTable { cells }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for (prepared, setting, mu_a, c) in self.iter() {
            wr.serialize(Row {
                prepared,
                setting,
                mu_a,
                triples: c.triples,
                bsm_flags: c.bsm_flags,
                elapsed_s: c.elapsed,
            })?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Parses and validates a table; errors name the offending data row (1-based).
    /// Lines starting with `#` are ignored.
    pub fn read_csv<R: Read>(r: R) -> Result<CountTable> {
        let mut rd = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(r);
        let expected = ["prepared", "setting", "mu_a", "triples", "bsm_flags", "elapsed_s"];
        let headers = rd.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Schema {
                row: 0,
                reason: format!("header must be `{}`", expected.join(",")),
            });
        }
        let mut table = CountTable::new();
        for (i, rec) in rd.records().enumerate() {
            let row = i + 1;
            let rec = rec?;
            let parsed: Row = rec.deserialize(Some(&headers)).map_err(|e| Error::Schema {
                row,
                reason: e.to_string(),
            })?;
            if !(parsed.mu_a >= 0.0) || !parsed.mu_a.is_finite() {
                return Err(Error::Schema {
                    row,
                    reason: format!("mu_a = {} must be a finite value ≥ 0", parsed.mu_a),
                });
            }
            if !(parsed.elapsed_s > 0.0) {
                return Err(Error::Schema {
                    row,
                    reason: format!("elapsed_s = {} must be > 0", parsed.elapsed_s),
                });
            }
            if table.get(parsed.prepared, parsed.setting, parsed.mu_a).is_some() {
                return Err(Error::Schema {
                    row,
                    reason: format!(
                        "duplicate cell ({}, {}, {})",
                        parsed.prepared, parsed.setting, parsed.mu_a
                    ),
                });
            }
            table.add(
                parsed.prepared,
                parsed.setting,
                parsed.mu_a,
                &CountCell {
                    triples: parsed.triples,
                    bsm_flags: parsed.bsm_flags,
                    elapsed: parsed.elapsed_s,
                },
            );
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut t = CountTable::new();
        let c = CountCell {
            triples: 12,
            bsm_flags: 3400,
            elapsed: 600.0,
        };
        t.add(SettingLabel::L, SettingLabel::E, 0.014, &c);
        t.add(SettingLabel::Minus, SettingLabel::PlusI, 0.0, &c);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = CountTable::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.mu_levels(), vec![0.0, 0.014]);
    }

    #[test]
    fn schema_errors_carry_row() {
        let text = "prepared,setting,mu_a,triples,bsm_flags,elapsed_s\nL,E,0.014,1,2,10\nL,Q,0.014,1,2,10\n";
        match CountTable::read_csv(text.as_bytes()) {
            Err(Error::Schema { row, .. }) => assert_eq!(row, 2),
            other => panic!("{other:?}"),
        }
        let text = "prepared,setting,mu_a,triples,bsm_flags,elapsed_s\nL,E,0.014,1,2,0\n";
        assert!(matches!(CountTable::read_csv(text.as_bytes()), Err(Error::Schema { row: 1, .. })));
        let text = "a,b\n";
        assert!(matches!(CountTable::read_csv(text.as_bytes()), Err(Error::Schema { row: 0, .. })));
    }
}
