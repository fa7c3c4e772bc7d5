//! Readout: Born sampling of the final two-atom state, Rydberg ejection,
//! state-selective blow-away, background loss, and aggregation into counts.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::state::{basis_levels, Level, TwoAtomState, DIM};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionParams {
    pub eta_op: f64,
    pub eta_r: f64,
    pub blowaway_fidelity: f64,
    pub background_loss: f64,
    pub blowaway_enabled: bool,
}

impl Default for DetectionParams {
    fn default() -> Self {
        DetectionParams { eta_op: 0.95, eta_r: 0.94, blowaway_fidelity: 0.995, background_loss: 0.0, blowaway_enabled: true }
    }
}

impl DetectionParams {
    /// Perfect preparation, ejection and blow-away, no background loss.
    pub fn ideal() -> Self {
        DetectionParams { eta_op: 1.0, eta_r: 1.0, blowaway_fidelity: 1.0, background_loss: 0.0, blowaway_enabled: true }
    }

    pub fn without_blowaway(mut self) -> Self {
        self.blowaway_enabled = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eta_op", self.eta_op),
            ("eta_r", self.eta_r),
            ("blowaway_fidelity", self.blowaway_fidelity),
            ("background_loss", self.background_loss),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(validation(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Presence of each atom at the final image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotOutcome {
    pub present: [bool; 2],
    pub scan_value: f64,
    pub blowaway: bool,
}

impl ShotOutcome {
    pub fn category(&self) -> Category {
        match self.present {
            [true, true] => Category::Both,
            [true, false] => Category::Only1,
            [false, true] => Category::Only2,
            [false, false] => Category::None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Category {
    Both,
    Only1,
    Only2,
    None,
}

/// Single-shot readout. Pure given `rng`.
pub fn measure_shot<R: Rng + ?Sized>(
    state: &TwoAtomState,
    p: &DetectionParams,
    scan_value: f64,
    rng: &mut R,
) -> ShotOutcome {
    let pops = state.populations();
    let total: f64 = pops.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut k = DIM - 1;
    for (i, w) in pops.iter().enumerate() {
        if u < *w {
            k = i;
            break;
        }
        u -= w;
    }
    let (l1, l2) = basis_levels(k);
    let mut present = [false; 2];
    for (i, level) in [l1, l2].into_iter().enumerate() {
        let mut here = match level {
            Level::Zero => true,
            Level::One => !(p.blowaway_enabled && rng.random::<f64>() < p.blowaway_fidelity),
            Level::Rydberg => {
                if rng.random::<f64>() < p.eta_r {
                    false
                } else {
                    // Recaptured, decays to the upper hyperfine level.
                    !(p.blowaway_enabled && rng.random::<f64>() < p.blowaway_fidelity)
                }
            }
        };
        if rng.random::<f64>() < p.background_loss {
            here = false;
        }
        present[i] = here && !state.lost()[i];
    }
    ShotOutcome { present, scan_value, blowaway: p.blowaway_enabled }
}

/// Counts in the four presence categories at one scan value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub both: u64,
    pub only1: u64,
    pub only2: u64,
    pub none: u64,
}

impl Counts {
    pub fn total(&self) -> u64 {
        self.both + self.only1 + self.only2 + self.none
    }

    pub fn add(&mut self, c: Category) {
        match c {
            Category::Both => self.both += 1,
            Category::Only1 => self.only1 += 1,
            Category::Only2 => self.only2 += 1,
            Category::None => self.none += 1,
        }
    }

    fn merge(&mut self, o: &Counts) {
        self.both += o.both;
        self.only1 += o.only1;
        self.only2 += o.only2;
        self.none += o.none;
    }

    pub fn fraction_both(&self) -> f64 {
        self.both as f64 / self.total() as f64
    }

    /// Fraction of shots with atom 1 (`atom = 0`) or atom 2 present.
    pub fn fraction_present(&self, atom: usize) -> f64 {
        let n = if atom == 0 { self.both + self.only1 } else { self.both + self.only2 };
        n as f64 / self.total() as f64
    }
}

#[derive(Clone, Copy, Debug)]
struct Key(f64);

impl PartialEq for Key {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Counts keyed by scan value, ordered by `f64::total_cmp`.
#[derive(Clone, Debug, PartialEq)]
pub struct CountsTable {
    rows: BTreeMap<Key, Counts>,
    blowaway: bool,
}

impl CountsTable {
    pub fn new(blowaway: bool) -> Self {
        CountsTable { rows: BTreeMap::new(), blowaway }
    }

    pub fn from_rows(blowaway: bool, rows: impl IntoIterator<Item = (f64, Counts)>) -> Self {
        let mut t = CountsTable::new(blowaway);
        for (x, c) in rows {
            t.rows.entry(Key(x)).or_default().merge(&c);
        }
        t
    }

    pub fn blowaway(&self) -> bool {
        self.blowaway
    }

    pub fn push(&mut self, o: &ShotOutcome) -> Result<()> {
        if o.blowaway != self.blowaway {
            return Err(validation("shot readout mode differs from table mode"));
        }
        self.rows.entry(Key(o.scan_value)).or_default().add(o.category());
        Ok(())
    }

    /// Associative and commutative merge of partial tables.
    pub fn merge(&mut self, other: &CountsTable) -> Result<()> {
        if other.blowaway != self.blowaway {
            return Err(validation("cannot merge tables with different readout modes"));
        }
        for (k, c) in &other.rows {
            self.rows.entry(*k).or_default().merge(c);
        }
        Ok(())
    }

    pub fn rows(&self) -> impl Iterator<Item = (f64, &Counts)> {
        self.rows.iter().map(|(k, c)| (k.0, c))
    }

    pub fn scan_values(&self) -> Vec<f64> {
        self.rows.keys().map(|k| k.0).collect()
    }

    pub fn get(&self, x: f64) -> Option<&Counts> {
        self.rows.get(&Key(x))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn totals(&self) -> Counts {
        let mut t = Counts::default();
        for c in self.rows.values() {
            t.merge(c);
        }
        t
    }
}

pub fn aggregate(outcomes: &[ShotOutcome]) -> Result<CountsTable> {
    let first = outcomes.first().ok_or_else(|| Error::Empty("no shot outcomes to aggregate".into()))?;
    let mut t = CountsTable::new(first.blowaway);
    for o in outcomes {
        t.push(o)?;
    }
    Ok(t)
}

/// Pair survival without blow-away: fraction of shots with both atoms.
pub fn recapture_probability(counts: &CountsTable) -> Result<f64> {
    if counts.blowaway {
        return Err(validation("recapture probability needs counts taken without blow-away"));
    }
    let t = counts.totals();
    if t.total() == 0 {
        return Err(Error::Empty("recapture table has no shots".into()));
    }
    Ok(t.fraction_both())
}

/// One row of the shot-record file.
///
/// Columns, in order: `series,shot,scan_value,inner_value,present1,present2,blowaway`.
/// `series` names the measurement block (e.g. `scan`, `recap`, `pair`);
/// `inner_value` carries a second scan coordinate where a measurement has
/// one (detuning within a Ramsey fringe, otherwise empty). Floats use
/// Rust's shortest round-trip formatting; booleans are `0`/`1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub series: String,
    pub shot: u64,
    pub scan_value: f64,
    pub inner_value: Option<f64>,
    pub present1: u8,
    pub present2: u8,
    pub blowaway: u8,
}

impl ShotRecord {
    pub fn new(series: &str, shot: u64, outcome: &ShotOutcome, inner_value: Option<f64>) -> Self {
        ShotRecord {
            series: series.to_string(),
            shot,
            scan_value: outcome.scan_value,
            inner_value,
            present1: outcome.present[0] as u8,
            present2: outcome.present[1] as u8,
            blowaway: outcome.blowaway as u8,
        }
    }

    pub fn outcome(&self) -> ShotOutcome {
        ShotOutcome {
            present: [self.present1 != 0, self.present2 != 0],
            scan_value: self.scan_value,
            blowaway: self.blowaway != 0,
        }
    }
}

pub const SHOT_COLUMNS: [&str; 7] = ["series", "shot", "scan_value", "inner_value", "present1", "present2", "blowaway"];

pub fn write_shots<W: Write>(w: W, records: &[ShotRecord]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(SHOT_COLUMNS)?;
    for r in records {
        let inner = r.inner_value.map(|v| v.to_string()).unwrap_or_default();
        wr.write_record([
            r.series.clone(),
            r.shot.to_string(),
            r.scan_value.to_string(),
            inner,
            r.present1.to_string(),
            r.present2.to_string(),
            r.blowaway.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_shots<R: Read>(r: R) -> Result<Vec<ShotRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers()?.clone();
    if headers.iter().ne(SHOT_COLUMNS.iter().copied()) {
        return Err(validation(format!("unexpected shot-record header: {}", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut out = Vec::new();
    for row in rd.deserialize() {
        let rec: ShotRecord = row?;
        for (name, v) in [("present1", rec.present1), ("present2", rec.present2), ("blowaway", rec.blowaway)] {
            if v > 1 {
                return Err(validation(format!("shot {}: {name} must be 0 or 1", rec.shot)));
            }
        }
        out.push(rec);
    }
    Ok(out)
}

/// Aggregates the records of one series.
pub fn table_from_records(records: &[ShotRecord], series: &str) -> Result<CountsTable> {
    let outcomes: Vec<ShotOutcome> = records.iter().filter(|r| r.series == series).map(ShotRecord::outcome).collect();
    aggregate(&outcomes).map_err(|e| match e {
        Error::Empty(_) => Error::Empty(format!("no shots in series '{series}'")),
        e => e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::state::Atom;
    use proptest::prelude::*;
    use rand::Rng;

    fn tally(state: &TwoAtomState, p: &DetectionParams, n: u64, seed: u64) -> Counts {
        let mut c = Counts::default();
        for k in 0..n {
            c.add(measure_shot(state, p, 0.0, &mut rng::stream(seed, k)).category());
        }
        c
    }

    #[test]
    fn ground_pair_both_present() {
        let c = tally(&TwoAtomState::basis(Level::Zero, Level::Zero), &DetectionParams::default(), 1000, 1);
        assert_eq!(c.both, 1000);
    }

    #[test]
    fn psi_plus_loses_the_one_atom() {
        let c = tally(&TwoAtomState::psi_plus(), &DetectionParams::ideal(), 10_000, 2);
        assert_eq!(c.both + c.none, 0);
        let f = c.only1 as f64 / 1e4;
        assert!((f - 0.5).abs() < 3.0 * (0.25f64 / 1e4).sqrt(), "only-1 fraction {f}");
    }

    #[test]
    fn rydberg_atom_always_absent_with_blowaway() {
        let p = DetectionParams { blowaway_fidelity: 1.0, ..DetectionParams::default() };
        let c = tally(&TwoAtomState::basis(Level::Zero, Level::Rydberg), &p, 10_000, 3);
        assert_eq!(c.only1, 10_000);
    }

    #[test]
    fn rydberg_without_blowaway_reads_eta_r() {
        let p = DetectionParams::default().without_blowaway();
        let c = tally(&TwoAtomState::basis(Level::Zero, Level::Rydberg), &p, 20_000, 4);
        let f = c.only1 as f64 / 2e4;
        let sigma = (0.94f64 * 0.06 / 2e4).sqrt();
        assert!((f - 0.94).abs() < 3.0 * sigma, "ejected fraction {f}");
    }

    #[test]
    fn born_populations_reproduced() {
        // Qubit-subspace superposition with unequal weights.
        let amps = {
            let mut a = [crate::C64::new(0.0, 0.0); DIM];
            a[crate::state::basis_index(Level::Zero, Level::Zero)] = crate::C64::new(0.6f64.sqrt(), 0.0);
            a[crate::state::basis_index(Level::Zero, Level::One)] = crate::C64::new(0.0, 0.1f64.sqrt());
            a[crate::state::basis_index(Level::One, Level::Zero)] = crate::C64::new(0.2f64.sqrt(), 0.0);
            a[crate::state::basis_index(Level::One, Level::One)] = crate::C64::new(-(0.1f64.sqrt()), 0.0);
            a
        };
        let s = TwoAtomState::from_amplitudes(amps, [false; 2]).unwrap();
        let n = 10_000u64;
        let c = tally(&s, &DetectionParams::ideal(), n, 5);
        for (obs, p) in [(c.both, 0.6), (c.only1, 0.1), (c.only2, 0.2), (c.none, 0.1)] {
            let f = obs as f64 / n as f64;
            assert!((f - p).abs() < 3.0 * (p * (1.0 - p) / n as f64).sqrt(), "{f} vs {p}");
        }
    }

    #[test]
    fn w_state_never_both_in_ideal_limit() {
        let c = tally(&TwoAtomState::w_state(), &DetectionParams::ideal(), 5000, 6);
        assert_eq!(c.both, 0);
    }

    #[test]
    fn lost_atom_reads_absent() {
        let s = TwoAtomState::single_atom(Level::Zero);
        let c = tally(&s, &DetectionParams::default(), 100, 7);
        assert_eq!(c.only1, 100);
        assert!(s.is_lost(Atom::Second));
    }

    #[test]
    fn background_loss_monotone() {
        let s = TwoAtomState::basis(Level::Zero, Level::Zero);
        let mut last = 1.1;
        for loss in [0.0, 0.05, 0.1, 0.2, 0.4] {
            let p = DetectionParams { background_loss: loss, ..DetectionParams::ideal() };
            let f = tally(&s, &p, 4000, 8).fraction_both();
            assert!(f < last, "P(both) not decreasing at loss {loss}");
            last = f;
        }
    }

    #[test]
    fn injected_loss_recapture() {
        // Independent per-atom loss 0.13 / 0.12 on product states.
        let mut t = CountsTable::new(false);
        let n = 20_000u64;
        for k in 0..n {
            let mut r = rng::stream(9, k);
            let p1 = r.random::<f64>() >= 0.13;
            let p2 = r.random::<f64>() >= 0.12;
            t.push(&ShotOutcome { present: [p1, p2], scan_value: 0.0, blowaway: false }).unwrap();
        }
        let p = recapture_probability(&t).unwrap();
        let expect = 0.87 * 0.88;
        assert!((p - expect).abs() < 3.0 * (expect * (1.0 - expect) / n as f64).sqrt(), "{p}");
    }

    #[test]
    fn lossless_recapture_is_one() {
        let p = DetectionParams::ideal().without_blowaway();
        let outs: Vec<_> = (0..50).map(|k| measure_shot(&TwoAtomState::psi_plus(), &p, 0.0, &mut rng::stream(1, k))).collect();
        assert_eq!(recapture_probability(&aggregate(&outs).unwrap()).unwrap(), 1.0);
    }

    #[test]
    fn recapture_rejects_blowaway_table() {
        let t = CountsTable::from_rows(true, [(0.0, Counts { both: 1, ..Counts::default() })]);
        assert!(recapture_probability(&t).is_err());
    }

    #[test]
    fn aggregate_known_stream() {
        let mut outs = Vec::new();
        for _ in 0..100 {
            outs.push(ShotOutcome { present: [true, true], scan_value: 0.0, blowaway: true });
        }
        for (i, pr) in [[true, false], [false, true], [false, false]].iter().enumerate() {
            for _ in 0..(i + 1) * 10 {
                outs.push(ShotOutcome { present: *pr, scan_value: 1.5, blowaway: true });
            }
        }
        let t = aggregate(&outs).unwrap();
        assert_eq!(t.get(0.0).unwrap(), &Counts { both: 100, only1: 0, only2: 0, none: 0 });
        assert_eq!(t.get(1.5).unwrap(), &Counts { both: 0, only1: 10, only2: 20, none: 30 });
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let recs = vec![
            ShotRecord::new("scan", 0, &ShotOutcome { present: [true, false], scan_value: 0.1 + 0.2, blowaway: true }, None),
            ShotRecord::new("recap", 1, &ShotOutcome { present: [false, true], scan_value: -1e-7, blowaway: false }, Some(2.5e5)),
        ];
        let mut buf = Vec::new();
        write_shots(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("series,shot,scan_value,inner_value,present1,present2,blowaway\n"));
        assert_eq!(read_shots(buf.as_slice()).unwrap(), recs);
    }

    #[test]
    fn csv_rejects_bad_header() {
        assert!(read_shots("a,b\n1,2\n".as_bytes()).is_err());
    }

    fn outcome() -> impl Strategy<Value = ShotOutcome> {
        (any::<bool>(), any::<bool>(), 0u8..5).prop_map(|(a, b, x)| ShotOutcome {
            present: [a, b],
            scan_value: x as f64 * 0.25,
            blowaway: true,
        })
    }

    proptest! {
        #[test]
        fn aggregate_order_independent(mut v in prop::collection::vec(outcome(), 1..200), seed in any::<u64>()) {
            let a = aggregate(&v).unwrap();
            let mut r = rng::stream(seed, 0);
            use rand::seq::SliceRandom;
            v.shuffle(&mut r);
            prop_assert_eq!(aggregate(&v).unwrap(), a);
        }

        #[test]
        fn merge_associative(v in prop::collection::vec(outcome(), 3..120), i in 1usize..40, j in 1usize..40) {
            let i = i.min(v.len() - 2);
            let j = (i + j).min(v.len() - 1);
            let (a, b, c) = (aggregate(&v[..i]).unwrap(), aggregate(&v[i..j]).unwrap(), aggregate(&v[j..]).unwrap());
            let mut left = a.clone(); left.merge(&b).unwrap(); left.merge(&c).unwrap();
            let mut bc = b.clone(); bc.merge(&c).unwrap();
            let mut right = a.clone(); right.merge(&bc).unwrap();
            let mut rev = c.clone(); rev.merge(&b).unwrap(); rev.merge(&a).unwrap();
            prop_assert_eq!(&left, &right);
            prop_assert_eq!(&left, &rev);
            prop_assert_eq!(left, aggregate(&v).unwrap());
        }

        #[test]
        fn categories_sum_to_total(v in prop::collection::vec(outcome(), 1..200)) {
            let t = aggregate(&v).unwrap();
            let total: u64 = t.rows().map(|(_, c)| c.total()).sum();
            prop_assert_eq!(total, v.len() as u64);
        }
    }
}
