use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::record::{matches, merge_records, Record, TypePattern};

/// Storage of one synchrocell instance.
#[derive(Debug, Clone)]
pub struct SyncState {
    slots: Arc<[TypePattern]>,
    stored: Vec<Option<Record>>,
    repeating: bool,
    fired: u64,
    /// Non-repeating cell that already fired: forwards everything.
    exhausted: bool,
}

#[derive(Debug)]
pub enum SyncOutcome {
    Parked,
    Forwarded(Record),
    /// All slots filled; carries the merge of the stored records in slot
    /// order.
    Fired(Record),
}

impl SyncState {
    pub fn new(slots: impl Into<Arc<[TypePattern]>>, repeating: bool) -> Self {
        // slot storage is allocated on first use and released once a
        // non-repeating cell has fired
        Self { slots: slots.into(), stored: Vec::new(), repeating, fired: 0, exhausted: false }
    }

    pub fn step(&mut self, r: Record) -> SyncOutcome {
        if self.exhausted {
            return SyncOutcome::Forwarded(r);
        }
        if self.stored.is_empty() {
            self.stored.resize_with(self.slots.len(), || None);
        }
        let Some(slot) = (0..self.slots.len()).find(|&i| self.stored[i].is_none() && matches(&r, &self.slots[i]))
        else {
            return SyncOutcome::Forwarded(r);
        };
        self.stored[slot] = Some(r);
        if self.stored.iter().any(Option::is_none) {
            return SyncOutcome::Parked;
        }
        let merged = self
            .stored
            .iter_mut()
            .map(|s| s.take().expect("slot filled"))
            .reduce(merge_records)
            .expect("at least one slot");
        self.fired += 1;
        if !self.repeating {
            self.exhausted = true;
            self.stored = Vec::new();
        }
        SyncOutcome::Fired(merged)
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn fired_count(&self) -> u64 {
        self.fired
    }

    pub fn is_exhausted(&self) -> bool {
        self.exhausted
    }

    pub fn parked(&self) -> impl Iterator<Item = &Record> {
        self.stored.iter().flatten()
    }

    pub fn parked_count(&self) -> usize {
        self.stored.iter().filter(|s| s.is_some()).count()
    }
}

/// `(emitted records, parked)` view of [`SyncState::step`].
pub fn step_sync(state: &mut SyncState, r: Record) -> (Vec<Record>, bool) {
    match state.step(r) {
        SyncOutcome::Parked => (Vec::new(), true),
        SyncOutcome::Forwarded(r) | SyncOutcome::Fired(r) => (vec![r], false),
    }
}

/// The chain of cell instances behind `[|...|] * exit` for a non-repeating
/// cell. Processing a record to completion before the next one is
/// observationally the same as running the chain as a pipeline of FIFO
/// stages. A fired cell forwards everything, so it is dropped from the
/// chain wherever it sits; per-slot indexes of the cells with that slot
/// still empty make each step logarithmic in the number of live cells.
#[derive(Debug)]
pub(crate) struct SyncChain {
    slots: Arc<[TypePattern]>,
    exit: Arc<TypePattern>,
    max_instances: u64,
    /// Live cells keyed by creation order.
    cells: BTreeMap<u64, SyncState>,
    /// `empty[s]`: live cells whose slot `s` is free.
    empty: Vec<BTreeSet<u64>>,
    created: u64,
}

#[derive(Debug, Default)]
pub(crate) struct ChainStep {
    pub emitted: Option<Record>,
    pub parked: bool,
    pub fires: u64,
    pub created: u64,
}

impl SyncChain {
    pub fn new(slots: impl Into<Arc<[TypePattern]>>, exit: impl Into<Arc<TypePattern>>, max_instances: u64) -> Self {
        let (slots, exit) = (slots.into(), exit.into());
        let empty = vec![BTreeSet::new(); slots.len()];
        Self { slots, exit, max_instances, cells: BTreeMap::new(), empty, created: 0 }
    }

    /// Err carries the instance limit that was hit. A record that matches
    /// neither the exit nor any slot would be forwarded through ever new
    /// instances, so it fails immediately.
    pub fn step(&mut self, mut r: Record) -> Result<ChainStep, u64> {
        let mut out = ChainStep::default();
        // cells before `after` were already passed by this record
        let mut after = 0;
        loop {
            if matches(&r, &self.exit) {
                out.emitted = Some(r);
                return Ok(out);
            }
            let candidates: Vec<usize> = (0..self.slots.len()).filter(|&s| matches(&r, &self.slots[s])).collect();
            if candidates.is_empty() {
                return Err(self.max_instances);
            }
            let found = candidates
                .iter()
                .filter_map(|&s| self.empty[s].range(after..).next().map(|&id| (id, s)))
                .min();
            let (id, slot) = match found {
                Some(hit) => hit,
                None => {
                    if self.created >= self.max_instances {
                        return Err(self.max_instances);
                    }
                    let id = self.created;
                    self.created += 1;
                    out.created += 1;
                    self.cells.insert(id, SyncState::new(self.slots.clone(), false));
                    for set in &mut self.empty {
                        set.insert(id);
                    }
                    (id, candidates[0])
                }
            };
            self.empty[slot].remove(&id);
            let cell = self.cells.get_mut(&id).expect("indexed cell is live");
            match cell.step(r) {
                SyncOutcome::Parked => {
                    out.parked = true;
                    return Ok(out);
                }
                SyncOutcome::Fired(merged) => {
                    self.cells.remove(&id);
                    out.fires += 1;
                    r = merged;
                    after = id + 1;
                }
                SyncOutcome::Forwarded(_) => unreachable!("record had a free matching slot"),
            }
        }
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn parked(&self) -> impl Iterator<Item = &Record> {
        self.cells.values().flat_map(|c| c.parked())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pat(s: &str) -> TypePattern {
        TypePattern::parse(s).unwrap()
    }

    fn rec(field: &'static str) -> Record {
        Record::new().with_field(field, ())
    }

    #[test]
    fn merges_in_slot_order_regardless_of_arrival() {
        let mut cell = SyncState::new(vec![pat("{r}"), pat("{s}")], false);
        assert!(matches!(cell.step(rec("s").with_tag("x", 2)), SyncOutcome::Parked));
        let SyncOutcome::Fired(m) = cell.step(rec("r").with_tag("x", 1)) else { panic!() };
        assert!(m.has_field("r") && m.has_field("s"));
        // slot order decides collisions: slot 0 ({r}) wins
        assert_eq!(m.tag("x"), Some(1));
    }

    #[test]
    fn unmatched_records_are_forwarded() {
        let mut cell = SyncState::new(vec![pat("{r}"), pat("{s}")], false);
        let (out, parked) = step_sync(&mut cell, rec("q"));
        assert!(!parked);
        assert_eq!(out.len(), 1);
        assert_eq!(cell.parked_count(), 0);
    }

    #[test]
    fn full_slot_forwards_duplicates() {
        let mut cell = SyncState::new(vec![pat("{r}"), pat("{s}")], false);
        assert!(matches!(cell.step(rec("r")), SyncOutcome::Parked));
        assert!(matches!(cell.step(rec("r")), SyncOutcome::Forwarded(_)));
        assert_eq!(cell.parked_count(), 1);
    }

    #[test]
    fn non_repeating_cell_forwards_after_firing() {
        let mut cell = SyncState::new(vec![pat("{r}"), pat("{s}")], false);
        cell.step(rec("r"));
        assert!(matches!(cell.step(rec("s")), SyncOutcome::Fired(_)));
        assert!(matches!(cell.step(rec("r")), SyncOutcome::Forwarded(_)));
        assert!(matches!(cell.step(rec("s")), SyncOutcome::Forwarded(_)));
        assert_eq!(cell.fired_count(), 1);
        assert_eq!(cell.parked_count(), 0);
    }

    #[test]
    fn repeating_cell_rearms() {
        let mut cell = SyncState::new(vec![pat("{r}"), pat("{s}")], true);
        let mut fired = 0;
        for _ in 0..2 {
            for f in ["r", "s"] {
                if let SyncOutcome::Fired(_) = cell.step(rec(f)) {
                    fired += 1;
                }
            }
        }
        assert_eq!(fired, 2);
        assert_eq!(cell.fired_count(), 2);
    }

    #[test]
    fn lowest_matching_slot_wins() {
        let mut cell = SyncState::new(vec![pat("{a}"), pat("{a,b}")], false);
        let both = Record::new().with_field("a", ()).with_field("b", ());
        assert!(matches!(cell.step(both.clone()), SyncOutcome::Parked));
        // slot 0 full; the same record now fills slot 1 and fires
        assert!(matches!(cell.step(both), SyncOutcome::Fired(_)));
    }

    #[test]
    fn chain_creates_one_cell_per_merge() {
        let mut chain = SyncChain::new(vec![pat("{r}"), pat("{s}")], pat("{r,s}"), 100);
        let st = chain.step(rec("s")).unwrap();
        assert!(st.parked);
        for n in 0..5 {
            let st = chain.step(rec("r")).unwrap();
            if n == 0 {
                assert_eq!(st.fires, 1);
                assert!(st.emitted.is_some());
            } else {
                // no state available: parks in a fresh cell
                assert!(st.parked);
            }
        }
        assert_eq!(chain.parked().count(), 4);
        assert_eq!(chain.created, 5);
    }

    #[test]
    fn chain_exit_bypasses_cells() {
        let mut chain = SyncChain::new(vec![pat("{r}"), pat("{s}")], pat("{r,s}"), 1);
        let both = Record::new().with_field("r", ()).with_field("s", ());
        let st = chain.step(both).unwrap();
        assert!(st.emitted.is_some());
        assert_eq!(st.created, 0);
        chain.step(rec("r")).unwrap();
        assert_eq!(chain.step(rec("r")).unwrap_err(), 1);
    }

    /// Straight-line chain: every record walks every cell, fired cells stay.
    fn naive_step(cells: &mut Vec<SyncState>, slots: &[TypePattern], exit: &TypePattern, mut r: Record) -> Option<Option<Record>> {
        if !slots.iter().any(|p| matches(&r, p)) && !matches(&r, exit) {
            return None;
        }
        let mut i = 0;
        loop {
            if matches(&r, exit) {
                return Some(Some(r));
            }
            if i == cells.len() {
                cells.push(SyncState::new(slots.to_vec(), false));
            }
            match cells[i].step(r) {
                SyncOutcome::Parked => return Some(None),
                SyncOutcome::Forwarded(next) | SyncOutcome::Fired(next) => r = next,
            }
            i += 1;
        }
    }

    proptest::proptest! {
        #[test]
        fn chain_matches_naive_model(
            picks in proptest::collection::vec(0usize..7, 0..60),
            three in proptest::bool::ANY,
        ) {
            let (slots, exit) = if three {
                (vec![pat("{a}"), pat("{b}"), pat("{a,c}")], pat("{a,b,c}"))
            } else {
                (vec![pat("{a}"), pat("{b}")], pat("{a,b}"))
            };
            let kinds: [&[&'static str]; 7] = [&["a"], &["b"], &["c"], &["a", "c"], &["b", "c"], &["a", "b"], &["d"]];
            let mut chain = SyncChain::new(slots.clone(), exit.clone(), u64::MAX);
            let mut naive = Vec::new();
            for (seq, &k) in picks.iter().enumerate() {
                let mut r = Record::new().with_tag(format!("t{seq}"), seq as i64);
                for f in kinds[k] {
                    r = r.with_field(*f, ());
                }
                let expect = naive_step(&mut naive, &slots, &exit, r.clone());
                match (chain.step(r), expect) {
                    (Err(_), None) => {}
                    (Ok(st), Some(e)) => {
                        proptest::prop_assert_eq!(format!("{:?}", st.emitted), format!("{e:?}"));
                        proptest::prop_assert_eq!(st.parked, e.is_none());
                    }
                    (got, want) => proptest::prop_assert!(false, "chain {got:?} vs naive {want:?}"),
                }
            }
            let mut a: Vec<String> = chain.parked().map(|r| format!("{r:?}")).collect();
            let mut b: Vec<String> = naive.iter().flat_map(|c| c.parked()).map(|r| format!("{r:?}")).collect();
            a.sort();
            b.sort();
            proptest::prop_assert_eq!(a, b);
        }
    }
}
