use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One intervention: grid-time index and index into the impulse set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Intervention {
    pub time: usize,
    pub impulse: usize,
}

/// Finite sequence of interventions with non-decreasing time indices.
///
/// Histories are the non-Markovian state of the problem: rewards, costs and
/// kernel sets may all depend on them.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<Intervention>", into = "Vec<Intervention>")]
pub struct InterventionHistory {
    entries: Vec<Intervention>,
}

impl InterventionHistory {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(entries: Vec<Intervention>) -> Result<Self> {
        if entries.windows(2).any(|w| w[1].time < w[0].time) {
            return Err(Error::InvalidArgument(
                "intervention times must be non-decreasing".into(),
            ));
        }
        Ok(Self { entries })
    }

    /// Convenience constructor from `(time, impulse)` pairs.
    pub fn from_pairs(pairs: &[(usize, usize)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|&(time, impulse)| Intervention { time, impulse })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Intervention] {
        &self.entries
    }

    pub fn last(&self) -> Option<Intervention> {
        self.entries.last().copied()
    }

    /// Number of entries at grid time `time`.
    pub fn count_at(&self, time: usize) -> usize {
        self.entries.iter().filter(|e| e.time == time).count()
    }

    /// `v ∘ ((time, impulse))`. The time is clamped up to the last entry's time.
    pub fn appended(&self, time: usize, impulse: usize) -> Self {
        let time = self.entries.last().map_or(time, |l| time.max(l.time));
        let mut entries = Vec::with_capacity(self.entries.len() + 1);
        entries.extend_from_slice(&self.entries);
        entries.push(Intervention { time, impulse });
        Self { entries }
    }

    /// Concatenation `v ∘ w`: each time in `w` is clamped up to the last time
    /// of `v`. A history already holding `max_len` entries plays the role of an
    /// infinite sequence and absorbs `w`; otherwise the result is cut at
    /// `max_len` entries.
    pub fn concat(&self, other: &Self, max_len: usize) -> Self {
        if self.entries.len() >= max_len {
            return self.clone();
        }
        let floor = self.entries.last().map_or(0, |l| l.time);
        let mut entries = self.entries.clone();
        entries.extend(
            other
                .entries
                .iter()
                .take(max_len - self.entries.len())
                .map(|e| Intervention {
                    time: e.time.max(floor),
                    impulse: e.impulse,
                }),
        );
        Self { entries }
    }

    /// `[v]_k`: the first `min(k, |v|)` entries.
    pub fn truncated(&self, k: usize) -> Self {
        Self {
            entries: self.entries[..k.min(self.entries.len())].to_vec(),
        }
    }

    /// History without its last entry.
    pub fn without_last(&self) -> Self {
        self.truncated(self.entries.len().saturating_sub(1))
    }

    /// Entries with time index at most `time`.
    pub fn up_to(&self, time: usize) -> Self {
        let cut = self.entries.partition_point(|e| e.time <= time);
        self.truncated(cut)
    }

    /// Canonical text form `"i:b,i:b,..."`; the empty history encodes as `""`.
    pub fn encode(&self) -> String {
        self.to_string()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text.is_empty() {
            return Ok(Self::empty());
        }
        let mut entries = Vec::new();
        for part in text.split(',') {
            let (t, b) = part.split_once(':').ok_or_else(|| {
                Error::InvalidArgument(format!("bad history entry {part:?}"))
            })?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidArgument(format!("bad history entry {part:?}")))
            };
            entries.push(Intervention {
                time: parse(t)?,
                impulse: parse(b)?,
            });
        }
        Self::new(entries)
    }
}

impl TryFrom<Vec<Intervention>> for InterventionHistory {
    type Error = Error;

    fn try_from(entries: Vec<Intervention>) -> Result<Self> {
        Self::new(entries)
    }
}

impl From<InterventionHistory> for Vec<Intervention> {
    fn from(h: InterventionHistory) -> Self {
        h.entries
    }
}

impl fmt::Display for InterventionHistory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (j, e) in self.entries.iter().enumerate() {
            if j > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}:{}", e.time, e.impulse)?;
        }
        Ok(())
    }
}

/// Calls `f` on every history with at most `max_len` entries whose times lie
/// in `[min_time, max_time]`, impulses in `0..impulses`. Histories are visited
/// in lexicographic order of their entries, shortest prefix first.
pub(crate) fn for_each_history<F>(
    min_time: usize,
    max_time: usize,
    max_len: usize,
    impulses: usize,
    f: &mut F,
) where
    F: FnMut(&InterventionHistory),
{
    fn rec<F: FnMut(&InterventionHistory)>(
        h: &mut InterventionHistory,
        from: usize,
        max_time: usize,
        max_len: usize,
        impulses: usize,
        f: &mut F,
    ) {
        f(h);
        if h.len() == max_len {
            return;
        }
        for t in from..=max_time {
            for b in 0..impulses {
                h.entries.push(Intervention { time: t, impulse: b });
                rec(h, t, max_time, max_len, impulses, f);
                h.entries.pop();
            }
        }
    }
    let mut h = InterventionHistory::empty();
    rec(&mut h, min_time, max_time, max_len, impulses, f);
}

/// Number of histories visited by [`for_each_history`] with `min_time = 0`.
pub(crate) fn history_count(time_slots: usize, max_len: usize, impulses: usize) -> u128 {
    // sequences of length L with non-decreasing times over `time_slots` values:
    // C(L + slots - 1, L) * |U|^L
    let mut total: u128 = 0;
    let mut binom: u128 = 1; // C(L + s - 1, L) at L = 0
    let mut pow: u128 = 1;
    for l in 0..=max_len as u128 {
        if l > 0 {
            if time_slots == 0 || impulses == 0 {
                break;
            }
            binom = binom.saturating_mul(l + time_slots as u128 - 1) / l;
            pow = pow.saturating_mul(impulses as u128);
        }
        total = total.saturating_add(binom.saturating_mul(pow));
    }
    total
}
