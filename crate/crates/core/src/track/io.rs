use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use super::episode::TrajRecord;
use crate::demo::{DemoSet, Episode};
use crate::error::{Error, Result};

/// Writes one JSON object per line.
pub fn write_trajectories<'a, W: Write>(
    mut out: W,
    records: impl IntoIterator<Item = &'a TrajRecord>,
) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads line-delimited records, skipping blank lines. Parse failures and
/// non-finite values name their 1-based line; an input without records is
/// rejected.
pub fn read_trajectories<R: BufRead>(input: R) -> Result<Vec<TrajRecord>> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::Malformed { line: i + 1, message };
        let r: TrajRecord = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let finite = [r.x, r.y, r.theta, r.v, r.w]
            .iter()
            .chain(r.features.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(malformed("non-finite value".into()));
        }
        records.push(r);
    }
    if records.is_empty() {
        return Err(Error::Malformed {
            line: 0,
            message: "no trajectory records".into(),
        });
    }
    Ok(records)
}

/// Groups records into episodes ordered by tick and keeps their features.
pub fn records_to_demo_set(records: &[TrajRecord]) -> Result<DemoSet> {
    let mut by_episode: BTreeMap<usize, Vec<&TrajRecord>> = BTreeMap::new();
    for r in records {
        by_episode.entry(r.episode).or_default().push(r);
    }
    let episodes = by_episode
        .into_values()
        .map(|mut rs| {
            rs.sort_by_key(|r| r.t);
            Episode::new(rs.iter().map(|r| r.features.to_vec()).collect())
        })
        .collect();
    DemoSet::new(episodes)
}
