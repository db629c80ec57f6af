//! The versioned `losses.csv` schema and the ranking built from it.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use scalesim::engine::BoxStats;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const LOSSES_HEADER: &str = "# scalesim losses v1";
pub const LOSSES_COLUMNS: [&str; 5] = ["policy", "alpha", "seed", "total_loss", "mean_step_loss"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub policy: String,
    pub alpha: f64,
    pub seed: u64,
    pub total_loss: f64,
    pub mean_step_loss: f64,
}

pub fn write_losses<W: Write>(mut out: W, rows: &[LossRow]) -> Result<(), csv::Error> {
    writeln!(out, "{LOSSES_HEADER}")?;
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(LOSSES_COLUMNS)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_losses(path: &Path) -> Result<Vec<LossRow>, CliError> {
    let schema = |message: String| CliError::Schema {
        path: path.display().to_string(),
        message,
    };
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader
        .read_line(&mut first)
        .map_err(|e| CliError::io(path, e))?;
    if first.trim_end() != LOSSES_HEADER {
        return Err(schema(format!(
            "expected first line {LOSSES_HEADER:?}, found {:?}",
            first.trim_end()
        )));
    }
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers().map_err(|e| schema(e.to_string()))?.clone();
    for (i, want) in LOSSES_COLUMNS.iter().enumerate() {
        match headers.get(i) {
            Some(h) if h == *want => {}
            Some(h) => return Err(schema(format!("column {} is {h:?}, expected {want:?}", i + 1))),
            None => return Err(schema(format!("missing column {want:?}"))),
        }
    }
    if headers.len() > LOSSES_COLUMNS.len() {
        return Err(schema(format!("unexpected column {:?}", &headers[LOSSES_COLUMNS.len()])));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| schema(e.to_string())))
        .collect()
}

/// Loss statistics of one (policy, alpha) group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ranking {
    pub alpha: f64,
    pub rank: usize,
    pub policy: String,
    #[serde(flatten)]
    pub stats: BoxStats,
}

/// Groups sorted by alpha, then median, then policy name.
pub fn rank(rows: &[LossRow]) -> Vec<Ranking> {
    let mut groups: BTreeMap<(u64, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.alpha.to_bits(), r.policy.clone()))
            .or_default()
            .push(r.total_loss);
    }
    let mut out: Vec<Ranking> = groups
        .into_iter()
        .map(|((alpha, policy), losses)| Ranking {
            alpha: f64::from_bits(alpha),
            rank: 0,
            policy,
            stats: BoxStats::from_values(&losses).expect("non-empty group"),
        })
        .collect();
    out.sort_by(|a, b| {
        a.alpha
            .total_cmp(&b.alpha)
            .then(a.stats.median.total_cmp(&b.stats.median))
            .then_with(|| a.policy.cmp(&b.policy))
    });
    let mut prev = None;
    let mut rank = 0;
    for r in &mut out {
        if prev != Some(r.alpha.to_bits()) {
            prev = Some(r.alpha.to_bits());
            rank = 0;
        }
        rank += 1;
        r.rank = rank;
    }
    out
}

pub fn format_table(rankings: &[Ranking]) -> String {
    let name_width = rankings
        .iter()
        .map(|r| r.policy.len())
        .chain(std::iter::once(6))
        .max()
        .unwrap_or(6);
    let mut s = format!(
        "{:>6} {:>4}  {:<name_width$} {:>5} {:>14} {:>14} {:>14} {:>14} {:>14}\n",
        "alpha", "rank", "policy", "n", "median", "q1", "q3", "min", "max"
    );
    for r in rankings {
        s += &format!(
            "{:>6} {:>4}  {:<name_width$} {:>5} {:>14.3} {:>14.3} {:>14.3} {:>14.3} {:>14.3}\n",
            r.alpha,
            r.rank,
            r.policy,
            r.stats.n,
            r.stats.median,
            r.stats.q1,
            r.stats.q3,
            r.stats.min,
            r.stats.max
        );
    }
    s
}

pub const RANKING_COLUMNS: [&str; 10] = ["alpha", "rank", "policy", "n", "min", "q1", "median", "q3", "max", "mean"];

pub fn format_csv(rankings: &[Ranking]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RANKING_COLUMNS).expect("in-memory write");
    for r in rankings {
        let s = &r.stats;
        let nums = [s.min, s.q1, s.median, s.q3, s.max, s.mean].map(|v| v.to_string());
        let mut rec = vec![r.alpha.to_string(), r.rank.to_string(), r.policy.clone(), s.n.to_string()];
        rec.extend(nums);
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(policy: &str, alpha: f64, seed: u64, loss: f64) -> LossRow {
        LossRow {
            policy: policy.into(),
            alpha,
            seed,
            total_loss: loss,
            mean_step_loss: loss / 10.0,
        }
    }

    #[test]
    fn roundtrip() {
        let rows = vec![row("a", 0.9, 1, 3.25), row("b,c", 0.5, 2, 1e-7)];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.csv");
        write_losses(std::fs::File::create(&p).unwrap(), &rows).unwrap();
        assert_eq!(read_losses(&p).unwrap(), rows);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# scalesim losses v1\npolicy,alpha,seed,total_loss,mean_step_loss\n"));
    }

    #[test]
    fn ranking_ties_break_by_name() {
        let rows = vec![row("zeta", 0.9, 0, 2.0), row("alpha", 0.9, 0, 2.0), row("mid", 0.9, 0, 1.0)];
        let names: Vec<_> = rank(&rows).into_iter().map(|r| (r.policy, r.rank)).collect();
        assert_eq!(names, vec![("mid".into(), 1), ("alpha".into(), 2), ("zeta".into(), 3)]);
    }

    #[test]
    fn ranks_restart_per_alpha() {
        let rows = vec![row("a", 0.9, 0, 1.0), row("a", 0.5, 0, 5.0), row("b", 0.5, 0, 4.0)];
        let r = rank(&rows);
        assert_eq!((r[0].alpha, r[0].policy.as_str(), r[0].rank), (0.5, "b", 1));
        assert_eq!((r[2].alpha, r[2].rank), (0.9, 1));
        assert_eq!(format_table(&r).lines().count(), 4);
        assert_eq!(format_csv(&r).lines().count(), 4);
    }

    #[test]
    fn schema_mismatch_names_the_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.csv");
        std::fs::write(&p, "# scalesim losses v1\npolicy,alpha,seed,loss,mean_step_loss\n").unwrap();
        let err = read_losses(&p).unwrap_err().to_string();
        assert!(err.contains("\"loss\""), "{err}");
        std::fs::write(&p, "policy,alpha,seed,total_loss,mean_step_loss\n").unwrap();
        assert!(read_losses(&p).unwrap_err().to_string().contains("first line"));
    }
}
