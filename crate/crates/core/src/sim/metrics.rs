use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::SimError;

/// Cumulative counters and network-wide relation counts at one instant.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sample {
    pub time_s: u64,
    /// Trusted entries summed over every node's assessment (each handshake
    /// contributes two).
    pub direct_relations: u64,
    /// Known entries by depth, index 0 = depth 2.
    pub known_by_depth: Vec<u64>,
    pub handshake_bytes: u64,
    pub sync_query_bytes: u64,
    pub sync_response_bytes: u64,
    pub sign_ops: u64,
    pub verify_ops: u64,
    pub repo_bytes_mean: f64,
    pub repo_bytes_max: u64,
    pub buffer_rejections: u64,
    pub handshakes: u64,
    pub syncs_completed: u64,
    pub syncs_aborted: u64,
}

impl Sample {
    pub fn known_total(&self) -> u64 {
        self.known_by_depth.iter().sum()
    }

    pub fn total_relations(&self) -> u64 {
        self.direct_relations + self.known_total()
    }

    pub fn sync_bytes(&self) -> u64 {
        self.sync_query_bytes + self.sync_response_bytes
    }

    pub fn total_bytes(&self) -> u64 {
        self.handshake_bytes + self.sync_bytes()
    }

    /// Known relations at `depth` (2 and up).
    pub fn known_at(&self, depth: u32) -> u64 {
        depth
            .checked_sub(2)
            .and_then(|i| self.known_by_depth.get(i as usize))
            .copied()
            .unwrap_or(0)
    }
}

/// Time series of one run, sampled at a fixed cadence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    /// Deepest depth with its own column (at least 3).
    pub max_depth: u32,
    pub samples: Vec<Sample>,
}

impl MetricsLog {
    pub fn new(maxdegree: u32) -> Self {
        MetricsLog {
            max_depth: maxdegree.max(3),
            samples: Vec::new(),
        }
    }

    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    /// Column names in output order.
    pub fn header(&self) -> Vec<String> {
        let mut cols = vec!["time_s".to_string(), "direct_relations".to_string()];
        cols.extend((2..=self.max_depth).map(|d| format!("known_depth_{d}")));
        cols.extend(
            [
                "handshake_bytes",
                "sync_query_bytes",
                "sync_response_bytes",
                "total_bytes",
                "sign_ops",
                "verify_ops",
                "repo_bytes_mean",
                "repo_bytes_max",
                "buffer_rejections",
                "handshakes",
                "syncs_completed",
                "syncs_aborted",
            ]
            .map(String::from),
        );
        cols
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header().join(",");
        out.push('\n');
        for s in &self.samples {
            let _ = write!(out, "{},{}", s.time_s, s.direct_relations);
            for d in 2..=self.max_depth {
                let _ = write!(out, ",{}", s.known_at(d));
            }
            let _ = writeln!(
                out,
                ",{},{},{},{},{},{},{:.3},{},{},{},{},{}",
                s.handshake_bytes,
                s.sync_query_bytes,
                s.sync_response_bytes,
                s.total_bytes(),
                s.sign_ops,
                s.verify_ops,
                s.repo_bytes_mean,
                s.repo_bytes_max,
                s.buffer_rejections,
                s.handshakes,
                s.syncs_completed,
                s.syncs_aborted,
            );
        }
        out
    }
}

/// Writes the log as CSV: a header row then one row per sample.
pub fn export_metrics(log: &MetricsLog, path: impl AsRef<Path>) -> Result<(), SimError> {
    fs::write(path, log.to_csv())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_rows_line_up() {
        let mut log = MetricsLog::new(4);
        log.samples.push(Sample {
            time_s: 60,
            direct_relations: 2,
            known_by_depth: vec![3, 1, 0],
            handshake_bytes: 10,
            sync_query_bytes: 5,
            sync_response_bytes: 7,
            repo_bytes_mean: 1.5,
            ..Sample::default()
        });
        let csv = log.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        let header: Vec<&str> = lines[0].split(',').collect();
        let row: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(header.len(), row.len());
        let col = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
        assert_eq!(col("known_depth_2"), "3");
        assert_eq!(col("known_depth_4"), "0");
        assert_eq!(col("total_bytes"), "22");
        assert_eq!(col("repo_bytes_mean"), "1.500");
    }
}
