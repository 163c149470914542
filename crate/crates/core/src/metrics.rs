//! Run-wide and per-worker counters, emitted as CSV.
//!
//! Worker counters accumulate locally during evaluation and are merged at
//! quiescence; nothing on a hot path touches a shared counter.

use std::io::Write;
use std::time::Instant;

/// Counters owned by one worker for the duration of a run.
#[derive(Debug, Clone, Default)]
pub struct WorkerMetrics {
    /// Tuples yielded by query iterators during rule evaluation.
    pub work: u64,
    /// Novel tuples this worker inserted.
    pub derived: u64,
    /// Derivations of tuples that already existed.
    pub rederived: u64,
    /// Dequeued work items, including continuation resumes.
    pub items_executed: u64,
}

/// Merged counters for a complete run.
#[derive(Debug, Clone, Default)]
pub struct RunMetrics {
    pub engine: String,
    pub threads: usize,
    pub wall_seconds: f64,
    pub cpu_seconds: f64,
    pub work: u64,
    pub derived: u64,
    pub rederived: u64,
    pub oracle_calls: u64,
    pub cache_misses: u64,
    /// Per worker: (oracle calls, cache misses, items executed).
    pub per_worker: Vec<(u64, u64, u64)>,
}

impl RunMetrics {
    pub fn csv_header(&self) -> String {
        let mut cols = vec![
            "engine".to_string(),
            "threads".to_string(),
            "wall_seconds".to_string(),
            "cpu_seconds".to_string(),
            "work".to_string(),
            "derived".to_string(),
            "rederived".to_string(),
            "oracle_calls".to_string(),
            "cache_misses".to_string(),
        ];
        for k in 0..self.per_worker.len() {
            cols.push(format!("w{k}_calls"));
            cols.push(format!("w{k}_misses"));
            cols.push(format!("w{k}_items"));
        }
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.engine.clone(),
            self.threads.to_string(),
            format!("{:.6}", self.wall_seconds),
            format!("{:.6}", self.cpu_seconds),
            self.work.to_string(),
            self.derived.to_string(),
            self.rederived.to_string(),
            self.oracle_calls.to_string(),
            self.cache_misses.to_string(),
        ];
        for &(calls, misses, items) in &self.per_worker {
            cols.push(calls.to_string());
            cols.push(misses.to_string());
            cols.push(items.to_string());
        }
        cols.join(",")
    }
}

/// Writes one header row and one data row.
pub fn emit_csv(m: &RunMetrics, path: &std::path::Path) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{}", m.csv_header())?;
    writeln!(f, "{}", m.csv_row())
}

/// Writes several runs into one CSV; the header covers the widest worker
/// list, shorter rows leave the extra cells empty.
pub fn emit_csv_many(rows: &[RunMetrics], path: &std::path::Path) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    let widest = rows
        .iter()
        .max_by_key(|m| m.per_worker.len())
        .cloned()
        .unwrap_or_default();
    writeln!(f, "{}", widest.csv_header())?;
    let want = 9 + 3 * widest.per_worker.len();
    for m in rows {
        let mut row = m.csv_row();
        let have = 9 + 3 * m.per_worker.len();
        for _ in have..want {
            row.push(',');
        }
        writeln!(f, "{row}")?;
    }
    Ok(())
}

/// Wall clock plus process CPU clock over one evaluation span.
pub struct RunTimer {
    wall: Instant,
    cpu_start: f64,
}

impl RunTimer {
    pub fn start() -> Self {
        RunTimer {
            wall: Instant::now(),
            cpu_start: process_cpu_seconds(),
        }
    }

    /// (wall seconds, cpu seconds) since start.
    pub fn elapsed(&self) -> (f64, f64) {
        (
            self.wall.elapsed().as_secs_f64(),
            process_cpu_seconds() - self.cpu_start,
        )
    }
}

fn process_cpu_seconds() -> f64 {
    let mut ts = libc::timespec {
        tv_sec: 0,
        tv_nsec: 0,
    };
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_PROCESS_CPUTIME_ID, &mut ts) };
    if rc != 0 {
        return 0.0;
    }
    ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9
}
