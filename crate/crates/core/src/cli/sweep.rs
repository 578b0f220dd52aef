//! Resumable parameter sweeps. Each finished row is checkpointed atomically
//! so an interrupted run restarts at the first missing row.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use nvmux::config::{ExperimentKind, RunConfig};
use nvmux::experiment::sweep_of;
use nvmux::holography::{random_targets, wgs, WgsOptions};
use nvmux::rateq::{multiplex_scaling, optimal_ionization_on, scc_distributions, scaling_csv_row, SCALING_CSV_HEADER};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{io_err, write_file, write_json, CliError, Context};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum SweepKind {
    SccOpt,
    MultiplexScaling,
    WgsBench,
}

impl SweepKind {
    fn experiment(self) -> ExperimentKind {
        match self {
            SweepKind::SccOpt => ExperimentKind::SccOpt,
            SweepKind::MultiplexScaling => ExperimentKind::MultiplexScaling,
            SweepKind::WgsBench => ExperimentKind::WgsBench,
        }
    }

    fn header(self) -> &'static str {
        match self {
            SweepKind::SccOpt => "t_ion_ns,sigma_r",
            SweepKind::MultiplexScaling => SCALING_CSV_HEADER,
            SweepKind::WgsBench => "n_targets,uniformity_weighted,uniformity_plain",
        }
    }

    fn file_stem(self) -> &'static str {
        self.experiment().name()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    kind: String,
    config_digest: String,
    rows: Vec<String>,
    checksum: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn config_digest(kind: SweepKind, cfg: &RunConfig, sweep: &[f64]) -> String {
    let mut h = Sha256::new();
    h.update(kind.file_stem().as_bytes());
    h.update(serde_json::to_vec(cfg).expect("config serializes"));
    for v in sweep {
        h.update(v.to_le_bytes());
    }
    hex(&h.finalize())
}

fn rows_checksum(kind: &str, digest: &str, rows: &[String]) -> String {
    let mut h = Sha256::new();
    h.update(kind.as_bytes());
    h.update([0]);
    h.update(digest.as_bytes());
    for r in rows {
        h.update([0]);
        h.update(r.as_bytes());
    }
    hex(&h.finalize())
}

impl Checkpoint {
    fn new(kind: SweepKind, digest: String) -> Self {
        let mut c = Self {
            kind: kind.file_stem().to_string(),
            config_digest: digest,
            rows: Vec::new(),
            checksum: String::new(),
        };
        c.seal();
        c
    }

    fn seal(&mut self) {
        self.checksum = rows_checksum(&self.kind, &self.config_digest, &self.rows);
    }

    fn load(path: &Path, kind: SweepKind, digest: &str, n_rows: usize) -> Result<Self, CliError> {
        let bad = |m: String| CliError::Checkpoint(path.to_path_buf(), m);
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let c: Checkpoint = serde_json::from_str(&text).map_err(|e| bad(format!("unreadable: {e}")))?;
        if c.checksum != rows_checksum(&c.kind, &c.config_digest, &c.rows) {
            return Err(bad("checksum mismatch".into()));
        }
        if c.kind != kind.file_stem() {
            return Err(bad(format!("written by a {} sweep", c.kind)));
        }
        if c.config_digest != digest {
            return Err(bad("written for a different configuration".into()));
        }
        if c.rows.len() > n_rows {
            return Err(bad(format!("{} rows for a {n_rows}-point sweep", c.rows.len())));
        }
        Ok(c)
    }

    /// Write-then-rename so a crash never leaves a half-written checkpoint.
    fn store(&self, path: &Path) -> Result<(), CliError> {
        let tmp = path.with_extension("json.tmp");
        let bytes = serde_json::to_vec_pretty(self).expect("checkpoint serializes");
        fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
        fs::rename(&tmp, path).map_err(io_err(path))
    }
}

pub fn checkpoint_path(dir: &Path, kind: SweepKind) -> PathBuf {
    dir.join(format!("{}.checkpoint.json", kind.file_stem()))
}

fn row(kind: SweepKind, cfg: &RunConfig, v: f64) -> Result<String, CliError> {
    Ok(match kind {
        SweepKind::SccOpt => {
            let p = cfg.total_power / cfg.n_spots as f64;
            let s = scc_distributions(&cfg.rate_model, p, v, &cfg.scc_setup).sigma_r();
            format!("{:.6},{:.9}", v * 1e9, s)
        }
        SweepKind::MultiplexScaling => {
            let n = sweep_count(v)?;
            let r = multiplex_scaling(&cfg.rate_model, cfg.total_power, &[n], &cfg.scc_setup);
            scaling_csv_row(&r[0])
        }
        SweepKind::WgsBench => {
            let n = sweep_count(v)?;
            let h = &cfg.holo;
            let targets = random_targets(n, h.width, h.height, h.min_separation, cfg.seed);
            let run = |weighted: bool| {
                let opts = WgsOptions {
                    weighted,
                    seed: cfg.seed,
                    ..cfg.wgs
                };
                wgs(&targets, h.width, h.height, &opts).map(|r| r.uniformity).map_err(CliError::pipeline)
            };
            format!("{n},{:.9},{:.9}", run(true)?, run(false)?)
        }
    })
}

fn sweep_count(v: f64) -> Result<usize, CliError> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(CliError::Usage(format!("sweep value {v} is not a positive integer count")))
    }
}

#[derive(Serialize)]
struct SccOptimum {
    power_per_spot: f64,
    t_star_ns: f64,
    sigma_r_star: f64,
}

pub fn sweep(ctx: &Context, kind: SweepKind, resume: bool, stop_after: Option<usize>) -> Result<(), CliError> {
    let cfg = ctx.load(Some(kind.experiment()))?;
    let dir = ctx.out_dir(Some(&cfg))?;
    let values = cfg.sweep.clone().unwrap_or_else(|| {
        let mut c = cfg.clone();
        c.experiment = kind.experiment();
        sweep_of(&c)
    });
    if values.is_empty() {
        return Err(CliError::Usage("empty sweep".into()));
    }
    let digest = config_digest(kind, &cfg, &values);
    let ck_path = checkpoint_path(&dir, kind);
    let mut ck = if resume && ck_path.exists() {
        let c = Checkpoint::load(&ck_path, kind, &digest, values.len())?;
        log::info!("event=resume path={} rows_done={}", ck_path.display(), c.rows.len());
        c
    } else {
        Checkpoint::new(kind, digest)
    };
    let start = ck.rows.len();
    for (i, &v) in values.iter().enumerate().skip(start) {
        if stop_after.is_some_and(|s| i - start >= s) {
            log::warn!("event=stopped rows_done={} rows_total={}", ck.rows.len(), values.len());
            return Err(CliError::Interrupted(ck.rows.len()));
        }
        ck.rows.push(row(kind, &cfg, v)?);
        ck.seal();
        ck.store(&ck_path)?;
        log::debug!("event=row kind={} index={i} value={v}", kind.file_stem());
    }
    let csv = dir.join(format!("{}.csv", kind.file_stem()));
    write_file(&csv, |w| {
        use std::io::Write;
        writeln!(w, "{}", kind.header())?;
        ck.rows.iter().try_for_each(|r| writeln!(w, "{r}"))
    })?;
    if kind == SweepKind::SccOpt {
        let p = cfg.total_power / cfg.n_spots as f64;
        let o = optimal_ionization_on(&cfg.rate_model, p, &cfg.scc_setup, &values);
        log::info!("event=scc_optimum t_star_ns={:.3} sigma_r_star={:.4}", o.t_star * 1e9, o.sigma_r_star);
        write_json(
            &dir.join("scc_opt_optimum.json"),
            &SccOptimum {
                power_per_spot: p,
                t_star_ns: o.t_star * 1e9,
                sigma_r_star: o.sigma_r_star,
            },
        )?;
    }
    fs::remove_file(&ck_path).map_err(io_err(&ck_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checksum_covers_rows() {
        let mut c = Checkpoint::new(SweepKind::SccOpt, "d".into());
        c.rows.push("1,2".into());
        let before = c.checksum.clone();
        c.seal();
        assert_ne!(before, c.checksum);
        assert_eq!(c.checksum, rows_checksum("scc_opt", "d", &["1,2".to_string()]));
    }

    #[test]
    fn counts_must_be_integers() {
        assert_eq!(sweep_count(5.0).unwrap(), 5);
        assert!(sweep_count(2.5).is_err());
        assert!(sweep_count(0.0).is_err());
    }
}
