//! CSV emission for step logs, epoch traces, per-level metrics, and
//! ablation tables.

use std::fs;
use std::path::Path;

use crate::infoplane::MITrace;
use crate::Result;

use super::{AblationRow, LevelMetricsRow, StepLog};

/// Writes the per-step loss log: step, epoch, rec, per-level CE, per-level
/// KL, weighted total, learning rate.
pub fn write_steps_csv(steps: &[StepLog], levels: usize, path: &Path) -> Result<()> {
    let mut out = String::from("step,epoch,rec");
    for l in 1..=levels {
        out.push_str(&format!(",ce{l}"));
    }
    for l in 1..levels {
        out.push_str(&format!(",kl{l}"));
    }
    out.push_str(",total,lr\n");
    for s in steps {
        out.push_str(&format!("{},{},{}", s.step, s.epoch, s.breakdown.rec));
        for l in 0..levels {
            let v = s.breakdown.ce_per_level.get(l).copied().unwrap_or(f64::NAN);
            out.push_str(&format!(",{v}"));
        }
        for l in 0..levels.saturating_sub(1) {
            let v = s.breakdown.kl_per_level.get(l).copied().unwrap_or(f64::NAN);
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{},{}\n", s.breakdown.total, s.lr));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes the per-epoch information-plane trace rows.
pub fn write_epochs_csv(traces: &[MITrace], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,level,i_xz,i_yz,kl_gap,ce\n");
    for t in traces {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            t.epoch, t.level, t.i_xz, t.i_yz, t.kl_gap_to_teacher, t.ce
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes per-level accuracy metrics observed on the trace batch.
pub fn write_level_metrics_csv(rows: &[LevelMetricsRow], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,level,oa,macc,ce,kl_gap\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.level, r.oa, r.macc, r.ce, r.kl_gap
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes the ablation table: one row per (config, seed) run plus
/// per-config medians.
pub fn write_ablation_csv(rows: &[AblationRow], levels: usize, path: &Path) -> Result<()> {
    let mut out = String::from("config,seed");
    for l in 1..=levels {
        out.push_str(&format!(",level{l}_oa,level{l}_macc"));
    }
    out.push_str(",cd_x1000\n");
    for r in rows {
        out.push_str(&format!("{},{}", r.config, r.seed));
        for l in 0..levels {
            match (r.per_level_oa.get(l), r.per_level_macc.get(l)) {
                (Some(oa), Some(macc)) => out.push_str(&format!(",{oa},{macc}")),
                _ => out.push_str(",-,-"),
            }
        }
        out.push_str(&format!(",{}\n", r.cd_x1000));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Splits an epoch trace into the three per-panel CSVs: information plane
/// (i_xz vs i_yz), KL gaps, and cross-entropy.
pub fn write_infoplane_panels(traces: &[MITrace], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut plane = String::from("epoch,level,i_xz,i_yz\n");
    let mut kl = String::from("epoch,level,kl_gap\n");
    let mut ce = String::from("epoch,level,ce\n");
    for t in traces {
        plane.push_str(&format!("{},{},{},{}\n", t.epoch, t.level, t.i_xz, t.i_yz));
        kl.push_str(&format!("{},{},{}\n", t.epoch, t.level, t.kl_gap_to_teacher));
        ce.push_str(&format!("{},{},{}\n", t.epoch, t.level, t.ce));
    }
    fs::write(dir.join("info_plane.csv"), plane)?;
    fs::write(dir.join("kl_gaps.csv"), kl)?;
    fs::write(dir.join("cross_entropy.csv"), ce)?;
    Ok(())
}

/// Reads an epochs CSV back into trace rows (for the info-plane splitter).
pub fn read_epochs_csv(path: &Path) -> Result<Vec<MITrace>> {
    let text = fs::read_to_string(path)?;
    let mut traces = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(crate::Error::Parse {
                line: lineno + 1,
                message: format!("expected 6 columns, found {}", fields.len()),
            });
        }
        let parse = |i: usize| -> Result<f64> {
            fields[i].parse::<f64>().map_err(|e| crate::Error::Parse {
                line: lineno + 1,
                message: format!("bad number {:?}: {e}", fields[i]),
            })
        };
        traces.push(MITrace {
            epoch: parse(0)? as usize,
            level: parse(1)? as usize,
            i_xz: parse(2)?,
            i_yz: parse(3)?,
            kl_gap_to_teacher: parse(4)?,
            ce: parse(5)?,
        });
    }
    Ok(traces)
}
