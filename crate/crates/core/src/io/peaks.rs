//! Peak lists and ground truth as CSV.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::peaks::{Peak, ScoreKind};
use crate::so3::UnitQuaternion;
use crate::synth::{GridSpec, GroundTruth, Instance};

const COLUMNS: [&str; 9] = ["x", "y", "z", "qw", "qx", "qy", "qz", "score", "kind"];
const ID_COLUMN: &str = "instance_id";
/// Largest accepted deviation of a stored quaternion from unit norm.
pub const QUATERNION_TOLERANCE: f64 = 1e-6;

/// Writes `x,y,z,qw,qx,qy,qz,score,kind`, plus `instance_id` when any peak
/// carries one. Floats use the shortest representation that parses back to
/// the same value.
pub fn write_peaks<W: Write>(out: W, peaks: &[Peak]) -> Result<()> {
    let with_id = peaks.iter().any(|p| p.instance_id.is_some());
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let mut header: Vec<&str> = COLUMNS.to_vec();
    if with_id {
        header.push(ID_COLUMN);
    }
    w.write_record(&header).map_err(csv_io)?;
    for p in peaks {
        let q = p.q.to_array();
        let mut rec = vec![
            p.pos[0].to_string(),
            p.pos[1].to_string(),
            p.pos[2].to_string(),
            q[0].to_string(),
            q[1].to_string(),
            q[2].to_string(),
            q[3].to_string(),
            p.score.to_string(),
            p.kind.as_str().to_string(),
        ];
        if with_id {
            rec.push(p.instance_id.map(|i| i.to_string()).unwrap_or_default());
        }
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_peaks_file(path: &Path, peaks: &[Peak]) -> Result<()> {
    let f = File::create(path).map_err(|e| super::with_path(e.into(), path))?;
    write_peaks(f, peaks)
}

pub fn read_peaks_file(path: &Path) -> Result<Vec<Peak>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| super::with_path(csv_io(e), path))?;
    let mut records = r.records();
    let header = match records.next() {
        Some(h) => h.map_err(|e| parse_err(path, 1, e.to_string()))?,
        None => return Err(parse_err(path, 1, "missing header")),
    };
    let names: Vec<&str> = header.iter().collect();
    let with_id = if names == COLUMNS {
        false
    } else if names.len() == COLUMNS.len() + 1 && names[..COLUMNS.len()] == COLUMNS && names[COLUMNS.len()] == ID_COLUMN {
        true
    } else {
        return Err(parse_err(
            path,
            1,
            format!("header `{}` is not `{},{ID_COLUMN}` or a prefix of it", names.join(","), COLUMNS.join(",")),
        ));
    };
    let width = COLUMNS.len() + usize::from(with_id);
    let mut out = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let err = |msg: String| parse_err(path, line, msg);
        if rec.len() != width {
            return Err(err(format!("expected {width} fields, found {}", rec.len())));
        }
        let int = |i: usize| -> Result<usize> {
            rec[i]
                .trim()
                .parse::<usize>()
                .map_err(|e| err(format!("column {}: `{}`: {e}", COLUMNS[i], &rec[i])))
        };
        let float = |i: usize| -> Result<f64> {
            let v = rec[i]
                .trim()
                .parse::<f64>()
                .map_err(|e| err(format!("column {}: `{}`: {e}", COLUMNS[i], &rec[i])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(err(format!("column {} is not finite", COLUMNS[i])))
            }
        };
        let pos = [int(0)?, int(1)?, int(2)?];
        let q = UnitQuaternion::from_unit(float(3)?, float(4)?, float(5)?, float(6)?, QUATERNION_TOLERANCE)
            .map_err(|e| err(e.to_string()))?;
        let score = float(7)?;
        let kind: ScoreKind = rec[8].trim().parse().map_err(err)?;
        let instance_id = if with_id && !rec[9].trim().is_empty() {
            Some(rec[9].trim().parse::<usize>().map_err(|e| err(format!("column {ID_COLUMN}: {e}")))?)
        } else {
            None
        };
        out.push(Peak {
            pos,
            q,
            score,
            kind,
            block_id: None,
            converged: true,
            instance_id,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthMeta {
    template_sha256: String,
    grid: GridSpec,
    seed: Option<u64>,
}

/// `gt.csv` pairs with `gt.json`.
pub fn truth_meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Ground truth as a peak list of kind `truth` plus a JSON sidecar with the
/// template hash, grid and seed.
pub fn write_ground_truth(path: &Path, gt: &GroundTruth) -> Result<()> {
    let peaks: Vec<Peak> = gt
        .instances
        .iter()
        .map(|i| {
            let mut p = Peak::at(i.pos, 0.0, ScoreKind::Truth);
            p.q = i.q;
            p.instance_id = Some(i.instance_id);
            p
        })
        .collect();
    write_peaks_file(path, &peaks)?;
    let meta = TruthMeta {
        template_sha256: gt.template_sha256.clone(),
        grid: gt.grid,
        seed: gt.seed,
    };
    let mut f = File::create(truth_meta_path(path))?;
    serde_json::to_writer_pretty(&mut f, &meta)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth> {
    let meta_path = truth_meta_path(path);
    let f = File::open(&meta_path).map_err(|e| super::with_path(e.into(), &meta_path))?;
    let meta: TruthMeta = serde_json::from_reader(f).map_err(|e| parse_err(&meta_path, e.line() as u64, e.to_string()))?;
    let peaks = read_peaks_file(path)?;
    let instances = peaks
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let id = p.instance_id.ok_or_else(|| {
                parse_err(path, i as u64 + 2, "ground truth rows need an instance_id")
            })?;
            Ok(Instance {
                pos: p.pos,
                q: p.q,
                instance_id: id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GroundTruth {
        instances,
        template_sha256: meta.template_sha256,
        grid: meta.grid,
        seed: meta.seed,
    })
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Config(format!("csv: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::sample_so3_random;

    fn sample_peaks(n: usize) -> Vec<Peak> {
        let qs = sample_so3_random(n, 9).unwrap();
        (0..n)
            .map(|i| {
                let mut p = Peak::at([i, 2 * i + 1, 40 - i], 1.0 / (i as f64 + 3.0), ScoreKind::Lncc);
                p.q = qs[i];
                p
            })
            .collect()
    }

    #[test]
    fn round_trip_is_field_equal() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("peaks.csv");
        let peaks = sample_peaks(27);
        write_peaks_file(&p, &peaks).unwrap();
        assert_eq!(read_peaks_file(&p).unwrap(), peaks);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("x,y,z,qw,qx,qy,qz,score,kind\n"));
        assert!(!text.contains('\r'));
    }

    #[test]
    fn header_only_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("peaks.csv");
        std::fs::write(&p, "x,y,z,qw,qx,qy,qz,score,kind\n").unwrap();
        assert!(read_peaks_file(&p).unwrap().is_empty());
    }

    #[test]
    fn non_unit_quaternion_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("peaks.csv");
        std::fs::write(
            &p,
            "x,y,z,qw,qx,qy,qz,score,kind\n1,2,3,1,0,0,0,0.5,lncc\n4,5,6,0.9,0.1,0,0,0.4,lncc\n",
        )
        .unwrap();
        match read_peaks_file(&p) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("norm"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_rows_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("peaks.csv");
        std::fs::write(&p, "x,y,z,qw,qx,qy,qz,score,kind\n1,2,x,1,0,0,0,0.5,lncc\n").unwrap();
        assert!(matches!(read_peaks_file(&p), Err(Error::Parse { line: 2, .. })));
        std::fs::write(&p, "x,y,z,qw,qx,qy,qz,score,kind\n1,2,3,1,0,0,0,0.5,best\n").unwrap();
        assert!(matches!(read_peaks_file(&p), Err(Error::Parse { line: 2, .. })));
        std::fs::write(&p, "a,b\n").unwrap();
        assert!(matches!(read_peaks_file(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn ground_truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gt.csv");
        let qs = sample_so3_random(4, 1).unwrap();
        let gt = GroundTruth {
            instances: (0..4)
                .map(|i| Instance {
                    pos: [10 + i, 20, 30],
                    q: qs[i],
                    instance_id: i,
                })
                .collect(),
            template_sha256: "ab".repeat(32),
            grid: GridSpec {
                grid: [2, 2, 1],
                spacing: 20,
            },
            seed: Some(42),
        };
        write_ground_truth(&p, &gt).unwrap();
        assert_eq!(read_ground_truth(&p).unwrap(), gt);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("x,y,z,qw,qx,qy,qz,score,kind,instance_id\n"));
        assert!(text.lines().nth(1).unwrap().ends_with(",truth,0"));
    }
}
