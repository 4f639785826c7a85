use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use super::{PipelineError, PoiReport};

/// Depth frames (`*.pgm`) in `dir`, sorted by file name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let entries = std::fs::read_dir(dir).map_err(|e| PipelineError::io(dir, e))?;
    let mut frames = Vec::new();
    for e in entries {
        let path = e.map_err(|e| PipelineError::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")) {
            frames.push(path);
        }
    }
    frames.sort();
    if frames.is_empty() {
        return Err(PipelineError::Format {
            path: dir.to_path_buf(),
            message: "no .pgm depth frames found".into(),
        });
    }
    Ok(frames)
}

pub fn write_report_line<W: Write>(out: &mut W, report: &PoiReport) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, report)?;
    out.write_all(b"\n")
}

pub fn read_report_lines(path: &Path) -> Result<Vec<PoiReport>, PipelineError> {
    let file = std::fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PipelineError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| PipelineError::Format {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::PoiEstimate;

    #[test]
    fn report_lines_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let reports: Vec<PoiReport> = (0..3)
            .map(|f| PoiReport {
                frame: f,
                pois: vec![PoiEstimate {
                    name: "tip".into(),
                    camera: [0.1, 0.2, f as f64],
                    end_effector: [0.0, 0.0, 0.5],
                    confidence: 0.25,
                }],
            })
            .collect();
        let mut buf = Vec::new();
        for r in &reports {
            write_report_line(&mut buf, r).unwrap();
        }
        std::fs::write(&path, &buf).unwrap();
        assert_eq!(read_report_lines(&path).unwrap(), reports);
        assert!(list_frames(dir.path()).is_err());
        for name in ["b.pgm", "a.pgm", "c.txt"] {
            std::fs::write(dir.path().join(name), b"").unwrap();
        }
        let names: Vec<_> = list_frames(dir.path())
            .unwrap()
            .iter()
            .map(|p| p.file_name().unwrap().to_str().unwrap().to_owned())
            .collect();
        assert_eq!(names, ["a.pgm", "b.pgm"]);
    }
}
