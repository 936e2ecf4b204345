use std::path::{Path, PathBuf};

use serde::Serialize;
use walkdir::WalkDir;

use super::wire::{parse_payload, ConstraintResponse, GraspFixture, TripletResponse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureKind {
    Triplets,
    Constraints,
    Grasps,
    /// Recorded raw response of either language-model query.
    Transcript,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileReport {
    pub path: PathBuf,
    pub kind: Option<FixtureKind>,
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl FileReport {
    pub fn ok(&self) -> bool {
        self.errors.is_empty()
    }
}

fn kind_of(path: &Path, text: &str) -> Option<FixtureKind> {
    let dir = path.parent().and_then(|p| p.file_name()).and_then(|n| n.to_str()).unwrap_or("");
    match dir {
        "triplets" => Some(FixtureKind::Triplets),
        "constraints" => Some(FixtureKind::Constraints),
        "grasps" => Some(FixtureKind::Grasps),
        "transcripts" => Some(FixtureKind::Transcript),
        _ => {
            let v: serde_json::Value = serde_json::from_str(text).ok()?;
            if v.get("triplets").is_some() {
                Some(FixtureKind::Triplets)
            } else if v.get("constraints").is_some() {
                Some(FixtureKind::Constraints)
            } else if v.get("grasps").is_some() {
                Some(FixtureKind::Grasps)
            } else {
                None
            }
        }
    }
}

fn check_triplets(text: &str, report: &mut FileReport) {
    match parse_payload::<TripletResponse>(text) {
        Ok(t) => match t.validate() {
            Ok(w) => report.warnings.extend(w),
            Err(e) => report.errors.push(e),
        },
        Err(e) => report.errors.push(e),
    }
}

fn check_constraints(text: &str, report: &mut FileReport) {
    match parse_payload::<ConstraintResponse>(text) {
        Ok(c) => {
            if let Err(e) = c.validate() {
                report.errors.push(e);
            }
        }
        Err(e) => report.errors.push(e),
    }
}

/// Schema-checks one fixture file.
pub fn validate_fixture_file(path: &Path) -> FileReport {
    let mut report = FileReport { path: path.to_path_buf(), kind: None, errors: Vec::new(), warnings: Vec::new() };
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            report.errors.push(format!("cannot read: {e}"));
            return report;
        }
    };
    report.kind = kind_of(path, &text);
    match report.kind {
        Some(FixtureKind::Triplets) => check_triplets(&text, &mut report),
        Some(FixtureKind::Constraints) => check_constraints(&text, &mut report),
        Some(FixtureKind::Grasps) => match parse_payload::<GraspFixture>(&text) {
            Ok(g) => {
                if let Err(e) = g.validate() {
                    report.errors.push(e);
                }
            }
            Err(e) => report.errors.push(e),
        },
        Some(FixtureKind::Transcript) => {
            let as_constraints = serde_json::from_str::<serde_json::Value>(&text)
                .map(|v| v.get("constraints").is_some())
                .unwrap_or(false);
            if as_constraints {
                check_constraints(&text, &mut report);
            } else {
                check_triplets(&text, &mut report);
            }
        }
        None => match parse_payload::<serde_json::Value>(&text) {
            Ok(_) => report.errors.push("unrecognized fixture: expected triplets, constraints or grasps".into()),
            Err(e) => report.errors.push(e),
        },
    }
    report
}

/// Checks every `.json` file under `paths` (files or directories), in path order.
pub fn validate_fixtures(paths: &[PathBuf]) -> Vec<FileReport> {
    let mut files = Vec::new();
    let mut reports = Vec::new();
    for p in paths {
        if p.is_dir() {
            for entry in WalkDir::new(p).sort_by_file_name() {
                match entry {
                    Ok(e) if e.file_type().is_file() && e.path().extension().is_some_and(|x| x == "json") => {
                        files.push(e.into_path())
                    }
                    Ok(_) => {}
                    Err(e) => reports.push(FileReport {
                        path: p.clone(),
                        kind: None,
                        errors: vec![e.to_string()],
                        warnings: Vec::new(),
                    }),
                }
            }
        } else {
            files.push(p.clone());
        }
    }
    reports.extend(files.iter().map(|f| validate_fixture_file(f)));
    reports
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, rel: &str, text: &str) -> PathBuf {
        let p = dir.join(rel);
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn sign_two_is_rejected_with_position() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "constraints/a__b.json", "{\n  \"constraints\": [\n    {\"axis_a\": \"X\", \"axis_b\": \"Z\", \"sign\": 2}\n  ]\n}\n");
        let r = validate_fixture_file(&p);
        assert_eq!(r.kind, Some(FixtureKind::Constraints));
        assert_eq!(r.errors.len(), 1);
        assert!(r.errors[0].starts_with("line 3 column"), "{}", r.errors[0]);
    }

    #[test]
    fn unknown_triplet_object_is_a_warning() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "triplets/s.json", r#"{"objects":["a"],"triplets":[{"a":"a","verb":"hit","b":"ghost"}]}"#);
        let r = validate_fixture_file(&p);
        assert!(r.ok());
        assert_eq!(r.warnings.len(), 1);
        assert!(r.warnings[0].contains("ghost"));
    }

    #[test]
    fn too_many_constraints_and_bad_grasp() {
        let d = tempfile::tempdir().unwrap();
        let c = r#"{"constraints":[{"axis_a":"X","axis_b":"X","sign":1},{"axis_a":"Y","axis_b":"Y","sign":1},
            {"axis_a":"Z","axis_b":"Z","sign":1},{"axis_a":"X","axis_b":"Y","sign":-1}]}"#;
        write(d.path(), "constraints/a__b.json", c);
        write(d.path(), "grasps/a.json", r#"{"grasps":[{"position":[0,0,0],"quaternion":[2,0,0,0],"width":0.05,"score":1}]}"#);
        write(d.path(), "notes.txt", "ignored");
        let reports = validate_fixtures(&[d.path().to_path_buf()]);
        assert_eq!(reports.len(), 2);
        assert!(reports.iter().all(|r| !r.ok()));
    }
}
