use std::path::{Component, Path};

use serde::{Deserialize, Serialize};

use super::schema::{check_version, decode, finish, to_canonical};
use crate::arch::{parse_pair, ArchDescriptor};
use crate::experts::ExpertKey;
use crate::validation::{Rejection, Rejections};

/// The controller's instruction for one cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Directive {
    pub schema_version: u64,
    pub cycle: u64,
    pub targets: Vec<ExpertKey>,
    pub candidate_id: String,
    /// Relative to the run directory.
    pub descriptor_path: String,
    pub preprocessing_path: String,
    pub rationale: String,
}

/// What a directive is checked against.
#[derive(Clone, Copy, Debug)]
pub struct DirectiveContext<'a> {
    pub modalities: usize,
    pub classes: usize,
    /// When set, referenced descriptor files must exist and validate.
    pub run_dir: Option<&'a Path>,
}

pub fn valid_candidate_id(id: &str) -> bool {
    (1..=64).contains(&id.len())
        && id
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-')
}

fn relative_path_ok(p: &str) -> bool {
    let path = Path::new(p);
    !p.is_empty() && path.components().all(|c| matches!(c, Component::Normal(_)))
}

impl Directive {
    pub fn to_text(&self) -> String {
        to_canonical(self)
    }

    /// Loads the referenced descriptor pair.
    pub fn load_descriptor(&self, run_dir: &Path) -> Result<ArchDescriptor, Rejections> {
        let read = |field: &str, rel: &str| {
            std::fs::read(run_dir.join(rel)).map_err(|_| Rejections::single(field, "referenced file does not exist"))
        };
        let model = read("descriptor_path", &self.descriptor_path)?;
        let pre = read("preprocessing_path", &self.preprocessing_path)?;
        parse_pair(&model, &pre).map_err(|r| {
            Rejections(
                r.0.into_iter()
                    .map(|x| Rejection::new(format!("descriptor_path:{}", x.path), x.rule))
                    .collect(),
            )
        })
    }
}

pub fn parse_directive(bytes: &[u8], ctx: &DirectiveContext) -> Result<Directive, Rejections> {
    let d: Directive = decode(bytes)?;
    let mut errs = Vec::new();
    check_version(&mut errs, d.schema_version);
    if d.targets.is_empty() {
        errs.push(Rejection::new("targets", "at least one target"));
    }
    for (i, t) in d.targets.iter().enumerate() {
        if t.modality >= ctx.modalities {
            errs.push(Rejection::new(
                format!("targets[{i}].modality"),
                format!("modality must be in [0, {})", ctx.modalities),
            ));
        }
        if t.class >= ctx.classes {
            errs.push(Rejection::new(
                format!("targets[{i}].class"),
                format!("class must be in [0, {})", ctx.classes),
            ));
        }
        if d.targets[..i].contains(t) {
            errs.push(Rejection::new(format!("targets[{i}]"), "duplicate target"));
        }
    }
    if !valid_candidate_id(&d.candidate_id) {
        errs.push(Rejection::new("candidate_id", "must match [a-z0-9_-]{1,64}"));
    }
    for (field, p) in [
        ("descriptor_path", &d.descriptor_path),
        ("preprocessing_path", &d.preprocessing_path),
    ] {
        if !relative_path_ok(p) {
            errs.push(Rejection::new(
                field,
                "must be a relative path inside the run directory",
            ));
        }
    }
    if errs.is_empty() {
        if let Some(dir) = ctx.run_dir {
            if let Err(r) = d.load_descriptor(dir) {
                errs.extend(r.0);
            }
        }
    }
    finish(d, errs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Directive {
        Directive {
            schema_version: 1,
            cycle: 3,
            targets: vec![ExpertKey::new(0, 2)],
            candidate_id: "c0003".into(),
            descriptor_path: "models/c0003/model.json".into(),
            preprocessing_path: "models/c0003/preprocessing.json".into(),
            rationale: "weakest expert".into(),
        }
    }

    const CTX: DirectiveContext<'static> = DirectiveContext {
        modalities: 3,
        classes: 5,
        run_dir: None,
    };

    #[test]
    fn round_trip() {
        let d = sample();
        let text = d.to_text();
        assert_eq!(parse_directive(text.as_bytes(), &CTX).unwrap(), d);
        assert_eq!(parse_directive(text.as_bytes(), &CTX).unwrap().to_text(), text);
    }

    #[test]
    fn missing_candidate_id_is_named() {
        let mut v = serde_json::to_value(sample()).unwrap();
        v.as_object_mut().unwrap().remove("candidate_id");
        let e = parse_directive(v.to_string().as_bytes(), &CTX).unwrap_err();
        assert_eq!(e.0[0].path, "candidate_id");
    }

    #[test]
    fn out_of_range_target() {
        let mut d = sample();
        d.targets = vec![ExpertKey::new(5, 0)];
        let e = parse_directive(d.to_text().as_bytes(), &CTX).unwrap_err();
        assert_eq!(e.0[0].path, "targets[0].modality");
    }

    #[test]
    fn dangling_descriptor_path() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = DirectiveContext {
            run_dir: Some(dir.path()),
            ..CTX
        };
        let e = parse_directive(sample().to_text().as_bytes(), &ctx).unwrap_err();
        assert_eq!(e.0[0].path, "descriptor_path");
    }

    #[test]
    fn candidate_id_pattern() {
        assert!(valid_candidate_id("c0001-m0_c1"));
        assert!(!valid_candidate_id("C1"));
        assert!(!valid_candidate_id(""));
        assert!(!valid_candidate_id(&"a".repeat(65)));
    }
}
