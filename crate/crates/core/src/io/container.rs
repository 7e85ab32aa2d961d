//! On-disk tensorial template: one MRC file per component, the normalized
//! template, and a metadata document.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::mrc::{read_mrc, write_mrc};
use crate::error::{Error, Result};
use crate::symtensor::{N_COMPONENTS, TABLE};
use crate::ttm::{TemplateMeta, TensorialTemplate, INDEX_TABLE_VERSION};

pub const META_FILE: &str = "meta.json";
pub const NORMALIZED_FILE: &str = "template_normalized.mrc";

pub fn component_file(i: usize) -> String {
    format!("comp_{i:02}.mrc")
}

#[derive(Serialize, Deserialize)]
struct ContainerMeta {
    #[serde(flatten)]
    meta: TemplateMeta,
    /// Quaternion indices `(i, j, k, l)` of each stored component, in file
    /// order.
    components: Vec<[usize; 4]>,
}

fn canonical_components() -> Vec<[usize; 4]> {
    TABLE.iter().map(|c| c.index).collect()
}

pub fn save_tensorial_template(t: &TensorialTemplate, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, c) in t.comps().iter().enumerate() {
        write_mrc(c, &dir.join(component_file(i)))?;
    }
    write_mrc(t.normalized(), &dir.join(NORMALIZED_FILE))?;
    let doc = ContainerMeta {
        meta: t.meta().clone(),
        components: canonical_components(),
    };
    let mut f = File::create(dir.join(META_FILE))?;
    serde_json::to_writer_pretty(&mut f, &doc)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn load_tensorial_template(dir: &Path) -> Result<TensorialTemplate> {
    if !dir.is_dir() {
        return Err(Error::Integrity(format!("{} is not a directory", dir.display())));
    }
    let meta_path = dir.join(META_FILE);
    if !meta_path.is_file() {
        return Err(Error::Integrity(format!("{} is missing", meta_path.display())));
    }
    let raw: serde_json::Value = serde_json::from_reader(File::open(&meta_path)?)?;
    // check the version before the schema so newer layouts get a clear error
    match raw.get("index_table_version").and_then(|v| v.as_u64()) {
        Some(v) if v == INDEX_TABLE_VERSION as u64 => {}
        Some(v) => {
            return Err(Error::Incompatible(format!(
                "index table version {v}, this build reads version {INDEX_TABLE_VERSION}"
            )))
        }
        None => {
            return Err(Error::Integrity(format!(
                "{} has no index_table_version",
                meta_path.display()
            )))
        }
    }
    let doc: ContainerMeta = serde_json::from_value(raw)?;
    if doc.components != canonical_components() {
        return Err(Error::Incompatible(
            "component index table differs from this build's ordering".into(),
        ));
    }
    let paths: Vec<PathBuf> = (0..N_COMPONENTS).map(|i| dir.join(component_file(i))).collect();
    let missing: Vec<usize> = (0..N_COMPONENTS).filter(|&i| !paths[i].is_file()).collect();
    if !missing.is_empty() {
        return Err(Error::Integrity(format!("missing component files for indices {missing:?}")));
    }
    let norm_path = dir.join(NORMALIZED_FILE);
    if !norm_path.is_file() {
        return Err(Error::Integrity(format!("{NORMALIZED_FILE} is missing")));
    }
    let comps = paths.iter().map(|p| read_mrc(p)).collect::<Result<Vec<_>>>()?;
    let normalized = read_mrc(&norm_path)?;
    TensorialTemplate::from_parts(comps, normalized, doc.meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::sample_so3_uniform;
    use crate::ttm::build_tensorial_template_from_set;
    use crate::volume::{make_soft_mask, Volume};

    fn small_template() -> TensorialTemplate {
        let t = Volume::from_fn([7; 3], |x, y, z| {
            let d2 = (x as f64 - 3.5).powi(2) + 2.0 * (y as f64 - 3.0).powi(2) + (z as f64 - 2.5).powi(2);
            (-d2 / 2.0).exp()
        })
        .unwrap();
        let m = make_soft_mask([7; 3], 1.0, 3.0).unwrap();
        build_tensorial_template_from_set(&t, &m, &sample_so3_uniform(50).unwrap()).unwrap()
    }

    #[test]
    fn save_then_load_is_equal() {
        let dir = tempfile::tempdir().unwrap();
        let t = small_template();
        save_tensorial_template(&t, dir.path()).unwrap();
        assert!(dir.path().join("comp_00.mrc").is_file());
        assert!(dir.path().join("comp_34.mrc").is_file());
        assert_eq!(load_tensorial_template(dir.path()).unwrap(), t);
    }

    #[test]
    fn missing_component_is_named() {
        let dir = tempfile::tempdir().unwrap();
        save_tensorial_template(&small_template(), dir.path()).unwrap();
        std::fs::remove_file(dir.path().join(component_file(17))).unwrap();
        match load_tensorial_template(dir.path()) {
            Err(Error::Integrity(msg)) => assert!(msg.contains("[17]"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn version_bump_is_incompatible() {
        let dir = tempfile::tempdir().unwrap();
        save_tensorial_template(&small_template(), dir.path()).unwrap();
        let p = dir.path().join(META_FILE);
        let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        v["index_table_version"] = serde_json::json!(INDEX_TABLE_VERSION + 1);
        std::fs::write(&p, v.to_string()).unwrap();
        assert!(matches!(load_tensorial_template(dir.path()), Err(Error::Incompatible(_))));
    }
}
