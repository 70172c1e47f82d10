//! JSON encodings. Complex numbers are `[re, im]`, matrices are row lists.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::{CMat, C64};

pub type RawMatrix = Vec<Vec<[f64; 2]>>;

pub fn to_raw(m: &CMat) -> RawMatrix {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| [m[(r, c)].re, m[(r, c)].im]).collect())
        .collect()
}

pub fn from_raw(raw: &RawMatrix) -> std::result::Result<CMat, String> {
    let rows = raw.len();
    let cols = raw.first().map_or(0, |r| r.len());
    if raw.iter().any(|r| r.len() != cols) {
        return Err("ragged matrix rows".into());
    }
    Ok(CMat::from_fn(rows, cols, |r, c| {
        C64::new(raw[r][c][0], raw[r][c][1])
    }))
}

pub mod cmat {
    use super::*;

    pub fn serialize<S: Serializer>(m: &CMat, s: S) -> std::result::Result<S::Ok, S::Error> {
        to_raw(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<CMat, D::Error> {
        let raw = RawMatrix::deserialize(d)?;
        from_raw(&raw).map_err(serde::de::Error::custom)
    }
}

pub mod cmat_vec {
    use super::*;

    pub fn serialize<S: Serializer>(m: &[CMat], s: S) -> std::result::Result<S::Ok, S::Error> {
        m.iter().map(to_raw).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Vec<CMat>, D::Error> {
        let raw = Vec::<RawMatrix>::deserialize(d)?;
        raw.iter()
            .map(|m| from_raw(m).map_err(serde::de::Error::custom))
            .collect()
    }
}

pub mod cmat_vec_vec {
    use super::*;

    pub fn serialize<S: Serializer>(m: &[Vec<CMat>], s: S) -> std::result::Result<S::Ok, S::Error> {
        m.iter()
            .map(|v| v.iter().map(to_raw).collect::<Vec<_>>())
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Vec<Vec<CMat>>, D::Error> {
        let raw = Vec::<Vec<RawMatrix>>::deserialize(d)?;
        raw.iter()
            .map(|v| {
                v.iter()
                    .map(|m| from_raw(m).map_err(serde::de::Error::custom))
                    .collect()
            })
            .collect()
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: format!("line {} column {}: {}", e.line(), e.column(), e),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
