//! Output files: atomic writes, CSV number formatting and parameter blobs.
//!
//! A parameter blob is a 16-byte header (`UISTAPRM`, format version as
//! little-endian `u32`, dimension `N` as little-endian `u32`) followed by the
//! `N²` entries in row-major order as little-endian `f64`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::{NetConfig, NetParams};

pub const PARAM_MAGIC: &[u8; 8] = b"UISTAPRM";
pub const PARAM_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Scientific notation with 17 significant digits, enough to round-trip.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Pretty-printed JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn encode_matrix(m: &Matrix) -> Vec<u8> {
    assert!(m.is_square(), "parameter blobs hold square matrices");
    let n = u32::try_from(m.rows()).expect("dimension fits in u32");
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.as_slice().len());
    out.extend_from_slice(PARAM_MAGIC);
    out.extend_from_slice(&PARAM_VERSION.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<Matrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    if &bytes[..8] != PARAM_MAGIC {
        return Err(Error::Format(format!("{}: not a parameter blob", path.display())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != PARAM_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported parameter blob version {version}",
            path.display()
        )));
    }
    let n = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let expected = HEADER_LEN + 8 * n * n;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Matrix::new(n, n, data)
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    write_atomic(path, &encode_matrix(m))
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes, path)
}

/// Files written by [`save_network`].
pub struct NetworkFiles {
    pub phi: PathBuf,
    pub psi: Option<PathBuf>,
    pub config: PathBuf,
}

/// Stores `phi.bin`, `psi.bin` (class H2 only) and `net.json` in `dir`.
pub fn save_network(dir: &Path, params: &NetParams, cfg: &NetConfig) -> Result<NetworkFiles> {
    let phi = dir.join("phi.bin");
    write_matrix(&phi, &params.phi)?;
    let psi = match &params.psi {
        Some(m) => {
            let p = dir.join("psi.bin");
            write_matrix(&p, m)?;
            Some(p)
        }
        None => None,
    };
    let config = dir.join("net.json");
    write_json(&config, cfg)?;
    Ok(NetworkFiles { phi, psi, config })
}

pub fn load_network(dir: &Path) -> Result<(NetParams, NetConfig)> {
    let config_path = dir.join("net.json");
    let text = fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
    let cfg: NetConfig =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", config_path.display())))?;
    let phi = read_matrix(&dir.join("phi.bin"))?;
    let params = match cfg.class {
        crate::network::HypothesisClass::H1 => NetParams::h1(phi),
        crate::network::HypothesisClass::H2 => NetParams::h2(phi, read_matrix(&dir.join("psi.bin"))?),
    };
    Ok((params, cfg))
}
