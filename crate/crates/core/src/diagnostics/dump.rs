use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::federation::ClientUpdate;
use crate::linalg::{read_matrix, write_matrix};
use crate::model::LoraAdapter;

/// Writes `dir/client_<id>/layer<k>_dA.txt` and `layer<k>_dB.txt`.
pub fn write_update_dump(dir: impl AsRef<Path>, updates: &[ClientUpdate]) -> Result<()> {
    let dir = dir.as_ref();
    for u in updates {
        let cdir = dir.join(format!("client_{}", u.client_id));
        fs::create_dir_all(&cdir).map_err(|e| Error::io(&cdir, e))?;
        for (k, l) in u.layers.iter().enumerate() {
            write_matrix(cdir.join(format!("layer{k}_dA.txt")), &l.a)?;
            write_matrix(cdir.join(format!("layer{k}_dB.txt")), &l.b)?;
        }
    }
    Ok(())
}

fn malformed(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: message.into(),
    }
}

/// Reads a dump written by [`write_update_dump`], ordered by client id.
///
/// An empty directory is an invalid argument; missing or inconsistent files
/// are parse errors.
pub fn read_update_dump(dir: impl AsRef<Path>) -> Result<Vec<ClientUpdate>> {
    let dir = dir.as_ref();
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        let Some(id) = name.strip_prefix("client_") else {
            continue;
        };
        let id: usize = id
            .parse()
            .map_err(|_| malformed(&entry.path(), "client directory must be named client_<id>"))?;
        ids.push(id);
    }
    if ids.is_empty() {
        return Err(Error::invalid(format!("no client_<id> directories in {}", dir.display())));
    }
    ids.sort_unstable();

    let mut updates: Vec<ClientUpdate> = Vec::with_capacity(ids.len());
    for id in ids {
        let cdir = dir.join(format!("client_{id}"));
        let mut layers = Vec::new();
        loop {
            let k = layers.len();
            let a_path = cdir.join(format!("layer{k}_dA.txt"));
            let b_path = cdir.join(format!("layer{k}_dB.txt"));
            if !a_path.exists() && !b_path.exists() {
                break;
            }
            let a = read_matrix(&a_path)?;
            let b = read_matrix(&b_path)?;
            if a.rows() != b.cols() {
                return Err(malformed(
                    &b_path,
                    format!("dB is {:?} but dA is {:?}: ranks disagree", b.shape(), a.shape()),
                ));
            }
            layers.push(LoraAdapter { a, b });
        }
        if layers.is_empty() {
            return Err(malformed(&cdir, "no layer0_dA.txt / layer0_dB.txt"));
        }
        if let Some(first) = updates.first() {
            let same = first.layers.len() == layers.len()
                && first
                    .layers
                    .iter()
                    .zip(&layers)
                    .all(|(x, y)| x.a.shape() == y.a.shape() && x.b.shape() == y.b.shape());
            if !same {
                return Err(malformed(&cdir, format!("layer shapes differ from client {}", first.client_id)));
            }
        }
        updates.push(ClientUpdate { client_id: id, layers });
    }
    Ok(updates)
}
