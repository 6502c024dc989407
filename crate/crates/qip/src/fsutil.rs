use std::io::Write;
use std::path::Path;

use crate::error::{QipError, Result};

/// Writes through a temporary file in the destination directory, then
/// renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| QipError::io(dir, e))?;
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(std::fs::Permissions::from_mode(0o644));
    }
    let mut tmp = builder.tempfile_in(dir).map_err(|e| QipError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| QipError::io(path, e))?;
    tmp.persist(path).map_err(|e| QipError::io(path, e.error))?;
    Ok(())
}
