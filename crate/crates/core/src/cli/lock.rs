use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::CliError;

pub const LOCK_FILE: &str = ".cerhv.lock";

/// Exclusive claim on an output directory, released on drop. A lock left by
/// a process that no longer exists is taken over.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

fn alive(pid: u32) -> bool {
    Path::new(&format!("/proc/{pid}")).exists()
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
        let path = dir.join(LOCK_FILE);
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    let _ = writeln!(f, "{}", std::process::id());
                    return Ok(Self { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let holder = std::fs::read_to_string(&path).ok().and_then(|s| s.trim().parse::<u32>().ok());
                    match holder {
                        Some(pid) if pid != std::process::id() && alive(pid) => {
                            return Err(CliError::Runtime(format!(
                                "{} is in use by process {pid}",
                                dir.display()
                            )));
                        }
                        _ => {
                            let _ = std::fs::remove_file(&path);
                        }
                    }
                }
                Err(e) => return Err(CliError::Runtime(format!("{}: {e}", path.display()))),
            }
        }
        Err(CliError::Runtime(format!("could not lock {}", dir.display())))
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_claim_fails_until_release() {
        let tmp = tempfile::tempdir().unwrap();
        let a = DirLock::acquire(tmp.path()).unwrap();
        std::fs::write(tmp.path().join(LOCK_FILE), "1\n").unwrap();
        assert!(DirLock::acquire(tmp.path()).is_err());
        drop(a);
        assert!(!tmp.path().join(LOCK_FILE).exists());
        std::fs::write(tmp.path().join(LOCK_FILE), "4294967295\n").unwrap();
        let _stale = DirLock::acquire(tmp.path()).unwrap();
    }
}
