use std::fs;
use std::io;
use std::path::{Path, PathBuf};

/// Output directory built next to its final location and renamed into place,
/// so a failed run never leaves a partial directory behind.
pub struct Staging {
    dir: PathBuf,
    target: PathBuf,
    done: bool,
}

impl Staging {
    /// Fails if `target` exists and is not an empty directory.
    pub fn new(target: &Path) -> Result<Self, String> {
        if target.exists() && !is_empty_dir(target) {
            return Err(format!("{} already exists and is not an empty directory", target.display()));
        }
        let name = target
            .file_name()
            .ok_or_else(|| format!("{} has no final path component", target.display()))?
            .to_string_lossy()
            .into_owned();
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(|e| format!("{}: {e}", parent.display()))?;
        let dir = parent.join(format!(".{name}.staging-{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        }
        fs::create_dir(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        Ok(Staging {
            dir,
            target: target.to_path_buf(),
            done: false,
        })
    }

    pub fn path(&self, relative: &str) -> PathBuf {
        self.dir.join(relative)
    }

    pub fn write(&self, relative: &str, contents: impl AsRef<[u8]>) -> io::Result<()> {
        let path = self.path(relative);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, contents)
    }

    /// Every relative path in `artifacts` must exist before the rename.
    pub fn finalize(mut self, artifacts: &[String]) -> Result<PathBuf, String> {
        if let Some(missing) = artifacts.iter().find(|a| !self.dir.join(a).exists()) {
            return Err(format!("artifact {missing} was not written"));
        }
        if self.target.exists() {
            fs::remove_dir(&self.target).map_err(|e| format!("{}: {e}", self.target.display()))?;
        }
        fs::rename(&self.dir, &self.target).map_err(|e| format!("{}: {e}", self.target.display()))?;
        self.done = true;
        Ok(self.target.clone())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.done {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

fn is_empty_dir(path: &Path) -> bool {
    fs::read_dir(path).map(|mut d| d.next().is_none()).unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finalize_and_abandon() {
        let root = tempfile::tempdir().unwrap();
        let target = root.path().join("run");
        let s = Staging::new(&target).unwrap();
        s.write("a/b.txt", "x").unwrap();
        assert!(!target.exists());
        s.finalize(&["a/b.txt".to_string()]).unwrap();
        assert_eq!(fs::read_to_string(target.join("a/b.txt")).unwrap(), "x");
        assert!(Staging::new(&target).is_err());

        let other = root.path().join("other");
        {
            let s = Staging::new(&other).unwrap();
            s.write("f", "y").unwrap();
        }
        assert!(!other.exists());
        assert_eq!(fs::read_dir(root.path()).unwrap().count(), 1);

        let s = Staging::new(&other).unwrap();
        assert!(s.finalize(&["missing".to_string()]).is_err());
        assert_eq!(fs::read_dir(root.path()).unwrap().count(), 1);
    }
}
