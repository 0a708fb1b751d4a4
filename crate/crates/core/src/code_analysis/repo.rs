//! Repository snapshots and how they are obtained.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Component, Path, PathBuf};

use walkdir::WalkDir;

use crate::error::{Error, Result};
use crate::model::PaperId;

/// Files larger than this are left out of a snapshot.
pub const MAX_FILE_BYTES: u64 = 512 * 1024;

/// In-memory view of one repository: text files keyed by relative path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepoSnapshot {
    pub paper_id: PaperId,
    pub files: BTreeMap<String, String>,
    /// Dependency manifests and readmes, a subset of `files`.
    pub config_files: BTreeSet<String>,
}

/// Rejects absolute paths and traversal. Backslashes are normalized.
pub fn check_relative(path: &str) -> Result<String> {
    let norm = path.trim().replace('\\', "/");
    let norm = norm.trim_start_matches("./").to_string();
    if norm.is_empty() {
        return Err(Error::InvalidInput("empty repository path".into()));
    }
    let p = Path::new(&norm);
    let ok = p
        .components()
        .all(|c| matches!(c, Component::Normal(_)));
    if !ok {
        return Err(Error::InvalidInput(format!(
            "repository path '{path}' must be relative without '..'"
        )));
    }
    Ok(norm)
}

/// Whether a file name looks like a dependency manifest or readme.
pub fn is_config_file(path: &str) -> bool {
    let name = path.rsplit('/').next().unwrap_or(path).to_ascii_lowercase();
    const EXACT: [&str; 14] = [
        "setup.py",
        "setup.cfg",
        "pyproject.toml",
        "environment.yml",
        "environment.yaml",
        "pipfile",
        "package.json",
        "cargo.toml",
        "go.mod",
        "pom.xml",
        "build.gradle",
        "dockerfile",
        "docker-compose.yml",
        "conda.yaml",
    ];
    EXACT.contains(&name.as_str())
        || (name.starts_with("requirements") && name.ends_with(".txt"))
        || name.starts_with("readme")
}

impl RepoSnapshot {
    pub fn new(paper_id: PaperId, files: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (path, text) in files {
            let rel = check_relative(&path)?;
            if map.insert(rel.clone(), text).is_some() {
                return Err(Error::InvalidInput(format!("duplicate repository path '{rel}'")));
            }
        }
        let config_files = map.keys().filter(|p| is_config_file(p)).cloned().collect();
        Ok(Self {
            paper_id,
            files: map,
            config_files,
        })
    }

    /// Reads every UTF-8 text file under `dir`, skipping hidden entries and
    /// oversized files.
    pub fn from_dir(paper_id: PaperId, dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::NotFound(format!("repository directory {}", dir.display())));
        }
        let mut files = Vec::new();
        let walker = WalkDir::new(dir)
            .sort_by_file_name()
            .into_iter()
            .filter_entry(|e| e.depth() == 0 || !e.file_name().to_string_lossy().starts_with('.'));
        for entry in walker {
            let entry = entry.map_err(|e| Error::InvalidInput(format!("walking {}: {e}", dir.display())))?;
            if !entry.file_type().is_file() {
                continue;
            }
            if entry.metadata().map(|m| m.len() > MAX_FILE_BYTES).unwrap_or(true) {
                continue;
            }
            let Ok(text) = std::fs::read_to_string(entry.path()) else {
                continue; // binary
            };
            let rel = entry
                .path()
                .strip_prefix(dir)
                .expect("walkdir yields children of its root")
                .to_string_lossy()
                .replace('\\', "/");
            files.push((rel, text));
        }
        Self::new(paper_id, files)
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn read(&self, path: &str) -> Option<&str> {
        let rel = check_relative(path).ok()?;
        self.files.get(&rel).map(String::as_str)
    }
}

/// Turns a repository URL into a snapshot.
pub trait RepoFetcher: Send + Sync {
    fn fetch(&self, url: &str, paper_id: &PaperId) -> Result<RepoSnapshot>;
}

/// Resolves a URL to `<root>/<repo name>`, the last path segment without a
/// `.git` suffix. Used for offline runs and tests.
#[derive(Debug, Clone)]
pub struct DirectoryFetcher {
    root: PathBuf,
}

impl DirectoryFetcher {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
}

pub fn repo_name(url: &str) -> Option<&str> {
    let name = url.trim_end_matches('/').rsplit('/').next()?;
    let name = name.strip_suffix(".git").unwrap_or(name);
    (!name.is_empty() && name != "." && name != "..").then_some(name)
}

impl RepoFetcher for DirectoryFetcher {
    fn fetch(&self, url: &str, paper_id: &PaperId) -> Result<RepoSnapshot> {
        let name = repo_name(url)
            .ok_or_else(|| Error::InvalidInput(format!("cannot derive a repository name from '{url}'")))?;
        RepoSnapshot::from_dir(paper_id.clone(), &self.root.join(name))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn traversal_and_absolute_paths_rejected() {
        assert!(check_relative("../etc/passwd").is_err());
        assert!(check_relative("/abs").is_err());
        assert!(check_relative("a/../../b").is_err());
        assert_eq!(check_relative("./src\\main.py").unwrap(), "src/main.py");
    }

    #[test]
    fn config_files_detected() {
        let r = RepoSnapshot::new(
            PaperId::parse("p1").unwrap(),
            [
                ("requirements-dev.txt".to_string(), "torch".to_string()),
                ("docs/README.md".to_string(), "hi".to_string()),
                ("src/model.py".to_string(), "x".to_string()),
            ],
        )
        .unwrap();
        assert_eq!(r.config_files.len(), 2);
        assert!(!r.config_files.contains("src/model.py"));
    }

    #[test]
    fn from_dir_skips_hidden_and_binary() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("repo");
        std::fs::create_dir_all(root.join(".git")).unwrap();
        std::fs::create_dir_all(root.join("src")).unwrap();
        std::fs::write(root.join(".git/HEAD"), "ref").unwrap();
        std::fs::write(root.join("src/a.py"), "print(1)").unwrap();
        std::fs::write(root.join("blob.bin"), [0xff, 0xfe, 0x00]).unwrap();
        let fetcher = DirectoryFetcher::new(dir.path());
        let r = fetcher
            .fetch("https://github.com/x/repo.git", &PaperId::parse("p1").unwrap())
            .unwrap();
        assert_eq!(r.files.keys().collect::<Vec<_>>(), vec!["src/a.py"]);
        assert!(fetcher.fetch("https://github.com/x/none", &PaperId::parse("p1").unwrap()).is_err());
    }
}
