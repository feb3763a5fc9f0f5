//! `key=value` config files, run manifests and atomic output writes.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

/// Parses a flat config file: one `key=value` per line, `#` starts a comment
/// line, blank lines are ignored. Keys are long flag names without dashes.
pub fn parse_config(text: &str) -> std::result::Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key=value, got `{line}`", n + 1))?;
        let k = k.trim();
        if k.is_empty() || k == "config" || k.starts_with('-') {
            return Err(format!("line {}: invalid key `{k}`", n + 1));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Replaces every `--config FILE` after the subcommand by the file's entries
/// as `--key=value` flags placed right after the subcommand, so that flags
/// given on the command line win.
pub fn expand_config_args(args: Vec<OsString>) -> std::result::Result<Vec<OsString>, String> {
    let Some(sub) = args.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')).map(|p| p + 1) else {
        return Ok(args);
    };
    let mut head: Vec<OsString> = args[..=sub].to_vec();
    let mut injected = Vec::new();
    let mut rest = Vec::new();
    let mut it = args[sub + 1..].iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        let path = if s == "--config" {
            it.next().ok_or("--config needs a file path")?.clone()
        } else if let Some(p) = s.strip_prefix("--config=") {
            OsString::from(p)
        } else {
            rest.push(a.clone());
            continue;
        };
        let text = fs::read_to_string(&path)
            .map_err(|e| format!("cannot read config file {}: {e}", Path::new(&path).display()))?;
        for (k, v) in parse_config(&text)? {
            injected.push(OsString::from(format!("--{k}={v}")));
        }
    }
    head.extend(injected);
    head.extend(rest);
    Ok(head)
}

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Record of one command run. The config lines are a valid `--config` file
/// for the same command.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    pub config: Vec<(String, String)>,
    pub seed: u64,
    pub version: String,
    pub started: u64,
    pub finished: u64,
    pub outputs: Vec<PathBuf>,
    pub status: String,
}

impl RunManifest {
    pub fn start(command: &str, config: Vec<(String, String)>, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started: unix_now(),
            finished: 0,
            outputs: Vec::new(),
            status: "running".into(),
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::from("# patchbatch run manifest\n");
        s += &format!("# command: {}\n# version: {}\n# seed: {}\n", self.command, self.version, self.seed);
        s += &format!("# started: {}\n# finished: {}\n# status: {}\n", self.started, self.finished, self.status);
        for o in &self.outputs {
            s += &format!("# output: {}\n", o.display());
        }
        for (k, v) in &self.config {
            s += &format!("{k}={v}\n");
        }
        s
    }

    pub fn finish(&mut self, status: &str, path: &Path) -> std::io::Result<()> {
        self.finished = unix_now();
        self.status = status.to_string();
        write_atomic(path, self.render().as_bytes())
    }
}
