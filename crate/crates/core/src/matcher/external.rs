//! Out-of-process matchers.
//!
//! The command template is split on whitespace (no shell is involved) and
//! the placeholders `{image_a}`, `{image_b}` and `{out}` are substituted in
//! every token. The process must write `{out}` in the correspondence
//! interchange format and exit with status 0. Frame ids in the written
//! header are ignored; the caller's frames are authoritative.

use super::{FrameSource, ImageSource, MatchOutput, MatcherError, MatcherSpec, Params};
use crate::correspondence::{parse_correspondences, InterchangeError};
use crate::correspondence::{CorrespondenceSet, RawReport};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;
use wait_timeout::ChildExt;

pub const PLACEHOLDERS: [&str; 3] = ["{image_a}", "{image_b}", "{out}"];

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalParams {
    pub command: String,
    pub working_dir: Option<PathBuf>,
    pub timeout: Duration,
}

const KEYS: &[&str] = &["command", "working_dir", "timeout"];
const DEFAULT_TIMEOUT_SECS: f64 = 300.0;

impl ExternalParams {
    pub fn from_spec(spec: &MatcherSpec) -> Result<Self, MatcherError> {
        let p = Params::new(spec, KEYS)?;
        let command = p
            .str("command")?
            .ok_or_else(|| MatcherError::InvalidSpec(format!("{}: missing \"command\"", spec.name)))?
            .to_string();
        for ph in PLACEHOLDERS {
            if !command.contains(ph) {
                return Err(MatcherError::InvalidSpec(format!(
                    "{}: command template lacks {ph}",
                    spec.name
                )));
            }
        }
        if command.split_whitespace().next().is_some_and(|t| t.contains('{')) {
            return Err(MatcherError::InvalidSpec(format!(
                "{}: the program itself cannot be a placeholder",
                spec.name
            )));
        }
        let secs = p.f64("timeout", DEFAULT_TIMEOUT_SECS)?;
        if secs <= 0.0 {
            return Err(MatcherError::InvalidSpec(format!("{}: timeout must be > 0", spec.name)));
        }
        Ok(Self {
            command,
            working_dir: p.str("working_dir")?.map(PathBuf::from),
            timeout: Duration::from_secs_f64(secs),
        })
    }

    /// Program and arguments with placeholders substituted.
    pub fn argv(&self, image_a: &Path, image_b: &Path, out: &Path) -> Vec<String> {
        self.command
            .split_whitespace()
            .map(|tok| {
                tok.replace("{image_a}", &image_a.to_string_lossy())
                    .replace("{image_b}", &image_b.to_string_lossy())
                    .replace("{out}", &out.to_string_lossy())
            })
            .collect()
    }
}

/// Scratch directory removed on drop.
struct Scratch(PathBuf);

impl Scratch {
    fn new() -> std::io::Result<Self> {
        static COUNTER: AtomicU64 = AtomicU64::new(0);
        let n = COUNTER.fetch_add(1, Ordering::Relaxed);
        let dir = std::env::temp_dir().join(format!("matchkit-{}-{n}", std::process::id()));
        std::fs::create_dir_all(&dir)?;
        Ok(Self(dir))
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

fn image_on_disk(frame: &FrameSource, scratch: &Scratch, name: &str) -> Result<PathBuf, MatcherError> {
    match &frame.image {
        ImageSource::Path(p) => Ok(std::path::absolute(p).map_err(MatcherError::Spawn)?),
        ImageSource::Memory(img) => {
            let p = scratch.0.join(name);
            img.write_pgm(&p)?;
            Ok(p)
        }
    }
}

fn tail(text: &str, max: usize) -> String {
    let t = text.trim_end();
    match t.char_indices().rev().nth(max) {
        Some((i, _)) => format!("...{}", &t[i..]),
        None => t.to_string(),
    }
}

pub fn match_external(
    frame_a: &FrameSource,
    frame_b: &FrameSource,
    params: &ExternalParams,
    source: &str,
) -> Result<MatchOutput, MatcherError> {
    let size_a = frame_a.size()?;
    let size_b = frame_b.size()?;
    let scratch = Scratch::new().map_err(MatcherError::Spawn)?;
    let path_a = image_on_disk(frame_a, &scratch, "a.pgm")?;
    let path_b = image_on_disk(frame_b, &scratch, "b.pgm")?;
    let out_path = scratch.0.join("out.corrs");
    let stderr_path = scratch.0.join("stderr.txt");
    let argv = params.argv(&path_a, &path_b, &out_path);

    let mut cmd = Command::new(&argv[0]);
    cmd.args(&argv[1..])
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(std::fs::File::create(&stderr_path).map_err(MatcherError::Spawn)?);
    if let Some(dir) = &params.working_dir {
        cmd.current_dir(dir);
    }
    log::debug!("{source}: running {argv:?}");
    let mut child = cmd.spawn().map_err(MatcherError::Spawn)?;
    let status = match child.wait_timeout(params.timeout).map_err(MatcherError::Spawn)? {
        Some(status) => status,
        None => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(MatcherError::Timeout(params.timeout));
        }
    };
    if !status.success() {
        let stderr = std::fs::read_to_string(&stderr_path).unwrap_or_default();
        return Err(MatcherError::ProcessFailure {
            status: status.to_string(),
            stderr: tail(&stderr, 2000),
        });
    }
    let text = std::fs::read_to_string(&out_path).map_err(InterchangeError::Io)?;
    let (parsed, report) = parse_correspondences(&text, Some((size_a, size_b)))?;
    let set = CorrespondenceSet::new(frame_a.frame.clone(), frame_b.frame.clone(), parsed.into_matches())?;
    Ok(MatchOutput {
        set,
        dropped: RawReport {
            duplicates: report.duplicates,
            ..RawReport::default()
        },
        flag: None,
        planted_outliers: None,
    })
}
