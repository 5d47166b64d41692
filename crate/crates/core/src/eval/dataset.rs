use std::fs;
use std::path::{Path, PathBuf};

use crate::audio::AudioStream;
use crate::error::{Error, Result};

use super::mix::LabeledClip;

/// The ten command words of the common Speech Commands benchmark.
pub const GSC10_KEYWORDS: [&str; 10] = [
    "yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go",
];

pub fn gsc10_keywords() -> Vec<String> {
    GSC10_KEYWORDS.iter().map(|s| s.to_string()).collect()
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

fn is_wav(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

/// Clip from a Speech Commands style tree, with its folder name.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandClip {
    pub path: PathBuf,
    pub folder: String,
    pub clip: LabeledClip,
}

/// Loads `root/<label>/*.wav`. Folders named in `keywords` get that
/// keyword's index, every other folder is filler, and folders starting
/// with `_` (such as background noise) are skipped. At most
/// `max_per_label` clips are read per folder, in file-name order.
pub fn load_speech_commands(
    root: &Path,
    keywords: &[String],
    max_per_label: Option<usize>,
) -> Result<Vec<CommandClip>> {
    let mut clips = Vec::new();
    for dir in sorted_entries(root)? {
        if !dir.is_dir() {
            continue;
        }
        let folder = dir
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .to_string();
        if folder.starts_with('_') {
            continue;
        }
        let label = keywords.iter().position(|k| *k == folder);
        let wavs: Vec<PathBuf> = sorted_entries(&dir)?
            .into_iter()
            .filter(|p| is_wav(p))
            .collect();
        for path in wavs.into_iter().take(max_per_label.unwrap_or(usize::MAX)) {
            let audio = AudioStream::read_wav(&path)?;
            clips.push(CommandClip {
                path,
                folder: folder.clone(),
                clip: LabeledClip { audio, label },
            });
        }
    }
    if clips.is_empty() {
        return Err(Error::Empty(format!("no clips under {}", root.display())));
    }
    Ok(clips)
}

/// Per-frame integer labels: whitespace separated.
pub fn read_phone_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| Error::Labels(format!("{}: bad phone label {t:?}", path.display())))
        })
        .collect()
}

pub fn write_phone_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let text: Vec<String> = labels.iter().map(usize::to_string).collect();
    fs::write(path, text.join(" ") + "\n").map_err(|e| Error::io(path, e))
}

/// Every `*.wav` in `dir` paired with its `.phones` sidecar.
pub fn load_phone_corpus(dir: &Path) -> Result<Vec<(AudioStream, Vec<usize>)>> {
    let mut out = Vec::new();
    for path in sorted_entries(dir)? {
        if !is_wav(&path) {
            continue;
        }
        let sidecar = path.with_extension("phones");
        if !sidecar.exists() {
            return Err(Error::Labels(format!("missing {}", sidecar.display())));
        }
        out.push((AudioStream::read_wav(&path)?, read_phone_labels(&sidecar)?));
    }
    if out.is_empty() {
        return Err(Error::Empty(format!("no wav files in {}", dir.display())));
    }
    Ok(out)
}
