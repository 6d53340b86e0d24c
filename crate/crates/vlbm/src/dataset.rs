//! `.traj.jsonl` files: a header object followed by one trajectory per line.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use vlbm_core::env::{Dataset, Trajectory};

use crate::error::{Error, Result};

pub const EXTENSION: &str = "traj.jsonl";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    env: String,
    policy: String,
    seed: u64,
}

/// Serializes a dataset to the JSON-lines text format.
pub fn to_jsonl(data: &Dataset) -> Result<String> {
    let header = Header {
        env: data.env.clone(),
        policy: data.policy.clone(),
        seed: data.seed,
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for t in &data.trajectories {
        t.validate()?;
        let line = serde_json::to_string(t)
            .map_err(|e| Error::Usage(format!("trajectory cannot be written: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

/// Parses the JSON-lines text format. `path` only labels errors.
pub fn from_jsonl(text: &str, path: &Path) -> Result<Dataset> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let header: Header = match lines.next() {
        Some((n, l)) => {
            serde_json::from_str(l).map_err(|e| parse_err(n, format!("bad header: {e}")))?
        }
        None => return Err(parse_err(1, "missing header line".into())),
    };
    let mut trajectories = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    for (n, l) in lines {
        if l.trim().is_empty() {
            continue;
        }
        let t: Trajectory =
            serde_json::from_str(l).map_err(|e| parse_err(n, format!("bad trajectory: {e}")))?;
        t.validate().map_err(|e| parse_err(n, e.to_string()))?;
        let d = (t.state_dim(), t.action_dim());
        match dims {
            None => dims = Some(d),
            Some(first) if first != d => {
                return Err(parse_err(
                    n,
                    format!("widths {d:?} differ from the first trajectory's {first:?}"),
                ));
            }
            _ => {}
        }
        trajectories.push(t);
    }
    Ok(Dataset {
        env: header.env,
        policy: header.policy,
        seed: header.seed,
        trajectories,
    })
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    write_text(path, &to_jsonl(data)?)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_jsonl(&text, path)
}

/// Writes `text`, creating parent directories as needed.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use vlbm_core::env::{behavior_policy, collect_dataset, EnvSpec};

    #[test]
    fn round_trip_is_lossless() {
        let env = EnvSpec::cliff_mass();
        let data = collect_dataset(&env, &behavior_policy(&env), 5, 3).unwrap();
        let back = from_jsonl(&to_jsonl(&data).unwrap(), Path::new("x")).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn header_only() {
        let data = Dataset {
            env: "LineMass".into(),
            policy: "p".into(),
            seed: 9,
            trajectories: vec![],
        };
        let text = to_jsonl(&data).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(from_jsonl(&text, Path::new("x")).unwrap(), data);
    }

    #[test]
    fn truncated_line_is_named() {
        let env = EnvSpec::line_mass();
        let data = collect_dataset(&env, &behavior_policy(&env), 3, 0).unwrap();
        let text = to_jsonl(&data).unwrap();
        let cut = &text[..text.len() - 40];
        match from_jsonl(cut, Path::new("d.traj.jsonl")).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            e => panic!("{e}"),
        }
        match from_jsonl("", Path::new("d")).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn inconsistent_trajectory_rejected() {
        let text = "{\"env\":\"LineMass\",\"policy\":\"p\",\"seed\":0}\n\
                    {\"states\":[[0,0]],\"actions\":[[1]],\"rewards\":[],\"terminated\":false}\n";
        match from_jsonl(text, Path::new("d")).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
    }
}
