//! `key = value` config files. Every key is a long flag name of the chosen
//! subcommand; the file's entries are inserted in front of the command-line
//! flags so that explicit flags win.

use std::path::Path;

use genre_core::trainer::dataset::parse_key_values;

use crate::error::Result;

/// Finds `--config PATH` / `--config=PATH` anywhere in `args`.
pub fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

/// Converts config entries to flags. `true` becomes a bare switch, `false`
/// drops the switch.
pub fn config_flags(text: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (k, v) in parse_key_values(text)? {
        match v.as_str() {
            "true" => out.push(format!("--{k}")),
            "false" => {}
            _ => {
                out.push(format!("--{k}"));
                out.push(v);
            }
        }
    }
    Ok(out)
}

/// Returns `args` with the config file's flags spliced in right after the
/// subcommand name.
pub fn merge_config(args: Vec<String>, subcommands: &[&str]) -> Result<Vec<String>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(Path::new(&path))?;
    let flags = config_flags(&text)?;
    let pos = args.iter().position(|a| subcommands.contains(&a.as_str()));
    let Some(pos) = pos else {
        return Ok(args);
    };
    let mut merged = args[..=pos].to_vec();
    merged.extend(flags);
    merged.extend_from_slice(&args[pos + 1..]);
    Ok(merged)
}

/// Serializes flag/value pairs in the same format.
pub fn to_config_text(entries: &[(String, String)]) -> String {
    entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn finds_config_in_either_form() {
        assert_eq!(config_path(&s(&["genre", "train", "--config", "a.cfg"])), Some("a.cfg".into()));
        assert_eq!(config_path(&s(&["genre", "--config=b.cfg", "train"])), Some("b.cfg".into()));
        assert_eq!(config_path(&s(&["genre", "train"])), None);
    }

    #[test]
    fn booleans_become_switches() {
        let flags = config_flags("epochs = 3\nno-ear = true\nno-sda = false\n# c\n").unwrap();
        assert_eq!(flags, s(&["--epochs", "3", "--no-ear"]));
    }

    #[test]
    fn file_flags_precede_command_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.cfg");
        std::fs::write(&p, "epochs = 3\n").unwrap();
        let args = s(&["genre", "train", "--config", p.to_str().unwrap(), "--epochs", "5"]);
        let merged = merge_config(args, &["train"]).unwrap();
        assert_eq!(&merged[..4], &s(&["genre", "train", "--epochs", "3"])[..]);
        assert_eq!(merged.last().unwrap(), "5");
    }
}
