//! Flat `key = value` config files merged into the argument list.
//!
//! Grammar: one `key = value` pair per line; `#` starts a comment; blank
//! lines are ignored. Keys are long option names without the leading dashes.
//! `true` enables a flag, `false` leaves it off. Pairs are inserted directly
//! after the subcommand name, so options given on the command line override
//! them.

use std::path::Path;

pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || k.starts_with('-') || k.contains(char::is_whitespace) {
            return Err(format!("line {}: invalid key {k:?}", n + 1));
        }
        pairs.push((k.to_string(), v.to_string()));
    }
    Ok(pairs)
}

fn config_path(args: &[String]) -> Option<String> {
    args.iter().enumerate().find_map(|(i, a)| {
        if a == "--config" {
            args.get(i + 1).cloned()
        } else {
            a.strip_prefix("--config=").map(str::to_string)
        }
    })
}

/// Expand a `--config FILE` argument into option tokens placed after the
/// subcommand.
pub fn expand_args(args: Vec<String>, subcommands: &[&str]) -> Result<Vec<String>, String> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(Path::new(&path)).map_err(|e| format!("{path}: {e}"))?;
    let pairs = parse_config(&text).map_err(|e| format!("{path}: {e}"))?;
    let mut tokens = Vec::new();
    for (k, v) in pairs {
        match v.as_str() {
            "true" => tokens.push(format!("--{k}")),
            "false" => {}
            _ => {
                tokens.push(format!("--{k}"));
                tokens.push(v);
            }
        }
    }
    let at = args
        .iter()
        .position(|a| subcommands.contains(&a.as_str()))
        .ok_or("a subcommand is required")?;
    let mut out = args[..=at].to_vec();
    out.extend(tokens);
    out.extend_from_slice(&args[at + 1..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_and_comments() {
        let p = parse_config("# run\nepochs = 3\n\nforbid-dustbin = true # flag\n").unwrap();
        assert_eq!(
            p,
            vec![("epochs".into(), "3".into()), ("forbid-dustbin".into(), "true".into())]
        );
        assert!(parse_config("epochs 3").is_err());
        assert!(parse_config("--epochs = 3").is_err());
    }

    #[test]
    fn config_tokens_precede_command_line_options() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.conf");
        std::fs::write(&cfg, "epochs = 3\nshuffle = false\nforbid-dustbin = true\n").unwrap();
        let args: Vec<String> = ["dustbin", "--config", cfg.to_str().unwrap(), "train", "--epochs", "5"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let out = expand_args(args, &["train"]).unwrap();
        let tail: Vec<&str> = out[3..].iter().map(String::as_str).collect();
        assert_eq!(tail, ["train", "--epochs", "3", "--forbid-dustbin", "--epochs", "5"]);
    }
}
