//! Config files: flat `key = value` lines grouped under `[section]` headers.
//!
//! `[global]` applies to every subcommand, `[<subcommand>]` to that one.
//! Keys are long flag names without the dashes. Values from the file are
//! spliced into the argument list before clap parses it, and skipped when
//! the same flag is also given on the command line, so flags always win.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::Path;

use clap::{ArgAction, Command};

use crate::CliError;

pub type Sections = BTreeMap<String, Vec<(String, String)>>;

pub fn parse(text: &str) -> Result<Sections, String> {
    let mut sections = Sections::new();
    let mut current: Option<String> = None;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim().to_string();
            sections.entry(name.clone()).or_default();
            current = Some(name);
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(format!("line {}: expected `key = value`", n + 1));
        };
        let section = current
            .as_ref()
            .ok_or_else(|| format!("line {}: key outside any [section]", n + 1))?;
        sections
            .get_mut(section)
            .expect("section created on header")
            .push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(sections)
}

fn user_gave(args: &[OsString], long: &str, short: Option<char>) -> bool {
    let long_flag = format!("--{long}");
    let long_eq = format!("--{long}=");
    let short_flag = short.map(|c| format!("-{c}"));
    args.iter().filter_map(|a| a.to_str()).any(|a| {
        a == long_flag || a.starts_with(&long_eq) || short_flag.as_deref().is_some_and(|s| a.starts_with(s))
    })
}

/// Index of the subcommand token in `args`.
fn subcommand_position(args: &[OsString], name: &str) -> Option<usize> {
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_str()?;
        if a == name {
            return Some(i);
        }
        if matches!(a, "--config" | "--jobs" | "-j") {
            i += 1;
        }
        i += 1;
    }
    None
}

/// Splices the matching config sections into `args` right after the
/// subcommand token.
pub fn expand(mut cmd: Command, args: Vec<OsString>, path: &Path, subcommand: &str) -> Result<Vec<OsString>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let sections = parse(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    if let Some(unknown) = sections
        .keys()
        .find(|s| *s != "global" && cmd.find_subcommand(s).is_none())
    {
        return Err(CliError::Usage(format!("config: unknown section [{unknown}]")));
    }
    cmd.build();
    let sub = cmd.find_subcommand(subcommand).expect("parsed subcommand exists");
    let mut injected = Vec::new();
    for section in ["global", subcommand] {
        for (key, value) in sections.get(section).into_iter().flatten() {
            let arg = sub
                .get_arguments()
                .find(|a| a.get_long() == Some(key.as_str()) && !matches!(key.as_str(), "config" | "help"))
                .ok_or_else(|| CliError::Usage(format!("config: unknown key `{key}` in [{section}]")))?;
            if user_gave(&args, key, arg.get_short()) {
                continue;
            }
            match arg.get_action() {
                ArgAction::SetTrue => match value.as_str() {
                    "true" | "yes" | "1" => injected.push(OsString::from(format!("--{key}"))),
                    "false" | "no" | "0" => {}
                    other => return Err(CliError::Usage(format!("config: `{key}` expects true/false, got {other:?}"))),
                },
                ArgAction::Append => {
                    for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                        injected.push(OsString::from(format!("--{key}={item}")));
                    }
                }
                _ => injected.push(OsString::from(format!("--{key}={value}"))),
            }
        }
    }
    let at = subcommand_position(&args, subcommand).expect("subcommand token present") + 1;
    let mut out = args;
    out.splice(at..at, injected);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_comments() {
        let s = parse("# top\n[global]\njobs = 2\n\n[encode]\nk=64\n; note\nmode = inter\n").unwrap();
        assert_eq!(s["global"], vec![("jobs".into(), "2".into())]);
        assert_eq!(s["encode"].len(), 2);
        assert!(parse("k = 1\n").is_err());
        assert!(parse("[encode]\nnonsense\n").is_err());
    }

    #[test]
    fn user_flags_are_detected() {
        let args: Vec<OsString> = ["featcodec", "encode", "--k=8", "-j", "2"].iter().map(OsString::from).collect();
        assert!(user_gave(&args, "k", None));
        assert!(user_gave(&args, "jobs", Some('j')));
        assert!(!user_gave(&args, "lambda", None));
        assert_eq!(subcommand_position(&args, "encode"), Some(1));
    }
}
