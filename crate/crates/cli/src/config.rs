//! Config files: flat `key=value` lines grouped in sections. Keys in
//! `[global]` and in the section named after the subcommand become long
//! flags inserted before the user's own arguments, so flags given on the
//! command line win.

use std::path::PathBuf;

use ini::Ini;

/// Value of `--config` in `args`, if any.
pub fn config_path(args: &[String]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

fn to_flags(section: &ini::Properties) -> Vec<String> {
    let mut out = Vec::new();
    for (key, value) in section.iter() {
        let flag = format!("--{}", key.trim().replace('_', "-"));
        match value.trim() {
            "true" => out.push(flag),
            "false" => {}
            v => {
                out.push(flag);
                out.extend(v.split_whitespace().map(str::to_string));
            }
        }
    }
    out
}

/// `args` with the config file's flags spliced in after the subcommand name.
pub fn inject(args: Vec<String>, text: &str, subcommands: &[&str]) -> Result<Vec<String>, String> {
    let ini = Ini::load_from_str(text).map_err(|e| format!("config file: {e}"))?;
    if !ini.general_section().is_empty() {
        return Err("config file: keys must sit under a [global] or [<command>] section".into());
    }
    let Some(pos) = args.iter().position(|a| subcommands.contains(&a.as_str())) else {
        return Ok(args);
    };
    let mut injected = Vec::new();
    if let Some(s) = ini.section(Some("global")) {
        injected.extend(to_flags(s));
    }
    if let Some(s) = ini.section(Some(args[pos].as_str())) {
        injected.extend(to_flags(s));
    }
    let mut out = args[..=pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}
