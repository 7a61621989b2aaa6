//! Text configuration files: `key = value` lines, `#` comments, and
//! `include <relative-path>` directives expanded depth-first so later lines
//! override anything they repeat.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

/// One resolved assignment and where it came from.
#[derive(Debug, Clone)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub file: PathBuf,
    pub line: usize,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_owned).collect())
}

fn resolve_into(path: &Path, stack: &mut Vec<PathBuf>, out: &mut Vec<Entry>) -> Result<()> {
    let canon = fs::canonicalize(path).map_err(|e| Error::io(path, e))?;
    if stack.contains(&canon) {
        return Err(Error::Config(format!(
            "include cycle: {} is already being processed",
            path.display()
        )));
    }
    stack.push(canon);
    let parent = path.parent().map(Path::to_path_buf).unwrap_or_default();
    for (i, raw) in read_lines(path)?.iter().enumerate() {
        let line = i + 1;
        let text = raw.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        if let Some(rest) = text.strip_prefix("include") {
            if rest.starts_with(char::is_whitespace) {
                let target = rest.trim();
                if target.is_empty() {
                    return Err(Error::Config(format!(
                        "{}:{line}: include needs a path",
                        path.display()
                    )));
                }
                resolve_into(&parent.join(target), stack, out)?;
                continue;
            }
        }
        let Some((key, value)) = text.split_once('=') else {
            return Err(Error::Config(format!(
                "{}:{line}: expected `key = value`, got {text:?}",
                path.display()
            )));
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(Error::Config(format!(
                "{}:{line}: empty {} in {text:?}",
                path.display(),
                if key.is_empty() { "key" } else { "value" }
            )));
        }
        out.push(Entry {
            key: key.to_owned(),
            value: value.to_owned(),
            file: path.to_path_buf(),
            line,
        });
    }
    stack.pop();
    Ok(())
}

/// Flatten a file and everything it includes into assignment order.
pub fn resolve_file(path: &Path) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    resolve_into(path, &mut Vec::new(), &mut out)?;
    Ok(out)
}

fn parse<T: std::str::FromStr>(e: &Entry) -> Result<T> {
    e.value.parse().map_err(|_| {
        Error::Config(format!(
            "{}:{}: invalid value {:?} for key {}",
            e.file.display(),
            e.line,
            e.value,
            e.key
        ))
    })
}

fn parse_bool(e: &Entry) -> Result<bool> {
    match e.value.as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "{}:{}: invalid value {:?} for key {} (expected true or false)",
            e.file.display(),
            e.line,
            e.value,
            e.key
        ))),
    }
}

/// Turn resolved assignments into a training configuration. Every key except
/// `steps` has a default; `steps` must be set explicitly because no step
/// budget is universally sensible.
pub fn train_config_from_entries(entries: &[Entry]) -> Result<TrainConfig> {
    let mut config = TrainConfig { steps: 0, ..TrainConfig::default() };
    let mut saw_steps = false;
    for e in entries {
        match e.key.as_str() {
            "n_harmonics" => config.model.n_harmonics = parse(e)?,
            "n_noise" => config.model.n_noise = parse(e)?,
            "mlp_units" => config.model.mlp_units = parse(e)?,
            "mlp_layers" => config.model.mlp_layers = parse(e)?,
            "gru_units" => config.model.gru_units = parse(e)?,
            "use_z" => config.model.use_z = parse_bool(e)?,
            "z_dim" => config.model.z_dim = parse(e)?,
            "z_gru_units" => config.model.z_gru_units = parse(e)?,
            "mfcc_count" => config.model.mfcc_count = parse(e)?,
            "batch_size" => config.batch_size = parse(e)?,
            "steps" => {
                config.steps = parse(e)?;
                saw_steps = true;
            }
            "learning_rate" => config.learning_rate = parse(e)?,
            "lr_decay" => config.lr_decay = parse(e)?,
            "clip_norm" => config.clip_norm = parse(e)?,
            "example_seconds" => config.example_seconds = parse(e)?,
            "seed" => config.seed = parse(e)?,
            _ => {
                return Err(Error::Config(format!(
                    "{}:{}: unknown key {:?}",
                    e.file.display(),
                    e.line,
                    e.key
                )))
            }
        }
    }
    if !saw_steps {
        return Err(Error::Config("missing required key `steps`".into()));
    }
    config.validate()?;
    Ok(config)
}

/// Read, resolve, and type-check a configuration file.
pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    train_config_from_entries(&resolve_file(path)?)
}

/// Render a configuration back to text, every key explicit, in a fixed
/// order, so resolved settings can be stored next to a run's outputs.
pub fn echo_config(config: &TrainConfig) -> String {
    let m: &ModelConfig = &config.model;
    let mut s = String::new();
    let _ = writeln!(s, "n_harmonics = {}", m.n_harmonics);
    let _ = writeln!(s, "n_noise = {}", m.n_noise);
    let _ = writeln!(s, "mlp_units = {}", m.mlp_units);
    let _ = writeln!(s, "mlp_layers = {}", m.mlp_layers);
    let _ = writeln!(s, "gru_units = {}", m.gru_units);
    let _ = writeln!(s, "use_z = {}", m.use_z);
    let _ = writeln!(s, "z_dim = {}", m.z_dim);
    let _ = writeln!(s, "z_gru_units = {}", m.z_gru_units);
    let _ = writeln!(s, "mfcc_count = {}", m.mfcc_count);
    let _ = writeln!(s, "batch_size = {}", config.batch_size);
    let _ = writeln!(s, "steps = {}", config.steps);
    let _ = writeln!(s, "learning_rate = {}", config.learning_rate);
    let _ = writeln!(s, "lr_decay = {}", config.lr_decay);
    let _ = writeln!(s, "clip_norm = {}", config.clip_norm);
    let _ = writeln!(s, "example_seconds = {}", config.example_seconds);
    let _ = writeln!(s, "seed = {}", config.seed);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let path = dir.join(name);
        fs::write(&path, text).unwrap();
        path
    }

    #[test]
    fn plain_file_parses_with_comments_and_spacing() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            dir.path(),
            "a.conf",
            "# a run\nsteps = 5\n\nn_harmonics=20   # inline note\n  lr_decay =  0.5\n",
        );
        let c = load_train_config(&path).unwrap();
        assert_eq!(c.steps, 5);
        assert_eq!(c.model.n_harmonics, 20);
        assert_eq!(c.lr_decay, 0.5);
        assert_eq!(c.batch_size, 16);
    }

    #[test]
    fn include_inherits_and_later_lines_override() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "base.conf", "steps = 100\nn_harmonics = 60\nseed = 3\n");
        let child = write(
            dir.path(),
            "child.conf",
            "include base.conf\nuse_z = true\nseed = 7\n",
        );
        let c = load_train_config(&child).unwrap();
        assert_eq!(c.steps, 100);
        assert_eq!(c.model.n_harmonics, 60);
        assert!(c.model.use_z);
        assert_eq!(c.seed, 7);
    }

    #[test]
    fn include_resolves_relative_to_the_including_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("sub")).unwrap();
        write(dir.path(), "sub/base.conf", "steps = 2\n");
        let child = write(dir.path(), "sub/child.conf", "include base.conf\n");
        // Loaded from a different working directory than the file's own.
        let c = load_train_config(&child).unwrap();
        assert_eq!(c.steps, 2);
    }

    #[test]
    fn include_cycle_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.conf", "include b.conf\n");
        write(dir.path(), "b.conf", "include a.conf\n");
        let err = load_train_config(&dir.path().join("a.conf")).unwrap_err();
        assert!(err.to_string().contains("cycle"), "{err}");
    }

    #[test]
    fn diamond_includes_are_fine() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "d.conf", "steps = 9\n");
        write(dir.path(), "b.conf", "include d.conf\nn_noise = 10\n");
        write(dir.path(), "c.conf", "include d.conf\nn_noise = 33\n");
        let top = write(dir.path(), "a.conf", "include b.conf\ninclude c.conf\n");
        let c = load_train_config(&top).unwrap();
        assert_eq!(c.model.n_noise, 33);
        assert_eq!(c.steps, 9);
    }

    #[test]
    fn unknown_key_reports_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "a.conf", "steps = 5\nnharmonics = 20\n");
        let err = load_train_config(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("a.conf:2"), "{msg}");
        assert!(msg.contains("unknown key"), "{msg}");
    }

    #[test]
    fn bad_value_and_bad_syntax_report_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "a.conf", "steps = soon\n");
        let msg = load_train_config(&path).unwrap_err().to_string();
        assert!(msg.contains("a.conf:1") && msg.contains("soon"), "{msg}");

        let path = write(dir.path(), "b.conf", "steps = 1\njust words\n");
        let msg = load_train_config(&path).unwrap_err().to_string();
        assert!(msg.contains("b.conf:2"), "{msg}");
    }

    #[test]
    fn steps_is_required() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "a.conf", "n_harmonics = 60\n");
        let msg = load_train_config(&path).unwrap_err().to_string();
        assert!(msg.contains("steps"), "{msg}");
    }

    #[test]
    fn missing_include_target_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "a.conf", "include gone.conf\n");
        let msg = load_train_config(&path).unwrap_err().to_string();
        assert!(msg.contains("gone.conf"), "{msg}");
    }

    #[test]
    fn echo_round_trips_through_the_parser() {
        let dir = tempfile::tempdir().unwrap();
        let config = TrainConfig { steps: 42, seed: 11, ..TrainConfig::default() };
        let path = write(dir.path(), "echo.conf", &echo_config(&config));
        let parsed = load_train_config(&path).unwrap();
        assert_eq!(parsed, config);
    }

    #[test]
    fn out_of_range_values_fail_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), "a.conf", "steps = 5\nn_harmonics = 200\n");
        assert!(load_train_config(&path).is_err());
    }
}
