//! Flat `key = value` experiment configuration.
//!
//! A file holds one assignment per line; `#` starts a comment. Command-line
//! overrides are applied after the file and win. Every experiment starts
//! from its protocol defaults, so only deviations need to be written down.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ntk_influence::data::DataSource;
use ntk_influence::dynamics::TrackingMode;
use ntk_influence::experiments::{bundled_mnist, DataSpec, Experiment, MixtureParams, Params};
use ntk_influence::Bandwidth;
use thiserror::Error;

/// Where a setting came from, for diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    File { path: String, line: usize },
    Override,
    Default,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::File { path, line } => write!(f, "{path}:{line}"),
            Origin::Override => f.write_str("--set"),
            Origin::Default => f.write_str("default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub origin: Origin,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{origin}: {message}")]
    Syntax { origin: Origin, message: String },
    #[error("{origin}: field `{key}`: {message}")]
    Field { origin: Origin, key: String, message: String },
    #[error("missing required field `{0}`")]
    Missing(&'static str),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Every recognised key, in echo order.
pub const KEYS: &[&str] = &[
    "experiment",
    "out",
    "dataset",
    "images",
    "labels",
    "csv",
    "classes",
    "mixture.clusters",
    "mixture.dim",
    "mixture.radius",
    "mixture.proportions",
    "n_train",
    "n_test",
    "lambda",
    "lambdas",
    "widths",
    "seeds",
    "epochs",
    "learning_rate",
    "kappa",
    "top_k",
    "test_index",
    "noise",
    "groups",
    "t_min",
    "t_max",
    "n_times",
    "bandwidth",
    "tracking",
    "bound.clusters_per_class",
    "bound.base_count",
    "bound.dim",
    "bound.radius",
    "bound.lambda_factor",
];

pub fn parse_text(text: &str, path: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut entries: Vec<Entry> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let origin = Origin::File {
            path: path.to_string(),
            line: k + 1,
        };
        let line = match raw.find('#') {
            Some(c) => &raw[..c],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let entry = parse_assignment(line, origin)?;
        if let Some(prev) = entries.iter().find(|e| e.key == entry.key) {
            return Err(ConfigError::Syntax {
                origin: entry.origin,
                message: format!("`{}` already set at {}", entry.key, prev.origin),
            });
        }
        entries.push(entry);
    }
    Ok(entries)
}

pub fn read_file(path: &Path) -> Result<Vec<Entry>, ConfigError> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: name.clone(), source })?;
    parse_text(&text, &name)
}

/// One `--set key=value` override.
pub fn parse_override(text: &str) -> Result<Entry, ConfigError> {
    parse_assignment(text.trim(), Origin::Override)
}

fn parse_assignment(line: &str, origin: Origin) -> Result<Entry, ConfigError> {
    let Some((key, value)) = line.split_once('=') else {
        return Err(ConfigError::Syntax {
            origin,
            message: format!("expected `key = value`, found `{line}`"),
        });
    };
    let (key, value) = (key.trim(), value.trim());
    if !KEYS.contains(&key) {
        return Err(ConfigError::Syntax {
            origin,
            message: format!("unknown field `{key}`; known fields: {}", KEYS.join(", ")),
        });
    }
    if value.is_empty() {
        return Err(ConfigError::Field {
            origin,
            key: key.into(),
            message: "empty value".into(),
        });
    }
    Ok(Entry {
        key: key.into(),
        value: value.into(),
        origin,
    })
}

/// A fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub experiment: Experiment,
    pub params: Params,
    pub out: PathBuf,
    origins: BTreeMap<String, Origin>,
}

impl Config {
    /// Merges `entries` in order (later entries win) over the defaults of
    /// the chosen experiment. Relative data paths resolve against the
    /// working directory.
    pub fn resolve(entries: &[Entry]) -> Result<Self, ConfigError> {
        let mut merged: BTreeMap<&str, &Entry> = BTreeMap::new();
        for e in entries {
            merged.insert(&e.key, e);
        }
        let exp_entry = merged.get("experiment").ok_or(ConfigError::Missing("experiment"))?;
        let experiment = Experiment::from_str(&exp_entry.value).map_err(|e| field_err(exp_entry, e.to_string()))?;
        let mut params = Params::defaults(experiment, Path::new("."));
        let mut out = PathBuf::from("results").join(experiment.name());
        // The data source must be chosen before its own fields apply.
        if let Some(e) = merged.get("dataset") {
            params.data = match e.value.as_str() {
                "idx" => match params.data {
                    d @ DataSpec::Files { source: DataSource::IdxPair { .. }, .. } => d,
                    _ => bundled_mnist(Path::new(".")),
                },
                "csv" => {
                    let path = merged.get("csv").ok_or_else(|| field_err(e, "dataset = csv needs a `csv` path".into()))?;
                    DataSpec::Files {
                        source: DataSource::Csv(PathBuf::from(&path.value)),
                        classes: None,
                    }
                }
                "mixture" => match params.data {
                    d @ DataSpec::Mixture(_) => d,
                    _ => DataSpec::Mixture(MixtureParams {
                        clusters: 2,
                        dim: 50,
                        radius: 0.5,
                        proportions: Vec::new(),
                    }),
                },
                other => return Err(field_err(e, format!("expected idx, csv or mixture, got `{other}`"))),
            };
        }
        for (key, e) in &merged {
            if matches!(*key, "experiment" | "dataset") {
                continue;
            }
            if *key == "out" {
                out = PathBuf::from(&e.value);
                continue;
            }
            apply(&mut params, key, &e.value).map_err(|m| field_err(e, m))?;
        }
        let origins = merged.iter().map(|(k, e)| (k.to_string(), e.origin.clone())).collect();
        Ok(Self {
            experiment,
            params,
            out,
            origins,
        })
    }

    /// Static checks: parameter ranges and the existence of data files.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.params
            .validate(self.experiment)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.experiment == Experiment::Thm4Bound {
            return Ok(());
        }
        if let DataSpec::Files { source, .. } = &self.params.data {
            let files: Vec<(&str, &Path)> = match source {
                DataSource::IdxPair { images, labels } => vec![("images", images), ("labels", labels)],
                DataSource::Csv(p) => vec![("csv", p)],
            };
            for (key, path) in files {
                if !path.is_file() {
                    return Err(ConfigError::Field {
                        origin: self.origins.get(key).cloned().unwrap_or(Origin::Default),
                        key: key.into(),
                        message: format!("file not found: {}", path.display()),
                    });
                }
            }
        }
        Ok(())
    }

    /// Canonical `key = value` pairs of every setting that applies.
    pub fn echo(&self) -> Vec<(&'static str, String)> {
        let p = &self.params;
        let mut out = vec![
            ("experiment", self.experiment.name().to_string()),
            ("out", self.out.display().to_string()),
        ];
        match &p.data {
            DataSpec::Files { source, classes } => {
                match source {
                    DataSource::IdxPair { images, labels } => {
                        out.push(("dataset", "idx".into()));
                        out.push(("images", images.display().to_string()));
                        out.push(("labels", labels.display().to_string()));
                    }
                    DataSource::Csv(path) => {
                        out.push(("dataset", "csv".into()));
                        out.push(("csv", path.display().to_string()));
                    }
                }
                out.push(("classes", classes.map_or("none".into(), |(a, b)| format!("{a},{b}"))));
            }
            DataSpec::Mixture(m) => {
                out.push(("dataset", "mixture".into()));
                out.push(("mixture.clusters", m.clusters.to_string()));
                out.push(("mixture.dim", m.dim.to_string()));
                out.push(("mixture.radius", m.radius.to_string()));
                out.push((
                    "mixture.proportions",
                    if m.proportions.is_empty() { "uniform".into() } else { join(&m.proportions) },
                ));
            }
        }
        let bandwidth = match &p.bandwidth {
            Bandwidth::Auto => "auto".into(),
            Bandwidth::Scalar(h) => h.to_string(),
            Bandwidth::PerAxis(hs) => join(hs),
        };
        let tracking = match p.tracking {
            TrackingMode::LeaveOneOut => "leave_one_out",
            TrackingMode::LabelRemoval => "label_removal",
        };
        out.extend([
            ("n_train", p.n_train.to_string()),
            ("n_test", p.n_test.to_string()),
            ("lambda", p.lambda.to_string()),
            ("lambdas", join(&p.lambdas)),
            ("widths", join(&p.widths)),
            ("seeds", join(&p.seeds)),
            ("epochs", p.epochs.to_string()),
            ("learning_rate", p.learning_rate.to_string()),
            ("kappa", p.kappa.to_string()),
            ("top_k", p.top_k.to_string()),
            ("test_index", p.test_index.to_string()),
            ("noise", p.noise.to_string()),
            ("groups", p.groups.to_string()),
            ("t_min", p.t_min.to_string()),
            ("t_max", p.t_max.to_string()),
            ("n_times", p.n_times.to_string()),
            ("bandwidth", bandwidth),
            ("tracking", tracking.into()),
            ("bound.clusters_per_class", p.bound.clusters_per_class.to_string()),
            ("bound.base_count", p.bound.base_count.to_string()),
            ("bound.dim", p.bound.dim.to_string()),
            ("bound.radius", p.bound.radius.to_string()),
            ("bound.lambda_factor", p.bound.lambda_factor.to_string()),
        ]);
        out
    }
}

fn field_err(e: &Entry, message: String) -> ConfigError {
    ConfigError::Field {
        origin: e.origin.clone(),
        key: e.key.clone(),
        message,
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn scalar<T: FromStr>(v: &str, what: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("expected {what}, got `{v}`"))
}

fn list<T: FromStr>(v: &str, what: &str) -> Result<Vec<T>, String> {
    v.split(',').map(|s| scalar(s.trim(), what)).collect()
}

/// Comma-separated integers; `a..b` expands to `a, a+1, ..., b-1`.
fn seed_list(v: &str) -> Result<Vec<u64>, String> {
    if let Some((a, b)) = v.split_once("..") {
        let (a, b): (u64, u64) = (scalar(a.trim(), "a seed")?, scalar(b.trim(), "a seed")?);
        if a >= b {
            return Err(format!("empty seed range `{v}`"));
        }
        return Ok((a..b).collect());
    }
    list(v, "a non-negative integer seed")
}

fn apply(p: &mut Params, key: &str, v: &str) -> Result<(), String> {
    const COUNT: &str = "a non-negative integer";
    const NUM: &str = "a number";
    match key {
        "images" | "labels" => match &mut p.data {
            DataSpec::Files { source: DataSource::IdxPair { images, labels }, .. } => {
                *(if key == "images" { images } else { labels }) = PathBuf::from(v);
            }
            _ => return Err("only applies to dataset = idx".into()),
        },
        "csv" => match &p.data {
            DataSpec::Files { source: DataSource::Csv(_), .. } => p.data = replace_csv(&p.data, v),
            _ => return Err("only applies to dataset = csv".into()),
        },
        "classes" => match &mut p.data {
            DataSpec::Files { classes, .. } => {
                *classes = if v == "none" {
                    None
                } else {
                    match list::<i64>(v, "an integer class id")?[..] {
                        [a, b] if a != b => Some((a, b)),
                        _ => return Err(format!("expected two distinct class ids `a,b` or `none`, got `{v}`")),
                    }
                }
            }
            DataSpec::Mixture(_) => return Err("only applies to file datasets".into()),
        },
        "mixture.clusters" => mixture(p)?.clusters = scalar(v, COUNT)?,
        "mixture.dim" => mixture(p)?.dim = scalar(v, COUNT)?,
        "mixture.radius" => mixture(p)?.radius = scalar(v, NUM)?,
        "mixture.proportions" => {
            mixture(p)?.proportions = if v == "uniform" { Vec::new() } else { list(v, NUM)? }
        }
        "n_train" => p.n_train = scalar(v, COUNT)?,
        "n_test" => p.n_test = scalar(v, COUNT)?,
        "lambda" => p.lambda = scalar(v, NUM)?,
        "lambdas" => p.lambdas = list(v, NUM)?,
        "widths" => p.widths = list(v, "a positive integer width")?,
        "seeds" => p.seeds = seed_list(v)?,
        "epochs" => p.epochs = scalar(v, COUNT)?,
        "learning_rate" => p.learning_rate = scalar(v, NUM)?,
        "kappa" => p.kappa = scalar(v, NUM)?,
        "top_k" => p.top_k = scalar(v, COUNT)?,
        "test_index" => p.test_index = scalar(v, COUNT)?,
        "noise" => p.noise = scalar(v, NUM)?,
        "groups" => p.groups = scalar(v, COUNT)?,
        "t_min" => p.t_min = scalar(v, NUM)?,
        "t_max" => p.t_max = scalar(v, NUM)?,
        "n_times" => p.n_times = scalar(v, COUNT)?,
        "bandwidth" => {
            p.bandwidth = match v {
                "auto" => Bandwidth::Auto,
                _ if v.contains(',') => Bandwidth::PerAxis(list(v, "a positive bandwidth")?),
                _ => Bandwidth::Scalar(scalar(v, "a positive bandwidth")?),
            }
        }
        "tracking" => {
            p.tracking = match v {
                "leave_one_out" => TrackingMode::LeaveOneOut,
                "label_removal" => TrackingMode::LabelRemoval,
                _ => return Err(format!("expected leave_one_out or label_removal, got `{v}`")),
            }
        }
        "bound.clusters_per_class" => p.bound.clusters_per_class = scalar(v, COUNT)?,
        "bound.base_count" => p.bound.base_count = scalar(v, COUNT)?,
        "bound.dim" => p.bound.dim = scalar(v, COUNT)?,
        "bound.radius" => p.bound.radius = scalar(v, NUM)?,
        "bound.lambda_factor" => p.bound.lambda_factor = scalar(v, NUM)?,
        _ => unreachable!("key `{key}` is listed but not handled"),
    }
    Ok(())
}

fn mixture(p: &mut Params) -> Result<&mut MixtureParams, String> {
    match &mut p.data {
        DataSpec::Mixture(m) => Ok(m),
        _ => Err("only applies to dataset = mixture".into()),
    }
}

fn replace_csv(data: &DataSpec, path: &str) -> DataSpec {
    let classes = match data {
        DataSpec::Files { classes, .. } => *classes,
        DataSpec::Mixture(_) => None,
    };
    DataSpec::Files {
        source: DataSource::Csv(PathBuf::from(path)),
        classes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(text: &str) -> Result<Config, ConfigError> {
        Config::resolve(&parse_text(text, "t.cfg")?)
    }

    #[test]
    fn comments_blank_lines_and_overrides() {
        let mut entries = parse_text("# header\n\nexperiment = fig2_lambda_sweep\nlambda = 2 # inline\n", "t.cfg").unwrap();
        assert_eq!(entries.len(), 2);
        entries.push(parse_override("lambda=0.5").unwrap());
        let cfg = Config::resolve(&entries).unwrap();
        assert_eq!(cfg.params.lambda, 0.5);
        assert_eq!(cfg.out, PathBuf::from("results/fig2_lambda_sweep"));
    }

    #[test]
    fn diagnostics_carry_line_and_field() {
        let err = resolve("experiment = fig1_scatter\n\nwidths = 100,-5\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("t.cfg:3: field `widths`"), "{msg}");
        let err = parse_text("experiment = fig1_scatter\nexperiment = fig2_lambda_sweep\n", "t.cfg").unwrap_err();
        assert!(err.to_string().contains("already set at t.cfg:1"));
        assert!(matches!(parse_text("bogus = 1", "t.cfg"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(parse_text("no equals sign", "t.cfg"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(resolve("lambda = 1"), Err(ConfigError::Missing("experiment"))));
    }

    #[test]
    fn unknown_experiment_lists_valid_names() {
        let msg = resolve("experiment = fig9").unwrap_err().to_string();
        for name in Experiment::names() {
            assert!(msg.contains(name), "{msg}");
        }
    }

    #[test]
    fn fields_must_match_the_data_source() {
        assert!(resolve("experiment = fig3_density\nimages = x").is_err());
        assert!(resolve("experiment = fig2_lambda_sweep\nmixture.dim = 3").is_err());
        let cfg = resolve("experiment = fig2_lambda_sweep\ndataset = mixture\nmixture.dim = 3\nseeds = 2..5").unwrap();
        assert!(matches!(&cfg.params.data, DataSpec::Mixture(m) if m.dim == 3));
        assert_eq!(cfg.params.seeds, vec![2, 3, 4]);
    }

    #[test]
    fn missing_file_names_the_field() {
        let cfg = resolve("experiment = fig2_lambda_sweep\nlabels = /nonexistent/labels").unwrap();
        let err = cfg.validate().unwrap_err();
        let msg = err.to_string();
        assert!(
            matches!(&err, ConfigError::Field { key, .. } if key == "images" || key == "labels"),
            "{msg}"
        );
    }

    #[test]
    fn echo_covers_every_key_and_round_trips() {
        for exp in Experiment::ALL {
            for extra in ["", "dataset = mixture\nmixture.proportions = 0.3,0.7\nbandwidth = 0.2,0.4\n"] {
                let cfg = resolve(&format!("experiment = {}\ntracking = label_removal\n{extra}", exp.name())).unwrap();
                let echo = cfg.echo();
                let text: String = echo.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
                let again = resolve(&text).unwrap();
                assert_eq!(again, Config { origins: again.origins.clone(), ..cfg.clone() });
                for (k, _) in &echo {
                    assert!(KEYS.contains(k));
                }
            }
        }
        let csv = resolve("experiment = fig2_lambda_sweep\ndataset = csv\ncsv = a.csv\nclasses = 0,1").unwrap();
        let keys: Vec<&str> = csv.echo().iter().map(|(k, _)| *k).collect();
        assert!(keys.contains(&"csv") && !keys.contains(&"images"));
    }
}
