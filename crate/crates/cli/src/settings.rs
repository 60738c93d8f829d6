//! Layered `key=value` settings: built-in defaults, then an optional config
//! file, then command-line flags. Every key a command accepts is declared in
//! its table; anything else is an error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::parser::ValueSource;
use clap::{Arg, ArgAction, ArgMatches, Command};

#[derive(Clone, Copy, Debug)]
pub enum Fallback {
    Required,
    Unset,
    Value(&'static str),
}

#[derive(Clone, Copy, Debug)]
pub struct Key {
    pub name: &'static str,
    pub default: Fallback,
    pub help: &'static str,
    /// Takes no value on the command line (`--flag` means `true`).
    pub switch: bool,
    /// Number of command-line values joined with spaces.
    pub arity: usize,
}

const fn key(name: &'static str, default: Fallback, help: &'static str) -> Key {
    Key { name, default, help, switch: false, arity: 1 }
}

const fn switch(name: &'static str, help: &'static str) -> Key {
    Key { name, default: Fallback::Value("false"), help, switch: true, arity: 1 }
}

use Fallback::{Required, Unset, Value};

pub const SEED: Key = key("seed", Value("0"), "master seed");
pub const PRECISION: Key = key("precision", Value("f64"), "floating-point type: f32 or f64");
pub const MODE: Key = key("mode", Value("node"), "inductive batch mode: node or graph");
pub const BATCH_SIZE: Key = key("batch_size", Value("0"), "inductive nodes per inference call (0: all at once)");

pub const GENERATE: &[Key] = &[
    key("out", Required, "output graph-bundle directory"),
    key("sizes", Value("200,200,200"), "nodes per class"),
    key("p_in", Value("0.05"), "edge probability within a class"),
    key("p_out", Value("0.005"), "edge probability across classes"),
    key("features", Value("16"), "feature dimension"),
    key("separation", Value("1.0"), "length of each class-mean vector"),
    key("support", Value("100"), "support (validation) nodes"),
    key("test", Value("150"), "inductive test nodes"),
    SEED,
];

pub const TRAINING: &[Key] = &[
    key("graph", Required, "graph-bundle directory"),
    key("r", Value("0.05"), "reduction ratio N'/N"),
    key("epochs", Value("20"), "outer epochs"),
    key("inner_steps", Value("10"), "steps per phase and epoch"),
    key("lr_features", Value("0.01"), "learning rate of X'"),
    key("lr_mlp", Value("0.01"), "learning rate of the affinity MLP"),
    key("lr_mapping", Value("0.1"), "learning rate of the mapping"),
    key("lambda", Value("0.1"), "structure-loss weight"),
    key("beta", Value("100"), "inductive-loss weight"),
    key("mu", Value("0.5"), "threshold on A'"),
    key("delta", Value("0.01"), "threshold on the mapping"),
    key("depth", Value("2"), "propagation hops of the relay"),
    key("mlp_hidden", Value("128"), "hidden widths of the affinity MLP"),
    key("edge_positives", Value("256"), "positive pairs per structure-loss batch"),
    switch("positives_only", "structure loss over linked pairs only"),
    key("support_mode", Value("graph"), "batch mode of the support nodes"),
    key("support_batch", Value("0"), "support nodes per chunk (0: one chunk)"),
    key("init", Value("class"), "mapping initialization: class or random"),
    key("relay_optimizer", Value("sgd"), "optimizer of the relay during condensation"),
    key("relay_lr", Value("0.01"), "learning rate of the relay during condensation"),
    key("deploy", Value("original"), "graph the deployed relay is trained on: original or synthetic"),
    key("deploy_epochs", Value("200"), "training epochs of the deployed relay"),
    key("deploy_lr", Value("0.01"), "learning rate of the deployed relay"),
    SEED,
    PRECISION,
];

pub const CONDENSE_EXTRA: &[Key] = &[key("out", Required, "output bundle directory")];

pub const INFER: &[Key] = &[
    key("bundle", Required, "condensed bundle directory"),
    key("batch", Unset, "batch directory of inductive nodes"),
    key("graph", Unset, "graph-bundle directory; its test split is used when no batch is given"),
    MODE,
    BATCH_SIZE,
    switch("baseline_original", "also run inference on the original graph"),
    key("out", Unset, "directory for predictions and report"),
    PRECISION,
];

pub const CALIBRATE: &[Key] = &[
    key("bundle", Required, "condensed bundle directory"),
    key("graph", Required, "graph-bundle directory the bundle was condensed from"),
    MODE,
    key("batch_size", Value("10"), "inductive nodes per calibration call"),
    key("iterations", Value("10"), "propagation iterations"),
    key("alpha", Value("0.8"), "propagation weight"),
    key("clamp", Value("true"), "reset seed rows after every iteration"),
    key("scale", Value("1.0"), "multiplier of the propagated residual"),
    key("out", Unset, "directory for the calibration table"),
    PRECISION,
];

pub const BASELINE: &[Key] = &[
    key("graph", Required, "graph-bundle directory"),
    key("method", Required, "random, degree, herding or kcenter"),
    key("r", Value("0.05"), "reduction ratio"),
    key("out", Required, "output graph-bundle directory of the coreset"),
    key("depth", Value("2"), "propagation hops of the relay"),
    key("deploy_epochs", Value("200"), "training epochs of the relay"),
    key("deploy_lr", Value("0.01"), "learning rate of the relay"),
    MODE,
    BATCH_SIZE,
    SEED,
    PRECISION,
];

pub const BENCH_EXTRA: &[Key] = &[
    Key { arity: 2, ..key("sweep", Required, "what to sweep and its values, e.g. `delta 0:0.3:0.05` or `r 0.01,0.05`") },
    key("out", Required, "output directory"),
    MODE,
    key("batch_size", Value("10"), "inductive nodes per inference call"),
];

/// The key table of each subcommand.
pub fn keys_for(command: &str) -> Vec<Key> {
    let mut keys: Vec<Key> = match command {
        "generate" => GENERATE.to_vec(),
        "condense" => [TRAINING, CONDENSE_EXTRA].concat(),
        "infer" => INFER.to_vec(),
        "calibrate" => CALIBRATE.to_vec(),
        "baseline" => BASELINE.to_vec(),
        "bench" => [TRAINING, BENCH_EXTRA].concat(),
        other => unreachable!("no key table for {other}"),
    };
    let mut seen = std::collections::HashSet::new();
    keys.retain(|k| seen.insert(k.name));
    keys
}

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

/// Adds one flag per key plus `--config` to a subcommand.
pub fn with_flags(mut cmd: Command, keys: &[Key]) -> Command {
    cmd = cmd.arg(Arg::new("config").long("config").value_name("FILE").help("key=value config file; flags override it"));
    for k in keys {
        let mut arg = Arg::new(k.name).long(flag_name(k.name)).help(k.help);
        arg = if k.switch {
            arg.num_args(0..=1).default_missing_value("true").value_name("BOOL")
        } else if k.arity > 1 {
            arg.num_args(k.arity).value_names(["KIND", "VALUES"])
        } else {
            arg.value_name("VALUE")
        };
        cmd = cmd.arg(arg.action(ArgAction::Set));
    }
    cmd
}

#[derive(Clone, Debug)]
pub struct Settings {
    command: String,
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Defaults, then the config file named by `--config`, then flags.
    pub fn resolve(command: &str, keys: &[Key], matches: &ArgMatches) -> Result<Self> {
        let file = matches.get_one::<String>("config").map(PathBuf::from);
        let mut flags = Vec::new();
        for k in keys {
            if matches.value_source(k.name) == Some(ValueSource::CommandLine) {
                let parts: Vec<&String> = matches.get_many::<String>(k.name).into_iter().flatten().collect();
                flags.push((k.name.to_string(), parts.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" ")));
            }
        }
        Self::from_layers(command, keys, file.as_deref(), flags)
    }

    pub fn from_layers(command: &str, keys: &[Key], file: Option<&Path>, flags: Vec<(String, String)>) -> Result<Self> {
        let mut values = BTreeMap::new();
        for k in keys {
            if let Value(v) = k.default {
                values.insert(k.name.to_string(), v.to_string());
            }
        }
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))?;
            for (k, v) in graphcond::io::parse_key_values(path, &text)? {
                if !keys.iter().any(|key| key.name == k) {
                    bail!("{}: unknown key '{k}' for `{command}`", path.display());
                }
                values.insert(k, v);
            }
        }
        values.extend(flags);
        for k in keys {
            if matches!(k.default, Required) && !values.contains_key(k.name) {
                bail!("`{command}` needs `{}` (flag --{} or config key)", k.name, flag_name(k.name));
            }
        }
        Ok(Self { command: command.to_string(), values })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<V: FromStr>(&self, key: &str) -> Result<V>
    where
        V::Err: std::fmt::Display,
    {
        self.opt(key)?.ok_or_else(|| anyhow!("missing setting '{key}'"))
    }

    pub fn opt<V: FromStr>(&self, key: &str) -> Result<Option<V>>
    where
        V::Err: std::fmt::Display,
    {
        self.raw(key).map(|raw| raw.parse::<V>().map_err(|e| anyhow!("bad value for '{key}': '{raw}' ({e})"))).transpose()
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.get::<String>(key).map(PathBuf::from)
    }

    /// Comma-separated list; empty means no entries.
    pub fn list<V: FromStr>(&self, key: &str) -> Result<Vec<V>>
    where
        V::Err: std::fmt::Display,
    {
        let raw = self.get::<String>(key)?;
        raw.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<V>().map_err(|e| anyhow!("bad entry '{t}' in '{key}' ({e})")))
            .collect()
    }

    /// The effective settings as a reloadable config file.
    pub fn to_config_text(&self) -> String {
        let mut s = format!("# effective settings of `{}`\n", self.command);
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn write_effective(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let path = dir.join("config.txt");
        std::fs::write(&path, self.to_config_text()).with_context(|| format!("cannot write {}", path.display()))
    }
}
