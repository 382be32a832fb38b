//! Flag and config-file parsing for the batch front end.
//!
//! Every flag mirrors a `RunConfig` field. A config file may set any flag
//! (`key = value` lines, `#` comments); command-line values override the
//! file. Parsing is strict: unknown keys or flags are usage errors.

use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Fit,
    Envelope,
    Sparse,
    Select,
    Simulate,
    Bootstrap,
    Report,
}

impl Command {
    fn parse(s: &str) -> Result<Self, String> {
        match s {
            "fit" => Ok(Command::Fit),
            "envelope" => Ok(Command::Envelope),
            "sparse" => Ok(Command::Sparse),
            "select" => Ok(Command::Select),
            "simulate" => Ok(Command::Simulate),
            "bootstrap" => Ok(Command::Bootstrap),
            "report" => Ok(Command::Report),
            other => Err(format!(
                "unknown command '{other}' (expected fit, envelope, sparse, select, simulate, bootstrap, or report)"
            )),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Envelope => "envelope",
            Command::Sparse => "sparse",
            Command::Select => "select",
            Command::Simulate => "simulate",
            Command::Bootstrap => "bootstrap",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub data: Option<PathBuf>,
    pub r: Option<usize>,
    pub m: Option<usize>,
    pub p1: Option<usize>,
    pub p2: Option<usize>,
    pub u1: Option<usize>,
    pub u2: Option<usize>,
    pub criterion: String,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub lambda_grid: Option<Vec<(f64, f64)>>,
    pub b: usize,
    pub seed: Option<u64>,
    pub tol: f64,
    pub max_iter: usize,
    pub convention: String,
    pub out: Option<PathBuf>,
    pub sigma_sq: f64,
    pub sigma0_sq: f64,
    pub n_list: Option<Vec<usize>>,
    pub reps: usize,
    pub models: Option<Vec<String>>,
    pub study: String,
    pub element: usize,
    pub scheme: String,
    pub axis: String,
    pub gamma: f64,
    pub stepwise: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: Command::Fit,
            data: None,
            r: None,
            m: None,
            p1: None,
            p2: None,
            u1: None,
            u2: None,
            criterion: "bic".into(),
            lambda1: None,
            lambda2: None,
            lambda_grid: None,
            b: 200,
            seed: None,
            tol: 1e-6,
            max_iter: 500,
            convention: "raw".into(),
            out: None,
            sigma_sq: 0.5,
            sigma0_sq: 2.5,
            n_list: None,
            reps: 50,
            models: None,
            study: "comparison".into(),
            element: 0,
            scheme: "residual".into(),
            axis: "rows".into(),
            gamma: 1.0,
            stepwise: false,
        }
    }
}

pub const USAGE: &str = "\
usage: matreg --command <fit|envelope|sparse|select|simulate|bootstrap|report> [flags]

flags (any may also appear as `key = value` lines in --config FILE;
command-line values override the file):
  --command CMD        operation to run (required)
  --data PATH          long-format dataset file (unit,block,row,col,value)
  --config PATH        config file
  --r N --m N          response dimensions (simulate)
  --p1 N --p2 N        predictor dimensions (simulate)
  --u1 N --u2 N        envelope dimensions
  --criterion C        aic | bic (default bic)
  --lambda1 X          row-penalty tuning parameter
  --lambda2 X          column-penalty tuning parameter
  --lambda-grid G      pairs `l1:l2` separated by commas, e.g. 0:0,1:0,4:0
  --B N                bootstrap replicates (default 200)
  --seed N             RNG seed (generated and recorded if omitted)
  --tol X              convergence tolerance (default 1e-6)
  --max-iter N         iteration cap (default 500)
  --convention C       raw | with-constraints (default raw)
  --out PATH           result document path (stdout if omitted)
  --sigma-sq X         material variance for simulate (default 0.5)
  --sigma0-sq X        immaterial variance for simulate (default 2.5)
  --n-list L           sample sizes for simulate, e.g. 200,500
  --reps N             simulate replicates (default 50)
  --models L           subset of vector,bilinear,envelope
  --study S            comparison | se (default comparison)
  --element N          coefficient index for the se study (default 0)
  --scheme S           residual | pairs (default residual)
  --axis A             rows | cols for report (default rows)
  --gamma X            adaptive-weight exponent (default 1)
  --stepwise           greedy dimension search instead of the full grid
";

fn parse_usize(key: &str, v: &str) -> Result<usize, String> {
    v.parse().map_err(|_| format!("flag {key}: expected an integer, got '{v}'"))
}

fn parse_f64(key: &str, v: &str) -> Result<f64, String> {
    v.parse().map_err(|_| format!("flag {key}: expected a number, got '{v}'"))
}

fn parse_lambda_grid(v: &str) -> Result<Vec<(f64, f64)>, String> {
    v.split(',')
        .map(|pair| {
            let mut it = pair.split(':');
            let l1 = it
                .next()
                .ok_or_else(|| format!("bad lambda pair '{pair}'"))?
                .trim()
                .parse::<f64>()
                .map_err(|_| format!("bad lambda pair '{pair}'"))?;
            let l2 = match it.next() {
                Some(s) => s
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| format!("bad lambda pair '{pair}'"))?,
                None => 0.0,
            };
            if it.next().is_some() {
                return Err(format!("bad lambda pair '{pair}'"));
            }
            Ok((l1, l2))
        })
        .collect()
}

fn parse_usize_list(key: &str, v: &str) -> Result<Vec<usize>, String> {
    v.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| format!("flag {key}: bad integer '{s}'"))
        })
        .collect()
}

/// Applies one `key = value` assignment. `key` is the long flag name
/// without the leading dashes.
fn apply(config: &mut RunConfig, key: &str, value: &str) -> Result<(), String> {
    match key {
        "command" => config.command = Command::parse(value)?,
        "data" => config.data = Some(PathBuf::from(value)),
        "r" => config.r = Some(parse_usize(key, value)?),
        "m" => config.m = Some(parse_usize(key, value)?),
        "p1" => config.p1 = Some(parse_usize(key, value)?),
        "p2" => config.p2 = Some(parse_usize(key, value)?),
        "u1" => config.u1 = Some(parse_usize(key, value)?),
        "u2" => config.u2 = Some(parse_usize(key, value)?),
        "criterion" => match value {
            "aic" | "bic" => config.criterion = value.into(),
            other => return Err(format!("criterion must be aic or bic, got '{other}'")),
        },
        "lambda1" => config.lambda1 = Some(parse_f64(key, value)?),
        "lambda2" => config.lambda2 = Some(parse_f64(key, value)?),
        "lambda-grid" => config.lambda_grid = Some(parse_lambda_grid(value)?),
        "B" => config.b = parse_usize(key, value)?,
        "seed" => {
            config.seed = Some(
                value
                    .parse()
                    .map_err(|_| format!("flag seed: expected an integer, got '{value}'"))?,
            )
        }
        "tol" => config.tol = parse_f64(key, value)?,
        "max-iter" => config.max_iter = parse_usize(key, value)?,
        "convention" => match value {
            "raw" | "with-constraints" => config.convention = value.into(),
            other => {
                return Err(format!(
                    "convention must be raw or with-constraints, got '{other}'"
                ))
            }
        },
        "out" => config.out = Some(PathBuf::from(value)),
        "sigma-sq" => config.sigma_sq = parse_f64(key, value)?,
        "sigma0-sq" => config.sigma0_sq = parse_f64(key, value)?,
        "n-list" => config.n_list = Some(parse_usize_list(key, value)?),
        "reps" => config.reps = parse_usize(key, value)?,
        "models" => {
            let models: Vec<String> = value.split(',').map(|s| s.trim().to_string()).collect();
            for m in &models {
                if !matches!(m.as_str(), "vector" | "bilinear" | "envelope") {
                    return Err(format!("unknown model '{m}'"));
                }
            }
            config.models = Some(models)
        }
        "study" => match value {
            "comparison" | "se" => config.study = value.into(),
            other => return Err(format!("study must be comparison or se, got '{other}'")),
        },
        "element" => config.element = parse_usize(key, value)?,
        "scheme" => match value {
            "residual" | "pairs" => config.scheme = value.into(),
            other => return Err(format!("scheme must be residual or pairs, got '{other}'")),
        },
        "axis" => match value {
            "rows" | "cols" => config.axis = value.into(),
            other => return Err(format!("axis must be rows or cols, got '{other}'")),
        },
        "gamma" => config.gamma = parse_f64(key, value)?,
        "stepwise" => {
            config.stepwise = match value {
                "true" | "1" | "" => true,
                "false" | "0" => false,
                other => return Err(format!("stepwise must be true or false, got '{other}'")),
            }
        }
        other => return Err(format!("unknown key '{other}'")),
    }
    Ok(())
}

fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or(format!("config line {}: expected key = value", lineno + 1))?;
        let key = key.trim().to_string();
        if key == "config" {
            return Err(format!("config line {}: 'config' cannot nest", lineno + 1));
        }
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(format!("config line {}: duplicate key '{key}'", lineno + 1));
        }
    }
    Ok(map)
}

/// Parses the command line (with optional config file) into a `RunConfig`.
pub fn parse_args(args: &[String]) -> Result<RunConfig, String> {
    // first pass: collect flag assignments and find --config
    let mut assignments: Vec<(String, String)> = Vec::new();
    let mut config_path: Option<PathBuf> = None;
    let mut command_set = false;
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        let Some(name) = arg.strip_prefix("--") else {
            return Err(format!("unexpected argument '{arg}' (flags start with --)"));
        };
        let (key, value) = if let Some((k, v)) = name.split_once('=') {
            (k.to_string(), v.to_string())
        } else if name == "stepwise" {
            (name.to_string(), "true".to_string())
        } else {
            let v = args
                .get(i + 1)
                .ok_or(format!("flag --{name} is missing a value"))?;
            i += 1;
            (name.to_string(), v.clone())
        };
        if key == "config" {
            config_path = Some(PathBuf::from(value));
        } else {
            if key == "command" {
                command_set = true;
            }
            assignments.push((key, value));
        }
        i += 1;
    }

    let mut config = RunConfig::default();
    if let Some(path) = config_path {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| format!("cannot read config file {}: {e}", path.display()))?;
        for (key, value) in parse_config_file(&text)? {
            if key == "command" {
                command_set = true;
            }
            apply(&mut config, &key, &value)?;
        }
    }
    // command line overrides the file
    for (key, value) in &assignments {
        apply(&mut config, key, value)?;
    }
    if !command_set {
        return Err("missing required flag --command".into());
    }
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(parts: &[&str]) -> Vec<String> {
        parts.iter().map(|p| p.to_string()).collect()
    }

    #[test]
    fn parses_basic_flags() {
        let cfg = parse_args(&s(&[
            "--command", "envelope", "--data", "d.csv", "--u1", "2", "--u2", "3", "--seed", "9",
        ]))
        .unwrap();
        assert_eq!(cfg.command, Command::Envelope);
        assert_eq!(cfg.u1, Some(2));
        assert_eq!(cfg.seed, Some(9));
    }

    #[test]
    fn rejects_unknown_flags_and_commands() {
        assert!(parse_args(&s(&["--command", "fit", "--bogus", "1"])).is_err());
        assert!(parse_args(&s(&["--command", "dance"])).is_err());
        assert!(parse_args(&s(&["--data", "x.csv"])).is_err(), "command required");
    }

    #[test]
    fn lambda_grid_pairs() {
        let cfg = parse_args(&s(&[
            "--command",
            "sparse",
            "--lambda-grid",
            "0:0,1:0.5,4:2",
        ]))
        .unwrap();
        assert_eq!(
            cfg.lambda_grid.unwrap(),
            vec![(0.0, 0.0), (1.0, 0.5), (4.0, 2.0)]
        );
    }

    #[test]
    fn config_file_merges_and_cli_wins() {
        let dir = std::env::temp_dir().join("matreg_cfg_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.conf");
        std::fs::write(&path, "command = simulate\nreps = 10\nseed = 4\n# comment\n").unwrap();
        let cfg = parse_args(&s(&[
            "--config",
            path.to_str().unwrap(),
            "--reps",
            "20",
        ]))
        .unwrap();
        assert_eq!(cfg.command, Command::Simulate);
        assert_eq!(cfg.reps, 20, "command line overrides the file");
        assert_eq!(cfg.seed, Some(4));

        std::fs::write(&path, "nonsense = 1\n").unwrap();
        assert!(parse_args(&s(&["--config", path.to_str().unwrap()])).is_err());
    }
}
