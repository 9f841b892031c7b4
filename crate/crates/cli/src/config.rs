use std::path::{Path, PathBuf};

use mfbsde::condexp::{basis_size, RegressionBasis};
use mfbsde::constants::local_window;
use mfbsde::generators::{fixture, Fixture, FixtureParams};
use mfbsde::solvers::{Scheme, SolverOptions};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub scheme: Scheme,
    pub fixture: FixtureConfig,
    #[serde(default)]
    pub grid: GridConfig,
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub basis: RegressionBasis,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub refine: RefineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureConfig {
    pub name: String,
    #[serde(default)]
    pub params: FixtureParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Horizon used for the certificates (and for the grid unless
    /// `window_fraction` is set).
    pub horizon: f64,
    pub steps: usize,
    /// Local scheme only: solve on `fraction * eps` of the certified window.
    pub window_fraction: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            horizon: 1.0,
            steps: 64,
            window_fraction: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub particles: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub antithetic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Relative paths resolve against the config file's directory.
    pub dir: PathBuf,
    pub stem: String,
    pub dump: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            stem: "run".into(),
            dump: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    /// Step counts of the study; each must divide the largest.
    pub levels: Vec<usize>,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig { levels: vec![16, 32, 64] }
    }
}

/// A config that passed every check that does not need a solve.
#[derive(Debug)]
pub struct Validated {
    pub config: RunConfig,
    pub fixture: Fixture,
    /// Length of the simulated interval.
    pub solve_horizon: f64,
    pub output_dir: PathBuf,
}

#[derive(Debug)]
pub struct SchemaError(pub String);

impl std::fmt::Display for SchemaError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid config: {}", self.0)
    }
}

impl std::error::Error for SchemaError {}

pub fn parse(text: &str) -> Result<RunConfig, SchemaError> {
    toml::from_str(text).map_err(|e| SchemaError(e.to_string()))
}

pub fn load(path: &Path) -> Result<Validated, SchemaError> {
    let text = std::fs::read_to_string(path).map_err(|e| SchemaError(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    validate(parse(&text)?, base)
}

pub fn validate(config: RunConfig, base: &Path) -> Result<Validated, SchemaError> {
    let bad = |m: String| SchemaError(m);
    if config.schema_version != SCHEMA_VERSION {
        return Err(bad(format!(
            "schema_version {} is not supported (expected {SCHEMA_VERSION})",
            config.schema_version
        )));
    }
    let g = &config.grid;
    if !(g.horizon.is_finite() && g.horizon > 0.0) || g.steps == 0 {
        return Err(bad("grid needs a positive horizon and at least one step".into()));
    }
    config.solver.validate().map_err(|e| bad(e.to_string()))?;
    let fixture = fixture(&config.fixture.name, &config.fixture.params, g.horizon).map_err(|e| bad(e.to_string()))?;
    let d = fixture.spec.d();
    let p = basis_size(&config.basis, d);
    if config.ensemble.particles <= p {
        return Err(bad(format!(
            "{} particles cannot fit a basis of size {p}",
            config.ensemble.particles
        )));
    }
    if config.ensemble.antithetic && config.ensemble.particles % 2 != 0 {
        return Err(bad("antithetic sampling needs an even particle count".into()));
    }
    let certs = &fixture.certificates;
    let missing = |what: &str| bad(format!("fixture `{}` has no {what} certificate", fixture.name));
    match config.scheme {
        Scheme::Global if certs.global.is_none() => return Err(missing("global")),
        Scheme::Volterra if fixture.kernel.is_none() => return Err(missing("volterra")),
        _ => {}
    }
    let solve_horizon = match (config.scheme, g.window_fraction) {
        (Scheme::Local, Some(frac)) => {
            if !(frac > 0.0 && frac <= 1.0) {
                return Err(bad(format!("window_fraction must lie in (0, 1], got {frac}")));
            }
            let cert = certs.local.as_ref().ok_or_else(|| missing("local"))?;
            let w = local_window(cert, fixture.spec.n()).map_err(|e| bad(e.to_string()))?;
            let h = frac * w.eps;
            if !(h > 0.0 && h.is_finite()) {
                return Err(bad(format!("certified window {:e} is degenerate", w.eps)));
            }
            h
        }
        (_, Some(_)) => return Err(bad("window_fraction only applies to the local scheme".into())),
        (_, None) => g.horizon,
    };
    let mut levels = config.refine.levels.clone();
    levels.sort_unstable();
    if levels.is_empty() || levels[0] == 0 || levels.iter().any(|l| levels[levels.len() - 1] % l != 0) {
        return Err(bad("refine levels must be positive divisors of the largest level".into()));
    }
    if config.output.stem.is_empty() || config.output.stem.contains(['/', '\\']) {
        return Err(bad("output stem must be a plain file name".into()));
    }
    let output_dir = if config.output.dir.is_absolute() {
        config.output.dir.clone()
    } else {
        base.join(&config.output.dir)
    };
    Ok(Validated {
        config,
        fixture,
        solve_horizon,
        output_dir,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
scheme = "theta"
[fixture]
name = "pure_quadratic"
[ensemble]
particles = 1000
"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let v = validate(parse(MINIMAL).unwrap(), Path::new("/tmp")).unwrap();
        assert_eq!(v.config.grid.steps, 64);
        assert_eq!(v.config.basis, RegressionBasis::Polynomial { degree: 3 });
        assert_eq!(v.config.solver, SolverOptions::default());
        assert_eq!(v.output_dir, PathBuf::from("/tmp/out"));
        assert_eq!(v.solve_horizon, 1.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("particles = 1000", "particles = 1000\ncolour = 3");
        assert!(parse(&text).is_err());
        let text = MINIMAL.replace("scheme = \"theta\"", "scheme = \"theta\"\n[solver]\ntolerance = 1.0");
        assert!(parse(&text).is_err());
    }

    #[test]
    fn semantic_errors_are_schema_errors() {
        let cases = [
            MINIMAL.replace("schema_version = 1", "schema_version = 2"),
            MINIMAL.replace("pure_quadratic", "nope"),
            MINIMAL.replace("particles = 1000", "particles = 3"),
            MINIMAL.replace("scheme = \"theta\"", "scheme = \"global\""),
            MINIMAL.replace("scheme = \"theta\"", "scheme = \"volterra\""),
            format!("{MINIMAL}[grid]\nwindow_fraction = 0.5\n"),
            format!("{MINIMAL}[refine]\nlevels = [16, 24]\n"),
        ];
        for c in cases {
            let parsed = parse(&c);
            let res = parsed.and_then(|cfg| validate(cfg, Path::new(".")));
            assert!(res.is_err(), "accepted:\n{c}");
        }
    }

    #[test]
    fn certified_window_sets_the_horizon() {
        let text = r#"
schema_version = 1
scheme = "local"
[fixture]
name = "pure_quadratic"
params = { terminal = "sine" }
[grid]
window_fraction = 0.5
[ensemble]
particles = 1000
"#;
        let v = validate(parse(text).unwrap(), Path::new(".")).unwrap();
        assert!(v.solve_horizon > 0.0 && v.solve_horizon < 1e-3);
    }
}
