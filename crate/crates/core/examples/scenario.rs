//! Runs a scenario written inline through the same pipeline as `gfkit run`,
//! without touching the file system.

use gfkit::cli::{execute, RunOptions, Scenario};

const SCENARIO: &str = r#"
name = "asymmetric"

[coefficients]
tau = { family = "constant", c = 1.0 }
b = { family = "power", b = 1.0, gamma = 2.0 }
kernel = { family = "asymmetric", theta = 0.3 }

[grid]
x_min = 1e-3
x_max = 20.0
n = 1024

[evolution]
dt = 1e-3
t_end = 10.0

[diagnostics]
alphas = [1.5, 3.0]

[[initial]]
kind = "gaussian"
center = 2.0
width = 0.3

[oracle]
replicas = 8
n0 = 2000
times = [0.0, 0.5, 1.0]
"#;

fn main() {
    let scenario = Scenario::from_toml(SCENARIO).unwrap_or_else(|f| panic!("{}", f.message));
    match execute(&scenario, RunOptions { quiet: true, ..Default::default() }) {
        Ok(run) => println!("{}", serde_json::to_string_pretty(&run.summary).unwrap()),
        Err((f, _)) => eprintln!("exit {}: {}", f.code, f.message),
    }
}
