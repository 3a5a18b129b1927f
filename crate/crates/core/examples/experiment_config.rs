//! Load an experiment config from TOML, build its environment and run the
//! self-check suite and a short training run into a temporary directory.

use decoysplit::experiment::{
    cmd_train, run_validation, ClosedForms, ExperimentConfig, ValidationOptions,
};

const CONFIG: &str = r#"
seeds = [0]

[scenario.generate]
seed = 7
devices = 5
eavesdroppers = 2
area_side = 600.0

[model.generate]
seed = 7
layers = 6

[env]
segments = 3
max_deceivers = 1

[train]
episodes = 3
hidden = 16
attention_width = 8
batch_size = 8
"#;

fn main() -> decoysplit::Result<()> {
    let cfg = ExperimentConfig::from_toml(CONFIG)?;
    let env = cfg.build_env()?;
    println!(
        "environment: {} actions, {} steps per episode",
        env.action_count(),
        env.episode_len()
    );
    let opts = ValidationOptions {
        mc_samples: 5000,
        mask_episodes: 20,
        ..ValidationOptions::default()
    };
    let report = run_validation(&env, &opts, &ClosedForms::default());
    for check in &report.checks {
        println!(
            "{} {}: {}",
            if check.passed { "ok  " } else { "FAIL" },
            check.name,
            check.detail
        );
    }
    let out = std::env::temp_dir().join("decoysplit_example");
    for run in cmd_train(&cfg, &out)? {
        println!("{}", serde_json::to_string(&run)?);
    }
    println!("resolved config:\n{}", cfg.to_toml()?);
    Ok(())
}
