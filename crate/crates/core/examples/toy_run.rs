//! Runs the pipeline on the bundled toy corpus into a directory given as the
//! first argument.

use instructkit::pipeline::{run_pipeline, Overrides};
use std::path::{Path, PathBuf};

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "toy-run".into());
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy/run.toml");
    let overrides = Overrides {
        out: Some(PathBuf::from(out)),
        ..Overrides::default()
    };
    match run_pipeline(&config, &overrides) {
        Ok(m) => println!("{}", toml::to_string(&m).unwrap()),
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    }
}
