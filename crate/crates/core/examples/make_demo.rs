//! Write a self-contained demo workspace: a small random model, sample
//! datasets and one config per analysis.
//!
//!     cargo run --example make_demo -- /tmp/demo
//!     cargo run -- run /tmp/demo/configs/knockout.json

use std::path::PathBuf;

fn main() {
    let root: PathBuf = std::env::args_os()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| "demo".into());
    match analogy_probe::toy::write_demo(&root) {
        Ok(ws) => {
            for (kind, path) in &ws.configs {
                println!("{:<18} {}", kind.as_str(), path.display());
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
