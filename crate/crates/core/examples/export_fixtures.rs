// Writes the named fixtures and a diurnal trace as plain files, with a
// config.toml per fixture that the command-line tool accepts.
//
// `cargo run --example export_fixtures -- <dir>` (default: `fixtures`).

use std::path::{Path, PathBuf};

use tightfit::fixtures;

const CONFIG: &str = r#"seed = 0

[inputs]
model = "model.json"
cluster = "cluster.json"
deployment = "deployment.json"
workload = "workload.json"
constraints = "constraints.json"

[measurement]
trials = 25
deterministic = false
"#;

pub fn export(root: &Path) -> tightfit::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for f in fixtures::all() {
        let dir = root.join(&f.name);
        f.save(&dir)?;
        std::fs::write(dir.join("config.toml"), CONFIG)?;
        written.push(dir);
    }
    let traces = root.join("traces");
    std::fs::create_dir_all(&traces)?;
    std::fs::write(traces.join("diurnal.csv"), fixtures::diurnal_trace(1, 20.0, true).to_csv()?)?;
    written.push(traces);
    Ok(written)
}

pub fn run_example() -> tightfit::Result<()> {
    let root = std::env::temp_dir().join(format!("tightfit-export-{}", std::process::id()));
    for dir in export(&root)? {
        println!("wrote {}", dir.display());
    }
    let back = fixtures::Fixture::load(root.join("elk"))?;
    assert_eq!(back.model, fixtures::elk().model);
    std::fs::remove_dir_all(&root)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> tightfit::Result<()> {
    let root = std::env::args().nth(1).unwrap_or_else(|| "fixtures".into());
    for dir in export(Path::new(&root))? {
        println!("wrote {}", dir.display());
    }
    Ok(())
}
