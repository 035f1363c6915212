//! Sweep the library size and print fine-tuned accuracy per point. Takes a
//! run directory (default `out/sweep`) and an optional episode count.

use autosculpt::harness::{cmd_sweep, sweep_tsv, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "out/sweep".into());
    let episodes = args.next().map(|e| e.parse()).transpose()?.unwrap_or(100);
    let cfg = RunConfig { out_dir: out.into(), episodes, ..RunConfig::desk() };
    let values: Vec<String> = ["2", "4", "6", "8", "10"].map(String::from).to_vec();
    let rows = cmd_sweep(&cfg, "patterns", &values)?;
    print!("{}", sweep_tsv(&rows));
    Ok(())
}
