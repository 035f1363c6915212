//! Train, prune, fine-tune and report at desk scale. The run directory is
//! the first argument (default `out/e2e`).

use autosculpt::harness::{run_all, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/e2e".into());
    let cfg = RunConfig { out_dir: out.into(), patterns: 6, flops_target: 0.5, ..RunConfig::desk() };
    let report = run_all(&cfg)?;
    println!(
        "dense {:.4} -> pruned {:.4} -> fine-tuned {:.4}; MAC reduction {:.4}; constraints met {}",
        report.acc_dense, report.acc_pruned, report.acc_finetuned, report.flops_reduction, report.constraints_met
    );
    Ok(())
}
