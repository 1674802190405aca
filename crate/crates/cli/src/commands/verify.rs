use std::fs;
use std::io::BufWriter;

use ept_core::verify::{write_report, Suite, SuiteFaults};

use crate::args::{Fault, VerifyArgs};
use crate::failure::{usage, Classify, Failure, Result};
use crate::output::{prepare, resolve_seed, Manifest};

pub const REPORT: &str = "verify.csv";

fn faults(list: &[Fault]) -> SuiteFaults {
    let mut f = SuiteFaults::default();
    for fault in list {
        match fault {
            Fault::AbsoluteVectorInit => f.absolute_vector_init = true,
            Fault::FaultySiluGrad => f.faulty_silu_grad = true,
            Fault::SkipRescale => f.skip_rescale = true,
            Fault::WidenedSampler => f.widened_sampler = true,
            Fault::StretchedBlocks => f.stretched_blocks = true,
            Fault::NaiveAsTiled => f.naive_as_tiled = true,
        }
    }
    f
}

pub fn run(a: VerifyArgs) -> Result<()> {
    let seed = resolve_seed(a.seed, 0)?;
    let mut suite = Suite::new(a.profile.model(), seed);
    suite.faults = faults(&a.inject);
    suite.equivariance_trials = a.trials as usize;
    // Validate the filter before touching the output directory.
    if let Some(bad) = a.only.iter().find(|g| !ept_core::verify::GROUPS.contains(&g.as_str())) {
        return Err(usage(format!("unknown check {bad:?}; expected one of {}", ept_core::verify::GROUPS.join(", "))));
    }
    prepare(&a.out, |n| n == REPORT, false)?;
    let reports = suite.run(&a.only).map_err(usage)?;
    for r in &reports {
        println!("{:<34} {} value {:.3e} tolerance {:.1e} seed {} {:.0} ms {}", r.name, r.status(), r.value, r.tolerance, r.seed, r.ms, r.detail);
    }
    let path = a.out.out.join(REPORT);
    let f = fs::File::create(&path).data_err(format!("creating {}", path.display()))?;
    write_report(BufWriter::new(f), &reports).data_err(format!("writing {}", path.display()))?;
    Manifest::new("verify", seed, &[]).write(&a.out.out)?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    println!("{} checks, {} failed", reports.len(), failed.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!("failing checks: {} (seed {seed})", failed.join(", "))))
    }
}
