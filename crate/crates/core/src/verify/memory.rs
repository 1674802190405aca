use super::kernel::KernelCase;
use super::tolerances::{MEMORY_SIZES, MEMORY_TILE, NAIVE_RATIO, TILED_RATIO};
use super::CheckReport;
use crate::model::{AttentionKernel, KernelFaults, ScratchMeter};

/// Peak scratch bytes of each kernel for one graph of `n` atoms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemoryRow {
    pub n: usize,
    pub naive_bytes: usize,
    pub tiled_bytes: usize,
}

/// Peak scratch per kernel at each size in `sizes` (ascending), tile width `tile`.
pub fn measure_attention_memory(sizes: &[usize], tile: usize, seed: u64, naive_as_tiled: bool) -> Vec<MemoryRow> {
    sizes
        .iter()
        .map(|&n| {
            let case = KernelCase::random(&[n], n, 1, 4, seed, 0.0);
            let peak = |kernel| {
                let meter = ScratchMeter::new();
                case.run(kernel, &meter, KernelFaults::default());
                meter.peak_bytes()
            };
            let tiled = if naive_as_tiled { AttentionKernel::Naive } else { AttentionKernel::Tiled { tile } };
            MemoryRow { n, naive_bytes: peak(AttentionKernel::Naive), tiled_bytes: peak(tiled) }
        })
        .collect()
}

/// Growth ratios of both kernels between the two comparison sizes, plus monotone rows.
pub fn check_attention_memory(seed: u64, naive_as_tiled: bool) -> Vec<CheckReport> {
    let rows = measure_attention_memory(&MEMORY_SIZES, MEMORY_TILE, seed, naive_as_tiled);
    let (a, b) = (rows[0], rows[rows.len() - 1]);
    let ratio = |x: usize, y: usize| y as f64 / x.max(1) as f64;
    let naive = ratio(a.naive_bytes, b.naive_bytes);
    let tiled = ratio(a.tiled_bytes, b.tiled_bytes);
    let monotone = rows.windows(2).all(|w| w[0].n < w[1].n && w[0].naive_bytes <= w[1].naive_bytes && w[0].tiled_bytes <= w[1].tiled_bytes);
    let detail = |x: usize, y: usize| format!("{x} -> {y} bytes");
    vec![
        CheckReport::within("memory.naive", naive, NAIVE_RATIO.0, NAIVE_RATIO.1, seed, detail(a.naive_bytes, b.naive_bytes)),
        CheckReport::within("memory.tiled", tiled, TILED_RATIO.0, TILED_RATIO.1, seed, detail(a.tiled_bytes, b.tiled_bytes)),
        CheckReport::at_most("memory.monotone", if monotone { 0.0 } else { 1.0 }, 0.0, seed, ""),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios_match_and_swapped_kernel_fails() {
        let ok = check_attention_memory(0, false);
        assert!(ok.iter().all(|r| r.passed), "{ok:?}");
        let bad = check_attention_memory(0, true);
        assert!(!bad[1].passed);
    }

    #[test]
    fn tiled_never_exceeds_naive() {
        for r in measure_attention_memory(&[32, 64, 128], 16, 1, false) {
            assert!(r.tiled_bytes <= r.naive_bytes, "{r:?}");
        }
    }
}
