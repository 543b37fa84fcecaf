//! Compares constant and stepped risk aversion across a range of levels.
//!
//!     cargo run --release --example cara_vs_dara_sweep -- [out_dir] [jobs]

use hjb_portfolio::config::RunConfig;
use hjb_portfolio::pipeline::Pipeline;
use hjb_portfolio::risk::fmt_opt;

fn main() -> hjb_portfolio::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = RunConfig::default();
    cfg.output.dir = args.next().unwrap_or_else(|| "out/sweep".into()).into();
    let jobs = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);

    let (_, result) = Pipeline::new(cfg)?.cmd_sweep(jobs)?;
    println!(
        "{:>3} | {:>8} {:>8} {:>8} | {:>8} {:>8} {:>8}",
        "a", "E CARA", "SR", "SR_CVaRD", "E DARA", "SR", "SR_CVaRD"
    );
    for (a, c, d) in result.matched() {
        println!(
            "{a:>3} | {:>8.4} {:>8.4} {:>8} | {:>8.4} {:>8.4} {:>8}",
            c.mean,
            c.sr.unwrap_or(f64::NAN),
            fmt_opt(c.sr_cvard.map(|v| (v * 1e4).round() / 1e4)),
            d.mean,
            d.sr.unwrap_or(f64::NAN),
            fmt_opt(d.sr_cvard.map(|v| (v * 1e4).round() / 1e4)),
        );
    }
    Ok(())
}
