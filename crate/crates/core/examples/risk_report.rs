//! Tail-risk measures and Sharpe-type ratios for a sample of terminal wealth.
//!
//!     cargo run --example risk_report -- wealth.csv [beta]

use std::path::Path;

use hjb_portfolio::pipeline::read_wealth_csv;
use hjb_portfolio::risk::{fmt_opt, report};

fn main() -> hjb_portfolio::Result<()> {
    let mut args = std::env::args().skip(1);
    let sample = match args.next() {
        Some(path) => read_wealth_csv(Path::new(&path))?,
        None => {
            // Five losses of one unit among a hundred outcomes.
            let mut v = vec![-1.0; 5];
            v.extend(std::iter::repeat(1.0).take(95));
            v
        }
    };
    let beta: f64 = args.next().map_or(Ok(0.05), |s| s.parse()).expect("beta must be a number");
    let r = report(&sample, beta, 0.0)?;
    println!("n          {}", r.n);
    println!("mean       {:.6}", r.mean);
    println!("std        {:.6}", r.std);
    println!("VaR        {:.6}", r.var_beta);
    println!("CVaR       {:.6}", r.cvar_beta);
    println!("CVaRD      {:.6}", r.cvard_beta);
    println!("SR         {}", fmt_opt(r.sr));
    println!("SR_CVaR    {}", fmt_opt(r.sr_cvar));
    println!("SR_CVaRD   {}", fmt_opt(r.sr_cvard));
    Ok(())
}
