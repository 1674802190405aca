use std::fs;

use ept_core::train::METRICS_HEADER;

use crate::args::ReportArgs;
use crate::failure::{data, Classify, Result};
use crate::output::{prepare, Manifest};
use crate::svg::line_plot;

pub const LOSS_SVG: &str = "loss.svg";
pub const LR_SVG: &str = "lr.svg";

#[derive(Debug, PartialEq)]
pub struct Series {
    pub step: Vec<f64>,
    pub lr: Vec<f64>,
    pub loss: Vec<f64>,
}

/// Parses a metrics CSV; the header must name every metrics column, in any order.
pub fn parse_metrics(text: &str) -> Result<Series> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| data("metrics CSV is empty"))?.split(',').map(str::trim).collect();
    let column = |name: &str| {
        header.iter().position(|h| *h == name).ok_or_else(|| data(format!("metrics CSV lacks column {name:?}")))
    };
    for name in METRICS_HEADER.split(',') {
        column(name)?;
    }
    let (cs, cl, cx) = (column("step")?, column("lr")?, column("loss")?);
    let mut s = Series { step: Vec::new(), lr: Vec::new(), loss: Vec::new() };
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != header.len() {
            return Err(data(format!("metrics row {}: {} fields, header has {}", i + 2, fields.len(), header.len())));
        }
        let get = |c: usize| fields[c].parse::<f64>().map_err(|_| data(format!("metrics row {}: {:?} is not a number", i + 2, fields[c])));
        s.step.push(get(cs)?);
        s.lr.push(get(cl)?);
        s.loss.push(get(cx)?);
    }
    Ok(s)
}

pub fn run(a: ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&a.metrics).data_err(format!("reading {}", a.metrics.display()))?;
    let s = parse_metrics(&text)?;
    if s.loss.is_empty() {
        return Err(data("metrics CSV has a header but no rows"));
    }
    prepare(&a.out, |n| n == LOSS_SVG || n == LR_SVG, false)?;
    let pairs = |ys: &[f64]| s.step.iter().copied().zip(ys.iter().copied()).collect::<Vec<_>>();
    let out = &a.out.out;
    fs::write(out.join(LOSS_SVG), line_plot("Training loss", "step", "loss", &pairs(&s.loss))).data_err("writing loss plot")?;
    fs::write(out.join(LR_SVG), line_plot("Learning rate", "step", "lr", &pairs(&s.lr))).data_err("writing lr plot")?;
    Manifest::new("report", 0, std::slice::from_ref(&a.metrics)).write(out)?;

    let (min_i, min) = s.loss.iter().copied().enumerate().fold((0, f64::INFINITY), |b, (i, v)| if v < b.1 { (i, v) } else { b });
    println!("rows {}", s.loss.len());
    println!("first loss {} at step {}", s.loss[0], s.step[0]);
    println!("last loss {} at step {}", s.loss[s.loss.len() - 1], s.step[s.step.len() - 1]);
    println!("min loss {min} at step {}", s.step[min_i]);
    Ok(())
}
