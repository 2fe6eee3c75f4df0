//! Parameter, FLOP and MAC accounting for training regimes.
//!
//! Forward cost of an affine layer is `2·n·in·out` FLOPs. Backward cost of a
//! trainable encoder is modeled as twice its forward cost; frozen encoders
//! only pay the forward pass. One MAC is two FLOPs.

use crate::clock::Stopwatch;

use crate::encoder::{EncoderParams, EncoderSpec};
use crate::error::{Error, Result};
use crate::eval::{Cell, Table};

pub fn count_params(enc: &EncoderParams) -> usize {
    enc.param_count()
}

pub fn spec_params(spec: &EncoderSpec) -> u64 {
    spec.layer_shapes().iter().map(|(i, o)| (i * o + o) as u64).sum()
}

pub fn forward_flops(spec: &EncoderSpec, batch_n: usize) -> u64 {
    spec.layer_shapes()
        .iter()
        .map(|(i, o)| 2 * (batch_n * i * o) as u64)
        .sum()
}

pub fn backward_flops(spec: &EncoderSpec, batch_n: usize, trainable: bool) -> u64 {
    if trainable {
        2 * forward_flops(spec, batch_n)
    } else {
        0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegimeEncoder {
    pub name: String,
    pub spec: EncoderSpec,
    pub trainable: bool,
}

/// The encoders a training regime runs on every step.
#[derive(Clone, Debug, PartialEq)]
pub struct RegimeConfig {
    pub name: String,
    pub encoders: Vec<RegimeEncoder>,
    pub batch_size: usize,
    pub steps: u64,
}

impl RegimeConfig {
    /// Frozen text anchor plus a trainable new-modality encoder.
    pub fn frozen_anchor(text: &EncoderSpec, audio: &EncoderSpec, batch_size: usize, steps: u64) -> Self {
        Self {
            name: "frozen-anchor".into(),
            encoders: vec![
                RegimeEncoder {
                    name: "text".into(),
                    spec: text.clone(),
                    trainable: false,
                },
                RegimeEncoder {
                    name: "audio".into(),
                    spec: audio.clone(),
                    trainable: true,
                },
            ],
            batch_size,
            steps,
        }
    }

    /// All three encoders trained jointly.
    pub fn tri_modal(
        text: &EncoderSpec,
        image: &EncoderSpec,
        audio: &EncoderSpec,
        batch_size: usize,
        steps: u64,
    ) -> Self {
        let enc = |name: &str, spec: &EncoderSpec| RegimeEncoder {
            name: name.into(),
            spec: spec.clone(),
            trainable: true,
        };
        Self {
            name: "tri-modal".into(),
            encoders: vec![enc("text", text), enc("image", image), enc("audio", audio)],
            batch_size,
            steps,
        }
    }
}

/// Totals for one regime. Quantities are raw counts for computed regimes and
/// pass through unchanged (any unit) when built from published figures.
#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub flops: f64,
    pub macs: f64,
    pub params: f64,
    pub trainable_params: f64,
    pub backward_flops: f64,
    pub wall_time_s: Option<f64>,
}

impl CostReport {
    pub fn for_regime(cfg: &RegimeConfig) -> Self {
        let mut fwd = 0u64;
        let mut bwd = 0u64;
        let mut params = 0u64;
        let mut trainable = 0u64;
        for e in &cfg.encoders {
            fwd += forward_flops(&e.spec, cfg.batch_size);
            bwd += backward_flops(&e.spec, cfg.batch_size, e.trainable);
            let p = spec_params(&e.spec);
            params += p;
            if e.trainable {
                trainable += p;
            }
        }
        let flops = (fwd + bwd) as f64 * cfg.steps as f64;
        Self {
            flops,
            macs: flops / 2.0,
            params: params as f64,
            trainable_params: trainable as f64,
            backward_flops: bwd as f64 * cfg.steps as f64,
            wall_time_s: None,
        }
    }

    /// A report from externally published totals.
    pub fn published(flops: f64, macs: f64, params: f64) -> Self {
        Self {
            flops,
            macs,
            params,
            trainable_params: params,
            backward_flops: 0.0,
            wall_time_s: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reduction {
    pub metric: &'static str,
    pub baseline: f64,
    pub ours: f64,
    /// `round(100·(1 − ours/baseline))`, halves away from zero.
    pub percent: i64,
}

impl Reduction {
    pub fn new(metric: &'static str, baseline: f64, ours: f64) -> Result<Self> {
        if !(baseline > 0.0) {
            return Err(Error::param(format!("reduction of {metric}: baseline must be > 0")));
        }
        Ok(Self {
            metric,
            baseline,
            ours,
            percent: (100.0 * (1.0 - ours / baseline)).round() as i64,
        })
    }
}

/// Per-metric reductions of `ours` relative to `baseline`: FLOPs, MACs,
/// parameters, then wall time when both sides measured it.
pub fn reductions(ours: &CostReport, baseline: &CostReport) -> Result<Vec<Reduction>> {
    let mut out = vec![
        Reduction::new("flops", baseline.flops, ours.flops)?,
        Reduction::new("macs", baseline.macs, ours.macs)?,
        Reduction::new("params", baseline.params, ours.params)?,
    ];
    if let (Some(o), Some(b)) = (ours.wall_time_s, baseline.wall_time_s) {
        if b > 0.0 {
            out.push(Reduction::new("wall_time_s", b, o)?);
        }
    }
    Ok(out)
}

/// Reductions of the frozen-anchor regime against the tri-modal one, with
/// trainable parameters and backward FLOPs added.
pub fn compare_regimes(ours: &RegimeConfig, baseline: &RegimeConfig) -> Result<Vec<Reduction>> {
    let (o, b) = (CostReport::for_regime(ours), CostReport::for_regime(baseline));
    let mut out = reductions(&o, &b)?;
    out.push(Reduction::new(
        "trainable_params",
        b.trainable_params,
        o.trainable_params,
    )?);
    if b.backward_flops > 0.0 {
        out.push(Reduction::new("backward_flops", b.backward_flops, o.backward_flops)?);
    }
    Ok(out)
}

pub fn reduction_table(rows: &[Reduction]) -> Table {
    Table {
        header: vec!["metric", "baseline", "ours", "reduction_pct"],
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    Cell::Text(r.metric.into()),
                    Cell::Float(r.baseline),
                    Cell::Float(r.ours),
                    Cell::Text(r.percent.to_string()),
                ]
            })
            .collect(),
    }
}

/// Runs `f` and returns its result with the elapsed monotonic time.
pub fn timed_run<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Stopwatch::start();
    let out = f();
    (out, start.secs())
}
