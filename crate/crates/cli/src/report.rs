use std::path::PathBuf;

use clap::Args;
use tdnn_kws::cost::{mulps, summary_header, DEFAULT_FRAME_RATE};
use tdnn_kws::{SkipMode, TdnnModel};

use crate::errors::{say, usage};
use crate::skip_arg;

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// Model checkpoint; without it the default architecture is used.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Keyword count of the default architecture.
    #[arg(long, default_value_t = 1, conflicts_with = "model")]
    pub num_keywords: usize,
}

impl ModelArgs {
    fn load(&self) -> anyhow::Result<TdnnModel> {
        match &self.model {
            Some(p) => Ok(tdnn_kws::model::load(p)?),
            None => {
                if self.num_keywords == 0 {
                    return Err(usage("--num-keywords must be at least 1"));
                }
                Ok(TdnnModel::build_default(self.num_keywords, 0)?)
            }
        }
    }
}

#[derive(Args, Debug)]
pub struct CostArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// A single skip mode with its per-layer breakdown; all three modes
    /// are summarised when omitted.
    #[arg(long, value_parser = skip_arg)]
    pub skip: Option<SkipMode>,
    #[arg(long, default_value_t = DEFAULT_FRAME_RATE)]
    pub frame_rate: f64,
    #[arg(long)]
    pub json: bool,
}

pub fn cost(a: CostArgs) -> anyhow::Result<()> {
    let model = a.model.load()?;
    if !(a.frame_rate > 0.0 && a.frame_rate.is_finite()) {
        return Err(usage(format!("bad frame rate {}", a.frame_rate)));
    }
    let modes: Vec<SkipMode> = match a.skip {
        Some(s) => vec![s],
        None => SkipMode::ALL.to_vec(),
    };
    let reports = modes
        .iter()
        .map(|&s| mulps(&model, s, a.frame_rate))
        .collect::<tdnn_kws::Result<Vec<_>>>()?;
    if a.json {
        let v: Vec<serde_json::Value> = reports.iter().map(|r| r.to_json()).collect();
        let out = if v.len() == 1 {
            v[0].clone()
        } else {
            serde_json::Value::Array(v)
        };
        say(serde_json::to_string_pretty(&out)?)?;
    } else if let [single] = reports.as_slice() {
        say(single)?;
    } else {
        say(summary_header())?;
        for r in &reports {
            say(r.summary_row())?;
        }
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct SummaryArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub json: bool,
}

pub fn summary(a: SummaryArgs) -> anyhow::Result<()> {
    let model = a.model.load()?;
    if a.json {
        let layers: Vec<serde_json::Value> = model
            .layers()
            .map(|l| {
                serde_json::json!({
                    "name": l.name(),
                    "inputs": l.in_dim(),
                    "outputs": l.out_dim(),
                    "weights": l.weight_count(),
                    "activation": l.activation().as_str(),
                })
            })
            .collect();
        let v = serde_json::json!({
            "layers": layers,
            "total_weights": model.param_count(),
            "biases": model.bias_count(),
            "receptive_field": model.receptive_field(),
            "classes": model.class_names(),
        });
        say(serde_json::to_string_pretty(&v)?)?;
    } else {
        say(model.summary())?;
    }
    Ok(())
}
